"""Reproducible Rayleigh channel draws and their on-disk formats.

Generator: ``numpy.random.Generator(numpy.random.Philox(seed))`` with
``standard_normal`` sampling. Per realization the downlink block is drawn
first as a ``(K, n_tx, 2)`` array in C order (last axis = real, imag), then,
for cooperative runs only, the relay block as ``(n_co, n_relay, 2)``. Each
complex entry with variance ``s`` is ``sqrt(s/2) * (re + 1j*im)``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .model import SystemConfig

GENERATOR = "numpy.random.Philox+standard_normal/v1"
_MAGIC = b"RSMACH1\n"


class ChannelFileError(ValueError):
    pass


class DimensionError(ChannelFileError):
    pass


class ProvenanceError(ChannelFileError):
    pass


@dataclass(frozen=True)
class ChannelSet:
    """One channel realization.

    ``downlink[k]`` is h_k. ``relay[i, j]`` is the scalar link from relay user
    ``relay_users[j]`` to cooperative user ``co_users[i]`` (0-based indices);
    it is ``None`` for non-cooperative draws.
    """

    downlink: np.ndarray
    seed: int
    variances: tuple[float, ...]
    relay: np.ndarray | None = None
    relay_users: tuple[int, ...] = ()
    co_users: tuple[int, ...] = ()
    relay_variance: float = 1.0

    def __post_init__(self):
        h = np.array(self.downlink, dtype=complex)
        h.setflags(write=False)
        object.__setattr__(self, "downlink", h)
        if self.relay is not None:
            r = np.array(self.relay, dtype=complex)
            r.setflags(write=False)
            object.__setattr__(self, "relay", r)
        if not np.all(np.isfinite(h)) or (self.relay is not None and not np.all(np.isfinite(self.relay))):
            raise ValueError("channel entries must be finite")

    @property
    def n_users(self) -> int:
        return self.downlink.shape[0]

    @property
    def n_tx(self) -> int:
        return self.downlink.shape[1]

    def check(self, config: SystemConfig) -> None:
        if self.downlink.shape != (config.n_users, config.n_tx):
            raise DimensionError(
                f"downlink shape {self.downlink.shape} does not match K={config.n_users}, n_tx={config.n_tx}"
            )
        if config.strategy == "C-RSMA":
            if self.relay is None:
                raise DimensionError("cooperative strategy needs relay channels")
            if self.relay_users != config.relay_users or self.co_users != config.cooperative_users:
                raise DimensionError("relay table does not match the configured relay group")


def derive_seed(base_seed: int, index: int) -> int:
    """64-bit seed of realization ``index`` in an ensemble."""
    ss = np.random.SeedSequence([base_seed % 2**64, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sample_channels(config: SystemConfig, seed: int, with_relay: bool | None = None) -> ChannelSet:
    """Draw h_k ~ CN(0, var_k I) and, for cooperative runs, relay links ~ CN(0, relay_variance)."""
    if with_relay is None:
        with_relay = config.strategy == "C-RSMA"
    rng = np.random.Generator(np.random.Philox(seed))
    z = rng.standard_normal((config.n_users, config.n_tx, 2))
    scale = np.sqrt(np.asarray(config.channel_variances) / 2.0)[:, None]
    h = scale * (z[..., 0] + 1j * z[..., 1])
    relay = None
    relay_users: tuple[int, ...] = ()
    co_users: tuple[int, ...] = ()
    if with_relay:
        relay_users = config.relay_users
        co_users = config.cooperative_users
        zr = rng.standard_normal((len(co_users), len(relay_users), 2))
        relay = np.sqrt(config.relay_variance / 2.0) * (zr[..., 0] + 1j * zr[..., 1])
    return ChannelSet(
        downlink=h,
        seed=int(seed),
        variances=tuple(config.channel_variances),
        relay=relay,
        relay_users=relay_users,
        co_users=co_users,
        relay_variance=config.relay_variance,
    )


def _header_fields(config_like: dict[str, Any]) -> dict[str, Any]:
    keys = ("n_users", "n_tx", "n_groups", "groups", "variances", "relay_users", "co_users", "relay_variance")
    return {k: config_like[k] for k in keys}


def fingerprint(fields: dict[str, Any]) -> str:
    blob = json.dumps(_header_fields(fields), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def config_fields(config: SystemConfig, with_relay: bool) -> dict[str, Any]:
    return {
        "n_users": config.n_users,
        "n_tx": config.n_tx,
        "n_groups": config.n_groups,
        "groups": [list(g) for g in config.groups],
        "variances": list(config.channel_variances),
        "relay_users": list(config.relay_users) if with_relay else [],
        "co_users": list(config.cooperative_users) if with_relay else [],
        "relay_variance": config.relay_variance,
    }


@dataclass(frozen=True)
class ChannelEnsemble:
    realizations: tuple[ChannelSet, ...]
    fingerprint: str
    base_seed: int
    fields: dict[str, Any]

    def __len__(self) -> int:
        return len(self.realizations)


def sample_ensemble(config: SystemConfig, base_seed: int, count: int, with_relay: bool | None = None) -> ChannelEnsemble:
    if count < 1:
        raise ValueError("ensemble needs at least one realization")
    if with_relay is None:
        with_relay = config.strategy == "C-RSMA"
    sets = tuple(sample_channels(config, derive_seed(base_seed, i), with_relay) for i in range(count))
    fields = config_fields(config, with_relay)
    return ChannelEnsemble(sets, fingerprint(fields), int(base_seed), fields)


def _ensemble_header(ens: ChannelEnsemble) -> dict[str, Any]:
    return {
        **ens.fields,
        "fingerprint": ens.fingerprint,
        "base_seed": ens.base_seed,
        "seeds": [c.seed for c in ens.realizations],
        "generator": GENERATOR,
        "numpy_version": np.__version__,
        "count": len(ens),
    }


def save_ensemble(ens: ChannelEnsemble, path: str | Path) -> None:
    """Binary format unless ``path`` ends in ``.json``.

    Binary layout: magic ``RSMACH1\\n``, little-endian uint64 header length,
    UTF-8 JSON header, then per realization the downlink and (if present)
    relay entries as interleaved real/imag little-endian binary64.
    """
    path = Path(path)
    header = _ensemble_header(ens)
    if path.suffix == ".json":
        doc = dict(header)
        doc["realizations"] = [
            {
                "downlink": np.stack([c.downlink.real, c.downlink.imag], -1).tolist(),
                "relay": None if c.relay is None else np.stack([c.relay.real, c.relay.imag], -1).tolist(),
            }
            for c in ens.realizations
        ]
        path.write_text(json.dumps(doc))
        return
    blob = json.dumps(header, sort_keys=True).encode()
    with path.open("wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for c in ens.realizations:
            f.write(np.stack([c.downlink.real, c.downlink.imag], -1).astype("<f8").tobytes())
            if c.relay is not None:
                f.write(np.stack([c.relay.real, c.relay.imag], -1).astype("<f8").tobytes())


def _read(path: Path) -> tuple[dict[str, Any], list[tuple[np.ndarray, np.ndarray | None]]]:
    K_key = "n_users"
    if path.suffix == ".json":
        try:
            doc = json.loads(path.read_text())
            header = {k: v for k, v in doc.items() if k != "realizations"}
            blocks = []
            for r in doc["realizations"]:
                d = np.asarray(r["downlink"], dtype=float)
                rel = None if r["relay"] is None else np.asarray(r["relay"], dtype=float)
                blocks.append((d[..., 0] + 1j * d[..., 1], None if rel is None else rel[..., 0] + 1j * rel[..., 1]))
        except (KeyError, ValueError, TypeError, IndexError) as exc:
            raise ChannelFileError(f"malformed channel file {path}: {exc}") from exc
        return header, blocks
    raw = path.read_bytes()
    if not raw.startswith(_MAGIC):
        raise ChannelFileError(f"{path} is not a channel file")
    try:
        (n,) = struct.unpack_from("<Q", raw, len(_MAGIC))
        start = len(_MAGIC) + 8
        header = json.loads(raw[start : start + n].decode())
        payload = np.frombuffer(raw, dtype="<f8", offset=start + n)
        K, nt = header[K_key], header["n_tx"]
        nco, nr = len(header["co_users"]), len(header["relay_users"])
        per = K * nt * 2 + nco * nr * 2
        if payload.size != per * header["count"]:
            raise ChannelFileError(f"payload size {payload.size} does not match header")
        blocks = []
        for i in range(header["count"]):
            chunk = payload[i * per : (i + 1) * per]
            d = chunk[: K * nt * 2].reshape(K, nt, 2)
            rel = None
            if nr:
                r = chunk[K * nt * 2 :].reshape(nco, nr, 2)
                rel = r[..., 0] + 1j * r[..., 1]
            blocks.append((d[..., 0] + 1j * d[..., 1], rel))
    except (KeyError, ValueError, struct.error) as exc:
        if isinstance(exc, ChannelFileError):
            raise
        raise ChannelFileError(f"malformed channel file {path}: {exc}") from exc
    return header, blocks


def load_ensemble(path: str | Path, config: SystemConfig | None = None) -> ChannelEnsemble:
    """Load and verify an ensemble; with ``config`` also check it matches."""
    header, blocks = _read(Path(path))
    try:
        fields = _header_fields(header)
        stored = header["fingerprint"]
    except KeyError as exc:
        raise ChannelFileError(f"channel header missing {exc}") from exc
    if fingerprint(fields) != stored:
        raise ProvenanceError("fingerprint does not match the header contents")
    if config is not None:
        if fields["n_users"] != config.n_users or fields["n_tx"] != config.n_tx or fields["n_groups"] != config.n_groups:
            raise DimensionError(
                f"file has K={fields['n_users']}, n_tx={fields['n_tx']}, M={fields['n_groups']}; "
                f"config has K={config.n_users}, n_tx={config.n_tx}, M={config.n_groups}"
            )
        if stored != fingerprint(config_fields(config, bool(fields["relay_users"]))):
            raise ProvenanceError("channel file was generated for a different configuration")
    sets = tuple(
        ChannelSet(
            downlink=d,
            seed=int(seed),
            variances=tuple(fields["variances"]),
            relay=rel,
            relay_users=tuple(fields["relay_users"]),
            co_users=tuple(fields["co_users"]),
            relay_variance=fields["relay_variance"],
        )
        for (d, rel), seed in zip(blocks, header["seeds"])
    )
    return ChannelEnsemble(sets, stored, int(header["base_seed"]), fields)
