"""System configuration, validation and the solution record shared by all solvers."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

STRATEGIES = ("RSMA", "C-RSMA", "SDMA", "NOMA")
BLOCKLENGTH_MODES = ("finite", "infinite")

# RSMA/NOMA run SIC, so their per-stream target is halved to keep the
# overall block error rate at or below 1e-5.
DEFAULT_BLER = {"RSMA": 5e-6, "C-RSMA": 5e-6, "NOMA": 5e-6, "SDMA": 1e-5}


class ConfigError(ValueError):
    """Raised by :func:`validate`; ``errors`` lists every violation found."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def snr_db_to_power(snr_db: float) -> float:
    """Transmit power for a given SNR with unit noise power."""
    return 10.0 ** (snr_db / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Downlink system description.

    Users and groups are labelled from 1 as in the usual notation
    (``groups=((1,), (2, 3))`` means user 3 belongs to group 2). Powers are
    linear and normalized to unit noise power; blocklengths are in channel uses.
    """

    n_tx: int
    groups: tuple[tuple[int, ...], ...]
    channel_variances: tuple[float, ...]
    p_tx: float
    l_total: int
    strategy: str = "RSMA"
    blocklength_mode: str = "finite"
    p_relay: float = 0.0
    relay_variance: float = 1.0
    relay_group: int = 1
    bler: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_BLER))
    sca_tolerance: float = 1e-3
    max_iterations: int = 200
    lc_start: int = 100
    lc_step: int = 10

    def __post_init__(self) -> None:
        object.__setattr__(self, "groups", tuple(tuple(int(u) for u in g) for g in self.groups))
        object.__setattr__(self, "channel_variances", tuple(float(v) for v in self.channel_variances))
        merged = dict(DEFAULT_BLER)
        merged.update({str(k): float(v) for k, v in dict(self.bler).items()})
        object.__setattr__(self, "bler", merged)

    @property
    def n_users(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def epsilon(self) -> float:
        return self.bler[self.strategy]

    @property
    def infinite(self) -> bool:
        return self.blocklength_mode == "infinite"

    @property
    def user_group(self) -> np.ndarray:
        """0-based group index of every 0-based user."""
        out = np.full(self.n_users, -1, dtype=int)
        for m, g in enumerate(self.groups):
            for u in g:
                out[u - 1] = m
        return out

    @property
    def relay_users(self) -> tuple[int, ...]:
        """0-based indices of the users acting as relays."""
        return tuple(u - 1 for u in self.groups[self.relay_group - 1])

    @property
    def cooperative_users(self) -> tuple[int, ...]:
        """0-based indices of the users helped by the relays, ascending."""
        relays = set(self.relay_users)
        return tuple(k for k in range(self.n_users) if k not in relays)

    def replace(self, **changes: Any) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["groups"] = [list(g) for g in self.groups]
        d["channel_variances"] = list(self.channel_variances)
        d["bler"] = dict(self.bler)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SystemConfig":
        d = dict(d)
        if "snr_db" in d:
            d["p_tx"] = snr_db_to_power(float(d.pop("snr_db")))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError([f"unknown config key {k!r}" for k in sorted(unknown)])
        return cls(**d)


def save_config(config: SystemConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")


def load_config(path: str | Path) -> SystemConfig:
    return SystemConfig.from_dict(json.loads(Path(path).read_text()))


def validate(config: SystemConfig) -> SystemConfig:
    """Return ``config`` unchanged if it is consistent, else raise ConfigError."""
    errors: list[str] = []
    users = [u for g in config.groups for u in g]
    K = len(users)
    if K == 0:
        errors.append("no users (K=0)")
    if any(len(g) == 0 for g in config.groups):
        errors.append("empty group")
    seen: set[int] = set()
    for u in users:
        if u in seen:
            errors.append(f"groups overlap: user {u} appears more than once")
        seen.add(u)
    if K and seen != set(range(1, K + 1)):
        errors.append(f"groups must cover users 1..{K} exactly, got {sorted(seen)}")
    if config.n_tx < 1:
        errors.append("n_tx must be a positive integer")
    if len(config.channel_variances) != K:
        errors.append(f"channel_variances has {len(config.channel_variances)} entries for {K} users")
    if any(not (v > 0 and math.isfinite(v)) for v in config.channel_variances):
        errors.append("channel variances must be finite and > 0")
    if not (config.p_tx >= 0 and math.isfinite(config.p_tx)):
        errors.append("p_tx must be finite and >= 0")
    if not (config.p_relay >= 0 and math.isfinite(config.p_relay)):
        errors.append("p_relay must be finite and >= 0")
    if not config.relay_variance > 0:
        errors.append("relay_variance must be > 0")
    if config.l_total < 1:
        errors.append("l_total must be a positive integer")
    if config.strategy not in STRATEGIES:
        errors.append(f"unknown strategy {config.strategy!r}")
    if config.blocklength_mode not in BLOCKLENGTH_MODES:
        errors.append(f"unknown blocklength_mode {config.blocklength_mode!r}")
    for name, eps in config.bler.items():
        # 0.5 is admitted: it zeroes the dispersion penalty
        if not 0.0 < eps <= 0.5:
            errors.append(f"bler[{name}]={eps} outside (0, 0.5]")
    if not config.sca_tolerance > 0:
        errors.append("sca_tolerance must be > 0")
    if config.max_iterations < 1:
        errors.append("max_iterations must be >= 1")
    if config.lc_start < 1 or config.lc_step < 1:
        errors.append("lc_start and lc_step must be positive")
    if config.strategy == "C-RSMA":
        if config.n_groups < 2:
            errors.append("C-RSMA needs at least two groups")
        if not 1 <= config.relay_group <= config.n_groups:
            errors.append(f"relay_group {config.relay_group} out of range")
        if config.l_total < 2 * config.lc_start:
            errors.append(
                f"C-RSMA blocklength budget l_total={config.l_total} below 2x{config.lc_start}"
            )
    if config.strategy == "NOMA" and any(len(g) != 1 for g in config.groups):
        errors.append("NOMA supports singleton groups only")
    if errors:
        raise ConfigError(errors)
    return config


def group_of(config: SystemConfig, k: int) -> int:
    """1-based group index of 1-based user ``k``."""
    for m, g in enumerate(config.groups, start=1):
        if k in g:
            return m
    raise IndexError(f"user {k} not in 1..{config.n_users}")


def _complex_to_list(a: np.ndarray) -> list:
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _complex_from_list(x: Any) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


@dataclass(frozen=True)
class Solution:
    """Precoders, common-rate split and time split plus the rates they achieve.

    ``precoders`` has shape ``(M+1, n_tx)``; row 0 is the common stream.
    ``group_rates`` and ``mmf`` are always the exact re-evaluation of the
    stored variables (``mmf`` clamped at 0); ``objective_trace`` holds the
    optimizer's lower bound ``t`` per iteration.
    """

    precoders: np.ndarray
    common_split: np.ndarray
    l_d: int
    l_c: int
    theta: float
    group_rates: np.ndarray
    mmf: float
    iterations: int
    objective_trace: tuple[float, ...]
    strategy: str = "RSMA"
    mode: str = "fin"
    status: str = "converged"
    common_rate: float = 0.0
    decode_order: tuple[int, ...] | None = None
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("precoders", "common_split", "group_rates"):
            a = np.array(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "objective_trace", tuple(float(t) for t in self.objective_trace))

    @property
    def t_star(self) -> float:
        return self.objective_trace[-1] if self.objective_trace else float("nan")

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": self.strategy,
            "mode": self.mode,
            "status": self.status,
            "precoders": _complex_to_list(self.precoders),
            "common_split": self.common_split.tolist(),
            "l_d": self.l_d,
            "l_c": self.l_c,
            "theta": self.theta,
            "group_rates": self.group_rates.tolist(),
            "common_rate": self.common_rate,
            "mmf": self.mmf,
            "iterations": self.iterations,
            "objective_trace": list(self.objective_trace),
            "decode_order": None if self.decode_order is None else list(self.decode_order),
            "diagnostics": dict(self.diagnostics),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Solution":
        d = dict(d)
        d["precoders"] = _complex_from_list(d["precoders"])
        d["common_split"] = np.asarray(d["common_split"], dtype=float)
        d["group_rates"] = np.asarray(d["group_rates"], dtype=float)
        if d.get("decode_order") is not None:
            d["decode_order"] = tuple(d["decode_order"])
        return cls(**d)
