"""Monte-Carlo experiments: named presets, sweeps, aggregation and reporting."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .channels import derive_seed, sample_channels
from .model import STRATEGIES, Solution, SystemConfig, snr_db_to_power, validate
from .strategies import SOLVERS, evaluate_inf_fin

RECORD_HEADER = (
    "seed", "strategy", "mode", "l_n", "mmf", "theta", "common_power_fraction", "iters", "wall_ms", "status",
)
AGGREGATE_HEADER = (
    "strategy", "mode", "l_n", "n", "n_failed", "mmf_mean", "mmf_se", "theta_mean", "common_power_fraction_mean",
)
GAIN_HEADER = ("strategy", "baseline", "mode", "l_n", "gain")
MODES = ("fin", "inf", "inf-fin")
_BLOCKLENGTH_MODE = {"fin": "finite", "inf": "infinite", "inf-fin": "finite"}


@dataclass(frozen=True)
class ExperimentSpec:
    """One sweep: every seed x strategy x mode x blocklength cell is solved.

    ``snr_db`` sets the transmit power; ``relay_snr_db`` the relay power (kept
    from ``base`` when None). Seed ``i`` uses channel seed
    ``derive_seed(base_seed, i)`` for every strategy and blocklength.
    """

    name: str
    base: SystemConfig
    strategies: tuple[str, ...]
    blocklengths: tuple[int, ...]
    n_seeds: int = 10
    base_seed: int = 2024
    modes: tuple[str, ...] = ("fin",)
    snr_db: float | None = 20.0
    relay_snr_db: float | None = None
    baseline: str | None = "SDMA"
    desk: bool = True
    output_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        object.__setattr__(self, "blocklengths", tuple(int(l) for l in self.blocklengths))
        object.__setattr__(self, "modes", tuple(self.modes))

    def config(self) -> SystemConfig:
        """Base config with the SNR settings applied."""
        cfg = self.base
        if self.snr_db is not None:
            cfg = cfg.replace(p_tx=snr_db_to_power(self.snr_db))
        if self.relay_snr_db is not None:
            cfg = cfg.replace(p_relay=snr_db_to_power(self.relay_snr_db))
        return cfg

    def cell_config(self, strategy: str, mode: str, l_n: int) -> SystemConfig:
        return self.config().replace(strategy=strategy, l_total=l_n, blocklength_mode=_BLOCKLENGTH_MODE[mode])

    def check(self) -> "ExperimentSpec":
        """Raise ValueError (or ConfigError) if any cell is invalid."""
        if not self.blocklengths:
            raise ValueError("blocklength sweep is empty")
        if self.n_seeds < 1:
            raise ValueError("need at least one seed")
        if not self.strategies:
            raise ValueError("no strategies")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown mode {m!r}")
        for s in self.strategies:
            for m in self.modes:
                for l in self.blocklengths:
                    validate(self.cell_config(s, m, l))
        return self

    @property
    def with_relay(self) -> bool:
        return "C-RSMA" in self.strategies

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["base"] = self.base.to_dict()
        for k in ("strategies", "blocklengths", "modes"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentSpec":
        d = dict(d)
        d["base"] = SystemConfig.from_dict(d["base"])
        return cls(**d)


@dataclass(frozen=True)
class Record:
    seed: int
    strategy: str
    mode: str
    l_n: int
    mmf: float
    theta: float
    common_power_fraction: float
    iters: int
    wall_ms: float | None
    status: str

    @property
    def failed(self) -> bool:
        return self.status.startswith("failed")

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.strategy, self.mode, self.l_n)


@dataclass(frozen=True)
class Aggregate:
    strategy: str
    mode: str
    l_n: int
    n: int
    n_failed: int
    mmf_mean: float
    mmf_se: float
    theta_mean: float
    common_power_fraction_mean: float


@dataclass(frozen=True)
class ExperimentResult:
    spec: ExperimentSpec
    records: tuple[Record, ...]
    aggregates: tuple[Aggregate, ...] = field(default=())
    gains: tuple[tuple[str, str, str, int, float], ...] = field(default=())

    @property
    def n_failed(self) -> int:
        return sum(r.failed for r in self.records)

    def cell(self, strategy: str, mode: str, l_n: int) -> Aggregate:
        for a in self.aggregates:
            if (a.strategy, a.mode, a.l_n) == (strategy, mode, l_n):
                return a
        raise KeyError(f"no aggregate for {strategy}/{mode}/l_n={l_n}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec": self.spec.to_dict(),
            "records": [_jsonable(dataclasses.asdict(r)) for r in self.records],
            "aggregates": [_jsonable(dataclasses.asdict(a)) for a in self.aggregates],
            "gains": [_jsonable(dict(zip(GAIN_HEADER, g))) for g in self.gains],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentResult":
        def floats(row, names):
            return {k: (math.nan if row[k] is None and k in names else row[k]) for k in row}

        rf = {"mmf", "theta", "common_power_fraction"}
        af = {"mmf_mean", "mmf_se", "theta_mean", "common_power_fraction_mean"}
        return cls(
            spec=ExperimentSpec.from_dict(d["spec"]),
            records=tuple(Record(**floats(r, rf)) for r in d["records"]),
            aggregates=tuple(Aggregate(**floats(a, af)) for a in d["aggregates"]),
            gains=tuple(
                (g["strategy"], g["baseline"], g["mode"], g["l_n"], math.nan if g["gain"] is None else g["gain"])
                for g in d["gains"]
            ),
        )


def _jsonable(d: dict[str, Any]) -> dict[str, Any]:
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def common_power_fraction(solution: Solution) -> float:
    """Share of the transmit power spent on the common stream."""
    P = np.asarray(solution.precoders)
    total = float(np.sum(np.abs(P) ** 2))
    if total == 0.0:
        raise ValueError("solution has zero total power")
    return float(np.sum(np.abs(P[0]) ** 2)) / total


def _record(seed: int, strategy: str, mode: str, l_n: int, sol: Solution, wall_ms: float | None) -> Record:
    try:
        cpf = common_power_fraction(sol)
    except ValueError:
        cpf = math.nan
    return Record(seed, strategy, mode, l_n, float(sol.mmf), float(sol.theta), cpf, int(sol.iterations), wall_ms,
                  sol.status)


def _failed(seed, strategy, mode, l_n, exc: Exception) -> Record:
    msg = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
    return Record(seed, strategy, mode, l_n, math.nan, math.nan, math.nan, 0, None, msg)


def run_seed(spec: ExperimentSpec, seed_index: int, timing: bool = False) -> list[Record]:
    """All cells of one seed; channels are drawn once and shared."""
    cfg = spec.config()
    channels = sample_channels(cfg, derive_seed(spec.base_seed, seed_index), with_relay=spec.with_relay)
    out: list[Record] = []
    for strategy in spec.strategies:
        for l_n in spec.blocklengths:
            inf_solution = None
            for mode in _mode_order(spec.modes):
                t0 = time.perf_counter()
                try:
                    if mode == "inf-fin":
                        if inf_solution is None:
                            inf_solution = SOLVERS[strategy](channels, spec.cell_config(strategy, "inf", l_n)).solution
                        sol = evaluate_inf_fin(channels, spec.cell_config(strategy, mode, l_n), inf_solution).solution
                    else:
                        sol = SOLVERS[strategy](channels, spec.cell_config(strategy, mode, l_n)).solution
                        if mode == "inf":
                            inf_solution = sol
                except Exception as exc:  # noqa: BLE001 - a failed cell never aborts the sweep
                    out.append(_failed(seed_index, strategy, mode, l_n, exc))
                    continue
                wall = (time.perf_counter() - t0) * 1e3 if timing else None
                out.append(_record(seed_index, strategy, mode, l_n, sol, wall))
    order = {m: i for i, m in enumerate(spec.modes)}
    out.sort(key=lambda r: (spec.strategies.index(r.strategy), order[r.mode], spec.blocklengths.index(r.l_n)))
    return out


def _mode_order(modes: Sequence[str]) -> list[str]:
    # the infinite solve is reused by inf-fin, so run it first
    return sorted(modes, key=lambda m: {"inf": 0, "fin": 1, "inf-fin": 2}[m])


def _run_seed_args(args):
    return run_seed(*args)


def run_experiment(spec: ExperimentSpec, workers: int = 1, timing: bool = False, progress=None) -> ExperimentResult:
    """Solve every cell; failures become records with a ``failed`` status."""
    spec.check()
    jobs = [(spec, i, timing) for i in range(spec.n_seeds)]
    per_seed: list[list[Record]] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for recs in pool.map(_run_seed_args, jobs):
                per_seed.append(recs)
                if progress:
                    progress(len(per_seed), spec.n_seeds)
    else:
        for job in jobs:
            per_seed.append(run_seed(*job))
            if progress:
                progress(len(per_seed), spec.n_seeds)
    records = tuple(r for recs in per_seed for r in recs)
    aggregates = aggregate(spec, records)
    return ExperimentResult(spec, records, aggregates, gain_rows(spec, aggregates))


def _mean(xs: Sequence[float]) -> float:
    return math.fsum(xs) / len(xs) if xs else math.nan


def aggregate(spec: ExperimentSpec, records: Sequence[Record]) -> tuple[Aggregate, ...]:
    """Mean and standard error per (strategy, mode, l_n) over non-failed records."""
    out = []
    for s in spec.strategies:
        for m in spec.modes:
            for l in spec.blocklengths:
                cell = [r for r in records if r.key == (s, m, l)]
                ok = [r for r in cell if not r.failed]
                mmf = [r.mmf for r in ok]
                se = statistics.stdev(mmf) / math.sqrt(len(mmf)) if len(mmf) > 1 else math.nan
                cpf = [r.common_power_fraction for r in ok if not math.isnan(r.common_power_fraction)]
                out.append(Aggregate(s, m, l, len(ok), len(cell) - len(ok), _mean(mmf), se,
                                     _mean([r.theta for r in ok]), _mean(cpf)))
    return tuple(out)


def relative_gain(result: ExperimentResult, a: str, b: str, l_n: int, mode: str = "fin") -> float:
    """(mean MMF of a - mean MMF of b) / mean MMF of b."""
    ma = result.cell(a, mode, l_n).mmf_mean
    mb = result.cell(b, mode, l_n).mmf_mean
    if mb == 0.0 or math.isnan(mb):
        raise ZeroDivisionError(f"baseline {b} has mean MMF {mb} at l_n={l_n}")
    return (ma - mb) / mb


def gain_rows(spec: ExperimentSpec, aggregates: Sequence[Aggregate]) -> tuple:
    if spec.baseline is None or spec.baseline not in spec.strategies:
        return ()
    tmp = ExperimentResult(spec, (), tuple(aggregates))
    rows = []
    for m in spec.modes:
        for l in spec.blocklengths:
            for s in spec.strategies:
                if s == spec.baseline:
                    continue
                try:
                    g = relative_gain(tmp, s, spec.baseline, l, m)
                except (KeyError, ZeroDivisionError):
                    g = math.nan
                rows.append((s, spec.baseline, m, l, g))
    return tuple(rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def records_csv(result: ExperimentResult) -> str:
    return _csv(RECORD_HEADER, [[getattr(r, k) for k in RECORD_HEADER] for r in result.records])


def aggregates_csv(result: ExperimentResult) -> str:
    return _csv(AGGREGATE_HEADER, [[getattr(a, k) for k in AGGREGATE_HEADER] for a in result.aggregates])


def gains_csv(result: ExperimentResult) -> str:
    return _csv(GAIN_HEADER, result.gains)


def manifest(result: ExperimentResult) -> dict[str, Any]:
    spec = result.spec
    return {
        "tool": "rsma-fbl",
        "version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "spec": spec.to_dict(),
        "seeds": [derive_seed(spec.base_seed, i) for i in range(spec.n_seeds)],
        "records": len(result.records),
        "failed": result.n_failed,
    }


def emit(result: ExperimentResult, out_dir: str | Path, formats: Sequence[str] = ("csv", "json")) -> list[Path]:
    """Write records/aggregates/gains CSVs, a JSON mirror and a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text)
        written.append(p)

    for f in formats:
        if f == "csv":
            put("records.csv", records_csv(result))
            put("aggregates.csv", aggregates_csv(result))
            put("gains.csv", gains_csv(result))
        elif f == "json":
            put("result.json", json.dumps(result.to_dict(), indent=1) + "\n")
        else:
            raise ValueError(f"unknown format {f!r}")
    put("manifest.json", json.dumps(manifest(result), indent=2) + "\n")
    return written


def load_result(path: str | Path) -> ExperimentResult:
    return ExperimentResult.from_dict(json.loads(Path(path).read_text()))


_COOP = dict(groups=((1,), (2,), (3,)), channel_variances=(1.0, 0.09, 0.01), relay_group=1)


def preset(name: str, desk: bool = True, n_seeds: int | None = None) -> ExperimentSpec:
    """Named presets at SNR 20 dB (10 seeds); ``desk=False`` gives 100 seeds and a longer blocklength grid."""
    seeds = n_seeds or (10 if desk else 100)

    def spec(base, strategies, desk_l, full_l, modes=("fin",), **kw):
        return ExperimentSpec(name=name, base=base, strategies=strategies,
                              blocklengths=desk_l if desk else full_l, n_seeds=seeds, modes=modes, desk=desk, **kw)

    sweep = (200, 500, 1000)
    full = (100, 200, 300, 400, 500, 600, 700, 800, 900, 1000)
    coop_full = (200, 300, 400, 500, 600, 700, 800, 900, 1000)
    if name == "unicast-2":
        base = SystemConfig(n_tx=4, groups=((1,), (2,)), channel_variances=(1.0, 0.09), p_tx=100.0, l_total=500)
        return spec(base, ("RSMA", "SDMA", "NOMA"), sweep, full, ("fin", "inf"))
    if name == "unicast-8":
        var = tuple(1.0 - 0.125 * k for k in range(8))
        base = SystemConfig(n_tx=4, groups=tuple((k,) for k in range(1, 9)), channel_variances=var, p_tx=100.0,
                            l_total=500)
        return spec(base, ("RSMA", "SDMA", "NOMA"), sweep, full, ("fin", "inf"))
    if name == "multicast-2x2":
        base = SystemConfig(n_tx=2, groups=((1, 2), (3, 4)), channel_variances=(1.0,) * 4, p_tx=100.0, l_total=500)
        return spec(base, ("RSMA", "SDMA"), sweep, full, ("fin", "inf"))
    if name in ("coop-4tx", "coop-2tx"):
        nt = 4 if name == "coop-4tx" else 2
        base = SystemConfig(n_tx=nt, p_tx=100.0, p_relay=100.0, l_total=500, **_COOP)
        return spec(base, ("C-RSMA", "RSMA", "SDMA"), (300, 500, 1000), coop_full, relay_snr_db=20.0)
    if name == "coop-theta":
        base = SystemConfig(n_tx=4, p_tx=100.0, p_relay=100.0, l_total=500, **_COOP)
        return spec(base, ("C-RSMA",), (300, 1000, 2000), (300, 500, 1000, 1500, 2000), ("fin", "inf"),
                    relay_snr_db=20.0, baseline=None)
    if name == "coop-inf-fin":
        base = SystemConfig(n_tx=4, p_tx=100.0, p_relay=100.0, l_total=500, **_COOP)
        return spec(base, ("C-RSMA",), (300, 500), coop_full, ("fin", "inf-fin"), relay_snr_db=20.0, baseline=None)
    raise KeyError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


PRESETS = ("unicast-2", "unicast-8", "multicast-2x2", "coop-4tx", "coop-2tx", "coop-theta", "coop-inf-fin")
