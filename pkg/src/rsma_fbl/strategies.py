"""Strategy drivers: RSMA, SDMA, NOMA, cooperative RSMA and Inf-Fin evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channels import ChannelSet
from .model import Solution, SystemConfig
from .noma import evaluate_noma, noma_sca
from .sca import ScaError, ScaState, _floor, achieved_rates, evaluate_sinrs, finalize, rho_floor, sca_solve

MODE_TAG = {"finite": "fin", "infinite": "inf"}


@dataclass(frozen=True)
class StrategyRun:
    strategy: str
    mode: str
    solution: Solution
    candidates: tuple[tuple[int, float], ...] = ()

    @property
    def mmf(self) -> float:
        return self.solution.mmf

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "mode": self.mode,
            "solution": self.solution.to_dict(),
            "candidates": [list(c) for c in self.candidates],
        }


def _as(config: SystemConfig, strategy: str) -> SystemConfig:
    return config if config.strategy == strategy else config.replace(strategy=strategy)


def _zero_power(channels: ChannelSet, config: SystemConfig, l_d: int, l_c: int = 0) -> Solution:
    P = np.zeros((config.n_groups + 1, config.n_tx), dtype=complex)
    return finalize(channels, config, P, np.zeros(config.n_groups), l_d, l_c, (0.0,), 0, "zero-power")


def state_from_solution(channels: ChannelSet, config: SystemConfig, solution: Solution) -> ScaState:
    P = np.asarray(solution.precoders)
    sinr = evaluate_sinrs(channels, config, P)
    lo = rho_floor(channels, config)
    return ScaState(0, P, _floor(sinr.common, lo), _floor(sinr.private, lo), 0.0, lo)


def solve_rsma(channels: ChannelSet, config: SystemConfig, warm_start: Solution | None = None) -> StrategyRun:
    """Non-cooperative RSMA (all time in the direct phase).

    A stream whose FBL rate turns negative before its power reaches zero
    cannot be faded out by the SCA, so the two degenerate layouts are solved
    as separate branches next to the full one: common stream off (no
    decodability constraint) and private streams off (pure multicast with a
    split). In finite mode the full layout is also restarted from the
    infinite-blocklength design. The best evaluated max-min rate is kept. ``warm_start`` seeds the
    private-only branch (e.g. with a converged SDMA solution).
    """
    config = _as(config, "RSMA")
    mode = MODE_TAG[config.blocklength_mode]
    l_n = config.l_total
    if config.p_tx == 0:
        return StrategyRun("RSMA", mode, _zero_power(channels, config, l_n))
    init = state_from_solution(channels, config, warm_start) if warm_start is not None else None
    branches = {
        "common": sca_solve(channels, config, l_n, 0, common=True),
        "private-only": sca_solve(channels, config, l_n, 0, init=init, common=False),
        "common-only": sca_solve(channels, config, l_n, 0, common=True, private=False),
    }
    if not config.infinite:
        # no rate trap at infinite blocklength: its design is a start that
        # already has the right streams switched on
        inf = sca_solve(channels, config.replace(blocklength_mode="infinite"), l_n, 0, common=True)
        if inf.status != "infeasible":
            start = state_from_solution(channels, config, inf)
            branches["infinite-design"] = sca_solve(channels, config, l_n, 0, init=start, common=True)
    live = {k: s for k, s in branches.items() if s.status != "infeasible"}
    # ties keep the earlier (fuller) layout
    branch = max(live, key=lambda k: live[k].mmf)
    best = live[branch]
    diag = dict(best.diagnostics, branch=branch, branch_mmf={k: s.mmf for k, s in branches.items()})
    return StrategyRun("RSMA", mode, replace(best, diagnostics=diag))


def solve_sdma(channels: ChannelSet, config: SystemConfig) -> StrategyRun:
    config = _as(config, "SDMA")
    mode = MODE_TAG[config.blocklength_mode]
    if config.p_tx == 0:
        return StrategyRun("SDMA", mode, _zero_power(channels, config, config.l_total))
    return StrategyRun("SDMA", mode, sca_solve(channels, config, config.l_total, 0, common=False))


def solve_noma(channels: ChannelSet, config: SystemConfig) -> StrategyRun:
    config = _as(config, "NOMA")
    mode = MODE_TAG[config.blocklength_mode]
    if any(len(g) != 1 for g in config.groups):
        raise ValueError("NOMA supports singleton groups only")
    if config.p_tx == 0:
        return StrategyRun("NOMA", mode, replace(_zero_power(channels, config, config.l_total), strategy="NOMA"))
    return StrategyRun("NOMA", mode, noma_sca(channels, config))


def crsma_grid(config: SystemConfig) -> list[int]:
    """Cooperative blocklengths l_c = start, start+step, ... while l_d >= start."""
    return list(range(config.lc_start, config.l_total - config.lc_start + 1, config.lc_step))


def solve_crsma(channels: ChannelSet, config: SystemConfig, candidates: list[int] | None = None) -> StrategyRun:
    """One-dimensional search over the cooperative blocklength, SCA per candidate.

    Neighbouring candidates can converge to different local optima from the
    cold start, which makes the t*(l_c) curve jump between regimes. Each
    candidate therefore keeps the best of the cold start and warm starts from
    its neighbours' designs (one forward and one backward pass).
    """
    config = _as(config, "C-RSMA")
    mode = MODE_TAG[config.blocklength_mode]
    grid = crsma_grid(config) if candidates is None else list(candidates)
    if not grid:
        raise ValueError(f"no blocklength candidates for l_total={config.l_total}")
    if channels.relay is None:
        raise ValueError("C-RSMA needs relay channels")
    if config.p_tx == 0:
        sols = [_zero_power(channels, config, config.l_total - l_c, l_c) for l_c in grid]
    else:
        sols = [sca_solve(channels, config, config.l_total - l_c, l_c, common=True) for l_c in grid]
        order = list(range(1, len(grid)))
        for i, j in [(i, i - 1) for i in order] + [(i - 1, i) for i in reversed(order)]:
            if _score(sols[j]) > _score(sols[i]):
                warm = _warm_candidate(channels, config, grid[i], sols[j])
                if warm is not None and _score(warm) > _score(sols[i]):
                    sols[i] = warm
    scores = [_score(sol) for sol in sols]
    # max() keeps the first maximum, i.e. ties go to the smaller l_c
    k = max(range(len(grid)), key=lambda i: scores[i])
    return StrategyRun("C-RSMA", mode, sols[k], tuple(zip(grid, scores)))


def _score(sol: Solution) -> float:
    return sol.t_star if sol.status != "infeasible" else -math.inf


def _warm_candidate(channels, config, l_c, neighbour: Solution) -> Solution | None:
    try:
        start = state_from_solution(channels, config, neighbour)
        return sca_solve(channels, config, config.l_total - l_c, l_c, init=start, common=True)
    except ScaError:
        return None


SOLVERS = {"RSMA": solve_rsma, "SDMA": solve_sdma, "NOMA": solve_noma, "C-RSMA": solve_crsma}


def solve(channels: ChannelSet, config: SystemConfig) -> StrategyRun:
    return SOLVERS[config.strategy](channels, config)


def water_fill(common_rate: float, private: np.ndarray) -> tuple[np.ndarray, float]:
    """Split ``common_rate`` to maximize min_m (C_m + private_m), C >= 0."""
    r = np.asarray(private, dtype=float)
    R = max(float(common_rate), 0.0)
    srt = np.sort(r)
    level = srt[0] + R
    for k in range(1, r.size + 1):
        w = (R + srt[:k].sum()) / k
        if k == r.size or w <= srt[k]:
            level = w
            break
    return np.maximum(level - r, 0.0), float(level)


def evaluate_inf_fin(channels: ChannelSet, config: SystemConfig, inf_solution: Solution) -> StrategyRun:
    """Score a precoder/time split designed for infinite blocklength at finite blocklength.

    The common split is re-allocated by water-filling, since the infinite-mode
    split can exceed the finite-blocklength common rate.
    """
    config = _as(config, inf_solution.strategy)
    P = np.asarray(inf_solution.precoders)
    if P.shape != (config.n_groups + 1, config.n_tx):
        raise ValueError(f"solution precoders {P.shape} do not match the config")
    if inf_solution.strategy == "NOMA":
        sol = evaluate_noma(channels, config, inf_solution, mode="inf-fin")
        return StrategyRun("NOMA", "inf-fin", sol)
    l_d, l_c = inf_solution.l_d, inf_solution.l_c
    base = achieved_rates(channels, config, P, np.zeros(config.n_groups), l_d, l_c)
    if inf_solution.strategy == "SDMA" or not np.any(P[0]):
        c = np.zeros(config.n_groups)
    else:
        c, _ = water_fill(base.common_rate, base.group_rates)
    sol = finalize(channels, config, P, c, l_d, l_c, inf_solution.objective_trace, inf_solution.iterations,
                   inf_solution.status, mode="inf-fin", diagnostics={"source": "inf"})
    return StrategyRun(inf_solution.strategy, "inf-fin", sol)
