"""Power-domain NOMA with a fixed SIC order for unicast (singleton) groups.

Users are ordered by descending channel gain ||h_k||^2 (ties by index). The
user at position i decodes, weakest first, the messages at positions
K-1, ..., i and cancels each; message j is therefore interfered only by the
messages at positions < j, and its rate is the worst over its decoders.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .channels import ChannelSet
from .conic import ProgramBuilder, row, solve_conic
from .fbl import FblParams, fbl_rate, penalty_constant
from .model import Solution, SystemConfig
from .sca import ScaError, _dominant_direction, _floor, _usable, at_least, each, qol_cone, rate_cone, rho_floor


def decode_order(channels: ChannelSet) -> tuple[int, ...]:
    """0-based users from strongest to weakest."""
    gains = np.sum(np.abs(channels.downlink) ** 2, axis=1)
    return tuple(sorted(range(len(gains)), key=lambda k: (-gains[k], k)))


def _pairs(K: int):
    return [(i, j) for j in range(K) for i in range(j + 1)]


def pair_sinrs(channels: ChannelSet, streams: np.ndarray, order) -> np.ndarray:
    """SINR of message at position j decoded at position i (i <= j); NaN elsewhere."""
    K = len(order)
    H = channels.downlink[list(order)]
    S = streams[list(order)]
    G = np.abs(H.conj() @ S.T) ** 2  # decoder position x message position
    out = np.full((K, K), np.nan)
    for i, j in _pairs(K):
        out[i, j] = G[i, j] / (G[i, :j].sum() + 1.0)
    return out


def noma_rates(channels: ChannelSet, config: SystemConfig, streams: np.ndarray, order=None) -> np.ndarray:
    """Per-user rate (user order, not decode order), per-stream rates clamped at 0."""
    order = decode_order(channels) if order is None else order
    sinr = pair_sinrs(channels, streams, order)
    params = FblParams(config.epsilon, config.l_total, 1.0, config.infinite)
    K = len(order)
    rates = np.zeros(K)
    for j in range(K):
        r = np.maximum(np.atleast_1d(fbl_rate(sinr[: j + 1, j], params)), 0.0)
        rates[order[j]] = r.min()
    return rates


def _user_streams(P: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Stream of each user taken from the (M+1)-row precoder layout."""
    return P[1 + config.user_group]


def _build(channels, config, streams, rho, order, floor):
    K, nt = config.n_users, config.n_tx
    penalty = 0.0 if config.infinite else penalty_constant(config.epsilon)
    pairs = _pairs(K)
    B = ProgramBuilder()
    t = B.variable("t", 1)[0]
    p = B.variable("P", K * nt * 2).reshape(K, nt, 2)
    alpha = B.variable("alpha", len(pairs))
    rho_v = B.variable("rho", len(pairs))
    B.minimize(t, -1.0)
    B.cone("nonneg", [row((alpha[q], 1.0), (t, -1.0)) for q in range(len(pairs))])
    for q, (i, j) in enumerate(pairs):
        ui, uj = order[i], order[j]
        rate_cone(B, alpha[q], rho_v[q], rho[q], config.l_total, penalty, config.infinite)
        interferers = [(p[order[jj], :, 0], p[order[jj], :, 1]) for jj in range(j)]
        qol_cone(B, channels.downlink[ui], streams[uj], rho[q], p[uj, :, 0], p[uj, :, 1], rho_v[q], interferers)
    B.cone("soc", [row(const=math.sqrt(config.p_tx)), *each(p)])
    B.cone("nonneg", at_least(rho_v, floor))
    return B.build()


def noma_sca(channels: ChannelSet, config: SystemConfig) -> Solution:
    """Max-min rate under SIC, same restriction scheme as the RSMA loop.

    In finite mode a weakly received message can start where its FBL rate is
    negative, from which the iteration drifts to the zero-SINR stationary
    point. The infinite-blocklength design is therefore used as a second
    starting point and the better of the two runs is kept.
    """
    if any(len(g) != 1 for g in config.groups):
        raise ValueError("NOMA supports singleton groups only")
    K = config.n_users
    order = decode_order(channels)
    H = channels.downlink
    norms = np.linalg.norm(H, axis=1, keepdims=True)
    mrt = np.sqrt(config.p_tx / K) * H / np.where(norms > 0, norms, 1.0)
    for j, u in enumerate(order):
        decoders = H[list(order[: j + 1])].T
        if np.any(np.abs(decoders.conj().T @ mrt[u]) ** 2 <= 1e-12 * np.sum(np.abs(decoders) ** 2, axis=0)):
            mrt[u] = np.sqrt(config.p_tx / K) * _dominant_direction(decoders)
    best = _noma_loop(channels, config, mrt, order)
    if not config.infinite:
        inf = _noma_loop(channels, config.replace(blocklength_mode="infinite"), mrt, order)
        cont = _noma_loop(channels, config, _user_streams(np.asarray(inf.precoders), config), order)
        if cont.mmf > best.mmf:
            best = replace(cont, diagnostics={"start": "infinite-design"})
    return best


def _noma_loop(channels, config, streams, order) -> Solution:
    K, nt = config.n_users, config.n_tx
    pairs = _pairs(K)
    lo = rho_floor(channels, config)

    def rho_of(s):
        sinr = pair_sinrs(channels, s, order)
        return _floor(np.array([sinr[i, j] for i, j in pairs]), lo)

    rho = rho_of(streams)
    t_prev, trace, status = 0.0, [], "iteration-cap"
    best = streams
    for n in range(1, config.max_iterations + 1):
        program = _build(channels, config, streams, rho, order, lo)
        sol = solve_conic(program)
        if sol.status != "optimal" and not (sol.status == "numerical" and _usable(program, sol)):
            if n == 1:
                raise ScaError(f"first NOMA subproblem failed ({sol.status})")
            status = "solver-" + sol.status
            break
        x = sol.x
        pv = x[program.variables["P"]].reshape(K, nt, 2)
        streams = pv[..., 0] + 1j * pv[..., 1]
        rho = _floor(x[program.variables["rho"]], lo)
        t = -sol.objective
        trace.append(t)
        best = streams
        if abs(t - t_prev) < config.sca_tolerance:
            status = "converged"
            break
        t_prev = t
    return noma_solution(channels, config, best, trace, len(trace), status, order)


def noma_solution(channels, config, streams, trace, iterations, status, order=None, mode=None) -> Solution:
    order = decode_order(channels) if order is None else order
    streams = np.array(streams, dtype=complex)
    power = float(np.sum(np.abs(streams) ** 2))
    if power > config.p_tx:
        streams *= math.sqrt(config.p_tx / power)
    P = np.zeros((config.n_groups + 1, config.n_tx), dtype=complex)
    for m, g in enumerate(config.groups):
        P[m + 1] = streams[g[0] - 1]
    user_rates = noma_rates(channels, config, streams, order)
    group_rates = np.array([user_rates[g[0] - 1] for g in config.groups])
    return Solution(
        precoders=P,
        common_split=np.zeros(config.n_groups),
        l_d=config.l_total,
        l_c=0,
        theta=1.0,
        group_rates=group_rates,
        mmf=max(float(group_rates.min()), 0.0),
        iterations=iterations,
        objective_trace=tuple(trace),
        strategy="NOMA",
        mode=mode or ("inf" if config.infinite else "fin"),
        status=status,
        decode_order=tuple(order),
    )


def evaluate_noma(channels: ChannelSet, config: SystemConfig, solution: Solution, mode=None) -> Solution:
    streams = _user_streams(np.asarray(solution.precoders), config)
    return noma_solution(channels, config, streams, solution.objective_trace, solution.iterations,
                         solution.status, solution.decode_order, mode)
