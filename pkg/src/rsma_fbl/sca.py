"""SINR/rate evaluation and the successive convex approximation loop.

For a fixed time split (l_d, l_c) the max-min rate problem is made convex by
two conservative restrictions around the current iterate:

* the square-root dispersion term is replaced by its tangent line (it is
  concave, so the tangent over-estimates the penalty);
* the quadratic-over-linear SINR terms |h^H p|^2 / rho are replaced by their
  tangent plane (jointly convex, so the plane under-estimates them).

Each restricted program is an exponential/second-order cone program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channels import ChannelSet
from .conic import ConicProgram, ProgramBuilder, check_solution, row, solve_conic, SOLVER_TOL
from .fbl import FblParams, fbl_rate, penalty_constant
from .model import Solution, SystemConfig

RHO_FLOOR = 1e-6
LN2 = math.log(2.0)


class ScaError(RuntimeError):
    pass


@dataclass(frozen=True)
class SinrTable:
    common: np.ndarray
    private: np.ndarray
    relay_common: np.ndarray


@dataclass(frozen=True)
class ScaState:
    n: int
    precoders: np.ndarray
    rho_c: np.ndarray
    rho_p: np.ndarray
    t: float = 0.0
    floor: float = RHO_FLOOR


@dataclass(frozen=True)
class Rates:
    common_rate: float
    common_per_user: np.ndarray
    private_per_user: np.ndarray
    group_rates: np.ndarray
    mmf: float
    feasible: bool


def gain_matrix(channels: ChannelSet, precoders: np.ndarray) -> np.ndarray:
    """|h_k^H p_j|^2 for every user k (rows) and stream j (columns)."""
    return np.abs(channels.downlink.conj() @ np.asarray(precoders).T) ** 2


def evaluate_sinrs(channels: ChannelSet, config: SystemConfig, precoders: np.ndarray) -> SinrTable:
    P = np.asarray(precoders)
    if P.shape != (config.n_groups + 1, config.n_tx) or channels.downlink.shape != (config.n_users, config.n_tx):
        raise ValueError(f"precoders {P.shape} / channels {channels.downlink.shape} do not match the config")
    G = gain_matrix(channels, P)
    priv = G[:, 1:]
    total = priv.sum(axis=1)
    own = priv[np.arange(config.n_users), config.user_group]
    common = G[:, 0] / (total + 1.0)
    private = own / (total - own + 1.0)
    relay = np.zeros(0)
    if channels.relay is not None:
        relay = config.p_relay * np.sum(np.abs(channels.relay) ** 2, axis=1)
    return SinrTable(common, private, relay)


def relay_rates(channels: ChannelSet, config: SystemConfig, l_d: int, l_c: int) -> np.ndarray:
    """Second-phase common rate of each cooperative user (unclamped)."""
    if l_c == 0:
        return np.zeros(len(config.cooperative_users))
    if channels.relay is None:
        raise ValueError("cooperative phase needs relay channels")
    gamma2 = config.p_relay * np.sum(np.abs(channels.relay) ** 2, axis=1)
    theta = l_d / (l_d + l_c)
    return np.atleast_1d(fbl_rate(gamma2, FblParams(config.epsilon, l_c, 1.0 - theta, config.infinite)))


def achieved_rates(
    channels: ChannelSet,
    config: SystemConfig,
    precoders: np.ndarray,
    common_split: np.ndarray,
    l_d: int,
    l_c: int = 0,
) -> Rates:
    """Exact rates of a candidate, every per-stream rate clamped at 0."""
    l_n = l_d + l_c
    theta = l_d / l_n
    sinr = evaluate_sinrs(channels, config, precoders)
    params = FblParams(config.epsilon, l_d, theta, config.infinite)
    rc1 = np.maximum(np.atleast_1d(fbl_rate(sinr.common, params)), 0.0)
    rp = np.maximum(np.atleast_1d(fbl_rate(sinr.private, params)), 0.0)
    if l_c > 0:
        relays = list(config.relay_users)
        co = list(config.cooperative_users)
        r2 = np.maximum(relay_rates(channels, config, l_d, l_c), 0.0)
        per_user = rc1.copy()
        per_user[co] = rc1[co] + r2
        common = min(rc1[relays].min(), per_user[co].min()) if co else rc1[relays].min()
    else:
        per_user = rc1
        common = rc1.min()
    c = np.asarray(common_split, dtype=float)
    groups = config.user_group
    priv_min = np.array([rp[groups == m].min() for m in range(config.n_groups)])
    group_rates = c + priv_min
    feasible = bool(np.all(c >= -1e-12) and c.sum() <= common + 1e-9)
    return Rates(float(common), per_user, rp, group_rates, max(float(group_rates.min()), 0.0), feasible)


def taylor_sqrt_dispersion(rho_n: float, blocklength: float, penalty: float) -> tuple[float, float]:
    """Tangent ``a + b*rho`` of ``penalty/sqrt(l) * sqrt(1 - (1+rho)^-2)`` at ``rho_n``."""
    if not rho_n > 0:
        raise ValueError("linearization point must be > 0")
    k = penalty / math.sqrt(blocklength)
    x = 1.0 + rho_n
    nu = 1.0 - x**-2
    slope = k * x**-3 / math.sqrt(nu)
    return k * math.sqrt(nu) - slope * rho_n, slope


def linearize_qol(h: np.ndarray, p_n: np.ndarray, rho_n: float) -> tuple[np.ndarray, float, float]:
    """Tangent plane of |h^H p|^2 / rho at (p_n, rho_n).

    Returns ``(g, d, e)`` with bound ``Re(g^H p) + d*rho + e``.
    """
    if not rho_n > 0:
        raise ValueError("linearization point must be > 0")
    z = np.vdot(h, p_n)
    g = 2.0 * h * z / rho_n
    return g, -abs(z) ** 2 / rho_n**2, 0.0


def rho_floor(channels: ChannelSet, config: SystemConfig) -> float:
    """Lower bound kept on every SINR variable.

    RHO_FLOOR, lowered for very weak instances so that each user can still
    reach it (1e-3 of its interference-free SNR).
    """
    weakest = config.p_tx * float(np.min(np.sum(np.abs(channels.downlink) ** 2, axis=1)))
    if not weakest > 0:
        raise ValueError("a user with zero channel or zero power has no positive SINR")
    return min(RHO_FLOOR, 1e-3 * weakest)


def _floor(rho: np.ndarray, floor: float = RHO_FLOOR) -> np.ndarray:
    return np.maximum(np.asarray(rho, dtype=float), floor)


def initialize_precoders(
    channels: ChannelSet, config: SystemConfig, common: bool | None = None, private: bool = True
) -> ScaState:
    """MRT/SVD start: common stream along the dominant direction of all channels."""
    if common is None:
        common = config.strategy != "SDMA"
    if not (common or private):
        raise ValueError("at least one of the common and private streams must be enabled")
    H = channels.downlink.T  # n_tx x K
    if not np.any(H):
        raise ValueError("all-zero channel matrix")
    M = config.n_groups
    q_c = (config.p_tx / 2.0 if private else config.p_tx) if common else 0.0
    q_p = (config.p_tx - q_c) / M
    P = np.zeros((M + 1, config.n_tx), dtype=complex)
    P[0] = math.sqrt(q_c) * _dominant_direction(H)
    for m, g in enumerate(config.groups):
        P[m + 1] = math.sqrt(q_p) * _dominant_direction(H[:, [u - 1 for u in g]])
    sinr = evaluate_sinrs(channels, config, P)
    lo = rho_floor(channels, config)
    return ScaState(0, P, _floor(sinr.common, lo), _floor(sinr.private, lo), 0.0, lo)


def _dominant_direction(H: np.ndarray) -> np.ndarray:
    """Unit direction serving the columns of H; sign-normalized for reproducibility.

    MRT for one column, the dominant left singular vector otherwise. If that
    vector is orthogonal to some column (degenerate SVD), the normalized sum
    of the normalized columns is used instead, since a zero inner product
    gives a zero tangent plane that can never certify a positive SINR.
    """
    if not np.any(H):
        return np.zeros(H.shape[0], dtype=complex)
    if H.shape[1] == 1:
        u = H[:, 0] / np.linalg.norm(H[:, 0])
    else:
        u = np.linalg.svd(H)[0][:, 0]
        norms = np.linalg.norm(H, axis=0)
        live = norms > 0
        if np.any(np.abs(H[:, live].conj().T @ u) ** 2 <= 1e-12 * norms[live] ** 2):
            v = np.sum(H[:, live] / norms[live], axis=1)
            if np.linalg.norm(v) > 0:
                u = v / np.linalg.norm(v)
    lead = u[np.flatnonzero(np.abs(u) > 1e-12)[0]]
    return u * (abs(lead) / lead)


class _Layout:
    def __init__(self, builder: ProgramBuilder, K: int, M: int, nt: int, common: bool, phase1: bool, private: bool):
        self.t = builder.variable("t", 1)[0]
        p = builder.variable("P", (M + 1) * nt * 2).reshape(M + 1, nt, 2)
        self.p_re, self.p_im = p[..., 0], p[..., 1]
        self.c = builder.variable("c", M)
        self.alpha_c = builder.variable("alpha_c", K) if common else None
        self.alpha_p = builder.variable("alpha_p", M) if private else None
        self.rho_c = builder.variable("rho_c", K) if common else None
        self.rho_p = builder.variable("rho_p", K) if private else None
        self.s = builder.variable("s", 1)[0] if phase1 else None


def each(indices) -> list:
    """One row per variable."""
    return [row((int(i), 1.0)) for i in np.ravel(indices)]


def at_least(indices, bound: float) -> list:
    return [row((int(i), 1.0), const=-bound) for i in np.ravel(indices)]


def inner_rows(h: np.ndarray, re_idx: np.ndarray, im_idx: np.ndarray):
    """Rows of Re(h^H p) and Im(h^H p) over the lifted (re, im) coordinates."""
    a, b = h.real, h.imag
    return (
        row((re_idx, a), (im_idx, b)),
        row((re_idx, -b), (im_idx, a)),
    )


def qol_cone(builder: ProgramBuilder, h, p_n, rho_n, sig_re, sig_im, rho_idx, interferers):
    """sum_j |h^H p_j|^2 + 1 <= tangent(|h^H p_sig|^2 / rho) as a rotated cone."""
    g, d, _ = linearize_qol(h, p_n, rho_n)
    # Re(g^H p) = g_re.x + g_im.y
    lin = row((sig_re, g.real), (sig_im, g.imag), (rho_idx, d))
    half = (lin[0], 0.5 * lin[1], 0.0)
    w = []
    for re_idx, im_idx in interferers:
        w.extend(inner_rows(h, re_idx, im_idx))
    builder.cone("rsoc", [half, row(const=1.0), *w, row(const=1.0)])


def rate_cone(builder: ProgramBuilder, alpha_idx, rho_idx, rho_n, blocklength, penalty, infinite):
    """log2(1+rho) - tangent penalty >= alpha as an exponential cone."""
    if infinite:
        a, b = 0.0, 0.0
    else:
        a, b = taylor_sqrt_dispersion(rho_n, blocklength, penalty)
    builder.cone(
        "exp",
        [
            row((alpha_idx, LN2), (rho_idx, LN2 * b), const=LN2 * a),
            row(const=1.0),
            row((rho_idx, 1.0), const=1.0),
        ],
    )


def build_subproblem(
    channels: ChannelSet,
    config: SystemConfig,
    state: ScaState,
    l_d: int,
    l_c: int = 0,
    relay_rates: np.ndarray | None = None,
    common: bool | None = None,
    phase1: bool = False,
    private: bool = True,
    cap: bool = True,
) -> ConicProgram:
    """Convex restriction around ``state`` (maximize t, i.e. minimize -t).

    With ``common=False`` the common precoder and split are pinned to zero and
    all common-stream constraints dropped; ``private=False`` does the same
    for the private streams, so each group is served by its split alone. ``phase1`` replaces the objective by
    the worst common-rate margin (capped by the max-min private rate) with the
    split pinned to zero; it is used to reach a point where the common stream
    is decodable.
    """
    if common is None:
        common = config.strategy != "SDMA"
    if not (common or private):
        raise ValueError("at least one of the common and private streams must be enabled")
    K, M, nt = config.n_users, config.n_groups, config.n_tx
    theta = l_d / (l_d + l_c)
    penalty = 0.0 if config.infinite else penalty_constant(config.epsilon)
    groups = config.user_group
    H = channels.downlink
    P = state.precoders
    B = ProgramBuilder()
    v = _Layout(B, K, M, nt, common, phase1 and common, private)
    if phase1 and common:
        B.minimize(v.s, -1.0)
    else:
        B.minimize(v.t, -1.0)

    for m in range(M):
        if private:
            B.cone("nonneg", [row((v.c[m], 1.0), (v.alpha_p[m], theta), (v.t, -1.0))])
        else:
            B.cone("nonneg", [row((v.c[m], 1.0), (v.t, -1.0))])

    if common:
        split_idx = v.c
        if phase1:
            # the margin is capped by the private rates so no stream is starved
            B.cone("zero", each(v.c))
            if private and cap:
                B.cone("nonneg", [row((v.t, 1.0), (v.s, -1.0))])
        r2 = np.zeros(K)
        coop = l_c > 0
        if coop:
            rr = np.zeros(len(config.cooperative_users)) if relay_rates is None else np.asarray(relay_rates)
            r2[list(config.cooperative_users)] = rr
        direct = set(config.relay_users) if coop else set(range(K))
        rows = []
        for k in range(K):
            extra = 0.0 if k in direct else r2[k]
            if phase1:
                rows.append(row((v.alpha_c[k], theta), (v.s, -1.0), const=extra))
            else:
                rows.append(row((v.alpha_c[k], theta), (split_idx, -1.0), const=extra))
        B.cone("nonneg", rows)
        for k in range(K):
            rate_cone(B, v.alpha_c[k], v.rho_c[k], state.rho_c[k], l_d, penalty, config.infinite)
            qol_cone(
                B, H[k], P[0], state.rho_c[k], v.p_re[0], v.p_im[0], v.rho_c[k],
                [(v.p_re[j], v.p_im[j]) for j in range(1, M + 1)],
            )
    else:
        B.cone("zero", each(v.c) + each(v.p_re[0]) + each(v.p_im[0]))

    if not private:
        B.cone("zero", each(v.p_re[1:]) + each(v.p_im[1:]))
    for k in range(K if private else 0):
        m = groups[k]
        rate_cone(B, v.alpha_p[m], v.rho_p[k], state.rho_p[k], l_d, penalty, config.infinite)
        qol_cone(
            B, H[k], P[m + 1], state.rho_p[k], v.p_re[m + 1], v.p_im[m + 1], v.rho_p[k],
            [(v.p_re[j], v.p_im[j]) for j in range(1, M + 1) if j != m + 1],
        )

    all_p = np.concatenate([v.p_re.ravel(), v.p_im.ravel()])
    B.cone("soc", [row(const=math.sqrt(config.p_tx)), *each(all_p)])
    # SINR bounds stay off the sqrt-dispersion singularity at 0
    nonneg = at_least(v.rho_p, state.floor) if private else []
    if common:
        nonneg += each(v.c) + at_least(v.rho_c, state.floor)
    B.cone("nonneg", nonneg)
    return B.build()


def state_vector(program: ConicProgram, state: ScaState, x_prev: np.ndarray) -> np.ndarray:
    """Previous optimum with rho replaced by the (floored) linearization point."""
    x = x_prev.copy()
    if "rho_p" in program.variables:
        x[program.variables["rho_p"]] = state.rho_p
    if "rho_c" in program.variables:
        x[program.variables["rho_c"]] = state.rho_c
    return x


def _unpack(program: ConicProgram, x: np.ndarray, M: int, nt: int):
    p = x[program.variables["P"]].reshape(M + 1, nt, 2)
    P = p[..., 0] + 1j * p[..., 1]
    c = np.maximum(x[program.variables["c"]], 0.0)
    K = len(x[program.variables["rho_c" if "rho_c" in program.variables else "rho_p"]])
    rho_p = x[program.variables["rho_p"]] if "rho_p" in program.variables else np.zeros(K)
    rho_c = x[program.variables["rho_c"]] if "rho_c" in program.variables else np.zeros(K)
    return P, c, rho_c, rho_p


def finalize(
    channels: ChannelSet,
    config: SystemConfig,
    P: np.ndarray,
    c: np.ndarray,
    l_d: int,
    l_c: int,
    trace,
    iterations: int,
    status: str,
    mode: str | None = None,
    diagnostics: dict | None = None,
) -> Solution:
    """Project onto the exact constraints (power, common split) and evaluate."""
    P = np.array(P, dtype=complex)
    power = float(np.sum(np.abs(P) ** 2))
    if power > config.p_tx:
        P *= math.sqrt(config.p_tx / power) if power > 0 else 0.0
    c = np.maximum(np.asarray(c, dtype=float), 0.0)
    rates = achieved_rates(channels, config, P, c, l_d, l_c)
    if c.sum() > rates.common_rate:
        c = c * (rates.common_rate / c.sum()) if c.sum() > 0 else c
        rates = achieved_rates(channels, config, P, c, l_d, l_c)
    return Solution(
        precoders=P,
        common_split=c,
        l_d=l_d,
        l_c=l_c,
        theta=l_d / (l_d + l_c),
        group_rates=rates.group_rates,
        mmf=rates.mmf,
        iterations=iterations,
        objective_trace=tuple(trace),
        strategy=config.strategy,
        mode=mode or ("inf" if config.infinite else "fin"),
        status=status,
        common_rate=rates.common_rate,
        diagnostics=diagnostics or {},
    )


def common_margin(channels: ChannelSet, config: SystemConfig, state: ScaState, l_d: int, l_c: int, rr) -> float:
    """Worst common-rate margin at the tangency point with a zero split."""
    theta = l_d / (l_d + l_c)
    params = FblParams(config.epsilon, l_d, theta, config.infinite)
    r1 = np.atleast_1d(fbl_rate(state.rho_c, params))
    if l_c > 0:
        r1 = r1.copy()
        r1[list(config.cooperative_users)] += rr
    return float(r1.min())


def sca_solve(
    channels: ChannelSet,
    config: SystemConfig,
    l_d: int,
    l_c: int = 0,
    init: ScaState | None = None,
    common: bool | None = None,
    check_warm_start: bool = False,
    restoration_iterations: int = 50,
    private: bool = True,
) -> Solution:
    """Iterate convex restrictions until the bound t moves less than the tolerance."""
    if common is None:
        common = config.strategy != "SDMA"
    M, nt = config.n_groups, config.n_tx
    if init is None:
        init = initialize_precoders(channels, config, common, private)
    rr = relay_rates(channels, config, l_d, l_c) if l_c > 0 else None
    state = init
    diagnostics: dict = {"restoration_iterations": 0}

    if common and common_margin(channels, config, state, l_d, l_c, rr) < 0:
        state, ok, its = _restore(channels, config, state, l_d, l_c, rr, restoration_iterations, private)
        diagnostics["restoration_iterations"] = its
        if not ok:
            zero = np.zeros(M)
            return finalize(channels, config, state.precoders, zero, l_d, l_c, (-math.inf,), 0,
                            "infeasible", diagnostics=diagnostics)

    trace: list[float] = []
    warm: list[float] = []
    t_prev = state.t
    x_prev = None
    best = None
    status = "iteration-cap"
    for n in range(1, config.max_iterations + 1):
        program = build_subproblem(channels, config, state, l_d, l_c, rr, common, private=private)
        if check_warm_start and x_prev is not None:
            warm.append(check_solution(program, state_vector(program, state, x_prev)).worst)
        sol = solve_conic(program)
        if sol.status != "optimal" and not (sol.status == "numerical" and _usable(program, sol)):
            if n == 1 and diagnostics["restoration_iterations"]:
                # the restored point can sit on the SINR floor where the restriction is empty
                zero = np.zeros(M)
                return finalize(channels, config, state.precoders, zero, l_d, l_c, (-math.inf,), 0,
                                "infeasible", diagnostics=diagnostics)
            if n == 1:
                raise ScaError(f"first subproblem failed ({sol.status}) from a feasible start")
            status = "solver-" + sol.status
            break
        P, c, rho_c, rho_p = _unpack(program, sol.x, M, nt)
        t = -sol.objective
        trace.append(t)
        best = (P, c, n)
        state = ScaState(n, P, _floor(rho_c, state.floor), _floor(rho_p, state.floor), t, state.floor)
        x_prev = sol.x
        if abs(t - t_prev) < config.sca_tolerance:
            status = "converged"
            break
        t_prev = t
    if check_warm_start:
        diagnostics["warm_start_residuals"] = warm
    P, c, n = best
    return finalize(channels, config, P, c, l_d, l_c, trace, n, status, diagnostics=diagnostics)


def _usable(program: ConicProgram, sol) -> bool:
    return bool(np.all(np.isfinite(sol.x))) and check_solution(program, sol.x, 1e-6).passed


def _restore(channels, config, state, l_d, l_c, rr, max_iter, private=True):
    """Raise the worst common-rate margin until the common stream is decodable.

    The capped pass keeps the private streams alive; if a private stream is
    itself stuck below zero rate the cap blocks all progress, so an uncapped
    pass from the same start follows.
    """
    its = 0
    for cap in (True, False) if private else (False,):
        out, ok, n = _restore_pass(channels, config, state, l_d, l_c, rr, max_iter, private, cap)
        its += n
        if ok:
            return out, True, its
    return out, False, its


def _restore_pass(channels, config, state, l_d, l_c, rr, max_iter, private, cap):
    M, nt = config.n_groups, config.n_tx
    s_prev = -math.inf
    for n in range(1, max_iter + 1):
        program = build_subproblem(channels, config, state, l_d, l_c, rr, True, phase1=True, private=private, cap=cap)
        sol = solve_conic(program)
        if sol.status != "optimal" and not (sol.status == "numerical" and _usable(program, sol)):
            return state, False, n
        P, _, rho_c, rho_p = _unpack(program, sol.x, M, nt)
        state = ScaState(0, P, _floor(rho_c, state.floor), _floor(rho_p, state.floor), 0.0, state.floor)
        s = -sol.objective
        if s >= 10 * SOLVER_TOL and common_margin(channels, config, state, l_d, l_c, rr) >= 0:
            return state, True, n
        if s - s_prev < 1e-6:
            break
        s_prev = s
    return state, False, n
