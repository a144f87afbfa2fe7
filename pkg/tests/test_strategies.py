import math

import numpy as np
import pytest
from scipy.optimize import linprog

from rsma_fbl.channels import derive_seed, sample_channels
from rsma_fbl.sca import achieved_rates, sca_solve
from rsma_fbl.strategies import (
    crsma_grid, evaluate_inf_fin, solve, solve_crsma, solve_noma, solve_rsma, solve_sdma, water_fill,
)

from conftest import coop, fixed_channels, two_user
from oracles import grid_two_user_siso, single_user


def _consistent(ch, cfg, sol):
    r = achieved_rates(ch, cfg, sol.precoders, sol.common_split, sol.l_d, sol.l_c)
    np.testing.assert_allclose(sol.group_rates, r.group_rates, atol=1e-9)
    assert r.feasible
    assert np.sum(np.abs(sol.precoders) ** 2) <= cfg.p_tx * (1 + 1e-8)


@pytest.mark.parametrize("strategy", ["RSMA", "SDMA", "NOMA"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_single_user_oracle(strategy, seed):
    cfg = two_user(groups=((1,),), channel_variances=(1.0,), strategy=strategy)
    ch = sample_channels(cfg, derive_seed(99, seed))
    run = solve(ch, cfg)
    assert run.mmf == pytest.approx(single_user(ch.downlink[0], 100, cfg.epsilon, 500), rel=1e-3)


@pytest.mark.parametrize("mode", ["finite", "infinite"])
@pytest.mark.parametrize("seed", [0, 1])
def test_siso_two_user_grid_oracle(mode, seed):
    cfg = two_user(n_tx=1, channel_variances=(1.0, 1.0), l_total=200, blocklength_mode=mode)
    ch = sample_channels(cfg, derive_seed(5, seed))
    run = solve_rsma(ch, cfg)
    ref = grid_two_user_siso(ch.downlink[:, 0], 100, cfg.epsilon, 200, mode == "infinite", n=400)
    assert run.mmf == pytest.approx(ref, rel=0.02)
    _consistent(ch, cfg, run.solution)


def test_zero_power():
    for s in ("RSMA", "SDMA", "NOMA"):
        cfg = two_user(p_tx=0.0, strategy=s)
        run = solve(sample_channels(cfg, 1), cfg)
        assert run.mmf == 0.0
    cfg = coop(p_tx=0.0)
    run = solve_crsma(sample_channels(cfg, 1), cfg)
    assert run.mmf >= 0.0 and np.all(run.solution.precoders == 0)


def test_sdma_has_no_common_part(ch2, cfg2):
    sol = solve_sdma(ch2, cfg2).solution
    assert np.all(sol.common_split == 0) and np.all(sol.precoders[0] == 0)
    assert sol.strategy == "SDMA" and sol.mode == "fin"
    _consistent(ch2, cfg2.replace(strategy="SDMA"), sol)


def test_identical_channels_favour_rsma():
    cfg = two_user(n_tx=2, channel_variances=(1.0, 1.0), bler={"SDMA": 5e-6})
    ch = fixed_channels([[1.0, 0.5j], [1.0, 0.5j]])
    sdma = solve_sdma(ch, cfg)
    rsma = solve_rsma(ch, cfg, warm_start=sdma.solution)
    assert rsma.mmf > sdma.mmf + 0.5


@pytest.mark.parametrize("seed", range(4))
def test_sdma_dominance_under_warm_start(seed):
    cfg = two_user(bler={"SDMA": 5e-6}, l_total=300)
    ch = sample_channels(cfg, derive_seed(31, seed))
    sdma = solve_sdma(ch, cfg)
    rsma = solve_rsma(ch, cfg, warm_start=sdma.solution)
    assert rsma.solution.t_star >= sdma.solution.t_star - 10 * cfg.sca_tolerance
    assert rsma.mmf >= sdma.mmf - 10 * cfg.sca_tolerance


def test_rsma_records_branch(ch2, cfg2):
    run = solve_rsma(ch2, cfg2)
    diag = run.solution.diagnostics
    names = {"common", "private-only", "common-only", "infinite-design"}
    assert diag["branch"] in names and set(diag["branch_mmf"]) == names
    assert run.mmf == max(diag["branch_mmf"].values())
    inf = solve_rsma(ch2, cfg2.replace(blocklength_mode="infinite")).solution.diagnostics
    assert set(inf["branch_mmf"]) == names - {"infinite-design"}
    _consistent(ch2, cfg2, run.solution)


def test_pure_multicast_optimum_reached():
    # equal-gain SISO pair where the grid optimum puts all power on the common
    # stream; the full layout stalls with a weak private stream still on
    cfg = two_user(n_tx=1, channel_variances=(1.0, 1.0), l_total=200)
    ch = sample_channels(cfg, derive_seed(4, 0))
    run = solve_rsma(ch, cfg)
    assert run.solution.diagnostics["branch"] == "common-only"
    assert run.solution.diagnostics["branch_mmf"]["common"] < run.mmf
    g = float(np.min(np.abs(ch.downlink[:, 0]) ** 2))
    multicast = single_user(np.array([math.sqrt(g)]), 100, cfg.epsilon, 200) / 2
    assert run.mmf == pytest.approx(multicast, rel=1e-3)
    assert np.all(run.solution.precoders[1:] == 0)
    _consistent(ch, cfg, run.solution)


def test_weak_user_private_stream_switched_on():
    # optimum: common stream to the weak user plus a small private stream for
    # the strong one; only the start from the infinite-blocklength design finds it
    cfg = two_user(n_tx=1, channel_variances=(1.0, 0.01), l_total=200)
    ch = sample_channels(cfg, derive_seed(77, 33))
    run = solve_rsma(ch, cfg)
    ref = grid_two_user_siso(ch.downlink[:, 0], 100, cfg.epsilon, 200, n=1000)
    assert run.mmf == pytest.approx(ref, rel=0.02)
    assert run.solution.diagnostics["branch"] == "infinite-design"
    _consistent(ch, cfg, run.solution)


def test_crsma_grid_sizes():
    assert crsma_grid(coop(l_total=300)) == list(range(100, 201, 10))
    assert len(crsma_grid(coop(l_total=300))) == 11
    assert crsma_grid(coop(l_total=200)) == [100]
    assert crsma_grid(coop(l_total=199)) == []


def test_crsma_single_candidate():
    cfg = coop(l_total=200)
    run = solve_crsma(sample_channels(cfg, 3), cfg)
    assert run.solution.theta == 0.5 and [c for c, _ in run.candidates] == [100]


def test_crsma_argmax_of_trace():
    cfg = coop(l_total=300)
    ch = sample_channels(cfg, derive_seed(2024, 1))
    run = solve_crsma(ch, cfg)
    grid = [c for c, _ in run.candidates]
    assert grid == crsma_grid(cfg)
    values = [t for _, t in run.candidates]
    best = max(values)
    assert run.solution.l_c == grid[values.index(best)]
    assert run.solution.l_d + run.solution.l_c == 300
    assert run.solution.theta == run.solution.l_d / 300
    _consistent(ch, cfg, run.solution)


def test_crsma_candidates_dominate_cold_starts():
    cfg = coop(l_total=400, blocklength_mode="infinite")
    ch = sample_channels(cfg, derive_seed(2024, 7))
    run = solve_crsma(ch, cfg)
    for l_c, t in run.candidates:
        cold = sca_solve(ch, cfg, 400 - l_c, l_c, common=True)
        assert t >= (cold.t_star if cold.status != "infeasible" else -math.inf)
    assert run.solution.t_star == max(t for _, t in run.candidates)


def test_crsma_needs_grid_and_relays():
    cfg = coop(l_total=150)
    with pytest.raises(ValueError):
        solve_crsma(sample_channels(cfg, 1), cfg)
    cfg = coop()
    with pytest.raises(ValueError):
        solve_crsma(sample_channels(cfg, 1, with_relay=False), cfg)


def test_dead_relays_do_not_beat_rsma():
    cfg = coop(l_total=300)
    ch = sample_channels(cfg, 6)
    dead = fixed_channels(ch.downlink, relay=np.zeros_like(ch.relay), config=cfg)
    crsma = solve_crsma(dead, cfg)
    rsma = solve_rsma(dead, cfg.replace(strategy="RSMA"))
    assert crsma.mmf <= rsma.mmf + 1e-6


def test_noma_order_and_ties():
    from rsma_fbl.noma import decode_order

    ch = fixed_channels([[1.0, 0.0], [0.0, 2.0], [0.0, 1.0]])
    assert decode_order(ch) == (1, 0, 2)
    assert decode_order(fixed_channels([[0.0, 1.0], [1.0, 0.0], [0.6, 0.8j]])) == (0, 1, 2)
    cfg = two_user(n_tx=2, groups=((1,), (2,), (3,)), channel_variances=(1, 1, 1), strategy="NOMA")
    sol = solve_noma(ch, cfg).solution
    assert sorted(sol.decode_order) == [0, 1, 2]


def test_noma_weak_message_rate_is_min_over_decoders():
    from rsma_fbl.fbl import FblParams, fbl_rate
    from rsma_fbl.noma import noma_rates, pair_sinrs

    cfg = two_user(n_tx=2, channel_variances=(1, 1), strategy="NOMA")
    ch = fixed_channels([[2.0, 0.0], [0.6, 0.8]])
    streams = np.array([[1.0, 0.0], [0.5, 2.0]], dtype=complex)
    order = (0, 1)
    s = pair_sinrs(ch, streams, order)
    params = FblParams(cfg.epsilon, cfg.l_total)
    rates = noma_rates(ch, cfg, streams, order)
    assert rates[1] == pytest.approx(max(min(fbl_rate(s[0, 1], params), fbl_rate(s[1, 1], params)), 0.0))
    # the strongest user's own message only sees noise after cancellation
    assert s[0, 0] == pytest.approx(abs(np.vdot(ch.downlink[0], streams[0])) ** 2)


def test_noma_rejects_multicast():
    cfg = two_user(groups=((1, 2),), channel_variances=(1, 1), strategy="NOMA")
    with pytest.raises(ValueError):
        solve_noma(sample_channels(cfg, 1), cfg)


@pytest.mark.parametrize("seed", range(3))
def test_every_strategy_consistent(seed):
    cfg = two_user(n_tx=2, groups=((1,), (2,), (3,)), channel_variances=(1.0, 0.3, 0.1))
    ch = sample_channels(cfg, derive_seed(8, seed))
    for s in ("RSMA", "SDMA", "NOMA"):
        c = cfg.replace(strategy=s)
        sol = solve(ch, c).solution
        if s == "NOMA":
            from rsma_fbl.noma import noma_rates

            np.testing.assert_allclose(sol.group_rates, noma_rates(ch, c, sol.precoders[1:], sol.decode_order),
                                       atol=1e-9)
        else:
            _consistent(ch, c, sol)


@pytest.mark.parametrize("r, private", [(1.0, [0.5, 2.0, 1.0]), (0.0, [1.0, 2.0]), (10.0, [1.0, 1.5]), (0.3, [2.0])])
def test_water_fill_matches_lp(r, private):
    c, level = water_fill(r, np.array(private))
    # maximize z s.t. z <= C_m + r_m, sum C <= R, C >= 0
    M = len(private)
    res = linprog(
        c=[0] * M + [-1],
        A_ub=np.vstack([np.hstack([-np.eye(M), np.ones((M, 1))]), [1] * M + [0]]),
        b_ub=list(private) + [r],
        bounds=[(0, None)] * M + [(None, None)],
    )
    assert level == pytest.approx(-res.fun, abs=1e-9)
    assert c.sum() <= r + 1e-12 and np.all(c >= 0)
    assert np.min(c + private) == pytest.approx(level)


def test_inf_fin_self_evaluation():
    cfg = coop(n_tx=4, l_total=300, blocklength_mode="infinite")
    ch = sample_channels(cfg, 2)
    inf = solve_crsma(ch, cfg)
    same = evaluate_inf_fin(ch, cfg, inf.solution)
    assert same.mode == "inf-fin"
    np.testing.assert_array_equal(same.solution.precoders, inf.solution.precoders)
    # only the split is re-optimized, which can recover at most the SCA stopping slack
    assert inf.mmf - 1e-9 <= same.mmf <= inf.mmf + cfg.sca_tolerance


def test_inf_fin_with_no_penalty_equals_infinite():
    cfg = coop(n_tx=4, l_total=300, blocklength_mode="infinite")
    ch = sample_channels(cfg, 2)
    inf = solve_crsma(ch, cfg)
    half = cfg.replace(blocklength_mode="finite", bler={"C-RSMA": 0.5})
    same = evaluate_inf_fin(ch, cfg, inf.solution)
    assert evaluate_inf_fin(ch, half, inf.solution).mmf == pytest.approx(same.mmf, abs=1e-12)


def test_inf_fin_below_fin_on_average():
    cfg = coop(n_tx=4, l_total=300)
    gaps = []
    for seed in range(3):
        ch = sample_channels(cfg, derive_seed(2024, seed))
        fin = solve_crsma(ch, cfg)
        inf = solve_crsma(ch, cfg.replace(blocklength_mode="infinite"))
        gaps.append(fin.mmf - evaluate_inf_fin(ch, cfg, inf.solution).mmf)
    assert np.mean(gaps) >= -10 * cfg.sca_tolerance


def test_inf_fin_rejects_mismatch(ch2, cfg2):
    sol = solve_rsma(ch2, cfg2).solution
    with pytest.raises(ValueError):
        evaluate_inf_fin(ch2, cfg2.replace(n_tx=2), sol)


def test_orthogonal_channels_still_solve():
    cfg = two_user(n_tx=2, channel_variances=(1, 1))
    ch = fixed_channels([[1.0, 0.0], [0.0, 1.0]])
    for s in ("RSMA", "SDMA", "NOMA"):
        run = solve(ch, cfg.replace(strategy=s))
        assert run.mmf > 0
    from rsma_fbl.sca import initialize_precoders

    pc = initialize_precoders(ch, cfg).precoders[0]
    assert np.all(np.abs(ch.downlink.conj() @ pc) > 0)
