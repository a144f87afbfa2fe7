import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rsma_fbl.fbl import FblParams, dispersion, fbl_rate, penalty_constant, q_func, q_inv

mpmath.mp.dps = 50


def mp_q(x):
    return mpmath.erfc(mpmath.mpf(x) / mpmath.sqrt(2)) / 2


def mp_q_inv(eps):
    """Independent bisection on the 50-digit tail function."""
    lo, hi = mpmath.mpf(-40), mpmath.mpf(40)
    target = mpmath.mpf(eps)
    for _ in range(250):
        mid = (lo + hi) / 2
        if mp_q(mid) > target:
            lo = mid
        else:
            hi = mid
    return (lo + hi) / 2


@pytest.mark.parametrize("eps", [1e-6, 5e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 0.3, 0.5])
def test_q_inv_against_high_precision(eps):
    z = q_inv(eps)
    assert abs(z - float(mp_q_inv(eps))) < 1e-11
    assert abs(float(mp_q(z)) - eps) <= 1e-12 * eps


def test_q_inv_known_values():
    assert q_inv(0.5) == 0.0
    assert q_inv(1e-5) == pytest.approx(4.26489, abs=1e-4)
    assert q_inv(5e-6) == pytest.approx(4.41717, abs=1e-4)


def test_q_inv_symmetry():
    assert q_inv(0.9) == pytest.approx(-q_inv(0.1), abs=1e-12)
    assert q_func(0.0) == 0.5


@pytest.mark.parametrize("eps", [0.0, 1.0, -1e-3, 1.5])
def test_q_inv_rejects_out_of_range(eps):
    with pytest.raises(ValueError):
        q_inv(eps)


def test_dispersion_values():
    assert dispersion(0) == 0.0
    assert dispersion(10) == pytest.approx(1 - 1 / 121, abs=1e-12)
    assert dispersion(1e12) == pytest.approx(1.0)
    np.testing.assert_allclose(dispersion([0.0, 1.0]), [0.0, 0.75])
    with pytest.raises(ValueError):
        dispersion(-1.0)


@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_dispersion_bounded_and_increasing(a, b):
    lo, hi = sorted((a, b))
    assert 0.0 <= dispersion(lo) <= dispersion(hi) < 1.0 or hi > 1e7


def test_fbl_rate_hand_computation():
    # log2(11) - sqrt(V/200) * q_inv(1e-5) * log2(e)
    expected = math.log2(11) - math.sqrt((1 - 1 / 121) / 200) * 4.264890793922825 / math.log(2)
    r = fbl_rate(10.0, FblParams(1e-5, 200))
    assert r == pytest.approx(expected, abs=1e-9)
    assert r == pytest.approx(3.0261, abs=1e-3)


def test_fbl_rate_special_cases():
    assert fbl_rate(1.0, FblParams(1e-5, 100, infinite=True)) == pytest.approx(1.0)
    assert fbl_rate(0.0, FblParams(1e-5, 37)) == 0.0
    assert fbl_rate(3.0, FblParams(0.5, 10)) == pytest.approx(2.0)
    assert fbl_rate(3.0, FblParams(1e-5, 10, 0.25, infinite=True)) == pytest.approx(0.5)
    assert penalty_constant(1e-5) == pytest.approx(q_inv(1e-5) / math.log(2))


def test_fbl_rate_vectorized_and_can_go_negative():
    r = fbl_rate(np.array([0.0, 1e-3, 10.0]), FblParams(1e-5, 100))
    assert r.shape == (3,)
    assert r[1] < 0 < r[2]


@settings(max_examples=200)
@given(st.floats(1e-6, 1e4), st.integers(1, 10_000), st.floats(0.01, 1.0))
def test_fbl_below_shannon(gamma, l, theta):
    params = FblParams(1e-5, l, theta)
    assert fbl_rate(gamma, params) < theta * math.log2(1 + gamma)


@settings(max_examples=200)
@given(st.floats(1e-3, 1e4), st.integers(1, 5000))
def test_fbl_increasing_in_blocklength(gamma, l):
    assert fbl_rate(gamma, FblParams(1e-5, l + 1)) > fbl_rate(gamma, FblParams(1e-5, l))


@pytest.mark.parametrize("gamma", [0.1, 1.0, 10.0, 1000.0])
def test_fbl_tends_to_shannon(gamma):
    shannon = math.log2(1 + gamma)
    assert fbl_rate(gamma, FblParams(1e-5, 10**10)) == pytest.approx(shannon, abs=1e-4)
    # at 1e9 the remaining gap is the penalty itself, about 1.9e-4 for eps=1e-5
    gap = shannon - fbl_rate(gamma, FblParams(1e-5, 10**9))
    assert gap == pytest.approx(math.sqrt(dispersion(gamma) / 1e9) * penalty_constant(1e-5), rel=1e-6)


def test_params_validation():
    with pytest.raises(ValueError):
        FblParams(0.0, 100)
    with pytest.raises(ValueError):
        FblParams(1e-5, 0)
    with pytest.raises(ValueError):
        FblParams(1e-5, 100, 0.0)
