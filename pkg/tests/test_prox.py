import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from proxguide.harness.sweeps import brute_force_prox
from proxguide.prox import (ThresholdSpec, hard_threshold, l0_weight_to_threshold, prox_apply, quantile_abs,
                            soft_threshold)

reals = st.floats(-50, 50, allow_nan=False)
fields = arrays(np.float64, st.integers(1, 40), elements=reals)
thresholds = st.floats(0, 20, allow_nan=False)


@pytest.mark.parametrize("x, expected", [(0.5, 0.3), (-0.1, 0.0), (-0.5, -0.3)])
def test_soft_cases(x, expected):
    assert soft_threshold(x, 0.2) == pytest.approx(expected, abs=1e-15)


def test_soft_zero_threshold_is_identity(rng):
    x = rng.normal(size=20)
    np.testing.assert_array_equal(soft_threshold(x, 0.0), x)


def test_hard_cases():
    tau = l0_weight_to_threshold(0.1)
    assert tau == pytest.approx(np.sqrt(0.2))
    assert hard_threshold(0.5, tau) == 0.5
    assert hard_threshold(0.4, tau) == 0.0
    assert hard_threshold(-tau, tau) == 0.0   # ties go to zero


def test_hard_zero_threshold_keeps_nonzero():
    x = np.array([0.0, 1e-300, -2.0])
    np.testing.assert_array_equal(hard_threshold(x, 0.0), x)


def test_negative_threshold_rejected():
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)
    with pytest.raises(ValueError):
        hard_threshold(1.0, -0.1)


@pytest.mark.parametrize("lam", [0.01, 0.1, 1.0])
def test_soft_matches_grid_search(lam):
    x = np.random.default_rng(11).uniform(-3, 3, 1000)
    assert np.max(np.abs(soft_threshold(x, lam) - brute_force_prox(x, lam, "l1"))) <= 1e-4


@pytest.mark.parametrize("lam", [0.01, 0.1, 1.0])
def test_hard_matches_grid_search(lam):
    x = np.random.default_rng(12).uniform(-3, 3, 1000)
    hard = hard_threshold(x, l0_weight_to_threshold(lam))
    assert np.max(np.abs(hard - brute_force_prox(x, lam, "l0"))) <= 1e-4


def test_quantile_interpolation_example():
    assert quantile_abs([0.1, -0.2, 0.3, -0.4], 0.7) == pytest.approx(0.31, abs=1e-15)


def test_quantile_endpoints_and_constant(rng):
    d = rng.normal(size=30)
    assert quantile_abs(d, 0.0) == np.abs(d).min()
    assert quantile_abs(d, 1.0) == np.abs(d).max()
    for q in (0.0, 0.3, 0.7, 1.0):
        assert quantile_abs(np.full(9, -2.5), q) == 2.5
    with pytest.raises(ValueError):
        quantile_abs(d, 1.1)
    with pytest.raises(ValueError):
        quantile_abs([], 0.5)


def test_quantile_one_zeroes_everything(rng):
    d = rng.normal(size=50)
    out, mask, lam = prox_apply(d, ThresholdSpec.quantile(1.0, "l0"))
    assert lam == np.abs(d).max()
    assert not out.any() and mask.all()


def test_fixed_zero_is_identity_except_zeros():
    d = np.array([0.0, 0.3, -1.2, 0.0, 4.0])
    out, mask, lam = prox_apply(d, ThresholdSpec.fixed(0.0, "l0"))
    assert lam == 0.0
    np.testing.assert_array_equal(out, d)
    np.testing.assert_array_equal(mask, d == 0)


def test_clamp_fraction_at_q07(rng):
    for _ in range(20):
        d = rng.permutation(np.linspace(0.01, 2.56, 256)) * rng.choice([-1, 1], 256)
        out, _, _ = prox_apply(d, ThresholdSpec.quantile(0.7, "l0"))
        assert 0.69 <= np.mean(out == 0) <= 0.71


def test_identity_spec_passes_through(rng):
    d = rng.normal(size=10)
    out, mask, lam = prox_apply(d, ThresholdSpec.identity())
    np.testing.assert_array_equal(out, d)


@pytest.mark.parametrize("kwargs", [dict(mode="adaptive"), dict(penalty="l2"), dict(value=1.5),
                                    dict(mode="fixed", value=-1.0)])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        ThresholdSpec(**kwargs)


@settings(max_examples=200, deadline=None)
@given(x=fields, lam=thresholds)
def test_shrinkage_and_sign(x, lam):
    s, h = soft_threshold(x, lam), hard_threshold(x, lam)
    assert np.abs(s).max() <= max(np.abs(x).max() - lam, 0.0) + 1e-12
    for out in (s, h):
        assert np.all(np.abs(out) <= np.abs(x))
        nz = out != 0
        assert np.all(np.sign(out[nz]) == np.sign(x[nz]))


@settings(max_examples=200, deadline=None)
@given(x=fields, lam1=thresholds, lam2=thresholds)
def test_monotone_in_threshold(x, lam1, lam2):
    lo, hi = sorted((lam1, lam2))
    for op in (soft_threshold, hard_threshold):
        assert np.all(np.abs(op(x, hi)) <= np.abs(op(x, lo)))


@settings(max_examples=200, deadline=None)
@given(x=fields, lam=thresholds)
def test_odd_symmetry(x, lam):
    for op in (soft_threshold, hard_threshold):
        np.testing.assert_array_equal(op(-x, lam), -op(x, lam))


@settings(max_examples=200, deadline=None)
@given(d=fields, q=st.floats(0, 1))
def test_mask_zero_consistency(d, q):
    out, mask, lam = prox_apply(d, ThresholdSpec.quantile(q, "l0"))
    off_tie = np.abs(d) != lam
    np.testing.assert_array_equal((out == 0)[off_tie], mask[off_tie])


@settings(max_examples=200, deadline=None)
@given(d=fields, q=st.floats(0, 1))
def test_soft_never_exceeds_hard_at_matched_threshold(d, q):
    soft, _, lam_s = prox_apply(d, ThresholdSpec.quantile(q, "l1"))
    hard, _, lam_h = prox_apply(d, ThresholdSpec.quantile(q, "l0"))
    assert lam_s == lam_h
    assert np.all(np.abs(soft) <= np.abs(hard))


@settings(max_examples=100, deadline=None)
@given(d=fields, q1=st.floats(0, 1), q2=st.floats(0, 1))
def test_prox_norm_nonincreasing_in_quantile(d, q1, q2):
    assume(q1 != q2)
    lo, hi = sorted((q1, q2))
    for pen in ("l0", "l1"):
        a = prox_apply(d, ThresholdSpec.quantile(lo, pen))[0]
        b = prox_apply(d, ThresholdSpec.quantile(hi, pen))[0]
        assert np.linalg.norm(b) <= np.linalg.norm(a)
