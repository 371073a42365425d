import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proxguide.schedule import NoiseSchedule, _cumulative_alpha, linear_beta_schedule, subsample


def test_single_step_product():
    np.testing.assert_array_equal(_cumulative_alpha([0.5]), [1.0, 0.5])


def test_constant_beta_t2():
    s = linear_beta_schedule(2, 0.1, 0.1)
    np.testing.assert_allclose(s.alpha_bar, [1.0, 0.9, 0.81], rtol=0, atol=1e-15)


def test_default_terminal_alpha():
    # frozen from an independent log-sum product over the 1000 linear betas
    s = linear_beta_schedule(1000, 1e-4, 0.02)
    assert s.alpha(1000) == pytest.approx(4.036e-5, rel=5e-4)
    assert s.alpha(0) == 1.0
    assert 0.999 < s.alpha(1) <= 1.0


def test_default_schedule_endpoints(base_schedule):
    assert base_schedule.T == 1000
    assert base_schedule.num_steps == 1000
    assert 0 < base_schedule.alpha_bar[-1] < 0.1


@pytest.mark.parametrize("args", [(1, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.02, 0.01), (10, 0.1, 1.0),
                                  (10, -0.1, 0.5), (2.5, 0.1, 0.2)])
def test_linear_schedule_rejects(args):
    with pytest.raises(ValueError):
        linear_beta_schedule(*args)


def test_subsample_full_resolution_is_identity(base_schedule):
    s = subsample(base_schedule, 1000)
    np.testing.assert_array_equal(s.alpha_bar, base_schedule.alpha_bar)
    np.testing.assert_array_equal(s.timesteps, base_schedule.timesteps)


def test_subsample_stride_two():
    s = NoiseSchedule([1.0, 0.8, 0.6, 0.4, 0.2], np.arange(5))
    sub = subsample(s, 2)
    np.testing.assert_array_equal(sub.alpha_bar, [1.0, 0.6, 0.2])
    np.testing.assert_array_equal(sub.timesteps, [0, 2, 4])


def test_subsample_50(base_schedule):
    s = subsample(base_schedule, 50)
    assert len(s) == 51
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert s.alpha(0) == base_schedule.alpha(0)
    assert s.T == 1000
    # labels are original timesteps
    assert s.alpha(980) == base_schedule.alpha(980)


@pytest.mark.parametrize("n", [1, 0, 1001])
def test_subsample_rejects(base_schedule, n):
    with pytest.raises(ValueError):
        subsample(base_schedule, n)


def test_alpha_unknown_label(schedule50):
    with pytest.raises(ValueError):
        schedule50.alpha(7)
    assert 980 in schedule50 and 7 not in schedule50


def test_transitions_order(schedule50):
    pairs = schedule50.transitions()
    assert pairs[0] == (1000, 980)
    assert pairs[-1] == (20, 0)
    assert len(pairs) == 50


@pytest.mark.parametrize("ab, ts", [([1.0, 1.0], [0, 1]), ([1.0, 0.5], [1, 2]), ([1.2, 0.5], [0, 1]),
                                    ([1.0, 0.0], [0, 1]), ([1.0, np.nan], [0, 1]), ([1.0], [0])])
def test_schedule_validation(ab, ts):
    with pytest.raises(ValueError):
        NoiseSchedule(ab, ts)


@settings(max_examples=50, deadline=None)
@given(T=st.integers(2, 400), b0=st.floats(1e-5, 0.05), span=st.floats(0.0, 0.5),
       steps=st.integers(2, 400))
def test_schedule_properties(T, b0, span, steps):
    b1 = min(b0 + span, 0.9)
    s = linear_beta_schedule(T, b0, b1)
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all((s.alpha_bar > 0) & (s.alpha_bar <= 1))
    sub = subsample(s, min(steps, T))
    assert np.all(np.diff(sub.alpha_bar) < 0)
    assert sub.alpha_bar[0] == s.alpha_bar[0]
    assert sub.T == T
    again = subsample(sub, sub.num_steps)
    np.testing.assert_array_equal(again.alpha_bar, sub.alpha_bar)
