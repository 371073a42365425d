import numpy as np
import pytest

from proxguide.ddim import invert_trajectory, reconstruct
from proxguide.masactrl import BranchConfig, interp_condition, npi_with_masactrl_edit, proxmasactrl_edit
from proxguide.models import Condition, InjectionMode
from proxguide.prox import ThresholdSpec
from proxguide.proxnpi import GuidanceConfig, proxnpi_edit
from proxguide.schedule import subsample

Q70 = ThresholdSpec.quantile(0.7, "l0")


@pytest.fixture(scope="module")
def setup(attention_scenario):
    sc = attention_scenario
    schedule = subsample(sc.base_schedule, 20)
    inv = invert_trajectory(sc.z0, sc.c_src, sc.predictor, schedule)
    return sc, schedule, inv


def run(setup, c_tar=None, w=7.5, threshold=Q70, **branch):
    sc, schedule, inv = setup
    return proxmasactrl_edit(sc.z0, sc.c_src, sc.c_tar if c_tar is None else c_tar, w, BranchConfig(**branch),
                             threshold, sc.predictor, schedule, c_null=sc.c_null, inversion=inv)


def gap(a, b):
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a.latents, b.latents))


def test_interp_condition_examples(rng):
    c_src = Condition(rng.normal(size=3), rng.normal(size=4))
    c_null = Condition.null(3, 4)
    assert interp_condition(1.0, c_src, c_null) == c_null
    assert interp_condition(0.0, c_src, c_null) == c_src
    half = interp_condition(0.5, c_src, c_null)
    np.testing.assert_allclose(half.vector(), c_src.vector() / 2)
    with pytest.raises(ValueError):
        interp_condition(1.5, c_src, c_null)
    with pytest.raises(ValueError):
        interp_condition(0.5, c_src, Condition.null(2, 4))


@pytest.mark.parametrize("kwargs", [dict(alpha=-0.1), dict(injection_uncond="both"), dict(inject_start_step=-1),
                                    dict(capture_condition="tar")])
def test_branch_config_validation(kwargs):
    with pytest.raises(ValueError):
        BranchConfig(**kwargs)


def test_branch_config_parses_modes():
    cfg = BranchConfig(injection_uncond="joint", injection_cond="none")
    assert cfg.injection_uncond is InjectionMode.JOINT and cfg.injection_cond is InjectionMode.NONE


def test_quantile_one_collapses_to_null_prediction(setup):
    sc, schedule, _ = setup
    for alpha in (0.0, 0.5, 1.0):
        rec, syn = run(setup, threshold=ThresholdSpec.quantile(1.0), alpha=alpha)
        c_u = interp_condition(alpha, sc.c_src, sc.c_null)
        for i, (t, _) in enumerate(schedule.transitions()):
            _, feats = sc.predictor.forward(rec.latents[i], t, sc.c_src)
            eps_u, _ = sc.predictor.forward(syn.latents[i], t, c_u, "source", feats)
            assert np.max(np.abs(syn.eps[i] - eps_u)) <= 1e-12
        assert all(d["uncond_gap"] == 0.0 for d in syn.diagnostics)


def test_alpha0_no_injection_is_proxnpi(setup):
    sc, schedule, inv = setup
    _, syn = run(setup, alpha=0.0, injection_uncond="none", injection_cond="none")
    ref = proxnpi_edit(sc.z0, sc.c_src, sc.c_tar, GuidanceConfig(w=7.5, threshold=Q70), sc.predictor,
                       schedule, inversion=inv)
    assert gap(syn, ref) <= 1e-12


def test_same_condition_source_injection_is_reconstruction(setup):
    sc, _, _ = setup
    rec, syn = run(setup, c_tar=sc.c_src, alpha=0.0)
    assert gap(syn, rec) <= 1e-12
    assert syn.diagnostics[-1]["divergence"] <= 1e-12


def test_reconstruction_branch_isolated(setup):
    sc, schedule, inv = setup
    plain = reconstruct(inv.terminal, sc.c_src, sc.predictor, schedule)
    variants = [dict(), dict(alpha=0.0, injection_uncond="joint"), dict(injection_cond="none"),
                dict(capture_condition="null"), dict(inject_start_step=5)]
    for kw in variants:
        rec, _ = run(setup, **kw)
        for a, b in zip(rec.latents, plain.latents):
            np.testing.assert_array_equal(a, b)


def test_deterministic(setup):
    a_rec, a_syn = run(setup)
    b_rec, b_syn = run(setup)
    for x, y in zip(a_syn.latents + a_rec.latents, b_syn.latents + b_rec.latents):
        np.testing.assert_array_equal(x, y)


def test_injection_modes_differ(setup):
    _, src = run(setup, injection_uncond="source")
    _, none = run(setup, injection_uncond="none")
    _, joint = run(setup, injection_uncond="joint")
    assert gap(src, none) > 1e-6 and gap(src, joint) > 1e-6
    assert src.diagnostics[-1]["divergence"] > 0 and none.diagnostics[-1]["divergence"] > 0


def test_late_injection_start(setup):
    _, late = run(setup, inject_start_step=100)
    _, none = run(setup, injection_uncond="none", injection_cond="none")
    assert gap(late, none) == 0.0
    _, mid = run(setup, inject_start_step=10)
    _, early = run(setup)
    assert gap(mid, early) > 0.0


def test_null_capture_pass_changes_synthesis(setup):
    _, a = run(setup, capture_condition="src")
    _, b = run(setup, capture_condition="null")
    assert gap(a, b) > 0.0


def test_npi_variant_same_condition_is_reconstruction(setup):
    sc, schedule, inv = setup
    rec, syn = npi_with_masactrl_edit(sc.z0, sc.c_src, sc.c_src, 7.5, BranchConfig(), sc.predictor, schedule,
                                      c_null=sc.c_null, inversion=inv)
    assert gap(syn, rec) <= 1e-12


def test_variants_coincide_at_w1_without_thresholding(setup):
    sc, schedule, inv = setup
    _, prox = run(setup, w=1.0, threshold=ThresholdSpec.identity(), alpha=1.0)
    _, npi = npi_with_masactrl_edit(sc.z0, sc.c_src, sc.c_tar, 1.0, BranchConfig(), sc.predictor, schedule,
                                    c_null=sc.c_null, inversion=inv)
    assert gap(prox, npi) <= 1e-12


def test_variant_divergence_is_reported(setup):
    sc, schedule, inv = setup
    _, prox = run(setup)
    _, npi = npi_with_masactrl_edit(sc.z0, sc.c_src, sc.c_tar, 7.5, BranchConfig(), sc.predictor, schedule,
                                    c_null=sc.c_null, inversion=inv)
    per_step = [np.linalg.norm(a - b) for a, b in zip(prox.latents, npi.latents)]
    assert per_step[0] == 0.0 and np.all(np.isfinite(per_step)) and per_step[-1] > 0
