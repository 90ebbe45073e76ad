import numpy as np
import pytest

from gaussqui.entanglement import (
    classify,
    noise_sweep_report,
    ppt_from_moments,
    ppt_oracle,
    sweep_point,
    thresholds,
    transposed_relations,
    verdict_sequence_is_monotone,
)
from gaussqui.gauss_core import (
    GaussianStateParams,
    build_covariance,
    is_physical,
    partial_transpose,
    qui_from_covariance,
    random_symmetric_params,
)
from gaussqui.model import SweepConfig, TwbModelParams
from gaussqui.moments import moments_from_params

M = 6.7
DEFAULT_PARAMS = TwbModelParams()


def pairing_state(b, d):
    return GaussianStateParams.from_dict(3, b=[b] * 3, d={"12": d, "13": d, "23": d})


def test_classification_rule():
    assert classify(-1.0, 0.0, 1.0) == "entangled"
    assert classify(2.0, 0.0, 1.0) == "separable_necessary_condition_met"
    assert classify(0.5, 0.0, 1.0) == "undecided"
    assert classify(1.0, 0.0, 1.0) == "undecided"


def test_independent_thermal_beams_are_separable():
    p = GaussianStateParams.from_dict(3, b=[0.7] * 3)
    v = ppt_from_moments(moments_from_params(p, 6))
    assert v.verdict == "separable_necessary_condition_met"


def test_model_endpoints():
    assert sweep_point(DEFAULT_PARAMS, 2, 0, M).verdict == "entangled"
    assert sweep_point(DEFAULT_PARAMS, 2, 58, M).verdict == "separable_necessary_condition_met"


def test_vacuum_oracle():
    r = ppt_oracle(build_covariance(GaussianStateParams.vacuum(3)))
    assert not r.npt and r.min_symplectic_eigenvalue == pytest.approx(1.0)


def test_pairing_state_is_npt():
    cm = build_covariance(pairing_state(1.0, 0.7))
    assert is_physical(cm)
    assert ppt_oracle(cm).npt
    # the moments route agrees on the same state
    assert ppt_from_moments(moments_from_params(pairing_state(1.0, 0.7), 6)).verdict == "entangled"


def test_noise_free_pairing_model_point_is_npt():
    pt = sweep_point(TwbModelParams(b_s=0.0, b_i=0.0), 2, 0, M)
    assert pt.npt_oracle and pt.verdict == "entangled"


def test_transposed_relations_on_random_symmetric_states(rng):
    p = random_symmetric_params(rng, size=1000)
    cm = build_covariance(p)
    pt = partial_transpose(cm, 0)
    pred = transposed_relations(p)
    for k in range(3):
        tilde = qui_from_covariance(pt, k + 1)
        assert np.max(np.abs(pred[k] - tilde) / np.maximum(1.0, np.abs(tilde))) < 1e-9


def test_oracle_reports_relation_error(rng):
    p = random_symmetric_params(rng, size=20)
    for i in range(20):
        assert ppt_oracle(build_covariance(p.sample(i))).relations_hold


def test_moments_route_is_sound_on_random_symmetric_states(rng):
    p = random_symmetric_params(rng, size=1000)
    m = moments_from_params(p, 6)
    entangled = 0
    for i in range(1000):
        v = ppt_from_moments(m.sample(i))
        npt = ppt_oracle(build_covariance(p.sample(i))).npt
        if v.verdict == "entangled":
            entangled += 1
            assert npt
    assert entangled > 0


def test_uncorrected_form_option():
    pt = moments_from_params(pairing_state(1.0, 0.7), 6)
    exact = ppt_from_moments(pt)
    uncorrected = ppt_from_moments(pt, form="uncorrected")
    assert uncorrected.form == "uncorrected" and exact.form == "exact"
    assert uncorrected.lhs != exact.lhs
    with pytest.raises(ValueError):
        ppt_from_moments(pt, form="other")


def test_sweep_is_sound_and_monotone():
    pts = noise_sweep_report(SweepConfig(), M)
    assert verdict_sequence_is_monotone(pts)
    for p in pts:
        if p.verdict == "entangled":
            assert p.npt_oracle
    verdicts = [p.verdict for p in pts]
    assert "undecided" in verdicts
    th = thresholds(pts)
    assert 0.5 < th["last_entangled"] < th["first_separable"] < 3.0


def test_moments_route_rejects_two_beams():
    p = GaussianStateParams.from_dict(2, b=[0.1, 0.1])
    with pytest.raises(ValueError):
        ppt_from_moments(moments_from_params(p, 6))
