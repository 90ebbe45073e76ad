import json
import warnings

import numpy as np
import pytest

from gaussqui import formulas as F
from gaussqui.gauss_core import (
    GaussianStateParams,
    build_covariance,
    qui_from_covariance,
    random_physical_params,
    random_symmetric_params,
)
from gaussqui.model import TwbModelParams, reduced_model_moments
from gaussqui.moments import IntensityMoments, moments_from_params


def mom(params, order=None):
    return moments_from_params(params, order or 2 * params.n_beams)


def test_delta11_examples():
    vac = IntensityMoments(1, {(1,): 0.0, (2,): 0.0})
    assert F.delta11_from_moments(vac) == 1.0
    thermal = IntensityMoments(1, {(1,): 0.5, (2,): 0.5})
    assert F.delta11_from_moments(thermal) == pytest.approx(4.0)
    squeezed = IntensityMoments(1, {(1,): 1.0, (2,): 2.25})
    assert F.delta11_from_moments(squeezed) == pytest.approx(8.0)


def test_delta11_linear_sign_is_positive():
    # pins the corrected linear coefficient: <W> alone shifts Delta by +4<W>
    table = F.TABLES[(1, 1)].as_dict()
    assert table[((1,),)] == 4
    assert any(c.group == "delta11" and c.used == "4" for c in F.CORRECTIONS)


def test_delta21_examples():
    r = F.delta21_from_moments(mom(GaussianStateParams.vacuum(2)))
    assert r.measurable_part == pytest.approx(2.0)
    assert (r.residue_lower, r.residue_upper) == (0.0, 0.0)
    pair = GaussianStateParams.from_dict(2, d={"12": 0.3})
    assert F.delta21_from_moments(mom(pair)).residue_upper == pytest.approx(0.72)


def test_three_beam_vacuum():
    m = mom(GaussianStateParams.vacuum(3))
    assert F.delta31_from_moments(m).measurable_part == pytest.approx(3.0)
    r32 = F.delta32_from_moments(m)
    assert r32.measurable_part == pytest.approx(3.0)
    assert r32.residue_lower == pytest.approx(0.0) and r32.residue_upper == pytest.approx(0.0)
    assert F.delta33_from_moments(m) == pytest.approx(1.0)


def test_product_of_thermals():
    p = GaussianStateParams.from_dict(3, b=[0.5, 0.5, 0.5])
    assert F.delta33_from_moments(mom(p)) == pytest.approx(64.0)
    assert qui_from_covariance(build_covariance(p), 3) == pytest.approx(64.0)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_measurable_minus_residue_equals_minors(rng, n):
    p = random_physical_params(n, rng, size=500)
    cm = build_covariance(p)
    m = mom(p)
    for k in range(1, n + 1):
        value = F.evaluate_measurable(m, k) - F.residue_from_params(p, k)
        ref = qui_from_covariance(cm, k)
        tol = 1e-8 if 2 * k > 4 else 1e-9
        assert np.max(np.abs(value - ref) / np.abs(ref)) < tol


def test_residue_sandwich_random_states(rng):
    for n in (2, 3):
        p = random_physical_params(n, rng, size=500)
        m = mom(p)
        results = F.all_from_moments(m)[:-1]
        for k, r in enumerate(results, start=1):
            true = F.residue_from_params(p, k)
            assert np.all(r.residue_lower <= true + 1e-9)
            assert np.all(true <= r.residue_upper + 1e-9)
            assert np.all(r.residue_lower <= r.residue_upper)


def test_symmetric_bounds_contain_true_residue(rng):
    p = random_symmetric_params(rng, size=500)
    m = mom(p)
    lo, hi = F.residue_bounds_symmetric(m)
    true = F.residue_from_params(p, 2)
    assert np.all(lo <= true + 1e-9) and np.all(true <= hi + 1e-9)


def test_symmetric_residue_form_matches_general(rng):
    p = random_symmetric_params(rng, size=300)
    assert np.allclose(F.residue_32_symmetric(p), F.residue_32(p), rtol=1e-9, atol=1e-12)


def test_symmetric_three_beam_residue_is_three_pairs(rng):
    p = random_symmetric_params(rng, size=100)
    assert np.allclose(F.residue_31(p), 3 * F.residue_21(p), rtol=1e-12)


def test_zero_dbar_residue_hits_upper_bound(rng):
    for _ in range(50):
        d = rng.uniform(0, 0.4) * np.exp(1j * rng.uniform(0, 2 * np.pi))
        b = abs(d) + rng.uniform(0, 1)  # keeps the pair physical
        p = GaussianStateParams.from_dict(2, b=[b, b], d={"12": d})
        r = F.delta21_from_moments(mom(p))
        assert F.residue_21(p) == pytest.approx(r.residue_upper, rel=1e-12)


def test_exact_flags_and_json():
    m = mom(GaussianStateParams.from_dict(3, b=[0.2, 0.1, 0.3]))
    results = F.all_from_moments(m)
    assert [r.exact for r in results] == [False, False, True]
    doc = json.loads(results[-1].to_json())
    assert {"N", "k", "value", "residue_lower", "residue_upper", "exact", "convention_notes"} <= set(doc)
    doc = results[0].to_json_dict()
    assert "measurable_part" in doc and "value" not in doc


def test_missing_moments_raise():
    m = IntensityMoments(3, {(1, 0, 0): 0.1, (0, 1, 0): 0.1, (0, 0, 1): 0.1})
    with pytest.raises(KeyError):
        F.delta33_from_moments(m)


def test_asymmetric_moments_in_strict_mode(rng):
    m = mom(random_physical_params(3, rng))
    with pytest.raises(ValueError):
        F.residue_bounds_symmetric(m, strict=True)
    with pytest.warns(RuntimeWarning):
        F.residue_bounds_symmetric(m)


def test_tables_use_a_generic_symmetrizer():
    # the Delta^3_2 table is invariant under every relabeling of the beams
    from itertools import permutations

    from gaussqui.terms import TermTable, relabel_factor

    t = F.TABLES[(3, 2)]
    for perm in permutations(range(3)):
        moved = TermTable.from_pairs(3, [(c, [relabel_factor(f, perm) for f in p]) for c, p in t.terms])
        assert moved.as_dict() == t.as_dict()


def test_model_sweep_invariants_nondecreasing():
    params = TwbModelParams()
    vals = []
    for w_n in range(0, 60, 6):
        m = reduced_model_moments(params, 2, w_n, 6.7)
        vals.append((F.delta11_from_moments(m), F.delta22_from_moments(m), F.delta33_from_moments(m)))
    vals = np.array(vals)
    assert np.all(np.diff(vals, axis=0) >= 0)


def test_symmetric_bounds_ordered_on_model_sweep():
    params = TwbModelParams()
    bad = []
    for w_n in range(0, 60, 2):
        m = reduced_model_moments(params, 2, w_n, 6.7)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            lo, hi = F.residue_bounds_symmetric(m)
        if lo > hi:
            bad.append(w_n)
    assert bad == []
