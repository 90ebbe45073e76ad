from fractions import Fraction

import numpy as np
import pytest

from gaussqui import formulas as F
from gaussqui.derive import (
    check_against_builtin,
    derive,
    emit_term_table,
    evaluate_residue,
    expand_moment_symbolic,
    expand_qui_symbolic,
    residue_from_document,
    table_from_document,
)
from gaussqui.gauss_core import build_covariance, qui_from_covariance, random_physical_params
from gaussqui.moments import moments_from_params
from gaussqui.polynomial import numeric_values


def test_expand_qui_single_beam():
    assert str(expand_qui_symbolic(1, 1)) == "1 + 4*B1 + 4*B1^2 + -4*ReC1^2 + -4*ImC1^2"


def test_expand_qui_vacuum_is_one():
    from gaussqui.gauss_core import GaussianStateParams

    poly = expand_qui_symbolic(2, 2)
    assert poly.evaluate(numeric_values(poly.symbols, GaussianStateParams.vacuum(2))) == 1


def test_expand_qui_numeric(rng):
    p = random_physical_params(3, rng, size=50)
    for k in (1, 2, 3):
        poly = expand_qui_symbolic(3, k)
        val = np.real(poly.evaluate(numeric_values(poly.symbols, p)))
        assert np.allclose(val, qui_from_covariance(build_covariance(p), k), rtol=1e-10)


def test_expand_moment_examples(rng):
    assert str(expand_moment_symbolic((1,))) == "B1"
    assert str(expand_moment_symbolic((2,))) == "2*B1^2 + ReC1^2 + ImC1^2"
    p = random_physical_params(3, rng, size=20)
    poly = expand_moment_symbolic((1, 1, 1))
    val = np.real(poly.evaluate(numeric_values(poly.symbols, p)))
    assert np.allclose(val, moments_from_params(p, 3)[(1, 1, 1)], rtol=1e-12)


def test_derive_single_beam_coefficients():
    r = derive(1, 1)
    assert r.solvable
    assert r.coefficients == {(): 1, ((1,),): 4, ((1,), (1,)): 12, ((2,),): -4}


def test_derive_pair_residue_support():
    r = derive(2, 1)
    assert not r.solvable
    assert str(r.residue_real()) == "8*ReD12^2 + 8*ImD12^2 + -8*ReDbar12^2 + -8*ImDbar12^2"


@pytest.mark.parametrize("nk", [(1, 1), (2, 2), (3, 3)])
def test_top_invariants_are_solvable(nk):
    r = derive(*nk)
    assert r.solvable and r.check_identity()


@pytest.mark.parametrize("nk", [(2, 1), (3, 1), (3, 2)])
def test_combination_plus_residue_matches_minors(rng, nk):
    n, k = nk
    r = derive(n, k)
    p = random_physical_params(n, rng, size=1000)
    m = moments_from_params(p, 2 * k)
    value = r.table.evaluate(m.mapping()) - evaluate_residue(r, p)
    ref = qui_from_covariance(build_covariance(p), k)
    assert np.max(np.abs(value - ref) / np.abs(ref)) < 1e-10


def test_derived_top_table_matches_hand_table(rng):
    r = derive(3, 3)
    p = random_physical_params(3, rng, size=100)
    m = moments_from_params(p, 6).mapping()
    assert np.allclose(r.table.evaluate(m), F.TABLES[(3, 3)].evaluate(m), rtol=1e-8)


def test_builtin_comparison_reports_both_outcomes():
    same = check_against_builtin(derive(3, 1))
    assert same["coefficients_identical"] and same["value_equivalent"]
    diff = check_against_builtin(derive(3, 2))
    assert not diff["coefficients_identical"]
    assert diff["value_equivalent"] and diff["derived_identity_exact"]


def test_term_table_document_round_trip():
    r = derive(3, 2)
    doc = emit_term_table(r)
    assert doc["measurable"] and doc["residue"]
    assert table_from_document(doc).as_dict() == r.coefficients
    assert residue_from_document(doc) == r.residue_real()
    assert len(emit_term_table(derive(1, 1))["measurable"]) == 4
    assert all(isinstance(Fraction(*row["coefficient"]), Fraction) for row in doc["measurable"])


def test_derivation_is_reproducible():
    a = emit_term_table(derive(3, 2))
    b = emit_term_table(derive(3, 2))
    assert a == b and a["provenance_sha256"] == b["provenance_sha256"]


def test_size_guard():
    with pytest.raises(ValueError):
        derive(4, 1)
