import json

import numpy as np
import pytest

from gaussqui.gauss_core import (
    CovarianceMatrix,
    GaussianStateParams,
    build_covariance,
    elementary_symmetric,
    is_physical,
    params_from_covariance,
    partial_transpose,
    purities,
    qui_from_covariance,
    random_local_symplectic,
    random_physical_covariance,
    random_physical_params,
    symplectic_eigenvalues,
    symplectic_eigenvalues_from_quis,
    symplectic_form,
)


def one_beam(b, c=0.0):
    return GaussianStateParams(1, [b], [c], [], [])


def test_vacuum_is_identity():
    assert np.array_equal(build_covariance(GaussianStateParams.vacuum(1)).entries, np.eye(2))
    assert np.array_equal(build_covariance(GaussianStateParams.vacuum(3)).entries, np.eye(6))


def test_thermal_single_beam():
    assert np.allclose(build_covariance(one_beam(0.5)).entries, np.diag([2.0, 2.0]))


def test_pair_block_of_pure_pairing():
    p = GaussianStateParams.from_dict(2, d={"12": 0.3})
    eps = build_covariance(p).block(0, 1)
    assert np.allclose(eps, [[0.6, 0.0], [0.0, -0.6]])


def test_covariance_is_symmetric(rng):
    p = random_physical_params(3, rng, size=50)
    a = build_covariance(p).entries
    assert np.array_equal(a, np.swapaxes(a, -1, -2))


def test_params_round_trip(rng):
    cm = random_physical_covariance(3, rng, size=20)
    back = build_covariance(params_from_covariance(cm))
    assert np.allclose(back.entries, cm.entries, atol=1e-13)


def test_swapped_pair_access():
    p = GaussianStateParams.from_dict(3, d={"13": 0.2 + 0.1j}, d_bar={"13": 0.05 - 0.3j})
    assert p.d_pair(2, 0) == p.d_pair(0, 2)
    assert p.dbar_pair(2, 0) == np.conj(p.dbar_pair(0, 2))


def test_rejects_bad_params():
    with pytest.raises(ValueError):
        GaussianStateParams(0, [], [], [], [])
    with pytest.raises(ValueError):
        one_beam(-0.1)
    with pytest.raises(KeyError):
        GaussianStateParams.from_dict(2, d={"21": 0.1})


def test_json_round_trip():
    p = GaussianStateParams.from_dict(3, b=[0.1, 0.2, 0.3], c=[0.05j, 0, 0], d={"12": 0.1 + 0.02j},
                                      d_bar={"23": -0.03})
    doc = json.loads(p.to_json())
    assert set(doc) == {"n_beams", "B", "C", "D", "Dbar"}
    assert set(doc["D"]) == {"12", "13", "23"}
    q = GaussianStateParams.from_json(p.to_json())
    assert np.allclose(build_covariance(q).entries, build_covariance(p).entries)


@pytest.mark.parametrize("b, c, expected", [(0.0, 0.0, 1.0), (0.5, 0.0, 4.0), (1.0, 0.5, 8.0)])
def test_single_beam_qui(b, c, expected):
    assert qui_from_covariance(build_covariance(one_beam(b, c)), 1) == pytest.approx(expected, abs=1e-12)


def test_qui_index_range():
    cm = build_covariance(GaussianStateParams.vacuum(2))
    for k in (0, 3):
        with pytest.raises(ValueError):
            qui_from_covariance(cm, k)


def test_top_qui_is_determinant(rng):
    cm = random_physical_covariance(3, rng, size=200)
    assert np.allclose(qui_from_covariance(cm, 3), np.linalg.det(cm.entries), rtol=1e-9)


def test_symplectic_eigenvalues_examples():
    assert np.allclose(symplectic_eigenvalues(build_covariance(GaussianStateParams.vacuum(3))).eigenvalues, 1.0)
    assert np.allclose(symplectic_eigenvalues(build_covariance(one_beam(0.5))).eigenvalues, [2.0])


def test_eigenvalue_and_polynomial_routes_agree(rng):
    for _ in range(200):
        cm = random_physical_covariance(3, rng)
        nu = symplectic_eigenvalues(cm).eigenvalues
        deltas = [qui_from_covariance(cm, k) for k in (1, 2, 3)]
        e = elementary_symmetric(nu ** 2)
        assert np.allclose(e, deltas, rtol=1e-9)
        assert np.allclose(symplectic_eigenvalues_from_quis(deltas), nu, rtol=1e-7)
        assert np.all(np.diff(nu) <= 0)


def test_malformed_matrix_is_rejected():
    bad = np.eye(2)
    bad[0, 1] = 3.0  # not symmetric: i Omega A has complex eigenvalues
    with pytest.raises(ValueError):
        symplectic_eigenvalues(CovarianceMatrix(bad))


def test_is_physical_examples():
    assert is_physical(np.eye(2))
    assert not is_physical(np.diag([0.5, 0.5]))
    assert is_physical(random_physical_covariance(3, np.random.default_rng(1)))


def test_two_beam_invariant_inequality(rng):
    cm = random_physical_covariance(2, rng, size=1000)
    assert np.all(qui_from_covariance(cm, 2) - qui_from_covariance(cm, 1) + 1 >= -1e-9)


def test_local_symplectic_invariance(rng):
    for n in (1, 2, 3):
        cm = random_physical_covariance(n, rng)
        a = cm.entries
        for beam in range(n):
            s = random_local_symplectic(n, beam, rng)
            omega = symplectic_form(n)
            assert np.allclose(s @ omega @ s.T, omega, atol=1e-12)
            b = s @ a @ s.T
            for k in range(1, n + 1):
                assert qui_from_covariance(b, k) == pytest.approx(qui_from_covariance(a, k), rel=1e-9)


def test_partial_transpose_involution_and_vacuum(rng):
    vac = np.eye(6)
    assert np.array_equal(partial_transpose(vac, 0).entries, vac)
    cm = random_physical_covariance(3, rng)
    for beam in range(3):
        assert np.array_equal(partial_transpose(partial_transpose(cm, beam), beam).entries, cm.entries)
    with pytest.raises(ValueError):
        partial_transpose(cm, 3)


def test_partial_transpose_keeps_top_invariant(rng):
    cm = random_physical_covariance(3, rng, size=100)
    pt = partial_transpose(cm, 0)
    assert np.allclose(qui_from_covariance(pt, 3), qui_from_covariance(cm, 3), rtol=1e-12)


def test_purity_conventions():
    cm = build_covariance(one_beam(0.5))
    pur = purities(cm)
    assert pur["standard"] == pytest.approx(0.5)
    assert pur["inverse_square"] == pytest.approx(1 / 16)
    pure = build_covariance(GaussianStateParams.vacuum(2))
    assert purities(pure)["standard"] == pytest.approx(1.0)
