"""N-beam Gaussian states: parameters, covariance matrices and symplectic invariants.

Conventions: quadratures ordered ``(x1, p1, x2, p2, ...)`` with
``x = a + a^dagger`` and ``p = -i (a - a^dagger)``, so the vacuum covariance
matrix is the identity and the Robertson-Schroedinger condition reads
``nu_j >= 1``.  The symplectic form is ``Omega = (+) [[0, 1], [-1, 0]]``.

Parameter arrays may carry a trailing sample axis; every function here
broadcasts over it, which is how the oracle sweeps evaluate 10^4 states at
once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np
from scipy.stats import unitary_group

from .polynomial import beam_pairs, pair_label

PHYSICAL_TOL_ANALYTIC = 1e-9
PHYSICAL_TOL_RECONSTRUCTED = 1e-6


def _pair_index(n_beams: int) -> dict[tuple[int, int], int]:
    return {p: i for i, p in enumerate(beam_pairs(n_beams))}


@dataclass(frozen=True)
class GaussianStateParams:
    """Normal-ordering parameters ``B_j, C_j, D_jk, Dbar_jk`` of a zero-mean field.

    ``d`` and ``d_bar`` are stored once per unordered pair in
    :func:`~gaussqui.polynomial.beam_pairs` order; use :meth:`d_pair` and
    :meth:`dbar_pair` for index-swapped access.
    """

    n_beams: int
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    d_bar: np.ndarray

    def __post_init__(self):
        if self.n_beams < 1:
            raise ValueError("n_beams must be >= 1")
        npairs = self.n_beams * (self.n_beams - 1) // 2
        b = np.asarray(self.b, dtype=float)
        c = np.asarray(self.c, dtype=complex)
        d = np.asarray(self.d, dtype=complex).reshape((npairs,) + b.shape[1:])
        db = np.asarray(self.d_bar, dtype=complex).reshape((npairs,) + b.shape[1:])
        if b.shape[0] != self.n_beams or c.shape != b.shape:
            raise ValueError("b and c need one entry per beam")
        if np.any(b < 0):
            raise ValueError("B_j must be non-negative")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "d_bar", db)

    @classmethod
    def vacuum(cls, n_beams: int) -> "GaussianStateParams":
        npairs = n_beams * (n_beams - 1) // 2
        return cls(n_beams, np.zeros(n_beams), np.zeros(n_beams), np.zeros(npairs), np.zeros(npairs))

    @classmethod
    def from_dict(cls, n_beams: int, b=None, c=None, d=None, d_bar=None) -> "GaussianStateParams":
        """Build from per-beam lists and ``{"12": value}`` pair mappings."""
        npairs = n_beams * (n_beams - 1) // 2
        idx = {pair_label(j, k): i for i, (j, k) in enumerate(beam_pairs(n_beams))}
        dd = np.zeros(npairs, dtype=complex)
        dbb = np.zeros(npairs, dtype=complex)
        for src, dst in ((d or {}, dd), (d_bar or {}, dbb)):
            for key, val in src.items():
                if key not in idx:
                    raise KeyError(f"pair key {key!r} must be one of {sorted(idx)} (j<k, 1-based)")
                dst[idx[key]] = val
        b = np.zeros(n_beams) if b is None else b
        c = np.zeros(n_beams) if c is None else c
        return cls(n_beams, b, c, dd, dbb)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.b.shape[1:]

    def d_pair(self, j: int, k: int):
        """``D_jk``; symmetric in its indices."""
        if j == k:
            raise ValueError("D is defined for distinct beams")
        return self.d[_pair_index(self.n_beams)[tuple(sorted((j, k)))]]

    def dbar_pair(self, j: int, k: int):
        """``Dbar_jk`` with ``Dbar_kj = conj(Dbar_jk)``."""
        if j == k:
            raise ValueError("Dbar is defined for distinct beams")
        v = self.d_bar[_pair_index(self.n_beams)[tuple(sorted((j, k)))]]
        return v if j < k else np.conj(v)

    def sample(self, i: int) -> "GaussianStateParams":
        """One state out of a batch."""
        return GaussianStateParams(self.n_beams, self.b[:, i], self.c[:, i], self.d[:, i], self.d_bar[:, i])

    def to_json_dict(self) -> dict:
        if self.batch_shape:
            raise ValueError("only single states serialize")
        pairs = [pair_label(j, k) for j, k in beam_pairs(self.n_beams)]
        return {
            "n_beams": self.n_beams,
            "B": [float(x) for x in self.b],
            "C": [[float(z.real), float(z.imag)] for z in self.c],
            "D": {p: [float(z.real), float(z.imag)] for p, z in zip(pairs, self.d)},
            "Dbar": {p: [float(z.real), float(z.imag)] for p, z in zip(pairs, self.d_bar)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GaussianStateParams":
        n = int(doc["n_beams"])
        cplx = lambda v: complex(v[0], v[1]) if isinstance(v, (list, tuple)) else complex(v)
        return cls.from_dict(
            n,
            b=[float(x) for x in doc.get("B", [0.0] * n)],
            c=[cplx(v) for v in doc.get("C", [[0, 0]] * n)],
            d={k: cplx(v) for k, v in doc.get("D", {}).items()},
            d_bar={k: cplx(v) for k, v in doc.get("Dbar", {}).items()},
        )

    @classmethod
    def from_json(cls, text: str) -> "GaussianStateParams":
        return cls.from_json_dict(json.loads(text))


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric-ordering covariance matrix; ``entries`` has shape ``(..., 2N, 2N)``."""

    entries: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim < 2 or a.shape[-1] != a.shape[-2] or a.shape[-1] % 2:
            raise ValueError("covariance matrix must be square with even size")
        object.__setattr__(self, "entries", a)

    @property
    def n_beams(self) -> int:
        return self.entries.shape[-1] // 2

    def block(self, j: int, k: int) -> np.ndarray:
        return self.entries[..., 2 * j:2 * j + 2, 2 * k:2 * k + 2]


@dataclass(frozen=True)
class SymplecticSpectrum:
    eigenvalues: np.ndarray  # (..., N), descending


def symplectic_form(n_beams: int) -> np.ndarray:
    return np.kron(np.eye(n_beams), np.array([[0.0, 1.0], [-1.0, 0.0]]))


def _entries(cm) -> np.ndarray:
    return cm.entries if isinstance(cm, CovarianceMatrix) else np.asarray(cm, dtype=float)


def build_covariance(params: GaussianStateParams) -> CovarianceMatrix:
    """Covariance matrix with the single-beam and pair blocks of the parameters."""
    n = params.n_beams
    shape = params.batch_shape + (2 * n, 2 * n)
    a = np.zeros(shape)
    for j in range(n):
        bj, cj = params.b[j], params.c[j]
        a[..., 2 * j, 2 * j] = 1 + 2 * bj + 2 * cj.real
        a[..., 2 * j + 1, 2 * j + 1] = 1 + 2 * bj - 2 * cj.real
        a[..., 2 * j, 2 * j + 1] = a[..., 2 * j + 1, 2 * j] = 2 * cj.imag
    for j, k in beam_pairs(n):
        dv, dbv = params.d_pair(j, k), params.dbar_pair(j, k)
        eps = np.empty(params.batch_shape + (2, 2))
        eps[..., 0, 0] = 2 * (dv - dbv).real
        eps[..., 0, 1] = 2 * (dv - dbv).imag
        eps[..., 1, 0] = 2 * (dv + dbv).imag
        eps[..., 1, 1] = -2 * (dv + dbv).real
        a[..., 2 * j:2 * j + 2, 2 * k:2 * k + 2] = eps
        a[..., 2 * k:2 * k + 2, 2 * j:2 * j + 2] = np.swapaxes(eps, -1, -2)
    return CovarianceMatrix(a)


def params_from_covariance(cm) -> GaussianStateParams:
    """Inverse of :func:`build_covariance` for any symmetric matrix of the right size."""
    a = _entries(cm)
    n = a.shape[-1] // 2
    a = np.moveaxis(np.moveaxis(a, -1, 0), -1, 0)  # (2N, 2N, ...)
    b = np.array([(a[2 * j, 2 * j] + a[2 * j + 1, 2 * j + 1]) / 4 - 0.5 for j in range(n)])
    c = np.array([
        (a[2 * j, 2 * j] - a[2 * j + 1, 2 * j + 1]) / 4 + 1j * a[2 * j, 2 * j + 1] / 2 for j in range(n)
    ])
    d, db = [], []
    for j, k in beam_pairs(n):
        e00, e01 = a[2 * j, 2 * k], a[2 * j, 2 * k + 1]
        e10, e11 = a[2 * j + 1, 2 * k], a[2 * j + 1, 2 * k + 1]
        d.append((e00 - e11) / 4 + 1j * (e01 + e10) / 4)
        db.append(-(e00 + e11) / 4 + 1j * (e10 - e01) / 4)
    npairs = len(d)
    shape = (npairs,) + b.shape[1:]
    return GaussianStateParams(
        n,
        np.maximum(b, 0.0) if np.all(b > -1e-12) else b,
        c,
        np.array(d).reshape(shape),
        np.array(db).reshape(shape),
    )


def principal_minor_sum(mat: np.ndarray, order: int) -> np.ndarray:
    """Sum of all ``order x order`` principal minors (broadcast over leading axes)."""
    size = mat.shape[-1]
    if not 0 <= order <= size:
        raise ValueError("minor order out of range")
    if order == 0:
        return np.ones(mat.shape[:-2])
    total = 0.0
    for rows in combinations(range(size), order):
        idx = np.array(rows)
        total = total + np.linalg.det(mat[..., idx[:, None], idx[None, :]])
    return total


def qui_from_covariance(cm, k: int) -> np.ndarray | float:
    """QUI ``Delta^N_k``: sum of the ``2k x 2k`` principal minors of ``Omega A``."""
    a = _entries(cm)
    n = a.shape[-1] // 2
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in 1..{n}")
    val = principal_minor_sum(symplectic_form(n) @ a, 2 * k)
    return float(val) if np.ndim(val) == 0 else val


def all_quis(cm) -> list:
    n = _entries(cm).shape[-1] // 2
    return [qui_from_covariance(cm, k) for k in range(1, n + 1)]


def elementary_symmetric(values: np.ndarray) -> list[np.ndarray]:
    """``e_1 .. e_N`` of the last axis."""
    n = values.shape[-1]
    coeffs = [np.ones(values.shape[:-1])] + [np.zeros(values.shape[:-1]) for _ in range(n)]
    for i in range(n):
        x = values[..., i]
        for k in range(i + 1, 0, -1):
            coeffs[k] = coeffs[k] + x * coeffs[k - 1]
    return coeffs[1:]


def symplectic_eigenvalues(cm, check_tol: float = 1e-9) -> SymplecticSpectrum:
    """Symplectic eigenvalues from the spectrum of ``i Omega A``.

    The invariant-polynomial route is checked in its well-conditioned
    direction: ``e_k(nu^2)`` must reproduce every principal-minor QUI to
    ``check_tol`` (relative).
    """
    a = _entries(cm)
    n = a.shape[-1] // 2
    ev = np.linalg.eigvals(1j * symplectic_form(n) @ a)
    if np.max(np.abs(ev.imag), initial=0.0) > 1e-6 * max(1.0, float(np.max(np.abs(ev)))):
        raise ValueError("i*Omega*A has non-real eigenvalues; matrix is not a valid covariance matrix")
    nu = np.sort(np.abs(ev.real), axis=-1)[..., ::-1][..., ::2]
    sq = elementary_symmetric(nu ** 2)
    for k in range(1, n + 1):
        delta = qui_from_covariance(a, k)
        if not np.allclose(sq[k - 1], delta, rtol=check_tol, atol=check_tol):
            raise ValueError(f"symplectic eigenvalues inconsistent with Delta_{k}; malformed matrix")
    return SymplecticSpectrum(nu)


def symplectic_eigenvalues_from_quis(deltas) -> np.ndarray:
    """Roots of ``x^N - Delta_1 x^(N-1) + ... + (-1)^N Delta_N``, square-rooted, descending."""
    n = len(deltas)
    poly = [1.0] + [(-1) ** k * float(deltas[k - 1]) for k in range(1, n + 1)]
    roots = np.roots(poly)
    if np.max(np.abs(roots.imag), initial=0.0) > 1e-6 * max(1.0, float(np.max(np.abs(roots)))):
        raise ValueError("invariant polynomial has non-real roots")
    r = roots.real
    if np.min(r) < -1e-9:
        raise ValueError("invariant polynomial has negative roots")
    return np.sort(np.sqrt(np.clip(r, 0, None)))[::-1]


def is_physical(cm, tol: float = PHYSICAL_TOL_ANALYTIC) -> bool:
    """True iff the matrix is positive definite and ``min nu_j >= 1 - tol``."""
    a = _entries(cm)
    if a.ndim != 2:
        raise ValueError("is_physical expects a single matrix")
    if not np.allclose(a, a.T, atol=1e-12):
        return False
    if np.linalg.eigvalsh(a)[0] <= 0:
        return False
    n = a.shape[-1] // 2
    ev = np.linalg.eigvals(1j * symplectic_form(n) @ a)
    return bool(np.min(np.abs(ev.real)) >= 1 - tol)


def min_symplectic_eigenvalue(cm) -> np.ndarray | float:
    a = _entries(cm)
    n = a.shape[-1] // 2
    ev = np.linalg.eigvals(1j * symplectic_form(n) @ a)
    out = np.min(np.abs(ev.real), axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def partial_transpose(cm, beam: int) -> CovarianceMatrix:
    """Flip the sign of the momentum of ``beam`` (0-based)."""
    a = _entries(cm)
    n = a.shape[-1] // 2
    if not 0 <= beam < n:
        raise ValueError("beam index out of range")
    flip = np.ones(2 * n)
    flip[2 * beam + 1] = -1.0
    return CovarianceMatrix(a * flip[:, None] * flip[None, :])


def purities(cm) -> dict:
    """Global purity under both conventions in use.

    ``standard`` is ``1/sqrt(det A)``; ``inverse_square`` follows
    ``Delta^N_N = mu^(-1/2)`` read literally, i.e. ``mu = Delta^N_N^(-2)``.
    """
    n = _entries(cm).shape[-1] // 2
    dn = qui_from_covariance(cm, n)
    return {"standard": dn ** -0.5, "inverse_square": dn ** -2.0}


# random states


def _passive_symplectic(u: np.ndarray) -> np.ndarray:
    n = u.shape[0]
    o = np.block([[u.real, -u.imag], [u.imag, u.real]])
    perm = np.empty(2 * n, dtype=int)
    perm[0::2] = np.arange(n)
    perm[1::2] = np.arange(n) + n
    return o[np.ix_(perm, perm)]


def random_symplectic(n_beams: int, rng: np.random.Generator, max_squeeze: float = 0.6) -> np.ndarray:
    """``O1 Z O2`` with Haar-random passive parts and bounded single-mode squeezing."""
    o1 = _passive_symplectic(unitary_group.rvs(n_beams, random_state=rng) if n_beams > 1 else
                             np.exp(2j * np.pi * rng.random()) * np.eye(1))
    o2 = _passive_symplectic(unitary_group.rvs(n_beams, random_state=rng) if n_beams > 1 else
                             np.exp(2j * np.pi * rng.random()) * np.eye(1))
    r = rng.uniform(-max_squeeze, max_squeeze, n_beams)
    z = np.diag(np.ravel(np.column_stack([np.exp(r), np.exp(-r)])))
    return o1 @ z @ o2


def random_local_symplectic(n_beams: int, beam: int, rng: np.random.Generator, max_squeeze: float = 0.8) -> np.ndarray:
    """Rotation-squeeze-rotation acting on one beam only."""
    s = np.eye(2 * n_beams)
    th1, th2 = rng.uniform(0, 2 * np.pi, 2)
    r = rng.uniform(-max_squeeze, max_squeeze)
    rot = lambda t: np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])
    s[2 * beam:2 * beam + 2, 2 * beam:2 * beam + 2] = rot(th1) @ np.diag([np.exp(r), np.exp(-r)]) @ rot(th2)
    return s


def random_physical_covariance(
    n_beams: int,
    rng: np.random.Generator,
    size: int | None = None,
    max_squeeze: float = 0.6,
    max_thermal: float = 1.5,
) -> CovarianceMatrix:
    """Williamson construction ``S diag(nu) S^T`` with ``nu_j >= 1``."""
    count = 1 if size is None else size
    mats = np.empty((count, 2 * n_beams, 2 * n_beams))
    for i in range(count):
        nu = 1.0 + rng.uniform(0, max_thermal, n_beams)
        s = random_symplectic(n_beams, rng, max_squeeze)
        mats[i] = s @ np.diag(np.repeat(nu, 2)) @ s.T
    mats = 0.5 * (mats + np.swapaxes(mats, -1, -2))
    return CovarianceMatrix(mats[0] if size is None else mats)


def random_physical_params(n_beams: int, rng: np.random.Generator, size: int | None = None, **kw) -> GaussianStateParams:
    return params_from_covariance(random_physical_covariance(n_beams, rng, size, **kw))


def _random_2x2_physical(rng, count, max_squeeze, max_thermal):
    nu = 1.0 + rng.uniform(0, max_thermal, count)
    r = rng.uniform(-max_squeeze, max_squeeze, count)
    th = rng.uniform(0, np.pi, count)
    c, s = np.cos(th), np.sin(th)
    rot = np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)
    z = np.zeros((count, 2, 2))
    z[:, 0, 0] = np.exp(2 * r)
    z[:, 1, 1] = np.exp(-2 * r)
    return nu[:, None, None] * rot @ z @ np.swapaxes(rot, -1, -2)


def random_symmetric_covariance(
    rng: np.random.Generator,
    size: int | None = None,
    n_beams: int = 3,
    max_squeeze: float = 0.6,
    max_thermal: float = 1.5,
) -> CovarianceMatrix:
    """Exchange-symmetric physical states.

    The beam-collective mode sees ``sigma + (N-1) eps`` and each relative mode
    ``sigma - eps``; both are drawn as physical single-mode matrices, which
    covers all symmetric states.  Exchange symmetry forces a real ``Dbar``.
    """
    count = 1 if size is None else size
    p = _random_2x2_physical(rng, count, max_squeeze, max_thermal)
    q = _random_2x2_physical(rng, count, max_squeeze, max_thermal)
    sigma = (p + (n_beams - 1) * q) / n_beams
    eps = (p - q) / n_beams
    mats = np.empty((count, 2 * n_beams, 2 * n_beams))
    for j in range(n_beams):
        for k in range(n_beams):
            mats[:, 2 * j:2 * j + 2, 2 * k:2 * k + 2] = sigma if j == k else eps
    return CovarianceMatrix(mats[0] if size is None else mats)


def random_symmetric_params(rng: np.random.Generator, size: int | None = None, **kw) -> GaussianStateParams:
    return params_from_covariance(random_symmetric_covariance(rng, size, **kw))


def n_principal_subsets(n_beams: int, k: int) -> int:
    return comb(2 * n_beams, 2 * k)
