"""Closed-form QUIs of 1-, 2- and 3-beam Gaussian fields from intensity moments.

Every formula is a :class:`~gaussqui.terms.TermTable` generated from a short
declarative list of reference terms plus a beam symmetrizer:

* ``single``: the terms are repeated with beam 1 replaced by beams 2 and 3,
* ``pairs``: repeated over the six ordered beam pairs,
* ``triples``: repeated over all six beam permutations.

Terms are written as space-separated moment factors, e.g. ``"W1W2 W1W3^2"``
is ``<W1 W2><W1 W3^2>``.  Corrections to reference coefficients are listed in
:data:`CORRECTIONS` and every one of them is pinned by the principal-minor
oracle in the tests.

The parts of a QUI that photocounting cannot reach (residues) are evaluated
from Gaussian parameters and bounded from moments.  Convention everywhere:
``Delta = measurable_part - residue``.
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .gauss_core import GaussianStateParams
from .moments import IntensityMoments
from .terms import TermTable, index_images, symmetrize

_FACTOR = re.compile(r"W(\d)(?:\^(\d))?")


def parse_factor(token: str, n_beams: int = 3) -> tuple[int, ...]:
    powers = [0] * n_beams
    pos = 0
    for m in _FACTOR.finditer(token):
        if m.start() != pos:
            raise ValueError(f"cannot parse moment {token!r}")
        powers[int(m.group(1)) - 1] += int(m.group(2) or 1)
        pos = m.end()
    if pos != len(token):
        raise ValueError(f"cannot parse moment {token!r}")
    return tuple(powers)


def parse_term(text: str, n_beams: int = 3) -> list[tuple[int, ...]]:
    """``"W1 W2^2 W1W3"`` -> factor list; ``"X^2"`` repeats a factor."""
    out = []
    for tok in text.split():
        base, _, rep = tok.partition(")^")
        if rep:
            out += [parse_factor(base.lstrip("("), n_beams)] * int(rep)
        else:
            out.append(parse_factor(tok, n_beams))
    return out


def _group(n_beams: int, moved: int, rows) -> TermTable:
    pairs = [(c, parse_term(t, n_beams)) for c, t in rows]
    return symmetrize(n_beams, pairs, index_images(n_beams, moved))


def _const(n_beams: int, value) -> TermTable:
    return TermTable.from_pairs(n_beams, [(value, [])])


# reference term lists; (W1)^2 means <W1>^2

SINGLE_11 = [(-4, "W1"), (12, "(W1)^2"), (-4, "W1^2")]

SINGLE_21 = [(4, "W1"), (12, "(W1)^2"), (-4, "W1^2")]

PAIR_22 = [
    (-4, "W1W2"), (-4, "W1^2W2^2"), (8, "W1W2^2"), (24, "(W1W2)^2"),
    (12, "W1 W2"), (12, "W1^2 W2^2"), (-24, "W1^2 W2"), (-96, "W1^2 (W2)^2"),
    (96, "(W1)^2 W2"), (240, "(W1)^2 (W2)^2"), (-48, "W1 W1W2"), (48, "W1 W1W2^2"),
    (-192, "W1 W1W2 W2"),
]

SINGLE_32 = [(8, "W1"), (-8, "W1^2"), (24, "(W1)^2")]

PAIR_32 = [
    (-4, "W1^2W2^2"), (8, "W1W2^2"), (24, "(W1W2)^2"), (8, "W1 W2"),
    (12, "W1^2 W2^2"), (-24, "W1^2 W2"), (-48, "W1 W1W2"), (48, "W1 W1W2^2"),
    (96, "(W1)^2 W2"), (-96, "W1^2 (W2)^2"), (240, "(W1)^2 (W2)^2"),
    (-192, "W1 W1W2 W2"),
]

SINGLE_33 = [(4, "W1"), (4, "W1^2"), (12, "(W1)^2")]

TRIPLE_33 = [
    ("8/3", "W1W2W3"), ("-8/3", "W1^2W2^2W3^2"), (-8, "W1W2W3^2"), (8, "W1W2^2W3^2"),
    (-24, "W1W3 W2"), (-24, "W1^2W3^2 W2"), (24, "W1^2 W2W3"), (24, "W1^2W3^2 W2^2"),
    (32, "(W1W2W3)^2"), (32, "W1 W2 W3"), (-32, "W1^2 W2^2 W3^2"),
    (48, "W1 W1W2W3"), (48, "W1 W1W2^2W3^2"), (48, "W1W3^2 W2"), (-48, "W1^2 W2W3^2"),
    (48, "W1W2 W1W3"), (48, "W1W2^2 W1W3^2"),
    (-96, "W1W3 (W2)^2"), (-96, "W1W2 W1W2W3"), (-96, "W1 W1W2W3^2"),
    (96, "W1W2 W1W2W3^2"), (-96, "W1^2W3^2 (W2)^2"), (-96, "W1W2^2 W1W3"),
    (192, "(W1W3)^2 W2"), (192, "W1W3^2 (W2)^2"), (-192, "W1^2 (W2W3)^2"),
    (960, "(W1W3)^2 (W2)^2"), (-96, "W1^2 W2 W3"), (96, "W1^2 W2^2 W3"),
    (384, "W1 W1W3^2 W2"), (384, "W1 W1W2W3 W2"), (-384, "W1 W1W2W3^2 W2"),
    (-384, "W1 W1W3 W2"), (384, "W1^2 W2 W2W3"), (-384, "W1^2 W2 W2W3^2"),
    (480, "(W1)^2 W2 W3"), (480, "(W1)^2 W2^2 W3^2"),
    (768, "W1W2 W1W3 W2"), (-768, "W1W2W3 W1W3 W2"), (-768, "W1W2 W1W3^2 W2"),
    (-768, "W1W2 W1W3 W2W3"), (-960, "W1 (W2)^2 W3^2"), (-1920, "W1 W1W3 (W2)^2"),
    (1920, "W1 W1W3^2 (W2)^2"),
    (2880, "(W1)^2 W2 (W3)^2"), (6720, "(W1)^2 (W2)^2 (W3)^2"), (-2880, "(W1)^2 (W2)^2 W3^2"),
    (1280, "W1 W1W2W3 W2 W3"), (-1920, "W1 W1W2 W2 W3"), (1920, "W1^2 W2 W2W3 W3"),
    (3840, "W1 W1W3 W2 W2W3"), (-11520, "W1 W1W3 (W2)^2 W3"),
]


# residues evaluated from Gaussian parameters


def _accessors(params: GaussianStateParams):
    B = lambda i: params.b[i]
    C = lambda i: params.c[i]
    D = lambda i, j: params.d_pair(i, j)
    Db = lambda i, j: params.dbar_pair(i, j)
    return B, C, D, Db


def _pair_gap(params, i, j):
    """``|D_ij|^2 - |Dbar_ij|^2``."""
    return np.abs(params.d_pair(i, j)) ** 2 - np.abs(params.dbar_pair(i, j)) ** 2


def residue_21(params: GaussianStateParams, beams=(0, 1)):
    """``8 (|D_12|^2 - |Dbar_12|^2)`` for the chosen beam pair."""
    return 8 * _pair_gap(params, *beams)


def residue_31(params: GaussianStateParams):
    return sum(residue_21(params, (j, k)) for j, k in ((0, 1), (0, 2), (1, 2)))


def _residue_32_group(params, a, b, c):
    B, C, D, Db = _accessors(params)
    re = np.real
    cj = np.conj
    out = 16 * (B(a) + B(a) ** 2 - np.abs(C(a)) ** 2) * _pair_gap(params, b, c)
    out = out + 16 * re(D(a, b) * cj(D(a, c)) * Db(b, c))
    out = out + 32 * (B(a) + B(b) - B(c)) * re(Db(a, b) * cj(D(b, c)) * D(a, c))
    out = out - 16 * (2 * B(a) + 1) * re(Db(a, b) * cj(Db(a, c)) * Db(b, c))
    out = out - 16 * _pair_gap(params, a, b) * _pair_gap(params, a, c)
    out = out + 32 * (re(C(a) * cj(D(a, b)) * cj(D(a, c)) * D(b, c)) + re(C(a) * Db(a, b) * Db(a, c) * cj(D(b, c))))
    out = out - 64 * re(C(b) * Db(a, c) * cj(Db(a, b)) * cj(D(b, c)))
    return out


def residue_32(params: GaussianStateParams):
    """Residue of ``Delta^3_2`` for a general 3-beam state."""
    total = 0.0
    for a, b, _ in index_images(3, 2):
        total = total + 8 * np.abs(params.d_pair(a, b)) ** 2
    for perm in permutations(range(3)):
        total = total + _residue_32_group(params, *perm)
    return total


def residue_32_symmetric(params: GaussianStateParams):
    """Residue of ``Delta^3_2`` written for exchange-symmetric states (beams 1, 2)."""
    b1, c1 = params.b[0], params.c[0]
    d, db = params.d_pair(0, 1), params.dbar_pair(0, 1)
    gap = np.abs(d) ** 2 - np.abs(db) ** 2
    out = 48 * np.abs(d) ** 2
    out = out + 96 * (b1 + b1 ** 2 - np.abs(c1) ** 2) * gap
    out = out - 96 * gap ** 2
    out = out + 192 * b1 * np.real(db) * gap
    out = out + 96 * np.real(db) * gap
    out = out + 192 * np.real(c1 * np.conj(d)) * gap
    return out


# corrections and assembled tables


@dataclass(frozen=True)
class Correction:
    group: str
    term: str
    original: str
    used: str
    reason: str


CORRECTIONS = (
    Correction("delta11", "W1", "-4", "4",
               "sign of the linear term; the coefficient-matching solution gives +4"),
    Correction("delta33.single", "W1^2", "4", "-4",
               "single-beam group must reduce to Delta^1_1 when the other beams are vacuum"),
    Correction("delta33.triple", "W1W2 W1W3 W2W3", "-768", "-256",
               "only single-term change that makes the sixth-order block satisfy the minors identity"),
)


def _corrected(group: str, rows):
    fixes = {c.term: c.used for c in CORRECTIONS if c.group == group}
    out = []
    for coeff, text in rows:
        out.append((fixes.pop(text, coeff), text))
    if fixes:
        raise KeyError(f"corrections for {group} name unknown terms: {sorted(fixes)}")
    return out


def _build_tables() -> dict[tuple[int, int], TermTable]:
    single_33 = _group(3, 1, _corrected("delta33.single", SINGLE_33))
    pair_33 = _group(3, 2, PAIR_22)
    triple_33 = _group(3, 3, _corrected("delta33.triple", TRIPLE_33))
    t33 = _const(3, 1) + single_33 + pair_33 + triple_33
    return {
        (1, 1): _const(1, 1) + _group(1, 1, [(c, t) for c, t in _corrected("delta11", SINGLE_11)]),
        (2, 1): _const(2, 2) + _group(2, 1, [(c, t) for c, t in SINGLE_21]),
        (2, 2): t33.restricted([0, 1]),
        (3, 1): _const(3, 3) + _group(3, 1, SINGLE_21),
        (3, 2): _const(3, 3) + _group(3, 1, SINGLE_32) + _group(3, 2, PAIR_32),
        (3, 3): t33,
    }


TABLES = _build_tables()
EXACT = {(1, 1), (2, 2), (3, 3)}


def measurable_table(n_beams: int, k: int) -> TermTable:
    """Term table of the measurable part of ``Delta^N_k``."""
    try:
        return TABLES[(n_beams, k)]
    except KeyError:
        raise ValueError(f"no closed form shipped for N={n_beams}, k={k}") from None


def correction_notes() -> list[str]:
    return [f"{c.group}: coefficient of {c.term} was {c.original}, used {c.used} ({c.reason})" for c in CORRECTIONS]


CONVENTION_NOTE = "Delta = measurable_part - residue; residue bounds bracket the unmeasurable part"


# moment-level evaluation


@dataclass(frozen=True)
class QuiFromMomentsResult:
    """Measurable part of ``Delta^N_k`` and bounds on its residue.

    The QUI itself lies in ``[measurable_part - residue_upper,
    measurable_part - residue_lower]``.
    """

    k: int
    n_beams: int
    measurable_part: object
    residue_lower: object
    residue_upper: object
    exact: bool
    notes: tuple[str, ...] = field(default=())

    @property
    def value_bounds(self):
        return self.measurable_part - self.residue_upper, self.measurable_part - self.residue_lower

    def to_json_dict(self) -> dict:
        doc = {"N": self.n_beams, "k": self.k}
        if self.exact:
            doc["value"] = float(self.measurable_part)
        else:
            doc["measurable_part"] = float(self.measurable_part)
        doc["residue_lower"] = float(self.residue_lower)
        doc["residue_upper"] = float(self.residue_upper)
        doc["exact"] = self.exact
        doc["convention_notes"] = [CONVENTION_NOTE, *self.notes]
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


def _values(m: IntensityMoments) -> dict:
    return m.mapping()


def _sub_moments(m: IntensityMoments, beams) -> IntensityMoments:
    beams = list(beams)
    if len(beams) == m.n_beams and beams == list(range(m.n_beams)):
        return m
    return m.restricted(beams)


def evaluate_measurable(m: IntensityMoments, k: int):
    return measurable_table(m.n_beams, k).evaluate(_values(m))


def delta11_from_moments(m: IntensityMoments, beam: int = 0):
    """``1 + 4<W> + 12<W>^2 - 4<W^2>`` for one beam."""
    return evaluate_measurable(_sub_moments(m, [beam]), 1)


def delta22_from_moments(m: IntensityMoments, beams=(0, 1)):
    return evaluate_measurable(_sub_moments(m, beams), 2)


def delta33_from_moments(m: IntensityMoments):
    if m.n_beams != 3:
        raise ValueError("three-beam moments required")
    return evaluate_measurable(m, 3)


def _pair_bounds(m: IntensityMoments, j: int, k: int):
    """Bounds on ``8 (|D_jk|^2 - |Dbar_jk|^2)`` from the pair sub-field."""
    sub = _sub_moments(m, [j, k])
    upper = 8 * sub.covariance(0, 1)
    w21 = evaluate_measurable(sub, 1)
    d22 = evaluate_measurable(sub, 2)
    lower = np.maximum(-d22 + w21 - 1, -upper)
    return w21, lower, upper


def delta21_from_moments(m: IntensityMoments, beams=(0, 1)) -> QuiFromMomentsResult:
    w21, lower, upper = _pair_bounds(m, *beams)
    return QuiFromMomentsResult(1, 2, w21, lower, upper, False)


def delta31_from_moments(m: IntensityMoments) -> QuiFromMomentsResult:
    """Residue is the sum of the three pair residues; pair bounds are summed."""
    if m.n_beams != 3:
        raise ValueError("three-beam moments required")
    lower = upper = 0.0
    for j, k in ((0, 1), (0, 2), (1, 2)):
        _, lo, up = _pair_bounds(m, j, k)
        lower, upper = lower + lo, upper + up
    return QuiFromMomentsResult(1, 3, evaluate_measurable(m, 1), lower, upper, False)


def _single_gap(m: IntensityMoments, j: int):
    """``B + B^2 - |C|^2`` of beam ``j``."""
    sub = _sub_moments(m, [j])
    return sub[(1,)] + 3 * sub[(1,)] ** 2 - sub[(2,)]


def _abs_c(m: IntensityMoments, j: int):
    sub = _sub_moments(m, [j])
    return np.sqrt(np.maximum(sub[(2,)] - 2 * sub[(1,)] ** 2, 0.0))


def residue32_triangle_bound(m: IntensityMoments):
    """General ``(lower, upper)`` for the ``Delta^3_2`` residue, term by term.

    Uses ``|D_jk|, |Dbar_jk| <= sqrt(g_jk)`` with the measurable pair
    covariance ``g_jk = |D_jk|^2 + |Dbar_jk|^2``; the ``|D_jk|^2`` group is
    non-negative and only enters the upper bound.
    """
    g = {}
    for j, k in ((0, 1), (0, 2), (1, 2)):
        g[(j, k)] = g[(k, j)] = np.maximum(m.covariance(j, k), 0.0)
    b = [m.mean(j) for j in range(3)]
    s = [np.abs(_single_gap(m, j)) for j in range(3)]
    cabs = [_abs_c(m, j) for j in range(3)]
    triple = np.sqrt(g[(0, 1)] * g[(0, 2)] * g[(1, 2)])
    spread = 0.0
    for a, bb, c in permutations(range(3)):
        spread = spread + 16 * s[a] * g[(bb, c)]
        spread = spread + 16 * triple + 32 * np.abs(b[a] + b[bb] - b[c]) * triple
        spread = spread + 16 * (2 * b[a] + 1) * triple
        spread = spread + 16 * g[(a, bb)] * g[(a, c)]
        spread = spread + 64 * cabs[a] * triple + 64 * cabs[bb] * triple
    positive = 16 * (g[(0, 1)] + g[(0, 2)] + g[(1, 2)])
    return -spread, positive + spread


def residue32_symmetric_upper(m: IntensityMoments):
    """Upper bound on ``|residue|`` for exchange-symmetric moments (beams 1-2-3)."""
    v = _values(m)
    w1 = v[(1, 0, 0)]
    w2 = v[(0, 1, 0)]
    w3 = v[(0, 0, 1)]
    w11 = v[(2, 0, 0)]
    w12, w13, w23 = v[(1, 1, 0)], v[(1, 0, 1)], v[(0, 1, 1)]
    w123 = v[(1, 1, 1)]
    g = np.maximum(w12 - w1 * w2, 0.0)
    x = w1 ** 3 + 3 * w1 * w12 - w123 - 3 * w1 ** 2 * w2
    y = (4 * v[(2, 1, 1)] - 8 * w12 * w13 - v[(2, 0, 1)] * w2 - 2 * w11 * w23 - v[(2, 1, 0)] * w3
         + 2 * w11 * w2 * w3
         + 4 * w1 * (2 * w1 ** 3 + 6 * w1 * w12 - 2 * w123 + w13 * w2 - 6 * w1 ** 2 * w2 + w12 * w3))
    z = -v[(2, 1, 0)] + 4 * w1 * w12 - 4 * w1 ** 2 * w2 + w11 * w2
    out = 48 * g
    out = out + 96 * np.abs(w1 + 3 * w1 ** 2 - w11) * g
    out = out + 96 * g ** 2
    out = out + 96 * w1 * np.abs(x)
    out = out + 48 * np.abs(x)
    out = out + 48 * np.abs(y)
    out = out + 48 * np.sqrt(g) * np.abs(z)
    return out


def residue32_uncertainty_lower(m: IntensityMoments, residue31_lower=None):
    """Lower bound from ``Delta_3 - Delta_2 + Delta_1 - 1 >= 0``.

    ``residue31_lower`` defaults to the summed pair bounds of ``Delta^3_1``.
    """
    if residue31_lower is None:
        residue31_lower = delta31_from_moments(m).residue_lower
    return (-delta33_from_moments(m) + evaluate_measurable(m, 2) - evaluate_measurable(m, 1)
            + 1 + residue31_lower)


SYMMETRY_WARN = 0.01


def _check_symmetric(m: IntensityMoments, strict: bool) -> float:
    asym = m.asymmetry()
    if asym > SYMMETRY_WARN:
        msg = f"moments deviate from beam-exchange symmetry by {asym:.3g}"
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, RuntimeWarning)
    return asym


def residue_bounds_symmetric(m: IntensityMoments, strict: bool = False):
    """``(lower, upper)`` for the ``Delta^3_2`` residue of a symmetric state."""
    _check_symmetric(m, strict)
    up = residue32_symmetric_upper(m)
    sub = _sub_moments(m, [0, 1])
    pair_lower = np.maximum(-evaluate_measurable(sub, 2) + evaluate_measurable(sub, 1) - 1, -8 * sub.covariance(0, 1))
    lower = np.maximum(-up, residue32_uncertainty_lower(m, 3 * pair_lower))
    return lower, up


def delta32_from_moments(m: IntensityMoments, symmetric: bool | None = None) -> QuiFromMomentsResult:
    """Measurable part and residue bounds for ``Delta^3_2``.

    The triangle bound holds for every state; for exchange-symmetric moments
    the tighter symmetric bound is combined with it.
    """
    if m.n_beams != 3:
        raise ValueError("three-beam moments required")
    lower, upper = residue32_triangle_bound(m)
    lower = np.maximum(lower, residue32_uncertainty_lower(m))
    if symmetric is None:
        symmetric = m.asymmetry() <= 1e-9
    notes = ()
    if symmetric:
        slo, sup = residue_bounds_symmetric(m)
        lower, upper = np.maximum(lower, slo), np.minimum(upper, sup)
        notes = ("symmetric-state residue bounds applied",)
    return QuiFromMomentsResult(2, 3, evaluate_measurable(m, 2), lower, upper, False, notes)


def exact_result(m: IntensityMoments) -> QuiFromMomentsResult:
    n = m.n_beams
    return QuiFromMomentsResult(n, n, evaluate_measurable(m, n), 0.0, 0.0, True)


def all_from_moments(m: IntensityMoments) -> list[QuiFromMomentsResult]:
    """Every ``Delta^N_k`` of a 1-, 2- or 3-beam field."""
    n = m.n_beams
    if n == 1:
        return [exact_result(m)]
    if n == 2:
        return [delta21_from_moments(m), exact_result(m)]
    if n == 3:
        return [delta31_from_moments(m), delta32_from_moments(m), exact_result(m)]
    raise ValueError("closed forms exist for N <= 3")


def residue_from_params(params: GaussianStateParams, k: int):
    """Parameter-level residue of ``Delta^N_k`` (zero for k = N)."""
    n = params.n_beams
    if k == n:
        return np.zeros(params.batch_shape) if params.batch_shape else 0.0
    if (n, k) == (2, 1):
        return residue_21(params)
    if (n, k) == (3, 1):
        return residue_31(params)
    if (n, k) == (3, 2):
        return residue_32(params)
    raise ValueError(f"no residue formula for N={n}, k={k}")
