"""PPT separability test for symmetric three-beam states.

Partial transposition of beam 1 leaves ``Delta^3_3`` unchanged and shifts the
lower invariants by multiples of their residues:

    tilde Delta^3_1 = Delta^3_1 + 4/3 R_1
    tilde Delta^3_2 = Delta^3_2 + 4/3 R_2 - 32 (|D_12|^2 + |Dbar_12|^2)

with ``R_k`` the residues in the convention ``Delta = measurable - R``.  The
necessary separability condition ``tilde D3 - tilde D2 + tilde D1 - 1 >= 0``
then reads

    D3 - D2_w + D1_w - 1 + 32 g  >=  (R_2 - R_1) / 3,

``g = <W1 W2> - <W1><W2>``, where the left side is measurable and the right
side is bracketed by the residue bounds.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import formulas as F
from .gauss_core import (
    CovarianceMatrix,
    build_covariance,
    is_physical,
    min_symplectic_eigenvalue,
    params_from_covariance,
    partial_transpose,
    qui_from_covariance,
)
from .model import SweepConfig, TwbModelParams, gaussian_params_from_moments, mean_noise, reduced_model_moments
from .moments import IntensityMoments

VERDICTS = ("entangled", "separable_necessary_condition_met", "undecided")
FORMS = ("exact", "uncorrected")
RELATION_TOL = 1e-9
NPT_TOL = 1e-9


@dataclass(frozen=True)
class PptVerdict:
    lhs: float
    rhs_lower: float
    rhs_upper: float
    verdict: str
    form: str = "exact"

    def to_json_dict(self) -> dict:
        return asdict(self)


def classify(lhs: float, rhs_lower: float, rhs_upper: float, tol: float = 1e-9) -> str:
    if lhs < rhs_lower - tol:
        return "entangled"
    if lhs >= rhs_upper + tol:
        return "separable_necessary_condition_met"
    return "undecided"


def ppt_from_moments(m: IntensityMoments, tol: float = 1e-9, strict: bool = False, form: str = "exact") -> PptVerdict:
    """Three-way PPT verdict from single-mode intensity moments up to order 6.

    ``form="uncorrected"`` evaluates the inequality with the coefficients as
    first stated (``+g`` on the left, ``-(R_2 - R_1)/3`` on the
    right) for comparison; it is not an identity of Gaussian states.
    """
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    if m.n_beams != 3:
        raise ValueError("three-beam moments required")
    F._check_symmetric(m, strict)
    d33 = F.delta33_from_moments(m)
    r31 = F.delta31_from_moments(m)
    r32 = F.delta32_from_moments(m)
    g = m.covariance(0, 1)
    base = d33 - r32.measurable_part + r31.measurable_part - 1
    if form == "exact":
        lhs = base + 32 * g
        lo = (r32.residue_lower - r31.residue_upper) / 3
        hi = (r32.residue_upper - r31.residue_lower) / 3
    else:
        lhs = base + g
        lo = -(r32.residue_upper - r31.residue_lower) / 3
        hi = -(r32.residue_lower - r31.residue_upper) / 3
    lhs, lo, hi = float(lhs), float(lo), float(hi)
    return PptVerdict(lhs, lo, hi, classify(lhs, lo, hi, tol), form)


@dataclass(frozen=True)
class OracleResult:
    npt: bool
    min_symplectic_eigenvalue: float
    tilde_deltas: tuple[float, float, float]
    deltas: tuple[float, float, float]
    relation_error: float | None  # None when the state is not exchange symmetric

    @property
    def relations_hold(self) -> bool:
        return self.relation_error is None or self.relation_error <= RELATION_TOL


def _is_symmetric(params, tol: float = 1e-9) -> bool:
    def same(a):
        a = np.asarray(a)
        return np.max(np.abs(a - a[0])) <= tol * max(1.0, float(np.max(np.abs(a))))

    return same(params.b) and same(params.c) and same(params.d) and same(params.d_bar)


def transposed_relations(params) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Predicted ``tilde Delta^3_k`` from parameter-level residues (symmetric states)."""
    cm = build_covariance(params)
    d = [qui_from_covariance(cm, k) for k in (1, 2, 3)]
    r1 = F.residue_from_params(params, 1)
    r2 = F.residue_from_params(params, 2)
    g = np.abs(params.d[0]) ** 2 + np.abs(params.d_bar[0]) ** 2
    return d[0] + 4 * r1 / 3, d[1] + 4 * r2 / 3 - 32 * g, d[2]


def ppt_oracle(cm, tol: float = NPT_TOL) -> OracleResult:
    """NPT test by the smallest symplectic eigenvalue of the beam-1 transpose.

    ``tol`` keeps states on the boundary (vacuum, pure products) separable.
    """
    if not isinstance(cm, CovarianceMatrix):
        cm = CovarianceMatrix(np.asarray(cm, dtype=float))
    if cm.n_beams != 3:
        raise ValueError("three-beam covariance matrix required")
    pt = partial_transpose(cm, 0)
    nu = float(min_symplectic_eigenvalue(pt))
    tilde = tuple(float(qui_from_covariance(pt, k)) for k in (1, 2, 3))
    plain = tuple(float(qui_from_covariance(cm, k)) for k in (1, 2, 3))
    err = None
    params = params_from_covariance(cm)
    if _is_symmetric(params):
        pred = transposed_relations(params)
        err = max(abs(float(p) - t) / max(1.0, abs(t)) for p, t in zip(pred, tilde))
    return OracleResult(nu < 1.0 - tol, nu, tilde, plain, err)


@dataclass(frozen=True)
class SweepPoint:
    w_n: int
    mean_noise: float
    delta11: float
    delta22: float
    delta33: float
    delta21_w: float
    delta21_r_lower: float
    delta21_r_upper: float
    delta31_w: float
    delta31_r_lower: float
    delta31_r_upper: float
    delta32_w: float
    delta32_r_lower: float
    delta32_r_upper: float
    delta32_sym_lower: float
    delta32_sym_upper: float
    residue21_true: float
    residue31_true: float
    residue32_true: float
    lhs: float
    rhs_lower: float
    rhs_upper: float
    verdict: str
    npt_oracle: bool
    physical: bool

    @property
    def ratio31(self) -> float:
        return max(abs(self.delta31_r_lower), abs(self.delta31_r_upper)) / self.delta31_w

    @property
    def ratio32(self) -> float:
        """Uses the symmetric-state bounds alone (upper bound from the moment form)."""
        return max(abs(self.delta32_sym_lower), abs(self.delta32_sym_upper)) / self.delta32_w

    @property
    def ratio21(self) -> float:
        return max(abs(self.delta21_r_lower), abs(self.delta21_r_upper)) / self.delta21_w

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out.update(ratio21=self.ratio21, ratio31=self.ratio31, ratio32=self.ratio32)
        return out


def sweep_point(params: TwbModelParams, w_p: int, w_n: int, M: float, tol: float = 1e-9,
                form: str = "exact") -> SweepPoint:
    m = reduced_model_moments(params, w_p, w_n, M)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        gp = gaussian_params_from_moments(m)
    cm = build_covariance(gp)
    r21 = F.delta21_from_moments(m)
    r31 = F.delta31_from_moments(m)
    r32 = F.delta32_from_moments(m)
    v = ppt_from_moments(m, tol, form=form)
    sym_lo, sym_hi = F.residue_bounds_symmetric(m)
    return SweepPoint(
        w_n=w_n,
        mean_noise=mean_noise(params, w_n),
        delta11=float(F.delta11_from_moments(m)),
        delta22=float(F.delta22_from_moments(m)),
        delta33=float(F.delta33_from_moments(m)),
        delta21_w=float(r21.measurable_part),
        delta21_r_lower=float(r21.residue_lower),
        delta21_r_upper=float(r21.residue_upper),
        delta31_w=float(r31.measurable_part),
        delta31_r_lower=float(r31.residue_lower),
        delta31_r_upper=float(r31.residue_upper),
        delta32_w=float(r32.measurable_part),
        delta32_r_lower=float(r32.residue_lower),
        delta32_r_upper=float(r32.residue_upper),
        delta32_sym_lower=float(sym_lo),
        delta32_sym_upper=float(sym_hi),
        residue21_true=float(F.residue_21(gp)),
        residue31_true=float(F.residue_from_params(gp, 1)),
        residue32_true=float(F.residue_from_params(gp, 2)),
        lhs=v.lhs,
        rhs_lower=v.rhs_lower,
        rhs_upper=v.rhs_upper,
        verdict=v.verdict,
        npt_oracle=ppt_oracle(cm).npt,
        physical=bool(is_physical(cm)),
    )


def noise_sweep_report(cfg: SweepConfig, M: float, params: TwbModelParams | None = None, tol: float = 1e-9,
                       jobs: int = 1, form: str = "exact") -> list[SweepPoint]:
    """Invariants, residue bounds and both PPT verdicts along the noise sweep."""
    params = params or TwbModelParams()
    args = [(params, cfg.w_p, w, M, tol, form) for w in cfg.w_n_list]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(sweep_point, *zip(*args)))
    return [sweep_point(*a) for a in args]


def thresholds(points: list[SweepPoint]) -> dict:
    """Noise levels where the verdict leaves ``entangled`` and reaches ``separable``."""
    last_ent = max((p.mean_noise for p in points if p.verdict == "entangled"), default=math.nan)
    first_sep = min((p.mean_noise for p in points if p.verdict == "separable_necessary_condition_met"),
                    default=math.nan)
    return {"last_entangled": last_ent, "first_separable": first_sep}


def verdict_sequence_is_monotone(points: list[SweepPoint]) -> bool:
    """Verdicts ordered by noise follow entangled* undecided* separable*."""
    rank = {"entangled": 0, "undecided": 1, "separable_necessary_condition_met": 2}
    seq = [rank[p.verdict] for p in sorted(points, key=lambda p: p.mean_noise)]
    return all(a <= b for a, b in zip(seq, seq[1:]))
