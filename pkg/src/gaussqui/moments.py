"""Intensity and photon-number moments.

Intensity moments ``<W_1^l1 ... W_N^lN>`` are the normally ordered
photon-number moments.  For a single beam ``<W^l>`` is the factorial moment
``<n (n-1) ... (n-l+1)>``, so photon and intensity moments are related by
Stirling numbers.

Mode reduction: for ``M`` independent identical modes the joint cumulants of
the whole-field intensities are ``M`` times the single-mode cumulants, at every
order including the means.  Converting raw moments to cumulants, scaling by
``1/M`` and converting back therefore inverts the multi-mode composition for
real ``M`` as well.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from functools import lru_cache
from itertools import product
from math import comb, prod
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .distribution import JointDistribution
from .gauss_core import GaussianStateParams
from .polynomial import numeric_values, symbol_table
from .wick import moment_polynomial

PROVENANCES = ("model", "measured", "reduced")
IMAG_FAULT_TOL = 1e-9

Index = tuple[int, ...]


def indices_up_to(n_beams: int, max_order: int, per_beam: int | None = None) -> list[Index]:
    """All nonzero indices with total order ``<= max_order``, sorted by order."""
    cap = max_order if per_beam is None else min(per_beam, max_order)
    out = [i for i in product(range(cap + 1), repeat=n_beams) if 0 < sum(i) <= max_order]
    out.sort(key=lambda i: (sum(i), i))
    return out


def _lower_indices(idx: Index) -> Iterable[Index]:
    return product(*(range(l + 1) for l in idx))


@dataclass(frozen=True)
class _MomentMap:
    n_beams: int
    values: dict
    max_order: int = 0

    def __post_init__(self):
        vals = {}
        for k, v in dict(self.values).items():
            key = tuple(int(x) for x in k)
            if len(key) != self.n_beams:
                raise ValueError(f"index {key} does not match {self.n_beams} beams")
            if sum(key) == 0:
                continue
            vals[key] = v
        object.__setattr__(self, "values", vals)
        if not self.max_order:
            object.__setattr__(self, "max_order", max((sum(k) for k in vals), default=0))

    def __getitem__(self, idx) -> float:
        idx = tuple(idx)
        if sum(idx) == 0:
            return 1.0
        try:
            return self.values[idx]
        except KeyError:
            raise KeyError(f"moment {idx} not available (max order {self.max_order})") from None

    def __contains__(self, idx) -> bool:
        return sum(idx) == 0 or tuple(idx) in self.values

    def mapping(self) -> dict:
        """Values including the trivial zero index."""
        out = dict(self.values)
        out[(0,) * self.n_beams] = 1.0
        return out

    def sample(self, i: int):
        return type(self)(self.n_beams, {k: np.asarray(v)[..., i] for k, v in self.values.items()}, self.max_order,
                          **self._extra())

    def _extra(self) -> dict:
        return {}


@dataclass(frozen=True)
class IntensityMoments(_MomentMap):
    """``powers -> <W_1^l1 ... W_N^lN>``; values may be arrays over a sample axis."""

    provenance: str = "model"

    def __post_init__(self):
        super().__post_init__()
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")

    def _extra(self) -> dict:
        return {"provenance": self.provenance}

    def mean(self, beam: int):
        idx = [0] * self.n_beams
        idx[beam] = 1
        return self[tuple(idx)]

    def covariance(self, j: int, k: int):
        """``<W_j W_k> - <W_j><W_k>`` which equals ``|D_jk|^2 + |Dbar_jk|^2``."""
        idx = [0] * self.n_beams
        idx[j] += 1
        idx[k] += 1
        return self[tuple(idx)] - self.mean(j) * self.mean(k)

    def permuted(self, perm) -> "IntensityMoments":
        """Relabel beams: beam ``i`` becomes ``perm[i]``."""
        vals = {}
        for k, v in self.values.items():
            new = [0] * self.n_beams
            for i, l in enumerate(k):
                new[perm[i]] = l
            vals[tuple(new)] = v
        return IntensityMoments(self.n_beams, vals, self.max_order, self.provenance)

    def restricted(self, beams) -> "IntensityMoments":
        """Moments of the sub-field made of ``beams``."""
        beams = list(beams)
        vals = {}
        for k, v in self.values.items():
            if all(k[j] == 0 for j in range(self.n_beams) if j not in beams):
                vals[tuple(k[j] for j in beams)] = v
        return IntensityMoments(len(beams), vals, 0, self.provenance)

    def asymmetry(self) -> float:
        """Largest relative change of any moment under a beam permutation."""
        from itertools import permutations

        worst = 0.0
        for perm in permutations(range(self.n_beams)):
            for k, v in self.values.items():
                new = [0] * self.n_beams
                for i, l in enumerate(k):
                    new[perm[i]] = l
                other = self.values.get(tuple(new))
                if other is None:
                    continue
                scale = max(np.max(np.abs(v)), 1e-300)
                worst = max(worst, float(np.max(np.abs(np.asarray(v) - other))) / scale)
        return worst


@dataclass(frozen=True)
class PhotonMoments(_MomentMap):
    """``powers -> <n_1^l1 ... n_N^lN>``."""


def moments_from_params(
    params: GaussianStateParams,
    max_order: int,
    indices: Iterable[Index] | None = None,
) -> IntensityMoments:
    """Intensity moments of a zero-mean Gaussian state by Wick pairing.

    Each moment is the exact pairing polynomial evaluated at the parameters;
    the imaginary part is checked and dropped.
    """
    n = params.n_beams
    if indices is None:
        indices = indices_up_to(n, max_order)
    vals = numeric_values(symbol_table(n), params)
    out = {}
    for idx in indices:
        idx = tuple(idx)
        if sum(idx) > max_order:
            raise ValueError(f"index {idx} exceeds max_order {max_order}")
        z = np.asarray(moment_polynomial(idx, max_order=None).evaluate(vals), dtype=complex)
        scale = np.maximum(1.0, np.abs(z.real))
        if np.any(np.abs(z.imag) > IMAG_FAULT_TOL * scale):
            raise ArithmeticError(f"moment {idx} has an imaginary part; pairing fault")
        out[idx] = z.real if z.ndim else float(z.real)
    return IntensityMoments(n, out, max_order, "model")


# Stirling conversions


@lru_cache(maxsize=None)
def stirling_first(n: int, k: int) -> int:
    """Signed Stirling number of the first kind ``s(n, k)``."""
    if n == k:
        return 1
    if n == 0 or k == 0:
        return 0
    return stirling_first(n - 1, k - 1) - (n - 1) * stirling_first(n - 1, k)


@lru_cache(maxsize=None)
def stirling_second(n: int, k: int) -> int:
    if n == k:
        return 1
    if n == 0 or k == 0:
        return 0
    return stirling_second(n - 1, k - 1) + k * stirling_second(n - 1, k)


def _convert(values: Mapping[Index, object], n_beams: int, kernel) -> dict:
    out = {}
    for idx in values:
        total = 0
        for low in _lower_indices(idx):
            if sum(low) == 0:
                coeff = prod(kernel(l, 0) for l in idx)
                if coeff:
                    total = total + coeff
                continue
            coeff = prod(kernel(l, m) for l, m in zip(idx, low))
            if coeff:
                if low not in values:
                    raise KeyError(f"moment {low} needed to convert {idx}")
                total = total + coeff * values[low]
        out[idx] = total
    return out


def intensity_from_photon_moments(pm: PhotonMoments) -> IntensityMoments:
    """Normally ordered moments via ``<W^l> = sum_k s(l, k) <n^k>`` per beam."""
    return IntensityMoments(pm.n_beams, _convert(pm.values, pm.n_beams, stirling_first), pm.max_order, "measured")


def photon_from_intensity_moments(im: IntensityMoments) -> PhotonMoments:
    return PhotonMoments(im.n_beams, _convert(im.values, im.n_beams, stirling_second), im.max_order)


def moments_from_distribution(dist: JointDistribution, max_order: int, tail_warn: float = 1e-8) -> PhotonMoments:
    """Photon-number moments of a truncated distribution by direct summation."""
    if abs(dist.total() - 1.0) > 1e-6:
        raise ValueError(f"distribution not normalized (sum={dist.total():.9g})")
    if dist.edge_mass() > tail_warn:
        warnings.warn(f"truncation edge holds mass {dist.edge_mass():.3g}; moments may be biased", RuntimeWarning)
    n = dist.n_beams
    grids = [np.arange(s, dtype=float) for s in dist.shape]
    out = {}
    for idx in indices_up_to(n, max_order):
        w = dist.mass
        for ax, (l, g) in enumerate(zip(idx, grids)):
            if l:
                shape = [1] * n
                shape[ax] = -1
                w = w * (g ** l).reshape(shape)
        out[idx] = float(w.sum())
    return PhotonMoments(n, out, max_order)


def intensity_moments_from_distribution(dist: JointDistribution, max_order: int) -> IntensityMoments:
    """Factorial moments computed directly (avoids Stirling cancellation)."""
    if abs(dist.total() - 1.0) > 1e-6:
        raise ValueError(f"distribution not normalized (sum={dist.total():.9g})")
    n = dist.n_beams
    out = {}
    for idx in indices_up_to(n, max_order):
        w = dist.mass
        for ax, l in enumerate(idx):
            if l:
                g = np.arange(dist.shape[ax], dtype=float)
                fall = np.ones_like(g)
                for r in range(l):
                    fall = fall * (g - r)
                shape = [1] * n
                shape[ax] = -1
                w = w * fall.reshape(shape)
        out[idx] = float(w.sum())
    return IntensityMoments(n, out, max_order, "measured")


# raw / central / cumulant conversions


def _binom(idx: Index, low: Index) -> int:
    return prod(comb(l, m) for l, m in zip(idx, low))


def _sub(a: Index, b: Index) -> Index:
    return tuple(x - y for x, y in zip(a, b))


def _closed(values: Mapping[Index, object]) -> None:
    for idx in values:
        for low in _lower_indices(idx):
            if sum(low) and low not in values:
                raise KeyError(f"moment {low} required below {idx} is missing")


def raw_to_central(values: Mapping[Index, object], n_beams: int) -> dict:
    """``<(W1-<W1>)^l1 ...>`` by binomial expansion; first orders are zero."""
    _closed(values)
    mean = [values.get(tuple(int(i == j) for i in range(n_beams)), 0.0) for j in range(n_beams)]
    out = {}
    for idx in values:
        total = 0
        for low in _lower_indices(idx):
            raw = 1.0 if sum(low) == 0 else values[low]
            rest = _sub(idx, low)
            shift = 1.0
            for j, r in enumerate(rest):
                if r:
                    shift = shift * (-mean[j]) ** r
            total = total + _binom(idx, low) * raw * shift
        out[idx] = total
    return out


def central_to_raw(central: Mapping[Index, object], means, n_beams: int) -> dict:
    """Inverse of :func:`raw_to_central` given the means."""
    _closed(central)
    out = {}
    for idx in central:
        if sum(idx) == 1:
            out[idx] = means[idx.index(1)]
            continue
        total = 0
        for low in _lower_indices(idx):
            if sum(low) == 0:
                c = 1.0
            elif sum(low) == 1:
                continue
            else:
                c = central[low]
            rest = _sub(idx, low)
            shift = 1.0
            for j, r in enumerate(rest):
                if r:
                    shift = shift * means[j] ** r
            total = total + _binom(idx, low) * c * shift
        out[idx] = total
    return out


def _pivot_beam(idx: Index) -> int:
    return next(j for j, l in enumerate(idx) if l)


def raw_to_cumulants(values: Mapping[Index, object]) -> dict:
    """Joint cumulants from raw moments (recursion on the first nonzero beam)."""
    _closed(values)
    kappa: dict = {}
    for idx in sorted(values, key=lambda i: (sum(i), i)):
        j = _pivot_beam(idx)
        red = list(idx)
        red[j] -= 1
        red = tuple(red)
        total = values[idx]
        for low in _lower_indices(red):
            if low == red:
                continue
            up = list(low)
            up[j] += 1
            rest = _sub(red, low)
            m = 1.0 if sum(rest) == 0 else values[rest]
            total = total - _binom(red, low) * kappa[tuple(up)] * m
        kappa[idx] = total
    return kappa


def cumulants_to_raw(kappa: Mapping[Index, object]) -> dict:
    _closed(kappa)
    raw: dict = {}
    for idx in sorted(kappa, key=lambda i: (sum(i), i)):
        j = _pivot_beam(idx)
        red = list(idx)
        red[j] -= 1
        red = tuple(red)
        total = 0
        for low in _lower_indices(red):
            up = list(low)
            up[j] += 1
            rest = _sub(red, low)
            m = 1.0 if sum(rest) == 0 else raw[rest]
            total = total + _binom(red, low) * kappa[tuple(up)] * m
        raw[idx] = total
    return raw


def _scale_modes(values: Mapping[Index, object], factor) -> dict:
    # extended precision: reducing an M-mode field cancels about M^(order-1) in relative terms
    ext = {k: np.asarray(v, dtype=np.longdouble) for k, v in values.items()}
    kappa = raw_to_cumulants(ext)
    f = np.longdouble(factor)
    return cumulants_to_raw({k: v * f for k, v in kappa.items()})


def _as_float(values: dict) -> dict:
    return {k: float(v) if np.ndim(v) == 0 else np.asarray(v, dtype=float) for k, v in values.items()}


def reduce_to_single_mode(whole: IntensityMoments, M: float) -> IntensityMoments:
    """Moments of one of ``M`` identical independent modes making up the field."""
    if not M > 0:
        raise ValueError("number of modes M must be positive")
    vals = _as_float(_scale_modes(whole.values, 1.0 / M))
    return IntensityMoments(whole.n_beams, vals, whole.max_order, "reduced")


def compose_multimode(single: IntensityMoments, M: float) -> IntensityMoments:
    """Whole-field moments of ``M`` identical independent copies of a mode.

    Values are returned in extended precision (``np.longdouble``) so that
    :func:`reduce_to_single_mode` can undo the map to ~1e-10 at large ``M``.
    """
    if not M > 0:
        raise ValueError("number of modes M must be positive")
    vals = {k: v[()] for k, v in _scale_modes(single.values, M).items()}
    return IntensityMoments(single.n_beams, vals, single.max_order, single.provenance)


# CSV


def write_moments_csv(m: _MomentMap, path, header: str | None = None) -> None:
    buf = io.StringIO()
    prov = getattr(m, "provenance", "photon")
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    buf.write(f"# n_beams={m.n_beams} max_order={m.max_order} provenance={prov}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"l{i + 1}" for i in range(m.n_beams)] + ["value"])
    for idx in sorted(m.values, key=lambda i: (sum(i), i)):
        w.writerow(list(idx) + [repr(float(m.values[idx]))])
    Path(path).write_text(buf.getvalue())


def read_moments_csv(path):
    meta = {}
    rows = []
    with open(path, newline="") as fh:
        body = []
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        key, val = tok.split("=", 1)
                        if key in ("n_beams", "max_order", "provenance"):
                            meta[key] = val
                continue
            body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    n = len(header) - 1
    for row in reader:
        if row:
            rows.append((tuple(int(x) for x in row[:n]), float(row[n])))
    vals = dict(rows)
    max_order = int(meta.get("max_order", 0))
    prov = meta.get("provenance", "measured")
    if prov == "photon":
        return PhotonMoments(n, vals, max_order)
    return IntensityMoments(n, vals, max_order, prov)
