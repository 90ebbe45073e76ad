"""Multi-mode thermal model of symmetric three-beam states built from twin beams.

A weak twin beam detected in one double window is a convolution of three
Mandel-Rice fields: paired photons, signal noise and idler noise.  ``w``
windows merged together scale every mode count by ``w``.  Symmetric pair
blocks exchange the signal and idler roles, three of them are arranged
cyclically over beams 1-2, 2-3 and 3-1, and every beam receives independent
noise built from half signal and half idler windows.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal, stats

from .detection import PhotocountChannels
from .distribution import JointDistribution
from .gauss_core import GaussianStateParams

TAIL = 1e-13
TAIL_ERROR = 1e-9
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class TwbModelParams:
    """Mode counts ``m``, mean photons per mode ``b`` and detector constants.

    Detector values are per double window: ``eta`` efficiency and ``d`` mean
    dark count of the signal and idler APDs.
    """

    m_p: float = 10.0
    m_s: float = 10.0
    m_i: float = 10.0
    b_p: float = 9.8e-3
    b_s: float = 3.6e-4
    b_i: float = 3.9e-5
    eta_s: float = 0.25
    eta_i: float = 0.25
    d_s: float = 1e-4
    d_i: float = 1e-4

    def __post_init__(self):
        for name in ("m_p", "m_s", "m_i"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("b_p", "b_s", "b_i", "d_s", "d_i"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("eta_s", "eta_i"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")

    @classmethod
    def from_dict(cls, doc: dict) -> "TwbModelParams":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model parameters: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)

    def signal_mean(self, w: float = 1.0) -> float:
        return w * (self.m_p * self.b_p + self.m_s * self.b_s)

    def idler_mean(self, w: float = 1.0) -> float:
        return w * (self.m_p * self.b_p + self.m_i * self.b_i)


def mandel_rice(n, m: float, b: float):
    """``Gamma(n+m) / (n! Gamma(m)) * b^n / (1+b)^(n+m)``."""
    if b == 0:
        return np.where(np.asarray(n) == 0, 1.0, 0.0)
    return stats.nbinom.pmf(n, m, 1.0 / (1.0 + b))


def mandel_rice_pmf(m: float, b: float, tail: float = TAIL) -> np.ndarray:
    """Probabilities ``p(0..n_max)`` with the dropped tail below ``tail``."""
    if b == 0 or m == 0:
        return np.ones(1)
    dist = stats.nbinom(m, 1.0 / (1.0 + b))
    n_max = int(dist.isf(tail)) + 1
    while dist.sf(n_max) > tail:
        n_max += 1
    return dist.pmf(np.arange(n_max + 1))


def trim(mass: np.ndarray, tol: float = 1e-17) -> np.ndarray:
    """Drop trailing slices along every axis whose total mass is below ``tol``."""
    for ax in range(mass.ndim):
        other = tuple(i for i in range(mass.ndim) if i != ax)
        totals = mass.sum(axis=other) if other else mass
        keep = len(totals)
        while keep > 1 and totals[keep - 1] < tol:
            keep -= 1
        mass = np.take(mass, np.arange(keep), axis=ax)
    return mass


def _check_tail(mass: np.ndarray, what: str) -> None:
    lost = 1.0 - float(mass.sum())
    if lost > TAIL_ERROR:
        raise ValueError(f"{what}: truncated tail mass {lost:.3g} exceeds {TAIL_ERROR}")


def twb_joint(params: TwbModelParams, w: float = 1.0) -> JointDistribution:
    """Signal-idler photon-number distribution of ``w`` merged double windows."""
    if w == 0:
        return JointDistribution.delta((0, 0), (1, 1))
    ps = mandel_rice_pmf(w * params.m_s, params.b_s)
    pi = mandel_rice_pmf(w * params.m_i, params.b_i)
    pp = mandel_rice_pmf(w * params.m_p, params.b_p)
    noise = np.outer(ps, pi)
    out = np.zeros((len(ps) + len(pp) - 1, len(pi) + len(pp) - 1))
    for n, weight in enumerate(pp):
        out[n:n + len(ps), n:n + len(pi)] += weight * noise
    _check_tail(out, "twin beam")
    return JointDistribution(trim(out))


def symmetrize(p: JointDistribution) -> JointDistribution:
    """Convolve a two-beam distribution with its signal-idler swapped copy."""
    if p.n_beams != 2:
        raise ValueError("two-beam distribution required")
    out = signal.convolve(p.mass, p.mass.T, method="direct")
    out = 0.5 * (out + out.T)  # exact in theory; removes rounding asymmetry
    return JointDistribution(trim(out), p.kind)


def correlated_part(p_sym: JointDistribution) -> JointDistribution:
    """Cyclic pairing of beams 1-2, 2-3 and 3-1 by three symmetric blocks."""
    q = p_sym.mass
    ka, kb = q.shape
    n = ka + kb - 1
    # shifted[n, l, l'] = q(n - l, l')
    shifted = np.zeros((n, kb, kb))
    for l in range(kb):
        shifted[l:l + ka, l, :] = q
    pair = np.einsum("xab,ybc->xayc", shifted, shifted)
    out = np.einsum("xayc,zca->xyz", pair, shifted)
    return JointDistribution(trim(np.maximum(out, 0.0)), p_sym.kind)


def noise_part(params: TwbModelParams, w_n: int) -> np.ndarray:
    """Per-beam noise distribution from ``w_n/2`` signal and ``w_n/2`` idler windows."""
    if w_n % 2:
        raise ValueError("w_n must be even")
    if w_n == 0:
        return np.ones(1)
    half = twb_joint(params, w_n / 2)
    return trim(np.convolve(half.marginal(0), half.marginal(1)))


def _convolve_axes(mass: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = mass
    for ax in range(mass.ndim):
        shape = [1] * mass.ndim
        shape[ax] = len(kernel)
        out = signal.convolve(out, kernel.reshape(shape), method="direct")
    return out


def cyclic_asymmetry(mass: np.ndarray) -> float:
    return float(np.max(np.abs(mass - np.transpose(mass, (1, 2, 0)))))


def full_asymmetry(mass: np.ndarray) -> float:
    return max(cyclic_asymmetry(mass), float(np.max(np.abs(mass - np.transpose(mass, (1, 0, 2))))))


def build_state_distribution(params: TwbModelParams, w_p: int, w_n: int) -> JointDistribution:
    """Photon-number distribution of ``w_p`` correlated units plus ``w_n`` noise windows."""
    if w_p < 0 or w_n < 0:
        raise ValueError("window counts must be non-negative")
    if w_p == 0:
        corr = np.ones((1, 1, 1))
    else:
        corr = correlated_part(symmetrize(twb_joint(params, w_p))).mass
    mass = _convolve_axes(corr, noise_part(params, w_n))
    mass = trim(np.maximum(mass, 0.0))
    _check_tail(mass, "three-beam state")
    asym = cyclic_asymmetry(mass)
    if asym > SYMMETRY_TOL:
        raise ValueError(f"state lost cyclic symmetry ({asym:.3g})")
    return JointDistribution(mass)


def model_intensity_moments(params: TwbModelParams, w_p: int, w_n: int, max_order: int = 6):
    """Whole-field intensity moments of the model state."""
    from .moments import intensity_moments_from_distribution

    return intensity_moments_from_distribution(build_state_distribution(params, w_p, w_n), max_order)


def reduced_model_moments(params: TwbModelParams, w_p: int, w_n: int, M: float, max_order: int = 6):
    """Model moments reduced to one effective mode out of ``M``."""
    from .moments import reduce_to_single_mode

    return reduce_to_single_mode(model_intensity_moments(params, w_p, w_n, max_order), M)


CUMULANT_TOL = 1e-9


def gaussian_params_from_moments(m, strict: bool = False) -> GaussianStateParams:
    """Invert the second-order relations under the model's structure.

    Assumed: ``C_j = 0`` (thermal and pair fields carry no single-beam
    squeezing) and ``Dbar_jk = 0`` (no mode is shared coherently between
    beams without being paired).  The second assumption is checked through
    the third-order joint cumulant, which for a symmetric field with real
    ``D`` and ``Dbar`` equals ``-2 Dbar (Dbar^2 + 3 D^2)``.  Unphysical
    results are reported with a warning, or raised in ``strict`` mode.
    """
    import warnings

    from .gauss_core import build_covariance, is_physical
    from .moments import raw_to_cumulants

    if m.n_beams != 3:
        raise ValueError("three-beam moments required")
    asym = m.asymmetry()
    if asym > 1e-9:
        raise ValueError(f"model moments are not exchange symmetric ({asym:.3g})")
    vals = {k: m[k] for k in [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1)]}
    k111 = raw_to_cumulants(vals)[(1, 1, 1)]
    scale = max(abs(m.covariance(0, 1)) ** 1.5, 1e-300)
    if abs(k111) > CUMULANT_TOL * max(1.0, scale):
        raise ValueError(f"joint cumulant <dW1 dW2 dW3> = {k111:.3g} contradicts Dbar = 0")
    b = np.array([m.mean(j) for j in range(3)], dtype=float)
    g = np.array([m.covariance(0, 1), m.covariance(0, 2), m.covariance(1, 2)], dtype=float)
    if np.any(g < -CUMULANT_TOL):
        raise ValueError("negative cross-covariance cannot come from pairing")
    # cancellation noise in independent beams leaves covariances near 1e-15
    d = np.where(g > CUMULANT_TOL * np.maximum(b, 1.0) ** 2, np.sqrt(np.abs(g)), 0.0)
    gp = GaussianStateParams(3, b, np.zeros(3), d.astype(complex), np.zeros(3, dtype=complex))
    if not is_physical(build_covariance(gp)):
        msg = "effective-mode parameters are not a physical Gaussian state"
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, RuntimeWarning)
    return gp


def gaussian_params_of_model(params: TwbModelParams, w_p: int, w_n: int, M: float,
                             strict: bool = False) -> GaussianStateParams:
    """Effective single-mode parameters of the model state for ``M`` modes."""
    if not M > 0:
        raise ValueError("M must be positive")
    return gaussian_params_from_moments(reduced_model_moments(params, w_p, w_n, M, 3), strict)


def mean_noise(params: TwbModelParams, w_n: int) -> float:
    """Noise-part mean photon number per beam."""
    return params.signal_mean(w_n / 2) + params.idler_mean(w_n / 2)


def mean_correlated(params: TwbModelParams, w_p: int) -> float:
    """Correlated-part mean photon number per beam (two symmetric blocks)."""
    return 2 * (params.signal_mean(w_p) + params.idler_mean(w_p))


def click_probability(p: np.ndarray, eta: float, dark: float) -> float:
    """``1 - (1-dark) sum_n p(n) (1-eta)^n`` for one APD."""
    n = np.arange(len(p))
    return 1.0 - (1.0 - dark) * float(p @ (1.0 - eta) ** n)


def sample_channels(params: TwbModelParams, n_windows: int, seed: int) -> PhotocountChannels:
    """Synthetic APD channels: one twin-beam draw and one click trial per window."""
    rng = np.random.default_rng(seed)
    p = twb_joint(params, 1).mass
    flat = p.ravel() / p.sum()
    idx = rng.choice(flat.size, size=n_windows, p=flat)
    ns, ni = np.unravel_index(idx, p.shape)
    u = rng.random((2, n_windows))
    no_click_s = (1.0 - params.d_s) * (1.0 - params.eta_s) ** ns
    no_click_i = (1.0 - params.d_i) * (1.0 - params.eta_i) ** ni
    return PhotocountChannels((u[0] >= no_click_s).astype(int), (u[1] >= no_click_i).astype(int))


@dataclass(frozen=True)
class SweepConfig:
    """Noise sweep: fixed ``w_p`` and a list of even ``w_n``."""

    w_p: int = 2
    w_n_list: tuple[int, ...] = field(default_factory=lambda: tuple(range(0, 60, 2)))

    def __post_init__(self):
        object.__setattr__(self, "w_n_list", tuple(int(w) for w in self.w_n_list))
        if any(w % 2 or w < 0 for w in self.w_n_list):
            raise ValueError("w_n values must be even and non-negative")
        if self.w_p < 0:
            raise ValueError("w_p must be non-negative")

    def mean_noise(self, params: TwbModelParams) -> list[float]:
        return [mean_noise(params, w) for w in self.w_n_list]


def write_sweep_csv(path, rows, header: str | None = None) -> None:
    """Rows of ``(w_n, mean_noise, value, lower, upper)``."""
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["w_n", "mean_noise", "value", "lower", "upper"])
    for r in rows:
        w.writerow([r[0]] + [repr(float(x)) for x in r[1:]])
    Path(path).write_text(buf.getvalue())
