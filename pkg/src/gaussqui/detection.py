"""From photocount channels to photon-number distributions.

Compound beams are summed from many double windows of two APD channels.
Each beam is then treated as one effective multi-pixel detector whose
response matrix ``T(c, n)`` gives the probability of ``c`` fired pixels for
``n`` incident photons, and the photon-number distribution is recovered by
the expectation-maximization fixed point of the Poisson-free likelihood.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import mpmath
import numpy as np
from scipy import stats

from .distribution import JointDistribution

MIN_STRIDE = 1000
NOISE_LAYOUTS = ("interleaved", "split_halves")


@dataclass(frozen=True)
class PhotocountChannels:
    """Clicks per double window in the signal and idler channels."""

    signal: np.ndarray
    idler: np.ndarray
    max_clicks: int = 1

    def __post_init__(self):
        s = np.asarray(self.signal, dtype=np.int64)
        i = np.asarray(self.idler, dtype=np.int64)
        if s.shape != i.shape or s.ndim != 1:
            raise ValueError("signal and idler must be 1-D and of equal length")
        for arr in (s, i):
            if arr.size and (arr.min() < 0 or arr.max() > self.max_clicks):
                raise ValueError(f"clicks outside 0..{self.max_clicks}")
        object.__setattr__(self, "signal", s)
        object.__setattr__(self, "idler", i)

    def __len__(self) -> int:
        return len(self.signal)

    def write_csv(self, path, header: str | None = None) -> None:
        buf = io.StringIO()
        if header:
            for line in header.splitlines():
                buf.write(f"# {line}\n")
        buf.write("signal_clicks,idler_clicks\n")
        buf.writelines(f"{s},{i}\n" for s, i in zip(self.signal.tolist(), self.idler.tolist()))
        Path(path).write_text(buf.getvalue())

    @classmethod
    def read_csv(cls, path) -> "PhotocountChannels":
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        if not rows or rows[0] != ["signal_clicks", "idler_clicks"]:
            raise ValueError("expected header signal_clicks,idler_clicks")
        data = np.array([[int(x) for x in r] for r in rows[1:] if r], dtype=np.int64).reshape(-1, 2)
        return cls(data[:, 0], data[:, 1], max(1, int(data.max(initial=1))))

    def write_binary(self, path) -> None:
        """Little-endian uint8 pairs (signal, idler) per window."""
        Path(path).write_bytes(np.stack([self.signal, self.idler], axis=1).astype("<u1").tobytes())

    @classmethod
    def read_binary(cls, path) -> "PhotocountChannels":
        data = np.frombuffer(Path(path).read_bytes(), dtype="<u1").reshape(-1, 2).astype(np.int64)
        return cls(data[:, 0], data[:, 1], max(1, int(data.max(initial=1))))


def _correlated_offsets(w_p: int):
    """Zero-based (channel, offset) lists per beam for one realization."""
    beams = [[], [], []]
    for k in range(w_p):
        o = 6 * k
        beams[0] += [("s", o), ("i", o + 2), ("i", o + 3), ("s", o + 5)]
        beams[1] += [("i", o), ("s", o + 1), ("s", o + 3), ("i", o + 4)]
        beams[2] += [("i", o + 1), ("s", o + 2), ("s", o + 4), ("i", o + 5)]
    return beams


def _noise_offsets(w_n: int, layout: str = "interleaved"):
    """Noise windows per beam; ``3 w_n`` double windows are reserved.

    ``interleaved`` follows the literal index pattern: in each block of six
    double windows beam ``b`` takes the signal of window ``b`` and the idler
    of window ``b + 3``.  ``split_halves`` takes all signals from the first
    half of the reserved region and all idlers from the second half.
    Either way no double window feeds signal and idler to the noise.
    """
    if layout not in NOISE_LAYOUTS:
        raise ValueError(f"noise layout must be one of {NOISE_LAYOUTS}")
    beams = [[], [], []]
    half = w_n // 2
    for k in range(half):
        for b in range(3):
            if layout == "interleaved":
                beams[b] += [("s", 6 * k + b), ("i", 6 * k + b + 3)]
            else:
                beams[b] += [("s", 3 * k + b), ("i", 3 * half + 3 * k + b)]
    return beams


def max_counts(w_p: int, w_n: int, max_clicks: int = 1) -> int:
    return max_clicks * (4 * w_p + w_n)


def build_compound_realizations(
    ch: PhotocountChannels,
    w_p: int,
    w_n: int,
    noise_offset_stride: int = MIN_STRIDE,
    overlapping: bool = False,
    noise_layout: str = "interleaved",
) -> JointDistribution:
    """Photocount histogram ``f(c1, c2, c3)`` of compound three-beam realizations.

    Non-overlapping (default): realization ``r`` uses correlated windows from
    ``6 w_p r`` and noise windows from ``J + 3 w_n r`` with the noise region
    ``J`` placed after the correlated region and at least
    ``noise_offset_stride`` windows in.  No window is used twice.
    Overlapping: every start ``j`` is used with noise start ``j + stride``.
    """
    if noise_offset_stride < MIN_STRIDE:
        raise ValueError(f"noise_offset_stride must be >= {MIN_STRIDE}")
    if w_n % 2 or w_n < 0 or w_p < 0:
        raise ValueError("need w_p >= 0 and even w_n >= 0")
    if w_p == 0 and w_n == 0:
        raise ValueError("realization uses no windows")
    corr_len, noise_len = 6 * w_p, 3 * w_n
    length = len(ch)
    if overlapping:
        n_real = min(length - corr_len, length - noise_offset_stride - noise_len) + 1
        j = np.arange(max(n_real, 0))
        jt = j + noise_offset_stride
    else:
        n_real = length // (corr_len + noise_len)
        while n_real > 0 and max(n_real * corr_len, noise_offset_stride) + n_real * noise_len > length:
            n_real -= 1
        j = corr_len * np.arange(n_real)
        jt = max(n_real * corr_len, noise_offset_stride) + noise_len * np.arange(n_real)
    if n_real <= 0:
        raise ValueError(f"channels of length {length} too short for one realization")
    chans = {"s": ch.signal, "i": ch.idler}
    counts = []
    for corr, noise in zip(_correlated_offsets(w_p), _noise_offsets(w_n, noise_layout)):
        c = np.zeros(n_real, dtype=np.int64)
        for name, off in corr:
            c += chans[name][j + off]
        for name, off in noise:
            c += chans[name][jt + off]
        counts.append(c)
    size = max_counts(w_p, w_n, ch.max_clicks) + 1
    hist = np.zeros((size,) * 3)
    np.add.at(hist, tuple(counts), 1.0)
    return JointDistribution(hist / n_real, "photocount_histogram")


@dataclass(frozen=True)
class DetectorModel:
    """``n_pixels`` equal pixels, efficiency ``eta`` and mean dark count ``dark_total``."""

    n_pixels: int
    efficiency: float
    dark_total: float = 0.0

    def __post_init__(self):
        if self.n_pixels < 1:
            raise ValueError("n_pixels must be >= 1")
        if not 0 <= self.efficiency <= 1:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.dark_total < 0 or self.dark_per_pixel >= 1:
            raise ValueError("dark count per pixel must lie in [0, 1)")

    @property
    def dark_per_pixel(self) -> float:
        return self.dark_total / self.n_pixels

    @classmethod
    def effective(cls, w_p: int, w_n: int, eta_s: float, eta_i: float, d_s: float, d_i: float) -> "DetectorModel":
        """Per-beam detector of a compound beam: mean efficiency, summed dark counts."""
        return cls(2 * w_p + w_n, (eta_s + eta_i) / 2, (d_s + d_i) * (2 * w_p + w_n / 2))

    def matrix(self, n_max: int) -> np.ndarray:
        """``T[c, n]`` for ``c = 0..N_d`` and ``n = 0..n_max``."""
        return _response_matrix(self.n_pixels, self.efficiency, self.dark_per_pixel, n_max)


def detection_matrix(det: DetectorModel, c: int, n: int, dps: int = 50) -> float:
    """Closed-form response ``T(c, n)`` evaluated with ``dps`` decimal digits.

    The alternating inner sum loses up to ``N_d`` digits to cancellation, so
    it is summed in extended precision.
    """
    if n < 0 or c < 0:
        raise ValueError("c and n must be non-negative")
    if c > det.n_pixels:
        return 0.0
    with mpmath.workdps(dps + det.n_pixels // 2):
        nd = det.n_pixels
        eta = mpmath.mpf(det.efficiency)
        dd = mpmath.mpf(det.dark_total) / nd
        total = mpmath.mpf(0)
        for l in range(c + 1):
            # (1-eta)^n (1 + l eta / (N_d (1-eta)))^n written without dividing by 1-eta
            total += mpmath.binomial(c, l) * (-1) ** l * (1 - dd) ** (nd - l) * (1 - eta + l * eta / nd) ** n
        return float(mpmath.binomial(nd, c) * (-1) ** c * total)


@lru_cache(maxsize=64)
def _response_matrix(n_pixels: int, eta: float, dark: float, n_max: int) -> np.ndarray:
    """Positive-term construction of the same matrix.

    Each photon is detected with probability ``eta`` and lands on a uniformly
    chosen pixel; ``occupancy[k, j]`` is the probability that ``k`` detected
    photons fire ``j`` distinct pixels.  Silent pixels then fire from dark
    counts with probability ``dark``.  All terms are non-negative.
    """
    occupancy = np.zeros((n_max + 1, n_pixels + 1))
    occupancy[0, 0] = 1.0
    j = np.arange(n_pixels + 1)
    for k in range(n_max):
        prev = occupancy[k]
        occupancy[k + 1] = prev * j / n_pixels
        occupancy[k + 1, 1:] += prev[:-1] * (n_pixels - j[:-1]) / n_pixels
    n = np.arange(n_max + 1)
    thinning = stats.binom.pmf(n[None, :], n[:, None], eta)  # [n, k]
    fired = thinning @ occupancy  # [n, j]
    dark_fire = np.zeros((n_pixels + 1, n_pixels + 1))  # [j, c]
    for jj in range(n_pixels + 1):
        dark_fire[jj, jj:] = stats.binom.pmf(np.arange(n_pixels - jj + 1), n_pixels - jj, dark)
    out = (fired @ dark_fire).T
    out.setflags(write=False)
    return out


def _as_detectors(det, n_beams: int) -> list[DetectorModel]:
    if isinstance(det, DetectorModel):
        return [det] * n_beams
    dets = list(det)
    if len(dets) != n_beams:
        raise ValueError("one detector per beam required")
    return dets


def _apply(mats, p: np.ndarray) -> np.ndarray:
    out = p
    for ax, t in enumerate(mats):
        out = np.moveaxis(np.tensordot(t, out, axes=([1], [ax])), 0, ax)
    return out


def _apply_adjoint(mats, f: np.ndarray) -> np.ndarray:
    return _apply([t.T for t in mats], f)


def _matrices(dets, shape) -> list[np.ndarray]:
    return [d.matrix(n - 1) for d, n in zip(dets, shape)]


def forward_map(p: JointDistribution, det) -> JointDistribution:
    """Photocount histogram produced by ``p`` behind one detector per beam."""
    if abs(p.total() - 1.0) > 1e-6:
        raise ValueError(f"photon distribution lost {1.0 - p.total():.3g} of its mass")
    dets = _as_detectors(det, p.n_beams)
    f = _apply(_matrices(dets, p.shape), p.mass)
    return JointDistribution(np.maximum(f, 0.0), "photocount_histogram")


@dataclass
class EmResult:
    distribution: JointDistribution
    iterations: int
    log_likelihood: float
    kl_divergence: float
    converged: bool
    last_step: float = 0.0
    history: list[float] = field(default_factory=list)
    monotonicity_violations: int = 0

    def metadata(self) -> dict:
        return {
            "iterations": self.iterations,
            "log_likelihood": self.log_likelihood,
            "kl_divergence": self.kl_divergence,
            "converged": self.converged,
            "last_step_l1": self.last_step,
            "monotonicity_violations": self.monotonicity_violations,
        }


class ConvergenceError(RuntimeError):
    pass


def _loglik(f: np.ndarray, support: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(f[support] * np.log(q[support])))


def kl_divergence(f: np.ndarray, q: np.ndarray) -> float:
    s = f > 0
    return float(np.sum(f[s] * (np.log(f[s]) - np.log(q[s]))))


def reconstruct_em(
    f: JointDistribution,
    det,
    photon_shape=None,
    max_iters: int = 100_000,
    tol: float = 1e-10,
    init="uniform",
    check_monotone: bool = False,
    keep_history: bool = False,
    mono_tol: float = 1e-13,
    step_tol: float | None = None,
) -> EmResult:
    """Maximum-likelihood photon-number distribution for histogram ``f``.

    Stops when the relative log-likelihood gain of one iteration drops below
    ``tol`` or after ``max_iters`` iterations.  With ``step_tol`` set, the
    L1 change of ``p`` in one iteration must also fall below it; the
    likelihood flattens long before ``p`` settles in weakly identified
    directions.  ``init`` is ``"uniform"`` or a
    photon-number array of the target shape.
    """
    f.check_normalized()
    fm = f.mass
    dets = _as_detectors(det, f.n_beams)
    if photon_shape is None:
        photon_shape = f.shape
    photon_shape = tuple(int(n) for n in photon_shape)
    # pad the count axes to N_d + 1 so every column of T sums to one
    pad = [(0, max(0, d.n_pixels + 1 - c)) for d, c in zip(dets, f.shape)]
    fm = np.pad(fm, pad)
    mats = [_fit_rows(d.matrix(n - 1), c) for d, n, c in zip(dets, photon_shape, fm.shape)]
    if isinstance(init, str):
        if init != "uniform":
            raise ValueError("init must be 'uniform' or an array")
        p = np.full(photon_shape, 1.0 / np.prod(photon_shape))
    else:
        p = np.asarray(init, dtype=float)
        if p.shape != photon_shape or np.any(p < 0):
            raise ValueError("initial distribution has the wrong shape or negative mass")
        p = p / p.sum()
    support = fm > 0
    q = _apply(mats, p)
    bad = support & (q <= 0)
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"histogram bin {idx} cannot be produced by the detector model (zero denominator)")
    ll = _loglik(fm, support, q)
    history = [ll] if keep_history else []
    violations = 0
    converged = False
    it = 0
    step = 0.0
    ratio = np.zeros_like(fm)
    for it in range(1, max_iters + 1):
        ratio[support] = fm[support] / q[support]
        p_new = p * _apply_adjoint(mats, ratio)
        step = float(np.abs(p_new - p).sum())
        p = p_new
        q = _apply(mats, p)
        new = _loglik(fm, support, q)
        if keep_history:
            history.append(new)
        if new < ll - mono_tol * max(1.0, abs(ll)):
            violations += 1
            if check_monotone:
                raise AssertionError(f"log-likelihood decreased at iteration {it}: {ll!r} -> {new!r}")
        gain = abs(new - ll) / max(abs(ll), 1e-300)
        ll = new
        if gain < tol and (step_tol is None or step < step_tol):
            converged = True
            break
    p = np.maximum(p, 0.0)
    p = p / p.sum()
    return EmResult(
        JointDistribution(p, "photon_distribution"),
        it,
        ll,
        kl_divergence(fm, _apply(mats, p)),
        converged,
        step,
        history,
        violations,
    )


def _fit_rows(t: np.ndarray, rows: int) -> np.ndarray:
    """Zero-pad the count axis of ``T`` to the histogram length (``c > N_d`` is impossible)."""
    return np.vstack([t, np.zeros((rows - t.shape[0], t.shape[1]))])
