"""Truncated N-dimensional probability arrays and their file formats."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

KINDS = ("photocount_histogram", "photon_distribution")
NORM_TOL = 1e-9
_MAGIC = b"GQD1"


@dataclass(frozen=True)
class JointDistribution:
    """Probability mass on the grid ``0..shape[i]-1`` along each beam axis."""

    mass: np.ndarray
    kind: str = "photon_distribution"

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if m.ndim < 1:
            raise ValueError("distribution needs at least one axis")
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if np.any(m < 0):
            raise ValueError("negative probability mass")
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    @classmethod
    def normalized(cls, mass, kind: str = "photon_distribution") -> "JointDistribution":
        m = np.asarray(mass, dtype=float)
        total = m.sum()
        if total <= 0:
            raise ValueError("distribution has no mass")
        return cls(m / total, kind)

    @classmethod
    def delta(cls, index, shape, kind: str = "photon_distribution") -> "JointDistribution":
        m = np.zeros(shape)
        m[tuple(index)] = 1.0
        return cls(m, kind)

    @property
    def n_beams(self) -> int:
        return self.mass.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mass.shape

    def total(self) -> float:
        return float(self.mass.sum())

    def check_normalized(self, tol: float = NORM_TOL) -> None:
        if abs(self.total() - 1.0) > tol:
            raise ValueError(f"distribution not normalized (sum={self.total():.12g})")

    def marginal(self, beam: int) -> np.ndarray:
        axes = tuple(i for i in range(self.n_beams) if i != beam)
        return self.mass.sum(axis=axes)

    def means(self) -> np.ndarray:
        return np.array([np.arange(n) @ self.marginal(j) for j, n in enumerate(self.shape)])

    def edge_mass(self) -> float:
        """Largest mass on the last slice of any axis (truncation audit)."""
        out = 0.0
        for ax in range(self.n_beams):
            out = max(out, float(np.take(self.mass, -1, axis=ax).sum()))
        return out

    def padded(self, shape) -> "JointDistribution":
        pads = [(0, s - n) for s, n in zip(shape, self.shape)]
        if any(p[1] < 0 for p in pads):
            raise ValueError("cannot pad to a smaller shape")
        return JointDistribution(np.pad(self.mass, pads), self.kind)

    def total_variation(self, other: "JointDistribution") -> float:
        shape = tuple(max(a, b) for a, b in zip(self.shape, other.shape))
        return 0.5 * float(np.abs(self.padded(shape).mass - other.padded(shape).mass).sum())


def write_csv(dist: JointDistribution, path, header: str | None = None) -> None:
    """Sparse CSV: one row per nonzero bin, columns ``c1..cN,mass``."""
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    buf.write(f"# kind={dist.kind} shape={'x'.join(map(str, dist.shape))}\n")
    w = csv.writer(buf, lineterminator="\n")
    prefix = "c" if dist.kind == "photocount_histogram" else "n"
    w.writerow([f"{prefix}{i + 1}" for i in range(dist.n_beams)] + ["mass"])
    for idx in zip(*np.nonzero(dist.mass)):
        w.writerow([int(i) for i in idx] + [repr(float(dist.mass[idx]))])
    Path(path).write_text(buf.getvalue())


def read_csv(path, normalize: bool = False) -> JointDistribution:
    kind = "photon_distribution"
    shape = None
    rows = []
    with open(path, newline="") as fh:
        lines = []
        for line in fh:
            if line.startswith("#"):
                for tok in line[1:].split():
                    if tok.startswith("kind="):
                        kind = tok[5:]
                    elif tok.startswith("shape="):
                        shape = tuple(int(x) for x in tok[6:].split("x"))
                continue
            lines.append(line)
    reader = csv.reader(lines)
    header = next(reader)
    n = len(header) - 1
    for row in reader:
        if not row:
            continue
        if len(row) != n + 1:
            raise ValueError(f"malformed row {row!r}")
        idx = tuple(int(x) for x in row[:n])
        if any(i < 0 for i in idx):
            raise ValueError(f"negative index in row {row!r}")
        rows.append((idx, float(row[n])))
    if shape is None:
        shape = tuple(max(r[0][i] for r in rows) + 1 for i in range(n)) if rows else (1,) * n
    mass = np.zeros(shape)
    for idx, v in rows:
        mass[idx] += v
    if normalize:
        return JointDistribution.normalized(mass, kind)
    return JointDistribution(mass, kind)


def write_binary(dist: JointDistribution, path) -> None:
    """Dense little-endian format: magic, kind byte, ndim, shape, float64 data."""
    head = _MAGIC + struct.pack("<BB", KINDS.index(dist.kind), dist.n_beams)
    head += struct.pack(f"<{dist.n_beams}I", *dist.shape)
    Path(path).write_bytes(head + dist.mass.astype("<f8").tobytes(order="C"))


def read_binary(path) -> JointDistribution:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError("not a distribution file")
    kind_i, ndim = struct.unpack_from("<BB", raw, 4)
    shape = struct.unpack_from(f"<{ndim}I", raw, 6)
    off = 6 + 4 * ndim
    data = np.frombuffer(raw, dtype="<f8", offset=off)
    if data.size != int(np.prod(shape)):
        raise ValueError("truncated distribution file")
    return JointDistribution(data.reshape(shape).astype(float), KINDS[kind_i])
