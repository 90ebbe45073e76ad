"""Declarative tables of intensity-moment products.

A term is ``coefficient * <W^f1> <W^f2> ...`` with each factor a power tuple
``(l1, ..., lN)``.  The empty factor tuple is the constant term.  Tables are
evaluated against any mapping ``powers -> value`` and can be expanded
symbolically through :mod:`gaussqui.wick`.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import permutations
from typing import Iterable, Mapping, Sequence

from .polynomial import ParamPolynomial, symbol_table
from .wick import moment_polynomial

Factor = tuple[int, ...]
Product = tuple[Factor, ...]


def canonical_product(factors: Iterable[Sequence[int]]) -> Product:
    fs = [tuple(int(x) for x in f) for f in factors]
    fs = [f for f in fs if any(f)]
    return tuple(sorted(fs, key=factor_key))


def factor_key(f: Factor) -> tuple:
    return (sum(f), f)


def product_key(p: Product) -> tuple:
    """Column order: total order, then factor lists compared lexicographically."""
    return (sum(sum(f) for f in p), [factor_key(f) for f in p])


def product_order(p: Product) -> int:
    return sum(sum(f) for f in p)


def _fmt_factor(f: Factor) -> str:
    body = " ".join(f"W{j + 1}" if l == 1 else f"W{j + 1}^{l}" for j, l in enumerate(f) if l)
    return f"<{body}>"


def format_product(p: Product) -> str:
    if not p:
        return "1"
    out = []
    i = 0
    while i < len(p):
        j = i
        while j < len(p) and p[j] == p[i]:
            j += 1
        s = _fmt_factor(p[i])
        out.append(s if j - i == 1 else f"{s}^{j - i}")
        i = j
    return " ".join(out)


@dataclass(frozen=True)
class TermTable:
    """Sum of rational multiples of moment products over ``n_beams`` beams."""

    n_beams: int
    terms: tuple[tuple[Fraction, Product], ...]

    @classmethod
    def from_pairs(cls, n_beams: int, pairs: Iterable[tuple[object, Iterable[Sequence[int]]]]) -> "TermTable":
        acc: dict[Product, Fraction] = {}
        for coeff, factors in pairs:
            prod = canonical_product(factors)
            for f in prod:
                if len(f) != n_beams:
                    raise ValueError(f"factor {f} does not match {n_beams} beams")
            acc[prod] = acc.get(prod, Fraction(0)) + Fraction(coeff)
        terms = tuple((c, p) for p, c in sorted(acc.items(), key=lambda kv: product_key(kv[0])) if c != 0)
        return cls(n_beams, terms)

    def __len__(self) -> int:
        return len(self.terms)

    def __add__(self, other: "TermTable") -> "TermTable":
        return TermTable.from_pairs(self.n_beams, [*self.terms, *other.terms])

    def scaled(self, factor) -> "TermTable":
        return TermTable.from_pairs(self.n_beams, [(c * Fraction(factor), p) for c, p in self.terms])

    def as_dict(self) -> dict[Product, Fraction]:
        return {p: c for c, p in self.terms}

    def required_moments(self) -> set[Factor]:
        return {f for _, p in self.terms for f in p}

    def max_order(self) -> int:
        return max((product_order(p) for _, p in self.terms), default=0)

    def evaluate(self, moments: Mapping[Factor, object]):
        """Numeric value; ``moments`` maps power tuples to numbers or arrays."""
        missing = self.required_moments() - set(moments)
        if missing:
            raise KeyError(f"missing intensity moments: {sorted(missing)}")
        total = 0.0
        for c, prod in self.terms:
            term = float(c)
            for f in prod:
                term = term * moments[f]
            total = total + term
        return total

    def polynomial(self) -> ParamPolynomial:
        """Exact expansion in the complex-basis Gaussian parameters."""
        s = symbol_table(self.n_beams)
        out = ParamPolynomial(s)
        for c, prod in self.terms:
            term = ParamPolynomial.constant(s, c)
            for f in prod:
                term = term * moment_polynomial(f)
            out = out + term
        return out

    def restricted(self, beams: Sequence[int]) -> "TermTable":
        """Drop every term that involves a beam outside ``beams`` and re-index.

        Setting the other beams to vacuum zeroes exactly those terms.
        """
        keep = []
        for c, prod in self.terms:
            if all(all(f[j] == 0 for j in range(self.n_beams) if j not in beams) for f in prod):
                keep.append((c, [tuple(f[j] for j in beams) for f in prod]))
        return TermTable.from_pairs(len(beams), keep)

    def describe(self) -> str:
        parts = []
        for c, p in self.terms:
            parts.append(f"{c:+} {format_product(p)}" if p else f"{c:+}")
        return " ".join(parts)


def relabel_factor(f: Factor, perm: Sequence[int]) -> Factor:
    """Move the power of beam ``i`` to beam ``perm[i]``."""
    out = [0] * len(f)
    for i, l in enumerate(f):
        out[perm[i]] += l
    return tuple(out)


def symmetrize(n_beams: int, pairs: Iterable[tuple[object, Iterable[Sequence[int]]]], images: Iterable[Sequence[int]]) -> TermTable:
    """Add the beam-relabelled copies of ``pairs`` for each permutation in ``images``.

    ``images`` lists permutations as ``perm[i] = new beam of old beam i``; the
    identity must be included explicitly if the listed terms count once.
    """
    pairs = [(c, [tuple(f) for f in fs]) for c, fs in pairs]
    out = []
    for perm in images:
        for c, fs in pairs:
            out.append((c, [relabel_factor(f, perm) for f in fs]))
    return TermTable.from_pairs(n_beams, out)


def index_images(n_beams: int, moved: int) -> list[tuple[int, ...]]:
    """Distinct relabellings of the first ``moved`` beam indices.

    ``moved=1`` gives index 1 -> 1, 2, 3 (the single-index substitution),
    ``moved=2`` the six ordered pairs, ``moved=3`` all six permutations.
    """
    seen = {}
    for perm in permutations(range(n_beams)):
        key = perm[:moved]
        if key not in seen:
            seen[key] = perm
    return list(seen.values())
