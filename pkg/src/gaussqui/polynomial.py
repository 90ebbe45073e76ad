"""Exact sparse polynomials over the Gaussian-state parameter symbols.

Two symbol bases are used:

* ``complex``: ``B_j``, ``C_j``, ``C_j*``, ``D_jk``, ``D_jk*``, ``Dbar_jk``,
  ``Dbar_jk*``.  Conjugates are independent symbols.  Wick contractions are
  single symbols here, which keeps every expansion compact, and all QUI and
  moment polynomials have rational coefficients in this basis.
* ``real``: ``B_j``, ``ReC_j``, ``ImC_j``, ``ReD_jk``, ``ImD_jk``,
  ``ReDbar_jk``, ``ImDbar_jk``.  Used for reporting.

Monomials are packed into Python ints, ``FIELD_BITS`` bits per exponent, so
monomial multiplication is integer addition.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from itertools import combinations
from numbers import Rational
from typing import Iterable, Mapping, Sequence

import numpy as np

FIELD_BITS = 6
FIELD_MASK = (1 << FIELD_BITS) - 1


def pair_label(j: int, k: int) -> str:
    """1-based label of an unordered beam pair, e.g. ``pair_label(0, 2) == "13"``."""
    j, k = sorted((j, k))
    return f"{j + 1}{k + 1}"


def beam_pairs(n_beams: int) -> list[tuple[int, int]]:
    return list(combinations(range(n_beams), 2))


class SymbolTable:
    """Ordered parameter symbols of an ``n_beams`` state in one basis."""

    def __init__(self, n_beams: int, basis: str = "complex"):
        if basis not in ("complex", "real"):
            raise ValueError(f"unknown basis {basis!r}")
        self.n_beams = n_beams
        self.basis = basis
        names = []
        if basis == "complex":
            for j in range(n_beams):
                names += [f"B{j + 1}", f"C{j + 1}", f"C{j + 1}*"]
            for j, k in beam_pairs(n_beams):
                p = pair_label(j, k)
                names += [f"D{p}", f"D{p}*", f"Dbar{p}", f"Dbar{p}*"]
        else:
            for j in range(n_beams):
                names += [f"B{j + 1}", f"ReC{j + 1}", f"ImC{j + 1}"]
            for j, k in beam_pairs(n_beams):
                p = pair_label(j, k)
                names += [f"ReD{p}", f"ImD{p}", f"ReDbar{p}", f"ImDbar{p}"]
        self.names = tuple(names)
        self._index = {name: i for i, name in enumerate(names)}

    def __len__(self) -> int:
        return len(self.names)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SymbolTable)
            and other.n_beams == self.n_beams
            and other.basis == self.basis
        )

    def __hash__(self) -> int:
        return hash((self.n_beams, self.basis))

    def __repr__(self) -> str:
        return f"SymbolTable({self.n_beams}, {self.basis!r})"

    def index(self, name: str) -> int:
        return self._index[name]

    def pack(self, exponents: Mapping[str, int] | Sequence[int]) -> int:
        if isinstance(exponents, Mapping):
            items = ((self._index[k], v) for k, v in exponents.items())
        else:
            items = enumerate(exponents)
        key = 0
        for i, e in items:
            if e < 0 or e > FIELD_MASK:
                raise ValueError(f"exponent {e} out of packable range")
            key += e << (FIELD_BITS * i)
        return key

    def unpack(self, key: int) -> tuple[int, ...]:
        out = []
        for _ in range(len(self.names)):
            out.append(key & FIELD_MASK)
            key >>= FIELD_BITS
        return tuple(out)

    def describe(self, key: int) -> list[tuple[str, int]]:
        return [(self.names[i], e) for i, e in enumerate(self.unpack(key)) if e]


@lru_cache(maxsize=None)
def symbol_table(n_beams: int, basis: str = "complex") -> SymbolTable:
    return SymbolTable(n_beams, basis)


def _as_coeff(c):
    if isinstance(c, (int, Fraction)):
        return c
    if isinstance(c, Rational):
        return Fraction(c)
    raise TypeError(f"polynomial coefficients must be rational, got {type(c).__name__}")


class ParamPolynomial:
    """Polynomial with exact rational coefficients over a :class:`SymbolTable`."""

    __slots__ = ("symbols", "terms")

    def __init__(self, symbols: SymbolTable, terms: Mapping[int, object] | None = None):
        self.symbols = symbols
        self.terms: dict[int, object] = {}
        if terms:
            for k, c in terms.items():
                c = _as_coeff(c)
                if c:
                    self.terms[k] = c

    # construction helpers
    @classmethod
    def constant(cls, symbols: SymbolTable, value=1) -> "ParamPolynomial":
        return cls(symbols, {0: value})

    @classmethod
    def symbol(cls, symbols: SymbolTable, name: str, coeff=1) -> "ParamPolynomial":
        return cls(symbols, {symbols.pack({name: 1}): coeff})

    def copy(self) -> "ParamPolynomial":
        p = ParamPolynomial(self.symbols)
        p.terms = dict(self.terms)
        return p

    # arithmetic
    def _check(self, other: "ParamPolynomial") -> None:
        if other.symbols != self.symbols:
            raise ValueError("polynomials over different symbol tables")

    def _coerce(self, other) -> "ParamPolynomial":
        if isinstance(other, ParamPolynomial):
            self._check(other)
            return other
        return ParamPolynomial.constant(self.symbols, _as_coeff(other))

    def __add__(self, other) -> "ParamPolynomial":
        other = self._coerce(other)
        out = dict(self.terms)
        for k, c in other.terms.items():
            v = out.get(k, 0) + c
            if v:
                out[k] = v
            else:
                out.pop(k, None)
        p = ParamPolynomial(self.symbols)
        p.terms = out
        return p

    __radd__ = __add__

    def __neg__(self) -> "ParamPolynomial":
        p = ParamPolynomial(self.symbols)
        p.terms = {k: -c for k, c in self.terms.items()}
        return p

    def __sub__(self, other) -> "ParamPolynomial":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "ParamPolynomial":
        return (-self) + other

    def __mul__(self, other) -> "ParamPolynomial":
        if not isinstance(other, ParamPolynomial):
            c = _as_coeff(other)
            p = ParamPolynomial(self.symbols)
            if c:
                p.terms = {k: v * c for k, v in self.terms.items()}
            return p
        self._check(other)
        out: dict[int, object] = {}
        for k1, c1 in self.terms.items():
            for k2, c2 in other.terms.items():
                k = k1 + k2
                out[k] = out.get(k, 0) + c1 * c2
        p = ParamPolynomial(self.symbols)
        p.terms = {k: c for k, c in out.items() if c}
        return p

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "ParamPolynomial":
        out = ParamPolynomial.constant(self.symbols)
        for _ in range(n):
            out = out * self
        return out

    def __eq__(self, other) -> bool:
        if isinstance(other, ParamPolynomial):
            return self.symbols == other.symbols and self.terms == other.terms
        if isinstance(other, (int, Fraction)):
            return self.terms == ({0: other} if other else {})
        return NotImplemented

    def __hash__(self):
        return hash(frozenset(self.terms.items()))

    def __bool__(self) -> bool:
        return bool(self.terms)

    def __len__(self) -> int:
        return len(self.terms)

    # inspection
    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        return max((sum(self.symbols.unpack(k)) for k in self.terms), default=0)

    def support(self) -> set[str]:
        names = set()
        for k in self.terms:
            names.update(n for n, _ in self.symbols.describe(k))
        return names

    def items(self) -> list[tuple[tuple[tuple[str, int], ...], object]]:
        """Terms as ``((symbol, power), ...) -> coeff`` in canonical order."""
        rows = [(tuple(self.symbols.describe(k)), c) for k, c in self.terms.items()]
        rows.sort(key=lambda r: (sum(e for _, e in r[0]), [(self.symbols.index(n), -e) for n, e in r[0]]))
        return rows

    def __repr__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for mono, c in self.items():
            body = "*".join(n if e == 1 else f"{n}^{e}" for n, e in mono)
            parts.append(f"{c}" if not body else (body if c == 1 else f"{c}*{body}"))
        return " + ".join(parts)

    # evaluation
    def evaluate(self, values: Sequence) -> object:
        """Evaluate with ``values[i]`` substituted for symbol ``i``.

        Values may be numbers, numpy arrays (broadcast together) or Fractions.
        """
        if len(values) != len(self.symbols):
            raise ValueError("one value per symbol required")
        cache: dict[tuple[int, int], object] = {}
        total = 0
        for key, c in sorted(self.terms.items()):
            term = c if isinstance(values[0], Fraction) else float(c)
            i = 0
            while key:
                e = key & FIELD_MASK
                if e:
                    pw = cache.get((i, e))
                    if pw is None:
                        pw = cache[(i, e)] = values[i] ** e
                    term = term * pw
                key >>= FIELD_BITS
                i += 1
            total = total + term
        return total

    def substitute(self, mapping: Mapping[str, "ParamPolynomial"], target: SymbolTable) -> "ParamPolynomial":
        """Replace every symbol by a polynomial over ``target``."""
        images = [mapping[name] for name in self.symbols.names]
        out = ParamPolynomial(target)
        powers: dict[tuple[int, int], ParamPolynomial] = {}
        for key, c in self.terms.items():
            term = ParamPolynomial.constant(target, c)
            for i, e in enumerate(self.symbols.unpack(key)):
                if e:
                    pw = powers.get((i, e))
                    if pw is None:
                        pw = powers[(i, e)] = images[i] ** e
                    term = term * pw
            out = out + term
        return out


def to_real_basis(poly: ParamPolynomial) -> ParamPolynomial:
    """Rewrite a complex-basis polynomial in the Re/Im symbols.

    Only defined for polynomials that are real-valued for all parameter
    values (conjugate monomials carry equal coefficients); raises otherwise.
    """
    if poly.symbols.basis != "complex":
        raise ValueError("expected a complex-basis polynomial")
    n = poly.symbols.n_beams
    real = symbol_table(n, "real")
    # complex coefficients carried as (re, im) pairs of Fractions
    zero = (Fraction(0), Fraction(0))

    def cmul(a, b):
        return (a[0] * b[0] - a[1] * b[1], a[0] * b[1] + a[1] * b[0])

    def lin(re_name, im_name, sign):
        # x + i*sign*y
        return {real.pack({re_name: 1}): (Fraction(1), Fraction(0)),
                real.pack({im_name: 1}): (Fraction(0), Fraction(sign))}

    images: list[dict[int, tuple[Fraction, Fraction]]] = []
    for name in poly.symbols.names:
        if name.startswith("B"):
            images.append({real.pack({name: 1}): (Fraction(1), Fraction(0))})
            continue
        conj = name.endswith("*")
        base = name.rstrip("*")
        if base.startswith("Dbar"):
            re_name, im_name = "Re" + base, "Im" + base
        else:
            re_name, im_name = "Re" + base, "Im" + base
        images.append(lin(re_name, im_name, -1 if conj else 1))

    def pmul(p, q):
        out: dict[int, tuple[Fraction, Fraction]] = {}
        for k1, c1 in p.items():
            for k2, c2 in q.items():
                k = k1 + k2
                prev = out.get(k, zero)
                m = cmul(c1, c2)
                out[k] = (prev[0] + m[0], prev[1] + m[1])
        return out

    acc: dict[int, tuple[Fraction, Fraction]] = {}
    pw_cache: dict[tuple[int, int], dict] = {}
    for key, c in poly.terms.items():
        term = {0: (Fraction(c), Fraction(0))}
        for i, e in enumerate(poly.symbols.unpack(key)):
            if e:
                pw = pw_cache.get((i, e))
                if pw is None:
                    pw = {0: (Fraction(1), Fraction(0))}
                    for _ in range(e):
                        pw = pmul(pw, images[i])
                    pw_cache[(i, e)] = pw
                term = pmul(term, pw)
        for k, v in term.items():
            prev = acc.get(k, zero)
            acc[k] = (prev[0] + v[0], prev[1] + v[1])
    out = {}
    for k, (re, im) in acc.items():
        if im != 0:
            raise ValueError("polynomial is not real-valued; cannot express in the real basis")
        if re != 0:
            out[k] = re
    p = ParamPolynomial(real)
    p.terms = out
    return p


def numeric_values(symbols: SymbolTable, params) -> list:
    """Symbol values of a :class:`~gaussqui.gauss_core.GaussianStateParams`.

    Vectorised parameter objects (arrays in the fields) broadcast through.
    """
    vals = []
    n = symbols.n_beams
    if symbols.basis == "complex":
        for j in range(n):
            c = params.c[j]
            vals += [params.b[j], c, np.conj(c)]
        for j, k in beam_pairs(n):
            d = params.d_pair(j, k)
            db = params.dbar_pair(j, k)
            vals += [d, np.conj(d), db, np.conj(db)]
    else:
        for j in range(n):
            c = params.c[j]
            vals += [params.b[j], np.real(c), np.imag(c)]
        for j, k in beam_pairs(n):
            d = params.d_pair(j, k)
            db = params.dbar_pair(j, k)
            vals += [np.real(d), np.imag(d), np.real(db), np.imag(db)]
    return vals


def collect(polys: Iterable[ParamPolynomial]) -> ParamPolynomial:
    polys = list(polys)
    if not polys:
        raise ValueError("nothing to sum")
    out = polys[0]
    for p in polys[1:]:
        out = out + p
    return out
