"""Symbolic Wick (Isserlis) expansions in the complex parameter basis.

For a zero-mean Gaussian field the normally ordered moment of a product of
creation/annihilation operators is the sum over perfect pairings of the
products of pair expectations

    <a_j^+ a_j> = B_j,  <a_j a_j> = C_j,  <a_j^+ a_j^+> = C_j*,
    <a_j a_k> = D_jk,  <a_j^+ a_k^+> = D_jk*,
    <a_j^+ a_k> = -Dbar_jk,  <a_k^+ a_j> = -Dbar_jk*      (j < k).

Operator multisets are keyed by per-type counts, so each distinct multiset
is expanded once.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from itertools import combinations

from .polynomial import ParamPolynomial, SymbolTable, pair_label, symbol_table

MAX_SYMBOLIC_ORDER = 6


def _contraction(symbols: SymbolTable, op1: int, op2: int) -> ParamPolynomial:
    """Pair expectation of operator types ``op = 2*beam + (0 for a^+, 1 for a)``."""
    j, dag1 = divmod(op1, 2)
    k, dag2 = divmod(op2, 2)
    dag1, dag2 = dag1 == 0, dag2 == 0
    if j == k:
        if dag1 != dag2:
            name = f"B{j + 1}"
        elif dag1:
            name = f"C{j + 1}*"
        else:
            name = f"C{j + 1}"
        return ParamPolynomial.symbol(symbols, name)
    p = pair_label(j, k)
    if not dag1 and not dag2:
        return ParamPolynomial.symbol(symbols, f"D{p}")
    if dag1 and dag2:
        return ParamPolynomial.symbol(symbols, f"D{p}*")
    # one creator, one annihilator: <a_m^+ a_n>
    m, n = (j, k) if dag1 else (k, j)
    name = f"Dbar{p}" if m < n else f"Dbar{p}*"
    return ParamPolynomial.symbol(symbols, name, -1)


@lru_cache(maxsize=None)
def _expand_counts(n_beams: int, counts: tuple[int, ...]) -> ParamPolynomial:
    symbols = symbol_table(n_beams)
    if sum(counts) == 0:
        return ParamPolynomial.constant(symbols)
    if sum(counts) % 2:
        return ParamPolynomial(symbols)
    first = next(i for i, c in enumerate(counts) if c)
    rest = list(counts)
    rest[first] -= 1
    out = ParamPolynomial(symbols)
    for other, mult in enumerate(rest):
        if not mult:
            continue
        remaining = list(rest)
        remaining[other] -= 1
        sub = _expand_counts(n_beams, tuple(remaining))
        if sub:
            out = out + _contraction(symbols, first, other) * sub * mult
    return out


def operator_counts(powers: tuple[int, ...]) -> tuple[int, ...]:
    counts = []
    for l in powers:
        counts += [l, l]
    return tuple(counts)


def moment_polynomial(powers: tuple[int, ...], max_order: int | None = MAX_SYMBOLIC_ORDER) -> ParamPolynomial:
    """``<W_1^l1 ... W_N^lN>`` as a polynomial in the complex-basis symbols."""
    powers = tuple(int(p) for p in powers)
    if any(p < 0 for p in powers):
        raise ValueError("moment powers must be non-negative")
    if max_order is not None and sum(powers) > max_order:
        raise ValueError(f"symbolic moment order {sum(powers)} exceeds guard {max_order}")
    return _expand_counts(len(powers), operator_counts(powers))


def complex_basis_matrix(n_beams: int) -> list[list[ParamPolynomial]]:
    """``J G`` with ``G_ab = <{xi_a, xi_b}>/2`` over ``xi = (a_1, a_1^+, a_2, ...)``.

    With ``x = a + a^+``, ``p = -i (a - a^+)`` one finds ``Omega A = Omega T G T^T``
    and ``T^T Omega T = 2i J``, so ``Omega A`` is similar to ``2i J G`` and
    ``Delta_k = (-4)^k M_2k(J G)``.  No imaginary unit survives, which keeps the
    expansion in rational arithmetic.
    """
    s = symbol_table(n_beams)
    sym = lambda name, c=1: ParamPolynomial.symbol(s, name, c)
    half = ParamPolynomial.constant(s, Fraction(1, 2))
    zero = ParamPolynomial(s)
    size = 2 * n_beams
    g = [[zero for _ in range(size)] for _ in range(size)]
    for j in range(n_beams):
        a, ad = 2 * j, 2 * j + 1
        g[a][a] = sym(f"C{j + 1}")
        g[ad][ad] = sym(f"C{j + 1}*")
        g[a][ad] = g[ad][a] = sym(f"B{j + 1}") + half
    for j, k in combinations(range(n_beams), 2):
        p = pair_label(j, k)
        aj, adj, ak, adk = 2 * j, 2 * j + 1, 2 * k, 2 * k + 1
        g[aj][ak] = g[ak][aj] = sym(f"D{p}")
        g[adj][adk] = g[adk][adj] = sym(f"D{p}*")
        g[adj][ak] = g[ak][adj] = sym(f"Dbar{p}", -1)
        g[aj][adk] = g[adk][aj] = sym(f"Dbar{p}*", -1)
    jg = []
    for j in range(n_beams):
        jg.append(list(g[2 * j + 1]))
        jg.append([-x for x in g[2 * j]])
    return jg


def _det(mat: list[list[ParamPolynomial]], rows: tuple[int, ...]) -> ParamPolynomial:
    """Determinant of the principal submatrix on ``rows`` by column-subset recursion."""
    n = len(rows)
    sym = mat[0][0].symbols
    # dp over subsets of selected column positions, rows consumed in order
    dp: dict[int, ParamPolynomial] = {0: ParamPolynomial.constant(sym)}
    for r in range(n):
        nxt: dict[int, ParamPolynomial] = {}
        for mask, val in dp.items():
            if not val:
                continue
            # sign: number of already-used columns to the right of c
            for c in range(n):
                bit = 1 << c
                if mask & bit:
                    continue
                entry = mat[rows[r]][rows[c]]
                if not entry:
                    continue
                above = bin(mask >> (c + 1)).count("1")
                term = val * entry
                if above % 2:
                    term = -term
                nm = mask | bit
                nxt[nm] = nxt[nm] + term if nm in nxt else term
        dp = nxt
    return dp.get((1 << n) - 1, ParamPolynomial(sym))


@lru_cache(maxsize=None)
def qui_polynomial(n_beams: int, k: int) -> ParamPolynomial:
    """``Delta^N_k`` as an exact polynomial in the complex-basis symbols."""
    if n_beams > 4:
        raise ValueError("symbolic QUI expansion limited to N <= 4")
    if not 1 <= k <= n_beams:
        raise ValueError(f"k must lie in 1..{n_beams}")
    jg = complex_basis_matrix(n_beams)
    total = ParamPolynomial(symbol_table(n_beams))
    for rows in combinations(range(2 * n_beams), 2 * k):
        total = total + _det(jg, rows)
    return total * ((-4) ** k)
