"""Derive QUI formulas in terms of intensity moments by exact coefficient matching.

Both the QUI and every product of intensity moments are polynomials in the
Gaussian parameters.  A moment ``<W^L>`` only contains monomials whose beam
occupation (how often beam ``j`` appears among the operator pairs) equals
``2 L``, and products add their ``L``.  The matching system therefore splits
into independent blocks, one per ``L``, whose columns are the multipartitions
of ``L`` into moment indices.

Inside a block, rows (parameter monomials) that no moment combination can
reach are moved to the residue.  The rule is deterministic: among the left
null vectors ``y`` of the block matrix with ``y . t != 0`` (a certificate of
inconsistency) take the one with the smallest support, ties broken by the
lowest free row, drop its rows, and repeat until the rest is consistent.  The
consistent remainder is solved in reduced row-echelon form with free
variables set to zero.

Sign convention: ``Delta = sum(coeff * product) - residue`` so the residue
is the quantity that has to be subtracted from the measurable part.
"""

from __future__ import annotations

import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import product as iproduct

import numpy as np

from .polynomial import ParamPolynomial, symbol_table, to_real_basis
from .terms import Product, TermTable, format_product, product_key
from .wick import moment_polynomial, qui_polynomial

MAX_DERIVE_BEAMS = 3


class DerivationError(RuntimeError):
    """Raised when the reduced system stays inconsistent (should not happen)."""


@dataclass(frozen=True)
class DerivationResult:
    n_beams: int
    k: int
    table: TermTable
    residue: ParamPolynomial  # complex basis
    target: ParamPolynomial = field(repr=False)

    @property
    def solvable(self) -> bool:
        return self.residue.is_zero()

    @property
    def coefficients(self) -> dict[Product, Fraction]:
        return self.table.as_dict()

    def residue_real(self) -> ParamPolynomial:
        return to_real_basis(self.residue)

    def check_identity(self) -> bool:
        """Exact polynomial identity ``target == table - residue``."""
        return self.table.polynomial() - self.residue == self.target


def expand_qui_symbolic(n_beams: int, k: int, basis: str = "real") -> ParamPolynomial:
    """``Delta^N_k`` as an exact polynomial (real Re/Im basis by default)."""
    poly = qui_polynomial(n_beams, k)
    return to_real_basis(poly) if basis == "real" else poly


def expand_moment_symbolic(powers, basis: str = "real") -> ParamPolynomial:
    poly = moment_polynomial(tuple(powers))
    return to_real_basis(poly) if basis == "real" else poly


def beam_occupation(symbols, key: int) -> tuple[int, ...]:
    """Half the number of field operators of each beam in a complex-basis monomial."""
    occ = [0] * symbols.n_beams
    for name, e in symbols.describe(key):
        base = name.rstrip("*")
        if base[0] in "BC":
            occ[int(base[1:]) - 1] += 2 * e
        else:
            lab = base[-2:]
            occ[int(lab[0]) - 1] += e
            occ[int(lab[1]) - 1] += e
    if any(o % 2 for o in occ):
        raise ValueError("monomial with odd beam occupation")
    return tuple(o // 2 for o in occ)


def _split_blocks(poly: ParamPolynomial) -> dict[tuple[int, ...], dict[int, Fraction]]:
    blocks: dict[tuple[int, ...], dict[int, Fraction]] = defaultdict(dict)
    for key, c in poly.terms.items():
        blocks[beam_occupation(poly.symbols, key)][key] = Fraction(c)
    return dict(blocks)


@lru_cache(maxsize=None)
def multipartitions(target: tuple[int, ...]) -> tuple[Product, ...]:
    """All multisets of nonzero index vectors summing to ``target``."""
    if not any(target):
        return ((),)
    parts = [v for v in iproduct(*(range(t + 1) for t in target)) if any(v)]
    parts.sort()
    out: list[Product] = []

    def rec(rest, max_i, acc):
        if not any(rest):
            out.append(tuple(acc))
            return
        for i in range(max_i, -1, -1):
            v = parts[i]
            if all(a <= b for a, b in zip(v, rest)):
                rec(tuple(b - a for a, b in zip(v, rest)), i, acc + [v])

    rec(target, len(parts) - 1, [])
    from .terms import canonical_product

    uniq = {canonical_product(p) for p in out}
    return tuple(sorted(uniq, key=product_key))


@lru_cache(maxsize=None)
def product_polynomial(n_beams: int, prod: Product) -> ParamPolynomial:
    out = ParamPolynomial.constant(symbol_table(n_beams))
    for f in prod:
        out = out * moment_polynomial(f)
    return out


def _rref(rows: list[dict[int, Fraction]], ncols: int):
    """Reduced row-echelon form of sparse rows; returns (pivot_rows, pivot_cols)."""
    pivots: dict[int, dict[int, Fraction]] = {}
    for row in rows:
        r = dict(row)
        for c in sorted(r):
            if c not in r:
                continue
            if c in pivots:
                f = r[c]
                for cc, v in pivots[c].items():
                    nv = r.get(cc, 0) - f * v
                    if nv:
                        r[cc] = nv
                    else:
                        r.pop(cc, None)
        if not r:
            continue
        lead = min(r)
        inv = 1 / r[lead]
        r = {c: v * inv for c, v in r.items()}
        # back-substitute into existing pivots to keep the form reduced
        for pc, prow in pivots.items():
            f = prow.get(lead)
            if f:
                for cc, v in r.items():
                    nv = prow.get(cc, 0) - f * v
                    if nv:
                        prow[cc] = nv
                    else:
                        prow.pop(cc, None)
        pivots[lead] = r
    return pivots


def _left_null_certificates(cols: list[dict[int, Fraction]], t: list[Fraction], nrows: int):
    """Left null basis vectors ``y`` of the block matrix with ``y . t != 0``.

    Rows of the transposed matrix are the columns; the RREF basis of its null
    space has one vector per free matrix row.
    """
    piv = _rref(cols, nrows)
    pivot_of = {pc: prow for pc, prow in piv.items()}
    free = [r for r in range(nrows) if r not in pivot_of]
    certs = []
    for f in free:
        support = [f]
        value = t[f]
        for pc, prow in pivot_of.items():
            v = prow.get(f)
            if v:
                support.append(pc)
                value -= v * t[pc]
        if value != 0:
            certs.append((len(support), f, sorted(support)))
    return certs


def _solve_block(target: dict[int, Fraction], prods: tuple[Product, ...], n_beams: int):
    polys = [product_polynomial(n_beams, p) for p in prods]
    keys = set(target)
    for p in polys:
        keys.update(p.terms)
    row_keys = sorted(keys)
    index = {k: i for i, k in enumerate(row_keys)}
    nrows, ncols = len(row_keys), len(prods)
    mat_rows: list[dict[int, Fraction]] = [dict() for _ in range(nrows)]
    cols: list[dict[int, Fraction]] = []
    for j, p in enumerate(polys):
        col = {}
        for key, c in p.terms.items():
            mat_rows[index[key]][j] = Fraction(c)
            col[index[key]] = Fraction(c)
        cols.append(col)
    t = [target.get(k, Fraction(0)) for k in row_keys]

    active = list(range(nrows))
    dropped: list[int] = []
    while True:
        aug = []
        for r in active:
            row = dict(mat_rows[r])
            if t[r]:
                row[ncols] = t[r]
            aug.append(row)
        piv = _rref(aug, ncols + 1)
        if ncols not in piv:
            break
        pos = {r: i for i, r in enumerate(active)}
        sub_cols = [{pos[r]: v for r, v in col.items() if r in pos} for col in cols]
        sub_t = [t[r] for r in active]
        certs = _left_null_certificates(sub_cols, sub_t, len(active))
        if not certs:
            raise DerivationError("inconsistent block without certificate")
        _, _, support = min(certs)
        drop = {active[i] for i in support}
        dropped.extend(sorted(drop))
        active = [r for r in active if r not in drop]

    solution = {c: prow.get(ncols, Fraction(0)) for c, prow in piv.items() if c < ncols}
    coeffs = {prods[c]: v for c, v in solution.items() if v}
    return coeffs, [row_keys[r] for r in dropped]


def derive(n_beams: int, k: int) -> DerivationResult:
    """Express ``Delta^N_k`` through intensity moments plus an irreducible residue."""
    if n_beams > MAX_DERIVE_BEAMS:
        raise ValueError(f"derive limited to N <= {MAX_DERIVE_BEAMS}")
    target = qui_polynomial(n_beams, k)
    pairs = []
    # blocks absent from the target have zero right-hand side and solve to zero
    for occ, block in sorted(_split_blocks(target).items()):
        if sum(occ) > 2 * k:
            raise DerivationError(f"unexpected occupation {occ} for k={k}")
        coeffs, _ = _solve_block(block, multipartitions(occ), n_beams)
        pairs.extend((c, p) for p, c in coeffs.items())
    table = TermTable.from_pairs(n_beams, pairs)
    residue = table.polynomial() - target
    result = DerivationResult(n_beams, k, table, residue, target)
    if not result.check_identity():
        raise DerivationError("derived identity does not hold")
    return result


def _frac(c) -> list[int]:
    c = Fraction(c)
    return [c.numerator, c.denominator]


def emit_term_table(result: DerivationResult) -> dict:
    """Machine-readable term table with a provenance hash."""
    measurable = [
        {"coefficient": _frac(c), "factors": [list(f) for f in p]}
        for c, p in result.table.terms
    ]
    residue = [
        {"coefficient": _frac(c), "monomial": [[n, e] for n, e in mono]}
        for mono, c in result.residue_real().items()
    ]
    body = {
        "n_beams": result.n_beams,
        "k": result.k,
        "sign_convention": "Delta = sum(coefficient * product) - residue",
        "solvable": result.solvable,
        "measurable": measurable,
        "residue": residue,
    }
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    body["provenance_sha256"] = digest
    return body


def table_from_document(doc: dict) -> TermTable:
    return TermTable.from_pairs(
        doc["n_beams"],
        [(Fraction(*row["coefficient"]), row["factors"]) for row in doc["measurable"]],
    )


def residue_from_document(doc: dict) -> ParamPolynomial:
    real = symbol_table(doc["n_beams"], "real")
    terms = {}
    for row in doc["residue"]:
        terms[real.pack({n: e for n, e in row["monomial"]})] = Fraction(*row["coefficient"])
    return ParamPolynomial(real, terms)


def describe(result: DerivationResult) -> str:
    lines = [f"Delta^{result.n_beams}_{result.k} = measurable - residue"]
    for c, p in result.table.terms:
        lines.append(f"  {str(c):>8}  {format_product(p)}")
    res = result.residue_real()
    if not res:
        lines.append("  residue: 0")
    elif len(res.terms) <= 8:
        lines.append(f"  residue: {res}")
    else:
        lines.append(f"  residue: {len(res.terms)} parameter monomials (see the JSON table)")
    return "\n".join(lines)


def evaluate_residue(result: DerivationResult, params) -> np.ndarray:
    from .polynomial import numeric_values

    vals = numeric_values(result.residue.symbols, params)
    return np.real(result.residue.evaluate(vals))


def check_against_builtin(result: DerivationResult, n_points: int = 100, seed: int = 0) -> dict:
    """Compare a derived table with the shipped closed form of the same QUI.

    The shipped table implies its own residue ``table - target`` exactly;
    that polynomial is checked numerically against the hand-coded residue
    evaluator at random physical states.  Tables may differ by a
    moment-expressible rearrangement of the residue, so coefficient identity
    and value equivalence are reported separately.
    """
    from .formulas import TABLES, residue_from_params
    from .gauss_core import random_physical_params
    from .polynomial import numeric_values

    key = (result.n_beams, result.k)
    if key not in TABLES:
        return {"target": list(key), "builtin": False}
    builtin = TABLES[key]
    implied = builtin.polynomial() - result.target
    params = random_physical_params(result.n_beams, np.random.default_rng(seed), size=n_points)
    implied_val = np.real(implied.evaluate(numeric_values(implied.symbols, params)))
    coded = np.asarray(residue_from_params(params, result.k), dtype=float)
    scale = np.maximum(1.0, np.abs(coded))
    err = float(np.max(np.abs(implied_val - coded) / scale))
    identical = builtin.as_dict() == result.coefficients
    return {
        "target": list(key),
        "builtin": True,
        "coefficients_identical": identical,
        "derived_identity_exact": result.check_identity(),
        "builtin_residue_max_rel_error": err,
        "value_equivalent": bool(err <= 1e-9),
        "residues_identical": implied == result.residue,
        "n_points": n_points,
    }
