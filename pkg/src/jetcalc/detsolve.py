"""Determining equations: ansatz templates, coefficient matching, nullspaces.

The solvers share one pipeline: build a polynomial template with fresh
unknown coefficients, push it through the relevant linear operator
(linearization, cosymmetry equation, or shadow equation), match the
coefficient of every known monomial to zero, and extract an exact rational
nullspace.  Every emitted solution is re-substituted into its determining
equation before being returned; the solver never trusts its own elimination.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations_with_replacement

from .dalg import DiffPoly, PARAM, VarId, _monomial_key, param_var
from .jetspace import EvolutionSystem, JetContext, multi_indices_up_to
from .cdiff import (
    CartanShadow,
    linearization,
    shadow_residual,
)
from .variational import gf_residual


class NonlinearInUnknowns(ValueError):
    pass


@dataclass(frozen=True)
class Ansatz:
    """Bounds of the search space.

    jet_order: max |sigma| of jet variables used (and of Cartan form indices
    for shadows); poly_deg: max total degree in jet variables; base_deg: max
    total degree in the explicit base variables; include_params adds declared
    parameters to the base-variable pool.
    """

    jet_order: int = 1
    poly_deg: int = 1
    base_deg: int = 0
    include_params: bool = False

    def __post_init__(self):
        if min(self.jet_order, self.poly_deg, self.base_deg) < 0:
            raise ValueError("ansatz bounds must be nonnegative")

    def as_dict(self) -> dict:
        return {"jet-order": self.jet_order, "poly-deg": self.poly_deg, "base-deg": self.base_deg}


def ansatz_monomials(ctx: JetContext, a: Ansatz, spatial_only: bool = True) -> list[DiffPoly]:
    """The monomial pool, deterministically ordered by the canonical monomial
    order (degree descending, then the fixed variable order)."""
    jets = [ctx.jet(j, s)
            for j in range(ctx.m)
            for s in multi_indices_up_to(ctx, a.jet_order, spatial_only=spatial_only)]
    bases = [ctx.base(i) for i in range(ctx.n)]
    if a.include_params:
        bases += [param_var(p) for p in ctx.parameters]
    pool: list[tuple[tuple[VarId, int], ...]] = []
    jet_parts = []
    for d in range(a.poly_deg + 1):
        jet_parts.extend(combinations_with_replacement(jets, d))
    base_parts = []
    for e in range(a.base_deg + 1):
        base_parts.extend(combinations_with_replacement(bases, e))
    for jp in jet_parts:
        for bp in base_parts:
            factors: dict[VarId, int] = {}
            for v in jp + bp:
                factors[v] = factors.get(v, 0) + 1
            pool.append(tuple(sorted(factors.items(), key=lambda t: t[0].sort_key())))
    pool = sorted(set(pool), key=_monomial_key)
    return [DiffPoly({f: Fraction(1)}) for f in pool]


def _fresh_prefix(ctx: JetContext) -> str:
    prefix = "c"
    while any(p.startswith(prefix) for p in ctx.parameters):
        prefix = "c" + prefix
    return prefix


class TemplateBuilder:
    """Hands out unknown coefficients (parameter variables with reserved
    names) and remembers their declaration order."""

    def __init__(self, ctx: JetContext):
        self.prefix = _fresh_prefix(ctx)
        self.names: list[str] = []

    def fresh(self) -> VarId:
        name = f"{self.prefix}{len(self.names)}"
        self.names.append(name)
        return param_var(name)

    def combination(self, monomials: list[DiffPoly]) -> DiffPoly:
        out = DiffPoly.zero()
        for mono in monomials:
            out = out + DiffPoly.var(self.fresh()) * mono
        return out


def build_symmetry_template(ctx: JetContext, a: Ansatz) -> tuple[list[DiffPoly], TemplateBuilder]:
    """One template per dependent component, disjoint unknowns."""
    tb = TemplateBuilder(ctx)
    monos = ansatz_monomials(ctx, a)
    return [tb.combination(monos) for _ in range(ctx.m)], tb


def build_shadow_template(ctx: JetContext, a: Ansatz, covering=None) -> tuple[CartanShadow, TemplateBuilder]:
    """One coefficient template per Cartan form om^alpha_sigma (|sigma| <=
    jet_order) and per covering form, for every output component.

    Unknowns are declared covering forms first and jet forms in ascending
    order, so that the echelon-normalized basis comes out monic in the
    highest Cartan coefficient (the customary recursion-operator shape).
    """
    tb = TemplateBuilder(ctx)
    monos = ansatz_monomials(ctx, a)
    sigmas = multi_indices_up_to(ctx, a.jet_order, spatial_only=True)
    nlayers = len(covering.layers) if covering is not None else 0
    comps = []
    for _ in range(ctx.m):
        cmap = {}
        for layer in range(nlayers):
            cmap[("w", layer)] = tb.combination(monos)
        for alpha in range(ctx.m):
            for s in sigmas:
                cmap[("u", alpha, s)] = tb.combination(monos)
        comps.append(cmap)
    return CartanShadow(ctx, tuple(comps), covering), tb


@dataclass
class LinearSystem:
    """Sparse homogeneous rows over an ordered unknown list."""

    unknowns: list[str]
    rows: list[dict[int, Fraction]]
    inconsistent: bool = False

    def add_row(self, row: dict[int, Fraction]):
        if row:
            self.rows.append(row)


def match_coefficients(expr: DiffPoly, system: LinearSystem):
    """Append one row per distinct known monomial of an unknown-linear expr.

    An unknown-free term with a nonzero coefficient can never cancel, so it
    marks the whole system as unsolvable.
    """
    index = {name: k for k, name in enumerate(system.unknowns)}
    grouped: dict[tuple, dict[int, Fraction]] = {}
    order: dict[tuple, tuple] = {}
    for factors, coef in expr.terms.items():
        unknown = None
        known = []
        for v, e in factors:
            if v.kind == PARAM and v.idx[0] in index:
                if unknown is not None or e > 1:
                    raise NonlinearInUnknowns(f"monomial {DiffPoly({factors: coef})} is nonlinear in unknowns")
                unknown = index[v.idx[0]]
            else:
                known.append((v, e))
        if unknown is None:
            system.inconsistent = True
            continue
        key = tuple(known)
        grouped.setdefault(key, {})
        grouped[key][unknown] = grouped[key].get(unknown, Fraction(0)) + coef
        order[key] = _monomial_key(key)
    for key in sorted(grouped, key=order.get):
        row = {k: c for k, c in grouped[key].items() if c}
        system.add_row(row)


def nullspace(system: LinearSystem) -> list[dict[str, Fraction]]:
    """Exact reduced nullspace basis; pivots follow unknown declaration order.

    Each basis vector sets one free unknown to 1; that unknown is absent from
    every other vector, which fixes the echelon-normalized representatives.
    """
    if system.inconsistent:
        return []
    n = len(system.unknowns)
    rows = [dict(r) for r in system.rows if r]
    pivot_of_col: dict[int, dict[int, Fraction]] = {}
    for col in range(n):
        pivot_row = None
        for r in rows:
            if col in r and all(pc not in r for pc in pivot_of_col):
                pivot_row = r
                break
        if pivot_row is None:
            continue
        inv = Fraction(1) / pivot_row[col]
        for k in list(pivot_row):
            pivot_row[k] *= inv
        for r in rows:
            if r is pivot_row or col not in r:
                continue
            factor = r[col]
            for k, v in pivot_row.items():
                nv = r.get(k, Fraction(0)) - factor * v
                if nv:
                    r[k] = nv
                elif k in r:
                    del r[k]
        pivot_of_col[col] = pivot_row
    free_cols = [c for c in range(n) if c not in pivot_of_col]
    basis = []
    for f in free_cols:
        vec = {system.unknowns[f]: Fraction(1)}
        for pc, prow in pivot_of_col.items():
            val = prow.get(f)
            if val:
                vec[system.unknowns[pc]] = -val
        basis.append(vec)
    return basis


def _instantiate(poly: DiffPoly, tb: TemplateBuilder, values: dict[str, Fraction]) -> DiffPoly:
    bindings = {param_var(name): DiffPoly.const(values.get(name, Fraction(0))) for name in tb.names}
    return poly.substitute(bindings)


@dataclass
class SolutionBasis:
    """Echelon-normalized solutions, rendered back into target objects."""

    solutions: list
    vectors: list[dict[str, Fraction]]

    def __len__(self) -> int:
        return len(self.solutions)


def _solve(residuals, tb: TemplateBuilder, render, verify) -> SolutionBasis:
    system = LinearSystem(list(tb.names), [])
    for residual in residuals:
        if residual:
            match_coefficients(residual, system)
    vectors = nullspace(system)
    solutions = []
    for vec in vectors:
        obj = render(vec)
        check = verify(obj)
        assert all(r.is_zero() for r in check), \
            f"solver produced a non-solution; residuals {[str(r) for r in check]}"
        solutions.append(obj)
    return SolutionBasis(solutions, vectors)


def symmetries(sys: EvolutionSystem, a: Ansatz) -> SolutionBasis:
    """Solutions of the linearization equation within the ansatz space."""
    ctx = sys.ctx
    templates, tb = build_symmetry_template(ctx, a)
    ell = linearization(sys)
    residuals = ell.apply(templates)

    def render(vec):
        return tuple(_instantiate(t, tb, vec) for t in templates)

    def verify(phi):
        return ell.apply(list(phi))

    return _solve(residuals, tb, render, verify)


def generating_functions(sys: EvolutionSystem, a: Ansatz) -> SolutionBasis:
    """Solutions of the cosymmetry equation D̄_t psi + ell_f^*(psi) = 0."""
    ctx = sys.ctx
    templates, tb = build_symmetry_template(ctx, a)
    residuals = gf_residual(sys, templates)

    def render(vec):
        return tuple(_instantiate(t, tb, vec) for t in templates)

    def verify(psi):
        return gf_residual(sys, list(psi))

    return _solve(residuals, tb, render, verify)


def shadows(sys: EvolutionSystem, covering, a: Ansatz) -> SolutionBasis:
    """Cartan-1-form-valued solutions of the (extended) shadow equation."""
    ctx = sys.ctx
    template, tb = build_shadow_template(ctx, a, covering)
    residual = shadow_residual(template, sys, covering)
    rows = [p for cmap in residual.comps for _, p in sorted(cmap.items(), key=lambda kv: str(kv[0]))]

    def render(vec):
        comps = tuple({key: _instantiate(p, tb, vec) for key, p in cmap.items()}
                      for cmap in template.comps)
        return CartanShadow(ctx, comps, covering)

    def verify(sh):
        res = shadow_residual(sh, sys, covering)
        return [p for cmap in res.comps for p in cmap.values()]

    return _solve(rows, tb, render, verify)


# --------------------------------------------------------------------------
# Exact span utilities (used by reports and tests)


def _vector_coords(vecs: list[tuple[DiffPoly, ...]]) -> tuple[list[tuple], list[list[Fraction]]]:
    keys = sorted({(i, f) for v in vecs for i, p in enumerate(v) for f in p.terms},
                  key=lambda t: (t[0], _monomial_key(t[1])))
    cols = []
    for v in vecs:
        cols.append([v[i].terms.get(f, Fraction(0)) for i, f in keys])
    return keys, cols


def _rank(columns: list[list[Fraction]]) -> int:
    if not columns:
        return 0
    rows = [list(r) for r in zip(*columns)]
    rank = 0
    ncols = len(columns)
    for col in range(ncols):
        piv = next((r for r in rows[rank:] if r[col]), None)
        if piv is None:
            continue
        idx = rows.index(piv, rank)
        rows[rank], rows[idx] = rows[idx], rows[rank]
        pv = rows[rank][col]
        rows[rank] = [x / pv for x in rows[rank]]
        for r2 in range(len(rows)):
            if r2 != rank and rows[r2][col]:
                f = rows[r2][col]
                rows[r2] = [a - f * b for a, b in zip(rows[r2], rows[rank])]
        rank += 1
    return rank


def span_contains(basis: list[tuple[DiffPoly, ...]], target: tuple[DiffPoly, ...]) -> bool:
    """Exact membership of target in the rational span of the basis vectors."""
    if all(p.is_zero() for p in target):
        return True
    if not basis:
        return False
    _, cols = _vector_coords(list(basis) + [target])
    return _rank(cols[:-1]) == _rank(cols)
