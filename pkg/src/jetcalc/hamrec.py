"""Coverings, recursion-shadow application, and Hamiltonian structures.

A covering extends an evolution system by nonlocal variables w^a whose
derivatives are prescribed: D̃_i = D̄_i + sum_a X_i^a d/dw^a.  Flatness
([D̃_i, D̃_j] = 0) is verified eagerly at construction.  Applying a
recursion shadow to a symmetry contracts the Cartan coefficients and
resolves each covering form by integrating the corresponding relation
equation in the spatial direction.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations_with_replacement
from typing import Sequence

from .dalg import JET, NONLOCAL, TESTCOV, DiffPoly, MultiIndex, VarId, param_var
from .jetspace import EvolutionSystem, JetContext, NotInternal, total_derivative_iterated
from .cdiff import CartanShadow, CDiffOp, DimensionMismatch, contract, evolutionary, linearization
from .variational import (
    Density,
    NotExactDerivative,
    antiderivative,
    dx_inverse,
    euler,
    is_divergence,
    is_generating_function,
)
from .detsolve import LinearSystem, match_coefficients, nullspace


class NotFlat(ValueError):
    """Extended derivatives fail to commute; carries the residue."""

    def __init__(self, layer: str, i: int, j: int, residue: DiffPoly):
        super().__init__(f"[D_{i}, D_{j}] on layer '{layer}' leaves residue {residue}")
        self.residue = residue


class ScopeError(ValueError):
    pass


class NonlocalObstruction(ValueError):
    """The contraction integrand is not an exact extended derivative in the
    current covering; a further nonlocal layer would be needed."""

    def __init__(self, remainder: DiffPoly):
        super().__init__(f"nonlocal obstruction; non-integrable remainder: {remainder}")
        self.remainder = remainder


class PreconditionFailed(ValueError):
    pass


class VerificationFailed(ValueError):
    pass


@dataclass(frozen=True)
class Layer:
    name: str
    exprs: tuple[DiffPoly, ...]  # one per independent variable, ctx order


class Covering:
    """Nonlocal extension of an evolution system by ordered layers.

    Layer expressions may use internal coordinates and earlier layers only;
    the commutativity of all extended derivatives is checked on every layer
    generator at construction time.
    """

    def __init__(self, base: EvolutionSystem, layers: Sequence[Layer]):
        self.base = base
        self.layers = tuple(layers)
        self.ctx = base.ctx.with_nonlocals([l.name for l in self.layers])
        for a, layer in enumerate(self.layers):
            if len(layer.exprs) != base.ctx.n:
                raise ScopeError(f"layer '{layer.name}' needs one expression per independent variable")
            for p in layer.exprs:
                self._check_scope(p, a, layer.name)
        for a, layer in enumerate(self.layers):
            for i in range(base.ctx.n):
                for j in range(i + 1, base.ctx.n):
                    lhs = self.derive(i, layer.exprs[j])
                    rhs = self.derive(j, layer.exprs[i])
                    if lhs != rhs:
                        raise NotFlat(layer.name, i, j, lhs - rhs)

    def _check_scope(self, p: DiffPoly, layer_index: int, name: str):
        t = self.base.ctx.time_index
        for v in p.variables():
            if v.kind == NONLOCAL and v.idx[0] >= layer_index:
                raise ScopeError(f"layer '{name}' refers to layer '{v.name}' not introduced before it")
            if v.kind == JET and t in v.idx[1]:
                raise NotInternal(f"layer '{name}' uses non-internal coordinate {v.name}")
            if v.kind == TESTCOV:
                raise ScopeError("covering expressions cannot contain test covectors")

    # Duck API consumed by the Cartan-form machinery in cdiff.

    def expr(self, i: int, layer: int) -> DiffPoly:
        return self.layers[layer].exprs[i]

    def nonlocal_var(self, layer: int) -> VarId:
        return self.ctx.nonlocal_(layer)

    def derive(self, i: int, p: DiffPoly) -> DiffPoly:
        """D̃_i p = D̄_i p + sum_a X_i^a dp/dw^a."""
        ctx = self.base.ctx
        t = ctx.time_index
        out = p.partial(self.ctx.base(i))
        for v in p.variables():
            if v.kind == JET:
                j, sigma = v.idx
                if t in sigma:
                    raise NotInternal(f"{v.name} is not a covering-ring coordinate")
                if i == t:
                    out = out + self.base.dsigma_f(j, sigma) * p.partial(v)
                else:
                    out = out + DiffPoly.var(ctx.jet(j, tuple(sorted(sigma + (i,))))) * p.partial(v)
            elif v.kind == NONLOCAL:
                out = out + self.layers[v.idx[0]].exprs[i] * p.partial(v)
            elif v.kind == TESTCOV:
                raise ScopeError("extended derivatives do not act on test covectors")
        return out

    def iterated(self, sigma: MultiIndex, p: DiffPoly) -> DiffPoly:
        for i in sigma:
            p = self.derive(i, p)
        return p

    def parse(self, text: str) -> DiffPoly:
        return self.ctx.parse(text)


def make_covering(base: EvolutionSystem, layers: Sequence[tuple[str, Sequence[DiffPoly]]]) -> Covering:
    return Covering(base, [Layer(name, tuple(exprs)) for name, exprs in layers])


# --------------------------------------------------------------------------
# Extended integration and shadow application


def dx_inverse_extended(cov: Covering, g: DiffPoly) -> DiffPoly:
    """Solve D̃_x h = g inside the covering ring (one spatial variable).

    Positive-order jets are integrated top-down exactly as in the local case;
    the jet-free remainder (which may involve nonlocal variables) is matched
    against an exact linear ansatz over the remainder's variables, the
    nonlocal variables, and x.
    """
    ctx = cov.base.ctx
    if ctx.n != 2:
        raise ValueError("extended integration requires exactly one spatial variable")
    x = ctx.spatial_indices[0]
    h = DiffPoly.zero()
    guard = 0
    while True:
        jets = [v for v in g.variables() if v.kind == JET and v.idx[1]]
        if not jets:
            break
        guard += 1
        if guard > 400:
            raise NonlocalObstruction(g)
        k = max(len(v.idx[1]) for v in jets)
        top = sorted((v for v in jets if len(v.idx[1]) == k), key=lambda v: v.sort_key())
        h1 = DiffPoly.zero()
        plan = []
        for v in top:
            a = g.partial(v)
            if any(w.kind == JET and len(w.idx[1]) >= k for w in a.variables()):
                raise NonlocalObstruction(g)
            sigma = list(v.idx[1])
            sigma.remove(x)
            plan.append((ctx.jet(v.idx[0], tuple(sigma)), a))
        for w, a in plan:
            h1 = h1 + antiderivative(a - h1.partial(w), w)
        for w, a in plan:
            if h1.partial(w) != a:
                raise NonlocalObstruction(g)
        g = g - cov.derive(x, h1)
        h = h + h1
    if not any(v.kind == NONLOCAL for v in g.variables()):
        try:
            return h + dx_inverse(ctx, g, x)
        except NotExactDerivative:
            pass  # the preimage may still exist once nonlocal variables are allowed
    h2 = _remainder_ansatz(cov, g, x)
    if h2 is None:
        raise NonlocalObstruction(g)
    return h + h2


def _remainder_ansatz(cov: Covering, r: DiffPoly, x: int) -> DiffPoly | None:
    """Exact linear solve of D̃_x h = r over a finite monomial pool."""
    ctx = cov.base.ctx
    pool_vars = sorted(r.variables() | {cov.nonlocal_var(a) for a in range(len(cov.layers))}
                       | {ctx.base(x)}, key=lambda v: v.sort_key())
    degree = r.total_degree() + 1
    monos: list[DiffPoly] = []
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(pool_vars, d):
            factors: dict[VarId, int] = {}
            for v in combo:
                factors[v] = factors.get(v, 0) + 1
            monos.append(DiffPoly({tuple(sorted(factors.items(), key=lambda t: t[0].sort_key())): Fraction(1)}))
    # reserved names: the grammar cannot produce identifiers containing '#'
    names = [f"#h{k}" for k in range(len(monos))] + ["#rhs"]
    candidate = DiffPoly.zero()
    for name, mono in zip(names, monos):
        candidate = candidate + DiffPoly.var(param_var(name)) * mono
    residual = cov.derive(x, candidate) - DiffPoly.var(param_var("#rhs")) * r
    system = LinearSystem(names, [])
    match_coefficients(residual, system)
    for vec in nullspace(system):
        lam = vec.get("#rhs", Fraction(0))
        if lam:
            bindings = {param_var(n): DiffPoly.const(vec.get(n, Fraction(0)) / lam) for n in names[:-1]}
            return candidate.substitute({**bindings, param_var("#rhs"): DiffPoly.zero()})
    return None


def extended_linearization_residual(cov: Covering, psi: Sequence[DiffPoly]) -> list[DiffPoly]:
    """Components of the linearization equation with extended derivatives."""
    sys = cov.base
    ctx = sys.ctx
    out = []
    for beta in range(ctx.m):
        acc = cov.derive(ctx.time_index, psi[beta])
        for v in sys.f[beta].variables():
            if v.kind == JET:
                alpha, sigma = v.idx
                acc = acc - sys.f[beta].partial(v) * cov.iterated(sigma, psi[alpha])
        out.append(acc)
    return out


def apply_shadow(sh: CartanShadow, phi: Sequence[DiffPoly],
                 sys: EvolutionSystem | None = None, cov: Covering | None = None) -> list[DiffPoly]:
    """Act by a recursion shadow on a symmetry.

    Jet Cartan coefficients contract to D_sigma(phi); each covering form
    contributes a nonlocal factor a with D̃_x a = (evolutionary field of the
    lifted symmetry applied to X_x), resolved layer by layer through the
    extended integration.  The output (which may involve nonlocal variables)
    is post-verified against the (extended) linearization equation.
    """
    cov = cov if cov is not None else (sh.covering if isinstance(sh.covering, Covering) else None)
    if sys is None:
        if cov is None:
            raise ValueError("apply_shadow needs the owning system or a covering")
        sys = cov.base
    local, residues = contract(list(phi), sh)
    used_layers = {a for res in residues for a in res}
    resolved: dict[int, DiffPoly] = {}
    if used_layers:
        if cov is None:
            raise ValueError("shadow carries covering forms but no covering was supplied")
        ctx = sys.ctx
        x = ctx.spatial_indices[0]
        for a in range(max(used_layers) + 1):
            xa = cov.expr(x, a)
            integrand = DiffPoly.zero()
            for v in xa.variables():
                if v.kind == JET:
                    j, sigma = v.idx
                    integrand = integrand + cov.iterated(sigma, phi[j]) * xa.partial(v)
                elif v.kind == NONLOCAL:
                    integrand = integrand + resolved[v.idx[0]] * xa.partial(v)
            resolved[a] = dx_inverse_extended(cov, integrand)
    result = []
    for comp, res in zip(local, residues):
        acc = comp
        for a, coef in res.items():
            acc = acc + coef * resolved[a]
        result.append(acc)
    if cov is not None:
        residual = extended_linearization_residual(cov, result)
    else:
        residual = linearization(sys).apply(result)
    if any(r for r in residual):
        raise VerificationFailed(f"shadow image is not a symmetry; residual {[str(r) for r in residual]}")
    return result


# --------------------------------------------------------------------------
# Hamiltonian structures


@dataclass(frozen=True)
class HamCandidate:
    """A square matrix operator tested for Hamiltonianity."""

    op: CDiffOp

    def __post_init__(self):
        if self.op.rows != self.op.cols:
            raise DimensionMismatch("Hamiltonian candidates must be square")


def is_skew_adjoint(A: HamCandidate | CDiffOp) -> bool:
    op = A.op if isinstance(A, HamCandidate) else A
    return op.is_skew_adjoint()


def _test_covector_names(ctx: JetContext, count: int) -> list[str]:
    taken = set(ctx.independent) | set(ctx.dependent) | set(ctx.parameters) | set(ctx.nonlocals)
    out = []
    for base in ("p", "q", "r", "p1", "q1", "r1", "p2", "q2", "r2"):
        if base not in taken:
            out.append(base)
        if len(out) == count:
            return out
    raise RuntimeError("could not allocate test covector names")


def _apply_free(op: CDiffOp, vec: list[DiffPoly]) -> list[DiffPoly]:
    """Apply a (possibly equation-owned) spatial operator on free jets."""
    ctx = op.ctx
    out = []
    for r in range(op.rows):
        acc = DiffPoly.zero()
        for c in range(op.cols):
            for sigma, a in op.entries[r][c].items():
                acc = acc + a * total_derivative_iterated(ctx, sigma, vec[c])
        out.append(acc)
    return out


def _coefficient_linearization_applied(op: CDiffOp, phi: list[DiffPoly], psi: list[DiffPoly]) -> list[DiffPoly]:
    """(ell_A(phi))(psi): differentiate only the operator coefficients along
    the evolutionary field of phi, then apply to psi."""
    ctx = op.ctx
    out = []
    for r in range(op.rows):
        acc = DiffPoly.zero()
        for c in range(op.cols):
            for sigma, a in op.entries[r][c].items():
                da = evolutionary(ctx, phi, a)
                if da:
                    acc = acc + da * total_derivative_iterated(ctx, sigma, psi[c])
        out.append(acc)
    return out


def jacobi_criterion_density(A: HamCandidate | CDiffOp) -> Density:
    """The cyclic criterion density sum_cyc <ell_A(A(p))(q), r> built from
    three fresh covector arguments (full jet variables)."""
    op = A.op if isinstance(A, HamCandidate) else A
    ctx = op.ctx
    m = op.rows
    names = _test_covector_names(ctx, 3)
    covecs = [[DiffPoly.var(ctx.testcov(nm, c)) for c in range(m)] for nm in names]
    density = DiffPoly.zero()
    for k in range(3):
        p, q, r = covecs[k], covecs[(k + 1) % 3], covecs[(k + 2) % 3]
        ap = _apply_free(op, p)
        lq = _coefficient_linearization_applied(op, ap, q)
        for comp, rr in zip(lq, r):
            density = density + comp * rr
    return Density(ctx, density)


def jacobi_check(A: HamCandidate | CDiffOp) -> bool:
    """Divergence test of the cyclic criterion density; the Euler test runs
    over the dependent variables and the covectors alike."""
    op = A.op if isinstance(A, HamCandidate) else A
    if not op.is_skew_adjoint():
        raise PreconditionFailed("operator is not skew-adjoint")
    return is_divergence(jacobi_criterion_density(op))


def hamiltonian_flow(A: HamCandidate | CDiffOp, H: Density) -> EvolutionSystem:
    """The evolution system u_t = A(E(H))."""
    op = A.op if isinstance(A, HamCandidate) else A
    ctx = H.ctx
    grad = euler(H)
    if len(grad) != op.cols:
        raise DimensionMismatch("Euler image does not match the operator shape")
    f = _apply_free(op, grad)
    return EvolutionSystem(ctx, f)


@dataclass(frozen=True)
class BracketResult:
    """A Poisson bracket representative and its Euler image; the bracket is
    zero in cohomology iff the representative is a total divergence."""

    density: Density
    euler_image: tuple[DiffPoly, ...]

    @property
    def is_trivial(self) -> bool:
        return all(c.is_zero() for c in self.euler_image)


def poisson_bracket(A: HamCandidate | CDiffOp, H1: Density, H2: Density) -> BracketResult:
    """{H1, H2}_A = <A(E(H1)), E(H2)> as a density modulo divergences."""
    op = A.op if isinstance(A, HamCandidate) else A
    if not op.is_skew_adjoint():
        raise PreconditionFailed("operator is not skew-adjoint")
    ctx = H1.ctx
    g1 = euler(H1)
    g2 = euler(H2)
    flow = _apply_free(op, g1)
    density = DiffPoly.zero()
    for a, b in zip(flow, g2):
        density = density + a * b
    d = Density(ctx, density)
    return BracketResult(d, tuple(euler(d)))


def gf_to_symmetry(A: HamCandidate | CDiffOp, sys: EvolutionSystem, psi: list[DiffPoly]) -> list[DiffPoly]:
    """Map a generating function of the flow to the symmetry A(psi)."""
    op = A.op if isinstance(A, HamCandidate) else A
    if not is_generating_function(sys, psi):
        raise VerificationFailed("input is not a generating function of the flow")
    s = _apply_free(op, psi)
    s = [sys.to_internal(c) for c in s]
    residual = linearization(sys).apply(s)
    if any(r for r in residual):
        raise VerificationFailed(f"image is not a symmetry; residual {[str(r) for r in residual]}")
    return s
