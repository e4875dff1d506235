"""Jet-coordinate bookkeeping, equations, and total derivatives.

A JetContext fixes the independent/dependent variable names (the time
variable, when present, is always the last independent one).  Total
derivatives act on the free jet space; an EvolutionSystem u^j_t = f^j owns
the restricted derivative D̄_t and the rewriting of arbitrary jet
expressions into internal coordinates (spatial jets only).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .dalg import (
    BASE,
    JET,
    NONLOCAL,
    PARAM,
    TESTCOV,
    DiffPoly,
    MultiIndex,
    UnknownIdentifier,
    VarId,
    base_var,
    jet_var,
    mi_add,
    mi_key,
    mi_remove_one,
    nonlocal_var,
    param_var,
    testcov_var,
)


class NonlocalVariablePresent(ValueError):
    """Plain total derivatives do not act on covering variables."""


class NotInternal(ValueError):
    """Expression contains time-derivative jets (or other non-internal vars)."""


@dataclass(frozen=True)
class JetContext:
    """Declaration context: variable names and the time designation."""

    independent: tuple[str, ...]
    dependent: tuple[str, ...]
    parameters: tuple[str, ...] = ()
    has_time: bool = False
    nonlocals: tuple[str, ...] = ()  # covering variables currently in scope

    def __post_init__(self):
        names = list(self.independent) + list(self.dependent) + list(self.parameters) + list(self.nonlocals)
        if len(set(names)) != len(names):
            raise ValueError("variable names must be unique")
        if not self.independent or not self.dependent:
            raise ValueError("need at least one independent and one dependent variable")

    # -- shape -------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.independent)

    @property
    def m(self) -> int:
        return len(self.dependent)

    @property
    def time_index(self) -> int:
        if not self.has_time:
            raise ValueError("context has no time variable")
        return self.n - 1

    @property
    def spatial_indices(self) -> tuple[int, ...]:
        return tuple(range(self.n - 1)) if self.has_time else tuple(range(self.n))

    def with_nonlocals(self, names: Sequence[str]) -> "JetContext":
        return JetContext(self.independent, self.dependent, self.parameters, self.has_time, tuple(names))

    # -- variable factories --------------------------------------------------

    def base(self, i: int) -> VarId:
        return base_var(i, self.independent[i])

    def jet(self, j: int, sigma: MultiIndex = ()) -> VarId:
        return jet_var(j, sigma, self.dependent[j], self.independent)

    def param(self, name: str) -> VarId:
        if name not in self.parameters:
            raise KeyError(name)
        return param_var(name)

    def nonlocal_(self, layer: int) -> VarId:
        return nonlocal_var(layer, self.nonlocals[layer])

    def testcov(self, name: str, comp: int = 0, sigma: MultiIndex = ()) -> VarId:
        return testcov_var(name, comp, sigma, self.independent, self.dependent)

    def u(self, name_with_subscript: str) -> VarId:
        """Convenience lookup by printed form, e.g. ctx.u('u_{xx}')."""
        from .dalg import split_identifier

        base, sub = split_identifier(name_with_subscript)
        return self.resolve_identifier(base, sub, 0)

    # -- parser hook ---------------------------------------------------------

    def parse_subscript(self, sub: str, pos: int) -> MultiIndex:
        """Greedy longest-match decomposition of a subscript into base names."""
        sigma: list[int] = []
        rest = sub
        by_len = sorted(range(self.n), key=lambda i: -len(self.independent[i]))
        while rest:
            for i in by_len:
                nm = self.independent[i]
                if rest.startswith(nm):
                    sigma.append(i)
                    rest = rest[len(nm):]
                    break
            else:
                raise UnknownIdentifier(f"subscript '{sub}'", pos)
        return tuple(sorted(sigma))

    def resolve_identifier(self, base: str, sub: str | None, pos: int) -> VarId:
        if sub is None:
            if base in self.independent:
                return self.base(self.independent.index(base))
            if base in self.dependent:
                return self.jet(self.dependent.index(base), ())
            if base in self.parameters:
                return param_var(base)
            if base in self.nonlocals:
                return self.nonlocal_(self.nonlocals.index(base))
            raise UnknownIdentifier(base, pos)
        if base in self.dependent:
            return self.jet(self.dependent.index(base), self.parse_subscript(sub, pos))
        raise UnknownIdentifier(f"{base}_{sub}", pos)

    def parse(self, text: str) -> DiffPoly:
        from .dalg import parse as _parse

        return _parse(text, self)


# --------------------------------------------------------------------------
# Total derivatives on the free jet space


def total_derivative(ctx: JetContext, i: int, p: DiffPoly) -> DiffPoly:
    """D_i p = dp/dx_i + sum u^j_{sigma+i} dp/du^j_sigma (test covectors too)."""
    if p.has_kind(NONLOCAL):
        raise NonlocalVariablePresent(
            "expression contains covering variables; use the covering's extended derivative")
    out = p.partial(ctx.base(i))
    for v in p.variables():
        if v.kind == JET:
            j, sigma = v.idx
            shifted = ctx.jet(j, mi_add(sigma, i))
        elif v.kind == TESTCOV:
            nm, comp, sigma = v.idx
            shifted = ctx.testcov(nm, comp, mi_add(sigma, i))
        else:
            continue
        out = out + DiffPoly.var(shifted) * p.partial(v)
    return out


def total_derivative_iterated(ctx: JetContext, sigma: MultiIndex, p: DiffPoly) -> DiffPoly:
    for i in sigma:
        p = total_derivative(ctx, i, p)
    return p


def multi_indices_up_to(ctx: JetContext, order: int, spatial_only: bool = False) -> list[MultiIndex]:
    """All multi-indices of order <= `order`, in graded-lex order."""
    indices = ctx.spatial_indices if spatial_only else tuple(range(ctx.n))
    out: list[MultiIndex] = [()]
    layer: list[MultiIndex] = [()]
    for _ in range(order):
        nxt = {mi_add(s, i) for s in layer for i in indices}
        layer = sorted(nxt, key=mi_key)
        out.extend(layer)
    return sorted(set(out), key=mi_key)


# --------------------------------------------------------------------------
# Systems


@dataclass(frozen=True)
class GeneralSystem:
    """A system {F^k = 0} on the free jet space."""

    ctx: JetContext
    F: tuple[DiffPoly, ...]

    def __post_init__(self):
        for k, comp in enumerate(self.F):
            for v in comp.variables():
                if v.kind not in (BASE, JET, PARAM):
                    raise ValueError(f"component {k} contains a non-jet variable {v.name}")


def prolong(sys: GeneralSystem, order: int) -> list[DiffPoly]:
    """All D_sigma F^k with |sigma| <= order (k major, sigma graded-lex minor)."""
    sigmas = multi_indices_up_to(sys.ctx, order)
    return [total_derivative_iterated(sys.ctx, s, comp) for comp in sys.F for s in sigmas]


class EvolutionSystem:
    """An evolution system u^j_t = f^j in internal coordinates.

    The right-hand sides may involve base variables, parameters, and spatial
    jets only.  The instance memoizes D_sigma(f^j) since restriction formulas
    reuse them heavily.
    """

    def __init__(self, ctx: JetContext, f: Sequence[DiffPoly]):
        if not ctx.has_time:
            raise ValueError("evolution system needs a time variable")
        if len(f) != ctx.m:
            raise ValueError(f"expected {ctx.m} right-hand sides, got {len(f)}")
        t = ctx.time_index
        for j, comp in enumerate(f):
            for v in comp.variables():
                if v.kind == NONLOCAL:
                    raise ValueError("right-hand sides must be covering-free")
                if v.kind == TESTCOV:
                    raise ValueError("right-hand sides must not contain test covectors")
                if v.kind == JET and t in v.idx[1]:
                    raise NotInternal(f"right-hand side {j} contains time derivative {v.name}")
        self.ctx = ctx
        self.f = tuple(f)
        self._dsigma_f: dict[tuple[int, MultiIndex], DiffPoly] = {}

    @property
    def order(self) -> int:
        k = 0
        for comp in self.f:
            for v in comp.variables():
                if v.kind == JET:
                    k = max(k, len(v.idx[1]))
        return k

    def __eq__(self, other) -> bool:
        return isinstance(other, EvolutionSystem) and self.ctx == other.ctx and self.f == other.f

    def __hash__(self) -> int:
        return hash((self.ctx, self.f))

    def dsigma_f(self, j: int, sigma: MultiIndex) -> DiffPoly:
        """Spatial D_sigma(f^j), memoized."""
        sigma = tuple(sorted(sigma))
        key = (j, sigma)
        got = self._dsigma_f.get(key)
        if got is not None:
            return got
        if not sigma:
            val = self.f[j]
        else:
            prev = self.dsigma_f(j, sigma[1:])
            val = total_derivative(self.ctx, sigma[0], prev)
        self._dsigma_f[key] = val
        return val

    def check_internal(self, p: DiffPoly):
        t = self.ctx.time_index
        for v in p.variables():
            if v.kind == JET and t in v.idx[1]:
                raise NotInternal(f"{v.name} is not an internal coordinate")
            if v.kind == NONLOCAL:
                raise NonlocalVariablePresent(v.name)

    def restricted_time(self, p: DiffPoly) -> DiffPoly:
        """D̄_t p = dp/dt + sum_sigma D_sigma(f^j) dp/du^j_sigma on internal p."""
        self.check_internal(p)
        if p.has_kind(TESTCOV):
            raise NotInternal("the restricted time derivative does not act on test covectors")
        out = p.partial(self.ctx.base(self.ctx.time_index))
        for v in p.variables():
            if v.kind == JET:
                j, sigma = v.idx
                out = out + self.dsigma_f(j, sigma) * p.partial(v)
        return out

    def restricted_derivative(self, i: int, p: DiffPoly) -> DiffPoly:
        """D̄_i on internal expressions: spatial D_i, or D̄_t for the time index."""
        if i == self.ctx.time_index:
            return self.restricted_time(p)
        self.check_internal(p)
        return total_derivative(self.ctx, i, p)

    def restricted_iterated(self, sigma: MultiIndex, p: DiffPoly) -> DiffPoly:
        for i in sigma:
            p = self.restricted_derivative(i, p)
        return p

    def to_internal(self, p: DiffPoly) -> DiffPoly:
        """Rewrite time-derivative jets via u^j_t = f^j until only internal
        coordinates remain.

        The highest-total-order offender is eliminated first; each rewrite
        u^j_{sigma+t} -> D_sigma(f^j) (free total derivatives) strictly lowers
        the time-count of the remaining offenders, so the loop terminates.
        """
        t = self.ctx.time_index
        while True:
            offenders = [v for v in p.variables() if v.kind == JET and t in v.idx[1]]
            if not offenders:
                return p
            v = max(offenders, key=lambda w: (len(w.idx[1]), w.sort_key()))
            j, sigma = v.idx
            rest = mi_remove_one(sigma, t)
            image = total_derivative_iterated(self.ctx, rest, self.f[j])
            p = p.substitute({v: image})
