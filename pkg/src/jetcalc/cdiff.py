"""Operators in total derivatives and the Cartan-form calculus.

A CDiffOp is a matrix whose entries are finite sums sum_sigma a_sigma D_sigma
in normal form (coefficients to the left of the derivatives).  Operators may
live on the free jet space or be owned by an evolution system, in which case
every D is the restricted derivative on internal coordinates and the time
index refers to D̄_t.

Cartan-form-valued sections (shadows) are handled through the Lie-derivative
action of total derivatives on contact forms: the derivative along i of the
contact form of a generator v is the Cartan differential of D_i(v).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

from .dalg import (
    JET,
    NONLOCAL,
    DiffPoly,
    MultiIndex,
    mi_key,
    mi_splittings,
)
from .jetspace import (
    EvolutionSystem,
    GeneralSystem,
    JetContext,
    total_derivative_iterated,
)


class DimensionMismatch(ValueError):
    pass


class RegimeMismatch(ValueError):
    """Mixed free-jet and on-equation operators cannot be combined."""


class DegreeOverflow(ValueError):
    pass


Entry = dict[MultiIndex, DiffPoly]


def _clean(entry: Entry) -> Entry:
    return {s: p for s, p in entry.items() if p}


class CDiffOp:
    """Matrix operator sum_sigma a_sigma D_sigma in normal form."""

    __slots__ = ("ctx", "rows", "cols", "entries", "system")

    def __init__(self, ctx: JetContext, rows: int, cols: int,
                 entries: Sequence[Sequence[Entry]], system: EvolutionSystem | None = None):
        self.ctx = ctx
        self.rows = rows
        self.cols = cols
        self.entries = tuple(tuple(_clean(dict(entries[r][c])) for c in range(cols)) for r in range(rows))
        self.system = system

    # -- constructors --------------------------------------------------------

    @staticmethod
    def zero(ctx: JetContext, rows: int = 1, cols: int = 1, system=None) -> "CDiffOp":
        return CDiffOp(ctx, rows, cols, [[{} for _ in range(cols)] for _ in range(rows)], system)

    @staticmethod
    def scalar(ctx: JetContext, entry: Entry, system=None) -> "CDiffOp":
        return CDiffOp(ctx, 1, 1, [[entry]], system)

    @staticmethod
    def identity(ctx: JetContext, size: int = 1, system=None) -> "CDiffOp":
        one = DiffPoly.const(1)
        return CDiffOp(ctx, size, size,
                       [[{(): one} if r == c else {} for c in range(size)] for r in range(size)], system)

    @staticmethod
    def d(ctx: JetContext, i: int, system=None) -> "CDiffOp":
        return CDiffOp.scalar(ctx, {(i,): DiffPoly.const(1)}, system)

    @staticmethod
    def mult(ctx: JetContext, a: DiffPoly, system=None) -> "CDiffOp":
        return CDiffOp.scalar(ctx, {(): a}, system)

    # -- structure -----------------------------------------------------------

    @property
    def order(self) -> int:
        return max((len(s) for row in self.entries for e in row for s in e), default=0)

    def is_zero(self) -> bool:
        return all(not e for row in self.entries for e in row)

    def __eq__(self, other) -> bool:
        return (isinstance(other, CDiffOp) and self.rows == other.rows and self.cols == other.cols
                and self.system == other.system and self.entries == other.entries)

    def __hash__(self) -> int:
        return hash((self.rows, self.cols,
                     tuple(tuple(frozenset(e.items()) for e in row) for row in self.entries)))

    def entry(self, r: int, c: int) -> Entry:
        return self.entries[r][c]

    def _derive(self, sigma: MultiIndex, p: DiffPoly) -> DiffPoly:
        if self.system is not None:
            return self.system.restricted_iterated(sigma, p)
        return total_derivative_iterated(self.ctx, sigma, p)

    def _check_compatible(self, other: "CDiffOp"):
        if self.system != other.system:
            raise RegimeMismatch("operators live on different (free vs restricted) regimes")

    # -- algebra ---------------------------------------------------------------

    def __add__(self, other: "CDiffOp") -> "CDiffOp":
        self._check_compatible(other)
        if (self.rows, self.cols) != (other.rows, other.cols):
            raise DimensionMismatch("operator shapes differ")
        out = []
        for r in range(self.rows):
            row = []
            for c in range(self.cols):
                e = dict(self.entries[r][c])
                for s, p in other.entries[r][c].items():
                    e[s] = e.get(s, DiffPoly.zero()) + p
                row.append(e)
            out.append(row)
        return CDiffOp(self.ctx, self.rows, self.cols, out, self.system)

    def scale(self, c: int | Fraction) -> "CDiffOp":
        return CDiffOp(self.ctx, self.rows, self.cols,
                       [[{s: p.scale(c) for s, p in e.items()} for e in row] for row in self.entries],
                       self.system)

    def __neg__(self) -> "CDiffOp":
        return self.scale(-1)

    def __sub__(self, other: "CDiffOp") -> "CDiffOp":
        return self + (-other)

    def apply(self, vec: Sequence[DiffPoly]) -> list[DiffPoly]:
        """Componentwise sum_sigma a_sigma D_sigma(v), canonical."""
        if len(vec) != self.cols:
            raise DimensionMismatch(f"expected {self.cols} components, got {len(vec)}")
        for v in vec:
            if self.system is not None:
                self.system.check_internal(v)
            elif v.has_kind(NONLOCAL):
                raise RegimeMismatch("free-jet operator applied to a covering expression")
        out = []
        for r in range(self.rows):
            acc = DiffPoly.zero()
            for c in range(self.cols):
                for sigma, a in self.entries[r][c].items():
                    acc = acc + a * self._derive(sigma, vec[c])
            out.append(acc)
        return out

    def _compose_scalar(self, e2: Entry, e1: Entry) -> Entry:
        """Normal form of (sum a_s D_s) o (sum b_t D_t) with D pushed right."""
        out: Entry = {}
        for s, a in e2.items():
            for t, b in e1.items():
                for rho, rest, w in mi_splittings(s):
                    coef = a * self._derive(rho, b).scale(w)
                    if not coef:
                        continue
                    key = tuple(sorted(rest + t))
                    out[key] = out.get(key, DiffPoly.zero()) + coef
        return _clean(out)

    def compose(self, other: "CDiffOp") -> "CDiffOp":
        """self o other in normal form; apply(compose) == apply o apply."""
        self._check_compatible(other)
        if self.cols != other.rows:
            raise DimensionMismatch("inner dimensions differ")
        out = []
        for r in range(self.rows):
            row = []
            for c in range(other.cols):
                acc: Entry = {}
                for k in range(self.cols):
                    part = self._compose_scalar(self.entries[r][k], other.entries[k][c])
                    for s, p in part.items():
                        acc[s] = acc.get(s, DiffPoly.zero()) + p
                row.append(acc)
            out.append(row)
        return CDiffOp(self.ctx, self.rows, other.cols, out, self.system)

    def adjoint(self) -> "CDiffOp":
        """Formal integration-by-parts transpose.

        Scalar entries map by sum_s a_s D_s -> sum_s (-1)^|s| D_s o a_s
        (expanded to normal form); matrix entries are transposed.
        """
        out = [[dict() for _ in range(self.rows)] for _ in range(self.cols)]
        for r in range(self.rows):
            for c in range(self.cols):
                acc: Entry = out[c][r]
                for s, a in self.entries[r][c].items():
                    sign = -1 if len(s) % 2 else 1
                    for rho, rest, w in mi_splittings(s):
                        coef = self._derive(rho, a).scale(w * sign)
                        if not coef:
                            continue
                        acc[rest] = acc.get(rest, DiffPoly.zero()) + coef
        return CDiffOp(self.ctx, self.cols, self.rows, out, self.system)

    def is_skew_adjoint(self) -> bool:
        return (self + self.adjoint()).is_zero()

    # -- printing --------------------------------------------------------------

    def _entry_str(self, e: Entry) -> str:
        if not e:
            return "0"
        parts = []
        for sigma in sorted(e, key=mi_key):
            a = e[sigma]
            dstr = "*".join(
                f"D_{self.ctx.independent[i]}" + (f"^{sigma.count(i)}" if sigma.count(i) > 1 else "")
                for i in sorted(set(sigma)))
            astr = str(a)
            if not sigma:
                parts.append(astr if len(a.terms) == 1 else f"({astr})")
            elif a == DiffPoly.const(1):
                parts.append(dstr)
            elif a == DiffPoly.const(-1):
                parts.append(f"-{dstr}")
            elif len(a.terms) == 1:
                parts.append(f"{astr}*{dstr}")
            else:
                parts.append(f"({astr})*{dstr}")
        return " + ".join(parts).replace("+ -", "- ")

    def __str__(self) -> str:
        if self.rows == 1 and self.cols == 1:
            return self._entry_str(self.entries[0][0])
        lines = []
        for r in range(self.rows):
            lines.append("[" + ", ".join(self._entry_str(e) for e in self.entries[r]) + "]")
        return "\n".join(lines)

    def __repr__(self) -> str:  # pragma: no cover
        return f"CDiffOp({self})"


# --------------------------------------------------------------------------
# Linearization and evolutionary derivations


def linearization(sys: GeneralSystem | EvolutionSystem) -> CDiffOp:
    """Universal linearization.

    For a general system the entry (beta, alpha) is
    sum_sigma dF^beta/du^alpha_sigma D_sigma on the free jet space.  For an
    evolution system the operator of F = u_t - f restricted to the equation
    is returned: D̄_t - sum_sigma df^beta/du^alpha_sigma D_sigma.
    """
    if isinstance(sys, EvolutionSystem):
        ctx = sys.ctx
        t = ctx.time_index
        entries = []
        for beta in range(ctx.m):
            row = []
            for alpha in range(ctx.m):
                e: Entry = {}
                if alpha == beta:
                    e[(t,)] = DiffPoly.const(1)
                for v in sys.f[beta].variables():
                    if v.kind == JET and v.idx[0] == alpha:
                        sigma = v.idx[1]
                        e[sigma] = e.get(sigma, DiffPoly.zero()) - sys.f[beta].partial(v)
                row.append(e)
            entries.append(row)
        return CDiffOp(ctx, ctx.m, ctx.m, entries, system=sys)
    ctx = sys.ctx
    entries = []
    for F in sys.F:
        row: list[Entry] = [dict() for _ in range(ctx.m)]
        for v in F.variables():
            if v.kind == JET:
                alpha, sigma = v.idx
                e = row[alpha]
                e[sigma] = e.get(sigma, DiffPoly.zero()) + F.partial(v)
        entries.append(row)
    return CDiffOp(ctx, len(sys.F), ctx.m, entries)


def flow_linearization(sys: EvolutionSystem) -> CDiffOp:
    """ell_f = sum_sigma df^beta/du^alpha_sigma D_sigma (spatial, on-equation)."""
    ctx = sys.ctx
    entries = []
    for beta in range(ctx.m):
        row: list[Entry] = [dict() for _ in range(ctx.m)]
        for v in sys.f[beta].variables():
            if v.kind == JET:
                alpha, sigma = v.idx
                e = row[alpha]
                e[sigma] = e.get(sigma, DiffPoly.zero()) + sys.f[beta].partial(v)
        entries.append(row)
    return CDiffOp(ctx, ctx.m, ctx.m, entries, system=sys)


def evolutionary(ctx: JetContext, phi: Sequence[DiffPoly], p: DiffPoly) -> DiffPoly:
    """The evolutionary derivation: sum_{j,sigma} D_sigma(phi^j) dp/du^j_sigma."""
    if len(phi) != ctx.m:
        raise DimensionMismatch(f"generating section needs {ctx.m} components")
    out = DiffPoly.zero()
    for v in p.variables():
        if v.kind == JET:
            j, sigma = v.idx
            out = out + total_derivative_iterated(ctx, sigma, phi[j]) * p.partial(v)
    return out


def jacobi_bracket(ctx: JetContext, phi: Sequence[DiffPoly], psi: Sequence[DiffPoly]) -> list[DiffPoly]:
    """{phi, psi}^j = evolutionary_phi(psi^j) - evolutionary_psi(phi^j)."""
    return [evolutionary(ctx, phi, psi[j]) - evolutionary(ctx, psi, phi[j]) for j in range(ctx.m)]


# --------------------------------------------------------------------------
# Horizontal forms


@dataclass(frozen=True)
class HorForm:
    """Horizontal q-form: map from strictly increasing index tuples to
    coefficients; antisymmetry is absorbed into the sorted storage."""

    ctx: JetContext
    degree: int
    comps: tuple[tuple[tuple[int, ...], DiffPoly], ...]

    @staticmethod
    def make(ctx: JetContext, degree: int, comps: dict[tuple[int, ...], DiffPoly]) -> "HorForm":
        clean = []
        for idx, p in sorted(comps.items()):
            if len(idx) != degree or list(idx) != sorted(set(idx)):
                raise ValueError(f"component index {idx} is not a strictly increasing {degree}-tuple")
            if p:
                clean.append((idx, p))
        return HorForm(ctx, degree, tuple(clean))

    def coefficient(self, idx: tuple[int, ...]) -> DiffPoly:
        for i, p in self.comps:
            if i == idx:
                return p
        return DiffPoly.zero()

    def is_zero(self) -> bool:
        return not self.comps

    def __str__(self) -> str:
        if not self.comps:
            return "0"
        names = self.ctx.independent
        bits = []
        for idx, p in self.comps:
            dx = "^".join(f"d{names[i]}" for i in idx) if idx else "1"
            coef = str(p)
            if len(p.terms) > 1:
                coef = f"({coef})"
            bits.append(f"{coef}*{dx}" if idx else coef)
        return " + ".join(bits)


def wedge(a: HorForm, b: HorForm) -> HorForm:
    comps: dict[tuple[int, ...], DiffPoly] = {}
    for ia, pa in a.comps:
        for ib, pb in b.comps:
            if set(ia) & set(ib):
                continue
            merged = ia + ib
            order = sorted(range(len(merged)), key=lambda k: merged[k])
            inversions = sum(1 for x in range(len(order)) for y in range(x + 1, len(order)) if order[x] > order[y])
            key = tuple(sorted(merged))
            term = (pa * pb).scale((-1) ** inversions)
            comps[key] = comps.get(key, DiffPoly.zero()) + term
    return HorForm.make(a.ctx, a.degree + b.degree, comps)


def horizontal_differential(omega: HorForm, sys: EvolutionSystem | None = None) -> HorForm:
    """d̄(a dx_I) = sum_i D_i(a) dx_i ^ dx_I, restricted derivatives when on
    an equation; the result is re-sorted into canonical components."""
    ctx = omega.ctx
    if omega.degree >= ctx.n:
        raise DegreeOverflow(f"cannot raise degree {omega.degree} in {ctx.n} variables")
    comps: dict[tuple[int, ...], DiffPoly] = {}
    for idx, a in omega.comps:
        for i in range(ctx.n):
            if i in idx:
                continue
            if sys is not None:
                da = sys.restricted_derivative(i, a)
            else:
                da = total_derivative_iterated(ctx, (i,), a)
            if not da:
                continue
            sign = (-1) ** sum(1 for k in idx if k < i)
            key = tuple(sorted(idx + (i,)))
            comps[key] = comps.get(key, DiffPoly.zero()) + da.scale(sign)
    return HorForm.make(ctx, omega.degree + 1, comps)


# --------------------------------------------------------------------------
# Cartan-form-valued sections (shadows)

# Keys of the Cartan decomposition: ("u", j, sigma) for the contact form of
# the jet variable u^j_sigma, ("w", layer) for a covering variable's form.
CartanKey = tuple
CartanMap = dict[CartanKey, DiffPoly]


def _cmap_add(a: CartanMap, b: CartanMap) -> CartanMap:
    out = dict(a)
    for k, p in b.items():
        s = out.get(k, DiffPoly.zero()) + p
        if s:
            out[k] = s
        elif k in out:
            del out[k]
    return out


def _cmap_scale(a: CartanMap, p: DiffPoly) -> CartanMap:
    return {k: q for k, q in ((k, p * v) for k, v in a.items()) if q}


def _ckey_sort(k: CartanKey) -> tuple:
    if k[0] == "u":
        return (0, k[1], mi_key(k[2]))
    return (1, k[1])


@dataclass(frozen=True)
class CartanShadow:
    """Cartan-1-form-valued section: one CartanMap per output component.

    A plain Cartan differential has a single component; a recursion-operator
    shadow of an m-component evolution system has m of them.  `covering`
    (duck-typed, may be None) supplies the meaning of the "w" keys.
    """

    ctx: JetContext
    comps: tuple[CartanMap, ...]
    covering: object | None = None

    def __post_init__(self):
        object.__setattr__(self, "comps", tuple({k: p for k, p in c.items() if p} for c in self.comps))

    @staticmethod
    def zero(ctx: JetContext, ncomps: int = 1, covering=None) -> "CartanShadow":
        return CartanShadow(ctx, tuple({} for _ in range(ncomps)), covering)

    @staticmethod
    def identity(ctx: JetContext, covering=None) -> "CartanShadow":
        one = DiffPoly.const(1)
        return CartanShadow(ctx, tuple({("u", j, ()): one} for j in range(ctx.m)), covering)

    def __add__(self, other: "CartanShadow") -> "CartanShadow":
        return CartanShadow(self.ctx, tuple(_cmap_add(a, b) for a, b in zip(self.comps, other.comps)),
                            self.covering or other.covering)

    def scale(self, c: int | Fraction) -> "CartanShadow":
        k = DiffPoly.const(c)
        return CartanShadow(self.ctx, tuple(_cmap_scale(m, k) for m in self.comps), self.covering)

    def mult(self, p: DiffPoly) -> "CartanShadow":
        return CartanShadow(self.ctx, tuple(_cmap_scale(m, p) for m in self.comps), self.covering)

    def is_zero(self) -> bool:
        return all(not c for c in self.comps)

    def __eq__(self, other) -> bool:
        return isinstance(other, CartanShadow) and self.comps == other.comps

    def __hash__(self) -> int:
        return hash(tuple(frozenset(c.items()) for c in self.comps))

    def max_order(self) -> int:
        return max((len(k[2]) for c in self.comps for k in c if k[0] == "u"), default=0)

    def _key_str(self, k: CartanKey) -> str:
        if k[0] == "u":
            return f"om({self.ctx.jet(k[1], k[2]).name})"
        name = self.covering.layers[k[1]].name if self.covering is not None else f"w{k[1]}"
        return f"th({name})"

    def comp_str(self, c: CartanMap) -> str:
        if not c:
            return "0"
        bits = []
        for k in sorted(c, key=_ckey_sort):
            p = c[k]
            ks = self._key_str(k)
            if p == DiffPoly.const(1):
                bits.append(ks)
            elif len(p.terms) == 1 and not str(p).startswith("-"):
                bits.append(f"{p}*{ks}")
            else:
                bits.append(f"({p})*{ks}")
        return " + ".join(bits)

    def __str__(self) -> str:
        if len(self.comps) == 1:
            return self.comp_str(self.comps[0])
        return "; ".join(f"[{self.ctx.dependent[j]}] {self.comp_str(c)}" for j, c in enumerate(self.comps))


def cartan_differential(p: DiffPoly, ctx: JetContext, covering=None) -> CartanShadow:
    """d_C p = sum dp/du^j_sigma om^j_sigma (+ dp/dw^a th^a inside a covering)."""
    out: CartanMap = {}
    for v in p.variables():
        if v.kind == JET:
            j, sigma = v.idx
            out[("u", j, sigma)] = p.partial(v)
        elif v.kind == NONLOCAL:
            out[("w", v.idx[0])] = p.partial(v)
    return CartanShadow(ctx, (out,), covering)


def _cmap_derive(cmap: CartanMap, i: int, sys: EvolutionSystem, covering) -> CartanMap:
    """Lie action of the i-th (restricted/extended) total derivative on a
    Cartan-form value: derives coefficients and maps the contact form of a
    generator v to the Cartan differential of D_i(v)."""
    ctx = sys.ctx
    t = ctx.time_index
    derive: Callable[[DiffPoly], DiffPoly]
    if covering is not None:
        derive = lambda q: covering.derive(i, q)
    else:
        derive = lambda q: sys.restricted_derivative(i, q)
    out: CartanMap = {}
    for key, coef in cmap.items():
        dcoef = derive(coef)
        if dcoef:
            out = _cmap_add(out, {key: dcoef})
        if key[0] == "u":
            j, sigma = key[1], key[2]
            if i != t:
                out = _cmap_add(out, {("u", j, tuple(sorted(sigma + (i,)))): coef})
            else:
                image = cartan_differential(sys.dsigma_f(j, sigma), ctx, covering)
                out = _cmap_add(out, _cmap_scale(image.comps[0], coef))
        else:
            if covering is None:
                raise RegimeMismatch("shadow carries a covering form but no covering was supplied")
            x_expr = covering.expr(i, key[1])
            image = cartan_differential(x_expr, ctx, covering)
            out = _cmap_add(out, _cmap_scale(image.comps[0], coef))
    return out


def shadow_derivative(sh: CartanShadow, i: int, sys: EvolutionSystem, covering=None) -> CartanShadow:
    covering = covering if covering is not None else sh.covering
    return CartanShadow(sh.ctx, tuple(_cmap_derive(c, i, sys, covering) for c in sh.comps), covering)


def shadow_residual(sh: CartanShadow, sys: EvolutionSystem, covering=None) -> CartanShadow:
    """Left-hand side of the shadow equation, component beta:

        D_t(om^beta) - sum_{alpha,sigma} df^beta/du^alpha_sigma D_sigma(om^alpha)

    with restricted (or covering-extended) derivatives throughout.  A shadow
    solves the equation iff every Cartan coefficient of the result vanishes.
    """
    ctx = sys.ctx
    covering = covering if covering is not None else sh.covering
    if len(sh.comps) != ctx.m:
        raise DimensionMismatch("shadow must have one component per dependent variable")
    t = ctx.time_index

    derived: dict[tuple[int, MultiIndex], CartanMap] = {}

    def dsigma_comp(alpha: int, sigma: MultiIndex) -> CartanMap:
        key = (alpha, sigma)
        if key in derived:
            return derived[key]
        if not sigma:
            val = sh.comps[alpha]
        else:
            val = _cmap_derive(dsigma_comp(alpha, sigma[1:]), sigma[0], sys, covering)
        derived[key] = val
        return val

    out = []
    for beta in range(ctx.m):
        acc = _cmap_derive(sh.comps[beta], t, sys, covering)
        for v in sys.f[beta].variables():
            if v.kind != JET:
                continue
            alpha, sigma = v.idx
            coef = sys.f[beta].partial(v)
            acc = _cmap_add(acc, _cmap_scale(dsigma_comp(alpha, sigma), -coef))
        out.append(acc)
    return CartanShadow(ctx, tuple(out), covering)


def contract(phi: Sequence[DiffPoly], sh: CartanShadow) -> tuple[list[DiffPoly], list[dict[int, DiffPoly]]]:
    """Contraction of an evolutionary field into a shadow.

    Jet keys resolve as om^j_sigma -> D_sigma(phi^j); covering keys cannot be
    resolved without integrating the covering relations, so their coefficients
    are returned unevaluated: for output component r, residues[r] maps each
    covering layer to the coefficient standing in front of its contact form.
    """
    ctx = sh.ctx
    if len(phi) != ctx.m:
        raise DimensionMismatch(f"symmetry vector needs {ctx.m} components")
    local = []
    residues: list[dict[int, DiffPoly]] = []
    for cmap in sh.comps:
        acc = DiffPoly.zero()
        res: dict[int, DiffPoly] = {}
        for key, coef in cmap.items():
            if key[0] == "u":
                j, sigma = key[1], key[2]
                acc = acc + coef * total_derivative_iterated(ctx, sigma, phi[j])
            else:
                res[key[1]] = res.get(key[1], DiffPoly.zero()) + coef
        local.append(acc)
        residues.append(res)
    return local, residues
