"""Exact differential-polynomial arithmetic.

Expressions are polynomials with rational coefficients in a mixed set of
formal variables: base (independent) variables, jet variables u^j_sigma,
nonlocal variables of a covering, named parameters, test covectors, and an
auxiliary scalar used by the homotopy integral.  Everything is immutable
and canonical: equal values have equal representations, so equality of
expressions is dictionary equality.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import Iterable, Iterator, Mapping

Rational = Fraction

# Variable kinds, in the fixed total order used for canonical forms.
BASE = 0
JET = 1
NONLOCAL = 2
PARAM = 3
TESTCOV = 4
HSCALAR = 5

# A multi-index is a sorted tuple of base-variable indices; repetition
# encodes the derivative order in that variable.
MultiIndex = tuple[int, ...]


def mi_make(indices: Iterable[int]) -> MultiIndex:
    return tuple(sorted(indices))


def mi_add(sigma: MultiIndex, i: int) -> MultiIndex:
    return tuple(sorted(sigma + (i,)))


def mi_count(sigma: MultiIndex, i: int) -> int:
    return sum(1 for k in sigma if k == i)


def mi_remove_one(sigma: MultiIndex, i: int) -> MultiIndex:
    out = list(sigma)
    out.remove(i)
    return tuple(out)


def mi_key(sigma: MultiIndex) -> tuple:
    """Graded-lex sort key: order first, then positions."""
    return (len(sigma), sigma)


def mi_splittings(sigma: MultiIndex) -> Iterator[tuple[MultiIndex, MultiIndex, int]]:
    """All ways to split sigma into tau + (sigma - tau), with multinomial weight.

    Yields (tau, rest, binom(sigma, tau)) where binom is the product of
    per-variable binomial coefficients.  Used by the Leibniz rule for
    iterated total derivatives.
    """
    items = sorted(set(sigma))
    counts = [mi_count(sigma, i) for i in items]

    def rec(pos: int, tau: list[int], rest: list[int], weight: int):
        if pos == len(items):
            yield tuple(tau), tuple(rest), weight
            return
        i, c = items[pos], counts[pos]
        for k in range(c + 1):
            yield from rec(pos + 1, tau + [i] * k, rest + [i] * (c - k), weight * comb(c, k))

    yield from rec(0, [], [], 1)


@dataclass(frozen=True)
class VarId:
    """Identity of a formal variable.

    `idx` is the identity payload (per-kind encoding); `name` is display-only
    and excluded from equality so that bookkeeping never depends on how a
    variable happens to be rendered.
    """

    kind: int
    idx: tuple
    name: str = field(default="", compare=False)

    def sort_key(self) -> tuple:
        if self.kind == JET:
            j, sigma = self.idx
            return (JET, j, len(sigma), sigma)
        if self.kind == TESTCOV:
            nm, comp, sigma = self.idx
            return (TESTCOV, nm, comp, len(sigma), sigma)
        return (self.kind,) + self.idx

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"VarId({self.name or self.idx})"


def base_var(i: int, name: str) -> VarId:
    return VarId(BASE, (i,), name)


def jet_subscript(sigma: MultiIndex, base_names: tuple[str, ...]) -> str:
    if not sigma:
        return ""
    letters = "".join(base_names[i] for i in sigma)
    return "_" + (letters if len(sigma) == 1 else "{" + letters + "}")


def jet_var(j: int, sigma: MultiIndex, dep_name: str, base_names: tuple[str, ...]) -> VarId:
    return VarId(JET, (j, tuple(sorted(sigma))), dep_name + jet_subscript(tuple(sorted(sigma)), base_names))


def nonlocal_var(layer: int, name: str) -> VarId:
    return VarId(NONLOCAL, (layer,), name)


def param_var(name: str) -> VarId:
    return VarId(PARAM, (name,), name)


def testcov_var(name: str, comp: int, sigma: MultiIndex, base_names: tuple[str, ...], dep_names: tuple[str, ...] = ()) -> VarId:
    display = name if len(dep_names) <= 1 else f"{name}[{dep_names[comp]}]"
    return VarId(TESTCOV, (name, comp, tuple(sorted(sigma))), display + jet_subscript(tuple(sorted(sigma)), base_names))


# The homotopy scalar is unique; its display name cannot be produced by the
# expression grammar, so it can never collide with user identifiers.
HOMOTOPY_SCALAR = VarId(HSCALAR, (), "@s")


# A monomial's factor part: ((VarId, exponent), ...) sorted by VarId.sort_key.
Factors = tuple[tuple[VarId, int], ...]


def _merge_factors(a: Factors, b: Factors) -> Factors:
    out: dict[VarId, int] = {}
    for v, e in a:
        out[v] = out.get(v, 0) + e
    for v, e in b:
        out[v] = out.get(v, 0) + e
    return tuple(sorted(((v, e) for v, e in out.items() if e), key=lambda p: p[0].sort_key()))


def _monomial_key(factors: Factors) -> tuple:
    """Canonical order: total degree descending, then exponents read from the
    highest variable downwards ascending.  Makes `u^2 - u_x^2` print with u^2
    first and `u_x^2 + 3/2*u*u_xx` with u_x^2 first."""
    deg = sum(e for _, e in factors)
    tail = tuple((v.sort_key(), e) for v, e in reversed(factors))
    return (-deg, tail)


class DiffPoly:
    """Immutable multivariate polynomial with Fraction coefficients.

    Stored as a map from factor tuples to nonzero coefficients; the zero
    polynomial is the empty map.  All operations return new canonical values.
    """

    __slots__ = ("terms", "_hash")

    def __init__(self, terms: Mapping[Factors, Fraction] | None = None):
        clean = {}
        if terms:
            for f, c in terms.items():
                if c:
                    clean[f] = c
        object.__setattr__(self, "terms", clean)
        object.__setattr__(self, "_hash", None)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def zero() -> "DiffPoly":
        return _ZERO

    @staticmethod
    def const(c: int | Fraction) -> "DiffPoly":
        c = Fraction(c)
        return DiffPoly({(): c}) if c else _ZERO

    @staticmethod
    def var(v: VarId) -> "DiffPoly":
        return DiffPoly({((v, 1),): Fraction(1)})

    # -- ring operations ---------------------------------------------------

    def __add__(self, other: "DiffPoly") -> "DiffPoly":
        if not self.terms:
            return other
        if not other.terms:
            return self
        out = dict(self.terms)
        for f, c in other.terms.items():
            s = out.get(f, _F0) + c
            if s:
                out[f] = s
            elif f in out:
                del out[f]
        return DiffPoly(out)

    def __neg__(self) -> "DiffPoly":
        return DiffPoly({f: -c for f, c in self.terms.items()})

    def __sub__(self, other: "DiffPoly") -> "DiffPoly":
        return self + (-other)

    def __mul__(self, other: "DiffPoly") -> "DiffPoly":
        if not self.terms or not other.terms:
            return _ZERO
        out: dict[Factors, Fraction] = {}
        for fa, ca in self.terms.items():
            for fb, cb in other.terms.items():
                f = _merge_factors(fa, fb)
                s = out.get(f, _F0) + ca * cb
                if s:
                    out[f] = s
                elif f in out:
                    del out[f]
        return DiffPoly(out)

    def scale(self, c: int | Fraction) -> "DiffPoly":
        c = Fraction(c)
        if not c:
            return _ZERO
        return DiffPoly({f: c * k for f, k in self.terms.items()})

    def __pow__(self, n: int) -> "DiffPoly":
        if n < 0:
            raise ValueError("negative power of a differential polynomial")
        result = DiffPoly.const(1)
        square = self
        while n:
            if n & 1:
                result = result * square
            n >>= 1
            if n:
                square = square * square
        return result

    # -- structure ---------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    def __bool__(self) -> bool:
        return bool(self.terms)

    def __eq__(self, other) -> bool:
        return isinstance(other, DiffPoly) and self.terms == other.terms

    def __hash__(self) -> int:
        h = self._hash
        if h is None:
            h = hash(frozenset(self.terms.items()))
            object.__setattr__(self, "_hash", h)
        return h

    def variables(self) -> set[VarId]:
        out: set[VarId] = set()
        for f in self.terms:
            for v, _ in f:
                out.add(v)
        return out

    def has_kind(self, kind: int) -> bool:
        return any(v.kind == kind for f in self.terms for v, _ in f)

    def constant_term(self) -> Fraction:
        return self.terms.get((), _F0)

    def as_constant(self) -> Fraction:
        """The value of a constant polynomial; raises if variables remain."""
        if not self.terms:
            return _F0
        if len(self.terms) == 1 and () in self.terms:
            return self.terms[()]
        raise ValueError(f"not a constant polynomial: {self}")

    def total_degree(self) -> int:
        return max((sum(e for _, e in f) for f in self.terms), default=0)

    def degree_in(self, pred) -> int:
        """Max total degree over variables selected by pred(VarId)."""
        best = 0
        for f in self.terms:
            d = sum(e for v, e in f if pred(v))
            best = max(best, d)
        return best

    def sorted_terms(self) -> list[tuple[Factors, Fraction]]:
        return sorted(self.terms.items(), key=lambda t: _monomial_key(t[0]))

    # -- calculus ----------------------------------------------------------

    def partial(self, v: VarId) -> "DiffPoly":
        """Formal partial derivative; every VarId is an independent coordinate."""
        out: dict[Factors, Fraction] = {}
        for f, c in self.terms.items():
            for pos, (w, e) in enumerate(f):
                if w == v:
                    if e == 1:
                        nf = f[:pos] + f[pos + 1:]
                    else:
                        nf = f[:pos] + ((w, e - 1),) + f[pos + 1:]
                    s = out.get(nf, _F0) + c * e
                    if s:
                        out[nf] = s
                    elif nf in out:
                        del out[nf]
                    break
        return DiffPoly(out)

    def substitute(self, bindings: Mapping[VarId, "DiffPoly"]) -> "DiffPoly":
        """Simultaneous substitution of variables by polynomials.

        All bindings are applied in a single pass (the images are not
        re-substituted), so self-referencing images such as u -> s*u are
        well-defined.
        """
        if not bindings:
            return self
        result = _ZERO
        for f, c in self.terms.items():
            term = DiffPoly.const(c)
            for v, e in f:
                img = bindings.get(v)
                term = term * (img ** e if img is not None else DiffPoly({((v, e),): _F1}))
            result = result + term
        return result

    def integrate_scalar_01(self) -> "DiffPoly":
        """Definite integral over the homotopy scalar on [0, 1]."""
        out = _ZERO
        for f, c in self.terms.items():
            k = 0
            rest = []
            for v, e in f:
                if v.kind == HSCALAR:
                    k = e
                else:
                    rest.append((v, e))
            out = out + DiffPoly({tuple(rest): c / (k + 1)})
        return out

    # -- printing ----------------------------------------------------------

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts: list[str] = []
        for f, c in self.sorted_terms():
            body = "*".join(v.name if e == 1 else f"{v.name}^{e}" for v, e in f)
            mag = abs(c)
            if not body:
                chunk = str(mag)
            elif mag == 1:
                chunk = body
            else:
                chunk = f"{mag}*{body}"
            if not parts:
                parts.append(chunk if c > 0 else "-" + chunk)
            else:
                parts.append(("+ " if c > 0 else "- ") + chunk)
        return " ".join(parts)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"DiffPoly({self})"


_F0 = Fraction(0)
_F1 = Fraction(1)
_ZERO = DiffPoly()


# --------------------------------------------------------------------------
# Parsing


class ParseError(ValueError):
    """Syntax error in an expression, annotated with the offending position."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} (at position {pos})")
        self.pos = pos


class UnknownIdentifier(ParseError):
    def __init__(self, name: str, pos: int):
        super().__init__(f"unknown identifier '{name}'", pos)
        self.identifier = name


_TOKEN_OPS = set("+-*/^()")


def tokenize(text: str) -> list[tuple[str, str, int]]:
    """Tokens are (type, value, pos) with type in {num, ident, op, end}.

    An identifier may carry a derivative subscript: `u_x` or `u_{xxt}`.
    """
    tokens: list[tuple[str, str, int]] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(("num", text[i:j], i))
            i = j
            continue
        if ch.isalpha():
            j = i
            while j < n and (text[j].isalnum()):
                j += 1
            name = text[i:j]
            if j < n and text[j] == "_":
                k = j + 1
                if k < n and text[k] == "{":
                    close = text.find("}", k)
                    if close < 0:
                        raise ParseError("unterminated '{' in subscript", k)
                    tokens.append(("ident", text[i:close + 1], i))
                    i = close + 1
                    continue
                m = k
                while m < n and text[m].isalnum():
                    m += 1
                if m == k:
                    raise ParseError("empty subscript after '_'", k)
                tokens.append(("ident", text[i:m], i))
                i = m
                continue
            tokens.append(("ident", name, i))
            i = j
            continue
        if ch in _TOKEN_OPS:
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch == ",":
            tokens.append(("op", ",", i))
            i += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", n))
    return tokens


def split_identifier(token: str) -> tuple[str, str | None]:
    """Split `u_{xxt}` into ('u', 'xxt'); bare names give (name, None)."""
    if "_" not in token:
        return token, None
    base, sub = token.split("_", 1)
    if sub.startswith("{"):
        sub = sub[1:-1]
    return base, sub


class _Parser:
    """Recursive-descent parser over the shared expression grammar.

    `resolver(base, subscript, pos) -> VarId` maps identifiers to variables;
    it is supplied by the declaration context and raises UnknownIdentifier
    for names that are not in scope.
    """

    def __init__(self, text: str, resolver):
        self.tokens = tokenize(text)
        self.pos = 0
        self.resolver = resolver

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.pos]

    def next(self) -> tuple[str, str, int]:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def expect_op(self, op: str):
        typ, val, pos = self.next()
        if typ != "op" or val != op:
            raise ParseError(f"expected '{op}'", pos)

    def parse_expr(self) -> DiffPoly:
        acc = self.parse_term()
        while True:
            typ, val, _ = self.peek()
            if typ == "op" and val in "+-":
                self.next()
                rhs = self.parse_term()
                acc = acc + rhs if val == "+" else acc - rhs
            else:
                return acc

    def parse_term(self) -> DiffPoly:
        acc = self.parse_factor()
        while True:
            typ, val, pos = self.peek()
            if typ == "op" and val == "*":
                self.next()
                acc = acc * self.parse_factor()
            elif typ == "op" and val == "/":
                self.next()
                divisor = self.parse_factor()
                try:
                    c = divisor.as_constant()
                except ValueError:
                    raise ParseError("division is only defined by rational constants", pos)
                if c == 0:
                    raise ParseError("division by zero", pos)
                acc = acc.scale(Fraction(1) / c)
            else:
                return acc

    def parse_factor(self) -> DiffPoly:
        typ, val, pos = self.peek()
        if typ == "op" and val in "+-":
            self.next()
            inner = self.parse_factor()
            return inner if val == "+" else -inner
        return self.parse_power()

    def parse_power(self) -> DiffPoly:
        atom = self.parse_atom()
        typ, val, pos = self.peek()
        if typ == "op" and val == "^":
            self.next()
            etyp, eval_, epos = self.next()
            if etyp != "num":
                raise ParseError("exponent must be a nonnegative integer", epos)
            return atom ** int(eval_)
        return atom

    def parse_atom(self) -> DiffPoly:
        typ, val, pos = self.next()
        if typ == "num":
            return DiffPoly.const(int(val))
        if typ == "ident":
            base, sub = split_identifier(val)
            return DiffPoly.var(self.resolver(base, sub, pos))
        if typ == "op" and val == "(":
            inner = self.parse_expr()
            self.expect_op(")")
            return inner
        raise ParseError("expected a number, identifier or '('", pos)


def parse(text: str, ctx) -> DiffPoly:
    """Parse an expression string against a declaration context.

    `ctx` must provide resolve_identifier(base, subscript, pos) -> VarId.
    """
    p = _Parser(text, ctx.resolve_identifier)
    result = p.parse_expr()
    typ, _, pos = p.peek()
    if typ != "end":
        raise ParseError("trailing input", pos)
    return result
