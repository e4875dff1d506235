"""Command-line workbench.

Reads an equation-definition file, dispatches the requested computation, and
renders a human-readable or machine-readable (JSON) report.  Exit codes:
0 success, 1 verification failure, 2 input error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field

from .dalg import DiffPoly, ParseError, split_identifier, tokenize
from .jetspace import EvolutionSystem, JetContext, NotInternal
from .cdiff import CDiffOp, linearization
from .variational import (
    ConservedCurrent,
    Density,
    NotExactDerivative,
    NotVariational,
    current_from_gf,
    divergence_residual,
    euler,
    homotopy_lagrangian,
    self_adjoint_test,
)
from .detsolve import Ansatz, generating_functions, shadows, symmetries
from .hamrec import (
    Covering,
    NonlocalObstruction,
    NotFlat,
    apply_shadow,
    hamiltonian_flow,
    is_skew_adjoint,
    jacobi_check,
    make_covering,
    poisson_bracket,
)


class InputError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line else ""
        super().__init__(f"{where}{message}")
        self.line = line


@dataclass
class EquationFile:
    path: str
    ctx: JetContext
    system: EvolutionSystem | None = None
    coverings: dict[str, Covering] = field(default_factory=dict)
    operators: dict[str, CDiffOp] = field(default_factory=dict)
    densities: dict[str, Density] = field(default_factory=dict)
    currents: dict[str, ConservedCurrent] = field(default_factory=dict)
    raw: bytes = b""

    def need_system(self) -> EvolutionSystem:
        if self.system is None:
            raise InputError("the equation file declares no evolution system")
        return self.system

    def input_hash(self) -> str:
        return hashlib.sha256(self.raw).hexdigest()


def _split_top_level(text: str, sep: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in text:
        if ch in "({[":
            depth += 1
        elif ch in ")}]":
            depth -= 1
        if ch == sep and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return [s.strip() for s in out]


# --------------------------------------------------------------------------
# Operator expressions (D_x, powers, compositions)


class _OpParser:
    """Parses `D_x^3 + (2/3)*u*D_x + (1/3)*u_x` into a scalar CDiffOp; `*`
    means composition (with functions acting as multiplication operators)."""

    def __init__(self, text: str, ctx: JetContext):
        self.tokens = tokenize(text)
        self.pos = 0
        self.ctx = ctx

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def parse(self) -> CDiffOp:
        op = self.parse_sum()
        typ, _, pos = self.peek()
        if typ != "end":
            raise ParseError("trailing input in operator expression", pos)
        return op

    def parse_sum(self) -> CDiffOp:
        acc = self.parse_product()
        while True:
            typ, val, _ = self.peek()
            if typ == "op" and val in "+-":
                self.next()
                rhs = self.parse_product()
                acc = acc + rhs if val == "+" else acc - rhs
            else:
                return acc

    def parse_product(self) -> CDiffOp:
        acc = self.parse_signed()
        while True:
            typ, val, pos = self.peek()
            if typ == "op" and val == "*":
                self.next()
                acc = acc.compose(self.parse_signed())
            elif typ == "op" and val == "/":
                self.next()
                rhs = self.parse_signed()
                if rhs.order != 0:
                    raise ParseError("operator division only by rational constants", pos)
                c = rhs.entries[0][0].get((), DiffPoly.zero()).as_constant()
                if c == 0:
                    raise ParseError("division by zero", pos)
                acc = acc.scale(1 / c)
            else:
                return acc

    def parse_signed(self) -> CDiffOp:
        typ, val, _ = self.peek()
        if typ == "op" and val in "+-":
            self.next()
            inner = self.parse_signed()
            return inner if val == "+" else -inner
        return self.parse_power()

    def parse_power(self) -> CDiffOp:
        atom = self.parse_atom()
        typ, val, pos = self.peek()
        if typ == "op" and val == "^":
            self.next()
            etyp, ev, epos = self.next()
            if etyp != "num":
                raise ParseError("operator exponent must be a nonnegative integer", epos)
            n = int(ev)
            out = CDiffOp.identity(self.ctx)
            for _ in range(n):
                out = out.compose(atom)
            return out
        return atom

    def parse_atom(self) -> CDiffOp:
        typ, val, pos = self.next()
        if typ == "num":
            return CDiffOp.mult(self.ctx, DiffPoly.const(int(val)))
        if typ == "op" and val == "(":
            inner = self.parse_sum()
            t2, v2, p2 = self.next()
            if (t2, v2) != ("op", ")"):
                raise ParseError("expected ')'", p2)
            return inner
        if typ == "ident":
            base, sub = split_identifier(val)
            if base == "D" and sub is not None and sub in self.ctx.independent:
                return CDiffOp.d(self.ctx, self.ctx.independent.index(sub))
            return CDiffOp.mult(self.ctx, DiffPoly.var(self.ctx.resolve_identifier(base, sub, pos)))
        raise ParseError("expected an operator atom", pos)


def parse_operator(text: str, ctx: JetContext) -> CDiffOp:
    return _OpParser(text, ctx).parse()


# --------------------------------------------------------------------------
# Equation files


def parse_equation_file(path: str) -> EquationFile:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read '{path}': {exc}")
    lines = raw.decode("utf-8").splitlines()

    independent: list[str] = []
    time_name: str | None = None
    dependent: list[str] = []
    params: list[str] = []
    evolution: dict[str, tuple[str, int]] = {}
    covering_lines: list[tuple[str, str, int]] = []
    named: list[tuple[str, str, str, int]] = []  # kind, name, payload, line

    for no, rawline in enumerate(lines, start=1):
        line = rawline.split("#", 1)[0].strip()
        if not line:
            continue
        first = line.split(None, 1)[0]
        if first in ("operator", "density", "current"):
            rest = line[len(first):].strip()
            name, eqsign, payload = rest.partition("=")
            if not eqsign or not name.strip():
                raise InputError(f"expected '{first} NAME = ...'", no)
            named.append((first, name.strip(), payload.strip(), no))
            continue
        if ":" not in line:
            raise InputError(f"expected 'keyword: ...', got '{line}'", no)
        head, _, body = line.partition(":")
        head = head.strip()
        body = body.strip()
        if head == "independent":
            for item in _split_top_level(body, ","):
                if item.endswith("(time)"):
                    time_name = item[: -len("(time)")].strip()
                    independent.append(time_name)
                else:
                    independent.append(item)
        elif head == "dependent":
            dependent += [s for s in _split_top_level(body, ",") if s]
        elif head == "param":
            params += [s for s in _split_top_level(body, ",") if s]
        elif head == "evolution":
            lhs, _, rhs = body.partition("=")
            evolution[lhs.strip()] = (rhs.strip(), no)
        elif head.startswith("covering"):
            name = head[len("covering"):].strip()
            if not name:
                raise InputError("covering needs a name", no)
            covering_lines.append((name, body, no))
        else:
            raise InputError(f"unknown declaration '{head}'", no)

    if not independent or not dependent:
        raise InputError("file must declare independent and dependent variables")
    if time_name is not None:
        if independent[-1] != time_name:
            independent.remove(time_name)
            independent.append(time_name)
    ctx = JetContext(tuple(independent), tuple(dependent), tuple(params), has_time=time_name is not None)

    eq = EquationFile(path, ctx, raw=raw)

    if evolution:
        if time_name is None:
            raise InputError("evolution declarations need a '(time)' independent variable")
        rhss = []
        for j, dep in enumerate(dependent):
            key = f"{dep}_{time_name}"
            if key not in evolution:
                raise InputError(f"missing evolution equation for '{key}'")
            text, no = evolution[key]
            try:
                rhss.append(ctx.parse(text))
            except ParseError as exc:
                raise InputError(f"in evolution for {dep}: {exc}", no)
        extra = set(evolution) - {f"{d}_{time_name}" for d in dependent}
        if extra:
            raise InputError(f"evolution declared for unknown variables: {sorted(extra)}")
        try:
            eq.system = EvolutionSystem(ctx, rhss)
        except (NotInternal, ValueError) as exc:
            raise InputError(f"invalid evolution system: {exc}")

    for name, body, no in covering_lines:
        sysm = eq.need_system()
        entries: dict[str, dict[int, DiffPoly]] = {}
        order: list[str] = []
        for chunk in _split_top_level(body, ";"):
            if not chunk:
                continue
            lhs, _, rhs = chunk.partition("=")
            base, sub = split_identifier(lhs.strip())
            if sub is None or sub not in ctx.independent:
                raise InputError(f"covering equation must look like w_x = ..., got '{chunk}'", no)
            if base not in entries:
                entries[base] = {}
                order.append(base)
            scope = ctx.with_nonlocals(order)
            try:
                entries[base][ctx.independent.index(sub)] = scope.parse(rhs.strip())
            except ParseError as exc:
                raise InputError(f"in covering '{name}': {exc}", no)
        layers = []
        for w in order:
            exprs = []
            for i in range(ctx.n):
                if i not in entries[w]:
                    raise InputError(f"covering '{name}' misses {w}_{ctx.independent[i]}", no)
                exprs.append(entries[w][i])
            layers.append((w, exprs))
        try:
            eq.coverings[name] = make_covering(sysm, layers)
        except (NotFlat, ValueError) as exc:
            raise InputError(f"covering '{name}': {exc}", no)

    for kind, name, payload, no in named:
        try:
            if kind == "operator":
                eq.operators[name] = parse_operator(payload, ctx)
            elif kind == "density":
                eq.densities[name] = Density(ctx, ctx.parse(payload))
            else:
                if not (payload.startswith("(") and payload.endswith(")")):
                    raise InputError("current needs a parenthesized component tuple", no)
                comps = [ctx.parse(c) for c in _split_top_level(payload[1:-1], ",")]
                eq.currents[name] = ConservedCurrent(tuple(comps))
        except ParseError as exc:
            raise InputError(f"in {kind} '{name}': {exc}", no)
    return eq


# --------------------------------------------------------------------------
# Report rendering


def _vec_str(vec) -> str | list[str]:
    strs = [str(p) for p in vec]
    return strs[0] if len(strs) == 1 else strs


class Report:
    def __init__(self, command: str, eq: EquationFile):
        self.doc = {"command": command, "input-hash": eq.input_hash()}
        self.lines: list[str] = []

    def set(self, key: str, value):
        self.doc[key] = value

    def text(self, line: str):
        self.lines.append(line)

    def emit(self, fmt: str) -> str:
        if fmt == "structured":
            return json.dumps(self.doc, sort_keys=True, indent=2) + "\n"
        return "\n".join(self.lines) + "\n"


def _ansatz_of(args) -> Ansatz:
    return Ansatz(jet_order=args.order, poly_deg=args.deg, base_deg=args.xt_deg,
                  include_params=getattr(args, "params", False))


def _lookup_density(eq: EquationFile, ref: str) -> Density:
    if ref in eq.densities:
        return eq.densities[ref]
    return Density(eq.ctx, eq.ctx.parse(ref))


def _lookup_operator(eq: EquationFile, ref: str) -> CDiffOp:
    if ref in eq.operators:
        return eq.operators[ref]
    return parse_operator(ref, eq.ctx)


def _lookup_current(eq: EquationFile, ref: str) -> ConservedCurrent:
    if ref in eq.currents:
        return eq.currents[ref]
    ref = ref.strip()
    if ref.startswith("(") and ref.endswith(")"):
        comps = [eq.ctx.parse(c) for c in _split_top_level(ref[1:-1], ",")]
        return ConservedCurrent(tuple(comps))
    raise InputError(f"unknown current '{ref}'")


# --------------------------------------------------------------------------
# Subcommands


def cmd_symmetries(eq: EquationFile, args) -> tuple[Report, int]:
    sysm = eq.need_system()
    a = _ansatz_of(args)
    basis = symmetries(sysm, a)
    rep = Report("symmetries", eq)
    rep.set("ansatz", a.as_dict())
    rep.set("basis", [_vec_str(s) for s in basis.solutions])
    rep.set("verified", [True] * len(basis))
    if not len(basis):
        rep.text("no solutions in ansatz")
    else:
        rep.text(f"symmetry basis ({len(basis)} elements):")
        for s in basis.solutions:
            rep.text(f"  {_vec_str(s)}")
    return rep, 0


def cmd_conslaws(eq: EquationFile, args) -> tuple[Report, int]:
    sysm = eq.need_system()
    a = _ansatz_of(args)
    basis = generating_functions(sysm, a)
    rep = Report("conslaws", eq)
    rep.set("ansatz", a.as_dict())
    rep.set("basis", [_vec_str(s) for s in basis.solutions])
    rep.set("verified", [True] * len(basis))
    if not len(basis):
        rep.text("no solutions in ansatz")
    else:
        rep.text(f"generating functions ({len(basis)} elements):")
        for s in basis.solutions:
            rep.text(f"  {_vec_str(s)}")
    exit_code = 0
    if args.currents:
        if eq.ctx.n != 2:
            raise InputError("current reconstruction needs exactly one spatial variable")
        recon = []
        for s in basis.solutions:
            try:
                J = current_from_gf(sysm, list(s))
                recon.append([str(c) for c in J.components])
                rep.text(f"  current for {_vec_str(s)}: ({', '.join(str(c) for c in J.components)})")
            except (NotExactDerivative, NotVariational) as exc:
                recon.append(None)
                rep.text(f"  current for {_vec_str(s)}: obstructed ({exc})")
                exit_code = 1
        rep.set("currents", recon)
    return rep, exit_code


def cmd_euler(eq: EquationFile, args) -> tuple[Report, int]:
    d = _lookup_density(eq, args.density)
    comps = euler(d)[: eq.ctx.m]
    rep = Report("euler", eq)
    rep.set("result", _vec_str(comps))
    rep.text("; ".join(str(c) for c in comps))
    return rep, 0


def cmd_adjoint(eq: EquationFile, args) -> tuple[Report, int]:
    op = _lookup_operator(eq, args.op)
    rep = Report("adjoint", eq)
    rep.set("result", str(op.adjoint()))
    rep.text(str(op.adjoint()))
    return rep, 0


def cmd_linearize(eq: EquationFile, args) -> tuple[Report, int]:
    sysm = eq.need_system()
    rep = Report("linearize", eq)
    rep.set("result", str(linearization(sysm)))
    rep.text(str(linearization(sysm)))
    return rep, 0


def cmd_inverse_problem(eq: EquationFile, args) -> tuple[Report, int]:
    ctx = eq.ctx
    psi = [ctx.parse(p) for p in args.psi]
    if len(psi) != ctx.m:
        raise InputError(f"--psi needs {ctx.m} components")
    ok = self_adjoint_test(ctx, psi)
    rep = Report("inverse-problem", eq)
    rep.set("self-adjoint", ok)
    if not ok:
        rep.set("result", None)
        rep.set("verified", [False])
        rep.text("self-adjoint: no (not an Euler-Lagrange section)")
        return rep, 1
    L = homotopy_lagrangian(ctx, psi)
    check = euler(L)[: ctx.m]
    verified = all((a - b).is_zero() for a, b in zip(check, psi))
    rep.set("result", str(L.value))
    rep.set("verified", [verified])
    rep.text(f"self-adjoint: yes; Lagrangian density: {L.value}")
    return rep, 0 if verified else 1


def cmd_verify_current(eq: EquationFile, args) -> tuple[Report, int]:
    sysm = eq.need_system()
    J = _lookup_current(eq, args.current)
    residual = divergence_residual(sysm, J)
    ok = residual.is_zero()
    rep = Report("verify-current", eq)
    rep.set("result", ok)
    rep.set("residual", str(residual))
    rep.text("conserved: yes" if ok else f"conserved: no; residual: {residual}")
    return rep, 0 if ok else 1


def cmd_check_hamiltonian(eq: EquationFile, args) -> tuple[Report, int]:
    op = _lookup_operator(eq, args.op)
    skew = is_skew_adjoint(op)
    jac = jacobi_check(op) if skew else False
    rep = Report("check-hamiltonian", eq)
    rep.set("skew-adjoint", skew)
    rep.set("jacobi", jac)
    rep.set("result", skew and jac)
    rep.text(f"skew-adjoint: {'yes' if skew else 'no'}; Jacobi: {'yes' if jac else 'no'}")
    return rep, 0 if (skew and jac) else 1


def cmd_flow(eq: EquationFile, args) -> tuple[Report, int]:
    op = _lookup_operator(eq, args.op)
    H = _lookup_density(eq, args.density)
    flow = hamiltonian_flow(op, H)
    rep = Report("flow", eq)
    rep.set("result", _vec_str(flow.f))
    for j, name in enumerate(eq.ctx.dependent):
        rep.text(f"{name}_{eq.ctx.independent[-1]} = {flow.f[j]}")
    return rep, 0


def cmd_bracket(eq: EquationFile, args) -> tuple[Report, int]:
    op = _lookup_operator(eq, args.op)
    H1 = _lookup_density(eq, args.density)
    H2 = _lookup_density(eq, args.density2)
    br = poisson_bracket(op, H1, H2)
    rep = Report("bracket", eq)
    rep.set("result", str(br.density.value))
    rep.set("euler-image", [str(c) for c in br.euler_image])
    rep.set("trivial", br.is_trivial)
    rep.text(f"bracket density: {br.density.value}")
    rep.text(f"euler image: {'; '.join(str(c) for c in br.euler_image)}")
    rep.text(f"zero in cohomology: {'yes' if br.is_trivial else 'no'}")
    return rep, 0


def _solve_shadows(eq: EquationFile, args):
    sysm = eq.need_system()
    cov = None
    if args.covering:
        if args.covering not in eq.coverings:
            raise InputError(f"unknown covering '{args.covering}'")
        cov = eq.coverings[args.covering]
    return shadows(sysm, cov, _ansatz_of(args)), cov


def cmd_recursion(eq: EquationFile, args) -> tuple[Report, int]:
    basis, _ = _solve_shadows(eq, args)
    rep = Report("recursion", eq)
    rep.set("ansatz", _ansatz_of(args).as_dict())
    rep.set("basis", [str(s) for s in basis.solutions])
    rep.set("verified", [True] * len(basis))
    if not len(basis):
        rep.text("no solutions in ansatz")
    else:
        rep.text(f"shadow basis ({len(basis)} elements):")
        for s in basis.solutions:
            rep.text(f"  {s}")
    return rep, 0


def cmd_apply_recursion(eq: EquationFile, args) -> tuple[Report, int]:
    sysm = eq.need_system()
    basis, cov = _solve_shadows(eq, args)
    if not len(basis):
        raise InputError("no shadows in the given ansatz")
    if args.index is not None:
        if not 0 <= args.index < len(basis):
            raise InputError(f"--index out of range 0..{len(basis) - 1}")
        sh = basis.solutions[args.index]
    else:
        nontrivial = [s for s in basis.solutions if s.max_order() > 0]
        sh = nontrivial[0] if nontrivial else basis.solutions[0]
    phi = [eq.ctx.parse(p) for p in args.to]
    if len(phi) != eq.ctx.m:
        raise InputError(f"--to needs {eq.ctx.m} components")
    rep = Report("apply-recursion", eq)
    rep.set("shadow", str(sh))
    results = []
    try:
        for _ in range(args.times):
            phi = apply_shadow(sh, phi, sys=sysm, cov=cov)
            results.append(_vec_str(phi))
    except NonlocalObstruction as exc:
        rep.set("result", results)
        rep.set("obstruction", str(exc))
        rep.text(f"obstruction: {exc}")
        return rep, 1
    rep.set("result", results)
    rep.set("verified", [True] * len(results))
    rep.text(f"shadow: {sh}")
    for k, r in enumerate(results, start=1):
        rep.text(f"  iterate {k}: {r}")
    return rep, 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="jetcalc",
                                  description="exact jet-space calculus for polynomial evolution PDEs")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, ansatz=False):
        p.add_argument("eqnfile", help="equation definition file")
        p.add_argument("--format", choices=("text", "structured"), default="text")
        if ansatz:
            p.add_argument("--order", type=int, default=1, help="max jet order of the ansatz")
            p.add_argument("--deg", type=int, default=1, help="max total degree in jet variables")
            p.add_argument("--xt-deg", type=int, default=0, help="max total degree in base variables")
            p.add_argument("--params", action="store_true", help="include declared parameters in the ansatz")
            p.add_argument("--jobs", type=int, default=1, help="accepted for compatibility; output is identical")

    p = sub.add_parser("symmetries", help="solve the linearization equation")
    common(p, ansatz=True)
    p.set_defaults(fn=cmd_symmetries)

    p = sub.add_parser("conslaws", help="solve the cosymmetry equation; optionally rebuild currents")
    common(p, ansatz=True)
    p.add_argument("--currents", action="store_true", help="reconstruct conserved currents (n = 2)")
    p.set_defaults(fn=cmd_conslaws)

    p = sub.add_parser("euler", help="variational derivative of a density")
    common(p)
    p.add_argument("--density", required=True, help="density name or expression")
    p.set_defaults(fn=cmd_euler)

    p = sub.add_parser("adjoint", help="formal adjoint of an operator")
    common(p)
    p.add_argument("--op", required=True, help="operator name or expression")
    p.set_defaults(fn=cmd_adjoint)

    p = sub.add_parser("linearize", help="universal linearization of the evolution system")
    common(p)
    p.set_defaults(fn=cmd_linearize)

    p = sub.add_parser("inverse-problem", help="self-adjointness test and homotopy Lagrangian")
    common(p)
    p.add_argument("--psi", action="append", required=True, help="section component (repeat per component)")
    p.set_defaults(fn=cmd_inverse_problem)

    p = sub.add_parser("verify-current", help="check a conserved current")
    common(p)
    p.add_argument("--current", required=True, help="current name or (expr, ...) tuple")
    p.set_defaults(fn=cmd_verify_current)

    p = sub.add_parser("check-hamiltonian", help="skew-adjointness and Jacobi criterion")
    common(p)
    p.add_argument("--op", required=True)
    p.set_defaults(fn=cmd_check_hamiltonian)

    p = sub.add_parser("flow", help="Hamiltonian evolution u_t = A(E(H))")
    common(p)
    p.add_argument("--op", required=True)
    p.add_argument("--density", required=True)
    p.set_defaults(fn=cmd_flow)

    p = sub.add_parser("bracket", help="Poisson bracket density and its Euler image")
    common(p)
    p.add_argument("--op", required=True)
    p.add_argument("--density", required=True)
    p.add_argument("--density2", required=True)
    p.set_defaults(fn=cmd_bracket)

    p = sub.add_parser("recursion", help="solve the shadow equation")
    common(p, ansatz=True)
    p.add_argument("--covering", default=None, help="named covering to work in")
    p.set_defaults(fn=cmd_recursion)

    p = sub.add_parser("apply-recursion", help="apply a recursion shadow to a symmetry")
    common(p, ansatz=True)
    p.add_argument("--covering", default=None)
    p.add_argument("--index", type=int, default=None, help="basis element to apply (default: first non-identity)")
    p.add_argument("--to", action="append", required=True, help="symmetry component (repeat per component)")
    p.add_argument("--times", type=int, default=1, help="number of applications")
    p.set_defaults(fn=cmd_apply_recursion)

    return top


def main(argv: list[str] | None = None) -> int:
    from .variational import NotConserved, NotGeneratingFunction
    from .hamrec import PreconditionFailed, VerificationFailed

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        eq = parse_equation_file(args.eqnfile)
        rep, code = args.fn(eq, args)
    except (VerificationFailed, NonlocalObstruction, NotExactDerivative, NotVariational,
            NotConserved, NotGeneratingFunction, PreconditionFailed) as exc:
        sys.stderr.write(f"verification failed: {exc}\n")
        return 1
    except (InputError, ParseError, NotFlat, NotInternal, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    sys.stdout.write(rep.emit(args.format))
    return code


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
