"""
QPL-mini: textual form of multi-subroutine quantum programs.

Example:

    // reverse the order of a register
    sub Reverse(qubits qs[n]) {
        for i in 0..n/2-1 { SWAP qs[i], qs[n-1-i]; }
    }

Statements: `GATE(angle)? refs;`, `ctl(refs) GATE refs;`,
`call NAME[inv, ctl, pow(k)](args)(refs);`, `m = measure refs;`, `reset refs;`,
`let x = expr;`, `if (expr) {...} else {...}`, `for i in lo..hi [desc] {...}`.
Oracle slots are declared with `oracle NAME(params) is adj, ctl;` and passed as
`op NAME` parameters; a subroutine argument is written `@Name`. Comments start with `//`.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pyparsing as pp
from pyparsing import (Forward, Group, Keyword, MatchFirst, OpAssoc, Opt, ParserElement, Regex,
                       StringEnd, Suppress, Word, ZeroOrMore, alphanums, alphas, infix_notation, one_of)

from program_model import (AssignStmt, BinOp, CallStmt, ClassicalParam, Const, Expr, ForLoop, FuncCall,
                           GateApp, IfStmt, MeasureStmt, OracleDecl, Program, ProgramError, QubitParam,
                           QubitRef, ResetStmt, SlotParam, Statement, SubroutineDef, UnOp, Var, VariantOp,
                           check_scope)
from quantum_state import builtin_gate_names

ParserElement.enable_packrat()

KEYWORDS = ("sub", "oracle", "call", "measure", "reset", "let", "if", "else", "for", "in", "desc",
            "ctl", "inv", "pow", "is", "adj", "int", "bool", "qubits", "op", "and", "or", "not")


class QPLSyntaxError(ProgramError):
    """Malformed QPL-mini source; carries the 1-based line and column."""
    def __init__(self, message: str, line: int, column: int, source: Optional[str] = None):
        self.line = line
        self.column = column
        self.source = source
        where = f"{source}:" if source else "line "
        super().__init__(f"{where}{line}:{column}: {message}")


# intermediate parse results
@dataclass(frozen=True)
class _Refs:
    refs: Tuple[QubitRef, ...]


@dataclass(frozen=True)
class _Block:
    stmts: Tuple[Statement, ...]


@dataclass(frozen=True)
class _Angle:
    expr: Optional[Expr]


@dataclass(frozen=True)
class _Variants:
    ops: Tuple[VariantOp, ...]


@dataclass(frozen=True)
class _SubArg:
    name: str


@dataclass(frozen=True)
class _Params:
    params: tuple


@dataclass(frozen=True)
class _Located:
    line: int
    node: object


def _fold_left(s, loc, t):
    items = t[0]
    result = items[0]
    for i in range(1, len(items), 2):
        result = BinOp(items[i], result, items[i + 1])
    return result


def _fold_right(s, loc, t):
    items = t[0]
    result = items[-1]
    for i in range(len(items) - 2, 0, -2):
        result = BinOp(items[i], items[i - 1], result)
    return result


def _unary(s, loc, t):
    items = t[0]
    result = items[-1]
    for op in reversed(items[:-1]):
        result = UnOp(op, result)
    return result


def _comma_list(element):
    return element + ZeroOrMore(Suppress(",") + element)


def _line(s, loc) -> int:
    return pp.lineno(loc, s)


def _build_grammar():
    kw = {name: Keyword(name) for name in KEYWORDS}
    gate_name = one_of(builtin_gate_names(), as_keyword=True)
    reserved = MatchFirst(list(kw.values())) | gate_name
    ident = (~reserved + Word(alphas + "_", alphanums + "_")).set_name("identifier")

    LPAR, RPAR, LBRACK, RBRACK, LBRACE, RBRACE, SEMI = map(Suppress, "()[]{};")
    DOTDOT, EQ = Suppress(".."), Suppress("=")

    # expressions
    expr = Forward().set_name("expression")
    real = Regex(r"\d+\.\d+").set_parse_action(lambda s, loc, t: Const(float(t[0])))
    integer = Regex(r"\d+").set_parse_action(lambda s, loc, t: Const(int(t[0])))
    func_call = (one_of("len isqrt", as_keyword=True) + LPAR + expr + RPAR).set_parse_action(
        lambda s, loc, t: FuncCall(t[0], (t[1],)))
    var = ident.copy().set_parse_action(lambda s, loc, t: Var(t[0]))
    operand = real | integer | func_call | var
    expr <<= infix_notation(operand, [
        (pp.Literal("^"), 2, OpAssoc.RIGHT, _fold_right),
        (pp.Literal("-"), 1, OpAssoc.RIGHT, _unary),
        (one_of("* / %"), 2, OpAssoc.LEFT, _fold_left),
        (one_of("+ -"), 2, OpAssoc.LEFT, _fold_left),
        (one_of("<= >= == != < >"), 2, OpAssoc.LEFT, _fold_left),
        (kw["not"], 1, OpAssoc.RIGHT, _unary),
        (kw["and"], 2, OpAssoc.LEFT, _fold_left),
        (kw["or"], 2, OpAssoc.LEFT, _fold_left),
    ])

    # qubit references
    def make_ref(s, loc, t):
        return QubitRef(t[0], t[1] if len(t) > 1 else None, t[2] if len(t) > 2 else None)

    qref = (ident + Opt(LBRACK + expr + Opt(DOTDOT + expr) + RBRACK)).set_parse_action(make_ref)
    refs = Group(_comma_list(qref)).set_parse_action(lambda s, loc, t: _Refs(tuple(t[0])))

    # statements
    statement = Forward().set_name("statement")
    block = (LBRACE + Group(ZeroOrMore(statement)) + RBRACE).set_parse_action(
        lambda s, loc, t: _Block(tuple(t[0])))

    controls = kw["ctl"].suppress() + LPAR + refs + RPAR
    angle = (LPAR + expr + RPAR).set_parse_action(lambda s, loc, t: _Angle(t[0]))

    def make_gate(s, loc, t):
        ctl, name, ang, targets = t
        return GateApp(name, ang.expr, ctl.refs, targets.refs, line=_line(s, loc))

    gate_stmt = (Opt(controls, default=_Refs(())) + gate_name
                 - Opt(angle, default=_Angle(None)) - refs - SEMI).set_parse_action(make_gate)

    variant_op = (kw["inv"] | kw["ctl"]).set_parse_action(lambda s, loc, t: VariantOp(t[0])) | (
        kw["pow"] + LPAR + expr + RPAR).set_parse_action(lambda s, loc, t: VariantOp("pow", t[1]))
    variants = (LBRACK + Group(_comma_list(variant_op)) + RBRACK).set_parse_action(
        lambda s, loc, t: _Variants(tuple(t[0])))
    sub_arg = (Suppress("@") + ident).set_parse_action(lambda s, loc, t: _SubArg(t[0]))
    args = Group(Opt(_comma_list(sub_arg | expr)))

    def make_call(s, loc, t):
        callee, variant, arg_list, qrefs = t
        classical = tuple(a for a in arg_list if not isinstance(a, _SubArg))
        subs = tuple(a.name for a in arg_list if isinstance(a, _SubArg))
        return CallStmt(callee, variant.ops, classical, subs, qrefs.refs, line=_line(s, loc))

    call_stmt = (kw["call"].suppress() - ident - Opt(variants, default=_Variants(()))
                 - LPAR - args - RPAR - LPAR - Opt(refs, default=_Refs(())) - RPAR - SEMI
                 ).set_parse_action(make_call)

    measure_stmt = (ident + EQ + kw["measure"].suppress() - refs - SEMI).set_parse_action(
        lambda s, loc, t: MeasureStmt(t[0], t[1].refs, line=_line(s, loc)))
    reset_stmt = (kw["reset"].suppress() - refs - SEMI).set_parse_action(
        lambda s, loc, t: ResetStmt(t[0].refs, line=_line(s, loc)))
    let_stmt = (kw["let"].suppress() - ident - EQ - expr - SEMI).set_parse_action(
        lambda s, loc, t: AssignStmt(t[0], t[1], line=_line(s, loc)))

    if_stmt = Forward()

    def make_if(s, loc, t):
        cond, then = t[0], t[1]
        other = ()
        if len(t) > 2:
            other = (t[2],) if isinstance(t[2], IfStmt) else t[2].stmts
        return IfStmt(cond, then.stmts, other, line=_line(s, loc))

    if_stmt <<= (kw["if"].suppress() - LPAR - expr - RPAR - block
                 - Opt(kw["else"].suppress() - (if_stmt | block))).set_parse_action(make_if)

    def make_for(s, loc, t):
        return ForLoop(t[0], t[1], t[2], t[-1].stmts, descending=len(t) == 5, line=_line(s, loc))

    for_stmt = (kw["for"].suppress() - ident - kw["in"].suppress() - expr - DOTDOT - expr
                - Opt(kw["desc"]) - block).set_parse_action(make_for)

    statement <<= gate_stmt | call_stmt | let_stmt | reset_stmt | if_stmt | for_stmt | measure_stmt

    # parameters and declarations
    classical_param = ((kw["int"] | kw["bool"]) + ident).set_parse_action(
        lambda s, loc, t: ClassicalParam(t[1], t[0]))
    qubit_param = (kw["qubits"].suppress() - ident - Opt(LBRACK + expr + RBRACK)).set_parse_action(
        lambda s, loc, t: QubitParam(t[0], t[1] if len(t) > 1 else None))
    slot_param = (kw["op"].suppress() - ident).set_parse_action(lambda s, loc, t: SlotParam(t[0]))
    params = Group(Opt(_comma_list(classical_param | qubit_param | slot_param))).set_parse_action(
        lambda s, loc, t: _Params(tuple(t[0])))

    sub_def = (kw["sub"].suppress() - ident - LPAR - params - RPAR - block).set_parse_action(
        lambda s, loc, t: _Located(_line(s, loc), SubroutineDef(t[0], t[1].params, t[2].stmts)))

    capability = kw["adj"] | kw["ctl"]

    def make_oracle(s, loc, t):
        flags = set(t[2:])
        return _Located(_line(s, loc), OracleDecl(t[0], t[1].params, "adj" in flags, "ctl" in flags))

    oracle_decl = (kw["oracle"].suppress() - ident - LPAR - params - RPAR
                   - Opt(kw["is"].suppress() - _comma_list(capability)) - SEMI).set_parse_action(make_oracle)

    program = ZeroOrMore(sub_def | oracle_decl) + StringEnd()
    program.ignore(pp.dbl_slash_comment)
    expr_only = expr + StringEnd()
    expr_only.ignore(pp.dbl_slash_comment)
    return program, expr_only


_GRAMMAR = None


def _grammar():
    global _GRAMMAR
    if _GRAMMAR is None:
        _GRAMMAR = _build_grammar()
    return _GRAMMAR


def _parse_units(text: str, source: Optional[str] = None) -> List[_Located]:
    try:
        return list(_grammar()[0].parse_string(text, parse_all=True))
    except pp.ParseBaseException as e:
        raise QPLSyntaxError(e.msg, e.lineno, e.col, source) from None


def _bind_slot_flags(sub: SubroutineDef, oracles: Dict[str, OracleDecl]) -> SubroutineDef:
    params = []
    for p in sub.params:
        if isinstance(p, SlotParam) and p.name in oracles:
            decl = oracles[p.name]
            p = SlotParam(p.name, decl.adjoint, decl.controlled)
        params.append(p)
    return SubroutineDef(sub.name, tuple(params), sub.body)


def _assemble(units: Sequence[Tuple[Optional[str], _Located]], entry: Optional[str], validate: bool) -> Program:
    subs: Dict[str, SubroutineDef] = {}
    oracles: Dict[str, OracleDecl] = {}
    for source, unit in units:
        node = unit.node
        if node.name in subs or node.name in oracles:
            where = f"{source}:{unit.line}" if source else f"line {unit.line}"
            raise ProgramError(f"{where}: '{node.name}' is defined twice")
        if isinstance(node, OracleDecl):
            oracles[node.name] = node
        else:
            subs[node.name] = node
    subs = {name: _bind_slot_flags(sub, oracles) for name, sub in subs.items()}
    program = Program(subs, entry, oracles, validate=validate)
    if validate:
        for sub in subs.values():
            problems = check_scope(sub, program)
            if problems:
                raise ProgramError(problems[0])
    return program


def parse_program(text: str, entry: Optional[str] = None, validate: bool = True) -> Program:
    """
    Parse QPL-mini source into a Program.

    The entry defaults to the last subroutine defined. Raises QPLSyntaxError for
    malformed text and ProgramError for well-formed but invalid programs (unknown
    callees, recursion, unbound names).
    """
    units = [(None, u) for u in _parse_units(text)]
    return _assemble(units, entry, validate)


def load_program(*paths, entry: Optional[str] = None) -> Program:
    """Parse one or more .qpl files into a single Program."""
    units = []
    for path in paths:
        path = Path(path)
        units.extend((str(path), u) for u in _parse_units(path.read_text(), str(path)))
    return _assemble(units, entry, validate=True)


def parse_subroutine(text: str) -> SubroutineDef:
    """Parse source holding exactly one subroutine definition."""
    units = _parse_units(text)
    defs = [u.node for u in units if isinstance(u.node, SubroutineDef)]
    if len(defs) != 1 or len(units) != 1:
        raise ProgramError(f"Expected exactly one subroutine, found {len(units)} declaration(s)")
    return defs[0]


def parse_expr(text: str) -> Expr:
    try:
        return _grammar()[1].parse_string(text, parse_all=True)[0]
    except pp.ParseBaseException as e:
        raise QPLSyntaxError(e.msg, e.lineno, e.col) from None


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_PRECEDENCE = {"or": 1, "and": 2, "not": 3, "<": 4, "<=": 4, ">": 4, ">=": 4, "==": 4, "!=": 4,
               "+": 5, "-": 5, "*": 6, "/": 6, "%": 6, "neg": 7, "^": 8}
_ATOM = 9


def _render_number(value) -> str:
    if isinstance(value, int):
        return str(value)
    text = repr(float(value))
    if "e" in text or "n" in text:
        text = f"{value:.17f}".rstrip("0")
    if text.endswith("."):
        text += "0"
    return text


def render_expr(expr: Expr, parent: int = 0) -> str:
    """Source text for an expression, parenthesized only where precedence needs it."""
    if isinstance(expr, Const):
        text, prec = _render_number(expr.value), _ATOM
        if expr.value < 0:
            prec = _PRECEDENCE["neg"]
    elif isinstance(expr, Var):
        text, prec = expr.name, _ATOM
    elif isinstance(expr, FuncCall):
        text, prec = f"{expr.func}({', '.join(render_expr(a) for a in expr.args)})", _ATOM
    elif isinstance(expr, UnOp):
        if expr.op == "-":
            prec = _PRECEDENCE["neg"]
            text = "-" + render_expr(expr.operand, prec)
        else:
            prec = _PRECEDENCE["not"]
            text = "not " + render_expr(expr.operand, prec)
    elif isinstance(expr, BinOp):
        prec = _PRECEDENCE[expr.op]
        if expr.op == "^":
            text = f"{render_expr(expr.left, prec + 1)}^{render_expr(expr.right, prec)}"
        else:
            text = f"{render_expr(expr.left, prec)} {expr.op} {render_expr(expr.right, prec + 1)}"
    else:
        raise ProgramError(f"Not an expression: {expr!r}")
    return f"({text})" if prec < parent else text


def render_ref(ref: QubitRef) -> str:
    if ref.index is None:
        return ref.array
    if ref.upper is None:
        return f"{ref.array}[{render_expr(ref.index)}]"
    return f"{ref.array}[{render_expr(ref.index)}..{render_expr(ref.upper)}]"


def _refs(refs) -> str:
    return ", ".join(render_ref(r) for r in refs)


def render_variant(variant) -> str:
    if not variant:
        return ""
    ops = [f"pow({render_expr(op.power)})" if op.kind == "pow" else op.kind for op in variant]
    return "[" + ", ".join(ops) + "]"


def render_statement(stmt: Statement, indent: int = 0) -> str:
    pad = "    " * indent
    if isinstance(stmt, GateApp):
        prefix = f"ctl({_refs(stmt.controls)}) " if stmt.controls else ""
        angle = f"({render_expr(stmt.angle)})" if stmt.angle is not None else ""
        return f"{pad}{prefix}{stmt.gate}{angle} {_refs(stmt.targets)};"
    if isinstance(stmt, CallStmt):
        args = [render_expr(a) for a in stmt.classical_args] + ["@" + n for n in stmt.sub_args]
        return (f"{pad}call {stmt.callee}{render_variant(stmt.variant)}"
                f"({', '.join(args)})({_refs(stmt.qubit_args)});")
    if isinstance(stmt, MeasureStmt):
        return f"{pad}{stmt.result} = measure {_refs(stmt.refs)};"
    if isinstance(stmt, ResetStmt):
        return f"{pad}reset {_refs(stmt.refs)};"
    if isinstance(stmt, AssignStmt):
        return f"{pad}let {stmt.name} = {render_expr(stmt.expr)};"
    if isinstance(stmt, ForLoop):
        desc = " desc" if stmt.descending else ""
        head = f"{pad}for {stmt.var} in {render_expr(stmt.lower)}..{render_expr(stmt.upper)}{desc} {{"
        return "\n".join([head] + [render_statement(s, indent + 1) for s in stmt.body] + [pad + "}"])
    if isinstance(stmt, IfStmt):
        lines = [f"{pad}if ({render_expr(stmt.condition)}) {{"]
        lines += [render_statement(s, indent + 1) for s in stmt.then_body]
        if stmt.else_body:
            lines.append(pad + "} else {")
            lines += [render_statement(s, indent + 1) for s in stmt.else_body]
        lines.append(pad + "}")
        return "\n".join(lines)
    raise ProgramError(f"Cannot render {stmt!r}")


def render_param(param) -> str:
    if isinstance(param, ClassicalParam):
        return f"{param.type} {param.name}"
    if isinstance(param, QubitParam):
        size = f"[{render_expr(param.size)}]" if param.size is not None else ""
        return f"qubits {param.name}{size}"
    return f"op {param.name}"


def render_subroutine(sub: SubroutineDef) -> str:
    head = f"sub {sub.name}({', '.join(render_param(p) for p in sub.params)}) {{"
    return "\n".join([head] + [render_statement(s, 1) for s in sub.body] + ["}"])


def render_oracle(decl: OracleDecl) -> str:
    flags = [f for f, on in (("adj", decl.adjoint), ("ctl", decl.controlled)) if on]
    caps = f" is {', '.join(flags)}" if flags else ""
    return f"oracle {decl.name}({', '.join(render_param(p) for p in decl.params)}){caps};"


def render_program(program: Program) -> str:
    parts = [render_oracle(d) for d in program.oracles.values()]
    parts += [render_subroutine(s) for s in program.subroutines.values()]
    return "\n\n".join(parts) + "\n"
