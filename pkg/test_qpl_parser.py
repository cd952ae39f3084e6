"""
Tests for the QPL-mini parser and renderer.
"""
from pathlib import Path

import pytest

from program_model import (AssignStmt, BinOp, CallStmt, Const, ForLoop, FuncCall, GateApp, IfStmt,
                           MeasureStmt, ProgramError, QubitRef, RecursionDetected, ResetStmt, SlotParam,
                           UnOp, Var, VariantOp, evaluate)
from qpl_parser import (QPLSyntaxError, load_program, parse_expr, parse_program, parse_subroutine,
                        render_expr, render_program, render_subroutine)

PROGRAMS = Path(__file__).parent / "programs"

ALL_SOURCES = ["reverse.qpl", "multiswap.qpl", "qft.qpl", "phaseflip.qpl", "grover.qpl",
               "memsearch.qpl", "qpe.qpl", "purity.qpl", "hpow.qpl"]


def test_parse_reverse():
    print("=" * 70)
    print("TEST: parse Reverse")
    print("=" * 70)
    program = load_program(PROGRAMS / "reverse.qpl")
    sub = program.get("Reverse")
    assert program.entry == "Reverse"
    assert sub.implicit_size_names() == ["n"]
    loop = sub.body[0]
    assert isinstance(loop, ForLoop)
    assert loop.line == 3
    assert loop.upper == BinOp("-", BinOp("/", Var("n"), Const(2)), Const(1))
    swap = loop.body[0]
    assert swap == GateApp("SWAP", None, (), (
        QubitRef("qs", Var("i")),
        QubitRef("qs", BinOp("-", BinOp("-", Var("n"), Const(1)), Var("i")))))
    assert swap.line == 4
    print(render_subroutine(sub))
    print("  ✓ PASS")


def test_expression_precedence():
    print("\n" + "=" * 70)
    print("TEST: expression precedence")
    print("=" * 70)
    angle = parse_expr("2 * pi / 2^k")
    assert angle == BinOp("/", BinOp("*", Const(2), Var("pi")), BinOp("^", Const(2), Var("k")))
    assert parse_expr("2^3^2") == BinOp("^", Const(2), BinOp("^", Const(3), Const(2)))
    assert evaluate(parse_expr("2^3^2"), {}) == 512
    assert evaluate(parse_expr("-2^2"), {}) == -4
    assert evaluate(parse_expr("-3 / 2"), {}) == -2
    assert evaluate(parse_expr("-3 % 2"), {}) == 1
    assert evaluate(parse_expr("1 + 2 * 3 - 4"), {}) == 3
    assert evaluate(parse_expr("(1 + 2) * 3"), {}) == 9
    assert evaluate(parse_expr("a < b and not c == 1 or 0"), {"a": 1, "b": 2, "c": 0}) == 1
    assert parse_expr("isqrt(10000 * 2^n)") == FuncCall("isqrt", (BinOp("*", Const(10000), BinOp(
        "^", Const(2), Var("n"))),))
    assert parse_expr("0.25") == Const(0.25)
    assert abs(evaluate(parse_expr("2 * pi / 2^2"), {}, real=True) - 1.5707963267948966) < 1e-15

    for text in ["2 * pi / 2^k", "(a + b) * c", "a - (b - c)", "-(a + b)", "(-a)^2", "-a^2",
                 "not (a and b)", "a == b or c != d", "len(qs) - 1", "2^(n - 1 - i)"]:
        expr = parse_expr(text)
        assert render_expr(expr) == text, (text, render_expr(expr))
        assert parse_expr(render_expr(expr)) == expr
    print("  ✓ PASS")


def test_statement_forms():
    text = """
    sub Helper(int k, qubits a[2], qubits b[1], op G) {
        R1(pi / 4) a[0];
    }
    sub Y2(qubits q[1]) { Y q[0]; }

    sub All(qubits a[3], qubits b[1]) {
        ctl(a[0..1]) X b[0];          // Toffoli
        call Helper[inv, ctl, pow(2 + 1)](5, @Y2)(a[0], a[1..2], b);
        let x = 3;
        m = measure a[0], b;
        reset a;
        if (m == 0) { H b[0]; } else if (x > 2) { T b[0]; } else { S b[0]; }
        for i in 2..0 desc { Z a[i]; }
    }
    """
    program = parse_program(text)
    assert program.entry == "All"
    body = program.get("All").body
    assert body[0] == GateApp("X", None, (QubitRef("a", Const(0), Const(1)),), (QubitRef("b", Const(0)),))
    call = body[1]
    assert isinstance(call, CallStmt)
    assert call.variant == (VariantOp("inv"), VariantOp("ctl"), VariantOp("pow", BinOp("+", Const(2), Const(1))))
    assert call.classical_args == (Const(5),)
    assert call.sub_args == ("Y2",)
    assert call.qubit_args == (QubitRef("a", Const(0)), QubitRef("a", Const(1), Const(2)), QubitRef("b"))
    assert body[2] == AssignStmt("x", Const(3))
    assert body[3] == MeasureStmt("m", (QubitRef("a", Const(0)), QubitRef("b")))
    assert body[4] == ResetStmt((QubitRef("a"),))
    branch = body[5]
    assert isinstance(branch, IfStmt) and isinstance(branch.else_body[0], IfStmt)
    assert branch.else_body[0].else_body[0].gate == "S"
    assert body[6].descending
    assert [s.line for s in body] == [8, 9, 10, 11, 12, 13, 14]


def test_round_trip_shipped_programs():
    print("\n" + "=" * 70)
    print("TEST: render/parse round trip")
    print("=" * 70)
    for name in ALL_SOURCES:
        path = PROGRAMS / name
        original = parse_program(path.read_text(), validate=False)
        rendered = render_program(original)
        again = parse_program(rendered, validate=False)
        assert again.subroutines == original.subroutines, name
        assert again.oracles == original.oracles, name
        assert render_program(again) == rendered
        print(f"  {name:16s} {len(original.subroutines)} subroutine(s) ✓")
    print("  ✓ PASS")


def test_slot_flags_come_from_oracle_declaration():
    program = load_program(PROGRAMS / "qft.qpl", PROGRAMS / "reverse.qpl", PROGRAMS / "qpe.qpl")
    qpe = program.get("QPE")
    assert qpe.slot("Upower") == SlotParam("Upower", adjoint=True, controlled=True)
    assert program.oracles["Upower"].controlled
    purity = load_program(PROGRAMS / "multiswap.qpl", PROGRAMS / "purity.qpl").get("Purity")
    assert purity.slot("GenRho") == SlotParam("GenRho", adjoint=False, controlled=False)


def test_syntax_errors_carry_position():
    print("\n" + "=" * 70)
    print("TEST: syntax errors")
    print("=" * 70)
    bad = "sub A(qubits q[2]) {\n    H q[0];\n    H q[0] q[1];\n}\n"
    with pytest.raises(QPLSyntaxError) as info:
        parse_program(bad)
    print(f"  {info.value}")
    assert info.value.line == 3
    assert info.value.column > 0

    for text in ["sub A(qubits q[1]) { H q[0]; ", "sub (qubits q) {}", "sub A(qubits q[1]) { FOO q[0]; }",
                 "sub A(qubits q[1]) { for i in 0..1 H q[i]; }", "sub A(qubits q[1]) { let = 1; }"]:
        with pytest.raises(QPLSyntaxError):
            parse_program(text)
    print("  ✓ PASS")


def test_semantic_errors():
    with pytest.raises(ProgramError):
        parse_program("sub A(qubits q[1]) { call Missing()(q); }")
    with pytest.raises(RecursionDetected):
        parse_program("sub A(qubits q[1]) { call B()(q); }\nsub B(qubits q[1]) { call A()(q); }")
    with pytest.raises(ProgramError):
        parse_program("sub A(qubits q[1]) { H q[k]; }")
    with pytest.raises(ProgramError):
        parse_program("sub A(qubits q[1]) { H q[0]; }\nsub A(qubits q[1]) { X q[0]; }")
    with pytest.raises(ProgramError):
        parse_program("sub A(qubits q[1]) { H r[0]; }")
    # a name is in scope only after it is assigned
    with pytest.raises(ProgramError):
        parse_program("sub A(qubits q[1]) { H q[x]; let x = 0; }")


def test_parse_subroutine():
    sub = parse_subroutine("sub Flip(qubits q[1]) { X q[0]; }")
    assert sub.name == "Flip"
    assert isinstance(sub.body[0], GateApp)
    with pytest.raises(ProgramError):
        parse_subroutine("sub A(qubits q[1]) { } sub B(qubits q[1]) { }")
    assert isinstance(parse_expr("-x"), UnOp)


def main():
    print("\n" + "=" * 70)
    print("QPL-MINI PARSER TESTS")
    print("=" * 70)

    test_parse_reverse()
    test_expression_precedence()
    test_statement_forms()
    test_round_trip_shipped_programs()
    test_slot_flags_come_from_oracle_declaration()
    test_syntax_errors_carry_position()
    test_semantic_errors()
    test_parse_subroutine()

    print("\n" + "=" * 70)
    print("ALL TESTS COMPLETE")
    print("=" * 70)


if __name__ == "__main__":
    main()
