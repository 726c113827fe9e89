"""Lowering from IR to the flat bytecode executed by the engine cores.

Both the pure-Python interpreter and the compiled core consume the exact
same instruction stream, which is what keeps their behaviour bit-identical.
Instructions are rows of six int64 fields: [op, a, b, c, d, e].

Storage model:
  * globals live in a flat cell array (the memory image); accesses go
    through GLOAD/GSTORE and are routed through the transaction layer when
    executed inside a speculative strip body,
  * locals, induction variables and expression temporaries live in a
    per-attempt frame; a declaration (re)initializes its variable, scalars
    to their initializer or zero and arrays to all zeros, so re-executed
    strips always see identical starting state.

Protocol opcodes (BEGIN/END/YIELD/ADVANCE/RET/SINK/SOURCE) are scheduling
events handled by the engines, not by this module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ir
from .htm import MemoryImage
from .i64 import (shift_left, shift_right, trunc_div, trunc_mod, wrap64)
from .source import SourceSpan, SteError, UNKNOWN_SPAN
from .transform import TransformedProgram

# Opcodes; keep numbering in sync with _speccore.pyx.
HALT = 0
LOADK = 1
MOV = 2
ADD = 3
SUB = 4
MUL = 5
DIV = 6
MOD = 7
EQ = 8
NE = 9
LT = 10
LE = 11
GT = 12
GE = 13
NOTL = 14
BAND = 15
BOR = 16
BXOR = 17
SHL = 18
SHR = 19
NEG = 20
RND = 21
BOOLV = 22
JMP = 23
JZ = 24
JNZ = 25
GLOAD = 26
GSTORE = 27
FLOAD = 28
FSTORE = 29
YIELD = 30
BEGIN = 31
END = 32
ADVANCE = 33
RET = 34
SINK = 35
SOURCE = 36
FZERO = 37

OPCODE_NAMES = {
    v: k for k, v in list(globals().items())
    if isinstance(v, int) and k.isupper() and k != "UNKNOWN_SPAN"
}

_BINOPS = {
    "+": ADD, "-": SUB, "*": MUL, "/": DIV, "%": MOD,
    "==": EQ, "!=": NE, "<": LT, "<=": LE, ">": GT, ">=": GE,
    "&": BAND, "|": BOR, "^": BXOR, "<<": SHL, ">>": SHR,
}


@dataclass
class Lowered:
    """One program compiled for a particular execution mode."""

    code: np.ndarray
    consts: np.ndarray
    spans: list[SourceSpan]
    mem_template: MemoryImage
    var_ids: dict[str, int]
    var_base: np.ndarray
    var_len: np.ndarray
    frame_size: int
    # Segment entry points; -1 when the mode does not provide them.
    main_pc: int = -1
    pre_pc: int = -1
    strip_pc: int = -1
    post_pc: int = -1
    loop_init_pc: int = -1
    loop_bound_pc: int = -1
    iter_pc: int = -1
    expr_slot: int = 0
    # Speculative metadata.
    strip_size: int = 0
    cursor_addr: int = -1
    i_slot: int = -1
    spec_flag_slot: int = -1
    # Ordered metadata.
    ord_i_slot: int = -1
    _py_code: Optional[list[tuple[int, ...]]] = field(
        default=None, repr=False, compare=False)
    _py_consts: Optional[list[int]] = field(
        default=None, repr=False, compare=False)

    def py_code(self) -> list[tuple[int, ...]]:
        """Plain-int view of the instructions for the pure interpreter."""
        if self._py_code is None:
            self._py_code = [tuple(int(v) for v in row) for row in self.code]
        return self._py_code

    def py_consts(self) -> list[int]:
        if self._py_consts is None:
            self._py_consts = [int(v) for v in self.consts]
        return self._py_consts


def _const_value(e: ir.Expr, span: SourceSpan) -> int:
    if isinstance(e, ir.IntLit):
        return wrap64(e.value)
    if isinstance(e, ir.Unary):
        v = _const_value(e.operand, span)
        return wrap64(-v) if e.op == "-" else (0 if v else 1)
    if isinstance(e, ir.Binary):
        a = _const_value(e.lhs, span)
        b = _const_value(e.rhs, span)
        if e.op in ("/", "%") and b == 0:
            raise SteError("division by zero in constant initializer", span)
        return _fold_binop(e.op, a, b)
    raise SteError("global initializer must be a constant expression", span)


def _fold_binop(op: str, a: int, b: int) -> int:
    if op == "+":
        return wrap64(a + b)
    if op == "-":
        return wrap64(a - b)
    if op == "*":
        return wrap64(a * b)
    if op == "/":
        return trunc_div(a, b)
    if op == "%":
        return trunc_mod(a, b)
    if op == "<<":
        return shift_left(a, b)
    if op == ">>":
        return shift_right(a, b)
    if op == "&":
        return wrap64(a & b)
    if op == "|":
        return wrap64(a | b)
    if op == "^":
        return wrap64(a ^ b)
    if op == "==":
        return int(a == b)
    if op == "!=":
        return int(a != b)
    if op == "<":
        return int(a < b)
    if op == "<=":
        return int(a <= b)
    if op == ">":
        return int(a > b)
    if op == ">=":
        return int(a >= b)
    raise ValueError(op)


class _FrameLayout:
    """Flat frame slots for locals, inductions and firstprivate snapshots."""

    def __init__(self, globals_: set[str]):
        self.globals = globals_
        self.scalars: dict[str, int] = {}
        self.arrays: dict[str, tuple[int, int]] = {}
        self.top = 0

    def add_scalar(self, name: str) -> int:
        if name in self.scalars:
            return self.scalars[name]
        if name in self.arrays:
            raise SteError(f"local '{name}' redeclared with a different shape")
        slot = self.top
        self.scalars[name] = slot
        self.top += 1
        return slot

    def add_array(self, name: str, length: int) -> tuple[int, int]:
        if name in self.arrays:
            base, ln = self.arrays[name]
            if ln != length:
                raise SteError(
                    f"local array '{name}' redeclared with a different length")
            return base, ln
        if name in self.scalars:
            raise SteError(f"local '{name}' redeclared with a different shape")
        entry = (self.top, length)
        self.arrays[name] = entry
        self.top += length
        return entry

    def collect(self, body: list[ir.Stmt]) -> None:
        for s in ir.walk_stmts(body):
            if isinstance(s, ir.Decl):
                if s.decl.is_array:
                    self.add_array(s.decl.name, s.decl.length)
                else:
                    self.add_scalar(s.decl.name)
            elif isinstance(s, ir.For):
                if s.declares_induction or s.induction not in self.globals:
                    self.add_scalar(s.induction)


class _Codegen:
    def __init__(self, lowered_vars: dict[str, int], frame: _FrameLayout,
                 consts: dict[int, int], code: list[list[int]],
                 spans: list[SourceSpan]):
        self.vars = lowered_vars
        self.frame = frame
        self.consts = consts
        self.code = code
        self.spans = spans
        self.overrides: dict[str, int] = {}
        self.yield_for: Optional[ir.For] = None
        self.temp_next = 0
        self.temp_max = 0

    # -- plumbing ------------------------------------------------------------

    def emit(self, op: int, a: int = 0, b: int = 0, c: int = 0,
             d: int = 0, e: int = 0) -> int:
        self.code.append([op, a, b, c, d, e])
        return len(self.code) - 1

    def patch(self, at: int, operand: int, value: int) -> None:
        self.code[at][operand] = value

    def here(self) -> int:
        return len(self.code)

    def kidx(self, value: int) -> int:
        value = wrap64(value)
        if value not in self.consts:
            self.consts[value] = len(self.consts)
        return self.consts[value]

    def span_id(self, span: SourceSpan) -> int:
        self.spans.append(span)
        return len(self.spans) - 1

    def temp(self) -> int:
        slot = self.frame.top + self.temp_next
        self.temp_next += 1
        self.temp_max = max(self.temp_max, self.temp_next)
        return slot

    def resolve_scalar(self, name: str) -> tuple[str, int]:
        """Returns ("frame", slot) or ("global", var_id)."""
        if name in self.overrides:
            return "frame", self.overrides[name]
        if name in self.frame.scalars:
            return "frame", self.frame.scalars[name]
        if name in self.vars:
            return "global", self.vars[name]
        raise SteError(f"unresolved identifier '{name}'")

    # -- expressions ------------------------------------------------------------

    def expr(self, e: ir.Expr) -> int:
        if isinstance(e, ir.IntLit):
            t = self.temp()
            self.emit(LOADK, t, self.kidx(e.value))
            return t
        if isinstance(e, ir.VarRef):
            kind, where = self.resolve_scalar(e.name)
            if kind == "frame":
                return where
            t = self.temp()
            self.emit(GLOAD, t, where, -1, self.span_id(e.span))
            return t
        if isinstance(e, ir.Index):
            idx = self.expr(e.index)
            t = self.temp()
            if e.name in self.frame.arrays:
                base, length = self.frame.arrays[e.name]
                self.emit(FLOAD, t, base, idx, length, self.span_id(e.span))
            else:
                self.emit(GLOAD, t, self.vars[e.name], idx,
                          self.span_id(e.span))
            return t
        if isinstance(e, ir.Unary):
            a = self.expr(e.operand)
            t = self.temp()
            self.emit(NEG if e.op == "-" else NOTL, t, a)
            return t
        if isinstance(e, ir.Rnd):
            a = self.expr(e.arg)
            t = self.temp()
            self.emit(RND, t, a)
            return t
        if isinstance(e, ir.Binary):
            if e.op in ("&&", "||"):
                return self._logical(e)
            a = self.expr(e.lhs)
            b = self.expr(e.rhs)
            t = self.temp()
            extra = self.span_id(e.span) if e.op in ("/", "%") else 0
            self.emit(_BINOPS[e.op], t, a, b, extra)
            return t
        raise TypeError(f"cannot lower {e!r}")

    def _logical(self, e: ir.Binary) -> int:
        t = self.temp()
        a = self.expr(e.lhs)
        if e.op == "&&":
            j_short = self.emit(JZ, a, 0)
            short_val = 0
        else:
            j_short = self.emit(JNZ, a, 0)
            short_val = 1
        b = self.expr(e.rhs)
        self.emit(BOOLV, t, b)
        j_end = self.emit(JMP, 0)
        self.patch(j_short, 2, self.here())
        self.emit(LOADK, t, self.kidx(short_val))
        self.patch(j_end, 1, self.here())
        return t

    # -- statements ----------------------------------------------------------

    def assign(self, s: ir.Assign) -> None:
        if s.index is None:
            kind, where = self.resolve_scalar(s.target)
            val = self.expr(s.value)
            if kind == "frame":
                if val != where:
                    self.emit(MOV, where, val)
            else:
                self.emit(GSTORE, where, -1, val, self.span_id(s.span))
            return
        idx = self.expr(s.index)
        val = self.expr(s.value)
        if s.target in self.frame.arrays:
            base, length = self.frame.arrays[s.target]
            self.emit(FSTORE, base, idx, val, length, self.span_id(s.span))
        else:
            self.emit(GSTORE, self.vars[s.target], idx, val,
                      self.span_id(s.span))

    def decl(self, s: ir.Decl) -> None:
        d = s.decl
        if d.is_array:
            base, length = self.frame.arrays[d.name]
            self.emit(FZERO, base, length)
            return
        slot = self.frame.scalars[d.name]
        if d.init is not None:
            val = self.expr(d.init)
            if val != slot:
                self.emit(MOV, slot, val)
        else:
            self.emit(LOADK, slot, self.kidx(0))

    def stmt(self, s: ir.Stmt) -> None:
        self.temp_next = 0
        if isinstance(s, ir.Assign):
            self.assign(s)
        elif isinstance(s, ir.Decl):
            self.decl(s)
        elif isinstance(s, ir.If):
            cond = self.expr(s.cond)
            j_else = self.emit(JZ, cond, 0)
            self.block(s.then)
            if s.orelse:
                j_end = self.emit(JMP, 0)
                self.patch(j_else, 2, self.here())
                self.block(s.orelse)
                self.patch(j_end, 1, self.here())
            else:
                self.patch(j_else, 2, self.here())
        elif isinstance(s, ir.For):
            self.for_loop(s)
        elif isinstance(s, ir.OrderedMark):
            if s.kind == "sink":
                self.emit(SINK, s.distance)
            else:
                self.emit(SOURCE)
        elif isinstance(s, ir.PragmaTls):
            pass  # annotations carry no runtime behaviour
        elif isinstance(s, ir.Intrinsic):
            self.intrinsic(s)
        else:
            raise TypeError(f"cannot lower {s!r}")

    def intrinsic(self, s: ir.Intrinsic) -> None:
        # Serial-mode lowering: transactions are no-ops, cursor bookkeeping
        # is real. The speculative lowering overrides begin/end/advance.
        if s.kind == "begin":
            kind, slot = self.resolve_scalar(s.result)
            assert kind == "frame"
            self.emit(LOADK, slot, self.kidx(0))
        elif s.kind == "end":
            pass
        elif s.kind == "cursor_init":
            val = self.expr(s.init)
            self.emit(GSTORE, self.vars[s.cursor], -1, val,
                      self.span_id(s.span))
        elif s.kind == "cursor_advance":
            t = self.temp()
            self.emit(GLOAD, t, self.vars[s.cursor], -1, self.span_id(s.span))
            t2 = self.temp()
            self.emit(LOADK, t2, self.kidx(s.amount))
            t3 = self.temp()
            self.emit(ADD, t3, t, t2)
            self.emit(GSTORE, self.vars[s.cursor], -1, t3,
                      self.span_id(s.span))
        else:
            raise ValueError(s.kind)

    def for_loop(self, s: ir.For) -> None:
        kind, slot = self.resolve_scalar(s.induction)
        init = self.expr(s.init)
        if kind == "frame":
            if init != slot:
                self.emit(MOV, slot, init)
        else:
            self.emit(GSTORE, slot, -1, init, self.span_id(s.span))
        test_pc = self.here()
        self.temp_next = 0
        cond = self.expr(s.cond)
        j_exit = self.emit(JZ, cond, 0)
        self.block(s.body)
        if self.yield_for is s:
            self.emit(YIELD)
        self.temp_next = 0
        step = self.expr(s.step)
        if kind == "frame":
            self.emit(MOV, slot, step)
        else:
            self.emit(GSTORE, slot, -1, step, self.span_id(s.span))
        self.emit(JMP, test_pc)
        self.patch(j_exit, 2, self.here())

    def block(self, body: list[ir.Stmt]) -> None:
        for s in body:
            self.stmt(s)


def _build_memory(program: ir.Program, granule_bytes: int,
                  isolate: frozenset[str]) -> tuple[MemoryImage,
                                                    dict[str, int],
                                                    np.ndarray, np.ndarray]:
    variables = [(d.name, d.length) for d in program.globals]
    mem = MemoryImage(variables, granule_bytes, isolate)
    var_ids = {}
    bases = []
    lens = []
    for i, d in enumerate(program.globals):
        var_ids[d.name] = i
        base, length = mem.vars[d.name]
        bases.append(base)
        lens.append(length)
        if d.init is not None:
            mem.cells[base] = _const_value(d.init, d.span)
        elif d.init_list is not None:
            for j, v in enumerate(d.init_list):
                mem.cells[base + j] = wrap64(v)
    return (mem, var_ids, np.array(bases, dtype=np.int64),
            np.array(lens, dtype=np.int64))


def _finish(cg: _Codegen, frame: _FrameLayout, consts: dict[int, int],
            code: list[list[int]]) -> tuple[np.ndarray, np.ndarray, int]:
    const_arr = np.zeros(max(len(consts), 1), dtype=np.int64)
    for value, idx in consts.items():
        const_arr[idx] = value
    code_arr = np.array(code, dtype=np.int64).reshape(len(code), 6)
    return code_arr, const_arr, frame.top + cg.temp_max


def lower_serial(program: ir.Program, granule_bytes: int = 64,
                 isolate: frozenset[str] = frozenset()) -> Lowered:
    """Whole program as one segment; pragmas ignored, intrinsics as
    bookkeeping; the serial interpreter and oracle run this."""
    mem, var_ids, bases, lens = _build_memory(program, granule_bytes, isolate)
    frame = _FrameLayout(set(var_ids))
    frame.collect(program.body)
    consts: dict[int, int] = {}
    code: list[list[int]] = []
    spans: list[SourceSpan] = [UNKNOWN_SPAN]
    cg = _Codegen(var_ids, frame, consts, code, spans)
    main_pc = cg.here()
    cg.block(program.body)
    cg.emit(RET)
    code_arr, const_arr, frame_size = _finish(cg, frame, consts, code)
    return Lowered(code_arr, const_arr, spans, mem, var_ids, bases, lens,
                   frame_size, main_pc=main_pc)


def lower_speculative(tp: TransformedProgram,
                      granule_bytes: int = 64) -> Lowered:
    """Segments for the speculative runtime: pre, strip task, post, and the
    tiny loop-bound evaluators."""
    info = tp.loop
    program = tp.program
    body = program.body
    try:
        outer_idx = next(i for i, s in enumerate(body) if s is info.outer)
    except StopIteration:
        raise SteError("speculative loop must be at the top level of the "
                       "program body") from None

    mem, var_ids, bases, lens = _build_memory(
        program, granule_bytes, isolate=frozenset({info.cursor}))
    frame = _FrameLayout(set(var_ids))
    frame.collect(body)
    if not info.outer.declares_induction and info.outer.induction in var_ids:
        raise SteError("speculative loop induction must not be a global")
    # '$' never appears in parsed identifiers, so these cannot collide.
    fp_slots = {name: frame.add_scalar(f"$fp${name}")
                for name in info.firstprivate}
    expr_slot = frame.add_scalar("$expr")

    consts: dict[int, int] = {}
    code: list[list[int]] = []
    spans: list[SourceSpan] = [UNKNOWN_SPAN]
    cg = _Codegen(var_ids, frame, consts, code, spans)

    pre_pc = cg.here()
    cg.block(body[:outer_idx])
    cg.emit(RET)

    loop_init_pc = cg.here()
    cg.temp_next = 0
    r = cg.expr(info.outer.init)
    if r != expr_slot:
        cg.emit(MOV, expr_slot, r)
    cg.emit(RET)

    bound_expr = info.outer.cond.rhs  # canonical: i < bound
    loop_bound_pc = cg.here()
    cg.temp_next = 0
    r = cg.expr(bound_expr)
    if r != expr_slot:
        cg.emit(MOV, expr_slot, r)
    cg.emit(RET)

    # Strip task segment: firstprivate snapshots load directly (the values
    # are loop-invariant by validation), then the outer-loop body runs with
    # protocol opcodes in place of the intrinsics.
    strip_pc = cg.here()
    for name, slot in fp_slots.items():
        cg.temp_next = 0
        cg.emit(GLOAD, slot, var_ids[name], -1, 0)
    cg.overrides = dict(fp_slots)
    cg.yield_for = info.inner

    i_slot = frame.scalars[info.outer.induction]
    for s in info.outer.body:
        if isinstance(s, ir.Intrinsic) and s.kind == "begin":
            cg.emit(BEGIN)
        elif isinstance(s, ir.Intrinsic) and s.kind == "end":
            cg.emit(END)
        elif isinstance(s, ir.Intrinsic) and s.kind == "cursor_advance":
            cg.emit(ADVANCE)
        else:
            cg.stmt(s)
    cg.emit(RET)
    cg.overrides = {}
    cg.yield_for = None

    post_pc = cg.here()
    cg.block(body[outer_idx + 1:])
    cg.emit(RET)

    code_arr, const_arr, frame_size = _finish(cg, frame, consts, code)
    cursor_addr = mem.vars[info.cursor][0]
    return Lowered(
        code_arr, const_arr, spans, mem, var_ids, bases, lens, frame_size,
        pre_pc=pre_pc, strip_pc=strip_pc, post_pc=post_pc,
        loop_init_pc=loop_init_pc, loop_bound_pc=loop_bound_pc,
        expr_slot=expr_slot, strip_size=info.strip_size,
        cursor_addr=cursor_addr, i_slot=i_slot,
        spec_flag_slot=frame.scalars[info.spec_flag])


def find_ordered_loop(program: ir.Program) -> ir.For:
    loops = [s for s in program.body
             if isinstance(s, ir.For) and s.ordered]
    if len(loops) != 1:
        raise SteError("expected exactly one '#pragma omp for ordered' loop "
                       "at the top level")
    return loops[0]


def lower_ordered(program: ir.Program, granule_bytes: int = 64) -> Lowered:
    """Segments for the sink/source baseline: pre, one-iteration body, post."""
    loop = find_ordered_loop(program)
    body = program.body
    outer_idx = body.index(loop)

    mem, var_ids, bases, lens = _build_memory(program, granule_bytes,
                                              frozenset())
    frame = _FrameLayout(set(var_ids))
    frame.collect(body)
    if not loop.declares_induction and loop.induction in var_ids:
        raise SteError("ordered loop induction must not be a global")
    expr_slot = frame.add_scalar("$expr")

    consts: dict[int, int] = {}
    code: list[list[int]] = []
    spans: list[SourceSpan] = [UNKNOWN_SPAN]
    cg = _Codegen(var_ids, frame, consts, code, spans)

    pre_pc = cg.here()
    cg.block(body[:outer_idx])
    cg.emit(RET)

    loop_init_pc = cg.here()
    cg.temp_next = 0
    r = cg.expr(loop.init)
    if r != expr_slot:
        cg.emit(MOV, expr_slot, r)
    cg.emit(RET)

    if not (isinstance(loop.cond, ir.Binary) and loop.cond.op == "<"
            and isinstance(loop.cond.lhs, ir.VarRef)
            and loop.cond.lhs.name == loop.induction):
        raise SteError("ordered loop must have the form "
                       "for (i = INIT; i < BOUND; i = i + 1)", loop.span)
    loop_bound_pc = cg.here()
    cg.temp_next = 0
    r = cg.expr(loop.cond.rhs)
    if r != expr_slot:
        cg.emit(MOV, expr_slot, r)
    cg.emit(RET)

    iter_pc = cg.here()
    cg.block(loop.body)
    cg.emit(RET)

    post_pc = cg.here()
    cg.block(body[outer_idx + 1:])
    cg.emit(RET)

    code_arr, const_arr, frame_size = _finish(cg, frame, consts, code)
    return Lowered(
        code_arr, const_arr, spans, mem, var_ids, bases, lens, frame_size,
        pre_pc=pre_pc, post_pc=post_pc, loop_init_pc=loop_init_pc,
        loop_bound_pc=loop_bound_pc, iter_pc=iter_pc, expr_slot=expr_slot,
        ord_i_slot=frame.scalars[loop.induction])
