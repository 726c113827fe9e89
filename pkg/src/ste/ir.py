"""Loop-language IR: expressions, statements, directives, validation.

The representation is deliberately small. A Program is a list of global
variable declarations (64-bit signed integers, scalar or fixed-length array)
plus a statement list. Speculation annotations appear in two forms:

  * a taskloop directive attached to a `for` statement, carrying the strip
    size and the privatization clause lists, and
  * standalone access pragmas (`read` / `write` / `if_read` / `if_write`)
    that apply to the next assignment or `if` statement.

Transformed programs additionally contain local declarations and intrinsic
statements (transaction begin/end, commit-cursor bookkeeping) that never
appear in frontend output.

Nodes are compared structurally; source spans never participate in
equality, so a parse -> render -> parse round trip yields equal trees.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

from .source import UNKNOWN_SPAN, SourceSpan

# ---------------------------------------------------------------------------
# Expressions
# ---------------------------------------------------------------------------

BINARY_OPS = {
    "||", "&&", "|", "^", "&", "==", "!=", "<", "<=", ">", ">=",
    "<<", ">>", "+", "-", "*", "/", "%",
}
UNARY_OPS = {"-", "!"}

REDUCTION_OPS = ("+", "-", "*", "&", "|", "^", "&&", "||")

# Identity element per reduction operator. `&` over signed 64-bit integers
# has the all-ones word (-1) as its identity.
REDUCTION_IDENTITY = {
    "+": 0, "-": 0, "|": 0, "^": 0,
    "*": 1, "&&": 1, "||": 0, "&": -1,
}


@dataclass(frozen=True)
class Expr:
    pass


@dataclass(frozen=True)
class IntLit(Expr):
    value: int
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)


@dataclass(frozen=True)
class VarRef(Expr):
    name: str
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)


@dataclass(frozen=True)
class Index(Expr):
    """Array element read: name[index]."""

    name: str
    index: Expr
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    operand: Expr
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    lhs: Expr
    rhs: Expr
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)


@dataclass(frozen=True)
class Rnd(Expr):
    """Deterministic PRNG intrinsic: a pure function of (run seed, argument)."""

    arg: Expr
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)


# ---------------------------------------------------------------------------
# Declarations and directives
# ---------------------------------------------------------------------------


@dataclass
class VarDecl:
    """`int x;` / `int x = e;` / `int A[n];` / `int A[n] = {..};`"""

    name: str
    length: Optional[int] = None  # None => scalar
    init: Optional[Expr] = None
    init_list: Optional[tuple[int, ...]] = None
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)

    @property
    def is_array(self) -> bool:
        return self.length is not None


@dataclass
class SpecReduction:
    op: str
    names: tuple[str, ...]


@dataclass
class TaskloopDirective:
    """Clauses of `#pragma omp taskloop ...` attached to a for loop."""

    strip_size: Optional[int] = None  # tls(n); None once transformed
    grainsize: Optional[int] = None
    spec_private: tuple[str, ...] = ()
    spec_reduction: Optional[SpecReduction] = None
    firstprivate: tuple[str, ...] = ()
    shared: tuple[str, ...] = ()
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)

    @property
    def is_tls(self) -> bool:
        return self.strip_size is not None


TLS_CLAUSE_KINDS = ("read", "write", "if_read", "if_write")


@dataclass
class TlsDirectiveClause:
    kind: str  # one of TLS_CLAUSE_KINDS
    target: str


# ---------------------------------------------------------------------------
# Statements
# ---------------------------------------------------------------------------


@dataclass
class Stmt:
    pass


@dataclass
class Decl(Stmt):
    """Local declaration; only appears inside bodies."""

    decl: VarDecl = field(default_factory=lambda: VarDecl("_"))


@dataclass
class CopybackWrite:
    """Metadata attached by the transform to a rewritten privatized write."""

    var: str
    private_name: str
    index: Expr
    kind: str  # "write" | "if_write"
    pred_name: Optional[str]
    counter_name: str


@dataclass
class Assign(Stmt):
    target: str = ""
    index: Optional[Expr] = None  # None => scalar target
    value: Expr = IntLit(0)
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)
    copyback: Optional[CopybackWrite] = field(default=None, compare=False)


@dataclass
class If(Stmt):
    cond: Expr = IntLit(0)
    then: list[Stmt] = field(default_factory=list)
    orelse: list[Stmt] = field(default_factory=list)
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)


@dataclass
class For(Stmt):
    induction: str = "i"
    init: Expr = IntLit(0)
    cond: Expr = IntLit(0)
    step: Expr = IntLit(0)  # new induction value each iteration
    body: list[Stmt] = field(default_factory=list)
    declares_induction: bool = False
    directive: Optional[TaskloopDirective] = None
    ordered: bool = False  # carries `#pragma omp for ordered`
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)


@dataclass
class PragmaTls(Stmt):
    """`#pragma omp tls <clause>(<name>)`; applies to the next Assign or If."""

    clause: TlsDirectiveClause = field(
        default_factory=lambda: TlsDirectiveClause("read", "_")
    )
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)


@dataclass
class OrderedMark(Stmt):
    """`#pragma omp ordered depend(sink: i-d)` / `depend(source)`."""

    kind: str = "sink"  # "sink" | "source"
    ivar: str = "i"
    distance: int = 1
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)


@dataclass
class Intrinsic(Stmt):
    """Runtime plumbing emitted by the transform; never in frontend output.

    kinds:
      begin          result = __begin(cursor, ivar)
      end            __end(result, cursor, ivar)
      cursor_init    __cursor_init(cursor, expr)
      cursor_advance __cursor_advance(cursor, amount)
    """

    kind: str = "begin"
    cursor: str = ""
    result: Optional[str] = None
    ivar: Optional[str] = None
    amount: Optional[int] = None
    init: Optional[Expr] = None
    span: SourceSpan = field(default=UNKNOWN_SPAN, compare=False)


@dataclass
class Program:
    globals: list[VarDecl] = field(default_factory=list)
    body: list[Stmt] = field(default_factory=list)
    source_file: str = field(default="<memory>", compare=False)

    @property
    def inputs(self) -> dict[str, tuple[int, ...]]:
        """Named integer sequences: array globals with explicit initializers."""
        return {
            d.name: d.init_list for d in self.globals if d.init_list is not None
        }


# ---------------------------------------------------------------------------
# Tree walking helpers
# ---------------------------------------------------------------------------


def expr_children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, Unary):
        return (e.operand,)
    if isinstance(e, Binary):
        return (e.lhs, e.rhs)
    if isinstance(e, Index):
        return (e.index,)
    if isinstance(e, Rnd):
        return (e.arg,)
    return ()


def walk_expr(e: Expr) -> Iterator[Expr]:
    yield e
    for c in expr_children(e):
        yield from walk_expr(c)


def stmt_exprs(s: Stmt) -> tuple[Expr, ...]:
    if isinstance(s, Assign):
        return (s.value,) + ((s.index,) if s.index is not None else ())
    if isinstance(s, If):
        return (s.cond,)
    if isinstance(s, For):
        return (s.init, s.cond, s.step)
    if isinstance(s, Decl) and s.decl.init is not None:
        return (s.decl.init,)
    if isinstance(s, Intrinsic) and s.init is not None:
        return (s.init,)
    return ()


def stmt_blocks(s: Stmt) -> tuple[list[Stmt], ...]:
    if isinstance(s, If):
        return (s.then, s.orelse)
    if isinstance(s, For):
        return (s.body,)
    return ()


def walk_stmts(body: list[Stmt]) -> Iterator[Stmt]:
    for s in body:
        yield s
        for block in stmt_blocks(s):
            yield from walk_stmts(block)


def vars_read(e: Expr) -> set[str]:
    names = set()
    for node in walk_expr(e):
        if isinstance(node, (VarRef, Index)):
            names.add(node.name)
    return names


def vars_written(body: list[Stmt]) -> set[str]:
    out = set()
    for s in walk_stmts(body):
        if isinstance(s, Assign):
            out.add(s.target)
        elif isinstance(s, For):
            out.add(s.induction)
    return out


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class Violation:
    rule: str
    message: str
    span: SourceSpan = UNKNOWN_SPAN

    def __str__(self) -> str:
        return f"{self.span}: [{self.rule}] {self.message}"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


class _Scope:
    """Block-scoped name resolution; shadowing is a violation.

    Every reference must resolve to exactly one visible declaration, so a
    name has a single meaning at any program point (the lowering relies on
    this to map names to flat storage).
    """

    def __init__(self) -> None:
        self.blocks: list[dict[str, VarDecl]] = [{}]

    def push(self) -> None:
        self.blocks.append({})

    def pop(self) -> None:
        self.blocks.pop()

    def declare(self, decl: VarDecl, report: ValidationReport) -> None:
        if self.lookup(decl.name) is not None:
            report.violations.append(
                Violation("duplicate-declaration",
                          f"'{decl.name}' is already declared", decl.span)
            )
        else:
            self.blocks[-1][decl.name] = decl

    def lookup(self, name: str) -> Optional[VarDecl]:
        for block in reversed(self.blocks):
            if name in block:
                return block[name]
        return None


def _check_expr(e: Expr, scope: _Scope, report: ValidationReport) -> None:
    for node in walk_expr(e):
        if isinstance(node, VarRef):
            d = scope.lookup(node.name)
            if d is None:
                report.violations.append(Violation(
                    "undeclared-identifier", f"'{node.name}' is not declared",
                    node.span))
            elif d.is_array:
                report.violations.append(Violation(
                    "array-needs-index",
                    f"array '{node.name}' used without an index", node.span))
        elif isinstance(node, Index):
            d = scope.lookup(node.name)
            if d is None:
                report.violations.append(Violation(
                    "undeclared-identifier", f"'{node.name}' is not declared",
                    node.span))
            elif not d.is_array:
                report.violations.append(Violation(
                    "scalar-indexed", f"scalar '{node.name}' indexed like an array",
                    node.span))


def _check_directive(loop: For, scope: _Scope, report: ValidationReport) -> None:
    d = loop.directive
    assert d is not None
    if d.is_tls and d.grainsize is not None:
        report.violations.append(Violation(
            "mutually-exclusive",
            "tls and grainsize are mutually exclusive on one taskloop",
            d.span))
    named = list(d.spec_private) + list(d.firstprivate)
    if d.spec_reduction:
        named += list(d.spec_reduction.names)
    for name in named:
        if scope.lookup(name) is None:
            report.violations.append(Violation(
                "undeclared-identifier",
                f"'{name}' in a taskloop clause is not declared", d.span))
    if d.spec_reduction:
        overlap = set(d.spec_private) & set(d.spec_reduction.names)
        if overlap:
            report.violations.append(Violation(
                "clause-overlap",
                "spec_private and spec_reduction name sets must be disjoint: "
                + ", ".join(sorted(overlap)), d.span))
        for name in d.spec_reduction.names:
            decl = scope.lookup(name)
            if decl is not None and decl.is_array:
                report.violations.append(Violation(
                    "reduction-not-scalar",
                    f"spec_reduction target '{name}' must be a scalar", d.span))
    overlap = set(d.spec_private) & set(d.firstprivate)
    if overlap:
        report.violations.append(Violation(
            "clause-overlap",
            "firstprivate and spec_private name sets must be disjoint: "
            + ", ".join(sorted(overlap)), d.span))
    written = vars_written(loop.body)
    for name in d.firstprivate:
        if name in written:
            report.violations.append(Violation(
                "firstprivate-written",
                f"firstprivate '{name}' is written inside the loop", d.span))
    # Loop bounds must be invariant so strips can be enumerated up front.
    for e in (loop.init, loop.cond):
        bad = vars_read(e) & written
        if bad:
            report.violations.append(Violation(
                "loop-bound-not-invariant",
                "loop bound depends on variables written in the loop: "
                + ", ".join(sorted(bad)), loop.span))

    # Access pragmas within this loop.
    for s in walk_stmts(loop.body):
        if isinstance(s, PragmaTls):
            c = s.clause
            decl = scope.lookup(c.target)
            if decl is None:
                report.violations.append(Violation(
                    "undeclared-identifier",
                    f"tls target '{c.target}' is not declared", s.span))
                continue
            if c.target not in d.spec_private:
                report.violations.append(Violation(
                    "tls-target-not-spec_private",
                    f"tls {c.kind}({c.target}) requires {c.target} in "
                    "spec_private", s.span))
            if c.kind in ("read", "if_read") and decl.is_array:
                report.violations.append(Violation(
                    "read-target-not-scalar",
                    f"tls {c.kind} target '{c.target}' must be a scalar",
                    s.span))


def _check_body(body: list[Stmt], scope: _Scope, report: ValidationReport,
                in_tls_loop: bool) -> None:
    pending_pragma: Optional[PragmaTls] = None
    for s in body:
        if isinstance(s, PragmaTls):
            if not in_tls_loop:
                report.violations.append(Violation(
                    "tls-outside-speculative-loop",
                    "tls access pragma outside a taskloop tls loop", s.span))
            pending_pragma = s
            continue
        if pending_pragma is not None and not isinstance(s, (Assign, If)):
            report.violations.append(Violation(
                "pragma-attachment",
                "tls pragma must precede an assignment or if statement",
                pending_pragma.span))
        pending_pragma = None

        if isinstance(s, Decl):
            if s.decl.init is not None:
                _check_expr(s.decl.init, scope, report)
            if s.decl.length is not None and s.decl.length < 1:
                report.violations.append(Violation(
                    "bad-array-length",
                    f"array '{s.decl.name}' must have length >= 1",
                    s.decl.span))
            scope.declare(s.decl, report)
        elif isinstance(s, Assign):
            d = scope.lookup(s.target)
            if d is None:
                report.violations.append(Violation(
                    "undeclared-identifier",
                    f"'{s.target}' is not declared", s.span))
            elif d.is_array and s.index is None:
                report.violations.append(Violation(
                    "array-needs-index",
                    f"array '{s.target}' assigned without an index", s.span))
            elif not d.is_array and s.index is not None:
                report.violations.append(Violation(
                    "scalar-indexed",
                    f"scalar '{s.target}' assigned with an index", s.span))
            if s.index is not None:
                _check_expr(s.index, scope, report)
            _check_expr(s.value, scope, report)
        elif isinstance(s, If):
            _check_expr(s.cond, scope, report)
            scope.push()
            _check_body(s.then, scope, report, in_tls_loop)
            scope.pop()
            scope.push()
            _check_body(s.orelse, scope, report, in_tls_loop)
            scope.pop()
        elif isinstance(s, For):
            scope.push()
            if s.declares_induction or scope.lookup(s.induction) is None:
                scope.declare(VarDecl(s.induction, span=s.span), report)
            _check_expr(s.init, scope, report)
            _check_expr(s.cond, scope, report)
            _check_expr(s.step, scope, report)
            inner_tls = in_tls_loop
            if s.directive is not None and s.directive.is_tls:
                inner_tls = True
            _check_body(s.body, scope, report, inner_tls)
            if s.directive is not None:
                _check_directive(s, scope, report)
            scope.pop()
        elif isinstance(s, (OrderedMark, Intrinsic)):
            if isinstance(s, Intrinsic) and s.init is not None:
                _check_expr(s.init, scope, report)
    if pending_pragma is not None:
        report.violations.append(Violation(
            "pragma-attachment",
            "tls pragma must precede an assignment or if statement",
            pending_pragma.span))


def validate(program: Program) -> ValidationReport:
    """Check declaration, clause and placement rules.

    Violations are data, not exceptions: callers decide whether to stop.
    """
    report = ValidationReport()
    scope = _Scope()
    for decl in program.globals:
        if decl.length is not None and decl.length < 1:
            report.violations.append(Violation(
                "bad-array-length",
                f"array '{decl.name}' must have length >= 1", decl.span))
        if decl.init is not None:
            _check_expr(decl.init, scope, report)
            for node in walk_expr(decl.init):
                if isinstance(node, (VarRef, Index)):
                    report.violations.append(Violation(
                        "global-init-not-constant",
                        f"initializer of '{decl.name}' must be constant",
                        decl.span))
                    break
        scope.declare(decl, report)
    _check_body(program.body, scope, report, in_tls_loop=False)
    return report


# ---------------------------------------------------------------------------
# Copy-back events
# ---------------------------------------------------------------------------


@dataclass
class CopybackEvent:
    """One entry of the statement list driving copy-back reconstruction.

    kind "for" carries the loop header to clone plus the counter its direct
    writes index with; kind "write" carries the privatized write's metadata;
    "end_for" closes the innermost open "for".
    """

    kind: str  # "for" | "end_for" | "write"
    induction: Optional[str] = None
    init: Optional[Expr] = None
    cond: Optional[Expr] = None
    step: Optional[Expr] = None
    declares_induction: bool = True
    counter_name: Optional[str] = None
    write: Optional[CopybackWrite] = None


def _subtree_has_copyback(body: list[Stmt]) -> bool:
    return any(
        isinstance(s, Assign) and s.copyback is not None
        for s in walk_stmts(body)
    )


def collect_copyback_events(loop: For) -> list[CopybackEvent]:
    """Build the copy-back statement list for a rewritten strip loop.

    `loop` is the strip-mined inner loop after privatization rewrites
    (writes carry their CopybackWrite metadata). Events appear in source
    order; the root loop always contributes its for/end_for pair, nested
    loops only when they contain privatized writes. A for event's counter
    is the one its direct writes index with.
    """
    events: list[CopybackEvent] = []

    def walk(body: list[Stmt], open_ev: CopybackEvent) -> None:
        for s in body:
            if isinstance(s, Assign) and s.copyback is not None:
                events.append(CopybackEvent(kind="write", write=s.copyback,
                                            counter_name=s.copyback.counter_name))
                if open_ev.counter_name is None:
                    open_ev.counter_name = s.copyback.counter_name
            elif isinstance(s, If):
                walk(s.then, open_ev)
                walk(s.orelse, open_ev)
            elif isinstance(s, For) and _subtree_has_copyback(s.body):
                emit_for(s)

    def emit_for(l: For) -> None:
        ev = CopybackEvent(kind="for", induction=l.induction, init=l.init,
                           cond=l.cond, step=l.step,
                           declares_induction=l.declares_induction)
        events.append(ev)
        walk(l.body, ev)
        events.append(CopybackEvent(kind="end_for"))

    emit_for(loop)
    return events


def check_event_balance(events: list[CopybackEvent]) -> bool:
    """Stack simulation: every for is closed, writes sit inside a for."""
    depth = 0
    for ev in events:
        if ev.kind == "for":
            depth += 1
        elif ev.kind == "end_for":
            depth -= 1
            if depth < 0:
                return False
        elif ev.kind == "write" and depth == 0:
            return False
    return depth == 0


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

_PRECEDENCE = {
    "||": 1, "&&": 2, "|": 3, "^": 4, "&": 5, "==": 6, "!=": 6,
    "<": 7, "<=": 7, ">": 7, ">=": 7, "<<": 8, ">>": 8,
    "+": 9, "-": 9, "*": 10, "/": 10, "%": 10,
}


def render_expr(e: Expr, parent_prec: int = 0) -> str:
    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, VarRef):
        return e.name
    if isinstance(e, Index):
        return f"{e.name}[{render_expr(e.index)}]"
    if isinstance(e, Rnd):
        return f"rnd({render_expr(e.arg)})"
    if isinstance(e, Unary):
        inner = render_expr(e.operand, 11)
        return f"{e.op}{inner}"
    if isinstance(e, Binary):
        prec = _PRECEDENCE[e.op]
        text = (f"{render_expr(e.lhs, prec)} {e.op} "
                f"{render_expr(e.rhs, prec + 1)}")
        return f"({text})" if prec < parent_prec else text
    raise TypeError(f"cannot render {e!r}")


def _render_decl(d: VarDecl) -> str:
    if d.is_array:
        text = f"int {d.name}[{d.length}]"
        if d.init_list is not None:
            text += " = {" + ", ".join(str(v) for v in d.init_list) + "}"
    else:
        text = f"int {d.name}"
        if d.init is not None:
            text += f" = {render_expr(d.init)}"
    return text + ";"


def _render_directive(d: TaskloopDirective) -> str:
    parts = ["#pragma omp taskloop"]
    if d.strip_size is not None:
        parts.append(f"tls({d.strip_size})")
    if d.grainsize is not None:
        parts.append(f"grainsize({d.grainsize})")
    if d.firstprivate:
        parts.append("firstprivate(" + ", ".join(d.firstprivate) + ")")
    if d.shared:
        parts.append("shared(" + ", ".join(d.shared) + ")")
    if d.spec_private:
        parts.append("spec_private(" + ", ".join(d.spec_private) + ")")
    if d.spec_reduction:
        parts.append(f"spec_reduction({d.spec_reduction.op}: "
                     + ", ".join(d.spec_reduction.names) + ")")
    return " ".join(parts)


def _render_stmt(s: Stmt, lines: list[str], indent: int) -> None:
    pad = "    " * indent
    if isinstance(s, Decl):
        lines.append(pad + _render_decl(s.decl))
    elif isinstance(s, Assign):
        target = s.target if s.index is None else \
            f"{s.target}[{render_expr(s.index)}]"
        lines.append(f"{pad}{target} = {render_expr(s.value)};")
    elif isinstance(s, If):
        lines.append(f"{pad}if ({render_expr(s.cond)}) {{")
        for t in s.then:
            _render_stmt(t, lines, indent + 1)
        if s.orelse:
            lines.append(pad + "} else {")
            for t in s.orelse:
                _render_stmt(t, lines, indent + 1)
        lines.append(pad + "}")
    elif isinstance(s, For):
        if s.directive is not None:
            lines.append(pad + _render_directive(s.directive))
        if s.ordered:
            lines.append(pad + "#pragma omp for ordered")
        decl = "int " if s.declares_induction else ""
        lines.append(
            f"{pad}for ({decl}{s.induction} = {render_expr(s.init)}; "
            f"{render_expr(s.cond)}; {s.induction} = {render_expr(s.step)}) {{")
        for t in s.body:
            _render_stmt(t, lines, indent + 1)
        lines.append(pad + "}")
    elif isinstance(s, PragmaTls):
        lines.append(f"{pad}#pragma omp tls {s.clause.kind}({s.clause.target})")
    elif isinstance(s, OrderedMark):
        if s.kind == "sink":
            lines.append(
                f"{pad}#pragma omp ordered depend(sink: {s.ivar} - {s.distance})")
        else:
            lines.append(pad + "#pragma omp ordered depend(source)")
    elif isinstance(s, Intrinsic):
        if s.kind == "begin":
            lines.append(f"{pad}{s.result} = __begin({s.cursor}, {s.ivar});")
        elif s.kind == "end":
            lines.append(f"{pad}__end({s.result}, {s.cursor}, {s.ivar});")
        elif s.kind == "cursor_init":
            lines.append(
                f"{pad}__cursor_init({s.cursor}, {render_expr(s.init)});")
        elif s.kind == "cursor_advance":
            lines.append(f"{pad}__cursor_advance({s.cursor}, {s.amount});")
        else:
            raise ValueError(f"unknown intrinsic kind {s.kind}")
    else:
        raise TypeError(f"cannot render {s!r}")


def render(program: Program) -> str:
    """Deterministic text form; stable under render/parse round trips."""
    lines: list[str] = []
    for d in program.globals:
        lines.append(_render_decl(d))
    if program.globals and program.body:
        lines.append("")
    for s in program.body:
        _render_stmt(s, lines, 0)
    return "\n".join(lines) + "\n"
