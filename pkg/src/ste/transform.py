"""Speculative-privatization transform for taskloop tls loops.

Rewrites an annotated loop into its speculative form:

  * the loop is strip mined; each outer iteration is one speculative task,
  * a shared commit cursor is created and initialized to the loop's first
    iteration; tasks advance it by the strip size after committing,
  * transaction begin/end intrinsics bracket the inner loop,
  * spec_private scalars get a strip-local copy, a lazy first-read block for
    if_read, and a (possibly flag-guarded) copy-back after the transaction,
  * spec_private arrays get a strip-local buffer indexed by a per-loop
    counter, predicate arrays for if_write, and a reconstructed for-nest
    that copies values back non-speculatively after the commit,
  * spec_reduction scalars accumulate into an identity-initialized local
    that is merged into the shared variable after the commit.

The transform never mutates its input program.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Optional

from . import ir
from .source import (MissingAccessClause, NonCanonicalLoop, PatternMismatch,
                     TransformError, UnsupportedAccess, UnsupportedTarget)

CURSOR_NAME = "next_strip_to_commit"
INNER_NAME = "ii"
SPEC_FLAG_NAME = "speculative"


@dataclass
class TransformNaming:
    """Generated identifiers for one transformed loop.

    Base names follow the translated-code conventions (varL, flag_r_var,
    count_k, varL_k_j, pred_var_j); on collision with a user identifier a
    fresh numeric suffix is appended.
    """

    cursor: str = CURSOR_NAME
    inner: str = INNER_NAME
    spec_flag: str = SPEC_FLAG_NAME
    scalar_copy: dict[str, str] = field(default_factory=dict)
    read_flag: dict[str, str] = field(default_factory=dict)
    write_flag: dict[str, str] = field(default_factory=dict)
    private_array: dict[str, str] = field(default_factory=dict)
    pred_array: dict[str, str] = field(default_factory=dict)
    counters: list[str] = field(default_factory=list)
    reduction_copy: dict[str, str] = field(default_factory=dict)


@dataclass
class ReductionInfo:
    var: str
    op: str
    private: str
    identity: int
    merge_op: str


@dataclass
class LoopInfo:
    """Metadata about one transformed loop, consumed by the lowering."""

    outer: ir.For
    inner: ir.For
    cursor: str
    strip_size: int
    spec_flag: str
    firstprivate: tuple[str, ...]
    naming: TransformNaming
    reductions: list[ReductionInfo]
    privatized_arrays: tuple[str, ...]


@dataclass
class TransformedProgram:
    program: ir.Program
    original: ir.Program
    loops: list[LoopInfo]

    @property
    def loop(self) -> LoopInfo:
        if len(self.loops) != 1:
            raise TransformError(
                f"expected exactly one speculative loop, found {len(self.loops)}")
        return self.loops[0]


class _Names:
    """Fresh-name factory avoiding every identifier used in the program."""

    def __init__(self, program: ir.Program):
        self.used = {d.name for d in program.globals}
        for s in ir.walk_stmts(program.body):
            if isinstance(s, ir.Decl):
                self.used.add(s.decl.name)
            elif isinstance(s, ir.For):
                self.used.add(s.induction)

    def fresh(self, base: str) -> str:
        if base not in self.used:
            self.used.add(base)
            return base
        k = 1
        while f"{base}_{k}" in self.used:
            k += 1
        name = f"{base}_{k}"
        self.used.add(name)
        return name


# ---------------------------------------------------------------------------
# Expression / statement rewriting
# ---------------------------------------------------------------------------


def _subst_expr(e: ir.Expr, mapping: dict[str, str]) -> ir.Expr:
    if isinstance(e, ir.VarRef) and e.name in mapping:
        return ir.VarRef(mapping[e.name], span=e.span)
    if isinstance(e, ir.Index):
        return ir.Index(e.name, _subst_expr(e.index, mapping), span=e.span)
    if isinstance(e, ir.Unary):
        return ir.Unary(e.op, _subst_expr(e.operand, mapping), span=e.span)
    if isinstance(e, ir.Binary):
        return ir.Binary(e.op, _subst_expr(e.lhs, mapping),
                         _subst_expr(e.rhs, mapping), span=e.span)
    if isinstance(e, ir.Rnd):
        return ir.Rnd(_subst_expr(e.arg, mapping), span=e.span)
    return e


def _subst_body(body: list[ir.Stmt], mapping: dict[str, str]) -> None:
    """In-place scalar renaming over a statement list."""
    for s in body:
        if isinstance(s, ir.Assign):
            if s.index is None and s.target in mapping:
                s.target = mapping[s.target]
            if s.index is not None:
                s.index = _subst_expr(s.index, mapping)
            s.value = _subst_expr(s.value, mapping)
        elif isinstance(s, ir.If):
            s.cond = _subst_expr(s.cond, mapping)
            _subst_body(s.then, mapping)
            _subst_body(s.orelse, mapping)
        elif isinstance(s, ir.For):
            s.init = _subst_expr(s.init, mapping)
            s.cond = _subst_expr(s.cond, mapping)
            s.step = _subst_expr(s.step, mapping)
            _subst_body(s.body, mapping)
        elif isinstance(s, ir.Decl) and s.decl.init is not None:
            s.decl.init = _subst_expr(s.decl.init, mapping)


# ---------------------------------------------------------------------------
# Strip mining
# ---------------------------------------------------------------------------


def _canonical_bound(loop: ir.For) -> ir.Expr:
    """For `for (i = init; i < bound; i = i + 1)` return bound."""
    step_ok = (isinstance(loop.step, ir.Binary) and loop.step.op == "+"
               and isinstance(loop.step.lhs, ir.VarRef)
               and loop.step.lhs.name == loop.induction
               and loop.step.rhs == ir.IntLit(1))
    cond_ok = (isinstance(loop.cond, ir.Binary) and loop.cond.op == "<"
               and isinstance(loop.cond.lhs, ir.VarRef)
               and loop.cond.lhs.name == loop.induction)
    if not (step_ok and cond_ok):
        raise NonCanonicalLoop(
            "taskloop tls requires a canonical loop: "
            f"for ({loop.induction} = INIT; {loop.induction} < BOUND; "
            f"{loop.induction} = {loop.induction} + 1)", loop.span)
    return loop.cond.rhs


def strip_mine(loop: ir.For, strip_size: int,
               inner_name: str = INNER_NAME) -> ir.For:
    """Split a canonical unit-step loop into strips of `strip_size`.

    The returned outer loop steps by `strip_size` over the original bounds
    and contains a single inner loop running `inner_name` from the strip
    start while it stays below both the bound and the strip limit. The
    original induction variable is replaced by `inner_name` in the body.
    """
    if strip_size < 1:
        raise NonCanonicalLoop("strip size must be >= 1", loop.span)
    bound = _canonical_bound(loop)
    ind = loop.induction
    body = copy.deepcopy(loop.body)
    _subst_body(body, {ind: inner_name})
    inner = ir.For(
        induction=inner_name,
        init=ir.VarRef(ind),
        cond=ir.Binary("&&",
                       ir.Binary("<", ir.VarRef(inner_name), bound),
                       ir.Binary("<",
                                 ir.Binary("-", ir.VarRef(inner_name),
                                           ir.VarRef(ind)),
                                 ir.IntLit(strip_size))),
        step=ir.Binary("+", ir.VarRef(inner_name), ir.IntLit(1)),
        body=body,
        declares_induction=True,
        span=loop.span,
    )
    return ir.For(
        induction=ind,
        init=copy.deepcopy(loop.init),
        cond=copy.deepcopy(loop.cond),
        step=ir.Binary("+", ir.VarRef(ind), ir.IntLit(strip_size)),
        body=[inner],
        declares_induction=loop.declares_induction,
        directive=None,
        span=loop.span,
    )


# ---------------------------------------------------------------------------
# Per-variable rewrites
# ---------------------------------------------------------------------------


def _pragmas_for(body: list[ir.Stmt], var: str) -> list[str]:
    return [s.clause.kind for s in ir.walk_stmts(body)
            if isinstance(s, ir.PragmaTls) and s.clause.target == var]


def _next_real_stmt(block: list[ir.Stmt], i: int) -> Optional[ir.Stmt]:
    for j in range(i + 1, len(block)):
        if not isinstance(block[j], ir.PragmaTls):
            return block[j]
    return None


def _rewrite_scalar_pragmas(block: list[ir.Stmt], var: str,
                            naming: TransformNaming,
                            lazy_enabled: bool) -> list[ir.Stmt]:
    """Replace this scalar's access pragmas with their mechanisms."""
    out: list[ir.Stmt] = []
    for i, s in enumerate(block):
        if isinstance(s, ir.PragmaTls) and s.clause.target == var:
            kind = s.clause.kind
            target = _next_real_stmt(block, i)
            if kind == "if_read" and lazy_enabled:
                flag = naming.read_flag[var]
                copy_name = naming.scalar_copy[var]
                out.append(ir.If(
                    cond=ir.Unary("!", ir.VarRef(flag)),
                    then=[ir.Assign(flag, None, ir.IntLit(1)),
                          ir.Assign(copy_name, None, ir.VarRef(var))]))
            elif kind == "if_write":
                if not (isinstance(target, ir.Assign)
                        and target.index is None
                        and target.target == naming.scalar_copy[var]):
                    raise UnsupportedAccess(
                        f"tls if_write({var}) must precede an assignment to "
                        f"{var}", s.span)
                out.append(ir.Assign(naming.write_flag[var], None,
                                     ir.IntLit(1)))
            # read/write pragmas act at strip entry / copy-back only.
            continue
        if isinstance(s, ir.If):
            s.then = _rewrite_scalar_pragmas(s.then, var, naming, lazy_enabled)
            s.orelse = _rewrite_scalar_pragmas(s.orelse, var, naming,
                                               lazy_enabled)
        elif isinstance(s, ir.For):
            s.body = _rewrite_scalar_pragmas(s.body, var, naming, lazy_enabled)
        out.append(s)
    return out


def _set_flag_after_writes(block: list[ir.Stmt], copy_name: str,
                           flag: str) -> list[ir.Stmt]:
    """Mark the first-read flag satisfied after every write to the private
    copy: once the strip wrote the scalar, a later conditional first read
    must see the strip-local value, not lazily reload the shared one."""
    out: list[ir.Stmt] = []
    for s in block:
        if isinstance(s, ir.If):
            s.then = _set_flag_after_writes(s.then, copy_name, flag)
            s.orelse = _set_flag_after_writes(s.orelse, copy_name, flag)
        elif isinstance(s, ir.For):
            s.body = _set_flag_after_writes(s.body, copy_name, flag)
        out.append(s)
        if isinstance(s, ir.Assign) and s.index is None and \
                s.target == copy_name:
            out.append(ir.Assign(flag, None, ir.IntLit(1)))
    return out


def _drop_pragmas(block: list[ir.Stmt], var: str) -> list[ir.Stmt]:
    out = []
    for s in block:
        if isinstance(s, ir.PragmaTls) and s.clause.target == var:
            continue
        if isinstance(s, ir.If):
            s.then = _drop_pragmas(s.then, var)
            s.orelse = _drop_pragmas(s.orelse, var)
        elif isinstance(s, ir.For):
            s.body = _drop_pragmas(s.body, var)
        out.append(s)
    return out


class _LoopTransformer:
    def __init__(self, program: ir.Program, names: _Names, loop: ir.For,
                 strip_size: Optional[int]):
        self.program = program
        self.names = names
        d = loop.directive
        assert d is not None and d.is_tls
        self.directive = d
        self.strip_size = strip_size if strip_size is not None \
            else d.strip_size
        self.loop = loop
        self.naming = TransformNaming(
            cursor=names.fresh(CURSOR_NAME),
            inner=names.fresh(INNER_NAME),
            spec_flag=names.fresh(SPEC_FLAG_NAME),
        )
        self.decls: list[ir.Stmt] = []
        self.read_inits: list[ir.Stmt] = []
        self.scalar_copybacks: list[ir.Stmt] = []
        self.reductions: list[ReductionInfo] = []
        self.counter_of_for: dict[int, str] = {}
        self.array_ordinal = 0

    # -- scalars -----------------------------------------------------------

    def privatize_scalar(self, inner: ir.For, var: str) -> None:
        clauses = set(_pragmas_for(inner.body, var))
        if not clauses:
            raise MissingAccessClause(
                f"spec_private scalar '{var}' has no tls access clause",
                self.directive.span)
        copy_name = self.names.fresh(var + "L")
        self.naming.scalar_copy[var] = copy_name
        _subst_body(inner.body, {var: copy_name})
        self.decls.append(ir.Decl(ir.VarDecl(copy_name)))

        # An unconditional read subsumes lazy first-read initialization.
        lazy = "if_read" in clauses and "read" not in clauses
        if lazy:
            flag = self.names.fresh(f"flag_r_{var}")
            self.naming.read_flag[var] = flag
            self.decls.append(ir.Decl(ir.VarDecl(flag, init=ir.IntLit(0))))
            inner.body = _set_flag_after_writes(inner.body, copy_name, flag)
        if "if_write" in clauses and "write" not in clauses:
            flag = self.names.fresh(f"flag_w_{var}")
            self.naming.write_flag[var] = flag
            self.decls.append(ir.Decl(ir.VarDecl(flag, init=ir.IntLit(0))))

        inner.body = _rewrite_scalar_pragmas(inner.body, var, self.naming,
                                             lazy)
        if "read" in clauses:
            self.read_inits.append(
                ir.Assign(copy_name, None, ir.VarRef(var)))
        if "write" in clauses:
            self.scalar_copybacks.append(
                ir.Assign(var, None, ir.VarRef(copy_name)))
        elif "if_write" in clauses:
            self.scalar_copybacks.append(ir.If(
                cond=ir.VarRef(self.naming.write_flag[var]),
                then=[ir.Assign(var, None, ir.VarRef(copy_name))]))

    # -- arrays --------------------------------------------------------------

    def _find_array_writes(self, block: list[ir.Stmt], var: str,
                           enclosing: ir.For,
                           out: list[tuple[ir.For, list[ir.Stmt], int]]) -> None:
        for i, s in enumerate(block):
            if isinstance(s, ir.Assign) and s.target == var:
                out.append((enclosing, block, i))
            elif isinstance(s, ir.If):
                self._find_array_writes(s.then, var, enclosing, out)
                self._find_array_writes(s.orelse, var, enclosing, out)
            elif isinstance(s, ir.For):
                self._find_array_writes(s.body, var, s, out)

    def _pragma_kind_before(self, block: list[ir.Stmt], i: int,
                            var: str) -> Optional[str]:
        for j in range(i - 1, -1, -1):
            s = block[j]
            if isinstance(s, ir.PragmaTls):
                if s.clause.target == var:
                    return s.clause.kind
                continue
            break
        return None

    def _counter_for(self, loop: ir.For) -> str:
        key = id(loop)
        if key not in self.counter_of_for:
            name = self.names.fresh(f"count_{len(self.naming.counters) + 1}")
            self.naming.counters.append(name)
            self.counter_of_for[key] = name
            self.decls.append(ir.Decl(ir.VarDecl(
                name, init=ir.Unary("-", ir.IntLit(1)))))
            loop.body.insert(0, ir.Assign(
                name, None, ir.Binary("+", ir.VarRef(name), ir.IntLit(1))))
        return self.counter_of_for[key]

    def _check_index_expr(self, e: ir.Expr, inductions: set[str],
                          span) -> None:
        for node in ir.walk_expr(e):
            if isinstance(node, ir.Index):
                raise UnsupportedAccess(
                    "privatized array index must not read arrays", span)
            if isinstance(node, ir.VarRef) and node.name not in inductions:
                raise UnsupportedAccess(
                    f"privatized array index may only use loop induction "
                    f"variables, found '{node.name}'", span)

    def privatize_array(self, inner: ir.For, var: str) -> None:
        self.array_ordinal += 1
        ordinal = self.array_ordinal

        # Write-only privatization: any read of the array is unsupported.
        for s in ir.walk_stmts(inner.body):
            for e in ir.stmt_exprs(s):
                for node in ir.walk_expr(e):
                    if isinstance(node, (ir.VarRef, ir.Index)) and \
                            node.name == var:
                        raise UnsupportedAccess(
                            f"spec_private array '{var}' is read inside the "
                            "loop; only write privatization is supported",
                            self.directive.span)

        sites: list[tuple[ir.For, list[ir.Stmt], int]] = []
        self._find_array_writes(inner.body, var, inner, sites)
        if not sites:
            raise MissingAccessClause(
                f"spec_private array '{var}' is never written in the loop",
                self.directive.span)
        host = sites[0][0]
        if any(loop is not host for loop, _, _ in sites):
            raise UnsupportedAccess(
                f"all writes to privatized array '{var}' must share one "
                "enclosing for loop", self.directive.span)

        # Creating the counter prepends its increment to the host loop body,
        # so site positions must be collected afterwards.
        counter = self._counter_for(host)
        sites = []
        self._find_array_writes(inner.body, var, inner, sites)
        counter_index = self.naming.counters.index(counter) + 1
        priv = self.names.fresh(f"{var}L_{counter_index}_{ordinal}")
        self.naming.private_array[var] = priv
        self.decls.append(ir.Decl(ir.VarDecl(priv, length=self.strip_size)))

        site_kinds: list[str] = []
        for loop, block, i in sites:
            kind = self._pragma_kind_before(block, i, var)
            if kind is None:
                raise MissingAccessClause(
                    f"write to spec_private array '{var}' lacks a tls "
                    "write/if_write annotation", block[i].span)
            if kind not in ("write", "if_write"):
                raise UnsupportedAccess(
                    f"tls {kind}({var}) cannot annotate an array write",
                    block[i].span)
            site_kinds.append(kind)
        pred: Optional[str] = None
        if "if_write" in site_kinds:
            pred = self.names.fresh(f"pred_{var}_{ordinal}")
            self.naming.pred_array[var] = pred
            # Strip-local arrays are zero-initialized at every attempt.
            self.decls.append(ir.Decl(ir.VarDecl(pred,
                                                 length=self.strip_size)))

        inductions = {inner.induction}
        for s in ir.walk_stmts(inner.body):
            if isinstance(s, ir.For):
                inductions.add(s.induction)

        # Mutate sites back-to-front so collected indices stay valid when a
        # predicate store is inserted before a rewritten write.
        for (loop, block, i), kind in list(zip(sites, site_kinds))[::-1]:
            site = block[i]
            assert isinstance(site, ir.Assign) and site.index is not None
            self._check_index_expr(site.index, inductions, site.span)
            info = ir.CopybackWrite(
                var=var, private_name=priv, index=site.index, kind=kind,
                pred_name=pred if kind == "if_write" else None,
                counter_name=counter)
            rewritten = ir.Assign(priv, ir.VarRef(counter), site.value,
                                  span=site.span, copyback=info)
            block[i] = rewritten
            if kind == "if_write":
                block.insert(i, ir.Assign(pred, ir.VarRef(counter),
                                          ir.IntLit(1)))
        inner.body = _drop_pragmas(inner.body, var)

    # -- reductions ----------------------------------------------------------

    def rewrite_reduction(self, inner: ir.For, var: str, op: str) -> None:
        priv = self.names.fresh(var + "L")
        self.naming.reduction_copy[var] = priv
        identity = ir.REDUCTION_IDENTITY[op]
        init: ir.Expr = ir.IntLit(identity) if identity >= 0 \
            else ir.Unary("-", ir.IntLit(-identity))
        self.decls.append(ir.Decl(ir.VarDecl(priv, init=init)))

        commutative = op != "-"

        def is_var(e: ir.Expr) -> bool:
            return isinstance(e, ir.VarRef) and e.name == var

        def rewrite_stmt(s: ir.Stmt) -> None:
            if isinstance(s, ir.Assign):
                reads_var = var in ir.vars_read(s.value) or (
                    s.index is not None and var in ir.vars_read(s.index))
                if s.index is None and s.target == var:
                    v = s.value
                    if isinstance(v, ir.Binary) and v.op == op and \
                            is_var(v.lhs) and var not in ir.vars_read(v.rhs):
                        s.value = ir.Binary(op, ir.VarRef(priv), v.rhs)
                    elif commutative and isinstance(v, ir.Binary) and \
                            v.op == op and is_var(v.rhs) and \
                            var not in ir.vars_read(v.lhs):
                        s.value = ir.Binary(op, v.lhs, ir.VarRef(priv))
                    else:
                        raise PatternMismatch(
                            f"update of reduction variable '{var}' is not "
                            f"'{var} = {var} {op} expr'", s.span)
                    s.target = priv
                elif reads_var or s.target == var:
                    raise PatternMismatch(
                        f"reduction variable '{var}' used outside its "
                        "reduction pattern", s.span)
            elif isinstance(s, ir.If):
                if var in ir.vars_read(s.cond):
                    raise PatternMismatch(
                        f"reduction variable '{var}' used outside its "
                        "reduction pattern", s.span)
                for t in s.then:
                    rewrite_stmt(t)
                for t in s.orelse:
                    rewrite_stmt(t)
            elif isinstance(s, ir.For):
                for e in (s.init, s.cond, s.step):
                    if var in ir.vars_read(e):
                        raise PatternMismatch(
                            f"reduction variable '{var}' used in loop bounds",
                            s.span)
                for t in s.body:
                    rewrite_stmt(t)
            elif isinstance(s, ir.Decl) and s.decl.init is not None:
                if var in ir.vars_read(s.decl.init):
                    raise PatternMismatch(
                        f"reduction variable '{var}' used outside its "
                        "reduction pattern", s.span)

        for s in inner.body:
            rewrite_stmt(s)

        # Merging with `-` must invert: the local accumulated a negated sum.
        merge_op = "+" if op == "-" else op
        self.reductions.append(ReductionInfo(var, op, priv,
                                             ir.REDUCTION_IDENTITY[op],
                                             merge_op))

    # -- whole loop ------------------------------------------------------------

    def run(self) -> tuple[ir.For, LoopInfo, ir.Intrinsic]:
        d = self.directive
        loop = self.loop
        bound_vars = (ir.vars_read(loop.init) | ir.vars_read(loop.cond)) \
            - {loop.induction}
        for name in bound_vars:
            decl = next((g for g in self.program.globals if g.name == name),
                        None)
            if decl is None and name not in d.firstprivate:
                # locals in bounds would escape the strip frame
                raise NonCanonicalLoop(
                    f"loop bound variable '{name}' must be a global or "
                    "firstprivate", loop.span)

        outer = strip_mine(loop, self.strip_size, self.naming.inner)
        inner = outer.body[0]
        assert isinstance(inner, ir.For)

        shared = list(d.shared)
        for name in list(d.spec_private) + (
                list(d.spec_reduction.names) if d.spec_reduction else []):
            if name not in shared:
                shared.append(name)
        outer.directive = ir.TaskloopDirective(
            strip_size=None, grainsize=1, spec_private=(),
            spec_reduction=None, firstprivate=d.firstprivate,
            shared=tuple(shared), span=d.span)

        for var in d.spec_private:
            decl = next((g for g in self.program.globals if g.name == var),
                        None)
            if decl is None:
                raise UnsupportedTarget(
                    f"spec_private target '{var}' must be a declared global",
                    d.span)
            if decl.is_array:
                self.privatize_array(inner, var)
            else:
                self.privatize_scalar(inner, var)

        copyback_nest: list[ir.Stmt] = []
        if self.array_ordinal:
            events = ir.collect_copyback_events(inner)
            for counter in self.naming.counters:
                copyback_nest.append(ir.Assign(
                    counter, None, ir.Unary("-", ir.IntLit(1))))
            copyback_nest.extend(emit_copyback(events))

        if d.spec_reduction:
            for var in d.spec_reduction.names:
                self.rewrite_reduction(inner, var, d.spec_reduction.op)
        merges = [ir.Assign(r.var, None,
                            ir.Binary(r.merge_op, ir.VarRef(r.var),
                                      ir.VarRef(r.private)))
                  for r in self.reductions]

        begin = ir.Intrinsic("begin", cursor=self.naming.cursor,
                             result=self.naming.spec_flag,
                             ivar=outer.induction)
        end = ir.Intrinsic("end", cursor=self.naming.cursor,
                           result=self.naming.spec_flag,
                           ivar=outer.induction)
        advance = ir.Intrinsic("cursor_advance", cursor=self.naming.cursor,
                               amount=self.strip_size)
        outer.body = (
            self.decls
            + [ir.Decl(ir.VarDecl(self.naming.spec_flag)), begin]
            + self.read_inits
            + [inner, end]
            + self.scalar_copybacks
            + copyback_nest
            + merges
            + [advance]
        )

        cursor_init = ir.Intrinsic("cursor_init", cursor=self.naming.cursor,
                                   init=copy.deepcopy(loop.init))
        info = LoopInfo(
            outer=outer, inner=inner, cursor=self.naming.cursor,
            strip_size=self.strip_size, spec_flag=self.naming.spec_flag,
            firstprivate=d.firstprivate, naming=self.naming,
            reductions=self.reductions,
            privatized_arrays=tuple(self.naming.private_array),
        )
        return outer, info, cursor_init


def emit_copyback(events: list[ir.CopybackEvent]) -> list[ir.Stmt]:
    """Reconstruct the copy-back for-nest from an event list.

    Stack discipline: a `for` event opens a clone of the loop with its
    counter increment prepended; `end_for` closes it, nesting into the
    enclosing clone or emitting it at top level; a `write` event appends the
    copy-back assignment (predicate-guarded for if_write) to the open loop.
    """
    if not ir.check_event_balance(events):
        raise TransformError("unbalanced copy-back event list")
    stack: list[ir.For] = []
    counters: list[Optional[str]] = []
    out: list[ir.Stmt] = []
    for ev in events:
        if ev.kind == "for":
            body: list[ir.Stmt] = []
            if ev.counter_name:
                body.append(ir.Assign(
                    ev.counter_name, None,
                    ir.Binary("+", ir.VarRef(ev.counter_name), ir.IntLit(1))))
            clone = ir.For(ev.induction, copy.deepcopy(ev.init),
                           copy.deepcopy(ev.cond), copy.deepcopy(ev.step),
                           body, declares_induction=ev.declares_induction)
            stack.append(clone)
            counters.append(ev.counter_name)
        elif ev.kind == "end_for":
            closed = stack.pop()
            counters.pop()
            if stack:
                stack[-1].body.append(closed)
            else:
                out.append(closed)
        else:
            w = ev.write
            assert w is not None
            counter = counters[-1] or w.counter_name
            copy_stmt: ir.Stmt = ir.Assign(
                w.var, copy.deepcopy(w.index),
                ir.Index(w.private_name, ir.VarRef(counter)))
            if w.kind == "if_write":
                assert w.pred_name is not None
                copy_stmt = ir.If(
                    cond=ir.Index(w.pred_name, ir.VarRef(counter)),
                    then=[copy_stmt])
            stack[-1].body.append(copy_stmt)
    return out


def strip_privatization(program: ir.Program) -> ir.Program:
    """Copy of the program with privatization dropped: spec_private and
    spec_reduction clauses removed and access pragmas deleted, so every
    shared access runs through the transactional memory. Used to measure
    how many conflict aborts privatization eliminates."""
    program = copy.deepcopy(program)

    def scrub(block: list[ir.Stmt]) -> list[ir.Stmt]:
        out: list[ir.Stmt] = []
        for s in block:
            if isinstance(s, ir.PragmaTls):
                continue
            for body in ir.stmt_blocks(s):
                body[:] = scrub(body)
            if isinstance(s, ir.For) and s.directive is not None \
                    and s.directive.is_tls:
                s.directive.spec_private = ()
                s.directive.spec_reduction = None
            out.append(s)
        return out

    program.body = scrub(program.body)
    return program


def apply_taskloop_tls(program: ir.Program,
                       strip_size: Optional[int] = None) -> TransformedProgram:
    """Transform every taskloop tls loop of a validated program.

    `strip_size` overrides the directive's strip size when given.
    """
    report = ir.validate(program)
    if not report.ok:
        raise TransformError(
            "program does not validate: " + "; ".join(
                str(v) for v in report.violations[:5]))

    original = program
    program = copy.deepcopy(program)
    names = _Names(program)
    loops: list[LoopInfo] = []

    def transform_block(block: list[ir.Stmt]) -> list[ir.Stmt]:
        out: list[ir.Stmt] = []
        for s in block:
            if isinstance(s, ir.For) and s.directive is not None \
                    and s.directive.is_tls:
                t = _LoopTransformer(program, names, s, strip_size)
                outer, info, cursor_init = t.run()
                program.globals.append(ir.VarDecl(t.naming.cursor))
                out.append(cursor_init)
                out.append(outer)
                loops.append(info)
            else:
                for body in ir.stmt_blocks(s):
                    body[:] = transform_block(body)
                out.append(s)
        return out

    program.body = transform_block(program.body)
    if not loops:
        raise TransformError("program contains no taskloop tls loop")
    return TransformedProgram(program=program, original=original, loops=loops)


def render(tp: TransformedProgram) -> str:
    """Deterministic text of the transformed program."""
    return ir.render(tp.program)
