"""Pure-Python execution engine: serial interpreter and speculative runtime.

The speculative runtime executes one transformed program on N logical
workers under a deterministic virtual-time scheduler: at every tick exactly
one runnable worker advances to its next scheduling point (transaction
begin, one inner-loop iteration, transaction end, or task retirement).
Determinism makes abort counts reproducible for a given seed and lets tests
enumerate worker interleavings exhaustively.

Protocol (the compiled core in _speccore.pyx implements the same rules and
must match this engine's reports bit for bit):

  * Workers pull strip tasks from a shared queue pre-ordered by the
    scheduling policy. An idle worker first resumes a parked task whose
    turn has arrived, else pulls from the queue.
  * BEGIN reads the commit cursor directly: if the strip is next to commit
    the attempt runs non-speculatively straight on memory, otherwise a
    transaction starts and buffers all shared accesses.
  * END on a speculative attempt checks the cursor first: not our turn is
    an explicit OrderInversion abort; our turn validates and commits, a
    failed validation is a Conflict abort.
  * Every abort parks the task on its worker; a parked task becomes
    runnable when the cursor reaches its strip, and its retry then runs
    non-speculatively, which guarantees progress for every schedule.
  * After a successful END the task runs its copy-back and reduction-merge
    statements non-speculatively and advances the cursor by the strip size.
  * Faults (division by zero, out-of-bounds) inside a speculative attempt
    abort it like a transient hardware event (reason Other); outside
    speculation they are real errors and raise.
"""

from __future__ import annotations

import copy
import time
from typing import Callable, Optional

import numpy as np

from . import lower as lw
from .htm import (AbortReason, AbortSignal, Htm, HtmConfig, MemoryImage,
                  TxStatus)
from .i64 import (MASK64, other_abort_draw, rnd_value, shift_left,
                  shift_right, trunc_div, trunc_mod, wrap64)
from .source import SteRuntimeError

IDLE = 0
RUNNING = 1

OUTCOME_NONSPEC = "nonspec"
OUTCOME_COMMIT = "commit"


def _mk_interp():
    # Bind opcode constants locally for dispatch speed.
    ops = lw
    def interp(code, consts, spans, frame, pc, seed,
               load_g: Callable[[int, int, int], int],
               store_g: Callable[[int, int, int, int], None]):
        """Run until an event opcode; returns (op, pc_after, operand)."""
        while True:
            row = code[pc]
            op = row[0]
            if op == ops.LOADK:
                frame[row[1]] = consts[row[2]]
            elif op == ops.MOV:
                frame[row[1]] = frame[row[2]]
            elif op == ops.ADD:
                frame[row[1]] = wrap64(frame[row[2]] + frame[row[3]])
            elif op == ops.SUB:
                frame[row[1]] = wrap64(frame[row[2]] - frame[row[3]])
            elif op == ops.MUL:
                frame[row[1]] = wrap64(frame[row[2]] * frame[row[3]])
            elif op == ops.DIV:
                b = frame[row[3]]
                if b == 0:
                    raise SteRuntimeError("division by zero",
                                          spans[row[4]])
                frame[row[1]] = trunc_div(frame[row[2]], b)
            elif op == ops.MOD:
                b = frame[row[3]]
                if b == 0:
                    raise SteRuntimeError("division by zero",
                                          spans[row[4]])
                frame[row[1]] = trunc_mod(frame[row[2]], b)
            elif op == ops.EQ:
                frame[row[1]] = int(frame[row[2]] == frame[row[3]])
            elif op == ops.NE:
                frame[row[1]] = int(frame[row[2]] != frame[row[3]])
            elif op == ops.LT:
                frame[row[1]] = int(frame[row[2]] < frame[row[3]])
            elif op == ops.LE:
                frame[row[1]] = int(frame[row[2]] <= frame[row[3]])
            elif op == ops.GT:
                frame[row[1]] = int(frame[row[2]] > frame[row[3]])
            elif op == ops.GE:
                frame[row[1]] = int(frame[row[2]] >= frame[row[3]])
            elif op == ops.NOTL:
                frame[row[1]] = int(frame[row[2]] == 0)
            elif op == ops.BOOLV:
                frame[row[1]] = int(frame[row[2]] != 0)
            elif op == ops.BAND:
                frame[row[1]] = wrap64(frame[row[2]] & frame[row[3]])
            elif op == ops.BOR:
                frame[row[1]] = wrap64(frame[row[2]] | frame[row[3]])
            elif op == ops.BXOR:
                frame[row[1]] = wrap64(frame[row[2]] ^ frame[row[3]])
            elif op == ops.SHL:
                frame[row[1]] = shift_left(frame[row[2]], frame[row[3]])
            elif op == ops.SHR:
                frame[row[1]] = shift_right(frame[row[2]], frame[row[3]])
            elif op == ops.NEG:
                frame[row[1]] = wrap64(-frame[row[2]])
            elif op == ops.RND:
                frame[row[1]] = rnd_value(seed, frame[row[2]])
            elif op == ops.JMP:
                pc = row[1]
                continue
            elif op == ops.JZ:
                if frame[row[1]] == 0:
                    pc = row[2]
                    continue
            elif op == ops.JNZ:
                if frame[row[1]] != 0:
                    pc = row[2]
                    continue
            elif op == ops.GLOAD:
                idx = frame[row[3]] if row[3] >= 0 else 0
                frame[row[1]] = load_g(row[2], idx, row[4])
            elif op == ops.GSTORE:
                idx = frame[row[2]] if row[2] >= 0 else 0
                store_g(row[1], idx, frame[row[3]], row[4])
            elif op == ops.FLOAD:
                idx = frame[row[3]]
                if not 0 <= idx < row[4]:
                    raise SteRuntimeError(
                        f"local index {idx} out of range 0..{row[4] - 1}",
                        spans[row[5]])
                frame[row[1]] = frame[row[2] + idx]
            elif op == ops.FSTORE:
                idx = frame[row[2]]
                if not 0 <= idx < row[4]:
                    raise SteRuntimeError(
                        f"local index {idx} out of range 0..{row[4] - 1}",
                        spans[row[5]])
                frame[row[1] + idx] = frame[row[3]]
            elif op == ops.FZERO:
                base = row[1]
                frame[base:base + row[2]] = [0] * row[2]
            else:
                # Event opcodes end the dispatch burst.
                return op, pc + 1, row[1]
            pc += 1
    return interp


_interp = _mk_interp()


def _bounds_check(lowered: lw.Lowered, var: int, idx: int, span_id: int) -> int:
    length = int(lowered.var_len[var])
    if not 0 <= idx < length:
        raise SteRuntimeError(
            f"index {idx} out of range 0..{length - 1}",
            lowered.spans[span_id])
    return int(lowered.var_base[var]) + idx


def run_segment(lowered: lw.Lowered, cells: list[int], frame: list[int],
                pc: int, seed: int) -> None:
    """Direct-mode execution of one segment until RET (serial contexts)."""

    def load(var: int, idx: int, span_id: int) -> int:
        return cells[_bounds_check(lowered, var, idx, span_id)]

    def store(var: int, idx: int, val: int, span_id: int) -> None:
        cells[_bounds_check(lowered, var, idx, span_id)] = val

    while True:
        op, pc, _ = _interp(lowered.py_code(), lowered.py_consts(),
                            lowered.spans, frame, pc, seed, load, store)
        if op == lw.RET:
            return
        # YIELD / SINK / SOURCE carry no meaning serially; BEGIN/END/ADVANCE
        # never appear in serially lowered code.
        if op in (lw.BEGIN, lw.END, lw.ADVANCE):
            raise AssertionError("protocol opcode in serial segment")


def interpret_serial(lowered: lw.Lowered, seed: int) -> MemoryImage:
    """Run the main segment of a serially lowered program."""
    mem = copy.deepcopy(lowered.mem_template)
    frame = [0] * lowered.frame_size
    run_segment(lowered, mem.cells, frame, lowered.main_pc, seed)
    return mem


class _Worker:
    __slots__ = ("wid", "state", "strip", "attempt", "frame", "pc",
                 "in_body", "speculative", "tx", "iter_no", "parked",
                 "begin_tick")

    def __init__(self, wid: int, frame_size: int):
        self.wid = wid
        self.state = IDLE
        self.strip: Optional[int] = None
        self.attempt = 0
        self.frame = [0] * frame_size
        self.pc = 0
        self.in_body = False
        self.speculative = False
        self.tx = None
        self.iter_no = 0
        self.parked: dict[int, int] = {}  # strip start -> strip index
        self.begin_tick = 0


class SpeculativeEngine:
    """Deterministic virtual-time speculative executor (reference core)."""

    def __init__(self, lowered: lw.Lowered, n_workers: int,
                 order_fn: Callable[[int], np.ndarray], config: HtmConfig,
                 seed: int, collect_trace: bool = False,
                 keep_log: bool = False):
        if n_workers < 1:
            raise ValueError("need at least one worker")
        self.lw = lowered
        self.n_workers = n_workers
        self.order_fn = order_fn
        self.order: list[int] = []
        self.config = config
        self.seed = seed
        self.collect_trace = collect_trace
        self.mem = copy.deepcopy(lowered.mem_template)
        self.htm = Htm(self.mem, config, keep_log=keep_log)
        self.htm.excluded_granules.add(
            self.mem.granule_of(lowered.cursor_addr))
        self.other_threshold = int(config.other_abort_prob * 2.0**64)
        self.workers = [_Worker(i, lowered.frame_size)
                        for i in range(n_workers)]
        self.starts: list[int] = []
        self.qhead = 0
        self.strips_done = 0
        self.tick = 0
        self.rr = n_workers - 1
        self.attempts: list[int] = []
        self.aborts = {r: 0 for r in AbortReason}
        self.nonspec = 0
        self.trace: list[tuple] = []
        self._prepared = False

    # -- setup ----------------------------------------------------------------

    def _eval_expr_segment(self, pc: int) -> int:
        frame = [0] * self.lw.frame_size
        run_segment(self.lw, self.mem.cells, frame, pc, self.seed)
        return frame[self.lw.expr_slot]

    def prepare(self) -> None:
        frame = [0] * self.lw.frame_size
        run_segment(self.lw, self.mem.cells, frame, self.lw.pre_pc, self.seed)
        ini = self._eval_expr_segment(self.lw.loop_init_pc)
        bound = self._eval_expr_segment(self.lw.loop_bound_pc)
        start = ini
        while start < bound:
            self.starts.append(start)
            start += self.lw.strip_size
        self.attempts = [0] * len(self.starts)
        self.order = [int(x) for x in self.order_fn(len(self.starts))]
        if sorted(self.order) != list(range(len(self.starts))):
            raise ValueError("dispatch order must be a permutation of strips")
        self._prepared = True

    # -- scheduling ----------------------------------------------------------

    def cursor_value(self) -> int:
        return self.mem.cells[self.lw.cursor_addr]

    def runnable(self, w: _Worker) -> bool:
        if w.state == RUNNING:
            return True
        return self.cursor_value() in w.parked or self.qhead < len(self.starts)

    def runnable_workers(self) -> list[int]:
        return [w.wid for w in self.workers if self.runnable(w)]

    def done(self) -> bool:
        return self.strips_done >= len(self.starts)

    def step_worker(self, wid: int) -> None:
        self.tick += 1
        self.rr = wid
        w = self.workers[wid]
        if w.state == IDLE:
            self._acquire(w)
        self._run(w)

    def run(self) -> None:
        self.prepare()
        n = self.n_workers
        while not self.done():
            wid = -1
            for d in range(1, n + 1):
                cand = (self.rr + d) % n
                if self.runnable(self.workers[cand]):
                    wid = cand
                    break
            if wid < 0:
                raise AssertionError("no runnable worker but strips remain")
            self.step_worker(wid)
        self.finish()

    def finish(self) -> None:
        frame = [0] * self.lw.frame_size
        run_segment(self.lw, self.mem.cells, frame, self.lw.post_pc,
                    self.seed)

    # -- protocol ------------------------------------------------------------

    def _acquire(self, w: _Worker) -> None:
        cur = self.cursor_value()
        if cur in w.parked:
            strip = w.parked.pop(cur)
        else:
            strip = self.order[self.qhead]
            self.qhead += 1
        w.strip = strip
        self.attempts[strip] += 1
        w.attempt = self.attempts[strip]
        frame = w.frame
        for i in range(len(frame)):
            frame[i] = 0
        frame[self.lw.i_slot] = self.starts[strip]
        w.pc = self.lw.strip_pc
        w.in_body = False
        w.speculative = False
        w.tx = None
        w.iter_no = 0
        w.state = RUNNING

    def ste_begin(self, w: _Worker) -> None:
        """BEGIN: next-to-commit strips run non-speculatively, the rest
        open a transaction."""
        start = self.starts[w.strip]
        if self.cursor_value() == start:
            w.speculative = False
            w.tx = None
        else:
            w.speculative = True
            w.tx = self.htm.begin(w.wid, start, speculative=True)
        w.frame[self.lw.spec_flag_slot] = 1 if w.speculative else 0
        w.in_body = True
        w.begin_tick = self.tick

    def ste_end(self, w: _Worker) -> Optional[AbortReason]:
        """END: explicit order check, then commit-time validation."""
        w.in_body = False
        if not w.speculative:
            return None
        start = self.starts[w.strip]
        if self.cursor_value() != start:
            self.htm.abort_explicit(w.tx, AbortReason.ORDER_INVERSION)
            return AbortReason.ORDER_INVERSION
        status = self.htm.commit(w.tx)
        if status is not TxStatus.COMMITTED:
            return AbortReason.CONFLICT
        w.tx = None
        return None

    def _do_abort(self, w: _Worker, reason: AbortReason,
                  tx_dead: bool = False) -> None:
        if w.tx is not None and not tx_dead:
            self.htm.abort_explicit(w.tx, reason)
        self.aborts[reason] += 1
        if self.collect_trace:
            self.trace.append((self.starts[w.strip], w.wid, w.attempt,
                               reason.value, w.begin_tick, self.tick))
        w.parked[self.starts[w.strip]] = w.strip
        w.state = IDLE
        w.strip = None
        w.tx = None
        w.in_body = False

    def _retire(self, w: _Worker) -> None:
        self.strips_done += 1
        if not w.speculative:
            self.nonspec += 1
        if self.collect_trace:
            outcome = OUTCOME_NONSPEC if not w.speculative else OUTCOME_COMMIT
            self.trace.append((self.starts[w.strip], w.wid, w.attempt,
                               outcome, w.begin_tick, self.tick))
        w.state = IDLE
        w.strip = None
        w.tx = None

    def _run(self, w: _Worker) -> None:
        lowered = self.lw
        cells = self.mem.cells

        def load(var: int, idx: int, span_id: int) -> int:
            addr = _bounds_check(lowered, var, idx, span_id)
            if w.in_body and w.speculative:
                return self.htm.read(w.tx, addr)
            return cells[addr]

        def store(var: int, idx: int, val: int, span_id: int) -> None:
            addr = _bounds_check(lowered, var, idx, span_id)
            if w.in_body and w.speculative:
                self.htm.write(w.tx, addr, val)
            else:
                self.htm.direct_write(addr, val)

        while True:
            try:
                op, pc, _ = _interp(lowered.py_code(), lowered.py_consts(),
                                    lowered.spans, w.frame, w.pc, self.seed,
                                    load, store)
            except AbortSignal as sig:
                self._do_abort(w, sig.reason, tx_dead=True)
                return
            except SteRuntimeError:
                if w.in_body and w.speculative:
                    # A fault inside a transaction rolls it back like any
                    # other transient hardware abort.
                    self._do_abort(w, AbortReason.OTHER)
                    return
                raise
            w.pc = pc

            if op == lw.BEGIN:
                self.ste_begin(w)
                return
            if op == lw.YIELD:
                w.iter_no += 1
                if w.speculative and self.other_threshold:
                    draw = other_abort_draw(self.seed, w.strip, w.attempt,
                                            w.iter_no)
                    if draw < self.other_threshold:
                        self._do_abort(w, AbortReason.OTHER)
                return
            if op == lw.END:
                reason = self.ste_end(w)
                if reason is not None:
                    self._do_abort(w, reason, tx_dead=True)
                    return
                continue  # copy-back and cursor advance run in this step
            if op == lw.ADVANCE:
                self.htm.direct_write(
                    lowered.cursor_addr,
                    cells[lowered.cursor_addr] + lowered.strip_size)
                continue
            if op == lw.RET:
                self._retire(w)
                return
            raise AssertionError(f"unexpected event opcode {op}")

    # -- results ------------------------------------------------------------

    def counters(self) -> dict:
        return {
            "commits": self.strips_done,
            "aborts": {r.value: self.aborts[r] for r in AbortReason},
            "retries": [a - 1 for a in self.attempts],
            "nonspec": self.nonspec,
        }


def run_speculative(lowered: lw.Lowered, n_workers: int,
                    order_fn: Callable[[int], np.ndarray], config: HtmConfig,
                    seed: int, collect_trace: bool = False,
                    keep_log: bool = False) -> tuple[SpeculativeEngine, float]:
    t0 = time.perf_counter()
    eng = SpeculativeEngine(lowered, n_workers, order_fn, config, seed,
                            collect_trace=collect_trace, keep_log=keep_log)
    eng.run()
    return eng, time.perf_counter() - t0
