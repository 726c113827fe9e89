"""Cross-iteration sink/source baseline (DOACROSS-style execution).

Iterations of the ordered loop are distributed cyclically over the workers;
each worker runs its iterations in increasing order. An iteration hitting a
sink mark blocks until its predecessor at the given distance has passed the
source mark. Execution is virtual-time deterministic like the speculative
engine; a schedule where no worker can advance while iterations remain is
reported as a deadlock (a malformed sink/source pattern).
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

from . import lower as lw
from .engine_py import _bounds_check, _interp, run_segment
from .source import DeadlockDetected


@dataclass
class IterationTrace:
    iteration: int
    worker: int
    begin_tick: int
    sink_tick: int = -1    # tick the sink was passed
    source_tick: int = -1  # tick the source was posted
    end_tick: int = -1


@dataclass
class OrderedResult:
    mem: object
    iterations: int
    wall_time: float
    trace: list[IterationTrace] = field(default_factory=list)


class _OrdWorker:
    __slots__ = ("wid", "todo", "pos", "frame", "pc", "running", "waiting",
                 "cur_trace")

    def __init__(self, wid: int, frame_size: int):
        self.wid = wid
        self.todo: list[int] = []   # iteration numbers, ascending
        self.pos = 0
        self.frame = [0] * frame_size
        self.pc = 0
        self.running = False
        self.waiting: int | None = None  # iteration we need the source of
        self.cur_trace: IterationTrace | None = None


class OrderedEngine:
    def __init__(self, lowered: lw.Lowered, n_workers: int, seed: int,
                 collect_trace: bool = False):
        if n_workers < 1:
            raise ValueError("need at least one worker")
        self.lw = lowered
        self.n_workers = n_workers
        self.seed = seed
        self.collect_trace = collect_trace
        self.mem = copy.deepcopy(lowered.mem_template)
        self.workers = [_OrdWorker(i, lowered.frame_size)
                        for i in range(n_workers)]
        self.done_source: set[int] = set()
        self.finished: set[int] = set()
        self.ini = 0
        self.tick = 0
        self.iterations: list[int] = []
        self.trace: list[IterationTrace] = []

    def prepare(self) -> None:
        frame = [0] * self.lw.frame_size
        run_segment(self.lw, self.mem.cells, frame, self.lw.pre_pc, self.seed)
        frame = [0] * self.lw.frame_size
        run_segment(self.lw, self.mem.cells, frame, self.lw.loop_init_pc,
                    self.seed)
        self.ini = frame[self.lw.expr_slot]
        frame = [0] * self.lw.frame_size
        run_segment(self.lw, self.mem.cells, frame, self.lw.loop_bound_pc,
                    self.seed)
        bound = frame[self.lw.expr_slot]
        self.iterations = list(range(self.ini, bound))
        for k, it in enumerate(self.iterations):
            self.workers[k % self.n_workers].todo.append(it)

    def _sink_ready(self, w: _OrdWorker) -> bool:
        assert w.waiting is not None
        return w.waiting < self.ini or w.waiting in self.done_source

    def runnable(self, w: _OrdWorker) -> bool:
        if w.running:
            return w.waiting is None or self._sink_ready(w)
        return w.pos < len(w.todo)

    def done(self) -> bool:
        return len(self.finished) >= len(self.iterations)

    def _begin_iteration(self, w: _OrdWorker) -> None:
        it = w.todo[w.pos]
        for i in range(len(w.frame)):
            w.frame[i] = 0
        w.frame[self.lw.ord_i_slot] = it
        w.pc = self.lw.iter_pc
        w.running = True
        w.waiting = None
        if self.collect_trace:
            w.cur_trace = IterationTrace(it, w.wid, begin_tick=self.tick)

    def step_worker(self, wid: int) -> None:
        self.tick += 1
        w = self.workers[wid]
        if not w.running:
            self._begin_iteration(w)
        it = w.todo[w.pos]
        if w.waiting is not None:
            w.waiting = None  # the sink re-executes and passes below
        cells = self.mem.cells
        lowered = self.lw

        def load(var: int, idx: int, span_id: int) -> int:
            return cells[_bounds_check(lowered, var, idx, span_id)]

        def store(var: int, idx: int, val: int, span_id: int) -> None:
            cells[_bounds_check(lowered, var, idx, span_id)] = val

        while True:
            op, pc, operand = _interp(lowered.py_code(),
                                      lowered.py_consts(), lowered.spans,
                                      w.frame, w.pc, self.seed, load, store)
            w.pc = pc
            if op == lw.SINK:
                dep = it - operand
                if dep < self.ini or dep in self.done_source:
                    if w.cur_trace:
                        w.cur_trace.sink_tick = self.tick
                    return
                w.waiting = dep
                w.pc = pc - 1  # re-execute the sink once runnable
                return
            if op == lw.SOURCE:
                self.done_source.add(it)
                if w.cur_trace:
                    w.cur_trace.source_tick = self.tick
                return
            if op == lw.YIELD:
                return
            if op == lw.RET:
                self.finished.add(it)
                w.running = False
                w.pos += 1
                if w.cur_trace:
                    w.cur_trace.end_tick = self.tick
                    self.trace.append(w.cur_trace)
                    w.cur_trace = None
                return
            raise AssertionError(f"unexpected opcode {op} in ordered body")

    def run(self) -> None:
        self.prepare()
        rr = self.n_workers - 1
        while not self.done():
            wid = -1
            for d in range(1, self.n_workers + 1):
                cand = (rr + d) % self.n_workers
                if self.runnable(self.workers[cand]):
                    wid = cand
                    break
            if wid < 0:
                raise DeadlockDetected(
                    "all workers blocked at a sink; a matching "
                    "source is never posted")
            rr = wid
            self.step_worker(wid)
        frame = [0] * self.lw.frame_size
        run_segment(self.lw, self.mem.cells, frame, self.lw.post_pc,
                    self.seed)


def run_ordered(lowered: lw.Lowered, n_workers: int, seed: int,
                collect_trace: bool = False) -> OrderedResult:
    t0 = time.perf_counter()
    eng = OrderedEngine(lowered, n_workers, seed, collect_trace=collect_trace)
    eng.run()
    return OrderedResult(eng.mem, len(eng.iterations),
                         time.perf_counter() - t0, eng.trace)
