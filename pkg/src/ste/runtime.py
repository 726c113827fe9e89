"""Public execution API: serial oracle, speculative runs, ordered baseline.

All randomness derives from one master seed: the rnd() intrinsic stream,
the injected-abort stream, and the random scheduling permutations (which
additionally mix in the policy's own seed, so `rand:1` and `rand:2` differ
under the same master seed). Reports are reproducible bit for bit.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import core, engine_py, frontend, ir, lower, ordered
from .htm import HtmConfig, MemoryImage
from .i64 import STREAM_SCHED, mix64
from .source import ConfigError, SteRuntimeError
from .transform import TransformedProgram, apply_taskloop_tls

ABORT_KEYS = ("conflict", "capacity", "order_inversion", "other")


@dataclass
class SchedulePolicy:
    """Task dispatch order: monotonic, seeded random, or LIFO."""

    kind: str  # "mono" | "rand" | "lifo"
    seed: int = 0

    @staticmethod
    def parse(text: str) -> "SchedulePolicy":
        if text == "mono":
            return SchedulePolicy("mono")
        if text == "lifo":
            return SchedulePolicy("lifo")
        if text.startswith("rand:"):
            try:
                return SchedulePolicy("rand", int(text.split(":", 1)[1]))
            except ValueError:
                pass
        raise ConfigError(
            f"bad schedule {text!r}; expected mono, lifo, or rand:<seed>")

    @property
    def label(self) -> str:
        return f"rand:{self.seed}" if self.kind == "rand" else self.kind


def make_order(policy: SchedulePolicy, n_strips: int,
               master_seed: int) -> np.ndarray:
    """Deterministic dispatch permutation of the strip indices.

    Random orders use numpy's legacy RandomState (stream-stable across
    numpy versions) seeded from mix64(master ^ sched-stream ^ policy seed).
    """
    if policy.kind == "mono":
        return np.arange(n_strips, dtype=np.int64)
    if policy.kind == "lifo":
        # Strips are pushed in increasing order and popped from the top.
        return np.arange(n_strips - 1, -1, -1, dtype=np.int64)
    derived = mix64(master_seed ^ STREAM_SCHED ^ policy.seed) & 0x7FFFFFFF
    rng = np.random.RandomState(derived)
    return rng.permutation(n_strips).astype(np.int64)


@dataclass
class SerialResult:
    memory: MemoryImage
    digest: str
    wall_time: float


@dataclass
class RunReport:
    """Outcome of one speculative (or ordered) run."""

    commits: int
    aborts: dict[str, int]
    retries: list[int]
    nonspec: int
    digest: str
    wall_time: float
    engine: str
    threads: int
    sched: str
    strip: int
    seed: int
    kernel: Optional[str] = None
    trace: Optional[list] = None
    memory: Optional[MemoryImage] = field(default=None, repr=False)

    @property
    def retries_max(self) -> int:
        return max(self.retries, default=0)

    @property
    def total_aborts(self) -> int:
        return sum(self.aborts.values())

    def to_json_dict(self) -> dict:
        out = {
            "commits": self.commits,
            "aborts": {k: self.aborts[k] for k in ABORT_KEYS},
            "retries": self.retries,
            "nonspec": self.nonspec,
            "digest": self.digest,
            "wall_time": self.wall_time,
            "engine": self.engine,
            "threads": self.threads,
            "sched": self.sched,
            "strip": self.strip,
            "seed": self.seed,
        }
        if self.kernel is not None:
            out["kernel"] = self.kernel
        return out


def _digest_np_cells(template: MemoryImage, cells: np.ndarray,
                     names: Optional[list[str]] = None) -> str:
    mem = copy.deepcopy(template)
    mem.cells = [int(x) for x in cells]
    return mem.digest(names)


def _wrap_core_error(lowered: lower.Lowered, err: Exception) -> SteRuntimeError:
    span_id, message = err.args
    return SteRuntimeError(message, lowered.spans[span_id])


def interpret_serial(program: ir.Program, seed: int = 1,
                     engine: str = "auto",
                     granule_bytes: int = 64) -> SerialResult:
    """Deterministic serial execution with pragmas ignored; the oracle every
    speculative run is compared against."""
    chosen = core.resolve_engine(engine)
    lowered = lower.lower_serial(program, granule_bytes)
    t0 = time.perf_counter()
    if chosen == "pure":
        mem = engine_py.interpret_serial(lowered, seed)
    else:
        mem = copy.deepcopy(lowered.mem_template)
        cells = np.array(mem.cells, dtype=np.int64)
        frame = np.zeros(lowered.frame_size, dtype=np.int64)
        try:
            core._speccore.seg_run(lowered.code, lowered.consts, cells,
                                   lowered.var_base, lowered.var_len,
                                   frame, lowered.main_pc, seed)
        except core._speccore.CoreRuntimeError as err:
            raise _wrap_core_error(lowered, err) from None
        mem.cells = [int(x) for x in cells]
    return SerialResult(mem, mem.digest(), time.perf_counter() - t0)


def _as_transformed(source: Union[ir.Program, TransformedProgram],
                    strip: Optional[int]) -> TransformedProgram:
    if isinstance(source, TransformedProgram):
        if strip is not None and strip != source.loop.strip_size:
            return apply_taskloop_tls(source.original, strip_size=strip)
        return source
    return apply_taskloop_tls(source, strip_size=strip)


def run_taskloop_tls(source: Union[ir.Program, TransformedProgram],
                     threads: int = 4,
                     sched: Union[str, SchedulePolicy] = "mono",
                     strip: Optional[int] = None,
                     htm_config: Optional[HtmConfig] = None,
                     seed: int = 1,
                     engine: str = "auto",
                     collect_trace: bool = False,
                     keep_log: bool = False) -> RunReport:
    """Execute the program's taskloop tls loop speculatively.

    The final memory equals serial interpretation of the original program
    for every thread count, policy and strip size; that is the soundness
    contract the acceptance suite sweeps.
    """
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    policy = sched if isinstance(sched, SchedulePolicy) \
        else SchedulePolicy.parse(sched)
    config = htm_config or HtmConfig()
    chosen = core.resolve_engine(engine)
    tp = _as_transformed(source, strip)
    lowered = lower.lower_speculative(tp, config.granule_bytes)

    def order_fn(n_strips: int) -> np.ndarray:
        return make_order(policy, n_strips, seed)

    digest_names = [g.name for g in tp.original.globals]
    t0 = time.perf_counter()
    if chosen == "pure":
        eng, _ = engine_py.run_speculative(
            lowered, threads, order_fn, config, seed,
            collect_trace=collect_trace, keep_log=keep_log)
        counters = eng.counters()
        digest = eng.mem.digest(digest_names)
        memory = eng.mem
        trace = eng.trace if collect_trace else None
    else:
        mem = copy.deepcopy(lowered.mem_template)
        cells = np.array(mem.cells, dtype=np.int64)
        granule_cells = max(1, config.granule_bytes // 8)
        shift = granule_cells.bit_length() - 1
        threshold = int(config.other_abort_prob * 2.0**64)
        trace_list: Optional[list] = [] if collect_trace else None
        try:
            commits, conflict, capacity, order_inv, other, nonspec, attempts = \
                core._speccore.spec_run(
                    lowered.code, lowered.consts, cells,
                    lowered.var_base, lowered.var_len,
                    lowered.frame_size, lowered.pre_pc, lowered.strip_pc,
                    lowered.post_pc, lowered.loop_init_pc,
                    lowered.loop_bound_pc, lowered.expr_slot,
                    lowered.strip_size, lowered.cursor_addr,
                    lowered.i_slot, lowered.spec_flag_slot,
                    threads, seed, shift, config.read_capacity,
                    config.write_capacity, threshold, order_fn, trace_list)
        except core._speccore.CoreRuntimeError as err:
            raise _wrap_core_error(lowered, err) from None
        counters = {
            "commits": int(commits),
            "aborts": {"conflict": int(conflict), "capacity": int(capacity),
                       "order_inversion": int(order_inv),
                       "other": int(other)},
            "retries": [int(a) - 1 for a in attempts],
            "nonspec": int(nonspec),
        }
        digest = _digest_np_cells(lowered.mem_template, cells, digest_names)
        memory = copy.deepcopy(lowered.mem_template)
        memory.cells = [int(x) for x in cells]
        trace = trace_list
    wall = time.perf_counter() - t0
    abort_dict = {k: counters["aborts"][k] for k in ABORT_KEYS}
    return RunReport(
        commits=counters["commits"], aborts=abort_dict,
        retries=counters["retries"], nonspec=counters["nonspec"],
        digest=digest, wall_time=wall, engine=chosen, threads=threads,
        sched=policy.label, strip=lowered.strip_size, seed=seed,
        trace=trace, memory=memory)


def run_ordered_baseline(program: ir.Program, threads: int = 4,
                         seed: int = 1,
                         collect_trace: bool = False) -> RunReport:
    """Sink/source DOACROSS execution of the program's ordered loop."""
    if threads < 1:
        raise ConfigError("threads must be >= 1")
    lowered = lower.lower_ordered(program)
    result = ordered.run_ordered(lowered, threads, seed,
                                 collect_trace=collect_trace)
    return RunReport(
        commits=result.iterations,
        aborts={k: 0 for k in ABORT_KEYS},
        retries=[0] * result.iterations,
        nonspec=result.iterations,
        digest=result.mem.digest(),
        wall_time=result.wall_time,
        engine="pure", threads=threads, sched="ordered",
        strip=1, seed=seed,
        trace=result.trace if collect_trace else None,
        memory=result.mem)
