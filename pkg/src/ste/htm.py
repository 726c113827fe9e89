"""Software emulation of a best-effort hardware transactional memory.

Lazy versioning with commit-time validation: speculative writes are buffered
per transaction, conflict detection happens at commit against a per-granule
last-commit timestamp, and the granule size (default 64 bytes, one cache
line) makes false sharing observable. Non-speculative code writes straight
to memory through `direct_write`, which stamps the granule so overlapping
speculative readers fail validation.

A transaction aborts for one of four reasons:

  * Conflict: commit-time validation found a granule in its read or write
    set that was committed after the transaction began (true sharing or
    false sharing within a granule).
  * Capacity: its read or write set outgrew the configured granule budget.
  * OrderInversion: an explicit abort request; never raised internally.
  * Other: an explicit abort for injected transient causes.

Commits are serialized by construction (the emulator is driven from one
scheduler loop), which models the atomic commit of real HTM; committed
state is always explainable by replaying the commit log in clock order.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class AbortReason(Enum):
    CONFLICT = "conflict"
    CAPACITY = "capacity"
    ORDER_INVERSION = "order_inversion"
    OTHER = "other"


class TxStatus(Enum):
    ACTIVE = "active"
    COMMITTED = "committed"
    ABORTED = "aborted"


class NestedTransaction(Exception):
    pass


class NotActive(Exception):
    pass


class AbortSignal(Exception):
    """Raised by tx_read/tx_write when the access itself aborts the tx."""

    def __init__(self, reason: AbortReason):
        super().__init__(reason.value)
        self.reason = reason


@dataclass
class HtmConfig:
    granule_bytes: int = 64
    read_capacity: int = 512   # granules; 512 * 64 B models a 32 KB L1
    write_capacity: int = 512
    other_abort_prob: float = 0.0

    def __post_init__(self) -> None:
        if self.granule_bytes < 8 or self.granule_bytes & (self.granule_bytes - 1):
            raise ValueError("granule_bytes must be a power of two >= 8")
        if self.read_capacity < 1 or self.write_capacity < 1:
            raise ValueError("capacities must be >= 1")
        if not 0.0 <= self.other_abort_prob < 1.0:
            raise ValueError("other_abort_prob must be in [0, 1)")


class MemoryImage:
    """Flat cells of signed 64-bit integers plus a variable table.

    Addresses are cell indices. Variables are allocated contiguously in
    declaration order, so unrelated variables can share a granule; names
    passed in `isolate` are padded onto a private granule instead.
    """

    def __init__(self, variables: list[tuple[str, Optional[int]]],
                 granule_bytes: int = 64,
                 isolate: frozenset[str] = frozenset()):
        self.granule_cells = max(1, granule_bytes // 8)
        self.granule_bytes = granule_bytes
        self.vars: dict[str, tuple[int, int]] = {}
        addr = 0
        for name, length in variables:
            cells = 1 if length is None else length
            if name in isolate:
                addr += -addr % self.granule_cells
            self.vars[name] = (addr, cells)
            addr += cells
            if name in isolate:
                addr += -addr % self.granule_cells
        self.size = addr
        self.cells: list[int] = [0] * addr

    def base_of(self, name: str) -> int:
        return self.vars[name][0]

    def addr_of(self, name: str, index: int = 0) -> int:
        base, length = self.vars[name]
        if not 0 <= index < length:
            raise IndexError(f"{name}[{index}] out of range 0..{length - 1}")
        return base + index

    def granule_of(self, addr: int) -> int:
        return addr // self.granule_cells

    def read(self, name: str, index: int = 0) -> int:
        return self.cells[self.addr_of(name, index)]

    def digest(self, names: Optional[list[str]] = None) -> str:
        """Order-stable digest keyed by variable names.

        `names` restricts the digest to a variable subset, e.g. to compare a
        transformed image (which carries runtime plumbing such as the commit
        cursor) against the original program's image.
        """
        h = hashlib.sha256()
        for name in (self.vars if names is None else names):
            base, length = self.vars[name]
            h.update(name.encode())
            h.update(struct.pack(f"<{length}q",
                                 *self.cells[base:base + length]))
        return h.hexdigest()


@dataclass
class TxHandle:
    """One speculative attempt. Non-speculative handles run straight on
    memory and keep their sets empty."""

    tx_id: int
    worker: int
    strip_start: Optional[int]
    speculative: bool
    start_ts: int
    read_set: set[int] = field(default_factory=set)
    write_set: set[int] = field(default_factory=set)
    write_buf: dict[int, int] = field(default_factory=dict)
    status: TxStatus = TxStatus.ACTIVE
    abort_reason: Optional[AbortReason] = None


class Htm:
    def __init__(self, mem: MemoryImage, config: HtmConfig | None = None,
                 keep_log: bool = True):
        self.mem = mem
        self.config = config or HtmConfig()
        if self.config.granule_bytes != mem.granule_bytes:
            raise ValueError("memory image granule differs from config")
        self.clock = 0
        n_granules = mem.granule_of(max(mem.size - 1, 0)) + 1
        self.last_commit_ts = [0] * n_granules
        self.active: dict[int, TxHandle] = {}
        self.excluded_granules: set[int] = set()
        self.keep_log = keep_log
        # (ts, ((addr, value), ...)) per commit event, for replay checks.
        self.commit_log: list[tuple[int, tuple[tuple[int, int], ...]]] = []
        self._initial_cells = list(mem.cells)
        self._next_id = 0

    # -- lifecycle -----------------------------------------------------------

    def begin(self, worker: int, strip_start: Optional[int] = None,
              speculative: bool = True) -> TxHandle:
        """Start a transaction stamped with the current commit clock."""
        if worker in self.active:
            raise NestedTransaction(f"worker {worker} already has an active "
                                    "transaction")
        tx = TxHandle(self._next_id, worker, strip_start, speculative,
                      start_ts=self.clock)
        self._next_id += 1
        if speculative:
            self.active[worker] = tx
        return tx

    def _release(self, tx: TxHandle) -> None:
        if self.active.get(tx.worker) is tx:
            del self.active[tx.worker]

    def abort_explicit(self, tx: TxHandle, reason: AbortReason) -> None:
        """Roll back; committed memory is untouched by construction."""
        if tx.status is not TxStatus.ACTIVE:
            raise NotActive("abort of a non-active transaction")
        tx.status = TxStatus.ABORTED
        tx.abort_reason = reason
        tx.write_buf.clear()
        self._release(tx)

    def _abort_signal(self, tx: TxHandle, reason: AbortReason) -> AbortSignal:
        tx.status = TxStatus.ABORTED
        tx.abort_reason = reason
        tx.write_buf.clear()
        self._release(tx)
        return AbortSignal(reason)

    # -- speculative accesses ---------------------------------------------------

    def read(self, tx: TxHandle, addr: int) -> int:
        if tx.status is not TxStatus.ACTIVE:
            raise NotActive("read on a non-active transaction")
        if not tx.speculative:
            return self.mem.cells[addr]
        if addr in tx.write_buf:
            return tx.write_buf[addr]
        g = self.mem.granule_of(addr)
        if g not in tx.read_set:
            if len(tx.read_set) >= self.config.read_capacity:
                raise self._abort_signal(tx, AbortReason.CAPACITY)
            tx.read_set.add(g)
        return self.mem.cells[addr]

    def write(self, tx: TxHandle, addr: int, value: int) -> None:
        if tx.status is not TxStatus.ACTIVE:
            raise NotActive("write on a non-active transaction")
        if not tx.speculative:
            self.direct_write(addr, value)
            return
        g = self.mem.granule_of(addr)
        if g not in tx.write_set:
            if len(tx.write_set) >= self.config.write_capacity:
                raise self._abort_signal(tx, AbortReason.CAPACITY)
            tx.write_set.add(g)
        tx.write_buf[addr] = value

    # -- commit -------------------------------------------------------------

    def commit(self, tx: TxHandle) -> TxStatus:
        """Validate against commits since begin, then publish atomically.

        Both the read set and the write set are validated so that two
        transactions writing the same granule conflict (first committer
        wins), matching eager HTM behaviour for false sharing.
        """
        if tx.status is not TxStatus.ACTIVE:
            raise NotActive("commit of a non-active transaction")
        if not tx.speculative:
            tx.status = TxStatus.COMMITTED
            return tx.status
        for g in tx.read_set | tx.write_set:
            if g in self.excluded_granules:
                continue
            if self.last_commit_ts[g] > tx.start_ts:
                tx.status = TxStatus.ABORTED
                tx.abort_reason = AbortReason.CONFLICT
                tx.write_buf.clear()
                self._release(tx)
                return tx.status
        self.clock += 1
        for addr in tx.write_buf:
            self.last_commit_ts[self.mem.granule_of(addr)] = self.clock
        if self.keep_log:
            self.commit_log.append(
                (self.clock, tuple(sorted(tx.write_buf.items()))))
        for addr, value in tx.write_buf.items():
            self.mem.cells[addr] = value
        tx.status = TxStatus.COMMITTED
        self._release(tx)
        return tx.status

    # -- non-transactional accesses ------------------------------------------

    def direct_write(self, addr: int, value: int) -> None:
        """Committed write outside any transaction; stamps its granule so
        concurrent speculative readers and writers fail validation."""
        self.clock += 1
        self.mem.cells[addr] = value
        self.last_commit_ts[self.mem.granule_of(addr)] = self.clock
        if self.keep_log:
            self.commit_log.append((self.clock, ((addr, value),)))

    def direct_read(self, addr: int) -> int:
        return self.mem.cells[addr]

    # -- diagnostics ------------------------------------------------------------

    def replay_log(self) -> list[int]:
        """Re-apply the commit log serially onto the initial image."""
        cells = list(self._initial_cells)
        for _, writes in self.commit_log:
            for addr, value in writes:
                cells[addr] = value
        return cells
