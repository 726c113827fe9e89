# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled execution core: bytecode interpreter plus speculative scheduler.

A port of the protocol in engine_py.py to C types and C++ containers. Both
cores consume the same lowered bytecode and must produce identical reports;
the test suite compares them run for run. Keep opcode numbers and protocol
rules in sync with lower.py / engine_py.py.
"""

from cython.operator cimport dereference as deref, preincrement as inc
from libcpp.unordered_map cimport unordered_map
from libcpp.unordered_set cimport unordered_set
from libcpp.vector cimport vector

import numpy as np

ctypedef long long i64
ctypedef unsigned long long u64

cdef enum:
    OP_HALT = 0
    OP_LOADK = 1
    OP_MOV = 2
    OP_ADD = 3
    OP_SUB = 4
    OP_MUL = 5
    OP_DIV = 6
    OP_MOD = 7
    OP_EQ = 8
    OP_NE = 9
    OP_LT = 10
    OP_LE = 11
    OP_GT = 12
    OP_GE = 13
    OP_NOTL = 14
    OP_BAND = 15
    OP_BOR = 16
    OP_BXOR = 17
    OP_SHL = 18
    OP_SHR = 19
    OP_NEG = 20
    OP_RND = 21
    OP_BOOLV = 22
    OP_JMP = 23
    OP_JZ = 24
    OP_JNZ = 25
    OP_GLOAD = 26
    OP_GSTORE = 27
    OP_FLOAD = 28
    OP_FSTORE = 29
    OP_YIELD = 30
    OP_BEGIN = 31
    OP_END = 32
    OP_ADVANCE = 33
    OP_RET = 34
    OP_SINK = 35
    OP_SOURCE = 36
    OP_FZERO = 37

cdef enum:
    EV_CAPACITY = -2
    EV_FAULT = -3

cdef enum:
    AB_CONFLICT = 0
    AB_CAPACITY = 1
    AB_ORDER = 2
    AB_OTHER = 3

cdef enum:
    W_IDLE = 0
    W_RUNNING = 1

OPCODE_NAMES = {
    0: "HALT", 1: "LOADK", 2: "MOV", 3: "ADD", 4: "SUB", 5: "MUL", 6: "DIV",
    7: "MOD", 8: "EQ", 9: "NE", 10: "LT", 11: "LE", 12: "GT", 13: "GE",
    14: "NOTL", 15: "BAND", 16: "BOR", 17: "BXOR", 18: "SHL", 19: "SHR",
    20: "NEG", 21: "RND", 22: "BOOLV", 23: "JMP", 24: "JZ", 25: "JNZ",
    26: "GLOAD", 27: "GSTORE", 28: "FLOAD", 29: "FSTORE", 30: "YIELD",
    31: "BEGIN", 32: "END", 33: "ADVANCE", 34: "RET", 35: "SINK",
    36: "SOURCE", 37: "FZERO",
}

cdef u64 STREAM_RND = 0xA3C59AC2B54907C1
cdef u64 STREAM_OTHER = 0x6C62272E07BB0142
cdef u64 GOLDEN = 0x9E3779B97F4A7C15

_REASON_NAMES = ("conflict", "capacity", "order_inversion", "other")


class CoreRuntimeError(Exception):
    """Interpreter fault; args are (span_id, message)."""


cdef inline u64 mix64(u64 z) noexcept nogil:
    z = (z ^ (z >> 30)) * <u64>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <u64>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef inline i64 rnd_value(u64 seed, i64 arg) noexcept nogil:
    cdef u64 h = mix64(seed ^ STREAM_RND)
    return <i64>(mix64(h ^ (<u64>arg * GOLDEN)) >> 1)


cdef inline u64 other_draw(u64 seed, i64 strip, i64 attempt,
                           i64 step) noexcept nogil:
    cdef u64 h = mix64(seed ^ STREAM_OTHER)
    cdef u64 key = (<u64>strip * <u64>0x100000001B3
                    + <u64>attempt * <u64>0x1B873593 + <u64>step)
    return mix64(h ^ mix64(key))


cdef inline i64 wadd(i64 a, i64 b) noexcept nogil:
    return <i64>(<u64>a + <u64>b)


cdef inline i64 wsub(i64 a, i64 b) noexcept nogil:
    return <i64>(<u64>a - <u64>b)


cdef inline i64 wmul(i64 a, i64 b) noexcept nogil:
    return <i64>(<u64>a * <u64>b)


cdef inline i64 wdiv(i64 a, i64 b) noexcept nogil:
    # b != 0 checked by the caller; INT64_MIN / -1 wraps like negation.
    if b == -1:
        return <i64>(<u64>0 - <u64>a)
    return a / b


cdef inline i64 wmod(i64 a, i64 b) noexcept nogil:
    if b == -1:
        return 0
    return a % b


cdef inline i64 wshl(i64 a, i64 b) noexcept nogil:
    return <i64>(<u64>a << (<u64>b & 63))


cdef inline i64 wshr(i64 a, i64 b) noexcept nogil:
    return a >> (<u64>b & 63)


cdef class _Core:
    """Direct-mode interpreter; the speculative engine subclasses it."""

    cdef i64[:, ::1] code
    cdef i64[::1] consts
    cdef i64[::1] cells
    cdef i64[::1] var_base
    cdef i64[::1] var_len
    cdef u64 seed
    cdef bint cap_hit
    cdef i64 err_span
    cdef str err_msg

    cdef i64 tx_read(self, i64 wid, i64 addr) noexcept:
        return self.cells[addr]

    cdef void tx_write(self, i64 wid, i64 addr, i64 value) noexcept:
        self.cells[addr] = value

    cdef void store_direct(self, i64 addr, i64 value) noexcept:
        self.cells[addr] = value

    cdef int _fault(self, i64 span, str msg):
        self.err_span = span
        self.err_msg = msg
        return EV_FAULT

    cdef int _exec(self, i64[::1] frame, i64* pc_io, int tx_mode, i64 wid):
        """Run until an event opcode; returns it (or a sentinel)."""
        cdef i64 pc = pc_io[0]
        cdef i64 op, a, b, c, d, idx, addr, v
        cdef i64[:, ::1] code = self.code
        while True:
            op = code[pc, 0]
            a = code[pc, 1]
            b = code[pc, 2]
            c = code[pc, 3]
            if op == OP_LOADK:
                frame[a] = self.consts[b]
            elif op == OP_MOV:
                frame[a] = frame[b]
            elif op == OP_ADD:
                frame[a] = wadd(frame[b], frame[c])
            elif op == OP_SUB:
                frame[a] = wsub(frame[b], frame[c])
            elif op == OP_MUL:
                frame[a] = wmul(frame[b], frame[c])
            elif op == OP_DIV:
                v = frame[c]
                if v == 0:
                    pc_io[0] = pc
                    return self._fault(code[pc, 4], "division by zero")
                frame[a] = wdiv(frame[b], v)
            elif op == OP_MOD:
                v = frame[c]
                if v == 0:
                    pc_io[0] = pc
                    return self._fault(code[pc, 4], "division by zero")
                frame[a] = wmod(frame[b], v)
            elif op == OP_EQ:
                frame[a] = 1 if frame[b] == frame[c] else 0
            elif op == OP_NE:
                frame[a] = 1 if frame[b] != frame[c] else 0
            elif op == OP_LT:
                frame[a] = 1 if frame[b] < frame[c] else 0
            elif op == OP_LE:
                frame[a] = 1 if frame[b] <= frame[c] else 0
            elif op == OP_GT:
                frame[a] = 1 if frame[b] > frame[c] else 0
            elif op == OP_GE:
                frame[a] = 1 if frame[b] >= frame[c] else 0
            elif op == OP_NOTL:
                frame[a] = 1 if frame[b] == 0 else 0
            elif op == OP_BOOLV:
                frame[a] = 1 if frame[b] != 0 else 0
            elif op == OP_BAND:
                frame[a] = frame[b] & frame[c]
            elif op == OP_BOR:
                frame[a] = frame[b] | frame[c]
            elif op == OP_BXOR:
                frame[a] = frame[b] ^ frame[c]
            elif op == OP_SHL:
                frame[a] = wshl(frame[b], frame[c])
            elif op == OP_SHR:
                frame[a] = wshr(frame[b], frame[c])
            elif op == OP_NEG:
                frame[a] = wsub(0, frame[b])
            elif op == OP_RND:
                frame[a] = rnd_value(self.seed, frame[b])
            elif op == OP_JMP:
                pc = a
                continue
            elif op == OP_JZ:
                if frame[a] == 0:
                    pc = b
                    continue
            elif op == OP_JNZ:
                if frame[a] != 0:
                    pc = b
                    continue
            elif op == OP_GLOAD:
                if c >= 0:
                    idx = frame[c]
                    if idx < 0 or idx >= self.var_len[b]:
                        pc_io[0] = pc
                        return self._fault(
                            code[pc, 4], f"index {idx} out of range "
                            f"0..{self.var_len[b] - 1}")
                else:
                    idx = 0
                addr = self.var_base[b] + idx
                if tx_mode:
                    v = self.tx_read(wid, addr)
                    if self.cap_hit:
                        pc_io[0] = pc
                        return EV_CAPACITY
                    frame[a] = v
                else:
                    frame[a] = self.cells[addr]
            elif op == OP_GSTORE:
                if b >= 0:
                    idx = frame[b]
                    if idx < 0 or idx >= self.var_len[a]:
                        pc_io[0] = pc
                        return self._fault(
                            code[pc, 4], f"index {idx} out of range "
                            f"0..{self.var_len[a] - 1}")
                else:
                    idx = 0
                addr = self.var_base[a] + idx
                if tx_mode:
                    self.tx_write(wid, addr, frame[c])
                    if self.cap_hit:
                        pc_io[0] = pc
                        return EV_CAPACITY
                else:
                    self.store_direct(addr, frame[c])
            elif op == OP_FLOAD:
                idx = frame[c]
                d = code[pc, 4]
                if idx < 0 or idx >= d:
                    pc_io[0] = pc
                    return self._fault(
                        code[pc, 5],
                        f"local index {idx} out of range 0..{d - 1}")
                frame[a] = frame[b + idx]
            elif op == OP_FSTORE:
                idx = frame[b]
                d = code[pc, 4]
                if idx < 0 or idx >= d:
                    pc_io[0] = pc
                    return self._fault(
                        code[pc, 5],
                        f"local index {idx} out of range 0..{d - 1}")
                frame[a + idx] = frame[c]
            elif op == OP_FZERO:
                for idx in range(a, a + b):
                    frame[idx] = 0
            else:
                pc_io[0] = pc + 1
                return <int>op
            pc += 1

    cdef int run_direct_segment(self, i64[::1] frame, i64 pc) except -1:
        """Direct-mode execution until RET (serial contexts)."""
        cdef int ev
        cdef i64 p = pc
        while True:
            ev = self._exec(frame, &p, 0, 0)
            if ev == OP_RET:
                return 0
            if ev == EV_FAULT:
                raise CoreRuntimeError(self.err_span, self.err_msg)
            if ev == OP_YIELD or ev == OP_SINK or ev == OP_SOURCE:
                continue
            raise CoreRuntimeError(
                0, f"protocol opcode {ev} in serial segment")


def seg_run(code, consts, cells, var_base, var_len, frame, pc, seed):
    """Direct serial execution of one segment until RET."""
    cdef _Core core = _Core()
    core.code = code
    core.consts = consts
    core.cells = cells
    core.var_base = var_base
    core.var_len = var_len
    core.seed = <u64>(<object>seed & 0xFFFFFFFFFFFFFFFF)
    core.run_direct_segment(frame, pc)
    return 0


cdef class _SpecCore(_Core):
    cdef i64 n_workers, frame_size, n_strips, qhead, strips_done, tick, rr
    cdef i64 clock
    cdef i64 strip_pc, strip_size, cursor_addr, i_slot, spec_flag_slot
    cdef i64 gshift, rs_cap, ws_cap, cursor_granule
    cdef u64 other_threshold
    cdef bint stamping
    cdef i64 ab[4]
    cdef i64 nonspec
    cdef vector[i64] starts, order, last_ts
    cdef vector[unordered_set[i64]] rsets, wsets
    cdef vector[unordered_map[i64, i64]] wbufs, parked
    cdef vector[i64] w_state, w_strip, w_attempt, w_pc, w_inbody, w_spec
    cdef vector[i64] w_iter, w_btick, w_bts
    cdef i64[:, ::1] frames
    cdef i64[::1] attempts
    cdef object trace

    # -- transactional accesses (mirror htm.Htm semantics) -------------------

    cdef i64 tx_read(self, i64 wid, i64 addr) noexcept:
        cdef unordered_map[i64, i64].iterator it = \
            self.wbufs[wid].find(addr)
        if it != self.wbufs[wid].end():
            return deref(it).second
        cdef i64 g = addr >> self.gshift
        if self.rsets[wid].count(g) == 0:
            if <i64>self.rsets[wid].size() >= self.rs_cap:
                self.cap_hit = True
                return 0
            self.rsets[wid].insert(g)
        return self.cells[addr]

    cdef void tx_write(self, i64 wid, i64 addr, i64 value) noexcept:
        cdef i64 g = addr >> self.gshift
        if self.wsets[wid].count(g) == 0:
            if <i64>self.wsets[wid].size() >= self.ws_cap:
                self.cap_hit = True
                return
            self.wsets[wid].insert(g)
        self.wbufs[wid][addr] = value

    cdef void store_direct(self, i64 addr, i64 value) noexcept:
        # Inside the speculative phase, non-transactional writes commit
        # immediately and stamp their granule so overlapping speculative
        # attempts fail validation. Pre/post segments write plainly.
        if self.stamping:
            self.clock += 1
            self.last_ts[addr >> self.gshift] = self.clock
        self.cells[addr] = value

    cdef void tx_clear(self, i64 wid) noexcept:
        self.rsets[wid].clear()
        self.wsets[wid].clear()
        self.wbufs[wid].clear()

    # -- protocol -------------------------------------------------------------

    cdef inline i64 cursor_value(self) noexcept:
        return self.cells[self.cursor_addr]

    cdef bint runnable(self, i64 wid) noexcept:
        if self.w_state[wid] == W_RUNNING:
            return True
        if self.parked[wid].count(self.cursor_value()) > 0:
            return True
        return self.qhead < self.n_strips

    cdef int acquire(self, i64 wid) except -1:
        cdef i64 cur = self.cursor_value()
        cdef i64 strip, k
        cdef unordered_map[i64, i64].iterator it = self.parked[wid].find(cur)
        if it != self.parked[wid].end():
            strip = deref(it).second
            self.parked[wid].erase(it)
        else:
            strip = self.order[self.qhead]
            self.qhead += 1
        self.w_strip[wid] = strip
        self.attempts[strip] += 1
        self.w_attempt[wid] = self.attempts[strip]
        for k in range(self.frame_size):
            self.frames[wid, k] = 0
        self.frames[wid, self.i_slot] = self.starts[strip]
        self.w_pc[wid] = self.strip_pc
        self.w_inbody[wid] = 0
        self.w_spec[wid] = 0
        self.w_iter[wid] = 0
        self.w_state[wid] = W_RUNNING
        return 0

    cdef void ste_begin(self, i64 wid) noexcept:
        cdef i64 start = self.starts[self.w_strip[wid]]
        if self.cursor_value() == start:
            self.w_spec[wid] = 0
        else:
            self.w_spec[wid] = 1
            self.tx_clear(wid)
            self.w_bts[wid] = self.clock
        self.frames[wid, self.spec_flag_slot] = self.w_spec[wid]
        self.w_inbody[wid] = 1
        self.w_btick[wid] = self.tick

    cdef int ste_end(self, i64 wid) noexcept:
        """-1 on success, else the abort reason index."""
        self.w_inbody[wid] = 0
        if not self.w_spec[wid]:
            return -1
        cdef i64 start = self.starts[self.w_strip[wid]]
        if self.cursor_value() != start:
            return AB_ORDER
        cdef i64 bts = self.w_bts[wid]
        cdef i64 g
        cdef unordered_set[i64].iterator sit = self.rsets[wid].begin()
        while sit != self.rsets[wid].end():
            g = deref(sit)
            if g != self.cursor_granule and self.last_ts[g] > bts:
                return AB_CONFLICT
            inc(sit)
        sit = self.wsets[wid].begin()
        while sit != self.wsets[wid].end():
            g = deref(sit)
            if g != self.cursor_granule and self.last_ts[g] > bts:
                return AB_CONFLICT
            inc(sit)
        self.clock += 1
        cdef unordered_map[i64, i64].iterator it = self.wbufs[wid].begin()
        while it != self.wbufs[wid].end():
            self.last_ts[deref(it).first >> self.gshift] = self.clock
            self.cells[deref(it).first] = deref(it).second
            inc(it)
        self.tx_clear(wid)
        return -1

    cdef int do_abort(self, i64 wid, int reason) except -1:
        self.ab[reason] += 1
        self.tx_clear(wid)
        if self.trace is not None:
            self.trace.append((self.starts[self.w_strip[wid]], wid,
                               self.w_attempt[wid], _REASON_NAMES[reason],
                               self.w_btick[wid], self.tick))
        self.parked[wid][self.starts[self.w_strip[wid]]] = self.w_strip[wid]
        self.w_state[wid] = W_IDLE
        self.w_strip[wid] = -1
        self.w_inbody[wid] = 0
        return 0

    cdef int retire(self, i64 wid) except -1:
        self.strips_done += 1
        if not self.w_spec[wid]:
            self.nonspec += 1
        if self.trace is not None:
            self.trace.append((self.starts[self.w_strip[wid]], wid,
                               self.w_attempt[wid],
                               "commit" if self.w_spec[wid] else "nonspec",
                               self.w_btick[wid], self.tick))
        self.w_state[wid] = W_IDLE
        self.w_strip[wid] = -1
        return 0

    cdef int step(self, i64 wid) except -1:
        self.tick += 1
        self.rr = wid
        if self.w_state[wid] == W_IDLE:
            self.acquire(wid)
        cdef i64 pc = self.w_pc[wid]
        cdef i64[::1] frame = self.frames[wid]
        cdef int ev, reason, tx_mode
        cdef u64 draw
        while True:
            tx_mode = 1 if (self.w_inbody[wid] and self.w_spec[wid]) else 0
            self.cap_hit = False
            ev = self._exec(frame, &pc, tx_mode, wid)
            self.w_pc[wid] = pc
            if ev == EV_CAPACITY:
                self.do_abort(wid, AB_CAPACITY)
                return 0
            if ev == EV_FAULT:
                if tx_mode:
                    self.do_abort(wid, AB_OTHER)
                    return 0
                raise CoreRuntimeError(self.err_span, self.err_msg)
            if ev == OP_BEGIN:
                self.ste_begin(wid)
                return 0
            if ev == OP_YIELD:
                self.w_iter[wid] += 1
                if self.w_spec[wid] and self.other_threshold != 0:
                    draw = other_draw(self.seed, self.w_strip[wid],
                                      self.w_attempt[wid], self.w_iter[wid])
                    if draw < self.other_threshold:
                        self.do_abort(wid, AB_OTHER)
                return 0
            if ev == OP_END:
                reason = self.ste_end(wid)
                if reason >= 0:
                    self.do_abort(wid, reason)
                    return 0
                continue  # copy-back and cursor advance run in this step
            if ev == OP_ADVANCE:
                self.store_direct(self.cursor_addr,
                                  self.cells[self.cursor_addr]
                                  + self.strip_size)
                continue
            if ev == OP_RET:
                self.retire(wid)
                return 0
            raise CoreRuntimeError(0, f"unexpected event opcode {ev}")


def spec_run(code, consts, cells, var_base, var_len,
             frame_size, pre_pc, strip_pc, post_pc, init_pc, bound_pc,
             expr_slot, strip_size, cursor_addr, i_slot, spec_flag_slot,
             n_workers, seed, gshift, rs_cap, ws_cap, other_threshold,
             order_fn, trace):
    """Full speculative run.

    Returns (commits, conflict, capacity, order_inversion, other, nonspec,
    attempts). Mutates `cells` in place to the final memory.
    """
    cdef _SpecCore eng = _SpecCore()
    eng.code = code
    eng.consts = consts
    eng.cells = cells
    eng.var_base = var_base
    eng.var_len = var_len
    eng.seed = <u64>(<object>seed & 0xFFFFFFFFFFFFFFFF)
    eng.frame_size = frame_size
    eng.strip_pc = strip_pc
    eng.strip_size = strip_size
    eng.cursor_addr = cursor_addr
    eng.i_slot = i_slot
    eng.spec_flag_slot = spec_flag_slot
    eng.n_workers = n_workers
    eng.gshift = gshift
    eng.rs_cap = rs_cap
    eng.ws_cap = ws_cap
    eng.cursor_granule = cursor_addr >> gshift
    eng.other_threshold = <u64>(<object>other_threshold
                                & 0xFFFFFFFFFFFFFFFF)
    eng.trace = trace
    eng.stamping = False
    eng.clock = 0
    eng.tick = 0
    eng.rr = n_workers - 1
    eng.qhead = 0
    eng.strips_done = 0
    eng.nonspec = 0
    cdef int k
    for k in range(4):
        eng.ab[k] = 0

    n_cells = len(cells)
    n_granules = ((n_cells - 1) >> gshift) + 1 if n_cells else 1
    eng.last_ts.resize(n_granules, 0)

    scratch = np.zeros(frame_size, dtype=np.int64)
    cdef i64[::1] fr = scratch
    eng.run_direct_segment(fr, pre_pc)
    scratch[:] = 0
    eng.run_direct_segment(fr, init_pc)
    cdef i64 ini = scratch[expr_slot]
    scratch[:] = 0
    eng.run_direct_segment(fr, bound_pc)
    cdef i64 bound = scratch[expr_slot]

    cdef i64 start = ini
    while start < bound:
        eng.starts.push_back(start)
        start += strip_size
    eng.n_strips = <i64>eng.starts.size()

    attempts = np.zeros(int(eng.n_strips), dtype=np.int64)
    eng.attempts = attempts
    order = np.ascontiguousarray(
        np.asarray(order_fn(int(eng.n_strips)), dtype=np.int64))
    if eng.n_strips and (len(order) != eng.n_strips or
                         not np.array_equal(np.sort(order),
                                            np.arange(eng.n_strips))):
        raise ValueError("dispatch order must be a permutation of strips")
    cdef i64[::1] order_view = order
    eng.order.resize(eng.n_strips)
    for k in range(<int>eng.n_strips):
        eng.order[k] = order_view[k]

    frames = np.zeros((n_workers, max(frame_size, 1)), dtype=np.int64)
    eng.frames = frames
    eng.rsets.resize(n_workers)
    eng.wsets.resize(n_workers)
    eng.wbufs.resize(n_workers)
    eng.parked.resize(n_workers)
    eng.w_state.resize(n_workers, W_IDLE)
    eng.w_strip.resize(n_workers, -1)
    eng.w_attempt.resize(n_workers, 0)
    eng.w_pc.resize(n_workers, 0)
    eng.w_inbody.resize(n_workers, 0)
    eng.w_spec.resize(n_workers, 0)
    eng.w_iter.resize(n_workers, 0)
    eng.w_btick.resize(n_workers, 0)
    eng.w_bts.resize(n_workers, 0)

    cdef i64 wid, cand, d
    cdef i64 n = n_workers
    eng.stamping = True
    while eng.strips_done < eng.n_strips:
        wid = -1
        for d in range(1, n + 1):
            cand = (eng.rr + d) % n
            if eng.runnable(cand):
                wid = cand
                break
        if wid < 0:
            raise CoreRuntimeError(0, "no runnable worker but strips remain")
        eng.step(wid)
    eng.stamping = False

    scratch[:] = 0
    eng.run_direct_segment(fr, post_pc)

    return (int(eng.strips_done), int(eng.ab[AB_CONFLICT]),
            int(eng.ab[AB_CAPACITY]), int(eng.ab[AB_ORDER]),
            int(eng.ab[AB_OTHER]), int(eng.nonspec), attempts)
