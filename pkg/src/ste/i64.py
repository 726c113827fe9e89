"""64-bit integer semantics shared by the pure and compiled engines.

The value domain of the loop language is the signed 64-bit integer with
wrap-around arithmetic and C-style truncating division. The compiled core
gets these semantics for free from int64_t; the helpers here give the pure
interpreter bit-identical behaviour on Python ints.

The rnd() intrinsic is a pure function of (run seed, argument): re-executing
an aborted strip replays identical values, which the speculative runtime
relies on for serial equivalence.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1
SIGN64 = 1 << 63

# Stream constants for deriving independent randomness from one master seed.
# Keep in sync with _speccore.pyx.
STREAM_RND = 0xA3C59AC2B54907C1
STREAM_OTHER = 0x6C62272E07BB0142
STREAM_SCHED = 0x71E9FD361C94D3A5
GOLDEN = 0x9E3779B97F4A7C15


def wrap64(x: int) -> int:
    """Reduce a Python int to signed 64-bit two's complement."""
    x &= MASK64
    return x - (1 << 64) if x & SIGN64 else x


def trunc_div(a: int, b: int) -> int:
    """C99 division: truncates toward zero. b must be nonzero."""
    if b == -1:
        return wrap64(-a)
    q = abs(a) // abs(b)
    return -q if (a < 0) != (b < 0) else q


def trunc_mod(a: int, b: int) -> int:
    """C99 remainder: sign follows the dividend. b must be nonzero."""
    return wrap64(a - wrap64(b * trunc_div(a, b)))


def shift_left(a: int, b: int) -> int:
    return wrap64(a << (b & 63))


def shift_right(a: int, b: int) -> int:
    # Arithmetic shift; Python >> on negatives already sign-extends.
    return a >> (b & 63)


def mix64(z: int) -> int:
    """splitmix64 finalizer; a cheap, well-dispersed 64-bit mixer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def rnd_value(seed: int, arg: int) -> int:
    """Value of the rnd(arg) intrinsic: nonnegative, below 2**63."""
    h = mix64((seed & MASK64) ^ STREAM_RND)
    return mix64(h ^ ((arg & MASK64) * GOLDEN & MASK64)) >> 1


def other_abort_draw(seed: int, strip: int, attempt: int, step: int) -> int:
    """Uniform 64-bit draw deciding injected transient aborts."""
    h = mix64((seed & MASK64) ^ STREAM_OTHER)
    return mix64(h ^ mix64(strip * 0x100000001B3 + attempt * 0x1B873593 + step))
