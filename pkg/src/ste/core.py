"""Engine core selection.

The hot interpreter loop has two implementations: a compiled Cython core
(ste._speccore) and the pure-Python reference in engine_py. The compiled
core is preferred when the extension built; both implement the same
protocol and produce identical reports, which the test suite checks.
"""

from __future__ import annotations

try:
    from . import _speccore  # type: ignore[attr-defined]

    HAVE_COMPILED = True
except ImportError:
    _speccore = None
    HAVE_COMPILED = False

ENGINES = ("auto", "compiled", "pure")


def resolve_engine(name: str = "auto") -> str:
    if name not in ENGINES:
        raise ValueError(f"unknown engine {name!r}; expected one of {ENGINES}")
    if name == "auto":
        return "compiled" if HAVE_COMPILED else "pure"
    if name == "compiled" and not HAVE_COMPILED:
        raise RuntimeError(
            "compiled core requested but ste._speccore is not built; "
            "reinstall the package with a C++ toolchain available")
    return name
