"""ste: speculative task execution for a pragma-annotated loop language.

Source-to-source speculative privatization transforms plus a runtime that
executes the transformed loops on an emulated transactional memory with
in-order strip commits.
"""

from .core import HAVE_COMPILED, resolve_engine
from .runtime import (RunReport, SchedulePolicy, interpret_serial,
                      run_ordered_baseline, run_taskloop_tls)

__version__ = "0.1.0"

__all__ = [
    "HAVE_COMPILED",
    "resolve_engine",
    "RunReport",
    "SchedulePolicy",
    "interpret_serial",
    "run_ordered_baseline",
    "run_taskloop_tls",
    "__version__",
]
