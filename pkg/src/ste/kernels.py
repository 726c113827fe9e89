"""Bundled kernel gallery.

Each kernel models one loop family from the evaluation: a reduction loop, a
conditionally-updated shared scalar, a conditionally-written output array,
and a scan whose cross-strip dependences materialize on a few percent of
iterations. Serial digests are frozen for the default seed (1) and checked
by the test suite; they change only if a kernel file or the rnd() stream
changes.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass

from . import frontend, ir

DEFAULT_SEED = 1


@dataclass(frozen=True)
class KernelSpec:
    name: str
    filename: str
    default_strip: int
    kind: str  # reduction | scalar | array-if_write | true-dependence
    serial_digest: str  # interpret_serial output at DEFAULT_SEED
    description: str


KERNELS = {
    "loopa": KernelSpec(
        name="loopa", filename="loopa.stec", default_strip=5020,
        kind="reduction",
        serial_digest="e8c29978888f8d6bd0335d398062f205"
                      "0c913437d65ee4394e1bc63a871958b2",
        description="bit-count sum over one million iterations"),
    "loopv": KernelSpec(
        name="loopv", filename="loopv.stec", default_strip=9,
        kind="scalar",
        serial_digest="bcbcf86dd5f6e3d9eefa48a9bbbeac75"
                      "5101c8f8f33b61f56d80a65ec29163ab",
        description="corner scan with if_read/if_write private counter"),
    "loope": KernelSpec(
        name="loope", filename="loope.stec", default_strip=25,
        kind="array-if_write",
        serial_digest="684c2b22e3e9e2a92e604a5b8a07a200"
                      "c878a812ae2b06cbeef882b174be7507",
        description="smoothing pass with privatized output row"),
    "mcf": KernelSpec(
        name="mcf", filename="mcf.stec", default_strip=75,
        kind="true-dependence",
        serial_digest="3f66c8126995b584ae5594af16597a84"
                      "cc340e41f206b83924b9c36c83f55ac7",
        description="basket scan; ~3% of strips carry a real dependence"),
}

ORDERED_KERNEL = "loopv_ordered.stec"


def kernel_path(filename: str):
    return importlib.resources.files("ste") / "kernels" / filename


def kernel_source(filename: str) -> str:
    return kernel_path(filename).read_text(encoding="utf-8")


def load_kernel(name: str) -> ir.Program:
    spec = KERNELS[name]
    return frontend.parse(kernel_source(spec.filename), file=spec.filename)


def load_ordered_kernel() -> ir.Program:
    return frontend.parse(kernel_source(ORDERED_KERNEL), file=ORDERED_KERNEL)


def load_fig4() -> ir.Program:
    return frontend.parse(kernel_source("fig4.stec"), file="fig4.stec")
