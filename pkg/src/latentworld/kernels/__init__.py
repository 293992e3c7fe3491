"""Kernel backend selection.

Two complete implementations exist: the Cython extension in ``_ckernels``
and the numpy reference in ``pykernels``. Routing is measured, not assumed:
the fused compiled kernels win where numpy needs many temporary passes per
row (layernorm forward, bilinear crop-resize), while numpy's SIMD ufuncs win
the transcendental-heavy elementwise ops at this artifact's array sizes (see
``benchmarks/bench_kernels.py``). ``LATENTWORLD_PURE_PYTHON=1`` forces the
numpy implementation everywhere.
"""

import os

from . import pykernels

try:
    from . import _ckernels
except ImportError:
    _ckernels = None

_force_python = os.environ.get("LATENTWORLD_PURE_PYTHON") == "1"
_use_compiled = _ckernels is not None and not _force_python

BACKEND = "compiled" if _use_compiled else "python"

# numpy SIMD wins these at workload sizes
gelu_forward = pykernels.gelu_forward
gelu_backward = pykernels.gelu_backward
softmax_forward = pykernels.softmax_forward
softmax_forward_inplace = pykernels.softmax_forward_inplace
softmax_backward = pykernels.softmax_backward
adamw_update = pykernels.adamw_update

# fused compiled kernels win these
if _use_compiled:
    layernorm_forward = _ckernels.layernorm_forward
    layernorm_backward = _ckernels.layernorm_backward
    bilinear_resize = _ckernels.bilinear_resize
else:
    layernorm_forward = pykernels.layernorm_forward
    layernorm_backward = pykernels.layernorm_backward
    bilinear_resize = pykernels.bilinear_resize


def backend_name() -> str:
    return BACKEND


def implementations():
    """(name, module) pairs available for benchmarking and agreement tests."""
    pairs = [("python", pykernels)]
    if _ckernels is not None:
        pairs.append(("compiled", _ckernels))
    return pairs
