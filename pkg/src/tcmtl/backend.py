"""Kernel backend selection.

The hot loops (convolution, pooling) exist twice: compiled in
tcmtl._kernels_c and in pure numpy (BLAS-backed) in tcmtl.kernels_py. The
TCMTL_BACKEND environment variable picks the policy at import:

    auto    per-operation dispatch: the compiled loops win on small or
            strided problems, the BLAS path wins on large channel counts
            (see benchmarks/bench_kernels.py); falls back to numpy when the
            extension is not built
    cython  compiled kernels only (error if not built)
    python  numpy kernels only

Both implementations agree to float64 roundoff, so the choice never affects
correctness, only speed.
"""
import os

from .errors import ConfigError
from . import kernels_py

# measured crossover: below ~2e5 multiply-accumulates the loop kernels beat
# the tensordot path; above it BLAS wins decisively
CONV_MAC_CROSSOVER = 2e5


def _load():
    mode = os.environ.get("TCMTL_BACKEND", "auto").lower()
    if mode not in ("auto", "cython", "python"):
        raise ConfigError(f"TCMTL_BACKEND must be auto, cython or python, got {mode!r}")
    compiled = None
    if mode in ("auto", "cython"):
        try:
            from . import _kernels_c
            compiled = _kernels_c
        except ImportError:
            if mode == "cython":
                raise ConfigError("TCMTL_BACKEND=cython but the compiled extension is not built")
    return mode, compiled


MODE, compiled = _load()
BACKEND_NAME = {"auto": "cython+numpy" if compiled else "python",
                "cython": "cython", "python": "python"}[MODE]


def conv_kernels(macs):
    """Module to run a convolution-family op of the given MAC count on."""
    if compiled is None or MODE == "python":
        return kernels_py
    if MODE == "cython":
        return compiled
    return compiled if macs < CONV_MAC_CROSSOVER else kernels_py


def pool_kernels():
    """The compiled pool loop wins at every size."""
    if compiled is None or MODE == "python":
        return kernels_py
    return compiled


def worker_cap():
    """Upper bound on worker threads/processes, from TCMTL_THREADS."""
    raw = os.environ.get("TCMTL_THREADS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        cap = int(raw)
    except ValueError:
        raise ConfigError(f"TCMTL_THREADS must be an integer, got {raw!r}")
    if cap < 1:
        raise ConfigError("TCMTL_THREADS must be >= 1")
    return cap
