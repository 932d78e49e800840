"""Kernel backend selection.

Hot array kernels exist in two variants: numba @njit loops and pure-numpy
fallbacks. The numba path is used when numba imports successfully, unless
the env var LATENTBLEND_NUMBA is set to 0/false/off. Both paths are written
to be bit-identical (same arithmetic, same accumulation order), so the flag
only affects speed. See benchmarks/bench_kernels.py for a comparison.
"""

import os

_FALSY = {"0", "false", "off", "no"}


def _env_wants_numba() -> bool:
    return os.environ.get("LATENTBLEND_NUMBA", "1").strip().lower() not in _FALSY


try:
    import numba  # noqa: F401

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - environment dependent
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and _env_wants_numba()


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
