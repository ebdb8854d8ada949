"""Select compiled kernels or their numpy fallbacks at import time.

Set ``DETFREE_PURE_PYTHON=1`` to force the fallback.
"""
import logging
import os

from . import _fallback

logger = logging.getLogger(__name__)

HAVE_COMPILED = False
if not os.environ.get("DETFREE_PURE_PYTHON"):
    try:
        from . import _kernels as _impl

        HAVE_COMPILED = True
    except ImportError:  # pragma: no cover - depends on the build
        logger.debug("compiled kernels unavailable, using numpy fallback")
        _impl = _fallback
else:
    _impl = _fallback

BACKEND = "compiled" if HAVE_COMPILED else "python"

_num_threads = 1


def set_num_threads(n):
    """Worker threads used by row-parallel kernels (results do not depend on it)."""
    global _num_threads
    if n < 1:
        raise ValueError("thread count must be >= 1")
    _num_threads = int(n)


def get_num_threads():
    return _num_threads


def csr_matvec(indptr, indices, data, x, out):
    _impl.csr_matvec(indptr, indices, data, x, out, _num_threads)


multishift_update = _impl.multishift_update
givens_apply = _impl.givens_apply
wendland_pairs = _impl.wendland_pairs


def implementations():
    """Both implementations keyed by name, for equivalence tests and benchmarks."""
    impls = {"python": _fallback}
    if HAVE_COMPILED:
        impls["compiled"] = _impl
    return impls
