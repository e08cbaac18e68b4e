"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise the numpy
fallback is used. Set ``MODEL1IR_BACKEND=python`` to force the fallback.
"""

import os

from . import _fallback

BACKENDS = {"python": _fallback}

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None
else:
    BACKENDS["compiled"] = _kernels

if os.environ.get("MODEL1IR_BACKEND", "").lower() == "python" or _kernels is None:
    BACKEND = "python"
else:
    BACKEND = "compiled"

_impl = BACKENDS[BACKEND]
model1_rerank = _impl.model1_rerank
em_estep = _impl.em_estep


def get_backend(name: str):
    """Return the kernel module for ``name`` (``"python"`` or ``"compiled"``)."""
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {sorted(BACKENDS)}") from None
