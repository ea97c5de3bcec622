"""Hot inner loops, compiled when the extension is built, pure Python otherwise.

The backend is picked once at import. Set ``FDMS_PURE_PYTHON=1`` to force the
fallback (useful for benchmarking and for checking that both agree).
"""

import os

from . import _fallback

fallback = _fallback
native = None

if os.environ.get("FDMS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _native as native
    except ImportError:  # extension not built
        native = None

backend = native if native is not None else fallback
BACKEND_NAME = "native" if native is not None else "python"

biquad_cascade = backend.biquad_cascade
xoshiro_fill = backend.xoshiro_fill
conv2d_forward = backend.conv2d_forward
conv2d_backward = backend.conv2d_backward
maxpool2_forward = backend.maxpool2_forward
maxpool2_backward = backend.maxpool2_backward

__all__ = [
    "BACKEND_NAME",
    "backend",
    "biquad_cascade",
    "conv2d_backward",
    "conv2d_forward",
    "fallback",
    "maxpool2_backward",
    "maxpool2_forward",
    "native",
    "xoshiro_fill",
]
