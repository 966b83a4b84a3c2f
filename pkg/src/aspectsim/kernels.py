"""Backend selector for the numeric hot kernels.

Prefers the compiled extension and falls back to pure numpy when it is
missing.  Set ``ASPECTSIM_BACKEND=pure`` or ``ASPECTSIM_BACKEND=compiled`` to
force a choice; forcing ``compiled`` raises if the extension did not build.
"""

from __future__ import annotations

import os

from . import _fallback

_forced = os.environ.get("ASPECTSIM_BACKEND", "").strip().lower()

if _forced == "pure":
    _impl = _fallback
    BACKEND = "pure"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise ImportError(
                "ASPECTSIM_BACKEND=compiled but the aspectsim._core extension "
                "is not available; reinstall with a working C toolchain"
            ) from None
        _impl = _fallback
        BACKEND = "pure"

pairwise_sqdist = _impl.pairwise_sqdist
sinkhorn_log = _impl.sinkhorn_log
