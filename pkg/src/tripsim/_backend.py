"""Select the event core: compiled extension if present, else pure Python.

Set TRIPSIM_PURE=1 to force the pure-Python core (useful for the backend
benchmark and for debugging). Both cores implement identical semantics;
``tripsim._pure`` is the reference implementation.
"""

import os

if os.environ.get("TRIPSIM_PURE") == "1":
    from tripsim import _pure as _impl
else:
    try:
        from tripsim import _speedups as _impl  # type: ignore[no-redef]
    except ImportError:
        from tripsim import _pure as _impl

BACKEND = _impl.BACKEND_NAME
EventHeap = _impl.EventHeap
RandomCore = _impl.RandomCore
hash64 = _impl.hash64
mix64 = _impl.mix64
