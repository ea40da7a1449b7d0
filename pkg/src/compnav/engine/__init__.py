"""Episode-kernel backend selection.

Prefers the compiled kernel when the extension is importable, otherwise
falls back to the pure-Python twin.  Set COMPNAV_PURE_PYTHON=1 to force the
fallback (the parity tests and the benchmark do this to compare backends).
Both backends are bit-identical by contract.
"""

import os

from . import pykernel

if os.environ.get("COMPNAV_PURE_PYTHON", "") == "1":
    _impl = pykernel
else:
    try:
        from . import _kernel as _impl
    except ImportError:
        _impl = pykernel

BACKEND = _impl.BACKEND_NAME
run_episode = _impl.run_episode

KIND_GOTO = pykernel.KIND_GOTO
KIND_GOTO_FAULTY = pykernel.KIND_GOTO_FAULTY
KIND_TILE = pykernel.KIND_TILE
KIND_CALLBACK = pykernel.KIND_CALLBACK
OUTCOME_SUCCESS = pykernel.OUTCOME_SUCCESS
OUTCOME_COLLISION = pykernel.OUTCOME_COLLISION
OUTCOME_TIMEOUT = pykernel.OUTCOME_TIMEOUT
