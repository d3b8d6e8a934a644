"""Kernel backend selection.

The compiled extension is used when importable; set ``MOSCO_FLOW_PURE=1`` to
force the numpy fallback.  ``BACKEND`` names the active choice.
"""

from __future__ import annotations

import os

from . import _kernels_py as pure

if os.environ.get("MOSCO_FLOW_PURE", "") not in ("", "0"):
    _impl = pure
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = pure
        BACKEND = "python"

edge_laplacian_apply = _impl.edge_laplacian_apply
tv_dual_fista = _impl.tv_dual_fista
