"""Backend selection: compiled core when available, numpy fallback otherwise.

The compiled extension ``nmpcm._core`` and the fallback ``nmpcm._purepy``
expose the same kernel interface (dynamics, RK4 sensitivities, `DenseQp`,
`RtiCore`, `run_cycles`). Selection happens once at import; the environment
variable ``NMPCM_BACKEND`` forces a choice:

    NMPCM_BACKEND=compiled   require the extension (ImportError if missing)
    NMPCM_BACKEND=python     force the numpy fallback
"""

from __future__ import annotations

import os

from . import _purepy

try:
    from . import _core
except ImportError:
    _core = None

_MODULES = {"python": _purepy}
if _core is not None:
    _MODULES["compiled"] = _core


def _select():
    forced = os.environ.get("NMPCM_BACKEND", "").strip().lower()
    if forced in ("python", "purepy", "py"):
        return "python"
    if forced in ("compiled", "c", "core"):
        if _core is None:
            raise ImportError(
                "NMPCM_BACKEND=compiled but the nmpcm._core extension is not built"
            )
        return "compiled"
    if forced not in ("", "auto"):
        raise ValueError(f"unrecognized NMPCM_BACKEND value: {forced!r}")
    return "compiled" if _core is not None else "python"


_DEFAULT = _select()


def default_backend() -> str:
    """Name of the backend selected at import time."""
    return _DEFAULT


def available_backends() -> list[str]:
    return sorted(_MODULES)


def get_module(name: str | None = None):
    """Backend module by name; None means the import-time default."""
    if name is None:
        name = _DEFAULT
    try:
        return _MODULES[name]
    except KeyError:
        raise ValueError(
            f"unknown backend {name!r}; available: {available_backends()}"
        ) from None
