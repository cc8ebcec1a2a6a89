"""Select the compiled core when it is importable, else the numpy fallback.

Set ``SHELLSPEC_BACKEND=python`` to force the fallback, or ``cython`` to make a
missing extension an import error.
"""

from __future__ import annotations

import os

_choice = os.environ.get("SHELLSPEC_BACKEND", "").strip().lower()

if _choice not in ("", "python", "cython"):
    raise ImportError(f"SHELLSPEC_BACKEND must be 'python' or 'cython', got {_choice!r}")

core = None
if _choice != "python":
    try:
        from . import _ccore as core  # type: ignore[attr-defined]
    except ImportError:
        if _choice == "cython":
            raise
if core is None:
    from . import _pycore as core

BACKEND = "cython" if core.__name__.endswith("_ccore") else "python"


def get_core(name: str | None = None):
    """Return a core module by name (``"python"``/``"cython"``) or the active one."""
    if name is None:
        return core
    if name == "python":
        from . import _pycore

        return _pycore
    if name == "cython":
        from . import _ccore  # type: ignore[attr-defined]

        return _ccore
    raise ValueError(f"unknown backend {name!r}")


def thread_count() -> int:
    """Worker count from ``SHELLSPEC_THREADS`` (default 1)."""
    raw = os.environ.get("SHELLSPEC_THREADS", "1").strip()
    try:
        val = int(raw)
    except ValueError as exc:
        raise ValueError(f"SHELLSPEC_THREADS must be a positive integer, got {raw!r}") from exc
    if val < 1:
        raise ValueError(f"SHELLSPEC_THREADS must be a positive integer, got {raw!r}")
    return val
