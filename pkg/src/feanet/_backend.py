"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise, or
when ``FEANET_PURE_PYTHON=1`` is set, the numpy ``_fallback`` is used.
``use()`` switches at runtime, which the tests rely on to exercise both.
"""
from __future__ import annotations

import logging
import os

from . import _fallback

log = logging.getLogger(__name__)

try:
    from . import _core
except ImportError:  # pragma: no cover - depends on the build
    _core = None

_BACKENDS = {"python": _fallback}
if _core is not None:
    _BACKENDS["cython"] = _core


def available() -> tuple:
    return tuple(_BACKENDS)


def _initial():
    if os.environ.get("FEANET_PURE_PYTHON", "") not in ("", "0"):
        return _fallback
    if _core is None:
        log.info("compiled core unavailable, using numpy fallback")
        return _fallback
    return _core


active = _initial()


def use(name: str):
    """Select a backend by name and return the previously active name."""
    global active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {available()}")
    prev = active.NAME
    active = _BACKENDS[name]
    return prev


def get():
    return active


def set_num_threads(n: int) -> None:
    for mod in _BACKENDS.values():
        mod.set_num_threads(int(n))


def _env_threads():
    raw = os.environ.get("FEANET_THREADS")
    if raw:
        try:
            set_num_threads(int(raw))
        except ValueError:
            log.warning("ignoring non-integer FEANET_THREADS=%r", raw)


_env_threads()
