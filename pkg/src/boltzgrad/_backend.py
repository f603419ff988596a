"""Selects the compiled kernels when available, else the numpy fallback.

Set ``BOLTZGRAD_BACKEND=python`` to force the fallback at import time.
"""

from __future__ import annotations

import contextlib
import importlib
import os
from types import ModuleType

from . import _pykernels


def _load(name: str) -> ModuleType:
    if name == "python":
        return _pykernels
    if name == "compiled":
        return importlib.import_module("boltzgrad._ckernels")
    raise ValueError(f"unknown backend {name!r}")


def available() -> list[str]:
    names = ["python"]
    try:
        _load("compiled")
    except ImportError:
        pass
    else:
        names.insert(0, "compiled")
    return names


def _initial() -> ModuleType:
    if os.environ.get("BOLTZGRAD_BACKEND", "").lower() == "python":
        return _pykernels
    try:
        return _load("compiled")
    except ImportError:
        return _pykernels


_active: ModuleType = _initial()


def active() -> ModuleType:
    return _active


def name() -> str:
    return _active.BACKEND


def set_backend(name: str) -> None:
    global _active
    _active = _load(name)


@contextlib.contextmanager
def use_backend(name: str):
    global _active
    previous = _active
    _active = _load(name)
    try:
        yield _active
    finally:
        _active = previous
