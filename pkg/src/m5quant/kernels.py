"""Kernel backend selection.

The compiled extension is used when it imports; setting ``M5QUANT_PURE_PYTHON=1``
forces the numpy fallback.
"""
from __future__ import annotations

import importlib
import os
from types import ModuleType


def load_backend(name: str) -> ModuleType:
    if name == "cython":
        return importlib.import_module("m5quant._ckernels")
    if name == "python":
        return importlib.import_module("m5quant._pykernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    names = ["python"]
    try:
        load_backend("cython")
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


if os.environ.get("M5QUANT_PURE_PYTHON", "") not in ("", "0"):
    BACKEND = "python"
else:
    BACKEND = available_backends()[0]

_impl = load_backend(BACKEND)

std_normals = _impl.std_normals
esn_impute = _impl.esn_impute
probit_stats = _impl.probit_stats
