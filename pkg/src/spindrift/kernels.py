"""Backend selection for the hot kernels.

The compiled extension is preferred; set ``SPINDRIFT_PURE_PYTHON=1`` to force
the numpy fallback.  Both expose ``llg_rhs``, ``heun_step``,
``diffusion_triplets`` and ``drift_divergence``.
"""
import importlib
import os
from types import ModuleType


def load_backend(name: str) -> ModuleType:
    if name == "cython":
        return importlib.import_module("spindrift._kernels")
    if name == "python":
        return importlib.import_module("spindrift._kernels_py")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    names = ["python"]
    try:
        load_backend("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


if os.environ.get("SPINDRIFT_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = load_backend("python")
else:
    try:
        _impl = load_backend("cython")
    except ImportError:
        _impl = load_backend("python")

BACKEND = "cython" if _impl.__name__.endswith("._kernels") else "python"

llg_rhs = _impl.llg_rhs
heun_step = _impl.heun_step
diffusion_triplets = _impl.diffusion_triplets
drift_divergence = _impl.drift_divergence
