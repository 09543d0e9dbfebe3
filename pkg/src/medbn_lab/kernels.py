"""Backend selection for the per-channel normalization kernels.

The compiled Cython extension is preferred when it is importable; the
numpy fallback is used otherwise. ``MEDBN_KERNELS=python|compiled``
forces the choice at import time, and ``set_backend`` switches at
runtime (tests pin the python backend for frozen-value snapshots).
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled

_impl = None
backend_name = ""


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name):
    """Select the kernel backend; returns the previously active name."""
    global _impl, backend_name
    if name not in _BACKENDS:
        raise ValueError(
            f"unknown kernel backend {name!r}; available: {available_backends()}"
        )
    previous = backend_name
    _impl = _BACKENDS[name]
    backend_name = name
    return previous


_env = os.environ.get("MEDBN_KERNELS")
if _env:
    set_backend(_env)
else:
    set_backend("compiled" if _compiled is not None else "python")


def tebn_stats(cs):
    return _impl.tebn_stats(cs)


def channel_median(cs):
    return _impl.channel_median(cs)


def medbn_stats(cs):
    return _impl.medbn_stats(cs)


def mad_stats(cs):
    return _impl.mad_stats(cs)


def bn_forward(cs, loc, scale_sq, gamma, beta, eps):
    return _impl.bn_forward(cs, loc, scale_sq, gamma, beta, eps)


def bn_backward_core(cs, g, loc, scale_sq, gamma, eps):
    return _impl.bn_backward_core(cs, g, loc, scale_sq, gamma, eps)


def tebn_stats_backward(cs, cur_loc, dloc, dscale_sq, dz):
    return _impl.tebn_stats_backward(cs, cur_loc, dloc, dscale_sq, dz)


def medbn_stats_backward(cs, eta, sel, dloc, dscale_sq, dz):
    return _impl.medbn_stats_backward(cs, eta, sel, dloc, dscale_sq, dz)


def mad_stats_backward(cs, eta, mad, sel_eta, sel_dev, dloc, dscale_sq, dz):
    return _impl.mad_stats_backward(
        cs, eta, mad, sel_eta, sel_dev, dloc, dscale_sq, dz
    )
