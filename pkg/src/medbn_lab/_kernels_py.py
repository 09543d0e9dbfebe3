"""Pure-numpy implementations of the per-channel normalization kernels.

Every function here has a compiled twin in ``_kernels.pyx`` with the same
signature and semantics. Inputs named ``cs`` are channel-sliced arrays of
shape (C, N) where N collects the batch and spatial positions of one
channel. All arrays are float64; index outputs are int64.

The two backends may differ in the last bits of reductions (numpy uses
pairwise summation, the compiled loops are sequential), so cross-backend
comparisons are tolerance-based, never bitwise.
"""

import numpy as np


def _check_group(cs):
    if cs.ndim != 2:
        raise ValueError("channel slices must be 2-D (C, N)")
    if cs.shape[1] == 0:
        raise ValueError("empty reduction group")


def tebn_stats(cs):
    """Per-channel mean and mean squared deviation (biased variance)."""
    _check_group(cs)
    loc = cs.mean(axis=1)
    var = ((cs - loc[:, None]) ** 2).mean(axis=1)
    return loc, var


def channel_median(cs):
    """Per-channel k-th smallest with k = floor(N/2) + 1.

    Returns the selected values and, for the subgradient convention, the
    lowest flat index within each row holding the selected value.
    """
    _check_group(cs)
    k = cs.shape[1] // 2  # 0-based index of the (floor(N/2)+1)-th smallest
    vals = np.partition(cs, k, axis=1)[:, k]
    sel = np.argmax(cs == vals[:, None], axis=1).astype(np.int64)
    return vals, sel


def medbn_stats(cs):
    """Per-channel median and mean squared deviation around the median."""
    eta, sel = channel_median(cs)
    rho2 = ((cs - eta[:, None]) ** 2).mean(axis=1)
    return eta, rho2, sel


def mad_stats(cs):
    """Per-channel median and median absolute deviation.

    Returns (eta, mad, sel_eta, sel_dev) where sel_dev indexes the
    deviation selected as the MAD.
    """
    eta, sel_eta = channel_median(cs)
    dev = np.abs(cs - eta[:, None])
    mad, sel_dev = channel_median(dev)
    return eta, mad, sel_eta, sel_dev


def bn_forward(cs, loc, scale_sq, gamma, beta, eps):
    """gamma * (z - loc) / sqrt(scale_sq + eps) + beta, per channel."""
    inv = 1.0 / np.sqrt(scale_sq + eps)
    return (gamma * inv)[:, None] * (cs - loc[:, None]) + beta[:, None]


def bn_backward_core(cs, g, loc, scale_sq, gamma, eps):
    """Backward of bn_forward treating loc/scale_sq as free inputs.

    Returns (dz, dgamma, dbeta, dloc, dscale_sq) where dz holds only the
    direct path; the estimator-specific stats paths are added by the
    ``*_stats_backward`` kernels.
    """
    s = np.sqrt(scale_sq + eps)
    centered = cs - loc[:, None]
    dbeta = g.sum(axis=1)
    dgamma = (g * centered).sum(axis=1) / s
    dz = g * (gamma / s)[:, None]
    dloc = -(gamma / s) * dbeta
    dscale_sq = -(gamma / (2.0 * s**3)) * (g * centered).sum(axis=1)
    return dz, dgamma, dbeta, dloc, dscale_sq


def tebn_stats_backward(cs, cur_loc, dloc, dscale_sq, dz):
    """Add the mean/variance stats path into dz (in place)."""
    n = cs.shape[1]
    dz += (dloc / n)[:, None]
    dz += dscale_sq[:, None] * (2.0 / n) * (cs - cur_loc[:, None])


def medbn_stats_backward(cs, eta, sel, dloc, dscale_sq, dz):
    """Add the median/rho^2 stats path into dz (in place).

    The median routes all gradient mass to the selected element; rho^2
    contributes both through the squared deviations and through eta.
    """
    n = cs.shape[1]
    rows = np.arange(cs.shape[0])
    dev = cs - eta[:, None]
    dz += dscale_sq[:, None] * (2.0 / n) * dev
    dz[rows, sel] += dloc - dscale_sq * 2.0 * dev.mean(axis=1)


def mad_stats_backward(cs, eta, mad, sel_eta, sel_dev, dloc, dscale_sq, dz):
    """Add the median/MAD stats path into dz (in place).

    scale_sq stores mad**2, so the incoming dscale_sq is converted with
    d(mad^2)/d(mad) = 2*mad before routing through the two selections.
    """
    rows = np.arange(cs.shape[0])
    sgn = np.sign(cs[rows, sel_dev] - eta)
    dmad = dscale_sq * 2.0 * mad
    np.add.at(dz, (rows, sel_dev), dmad * sgn)
    np.add.at(dz, (rows, sel_eta), -dmad * sgn)
    dz[rows, sel_eta] += dloc
