"""Branchless elementwise kernels for the MLP hot path.

numpy's SIMD ufuncs (exp, log1p) are an order of magnitude faster than
per-element compiled loops on this workload, but ``np.where`` is not; these
helpers stick to arithmetic-only formulations:

    softplus(z)  = max(z, 0) + log1p(exp(-|z|))
    sigmoid(z)   = q + m * (1 - 2q),  q = 1/(1 + exp(-|z|)),  m = [z < 0]

Both share one exp per element.
"""

from __future__ import annotations

import numpy as np


def softplus_pair(z, beta):
    """(softplus(beta z)/beta, sigmoid(beta z)) in one fused pass."""
    zb = z * z.dtype.type(beta)
    a = np.abs(zb)
    np.negative(a, out=a)
    e = np.exp(a, out=a)
    q = 1.0 / (1.0 + e)
    sig = 0.5 + np.sign(zb) * (q - 0.5)
    act = np.log1p(e)
    act += np.maximum(zb, 0.0)
    act *= z.dtype.type(1.0 / beta)
    return act, sig


def softplus_val(z, beta):
    """softplus(beta z)/beta without the derivative channel."""
    zb = z * z.dtype.type(beta)
    act = np.log1p(np.exp(-np.abs(zb)))
    act += np.maximum(zb, 0.0)
    act *= z.dtype.type(1.0 / beta)
    return act


def sigmoid(z):
    """Numerically stable logistic function, branch-free."""
    z = np.asarray(z)
    e = np.exp(-np.abs(z))
    q = 1.0 / (1.0 + e)
    return 0.5 + np.sign(z) * (q - 0.5)
