"""Gaussian expectation kernels of (leaky) ReLU and a Monte-Carlo oracle.

All kernels assume a centred bivariate Gaussian input ``(s1, s2)`` with common
variance ``var`` and correlation ``rho``.  ``alpha`` is the negative slope of
the leaky ReLU; ``alpha = 0`` gives the ReLU and ``alpha = 1`` the identity.
"""

import math

import numpy as np

from .errors import ParameterError
from .numerics import fork

__all__ = [
    "lrelu",
    "lrelu_grad",
    "relu_kernel",
    "lrelu_kernel",
    "lrelu_mean",
    "lrelu_sqmean",
    "lrelu_deriv_kernel",
    "f_c",
    "f_c_prime",
    "kernel_mc_oracle",
]

TWO_PI = 2.0 * math.pi


def lrelu(s, alpha=0.0):
    return np.where(s >= 0, s, alpha * s)


def lrelu_grad(s, alpha=0.0):
    return np.where(s >= 0, 1.0, alpha)


def _check(rho=0.0, var=0.0, alpha=0.0):
    if not -1.0 - 1e-12 <= rho <= 1.0 + 1e-12:
        raise ParameterError(f"correlation must lie in [-1, 1], got {rho}")
    if not var >= 0:
        raise ParameterError(f"variance must be non-negative, got {var}")
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"leaky slope must lie in [0, 1], got {alpha}")


def _arc(rho):
    """``sqrt(1 - rho^2) + rho * arccos(-rho)`` with the argument clamped."""
    rho = min(1.0, max(-1.0, rho))
    return math.sqrt(max(0.0, 1.0 - rho * rho)) + rho * math.acos(-rho)


def relu_kernel(rho, var):
    """``E[relu(s1) relu(s2)]``."""
    _check(rho, var)
    return var / TWO_PI * _arc(rho)


def lrelu_kernel(rho, var, alpha=0.0):
    """``E[lrelu(s1) lrelu(s2)]``; equals :func:`relu_kernel` at ``alpha = 0``."""
    _check(rho, var, alpha)
    rho = min(1.0, max(-1.0, rho))
    return (1.0 - alpha) ** 2 * var / TWO_PI * _arc(rho) + alpha * var * rho


def lrelu_mean(var, alpha=0.0):
    """``E[lrelu(s)]`` for ``s ~ N(0, var)``."""
    _check(var=var, alpha=alpha)
    return (1.0 - alpha) * math.sqrt(var / TWO_PI)


def lrelu_sqmean(var, alpha=0.0):
    """``E[lrelu(s)^2] = (1 + alpha^2) var / 2``."""
    _check(var=var, alpha=alpha)
    return (1.0 + alpha * alpha) * var / 2.0


def lrelu_deriv_kernel(rho, alpha=0.0):
    """``E[lrelu'(s1) lrelu'(s2)]``; independent of the variance."""
    _check(rho, alpha=alpha)
    rho = min(1.0, max(-1.0, rho))
    return (1.0 - alpha) ** 2 / TWO_PI * math.acos(-rho) + alpha


def f_c(rho, N, alpha=0.0):
    """Correlation-propagation function of a layer with fan-in ``N``.

    With centred inputs of second moment ``q`` and correlation ``rho``, the
    off-diagonal output covariance of a layer whose weights have mean ``mu_w``
    is ``mu_w**2 * q * f_c(rho)``.
    """
    _check(rho, alpha=alpha)
    if N < 1:
        raise ParameterError(f"fan-in must be at least 1, got {N}")
    a2 = (1.0 - alpha) ** 2
    inner = (1.0 + alpha * alpha) * math.pi - N * a2
    inner += (N - 1) * (a2 * _arc(rho) + TWO_PI * alpha * rho)
    return N / TWO_PI * inner


def f_c_prime(rho, N, alpha=0.0):
    """Derivative of :func:`f_c` with respect to ``rho``."""
    _check(rho, alpha=alpha)
    if N < 1:
        raise ParameterError(f"fan-in must be at least 1, got {N}")
    rho = min(1.0, max(-1.0, rho))
    a2 = (1.0 - alpha) ** 2
    return N / TWO_PI * (N - 1) * a2 * math.acos(-rho) + N * (N - 1) * alpha


def _mc_moments(rng, rho, var, alpha, n, mode):
    """Sum and sum of squares of ``n`` kernel samples (pairwise summation within a shard)."""
    sd = math.sqrt(var)
    z1 = rng.standard_normal(n)
    if mode == "mean":
        z1 *= sd
        vals = np.maximum(z1, alpha * z1)
    else:
        z2 = rng.standard_normal(n)
        z2 *= math.sqrt(max(0.0, 1.0 - rho * rho))
        z2 += rho * z1
        if mode == "value":
            z1 *= sd
            z2 *= sd
            vals = np.maximum(z1, alpha * z1) * np.maximum(z2, alpha * z2)
        else:
            vals = np.where(z1 >= 0, 1.0, alpha) * np.where(z2 >= 0, 1.0, alpha)
    return float(np.sum(vals)), float(np.dot(vals, vals))


def kernel_mc_oracle(rng, rho, var, alpha, n_samples, mode="value", n_shards=1):
    """Monte-Carlo estimate of a kernel with its standard error.

    ``mode`` selects ``E[phi(s1) phi(s2)]`` (``"value"``),
    ``E[phi'(s1) phi'(s2)]`` (``"derivative"``) or ``E[phi(s1)]``
    (``"mean"``).  Samples are drawn in ``n_shards`` child streams and the
    partial sums merged with compensated summation, so the result does not
    depend on shard evaluation order beyond rounding of the final merge.
    """
    _check(rho, var, alpha)
    if abs(rho) > 1.0:
        raise ParameterError(f"correlation must lie in [-1, 1], got {rho}")
    if n_samples < 1000:
        raise ParameterError(f"need at least 1000 samples, got {n_samples}")
    if mode not in ("value", "derivative", "mean"):
        raise ParameterError(f"unknown mode {mode!r}")
    sizes = [n_samples // n_shards + (i < n_samples % n_shards) for i in range(n_shards)]
    streams = fork(rng, n_shards) if n_shards > 1 else [rng]
    parts = [_mc_moments(g, rho, var, alpha, k, mode) for g, k in zip(streams, sizes)]
    total = math.fsum(p[0] for p in parts)
    total_sq = math.fsum(p[1] for p in parts)
    mean = total / n_samples
    sample_var = max(0.0, (total_sq - n_samples * mean * mean) / (n_samples - 1))
    return mean, math.sqrt(sample_var / n_samples)
