"""Seeded random streams, the sampling distributions and dense affine maps.

Random state is a :class:`numpy.random.Generator` driven by the counter-based
Philox bit generator.  Child streams for layers or repetitions are obtained
with :func:`fork`, which uses numpy's ``SeedSequence`` spawning so that forked
streams are independent and reproducible.
"""

import math

import numpy as np

from .errors import ParameterError, ShapeError

__all__ = [
    "make_rng",
    "fork",
    "gaussian_sample",
    "lognormal_params",
    "lognormal_sample",
    "matvec",
    "matmul",
    "affine",
]


def make_rng(seed=0):
    """Return a deterministic generator for a 64-bit unsigned ``seed``."""
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.Philox(seed))


def fork(rng, n):
    """Split ``rng`` into ``n`` independent child generators."""
    return rng.spawn(n)


def _shape(shape):
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)


def gaussian_sample(rng, mean, var, shape):
    """I.i.d. ``Normal(mean, var)`` samples; ``var == 0`` gives a constant array."""
    if var < 0 or not math.isfinite(var):
        raise ParameterError(f"variance must be finite and non-negative, got {var}")
    shape = _shape(shape)
    if var == 0:
        return np.full(shape, float(mean))
    return rng.normal(float(mean), math.sqrt(var), size=shape)


def lognormal_params(mu_w, var_w):
    """Parameters of the Gaussian whose exponential has mean ``mu_w`` and variance ``var_w``.

    Returns ``(mu_tilde, var_tilde)`` with::

        mu_tilde  = ln(mu_w**2) - ln(var_w + mu_w**2) / 2
        var_tilde = ln(var_w + mu_w**2) - ln(mu_w**2)
    """
    if not mu_w > 0:
        raise ParameterError(f"log-normal mean must be positive, got {mu_w}")
    if var_w < 0:
        raise ParameterError(f"log-normal variance must be non-negative, got {var_w}")
    second = math.log(var_w + mu_w * mu_w)
    first = 2.0 * math.log(mu_w)
    # log1p keeps var_tilde accurate when var_w << mu_w**2
    var_tilde = math.log1p(var_w / (mu_w * mu_w))
    return first - 0.5 * second, var_tilde


def lognormal_sample(rng, mu_tilde, var_tilde, shape):
    """``exp`` of Gaussian samples; every entry is strictly positive."""
    return np.exp(gaussian_sample(rng, mu_tilde, var_tilde, shape))


def _product(a, b):
    with np.errstate(over="ignore", invalid="ignore"):
        return a @ b


def _check_finite(out):
    if not np.all(np.isfinite(out)):
        raise ParameterError("non-finite value produced")
    return out


def matvec(W, x):
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if W.ndim != 2 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ShapeError(f"cannot multiply {W.shape} by vector {x.shape}")
    return _check_finite(_product(W, x))


def matmul(A, B):
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise ShapeError(f"cannot multiply {A.shape} by {B.shape}")
    return _check_finite(_product(A, B))


def affine(W, x, b):
    """``W x + b`` for a vector ``x`` or ``x W^T + b`` row-wise for a batch ``x``.

    Batches are stored one sample per row, so a ``(batch, N)`` input against an
    ``(M, N)`` weight matrix yields a ``(batch, M)`` result.
    """
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or b.shape != (W.shape[0],):
        raise ShapeError(f"bias {b.shape} does not match weights {W.shape}")
    if x.ndim == 1:
        return matvec(W, x) + b
    if x.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ShapeError(f"batch {x.shape} does not match weights {W.shape}")
    return _check_finite(_product(x, W.T) + b)
