"""Initialisation parameters, the layer fixed-point map and its stability.

:func:`convex_init_params` places the joint fixed point ``(var_star,
rho_star)`` of the per-layer (variance, correlation) recursion where the
caller asks for it.  Biases are centring: ``mu_b = -N mu_w E[phi(s)]`` makes
the pre-activation mean vanish, which is what lets the centred Gaussian
kernels describe the next layer.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePropagationError, InfeasibleParametersError, ParameterError
from .kernels import f_c, f_c_prime, lrelu_mean
from .numerics import lognormal_params

__all__ = [
    "InitParams",
    "FixedPoint",
    "convex_init_params",
    "baseline_init_params",
    "fixed_point_map",
    "fixed_point_jacobian",
    "jacobian_eigenvalues",
    "stability_threshold",
]


@dataclass(frozen=True)
class InitParams:
    """Distribution parameters for one layer's weights and biases."""

    mu_w: float
    var_w: float
    mu_b: float
    var_b: float
    N: int
    alpha: float = 0.0
    rho_star: float = 0.0
    var_star: float = 1.0
    beta: float = 0.0

    @property
    def lognormal(self):
        """``(mu_tilde, var_tilde)`` of the log-normal with mean ``mu_w`` and variance ``var_w``."""
        return lognormal_params(self.mu_w, self.var_w)

    def as_row(self):
        row = {
            "N": self.N,
            "alpha": self.alpha,
            "rho_star": self.rho_star,
            "var_star": self.var_star,
            "beta": self.beta,
            "mu_w": self.mu_w,
            "var_w": self.var_w,
            "mu_b": self.mu_b,
            "var_b": self.var_b,
        }
        if self.mu_w > 0:
            row["mu_tilde"], row["var_tilde"] = self.lognormal
        else:
            row["mu_tilde"] = row["var_tilde"] = float("nan")
        return row


@dataclass(frozen=True)
class FixedPoint:
    var: float
    rho: float

    def __post_init__(self):
        if not self.var > 0:
            raise ParameterError(f"fixed-point variance must be positive, got {self.var}")
        if not -1.0 <= self.rho <= 1.0:
            raise ParameterError(f"fixed-point correlation must lie in [-1, 1], got {self.rho}")


def convex_init_params(N, alpha=0.0, rho_star=0.5, var_star=1.0, beta=0.0):
    """Initialisation for a non-negative layer with fan-in ``N``.

    Parameters
    ----------
    N : int
        Fan-in of the layer.
    alpha : float
        Leaky-ReLU slope of the activation feeding the layer.
    rho_star, var_star : float
        Target feature correlation and pre-activation variance.
    beta : float
        Fraction of the admissible variance budget assigned to random biases.

    Returns
    -------
    InitParams
        With ``mu_w = sqrt(rho_star / f_c(rho_star))``,
        ``var_w = 2 / (1 + alpha^2) / N * (1 - rho_star) * (1 - beta)``,
        ``mu_b = -N mu_w (1 - alpha) sqrt(var_star / 2 pi)`` and
        ``var_b = beta (1 - rho_star) var_star``.
    """
    if N < 1 or int(N) != N:
        raise ParameterError(f"fan-in must be a positive integer, got {N}")
    if not 0.0 <= rho_star < 1.0:
        raise ParameterError(f"rho_star must lie in [0, 1), got {rho_star}")
    if not var_star > 0:
        raise ParameterError(f"var_star must be positive, got {var_star}")
    if not 0.0 <= beta < 1.0:
        raise ParameterError(f"beta must lie in [0, 1), got {beta}")
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    N = int(N)
    fc = f_c(rho_star, N, alpha)
    if rho_star > 0 and not fc > 0:
        raise InfeasibleParametersError(
            f"f_c({rho_star}) = {fc} is not positive for N={N}, alpha={alpha}"
        )
    mu_w = math.sqrt(rho_star / fc) if rho_star > 0 else 0.0
    var_w = 2.0 / (1.0 + alpha * alpha) / N * (1.0 - rho_star) * (1.0 - beta)
    mu_b = -N * mu_w * lrelu_mean(var_star, alpha)
    var_b = beta * (1.0 - rho_star) * var_star
    return InitParams(mu_w, var_w, mu_b, var_b, N, alpha, rho_star, var_star, beta)


def baseline_init_params(scheme, N, alpha=0.0):
    """Centred LeCun (``var_w = 1/N``) or He (``var_w = 2 / ((1 + alpha^2) N)``) parameters."""
    if N < 1:
        raise ParameterError(f"fan-in must be positive, got {N}")
    if scheme == "lecun":
        var_w = 1.0 / N
    elif scheme == "he":
        var_w = 2.0 / (1.0 + alpha * alpha) / N
    else:
        raise ParameterError(f"unknown baseline scheme {scheme!r}")
    return InitParams(0.0, var_w, 0.0, 0.0, int(N), alpha)


def fixed_point_map(state, params):
    """One layer of the (variance, correlation) recursion.

    The output variance is ``var_b + var_w N (1 + alpha^2) var / 2 + cov`` with
    off-diagonal covariance ``cov = mu_w^2 var f_c(rho)``.  The correlation
    component is ``mu_w^2 f_c(rho)``, i.e. the covariance measured against
    the *incoming* variance; it coincides with ``cov / var'`` on the fixed
    point, and it is the component whose slope decides stability.  Values
    above one are clipped, since they only arise when the correlation has
    already run away.
    """
    N, alpha = params.N, params.alpha
    fc = f_c(state.rho, N, alpha)
    cov = params.mu_w**2 * state.var * fc
    var = params.var_b + params.var_w * N * (1.0 + alpha * alpha) * state.var / 2.0 + cov
    if not var > 0:
        raise DegeneratePropagationError(f"propagated variance {var} is not positive")
    rho = min(1.0, max(-1.0, params.mu_w**2 * fc))
    return FixedPoint(var, rho)


def fixed_point_jacobian(state, params, eps=1e-6):
    """Central finite-difference Jacobian of :func:`fixed_point_map` at ``state``.

    Rows are ``(var', rho')``, columns ``(var, rho)``.  The correlation step
    is shrunk near the boundary of ``[-1, 1]``.
    """
    J = np.empty((2, 2))
    h_var = eps * max(1.0, state.var)
    h_rho = min(eps, (1.0 - abs(state.rho)) / 2.0) if abs(state.rho) < 1 else eps
    lo = fixed_point_map(FixedPoint(state.var - h_var, state.rho), params)
    hi = fixed_point_map(FixedPoint(state.var + h_var, state.rho), params)
    J[:, 0] = [(hi.var - lo.var) / (2 * h_var), (hi.rho - lo.rho) / (2 * h_var)]
    lo = fixed_point_map(FixedPoint(state.var, state.rho - h_rho), params)
    hi = fixed_point_map(FixedPoint(state.var, state.rho + h_rho), params)
    J[:, 1] = [(hi.var - lo.var) / (2 * h_rho), (hi.rho - lo.rho) / (2 * h_rho)]
    return J


def jacobian_eigenvalues(rho_star, N, alpha=0.0):
    """``(rho_star, rho_star f_c'(rho_star) / f_c(rho_star))``.

    The second value is the slope of the correlation recursion at the fixed
    point; the fixed point repels correlation perturbations when it exceeds
    one.  The first value is the closed-form diagonal entry reported for the
    variance direction; the finite-difference Jacobian of
    :func:`fixed_point_map` has ``1 - beta (1 - rho_star)`` in that position
    because the variance recursion is homogeneous in the variance.
    """
    fc = f_c(rho_star, N, alpha)
    if not fc > 0:
        raise InfeasibleParametersError(f"f_c({rho_star}) = {fc} is not positive")
    return rho_star, rho_star * f_c_prime(rho_star, N, alpha) / fc


def stability_threshold():
    """Largest fan-in (exclusive) with a stable correlation at ``rho_star = 1/2``, ``alpha = 0``."""
    return 1.0 + (2.0 * math.pi - 2.0) / (2.0 - math.sqrt(3.0))

