"""Level-set traversal for convex scalar functions.

For convex ``f`` with minimiser ``x_min`` the restriction of ``f`` to any ray
leaving ``x_min`` is non-decreasing, so each ray meets a level ``c > f_min``
at most once (up to flat stretches) and bisection finds the crossing.  A path
on ``{f = c}`` is traced by sweeping the ray direction from ``x_ref - x_min``
towards ``x_tgt - x_min``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .errors import (
    DegenerateLevelError,
    ParameterError,
    UnreachableLevelError,
    VariantError,
)
from .network import Network, forward, input_gradient

__all__ = [
    "LevelTrajectory",
    "network_objective",
    "find_minimum",
    "lp_minimum",
    "level_cross",
    "level_trajectory",
]

CROSS_TOL = 1e-6
MAX_DOUBLINGS = 60
ARMIJO = 1e-4


@dataclass
class LevelTrajectory:
    output_index: int
    level: float
    points: np.ndarray
    residuals: np.ndarray
    tolerance: float


def network_objective(net, output_index):
    """``x -> (f(x), grad f(x))`` for one output of an ICNN."""
    if not isinstance(net, Network):
        raise ParameterError("expected a Network")
    if not net.config.is_icnn:
        raise VariantError("level sets need an input-convex network")
    if not 0 <= output_index < net.config.layer_widths[-1]:
        raise ParameterError(f"output index {output_index} out of range")

    def objective(x):
        value, grad = input_gradient(net, x[None, :], output_index)
        return float(value[0]), grad[0]

    return objective


def _value_fn(net, output_index):
    if callable(net) and not isinstance(net, Network):
        return lambda x: net(x)[0]
    network_objective(net, output_index)
    return lambda x: float(forward(net, x[None, :]).output[0, output_index])


def lp_minimum(net, output_index):
    """Exact minimiser of one ICNN output via its epigraph linear program.

    Each hidden activation ``h = phi(s)`` is relaxed to ``h >= s`` and
    ``h >= alpha s``.  Because every weight applied to ``h`` is non-negative,
    the relaxation is tight at the optimum.  Returns ``None`` when the solver
    fails and raises :class:`UnreachableLevelError` when the output is
    unbounded below.
    """
    network_objective(net, output_index)
    widths = net.config.layer_widths
    d, hidden = widths[0], widths[1:-1]
    offsets = np.concatenate(([d], d + np.cumsum(hidden)))
    n_var = int(offsets[-1])
    rows, rhs = [], []
    for l, width in enumerate(hidden):
        A = np.zeros((width, n_var))
        W = net.effective_weight(l)
        if l == 0:
            A[:, :d] = W
        else:
            A[:, offsets[l - 1]:offsets[l]] = W
        if net.skips and net.skips[l] is not None:
            A[:, :d] += net.skips[l]
        own = slice(int(offsets[l]), int(offsets[l + 1]))
        for slope in (1.0, net.alpha):
            block = slope * A
            block[:, own] -= np.eye(width)
            rows.append(block)
            rhs.append(-slope * net.biases[l])
    L = net.depth - 1
    cost = np.zeros(n_var)
    cost[offsets[L - 1]:offsets[L]] = net.effective_weight(L)[output_index]
    if net.skips and net.skips[L] is not None:
        cost[:d] += net.skips[L][output_index]
    res = linprog(cost, A_ub=np.vstack(rows), b_ub=np.concatenate(rhs),
                  bounds=(None, None), method="highs")
    if res.status == 3:
        raise UnreachableLevelError("output is unbounded below")
    if res.status != 0:
        return None
    return res.x[:d]


def find_minimum(net, output_index, x0, lr=0.1, max_iters=5000, grad_tol=1e-8):
    """Gradient descent with Armijo backtracking on a convex scalar output.

    Plain descent can stall on the kinks of a piecewise-linear ReLU network,
    so for a :class:`Network` the descent result is compared with
    :func:`lp_minimum` and the lower of the two is returned.

    Parameters
    ----------
    net : Network or callable
        An ICNN, or any ``x -> (value, gradient)`` convex objective.
    output_index : int
        Output unit to minimise (ignored for callables).
    x0 : array_like
        Starting point.
    lr : float
        Initial step size; it grows after accepted steps and halves on
        rejection.
    max_iters : int
        Iteration budget.
    grad_tol : float
        Stop once the gradient norm falls below this.

    Returns
    -------
    x_min : ndarray
        Best iterate found.
    f_min : float
        Objective at ``x_min``.
    """
    is_net = isinstance(net, Network)
    objective = network_objective(net, output_index) if is_net else net
    x, f = _descend(objective, x0, lr, max_iters, grad_tol)
    if is_net:
        x_lp = lp_minimum(net, output_index)
        if x_lp is not None:
            f_lp = objective(x_lp)[0]
            if f_lp < f:
                x, f = x_lp, f_lp
    return x, f


def _descend(objective, x0, lr, max_iters, grad_tol):
    x = np.array(x0, dtype=np.float64)
    f, g = objective(x)
    if not math.isfinite(f):
        raise ParameterError(f"objective is not finite at the start ({f})")
    step = lr
    for _ in range(max_iters):
        gn2 = float(np.dot(g, g))
        if math.sqrt(gn2) < grad_tol:
            break
        while True:
            x_new = x - step * g
            f_new, g_new = objective(x_new)
            if not math.isfinite(f_new):
                raise ParameterError(f"objective became {f_new} during descent")
            if f_new <= f - ARMIJO * step * gn2:
                break
            step *= 0.5
            if step * math.sqrt(gn2) < 1e-15 * (1.0 + float(np.linalg.norm(x))):
                return x, f
        x, f, g = x_new, f_new, g_new
        step *= 2.0
    return x, f


def level_cross(f, x_center, direction, c, t_max=1.0, tol=None):
    """Distance ``t >= 0`` along ``direction`` where ``f`` reaches level ``c``.

    ``f`` maps a point to a scalar and must be convex with ``f(x_center) <= c``.
    ``t_max`` is doubled until it brackets the crossing, at most 60 times.
    The result satisfies ``|f(x_center + t d) - c| <= tol`` with default
    ``tol = 1e-6 (1 + |c|)``.
    """
    x_center = np.asarray(x_center, dtype=np.float64)
    d = np.asarray(direction, dtype=np.float64)
    norm = float(np.linalg.norm(d))
    if not norm > 0:
        raise ParameterError("direction must be non-zero")
    d = d / norm
    if not t_max > 0:
        raise ParameterError("t_max must be positive")
    tol = CROSS_TOL * (1.0 + abs(c)) if tol is None else tol
    f0 = f(x_center)
    if abs(f0 - c) <= tol:
        return 0.0
    if f0 > c:
        raise ParameterError(f"centre value {f0} already exceeds the level {c}")
    lo, hi = 0.0, float(t_max)
    for _ in range(MAX_DOUBLINGS + 1):
        f_hi = f(x_center + hi * d)
        if f_hi > c:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise UnreachableLevelError(f"level {c} not reached within t = {hi / 2.0:g}")
    # keep f(lo) <= c so returned points never leave the sub-level set
    f_lo = f0 if lo == 0.0 else f(x_center + lo * d)
    for _ in range(200):
        if c - f_lo <= tol or hi - lo <= 1e-15 * hi:
            break
        t = 0.5 * (lo + hi)
        ft = f(x_center + t * d)
        if ft <= c:
            lo, f_lo = t, ft
        else:
            hi = t
    return lo


def _sweep(u, v, n_points):
    """Unit directions rotating ``u`` into ``v`` at uniform angular steps."""
    cos = float(np.clip(np.dot(u, v), -1.0, 1.0))
    omega = math.acos(cos)
    w = v - cos * u
    wn = float(np.linalg.norm(w))
    if wn < 1e-12:
        if cos > 0:
            w = np.zeros_like(u)
        else:
            # antipodal: turn through any perpendicular direction
            e = np.zeros_like(u)
            e[int(np.argmin(np.abs(u)))] = 1.0
            w = e - np.dot(e, u) * u
            w /= np.linalg.norm(w)
    else:
        w /= wn
    steps = np.linspace(0.0, 1.0, n_points) if n_points > 1 else np.zeros(1)
    return [math.cos(s * omega) * u + math.sin(s * omega) * w for s in steps]


def level_trajectory(net, output_index, x_ref, x_tgt, n_points, rng=None, n_restarts=0,
                     tol=1e-4):
    """Trace ``{f = f(x_ref)}`` from ``x_ref`` towards the direction of ``x_tgt``.

    The minimiser is found by descent from ``x_ref``.  ``n_restarts`` extra
    descents from ``x_ref`` plus unit Gaussian noise (drawn from ``rng``) only
    replace it when they reach a value lower by more than ``tol (1 + |f|)``,
    so for a convex output the trajectory does not depend on ``rng``.
    """
    x_ref = np.asarray(x_ref, dtype=np.float64)
    x_tgt = np.asarray(x_tgt, dtype=np.float64)
    if n_points < 1:
        raise ParameterError("need at least one point")
    if np.array_equal(x_ref, x_tgt):
        raise ParameterError("reference and target coincide")
    f = _value_fn(net, output_index)
    c = f(x_ref)
    x_min, f_min = find_minimum(net, output_index, x_ref)
    if n_restarts:
        if rng is None:
            raise ParameterError("restarts need a random generator")
        for _ in range(n_restarts):
            x_r, f_r = find_minimum(net, output_index, x_ref + rng.standard_normal(x_ref.shape))
            if f_r < f_min - tol * (1.0 + abs(f_min)):
                x_min, f_min = x_r, f_r
    if c <= f_min + tol * (1.0 + abs(c)):
        raise DegenerateLevelError(f"level {c} is not above the minimum {f_min}")
    u = x_ref - x_min
    v = x_tgt - x_min
    if not np.linalg.norm(v) > 0:
        raise ParameterError("target coincides with the minimiser")
    dirs = _sweep(u / np.linalg.norm(u), v / np.linalg.norm(v), n_points)
    scale = float(np.linalg.norm(u))
    points = [x_ref.copy()]
    for d in dirs[1:]:
        t = level_cross(f, x_min, d, c, t_max=scale)
        points.append(x_min + t * d)
    points = np.array(points)
    residuals = np.array([abs(f(p) - c) for p in points])
    return LevelTrajectory(output_index, c, points, residuals, tol * (1.0 + abs(c)))
