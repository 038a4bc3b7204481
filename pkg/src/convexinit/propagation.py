"""Layerwise moment propagation: closed-form recursions and empirical probes.

The analytic side tracks one ``(mean, var, rho)`` triple per layer under the
exchangeable-feature assumption: all features share mean and variance, and
all distinct pairs share one correlation.  The empirical side measures the
same quantities on an actual network.

Correlation is measured the way the recursion defines it, from raw moments
pooled over features: the mean off-diagonal covariance about the global mean
divided by the pooled variance.  Per-pair Pearson correlations are reported
as well; they exclude the spread of per-unit means that weight randomness
produces and therefore read higher on networks with positive mean weights.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .init import InitParams, baseline_init_params, convex_init_params
from .kernels import lrelu_deriv_kernel, lrelu_grad, lrelu_kernel, lrelu_mean, lrelu_sqmean
from .network import Network, NetworkConfig, build_network, forward

__all__ = [
    "MomentState",
    "DeltaMomentState",
    "LayerStats",
    "analytic_forward_stats",
    "analytic_backward_stats",
    "empirical_layer_stats",
    "empirical_backward_stats",
    "aggregate_layer_stats",
    "aggregate_delta_stats",
    "correlated_gaussian",
    "stack_network",
    "sampled_params",
]

N_BINS = 61


@dataclass(frozen=True)
class MomentState:
    mean: float
    var: float
    rho: float
    centred: bool = True

    def __post_init__(self):
        if self.var < 0 or abs(self.rho) > 1 + 1e-12:
            raise ParameterError(f"invalid moment state ({self.mean}, {self.var}, {self.rho})")


@dataclass(frozen=True)
class DeltaMomentState:
    mean: float
    sqmean: float
    mixed: float


@dataclass
class LayerStats:
    layer: int
    mean: float
    var: float
    rho: float
    pearson_rho: float
    offdiag_cov: float
    histogram: np.ndarray
    bin_edges: np.ndarray
    degenerate: bool = False
    corr_matrix: np.ndarray = None


def analytic_forward_stats(params, state):
    """Propagate ``state`` through layers with the given :class:`InitParams`.

    ``state`` describes the pre-activations feeding the first listed layer.
    The returned list starts with ``state`` and has one entry per layer after
    it.  An entry's ``centred`` flag is false when the *incoming* mean exceeds
    a tenth of the incoming standard deviation, i.e. when the centred kernels
    used for that step are outside their regime.
    """
    states = [state]
    for p in params:
        alpha, N = p.alpha, p.N
        centred = abs(state.mean) <= 0.1 * math.sqrt(state.var)
        m_phi = lrelu_mean(state.var, alpha)
        sq_phi = lrelu_sqmean(state.var, alpha)
        var_phi = sq_phi - m_phi * m_phi
        cov_phi = lrelu_kernel(state.rho, state.var, alpha) - m_phi * m_phi
        mean = N * p.mu_w * m_phi + p.mu_b
        cov = p.mu_w**2 * N * (var_phi + (N - 1) * cov_phi)
        var = p.var_b + p.var_w * N * sq_phi + cov
        rho = cov / var if var > 0 else 0.0
        state = MomentState(mean, var, min(1.0, max(-1.0, rho)), centred)
        states.append(state)
    return states


def analytic_backward_stats(params, forward_states, top, fan_outs=None):
    """Propagate delta moments from the top of the stack down.

    ``params[l]`` describes the weights applied to ``phi`` of level ``l``;
    ``forward_states[l]`` supplies the correlation at level ``l`` (anything
    with a ``rho`` attribute).  ``top`` holds the moments injected at the
    last level.  ``fan_outs[l]`` is the number of units of layer ``l``
    (defaults to the fan-in, i.e. square layers).  Returns one
    :class:`DeltaMomentState` per level, bottom first.
    """
    if len(forward_states) != len(params) + 1:
        raise ParameterError("need one forward state per level")
    if fan_outs is None:
        fan_outs = [p.N for p in params]
    deltas = [top]
    d = top
    for p, M, fs in zip(reversed(params), reversed(fan_outs), reversed(forward_states[:-1])):
        alpha = p.alpha
        e_grad = (1.0 + alpha) / 2.0
        e_grad_sq = lrelu_deriv_kernel(1.0, alpha)
        e_grad_pair = lrelu_deriv_kernel(fs.rho, alpha)
        total = M * d.sqmean + M * (M - 1) * d.mixed
        mean = M * p.mu_w * e_grad * d.mean
        sqmean = M * p.var_w * e_grad_sq * d.sqmean + p.mu_w**2 * e_grad_sq * total
        mixed = p.mu_w**2 * e_grad_pair * total
        d = DeltaMomentState(mean, sqmean, mixed)
        deltas.append(d)
    return deltas[::-1]


def _feature_moments(S):
    """Pooled mean/variance, mean off-diagonal covariance and mean Pearson correlation."""
    B, n = S.shape
    m = float(S.mean())
    c = S - m
    var = float(np.mean(c * c))
    row = c.sum(axis=1)
    off = float(np.dot(row, row) / B - n * var) / (n * (n - 1)) if n > 1 else 0.0
    sd = S.std(axis=0)
    ok = sd > 0
    degenerate = bool(not ok.all()) or var == 0
    z = np.zeros_like(S)
    z[:, ok] = (S[:, ok] - S[:, ok].mean(axis=0)) / sd[ok]
    zr = z.sum(axis=1)
    pearson = float(np.dot(zr, zr) / B - ok.sum()) / (n * (n - 1)) if n > 1 else 0.0
    return m, var, off, pearson, degenerate, z


def empirical_layer_stats(net, batch, n_bins=N_BINS, full_corr_width=64):
    """Measure per-layer pre-activation statistics of ``net`` on ``batch``."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] < 100:
        raise ParameterError("need a batch of at least 100 rows")
    trace = forward(net, batch)
    stats = []
    for l, S in enumerate(trace.pre_activations):
        m, var, off, pearson, degenerate, z = _feature_moments(S)
        rho = off / var if var > 0 else 0.0
        half = 3.0 * math.sqrt(var) if var > 0 else 1.0
        inner = np.linspace(m - half, m + half, n_bins + 1)
        edges = np.concatenate(([-np.inf], inner, [np.inf]))
        hist = np.histogram(S, bins=edges)[0]
        corr = None
        if S.shape[1] <= full_corr_width:
            corr = z.T @ z / S.shape[0]
        stats.append(LayerStats(l + 1, m, var, rho, pearson, off, hist, inner, degenerate, corr))
    return stats


def empirical_backward_stats(net, batch, rng, scale=1.0):
    """Backpropagate i.i.d. ``N(0, scale^2)`` deltas from the output and measure their moments.

    Returns one :class:`DeltaMomentState` per pre-activation level, first
    layer first.
    """
    trace = forward(net, batch)
    delta = scale * rng.standard_normal(trace.output.shape)
    out = [_delta_moments(delta)]
    for l in range(net.depth - 1, 0, -1):
        delta = (delta @ trace.effective_weights[l]) * lrelu_grad(
            trace.pre_activations[l - 1], net.alpha
        )
        out.append(_delta_moments(delta))
    return out[::-1]


def _delta_moments(delta):
    B, n = delta.shape
    sq = float(np.mean(delta * delta))
    row = delta.sum(axis=1)
    mixed = float(np.dot(row, row) / B - n * sq) / (n * (n - 1)) if n > 1 else 0.0
    return DeltaMomentState(float(delta.mean()), sq, mixed)


def aggregate_layer_stats(runs):
    """Average raw moments over repetitions; correlation is the ratio of the averages."""
    out = []
    for per_layer in zip(*runs):
        mean = float(np.mean([s.mean for s in per_layer]))
        var = float(np.mean([s.var for s in per_layer]))
        off = float(np.mean([s.offdiag_cov for s in per_layer]))
        pearson = float(np.mean([s.pearson_rho for s in per_layer]))
        hist = np.sum([s.histogram for s in per_layer], axis=0)
        out.append(
            LayerStats(
                per_layer[0].layer,
                mean,
                var,
                off / var if var > 0 else 0.0,
                pearson,
                off,
                hist,
                per_layer[0].bin_edges,
                any(s.degenerate for s in per_layer),
            )
        )
    return out


def aggregate_delta_stats(runs):
    return [
        DeltaMomentState(
            float(np.mean([d.mean for d in level])),
            float(np.mean([d.sqmean for d in level])),
            float(np.mean([d.mixed for d in level])),
        )
        for level in zip(*runs)
    ]


def correlated_gaussian(rng, n_rows, width, var=1.0, rho=0.0):
    """Rows of centred Gaussians with common variance ``var`` and pairwise correlation ``rho >= 0``."""
    if not 0.0 <= rho <= 1.0:
        raise ParameterError(f"rho must lie in [0, 1], got {rho}")
    shared = rng.standard_normal((n_rows, 1))
    own = rng.standard_normal((n_rows, width))
    return math.sqrt(var) * (math.sqrt(rho) * shared + math.sqrt(1.0 - rho) * own)


def stack_network(width, depth, rng, variant="icnn_projection", init_scheme="convex_init",
                  alpha=0.0, rho_star=0.5, var_star=1.0, beta=0.0):
    """A square network whose first layer is the identity.

    Feeding it pre-activations ``s`` makes the first traced level equal to
    ``s`` and the following ``depth`` levels the outputs of sampled layers
    applied to ``phi(s)``.
    """
    config = NetworkConfig(
        (width,) * (depth + 2), alpha, variant, False, init_scheme, rho_star, var_star, beta
    )
    net = build_network(config, rng)
    net.weights[0] = np.eye(width)
    return Network(config, net.weights, net.biases, net.skips)


def sampled_params(config, fan_in):
    """Mean and variance of the weights :func:`build_network` actually draws.

    Convex initialisation samples its target moments directly.  Baseline
    schemes are reported after the variant's positivity mechanism: clamping a
    ``N(0, v)`` weight at zero gives a rectified Gaussian, and exponentiating a
    ``N(0, v)`` log-weight gives a log-normal.
    """
    if config.init_scheme == "convex_init":
        return convex_init_params(
            fan_in, config.alpha, config.rho_star, config.var_star, config.beta
        )
    scheme = "he" if config.init_scheme == "default_he" else "lecun"
    p = baseline_init_params(scheme, fan_in, config.alpha)
    v = p.var_w
    if config.variant == "icnn_projection":
        mu = math.sqrt(v / (2.0 * math.pi))
        return InitParams(mu, v / 2.0 - mu * mu, 0.0, 0.0, p.N, p.alpha)
    if config.variant == "icnn_exp_reparam":
        mu = math.exp(v / 2.0)
        return InitParams(mu, math.expm1(v) * math.exp(v), 0.0, 0.0, p.N, p.alpha)
    return p
