"""Fully-connected (input-convex) networks with traced forward and backward passes.

Layer ``l`` computes ``s_l = W_l phi(s_{l-1}) + [D_l x] + b_l`` where
``phi`` is the leaky ReLU and ``s_0 = x`` enters the first layer without an
activation.  In the ICNN variants every weight matrix after the first is
non-negative: either clamped after each update (``icnn_projection``) or
stored as log-weights and exponentiated (``icnn_exp_reparam``).  Skip
matrices ``D_l`` from the raw input stay unconstrained, as does ``W_1``.

Batches are stored one sample per row.
"""

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError, ShapeError, VariantError
from .init import baseline_init_params, convex_init_params
from .kernels import lrelu, lrelu_grad
from .numerics import fork, gaussian_sample, lognormal_sample

__all__ = [
    "NetworkConfig",
    "Network",
    "ForwardTrace",
    "ConvexityReport",
    "build_network",
    "forward",
    "backward",
    "input_gradient",
    "project_nonneg",
    "convexity_check",
    "save_checkpoint",
    "load_checkpoint",
]

VARIANTS = ("nonconvex", "icnn_projection", "icnn_exp_reparam")
INIT_SCHEMES = ("default_he", "convex_init", "lecun")
CKPT_HEADER = "ICNN-CKPT v1"


@dataclass(frozen=True)
class NetworkConfig:
    layer_widths: tuple
    alpha: float = 0.0
    variant: str = "nonconvex"
    skip_connections: bool = False
    init_scheme: str = "default_he"
    rho_star: float = 0.5
    var_star: float = 1.0
    beta: float = 0.0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 3 or min(widths) < 1:
            raise ParameterError(
                f"need input, at least one hidden and an output width, got {widths}"
            )
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown variant {self.variant!r}")
        if self.init_scheme not in INIT_SCHEMES:
            raise ParameterError(f"unknown init scheme {self.init_scheme!r}")
        if self.skip_connections and self.variant == "nonconvex":
            raise ParameterError("skip connections are only defined for ICNN variants")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def is_icnn(self):
        return self.variant != "nonconvex"

    def to_line(self):
        parts = [
            "widths=" + ",".join(str(w) for w in self.layer_widths),
            f"alpha={self.alpha!r}",
            f"variant={self.variant}",
            f"skip={int(self.skip_connections)}",
            f"init={self.init_scheme}",
            f"rho_star={self.rho_star!r}",
            f"var_star={self.var_star!r}",
            f"beta={self.beta!r}",
        ]
        return "config " + " ".join(parts)

    @classmethod
    def from_line(cls, line):
        tokens = line.split()
        if not tokens or tokens[0] != "config":
            raise FormatError(f"expected config line, got {line!r}")
        kv = dict(t.split("=", 1) for t in tokens[1:])
        try:
            return cls(
                layer_widths=tuple(int(w) for w in kv["widths"].split(",")),
                alpha=float(kv["alpha"]),
                variant=kv["variant"],
                skip_connections=bool(int(kv["skip"])),
                init_scheme=kv["init"],
                rho_star=float(kv["rho_star"]),
                var_star=float(kv["var_star"]),
                beta=float(kv["beta"]),
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"malformed config line {line!r}: {exc}") from None


@dataclass
class Network:
    """Realised parameters.

    ``weights[l]`` holds log-weights for constrained layers of the
    ``icnn_exp_reparam`` variant; use :meth:`effective_weight` for the matrix
    that is actually applied.
    """

    config: NetworkConfig
    weights: list
    biases: list
    skips: list = field(default_factory=list)

    @property
    def depth(self):
        return len(self.weights)

    @property
    def alpha(self):
        return self.config.alpha

    def constrained(self, l):
        return self.config.is_icnn and l > 0

    def effective_weight(self, l):
        if self.config.variant == "icnn_exp_reparam" and l > 0:
            return np.exp(self.weights[l])
        return self.weights[l]

    def parameters(self):
        """Named views of every trainable array (``W1``, ``b1``, ``D2``, ...)."""
        params = {}
        for l in range(self.depth):
            params[f"W{l + 1}"] = self.weights[l]
            params[f"b{l + 1}"] = self.biases[l]
            if self.skips and self.skips[l] is not None:
                params[f"D{l + 1}"] = self.skips[l]
        return params

    def copy(self):
        return Network(
            self.config,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [None if d is None else d.copy() for d in self.skips],
        )


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre_activations: list
    effective_weights: list

    @property
    def output(self):
        return self.pre_activations[-1]


def _layer_params(config, fan_in):
    if config.init_scheme == "convex_init":
        return convex_init_params(
            fan_in, config.alpha, config.rho_star, config.var_star, config.beta
        )
    scheme = "he" if config.init_scheme == "default_he" else "lecun"
    return baseline_init_params(scheme, fan_in, config.alpha)


def build_network(config, rng):
    """Sample a network; layer streams are forked so each layer is reproducible on its own."""
    widths = config.layer_widths
    n_layers = len(widths) - 1
    streams = fork(rng, 2 * n_layers)
    weights, biases, skips = [], [], []
    for l in range(n_layers):
        fan_in, fan_out = widths[l], widths[l + 1]
        g = streams[l]
        if l == 0:
            p = baseline_init_params("lecun", fan_in, config.alpha)
            weights.append(gaussian_sample(g, 0.0, p.var_w, (fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
            skips.append(None)
            continue
        p = _layer_params(config, fan_in)
        convex = config.init_scheme == "convex_init"
        if config.variant == "icnn_exp_reparam":
            if convex:
                mu_t, var_t = p.lognormal
                W = gaussian_sample(g, mu_t, var_t, (fan_out, fan_in))
            else:
                W = gaussian_sample(g, 0.0, p.var_w, (fan_out, fan_in))
        elif config.variant == "icnn_projection" and convex:
            W = lognormal_sample(g, *p.lognormal, (fan_out, fan_in))
        else:
            W = gaussian_sample(g, p.mu_w, p.var_w, (fan_out, fan_in))
            if config.variant == "icnn_projection":
                np.maximum(W, 0.0, out=W)
        weights.append(W)
        biases.append(gaussian_sample(g, p.mu_b, p.var_b, fan_out))
        if config.skip_connections:
            lecun = baseline_init_params("lecun", widths[0])
            skips.append(gaussian_sample(streams[n_layers + l], 0.0, lecun.var_w, (fan_out, widths[0])))
        else:
            skips.append(None)
    return Network(config, weights, biases, skips)


def forward(net, batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.config.layer_widths[0]:
        raise ShapeError(
            f"batch of shape {x.shape} does not match input width {net.config.layer_widths[0]}"
        )
    pre, eff = [], []
    h = x
    for l in range(net.depth):
        W = net.effective_weight(l)
        s = h @ W.T + net.biases[l]
        if net.skips and net.skips[l] is not None:
            s += x @ net.skips[l].T
        pre.append(s)
        eff.append(W)
        h = lrelu(s, net.alpha)
    return ForwardTrace(x, pre, eff)


def _backprop(net, trace, grad_out, want_params=True):
    delta = np.asarray(grad_out, dtype=np.float64)
    if delta.shape != trace.output.shape or len(trace.pre_activations) != net.depth:
        raise ShapeError(
            f"gradient {delta.shape} does not match trace output {trace.output.shape}"
        )
    grads = {}
    dx = np.zeros_like(trace.inputs)
    for l in reversed(range(net.depth)):
        W = trace.effective_weights[l]
        if W.shape != net.weights[l].shape:
            raise ShapeError("stale trace: weight shapes changed since the forward pass")
        h = trace.inputs if l == 0 else lrelu(trace.pre_activations[l - 1], net.alpha)
        if want_params:
            gW = delta.T @ h
            if net.config.variant == "icnn_exp_reparam" and l > 0:
                gW *= W
            grads[f"W{l + 1}"] = gW
            grads[f"b{l + 1}"] = delta.sum(axis=0)
        if net.skips and net.skips[l] is not None:
            if want_params:
                grads[f"D{l + 1}"] = delta.T @ trace.inputs
            dx += delta @ net.skips[l]
        back = delta @ W
        if l == 0:
            dx += back
        else:
            delta = back * lrelu_grad(trace.pre_activations[l - 1], net.alpha)
    return grads, dx


def backward(net, trace, grad_out):
    """Parameter gradients for upstream gradient ``grad_out`` on the outputs.

    Returned keys match :meth:`Network.parameters`; for exp-reparameterised
    layers the gradient is taken with respect to the stored log-weights.
    """
    return _backprop(net, trace, grad_out)[0]


def input_gradient(net, x, output_index):
    """Value and input gradient of one output unit at the rows of ``x``."""
    trace = forward(net, x)
    seed = np.zeros_like(trace.output)
    seed[:, output_index] = 1.0
    _, dx = _backprop(net, trace, seed, want_params=False)
    return trace.output[:, output_index], dx


def project_nonneg(net):
    """Clamp negative constrained weights to zero in place and return how many were clamped."""
    if net.config.variant != "icnn_projection":
        raise VariantError(f"projection is undefined for variant {net.config.variant!r}")
    count = 0
    for l in range(1, net.depth):
        neg = net.weights[l] < 0
        n = int(np.count_nonzero(neg))
        if n:
            net.weights[l][neg] = 0.0
            count += n
    return count


@dataclass
class ConvexityReport:
    n_checks: int
    n_violations: int
    worst: float

    @property
    def ok(self):
        return self.n_violations == 0


def convexity_check(net, rng, n_trials=1000, n_lambdas=9, scale=1.0, tol=1e-9):
    """Test the chord inequality on random segments for every output.

    Checks ``f(l x + (1 - l) y) <= l f(x) + (1 - l) f(y) + tol * s`` with
    ``s = 1 + max |f|`` over the three values involved.  ``worst`` is the
    largest excess of the left side over the chord (negative when all hold).
    """
    d = net.config.layer_widths[0]
    x = gaussian_sample(rng, 0.0, scale * scale, (n_trials, d))
    y = gaussian_sample(rng, 0.0, scale * scale, (n_trials, d))
    fx = forward(net, x).output
    fy = forward(net, y).output
    worst = -np.inf
    n_bad = 0
    lambdas = np.linspace(0.0, 1.0, n_lambdas + 2)[1:-1]
    for lam in lambdas:
        fm = forward(net, lam * x + (1.0 - lam) * y).output
        chord = lam * fx + (1.0 - lam) * fy
        excess = fm - chord
        mag = 1.0 + np.maximum(np.maximum(np.abs(fx), np.abs(fy)), np.abs(fm))
        n_bad += int(np.count_nonzero(excess > tol * mag))
        worst = max(worst, float(excess.max()))
    return ConvexityReport(n_trials * len(lambdas) * fx.shape[1], n_bad, worst)


def _tensor_block(name, arr):
    arr = np.atleast_2d(arr)
    lines = [f"tensor {name} {arr.shape[0]} {arr.shape[1]}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in arr)
    return lines


def dumps_checkpoint(net):
    lines = [CKPT_HEADER, net.config.to_line()]
    for name, arr in net.parameters().items():
        lines.extend(_tensor_block(name, arr))
    return "\n".join(lines) + "\n"


def loads_checkpoint(text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != CKPT_HEADER:
        head = lines[0] if lines else ""
        raise FormatError(f"unsupported checkpoint header {head!r}")
    if len(lines) < 2:
        raise FormatError("checkpoint is missing its config line")
    config = NetworkConfig.from_line(lines[1])
    tensors = {}
    i = 2
    while i < len(lines):
        parts = lines[i].split()
        if len(parts) != 4 or parts[0] != "tensor":
            raise FormatError(f"line {i + 1}: expected tensor header, got {lines[i]!r}")
        name, rows, cols = parts[1], int(parts[2]), int(parts[3])
        if i + rows > len(lines) - 1:
            raise FormatError(f"tensor {name} is truncated")
        data = [[float(v) for v in lines[i + 1 + r].split()] for r in range(rows)]
        if any(len(row) != cols for row in data):
            raise FormatError(f"tensor {name} rows do not have {cols} entries")
        arr = np.array(data, dtype=np.float64).reshape(rows, cols)
        tensors[name] = arr
        i += rows + 1
    widths = config.layer_widths
    weights, biases, skips = [], [], []
    for l in range(len(widths) - 1):
        try:
            W = tensors[f"W{l + 1}"]
            b = tensors[f"b{l + 1}"].reshape(-1)
        except KeyError as exc:
            raise FormatError(f"checkpoint lacks tensor {exc}") from None
        if W.shape != (widths[l + 1], widths[l]) or b.shape != (widths[l + 1],):
            raise FormatError(f"layer {l + 1} tensors do not match widths {widths}")
        weights.append(W)
        biases.append(b)
        skips.append(tensors.get(f"D{l + 1}"))
    return Network(config, weights, biases, skips)


def atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(net, path):
    atomic_write(path, dumps_checkpoint(net))


def load_checkpoint(path):
    with open(path) as fh:
        return loads_checkpoint(fh.read())
