"""Data loading, loss, Adam and the training loop with learning-curve export."""

import configparser
import gzip
import math
import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError, TrainingDiverged
from .network import (
    NetworkConfig,
    atomic_write,
    backward,
    build_network,
    forward,
    project_nonneg,
)
from .numerics import fork, make_rng

__all__ = [
    "load_idx",
    "write_idx",
    "synthetic_dataset",
    "cross_entropy",
    "adam_step",
    "Adam",
    "TrainConfig",
    "LearningCurve",
    "load_train_config",
    "load_dataset",
    "train",
]

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DATA_DIR_ENV = "CONVEXINIT_DATA_DIR"


def _read_bytes(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _parse_idx(raw, magic, ndim, path):
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise FormatError(f"{path}: truncated payload ({len(raw) - header} of {size} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path):
    """Read a big-endian IDX image/label pair (optionally gzipped).

    Returns flattened pixels scaled to ``[0, 1]`` and integer labels.
    """
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, 3, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, 1, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return X, labels.astype(np.int64)


def write_idx(images, labels, images_path, labels_path, compress=None):
    """Write uint8 images ``(n, rows, cols)`` and labels ``(n,)`` as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    img = struct.pack(">IIII", IMAGE_MAGIC, *images.shape) + images.tobytes()
    lab = struct.pack(">II", LABEL_MAGIC, labels.shape[0]) + labels.tobytes()
    for path, payload in ((images_path, img), (labels_path, lab)):
        gz = compress if compress is not None else str(path).endswith(".gz")
        if gz:
            payload = gzip.compress(payload, mtime=0)
        with open(path, "wb") as fh:
            fh.write(payload)


def synthetic_dataset(rng, n_classes, dim, n_per_class, separation):
    """Gaussian blobs with unit spread, standardised per feature.

    With ``n_classes <= dim`` class means sit on scaled coordinate axes so
    every pair is exactly ``separation`` apart; otherwise they sit on a circle
    in the first two coordinates with neighbours ``separation`` apart.
    """
    if min(n_classes, dim, n_per_class) < 1 or separation < 0:
        raise ParameterError("sizes must be positive and separation non-negative")
    means = np.zeros((n_classes, dim))
    if n_classes <= dim:
        means[np.arange(n_classes), np.arange(n_classes)] = separation / math.sqrt(2.0)
    else:
        if dim < 2:
            raise ParameterError("need dim >= 2 for more classes than dimensions")
        radius = separation / (2.0 * math.sin(math.pi / n_classes))
        angles = 2.0 * math.pi * np.arange(n_classes) / n_classes
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
    y = np.repeat(np.arange(n_classes), n_per_class)
    X = means[y] + rng.standard_normal((y.size, dim))
    X -= X.mean(axis=0)
    sd = X.std(axis=0)
    X /= np.where(sd > 0, sd, 1.0)
    return X, y


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ParameterError(f"{labels.shape[0]} labels for {B} rows")
    if labels.min() < 0 or labels.max() >= C:
        raise ParameterError(f"labels must lie in [0, {C - 1}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logsum[:, None]
    rows = np.arange(B)
    loss = float(-logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad / B


def adam_step(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8, l2=0.0):
    """One bias-corrected Adam update, in place; returns ``(param, m, v)``.

    ``l2`` adds ``l2 * param`` to the gradient (penalty form).
    """
    if t < 1:
        raise ParameterError("Adam step counter starts at 1")
    g = grad + l2 * param if l2 else grad
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param, m, v


class Adam:
    """Adam over a dict of named arrays; L2 only touches names in ``decay``."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, l2=0.0, decay=()):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.l2 = l2
        self.decay = set(decay)
        self.m, self.v = {}, {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            l2 = self.l2 if name in self.decay else 0.0
            adam_step(p, grads[name], self.m[name], self.v[name], self.t,
                      self.lr, self.beta1, self.beta2, self.eps, l2)


@dataclass
class TrainConfig:
    network: NetworkConfig
    learning_rate: float = 1e-4
    l2: float = 0.0
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0
    dataset: dict = field(default_factory=lambda: {"source": "synthetic"})
    record_wall_time: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ParameterError("learning rate must be positive")
        if self.l2 < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ParameterError("l2 >= 0, batch_size >= 1 and epochs >= 0 required")


@dataclass
class LearningCurve:
    steps: list = field(default_factory=list)

    HEADER = ("step", "epoch", "loss", "accuracy", "wall_ms")

    def append(self, step, epoch, loss, accuracy, wall_ms):
        self.steps.append((step, epoch, loss, accuracy, wall_ms))

    def epoch_losses(self):
        """Mean training loss per epoch."""
        out = {}
        for _, epoch, loss, _, _ in self.steps:
            out.setdefault(epoch, []).append(loss)
        return {e: float(np.mean(v)) for e, v in sorted(out.items())}

    def to_csv(self):
        lines = [",".join(self.HEADER)]
        for step, epoch, loss, acc, wall in self.steps:
            lines.append(f"{step},{epoch},{loss!r},{acc!r},{wall}")
        return "\n".join(lines) + "\n"

    def save(self, path):
        atomic_write(path, self.to_csv())


def _bool(text):
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def load_train_config(path):
    """Parse an INI-style ``key = value`` file with ``[network]``, ``[optim]``, ``[data]`` sections."""
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read(path)
    try:
        net = cp["network"]
        widths = tuple(int(w) for w in net["widths"].split(","))
        network = NetworkConfig(
            widths,
            alpha=net.getfloat("alpha", 0.0),
            variant=net.get("variant", "nonconvex"),
            skip_connections=net.getboolean("skip", False),
            init_scheme=net.get("init", "default_he"),
            rho_star=net.getfloat("rho_star", 0.5),
            var_star=net.getfloat("var_star", 1.0),
            beta=net.getfloat("beta", 0.0),
        )
        opt = cp["optim"] if cp.has_section("optim") else {}
        dataset = dict(cp["data"]) if cp.has_section("data") else {"source": "synthetic"}
        dataset["_base"] = os.path.dirname(os.path.abspath(path))
        return TrainConfig(
            network,
            learning_rate=float(opt.get("lr", 1e-4)),
            l2=float(opt.get("l2", 0.0)),
            batch_size=int(opt.get("batch_size", 128)),
            epochs=int(opt.get("epochs", 10)),
            seed=int(opt.get("seed", 0)),
            dataset=dataset,
            record_wall_time=_bool(opt.get("record_wall_time", "false")),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None


def _resolve(name, base):
    if os.path.isabs(name):
        return name
    candidates = [os.path.join(base, name)] if base else []
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        candidates.append(os.path.join(env, name))
    for c in candidates:
        if os.path.exists(c):
            return c
    raise FileNotFoundError(f"cannot find {name!r} (searched {candidates})")


def load_dataset(spec, rng):
    """Materialise the dataset described by a ``[data]`` section."""
    source = spec.get("source", "synthetic")
    if source == "idx":
        base = spec.get("_base")
        X, y = load_idx(_resolve(spec["images"], base), _resolve(spec["labels"], base))
    elif source == "synthetic":
        X, y = synthetic_dataset(
            rng,
            int(spec.get("n_classes", 3)),
            int(spec.get("dim", 2)),
            int(spec.get("n_per_class", 200)),
            float(spec.get("separation", 4.0)),
        )
    else:
        raise ParameterError(f"unknown data source {source!r}")
    subset = int(spec.get("subset", 0))
    if subset:
        X, y = X[:subset], y[:subset]
    standardize = spec.get("standardize", "none")
    if standardize == "global":
        X = (X - X.mean()) / X.std()
    elif standardize == "feature":
        sd = X.std(axis=0)
        X = (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    elif standardize != "none":
        raise ParameterError(f"unknown standardisation {standardize!r}")
    return X, y


def train(config, data=None, on_step=None):
    """Train a freshly built network with mini-batch Adam.

    Streams for initialisation, data synthesis and per-epoch shuffling are
    forked from ``config.seed``.  ``on_step(net, step)`` runs after every
    update (after projection for the projection variant).
    """
    init_rng, data_rng, shuffle_rng = fork(make_rng(config.seed), 3)
    net = build_network(config.network, init_rng)
    curve = LearningCurve()
    if config.epochs == 0:
        return net, curve
    X, y = data if data is not None else load_dataset(config.dataset, data_rng)
    n = X.shape[0]
    if config.batch_size > n:
        raise ParameterError(f"batch size {config.batch_size} exceeds dataset size {n}")
    decay = [k for k in net.parameters() if k[0] in "WD"]
    opt = Adam(config.learning_rate, l2=config.l2, decay=decay)
    project = config.network.variant == "icnn_projection"
    t0 = time.perf_counter()
    step = 0
    for epoch, g in enumerate(fork(shuffle_rng, config.epochs), start=1):
        order = g.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            trace = forward(net, X[idx])
            loss, grad = cross_entropy(trace.output, y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at step {step + 1}")
            acc = float(np.mean(trace.output.argmax(axis=1) == y[idx]))
            opt.step(net.parameters(), backward(net, trace, grad))
            if project:
                project_nonneg(net)
            step += 1
            wall = int((time.perf_counter() - t0) * 1000) if config.record_wall_time else 0
            curve.append(step, epoch, loss, acc, wall)
            if on_step is not None:
                on_step(net, step)
    return net, curve
