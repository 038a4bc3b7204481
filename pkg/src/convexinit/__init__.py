"""Signal-propagation initialisation for input-convex neural networks.

Modules
-------
numerics     seeded random streams, samplers and affine maps
kernels      Gaussian expectations of leaky-ReLU activations
init         initialisation parameters, the fixed-point map and its stability
network      (input-convex) networks, gradients, convexity checks, checkpoints
propagation  analytic and empirical layerwise moments
training     data loading, Adam and the training loop
levelset     level-set traversal of convex outputs
report       CSV helpers and SVG charts
cli          the ``convexinit`` command
"""

from .errors import ConvexInitError
from .init import InitParams, convex_init_params
from .network import NetworkConfig, build_network, forward
from .numerics import make_rng

__version__ = "0.1.0"

__all__ = [
    "ConvexInitError",
    "InitParams",
    "NetworkConfig",
    "build_network",
    "convex_init_params",
    "forward",
    "make_rng",
]
