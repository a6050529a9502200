"""Explanation-guided model improvement at desk scale.

A small dense-network training engine, a layer-wise attribution engine
(LRP, gradient, gradient x input, guided backpropagation), and augmentation
operators that use attributions to reshape data, features, losses,
gradients, or the trained model, plus a seeded experiment harness and CLI.
"""

__version__ = "0.1.0"

from .network import (  # noqa: F401
    DenseLayer,
    DenseNetwork,
    ForwardTrace,
    Gradients,
    TrainConfig,
    build_network,
    forward,
    backward,
    cross_entropy,
    evaluate,
    sgd_momentum_step,
    save_network,
    load_network,
)
from .attribution import (  # noqa: F401
    AttributionMethod,
    LrpRule,
    RelevanceMaps,
    explain,
    normalize_abs,
    normalize_signed,
)
