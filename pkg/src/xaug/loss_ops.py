"""Loss augmentation: relevance regularizers and class-wise scaling.

The reasoning loss and the generic attribution prior both add a penalty on
relevance maps to the prediction loss. When they participate in training,
their parameter gradient flows through the epsilon-LRP pass via
attribution.lrp_epsilon_param_grad; the per-sample normalization divisor
max|r| is treated as a constant during that backward step.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from . import attribution
from .network import DenseNetwork, ForwardTrace

RELEVANCE_MASK = "relevance"     # 1 marks features that SHOULD be relevant
IRRELEVANCE_MASK = "irrelevance"  # 1 marks features that should NOT be relevant


@dataclass
class GroundTruthMask:
    """Binary feature mask with an explicit semantics tag.

    The two semantics are complements of each other: a relevance mask r_A and
    the corresponding irrelevance mask a satisfy a = 1 - r_A.
    """

    values: np.ndarray
    semantics: str = RELEVANCE_MASK

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.semantics not in (RELEVANCE_MASK, IRRELEVANCE_MASK):
            raise ConfigError(f"unknown mask semantics {self.semantics!r}")
        if not np.isin(self.values, (0.0, 1.0)).all():
            raise ConfigError("ground-truth masks must be binary")

    def forbidden(self) -> np.ndarray:
        """Indicator of coordinates that are penalized for carrying relevance."""
        if self.semantics == RELEVANCE_MASK:
            return 1.0 - self.values
        return self.values


class PenaltyFunction:
    """Scalar penalty zeta(r) >= 0 on a relevance tensor, with zeta(0) = 0.

    Subclasses provide value() and, for use inside training, gradient().
    Batched input (2-D) is averaged over samples.
    """

    def value(self, r) -> float:
        raise NotImplementedError

    def gradient(self, r) -> np.ndarray:
        raise NotImplementedError


class L1Penalty(PenaltyFunction):
    """Sparsity penalty: per-sample sum of absolute relevance."""

    def value(self, r):
        arr = np.atleast_2d(np.asarray(r, dtype=np.float64))
        return float(np.abs(arr).sum(axis=1).mean())

    def gradient(self, r):
        arr = np.asarray(r, dtype=np.float64)
        batch = 1 if arr.ndim == 1 else arr.shape[0]
        return np.sign(arr) / batch


class TargetDistancePenalty(PenaltyFunction):
    """Squared distance between relevance and a fixed attribution target."""

    def __init__(self, target=0.0):
        self.target = np.asarray(target, dtype=np.float64)

    def value(self, r):
        arr = np.atleast_2d(np.asarray(r, dtype=np.float64))
        return float(((arr - self.target) ** 2).sum(axis=1).mean())

    def gradient(self, r):
        arr = np.asarray(r, dtype=np.float64)
        batch = 1 if arr.ndim == 1 else arr.shape[0]
        return 2.0 * (arr - self.target) / batch


PENALTIES = {"l1": L1Penalty, "target_distance": TargetDistancePenalty}


def rrr_reason_loss(r_norm, mask: GroundTruthMask) -> float:
    """Squared l2 norm of the normalized relevance on forbidden coordinates.

    With relevance-mask semantics this is ||(1 - r_A) * r'||_2^2; with
    irrelevance semantics ||a * r'||_2^2. Batched input averages over samples.
    """
    r = np.asarray(r_norm, dtype=np.float64)
    forbidden = mask.forbidden()
    if r.shape[-1] != forbidden.shape[-1]:
        raise ShapeError(f"relevance {r.shape} and mask {forbidden.shape} must match")
    per_sample = ((forbidden * np.atleast_2d(r)) ** 2).sum(axis=1)
    return float(per_sample.mean())


def attribution_prior_loss(pred_loss, penalty: PenaltyFunction, r, lam) -> float:
    """Generic regularized loss: pred_loss + lambda * zeta(r)."""
    if lam < 0:
        raise ConfigError("penalty weight lambda must be >= 0")
    return float(pred_loss) + lam * penalty.value(r)


def dual_objective(loss_original, loss_masked, alpha, beta) -> float:
    """Weighted sum of the plain and the feature-augmented prediction loss."""
    if alpha < 0 or beta < 0:
        raise ConfigError("objective weights must be >= 0")
    if alpha == 0 and beta == 0:
        warnings.warn("dual_objective with alpha = beta = 0 is identically zero")
    return alpha * float(loss_original) + beta * float(loss_masked)


def classwise_loss_scaling(per_sample_losses, labels, class_factors) -> float:
    """Mean over samples of factor[label] * loss."""
    losses = np.asarray(per_sample_losses, dtype=np.float64)
    y = np.asarray(labels)
    factors = np.asarray(class_factors, dtype=np.float64)
    if losses.shape != y.shape:
        raise ShapeError("losses and labels must align")
    if np.any(factors <= 0):
        raise ConfigError("class factors must be positive")
    if y.size and y.max() >= factors.shape[0]:
        raise ConfigError(f"no factor for class {int(y.max())}")
    return float(np.mean(factors[y] * losses))


# ---------------------------------------------------------------------------
# Training-time gradients of the relevance regularizers.
# ---------------------------------------------------------------------------

def reason_loss_with_param_grad(
    net: DenseNetwork,
    trace: ForwardTrace,
    targets,
    mask: GroundTruthMask,
    layer: int = 0,
    epsilon: float = attribution.DEFAULT_EPSILON,
):
    """Reasoning loss on abs-normalized epsilon-LRP relevance plus its
    parameter gradients.

    Returns (loss, weight_grads, bias_grads). The per-sample divisor
    max|r| is held constant in the backward step, so for
    L = mean_b sum_j f_j (|r_bj| / M_b)^2 the cotangent at r is
    2 f r / (M^2 B).
    """
    method = attribution.AttributionMethod(
        kind=attribution.LRP,
        lrp_rules={l: attribution.LrpRule("epsilon", epsilon) for l in range(net.layer_count)},
        target="true_class",
    )
    maps = attribution.explain(net, trace, targets, method)
    r = maps.layers[layer]
    forbidden = mask.forbidden()
    if forbidden.shape[-1] != r.shape[-1]:
        raise ShapeError("mask width does not match the relevance map")
    m = np.max(np.abs(r), axis=1, keepdims=True)
    r_norm = np.divide(np.abs(r), m, out=np.zeros_like(r), where=m > 0)
    batch = r.shape[0]
    loss = float(((forbidden * r_norm) ** 2).sum(axis=1).mean())
    denom = m ** 2 * batch
    cot = np.divide(2.0 * forbidden * r, denom, out=np.zeros_like(r), where=m > 0)
    bar_w, bar_b = attribution.lrp_epsilon_param_grad(
        net, trace, maps.targets, cot, layer=layer, epsilon=epsilon
    )
    return loss, bar_w, bar_b


def prior_loss_with_param_grad(
    net: DenseNetwork,
    trace: ForwardTrace,
    targets,
    penalty: PenaltyFunction,
    lam: float,
    layer: int = 0,
    epsilon: float = attribution.DEFAULT_EPSILON,
):
    """lambda * zeta(r) on raw epsilon-LRP relevance plus parameter gradients."""
    if lam < 0:
        raise ConfigError("penalty weight lambda must be >= 0")
    method = attribution.AttributionMethod(
        kind=attribution.LRP,
        lrp_rules={l: attribution.LrpRule("epsilon", epsilon) for l in range(net.layer_count)},
        target="true_class",
    )
    maps = attribution.explain(net, trace, targets, method)
    r = maps.layers[layer]
    loss = lam * penalty.value(r)
    cot = lam * penalty.gradient(r)
    bar_w, bar_b = attribution.lrp_epsilon_param_grad(
        net, trace, maps.targets, cot, layer=layer, epsilon=epsilon
    )
    return loss, bar_w, bar_b
