"""Activity classification head and composition of the training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, TrainingAborted
from .layers import Linear, Module
from .tensor import Tensor


class ActivityClassifier(Module):
    """MLP from the graph embedding to a probability distribution over activities."""

    def __init__(self, embed_dim: int, hidden_dim: int, n_activities: int, rng: np.random.Generator):
        super().__init__()
        self.n_activities = n_activities
        self.hidden = Linear(embed_dim, hidden_dim, rng)
        self.out = Linear(hidden_dim, n_activities, rng)

    def __call__(self, g: Tensor) -> Tensor:
        return T.softmax(self.out(T.relu(self.hidden(g))), axis=1)


@dataclass(frozen=True)
class LossWeights:
    """Weights on the auxiliary loss terms; the activity loss stays at 1."""

    lambda_edge: float = 1.0
    kl_weight: float = 1.0
    zeta: float = 0.5

    def __post_init__(self):
        for name in ("lambda_edge", "kl_weight", "zeta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")


@dataclass
class LossBreakdown:
    """One training step's objective: the total plus raw and weighted terms.

    ``contributions`` holds the weighted values whose sum is exactly the
    total; ``raw`` holds the unweighted per-term values used for logging.
    """

    total: Tensor
    contributions: dict[str, float]
    raw: dict[str, float]


_TERM_ORDER = ("har", "recon", "kl", "edge_class", "disc")


def total_loss(har: Tensor, recon: Tensor, kl: Tensor, edge_class: Tensor,
               disc: Tensor, weights: LossWeights) -> LossBreakdown:
    """Combine the per-component losses into the scalar training objective.

    total = har + recon + kl_weight * kl + lambda_edge * edge_class + disc.
    The discriminator term arrives already routed for the current phase
    (detached or behind gradient reversal), so it is added unweighted here.
    Any non-finite term aborts training, naming the term.
    """
    weighted = {
        "har": har,
        "recon": recon,
        "kl": Tensor(weights.kl_weight) * kl,
        "edge_class": Tensor(weights.lambda_edge) * edge_class,
        "disc": disc,
    }
    raw = {"har": har, "recon": recon, "kl": kl, "edge_class": edge_class, "disc": disc}
    for name in _TERM_ORDER:
        if not np.isfinite(raw[name].data).all():
            raise TrainingAborted(name)
    total = weighted["har"]
    for name in _TERM_ORDER[1:]:
        total = total + weighted[name]
    return LossBreakdown(
        total=total,
        contributions={name: weighted[name].item() for name in _TERM_ORDER},
        raw={name: raw[name].item() for name in _TERM_ORDER},
    )
