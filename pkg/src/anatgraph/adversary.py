"""User discriminator with gradient reversal and the cyclic phase schedule.

Training alternates between two M-epoch phases. In the discrimination phase
the discriminator learns to identify source users from the graph embedding,
which is detached so the rest of the model is untouched. In the confusion
phase the embedding flows through a gradient reversal layer first: the
discriminator keeps minimizing its loss while everything upstream receives
the negated, zeta-scaled gradient and is pushed toward user-invariant
features.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .layers import Linear, Module
from .tensor import Tensor


class Phase(Enum):
    DISCRIMINATION = "discrimination"
    CONFUSION = "confusion"


@dataclass(frozen=True)
class PhaseSchedule:
    """Cycle of M discrimination epochs followed by M confusion epochs."""

    m_epochs: int
    zeta: float

    def __post_init__(self):
        if self.m_epochs < 1:
            raise ConfigError(f"m_epochs must be >= 1, got {self.m_epochs}")
        if self.zeta < 0:
            raise ConfigError(f"zeta must be nonnegative, got {self.zeta}")


def phase_of(epoch: int, sched: PhaseSchedule) -> Phase:
    """Phase of a 1-based epoch; epochs 1..M are discrimination, M+1..2M confusion."""
    if epoch < 1:
        raise ValueError(f"epoch numbering starts at 1, got {epoch}")
    return Phase.DISCRIMINATION if (epoch - 1) % (2 * sched.m_epochs) < sched.m_epochs else Phase.CONFUSION


class UserDiscriminator(Module):
    """MLP from the graph embedding to one logit per source user."""

    def __init__(self, embed_dim: int, hidden_dim: int, n_users: int, rng: np.random.Generator):
        super().__init__()
        self.n_users = n_users
        self.hidden = Linear(embed_dim, hidden_dim, rng)
        self.out = Linear(hidden_dim, n_users, rng)

    def __call__(self, g: Tensor) -> Tensor:
        return T.softmax(self.out(T.relu(self.hidden(g))), axis=1)


def discriminator_step(disc: UserDiscriminator, g: Tensor, user_labels: np.ndarray,
                       phase: Phase, zeta: float) -> tuple[Tensor, Tensor]:
    """Discriminator loss with phase-dependent gradient routing.

    Discrimination phase (or zeta == 0): the embedding is detached, so the
    loss trains the discriminator alone. Confusion phase: the embedding
    passes through gradient reversal, so upstream modules receive
    ``-zeta * dL/dG`` while the discriminator still minimizes its loss.
    """
    labels = np.asarray(user_labels, dtype=np.intp)
    if labels.size and (labels.min() < 0 or labels.max() >= disc.n_users):
        raise ValueError(f"user label outside [0, {disc.n_users})")
    if phase is Phase.DISCRIMINATION or zeta == 0.0:
        d_in = g.detach()
    else:
        d_in = T.grad_reverse(g, zeta)
    probs = disc(d_in)
    loss = T.cross_entropy(probs, T.one_hot(labels, disc.n_users))
    return loss, probs
