"""Variational edge features: seeded initialization, a conditional VAE over
per-edge scalars, a relation-type classifier on the latent space, and softmax
attention that weights each edge's latent vector.

The initial per-edge scalars are a scaled linear ramp plus seeded Gaussian
noise, fixed once at construction. During training the latent vector is
resampled through the reparameterization trick each step; at evaluation time
the latent collapses to its mean so inference is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .graph import N_RELATION_TYPES, SensorGraph
from .layers import Embedding, Linear, Module
from .tensor import Tensor


@dataclass(frozen=True)
class EdgeInitConfig:
    """Parameters of the initial edge feature ramp ``alpha * linspace + beta * noise``."""

    alpha: float = 10.0
    r_min: float = 0.0
    r_max: float = 1.0
    beta: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not self.r_min < self.r_max:
            raise ConfigError(f"need r_min < r_max, got [{self.r_min}, {self.r_max}]")
        if self.beta < 0:
            raise ConfigError(f"beta must be nonnegative, got {self.beta}")


def init_edge_features(cfg: EdgeInitConfig, n_edges: int) -> np.ndarray:
    """Seeded base features, one scalar per edge."""
    if n_edges < 2:
        raise ConfigError(f"need at least 2 edges for a linearly spaced base, got {n_edges}")
    base = cfg.alpha * np.linspace(cfg.r_min, cfg.r_max, n_edges)
    noise = np.random.default_rng(cfg.seed).standard_normal(n_edges)
    return base + cfg.beta * noise


class EdgeAttention(Module):
    """Scores each edge latent with ``LeakyReLU(w . z_e + b)``."""

    def __init__(self, latent_dim: int, rng: np.random.Generator, leaky_slope: float = 0.01):
        super().__init__()
        limit = np.sqrt(6.0 / (latent_dim + 1))
        self.w = Tensor(rng.uniform(-limit, limit, size=(latent_dim, 1)), requires_grad=True)
        self.b = Tensor(np.zeros(1), requires_grad=True)
        self.leaky_slope = leaky_slope

    def scores(self, z: Tensor) -> Tensor:
        return T.reshape(T.leaky_relu(T.matmul(z, self.w) + self.b, self.leaky_slope), (z.shape[0],))


def attend(z_all: Tensor, attn: EdgeAttention) -> tuple[Tensor, Tensor]:
    """Softmax attention over every edge of the graph jointly.

    Returns the weight vector alpha (a distribution over edges) and the
    weighted latents ``z_tilde[e] = alpha[e] * z[e]``.
    """
    alpha = T.softmax(attn.scores(z_all))
    z_tilde = T.mul(T.reshape(alpha, (z_all.shape[0], 1)), z_all)
    return alpha, z_tilde


def attend_uniform(z_all: Tensor) -> tuple[Tensor, Tensor]:
    """Frozen uniform attention: every edge weighted 1 / n_edges."""
    n_edges = z_all.shape[0]
    alpha = Tensor(np.full(n_edges, 1.0 / n_edges))
    return alpha, T.mul(T.reshape(alpha, (n_edges, 1)), z_all)


class EdgeFeatureExtractor(Module):
    """CVAE over per-edge scalars conditioned on relation-type embeddings.

    The encoder sees ``[eif_e, embedding(label_e)]`` and produces a diagonal
    Gaussian posterior; the decoder reconstructs the scalar from
    ``[z_e, embedding(label_e)]``; a small classifier predicts the relation
    type from ``z_e`` alone, supervising the latent layout.
    """

    def __init__(self, edge_features: np.ndarray, edge_labels: np.ndarray,
                 embed_dim: int, latent_dim: int, hidden_dim: int,
                 rng: np.random.Generator, leaky_slope: float = 0.01):
        super().__init__()
        edge_features = np.asarray(edge_features, dtype=np.float64)
        self.edge_labels = np.asarray(edge_labels, dtype=np.intp)
        if edge_features.ndim != 1 or edge_features.shape[0] != self.edge_labels.shape[0]:
            raise ConfigError("edge features and labels must be 1-D and equally long")
        self.eif = Tensor(edge_features.reshape(-1, 1))
        self.n_edges = edge_features.shape[0]
        self.latent_dim = latent_dim

        self.label_embedding = Embedding(N_RELATION_TYPES, embed_dim, rng)
        self.enc_hidden = Linear(1 + embed_dim, hidden_dim, rng)
        self.enc_out = Linear(hidden_dim, 2 * latent_dim, rng)
        self.dec_hidden = Linear(latent_dim + embed_dim, hidden_dim, rng)
        self.dec_out = Linear(hidden_dim, 1, rng)
        self.cls_hidden = Linear(latent_dim, hidden_dim, rng)
        self.cls_out = Linear(hidden_dim, N_RELATION_TYPES, rng)
        self.attention = EdgeAttention(latent_dim, rng, leaky_slope)

    def cvae_forward(self, noise: np.ndarray | None) -> dict[str, Tensor]:
        """Encode, sample, decode, and classify every edge in one pass.

        ``noise`` is a standard-normal [n_edges, latent_dim] draw from the
        caller's seeded generator; ``None`` pins the latent at its mean.
        """
        ele = self.label_embedding(self.edge_labels)
        enc_in = T.concat([self.eif, ele], axis=1)
        hidden = T.relu(self.enc_hidden(enc_in))
        stats = self.enc_out(hidden)
        mu = T.index_select(stats, 1, np.arange(self.latent_dim))
        logvar = T.index_select(stats, 1, np.arange(self.latent_dim, 2 * self.latent_dim))
        if noise is None:
            z = mu
        else:
            noise = np.asarray(noise, dtype=np.float64)
            if noise.shape != (self.n_edges, self.latent_dim):
                raise ConfigError(f"noise shape {noise.shape} != {(self.n_edges, self.latent_dim)}")
            z = T.reparameterize(mu, logvar, Tensor(noise))
        dec_in = T.concat([z, ele], axis=1)
        recon = self.dec_out(T.relu(self.dec_hidden(dec_in)))
        class_logits = self.cls_out(T.relu(self.cls_hidden(z)))
        return {"recon": recon, "mu": mu, "logvar": logvar, "z": z, "class_logits": class_logits}

    def cvae_loss(self, out: dict[str, Tensor], lambda_edge: float, kl_weight: float):
        """Total CVAE objective plus its three unweighted terms.

        total = reconstruction + kl_weight * KL + lambda_edge * classification.
        """
        recon = T.mse(out["recon"], self.eif)
        kl = T.kl_standard_normal(out["mu"], out["logvar"])
        probs = T.softmax(out["class_logits"], axis=1)
        class_term = T.cross_entropy(probs, T.one_hot(self.edge_labels, N_RELATION_TYPES))
        total = recon + Tensor(kl_weight) * kl + Tensor(lambda_edge) * class_term
        return total, recon, kl, class_term

    def classify_edges(self, z: Tensor) -> np.ndarray:
        """Argmax relation-type predictions from latent vectors."""
        logits = self.cls_out(T.relu(self.cls_hidden(z)))
        return logits.data.argmax(axis=1)


def report_attention(alpha: np.ndarray, graph: SensorGraph) -> list[dict]:
    """Rank edges by attention weight, expressed as percentages.

    Each row carries the directed edge's endpoint names, relation type,
    weight in percent, and 1-based rank; the weights sum to 100.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (graph.n_edges,):
        raise ConfigError(f"alpha has shape {alpha.shape}, expected ({graph.n_edges},)")
    names = graph.edge_names()
    order = np.argsort(-alpha, kind="stable")
    rows = []
    for rank, e in enumerate(order, start=1):
        src, dst, rel = names[e]
        rows.append({
            "edge_src": src,
            "edge_dst": dst,
            "relation_type": rel,
            "weight_pct": float(alpha[e] * 100.0),
            "rank": rank,
        })
    return rows
