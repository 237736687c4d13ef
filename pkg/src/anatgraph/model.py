"""Full model assembly: edge extractor, node encoder, graph embedder, heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .adversary import UserDiscriminator
from .config import ModelSection
from .edge_features import (EdgeFeatureExtractor, EdgeInitConfig, attend, attend_uniform,
                            init_edge_features)
from .graph import SensorGraph
from .graph_conv import GraphEmbedder
from .heads import ActivityClassifier
from .layers import Module
from .node_encoder import NodeEncoder
from .tensor import Tensor


@dataclass
class ModelOutput:
    """Everything one forward pass produces."""

    g: Tensor                 # graph embeddings [B, G]
    activity_probs: Tensor    # [B, A]
    edge: dict[str, Tensor]   # recon / mu / logvar / z / class_logits
    alpha: Tensor             # attention weights over edges
    z_tilde: Tensor           # attention-weighted edge latents


class AnatGraphModel(Module):
    """End-to-end trainable recognizer over one sensor graph.

    ``attention_mode`` "uniform" freezes the edge attention at 1/n_edges,
    which together with zeroed auxiliary loss weights gives the plain-ERM
    ablation of the full model.
    """

    def __init__(self, graph: SensorGraph, n_activities: int, n_users: int,
                 channels: int, t_len: int, cfg: ModelSection, seed,
                 attention_mode: str = "learned"):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.graph = graph
        self.latent_dim = cfg.latent_dim
        self.attention_mode = attention_mode

        eif = init_edge_features(
            EdgeInitConfig(alpha=cfg.edge_alpha, r_min=cfg.edge_r_min,
                           r_max=cfg.edge_r_max, beta=cfg.edge_beta,
                           seed=int(rng.integers(2 ** 31))),
            graph.n_edges,
        )
        edge_labels = np.array([int(t) for _, _, t in graph.edges], dtype=np.intp)
        self.edge_extractor = EdgeFeatureExtractor(
            eif, edge_labels, cfg.embed_dim, cfg.latent_dim, cfg.cvae_hidden, rng, cfg.leaky_slope)
        self.node_encoder = NodeEncoder(
            channels, t_len, cfg.conv1_channels, cfg.conv2_channels,
            cfg.kernel_size, cfg.pool_width, rng)
        self.graph_embedder = GraphEmbedder(
            self.node_encoder.out_dim, cfg.latent_dim, (cfg.gc1_dim, cfg.gc2_dim), cfg.g_dim, rng)
        self.activity_head = ActivityClassifier(cfg.g_dim, cfg.head_hidden, n_activities, rng)
        self.discriminator = UserDiscriminator(cfg.g_dim, cfg.disc_hidden, n_users, rng)

    def forward(self, x: np.ndarray, noise: np.ndarray | None) -> ModelOutput:
        """Run windows [B, S, T, C] through the whole pipeline.

        ``noise`` reparameterizes the edge latents during training; ``None``
        pins them at the posterior mean for deterministic evaluation.
        """
        edge = self.edge_extractor.cvae_forward(noise)
        if self.attention_mode == "uniform":
            alpha, z_tilde = attend_uniform(edge["z"])
        else:
            alpha, z_tilde = attend(edge["z"], self.edge_extractor.attention)
        h = self.node_encoder(Tensor(x))
        g = self.graph_embedder(h, z_tilde, self.graph)
        probs = self.activity_head(g)
        return ModelOutput(g=g, activity_probs=probs, edge=edge, alpha=alpha, z_tilde=z_tilde)

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Deterministic class predictions in eval mode."""
        was_training = self.training
        self.set_training(False)
        preds = []
        for start in range(0, x.shape[0], batch_size):
            out = self.forward(x[start:start + batch_size], noise=None)
            preds.append(out.activity_probs.data.argmax(axis=1))
        self.set_training(was_training)
        return np.concatenate(preds) if preds else np.zeros(0, dtype=np.intp)

    def attention_weights(self) -> np.ndarray:
        """Edge attention distribution at the posterior mean (eval semantics)."""
        was_training = self.training
        self.set_training(False)
        edge = self.edge_extractor.cvae_forward(noise=None)
        if self.attention_mode == "uniform":
            alpha, _ = attend_uniform(edge["z"])
        else:
            alpha, _ = attend(edge["z"], self.edge_extractor.attention)
        self.set_training(was_training)
        return alpha.data.copy()
