"""Edge-conditioned graph convolution and graph-level readout.

Each directed edge (j -> i) emits a message: a fully connected layer applied
to the source node's features concatenated with that edge's attention-weighted
latent. A node averages its incoming messages (multi-edges counted
separately), then batch normalization and ReLU produce the updated features.
Two such layers, a projection block, and global mean pooling over nodes yield
one embedding vector per window.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .graph import SensorGraph
from .layers import BatchNorm1d, Linear, Module
from .tensor import Tensor


def mean_aggregation_matrix(graph: SensorGraph) -> np.ndarray:
    """[S, E] matrix averaging incoming edge messages per receiving node."""
    agg = np.zeros((graph.n_nodes, graph.n_edges))
    for node in range(graph.n_nodes):
        incoming = graph.neighbors(node)
        for _, e in incoming:
            agg[node, e] = 1.0 / len(incoming)
    return agg


class EdgeConditionedConv(Module):
    """One message-passing layer fusing node features with edge latents."""

    def __init__(self, node_dim: int, latent_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.node_dim = node_dim
        self.latent_dim = latent_dim
        self.out_dim = out_dim
        self.fc = Linear(node_dim + latent_dim, out_dim, rng)
        self.bn = BatchNorm1d(out_dim)

    def __call__(self, h: Tensor, z_tilde: Tensor, graph: SensorGraph, agg: np.ndarray) -> Tensor:
        batch, sensors, _ = h.shape
        src = np.array([e[0] for e in graph.edges], dtype=np.intp)

        # FC([h_j || z_tilde_e]) split into the node and edge weight blocks, so
        # the edge part is one small [E, L] @ [L, out] product shared by the batch
        w_node = T.index_select(self.fc.weight, 0, np.arange(self.node_dim))
        w_edge = T.index_select(self.fc.weight, 0, np.arange(self.node_dim, self.node_dim + self.latent_dim))
        h_src = T.index_select(h, 1, src)                                   # [B, E, F]
        messages = T.matmul(h_src, w_node) + (T.matmul(z_tilde, w_edge) + self.fc.bias)

        # AF[b, i] = mean over incoming edges of messages[b, e]
        af = T.transpose(T.matmul(T.transpose(messages, (0, 2, 1)), Tensor(agg.T)), (0, 2, 1))
        flat = T.reshape(af, (batch * sensors, self.out_dim))
        return T.reshape(T.relu(self.bn(flat)), (batch, sensors, self.out_dim))


class GraphEmbedder(Module):
    """Two edge-conditioned conv layers, a projection block, and mean pooling."""

    def __init__(self, node_dim: int, latent_dim: int, conv_dims: tuple[int, int],
                 embed_dim: int, rng: np.random.Generator):
        super().__init__()
        self.layer1 = EdgeConditionedConv(node_dim, latent_dim, conv_dims[0], rng)
        self.layer2 = EdgeConditionedConv(conv_dims[0], latent_dim, conv_dims[1], rng)
        self.proj = Linear(conv_dims[1], embed_dim, rng)
        self.proj_bn = BatchNorm1d(embed_dim)
        self.embed_dim = embed_dim

    def __call__(self, h: Tensor, z_tilde: Tensor, graph: SensorGraph) -> Tensor:
        """Embed node features [B, S, D] into one vector per window [B, G]."""
        agg = mean_aggregation_matrix(graph)
        u = self.layer1(h, z_tilde, graph, agg)
        u = self.layer2(u, z_tilde, graph, agg)
        batch, sensors, _ = u.shape
        p = self.proj(T.reshape(u, (batch * sensors, u.shape[2])))
        p = T.relu(self.proj_bn(p))
        return T.global_mean_pool(T.reshape(p, (batch, sensors, self.embed_dim)))
