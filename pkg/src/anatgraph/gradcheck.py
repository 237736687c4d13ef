"""Central finite-difference verification of every differentiable operation.

Each check builds a scalar objective from random float64 inputs, runs the
autodiff backward pass, then perturbs every input coordinate by +-h and
compares. The reported number is ``max |autodiff - numeric| / max(1, |grads|)``
over all coordinates and trials.

The gradient reversal layer is deliberately not finite-difference checked:
its backward rule is *defined* to disagree with the forward derivative. Its
row in the suite instead measures how exactly a paired run satisfies
``grad_with_reversal = -zeta * grad_without``.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import ModelSection
from .graph import OPPT_LAYOUT, build_graph, default_rules
from .layers import BatchNorm1d
from .model import AnatGraphModel
from .tensor import Tensor

DEFAULT_H = 1e-5
DEFAULT_TRIALS = 100


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = max(1.0, float(np.abs(analytic).max(initial=0.0)), float(np.abs(numeric).max(initial=0.0)))
    return float(np.abs(analytic - numeric).max(initial=0.0)) / denom


def check_gradients(params: list[Tensor], forward, h: float = DEFAULT_H,
                    max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Compare backward-pass gradients of ``forward()`` against central differences.

    ``forward`` must rebuild the graph from the live ``params`` data on every
    call. With ``max_coords`` set, only a random subset of coordinates per
    parameter is perturbed (used for the full-model check).
    """
    out = forward()
    out.backward()
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.ravel()
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, size=max_coords, replace=False)
        numeric = np.zeros(coords.size)
        for j, i in enumerate(coords):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = forward().item()
            flat[i] = orig - h
            f_minus = forward().item()
            flat[i] = orig
            numeric[j] = (f_plus - f_minus) / (2.0 * h)
        worst = max(worst, rel_error(analytic.ravel()[coords], numeric))
        p.grad = None
    return worst


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return T.tsum(T.mul(out, Tensor(weights)))


def _away_from_zero(rng, shape, low=0.2, high=1.0):
    return rng.uniform(low, high, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _pool_safe(rng, shape, width):
    # keep window values separated so the max winner cannot flip under +-h
    while True:
        x = rng.uniform(-1.0, 1.0, size=shape)
        t_out = shape[-1] // width
        win = x[..., : t_out * width].reshape(*shape[:-1], t_out, width)
        gaps = np.sort(win, axis=-1)
        if width == 1 or np.min(gaps[..., 1:] - gaps[..., :-1]) > 1e-3:
            return x


def _check_matmul(rng):
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    w = rng.normal(size=(3, 2))
    err = check_gradients([a, b], lambda: _weighted_sum(T.matmul(a, b), w))
    c = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    w2 = rng.normal(size=(2, 3, 2))
    return max(err, check_gradients([c, b], lambda: _weighted_sum(T.matmul(c, b), w2)))


def _check_conv1d(rng):
    x = Tensor(rng.normal(size=(2, 2, 12)), requires_grad=True)
    k = Tensor(rng.normal(size=(3, 2, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=3), requires_grad=True)
    w = rng.normal(size=(2, 3, 5))
    return check_gradients([x, k, b], lambda: _weighted_sum(T.conv1d(x, k, b, stride=2), w))


def _check_batchnorm(rng):
    x = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    gamma = Tensor(rng.normal(size=4) + 1.5, requires_grad=True)
    beta = Tensor(rng.normal(size=4), requires_grad=True)
    w = rng.normal(size=(6, 4))
    worst = 0.0
    for mode in ("train", "eval"):
        mean = rng.normal(size=4)
        var = rng.uniform(0.5, 2.0, size=4)
        worst = max(worst, check_gradients(
            [x, gamma, beta],
            lambda: _weighted_sum(T.batchnorm(x, gamma, beta, mode, mean.copy(), var.copy()), w)))
    return worst


def _check_softmax(rng):
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    w = rng.normal(size=(3, 5))
    return check_gradients([x], lambda: _weighted_sum(T.softmax(x, axis=1), w))


def _check_relu(rng):
    x = Tensor(_away_from_zero(rng, (4, 6)), requires_grad=True)
    w = rng.normal(size=(4, 6))
    return check_gradients([x], lambda: _weighted_sum(T.relu(x), w))


def _check_leaky_relu(rng):
    x = Tensor(_away_from_zero(rng, (4, 6)), requires_grad=True)
    w = rng.normal(size=(4, 6))
    return check_gradients([x], lambda: _weighted_sum(T.leaky_relu(x, 0.1), w))


def _check_maxpool1d(rng):
    x = Tensor(_pool_safe(rng, (2, 3, 9), width=2), requires_grad=True)
    w = rng.normal(size=(2, 3, 4))
    return check_gradients([x], lambda: _weighted_sum(T.maxpool1d(x, 2), w))


def _check_mean_pool(rng):
    x = Tensor(rng.normal(size=(3, 4, 5)), requires_grad=True)
    w = rng.normal(size=(3, 5))
    return check_gradients([x], lambda: _weighted_sum(T.mean_pool(x, axis=1), w))


def _check_global_mean_pool(rng):
    x = Tensor(rng.normal(size=(3, 4, 5)), requires_grad=True)
    w = rng.normal(size=(3, 5))
    return check_gradients([x], lambda: _weighted_sum(T.global_mean_pool(x), w))


def _check_concat(rng):
    a = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = rng.normal(size=(3, 6))
    return check_gradients([a, b], lambda: _weighted_sum(T.concat([a, b], axis=1), w))


def _check_linear(rng):
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    weight = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    bias = Tensor(rng.normal(size=5), requires_grad=True)
    w = rng.normal(size=(4, 5))
    return check_gradients([x, weight, bias], lambda: _weighted_sum(T.linear(x, weight, bias), w))


def _check_embedding(rng):
    table = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    idx = rng.integers(0, 3, size=6)
    w = rng.normal(size=(6, 4))
    return check_gradients([table], lambda: _weighted_sum(T.embedding_lookup(table, idx), w))


def _check_reparameterize(rng):
    mu = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    logvar = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    noise = Tensor(rng.normal(size=(4, 3)))
    w = rng.normal(size=(4, 3))
    return check_gradients([mu, logvar], lambda: _weighted_sum(T.reparameterize(mu, logvar, noise), w))


def _check_cross_entropy(rng):
    # checked through softmax so perturbed inputs stay on the simplex
    logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    labels = T.one_hot(rng.integers(0, 3, size=4), 3)
    return check_gradients([logits], lambda: T.cross_entropy(T.softmax(logits, axis=1), labels))


def _check_mse(rng):
    a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    return check_gradients([a, b], lambda: T.mse(a, b))


def _check_kl(rng):
    mu = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    logvar = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    return check_gradients([mu, logvar], lambda: T.kl_standard_normal(mu, logvar))


def _check_grad_reverse_contract(rng):
    """Exact paired-run identity, not finite differences (see module docstring)."""
    zeta = float(rng.uniform(0.1, 2.0))
    x_data = rng.normal(size=(3, 4))
    w = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    weights = rng.normal(size=(3, 2))

    x = Tensor(x_data, requires_grad=True)
    _weighted_sum(T.matmul(T.grad_reverse(x, zeta), w), weights).backward()
    with_grl = x.grad.copy()

    x2 = Tensor(x_data, requires_grad=True)
    _weighted_sum(T.matmul(x2, w), weights).backward()
    without = x2.grad.copy()
    return float(np.abs(with_grl + zeta * without).max())


_tiny_model_cfg = ModelSection(
    embed_dim=3, latent_dim=4, cvae_hidden=8, conv1_channels=4, conv2_channels=6,
    kernel_size=5, pool_width=2, gc1_dim=8, gc2_dim=8, g_dim=8, head_hidden=8, disc_hidden=8,
)


def _check_full_model(rng, max_coords: int = 4):
    """End-to-end objective of the composed model, sampled coordinates per parameter."""
    graph = build_graph(OPPT_LAYOUT, default_rules(OPPT_LAYOUT))
    model = AnatGraphModel(graph, n_activities=3, n_users=2, channels=2, t_len=20,
                           cfg=_tiny_model_cfg, seed=int(rng.integers(2 ** 31)))
    batch = 4
    x = rng.normal(size=(batch, graph.n_nodes, 20, 2))
    noise = rng.standard_normal((graph.n_edges, 4))
    activities = T.one_hot(rng.integers(0, 3, size=batch), 3)
    users = T.one_hot(rng.integers(0, 2, size=batch), 2)

    def forward():
        out = model.forward(x, noise)
        har = T.cross_entropy(out.activity_probs, activities)
        cvae_total, _, _, _ = model.edge_extractor.cvae_loss(out.edge, 1.0, 1.0)
        # discriminator joins without gradient reversal: its backward rule is
        # intentionally not the forward derivative, so it cannot sit inside a
        # finite-difference objective (the paired-run check covers it)
        disc = T.cross_entropy(model.discriminator(out.g), users)
        return har + cvae_total + disc

    # batch norm running stats move during perturbation but train-mode output
    # depends only on batch statistics, so the comparison stays valid
    return check_gradients(model.parameters(), forward, max_coords=max_coords, rng=rng)


OP_CHECKS = {
    "matmul": _check_matmul,
    "conv1d": _check_conv1d,
    "batchnorm": _check_batchnorm,
    "softmax": _check_softmax,
    "relu": _check_relu,
    "leaky_relu": _check_leaky_relu,
    "maxpool1d": _check_maxpool1d,
    "mean_pool": _check_mean_pool,
    "global_mean_pool": _check_global_mean_pool,
    "concat": _check_concat,
    "linear": _check_linear,
    "embedding_lookup": _check_embedding,
    "reparameterize": _check_reparameterize,
    "cross_entropy": _check_cross_entropy,
    "mse": _check_mse,
    "kl_standard_normal": _check_kl,
}


def run_suite(trials: int = DEFAULT_TRIALS, seed: int = 1234,
              full_model_trials: int = 3) -> dict[str, float]:
    """Max relative error per op over ``trials`` seeded random draws."""
    results: dict[str, float] = {}
    for name, fn in OP_CHECKS.items():
        rng = np.random.default_rng([seed, hash(name) % (2 ** 31)])
        results[name] = max(fn(rng) for _ in range(trials))
    rng = np.random.default_rng([seed, 909])
    results["grad_reverse(paired)"] = max(_check_grad_reverse_contract(rng) for _ in range(trials))
    rng = np.random.default_rng([seed, 911])
    results["full_model"] = max(_check_full_model(rng) for _ in range(full_model_trials))
    return results
