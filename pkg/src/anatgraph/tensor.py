"""Dense float64 tensors with reverse-mode automatic differentiation.

Every value flowing through the model is a :class:`Tensor` wrapping a
C-contiguous float64 ndarray. Operations record their inputs and a backward
rule; calling ``backward()`` on a scalar output walks the recorded graph once
in reverse topological order and accumulates gradients into the leaves that
were created with ``requires_grad=True``.

Design constraints honored here:

- float64 everywhere, so finite-difference gradient checks can be tight;
- no in-place mutation of tensors that participate in a live graph;
- a backward pass may run once per forward pass (a second call raises);
- forward and backward are bitwise deterministic for identical inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidDistributionError, ShapeError

LOG_CLAMP = 1e-12  # floor applied inside every log-likelihood term


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return np.ascontiguousarray(arr)


class Tensor:
    """A node in the autodiff graph.

    ``data`` is always a float64 ndarray in row-major order. Leaves created
    with ``requires_grad=True`` receive an accumulated ``grad`` array of the
    same shape after a backward pass.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None
        self._op = "leaf"
        self._consumed = False

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _lift(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op!r}{flag})"

    def detach(self) -> "Tensor":
        """A gradient-free leaf sharing this tensor's data."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward_fn = None
        out._op = "detach"
        out._consumed = False
        return out

    def item(self) -> float:
        return float(self.data.reshape(()))

    # -- backward machinery ---------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Run reverse-mode differentiation from this node.

        Without an explicit ``grad`` the node must be scalar-valued. A second
        backward call on the same node raises: gradients never silently
        accumulate across runs of the same graph.
        """
        if self._consumed:
            raise RuntimeError("backward() already ran for this output; re-run the forward pass first")
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() without a seed gradient requires a scalar output, got shape {self.shape}")
            grad = np.ones_like(self.data)
        else:
            grad = _as_array(grad)
            if grad.shape != self.data.shape:
                raise ShapeError(f"seed gradient shape {grad.shape} does not match output shape {self.shape}")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward_fn is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self._consumed = True

    # -- operator overloads ---------------------------------------------------

    def __add__(self, other):
        return add(self, Tensor._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, Tensor._lift(other))

    def __rsub__(self, other):
        return sub(Tensor._lift(other), self)

    def __mul__(self, other):
        return mul(self, Tensor._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, Tensor._lift(other))

    def __rtruediv__(self, other):
        return div(Tensor._lift(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, Tensor._lift(other))

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn, op: str) -> Tensor:
    """Wrap an op result; drop the backward rule when no parent needs grads."""
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    out.grad = None
    out._consumed = False
    out._op = op
    if any(p.requires_grad or p._backward_fn is not None for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward_fn = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ---------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(data, (a, b), backward, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _node(data, (a, b), backward, "div")


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: Tensor, exponent: float) -> Tensor:
    exponent = float(exponent)
    data = a.data ** exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _node(data, (a,), backward, "pow")


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        return (g * data,)

    return _node(data, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _node(data, (a,), backward, "log")


# -- reductions and shape ops -------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp, a.shape).copy(),)

    return _node(data, (a,), backward, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        count = a.data.shape[axis]

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g_exp / count, a.shape).copy(),)

    return _node(data, (a,), backward, "mean")


def mean_pool(a: Tensor, axis: int) -> Tensor:
    """Average over one axis; alias shaped for pooling call sites."""
    return tmean(a, axis=axis)


def global_mean_pool(nodes: Tensor) -> Tensor:
    """Mean over the node axis: [B, S, F] -> [B, F] or [S, F] -> [F]."""
    if nodes.ndim == 3:
        return tmean(nodes, axis=1)
    if nodes.ndim == 2:
        return tmean(nodes, axis=0)
    raise ShapeError(f"global_mean_pool expects 2-D or 3-D input, got shape {nodes.shape}")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _node(data, (a,), backward, "reshape")


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    data = np.transpose(a.data, axes)
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _node(data, (a,), backward, "transpose")


def concat(tensors: list[Tensor] | tuple[Tensor, ...], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        pieces = []
        for i in range(len(tensors)):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(index)])
        return tuple(pieces)

    return _node(data, tensors, backward, "concat")


def broadcast_to(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    data = np.broadcast_to(a.data, shape).copy()

    def backward(g):
        return (_unbroadcast(g, a.shape),)

    return _node(data, (a,), backward, "broadcast_to")


def index_select(a: Tensor, axis: int, indices) -> Tensor:
    """Gather rows along ``axis``; gradients scatter-add back."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"index_select needs a 1-D index list, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[axis]):
        raise IndexError(f"index out of range for axis {axis} with length {a.shape[axis]}")
    data = np.take(a.data, idx, axis=axis)

    def backward(g):
        out = np.zeros_like(a.data)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (out,)

    return _node(data, (a,), backward, "index_select")


def embedding_lookup(table: Tensor, indices) -> Tensor:
    """Row lookup into an embedding table: table[R, d] indexed by integer codes."""
    return index_select(table, 0, indices)


# -- linear algebra -----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2-D operands, with batching on either side's leading axis."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul inner dimensions differ: {ad.shape} vs {bd.shape}")
        data = ad @ bd

        def backward(g):
            return g @ bd.T, ad.T @ g

    elif ad.ndim == 3 and bd.ndim == 2:
        if ad.shape[2] != bd.shape[0]:
            raise ShapeError(f"matmul inner dimensions differ: {ad.shape} vs {bd.shape}")
        data = ad @ bd

        def backward(g):
            return g @ bd.T, np.tensordot(ad, g, axes=([0, 1], [0, 1]))

    elif ad.ndim == 2 and bd.ndim == 3:
        if ad.shape[1] != bd.shape[1]:
            raise ShapeError(f"matmul inner dimensions differ: {ad.shape} vs {bd.shape}")
        data = ad @ bd

        def backward(g):
            return np.tensordot(g, bd, axes=([0, 2], [0, 2])), np.einsum("mk,bmn->bkn", ad, g)

    else:
        raise ShapeError(f"unsupported matmul ranks: {ad.shape} @ {bd.shape}")

    return _node(data, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` with weight shaped [in, out]."""
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# -- nonlinearities -----------------------------------------------------------

def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    data = np.where(mask, a.data, 0.0)

    def backward(g):
        return (g * mask,)

    return _node(data, (a,), backward, "relu")


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope)
    data = a.data * scale

    def backward(g):
        return (g * scale,)

    return _node(data, (a,), backward, "leaky_relu")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically shifted softmax; raises on NaN input rather than propagating."""
    if np.isnan(a.data).any():
        raise ValueError("softmax input contains NaN")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _node(data, (a,), backward, "softmax")


# -- convolution and pooling --------------------------------------------------

def conv1d(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid (unpadded) cross-correlation over the last axis.

    ``x`` is [C_in, T] or [B, C_in, T]; ``kernels`` is [C_out, C_in, K].
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    single = x.data.ndim == 2
    xd = x.data[None] if single else x.data
    if xd.ndim != 3 or kernels.data.ndim != 3:
        raise ShapeError(f"conv1d expects x [B, C_in, T] and kernels [C_out, C_in, K], got {x.shape} and {kernels.shape}")
    batch, c_in, t_len = xd.shape
    c_out, k_in, width = kernels.data.shape
    if k_in != c_in:
        raise ShapeError(f"conv1d channel mismatch: input has {c_in} channels, kernels expect {k_in}")
    if t_len < width:
        raise ShapeError(f"conv1d input too short: T={t_len} < kernel K={width}")
    t_out = (t_len - width) // stride + 1

    wd = kernels.data
    # im2col: gather the K strided slices once, then one BLAS matmul
    cols = np.empty((batch, t_out, c_in, width))
    for k in range(width):
        cols[:, :, :, k] = xd[:, :, k : k + stride * (t_out - 1) + 1 : stride].transpose(0, 2, 1)
    cols2 = cols.reshape(batch, t_out, c_in * width)
    w2 = wd.reshape(c_out, c_in * width)
    out = np.ascontiguousarray((cols2 @ w2.T).transpose(0, 2, 1))
    if bias is not None:
        out += bias.data[None, :, None]

    def backward(g):
        gb = (g[None] if single else g).transpose(0, 2, 1)      # [B, T_out, C_out]
        dw = np.tensordot(gb, cols2, axes=([0, 1], [0, 1])).reshape(wd.shape)
        dcols = (gb @ w2).reshape(batch, t_out, c_in, width)
        dx = np.zeros_like(xd)
        for k in range(width):
            sl = slice(k, k + stride * (t_out - 1) + 1, stride)
            dx[:, :, sl] += dcols[:, :, :, k].transpose(0, 2, 1)
        grads = [dx[0] if single else dx, dw]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 1)))
        return tuple(grads)

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return _node(out[0] if single else out, parents, backward, "conv1d")


def maxpool1d(x: Tensor, width: int) -> Tensor:
    """Non-overlapping max pooling over the last axis; any tail shorter than ``width`` is dropped."""
    if width < 1:
        raise ValueError(f"pool width must be >= 1, got {width}")
    t_len = x.shape[-1]
    if t_len < width:
        raise ShapeError(f"maxpool1d input too short: T={t_len} < width={width}")
    t_out = t_len // width
    lead = x.shape[:-1]
    windows = np.ascontiguousarray(x.data[..., : t_out * width]).reshape(*lead, t_out, width)
    data = windows.max(axis=-1)

    def backward(g):
        arg = windows.argmax(axis=-1)
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, arg[..., None], g[..., None], axis=-1)
        dx = np.zeros_like(x.data)
        dx[..., : t_out * width] = dwin.reshape(*lead, t_out * width)
        return (dx,)

    return _node(data, (x,), backward, "maxpool1d")


# -- normalization ------------------------------------------------------------

def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: str,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Batch normalization over rows of a [B, F] tensor.

    Train mode normalizes with the (biased) batch statistics and updates the
    running arrays in place via an exponential moving average; eval mode uses
    the running statistics as constants.
    """
    if x.ndim != 2:
        raise ShapeError(f"batchnorm expects [B, F], got shape {x.shape}")
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    batch = x.shape[0]
    if mode == "train":
        if batch < 2:
            raise ValueError(f"batchnorm needs a batch of at least 2 rows in train mode, got {batch}")
        mu = x.data.mean(axis=0)
        centered = x.data - mu
        var = np.einsum("bf,bf->f", centered, centered) / batch
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = centered * inv_std
    else:
        mu = running_mean
        var = running_var
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x.data - mu) * inv_std
    data = gamma.data * x_hat + beta.data

    if mode == "train":

        def backward(g):
            dgamma = (g * x_hat).sum(axis=0)
            dbeta = g.sum(axis=0)
            gg = g * gamma.data
            dx = inv_std * (gg - gg.mean(axis=0) - x_hat * (gg * x_hat).mean(axis=0))
            return dx, dgamma, dbeta

    else:

        def backward(g):
            return g * gamma.data * inv_std, (g * x_hat).sum(axis=0), g.sum(axis=0)

    return _node(data, (x, gamma, beta), backward, "batchnorm")


# -- gradient routing ---------------------------------------------------------

def grad_reverse(x: Tensor, zeta: float) -> Tensor:
    """Identity in the forward pass; backward multiplies the gradient by ``-zeta``."""
    if zeta <= 0:
        raise ValueError(f"grad_reverse requires zeta > 0, got {zeta}")

    def backward(g):
        return (-zeta * g,)

    return _node(x.data, (x,), backward, "grad_reverse")


def reparameterize(mu: Tensor, logvar: Tensor, noise: Tensor) -> Tensor:
    """Sample ``mu + exp(logvar / 2) * noise`` with externally supplied noise."""
    return add(mu, mul(exp(mul(logvar, Tensor(0.5))), noise))


# -- losses -------------------------------------------------------------------

def _validate_distribution(probs: np.ndarray, one_hot: np.ndarray) -> None:
    if probs.shape != one_hot.shape:
        raise ShapeError(f"probability shape {probs.shape} differs from label shape {one_hot.shape}")
    row_sums = probs.sum(axis=-1)
    if np.abs(row_sums - 1.0).max() > 1e-6:
        worst = int(np.abs(row_sums - 1.0).argmax())
        raise InvalidDistributionError(f"probability row {worst} sums to {row_sums.flat[worst]!r}, not 1")
    ones_per_row = (one_hot == 1.0).sum(axis=-1)
    if not np.all((ones_per_row == 1) & ((one_hot == 0.0) | (one_hot == 1.0)).all(axis=-1)):
        raise InvalidDistributionError("labels must be one-hot rows containing exactly one 1")


def cross_entropy(probs: Tensor, one_hot: Tensor) -> Tensor:
    """Mean negative log-likelihood of one-hot targets under probability rows."""
    pd = probs.data if probs.ndim == 2 else probs.data[None]
    yd = one_hot.data if one_hot.ndim == 2 else one_hot.data[None]
    _validate_distribution(pd, yd)
    batch = pd.shape[0]
    clamped = np.maximum(pd, LOG_CLAMP)
    data = -(yd * np.log(clamped)).sum() / batch

    def backward(g):
        dp = np.where(pd > LOG_CLAMP, -yd / clamped, 0.0) * (g / batch)
        return (dp.reshape(probs.shape), None)

    return _node(np.float64(data), (probs, one_hot), backward, "cross_entropy")


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference."""
    diff = sub(a, b)
    return tmean(mul(diff, diff))


def kl_standard_normal(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(q || N(0, I)) for a diagonal Gaussian, averaged over the batch axis."""
    mu2 = mu if mu.ndim == 2 else reshape(mu, (1, mu.size))
    lv2 = logvar if logvar.ndim == 2 else reshape(logvar, (1, logvar.size))
    inner = Tensor(1.0) + lv2 - mul(mu2, mu2) - exp(lv2)
    return Tensor(-0.5) * tmean(tsum(inner, axis=1))


def one_hot(labels, num_classes: int) -> Tensor:
    """Constant one-hot matrix from integer labels."""
    idx = np.asarray(labels, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= num_classes):
        bad = int(idx.min()) if idx.min() < 0 else int(idx.max())
        raise ValueError(f"label {bad} outside [0, {num_classes})")
    out = np.zeros((idx.size, num_classes))
    out[np.arange(idx.size), idx.ravel()] = 1.0
    return Tensor(out)
