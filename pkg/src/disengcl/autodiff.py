"""Reverse-mode differentiation over the op set the model needs.

Forward ops execute eagerly on numpy arrays. While a :class:`Tape` is
active, any op touching a tracked tensor records a backward closure;
``tape.backward(loss)`` then walks the recorded nodes once, in reverse
order of creation (a topological order by construction), and accumulates
gradients into the ``.grad`` of every tracked leaf.

The op set is intentionally closed: exactly what the encoder, the
contrastive objective, and the linear probe compose. There is no general
broadcasting and no higher-order differentiation.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError

LOG_CLAMP = 1e-12


class Tensor:
    """A numpy array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "_leaf")

    def __init__(self, data, requires_grad=False, name=None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._tape = None
        self._leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}," \
               f" requires_grad={self.requires_grad}{tag})"


def tensor(data, requires_grad=False, name=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, copy=True), requires_grad=True, name=name)


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Recorded operation nodes, in creation (= topological) order."""

    def __init__(self):
        self._nodes = []
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def _record(self, out, parents, vjp):
        out._tape = self
        out._leaf = False
        self._nodes.append((out, parents, vjp))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into each tracked leaf's ``.grad``."""
        if loss.data.shape != ():
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if loss._tape is not self:
            raise ValueError("loss is detached from this tape (no recorded path)")
        if self._consumed:
            raise RuntimeError("tape already backpropagated; build a new tape")
        self._consumed = True

        pending = {id(loss): np.ones((), dtype=loss.data.dtype)}
        for out, parents, vjp in reversed(self._nodes):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._leaf:
                    parent.grad = pg if parent.grad is None else parent.grad + pg
                else:
                    key = id(parent)
                    if key in pending:
                        pending[key] = pending[key] + pg
                    else:
                        pending[key] = pg


def backward(loss: Tensor) -> None:
    """Backpropagate through the tape that recorded ``loss``."""
    if loss._tape is None:
        raise ValueError("loss is detached: no tape recorded its computation")
    loss._tape.backward(loss)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data, parents, vjp) -> Tensor:
    out = Tensor(data)
    if _TAPE_STACK and any(p.requires_grad for p in parents):
        out.requires_grad = True
        _TAPE_STACK[-1]._record(out, parents, vjp)
    return out


def _check_same_dtype(op, a, b):
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_same_dtype("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _emit(a.data @ b.data, (a, b), vjp)


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    _check_same_dtype("add", a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    return _emit(a.data + b.data, (a, b), lambda g: (g, g))


def add_bias(m, bias) -> Tensor:
    m, bias = _t(m), _t(bias)
    _check_same_dtype("add_bias", m, bias)
    if bias.data.ndim != 1 or m.data.shape[-1] != bias.data.shape[0]:
        raise ShapeError(f"add_bias: bias {bias.data.shape} does not match "
                         f"last axis of {m.data.shape}")
    width = bias.data.shape[0]

    def vjp(g):
        return g, g.reshape(-1, width).sum(axis=0)

    return _emit(m.data + bias.data, (m, bias), vjp)


def affine(m, scale: float, offset: float = 0.0) -> Tensor:
    """scale * m + offset, with constant scale and offset."""
    m = _t(m)
    return _emit(scale * m.data + offset, (m,), lambda g: (scale * g,))


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def relu(m) -> Tensor:
    m = _t(m)
    mask = m.data > 0
    return _emit(np.where(mask, m.data, 0.0).astype(m.data.dtype, copy=False),
                 (m,), lambda g: (g * mask,))


def sigmoid(m) -> Tensor:
    m = _t(m)
    x = m.data
    # two-branch form avoids overflow in exp for large |x|
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = out.astype(x.dtype, copy=False)
    return _emit(out, (m,), lambda g: (g * out * (1.0 - out),))


def tanh(m) -> Tensor:
    m = _t(m)
    out = np.tanh(m.data)
    return _emit(out, (m,), lambda g: (g * (1.0 - out * out),))


def log(m) -> Tensor:
    """Natural log of m clamped below at 1e-12 (zero gradient when clamped)."""
    m = _t(m)
    clamped = np.maximum(m.data, LOG_CLAMP)
    inside = m.data >= LOG_CLAMP

    def vjp(g):
        return (np.where(inside, g / clamped, 0.0),)

    return _emit(np.log(clamped), (m,), vjp)


# ---------------------------------------------------------------------------
# reductions and row-wise ops (the last axis is the vector axis)


def scalar_mean(m) -> Tensor:
    m = _t(m)
    size = m.data.size
    dtype = m.data.dtype

    def vjp(g):
        return (np.full(m.data.shape, g / size, dtype=dtype),)

    return _emit(np.asarray(m.data.mean(), dtype=dtype), (m,), vjp)


def sum_squares(m) -> Tensor:
    m = _t(m)
    return _emit(np.asarray((m.data * m.data).sum(), dtype=m.data.dtype),
                 (m,), lambda g: (2.0 * g * m.data,))


def rows_dot(a, b) -> Tensor:
    """Inner product along the last axis of same-shape operands."""
    a, b = _t(a), _t(b)
    _check_same_dtype("rows_dot", a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"rows_dot: shape mismatch {a.data.shape} vs {b.data.shape}")

    def vjp(g):
        ge = g[..., None]
        return ge * b.data, ge * a.data

    return _emit(np.sum(a.data * b.data, axis=-1), (a, b), vjp)


def rows_l2_normalize(m, eps: float = 1e-12) -> Tensor:
    """Scale each last-axis vector to unit norm; rows with norm < eps map
    to the zero vector and pass zero gradient."""
    m = _t(m)
    if eps <= 0:
        raise ValueError("eps must be positive")
    norms = np.sqrt(np.sum(m.data * m.data, axis=-1, keepdims=True))
    alive = norms >= eps
    safe = np.where(alive, norms, 1.0)
    out = np.where(alive, m.data / safe, 0.0).astype(m.data.dtype, copy=False)

    def vjp(g):
        inner = np.sum(g * out, axis=-1, keepdims=True)
        return (np.where(alive, (g - out * inner) / safe, 0.0),)

    return _emit(out, (m,), vjp)


def softmax_last_axis(m) -> Tensor:
    m = _t(m)
    shifted = m.data - m.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = np.sum(g * out, axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _emit(out, (m,), vjp)


def cosine_rows(a, b) -> Tensor:
    """Cosine similarity of corresponding last-axis vectors (0 for zero rows)."""
    return rows_dot(rows_l2_normalize(a), rows_l2_normalize(b))


# ---------------------------------------------------------------------------
# indexing and graph reductions


def reshape(m, shape) -> Tensor:
    m = _t(m)
    original = m.data.shape
    return _emit(m.data.reshape(shape), (m,), lambda g: (g.reshape(original),))


def stack_channels(parts) -> Tensor:
    """Stack K same-shape (n, d) tensors into (n, K, d)."""
    parts = [_t(p) for p in parts]
    base = parts[0].data.shape
    for p in parts:
        if p.data.ndim != 2 or p.data.shape != base:
            raise ShapeError(f"stack_channels: parts must share one 2-d shape, "
                             f"got {[q.data.shape for q in parts]}")

    def vjp(g):
        return tuple(np.ascontiguousarray(g[:, k, :]) for k in range(len(parts)))

    return _emit(np.stack([p.data for p in parts], axis=1), tuple(parts), vjp)


def gather_rows(m, idx) -> Tensor:
    """Select rows along the leading axis: out[i] = m[idx[i]]."""
    m = _t(m)
    idx = np.asarray(idx, dtype=np.int64)
    n = m.data.shape[0]
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: index must be 1-d, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError(f"gather_rows: index out of range for {n} rows")

    def vjp(g):
        return (kernels.segment_sum(g, idx, n),)

    return _emit(m.data[idx], (m,), vjp)


def gather_channels(m, perm) -> Tensor:
    """Permute the channel axis: out[:, k, :] = m[:, perm[k], :]."""
    m = _t(m)
    perm = np.asarray(perm, dtype=np.int64)
    if m.data.ndim != 3:
        raise ShapeError(f"gather_channels: expected (n, K, d), got {m.data.shape}")
    k = m.data.shape[1]
    if perm.shape != (k,) or not np.array_equal(np.sort(perm), np.arange(k)):
        raise ShapeError(f"gather_channels: perm must be a permutation of 0..{k - 1}")

    def vjp(g):
        dm = np.empty_like(g)
        dm[:, perm, :] = g
        return (dm,)

    return _emit(m.data[:, perm, :], (m,), vjp)


def segment_sum(m, segment_ids, num_segments: int) -> Tensor:
    """Sum leading-axis rows into buckets: out[s] = sum over segment s."""
    m = _t(m)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.ndim != 1 or segment_ids.shape[0] != m.data.shape[0]:
        raise ShapeError(f"segment_sum: ids {segment_ids.shape} do not match "
                         f"leading axis of {m.data.shape}")
    if segment_ids.size and (segment_ids.min() < 0
                             or segment_ids.max() >= num_segments):
        raise ShapeError(f"segment_sum: segment id out of range "
                         f"[0, {num_segments})")

    def vjp(g):
        return (g[segment_ids],)

    return _emit(kernels.segment_sum(m.data, segment_ids, num_segments),
                 (m,), vjp)


def edge_channel_logits(c, z, neighbors, centers) -> Tensor:
    """Routing logits per directed edge: out[e, k] = <c[nbr_e, k], z[ctr_e, k]>.

    Fused gather + dot; keeps tape memory at O(edges * channels) instead of
    O(edges * channels * dim).
    """
    c, z = _t(c), _t(z)
    _check_same_dtype("edge_channel_logits", c, z)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    centers = np.asarray(centers, dtype=np.int64)
    if c.data.ndim != 3 or c.data.shape != z.data.shape:
        raise ShapeError(f"edge_channel_logits: need matching (n, K, d) inputs, "
                         f"got {c.data.shape} and {z.data.shape}")
    if neighbors.shape != centers.shape or neighbors.ndim != 1:
        raise ShapeError("edge_channel_logits: neighbor/center index mismatch")

    def vjp(g):
        return kernels.edge_channel_logits_bwd(g, c.data, z.data,
                                               neighbors, centers)

    return _emit(kernels.edge_channel_logits(c.data, z.data, neighbors, centers),
                 (c, z), vjp)


def weighted_neighbor_sum(c, p, neighbors, centers, num_nodes: int) -> Tensor:
    """Per-node aggregation out[u, k] = sum over edges (u, v) of p[e, k] * c[v, k].

    Fused gather + scale + segment-sum with deterministic edge-order
    accumulation.
    """
    c, p = _t(c), _t(p)
    _check_same_dtype("weighted_neighbor_sum", c, p)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    centers = np.asarray(centers, dtype=np.int64)
    if c.data.ndim != 3:
        raise ShapeError(f"weighted_neighbor_sum: c must be (n, K, d), "
                         f"got {c.data.shape}")
    if p.data.shape != (neighbors.shape[0], c.data.shape[1]):
        raise ShapeError(f"weighted_neighbor_sum: weights {p.data.shape} must be "
                         f"(num_edges, K) = ({neighbors.shape[0]}, {c.data.shape[1]})")

    def vjp(g):
        return kernels.weighted_neighbor_sum_bwd(g, c.data, p.data,
                                                 neighbors, centers)

    return _emit(kernels.weighted_neighbor_sum(c.data, p.data, neighbors,
                                               centers, num_nodes),
                 (c, p), vjp)
