"""Hot inner loops for edge-wise routing and segment reductions.

Every kernel exists twice: a vectorized pure-numpy version and a numba
``@njit`` version with explicit loops. The numba loops avoid materializing
edge-by-channel-by-dim intermediates, which is what makes full-batch
training on the larger citation networks fit in memory.

Backend selection: by default numba is used when importable; set the
environment variable ``DISENGCL_KERNELS=numpy`` (or ``numba``) to force a
backend, or call :func:`set_backend` at runtime. All kernels accumulate in
a fixed edge order on a single thread, so both backends are bitwise
deterministic.
"""

from __future__ import annotations

import os
import warnings
from contextlib import contextmanager

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

ENV_FLAG = "DISENGCL_KERNELS"


# ---------------------------------------------------------------------------
# numpy implementations


def _edge_channel_logits_np(c, z, neighbors, centers):
    return np.sum(c[neighbors] * z[centers], axis=-1)


def _edge_channel_logits_bwd_np(g, c, z, neighbors, centers):
    dc = np.zeros_like(c)
    dz = np.zeros_like(z)
    np.add.at(dc, neighbors, g[:, :, None] * z[centers])
    np.add.at(dz, centers, g[:, :, None] * c[neighbors])
    return dc, dz


def _weighted_neighbor_sum_np(c, p, neighbors, centers, num_nodes):
    out = np.zeros((num_nodes,) + c.shape[1:], dtype=c.dtype)
    np.add.at(out, centers, p[:, :, None] * c[neighbors])
    return out


def _weighted_neighbor_sum_bwd_np(g, c, p, neighbors, centers):
    dc = np.zeros_like(c)
    np.add.at(dc, neighbors, p[:, :, None] * g[centers])
    dp = np.sum(g[centers] * c[neighbors], axis=-1)
    return dc, dp


def _segment_sum_np(values, segment_ids, num_segments):
    out = np.zeros((num_segments,) + values.shape[1:], dtype=values.dtype)
    np.add.at(out, segment_ids, values)
    return out


# ---------------------------------------------------------------------------
# numba implementations (explicit loops, no edge-sized temporaries)


def _edge_channel_logits_loop(c, z, neighbors, centers):
    num_edges = neighbors.shape[0]
    num_channels = c.shape[1]
    dim = c.shape[2]
    out = np.zeros((num_edges, num_channels), dtype=c.dtype)
    for e in range(num_edges):
        v = neighbors[e]
        u = centers[e]
        for k in range(num_channels):
            acc = 0.0
            for j in range(dim):
                acc += c[v, k, j] * z[u, k, j]
            out[e, k] = acc
    return out


def _edge_channel_logits_bwd_loop(g, c, z, neighbors, centers):
    dc = np.zeros_like(c)
    dz = np.zeros_like(z)
    num_edges = neighbors.shape[0]
    num_channels = c.shape[1]
    dim = c.shape[2]
    for e in range(num_edges):
        v = neighbors[e]
        u = centers[e]
        for k in range(num_channels):
            ge = g[e, k]
            for j in range(dim):
                dc[v, k, j] += ge * z[u, k, j]
                dz[u, k, j] += ge * c[v, k, j]
    return dc, dz


def _weighted_neighbor_sum_loop(c, p, neighbors, centers, num_nodes):
    num_edges = neighbors.shape[0]
    num_channels = c.shape[1]
    dim = c.shape[2]
    out = np.zeros((num_nodes, num_channels, dim), dtype=c.dtype)
    for e in range(num_edges):
        v = neighbors[e]
        u = centers[e]
        for k in range(num_channels):
            w = p[e, k]
            for j in range(dim):
                out[u, k, j] += w * c[v, k, j]
    return out


def _weighted_neighbor_sum_bwd_loop(g, c, p, neighbors, centers):
    dc = np.zeros_like(c)
    dp = np.zeros_like(p)
    num_edges = neighbors.shape[0]
    num_channels = c.shape[1]
    dim = c.shape[2]
    for e in range(num_edges):
        v = neighbors[e]
        u = centers[e]
        for k in range(num_channels):
            w = p[e, k]
            acc = 0.0
            for j in range(dim):
                dc[v, k, j] += w * g[u, k, j]
                acc += g[u, k, j] * c[v, k, j]
            dp[e, k] = acc
    return dc, dp


def _segment_sum_loop(values, segment_ids, num_segments):
    rows = values.shape[0]
    cols = values.shape[1]
    out = np.zeros((num_segments, cols), dtype=values.dtype)
    for i in range(rows):
        s = segment_ids[i]
        for j in range(cols):
            out[s, j] += values[i, j]
    return out


if HAS_NUMBA:
    _edge_channel_logits_nb = njit(cache=True)(_edge_channel_logits_loop)
    _edge_channel_logits_bwd_nb = njit(cache=True)(_edge_channel_logits_bwd_loop)
    _weighted_neighbor_sum_nb = njit(cache=True)(_weighted_neighbor_sum_loop)
    _weighted_neighbor_sum_bwd_nb = njit(cache=True)(_weighted_neighbor_sum_bwd_loop)
    _segment_sum_nb = njit(cache=True)(_segment_sum_loop)


# ---------------------------------------------------------------------------
# backend dispatch

_IMPLS = {
    "numpy": {
        "edge_channel_logits": _edge_channel_logits_np,
        "edge_channel_logits_bwd": _edge_channel_logits_bwd_np,
        "weighted_neighbor_sum": _weighted_neighbor_sum_np,
        "weighted_neighbor_sum_bwd": _weighted_neighbor_sum_bwd_np,
        "segment_sum": _segment_sum_np,
    }
}
if HAS_NUMBA:
    _IMPLS["numba"] = {
        "edge_channel_logits": _edge_channel_logits_nb,
        "edge_channel_logits_bwd": _edge_channel_logits_bwd_nb,
        "weighted_neighbor_sum": _weighted_neighbor_sum_nb,
        "weighted_neighbor_sum_bwd": _weighted_neighbor_sum_bwd_nb,
        "segment_sum": _segment_sum_nb,
    }


def _default_backend() -> str:
    choice = os.environ.get(ENV_FLAG, "auto").lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"{ENV_FLAG} must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numpy":
        return "numpy"
    if choice == "numba" and not HAS_NUMBA:
        warnings.warn(f"{ENV_FLAG}=numba requested but numba is not importable; "
                      "falling back to numpy kernels")
        return "numpy"
    return "numba" if HAS_NUMBA else "numpy"


_active = _default_backend()


def active_backend() -> str:
    return _active


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_IMPLS))


def set_backend(name: str) -> None:
    if name not in _IMPLS:
        raise ValueError(f"unknown kernel backend {name!r}; "
                         f"available: {available_backends()}")
    global _active
    _active = name


@contextmanager
def use_backend(name: str):
    previous = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def _as_index(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def edge_channel_logits(c, z, neighbors, centers):
    """Per-edge channel affinities: out[e, k] = <c[nbr_e, k], z[ctr_e, k]>."""
    return _IMPLS[_active]["edge_channel_logits"](
        c, z, _as_index(neighbors), _as_index(centers))


def edge_channel_logits_bwd(g, c, z, neighbors, centers):
    return _IMPLS[_active]["edge_channel_logits_bwd"](
        np.ascontiguousarray(g), c, z, _as_index(neighbors), _as_index(centers))


def weighted_neighbor_sum(c, p, neighbors, centers, num_nodes):
    """out[ctr_e, k, :] += p[e, k] * c[nbr_e, k, :], summed over edges."""
    return _IMPLS[_active]["weighted_neighbor_sum"](
        c, np.ascontiguousarray(p), _as_index(neighbors), _as_index(centers),
        num_nodes)


def weighted_neighbor_sum_bwd(g, c, p, neighbors, centers):
    return _IMPLS[_active]["weighted_neighbor_sum_bwd"](
        np.ascontiguousarray(g), c, np.ascontiguousarray(p),
        _as_index(neighbors), _as_index(centers))


def segment_sum(values, segment_ids, num_segments):
    """Sum rows of ``values`` into ``num_segments`` buckets by id."""
    values = np.ascontiguousarray(values)
    lead = values.shape[0]
    flat = values.reshape(lead, -1)
    out = _IMPLS[_active]["segment_sum"](flat, _as_index(segment_ids),
                                         num_segments)
    return out.reshape((num_segments,) + values.shape[1:])
