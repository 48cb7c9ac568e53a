"""Graph, label, and split data model plus loaders and fixtures.

Graphs are undirected, stored with a canonical deduplicated edge list
(u < v) and a CSR view materializing both directions. Arrays are made
read-only after construction; instances are safe to share across threads.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError

log = logging.getLogger(__name__)

_BUNDLE_FILES = ("meta.json", "features.csv", "edges.csv", "labels.csv",
                 "split.json")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Graph:
    """Attributed undirected graph.

    ``edges`` holds each undirected edge once as (u, v) with u < v,
    lexicographically sorted. ``indptr``/``indices`` form a CSR adjacency
    with both directions materialized and no self-loops.
    """

    num_nodes: int
    features: np.ndarray
    edges: np.ndarray
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, features: np.ndarray, edges: np.ndarray) -> "Graph":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise DataError(f"features must be 2-d, got shape {features.shape}")
        n = features.shape[0]
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise DataError(f"edge endpoint out of range [0, {n})")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise DataError("self-loops are not allowed")
            lo = np.minimum(edges[:, 0], edges[:, 1])
            hi = np.maximum(edges[:, 0], edges[:, 1])
            edges = np.unique(np.stack([lo, hi], axis=1), axis=0)
        else:
            edges = np.empty((0, 2), dtype=np.int64)

        both_src = np.concatenate([edges[:, 0], edges[:, 1]])
        both_dst = np.concatenate([edges[:, 1], edges[:, 0]])
        order = np.lexsort((both_dst, both_src))
        src, dst = both_src[order], both_dst[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(num_nodes=n, features=_frozen(features),
                   edges=_frozen(edges), indptr=_frozen(indptr),
                   indices=_frozen(dst))

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def edge_count(self) -> int:
        return self.edges.shape[0]

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def directed_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """(centers, neighbors) arrays covering every directed edge."""
        degrees = np.diff(self.indptr)
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64), degrees), \
            self.indices

    def with_features(self, features: np.ndarray) -> "Graph":
        features = np.asarray(features, dtype=np.float64)
        if features.shape != self.features.shape:
            raise DataError("replacement features must keep the same shape")
        return Graph(num_nodes=self.num_nodes, features=_frozen(features),
                     edges=self.edges, indptr=self.indptr, indices=self.indices)

    def with_edges(self, edges: np.ndarray) -> "Graph":
        return Graph.from_edges(self.features, edges)


@dataclass(frozen=True)
class Labels:
    classes: np.ndarray
    num_classes: int

    def __post_init__(self):
        classes = np.asarray(self.classes, dtype=np.int64)
        if classes.ndim != 1:
            raise DataError("labels must be a 1-d integer array")
        if classes.size == 0:
            raise DataError("labels must not be empty")
        present = np.unique(classes)
        if present.min() < 0 or present.max() >= self.num_classes:
            raise DataError(f"class ids must lie in [0, {self.num_classes})")
        if present.size != self.num_classes:
            missing = sorted(set(range(self.num_classes)) - set(present.tolist()))
            raise DataError(f"classes {missing} have no members")
        object.__setattr__(self, "classes", _frozen(classes))

    @property
    def num_nodes(self) -> int:
        return self.classes.shape[0]


@dataclass(frozen=True)
class Split:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        parts = []
        for name in ("train_idx", "val_idx", "test_idx"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1)
            object.__setattr__(self, name, _frozen(arr))
            parts.append(arr)
        combined = np.concatenate(parts)
        if combined.size and combined.min() < 0:
            raise DataError("split indices must be non-negative")
        if np.unique(combined).size != combined.size:
            raise DataError("split parts must be pairwise disjoint")


def load_content_cites(content_path, cites_path) -> tuple[Graph, Labels]:
    """Parse citation-network plain text files.

    Content file: one node per line as ``id feat_1 .. feat_f class``.
    Cites file: one edge per line as ``id id``. Node order follows the
    content file; class names are reindexed to [0, C) in sorted order;
    edges mentioning unknown ids are skipped (count logged).
    """
    content_path, cites_path = Path(content_path), Path(cites_path)
    ids: list[str] = []
    rows: list[np.ndarray] = []
    names: list[str] = []
    width = None
    with content_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) < 3:
                raise ParseError(content_path, lineno,
                                 f"expected id, features, class; got "
                                 f"{len(fields)} fields")
            if width is None:
                width = len(fields)
            elif len(fields) != width:
                raise ParseError(content_path, lineno,
                                 f"expected {width} fields, got {len(fields)}")
            ids.append(fields[0])
            try:
                rows.append(np.array(fields[1:-1], dtype=np.float64))
            except ValueError as exc:
                raise ParseError(content_path, lineno,
                                 f"non-numeric feature value ({exc})") from exc
            names.append(fields[-1])
    if not ids:
        raise DataError(f"{content_path}: content file is empty")
    if len(set(ids)) != len(ids):
        raise DataError(f"{content_path}: duplicate node ids")

    index = {node_id: i for i, node_id in enumerate(ids)}
    class_names = sorted(set(names))
    class_index = {name: i for i, name in enumerate(class_names)}
    labels = Labels(classes=np.array([class_index[c] for c in names]),
                    num_classes=len(class_names))

    pairs: list[tuple[int, int]] = []
    skipped = 0
    with cites_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2:
                raise ParseError(cites_path, lineno,
                                 f"expected 2 ids, got {len(fields)} fields")
            a, b = fields
            if a not in index or b not in index:
                skipped += 1
                continue
            if index[a] != index[b]:
                pairs.append((index[a], index[b]))
    if skipped:
        log.warning("%s: skipped %d edges referencing unknown node ids",
                    cites_path, skipped)

    edges = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    return Graph.from_edges(np.vstack(rows), edges), labels


def make_planetoid_split(labels: Labels, per_class: int, val_size: int,
                         test_size: int, seed: int) -> Split:
    """Sample per_class train nodes per class, then val/test from the rest."""
    if per_class < 1:
        raise DataError("per_class must be >= 1 (train set must be nonempty)")
    n = labels.num_nodes
    if per_class * labels.num_classes + val_size + test_size > n:
        raise DataError(f"split sizes exceed {n} nodes")
    rng = np.random.default_rng(seed)
    train_parts = []
    for c in range(labels.num_classes):
        members = np.flatnonzero(labels.classes == c)
        if members.size < per_class:
            raise DataError(f"class {c} has only {members.size} members, "
                            f"need {per_class}")
        train_parts.append(rng.choice(members, size=per_class, replace=False))
    train = np.sort(np.concatenate(train_parts))

    rest = np.setdiff1d(np.arange(n), train, assume_unique=False)
    rng.shuffle(rest)
    val = np.sort(rest[:val_size])
    test = np.sort(rest[val_size:val_size + test_size])
    return Split(train_idx=train, val_idx=val, test_idx=test)


def synth_sbm(block_sizes, p_in: float, p_out: float, feature_dim: int,
              signal: float, seed: int) -> tuple[Graph, Labels]:
    """Stochastic-block-model fixture with noisy one-hot block features."""
    block_sizes = list(block_sizes)
    if not block_sizes:
        raise DataError("block_sizes must be nonempty")
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise DataError(f"need 0 <= p_out <= p_in <= 1, got "
                        f"p_in={p_in}, p_out={p_out}")
    num_blocks = len(block_sizes)
    if feature_dim < num_blocks:
        raise DataError(f"feature_dim must be >= number of blocks "
                        f"({num_blocks})")
    n = int(sum(block_sizes))
    blocks = np.repeat(np.arange(num_blocks), block_sizes)

    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(blocks[iu] == blocks[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    features = rng.standard_normal((n, feature_dim))
    features[np.arange(n), blocks] += signal

    graph = Graph.from_edges(features, edges)
    if num_blocks > 1:
        labels = Labels(classes=blocks, num_classes=num_blocks)
    else:
        labels = Labels(classes=blocks, num_classes=1)
    return graph, labels


# ---------------------------------------------------------------------------
# on-disk bundle (CSV + JSON, checksummed)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_float_csv(path: Path, matrix: np.ndarray) -> None:
    with path.open("w") as fh:
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def save_bundle(graph: Graph, labels: Labels, split: Split, bundle_dir) -> None:
    """Write the portable bundle: meta.json + CSV payloads + split.json."""
    bundle_dir = Path(bundle_dir)
    bundle_dir.mkdir(parents=True, exist_ok=True)
    if labels.num_nodes != graph.num_nodes:
        raise DataError("labels length does not match graph node count")

    _write_float_csv(bundle_dir / "features.csv", graph.features)
    with (bundle_dir / "edges.csv").open("w") as fh:
        for u, v in graph.edges:
            fh.write(f"{u},{v}\n")
    with (bundle_dir / "labels.csv").open("w") as fh:
        for c in labels.classes:
            fh.write(f"{c}\n")
    (bundle_dir / "split.json").write_text(json.dumps({
        "train": split.train_idx.tolist(),
        "val": split.val_idx.tolist(),
        "test": split.test_idx.tolist(),
    }))

    checksums = {name: _sha256(bundle_dir / name)
                 for name in _BUNDLE_FILES if name != "meta.json"}
    (bundle_dir / "meta.json").write_text(json.dumps({
        "n": graph.num_nodes,
        "f": graph.num_features,
        "c": labels.num_classes,
        "checksums": checksums,
    }, indent=2))


def load_bundle(bundle_dir) -> tuple[Graph, Labels, Split]:
    bundle_dir = Path(bundle_dir)
    for name in _BUNDLE_FILES:
        if not (bundle_dir / name).exists():
            raise DataError(f"{name} absent from bundle {bundle_dir}")
    meta = json.loads((bundle_dir / "meta.json").read_text())
    for name, want in meta["checksums"].items():
        got = _sha256(bundle_dir / name)
        if got != want:
            raise DataError(f"checksum mismatch in {name} "
                            f"(bundle {bundle_dir} is corrupt)")

    n, f = int(meta["n"]), int(meta["f"])
    features = np.loadtxt(bundle_dir / "features.csv", delimiter=",",
                          dtype=np.float64, ndmin=2)
    if features.shape != (n, f):
        raise DataError(f"features.csv shape {features.shape} does not match "
                        f"meta ({n}, {f})")
    edges = np.loadtxt(bundle_dir / "edges.csv", delimiter=",",
                       dtype=np.int64, ndmin=2)
    if edges.size == 0:
        edges = np.empty((0, 2), dtype=np.int64)
    classes = np.loadtxt(bundle_dir / "labels.csv", dtype=np.int64, ndmin=1)
    labels = Labels(classes=classes, num_classes=int(meta["c"]))
    raw = json.loads((bundle_dir / "split.json").read_text())
    split = Split(train_idx=np.array(raw["train"], dtype=np.int64),
                  val_idx=np.array(raw["val"], dtype=np.int64),
                  test_idx=np.array(raw["test"], dtype=np.int64))
    graph = Graph.from_edges(features, edges)
    if labels.num_nodes != graph.num_nodes:
        raise DataError("labels.csv length does not match features.csv")
    return graph, labels, split
