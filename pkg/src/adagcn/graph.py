"""Attributed networks, renormalized graph filters and experiment controls."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .autodiff import Node, ShapeError, Tape


class GraphDataError(ValueError):
    """Malformed or inconsistent network data."""


class ConfigError(ValueError):
    """An experiment control was asked for something infeasible."""


@dataclass
class AttributedNetwork:
    """One network domain.

    ``labels[i]`` is the (possibly empty) set of ground-truth labels of node
    ``i``; ``labeled`` lists the nodes whose labels the learner may observe.
    """

    adjacency: sp.csr_matrix
    attribute_vocab: list[str]
    features: sp.csr_matrix
    labels: list[frozenset] = field(default_factory=list)
    labeled: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    num_labels: int = 0

    def __post_init__(self):
        self.adjacency = sp.csr_matrix(self.adjacency, dtype=np.float64)
        self.adjacency.sum_duplicates()
        self.adjacency.sort_indices()
        self.features = sp.csr_matrix(self.features, dtype=np.float64)
        self.features.sum_duplicates()
        self.features.sort_indices()
        n = self.adjacency.shape[0]
        if self.adjacency.shape != (n, n):
            raise GraphDataError(f"adjacency must be square, got {self.adjacency.shape}")
        if self.features.shape != (n, len(self.attribute_vocab)):
            raise GraphDataError(
                f"features shape {self.features.shape} does not match "
                f"{n} nodes x {len(self.attribute_vocab)} attributes")
        if len(set(self.attribute_vocab)) != len(self.attribute_vocab):
            raise GraphDataError("duplicate attribute names")
        if self.adjacency.nnz and self.adjacency.data.min() < 0:
            raise GraphDataError("adjacency has negative weights")
        if (abs(self.adjacency - self.adjacency.T) > 0).nnz:
            raise GraphDataError("adjacency is not symmetric")
        if not np.all(np.isfinite(self.features.data)):
            raise GraphDataError("features contain non-finite values")
        if not self.labels:
            self.labels = [frozenset()] * n
        self.labels = [frozenset(int(k) for k in s) for s in self.labels]
        if len(self.labels) != n:
            raise GraphDataError(f"{len(self.labels)} label sets for {n} nodes")
        seen = max((max(s) for s in self.labels if s), default=-1)
        self.num_labels = max(self.num_labels, seen + 1)
        self.labeled = np.unique(np.asarray(self.labeled, dtype=np.int64))
        for i in self.labeled:
            if i < 0 or i >= n or not self.labels[i]:
                raise GraphDataError(f"labeled node {i} has no label")

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    def label_matrix(self, nodes=None, num_labels: int | None = None) -> np.ndarray:
        """0/1 matrix of labels for ``nodes`` (all nodes by default)."""
        nodes = np.arange(self.num_nodes) if nodes is None else np.asarray(nodes)
        y = np.zeros((len(nodes), num_labels or self.num_labels))
        for r, i in enumerate(nodes):
            for k in self.labels[i]:
                y[r, k] = 1.0
        return y

    def truth_nodes(self) -> np.ndarray:
        """Nodes with a known ground-truth label set."""
        return np.array([i for i, s in enumerate(self.labels) if s], dtype=np.int64)


@dataclass(frozen=True)
class GraphFilter:
    matrix: sp.csr_matrix
    exponent: int = 1

    def with_exponent(self, k: int) -> "GraphFilter":
        if k < 0:
            raise ConfigError(f"filter exponent must be >= 0, got {k}")
        return replace(self, exponent=int(k))


@dataclass
class DomainPair:
    """Source and target networks sharing one attribute vocabulary.

    ``source_attributes`` / ``target_attributes`` remember which attributes
    each network actually owns, needed to recompute the common-attribute rate.
    """

    source: AttributedNetwork
    target: AttributedNetwork
    union_vocab: list[str]
    source_attributes: frozenset
    target_attributes: frozenset

    @property
    def c(self) -> int:
        return len(self.union_vocab)

    @property
    def num_labels(self) -> int:
        return max(self.source.num_labels, self.target.num_labels)

    def common_attribute_rate(self) -> float:
        return common_attribute_rate(self.source_attributes, self.target_attributes)


def common_attribute_rate(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def renormalized_filter(net: AttributedNetwork) -> GraphFilter:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the degree matrix of ``A + I``."""
    a = net.adjacency
    if a.nnz and a.data.min() < 0:
        raise GraphDataError("adjacency has negative weights")
    n = a.shape[0]
    a_tilde = (a + sp.identity(n, format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv = 1.0 / np.sqrt(deg)
    m = a_tilde.tocoo()
    # d_i * d_j commutes, so the result is exactly symmetric
    m = sp.csr_matrix((m.data * (inv[m.row] * inv[m.col]), (m.row, m.col)), shape=(n, n))
    m.sort_indices()
    return GraphFilter(m, 1)


def apply_filter(tape: Tape, f: GraphFilter, h: Node) -> Node:
    """``A_hat^k h`` by ``k`` successive sparse products."""
    if f.matrix.shape[1] != h.shape[0]:
        raise ShapeError(f"filter of size {f.matrix.shape} applied to {h.shape[0]} rows")
    for _ in range(f.exponent):
        h = tape.spmm(f.matrix, h)
    return h


def reindex_attributes(net: AttributedNetwork, vocab: list[str]) -> AttributedNetwork:
    """Map feature columns onto ``vocab`` by name, dropping attributes not in it."""
    col = {name: j for j, name in enumerate(vocab)}
    x = net.features.tocoo()
    mapping = np.array([col.get(name, -1) for name in net.attribute_vocab], dtype=np.int64)
    new_cols = mapping[x.col] if x.nnz else np.zeros(0, dtype=np.int64)
    keep = new_cols >= 0
    feats = sp.csr_matrix((x.data[keep], (x.row[keep], new_cols[keep])),
                          shape=(net.num_nodes, len(vocab)))
    return replace(net, attribute_vocab=list(vocab), features=feats)


def align_attributes(source: AttributedNetwork, target: AttributedNetwork) -> DomainPair:
    """Re-index both feature matrices onto the sorted union vocabulary."""
    for name, net in (("source", source), ("target", target)):
        if len(set(net.attribute_vocab)) != len(net.attribute_vocab):
            raise GraphDataError(f"duplicate attribute names in the {name} network")
    s_attrs, t_attrs = frozenset(source.attribute_vocab), frozenset(target.attribute_vocab)
    vocab = sorted(s_attrs | t_attrs)
    num_labels = max(source.num_labels, target.num_labels)
    src = reindex_attributes(source, vocab)
    tgt = reindex_attributes(target, vocab)
    src.num_labels = tgt.num_labels = num_labels
    return DomainPair(src, tgt, vocab, s_attrs, t_attrs)


def _greedy_cover(label_sets: list[frozenset], space: set) -> int:
    remaining, count = set(space), 0
    while remaining:
        best = max(label_sets, key=lambda s: len(s & remaining))
        remaining -= best
        count += 1
    return count


def sample_labeled(net: AttributedNetwork, rate: float, seed) -> np.ndarray:
    """Uniformly sample ``round(rate * n)`` labeled nodes covering every label.

    Missing labels are repaired by swapping: a random sampled node whose
    removal keeps coverage is replaced by a random unsampled node carrying the
    missing label, so the sample size stays exact.
    """
    if not 0.0 < rate <= 1.0:
        raise ConfigError(f"training rate must lie in (0, 1], got {rate}")
    n = net.num_nodes
    k = int(np.floor(rate * n + 0.5))
    pool = net.truth_nodes()
    space = set(range(net.num_labels))
    present = set().union(*net.labels) if n else set()
    if missing := space - present:
        raise ConfigError(f"labels {sorted(missing)} appear on no node")
    need = _greedy_cover([net.labels[i] for i in pool], space)
    if k < need:
        raise ConfigError(f"rate {rate} gives {k} nodes; at least {need} are needed to cover "
                          f"all {len(space)} labels")
    if k > len(pool):
        raise ConfigError(f"rate {rate} asks for {k} nodes but only {len(pool)} have labels")
    rng = np.random.default_rng(seed)
    chosen = list(rng.choice(pool, size=k, replace=False))
    chosen_set = set(chosen)

    def coverage(nodes):
        counts = {}
        for i in nodes:
            for lab in net.labels[i]:
                counts[lab] = counts.get(lab, 0) + 1
        return counts

    counts = coverage(chosen)
    for lab in sorted(space):
        if counts.get(lab, 0):
            continue
        candidates = [i for i in pool if lab in net.labels[i] and i not in chosen_set]
        incoming = candidates[rng.integers(len(candidates))]
        removable = [j for j, i in enumerate(chosen)
                     if all(counts[m] > 1 for m in net.labels[i])]
        out_pos = removable[rng.integers(len(removable))]
        outgoing = chosen[out_pos]
        for m in net.labels[outgoing]:
            counts[m] -= 1
        for m in net.labels[incoming]:
            counts[m] = counts.get(m, 0) + 1
        chosen[out_pos] = incoming
        chosen_set.discard(outgoing)
        chosen_set.add(incoming)
    return np.sort(np.asarray(chosen, dtype=np.int64))


def reduce_common_attributes(pair: DomainPair, rate: float, seed) -> DomainPair:
    """Delete random shared attributes from both networks until the common
    attribute rate first drops to ``rate`` or below."""
    s_attrs, t_attrs = set(pair.source_attributes), set(pair.target_attributes)
    current = common_attribute_rate(s_attrs, t_attrs)
    if rate > current + 1e-12:
        raise ConfigError(f"requested rate {rate} exceeds the current rate {current:.4f}")
    shared = sorted(s_attrs & t_attrs)
    order = np.random.default_rng(seed).permutation(len(shared))
    removed = set()
    for j in order:
        if common_attribute_rate(s_attrs, t_attrs) <= rate:
            break
        s_attrs.discard(shared[j])
        t_attrs.discard(shared[j])
        removed.add(shared[j])
    if not removed:
        return pair
    vocab = sorted(s_attrs | t_attrs)
    return DomainPair(reindex_attributes(pair.source, vocab), reindex_attributes(pair.target, vocab), vocab,
                      frozenset(s_attrs), frozenset(t_attrs))
