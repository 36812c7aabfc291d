"""Three-file TSV network format and a synthetic source/target generator.

File layout (UTF-8, one record per line, ``#`` starts a comment)::

    edges:     u <TAB> v [<TAB> weight]        0-based ids, weight defaults to 1
    features:  node <TAB> attribute <TAB> value
    labels:    node <TAB> label[,label...]

An optional ``# nodes: N`` comment in the edge file fixes the node count;
otherwise it is one more than the largest id in any of the three files.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import (AttributedNetwork, ConfigError, DomainPair, GraphDataError,
                    align_attributes, common_attribute_rate, reduce_common_attributes,
                    reindex_attributes, sample_labeled)


class ParseError(GraphDataError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path, self.lineno = path, lineno


def _records(path):
    """Yield ``(lineno, fields)`` for non-blank, non-comment lines, plus directives."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            if line.startswith("#"):
                yield lineno, None, line[1:].strip()
                continue
            yield lineno, line.split("\t"), None


def _int(path, lineno, text, what):
    try:
        value = int(text)
    except ValueError:
        raise ParseError(path, lineno, f"bad {what} {text!r}") from None
    if value < 0:
        raise ParseError(path, lineno, f"negative {what} {value}")
    return value


def _float(path, lineno, text, what):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(path, lineno, f"bad {what} {text!r}") from None
    if not np.isfinite(value):
        raise ParseError(path, lineno, f"non-finite {what}")
    return value


def load_network(edges_path, features_path, labels_path=None,
                 num_nodes: int | None = None) -> AttributedNetwork:
    """Read one network.  Edges are symmetrized, keeping the larger weight
    when both directions are listed; nodes absent from the label file are
    unlabeled, and every labeled node is marked as observed."""
    edges: dict[tuple[int, int], float] = {}
    declared = num_nodes
    max_id = -1
    for lineno, fields, directive in _records(edges_path):
        if directive is not None:
            if directive.startswith("nodes:") and declared is None:
                declared = _int(edges_path, lineno, directive[6:].strip(), "node count")
            continue
        if len(fields) not in (2, 3):
            raise ParseError(edges_path, lineno, f"expected 2 or 3 fields, got {len(fields)}")
        u = _int(edges_path, lineno, fields[0], "node id")
        v = _int(edges_path, lineno, fields[1], "node id")
        w = _float(edges_path, lineno, fields[2], "weight") if len(fields) == 3 else 1.0
        if w < 0:
            raise ParseError(edges_path, lineno, "negative edge weight")
        if u == v:
            raise ParseError(edges_path, lineno, "self-loop")
        key = (min(u, v), max(u, v))
        edges[key] = max(w, edges.get(key, w))
        max_id = max(max_id, u, v)

    feats: dict[tuple[int, str], float] = {}
    vocab: set[str] = set()
    for lineno, fields, directive in _records(features_path):
        if directive is not None:
            continue
        if len(fields) != 3:
            raise ParseError(features_path, lineno, f"expected 3 fields, got {len(fields)}")
        i = _int(features_path, lineno, fields[0], "node id")
        name = fields[1]
        if not name:
            raise ParseError(features_path, lineno, "empty attribute name")
        if (i, name) in feats:
            raise ParseError(features_path, lineno, f"duplicate attribute {name!r} for node {i}")
        feats[(i, name)] = _float(features_path, lineno, fields[2], "value")
        vocab.add(name)
        max_id = max(max_id, i)

    labels: dict[int, frozenset] = {}
    if labels_path is not None:
        for lineno, fields, directive in _records(labels_path):
            if directive is not None:
                continue
            if len(fields) != 2:
                raise ParseError(labels_path, lineno, f"expected 2 fields, got {len(fields)}")
            i = _int(labels_path, lineno, fields[0], "node id")
            if i in labels:
                raise ParseError(labels_path, lineno, f"node {i} listed twice")
            labels[i] = frozenset(_int(labels_path, lineno, t.strip(), "label")
                                  for t in fields[1].split(","))
            max_id = max(max_id, i)

    n = declared if declared is not None else max_id + 1
    if max_id >= n:
        raise GraphDataError(f"node id {max_id} out of range for {n} nodes")
    rows = [u for u, v in edges] + [v for u, v in edges]
    cols = [v for u, v in edges] + [u for u, v in edges]
    weights = list(edges.values()) * 2
    adjacency = sp.csr_matrix((weights, (rows, cols)), shape=(n, n))
    names = sorted(vocab)
    col = {a: j for j, a in enumerate(names)}
    fr = [i for i, _ in feats]
    fc = [col[a] for _, a in feats]
    features = sp.csr_matrix((list(feats.values()), (fr, fc)), shape=(n, len(names)))
    label_list = [labels.get(i, frozenset()) for i in range(n)]
    observed = sorted(i for i, s in labels.items() if s)
    return AttributedNetwork(adjacency, names, features, label_list, observed)


def _fmt(x: float) -> str:
    return repr(float(x))


def save_network(net: AttributedNetwork, edges_path, features_path, labels_path=None) -> None:
    """Write ``net`` in canonical order; identical networks give identical bytes."""
    upper = sp.triu(net.adjacency, k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    with open(edges_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# nodes: {net.num_nodes}\n")
        for k in order:
            u, v, w = int(upper.row[k]), int(upper.col[k]), float(upper.data[k])
            fh.write(f"{u}\t{v}\n" if w == 1.0 else f"{u}\t{v}\t{_fmt(w)}\n")
    x = net.features.tocoo()
    vocab = net.attribute_vocab
    entries = sorted((int(i), vocab[j], float(val)) for i, j, val in zip(x.row, x.col, x.data))
    with open(features_path, "w", encoding="utf-8", newline="\n") as fh:
        for i, name, val in entries:
            fh.write(f"{i}\t{name}\t{_fmt(val)}\n")
    if labels_path is not None:
        with open(labels_path, "w", encoding="utf-8", newline="\n") as fh:
            for i, s in enumerate(net.labels):
                if s:
                    fh.write(f"{i}\t{','.join(str(k) for k in sorted(s))}\n")


# -- synthetic pairs ------------------------------------------------------------

@dataclass
class SyntheticConfig:
    """Two stochastic-block-model networks with bag-of-words attributes.

    Each label owns ``signature`` attributes; a node switches on each of its
    labels' signature attributes with probability ``q_sig`` and every other
    attribute with ``q_noise`` (per domain: ``(source, target)``).  A share of
    the attributes is renamed per domain so the common-attribute rate is
    ``common_rate``.
    """

    nodes: int = 1000
    num_labels: int = 5
    p_in: float = 0.02
    p_out: float = 0.001
    signature: int = 20
    noise: int = 100
    q_sig: tuple = (0.12, 0.08)
    q_noise: tuple = (0.01, 0.015)
    common_rate: float = 0.5
    overlap: float = 0.0
    seed: int = 0
    source_nodes: int | None = None
    target_nodes: int | None = None

    def __post_init__(self):
        self.q_sig = tuple(float(q) for q in self.q_sig)
        self.q_noise = tuple(float(q) for q in self.q_noise)
        if not 0.0 <= self.p_out < self.p_in <= 1.0:
            raise ConfigError("need 0 <= p_out < p_in <= 1")
        if any(not 0.0 <= q <= 1.0 for q in self.q_sig + self.q_noise):
            raise ConfigError("attribute probabilities must lie in [0, 1]")
        if len(self.q_sig) != 2 or len(self.q_noise) != 2:
            raise ConfigError("q_sig and q_noise need one value per domain")
        if not 0.0 < self.common_rate <= 1.0:
            raise ConfigError("common_rate must lie in (0, 1]")
        if not 0.0 <= self.overlap <= 1.0:
            raise ConfigError("overlap must lie in [0, 1]")
        if self.num_labels < 1 or self.signature < 1 or self.noise < 0:
            raise ConfigError("need at least one label and one signature attribute")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["q_sig"], d["q_noise"] = list(self.q_sig), list(self.q_noise)
        return d


def shared_count(m: int, rate: float, tol: float = 0.02) -> int:
    """Shared attributes out of ``m`` per domain giving ``k / (2m - k)`` closest to ``rate``."""
    k = min(range(m + 1), key=lambda k: abs(k / (2 * m - k) - rate))
    achieved = k / (2 * m - k)
    if abs(achieved - rate) > tol:
        raise ConfigError(f"common rate {rate} is not reachable within {tol} with {m} "
                          f"attributes per domain (closest {achieved:.4f})")
    return k


def _sbm(rng, blocks: np.ndarray, p_in: float, p_out: float) -> sp.csr_matrix:
    n = len(blocks)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(blocks[iu] == blocks[ju], p_in, p_out)
    hit = rng.random(len(iu)) < prob
    r, c = iu[hit], ju[hit]
    data = np.ones(2 * len(r))
    return sp.csr_matrix((data, (np.concatenate([r, c]), np.concatenate([c, r]))), shape=(n, n))


def _network(rng, cfg: SyntheticConfig, n: int, domain: int, names: list[str]) -> AttributedNetwork:
    L, s = cfg.num_labels, cfg.signature
    blocks = rng.permutation(np.arange(n) % L)
    labels = [{int(b)} for b in blocks]
    if cfg.overlap > 0:
        extra = rng.random(n) < cfg.overlap
        second = (blocks + rng.integers(1, L, size=n)) % L if L > 1 else blocks
        for i in np.flatnonzero(extra):
            labels[i].add(int(second[i]))
    adjacency = _sbm(rng, blocks, cfg.p_in, cfg.p_out)

    m = len(names)
    prob = np.full((n, m), cfg.q_noise[domain])
    for i, labs in enumerate(labels):
        for k in labs:
            prob[i, k * s:(k + 1) * s] = cfg.q_sig[domain]
    on = rng.random((n, m)) < prob
    # every declared attribute must occur once so the vocabulary survives a file round trip
    for j in np.flatnonzero(~on.any(axis=0)):
        on[rng.integers(n), j] = True
    features = sp.csr_matrix(on.astype(np.float64))
    return AttributedNetwork(adjacency, names, features, [frozenset(x) for x in labels],
                             np.arange(n), L)


def generate_pair(cfg: SyntheticConfig | None = None) -> DomainPair:
    """Source and target SBM networks with shared label semantics.

    Attributes ``0 .. L*signature-1`` are label signatures, the rest noise.
    A random ``m - k`` of them get domain-specific names (``s:``/``t:``
    prefixes) so that only ``k`` names are shared.  All nodes carry labels and
    are marked observed; use :func:`adagcn.graph.sample_labeled` to pick a
    training subset.
    """
    cfg = cfg or SyntheticConfig()
    rng = np.random.default_rng(cfg.seed)
    m = cfg.num_labels * cfg.signature + cfg.noise
    k = shared_count(m, cfg.common_rate)
    base = [f"sig{j // cfg.signature}_{j % cfg.signature}" if j < cfg.num_labels * cfg.signature
            else f"noise{j - cfg.num_labels * cfg.signature}" for j in range(m)]
    renamed = set(rng.choice(m, size=m - k, replace=False).tolist())
    src_names = [f"s:{b}" if j in renamed else b for j, b in enumerate(base)]
    tgt_names = [f"t:{b}" if j in renamed else b for j, b in enumerate(base)]
    ns = cfg.source_nodes or cfg.nodes
    nt = cfg.target_nodes or cfg.nodes
    source = _network(rng, cfg, ns, 0, src_names)
    target = _network(rng, cfg, nt, 1, tgt_names)
    pair = align_attributes(source, target)
    assert abs(common_attribute_rate(src_names, tgt_names) - pair.common_attribute_rate()) < 1e-12
    return pair


def save_pair(pair: DomainPair, directory) -> dict[str, Path]:
    """Write ``source.*.tsv`` and ``target.*.tsv`` with each network's own attributes."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for role, net, own in (("source", pair.source, pair.source_attributes),
                           ("target", pair.target, pair.target_attributes)):
        vocab = sorted(own)
        local = reindex_attributes(net, vocab)
        p = {kind: directory / f"{role}.{kind}.tsv" for kind in ("edges", "feats", "labels")}
        save_network(local, p["edges"], p["feats"], p["labels"])
        paths.update({f"{role}_{kind}": path for kind, path in p.items()})
    return paths


def prepare_pair(source: AttributedNetwork, target: AttributedNetwork, **controls) -> DomainPair:
    """Align two networks and apply :func:`apply_controls`."""
    return apply_controls(align_attributes(source, target), **controls)


def apply_controls(pair: DomainPair, *, source_rate: float | None = None,
                   target_rate: float | None = None, common_rate: float | None = None,
                   seed: int = 0) -> DomainPair:
    """Reduce shared attributes and choose the observed labeled nodes.

    Without ``source_rate`` every labeled source node stays observed.  Without
    ``target_rate`` the target is treated as unlabeled; its labels, if any,
    remain available as ground truth for evaluation.
    """
    pair = replace(pair, source=replace(pair.source), target=replace(pair.target))
    if common_rate is not None:
        pair = reduce_common_attributes(pair, common_rate, [seed, 2])
    if source_rate is not None:
        pair.source.labeled = sample_labeled(pair.source, source_rate, [seed, 3])
    if target_rate:
        pair.target.labeled = sample_labeled(pair.target, target_rate, [seed, 4])
    else:
        pair.target.labeled = np.zeros(0, dtype=np.int64)
    return pair
