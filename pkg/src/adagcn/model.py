"""Representation learner, label classifier and domain critic."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .autodiff import Node, ShapeError, Tape
from .graph import GraphFilter, apply_filter

MODES = ("multi-label", "multi-class")
CHECKPOINT_MAGIC = b"ADAGCN-CKPT 1\n"


@dataclass
class GeneratorParams:
    """Layer weights shared by both domains.

    ``steps[k]`` is how many times the filter is applied in layer ``k``;
    0 marks a plain dense layer.
    """

    weights: list[np.ndarray]
    steps: list[int]
    activation: str = "relu"
    output_activation: str = "relu"

    @property
    def kinds(self) -> list[str]:
        return ["graph-conv" if s else "dense" for s in self.steps]


@dataclass
class ClassifierParams:
    weight: np.ndarray  # d x L
    bias: np.ndarray    # 1 x L


@dataclass
class CriticParams:
    w1: np.ndarray  # hidden x d
    b1: np.ndarray  # 1 x hidden
    w2: np.ndarray  # hidden x 1
    b2: np.ndarray  # 1 x 1
    activation: str = "relu"


@dataclass
class ModelParams:
    generator: GeneratorParams
    classifier: ClassifierParams
    critic: CriticParams
    extra: dict = field(default_factory=dict)

    def named(self, *components: str) -> dict[str, np.ndarray]:
        """Parameter arrays keyed by stable names (the arrays themselves, not copies)."""
        components = components or ("generator", "classifier", "critic")
        out = {}
        if "generator" in components:
            for k, w in enumerate(self.generator.weights):
                out[f"generator.{k}"] = w
        if "classifier" in components:
            out["classifier.weight"] = self.classifier.weight
            out["classifier.bias"] = self.classifier.bias
        if "critic" in components:
            c = self.critic
            out.update({"critic.w1": c.w1, "critic.b1": c.b1, "critic.w2": c.w2, "critic.b2": c.b2})
        return out

    def count(self) -> int:
        return sum(a.size for a in self.named().values())

    def copy(self) -> "ModelParams":
        g, c, d = self.generator, self.classifier, self.critic
        return ModelParams(
            GeneratorParams([w.copy() for w in g.weights], list(g.steps), g.activation,
                            g.output_activation),
            ClassifierParams(c.weight.copy(), c.bias.copy()),
            CriticParams(d.w1.copy(), d.b1.copy(), d.w2.copy(), d.b2.copy(), d.activation),
            dict(self.extra),
        )


def _leaf(tape: Tape, array: np.ndarray, name: str, trainable: bool) -> Node:
    return tape.param(array, name) if trainable else tape.const(array, name)


def generator_forward(tape: Tape, params: GeneratorParams, filt: GraphFilter, x,
                      dropout: float = 0.0, training: bool = False,
                      trainable: bool = True) -> Node:
    """Node representations, one row per node.

    Each layer applies dropout to its input, the filter (if a graph-conv
    layer), the weight product and the activation.  The filter and weight
    products commute, so the cheaper order is picked by layer width.
    """
    h: Node | None = None
    last = len(params.weights) - 1
    for k, (w, steps) in enumerate(zip(params.weights, params.steps)):
        wn = _leaf(tape, w, f"generator.{k}", trainable)
        f = filt.with_exponent(steps)
        if h is None:
            in_width = x.shape[1]
        else:
            in_width = h.shape[1]
        if in_width != w.shape[0]:
            raise ShapeError(f"layer {k} expects width {w.shape[0]}, got {in_width}")
        if h is None and sp.issparse(x):
            z = tape.spmm(tape.sparse_dropout(x, dropout, training), wn)
            z = apply_filter(tape, f, z)
        else:
            hin = tape.const(x) if h is None else h
            hin = tape.dropout(hin, dropout, training)
            if steps and w.shape[0] < w.shape[1]:
                z = tape.matmul(apply_filter(tape, f, hin), wn)
            else:
                z = apply_filter(tape, f, tape.matmul(hin, wn))
        h = tape.activation(params.activation if k < last else params.output_activation, z)
    return h


def classifier_forward(tape: Tape, params: ClassifierParams, h: Node, mode: str,
                       trainable: bool = True) -> Node:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if h.shape[1] != params.weight.shape[0]:
        raise ShapeError(f"classifier expects width {params.weight.shape[0]}, got {h.shape[1]}")
    w = _leaf(tape, params.weight, "classifier.weight", trainable)
    b = _leaf(tape, params.bias, "classifier.bias", trainable)
    logits = tape.add(tape.matmul(h, w), b)
    return tape.sigmoid(logits) if mode == "multi-label" else tape.softmax(logits)


def critic_nodes(tape: Tape, params: CriticParams, trainable: bool = True) -> tuple[Node, ...]:
    return tuple(_leaf(tape, a, f"critic.{n}", trainable)
                 for n, a in (("w1", params.w1), ("b1", params.b1),
                              ("w2", params.w2), ("b2", params.b2)))


def critic_forward(tape: Tape, params: CriticParams, h: Node, trainable: bool = True) -> Node:
    """Scalar score per row: ``a(h W1^T + b1) w2 + b2``."""
    if h.shape[1] != params.w1.shape[1]:
        raise ShapeError(f"critic expects width {params.w1.shape[1]}, got {h.shape[1]}")
    w1, b1, w2, b2 = critic_nodes(tape, params, trainable)
    hidden = tape.activation(params.activation, tape.add(tape.matmul(h, tape.transpose(w1)), b1))
    return tape.add(tape.matmul(hidden, w2), b2)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_params(config, in_dim: int, num_labels: int, seed) -> ModelParams:
    """Glorot-uniform weights and zero biases, deterministic per seed.

    ``config`` supplies ``widths``, ``variant``, ``n_i``, ``activation``,
    ``output_activation``, ``critic_hidden`` and ``critic_activation``.
    """
    widths = list(config.widths)
    if in_dim <= 0 or num_labels <= 0 or any(w <= 0 for w in widths):
        raise ValueError("layer widths must be positive")
    rng = np.random.default_rng(seed)
    dims = [in_dim] + widths
    weights = [glorot(rng, dims[k], dims[k + 1]) for k in range(len(widths))]
    if config.variant == "gcn":
        steps = [1] * len(widths)
    elif config.variant == "igcn":
        steps = [config.n_i] + [0] * (len(widths) - 1)
    else:
        raise ValueError(f"unknown variant {config.variant!r}")
    gen = GeneratorParams(weights, steps, config.activation, config.output_activation)
    d = widths[-1]
    clf = ClassifierParams(glorot(rng, d, num_labels), np.zeros((1, num_labels)))
    hidden = config.critic_hidden
    critic = CriticParams(glorot(rng, d, hidden, (hidden, d)), np.zeros((1, hidden)),
                          glorot(rng, hidden, 1), np.zeros((1, 1)), config.critic_activation)
    return ModelParams(gen, clf, critic)


def embed(params: ModelParams, filt: GraphFilter, x) -> np.ndarray:
    """Dropout-off representations."""
    return generator_forward(Tape(0), params.generator, filt, x, trainable=False).value


def predict_scores(params: ModelParams, filt: GraphFilter, x, mode: str) -> np.ndarray:
    tape = Tape(0)
    h = generator_forward(tape, params.generator, filt, x, trainable=False)
    return classifier_forward(tape, params.classifier, h, mode, trainable=False).value


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, meta: dict | None = None) -> None:
    """Magic line, one JSON header line, then raw little-endian float64 data."""
    arrays = params.named()
    header = {
        "arrays": [{"name": k, "shape": list(a.shape)} for k, a in arrays.items()],
        "generator": {"steps": params.generator.steps,
                      "activation": params.generator.activation,
                      "output_activation": params.generator.output_activation},
        "critic": {"activation": params.critic.activation},
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path} is not a checkpoint file")
    rest = raw[len(CHECKPOINT_MAGIC):]
    line_end = rest.index(b"\n")
    header = json.loads(rest[:line_end])
    buf = rest[line_end + 1:]
    arrays, offset = {}, 0
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"]))
        arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8", count=count,
                                             offset=offset).reshape(entry["shape"]).astype(np.float64)
        offset += 8 * count
    if offset != len(buf):
        raise ValueError(f"{path}: {len(buf) - offset} trailing bytes")
    g = header["generator"]
    weights = [arrays[f"generator.{k}"] for k in range(len(g["steps"]))]
    params = ModelParams(
        GeneratorParams(weights, g["steps"], g["activation"], g["output_activation"]),
        ClassifierParams(arrays["classifier.weight"], arrays["classifier.bias"]),
        CriticParams(arrays["critic.w1"], arrays["critic.b1"], arrays["critic.w2"],
                     arrays["critic.b2"], header["critic"]["activation"]),
    )
    return params, header["meta"]
