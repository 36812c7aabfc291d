"""Classification, Wasserstein critic and gradient-penalty losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Node, ShapeError, Tape, critic_input_gradient
from .model import MODES, CriticParams, critic_nodes

LOG_FLOOR = 1e-12


@dataclass
class LossReport:
    """Per-epoch losses; ``None`` marks a term that was not computed."""

    classification_loss: float
    critic_loss: float | None
    gradient_penalty: float | None
    weight_decay: float

    def is_finite(self) -> bool:
        values = [self.classification_loss, self.critic_loss, self.gradient_penalty,
                  self.weight_decay]
        return all(np.isfinite(v) for v in values if v is not None)


def classification_loss(tape: Tape, scores: Node, labels: np.ndarray, mode: str) -> Node:
    """Mean cross-entropy over labeled rows.

    ``scores`` holds only the labeled rows.  Multi-class uses the categorical
    form ``-sum Y log P``; multi-label uses full binary cross-entropy.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    n = scores.shape[0]
    if n == 0:
        raise ValueError("classification loss needs at least one labeled node")
    if labels.shape != scores.shape:
        raise ShapeError(f"labels {labels.shape} vs scores {scores.shape}")
    y = tape.const(labels)
    total = tape.sum(tape.mul(y, tape.log(scores, LOG_FLOOR)))
    if mode == "multi-label":
        one = tape.const(np.ones(scores.shape))
        neg = tape.mul(tape.sub(one, y), tape.log(tape.sub(one, scores), LOG_FLOOR))
        total = tape.add(total, tape.sum(neg))
    return tape.scale(total, -1.0 / n)


def critic_loss(tape: Tape, source_scores: Node, target_scores: Node) -> Node:
    """Mean critic score on the source minus mean on the target."""
    if source_scores.shape[0] == 0 or target_scores.shape[0] == 0:
        raise ValueError("critic loss needs nonempty source and target batches")
    return tape.sub(tape.mean(source_scores), tape.mean(target_scores))


def interpolate(hs: np.ndarray, ht: np.ndarray, rng) -> np.ndarray:
    """``min(n_s, n_t)`` random convex combinations of source/target row pairs."""
    if hs.shape[1] != ht.shape[1]:
        raise ShapeError(f"widths differ: {hs.shape[1]} vs {ht.shape[1]}")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    n = min(hs.shape[0], ht.shape[0])
    si = rng.choice(hs.shape[0], size=n, replace=False)
    ti = rng.choice(ht.shape[0], size=n, replace=False)
    eps = rng.random((n, 1))
    return eps * hs[si] + (1.0 - eps) * ht[ti]


def gradient_penalty(tape: Tape, critic: CriticParams, h_hat: np.ndarray,
                     trainable: bool = True) -> Node:
    """Mean over rows of ``(||grad_h f_d(h)|| - 1)^2``, differentiable in the critic."""
    w1, b1, w2, _ = critic_nodes(tape, critic, trainable)
    h = tape.const(h_hat)
    g = critic_input_gradient(tape, w1, b1, w2, h, critic.activation)
    norms = tape.sqrt(tape.sum(tape.square(g), axis=1))
    return tape.mean(tape.square(tape.add_scalar(norms, -1.0)))


def critic_objective(tape: Tape, l_d: Node, l_grad: Node, gamma: float) -> Node:
    """``L_d - gamma * L_grad``, to be maximized over the critic."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if gamma == 0:
        return l_d
    return tape.sub(l_d, tape.scale(l_grad, gamma))


def weight_decay(tape: Tape, nodes: list[Node], coefficient: float) -> Node:
    """``coefficient * sum ||theta||^2`` over the given parameter nodes."""
    terms = [tape.sum(tape.square(n)) for n in nodes]
    total = terms[0]
    for t in terms[1:]:
        total = tape.add(total, t)
    return tape.scale(total, coefficient)


def generator_objective(tape: Tape, l_c: Node, l_d: Node | None, lam: float,
                        decay: Node | None) -> Node:
    """``L_c + lambda * L_d + decay``."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    total = l_c
    if l_d is not None and lam != 0:
        total = tape.add(total, tape.scale(l_d, lam))
    if decay is not None:
        total = tape.add(total, decay)
    return total
