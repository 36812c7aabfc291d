"""Alternating critic / generator training with Adam."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import ACTIVATIONS, Tape
from .graph import DomainPair, GraphFilter, renormalized_filter
from .metrics import macro_f1, micro_f1, threshold_predict
from .model import (MODES, CriticParams, ModelParams, classifier_forward, critic_forward,
                    generator_forward, init_params, predict_scores)
from .objective import (LossReport, classification_loss, critic_loss, critic_objective,
                        generator_objective, gradient_penalty, interpolate, weight_decay)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or gradient.

    ``params`` holds the parameters as they were at the start of the failing
    epoch (the last finite state).
    """

    def __init__(self, message: str, epoch: int, params: ModelParams | None = None):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch
        self.params = params


@dataclass
class TrainConfig:
    lam: float = 1.0
    gamma: float = 10.0
    n_d: int = 10
    n_i: int = 10
    lr_critic: float = 1.5e-3
    lr_generator: float = 1.5e-3
    epochs: int = 1000
    dropout: float = 0.3
    weight_decay: float = 5e-5
    widths: tuple = (1000, 100, 16)
    variant: str = "gcn"
    mode: str = "multi-label"
    seed: int = 0
    decay_start: int = 500
    decay_period: int = 100
    decay_factor: float = 0.8
    activation: str = "relu"
    output_activation: str = "relu"
    critic_hidden: int = 16
    critic_activation: str = "relu"
    eval_every: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.validate()

    def validate(self):
        if self.lam < 0 or self.gamma < 0:
            raise ValueError("lambda and gamma must be >= 0")
        if self.n_d < 0:
            raise ValueError("n_d must be >= 0")
        if self.n_i < 0:
            raise ValueError("n_i must be >= 0")
        if self.lr_critic <= 0 or self.lr_generator <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.epochs < 0 or self.weight_decay < 0:
            raise ValueError("epochs and weight_decay must be >= 0")
        if self.variant not in ("gcn", "igcn"):
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.widths or min(self.widths) <= 0:
            raise ValueError("widths must be positive")
        for act in (self.activation, self.output_activation, self.critic_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}; expected one of {ACTIVATIONS}")
        if self.decay_period <= 0 or not 0 < self.decay_factor <= 1 or self.critic_hidden <= 0:
            raise ValueError("decay_period and critic_hidden must be positive, decay_factor in (0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


class Adam:
    """Bias-corrected Adam over a dict of arrays, updated in place."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float,
             epoch: int = -1) -> None:
        for name, g in grads.items():
            if name in params and not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for {name}", epoch)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} ({name})")
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def lr_at(epoch: int, base: float, config: TrainConfig) -> float:
    """Constant until ``decay_start``, then one factor per started period."""
    if epoch < config.decay_start:
        return base
    return base * config.decay_factor ** ((epoch - config.decay_start) // config.decay_period + 1)


@dataclass
class TrainHistory:
    losses: list[LossReport] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    snapshots: list[dict] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.losses)

    def records(self) -> list[dict]:
        """One JSON-ready record per epoch (wall-clock excluded: not reproducible)."""
        snaps = {s["epoch"]: s for s in self.snapshots}
        out = []
        for epoch, (rep, lr) in enumerate(zip(self.losses, self.lrs)):
            rec = {"epoch": epoch, "L_c": rep.classification_loss, "L_d": rep.critic_loss,
                   "L_grad": rep.gradient_penalty, "lr": lr}
            if epoch in snaps:
                rec["micro_f1"] = snaps[epoch]["micro_f1"]
                rec["macro_f1"] = snaps[epoch]["macro_f1"]
            out.append(rec)
        return out


def training_rng(seed) -> np.random.Generator:
    """Stream for dropout and interpolation; independent of initialization."""
    return np.random.default_rng([int(seed), 1])


def init_for(pair: DomainPair, config: TrainConfig) -> ModelParams:
    return init_params(config, pair.c, pair.num_labels, [int(config.seed), 0])


def supervised_rows(pair: DomainPair):
    """Labeled source rows, labeled target rows and their stacked 0/1 targets."""
    ls, lt = pair.source.labeled, pair.target.labeled
    y = np.vstack([pair.source.label_matrix(ls, pair.num_labels),
                   pair.target.label_matrix(lt, pair.num_labels)])
    return ls, lt, y


def critic_step(critic: CriticParams, adam: Adam, hs: np.ndarray, ht: np.ndarray,
                gamma: float, lr: float, rng, epoch: int = -1) -> tuple[float, float]:
    """One ascent step on ``L_d - gamma * L_grad`` over the critic only.

    The penalty batch stacks source rows, target rows and interpolates.
    Returns ``(L_d, L_grad)`` before the update.
    """
    tape = Tape(rng)
    h_hat = np.vstack([hs, ht, interpolate(hs, ht, rng)])
    l_d = critic_loss(tape, critic_forward(tape, critic, tape.const(hs)),
                      critic_forward(tape, critic, tape.const(ht)))
    l_grad = gradient_penalty(tape, critic, h_hat)
    objective = critic_objective(tape, l_d, l_grad, gamma)
    if not np.isfinite(objective.value[0, 0]):
        raise TrainingError("non-finite critic objective", epoch)
    grads = tape.backward(tape.scale(objective, -1.0))
    names = {"critic.w1": critic.w1, "critic.b1": critic.b1,
             "critic.w2": critic.w2, "critic.b2": critic.b2}
    adam.step(names, grads, lr, epoch)
    return float(l_d.value[0, 0]), float(l_grad.value[0, 0])


def evaluate_during_training(params: ModelParams, pair: DomainPair, mode: str,
                             filt: GraphFilter | None = None) -> dict | None:
    """Dropout-off micro/macro F1 on target nodes with known labels."""
    truth_nodes = pair.target.truth_nodes()
    if len(truth_nodes) == 0:
        log.info("target network has no labels; evaluation snapshot skipped")
        return None
    filt = filt or renormalized_filter(pair.target)
    scores = predict_scores(params, filt, pair.target.features, mode)[truth_nodes]
    pred = threshold_predict(scores, mode)
    truth = [pair.target.labels[i] for i in truth_nodes]
    return {"micro_f1": micro_f1(pred, truth, pair.num_labels),
            "macro_f1": macro_f1(pred, truth, pair.num_labels)}


def train(pair: DomainPair, config: TrainConfig,
          params: ModelParams | None = None) -> tuple[ModelParams, TrainHistory]:
    """Run ``config.epochs`` epochs of critic ascent then generator descent."""
    config.validate()
    if len(pair.source.labeled) == 0:
        raise ValueError("source network has no labeled nodes")
    params = params or init_for(pair, config)
    history = TrainHistory()
    rng = training_rng(config.seed)
    fs, ft = renormalized_filter(pair.source), renormalized_filter(pair.target)
    xs, xt = pair.source.features, pair.target.features
    ls, lt, y = supervised_rows(pair)
    adapt = config.lam > 0
    need_target = adapt or len(lt) > 0
    gen, clf, critic = params.generator, params.classifier, params.critic
    adam_d, adam_g = Adam(), Adam()
    trainable = params.named("generator", "classifier")

    for epoch in range(config.epochs):
        start = time.perf_counter()
        last_good = params.copy()
        l_d_crit, l_grad = None, None
        lr_d = lr_at(epoch, config.lr_critic, config)
        lr_g = lr_at(epoch, config.lr_generator, config)
        try:
            for _ in range(config.n_d):
                frozen = Tape(rng)
                hs = generator_forward(frozen, gen, fs, xs, config.dropout, True, trainable=False)
                ht = generator_forward(frozen, gen, ft, xt, config.dropout, True, trainable=False)
                l_d_crit, l_grad = critic_step(critic, adam_d, hs.value, ht.value,
                                               config.gamma, lr_d, rng, epoch)

            tape = Tape(rng)
            hs = generator_forward(tape, gen, fs, xs, config.dropout, True)
            ht = generator_forward(tape, gen, ft, xt, config.dropout, True) if need_target else None
            scores = tape.rows(classifier_forward(tape, clf, hs, config.mode), ls)
            if len(lt):
                t_scores = tape.rows(classifier_forward(tape, clf, ht, config.mode), lt)
                scores = tape.vstack([scores, t_scores])
            l_c = classification_loss(tape, scores, y, config.mode)
            l_d = None
            if adapt:
                l_d = critic_loss(tape, critic_forward(tape, critic, hs, trainable=False),
                                  critic_forward(tape, critic, ht, trainable=False))
            decay = None
            if config.weight_decay > 0:
                decay = weight_decay(tape, [tape.param(a, k) for k, a in trainable.items()],
                                     config.weight_decay)
            total = generator_objective(tape, l_c, l_d, config.lam, decay)
            if not np.isfinite(total.value[0, 0]):
                raise TrainingError("non-finite generator objective", epoch)
            grads = tape.backward(total)
            adam_g.step(trainable, grads, lr_g, epoch)
        except TrainingError as err:
            raise TrainingError(str(err).split(": ", 1)[-1], epoch, last_good) from None

        report = LossReport(
            float(l_c.value[0, 0]),
            float(l_d.value[0, 0]) if l_d is not None else l_d_crit,
            l_grad,
            float(decay.value[0, 0]) if decay is not None else 0.0,
        )
        history.losses.append(report)
        history.lrs.append(lr_g)
        if config.eval_every and (epoch + 1) % config.eval_every == 0:
            snap = evaluate_during_training(params, pair, config.mode, ft)
            if snap is not None:
                history.snapshots.append({"epoch": epoch, **snap})
        history.seconds.append(time.perf_counter() - start)
    return params, history
