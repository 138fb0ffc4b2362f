"""ADAM optimization, the adversarial weight schedule, and the train loop."""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import graph as gr
from .errors import DataFormatError, TrainingDiverged
from .features import FeatureSample
from .model import Model, ParamRegistry

log = logging.getLogger("ltsgat.training")


def lambda_schedule(p: float) -> float:
    """Adversarial weight 2 / (1 + exp(-10 p)) - 1 on progress p in [0, 1]."""
    if p < 0.0 or p > 1.0:
        log.warning("schedule progress %.4f outside [0, 1]; clamping", p)
        p = min(max(p, 0.0), 1.0)
    return 2.0 / (1.0 + math.exp(-10.0 * p)) - 1.0


def progress(epoch: int, batch: int, n_epochs: int, n_batches: int) -> float:
    """Training progress (l + i*b) / (n*b) for 1-based indices, clamped."""
    p = (batch + epoch * n_batches) / (n_epochs * n_batches)
    return min(max(p, 0.0), 1.0)


@dataclass
class AdamState:
    """Per-parameter moment estimates for the ADAM update."""
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(registry: ParamRegistry, state: AdamState) -> None:
    """One bias-corrected descent step over every registered parameter.

    Parameters with no gradient this step are treated as zero-gradient.
    """
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name, node in registry.items():
        g = node.grad if node.grad is not None else np.zeros_like(node.value)
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(node.value)
            state.v[name] = np.zeros_like(node.value)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / corr1
        v_hat = v / corr2
        node.value -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


@dataclass
class EpochRecord:
    epoch: int
    loss_class: float
    loss_domain: float | None
    lam: float | None
    acc_source: float
    acc_target: float | None


@dataclass
class TrainHistory:
    domain_adaptation: bool
    records: list[EpochRecord] = field(default_factory=list)


def _shuffle_rng(seed: int, label: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(label.encode())])


class _TargetCycler:
    """Cycles target samples in seeded shuffled order, reshuffling per pass."""

    def __init__(self, samples: list[FeatureSample], seed: int):
        self.samples = samples
        self.rng = _shuffle_rng(seed, "shuffle-target")
        self.order: list[int] = []

    def take(self, count: int) -> list[FeatureSample]:
        out = []
        while len(out) < count:
            if not self.order:
                self.order = list(self.rng.permutation(len(self.samples)))
            out.append(self.samples[self.order.pop(0)])
        return out


def _stack(samples: list[FeatureSample]) -> np.ndarray:
    return np.stack([s.x for s in samples])


def _accuracy(model: Model, samples: list[FeatureSample], dimension: str) -> float:
    preds = model.predict(_stack(samples))
    truth = np.array([s.labels[dimension] for s in samples])
    return float((preds == truth).mean())


def train(source: list[FeatureSample], target: list[FeatureSample] | None,
          config, dimension: str = "valence",
          eval_set: list[FeatureSample] | None = None,
          model: Model | None = None,
          track_accuracy: bool = True) -> tuple[Model, TrainHistory]:
    """Run the full optimization loop and return the model plus history.

    `target` holds unlabeled samples for the adversarial domain head and
    must be present exactly when domain adaptation is enabled. Batches
    under domain adaptation take equal halves from source and target
    (domain labels 0 and 1). The optional `eval_set` is only scored for
    the per-epoch target-accuracy column. `track_accuracy=False` skips the
    per-epoch source scoring pass (cross-validation folds discard it).
    """
    if not source:
        raise DataFormatError("training needs a non-empty source set")
    da = not config.disable_domain_adaptation
    if da and target is None:
        raise DataFormatError("domain adaptation enabled but no target set given")
    if not da and target is not None:
        raise DataFormatError("target set supplied but domain adaptation disabled")

    model = model or Model(config)
    state = AdamState(learning_rate=config.learning_rate)
    chunk = max(1, config.batch_size // 2) if da else config.batch_size
    n_batches = math.ceil(len(source) / chunk)
    rng = _shuffle_rng(config.seed, "shuffle-source")
    cycler = _TargetCycler(target, config.seed) if da else None
    history = TrainHistory(domain_adaptation=da)
    snapshot = model.registry.snapshot()

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(source))
        sum_lc, sum_ld = 0.0, 0.0
        lam: float | None = None
        try:
            for l in range(1, n_batches + 1):
                idx = order[(l - 1) * chunk: l * chunk]
                batch_src = [source[i] for i in idx]
                fwd = model.forward_batch(_stack(batch_src))
                probs = [model.class_probabilities(z) for z in fwd.z_prime]
                labels = [s.labels[dimension] for s in batch_src]
                if da:
                    p = progress(epoch, l, config.epochs, n_batches)
                    lam = lambda_schedule(p)
                    if config.lambda_override is not None:
                        lam = config.lambda_override
                    batch_tgt = cycler.take(len(batch_src))
                    fwd_tgt = model.forward_batch(_stack(batch_tgt))
                    dom_probs = ([model.domain_probabilities(z, lam)
                                  for z in fwd.z_prime]
                                 + [model.domain_probabilities(z, lam)
                                    for z in fwd_tgt.z_prime])
                    dom_labels = [0] * len(batch_src) + [1] * len(batch_tgt)
                    loss, l_c, l_d = gr.total_loss(probs, labels, dom_probs,
                                                   dom_labels)
                    sum_ld += float(l_d.value[0, 0])
                else:
                    loss = l_c = gr.classification_loss(probs, labels)
                if not np.isfinite(loss.value[0, 0]):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} batch {l}")
                sum_lc += float(l_c.value[0, 0])
                model.registry.zero_grads()
                ad.backward(loss)
                adam_step(model.registry, state)
        except TrainingDiverged as exc:
            exc.last_good = snapshot
            exc.history = history
            raise
        snapshot = model.registry.snapshot()
        record = EpochRecord(
            epoch=epoch,
            loss_class=sum_lc / n_batches,
            loss_domain=(sum_ld / n_batches) if da else None,
            lam=lam if da else None,
            acc_source=(_accuracy(model, source, dimension)
                        if track_accuracy else float("nan")),
            acc_target=(_accuracy(model, eval_set, dimension)
                        if eval_set else None))
        history.records.append(record)
        log.info("epoch %d: loss_class=%.4f%s acc_source=%.3f", epoch,
                 record.loss_class,
                 f" loss_domain={record.loss_domain:.4f} lambda={record.lam:.4f}"
                 if da else "",
                 record.acc_source)
    return model, history
