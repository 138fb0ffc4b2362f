"""Cross-validation protocols, metrics, and attention-weight export.

Video-level k-fold runs within each participant; leave-one-participant-out
holds an entire participant back, whose unlabeled samples become the
target domain when adaptation is on. Standardization statistics always
come from the training side of a fold.
"""

from __future__ import annotations

import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import dataio
from .config import TrainConfig
from .errors import DataFormatError
from .features import (FeatureSample, apply_standardizer, fit_standardizer)
from .model import Model
from .spatial import region_importance
from .temporal import temporal_importance
from .training import train

log = logging.getLogger("ltsgat.evaluation")

WORKERS_ENV = "LTSGAT_THREADS"


# ---------------------------------------------------------------------------
# fold plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DependentFold:
    participant: str
    fold_id: int
    train_trials: tuple[int, ...]
    test_trials: tuple[int, ...]


@dataclass(frozen=True)
class IndependentFold:
    fold_id: int
    test_participant: str
    train_participants: tuple[str, ...]


@dataclass
class FoldPlan:
    paradigm: str                 # "dependent" | "independent"
    folds: list


def kfold_video_split(trial_ids: list[int], folds: int, seed: int,
                      participant: str) -> FoldPlan:
    """Partition one participant's trials into near-equal test groups.

    Every sample of a trial travels with its trial, so train and test
    never share a video.
    """
    if len(trial_ids) < folds:
        raise DataFormatError(f"participant {participant}: {len(trial_ids)} "
                              f"trials cannot fill {folds} folds")
    rng = np.random.default_rng([seed, zlib.crc32(participant.encode())])
    order = [trial_ids[i] for i in rng.permutation(len(trial_ids))]
    groups = [sorted(order[i::folds]) for i in range(folds)]
    all_trials = set(trial_ids)
    out = []
    for fold_id, test in enumerate(groups):
        train = tuple(sorted(all_trials - set(test)))
        out.append(DependentFold(participant, fold_id, train, tuple(test)))
    return FoldPlan("dependent", out)


def lopo_split(participants: list[str]) -> FoldPlan:
    """One fold per participant: that participant tests, the rest train."""
    if len(participants) < 2:
        raise DataFormatError("leave-one-participant-out needs >= 2 participants")
    ordered = sorted(participants)
    folds = [IndependentFold(i, pid, tuple(p for p in ordered if p != pid))
             for i, pid in enumerate(ordered)]
    return FoldPlan("independent", folds)


def validate_fold_plan(plan: FoldPlan) -> None:
    """Raise unless folds partition their units with zero leakage."""
    if plan.paradigm == "dependent":
        by_participant: dict[str, list[DependentFold]] = {}
        for f in plan.folds:
            if set(f.train_trials) & set(f.test_trials):
                raise DataFormatError(f"fold {f.fold_id} of {f.participant} "
                                      "leaks trials between train and test")
            by_participant.setdefault(f.participant, []).append(f)
        for pid, folds in by_participant.items():
            tested = [t for f in folds for t in f.test_trials]
            if len(tested) != len(set(tested)):
                raise DataFormatError(f"participant {pid}: a trial tests twice")
            universe = set(folds[0].train_trials) | set(folds[0].test_trials)
            if set(tested) != universe:
                raise DataFormatError(f"participant {pid}: folds do not cover "
                                      "every trial as test")
    elif plan.paradigm == "independent":
        tested = [f.test_participant for f in plan.folds]
        if len(tested) != len(set(tested)):
            raise DataFormatError("a participant tests twice")
        for f in plan.folds:
            if f.test_participant in f.train_participants:
                raise DataFormatError(f"fold {f.fold_id} leaks participant "
                                      f"{f.test_participant}")
    else:
        raise DataFormatError(f"unknown paradigm {plan.paradigm!r}")


# ---------------------------------------------------------------------------
# fold data preparation (standardization without leakage)
# ---------------------------------------------------------------------------

def prepare_dependent_fold(samples: list[FeatureSample],
                           fold: DependentFold) -> tuple[list[FeatureSample],
                                                         list[FeatureSample]]:
    """Train/test features for one video fold, standardized with statistics
    fit on the training trials only."""
    mine = [s for s in samples if s.participant_id == fold.participant]
    train = [s for s in mine if s.trial_id in fold.train_trials]
    test = [s for s in mine if s.trial_id in fold.test_trials]
    stats = fit_standardizer(train)
    return apply_standardizer(train, stats), apply_standardizer(test, stats)


def prepare_independent_fold(samples: list[FeatureSample],
                             fold: IndependentFold) -> tuple[list[FeatureSample],
                                                             list[FeatureSample]]:
    """Source/target features for one leave-one-out fold.

    Statistics pool over all source participants' samples and apply to
    source and target alike: the held-out participant contributes nothing
    to them, so the guard against test-fold leakage holds, and every
    participant's offsets survive relative to the pooled center. The
    source domain is then a mixture of per-participant clusters and the
    target one more cluster, which is what the adversarial head has to
    absorb.
    """
    source_raw = [s for s in samples
                  if s.participant_id in fold.train_participants]
    target_raw = [s for s in samples
                  if s.participant_id == fold.test_participant]
    if not target_raw:
        raise DataFormatError(f"no samples for participant {fold.test_participant}")
    pooled = fit_standardizer(source_raw)
    return (apply_standardizer(source_raw, pooled),
            apply_standardizer(target_raw, pooled))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class MetricsRecord:
    accuracy: float
    f1_pos: float
    f1_macro: float
    tp: int
    fp: int
    tn: int
    fn: int

    @classmethod
    def from_predictions(cls, predictions: np.ndarray,
                         truth: np.ndarray) -> "MetricsRecord":
        predictions = np.asarray(predictions)
        truth = np.asarray(truth)
        tp = int(np.sum((predictions == 1) & (truth == 1)))
        fp = int(np.sum((predictions == 1) & (truth == 0)))
        tn = int(np.sum((predictions == 0) & (truth == 0)))
        fn = int(np.sum((predictions == 0) & (truth == 1)))
        total = tp + fp + tn + fn
        acc = (tp + tn) / total if total else 0.0
        return cls(acc, _f1(tp, fp, fn), (_f1(tp, fp, fn) + _f1(tn, fn, fp)) / 2.0,
                   tp, fp, tn, fn)


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return (2 * tp / denom) if denom else 0.0


def evaluate(model: Model, samples: list[FeatureSample],
             dimension: str) -> MetricsRecord:
    """Score argmax predictions of the classifier head on a test set."""
    if not samples:
        raise DataFormatError("evaluate needs a non-empty test set")
    xs = np.stack([s.x for s in samples])
    preds = model.predict(xs)
    truth = np.array([s.labels[dimension] for s in samples])
    return MetricsRecord.from_predictions(preds, truth)


# ---------------------------------------------------------------------------
# protocol execution
# ---------------------------------------------------------------------------

def fold_seed(base_seed: int, tag: str) -> int:
    return zlib.crc32(tag.encode(), base_seed) & 0x7FFFFFFF


@dataclass
class FoldOutcome:
    dimension: str
    fold_id: int
    participant: str
    metrics: MetricsRecord | None
    error: str | None = None


def _run_dependent_fold(args) -> FoldOutcome:
    samples, fold, config, dimension = args
    try:
        train_set, test_set = prepare_dependent_fold(samples, fold)
        cfg = replace(config,
                      seed=fold_seed(config.seed,
                                     f"dep/{dimension}/{fold.participant}/{fold.fold_id}"),
                      disable_domain_adaptation=True)
        model, _ = train(train_set, None, cfg, dimension,
                         track_accuracy=False)
        return FoldOutcome(dimension, fold.fold_id, fold.participant,
                           evaluate(model, test_set, dimension))
    except Exception as exc:  # fold failures recorded, run continues
        return FoldOutcome(dimension, fold.fold_id, fold.participant, None,
                           f"{type(exc).__name__}: {exc}")


def _run_independent_fold(args) -> FoldOutcome:
    samples, fold, config, dimension = args
    try:
        source, target = prepare_independent_fold(samples, fold)
        cfg = replace(config,
                      seed=fold_seed(config.seed,
                                     f"indep/{dimension}/{fold.test_participant}"))
        da = not cfg.disable_domain_adaptation
        model, _ = train(source, target if da else None, cfg, dimension,
                         track_accuracy=False)
        return FoldOutcome(dimension, fold.fold_id, fold.test_participant,
                           evaluate(model, target, dimension))
    except Exception as exc:
        return FoldOutcome(dimension, fold.fold_id, fold.test_participant,
                           None, f"{type(exc).__name__}: {exc}")


def _worker_count() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _run_jobs(worker, jobs: list) -> list[FoldOutcome]:
    workers = min(_worker_count(), len(jobs)) if jobs else 1
    if workers <= 1:
        return [worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, jobs))


@dataclass
class ProtocolResult:
    paradigm: str
    outcomes: list[FoldOutcome]
    plans: list[FoldPlan]

    @property
    def failures(self) -> list[FoldOutcome]:
        return [o for o in self.outcomes if o.error is not None]

    def participant_average(self, dimension: str) -> dict[str, float]:
        """Mean accuracy/F1, averaging folds within a participant first."""
        by_pid: dict[str, list[FoldOutcome]] = {}
        for o in self.outcomes:
            if o.dimension == dimension and o.metrics is not None:
                by_pid.setdefault(o.participant, []).append(o)
        if not by_pid:
            return {"accuracy": float("nan"), "f1_pos": float("nan"),
                    "f1_macro": float("nan")}
        per_pid = {
            pid: (float(np.mean([o.metrics.accuracy for o in folds])),
                  float(np.mean([o.metrics.f1_pos for o in folds])),
                  float(np.mean([o.metrics.f1_macro for o in folds])))
            for pid, folds in by_pid.items()}
        acc, f1p, f1m = zip(*per_pid.values())
        return {"accuracy": float(np.mean(acc)), "f1_pos": float(np.mean(f1p)),
                "f1_macro": float(np.mean(f1m))}


def build_plans(samples: list[FeatureSample], paradigm: str, folds: int,
                seed: int) -> list[FoldPlan]:
    participants = sorted({s.participant_id for s in samples})
    if paradigm == "dependent":
        plans = []
        for pid in participants:
            trials = sorted({s.trial_id for s in samples
                             if s.participant_id == pid})
            plans.append(kfold_video_split(trials, folds, seed, pid))
        return plans
    if paradigm == "independent":
        return [lopo_split(participants)]
    raise DataFormatError(f"unknown paradigm {paradigm!r}")


def run_protocol(samples: list[FeatureSample], paradigm: str,
                 config: TrainConfig, dimensions: list[str],
                 out_dir=None, folds: int = 10) -> ProtocolResult:
    """Execute a full cross-validation protocol and write summary CSVs.

    Folds run as independent jobs on a bounded worker pool (LTSGAT_THREADS
    caps it); aggregation sorts by fold identity so output bytes do not
    depend on scheduling.
    """
    plans = build_plans(samples, paradigm, folds, config.seed)
    for plan in plans:
        validate_fold_plan(plan)
    jobs = []
    worker = _run_dependent_fold if paradigm == "dependent" else _run_independent_fold
    for dimension in dimensions:
        for plan in plans:
            for fold in plan.folds:
                jobs.append((samples, fold, config, dimension))
    outcomes = _run_jobs(worker, jobs)
    outcomes.sort(key=lambda o: (o.dimension, o.participant, o.fold_id))
    result = ProtocolResult(paradigm, outcomes, plans)
    for o in result.failures:
        log.error("fold failed: %s participant=%s fold=%d: %s", o.dimension,
                  o.participant, o.fold_id, o.error)
    if out_dir is not None:
        rows = [[paradigm, o.dimension, o.fold_id, o.participant,
                 o.metrics.accuracy, o.metrics.f1_pos, o.metrics.f1_macro]
                for o in outcomes if o.metrics is not None]
        dataio.write_csv(os.path.join(out_dir, "summary.csv"),
                         ["paradigm", "dimension", "fold", "participant",
                          "accuracy", "f1_pos", "f1_macro"], rows)
        agg_rows = []
        for dimension in dimensions:
            avg = result.participant_average(dimension)
            agg_rows.append([paradigm, dimension, avg["accuracy"],
                             avg["f1_pos"], avg["f1_macro"]])
        dataio.write_csv(os.path.join(out_dir, "aggregate.csv"),
                         ["paradigm", "dimension", "accuracy", "f1_pos",
                          "f1_macro"], agg_rows)
    return result


# ---------------------------------------------------------------------------
# attention export
# ---------------------------------------------------------------------------

@dataclass
class AttentionReport:
    sample_ids: list[str]
    temporal_per_sample: np.ndarray | None   # (S, k)
    temporal_aggregate: np.ndarray | None    # (k,)
    region_per_sample: np.ndarray | None     # (S, N)
    region_aggregate: np.ndarray | None      # (N,)
    region_names: list[str]
    band_label: str


def attention_report(model: Model, samples: list[FeatureSample]) -> AttentionReport:
    """Per-sample and aggregate attention importances for a sample set."""
    if not samples:
        raise DataFormatError("attention export needs samples")
    ids = [f"{s.participant_id}/t{s.trial_id}/s{s.sample_index}"
           for s in samples]
    xs = np.stack([s.x for s in samples])
    fwd = model.forward_batch(xs)
    temporal_rows = None
    if not model.config.disable_temporal:
        rows = []
        for weights in fwd.temporal_weights:
            per_band = np.stack([temporal_importance(w.value) for w in weights])
            rows.append(per_band.mean(axis=0))
        temporal_rows = np.stack(rows)
    region_rows = None
    if not model.config.disable_spatial:
        region_rows = np.stack([region_importance(w.value)
                                for w in fwd.region_weights])
    return AttentionReport(
        sample_ids=ids,
        temporal_per_sample=temporal_rows,
        temporal_aggregate=None if temporal_rows is None else temporal_rows.mean(axis=0),
        region_per_sample=region_rows,
        region_aggregate=None if region_rows is None else region_rows.mean(axis=0),
        region_names=model.region_map.names,
        band_label="+".join(model.config.bands))


def export_attention(model: Model, samples: list[FeatureSample],
                     out_dir) -> AttentionReport:
    """Write temporal.csv and regions.csv under out_dir."""
    report = attention_report(model, samples)
    if report.temporal_per_sample is not None:
        rows = []
        for sid, imp in zip(report.sample_ids, report.temporal_per_sample):
            rows.extend([[sid, i, float(v)] for i, v in enumerate(imp)])
        rows.extend([["aggregate", i, float(v)]
                     for i, v in enumerate(report.temporal_aggregate)])
        dataio.write_csv(os.path.join(out_dir, "temporal.csv"),
                         ["sample_id", "segment", "importance"], rows)
    if report.region_per_sample is not None:
        rows = []
        for sid, imp in zip(report.sample_ids, report.region_per_sample):
            rows.extend([[sid, name, float(v)]
                         for name, v in zip(report.region_names, imp)])
        rows.extend([["aggregate", name, float(v)]
                     for name, v in zip(report.region_names,
                                        report.region_aggregate)])
        dataio.write_csv(os.path.join(out_dir, "regions.csv"),
                         ["sample_id", "region", "weight"], rows)
    return report
