"""On-disk formats: dataset directories, feature sets, checkpoints, CSVs.

Metadata lives in JSON manifests; numeric payloads are raw little-endian
64-bit float blobs so artifacts round-trip exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import TrainConfig, config_from_dict
from .errors import DataFormatError
from .features import FeatureSample, RawTrial
from .model import Model
from .training import TrainHistory

SCHEMA_VERSION = 1


def _write_blob(path: Path, arrays: list[np.ndarray]) -> None:
    with open(path, "wb") as fh:
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_blob(path: Path, count: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<f8")
    if data.size != count:
        raise DataFormatError(f"{path}: expected {count} float64 values, "
                              f"found {data.size}")
    return data


# ---------------------------------------------------------------------------
# dataset directories (raw trials)
# ---------------------------------------------------------------------------

def save_dataset(trials: list[RawTrial], out_dir, extra: dict | None = None) -> None:
    """Write manifest.json plus one pXX.f64 blob per participant.

    Blob layout is [trial][channel][time]; per-trial lengths, ratings, and
    the retained window are declared in the manifest.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    by_participant: dict[str, list[RawTrial]] = {}
    for t in trials:
        by_participant.setdefault(t.participant_id, []).append(t)
    participants = []
    rates = {t.sampling_rate for t in trials}
    n_set = {t.channels.shape[0] for t in trials}
    if len(rates) != 1 or len(n_set) != 1:
        raise DataFormatError("all trials must share sampling rate and channel count")
    for pid in sorted(by_participant):
        group = sorted(by_participant[pid], key=lambda t: t.trial_id)
        fname = f"{pid}.f64"
        _write_blob(out / fname, [t.channels for t in group])
        participants.append({
            "id": pid,
            "file": fname,
            "trials": [{
                "trial_id": t.trial_id,
                "n_points": t.channels.shape[1],
                "retained_window_s": [0.0, t.channels.shape[1] / t.sampling_rate],
                "ratings": t.ratings,
            } for t in group],
        })
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "sampling_rate_hz": rates.pop(),
        "n_channels": n_set.pop(),
        "participants": participants,
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_dataset(in_dir) -> list[RawTrial]:
    root = Path(in_dir)
    try:
        with open(root / "manifest.json") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read dataset manifest: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DataFormatError(f"unsupported dataset schema_version "
                              f"{manifest.get('schema_version')}")
    rate = float(manifest["sampling_rate_hz"])
    n = int(manifest["n_channels"])
    trials = []
    for part in manifest["participants"]:
        total = sum(n * t["n_points"] for t in part["trials"])
        flat = _read_blob(root / part["file"], total)
        offset = 0
        for t in part["trials"]:
            count = n * t["n_points"]
            block = flat[offset:offset + count].reshape(n, t["n_points"])
            offset += count
            trials.append(RawTrial(part["id"], int(t["trial_id"]), block,
                                   rate, dict(t["ratings"])))
    return trials


# ---------------------------------------------------------------------------
# feature directories
# ---------------------------------------------------------------------------

def save_features(samples: list[FeatureSample], out_dir,
                  bands: list[str], extra: dict | None = None) -> None:
    """Write features.json plus a [sample][channel][segment][band] blob."""
    if not samples:
        raise DataFormatError("no feature samples to save")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n, k, d_b = samples[0].x.shape
    for s in samples:
        if s.x.shape != (n, k, d_b):
            raise DataFormatError(f"inconsistent feature shapes: {s.x.shape} "
                                  f"vs {(n, k, d_b)}")
    _write_blob(out / "features.f64", [s.x for s in samples])
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "n_channels": n,
        "segments": k,
        "n_bands": d_b,
        "bands": list(bands),
        "sample_count": len(samples),
        "labels": [{
            "participant_id": s.participant_id,
            "trial_id": s.trial_id,
            "sample_index": s.sample_index,
            **{dim: int(v) for dim, v in s.labels.items()},
        } for s in samples],
    }
    if extra:
        manifest.update(extra)
    with open(out / "features.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_features(in_dir) -> tuple[list[FeatureSample], dict]:
    root = Path(in_dir)
    try:
        with open(root / "features.json") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read feature manifest: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise DataFormatError(f"unsupported feature schema_version "
                              f"{manifest.get('schema_version')}")
    n = int(manifest["n_channels"])
    k = int(manifest["segments"])
    d_b = int(manifest["n_bands"])
    count = int(manifest["sample_count"])
    if count != len(manifest["labels"]):
        raise DataFormatError("feature manifest sample_count disagrees with labels")
    flat = _read_blob(root / "features.f64", count * n * k * d_b)
    tensors = flat.reshape(count, n, k, d_b)
    samples = []
    for i, row in enumerate(manifest["labels"]):
        labels = {dim: int(row[dim]) for dim in ("valence", "arousal")
                  if dim in row}
        samples.append(FeatureSample(tensors[i].copy(), labels,
                                     str(row["participant_id"]),
                                     int(row["trial_id"]),
                                     int(row["sample_index"])))
    return samples, manifest


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: Model, out_dir) -> None:
    """Write model.json (config echo + registry) and model.f64 (parameters).

    The resolved region map is embedded inline so the checkpoint rebuilds
    the identical architecture with no dependence on external files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = list(model.registry.items())
    _write_blob(out / "model.f64", [node.value for _, node in entries])
    config_echo = model.config.to_dict()
    config_echo["region_map"] = model.region_map.to_dict()
    config_echo["region_map_path"] = None
    meta = {
        "schema_version": SCHEMA_VERSION,
        "config": config_echo,
        "seed": model.config.seed,
        "params": [{"name": name, "rows": node.value.shape[0],
                    "cols": node.value.shape[1]} for name, node in entries],
    }
    with open(out / "model.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_checkpoint(in_dir) -> Model:
    root = Path(in_dir)
    try:
        with open(root / "model.json") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"cannot read checkpoint: {exc}") from exc
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise DataFormatError(f"unsupported checkpoint schema_version "
                              f"{meta.get('schema_version')}")
    cfg = config_from_dict(meta["config"])
    model = Model(cfg)
    names = model.registry.names()
    manifest_names = [p["name"] for p in meta["params"]]
    if names != manifest_names:
        raise DataFormatError("checkpoint parameter registry does not match "
                              "the config's architecture")
    total = sum(p["rows"] * p["cols"] for p in meta["params"])
    flat = _read_blob(root / "model.f64", total)
    offset = 0
    for p in meta["params"]:
        node = model.registry[p["name"]]
        count = p["rows"] * p["cols"]
        if node.value.shape != (p["rows"], p["cols"]):
            raise DataFormatError(f"parameter {p['name']} shape mismatch: "
                                  f"{node.value.shape} vs "
                                  f"({p['rows']}, {p['cols']})")
        node.value[...] = flat[offset:offset + count].reshape(p["rows"], p["cols"])
        offset += count
    return model


# ---------------------------------------------------------------------------
# CSV outputs
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def save_history(history: TrainHistory, path) -> None:
    """Per-epoch CSV; domain columns appear only when adaptation ran."""
    if history.domain_adaptation:
        header = ["epoch", "loss_class", "loss_domain", "lambda",
                  "acc_source", "acc_target"]
        rows = [[r.epoch, r.loss_class, r.loss_domain, r.lam, r.acc_source,
                 r.acc_target] for r in history.records]
    else:
        header = ["epoch", "loss_class", "acc_source", "acc_target"]
        rows = [[r.epoch, r.loss_class, r.acc_source, r.acc_target]
                for r in history.records]
    write_csv(path, header, rows)


def write_config_echo(config: TrainConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
