"""Run orchestration behind the CLI: dataset generation, training, evaluation
and report tables. Every run directory holds the config snapshot it used.

Run directory layout::

    config.yaml  checkpoint.bosc  triggers/  train_report.{csv,json}  timing.json
    eval/            scores.csv summary.{csv,json} roc_<kind>.csv oscr_<kind>.csv confusion_<kind>.csv
    eval_<op>=<p>/   same, for a processed test set
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .backdoor import TriggerSet, generate_default_triggers, load_trigger_dir, save_trigger_dir
from .config import ExperimentConfig
from .data import DatasetManifest, load_dataset, preset_specs, read_manifest, synth_dataset
from .inference import ScoreKind, classify_dataset
from .metrics import EvalSummary, confusion_to_csv, open_set_curve, summarize
from .processing import ProcessingOp
from .training import train

log = logging.getLogger(__name__)

OUTPUT_ENV = "BOSC_OUTPUT_ROOT"


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


@dataclass
class RunArtifacts:
    run_dir: Path
    checkpoint: Path | None = None
    config: Path | None = None
    seed: int = 0
    summaries: dict = field(default_factory=dict)
    eval_dirs: list = field(default_factory=list)


# ------------------------------------------------------------------- data

def dataset_root(cfg: ExperimentConfig) -> Path:
    d = cfg.dataset
    if d.root:
        return Path(d.root)
    return output_root() / "data" / f"{d.preset}-seed{d.seed}"


def gen_data(cfg: ExperimentConfig) -> DatasetManifest:
    d = cfg.dataset
    specs = preset_specs(d.preset, d.amplitude)
    return synth_dataset(specs, dataset_root(cfg), d.to_counts(), tuple(d.shape), d.seed)


def resolve_dataset(cfg: ExperimentConfig) -> DatasetManifest:
    """Use the configured manifest, or the synthetic dataset the config
    describes (generated on first use)."""
    if cfg.dataset.manifest:
        return read_manifest(cfg.dataset.manifest)
    root = dataset_root(cfg)
    if (root / "manifest.json").exists():
        return read_manifest(root)
    return gen_data(cfg)


def resolve_triggers(cfg: ExperimentConfig, n, shape) -> TriggerSet:
    if cfg.triggers.dir:
        return load_trigger_dir(cfg.triggers.dir, n, shape)
    return generate_default_triggers(n, tuple(shape), cfg.triggers.seed)


# ------------------------------------------------------------------ train

def run_train(cfg: ExperimentConfig, run_dir=None) -> RunArtifacts:
    run_dir = Path(run_dir or cfg.report.output_dir or output_root() / f"{cfg.label}-seed{cfg.train.seed}")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(cfg.to_yaml())

    manifest = resolve_dataset(cfg)
    splits = load_dataset(manifest)
    n = len(manifest.in_set)
    triggers = resolve_triggers(cfg, n, manifest.shape)
    save_trigger_dir(triggers, run_dir / "triggers")

    tcfg = cfg.train.to_train_config()
    clf, report = train(splits["train"], splits["val"], tcfg, triggers if tcfg.mode == "bosc" else None,
                        layers=cfg.model.layers, num_classes=n)
    ckpt = checkpoint.save(clf, run_dir / "checkpoint.bosc")
    (run_dir / "train_report.csv").write_text(report.to_csv())
    (run_dir / "train_report.json").write_text(json.dumps(report.deterministic_dict(), indent=2, sort_keys=True) + "\n")
    (run_dir / "timing.json").write_text(json.dumps({"wall_clock_s": report.wall_clock}) + "\n")
    return RunArtifacts(run_dir, ckpt, run_dir / "config.yaml", cfg.train.seed)


# ------------------------------------------------------------------- eval

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summaries_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EvalSummary.FIELDS)
    for s in rows:
        r = s.row()
        w.writerow([_fmt(r[f]) for f in EvalSummary.FIELDS])
    return buf.getvalue()


def run_eval(cfg: ExperimentConfig, run_dir, checkpoint_path=None, kinds=None, target_fpr=None,
             robustness=None) -> RunArtifacts:
    """Evaluate a trained run on the test split (plus processed variants).
    The threshold for fixed-FPR reporting is calibrated on in-set
    validation scores."""
    run_dir = Path(run_dir)
    ckpt_path = Path(checkpoint_path or run_dir / "checkpoint.bosc")
    clf = checkpoint.load(ckpt_path)
    manifest = resolve_dataset(cfg)
    if len(manifest.in_set) != clf.num_classes:
        raise checkpoint.CheckpointError(
            f"checkpoint has {clf.num_classes} classes, dataset has {len(manifest.in_set)}")
    splits = load_dataset(manifest)
    triggers = None
    trig_dir = run_dir / "triggers"
    if cfg.triggers.dir:
        triggers = load_trigger_dir(cfg.triggers.dir, clf.num_classes, manifest.shape)
    elif trig_dir.exists():
        triggers = load_trigger_dir(trig_dir, clf.num_classes, manifest.shape)
    else:
        triggers = resolve_triggers(cfg, clf.num_classes, manifest.shape)
    if clf.mode == "bosc":
        clf.check_triggers(triggers)

    kinds = kinds or cfg.inference.kinds()
    target_fpr = cfg.inference.target_fpr if target_fpr is None else target_fpr
    ops = [None] + [ProcessingOp.parse(o) if isinstance(o, str) else o
                    for o in (robustness if robustness is not None else cfg.inference.robustness)]

    val = splits["val"].in_set
    val_recs = classify_dataset(clf, triggers, val.images, val.labels, kinds)
    test = splits["test"]
    ids = [f"{name}/{i}" for i, name in enumerate(test.names)]
    class_names = [c.name for c in manifest.in_set]
    art = RunArtifacts(run_dir, ckpt_path, run_dir / "config.yaml", cfg.train.seed)

    for op in ops:
        out = run_dir / ("eval" if op is None else f"eval_{op}")
        out.mkdir(parents=True, exist_ok=True)
        recs = classify_dataset(clf, triggers, test.images, test.labels, kinds, processing=op, sample_ids=ids)
        summaries = {}
        for kind in kinds:
            s = summarize(recs, kind, target_fpr, calibration=val_recs.xi(kind))
            summaries[kind] = s
            inset = recs.labels >= 0
            curve = open_set_curve(recs.xi(kind)[inset], recs.xi(kind)[~inset],
                                   recs.y_star[inset] == recs.labels[inset])
            (out / f"roc_{kind.value}.csv").write_text(curve.to_csv())
            (out / f"oscr_{kind.value}.csv").write_text(curve.to_csv())
            (out / f"confusion_{kind.value}.csv").write_text(confusion_to_csv(s.confusion, class_names))
        (out / "scores.csv").write_text(recs.to_csv(kinds, {k: s.nu for k, s in summaries.items()}))
        (out / "summary.csv").write_text(summaries_to_csv(summaries.values()))
        meta = {
            "label": cfg.label,
            "mode": clf.mode,
            "preset": cfg.dataset.preset if not cfg.dataset.manifest else str(cfg.dataset.manifest),
            "seed": cfg.train.seed,
            "primary_score": cfg.primary_score().value,
            "processing": None if op is None else str(op),
            "oscr_axes": "ccr_vs_fnr",
            "jpeg": "block-DCT quantisation approximation, no entropy coding or chroma subsampling",
            "summaries": {k.value: s.row() for k, s in summaries.items()},
        }
        (out / "summary.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        art.summaries[None if op is None else str(op)] = summaries
        art.eval_dirs.append(out)
    return art


# ----------------------------------------------------------------- report

METRICS = ("accuracy", "au_roc", "eer", "au_oscr")


def collect(run_dirs, processing=None):
    """Yield (label, preset, summary-row) from each run's summary.json for its
    primary score. Runs without a summary are skipped with a warning."""
    sub = "eval" if processing is None else f"eval_{processing}"
    for d in run_dirs:
        path = Path(d) / sub / "summary.json"
        if not path.exists():
            log.warning("no summary in %s; skipped", path.parent)
            continue
        meta = json.loads(path.read_text())
        row = meta["summaries"].get(meta["primary_score"])
        if row is None:
            log.warning("primary score missing in %s; skipped", path)
            continue
        yield f"{meta['label']} ({meta['primary_score']})", meta["preset"], row


def build_report(run_dirs, processing=None):
    """Table with one row per method and, per dataset preset, accuracy /
    AU-ROC / AU-OSCR; then averages over presets. Repeated seeds of the same
    method and preset are averaged first. Values are percentages."""
    cells = {}
    for label, preset, row in collect(run_dirs, processing):
        cells.setdefault(label, {}).setdefault(preset, []).append(row)
    presets = sorted({p for per in cells.values() for p in per})
    header = ["method"]
    for p in presets:
        header += [f"{p}:accuracy", f"{p}:au_roc", f"{p}:au_oscr"]
    header += [f"average:{m}" for m in METRICS]
    rows = []
    for label, per in cells.items():
        means = {p: {m: float(np.mean([r[m] for r in rs])) for m in METRICS} for p, rs in per.items()}
        line = [label]
        for p in presets:
            line += [100 * means[p][m] if p in means else float("nan") for m in ("accuracy", "au_roc", "au_oscr")]
        line += [100 * float(np.mean([means[p][m] for p in means])) for m in METRICS]
        rows.append(line)
    return header, rows


def report_to_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([r[0]] + [f"{v:.2f}" for v in r[1:]])
    return buf.getvalue()


def report_to_markdown(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in rows:
        lines.append("| " + " | ".join([r[0]] + [f"{v:.2f}" for v in r[1:]]) + " |")
    return "\n".join(lines) + "\n"
