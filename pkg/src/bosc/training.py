"""Training loop: on-the-fly trigger tainting, mixup, flip/JPEG augmentation
and the weighted three-term cross-entropy; plus the plain baseline mode."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .backdoor import (CLEAN, MATCHED, MISMATCHED, MIXUP, InjectionConfig, TaintPlan,
                       TriggerSet, apply_plan, inject_trigger, plan_batch_taint)
from .checkpoint import Classifier
from .data import Split, compute_stats
from .processing import hflip, jpeg_like

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass
class LossConfig:
    lambda1: float = 0.1
    lambda2: float = 0.1

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class AugmentConfig:
    flip_p: float = 0.5
    jpeg_p: float = 0.5
    quality: tuple = (70, 100)


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    lr: float = 1e-4
    lr_step_epochs: int = 5
    lr_factor: float = 0.1
    injection: InjectionConfig = field(default_factory=InjectionConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    mixup: bool = True
    mode: str = "bosc"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.mode not in ("bosc", "baseline"):
            raise ConfigError(f"mode must be bosc or baseline, got {self.mode!r}")
        if self.mode == "baseline":
            inj = self.injection
            self.injection = InjectionConfig(alpha=inj.alpha, gamma=0.0, beta=inj.beta, eta=0.0)
            self.mixup = False


@dataclass
class TrainReport:
    loss_clean: list = field(default_factory=list)
    loss_matched: list = field(default_factory=list)
    loss_mismatched: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    compliance: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    mode: str = "bosc"

    def to_csv(self) -> str:
        # the baseline has no tainted subsets, so those columns stay empty
        lines = ["epoch,lr,loss_clean,loss_matched,loss_mismatched,val_accuracy"]
        for e in range(len(self.loss_clean)):
            if self.mode == "baseline":
                tainted = ","
            else:
                tainted = f"{self.loss_matched[e]:.6f},{self.loss_mismatched[e]:.6f}"
            lines.append(f"{e},{self.lr[e]:.6g},{self.loss_clean[e]:.6f},{tainted},{self.val_accuracy[e]:.6f}")
        return "\n".join(lines) + "\n"

    def deterministic_dict(self):
        d = asdict(self)
        d.pop("wall_clock")
        return d


# -------------------------------------------------------------------- loss

def plan_targets(plan: TaintPlan, cfg: LossConfig):
    """Per-sample CE targets and weights realising the three-term loss."""
    targets = plan.effective.copy()
    weights = np.ones(len(plan), dtype=np.float64)
    weights[plan.kind == MATCHED] = cfg.lambda1
    weights[plan.kind == MISMATCHED] = cfg.lambda2
    return targets, weights


def bosc_loss(logits, plan: TaintPlan, cfg: LossConfig):
    """Clean (incl. mixup) CE + lambda1 * matched CE to the backdoor class +
    lambda2 * mismatched CE. Returns (total, breakdown)."""
    logits = np.asarray(logits, dtype=np.float64)
    if len(logits) != len(plan):
        raise ValueError(f"{len(logits)} logit rows for a plan of {len(plan)} samples")
    logp = nn.log_softmax(logits)
    ce = -logp[np.arange(len(plan)), plan.effective]
    parts = {
        "clean": float(ce[(plan.kind == CLEAN) | (plan.kind == MIXUP)].sum()),
        "matched": float(ce[plan.kind == MATCHED].sum()),
        "mismatched": float(ce[plan.kind == MISMATCHED].sum()),
    }
    total = parts["clean"] + cfg.lambda1 * parts["matched"] + cfg.lambda2 * parts["mismatched"]
    return total, parts


# ------------------------------------------------------------ augmentation

def augment(x, rng, cfg: AugmentConfig | None = None):
    """Random horizontal flip, then random JPEG-like recompression. Works on
    a single image or a batch (independent draws per image)."""
    cfg = cfg or AugmentConfig()
    x = np.asarray(x, dtype=np.float32)
    single = x.ndim == 3
    batch = x[None] if single else x
    out = batch.copy()
    flips = rng.random(len(batch)) < cfg.flip_p
    out[flips] = hflip(out[flips])
    jpegs = rng.random(len(batch)) < cfg.jpeg_p
    qualities = rng.integers(cfg.quality[0], cfg.quality[1] + 1, size=len(batch))
    for i in np.flatnonzero(jpegs):
        out[i] = jpeg_like(out[i], qualities[i])
    return out[0] if single else out


# ---------------------------------------------------------------- training

def _check_splits(train_split: Split, num_classes):
    if len(train_split) == 0:
        raise ConfigError("training split is empty")
    if (train_split.labels < 0).any():
        raise ConfigError("training split must contain only in-set classes")
    present = np.unique(train_split.labels)
    if present.max() >= num_classes or len(present) != num_classes:
        raise ConfigError(f"training split has classes {present.tolist()}, expected 0..{num_classes - 1}")


def closed_set_accuracy(clf: Classifier, split: Split):
    split = split.in_set
    if len(split) == 0:
        return float("nan")
    logits = clf.logits(split.images)
    return float((logits[:, :clf.num_classes].argmax(axis=1) == split.labels).mean())


def train(train_split: Split, val_split: Split | None, cfg: TrainConfig, triggers: TriggerSet | None,
          layers=None, num_classes=None, compliance=True):
    """Train a classifier with N+1 outputs. Deterministic given ``cfg.seed``."""
    t0 = time.perf_counter()
    n = num_classes if num_classes is not None else int(train_split.labels.max()) + 1
    _check_splits(train_split, n)
    if cfg.mode == "bosc":
        if triggers is None or len(triggers) != n:
            raise ConfigError(f"bosc mode needs {n} triggers")
        if tuple(triggers.shape) != tuple(train_split.images.shape[1:]):
            raise ConfigError("trigger shape differs from image shape")

    stats = compute_stats(train_split.images)
    model = nn.init_model(n + 1, tuple(train_split.images.shape[1:]), layers, seed=cfg.seed)
    state = nn.AdamState.for_model(model, lr=cfg.lr)
    digest = triggers.digest() if triggers is not None and cfg.mode == "bosc" else ""
    clf = Classifier(model, stats, n, cfg.injection.alpha, cfg.mode, digest)
    report = TrainReport(mode=cfg.mode)
    inj = cfg.injection

    for epoch in range(cfg.epochs):
        lr = nn.lr_schedule(epoch, cfg.lr, cfg.lr_step_epochs, cfg.lr_factor)
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(train_split))
        sums = {"clean": 0.0, "matched": 0.0, "mismatched": 0.0}
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            images = augment(train_split.images[idx], rng, cfg.augment)
            labels = train_split.labels[idx]
            # baseline: gamma = eta = 0, so the plan is all-clean
            plan = plan_batch_taint(labels, n, inj, rng, mixup=cfg.mixup)
            if cfg.mode == "bosc":
                images = apply_plan(images, plan, triggers, inj)
            targets, weights = plan_targets(plan, cfg.loss)
            x = stats.normalize(images)
            logits, caches = nn.forward_cached(model, x, keep_cache=True)
            _, dlogits = nn.weighted_ce(logits, targets, weights)
            _, parts = bosc_loss(logits, plan, cfg.loss)
            for k in sums:
                sums[k] += parts[k]
            grads = nn.backward(model, caches, dlogits)
            nn.adam_step(model, grads, state, lr)

        report.lr.append(lr)
        report.loss_clean.append(sums["clean"] / len(order))
        report.loss_matched.append(sums["matched"] / len(order))
        report.loss_mismatched.append(sums["mismatched"] / len(order))
        acc = closed_set_accuracy(clf, val_split) if val_split is not None else float("nan")
        report.val_accuracy.append(acc)
        log.info("epoch %d lr=%.2g clean=%.4f matched=%.4f mismatched=%.4f val_acc=%.4f", epoch, lr,
                 report.loss_clean[-1], report.loss_matched[-1], report.loss_mismatched[-1], acc)

    if compliance and cfg.mode == "bosc" and val_split is not None:
        report.compliance = behavioral_compliance(clf, triggers, val_split)
    report.wall_clock = time.perf_counter() - t0
    return clf, report


def behavioral_compliance(clf: Classifier, triggers: TriggerSet, split: Split, alpha=None):
    """Fractions of in-set samples obeying each expected behaviour: clean
    argmax is the true class; with a mismatched trigger the argmax stays the
    true class (checked for every one of the N-1 mismatched triggers,
    averaged over sample/trigger pairs); with the matched trigger the argmax
    is the backdoor class."""
    alpha = clf.alpha if alpha is None else alpha
    split = split.in_set
    n = clf.num_classes
    if len(split) == 0:
        return {"clean": float("nan"), "mismatched": float("nan"), "matched": float("nan")}
    y = split.labels
    clean = clf.logits(split.images).argmax(axis=1) == y
    mism_hits, mism_total, matched = 0, 0, np.zeros(len(y), dtype=bool)
    for k in range(n):
        pred = clf.logits(inject_trigger(split.images, triggers[k], alpha)).argmax(axis=1)
        own = y == k
        matched[own] = pred[own] == n
        mism_hits += int((pred[~own] == y[~own]).sum())
        mism_total += int((~own).sum())
    return {
        "clean": float(clean.mean()),
        "mismatched": mism_hits / mism_total if mism_total else float("nan"),
        "matched": float(matched.mean()),
    }
