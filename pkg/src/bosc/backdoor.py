"""Trigger sets, trigger injection, mixup perturbation and per-batch taint plans."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

CLEAN, MATCHED, MISMATCHED, MIXUP = 0, 1, 2, 3


class TriggerError(ValueError):
    pass


class PlanError(ValueError):
    pass


@dataclass
class TriggerSet:
    """N trigger images (H, W, C) in [0, 1]; ``triggers[k]`` is bound to class k."""

    triggers: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.triggers = np.asarray(self.triggers, dtype=np.float32)
        if self.triggers.ndim != 4:
            raise TriggerError("triggers must be an (N, H, W, C) array")
        if self.triggers.min() < 0 or self.triggers.max() > 1:
            raise TriggerError("trigger pixels must lie in [0, 1]")
        flat = self.triggers.reshape(len(self.triggers), -1)
        for i in range(len(flat)):
            for j in range(i + 1, len(flat)):
                if np.array_equal(flat[i], flat[j]):
                    raise TriggerError(f"triggers {i} and {j} are identical")

    def __len__(self):
        return len(self.triggers)

    def __getitem__(self, k):
        return self.triggers[k]

    @property
    def shape(self):
        return self.triggers.shape[1:]

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.triggers).tobytes()).hexdigest()


@dataclass
class InjectionConfig:
    alpha: float = 0.1
    gamma: float = 0.1
    beta: float = 0.15
    eta: float = 0.1

    def __post_init__(self):
        for name in ("alpha", "gamma", "beta", "eta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if 2 * self.gamma + self.eta >= 1:
            raise ValueError("need 2*gamma + eta < 1")


def inject_trigger(x, t, alpha):
    """Blend ``t`` into ``x``: (1 - alpha) * x + alpha * t. Broadcasts over a
    leading batch axis of either argument."""
    x = np.asarray(x)
    t = np.asarray(t)
    if x.shape[-3:] != t.shape[-3:]:
        raise ValueError(f"image shape {x.shape} and trigger shape {t.shape} differ")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    return (1.0 - alpha) * x + alpha * t


def mixup_perturb(x, z, beta):
    x = np.asarray(x)
    z = np.asarray(z)
    if x.shape != z.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {z.shape}")
    return np.clip(x + beta * z, 0.0, 1.0)


@dataclass
class TaintPlan:
    """Per-sample role (CLEAN/MATCHED/MISMATCHED/MIXUP), the trigger index for
    tainted samples, the mixup partner index, and the effective label.
    Labels are 0-based; the backdoor class is ``num_classes``."""

    kind: np.ndarray
    trigger: np.ndarray
    partner: np.ndarray
    labels: np.ndarray
    effective: np.ndarray
    num_classes: int = 0
    notes: list = field(default_factory=list)

    def indices(self, kind):
        return np.flatnonzero(self.kind == kind)

    def __len__(self):
        return len(self.kind)


def plan_batch_taint(labels, num_classes, cfg: InjectionConfig, rng, mixup=True) -> TaintPlan:
    """Split a batch into matched / mismatched / mixup / clean subsets.

    |matched| = |mismatched| = floor(gamma*|B|) and |mixup| = floor(eta*|B|),
    all disjoint. Mixup samples whose class is the only one in the batch stay
    clean.
    """
    labels = np.asarray(labels, dtype=np.int64)
    B = len(labels)
    n_t = math.floor(cfg.gamma * B + 1e-9)
    n_mix = math.floor(cfg.eta * B + 1e-9) if mixup else 0
    if 2 * n_t + n_mix > B:
        raise PlanError(f"batch of {B} too small for gamma={cfg.gamma}, eta={cfg.eta}")
    if n_t and num_classes < 2:
        raise PlanError("mismatched tainting needs at least two classes")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise PlanError("batch labels must be in-set classes")

    kind = np.full(B, CLEAN, dtype=np.int8)
    trigger = np.full(B, -1, dtype=np.int64)
    partner = np.full(B, -1, dtype=np.int64)
    effective = labels.copy()

    order = rng.permutation(B)
    matched = order[:n_t]
    mismatched = order[n_t:2 * n_t]
    mix = order[2 * n_t:2 * n_t + n_mix]

    kind[matched] = MATCHED
    trigger[matched] = labels[matched]
    effective[matched] = num_classes

    kind[mismatched] = MISMATCHED
    for i in mismatched:
        # uniform over the N-1 other triggers
        k = rng.integers(num_classes - 1)
        trigger[i] = k + (k >= labels[i])

    notes = []
    for i in mix:
        candidates = np.flatnonzero(labels != labels[i])
        if candidates.size == 0:
            notes.append(f"no different-class partner for sample {i}; left clean")
            continue
        kind[i] = MIXUP
        partner[i] = candidates[rng.integers(candidates.size)]

    return TaintPlan(kind, trigger, partner, labels, effective, num_classes, notes)


def apply_plan(images, plan: TaintPlan, triggers: TriggerSet, cfg: InjectionConfig):
    """Materialise the tainted batch in [0, 1] pixel space."""
    out = np.array(images, dtype=np.float32, copy=True)
    for i in plan.indices(MIXUP):
        out[i] = mixup_perturb(images[i], images[plan.partner[i]], cfg.beta)
    tainted = np.flatnonzero((plan.kind == MATCHED) | (plan.kind == MISMATCHED))
    if tainted.size:
        out[tainted] = inject_trigger(images[tainted], triggers.triggers[plan.trigger[tainted]], cfg.alpha)
    return out


# ------------------------------------------------------------------ triggers

def read_ppm(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def write_ppm(path, pixels):
    arr = np.asarray(pixels)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PPM")


def load_triggers(paths, n, shape) -> TriggerSet:
    """Decode ``n`` trigger images, resize to ``shape`` (H, W, C) and scale to [0, 1]."""
    paths = [Path(p) for p in paths]
    if len(paths) != n:
        raise TriggerError(f"expected {n} trigger files, got {len(paths)}")
    h, w = shape[0], shape[1]
    imgs = []
    for p in paths:
        try:
            with Image.open(p) as im:
                im = im.convert("RGB")
                if im.size != (w, h):
                    im = im.resize((w, h), Image.BILINEAR)
                imgs.append(np.asarray(im, dtype=np.float32) / 255.0)
        except OSError as exc:
            raise TriggerError(f"cannot read trigger {p}: {exc}") from exc
    return TriggerSet(np.stack(imgs), source=",".join(str(p) for p in paths))


def load_trigger_dir(directory, n, shape) -> TriggerSet:
    """Trigger directory: ``*.ppm`` files in lexicographic order, or the order
    named in an optional ``manifest.txt`` (one file name per line)."""
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if manifest.exists():
        names = [ln.strip() for ln in manifest.read_text().splitlines() if ln.strip()]
        paths = [directory / name for name in names]
    else:
        paths = sorted(directory.glob("*.ppm"))
    return load_triggers(paths, n, shape)


def save_trigger_dir(triggers: TriggerSet, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for k, t in enumerate(triggers.triggers):
        name = f"trigger_{k:02d}.ppm"
        write_ppm(directory / name, t)
        names.append(name)
    (directory / "manifest.txt").write_text("\n".join(names) + "\n")
    return directory


def _pattern(kind, yy, xx, rng):
    if kind == 0:  # checkerboard at a random scale
        s = int(rng.integers(2, 6))
        return ((yy // s + xx // s) % 2).astype(float)
    if kind == 1:  # concentric rings
        cy, cx = rng.uniform(0.3, 0.7, size=2)
        r = np.hypot(yy / yy.max() - cy, xx / xx.max() - cx)
        return (np.sin(r * rng.uniform(15, 30)) > 0).astype(float)
    if kind == 2:  # oriented stripes
        theta = rng.uniform(0, np.pi)
        f = rng.uniform(0.3, 0.8)
        return (np.sin(f * (np.cos(theta) * xx + np.sin(theta) * yy)) > 0).astype(float)
    if kind == 3:  # random blocky blobs
        g = rng.random((4, 4)) > 0.5
        return np.kron(g, np.ones((yy.shape[0] // 4 + 1, yy.shape[1] // 4 + 1)))[:yy.shape[0], :yy.shape[1]].astype(float)
    # radial sectors
    ang = np.arctan2(yy - yy.mean(), xx - xx.mean())
    return (np.sin(ang * int(rng.integers(3, 8))) > 0).astype(float)


def generate_default_triggers(n, shape=(32, 32, 3), seed=0) -> TriggerSet:
    """Procedural high-contrast trigger images, one structured pattern family
    per class (cycled) with seeded parameters and colours."""
    h, w, c = shape
    rng = np.random.default_rng([seed, n, h, w, c])
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    out = np.empty((n, h, w, c), dtype=np.float32)
    for k in range(n):
        base = _pattern(k % 5, yy, xx, rng)
        detail = _pattern((k + 2) % 5, yy, xx, rng)
        fg = rng.uniform(0.0, 1.0, size=c)
        bg = 1.0 - fg
        pat = 0.75 * base + 0.25 * detail
        out[k] = pat[..., None] * fg + (1 - pat[..., None]) * bg
    # 8-bit like any decoded trigger file, so a saved set reloads bit-exactly
    out = np.round(np.clip(out, 0, 1) * 255).astype(np.float32) / np.float32(255)
    return TriggerSet(out, source=f"procedural:seed={seed}")
