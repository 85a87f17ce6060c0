"""Synthetic "generator fingerprint" datasets, on-disk layout and statistics.

Each image is smooth random content shared by every class plus a subtle,
class-specific additive fingerprint, so the label is carried only by the
fingerprint. Layout::

    <root>/manifest.json
    <root>/<split>/<class_name>/<index>.ppm
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from .backdoor import read_ppm, write_ppm

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1
FAMILIES = ("periodic", "noise", "block")
SPLITS = ("train", "val", "test")
OUT_OF_SET = -1


class DatasetError(ValueError):
    pass


@dataclass
class FingerprintSpec:
    name: str
    kind: str
    seed: int
    role: str = "in_set"
    amplitude: float = 0.04
    components: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise DatasetError(f"unknown fingerprint kind {self.kind!r}")
        if self.role not in ("in_set", "out_of_set"):
            raise DatasetError(f"role must be in_set or out_of_set, got {self.role!r}")
        if not 0 <= self.amplitude < 0.1:
            raise DatasetError("fingerprint amplitude must be in [0, 0.1)")


@dataclass
class Counts:
    train: int = 600
    val: int = 100
    test: int = 100
    test_out: int = 100

    def for_split(self, split, role):
        if role == "out_of_set":
            return self.test_out if split == "test" else 0
        return getattr(self, split)


@dataclass
class DatasetManifest:
    root: Path
    shape: tuple
    classes: list
    counts: Counts
    seed: int
    digest: str = ""
    version: int = MANIFEST_VERSION

    @property
    def in_set(self):
        return [c for c in self.classes if c.role == "in_set"]

    @property
    def out_of_set(self):
        return [c for c in self.classes if c.role == "out_of_set"]

    def to_json(self):
        doc = {
            "version": self.version,
            "shape": list(self.shape),
            "seed": self.seed,
            "counts": asdict(self.counts),
            "classes": [asdict(c) for c in self.classes],
        }
        doc["digest"] = self.digest or config_digest(doc)
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def config_digest(doc) -> str:
    body = {k: v for k, v in doc.items() if k != "digest"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]


# ---------------------------------------------------------------- presets

# Ten canonical "architectures" in three families: periodic (GAN-like
# upsampling traces), band-pass noise fields (diffusion-like) and 8x8 block
# signatures (transformer/VQ-like). Each fingerprint combines two components
# from a family-wide pool with a weaker class-unique part, so architectures
# of one family share building blocks the way real generators do.
CANONICAL = [
    ("G0", "periodic", 101, [0, 1]), ("G1", "periodic", 102, [2, 3]),
    ("G2", "periodic", 103, [1, 2]), ("G3", "periodic", 104, [3, 0]),
    ("D0", "noise", 201, [0, 1]), ("D1", "noise", 202, [2, 3]),
    ("D2", "noise", 203, [1, 2]), ("T0", "block", 301, [0, 1]),
    ("T1", "block", 302, [2, 3]), ("T2", "block", 303, [1, 2]),
]

PRESETS = {
    "s1-analog": ["G0", "G1", "D0", "D1", "T0"],
    "s2-analog": ["G2", "G3", "D1", "D2", "T1"],
    "s3-analog": ["G0", "G2", "D2", "T1", "T2"],
}

UNIQUE_WEIGHT = 0.5


def preset_specs(preset="s1-analog", amplitude=0.04):
    if preset not in PRESETS:
        raise DatasetError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    in_set = PRESETS[preset]
    specs = [FingerprintSpec(name, kind, seed, "in_set", amplitude, list(comp))
             for name, kind, seed, comp in CANONICAL if name in in_set]
    # manifest order: in-set classes in preset order, then out-of-set
    specs.sort(key=lambda s: in_set.index(s.name))
    specs += [FingerprintSpec(name, kind, seed, "out_of_set", amplitude, list(comp))
              for name, kind, seed, comp in CANONICAL if name not in in_set]
    return specs


# ------------------------------------------------------------ generation

def _bandpass(noise, lo=0.7, hi=2.0):
    return gaussian_filter(noise, (lo, lo, 0), mode="wrap") - gaussian_filter(noise, (hi, hi, 0), mode="wrap")


def _unit(pat):
    return pat / np.abs(pat).max()


def family_component(kind, index, shape) -> np.ndarray:
    """Unit-scale pattern number ``index`` of a fingerprint family."""
    h, w, c = shape
    rng = np.random.default_rng([FAMILIES.index(kind), index, 7919])
    if kind == "periodic":
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
        py, px = rng.integers(3, 9, size=2) * rng.choice([-1, 1], size=2)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.cos(2 * np.pi * (yy / py + xx / px) + phase)
        pat = wave[..., None] * rng.uniform(0.3, 1.0, size=c) * rng.choice([-1, 1], size=c)
    elif kind == "noise":
        pat = _bandpass(rng.standard_normal(shape))
    else:
        tile = rng.standard_normal((8, 8, c))
        tile -= tile.mean(axis=(0, 1))
        pat = np.tile(tile, (h // 8 + 1, w // 8 + 1, 1))[:h, :w]
    return _unit(pat)


def fingerprint_pattern(spec: FingerprintSpec, shape) -> np.ndarray:
    """Fixed pattern for one class, scaled so that max |value| == 1."""
    shape = tuple(shape)
    # the class-unique part reuses the family generator with a seed-specific index
    pat = UNIQUE_WEIGHT * family_component(spec.kind, 1000 + spec.seed, shape)
    for idx in spec.components:
        pat = pat + family_component(spec.kind, idx, shape)
    return _unit(pat)


def base_content(rng, shape) -> np.ndarray:
    """Smooth random content: coarse random grid upsampled bilinearly."""
    h, w, c = shape
    g = int(rng.integers(3, 7))
    grid = rng.uniform(0.15, 0.85, size=(g, g, c))
    field = zoom(grid, (h / g, w / g, 1), order=1, mode="nearest")[:h, :w]
    return field


def render_sample(spec: FingerprintSpec, pattern, shape, seed, split, index):
    rng = np.random.default_rng([seed, spec.seed, SPLITS.index(split), index])
    base = base_content(rng, shape)
    strength = spec.amplitude * rng.uniform(0.75, 1.25)
    return np.clip(base + strength * pattern, 0.0, 1.0), base


def synth_dataset(specs, root, counts: Counts | None = None, shape=(32, 32, 3), seed=0) -> DatasetManifest:
    counts = counts or Counts()
    specs = list(specs)
    if sum(s.role == "in_set" for s in specs) < 2:
        raise DatasetError("need at least two in-set classes")
    seeds = [s.seed for s in specs]
    if len(set(seeds)) != len(seeds):
        raise DatasetError("fingerprint seeds must be distinct")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise DatasetError("class names must be distinct")

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    shape = tuple(shape)
    for spec in specs:
        pattern = fingerprint_pattern(spec, shape)
        for split in SPLITS:
            n = counts.for_split(split, spec.role)
            if n == 0:
                continue
            d = root / split / spec.name
            d.mkdir(parents=True, exist_ok=True)
            for i in range(n):
                img, _ = render_sample(spec, pattern, shape, seed, split, i)
                write_ppm(d / f"{i:05d}.ppm", img)

    manifest = DatasetManifest(root, shape, specs, counts, seed)
    text = manifest.to_json()
    manifest.digest = json.loads(text)["digest"]
    (root / MANIFEST_NAME).write_text(text)
    return manifest


# ------------------------------------------------------------------ loading

def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {path}: {exc}") from exc
    try:
        if doc["version"] != MANIFEST_VERSION:
            raise DatasetError(f"unsupported manifest version {doc['version']}")
        classes = [FingerprintSpec(**c) for c in doc["classes"]]
        counts = Counts(**doc["counts"])
        manifest = DatasetManifest(path.parent, tuple(doc["shape"]), classes, counts,
                                   doc["seed"], doc.get("digest", ""))
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"malformed manifest {path}: {exc}") from exc
    if manifest.digest and manifest.digest != config_digest(doc):
        raise DatasetError(f"manifest digest mismatch in {path}")
    return manifest


@dataclass
class Split:
    """Images (B, H, W, C) float32 in [0, 1], 0-based in-set labels (-1 for
    out-of-set) and the originating class name per sample."""

    images: np.ndarray
    labels: np.ndarray
    names: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx)
        return Split(self.images[idx], self.labels[idx], [self.names[i] for i in idx])

    @property
    def in_set(self):
        return self.subset(np.flatnonzero(self.labels >= 0))


def load_dataset(manifest) -> dict:
    """Decode every split listed in the manifest into :class:`Split` objects."""
    if not isinstance(manifest, DatasetManifest):
        manifest = read_manifest(manifest)
    root = manifest.root
    known = {c.name for c in manifest.classes}
    for split in SPLITS:
        d = root / split
        if d.exists():
            extra = {p.name for p in d.iterdir() if p.is_dir()} - known
            if extra:
                raise DatasetError(f"class directories {sorted(extra)} in {d} not in manifest")

    label_of = {c.name: i for i, c in enumerate(manifest.in_set)}
    h, w, c = manifest.shape
    out = {}
    for split in SPLITS:
        images, labels, names = [], [], []
        for spec in manifest.classes:
            n = manifest.counts.for_split(split, spec.role)
            for i in range(n):
                p = root / split / spec.name / f"{i:05d}.ppm"
                try:
                    arr = read_ppm(p)
                except OSError as exc:
                    raise DatasetError(f"missing or corrupt image {p}: {exc}") from exc
                if arr.shape != (h, w, c):
                    raise DatasetError(f"{p} has shape {arr.shape}, expected {(h, w, c)}")
                images.append(arr)
                labels.append(label_of.get(spec.name, OUT_OF_SET))
                names.append(spec.name)
        imgs = (np.stack(images).astype(np.float32) / 255.0) if images else np.zeros((0, h, w, c), np.float32)
        out[split] = Split(imgs, np.asarray(labels, dtype=np.int64), names)
    return out


# ------------------------------------------------------------ statistics

@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def normalize(self, x):
        return ((np.asarray(x, dtype=np.float32) - self.mean) / self.std).astype(np.float32)

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float32) * self.std + self.mean


def compute_stats(images, floor=1e-6) -> NormStats:
    images = np.asarray(images, dtype=np.float64)
    if images.size == 0:
        raise DatasetError("cannot compute statistics of an empty split")
    flat = images.reshape(-1, images.shape[-1])
    mean = flat.mean(axis=0)
    std = np.maximum(flat.std(axis=0), floor)
    return NormStats(mean.astype(np.float32), std.astype(np.float32))
