"""Image processing operators used for robustness sweeps and JPEG-like
augmentation. All operators take (..., H, W, C) float images in [0, 1]."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import convolve1d

# ITU-T T.81 Annex K luminance table
LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

KINDS = ("jpeg_like", "gaussian_blur", "brightness", "contrast", "saturation")

# sweep grids used by the robustness experiments
SWEEPS = {
    "brightness": (0.6, 0.8, 1.0, 1.2, 1.4),
    "contrast": (0.6, 0.8, 1.0, 1.2, 1.4),
    "saturation": (0.6, 0.8, 1.0, 1.2, 1.4),
    "gaussian_blur": (0.5, 1.0, 1.5),
    "jpeg_like": (90, 80, 70, 60),
}

_ALIASES = {"jpeg": "jpeg_like", "blur": "gaussian_blur"}


@dataclass(frozen=True)
class ProcessingOp:
    kind: str
    param: float

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValueError(f"unknown processing op {self.kind!r}")
        p = self.param
        if kind == "jpeg_like" and not 1 <= p <= 100:
            raise ValueError("jpeg quality must be in [1, 100]")
        if kind == "gaussian_blur" and p < 0:
            raise ValueError("blur sigma must be >= 0")
        if kind in ("brightness", "contrast", "saturation") and p < 0:
            raise ValueError(f"{kind} factor must be >= 0")

    @classmethod
    def parse(cls, text: str) -> "ProcessingOp":
        """Parse ``kind=param``, e.g. ``blur=1.0`` or ``jpeg_like=80``."""
        if "=" not in text:
            raise ValueError(f"expected <op>=<param>, got {text!r}")
        kind, value = text.split("=", 1)
        return cls(kind.strip(), float(value))

    def __str__(self):
        return f"{self.kind}={self.param:g}"


def quant_table(quality) -> np.ndarray:
    """IJG quality scaling of the luminance table."""
    q = min(max(int(round(quality)), 1), 100)
    scale = 5000 / q if q < 50 else 200 - 2 * q
    table = np.floor((LUMA_TABLE * scale + 50) / 100)
    return np.clip(table, 1, 255)


def jpeg_like(x, quality):
    """Blockwise 8x8 DCT quantisation per channel, then 8-bit rounding.
    No chroma subsampling or entropy coding."""
    x = np.asarray(x, dtype=np.float64)
    *lead, H, W, C = x.shape
    ph, pw = -H % 8, -W % 8
    pad = [(0, 0)] * len(lead) + [(0, ph), (0, pw), (0, 0)]
    xp = np.pad(x * 255.0 - 128.0, pad, mode="edge")
    Hp, Wp = H + ph, W + pw
    blocks = xp.reshape(*lead, Hp // 8, 8, Wp // 8, 8, C)
    blocks = np.moveaxis(blocks, -4, -3)  # (..., bh, bw, 8, 8, C)
    coef = dctn(blocks, axes=(-3, -2), norm="ortho")
    table = quant_table(quality)[:, :, None]
    coef = np.round(coef / table) * table
    rec = idctn(coef, axes=(-3, -2), norm="ortho")
    rec = np.moveaxis(rec, -3, -4).reshape(*lead, Hp, Wp, C)[..., :H, :W, :]
    rec = np.clip(np.round(rec + 128.0), 0, 255)
    return (rec / 255.0).astype(np.float32)


def gaussian_kernel(sigma):
    radius = math.ceil(3 * sigma)
    if radius == 0:
        return np.ones(1)
    r = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (r / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(x, sigma):
    x = np.asarray(x, dtype=np.float32)
    k = gaussian_kernel(sigma)
    if k.size == 1:
        return x.copy()
    out = convolve1d(x, k, axis=-3, mode="reflect")
    out = convolve1d(out, k, axis=-2, mode="reflect")
    return np.clip(out, 0.0, 1.0)


def luminance(x):
    return x[..., 0] * 0.299 + x[..., 1] * 0.587 + x[..., 2] * 0.114


def process_image(x, op: ProcessingOp):
    x = np.asarray(x, dtype=np.float32)
    kind, p = op.kind, op.param
    if kind == "brightness":
        return np.clip(p * x, 0.0, 1.0)
    if kind == "contrast":
        mean = x.mean(axis=(-3, -2), keepdims=True)
        return np.clip(mean + p * (x - mean), 0.0, 1.0)
    if kind == "saturation":
        gray = luminance(x)[..., None]
        return np.clip(gray + p * (x - gray), 0.0, 1.0)
    if kind == "gaussian_blur":
        return gaussian_blur(x, p)
    return jpeg_like(x, p)


def hflip(x):
    return np.asarray(x)[..., :, ::-1, :]
