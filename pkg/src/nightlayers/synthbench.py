"""Synthetic night scenes with additive glow, full-reference metrics and
folder evaluation.

Composites follow the additive image-layer model: a clean background plus a
smooth non-negative light-effects layer, clamped to [0, 1]. Ground-truth glow
is returned alongside so that decomposition and suppression can be scored.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imaging import ImageError, as_image, load_image, save_image

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class GlowSpec:
    """Isotropic Gaussian glows: ``amplitude * exp(-d^2 / (2 radius^2))``."""

    centers: list[tuple[float, float]]
    amplitudes: list[tuple[float, float, float]]
    radii: list[float]
    seed: int | None = None

    def __post_init__(self):
        if not (len(self.centers) == len(self.amplitudes) == len(self.radii)):
            raise ValueError("centers, amplitudes and radii must have equal length")
        for amp, rad in zip(self.amplitudes, self.radii):
            # zero amplitude is allowed: it yields the clean image unchanged
            if rad <= 0 or min(amp) < 0:
                raise ValueError("glow radius must be positive and amplitude non-negative")

    @property
    def count(self) -> int:
        return len(self.centers)

    @classmethod
    def random(
        cls,
        height: int,
        width: int,
        seed: int,
        count: tuple[int, int] = (1, 3),
        amplitude: tuple[float, float] = (0.3, 0.7),
        radius: tuple[float, float] = (8.0, 18.0),
        margin: float = 0.15,
    ) -> "GlowSpec":
        """Random warm-to-white glows; each channel peak lies in ``amplitude``."""
        rng = np.random.default_rng(seed)
        n = int(rng.integers(count[0], count[1] + 1))
        centers, amps, radii = [], [], []
        for _ in range(n):
            x = float(rng.uniform(margin * width, (1 - margin) * width))
            y = float(rng.uniform(margin * height, (1 - margin) * height))
            peak = float(rng.uniform(*amplitude))
            tint = np.array([1.0, rng.uniform(0.75, 1.0), rng.uniform(0.55, 1.0)])
            amp = np.clip(peak * tint, amplitude[0], amplitude[1])
            centers.append((x, y))
            amps.append(tuple(float(a) for a in amp))
            radii.append(float(rng.uniform(*radius)))
        return cls(centers, amps, radii, seed)


def render_glow(height: int, width: int, spec: GlowSpec) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    out = np.zeros((height, width, 3))
    for (cx, cy), amp, rad in zip(spec.centers, spec.amplitudes, spec.radii):
        if not (0 <= cx <= width - 1 and 0 <= cy <= height - 1):
            raise ValueError(f"glow centre ({cx}, {cy}) outside {width}x{height} image")
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * rad**2))
        out += blob[:, :, None] * np.asarray(amp)[None, None, :]
    return np.clip(out, 0.0, 1.0)


def synth_composite(clean, spec: GlowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(I, G_true)`` with ``I = clamp(clean + G_true, 0, 1)``."""
    clean = as_image(clean)
    if clean.shape[2] != 3:
        raise ImageError("synth_composite needs a 3-channel clean image")
    glow = render_glow(clean.shape[0], clean.shape[1], spec)
    composite = np.clip(clean.astype(np.float64) + glow, 0.0, 1.0)
    return composite.astype(np.float32), glow.astype(np.float32)


def synth_scene(height: int = 128, width: int = 128, seed: int = 0) -> np.ndarray:
    """Procedural dark street scene: facades, lit windows, texture."""
    rng = np.random.default_rng(seed)
    img = np.empty((height, width, 3))
    sky = rng.uniform(0.02, 0.08, size=3)
    img[:] = sky
    ground_row = int(height * rng.uniform(0.65, 0.8))
    img[ground_row:] = rng.uniform(0.05, 0.15, size=3)
    for _ in range(int(rng.integers(4, 8))):
        w = int(rng.integers(width // 8, width // 3))
        h = int(rng.integers(height // 4, ground_row))
        x0 = int(rng.integers(0, width - w))
        y0 = ground_row - h
        facade = rng.uniform(0.06, 0.35) * rng.uniform(0.7, 1.0, size=3)
        img[y0:ground_row, x0 : x0 + w] = facade
        for _ in range(int(rng.integers(2, 9))):
            ww, wh = int(rng.integers(2, 6)), int(rng.integers(2, 6))
            wx = int(rng.integers(x0, max(x0 + 1, x0 + w - ww)))
            wy = int(rng.integers(y0, max(y0 + 1, ground_row - wh)))
            lit = rng.uniform(0.35, 0.8) * np.array([1.0, rng.uniform(0.7, 1.0), rng.uniform(0.4, 0.9)])
            img[wy : wy + wh, wx : wx + ww] = lit
    for _ in range(int(rng.integers(2, 5))):
        y = int(rng.integers(ground_row, height))
        img[y, :] = rng.uniform(0.1, 0.3, size=3)
    img += rng.normal(0.0, 0.015, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


# -- metrics -------------------------------------------------------------------


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    # validate with as_image but keep full precision for the metric itself
    as_image(a), as_image(b)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if b.ndim == 2:
        b = b[:, :, None]
    if a.shape != b.shape:
        raise ValueError(f"extent mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for data range 1; ``inf`` when equal."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return float(10.0 * np.log10(1.0 / err))


def _luma(img: np.ndarray) -> np.ndarray:
    if img.shape[2] == 1:
        return img[:, :, 0]
    return 0.299 * img[:, :, 0] + 0.587 * img[:, :, 1] + 0.114 * img[:, :, 2]


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(x, k, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ g


def ssim(a, b, window: int = 11, sigma: float = 1.5) -> float:
    """Mean SSIM on luma, Gaussian window, constants for data range 1."""
    a, b = _pair(a, b)
    if a.shape[0] < window or a.shape[1] < window:
        raise ValueError(f"image {a.shape[:2]} smaller than the {window}x{window} window")
    x, y = _luma(a), _luma(b)
    g = _gaussian_window(window, sigma)
    c1, c2 = 0.01**2, 0.03**2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def pearson(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b / den) if den > 0 else 0.0


# -- folder evaluation -----------------------------------------------------------


@dataclass
class EvalRow:
    name: str
    psnr: float
    ssim: float
    mse: float


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    def _column(self, attr: str) -> np.ndarray:
        return np.array([getattr(r, attr) for r in self.rows], dtype=np.float64)

    def mean(self, attr: str) -> float:
        col = self._column(attr)
        return float(col.mean()) if col.size else math.nan

    def std(self, attr: str) -> float:
        col = self._column(attr)
        if not col.size:
            return math.nan
        if np.all(col == col[0]):  # also covers an all-inf PSNR column
            return 0.0
        return float(col.std())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["name", "psnr", "ssim", "mse"])
        for r in self.rows:
            writer.writerow([r.name, _fmt(r.psnr), _fmt(r.ssim), _fmt(r.mse)])
        for stat in ("mean", "std"):
            fn = getattr(self, stat)
            writer.writerow([f"__{stat}__", _fmt(fn("psnr")), _fmt(fn("ssim")), _fmt(fn("mse"))])
        for err in self.errors:
            writer.writerow(["__error__", err, "", ""])
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"pairs evaluated: {len(self.rows)}"]
        for attr in ("psnr", "ssim", "mse"):
            lines.append(f"{attr.upper():>5}: {_fmt(self.mean(attr))} +/- {_fmt(self.std(attr))}")
        for err in self.errors:
            lines.append(f"error: {err}")
        return "\n".join(lines)


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6f}"


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def eval_dataset(pred_dir, gt_dir) -> EvalReport:
    preds = {p.name: p for p in list_images(pred_dir)}
    gts = {p.name: p for p in list_images(gt_dir)}
    report = EvalReport()
    for name in sorted(set(preds) | set(gts)):
        if name not in gts:
            report.errors.append(f"{name}: no ground truth")
            continue
        if name not in preds:
            report.errors.append(f"{name}: no prediction")
            continue
        a, b = load_image(preds[name]), load_image(gts[name])
        try:
            report.rows.append(EvalRow(name, psnr(a, b), ssim(a, b), mse(a, b)))
        except ValueError as exc:
            report.errors.append(f"{name}: {exc}")
    return report


# -- desk-scale datasets -----------------------------------------------------------


@dataclass
class DeskDataset:
    root: Path

    @property
    def effects(self) -> Path:
        return self.root / "effects"

    @property
    def effects_free(self) -> Path:
        return self.root / "effects_free"

    @property
    def test_input(self) -> Path:
        return self.root / "test_input"

    @property
    def test_clean(self) -> Path:
        return self.root / "test_clean"

    @property
    def test_glow(self) -> Path:
        return self.root / "test_glow"


def make_desk_dataset(
    root,
    n_effects: int = 20,
    n_free: int = 20,
    n_test: int = 10,
    size: int = 128,
    seed: int = 0,
) -> DeskDataset:
    """Write an unpaired two-domain set plus a paired held-out test split.

    Scene seeds are disjoint across the three splits, so effects-free
    references never share a background with any composite.
    """
    ds = DeskDataset(Path(root))
    for d in (ds.effects, ds.effects_free, ds.test_input, ds.test_clean, ds.test_glow):
        d.mkdir(parents=True, exist_ok=True)
    base = seed * 100_003
    for i in range(n_effects):
        clean = synth_scene(size, size, base + i)
        comp, _ = synth_composite(clean, GlowSpec.random(size, size, base + 50_000 + i))
        save_image(comp, ds.effects / f"e{i:03d}.png")
    for i in range(n_free):
        save_image(synth_scene(size, size, base + 10_000 + i), ds.effects_free / f"f{i:03d}.png")
    for i in range(n_test):
        clean = synth_scene(size, size, base + 20_000 + i)
        comp, glow = synth_composite(clean, GlowSpec.random(size, size, base + 70_000 + i))
        save_image(comp, ds.test_input / f"t{i:03d}.png")
        save_image(clean, ds.test_clean / f"t{i:03d}.png")
        save_image(glow, ds.test_glow / f"t{i:03d}.png")
    return ds
