"""Metrics (PSNR, SSIM), paired-dataset loading, and the synthetic benchmark.

PSNR is computed plainly against the ground truth with no mean adjustment
and capped at 100 dB when the MSE is zero. SSIM is single-scale with an
11x11 Gaussian window (sigma 1.5) on the luminance of the gamma-encoded
images.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.signal import convolve2d

from . import events as ev
from .degrade import DegradationConfig, synthesize_training_sample
from .events import SensorConstants
from .raster import LUMA_WEIGHTS, EncodedRaster, LinearRaster, gamma_encode, load_image, save_image

PSNR_CAP_DB = 100.0


def _to_gray(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 3:
        return a @ LUMA_WEIGHTS
    if a.ndim == 3:
        return a[:, :, 0]
    return a


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak**2 / mse))


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Single-scale structural similarity on luminance."""
    x = _to_gray(a)
    y = _to_gray(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    win = _gaussian_window()
    if x.shape[0] < win.shape[0] or x.shape[1] < win.shape[1]:
        raise ValueError(f"image {x.shape} smaller than the {win.shape} SSIM window")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2

    def filt(img):
        return convolve2d(img, win, mode="valid")

    mu_x = filt(x)
    mu_y = filt(y)
    sxx = filt(x * x) - mu_x**2
    syy = filt(y * y) - mu_y**2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class PairedDataset:
    pairs: tuple[tuple[Path, Path], ...]  # (low_path, normal_path)
    split: str = "train"

    def __len__(self) -> int:
        return len(self.pairs)


def load_paired_dataset(root, low_dir: str = "low", high_dir: str = "high",
                        split: str = "train") -> PairedDataset:
    """Pair filename-matched images under root/low and root/high, sorted."""
    root = Path(root)
    low_root = root / low_dir
    high_root = root / high_dir
    if not low_root.is_dir() or not high_root.is_dir():
        raise FileNotFoundError(f"expected {low_root} and {high_root} directories")
    low_files = {p.name: p for p in low_root.iterdir() if p.suffix.lower() == ".png"}
    high_files = {p.name: p for p in high_root.iterdir() if p.suffix.lower() == ".png"}
    orphans = sorted(set(low_files) ^ set(high_files))
    if orphans:
        raise ValueError(f"unpaired files in {root}: {', '.join(orphans)}")
    pairs = tuple((low_files[n], high_files[n]) for n in sorted(low_files))
    return PairedDataset(pairs=pairs, split=split)


def fpe_path_for(image_path: Path) -> Path:
    """FPE map location convention: <root>/fpe/<stem>.fpe next to low/high."""
    return image_path.parent.parent / "fpe" / (image_path.stem + ".fpe")


# ---------------------------------------------------------------------------
# Synthetic benchmark
# ---------------------------------------------------------------------------


def _render_scene(rng: np.random.Generator, size: int) -> LinearRaster:
    """Procedural normal-light scene: gradient + shapes + smooth texture."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = xx * np.cos(theta) + yy * np.sin(theta)
    ramp = (ramp - ramp.min()) / max(np.ptp(ramp), 1e-9)
    img = np.empty((size, size, 3))
    base = rng.uniform(0.25, 0.9, size=3)
    tilt = rng.uniform(-0.3, 0.3, size=3)
    for ch in range(3):
        img[:, :, ch] = base[ch] + tilt[ch] * ramp
    for _ in range(rng.integers(2, 6)):
        color = rng.uniform(0.05, 1.0, size=3)
        if rng.random() < 0.5:
            cx, cy = rng.uniform(0, size, size=2)
            r = rng.uniform(size * 0.08, size * 0.3)
            mask = (xx * (size - 1) - cx) ** 2 + (yy * (size - 1) - cy) ** 2 < r**2
        else:
            x0, y0 = rng.integers(0, size, size=2)
            wdt, hgt = rng.integers(size // 8, size // 2, size=2)
            mask = np.zeros((size, size), dtype=bool)
            mask[y0:y0 + hgt, x0:x0 + wdt] = True
        img[mask] = color
    texture = gaussian_filter(rng.normal(0, 1, size=(size, size, 3)), sigma=(2, 2, 0))
    img = img + 0.08 * texture
    return LinearRaster(np.clip(img, 0.0, 1.0).astype(np.float32))


def _darken(gt: LinearRaster, rng: np.random.Generator,
            exposure_range=(0.05, 0.3)) -> LinearRaster:
    """Synthetic low-light counterpart: exposure scaling + Poisson-Gaussian noise."""
    scale = rng.uniform(*exposure_range)
    x = gt.data.astype(np.float64) * scale
    photons = rng.uniform(100.0, 800.0)
    x = rng.poisson(x * photons) / photons
    x = x + rng.normal(0.0, 0.01, size=x.shape)
    return LinearRaster(np.clip(x, 0.0, 1.0).astype(np.float32))


def build_synthetic_benchmark(out_dir, n: int, size: int = 64, seed: int = 0,
                              degradation: DegradationConfig | None = None,
                              sensor: SensorConstants = SensorConstants()) -> Path:
    """Render n procedural scenes with low-light counterparts and FPE maps.

    Layout: out/high/*.png (16-bit GT), out/low/*.png, out/fpe/*.fpe plus
    manifest.json recording all seeds. Bit-reproducible for a given seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = degradation if degradation is not None else DegradationConfig(seed=seed)
    out = Path(out_dir)
    for sub in ("high", "low", "fpe"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        gt = _render_scene(rng, size)
        low = _darken(gt, rng)
        name = f"scene_{i:04d}"
        gt_enc = gamma_encode(gt)
        save_image(gt_enc, out / "high" / f"{name}.png", bit_depth=16)
        save_image(gamma_encode(low), out / "low" / f"{name}.png", bit_depth=16)
        fpe, _ = synthesize_training_sample(gt_enc, sensor, cfg, sample_index=i)
        ev.save_fpe(fpe, out / "fpe" / f"{name}.fpe")
        entries.append({"name": name, "scene_seed": [seed, i], "sample_index": i})
    manifest = {
        "n": n, "size": size, "seed": seed,
        "sensor_k": sensor.k,
        "threshold_mu": cfg.threshold_mu, "threshold_sigma": cfg.threshold_sigma,
        "scenes": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out


@dataclass(frozen=True)
class MetricReport:
    rows: tuple[tuple[str, float, float], ...]  # (name, psnr, ssim)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows]))

    def write(self, path) -> None:
        lines = [f"{name}\t{p:.4f}\t{s:.6f}" for name, p, s in self.rows]
        lines.append(f"mean\t{self.mean_psnr:.4f}\t{self.mean_ssim:.6f}")
        Path(path).write_text("\n".join(lines) + "\n")
