"""PSNR and SSIM for whole images and tumor regions.

Tumor-region metrics use the tight bounding box of the mask dilated by 5
pixels; boxes smaller than the SSIM window are reflect-padded up to window
size. SSIM follows the standard windowed formulation (11x11 Gaussian window,
sigma 1.5, K1=0.01, K2=0.03), averaged over valid window positions.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import convolve2d

from .preprocess import SizeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP_DB = 100.0
TUMOR_BOX_DILATION = 5


def psnr(pred: np.ndarray, target: np.ndarray, data_range: float = 1.0) -> float:
    """10*log10(range^2 / MSE), capped at 100 dB for identical images."""
    if pred.shape != target.shape:
        raise SizeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if data_range <= 0:
        raise ValueError("data_range must be > 0")
    mse = float(np.mean((pred.astype(np.float64) - target.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(data_range ** 2 / mse))


def _gaussian_kernel(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(pred: np.ndarray, target: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over valid positions of an 11x11 Gaussian window."""
    if pred.shape != target.shape:
        raise SizeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    if min(pred.shape) < SSIM_WINDOW:
        raise SizeError(f"image {pred.shape} smaller than SSIM window {SSIM_WINDOW}")
    x = pred.astype(np.float64)
    y = target.astype(np.float64)
    k = _gaussian_kernel()
    mu_x = convolve2d(x, k, mode="valid")
    mu_y = convolve2d(y, k, mode="valid")
    sig_xx = convolve2d(x * x, k, mode="valid") - mu_x * mu_x
    sig_yy = convolve2d(y * y, k, mode="valid") - mu_y * mu_y
    sig_xy = convolve2d(x * y, k, mode="valid") - mu_x * mu_y
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * sig_xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (sig_xx + sig_yy + c2)
    return float(np.mean(num / den))


def _pad_to(img: np.ndarray, min_size: int) -> np.ndarray:
    out = img
    for axis in (0, 1):
        need = min_size - out.shape[axis]
        if need > 0:
            lo = need // 2
            hi = need - lo
            width = [(0, 0), (0, 0)]
            width[axis] = (lo, hi)
            mode = "reflect" if max(lo, hi) < out.shape[axis] else "symmetric"
            out = np.pad(out, width, mode=mode)
    return out


def tumor_region(pred: np.ndarray, target: np.ndarray,
                 mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Crop both images to the mask's bounding box dilated by 5 px.

    Boxes smaller than the SSIM window are reflect-padded to window size.
    Raises ValueError on an empty mask (caller skips tumor metrics).
    """
    m = np.asarray(mask).astype(bool)
    if pred.shape != target.shape or pred.shape != m.shape:
        raise SizeError("pred/target/mask shapes must match")
    if not m.any():
        raise ValueError("empty mask: no tumor region")
    rows = np.flatnonzero(m.any(axis=1))
    cols = np.flatnonzero(m.any(axis=0))
    r0 = max(0, rows[0] - TUMOR_BOX_DILATION)
    r1 = min(m.shape[0] - 1, rows[-1] + TUMOR_BOX_DILATION)
    c0 = max(0, cols[0] - TUMOR_BOX_DILATION)
    c1 = min(m.shape[1] - 1, cols[-1] + TUMOR_BOX_DILATION)
    p = _pad_to(pred[r0:r1 + 1, c0:c1 + 1], SSIM_WINDOW)
    t = _pad_to(target[r0:r1 + 1, c0:c1 + 1], SSIM_WINDOW)
    return p, t


@dataclass(frozen=True)
class ImageMetrics:
    psnr: float
    ssim: float
    tumor_psnr: float | None = None
    tumor_ssim: float | None = None


@dataclass
class MetricsReport:
    records: list[ImageMetrics] = field(default_factory=list)

    def add(self, pred: np.ndarray, target: np.ndarray,
            mask: np.ndarray | None = None, data_range: float = 1.0) -> ImageMetrics:
        rec_psnr = psnr(pred, target, data_range)
        rec_ssim = ssim(pred, target, data_range)
        t_psnr = t_ssim = None
        if mask is not None and np.asarray(mask).astype(bool).any():
            p_crop, t_crop = tumor_region(pred, target, mask)
            t_psnr = psnr(p_crop, t_crop, data_range)
            t_ssim = ssim(p_crop, t_crop, data_range)
        rec = ImageMetrics(rec_psnr, rec_ssim, t_psnr, t_ssim)
        self.records.append(rec)
        return rec

    def aggregate(self) -> dict[str, tuple[float, float]]:
        """Mean and population std for each metric over images where it exists."""
        out = {}
        for name in ("psnr", "ssim", "tumor_psnr", "tumor_ssim"):
            vals = [getattr(r, name) for r in self.records if getattr(r, name) is not None]
            if vals:
                out[name] = (float(np.mean(vals)), float(np.std(vals)))
        return out

    def to_text_table(self) -> str:
        header = f"{'idx':>4} {'psnr':>9} {'ssim':>9} {'tumor_psnr':>11} {'tumor_ssim':>11}"
        lines = [header]
        for i, r in enumerate(self.records):
            tp = f"{r.tumor_psnr:11.4f}" if r.tumor_psnr is not None else f"{'-':>11}"
            ts = f"{r.tumor_ssim:11.4f}" if r.tumor_ssim is not None else f"{'-':>11}"
            lines.append(f"{i:>4} {r.psnr:9.4f} {r.ssim:9.6f} {tp} {ts}")
        lines.append("")
        for name, (mean, std) in self.aggregate().items():
            lines.append(f"{name}: {mean:.6f} +/- {std:.6f}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "records": [
                {
                    "psnr": r.psnr,
                    "ssim": r.ssim,
                    "tumor_psnr": r.tumor_psnr,
                    "tumor_ssim": r.tumor_ssim,
                }
                for r in self.records
            ],
            "aggregate": {
                name: {"mean": mean, "std": std}
                for name, (mean, std) in self.aggregate().items()
            },
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        payload = json.loads(text)
        report = cls()
        for r in payload["records"]:
            report.records.append(ImageMetrics(
                r["psnr"], r["ssim"], r.get("tumor_psnr"), r.get("tumor_ssim"),
            ))
        return report
