"""Image-quality and convergence metrics: SSIM, PSNR, step 2-norm."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import AlignmentError, ValidationError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")


def squared_step(cur, prev):
    _same_shape(cur, prev)
    diff = cur.astype(np.complex128) - prev.astype(np.complex128)
    return float(np.sum(diff.real ** 2 + diff.imag ** 2))


def step_norm(cur, prev):
    """``sqrt(sum |cur - prev|^2)`` accumulated in double precision."""
    return math.sqrt(0.0 + squared_step(cur, prev))


def scan_crop(scan, n):
    """Bounding box of all probe footprints shrunk by ``n/2`` per side.

    Returns ``((r0, r1), (c0, c1))`` half-open ranges.
    """
    scan = np.asarray(scan)
    half = n // 2
    r0, c0 = scan.min(axis=0) + half
    r1, c1 = scan.max(axis=0) + n - half
    if r1 <= r0 or c1 <= c0:
        raise ValidationError("empty crop region")
    return (int(r0), int(r1)), (int(c0), int(c1))


def _cut(img, crop):
    if crop is None:
        return img
    (r0, r1), (c0, c1) = crop
    return img[r0:r1, c0:c1]


def global_phase(rec, ref, crop=None):
    """Angle of ``sum_crop conj(ref) * rec``."""
    _same_shape(rec, ref)
    corr = np.vdot(_cut(ref, crop).astype(np.complex128),
                   _cut(rec, crop).astype(np.complex128))
    if corr == 0:
        raise AlignmentError("zero correlation between reconstruction and reference")
    return float(np.angle(corr))


def align_global_phase(rec, ref, crop=None):
    """Remove the global phase offset of ``rec`` relative to ``ref``."""
    theta = global_phase(rec, ref, crop)
    return rec * np.exp(-1j * theta).astype(rec.dtype), theta


def _gaussian_taps():
    x = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    w = np.exp(-x ** 2 / (2 * SSIM_SIGMA ** 2))
    return w / w.sum()


def _valid_filter(img, taps):
    h = len(taps) // 2
    out = correlate1d(img, taps, axis=0, mode="constant")
    out = correlate1d(out, taps, axis=1, mode="constant")
    return out[h:img.shape[0] - h, h:img.shape[1] - h]


def ssim(a, b):
    """Mean SSIM over all fully-contained 11x11 Gaussian windows.

    The dynamic range ``L`` is taken from ``b`` (the reference).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ValidationError(f"SSIM needs 2D grids of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    L = float(b.max() - b.min())
    c1, c2 = (K1 * L) ** 2, (K2 * L) ** 2
    taps = _gaussian_taps()
    mu_a = _valid_filter(a, taps)
    mu_b = _valid_filter(b, taps)
    var_a = _valid_filter(a * a, taps) - mu_a ** 2
    var_b = _valid_filter(b * b, taps) - mu_b ** 2
    cov = _valid_filter(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def psnr(a, b):
    """Peak signal-to-noise ratio in dB with peak ``max(b) - min(b)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    L = float(b.max() - b.min())
    if L == 0:
        raise ValidationError("reference image is constant; PSNR undefined")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(L * L / mse)


@dataclass
class MetricReport:
    ssim: float
    psnr_db: float
    channel: str
    crop: tuple
    phase_shift_applied: float

    COLUMNS = ("ssim", "psnr_db", "channel", "crop", "phase_shift")

    def csv_row(self):
        (r0, r1), (c0, c1) = self.crop
        psnr_text = "inf" if math.isinf(self.psnr_db) else repr(self.psnr_db)
        return ",".join([repr(self.ssim), psnr_text, self.channel,
                         f"{r0}:{r1}x{c0}:{c1}", repr(self.phase_shift_applied)])


def channel_image(psi, channel):
    if channel == "phase":
        return np.angle(psi)
    if channel == "amplitude":
        return np.abs(psi)
    raise ValidationError(f"unknown channel {channel!r}")


def evaluate(rec, ref, crop=None, channel="phase"):
    """Align the global phase, crop, and compare one channel of ``rec`` to ``ref``."""
    _same_shape(rec, ref)
    if crop is None:
        crop = ((0, ref.shape[0]), (0, ref.shape[1]))
    aligned, theta = align_global_phase(rec, ref, crop)
    a = channel_image(_cut(aligned, crop), channel)
    b = channel_image(_cut(ref, crop), channel)
    return MetricReport(ssim=ssim(a, b), psnr_db=psnr(a, b), channel=channel,
                        crop=crop, phase_shift_applied=theta)
