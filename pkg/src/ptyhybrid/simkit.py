"""Synthetic ptychography experiments: phantoms, probe, scan grid and
forward-simulated diffraction data."""

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ValidationError
from .field import Dataset, check_scan
from .operators import forward_g

# stream identifiers for the counter-based random streams
_JITTER, _POISSON, _DISKS = 1, 2, 3


def stream(seed, purpose, index=0):
    """Independent generator for ``(seed, purpose, index)``."""
    return np.random.default_rng([int(seed) & (2 ** 64 - 1), purpose, index])


@dataclass(frozen=True)
class SimConfig:
    phantom: str = "siemens"
    height: int = 256
    width: int = 256
    probe_size: int = 64
    spokes: int = 32
    step: int = 16
    jitter: int = 2
    photons: float = 1.0
    poisson: bool = False
    seed: int = 1
    sigma_frac: float = 0.25
    # strong defocus-like curvature; makes low-frequency phase converge
    chirp: float = 40.0

    def __post_init__(self):
        if self.phantom not in ("siemens", "disks"):
            raise ConfigurationError(f"unknown phantom {self.phantom!r}")
        if self.step < 1:
            raise ConfigurationError("step must be >= 1")
        if not 0 <= self.jitter < self.step:
            raise ConfigurationError("jitter must satisfy 0 <= jitter < step")
        if not self.photons > 0:
            raise ConfigurationError("photons must be positive")
        if self.height < self.probe_size or self.width < self.probe_size:
            raise ConfigurationError("object must be at least as large as the probe")

    def as_dict(self):
        return dataclasses.asdict(self)


def _polar(H, W):
    rows, cols = np.mgrid[0:H, 0:W]
    dr = rows - H // 2
    dc = cols - W // 2
    return np.hypot(dr, dc), np.arctan2(dr, dc)


def siemens_star(H, W, spokes=32):
    """Binary spoke wheel of radius ``0.45 * min(H, W)`` centred on ``(H//2, W//2)``.

    A circle around the centre crosses ``spokes`` bright sectors.
    """
    if spokes < 2 or spokes % 2:
        raise ValidationError("spokes must be even and >= 2")
    radius, theta = _polar(H, W)
    inside = (radius > 0) & (radius <= 0.45 * min(H, W))
    return (inside & (np.cos(spokes * theta) > 0)).astype(np.float64)


def disks(H, W, count=12, seed=0):
    """Random non-overlapping filled circles, values in {0, 1}."""
    rng = stream(seed, _DISKS)
    img = np.zeros((H, W))
    rows, cols = np.mgrid[0:H, 0:W]
    placed = []
    rmax = max(2.0, min(H, W) / 8)
    for _ in range(50 * count):
        if len(placed) == count:
            break
        r = rng.uniform(rmax / 3, rmax)
        cy = rng.uniform(r, H - r)
        cx = rng.uniform(r, W - r)
        if all(np.hypot(cy - y, cx - x) > r + q + 1 for y, x, q in placed):
            placed.append((cy, cx, r))
            img[np.hypot(rows - cy, cols - cx) <= r] = 1.0
    return img


def make_object(img, dtype=np.complex64):
    """Map an image in [0, 1] to ``(1 - 0.3 img) exp(i pi/2 img)``."""
    img = np.asarray(img, dtype=np.float64)
    if not np.all(np.isfinite(img)) or img.min() < 0 or img.max() > 1:
        raise ValidationError("phantom image must lie in [0, 1]")
    return ((1 - 0.3 * img) * np.exp(0.5j * np.pi * img)).astype(dtype)


def make_probe(N, sigma_frac=0.25, chirp=8.0, dtype=np.complex64):
    """Gaussian probe with a quadratic phase, normalized to ``sum |p|^2 = N^2``."""
    if N < 2 or N % 2:
        raise ValidationError("probe side must be even")
    rows, cols = np.mgrid[0:N, 0:N]
    rho2 = (rows - N / 2) ** 2 + (cols - N / 2) ** 2
    sigma = sigma_frac * N
    p = np.exp(-rho2 / (2 * sigma ** 2)) * np.exp(1j * chirp * 2 * np.pi * rho2 / N ** 2)
    p *= N / np.sqrt(np.sum(np.abs(p) ** 2))
    return p.astype(dtype)


def make_scan(H, W, N, step, jitter=0, seed=0):
    """Raster of top-left corners with optional integer jitter, clamped to bounds."""
    if step >= N:
        raise ConfigurationError(f"step {step} >= probe size {N}: no overlap")
    if step < 1 or not 0 <= jitter < step:
        raise ConfigurationError("need step >= 1 and 0 <= jitter < step")
    rows = np.arange(0, H - N + 1, step)
    cols = np.arange(0, W - N + 1, step)
    scan = np.array([(r, c) for r in rows for c in cols], dtype=np.int64)
    if jitter:
        for j in range(len(scan)):
            scan[j] += stream(seed, _JITTER, j).integers(-jitter, jitter + 1, size=2)
        scan[:, 0] = np.clip(scan[:, 0], 0, H - N)
        scan[:, 1] = np.clip(scan[:, 1], 0, W - N)
    return scan


def simulate_data(obj, probe, scan, photons=1.0, poisson=False, seed=0):
    """``photons * |G psi|^2`` per pattern, optionally Poisson-sampled, as float32."""
    if not photons > 0:
        raise ValidationError("photons must be positive")
    check_scan(scan, obj.shape, probe.shape[0])
    far = forward_g(obj, probe, scan).astype(np.complex128)
    mean = photons * (far.real ** 2 + far.imag ** 2)
    if poisson:
        for j in range(len(mean)):
            mean[j] = stream(seed, _POISSON, j).poisson(mean[j])
    return mean.astype(np.float32)


def simulate(config=None, dtype=np.complex64):
    """Full synthetic dataset for ``config``; ground truth kept as ``psi_ref``."""
    config = config or SimConfig()
    H, W, N = config.height, config.width, config.probe_size
    if config.phantom == "siemens":
        img = siemens_star(H, W, config.spokes)
    else:
        img = disks(H, W, seed=config.seed)
    psi = make_object(img, dtype)
    probe = make_probe(N, config.sigma_frac, config.chirp, dtype)
    scan = make_scan(H, W, N, config.step, config.jitter, config.seed)
    d = simulate_data(psi, probe, scan, config.photons, config.poisson, config.seed)
    return Dataset(probe=probe, scan=scan, d=d, shape=(H, W), psi_ref=psi,
                   meta={"sim": config.as_dict()})


def overlap_ratio(N, step):
    """Linear overlap fraction of neighbouring footprints."""
    return 1.0 - step / N
