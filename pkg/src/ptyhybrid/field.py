"""Grid types and the patch primitives behind the windowing operator.

Object fields, probes and diffraction stacks are plain numpy arrays:

* object ``psi``: ``(H, W)`` complex64 (complex128 in oracle tests)
* probe ``p``: ``(N, N)`` complex, ``N`` even
* scan: ``(n, 2)`` int64 array of top-left ``(row, col)`` corners
* diffraction ``d``: ``(n, N, N)`` float32, non-negative
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import BoundsError, ValidationError

WORKING_DTYPE = np.complex64
DOUBLE_DTYPE = np.complex128


def real_dtype_of(dtype):
    return np.float32 if np.dtype(dtype) == np.complex64 else np.float64


def check_probe(probe):
    probe = np.asarray(probe)
    if probe.ndim != 2 or probe.shape[0] != probe.shape[1]:
        raise ValidationError(f"probe must be square, got shape {probe.shape}")
    n = probe.shape[0]
    if n < 1 or n % 2:
        raise ValidationError(f"probe side must be even and >= 1, got {n}")
    return n


def _check_footprint(shape, pos, n, index=None):
    row, col = int(pos[0]), int(pos[1])
    if row < 0 or col < 0 or row + n > shape[0] or col + n > shape[1]:
        where = f"pattern {index}: " if index is not None else ""
        raise BoundsError(
            f"{where}footprint rows [{row}, {row + n}) x cols [{col}, {col + n}) "
            f"outside object of shape {tuple(shape)}",
            index=index,
        )
    return row, col


def check_scan(scan, shape, n):
    """Validate every footprint of ``scan`` against an object of ``shape``."""
    scan = np.asarray(scan)
    if scan.ndim != 2 or scan.shape[1] != 2 or len(scan) < 1:
        raise ValidationError(f"scan must have shape (n>=1, 2), got {scan.shape}")
    for j, pos in enumerate(scan):
        _check_footprint(shape, pos, n, index=j)


def extract_patch(obj, pos, n, index=None):
    """Copy of the ``n x n`` window of ``obj`` whose top-left corner is ``pos``."""
    row, col = _check_footprint(obj.shape, pos, n, index)
    return obj[row:row + n, col:col + n].copy()


def scatter_add_patch(acc, patch, pos, index=None):
    """Add ``patch`` into ``acc`` in place at top-left corner ``pos``; returns ``acc``."""
    n = patch.shape[0]
    row, col = _check_footprint(acc.shape, pos, n, index)
    acc[row:row + n, col:col + n] += patch
    return acc


def extract_patches(obj, scan, n):
    out = np.empty((len(scan), n, n), dtype=obj.dtype)
    for j, pos in enumerate(scan):
        out[j] = extract_patch(obj, pos, n, index=j)
    return out


def round_positions(raw, H, W, n):
    """Round raw float positions half-up to integer top-left corners.

    Raises ValidationError listing every index whose rounded footprint does
    not fit inside an ``H x W`` object.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != 2 or len(raw) < 1:
        raise ValidationError(f"positions must have shape (n>=1, 2), got {raw.shape}")
    scan = np.floor(raw + 0.5).astype(np.int64)
    bad = np.flatnonzero(
        (scan[:, 0] < 0) | (scan[:, 1] < 0)
        | (scan[:, 0] > H - n) | (scan[:, 1] > W - n)
    )
    if len(bad):
        raise ValidationError(
            f"positions out of bounds for {H}x{W} object and probe {n}: "
            f"indices {bad.tolist()}"
        )
    return scan


@dataclass
class Dataset:
    """Probe, scan and measured intensities, plus the optional ground truth."""

    probe: np.ndarray
    scan: np.ndarray
    d: np.ndarray
    shape: tuple
    psi_ref: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = check_probe(self.probe)
        self.shape = tuple(int(s) for s in self.shape)
        if self.shape[0] < n or self.shape[1] < n:
            raise ValidationError(f"object {self.shape} smaller than probe {n}")
        check_scan(self.scan, self.shape, n)
        if self.d.shape != (len(self.scan), n, n):
            raise ValidationError(
                f"diffraction stack shape {self.d.shape} does not match "
                f"{len(self.scan)} patterns of {n}x{n}"
            )
        if not np.all(np.isfinite(self.d)) or np.any(self.d < 0):
            raise ValidationError("diffraction data must be finite and non-negative")

    @property
    def probe_size(self):
        return self.probe.shape[0]
