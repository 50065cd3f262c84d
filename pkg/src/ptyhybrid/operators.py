"""Unitary FFT and the ptychography operator G = F Q with its adjoint."""

import numpy as np

from .errors import ValidationError
from .field import check_probe, extract_patch, scatter_add_patch


def ufft2(grid):
    """Unitary 2D FFT (``1/N`` scaling for an ``N x N`` grid)."""
    return np.fft.fft2(grid, norm="ortho")


def iufft2(grid):
    """Inverse of :func:`ufft2`, which is also its adjoint."""
    return np.fft.ifft2(grid, norm="ortho")


def forward_g(obj, probe, scan):
    """Far-field stack ``(G psi)_j = F(p * psi[s_j])``.

    Patterns are transformed one at a time in ascending index order so that a
    pattern's far field does not depend on which batch it was computed in.
    """
    n = check_probe(probe)
    probe = probe.astype(obj.dtype, copy=False)
    far = np.empty((len(scan), n, n), dtype=obj.dtype)
    for j, pos in enumerate(scan):
        far[j] = ufft2(probe * extract_patch(obj, pos, n, index=j))
    return far


def adjoint_gh(far, probe, scan, shape):
    """Apply ``G^H``: inverse FFT, multiply by ``conj(p)``, scatter-add."""
    n = check_probe(probe)
    if far.ndim != 3 or far.shape[0] != len(scan) or far.shape[1:] != (n, n):
        raise ValidationError(
            f"far-field shape {far.shape} inconsistent with {len(scan)} "
            f"patterns of {n}x{n}"
        )
    cprobe = np.conj(probe).astype(far.dtype, copy=False)
    acc = np.zeros(shape, dtype=far.dtype)
    for j, pos in enumerate(scan):
        scatter_add_patch(acc, cprobe * iufft2(far[j]), pos, index=j)
    return acc
