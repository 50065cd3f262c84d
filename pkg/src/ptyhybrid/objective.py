"""Poisson maximum-likelihood objective and its Wirtinger gradient."""

import numpy as np

from .errors import ValidationError
from .operators import adjoint_gh, forward_g

LOG_FLOOR = 1e-16
QUOTIENT_FLOOR = 1e-16


def pattern_terms(far, d):
    """Per-pattern double-precision sums of ``|G psi|^2 - 2 d log|G psi|``."""
    if far.shape != d.shape:
        raise ValidationError(f"far-field {far.shape} and data {d.shape} differ")
    amp = np.abs(far.astype(np.complex128))
    terms = amp * amp - 2.0 * d.astype(np.float64) * np.log(np.maximum(amp, LOG_FLOOR))
    return terms.reshape(len(terms), -1).sum(axis=1)


def ml_objective(far, d):
    """Negative Poisson log-likelihood, constant terms dropped.

    Pixels are summed per pattern, then pattern sums are accumulated in
    ascending pattern order as Python floats.
    """
    total = 0.0
    for s in pattern_terms(far, d):
        total += float(s)
    return total


def objective_at(obj, probe, scan, d):
    return ml_objective(forward_g(obj, probe, scan), d)


def residual(far, d):
    """``G psi - d / conj(G psi)`` with the quotient zeroed where ``|G psi|`` vanishes."""
    if far.shape != d.shape:
        raise ValidationError(f"far-field {far.shape} and data {d.shape} differ")
    quotient = np.zeros_like(far)
    lit = np.abs(far) >= QUOTIENT_FLOOR
    quotient[lit] = d[lit] / np.conj(far[lit])
    return far - quotient


def ml_gradient(obj, probe, scan, d):
    """Gradient with respect to ``conj(psi)``: ``G^H (G psi - d / (G psi)^*)``."""
    far = forward_g(obj, probe, scan)
    return adjoint_gh(residual(far, d), probe, scan, obj.shape)
