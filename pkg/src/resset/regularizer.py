"""Diversity regularizer: negative nuclear norm of an unfolded feature matrix.

Minimizing it pushes the whole singular spectrum of the feature matrix up,
which counteracts the tendency of trained features to collapse onto a few
dominant components. The gradient is the classic nuclear-norm subgradient
-U V^T restricted to the numerically nonzero part of the spectrum.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rank import Spectrum
from .tensor import UnfoldedMatrix, svd

SINGULAR_CUTOFF = 1e-12


@dataclass(frozen=True)
class RegResult:
    """Penalty value, its gradient w.r.t. the input matrix, and the spectrum."""

    value: float
    gradient: UnfoldedMatrix
    spectrum: Spectrum


@dataclass(frozen=True)
class DiversityHook:
    """Loss-term hook: weight applied to the last-layer diversity penalty."""

    reg_weight: float

    def __post_init__(self):
        if self.reg_weight < 0:
            raise ConfigError(f"regularizer weight must be >= 0, got {self.reg_weight}")

    @property
    def active(self) -> bool:
        return self.reg_weight > 0.0


def da_reg_value(f_mat: UnfoldedMatrix) -> float:
    """Negative sum of singular values; zero exactly for the zero matrix."""
    return -float(np.sum(svd(f_mat).singular_values))


def _subgradient(decomp) -> np.ndarray:
    s = decomp.singular_values
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((decomp.left_factor.shape[0], decomp.right_factor.shape[0]))
    keep = s > SINGULAR_CUTOFF * s[0]
    return -(decomp.left_factor[:, keep] @ decomp.right_factor[:, keep].T)


def da_reg_grad(f_mat: UnfoldedMatrix) -> UnfoldedMatrix:
    """Subgradient -U V^T over the numerically nonzero singular values."""
    return UnfoldedMatrix(_subgradient(svd(f_mat)), origin=f_mat.origin)


def da_reg(f_mat: UnfoldedMatrix) -> RegResult:
    """Value, gradient, and normalized spectrum in one decomposition."""
    decomp = svd(f_mat)
    s = decomp.singular_values
    value = -float(np.sum(s))
    if s.size == 0 or s[0] == 0.0:
        spectrum = Spectrum(values=np.empty(0))
    else:
        spectrum = Spectrum(values=s / s[0])
    return RegResult(
        value=value,
        gradient=UnfoldedMatrix(_subgradient(decomp), origin=f_mat.origin),
        spectrum=spectrum,
    )


def attach_last_layer(net, reg_weight: float) -> DiversityHook:
    """Attach the diversity penalty to a network's last feature layer.

    During training the hook unfolds the final pre-output feature map to
    channels x (B*H*W), adds ``reg_weight`` times the penalty to the loss, and
    routes the matching gradient into that layer's backward signal. A zero
    weight leaves the training trajectory bit-identical to an unhooked run.
    """
    if getattr(net, "num_blocks", 0) < 1:
        raise ConfigError("network has no feature layer to regularize")
    hook = DiversityHook(reg_weight=reg_weight)
    net.diversity_hook = hook
    return hook
