"""Adam, the denoising loss, and the toy training loop.

Training minimizes the mean absolute error between the denoised and the clean
cube plus ``lam`` times the diversity penalty on the last block's
pre-compression feature volume. Runs are deterministic functions of their
configuration (initialization, shuffling, and data generation all derive from
the configured seeds), so repeated runs produce identical reports.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, NonFiniteLoss, ShapeError
from .hsdata import MetricsReport, feature_to_cube, metrics_report
from .network import Network
from .rank import Spectrum, feature_spectrum
from .regularizer import attach_last_layer, da_reg_value
from .schemes import KernelScheme
from .tensor import FeatureMap, unfold_channels

ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    scheme: KernelScheme
    width: int = 8  # channel width M carried between blocks
    num_blocks: int = 2
    lam: float = 5e-5
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 300
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.num_blocks < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1, num_blocks >= 1 required")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; mutates and returns params/state."""
    if not state.m:
        state.m = {k: np.zeros_like(v) for k, v in params.items()}
        state.v = {k: np.zeros_like(v) for k, v in params.items()}
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    for name, g in grads.items():
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1**state.t)
        v_hat = state.v[name] / (1 - b2**state.t)
        params[name] = params[name] - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params, state


def loss_denoise(pred: FeatureMap, target: FeatureMap, feature: FeatureMap, lam: float) -> float:
    """Mean absolute error plus ``lam`` times the diversity penalty."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"shape mismatch {pred.data.shape} vs {target.data.shape}")
    data_term = float(np.mean(np.abs(pred.data - target.data)))
    if lam == 0.0:
        return data_term
    return data_term + lam * da_reg_value(unfold_channels(feature))


@dataclass(frozen=True)
class TrainingData:
    """Paired noisy/clean volumes plus one held-out evaluation pair."""

    pairs: tuple[tuple[FeatureMap, FeatureMap], ...]
    holdout: tuple[FeatureMap, FeatureMap]

    def __post_init__(self):
        if len(self.pairs) < 1:
            raise ConfigError("need at least one training pair")
        for noisy, clean in (*self.pairs, self.holdout):
            if noisy.data.shape != clean.data.shape:
                raise ShapeError("noisy/clean shapes differ within a pair")


@dataclass(frozen=True)
class TrainReport:
    scheme_token: str
    parameter_count: int
    epochs: int
    data_terms: tuple[float, ...]
    reg_terms: tuple[float, ...]
    metrics: MetricsReport
    spectrum: Spectrum
    wall_seconds: float

    def as_dict(self, include_timing: bool = False) -> dict:
        out = {
            "scheme": self.scheme_token,
            "parameter_count": self.parameter_count,
            "epochs": self.epochs,
            "data_terms": list(self.data_terms),
            "reg_terms": list(self.reg_terms),
            "metrics": self.metrics.as_dict(),
            "spectrum": self.spectrum.values.tolist(),
        }
        if include_timing:
            out["wall_seconds"] = self.wall_seconds
        return out


def _sample_loss(net: Network, noisy: np.ndarray, clean: np.ndarray, hook):
    """Taped forward + loss graph for one sample; returns (loss, data, reg)."""
    tape = net.forward_tape(noisy)
    data_term = ad.mean_abs_error(tape.output, clean)
    if hook.active:
        reg_term = ad.scale(ad.diversity_penalty(tape.feature), hook.reg_weight)
        return ad.add(data_term, reg_term), float(data_term.data), float(reg_term.data), tape
    return data_term, float(data_term.data), 0.0, tape


def _evaluate(net: Network, data: TrainingData) -> tuple[MetricsReport, Spectrum]:
    noisy, clean = data.holdout
    tape = net.forward_tape(noisy.data)
    denoised = feature_to_cube(FeatureMap(tape.output.data))
    reference = feature_to_cube(clean)
    spectrum = feature_spectrum(FeatureMap(tape.feature.data), source_tag=net.scheme.token)
    return metrics_report(denoised, reference), spectrum


def train_denoiser(
    cfg: TrainConfig, data: TrainingData, return_network: bool = False
) -> TrainReport | tuple[TrainReport, Network]:
    """Minibatch Adam over the paired cubes; reports losses, metrics, spectrum."""
    start = time.perf_counter()
    channels = data.pairs[0][0].channels
    net = Network(cfg.scheme, channels, cfg.width, cfg.num_blocks, seed=cfg.seed)
    hook = attach_last_layer(net, cfg.lam)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x5F0F)))
    state = AdamState()
    data_terms: list[float] = []
    reg_terms: list[float] = []
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(data.pairs))
        epoch_data = 0.0
        epoch_reg = 0.0
        for batch_start in range(0, len(order), cfg.batch_size):
            batch = order[batch_start : batch_start + cfg.batch_size]
            grads: dict[str, np.ndarray] = {k: np.zeros_like(v) for k, v in net.params.items()}
            for idx in batch:
                noisy, clean = data.pairs[idx]
                loss, d_term, r_term, tape = _sample_loss(net, noisy.data, clean.data, hook)
                loss.backward(np.float64(1.0 / len(batch)))
                for name, node in tape.params.items():
                    if node.grad is not None:
                        grads[name] += node.grad
                epoch_data += d_term
                epoch_reg += r_term
            adam_step(net.params, grads, state, cfg)
        epoch_data /= len(order)
        epoch_reg /= len(order)
        if not (np.isfinite(epoch_data) and np.isfinite(epoch_reg)):
            raise NonFiniteLoss(epoch)
        data_terms.append(epoch_data)
        reg_terms.append(epoch_reg)
    metrics, spectrum = _evaluate(net, data)
    report = TrainReport(
        scheme_token=cfg.scheme.token,
        parameter_count=net.parameter_count(),
        epochs=cfg.epochs,
        data_terms=tuple(data_terms),
        reg_terms=tuple(reg_terms),
        metrics=metrics,
        spectrum=spectrum,
        wall_seconds=time.perf_counter() - start,
    )
    if return_network:
        return report, net
    return report
