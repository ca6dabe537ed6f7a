"""Residual denoiser built from scheme blocks.

The network is a flat stack: a 1x1x1 channel lift, ``num_blocks`` residual
blocks that apply the configured convolution scheme (with 1x1x1 compression
for parallel schemes, a leaky rectifier, a 1x1x1 aggregation, and a residual
add), a 1x1x1 projection back to the input channels, and a global residual.
Block internals stay linear up to the single rectifier so the kernel-rank
reasoning applies to the pre-activation feature volume, which is also the
volume the diversity penalty sees.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import BackwardWithoutForward, ConfigError, ShapeError
from .schemes import (
    LEAKY_SLOPE,
    KernelScheme,
    KernelSet,
    branch_extents,
    expected_weight_shapes,
    pre_compression_channels,
)
from .tensor import FeatureMap, read_tensor, write_tensor


# Output-side layers start small so the residual trunk begins near the
# identity map; with a constant learning rate and a mean-absolute-error loss,
# Adam's bounce floor is otherwise too high to reach tight data fits.
AGGREGATE_INIT_GAIN = 0.1
PROJECT_INIT_GAIN = 0.02


@dataclass
class ForwardTape:
    """Graph handles kept alive between forward and backward."""

    output: ad.Node
    feature: ad.Node | None
    params: dict[str, ad.Node]


class Network:
    """Shape-preserving denoiser: lift -> scheme blocks -> projection."""

    def __init__(
        self,
        scheme: KernelScheme,
        channels: int,
        width: int,
        num_blocks: int,
        seed: int = 0,
        global_residual: bool = True,
    ):
        if num_blocks < 0:
            raise ConfigError(f"num_blocks must be >= 0, got {num_blocks}")
        self.scheme = scheme
        self.channels = channels
        self.width = width  # channel width M carried between blocks
        self.num_blocks = num_blocks
        self.global_residual = global_residual
        self.diversity_hook = None
        self._tape: ForwardTape | None = None
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD1F)))
        self._register("lift", self._kaiming(rng, (width, channels)))
        for i in range(num_blocks):
            for j, shape in enumerate(expected_weight_shapes(scheme, width, width)):
                self._register(f"b{i}.w{j}", self._kaiming(rng, shape))
            if scheme.is_parallel:
                pre = pre_compression_channels(scheme, width)
                self._register(f"b{i}.compress", self._kaiming(rng, (width, pre)))
            self._register(
                f"b{i}.aggregate",
                AGGREGATE_INIT_GAIN * self._kaiming(rng, (width, width)),
            )
        self._register("project", PROJECT_INIT_GAIN * self._kaiming(rng, (channels, width)))

    @staticmethod
    def _kaiming(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
        fan_in = prod(shape[1:])
        return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)

    def _register(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ConfigError(f"parameter {name!r} registered twice")
        self.params[name] = value

    def parameter_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def _block(self, nodes: dict[str, ad.Node], i: int, x: ad.Node) -> tuple[ad.Node, ad.Node]:
        """Returns (block output, pre-compression feature volume)."""
        extents = branch_extents(self.scheme)
        if self.scheme.is_parallel:
            parts = [
                ad.branch_conv(nodes[f"b{i}.w{j}"], x, e) for j, e in enumerate(extents)
            ]
            feat = parts[0] if len(parts) == 1 else ad.concat_channels(parts)
            y = ad.channel_mix(nodes[f"b{i}.compress"], feat)
        else:
            y = x
            for j, e in enumerate(extents):
                y = ad.branch_conv(nodes[f"b{i}.w{j}"], y, e)
            feat = y
        y = ad.leaky_relu(y, LEAKY_SLOPE)
        y = ad.channel_mix(nodes[f"b{i}.aggregate"], y)
        return ad.add(y, x), feat

    def forward_tape(self, x: np.ndarray) -> ForwardTape:
        """Run the taped forward pass on a raw (C, B, H, W) array."""
        if x.ndim != 4 or x.shape[0] != self.channels:
            raise ShapeError(
                f"expected (C={self.channels}, B, H, W) input, got shape {x.shape}"
            )
        nodes = {name: ad.Node(value) for name, value in self.params.items()}
        xin = ad.Node(x)
        h = ad.channel_mix(nodes["lift"], xin)
        feature = None
        for i in range(self.num_blocks):
            h, feature = self._block(nodes, i, h)
        out = ad.channel_mix(nodes["project"], h)
        if self.global_residual:
            out = ad.add(out, xin)
        return ForwardTape(output=out, feature=feature, params=nodes)

    def forward(self, fmap: FeatureMap) -> FeatureMap:
        """Forward pass that records the tape consumed by :meth:`backward`."""
        tape = self.forward_tape(fmap.data)
        self._tape = tape
        return FeatureMap(tape.output.data)

    def backward(self, loss_grad: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of <loss_grad, output> w.r.t. every parameter."""
        if self._tape is None:
            raise BackwardWithoutForward("forward() must run before backward()")
        tape, self._tape = self._tape, None
        loss_grad = np.asarray(loss_grad, dtype=np.float64)
        if loss_grad.shape != tape.output.data.shape:
            raise ShapeError(
                f"upstream gradient shape {loss_grad.shape} != output {tape.output.data.shape}"
            )
        tape.output.backward(loss_grad)
        return {
            name: node.grad if node.grad is not None else np.zeros_like(node.data)
            for name, node in tape.params.items()
        }

    def block_kernel_set(self, i: int) -> KernelSet:
        """View block ``i`` as a kernel set (for audits and serialization)."""
        n_branches = len(branch_extents(self.scheme))
        weights = tuple(self.params[f"b{i}.w{j}"] for j in range(n_branches))
        compression = self.params.get(f"b{i}.compress")
        return KernelSet(
            self.scheme,
            self.width,
            self.width,
            weights,
            compression,
            self.params[f"b{i}.aggregate"],
        )

    def save_checkpoint(self, directory: str | Path) -> None:
        """Write every parameter as a portable tensor plus a text manifest."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        lines = [
            f"scheme={self.scheme.token}",
            f"k={self.scheme.k}",
            f"channels={self.channels}",
            f"width={self.width}",
            f"num_blocks={self.num_blocks}",
            f"global_residual={'yes' if self.global_residual else 'no'}",
        ]
        for name in self.params:
            fname = name.replace(".", "_") + ".rst"
            lines.append(f"param {name} {fname}")
            write_tensor(directory / fname, self.params[name])
        (directory / "manifest.txt").write_text("\n".join(lines) + "\n")

    def load_checkpoint(self, directory: str | Path) -> None:
        directory = Path(directory)
        for line in (directory / "manifest.txt").read_text().splitlines():
            if line.startswith("param "):
                _, name, fname = line.split()
                if name not in self.params:
                    raise ConfigError(f"checkpoint has unknown parameter {name!r}")
                value = read_tensor(directory / fname)
                if value.shape != self.params[name].shape:
                    raise ShapeError(
                        f"checkpoint {name}: shape {value.shape} != {self.params[name].shape}"
                    )
                self.params[name] = value
