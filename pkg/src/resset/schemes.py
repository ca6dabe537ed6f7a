"""Kernel layouts and forward convolutions for every supported scheme.

A scheme describes how one convolutional "set" is factorized over the three
axes of a (channels, bands, height, width) volume: a dense 3-D kernel, three
axis-symmetric low-dimensional branches run in parallel, a sequential chain of
1-D (or 1-D then 2-D) layers, or a two-branch 1-D + 2-D split. Parallel
branches may carry an optional 1x1x1 compression back to the nominal channel
count, and blocks add a 1x1x1 aggregation plus a residual connection.

All convolutions use stride 1 and symmetric "same" zero padding, so spatial
and spectral extents are preserved everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from math import prod
from pathlib import Path

import numpy as np

from .errors import ConfigError, NotJointlyRepresentable, NumericError, ShapeError
from .tensor import FeatureMap, UnfoldedMatrix, read_tensor, write_tensor

LEAKY_SLOPE = 0.2


class SchemeVariant(Enum):
    CONV3D = "conv3d"
    RES3_2D = "res3_2d"
    RES3_1D = "res3_1d"
    RES3_1DX3 = "res3_1dx3"
    SEQ1D = "seq1d"
    SEQ1D2D = "seq1d2d"
    PAR1D2D = "par1d2d"


_RES3_VARIANTS = (SchemeVariant.RES3_2D, SchemeVariant.RES3_1D, SchemeVariant.RES3_1DX3)
_SEQUENTIAL_VARIANTS = (SchemeVariant.SEQ1D, SchemeVariant.SEQ1D2D)


@dataclass(frozen=True)
class KernelScheme:
    """Which convolution manner to use, with kernel extent k and multiplier L."""

    variant: SchemeVariant
    k: int = 3
    L: int = 1

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise ConfigError(f"kernel extent must be a positive odd integer, got {self.k}")
        if self.variant is SchemeVariant.RES3_1D:
            if self.L not in (1, 2):
                raise ConfigError(f"res3_1d supports L in {{1, 2}}, got L={self.L}")
        elif self.variant is SchemeVariant.RES3_1DX3:
            if self.L != 3:
                raise ConfigError(f"res3_1dx3 requires L=3, got L={self.L}")
        elif self.L != 1:
            raise ConfigError(f"{self.variant.value} does not take L, got L={self.L}")

    @property
    def is_res3(self) -> bool:
        return self.variant in _RES3_VARIANTS

    @property
    def is_parallel(self) -> bool:
        return self.is_res3 or self.variant is SchemeVariant.PAR1D2D

    @property
    def jointly_representable(self) -> bool:
        return self.variant not in _SEQUENTIAL_VARIANTS

    @property
    def token(self) -> str:
        if self.variant is SchemeVariant.RES3_1D and self.L == 2:
            return "res3_1d_l2"
        return self.variant.value


def parse_scheme_token(token: str, k: int = 3) -> KernelScheme:
    """Parse a config token like ``conv3d`` or ``res3_1d_l2`` into a scheme."""
    name = token.strip().lower()
    table = {
        "conv3d": (SchemeVariant.CONV3D, 1),
        "res3_2d": (SchemeVariant.RES3_2D, 1),
        "res3_1d": (SchemeVariant.RES3_1D, 1),
        "res3_1d_l1": (SchemeVariant.RES3_1D, 1),
        "res3_1d_l2": (SchemeVariant.RES3_1D, 2),
        "res3_1dx3": (SchemeVariant.RES3_1DX3, 3),
        "seq1d": (SchemeVariant.SEQ1D, 1),
        "seq1d2d": (SchemeVariant.SEQ1D2D, 1),
        "par1d2d": (SchemeVariant.PAR1D2D, 1),
    }
    if name not in table:
        raise ConfigError(f"unknown scheme {token!r}; valid: {', '.join(sorted(table))}")
    variant, ell = table[name]
    return KernelScheme(variant=variant, k=k, L=ell)


def branch_extents(scheme: KernelScheme) -> tuple[tuple[int, int, int], ...]:
    """Per-branch (band, height, width) window extents.

    For parallel schemes these are the simultaneous branches, ordered
    band-axis, height-axis, width-axis (2-D branches span the plane
    complementary to their axis). For sequential schemes they are the chained
    stages in application order.
    """
    k = scheme.k
    if scheme.variant is SchemeVariant.CONV3D:
        return ((k, k, k),)
    if scheme.variant in (SchemeVariant.RES3_1D, SchemeVariant.RES3_1DX3):
        return ((k, 1, 1), (1, k, 1), (1, 1, k))
    if scheme.variant is SchemeVariant.RES3_2D:
        return ((1, k, k), (k, 1, k), (k, k, 1))
    if scheme.variant is SchemeVariant.PAR1D2D:
        return ((1, k, k), (k, 1, 1))
    if scheme.variant is SchemeVariant.SEQ1D:
        return ((k, 1, 1), (1, k, 1), (1, 1, k))
    return ((k, 1, 1), (1, k, k))  # seq1d2d


def expected_weight_shapes(scheme: KernelScheme, m: int, c: int) -> tuple[tuple[int, ...], ...]:
    """Compact weight-array shapes per branch (or per sequential stage)."""
    shapes = []
    for i, extents in enumerate(branch_extents(scheme)):
        taps = tuple(e for e in extents if e > 1) or (1,)
        if scheme.is_parallel:
            out_ch = scheme.L * m if scheme.is_res3 else m
            in_ch = c
        else:
            out_ch = m
            in_ch = c if i == 0 else m
        shapes.append((out_ch, in_ch) + taps)
    return tuple(shapes)


def pre_compression_channels(scheme: KernelScheme, m: int) -> int:
    """Channel count produced by the scheme before any 1x1x1 compression."""
    if scheme.is_res3:
        return 3 * scheme.L * m
    if scheme.variant is SchemeVariant.PAR1D2D:
        return 2 * m
    return m


def param_count(scheme: KernelScheme, m: int, c: int) -> int:
    """Convolution weights per set, excluding compression and aggregation."""
    return sum(prod(shape) for shape in expected_weight_shapes(scheme, m, c))


def compression_param_count(scheme: KernelScheme, m: int) -> int:
    """Weights in the 1x1x1 compression layer (zero for single-path schemes)."""
    if scheme.is_parallel:
        return m * pre_compression_channels(scheme, m)
    return 0


def mac_count(scheme: KernelScheme, m: int, c: int, grid: int) -> int:
    """Multiply-accumulate operations for one forward pass over ``grid`` positions."""
    return param_count(scheme, m, c) * grid


def compression_mac_count(scheme: KernelScheme, m: int, grid: int) -> int:
    return compression_param_count(scheme, m) * grid


@dataclass(frozen=True)
class KernelSet:
    """A scheme plus its concrete weights.

    ``weights`` holds one compact array per branch (parallel schemes) or per
    stage (sequential schemes). ``compression`` is the optional 1x1x1 map from
    the pre-compression channels back to ``out_channels``; ``aggregation`` is
    the optional 1x1x1 map used by block forward after the nonlinearity.
    """

    scheme: KernelScheme
    out_channels: int
    in_channels: int
    weights: tuple[np.ndarray, ...]
    compression: np.ndarray | None = None
    aggregation: np.ndarray | None = None

    def __post_init__(self):
        m, c = self.out_channels, self.in_channels
        if m < 1 or c < 1:
            raise ConfigError(f"channel counts must be >= 1, got M={m}, C={c}")
        expected = expected_weight_shapes(self.scheme, m, c)
        if len(self.weights) != len(expected):
            raise ShapeError(
                f"{self.scheme.token} expects {len(expected)} weight arrays, got {len(self.weights)}"
            )
        frozen = []
        for w, shape in zip(self.weights, expected):
            arr = np.ascontiguousarray(w, dtype=np.float64)
            if arr.shape != shape:
                raise ShapeError(f"weight shape {arr.shape} != expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise NumericError("kernel weights contain non-finite entries")
            frozen.append(arr)
        object.__setattr__(self, "weights", tuple(frozen))
        if self.compression is not None:
            if not self.scheme.is_parallel:
                raise ConfigError(f"{self.scheme.token} takes no compression layer")
            comp = np.ascontiguousarray(self.compression, dtype=np.float64)
            want = (m, pre_compression_channels(self.scheme, m))
            if comp.shape != want:
                raise ShapeError(f"compression shape {comp.shape} != expected {want}")
            object.__setattr__(self, "compression", comp)
        if self.aggregation is not None:
            agg = np.ascontiguousarray(self.aggregation, dtype=np.float64)
            if agg.shape != (m, m):
                raise ShapeError(f"aggregation shape {agg.shape} != expected {(m, m)}")
            object.__setattr__(self, "aggregation", agg)


def random_kernel_set(
    scheme: KernelScheme,
    m: int,
    c: int,
    rng: np.random.Generator,
    init: str = "normal",
    with_compression: bool = False,
    with_aggregation: bool = False,
) -> KernelSet:
    """Draw a kernel set with standard-normal or fan-in-scaled weights."""
    weights = []
    for shape in expected_weight_shapes(scheme, m, c):
        w = rng.standard_normal(shape)
        if init == "kaiming":
            fan_in = prod(shape[1:])
            w *= np.sqrt(2.0 / fan_in)
        elif init != "normal":
            raise ConfigError(f"unknown init {init!r}")
        weights.append(w)
    compression = None
    if with_compression:
        if not scheme.is_parallel:
            raise ConfigError(f"{scheme.token} takes no compression layer")
        pre = pre_compression_channels(scheme, m)
        compression = rng.standard_normal((m, pre))
        if init == "kaiming":
            compression *= np.sqrt(2.0 / pre)
    aggregation = None
    if with_aggregation:
        aggregation = rng.standard_normal((m, m))
        if init == "kaiming":
            aggregation *= np.sqrt(2.0 / m)
    return KernelSet(scheme, m, c, tuple(weights), compression, aggregation)


def zero_kernel_set(
    scheme: KernelScheme,
    m: int,
    c: int,
    with_compression: bool = False,
    with_aggregation: bool = False,
) -> KernelSet:
    weights = tuple(np.zeros(s) for s in expected_weight_shapes(scheme, m, c))
    compression = None
    if with_compression:
        compression = np.zeros((m, pre_compression_channels(scheme, m)))
    aggregation = np.zeros((m, m)) if with_aggregation else None
    return KernelSet(scheme, m, c, weights, compression, aggregation)


def _tap_offsets(extents: tuple[int, int, int], k: int) -> list[tuple[int, int, int]]:
    """Offsets a branch touches inside the virtual k x k x k window."""
    mid = k // 2
    axes = [range(e) if e > 1 else (mid,) for e in extents]
    return [(db, dh, dw) for db in axes[0] for dh in axes[1] for dw in axes[2]]


def build_kernel_matrix(ks: KernelSet) -> UnfoldedMatrix:
    """Assemble the joint zero-replenished kernel matrix of shape rows x k^3*C.

    Rows stack the parallel branches in their fixed order; each row places its
    branch weights on exactly the columns whose (channel, band, row, column)
    offsets the branch touches. Sequential schemes have no such joint matrix.
    """
    scheme, m, c = ks.scheme, ks.out_channels, ks.in_channels
    if not scheme.jointly_representable:
        raise NotJointlyRepresentable(f"{scheme.token} is a sequential composition")
    k = scheme.k
    rows = pre_compression_channels(scheme, m)
    mat = np.zeros((rows, c * k**3))
    row0 = 0
    for w, extents in zip(ks.weights, branch_extents(scheme)):
        out_ch = w.shape[0]
        flat = w.reshape(out_ch, w.shape[1], -1)  # (out, C, taps)
        for t, (db, dh, dw) in enumerate(_tap_offsets(extents, k)):
            col = ((np.arange(c) * k + db) * k + dh) * k + dw
            mat[row0 : row0 + out_ch, col] = flat[:, :, t]
        row0 += out_ch
    return UnfoldedMatrix(mat, origin="kernel")


def valid_column_count(scheme: KernelScheme, c: int) -> int:
    """Columns of the joint kernel matrix with any structurally nonzero entry."""
    if not scheme.jointly_representable:
        raise NotJointlyRepresentable(f"{scheme.token} is a sequential composition")
    offsets = set()
    for extents in branch_extents(scheme):
        offsets.update(_tap_offsets(extents, scheme.k))
    return len(offsets) * c


def _branch_conv(x: np.ndarray, w: np.ndarray, extents: tuple[int, int, int]) -> np.ndarray:
    """Direct same-padded convolution: loop over kernel taps, vectorized
    over output positions via shifted slices."""
    _, b, h, wd = x.shape
    eb, eh, ew = extents
    pads = ((0, 0), ((eb - 1) // 2,) * 2, ((eh - 1) // 2,) * 2, ((ew - 1) // 2,) * 2)
    xp = np.pad(x, pads)
    w5 = w.reshape(w.shape[0], w.shape[1], eb, eh, ew)
    out = np.zeros((w.shape[0], b, h, wd))
    for db in range(eb):
        for dh in range(eh):
            for dw in range(ew):
                seg = xp[:, db : db + b, dh : dh + h, dw : dw + wd]
                out += np.tensordot(w5[:, :, db, dh, dw], seg, axes=(1, 0))
    return out


def conv_forward(ks: KernelSet, fmap: FeatureMap) -> FeatureMap:
    """Apply the scheme's convolution; compress to M channels when configured.

    Parallel branches are concatenated along the channel axis in the fixed
    branch order; sequential stages are chained without intermediate
    nonlinearities.
    """
    if fmap.channels != ks.in_channels:
        raise ShapeError(
            f"input has {fmap.channels} channels, kernel set expects {ks.in_channels}"
        )
    extents = branch_extents(ks.scheme)
    if ks.scheme.is_parallel or ks.scheme.variant is SchemeVariant.CONV3D:
        parts = [_branch_conv(fmap.data, w, e) for w, e in zip(ks.weights, extents)]
        out = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
    else:
        out = fmap.data
        for w, e in zip(ks.weights, extents):
            out = _branch_conv(out, w, e)
    if ks.compression is not None:
        out = np.tensordot(ks.compression, out, axes=(1, 0))
    return FeatureMap(out)


def res3_block_forward(ks: KernelSet, fmap: FeatureMap) -> FeatureMap:
    """One residual block: branch concat -> 1x1x1 compression -> leaky
    rectifier -> 1x1x1 aggregation -> residual add with the block input."""
    if not ks.scheme.is_res3:
        raise ConfigError(f"block forward is defined for res3 variants, got {ks.scheme.token}")
    if ks.compression is None:
        raise ConfigError("block forward requires compression weights")
    if ks.aggregation is None:
        raise ConfigError("block forward requires aggregation weights")
    if ks.out_channels != ks.in_channels:
        raise ShapeError("block is residual, so M must equal C")
    compressed = conv_forward(ks, fmap).data
    activated = np.where(compressed >= 0, compressed, LEAKY_SLOPE * compressed)
    aggregated = np.tensordot(ks.aggregation, activated, axes=(1, 0))
    return FeatureMap(aggregated + fmap.data)


def save_kernel_set(ks: KernelSet, directory: str | Path) -> None:
    """Serialize a kernel set: one portable tensor per array plus a header."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = [
        f"variant={ks.scheme.variant.value}",
        f"k={ks.scheme.k}",
        f"L={ks.scheme.L}",
        f"M={ks.out_channels}",
        f"C={ks.in_channels}",
        f"branches={len(ks.weights)}",
        f"compression={'yes' if ks.compression is not None else 'no'}",
        f"aggregation={'yes' if ks.aggregation is not None else 'no'}",
    ]
    (directory / "header.txt").write_text("\n".join(lines) + "\n")
    for i, w in enumerate(ks.weights):
        write_tensor(directory / f"branch_{i}.rst", w)
    if ks.compression is not None:
        write_tensor(directory / "compression.rst", ks.compression)
    if ks.aggregation is not None:
        write_tensor(directory / "aggregation.rst", ks.aggregation)


def load_kernel_set(directory: str | Path) -> KernelSet:
    directory = Path(directory)
    header = {}
    for line in (directory / "header.txt").read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            header[key.strip()] = value.strip()
    scheme = KernelScheme(
        variant=SchemeVariant(header["variant"]), k=int(header["k"]), L=int(header["L"])
    )
    weights = tuple(
        read_tensor(directory / f"branch_{i}.rst") for i in range(int(header["branches"]))
    )
    compression = (
        read_tensor(directory / "compression.rst") if header["compression"] == "yes" else None
    )
    aggregation = (
        read_tensor(directory / "aggregation.rst") if header["aggregation"] == "yes" else None
    )
    return KernelSet(scheme, int(header["M"]), int(header["C"]), weights, compression, aggregation)
