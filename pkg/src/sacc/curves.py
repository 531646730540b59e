"""Concave lookup curves built by discrete integration.

A curve ``g`` maps each of P intensity levels to [0, 1]. Instead of
predicting ``g`` directly, the model predicts a non-negative vector of
length P-1 that is integrated by a fixed triangular matrix, which makes the
result monotone (order >= 1) and concave (order >= 2) by construction:

    order 1:  D = B            (strictly lower-triangular ones, one prefix sum)
    order 2:  D = B A          (A upper-triangular ones: suffix sum first)
    order 3:  D = B A A        (one further suffix summation)
    order 0:  D = [0; I]       (no constraint, the prediction passes through)

The integrated vector ``c = D v`` starts at 0 and is normalized by its last
element, which equals its maximum whenever the curve is non-decreasing. An
all-zero prediction would divide by zero; that channel falls back to the
identity curve and is flagged degenerate instead.

``build_curve``/``apply_curve`` are the plain-array surface used for
enhancement and inspection. ``integrate_normalize``/``lookup_curves`` are
the tape-recorded twins used inside training; they share the same forward
arithmetic, so the two paths agree bit for bit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import Tensor
from .errors import ConfigError, ContractViolation, DimensionError, InputError

DEGENERATE_EPS = 1e-12
SUPPORTED_ORDERS = (0, 1, 2, 3)


@dataclass(frozen=True)
class IntegralOperator:
    """Precomputed P x (P-1) summation matrix for one constraint order."""

    bit_depth: int
    order: int
    matrix: np.ndarray = field(repr=False)

    @property
    def levels(self) -> int:
        return self.bit_depth


def build_integral_operator(bit_depth: int, order: int = 2) -> IntegralOperator:
    """Construct the integration matrix D for the given constraint order."""
    if bit_depth < 2:
        raise ConfigError(f"bit depth must be >= 2, got {bit_depth}")
    if order not in SUPPORTED_ORDERS:
        raise ConfigError(f"unsupported constraint order {order}")
    p = bit_depth
    lower = np.tril(np.ones((p, p - 1)), k=-1)          # b_ij = 1 iff i > j
    upper = np.triu(np.ones((p - 1, p - 1)))            # a_ij = 1 iff i <= j
    if order == 0:
        d = np.vstack([np.zeros((1, p - 1)), np.eye(p - 1)])
    elif order == 1:
        d = lower
    elif order == 2:
        d = lower @ upper
    else:
        d = lower @ upper @ upper
    d.setflags(write=False)
    return IntegralOperator(bit_depth=p, order=order, matrix=d)


@dataclass
class ConcaveCurveSet:
    """Per-channel lookup tables; ``g`` has shape (P, C)."""

    g: np.ndarray
    degenerate: np.ndarray  # (C,) bool, identity fallback per channel
    order: int

    @property
    def bit_depth(self) -> int:
        return self.g.shape[0]

    @property
    def channels(self) -> int:
        return self.g.shape[1]


@dataclass(frozen=True)
class GammaBaseline:
    """Per-channel exponents for the x**gamma comparison curve."""

    gamma: tuple[float, ...]

    def __post_init__(self):
        if any(g <= 0 for g in self.gamma):
            raise ConfigError("gamma exponents must be positive")


def identity_curve(bit_depth: int) -> np.ndarray:
    return np.arange(bit_depth, dtype=np.float64) / (bit_depth - 1)


def _normalize_columns(c: np.ndarray, bit_depth: int):
    """Divide each column by its last element; near-zero columns become the
    identity curve. Returns (g, degenerate mask)."""
    last = c[-1]
    degenerate = last < DEGENERATE_EPS
    safe = np.where(degenerate, 1.0, last)
    g = c / safe
    if degenerate.any():
        g[:, degenerate] = identity_curve(bit_depth)[:, None]
    return g, degenerate


def build_curve(v, operator: IntegralOperator) -> ConcaveCurveSet:
    """Integrate a predicted (P-1, C) vector set into lookup curves.

    For order >= 1 every entry of ``v`` must be non-negative (the predictor
    guarantees this with its final ReLU); a violation is a contract error.
    """
    vals = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.shape[0] != operator.bit_depth - 1:
        raise DimensionError(
            f"prediction length {vals.shape[0]} does not match bit depth "
            f"{operator.bit_depth}")
    if operator.order >= 1 and vals.min() < 0.0:
        raise ContractViolation(
            "negative entry in the second-derivative prediction")
    c = operator.matrix @ vals
    g, degenerate = _normalize_columns(c, operator.bit_depth)
    return ConcaveCurveSet(g=g, degenerate=degenerate, order=operator.order)


def integrate_normalize(v: Tensor, operator: IntegralOperator) -> Tensor:
    """Tape-recorded build_curve core: (P-1, M) predictions -> (P, M) curves.

    Shares the forward arithmetic with :func:`build_curve`; degenerate
    columns take the identity fallback and contribute zero gradient.
    """
    if v.data.ndim != 2 or v.data.shape[0] != operator.bit_depth - 1:
        raise DimensionError(
            f"expected ({operator.bit_depth - 1}, M) predictions, "
            f"got {v.data.shape}")
    d = operator.matrix
    c = d @ v.data
    g, degenerate = _normalize_columns(c, operator.bit_depth)
    last = np.where(degenerate, 1.0, c[-1])

    def vjp(grad):
        # dL/dc_ij = grad_ij / last_j - [i == P-1] * sum_k grad_kj c_kj / last_j^2
        dc = grad / last
        dc[-1] -= (grad * c).sum(axis=0) / (last * last)
        dc[:, degenerate] = 0.0
        return d.T @ dc

    return engine.custom_op(g, (v,), (vjp,))


def _levels_from_images(data: np.ndarray, bit_depth: int) -> np.ndarray:
    scaled = np.rint(data * (bit_depth - 1))
    return np.clip(scaled, 0, bit_depth - 1).astype(np.intp)


def lookup_curves(levels: np.ndarray, g: Tensor) -> Tensor:
    """Apply per-image per-channel curves to integer-level images.

    ``levels`` is (N, C, H, W) of ints in [0, P); ``g`` is (P, N*C) with
    column ``n*C + c`` holding the curve for image n, channel c. The
    backward pass scatter-adds output gradients into the used bins, which
    is the exact gradient since the lookup is linear in ``g``.
    """
    n, c, _, _ = levels.shape
    if g.data.shape[1] != n * c:
        raise DimensionError(
            f"curve columns {g.data.shape[1]} != images*channels {n * c}")
    cols = (np.arange(n)[:, None] * c + np.arange(c)[None, :])[:, :, None, None]
    out = g.data[levels, cols]

    def vjp(grad):
        dg = np.zeros_like(g.data)
        np.add.at(dg, (levels, cols), grad)
        return dg

    return engine.custom_op(out, (g,), (vjp,))


def apply_curve(images: "ImageBatch", curves: ConcaveCurveSet) -> "ImageBatch":
    """Map every pixel level through its channel's lookup table.

    Output stays continuous in [0, 1]; requantization to
    ``round(g * (P - 1))`` happens only when writing integer formats.
    """
    from .data import ImageBatch  # local import to avoid a cycle

    if images.bit_depth != curves.bit_depth:
        raise DimensionError(
            f"image bit depth {images.bit_depth} != curve bit depth "
            f"{curves.bit_depth}")
    if images.channels != curves.channels:
        raise DimensionError(
            f"image channels {images.channels} != curve channels "
            f"{curves.channels}")
    levels = _levels_from_images(images.data, images.bit_depth)
    out = np.empty_like(images.data)
    for ch in range(curves.channels):
        out[..., ch] = curves.g[:, ch][levels[..., ch]]
    return ImageBatch(data=out, bit_depth=images.bit_depth,
                      ids=list(images.ids))


def apply_curve_video(clip: "VideoClip", curves: ConcaveCurveSet) -> "VideoClip":
    """Apply one shared curve set to every frame of a clip."""
    from .data import ImageBatch, VideoClip

    frames = clip.frames
    batch = ImageBatch(data=frames, bit_depth=clip.bit_depth,
                       ids=list(clip.frame_names))
    enhanced = apply_curve(batch, curves)
    return VideoClip(frames=enhanced.data, bit_depth=clip.bit_depth,
                     frame_names=list(clip.frame_names))


def apply_gamma(images: "ImageBatch", baseline: GammaBaseline) -> "ImageBatch":
    """Elementwise x**gamma per channel (values are already in [0, 1])."""
    from .data import ImageBatch

    if len(baseline.gamma) != images.channels:
        raise DimensionError(
            f"{len(baseline.gamma)} exponents for {images.channels} channels")
    out = np.empty_like(images.data)
    for ch, gamma in enumerate(baseline.gamma):
        out[..., ch] = images.data[..., ch] ** gamma
    return ImageBatch(data=out, bit_depth=images.bit_depth,
                      ids=list(images.ids))


@dataclass(frozen=True)
class CurveDiagnostics:
    """Per-channel constraint diagnostics for a curve set."""

    min_first_diff: np.ndarray
    max_second_diff: np.ndarray
    start: np.ndarray
    end: np.ndarray
    degenerate: np.ndarray

    def monotone(self, tol: float = 1e-12) -> np.ndarray:
        return self.min_first_diff >= -tol

    def concave(self, tol: float = 1e-12) -> np.ndarray:
        return self.max_second_diff <= tol


def curve_concavity_report(curves: ConcaveCurveSet) -> CurveDiagnostics:
    first = np.diff(curves.g, axis=0)
    second = np.diff(curves.g, n=2, axis=0)
    return CurveDiagnostics(
        min_first_diff=first.min(axis=0),
        max_second_diff=second.max(axis=0),
        start=curves.g[0].copy(),
        end=curves.g[-1].copy(),
        degenerate=curves.degenerate.copy(),
    )


def export_curve_csv(curves: ConcaveCurveSet, path) -> None:
    """Write ``channel,level,g`` rows, P per channel, g with 9 decimals."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "level", "g"])
        for ch in range(curves.channels):
            for level in range(curves.bit_depth):
                writer.writerow([ch, level, f"{curves.g[level, ch]:.9f}"])


def import_curve_csv(path) -> ConcaveCurveSet:
    by_channel: dict[int, dict[int, float]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["channel", "level", "g"]:
            raise InputError(f"{path}: expected header channel,level,g")
        for row in reader:
            ch = int(row["channel"])
            by_channel.setdefault(ch, {})[int(row["level"])] = float(row["g"])
    if not by_channel:
        raise InputError(f"{path}: no curve rows")
    channels = sorted(by_channel)
    depth = len(by_channel[channels[0]])
    g = np.zeros((depth, len(channels)))
    for idx, ch in enumerate(channels):
        levels = by_channel[ch]
        if len(levels) != depth:
            raise InputError(f"{path}: channel {ch} has {len(levels)} levels, "
                             f"expected {depth}")
        for level, value in levels.items():
            g[level, idx] = value
    degenerate = np.zeros(len(channels), dtype=bool)
    return ConcaveCurveSet(g=g, degenerate=degenerate, order=2)
