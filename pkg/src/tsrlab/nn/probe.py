"""Empirical receptive fields and finite-difference gradient checks."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .. import arch
from ..arch import EncoderSpec, FullModelSpec, Kind
from ..grammar import TokenSequence
from . import tensor as T
from .model import ModelInstance
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class Box:
    """Half-open pixel rectangle [top, bottom) x [left, right)."""

    top: int
    left: int
    bottom: int
    right: int

    @property
    def height(self) -> int:
        return self.bottom - self.top

    @property
    def width(self) -> int:
        return self.right - self.left


_WINDOWED = (Kind.CONV, Kind.PATCHIFY, Kind.POINTWISE, Kind.MAXPOOL)


def _out_len(layer, n: int) -> int:
    if layer.kind in _WINDOWED:
        return (n + 2 * layer.padding - layer.effective_kernel) // layer.stride + 1
    if layer.kind is Kind.RESIDUAL:
        for sub in layer.body:
            n = _out_len(sub, n)
    return n


def _back(layers, n_in: int, taps: set[int]) -> set[int]:
    """Input indices (one axis) feeding the output indices ``taps`` of ``layers``."""
    sizes = [n_in]
    for layer in layers:
        sizes.append(_out_len(layer, sizes[-1]))
    for layer, n in zip(reversed(layers), reversed(sizes[:-1])):
        if layer.kind in _WINDOWED:
            s, p, d = layer.stride, layer.padding, layer.dilation
            # padding is not input; dilation gaps and s > k can skip pixels entirely
            taps = {o * s - p + d * j for o in taps for j in range(layer.kernel)}
            taps = {i for i in taps if 0 <= i < n}
        elif layer.kind is Kind.RESIDUAL:
            taps = _back(layer.body, n, taps) | _back(layer.shortcut, n, taps)
    return taps


def theoretical_box(spec: EncoderSpec | FullModelSpec, out_pos: tuple[int, int]) -> Box:
    """Bounding box of the input pixels wired to output ``out_pos``.

    Away from the borders its side is the recursion's rf; near them it is
    clipped to pixels some window actually covers.
    """
    enc = spec.encoder if isinstance(spec, FullModelSpec) else spec
    rows, cols = (_back(enc.layers, n, {p}) for n, p in zip(enc.input_size, out_pos))
    return Box(min(rows), min(cols), max(rows) + 1, max(cols) + 1)


def _probe_spec(encoder: EncoderSpec) -> FullModelSpec:
    # transformer stages are irrelevant to the probe; keep them minimal
    return FullModelSpec(encoder=encoder, n_encoder_layers=0, n_decoder_layers=0, d_model=4, d_ff=4, heads=1, dropout=0.0)


def positive_copy(model: ModelInstance, seed: int = 0) -> ModelInstance:
    """Copy of ``model`` whose visual-stage parameters are strictly positive.

    Weights are drawn from U(0.5, 1) / fan_in, biases and norm shifts from
    U(0.1, 0.2), norm scales from U(0.5, 1).
    """
    rng = np.random.default_rng(seed)
    clone = copy.copy(model)
    clone.params = dict(model.params)
    for name, p in model.params.items():
        if not name.startswith("visual."):
            continue
        if name.endswith(".weight"):
            fan_in = int(np.prod(p.shape[1:]))
            value = rng.uniform(0.5, 1.0, p.shape) / fan_in
        elif name.endswith(".gamma"):
            value = rng.uniform(0.5, 1.0, p.shape)
        else:
            value = rng.uniform(0.1, 0.2, p.shape)
        clone.params[name] = Tensor(value.astype(model.dtype), requires_grad=True)
    return clone


def empirical_rf(model: ModelInstance | EncoderSpec, out_pos: tuple[int, int], seed: int = 0) -> Box:
    """Bounding box of input pixels with a non-zero gradient path to ``out_pos``.

    Only the spatial stage is probed (attention reaches everywhere). Weights
    are re-drawn positive and the input is all ones, so no two paths cancel
    and the support equals the architectural reach; max pooling is probed as
    average pooling for the same reason.
    """
    if isinstance(model, EncoderSpec):
        model = ModelInstance(_probe_spec(model), seed=seed)
    probe = positive_copy(model, seed)
    enc = model.spec.encoder
    x = Tensor(np.ones((enc.in_channels, *enc.input_size), dtype=model.dtype), requires_grad=True)
    feats = probe.visual_features(x, reach=True)
    r, c = out_pos
    if not (0 <= r < feats.shape[1] and 0 <= c < feats.shape[2]):
        raise IndexError(f"output position {out_pos} outside feature map {feats.shape[1:]}")
    T.tsum(T.index(feats, (slice(None), r, c))).backward()
    support = np.abs(x.grad).sum(axis=0) > 0
    rows = np.flatnonzero(support.any(axis=1))
    cols = np.flatnonzero(support.any(axis=0))
    return Box(int(rows[0]), int(cols[0]), int(rows[-1]) + 1, int(cols[-1]) + 1)


def is_conv_stack(enc: EncoderSpec) -> bool:
    """True when the spatial stage has no pooling (the probe is exact there)."""
    return all(l.kind is not Kind.MAXPOOL for l in arch._main_path(enc.layers))


# -- gradient check --------------------------------------------------------

REL_FLOOR = 1e-5


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_tensor: dict[str, float] = field(default_factory=dict)
    n_coords: int = 0
    n_kinks: int = 0  # coordinates skipped because +/- step flipped a relu


def rel_error(analytic: float, numeric: float) -> float:
    """|a - n| / max(|a|, |n|, REL_FLOOR).

    The floor keeps coordinates whose true gradient is ~0 from dividing
    finite-difference round-off (~1e-10 at step 1e-5) by ~0; below it the
    check is absolute at REL_FLOOR * tolerance.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)


def grad_check(
    model: ModelInstance,
    image,
    gt: TokenSequence | list[int],
    n_coords: int = 100,
    step: float = 1e-5,
    seed: int = 0,
) -> GradCheckResult:
    """Compare backprop gradients of the loss with central differences.

    Samples ``n_coords`` coordinates (or all, if fewer) from every parameter
    tensor. A coordinate whose +step and -step evaluations see different relu
    on/off patterns straddles a kink, where the central difference is not a
    derivative estimate; it is skipped and counted in ``n_kinks``.
    """
    if model.dtype != np.float64:
        raise TypeError("grad_check needs a float64 model")
    rng = np.random.default_rng(seed)
    model.zero_grad()
    model.loss(image, gt).backward()
    result = GradCheckResult(0.0)
    for name, p in model.params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        picks = np.arange(flat.size) if flat.size <= n_coords else rng.choice(flat.size, n_coords, replace=False)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + step
                with T.record_kinks() as k_up:
                    up = model.loss(image, gt).item()
                flat[i] = orig - step
                with T.record_kinks() as k_down:
                    down = model.loss(image, gt).item()
            flat[i] = orig
            if any(not np.array_equal(a, b) for a, b in zip(k_up, k_down)):
                result.n_kinks += 1
                continue
            numeric = (up - down) / (2 * step)
            worst = max(worst, rel_error(float(analytic.reshape(-1)[i]), numeric))
        result.per_tensor[name] = worst
        result.n_coords += len(picks)
        result.max_rel_error = max(result.max_rel_error, worst)
    model.zero_grad()
    if not math.isfinite(result.max_rel_error):
        result.max_rel_error = math.inf
    return result
