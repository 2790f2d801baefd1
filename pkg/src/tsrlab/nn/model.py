"""Image-to-structure model built from a :class:`~tsrlab.arch.FullModelSpec`.

Visual stage (conv / patchify / residual stack from the spec), optional 1x1
adapter to ``d_model``, flatten + fixed 2D sinusoidal positions, pre-norm
transformer encoder, pre-norm transformer decoder with 1D sinusoidal
positions, linear output head over the 32-token vocabulary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import arch
from ..arch import FullModelSpec, Kind, LayerSpec
from ..errors import EmptySequence, ShapeMismatch
from ..grammar import EOS_ID, PAD_ID, SOS_ID, TokenSequence
from . import tensor as T
from .tensor import Tensor, no_grad

BN_EPS = 1e-5
MASK_VALUE = -1e9


def sinusoid_1d(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    freq = np.exp(-math.log(10000.0) * np.arange(0, dim, 2) / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


def sinusoid_2d(h: int, w: int, dim: int) -> np.ndarray:
    """Row encoding in the first dim/2 channels, column encoding in the rest; [h*w, dim]."""
    half = dim // 2
    rows = np.repeat(sinusoid_1d(h, half), w, axis=0)
    cols = np.tile(sinusoid_1d(w, half), (h, 1))
    return np.concatenate([rows, cols], axis=1)


def causal_mask(n: int) -> np.ndarray:
    return np.triu(np.full((n, n), MASK_VALUE), k=1)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention on [..., L, dh] tensors; returns (output, weights)."""
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = T.mul(T.matmul(q, T.transpose(k, tuple(range(k.data.ndim - 2)) + (k.data.ndim - 1, k.data.ndim - 2))), scale)
    if mask is not None:
        scores = T.add(scores, Tensor(mask.astype(scores.dtype)))
    weights = T.softmax(scores, axis=-1)
    return T.matmul(weights, v), weights


@dataclass(frozen=True)
class DecodeState:
    emitted: TokenSequence
    step: int
    finished: bool


class ModelInstance:
    """Parameters plus forward passes for one spec.

    Inference never mutates the instance, so it can be shared across threads;
    training (:func:`tsrlab.nn.train.train_toy`) needs exclusive access.
    """

    def __init__(self, spec: FullModelSpec, seed: int = 0, dtype=np.float64):
        self.spec = spec
        self.rng_seed = seed
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._dropout_rng = np.random.default_rng([seed, 1])
        rng = np.random.default_rng(seed)
        self._init_spatial(spec.encoder.layers, "visual", rng)
        if spec.adapter is not None:
            self._init_layer(spec.adapter, "adapter", rng)
        d, f = spec.d_model, spec.d_ff
        for i in range(spec.n_encoder_layers):
            p = f"tenc.{i}"
            self._init_attention(f"{p}.attn", rng)
            self._init_ffn(f"{p}.ff", rng)
            self._init_ln(f"{p}.ln1")
            self._init_ln(f"{p}.ln2")
        if spec.n_encoder_layers:
            self._init_ln("tenc.norm")
        for i in range(spec.n_decoder_layers):
            p = f"tdec.{i}"
            self._init_attention(f"{p}.self_attn", rng)
            self._init_attention(f"{p}.cross_attn", rng)
            self._init_ffn(f"{p}.ff", rng)
            for j in (1, 2, 3):
                self._init_ln(f"{p}.ln{j}")
        self._init_ln("tdec.norm")
        self._param("embed.weight", rng.uniform(-1.0, 1.0, (spec.vocab, d)))
        self._linear("head", d, spec.vocab, rng)

    # -- initialisation ----------------------------------------------------

    def _param(self, name: str, value: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        self.params[name] = Tensor(np.asarray(value, dtype=self.dtype), requires_grad=True)

    def _linear(self, name: str, n_in: int, n_out: int, rng) -> None:
        bound = 1.0 / math.sqrt(n_in)
        self._param(f"{name}.weight", rng.uniform(-bound, bound, (n_in, n_out)))
        self._param(f"{name}.bias", rng.uniform(-bound, bound, (n_out,)))

    def _init_attention(self, name: str, rng) -> None:
        d = self.spec.d_model
        for proj in ("q", "k", "v", "o"):
            self._linear(f"{name}.{proj}", d, d, rng)

    def _init_ffn(self, name: str, rng) -> None:
        self._linear(f"{name}.1", self.spec.d_model, self.spec.d_ff, rng)
        self._linear(f"{name}.2", self.spec.d_ff, self.spec.d_model, rng)

    def _init_ln(self, name: str) -> None:
        d = self.spec.d_model
        self._param(f"{name}.gamma", np.ones(d))
        self._param(f"{name}.beta", np.zeros(d))

    def _init_spatial(self, layers, prefix: str, rng) -> None:
        for i, layer in enumerate(layers):
            self._init_layer(layer, f"{prefix}.{i}", rng)

    def _init_layer(self, layer: LayerSpec, name: str, rng) -> None:
        if layer.kind in (Kind.CONV, Kind.PATCHIFY, Kind.POINTWISE):
            fan_in = layer.in_channels * layer.kernel**2
            bound = 1.0 / math.sqrt(fan_in)
            shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
            self._param(f"{name}.weight", rng.uniform(-bound, bound, shape))
            if layer.bias:
                self._param(f"{name}.bias", rng.uniform(-bound, bound, (layer.out_channels,)))
        elif layer.kind is Kind.NORM:
            self._param(f"{name}.gamma", np.ones(layer.out_channels))
            self._param(f"{name}.beta", np.zeros(layer.out_channels))
        elif layer.kind is Kind.RESIDUAL:
            self._init_spatial(layer.body, f"{name}.body", rng)
            self._init_spatial(layer.shortcut, f"{name}.shortcut", rng)

    # -- bookkeeping -------------------------------------------------------

    def n_scalars(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def groups(self) -> dict[str, list[str]]:
        """Parameter names grouped by stage (visual, tenc, tdec, embed, head, adapter)."""
        out: dict[str, list[str]] = {}
        for name in self.params:
            out.setdefault(name.split(".")[0], []).append(name)
        return out

    # -- visual stage ------------------------------------------------------

    def _check_image(self, image) -> Tensor:
        img = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=self.dtype))
        enc = self.spec.encoder
        expected = (enc.in_channels, *enc.input_size)
        if tuple(img.shape) != expected:
            raise ShapeMismatch(f"image shape {tuple(img.shape)} != expected {expected}")
        return img

    def _apply(self, layer: LayerSpec, name: str, x: Tensor, reach: bool) -> Tensor:
        p = self.params
        k = layer.kind
        if k in (Kind.CONV, Kind.PATCHIFY, Kind.POINTWISE):
            b = p.get(f"{name}.bias") if layer.bias else None
            return T.conv2d(x, p[f"{name}.weight"], b, layer.stride, layer.padding, layer.dilation)
        if k is Kind.NORM:
            c = layer.out_channels
            scale = T.mul(T.reshape(p[f"{name}.gamma"], (c, 1, 1)), 1.0 / math.sqrt(1.0 + BN_EPS))
            return T.add(T.mul(x, scale), T.reshape(p[f"{name}.beta"], (c, 1, 1)))
        if k is Kind.RELU:
            return T.relu(x)
        if k is Kind.MAXPOOL:
            pool = T.avg_pool2d if reach else T.max_pool2d
            return pool(x, layer.kernel, layer.stride, layer.padding)
        if k is Kind.RESIDUAL:
            y = x
            for j, sub in enumerate(layer.body):
                y = self._apply(sub, f"{name}.body.{j}", y, reach)
            s = x
            for j, sub in enumerate(layer.shortcut):
                s = self._apply(sub, f"{name}.shortcut.{j}", s, reach)
            return T.relu(T.add(y, s))
        raise ValueError(f"{k.value} is not a spatial layer")

    def visual_features(self, image, reach: bool = False) -> Tensor:
        """Output of the spatial stage, [C_out, H', W'].

        ``reach=True`` swaps max pooling for average pooling so every input
        in a pooling window keeps a gradient path (used by the RF probe).
        """
        x = self._check_image(image)
        for i, layer in enumerate(self.spec.encoder.layers):
            x = self._apply(layer, f"visual.{i}", x, reach)
        return x

    # -- transformer -------------------------------------------------------

    def _mha(self, name: str, q_in: Tensor, kv_in: Tensor, mask, train: bool) -> Tensor:
        p = self.params
        d, h = self.spec.d_model, self.spec.heads
        dh = d // h
        lq, lk = q_in.shape[0], kv_in.shape[0]

        def heads(x, proj, n):
            y = T.linear(x, p[f"{name}.{proj}.weight"], p[f"{name}.{proj}.bias"])
            return T.transpose(T.reshape(y, (n, h, dh)), (1, 0, 2))

        out, _ = attention(heads(q_in, "q", lq), heads(kv_in, "k", lk), heads(kv_in, "v", lk), mask)
        out = T.reshape(T.transpose(out, (1, 0, 2)), (lq, d))
        out = T.linear(out, p[f"{name}.o.weight"], p[f"{name}.o.bias"])
        return T.dropout(out, self.spec.dropout, self._dropout_rng, train)

    def _ffn(self, name: str, x: Tensor, train: bool) -> Tensor:
        p = self.params
        y = T.relu(T.linear(x, p[f"{name}.1.weight"], p[f"{name}.1.bias"]))
        y = T.linear(y, p[f"{name}.2.weight"], p[f"{name}.2.bias"])
        return T.dropout(y, self.spec.dropout, self._dropout_rng, train)

    def _ln(self, name: str, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"])

    def forward_encode(self, image, train: bool = False) -> Tensor:
        """Image [C, H, W] -> memory [N, d_model]."""
        x = self.visual_features(image)
        if self.spec.adapter is not None:
            x = self._apply(self.spec.adapter, "adapter", x, False)
        d, h, w = x.shape
        x = T.transpose(T.reshape(x, (d, h * w)), (1, 0))
        x = T.add(x, Tensor(sinusoid_2d(h, w, d).astype(self.dtype)))
        for i in range(self.spec.n_encoder_layers):
            h = self._ln(f"tenc.{i}.ln1", x)
            x = T.add(x, self._mha(f"tenc.{i}.attn", h, h, None, train))
            x = T.add(x, self._ffn(f"tenc.{i}.ff", self._ln(f"tenc.{i}.ln2", x), train))
        if self.spec.n_encoder_layers:
            x = self._ln("tenc.norm", x)
        return x

    def decode(self, memory: Tensor, ids, train: bool = False) -> Tensor:
        """Teacher-forced logits [L, vocab] for decoder input ``ids``."""
        ids = np.asarray(ids, dtype=np.int64)
        n = len(ids)
        d = self.spec.d_model
        x = T.embedding(self.params["embed.weight"], ids)
        x = T.add(x, Tensor(sinusoid_1d(n, d).astype(self.dtype)))
        mask = causal_mask(n)
        for i in range(self.spec.n_decoder_layers):
            p = f"tdec.{i}"
            h = self._ln(f"{p}.ln1", x)
            x = T.add(x, self._mha(f"{p}.self_attn", h, h, mask, train))
            x = T.add(x, self._mha(f"{p}.cross_attn", self._ln(f"{p}.ln2", x), memory, None, train))
            x = T.add(x, self._ffn(f"{p}.ff", self._ln(f"{p}.ln3", x), train))
        x = self._ln("tdec.norm", x)
        return T.linear(x, self.params["head.weight"], self.params["head.bias"])

    def logits(self, image, ids, train: bool = False) -> Tensor:
        return self.decode(self.forward_encode(image, train), ids, train)

    # -- objective and inference ------------------------------------------

    def loss(self, image, gt: TokenSequence | list[int], train: bool = False) -> Tensor:
        """Mean negative log-likelihood of gt[1:] given the image and gt[:-1].

        ``<pad>`` targets are excluded from the mean.
        """
        ids = np.asarray(gt.ids if isinstance(gt, TokenSequence) else gt, dtype=np.int64)
        if len(ids) < 2:
            raise EmptySequence("need at least <sos> and one target token")
        if ids[0] != SOS_ID:
            raise ValueError("target sequence must start with <sos>")
        logits = self.logits(image, ids[:-1], train)
        return T.cross_entropy(logits, ids[1:], ignore_index=PAD_ID)

    def greedy_decode(self, image, max_len: int | None = None) -> TokenSequence:
        return self.greedy_state(image, max_len).emitted

    def greedy_state(self, image, max_len: int | None = None) -> DecodeState:
        limit = self.spec.max_len if max_len is None else max_len
        if limit > self.spec.max_len:
            raise ValueError(f"max_len {limit} exceeds model limit {self.spec.max_len}")
        if limit < 1:
            raise ValueError("max_len must be positive")
        with no_grad():
            memory = self.forward_encode(image)
            ids = [SOS_ID]
            while len(ids) < limit and ids[-1] != EOS_ID:
                logits = self.decode(memory, ids).data
                ids.append(int(np.argmax(logits[-1])))
        finished = ids[-1] == EOS_ID or len(ids) == limit
        return DecodeState(TokenSequence(tuple(ids), limit), len(ids) - 1, finished)


def instantiate(spec: FullModelSpec | str, seed: int = 0, dtype=np.float64, **preset_kw) -> ModelInstance:
    if isinstance(spec, str):
        spec = arch.preset(spec, **preset_kw)
    return ModelInstance(spec, seed=seed, dtype=dtype)
