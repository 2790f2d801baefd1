"""Static analysis of visual-encoder + transformer stacks.

An encoder is a declarative list of :class:`LayerSpec`. From it we derive the
theoretical receptive field (rf), jump (product of strides), output size,
sequence length, learnable parameter count and multiply-accumulate count.

Receptive-field recursion, per layer with kernel k, stride s, dilation d::

    k_eff = d * (k - 1) + 1
    rf_l  = rf_{l-1} + (k_eff - 1) * jump_{l-1}
    jump_l = jump_{l-1} * s
    out_l = floor((in_l + 2 p - k_eff) / s) + 1

MAC conventions: a conv costs k^2 * C_in * C_out * H_out * W_out (bias, norm,
activation, pooling and residual adds are free); a linear layer costs
in * out per token; attention also pays Q.K^T and A.V at the declared lengths.
"""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Callable, Iterator

from .errors import DegenerateOutput, UnknownPreset

DEFAULT_INPUT = 448
TOY_INPUT = 32


class Kind(str, enum.Enum):
    CONV = "conv"
    PATCHIFY = "patchify"
    POINTWISE = "pointwise"
    MAXPOOL = "maxpool"
    NORM = "norm"
    RELU = "relu"
    RESIDUAL = "residual-block"
    TRANSFORMER_ENCODER = "transformer-encoder"
    TRANSFORMER_DECODER = "transformer-decoder"
    EMBEDDING = "embedding"


_WINDOWED = (Kind.CONV, Kind.PATCHIFY, Kind.POINTWISE, Kind.MAXPOOL)
_CONVLIKE = (Kind.CONV, Kind.PATCHIFY, Kind.POINTWISE)


@dataclass(frozen=True)
class LayerSpec:
    kind: Kind
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    dilation: int = 1
    in_channels: int = 0
    out_channels: int = 0
    bias: bool = True
    body: tuple["LayerSpec", ...] = ()
    shortcut: tuple["LayerSpec", ...] = ()
    d_model: int = 0
    d_ff: int = 0
    heads: int = 0

    def __post_init__(self) -> None:
        if self.kernel < 1 or self.stride < 1 or self.padding < 0 or self.dilation < 1:
            raise ValueError(f"invalid window for {self.kind.value}: {self}")
        if self.kind is Kind.PATCHIFY and (self.stride != self.kernel or self.padding != 0):
            raise ValueError("patchify requires stride == kernel and no padding")
        if self.kind is Kind.POINTWISE and (self.kernel != 1 or self.stride != 1):
            raise ValueError("pointwise layers are 1x1, stride 1")

    @property
    def effective_kernel(self) -> int:
        return self.dilation * (self.kernel - 1) + 1

    def as_conv(self) -> "LayerSpec":
        """Patchify/pointwise expressed as the equivalent plain convolution."""
        return replace(self, kind=Kind.CONV) if self.kind in _CONVLIKE else self


def conv(cin: int, cout: int, k: int, stride: int = 1, padding: int = 0, dilation: int = 1, bias: bool = True) -> LayerSpec:
    return LayerSpec(Kind.CONV, k, stride, padding, dilation, cin, cout, bias)


def patchify(cin: int, cout: int, patch: int, bias: bool = True) -> LayerSpec:
    return LayerSpec(Kind.PATCHIFY, patch, patch, 0, 1, cin, cout, bias)


def pointwise(cin: int, cout: int, bias: bool = True) -> LayerSpec:
    return LayerSpec(Kind.POINTWISE, 1, 1, 0, 1, cin, cout, bias)


def maxpool(k: int, stride: int, padding: int = 0) -> LayerSpec:
    return LayerSpec(Kind.MAXPOOL, k, stride, padding)


def norm(channels: int) -> LayerSpec:
    return LayerSpec(Kind.NORM, in_channels=channels, out_channels=channels)


def relu() -> LayerSpec:
    return LayerSpec(Kind.RELU)


def residual(body: list[LayerSpec], shortcut: list[LayerSpec] | None = None) -> LayerSpec:
    """``relu(body(x) + shortcut(x))``; an empty shortcut is the identity."""
    return LayerSpec(Kind.RESIDUAL, body=tuple(body), shortcut=tuple(shortcut or ()))


@dataclass(frozen=True)
class EncoderSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    input_size: tuple[int, int] = (DEFAULT_INPUT, DEFAULT_INPUT)
    in_channels: int = 3

    def with_input(self, size: int | tuple[int, int]) -> "EncoderSpec":
        if isinstance(size, int):
            size = (size, size)
        return replace(self, input_size=tuple(size))

    @property
    def out_channels(self) -> int:
        return _channels_out(self.layers, self.in_channels)


def _channels_out(layers, cin: int) -> int:
    c = cin
    for layer in layers:
        if layer.kind is Kind.RESIDUAL:
            c = _channels_out(layer.body, c)
        elif layer.kind in _CONVLIKE:
            if layer.in_channels != c:
                raise ValueError(f"channel mismatch: {layer.kind.value} expects {layer.in_channels}, got {c}")
            c = layer.out_channels
        elif layer.kind is Kind.NORM and layer.in_channels != c:
            raise ValueError(f"norm over {layer.in_channels} channels applied to {c}")
    return c


@dataclass(frozen=True)
class FullModelSpec:
    encoder: EncoderSpec
    n_encoder_layers: int = 4
    n_decoder_layers: int = 4
    d_model: int = 512
    d_ff: int = 1024
    heads: int = 8
    vocab: int = 32
    max_len: int = 512
    dropout: float = 0.5
    preset: str | None = None

    def __post_init__(self) -> None:
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if self.d_model % 4:
            raise ValueError("d_model must be divisible by 4 (2D sinusoidal encoding)")

    @property
    def name(self) -> str:
        return self.encoder.name

    @property
    def adapter(self) -> LayerSpec | None:
        """1x1 projection inserted when the encoder width differs from d_model."""
        c = self.encoder.out_channels
        return None if c == self.d_model else pointwise(c, self.d_model)

    def with_input(self, size: int | tuple[int, int]) -> "FullModelSpec":
        return replace(self, encoder=self.encoder.with_input(size))


# -- geometry --------------------------------------------------------------


@dataclass(frozen=True)
class Geometry:
    kind: str
    rf: int
    jump: int
    start: int  # input coordinate of the first pixel seen by output index 0
    out_size: tuple[int, int]


def _step(layer: LayerSpec, rf: int, jump: int, start: int, size: tuple[int, int]):
    if layer.kind in _WINDOWED:
        ke = layer.effective_kernel
        rf = rf + (ke - 1) * jump
        start = start - layer.padding * jump
        jump = jump * layer.stride
        size = tuple((n + 2 * layer.padding - ke) // layer.stride + 1 for n in size)
        if min(size) < 1:
            raise DegenerateOutput(f"{layer.kind.value} k={layer.kernel} s={layer.stride} yields {size}")
    elif layer.kind is Kind.RESIDUAL:
        out = (rf, jump, start, size)
        for sub in layer.body:
            out = _step(sub, *out)
        short = (rf, jump, start, size)
        for sub in layer.shortcut:
            short = _step(sub, *short)
        if short[1] != out[1] or short[3] != out[3]:
            raise DegenerateOutput(f"residual shortcut yields {short[3]}, body {out[3]}")
        rf, jump, start, size = out
    return rf, jump, start, size


def trace_geometry(spec: EncoderSpec | FullModelSpec) -> list[Geometry]:
    """Per-layer (rf, jump, start, out_size) for the spatial stage."""
    if isinstance(spec, FullModelSpec):
        spec = spec.encoder
    state = (1, 1, 0, tuple(spec.input_size))
    out = []
    for layer in spec.layers:
        state = _step(layer, *state)
        out.append(Geometry(layer.kind.value, *state))
    return out


def _final(spec: EncoderSpec) -> Geometry:
    trace = trace_geometry(spec)
    if trace:
        return trace[-1]
    return Geometry("identity", 1, 1, 0, tuple(spec.input_size))


def receptive_field(spec: EncoderSpec | FullModelSpec) -> int:
    if isinstance(spec, FullModelSpec):
        spec = spec.encoder
    return _final(spec).rf


def round2(x: Fraction | float) -> float:
    """Round half-up to 2 decimals."""
    if isinstance(x, Fraction):
        d = Decimal(x.numerator) / Decimal(x.denominator)
    else:
        d = Decimal(repr(x))
    return float(d.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def rf_ratio(spec: EncoderSpec | FullModelSpec) -> float:
    """min(rf / side, 1) in percent. Non-square inputs use the shorter side."""
    if isinstance(spec, FullModelSpec):
        spec = spec.encoder
    side = min(spec.input_size)
    return round2(min(Fraction(receptive_field(spec), side), Fraction(1)) * 100)


def sequence_length(spec: EncoderSpec | FullModelSpec) -> int:
    if isinstance(spec, FullModelSpec):
        spec = spec.encoder
    h, w = _final(spec).out_size
    return h * w


# -- parameter counting ----------------------------------------------------


def layer_params(layer: LayerSpec) -> int:
    k = layer.kind
    if k in _CONVLIKE:
        return layer.kernel**2 * layer.in_channels * layer.out_channels + (layer.out_channels if layer.bias else 0)
    if k is Kind.NORM:
        return 2 * layer.out_channels
    if k is Kind.RESIDUAL:
        return sum(map(layer_params, layer.body)) + sum(map(layer_params, layer.shortcut))
    if k is Kind.TRANSFORMER_ENCODER:
        return _attn_params(layer.d_model) + _ffn_params(layer.d_model, layer.d_ff) + 4 * layer.d_model
    if k is Kind.TRANSFORMER_DECODER:
        return 2 * _attn_params(layer.d_model) + _ffn_params(layer.d_model, layer.d_ff) + 6 * layer.d_model
    if k is Kind.EMBEDDING:
        return layer.in_channels * layer.out_channels
    return 0


def _attn_params(d: int) -> int:
    return 4 * d * d + 4 * d


def _ffn_params(d: int, f: int) -> int:
    return 2 * d * f + d + f


def _encoder_layer(m: FullModelSpec) -> LayerSpec:
    return LayerSpec(Kind.TRANSFORMER_ENCODER, d_model=m.d_model, d_ff=m.d_ff, heads=m.heads)


def _decoder_layer(m: FullModelSpec) -> LayerSpec:
    return LayerSpec(Kind.TRANSFORMER_DECODER, d_model=m.d_model, d_ff=m.d_ff, heads=m.heads)


def params_by_stage(m: FullModelSpec) -> dict[str, int]:
    """Learnable scalars per stage. Positional encodings are fixed (zero)."""
    d = m.d_model
    enc = sum(map(layer_params, m.encoder.layers))
    adapter = layer_params(m.adapter) if m.adapter else 0
    t_enc = m.n_encoder_layers * layer_params(_encoder_layer(m)) + (2 * d if m.n_encoder_layers else 0)
    t_dec = m.n_decoder_layers * layer_params(_decoder_layer(m)) + 2 * d
    return {
        "visual_encoder": enc + adapter,
        "transformer_encoder": t_enc,
        "transformer_decoder": t_dec,
        "embeddings": m.vocab * d,
        "output_head": d * m.vocab + m.vocab,
    }


def param_count(spec: FullModelSpec | EncoderSpec) -> int:
    if isinstance(spec, EncoderSpec):
        return sum(map(layer_params, spec.layers))
    return sum(params_by_stage(spec).values())


# -- MAC counting ----------------------------------------------------------


def _layer_macs(layer: LayerSpec, size: tuple[int, int]) -> tuple[int, tuple[int, int]]:
    if layer.kind is Kind.RESIDUAL:
        total, out = 0, size
        for sub in layer.body:
            macs, out = _layer_macs(sub, out)
            total += macs
        s2 = size
        for sub in layer.shortcut:
            macs, s2 = _layer_macs(sub, s2)
            total += macs
        return total, out
    if layer.kind in _WINDOWED:
        ke = layer.effective_kernel
        out = tuple((n + 2 * layer.padding - ke) // layer.stride + 1 for n in size)
        if min(out) < 1:
            raise DegenerateOutput(f"{layer.kind.value} yields {out}")
        if layer.kind in _CONVLIKE:
            return layer.kernel**2 * layer.in_channels * layer.out_channels * out[0] * out[1], out
        return 0, out
    return 0, size


def encoder_macs(spec: EncoderSpec) -> int:
    size, total = tuple(spec.input_size), 0
    for layer in spec.layers:
        macs, size = _layer_macs(layer, size)
        total += macs
    return total


def attention_macs(q_len: int, kv_len: int, d: int) -> int:
    """Projections (Q, K, V, output) plus Q.K^T and A.V."""
    proj = 2 * q_len * d * d + 2 * kv_len * d * d
    return proj + 2 * q_len * kv_len * d


def macs_by_stage(m: FullModelSpec, decode_len: int | None = None) -> dict[str, int]:
    """MACs for one forward pass; the decoder runs teacher-forced at ``decode_len``."""
    n = sequence_length(m)
    length = m.max_len if decode_len is None else decode_len
    d, f, v = m.d_model, m.d_ff, m.vocab
    enc = encoder_macs(m.encoder) + (n * m.adapter.in_channels * d if m.adapter else 0)
    enc_layer = attention_macs(n, n, d) + 2 * n * d * f
    dec_layer = attention_macs(length, length, d) + attention_macs(length, n, d) + 2 * length * d * f
    return {
        "visual_encoder": enc,
        "transformer_encoder": m.n_encoder_layers * enc_layer,
        "transformer_decoder": m.n_decoder_layers * dec_layer,
        "embeddings": 0,
        "output_head": length * d * v,
    }


def mac_count(spec: FullModelSpec | EncoderSpec, decode_len: int | None = None) -> int:
    if isinstance(spec, EncoderSpec):
        return encoder_macs(spec)
    return sum(macs_by_stage(spec, decode_len).values())


# -- conv bookkeeping ------------------------------------------------------


def _main_path(layers) -> Iterator[LayerSpec]:
    for layer in layers:
        if layer.kind is Kind.RESIDUAL:
            yield from _main_path(layer.body)
        else:
            yield layer


def conv_layers(spec: EncoderSpec) -> list[LayerSpec]:
    """Main-path convolutions (projection shortcuts are not counted)."""
    return [l for l in _main_path(spec.layers) if l.kind in (Kind.CONV, Kind.PATCHIFY)]


def shared_kernel(spec: EncoderSpec) -> int | None:
    """Kernel size shared by every non-1x1 main-path conv, or None if mixed."""
    kernels = {l.kernel for l in conv_layers(spec) if l.kernel > 1}
    return kernels.pop() if len(kernels) == 1 else None


# -- report ----------------------------------------------------------------


@dataclass(frozen=True)
class AnalysisReport:
    name: str
    input_size: tuple[int, int]
    params: int
    macs: int
    n_conv: int
    kernel: int | None
    rf: int
    rf_ratio: float
    seq_len: int
    flops: int = 0
    params_by_stage: dict[str, int] = field(default_factory=dict)
    macs_by_stage: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def report(spec: FullModelSpec, decode_len: int | None = None) -> AnalysisReport:
    enc = spec.encoder
    pbs = params_by_stage(spec)
    mbs = macs_by_stage(spec, decode_len)
    macs = sum(mbs.values())
    return AnalysisReport(
        name=spec.name,
        input_size=tuple(enc.input_size),
        params=sum(pbs.values()),
        macs=macs,
        n_conv=len(conv_layers(enc)),
        kernel=shared_kernel(enc),
        rf=receptive_field(enc),
        rf_ratio=rf_ratio(enc),
        seq_len=sequence_length(enc),
        flops=2 * macs,
        params_by_stage=pbs,
        macs_by_stage=mbs,
    )


def fmt_m(n: int) -> str:
    return f"{round2(Fraction(n, 10**6)):.2f}M"


def fmt_g(n: int) -> str:
    return f"{round2(Fraction(n, 10**9)):.2f}G"


def format_table(reports: list[AnalysisReport]) -> str:
    head = ("Model", "#Param.", "MAC", "#Conv.", "Kernel", "RF", "RF ratio (%)", "N")
    rows = [
        (
            r.name,
            fmt_m(r.params),
            fmt_g(r.macs),
            str(r.n_conv),
            "-" if r.kernel is None else str(r.kernel),
            str(r.rf),
            f"{r.rf_ratio:.2f}",
            str(r.seq_len),
        )
        for r in reports
    ]
    widths = [max(len(x[i]) for x in [head, *rows]) for i in range(len(head))]
    lines = []
    for i, row in enumerate([head, *rows]):
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


# -- presets ---------------------------------------------------------------


def _basic_block(inp: int, planes: int, stride: int, dilation: int, shortcut, inner_dilation: int | None = None) -> LayerSpec:
    inner = dilation if inner_dilation is None else inner_dilation
    return residual(
        [
            conv(inp, planes, 3, stride, dilation, dilation, bias=False),
            norm(planes),
            relu(),
            conv(planes, planes, 3, 1, inner, inner, bias=False),
            norm(planes),
        ],
        shortcut,
    )


def _bottleneck(inp: int, planes: int, stride: int, dilation: int, shortcut, inner_dilation: int | None = None) -> LayerSpec:
    out = planes * 4
    return residual(
        [
            conv(inp, planes, 1, bias=False),
            norm(planes),
            relu(),
            conv(planes, planes, 3, stride, dilation, dilation, bias=False),
            norm(planes),
            relu(),
            conv(planes, out, 1, bias=False),
            norm(out),
        ],
        shortcut,
    )


_RESNETS = {
    "resnet18": (_basic_block, 1, (2, 2, 2, 2)),
    "resnet34": (_basic_block, 1, (3, 4, 6, 3)),
    "resnet50": (_bottleneck, 4, (3, 4, 6, 3)),
}


def resnet_encoder(depth: str, maxpool_stem: bool = True, dilate_last: bool = True) -> EncoderSpec:
    """ResNet trunk without pooling head or classifier.

    With ``dilate_last`` the last stage trades its stride for dilation 2 on
    every later conv, so the trunk downsamples by 16 while keeping the
    stride-32 receptive field.
    """
    block, expansion, counts = _RESNETS[depth]
    layers = [conv(3, 64, 7, 2, 3, bias=False), norm(64), relu()]
    if maxpool_stem:
        layers.append(maxpool(3, 2, 1))
    inplanes, dilation = 64, 1
    for stage, (planes, n) in enumerate(zip((64, 128, 256, 512), counts)):
        stride = 1 if stage == 0 else 2
        previous = dilation
        if dilate_last and stage == 3:
            dilation *= stride
            stride = 1
        shortcut = None
        if stride != 1 or inplanes != planes * expansion:
            shortcut = [conv(inplanes, planes * expansion, 1, stride, bias=False), norm(planes * expansion)]
        # a trous rule: every conv after a removed stride is dilated by it
        layers.append(block(inplanes, planes, stride, previous, shortcut, inner_dilation=dilation))
        inplanes = planes * expansion
        for _ in range(1, n):
            layers.append(block(inplanes, planes, 1, dilation, None))
    name = {"resnet18": "ResNet-18", "resnet34": "ResNet-34", "resnet50": "ResNet-50"}[depth]
    if not maxpool_stem:
        name += " (no maxpool)"
    return EncoderSpec(name, tuple(layers))


def linearproj_encoder(patch: int, d_model: int) -> EncoderSpec:
    return EncoderSpec(f"LinearProj-{patch}", (patchify(3, d_model, patch),))


def convstem_encoder(name: str, kernel: int, n_down: int, d_model: int, width: int = 48, padding: int = 1) -> EncoderSpec:
    """Stride-2 conv/norm/relu stages doubling in width, then a 1x1 conv to d_model."""
    layers, cin = [], 3
    for i in range(n_down):
        w = width * 2**i
        layers += [conv(cin, w, kernel, 2, padding, bias=False), norm(w), relu()]
        cin = w
    layers.append(conv(cin, d_model, 1))
    return EncoderSpec(name, tuple(layers))


@dataclass(frozen=True)
class _Preset:
    build: Callable[[int], EncoderSpec]
    input_size: int
    cnn_backbone: bool = False
    toy: bool = False


_CONVSTEMS = {
    # name: (label, kernel, stride-2 convs, input side)
    "convstem": ("ConvStem", 5, 4, 448),
    "convstem-r1": ("ConvStem-R1", 3, 4, 448),
    "convstem-r2": ("ConvStem-R2", 5, 4, 476),
    "convstem-r3": ("ConvStem-R3", 5, 3, 224),
    "convstem-n1": ("ConvStem-N1", 3, 4, 252),
    "convstem-n2": ("ConvStem-N2", 5, 4, 392),
    "convstem-n3": ("ConvStem-N3", 5, 4, 504),
}

PRESETS: dict[str, _Preset] = {}
for _depth in _RESNETS:
    PRESETS[_depth] = _Preset(lambda d, depth=_depth: resnet_encoder(depth), DEFAULT_INPUT, cnn_backbone=True)
    PRESETS[f"{_depth}-nomaxpool"] = _Preset(
        lambda d, depth=_depth: resnet_encoder(depth, maxpool_stem=False, dilate_last=False),
        DEFAULT_INPUT,
        cnn_backbone=True,
    )
for _p in (14, 16, 28, 56, 112):
    PRESETS[f"linearproj-{_p}"] = _Preset(lambda d, p=_p: linearproj_encoder(p, d), DEFAULT_INPUT)
for _key, (_label, _k, _n, _size) in _CONVSTEMS.items():
    PRESETS[_key] = _Preset(lambda d, a=(_label, _k, _n): convstem_encoder(a[0], a[1], a[2], d), _size)
PRESETS["toy-linearproj"] = _Preset(lambda d: EncoderSpec("Toy-LinearProj-8", (patchify(3, d, 8),)), TOY_INPUT, toy=True)
PRESETS["toy-convstem"] = _Preset(
    lambda d: convstem_encoder("Toy-ConvStem", 3, 2, d, width=16), TOY_INPUT, toy=True
)

TOY_SCALE = dict(d_model=64, d_ff=128, heads=4, n_encoder_layers=2, n_decoder_layers=2, dropout=0.0)


def preset_names() -> list[str]:
    return list(PRESETS)


def preset(name: str, input_size: int | tuple[int, int] | None = None, scale: str | None = None, **overrides) -> FullModelSpec:
    """Build a named model.

    ``scale="toy"`` swaps in the small transformer (d_model 64, d_ff 128,
    4 heads, 2+2 layers); presets whose name starts with ``toy-`` use it by
    default. Keyword overrides go to :class:`FullModelSpec`.
    """
    key = name.lower()
    if key not in PRESETS:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    p = PRESETS[key]
    kw: dict = {"n_encoder_layers": 2 if p.cnn_backbone else 4}
    if scale == "toy" or (scale is None and p.toy):
        kw.update(TOY_SCALE)
        if p.cnn_backbone:
            kw["n_encoder_layers"] = 2
    elif scale not in (None, "full"):
        raise ValueError(f"unknown scale {scale!r}")
    kw.update(overrides)
    d = kw.get("d_model", 512)
    enc = p.build(d).with_input(input_size if input_size is not None else p.input_size)
    return FullModelSpec(encoder=enc, preset=key, **kw)
