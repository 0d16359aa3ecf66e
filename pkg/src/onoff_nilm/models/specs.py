"""Framework-neutral network descriptions and symbolic shape propagation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from ..exceptions import ConfigurationError

KINDS = ("conv1d", "avgpool1d", "maxpool1d", "transposed_conv1d", "gru", "dense",
         "flatten", "relu", "sigmoid")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel: int = 1
    stride: int = 1
    in_channels: int = 0
    out_channels: int = 0
    hidden_units: int = 0
    returns_sequence: bool = False
    padding: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.kernel < 1 or self.stride < 1:
            raise ConfigurationError(f"{self.kind}: kernel and stride must be >= 1")
        if self.kind in ("conv1d", "transposed_conv1d") and (
                self.in_channels < 1 or self.out_channels < 1):
            raise ConfigurationError(f"{self.kind}: channel counts must be positive")
        if self.kind in ("gru", "dense") and self.hidden_units < 1:
            raise ConfigurationError(f"{self.kind}: hidden_units must be positive")


@dataclass(frozen=True)
class LayerShape:
    """Input and output shape of one layer; ``None`` length means a flat vector."""

    layer: LayerSpec
    in_channels: int
    in_length: int | None
    out_channels: int
    out_length: int | None


@dataclass(frozen=True)
class ModelSpec:
    name: str
    input_len: int
    layers: tuple[LayerSpec, ...]
    n_outputs: int
    shapes: tuple[LayerShape, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.n_outputs < 1:
            raise ConfigurationError("n_outputs must be >= 1")
        if not self.layers or self.layers[-1].kind != "sigmoid":
            raise ConfigurationError(f"{self.name}: final layer must be a sigmoid")
        shapes = propagate_shapes(self.layers, self.input_len)
        last = shapes[-1]
        if last.out_length is not None or last.out_channels != self.n_outputs:
            raise ConfigurationError(
                f"{self.name}: network emits {last.out_channels}x{last.out_length}, "
                f"expected {self.n_outputs} scalars")
        object.__setattr__(self, "shapes", tuple(shapes))

    def to_json(self):
        return json.dumps({
            "name": self.name,
            "input_len": self.input_len,
            "n_outputs": self.n_outputs,
            "layers": [dataclasses.asdict(layer) for layer in self.layers],
        }, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["name"], d["input_len"], tuple(LayerSpec(**x) for x in d["layers"]),
                   d["n_outputs"])

    def length_chain(self, kinds=("avgpool1d", "maxpool1d", "transposed_conv1d")):
        """Input length followed by the output length after each layer of ``kinds``."""
        return [self.input_len] + [s.out_length for s in self.shapes if s.layer.kind in kinds]


def propagate_shapes(layers, input_len, in_channels=1):
    """Walk the layer chain; raise :class:`ConfigurationError` on the first mismatch."""
    c, n = in_channels, input_len
    out = []
    for i, layer in enumerate(layers):
        k, s, p = layer.kernel, layer.stride, layer.padding
        where = f"layer {i} ({layer.kind})"
        if layer.kind in ("conv1d", "transposed_conv1d", "avgpool1d", "maxpool1d", "gru",
                          "flatten") and n is None:
            raise ConfigurationError(f"{where}: needs a sequence input, got a flat vector")
        if layer.kind == "conv1d":
            if layer.in_channels != c:
                raise ConfigurationError(f"{where}: expects {layer.in_channels} channels, got {c}")
            c2, n2 = layer.out_channels, (n + 2 * p - k) // s + 1
        elif layer.kind == "transposed_conv1d":
            if layer.in_channels != c:
                raise ConfigurationError(f"{where}: expects {layer.in_channels} channels, got {c}")
            c2, n2 = layer.out_channels, (n - 1) * s - 2 * p + k
        elif layer.kind in ("avgpool1d", "maxpool1d"):
            c2, n2 = c, (n + 2 * p - k) // s + 1
        elif layer.kind == "gru":
            c2, n2 = layer.hidden_units, (n if layer.returns_sequence else None)
        elif layer.kind == "flatten":
            c2, n2 = c * n, None
        elif layer.kind == "dense":
            if n is not None:
                raise ConfigurationError(f"{where}: dense needs a flat input; add flatten")
            c2, n2 = layer.hidden_units, None
        else:
            c2, n2 = c, n
        if n2 is not None and n2 < 1:
            raise ConfigurationError(f"{where}: sequence length collapses to {n2}")
        out.append(LayerShape(layer, c, n, c2, n2))
        c, n = c2, n2
    return out


def _scaled(width, scale):
    w = int(round(width * scale))
    if w < 1:
        raise ConfigurationError(f"width_scale={scale} leaves a layer with zero units")
    return w


def ctrnn_spec(n_outputs, input_len=2550, width_scale=1.0):
    """Four conv blocks, a transposed conv, a GRU and two wide dense layers.

    Block ``b`` holds two k=3/s=1 'same' convolutions with ``64 * 2**b`` filters
    and a k=2/s=2 average pool. The transposed convolution (k=4, s=2, padding 1)
    doubles the sequence length while cutting 512 channels to 64; the GRU reads
    that sequence and passes its final state to the dense head.
    """
    if n_outputs < 1:
        raise ConfigurationError("n_outputs must be >= 1")
    if not 0 < width_scale <= 1:
        raise ConfigurationError("width_scale must lie in (0, 1]")
    layers = []
    c = 1
    for b in range(4):
        f = _scaled(64 * 2 ** b, width_scale)
        for _ in range(2):
            layers += [LayerSpec("conv1d", 3, 1, c, f, padding=1), LayerSpec("relu")]
            c = f
        layers.append(LayerSpec("avgpool1d", 2, 2))
    t = _scaled(64, width_scale)
    layers += [LayerSpec("transposed_conv1d", 4, 2, c, t, padding=1), LayerSpec("relu")]
    h = _scaled(256, width_scale)
    layers.append(LayerSpec("gru", in_channels=t, hidden_units=h))
    fc = _scaled(4096, width_scale)
    layers += [LayerSpec("dense", hidden_units=fc), LayerSpec("relu"),
               LayerSpec("dense", hidden_units=fc), LayerSpec("relu"),
               LayerSpec("dense", hidden_units=n_outputs), LayerSpec("sigmoid")]
    return ModelSpec("ctrnn", input_len, tuple(layers), n_outputs)


VGG11_CONVS = (64, "M", 128, "M", 256, 256, "M", 512, 512, "M", 512, 512, "M")


def vgg11_1d_spec(n_outputs, input_len=2550, width_scale=1.0):
    """VGG11 configuration "A" with 1-D kernels: 8 convs, 5 max pools, 4096-4096 head."""
    if n_outputs < 1:
        raise ConfigurationError("n_outputs must be >= 1")
    if not 0 < width_scale <= 1:
        raise ConfigurationError("width_scale must lie in (0, 1]")
    layers = []
    c = 1
    for item in VGG11_CONVS:
        if item == "M":
            layers.append(LayerSpec("maxpool1d", 2, 2))
        else:
            f = _scaled(item, width_scale)
            layers += [LayerSpec("conv1d", 3, 1, c, f, padding=1), LayerSpec("relu")]
            c = f
    fc = _scaled(4096, width_scale)
    layers += [LayerSpec("flatten"),
               LayerSpec("dense", hidden_units=fc), LayerSpec("relu"),
               LayerSpec("dense", hidden_units=fc), LayerSpec("relu"),
               LayerSpec("dense", hidden_units=n_outputs), LayerSpec("sigmoid")]
    return ModelSpec("vgg11", input_len, tuple(layers), n_outputs)


BUILDERS = {"ctrnn": ctrnn_spec, "vgg11": vgg11_1d_spec}


def model_spec(name, n_outputs, input_len=2550, width_scale=1.0):
    try:
        builder = BUILDERS[name]
    except KeyError:
        raise ConfigurationError(f"unknown network {name!r}; choose from {sorted(BUILDERS)}") from None
    return builder(n_outputs, input_len, width_scale)
