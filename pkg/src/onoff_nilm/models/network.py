"""Translate a :class:`ModelSpec` into a torch module and (de)serialise its weights."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..exceptions import FormatError


class _LastState(nn.Module):
    """GRU over a channels-first sequence; returns the final hidden state or the full sequence."""

    def __init__(self, input_size, hidden, returns_sequence):
        super().__init__()
        self.gru = nn.GRU(input_size, hidden, batch_first=True)
        self.returns_sequence = returns_sequence

    def forward(self, x):
        seq, h = self.gru(x.transpose(1, 2))
        if self.returns_sequence:
            return seq.transpose(1, 2)
        return h[-1]


def _layer(shape):
    layer = shape.layer
    k, s, p = layer.kernel, layer.stride, layer.padding
    if layer.kind == "conv1d":
        return nn.Conv1d(layer.in_channels, layer.out_channels, k, s, p)
    if layer.kind == "transposed_conv1d":
        return nn.ConvTranspose1d(layer.in_channels, layer.out_channels, k, s, p)
    if layer.kind == "avgpool1d":
        return nn.AvgPool1d(k, s, p)
    if layer.kind == "maxpool1d":
        return nn.MaxPool1d(k, s, p)
    if layer.kind == "gru":
        return _LastState(shape.in_channels, layer.hidden_units, layer.returns_sequence)
    if layer.kind == "dense":
        return nn.Linear(shape.in_channels, layer.hidden_units)
    if layer.kind == "flatten":
        return nn.Flatten()
    if layer.kind == "relu":
        return nn.ReLU()
    return nn.Sigmoid()


def init_weights(module):
    """Glorot-uniform kernels, orthogonal GRU recurrences, zero biases.

    Torch's default fan-in scaling shrinks activations roughly tenfold across the
    conv stack, leaving the GRU input bias-dominated and stalling early training.
    """
    for m in module.modules():
        if isinstance(m, (nn.Conv1d, nn.ConvTranspose1d, nn.Linear)):
            nn.init.xavier_uniform_(m.weight)
            nn.init.zeros_(m.bias)
        elif isinstance(m, nn.GRU):
            h = m.hidden_size
            for g in range(3):
                nn.init.xavier_uniform_(m.weight_ih_l0[g * h:(g + 1) * h])
                nn.init.orthogonal_(m.weight_hh_l0[g * h:(g + 1) * h])
            nn.init.zeros_(m.bias_ih_l0)
            nn.init.zeros_(m.bias_hh_l0)


class SpecNetwork(nn.Module):
    """Sequential network; input ``(batch, input_len)`` or ``(batch, 1, input_len)``."""

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        self.body = nn.Sequential(*[_layer(s) for s in spec.shapes])
        init_weights(self)

    def forward(self, x):
        if x.dim() == 2:
            x = x.unsqueeze(1)
        return self.body(x)

    def logits(self, x):
        """Forward pass without the final sigmoid (for a numerically stable loss)."""
        if x.dim() == 2:
            x = x.unsqueeze(1)
        return self.body[:-1](x)


def save_weights(module, path):
    """Single little-endian float32 blob plus a JSON index ``name -> (shape, offset)``."""
    path = Path(path)
    index = {}
    chunks = []
    offset = 0
    for name, tensor in module.state_dict().items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        index[name] = {"shape": list(arr.shape), "offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    path.with_suffix(".bin").write_bytes(b"".join(chunks))
    path.with_suffix(".json").write_text(json.dumps(index, indent=2, sort_keys=True))


def load_weights(module, path):
    path = Path(path)
    try:
        blob = path.with_suffix(".bin").read_bytes()
        index = json.loads(path.with_suffix(".json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable weight store ({exc})") from exc
    state = module.state_dict()
    if set(index) != set(state):
        raise FormatError(f"{path}: tensor names do not match the model spec")
    new = {}
    for name, meta in index.items():
        n = int(np.prod(meta["shape"]))
        arr = np.frombuffer(blob, dtype="<f4", count=n, offset=meta["offset"])
        if list(state[name].shape) != meta["shape"]:
            raise FormatError(f"{path}: {name} has shape {meta['shape']}, spec needs "
                              f"{list(state[name].shape)}")
        new[name] = torch.from_numpy(arr.reshape(meta["shape"]).copy())
    module.load_state_dict(new)
    return module
