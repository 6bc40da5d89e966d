"""Convolutional LSTM cells and the two observation encoders.

The node-level stream consumes one-hot-times-segmentation grids; the offset
stream consumes two-channel cell-offset grids. Both run through the same
rollout machinery and differ only in their cells and inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .grid import SegMap
from .optim import Parameter
from .tensor import Tensor


class ConvLstmCell:
    """Single ConvLSTM layer with a fused gate convolution.

    Gate order along the output channel axis is input, forget, output,
    candidate. Same padding keeps the spatial size; the forget gate bias
    starts at 1.
    """

    def __init__(self, name: str, in_channels: int, hidden_channels: int, kernel_size: int, rng: np.random.Generator):
        if kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {kernel_size}")
        self.name = name
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.kernel_size = kernel_size
        fan_in = kernel_size * kernel_size * (in_channels + hidden_channels)
        bound = 1.0 / math.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(kernel_size, kernel_size, in_channels + hidden_channels, 4 * hidden_channels))
        b = np.zeros(4 * hidden_channels)
        b[hidden_channels:2 * hidden_channels] = 1.0
        self.weight = Parameter(f"{name}.gates.weight", w)
        self.bias = Parameter(f"{name}.gates.bias", b)

    def params(self) -> list[Parameter]:
        return [self.weight, self.bias]


@dataclass
class HiddenGrid:
    """Spatial recurrent state: hidden and cell grids of equal shape."""

    h: Tensor
    c: Tensor

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise ValueError(f"hidden/cell shape mismatch: {self.h.shape} vs {self.c.shape}")

    @property
    def channels(self) -> int:
        return self.h.shape[2]

    def detach_copy(self) -> "HiddenGrid":
        return HiddenGrid(h=self.h.detach(), c=self.c.detach())


def zero_state(rows: int, cols: int, channels: int) -> HiddenGrid:
    return HiddenGrid(h=T.zeros((rows, cols, channels)), c=T.zeros((rows, cols, channels)))


def convlstm_step(cell: ConvLstmCell, x: Tensor, state: HiddenGrid) -> HiddenGrid:
    """One gate update; spatial dims are preserved."""
    if x.shape[:2] != state.h.shape[:2]:
        raise ValueError(f"input spatial dims {x.shape[:2]} do not match state {state.h.shape[:2]}")
    if x.shape[2] != cell.in_channels or state.channels != cell.hidden_channels:
        raise ValueError(
            f"channel mismatch for {cell.name}: input {x.shape[2]} (cell wants {cell.in_channels}), "
            f"state {state.channels} (cell wants {cell.hidden_channels})"
        )
    hc = cell.hidden_channels
    stacked = T.concat([x, state.h], axis=2)
    gates = T.conv2d(stacked, cell.weight.tensor, cell.bias.tensor)
    i = T.sigmoid(T.narrow(gates, 2, 0, hc))
    f = T.sigmoid(T.narrow(gates, 2, hc, hc))
    o = T.sigmoid(T.narrow(gates, 2, 2 * hc, hc))
    g = T.tanh(T.narrow(gates, 2, 3 * hc, hc))
    c = f * state.c + i * g
    h = o * T.tanh(c)
    return HiddenGrid(h=h, c=c)


def run_convlstm(cell: ConvLstmCell, inputs: list[Tensor]) -> HiddenGrid:
    """Roll a cell over a sequence from the all-zero state."""
    if not inputs:
        raise ValueError("encoder sequence is empty")
    rows, cols, _ = inputs[0].shape
    state = zero_state(rows, cols, cell.hidden_channels)
    for x in inputs:
        state = convlstm_step(cell, x, state)
    return state


def encode_graph_stream(cell: ConvLstmCell, inputs: list[Tensor]) -> HiddenGrid:
    """Final hidden state of the node-level stream over the observed frames."""
    return run_convlstm(cell, inputs)


def encode_location_stream(cell: ConvLstmCell, inputs: list[Tensor]) -> HiddenGrid:
    """Final hidden state of the offset stream over the observed frames."""
    return run_convlstm(cell, inputs)


@dataclass
class EncoderOutput:
    """Decoder-ready states: each stream's h carries the mean segmentation
    appended on the channel axis; c keeps its original channels plus zeros."""

    graph: HiddenGrid
    location: HiddenGrid


def _append_channels(state: HiddenGrid, extra: Tensor) -> HiddenGrid:
    h = T.concat([state.h, extra], axis=2)
    c = T.concat([state.c, T.zeros((state.c.shape[0], state.c.shape[1], extra.shape[2]))], axis=2)
    return HiddenGrid(h=h, c=c)


def assemble_decoder_init(g_hidden: HiddenGrid, l_hidden: HiddenGrid, s_bar: SegMap) -> EncoderOutput:
    """Concatenate the averaged segmentation onto both streams' hidden states."""
    rows, cols = g_hidden.h.shape[:2]
    if s_bar.values.shape[:2] != (rows, cols) or l_hidden.h.shape[:2] != (rows, cols):
        raise ValueError(
            f"spatial mismatch: graph {g_hidden.h.shape[:2]}, location {l_hidden.h.shape[:2]}, "
            f"segmentation {s_bar.values.shape[:2]}"
        )
    extra = Tensor(s_bar.values)
    return EncoderOutput(graph=_append_channels(g_hidden, extra), location=_append_channels(l_hidden, extra))
