"""Attention message passing over the grid graph and one decoding step.

For every node i and each neighbor j (9 fixed slots, self included) a scalar
message is formed from an attention term and a hidden-state similarity term.
Messages are softmax-normalized per node into edge weights, which drive a
weighted aggregation of neighbor states before the decoder ConvLSTM update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import ConvLstmCell, HiddenGrid, convlstm_step
from .grid import SceneGraph
from .optim import Parameter
from .tensor import Tensor


class ProjectionSet:
    """Query/key/value projections for attention messages.

    query and key map node states (dim d) to attn_dim; value maps to
    2*attn_dim so it can weight the concatenated (query, key) pair
    elementwise; a learned bias of size 2*attn_dim is added before the sum.
    """

    def __init__(self, name: str, state_dim: int, attn_dim: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(state_dim)
        self.state_dim = state_dim
        self.attn_dim = attn_dim
        self.query = Parameter(f"{name}.query", rng.uniform(-bound, bound, size=(state_dim, attn_dim)))
        self.key = Parameter(f"{name}.key", rng.uniform(-bound, bound, size=(state_dim, attn_dim)))
        self.value = Parameter(f"{name}.value", rng.uniform(-bound, bound, size=(state_dim, 2 * attn_dim)))
        self.bias = Parameter(f"{name}.bias", np.zeros(2 * attn_dim))

    def params(self) -> list[Parameter]:
        return [self.query, self.key, self.value, self.bias]


def attention_message(h_i: np.ndarray, h_j: np.ndarray, proj: ProjectionSet) -> float:
    """Scalar attention message from node j to node i.

    sum(value(h_i) * concat(query(h_i), key(h_j)) + bias), computed directly
    on arrays; the model path uses the vectorized neighborhood_messages.
    """
    h_i = np.asarray(h_i, dtype=np.float64)
    h_j = np.asarray(h_j, dtype=np.float64)
    if h_i.shape != (proj.state_dim,) or h_j.shape != (proj.state_dim,):
        raise ValueError(f"state vectors must have dim {proj.state_dim}, got {h_i.shape} and {h_j.shape}")
    q = h_i @ proj.query.data
    k = h_j @ proj.key.data
    v = h_i @ proj.value.data
    return float(np.sum(v * np.concatenate([q, k]) + proj.bias.data))


def global_message(h_i: np.ndarray, h_j: np.ndarray) -> float:
    """Hidden-state similarity of a node pair: plain inner product."""
    h_i = np.asarray(h_i, dtype=np.float64)
    h_j = np.asarray(h_j, dtype=np.float64)
    if h_i.shape != h_j.shape:
        raise ValueError(f"state dims differ: {h_i.shape} vs {h_j.shape}")
    return float(h_i @ h_j)


def total_message(attn: float, glob: float) -> float:
    return attn + glob


def neighborhood_messages(hidden: Tensor, proj: ProjectionSet, graph: SceneGraph) -> Tensor:
    """Total messages for every (node, neighbor-slot) pair as (rows, cols, 9).

    Entries at invalid border slots are meaningless and must be consumed
    together with the graph's validity mask.
    """
    rows, cols = graph.spec.rows, graph.spec.cols
    d = hidden.shape[2]
    flat = T.reshape(hidden, (rows * cols, d))
    q = T.matmul(flat, proj.query.tensor)
    k = T.matmul(flat, proj.key.tensor)
    v = T.matmul(flat, proj.value.tensor)
    da = proj.attn_dim
    v_q = T.narrow(v, 1, 0, da)
    v_k = T.narrow(v, 1, da, da)
    # receiver term: sum(value_q * query) per node, shared by all its slots
    self_term = T.tsum(v_q * q, axis=1, keepdims=True)
    # neighbor terms gathered per slot
    k_nb = T.gather_rows(k, graph.neighbor_index)  # (N, 9, da)
    cross = T.tsum(T.reshape(v_k, (rows * cols, 1, da)) * k_nb, axis=2)
    h_nb = T.gather_rows(flat, graph.neighbor_index)  # (N, 9, d)
    similarity = T.tsum(T.reshape(flat, (rows * cols, 1, d)) * h_nb, axis=2)
    total = self_term + cross + similarity + T.tsum(proj.bias.tensor)
    return T.reshape(total, (rows, cols, 9))


@dataclass
class EdgeWeights:
    """Per-node weights over the 9 neighborhood slots; invalid slots are 0."""

    values: Tensor  # (rows, cols, 9)
    mask: np.ndarray  # (rows, cols, 9) bool

    def rows_sum_to_one(self, tol: float = 1e-6) -> bool:
        sums = self.values.data.sum(axis=2)
        return bool(np.all(np.abs(sums - 1.0) <= tol))


def edge_weights(messages: Tensor, graph: SceneGraph) -> EdgeWeights:
    """Softmax the per-node messages over their valid neighborhood slots."""
    mask = graph.mask_grid()
    if messages.shape != mask.shape:
        raise ValueError(f"messages shape {messages.shape} does not match graph layout {mask.shape}")
    return EdgeWeights(values=T.masked_softmax(messages, mask), mask=mask)


def aggregate(weights: EdgeWeights, states: Tensor, graph: SceneGraph) -> Tensor:
    """Weighted sum of neighbor states per node: (rows, cols, d) output."""
    rows, cols = graph.spec.rows, graph.spec.cols
    if states.shape[:2] != (rows, cols):
        raise ValueError(f"states shape {states.shape} does not match grid {rows}x{cols}")
    if weights.values.shape != (rows, cols, 9):
        raise ValueError(f"weights shape {weights.values.shape} does not match grid {rows}x{cols}")
    d = states.shape[2]
    n = rows * cols
    flat = T.reshape(states, (n, d))
    nb = T.gather_rows(flat, graph.neighbor_index)  # (N, 9, d)
    w = T.reshape(weights.values, (n, 9, 1))
    mixed = T.tsum(w * nb, axis=1)  # masked slots carry weight 0
    return T.reshape(mixed, (rows, cols, d))


class PointwiseLinear:
    """1x1 linear map over the channel axis of a grid tensor."""

    def __init__(self, name: str, in_channels: int, out_channels: int, rng: np.random.Generator, scale: float = 1.0):
        bound = scale / math.sqrt(in_channels)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.weight = Parameter(f"{name}.weight", rng.uniform(-bound, bound, size=(in_channels, out_channels)))
        self.bias = Parameter(f"{name}.bias", np.zeros(out_channels))

    def __call__(self, x: Tensor) -> Tensor:
        rows, cols, ch = x.shape
        if ch != self.in_channels:
            raise ValueError(f"pointwise linear expects {self.in_channels} channels, got {ch}")
        flat = T.reshape(x, (rows * cols, ch))
        out = T.matmul(flat, self.weight.tensor) + self.bias.tensor
        return T.reshape(out, (rows, cols, self.out_channels))

    def params(self) -> list[Parameter]:
        return [self.weight, self.bias]


@dataclass
class StreamHeads:
    """Output and input projections around the decoder cell.

    to_output maps hidden channels to the stream's output channels (1 for the
    node stream, 2 for the offset stream); to_input embeds an output back into
    the decoder's input channels. normalize turns the 1-channel output into a
    probability distribution over all grid nodes.
    """

    to_output: PointwiseLinear
    to_input: PointwiseLinear
    normalize: bool


def decode_step(
    cell: ConvLstmCell,
    heads: StreamHeads,
    prev_hidden: HiddenGrid,
    prev_output: Tensor,
    weights: EdgeWeights,
    graph: SceneGraph,
) -> tuple[Tensor, HiddenGrid]:
    """Advance one stream by one time step.

    The previous hidden grid is aggregated with the edge weights and becomes
    the recurrent state; the embedded previous output is the cell input. The
    step's output is read from the new hidden state.
    """
    mixed = aggregate(weights, prev_hidden.h, graph)
    state = HiddenGrid(h=mixed, c=prev_hidden.c)
    x = heads.to_input(prev_output)
    nxt = convlstm_step(cell, x, state)
    raw = heads.to_output(nxt.h)
    if heads.normalize:
        rows, cols, _ = raw.shape
        flat = T.reshape(raw, (rows * cols, 1))
        out = T.reshape(T.softmax(flat, axis=0), (rows, cols, 1))
    else:
        out = raw
    return out, nxt
