"""Edge-weight memory smoothing across decode steps.

A per-scale memory graph stores the previous step's smoothed edge weights.
Each step the fresh weights are added to the memory slot-by-slot and
re-normalized per node (softmax over the valid neighborhood), the result both
drives the decoder and overwrites the memory. Smoothing starts from an
all-zero memory.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .encoder import ConvLstmCell, EncoderOutput, HiddenGrid
from .grid import SceneGraph
from .tensor import Tensor
from .transformer import (
    EdgeWeights,
    ProjectionSet,
    StreamHeads,
    decode_step,
    edge_weights,
    neighborhood_messages,
)


@dataclass
class MemoryGraph:
    """Neighborhood-weight memory with the same 9-slot layout as EdgeWeights."""

    values: Tensor  # (rows, cols, 9)
    mask: np.ndarray


def init_memory(graph: SceneGraph) -> MemoryGraph:
    mask = graph.mask_grid()
    return MemoryGraph(values=T.zeros(mask.shape), mask=mask)


def smooth(e: EdgeWeights, memory: MemoryGraph) -> tuple[EdgeWeights, MemoryGraph]:
    """Blend fresh edge weights with the memory and overwrite the memory.

    Per node the valid slots of (e + memory) are softmax-normalized, so the
    result stays a distribution; the memory becomes that result.
    """
    if e.values.shape != memory.values.shape or not np.array_equal(e.mask, memory.mask):
        raise ValueError(
            f"edge weights {e.values.shape} and memory {memory.values.shape} belong to different scales"
        )
    blended = T.masked_softmax(e.values + memory.values, e.mask)
    smoothed = EdgeWeights(values=blended, mask=e.mask)
    return smoothed, MemoryGraph(values=blended, mask=e.mask)


@dataclass
class ScaleDecoder:
    """Everything one grid scale needs to decode: cells, projections, heads."""

    graph: SceneGraph
    attention: ProjectionSet
    graph_cell: ConvLstmCell
    graph_heads: StreamHeads
    location_cell: ConvLstmCell
    location_heads: StreamHeads
    use_replay: bool = True
    use_location: bool = True


@dataclass
class DecoderState:
    """Mutable cursor of one decoding rollout on one scale."""

    decoder: ScaleDecoder
    hidden_graph: HiddenGrid
    hidden_location: HiddenGrid | None
    out_graph: Tensor
    out_location: Tensor | None
    memory: MemoryGraph

    def clone(self) -> "DecoderState":
        """Value copy for forked rollouts (states are detached)."""
        return DecoderState(
            decoder=self.decoder,
            hidden_graph=self.hidden_graph.detach_copy(),
            hidden_location=None if self.hidden_location is None else self.hidden_location.detach_copy(),
            out_graph=self.out_graph.detach(),
            out_location=None if self.out_location is None else self.out_location.detach(),
            memory=MemoryGraph(values=self.memory.values.detach(), mask=self.memory.mask),
        )

    def step(self, forced_graph: Tensor | None = None, forced_location: Tensor | None = None):
        """Advance both streams one step; returns (graph_out, location_out).

        Edge weights come from the node stream's hidden state and are shared
        by both streams. Forced tensors replace the fed-back previous outputs
        (teacher forcing or committed beam nodes).
        """
        dec = self.decoder
        msgs = neighborhood_messages(self.hidden_graph.h, dec.attention, dec.graph)
        raw = edge_weights(msgs, dec.graph)
        if dec.use_replay:
            weights, self.memory = smooth(raw, self.memory)
        else:
            weights = raw
        prev_g = forced_graph if forced_graph is not None else self.out_graph
        out_g, self.hidden_graph = decode_step(
            dec.graph_cell, dec.graph_heads, self.hidden_graph, prev_g, weights, dec.graph
        )
        self.out_graph = out_g
        out_l = None
        if dec.use_location:
            prev_l = forced_location if forced_location is not None else self.out_location
            out_l, self.hidden_location = decode_step(
                dec.location_cell, dec.location_heads, self.hidden_location, prev_l, weights, dec.graph
            )
            self.out_location = out_l
        return out_g, out_l, weights


def start_state(decoder: ScaleDecoder, encoded: EncoderOutput, seed_graph: Tensor, seed_location: Tensor) -> DecoderState:
    """Rollout cursor positioned at the end of the observation window."""
    return DecoderState(
        decoder=decoder,
        hidden_graph=encoded.graph,
        hidden_location=encoded.location if decoder.use_location else None,
        out_graph=seed_graph,
        out_location=seed_location if decoder.use_location else None,
        memory=init_memory(decoder.graph),
    )


@dataclass
class RolloutOutputs:
    graph: list[Tensor]
    location: list[Tensor | None]
    weights: list[EdgeWeights]


def replay_decode(
    decoder: ScaleDecoder,
    encoded: EncoderOutput,
    seed_graph: Tensor,
    seed_location: Tensor,
    steps: int,
    forced_graph: list[Tensor] | None = None,
    forced_location: list[Tensor] | None = None,
) -> RolloutOutputs:
    """Decode `steps` steps with memory smoothing, collecting per-step outputs.

    forced_* sequences, when given, supply the fed-back output for steps
    2..steps (the first step always consumes the seeds).
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    state = start_state(decoder, encoded, seed_graph, seed_location)
    outs = RolloutOutputs(graph=[], location=[], weights=[])
    for t in range(steps):
        fg = forced_graph[t - 1] if (t > 0 and forced_graph is not None) else None
        fl = forced_location[t - 1] if (t > 0 and forced_location is not None) else None
        g, l, w = state.step(forced_graph=fg, forced_location=fl)
        outs.graph.append(g)
        outs.location.append(l)
        outs.weights.append(w)
    return outs


def without_replay(decoder: ScaleDecoder) -> ScaleDecoder:
    """Same decoder with memory smoothing disabled."""
    return replace(decoder, use_replay=False)
