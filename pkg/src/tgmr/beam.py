"""Diverse beam search over per-step node distributions.

Scoring: a candidate extending beam k to node i gets
    score = C_k + log p_k(i) - diversity_rate * occupancy(i)
where occupancy(i) counts how many higher-ranked beams (ranked by current
score, ties to the earlier beam) have already been greedily extended to node
i within the step. With diversity_rate 0 this is plain top-K search.

Tie-breaking is total-ordered and stable: candidates with equal scores prefer
the lower node index, then the lower-ranked (earlier) beam. Tests rely on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import EncoderOutput
from .grid import cell_center
from .replay import DecoderState, ScaleDecoder, start_state
from .tensor import Tensor


@dataclass
class Beam:
    """One partial trajectory: committed nodes, accumulated log score, and
    the rollout state owned by this beam."""

    nodes: list[int] = field(default_factory=list)
    score: float = 0.0
    state: DecoderState | None = None
    offsets: list[tuple[float, float]] = field(default_factory=list)  # normalized, per committed node
    parent: int = -1  # rank of the parent beam within the step that produced this


def beam_step(beams: list[Beam], node_dists: list[np.ndarray], diversity_rate: float, k: int | None = None) -> list[Beam]:
    """Extend beams one node using their per-beam node distributions.

    node_dists[b] is a length-N probability vector for beams[b]. Returns the
    top k extensions (default: keep the incoming beam count), best first.
    The returned beams reference their parent's state; callers that fork
    rollouts clone the state afterwards via each beam's `parent` index.
    """
    if len(beams) != len(node_dists):
        raise ValueError(f"{len(beams)} beams but {len(node_dists)} distributions")
    if k is None:
        k = len(beams)
    order = sorted(range(len(beams)), key=lambda b: (-beams[b].score, b))
    n_nodes = len(node_dists[0])
    occupancy = np.zeros(n_nodes)
    candidates: list[tuple[float, int, int]] = []  # (score, node, rank)
    for rank, b in enumerate(order):
        dist = np.asarray(node_dists[b], dtype=np.float64)
        if dist.shape != (n_nodes,):
            raise ValueError(f"distribution for beam {b} has shape {dist.shape}, expected ({n_nodes},)")
        if not np.any(dist > 0.0):
            raise ValueError(f"beam {b}: distribution assigns zero probability everywhere")
        with np.errstate(divide="ignore"):
            logs = np.log(dist)
        scores = beams[b].score + logs - diversity_rate * occupancy
        finite = np.where(np.isfinite(scores))[0]
        greedy = finite[np.argmax(scores[finite])]  # argmax takes the lowest index on ties
        occupancy[greedy] += 1.0
        for node in finite:
            candidates.append((float(scores[node]), int(node), rank))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    selected = candidates[: min(k, len(candidates))]
    out: list[Beam] = []
    for score, node, rank in selected:
        parent = beams[order[rank]]
        out.append(
            Beam(
                nodes=parent.nodes + [node],
                score=score,
                state=parent.state,
                offsets=list(parent.offsets),
                parent=order[rank],
            )
        )
    return out


@dataclass
class PredictionSet:
    """K decoded futures in pixel coordinates with their final log scores."""

    trajectories: np.ndarray  # (K, steps, 2)
    scores: np.ndarray  # (K,)
    scale: tuple[int, int]  # (cols, rows)
    scene_id: str = ""

    @property
    def k(self) -> int:
        return self.trajectories.shape[0]


def _coordinates(decoder: ScaleDecoder, beam: Beam) -> np.ndarray:
    """Cell centers of committed nodes plus the clamped per-step offsets."""
    spec = decoder.graph.spec
    pts = np.zeros((len(beam.nodes), 2))
    for t, node in enumerate(beam.nodes):
        cx, cy = cell_center(spec, node)
        ox, oy = beam.offsets[t] if beam.offsets else (0.0, 0.0)
        ox = float(np.clip(ox, -0.5, 0.5)) * spec.cell_width
        oy = float(np.clip(oy, -0.5, 0.5)) * spec.cell_height
        pts[t, 0] = np.clip(cx + ox, 0.0, spec.frame_width - 1e-9)
        pts[t, 1] = np.clip(cy + oy, 0.0, spec.frame_height - 1e-9)
    return pts


def decode_beams(
    decoder: ScaleDecoder,
    encoded: EncoderOutput,
    seed_graph: Tensor,
    seed_location: Tensor,
    k: int,
    diversity_rate: float,
    steps: int,
) -> PredictionSet:
    """Beam-search decode one scale into k trajectories."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    n_nodes = decoder.graph.n_nodes
    if k > n_nodes ** steps:
        raise ValueError(f"k={k} exceeds the {n_nodes}^{steps} reachable sequences")
    with T.no_grad():
        root = Beam(state=start_state(decoder, encoded, seed_graph, seed_location))
        beams = [root]
        for _ in range(steps):
            dists = []
            loc_grids = []
            for b in beams:
                g, l, _ = b.state.step(
                    forced_graph=_node_grid(decoder, b.nodes[-1]) if b.nodes else None,
                    forced_location=None,
                )
                dists.append(g.data.reshape(-1))
                loc_grids.append(None if l is None else l.data.reshape(-1, 2))
            new_beams = beam_step(beams, dists, diversity_rate, k=k)
            for nb in new_beams:
                node = nb.nodes[-1]
                loc = loc_grids[nb.parent]
                nb.offsets.append((0.0, 0.0) if loc is None else (float(loc[node, 0]), float(loc[node, 1])))
            _fork_states(beams, new_beams)
            beams = new_beams
    trajs = np.stack([_coordinates(decoder, b) for b in beams])
    scores = np.array([b.score for b in beams])
    spec = decoder.graph.spec
    return PredictionSet(trajectories=trajs, scores=scores, scale=(spec.cols, spec.rows))


def _node_grid(decoder: ScaleDecoder, node: int) -> Tensor:
    from .grid import one_hot_grid

    return one_hot_grid(decoder.graph.spec, node)


def _fork_states(parents: list[Beam], children: list[Beam]) -> None:
    """Give each child its own rollout state; single children keep the parent's."""
    by_parent: dict[int, list[Beam]] = {}
    for c in children:
        by_parent.setdefault(c.parent, []).append(c)
    for pidx, kids in by_parent.items():
        state = parents[pidx].state
        kids[0].state = state
        for extra in kids[1:]:
            extra.state = state.clone()


def decode_multi(
    decoders: list[ScaleDecoder],
    encodings: list,
    k: int,
    diversity_rate: float,
    steps: int,
) -> PredictionSet:
    """Decode every scale and report the finest scale's predictions."""
    per_scale = [
        decode_beams(dec, enc.encoded, enc.seed_graph, enc.seed_location, k, diversity_rate, steps)
        for dec, enc in zip(decoders, encodings)
    ]
    return select_scale(per_scale)


def select_scale(outputs: list[PredictionSet]) -> PredictionSet:
    """The finest grid (most nodes) is the reported one; coarse scales only
    supervise training."""
    if not outputs:
        raise ValueError("no per-scale outputs to select from")
    return max(outputs, key=lambda p: p.scale[0] * p.scale[1])
