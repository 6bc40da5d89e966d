"""Full trainable model: per-scale encoders, decoders, and parameter registry."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoder import (
    ConvLstmCell,
    EncoderOutput,
    assemble_decoder_init,
    encode_graph_stream,
    encode_location_stream,
)
from .grid import (
    SceneGraph,
    TrajectorySample,
    build_scales,
    mean_seg,
    node_index,
    offset_grid,
    one_hot_grid,
    one_hot_seg_embed,
)
from .optim import Parameter
from .replay import ScaleDecoder
from .tensor import Tensor
from .transformer import PointwiseLinear, ProjectionSet, StreamHeads


@dataclass
class ModelConfig:
    scales: tuple[tuple[int, int], ...] = ((12, 6), (6, 3))  # (cols, rows), finest first
    frame_width: float = 192.0
    frame_height: float = 96.0
    classes: int = 8
    hidden_channels: int = 16
    embed_channels: int = 8
    attn_dim: int = 16
    kernel_size: int = 3
    use_location: bool = True
    use_replay: bool = True

    @property
    def state_channels(self) -> int:
        # decoder state = encoder hidden plus appended segmentation channels
        return self.hidden_channels + self.classes

    def single_scale(self) -> "ModelConfig":
        cfg = ModelConfig(**{**self.__dict__})
        cfg.scales = (self.scales[0],)
        return cfg


@dataclass
class ScaleModel:
    graph: SceneGraph
    encoder_graph: ConvLstmCell
    encoder_location: ConvLstmCell
    decoder: ScaleDecoder


@dataclass
class SampleEncoding:
    """Per-scale decoder-ready states and first-step seeds for one sample."""

    encoded: EncoderOutput
    seed_graph: Tensor
    seed_location: Tensor


class Model:
    """Owns all parameters; encoding and decoding entry points per scale."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng([seed, 0])
        self.scales: list[ScaleModel] = []
        hc = cfg.hidden_channels
        d_model = cfg.state_channels
        for idx, graph in enumerate(build_scales(cfg.scales, cfg.frame_width, cfg.frame_height)):
            pre = f"scale{idx}"
            enc_g = ConvLstmCell(f"{pre}.enc_graph", cfg.classes, hc, cfg.kernel_size, rng)
            enc_l = ConvLstmCell(f"{pre}.enc_location", 2, hc, cfg.kernel_size, rng)
            attention = ProjectionSet(f"{pre}.attn", d_model, cfg.attn_dim, rng)
            dec_g = ConvLstmCell(f"{pre}.dec_graph", cfg.embed_channels, d_model, cfg.kernel_size, rng)
            dec_l = ConvLstmCell(f"{pre}.dec_location", cfg.embed_channels, d_model, cfg.kernel_size, rng)
            graph_heads = StreamHeads(
                to_output=PointwiseLinear(f"{pre}.graph_out", d_model, 1, rng, scale=0.1),
                to_input=PointwiseLinear(f"{pre}.graph_in", 1, cfg.embed_channels, rng),
                normalize=True,
            )
            location_heads = StreamHeads(
                to_output=PointwiseLinear(f"{pre}.location_out", d_model, 2, rng, scale=0.1),
                to_input=PointwiseLinear(f"{pre}.location_in", 2, cfg.embed_channels, rng),
                normalize=False,
            )
            decoder = ScaleDecoder(
                graph=graph,
                attention=attention,
                graph_cell=dec_g,
                graph_heads=graph_heads,
                location_cell=dec_l,
                location_heads=location_heads,
                use_replay=cfg.use_replay,
                use_location=cfg.use_location,
            )
            self.scales.append(ScaleModel(graph=graph, encoder_graph=enc_g, encoder_location=enc_l, decoder=decoder))

    def parameters(self) -> list[Parameter]:
        params: list[Parameter] = []
        for sm in self.scales:
            params.extend(sm.encoder_graph.params())
            params.extend(sm.encoder_location.params())
            params.extend(sm.decoder.attention.params())
            params.extend(sm.decoder.graph_cell.params())
            params.extend(sm.decoder.graph_heads.to_output.params())
            params.extend(sm.decoder.graph_heads.to_input.params())
            params.extend(sm.decoder.location_cell.params())
            params.extend(sm.decoder.location_heads.to_output.params())
            params.extend(sm.decoder.location_heads.to_input.params())
        return params

    def encode_sample(self, sample: TrajectorySample) -> list[SampleEncoding]:
        """Run both observation encoders on every scale of one sample."""
        if len(sample.seg_frames) < len(self.scales):
            raise ValueError(
                f"sample {sample.scene_id} carries {len(sample.seg_frames)} scales, model needs {len(self.scales)}"
            )
        out: list[SampleEncoding] = []
        for idx, sm in enumerate(self.scales):
            spec = sm.graph.spec
            frames = sample.seg_frames[idx]
            if len(frames) != len(sample.observed):
                raise ValueError(
                    f"sample {sample.scene_id}: {len(frames)} segmentation frames vs {len(sample.observed)} observations"
                )
            g_inputs = [one_hot_seg_embed(spec, x, y, seg) for (x, y), seg in zip(sample.observed, frames)]
            l_inputs = [offset_grid(spec, x, y) for x, y in sample.observed]
            g_hidden = encode_graph_stream(sm.encoder_graph, g_inputs)
            l_hidden = encode_location_stream(sm.encoder_location, l_inputs)
            encoded = assemble_decoder_init(g_hidden, l_hidden, mean_seg(frames))
            last_x, last_y = sample.observed[-1]
            out.append(
                SampleEncoding(
                    encoded=encoded,
                    seed_graph=one_hot_grid(spec, node_index(spec, last_x, last_y)),
                    seed_location=offset_grid(spec, last_x, last_y),
                )
            )
        return out
