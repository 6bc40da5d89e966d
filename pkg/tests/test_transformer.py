import numpy as np
import pytest

from tgmr import tensor as T
from tgmr.encoder import ConvLstmCell, HiddenGrid, zero_state
from tgmr.grid import GridSpec, build_scene_graph
from tgmr.tensor import Tensor
from tgmr.transformer import (
    EdgeWeights,
    PointwiseLinear,
    ProjectionSet,
    StreamHeads,
    aggregate,
    attention_message,
    decode_step,
    edge_weights,
    global_message,
    neighborhood_messages,
    total_message,
)

from helpers import finite_difference, rel_error

GRAPH = build_scene_graph(GridSpec(cols=6, rows=3, frame_width=96.0, frame_height=48.0))


def _proj(d=4, da=2, seed=0, name="proj"):
    return ProjectionSet(name, d, da, np.random.default_rng(seed))


def test_attention_message_zero_case():
    proj = _proj()
    proj.query.tensor.data[:] = 0
    proj.key.tensor.data[:] = 0
    proj.value.tensor.data[:] = 0
    assert attention_message(np.ones(4), np.ones(4), proj) == 0.0


def test_attention_message_bias_only():
    proj = _proj()
    proj.query.tensor.data[:] = 0
    proj.key.tensor.data[:] = 0
    proj.value.tensor.data[:] = 0
    proj.bias.tensor.data[:] = 0.5
    # bias alone: message = sum(bias) regardless of the pair
    for seed in range(3):
        rng = np.random.default_rng(seed)
        m = attention_message(rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 4), proj)
        assert m == pytest.approx(0.5 * 4)


def test_attention_message_matches_inline_oracle():
    rng = np.random.default_rng(1)
    proj = _proj(seed=1)
    h_i = rng.uniform(-1, 1, 4)
    h_j = rng.uniform(-1, 1, 4)
    q = h_i @ proj.query.data
    k = h_j @ proj.key.data
    v = h_i @ proj.value.data
    expect = float(np.dot(v[:2], q) + np.dot(v[2:], k) + proj.bias.data.sum())
    assert attention_message(h_i, h_j, proj) == pytest.approx(expect, rel=1e-12)


def test_attention_message_dim_mismatch():
    with pytest.raises(ValueError):
        attention_message(np.ones(3), np.ones(4), _proj())


def test_global_message_cases():
    e = np.zeros(4)
    e[0] = 1.0
    assert global_message(e, e) == 1.0
    f = np.zeros(4)
    f[1] = 1.0
    assert global_message(e, f) == 0.0
    rng = np.random.default_rng(2)
    a, b = rng.uniform(-1, 1, 4), rng.uniform(-1, 1, 4)
    assert global_message(a, b) == global_message(b, a)


def test_total_message():
    assert total_message(0.0, 0.0) == 0.0
    assert total_message(1.5, -0.5) == 1.0
    assert total_message(2.0, 3.0) == total_message(3.0, 2.0)


def test_neighborhood_messages_match_pairwise_oracle():
    rng = np.random.default_rng(3)
    proj = _proj(d=5, da=3, seed=3)
    hidden = Tensor(rng.uniform(-1, 1, size=(3, 6, 5)))
    msgs = neighborhood_messages(hidden, proj, GRAPH)
    flat = hidden.data.reshape(-1, 5)
    for node in [0, 5, 7, 12, 17]:
        r, c = divmod(node, 6)
        for slot in range(9):
            if not GRAPH.neighbor_mask[node, slot]:
                continue
            j = GRAPH.neighbor_index[node, slot]
            expect = total_message(
                attention_message(flat[node], flat[j], proj),
                global_message(flat[node], flat[j]),
            )
            assert msgs.data[r, c, slot] == pytest.approx(expect, rel=1e-10)


def test_edge_weights_uniform_interior_and_corner():
    msgs = T.zeros((3, 6, 9))
    ew = edge_weights(msgs, GRAPH)
    interior = ew.values.data[1, 2]
    assert np.allclose(interior[GRAPH.mask_grid()[1, 2]], 1.0 / 9.0)
    corner = ew.values.data[0, 0]
    valid = GRAPH.mask_grid()[0, 0]
    assert valid.sum() == 4
    assert np.allclose(corner[valid], 0.25)
    assert np.all(corner[~valid] == 0.0)


def test_edge_weights_dominant_message():
    msgs = np.zeros((3, 6, 9))
    msgs[1, 2, 5] = 10.0
    ew = edge_weights(Tensor(msgs), GRAPH)
    assert ew.values.data[1, 2, 5] > 0.99
    assert ew.rows_sum_to_one()


def test_edge_weights_shift_invariance_per_node():
    rng = np.random.default_rng(4)
    msgs = rng.uniform(-2, 2, size=(3, 6, 9))
    base = edge_weights(Tensor(msgs), GRAPH).values.data
    shifted = msgs.copy()
    shifted[2, 3, :] += 7.5  # constant shift of one node's messages
    out = edge_weights(Tensor(shifted), GRAPH).values.data
    assert np.allclose(out, base, atol=1e-12)


def test_aggregate_identity_when_self_weight_one():
    rng = np.random.default_rng(5)
    states = Tensor(rng.uniform(-1, 1, size=(3, 6, 4)))
    vals = np.zeros((3, 6, 9))
    vals[:, :, 4] = 1.0  # self slot
    ew = EdgeWeights(values=Tensor(vals), mask=GRAPH.mask_grid())
    out = aggregate(ew, states, GRAPH)
    assert np.allclose(out.data, states.data)


def test_aggregate_uniform_weights_on_constant_field():
    v = np.full((3, 6, 2), 0.7)
    mask = GRAPH.mask_grid()
    vals = np.where(mask, 1.0, 0.0)
    vals = vals / vals.sum(axis=2, keepdims=True)
    ew = EdgeWeights(values=Tensor(vals), mask=mask)
    out = aggregate(ew, Tensor(v), GRAPH)
    assert np.allclose(out.data, 0.7)


def test_aggregate_matches_double_loop_oracle():
    rng = np.random.default_rng(6)
    states = rng.uniform(-1, 1, size=(3, 6, 4))
    msgs = rng.uniform(-1, 1, size=(3, 6, 9))
    ew = edge_weights(Tensor(msgs), GRAPH)
    out = aggregate(ew, Tensor(states), GRAPH)
    flat = states.reshape(-1, 4)
    w = ew.values.data.reshape(-1, 9)
    for node in range(GRAPH.n_nodes):
        acc = np.zeros(4)
        for slot in range(9):
            if GRAPH.neighbor_mask[node, slot]:
                acc += w[node, slot] * flat[GRAPH.neighbor_index[node, slot]]
        r, c = divmod(node, 6)
        assert np.allclose(out.data[r, c], acc, atol=1e-12)


def test_aggregate_is_convex_combination():
    rng = np.random.default_rng(7)
    states = rng.uniform(-1, 1, size=(3, 6, 3))
    msgs = rng.uniform(-3, 3, size=(3, 6, 9))
    out = aggregate(edge_weights(Tensor(msgs), GRAPH), Tensor(states), GRAPH)
    flat = states.reshape(-1, 3)
    for node in range(GRAPH.n_nodes):
        nbrs = flat[GRAPH.neighbor_index[node][GRAPH.neighbor_mask[node]]]
        r, c = divmod(node, 6)
        assert np.all(out.data[r, c] >= nbrs.min(axis=0) - 1e-12)
        assert np.all(out.data[r, c] <= nbrs.max(axis=0) + 1e-12)


def _decoder_pieces(d_model=4, embed=2, seed=8):
    rng = np.random.default_rng(seed)
    cell = ConvLstmCell("dec", embed, d_model, 3, rng)
    heads = StreamHeads(
        to_output=PointwiseLinear("d1", d_model, 1, rng),
        to_input=PointwiseLinear("d2", 1, embed, rng),
        normalize=True,
    )
    return cell, heads


def test_decode_step_output_is_distribution_over_nodes():
    rng = np.random.default_rng(9)
    cell, heads = _decoder_pieces()
    hidden = HiddenGrid(h=Tensor(rng.uniform(-1, 1, size=(3, 6, 4))), c=Tensor(rng.uniform(-1, 1, size=(3, 6, 4))))
    prev_out = Tensor(rng.uniform(0, 1, size=(3, 6, 1)))
    msgs = Tensor(rng.uniform(-1, 1, size=(3, 6, 9)))
    out, nxt = decode_step(cell, heads, hidden, prev_out, edge_weights(msgs, GRAPH), GRAPH)
    assert out.shape == (3, 6, 1)
    assert abs(out.data.sum() - 1.0) <= 1e-9
    assert nxt.h.shape == (3, 6, 4)


def test_decode_step_zero_output_head_gives_uniform():
    rng = np.random.default_rng(10)
    cell, heads = _decoder_pieces(seed=10)
    heads.to_output.weight.tensor.data[:] = 0.0
    heads.to_output.bias.tensor.data[:] = 0.0
    hidden = HiddenGrid(h=Tensor(rng.uniform(-1, 1, size=(3, 6, 4))), c=Tensor(rng.uniform(-1, 1, size=(3, 6, 4))))
    out, _ = decode_step(cell, heads, hidden, T.zeros((3, 6, 1)), edge_weights(T.zeros((3, 6, 9)), GRAPH), GRAPH)
    assert np.allclose(out.data, 1.0 / 18.0)


def test_decode_step_location_stream_not_normalized():
    rng = np.random.default_rng(11)
    cell = ConvLstmCell("decl", 2, 4, 3, rng)
    heads = StreamHeads(
        to_output=PointwiseLinear("l1", 4, 2, rng),
        to_input=PointwiseLinear("l2", 2, 2, rng),
        normalize=False,
    )
    hidden = HiddenGrid(h=Tensor(rng.uniform(-1, 1, size=(3, 6, 4))), c=Tensor(rng.uniform(-1, 1, size=(3, 6, 4))))
    out, _ = decode_step(cell, heads, hidden, T.zeros((3, 6, 2)), edge_weights(T.zeros((3, 6, 9)), GRAPH), GRAPH)
    assert out.shape == (3, 6, 2)
    assert not np.allclose(out.data.sum(), 1.0)


def test_decode_step_gradient_matches_finite_differences():
    rng = np.random.default_rng(12)
    cell, heads = _decoder_pieces(seed=12)
    proj = _proj(d=4, da=2, seed=12, name="p12")
    h0 = rng.uniform(-1, 1, size=(3, 6, 4))
    c0 = rng.uniform(-1, 1, size=(3, 6, 4))
    p0 = rng.uniform(0, 1, size=(3, 6, 1))
    coeff = rng.uniform(-1, 1, size=(3, 6, 1))
    params = cell.params() + heads.to_output.params() + heads.to_input.params() + proj.params()

    def build():
        hidden = HiddenGrid(h=Tensor(h0), c=Tensor(c0))
        msgs = neighborhood_messages(hidden.h, proj, GRAPH)
        ew = edge_weights(msgs, GRAPH)
        out, nxt = decode_step(cell, heads, hidden, Tensor(p0), ew, GRAPH)
        return T.tsum(T.log_floor(out) * coeff) + T.tsum(nxt.h)

    loss = build()
    T.backward(loss)
    analytic = [p.tensor.grad.copy() for p in params]
    for p in params:
        p.tensor.grad = None

    def value():
        with T.no_grad():
            return build().item()

    numeric = finite_difference(value, [p.tensor.data for p in params])
    for p, a, n in zip(params, analytic, numeric):
        assert rel_error(a, n) <= 1e-4, p.name
