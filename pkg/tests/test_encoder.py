import warnings

import numpy as np
import pytest
import torch

from guidedmotion.encoder import (
    CascadeFusion,
    LocalAttentionStack,
    MultiScaleGRU,
    PolylineEncoder,
    SceneEncoder,
    knn_mask,
)
from guidedmotion.nn import MCG, seed_parameters
from fixtures import tiny_batch
from gradcheck import check_gradients
from oracles import knn_sets


def rand(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def build(module, seed=0):
    return seed_parameters(module, seed, torch.float64)


def test_msg_batch_equivariance_and_short_input():
    msg = build(MultiScaleGRU(3, 8))
    x = rand(5, 6, 3)
    perm = torch.tensor([3, 0, 4, 1, 2])
    assert torch.allclose(msg(x)[perm], msg(x[perm]), atol=1e-14)
    const = torch.ones(2, 6, 3, dtype=torch.float64)
    assert torch.isfinite(msg(const)).all()
    one = msg(x[:, :1])
    assert torch.isfinite(one).all() and torch.equal(one, msg(x[:, :1]))


def test_msg_branches_match_a_loop():
    msg = build(MultiScaleGRU(3, 4))
    x = rand(2, 5, 3)
    lasts = []
    for g, conv in enumerate(msg.convs):
        h_prev = [torch.zeros(2, 4, dtype=torch.float64) for _ in range(2)]
        seq = torch.relu(conv(x))
        for t in range(5):
            inp = seq[:, t]
            for layer in range(2):
                w_in, w_h = msg.gru.w_in[layer][g], msg.gru.w_h[layer][g]
                b_in, b_h = msg.gru.b_in[layer][g, 0], msg.gru.b_h[layer][g, 0]
                gi, gh = inp @ w_in + b_in, h_prev[layer] @ w_h + b_h
                r = torch.sigmoid(gi[:, :4] + gh[:, :4])
                z = torch.sigmoid(gi[:, 4:8] + gh[:, 4:8])
                n = torch.tanh(gi[:, 8:] + r * gh[:, 8:])
                h_prev[layer] = (1 - z) * n + z * h_prev[layer]
                inp = h_prev[layer]
        lasts.append(h_prev[1])
    ref = msg.out(torch.cat(lasts, dim=-1))
    assert torch.allclose(msg(x), ref, atol=1e-13)


@pytest.mark.parametrize("shape", [(1, 2, 3), (3, 4, 3), (2, 2, 5, 3)])
def test_msg_gradients(shape):
    msg = build(MultiScaleGRU(3, 4))
    x = rand(*shape)
    assert check_gradients(lambda: msg(x), [x, *msg.parameters()]) < 1e-4


def test_single_scale_variant():
    single = build(MultiScaleGRU(3, 4, kernels=(3,)))
    assert len(single.convs) == 1 and single.convs[0].kernel_size == 3
    assert single(rand(2, 5, 3)).shape == (2, 4)


def test_pointnet_invariances_and_loop():
    enc = build(PolylineEncoder(7, 8))
    pts = rand(3, 5, 7)
    out = enc(pts)
    assert torch.allclose(enc(pts[:, torch.tensor([4, 2, 0, 1, 3])]), out, atol=0)
    dup = torch.cat([pts, pts[:, :2]], dim=1)
    assert torch.equal(enc(dup), out)
    for i in range(3):
        ref = torch.stack([enc.mlp(pts[i, j]) for j in range(5)]).max(dim=0).values
        assert torch.allclose(out[i], ref, atol=1e-14)
    assert check_gradients(lambda: enc(pts), [pts, *enc.parameters()]) < 1e-4


def test_fusion_runs_on_zero_relative_tokens():
    fusion = build(CascadeFusion(8))
    a, m = rand(2, 3, 8), rand(2, 4, 8, seed=1)
    agents, maps = fusion(a, torch.zeros(2, 4, 8, dtype=torch.float64), m)
    assert agents.shape == (2, 3, 8) and maps.shape == (2, 4, 8)
    assert torch.isfinite(maps).all()


def test_cascade_stage_two_ablation_leaves_stage_one():
    fusion = build(CascadeFusion(8))
    a, r, m = rand(2, 3, 8), rand(2, 4, 8, seed=1), rand(2, 4, 8, seed=2)
    _, maps, stages = fusion(a, r, m, return_stages=True)
    ablated = build(CascadeFusion(8))
    ablated.stage2 = MCG(8, num_layers=0)
    _, maps_ab, stages_ab = ablated(a, r, m, return_stages=True)
    assert torch.equal(stages["a2"], stages_ab["a2"])
    assert not torch.allclose(maps, maps_ab)
    assert torch.equal(maps, stages["m3"] + stages["r3"])


def test_fusion_gradients():
    fusion = build(CascadeFusion(4, num_layers=1))
    a, r, m = rand(2, 2, 4), rand(2, 3, 4, seed=1), rand(2, 3, 4, seed=2)
    mask = torch.tensor([[True, True, False], [True, True, True]])
    fn = lambda: torch.cat(fusion(a, r, m, None, mask), dim=-2)  # noqa: E731
    assert check_gradients(fn, [a, r, m, *fusion.parameters()]) < 1e-4


def test_knn_matches_exhaustive_sort():
    rng = np.random.default_rng(0)
    for trial in range(30):
        n = int(rng.integers(1, 20))
        k = int(rng.integers(1, n + 1))
        pos = rng.uniform(-10, 10, (n, 2))
        if trial % 3 == 0:
            pos = np.round(pos)  # force distance ties
        mask = knn_mask(torch.tensor(pos)[None], torch.ones(1, n, dtype=torch.bool), k)[0]
        ref = knn_sets(pos.tolist(), k)
        assert [set(np.flatnonzero(row).tolist()) for row in mask.numpy()] == ref


def test_knn_isolated_token_attends_itself():
    pos = torch.tensor([[[0.0, 0.0], [1.0, 0.0], [100.0, 100.0]]], dtype=torch.float64)
    mask = knn_mask(pos, torch.ones(1, 3, dtype=torch.bool), 1)
    assert torch.equal(mask[0], torch.eye(3, dtype=torch.bool))


def test_full_neighborhood_equals_full_attention():
    stack = build(LocalAttentionStack(8, 2, num_layers=2, knn_k=5))
    x, pos = rand(1, 5, 8), rand(1, 5, 2, seed=1) * 10
    valid = torch.ones(1, 5, dtype=torch.bool)
    out = stack(x, pos, valid)
    from guidedmotion.nn import sinusoidal_pe

    pe = sinusoidal_pe(pos, 8)
    ref = x
    for layer in stack.layers:
        qk = ref + pe
        ref = layer.norm1(ref + layer.attn(qk, qk, ref))
        ref = layer.norm2(ref + layer.ffn(ref))
    assert torch.allclose(out, ref, atol=1e-13)


def test_values_carry_no_positional_encoding():
    stack = build(LocalAttentionStack(8, 2, num_layers=1, knn_k=4))
    with torch.no_grad():
        stack.layers[0].attn.q_proj.weight.zero_()
        stack.layers[0].attn.q_proj.bias.zero_()
    x = rand(1, 4, 8)
    valid = torch.ones(1, 4, dtype=torch.bool)
    # uniform weights over the same neighbor set: only values reach the output
    a = stack(x, rand(1, 4, 2, seed=1), valid)
    b = stack(x, rand(1, 4, 2, seed=2) * 50, valid)
    assert torch.allclose(a, b, atol=1e-13)


def test_knn_larger_than_token_count_warns_and_clamps():
    stack = build(LocalAttentionStack(8, 2, num_layers=1, knn_k=10))
    x, pos = rand(1, 3, 8), rand(1, 3, 2)
    with pytest.warns(UserWarning, match="clamping"):
        out = stack(x, pos, torch.ones(1, 3, dtype=torch.bool))
    assert torch.isfinite(out).all()


def test_encoder_on_degenerate_inputs():
    enc = build(SceneEncoder(d1=8, heads=2, knn_k=4, num_local_attn_layers=1))
    batch = tiny_batch(n=1, agent_count=1, max_polylines=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        out = enc(batch)
    assert out.agent_tokens.shape == (1, 1, 8) and out.map_tokens.shape == (1, 1, 8)
    assert torch.isfinite(out.agent_tokens).all() and torch.isfinite(out.map_tokens).all()


def test_encoder_end_to_end_gradients():
    enc = build(SceneEncoder(d1=8, heads=2, knn_k=4, num_mcg_layers=2, num_local_attn_layers=4))
    batch = tiny_batch(n=2, history_len=3, max_polylines=4)

    def fn():
        out = enc(batch)
        return torch.cat([out.agent_tokens, out.map_tokens], dim=-2)

    probes = [
        batch.agents, batch.relative, batch.map,
        enc.agent_encoder.convs[1].weight, enc.agent_encoder.gru.w_h[1],
        enc.relative_encoder.out.layers[0].weight, enc.polyline_encoder.mlp.layers[1].weight,
        enc.fusion.stage3.layers[1].x_gate.layers[0].weight,
        enc.local_attention.layers[0].attn.k_proj.weight, enc.local_attention.layers[3].ffn.layers[1].bias,
    ]
    assert check_gradients(fn, probes) < 1e-3
