import numpy as np
import pytest
import torch

from guidedmotion import decoder as dec
from guidedmotion.config import RunConfig
from guidedmotion.decoder import (
    MotionDecoder,
    build_model,
    collect_map,
    pack_head,
    rollout_controls,
    squash_head,
    unpack_head,
)
from guidedmotion.encoder import SceneEncoding
from guidedmotion.kinematics import ControlSequence, KinematicLimits, KinematicState, rollout
from guidedmotion.nn import seed_parameters
from fixtures import tiny_batch
from gradcheck import check_gradients

LIM = KinematicLimits()


def rand(*shape, seed=0):
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def encoding(b=2, a=3, n_map=6, d1=8, seed=0):
    valid = torch.ones(b, a, dtype=torch.bool)
    valid[0, -1] = False
    map_mask = torch.ones(b, n_map, dtype=torch.bool)
    map_mask[1, -2:] = False
    return SceneEncoding(
        agent_tokens=rand(b, a, d1, seed=seed),
        map_tokens=rand(b, n_map, d1, seed=seed + 1),
        agent_positions=rand(b, a, 2, seed=seed + 2) * 5,
        polyline_centers=rand(b, n_map, 2, seed=seed + 3) * 10,
        agent_valid=valid,
        map_mask=map_mask,
    )


def decoder(d=16, k_layers=6, future_len=5, dyn=3, seed=0, detach=True):
    return seed_parameters(MotionDecoder(8, d, 2, future_len, k_layers, dyn, LIM, detach), seed, torch.float64)


def test_six_layer_decoder_gradients():
    # finite differences see the path through the next layer's query positions
    model = decoder(detach=False)
    enc = encoding()
    points = rand(2, 4, 2, seed=9) * 10
    speed = torch.tensor([3.0, 6.0], dtype=torch.float64)

    def fn():
        out = model(enc, points, speed)
        parts = [out.dense_future.flatten(1)]
        for layer in out.layers:
            parts += [layer.mode_probs.flatten(1), layer.gmm.flatten(1), layer.traj_control.flatten(1)]
        return torch.cat(parts, dim=1)

    first, last = model.layers[0], model.layers[-1]
    probes = [
        enc.agent_tokens, enc.map_tokens, points,
        model.dense_head.layers[1].weight, model.map_proj.layers[0].weight,
        first.static_pos.layers[0].weight, first.self_attn.q_proj.weight,
        first.map_key.weight, last.agent_attn.v_proj.weight, last.fuse.layers[1].weight,
        last.reg_head.layers[1].bias, last.cls_head.layers[0].weight,
    ]
    assert check_gradients(fn, probes) < 1e-3


def test_single_mode_is_valid():
    model = decoder(k_layers=2)
    out = model(encoding(), rand(2, 1, 2), torch.tensor([1.0, 2.0], dtype=torch.float64))
    final = out.final
    assert final.raw.shape == (2, 1, 5, 7)
    assert torch.all(final.mode_probs == 1)
    assert torch.isfinite(final.gmm).all()


def test_zero_parameters_give_valid_distribution():
    model = decoder(k_layers=1)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    out = model(encoding(), rand(2, 4, 2), torch.tensor([2.0, 2.0], dtype=torch.float64))
    gmm = out.final.gmm
    softplus0 = float(np.log(2.0)) + dec.SIGMA_FLOOR
    assert torch.allclose(gmm[..., 2:4], torch.full_like(gmm[..., 2:4], softplus0))
    assert torch.all(gmm[..., 4] == 0)
    assert torch.allclose(out.final.mode_probs, torch.full((2, 4), 0.25, dtype=torch.float64))
    # zero controls from speed 2 give the straight constant-speed line
    line = torch.stack([0.2 * torch.arange(1, 6, dtype=torch.float64), torch.zeros(5, dtype=torch.float64)], -1)
    assert torch.allclose(out.final.traj_control, line.expand(2, 4, 5, 2), atol=1e-14)


def test_squash_ranges_and_soft_limits():
    raw = rand(3, 4, 5, 7) * 50
    gmm, controls = squash_head(raw, LIM)
    assert torch.all(gmm[..., 2:4] > 0)
    assert torch.all(gmm[..., 4].abs() < 1)
    assert torch.all(gmm[..., :2] == dec.MU_SCALE * raw[..., :2])
    assert torch.all(controls[..., 0].abs() <= LIM.a_max)
    assert torch.all(controls[..., 1].abs() <= LIM.yaw_max)
    # identity slope at zero
    small = torch.zeros(1, 7, dtype=torch.float64)
    small[0, 5:] = 1e-6
    _, c = squash_head(small, LIM)
    assert torch.allclose(c, small[:, 5:], rtol=1e-9)
    _, passthrough = squash_head(raw)
    assert torch.equal(passthrough, raw[..., 5:])


def test_pack_unpack_round_trip():
    gmm, controls = rand(2, 3, 5, 5), rand(2, 3, 5, 2, seed=1)
    flat = pack_head(gmm, controls)
    assert flat.shape == (2, 3, 35)
    for t in range(5):
        for c in range(7):
            src = gmm[..., t, c] if c < 5 else controls[..., t, c - 5]
            assert torch.equal(flat[..., t * 7 + c], src)
    g2, c2 = unpack_head(flat, 5)
    assert torch.equal(g2, gmm) and torch.equal(c2, controls)


def test_traj_control_reproduces_rollout():
    rng = np.random.default_rng(0)
    controls = torch.tensor(rng.uniform(-12, 12, (2, 3, 6, 2)))
    speed = torch.tensor([1.5, 7.0], dtype=torch.float64)
    traj = rollout_controls(controls, speed, LIM).numpy()
    for b in range(2):
        for k in range(3):
            ref = rollout(KinematicState(0, 0, 0, float(speed[b])),
                          ControlSequence(controls[b, k, :, 0].numpy(), controls[b, k, :, 1].numpy()), LIM)
            assert np.array_equal(traj[b, k], ref)


def test_dynamic_points_follow_previous_endpoints(monkeypatch):
    model = decoder(k_layers=3)
    seen = []
    for layer in model.layers:
        original = layer.forward

        def spy(*args, _orig=original, **kw):
            seen.append(args[2].clone())
            return _orig(*args, **kw)

        monkeypatch.setattr(layer, "forward", spy)
    points = rand(2, 4, 2) * 10
    out = model(encoding(), points, torch.tensor([1.0, 2.0], dtype=torch.float64))
    assert torch.equal(seen[0], points)
    for j in (1, 2):
        assert torch.equal(seen[j], out.layers[j - 1].gmm[..., -1, :2])


def test_collect_map_matches_sort():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(1, 12))
        count = int(rng.integers(1, n + 1))
        centers = np.round(rng.uniform(-5, 5, (1, n, 2)))
        mask = rng.uniform(size=(1, n)) > 0.2
        anchors = rng.uniform(-5, 5, (1, int(rng.integers(1, 4)), 2))
        got = collect_map(torch.tensor(centers), torch.tensor(mask), torch.tensor(anchors), count)[0].tolist()
        keys = []
        for i in range(n):
            d = min(((centers[0, i] - a) ** 2).sum() for a in anchors[0])
            keys.append((0 if mask[0, i] else 1, d if mask[0, i] else 0.0, i))
        assert got == [i for *_, i in sorted(keys)][:count]


def test_first_layer_collects_around_origin_and_full_count():
    enc = encoding()
    model = decoder(k_layers=1, dyn=6)
    out = model(enc, rand(2, 4, 2), torch.tensor([1.0, 2.0], dtype=torch.float64))
    d = enc.polyline_centers.pow(2).sum(-1).masked_fill(~enc.map_mask, float("inf"))
    assert torch.equal(out.layers[0].map_index, torch.argsort(d, dim=-1, stable=True))


def test_dense_future_shape_and_finite():
    model = decoder(k_layers=1)
    out = model(encoding(), rand(2, 4, 2), torch.tensor([1.0, 2.0], dtype=torch.float64))
    assert out.dense_future.shape == (2, 3, 5, 4)
    assert torch.isfinite(out.dense_future).all()


def test_built_model_runs_on_a_real_batch():
    cfg = RunConfig(d1=8, d=16, heads=2, k=4, knn_k=4, num_dynamic_polylines=3,
                    num_local_attn_layers=1, num_decoder_layers=2, history_len=4, future_len=5)
    model = build_model(cfg)
    batch = tiny_batch(n=2)
    out = model(batch)
    assert len(out.layers) == 2
    assert torch.allclose(out.final.mode_probs.sum(-1), torch.ones(2, dtype=torch.float64), atol=1e-12)
    same = build_model(cfg)
    assert all(torch.equal(a, b) for a, b in zip(model.parameters(), same.parameters()))
