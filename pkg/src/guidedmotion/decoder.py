"""Motion decoder driven by intention-point queries.

Each layer lets the K mode queries talk to each other (keyed by the static
intention points), then attends to agent tokens and to the map polylines
nearest the previous layer's predictions (keyed by the dynamic query
positions). Every layer emits a full prediction: mode probabilities, per-step
bivariate Gaussians and control commands, the latter rolled out by the
clamped kinematic model.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .batch import DTYPES
from .encoder import SceneEncoder
from .kinematics import KinematicLimits, integrate
from .nn import MLP, LayerNorm, Linear, Module, MultiHeadAttention, seed_parameters, sinusoidal_pe

SIGMA_FLOOR = 1e-3
RHO_SCALE = 0.99
# the head emits mean offsets in tens of metres; scaling the raw channel keeps
# its gradient on the same order as the control channels
MU_SCALE = 10.0
HEAD_CHANNELS = 7  # mu_x, mu_y, sigma_x, sigma_y, rho, accel, yaw_rate


@dataclass
class LayerPrediction:
    mode_logits: torch.Tensor  # [B, K]
    mode_probs: torch.Tensor  # [B, K]
    gmm: torch.Tensor  # [B, K, T, 5]
    controls: torch.Tensor  # [B, K, T, 2]
    traj_control: torch.Tensor  # [B, K, T, 2]
    raw: torch.Tensor  # [B, K, T, 7] head output before squashing
    map_index: torch.Tensor  # [B, L_dyn] polylines attended to in this layer

    @property
    def traj_gmm(self) -> torch.Tensor:
        return self.gmm[..., :2]


@dataclass
class DecoderOutput:
    layers: list[LayerPrediction]
    dense_future: torch.Tensor  # [B, A, T, 4]

    @property
    def final(self) -> LayerPrediction:
        return self.layers[-1]


def pack_head(gmm: torch.Tensor, controls: torch.Tensor) -> torch.Tensor:
    """``[..., T, 5]`` and ``[..., T, 2]`` into the flat ``[..., T*7]`` head layout."""
    return torch.cat([gmm, controls], dim=-1).flatten(-2)


def unpack_head(flat: torch.Tensor, steps: int) -> tuple[torch.Tensor, torch.Tensor]:
    per_step = flat.unflatten(-1, (steps, HEAD_CHANNELS))
    return per_step[..., :5], per_step[..., 5:]


def squash_head(raw: torch.Tensor, lim: KinematicLimits | None = None):
    """Map raw ``[..., 7]`` head values to valid GMM parameters and controls.

    With ``lim`` the controls are squashed into the limit box by a scaled tanh,
    so the clamp inside the rollout never cuts their gradient; without it they
    are passed through raw.
    """
    mu = MU_SCALE * raw[..., 0:2]
    sigma = F.softplus(raw[..., 2:4]) + SIGMA_FLOOR
    rho = RHO_SCALE * torch.tanh(raw[..., 4:5])
    controls = raw[..., 5:7]
    if lim is not None:
        lo = raw.new_tensor([lim.a_min, lim.yaw_min])
        hi = raw.new_tensor([lim.a_max, lim.yaw_max])
        mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
        controls = mid + half * torch.tanh((controls - mid) / half)
    return torch.cat([mu, sigma, rho], dim=-1), controls


def rollout_controls(controls: torch.Tensor, speed: torch.Tensor, lim: KinematicLimits):
    """Integrate ``[B, K, T, 2]`` controls from ``(0, 0, heading 0, speed)`` per target."""
    s0 = speed.reshape(-1, *([1] * (controls.dim() - 3))).expand(controls.shape[:-2])
    zero = torch.zeros_like(s0)
    return integrate(controls[..., 0], controls[..., 1], zero, zero, zero, s0, lim)


def collect_map(centers, map_mask, anchors, count: int):
    """Indices ``[B, count]`` of the polylines whose center is nearest any anchor point.

    ``anchors`` is ``[B, M, 2]``; padded polylines sort last. Ties go to the lower index.
    """
    with torch.no_grad():
        diff = centers.unsqueeze(-2) - anchors.unsqueeze(-3)  # [B, L, M, 2]
        dist = (diff * diff).sum(-1).min(dim=-1).values
        dist = dist.masked_fill(~map_mask, float("inf"))
        order = torch.argsort(dist, dim=-1, stable=True)
    return order[..., :count]


def _gather(x, index):
    """Rows of ``x [B, L, ...]`` at ``index [B, n]``."""
    expand = index.reshape(*index.shape, *([1] * (x.dim() - 2))).expand(*index.shape, *x.shape[2:])
    return torch.gather(x, 1, expand)


class DecoderLayer(Module):
    def __init__(self, d: int, heads: int, future_len: int):
        super().__init__()
        self.d = d
        self.future_len = future_len
        self.static_pos = MLP([d, d, d])
        self.self_attn = MultiHeadAttention(d, heads)
        self.norm_self = LayerNorm(d)
        self.dynamic_pos = MLP([d, d, d])
        self.agent_key = Linear(2 * d, d)
        self.agent_attn = MultiHeadAttention(d, heads)
        self.norm_agent = LayerNorm(d)
        self.map_key = Linear(2 * d, d)
        self.map_attn = MultiHeadAttention(d, heads)
        self.norm_map = LayerNorm(d)
        self.fuse = MLP([3 * d, d, d])
        self.cls_head = MLP([d, d, 1])
        self.reg_head = MLP([d, d, future_len * HEAD_CHANNELS])

    def forward(self, query, static_pe, dynamic_points, agents, agent_pe, agent_valid,
                map_tokens, map_pe, map_valid, target_token):
        # residuals are taken around each attention's query input, position included
        sq = query + self.static_pos(static_pe)
        q = self.norm_self(sq + self.self_attn(sq, sq, query))

        dq = q + self.dynamic_pos(sinusoidal_pe(dynamic_points, self.d))
        agent_keys = self.agent_key(torch.cat([agents, agent_pe], dim=-1))
        q_agent = self.norm_agent(dq + self.agent_attn(dq, agent_keys, agents, agent_valid))
        map_keys = self.map_key(torch.cat([map_tokens, map_pe], dim=-1))
        q_map = self.norm_map(dq + self.map_attn(dq, map_keys, map_tokens, map_valid))

        target = target_token.unsqueeze(-2).expand_as(q_agent)
        out = self.fuse(torch.cat([q_agent, q_map, target], dim=-1))
        logits = self.cls_head(out).squeeze(-1)
        raw = self.reg_head(out).unflatten(-1, (self.future_len, HEAD_CHANNELS))
        return out, logits, raw


class MotionDecoder(Module):
    def __init__(self, d1=64, d=128, heads=4, future_len=30, num_layers=6,
                 num_dynamic_polylines=32, limits: KinematicLimits | None = None,
                 detach_dynamic_points: bool = True):
        super().__init__()
        self.detach_dynamic_points = detach_dynamic_points
        self.d = d
        self.future_len = future_len
        self.num_dynamic_polylines = num_dynamic_polylines
        self.limits = limits or KinematicLimits()
        self.dense_head = MLP([d1, d, future_len * 4])
        self.dense_embed = MLP([future_len * 4, d, d])
        self.agent_fuse = MLP([d1 + d, d, d])
        self.map_proj = MLP([d1, d])
        self.layers = nn.ModuleList(DecoderLayer(d, heads, future_len) for _ in range(num_layers))

    def dense_future(self, enc):
        """Single-mode future per agent, and the agent tokens enriched by it."""
        flat = self.dense_head(enc.agent_tokens)
        dense = flat.unflatten(-1, (self.future_len, 4))
        agents = self.agent_fuse(torch.cat([enc.agent_tokens, self.dense_embed(flat)], dim=-1))
        return agents, dense

    def forward(self, enc, intention_points, target_speed) -> DecoderOutput:
        agents, dense = self.dense_future(enc)
        agents = agents * enc.agent_valid.unsqueeze(-1)
        agent_pe = sinusoidal_pe(enc.agent_positions, self.d)
        map_all = self.map_proj(enc.map_tokens)
        target_token = agents[..., 0, :]

        batch, k = intention_points.shape[0], intention_points.shape[1]
        static_pe = sinusoidal_pe(intention_points, self.d)
        query = intention_points.new_zeros(batch, k, self.d)
        dynamic_points = intention_points
        # the target sits at the frame origin
        anchors = intention_points.new_zeros(batch, 1, 2)
        count = min(self.num_dynamic_polylines, enc.map_tokens.shape[1])

        layers = []
        for layer in self.layers:
            index = collect_map(enc.polyline_centers, enc.map_mask, anchors, count)
            tokens = _gather(map_all, index)
            centers = _gather(enc.polyline_centers, index)
            valid = torch.gather(enc.map_mask, 1, index)
            query, logits, raw = layer(
                query, static_pe, dynamic_points, agents, agent_pe, enc.agent_valid,
                tokens, sinusoidal_pe(centers, self.d), valid, target_token,
            )
            gmm, controls = squash_head(raw, self.limits)
            layers.append(
                LayerPrediction(
                    mode_logits=logits,
                    mode_probs=torch.softmax(logits, dim=-1),
                    gmm=gmm,
                    controls=controls,
                    traj_control=rollout_controls(controls, target_speed, self.limits),
                    raw=raw,
                    map_index=index,
                )
            )
            # the next layer's query positions carry no gradient back into this head,
            # so only the assigned mode's head is ever supervised
            dynamic_points = gmm[..., -1, :2]
            if self.detach_dynamic_points:
                dynamic_points = dynamic_points.detach()
            anchors = gmm[..., :2].flatten(1, 2)
        return DecoderOutput(layers=layers, dense_future=dense)


class MotionModel(Module):
    """Encoder and decoder wired together; ``forward(batch)`` returns a :class:`DecoderOutput`."""

    def __init__(self, encoder, decoder):
        super().__init__()
        self.encoder = encoder
        self.decoder = decoder

    def forward(self, batch) -> DecoderOutput:
        enc = self.encoder(batch)
        return self.decoder(enc, batch.intention_points, batch.target_speed)


def build_model(cfg) -> MotionModel:
    """Model for a :class:`~guidedmotion.config.RunConfig`, seeded from ``cfg.seed``."""
    encoder = SceneEncoder(
        d1=cfg.d1, heads=cfg.heads, knn_k=cfg.knn_k, num_mcg_layers=cfg.num_mcg_layers,
        num_local_attn_layers=cfg.num_local_attn_layers, use_msg=cfg.use_msg,
    )
    decoder = MotionDecoder(
        d1=cfg.d1, d=cfg.d, heads=cfg.heads, future_len=cfg.future_len,
        num_layers=cfg.num_decoder_layers, num_dynamic_polylines=cfg.num_dynamic_polylines,
        limits=cfg.limits,
    )
    model = MotionModel(encoder, decoder)
    return seed_parameters(model, cfg.seed, DTYPES[cfg.dtype])
