"""Scene context encoder.

Temporal inputs (agent histories and the target-to-polyline relative motion)
go through multi-scale conv+GRU encoders, polylines through a PointNet-style
encoder. The three token sets are fused by a cascade of context-gating
blocks and refined by local attention over the nearest tokens in space.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import torch
from torch import nn

from .nn import GRU, MCG, MLP, Conv1d, LayerNorm, Module, MultiHeadAttention, masked_max, sinusoidal_pe


@dataclass
class SceneEncoding:
    agent_tokens: torch.Tensor  # [B, A, D1]
    map_tokens: torch.Tensor  # [B, L, D1]
    agent_positions: torch.Tensor  # [B, A, 2]
    polyline_centers: torch.Tensor  # [B, L, 2]
    agent_valid: torch.Tensor  # [B, A]
    map_mask: torch.Tensor  # [B, L]


class MultiScaleGRU(Module):
    """Parallel conv branches (kernels 1, 3, 5) each feeding a 2-layer GRU.

    The final-step hidden states of the branches are concatenated and mixed by
    an MLP. With ``kernels=(3,)`` this is the single-scale variant.
    """

    def __init__(self, in_features: int, width: int, kernels=(1, 3, 5)):
        super().__init__()
        self.in_features = in_features
        self.convs = nn.ModuleList(Conv1d(in_features, width, k) for k in kernels)
        # one GRU per branch, run side by side as groups
        self.gru = GRU(width, width, num_layers=2, groups=len(kernels))
        self.out = MLP([len(kernels) * width, width, width])

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        if seq.dim() < 3 or seq.shape[-1] != self.in_features:
            raise ValueError(f"msg input: got shape {tuple(seq.shape)}, expected [..., T, {self.in_features}]")
        if seq.shape[-2] < 1:
            raise ValueError("msg input needs at least one time step")
        branches = torch.stack([torch.relu(conv(seq)) for conv in self.convs])
        _, last = self.gru(branches)
        return self.out(torch.cat(last[-1].unbind(0), dim=-1))


class PolylineEncoder(Module):
    """Shared per-point MLP followed by a max over the points of each polyline."""

    def __init__(self, in_features: int, width: int):
        super().__init__()
        self.in_features = in_features
        self.mlp = MLP([in_features, width, width])

    def forward(self, points: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        if points.dim() < 3 or points.shape[-1] != self.in_features:
            raise ValueError(f"polyline input: got shape {tuple(points.shape)}, expected [..., P, {self.in_features}]")
        feats = self.mlp(points)
        if mask is None:
            return feats.max(dim=-2).values
        return masked_max(feats, mask.unsqueeze(-1).expand(points.shape[:-1]), dim=-2)


class CascadeFusion(Module):
    """Three gating stages: (agents, relative), then (map, relative), then (agents, map)."""

    def __init__(self, width: int, num_layers: int = 2):
        super().__init__()
        self.stage1 = MCG(width, num_layers)
        self.stage2 = MCG(width, num_layers)
        self.stage3 = MCG(width, num_layers)

    def forward(self, a1, r1, m1, agent_mask=None, map_mask=None, return_stages=False):
        a2, r2 = self.stage1(a1, r1, agent_mask, map_mask)
        m2, r3 = self.stage2(m1, r2, map_mask, map_mask)
        a3, m3 = self.stage3(a2, m2, agent_mask, map_mask)
        agent_tokens, map_tokens = a3, m3 + r3
        if return_stages:
            stages = dict(a2=a2, r2=r2, m2=m2, r3=r3, a3=a3, m3=m3)
            return agent_tokens, map_tokens, stages
        return agent_tokens, map_tokens


def knn_mask(positions: torch.Tensor, valid: torch.Tensor, k: int) -> torch.Tensor:
    """``[B, N, N]`` mask of each token's ``k`` nearest valid tokens (itself included).

    Ties in distance go to the lower token index. Invalid query rows are all False.
    """
    diff = positions.unsqueeze(-2) - positions.unsqueeze(-3)
    dist = (diff * diff).sum(-1)
    dist = dist.masked_fill(~valid.unsqueeze(-2), float("inf"))
    order = torch.argsort(dist.detach(), dim=-1, stable=True)[..., :k]
    mask = torch.zeros_like(dist, dtype=torch.bool)
    mask.scatter_(-1, order, True)
    return mask & valid.unsqueeze(-2) & valid.unsqueeze(-1)


class LocalAttentionLayer(Module):
    """Attention restricted to spatial neighbors; positional encoding on queries and keys only."""

    def __init__(self, width: int, heads: int):
        super().__init__()
        self.width = width
        self.attn = MultiHeadAttention(width, heads)
        self.norm1 = LayerNorm(width)
        self.ffn = MLP([width, 4 * width, width])
        self.norm2 = LayerNorm(width)

    def forward(self, x, pe, neighbors, valid):
        qk = x + pe
        x = self.norm1(x + self.attn(qk, qk, x, neighbors))
        x = self.norm2(x + self.ffn(x))
        return x * valid.unsqueeze(-1)


class LocalAttentionStack(Module):
    def __init__(self, width: int, heads: int, num_layers: int, knn_k: int):
        super().__init__()
        self.width = width
        self.knn_k = knn_k
        self.layers = nn.ModuleList(LocalAttentionLayer(width, heads) for _ in range(num_layers))

    def forward(self, tokens, positions, valid):
        n_valid = int(valid.sum(-1).min())
        k = self.knn_k
        if k > n_valid:
            warnings.warn(f"knn_k={k} exceeds the token count {n_valid}; clamping", stacklevel=2)
            k = max(n_valid, 1)
        neighbors = knn_mask(positions, valid, k)
        pe = sinusoidal_pe(positions, self.width)
        x = tokens
        for layer in self.layers:
            x = layer(x, pe, neighbors, valid)
        return x


class SceneEncoder(Module):
    def __init__(self, d1=64, heads=4, knn_k=16, num_mcg_layers=2, num_local_attn_layers=4,
                 use_msg=True, agent_features=8, map_features=7, relative_features=4):
        super().__init__()
        kernels = (1, 3, 5) if use_msg else (3,)
        self.d1 = d1
        self.agent_encoder = MultiScaleGRU(agent_features, d1, kernels)
        self.relative_encoder = MultiScaleGRU(relative_features, d1, kernels)
        self.polyline_encoder = PolylineEncoder(map_features, d1)
        self.fusion = CascadeFusion(d1, num_mcg_layers)
        self.local_attention = LocalAttentionStack(d1, heads, num_local_attn_layers, knn_k)

    def forward(self, batch) -> SceneEncoding:
        agent_valid, map_mask = batch.agent_valid, batch.map_mask
        a1 = self.agent_encoder(batch.agents) * agent_valid.unsqueeze(-1)
        r1 = self.relative_encoder(batch.relative) * map_mask.unsqueeze(-1)
        m1 = self.polyline_encoder(batch.map) * map_mask.unsqueeze(-1)
        agent_tokens, map_tokens = self.fusion(a1, r1, m1, agent_valid, map_mask)

        n_agents = agent_tokens.shape[-2]
        tokens = torch.cat([agent_tokens, map_tokens], dim=-2)
        positions = torch.cat([batch.agent_positions, batch.polyline_centers], dim=-2)
        valid = torch.cat([agent_valid, map_mask], dim=-1)
        out = self.local_attention(tokens, positions, valid)
        return SceneEncoding(
            agent_tokens=out[..., :n_agents, :],
            map_tokens=out[..., n_agents:, :],
            agent_positions=batch.agent_positions,
            polyline_centers=batch.polyline_centers,
            agent_valid=agent_valid,
            map_mask=map_mask,
        )
