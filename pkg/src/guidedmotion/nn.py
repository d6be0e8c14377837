"""Small neural building blocks on top of torch autograd.

Layers hold their own parameters and are written out by hand (the GRU cell,
attention, gating) so the forward definitions are visible and testable.
Every layer accepts arbitrary leading batch dimensions.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def _shape_error(what: str, got, expected) -> ValueError:
    return ValueError(f"{what}: got shape {tuple(got)}, expected {expected}")


def uniform_(tensor: torch.Tensor, fan_in: int, generator: torch.Generator | None = None):
    bound = 1.0 / math.sqrt(max(fan_in, 1))
    with torch.no_grad():
        tensor.uniform_(-bound, bound, generator=generator)
    return tensor


class Module(nn.Module):
    """Base class that seeds parameters through a shared generator."""

    def reset_parameters(self, generator: torch.Generator | None = None) -> None:
        stack = list(self.children())[::-1]
        while stack:
            child = stack.pop()
            if isinstance(child, Module):
                child.reset_parameters(generator)
            else:  # plain containers such as ModuleList
                stack.extend(list(child.children())[::-1])


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = nn.Parameter(torch.empty(in_features, out_features))
        self.bias = nn.Parameter(torch.empty(out_features)) if bias else None
        self.reset_parameters()

    def reset_parameters(self, generator=None):
        uniform_(self.weight, self.in_features, generator)
        if self.bias is not None:
            uniform_(self.bias, self.in_features, generator)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.in_features:
            raise _shape_error("linear input", x.shape, f"[..., {self.in_features}]")
        out = x @ self.weight
        return out + self.bias if self.bias is not None else out


class MLP(Module):
    """Linear layers with ReLU between them; the last layer is left linear."""

    def __init__(self, dims, final_activation: bool = False):
        super().__init__()
        dims = list(dims)
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output widths")
        self.layers = nn.ModuleList(Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.final_activation = final_activation

    def reset_parameters(self, generator=None):
        for layer in self.layers:
            layer.reset_parameters(generator)

    def forward(self, x):
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < last or self.final_activation:
                x = torch.relu(x)
        return x


class Conv1d(Module):
    """Temporal convolution over ``[B, T, C]`` with same-length zero padding."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError("kernel_size must be odd for same padding")
        self.in_channels = in_channels
        self.kernel_size = kernel_size
        self.weight = nn.Parameter(torch.empty(out_channels, in_channels, kernel_size))
        self.bias = nn.Parameter(torch.empty(out_channels))
        self.reset_parameters()

    def reset_parameters(self, generator=None):
        fan_in = self.in_channels * self.kernel_size
        uniform_(self.weight, fan_in, generator)
        uniform_(self.bias, fan_in, generator)

    def forward(self, x):
        if x.shape[-1] != self.in_channels:
            raise _shape_error("conv1d input", x.shape, f"[..., T, {self.in_channels}]")
        lead = x.shape[:-2]
        flat = x.reshape(-1, *x.shape[-2:]).transpose(1, 2)
        out = F.conv1d(flat, self.weight, self.bias, padding=self.kernel_size // 2)
        return out.transpose(1, 2).reshape(*lead, x.shape[-2], -1)


class GRU(Module):
    """Stacked GRU over ``[B, T, C]``; returns (top-layer sequence, last hidden per layer).

    With ``groups=G`` the module holds G independent GRUs that run side by side:
    the input is ``[G, B, T, C]`` and group ``g`` only ever sees slice ``g``.
    """

    def __init__(self, input_size: int, hidden_size: int, num_layers: int = 2, groups: int | None = None):
        super().__init__()
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.num_layers = num_layers
        self.groups = groups
        lead = () if groups is None else (groups,)
        self.w_in = nn.ParameterList()
        self.w_h = nn.ParameterList()
        self.b_in = nn.ParameterList()
        self.b_h = nn.ParameterList()
        for layer in range(num_layers):
            width = input_size if layer == 0 else hidden_size
            self.w_in.append(nn.Parameter(torch.empty(*lead, width, 3 * hidden_size)))
            self.w_h.append(nn.Parameter(torch.empty(*lead, hidden_size, 3 * hidden_size)))
            self.b_in.append(nn.Parameter(torch.zeros(*lead, 1, 3 * hidden_size)))
            self.b_h.append(nn.Parameter(torch.zeros(*lead, 1, 3 * hidden_size)))
        self.reset_parameters()

    def reset_parameters(self, generator=None):
        for w in self.w_in:
            uniform_(w, self.hidden_size, generator)
        for w in self.w_h:
            uniform_(w, self.hidden_size, generator)
        with torch.no_grad():
            for b in (*self.b_in, *self.b_h):
                b.zero_()

    def forward(self, x, h0=None):
        if x.shape[-1] != self.input_size:
            raise _shape_error("gru input", x.shape, f"[..., T, {self.input_size}]")
        if self.groups is None:
            lead = x.shape[:-2]
            seq = x.reshape(-1, *x.shape[-2:])
        else:
            if x.dim() < 3 or x.shape[0] != self.groups:
                raise _shape_error("grouped gru input", x.shape, f"[{self.groups}, ..., T, {self.input_size}]")
            lead = x.shape[:-2]
            seq = x.reshape(self.groups, -1, *x.shape[-2:])
        steps = seq.shape[-2]
        H = self.hidden_size
        finals = []
        for layer in range(self.num_layers):
            if h0 is None:
                h = seq.new_zeros(*seq.shape[:-2], H)
            else:
                h = h0[layer].reshape(*seq.shape[:-2], H)
            flat = seq.flatten(-3, -2)
            gates_in = (flat @ self.w_in[layer] + self.b_in[layer]).unflatten(-2, seq.shape[-3:-1])
            outs = []
            # unbind/chunk instead of slicing keeps the backward pass free of full-size zero fills
            for gi in gates_in.unbind(-2):
                gh = h @ self.w_h[layer] + self.b_h[layer]
                i_r, i_z, i_n = gi.chunk(3, dim=-1)
                h_r, h_z, h_n = gh.chunk(3, dim=-1)
                r = torch.sigmoid(i_r + h_r)
                z = torch.sigmoid(i_z + h_z)
                cand = torch.tanh(i_n + r * h_n)
                h = (1 - z) * cand + z * h
                outs.append(h)
            seq = torch.stack(outs, dim=-2)
            finals.append(h.reshape(*lead, H))
        return seq.reshape(*lead, steps, H), torch.stack(finals, dim=0)


def masked_max(x: torch.Tensor, mask: torch.Tensor | None, dim: int) -> torch.Tensor:
    """Max over ``dim`` ignoring masked-out entries; all-masked slices give zeros."""
    if mask is None:
        return x.max(dim=dim).values
    m = mask.unsqueeze(-1) if mask.dim() < x.dim() else mask
    filled = x.masked_fill(~m, float("-inf"))
    out = filled.max(dim=dim).values
    any_valid = m.any(dim=dim)
    return torch.where(any_valid, out, torch.zeros_like(out))


def sinusoidal_pe(positions: torch.Tensor, width: int, temperature: float = 10000.0) -> torch.Tensor:
    """Encode ``[..., 2]`` positions: x gets the first half of ``width``, y the second.

    Within each half, feature ``2i`` is ``sin(p / T^(2i/half))`` and ``2i+1`` the cosine.
    """
    if width % 4 != 0:
        raise ValueError(f"positional encoding width must be divisible by 4, got {width}")
    if positions.shape[-1] != 2:
        raise _shape_error("positions", positions.shape, "[..., 2]")
    half = width // 2
    i = torch.arange(half // 2, dtype=positions.dtype, device=positions.device)
    freq = temperature ** (-2.0 * i / half)
    parts = []
    for axis in range(2):
        angle = positions[..., axis : axis + 1] * freq
        parts.append(torch.stack([torch.sin(angle), torch.cos(angle)], dim=-1).flatten(-2))
    return torch.cat(parts, dim=-1)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with separate q/k/v projections and an output projection."""

    def __init__(self, d_model: int, heads: int, d_key: int | None = None, d_value: int | None = None):
        super().__init__()
        if d_model % heads != 0:
            raise ValueError(f"d_model ({d_model}) must be divisible by heads ({heads})")
        self.d_model = d_model
        self.heads = heads
        self.q_proj = Linear(d_model, d_model)
        self.k_proj = Linear(d_key or d_model, d_model)
        self.v_proj = Linear(d_value or d_model, d_model)
        self.out_proj = Linear(d_model, d_model)

    def reset_parameters(self, generator=None):
        for layer in (self.q_proj, self.k_proj, self.v_proj, self.out_proj):
            layer.reset_parameters(generator)

    def weights(self, q, k, mask=None):
        """Attention weights ``[..., heads, Nq, Nk]``; ``mask`` is ``[..., Nq, Nk]`` or ``[..., Nk]``."""
        h, dh = self.heads, self.d_model // self.heads
        qh = self.q_proj(q).unflatten(-1, (h, dh)).transpose(-3, -2)
        kh = self.k_proj(k).unflatten(-1, (h, dh)).transpose(-3, -2)
        scores = qh @ kh.transpose(-1, -2) / math.sqrt(dh)
        if mask is not None:
            if mask.dim() == q.dim() - 1:
                mask = mask.unsqueeze(-2)
            scores = scores.masked_fill(~mask.unsqueeze(-3), float("-inf"))
        w = torch.softmax(scores, dim=-1)
        # rows with no admissible key attend to nothing
        return torch.nan_to_num(w, nan=0.0)

    def forward(self, q, k, v, mask=None):
        if k.shape[-2] != v.shape[-2]:
            raise ValueError(f"keys and values disagree in token count: {tuple(k.shape)} vs {tuple(v.shape)}")
        w = self.weights(q, k, mask)
        h, dh = self.heads, self.d_model // self.heads
        vh = self.v_proj(v).unflatten(-1, (h, dh)).transpose(-3, -2)
        out = (w @ vh).transpose(-3, -2).flatten(-2)
        return self.out_proj(out)


class GatingLayer(Module):
    """One context-gating exchange between token sets ``x`` and ``y``.

    ``x_out = MLP(x) * MLP(max_pool(MLP(y))) + x`` and symmetrically for ``y``,
    where each side's pooled context comes from the other side's input.
    """

    def __init__(self, width: int):
        super().__init__()
        self.width = width
        self.x_value = MLP([width, width])
        self.y_value = MLP([width, width])
        self.x_context = MLP([width, width])
        self.y_context = MLP([width, width])
        self.x_gate = MLP([width, width])
        self.y_gate = MLP([width, width])

    def forward(self, x, y, x_mask=None, y_mask=None):
        if x.shape[-1] != self.width or y.shape[-1] != self.width:
            raise ValueError(
                f"gating width mismatch: x {tuple(x.shape)}, y {tuple(y.shape)}, width {self.width}"
            )
        c_y = masked_max(self.y_context(y), y_mask, dim=-2)
        c_x = masked_max(self.x_context(x), x_mask, dim=-2)
        x_out = self.x_value(x) * self.x_gate(c_y).unsqueeze(-2) + x
        y_out = self.y_value(y) * self.y_gate(c_x).unsqueeze(-2) + y
        if x_mask is not None:
            x_out = x_out * x_mask.unsqueeze(-1)
        if y_mask is not None:
            y_out = y_out * y_mask.unsqueeze(-1)
        return x_out, y_out


class MCG(Module):
    """A stack of gating layers; zero layers is the identity."""

    def __init__(self, width: int, num_layers: int = 2):
        super().__init__()
        self.layers = nn.ModuleList(GatingLayer(width) for _ in range(num_layers))

    def forward(self, x, y, x_mask=None, y_mask=None):
        for layer in self.layers:
            x, y = layer(x, y, x_mask, y_mask)
        return x, y


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = 1e-5):
        super().__init__()
        self.width = width
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(width))
        self.bias = nn.Parameter(torch.zeros(width))

    def reset_parameters(self, generator=None):
        with torch.no_grad():
            self.weight.fill_(1.0)
            self.bias.zero_()

    def forward(self, x):
        return F.layer_norm(x, (self.width,), self.weight, self.bias, self.eps)


def seed_parameters(module: nn.Module, seed: int, dtype=torch.float64) -> nn.Module:
    """Re-initialize every parameter from a generator seeded with ``seed``."""
    module.to(dtype)
    gen = torch.Generator().manual_seed(int(seed))
    if isinstance(module, Module):
        module.reset_parameters(gen)
    return module
