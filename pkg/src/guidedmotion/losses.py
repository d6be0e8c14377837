"""Training objectives: dense L1, GMM negative log-likelihood, mode classification,
control regression and control guidance, combined with per-term weights."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

log = logging.getLogger(__name__)

LOSS_NAMES = ("dense", "gmm", "cls", "control", "guidance")
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class LossBreakdown:
    dense: torch.Tensor
    gmm: torch.Tensor
    cls: torch.Tensor
    control: torch.Tensor
    guidance: torch.Tensor
    total: torch.Tensor
    selected_mode: torch.Tensor  # [B]

    def components(self) -> dict[str, float]:
        out = {name: float(getattr(self, name).detach()) for name in LOSS_NAMES}
        out["total"] = float(self.total.detach())
        return out


def hard_assign(intention_points: torch.Tensor, gt_endpoint: torch.Tensor) -> torch.Tensor:
    """Index of the intention point nearest the ground-truth endpoint; ties go to the lowest index.

    ``intention_points`` is ``[..., K, 2]`` and ``gt_endpoint`` is ``[..., 2]``.
    """
    diff = intention_points - gt_endpoint.unsqueeze(-2)
    dist = (diff * diff).sum(-1)
    # torch.argmin returns the first minimal index
    return torch.argmin(dist, dim=-1)


def bivariate_nll(gmm: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Per-step negative log density of ``gt [..., 2]`` under ``gmm [..., 5] = (mux, muy, sx, sy, rho)``."""
    dx = gt[..., 0] - gmm[..., 0]
    dy = gt[..., 1] - gmm[..., 1]
    sx, sy, rho = gmm[..., 2], gmm[..., 3], gmm[..., 4]
    one_minus = 1.0 - rho * rho
    quad = (dx / sx) ** 2 + (dy / sy) ** 2 - 2.0 * rho * dx * dy / (sx * sy)
    return LOG_2PI + torch.log(sx) + torch.log(sy) + 0.5 * torch.log(one_minus) + quad / (2.0 * one_minus)


def _masked_mean(values: torch.Tensor, mask: torch.Tensor, name: str) -> torch.Tensor:
    count = mask.sum()
    if int(count) == 0:
        log.warning("no valid ground-truth steps for the %s loss; contributing 0", name)
        return values.sum() * 0.0
    return (values * mask).sum() / count


def gmm_nll(gmm: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean over valid steps of the bivariate normal NLL."""
    if not bool((gmm[..., 2:4] > 0).all()) or not bool((gmm[..., 4].abs() < 1).all()):
        raise ValueError("gmm parameters out of range: need sigma > 0 and |rho| < 1")
    nll = bivariate_nll(gmm, gt)
    if mask is None:
        mask = torch.ones_like(nll, dtype=torch.bool)
    return _masked_mean(nll, mask.to(nll.dtype), "gmm")


def _pick(x: torch.Tensor, mode: torch.Tensor) -> torch.Tensor:
    """Select mode ``mode[b]`` from ``x [B, K, ...]``."""
    return x[torch.arange(x.shape[0]), mode]


def target_endpoint(future: torch.Tensor, future_mask: torch.Tensor) -> torch.Tensor:
    """Last valid ground-truth position of the target (agent row 0), ``[B, 2]``."""
    mask = future_mask[:, 0]
    steps = torch.arange(mask.shape[-1])
    last = torch.where(mask, steps, torch.full_like(steps, -1)).max(dim=-1).values.clamp(min=0)
    return future[torch.arange(future.shape[0]), 0, last, :2]


def compute_losses(output, batch, weights=(1.0, 1.0, 1.0, 1.0, 0.1),
                   stop_control_grad: bool = False) -> LossBreakdown:
    """All five terms and their weighted total.

    Only the mode whose intention point is nearest the ground-truth endpoint is
    supervised by the GMM, classification, control and guidance terms, and
    those four are averaged over decoder layers.
    """
    if not output.layers:
        raise ValueError("need at least one decoder layer output")
    lam = [float(w) for w in weights]
    future, fmask = batch.future, batch.future_mask
    fm = fmask.to(future.dtype)

    dense_err = (output.dense_future - future).abs().sum(-1)
    dense = _masked_mean(dense_err, fm, "dense")

    gt = future[:, 0, :, :2]
    tmask = fm[:, 0]
    selected = hard_assign(batch.intention_points, target_endpoint(future, fmask))

    gmm_terms, cls_terms, control_terms, guidance_terms = [], [], [], []
    for layer in output.layers:
        gmm_sel = _pick(layer.gmm, selected)
        ctrl_sel = _pick(layer.traj_control, selected)
        gmm_terms.append(_masked_mean(bivariate_nll(gmm_sel, gt), tmask, "gmm"))
        cls_terms.append(F.cross_entropy(layer.mode_logits, selected))
        control_terms.append(_masked_mean((ctrl_sel - gt).abs().sum(-1), tmask, "control"))
        guide_ctrl = ctrl_sel.detach() if stop_control_grad else ctrl_sel
        guidance_terms.append(
            _masked_mean((guide_ctrl - gmm_sel[..., :2]).abs().sum(-1), tmask, "guidance")
        )

    def mean(terms):
        return torch.stack(terms).mean()

    gmm, cls, control, guidance = map(mean, (gmm_terms, cls_terms, control_terms, guidance_terms))
    total = lam[0] * dense + lam[1] * gmm + lam[2] * cls + lam[3] * control + lam[4] * guidance
    return LossBreakdown(dense, gmm, cls, control, guidance, total, selected)
