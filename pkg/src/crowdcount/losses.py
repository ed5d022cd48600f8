"""Training objective: mean squared pixel error per density map plus a
clipped binary cross-entropy for the crowdedness classifier."""

from __future__ import annotations

import torch

PROB_CLIP = 1e-7


def _as_tensor(value) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value
    if hasattr(value, "values"):  # DensityMap
        return torch.as_tensor(value.values)
    return torch.as_tensor(value)


def density_loss(pred, gt) -> torch.Tensor:
    """Mean squared cell error; zero iff the maps are identical."""
    p, g = _as_tensor(pred), _as_tensor(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch: {tuple(p.shape)} vs {tuple(g.shape)}")
    pred_stride = getattr(pred, "stride", None)
    gt_stride = getattr(gt, "stride", None)
    if isinstance(pred_stride, int) and isinstance(gt_stride, int) and pred_stride != gt_stride:
        raise ValueError(f"stride mismatch: {pred_stride} vs {gt_stride}")
    return ((p - g.to(p.dtype)) ** 2).mean()


def classification_loss(prob, label: int) -> torch.Tensor:
    """Binary cross-entropy with the probability clipped to
    [1e-7, 1 - 1e-7] so the loss stays finite at saturated predictions."""
    p = prob if isinstance(prob, torch.Tensor) else torch.as_tensor(float(prob))
    p = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
    y = float(label)
    return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p))


def loss_breakdown(out, gt_sparse, gt_dense, gt_final, label,
                   weights=(1.0, 1.0, 1.0, 1.0)):
    """(total, parts) where parts holds the unweighted component losses."""
    parts = {
        "loss_s": density_loss(out.dm_sparse, gt_sparse),
        "loss_d": density_loss(out.dm_dense, gt_dense),
        "loss_f": density_loss(out.dm_final, gt_final),
        "loss_cls": classification_loss(out.prob, label),
    }
    ws, wd, wf, wc = weights
    total = ws * parts["loss_s"] + wd * parts["loss_d"] + wf * parts["loss_f"] + wc * parts["loss_cls"]
    return total, parts


def total_loss(out, gt_sparse, gt_dense, gt_final, label,
               weights=(1.0, 1.0, 1.0, 1.0)) -> torch.Tensor:
    """Weighted sum of the three map losses and the classification loss."""
    total, _ = loss_breakdown(out, gt_sparse, gt_dense, gt_final, label, weights)
    return total
