"""Reconstruction losses and their routing to token groups.

Five target assignments are supported, named by which rows carry which
targets: masked-3D + visible-2D (default), each term alone, 2D on masked
rows, and both targets on masked rows.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, InputError, ShapeError

ASSIGNMENTS = ("M3D+V2D", "M3D", "V2D", "M2D", "M3D+M2D")

_TERMS = {
    "M3D+V2D": (True, "visible"),
    "M3D": (True, None),
    "V2D": (False, "visible"),
    "M2D": (False, "masked"),
    "M3D+M2D": (True, "masked"),
}


def assignment_terms(assignment: str) -> tuple[bool, str | None]:
    """(use 3D term, which rows get 2D targets: 'visible'|'masked'|None)."""
    if assignment not in _TERMS:
        raise InputError(f"unknown target assignment {assignment!r}; expected one of {ASSIGNMENTS}")
    return _TERMS[assignment]


def chamfer_loss(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Symmetric squared-distance Chamfer over per-token groups.

    Sums, per group, each predicted point's squared distance to its nearest
    ground-truth point and vice versa, normalized by 1/(groups·k).
    """
    gt = np.asarray(gt, dtype=np.float64)
    pd = pred.data
    if pd.shape != gt.shape or pd.ndim != 3 or pd.shape[2] != 3:
        raise ShapeError(f"chamfer_loss: group shapes differ, {pd.shape} vs {gt.shape}")
    g_count, k, _ = pd.shape
    if g_count == 0:
        return Tensor(0.0)
    diff = pd[:, :, None, :] - gt[:, None, :, :]
    d2 = np.einsum("gijc,gijc->gij", diff, diff)
    fwd_idx = d2.argmin(axis=2)  # nearest gt per predicted point
    bwd_idx = d2.argmin(axis=1)  # nearest predicted point per gt point
    fwd_min = np.take_along_axis(d2, fwd_idx[:, :, None], axis=2)[:, :, 0]
    bwd_min = np.take_along_axis(d2, bwd_idx[:, None, :], axis=1)[:, 0, :]
    norm = 1.0 / (g_count * k)
    value = (fwd_min.sum() + bwd_min.sum()) * norm
    rg, parents = ad._track(pred)
    out = Tensor(value, rg, "chamfer", parents)
    if rg:

        def bwd(g):
            gp = 2.0 * (pd - np.take_along_axis(gt, fwd_idx[:, :, None], axis=1))
            nearest_pred = np.take_along_axis(pd, bwd_idx[:, :, None], axis=1)
            np.add.at(gp, (np.arange(g_count)[:, None], bwd_idx), 2.0 * (nearest_pred - gt))
            return (gp * (float(g) * norm),)

        out._bwd = bwd
    return out


def semantic_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error over all rows and channels of the 2D targets."""
    target = target.values if hasattr(target, "values") else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"semantic_loss: prediction {pred.shape} vs target {target.shape}")
    d = ad.sub(pred, Tensor(target))
    return ad.mean(ad.mul(d, d))


def total_loss(l3d: Tensor | None, l2d: Tensor | None, assignment: str,
               weight_3d: float = 1.0, weight_2d: float = 1.0) -> Tensor:
    """Sum of the active terms; rejects terms inconsistent with the assignment."""
    use_3d, rows_2d = assignment_terms(assignment)
    if use_3d != (l3d is not None):
        raise ContractError(f"assignment {assignment}: 3D term {'missing' if use_3d else 'unexpected'}")
    if (rows_2d is not None) != (l2d is not None):
        raise ContractError(f"assignment {assignment}: 2D term {'missing' if rows_2d else 'unexpected'}")
    terms = []
    if l3d is not None:
        terms.append(l3d if weight_3d == 1.0 else ad.scale(l3d, weight_3d))
    if l2d is not None:
        terms.append(l2d if weight_2d == 1.0 else ad.scale(l2d, weight_2d))
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return total
