"""Image-to-point guidance: saliency clouds, guided masking, 2D targets.

Per-token saliency comes from back-projecting each view's saliency map at
the token centers, combining across views (average by default), and
softmax-normalizing over the tokens. The resulting probabilities drive a
weighted without-replacement draw of the visible token set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError
from .projection import GridMap, back_project

SAL_AGGREGATIONS = ("ave", "max", "min")
TGT_AGGREGATIONS = ("concat", "ave")
MASK_POLICIES = ("important", "random", "unimportant")


@dataclass
class SaliencyCloud:
    """Per-token visibility probabilities; entries in (0,1), summing to 1."""

    scores: np.ndarray
    source_views: int


@dataclass
class MaskPartition:
    """Disjoint visible/masked token index sets covering 0..M-1."""

    visible_idx: np.ndarray
    masked_idx: np.ndarray
    ratio: float

    @property
    def m(self) -> int:
        return self.visible_idx.size + self.masked_idx.size

    @property
    def m_vis(self) -> int:
        return self.visible_idx.size

    @property
    def m_mask(self) -> int:
        return self.masked_idx.size


@dataclass
class SemanticTarget:
    """Per-token 2D regression targets; width V·C (concat) or C (ave)."""

    values: np.ndarray
    aggregation: str


def aggregate_token_values(maps: list[GridMap], centers: np.ndarray) -> np.ndarray:
    """Back-project every view at the token centers, stacked V×M×C."""
    if not maps:
        raise InputError("need at least one view map")
    per_view = [back_project(m, centers) for m in maps]
    widths = {v.shape[1] for v in per_view}
    if len(widths) != 1:
        raise ShapeError(f"views disagree on channel count: {sorted(widths)}")
    return np.stack(per_view, axis=0)


def build_saliency_cloud(sal_maps: list[GridMap], centers: np.ndarray,
                         aggregation: str = "ave") -> SaliencyCloud:
    """Combine per-view saliency at each token and softmax over tokens."""
    if aggregation not in SAL_AGGREGATIONS:
        raise InputError(f"saliency aggregation must be one of {SAL_AGGREGATIONS}, got {aggregation!r}")
    stacked = aggregate_token_values(sal_maps, centers)[:, :, 0]  # V×M
    if aggregation == "ave":
        raw = stacked.mean(axis=0)
    elif aggregation == "max":
        raw = stacked.max(axis=0)
    else:
        raw = stacked.min(axis=0)
    shifted = raw - raw.max()
    e = np.exp(shifted)
    scores = e / e.sum()
    return SaliencyCloud(scores=scores, source_views=len(sal_maps))


def sample_mask(sal: SaliencyCloud, ratio: float, policy: str, seed: int) -> MaskPartition:
    """Draw floor((1-ratio)·M) visible tokens without replacement.

    ``important`` weights draws by the saliency scores, ``random`` uniformly,
    ``unimportant`` by rank-mirrored scores (each token inherits the score of
    its mirror in the saliency ordering), so the most salient tokens end up
    masked. Sampling uses exponential perturbed keys, which is equivalent in
    distribution to successive categorical draws with renormalization.
    """
    if not 0.0 <= ratio < 1.0:
        raise InputError(f"mask ratio must lie in [0,1), got {ratio}")
    if policy not in MASK_POLICIES:
        raise InputError(f"mask policy must be one of {MASK_POLICIES}, got {policy!r}")
    m = sal.scores.size
    m_vis = int(np.floor((1.0 - ratio) * m))
    if policy == "random":
        weights = np.full(m, 1.0 / m)
    elif policy == "important":
        weights = sal.scores
    else:
        order = np.argsort(sal.scores, kind="stable")
        weights = np.empty(m)
        weights[order] = sal.scores[order[::-1]]
    rng = np.random.default_rng(seed)
    keys = np.log(rng.random(m)) / weights
    ranked = np.argsort(-keys, kind="stable")
    visible = np.sort(ranked[:m_vis]).astype(np.intp)
    masked = np.sort(ranked[m_vis:]).astype(np.intp)
    return MaskPartition(visible_idx=visible, masked_idx=masked, ratio=ratio)


def build_semantic_targets(feat_maps: list[GridMap], token_centers: np.ndarray,
                           aggregation: str = "concat") -> SemanticTarget:
    """Assemble per-token 2D targets from the view feature maps."""
    if aggregation not in TGT_AGGREGATIONS:
        raise InputError(f"target aggregation must be one of {TGT_AGGREGATIONS}, got {aggregation!r}")
    stacked = aggregate_token_values(feat_maps, token_centers)  # V×M×C
    values = combine_targets(stacked, aggregation)
    return SemanticTarget(values=values, aggregation=aggregation)


def combine_targets(stacked: np.ndarray, aggregation: str) -> np.ndarray:
    """V×M×C stack → M×(V·C) concat in view order, or M×C average."""
    if aggregation == "concat":
        return np.concatenate(list(stacked), axis=1)
    return stacked.mean(axis=0)


def target_width(views: int, channels: int, aggregation: str) -> int:
    return views * channels if aggregation == "concat" else channels
