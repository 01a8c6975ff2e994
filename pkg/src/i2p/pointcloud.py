"""Point-cloud ingestion, normalization, sampling, grouping, and synthesis.

All operations are pure functions of their inputs (ties broken by ascending
index), so the geometric stage of the pipeline is reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

SHAPE_CLASSES = ("sphere", "cube", "plane", "cylinder")


@dataclass
class PointCloud:
    """N×3 coordinates with an optional class label."""

    points: np.ndarray
    label: int | None = None
    source_id: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or self.points.shape[0] < 1:
            raise InputError(f"point cloud must be N×3 with N ≥ 1, got {self.points.shape}")
        if not np.isfinite(self.points).all():
            raise InputError("point cloud contains non-finite coordinates")

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass
class TokenCenters:
    """M sampled centers plus (optionally) their k-NN groups.

    ``index`` maps centers back to rows of the parent cloud. ``neighbor_index``
    holds, per center, exactly k parent-row indices sorted by ascending
    distance (ties by ascending index).
    """

    centers: np.ndarray
    index: np.ndarray
    neighbor_index: np.ndarray | None = field(default=None)

    @property
    def m(self) -> int:
        return self.centers.shape[0]


def normalize(cloud: PointCloud) -> PointCloud:
    """Map the cloud into [0,1]³ preserving aspect ratio.

    The min-corner goes to 0 and the longest bounding-box edge spans [0,1];
    zero-extent axes map to 0.5.
    """
    pts = cloud.points
    lo = pts.min(axis=0)
    extent = pts.max(axis=0) - lo
    longest = extent.max()
    out = np.empty_like(pts)
    for ax in range(3):
        if extent[ax] == 0.0:
            out[:, ax] = 0.5
        else:
            out[:, ax] = (pts[:, ax] - lo[ax]) / longest
    return PointCloud(out, cloud.label, cloud.source_id)


def _fps_greedy(points: np.ndarray, m: int, start: int) -> np.ndarray:
    """Greedy max-min selection from a fixed start index."""
    n = points.shape[0]
    selected = np.empty(m, dtype=np.intp)
    selected[0] = start
    dist = ((points - points[start]) ** 2).sum(axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(dist))  # argmax takes the lowest index on ties
        selected[i] = nxt
        cand = ((points - points[nxt]) ** 2).sum(axis=1)
        np.minimum(dist, cand, out=dist)
    return selected


def furthest_point_sample(cloud: PointCloud, m: int, seed: int, start: int | None = None) -> TokenCenters:
    """Furthest point sampling down to ``m`` centers.

    The first point is drawn as ``default_rng(seed).integers(n)`` (pass
    ``start`` to pin it); each subsequent point maximizes the minimum
    distance to the selected set, ties broken by ascending index.
    """
    n = cloud.n
    if not 1 <= m <= n:
        raise InputError(f"furthest_point_sample: need 1 ≤ M ≤ N, got M={m}, N={n}")
    if start is None:
        start = int(np.random.default_rng(seed).integers(n))
    idx = _fps_greedy(cloud.points, m, start)
    return TokenCenters(centers=cloud.points[idx], index=idx)


def knn_group(cloud: PointCloud, centers: TokenCenters, k: int) -> TokenCenters:
    """Exact k nearest neighbors of each center among all cloud points."""
    n = cloud.n
    if not 1 <= k <= n:
        raise InputError(f"knn_group: need 1 ≤ k ≤ N, got k={k}, N={n}")
    diff = centers.centers[:, None, :] - cloud.points[None, :, :]
    d2 = np.einsum("mnc,mnc->mn", diff, diff)
    # stable argsort keeps ascending index order among equal distances
    order = np.argsort(d2, axis=1, kind="stable")
    return TokenCenters(centers=centers.centers, index=centers.index,
                        neighbor_index=order[:, :k].astype(np.intp))


def group_coordinates(cloud: PointCloud, centers: TokenCenters) -> np.ndarray:
    """Neighbor coordinates re-centered on their token center, M×k×3."""
    if centers.neighbor_index is None:
        raise InputError("group_coordinates: centers have no neighbor index; run knn_group first")
    return cloud.points[centers.neighbor_index] - centers.centers[:, None, :]


def _surface_sphere(rng, n):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return 0.5 * v


def _surface_cube(rng, n):
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-0.5, 0.5, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -0.5, 0.5)
    for ax in range(3):
        sel = axis == ax
        others = [a for a in range(3) if a != ax]
        pts[sel, ax] = sign[sel]
        pts[np.ix_(sel, others)] = uv[sel]
    return pts


def _surface_plane(rng, n):
    pts = np.zeros((n, 3))
    pts[:, :2] = rng.uniform(-0.5, 0.5, size=(n, 2))
    return pts


def _surface_cylinder(rng, n):
    # radius 0.5, height 1: side area 2πrh, cap area 2πr²; sample by area
    r, h = 0.5, 1.0
    p_side = (2 * np.pi * r * h) / (2 * np.pi * r * h + 2 * np.pi * r * r)
    on_side = rng.random(n) < p_side
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pts = np.empty((n, 3))
    pts[:, 0] = np.cos(theta)
    pts[:, 1] = np.sin(theta)
    side_r = np.where(on_side, r, r * np.sqrt(rng.random(n)))
    pts[:, 0] *= side_r
    pts[:, 1] *= side_r
    z_side = rng.uniform(-h / 2, h / 2, size=n)
    z_cap = np.where(rng.random(n) < 0.5, -h / 2, h / 2)
    pts[:, 2] = np.where(on_side, z_side, z_cap)
    return pts


_SURFACES = {
    "sphere": _surface_sphere,
    "cube": _surface_cube,
    "plane": _surface_plane,
    "cylinder": _surface_cylinder,
}


def generate_shape(shape_class: str, n_points: int, seed: int, jitter: float = 0.0,
                   rotate: bool = False) -> PointCloud:
    """Sample a synthetic surface, jitter, optionally rotate, and normalize.

    Deterministic given (class, seed). ``rotate`` applies a uniformly random
    rotation before normalization so projected silhouettes vary per sample.
    """
    if shape_class not in _SURFACES:
        raise InputError(f"unknown shape class {shape_class!r}; expected one of {SHAPE_CLASSES}")
    if n_points < 8:
        raise InputError(f"generate_shape: need n_points ≥ 8, got {n_points}")
    rng = np.random.default_rng(seed)
    pts = _SURFACES[shape_class](rng, n_points)
    if jitter > 0:
        pts = pts + rng.normal(scale=jitter, size=pts.shape)
    if rotate:
        pts = pts @ _random_rotation(rng).T
    label = SHAPE_CLASSES.index(shape_class)
    cloud = PointCloud(pts, label=label, source_id=f"{shape_class}-{seed}")
    return normalize(cloud)


def _random_rotation(rng) -> np.ndarray:
    """Uniform random rotation matrix from a normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def make_synthetic_dataset(n_shapes: int, n_points: int, seed: int,
                           jitter: float = 0.0, rotate: bool = True) -> list[PointCloud]:
    """Round-robin over the four classes; sample i uses a seed derived from
    (seed, i) so datasets of different sizes share a prefix."""
    clouds = []
    for i in range(n_shapes):
        cls = SHAPE_CLASSES[i % len(SHAPE_CLASSES)]
        sample_seed = int(np.random.SeedSequence((seed, i)).generate_state(1)[0])
        clouds.append(generate_shape(cls, n_points, sample_seed, jitter=jitter, rotate=rotate))
    return clouds


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def read_xyz(path) -> PointCloud:
    """Parse whitespace-separated x y z triples, one per nonempty line."""
    path = Path(path)
    rows = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            fields = stripped.split()
            if len(fields) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(fields)}")
            try:
                rows.append([float(v) for v in fields])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric field in {stripped!r}") from None
    if not rows:
        raise FormatError(f"{path}: no points")
    return PointCloud(np.array(rows), source_id=str(path))


def write_xyz(cloud: PointCloud, path) -> None:
    with open(path, "w") as f:
        for x, y, z in cloud.points:
            f.write(f"{x:.17g} {y:.17g} {z:.17g}\n")


def read_manifest(path) -> list[tuple[str, int]]:
    """Dataset manifest: one ``path<TAB>label`` row per sample."""
    path = Path(path)
    entries = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.rstrip("\n")
            if not stripped:
                continue
            parts = stripped.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'path<TAB>label'")
            try:
                entries.append((parts[0], int(parts[1])))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: label {parts[1]!r} is not an integer") from None
    return entries


def load_manifest_clouds(path) -> list[PointCloud]:
    base = Path(path).parent
    clouds = []
    for rel, label in read_manifest(path):
        p = Path(rel)
        if not p.is_absolute():
            p = base / p
        cloud = read_xyz(p)
        cloud.label = label
        clouds.append(cloud)
    return clouds
