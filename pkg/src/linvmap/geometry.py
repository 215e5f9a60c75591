"""Point clouds, preprocessing, neighbor search, synthetic data and corruption."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .linalg import pairwise_dist

N_CURVE_BINS = 100


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    id: str = "cloud"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ContractError(f"point cloud {self.id!r} must be n x 3, got {pts.shape}")
        if pts.shape[0] < 4:
            raise ContractError(f"point cloud {self.id!r} needs at least 4 points, got {pts.shape[0]}")
        if not np.all(np.isfinite(pts)):
            raise ContractError(f"point cloud {self.id!r} has non-finite coordinates")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def with_points(self, points, id: str | None = None) -> "PointCloud":
        return PointCloud(points, self.id if id is None else id)


def _points(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or not np.all(np.isfinite(pts)):
        raise ContractError(f"expected a finite n x 3 point array, got shape {pts.shape}")
    return pts


def rms_radius(points: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.sum(points * points, axis=1))))


def normalize(cloud: PointCloud) -> PointCloud:
    """Center at the origin and scale to unit RMS radius.

    Unit RMS radius stands in for unit surface area, which a bare point cloud
    does not define.
    """
    pts = cloud.points
    centered = pts - pts.mean(axis=0)
    r = rms_radius(centered)
    if r <= 1e-300:
        raise ContractError(f"cannot normalize degenerate cloud {cloud.id!r} (all points coincide)")
    out = centered / r
    # one refinement pass pulls the centroid/radius residuals down to roundoff
    out = out - out.mean(axis=0)
    out = out / rms_radius(out)
    return cloud.with_points(out)


def is_normalized(cloud: PointCloud, tol: float = 1e-9) -> bool:
    pts = cloud.points
    return bool(np.all(np.abs(pts.mean(axis=0)) < tol) and abs(rms_radius(pts) - 1.0) < tol)


def knn(query, base, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest base points for each query point.

    Rows are sorted by ascending distance; equal distances keep the lower
    base index first.  Brute force, chunked over queries.
    """
    q = _points(query)
    b = _points(base)
    if k <= 0:
        raise ContractError("knn needs k >= 1")
    if k > b.shape[0]:
        raise ContractError(f"knn k={k} exceeds base size {b.shape[0]}")
    d2 = pairwise_dist(q, b, squared=True)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k]


# --- synthetic shapes -------------------------------------------------------

@dataclass(frozen=True)
class DeformationParams:
    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    bend: float = 0.0
    bend_axis: tuple[float, float, float] = (0.0, 0.0, 1.0)
    rotation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0

    def __post_init__(self):
        s = np.asarray(self.scale, dtype=np.float64)
        if s.shape != (3,) or np.any(s <= 0):
            raise ContractError(f"scale components must be positive, got {self.scale}")
        ax = np.asarray(self.bend_axis, dtype=np.float64)
        if ax.shape != (3,) or abs(np.linalg.norm(ax) - 1.0) > 1e-12:
            raise ContractError(f"bend axis must be a unit 3-vector, got {self.bend_axis}")
        if len(self.rotation) != 3:
            raise ContractError("rotation needs three Euler angles")


@dataclass(frozen=True)
class DeformationRanges:
    """Sampling ranges for random deformations."""

    scale: tuple[float, float] = (0.8, 1.2)
    bend: float = 0.6
    rotation: float = 0.3  # max absolute Euler angle, radians

    def __post_init__(self):
        lo, hi = self.scale
        if not (0.6 <= lo <= hi <= 1.4):
            raise ContractError(f"scale range must lie in [0.6, 1.4], got {self.scale}")
        if self.bend < 0 or self.rotation < 0:
            raise ContractError("bend and rotation ranges must be non-negative")

    @classmethod
    def none(cls) -> "DeformationRanges":
        return cls(scale=(1.0, 1.0), bend=0.0, rotation=0.0)


def sample_deformation(ranges: DeformationRanges, seed: int) -> DeformationParams:
    rng = np.random.default_rng(seed)
    scale = rng.uniform(ranges.scale[0], ranges.scale[1], size=3)
    bend = rng.uniform(-ranges.bend, ranges.bend)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    rot = rng.uniform(-ranges.rotation, ranges.rotation, size=3)
    return DeformationParams(
        scale=tuple(float(v) for v in scale),
        bend=float(bend),
        bend_axis=tuple(float(v) for v in axis / np.linalg.norm(axis)),
        rotation=tuple(float(v) for v in rot),
        seed=int(seed),
    )


def euler_matrix(angles) -> np.ndarray:
    """Rotation ``Rz(c) @ Ry(b) @ Rx(a)`` for angles ``(a, b, c)``."""
    a, b, c = angles
    ca, sa = math.cos(a), math.sin(a)
    cb, sb = math.cos(b), math.sin(b)
    cc, sc = math.cos(c), math.sin(c)
    rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    return rz @ ry @ rx


def _perpendicular(axis: np.ndarray) -> np.ndarray:
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    p = np.cross(axis, helper)
    return p / np.linalg.norm(p)


def deform(points: np.ndarray, params: DeformationParams) -> np.ndarray:
    """Apply anisotropic scale, then a smooth bend, then a rigid rotation.

    The bend rotates each point about an axis through the origin that is
    perpendicular to ``bend_axis``; the angle is ``bend`` times the point's
    coordinate along ``bend_axis``.
    """
    pts = np.asarray(points, dtype=np.float64) * np.asarray(params.scale)
    if params.bend != 0.0:
        axis = np.asarray(params.bend_axis)
        hinge = _perpendicular(axis)
        theta = params.bend * (pts @ axis)
        cos_t, sin_t = np.cos(theta)[:, None], np.sin(theta)[:, None]
        # Rodrigues rotation about `hinge`, one angle per point
        cross = np.cross(hinge, pts)
        along = (pts @ hinge)[:, None] * hinge
        pts = pts * cos_t + cross * sin_t + along * (1.0 - cos_t)
    if any(params.rotation):
        pts = pts @ euler_matrix(params.rotation).T
    return pts


def synth_pair(template: PointCloud, params: DeformationParams):
    """Return ``(x, y, correspondence)`` with ``y`` a deformed copy of ``x``.

    Point order is preserved, so the ground-truth correspondence is the
    identity.
    """
    x = normalize(template)
    moved = deform(x.points, params)
    if np.array_equal(moved, x.points):
        # skip renormalizing so zero deformation gives bitwise-equal clouds
        y = x.with_points(moved, id=f"{template.id}:def{params.seed}")
    else:
        y = normalize(x.with_points(moved, id=f"{template.id}:def{params.seed}"))
    return x, y, np.arange(x.n)


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = math.pi * (1.0 + 5.0 ** 0.5) * i
    return np.column_stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)])


def bumpy_sphere(n: int, seed: int = 0, bumps: int = 6, height: float = 0.25) -> PointCloud:
    """Sphere with a few smooth radial bumps, sampled uniformly at random."""
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    # bump centers are fixed so every sample comes from the same surface
    centers = _fibonacci_sphere(bumps)
    # per-bump heights break the symmetry between bumps
    radius = 1.0 + height * (np.exp(-((1.0 - d @ centers.T) / 0.15)) * np.linspace(0.6, 1.4, bumps)).sum(axis=1)
    return PointCloud(d * radius[:, None], id=f"bumpy_sphere:{seed}")


# segments of the stick figure: (start, end, tube radius)
_STICK_SEGMENTS = [
    ((0.0, 0.0, -0.1), (0.0, 0.0, 0.9), 0.22),   # torso
    ((0.0, 0.0, 0.9), (0.0, 0.0, 1.3), 0.16),    # head
    ((0.0, 0.0, 0.75), (-0.9, 0.0, 0.55), 0.08),  # left arm
    ((0.0, 0.0, 0.75), (0.8, 0.0, 0.95), 0.08),   # right arm
    ((-0.1, 0.0, -0.1), (-0.3, 0.0, -1.2), 0.10),  # left leg
    ((0.1, 0.0, -0.1), (0.35, 0.1, -1.15), 0.10),  # right leg
]


def stick_figure(n: int, seed: int = 0) -> PointCloud:
    """Cylinder-with-arms figure: tubes sampled proportionally to lateral area.

    Limbs are deliberately asymmetric so that left and right are
    distinguishable.
    """
    rng = np.random.default_rng(seed)
    seg = [(np.asarray(a, float), np.asarray(b, float), r) for a, b, r in _STICK_SEGMENTS]
    areas = np.array([np.linalg.norm(b - a) * r for a, b, r in seg])
    which = rng.choice(len(seg), size=n, p=areas / areas.sum())
    t = rng.uniform(size=n)
    ang = rng.uniform(0.0, 2.0 * math.pi, size=n)
    pts = np.empty((n, 3))
    for idx, (a, b, r) in enumerate(seg):
        mask = which == idx
        axis = (b - a) / np.linalg.norm(b - a)
        u = _perpendicular(axis)
        v = np.cross(axis, u)
        pts[mask] = (
            a + t[mask, None] * (b - a)
            + r * (np.cos(ang[mask])[:, None] * u + np.sin(ang[mask])[:, None] * v)
        )
    return PointCloud(pts, id=f"stick_figure:{seed}")


TEMPLATES = {"stick_figure": stick_figure, "bumpy_sphere": bumpy_sphere}


def make_template(name: str, n: int, seed: int = 0) -> PointCloud:
    try:
        fn = TEMPLATES[name]
    except KeyError:
        raise ContractError(f"unknown template {name!r}; choose from {sorted(TEMPLATES)}") from None
    return fn(n, seed)


# --- corruption -------------------------------------------------------------

CORRUPTION_MODES = ("noise", "outliers", "fragments")


def corrupt(cloud: PointCloud, mode: str, magnitude: float, seed: int = 0, n_balls: int = 5):
    """Corrupt ``cloud``; returns ``(corrupted, kept)``.

    ``kept`` lists the indices of original points present in the output, in
    output order.  For ``outliers`` the original points come first and the
    appended outliers are not listed.
    """
    if mode not in CORRUPTION_MODES:
        raise ContractError(f"unknown corruption mode {mode!r}")
    if magnitude < 0:
        raise ContractError(f"corruption magnitude must be >= 0, got {magnitude}")
    rng = np.random.default_rng(seed)
    pts = cloud.points
    n = pts.shape[0]
    if mode == "noise":
        if magnitude == 0:
            return cloud, np.arange(n)
        noisy = pts + rng.normal(scale=magnitude, size=pts.shape)
        return cloud.with_points(noisy, id=f"{cloud.id}:noise"), np.arange(n)
    if mode == "outliers":
        m = math.ceil(round(magnitude * n, 9))
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        extra = rng.uniform(lo, hi, size=(m, 3))
        return cloud.with_points(np.vstack([pts, extra]), id=f"{cloud.id}:outliers"), np.arange(n)
    if not 0 < magnitude <= 1:
        raise ContractError(f"fragment keep fraction must be in (0, 1], got {magnitude}")
    target = max(4, math.ceil(round(magnitude * n, 9)))
    if target >= n:
        return cloud, np.arange(n)
    centers = pts[rng.choice(n, size=min(n_balls, n), replace=False)]
    # each point's distance to its closest ball center; growing a common
    # radius admits points in this order
    dist = np.sqrt(pairwise_dist(pts, centers, squared=True)).min(axis=1)
    order = np.argsort(dist, kind="stable")
    kept = np.sort(order[:target])
    return cloud.with_points(pts[kept], id=f"{cloud.id}:fragments"), kept


# --- evaluation -------------------------------------------------------------

def point_errors(pred, gt, target) -> np.ndarray:
    """Euclidean distance on ``target`` between predicted and true matches."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    pts = _points(target)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ContractError(f"prediction/ground-truth length mismatch: {pred.shape} vs {gt.shape}")
    n_t = pts.shape[0]
    for name, idx in (("pred", pred), ("gt", gt)):
        if idx.size and (idx.min() < 0 or idx.max() >= n_t):
            raise ContractError(f"{name} indices out of range for target of {n_t} points")
    return np.linalg.norm(pts[pred] - pts[gt], axis=1)


def cumulative_curve(err: np.ndarray, thresholds: np.ndarray | None = None) -> np.ndarray:
    """``(m, 2)`` array of ``(threshold, fraction of errors <= threshold)``."""
    if thresholds is None:
        thresholds = np.linspace(0.0, 1.0, N_CURVE_BINS)
    err = np.asarray(err, dtype=np.float64)
    if err.size == 0:
        return np.column_stack([thresholds, np.ones_like(thresholds)])
    return np.column_stack([thresholds, (err[None, :] <= thresholds[:, None]).mean(axis=1)])


def correspondence_error(pred, gt, target, thresholds: np.ndarray | None = None):
    """Mean error and cumulative error curve of ``pred`` against ``gt``.

    Errors are measured on ``target`` as given; callers pass the normalized
    target so that numbers are comparable across shapes.
    """
    err = point_errors(pred, gt, target)
    mean = float(err.mean()) if err.size else 0.0
    return mean, cumulative_curve(err, thresholds)
