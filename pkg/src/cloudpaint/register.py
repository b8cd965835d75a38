"""Targetless LiDAR-camera extrinsic calibration.

Preprocesses LiDAR and SfM clouds (ceiling / ground / wall removal),
clusters them, matches clusters geometrically, recovers the metric scale
from inter-centroid distances, registers with RANSAC-initialised
two-phase ICP, refines jointly over all clusters, and converts the
global alignment into per-camera extrinsics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree
from scipy import ndimage

from .errors import (
    InvalidArgumentError,
    MatchingFailedError,
    RegistrationError,
)
from .geometry import (
    PointCloud,
    RigidTransform,
    compose,
    estimate_rigid,
    invert,
    orthonormalize,
    so3_exp,
)
from .sfm import CameraPose

DEFAULT_CEILING_HEIGHT = 2.3
DEFAULT_GROUND_CELL = 0.1
DEFAULT_SLOPE_TOL = 0.5
DEFAULT_WALL_NORMAL_TOL_DEG = 15.0
DEFAULT_DBSCAN_EPS = 0.25
DEFAULT_DBSCAN_MIN_PTS = 10
DEFAULT_CORRESPONDENCE_RADIUS = 0.05
MATCH_RESIDUAL_TOL = 0.10


# ---------------------------------------------------------------------------
# preprocessing

def statistical_outlier_filter(cloud: PointCloud, mean_k: int = 20,
                               std_ratio: float = 2.0) -> PointCloud:
    """Drop points whose mean k-NN distance exceeds the global mean by
    more than std_ratio standard deviations."""
    pts = cloud.points
    if len(pts) <= mean_k:
        return cloud
    tree = cKDTree(pts)
    d, _ = tree.query(pts, k=mean_k + 1)
    mean_d = d[:, 1:].mean(axis=1)
    keep = mean_d <= mean_d.mean() + std_ratio * mean_d.std()
    return PointCloud(pts[keep], cloud.timestamp)


def estimate_normals(points: np.ndarray, k: int = 20):
    """Per-point normal and curvature from a k-NN plane fit.

    Curvature is the smallest-eigenvalue fraction of the local
    covariance; isolated/degenerate neighbourhoods get a zero normal.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    kk = min(k + 1, n)
    normals = np.zeros((n, 3))
    curvature = np.zeros(n)
    if n < 3:
        return normals, curvature
    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=kk)
    for i in range(n):
        nb = pts[idx[i]]
        cov = np.cov(nb.T)
        try:
            w, v = np.linalg.eigh(cov)
        except np.linalg.LinAlgError:
            continue
        if w.sum() <= 0:
            continue
        normals[i] = v[:, 0]
        curvature[i] = w[0] / w.sum()
    return normals, curvature


def _ground_mask(pts: np.ndarray, cell: float, slope_tol: float) -> np.ndarray:
    """Simplified morphological ground filter: rasterise to a minimum-z
    grid, apply progressively growing morphological openings, flag points
    within a slope-adjusted tolerance of the opened surface."""
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    ix = np.floor((x - x.min()) / cell).astype(int)
    iy = np.floor((y - y.min()) / cell).astype(int)
    nx, ny = ix.max() + 1, iy.max() + 1
    grid = np.full((nx, ny), np.inf)
    np.minimum.at(grid, (ix, iy), z)
    filled = np.where(np.isinf(grid), np.nanmax(np.where(np.isinf(grid), np.nan, grid)), grid)
    surf = filled
    for w in (3, 5, 9):
        surf = ndimage.grey_opening(surf, size=(min(w, nx), min(w, ny)))
    tol = slope_tol * cell
    return z - surf[ix, iy] <= tol


def _wall_mask(pts: np.ndarray, normals: np.ndarray, tol_deg: float,
               min_fraction: float = 0.05, rng_seed: int = 0) -> np.ndarray:
    """Flag points on large vertical planes: normal close to horizontal
    AND member of a RANSAC plane holding >= min_fraction of the points."""
    n = len(pts)
    horiz = np.abs(normals[:, 2]) <= math.sin(math.radians(tol_deg))
    horiz &= np.linalg.norm(normals, axis=1) > 0.5
    wall = np.zeros(n, dtype=bool)
    cand = np.flatnonzero(horiz & ~wall)
    rng = np.random.default_rng(rng_seed)
    plane_tol = 0.03
    while len(cand) > max(3, int(min_fraction * n)):
        best_inliers = None
        for _ in range(60):
            i = rng.choice(cand)
            p0, n0 = pts[i], normals[i]
            d = np.abs((pts[cand] - p0) @ n0)
            align = np.abs(normals[cand] @ n0) > math.cos(math.radians(25))
            inl = cand[(d < plane_tol) & align]
            if best_inliers is None or len(inl) > len(best_inliers):
                best_inliers = inl
        if best_inliers is None or len(best_inliers) < min_fraction * n:
            break
        # refit the plane on its consensus set (anchor normals are noisy
        # near edges) and re-select inliers before marking
        sel = pts[best_inliers]
        centre = sel.mean(axis=0)
        w_eig, v_eig = np.linalg.eigh(np.cov((sel - centre).T))
        n_fit = v_eig[:, 0]
        d = np.abs((pts[cand] - centre) @ n_fit)
        refined = cand[d < plane_tol]
        if len(refined) >= len(best_inliers):
            best_inliers = refined
        wall[best_inliers] = True
        cand = np.flatnonzero(horiz & ~wall)
    return wall


def preprocess_cloud(cloud: PointCloud,
                     ceiling_height: float = DEFAULT_CEILING_HEIGHT,
                     cell: float = DEFAULT_GROUND_CELL,
                     slope_tol: float = DEFAULT_SLOPE_TOL,
                     wall_normal_tol: float = DEFAULT_WALL_NORMAL_TOL_DEG
                     ) -> PointCloud:
    """Remove ceiling (height threshold), ground (morphological filter)
    and wall (vertical RANSAC planes) points, keeping object points."""
    if ceiling_height <= 0 or cell <= 0 or slope_tol <= 0 or wall_normal_tol <= 0:
        raise InvalidArgumentError("preprocessing parameters must be positive")
    pts = cloud.points
    if len(pts) == 0:
        return cloud
    keep = pts[:, 2] < ceiling_height
    pts = pts[keep]
    if len(pts) == 0:
        return PointCloud(np.empty((0, 3)), cloud.timestamp)
    ground = _ground_mask(pts, cell, slope_tol)
    pts = pts[~ground]
    if len(pts) < 10:
        return PointCloud(pts, cloud.timestamp)
    normals, _ = estimate_normals(pts)
    wall = _wall_mask(pts, normals, wall_normal_tol)
    return PointCloud(pts[~wall], cloud.timestamp)


# ---------------------------------------------------------------------------
# clustering

@dataclass(frozen=True)
class ClusterDescriptor:
    point_count: int
    extents: tuple[float, float, float]
    height_above_ground: float


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[PointCloud, ...]
    centroids: np.ndarray
    descriptors: tuple[ClusterDescriptor, ...]

    def __len__(self) -> int:
        return len(self.clusters)

    @classmethod
    def from_clouds(cls, clouds, ground_z: float = 0.0) -> "ClusterSet":
        clouds = tuple(clouds)
        cents = np.array([c.points.mean(axis=0) for c in clouds]) \
            if clouds else np.empty((0, 3))
        descs = tuple(
            ClusterDescriptor(
                len(c),
                tuple(c.points.max(axis=0) - c.points.min(axis=0)),
                float(cents[i][2] - ground_z),
            )
            for i, c in enumerate(clouds)
        )
        return cls(clouds, cents, descs)


def dbscan(cloud: PointCloud, eps: float = DEFAULT_DBSCAN_EPS,
           min_pts: int = DEFAULT_DBSCAN_MIN_PTS):
    """Standard DBSCAN; clusters are labelled in order of their lowest
    point index, noise returned separately."""
    if eps <= 0 or min_pts < 1:
        raise InvalidArgumentError("eps must be > 0 and min_pts >= 1")
    pts = cloud.points
    n = len(pts)
    if n == 0:
        return ClusterSet.from_clouds([]), PointCloud(np.empty((0, 3)))
    tree = cKDTree(pts)
    neighbours = tree.query_ball_point(pts, eps)
    core = np.array([len(nb) >= min_pts for nb in neighbours])
    labels = np.full(n, -1, dtype=int)
    cluster_id = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        # BFS over density-connected core points
        labels[i] = cluster_id
        queue = [i]
        while queue:
            j = queue.pop()
            if not core[j]:
                continue
            for m in neighbours[j]:
                if labels[m] == -1:
                    labels[m] = cluster_id
                    queue.append(m)
        cluster_id += 1
    ground_z = float(pts[:, 2].min())
    clouds = [PointCloud(pts[labels == c], cloud.timestamp)
              for c in range(cluster_id)]
    noise = PointCloud(pts[labels == -1], cloud.timestamp)
    return ClusterSet.from_clouds(clouds, ground_z), noise


# ---------------------------------------------------------------------------
# cluster matching and scale

def _pairwise_dists(centroids: np.ndarray) -> np.ndarray:
    d = centroids[:, None, :] - centroids[None, :, :]
    return np.linalg.norm(d, axis=2)


def match_clusters(a: ClusterSet, b: ClusterSet,
                   residual_tol: float = MATCH_RESIDUAL_TOL):
    """Match clusters across modalities by centroid-distance-graph
    consistency with descriptor similarity tie-breaks.

    Seeds every ordered pair hypothesis, estimates a tentative scale from
    it, extends greedily, and keeps the assignment with the most matches
    and lowest distance residual. Raises MatchingFailedError when no
    assignment achieves the residual tolerance.
    """
    if len(a) == 0 or len(b) == 0:
        raise InvalidArgumentError("both cluster sets must be non-empty")
    if len(a) == 1 and len(b) == 1:
        return [(0, 0)]
    da = _pairwise_dists(a.centroids)
    db = _pairwise_dists(b.centroids)
    best = None
    best_key = None
    for i, k in combinations(range(len(a)), 2):
        for j in range(len(b)):
            for l in range(len(b)):
                if j == l or db[j, l] <= 0:
                    continue
                scale = da[i, k] / db[j, l]
                pairs, resid = _extend_match(a, b, da, db, scale,
                                             [(i, j), (k, l)], residual_tol)
                key = (-len(pairs), resid)
                if best_key is None or key < best_key:
                    best_key = key
                    best = pairs
    if best is None or len(best) < 2 or best_key[1] > residual_tol:
        raise MatchingFailedError("no consistent cluster assignment found")
    return sorted(best)


def _descriptor_penalty(da: ClusterDescriptor, db: ClusterDescriptor,
                        scale: float) -> float:
    ea = np.sort(da.extents)
    eb = np.sort(db.extents) * scale
    ext = np.abs(ea - eb) / np.maximum(ea, 1e-9)
    return float(ext.mean())


def _extend_match(a, b, da, db, scale, seed, residual_tol):
    pairs = list(seed)
    used_a = {p[0] for p in pairs}
    used_b = {p[1] for p in pairs}
    improved = True
    while improved:
        improved = False
        best_cand = None
        best_score = None
        for i in range(len(a)):
            if i in used_a:
                continue
            for j in range(len(b)):
                if j in used_b:
                    continue
                resids = [abs(da[i, p[0]] - scale * db[j, p[1]]) /
                          max(da[i, p[0]], 1e-9) for p in pairs]
                r = max(resids)
                if r > residual_tol:
                    continue
                score = r + 0.1 * _descriptor_penalty(a.descriptors[i],
                                                      b.descriptors[j], scale)
                if best_score is None or score < best_score:
                    best_score = score
                    best_cand = (i, j)
        if best_cand is not None:
            pairs.append(best_cand)
            used_a.add(best_cand[0])
            used_b.add(best_cand[1])
            improved = True
    resid = _match_residual(da, db, scale, pairs)
    return pairs, resid


def _match_residual(da, db, scale, pairs) -> float:
    if len(pairs) < 2:
        return math.inf
    vals = []
    for (i, j), (k, l) in combinations(pairs, 2):
        ref = da[i, k]
        if ref <= 0:
            continue
        vals.append(abs(ref - scale * db[j, l]) / ref)
    return max(vals) if vals else math.inf


@dataclass(frozen=True)
class ScaleFactor:
    s: float

    def __post_init__(self):
        if not (self.s > 0 and math.isfinite(self.s)):
            raise InvalidArgumentError("scale must be positive and finite")


def scale_factor(a: ClusterSet, b: ClusterSet, pairs) -> ScaleFactor:
    """Ratio of average inter-centroid distances over matched cluster
    pairs; multiplying b (the scale-free cloud) by s aligns it with a."""
    if len(pairs) < 2:
        raise InvalidArgumentError("need at least 2 matched pairs")
    num = 0.0
    den = 0.0
    cnt = 0
    for (i, j), (k, l) in combinations(pairs, 2):
        num += float(np.linalg.norm(a.centroids[i] - a.centroids[k]))
        den += float(np.linalg.norm(b.centroids[j] - b.centroids[l]))
        cnt += 1
    if den <= 0:
        raise InvalidArgumentError("coincident centroids give degenerate scale")
    return ScaleFactor((num / cnt) / (den / cnt))


# ---------------------------------------------------------------------------
# registration

@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    rms: float
    fitness: float
    iterations: int


def _local_descriptors(pts: np.ndarray, normals: np.ndarray,
                       curvature: np.ndarray, radius: float) -> np.ndarray:
    """Simple normal/curvature histogram descriptor per point: histogram
    of normal angle differences to neighbours plus own curvature."""
    tree = cKDTree(pts)
    n = len(pts)
    bins = 6
    desc = np.zeros((n, bins + 1))
    neigh = tree.query_ball_point(pts, radius)
    for i in range(n):
        nb = [j for j in neigh[i] if j != i]
        if nb:
            cosang = np.clip(normals[nb] @ normals[i], -1.0, 1.0)
            ang = np.arccos(np.abs(cosang))  # orientation-invariant
            h, _ = np.histogram(ang, bins=bins, range=(0, math.pi / 2))
            desc[i, :bins] = h / len(nb)
        desc[i, bins] = curvature[i] * 10.0
    return desc


def ransac_coarse_align(source: PointCloud, target: PointCloud,
                        iterations: int = 300, seed: int = 0,
                        inlier_radius: float | None = None
                        ) -> RegistrationResult:
    """Coarse alignment without an initial guess: match local
    normal/curvature descriptors, sample 3-point correspondences, and
    keep the rigid hypothesis with the largest consensus."""
    src, tgt = source.points, target.points
    if len(src) < 50 or len(tgt) < 50:
        raise InvalidArgumentError("register_pair needs >= 50 points per cloud")
    diag = float(np.linalg.norm(tgt.max(axis=0) - tgt.min(axis=0)))
    if inlier_radius is None:
        inlier_radius = max(0.05, diag * 0.05)
    feat_radius = max(0.1, diag * 0.1)
    sn, sc = estimate_normals(src)
    tn, tc = estimate_normals(tgt)
    sd = _local_descriptors(src, sn, sc, feat_radius)
    td = _local_descriptors(tgt, tn, tc, feat_radius)
    ftree = cKDTree(td)
    _, cand = ftree.query(sd, k=1)
    rng = np.random.default_rng(seed)
    ttree = cKDTree(tgt)
    # subsample source for consensus evaluation
    eval_idx = rng.choice(len(src), min(len(src), 400), replace=False)
    best = None
    best_count = -1
    for _ in range(iterations):
        pick = rng.choice(len(src), 3, replace=False)
        s3 = src[pick]
        t3 = tgt[cand[pick]]
        # reject near-collinear samples
        if np.linalg.norm(np.cross(s3[1] - s3[0], s3[2] - s3[0])) < 1e-9:
            continue
        try:
            t = estimate_rigid(s3, t3)
        except (InvalidArgumentError, np.linalg.LinAlgError):
            continue
        moved = t.apply(src[eval_idx])
        d, _ = ttree.query(moved, k=1, distance_upper_bound=inlier_radius)
        count = int(np.isfinite(d).sum())
        if count > best_count:
            best_count = count
            best = t
    consensus = best_count / len(eval_idx)
    if best is None or consensus < 0.2:
        raise RegistrationError(
            f"coarse-failed: consensus {consensus:.2f} below 0.20")
    moved = best.apply(src)
    d, _ = ttree.query(moved, k=1)
    return RegistrationResult(best, float(np.sqrt(np.mean(d ** 2))),
                              consensus, iterations)


def point_to_plane_icp(source: PointCloud, target: PointCloud,
                       initial: RigidTransform,
                       max_iterations: int = 50,
                       start_radius: float = 0.5,
                       end_radius: float = 0.05,
                       tol: float = 1e-6) -> RegistrationResult:
    """Point-to-plane ICP with a halving match radius schedule."""
    src, tgt = source.points, target.points
    tn, _ = estimate_normals(tgt)
    ttree = cKDTree(tgt)
    t = initial
    radius = start_radius
    it = 0
    for it in range(1, max_iterations + 1):
        moved = t.apply(src)
        d, idx = ttree.query(moved, k=1, distance_upper_bound=radius)
        ok = np.isfinite(d)
        if ok.sum() < 6:
            radius = max(radius / 2, end_radius)
            continue
        p = moved[ok]
        q = tgt[idx[ok]]
        nrm = tn[idx[ok]]
        # rows: [cross(p, n), n] (omega, dt); rhs: -n . (p - q)
        a = np.hstack([np.cross(p, nrm), nrm])
        b = -np.sum(nrm * (p - q), axis=1)
        try:
            x, *_ = np.linalg.lstsq(a, b, rcond=None)
        except np.linalg.LinAlgError:
            break
        dr = so3_exp(x[:3])
        t = RigidTransform(orthonormalize(dr @ t.rotation),
                           dr @ t.translation + x[3:])
        radius = max(radius / 2, end_radius)
        if np.linalg.norm(x) < tol:
            break
    moved = t.apply(src)
    d, _ = ttree.query(moved, k=1)
    fitness = float(np.mean(d < end_radius))
    rms = float(np.sqrt(np.mean(np.minimum(d, end_radius * 10) ** 2)))
    return RegistrationResult(t, rms, fitness, it)


def register_pair(source: PointCloud, target: PointCloud,
                  seed: int = 0) -> RegistrationResult:
    """Two-phase registration: RANSAC descriptor-matched coarse alignment
    followed by point-to-plane ICP refinement."""
    coarse = ransac_coarse_align(source, target, seed=seed)
    result = point_to_plane_icp(source, target, coarse.transform)
    if result.fitness < 0.3:
        raise RegistrationError(
            f"refine-failed: fitness {result.fitness:.2f} below 0.30")
    return result


def _joint_residual(pairs_data, t: RigidTransform) -> float:
    total = 0.0
    count = 0
    for src, tgt, tn, ttree in pairs_data:
        moved = t.apply(src)
        d, idx = ttree.query(moved, k=1)
        r = np.sum(tn[idx] * (moved - tgt[idx]), axis=1)
        total += float(r @ r)
        count += len(r)
    return total / max(count, 1)


def joint_refine(cluster_pairs, initial: RigidTransform,
                 max_iterations: int = 30, refine_scale: bool = False):
    """One transform minimising the summed point-to-plane residual over
    all cluster pairs simultaneously (damped Gauss-Newton).

    With ``refine_scale`` a uniform scale multiplier is estimated
    alongside the rigid parameters (a 7-dof similarity) and the result
    is the pair ``(transform, scale_multiplier)``; otherwise the rigid
    transform alone is returned.
    """
    if not cluster_pairs:
        raise InvalidArgumentError("need at least one cluster pair")
    pairs_data = []
    for src_cloud, tgt_cloud in cluster_pairs:
        tgt = tgt_cloud.points
        tn, _ = estimate_normals(tgt)
        pairs_data.append((src_cloud.points, tgt, tn, cKDTree(tgt)))

    def residual_at(tr, sg):
        total = 0.0
        count = 0
        for src, tgt, tn, ttree in pairs_data:
            moved = sg * (src @ tr.rotation.T) + tr.translation
            _, idx = ttree.query(moved, k=1)
            r = np.sum(tn[idx] * (moved - tgt[idx]), axis=1)
            total += float(r @ r)
            count += len(r)
        return total / max(count, 1)

    t = initial
    sigma = 1.0
    resid = residual_at(t, sigma)
    bad_steps = 0
    lam = 0.0
    for _ in range(max_iterations):
        if resid < 1e-18:  # already converged; no step can improve
            break
        rows_a = []
        rows_b = []
        for src, tgt, tn, ttree in pairs_data:
            moved = sigma * (src @ t.rotation.T) + t.translation
            _, idx = ttree.query(moved, k=1)
            nrm = tn[idx]
            cols = [np.cross(moved, nrm), nrm]
            if refine_scale:
                cols.append(np.sum(nrm * moved, axis=1, keepdims=True))
            rows_a.append(np.hstack(cols))
            rows_b.append(-np.sum(nrm * (moved - tgt[idx]), axis=1))
        a = np.vstack(rows_a)
        b = np.concatenate(rows_b)
        ata = a.T @ a
        x = np.linalg.solve(ata + lam * np.diag(np.diag(ata) + 1e-12), a.T @ b)
        dr = so3_exp(x[:3])
        if refine_scale:
            ds = 1.0 + x[6]
            if ds <= 0.0:
                ds = 1e-3  # never let the similarity collapse
            cand_sigma = sigma * ds
            cand = RigidTransform(orthonormalize(dr @ t.rotation),
                                  ds * (dr @ t.translation) + x[3:6])
        else:
            cand_sigma = sigma
            cand = RigidTransform(orthonormalize(dr @ t.rotation),
                                  dr @ t.translation + x[3:6])
        new_resid = residual_at(cand, cand_sigma)
        if new_resid <= resid:
            t = cand
            sigma = cand_sigma
            bad_steps = 0
            lam = max(lam / 10, 0.0)
            if resid - new_resid < 1e-16:
                resid = new_resid
                break
            resid = new_resid
        else:
            if not math.isfinite(new_resid):
                raise RegistrationError("refine-failed: diverging joint step")
            bad_steps += 1
            lam = 10.0 * max(lam, 1e-6)
            if bad_steps >= 5:
                # damping no longer finds a descent direction: the
                # estimate is stationary at the data's noise floor
                break
    return (t, sigma) if refine_scale else t


def camera_extrinsic(global_transform: RigidTransform,
                     camera_pose: CameraPose) -> RigidTransform:
    """LiDAR-to-camera extrinsic from the global SfM-to-LiDAR alignment
    and the camera's SfM-world pose."""
    return compose(camera_pose.transform, invert(global_transform))


def correspondence_score(lidar_cluster: PointCloud, sfm_cluster: PointCloud,
                         t: RigidTransform,
                         radius: float = DEFAULT_CORRESPONDENCE_RADIUS
                         ) -> float:
    """Percentage of LiDAR cluster points with a transformed SfM point
    within `radius`."""
    if radius <= 0:
        raise InvalidArgumentError("radius must be positive")
    if len(lidar_cluster) == 0:
        raise InvalidArgumentError("empty lidar cluster")
    moved = t.apply(sfm_cluster.points)
    tree = cKDTree(moved)
    d, _ = tree.query(lidar_cluster.points, k=1, distance_upper_bound=radius)
    return float(np.mean(np.isfinite(d))) * 100.0


# ---------------------------------------------------------------------------
# full extrinsic calibration pipeline

@dataclass
class ExtrinsicCalibration:
    scale: float
    sfm_to_lidar: RigidTransform
    extrinsics: dict[int, RigidTransform]
    cluster_pairs: list[tuple[int, int]]
    correspondence_scores: list[float]
    joint_rms: float


def calibrate_extrinsics(lidar_objects: PointCloud, sfm_objects: PointCloud,
                         camera_poses: dict[int, CameraPose],
                         eps: float = DEFAULT_DBSCAN_EPS,
                         min_pts: int = DEFAULT_DBSCAN_MIN_PTS,
                         score_radius: float = DEFAULT_CORRESPONDENCE_RADIUS,
                         seed: int = 0) -> ExtrinsicCalibration:
    """Cluster both object clouds, match, recover scale, register the
    scaled SfM cloud onto the LiDAR cloud and derive per-camera
    extrinsics (LiDAR -> camera)."""
    la, _ = dbscan(lidar_objects, eps, min_pts)
    # rough scale from bounding boxes keeps DBSCAN eps comparable in the
    # scale-free SfM frame
    rough = _bbox_diag(lidar_objects.points) / max(_bbox_diag(sfm_objects.points), 1e-12)
    sb, _ = dbscan(sfm_objects, eps / rough, min_pts)
    if len(la) < 2 or len(sb) < 2:
        raise MatchingFailedError("fewer than 2 clusters on one side")
    pairs = match_clusters(la, sb)
    s = scale_factor(la, sb, pairs)
    # rebuild pair clouds at metric scale from the matched assignment
    src_clouds = [PointCloud(sb.clusters[j].points * s.s) for _, j in pairs]
    tgt_clouds = [la.clusters[i] for i, _ in pairs]
    if len(pairs) >= 3:
        initial = estimate_rigid(
            np.array([c.points.mean(axis=0) for c in src_clouds]),
            np.array([c.points.mean(axis=0) for c in tgt_clouds]))
    else:
        initial = register_pair(src_clouds[0], tgt_clouds[0], seed=seed).transform
    refined, sigma = joint_refine(list(zip(src_clouds, tgt_clouds)), initial,
                                  refine_scale=True)
    scale = s.s * sigma
    # re-express the matched SfM clusters at the refined scale so the
    # quality numbers describe the delivered similarity
    src_clouds = [PointCloud(c.points * sigma) for c in src_clouds]
    scores = [correspondence_score(tgt, src, refined, score_radius)
              for src, tgt in zip(src_clouds, tgt_clouds)]
    rms = math.sqrt(_joint_residual(
        [(src.points, tgt.points, estimate_normals(tgt.points)[0],
          cKDTree(tgt.points)) for src, tgt in zip(src_clouds, tgt_clouds)],
        refined))
    extrinsics = {
        cam_id: _extrinsic_with_scale(refined, scale, pose)
        for cam_id, pose in camera_poses.items()
    }
    return ExtrinsicCalibration(scale, refined, extrinsics, pairs, scores, rms)


def _extrinsic_with_scale(sfm_to_lidar: RigidTransform, s: float,
                          pose: CameraPose) -> RigidTransform:
    """LiDAR -> camera map for a camera pose expressed in the unscaled
    SfM frame. Scaling the frame by s turns (R_c, t_c) into (R_c, s t_c);
    composing with the inverse global alignment yields the extrinsic."""
    metric_pose = CameraPose(
        RigidTransform(pose.transform.rotation, s * pose.transform.translation),
        pose.view)
    return camera_extrinsic(sfm_to_lidar, metric_pose)


def _bbox_diag(pts: np.ndarray) -> float:
    if len(pts) == 0:
        return 0.0
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
