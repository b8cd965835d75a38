"""Two-view and multi-view geometry on supplied 2D-2D correspondences.

Feature detection and matching are out of scope; correspondences come
from the synthetic generator or an external matcher. Poses follow the
world-to-camera convention: x ~ K [R | t] X.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCameraError,
    DecompositionFailedError,
    EstimationFailedError,
    IllConditionedError,
    InvalidArgumentError,
)
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    orthonormalize,
    skew,
    so3_exp,
)

RANSAC_ITERATIONS = 1000
RANSAC_THRESHOLD_PX = 1.0
MIN_INLIER_RATIO = 0.3


@dataclass(frozen=True)
class Correspondence:
    """Matched pixel pair between view A (x) and view B (x_prime)."""

    x: tuple[float, float]
    x_prime: tuple[float, float]
    weight: float = 1.0


@dataclass(frozen=True)
class FundamentalResult:
    f: np.ndarray  # rank-2, unit Frobenius norm
    inliers: np.ndarray  # boolean mask over input correspondences
    residual_rms: float  # RMS of x'^T F x over inliers


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera pose of one view."""

    transform: RigidTransform
    view: int = 0


@dataclass(frozen=True)
class Observation:
    point: int
    view: int
    pixel: tuple[float, float]


def _homog(pts: np.ndarray) -> np.ndarray:
    return np.hstack([pts, np.ones((len(pts), 1))])


def _normalise(pts: np.ndarray):
    """Hartley normalisation: centroid at origin, mean distance sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.mean(np.linalg.norm(pts - c, axis=1))
    s = math.sqrt(2.0) / d if d > 0 else 1.0
    t = np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1]])
    return (pts - c) * s, t


def _eight_point(xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
    na, ta = _normalise(xa)
    nb, tb = _normalise(xb)
    a = np.empty((len(xa), 9))
    a[:, 0] = nb[:, 0] * na[:, 0]
    a[:, 1] = nb[:, 0] * na[:, 1]
    a[:, 2] = nb[:, 0]
    a[:, 3] = nb[:, 1] * na[:, 0]
    a[:, 4] = nb[:, 1] * na[:, 1]
    a[:, 5] = nb[:, 1]
    a[:, 6] = na[:, 0]
    a[:, 7] = na[:, 1]
    a[:, 8] = 1.0
    _, _, vt = np.linalg.svd(a)
    f = vt[-1].reshape(3, 3)
    u, s, vt2 = np.linalg.svd(f)
    f = u @ np.diag([s[0], s[1], 0.0]) @ vt2  # enforce rank 2
    f = tb.T @ f @ ta  # denormalise
    return f / np.linalg.norm(f)


def _sampson_distance(f: np.ndarray, xa: np.ndarray, xb: np.ndarray):
    ha = _homog(xa)
    hb = _homog(xb)
    fx = ha @ f.T  # rows: F x
    ftx = hb @ f  # rows: F^T x'
    num = np.sum(hb * fx, axis=1) ** 2
    den = fx[:, 0] ** 2 + fx[:, 1] ** 2 + ftx[:, 0] ** 2 + ftx[:, 1] ** 2
    return np.sqrt(num / np.maximum(den, 1e-300))


def epipolar_residuals(f: np.ndarray, corrs) -> np.ndarray:
    xa = np.array([c.x for c in corrs])
    xb = np.array([c.x_prime for c in corrs])
    return np.abs(np.sum(_homog(xb) * (_homog(xa) @ f.T), axis=1))


def estimate_fundamental(corrs, threshold: float = RANSAC_THRESHOLD_PX,
                         iterations: int = RANSAC_ITERATIONS,
                         seed: int | None = 0) -> FundamentalResult:
    """Normalised 8-point algorithm inside a RANSAC loop with Sampson
    distance; final F is re-estimated on the consensus set."""
    if len(corrs) < 8:
        raise InvalidArgumentError("need at least 8 correspondences")
    xa = np.array([c.x for c in corrs], dtype=np.float64)
    xb = np.array([c.x_prime for c in corrs], dtype=np.float64)
    rng = np.random.default_rng(seed)
    best_mask = None
    best_count = -1
    n = len(corrs)
    for _ in range(iterations):
        idx = rng.choice(n, 8, replace=False)
        try:
            f = _eight_point(xa[idx], xb[idx])
        except np.linalg.LinAlgError:
            continue
        mask = _sampson_distance(f, xa, xb) < threshold
        count = int(mask.sum())
        if count > best_count:
            best_count = count
            best_mask = mask
    if best_mask is None or best_count < 8:
        raise EstimationFailedError("RANSAC found no model")
    if best_count / n < MIN_INLIER_RATIO:
        raise EstimationFailedError(
            f"inlier ratio {best_count / n:.2f} below {MIN_INLIER_RATIO}")
    f = _eight_point(xa[best_mask], xb[best_mask])
    # one consensus refresh after the re-estimate
    mask = _sampson_distance(f, xa, xb) < threshold
    if mask.sum() >= 8:
        f = _eight_point(xa[mask], xb[mask])
        mask = _sampson_distance(f, xa, xb) < threshold
    else:
        mask = best_mask
    res = np.sum(_homog(xb[mask]) * (_homog(xa[mask]) @ f.T), axis=1)
    return FundamentalResult(f, mask, float(np.sqrt(np.mean(res ** 2))))


def essential_from_fundamental(f: np.ndarray,
                               k: CameraIntrinsics) -> np.ndarray:
    """E = K^T F K, projected onto the essential manifold (two equal
    singular values, third zero)."""
    km = k.matrix()
    e = km.T @ np.asarray(f) @ km
    u, s, vt = np.linalg.svd(e)
    sigma = (s[0] + s[1]) / 2.0
    return u @ np.diag([sigma, sigma, 0.0]) @ vt


def _triangulate_dlt(pa: np.ndarray, pb: np.ndarray, xa, xb) -> np.ndarray:
    a = np.array([
        xa[0] * pa[2] - pa[0],
        xa[1] * pa[2] - pa[1],
        xb[0] * pb[2] - pb[0],
        xb[1] * pb[2] - pb[1],
    ])
    _, _, vt = np.linalg.svd(a)
    xh = vt[-1]
    if abs(xh[3]) < 1e-300:
        raise IllConditionedError("point at infinity")
    return xh[:3] / xh[3]


def decompose_essential(e: np.ndarray, corrs, k: CameraIntrinsics) -> CameraPose:
    """Pick the (R, t) candidate passing the cheirality test; ||t|| = 1."""
    if len(corrs) < 1:
        raise InvalidArgumentError("need at least one inlier correspondence")
    u, _, vt = np.linalg.svd(np.asarray(e))
    if np.linalg.det(u) < 0:
        u = -u
    if np.linalg.det(vt) < 0:
        vt = -vt
    w = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    r_cands = [u @ w @ vt, u @ w.T @ vt]
    t_cands = [u[:, 2], -u[:, 2]]
    km = k.matrix()
    pa = km @ np.hstack([np.eye(3), np.zeros((3, 1))])
    best = None
    best_pos = -1
    for r in r_cands:
        for t in t_cands:
            pb = km @ np.hstack([r, t.reshape(3, 1)])
            pos = 0
            for c in corrs:
                try:
                    x = _triangulate_dlt(pa, pb, c.x, c.x_prime)
                except IllConditionedError:
                    continue
                za = x[2]
                zb = (r @ x + t)[2]
                if za > 0 and zb > 0:
                    pos += 1
            if pos > best_pos:
                best_pos = pos
                best = (r, t)
    if best is None or best_pos <= len(corrs) // 2:
        raise DecompositionFailedError("no candidate passed cheirality")
    r, t = best
    return CameraPose(RigidTransform(orthonormalize(r), t / np.linalg.norm(t)), 1)


def _project(km: np.ndarray, r: np.ndarray, t: np.ndarray, x: np.ndarray):
    p = r @ x + t
    if p[2] <= 0:
        return None
    uvw = km @ p
    return uvw[:2] / uvw[2]


def triangulation_angle_deg(pose_a: CameraPose, pose_b: CameraPose,
                            x: np.ndarray) -> float:
    ca = -pose_a.transform.rotation.T @ pose_a.transform.translation
    cb = -pose_b.transform.rotation.T @ pose_b.transform.translation
    va = x - ca
    vb = x - cb
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0 or nb == 0:
        return 0.0
    c = float(np.dot(va, vb) / (na * nb))
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def triangulate(corr: Correspondence, pose_a: CameraPose, pose_b: CameraPose,
                k: CameraIntrinsics, gn_iterations: int = 10) -> np.ndarray:
    """DLT initialisation followed by Gauss-Newton on the two-view
    reprojection objective."""
    ta, tb = pose_a.transform, pose_b.transform
    baseline = np.linalg.norm(
        (-ta.rotation.T @ ta.translation) - (-tb.rotation.T @ tb.translation))
    if baseline < 1e-12:
        raise IllConditionedError("zero baseline between views")
    km = k.matrix()
    pa = km @ np.hstack([ta.rotation, ta.translation.reshape(3, 1)])
    pb = km @ np.hstack([tb.rotation, tb.translation.reshape(3, 1)])
    x = _triangulate_dlt(pa, pb, corr.x, corr.x_prime)
    if triangulation_angle_deg(pose_a, pose_b, x) < 0.1:
        raise IllConditionedError("triangulation angle below 0.1 degrees")
    obs = np.array([corr.x, corr.x_prime])
    poses = [ta, tb]
    for _ in range(gn_iterations):
        jac = np.zeros((4, 3))
        res = np.zeros(4)
        for v, t in enumerate(poses):
            p = t.rotation @ x + t.translation
            if p[2] <= 0:
                raise BehindCameraError("negative depth during refinement")
            u = k.fx * p[0] / p[2] + k.skew * p[1] / p[2] + k.cx
            vv = k.fy * p[1] / p[2] + k.cy
            res[2 * v:2 * v + 2] = [u - obs[v][0], vv - obs[v][1]]
            dproj = np.array([
                [k.fx / p[2], k.skew / p[2],
                 -(k.fx * p[0] + k.skew * p[1]) / p[2] ** 2],
                [0.0, k.fy / p[2], -k.fy * p[1] / p[2] ** 2],
            ])
            jac[2 * v:2 * v + 2] = dproj @ t.rotation
        try:
            dx = np.linalg.solve(jac.T @ jac, -jac.T @ res)
        except np.linalg.LinAlgError:
            break
        x = x + dx
        if np.linalg.norm(dx) < 1e-14:
            break
    for t in poses:
        if (t.rotation @ x + t.translation)[2] <= 0:
            raise BehindCameraError("triangulated point behind a camera")
    return x


@dataclass
class BundleResult:
    poses: list[CameraPose]
    points: np.ndarray
    cost: float
    iterations: int
    cost_history: list[float] = field(default_factory=list)


def _ba_residuals(km_params, poses, points, obs):
    k = km_params
    res = np.empty(2 * len(obs))
    for i, o in enumerate(obs):
        t = poses[o.view]
        p = t.rotation @ points[o.point] + t.translation
        if p[2] <= 0:
            res[2 * i:2 * i + 2] = 1e12  # step pushed a point behind a camera
            continue
        u = k.fx * p[0] / p[2] + k.skew * p[1] / p[2] + k.cx
        v = k.fy * p[1] / p[2] + k.cy
        res[2 * i] = u - o.pixel[0]
        res[2 * i + 1] = v - o.pixel[1]
    return res


def _ba_jacobian(k, poses, points, obs, n_poses, n_points):
    """Analytic Jacobian wrt local pose updates (omega, dt) for poses
    1..n-1 and point positions. Pose 0 is the gauge and fixed."""
    n_rows = 2 * len(obs)
    n_cols = 6 * (n_poses - 1) + 3 * n_points
    jac = np.zeros((n_rows, n_cols))
    for i, o in enumerate(obs):
        t = poses[o.view]
        xw = points[o.point]
        p = t.rotation @ xw + t.translation
        z = p[2]
        dproj = np.array([
            [k.fx / z, k.skew / z, -(k.fx * p[0] + k.skew * p[1]) / z ** 2],
            [0.0, k.fy / z, -k.fy * p[1] / z ** 2],
        ])
        row = 2 * i
        if o.view > 0:
            col = 6 * (o.view - 1)
            # p = exp(omega) R x + t + dt; d p/d omega at 0 = -[R x]_x
            jac[row:row + 2, col:col + 3] = dproj @ (-skew(t.rotation @ xw))
            jac[row:row + 2, col + 3:col + 6] = dproj
        pcol = 6 * (n_poses - 1) + 3 * o.point
        jac[row:row + 2, pcol:pcol + 3] = dproj @ t.rotation
    return jac


def _apply_step(poses, points, step, n_poses, n_points):
    new_poses = [poses[0]]
    for v in range(1, n_poses):
        col = 6 * (v - 1)
        omega = step[col:col + 3]
        dt = step[col + 3:col + 6]
        r = orthonormalize(so3_exp(omega) @ poses[v].rotation)
        new_poses.append(RigidTransform(r, poses[v].translation + dt))
    off = 6 * (n_poses - 1)
    new_points = points + step[off:].reshape(n_points, 3)
    return new_poses, new_points


def bundle_adjust(poses: list[CameraPose], points, obs: list[Observation],
                  k: CameraIntrinsics, max_iterations: int = 100,
                  tol: float = 1e-10) -> BundleResult:
    """Levenberg-Marquardt on the global reprojection error. The first
    pose is held fixed as the gauge; accepted steps strictly decrease
    the cost."""
    points = np.array(points, dtype=np.float64).reshape(-1, 3)
    n_poses = len(poses)
    n_points = len(points)
    counts = np.zeros(n_points, dtype=int)
    for o in obs:
        counts[o.point] += 1
    if np.any(counts < 2):
        raise InvalidArgumentError("every point must be observed in >= 2 views")
    n_free = 6 * (n_poses - 1) + 3 * n_points
    if 2 * len(obs) < n_free:
        raise InvalidArgumentError("under-constrained bundle adjustment")
    tf = [p.transform for p in poses]
    res = _ba_residuals(k, tf, points, obs)
    cost = float(res @ res)
    lam = 1e-3
    history = [cost]
    converged = False
    for _ in range(max_iterations):
        jac = _ba_jacobian(k, tf, points, obs, n_poses, n_points)
        jtj = jac.T @ jac
        jtr = jac.T @ res
        accepted = False
        for _ in range(20):
            try:
                step = np.linalg.solve(jtj + lam * np.diag(np.diag(jtj) + 1e-12),
                                       -jtr)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            new_tf, new_pts = _apply_step(tf, points, step, n_poses, n_points)
            new_res = _ba_residuals(k, new_tf, new_pts, obs)
            new_cost = float(new_res @ new_res)
            if np.isfinite(new_cost) and new_cost < cost:
                rel = (cost - new_cost) / max(cost, 1e-300)
                tf, points, res, cost = new_tf, new_pts, new_res, new_cost
                lam = max(lam / 10, 1e-12)
                history.append(cost)
                accepted = True
                converged = rel < tol
                break
            lam *= 10
        if not accepted or converged:
            break
    out_poses = [CameraPose(t, i) for i, t in enumerate(tf)]
    return BundleResult(out_poses, points, cost, len(history) - 1, history)
