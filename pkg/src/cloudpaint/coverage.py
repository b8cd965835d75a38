"""Multi-camera coverage analysis on the horizontal plane.

Computes the radius beyond which adjacent camera wedges overlap, the
minimum radius for full 360-degree coverage, and the blind sectors left
at a given range. All analysis is 2D: cameras are wedges with an apex
offset from the LiDAR centre along their azimuth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidArgumentError

UNBOUNDED = math.inf


@dataclass(frozen=True)
class CameraWedge:
    azimuth_deg: float
    offset_m: float
    half_fov_deg: float

    def __post_init__(self):
        if not (0 < self.half_fov_deg < 90):
            raise InvalidArgumentError("half_fov must be in (0, 90) degrees")
        if self.offset_m < 0:
            raise InvalidArgumentError("offset must be >= 0")


@dataclass(frozen=True)
class CameraLayout:
    cameras: tuple[CameraWedge, ...]

    def __post_init__(self):
        cams = tuple(self.cameras)
        object.__setattr__(self, "cameras", cams)
        if len(cams) < 1:
            raise InvalidArgumentError("layout needs at least one camera")
        az = [c.azimuth_deg % 360.0 for c in cams]
        if len(cams) > 1 and any(az[i] >= az[i + 1] for i in range(len(az) - 1)):
            raise InvalidArgumentError("azimuths must be strictly increasing")


@dataclass(frozen=True)
class CoverageReport:
    pairwise_radii: tuple[float, ...]
    min_full_coverage_radius: float
    query_radius: float
    blind_sectors: tuple[tuple[float, float], ...]

    def to_dict(self) -> dict:
        def enc(v):
            return "unbounded" if math.isinf(v) else v

        return {
            "pairwise_radii_m": [enc(r) for r in self.pairwise_radii],
            "min_full_coverage_radius_m": enc(self.min_full_coverage_radius),
            "query_radius_m": self.query_radius,
            "blind_sectors_deg": [list(s) for s in self.blind_sectors],
        }


def intersection_radius(cam1: CameraWedge, cam2: CameraWedge) -> float:
    """Range at which the inner FOV boundaries of two adjacent cameras meet.

    Rays are cast from each camera apex along the boundary facing the other
    camera; parallel or diverging rays mean the gap never closes and the
    pair's coverage is unbounded.
    """
    alpha = math.radians((cam2.azimuth_deg - cam1.azimuth_deg) % 360.0)
    th1 = math.radians(cam1.half_fov_deg)
    th2 = math.radians(cam2.half_fov_deg)
    p1 = (cam1.offset_m, 0.0)
    p2 = (cam2.offset_m * math.cos(alpha), cam2.offset_m * math.sin(alpha))
    u1 = (math.cos(th1), math.sin(th1))
    u2 = (math.cos(alpha - th2), math.sin(alpha - th2))
    cross = u1[0] * u2[1] - u1[1] * u2[0]  # sin(alpha - th1 - th2)
    if cross >= -1e-15:
        return UNBOUNDED  # parallel or diverging inner boundaries
    dp = (p2[0] - p1[0], p2[1] - p1[1])
    t1 = (dp[0] * u2[1] - dp[1] * u2[0]) / cross
    t2 = (dp[0] * u1[1] - dp[1] * u1[0]) / cross
    if t1 < 0 or t2 < 0:
        return UNBOUNDED  # intersection behind a camera apex
    x = p1[0] + t1 * u1[0]
    y = p1[1] + t1 * u1[1]
    return math.hypot(x, y)


def _adjacent_pairs(layout: CameraLayout):
    cams = layout.cameras
    n = len(cams)
    if n == 1:
        return []
    return [(cams[i], cams[(i + 1) % n]) for i in range(n)]


def pairwise_radii(layout: CameraLayout) -> list[float]:
    return [intersection_radius(a, b) for a, b in _adjacent_pairs(layout)]


def min_full_coverage_radius(layout: CameraLayout) -> float:
    cams = layout.cameras
    if len(cams) == 1:
        return 0.0 if cams[0].half_fov_deg >= 180 else UNBOUNDED
    radii = pairwise_radii(layout)
    return max(radii)


def covered_interval(cam: CameraWedge, radius: float):
    """Arc of the origin-centred circle of `radius` seen by one camera,
    as a (start_deg, end_deg) CCW interval, or None if nothing is covered."""
    az = math.radians(cam.azimuth_deg)
    p = (cam.offset_m * math.cos(az), cam.offset_m * math.sin(az))
    pn2 = p[0] * p[0] + p[1] * p[1]
    if radius * radius > pn2:
        angles = []
        for sign in (-1.0, 1.0):
            b = az + sign * math.radians(cam.half_fov_deg)
            u = (math.cos(b), math.sin(b))
            pu = p[0] * u[0] + p[1] * u[1]
            t = -pu + math.sqrt(pu * pu + radius * radius - pn2)
            q = (p[0] + t * u[0], p[1] + t * u[1])
            angles.append(math.degrees(math.atan2(q[1], q[0])) % 360.0)
        return angles[0], angles[1]
    # apex on/outside the circle: fall back to a fine angular scan
    step = 0.002
    hits = _scan_hits(cam, radius, step)
    if not hits:
        return None
    return hits


def _scan_hits(cam: CameraWedge, radius: float, step: float):
    az = math.radians(cam.azimuth_deg)
    p = (cam.offset_m * math.cos(az), cam.offset_m * math.sin(az))
    cos_h = math.cos(math.radians(cam.half_fov_deg))
    n = int(round(360.0 / step))
    inside_prev = None
    start = None
    intervals = []
    for i in range(n + 1):
        phi = math.radians(i * step)
        q = (radius * math.cos(phi) - p[0], radius * math.sin(phi) - p[1])
        qn = math.hypot(q[0], q[1])
        inside = qn > 0 and (q[0] * math.cos(az) + q[1] * math.sin(az)) / qn >= cos_h
        if inside and inside_prev is False:
            start = i * step
        if not inside and inside_prev is True:
            intervals.append(((start or 0.0) % 360.0, (i - 1) * step % 360.0))
        inside_prev = inside
    if not intervals:
        return None
    # merge wrap-around pieces crudely into one interval per camera
    if len(intervals) == 2 and intervals[0][0] == 0.0:
        return intervals[1][0], intervals[0][1]
    return intervals[0]


def _merge_intervals(intervals):
    """Merge CCW (start, end) degree intervals on the circle; returns a
    sorted, disjoint list."""
    if not intervals:
        return []
    # unroll wrap-around intervals into linear segments on [0, 720)
    segs = []
    for s, e in intervals:
        s %= 360.0
        e %= 360.0
        if e >= s:
            segs.append((s, e))
        else:
            segs.append((s, 360.0))
            segs.append((0.0, e))
    segs.sort()
    merged = [list(segs[0])]
    for s, e in segs[1:]:
        if s <= merged[-1][1] + 1e-12:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    # re-join across the 0/360 seam
    if len(merged) > 1 and merged[0][0] <= 1e-12 and merged[-1][1] >= 360.0 - 1e-12:
        merged[0][0] = merged[-1][0] - 360.0
        merged.pop()
    return [tuple(m) for m in merged]


def blind_sectors(layout: CameraLayout, radius: float):
    """Angular intervals at `radius` covered by no camera wedge."""
    if radius <= 0:
        raise InvalidArgumentError("radius must be positive")
    covered = []
    for cam in layout.cameras:
        iv = covered_interval(cam, radius)
        if iv is not None:
            covered.append(iv)
    merged = _merge_intervals(covered)
    if not merged:
        return [(0.0, 360.0)]
    gaps = []
    for i, (s, e) in enumerate(merged):
        ns = merged[(i + 1) % len(merged)][0]
        if i == len(merged) - 1:
            ns += 360.0
        width = ns - e
        if width > 1e-9:
            gaps.append((e % 360.0, ns % 360.0 if ns % 360.0 != 0 else 360.0))
    # canonical order by start angle
    gaps.sort()
    return gaps


def total_blind_angle(sectors) -> float:
    total = 0.0
    for s, e in sectors:
        total += (e - s) % 360.0 if (e - s) % 360.0 != 0 else (360.0 if e != s else 0.0)
    return total


def analyse(layout: CameraLayout, query_radius: float) -> CoverageReport:
    return CoverageReport(
        pairwise_radii=tuple(pairwise_radii(layout)) if len(layout.cameras) > 1 else (),
        min_full_coverage_radius=min_full_coverage_radius(layout),
        query_radius=query_radius,
        blind_sectors=tuple(blind_sectors(layout, query_radius)),
    )


def polar_svg(layout: CameraLayout, radius: float, size: int = 400) -> str:
    """Minimal polar SVG plot of coverage at `radius`: covered arcs in
    green, blind sectors in red."""
    c = size / 2
    rr = size * 0.42
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<circle cx="{c}" cy="{c}" r="{rr}" fill="none" stroke="#888"/>',
    ]

    def arc(s, e, colour):
        if (e - s) % 360.0 == 0 and e != s:
            return f'<circle cx="{c}" cy="{c}" r="{rr}" fill="none" stroke="{colour}" stroke-width="6"/>'
        a0 = math.radians(s)
        a1 = math.radians(e if e > s else e + 360.0)
        large = 1 if (a1 - a0) > math.pi else 0
        x0, y0 = c + rr * math.cos(a0), c - rr * math.sin(a0)
        x1, y1 = c + rr * math.cos(a1), c - rr * math.sin(a1)
        return (f'<path d="M {x0:.2f} {y0:.2f} A {rr:.2f} {rr:.2f} 0 '
                f'{large} 0 {x1:.2f} {y1:.2f}" fill="none" '
                f'stroke="{colour}" stroke-width="6"/>')

    sectors = blind_sectors(layout, radius)
    covered = _merge_intervals([(e, s + 360.0 if s < e else s)
                                for (s, e) in sectors]) if sectors else [(0.0, 360.0)]
    if not sectors:
        parts.append(arc(0.0, 360.0, "#2a2"))
    else:
        for s, e in covered:
            parts.append(arc(s % 360.0, e % 360.0, "#2a2"))
        for s, e in sectors:
            parts.append(arc(s, e, "#c22"))
    for cam in layout.cameras:
        a = math.radians(cam.azimuth_deg)
        parts.append(f'<line x1="{c}" y1="{c}" x2="{c + rr * 0.2 * math.cos(a):.2f}" '
                     f'y2="{c - rr * 0.2 * math.sin(a):.2f}" stroke="#44c"/>')
    parts.append("</svg>")
    return "\n".join(parts)
