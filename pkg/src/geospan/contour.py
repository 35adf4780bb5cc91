"""Contour ingestion, projection, and boundary data.

A contour is an ordered closed polyline in 3D. This module validates it,
resamples it by arc length, fits a projection plane, projects it to that
plane, and derives the boundary values carried by the conformal solve:
at planar arc-length parameter t the prescribed value is half the log of
the speed ratio between the lifted curve and its planar shadow.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from .errors import ContourError, GraphicalityError

__all__ = [
    "Contour3D",
    "ProjectionFrame",
    "PlanarContour",
    "BoundaryParam",
    "GraphicalityReport",
    "load_contour",
    "resample_arclength",
    "fit_projection_frame",
    "check_graphicality",
    "project",
    "embed",
    "dirichlet_data",
]

_MIN_POINTS = 8
_REL_SEP = 1e-12


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _nonadjacent_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (i, j) of non-adjacent closed-polyline segments, i < j."""
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))  # closing segment adjoins the first
    return i[keep], j[keep]


def _polyline_self_intersections_2d(points: np.ndarray) -> list[tuple[int, int]]:
    """Intersecting non-adjacent segment pairs of a closed 2D polyline.

    Collinear overlap counts as an intersection; that is how a projection
    collapsed onto a line shows up.
    """
    n = len(points)
    segs = np.concatenate([points, points[:1]], axis=0)
    p0 = segs[:-1]
    d = np.diff(segs, axis=0)
    i, j = _nonadjacent_pairs(n)
    d1, d2 = d[i], d[j]
    r = p0[j] - p0[i]
    denom = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    cross_r_d2 = r[:, 0] * d2[:, 1] - r[:, 1] * d2[:, 0]
    cross_r_d1 = r[:, 0] * d1[:, 1] - r[:, 1] * d1[:, 0]
    scale = max(float(np.max(np.abs(d))), 1e-300)
    eps_area = 1e-12 * scale * scale

    generic = np.abs(denom) > eps_area
    safe = np.where(generic, denom, 1.0)
    t = cross_r_d2 / safe
    u = cross_r_d1 / safe
    hit = generic & (t >= -1e-12) & (t <= 1 + 1e-12) & (u >= -1e-12) & (u <= 1 + 1e-12)

    collinear = ~generic & (np.abs(cross_r_d1) <= eps_area)
    if np.any(collinear):
        axis = np.argmax(np.abs(d1), axis=1)
        rows = np.arange(len(i))
        a0 = p0[i][rows, axis]
        a1 = a0 + d1[rows, axis]
        b0 = p0[j][rows, axis]
        b1 = b0 + d2[rows, axis]
        lo_p, hi_p = np.minimum(a0, a1), np.maximum(a0, a1)
        lo_q, hi_q = np.minimum(b0, b1), np.maximum(b0, b1)
        tol = 1e-12 * scale
        overlap = (hi_p >= lo_q - tol) & (hi_q >= lo_p - tol)
        hit |= collinear & overlap

    return [(int(a), int(b)) for a, b in zip(i[hit], j[hit])]


def _segment_pair_distances_3d(
    p0: np.ndarray, u: np.ndarray, q0: np.ndarray, v: np.ndarray
) -> np.ndarray:
    """Exact minimum distances between 3D segment pairs (vectorized).

    Minimizes |p0 + s*u - q0 - t*v| over the unit box. The unconstrained
    minimizer is used where it is admissible; otherwise the minimum lies on
    the box edges, each of which is a clamped 1D projection.
    """
    w = p0 - q0
    a = np.einsum("ij,ij->i", u, u)
    b = np.einsum("ij,ij->i", u, v)
    c = np.einsum("ij,ij->i", v, v)
    d = np.einsum("ij,ij->i", u, w)
    e = np.einsum("ij,ij->i", v, w)

    def dist(s, t):
        diff = w + s[:, None] * u - t[:, None] * v
        return np.einsum("ij,ij->i", diff, diff)

    best = np.full(len(a), np.inf)
    denom = a * c - b * b
    ok = denom > 1e-14 * np.maximum(a * c, 1e-300)
    s_in = np.where(ok, (b * e - c * d) / np.where(ok, denom, 1.0), -1.0)
    t_in = np.where(ok, (a * e - b * d) / np.where(ok, denom, 1.0), -1.0)
    inside = ok & (s_in >= 0) & (s_in <= 1) & (t_in >= 0) & (t_in <= 1)
    if np.any(inside):
        best = np.where(inside, dist(s_in, t_in), best)

    a_safe = np.maximum(a, 1e-300)
    c_safe = np.maximum(c, 1e-300)
    for s_fix in (0.0, 1.0):
        s = np.full(len(a), s_fix)
        t = np.clip((b * s_fix + e) / c_safe, 0.0, 1.0)
        best = np.minimum(best, dist(s, t))
    for t_fix in (0.0, 1.0):
        t = np.full(len(a), t_fix)
        s = np.clip((b * t_fix - d) / a_safe, 0.0, 1.0)
        best = np.minimum(best, dist(s, t))
    return np.sqrt(best)


def _polyline_self_intersections_3d(points: np.ndarray, tol: float) -> list[tuple[int, int]]:
    n = len(points)
    segs = np.concatenate([points, points[:1]], axis=0)
    p0 = segs[:-1]
    d = np.diff(segs, axis=0)
    i, j = _nonadjacent_pairs(n)
    dists = _segment_pair_distances_3d(p0[i], d[i], p0[j], d[j])
    hit = dists <= tol
    return [(int(a), int(b)) for a, b in zip(i[hit], j[hit])]


@dataclass(frozen=True)
class Contour3D:
    """Ordered closed polyline of 3D points."""

    points: np.ndarray
    closed: bool = True

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ContourError("contour points must be an (n, 3) array")
        if not np.all(np.isfinite(pts)):
            raise ContourError("contour contains non-finite coordinates")
        if len(pts) < _MIN_POINTS:
            raise ContourError(
                f"too few points: got {len(pts)}, need at least {_MIN_POINTS}"
            )
        diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
        if diag <= 0:
            raise ContourError("contour is a single point")
        seps = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        if np.any(seps <= _REL_SEP * diag):
            k = int(np.argmin(seps))
            raise ContourError(f"consecutive points {k} and {(k + 1) % len(pts)} coincide")
        hits = _polyline_self_intersections_3d(pts, tol=_REL_SEP * diag)
        if hits:
            raise ContourError(
                "contour is not simple: intersecting segment pairs " + repr(hits[:8])
            )
        object.__setattr__(self, "points", _as_readonly(pts))

    @property
    def n_points(self) -> int:
        return len(self.points)

    def bounding_box_diagonal(self) -> float:
        pts = self.points
        return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


@dataclass(frozen=True)
class ProjectionFrame:
    """Orthonormal frame of the projection plane."""

    origin: np.ndarray
    basis_u: np.ndarray
    basis_v: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        for name in ("origin", "basis_u", "basis_v", "normal"):
            object.__setattr__(self, name, _as_readonly(np.asarray(getattr(self, name))))
        u, v, n = self.basis_u, self.basis_v, self.normal
        for vec in (u, v, n):
            if abs(np.linalg.norm(vec) - 1.0) > 1e-12:
                raise ValueError("frame basis vectors must be unit length")
        if max(abs(u @ v), abs(u @ n), abs(v @ n)) > 1e-12:
            raise ValueError("frame basis must be orthogonal")

    def to_plane(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return (uv, heights) of 3D points in this frame."""
        rel = np.asarray(pts, dtype=np.float64) - self.origin
        uv = np.stack([rel @ self.basis_u, rel @ self.basis_v], axis=-1)
        return uv, rel @ self.normal

    def from_plane(self, uv: np.ndarray, heights: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        h = np.asarray(heights, dtype=np.float64)
        return (
            self.origin
            + np.outer(uv[..., 0].ravel(), self.basis_u).reshape(uv[..., 0].shape + (3,))
            + np.outer(uv[..., 1].ravel(), self.basis_v).reshape(uv[..., 1].shape + (3,))
            + np.outer(h.ravel(), self.normal).reshape(h.shape + (3,))
        )


def _cumulative_lengths(points: np.ndarray) -> np.ndarray:
    """Closed-polyline cumulative arc length, one entry per point plus the
    closing vertex, so the last entry is the total length."""
    closed = np.concatenate([points, points[:1]], axis=0)
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


@dataclass(frozen=True)
class PlanarContour:
    """Projection of a contour, with per-point heights along the frame normal."""

    points: np.ndarray
    heights: np.ndarray
    cum_length: np.ndarray
    total_length: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        h = np.asarray(self.heights, dtype=np.float64)
        cl = np.asarray(self.cum_length, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("planar points must be (n, 2)")
        if len(h) != len(pts) or len(cl) != len(pts) + 1:
            raise ValueError("heights/cum_length sizes inconsistent with points")
        if np.any(np.diff(cl) <= 0):
            raise ValueError("cumulative arc length must be strictly increasing")
        if abs(cl[-1] - self.total_length) > 1e-9 * self.total_length:
            raise ValueError("last cumulative length must equal the total length")
        object.__setattr__(self, "points", _as_readonly(pts))
        object.__setattr__(self, "heights", _as_readonly(h))
        object.__setattr__(self, "cum_length", _as_readonly(cl))

    @property
    def n_points(self) -> int:
        return len(self.points)

    def _locate(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t = np.mod(np.asarray(t, dtype=np.float64), self.total_length)
        seg = np.clip(np.searchsorted(self.cum_length, t, side="right") - 1, 0, self.n_points - 1)
        seg_len = self.cum_length[seg + 1] - self.cum_length[seg]
        frac = (t - self.cum_length[seg]) / seg_len
        return seg, frac

    def point_at(self, t: np.ndarray) -> np.ndarray:
        """Point on the polyline at arc-length parameter t (periodic)."""
        seg, frac = self._locate(t)
        nxt = (seg + 1) % self.n_points
        return (1.0 - frac)[..., None] * self.points[seg] + frac[..., None] * self.points[nxt]

    def height_at(self, t: np.ndarray) -> np.ndarray:
        seg, frac = self._locate(t)
        nxt = (seg + 1) % self.n_points
        return (1.0 - frac) * self.heights[seg] + frac * self.heights[nxt]

    def lift_at(self, t: np.ndarray, contour: Contour3D) -> np.ndarray:
        """3D point matched to parameter t.

        Projection is affine on each segment, so the lift of the planar
        point at fraction frac of segment k is the 3D point at the same
        fraction of the matched 3D segment.
        """
        seg, frac = self._locate(t)
        nxt = (seg + 1) % self.n_points
        p = contour.points
        return (1.0 - frac)[..., None] * p[seg] + frac[..., None] * p[nxt]

    def simple(self) -> bool:
        return not _polyline_self_intersections_2d(self.points)


@dataclass(frozen=True)
class GraphicalityReport:
    ok: bool
    violations: tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class BoundaryParam:
    """Sampled boundary data over the planar arc-length parameter.

    speed_ratio[i] is the norm ratio between the lifted-curve derivative and
    the planar-curve derivative at params[i]; dirichlet[i] is half its log.
    """

    params: np.ndarray
    speed_ratio: np.ndarray
    dirichlet: np.ndarray
    total_length: float

    def __post_init__(self):
        t = np.asarray(self.params, dtype=np.float64)
        s = np.asarray(self.speed_ratio, dtype=np.float64)
        d = np.asarray(self.dirichlet, dtype=np.float64)
        if not (len(t) == len(s) == len(d)):
            raise ValueError("boundary sample arrays must share a length")
        if np.any(s < 1.0 - 1e-9):
            raise ValueError("speed ratio below 1: projection cannot lengthen a curve")
        if np.any(d < -1e-9):
            raise ValueError("negative boundary value")
        if np.any(np.diff(t) <= 0):
            raise ValueError("params must be strictly increasing")
        object.__setattr__(self, "params", _as_readonly(t))
        object.__setattr__(self, "speed_ratio", _as_readonly(s))
        object.__setattr__(self, "dirichlet", _as_readonly(d))

    def dirichlet_at(self, t: np.ndarray) -> np.ndarray:
        """Periodic linear interpolation of the boundary values."""
        return self._interp(t, self.dirichlet)

    def speed_ratio_at(self, t: np.ndarray) -> np.ndarray:
        return self._interp(t, self.speed_ratio)

    def _interp(self, t: np.ndarray, values: np.ndarray) -> np.ndarray:
        t = np.mod(np.asarray(t, dtype=np.float64), self.total_length)
        tp = np.concatenate([self.params, [self.params[0] + self.total_length]])
        vp = np.concatenate([values, [values[0]]])
        # Shift queries that fall before the first sample onto the wrapped end.
        t = np.where(t < tp[0], t + self.total_length, t)
        return np.interp(t, tp, vp)


def load_contour(source: bytes | BinaryIO) -> Contour3D:
    """Parse contour JSON: {"points": [[x, y, z], ...], "closed": true}."""
    if hasattr(source, "read"):
        raw = source.read()
    else:
        raw = source
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ContourError(f"parse failure: {exc}") from exc
    if not isinstance(doc, dict) or "points" not in doc:
        raise ContourError('parse failure: expected an object with a "points" field')
    pts = doc["points"]
    if not isinstance(pts, list) or any(
        not isinstance(p, list) or len(p) != 3 for p in pts
    ):
        raise ContourError("parse failure: points must be an array of [x, y, z] triples")
    arr = np.asarray(pts, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ContourError("parse failure: coordinates must be finite numbers")
    closed = doc.get("closed", True)
    if closed is not True:
        raise ContourError("only closed contours are supported")
    return Contour3D(points=arr)


def resample_arclength(c: Contour3D, n: int) -> Contour3D:
    """Resample to n points at equal arc-length spacing, starting at point 0."""
    if n < _MIN_POINTS:
        raise ValueError(f"n must be at least {_MIN_POINTS}")
    cl = _cumulative_lengths(c.points)
    total = cl[-1]
    t = total * np.arange(n) / n
    closed = np.concatenate([c.points, c.points[:1]], axis=0)
    out = np.empty((n, 3))
    for k in range(3):
        out[:, k] = np.interp(t, cl, closed[:, k])
    return Contour3D(points=out)


def fit_projection_frame(c: Contour3D, mode: str = "auto") -> ProjectionFrame:
    """Projection frame for the contour.

    auto fits the least-squares plane: origin at the centroid, normal along
    the direction of least variance. xy/xz/yz force an axis-aligned plane
    with the centroid as origin.
    """
    pts = c.points
    centroid = pts.mean(axis=0)
    if mode == "xy":
        return ProjectionFrame(centroid, (1, 0, 0), (0, 1, 0), (0, 0, 1))
    if mode == "xz":
        return ProjectionFrame(centroid, (1, 0, 0), (0, 0, 1), (0, -1, 0))
    if mode == "yz":
        return ProjectionFrame(centroid, (0, 1, 0), (0, 0, 1), (1, 0, 0))
    if mode != "auto":
        raise ValueError(f"unknown plane mode {mode!r}")

    rel = pts - centroid
    cov = rel.T @ rel
    evals, evecs = np.linalg.eigh(cov)  # ascending eigenvalues
    if evals[1] <= 1e-12 * max(evals[2], 1e-300):
        raise ContourError("no unique plane: contour points are collinear")
    normal = evecs[:, 0]
    basis_u = evecs[:, 2]
    # Deterministic signs: largest-magnitude component positive.
    for vec in (normal, basis_u):
        k = int(np.argmax(np.abs(vec)))
        if vec[k] < 0:
            vec *= -1.0
    basis_v = np.cross(normal, basis_u)
    basis_v /= np.linalg.norm(basis_v)
    basis_u = np.cross(basis_v, normal)
    basis_u /= np.linalg.norm(basis_u)
    return ProjectionFrame(centroid, basis_u, basis_v, normal)


def check_graphicality(c: Contour3D, frame: ProjectionFrame) -> GraphicalityReport:
    """Report whether the projected polyline is simple."""
    uv, _ = frame.to_plane(c.points)
    span = uv.max(axis=0) - uv.min(axis=0)
    diag3d = c.bounding_box_diagonal()
    # A projection collapsed to a segment shows up as coincident consecutive
    # points or as overlapping segments; catch the coincident case first.
    seps = np.linalg.norm(np.roll(uv, -1, axis=0) - uv, axis=1)
    if float(np.max(span)) <= 1e-12 * diag3d or np.any(seps <= 1e-12 * diag3d):
        k = int(np.argmin(seps))
        return GraphicalityReport(ok=False, violations=((k, (k + 1) % len(uv)),))
    hits = _polyline_self_intersections_2d(uv)
    return GraphicalityReport(ok=not hits, violations=tuple(hits))


def project(c: Contour3D, frame: ProjectionFrame) -> PlanarContour:
    """Project the contour into the frame plane; heights are normal components."""
    report = check_graphicality(c, frame)
    if not report.ok:
        raise GraphicalityError(
            "projection is not one-to-one: intersecting segment pairs "
            + repr(list(report.violations[:8])),
            violations=report.violations,
        )
    uv, heights = frame.to_plane(c.points)
    cl = _cumulative_lengths(uv)
    return PlanarContour(points=uv, heights=heights, cum_length=cl, total_length=float(cl[-1]))


def embed(pc: PlanarContour, frame: ProjectionFrame) -> np.ndarray:
    """Map planar points with heights back to 3D."""
    return frame.from_plane(pc.points, pc.heights)


def dirichlet_data(pc: PlanarContour, c: Contour3D, n_samples: int) -> BoundaryParam:
    """Boundary values at n_samples uniform planar arc-length parameters.

    The speed ratio is taken from central differences of the matched
    polylines: the lifted 3D curve against its planar projection. Both
    difference chords project onto each other exactly, so the ratio is
    never below 1.
    """
    if pc.n_points != c.n_points:
        raise ValueError("planar contour and contour must be matched point-for-point")
    if n_samples < _MIN_POINTS:
        raise ValueError(f"n_samples must be at least {_MIN_POINTS}")
    total = pc.total_length
    t = total * np.arange(n_samples) / n_samples
    planar = pc.point_at(t)
    height = pc.height_at(t)
    d_planar = np.roll(planar, -1, axis=0) - np.roll(planar, 1, axis=0)
    d_height = np.roll(height, -1) - np.roll(height, 1)
    den = np.linalg.norm(d_planar, axis=1)
    if np.any(den <= 0):
        raise ValueError("mismatched point correspondence: zero planar chord")
    # The frame is orthonormal, so the lifted chord splits exactly into the
    # planar chord and the height chord; the ratio is hypot(1, slope) >= 1.
    slope = d_height / den
    s = np.hypot(1.0, slope)
    return BoundaryParam(
        params=t,
        speed_ratio=s,
        dirichlet=0.25 * np.log1p(slope * slope),
        total_length=total,
    )


def contour_from_points(points: np.ndarray) -> Contour3D:
    """Convenience constructor used by tests and callers with arrays in hand."""
    return Contour3D(points=np.asarray(points, dtype=np.float64))


def circle_contour(
    n: int = 64,
    radius: float = 1.0,
    tilt: float = 0.0,
    center: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> Contour3D:
    """Circle of given radius in the plane z = y*tan(tilt), constant 3D speed."""
    t = 2.0 * np.pi * np.arange(n) / n
    pts = np.stack(
        [
            radius * np.cos(t),
            radius * math.cos(tilt) * np.sin(t),
            radius * math.sin(tilt) * np.sin(t),
        ],
        axis=1,
    )
    return Contour3D(points=pts + np.asarray(center, dtype=np.float64))
