"""Masked uniform grid over the projected domain.

Nodes are classified against the planar contour: INTERIOR nodes are
strictly inside, BOUNDARY nodes are the adjacent outside band (plus nodes
that fall exactly on the polyline), EXTERIOR is everything else. Boundary
nodes carry the outward normal of their nearest contour segment and the
arc-length parameter of their closest contour point, which is how
prescribed boundary data reaches the solvers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from ._stencil import axis_derivative_matrix
from .contour import PlanarContour
from .errors import GridError

__all__ = ["EXTERIOR", "BOUNDARY", "INTERIOR", "GridDomain", "ScalarField",
           "build_grid", "boundary_normals", "map_boundary_to_param", "grid_dump_json"]

EXTERIOR = 0
BOUNDARY = 1
INTERIOR = 2

_MARGIN = 2  # exterior cells added around the bounding box


class GridDomain:
    """Classified uniform grid; immutable by convention after construction."""

    def __init__(
        self,
        origin: np.ndarray,
        spacing: float,
        classes: np.ndarray,
        contour: PlanarContour | None = None,
        normals: np.ndarray | None = None,
        params: np.ndarray | None = None,
        nearest: tuple[np.ndarray, np.ndarray] | None = None,
    ):
        self.origin = np.asarray(origin, dtype=np.float64)
        self.spacing = float(spacing)
        self.classes = np.asarray(classes, dtype=np.int8)
        self.classes.setflags(write=False)
        self.contour = contour
        ny, nx = self.classes.shape
        self.ny, self.nx = ny, nx
        flat = np.arange(ny * nx)
        cls = self.classes.ravel()
        self.interior_idx = flat[cls == INTERIOR]
        self.boundary_idx = flat[cls == BOUNDARY]
        self.normals = normals
        self.params = params
        self._nearest = nearest
        self._ops: dict[tuple[int, int], sp.csr_matrix] = {}
        self._boundary_pos = np.full(ny * nx, -1, dtype=np.int64)
        self._boundary_pos[self.boundary_idx] = np.arange(len(self.boundary_idx))

    # -- geometry ---------------------------------------------------------

    @property
    def dims(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def valid_mask(self) -> np.ndarray:
        return self.classes != EXTERIOR

    @property
    def interior_mask(self) -> np.ndarray:
        return self.classes == INTERIOR

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.classes == BOUNDARY

    def node_xy(self, flat_idx: np.ndarray) -> np.ndarray:
        flat_idx = np.asarray(flat_idx)
        i = flat_idx % self.nx
        j = flat_idx // self.nx
        return self.origin + self.spacing * np.stack([i, j], axis=-1)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) node coordinate arrays of shape (ny, nx)."""
        x = self.origin[0] + self.spacing * np.arange(self.nx)
        y = self.origin[1] + self.spacing * np.arange(self.ny)
        return np.meshgrid(x, y)

    def boundary_position(self, flat_idx: np.ndarray) -> np.ndarray:
        """Index into the boundary arrays for flat node indices."""
        return self._boundary_pos[flat_idx]

    # -- derivative operators ----------------------------------------------

    def _defined_mask(self, op: sp.csr_matrix) -> np.ndarray:
        """Nodes where the operator produced an estimate (nonzero row)."""
        return (np.diff(op.indptr) > 0).reshape(self.ny, self.nx)

    def diff_op(self, du: int, dv: int) -> sp.csr_matrix:
        """Sparse d^(du+dv)/dx^du dy^dv over flattened fields.

        Pure derivatives use windowed second-order stencils. Mixed ones are
        compositions whose outer stencil is built against the set of nodes
        where the inner derivative is defined, so short runs near the
        boundary never leak zero placeholders into neighboring estimates.
        The composition pairing is symmetric under grid transposition.
        """
        key = (du, dv)
        if key in self._ops:
            return self._ops[key]
        valid = self.valid_mask
        h = self.spacing
        if dv == 0:
            op = axis_derivative_matrix(valid, h, du, axis=1)
        elif du == 0:
            op = axis_derivative_matrix(valid, h, dv, axis=0)
        elif (du, dv) == (1, 1):
            dx, dy = self.diff_op(1, 0), self.diff_op(0, 1)
            dx_outer = axis_derivative_matrix(self._defined_mask(dy), h, 1, axis=1)
            dy_outer = axis_derivative_matrix(self._defined_mask(dx), h, 1, axis=0)
            op = ((dx_outer @ dy + dy_outer @ dx) * 0.5).tocsr()
        elif (du, dv) == (2, 1):
            dxx = self.diff_op(2, 0)
            dy_outer = axis_derivative_matrix(self._defined_mask(dxx), h, 1, axis=0)
            op = (dy_outer @ dxx).tocsr()
        elif (du, dv) == (1, 2):
            dyy = self.diff_op(0, 2)
            dx_outer = axis_derivative_matrix(self._defined_mask(dyy), h, 1, axis=1)
            op = (dx_outer @ dyy).tocsr()
        elif (du, dv) == (2, 2):
            dxx, dyy = self.diff_op(2, 0), self.diff_op(0, 2)
            dxx_outer = axis_derivative_matrix(self._defined_mask(dyy), h, 2, axis=1)
            dyy_outer = axis_derivative_matrix(self._defined_mask(dxx), h, 2, axis=0)
            op = ((dxx_outer @ dyy + dyy_outer @ dxx) * 0.5).tocsr()
        else:
            raise ValueError(f"unsupported derivative order {key}")
        self._ops[key] = op
        return op

    def replace(self, **kw) -> "GridDomain":
        args = dict(
            origin=self.origin,
            spacing=self.spacing,
            classes=self.classes,
            contour=self.contour,
            normals=self.normals,
            params=self.params,
            nearest=self._nearest,
        )
        args.update(kw)
        return GridDomain(**args)


@dataclass(frozen=True)
class ScalarField:
    """Grid-sampled scalar; exterior entries are zeroed and ignored."""

    values: np.ndarray
    grid: GridDomain

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.shape != self.grid.classes.shape:
            raise ValueError("field shape does not match grid")
        mask = self.grid.valid_mask
        if not np.all(np.isfinite(v[mask])):
            raise ValueError("non-finite field values on the domain")
        v[~mask] = 0.0
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: GridDomain, fn: Callable) -> "ScalarField":
        x, y = grid.coords()
        vals = np.asarray(fn(x, y), dtype=np.float64)
        vals = np.where(grid.valid_mask, vals, 0.0)
        return cls(values=vals, grid=grid)

    @classmethod
    def zeros(cls, grid: GridDomain) -> "ScalarField":
        return cls(values=np.zeros(grid.classes.shape), grid=grid)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(values=values, grid=self.grid)


def _point_in_polygon(xs: np.ndarray, ys: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd rule crossing test, vectorized over flat query arrays."""
    inside = np.zeros(xs.shape, dtype=bool)
    px = poly[:, 0]
    py = poly[:, 1]
    px1 = np.roll(px, -1)
    py1 = np.roll(py, -1)
    for k in range(len(poly)):
        cond = (py[k] > ys) != (py1[k] > ys)
        if not np.any(cond):
            continue
        xint = px[k] + (ys - py[k]) * (px1[k] - px[k]) / (py1[k] - py[k])
        inside ^= cond & (xs < xint)
    return inside


def _nearest_on_polyline(
    pts: np.ndarray, poly: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest segment index, fraction along it, and distance, per point."""
    n = len(poly)
    best_d2 = np.full(len(pts), np.inf)
    best_seg = np.zeros(len(pts), dtype=np.int64)
    best_frac = np.zeros(len(pts))
    for k in range(n):
        a = poly[k]
        b = poly[(k + 1) % n]
        ab = b - a
        denom = float(ab @ ab)
        rel = pts - a
        frac = np.clip((rel @ ab) / denom, 0.0, 1.0)
        diff = rel - frac[:, None] * ab
        d2 = np.einsum("ij,ij->i", diff, diff)
        better = d2 < best_d2
        best_d2[better] = d2[better]
        best_seg[better] = k
        best_frac[better] = frac[better]
    return best_seg, best_frac, np.sqrt(best_d2)


def _polygon_is_ccw(poly: np.ndarray) -> bool:
    x, y = poly[:, 0], poly[:, 1]
    area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    return area2 > 0


def build_grid(pc: PlanarContour, resolution: int) -> GridDomain:
    """Classified grid covering the contour's bounding box.

    `resolution` nodes span the longer bounding-box axis; two exterior
    margin cells are added on every side so boundary bands never touch the
    grid edge.
    """
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    if not pc.simple():
        raise GridError("planar contour is not simple")
    lo = pc.points.min(axis=0)
    hi = pc.points.max(axis=0)
    extent = hi - lo
    spacing = float(extent.max()) / (resolution - 1)
    if spacing <= 0:
        raise GridError("degenerate contour bounding box")
    counts = np.ceil(extent / spacing - 1e-12).astype(int) + 1
    origin = lo - _MARGIN * spacing
    nx = int(counts[0]) + 2 * _MARGIN
    ny = int(counts[1]) + 2 * _MARGIN

    xs = origin[0] + spacing * np.arange(nx)
    ys = origin[1] + spacing * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys)
    flat_pts = np.stack([gx.ravel(), gy.ravel()], axis=1)

    inside = _point_in_polygon(flat_pts[:, 0], flat_pts[:, 1], pc.points).reshape(ny, nx)
    seg, frac, dist = _nearest_on_polyline(flat_pts, pc.points)
    diag = float(np.linalg.norm(extent))
    on_curve = (dist <= 1e-12 * diag).reshape(ny, nx)

    interior = inside & ~on_curve
    adj = np.zeros_like(interior)
    adj[:-1, :] |= interior[1:, :]
    adj[1:, :] |= interior[:-1, :]
    adj[:, :-1] |= interior[:, 1:]
    adj[:, 1:] |= interior[:, :-1]
    boundary = ~interior & (on_curve | adj)

    classes = np.full((ny, nx), EXTERIOR, dtype=np.int8)
    classes[interior] = INTERIOR
    classes[boundary] = BOUNDARY

    if not np.any(interior):
        raise GridError("domain too thin: no interior node at this resolution")
    if np.any(interior[0, :]) or np.any(interior[-1, :]) or np.any(
        interior[:, 0]
    ) or np.any(interior[:, -1]):
        raise GridError("interior region touches the grid edge")
    _check_single_ring(classes)

    boundary_flat = np.flatnonzero(classes.ravel() == BOUNDARY)
    nearest = (seg[boundary_flat], frac[boundary_flat])
    return GridDomain(
        origin=origin,
        spacing=spacing,
        classes=classes,
        contour=pc,
        nearest=nearest,
    )


def _check_single_ring(classes: np.ndarray) -> None:
    """The boundary band must be one 8-connected component."""
    boundary = classes == BOUNDARY
    n_b = int(boundary.sum())
    if n_b == 0:
        raise GridError("no boundary nodes")
    labels = np.full(classes.shape, -1, dtype=np.int64)
    seeds = np.argwhere(boundary)
    stack = [tuple(seeds[0])]
    labels[seeds[0][0], seeds[0][1]] = 0
    count = 1
    ny, nx = classes.shape
    while stack:
        j, i = stack.pop()
        for dj in (-1, 0, 1):
            for di in (-1, 0, 1):
                if dj == 0 and di == 0:
                    continue
                jj, ii = j + dj, i + di
                if 0 <= jj < ny and 0 <= ii < nx and boundary[jj, ii] and labels[jj, ii] < 0:
                    labels[jj, ii] = 0
                    count += 1
                    stack.append((jj, ii))
    if count != n_b:
        raise GridError("boundary band is not a single connected ring; refine the grid")


def boundary_normals(g: GridDomain) -> GridDomain:
    """Populate outward unit normals of the nearest contour segment."""
    if g.contour is None or g._nearest is None:
        raise GridError("grid carries no contour snapping data")
    poly = g.contour.points
    n = len(poly)
    seg, _ = g._nearest
    a = poly[seg]
    b = poly[(seg + 1) % n]
    d = b - a
    lens = np.linalg.norm(d, axis=1)
    normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / lens[:, None]
    if not _polygon_is_ccw(poly):
        normals = -normals
    return g.replace(normals=normals)


def map_boundary_to_param(g: GridDomain, pc: PlanarContour) -> GridDomain:
    """Populate the arc-length parameter of each boundary node's snap point."""
    if g.contour is None or g._nearest is None:
        raise GridError("grid carries no contour snapping data")
    if pc is not g.contour and not np.array_equal(pc.points, g.contour.points):
        raise ValueError("grid was built from a different planar contour")
    seg, frac = g._nearest
    seg_len = np.diff(pc.cum_length)
    t = pc.cum_length[seg] + frac * seg_len[seg]
    t = np.mod(t, pc.total_length)
    return g.replace(params=t)


def grid_dump_json(g: GridDomain) -> str:
    """Debug dump: origin, spacing, dims, and class codes row-major."""
    doc = {
        "origin": [float(g.origin[0]), float(g.origin[1])],
        "spacing": g.spacing,
        "dims": [g.nx, g.ny],
        "classes": [int(v) for v in g.classes.ravel()],
    }
    return json.dumps(doc, sort_keys=True)
