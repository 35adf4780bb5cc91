import io
import json
import math

import numpy as np
import pytest

from geospan import (
    ContourError,
    GraphicalityError,
    check_graphicality,
    circle_contour,
    dirichlet_data,
    embed,
    fit_projection_frame,
    load_contour,
    project,
    resample_arclength,
)
from geospan.contour import Contour3D


def contour_json(points):
    return json.dumps({"points": [list(map(float, p)) for p in points]}).encode()


def polyline_length(points):
    closed = np.concatenate([points, points[:1]], axis=0)
    return float(np.sum(np.linalg.norm(np.diff(closed, axis=0), axis=1)))


class TestLoadContour:
    def test_too_few_points(self):
        pts = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
        with pytest.raises(ContourError, match="too few points"):
            load_contour(contour_json(pts))

    def test_unit_circle_loads(self):
        t = 2 * np.pi * np.arange(64) / 64
        pts = np.stack([np.cos(t), np.sin(t), np.zeros(64)], axis=1)
        c = load_contour(io.BytesIO(contour_json(pts)))
        assert c.n_points == 64
        assert np.allclose(c.points, pts)

    def test_figure_eight_rejected(self):
        # Two loops sharing the origin region; the polyline crosses itself.
        t = 2 * np.pi * np.arange(32) / 32
        pts = np.stack([np.sin(2 * t), np.sin(t), np.zeros(32)], axis=1)
        # Oracle: shapely confirms the planar polyline is not simple.
        shapely = pytest.importorskip("shapely")
        ring = shapely.LinearRing([(x, y) for x, y, _ in pts])
        assert not ring.is_simple or not ring.is_valid
        with pytest.raises(ContourError, match="not simple"):
            load_contour(contour_json(pts))

    def test_parse_failure(self):
        with pytest.raises(ContourError, match="parse failure"):
            load_contour(b"{not json")

    def test_missing_points_field(self):
        with pytest.raises(ContourError, match="parse failure"):
            load_contour(b'{"vertices": []}')

    def test_duplicate_consecutive_points(self):
        t = 2 * np.pi * np.arange(16) / 16
        pts = np.stack([np.cos(t), np.sin(t), np.zeros(16)], axis=1).tolist()
        pts.insert(3, pts[3])
        with pytest.raises(ContourError, match="coincide"):
            load_contour(contour_json(pts))


def square_eight_points(side=2.0):
    # Corners plus edge midpoints of [0, side]^2, walked counterclockwise.
    s = side
    return np.array(
        [
            [0, 0, 0],
            [s / 2, 0, 0],
            [s, 0, 0],
            [s, s / 2, 0],
            [s, s, 0],
            [s / 2, s, 0],
            [0, s, 0],
            [0, s / 2, 0],
        ],
        dtype=float,
    )


class TestResample:
    def test_square_hand_arclength(self):
        # Uneven 8 points on the same square; equal-arc-length resampling must
        # land on corners and edge midpoints (hand computation, perimeter 8).
        pts = np.array(
            [
                [0, 0, 0],
                [0.4, 0, 0],
                [2, 0, 0],
                [2, 0.9, 0],
                [2, 2, 0],
                [1.3, 2, 0],
                [0, 2, 0],
                [0, 1.7, 0],
            ],
            dtype=float,
        )
        out = resample_arclength(Contour3D(pts), 8)
        assert np.allclose(out.points, square_eight_points(), atol=1e-12)

    def test_circle_fixed_point(self):
        c = circle_contour(64)
        out = resample_arclength(c, 64)
        assert np.allclose(out.points, c.points, atol=1e-9)

    def test_circle_length_preserved_on_refinement(self):
        c = circle_contour(64)
        out = resample_arclength(c, 128)
        assert out.n_points == 128
        lin = polyline_length(c.points)
        lout = polyline_length(out.points)
        assert abs(lout - lin) <= 1e-9 * lin

    @pytest.mark.parametrize("mult", [2, 4])
    def test_length_preserved_on_circle_multiples(self, mult):
        # Equal-chord inputs keep every vertex when the count is a multiple,
        # so the polyline length is preserved exactly.
        c = circle_contour(48)
        out = resample_arclength(c, 48 * mult)
        lin = polyline_length(c.points)
        assert abs(polyline_length(out.points) - lin) <= 1e-9 * lin

    def test_corner_cutting_is_second_order(self):
        # Non-multiple counts cut corners; the loss must shrink like 1/n^2.
        t = 2 * np.pi * np.arange(512) / 512
        pts = np.stack(
            [
                (1 + 0.2 * np.cos(3 * t)) * np.cos(t),
                (1 + 0.2 * np.cos(3 * t)) * np.sin(t),
                0.1 * np.sin(2 * t),
            ],
            axis=1,
        )
        c = Contour3D(pts)
        lin = polyline_length(c.points)
        out = resample_arclength(c, 509)
        assert abs(polyline_length(out.points) - lin) <= 1e-4 * lin


class TestProjectionFrame:
    def test_planar_circle_auto(self):
        frame = fit_projection_frame(circle_contour(64), "auto")
        assert abs(abs(frame.normal[2]) - 1.0) < 1e-12
        assert np.allclose(frame.origin, [0, 0, 0], atol=1e-12)

    def test_tilted_circle_auto(self):
        theta = math.radians(30)
        frame = fit_projection_frame(circle_contour(128, tilt=theta), "auto")
        expected = np.array([0.0, -math.sin(theta), math.cos(theta)])
        cosang = abs(float(frame.normal @ expected))
        assert cosang > math.cos(1e-6)

    def test_forced_xy(self):
        c = circle_contour(64, tilt=0.4, center=(1.0, 2.0, 3.0))
        frame = fit_projection_frame(c, "xy")
        assert np.allclose(frame.normal, [0, 0, 1])
        assert np.allclose(frame.origin, c.points.mean(axis=0))

    def test_collinear_error(self):
        t = np.arange(16, dtype=float)
        pts = np.stack([t, 2 * t, -t], axis=1)
        # Bypass simplicity validation cheaply: collinear points make segments
        # overlap, so Contour3D itself refuses them.
        with pytest.raises(ContourError):
            fit_projection_frame(Contour3D(pts), "auto")

    def test_auto_minimizes_sse_against_rotation_grid(self):
        # Exhaustive 1-degree direction grid as the oracle for the
        # least-squares plane of a mildly non-planar contour.
        t = 2 * np.pi * np.arange(24) / 24
        pts = np.stack([np.cos(t), np.sin(t), 0.2 * np.sin(2 * t)], axis=1)
        c = Contour3D(pts)
        frame = fit_projection_frame(c, "auto")
        rel = pts - pts.mean(axis=0)

        def sse(n):
            return float(np.sum((rel @ n) ** 2))

        ours = sse(frame.normal)
        deg = np.radians(np.arange(0, 180, 1.0))
        best = np.inf
        for th in deg:
            for ph in np.radians(np.arange(0, 360, 1.0)):
                n = np.array(
                    [math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th)]
                )
                v = sse(n)
                if v < best:
                    best = v
        assert ours <= best + 1e-12


class TestGraphicality:
    def test_planar_circle_own_plane(self):
        c = circle_contour(64)
        frame = fit_projection_frame(c, "xy")
        assert check_graphicality(c, frame).ok

    def test_normal_in_plane_collapses(self):
        c = circle_contour(64)
        frame = fit_projection_frame(c, "yz")  # normal (1,0,0) lies in z=0
        report = check_graphicality(c, frame)
        assert not report.ok
        assert len(report.violations) >= 1

    def test_hemisphere_contour_equatorial_frame(self):
        t = 2 * np.pi * np.arange(96) / 96
        r = 0.5 + 0.3 * np.cos(3 * t)
        x, y = r * np.cos(t), r * np.sin(t)
        z = np.sqrt(np.clip(1 - x**2 - y**2, 0, None))
        c = Contour3D(np.stack([x, y, z], axis=1))
        frame = fit_projection_frame(c, "xy")
        shapely = pytest.importorskip("shapely")
        assert shapely.LinearRing(np.stack([x, y], axis=1)).is_simple
        assert check_graphicality(c, frame).ok


class TestProject:
    def test_identity_frame(self):
        c = circle_contour(64)
        pc = project(c, fit_projection_frame(c, "xy"))
        assert np.allclose(pc.points, c.points[:, :2], atol=1e-15)
        assert np.allclose(pc.heights, 0.0, atol=1e-15)

    def test_circle_in_diagonal_plane(self):
        # Unit circle in the plane z = y projects to an ellipse with
        # semi-axes 1 and 1/sqrt(2); heights equal the v coordinate.
        c = circle_contour(128, tilt=math.pi / 4)
        pc = project(c, fit_projection_frame(c, "xy"))
        assert abs(pc.points[:, 0].max() - 1.0) < 1e-12
        assert abs(pc.points[:, 1].max() - 1 / math.sqrt(2)) < 1e-12
        assert np.allclose(pc.heights, pc.points[:, 1], atol=1e-12)

    def test_round_trip(self):
        c = circle_contour(64, tilt=0.5, center=(0.3, -0.2, 1.1))
        frame = fit_projection_frame(c, "auto")
        pc = project(c, frame)
        back = embed(pc, frame)
        assert np.max(np.abs(back - c.points)) < 1e-12

    def test_rejects_collapsed_projection(self):
        c = circle_contour(64)
        with pytest.raises(GraphicalityError):
            project(c, fit_projection_frame(c, "yz"))


class TestDirichletData:
    def test_in_plane_contour_is_isometric(self):
        c = circle_contour(64)
        pc = project(c, fit_projection_frame(c, "xy"))
        bp = dirichlet_data(pc, c, 64)
        assert np.all(bp.speed_ratio == 1.0)
        assert np.all(bp.dirichlet == 0.0)

    def test_tilt_45_extremes(self):
        theta = math.pi / 4
        c = circle_contour(512, tilt=theta)
        pc = project(c, fit_projection_frame(c, "xy"))
        bp = dirichlet_data(pc, c, 512)
        samples = pc.point_at(bp.params)
        # Where the projected tangent is parallel to the tilt axis (top and
        # bottom of the ellipse) the projection is locally isometric.
        i_top = int(np.argmax(samples[:, 1]))
        assert abs(bp.dirichlet[i_top]) < 1e-4
        # Where it is perpendicular (the ellipse's x extremes) the ratio is
        # 1/cos(theta).
        i_right = int(np.argmax(samples[:, 0]))
        expected = 0.5 * math.log(1 / math.cos(theta))
        assert abs(bp.dirichlet[i_right] - expected) < 1e-4

    def test_wavy_curve_matches_dense_fd_oracle(self):
        # Closed space curve with oscillating lift; oracle is a 10x denser
        # central-difference estimate of the lifted-curve speed.
        n = 512
        t = 2 * np.pi * np.arange(n) / n
        pts = np.stack([np.cos(t), np.sin(t), 0.3 * np.sin(2 * t)], axis=1)
        c = Contour3D(pts)
        pc = project(c, fit_projection_frame(c, "xy"))
        bp = dirichlet_data(pc, c, n)

        dense = dirichlet_data(pc, c, 10 * n)
        oracle = dense.speed_ratio_at(bp.params)
        assert np.max(np.abs(bp.speed_ratio - oracle)) < 1e-4

    def test_speed_ratio_never_below_one(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            n = 128
            t = 2 * np.pi * np.arange(n) / n
            a, b = rng.uniform(0.1, 0.5, size=2)
            k = rng.integers(1, 4)
            pts = np.stack([np.cos(t), np.sin(t), a * np.sin(k * t) + b * np.cos(t)], axis=1)
            c = Contour3D(pts)
            pc = project(c, fit_projection_frame(c, "xy"))
            bp = dirichlet_data(pc, c, 256)
            assert np.all(bp.speed_ratio >= 1.0 - 1e-9)
            assert np.all(bp.dirichlet >= -1e-9)
