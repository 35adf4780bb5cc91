"""Shared constructions for the test suite."""

import numpy as np

from geospan import circle_contour, fit_projection_frame, project
from geospan.contour import Contour3D


def planar_from_2d(points2d):
    """PlanarContour and Contour3D from a z=0 polyline."""
    pts = np.asarray(points2d, dtype=float)
    pts3 = np.concatenate([pts, np.zeros((len(pts), 1))], axis=1)
    c = Contour3D(pts3)
    return project(c, fit_projection_frame(c, "xy")), c


def square_contour_2d(n_per_side=8, side=1.0):
    """Closed polyline of the square [0, side]^2, counterclockwise."""
    t = np.linspace(0, side, n_per_side, endpoint=False)
    bottom = np.stack([t, np.zeros_like(t)], axis=1)
    right = np.stack([np.full_like(t, side), t], axis=1)
    top = np.stack([side - t, np.full_like(t, side)], axis=1)
    left = np.stack([np.zeros_like(t), side - t], axis=1)
    return np.concatenate([bottom, right, top, left], axis=0)


def circle_planar(n=256, radius=1.0):
    c = circle_contour(n, radius=radius)
    return project(c, fit_projection_frame(c, "xy"))


def tilted_circle_planar(n=256, tilt=np.pi / 6):
    """Projection of a tilted circle onto the xy plane, with its contour."""
    c = circle_contour(n, tilt=tilt)
    return project(c, fit_projection_frame(c, "xy")), c
