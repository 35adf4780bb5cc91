"""Exception hierarchy shared across the package."""


class GeospanError(Exception):
    """Base class for all package errors."""


class ContourError(GeospanError):
    """Invalid contour input (parse failure, too few points, not simple)."""


class GraphicalityError(GeospanError):
    """Projection onto the chosen plane is not one-to-one."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = tuple(violations)


class GridError(GeospanError):
    """Grid construction failed (degenerate or under-resolved domain)."""


class LinearSolveError(GeospanError):
    """Linear solve did not reach the required residual."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class NewtonError(GeospanError):
    """Nonlinear iteration diverged or hit a singular linearization."""

    def __init__(self, message, history=(), bad_nodes=()):
        super().__init__(message)
        self.history = tuple(history)
        self.bad_nodes = tuple(bad_nodes)


class MeshError(GeospanError):
    """Mesh extraction failed (empty domain or broken topology)."""
