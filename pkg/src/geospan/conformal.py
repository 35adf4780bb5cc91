"""Conformal-factor boundary-value problem.

The conformal factor f of the surface metric satisfies a fourth-order
nonlinear PDE inside the projected domain, with prescribed boundary values
(half the log of the lift speed ratio) and zero normal derivative. Its
linear part is the biharmonic operator, so the solve proceeds in two
stages: a clamped-plate linear solve, then an optional damped fixed-point
refinement of the full nonlinear residual preconditioned by the same
clamped-plate operator.

The nonlinear residual is a 14-term sum of derivative monomials; expanding
the variational gradient of the squared-curvature energy gives exactly

    fxxxx + 2 fxxyy + fyyyy
    - 4 (fx fxxx + fx fxyy + fy fxxy + fy fyyy)
    + 4 (fx^2 + fy^2)(fxx + fyy)
    - 3 (fxx + fyy)^2 - ... (cross term -6 fxx fyy included above)

up to the positive factor 2 e^{-2f}, which is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .contour import BoundaryParam
from .errors import GridError, LinearSolveError, NewtonError
from .grid import BOUNDARY, EXTERIOR, INTERIOR, GridDomain, ScalarField

__all__ = [
    "DerivativeStack",
    "ELTerm",
    "ELCoefficients",
    "EL_COEFFICIENTS",
    "SparseSystem",
    "ConformalSolution",
    "fd_derivatives",
    "assemble_clamped_biharmonic",
    "solve_linear",
    "el_residual",
    "neumann_residual",
    "boundary_normal_derivative",
    "solve_nonlinear",
    "solve_conformal",
]


@dataclass(frozen=True)
class DerivativeStack:
    """Partial derivatives of a field up to total order four.

    Mixed partials are stored once per multi-index. Pure derivatives come
    from windowed 1D stencils; fxy and fxxyy are symmetrized compositions,
    fxxy applies d/dy to fxx and fxyy applies d/dx to fyy, which keeps the
    family consistent under swapping the two axes.
    """

    fx: np.ndarray
    fy: np.ndarray
    fxx: np.ndarray
    fxy: np.ndarray
    fyy: np.ndarray
    fxxx: np.ndarray
    fxxy: np.ndarray
    fxyy: np.ndarray
    fyyy: np.ndarray
    fxxxx: np.ndarray
    fxxyy: np.ndarray
    fyyyy: np.ndarray
    grid: GridDomain


_ORDERS = {
    "fx": (1, 0),
    "fy": (0, 1),
    "fxx": (2, 0),
    "fxy": (1, 1),
    "fyy": (0, 2),
    "fxxx": (3, 0),
    "fxxy": (2, 1),
    "fxyy": (1, 2),
    "fyyy": (0, 3),
    "fxxxx": (4, 0),
    "fxxyy": (2, 2),
    "fyyyy": (0, 4),
}


def fd_derivatives(f: ScalarField) -> DerivativeStack:
    """Evaluate the derivative stack of a grid field."""
    g = f.grid
    vec = f.values.ravel()
    shape = f.values.shape
    parts = {
        name: (g.diff_op(du, dv) @ vec).reshape(shape)
        for name, (du, dv) in _ORDERS.items()
    }
    return DerivativeStack(grid=g, **parts)


@dataclass(frozen=True)
class ELTerm:
    """One monomial of the nonlinear residual: coeff * prod(factor^power)."""

    factors: tuple[tuple[str, int], ...]
    coefficient: float

    def evaluate(self, stack: DerivativeStack) -> np.ndarray:
        out = np.full(stack.fx.shape, self.coefficient)
        for name, power in self.factors:
            arr = getattr(stack, name)
            out = out * (arr if power == 1 else arr**power)
        return out

    def swapped(self) -> "ELTerm":
        swapped = tuple(
            (_SWAP[name], power) for name, power in self.factors
        )
        return ELTerm(factors=tuple(sorted(swapped)), coefficient=self.coefficient)

    def canonical(self) -> "ELTerm":
        return ELTerm(factors=tuple(sorted(self.factors)), coefficient=self.coefficient)


_SWAP = {
    "fx": "fy",
    "fy": "fx",
    "fxx": "fyy",
    "fyy": "fxx",
    "fxy": "fxy",
    "fxxx": "fyyy",
    "fyyy": "fxxx",
    "fxxy": "fxyy",
    "fxyy": "fxxy",
    "fxxxx": "fyyyy",
    "fyyyy": "fxxxx",
    "fxxyy": "fxxyy",
}


@dataclass(frozen=True)
class ELCoefficients:
    """The 14 monomial terms of the nonlinear residual, in fixed order."""

    terms: tuple[ELTerm, ...]

    def coefficient_vector(self) -> tuple[float, ...]:
        return tuple(t.coefficient for t in self.terms)

    def is_swap_symmetric(self) -> bool:
        """Swapping the two axes maps the term multiset onto itself."""
        direct = sorted((t.canonical().factors, t.coefficient) for t in self.terms)
        swapped = sorted((t.swapped().factors, t.coefficient) for t in self.terms)
        return direct == swapped


EL_COEFFICIENTS = ELCoefficients(
    terms=(
        ELTerm((("fxx", 2),), -3.0),
        ELTerm((("fxx", 1), ("fyy", 1)), -6.0),
        ELTerm((("fx", 2), ("fxx", 1)), 4.0),
        ELTerm((("fx", 2), ("fyy", 1)), 4.0),
        ELTerm((("fx", 1), ("fxxx", 1)), -4.0),
        ELTerm((("fx", 1), ("fxyy", 1)), -4.0),
        ELTerm((("fxxxx", 1),), 1.0),
        ELTerm((("fxxyy", 1),), 2.0),
        ELTerm((("fyy", 2),), -3.0),
        ELTerm((("fy", 2), ("fxx", 1)), 4.0),
        ELTerm((("fy", 2), ("fyy", 1)), 4.0),
        ELTerm((("fy", 1), ("fyyy", 1)), -4.0),
        ELTerm((("fy", 1), ("fxxy", 1)), -4.0),
        ELTerm((("fyyyy", 1),), 1.0),
    )
)


def el_residual(f: ScalarField) -> ScalarField:
    """Nonlinear residual field; nonzero on interior nodes only."""
    stack = fd_derivatives(f)
    total = np.zeros(f.values.shape)
    for term in EL_COEFFICIENTS.terms:
        total += term.evaluate(stack)
    total[~f.grid.interior_mask] = 0.0
    return ScalarField(values=total, grid=f.grid)


# 13-point biharmonic stencil offsets (di, dj) and coefficients (times 1/h^4).
_BIHARMONIC_STENCIL = (
    ((0, 0), 20.0),
    ((1, 0), -8.0),
    ((-1, 0), -8.0),
    ((0, 1), -8.0),
    ((0, -1), -8.0),
    ((1, 1), 2.0),
    ((1, -1), 2.0),
    ((-1, 1), 2.0),
    ((-1, -1), 2.0),
    ((2, 0), 1.0),
    ((-2, 0), 1.0),
    ((0, 2), 1.0),
    ((0, -2), 1.0),
)


@dataclass(frozen=True)
class SparseSystem:
    """Assembled linear system over interior unknowns.

    interior_idx maps matrix rows to flat grid nodes; boundary_idx and
    boundary_values reconstitute the prescribed part of the field.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    interior_idx: np.ndarray
    boundary_idx: np.ndarray
    boundary_values: np.ndarray
    grid: GridDomain

    def with_rhs(self, rhs: np.ndarray) -> "SparseSystem":
        return SparseSystem(
            matrix=self.matrix,
            rhs=np.asarray(rhs, dtype=np.float64),
            interior_idx=self.interior_idx,
            boundary_idx=self.boundary_idx,
            boundary_values=self.boundary_values,
            grid=self.grid,
        )


def _resolve_boundary_data(
    g: GridDomain,
    bp: BoundaryParam | None,
    dirichlet: np.ndarray | None,
    neumann: np.ndarray | None,
) -> tuple[np.ndarray, np.ndarray]:
    nb = len(g.boundary_idx)
    if dirichlet is not None:
        dir_vals = np.asarray(dirichlet, dtype=np.float64)
    elif bp is not None:
        if g.params is None:
            raise GridError("grid has no boundary parameters; run map_boundary_to_param")
        dir_vals = bp.dirichlet_at(g.params)
    else:
        raise ValueError("either bp or dirichlet values are required")
    if dir_vals.shape != (nb,):
        raise ValueError("dirichlet values must align with the boundary nodes")
    neu_vals = np.zeros(nb) if neumann is None else np.asarray(neumann, dtype=np.float64)
    if neu_vals.shape != (nb,):
        raise ValueError("neumann values must align with the boundary nodes")
    return dir_vals, neu_vals


def assemble_clamped_biharmonic(
    g: GridDomain,
    bp: BoundaryParam | None = None,
    *,
    dirichlet: np.ndarray | None = None,
    neumann: np.ndarray | None = None,
) -> SparseSystem:
    """Clamped-plate system: 13-point biharmonic rows on interior nodes.

    Boundary nodes carry prescribed values (moved to the right-hand side).
    Stencil arms that jump past the boundary band into exterior nodes are
    eliminated by reflection: the ghost takes the mirrored interior value,
    which encodes a zero normal derivative; nonzero normal-derivative data
    adds the first-order inhomogeneous correction to the right-hand side.
    """
    dir_vals, neu_vals = _resolve_boundary_data(g, bp, dirichlet, neumann)
    if np.any(neu_vals != 0.0) and g.normals is None:
        raise GridError("neumann data requires boundary normals")

    cls = g.classes.ravel()
    n_int = len(g.interior_idx)
    if n_int == 0:
        raise GridError("no interior unknowns")
    row_of = np.full(cls.shape, -1, dtype=np.int64)
    row_of[g.interior_idx] = np.arange(n_int)
    bpos = g.boundary_position  # flat -> boundary array position

    h = g.spacing
    scale = 1.0 / h**4
    nx = g.nx
    p = g.interior_idx
    rows_all, cols_all, data_all = [], [], []
    rhs = np.zeros(n_int)
    normals = g.normals if g.normals is not None else np.zeros((len(g.boundary_idx), 2))

    for (di, dj), coeff in _BIHARMONIC_STENCIL:
        q = p + di + dj * nx
        cq = cls[q]
        w = coeff * scale

        m = cq == INTERIOR
        if np.any(m):
            rows_all.append(row_of[p[m]])
            cols_all.append(row_of[q[m]])
            data_all.append(np.full(m.sum(), w))

        m = cq == BOUNDARY
        if np.any(m):
            rhs[m] -= w * dir_vals[bpos(q[m])]

        m = cq == EXTERIOR
        if np.any(m):
            # Ghost: fold onto the mirror node, which is p itself both for
            # straight arms (reflection across the in-between boundary node)
            # and diagonal arms (reflection across the crossing).
            rows_all.append(row_of[p[m]])
            cols_all.append(row_of[p[m]])
            data_all.append(np.full(m.sum(), w))
            if np.any(neu_vals != 0.0):
                arm = np.array([di, dj], dtype=np.float64)
                gap = h * np.linalg.norm(arm)
                ahat = arm / np.linalg.norm(arm)
                if di == 0 or dj == 0:
                    b_flat = p[m] + di // 2 + (dj // 2) * nx
                    if np.any(cls[b_flat] != BOUNDARY):
                        raise GridError("stencil arm crossed a malformed boundary band")
                    k = bpos(b_flat)
                    proj = normals[k] @ ahat
                    rhs[m] -= w * gap * proj * neu_vals[k]
                else:
                    b1 = p[m] + di
                    b2 = p[m] + dj * nx
                    if np.any(cls[b1] != BOUNDARY) or np.any(cls[b2] != BOUNDARY):
                        raise GridError("diagonal ghost without flanking boundary nodes")
                    k1, k2 = bpos(b1), bpos(b2)
                    proj = 0.5 * (
                        (normals[k1] @ ahat) * neu_vals[k1]
                        + (normals[k2] @ ahat) * neu_vals[k2]
                    )
                    rhs[m] -= w * gap * proj

    matrix = sp.csr_matrix(
        (
            np.concatenate(data_all),
            (np.concatenate(rows_all), np.concatenate(cols_all)),
        ),
        shape=(n_int, n_int),
    )
    matrix.sum_duplicates()
    return SparseSystem(
        matrix=matrix,
        rhs=rhs,
        interior_idx=g.interior_idx,
        boundary_idx=g.boundary_idx,
        boundary_values=dir_vals,
        grid=g,
    )


_LINEAR_TOL = 1e-10


def _checked_solve(matrix: sp.csr_matrix, rhs: np.ndarray) -> np.ndarray:
    lu = spla.splu(matrix.tocsc())
    x = lu.solve(rhs)
    return x


def _relative_residual(matrix: sp.csr_matrix, x: np.ndarray, rhs: np.ndarray) -> float:
    num = float(np.linalg.norm(matrix @ x - rhs))
    den = float(np.linalg.norm(rhs))
    return num / den if den > 0 else num


def solve_linear(sys: SparseSystem) -> ScalarField:
    """Direct sparse solve with a residual guarantee.

    The relative residual must come out at or below 1e-10 (absolute when
    the right-hand side is zero); otherwise the solve is reported failed.
    """
    x = _checked_solve(sys.matrix, sys.rhs)
    res = _relative_residual(sys.matrix, x, sys.rhs)
    if not np.isfinite(res) or res > _LINEAR_TOL:
        raise LinearSolveError(
            f"linear solve residual {res:.3e} exceeds {_LINEAR_TOL:.0e}", residual=res
        )
    return field_from_parts(sys.grid, x, sys.interior_idx, sys.boundary_idx, sys.boundary_values)


def field_from_parts(
    g: GridDomain,
    interior_values: np.ndarray,
    interior_idx: np.ndarray,
    boundary_idx: np.ndarray,
    boundary_values: np.ndarray,
) -> ScalarField:
    vals = np.zeros(g.ny * g.nx)
    vals[interior_idx] = interior_values
    vals[boundary_idx] = boundary_values
    return ScalarField(values=vals.reshape(g.ny, g.nx), grid=g)


def boundary_normal_derivative(f: ScalarField, g: GridDomain) -> np.ndarray:
    """Signed one-sided normal derivative at each boundary node."""
    if g.normals is None:
        raise GridError("grid has no boundary normals")
    vec = f.values.ravel()
    fx = (g.diff_op(1, 0) @ vec)[g.boundary_idx]
    fy = (g.diff_op(0, 1) @ vec)[g.boundary_idx]
    return fx * g.normals[:, 0] + fy * g.normals[:, 1]


def neumann_residual(f: ScalarField, g: GridDomain) -> float:
    """Max absolute normal derivative over boundary nodes."""
    return float(np.max(np.abs(boundary_normal_derivative(f, g))))


@dataclass(frozen=True)
class ConformalSolution:
    """Solved conformal factor with its residual diagnostics."""

    f: ScalarField
    linear_residual: float
    el_residual_norm: float
    neumann_residual_norm: float
    iterations: int
    converged: bool


_DEGENERATE_DATA = 1e-12


def solve_nonlinear(
    g: GridDomain,
    bp: BoundaryParam,
    f0: ScalarField | None = None,
    tol: float = 1e-6,
    max_iters: int = 50,
) -> ConformalSolution:
    """Damped fixed-point refinement of the full nonlinear residual.

    Each step solves the clamped-plate operator against the current
    residual and backtracks on its max norm; boundary values never move.
    The effective stopping threshold is tol * (1 + max|f|).
    """
    sys = assemble_clamped_biharmonic(g, bp)

    if np.max(np.abs(sys.boundary_values)) < _DEGENERATE_DATA:
        f = ScalarField.zeros(g)
        return ConformalSolution(
            f=f,
            linear_residual=0.0,
            el_residual_norm=0.0,
            neumann_residual_norm=neumann_residual(f, g),
            iterations=0,
            converged=True,
        )

    if f0 is None:
        f0 = solve_linear(sys)
    lin_res = _relative_residual(sys.matrix, f0.values.ravel()[sys.interior_idx], sys.rhs)

    lu = spla.splu(sys.matrix.tocsc())
    interior = sys.interior_idx
    f = f0
    r = el_residual(f)
    norm = float(np.max(np.abs(r.values)))
    best = norm
    history = [norm]
    iterations = 0
    converged = norm <= tol * (1.0 + float(np.max(np.abs(f.values))))

    while not converged and iterations < max_iters:
        if not np.isfinite(norm):
            raise NewtonError("nonlinear residual became non-finite", history=history)
        delta = lu.solve(r.values.ravel()[interior])
        accepted = False
        omega = 1.0
        for _ in range(9):
            trial_vals = f.values.copy()
            trial_flat = trial_vals.ravel()
            trial_flat[interior] -= omega * delta
            trial = f.with_values(trial_vals)
            r_trial = el_residual(trial)
            n_trial = float(np.max(np.abs(r_trial.values)))
            if n_trial < norm:
                f, r, norm = trial, r_trial, n_trial
                accepted = True
                break
            omega *= 0.5
        iterations += 1
        history.append(norm)
        if norm > 10.0 * best:
            raise NewtonError(
                f"nonlinear iteration diverged: residual {norm:.3e} vs best {best:.3e}",
                history=history,
            )
        best = min(best, norm)
        converged = norm <= tol * (1.0 + float(np.max(np.abs(f.values))))
        if not accepted:
            break  # stalled at the achievable floor for this grid

    return ConformalSolution(
        f=f,
        linear_residual=lin_res,
        el_residual_norm=norm,
        neumann_residual_norm=neumann_residual(f, g),
        iterations=iterations,
        converged=converged,
    )


def solve_conformal(
    g: GridDomain,
    bp: BoundaryParam,
    tol: float = 1e-6,
    max_iters: int = 50,
    linear_only: bool = False,
) -> ConformalSolution:
    """Linear clamped-plate solve, then nonlinear refinement unless disabled."""
    if not linear_only:
        return solve_nonlinear(g, bp, tol=tol, max_iters=max_iters)
    sys = assemble_clamped_biharmonic(g, bp)
    f = solve_linear(sys)
    lin_res = _relative_residual(sys.matrix, f.values.ravel()[sys.interior_idx], sys.rhs)
    r = el_residual(f)
    return ConformalSolution(
        f=f,
        linear_residual=lin_res,
        el_residual_norm=float(np.max(np.abs(r.values))),
        neumann_residual_norm=neumann_residual(f, g),
        iterations=0,
        converged=True,
    )
