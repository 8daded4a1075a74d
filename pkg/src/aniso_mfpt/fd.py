"""Finite-difference solvers for the parabolic-limit MFPT equation D : grad grad T = -1."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded

from .analytic import RadialProblem
from .env import GridSpec, TensorField

log = logging.getLogger(__name__)

DIRECT_MAX_NODES = 512 * 512
KRYLOV_MAXITER = 10_000


class SolverError(RuntimeError):
    """Iterative solve failed to reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass
class ScalarField:
    grid: GridSpec
    values: np.ndarray  # (N1, N2)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"field shape {self.values.shape} does not match grid {self.grid.shape}")

    def interpolate(self, x1: float, x2: float) -> float:
        """Bilinear interpolation at a point inside the grid bounds."""
        g = self.grid
        a, b, c, d = g.bounds
        if not (a <= x1 <= b and c <= x2 <= d):
            raise ValueError(f"point ({x1}, {x2}) outside grid bounds {g.bounds}")
        s = (x1 - a) / g.dx1
        t = (x2 - c) / g.dx2
        j = min(int(s), g.N1 - 2)
        k = min(int(t), g.N2 - 2)
        s -= j
        t -= k
        v = self.values
        return float(
            (1 - s) * (1 - t) * v[j, k] + s * (1 - t) * v[j + 1, k] + (1 - s) * t * v[j, k + 1] + s * t * v[j + 1, k + 1]
        )


@dataclass
class LinearSystem:
    """Interior-node system A T = b; Dirichlet nodes are eliminated into b."""

    matrix: sps.csr_matrix
    rhs: np.ndarray
    grid: GridSpec
    unknown: np.ndarray  # (N1, N2) bool, True where T is solved for
    known_values: np.ndarray  # (N1, N2) Dirichlet data (ignored where unknown)

    @property
    def size(self) -> int:
        return self.rhs.size


# neighbour offsets and the tensor component / weight each one carries
def _stencil(t: TensorField, h1: float, h2: float):
    a = t.d11 / (h1 * h1)
    c = t.d22 / (h2 * h2)
    x = t.d12 / (2.0 * h1 * h2)
    return [
        ((0, 0), -2.0 * a - 2.0 * c),
        ((1, 0), a),
        ((-1, 0), a),
        ((0, 1), c),
        ((0, -1), c),
        ((1, 1), x),
        ((-1, -1), x),
        ((1, -1), -x),
        ((-1, 1), -x),
    ]


def assemble_2d(
    tensor: TensorField,
    grid: GridSpec | None = None,
    *,
    boundary_values: np.ndarray | None = None,
    source: np.ndarray | float = -1.0,
    mask: np.ndarray | None = None,
) -> LinearSystem:
    """Nine-point discretization of D11 T_11 + 2 D12 T_12 + D22 T_22 = source.

    All rectangle edges are Dirichlet (``boundary_values``, default 0).
    ``mask`` marks additional nodes to pin to their boundary value, which
    embeds a curved absorbing domain into the rectangle (first-order accurate).
    """
    grid = grid if grid is not None else tensor.grid
    shape = grid.shape
    for name in ("d11", "d12", "d22"):
        if np.shape(getattr(tensor, name)) != shape:
            raise ValueError(f"tensor component {name} has shape {np.shape(getattr(tensor, name))}, grid is {shape}")
    known = np.zeros(shape) if boundary_values is None else np.asarray(boundary_values, dtype=float)
    if known.shape != shape:
        raise ValueError(f"boundary values have shape {known.shape}, grid is {shape}")

    unknown = np.zeros(shape, dtype=bool)
    unknown[1:-1, 1:-1] = True
    if mask is not None:
        unknown &= np.asarray(mask, dtype=bool)
    index = -np.ones(shape, dtype=np.int64)
    index[unknown] = np.arange(int(unknown.sum()))
    n = int(unknown.sum())

    J, K = np.nonzero(unknown)
    rows = index[J, K]
    b = np.broadcast_to(np.asarray(source, dtype=float), shape)[J, K].copy()

    ri, ci, vals = [], [], []
    for (dj, dk), coeff in _stencil(tensor, grid.dx1, grid.dx2):
        w = coeff[J, K]
        nj, nk = J + dj, K + dk
        nb_idx = index[nj, nk]
        inside = nb_idx >= 0
        ri.append(rows[inside])
        ci.append(nb_idx[inside])
        vals.append(w[inside])
        out = ~inside
        b[out] -= w[out] * known[nj[out], nk[out]]
    A = sps.csr_matrix(
        (np.concatenate(vals), (np.concatenate(ri), np.concatenate(ci))), shape=(n, n)
    )
    A.sum_duplicates()
    A.eliminate_zeros()
    return LinearSystem(A, b, grid, unknown, known)


def _relative_residual(A, x, b) -> float:
    bnorm = np.abs(b).max() if b.size else 0.0
    r = np.abs(A @ x - b).max() if b.size else 0.0
    return r / bnorm if bnorm > 0 else r


def _rounding_floor(A, x, b) -> float:
    """Smallest relative residual that double precision can certify for x."""
    if not b.size:
        return 0.0
    scale = abs(A) @ np.abs(x) + np.abs(b)
    bnorm = np.abs(b).max()
    return 64.0 * np.finfo(float).eps * scale.max() / (bnorm if bnorm > 0 else 1.0)


def _target(A, x, b, tol: float) -> float:
    floor = _rounding_floor(A, x, b)
    if floor > tol:
        log.info("requested tol %.1e is below the rounding floor %.1e; using the floor", tol, floor)
    return max(tol, floor)


def solve_system(system: LinearSystem, tol: float = 1e-10, method: str = "auto") -> ScalarField:
    """Solve an assembled system to ||Ax - b||_inf / ||b||_inf <= tol.

    ``method`` is "direct" (sparse LU), "krylov" (Jacobi-preconditioned
    BiCGSTAB) or "auto", which picks direct up to 512^2 grid nodes. On very
    fine grids ``tol`` is raised to the double-precision rounding floor of
    the residual itself.
    """
    A, b = system.matrix, system.rhs
    if method == "auto":
        method = "direct" if system.grid.N1 * system.grid.N2 <= DIRECT_MAX_NODES else "krylov"
    if b.size == 0:
        x = np.zeros(0)
    elif method == "direct":
        lu = spla.splu(A.tocsc())
        x = lu.solve(b)
        res = _relative_residual(A, x, b)
        if res > tol:
            # one step of iterative refinement recovers digits lost to pivoting
            x = x + lu.solve(b - A @ x)
            res = _relative_residual(A, x, b)
        if res > _target(A, x, b, tol):
            raise SolverError("direct solve missed the residual tolerance", res)
    elif method == "krylov":
        x = _krylov(A, b, tol)
    else:
        raise ValueError(f"unknown solver method {method!r}")
    values = system.known_values.copy()
    values[system.unknown] = x
    return ScalarField(system.grid, values)


def _krylov(A, b, tol: float) -> np.ndarray:
    diag = A.diagonal()
    if np.any(diag == 0):
        raise SolverError("zero diagonal entry; Jacobi preconditioner undefined", math.inf)
    M = spla.LinearOperator(A.shape, matvec=lambda v: v / diag, dtype=float)
    x = np.zeros_like(b)
    used = 0
    rtol = 0.1 * tol
    best = math.inf
    stalls = 0
    res = _relative_residual(A, x, b)
    while used < KRYLOV_MAXITER:
        count = 0

        def cb(_xk):
            nonlocal count
            count += 1

        x, _info = spla.bicgstab(A, b, x0=x, rtol=rtol, atol=0.0, maxiter=KRYLOV_MAXITER - used, M=M, callback=cb)
        used += max(count, 1)
        res = _relative_residual(A, x, b)
        if res <= _target(A, x, b, tol):
            log.debug("BiCGSTAB converged in %d iterations", used)
            return x
        if res < 0.5 * best:
            best, stalls = res, 0
        else:
            stalls += 1
            if stalls >= 3:
                break
        rtol = max(0.1 * rtol, 1e-15)
    raise SolverError(f"BiCGSTAB did not reach the tolerance within {used} iterations", res)


def solve_mfpt_2d(tensor: TensorField, *, tol: float = 1e-10, method: str = "auto", mask=None) -> ScalarField:
    """MFPT field with T = 0 on every rectangle edge (and on masked-out nodes)."""
    return solve_system(assemble_2d(tensor, mask=mask), tol=tol, method=method)


def difference_map(T_aniso: ScalarField, T_iso: ScalarField) -> ScalarField:
    if T_aniso.grid != T_iso.grid:
        raise ValueError("difference_map needs fields on the same grid")
    return ScalarField(T_aniso.grid, T_aniso.values - T_iso.values)


def disk_mask(grid: GridSpec, R0: float, rho: float = 0.0) -> np.ndarray:
    """Nodes strictly inside the disk (or annulus) centred at the origin."""
    X1, X2 = grid.mesh()
    r = np.hypot(X1, X2)
    inside = r < R0
    return inside & (r > rho) if rho > 0 else inside


# --------------------------------------------------------------------------
# radial problems
# --------------------------------------------------------------------------

def radial_grid(problem: RadialProblem, N: int) -> np.ndarray:
    if N < 16:
        raise ValueError(f"radial solves need N >= 16 nodes, got {N}")
    return np.linspace(problem.r_min, problem.R0, N)


def _radial_operator(problem: RadialProblem, r: np.ndarray):
    """Tridiagonal coefficients (lower, diag, upper) of
    (1+a)/2 T'' + (1-a)/(2r) T', i.e. the radial D:grad grad T / (2 D)."""
    h = r[1] - r[0]
    a = np.array([problem.alpha_at(x) for x in r])
    if np.any(~(np.abs(a) < 1.0)):
        raise ValueError("alpha(r) must lie in (-1, 1) on the whole radial grid")
    lower = (1.0 + a) / (2.0 * h * h)
    upper = lower.copy()
    diag = -(1.0 + a) / (h * h)
    with np.errstate(divide="ignore", invalid="ignore"):
        drift = (1.0 - a) / (4.0 * r * h)
    lower = lower - drift
    upper = upper + drift
    if r[0] == 0.0:
        # isotropic regularized operator at the origin with ghost node T(-h) = T(h)
        lower[0], diag[0], upper[0] = 0.0, -2.0 / (h * h), 2.0 / (h * h)
    return lower, diag, upper


def _solve_radial(problem: RadialProblem, r: np.ndarray, f: np.ndarray) -> np.ndarray:
    lower, diag, upper = _radial_operator(problem, r)
    N = r.size
    b = f.copy()
    bcs = problem.boundary_conditions()
    left_kind = bcs[0][0]
    right_kind = bcs[1][0]
    # row 0
    if problem.rho is None:
        pass  # origin row already regularized
    elif left_kind == "value":
        lower[0], diag[0], upper[0], b[0] = 0.0, 1.0, 0.0, 0.0
    else:
        # (-3 T0 + 4 T1 - T2) = 0, with T2 eliminated through row 1
        c1 = upper[1]
        diag[0], upper[0], b[0] = -3.0 + lower[1] / c1, 4.0 + diag[1] / c1, b[1] / c1
        lower[0] = 0.0
    if right_kind == "value":
        lower[-1], diag[-1], upper[-1], b[-1] = 0.0, 1.0, 0.0, 0.0
    else:
        # (3 T_N - 4 T_{N-1} + T_{N-2}) = 0, with T_{N-2} eliminated through row N-2
        a2 = lower[-2]
        diag[-1], lower[-1], b[-1] = 3.0 - upper[-2] / a2, -4.0 - diag[-2] / a2, -b[-2] / a2
        upper[-1] = 0.0
    ab = np.zeros((3, N))
    ab[0, 1:] = upper[:-1]
    ab[1] = diag
    ab[2, :-1] = lower[1:]
    return solve_banded((1, 1), ab, b)


def radial_solve(problem: RadialProblem, N: int, source=None) -> tuple[np.ndarray, np.ndarray]:
    """Second-order FD solution of the radial MFPT equation on N nodes.

    ``source`` is the right-hand side of D:grad grad T = source (default -1),
    given as a scalar or an array over the radial nodes. Returns (r, T).
    """
    r = radial_grid(problem, N)
    s = np.broadcast_to(np.asarray(-1.0 if source is None else source, dtype=float), r.shape)
    T = _solve_radial(problem, r, s / (2.0 * problem.D))
    return r, T


def radial_moments(problem: RadialProblem, N: int, M: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Moments T_1..T_M of the exit time from D:grad grad T_m = -m T_{m-1}, T_0 = 1."""
    if M < 1:
        raise ValueError("need at least one moment")
    r = radial_grid(problem, N)
    prev = np.ones_like(r)
    out = []
    for m in range(1, M + 1):
        _, Tm = radial_solve(problem, N, source=-m * prev)
        out.append(Tm)
        prev = Tm
    return r, out
