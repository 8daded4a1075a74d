"""Event-driven Monte Carlo for the velocity-jump process.

Walkers fly in straight lines at speed sigma for Exponential(mu) durations and
redraw their direction from the turning kernel at each turn. Boundary
crossings are resolved exactly. Every walker owns a PCG64 stream derived from
(master seed, start index, walker index), so results do not depend on how the
walkers are split across worker threads.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.integrate import trapezoid

from . import _engine as eng
from .dist import (
    BIMODAL_VON_MISES,
    STRICT_ALIGNMENT,
    UNIFORM,
    VARIANT_CODES,
    VARIANTS,
    DirectionalKernel,
    k_of_alpha,
)
from .env import ABSORBING, AnisotropyField, Domain
from .fileio import fmt

DEFAULT_EVENT_CAP = 10**8
ORIENTATIONS = ("fixed", "radial", "circular", "grid")
_ORIENT_CODES = {"fixed": eng.FIXED, "radial": eng.RADIAL, "circular": eng.CIRCULAR, "grid": eng.GRID}
_TRAJ_ROWS = 4096


class NonExitError(RuntimeError):
    """A walker exceeded the event cap without being absorbed."""

    def __init__(self, turns: int, position: tuple[float, float]):
        super().__init__(
            f"non-exit suspected: walker made {turns} turns without reaching an absorbing "
            f"boundary (last position {position[0]:.6g}, {position[1]:.6g}); raise the event cap "
            "if the run is expected to terminate"
        )
        self.turns = turns
        self.position = position


# --------------------------------------------------------------------------
# Kernel fields
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KernelField:
    """Turning kernel as a function of position.

    ``orientation`` selects where the preferred direction comes from: a
    constant ``gamma`` ("fixed"), the unit radial vector ("radial"), its
    counter-clockwise normal ("circular"), or per-node values looked up at the
    nearest grid node ("grid"). Where the direction is undefined (the origin,
    or k = 0 on a grid) the turn is uniform.
    """

    variant: str = UNIFORM
    orientation: str = "fixed"
    k: float = 0.0
    gamma: tuple[float, float] = (1.0, 0.0)
    aniso: AnisotropyField | None = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}; expected one of {VARIANTS}")
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"unknown orientation {self.orientation!r}; expected one of {ORIENTATIONS}")
        if not (self.k >= 0 and math.isfinite(self.k)):
            raise ValueError(f"concentration must be finite and >= 0, got {self.k!r}")
        if self.orientation == "grid" and self.aniso is None:
            raise ValueError("grid orientation needs an AnisotropyField")
        if self.orientation == "fixed":
            object.__setattr__(self, "gamma", DirectionalKernel(UNIFORM, 0.0, self.gamma).gamma)

    @classmethod
    def uniform(cls) -> "KernelField":
        return cls()

    @classmethod
    def constant(cls, kernel: DirectionalKernel) -> "KernelField":
        return cls(kernel.variant, "fixed", kernel.k, kernel.gamma)

    @classmethod
    def radial(cls, variant: str, k: float = 0.0, circular: bool = False) -> "KernelField":
        return cls(variant, "circular" if circular else "radial", float(k))

    @classmethod
    def from_alpha(cls, alpha: float) -> "KernelField":
        """Bimodal kernel whose signed anisotropy indicator is ``alpha``.

        alpha > 0 aligns with the radial direction, alpha < 0 with the
        circular direction, and alpha = 0 is the uniform kernel.
        """
        if alpha == 0:
            return cls.uniform()
        return cls.radial(BIMODAL_VON_MISES, k_of_alpha(alpha), circular=alpha < 0)

    @classmethod
    def from_anisotropy(cls, aniso: AnisotropyField, variant: str = BIMODAL_VON_MISES) -> "KernelField":
        return cls(variant, "grid", float(aniso.k0), aniso=aniso)

    def _engine_args(self):
        code = VARIANT_CODES[self.variant]
        orient = _ORIENT_CODES[self.orientation]
        if self.orientation != "grid":
            g1, g2 = self.gamma
            return (code, orient, float(self.k), g1, g2,
                    eng.EMPTY_GRID, eng.EMPTY_GRID, eng.EMPTY_GRID, np.zeros(6))
        a = self.aniso
        g = np.asarray(a.gamma, dtype=float)
        kk = np.asarray(a.k, dtype=float)
        bad = ~np.isfinite(g[..., 0]) | ~np.isfinite(g[..., 1]) | ((g[..., 0] == 0) & (g[..., 1] == 0))
        kk = np.ascontiguousarray(np.where(bad, 0.0, kk))
        g1 = np.ascontiguousarray(np.where(bad, 1.0, g[..., 0]))
        g2 = np.ascontiguousarray(np.where(bad, 0.0, g[..., 1]))
        ga, gb_, gc, gd = a.grid.bounds
        bounds = np.array([ga, gb_, gc, gd, a.grid.dx1, a.grid.dx2])
        if self.variant == STRICT_ALIGNMENT:
            kk = np.where(kk > 0, 1.0, 0.0)
        return (code, orient, 0.0, 1.0, 0.0, kk, g1, g2, bounds)


def _domain_args(domain: Domain):
    roles = np.zeros(4, dtype=np.int64)
    for i, piece in enumerate(domain.pieces):
        roles[i] = 0 if domain.boundary[piece] == ABSORBING else 1
    p = np.zeros(6)
    if domain.shape == "rectangle":
        p[2:6] = domain.bounds
        return eng.RECTANGLE, p, roles
    p[0] = domain.R0
    if domain.shape == "annulus":
        p[1] = domain.rho
        return eng.ANNULUS, p, roles
    return eng.DISK, p, roles


def _on_absorbing_boundary(domain: Domain, x1: float, x2: float, tol: float = 1e-12) -> bool:
    b = domain.boundary
    if domain.shape == "rectangle":
        a, bb, c, d = domain.bounds
        hits = {"left": abs(x1 - a) <= tol, "right": abs(x1 - bb) <= tol,
                "bottom": abs(x2 - c) <= tol, "top": abs(x2 - d) <= tol}
    else:
        r = math.hypot(x1, x2)
        hits = {"outer": abs(r - domain.R0) <= tol * max(1.0, domain.R0)}
        if domain.shape == "annulus":
            hits["inner"] = abs(r - domain.rho) <= tol * max(1.0, domain.rho)
    return any(v and b[p] == ABSORBING for p, v in hits.items())


def _check_physics(mu: float, sigma: float, event_cap: int) -> None:
    if not (mu > 0 and math.isfinite(mu)):
        raise ValueError(f"turning rate mu must be positive and finite, got {mu!r}")
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ValueError(f"speed sigma must be positive and finite, got {sigma!r}")
    if int(event_cap) < 1:
        raise ValueError(f"event cap must be >= 1, got {event_cap!r}")


def walker_rng(seed: int, start_index: int, walker_index: int) -> np.random.Generator:
    """Independent generator for one walker, fixed by (seed, start index, walker index)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(start_index), int(walker_index)))
    return np.random.Generator(np.random.PCG64(ss))


# --------------------------------------------------------------------------
# Single walker
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExitRecord:
    time: float
    point: tuple[float, float]
    turns: int
    trajectory: np.ndarray | None = None  # rows (t, x1, x2)


def simulate_exit(
    domain: Domain,
    kernel: KernelField,
    mu: float,
    sigma: float,
    x0: Sequence[float],
    theta0: float | None = None,
    rng: np.random.Generator | int | None = None,
    record_trajectory: bool = False,
    event_cap: int = DEFAULT_EVENT_CAP,
    permissive: bool = False,
) -> ExitRecord:
    """Run one walker from ``x0`` until it is absorbed.

    ``theta0=None`` draws the initial direction from the kernel at ``x0``.
    Raises :class:`NonExitError` when the walker makes ``event_cap`` turns
    without exiting. In permissive mode a start on an absorbing boundary
    returns exit time 0.
    """
    _check_physics(mu, sigma, event_cap)
    x1, x2 = (float(v) for v in x0)
    if not domain.contains(x1, x2, strict=True):
        if permissive and domain.contains(x1, x2, strict=False):
            if _on_absorbing_boundary(domain, x1, x2):
                traj = np.array([[0.0, x1, x2]]) if record_trajectory else None
                return ExitRecord(0.0, (x1, x2), 0, traj)
        else:
            raise ValueError(f"start ({x1}, {x2}) is not strictly inside the {domain.shape}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    dom, p, roles = _domain_args(domain)
    kargs = kernel._engine_args()
    draw = theta0 is None
    u1, u2 = (1.0, 0.0) if draw else (math.cos(theta0), math.sin(theta0))
    rows = _TRAJ_ROWS if record_trajectory else 0
    while True:
        state = rng.bit_generator.state if record_trajectory else None
        buf = np.empty((rows, 3)) if rows else eng.EMPTY_TRAJ
        status, t, e1, e2, turns, n = eng.walk(
            rng, x1, x2, u1, u2, draw, float(mu), float(sigma), int(event_cap),
            dom, p, roles, *kargs, buf)
        if n >= 0:
            break
        rng.bit_generator.state = state
        rows *= 8
    if status == eng.CAPPED:
        raise NonExitError(turns, (e1, e2))
    return ExitRecord(t, (e1, e2), turns, buf[:n].copy() if record_trajectory else None)


# --------------------------------------------------------------------------
# Estimators
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FptEstimate:
    """Exit-time statistics from one start.

    ``moments[m-1]`` is the raw moment Theta_m = mean(t^m). Statistics use
    the walkers that exited; ``capped`` counts the ones stopped at the event
    cap.
    """

    start: tuple[float, float]
    theta0: float | None
    n: int
    mean: float
    stderr: float
    moments: tuple[float, ...]
    capped: int = 0
    samples: np.ndarray | None = field(default=None, repr=False)

    def theta(self, m: int) -> float:
        if m == 0:
            return 1.0
        return self.moments[m - 1]


@dataclass(frozen=True)
class SurvivalCurve:
    times: np.ndarray
    survival: np.ndarray
    n: int

    def integral(self) -> float:
        """Trapezoid integral of S over the time grid."""
        return float(trapezoid(self.survival, self.times))


def _parse_start(start) -> tuple[float, float, float | None]:
    vals = tuple(start)
    if len(vals) == 2:
        return float(vals[0]), float(vals[1]), None
    if len(vals) == 3:
        th = vals[2]
        return float(vals[0]), float(vals[1]), None if th is None else float(th)
    raise ValueError(f"a start is (x1, x2) or (x1, x2, theta0), got {start!r}")


def _default_workers() -> int:
    return max(1, min(os.cpu_count() or 1, 32))


def _run_chunk(args) -> tuple[np.ndarray, np.ndarray]:
    (seed, si, lo, hi, x1, x2, u1, u2, draw, mu, sigma, cap, dom, p, roles, kargs) = args
    times = np.empty(hi - lo)
    capped = np.zeros(hi - lo, dtype=bool)
    for i, w in enumerate(range(lo, hi)):
        rng = walker_rng(seed, si, w)
        status, t, _, _, _, _ = eng.walk(rng, x1, x2, u1, u2, draw, mu, sigma, cap,
                                         dom, p, roles, *kargs, eng.EMPTY_TRAJ)
        times[i] = t
        capped[i] = status == eng.CAPPED
    return times, capped


def sample_exit_times(
    domain: Domain,
    kernel: KernelField,
    mu: float,
    sigma: float,
    start,
    N: int,
    seed: int,
    start_index: int = 0,
    event_cap: int = DEFAULT_EVENT_CAP,
    workers: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Exit times of N walkers from one start (inf where capped) and the capped mask."""
    _check_physics(mu, sigma, event_cap)
    if int(N) < 1:
        raise ValueError(f"walker count must be >= 1, got {N!r}")
    x1, x2, theta0 = _parse_start(start)
    if not domain.contains(x1, x2, strict=True):
        raise ValueError(f"start ({x1}, {x2}) is not strictly inside the {domain.shape}")
    dom, p, roles = _domain_args(domain)
    kargs = kernel._engine_args()
    draw = theta0 is None
    u1, u2 = (1.0, 0.0) if draw else (math.cos(theta0), math.sin(theta0))
    workers = _default_workers() if workers is None else max(1, int(workers))
    N = int(N)
    nchunks = min(N, workers * 4)
    edges = np.linspace(0, N, nchunks + 1).astype(int)
    jobs = [(int(seed), int(start_index), int(lo), int(hi), x1, x2, u1, u2, draw,
             float(mu), float(sigma), int(event_cap), dom, p, roles, kargs)
            for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
    if workers == 1:
        parts = [_run_chunk(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    times = np.concatenate([pt[0] for pt in parts])
    capped = np.concatenate([pt[1] for pt in parts])
    return times, capped


def summarize(start, samples: np.ndarray, capped: int, M: int, keep_samples: bool = False) -> FptEstimate:
    """FptEstimate from exit-time samples of the walkers that exited."""
    x1, x2, theta0 = _parse_start(start)
    t = np.asarray(samples, dtype=float)
    n = t.size
    if n == 0:
        nan = float("nan")
        return FptEstimate((x1, x2), theta0, 0, nan, nan, tuple([nan] * M), capped,
                           t if keep_samples else None)
    moments = tuple(math.fsum(t**m) / n for m in range(1, M + 1))
    mean = moments[0]
    if n > 1:
        var = math.fsum((t - mean) ** 2) / (n - 1)
        stderr = math.sqrt(var / n)
    else:
        stderr = float("nan")
    return FptEstimate((x1, x2), theta0, n, mean, stderr, moments, capped, t if keep_samples else None)


def estimate_theta(
    domain: Domain,
    kernel: KernelField,
    mu: float,
    sigma: float,
    starts: Iterable,
    N: int,
    M: int = 2,
    seed: int = 0,
    event_cap: int = DEFAULT_EVENT_CAP,
    workers: int | None = None,
    keep_samples: bool = False,
) -> list[FptEstimate]:
    """Exit-time moments Theta_1..Theta_M from N walkers per start.

    A start is (x1, x2) for a kernel-drawn initial direction or
    (x1, x2, theta0) for a fixed one.
    """
    if int(N) < 2:
        raise ValueError(f"need at least 2 walkers per start, got N={N!r}")
    if int(M) < 1:
        raise ValueError(f"need at least one moment, got M={M!r}")
    out = []
    for si, start in enumerate(starts):
        times, capped = sample_exit_times(domain, kernel, mu, sigma, start, N, seed, si, event_cap, workers)
        out.append(summarize(start, times[~capped], int(capped.sum()), int(M), keep_samples))
    return out


def estimate_survival(
    domain: Domain,
    kernel: KernelField,
    mu: float,
    sigma: float,
    start,
    times: Sequence[float],
    N: int,
    seed: int = 0,
    event_cap: int = DEFAULT_EVENT_CAP,
    workers: int | None = None,
) -> SurvivalCurve:
    """Fraction of N walkers whose exit time exceeds each grid time.

    Capped walkers count as surviving at every time.
    """
    grid = np.asarray(times, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must start at 0 and increase strictly")
    samples, _ = sample_exit_times(domain, kernel, mu, sigma, start, N, seed, 0, event_cap, workers)
    ordered = np.sort(samples)
    survivors = ordered.size - np.searchsorted(ordered, grid, side="right")
    return SurvivalCurve(grid, survivors / ordered.size, int(ordered.size))


def trajectories_csv(runs: Iterable[np.ndarray], comment: str | None = None) -> str:
    """CSV text ``run_id,t,x1,x2`` with one row per event point (start, turns, reflections, exit)."""
    lines = [f"# {comment}"] if comment else []
    lines.append("run_id,t,x1,x2")
    for rid, run in enumerate(runs):
        for t, a, b in np.asarray(run, dtype=float).reshape(-1, 3):
            lines.append(f"{rid},{fmt(t)},{fmt(a)},{fmt(b)}")
    return "\n".join(lines) + "\n"


def export_trajectories(runs: Iterable[np.ndarray], path, comment: str | None = None) -> None:
    """Write recorded trajectories to ``path`` as CSV ``run_id,t,x1,x2``."""
    with open(path, "w", newline="") as fh:
        fh.write(trajectories_csv(runs, comment))
