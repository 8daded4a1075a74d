"""Closed-form radial MFPTs on the disk and the annulus.

All solutions solve

    (1 + a(r)) / (2 r) (r T')' - a(r) / r T' = -1 / (2 D)

with ``a`` the signed anisotropy indicator (positive for radial, negative for
circular preferred orientation) and D = sigma^2 / (2 mu).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
from scipy.integrate import quad

EXITS = ("outer", "inner", "both")
LIMIT_MODES = ("radial", "isotropic", "circular")
ALPHA_ZERO = 1e-8

AlphaSpec = Union[float, Callable[[float], float]]


@dataclass(frozen=True)
class RadialProblem:
    """Radially symmetric MFPT problem on a disk (rho is None) or an annulus."""

    R0: float
    D: float
    alpha: AlphaSpec = 0.0
    exit: str = "outer"
    rho: float | None = None

    def __post_init__(self) -> None:
        if not self.R0 > 0:
            raise ValueError(f"outer radius must be positive, got {self.R0!r}")
        if not self.D > 0:
            raise ValueError(f"diffusivity must be positive, got {self.D!r}")
        if self.exit not in EXITS:
            raise ValueError(f"exit must be one of {EXITS}, got {self.exit!r}")
        if self.rho is None:
            if self.exit != "outer":
                raise ValueError(f"a disk can only be exited through its outer circle, got exit={self.exit!r}")
        elif not 0 < self.rho < self.R0:
            raise ValueError(f"annulus needs 0 < rho < R0, got rho={self.rho!r}, R0={self.R0!r}")
        if not callable(self.alpha) and not -1.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (-1, 1), got {self.alpha!r}")

    @property
    def geometry(self) -> str:
        return "disk" if self.rho is None else "annulus"

    @property
    def r_min(self) -> float:
        return 0.0 if self.rho is None else self.rho

    @property
    def beta(self) -> float:
        """2 alpha / (1 + alpha); only defined for constant alpha."""
        if callable(self.alpha):
            raise TypeError("beta is only defined for constant alpha")
        return 2.0 * self.alpha / (1.0 + self.alpha)

    def alpha_at(self, r: float) -> float:
        return float(self.alpha(r)) if callable(self.alpha) else float(self.alpha)

    def boundary_conditions(self) -> list[tuple[str, float, float]]:
        """BC pair as ("value" | "derivative", radius, prescribed value)."""
        if self.rho is None:
            return [("derivative", 0.0, 0.0), ("value", self.R0, 0.0)]
        inner = ("value", self.rho, 0.0) if self.exit in ("inner", "both") else ("derivative", self.rho, 0.0)
        outer = ("value", self.R0, 0.0) if self.exit in ("outer", "both") else ("derivative", self.R0, 0.0)
        return [inner, outer]

    def mfpt(self, r):
        """Closed-form T(r) for constant alpha."""
        if callable(self.alpha):
            raise TypeError("closed forms need constant alpha; use general_alpha_quadrature")
        if self.rho is None:
            return disk_exit_time(r, self.R0, self.D)
        return annulus_mfpt(r, self.rho, self.R0, self.D, self.alpha, self.exit)


def _check_radius(r, lo: float, hi: float) -> np.ndarray:
    arr = np.asarray(r, dtype=float)
    tol = 1e-12 * hi
    if np.any(~np.isfinite(arr)) or np.any(arr < lo - tol) or np.any(arr > hi + tol):
        raise ValueError(f"radius must lie in [{lo}, {hi}], got {r!r}")
    return np.clip(arr, lo, hi)


def _out(arr: np.ndarray):
    return float(arr) if arr.ndim == 0 else arr


def disk_exit_time(r, R0: float, D: float):
    """(R0^2 - r^2) / (4 D): the disk MFPT, identical for every constant alpha."""
    if not R0 > 0 or not D > 0:
        raise ValueError("R0 and D must be positive")
    r = _check_radius(r, 0.0, R0)
    return _out((R0 * R0 - r * r) / (4.0 * D))


def _log_expm1_ratio(beta: float, L) -> tuple[np.ndarray, np.ndarray]:
    """Sign and log-magnitude of (exp(beta L) - 1) / beta, safe when exp(beta L) overflows."""
    L = np.asarray(L, dtype=float)
    if beta == 0.0:
        with np.errstate(divide="ignore"):
            return np.sign(L), np.log(np.abs(L))
    x = beta * L
    with np.errstate(divide="ignore"):
        # log|e^x - 1| = x + log(1 - e^-x) for x > 0, log(1 - e^x) for x <= 0
        mag = np.where(x > 0, x + np.log(-np.expm1(-np.abs(x))), np.log(-np.expm1(-np.abs(x))))
    return np.sign(x) * np.sign(beta), mag - math.log(abs(beta))


def annulus_mfpt(r, rho: float, R0: float, D: float, alpha: float, exit: str, *, log: bool = False):
    """MFPT on the annulus rho <= r <= R0 with constant anisotropy ``alpha``.

    ``exit`` selects the absorbing circle(s): "inner" (outer circle reflecting),
    "outer" (inner circle reflecting) or "both". With ``log=True`` the natural
    logarithm of T is returned (``-inf`` where T = 0); this stays finite when
    T itself overflows, which happens for inner exit as alpha -> -1.
    """
    if not 0 < rho < R0:
        raise ValueError(f"annulus needs 0 < rho < R0, got rho={rho!r}, R0={R0!r}")
    if not D > 0:
        raise ValueError(f"diffusivity must be positive, got {D!r}")
    if not -1.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in the open interval (-1, 1), got {alpha!r}")
    if exit not in EXITS:
        raise ValueError(f"exit must be one of {EXITS}, got {exit!r}")
    r = _check_radius(r, rho, R0)

    if abs(alpha) < ALPHA_ZERO:
        T = _annulus_isotropic(r, rho, R0, D, exit)
        if log:
            with np.errstate(divide="ignore"):
                return _out(np.log(T))
        return _out(T)

    beta = 2.0 * alpha / (1.0 + alpha)
    power = 2.0 / (1.0 + alpha)  # beta / alpha

    if exit == "both":
        sgn, num = _log_expm1_ratio(beta, np.log(r / rho))
        _, den = _log_expm1_ratio(beta, math.log(R0 / rho))
        frac = sgn * np.exp(num - den)
        T = ((R0 * R0 - rho * rho) * frac - (r * r - rho * rho)) / (4.0 * D)
        T = np.where(r <= rho, 0.0, T)
        if log:
            with np.errstate(divide="ignore"):
                return _out(np.log(T))
        return _out(T)

    if exit == "inner":
        quad_part = (rho * rho - r * r) / (4.0 * D)
        log_scale = power * math.log(R0) + beta * math.log(rho)
        sign, log_ratio = _log_expm1_ratio(beta, np.log(r / rho))
    else:
        quad_part = (R0 * R0 - r * r) / (4.0 * D)
        log_scale = power * math.log(rho) + beta * math.log(R0)
        sign, log_ratio = _log_expm1_ratio(beta, np.log(r / R0))
    # second term = sign * exp(log_second); exp(log_second) may overflow
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        log_second = log_scale + log_ratio - math.log(2.0 * D)
        T = quad_part + sign * np.exp(log_second)
        if not log:
            return _out(np.asarray(T, dtype=float))
        huge = log_second > 700.0
        safe = np.where(huge, log_second, 0.0)
        logT = np.where(
            huge,
            safe + np.log1p(quad_part * np.exp(-safe) * sign),
            np.log(np.where(T > 0, T, 0.0)),
        )
        return _out(logT)


def _annulus_isotropic(r: np.ndarray, rho: float, R0: float, D: float, exit: str) -> np.ndarray:
    if exit == "inner":
        T = (rho * rho - r * r) / (4.0 * D) + R0 * R0 / (2.0 * D) * np.log(r / rho)
    elif exit == "outer":
        T = (R0 * R0 - r * r) / (4.0 * D) + rho * rho / (2.0 * D) * np.log(r / R0)
    else:
        lr, lR, lp = np.log(r), math.log(R0), math.log(rho)
        T = ((R0 * R0 - rho * rho) * lr - (r * r - rho * rho) * lR + (r * r - R0 * R0) * lp) / (4.0 * D * (lR - lp))
    return T


def annulus_limit(r, rho: float, R0: float, D: float, mode: str, exit: str):
    """Limits of the annulus MFPT for purely radial (alpha -> 1), isotropic
    (alpha -> 0) or purely circular (alpha -> -1) motion. May return ``inf``."""
    if mode not in LIMIT_MODES:
        raise ValueError(f"mode must be one of {LIMIT_MODES}, got {mode!r}")
    if exit not in EXITS:
        raise ValueError(f"exit must be one of {EXITS}, got {exit!r}")
    if not 0 < rho < R0 or not D > 0:
        raise ValueError("need 0 < rho < R0 and D > 0")
    r = _check_radius(r, rho, R0)
    if mode == "isotropic":
        return _out(_annulus_isotropic(r, rho, R0, D, exit))
    if mode == "radial":
        if exit == "inner":
            T = (rho * rho - r * r) / (4.0 * D) + R0 * (r - rho) / (2.0 * D)
        elif exit == "outer":
            T = (R0 * R0 - r * r) / (4.0 * D) + rho * (r - R0) / (2.0 * D)
        else:
            T = (rho - r) * (r - R0) / (4.0 * D)
        return _out(T)
    # circular
    if exit == "inner":
        T = np.where(r > rho, np.inf, 0.0)
    elif exit == "outer":
        T = (R0 * R0 - r * r) / (4.0 * D)
    else:
        T = np.where(r > rho, (R0 * R0 - r * r) / (4.0 * D), 0.0)
    return _out(np.asarray(T, dtype=float))


def general_alpha_quadrature(
    r,
    alpha: AlphaSpec,
    D: float,
    bcs: Sequence[tuple[str, float, float]],
    lower: float,
    *,
    breakpoints: Sequence[float] = (),
    epsabs: float = 1e-10,
):
    """T(r) = -r^2/(4D) + H1 + H2 * G(r) for radially varying alpha(r).

    G(r) = int_lower^r g, g(eta) = exp(-int_lower^eta (1 - a)/((1 + a) s) ds).
    ``bcs`` holds two conditions ("value" | "derivative", radius, value).
    A derivative condition at radius 0 is the regularity condition T'(0) = 0,
    which forces H2 = 0 whenever g is unbounded at the origin.
    """
    if not D > 0:
        raise ValueError(f"diffusivity must be positive, got {D!r}")
    if len(bcs) != 2:
        raise ValueError("exactly two boundary conditions are required")
    alpha_fn = alpha if callable(alpha) else (lambda s, a=float(alpha): a)
    pts = sorted(float(p) for p in breakpoints)

    def exponent_density(s: float) -> float:
        a = alpha_fn(s)
        if not -1.0 < a < 1.0:
            raise ValueError(f"alpha(r) must lie in (-1, 1); alpha({s}) = {a}")
        return (1.0 - a) / ((1.0 + a) * s)

    def _quad(f, lo, hi):
        if lo == hi:
            return 0.0
        sign = 1.0
        if hi < lo:
            lo, hi, sign = hi, lo, -1.0
        inside = [p for p in pts if lo < p < hi]
        val, _ = quad(f, lo, hi, epsabs=epsabs, epsrel=1e-13, limit=200, points=inside or None)
        return sign * val

    def g(eta: float) -> float:
        if eta == 0.0:
            return math.inf
        return math.exp(-_quad(exponent_density, lower, eta))

    def G(x: float) -> float:
        return _quad(g, lower, x)

    rows, rhs = [], []
    for kind, rb, value in bcs:
        if kind == "value":
            rows.append([1.0, G(rb)])
            rhs.append(value + rb * rb / (4.0 * D))
        elif kind == "derivative":
            grb = g(rb)
            if math.isinf(grb):
                # regularity at the origin: H2 must vanish
                rows.append([0.0, 1.0])
                rhs.append(0.0)
            else:
                rows.append([0.0, grb])
                rhs.append(value + rb / (2.0 * D))
        else:
            raise ValueError(f"unknown boundary condition kind {kind!r}")
    A = np.array(rows)
    scale = np.abs(A).max(axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    if abs(np.linalg.det(A / scale)) < 1e-12:
        raise ValueError(f"singular boundary-condition system for {list(bcs)!r}")
    H1, H2 = np.linalg.solve(A, np.array(rhs))

    r_arr = np.asarray(r, dtype=float)
    flat = np.array([-x * x / (4.0 * D) + H1 + (H2 * G(x) if H2 != 0.0 else 0.0) for x in r_arr.ravel()])
    return _out(flat.reshape(r_arr.shape))


def quadrature_mfpt(problem: RadialProblem, r, **kwargs):
    """general_alpha_quadrature with the problem's own boundary conditions.

    Lower integration limits sit at rho for the annulus and R0/2 for the disk.
    """
    lower = problem.rho if problem.rho is not None else 0.5 * problem.R0
    r = _check_radius(r, problem.r_min, problem.R0)
    return general_alpha_quadrature(r, problem.alpha, problem.D, problem.boundary_conditions(), lower, **kwargs)
