"""Turning-kernel distributions on the velocity circle V = sigma * S^1.

Densities, closed-form moments and samplers for the uniform, von Mises,
bimodal von Mises and strict-alignment kernels, together with the modified
Bessel functions I_0, I_1, I_2 that their normalizations need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numba as nb
import numpy as np
from scipy.optimize import brentq

ArrayLike = Union[float, np.ndarray]

UNIFORM = "uniform"
VON_MISES = "von_mises"
BIMODAL_VON_MISES = "bimodal_von_mises"
STRICT_ALIGNMENT = "strict_alignment"
VARIANTS = (UNIFORM, VON_MISES, BIMODAL_VON_MISES, STRICT_ALIGNMENT)

# integer codes used inside compiled samplers
VARIANT_CODES = {UNIFORM: 0, VON_MISES: 1, BIMODAL_VON_MISES: 2, STRICT_ALIGNMENT: 3}

_SERIES_LIMIT = 30.0


# --------------------------------------------------------------------------
# Modified Bessel functions of the first kind, orders 0..2
# --------------------------------------------------------------------------

def _check_bessel_args(order: int, x: float) -> None:
    if order not in (0, 1, 2):
        raise ValueError(f"unsupported Bessel order {order!r}; only 0, 1, 2 are available")
    if not x >= 0.0:
        raise ValueError(f"Bessel argument must be non-negative, got {x!r}")


def _series_scaled(order: int, x: float) -> float:
    """exp(-x) I_n(x) from the power series sum (x/2)^(2m+n) / (m! (m+n)!)."""
    half = 0.5 * x
    term = half**order / math.factorial(order)
    total = term
    q = half * half
    m = 0
    while True:
        m += 1
        term *= q / (m * (m + order))
        total += term
        if term <= 1e-17 * total:
            break
    return total * math.exp(-x)


def _asymptotic_scaled(order: int, x: float) -> float:
    """exp(-x) I_n(x) from the large-argument expansion, truncated at its smallest term."""
    mu = 4.0 * order * order
    term = 1.0
    total = 1.0
    k = 0
    while True:
        k += 1
        nxt = -term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        if abs(nxt) >= abs(term) or k > 200:
            break
        term = nxt
        total += term
        if abs(term) <= 1e-17 * abs(total):
            break
    return total / math.sqrt(2.0 * math.pi * x)


def bessel_ie(order: int, x: float) -> float:
    """Exponentially scaled Bessel function exp(-x) * I_order(x)."""
    _check_bessel_args(order, x)
    if x == 0.0:
        return 1.0 if order == 0 else 0.0
    if x <= _SERIES_LIMIT:
        return _series_scaled(order, x)
    return _asymptotic_scaled(order, x)


def bessel_i(order: int, x: float) -> float:
    """Modified Bessel function of the first kind I_order(x) for order 0, 1 or 2.

    Overflows to ``inf`` beyond x ~ 709; use :func:`bessel_ie` or the ratio
    helpers there.
    """
    scaled = bessel_ie(order, x)
    try:
        return scaled * math.exp(x)
    except OverflowError:
        return math.inf


def _map_unique(func, values: ArrayLike) -> ArrayLike:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return func(float(arr))
    uniq, inverse = np.unique(arr, return_inverse=True)
    mapped = np.array([func(float(u)) for u in uniq], dtype=float)
    return mapped[inverse].reshape(arr.shape)


def bessel_ratio(order: int, k: ArrayLike) -> ArrayLike:
    """I_order(k) / I_0(k), overflow-free."""
    def ratio(v: float) -> float:
        if v < 0:
            raise ValueError(f"concentration must be non-negative, got {v!r}")
        return bessel_ie(order, v) / bessel_ie(0, v)

    return _map_unique(ratio, k)


def alpha_of_k(k: ArrayLike) -> ArrayLike:
    """Anisotropy indicator I_2(k)/I_0(k); lies in [0, 1) and increases with k."""
    return bessel_ratio(2, k)


def k_of_alpha(alpha: float) -> float:
    """Concentration k >= 0 with alpha_of_k(k) == |alpha|."""
    a = abs(float(alpha))
    if not a < 1.0:
        raise ValueError(f"|alpha| must be < 1, got {alpha!r}")
    if a == 0.0:
        return 0.0
    hi = 4.0 / (1.0 - a) + 10.0
    while alpha_of_k(hi) < a:
        hi *= 2.0
    return brentq(lambda k: alpha_of_k(k) - a, 0.0, hi, xtol=1e-14, rtol=1e-15, maxiter=500)


# --------------------------------------------------------------------------
# Kernels
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DirectionalKernel:
    """Turning kernel q(v) on V = sigma * S^1.

    ``gamma`` is normalized on construction. ``k`` is ignored by the uniform
    and strict-alignment variants.
    """

    variant: str = UNIFORM
    k: float = 0.0
    gamma: tuple[float, float] = (1.0, 0.0)
    sigma: float = 1.0

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown kernel variant {self.variant!r}; expected one of {VARIANTS}")
        if not (self.k >= 0.0 and math.isfinite(self.k)):
            raise ValueError(f"concentration k must be finite and >= 0, got {self.k!r}")
        if not (self.sigma > 0.0 and math.isfinite(self.sigma)):
            raise ValueError(f"speed sigma must be > 0, got {self.sigma!r}")
        g1, g2 = (float(c) for c in self.gamma)
        norm = math.hypot(g1, g2)
        if not norm > 0.0 or not math.isfinite(norm):
            raise ValueError(f"preferred direction must be a nonzero finite vector, got {self.gamma!r}")
        object.__setattr__(self, "gamma", (g1 / norm, g2 / norm))

    @property
    def code(self) -> int:
        return VARIANT_CODES[self.variant]


@dataclass(frozen=True)
class KernelMoments:
    mean: np.ndarray = field(repr=True)  # E_q, length/time
    cov: np.ndarray = field(repr=True)  # V_q, length^2/time^2


def density(kernel: DirectionalKernel, theta: ArrayLike) -> ArrayLike:
    """Density of the post-turn velocity v = sigma (cos theta, sin theta) on V.

    Normalized so that integrating over V (arc length sigma d theta) gives 1.
    """
    if kernel.variant == STRICT_ALIGNMENT:
        raise ValueError("strict_alignment is a Dirac kernel and has no density")
    theta = np.asarray(theta, dtype=float)
    base = 1.0 / (2.0 * math.pi * kernel.sigma)
    if kernel.variant == UNIFORM or kernel.k == 0.0:
        out = np.full_like(theta, base)
        return out if out.ndim else float(out)
    k = kernel.k
    g1, g2 = kernel.gamma
    c = g1 * np.cos(theta) + g2 * np.sin(theta)
    i0e = bessel_ie(0, k)
    if kernel.variant == VON_MISES:
        out = base * np.exp(k * (c - 1.0)) / i0e
    else:
        # cosh(k c) e^{-k} = (e^{k(|c|-1)} + e^{-k(|c|+1)}) / 2
        a = np.abs(c)
        out = base * 0.5 * (np.exp(k * (a - 1.0)) + np.exp(-k * (a + 1.0))) / i0e
    return out if out.ndim else float(out)


def kernel_moments(kernel: DirectionalKernel) -> KernelMoments:
    """Closed-form mean and covariance of the velocity under ``kernel``."""
    s2 = kernel.sigma**2
    g = np.array(kernel.gamma)
    ggT = np.outer(g, g)
    eye = np.eye(2)
    if kernel.variant == UNIFORM:
        return KernelMoments(np.zeros(2), 0.5 * s2 * eye)
    if kernel.variant == STRICT_ALIGNMENT:
        # bimodal convention: modes at +gamma and -gamma
        return KernelMoments(np.zeros(2), s2 * ggT)
    a2 = float(bessel_ratio(2, kernel.k))
    if kernel.variant == BIMODAL_VON_MISES:
        return KernelMoments(np.zeros(2), s2 * (0.5 * (1.0 - a2) * eye + a2 * ggT))
    a1 = float(bessel_ratio(1, kernel.k))
    mean = kernel.sigma * a1 * g
    cov = s2 * (0.5 * (1.0 - a2) * eye + (a2 - a1 * a1) * ggT)
    return KernelMoments(mean, cov)


# --------------------------------------------------------------------------
# Sampling (compiled; shared with the Monte Carlo engine)
# --------------------------------------------------------------------------

@nb.njit(cache=True, nogil=True, inline="always")
def uniform_direction(rng):
    while True:
        a = 2.0 * rng.random() - 1.0
        b = 2.0 * rng.random() - 1.0
        q = a * a + b * b
        if 0.0 < q <= 1.0:
            q = math.sqrt(q)
            return a / q, b / q


@nb.njit(cache=True, nogil=True, inline="always")
def von_mises_cosine(rng, k):
    """Best-Fisher rejection sampler; returns (cos theta, sin theta) about the mean direction."""
    if k < 1e-5:
        s = 1.0 / k + k
    else:
        tau = 1.0 + math.sqrt(1.0 + 4.0 * k * k)
        rho = (tau - math.sqrt(2.0 * tau)) / (2.0 * k)
        s = (1.0 + rho * rho) / (2.0 * rho)
    while True:
        z = math.cos(math.pi * rng.random())
        w = (1.0 + s * z) / (s + z)
        y = k * (s - w)
        u = rng.random()
        if y * (2.0 - y) - u > 0.0 or math.log(y / u) + 1.0 - y >= 0.0:
            break
    if w > 1.0:
        w = 1.0
    elif w < -1.0:
        w = -1.0
    sn = math.sqrt(1.0 - w * w)
    if rng.random() < 0.5:
        sn = -sn
    return w, sn


@nb.njit(cache=True, nogil=True, inline="always")
def draw_direction(rng, code, k, g1, g2):
    """Unit direction drawn from the kernel with preferred direction (g1, g2)."""
    if code == 0 or (code != 3 and k < 1e-8):
        return uniform_direction(rng)
    if code == 3:
        if rng.random() < 0.5:
            return -g1, -g2
        return g1, g2
    c, s = von_mises_cosine(rng, k)
    u1 = c * g1 - s * g2
    u2 = c * g2 + s * g1
    if code == 2 and rng.random() < 0.5:
        return -u1, -u2
    return u1, u2


@nb.njit(cache=True)
def _sample_many(rng, code, k, g1, g2, n):
    out = np.empty((n, 2))
    for i in range(n):
        u1, u2 = draw_direction(rng, code, k, g1, g2)
        out[i, 0] = u1
        out[i, 1] = u2
    return out


def sample_direction(kernel: DirectionalKernel, rng: np.random.Generator, size: int | None = None):
    """Draw turning angles theta in [0, 2 pi) from ``kernel``.

    Returns a float when ``size`` is None, otherwise an array of ``size`` angles.
    """
    n = 1 if size is None else int(size)
    g1, g2 = kernel.gamma
    units = _sample_many(rng, kernel.code, float(kernel.k), g1, g2, n)
    theta = np.mod(np.arctan2(units[:, 1], units[:, 0]), 2.0 * math.pi)
    return float(theta[0]) if size is None else theta
