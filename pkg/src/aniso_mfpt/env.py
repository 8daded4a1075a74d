"""Spatial environment: domains, grids, linear features and the fields derived from them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .dist import alpha_of_k

ABSORBING = "absorbing"
REFLECTING = "reflecting"
ROLES = (ABSORBING, REFLECTING)

RECT_EDGES = ("left", "right", "bottom", "top")
DEFAULT_WINDOW = 5


@dataclass(frozen=True)
class Domain:
    """Disk, annulus or axis-aligned rectangle with a role per boundary piece.

    Boundary pieces are "outer" (disk), "inner"/"outer" (annulus) and
    "left"/"right"/"bottom"/"top" (rectangle). Missing pieces default to
    absorbing.
    """

    shape: str
    R0: float | None = None
    rho: float | None = None
    bounds: tuple[float, float, float, float] | None = None
    boundary: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        pieces = self.pieces
        roles = {p: self.boundary.get(p, ABSORBING) for p in pieces}
        unknown = set(self.boundary) - set(pieces)
        if unknown:
            raise ValueError(f"unknown boundary pieces {sorted(unknown)} for a {self.shape}")
        for p, role in roles.items():
            if role not in ROLES:
                raise ValueError(f"boundary role for {p!r} must be one of {ROLES}, got {role!r}")
        if ABSORBING not in roles.values():
            raise ValueError("at least one boundary piece must be absorbing")
        object.__setattr__(self, "boundary", roles)
        if self.shape in ("disk", "annulus"):
            if self.R0 is None or not self.R0 > 0:
                raise ValueError(f"R0 must be positive, got {self.R0!r}")
        if self.shape == "annulus" and (self.rho is None or not 0 < self.rho < self.R0):
            raise ValueError(f"annulus needs 0 < rho < R0, got rho={self.rho!r}")
        if self.shape == "rectangle":
            if self.bounds is None:
                raise ValueError("rectangle needs bounds (a, b, c, d)")
            a, b, c, d = (float(v) for v in self.bounds)
            if not (a < b and c < d):
                raise ValueError(f"rectangle needs a < b and c < d, got {self.bounds!r}")
            object.__setattr__(self, "bounds", (a, b, c, d))

    @property
    def pieces(self) -> tuple[str, ...]:
        if self.shape == "disk":
            return ("outer",)
        if self.shape == "annulus":
            return ("inner", "outer")
        if self.shape == "rectangle":
            return RECT_EDGES
        raise ValueError(f"unknown domain shape {self.shape!r}")

    @classmethod
    def disk(cls, R0: float) -> "Domain":
        return cls("disk", R0=R0)

    @classmethod
    def annulus(cls, rho: float, R0: float, inner: str = ABSORBING, outer: str = ABSORBING) -> "Domain":
        return cls("annulus", R0=R0, rho=rho, boundary={"inner": inner, "outer": outer})

    @classmethod
    def rectangle(cls, a: float, b: float, c: float, d: float, **roles: str) -> "Domain":
        return cls("rectangle", bounds=(a, b, c, d), boundary=roles)

    @property
    def exit(self) -> str | None:
        """Radial exit configuration ("inner" | "outer" | "both") for disks and annuli."""
        if self.shape == "disk":
            return "outer"
        if self.shape == "annulus":
            inner = self.boundary["inner"] == ABSORBING
            outer = self.boundary["outer"] == ABSORBING
            return "both" if inner and outer else ("inner" if inner else "outer")
        return None

    def contains(self, x1: float, x2: float, strict: bool = True) -> bool:
        if self.shape == "rectangle":
            a, b, c, d = self.bounds
            if strict:
                return a < x1 < b and c < x2 < d
            return a <= x1 <= b and c <= x2 <= d
        r = math.hypot(x1, x2)
        lo = self.rho if self.shape == "annulus" else -1.0
        if strict:
            return lo < r < self.R0
        return lo <= r <= self.R0


@dataclass(frozen=True)
class GridSpec:
    """Uniform node grid on [a, b] x [c, d]; node (j, k) sits at (a + j dx1, c + k dx2), 0-based."""

    N1: int
    N2: int
    bounds: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        if self.N1 < 3 or self.N2 < 3:
            raise ValueError(f"grids need at least 3 nodes per direction, got {self.N1}x{self.N2}")
        a, b, c, d = (float(v) for v in self.bounds)
        if not (a < b and c < d):
            raise ValueError(f"grid bounds need a < b and c < d, got {self.bounds!r}")
        object.__setattr__(self, "bounds", (a, b, c, d))

    @property
    def dx1(self) -> float:
        a, b, _, _ = self.bounds
        return (b - a) / (self.N1 - 1)

    @property
    def dx2(self) -> float:
        _, _, c, d = self.bounds
        return (d - c) / (self.N2 - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N1, self.N2)

    @property
    def x1(self) -> np.ndarray:
        a = self.bounds[0]
        return a + self.dx1 * np.arange(self.N1)

    @property
    def x2(self) -> np.ndarray:
        c = self.bounds[2]
        return c + self.dx2 * np.arange(self.N2)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    @classmethod
    def square(cls, N: int, half_width: float = 1.0) -> "GridSpec":
        return cls(N, N, (-half_width, half_width, -half_width, half_width))


class SegmentSet:
    """Straight line segments, stored as an (n, 2, 2) array of endpoint pairs."""

    def __init__(self, segments) -> None:
        arr = np.asarray(segments, dtype=float)
        if arr.size == 0:
            arr = arr.reshape(0, 2, 2)
        if arr.ndim == 2 and arr.shape[1] == 4:
            arr = arr.reshape(-1, 2, 2)
        if arr.ndim != 3 or arr.shape[1:] != (2, 2):
            raise ValueError(f"segments must have shape (n, 2, 2) or (n, 4), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("segment endpoints must be finite")
        if np.any(np.all(arr[:, 0] == arr[:, 1], axis=1)):
            raise ValueError("segment endpoints must be distinct")
        self.endpoints = arr

    def __len__(self) -> int:
        return len(self.endpoints)

    def __iter__(self):
        return iter(self.endpoints)

    def directions(self) -> np.ndarray:
        vec = self.endpoints[:, 1] - self.endpoints[:, 0]
        vec /= np.linalg.norm(vec, axis=1, keepdims=True)
        return canonical_sign(vec)

    def rotated(self, angle: float) -> "SegmentSet":
        c, s = math.cos(angle), math.sin(angle)
        R = np.array([[c, -s], [s, c]])
        return SegmentSet(self.endpoints @ R.T)


def canonical_sign(vec: np.ndarray) -> np.ndarray:
    """Flip unit vectors so the first component is >= 0 (second >= 0 when the first is 0)."""
    vec = np.array(vec, dtype=float, copy=True)
    flip = (vec[..., 0] < 0) | ((vec[..., 0] == 0) & (vec[..., 1] < 0))
    vec[flip] *= -1.0
    return vec


class FeatureFields(NamedTuple):
    d: np.ndarray  # (N1, N2) distance to nearest feature
    gamma: np.ndarray  # (N1, N2, 2) unit direction of the nearest feature
    flagged: np.ndarray  # (N1, N2) bool: ambiguous direction (ties, junctions, isolated pixels)
    grid: GridSpec


@dataclass
class AnisotropyField:
    grid: GridSpec
    d: np.ndarray
    k: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    k0: float
    d0: float


@dataclass
class TensorField:
    grid: GridSpec
    d11: np.ndarray
    d12: np.ndarray
    d22: np.ndarray

    def trace(self) -> np.ndarray:
        return self.d11 + self.d22

    def determinant(self) -> np.ndarray:
        return self.d11 * self.d22 - self.d12 * self.d12


def distance_direction_from_segments(grid: GridSpec, segs: SegmentSet, tie_tol: float = 1e-12) -> FeatureFields:
    """Distance to the nearest segment and that segment's direction at every node.

    Equidistant segments (within ``tie_tol`` relative) resolve to the lowest
    index; nodes where tied segments disagree in direction are flagged.
    """
    if len(segs) == 0:
        raise ValueError("empty segment set; build an isotropic field explicitly instead")
    X1, X2 = grid.mesh()
    px, py = X1.ravel(), X2.ravel()
    dist = np.empty((len(segs), px.size))
    for i, (A, B) in enumerate(segs):
        ex, ey = B - A
        t = ((px - A[0]) * ex + (py - A[1]) * ey) / (ex * ex + ey * ey)
        np.clip(t, 0.0, 1.0, out=t)
        dist[i] = np.hypot(px - (A[0] + t * ex), py - (A[1] + t * ey))
    dmin = dist.min(axis=0)
    tied = dist <= dmin + tie_tol * (1.0 + dmin)
    nearest = np.argmax(tied, axis=0)  # first (lowest-index) tied segment
    dirs = segs.directions()
    gamma = dirs[nearest]
    # flag nodes whose tied segments point different ways
    disagree = np.zeros(px.size, dtype=bool)
    for i in range(len(segs)):
        cross = np.abs(dirs[i, 0] * gamma[:, 1] - dirs[i, 1] * gamma[:, 0]) > 1e-12
        disagree |= tied[i] & cross
    shape = grid.shape
    return FeatureFields(dmin.reshape(shape), gamma.reshape(shape + (2,)), disagree.reshape(shape), grid)


def _disk_offsets(window: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    w = int(math.floor(window))
    o1, o2 = np.meshgrid(np.arange(-w, w + 1), np.arange(-w, w + 1), indexing="ij")
    inside = (o1 * o1 + o2 * o2 <= window * window).astype(float)
    return o1.astype(float), o2.astype(float), inside


def raster_to_field(image: np.ndarray) -> np.ndarray:
    """Reorient an image (row 0 at the top) to field layout [j, k] = (x1, x2)."""
    return np.asarray(image)[::-1, :].T


def field_to_raster(values: np.ndarray) -> np.ndarray:
    return np.asarray(values).T[::-1, :]


def fields_from_raster(
    image: np.ndarray,
    threshold: int,
    window: float = DEFAULT_WINDOW,
    bounds: tuple[float, float, float, float] | None = None,
) -> FeatureFields:
    """Distance and orientation fields from a thresholded grayscale raster.

    Pixels >= ``threshold`` are features. The node grid coincides with the
    pixel centres; ``bounds`` defaults to pixel units. Orientation is the
    principal axis of the feature pixels within ``window`` pixels of the
    nearest feature pixel; windows with a single pixel or an isotropic
    spread give gamma = (1, 0) and are flagged.
    """
    img = np.asarray(image)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("raster must be a non-empty 2-D array")
    feat = raster_to_field(img >= threshold)
    if not feat.any():
        raise ValueError(f"no pixel reaches the threshold {threshold}")
    N1, N2 = feat.shape
    if bounds is None:
        bounds = (0.0, float(N1 - 1), 0.0, float(N2 - 1))
    grid = GridSpec(N1, N2, bounds)
    h1, h2 = grid.dx1, grid.dx2

    d, idx = ndimage.distance_transform_edt(~feat, sampling=(h1, h2), return_indices=True)

    # windowed second moments of the feature mask, in physical offsets
    o1, o2, disk = _disk_offsets(window)
    f = feat.astype(float)
    corr = lambda w: ndimage.correlate(f, w, mode="constant", cval=0.0)  # noqa: E731
    m0 = corr(disk)
    m1 = corr(disk * o1 * h1)
    m2 = corr(disk * o2 * h2)
    m11 = corr(disk * (o1 * h1) ** 2)
    m22 = corr(disk * (o2 * h2) ** 2)
    m12 = corr(disk * (o1 * h1) * (o2 * h2))
    with np.errstate(invalid="ignore", divide="ignore"):
        c11 = m11 / m0 - (m1 / m0) ** 2
        c22 = m22 / m0 - (m2 / m0) ** 2
        c12 = m12 / m0 - (m1 / m0) * (m2 / m0)
    angle = 0.5 * np.arctan2(2.0 * c12, c11 - c22)
    spread = np.hypot(c11 - c22, 2.0 * c12)
    scale = np.maximum(c11 + c22, 0.0)
    degenerate = (np.rint(m0) <= 1) | ~(spread > 1e-9 * np.maximum(scale, h1 * h2))
    g_feat = np.stack([np.cos(angle), np.sin(angle)], axis=-1)
    g_feat[degenerate] = (1.0, 0.0)
    g_feat = canonical_sign(g_feat)

    near_j, near_k = idx
    gamma = g_feat[near_j, near_k]
    flagged = degenerate[near_j, near_k]
    return FeatureFields(d, gamma, flagged, grid)


def anisotropy_from_distance(d: np.ndarray, gamma: np.ndarray, k0: float, d0: float, grid: GridSpec | None = None) -> AnisotropyField:
    """k = k0 within distance d0 of a feature and 0 elsewhere; alpha = I2(k)/I0(k)."""
    if not k0 >= 0 or not d0 >= 0:
        raise ValueError(f"k0 and d0 must be non-negative, got k0={k0!r}, d0={d0!r}")
    d = np.asarray(d, dtype=float)
    k = np.where(d < d0, float(k0), 0.0)
    alpha = np.asarray(alpha_of_k(k), dtype=float)
    return AnisotropyField(grid, d, k, alpha, np.asarray(gamma, dtype=float), float(k0), float(d0))


def isotropic_anisotropy(grid: GridSpec) -> AnisotropyField:
    zeros = np.zeros(grid.shape)
    gamma = np.zeros(grid.shape + (2,))
    gamma[..., 0] = 1.0
    return AnisotropyField(grid, np.full(grid.shape, np.inf), zeros, zeros.copy(), gamma, 0.0, 0.0)


def radial_anisotropy(grid: GridSpec, k: float) -> AnisotropyField:
    """Uniform concentration with gamma = x / |x| (undefined, NaN, at the origin).

    Circular orientation uses the same gamma with orientation_sign = -1 in
    :func:`tensor_field`.
    """
    X1, X2 = grid.mesh()
    r = np.hypot(X1, X2)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.stack([X1 / r, X2 / r], axis=-1)
    gamma[r == 0] = np.nan
    kk = np.full(grid.shape, float(k))
    alpha = np.full(grid.shape, float(alpha_of_k(k)))
    return AnisotropyField(grid, np.zeros(grid.shape), kk, alpha, gamma, float(k), math.inf)


def tensor_field(aniso: AnisotropyField, sigma: float, mu: float, orientation_sign: int = 1) -> TensorField:
    """Diffusion tensor (sigma^2/mu) [ (1 - a)/2 I + a gamma gamma^T ], a = sign * I2(k)/I0(k).

    Nodes with an undefined gamma (NaN or zero) get the isotropic tensor
    sigma^2/(2 mu) I.
    """
    if not sigma > 0 or not mu > 0:
        raise ValueError(f"sigma and mu must be positive, got sigma={sigma!r}, mu={mu!r}")
    if orientation_sign not in (1, -1):
        raise ValueError(f"orientation_sign must be +1 or -1, got {orientation_sign!r}")
    a = orientation_sign * np.asarray(aniso.alpha, dtype=float)
    g = np.asarray(aniso.gamma, dtype=float)
    g1, g2 = g[..., 0], g[..., 1]
    undefined = ~np.isfinite(g1) | ~np.isfinite(g2) | ((g1 == 0) & (g2 == 0))
    a = np.where(undefined, 0.0, a)
    g1 = np.where(undefined, 1.0, g1)
    g2 = np.where(undefined, 0.0, g2)
    scale = sigma * sigma / mu
    iso = 0.5 * (1.0 - a)
    d11 = scale * (iso + a * g1 * g1)
    d22 = scale * (iso + a * g2 * g2)
    d12 = scale * a * g1 * g2
    return TensorField(aniso.grid, d11, d12, d22)


def rasterize_segments(grid: GridSpec, segs: SegmentSet, half_width: float | None = None) -> np.ndarray:
    """Boolean field marking nodes within ``half_width`` (default half a node diagonal) of a segment."""
    if half_width is None:
        half_width = 0.5 * math.hypot(grid.dx1, grid.dx2)
    ff = distance_direction_from_segments(grid, segs)
    return ff.d <= half_width


def chord(point, angle: float, bounds: tuple[float, float, float, float]) -> tuple[tuple[float, float], tuple[float, float]]:
    """Segment where the line through ``point`` at ``angle`` crosses the rectangle ``bounds``."""
    a, b, c, d = bounds
    p1, p2 = float(point[0]), float(point[1])
    u1, u2 = math.cos(angle), math.sin(angle)
    lo, hi = -math.inf, math.inf
    for p, u, low, high in ((p1, u1, a, b), (p2, u2, c, d)):
        if abs(u) < 1e-15:
            if not low <= p <= high:
                raise ValueError("line misses the rectangle")
            continue
        t1, t2 = (low - p) / u, (high - p) / u
        lo, hi = max(lo, min(t1, t2)), min(hi, max(t1, t2))
    if not lo < hi:
        raise ValueError("line misses the rectangle")
    return (p1 + lo * u1, p2 + lo * u2), (p1 + hi * u1, p2 + hi * u2)


def random_chords(n: int, bounds: tuple[float, float, float, float], rng: np.random.Generator) -> SegmentSet:
    """``n`` full chords of the rectangle, each through a uniform point at a uniform angle."""
    a, b, c, d = bounds
    segs = []
    for _ in range(n):
        p = (rng.uniform(a, b), rng.uniform(c, d))
        segs.append(chord(p, rng.uniform(0.0, math.pi), bounds))
    return SegmentSet(segs)
