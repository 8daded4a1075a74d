"""Compiled single-walker event loop for the velocity-jump process.

Helpers take scalars only: passing arrays into helpers on the per-event path
costs reference-count traffic that dominates the loop.
"""

import math

import numba as nb
import numpy as np

from .dist import draw_direction

# domain codes
DISK, ANNULUS, RECTANGLE = 0, 1, 2
# orientation codes
FIXED, RADIAL, CIRCULAR, GRID = 0, 1, 2, 3
# walker status
EXITED, CAPPED = 0, 1

_INF = math.inf

_jit = nb.njit(cache=True, nogil=True, inline="always")


@_jit
def nearest_node(x1, x2, a, c, h1, h2, n1, n2):
    j = int(math.floor((x1 - a) / h1 + 0.5))
    i = int(math.floor((x2 - c) / h2 + 0.5))
    return min(max(j, 0), n1 - 1), min(max(i, 0), n2 - 1)


@_jit
def analytic_orientation(x1, x2, code, orient, k, g1, g2):
    """(code, k, g1, g2) for fixed, radial and circular orientations; code 0 means uniform."""
    if code == 0:
        return 0, 0.0, 1.0, 0.0
    if orient == FIXED:
        return code, k, g1, g2
    r = math.hypot(x1, x2)
    if r == 0.0:
        return 0, 0.0, 1.0, 0.0
    if orient == RADIAL:
        return code, k, x1 / r, x2 / r
    return code, k, -x2 / r, x1 / r


@_jit
def first_hit(x1, x2, u1, u2, dom, R, rho, a, b, c, d):
    """Distance along (u1, u2) to the first boundary crossing and the piece index hit.

    Pieces: disk (0 outer); annulus (0 inner, 1 outer);
    rectangle (0 left, 1 right, 2 bottom, 3 top).
    """
    if dom != RECTANGLE:
        bq = x1 * u1 + x2 * u2
        cq = min(x1 * x1 + x2 * x2 - R * R, 0.0)
        best = max(-bq + math.sqrt(bq * bq - cq), 0.0)
        piece = 0 if dom == DISK else 1
        if dom == ANNULUS and bq < 0.0:
            c_in = max(x1 * x1 + x2 * x2 - rho * rho, 0.0)
            disc = bq * bq - c_in
            if disc >= 0.0:
                s_in = c_in / (-bq + math.sqrt(disc))
                if s_in < best:
                    best = s_in
                    piece = 0
        return best, piece
    best = _INF
    piece = -1
    if u1 > 0.0:
        best, piece = (b - x1) / u1, 1
    elif u1 < 0.0:
        best, piece = (a - x1) / u1, 0
    if u2 > 0.0:
        s = (d - x2) / u2
        if s < best:
            best, piece = s, 3
    elif u2 < 0.0:
        s = (c - x2) / u2
        if s < best:
            best, piece = s, 2
    return max(best, 0.0), piece


@_jit
def reflect(x1, x2, u1, u2, dom, piece, R, rho, a, b, c, d):
    """Specular reflection at a boundary point; returns the snapped point and new direction."""
    if dom == RECTANGLE:
        if piece == 0:
            return a, x2, -u1, u2
        if piece == 1:
            return b, x2, -u1, u2
        if piece == 2:
            return x1, c, u1, -u2
        return x1, d, u1, -u2
    r = math.hypot(x1, x2)
    n1 = x1 / r
    n2 = x2 / r
    dot = u1 * n1 + u2 * n2
    v1 = u1 - 2.0 * dot * n1
    v2 = u2 - 2.0 * dot * n2
    radius = rho if (dom == ANNULUS and piece == 0) else R
    nv = math.hypot(v1, v2)
    return radius * n1, radius * n2, v1 / nv, v2 / nv


@nb.njit(cache=True, nogil=True)
def walk(rng, x1, x2, u1, u2, draw_initial, mu, sigma, event_cap,
         dom, p, roles,
         code, orient, k, g1, g2, kgrid, g1grid, g2grid, gb,
         traj):
    """Run one walker to absorption.

    ``p`` holds (R0, rho, a, b, c, d); ``roles`` holds 0 (absorbing) or 1
    (reflecting) for each of up to four boundary pieces. Returns (status,
    exit time, exit x1, exit x2, turn count, trajectory rows written).
    ``traj`` is an (n, 3) buffer of (t, x1, x2) event points; when it is too
    small, recording stops and the row count is returned negated.
    """
    R, rho, a, b, c, d = p[0], p[1], p[2], p[3], p[4], p[5]
    r0, r1, r2, r3 = roles[0], roles[1], roles[2], roles[3]
    on_grid = orient == GRID and code != 0
    n1g = kgrid.shape[0]
    n2g = kgrid.shape[1]
    ga, gc, h1, h2 = gb[0], gb[2], gb[4], gb[5]
    cap_rows = traj.shape[0]
    nrow = 0
    overflow = False
    t = 0.0
    if cap_rows > 0:
        traj[0, 0] = 0.0
        traj[0, 1] = x1
        traj[0, 2] = x2
        nrow = 1
    turns = 0
    need_draw = draw_initial
    while True:
        if need_draw:
            if on_grid:
                j, i = nearest_node(x1, x2, ga, gc, h1, h2, n1g, n2g)
                kk = kgrid[j, i]
                if kk > 0.0:
                    u1, u2 = draw_direction(rng, code, kk, g1grid[j, i], g2grid[j, i])
                else:
                    u1, u2 = draw_direction(rng, 0, 0.0, 1.0, 0.0)
            else:
                c_, k_, a_, b_ = analytic_orientation(x1, x2, code, orient, k, g1, g2)
                u1, u2 = draw_direction(rng, c_, k_, a_, b_)
        need_draw = True
        remaining = sigma * rng.standard_exponential() / mu
        while True:
            s, piece = first_hit(x1, x2, u1, u2, dom, R, rho, a, b, c, d)
            if s > remaining:
                x1 += remaining * u1
                x2 += remaining * u2
                t += remaining / sigma
                break
            x1 += s * u1
            x2 += s * u2
            t += s / sigma
            remaining -= s
            if piece == 0:
                pr = r0
            elif piece == 1:
                pr = r1
            elif piece == 2:
                pr = r2
            else:
                pr = r3
            if pr != 0:
                x1, x2, u1, u2 = reflect(x1, x2, u1, u2, dom, piece, R, rho, a, b, c, d)
            if cap_rows > 0:
                if nrow < cap_rows:
                    traj[nrow, 0] = t
                    traj[nrow, 1] = x1
                    traj[nrow, 2] = x2
                    nrow += 1
                else:
                    overflow = True
            if pr == 0:
                return EXITED, t, x1, x2, turns, -nrow if overflow else nrow
        if turns >= event_cap:
            return CAPPED, _INF, x1, x2, turns, -nrow if overflow else nrow
        turns += 1
        if cap_rows > 0:
            if nrow < cap_rows:
                traj[nrow, 0] = t
                traj[nrow, 1] = x1
                traj[nrow, 2] = x2
                nrow += 1
            else:
                overflow = True


EMPTY_TRAJ = np.zeros((0, 3))
EMPTY_GRID = np.zeros((1, 1))
