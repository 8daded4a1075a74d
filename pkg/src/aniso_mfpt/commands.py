"""Scenario-driven commands. Each returns the files it produced as bytes.

The service and the command-line client both go through these functions, so
outputs are identical no matter how a command is invoked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from . import analytic as an
from . import env
from . import fd
from . import fileio
from . import mc
from .dist import BIMODAL_VON_MISES, STRICT_ALIGNMENT, UNIFORM, VON_MISES, alpha_of_k, k_of_alpha
from .scenario import Scenario, scenario_hash

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_REFUSED = 3
EXIT_NON_EXIT = 4


class CommandError(ValueError):
    """The scenario is valid but the requested command cannot run on it."""


class GuardRefusal(RuntimeError):
    """A run was refused because walkers are not expected to exit within the event cap."""


@dataclass
class RunOptions:
    seed: Optional[int] = None
    baseline_isotropic: bool = False
    raise_event_cap: Optional[int] = None
    workers: Optional[int] = None


@dataclass
class CommandResult:
    files: dict[str, bytes] = field(default_factory=dict)
    messages: list[str] = field(default_factory=list)
    exit_code: int = EXIT_OK


# --------------------------------------------------------------------------
# Scenario -> model objects
# --------------------------------------------------------------------------

def apply_options(s: Scenario, opts: RunOptions) -> Scenario:
    """Scenario with command-line overrides folded in (they then enter the scenario hash)."""
    mc_update = {}
    if opts.seed is not None:
        mc_update["seed"] = int(opts.seed)
    if opts.raise_event_cap is not None:
        mc_update["event_cap"] = int(opts.raise_event_cap)
    if not mc_update:
        return s
    return s.model_copy(update={"mc": s.mc.model_copy(update=mc_update)})


def header_line(s: Scenario, files: dict[str, bytes]) -> str:
    return f"aniso-mfpt {__version__} scenario={scenario_hash(s, files)[:16]} D={fileio.fmt(s.D)}"


def build_domain(s: Scenario) -> env.Domain:
    d = s.domain
    if d.shape == "disk":
        return env.Domain("disk", R0=d.R0, boundary=dict(d.boundary))
    if d.shape == "annulus":
        return env.Domain("annulus", R0=d.R0, rho=d.rho, boundary=dict(d.boundary))
    return env.Domain("rectangle", bounds=d.bounds, boundary=dict(d.boundary))


def _box(s: Scenario) -> tuple[float, float, float, float]:
    if s.domain.shape == "rectangle":
        return s.domain.bounds
    R = s.domain.R0
    return (-R, R, -R, R)


def _is_isotropic(s: Scenario) -> bool:
    k = s.kernel
    return k.type == UNIFORM or k.orientation_kind == "isotropic" or (k.alpha == 0) or (
        k.k0 == 0 and k.type != STRICT_ALIGNMENT)


def concentration(s: Scenario) -> float:
    k = s.kernel
    if k.alpha is not None:
        return k_of_alpha(k.alpha)
    return float(k.k0 or 0.0)


def signed_alpha(s: Scenario) -> float:
    """Anisotropy indicator with the orientation sign: + radial, - circular, 0 isotropic.

    Strict alignment returns +-1.
    """
    if _is_isotropic(s):
        return 0.0
    k = s.kernel
    kind = k.orientation_kind
    if kind not in ("radial", "circular"):
        raise CommandError(f"a single anisotropy indicator needs radial or circular orientation, not {kind!r}")
    sign = 1.0 if kind == "radial" else -1.0
    if k.type == STRICT_ALIGNMENT:
        return sign
    if k.type == VON_MISES:
        raise CommandError("the unimodal von Mises kernel has a drift; the diffusion closed forms need a "
                           "bimodal_von_mises, uniform or strict_alignment kernel")
    if k.alpha is not None:
        return float(k.alpha)
    return sign * float(alpha_of_k(concentration(s)))


def _radial_problem(s: Scenario, alpha: float) -> an.RadialProblem:
    d = s.domain
    exit = build_domain(s).exit
    return an.RadialProblem(d.R0, s.D, alpha, exit, d.rho if d.shape == "annulus" else None)


def _require_radial(s: Scenario) -> None:
    if s.domain.shape == "rectangle":
        raise CommandError("closed forms exist only for disk and annulus domains")


def analytic_values(s: Scenario, r: np.ndarray) -> np.ndarray:
    _require_radial(s)
    a = signed_alpha(s)
    d = s.domain
    if d.shape == "disk":
        return np.asarray(an.disk_exit_time(r, d.R0, s.D), dtype=float)
    exit = build_domain(s).exit
    if abs(a) == 1.0:
        mode = "radial" if a > 0 else "circular"
        return np.asarray(an.annulus_limit(r, d.rho, d.R0, s.D, mode, exit), dtype=float)
    return np.asarray(an.annulus_mfpt(r, d.rho, d.R0, s.D, a, exit), dtype=float)


def _load_segments(s: Scenario, files: dict[str, bytes]) -> env.SegmentSet:
    return fileio.parse_segments(files[s.kernel.path].decode())


def feature_fields(s: Scenario, files: dict[str, bytes]) -> Optional[env.FeatureFields]:
    """Distance and direction fields for segment or raster scenarios (None when there are no features)."""
    kind = s.kernel.orientation_kind
    if kind == "segments":
        segs = _load_segments(s, files)
        if len(segs) == 0:
            return None
        return env.distance_direction_from_segments(_grid(s), segs)
    if kind == "raster":
        image = fileio.parse_pgm(files[s.kernel.path])
        return env.fields_from_raster(image, s.kernel.threshold, s.kernel.window, bounds=_box(s))
    return None


def _grid(s: Scenario) -> env.GridSpec:
    return env.GridSpec(s.fd.N1, s.fd.N2, _box(s))


def anisotropy(s: Scenario, files: dict[str, bytes]) -> tuple[env.AnisotropyField, int]:
    """Per-node anisotropy for the scenario and the orientation sign for the tensor."""
    kind = s.kernel.orientation_kind
    k = s.kernel
    if kind in ("segments", "raster"):
        ff = feature_fields(s, files)
        if ff is None:
            return env.isotropic_anisotropy(_grid(s)), 1
        return env.anisotropy_from_distance(ff.d, ff.gamma, float(k.k0), float(k.d0), grid=ff.grid), 1
    grid = _grid(s)
    if _is_isotropic(s):
        return env.isotropic_anisotropy(grid), 1
    if kind == "fixed":
        kk = concentration(s)
        g = np.array(k.gamma, dtype=float)
        g = env.canonical_sign(g / np.linalg.norm(g))
        gamma = np.broadcast_to(g, grid.shape + (2,)).copy()
        alpha = 1.0 if k.type == STRICT_ALIGNMENT else float(alpha_of_k(kk))
        shape = grid.shape
        return env.AnisotropyField(grid, np.zeros(shape), np.full(shape, kk), np.full(shape, alpha),
                                   gamma, kk, math.inf), 1
    a = signed_alpha(s)
    aniso = env.radial_anisotropy(grid, k_of_alpha(a) if abs(a) < 1 else 0.0)
    if abs(a) == 1.0:
        aniso.alpha[...] = 1.0
    return aniso, (1 if a > 0 else -1)


def kernel_field(s: Scenario, files: dict[str, bytes]) -> mc.KernelField:
    k = s.kernel
    kind = k.orientation_kind
    if k.type == UNIFORM or kind == "isotropic" or (k.alpha == 0):
        return mc.KernelField.uniform()
    if kind in ("radial", "circular"):
        return mc.KernelField.radial(k.type, concentration(s), circular=kind == "circular")
    if kind == "fixed":
        return mc.KernelField(k.type, "fixed", concentration(s), tuple(k.gamma))
    aniso, _ = anisotropy(s, files)
    return mc.KernelField.from_anisotropy(aniso, k.type)


def _check_tensor_kernel(s: Scenario) -> None:
    if s.kernel.type == VON_MISES and not _is_isotropic(s):
        raise CommandError("the unimodal von Mises kernel has a drift; diffusion solves need a "
                           "bimodal_von_mises, uniform or strict_alignment kernel")


def _radii(s: Scenario) -> np.ndarray:
    d = s.domain
    if s.analytic.radii is not None:
        return np.asarray(s.analytic.radii, dtype=float)
    lo = d.rho if d.shape == "annulus" else 0.0
    return np.linspace(lo, d.R0, s.analytic.points)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_analytic(s: Scenario, files: dict[str, bytes], opts: RunOptions | None = None) -> CommandResult:
    """Closed-form T(r) on the scenario's radius grid."""
    s = apply_options(s, opts or RunOptions())
    _require_radial(s)
    r = _radii(s)
    T = analytic_values(s, r)
    text = fileio.csv_text(["r", "T"], zip(r.tolist(), T.tolist()), header_line(s, files))
    return CommandResult({"analytic.csv": text.encode()})


def _solve_radial_profile(s: Scenario, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    if abs(alpha) >= 1.0:
        raise CommandError("strict alignment degenerates the radial equation; use the analytic command")
    return fd.radial_solve(_radial_problem(s, alpha), s.fd.N_radial)


def _solve_rectangle(s: Scenario, files: dict[str, bytes], isotropic: bool = False) -> fd.ScalarField:
    if any(role != env.ABSORBING for role in build_domain(s).boundary.values()):
        raise CommandError("the two-dimensional solver supports absorbing (Dirichlet) rectangle edges only")
    aniso, sign = anisotropy(s, files)
    if isotropic:
        aniso = env.isotropic_anisotropy(aniso.grid)
    tensor = env.tensor_field(aniso, s.physics.sigma, s.physics.mu, sign)
    return fd.solve_mfpt_2d(tensor, tol=s.fd.tol, method=s.fd.method)


def _field_files(name: str, field_: fd.ScalarField, column: str, comment: str, heat: bool) -> dict[str, bytes]:
    out = {f"{name}.csv": fileio.scalar_field_csv(field_.grid, field_.values, column, comment).encode()}
    if heat:
        pgm, side = fileio.heatmap(field_.values)
        out[f"{name}.pgm"] = pgm
        out[f"{name}.pgm.txt"] = (f"# {comment}\n" + side).encode()
    return out


def cmd_solve(s: Scenario, files: dict[str, bytes], opts: RunOptions | None = None) -> CommandResult:
    """Finite-difference MFPT: a 2-D field on rectangles, a radial profile on disks and annuli."""
    opts = opts or RunOptions()
    s = apply_options(s, opts)
    _check_tensor_kernel(s)
    head = header_line(s, files)
    res = CommandResult()
    if s.domain.shape == "rectangle":
        T = _solve_rectangle(s, files)
        res.files.update(_field_files("field", T, "T", head, s.outputs.heatmaps))
        if opts.baseline_isotropic:
            T_iso = _solve_rectangle(s, files, isotropic=True)
            diff = fd.difference_map(T, T_iso)
            res.files.update(_field_files("baseline", T_iso, "T", head, s.outputs.heatmaps))
            res.files.update(_field_files("difference", diff, "value", head, s.outputs.heatmaps))
            res.messages.append(f"max |T_aniso - T_iso| = {np.abs(diff.values).max():.6g}")
        return res
    r, T = _solve_radial_profile(s, signed_alpha(s))
    res.files["radial.csv"] = fileio.csv_text(["r", "T"], zip(r.tolist(), T.tolist()), head).encode()
    if opts.baseline_isotropic:
        _, T_iso = _solve_radial_profile(s, 0.0)
        res.files["difference.csv"] = fileio.csv_text(
            ["r", "value"], zip(r.tolist(), (T - T_iso).tolist()), head).encode()
    return res


def cmd_env(s: Scenario, files: dict[str, bytes], opts: RunOptions | None = None) -> CommandResult:
    """Environment fields on the scenario grid: distance, direction, anisotropy indicator, features."""
    s = apply_options(s, opts or RunOptions())
    head = header_line(s, files)
    aniso, sign = anisotropy(s, files)
    grid = aniso.grid
    res = CommandResult()
    ff = feature_fields(s, files) if s.kernel.orientation_kind in ("segments", "raster") else None
    if ff is not None:
        res.files["distance.csv"] = fileio.scalar_field_csv(grid, ff.d, "value", head).encode()
        res.files["flagged.csv"] = fileio.scalar_field_csv(grid, ff.flagged.astype(float), "value", head).encode()
        if s.kernel.orientation_kind == "segments":
            mask = env.rasterize_segments(grid, _load_segments(s, files))
        else:
            mask = ff.d == 0
        res.files["features.pgm"] = fileio.pgm_bytes(env.field_to_raster(np.where(mask, 255, 0).astype(np.uint8)))
    gamma = np.asarray(aniso.gamma, dtype=float)
    if sign < 0:
        # circular orientation: the preferred axis is perpendicular to the radial vector
        gamma = env.canonical_sign(np.stack([-gamma[..., 1], gamma[..., 0]], axis=-1))
    res.files["direction.csv"] = fileio.direction_field_csv(grid, gamma, head).encode()
    res.files["alpha.csv"] = fileio.scalar_field_csv(grid, sign * np.asarray(aniso.alpha), "value", head).encode()
    if s.outputs.heatmaps and ff is not None:
        pgm, side = fileio.heatmap(ff.d)
        res.files["distance.pgm"] = pgm
        res.files["distance.pgm.txt"] = (f"# {head}\n" + side).encode()
    return res


def predicted_turns(s: Scenario, start) -> Optional[float]:
    """Expected turn count mu * T from the diffusion closed form, when one applies."""
    if s.domain.shape == "rectangle" or s.kernel.orientation_kind in ("fixed", "segments", "raster"):
        return None
    try:
        a = signed_alpha(s)
    except CommandError:
        return None
    r = math.hypot(start[0], start[1])
    d = s.domain
    lo = d.rho if d.shape == "annulus" else 0.0
    if not lo <= r <= d.R0:
        return None
    T = float(analytic_values(s, np.array([r]))[0]) if abs(a) == 1.0 or d.shape == "disk" else \
        math.exp(float(an.annulus_mfpt(r, d.rho, d.R0, s.D, a, build_domain(s).exit, log=True)))
    return s.physics.mu * T


def _guard(s: Scenario, opts: RunOptions) -> None:
    if opts.raise_event_cap is not None:
        return
    for st in s.mc.starts:
        n = predicted_turns(s, st)
        if n is not None and not n <= s.mc.event_cap:
            raise GuardRefusal(
                f"refusing to simulate: walkers from ({st[0]}, {st[1]}) are expected to make about "
                f"{n:.3g} turns before exiting, above the event cap of {s.mc.event_cap}; "
                "pass --raise-event-cap to run anyway")


def _estimates(s: Scenario, files: dict[str, bytes], opts: RunOptions) -> list[mc.FptEstimate]:
    return mc.estimate_theta(
        build_domain(s), kernel_field(s, files), s.physics.mu, s.physics.sigma,
        s.mc.starts, s.mc.N, s.mc.M, s.mc.seed, s.mc.event_cap,
        workers=opts.workers if opts.workers is not None else s.mc.workers)


def estimates_csv(estimates: list[mc.FptEstimate], M: int, comment: str) -> str:
    header = ["x1", "x2", "theta1", "stderr"] + [f"theta{m}" for m in range(2, M + 1)] + ["capped_count"]
    rows = [[e.start[0], e.start[1], e.moments[0], e.stderr, *e.moments[1:], e.capped] for e in estimates]
    return fileio.csv_text(header, rows, comment)


def cmd_simulate(s: Scenario, files: dict[str, bytes], opts: RunOptions | None = None) -> CommandResult:
    """Monte Carlo exit-time moments per start, plus optional trajectories and survival curve."""
    opts = opts or RunOptions()
    s = apply_options(s, opts)
    _guard(s, opts)
    head = header_line(s, files)
    res = CommandResult()
    est = _estimates(s, files, opts)
    res.files["estimates.csv"] = estimates_csv(est, s.mc.M, head).encode()
    capped = sum(e.capped for e in est)

    if s.mc.trajectories and s.mc.starts:
        domain, kf = build_domain(s), kernel_field(s, files)
        x1, x2, theta0 = mc._parse_start(s.mc.starts[0])
        runs = []
        for w in range(s.mc.trajectories):
            try:
                rec = mc.simulate_exit(domain, kf, s.physics.mu, s.physics.sigma, (x1, x2), theta0,
                                       rng=mc.walker_rng(s.mc.seed, 0, w), record_trajectory=True,
                                       event_cap=s.mc.event_cap)
            except mc.NonExitError as exc:
                res.messages.append(f"trajectory {w}: {exc}")
                continue
            runs.append(rec.trajectory)
        res.files["trajectories.csv"] = mc.trajectories_csv(runs, head).encode()

    if s.mc.survival is not None:
        sv = s.mc.survival
        curve = mc.estimate_survival(build_domain(s), kernel_field(s, files), s.physics.mu, s.physics.sigma,
                                     tuple(sv.start), sv.times, s.mc.N, s.mc.seed, s.mc.event_cap,
                                     workers=opts.workers if opts.workers is not None else s.mc.workers)
        res.files["survival.csv"] = fileio.csv_text(
            ["t", "S"], zip(curve.times.tolist(), curve.survival.tolist()), head).encode()

    if capped:
        res.exit_code = EXIT_NON_EXIT
        res.messages.append(f"non-exit suspected: {capped} walkers reached the event cap of {s.mc.event_cap}")
    return res


def cmd_compare(s: Scenario, files: dict[str, bytes], opts: RunOptions | None = None) -> CommandResult:
    """Analytic, finite-difference and Monte Carlo MFPT side by side at the scenario's starts."""
    opts = opts or RunOptions()
    s = apply_options(s, opts)
    head = header_line(s, files)
    header = ["x1", "x2", "analytic", "fd", "mc", "stderr", "z_analytic", "z_fd", "rel_err_fd", "capped_count"]
    res = CommandResult()
    if not s.mc.starts:
        res.files["compare.csv"] = fileio.csv_text(header, [], head).encode()
        return res
    _check_tensor_kernel(s)
    _guard(s, opts)
    pts = np.array([[st[0], st[1]] for st in s.mc.starts], dtype=float)
    nan = float("nan")
    if s.domain.shape == "rectangle":
        exact = np.full(len(pts), nan)
        T = _solve_rectangle(s, files)
        fdv = np.array([T.interpolate(p[0], p[1]) for p in pts])
    else:
        r = np.hypot(pts[:, 0], pts[:, 1])
        exact = analytic_values(s, r)
        a = signed_alpha(s)
        if abs(a) < 1.0:
            rr, TT = _solve_radial_profile(s, a)
            fdv = np.interp(r, rr, TT)
        else:
            fdv = np.full(len(pts), nan)
    est = _estimates(s, files, opts)
    rows = []
    for p, ex, f, e in zip(pts, exact, fdv, est):
        z_a = (e.mean - ex) / e.stderr if math.isfinite(ex) and e.stderr > 0 else nan
        z_f = (e.mean - f) / e.stderr if math.isfinite(f) and e.stderr > 0 else nan
        rel = abs(f - ex) / abs(ex) if math.isfinite(ex) and ex != 0 and math.isfinite(f) else nan
        rows.append([float(p[0]), float(p[1]), float(ex), float(f), e.mean, e.stderr, z_a, z_f, rel, e.capped])
    res.files["compare.csv"] = fileio.csv_text(header, rows, head).encode()
    capped = sum(e.capped for e in est)
    if capped:
        res.exit_code = EXIT_NON_EXIT
        res.messages.append(f"non-exit suspected: {capped} walkers reached the event cap of {s.mc.event_cap}")
    return res


COMMANDS = {
    "analytic": cmd_analytic,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "env": cmd_env,
    "compare": cmd_compare,
}
