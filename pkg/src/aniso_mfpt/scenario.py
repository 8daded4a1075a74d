"""Scenario documents: a single JSON file describing domain, kernel, physics and run settings.

Validation reports every violation at once. The diffusivity D = sigma^2 / (2 mu)
is always derived from the physics block and cannot be set directly.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .dist import VARIANTS

ROLE = Literal["absorbing", "reflecting"]
PLAIN_ORIENTATIONS = ("isotropic", "radial", "circular", "fixed")
FILE_ORIENTATIONS = ("segments", "raster")


class ScenarioError(ValueError):
    """A scenario failed validation; ``violations`` lists every problem found."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("invalid scenario:\n" + "\n".join(f"  - {v}" for v in self.violations))


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomainBlock(_Block):
    shape: Literal["disk", "annulus", "rectangle"]
    R0: Optional[float] = Field(default=None, gt=0)
    rho: Optional[float] = Field(default=None, gt=0)
    bounds: Optional[tuple[float, float, float, float]] = None
    boundary: dict[str, ROLE] = Field(default_factory=dict)


class KernelBlock(_Block):
    type: str = "bimodal_von_mises"
    k0: Optional[float] = Field(default=None, ge=0)
    alpha: Optional[float] = Field(default=None, gt=-1, lt=1)
    d0: Optional[float] = Field(default=None, ge=0)
    orientation: Optional[str] = None
    gamma: Optional[tuple[float, float]] = None
    threshold: int = Field(default=128, ge=0, le=255)
    window: float = Field(default=5.0, gt=0)

    @field_validator("type")
    @classmethod
    def _known_type(cls, v: str) -> str:
        if v not in VARIANTS:
            raise ValueError(f"unknown kernel type {v!r}; expected one of {list(VARIANTS)}")
        return v

    @field_validator("orientation")
    @classmethod
    def _known_orientation(cls, v: Optional[str]) -> Optional[str]:
        if v is None or v in PLAIN_ORIENTATIONS:
            return v
        kind, _, path = v.partition(":")
        if kind in FILE_ORIENTATIONS and path:
            return v
        raise ValueError(
            f"orientation must be one of {list(PLAIN_ORIENTATIONS)}, 'segments:<path>' or 'raster:<path>', got {v!r}"
        )

    @property
    def orientation_kind(self) -> str:
        if self.orientation is None:
            if self.alpha is not None:
                return "isotropic" if self.alpha == 0 else ("radial" if self.alpha > 0 else "circular")
            return "isotropic"
        return self.orientation.partition(":")[0]

    @property
    def path(self) -> Optional[str]:
        if self.orientation and ":" in self.orientation:
            return self.orientation.partition(":")[2]
        return None


class PhysicsBlock(_Block):
    mu: float = Field(gt=0, allow_inf_nan=False)
    sigma: float = Field(gt=0, allow_inf_nan=False)

    @property
    def D(self) -> float:
        return self.sigma**2 / (2.0 * self.mu)


class FdBlock(_Block):
    N1: int = Field(default=257, ge=3)
    N2: int = Field(default=257, ge=3)
    tol: float = Field(default=1e-10, gt=0)
    method: Literal["auto", "direct", "krylov"] = "auto"
    N_radial: int = Field(default=4097, ge=16)


Start = Union[tuple[float, float], tuple[float, float, Optional[float]]]


class SurvivalBlock(_Block):
    start: tuple[float, float]
    times: list[float] = Field(min_length=1)


class McBlock(_Block):
    N: int = Field(default=10_000, ge=2)
    M: int = Field(default=2, ge=1, le=8)
    seed: int = Field(default=0, ge=0, lt=2**64)
    event_cap: int = Field(default=10**8, ge=1)
    starts: list[Start] = Field(default_factory=list)
    workers: Optional[int] = Field(default=None, ge=1)
    trajectories: int = Field(default=0, ge=0)
    survival: Optional[SurvivalBlock] = None


class AnalyticBlock(_Block):
    radii: Optional[list[float]] = None
    points: int = Field(default=101, ge=1)


class OutputsBlock(_Block):
    heatmaps: bool = True


class Scenario(_Block):
    name: str = "scenario"
    description: str = ""
    domain: DomainBlock
    kernel: KernelBlock = Field(default_factory=KernelBlock)
    physics: PhysicsBlock
    fd: FdBlock = Field(default_factory=FdBlock)
    mc: McBlock = Field(default_factory=McBlock)
    analytic: AnalyticBlock = Field(default_factory=AnalyticBlock)
    outputs: OutputsBlock = Field(default_factory=OutputsBlock)

    @property
    def D(self) -> float:
        return self.physics.D


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------

_PIECES = {"disk": ("outer",), "annulus": ("inner", "outer"), "rectangle": ("left", "right", "bottom", "top")}


def _loc(err) -> str:
    return ".".join(str(p) for p in err["loc"]) or "<root>"


def _domain_checks(d: DomainBlock) -> list[str]:
    v: list[str] = []
    if d.shape in ("disk", "annulus") and d.R0 is None:
        v.append(f"domain.R0: required for a {d.shape}")
    if d.shape == "annulus":
        if d.rho is None:
            v.append("domain.rho: required for an annulus")
        elif d.R0 is not None and not d.rho < d.R0:
            v.append(f"domain.rho: must be smaller than R0 ({d.rho} >= {d.R0})")
    if d.shape != "annulus" and d.rho is not None:
        v.append(f"domain.rho: only valid for an annulus, not a {d.shape}")
    if d.shape == "rectangle":
        if d.bounds is None:
            v.append("domain.bounds: required for a rectangle as [a, b, c, d]")
        else:
            a, b, c, dd = d.bounds
            if not (a < b and c < dd):
                v.append(f"domain.bounds: need a < b and c < d, got {list(d.bounds)}")
        if d.R0 is not None:
            v.append("domain.R0: not used by a rectangle")
    elif d.bounds is not None:
        v.append(f"domain.bounds: only valid for a rectangle, not a {d.shape}")
    unknown = set(d.boundary) - set(_PIECES[d.shape])
    if unknown:
        v.append(f"domain.boundary: unknown pieces {sorted(unknown)} for a {d.shape}; "
                 f"expected {list(_PIECES[d.shape])}")
    roles = [d.boundary.get(p, "absorbing") for p in _PIECES[d.shape]]
    if "absorbing" not in roles:
        v.append("domain.boundary: at least one boundary piece must be absorbing")
    return v


def _kernel_checks(k: KernelBlock, d: Optional[DomainBlock], attachments: dict[str, bytes],
                   base_dir: Optional[Path]) -> list[str]:
    """Kernel consistency; checks that need the domain are skipped when it is invalid (``d`` None)."""
    v: list[str] = []
    kind = k.orientation_kind
    if k.k0 is not None and k.alpha is not None:
        v.append("kernel: give either k0 or alpha, not both")
    if k.alpha is not None:
        if kind not in ("radial", "circular", "isotropic"):
            v.append("kernel.alpha: only meaningful for radial or circular orientation")
        elif kind == "radial" and k.alpha < 0:
            v.append("kernel.alpha: negative alpha means circular alignment; use orientation 'circular' or omit it")
        elif kind == "circular" and k.alpha > 0:
            v.append("kernel.alpha: positive alpha means radial alignment; use orientation 'radial' or omit it")
        elif kind == "isotropic" and k.alpha != 0 and k.orientation is not None:
            v.append("kernel.alpha: nonzero alpha needs radial or circular orientation")
        if k.type not in ("bimodal_von_mises",):
            v.append("kernel.alpha: the anisotropy indicator is defined for the bimodal_von_mises kernel")
    if kind in ("radial", "circular"):
        if k.type in ("bimodal_von_mises", "von_mises") and k.k0 is None and k.alpha is None:
            v.append(f"kernel: {kind} orientation needs k0 or alpha")
    if kind == "fixed" and k.gamma is None:
        v.append("kernel.gamma: required for fixed orientation")
    if k.gamma is not None and kind != "fixed":
        v.append("kernel.gamma: only used with fixed orientation")
    if kind == "fixed" and k.gamma is not None and k.gamma[0] == 0 and k.gamma[1] == 0:
        v.append("kernel.gamma: must be a nonzero vector")
    if kind in FILE_ORIENTATIONS:
        if d is not None and d.shape != "rectangle":
            v.append(f"kernel.orientation: {kind} features need a rectangle domain")
        if k.d0 is None:
            v.append(f"kernel.d0: required for {kind} features")
        if k.k0 is None:
            v.append(f"kernel.k0: required for {kind} features")
        path = k.path
        if path not in attachments:
            if base_dir is None or not (base_dir / path).is_file():
                v.append(f"kernel.orientation: referenced file {path!r} does not exist")
    if kind == "isotropic" and k.k0 not in (None, 0.0):
        v.append("kernel.k0: isotropic orientation takes no concentration")
    return v


def _mc_checks(m: McBlock) -> list[str]:
    v: list[str] = []
    for i, st in enumerate(m.starts):
        if len(st) == 3 and st[2] is not None and not math.isfinite(st[2]):
            v.append(f"mc.starts.{i}: theta0 must be finite")
    if m.survival is not None:
        t = m.survival.times
        if t[0] != 0 or any(b <= a for a, b in zip(t, t[1:])):
            v.append("mc.survival.times: must start at 0 and increase strictly")
    return v


def _analytic_checks(a: AnalyticBlock) -> list[str]:
    if a.radii is not None and len(a.radii) == 0:
        return ["analytic.radii: must not be empty"]
    return []


def _block(cls, data: dict, name: str):
    """The named block validated on its own (defaults when absent), or None when it is invalid."""
    if name not in data and cls is DomainBlock:
        return None
    try:
        return cls.model_validate(data.get(name, {}))
    except ValidationError:
        return None


def _semantic_checks(d, k, m, a, attachments: dict[str, bytes], base_dir: Optional[Path]) -> list[str]:
    v: list[str] = []
    if d is not None:
        v += _domain_checks(d)
    if k is not None:
        v += _kernel_checks(k, d, attachments, base_dir)
    if m is not None:
        v += _mc_checks(m)
    if a is not None:
        v += _analytic_checks(a)
    return v


def validate_scenario(
    data: dict,
    attachments: Optional[dict[str, bytes]] = None,
    base_dir: Optional[Path] = None,
) -> Scenario:
    """Parse and check a scenario dict; raise :class:`ScenarioError` listing every violation.

    Cross-field checks still run on the blocks that pass the schema, so one
    round trip reports everything that is wrong.
    """
    if not isinstance(data, dict):
        raise ScenarioError(["<root>: a scenario must be a JSON object"])
    attachments = attachments or {}
    try:
        s = Scenario.model_validate(data)
    except ValidationError as exc:
        problems = [f"{_loc(e)}: {e['msg']}" for e in exc.errors()]
        blocks = [_block(cls, data, name) for cls, name in (
            (DomainBlock, "domain"), (KernelBlock, "kernel"), (McBlock, "mc"), (AnalyticBlock, "analytic"))]
        raise ScenarioError(problems + _semantic_checks(*blocks, attachments, base_dir)) from None
    problems = _semantic_checks(s.domain, s.kernel, s.mc, s.analytic, attachments, base_dir)
    if problems:
        raise ScenarioError(problems)
    return s


def load_scenario(path: Union[str, Path]) -> tuple[Scenario, dict[str, bytes]]:
    """Read a scenario file and the feature files it references (paths relative to the file)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"<file>: not valid JSON ({exc})"]) from None
    s = validate_scenario(data, base_dir=path.parent)
    return s, referenced_files(s, path.parent)


def referenced_files(s: Scenario, base_dir: Path) -> dict[str, bytes]:
    p = s.kernel.path
    return {p: (base_dir / p).read_bytes()} if p else {}


def scenario_hash(s: Scenario, attachments: Optional[dict[str, bytes]] = None) -> str:
    """SHA-256 over the canonical scenario JSON and the referenced file contents."""
    # worker count does not change results, so it does not enter the hash
    doc = s.model_dump(mode="json", exclude={"mc": {"workers"}})
    h = hashlib.sha256(json.dumps(doc, sort_keys=True, separators=(",", ":")).encode())
    for name in sorted(attachments or {}):
        h.update(name.encode())
        h.update(hashlib.sha256(attachments[name]).digest())
    return h.hexdigest()
