"""Regions with known geometry, and Monte Carlo checks of the p-values.

The normal model here is the idealised one: the observation is
``Y ~ N(mu, I)`` and a bootstrap replicate at scale ``sigma**2`` is
``Y* ~ N(y, sigma**2 I)``. Three region kinds are supported:

``half_space``  ``{x : x[-1] <= offset}``
``ball``        ``{x : ||x - center|| <= radius}``
``cone``        intersection of ``{x : normal . x <= offset}`` facets

Any of them can be flipped to its complement with ``complement=True``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import AmbiguityError, DomainError, FitError, PreconditionError
from .normal_theory import (
    GeometricQuantities,
    au_from_geometry,
    bp_from_geometry,
    tail_ratio,
    upper_tail_inverse,
)
from .scaling_fit import (
    DEFAULT_MODELS,
    WIDE13,
    MultiscaleCounts,
    fit_counts,
    geometry_at_unit_scale,
)

KINDS = ("half_space", "ball", "cone")
_TOL = 1e-9


@dataclass(frozen=True)
class RegionSpec:
    kind: str
    dim: int
    offset: float = 0.0
    center: Optional[tuple] = None
    radius: Optional[float] = None
    normals: Optional[tuple] = None
    offsets: Optional[tuple] = None
    complement: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown region kind {self.kind!r}")
        if self.dim < 1:
            raise DomainError("dim must be positive")
        if self.kind == "ball":
            if self.radius is None or not self.radius > 0:
                raise DomainError("ball radius must be positive")
            center = tuple(self.center) if self.center is not None else (0.0,) * self.dim
            if len(center) != self.dim:
                raise DomainError("ball center has the wrong dimension")
            object.__setattr__(self, "center", tuple(float(c) for c in center))
        if self.kind == "cone":
            normals = np.atleast_2d(np.asarray(self.normals if self.normals is not None else [], float))
            if normals.size == 0:
                raise DomainError("cone needs at least one facet")
            offsets = tuple(self.offsets) if self.offsets is not None else (0.0,) * len(normals)
            if normals.shape != (len(offsets), self.dim):
                raise DomainError("cone normals/offsets do not match dim")
            if not np.allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-12):
                raise DomainError("cone normals must be unit vectors")
            object.__setattr__(self, "normals", tuple(map(tuple, normals.tolist())))
            object.__setattr__(self, "offsets", tuple(float(b) for b in offsets))

    def flipped(self) -> "RegionSpec":
        return replace(self, complement=not self.complement)

    @property
    def m(self) -> int:
        return self.dim - 1


def half_space(dim: int = 2, offset: float = 0.0) -> RegionSpec:
    return RegionSpec("half_space", dim, offset=offset)


def ball(dim: int, radius: float, center=None) -> RegionSpec:
    return RegionSpec("ball", dim, center=center, radius=radius)


def cone(normals, offsets=None) -> RegionSpec:
    normals = np.asarray(normals, float)
    return RegionSpec("cone", normals.shape[1], normals=normals, offsets=offsets)


def membership(region: RegionSpec, points) -> np.ndarray:
    """Boolean membership of each point (last axis is the coordinate axis)."""
    x = np.asarray(points, float)
    if x.shape[-1] != region.dim:
        raise DomainError(f"points have dimension {x.shape[-1]}, region has {region.dim}")
    if region.kind == "half_space":
        inside = x[..., -1] <= region.offset
    elif region.kind == "ball":
        d = x - np.asarray(region.center)
        inside = np.einsum("...i,...i->...", d, d) <= region.radius**2
    else:
        slack = x @ np.asarray(region.normals).T - np.asarray(region.offsets)
        inside = np.all(slack <= 0, axis=-1)
    return ~inside if region.complement else inside


def analytic_geometry(region: RegionSpec, y) -> GeometricQuantities:
    """Exact signed distance and mean curvature at the projection of ``y``."""
    y = np.asarray(y, float)
    if y.shape != (region.dim,):
        raise DomainError(f"y must have shape ({region.dim},)")
    if region.kind == "half_space":
        g = GeometricQuantities(float(y[-1] - region.offset), 0.0)
    elif region.kind == "ball":
        dist = float(np.linalg.norm(y - np.asarray(region.center)))
        if dist == 0.0:
            raise AmbiguityError("y is at the ball center: every boundary point is nearest")
        g = GeometricQuantities(dist - region.radius, region.m / (2.0 * region.radius))
    else:
        g = GeometricQuantities(_cone_distance(region, y), 0.0)
    return g.complement() if region.complement else g


def _cone_distance(region, y):
    normals = np.asarray(region.normals)
    slack = normals @ y - np.asarray(region.offsets)
    if np.all(slack <= 0):
        depth = -slack
        nearest = np.flatnonzero(depth <= depth.min() + _TOL)
        if len(nearest) > 1:
            raise AmbiguityError("y is equidistant from several cone facets")
        return -float(depth.min())
    violated = np.flatnonzero(slack > 0)
    if len(violated) > 1:
        raise AmbiguityError("projection of y falls on a cone edge (several facets violated)")
    f = violated[0]
    proj = y - slack[f] * normals[f]
    others = np.delete(np.arange(len(slack)), f)
    if np.any(normals[others] @ proj - np.asarray(region.offsets)[others] > -_TOL):
        raise AmbiguityError("projection of y is not interior to a single cone facet")
    return float(slack[f])


def boundary_point(region: RegionSpec) -> np.ndarray:
    """A canonical point on the boundary with a smooth neighbourhood."""
    if region.kind == "half_space":
        mu = np.zeros(region.dim)
        mu[-1] = region.offset
        return mu
    if region.kind == "ball":
        mu = np.asarray(region.center, float).copy()
        mu[-1] += region.radius
        return mu
    raise DomainError("cone regions need an explicit boundary point")


def point_at_distance(region: RegionSpec, distance: float) -> np.ndarray:
    """Point at signed distance ``distance`` along the outward normal at :func:`boundary_point`."""
    mu = boundary_point(region)
    out = mu.copy()
    out[-1] += -distance if region.complement else distance
    return out


# -- multiscale bootstrap in the normal model ----------------------------------

def _generator(seed, *key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


_BLOCK = 20_000


def direct_multiscale_counts(
    region: RegionSpec, y, scales=WIDE13, B: int = 10_000, seed: int = 0, item_id: str = "region"
) -> MultiscaleCounts:
    """Hit counts of ``Y* ~ N(y, sigma^2 I)`` in the region at each scale."""
    y = np.asarray(y, float)
    if y.shape != (region.dim,):
        raise DomainError(f"y must have shape ({region.dim},)")
    scales = tuple(float(s) for s in scales)
    hits = []
    for si, s in enumerate(scales):
        sigma = math.sqrt(s)
        h = 0
        for bi, start in enumerate(range(0, B, _BLOCK)):
            m = min(_BLOCK, B - start)
            z = _generator(seed, si, bi).standard_normal((m, region.dim))
            h += int(np.count_nonzero(membership(region, y + sigma * z)))
        hits.append(h)
    return MultiscaleCounts(item_id, scales, (B,) * len(scales), tuple(hits))


def ball_content(region: RegionSpec, y, sigma_sq: float) -> float:
    """Exact ``P(Y* in ball)`` from the noncentral chi-square distribution."""
    from scipy.stats import ncx2

    if region.kind != "ball":
        raise DomainError("ball_content needs a ball region")
    d2 = float(np.sum((np.asarray(y, float) - np.asarray(region.center)) ** 2))
    p = float(ncx2.cdf(region.radius**2 / sigma_sq, region.dim, d2 / sigma_sq))
    return 1.0 - p if region.complement else p


def ball_tangent(region: RegionSpec, y, h: float = 1e-4) -> tuple[float, float]:
    """Exact ``(beta0, beta1)`` of the tangent to ``psi`` at ``sigma^2 = 1`` for a ball.

    ``psi(s) = sqrt(s) * Phibar^{-1}(ball_content(s))`` is differentiated by a
    central difference. At finite radius this differs from the asymptotic
    ``(d, m / (2 r))``.
    """

    def psi(s):
        return math.sqrt(s) * upper_tail_inverse(ball_content(region, y, s))

    slope = (psi(1 + h) - psi(1 - h)) / (2 * h)
    return psi(1.0) - slope, slope


# -- type-I error experiments --------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    scales: tuple = WIDE13
    B: int = 10_000
    models: tuple = DEFAULT_MODELS
    seed: int = 0


@dataclass(frozen=True)
class ExperimentReport:
    mode: str
    trials: int
    rejections: int
    rate: float
    binomial_se: float
    target_alpha: float
    failures: int = 0

    @classmethod
    def from_counts(cls, mode, trials, rejections, alpha, failures=0):
        if trials <= 0:
            raise PreconditionError(f"{mode}: no qualifying trials")
        rate = rejections / trials
        return cls(mode, trials, rejections, rate, math.sqrt(rate * (1 - rate) / trials), alpha, failures)


@dataclass
class TrialRecords:
    """Per-trial outcomes of a type-I experiment, for building reports."""

    outside: np.ndarray  # Y in the complement of the region
    au: np.ndarray
    si: np.ndarray  # selective p-value of the region (meaningful when outside)
    bp: np.ndarray
    beta0: np.ndarray
    beta1: np.ndarray
    failed: np.ndarray

    def report(self, mode: str, alpha: float) -> ExperimentReport:
        ok = ~self.failed
        if mode == "au_unconditional":
            sel = ok
            rejected = self.au[sel] < alpha
        elif mode == "si_conditional":
            sel = ok & self.outside
            rejected = self.si[sel] < alpha
        else:
            raise DomainError(f"unknown experiment mode {mode!r}")
        return ExperimentReport.from_counts(
            mode, int(sel.sum()), int(rejected.sum()), alpha, int(self.failed.sum())
        )


def _selective_region_pvalue(g: GeometricQuantities) -> float:
    # SI of the region itself; an estimate on the wrong side of the
    # boundary gives a ratio >= 1, which is never a rejection
    return min(1.0, tail_ratio(g.beta0 - g.beta1, -g.beta1))


def run_trials(region: RegionSpec, mu, trials: int, config: PipelineConfig = PipelineConfig()) -> TrialRecords:
    """Draw ``Y ~ N(mu, I)`` repeatedly and run bootstrap, fit and p-values on each."""
    mu = np.asarray(mu, float)
    if abs(analytic_geometry(region, mu).beta0) >= 1e-9:
        raise PreconditionError("mu must lie on the region boundary")
    if trials < 1:
        raise PreconditionError("need at least one trial")
    rec = {k: np.zeros(trials) for k in ("au", "si", "bp", "beta0", "beta1")}
    outside = np.zeros(trials, bool)
    failed = np.zeros(trials, bool)
    for t in range(trials):
        ss = np.random.SeedSequence(config.seed, spawn_key=(t,))
        obs_rng = np.random.Generator(np.random.Philox(ss))
        y = mu + obs_rng.standard_normal(region.dim)
        boot_seed = int(ss.generate_state(1, np.uint64)[0])
        outside[t] = not bool(membership(region, y))
        counts = direct_multiscale_counts(region, y, config.scales, config.B, boot_seed)
        try:
            avg, _ = fit_counts(counts, config.models)
        except FitError:
            failed[t] = True
            continue
        g = geometry_at_unit_scale(avg)
        rec["beta0"][t], rec["beta1"][t] = g.beta0, g.beta1
        rec["bp"][t] = bp_from_geometry(g)
        rec["au"][t] = au_from_geometry(g)
        rec["si"][t] = _selective_region_pvalue(g)
    return TrialRecords(outside=outside, failed=failed, **rec)


def type1_experiment(
    region: RegionSpec,
    mu_on_boundary,
    alpha: float,
    trials: int,
    mode: str,
    pipeline_config: PipelineConfig = PipelineConfig(),
) -> ExperimentReport:
    """Rejection rate of AU (all trials) or SI (trials with Y outside) at ``alpha``."""
    if mode not in ("au_unconditional", "si_conditional"):
        raise DomainError(f"unknown experiment mode {mode!r}")
    return run_trials(region, mu_on_boundary, trials, pipeline_config).report(mode, alpha)


def fitted_geometry(region: RegionSpec, y, config: PipelineConfig = PipelineConfig()):
    """Geometry estimated by the full bootstrap-and-fit pipeline at ``y``."""
    counts = direct_multiscale_counts(region, y, config.scales, config.B, config.seed)
    avg, _ = fit_counts(counts, config.models)
    return geometry_at_unit_scale(avg), counts, avg
