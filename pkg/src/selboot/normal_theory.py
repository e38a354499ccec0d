"""Normal-model formulas linking the geometry of a region to its p-values.

Everything here is a pure function of the signed distance ``beta0`` and the
mean curvature ``beta1`` of the region boundary, both measured in standard
deviation units. ``beta0 > 0`` means the observation lies outside the region.

Tail probabilities go through ``scipy.special`` (``ndtr``/``log_ndtr`` are
erfc based and keep full relative precision far into the tails) and every
ratio of two tails is formed in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

from .errors import DomainError, ModeError, NumericError, PreconditionError

INSIDE = "inside"
OUTSIDE = "outside"

_TINY_DENOMINATOR = 1e-300
_LOG_TINY_DENOMINATOR = math.log(_TINY_DENOMINATOR)


@dataclass(frozen=True)
class GeometricQuantities:
    """Signed distance and mean curvature, with optional standard errors."""

    beta0: float
    beta1: float
    se_beta0: Optional[float] = None
    se_beta1: Optional[float] = None
    cov01: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.beta0) and math.isfinite(self.beta1)):
            raise DomainError(f"non-finite geometry ({self.beta0}, {self.beta1})")
        for name in ("se_beta0", "se_beta1"):
            se = getattr(self, name)
            if se is not None and not se >= 0:
                raise DomainError(f"{name} must be nonnegative, got {se}")

    @property
    def mode(self) -> str:
        return OUTSIDE if self.beta0 > 0 else INSIDE

    def complement(self) -> "GeometricQuantities":
        """Geometry of the complement region: both signs flip."""
        return GeometricQuantities(
            -self.beta0, -self.beta1, self.se_beta0, self.se_beta1, self.cov01
        )

    def covariance(self) -> np.ndarray:
        """2x2 covariance of (beta0, beta1); zeros where unknown."""
        v0 = (self.se_beta0 or 0.0) ** 2
        v1 = (self.se_beta1 or 0.0) ** 2
        c = self.cov01 or 0.0
        return np.array([[v0, c], [c, v1]])


@dataclass(frozen=True)
class PValueTriple:
    bp: float
    au: float
    si_prime: float
    se_bp: Optional[float] = None
    se_au: Optional[float] = None
    se_si: Optional[float] = None
    mode: str = INSIDE


# -- standard normal tail ---------------------------------------------------

def upper_tail(x):
    """Upper tail probability ``1 - Phi(x)``; works on scalars and arrays."""
    out = special.ndtr(np.negative(x))
    return float(out) if np.ndim(out) == 0 else out


def log_upper_tail(x):
    out = special.log_ndtr(np.negative(x))
    return float(out) if np.ndim(out) == 0 else out


def upper_tail_inverse(p):
    """Inverse of :func:`upper_tail`.

    For ``p > 1/2`` the quantile is taken from ``1 - p``, which is exact in
    floating point there, so both tails keep relative accuracy.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0) & (p_arr < 1))):
        raise DomainError(f"probability must lie in (0, 1), got {p}")
    out = np.where(p_arr <= 0.5, -special.ndtri(p_arr), special.ndtri(1.0 - p_arr))
    return float(out) if out.ndim == 0 else out


def normal_density(x):
    out = np.exp(-0.5 * np.square(x)) / math.sqrt(2 * math.pi)
    return float(out) if np.ndim(out) == 0 else out


def tail_ratio(a, b):
    """``upper_tail(a) / upper_tail(b)`` computed from log tails."""
    out = np.exp(special.log_ndtr(np.negative(a)) - special.log_ndtr(np.negative(b)))
    return float(out) if np.ndim(out) == 0 else out


# -- one-dimensional z-tests ------------------------------------------------

def z_pvalue(z: float) -> float:
    return upper_tail(z)


def selective_z_pvalue(z: float, c: float) -> float:
    """p-value of the z-test conditional on having observed ``z > c``."""
    if not z > c:
        raise PreconditionError(f"selection event z > c not met (z={z}, c={c})")
    return tail_ratio(z, c)


# -- region p-values from geometry ------------------------------------------

def bp_from_geometry(g: GeometricQuantities) -> float:
    return upper_tail(g.beta0 + g.beta1)


def au_from_geometry(g: GeometricQuantities) -> float:
    return upper_tail(g.beta0 - g.beta1)


def si_outside(g: GeometricQuantities) -> float:
    """Selective p-value of the region, for an observation outside it."""
    if not g.beta0 > 0:
        raise ModeError(f"si_outside needs beta0 > 0, got {g.beta0}; use si_inside")
    return tail_ratio(g.beta0 - g.beta1, -g.beta1)


def si_inside(g: GeometricQuantities) -> float:
    """Selective p-value of the complement, for an observation inside the region."""
    if g.beta0 > 0:
        raise ModeError(f"si_inside needs beta0 <= 0, got {g.beta0}; use si_outside")
    return tail_ratio(-g.beta0 + g.beta1, g.beta1)


def si_prime(g: GeometricQuantities) -> float:
    """Orientation-normalised SI: small rejects the region, large supports it."""
    if g.beta0 > 0:
        return si_outside(g)
    return 1.0 - si_inside(g)


def si_general(h: GeometricQuantities, beta0_s: float) -> float:
    """Selective p-value for hypothesis region H given a selection region S.

    ``h`` is the geometry of H and ``beta0_s`` the signed distance to S. Only
    meaningful when the two boundaries are nearly parallel; the caller is
    responsible for that.
    """
    num = h.beta0 - h.beta1
    den = beta0_s + h.beta0 - h.beta1
    log_den = special.log_ndtr(-den)
    if not math.isfinite(den) or log_den < _LOG_TINY_DENOMINATOR:
        raise NumericError(
            f"selection probability underflows: upper_tail({den:.6g}) < {_TINY_DENOMINATOR}"
        )
    return float(np.exp(special.log_ndtr(-num) - log_den))


def geometry_from_bp_au(bp: float, au: float) -> GeometricQuantities:
    """Recover (beta0, beta1) from a BP and AU pair."""
    zb = upper_tail_inverse(bp)
    za = upper_tail_inverse(au)
    return GeometricQuantities(0.5 * (zb + za), 0.5 * (zb - za))


def si_from_bp_au(bp: float, au: float) -> tuple[float, float]:
    """Both selective p-values directly from BP and AU.

    Returns ``(si_region, si_complement)``: the first divides AU by the
    selection probability of the complement, the second divides ``1 - AU``
    by that of the region. Only one of them is the mode-appropriate value.
    """
    zb = upper_tail_inverse(bp)
    za = upper_tail_inverse(au)
    half = 0.5 * (za - zb)
    # au = upper_tail(za), 1 - au = upper_tail(-za)
    return tail_ratio(za, half), tail_ratio(-za, -half)


# -- delta-method standard errors -------------------------------------------

def _pvalue_functions():
    def bp(b0, b1):
        return upper_tail(b0 + b1)

    def au(b0, b1):
        return upper_tail(b0 - b1)

    def si(b0, b1):
        return si_prime(GeometricQuantities(b0, b1))

    return bp, au, si


def _delta_se(f, b0, b1, cov, step=1e-6):
    # one-sided in beta0 when a central step would cross the mode boundary
    if b0 > 0:
        lo, hi = (b0 - step, b0 + step) if b0 > step else (b0, b0 + step)
    else:
        lo, hi = (b0 - step, b0 + step) if b0 + step <= 0 else (b0 - step, b0)
    d0 = (f(hi, b1) - f(lo, b1)) / (hi - lo)
    d1 = (f(b0, b1 + step) - f(b0, b1 - step)) / (2 * step)
    grad = np.array([d0, d1])
    var = float(grad @ cov @ grad)
    return math.sqrt(max(var, 0.0))


def pvalues_from_geometry(g: GeometricQuantities) -> PValueTriple:
    """BP, AU and SI' with delta-method standard errors when ``g`` carries them."""
    bp_f, au_f, si_f = _pvalue_functions()
    bp = bp_f(g.beta0, g.beta1)
    au = au_f(g.beta0, g.beta1)
    si = si_f(g.beta0, g.beta1)
    if g.se_beta0 is None and g.se_beta1 is None:
        return PValueTriple(bp, au, si, mode=g.mode)
    cov = g.covariance()
    return PValueTriple(
        bp,
        au,
        si,
        se_bp=_delta_se(bp_f, g.beta0, g.beta1, cov),
        se_au=_delta_se(au_f, g.beta0, g.beta1, cov),
        se_si=_delta_se(si_f, g.beta0, g.beta1, cov),
        mode=g.mode,
    )
