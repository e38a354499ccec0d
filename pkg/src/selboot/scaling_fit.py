"""Scaling-law fits to multiscale bootstrap counts.

At scale ``sigma**2`` the bootstrap probability of a region behaves like
``upper_tail(psi(sigma**2) / sigma)`` where ``psi`` is close to the line
``beta0 + beta1 * sigma**2``. Candidate models for ``psi`` are fitted to the
raw hit counts by binomial maximum likelihood, combined with Akaike weights,
and the signed distance and curvature are read off the tangent line at
``sigma**2 == 1``.

Models
------
``poly_k``  ``sum(beta_i * s**i for i < k)`` with ``s = sigma**2``
``sing_3``  ``beta0 + beta1 * s / (1 + beta2 * (sigma - 1))``, ``0 <= beta2 <= 1``
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import special

from .errors import DomainError, FitError, InsufficientDataError, ParseError
from .normal_theory import (
    GeometricQuantities,
    PValueTriple,
    normal_density,
    pvalues_from_geometry,
    upper_tail_inverse,
)

MODEL_PARAMS = {"poly_1": 1, "poly_2": 2, "poly_3": 3, "sing_3": 3}
DEFAULT_MODELS = ("poly_2", "poly_3", "sing_3")

WIDE13 = tuple(np.exp(np.linspace(math.log(1 / 9), math.log(9), 13)))
NARROW10 = tuple(sorted(1.0 / x for x in np.round(np.arange(0.5, 1.45, 0.1), 10)))
SCALE_GRIDS = {"wide13": WIDE13, "narrow10": NARROW10}

_SING_STARTS = (0.5, 0.1, 0.9, 0.3, 0.7)
_SING_SHIFTS = ((0.0, 0.0), (0.05, -0.05), (-0.05, 0.05), (0.1, 0.0), (0.0, 0.1))
_MIN_WEIGHT = 1e-6


def scale_grid(spec) -> tuple[float, ...]:
    """Resolve a named grid (``wide13``, ``narrow10``) or a list of sigma^2 values."""
    if isinstance(spec, str):
        if spec in SCALE_GRIDS:
            return SCALE_GRIDS[spec]
        try:
            values = [float(tok) for tok in spec.split(",") if tok.strip()]
        except ValueError:
            raise DomainError(f"unknown scale grid {spec!r}") from None
    else:
        values = [float(v) for v in spec]
    if not values or any(not (v > 0 and math.isfinite(v)) for v in values):
        raise DomainError(f"scales must be positive and finite: {spec!r}")
    return tuple(sorted(values))


@dataclass(frozen=True)
class MultiscaleCounts:
    item_id: str
    scales: tuple
    replicates: tuple
    hits: tuple

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        object.__setattr__(self, "replicates", tuple(int(b) for b in self.replicates))
        object.__setattr__(self, "hits", tuple(int(h) for h in self.hits))
        n = len(self.scales)
        if n < 1:
            raise DomainError(f"{self.item_id}: no scales")
        if len(self.replicates) != n or len(self.hits) != n:
            raise DomainError(f"{self.item_id}: scales, replicates and hits differ in length")
        if any(not (s > 0) for s in self.scales):
            raise DomainError(f"{self.item_id}: scales must be positive")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise DomainError(f"{self.item_id}: scales must be strictly increasing")
        for b, h in zip(self.replicates, self.hits):
            if b < 1 or not 0 <= h <= b:
                raise DomainError(f"{self.item_id}: need 0 <= hits <= B and B >= 1")

    @property
    def proportions(self) -> np.ndarray:
        return np.asarray(self.hits, float) / np.asarray(self.replicates, float)

    def degenerate(self) -> np.ndarray:
        h = np.asarray(self.hits)
        return (h == 0) | (h == np.asarray(self.replicates))


@dataclass(frozen=True)
class ScalingModelFit:
    model_id: str
    coefficients: np.ndarray
    max_loglik: float
    aic: float
    param_cov: np.ndarray
    # excluded from the psi diagnostics and the least-squares start;
    # they still enter the likelihood
    degenerate_scales_excluded: tuple = ()
    item_id: str = ""
    iterations: int = 0

    @property
    def n_params(self) -> int:
        return len(self.coefficients)


@dataclass(frozen=True)
class AveragedFit:
    fits: tuple
    weights: tuple

    def __post_init__(self):
        if len(self.fits) != len(self.weights) or not self.fits:
            raise DomainError("fits and weights must be nonempty and of equal length")


# -- observed psi -------------------------------------------------------------

def psi_observed(counts: MultiscaleCounts, include_degenerate: bool = False):
    """Observed ``psi`` with delta-method standard errors, one row per scale.

    Degenerate scales (no hits or all hits) have no finite ``psi``. They are
    skipped unless ``include_degenerate`` is set, in which case their counts
    are clamped to ``[0.5, B - 0.5]`` for display only.

    Returns a list of ``(sigma_sq, psi, se)`` tuples.
    """
    rows = []
    degenerate = counts.degenerate()
    for s, b, h, deg in zip(counts.scales, counts.replicates, counts.hits, degenerate):
        if deg:
            if not include_degenerate:
                continue
            h = min(max(h, 0.5), b - 0.5)
        p = h / b
        sigma = math.sqrt(s)
        z = upper_tail_inverse(p)
        se = sigma * math.sqrt(p * (1 - p) / b) / normal_density(z)
        rows.append((s, sigma * z, se))
    if not include_degenerate and len(rows) < 2:
        raise InsufficientDataError(
            f"{counts.item_id}: fewer than 2 non-degenerate scales",
            {"item": counts.item_id, "hits": counts.hits, "replicates": counts.replicates},
        )
    return rows


# -- model evaluation ---------------------------------------------------------

def _check_model(model_id):
    if model_id not in MODEL_PARAMS:
        raise DomainError(f"unknown model {model_id!r}; choose from {sorted(MODEL_PARAMS)}")


def _psi_and_grad(model_id, beta, s):
    """psi(s) and its gradient with respect to the coefficients."""
    s = np.asarray(s, float)
    if model_id == "sing_3":
        b0, b1, b2 = beta
        sigma = np.sqrt(s)
        den = 1.0 + b2 * (sigma - 1.0)
        if np.any(den <= 0):
            raise DomainError("sing_3 denominator 1 + beta2 * (sigma - 1) is not positive")
        psi = b0 + b1 * s / den
        grad = np.stack([np.ones_like(s), s / den, -b1 * s * (sigma - 1.0) / den**2], axis=-1)
        return psi, grad
    k = MODEL_PARAMS[model_id]
    grad = np.stack([s**i for i in range(k)], axis=-1)
    return grad @ np.asarray(beta, float), grad


def _model_psi(model_id, beta, s):
    return _psi_and_grad(model_id, beta, s)[0]


def model_psi(fit: ScalingModelFit, sigma_sq):
    """Evaluate the fitted ``psi``.

    Polynomials accept any ``sigma_sq`` including negative values
    (extrapolation); ``sing_3`` needs ``sigma_sq > 0``.
    """
    s = np.asarray(sigma_sq, float)
    if fit.model_id == "sing_3" and np.any(s <= 0):
        raise DomainError("sing_3 is only defined for sigma_sq > 0")
    out = _model_psi(fit.model_id, fit.coefficients, s)
    return float(out) if out.ndim == 0 else out


def _tangent(model_id, beta):
    """(psi(1), psi'(1)) and their 2 x p Jacobian in the coefficients."""
    beta = np.asarray(beta, float)
    if model_id == "sing_3":
        b0, b1, b2 = beta
        value = b0 + b1
        slope = b1 * (1.0 - 0.5 * b2)
        jac = np.array([[1.0, 1.0, 0.0], [0.0, 1.0 - 0.5 * b2, -0.5 * b1]])
        return value, slope, jac
    k = len(beta)
    idx = np.arange(k, dtype=float)
    jac = np.vstack([np.ones(k), idx])
    return float(beta.sum()), float(idx @ beta), jac


# -- binomial likelihood on the probit scale -----------------------------------

def _mills(x):
    """phi(x) / upper_tail(x), stable for large positive x."""
    return np.exp(-0.5 * x * x - 0.5 * math.log(2 * math.pi) - special.log_ndtr(-x))


def _loglik(eta, hits, reps):
    return float(np.sum(hits * special.log_ndtr(-eta) + (reps - hits) * special.log_ndtr(eta)))


def _eta_derivatives(eta, hits, reps):
    """Score, expected information weight and observed curvature in eta."""
    lam_pos = _mills(eta)
    lam_neg = _mills(-eta)
    score = -hits * lam_pos + (reps - hits) * lam_neg
    fisher = reps * lam_pos * lam_neg
    second = -hits * lam_pos * (lam_pos - eta) - (reps - hits) * lam_neg * (lam_neg + eta)
    return score, fisher, second


class _Problem:
    def __init__(self, counts: MultiscaleCounts, model_id: str):
        self.model_id = model_id
        self.s = np.asarray(counts.scales, float)
        self.sigma = np.sqrt(self.s)
        self.hits = np.asarray(counts.hits, float)
        self.reps = np.asarray(counts.replicates, float)
        self.sing = model_id == "sing_3"

    # for sing_3 the optimiser works on (beta0, beta1, logit(beta2))
    def to_beta(self, theta):
        if not self.sing:
            return theta
        return np.array([theta[0], theta[1], special.expit(theta[2])])

    def to_theta(self, beta):
        if not self.sing:
            return np.asarray(beta, float)
        b2 = min(max(beta[2], 1e-9), 1 - 1e-9)
        return np.array([beta[0], beta[1], special.logit(b2)])

    def eta_jac(self, theta):
        beta = self.to_beta(theta)
        psi, grad = _psi_and_grad(self.model_id, beta, self.s)
        jac = grad / self.sigma[:, None]
        if self.sing:
            jac = jac.copy()
            jac[:, 2] *= beta[2] * (1 - beta[2])
        return psi / self.sigma, jac

    def loglik(self, theta):
        eta, _ = self.eta_jac(theta)
        return _loglik(eta, self.hits, self.reps)

    def observed_information(self, beta):
        """Negative Hessian of the log-likelihood in the original coefficients."""
        psi, grad = _psi_and_grad(self.model_id, beta, self.s)
        eta = psi / self.sigma
        jac = grad / self.sigma[:, None]
        score, _, second = _eta_derivatives(eta, self.hits, self.reps)
        info = -(jac.T * second) @ jac
        if self.sing:
            b0, b1, b2 = beta
            t = self.sigma - 1.0
            den = 1.0 + b2 * t
            d12 = -self.s * t / den**2 / self.sigma
            d22 = 2.0 * b1 * self.s * t**2 / den**3 / self.sigma
            info[1, 2] -= score @ d12
            info[2, 1] -= score @ d12
            info[2, 2] -= score @ d22
        return info


def _scoring(problem: _Problem, theta0, max_iter=200, tol=1e-10):
    """Fisher scoring with step halving. Returns (theta, loglik, iterations)."""
    theta = np.asarray(theta0, float).copy()
    eta, jac = problem.eta_jac(theta)
    ll = _loglik(eta, problem.hits, problem.reps)
    if not math.isfinite(ll):
        return theta, ll, 0, False
    for it in range(1, max_iter + 1):
        score, fisher, _ = _eta_derivatives(eta, problem.hits, problem.reps)
        g = jac.T @ score
        info = (jac.T * fisher) @ jac
        # pseudo-inverse step: directions the data cannot identify are left alone
        step = np.linalg.lstsq(info, g, rcond=1e-9)[0]
        decrement = float(g @ step)
        if decrement < 1e-10:
            # Newton decrement: expected remaining gain is about half of it
            return theta, ll, it, True
        t = 1.0
        improved = False
        for _ in range(30):
            cand = theta + t * step
            eta_c, jac_c = problem.eta_jac(cand)
            ll_c = _loglik(eta_c, problem.hits, problem.reps)
            if math.isfinite(ll_c) and ll_c >= ll - 1e-12:
                improved = True
                break
            t *= 0.5
        if not improved:
            return theta, ll, it, decrement < 1e-6
        gain = ll_c - ll
        theta, eta, jac, ll = cand, eta_c, jac_c, ll_c
        if gain < tol and decrement < 1e-8:
            # flat direction, e.g. a sing_3 curvature parameter near its bound
            return theta, ll, it, True
    return theta, ll, max_iter, False


def _wls_start(counts: MultiscaleCounts, k: int):
    rows = psi_observed(counts)
    s = np.array([r[0] for r in rows])
    psi = np.array([r[1] for r in rows])
    w = 1.0 / np.array([r[2] for r in rows]) ** 2
    k_eff = min(k, len(rows))
    X = np.stack([s**i for i in range(k_eff)], axis=-1)
    sw = np.sqrt(w)
    coef = np.linalg.lstsq(X * sw[:, None], psi * sw, rcond=None)[0]
    return np.concatenate([coef, np.zeros(k - k_eff)])


def _covariance(info):
    info = 0.5 * (info + info.T)
    try:
        vals, vecs = np.linalg.eigh(info)
    except np.linalg.LinAlgError:
        return np.full(info.shape, np.nan)
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    inv = np.where(vals > 1e-12 * scale, 1.0 / np.where(vals > 0, vals, 1.0), 0.0)
    return (vecs * inv) @ vecs.T


def fit_model(counts: MultiscaleCounts, model_id: str) -> ScalingModelFit:
    """Binomial maximum-likelihood fit of one scaling model to the counts."""
    _check_model(model_id)
    k = MODEL_PARAMS[model_id]
    degenerate = counts.degenerate()
    n_good = int(np.sum(~degenerate))
    excluded = tuple(s for s, d in zip(counts.scales, degenerate) if d)
    if n_good < k or n_good < 2:
        raise InsufficientDataError(
            f"{counts.item_id}: {model_id} needs {max(k, 2)} non-degenerate scales, have {n_good}",
            {"item": counts.item_id, "model": model_id, "degenerate_scales": excluded},
        )
    problem = _Problem(counts, model_id)
    if model_id == "sing_3":
        base = _wls_start(counts, 2)
        scale0 = max(abs(base[0]), 0.1)
        scale1 = max(abs(base[1]), 0.1)
        starts = [
            problem.to_theta([base[0] + d0 * scale0, base[1] + d1 * scale1, b2])
            for b2, (d0, d1) in zip(_SING_STARTS, _SING_SHIFTS)
        ]
    else:
        starts = [_wls_start(counts, k)]

    best = None
    tried = []
    for start in starts:
        theta, ll, iters, ok = _scoring(problem, start)
        tried.append({"start": start.tolist(), "loglik": ll, "iterations": iters, "converged": ok})
        if ok and math.isfinite(ll):
            if best is not None and abs(ll - best[1]) < 1e-7:
                # two starts reached the same optimum
                if ll > best[1]:
                    best = (theta, ll, iters)
                break
            if best is None or ll > best[1]:
                best = (theta, ll, iters)
    if best is None:
        raise FitError(
            f"{counts.item_id}: {model_id} fit did not converge after {len(starts)} starts",
            {"item": counts.item_id, "model": model_id, "attempts": tried},
        )
    theta, ll, iters = best
    beta = problem.to_beta(theta)
    cov = _covariance(problem.observed_information(beta))
    return ScalingModelFit(
        model_id=model_id,
        coefficients=np.asarray(beta, float),
        max_loglik=ll,
        aic=-2.0 * ll + 2.0 * k,
        param_cov=cov,
        degenerate_scales_excluded=excluded,
        item_id=counts.item_id,
        iterations=iters,
    )


def select_and_average(fits: Sequence[ScalingModelFit]) -> AveragedFit:
    """Akaike weights, with negligible members dropped and weights renormalised."""
    fits = list(fits)
    if not fits:
        raise FitError("no successful fits to average")
    aic = np.array([f.aic for f in fits])
    w = np.exp(-0.5 * (aic - aic.min()))
    w /= w.sum()
    keep = w >= _MIN_WEIGHT
    kept = [f for f, k in zip(fits, keep) if k]
    w = w[keep] / w[keep].sum()
    return AveragedFit(tuple(kept), tuple(float(x) for x in w))


def best_fit(avg: AveragedFit) -> ScalingModelFit:
    return min(avg.fits, key=lambda f: f.aic)


def geometry_at_unit_scale(avg: AveragedFit) -> GeometricQuantities:
    """Signed distance and curvature from the tangent line at sigma^2 = 1.

    The averaged tangent has slope ``beta1`` and intercept ``beta0``. Its
    covariance is the weight-averaged per-model delta-method covariance,
    treating the Akaike weights as fixed.
    """
    value = slope = 0.0
    cov = np.zeros((2, 2))
    # rows of to_geom map (psi(1), psi'(1)) to (beta0, beta1)
    to_geom = np.array([[1.0, -1.0], [0.0, 1.0]])
    for fit, w in zip(avg.fits, avg.weights):
        v, d, jac = _tangent(fit.model_id, fit.coefficients)
        value += w * v
        slope += w * d
        j = to_geom @ jac
        cov += w * (j @ fit.param_cov @ j.T)
    return GeometricQuantities(
        beta0=float(value - slope),
        beta1=float(slope),
        se_beta0=float(math.sqrt(max(cov[0, 0], 0.0))),
        se_beta1=float(math.sqrt(max(cov[1, 1], 0.0))),
        cov01=float(cov[0, 1]),
    )


def pvalues_from_fit(avg: AveragedFit) -> PValueTriple:
    return pvalues_from_geometry(geometry_at_unit_scale(avg))


def fit_counts(counts: MultiscaleCounts, models: Iterable[str] = DEFAULT_MODELS):
    """Fit every model that the data supports and average them.

    Models whose fit fails are skipped; if none succeeds the last error is
    raised. Returns ``(averaged_fit, failures)`` where ``failures`` maps
    model ids to the error raised.
    """
    fits, failures = [], {}
    last = None
    for model_id in models:
        try:
            fits.append(fit_model(counts, model_id))
        except FitError as exc:
            failures[model_id] = exc
            last = exc
    if not fits:
        raise last if last is not None else FitError("no models requested")
    return select_and_average(fits), failures


def psi_diagnostics(counts: MultiscaleCounts, avg: Optional[AveragedFit] = None):
    """Observed and fitted psi per scale, for inspecting model adequacy.

    Yields dicts with keys ``sigma_sq``, ``psi``, ``se``, ``degenerate`` and
    one ``fit_<model>`` key per averaged member.
    """
    degenerate = dict(zip(counts.scales, counts.degenerate()))
    rows = []
    for s, psi, se in psi_observed(counts, include_degenerate=True):
        row = {"sigma_sq": s, "psi": psi, "se": se, "degenerate": bool(degenerate[s])}
        if avg is not None:
            for fit in avg.fits:
                row[f"fit_{fit.model_id}"] = model_psi(fit, s)
        rows.append(row)
    return rows


# -- counts TSV ---------------------------------------------------------------

def write_counts_tsv(items: Sequence[MultiscaleCounts], stream) -> None:
    """Write counts as TSV.

    The header is ``# item`` followed by the scales of the first item; each
    data row is the item id followed by ``scale<TAB>B<TAB>hits`` triplets.
    """
    items = list(items)
    head = ["# item"] + ([repr(s) for s in items[0].scales] if items else [])
    stream.write("\t".join(head) + "\n")
    for c in items:
        cells = [c.item_id]
        for s, b, h in zip(c.scales, c.replicates, c.hits):
            cells += [repr(s), str(b), str(h)]
        stream.write("\t".join(cells) + "\n")


def read_counts_tsv(stream) -> list[MultiscaleCounts]:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode())
    items = []
    for lineno, line in enumerate(stream, 1):
        if isinstance(line, bytes):
            line = line.decode()
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        cells = line.split("\t")
        rest = cells[1:]
        if len(rest) % 3 or not rest:
            raise ParseError("expected item id followed by scale/B/hits triplets", lineno)
        try:
            scales = [float(x) for x in rest[0::3]]
            reps = [int(x) for x in rest[1::3]]
            hits = [int(x) for x in rest[2::3]]
        except ValueError as exc:
            raise ParseError(f"bad number: {exc}", lineno) from None
        try:
            items.append(MultiscaleCounts(cells[0], tuple(scales), tuple(reps), tuple(hits)))
        except DomainError as exc:
            raise ParseError(str(exc), lineno) from None
    return items
