"""Model maps: where the candidate trees and the full model sit relative to each other.

Each tree ``i`` is represented by its site-wise log-likelihood column
``xi_i``. After subtracting a common centre ``c`` the columns ``a_i`` span a
space in which ``||a_i - a_j||^2`` approximates ``n`` times the Jeffreys
divergence between the two models. The full model is the point ``a_X`` whose
inner product with every ``a_i`` equals ``||a_i||^2``.

Coordinates come from an uncentered, unscaled PCA ``A = U S V^T`` of the
(optionally projected) matrix ``A = (a_1 ... a_K)``. With biplot exponent
``alpha`` the sites get ``U S^(1 - alpha)`` and the trees ``V S^alpha``, so
their product always reproduces the rank-``d`` approximation of ``A``. The
default ``alpha = 0`` makes the site coordinates the PCA scores and the tree
coordinates the loadings; ``alpha = 1`` puts trees at their projected
positions, so distances between trees approximate ``||a_i - a_j||``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, NumericError
from .rell import SitewiseLogLik, loglik_diff_variance

DEFAULT_RANK = 10


@dataclass(frozen=True)
class ModelMapResult:
    site_coords: np.ndarray  # n x d
    tree_coords: np.ndarray  # K x d
    full_model_coord: np.ndarray  # d
    singular_values: np.ndarray  # all of them, descending
    centering: str
    alpha: float = 0.0
    projected: bool = False
    tree_labels: tuple = ()

    @property
    def dims(self) -> int:
        return self.site_coords.shape[1]


def _center(xi: SitewiseLogLik, center) -> tuple[np.ndarray, str]:
    """Columns minus the chosen centre. ``center`` is "mean", "none" or an n-vector."""
    x = xi.xi
    if isinstance(center, str):
        if center == "mean":
            return x - x.mean(axis=1, keepdims=True), "mean of tree columns"
        if center == "none":
            return x.copy(), "origin (no centering)"
        raise DomainError(f"unknown centering {center!r}")
    c = np.asarray(center, float)
    if c.shape != (xi.n,):
        raise DomainError(f"centre vector must have length {xi.n}")
    return x - c[:, None], "user-supplied column (e.g. star topology)"


def _numerical_rank(s: np.ndarray, shape) -> int:
    if s.size == 0 or s[0] == 0:
        return 0
    tol = s[0] * max(shape) * np.finfo(float).eps
    return int(np.sum(s > tol))


def full_model_vector(xi: SitewiseLogLik, rank: int = DEFAULT_RANK, center="mean") -> np.ndarray:
    """``a_X = B (B^T B)^-1 d`` with the inverse truncated to ``rank`` singular values.

    ``d_i = ||a_i||^2``. With ``B = U S V^T`` this is ``U S^-1 V^T d``. If
    ``rank`` exceeds the numerical rank of ``B`` a warning is issued and the
    smaller rank is used.
    """
    if rank < 1:
        raise DomainError("rank must be at least 1")
    if rank > xi.K:
        raise DomainError(f"rank {rank} exceeds the number of trees {xi.K}")
    a, _ = _center(xi, center)
    return _full_model_from_columns(a, rank)


def _full_model_from_columns(a: np.ndarray, rank: int) -> np.ndarray:
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    r_num = _numerical_rank(s, a.shape)
    if r_num == 0:
        raise NumericError("all centred tree columns are zero; the full model is undefined")
    if rank > r_num:
        warnings.warn(
            f"requested rank {rank} exceeds numerical rank {r_num}; truncating to {r_num}",
            RuntimeWarning,
            stacklevel=3,
        )
        rank = r_num
    d = np.einsum("ij,ij->j", a, a)
    return u[:, :rank] @ ((vt[:rank] @ d) / s[:rank])


def jeffreys_distance_sq(xi: SitewiseLogLik, i: int, j: int) -> float:
    """``||xi_i - xi_j||^2``, roughly ``n (KL(i||j) + KL(j||i))`` for nearby models.

    The same quantity is the variance of the log-likelihood difference, so
    this just delegates to :func:`selboot.rell.loglik_diff_variance`.
    """
    for k in (i, j):
        if not 0 <= k < xi.K:
            raise DomainError(f"tree index {k} outside 0..{xi.K - 1}")
    return loglik_diff_variance(xi, i, j)


def project_out(a: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Apply ``I - v v^T / ||v||^2`` to every column of ``a``."""
    v = np.asarray(direction, float)
    vv = float(v @ v)
    if vv == 0:
        raise NumericError("cannot project out a zero vector")
    return a - np.outer(v, (v @ a) / vv)


def map_coordinates(
    xi: SitewiseLogLik,
    rank: int = DEFAULT_RANK,
    dims: int = 2,
    project_out_full: bool = True,
    alpha: float = 0.0,
    center="mean",
) -> ModelMapResult:
    """Biplot coordinates of sites, trees and the full model.

    With ``project_out_full`` the tree columns are first projected onto the
    orthogonal complement of ``a_X`` (a view from the direction of the full
    model), which places the full model at the origin.
    """
    if dims not in (2, 3):
        raise DomainError(f"dims must be 2 or 3, got {dims}")
    if dims > min(xi.n, xi.K):
        raise DomainError(f"dims={dims} exceeds min(n, K) = {min(xi.n, xi.K)}")
    a, how = _center(xi, center)
    a_x = _full_model_from_columns(a, min(rank, xi.K))
    if project_out_full:
        a = project_out(a, a_x)
        a_x = project_out(a_x[:, None], a_x)[:, 0]
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if _numerical_rank(s, a.shape) < dims:
        raise NumericError(
            f"model matrix has numerical rank {_numerical_rank(s, a.shape)} < {dims}; no map to draw"
        )
    u_d, s_d, v_d = u[:, :dims], s[:dims], vt[:dims].T
    sites = u_d * s_d ** (1.0 - alpha)
    trees = v_d * s_d**alpha
    full = (u_d.T @ a_x) * s_d ** (alpha - 1.0)
    return ModelMapResult(
        site_coords=sites,
        tree_coords=trees,
        full_model_coord=full,
        singular_values=s,
        centering=how,
        alpha=alpha,
        projected=project_out_full,
        tree_labels=xi.tree_labels,
    )


# -- output -------------------------------------------------------------------

def _axes(d):
    return ["x", "y", "z"][:d]


def write_sites_csv(result: ModelMapResult, stream) -> None:
    stream.write(",".join(["site"] + _axes(result.dims)) + "\n")
    for t, row in enumerate(result.site_coords, 1):
        stream.write(",".join([str(t)] + [repr(float(v)) for v in row]) + "\n")


def write_trees_csv(result: ModelMapResult, stream) -> None:
    stream.write(",".join(["tree"] + _axes(result.dims)) + "\n")
    labels = result.tree_labels or tuple(f"T{i + 1}" for i in range(len(result.tree_coords)))
    for label, row in zip(labels, result.tree_coords):
        stream.write(",".join([label] + [repr(float(v)) for v in row]) + "\n")
    stream.write(",".join(["full_model"] + [repr(float(v)) for v in result.full_model_coord]) + "\n")


SVG_SIZE = 800


def render_svg(result: ModelMapResult, highlight: Sequence[int] = (), title: Optional[str] = None) -> str:
    """Static scatter of the first two coordinates.

    Sites and trees are scaled independently to fill the frame, as is usual
    for biplots; the origin is kept at the centre.
    """
    size, margin = SVG_SIZE, 40
    half = size / 2 - margin

    def scaler(pts):
        m = float(np.max(np.abs(pts[:, :2]))) if pts.size else 0.0
        return half / m if m > 0 else 1.0

    k_site = scaler(result.site_coords)
    k_tree = scaler(np.vstack([result.tree_coords, result.full_model_coord[None, :]]))

    def xy(p, k):
        return size / 2 + k * float(p[0]), size / 2 - k * float(p[1])

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<line x1="{margin}" y1="{size / 2}" x2="{size - margin}" y2="{size / 2}" stroke="#ccc"/>',
        f'<line x1="{size / 2}" y1="{margin}" x2="{size / 2}" y2="{size - margin}" stroke="#ccc"/>',
    ]
    if title:
        out.append(f'<text x="{margin}" y="{margin / 2 + 6}" font-size="16">{_escape(title)}</text>')
    for p in result.site_coords:
        x, y = xy(p, k_site)
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="1.5" fill="#999" fill-opacity="0.5"/>')
    labels = result.tree_labels or tuple(f"T{i + 1}" for i in range(len(result.tree_coords)))
    hl = set(highlight)
    for i, (label, p) in enumerate(zip(labels, result.tree_coords)):
        x, y = xy(p, k_tree)
        colour = "#c0392b" if i in hl else "#1f4e99"
        out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="4" fill="{colour}"/>')
        out.append(f'<text x="{x + 6:.2f}" y="{y - 6:.2f}" font-size="11">{_escape(label)}</text>')
    x, y = xy(result.full_model_coord, k_tree)
    out.append(f'<rect x="{x - 5:.2f}" y="{y - 5:.2f}" width="10" height="10" fill="black"/>')
    out.append(f'<text x="{x + 7:.2f}" y="{y + 4:.2f}" font-size="12">full model</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
