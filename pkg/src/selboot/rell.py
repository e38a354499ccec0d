"""Multiscale RELL bootstrap over a site-wise log-likelihood matrix.

Replicates resample sites with replacement and add up the stored per-site
log-likelihoods, so tree parameters are never re-estimated. A replicate of
size ``n_prime`` corresponds to the scale ``sigma**2 = n / n_prime``.

Random numbers come from Philox streams keyed by ``(seed, scale index,
block index)`` with a fixed block size, so results do not depend on how
blocks are spread over workers.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import DomainError, ParseError, ScaleError
from .scaling_fit import MultiscaleCounts

BLOCK_SIZE = 1000
DEFAULT_B = 100_000
_CHUNK_ENTRIES = 2_000_000


@dataclass(frozen=True)
class SitewiseLogLik:
    """``xi[t, i]`` is the log-likelihood of site ``t`` under tree ``i``."""

    xi: np.ndarray
    tree_labels: tuple = ()

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        if xi.ndim != 2 or xi.size == 0:
            raise DomainError(f"xi must be a nonempty n x K matrix, got shape {xi.shape}")
        if not np.all(np.isfinite(xi)):
            raise DomainError("xi contains non-finite entries")
        xi.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        labels = tuple(self.tree_labels) or tuple(f"T{i + 1}" for i in range(xi.shape[1]))
        if len(labels) != xi.shape[1]:
            raise DomainError(f"{len(labels)} labels for {xi.shape[1]} trees")
        object.__setattr__(self, "tree_labels", labels)

    @property
    def n(self) -> int:
        return self.xi.shape[0]

    @property
    def K(self) -> int:
        return self.xi.shape[1]

    def full_loglik(self) -> np.ndarray:
        return self.xi.sum(axis=0)


@dataclass(frozen=True)
class ReplicateWeights:
    w: np.ndarray
    n_prime: int

    def __post_init__(self):
        w = np.asarray(self.w)
        if np.any(w < 0) or int(w.sum()) != self.n_prime:
            raise DomainError("replicate weights must be nonnegative and sum to n_prime")
        object.__setattr__(self, "w", w)


# -- input --------------------------------------------------------------------

def _lines(source):
    if isinstance(source, (bytes, bytearray)):
        source = io.StringIO(bytes(source).decode())
    elif isinstance(source, str):
        source = io.StringIO(source)
    for lineno, line in enumerate(source, 1):
        if isinstance(line, bytes):
            line = line.decode()
        yield lineno, line


def _floats(tokens, lineno, first_col=1):
    out = []
    for col, tok in enumerate(tokens, first_col):
        try:
            v = float(tok)
        except ValueError:
            raise ParseError(f"non-numeric token {tok!r}", lineno, col) from None
        if not math.isfinite(v):
            raise ParseError(f"non-finite value {tok!r}", lineno, col)
        out.append(v)
    return out


def _header(it, names):
    for lineno, line in it:
        toks = line.split()
        if not toks or toks[0].startswith("#"):
            continue
        if len(toks) != 2:
            raise ParseError(f"header must hold two integers ({' '.join(names)})", lineno)
        try:
            a, b = int(toks[0]), int(toks[1])
        except ValueError:
            raise ParseError(f"header must hold two integers ({' '.join(names)})", lineno) from None
        if a < 1 or b < 1:
            raise ParseError("empty matrix", lineno)
        return lineno, a, b
    raise ParseError("empty input: no header line")


def _rows(it, n_rows, n_cols, header_line):
    rows = []
    last = header_line
    for lineno, line in it:
        last = lineno
        toks = line.split()
        if not toks or toks[0].startswith("#"):
            continue
        if len(rows) == n_rows:
            raise ParseError(f"more than {n_rows} data rows", lineno)
        if len(toks) != n_cols:
            raise ParseError(f"expected {n_cols} values, found {len(toks)}", lineno, len(toks) + 1)
        rows.append(_floats(toks, lineno))
    if len(rows) != n_rows:
        raise ParseError(f"expected {n_rows} data rows, found {len(rows)}", last)
    return np.array(rows, dtype=float)


def load_matrix(source, format: str = "plain", tree_labels: Sequence[str] = ()) -> SitewiseLogLik:
    """Parse a site-wise log-likelihood matrix.

    ``plain``: a header line ``n K`` then ``n`` rows of ``K`` values
    (sites by trees). ``consel_mt``: a header line ``K n`` then ``K`` rows of
    ``n`` values (trees by sites). In both, tokens are whitespace separated,
    blank lines and lines starting with ``#`` are ignored, and every data
    row must sit on a single line.

    ``source`` may be a text or binary stream, ``bytes`` or ``str`` content.
    """
    it = _lines(source)
    if format == "plain":
        hl, n, k = _header(it, ("n", "K"))
        xi = _rows(it, n, k, hl)
    elif format == "consel_mt":
        hl, k, n = _header(it, ("K", "n"))
        xi = _rows(it, k, n, hl).T
    else:
        raise DomainError(f"unknown matrix format {format!r}")
    return SitewiseLogLik(np.ascontiguousarray(xi), tuple(tree_labels))


def read_matrix(path, format: str = "plain", tree_labels: Sequence[str] = ()) -> SitewiseLogLik:
    with open(path, "rb") as fh:
        return load_matrix(fh, format, tree_labels)


def write_matrix(data: SitewiseLogLik, stream, format: str = "plain") -> None:
    xi = data.xi if format == "plain" else data.xi.T
    stream.write(f"{xi.shape[0]} {xi.shape[1]}\n")
    for row in xi:
        stream.write(" ".join(repr(float(v)) for v in row) + "\n")


# -- resampling ---------------------------------------------------------------

def resample_loglik(xi: SitewiseLogLik, weights: ReplicateWeights) -> np.ndarray:
    """Replicate log-likelihoods ``sum_t w_t * xi[t, i]`` for every tree."""
    if len(weights.w) != xi.n:
        raise DomainError(f"weights have length {len(weights.w)}, matrix has {xi.n} sites")
    return weights.w @ xi.xi


def ml_item(loglik) -> tuple[int, bool]:
    """Index of the largest value (0-based) and whether it was tied."""
    v = np.asarray(loglik, dtype=float)
    if v.size == 0:
        raise DomainError("empty log-likelihood vector")
    i = int(np.argmax(v))
    return i, bool(np.count_nonzero(v == v[i]) > 1)


def loglik_diff_variance(xi: SitewiseLogLik, i: int, j: int) -> float:
    """``||xi_i - xi_j||^2``, the variance of the log-likelihood difference."""
    d = xi.xi[:, i] - xi.xi[:, j]
    return float(d @ d)


def replicate_sizes(n: int, scales) -> list[tuple[int, float]]:
    """``(n_prime, realized sigma^2)`` per requested scale."""
    out = []
    for s in scales:
        if not s > 0:
            raise ScaleError(f"scale must be positive, got {s}")
        n_prime = int(math.floor(n / s + 0.5))
        if n_prime < 1:
            raise ScaleError(f"scale {s} gives replicate size {n / s:.3g} < 1 for n = {n}")
        out.append((n_prime, n / n_prime))
    realized = [r for _, r in out]
    if any(b <= a for a, b in zip(realized, realized[1:])):
        raise ScaleError(
            f"scales collapse to repeated replicate sizes for n = {n}: {[p for p, _ in out]}"
        )
    return out


def block_generator(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


def _block_hits(xi, n_prime, count, seed, scale_idx, block_idx):
    rng = block_generator(seed, scale_idx, block_idx)
    n, k = xi.shape
    hits = np.zeros(k, dtype=np.int64)
    ties = 0
    # bounded memory: rows per chunk depends only on n_prime
    rows = max(1, min(count, _CHUNK_ENTRIES // n_prime))
    for start in range(0, count, rows):
        m = min(rows, count - start)
        idx = rng.integers(0, n, size=(m, n_prime))
        idx += (np.arange(m) * n)[:, None]
        w = np.bincount(idx.ravel(), minlength=m * n).reshape(m, n)
        ll = w.astype(float) @ xi
        best = ll.max(axis=1)
        hits += np.bincount(ll.argmax(axis=1), minlength=k)
        ties += int(np.count_nonzero((ll == best[:, None]).sum(axis=1) > 1))
    return hits, ties


@dataclass(frozen=True)
class BootstrapHits:
    """Raw per-scale, per-tree ML counts from a RELL run."""

    scales: tuple  # realized sigma^2
    n_prime: tuple
    B: int
    hits: np.ndarray  # (n_scales, K)
    ties: tuple  # replicates with a tied maximum, per scale

    @property
    def tie_rate(self) -> float:
        return sum(self.ties) / (self.B * len(self.scales))


def bootstrap_hits(
    xi: SitewiseLogLik, scales, B: int = DEFAULT_B, seed: int = 0, workers: int = 1
) -> BootstrapHits:
    """Count how often each tree has the largest replicate log-likelihood."""
    if B < 1:
        raise DomainError("B must be at least 1")
    sizes = replicate_sizes(xi.n, scales)
    jobs = []
    for si, (n_prime, _) in enumerate(sizes):
        for bi, start in enumerate(range(0, B, BLOCK_SIZE)):
            jobs.append((si, bi, n_prime, min(BLOCK_SIZE, B - start)))

    def run(job):
        si, bi, n_prime, count = job
        return _block_hits(xi.xi, n_prime, count, seed, si, bi)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]

    hits = np.zeros((len(sizes), xi.K), dtype=np.int64)
    ties = [0] * len(sizes)
    # merge in job order
    for (si, _, _, _), (h, t) in zip(jobs, results):
        hits[si] += h
        ties[si] += t
    return BootstrapHits(
        scales=tuple(r for _, r in sizes),
        n_prime=tuple(p for p, _ in sizes),
        B=B,
        hits=hits,
        ties=tuple(ties),
    )


def multiscale_bootstrap(
    xi: SitewiseLogLik,
    scales,
    B: int = DEFAULT_B,
    seed: int = 0,
    grouping: Optional[Mapping[str, Sequence[int]]] = None,
    workers: int = 1,
) -> list[MultiscaleCounts]:
    """Per-tree counts, followed by per-edge counts when ``grouping`` is given.

    ``grouping`` maps an edge id to the (0-based) indices of its member trees.
    Each replicate has exactly one ML tree, so an edge's count is the sum of
    its members' counts.
    """
    raw = bootstrap_hits(xi, scales, B, seed, workers)
    return counts_from_hits(raw, xi.tree_labels, grouping)


def counts_from_hits(raw: BootstrapHits, labels, grouping=None) -> list[MultiscaleCounts]:
    reps = (raw.B,) * len(raw.scales)
    out = [
        MultiscaleCounts(label, raw.scales, reps, tuple(raw.hits[:, i]))
        for i, label in enumerate(labels)
    ]
    for edge_id, members in (grouping or {}).items():
        members = list(members)
        h = raw.hits[:, members].sum(axis=1) if members else np.zeros(len(raw.scales), int)
        out.append(MultiscaleCounts(edge_id, raw.scales, reps, tuple(h)))
    return out
