"""Command line interface.

Subcommands
-----------
``pvalues``   site-wise log-likelihoods -> counts, fits and p-values for trees (and edges)
``bootstrap`` site-wise log-likelihoods -> multiscale counts only
``fit``       stored counts -> fits and p-values
``shortcut``  a published (BP, AU) pair -> geometry and selective p-values
``simulate``  type-I error experiment on a synthetic region
``counts``    number of regions for trees or edges
``modelmap``  biplot coordinates of trees, sites and the full model

Exit codes: 0 ok, 1 other failure, 2 configuration, 3 parse, 4 I/O,
5 fit, 6 numeric.
"""

from __future__ import annotations

import argparse
import io
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import modelmap, phylo, rell, scaling_fit, simulator
from .errors import (
    ConfigError,
    DomainError,
    FitError,
    InputOutputError,
    SelbootError,
)
from .normal_theory import (
    INSIDE,
    geometry_from_bp_au,
    pvalues_from_geometry,
    si_from_bp_au,
    si_prime,
)

log = logging.getLogger("selboot")

CLI_DEFAULT_B = 10_000
_FLOAT = "{:.6g}"


# -- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    input: Optional[Path] = None
    format: str = "plain"
    topologies: Optional[Path] = None
    outgroup: Optional[int] = None
    scales: tuple = scaling_fit.WIDE13
    B: int = CLI_DEFAULT_B
    seed: int = 0
    models: tuple = scaling_fit.DEFAULT_MODELS
    alpha: float = 0.05
    out: Path = Path(".")
    workers: int = 1
    trees: bool = True
    edges: bool = True

    def __post_init__(self):
        if self.B < 100:
            raise ConfigError(f"--nb must be at least 100, got {self.B}")
        if not self.scales:
            raise ConfigError("no scales given")
        if not 0 < self.alpha <= 0.5:
            raise ConfigError(f"--alpha must lie in (0, 0.5], got {self.alpha}")
        if self.format not in ("plain", "consel_mt"):
            raise ConfigError(f"unknown --format {self.format!r}")
        unknown = [m for m in self.models if m not in scaling_fit.MODEL_PARAMS]
        if unknown or not self.models:
            raise ConfigError(f"unknown models {unknown}; choose from {sorted(scaling_fit.MODEL_PARAMS)}")
        if self.workers < 1:
            raise ConfigError("--workers must be positive")


def _scales(text: str) -> tuple:
    try:
        return scaling_fit.scale_grid(text)
    except (DomainError, ValueError) as exc:
        raise ConfigError(f"bad --scales {text!r}: {exc}") from None


def _models(text: str) -> tuple:
    return tuple(m.strip() for m in text.split(",") if m.strip())


def _config_from_args(args) -> RunConfig:
    kw = {}
    for name in ("format", "outgroup", "seed", "alpha", "workers"):
        if getattr(args, name, None) is not None:
            kw[name] = getattr(args, name)
    if getattr(args, "input", None):
        kw["input"] = Path(args.input)
    if getattr(args, "topologies", None):
        kw["topologies"] = Path(args.topologies)
    if getattr(args, "scales", None):
        kw["scales"] = _scales(args.scales)
    if getattr(args, "nb", None) is not None:
        kw["B"] = args.nb
    if getattr(args, "models", None):
        kw["models"] = _models(args.models)
    if getattr(args, "out", None):
        kw["out"] = Path(args.out)
    if getattr(args, "no_edges", False):
        kw["edges"] = False
    return RunConfig(**kw)


# -- output helpers -----------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return "nan"
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _FLOAT.format(float(v) + 0.0)  # no "-0"
    return str(v)


def _tsv(header, rows) -> str:
    buf = io.StringIO()
    buf.write("\t".join(header) + "\n")
    for row in rows:
        buf.write("\t".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _write_outputs(out: Path, files: dict) -> None:
    """Write every file only after all of them have been computed."""
    try:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in files.items():
            tmp = out / f".{name}.tmp"
            tmp.write_text(text)
            os.replace(tmp, out / name)
    except OSError as exc:
        raise InputOutputError(f"cannot write to {out}: {exc}") from None


def _open_input(path: Path, what: str):
    if path is None:
        raise ConfigError(f"no {what} given")
    if not path.is_file():
        raise InputOutputError(f"{what} {path} not found")
    try:
        return open(path, "rb")
    except OSError as exc:
        raise InputOutputError(f"cannot read {what} {path}: {exc}") from None


# -- p-value tables -------------------------------------------------------------

PVALUE_HEADER = (
    "item", "kind", "bp", "au", "si", "beta0", "beta1",
    "se_bp", "se_au", "se_si", "se_beta0", "se_beta1",
    "mode", "significant", "models", "status",
)


def _significant(p, alpha) -> str:
    names = ("bp", "au", "si")
    values = (p.bp, p.au, p.si_prime)
    if p.mode == INSIDE:
        flagged = [n for n, v in zip(names, values) if v > 1 - alpha]
    else:
        flagged = [n for n, v in zip(names, values) if v < alpha]
    return ",".join(flagged) or "-"


def analyse_counts(items: Sequence[scaling_fit.MultiscaleCounts], kinds: Sequence[str], models, alpha):
    """Fit every item; returns (pvalue rows, psi rows, number of failed items)."""
    rows, psi_rows, failed = [], [], 0
    for counts, kind in zip(items, kinds):
        try:
            avg, failures = scaling_fit.fit_counts(counts, models)
        except FitError as exc:
            failed += 1
            log.info("%s: %s", counts.item_id, exc)
            bp_obs = _observed_bp(counts)
            rows.append((counts.item_id, kind, bp_obs) + (None,) * 10 + ("-", "-", _status(exc)))
            psi_rows.extend(_psi_rows(counts, None))
            continue
        for model_id, exc in failures.items():
            log.info("%s: %s skipped: %s", counts.item_id, model_id, exc)
        g = scaling_fit.geometry_at_unit_scale(avg)
        p = pvalues_from_geometry(g)
        desc = ",".join(f"{f.model_id}:{w:.3f}" for f, w in zip(avg.fits, avg.weights))
        rows.append(
            (
                counts.item_id, kind, p.bp, p.au, p.si_prime, g.beta0, g.beta1,
                p.se_bp, p.se_au, p.se_si, g.se_beta0, g.se_beta1,
                p.mode, _significant(p, alpha), desc, "ok",
            )
        )
        psi_rows.extend(_psi_rows(counts, avg))
    return rows, psi_rows, failed


def _status(exc) -> str:
    return "insufficient_data" if isinstance(exc, scaling_fit.InsufficientDataError) else "fit_failed"


def _observed_bp(counts):
    # plain bootstrap probability at the scale closest to 1
    i = int(np.argmin(np.abs(np.log(counts.scales))))
    return counts.hits[i] / counts.replicates[i]


PSI_HEADER = ("item", "sigma_sq", "psi", "se", "degenerate", "fitted_psi")


def _psi_rows(counts, avg):
    out = []
    for r in scaling_fit.psi_diagnostics(counts, avg):
        fitted = None
        if avg is not None:
            fitted = sum(w * r[f"fit_{f.model_id}"] for f, w in zip(avg.fits, avg.weights))
        out.append((counts.item_id, r["sigma_sq"], r["psi"], r["se"], r["degenerate"], fitted))
    return out


def _counts_text(items) -> str:
    buf = io.StringIO()
    scaling_fit.write_counts_tsv(items, buf)
    return buf.getvalue()


# -- commands -----------------------------------------------------------------

def _load_inputs(cfg: RunConfig):
    with _open_input(cfg.input, "input matrix") as fh:
        xi = rell.load_matrix(fh, cfg.format)
    trees = None
    if cfg.topologies is not None:
        with _open_input(cfg.topologies, "topology file") as fh:
            trees = phylo.read_topologies(fh, outgroup=cfg.outgroup)
        if len(trees) != xi.K:
            raise ConfigError(f"{len(trees)} topologies for {xi.K} matrix columns")
    return xi, trees


def _bootstrap(cfg: RunConfig):
    xi, trees = _load_inputs(cfg)
    grouping, edge_rows = None, []
    if trees is not None and cfg.edges:
        edge_rows = phylo.edge_table(trees)
        grouping = {eid: members for eid, _, members in edge_rows}
    log.info("bootstrap: n=%d K=%d B=%d scales=%d", xi.n, xi.K, cfg.B, len(cfg.scales))
    raw = rell.bootstrap_hits(xi, cfg.scales, cfg.B, cfg.seed, cfg.workers)
    items = rell.counts_from_hits(raw, xi.tree_labels, grouping)
    kinds = ["tree"] * xi.K + ["edge"] * len(edge_rows)
    files = {"counts.tsv": _counts_text(items)}
    if edge_rows:
        buf = io.StringIO()
        phylo.write_edge_table(edge_rows, buf)
        files["edges.tsv"] = buf.getvalue()
    if trees is not None:
        files["trees.tsv"] = _tsv(("tree", "topology"), [(l, t.text) for l, t in zip(xi.tree_labels, trees)])
    return items, kinds, files, raw


def cmd_bootstrap(cfg: RunConfig) -> int:
    _, _, files, raw = _bootstrap(cfg)
    if raw.tie_rate > 0:
        log.warning("%.3g%% of replicates had a tied maximum (lowest index wins)", 100 * raw.tie_rate)
    _write_outputs(cfg.out, files)
    return 0


def _finish_pvalues(cfg, items, kinds, files) -> int:
    rows, psi_rows, failed = analyse_counts(items, kinds, cfg.models, cfg.alpha)
    if items and failed == len(items):
        raise FitError(f"no item could be fitted ({failed} failures)")
    files["pvalues.tsv"] = _tsv(PVALUE_HEADER, rows)
    files["psi.tsv"] = _tsv(PSI_HEADER, psi_rows)
    _write_outputs(cfg.out, files)
    return 0


def cmd_pvalues(cfg: RunConfig) -> int:
    items, kinds, files, _ = _bootstrap(cfg)
    return _finish_pvalues(cfg, items, kinds, files)


def cmd_fit(cfg: RunConfig) -> int:
    with _open_input(cfg.input, "counts file") as fh:
        items = scaling_fit.read_counts_tsv(fh)
    if not items:
        raise ConfigError(f"{cfg.input} holds no counts")
    kinds = ["edge" if c.item_id.startswith("E") else "tree" if c.item_id.startswith("T") else "item" for c in items]
    return _finish_pvalues(cfg, items, kinds, {})


def shortcut_report(bp: float, au: float) -> list[tuple[str, float]]:
    g = geometry_from_bp_au(bp, au)
    si_region, si_complement = si_from_bp_au(bp, au)
    return [
        ("beta0", g.beta0),
        ("beta1", g.beta1),
        ("si_outside", si_region),
        ("si_inside", si_complement),
        ("si_prime", si_prime(g)),
        ("mode", g.mode),
    ]


def cmd_shortcut(bp: float, au: float, stream=None) -> int:
    stream = stream or sys.stdout
    for k, v in shortcut_report(bp, au):
        stream.write(f"{k}\t{_fmt(v)}\n")
    return 0


def cmd_counts(n_taxa: int, target: str, mode: str, stream=None) -> int:
    stream = stream or sys.stdout
    k_all, k_select, k_true = phylo.region_counts(n_taxa, target, mode)
    stream.write("K_select\tK_true\tK_all\n")
    stream.write(f"{k_select}\t{k_true}\t{k_all}\n")
    return 0


# -- simulate -----------------------------------------------------------------

@dataclass(frozen=True)
class SimulationConfig:
    region: simulator.RegionSpec
    mu: tuple
    pipeline: simulator.PipelineConfig
    trials: int = 1000
    alpha: float = 0.05
    modes: tuple = ("au_unconditional", "si_conditional")
    distances: tuple = (-2.0, -1.0, 0.0, 1.0, 2.0)


_SIM_KEYS = {
    "kind", "dim", "offset", "center", "radius", "normals", "offsets", "complement",
    "mu", "scales", "nb", "b", "trials", "alpha", "seed", "models", "modes", "distances",
}


def _floats(text, key):
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {text!r}") from None


def parse_simulation_config(text: str) -> SimulationConfig:
    """``key = value`` lines; ``#`` starts a comment.

    Keys: kind, dim, offset, center, radius, normals (vectors separated by
    ``;``), offsets, complement, mu, scales, nb, trials, alpha, seed,
    models, modes, distances.
    """
    kv = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lower()
        if key not in _SIM_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        kv[key] = value
    if "kind" not in kv:
        raise ConfigError("simulation config needs 'kind'")
    try:
        dim = int(kv.get("dim", "2"))
        region_kw = dict(kind=kv["kind"], dim=dim)
        if "offset" in kv:
            region_kw["offset"] = float(kv["offset"])
        if "center" in kv:
            region_kw["center"] = _floats(kv["center"], "center")
        if "radius" in kv:
            region_kw["radius"] = float(kv["radius"])
        if "normals" in kv:
            region_kw["normals"] = tuple(_floats(v, "normals") for v in kv["normals"].split(";"))
        if "offsets" in kv:
            region_kw["offsets"] = _floats(kv["offsets"], "offsets")
        region_kw["complement"] = kv.get("complement", "false").lower() in ("1", "true", "yes")
        region = simulator.RegionSpec(**region_kw)
        mu = _floats(kv["mu"], "mu") if "mu" in kv else tuple(simulator.boundary_point(region))
        pipeline = simulator.PipelineConfig(
            scales=_scales(kv.get("scales", "wide13")),
            B=int(kv.get("nb", kv.get("b", CLI_DEFAULT_B))),
            models=_models(kv.get("models", ",".join(scaling_fit.DEFAULT_MODELS))),
            seed=int(kv.get("seed", "0")),
        )
        cfg = SimulationConfig(
            region=region,
            mu=mu,
            pipeline=pipeline,
            trials=int(kv.get("trials", "1000")),
            alpha=float(kv.get("alpha", "0.05")),
            modes=_models(kv.get("modes", "au_unconditional,si_conditional")),
            distances=_floats(kv.get("distances", "-2 -1 0 1 2"), "distances"),
        )
    except (DomainError, ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid simulation config: {exc}") from None
    if cfg.pipeline.B < 100 or cfg.trials < 1 or not 0 < cfg.alpha <= 0.5:
        raise ConfigError("need nb >= 100, trials >= 1 and alpha in (0, 0.5]")
    bad = [m for m in cfg.modes if m not in ("au_unconditional", "si_conditional")]
    if bad:
        raise ConfigError(f"unknown modes {bad}")
    return cfg


REPORT_HEADER = ("mode", "trials", "rejections", "rate", "binomial_se", "target_alpha", "failures")
GEOMETRY_HEADER = ("distance", "beta0_true", "beta1_true", "beta0_fit", "beta1_fit", "se_beta0", "se_beta1")


def run_simulation(cfg: SimulationConfig) -> dict:
    records = simulator.run_trials(cfg.region, np.asarray(cfg.mu), cfg.trials, cfg.pipeline)
    reports = [records.report(m, cfg.alpha) for m in cfg.modes]
    report_rows = [
        (r.mode, r.trials, r.rejections, r.rate, r.binomial_se, r.target_alpha, r.failures) for r in reports
    ]
    geom_rows = []
    if cfg.region.kind != "cone":
        for dist in cfg.distances:
            y = simulator.point_at_distance(cfg.region, dist)
            truth = simulator.analytic_geometry(cfg.region, y)
            g, _, _ = simulator.fitted_geometry(cfg.region, y, cfg.pipeline)
            geom_rows.append((dist, truth.beta0, truth.beta1, g.beta0, g.beta1, g.se_beta0, g.se_beta1))
    return {"report.tsv": _tsv(REPORT_HEADER, report_rows), "geometry.tsv": _tsv(GEOMETRY_HEADER, geom_rows)}


def cmd_simulate(config_path: Path, out: Path) -> int:
    with _open_input(config_path, "simulation config") as fh:
        text = fh.read().decode()
    cfg = parse_simulation_config(text)
    _write_outputs(out, run_simulation(cfg))
    return 0


# -- modelmap -----------------------------------------------------------------

def cmd_modelmap(cfg: RunConfig, rank: int, dims: int, biplot_alpha: float, project: bool,
                 star_column: Optional[int] = None) -> int:
    xi, _ = _load_inputs(cfg)
    center = "mean"
    if star_column is not None:
        if not 1 <= star_column <= xi.K:
            raise ConfigError(f"--star-column must lie in 1..{xi.K}")
        center = xi.xi[:, star_column - 1]
        keep = [i for i in range(xi.K) if i != star_column - 1]
        xi = rell.SitewiseLogLik(xi.xi[:, keep], tuple(xi.tree_labels[i] for i in keep))
    result = modelmap.map_coordinates(
        xi, rank=min(rank, xi.K), dims=dims, project_out_full=project, alpha=biplot_alpha, center=center
    )
    sites, trees = io.StringIO(), io.StringIO()
    modelmap.write_sites_csv(result, sites)
    modelmap.write_trees_csv(result, trees)
    _write_outputs(
        cfg.out,
        {"sites.csv": sites.getvalue(), "trees.csv": trees.getvalue(), "map.svg": modelmap.render_svg(result)},
    )
    return 0


# -- argument parsing ---------------------------------------------------------

def _common(p, matrix=True):
    if matrix:
        p.add_argument("input", help="site-wise log-likelihood matrix")
        p.add_argument("--format", choices=("plain", "consel_mt"), default="plain")
        p.add_argument("--topologies", help="one topology per line, in matrix column order")
        p.add_argument("--outgroup", type=int, help="taxon used to orient edges (default: last)")
    p.add_argument("--out", default=".", help="output directory")


def _boot_flags(p):
    p.add_argument("--scales", default="wide13", help="wide13, narrow10 or comma-separated sigma^2 values")
    p.add_argument("--nb", type=int, default=CLI_DEFAULT_B, help="replicates per scale")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)


def _fit_flags(p):
    p.add_argument("--models", default=",".join(scaling_fit.DEFAULT_MODELS))
    p.add_argument("--alpha", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selboot", description="Multiscale bootstrap p-values (BP, AU, SI).")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pvalues", help="bootstrap, fit and p-values for trees and edges")
    _common(p)
    _boot_flags(p)
    _fit_flags(p)
    p.add_argument("--no-edges", action="store_true", help="skip edges even with --topologies")

    p = sub.add_parser("bootstrap", help="multiscale RELL counts only")
    _common(p)
    _boot_flags(p)
    p.add_argument("--no-edges", action="store_true")

    p = sub.add_parser("fit", help="fit stored counts")
    p.add_argument("input", help="counts TSV written by 'bootstrap' or 'pvalues'")
    _common(p, matrix=False)
    _fit_flags(p)

    p = sub.add_parser("shortcut", help="geometry and SI from a (BP, AU) pair")
    p.add_argument("bp", type=float)
    p.add_argument("au", type=float)

    p = sub.add_parser("simulate", help="type-I error experiment from a key = value config")
    p.add_argument("config")
    _common(p, matrix=False)

    p = sub.add_parser("counts", help="number of regions for trees or edges")
    p.add_argument("n_taxa", type=int)
    p.add_argument("target", choices=("tree", "edge"))
    p.add_argument("mode", choices=("inside", "outside"))

    p = sub.add_parser("modelmap", help="biplot coordinates and an SVG")
    _common(p)
    p.add_argument("--rank", type=int, default=modelmap.DEFAULT_RANK)
    p.add_argument("--dims", type=int, choices=(2, 3), default=2)
    p.add_argument("--biplot-alpha", type=float, default=0.0)
    p.add_argument("--no-project", action="store_true", help="keep the full-model direction")
    p.add_argument("--star-column", type=int, help="1-based column used as the centre and dropped")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s"
    )
    try:
        if args.command == "shortcut":
            return cmd_shortcut(args.bp, args.au)
        if args.command == "counts":
            return cmd_counts(args.n_taxa, args.target, args.mode)
        if args.command == "simulate":
            return cmd_simulate(Path(args.config), Path(args.out))
        cfg = _config_from_args(args)
        if args.command == "pvalues":
            return cmd_pvalues(cfg)
        if args.command == "bootstrap":
            return cmd_bootstrap(cfg)
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "modelmap":
            return cmd_modelmap(
                cfg, args.rank, args.dims, args.biplot_alpha, not args.no_project, args.star_column
            )
    except SelbootError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputOutputError.exit_code
    return 1


if __name__ == "__main__":
    sys.exit(main())
