import csv
import math

import numpy as np
import pytest

from selboot.cli import RunConfig, main, parse_simulation_config
from selboot.errors import EXIT_CODES, ConfigError
from selboot.phylo import enumerate_topologies


def write_matrix(path, xi):
    with open(path, "w") as fh:
        fh.write(f"{xi.shape[0]} {xi.shape[1]}\n")
        for row in xi:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


@pytest.fixture
def two_tree_matrix(tmp_path):
    # tree 1 beats tree 2 by three standard deviations of the total difference
    rng = np.random.default_rng(0)
    n = 200
    base = rng.normal(-3, 0.5, size=n)
    noise = rng.normal(size=n)
    diff = (noise - noise.mean()) / noise.std() + 3 / np.sqrt(n)
    xi = np.column_stack([base + diff / 2, base - diff / 2])
    path = tmp_path / "two.txt"
    write_matrix(path, xi)
    return path


@pytest.fixture
def five_taxon_inputs(tmp_path):
    rng = np.random.default_rng(1)
    n, k = 150, 15
    xi = rng.normal(-3, 1, size=(n, 1)) + rng.normal(0, 0.3, size=(n, k))
    xi[:, 0] += 0.01
    m = tmp_path / "m.txt"
    write_matrix(m, xi)
    t = tmp_path / "t.txt"
    t.write_text("\n".join(x.text for x in enumerate_topologies(5)) + "\n")
    return m, t


def read_tsv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_shortcut_published_pairs(capsys):
    code, out = run(capsys, "shortcut", 0.930, 0.956)
    assert code == 0
    values = dict(line.split("\t") for line in out.out.splitlines())
    assert float(values["beta0"]) == pytest.approx(-1.59, abs=0.01)
    assert float(values["beta1"]) == pytest.approx(0.12, abs=0.01)
    assert float(values["si_prime"]) == pytest.approx(0.903, abs=0.01)
    assert values["mode"] == "inside"
    _, out = run(capsys, "shortcut", 0.015, 0.100)
    values = dict(line.split("\t") for line in out.out.splitlines())
    assert float(values["si_outside"]) == pytest.approx(0.150, abs=0.005)


def test_shortcut_boundary(capsys):
    _, out = run(capsys, "shortcut", 0.5, 0.5)
    values = dict(line.split("\t") for line in out.out.splitlines())
    assert (values["beta0"], values["beta1"]) == ("0", "0")
    assert (values["si_outside"], values["si_inside"]) == ("1", "1")


def test_shortcut_domain_error(capsys):
    code, out = run(capsys, "shortcut", 0.0, 0.3)
    assert code == EXIT_CODES["numeric"]
    assert "error" in out.err


@pytest.mark.parametrize(
    "args, triple",
    [
        ((6, "tree", "inside"), ("1", "104", "105")),
        ((6, "edge", "inside"), ("3", "22", "25")),
        ((6, "tree", "outside"), ("104", "1", "105")),
        ((6, "edge", "outside"), ("22", "3", "25")),
        ((4, "edge", "outside"), ("2", "1", "3")),
    ],
)
def test_counts(capsys, args, triple):
    code, out = run(capsys, "counts", *args)
    assert code == 0
    header, values = out.out.splitlines()
    assert header == "K_select\tK_true\tK_all"
    assert tuple(values.split("\t")) == triple


def test_two_tree_pvalues(tmp_path, two_tree_matrix, capsys):
    out = tmp_path / "res"
    code, _ = run(capsys, "pvalues", two_tree_matrix, "--nb", 2000, "--out", out)
    assert code == 0
    rows = {r["item"]: r for r in read_tsv(out / "pvalues.tsv")}
    assert float(rows["T1"]["bp"]) > 0.99
    assert float(rows["T2"]["bp"]) < 0.01
    for r in rows.values():
        assert math.isfinite(float(r["si"]))
        assert r["status"] == "ok"
    psi = read_tsv(out / "psi.tsv")
    assert {r["item"] for r in psi} == {"T1", "T2"}
    assert (out / "counts.tsv").exists()


def test_missing_input_leaves_no_outputs(tmp_path, capsys):
    out = tmp_path / "never"
    code, res = run(capsys, "pvalues", tmp_path / "missing.txt", "--out", out)
    assert code == EXIT_CODES["io"]
    assert not out.exists()
    assert "not found" in res.err


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("2 2\n-1 -2\n-3\n")
    out = tmp_path / "o"
    code, res = run(capsys, "pvalues", bad, "--out", out)
    assert code == EXIT_CODES["parse"]
    assert "line 3" in res.err
    assert not out.exists()


@pytest.mark.parametrize("flags", [["--nb", "50"], ["--alpha", "0.7"], ["--scales", "wide99"], ["--models", "poly_9"]])
def test_config_errors(two_tree_matrix, tmp_path, capsys, flags):
    code, _ = run(capsys, "pvalues", two_tree_matrix, "--out", tmp_path / "o", *flags)
    assert code == EXIT_CODES["config"]


def test_run_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(B=99)
    with pytest.raises(ConfigError):
        RunConfig(alpha=0.0)
    with pytest.raises(ConfigError):
        RunConfig(scales=())
    assert RunConfig(alpha=0.5).alpha == 0.5


def test_deterministic_outputs_with_edges(tmp_path, five_taxon_inputs, capsys):
    m, t = five_taxon_inputs
    outs = []
    for k, workers in enumerate((1, 3)):
        out = tmp_path / f"run{k}"
        code, _ = run(capsys, "pvalues", m, "--topologies", t, "--nb", 500, "--seed", 3, "--workers", workers, "--out", out)
        assert code == 0
        outs.append(out)
    for name in ("pvalues.tsv", "psi.tsv", "counts.tsv", "edges.tsv", "trees.tsv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    rows = read_tsv(outs[0] / "pvalues.tsv")
    kinds = [r["kind"] for r in rows]
    assert kinds.count("tree") == 15 and kinds.count("edge") == 10


def test_bootstrap_then_fit_matches_pvalues(tmp_path, five_taxon_inputs, capsys):
    m, t = five_taxon_inputs
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run(capsys, "pvalues", m, "--topologies", t, "--nb", 500, "--out", a)[0] == 0
    assert run(capsys, "bootstrap", m, "--topologies", t, "--nb", 500, "--out", b)[0] == 0
    assert (a / "counts.tsv").read_bytes() == (b / "counts.tsv").read_bytes()
    assert run(capsys, "fit", b / "counts.tsv", "--out", c)[0] == 0
    assert (a / "pvalues.tsv").read_bytes() == (c / "pvalues.tsv").read_bytes()


def test_significance_flags(tmp_path, two_tree_matrix, capsys):
    out = tmp_path / "o"
    run(capsys, "pvalues", two_tree_matrix, "--nb", 2000, "--out", out, "--alpha", 0.05)
    rows = {r["item"]: r for r in read_tsv(out / "pvalues.tsv")}
    assert rows["T2"]["mode"] == "outside" and "bp" in rows["T2"]["significant"]
    assert rows["T1"]["mode"] == "inside" and "bp" in rows["T1"]["significant"]


def test_fit_error_when_nothing_fits(tmp_path, capsys):
    counts = tmp_path / "c.tsv"
    counts.write_text("T1\t0.5\t100\t0\t1.0\t100\t0\t2.0\t100\t0\n")
    code, _ = run(capsys, "fit", counts, "--out", tmp_path / "o")
    assert code == EXIT_CODES["fit"]
    assert not (tmp_path / "o").exists()


def test_simulate(tmp_path, capsys):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text("# flat boundary\nkind = half_space\ndim = 2\ntrials = 30\nnb = 1000\nseed = 4\ndistances = 1\n")
    code, _ = run(capsys, "simulate", cfg, "--out", tmp_path / "o")
    assert code == 0
    report = read_tsv(tmp_path / "o" / "report.tsv")
    assert [r["mode"] for r in report] == ["au_unconditional", "si_conditional"]
    assert int(report[0]["trials"]) == 30
    geom = read_tsv(tmp_path / "o" / "geometry.tsv")
    assert float(geom[0]["beta0_true"]) == 1.0


@pytest.mark.parametrize(
    "text",
    ["kind = ball\nradius = -1\n", "kind = half_space\nbogus = 1\n", "dim = 2\n", "kind = half_space\nnb = 10\n"],
)
def test_simulate_config_errors(tmp_path, capsys, text):
    with pytest.raises(ConfigError):
        parse_simulation_config(text)
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    code, _ = run(capsys, "simulate", cfg, "--out", tmp_path / "o")
    assert code == EXIT_CODES["config"]


def test_modelmap(tmp_path, five_taxon_inputs, capsys):
    m, _ = five_taxon_inputs
    out = tmp_path / "map"
    code, _ = run(capsys, "modelmap", m, "--dims", 3, "--out", out)
    assert code == 0
    trees = read_tsv_csv(out / "trees.csv")
    assert list(trees[0]) == ["tree", "x", "y", "z"]
    assert trees[-1]["tree"] == "full_model"
    assert len(read_tsv_csv(out / "sites.csv")) == 150
    assert (out / "map.svg").read_text().startswith("<svg")


def test_modelmap_star_column(tmp_path, five_taxon_inputs, capsys):
    m, _ = five_taxon_inputs
    out = tmp_path / "map"
    assert run(capsys, "modelmap", m, "--star-column", 15, "--out", out)[0] == 0
    assert len(read_tsv_csv(out / "trees.csv")) == 14 + 1
    assert run(capsys, "modelmap", m, "--star-column", 16, "--out", out)[0] == EXIT_CODES["config"]


def read_tsv_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))
