import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selboot.errors import DomainError, FitError, InsufficientDataError, ParseError
from selboot.normal_theory import upper_tail
from selboot.scaling_fit import (
    NARROW10,
    WIDE13,
    MultiscaleCounts,
    fit_counts,
    fit_model,
    geometry_at_unit_scale,
    model_psi,
    psi_diagnostics,
    psi_observed,
    read_counts_tsv,
    scale_grid,
    select_and_average,
    write_counts_tsv,
)


def expected_counts(beta0, beta1, scales=WIDE13, B=10**6, item="x"):
    """Rounded expected hits under psi(s) = beta0 + beta1 * s (no sampling noise)."""
    hits = [round(B * upper_tail((beta0 + beta1 * s) / math.sqrt(s))) for s in scales]
    return MultiscaleCounts(item, scales, (B,) * len(scales), hits)


def sampled_counts(psi, scales=WIDE13, B=10**5, seed=0):
    rng = np.random.default_rng(seed)
    s = np.asarray(scales)
    p = upper_tail(psi(s) / np.sqrt(s))
    return MultiscaleCounts("x", scales, (B,) * len(s), rng.binomial(B, p))


def test_scale_grids():
    assert len(WIDE13) == 13
    assert WIDE13[0] == pytest.approx(1 / 9) and WIDE13[-1] == pytest.approx(9)
    assert WIDE13[6] == pytest.approx(1.0)
    # log-spaced
    assert np.allclose(np.diff(np.log(WIDE13)), math.log(81) / 12)
    assert len(NARROW10) == 10
    assert NARROW10[0] == pytest.approx(1 / 1.4) and NARROW10[-1] == pytest.approx(2.0)
    assert scale_grid("0.5, 1, 2") == (0.5, 1.0, 2.0)
    with pytest.raises(DomainError):
        scale_grid("wide99")
    with pytest.raises(DomainError):
        scale_grid([1.0, -2.0])


def test_counts_validation():
    with pytest.raises(DomainError):
        MultiscaleCounts("x", (1.0, 0.5), (10, 10), (1, 1))
    with pytest.raises(DomainError):
        MultiscaleCounts("x", (0.5, 1.0), (10, 10), (1, 11))
    c = MultiscaleCounts("x", (0.5, 1.0), (10, 10), (0, 4))
    assert list(c.degenerate()) == [True, False]


def test_psi_observed_exact_line():
    c = expected_counts(0.5, 0.2)
    for s, psi, se in psi_observed(c):
        assert psi == pytest.approx(0.5 + 0.2 * s, abs=3e-3)
        assert se > 0


def test_psi_observed_needs_two_rows():
    c = MultiscaleCounts("x", (0.5, 1.0, 2.0), (10, 10, 10), (0, 0, 3))
    with pytest.raises(InsufficientDataError):
        psi_observed(c)
    assert len(psi_observed(c, include_degenerate=True)) == 3


@pytest.mark.parametrize("beta0, beta1", [(0.5, 0.2), (-1.0, 0.3), (2.0, -0.1), (0.0, 0.0)])
def test_recovers_linear_psi(beta0, beta1):
    c = expected_counts(beta0, beta1)
    fit = fit_model(c, "poly_2")
    assert fit.coefficients == pytest.approx([beta0, beta1], abs=2e-3)
    g = geometry_at_unit_scale(select_and_average([fit]))
    assert g.beta0 == pytest.approx(beta0, abs=2e-3)
    assert g.beta1 == pytest.approx(beta1, abs=2e-3)


def test_recovers_quadratic_psi():
    s = np.asarray(WIDE13)
    psi = 0.4 + 0.3 * s - 0.02 * s**2
    hits = np.round(10**7 * upper_tail(psi / np.sqrt(s)))
    c = MultiscaleCounts("q", WIDE13, (10**7,) * len(s), hits)
    fit = fit_model(c, "poly_3")
    assert fit.coefficients == pytest.approx([0.4, 0.3, -0.02], abs=1e-3)
    g = geometry_at_unit_scale(select_and_average([fit]))
    # tangent at s = 1: slope 0.3 - 0.04, intercept psi(1) - slope
    assert g.beta1 == pytest.approx(0.26, abs=2e-3)
    assert g.beta0 == pytest.approx(0.68 - 0.26, abs=2e-3)


def test_sing_3_tangent():
    # psi = b0 + b1 s / (1 + b2 (sigma - 1)); slope at s = 1 is b1 (1 - b2 / 2)
    b0, b1, b2 = 0.8, 0.5, 0.4
    s = np.asarray(WIDE13)
    psi = b0 + b1 * s / (1 + b2 * (np.sqrt(s) - 1))
    hits = np.round(10**7 * upper_tail(psi / np.sqrt(s)))
    c = MultiscaleCounts("s", WIDE13, (10**7,) * 13, hits)
    fit = fit_model(c, "sing_3")
    assert fit.coefficients == pytest.approx([b0, b1, b2], abs=5e-3)
    g = geometry_at_unit_scale(select_and_average([fit]))
    assert g.beta1 == pytest.approx(b1 * (1 - b2 / 2), abs=3e-3)
    assert g.beta0 == pytest.approx(b0 + b1 - b1 * (1 - b2 / 2), abs=3e-3)


def test_model_psi_domain():
    c = expected_counts(0.3, 0.1)
    poly = fit_model(c, "poly_2")
    assert model_psi(poly, -1.0) == pytest.approx(0.3 - 0.1, abs=3e-3)
    sing = fit_model(c, "sing_3")
    with pytest.raises(DomainError):
        model_psi(sing, 0.0)


def test_fit_standard_errors_are_calibrated():
    # across independent data sets the spread of beta1 should match the reported SE
    estimates, ses = [], []
    for seed in range(40):
        c = sampled_counts(lambda s: 0.5 + 0.2 * s, B=10**4, seed=seed)
        g = geometry_at_unit_scale(select_and_average([fit_model(c, "poly_2")]))
        estimates.append(g.beta1)
        ses.append(g.se_beta1)
    ratio = np.std(estimates, ddof=1) / np.mean(ses)
    assert 0.7 < ratio < 1.4


def test_akaike_weights():
    c = sampled_counts(lambda s: 0.5 + 0.2 * s, seed=3)
    avg, failures = fit_counts(c)
    assert not failures
    assert sum(avg.weights) == pytest.approx(1.0)
    assert all(w >= 1e-6 for w in avg.weights)
    aic = {f.model_id: f.aic for f in avg.fits}
    best = min(aic, key=aic.get)
    assert dict(zip([f.model_id for f in avg.fits], avg.weights))[best] == max(avg.weights)


def test_insufficient_data():
    c = MultiscaleCounts("x", WIDE13, (100,) * 13, (0,) * 12 + (3,))
    with pytest.raises(InsufficientDataError) as info:
        fit_model(c, "poly_2")
    assert info.value.diagnostics["item"] == "x"
    with pytest.raises(FitError):
        fit_counts(c)


def test_degenerate_scales_kept_in_likelihood():
    # hits = 0 at the smallest scales still constrain the fit
    c = sampled_counts(lambda s: 2.5 + 0.3 * s, B=2000, seed=1)
    assert c.degenerate().any()
    fit = fit_model(c, "poly_2")
    assert fit.degenerate_scales_excluded
    assert fit.coefficients[0] == pytest.approx(2.5, abs=0.3)


def test_psi_diagnostics_rows():
    c = sampled_counts(lambda s: 0.5 + 0.2 * s, seed=2)
    avg, _ = fit_counts(c)
    rows = psi_diagnostics(c, avg)
    assert len(rows) == 13
    assert all(f"fit_{f.model_id}" in rows[0] for f in avg.fits)


def test_counts_tsv_round_trip():
    items = [expected_counts(0.5, 0.2, item="T1"), expected_counts(-0.3, 0.1, item="E1")]
    buf = io.StringIO()
    write_counts_tsv(items, buf)
    back = read_counts_tsv(io.StringIO(buf.getvalue()))
    assert back == items


def test_counts_tsv_errors():
    with pytest.raises(ParseError) as info:
        read_counts_tsv(io.StringIO("# item\t1\nT1\t1.0\t10\n"))
    assert info.value.line == 2
    with pytest.raises(ParseError):
        read_counts_tsv(io.StringIO("T1\t1.0\t10\tx\t2.0\t10\t3\n"))


@given(st.floats(-1.5, 1.5), st.floats(-0.4, 0.4))
@settings(max_examples=25, deadline=None)
def test_expected_counts_recover_geometry(beta0, beta1):
    c = expected_counts(beta0, beta1)
    avg, _ = fit_counts(c, ("poly_2", "poly_3"))
    g = geometry_at_unit_scale(avg)
    assert g.beta0 == pytest.approx(beta0, abs=5e-3)
    assert g.beta1 == pytest.approx(beta1, abs=5e-3)
