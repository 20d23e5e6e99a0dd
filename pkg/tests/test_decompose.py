"""Net-total decomposition: heuristic split, mixed-effects rates, prediction."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flowdiff.decompose import (
    DECOMP_HEADER,
    FlowDecomposition,
    FlowEntry,
    MixedEffectsFit,
    apply_outlier_policy,
    decompose_panel,
    fit_mixed_effects,
    heuristic_decompose,
    load_decomposition,
    load_fit,
    load_rate_panel,
    predict_A,
    save_decomposition,
    save_fit,
    save_rate_panel,
)
from flowdiff.errors import (
    DegenerateFitError,
    InfeasibleSplitError,
    InvalidParameterError,
    PanelParseError,
    UnknownLocationError,
)

from synth import make_rate_panel


def test_heuristic_zero_net_splits_evenly():
    e = heuristic_decompose(0.0, 1000.0, m=0.7)
    assert e.A == 700.0 and e.B == 700.0
    assert e.method == "heuristic"


def test_heuristic_oracle():
    e = heuristic_decompose(1000.0, 10000.0, m=0.7)
    assert e.A == 7500.0
    assert e.B == 6500.0


def test_heuristic_infeasible_large_outflow():
    with pytest.raises(InfeasibleSplitError, match="increase m"):
        heuristic_decompose(-20000.0, 10000.0, m=0.7)


@pytest.mark.parametrize("P, m", [(0.0, 0.7), (-5.0, 0.7), (100.0, 0.0),
                                  (100.0, -0.1)])
def test_heuristic_rejects_bad_inputs(P, m):
    with pytest.raises(InvalidParameterError):
        heuristic_decompose(10.0, P, m=m)


@given(
    G=st.floats(min_value=-1e5, max_value=1e5, allow_nan=False),
    P=st.floats(min_value=1e3, max_value=1e7),
    m=st.floats(min_value=0.05, max_value=2.0),
)
def test_heuristic_identity_and_antisymmetry(G, P, m):
    if abs(G) > 2 * P * m:
        return  # infeasible region covered elsewhere
    e = heuristic_decompose(G, P, m=m)
    assert e.A >= 0 and e.B >= 0
    assert abs((e.A - e.B) - G) <= 1e-9 * max(1.0, e.A, e.B)
    flipped = heuristic_decompose(-G, P, m=m)
    assert flipped.A == pytest.approx(e.B, rel=1e-12, abs=1e-9)
    assert flipped.B == pytest.approx(e.A, rel=1e-12, abs=1e-9)


def test_flow_entry_validation():
    with pytest.raises(InfeasibleSplitError):
        FlowEntry(10.0, -1.0, -11.0, "heuristic")
    with pytest.raises(InvalidParameterError):
        FlowEntry(10.0, 20.0, 5.0, "heuristic")


def test_decompose_panel_matches_scalar_rule():
    G = np.array([[100.0, -40.0], [0.0, 10.0]])
    P = np.array([[1000.0, 1000.0], [500.0, 500.0]])
    d = decompose_panel(G, P, ("a", "b"), ("p0", "p1"), m=0.7)
    for i, loc in enumerate(("a", "b")):
        for t, per in enumerate(("p0", "p1")):
            e = heuristic_decompose(G[i, t], P[i, t], m=0.7)
            got = d.entry(loc, per)
            assert got.A == e.A and got.B == e.B and got.G == e.G


def test_decompose_panel_names_offending_cell():
    G = np.array([[10.0, -9000.0]])
    P = np.array([[1000.0, 1000.0]])
    with pytest.raises(InfeasibleSplitError) as err:
        decompose_panel(G, P, ("only",), ("p0", "p1"), m=0.7)
    assert "'only'" in str(err.value) and "'p1'" in str(err.value)


def test_flow_decomposition_validation():
    G = np.array([[5.0]])
    with pytest.raises(InvalidParameterError):
        FlowDecomposition(("a",), ("p",), G, np.array([[10.0]]),
                          np.array([[4.0]]), "heuristic")
    with pytest.raises(InfeasibleSplitError):
        FlowDecomposition(("a",), ("p",), G, np.array([[-1.0]]),
                          np.array([[-6.0]]), "heuristic")


# --- mixed-effects fit -----------------------------------------------------


def test_fit_recovers_generating_coefficients():
    data, truth = make_rate_panel(11)
    fit = fit_mixed_effects(data)
    assert abs(fit.beta1 - truth["beta1"]) <= 0.05
    assert abs(fit.beta0 - truth["beta0"]) <= 0.01
    assert fit.var_between >= 0 and fit.var_within > 0


def test_fit_no_between_variance_shrinks_fully():
    data, truth = make_rate_panel(5, sd_between=0.0, n_loc=25, n_per=4)
    fit = fit_mixed_effects(data)
    # with no real between-location spread, intercepts collapse to beta0
    for b in fit.intercepts.values():
        assert abs(b - fit.beta0) <= 5e-3
    assert fit.var_between <= 1e-5


def test_fit_degenerate_inputs():
    data, _ = make_rate_panel(3, n_loc=1)
    with pytest.raises(DegenerateFitError, match="2 locations"):
        fit_mixed_effects(data)

    single, _ = make_rate_panel(3, n_loc=6, n_per=1)
    with pytest.raises(DegenerateFitError, match="repeated"):
        fit_mixed_effects(single)

    flat, _ = make_rate_panel(3, n_loc=6, n_per=3)
    flat = type(flat)(flat.locations, flat.periods, flat.imr,
                      np.zeros_like(flat.nmr))
    with pytest.raises(DegenerateFitError, match="slope"):
        fit_mixed_effects(flat)


def test_fit_matches_statsmodels_ml():
    sm = pytest.importorskip("statsmodels.api")
    data, _ = make_rate_panel(17, n_loc=30, n_per=4)
    fit = fit_mixed_effects(data)

    groups = np.asarray(data.locations)
    exog = np.column_stack([np.ones(len(data.imr)), data.nmr])
    model = sm.MixedLM(np.asarray(data.imr), exog, groups=groups)
    ref = model.fit(reml=False, method="lbfgs")

    assert fit.beta0 == pytest.approx(ref.params[0], abs=2e-5)
    assert fit.beta1 == pytest.approx(ref.params[1], abs=2e-4)
    assert fit.var_within == pytest.approx(float(ref.scale), rel=1e-3)
    assert fit.var_between == pytest.approx(
        float(np.asarray(ref.cov_re)[0, 0]), rel=1e-2, abs=1e-7)


def test_outlier_policy():
    data, _ = make_rate_panel(11)
    fit = fit_mixed_effects(data)
    loc = max(fit.intercepts, key=lambda k: abs(fit.intercepts[k] - fit.beta0))

    same = apply_outlier_policy(fit, [])
    assert same.intercepts == fit.intercepts

    cleaned = apply_outlier_policy(fit, [loc])
    assert cleaned.intercepts[loc] == fit.beta0
    for other, b in fit.intercepts.items():
        if other != loc:
            assert cleaned.intercepts[other] == b

    everyone = apply_outlier_policy(fit, list(fit.intercepts))
    assert all(b == fit.beta0 for b in everyone.intercepts.values())

    with pytest.raises(UnknownLocationError, match="nowhere"):
        apply_outlier_policy(fit, ["nowhere"])


def test_intercept_for_unknown_location_uses_global():
    fit = MixedEffectsFit(0.07, 0.5, {"a": 0.08}, 1e-4, 1e-4, 0.02)
    assert fit.intercept_for("a") == 0.08
    assert fit.intercept_for("unseen") == 0.07
    assert fit.intercept_for(None) == 0.07


def test_predict_A_baseline_and_floor():
    fit = MixedEffectsFit(0.07, 0.52, {}, 0.0, 1e-4, 0.02)
    e = predict_A(fit, 0.0, 1000.0, horizon_scale=10.0)
    assert e.A == pytest.approx(700.0) and e.B == pytest.approx(700.0)
    assert e.method == "mixed-effects"

    # large outflow pushes the linear prediction below the floor
    floored = predict_A(fit, -5000.0, 1000.0, horizon_scale=10.0)
    assert floored.A == pytest.approx(200.0)
    assert floored.B == pytest.approx(5200.0)


def test_predict_A_infeasible_and_invalid():
    fit = MixedEffectsFit(0.001, 0.0, {}, 0.0, 1e-4, 0.0)
    with pytest.raises(InfeasibleSplitError):
        predict_A(fit, 1000.0, 100.0, horizon_scale=10.0)
    with pytest.raises(InvalidParameterError):
        predict_A(fit, 0.0, -1.0)
    with pytest.raises(InvalidParameterError, match="horizon"):
        predict_A(fit, 0.0, 100.0, horizon_scale=0.5)


def test_predict_A_uses_location_intercept():
    fit = MixedEffectsFit(0.07, 0.0, {"hot": 0.09}, 1e-4, 1e-4, 0.02)
    base = predict_A(fit, 0.0, 1000.0, horizon_scale=10.0)
    hot = predict_A(fit, 0.0, 1000.0, horizon_scale=10.0, location="hot")
    assert base.A == pytest.approx(700.0)
    assert hot.A == pytest.approx(900.0)


@given(g1=st.floats(-400, 400), g2=st.floats(-400, 400))
def test_predict_A_monotone_in_net_total(g1, g2):
    fit = MixedEffectsFit(0.07, 0.52, {}, 0.0, 1e-4, 0.02)
    lo, hi = sorted((g1, g2))
    assert (predict_A(fit, lo, 1000.0).A
            <= predict_A(fit, hi, 1000.0).A + 1e-12)


# --- serialization ---------------------------------------------------------


def test_fit_round_trip(tmp_path):
    data, _ = make_rate_panel(11)
    fit = fit_mixed_effects(data)
    path = tmp_path / "fit.txt"
    save_fit(fit, path)
    back = load_fit(path)
    assert back == fit  # repr round trip is exact


def test_load_fit_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("beta0 = 0.07\nbeta1 0.5\n")
    with pytest.raises(PanelParseError, match="key = value"):
        load_fit(bad)
    bad.write_text("beta0 = x\n")
    with pytest.raises(PanelParseError, match="bad number"):
        load_fit(bad)
    bad.write_text("beta0 = 0.07\n")
    with pytest.raises(PanelParseError, match="misses keys"):
        load_fit(bad)


def test_rate_panel_round_trip(tmp_path):
    data, _ = make_rate_panel(4, n_loc=5, n_per=2)
    path = tmp_path / "rates.csv"
    save_rate_panel(data, path)
    back = load_rate_panel(path)
    assert back.locations == data.locations
    assert back.periods == data.periods
    np.testing.assert_array_equal(back.imr, data.imr)
    np.testing.assert_array_equal(back.nmr, data.nmr)


def test_decomposition_round_trip(tmp_path):
    G = np.array([[123.456, -42.0], [0.0, 7.875]])
    P = np.array([[1500.0, 1500.0], [900.0, 900.0]])
    d = decompose_panel(G, P, ("a", "b"), ("p0", "p1"))
    path = tmp_path / "decomp.csv"
    save_decomposition(d, path)
    back = load_decomposition(path)
    assert back.locations == d.locations and back.periods == d.periods
    np.testing.assert_array_equal(back.G, d.G)
    np.testing.assert_array_equal(back.A, d.A)
    np.testing.assert_array_equal(back.B, d.B)
    assert back.method == d.method


def test_load_decomposition_errors(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("wrong,header\n")
    with pytest.raises(Exception, match="header"):
        load_decomposition(path)
    path.write_text(",".join(DECOMP_HEADER) + "\n"
                    "a,p0,1,2,1,heuristic\n"
                    "a,p1,1,2,1,heuristic\n"
                    "b,p0,1,2,1,heuristic\n")
    with pytest.raises(PanelParseError, match="missing entry"):
        load_decomposition(path)
