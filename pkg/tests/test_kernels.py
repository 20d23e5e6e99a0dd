"""Kernel layer: numba/pure parity, prior and likelihood math, chain statuses."""

from __future__ import annotations

import subprocess
import sys

import numpy as np
import pytest
from scipy.stats import truncnorm

from flowdiff import _kernels as _k
from flowdiff.fdm_bayes import (
    SamplerConfig,
    default_prior,
    initial_scales,
    initial_state,
)
from flowdiff.schedule import AgeGrid, RCParams, rc_schedule

from synth import THETA_IN, THETA_OUT, bayes_dataset


def chain_inputs(seed=3, K=10, T=4, iterations=300, burnin=100):
    """Everything run_chain needs, mirroring the driver's construction."""
    data = bayes_dataset(seed, K=K, T=T)
    prior = default_prior()
    cfg = SamplerConfig(chains=1, iterations=iterations, burnin=burnin,
                        thin=4, adapt_every=50, aux_rounds=2, seed=seed)
    active = prior.active_indices()
    pair_a, pair_b, pair_coef, _ = prior.pair_moves()
    lo, hi, loc, scale = prior.hyper_arrays()
    scale0 = initial_scales(prior, cfg.aux_rounds)
    rng = np.random.default_rng([cfg.seed, 0])
    z = rng.standard_normal((cfg.iterations, scale0.size))
    u = rng.random((cfg.iterations, scale0.size))
    args = dict(g=data["g"], A=data["A"], B=data["B"],
                PW=data["pop_regional"], PL=data["pop_local"],
                ages=data["grid"].midpoints, state=initial_state(prior),
                active=active, group_id=prior.scale_groups(),
                pair_a=pair_a, pair_b=pair_b, pair_coef=pair_coef,
                lo=lo, hi=hi, mu=loc, sd=scale, prop_scale=scale0,
                z=z, u=u, n_burn=cfg.burnin, thin=cfg.thin,
                adapt_every=cfg.adapt_every, aux_rounds=cfg.aux_rounds,
                out=np.zeros((cfg.n_kept, _k.N_STATE)),
                acc_count=np.zeros(scale0.size), likelihood_on=True)
    return args


def run(fn, args):
    a = {k: (v.copy() if isinstance(v, np.ndarray) else v)
         for k, v in args.items()}
    status = fn(a["g"], a["A"], a["B"], a["PW"], a["PL"], a["ages"],
                a["state"], a["active"], a["group_id"], a["pair_a"],
                a["pair_b"], a["pair_coef"], a["lo"], a["hi"], a["mu"],
                a["sd"], a["prop_scale"], a["z"], a["u"], a["n_burn"],
                a["thin"], a["adapt_every"], a["aux_rounds"], a["out"],
                a["acc_count"], a["likelihood_on"])
    return status, a


# -- dispatch ------------------------------------------------------------------


def test_pure_returns_python_code_object():
    fn = _k.pure(_k.run_chain)
    if _k.USING_NUMBA:
        assert fn is _k.run_chain.py_func
        assert fn is not _k.run_chain
    else:
        assert fn is _k.run_chain
    # plain functions pass through untouched
    assert _k.pure(chain_inputs) is chain_inputs


def test_env_flag_forces_pure_path():
    code = ("import flowdiff._kernels as k; "
            "assert not k.USING_NUMBA; "
            "assert not hasattr(k.run_chain, 'py_func')")
    proc = subprocess.run([sys.executable, "-c", code],
                          env={"FLOWDIFF_NO_NUMBA": "1",
                               "PATH": "/usr/bin:/bin"},
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


# -- rc_eval ---------------------------------------------------------------------


@pytest.mark.parametrize("theta,offset", [(THETA_IN, 0), (THETA_OUT, 11)])
def test_rc_eval_matches_vectorized_curve(theta, offset):
    grid = AgeGrid.five_year(max_lower=95)
    state = np.zeros(_k.N_STATE)
    state[offset:offset + 11] = theta.as_array()
    got = np.empty(len(grid))
    _k.rc_eval(state, offset, grid.midpoints, got)
    np.testing.assert_allclose(got, rc_schedule(theta, grid), rtol=1e-13)


def test_rc_eval_skips_absent_components():
    # zero amplitude with a nonzero mu must contribute exactly nothing
    state = np.zeros(_k.N_STATE)
    state[0:11] = RCParams(c=0.004).as_array()
    state[8] = 60.0  # mu3 without a3
    got = np.empty(3)
    _k.rc_eval(state, 0, np.array([10.0, 40.0, 70.0]), got)
    assert np.all(got == 0.004)


# -- log_prior -------------------------------------------------------------------


def tn_logpdf(x, lo, hi, mu, sd):
    return float(truncnorm.logpdf(x, (lo - mu) / sd, (hi - mu) / sd,
                                  loc=mu, scale=sd))


def test_log_prior_matches_truncnorm_with_dynamic_bound():
    state = np.zeros(_k.N_STATE)
    state[0], state[2] = 0.3, 0.4     # a2 bound lifts to the current a1
    active = np.array([0, 2], dtype=np.int64)
    lo, hi = np.zeros(_k.N_STATE), np.ones(_k.N_STATE)
    mu, sd = np.zeros(_k.N_STATE), np.full(_k.N_STATE, 0.3)
    got = _k.log_prior(state, active, lo, hi, mu, sd)
    want = (tn_logpdf(0.3, 0.0, 1.0, 0.0, 0.3)
            + tn_logpdf(0.4, 0.3, 1.0, 0.0, 0.3))
    assert got == pytest.approx(want, rel=1e-12)


def test_log_prior_support_edges():
    lo, hi = np.zeros(_k.N_STATE), np.ones(_k.N_STATE)
    mu, sd = np.zeros(_k.N_STATE), np.ones(_k.N_STATE)

    state = np.zeros(_k.N_STATE)
    state[0], state[2] = 0.3, 0.2     # a2 below the dynamic a1 bound
    assert _k.log_prior(state, np.array([0, 2], dtype=np.int64),
                        lo, hi, mu, sd) == -np.inf

    v_only = np.array([_k.V_INDEX], dtype=np.int64)
    for v, want_finite in ((0.5, True), (0.0, False), (1.0, False)):
        state = np.zeros(_k.N_STATE)
        state[_k.V_INDEX] = v
        got = _k.log_prior(state, v_only, lo, hi, mu, sd)
        assert bool(np.isfinite(got)) is want_finite
        if want_finite:
            assert got == 0.0  # v is uniform, no density term

    state = np.zeros(_k.N_STATE)
    state[1] = 1.5                    # above the static upper bound
    assert _k.log_prior(state, np.array([1], dtype=np.int64),
                        lo, hi, mu, sd) == -np.inf


# -- log_likelihood --------------------------------------------------------------


def reference_loglik(r_in, r_out, v, g, A, B, PW, PL):
    win = r_in[:, None] * PW
    wout = r_out[:, None] * PL
    iota = A[None, :] * win / win.sum(axis=0)
    o = B[None, :] * wout / wout.sum(axis=0)
    var = np.maximum((iota + o) / v, _k.VARIANCE_FLOOR)
    d = g - (iota - o)
    return float(np.sum(-0.5 * (np.log(2 * np.pi * var) + d * d / var)))


def test_log_likelihood_matches_reference():
    data = bayes_dataset(5, K=12, T=3)
    grid = data["grid"]
    r_in = rc_schedule(THETA_IN, grid)
    r_out = rc_schedule(THETA_OUT, grid)
    got = _k.log_likelihood(r_in, r_out, 0.4, data["g"], data["A"],
                            data["B"], data["pop_regional"],
                            data["pop_local"])
    want = reference_loglik(r_in, r_out, 0.4, data["g"], data["A"],
                            data["B"], data["pop_regional"],
                            data["pop_local"])
    assert got == pytest.approx(want, rel=1e-12)


def test_log_likelihood_zero_residual_is_pure_normalizer():
    data = bayes_dataset(5, K=12, T=3)
    grid = data["grid"]
    r_in = rc_schedule(THETA_IN, grid)
    r_out = rc_schedule(THETA_OUT, grid)
    g = data["iota"] - data["o"]
    got = _k.log_likelihood(r_in, r_out, 0.4, g, data["A"], data["B"],
                            data["pop_regional"], data["pop_local"])
    var = (data["iota"] + data["o"]) / 0.4
    want = float(np.sum(-0.5 * np.log(2 * np.pi * var)))
    assert got == pytest.approx(want, rel=1e-10)


def test_log_likelihood_floors_tiny_variances():
    r = np.array([1.0, 1.0])
    PW = np.ones((2, 1))
    g = np.zeros((2, 1))
    A = np.array([1e-10])
    B = np.array([1e-10])
    got = _k.log_likelihood(r, r, 0.9, g, A, B, PW, PW)
    want = 2 * -0.5 * np.log(2 * np.pi * _k.VARIANCE_FLOOR)
    assert got == pytest.approx(want, rel=1e-12)


def test_log_likelihood_rejects_collapsed_schedule():
    zeros = np.zeros(3)
    ones = np.ones((3, 2))
    assert _k.log_likelihood(zeros, np.ones(3), 0.5, np.zeros((3, 2)),
                             np.ones(2), np.ones(2), ones, ones) == -np.inf


# -- run_chain -------------------------------------------------------------------


def test_run_chain_numba_and_pure_are_bitwise_identical():
    if not _k.USING_NUMBA:
        pytest.skip("numba path inactive")
    args = chain_inputs()
    s_jit, a_jit = run(_k.run_chain, args)
    s_py, a_py = run(_k.pure(_k.run_chain), args)
    assert s_jit == s_py == 0
    for key in ("out", "acc_count", "state", "prop_scale"):
        assert np.array_equal(a_jit[key], a_py[key]), key


def test_run_chain_moves_and_adapts():
    status, a = run(_k.pure(_k.run_chain), chain_inputs())
    assert status == 0
    assert a["acc_count"].sum() > 0
    assert not np.array_equal(a["prop_scale"], chain_inputs()["prop_scale"])
    assert np.all(a["out"][:, _k.V_INDEX] > 0)
    assert np.all(a["out"][:, _k.V_INDEX] < 1)


def test_run_chain_reports_zero_density_start():
    args = chain_inputs(iterations=10, burnin=0)
    args["state"] = np.zeros(_k.N_STATE)  # v = 0 lies outside the support
    args["out"] = np.zeros((10, _k.N_STATE))
    status, _ = run(_k.pure(_k.run_chain), args)
    assert status == 2


def test_run_chain_reports_stuck_chain():
    # one active slot boxed into [0, 1e-300]: every proposal leaves support
    n = _k.STUCK_LIMIT + 50
    state = np.zeros(_k.N_STATE)
    state[0] = 5e-301
    lo, hi = np.zeros(_k.N_STATE), np.ones(_k.N_STATE)
    hi[0] = 1e-300
    rng = np.random.default_rng(0)
    status = _k.run_chain(
        np.zeros((1, 1)), np.ones(1), np.ones(1), np.ones((1, 1)),
        np.ones((1, 1)), np.array([30.0]), state,
        np.array([0], dtype=np.int64), np.zeros(_k.N_STATE, dtype=np.int64),
        np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64),
        np.empty(0, dtype=float), lo, hi, np.zeros(_k.N_STATE),
        np.full(_k.N_STATE, 0.3), np.ones(1),
        rng.standard_normal((n, 1)), rng.random((n, 1)), 0, 1, 100, 0,
        np.zeros((n, _k.N_STATE)), np.zeros(1), False)
    assert status == 1
