"""Hot numerical kernels with an optional numba path.

Everything here is written once, in scalar-loop style, and executed
either through numba's @njit or as plain Python.  Selection: if the
environment variable FLOWDIFF_NO_NUMBA is set to anything but "0"/"",
or numba is not importable, the plain-Python path is used.  Both paths
run the same code object, consume pregenerated random streams, and
produce bitwise-identical results; see benchmarks/bench_kernels.py for
the speed difference.

State vector layout (length 23):
    0..10   in-schedule parameters  (a1, alpha1, a2, alpha2, mu2,
            lambda2, a3, alpha3, mu3, lambda3, c)
    11..21  out-schedule parameters (same order)
    22      v, the dispersion parameter of the flow variance law

Dynamic truncation bounds: within each side, a2's lower bound is the
current a1 and lambda2's lower bound is the current alpha2.  Their
truncated-normal normalizers depend on those values, so the normalizer
terms are part of the log-prior.
"""

from __future__ import annotations

import math
import os
import warnings

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
LOG_SQRT_2PI = 0.5 * LOG_2PI
SQRT2 = math.sqrt(2.0)

VARIANCE_FLOOR = 1e-8   # persons^2, guards degenerate likelihood cells
STUCK_LIMIT = 10_000    # consecutive all-rejected sweeps before giving up

V_INDEX = 22
N_STATE = 23


def _no_jit(*args, **kwargs):
    if args and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(fn):
        return fn

    return wrap


_flag = os.environ.get("FLOWDIFF_NO_NUMBA", "").strip()
if _flag not in ("", "0"):
    USING_NUMBA = False
    njit = _no_jit
else:
    try:
        from numba import njit  # type: ignore[no-redef]

        USING_NUMBA = True
    except ImportError:  # pragma: no cover - depends on environment
        warnings.warn("numba unavailable; using pure-Python kernels",
                      RuntimeWarning, stacklevel=1)
        USING_NUMBA = False
        njit = _no_jit


def pure(fn):
    """The plain-Python version of a possibly-jitted kernel."""
    return getattr(fn, "py_func", fn)


@njit(cache=True)
def rc_eval(state, offset, ages, out):
    """Rogers-Castro curve for one side of the state vector, in place."""
    a1 = state[offset]
    al1 = state[offset + 1]
    a2 = state[offset + 2]
    al2 = state[offset + 3]
    mu2 = state[offset + 4]
    la2 = state[offset + 5]
    a3 = state[offset + 6]
    al3 = state[offset + 7]
    mu3 = state[offset + 8]
    la3 = state[offset + 9]
    c = state[offset + 10]
    for k in range(ages.shape[0]):
        x = ages[k]
        val = c + a1 * math.exp(-al1 * x)
        if a2 != 0.0:
            t = x - mu2
            val += a2 * math.exp(-al2 * t - math.exp(-la2 * t))
        if a3 != 0.0:
            t = x - mu3
            val += a3 * math.exp(-al3 * t - math.exp(-la3 * t))
        out[k] = val


@njit(cache=True)
def log_prior(state, active, lo, hi, mu, sd):
    """Joint log-prior over the active parameters.

    Truncated normals for the schedule parameters (with dynamic lower
    bounds for a2 and lambda2), uniform (0, 1) for v.  Returns -inf
    outside the support.
    """
    lp = 0.0
    for jj in range(active.shape[0]):
        j = active[jj]
        x = state[j]
        if j == V_INDEX:
            if x <= 0.0 or x >= 1.0:
                return -math.inf
            continue
        loj = lo[j]
        jm = j % 11
        if jm == 2 or jm == 5:
            # a2 >= a1, lambda2 >= alpha2 (same side)
            loj = state[j - 2]
        if x < loj or x > hi[j]:
            return -math.inf
        za = (loj - mu[j]) / sd[j]
        zb = (hi[j] - mu[j]) / sd[j]
        z = 0.5 * (math.erf(zb / SQRT2) - math.erf(za / SQRT2))
        if z <= 0.0:
            return -math.inf
        zc = (x - mu[j]) / sd[j]
        lp += -0.5 * zc * zc - math.log(sd[j]) - LOG_SQRT_2PI - math.log(z)
    return lp


@njit(cache=True)
def log_likelihood(r_in, r_out, v, g, A, B, PW, PL):
    """Sum of normal log-densities of observed net migration.

    For each cell: mean iota - o with population-weighted normalized
    schedules (regional weights for in, local for out), variance
    (iota + o) / v floored at VARIANCE_FLOOR.
    """
    K = g.shape[0]
    T = g.shape[1]
    ll = 0.0
    for t in range(T):
        sin = 0.0
        sout = 0.0
        for x in range(K):
            sin += r_in[x] * PW[x, t]
            sout += r_out[x] * PL[x, t]
        if sin <= 0.0 or sout <= 0.0:
            return -math.inf
        for x in range(K):
            iota = A[t] * r_in[x] * PW[x, t] / sin
            o = B[t] * r_out[x] * PL[x, t] / sout
            var = (iota + o) / v
            if var < VARIANCE_FLOOR:
                var = VARIANCE_FLOOR
            d = g[x, t] - (iota - o)
            ll += -0.5 * (LOG_2PI + math.log(var) + d * d / var)
    return ll


@njit(cache=True)
def run_chain(g, A, B, PW, PL, ages, state, active, group_id, pair_a, pair_b,
              pair_coef, lo, hi, mu, sd, prop_scale, z, u, n_burn, thin,
              adapt_every, aux_rounds, out, acc_count, likelihood_on):
    """One adaptive random-walk Metropolis chain.

    Each sweep makes one single-site update per active index, then
    `aux_rounds` rounds of auxiliary moves:
      - one multiplicative scale move per group in `group_id` (nonzero
        entries mark members; a group jointly rescales one side's
        amplitudes and level by exp(eps), Jacobian in the ratio);
      - one paired additive move per (pair_a[k], pair_b[k]), shifting
        the first index by eps and the second by pair_coef[k] * eps.

    The net-migration likelihood constrains the difference of the two
    schedules far more tightly than their common component, and is
    invariant to rescaling either schedule; the auxiliary moves keep
    those weakly-identified directions mixing.  Every move, in every
    round, has its own scalar proposal width, tuned toward 20-40%
    acceptance in batches of adapt_every sweeps during burn-in and
    frozen afterwards.

    z and u are pregenerated standard-normal and uniform streams with
    one column per move, n_active + aux_rounds * (n_groups + n_pairs)
    in total; `state` and `prop_scale` are updated in place.  Draws are
    written to `out` every `thin` sweeps after burn-in.

    Returns 0 on success, 1 if STUCK_LIMIT consecutive sweeps rejected
    every proposal, 2 if the initial state has zero posterior density.
    """
    n_iter = z.shape[0]
    n_act = active.shape[0]
    n_pairs = pair_a.shape[0]
    n_groups = 0
    for j in range(N_STATE):
        if group_id[j] > n_groups:
            n_groups = group_id[j]
    n_aux = n_groups + n_pairs
    K = ages.shape[0]

    r_in = np.empty(K)
    r_out = np.empty(K)
    rc_eval(state, 0, ages, r_in)
    rc_eval(state, 11, ages, r_out)

    cur_lp = log_prior(state, active, lo, hi, mu, sd)
    if likelihood_on:
        cur_ll = log_likelihood(r_in, r_out, state[V_INDEX], g, A, B, PW, PL)
    else:
        cur_ll = 0.0
    if not (cur_lp > -math.inf and cur_ll > -math.inf):
        return 2

    n_cols = n_act + aux_rounds * n_aux
    batch_acc = np.zeros(n_cols)
    saved = np.zeros(N_STATE)
    stuck = 0
    keep = 0
    for it in range(n_iter):
        any_accept = False
        for jj in range(n_act):
            j = active[jj]
            old = state[j]
            state[j] = old + prop_scale[jj] * z[it, jj]
            new_lp = log_prior(state, active, lo, hi, mu, sd)
            accept = False
            touched = False
            if new_lp > -math.inf:
                if j < 11:
                    rc_eval(state, 0, ages, r_in)
                    touched = True
                elif j < 22:
                    rc_eval(state, 11, ages, r_out)
                    touched = True
                if likelihood_on:
                    new_ll = log_likelihood(r_in, r_out, state[V_INDEX],
                                            g, A, B, PW, PL)
                else:
                    new_ll = 0.0
                if new_ll > -math.inf:
                    dlp = (new_lp + new_ll) - (cur_lp + cur_ll)
                    if dlp >= 0.0:
                        accept = True
                    elif u[it, jj] < math.exp(dlp):
                        accept = True
                    if accept:
                        cur_lp = new_lp
                        cur_ll = new_ll
            if accept:
                any_accept = True
                if it < n_burn:
                    batch_acc[jj] += 1.0
                else:
                    acc_count[jj] += 1.0
            else:
                state[j] = old
                if touched:
                    if j < 11:
                        rc_eval(state, 0, ages, r_in)
                    else:
                        rc_eval(state, 11, ages, r_out)

        # auxiliary moves, aux_rounds x (groups then pairs); column = move
        for m in range(aux_rounds * n_aux):
            col = n_act + m
            k = m % n_aux
            eps = prop_scale[col] * z[it, col]
            log_jac = 0.0
            touch_in = False
            touch_out = False
            if k < n_groups:
                f = math.exp(eps)
                nmem = 0
                for j in range(N_STATE):
                    if group_id[j] == k + 1 and state[j] > 0.0:
                        saved[j] = state[j]
                        state[j] = state[j] * f
                        nmem += 1
                        if j < 11:
                            touch_in = True
                        else:
                            touch_out = True
                    else:
                        saved[j] = -1.0
                if nmem == 0:
                    continue
                log_jac = nmem * eps
            else:
                ja = pair_a[k - n_groups]
                jb = pair_b[k - n_groups]
                for j in range(N_STATE):
                    saved[j] = -1.0
                saved[ja] = state[ja]
                saved[jb] = state[jb]
                state[ja] = state[ja] + eps
                state[jb] = state[jb] + pair_coef[k - n_groups] * eps
                touch_in = ja < 11 or jb < 11
                touch_out = (10 < ja < 22) or (10 < jb < 22)
            new_lp = log_prior(state, active, lo, hi, mu, sd)
            accept = False
            if new_lp > -math.inf:
                if touch_in:
                    rc_eval(state, 0, ages, r_in)
                if touch_out:
                    rc_eval(state, 11, ages, r_out)
                if likelihood_on:
                    new_ll = log_likelihood(r_in, r_out, state[V_INDEX],
                                            g, A, B, PW, PL)
                else:
                    new_ll = 0.0
                if new_ll > -math.inf:
                    dlp = (new_lp + new_ll) - (cur_lp + cur_ll) + log_jac
                    if dlp >= 0.0:
                        accept = True
                    elif u[it, col] < math.exp(dlp):
                        accept = True
                    if accept:
                        cur_lp = new_lp
                        cur_ll = new_ll
            if accept:
                any_accept = True
                if it < n_burn:
                    batch_acc[col] += 1.0
                else:
                    acc_count[col] += 1.0
            else:
                for j in range(N_STATE):
                    if saved[j] >= 0.0:
                        state[j] = saved[j]
                if touch_in:
                    rc_eval(state, 0, ages, r_in)
                if touch_out:
                    rc_eval(state, 11, ages, r_out)

        if any_accept:
            stuck = 0
        else:
            stuck += 1
            if stuck >= STUCK_LIMIT:
                return 1

        if it < n_burn and (it + 1) % adapt_every == 0:
            for jj in range(n_cols):
                rate = batch_acc[jj] / adapt_every
                if rate > 0.40:
                    prop_scale[jj] *= 1.4
                elif rate < 0.20:
                    prop_scale[jj] /= 1.4
                if prop_scale[jj] < 1e-10:
                    prop_scale[jj] = 1e-10
                elif prop_scale[jj] > 1e3:
                    prop_scale[jj] = 1e3
                batch_acc[jj] = 0.0

        if it >= n_burn and (it - n_burn) % thin == 0:
            for j2 in range(N_STATE):
                out[keep, j2] = state[j2]
            keep += 1
    return 0
