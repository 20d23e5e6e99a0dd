"""Deterministic flow-difference method.

Given observed net migration and a totals decomposition, derive per-age
perturbation ratios R_x against the fixed model schedule, then project
age-specific net migration as the difference of the ratio-weighted in-
schedule and the inverse-ratio-weighted out-schedule.  Population weights
are omitted throughout this module.

Two ratio extractions live here.  estimate_ratios is the stable
time-averaged estimator built on the additive inflow reconstruction
iota = A*r + g/2; it feeds projections.  solve_cell_ratios inverts the
flow-difference identity exactly for one (location, period) cell, which
is what lets det_fdm_recover reproduce any model-consistent panel to
float precision.  Ratios are identified only up to a positive per-cell
factor; every downstream use is invariant to that gauge.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .decompose import FlowDecomposition
from .errors import (
    DegenerateScheduleError,
    InvalidParameterError,
    NegativeInflowError,
    PanelParseError,
    PanelSchemaError,
)
from .ingest import MigrationPanel
from .schedule import AgeGrid, RCParams, rc_schedule

RATIO_HEADER = ("location", "age_group", "ratio")


def model_schedule() -> RCParams:
    """The fixed seven-parameter model schedule (retirement absent)."""
    return RCParams(a1=0.01, alpha1=0.09,
                    a2=0.05, alpha2=0.077, mu2=16.5, lambda2=0.374,
                    c=0.0003)


@dataclass(frozen=True)
class RatioProfile:
    """Per-age perturbation ratios for one location.

    ratios: time-averaged R_x (always present).
    per_period: R_{x,t} without any time averaging, when retained.
    """

    location: str
    grid: AgeGrid
    ratios: np.ndarray
    per_period: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.ratios.shape != (len(self.grid),):
            raise PanelSchemaError("ratio length must match the grid")
        if not np.all(np.isfinite(self.ratios)) or np.any(self.ratios <= 0):
            raise InvalidParameterError("ratios must be finite and positive")
        if self.per_period is not None:
            if self.per_period.ndim != 2 or self.per_period.shape[0] != len(self.grid):
                raise PanelSchemaError("per-period ratios must be (K, T)")
            if (not np.all(np.isfinite(self.per_period))
                    or np.any(self.per_period <= 0)):
                raise InvalidParameterError("ratios must be finite and positive")


def estimate_ratios(panel: MigrationPanel, decomp: FlowDecomposition,
                    theta_m: RCParams, keep_per_period: bool = False,
                    ) -> dict[str, RatioProfile]:
    """Extract per-age ratios R_x for every location in the panel.

    The average observed net pattern gbar_x is folded into a reconstructed
    inflow profile, standardized by the in-total, and divided by the model
    schedule values:

        iota_{x,t} = A_t * r_x + 0.5 * gbar_x,
        R_x = (1/T) sum_t (iota_{x,t} / A_t) / r_x.

    With keep_per_period, the profile also carries R_{x,t} computed with
    the period's own g_{x,t} in place of gbar_x and no averaging.

    Raises:
        NegativeInflowError: some reconstructed iota_{x,t} <= 0, meaning
            the upstream decomposition used too small a gross level m.
    """
    if decomp.locations != panel.locations or decomp.periods != panel.periods:
        raise PanelSchemaError("decomposition must cover the panel exactly")
    if np.any(decomp.A <= 0):
        raise InvalidParameterError("estimation needs A > 0 everywhere")

    r = rc_schedule(theta_m, panel.grid)
    if np.any(r <= 0):
        raise DegenerateScheduleError("model schedule vanishes on some group")

    out: dict[str, RatioProfile] = {}
    for i, loc in enumerate(panel.locations):
        A_t = decomp.A[i]
        g = panel.net_migration[:, i, :]
        gbar = g.mean(axis=1)

        iota = A_t[None, :] * r[:, None] + 0.5 * gbar[:, None]
        if np.any(iota <= 0):
            x, t = np.unravel_index(int(np.argmin(iota)), iota.shape)
            raise NegativeInflowError(
                f"reconstructed inflow nonpositive at location={loc!r} "
                f"age={panel.grid.labels[x]!r} period={panel.periods[t]!r}; "
                f"increase m upstream")
        ratios = (iota / (A_t[None, :] * r[:, None])).mean(axis=1)

        per_period = None
        if keep_per_period:
            iota_t = A_t[None, :] * r[:, None] + 0.5 * g
            if np.any(iota_t <= 0):
                x, t = np.unravel_index(int(np.argmin(iota_t)), iota_t.shape)
                raise NegativeInflowError(
                    f"reconstructed inflow nonpositive at location={loc!r} "
                    f"age={panel.grid.labels[x]!r} "
                    f"period={panel.periods[t]!r}; increase m upstream")
            per_period = iota_t / (A_t[None, :] * r[:, None])

        out[loc] = RatioProfile(loc, panel.grid, ratios, per_period)
    return out


def fdm_net_values(A: float, B: float, r: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Net migration from schedule values r and ratios R.

    g_x = A * (r R)_x / sum(r R) - B * (r / R)_x / sum(r / R).
    """
    if A < 0 or B < 0:
        raise InvalidParameterError("A and B must be nonnegative")
    win = r * R
    wout = r / R
    din, dout = win.sum(), wout.sum()
    if din <= 0 or dout <= 0:
        raise DegenerateScheduleError("schedule normalizer is zero")
    return A * (win / din) - B * (wout / dout)


def det_fdm_net(A: float, B: float, theta_m: RCParams,
                ratios: RatioProfile | np.ndarray,
                grid: AgeGrid | None = None) -> np.ndarray:
    """Per-age net migration for one (location, period).

    Args:
        A, B: in- and out-totals (persons, >= 0).
        theta_m: model schedule parameters.
        ratios: RatioProfile (grid included) or a plain ratio vector with
            `grid` passed separately.

    Returns:
        g_x with sum(g) = A - B to float precision.
    """
    if isinstance(ratios, RatioProfile):
        grid = ratios.grid
        R = ratios.ratios
    else:
        if grid is None:
            raise InvalidParameterError("grid is required with a bare ratio vector")
        R = np.asarray(ratios, dtype=float)
    r = rc_schedule(theta_m, grid)
    return fdm_net_values(A, B, r, R)


def solve_cell_ratios(A: float, B: float, r: np.ndarray,
                      g: np.ndarray) -> np.ndarray:
    """Ratios R > 0 under which fdm_net_values(A, B, r, R) equals g exactly.

    Writing rho for the normalized schedule, the in-flows implied by any
    solution are iota_x = (g_x + sqrt(g_x^2 + 4 q rho_x^2)) / 2 for a
    single scalar q > 0; the flow balance sum(iota) + sum(iota - g) = A + B
    pins q as the root of a strictly increasing scalar function.  R is
    returned in the gauge with equal in/out scale factors; per-cell
    ratios are only identified up to a positive factor anyway.  Exact
    reproduction additionally needs sum(g) = A - B; when the balance is
    slightly off (stored totals vs cell sums) the reproduction error
    stays of the order of the imbalance.

    Raises:
        NegativeInflowError: sum |g_x| >= A + B, i.e. the age pattern
            saturates the gross flows; the remedy is a larger m upstream.
    """
    if A < 0 or B < 0:
        raise InvalidParameterError("A and B must be nonnegative")
    rho = r / r.sum()
    gross = A + B
    g = np.asarray(g, dtype=float)
    if np.abs(g).sum() >= gross * (1.0 - 1e-12):
        raise NegativeInflowError(
            f"net pattern with sum|g|={np.abs(g).sum():.3f} saturates the "
            f"gross flows A+B={gross:.3f}; increase m upstream")

    def excess(q: float) -> float:
        return float(np.sqrt(g * g + 4.0 * q * rho * rho).sum() - gross)

    q = brentq(excess, 0.0, 0.25 * gross * gross + 1.0,
               xtol=1e-12, rtol=8.9e-16, maxiter=200)
    iota = 0.5 * (g + np.sqrt(g * g + 4.0 * q * rho * rho))
    return iota / (math.sqrt(q) * rho)


def det_fdm_recover(panel: MigrationPanel, decomp: FlowDecomposition,
                    theta_m: RCParams) -> np.ndarray:
    """Reconstruct g[x, i, t] through time-specific ratios R_{x,i,t}.

    Per (location, period) cell the ratios are solved so that the
    flow-difference identity returns the observed values; on any panel
    whose cells satisfy sum_x |g| < A + B and whose totals match the
    cell sums, the reconstruction is exact to float precision.
    Time-averaged ratios (estimate_ratios) trade this exactness for
    stability when projecting.
    """
    if decomp.locations != panel.locations or decomp.periods != panel.periods:
        raise PanelSchemaError("decomposition must cover the panel exactly")
    r = rc_schedule(theta_m, panel.grid)
    if np.any(r <= 0):
        raise DegenerateScheduleError("model schedule vanishes on some group")
    out = np.empty_like(panel.net_migration)
    for i in range(len(panel.locations)):
        for t in range(len(panel.periods)):
            A, B = float(decomp.A[i, t]), float(decomp.B[i, t])
            R = solve_cell_ratios(A, B, r, panel.net_migration[:, i, t])
            out[:, i, t] = fdm_net_values(A, B, r, R)
    return out


def save_ratios(profiles: dict[str, RatioProfile], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(RATIO_HEADER) + "\n")
        for loc in sorted(profiles):
            prof = profiles[loc]
            for age, val in zip(prof.grid.labels, prof.ratios):
                fh.write(f"{loc},{age},{float(val)!r}\n")


def load_ratios(path) -> dict[str, RatioProfile]:
    rows: dict[str, dict[str, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(c.strip() for c in next(reader))
        if header != RATIO_HEADER:
            raise PanelSchemaError(
                f"{path}: header {header} does not match {RATIO_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise PanelParseError(
                    f"line {lineno}: expected 3 columns, got {len(row)}")
            try:
                rows.setdefault(row[0].strip(), {})[row[1].strip()] = float(row[2])
            except ValueError:
                raise PanelParseError(f"line {lineno}: bad ratio") from None
    def lower(label: str) -> float:
        s = label.strip()
        return float(s[:-1]) if s.endswith("+") else float(s.partition("-")[0])

    out: dict[str, RatioProfile] = {}
    for loc, by_age in rows.items():
        labels = sorted(by_age, key=lower)
        grid = AgeGrid.from_labels(labels)
        out[loc] = RatioProfile(loc, grid, np.array([by_age[a] for a in labels]))
    return out
