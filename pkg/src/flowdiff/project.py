"""Disaggregating total net migration trajectories over age and sex.

Input is a set of total-net-migration trajectories G per (location,
period); output is per-age, per-sex net migration under one of three
methods:

  basic    g = G^s * r(theta) / sum r         (one fixed schedule)
  det      (A^s, B^s) = heuristic split of G^s, then deterministic FDM
  bayes    (A^s, B^s) from the mixed-effects rates; age profiles from a
           posterior draw paired to the trajectory; Gaussian cell noise
           with capped variance; exact-total rescaling

All three conserve the trajectory total: sum over sexes and ages equals
G to 1e-6 persons.  Sexes split G by a fixed share (default half each,
the same-sex-ratio assumption).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .decompose import MixedEffectsFit, predict_A
from .errors import (
    DegenerateScheduleError,
    InfeasibleSplitError,
    InvalidParameterError,
    PanelConsistencyError,
    PanelParseError,
    PanelSchemaError,
    UnknownLocationError,
)
from .fdm_bayes import PosteriorDraws, rc_curve_matrix
from .fdm_det import RatioProfile, det_fdm_net
from .schedule import AgeGrid, RCParams, rc_schedule

SEXES = ("f", "m")

TRAJECTORY_HEADER = ("location", "period", "trajectory", "net_total")
PROJECTION_HEADER = ("location", "period", "trajectory", "sex", "age_group",
                     "net_migration")
SUMMARY_HEADER = ("location", "period", "sex", "age_group",
                  "lo95", "lo80", "median", "hi80", "hi95")

# equal-tailed central bands; rows follow SUMMARY_HEADER's band columns
_BAND_Q = (0.025, 0.10, 0.50, 0.90, 0.975)


@dataclass(frozen=True)
class TrajectorySet:
    """Total net migration per (location, period, trajectory)."""

    locations: tuple[str, ...]
    periods: tuple[str, ...]
    G: np.ndarray

    def __post_init__(self) -> None:
        shape = (len(self.locations), len(self.periods))
        if self.G.ndim != 3 or self.G.shape[:2] != shape:
            raise PanelSchemaError(
                f"G must be (locations, periods, trajectories) = "
                f"{shape + ('L',)}, got {self.G.shape}")
        if self.G.shape[2] < 1:
            raise PanelSchemaError("need at least one trajectory")
        if not np.all(np.isfinite(self.G)):
            raise InvalidParameterError("net totals must all be finite")

    @property
    def n_trajectories(self) -> int:
        return self.G.shape[2]

    def location_index(self, location: str) -> int:
        try:
            return self.locations.index(location)
        except ValueError:
            raise UnknownLocationError(location) from None


@dataclass(frozen=True)
class AgeSexNetMigration:
    """Per-age net migration, indexed [location, period, trajectory, sex, age].

    sigma carries the per-cell noise scale for the Bayesian method (the
    capped Eq.-style standard deviation); None for the point methods.
    """

    locations: tuple[str, ...]
    periods: tuple[str, ...]
    sexes: tuple[str, ...]
    grid: AgeGrid
    values: np.ndarray
    method: str
    sigma: np.ndarray | None = None

    def __post_init__(self) -> None:
        shape = (len(self.locations), len(self.periods), self.values.shape[2],
                 len(self.sexes), len(self.grid))
        if self.values.ndim != 5 or self.values.shape != shape:
            raise PanelSchemaError(
                f"values shape {self.values.shape} != {shape}")
        if self.sigma is not None and self.sigma.shape != self.values.shape:
            raise PanelSchemaError("sigma must match values in shape")

    @property
    def n_trajectories(self) -> int:
        return self.values.shape[2]

    def totals(self) -> np.ndarray:
        """Sum over sexes and ages: (locations, periods, trajectories)."""
        return self.values.sum(axis=(3, 4))


def _sex_shares(sex_share: float) -> np.ndarray:
    if not (0.0 < sex_share < 1.0):
        raise InvalidParameterError(
            f"sex_share must lie in (0, 1), got {sex_share!r}")
    return np.array([sex_share, 1.0 - sex_share])


def project_basic_rc(trajectories: TrajectorySet, theta: RCParams,
                     grid: AgeGrid, sex_share: float = 0.5,
                     ) -> AgeSexNetMigration:
    """Distribute each G^s over age with one fixed schedule.

    g^s_x = G^s * r_x(theta) / sum_y r_y(theta); no randomness beyond
    the trajectories themselves.
    """
    shares = _sex_shares(sex_share)
    r = rc_schedule(theta, grid)
    total = r.sum()
    if total <= 0:
        raise DegenerateScheduleError("schedule normalizer is zero")
    rho = r / total
    G_s = trajectories.G[:, :, :, None] * shares[None, None, None, :]
    values = G_s[..., None] * rho[None, None, None, None, :]
    return AgeSexNetMigration(trajectories.locations, trajectories.periods,
                              SEXES, grid, values, "basic")


def project_det_fdm(trajectories: TrajectorySet,
                    ratios: dict[str, RatioProfile] | RatioProfile,
                    theta_m: RCParams, populations,
                    m: float = 0.7, sex_share: float = 0.5,
                    ) -> AgeSexNetMigration:
    """Heuristic split of G^s, then the deterministic FDM per cell.

    Args:
        trajectories: totals to disaggregate.
        ratios: per-location ratio profiles (or one profile for all).
        theta_m: model schedule.
        populations: total population per (location, period) for the
            heuristic split base; used unchanged for each sex.
        m: gross-migration multiplier of the split.

    Same G implies the same output; the method adds no randomness.
    """
    shares = _sex_shares(sex_share)
    if m <= 0:
        raise InvalidParameterError(f"m must be positive, got {m!r}")
    P = np.asarray(populations, dtype=float)
    shape = (len(trajectories.locations), len(trajectories.periods))
    if P.shape != shape:
        raise PanelSchemaError(f"populations must have shape {shape}, "
                               f"got {P.shape}")
    if np.any(P <= 0):
        raise InvalidParameterError("populations must be positive")

    first_profile = ratios if isinstance(ratios, RatioProfile) else None
    grid = first_profile.grid if first_profile else next(iter(ratios.values())).grid
    L = trajectories.n_trajectories
    values = np.empty(shape + (L, 2, len(grid)))
    for i, loc in enumerate(trajectories.locations):
        prof = first_profile or ratios.get(loc)
        if prof is None:
            raise UnknownLocationError(loc)
        # split per sex: A = P*m + G^s/2, B = P*m - G^s/2 (never clamped)
        G_s = trajectories.G[i][:, :, None] * shares[None, None, :]
        base = P[i][:, None, None] * m
        A = base + 0.5 * G_s
        B = base - 0.5 * G_s
        low = np.minimum(A, B)
        if np.any(low < 0):
            t, l, s = np.unravel_index(int(np.argmin(low)), low.shape)
            raise InfeasibleSplitError(
                f"G={trajectories.G[i, t, l]:.1f} cannot be split with "
                f"P*m={base[t, 0, 0]:.1f} at location={loc!r} "
                f"period={trajectories.periods[t]!r} trajectory={l}; "
                f"increase m")
        # unit responses pick the two normalized weight vectors apart
        rho_in = det_fdm_net(1.0, 0.0, theta_m, prof)
        rho_out = -det_fdm_net(0.0, 1.0, theta_m, prof)
        values[i] = (A[..., None] * rho_in[None, None, None, :]
                     - B[..., None] * rho_out[None, None, None, :])
    return AgeSexNetMigration(trajectories.locations, trajectories.periods,
                              SEXES, grid, values, "det")


def scale_to_total(g_tilde: np.ndarray, sigma: np.ndarray,
                   A: float, B: float) -> np.ndarray:
    """Shift a noisy draw so its sum equals A - B exactly.

    The correction distributes the excess sum(g_tilde) + B - A over ages
    proportionally to sigma; cells that carried no noise move least.  A
    zero sigma vector falls back to uniform weights.
    """
    s = sigma.sum()
    w = sigma / s if s > 0 else np.full(g_tilde.shape, 1.0 / g_tilde.size)
    return g_tilde - w * (g_tilde.sum() + B - A)


def project_bayes_fdm(trajectories: TrajectorySet,
                      draws: dict[str, PosteriorDraws] | PosteriorDraws,
                      fit: MixedEffectsFit, grid: AgeGrid,
                      pop_local, pop_regional, pop_total,
                      horizon_scale: float = 10.0, sex_share: float = 0.5,
                      seed: int = 0) -> AgeSexNetMigration:
    """Posterior-driven disaggregation with noise and exact-total scaling.

    Per (location, period, trajectory, sex): the mixed-effects fit
    splits G^s into (A^s, B^s); the posterior draw paired to the
    trajectory supplies both schedules and v; flows are population-
    weighted normalized schedules (regional weights inbound, local
    outbound); each cell draws Gaussian noise with variance
    min((iota + o) / v, (P^s_x / 2)^2); finally the draw is shifted so
    its sum is exactly A^s - B^s.

    Args:
        draws: posterior draws per location (one set may serve all).
        pop_local / pop_regional: per-age weight vectors per location,
            shape (K,) shared by both sexes (split by sex_share) or
            (2, K) per sex; dict by location or an array over locations.
        pop_total: (locations, periods) population for the rate base.
        seed: trajectory l uses the (seed, l) RNG substream; cells are
            consumed in (location, period, sex) order within it.

    Returns:
        AgeSexNetMigration with sigma populated.
    """
    shares = _sex_shares(sex_share)
    locs, pers = trajectories.locations, trajectories.periods
    K = len(grid)
    L = trajectories.n_trajectories
    P = np.asarray(pop_total, dtype=float)
    if P.shape != (len(locs), len(pers)):
        raise PanelSchemaError(
            f"pop_total must have shape {(len(locs), len(pers))}, got {P.shape}")

    def per_location(source, name):
        out = np.empty((len(locs), 2, K))
        for i, loc in enumerate(locs):
            if isinstance(source, dict):
                try:
                    vec = np.asarray(source[loc], dtype=float)
                except KeyError:
                    raise UnknownLocationError(loc) from None
            else:
                vec = np.asarray(source, dtype=float)[i]
            if vec.shape == (K,):
                out[i] = shares[:, None] * vec[None, :]
            elif vec.shape == (2, K):
                out[i] = vec
            else:
                raise PanelSchemaError(
                    f"{name} for {loc!r} must have shape ({K},) or (2, {K}), "
                    f"got {vec.shape}")
        if np.any(out < 0) or not np.all(np.isfinite(out)):
            raise InvalidParameterError(f"{name} must be finite and >= 0")
        return out

    PL = per_location(pop_local, "pop_local")
    PW = per_location(pop_regional, "pop_regional")

    mids = grid.midpoints
    # per location: schedules and v of the draws paired to trajectories
    rho_in = np.empty((len(locs), L, 2, K))
    rho_out = np.empty((len(locs), L, 2, K))
    v = np.empty((len(locs), L))
    for i, loc in enumerate(locs):
        d = draws[loc] if isinstance(draws, dict) else draws
        if isinstance(draws, dict) and d is None:
            raise UnknownLocationError(loc)
        k_idx = d.evened_indices(L)
        cin = rc_curve_matrix(d.params[k_idx, 0:11], mids)
        cout = rc_curve_matrix(d.params[k_idx, 11:22], mids)
        v[i] = d.v_values[k_idx]
        for s in range(2):
            win = cin * PW[i, s][None, :]
            wout = cout * PL[i, s][None, :]
            din = win.sum(axis=1, keepdims=True)
            dout = wout.sum(axis=1, keepdims=True)
            if np.any(din <= 0) or np.any(dout <= 0):
                raise DegenerateScheduleError(
                    f"a drawn schedule collapsed to zero at location={loc!r}")
            rho_in[i, :, s] = win / din
            rho_out[i, :, s] = wout / dout

    values = np.empty((len(locs), len(pers), L, 2, K))
    sigma = np.empty_like(values)
    cap = (PL / 2.0) ** 2
    for l in range(L):
        rng = np.random.default_rng([seed, l])
        for i, loc in enumerate(locs):
            for t in range(len(pers)):
                for s in range(2):
                    G_s = float(trajectories.G[i, t, l] * shares[s])
                    entry = predict_A(fit, G_s, float(P[i, t] * shares[s]),
                                      horizon_scale, loc)
                    iota = entry.A * rho_in[i, l, s]
                    o = entry.B * rho_out[i, l, s]
                    var = np.minimum((iota + o) / v[i, l], cap[i, s])
                    sig = np.sqrt(var)
                    g_tilde = iota - o + rng.standard_normal(K) * sig
                    values[i, t, l, s] = scale_to_total(
                        g_tilde, sig, entry.A, entry.B)
                    sigma[i, t, l, s] = sig
    return AgeSexNetMigration(locs, pers, SEXES, grid, values, "bayes", sigma)


def cohort_component_step(population, survival, births, net_migration,
                          survival_birth: float = 1.0) -> np.ndarray:
    """One cohort-shift step: survive, age by one group, add migration.

    P'_{x+1} = P_x * s_x + g_{x+1}; the first group holds
    births * survival_birth + g_0; the open terminal group accumulates
    its own survivors (at the last supplied ratio) plus arrivals from
    below.  Negative results are floored at zero with a warning.

    Args:
        population: per-age counts, shape (..., K).
        survival: K-1 ratios in [0, 1] between consecutive groups.
        births: births during the step, shape matching the leading axes.
        net_migration: signed per-age counts, shape (..., K).
    """
    P = np.asarray(population, dtype=float)
    g = np.asarray(net_migration, dtype=float)
    s = np.asarray(survival, dtype=float)
    K = P.shape[-1]
    if g.shape != P.shape:
        raise PanelSchemaError(
            f"net_migration shape {g.shape} != population shape {P.shape}")
    if s.shape != (K - 1,):
        raise PanelSchemaError(
            f"survival must have {K - 1} ratios for {K} groups, got {s.shape}")
    if np.any(s < 0) or np.any(s > 1):
        raise InvalidParameterError("survival ratios must lie in [0, 1]")
    if not (0.0 <= survival_birth <= 1.0):
        raise InvalidParameterError("survival_birth must lie in [0, 1]")
    b = np.asarray(births, dtype=float)
    if np.any(b < 0):
        raise InvalidParameterError("births must be >= 0")

    out = np.empty_like(P)
    out[..., 0] = b * survival_birth + g[..., 0]
    out[..., 1:-1] = P[..., :-2] * s[:-1] + g[..., 1:-1]
    out[..., -1] = (P[..., -2] + P[..., -1]) * s[-1] + g[..., -1]
    neg = out < 0
    if np.any(neg):
        warnings.warn(
            f"cohort step floored {int(neg.sum())} negative population "
            f"cell(s) at zero", RuntimeWarning, stacklevel=2)
        out = np.where(neg, 0.0, out)
    return out


# -- serialization -----------------------------------------------------------

def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def load_trajectories(path) -> TrajectorySet:
    """Read `location, period, trajectory, net_total` rows.

    Trajectory ids may be any integers; they are sorted and reindexed
    from 0.  Every (location, period, trajectory) cell must be present
    exactly once.
    """
    rows: dict[tuple[str, str, int], float] = {}
    locs: list[str] = []
    pers: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(c.strip() for c in next(reader, ()))
        if header != TRAJECTORY_HEADER:
            raise PanelSchemaError(
                f"{path}: header {header} does not match {TRAJECTORY_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise PanelParseError(
                    f"line {lineno}: expected 4 columns, got {len(row)}")
            loc, per = row[0].strip(), row[1].strip()
            if not loc or not per:
                raise PanelParseError(f"line {lineno}: empty identifier column")
            try:
                l = int(row[2])
                val = float(row[3])
            except ValueError:
                raise PanelParseError(
                    f"line {lineno}: bad trajectory or net_total") from None
            key = (loc, per, l)
            if key in rows:
                raise PanelParseError(f"line {lineno}: duplicate cell {key}")
            rows[key] = val
            if loc not in locs:
                locs.append(loc)
            if per not in pers:
                pers.append(per)
    if not rows:
        raise PanelSchemaError(f"{path}: no trajectory rows")
    ids = sorted({k[2] for k in rows})
    G = np.empty((len(locs), len(pers), len(ids)))
    for i, loc in enumerate(locs):
        for t, per in enumerate(pers):
            for l, tid in enumerate(ids):
                try:
                    G[i, t, l] = rows[(loc, per, tid)]
                except KeyError:
                    raise PanelConsistencyError(
                        f"missing cell: location={loc!r} period={per!r} "
                        f"trajectory={tid}") from None
    return TrajectorySet(tuple(locs), tuple(pers), G)


def save_trajectories(trajectories: TrajectorySet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(TRAJECTORY_HEADER) + "\n")
        for i, loc in enumerate(trajectories.locations):
            for t, per in enumerate(trajectories.periods):
                for l in range(trajectories.n_trajectories):
                    fh.write(f"{loc},{per},{l},"
                             f"{_fmt(trajectories.G[i, t, l])}\n")


def save_projection_csv(result: AgeSexNetMigration, path) -> None:
    """Long-format cell dump; one row per projected cell."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(PROJECTION_HEADER) + "\n")
        for i, loc in enumerate(result.locations):
            for t, per in enumerate(result.periods):
                for l in range(result.n_trajectories):
                    for s, sex in enumerate(result.sexes):
                        for x, age in enumerate(result.grid.labels):
                            fh.write(f"{loc},{per},{l},{sex},{age},"
                                     f"{_fmt(result.values[i, t, l, s, x])}\n")


def load_projection_csv(path, method: str = "") -> AgeSexNetMigration:
    """Read a long-format projection back into the dense array form."""
    rows: dict[tuple[str, str, int, str, str], float] = {}
    locs: list[str] = []
    pers: list[str] = []
    ages: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(c.strip() for c in next(reader, ()))
        if header != PROJECTION_HEADER:
            raise PanelSchemaError(
                f"{path}: header {header} does not match {PROJECTION_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 6:
                raise PanelParseError(
                    f"line {lineno}: expected 6 columns, got {len(row)}")
            loc, per, sex, age = (row[0].strip(), row[1].strip(),
                                  row[3].strip(), row[4].strip())
            if sex not in SEXES:
                raise PanelParseError(
                    f"line {lineno}: sex must be one of {SEXES}, got {sex!r}")
            try:
                l = int(row[2])
                val = float(row[5])
            except ValueError:
                raise PanelParseError(
                    f"line {lineno}: bad trajectory or net_migration") from None
            key = (loc, per, l, sex, age)
            if key in rows:
                raise PanelParseError(f"line {lineno}: duplicate cell {key}")
            rows[key] = val
            if loc not in locs:
                locs.append(loc)
            if per not in pers:
                pers.append(per)
            if age not in ages:
                ages.append(age)
    if not rows:
        raise PanelSchemaError(f"{path}: no projection rows")
    ids = sorted({k[2] for k in rows})
    grid = AgeGrid.from_labels(ages)
    values = np.empty((len(locs), len(pers), len(ids), len(SEXES), len(ages)))
    for i, loc in enumerate(locs):
        for t, per in enumerate(pers):
            for l, tid in enumerate(ids):
                for s, sex in enumerate(SEXES):
                    for x, age in enumerate(ages):
                        try:
                            values[i, t, l, s, x] = rows[(loc, per, tid,
                                                          sex, age)]
                        except KeyError:
                            raise PanelConsistencyError(
                                f"missing cell: location={loc!r} "
                                f"period={per!r} trajectory={tid} "
                                f"sex={sex!r} age_group={age!r}") from None
    return AgeSexNetMigration(tuple(locs), tuple(pers), SEXES, grid,
                              values, method)


def summarize_projection(result: AgeSexNetMigration) -> np.ndarray:
    """Across-trajectory bands, (locations, periods, sexes, ages, 5).

    The last axis follows (lo95, lo80, median, hi80, hi95).
    """
    q = np.quantile(result.values, _BAND_Q, axis=2)
    return np.moveaxis(q, 0, -1)


def save_projection_summary(result: AgeSexNetMigration, path) -> None:
    bands = summarize_projection(result)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(SUMMARY_HEADER) + "\n")
        for i, loc in enumerate(result.locations):
            for t, per in enumerate(result.periods):
                for s, sex in enumerate(result.sexes):
                    for x, age in enumerate(result.grid.labels):
                        row = ",".join(_fmt(v) for v in bands[i, t, s, x])
                        fh.write(f"{loc},{per},{sex},{age},{row}\n")
