"""Splitting total net migration G into in-flow A and out-flow B.

Two routes: a heuristic split around a gross-migration level P*m, and a
random-intercept mixed-effects model fitted to observed in-migration
rates.  Infeasible splits (negative A or B) are hard errors, never
clamped, so A - B = G always holds exactly.

The mixed-effects model is IMR = beta0_i + beta1 * NMR + eps with
beta0_i ~ N(beta0, var_between) and eps ~ N(0, var_within), fitted by
profile maximum likelihood: for a fixed variance ratio psi =
var_between / var_within the GLS estimate and the profiled variance are
closed-form, leaving a one-dimensional optimization over psi.  The rate
floor applies only at prediction time.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (
    DegenerateFitError,
    InfeasibleSplitError,
    InvalidParameterError,
    PanelParseError,
    PanelSchemaError,
    UnknownLocationError,
)

# default gross-migration multiplier for 10-year panels; 0.07 annualized
DEFAULT_M_10YR = 0.7
DEFAULT_M_1YR = 0.07

RATE_HEADER = ("location", "period", "in_rate", "net_rate")
DECOMP_HEADER = ("location", "period", "net_total", "in_total", "out_total", "method")


@dataclass(frozen=True)
class FlowEntry:
    """One (location, period) decomposition: G = A - B."""

    G: float
    A: float
    B: float
    method: str

    def __post_init__(self) -> None:
        if self.A < 0 or self.B < 0:
            raise InfeasibleSplitError(
                f"A={self.A:.3f}, B={self.B:.3f} must both be nonnegative")
        # tolerance scales with flow size: A - B cancels at large A, B
        tol = 1e-9 * max(1.0, abs(self.A), abs(self.B))
        if abs((self.A - self.B) - self.G) > tol:
            raise InvalidParameterError(
                f"A - B = {self.A - self.B!r} must equal G = {self.G!r}")


@dataclass(frozen=True)
class FlowDecomposition:
    """Per (location, period) totals G, A, B plus the split method."""

    locations: tuple[str, ...]
    periods: tuple[str, ...]
    G: np.ndarray
    A: np.ndarray
    B: np.ndarray
    method: str

    def __post_init__(self) -> None:
        shape = (len(self.locations), len(self.periods))
        for name in ("G", "A", "B"):
            if getattr(self, name).shape != shape:
                raise PanelSchemaError(f"{name} shape must be {shape}")
        if np.any(self.A < 0) or np.any(self.B < 0):
            raise InfeasibleSplitError("A and B must be nonnegative everywhere")
        tol = 1e-9 * np.maximum(1.0, np.maximum(np.abs(self.A), np.abs(self.B)))
        if np.any(np.abs((self.A - self.B) - self.G) > tol):
            raise InvalidParameterError("A - B must equal G everywhere")

    def entry(self, location: str, period: str) -> FlowEntry:
        i = self.locations.index(location)
        t = self.periods.index(period)
        return FlowEntry(float(self.G[i, t]), float(self.A[i, t]),
                         float(self.B[i, t]), self.method)


def heuristic_decompose(G: float, P: float, m: float = DEFAULT_M_10YR) -> FlowEntry:
    """Split G around the gross level P*m: A = P*m + G/2, B = P*m - G/2.

    Args:
        G: total net migration (persons, signed).
        P: population of the location (persons).
        m: gross-migration multiplier; 0.7 is the 10-year default.

    Raises:
        InfeasibleSplitError: if either side would go negative; the fix is
            a larger m.
    """
    if P <= 0:
        raise InvalidParameterError(f"P must be positive, got {P!r}")
    if m <= 0:
        raise InvalidParameterError(f"m must be positive, got {m!r}")
    A = P * m + 0.5 * G
    B = P * m - 0.5 * G
    if A < 0 or B < 0:
        raise InfeasibleSplitError(
            f"G={G} cannot be split with P*m={P * m}; increase m "
            f"(A={A:.1f}, B={B:.1f})")
    return FlowEntry(float(G), float(A), float(B), "heuristic")


def decompose_panel(totals: np.ndarray, populations: np.ndarray,
                    locations, periods, m: float = DEFAULT_M_10YR,
                    ) -> FlowDecomposition:
    """heuristic_decompose applied to every (location, period) cell."""
    G = np.asarray(totals, dtype=float)
    P = np.asarray(populations, dtype=float)
    A = P * m + 0.5 * G
    B = P * m - 0.5 * G
    if np.any(A < 0) or np.any(B < 0):
        i, t = np.unravel_index(int(np.argmin(np.minimum(A, B))), A.shape)
        raise InfeasibleSplitError(
            f"infeasible split at location={locations[i]!r} "
            f"period={periods[t]!r}; increase m")
    return FlowDecomposition(tuple(locations), tuple(periods), G, A, B,
                             "heuristic")


@dataclass(frozen=True)
class RatePanel:
    """Observed annual in-migration and net migration rates."""

    locations: tuple[str, ...]
    periods: tuple[str, ...]
    imr: np.ndarray
    nmr: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.locations)
        if len(self.periods) != n or len(self.imr) != n or len(self.nmr) != n:
            raise PanelSchemaError("rate panel columns must align")
        if np.any(self.imr < 0):
            raise PanelSchemaError("in-migration rates must be >= 0")


def load_rate_panel(path) -> RatePanel:
    locs: list[str] = []
    pers: list[str] = []
    imr: list[float] = []
    nmr: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(c.strip() for c in next(reader))
        if header != RATE_HEADER:
            raise PanelSchemaError(
                f"{path}: header {header} does not match {RATE_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise PanelParseError(
                    f"line {lineno}: expected 4 columns, got {len(row)}")
            locs.append(row[0].strip())
            pers.append(row[1].strip())
            try:
                imr.append(float(row[2]))
                nmr.append(float(row[3]))
            except ValueError:
                raise PanelParseError(f"line {lineno}: bad rate value") from None
    if not locs:
        raise PanelSchemaError(f"{path}: no observations")
    return RatePanel(tuple(locs), tuple(pers), np.array(imr), np.array(nmr))


def save_rate_panel(panel: RatePanel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(RATE_HEADER) + "\n")
        for loc, per, a, b in zip(panel.locations, panel.periods,
                                  panel.imr, panel.nmr):
            fh.write(f"{loc},{per},{float(a)!r},{float(b)!r}\n")


@dataclass(frozen=True)
class MixedEffectsFit:
    """Random-intercept model estimates on the annual rate scale."""

    beta0: float
    beta1: float
    intercepts: dict[str, float]
    var_between: float
    var_within: float
    imr_min: float

    def __post_init__(self) -> None:
        if self.var_between < 0 or self.var_within < 0:
            raise InvalidParameterError("variances must be nonnegative")
        if self.imr_min < 0:
            raise InvalidParameterError("IMR_min must be nonnegative")

    def intercept_for(self, location: str | None) -> float:
        if location is None:
            return self.beta0
        return self.intercepts.get(location, self.beta0)


def fit_mixed_effects(data: RatePanel, imr_min: float = 0.02) -> MixedEffectsFit:
    """Profile-ML fit of the random-intercept model.

    Args:
        data: observed (IMR, NMR) pairs per location and period.
        imr_min: annual floor stored for prediction time; not used in
            fitting.

    Returns:
        MixedEffectsFit with ML variance components and empirical-Bayes
        (shrunken) per-location intercepts.

    Raises:
        DegenerateFitError: fewer than 2 locations, all NMR identical, or
            no location observed twice.
    """
    locs = sorted(set(data.locations))
    if len(locs) < 2:
        raise DegenerateFitError("need at least 2 locations")
    groups = {loc: np.flatnonzero(np.asarray(data.locations) == loc)
              for loc in locs}
    if max(len(ix) for ix in groups.values()) < 2:
        raise DegenerateFitError("need repeated observations for some location")
    y = np.asarray(data.imr, dtype=float)
    x = np.asarray(data.nmr, dtype=float)
    if np.ptp(x) == 0:
        raise DegenerateFitError("all net rates identical; slope unidentified")
    N = len(y)

    idx = [groups[loc] for loc in locs]
    sizes = np.array([len(ix) for ix in idx])

    def gls(psi: float):
        # V_i^{-1} = I - (psi / (1 + n_i psi)) 11^T, up to var_within
        shrink = psi / (1.0 + sizes * psi)
        xtx = np.zeros((2, 2))
        xty = np.zeros(2)
        for ix, s in zip(idx, shrink):
            Xi = np.column_stack([np.ones(len(ix)), x[ix]])
            yi = y[ix]
            xs, ys = Xi.sum(axis=0), yi.sum()
            xtx += Xi.T @ Xi - s * np.outer(xs, xs)
            xty += Xi.T @ yi - s * xs * ys
        try:
            beta = np.linalg.solve(xtx, xty)
        except np.linalg.LinAlgError:
            raise DegenerateFitError("singular design") from None
        rss = 0.0
        for ix, s in zip(idx, shrink):
            r = y[ix] - beta[0] - beta[1] * x[ix]
            rss += r @ r - s * r.sum() ** 2
        return beta, rss

    def neg_profile_ll(log_psi: float) -> float:
        psi = math.exp(log_psi)
        _, rss = gls(psi)
        sigma2 = rss / N
        return N * math.log(max(sigma2, 1e-300)) + float(
            np.log1p(sizes * psi).sum())

    res = minimize_scalar(neg_profile_ll, bounds=(-12.0, 8.0), method="bounded",
                          options={"xatol": 1e-8})
    # compare against the psi -> 0 boundary (no between-location variance)
    psi = math.exp(res.x)
    if neg_profile_ll(-40.0) <= res.fun:
        psi = 0.0
    beta, rss = gls(psi)
    var_within = rss / N
    var_between = psi * var_within

    # empirical-Bayes shrinkage of per-location mean residuals
    intercepts: dict[str, float] = {}
    for loc, ix in zip(locs, idx):
        r = y[ix] - beta[0] - beta[1] * x[ix]
        n_i = len(ix)
        shrink = n_i * psi / (1.0 + n_i * psi)
        intercepts[loc] = float(beta[0] + shrink * r.mean())

    return MixedEffectsFit(float(beta[0]), float(beta[1]), intercepts,
                           float(var_between), float(var_within),
                           float(imr_min))


def apply_outlier_policy(fit: MixedEffectsFit, outliers) -> MixedEffectsFit:
    """Replace listed locations' intercepts with the global mean."""
    outliers = list(outliers)
    unknown = [loc for loc in outliers if loc not in fit.intercepts]
    if unknown:
        raise UnknownLocationError(f"unknown location(s): {unknown}")
    new = dict(fit.intercepts)
    for loc in outliers:
        new[loc] = fit.beta0
    return replace(fit, intercepts=new)


def predict_A(fit: MixedEffectsFit, G: float, P: float,
              horizon_scale: float = 10.0,
              location: str | None = None) -> FlowEntry:
    """Totals split via the fitted rates: Eq-style count prediction.

    A = max(beta0_i * h * P + beta1 * G, IMR_min * h * P); B = A - G.
    Intercepts and the floor scale with the horizon (h years); the slope
    does not.

    Raises:
        InfeasibleSplitError: if B = A - G < 0 (G larger than predicted A).
    """
    if P <= 0:
        raise InvalidParameterError(f"P must be positive, got {P!r}")
    if horizon_scale < 1:
        raise InvalidParameterError("horizon_scale must be >= 1")
    b0 = fit.intercept_for(location)
    A = max(b0 * horizon_scale * P + fit.beta1 * G,
            fit.imr_min * horizon_scale * P)
    B = A - G
    if B < 0:
        raise InfeasibleSplitError(
            f"predicted A={A:.3f} smaller than G={G}; B would be {B:.3f}")
    return FlowEntry(float(G), float(A), float(B), "mixed-effects")


def save_fit(fit: MixedEffectsFit, path) -> None:
    """Key-value text serialization, one `name = value` per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"beta0 = {fit.beta0!r}\n")
        fh.write(f"beta1 = {fit.beta1!r}\n")
        fh.write(f"var_between = {fit.var_between!r}\n")
        fh.write(f"var_within = {fit.var_within!r}\n")
        fh.write(f"imr_min = {fit.imr_min!r}\n")
        for loc in sorted(fit.intercepts):
            fh.write(f"intercept.{loc} = {fit.intercepts[loc]!r}\n")


def load_fit(path) -> MixedEffectsFit:
    scalars: dict[str, float] = {}
    intercepts: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            key = key.strip()
            if not sep:
                raise PanelParseError(f"line {lineno}: expected 'key = value'")
            try:
                v = float(val)
            except ValueError:
                raise PanelParseError(f"line {lineno}: bad number {val!r}") from None
            if key.startswith("intercept."):
                intercepts[key[len("intercept."):]] = v
            else:
                scalars[key] = v
    missing = {"beta0", "beta1", "var_between", "var_within", "imr_min"} - set(scalars)
    if missing:
        raise PanelParseError(f"fit file misses keys: {sorted(missing)}")
    return MixedEffectsFit(scalars["beta0"], scalars["beta1"], intercepts,
                           scalars["var_between"], scalars["var_within"],
                           scalars["imr_min"])


def save_decomposition(d: FlowDecomposition, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(DECOMP_HEADER) + "\n")
        for i, loc in enumerate(d.locations):
            for t, per in enumerate(d.periods):
                fh.write(f"{loc},{per},{float(d.G[i, t])!r},"
                         f"{float(d.A[i, t])!r},{float(d.B[i, t])!r},"
                         f"{d.method}\n")


def load_decomposition(path) -> FlowDecomposition:
    rows: dict[tuple[str, str], tuple[float, float, float]] = {}
    methods: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(c.strip() for c in next(reader))
        if header != DECOMP_HEADER:
            raise PanelSchemaError(
                f"{path}: header {header} does not match {DECOMP_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 6:
                raise PanelParseError(
                    f"line {lineno}: expected 6 columns, got {len(row)}")
            try:
                rows[(row[0].strip(), row[1].strip())] = (
                    float(row[2]), float(row[3]), float(row[4]))
            except ValueError:
                raise PanelParseError(f"line {lineno}: bad number") from None
            methods.add(row[5].strip())
    if not rows:
        raise PanelSchemaError(f"{path}: no rows")
    locations = tuple(sorted({k[0] for k in rows}))
    periods = tuple(sorted({k[1] for k in rows}))
    G = np.empty((len(locations), len(periods)))
    A = np.empty_like(G)
    B = np.empty_like(G)
    for i, loc in enumerate(locations):
        for t, per in enumerate(periods):
            if (loc, per) not in rows:
                raise PanelParseError(
                    f"missing entry: location={loc!r} period={per!r}")
            G[i, t], A[i, t], B[i, t] = rows[(loc, per)]
    method = methods.pop() if len(methods) == 1 else "mixed"
    return FlowDecomposition(locations, periods, G, A, B, method)
