"""Validation metrics: MAE, RMSE, bias, and interval coverage.

Arrays follow the panel layout with age as the leading axis; an
ensemble estimate adds one leading draw axis on top of that.  Metrics
run on three scales:

  counts   persons, as given
  per-100  migrants per 100 residents of the age group
  shares   migration as % of the location-period total population

The point estimate of an ensemble is its cell-wise median; intervals
are equal-tailed central quantile intervals.  Point estimates carry no
coverage columns.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError, PanelSchemaError

SCALES = ("counts", "per-100", "shares")

REPORT_HEADER = ("scale", "method", "mae", "rmse", "bias",
                 "cov80", "cov95", "n_cells")

_COV80_Q = (0.10, 0.90)
_COV95_Q = (0.025, 0.975)


@dataclass(frozen=True)
class ValidationReport:
    """Scalar metrics for one method on one scale."""

    scale: str
    method: str
    mae: float
    rmse: float
    bias: float
    cov80: float | None
    cov95: float | None
    n_cells: int

    def __post_init__(self) -> None:
        if self.scale not in SCALES:
            raise InvalidParameterError(
                f"scale must be one of {SCALES}, got {self.scale!r}")
        if self.mae < 0 or self.rmse < self.mae - 1e-12:
            raise InvalidParameterError("need RMSE >= MAE >= 0")
        for cov in (self.cov80, self.cov95):
            if cov is not None and not (0.0 <= cov <= 100.0):
                raise InvalidParameterError("coverage must lie in [0, 100]")


def _scale_denominator(scale: str,
                       populations: np.ndarray | None) -> np.ndarray | None:
    """Denominator for 100*value/denom, shaped like truth (or broadcastable)."""
    if scale == "counts":
        return None
    if populations is None:
        raise InvalidParameterError(f"scale {scale!r} requires populations")
    if np.any(populations <= 0):
        raise InvalidParameterError("populations must be positive")
    if scale == "per-100":
        return populations
    # shares: denominator is the location-period total over ages
    return populations.sum(axis=0, keepdims=True)


def _to_scale(values: np.ndarray, denom: np.ndarray | None) -> np.ndarray:
    if denom is None:
        return values
    return 100.0 * values / denom


def _check_alignment(estimates: np.ndarray, truth: np.ndarray) -> bool:
    """True when the estimate carries a leading draw axis."""
    if estimates.shape == truth.shape:
        return False
    if estimates.ndim == truth.ndim + 1 and estimates.shape[1:] == truth.shape:
        if estimates.shape[0] < 2:
            raise PanelSchemaError("an ensemble needs at least 2 draws")
        return True
    raise PanelSchemaError(
        f"estimates shape {estimates.shape} does not match truth "
        f"{truth.shape} (optionally with a leading draw axis)")


def score_point(estimates, truth, scale: str = "counts",
                populations=None, method: str = "") -> ValidationReport:
    """Five-metric score of one method against per-cell truth.

    Args:
        estimates: per-cell values shaped like truth, or an ensemble
            with one extra leading draw axis.
        truth: observed values, age axis first.
        scale: one of `SCALES`; non-count scales need populations
            shaped like truth.
        method: label carried into the report.

    Returns:
        ValidationReport; coverage is None for point estimates.
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if scale not in SCALES:
        raise InvalidParameterError(f"scale must be one of {SCALES}, got {scale!r}")
    is_ensemble = _check_alignment(est, tru)
    pop = None if populations is None else np.asarray(populations, dtype=float)
    if pop is not None and pop.shape != tru.shape:
        raise PanelSchemaError(
            f"populations shape {pop.shape} != truth shape {tru.shape}")

    denom = _scale_denominator(scale, pop)
    tru_s = _to_scale(tru, denom)
    if is_ensemble:
        est_s = _to_scale(est, denom)
        point = np.median(est_s, axis=0)
        lo80, hi80 = np.quantile(est_s, _COV80_Q, axis=0)
        lo95, hi95 = np.quantile(est_s, _COV95_Q, axis=0)
        cov80 = 100.0 * np.mean((lo80 <= tru_s) & (tru_s <= hi80))
        cov95 = 100.0 * np.mean((lo95 <= tru_s) & (tru_s <= hi95))
    else:
        point = _to_scale(est, denom)
        cov80 = cov95 = None
    err = point - tru_s
    return ValidationReport(
        scale, method,
        mae=float(np.mean(np.abs(err))),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        bias=float(np.mean(err)),
        cov80=None if cov80 is None else float(cov80),
        cov95=None if cov95 is None else float(cov95),
        n_cells=int(tru.size))


def by_age_profile(estimates, truth, populations=None,
                   ) -> dict[str, np.ndarray]:
    """Per-age MAE and bias, aggregated over all trailing axes.

    Returns arrays of length K (the leading age axis) keyed
    mae_counts, bias_counts and, when populations are given,
    mae_per100, bias_per100.
    """
    est = np.asarray(estimates, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if _check_alignment(est, tru):
        est = np.median(est, axis=0)
    axes = tuple(range(1, tru.ndim))
    err = est - tru
    out = {"mae_counts": np.mean(np.abs(err), axis=axes),
           "bias_counts": np.mean(err, axis=axes)}
    if populations is not None:
        pop = np.asarray(populations, dtype=float)
        if pop.shape != tru.shape:
            raise PanelSchemaError(
                f"populations shape {pop.shape} != truth shape {tru.shape}")
        if np.any(pop <= 0):
            raise InvalidParameterError("populations must be positive")
        err_r = 100.0 * err / pop
        out["mae_per100"] = np.mean(np.abs(err_r), axis=axes)
        out["bias_per100"] = np.mean(err_r, axis=axes)
    return out


def _cell(value: float | None, width: int) -> str:
    if value is None:
        return "-".rjust(width)
    return f"{value:.1f}".rjust(width)


def format_report_table(reports) -> str:
    """Aligned-column text table, one row per (scale, method)."""
    rows = [("Scale", "Method", "MAE", "RMSE", "Bias", "cov80", "cov95")]
    for r in reports:
        rows.append((r.scale, r.method, f"{r.mae:.1f}", f"{r.rmse:.1f}",
                     f"{r.bias:.1f}",
                     "-" if r.cov80 is None else f"{r.cov80:.1f}",
                     "-" if r.cov95 is None else f"{r.cov95:.1f}"))
    widths = [max(len(row[c]) for row in rows) for c in range(7)]
    lines = []
    for row in rows:
        left = row[0].ljust(widths[0]) + "  " + row[1].ljust(widths[1])
        right = "  ".join(v.rjust(w) for v, w in zip(row[2:], widths[2:]))
        lines.append(left + "  " + right)
    return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def save_reports_csv(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for r in reports:
            w.writerow((r.scale, r.method, _fmt(r.mae), _fmt(r.rmse),
                        _fmt(r.bias),
                        "" if r.cov80 is None else _fmt(r.cov80),
                        "" if r.cov95 is None else _fmt(r.cov95),
                        r.n_cells))


def load_reports_csv(path) -> list[ValidationReport]:
    out: list[ValidationReport] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(c.strip() for c in next(reader, ()))
        if header != REPORT_HEADER:
            raise PanelSchemaError(
                f"{path}: header {header} does not match {REPORT_HEADER}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            out.append(ValidationReport(
                row[0], row[1], float(row[2]), float(row[3]), float(row[4]),
                float(row[5]) if row[5] else None,
                float(row[6]) if row[6] else None,
                int(row[7])))
    return out


def save_age_profile_csv(profile: dict[str, np.ndarray], labels, path) -> None:
    keys = sorted(profile)
    K = len(next(iter(profile.values())))
    if len(labels) != K:
        raise PanelSchemaError(f"{K} profile rows but {len(labels)} labels")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(("age_group",) + tuple(keys)) + "\n")
        for x, lab in enumerate(labels):
            vals = ",".join(_fmt(profile[k][x]) for k in keys)
            fh.write(f"{lab},{vals}\n")
