"""Rogers-Castro migration schedules.

The multiexponential curve has up to four components: child (a1, alpha1),
labor (a2, alpha2, mu2, lambda2), retirement (a3, alpha3, mu3, lambda3)
and a constant c.  A component is "absent" iff all of its parameters are
exactly zero; absence is derived from the values, never stored.

Grouped ages are evaluated at interval midpoints (2.5 for 0-4, ...); the
open terminal group uses its lower bound plus 2.5 years.  This is a
convention, not a property of the curve: integrating over the interval
would give slightly different grouped rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateScheduleError, InvalidParameterError, PanelSchemaError

RC_FIELDS = ("a1", "alpha1", "a2", "alpha2", "mu2", "lambda2",
             "a3", "alpha3", "mu3", "lambda3", "c")


@dataclass(frozen=True)
class RCParams:
    """The 11-parameter Rogers-Castro vector."""

    a1: float = 0.0
    alpha1: float = 0.0
    a2: float = 0.0
    alpha2: float = 0.0
    mu2: float = 0.0
    lambda2: float = 0.0
    a3: float = 0.0
    alpha3: float = 0.0
    mu3: float = 0.0
    lambda3: float = 0.0
    c: float = 0.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v) or v < 0:
                raise InvalidParameterError(
                    f"RCParams.{f.name} must be finite and >= 0, got {v!r}")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in RC_FIELDS], dtype=float)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "RCParams":
        if len(values) != len(RC_FIELDS):
            raise InvalidParameterError(
                f"expected {len(RC_FIELDS)} parameters, got {len(values)}")
        return cls(**{n: float(v) for n, v in zip(RC_FIELDS, values)})

    @property
    def has_child(self) -> bool:
        return not (self.a1 == 0 and self.alpha1 == 0)

    @property
    def has_labor(self) -> bool:
        return not (self.a2 == 0 and self.alpha2 == 0
                    and self.mu2 == 0 and self.lambda2 == 0)

    @property
    def has_retirement(self) -> bool:
        return not (self.a3 == 0 and self.alpha3 == 0
                    and self.mu3 == 0 and self.lambda3 == 0)

    def to_kv(self) -> str:
        """Flat key-value text; one `name = value` line per field."""
        return "".join(f"{n} = {float(getattr(self, n))!r}\n"
                       for n in RC_FIELDS)

    @classmethod
    def from_kv(cls, text: str) -> "RCParams":
        """Parse key-value text; missing component fields default to 0."""
        values: dict[str, float] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, val = line.partition("=")
            key = key.strip()
            if not sep or key not in RC_FIELDS:
                raise InvalidParameterError(
                    f"line {lineno}: expected '<field> = <value>' with a "
                    f"Rogers-Castro field name, got {raw!r}")
            try:
                values[key] = float(val)
            except ValueError as exc:
                raise InvalidParameterError(
                    f"line {lineno}: bad number {val.strip()!r}") from exc
        return cls(**values)


@dataclass(frozen=True)
class AgeGrid:
    """Contiguous age groups; the last one is open-ended.

    labels:  display labels like "0-4" or "95+"
    lowers:  lower bound of each group in years
    widths:  group widths in years; the terminal open group has width nan
    """

    labels: tuple[str, ...]
    lowers: tuple[float, ...]
    widths: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.labels) != len(self.lowers) or len(self.labels) != len(self.widths):
            raise PanelSchemaError("labels, lowers and widths must align")
        if len(self.labels) < 1:
            raise PanelSchemaError("grid needs at least one group")
        for k in range(len(self.lowers) - 1):
            if not self.lowers[k] < self.lowers[k + 1]:
                raise PanelSchemaError("lower bounds must strictly increase")
            if not math.isfinite(self.widths[k]):
                raise PanelSchemaError("only the terminal group may be open")
            if self.lowers[k] + self.widths[k] != self.lowers[k + 1]:
                raise PanelSchemaError(
                    f"groups must be contiguous; gap after {self.labels[k]}")
        if math.isfinite(self.widths[-1]):
            raise PanelSchemaError("terminal group must be open-ended")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def midpoints(self) -> np.ndarray:
        """Representative evaluation age per group; open group: lower + 2.5."""
        mids = [lo + (w / 2.0 if math.isfinite(w) else 2.5)
                for lo, w in zip(self.lowers, self.widths)]
        return np.array(mids, dtype=float)

    @classmethod
    def five_year(cls, max_lower: int = 95) -> "AgeGrid":
        """Standard grid 0-4, 5-9, ..., `max_lower`+."""
        lowers = list(range(0, max_lower + 1, 5))
        labels = [f"{lo}-{lo + 4}" for lo in lowers[:-1]] + [f"{lowers[-1]}+"]
        widths = [5.0] * (len(lowers) - 1) + [math.nan]
        return cls(tuple(labels), tuple(float(x) for x in lowers), tuple(widths))

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "AgeGrid":
        """Parse labels like "0-4", "5-9", "95+" (in ascending order)."""
        labels = tuple(labels)
        lowers: list[float] = []
        widths: list[float] = []
        for lab in labels:
            s = lab.strip()
            if s.endswith("+"):
                try:
                    lo = float(s[:-1])
                except ValueError:
                    raise PanelSchemaError(f"bad age-group label {lab!r}")
                lowers.append(lo)
                widths.append(math.nan)
            else:
                lo_s, sep, hi_s = s.partition("-")
                if not sep:
                    raise PanelSchemaError(f"bad age-group label {lab!r}")
                try:
                    lo, hi = float(lo_s), float(hi_s)
                except ValueError:
                    raise PanelSchemaError(f"bad age-group label {lab!r}")
                lowers.append(lo)
                widths.append(hi - lo + 1.0)
        return cls(labels, tuple(lowers), tuple(widths))


@dataclass(frozen=True)
class PerturbationVector:
    """Per-age multiplicative factors f_x aligned to a grid."""

    values: tuple[float, ...]
    grid: AgeGrid

    def __post_init__(self) -> None:
        if len(self.values) != len(self.grid):
            raise PanelSchemaError("perturbation length must match the grid")
        arr = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise InvalidParameterError(
                "perturbation factors must be finite and strictly positive")

    @classmethod
    def ones(cls, grid: AgeGrid) -> "PerturbationVector":
        return cls((1.0,) * len(grid), grid)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class PopulationVector:
    """Per-age person counts aligned to a grid, optionally tagged."""

    values: tuple[float, ...]
    grid: AgeGrid
    location: str | None = None
    period: str | None = None

    def __post_init__(self) -> None:
        if len(self.values) != len(self.grid):
            raise PanelSchemaError("population length must match the grid")
        arr = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise InvalidParameterError("population must be finite and >= 0")
        if not np.any(arr > 0):
            raise InvalidParameterError("population must be positive somewhere")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    @property
    def total(self) -> float:
        return float(np.sum(self.values))


def rc_curve(theta: RCParams, age) -> float | np.ndarray:
    """Evaluate the Rogers-Castro curve at one or more ages.

    Args:
        theta: parameter vector; validated on construction.
        age: scalar age in years (>= 0) or an array of ages.

    Returns:
        The migration rate r_x(theta); scalar for scalar input.
    """
    x = np.asarray(age, dtype=float)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise InvalidParameterError("age must be finite and >= 0")
    r = np.full_like(x, theta.c)
    r = r + theta.a1 * np.exp(-theta.alpha1 * x)
    # absent components must contribute exactly 0, not exp(0) leftovers
    if theta.a2 != 0.0:
        t = x - theta.mu2
        r = r + theta.a2 * np.exp(-theta.alpha2 * t - np.exp(-theta.lambda2 * t))
    if theta.a3 != 0.0:
        t = x - theta.mu3
        r = r + theta.a3 * np.exp(-theta.alpha3 * t - np.exp(-theta.lambda3 * t))
    if x.ndim == 0:
        return float(r)
    return r


def rc_schedule(theta: RCParams, grid: AgeGrid) -> np.ndarray:
    """Vectorized rc_curve over a grid's representative ages."""
    return np.asarray(rc_curve(theta, grid.midpoints), dtype=float)


def normalized_schedule(theta: RCParams,
                        f: PerturbationVector | np.ndarray | None,
                        pop: PopulationVector | np.ndarray) -> np.ndarray:
    """Perturbed, population-weighted schedule normalized to sum to one.

    Element x is r_x(theta) * f_x * P_x / sum_y r_y * f_y * P_y.

    Args:
        theta: schedule parameters.
        f: perturbation factors; None means all ones.
        pop: population weights; a PopulationVector supplies the grid,
            otherwise the array length fixes the grid implicitly and ages
            are taken from a standard five-year grid of that length.
    """
    if isinstance(pop, PopulationVector):
        grid = pop.grid
        p = pop.as_array()
    else:
        p = np.asarray(pop, dtype=float)
        grid = AgeGrid.five_year(5 * (len(p) - 1))
    fv = np.ones(len(grid)) if f is None else (
        f.as_array() if isinstance(f, PerturbationVector) else np.asarray(f, dtype=float))
    r = rc_schedule(theta, grid)
    w = r * fv * p
    denom = w.sum()
    if denom <= 0:
        raise DegenerateScheduleError("schedule normalizer is zero")
    out = w / denom
    # guard against drift; the contract is 1e-12
    return out / out.sum()
