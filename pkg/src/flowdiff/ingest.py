"""Panel ingestion and open-age-group redistribution.

CSV schema (see README): columns
    location, period, age_group, net_migration, population
UTF-8, "." decimal separator, age-group labels like "0-4" or "95+".
Rows with an empty net_migration field carry population only; they supply
the old-age population needed when the open terminal group is later
redistributed (the tool never invents population splits).

Canonical files are the ones save_panel writes: locations and periods in
ascending string order, ages in grid order, shortest-round-trip number
formatting.  load_panel(save_panel(p)) reproduces the bytes exactly.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    InvalidParameterError,
    PanelConsistencyError,
    PanelParseError,
    PanelSchemaError,
    UnknownLocationError,
)
from .schedule import AgeGrid

HEADER = ("location", "period", "age_group", "net_migration", "population")
TOTALS_HEADER = ("location", "period", "net_total")

# stored totals must match summed cells this closely (persons)
TOTALS_TOL = 0.5


@dataclass(frozen=True)
class MigrationPanel:
    """Dense panel of net migration and population by age, location, period.

    Arrays are indexed [x, i, t] = (age group, location, period).  The
    stored totals G[i, t] come from the companion totals file when given,
    otherwise from summing cells.  tail_labels / tail_population hold
    population-only rows for ages beyond the migration grid's terminal
    group, if the input supplied them.
    """

    locations: tuple[str, ...]
    periods: tuple[str, ...]
    grid: AgeGrid
    net_migration: np.ndarray
    population: np.ndarray
    totals: np.ndarray
    tail_labels: tuple[str, ...] | None = None
    tail_population: np.ndarray | None = None

    def __post_init__(self) -> None:
        K, I, T = len(self.grid), len(self.locations), len(self.periods)
        if self.net_migration.shape != (K, I, T):
            raise PanelSchemaError(
                f"net_migration shape {self.net_migration.shape} != {(K, I, T)}")
        if self.population.shape != (K, I, T):
            raise PanelSchemaError(
                f"population shape {self.population.shape} != {(K, I, T)}")
        if self.totals.shape != (I, T):
            raise PanelSchemaError(f"totals shape {self.totals.shape} != {(I, T)}")
        gap = np.abs(self.net_migration.sum(axis=0) - self.totals)
        if np.any(gap > TOTALS_TOL):
            i, t = np.unravel_index(int(np.argmax(gap)), gap.shape)
            raise PanelConsistencyError(
                f"sum over ages differs from stored total by {gap[i, t]:.3f} "
                f"persons at location={self.locations[i]!r} "
                f"period={self.periods[t]!r} (tolerance {TOTALS_TOL})")
        if (self.tail_labels is None) != (self.tail_population is None):
            raise PanelSchemaError("tail labels and population must come together")

    @property
    def n_ages(self) -> int:
        return len(self.grid)

    def location_index(self, location: str) -> int:
        try:
            return self.locations.index(location)
        except ValueError:
            raise UnknownLocationError(location) from None

    def population_totals(self) -> np.ndarray:
        """P[i, t]: total population per location and period."""
        return self.population.sum(axis=0)


def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def _parse_float(cell: str, what: str, lineno: int) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise PanelParseError(f"line {lineno}: bad {what} {cell!r}") from None
    if not math.isfinite(v):
        raise PanelParseError(f"line {lineno}: non-finite {what} {cell!r}")
    return v


def _age_lower(label: str, lineno: int) -> float:
    s = label.strip()
    try:
        if s.endswith("+"):
            return float(s[:-1])
        lo, sep, _ = s.partition("-")
        if not sep:
            raise ValueError
        return float(lo)
    except ValueError:
        raise PanelParseError(f"line {lineno}: bad age_group label {label!r}") from None


def load_panel(path, totals_path=None) -> MigrationPanel:
    """Read and validate a migration panel CSV.

    Args:
        path: main panel file (schema in the module docstring).
        totals_path: optional totals file `location, period, net_total`;
            when present, stored totals are cross-checked against summed
            cells within 0.5 persons.

    Raises:
        PanelParseError: malformed row, duplicate or missing cell.
        PanelSchemaError: bad header or inconsistent grid across locations.
        PanelConsistencyError: totals disagree with summed cells.
    """
    mig: dict[tuple[str, str, str], float] = {}
    pop: dict[tuple[str, str, str], float] = {}
    tail_pop: dict[tuple[str, str, str], float] = {}
    age_lower: dict[str, float] = {}

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(c.strip() for c in next(reader))
        except StopIteration:
            raise PanelSchemaError(f"{path}: empty file") from None
        if header != HEADER:
            raise PanelSchemaError(
                f"{path}: header {header} does not match {HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(HEADER):
                raise PanelParseError(
                    f"line {lineno}: expected {len(HEADER)} columns, got {len(row)}")
            loc, per, age = (c.strip() for c in row[:3])
            if not loc or not per or not age:
                raise PanelParseError(f"line {lineno}: empty identifier column")
            age_lower.setdefault(age, _age_lower(age, lineno))
            key = (loc, per, age)
            p = _parse_float(row[4].strip(), "population", lineno)
            if row[3].strip() == "":
                if key in tail_pop:
                    raise PanelParseError(f"line {lineno}: duplicate cell {key}")
                tail_pop[key] = p
            else:
                if key in mig:
                    raise PanelParseError(f"line {lineno}: duplicate cell {key}")
                mig[key] = _parse_float(row[3].strip(), "net_migration", lineno)
                pop[key] = p

    if not mig:
        raise PanelSchemaError(f"{path}: no migration rows")

    locations = tuple(sorted({k[0] for k in mig}))
    periods = tuple(sorted({k[1] for k in mig}))
    mig_ages = sorted({k[2] for k in mig}, key=lambda a: age_lower[a])
    grid = AgeGrid.from_labels(mig_ages)

    # density check; a missing cell is a parse error naming the cell
    for loc in locations:
        for per in periods:
            for age in mig_ages:
                if (loc, per, age) not in mig:
                    raise PanelParseError(
                        f"missing cell: location={loc!r} period={per!r} "
                        f"age_group={age!r}")

    K, I, T = len(mig_ages), len(locations), len(periods)
    g = np.empty((K, I, T))
    P = np.empty((K, I, T))
    for x, age in enumerate(mig_ages):
        for i, loc in enumerate(locations):
            for t, per in enumerate(periods):
                g[x, i, t] = mig[(loc, per, age)]
                P[x, i, t] = pop[(loc, per, age)]

    tail_labels: tuple[str, ...] | None = None
    tail_arr: np.ndarray | None = None
    if tail_pop:
        tails = sorted({k[2] for k in tail_pop}, key=lambda a: age_lower[a])
        bad = [a for a in tails if age_lower[a] < grid.lowers[-1]]
        if bad:
            raise PanelSchemaError(
                f"population-only rows must lie at or beyond the terminal "
                f"migration group {grid.labels[-1]!r}; got {bad}")
        for loc in locations:
            for per in periods:
                for age in tails:
                    if (loc, per, age) not in tail_pop:
                        raise PanelParseError(
                            f"missing cell: location={loc!r} period={per!r} "
                            f"age_group={age!r}")
        tail_labels = tuple(tails)
        tail_arr = np.empty((len(tails), I, T))
        for x, age in enumerate(tails):
            for i, loc in enumerate(locations):
                for t, per in enumerate(periods):
                    tail_arr[x, i, t] = tail_pop[(loc, per, age)]

    totals = g.sum(axis=0)
    if totals_path is not None:
        stored = _load_totals(totals_path, locations, periods)
        gap = np.abs(totals - stored)
        if np.any(gap > TOTALS_TOL):
            i, t = np.unravel_index(int(np.argmax(gap)), gap.shape)
            raise PanelConsistencyError(
                f"stored net_total differs from summed cells by "
                f"{gap[i, t]:.3f} persons at location={locations[i]!r} "
                f"period={periods[t]!r}")
        totals = stored

    return MigrationPanel(locations, periods, grid, g, P, totals,
                          tail_labels, tail_arr)


def _load_totals(path, locations, periods) -> np.ndarray:
    stored = np.full((len(locations), len(periods)), np.nan)
    loc_ix = {l: i for i, l in enumerate(locations)}
    per_ix = {p: t for t, p in enumerate(periods)}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(c.strip() for c in next(reader))
        if header != TOTALS_HEADER:
            raise PanelSchemaError(
                f"{path}: header {header} does not match {TOTALS_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise PanelParseError(
                    f"line {lineno}: expected 3 columns, got {len(row)}")
            loc, per = row[0].strip(), row[1].strip()
            if loc not in loc_ix or per not in per_ix:
                raise PanelParseError(
                    f"line {lineno}: unknown location/period "
                    f"({loc!r}, {per!r}) in totals file")
            stored[loc_ix[loc], per_ix[per]] = _parse_float(
                row[2].strip(), "net_total", lineno)
    if np.any(np.isnan(stored)):
        i, t = map(int, np.argwhere(np.isnan(stored))[0])
        raise PanelParseError(
            f"totals file misses location={locations[i]!r} period={periods[t]!r}")
    return stored


def save_panel(panel: MigrationPanel, path) -> None:
    """Write a panel in canonical form (see module docstring)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(HEADER) + "\n")
        for i, loc in enumerate(panel.locations):
            for t, per in enumerate(panel.periods):
                for x, age in enumerate(panel.grid.labels):
                    fh.write(f"{loc},{per},{age},"
                             f"{_fmt(panel.net_migration[x, i, t])},"
                             f"{_fmt(panel.population[x, i, t])}\n")
                if panel.tail_labels is not None:
                    for x, age in enumerate(panel.tail_labels):
                        fh.write(f"{loc},{per},{age},,"
                                 f"{_fmt(panel.tail_population[x, i, t])}\n")


def save_totals(panel: MigrationPanel, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(TOTALS_HEADER) + "\n")
        for i, loc in enumerate(panel.locations):
            for t, per in enumerate(panel.periods):
                fh.write(f"{loc},{per},{_fmt(panel.totals[i, t])}\n")


def panel_to_csv_bytes(panel: MigrationPanel) -> bytes:
    buf = io.StringIO()
    buf.write(",".join(HEADER) + "\n")
    for i, loc in enumerate(panel.locations):
        for t, per in enumerate(panel.periods):
            for x, age in enumerate(panel.grid.labels):
                buf.write(f"{loc},{per},{age},"
                          f"{_fmt(panel.net_migration[x, i, t])},"
                          f"{_fmt(panel.population[x, i, t])}\n")
            if panel.tail_labels is not None:
                for x, age in enumerate(panel.tail_labels):
                    buf.write(f"{loc},{per},{age},,"
                              f"{_fmt(panel.tail_population[x, i, t])}\n")
    return buf.getvalue().encode("utf-8")


def _tail_grid_labels(old_terminal_lower: float, new_terminal: str) -> list[str]:
    """Five-year labels from the old terminal lower bound to the new one."""
    s = new_terminal.strip()
    if not s.endswith("+"):
        raise InvalidParameterError(
            f"new terminal must be an open group like '95+', got {new_terminal!r}")
    new_lower = float(s[:-1])
    if new_lower <= old_terminal_lower:
        raise InvalidParameterError(
            "new terminal must be older than the current terminal group")
    if (new_lower - old_terminal_lower) % 5 != 0:
        raise InvalidParameterError("terminal extension must use 5-year steps")
    lowers = np.arange(old_terminal_lower, new_lower + 1, 5)
    labels = [f"{int(lo)}-{int(lo) + 4}" for lo in lowers[:-1]]
    labels.append(f"{int(new_lower)}+")
    return labels


def redistribute_open_age(panel: MigrationPanel, new_terminal: str,
                          ratio: float = 0.5,
                          tail_population: np.ndarray | None = None,
                          ) -> MigrationPanel:
    """Split the open terminal group into finer groups with geometric decay.

    The terminal net value g is divided over the created groups with
    |values| proportional to ratio**k, all carrying the sign of g and
    summing exactly to g.  Populations for the created groups must be
    supplied, either via population-only rows in the input file or through
    `tail_population` (shape (n_new, I, T) aligned to the created labels).

    Args:
        panel: input panel whose terminal group will be split.
        new_terminal: label of the new open group, e.g. "95+".
        ratio: geometric decay per created group, in (0, 1).
        tail_population: optional population override for created groups.

    Returns:
        A new panel on the extended grid; totals are unchanged.
    """
    if not (0.0 < ratio < 1.0):
        raise InvalidParameterError(f"ratio must lie in (0, 1), got {ratio!r}")

    labels = _tail_grid_labels(panel.grid.lowers[-1], new_terminal)
    n_new = len(labels)

    if tail_population is None:
        if panel.tail_labels is None:
            raise PanelSchemaError(
                "population for the created groups is missing; supply "
                "population-only rows in the input or pass tail_population")
        if tuple(labels) != panel.tail_labels:
            raise PanelSchemaError(
                f"input supplies population for {panel.tail_labels}, "
                f"but redistribution creates {tuple(labels)}")
        tail_population = panel.tail_population
    tail_population = np.asarray(tail_population, dtype=float)
    K, I, T = panel.net_migration.shape
    if tail_population.shape != (n_new, I, T):
        raise PanelSchemaError(
            f"tail_population shape {tail_population.shape} != {(n_new, I, T)}")

    weights = ratio ** np.arange(n_new)
    weights = weights / weights.sum()

    new_labels = panel.grid.labels[:-1] + tuple(labels)
    new_grid = AgeGrid.from_labels(new_labels)
    g = np.empty((K - 1 + n_new, I, T))
    P = np.empty_like(g)
    g[:K - 1] = panel.net_migration[:-1]
    P[:K - 1] = panel.population[:-1]
    g[K - 1:] = weights[:, None, None] * panel.net_migration[-1]
    P[K - 1:] = tail_population

    return MigrationPanel(panel.locations, panel.periods, new_grid,
                          g, P, panel.totals.copy())
