"""Panel ingestion: parsing, validation, canonical output, tail splitting."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from flowdiff.errors import (
    InvalidParameterError,
    PanelConsistencyError,
    PanelParseError,
    PanelSchemaError,
    UnknownLocationError,
)
from flowdiff.ingest import (
    HEADER,
    MigrationPanel,
    load_panel,
    panel_to_csv_bytes,
    redistribute_open_age,
    save_panel,
    save_totals,
)
from flowdiff.schedule import AgeGrid

# geometric split of the terminal group, ratio 0.5 over 5 created groups
REDIST_150 = [
    77.41935483870968,
    38.70967741935484,
    19.35483870967742,
    9.67741935483871,
    4.838709677419355,
]
REDIST_NEG31 = [-16.0, -8.0, -4.0, -2.0, -1.0]


def small_panel() -> MigrationPanel:
    grid = AgeGrid.from_labels(["0-4", "5-9", "10+"])
    g = np.array([[[12.5, -3.0], [7.0, 1.0]],
                  [[30.0, 4.25], [-2.0, 0.5]],
                  [[1.0, 0.0], [5.0, -1.5]]])
    P = np.array([[[100.0, 110.0], [200.0, 210.0]],
                  [[120.0, 130.0], [220.0, 230.0]],
                  [[90.0, 95.0], [180.0, 185.0]]])
    return MigrationPanel(("alpha", "beta"), ("2010", "2015"), grid,
                          g, P, g.sum(axis=0))


def old_age_panel(terminal_g: np.ndarray) -> MigrationPanel:
    """One-location panel with terminal group 75+ carrying `terminal_g` (T,)."""
    grid = AgeGrid.from_labels(["65-69", "70-74", "75+"])
    T = terminal_g.size
    g = np.zeros((3, 1, T))
    g[0, 0] = 10.0
    g[1, 0] = 5.0
    g[2, 0] = terminal_g
    P = np.full((3, 1, T), 800.0)
    return MigrationPanel(("loc",), tuple(f"p{t}" for t in range(T)),
                          grid, g, P, g.sum(axis=0))


def test_save_load_round_trip_is_byte_identical(tmp_path):
    panel = small_panel()
    path = tmp_path / "panel.csv"
    save_panel(panel, path)
    loaded = load_panel(path)
    assert panel_to_csv_bytes(loaded) == path.read_bytes()
    assert loaded.locations == panel.locations
    assert loaded.periods == panel.periods
    assert loaded.grid.labels == panel.grid.labels
    np.testing.assert_array_equal(loaded.net_migration, panel.net_migration)
    np.testing.assert_array_equal(loaded.population, panel.population)


def test_identifiers_sorted_and_grid_in_age_order(tmp_path):
    # rows deliberately shuffled; loader must impose canonical order
    rows = [
        "zeta,2015,5+,1,10",
        "zeta,2010,5+,2,10",
        "alpha,2015,0-4,3,10",
        "zeta,2015,0-4,4,10",
        "alpha,2010,5+,5,10",
        "alpha,2010,0-4,6,10",
        "alpha,2015,5+,7,10",
        "zeta,2010,0-4,8,10",
    ]
    path = tmp_path / "p.csv"
    path.write_text(",".join(HEADER) + "\n" + "\n".join(rows) + "\n")
    panel = load_panel(path)
    assert panel.locations == ("alpha", "zeta")
    assert panel.periods == ("2010", "2015")
    assert panel.grid.labels == ("0-4", "5+")
    assert panel.net_migration[0, 0, 0] == 6.0  # alpha, 2010, 0-4
    assert panel.net_migration[1, 1, 1] == 1.0  # zeta, 2015, 5-9


def test_missing_cell_is_named(tmp_path):
    panel = small_panel()
    path = tmp_path / "p.csv"
    save_panel(panel, path)
    lines = path.read_text().splitlines(keepends=True)
    del lines[3]  # alpha, 2010, 10+
    (tmp_path / "gap.csv").write_text("".join(lines))
    with pytest.raises(PanelParseError, match="missing cell") as err:
        load_panel(tmp_path / "gap.csv")
    msg = str(err.value)
    assert "'alpha'" in msg and "'2010'" in msg and "'10+'" in msg


@pytest.mark.parametrize("row, fragment", [
    ("alpha,2010,0-4,abc,10", "bad net_migration"),
    ("alpha,2010,0-4,nan,10", "non-finite"),
    ("alpha,2010,0-4,1", "expected 5 columns"),
    ("alpha,2010,four,1,10", "bad age_group label"),
    (",2010,0-4,1,10", "empty identifier"),
])
def test_malformed_row_reports_line(tmp_path, row, fragment):
    path = tmp_path / "p.csv"
    path.write_text(",".join(HEADER) + "\n" + row + "\n")
    with pytest.raises(PanelParseError, match=fragment) as err:
        load_panel(path)
    assert "line 2" in str(err.value)


def test_duplicate_cell_rejected(tmp_path):
    path = tmp_path / "p.csv"
    path.write_text(",".join(HEADER) + "\n"
                    "a,2010,0+,1,10\n"
                    "a,2010,0+,2,10\n")
    with pytest.raises(PanelParseError, match="duplicate cell"):
        load_panel(path)


def test_header_and_empty_file_rejected(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("loc,per,age,net,pop\n")
    with pytest.raises(PanelSchemaError, match="header"):
        load_panel(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(PanelSchemaError, match="empty file"):
        load_panel(empty)
    header_only = tmp_path / "only.csv"
    header_only.write_text(",".join(HEADER) + "\n")
    with pytest.raises(PanelSchemaError, match="no migration rows"):
        load_panel(header_only)


def test_totals_cross_check(tmp_path):
    panel = small_panel()
    p_path, t_path = tmp_path / "p.csv", tmp_path / "t.csv"
    save_panel(panel, p_path)
    save_totals(panel, t_path)

    loaded = load_panel(p_path, totals_path=t_path)
    np.testing.assert_array_equal(loaded.totals, panel.totals)

    # a stored total 10 persons off must be caught and located
    txt = t_path.read_text().splitlines()
    loc, per, val = txt[1].split(",")
    txt[1] = f"{loc},{per},{float(val) + 10.0}"
    t_path.write_text("\n".join(txt) + "\n")
    with pytest.raises(PanelConsistencyError, match="persons") as err:
        load_panel(p_path, totals_path=t_path)
    assert f"{loc!r}" in str(err.value)


def test_totals_within_tolerance_are_adopted(tmp_path):
    panel = small_panel()
    p_path, t_path = tmp_path / "p.csv", tmp_path / "t.csv"
    save_panel(panel, p_path)
    with open(t_path, "w") as fh:
        fh.write("location,period,net_total\n")
        for i, loc in enumerate(panel.locations):
            for t, per in enumerate(panel.periods):
                fh.write(f"{loc},{per},{panel.totals[i, t] + 0.3}\n")
    loaded = load_panel(p_path, totals_path=t_path)
    # stored values win over summed cells
    np.testing.assert_allclose(loaded.totals, panel.totals + 0.3)


def test_totals_file_missing_pair(tmp_path):
    panel = small_panel()
    p_path, t_path = tmp_path / "p.csv", tmp_path / "t.csv"
    save_panel(panel, p_path)
    save_totals(panel, t_path)
    txt = t_path.read_text().splitlines()
    t_path.write_text("\n".join(txt[:-1]) + "\n")
    with pytest.raises(PanelParseError, match="misses"):
        load_panel(p_path, totals_path=t_path)


def test_constructor_validation():
    grid = AgeGrid.from_labels(["0-4", "5+"])
    g = np.ones((2, 1, 1))
    P = np.ones((2, 1, 1))
    with pytest.raises(PanelSchemaError):
        MigrationPanel(("a",), ("p",), grid, np.ones((3, 1, 1)), P,
                       np.full((1, 1), 2.0))
    with pytest.raises(PanelConsistencyError, match="persons"):
        MigrationPanel(("a",), ("p",), grid, g, P, np.full((1, 1), 12.0))
    panel = MigrationPanel(("a",), ("p",), grid, g, P, np.full((1, 1), 2.0))
    assert panel.n_ages == 2
    assert panel.location_index("a") == 0
    with pytest.raises(UnknownLocationError):
        panel.location_index("nowhere")
    np.testing.assert_array_equal(panel.population_totals(), [[2.0]])


def test_redistribute_positive_oracle():
    panel = old_age_panel(np.array([150.0]))
    tails = np.full((5, 1, 1), 50.0)
    out = redistribute_open_age(panel, "95+", ratio=0.5, tail_population=tails)
    assert out.grid.labels == ("65-69", "70-74", "75-79", "80-84",
                               "85-89", "90-94", "95+")
    np.testing.assert_allclose(out.net_migration[2:, 0, 0], REDIST_150,
                               rtol=0, atol=1e-12)
    np.testing.assert_array_equal(out.population[2:, 0, 0], 50.0)
    np.testing.assert_array_equal(out.totals, panel.totals)


def test_redistribute_negative_oracle():
    panel = old_age_panel(np.array([-31.0]))
    tails = np.full((5, 1, 1), 25.0)
    out = redistribute_open_age(panel, "95+", ratio=0.5, tail_population=tails)
    np.testing.assert_allclose(out.net_migration[2:, 0, 0], REDIST_NEG31,
                               rtol=0, atol=1e-12)


def test_redistribute_zero_terminal():
    panel = old_age_panel(np.array([0.0]))
    tails = np.full((5, 1, 1), 10.0)
    out = redistribute_open_age(panel, "95+", ratio=0.5, tail_population=tails)
    np.testing.assert_array_equal(out.net_migration[2:, 0, 0], 0.0)


@given(
    g_term=st.floats(min_value=-5e4, max_value=5e4,
                     allow_nan=False, allow_infinity=False),
    ratio=st.floats(min_value=0.05, max_value=0.95),
)
def test_redistribute_preserves_sum_and_sign(g_term, ratio):
    panel = old_age_panel(np.array([g_term]))
    tails = np.full((5, 1, 1), 30.0)
    out = redistribute_open_age(panel, "95+", ratio=ratio,
                                tail_population=tails)
    created = out.net_migration[2:, 0, 0]
    assert abs(created.sum() - g_term) <= 1e-9 * max(1.0, abs(g_term))
    if g_term > 0:
        assert np.all(created >= 0)
        assert np.all(np.diff(created) < 0)  # strict geometric decay
    elif g_term < 0:
        assert np.all(created <= 0)
    np.testing.assert_array_equal(out.totals, panel.totals)


@pytest.mark.parametrize("ratio", [0.0, 1.0, 1.2, -0.5])
def test_redistribute_ratio_range(ratio):
    panel = old_age_panel(np.array([100.0]))
    with pytest.raises(InvalidParameterError, match="ratio"):
        redistribute_open_age(panel, "95+", ratio=ratio,
                              tail_population=np.full((5, 1, 1), 1.0))


@pytest.mark.parametrize("terminal", ["95", "70+", "75+", "93+"])
def test_redistribute_terminal_label_validation(terminal):
    panel = old_age_panel(np.array([100.0]))
    with pytest.raises(InvalidParameterError):
        redistribute_open_age(panel, terminal,
                              tail_population=np.full((5, 1, 1), 1.0))


def test_redistribute_uses_population_only_rows(tmp_path):
    """Tail population supplied as rows with an empty net_migration field."""
    panel = old_age_panel(np.array([150.0]))
    path = tmp_path / "p.csv"
    save_panel(panel, path)
    with open(path, "a") as fh:
        for age, p in zip(("75-79", "80-84", "85-89", "90-94", "95+"),
                          (400.0, 250.0, 120.0, 40.0, 8.0)):
            fh.write(f"loc,p0,{age},,{p}\n")
    loaded = load_panel(path)
    assert loaded.tail_labels == ("75-79", "80-84", "85-89", "90-94", "95+")

    out = redistribute_open_age(loaded, "95+", ratio=0.5)
    np.testing.assert_allclose(out.net_migration[2:, 0, 0], REDIST_150)
    np.testing.assert_array_equal(out.population[2:, 0, 0],
                                  [400.0, 250.0, 120.0, 40.0, 8.0])

    # round trip keeps the population-only rows
    out_path = tmp_path / "round.csv"
    save_panel(loaded, out_path)
    again = load_panel(out_path)
    assert again.tail_labels == loaded.tail_labels
    np.testing.assert_array_equal(again.tail_population,
                                  loaded.tail_population)


def test_redistribute_without_tail_population_fails():
    panel = old_age_panel(np.array([150.0]))
    with pytest.raises(PanelSchemaError, match="population"):
        redistribute_open_age(panel, "95+", ratio=0.5)


def test_redistribute_tail_label_mismatch(tmp_path):
    panel = old_age_panel(np.array([150.0]))
    path = tmp_path / "p.csv"
    save_panel(panel, path)
    with open(path, "a") as fh:
        fh.write("loc,p0,75-79,,400\n")
        fh.write("loc,p0,80+,,100\n")
    loaded = load_panel(path)
    with pytest.raises(PanelSchemaError, match="redistribution creates"):
        redistribute_open_age(loaded, "95+", ratio=0.5)


def test_population_only_rows_below_terminal_rejected(tmp_path):
    panel = old_age_panel(np.array([150.0]))
    path = tmp_path / "p.csv"
    save_panel(panel, path)
    with open(path, "a") as fh:
        fh.write("loc,p0,60-64,,500\n")
    with pytest.raises(PanelSchemaError, match="terminal"):
        load_panel(path)


def test_redistribute_tail_shape_checked():
    panel = old_age_panel(np.array([150.0]))
    with pytest.raises(PanelSchemaError, match="shape"):
        redistribute_open_age(panel, "95+", ratio=0.5,
                              tail_population=np.ones((4, 1, 1)))
