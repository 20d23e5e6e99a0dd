"""Batch command-line front end.

Pipeline order: ingest -> decompose -> fit-det / fit-bayes -> project
-> validate -> report.  Each subcommand writes its artifacts into the
output directory plus a <command>.manifest.json recording the resolved
configuration, the tool version, and the sha-256 of every input and
output, so any run can be audited and reproduced from the manifest.

Settings may come from an INI file (one section per subcommand, plus
[global] for seed / threads / out-dir); command-line flags override
file values.  Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numerical failure.

Numeric libraries are imported lazily inside the command handlers so
that --threads can pin the thread count before they initialize.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import re
import sys

from . import __version__
from .errors import (
    ConfigError,
    DataError,
    FlowdiffError,
    MissingArtifactError,
    NumericalError,
)

COMMANDS = ("ingest", "decompose", "fit-det", "fit-bayes",
            "project", "validate", "report")

_TRUE = {"1", "yes", "true", "on"}
_FALSE = {"0", "no", "false", "off"}


def _conv_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _conv_list(text: str) -> list[str]:
    parts = re.split(r"[,\s]+", text.strip())
    return [p for p in parts if p]


class Opt:
    """One option: argparse wiring plus config-file conversion."""

    def __init__(self, name: str, conv=str, default=None, help: str = "",
                 required: bool = False, flag: bool = False,
                 multi: bool = False, choices=None):
        self.name = name                       # dashed, as on the CLI
        self.dest = name.replace("-", "_")
        self.conv = conv
        self.default = default
        self.help = help
        self.required = required               # checked after config merge
        self.flag = flag
        self.multi = multi
        self.choices = choices

    def add_to(self, parser: argparse.ArgumentParser) -> None:
        kw: dict = {"dest": self.dest, "default": None, "help": self.help}
        if self.flag:
            kw["action"] = "store_true"
        elif self.multi:
            kw.update(nargs="+", type=self.conv)
        else:
            kw["type"] = self.conv
            if self.choices:
                kw["choices"] = self.choices
        parser.add_argument(f"--{self.name}", **kw)

    def from_config(self, text: str):
        if self.flag:
            return _conv_bool(text)
        if self.multi:
            return [self.conv(p) for p in _conv_list(text)]
        value = self.conv(text)
        if self.choices and value not in self.choices:
            raise ConfigError(
                f"{self.name} must be one of {self.choices}, got {value!r}")
        return value


GLOBAL_OPTS = (
    Opt("config", help="INI settings file; flags override its values"),
    Opt("seed", conv=int,
        help="RNG seed; required for stochastic subcommands"),
    Opt("threads", conv=int,
        help="thread cap exported before numeric libraries load"),
    Opt("out-dir", default="out", help="artifact directory (default: out)"),
)

COMMAND_OPTS: dict[str, tuple[Opt, ...]] = {
    "ingest": (
        Opt("panel", required=True, help="raw panel CSV "
            "(location, period, age_group, net_migration, population)"),
        Opt("totals", help="companion totals CSV to cross-check against"),
        Opt("extend-to", help="redistribute the open age group up to this "
            "new terminal label, e.g. 95+"),
        Opt("decay", conv=float, default=0.5,
            help="geometric decay per created group (default 0.5)"),
    ),
    "decompose": (
        Opt("panel", help="canonical panel CSV (default: <out-dir>/panel.csv)"),
        Opt("m", conv=float, default=0.7,
            help="gross-migration multiplier of the heuristic split"),
        Opt("rates", help="rate panel CSV (location, period, in_rate, "
            "net_rate); fits the mixed-effects totals model"),
        Opt("imr-min", conv=float, default=0.02,
            help="prediction floor on the in-migration rate"),
        Opt("outliers", multi=True, default=[],
            help="locations whose fitted intercept reverts to the "
            "global mean"),
    ),
    "fit-det": (
        Opt("panel", help="canonical panel CSV (default: <out-dir>/panel.csv)"),
        Opt("decomp", help="decomposition CSV "
            "(default: <out-dir>/decomposition.csv)"),
    ),
    "fit-bayes": (
        Opt("panel", help="canonical panel CSV (default: <out-dir>/panel.csv)"),
        Opt("decomp", help="decomposition CSV "
            "(default: <out-dir>/decomposition.csv)"),
        Opt("retirement", help="retirement-mode table CSV (location, "
            "retirement_in, retirement_out); unlisted locations get the "
            "in-only default"),
        Opt("locations", multi=True,
            help="subset of locations to fit (default: all)"),
        Opt("chains", conv=int, default=3),
        Opt("iterations", conv=int, default=20_000),
        Opt("burnin", conv=int, default=2_000),
        Opt("thin", conv=int, default=10),
        Opt("paper-scale", flag=True,
            help="long-run geometry (3 x 100k, 10k burn-in); overrides "
            "the four flags above"),
        Opt("csv-draws", flag=True,
            help="also write draws as columnar CSV next to the caches"),
    ),
    "project": (
        Opt("trajectories", required=True, help="trajectory CSV "
            "(location, period, trajectory, net_total)"),
        Opt("method", required=True, choices=("basic", "det", "bayes")),
        Opt("panel", help="observed panel; populations are carried forward "
            "from its last period (required for det and bayes)"),
        Opt("theta", help="schedule parameter file for method=basic "
            "(default: the built-in model schedule)"),
        Opt("ratios", help="ratio profiles CSV for method=det "
            "(default: <out-dir>/ratios.csv)"),
        Opt("m", conv=float, default=0.7,
            help="heuristic split multiplier for method=det"),
        Opt("fit", help="mixed-effects fit file for method=bayes "
            "(default: <out-dir>/mixed_fit.txt)"),
        Opt("draws-dir", help="directory with draws_<location>.npz for "
            "method=bayes (default: <out-dir>)"),
        Opt("horizon-scale", conv=float, default=10.0,
            help="years per period for rate-to-count conversion"),
        Opt("sex-share", conv=float, default=0.5,
            help="share of each total assigned to the first sex"),
    ),
    "validate": (
        Opt("projection", help="projection CSV to score "
            "(default: <out-dir>/projection.csv)"),
        Opt("panel", required=True, help="observed panel with the truth"),
        Opt("method", default="projection",
            help="method label carried into the report"),
    ),
    "report": (
        Opt("reports", multi=True,
            help="validation report CSVs (default: <out-dir>/report.csv)"),
    ),
}


# -- config resolution --------------------------------------------------------

def _resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge CLI > config-file > defaults into one options dict."""
    raw = vars(args)
    cfg = configparser.ConfigParser()
    cfg_path = raw.get("config")
    if cfg_path is not None:
        if not os.path.exists(cfg_path):
            raise ConfigError(f"config file not found: {cfg_path}")
        try:
            cfg.read(cfg_path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"bad config file {cfg_path}: {exc}") from None

    opts: dict = {"config": cfg_path}
    for opt in COMMAND_OPTS[command] + GLOBAL_OPTS[1:]:
        value = raw.get(opt.dest)
        if value is None or (opt.flag and value is False):
            sections = [command, "global"] if opt in GLOBAL_OPTS \
                else [command]
            for section in sections:
                if cfg.has_option(section, opt.name):
                    value = opt.from_config(cfg.get(section, opt.name))
                    break
            else:
                value = opt.default
        if value is None and opt.required:
            raise ConfigError(
                f"{command}: --{opt.name} is required (flag or config)")
        if opt.flag and value is None:
            value = False
        opts[opt.dest] = value
    return opts


def _need_seed(command: str, opts: dict) -> int:
    if opts.get("seed") is None:
        raise ConfigError(f"{command}: --seed is required (the command "
                          f"is stochastic and must be reproducible)")
    return int(opts["seed"])


def _input(path: str, what: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"{what} file not found: {path}")
    return path


def _artifact(path: str, producer: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifactError(
            f"missing artifact {path}; run `flowdiff {producer}` first")
    return path


def _safe_name(location: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", location)


# -- manifests ----------------------------------------------------------------

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(command: str, opts: dict, inputs, outputs) -> str:
    out_dir = opts["out_dir"]
    manifest = {
        "command": command,
        "version": __version__,
        "config": {k: v for k, v in sorted(opts.items())},
        "inputs": {p: _sha256(p) for p in sorted(set(inputs))},
        "outputs": {p: _sha256(p) for p in sorted(set(outputs))},
    }
    path = os.path.join(out_dir, f"{command}.manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _out(opts: dict, name: str) -> str:
    return os.path.join(opts["out_dir"], name)


# -- subcommands ---------------------------------------------------------------

def cmd_ingest(opts: dict) -> int:
    from .ingest import load_panel, redistribute_open_age, save_panel, save_totals

    inputs = [_input(opts["panel"], "panel")]
    totals = opts["totals"]
    if totals is not None:
        inputs.append(_input(totals, "totals"))
    panel = load_panel(opts["panel"], totals)
    if opts["extend_to"] is not None:
        panel = redistribute_open_age(panel, opts["extend_to"], opts["decay"])
    panel_path = _out(opts, "panel.csv")
    totals_path = _out(opts, "totals.csv")
    save_panel(panel, panel_path)
    save_totals(panel, totals_path)
    _write_manifest("ingest", opts, inputs, [panel_path, totals_path])
    print(f"ingest: {len(panel.locations)} locations x "
          f"{len(panel.periods)} periods x {panel.n_ages} age groups "
          f"-> {panel_path}")
    return 0


def cmd_decompose(opts: dict) -> int:
    from .decompose import (apply_outlier_policy, decompose_panel,
                            fit_mixed_effects, load_rate_panel,
                            save_decomposition, save_fit)
    from .ingest import load_panel

    panel_path = opts["panel"] or _artifact(_out(opts, "panel.csv"), "ingest")
    inputs = [_input(panel_path, "panel")]
    panel = load_panel(panel_path)
    decomp = decompose_panel(panel.totals, panel.population_totals(),
                             panel.locations, panel.periods, opts["m"])
    decomp_path = _out(opts, "decomposition.csv")
    save_decomposition(decomp, decomp_path)
    outputs = [decomp_path]
    print(f"decompose: heuristic split (m={opts['m']}) -> {decomp_path}")

    if opts["rates"] is not None:
        inputs.append(_input(opts["rates"], "rate panel"))
        fit = fit_mixed_effects(load_rate_panel(opts["rates"]),
                                opts["imr_min"])
        if opts["outliers"]:
            fit = apply_outlier_policy(fit, opts["outliers"])
        fit_path = _out(opts, "mixed_fit.txt")
        save_fit(fit, fit_path)
        outputs.append(fit_path)
        print(f"decompose: mixed-effects fit beta1={fit.beta1:.4f} "
              f"beta0={fit.beta0:.4f} -> {fit_path}")
    _write_manifest("decompose", opts, inputs, outputs)
    return 0


def cmd_fit_det(opts: dict) -> int:
    import numpy as np

    from .decompose import load_decomposition
    from .fdm_det import det_fdm_recover, estimate_ratios, model_schedule, save_ratios
    from .ingest import load_panel

    panel_path = opts["panel"] or _artifact(_out(opts, "panel.csv"), "ingest")
    decomp_path = opts["decomp"] or _artifact(
        _out(opts, "decomposition.csv"), "decompose")
    inputs = [_input(panel_path, "panel"), _input(decomp_path, "decomposition")]
    panel = load_panel(panel_path)
    decomp = load_decomposition(decomp_path)
    theta_m = model_schedule()

    profiles = estimate_ratios(panel, decomp, theta_m)
    ratios_path = _out(opts, "ratios.csv")
    save_ratios(profiles, ratios_path)

    # reconstruction error through period-specific ratios, per location
    recovered = det_fdm_recover(panel, decomp, theta_m)
    gap = np.abs(recovered - panel.net_migration).max(axis=(0, 2))
    recovery_path = _out(opts, "det_recovery.csv")
    with open(recovery_path, "w", encoding="utf-8") as fh:
        fh.write("location,max_abs_error\n")
        for loc, err in zip(panel.locations, gap):
            fh.write(f"{loc},{float(err)!r}\n")
    _write_manifest("fit-det", opts, inputs, [ratios_path, recovery_path])
    print(f"fit-det: ratios for {len(profiles)} locations -> {ratios_path} "
          f"(worst per-cell recovery error {gap.max():.3g} persons)")
    return 0


def cmd_fit_bayes(opts: dict) -> int:
    from .decompose import load_decomposition
    from .fdm_bayes import (BAND_ROWS, SamplerConfig, configure_retirement,
                            load_retirement_table, posterior_summaries,
                            save_cache, save_draws_csv, sample_posterior)
    from .ingest import load_panel

    seed = _need_seed("fit-bayes", opts)
    panel_path = opts["panel"] or _artifact(_out(opts, "panel.csv"), "ingest")
    decomp_path = opts["decomp"] or _artifact(
        _out(opts, "decomposition.csv"), "decompose")
    inputs = [_input(panel_path, "panel"), _input(decomp_path, "decomposition")]
    panel = load_panel(panel_path)
    decomp = load_decomposition(decomp_path)

    table: dict[str, str] = {}
    if opts["retirement"] is not None:
        inputs.append(_input(opts["retirement"], "retirement table"))
        table = load_retirement_table(opts["retirement"])

    locations = opts["locations"] or list(panel.locations)
    outputs: list[str] = []
    diag_rows: list[str] = []
    acc_rows: list[str] = []
    PW = panel.population.sum(axis=1)
    for loc in locations:
        i = panel.location_index(loc)
        mode = table.get(loc, "in-only")
        prior = configure_retirement(loc, mode)
        if opts["paper_scale"]:
            config = SamplerConfig.paper_scale(seed=seed + 1009 * i)
        else:
            config = SamplerConfig(chains=opts["chains"],
                                   iterations=opts["iterations"],
                                   burnin=opts["burnin"], thin=opts["thin"],
                                   seed=seed + 1009 * i)
        draws, diag = sample_posterior(panel, loc, decomp, prior, config)
        for msg in diag.messages:
            print(f"fit-bayes: warning [{loc}]: {msg}", file=sys.stderr)

        safe = _safe_name(loc)
        cache_path = _out(opts, f"draws_{safe}.npz")
        save_cache(draws, cache_path)
        outputs.append(cache_path)
        if opts["csv_draws"]:
            csv_path = _out(opts, f"draws_{safe}.csv")
            save_draws_csv(draws, csv_path)
            outputs.append(csv_path)

        for name in sorted(diag.rhat):
            diag_rows.append(f"{loc},{name},{diag.rhat[name]!r},"
                             f"{diag.ess[name]!r}")
        for move in sorted(diag.acceptance):
            for chain, rate in enumerate(diag.acceptance[move]):
                acc_rows.append(f"{loc},{move},{chain},{rate!r}")

        d = decomp.locations.index(loc)
        summary = posterior_summaries(draws, panel.grid, decomp.A[d],
                                      decomp.B[d], PW,
                                      panel.population[:, i, :])
        summary_path = _out(opts, f"summary_{safe}.csv")
        with open(summary_path, "w", encoding="utf-8") as fh:
            fh.write("quantity,band,age_group,period,value\n")
            for qty in sorted(summary):
                bands = summary[qty]
                for b, band in enumerate(BAND_ROWS):
                    for x, age in enumerate(panel.grid.labels):
                        for t, per in enumerate(panel.periods):
                            fh.write(f"{qty},{band},{age},{per},"
                                     f"{float(bands[b, x, t])!r}\n")
        outputs.append(summary_path)
        worst = max(diag.rhat.values())
        print(f"fit-bayes: {loc} mode={mode} kept={draws.n} "
              f"max-rhat={worst:.4f} -> {cache_path}")

    diag_path = _out(opts, "diagnostics.csv")
    with open(diag_path, "w", encoding="utf-8") as fh:
        fh.write("location,parameter,rhat,ess\n")
        fh.write("\n".join(diag_rows) + "\n")
    acc_path = _out(opts, "acceptance.csv")
    with open(acc_path, "w", encoding="utf-8") as fh:
        fh.write("location,move,chain,rate\n")
        fh.write("\n".join(acc_rows) + "\n")
    _write_manifest("fit-bayes", opts, inputs,
                    outputs + [diag_path, acc_path])
    return 0


def cmd_project(opts: dict) -> int:
    import numpy as np

    from .fdm_det import model_schedule
    from .project import (load_trajectories, project_basic_rc,
                          project_bayes_fdm, project_det_fdm,
                          save_projection_csv, save_projection_summary)
    from .schedule import AgeGrid, RCParams

    method = opts["method"]
    inputs = [_input(opts["trajectories"], "trajectories")]
    trajectories = load_trajectories(opts["trajectories"])

    panel = None
    if opts["panel"] is not None:
        inputs.append(_input(opts["panel"], "panel"))
        from .ingest import load_panel
        panel = load_panel(opts["panel"])
    elif method in ("det", "bayes"):
        raise ConfigError(f"project: --panel is required for method={method} "
                          f"(supplies the population base)")

    def carried_population() -> np.ndarray:
        """Last observed total per location, held at every future period."""
        P = np.empty((len(trajectories.locations), len(trajectories.periods)))
        for i, loc in enumerate(trajectories.locations):
            j = panel.location_index(loc)
            P[i, :] = panel.population[:, j, -1].sum()
        return P

    if method == "basic":
        if opts["theta"] is not None:
            inputs.append(_input(opts["theta"], "schedule parameters"))
            with open(opts["theta"], encoding="utf-8") as fh:
                theta = RCParams.from_kv(fh.read())
        else:
            theta = model_schedule()
        grid = panel.grid if panel is not None else AgeGrid.five_year()
        result = project_basic_rc(trajectories, theta, grid,
                                  opts["sex_share"])
    elif method == "det":
        from .fdm_det import load_ratios
        ratios_path = opts["ratios"] or _artifact(
            _out(opts, "ratios.csv"), "fit-det")
        inputs.append(_input(ratios_path, "ratios"))
        ratios = load_ratios(ratios_path)
        result = project_det_fdm(trajectories, ratios, model_schedule(),
                                 carried_population(), opts["m"],
                                 opts["sex_share"])
    else:
        from .decompose import load_fit
        from .fdm_bayes import load_cache
        seed = _need_seed("project", opts)
        fit_path = opts["fit"] or _artifact(
            _out(opts, "mixed_fit.txt"), "decompose --rates")
        inputs.append(_input(fit_path, "mixed-effects fit"))
        fit = load_fit(fit_path)
        draws_dir = opts["draws_dir"] or opts["out_dir"]
        draws = {}
        for loc in trajectories.locations:
            cache = os.path.join(draws_dir, f"draws_{_safe_name(loc)}.npz")
            _artifact(cache, "fit-bayes")
            inputs.append(cache)
            draws[loc] = load_cache(cache)
        regional_last = panel.population.sum(axis=1)[:, -1]
        pop_local = {}
        pop_regional = {}
        for loc in trajectories.locations:
            j = panel.location_index(loc)
            pop_local[loc] = panel.population[:, j, -1]
            pop_regional[loc] = regional_last
        result = project_bayes_fdm(trajectories, draws, fit, panel.grid,
                                   pop_local, pop_regional,
                                   carried_population(),
                                   opts["horizon_scale"], opts["sex_share"],
                                   seed)

    projection_path = _out(opts, "projection.csv")
    summary_path = _out(opts, "projection_summary.csv")
    save_projection_csv(result, projection_path)
    save_projection_summary(result, summary_path)
    _write_manifest("project", opts, inputs, [projection_path, summary_path])
    gap = np.abs(result.totals() - trajectories.G).max()
    print(f"project: method={method} {trajectories.n_trajectories} "
          f"trajectories -> {projection_path} (worst total gap {gap:.2e})")
    return 0


def cmd_validate(opts: dict) -> int:
    import numpy as np

    from .errors import PanelSchemaError
    from .ingest import load_panel
    from .project import load_projection_csv
    from .validate import (SCALES, by_age_profile, format_report_table,
                           save_age_profile_csv, save_reports_csv, score_point)

    projection_path = opts["projection"] or _artifact(
        _out(opts, "projection.csv"), "project")
    inputs = [_input(projection_path, "projection"),
              _input(opts["panel"], "panel")]
    label = opts["method"]
    proj = load_projection_csv(projection_path, method=label)
    panel = load_panel(opts["panel"])

    if proj.grid.labels != panel.grid.labels:
        raise PanelSchemaError(
            f"projection age groups {proj.grid.labels} do not match "
            f"the panel's {panel.grid.labels}")
    try:
        li = [proj.locations.index(loc) for loc in panel.locations]
        ti = [proj.periods.index(per) for per in panel.periods]
    except ValueError as exc:
        raise PanelSchemaError(
            f"projection does not cover the panel: {exc}") from None

    # sexes summed; trajectories become the ensemble axis, age leads
    cells = proj.values.sum(axis=3)[np.ix_(li, ti)]
    est = np.moveaxis(cells, (2, 3), (0, 1))
    if est.shape[0] == 1:
        est = est[0]
    truth = panel.net_migration
    reports = [score_point(est, truth, scale, panel.population, label)
               for scale in SCALES]
    report_path = _out(opts, "report.csv")
    save_reports_csv(reports, report_path)
    profile = by_age_profile(est, truth, panel.population)
    profile_path = _out(opts, "age_profile.csv")
    save_age_profile_csv(profile, panel.grid.labels, profile_path)
    _write_manifest("validate", opts, inputs, [report_path, profile_path])
    print(format_report_table(reports), end="")
    return 0


def cmd_report(opts: dict) -> int:
    from .validate import format_report_table, load_reports_csv

    paths = opts["reports"] or [_artifact(_out(opts, "report.csv"),
                                          "validate")]
    reports = []
    for path in paths:
        reports.extend(load_reports_csv(_input(path, "report")))
    table = format_report_table(reports)
    out_path = _out(opts, "report.txt")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(table)
    _write_manifest("report", opts, paths, [out_path])
    print(table, end="")
    return 0


_HANDLERS = {
    "ingest": cmd_ingest,
    "decompose": cmd_decompose,
    "fit-det": cmd_fit_det,
    "fit-bayes": cmd_fit_bayes,
    "project": cmd_project,
    "validate": cmd_validate,
    "report": cmd_report,
}

_DESCRIPTIONS = {
    "ingest": "validate a raw panel and write the canonical artifacts",
    "decompose": "split net totals into gross flows; optionally fit the "
                 "mixed-effects totals model",
    "fit-det": "extract per-age ratio profiles for the deterministic method",
    "fit-bayes": "run MCMC per location; write draw caches and diagnostics",
    "project": "disaggregate total-net trajectories over age and sex",
    "validate": "score a projection against an observed panel",
    "report": "render validation reports as an aligned text table",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowdiff",
        description="Age-specific net migration by flow-difference methods.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for command in COMMANDS:
        p = sub.add_parser(command, help=_DESCRIPTIONS[command],
                           description=_DESCRIPTIONS[command])
        for opt in COMMAND_OPTS[command] + GLOBAL_OPTS:
            opt.add_to(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    try:
        opts = _resolve(args.command, args)
        if opts.get("threads") is not None:
            if opts["threads"] < 1:
                raise ConfigError("--threads must be >= 1")
            for var in ("NUMBA_NUM_THREADS", "OMP_NUM_THREADS",
                        "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ[var] = str(opts["threads"])
        os.makedirs(opts["out_dir"], exist_ok=True)
        return _HANDLERS[args.command](opts)
    except ConfigError as exc:
        print(f"flowdiff {args.command}: config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"flowdiff {args.command}: data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"flowdiff {args.command}: numerical error: {exc}",
              file=sys.stderr)
        return 4
    except FlowdiffError as exc:
        print(f"flowdiff {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
