"""Bayesian estimation of paired in/out migration age schedules.

One model per location.  Observed net migration by age and period is
normal around iota - o, where iota spreads the in-total A_t over age
with a population-weighted normalized Rogers-Castro schedule built from
regional population weights, o spreads the out-total B_t the same way
with local weights, and the cell variance is (iota + o) / v, floored.
Inference is single-site adaptive random-walk Metropolis over the two
schedule parameter vectors and v; the retirement component can be
switched on per side (in-only, out-only, neither).

Reproducibility contract: for a fixed seed, draws are bitwise identical
across runs and across the numba / pure-Python kernel paths, because
all randomness is pregenerated per chain with np.random.default_rng
seeded by (seed, chain) and the kernel is a single code object.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from . import _kernels as _k
from .errors import (
    ConfigError,
    DegenerateScheduleError,
    InsufficientSampleError,
    InvalidParameterError,
    PanelConsistencyError,
    PanelParseError,
    PanelSchemaError,
    StuckChainError,
    UnknownLocationError,
)
from .schedule import RC_FIELDS, AgeGrid, RCParams

N_STATE = _k.N_STATE
V_INDEX = _k.V_INDEX

PARAM_NAMES: tuple[str, ...] = tuple(
    [f"in.{n}" for n in RC_FIELDS] + [f"out.{n}" for n in RC_FIELDS] + ["v"])

RETIREMENT_MODES = ("in-only", "out-only", "neither")
RETIREMENT_HEADER = ("location", "retirement_in", "retirement_out")

_RETIREMENT_SLOTS = (6, 7, 8, 9)   # a3, alpha3, mu3, lambda3 within a side

BAND_ROWS = ("lo95", "lo80", "median", "hi80", "hi95")
_BAND_Q = (0.025, 0.10, 0.50, 0.90, 0.975)

MIN_SUMMARY_DRAWS = 100


@dataclass(frozen=True)
class TruncNormPrior:
    """Normal(loc, scale^2) truncated to [lo, hi].

    For a2 and lambda2 the stored lo is the static floor; the effective
    lower bound follows the current a1 / alpha2 during sampling.
    """

    lo: float
    hi: float
    loc: float
    scale: float

    def __post_init__(self) -> None:
        if not (self.lo < self.hi):
            raise InvalidParameterError(
                f"prior bounds must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise InvalidParameterError(f"prior scale must be positive, "
                                        f"got {self.scale!r}")


def _default_table() -> dict[str, TruncNormPrior]:
    return {
        "a1": TruncNormPrior(0.0, 1.0, 0.0, 0.3),
        "alpha1": TruncNormPrior(0.0, 1.0, 0.0, 1.0),
        "a2": TruncNormPrior(0.0, 1.0, 0.0, 0.3),       # lower bound: a1
        "alpha2": TruncNormPrior(0.0, 1.0, 0.0, 1.0),
        "mu2": TruncNormPrior(0.0, 55.0, 25.0, 2.0),
        "lambda2": TruncNormPrior(0.0, 2.0, 0.0, 1.0),  # lower bound: alpha2
        "a3": TruncNormPrior(0.0, 1.0, 0.0, 0.3),
        "alpha3": TruncNormPrior(0.0, 1.0, 0.0, 1.0),
        "mu3": TruncNormPrior(55.0, 70.0, 63.0, 2.0),
        "lambda3": TruncNormPrior(0.0, 2.0, 0.0, 1.0),
        "c": TruncNormPrior(0.0, 0.01, 0.0, 0.005),
    }


@dataclass(frozen=True)
class PriorSpec:
    """Priors for both schedules plus the retirement-component switches.

    The same hyperparameters apply to the in and out side; v is uniform
    on (0, 1) and carries no table entry.
    """

    priors: dict[str, TruncNormPrior] = field(default_factory=_default_table)
    retirement_in: bool = True
    retirement_out: bool = False
    location: str | None = None

    def __post_init__(self) -> None:
        missing = [n for n in RC_FIELDS if n not in self.priors]
        extra = [n for n in self.priors if n not in RC_FIELDS]
        if missing or extra:
            raise ConfigError(
                f"prior table must cover exactly {RC_FIELDS}; "
                f"missing={missing} unknown={extra}")

    def active_indices(self) -> np.ndarray:
        """Sampled state-vector indices; pinned retirement slots excluded."""
        idx: list[int] = []
        for base, on in ((0, self.retirement_in), (11, self.retirement_out)):
            idx.extend(base + j for j in (0, 1, 2, 3, 4, 5))
            if on:
                idx.extend(base + j for j in _RETIREMENT_SLOTS)
            idx.append(base + 10)
        idx.append(V_INDEX)
        return np.array(idx, dtype=np.int64)

    def scale_groups(self) -> np.ndarray:
        """Joint-rescale move membership per state slot (0 = none).

        Group 1 is the in side's amplitudes and level, group 2 the out
        side's.  The likelihood normalizes each schedule, so a common
        rescaling of one side moves only the prior; a dedicated
        multiplicative move keeps that direction mixing.
        """
        gid = np.zeros(N_STATE, dtype=np.int64)
        for gq, (base, on) in enumerate(((0, self.retirement_in),
                                         (11, self.retirement_out)), start=1):
            gid[base + 0] = gq
            gid[base + 2] = gq
            if on:
                gid[base + 6] = gq
            gid[base + 10] = gq
        return gid

    def pair_moves(self) -> tuple[np.ndarray, np.ndarray, np.ndarray,
                                  tuple[str, ...]]:
        """Two-slot directions proposed jointly: (a, b, coef, names).

        A move shifts slot a by eps and slot b by coef * eps.  Two
        families: cross-side same-increment pairs for the shape slots
        (net data pins in-minus-out much harder than in-plus-out, so
        matching parameters of the two sides are strongly correlated a
        posteriori), and within-side directions per retirement
        component, where peak location trades off against descent
        sharpness and amplitude against decay rate on the few old-age
        groups.
        """
        slots = [1, 3, 4, 5]   # alpha1, alpha2, mu2, lambda2
        if self.retirement_in and self.retirement_out:
            slots += [7, 8, 9]
        a = [j for j in slots]
        b = [j + 11 for j in slots]
        coef = [1.0] * len(slots)
        names = [f"pair.{RC_FIELDS[j]}" for j in slots]
        for base, on, tag in ((0, self.retirement_in, "in"),
                              (11, self.retirement_out, "out")):
            if on:
                a.append(base + 8)    # mu3 with lambda3
                b.append(base + 9)
                coef.append(-0.4)
                names.append(f"ret.peak.{tag}")
                a.append(base + 6)    # a3 with alpha3
                b.append(base + 7)
                coef.append(1.0)
                names.append(f"ret.amp.{tag}")
        return (np.array(a, dtype=np.int64), np.array(b, dtype=np.int64),
                np.array(coef, dtype=float), tuple(names))

    def hyper_arrays(self):
        """(lo, hi, loc, scale) stacked over the full state layout."""
        lo = np.zeros(N_STATE)
        hi = np.ones(N_STATE)
        loc = np.zeros(N_STATE)
        scale = np.ones(N_STATE)
        for base in (0, 11):
            for j, name in enumerate(RC_FIELDS):
                p = self.priors[name]
                lo[base + j] = p.lo
                hi[base + j] = p.hi
                loc[base + j] = p.loc
                scale[base + j] = p.scale
        return lo, hi, loc, scale


def default_prior(retirement_in: bool = True, retirement_out: bool = False,
                  location: str | None = None) -> PriorSpec:
    return PriorSpec(_default_table(), retirement_in, retirement_out, location)


def configure_retirement(location: str, mode: str) -> PriorSpec:
    """Prior with the retirement component placed per `mode`."""
    if mode == "in-only":
        flags = (True, False)
    elif mode == "out-only":
        flags = (False, True)
    elif mode == "neither":
        flags = (False, False)
    else:
        raise ConfigError(f"retirement mode must be one of {RETIREMENT_MODES}, "
                          f"got {mode!r}")
    return default_prior(*flags, location=location)


def _parse_flag(cell: str, lineno: int) -> bool:
    s = cell.strip().lower()
    if s in ("1", "true", "yes"):
        return True
    if s in ("0", "false", "no"):
        return False
    raise PanelParseError(f"line {lineno}: boolean cell must be "
                          f"1/0/true/false/yes/no, got {cell!r}")


def load_retirement_table(path) -> dict[str, str]:
    """CSV (location, retirement_in, retirement_out) -> location -> mode."""
    table: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != RETIREMENT_HEADER:
            raise PanelSchemaError(
                f"retirement table header must be {','.join(RETIREMENT_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise PanelParseError(f"line {lineno}: expected 3 fields, "
                                      f"got {len(row)}")
            loc = row[0].strip()
            if loc in table:
                raise PanelConsistencyError(
                    f"line {lineno}: duplicate location {loc!r}")
            rin = _parse_flag(row[1], lineno)
            rout = _parse_flag(row[2], lineno)
            if rin and rout:
                raise ConfigError(
                    f"line {lineno}: location {loc!r} sets retirement on both "
                    f"sides; supported modes are {RETIREMENT_MODES}")
            table[loc] = ("in-only" if rin else
                          "out-only" if rout else "neither")
    return table


def save_retirement_table(table: dict[str, str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RETIREMENT_HEADER)
        for loc in sorted(table):
            mode = table[loc]
            if mode not in RETIREMENT_MODES:
                raise ConfigError(f"unknown retirement mode {mode!r}")
            w.writerow([loc, int(mode == "in-only"), int(mode == "out-only")])


# -- sampler configuration ---------------------------------------------------

@dataclass(frozen=True)
class SamplerConfig:
    """Chain geometry; burn-in counts toward `iterations`.

    aux_rounds repeats the auxiliary (rescale + cross-side pair) moves
    within each sweep; they are cheap next to the single-site sweep and
    govern the slowest posterior directions.
    """

    chains: int = 3
    iterations: int = 20_000
    burnin: int = 2_000
    thin: int = 10
    adapt_every: int = 100
    aux_rounds: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.chains < 1:
            raise ConfigError("need at least one chain")
        if not (0 <= self.burnin < self.iterations):
            raise ConfigError(
                f"burnin must lie in [0, iterations), got {self.burnin} "
                f"with iterations={self.iterations}")
        if self.thin < 1 or self.adapt_every < 1:
            raise ConfigError("thin and adapt_every must be >= 1")
        if self.aux_rounds < 0:
            raise ConfigError("aux_rounds must be >= 0")

    @property
    def n_kept(self) -> int:
        """Retained draws per chain."""
        return len(range(self.burnin, self.iterations, self.thin))

    @classmethod
    def paper_scale(cls, seed: int = 0) -> "SamplerConfig":
        """Long-run geometry: 3 x 100k sweeps, 10k burn-in, thin 10."""
        return cls(chains=3, iterations=100_000, burnin=10_000, thin=10,
                   seed=seed)


def _tn_median(lo: float, hi: float, loc: float, scale: float) -> float:
    za = (lo - loc) / scale
    zb = (hi - loc) / scale
    p = 0.5 * (ndtr(za) + ndtr(zb))
    return float(loc + scale * ndtri(p))


def initial_state(prior: PriorSpec) -> np.ndarray:
    """Prior medians, applied sequentially so dynamic bounds resolve.

    All chains share this start; dispersion between chains comes from
    the proposal streams.
    """
    s = np.zeros(N_STATE)
    p = prior.priors
    for base, on in ((0, prior.retirement_in), (11, prior.retirement_out)):
        a1 = _tn_median(p["a1"].lo, p["a1"].hi, p["a1"].loc, p["a1"].scale)
        al1 = _tn_median(p["alpha1"].lo, p["alpha1"].hi,
                         p["alpha1"].loc, p["alpha1"].scale)
        a2 = _tn_median(max(p["a2"].lo, a1), p["a2"].hi,
                        p["a2"].loc, p["a2"].scale)
        al2 = _tn_median(p["alpha2"].lo, p["alpha2"].hi,
                         p["alpha2"].loc, p["alpha2"].scale)
        mu2 = _tn_median(p["mu2"].lo, p["mu2"].hi, p["mu2"].loc, p["mu2"].scale)
        la2 = _tn_median(max(p["lambda2"].lo, al2), p["lambda2"].hi,
                         p["lambda2"].loc, p["lambda2"].scale)
        s[base:base + 6] = (a1, al1, a2, al2, mu2, la2)
        if on:
            for j, name in zip(_RETIREMENT_SLOTS,
                               ("a3", "alpha3", "mu3", "lambda3")):
                s[base + j] = _tn_median(p[name].lo, p[name].hi,
                                         p[name].loc, p[name].scale)
        s[base + 10] = _tn_median(p["c"].lo, p["c"].hi, p["c"].loc,
                                  p["c"].scale)
    s[V_INDEX] = 0.5
    return s


GROUP_MOVE_NAMES = ("scale.in", "scale.out")
_GROUP_SCALE0 = 0.3   # log-space width of the joint rescale proposal


def move_names(prior: PriorSpec, aux_rounds: int = 1) -> tuple[str, ...]:
    """Column labels in the kernel's layout: singles, then per-round
    groups and pairs (later rounds suffixed #2, #3, ...)."""
    active = prior.active_indices()
    n_groups = int(prior.scale_groups().max())
    _, _, _, pnames = prior.pair_moves()
    aux = GROUP_MOVE_NAMES[:n_groups] + pnames
    names = list(PARAM_NAMES[j] for j in active)
    for rnd in range(aux_rounds):
        suffix = f"#{rnd + 1}" if rnd else ""
        names.extend(n + suffix for n in aux)
    return tuple(names)


def initial_scales(prior: PriorSpec, aux_rounds: int = 1) -> np.ndarray:
    """Starting proposal widths; burn-in adaptation does the real tuning.

    Single-site widths first, then per round one log-scale width per
    rescale group and one width per pair direction, matching the
    kernel's column layout.
    """
    _, _, _, scale = prior.hyper_arrays()
    active = prior.active_indices()
    n_groups = int(prior.scale_groups().max())
    pair_a, _, _, _ = prior.pair_moves()
    aux = np.concatenate([np.full(n_groups, _GROUP_SCALE0),
                          0.1 * scale[pair_a]])
    single = np.empty(active.size)
    for col, j in enumerate(active):
        single[col] = 0.05 if j == V_INDEX else 0.1 * scale[j]
    return np.concatenate([single] + [aux] * aux_rounds)


# -- draws and samples -------------------------------------------------------

@dataclass(frozen=True)
class PosteriorSample:
    theta_in: RCParams
    theta_out: RCParams
    v: float
    chain: int
    iteration: int


@dataclass(frozen=True)
class PosteriorDraws:
    """Pooled retained draws in the full 23-slot layout.

    Pinned (excluded-retirement) slots hold exact zeros, so a schedule
    rebuilt from any row has the right absent components.
    """

    params: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray
    retirement_in: bool
    retirement_out: bool
    location: str | None = None

    def __post_init__(self) -> None:
        if self.params.ndim != 2 or self.params.shape[1] != N_STATE:
            raise PanelSchemaError(
                f"params must be (n, {N_STATE}), got {self.params.shape}")
        n = self.params.shape[0]
        if self.chain.shape != (n,) or self.iteration.shape != (n,):
            raise PanelSchemaError("chain/iteration must match params rows")

    @property
    def n(self) -> int:
        return self.params.shape[0]

    @property
    def thetas_in(self) -> np.ndarray:
        return self.params[:, 0:11]

    @property
    def thetas_out(self) -> np.ndarray:
        return self.params[:, 11:22]

    @property
    def v_values(self) -> np.ndarray:
        return self.params[:, V_INDEX]

    def sample(self, k: int) -> PosteriorSample:
        row = self.params[k]
        return PosteriorSample(RCParams.from_array(row[0:11]),
                               RCParams.from_array(row[11:22]),
                               float(row[V_INDEX]),
                               int(self.chain[k]), int(self.iteration[k]))

    def evened_indices(self, count: int) -> np.ndarray:
        """`count` row indices spread evenly over the pooled draws."""
        if count < 1:
            raise InvalidParameterError("count must be >= 1")
        if self.n == 0:
            raise InsufficientSampleError("no draws to thin")
        return np.round(np.linspace(0, self.n - 1, count)).astype(np.int64)


@dataclass(frozen=True)
class ChainDiagnostics:
    rhat: dict[str, float]
    ess: dict[str, float]
    acceptance: dict[str, tuple[float, ...]]
    kept_per_chain: int
    messages: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.messages


def split_rhat(sequences) -> float:
    """Potential scale reduction on half-split chains.

    Input is (chains, draws); each chain is halved before the usual
    between/within comparison, so within-chain drift also inflates the
    statistic.
    """
    x = np.asarray(sequences, dtype=float)
    if x.ndim != 2:
        raise InvalidParameterError("expected a (chains, draws) array")
    n2 = x.shape[1] // 2
    if n2 < 2:
        return float("nan")
    halves = np.concatenate([x[:, :n2], x[:, x.shape[1] - n2:]], axis=0)
    within = float(halves.var(axis=1, ddof=1).mean())
    between = float(n2 * halves.mean(axis=1).var(ddof=1))
    if within == 0.0:
        return 1.0 if between == 0.0 else float("inf")
    var_plus = (n2 - 1) / n2 * within + between / n2
    return float(np.sqrt(var_plus / within))


def effective_sample_size(sequences) -> float:
    """Multi-chain ESS with Geyer's initial monotone positive sequence.

    Autocorrelations are estimated per half-chain by FFT, averaged with
    the usual between-chain variance correction, summed in lag pairs
    until a pair goes nonpositive, and forced nonincreasing.  The result
    is clipped to the retained draw count.
    """
    x = np.asarray(sequences, dtype=float)
    if x.ndim != 2:
        raise InvalidParameterError("expected a (chains, draws) array")
    n2 = x.shape[1] // 2
    if n2 < 4:
        return float("nan")
    halves = np.concatenate([x[:, :n2], x[:, x.shape[1] - n2:]], axis=0)
    m = halves.shape[0]
    within = float(halves.var(axis=1, ddof=1).mean())
    if within == 0.0:
        return float("nan")
    between = float(n2 * halves.mean(axis=1).var(ddof=1)) if m > 1 else 0.0
    var_plus = (n2 - 1) / n2 * within + (between / n2 if m > 1 else 0.0)

    centered = halves - halves.mean(axis=1, keepdims=True)
    nfft = 1 << (2 * n2 - 1).bit_length()
    f = np.fft.rfft(centered, nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), nfft, axis=1)[:, :n2] / n2
    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus

    pair = rho[1:]
    npair = pair.size // 2
    total = m * n2
    if npair == 0:
        return float(total)
    p = pair[:2 * npair].reshape(npair, 2).sum(axis=1)
    bad = np.nonzero(p <= 0.0)[0]
    p = p[:bad[0]] if bad.size else p
    if p.size:
        p = np.minimum.accumulate(p)
    tau = 1.0 + 2.0 * float(p.sum())
    tau = max(tau, 1.0 / total)
    return float(min(total / tau, total))


# -- sampling ----------------------------------------------------------------

def _as_matrix(name: str, arr, shape) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=float)
    if out.shape != shape:
        raise PanelSchemaError(f"{name} must have shape {shape}, "
                               f"got {out.shape}")
    return out


def sample_location(g, A, B, pop_regional, pop_local, ages,
                    prior: PriorSpec, config: SamplerConfig,
                    likelihood_on: bool = True,
                    location: str | None = None,
                    ) -> tuple[PosteriorDraws, ChainDiagnostics]:
    """Run the MCMC for one location given already-sliced arrays.

    Args:
        g: observed net migration, (ages, periods).
        A, B: in/out totals per period.
        pop_regional, pop_local: population weights, (ages, periods).
        ages: representative age per group.
        likelihood_on: False samples the prior alone (same kernel).

    Returns:
        (draws pooled over chains, per-parameter diagnostics).

    Raises:
        StuckChainError: if a chain rejects every proposal for 10,000
            consecutive sweeps.
    """
    g = np.ascontiguousarray(g, dtype=float)
    if g.ndim != 2:
        raise PanelSchemaError(f"g must be 2-d (ages, periods), got {g.shape}")
    K, T = g.shape
    A = _as_matrix("A", A, (T,))
    B = _as_matrix("B", B, (T,))
    PW = _as_matrix("pop_regional", pop_regional, (K, T))
    PL = _as_matrix("pop_local", pop_local, (K, T))
    ages = _as_matrix("ages", ages, (K,))
    if likelihood_on:
        if np.any(A <= 0) or np.any(B < 0):
            raise InvalidParameterError("in-totals must be positive and "
                                        "out-totals nonnegative")
        if np.any(PW <= 0) or np.any(PL <= 0):
            raise InvalidParameterError("population weights must be positive")

    active = prior.active_indices()
    group_id = prior.scale_groups()
    pair_a, pair_b, pair_coef, _ = prior.pair_moves()
    lo, hi, loc, scale = prior.hyper_arrays()
    init = initial_state(prior)
    scale0 = initial_scales(prior, config.aux_rounds)
    n_keep = config.n_kept
    n_act = active.size
    n_cols = scale0.size

    kept = np.empty((config.chains, n_keep, N_STATE))
    acc = np.zeros((config.chains, n_cols))
    for c in range(config.chains):
        rng = np.random.default_rng([config.seed, c])
        z = rng.standard_normal((config.iterations, n_cols))
        u = rng.random((config.iterations, n_cols))
        state = init.copy()
        pscale = scale0.copy()
        status = _k.run_chain(g, A, B, PW, PL, ages, state, active, group_id,
                              pair_a, pair_b, pair_coef, lo, hi, loc, scale,
                              pscale, z, u, config.burnin, config.thin,
                              config.adapt_every, config.aux_rounds, kept[c],
                              acc[c], likelihood_on)
        if status == 1:
            raise StuckChainError(
                f"chain {c} rejected every proposal for {_k.STUCK_LIMIT} "
                f"consecutive sweeps; rescale the data or loosen the priors")
        if status == 2:
            raise InvalidParameterError(
                "initial state has zero posterior density; check that the "
                "prior support admits the dynamic bounds")

    rhat: dict[str, float] = {}
    ess: dict[str, float] = {}
    acceptance: dict[str, tuple[float, ...]] = {}
    msgs: list[str] = []
    post = config.iterations - config.burnin
    for col, j in enumerate(active):
        name = PARAM_NAMES[j]
        seqs = kept[:, :, j]
        r = split_rhat(seqs)
        rhat[name] = r
        ess[name] = effective_sample_size(seqs)
        acceptance[name] = tuple(float(a) / post for a in acc[:, col])
        if np.isfinite(r) and r > 1.1:
            msgs.append(f"split R-hat {r:.3f} for {name} exceeds 1.1")
    extra_names = move_names(prior, config.aux_rounds)[n_act:]
    for k, name in enumerate(extra_names):
        acceptance[name] = tuple(float(a) / post for a in acc[:, n_act + k])
    if msgs:
        where = f" at {location!r}" if location else ""
        warnings.warn("convergence not reached" + where + ": "
                      + "; ".join(msgs), RuntimeWarning, stacklevel=2)

    iteration = np.arange(config.burnin, config.iterations, config.thin,
                          dtype=np.int64)
    draws = PosteriorDraws(
        params=kept.reshape(-1, N_STATE).copy(),
        chain=np.repeat(np.arange(config.chains, dtype=np.int64), n_keep),
        iteration=np.tile(iteration, config.chains),
        retirement_in=prior.retirement_in,
        retirement_out=prior.retirement_out,
        location=location)
    diag = ChainDiagnostics(rhat, ess, acceptance, n_keep, tuple(msgs))
    return draws, diag


def sample_posterior(panel, location: str, decomp, prior: PriorSpec,
                     config: SamplerConfig, pop_regional=None,
                     ) -> tuple[PosteriorDraws, ChainDiagnostics]:
    """Slice a panel + decomposition for one location and run the MCMC.

    pop_regional defaults to the panel-wide population sum per age and
    period, which treats the panel's locations as the sending region.
    """
    i = panel.location_index(location)
    try:
        d = decomp.locations.index(location)
    except ValueError:
        raise UnknownLocationError(
            f"location {location!r} missing from the decomposition") from None
    if tuple(decomp.periods) != tuple(panel.periods):
        raise PanelSchemaError("decomposition periods must match the panel")
    g = panel.net_migration[:, i, :]
    PL = panel.population[:, i, :]
    if pop_regional is None:
        PW = panel.population.sum(axis=1)
    else:
        PW = _as_matrix("pop_regional", pop_regional, g.shape)
    return sample_location(g, decomp.A[d], decomp.B[d], PW, PL,
                           panel.grid.midpoints, prior, config,
                           location=location)


def sample_prior(prior: PriorSpec, config: SamplerConfig,
                 ) -> tuple[PosteriorDraws, ChainDiagnostics]:
    """Draws from the joint prior via the same kernel (likelihood off)."""
    dummy = np.ones((1, 1))
    return sample_location(np.zeros((1, 1)), np.ones(1), np.ones(1),
                           dummy, dummy, np.array([30.0]), prior, config,
                           likelihood_on=False)


def log_likelihood(sample: PosteriorSample, g, A, B,
                   pop_regional, pop_local, grid: AgeGrid) -> float:
    """Likelihood of one parameter draw on a (ages, periods) slice."""
    if not (0.0 < sample.v < 1.0):
        raise InvalidParameterError(f"v must lie in (0, 1), got {sample.v!r}")
    g = np.ascontiguousarray(g, dtype=float)
    K, T = g.shape
    A = _as_matrix("A", A, (T,))
    B = _as_matrix("B", B, (T,))
    PW = _as_matrix("pop_regional", pop_regional, (K, T))
    PL = _as_matrix("pop_local", pop_local, (K, T))
    ages = np.ascontiguousarray(grid.midpoints, dtype=float)
    if ages.shape != (K,):
        raise PanelSchemaError(f"grid has {ages.size} groups, g has {K}")
    state = np.concatenate([sample.theta_in.as_array(),
                            sample.theta_out.as_array(), [sample.v]])
    r_in = np.empty(K)
    r_out = np.empty(K)
    _k.rc_eval(state, 0, ages, r_in)
    _k.rc_eval(state, 11, ages, r_out)
    return float(_k.log_likelihood(r_in, r_out, sample.v, g, A, B, PW, PL))


# -- posterior summaries -----------------------------------------------------

def rc_curve_matrix(params: np.ndarray, ages: np.ndarray) -> np.ndarray:
    """Rogers-Castro curves for many parameter rows at once, (n, ages).

    Zero amplitudes cancel their component exactly, matching the
    absent-component convention of the scalar evaluator.
    """
    p = np.asarray(params, dtype=float)
    x = np.asarray(ages, dtype=float)[None, :]
    a1, al1 = p[:, 0:1], p[:, 1:2]
    a2, al2, mu2, la2 = p[:, 2:3], p[:, 3:4], p[:, 4:5], p[:, 5:6]
    a3, al3, mu3, la3 = p[:, 6:7], p[:, 7:8], p[:, 8:9], p[:, 9:10]
    c = p[:, 10:11]
    out = c + a1 * np.exp(-al1 * x)
    t2 = x - mu2
    out = out + a2 * np.exp(-al2 * t2 - np.exp(-la2 * t2))
    t3 = x - mu3
    out = out + a3 * np.exp(-al3 * t3 - np.exp(-la3 * t3))
    return out


def fitted_flows(draws: PosteriorDraws, grid: AgeGrid, A, B,
                 pop_regional, pop_local) -> tuple[np.ndarray, np.ndarray]:
    """Per-draw age-specific in/out flows, each (draws, ages, periods)."""
    ages = np.asarray(grid.midpoints, dtype=float)
    K = ages.size
    A = _as_matrix("A", A, (np.asarray(A).size,))
    T = A.size
    B = _as_matrix("B", B, (T,))
    PW = _as_matrix("pop_regional", pop_regional, (K, T))
    PL = _as_matrix("pop_local", pop_local, (K, T))
    win = rc_curve_matrix(draws.thetas_in, ages)[:, :, None] * PW[None]
    wout = rc_curve_matrix(draws.thetas_out, ages)[:, :, None] * PL[None]
    sin = win.sum(axis=1, keepdims=True)
    sout = wout.sum(axis=1, keepdims=True)
    if np.any(sin <= 0) or np.any(sout <= 0):
        raise DegenerateScheduleError("a drawn schedule collapsed to zero")
    iota = A[None, None, :] * (win / sin)
    o = B[None, None, :] * (wout / sout)
    return iota, o


def posterior_predictive(draws: PosteriorDraws, grid: AgeGrid, A, B,
                         pop_regional, pop_local, rng) -> np.ndarray:
    """Draws of net migration including observation noise, (n, ages, periods)."""
    iota, o = fitted_flows(draws, grid, A, B, pop_regional, pop_local)
    var = (iota + o) / draws.v_values[:, None, None]
    var = np.maximum(var, _k.VARIANCE_FLOOR)
    return iota - o + rng.standard_normal(iota.shape) * np.sqrt(var)


def posterior_summaries(draws: PosteriorDraws, grid: AgeGrid, A, B,
                        pop_regional, pop_local,
                        include_noise: bool = False,
                        rng=None) -> dict[str, np.ndarray]:
    """Median and 80/95% equal-tailed bands for the fitted quantities.

    Returns arrays of shape (5, ages, periods) keyed by rstar_in,
    rstar_out, iota, o, g; rows follow BAND_ROWS.  The r* entries are
    normalized per draw before the quantiles are taken.  With
    include_noise the g entry comes from the posterior predictive
    (requires rng).
    """
    if draws.n < MIN_SUMMARY_DRAWS:
        raise InsufficientSampleError(
            f"need at least {MIN_SUMMARY_DRAWS} draws to summarize, "
            f"have {draws.n}")
    iota, o = fitted_flows(draws, grid, A, B, pop_regional, pop_local)
    Aarr = np.asarray(A, dtype=float)
    Barr = np.asarray(B, dtype=float)
    rstar_in = iota / Aarr[None, None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        rstar_out = np.where(Barr[None, None, :] > 0,
                             o / np.where(Barr == 0, 1.0, Barr)[None, None, :],
                             np.nan)
    if include_noise:
        if rng is None:
            raise InvalidParameterError("include_noise requires an rng")
        var = np.maximum((iota + o) / draws.v_values[:, None, None],
                         _k.VARIANCE_FLOOR)
        g = iota - o + rng.standard_normal(iota.shape) * np.sqrt(var)
    else:
        g = iota - o
    q = np.asarray(_BAND_Q)
    return {
        "rstar_in": np.quantile(rstar_in, q, axis=0),
        "rstar_out": np.quantile(rstar_out, q, axis=0),
        "iota": np.quantile(iota, q, axis=0),
        "o": np.quantile(o, q, axis=0),
        "g": np.quantile(g, q, axis=0),
    }


# -- serialization -----------------------------------------------------------

def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def save_draws_csv(draws: PosteriorDraws, path) -> None:
    """Long-format CSV: chain, iter, param, value (all 23 slots per draw)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("chain", "iter", "param", "value"))
        for k in range(draws.n):
            ch = int(draws.chain[k])
            it = int(draws.iteration[k])
            row = draws.params[k]
            for j, name in enumerate(PARAM_NAMES):
                w.writerow((ch, it, name, _fmt(row[j])))


def load_draws_csv(path, location: str | None = None) -> PosteriorDraws:
    name_ix = {n: j for j, n in enumerate(PARAM_NAMES)}
    rows: dict[tuple[int, int], np.ndarray] = {}
    filled: dict[tuple[int, int], int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != (
                "chain", "iter", "param", "value"):
            raise PanelSchemaError("draws header must be chain,iter,param,value")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise PanelParseError(f"line {lineno}: expected 4 fields")
            try:
                key = (int(row[0]), int(row[1]))
                j = name_ix[row[2].strip()]
                val = float(row[3])
            except (ValueError, KeyError) as exc:
                raise PanelParseError(f"line {lineno}: {exc}") from None
            vec = rows.get(key)
            if vec is None:
                vec = np.zeros(N_STATE)
                rows[key] = vec
                filled[key] = 0
            vec[j] = val
            filled[key] += 1
    if not rows:
        raise PanelSchemaError("draws file holds no rows")
    short = [k for k, cnt in filled.items() if cnt != N_STATE]
    if short:
        raise PanelConsistencyError(
            f"draw chain={short[0][0]} iter={short[0][1]} is missing "
            f"parameters")
    keys = list(rows)  # file order; save_draws_csv writes draws contiguously
    params = np.vstack([rows[k] for k in keys])
    chain = np.array([k[0] for k in keys], dtype=np.int64)
    iteration = np.array([k[1] for k in keys], dtype=np.int64)
    rin = bool(np.any(params[:, 6:10] != 0))
    rout = bool(np.any(params[:, 17:21] != 0))
    return PosteriorDraws(params, chain, iteration, rin, rout, location)


def save_cache(draws: PosteriorDraws, path) -> None:
    """Binary cache; exact float round-trip."""
    np.savez(path,
             params=draws.params,
             chain=draws.chain,
             iteration=draws.iteration,
             retirement=np.array([draws.retirement_in, draws.retirement_out]),
             location=np.array(draws.location or ""))


def load_cache(path) -> PosteriorDraws:
    with np.load(path, allow_pickle=False) as d:
        loc = str(d["location"][()])
        flags = d["retirement"]
        return PosteriorDraws(np.array(d["params"]),
                              np.array(d["chain"]),
                              np.array(d["iteration"]),
                              bool(flags[0]), bool(flags[1]),
                              loc or None)
