"""Finite-sample estimators on a :class:`~margte.synth.Dataset`.

Each estimator returns an :class:`EstimateResult`.  Propensity models are
always fitted on a single regime; there is deliberately no pooled fit.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import special

from . import oracle
from .dgp import Binned, Identity
from .errors import (
    ConfigError,
    DegenerateWeightsError,
    EmptyMatchError,
    InsufficientDataError,
    MargteError,
    NonConvergenceError,
    SeparationError,
    UnstableEstimatorError,
)
from .rng import BOOTSTRAP, Stream


@dataclass(frozen=True)
class CellSummary:
    cell: float
    n_pre: int
    n_post: int
    hires_pre: int
    hires_post: int
    delta_p: float
    tau: float
    weight: float
    used: bool
    reason: str = ""


@dataclass(frozen=True)
class EstimateResult:
    estimand: str
    point: float
    se: Optional[float] = None
    n_used: int = 0
    n_dropped: int = 0
    warnings: tuple = ()
    cells: tuple = ()

    def with_bootstrap(self, boot):
        return replace(self, se=boot.se, warnings=self.warnings + boot.warnings)


@dataclass(frozen=True)
class BinningConfig:
    n_cells: int = 20
    min_participants: int = 5

    def __post_init__(self):
        if self.n_cells < 2:
            raise ValueError("need at least 2 cells")
        if self.min_participants < 1:
            raise ValueError("min_participants must be at least 1")


# --------------------------------------------------------------------------
# cells on the covariate


@dataclass(frozen=True)
class Cells:
    """Partition of the covariate line.

    When the pooled covariate takes at most ``n_cells`` distinct values each
    value is its own cell (``values``); otherwise cells are delimited by the
    pooled-sample quantiles in ``edges`` (interior edges only).
    """

    values: Optional[np.ndarray] = None
    edges: Optional[np.ndarray] = None

    @property
    def n(self):
        return len(self.values) if self.values is not None else len(self.edges) + 1

    def assign(self, x):
        x = np.asarray(x, dtype=float)
        if self.values is None:
            return np.searchsorted(self.edges, x, side="right")
        pos = np.minimum(np.searchsorted(self.values, x), len(self.values) - 1)
        return np.where(self.values[pos] == x, pos, -1)

    def label(self, k):
        return float(self.values[k]) if self.values is not None else float(k)

    def theta_interval(self, k, covariate):
        """``(lower, upper, closed)`` of productivity mapped into cell ``k``."""
        if isinstance(covariate, Identity):
            if self.values is not None:
                v = float(self.values[k])
                return v, v, "both"
            lower = None if k == 0 else float(self.edges[k - 1])
            upper = None if k == len(self.edges) else float(self.edges[k])
            return lower, upper, "left"
        if isinstance(covariate, Binned) and self.values is not None:
            c = int(self.values[k])
            lower = None if c == 0 else covariate.edges[c]
            upper = None if c == covariate.n_cells - 1 else covariate.edges[c + 1]
            return lower, upper, "left"
        raise ValueError(f"exact cell quantities unavailable for covariate mode {covariate.mode!r}")


def make_cells(x, bincfg):
    x = np.asarray(x, dtype=float)
    distinct = np.unique(x)
    if distinct.size <= bincfg.n_cells:
        return Cells(values=distinct)
    probs = np.arange(1, bincfg.n_cells) / bincfg.n_cells
    return Cells(edges=np.unique(np.quantile(x, probs)))


# --------------------------------------------------------------------------
# propensity models


@dataclass(frozen=True)
class LogisticFit:
    intercept: float
    slope: float
    regime: int
    iterations: int = 0

    kind = "logistic"

    def predict(self, ds):
        return special.expit(self.intercept + self.slope * ds.x)


@dataclass(frozen=True, eq=False)
class BinnedRates:
    cells: Cells
    rates: np.ndarray  # NaN marks a cell with no regime observations
    counts: np.ndarray
    regime: int

    kind = "binned"

    def predict(self, ds):
        idx = self.cells.assign(ds.x)
        out = np.full(idx.shape, math.nan)
        seen = idx >= 0
        out[seen] = self.rates[idx[seen]]
        return out


@dataclass(frozen=True, eq=False)
class OracleProbability:
    """Exact ``P(D = 1 | X, regime)`` from the generating spec (diagnostics only)."""

    spec: object
    regime: int

    kind = "oracle"

    def predict(self, ds):
        p = self.spec.hiring(self.regime)
        if ds.theta is not None:
            return np.asarray(p(ds.theta), dtype=float)
        cov = self.spec.covariate
        if isinstance(cov, Identity):
            return np.asarray(p(ds.x), dtype=float)
        if isinstance(cov, Binned):
            table = np.array([
                oracle.cell_average(self.spec, p, *cov.cell_interval(k))[1]
                for k in range(cov.n_cells)
            ])
            return table[ds.x.astype(int)]
        raise ValueError("oracle propensities under a noisy covariate need revealed theta")


def _fit_logistic(x, d, regime, max_iter=100, gtol=1e-10):
    if d.min() == d.max():
        raise SeparationError(
            f"all regime-{regime} firms have d={int(d[0])}; use BinnedRates instead"
        )
    if np.ptp(x) == 0:
        raise ValueError("covariate is constant; the slope is not identified")
    x1, x0 = x[d == 1], x[d == 0]
    if x0.max() <= x1.min() or x1.max() <= x0.min():
        raise SeparationError("covariate separates participants; use BinnedRates instead")

    center, scale = x.mean(), x.std()
    design = np.column_stack([np.ones_like(x), (x - center) / scale])
    y = d.astype(float)
    beta = np.array([special.logit(y.mean()), 0.0])

    def loglik(b):
        eta = design @ b
        return np.mean(y * eta - np.logaddexp(0.0, eta))

    for it in range(max_iter):
        prob = special.expit(design @ beta)
        grad = design.T @ (y - prob) / len(y)
        if np.linalg.norm(grad) <= gtol:
            break
        hess = (design.T * (prob * (1 - prob))) @ design / len(y)
        step = np.linalg.solve(hess, grad)
        base, t = loglik(beta), 1.0
        while t > 1e-12 and loglik(beta + t * step) < base:
            t *= 0.5
        beta = beta + t * step
    else:
        raise NonConvergenceError(
            f"logistic fit did not reach gradient norm {gtol} in {max_iter} iterations",
            estimate=beta,
        )
    slope = beta[1] / scale
    return LogisticFit(float(beta[0] - slope * center), float(slope), regime, it)


def fit_propensity(ds, regime, kind="logistic", bincfg=None, spec=None):
    """Fit ``P(D = 1 | X)`` on the regime-``regime`` cohort only."""
    rows = ds.cohort(regime)
    if rows.size == 0:
        raise InsufficientDataError(f"no regime-{regime} firms")
    if kind == "logistic":
        return _fit_logistic(ds.x[rows], ds.d[rows], regime)
    if kind == "binned":
        cells = make_cells(ds.x, bincfg or BinningConfig())
        idx = cells.assign(ds.x[rows])
        counts = np.bincount(idx, minlength=cells.n)
        hires = np.bincount(idx, weights=ds.d[rows], minlength=cells.n)
        with np.errstate(invalid="ignore", divide="ignore"):
            rates = np.where(counts > 0, hires / counts, math.nan)
        return BinnedRates(cells, rates, counts, regime)
    if kind == "oracle":
        if spec is None:
            raise ValueError("oracle propensities need the generating spec")
        return OracleProbability(spec, regime)
    raise ValueError(f"unknown propensity kind {kind!r}")


# --------------------------------------------------------------------------
# estimators


def estimate_omd(ds):
    """Post-minus-pre difference in participant mean outcomes."""
    means = []
    for s in (0, 1):
        rows = ds.participants(s)
        if rows.size == 0:
            raise InsufficientDataError(f"no regime-{s} participants")
        means.append(ds.outcome[rows].mean())
    n = ds.participants(0).size + ds.participants(1).size
    return EstimateResult("omd", float(means[1] - means[0]), n_used=n)


def _check_regime(pm, regime):
    if pm.regime != regime:
        raise ValueError(f"propensity model was fitted on regime {pm.regime}, expected {regime}")


def estimate_ipw_pate(ds, pm0, pm1, trim=0.01):
    """Difference of the regimes' inverse-probability-weighted outcome means."""
    if not 0 <= trim < 0.5:
        raise ValueError("trim must lie in [0, 0.5)")
    means, warnings = [], []
    for s, pm in ((0, pm0), (1, pm1)):
        _check_regime(pm, s)
        rows = ds.cohort(s)
        if rows.size == 0:
            raise InsufficientDataError(f"no regime-{s} firms")
        phat = pm.predict(ds)[rows]
        d = ds.d[rows] == 1
        if np.isnan(phat[d]).any():
            raise DegenerateWeightsError(f"missing regime-{s} propensities for participants")
        clipped = phat < trim
        if clipped.all():
            raise DegenerateWeightsError(f"every regime-{s} propensity is below trim={trim}")
        if clipped.any():
            warnings.append(f"regime {s}: {int(clipped.sum())} propensities clipped at {trim}")
        y = np.where(d, ds.outcome[rows], 0.0)
        means.append(np.mean(y / np.maximum(phat, trim)))
    return EstimateResult("pate", float(means[1] - means[0]), n_used=len(ds),
                          warnings=tuple(warnings))


def _nearest(pool_score, pool_id, query):
    """Index into the pool of the nearest score to each query; lowest id wins ties."""
    order = np.lexsort((pool_id, pool_score))
    score, ids = pool_score[order], pool_id[order]
    starts = np.flatnonzero(np.r_[True, score[1:] != score[:-1]])
    values, rep = score[starts], order[starts]
    k = np.searchsorted(values, query)
    left, right = np.clip(k - 1, 0, len(values) - 1), np.clip(k, 0, len(values) - 1)
    dl = np.where(k > 0, query - values[left], np.inf)
    dr = np.where(k < len(values), values[right] - query, np.inf)
    pick_left = (dl < dr) | ((dl == dr) & (pool_id[rep[left]] <= pool_id[rep[right]]))
    choice = np.where(pick_left, left, right)
    return rep[choice], np.minimum(dl, dr)


def estimate_psm(ds, match_on, pm, caliper=None):
    """One-to-one nearest-neighbour propensity matching across regimes.

    ``match_on="post"``: each post-regime participant is matched to a
    pre-regime participant on ``p1_hat`` (fitted on the post cohort); the
    target is the post-participant-weighted ATE.  ``match_on="pre"``: each
    pre-regime participant is matched to a post-regime participant on
    ``p0_hat`` (fitted on the pre cohort, extrapolated to the post cohort);
    the target is the pre-participant-weighted ATE.  Matching is with
    replacement; units without a match inside ``caliper`` are dropped.
    """
    if match_on not in ("pre", "post"):
        raise ValueError(f"match_on must be 'pre' or 'post', got {match_on!r}")
    base = 1 if match_on == "post" else 0
    _check_regime(pm, base)
    treated, pool = ds.participants(base), ds.participants(1 - base)
    if treated.size == 0 or pool.size == 0:
        raise InsufficientDataError("PSM needs participants in both regimes")
    phat = pm.predict(ds)
    warnings = []
    pool_ok = ~np.isnan(phat[pool])
    if not pool_ok.all():
        warnings.append(f"{int((~pool_ok).sum())} pool units lack a propensity")
        pool = pool[pool_ok]
    has_score = ~np.isnan(phat[treated])
    if pool.size == 0 or not has_score.any():
        raise EmptyMatchError("no scored units to match")
    scored = treated[has_score]
    pick, dist = _nearest(phat[pool], ds.firm_id[pool], phat[scored])
    keep = np.ones(scored.size, dtype=bool) if caliper is None else dist <= caliper
    if not keep.any():
        raise EmptyMatchError(f"no match within caliper {caliper}")
    diffs = ds.outcome[scored[keep]] - ds.outcome[pool[pick[keep]]]
    if base == 0:
        diffs = -diffs
    n_drop = int(treated.size - keep.sum())
    if n_drop:
        warnings.append(f"{n_drop} of {treated.size} regime-{base} participants unmatched")
    estimand = "tau_q1" if base == 1 else "tau_q0"
    return EstimateResult(estimand, float(diffs.mean()), n_used=int(keep.sum()),
                          n_dropped=n_drop, warnings=tuple(warnings))


def estimate_marginality(ds, bincfg=None, plugin=None, min_shift_z=2.0):
    """Cell-wise participation-shift weighted average of outcome differences.

    Per covariate cell: ``dp`` is the post-minus-pre participation rate,
    ``tau`` the post-minus-pre participant mean outcome and ``f`` the pooled
    cell frequency; the estimate is ``sum(tau*dp*f) / sum(dp*f)`` over cells
    with at least ``min_participants`` participants in each regime and
    ``dp > 0``.

    ``plugin`` (a DGPSpec) replaces ``dp`` and ``f`` by their exact values.
    Without it, the aggregate participation shift must exceed
    ``min_shift_z`` standard errors, otherwise the weights are treated as
    degenerate.
    """
    bincfg = bincfg or BinningConfig()
    cells = make_cells(ds.x, bincfg)
    idx = cells.assign(ds.x)
    n, hires, ysum = [], [], []
    for s in (0, 1):
        rows = ds.cohort(s)
        part = ds.participants(s)
        n.append(np.bincount(idx[rows], minlength=cells.n))
        hires.append(np.bincount(idx[part], minlength=cells.n))
        ysum.append(np.bincount(idx[part], weights=ds.outcome[part], minlength=cells.n))
    if n[0].sum() == 0 or n[1].sum() == 0:
        raise InsufficientDataError("both regimes need firms")
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = [hires[s] / n[s] for s in (0, 1)]
        ybar = [ysum[s] / hires[s] for s in (0, 1)]
    dp = rate[1] - rate[0]
    tau = ybar[1] - ybar[0]
    freq = (n[0] + n[1]) / len(ds)
    if plugin is not None:
        exact = [oracle.cell_average(plugin, plugin.delta_p,
                                     *cells.theta_interval(k, plugin.covariate))
                 for k in range(cells.n)]
        freq = np.array([m for m, _ in exact])
        dp = np.array([v for _, v in exact])

    enough = (hires[0] >= bincfg.min_participants) & (hires[1] >= bincfg.min_participants)
    if plugin is None and min_shift_z is not None:
        r0, r1 = rate[0][enough], rate[1][enough]
        shift = np.sum(dp[enough] * freq[enough])
        var = np.sum(freq[enough] ** 2 * (r1 * (1 - r1) / n[1][enough]
                                          + r0 * (1 - r0) / n[0][enough]))
        if not shift > min_shift_z * math.sqrt(var):
            raise DegenerateWeightsError(
                f"participation shift {shift:.4g} is within {min_shift_z} SE of zero"
            )
    used = enough & (dp > 0)
    summaries = []
    for k in range(cells.n):
        reason = "" if used[k] else ("too few participants" if not enough[k] else "dp <= 0")
        summaries.append(CellSummary(
            cells.label(k), int(n[0][k]), int(n[1][k]), int(hires[0][k]), int(hires[1][k]),
            float(dp[k]), float(tau[k]), float(dp[k] * freq[k]), bool(used[k]), reason,
        ))
    if used.sum() < 2:
        raise InsufficientDataError(f"only {int(used.sum())} usable cells")
    weights = dp[used] * freq[used]
    denom = math.fsum(weights)
    if denom <= 0:
        raise DegenerateWeightsError("participation-shift weights sum to zero")
    point = math.fsum(tau[used] * weights) / denom
    n_used = int((n[0] + n[1])[used].sum())
    dropped = int(cells.n - used.sum())
    warnings = (f"{dropped} cells excluded",) if dropped else ()
    return EstimateResult("tau_dp", point, n_used=n_used, n_dropped=len(ds) - n_used,
                          warnings=warnings, cells=tuple(summaries))


# --------------------------------------------------------------------------
# bootstrap


@dataclass(frozen=True)
class BootstrapResult:
    se: float
    replicates: np.ndarray
    failures: int
    warnings: tuple = ()


def bootstrap(ds, estimator, B=200, seed=0, threads=1, max_failure_share=0.2):
    """Standard error from resampling firms with replacement within each regime.

    Replicate ``b`` draws its indices from ``Stream.from_seed(seed, BOOTSTRAP, b)``.
    Replicates that raise are dropped and counted.
    """
    if B < 1:
        raise ValueError("B must be positive")
    strata = [ds.cohort(0), ds.cohort(1)]

    def replicate(b):
        gen = Stream.from_seed(seed, BOOTSTRAP, b).generator()
        index = np.concatenate([rows[gen.integers(0, rows.size, rows.size)]
                                for rows in strata if rows.size])
        try:
            return estimator(ds.take(index)).point
        except (MargteError, ValueError, np.linalg.LinAlgError):
            return math.nan

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            values = np.array(list(pool.map(replicate, range(B))))
    else:
        values = np.array([replicate(b) for b in range(B)])
    ok = values[~np.isnan(values)]
    failures = B - ok.size
    if failures > max_failure_share * B:
        raise UnstableEstimatorError(f"{failures} of {B} bootstrap replicates failed")
    warnings = []
    if failures:
        warnings.append(f"{failures} bootstrap replicates failed")
    if ok.size < 2:
        warnings.append("single bootstrap replicate; SE set to 0")
        return BootstrapResult(0.0, values, failures, tuple(warnings))
    se = 0.0 if np.ptp(ok) == 0 else float(ok.std(ddof=1))  # avoid roundoff noise
    return BootstrapResult(se, values, failures, tuple(warnings))


# --------------------------------------------------------------------------
# named estimators, shared by the CLI and the Monte Carlo harness

ESTIMATORS = ("omd", "ipw", "psm_post", "psm_pre", "marginality")
_OPTIONS = {
    "omd": set(),
    "ipw": {"propensity", "trim", "cells", "min_participants"},
    "psm_post": {"propensity", "caliper", "cells", "min_participants"},
    "psm_pre": {"propensity", "caliper", "cells", "min_participants"},
    "marginality": {"cells", "min_participants", "min_shift_z", "plugin"},
}


def make_estimator(name, options=None, spec=None) -> Callable:
    """Build ``estimator(ds) -> EstimateResult`` from a name and option table.

    Propensity models are refitted on every dataset passed in, so the
    closure is suitable for bootstrapping.
    """
    options = dict(options or {})
    if name not in _OPTIONS:
        raise ConfigError(f"unknown estimator {name!r}; choose from {', '.join(ESTIMATORS)}")
    for key in options:
        if key not in _OPTIONS[name]:
            raise ConfigError(f"unknown option '{key}' for estimator {name}")
    try:
        bincfg = BinningConfig(int(options.get("cells", 20)),
                               int(options.get("min_participants", 5)))
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from None
    kind = options.get("propensity", "logistic")
    if kind not in ("logistic", "binned", "oracle"):
        raise ConfigError(f"{name}: propensity must be logistic, binned or oracle")
    if (kind == "oracle" or options.get("plugin")) and spec is None:
        raise ConfigError(f"{name}: oracle quantities need a [dgp] section")

    def propensity(ds, regime):
        return fit_propensity(ds, regime, kind, bincfg, spec)

    if name == "omd":
        return estimate_omd
    if name == "ipw":
        trim = float(options.get("trim", 0.01))
        return lambda ds: estimate_ipw_pate(ds, propensity(ds, 0), propensity(ds, 1), trim)
    if name in ("psm_post", "psm_pre"):
        side = name.split("_")[1]
        regime = 1 if side == "post" else 0
        caliper = options.get("caliper")
        caliper = None if caliper is None else float(caliper)
        return lambda ds: estimate_psm(ds, side, propensity(ds, regime), caliper)
    plugin = spec if options.get("plugin") else None
    z = options.get("min_shift_z", 2.0)
    return lambda ds: estimate_marginality(ds, bincfg, plugin, z)
