"""Exact estimands of a known :class:`~margte.dgp.DGPSpec`.

Every population quantity is an expectation over the productivity
distribution ``F``.  Discrete distributions are summed exactly; continuous
ones are integrated by adaptive Gauss-Legendre quadrature on ``[0, theta_max]``
with ``theta_max = F^{-1}(truncation)``, plus a separate tail segment out to
survival probability ``TAIL_MASS``.  Without the tail segment a quadratic
outcome loses up to ~1e-7 of its mean beyond ``theta_max``.  Setting
``QuadratureConfig(tail=False)`` drops the tail and renormalises the
truncated ``F`` instead.

Notation used in docstrings: ``N_s = E_F[p_s]`` is the entrant mass of regime
``s`` and ``Q_s`` the participant distribution with density ``p_s f / N_s``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import (
    DegenerateRegimeError,
    DegenerateWeightsError,
    EmptyStratumError,
    NonConvergenceError,
    ThresholdUnattainableError,
)

_EPS = np.finfo(float).eps
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(15)
_SPLIT_QUANTILES = np.array(
    [1e-4, 1e-2, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 0.999, 0.99999, 0.9999999]
)
_TAIL_SURVIVAL = np.array([1e-12, 1e-15, 1e-20, 1e-25, 1e-30, 1e-40, 1e-50])
TAIL_MASS = 1e-60
WEIGHT_FLOOR = 1e-12
STRATUM_FLOOR = 1e-12


@dataclass(frozen=True)
class QuadratureConfig:
    tol: float = 1e-10
    max_subdivisions: int = 2048
    truncation: float = 1.0 - 1e-10
    tail: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("quadrature tolerance must be positive")
        if self.max_subdivisions < 16:
            raise ValueError("need at least 16 subdivisions")
        if not 0.5 < self.truncation < 1.0:
            raise ValueError("truncation quantile must lie in (0.5, 1)")


DEFAULT_QUADRATURE = QuadratureConfig()


# --------------------------------------------------------------------------
# quadrature


def _gauss(f, lo, hi):
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    nodes = mid[:, None] + half[:, None] * _NODES
    vals = np.asarray(f(nodes.ravel()), dtype=float).reshape(nodes.shape)
    if not np.isfinite(vals).all():
        raise ValueError("integrand is not finite on the integration range")
    return half * (vals @ _WEIGHTS), half * (np.abs(vals) @ _WEIGHTS)


def adaptive_quad(f, edges, tol=1e-10, max_subdivisions=2048):
    """Integrate a vectorised ``f`` over consecutive ``edges``.

    Each interval's 15-point Gauss-Legendre value is compared with the sum
    over its two halves; an interval is accepted once that difference falls
    below its width-proportional share of ``tol`` (or the roundoff floor).
    """
    edges = np.unique(np.asarray(edges, dtype=float))
    lo, hi = edges[:-1], edges[1:]
    total_width = float(hi[-1] - lo[0]) if lo.size else 0.0
    if total_width <= 0:
        return 0.0
    whole, _ = _gauss(f, lo, hi)
    accepted = []
    splits = 0
    while lo.size:
        mid = 0.5 * (lo + hi)
        left, left_abs = _gauss(f, lo, mid)
        right, right_abs = _gauss(f, mid, hi)
        halves = left + right
        err = np.abs(whole - halves)
        share = tol * (hi - lo) / total_width
        tiny = (mid <= lo) | (mid >= hi) | (hi - lo <= 64 * _EPS * np.abs(hi))
        done = (err <= share) | (err <= 50 * _EPS * (left_abs + right_abs)) | tiny
        accepted.append(halves[done])
        todo = ~done
        splits += int(todo.sum())
        if splits > max_subdivisions:
            best = math.fsum(np.concatenate(accepted + [halves[todo]]))
            raise NonConvergenceError(
                f"quadrature exceeded {max_subdivisions} subdivisions", estimate=best
            )
        lo, hi = np.concatenate([lo[todo], mid[todo]]), np.concatenate([mid[todo], hi[todo]])
        whole = np.concatenate([left[todo], right[todo]])
    return math.fsum(np.concatenate(accepted))


def _in_interval(points, lower, upper, closed):
    mask = np.ones(points.shape, dtype=bool)
    if lower is not None:
        mask &= points >= lower if closed in ("left", "both") else points > lower
    if upper is not None:
        mask &= points <= upper if closed in ("right", "both") else points < upper
    return mask


def integrate(integrand, spec, qcfg=DEFAULT_QUADRATURE, lower=None, upper=None,
              closed="right", breakpoints=()):
    """``E_F[integrand(theta); theta in interval]`` for a vectorised integrand.

    The interval defaults to the whole support and is ``(lower, upper]`` unless
    ``closed`` says otherwise ("left", "both").  Discrete distributions are
    summed exactly over their support points.
    """
    dist = spec.distribution
    if dist.is_discrete:
        pts = dist.points
        mask = _in_interval(pts, lower, upper, closed)
        if not mask.any():
            return 0.0
        vals = np.asarray(integrand(pts[mask]), dtype=float) * np.ones(mask.sum())
        return math.fsum(dist.weights[mask] * vals)

    top = dist.upper(qcfg.truncation)
    a = 0.0 if lower is None else max(0.0, float(lower))
    far = float(dist.isf(TAIL_MASS)) if qcfg.tail else top
    b = far if upper is None else min(far, float(upper))
    if b <= a:
        return 0.0
    extra = np.concatenate([
        dist.ppf(_SPLIT_QUANTILES),
        np.asarray(spec.breakpoints(), dtype=float),
        np.asarray(breakpoints, dtype=float),
    ])
    tail_cuts = dist.isf(_TAIL_SURVIVAL) if qcfg.tail else np.zeros(0)

    def weighted(t):
        return np.asarray(integrand(t), dtype=float) * dist.pdf(t)

    def piece(lo, hi, cuts, tol):
        if hi <= lo:
            return 0.0
        cuts = np.concatenate([[lo, hi], cuts])
        return adaptive_quad(weighted, cuts[(cuts >= lo) & (cuts <= hi)], tol,
                             qcfg.max_subdivisions)

    if not qcfg.tail:
        return piece(a, b, extra, qcfg.tol) / float(dist.cdf(top))
    body = piece(a, min(b, top), extra, 0.5 * qcfg.tol)
    lo, hi = max(a, top), b
    if hi <= lo:
        return body
    # the tail spans many decades for heavy tails: integrate in log(theta)
    cuts = np.log(np.concatenate([[lo, hi], extra[extra > 0], tail_cuts]))
    cuts = cuts[(cuts >= math.log(lo)) & (cuts <= math.log(hi))]

    def in_log(u):
        t = np.exp(u)
        return weighted(t) * t

    return body + adaptive_quad(in_log, cuts, 0.5 * qcfg.tol, qcfg.max_subdivisions)


# --------------------------------------------------------------------------
# population estimands


def mass_entrants(spec, regime, qcfg=DEFAULT_QUADRATURE):
    """Entrant mass ``N_s = E_F[p_s(theta)]``."""
    mass = integrate(spec.hiring(regime), spec, qcfg)
    if mass <= 0:
        raise DegenerateRegimeError(f"regime {regime} has no entrants (N{regime} = {mass})")
    return mass


def importance_density(spec, regime, theta, qcfg=DEFAULT_QUADRATURE):
    """Participant density ``q_s = p_s f / N_s`` (a point mass for discrete F)."""
    from .dgp import eval_density

    n = mass_entrants(spec, regime, qcfg)
    return eval_density(spec.distribution, theta) * spec.hiring(regime)(theta) / n


def observed_mean(spec, regime, qcfg=DEFAULT_QUADRATURE):
    """Mean outcome among participants, ``E_{Q_s}[y_s]``."""
    p, y = spec.hiring(regime), spec.outcome(regime)
    return integrate(lambda t: y(t) * p(t), spec, qcfg) / mass_entrants(spec, regime, qcfg)


def pate(spec, qcfg=DEFAULT_QUADRATURE):
    return integrate(spec.tau, spec, qcfg)


class WeightingScheme:
    name: str = ""

    def weight(self, spec):
        raise NotImplementedError

    def breakpoints(self):
        return ()


class Population(WeightingScheme):
    name = "population"

    def weight(self, spec):
        return lambda t: np.ones_like(np.asarray(t, dtype=float))


class PreRegime(WeightingScheme):
    name = "pre"

    def weight(self, spec):
        return spec.p0


class PostRegime(WeightingScheme):
    name = "post"

    def weight(self, spec):
        return spec.p1


class Marginality(WeightingScheme):
    """Weights by the policy-induced participation shift ``p1 - p0``."""

    name = "marginality"

    def weight(self, spec):
        return spec.delta_p


@dataclass(frozen=True)
class CustomGrid(WeightingScheme):
    """Piecewise-linear weights through ``(grid[k], weights[k])``, flat outside."""

    grid: tuple
    weights: tuple
    name = "custom"

    def __post_init__(self):
        grid = tuple(float(g) for g in self.grid)
        weights = tuple(float(w) for w in self.weights)
        if len(grid) != len(weights) or not grid:
            raise ValueError("grid and weights must be nonempty and of equal length")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError("grid must be strictly increasing")
        if any(not math.isfinite(w) or w < 0 for w in weights):
            raise ValueError("custom weights must be finite and nonnegative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "weights", weights)

    def weight(self, spec):
        g, w = np.asarray(self.grid), np.asarray(self.weights)
        return lambda t: np.interp(t, g, w)

    def breakpoints(self):
        return self.grid


SCHEMES = {
    "population": Population(),
    "pre": PreRegime(),
    "post": PostRegime(),
    "marginality": Marginality(),
}


def weighted_ate(spec, scheme, qcfg=DEFAULT_QUADRATURE):
    """``E_F[tau * w] / E_F[w]`` for the scheme's weight ``w``."""
    if isinstance(scheme, str):
        scheme = SCHEMES[scheme]
    w = scheme.weight(spec)
    brk = scheme.breakpoints()
    denom = integrate(w, spec, qcfg, breakpoints=brk)
    if denom <= WEIGHT_FLOOR:
        raise DegenerateWeightsError(
            f"{scheme.name} weights integrate to {denom:.3g}; the estimand is undefined"
        )
    return integrate(lambda t: spec.tau(t) * w(t), spec, qcfg, breakpoints=brk) / denom


def omd(spec, qcfg=DEFAULT_QUADRATURE):
    return observed_mean(spec, 1, qcfg) - observed_mean(spec, 0, qcfg)


class Decomposition(NamedTuple):
    ate_term: float
    selection_bias: float
    reweight_bias: float

    @property
    def total(self):
        return self.ate_term + self.selection_bias + self.reweight_bias


def omd_decomposition(spec, anchor="post", qcfg=DEFAULT_QUADRATURE):
    """Split the observed mean difference into an ATE and two bias terms.

    ``anchor="post"`` uses the post-regime participant ATE and prices the
    composition change with ``y0``; ``anchor="pre"`` uses the pre-regime ATE
    and prices it with ``y1``.  In both cases::

        selection = E_F[y * (p1 - p0)] / N_anchor
        reweight  = (1/N1 - 1/N0) * E_F[y * p_other]

    where ``p_other`` is ``p0`` for the post anchor and ``p1`` for the pre
    anchor, so that the three terms add up to the OMD exactly.
    """
    if anchor not in ("post", "pre"):
        raise ValueError(f"anchor must be 'post' or 'pre', got {anchor!r}")
    n0, n1 = mass_entrants(spec, 0, qcfg), mass_entrants(spec, 1, qcfg)
    if anchor == "post":
        y, n_anchor, p_other = spec.y0, n1, spec.p0
        ate = integrate(lambda t: spec.tau(t) * spec.p1(t), spec, qcfg) / n1
    else:
        y, n_anchor, p_other = spec.y1, n0, spec.p1
        ate = integrate(lambda t: spec.tau(t) * spec.p0(t), spec, qcfg) / n0
    selection = integrate(lambda t: y(t) * spec.delta_p(t), spec, qcfg) / n_anchor
    reweight = (1.0 / n1 - 1.0 / n0) * integrate(lambda t: y(t) * p_other(t), spec, qcfg)
    return Decomposition(ate, selection, reweight)


def composition_gap(spec, outcome_regime, qcfg=DEFAULT_QUADRATURE):
    """``E_{Q1}[y_r] - E_{Q0}[y_r]`` for the potential outcome of regime ``r``."""
    y = spec.outcome(outcome_regime)
    means = []
    for s in (0, 1):
        p = spec.hiring(s)
        means.append(integrate(lambda t: y(t) * p(t), spec, qcfg) / mass_entrants(spec, s, qcfg))
    return means[1] - means[0]


# --------------------------------------------------------------------------
# threshold dichotomy


def threshold_type(h, level, upper, max_iter=2000):
    """Smallest ``theta`` in ``[0, upper]`` with ``h(theta) >= level``, by bisection.

    ``h`` must be nondecreasing.  For continuous ``h`` the returned point
    satisfies ``h(theta) = level`` to rounding.
    """
    at_zero, at_top = float(h(0.0)), float(h(upper))
    if not at_zero <= level <= at_top:
        raise ThresholdUnattainableError(
            f"threshold {level} outside attainable range [{at_zero:.6g}, {at_top:.6g}]"
        )
    if at_zero >= level:
        return 0.0
    lo, hi = 0.0, float(upper)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if float(h(mid)) >= level:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class DichotomyReport:
    p_threshold: float
    theta_bar: float
    theta_bbar: float
    tau_infra: float
    tau_mar: float
    # tau_mar needs y0 for types that never participate before the policy;
    # only a known model can supply it.
    counterfactual_flag: bool = True

    def to_rows(self):
        return [
            ("p_threshold", self.p_threshold),
            ("theta_bar", self.theta_bar),
            ("theta_bbar", self.theta_bbar),
            ("tau_infra", self.tau_infra),
            ("tau_mar", self.tau_mar),
            ("counterfactual_flag", int(self.counterfactual_flag)),
        ]


def _conditional_tau(spec, lower, upper, qcfg):
    mass = integrate(lambda t: np.ones_like(t), spec, qcfg, lower=lower, upper=upper)
    if mass < STRATUM_FLOOR:
        raise EmptyStratumError(f"stratum ({lower:.6g}, {upper:.6g}] has F-mass {mass:.3g}")
    return integrate(spec.tau, spec, qcfg, lower=lower, upper=upper) / mass


def dichotomy_analysis(spec, p_threshold, qcfg=DEFAULT_QUADRATURE):
    """Threshold-based marginal/inframarginal split.

    ``theta_bar`` solves ``p0 = p_threshold`` and ``theta_bbar`` solves
    ``p1 = p_threshold``; the inframarginal effect conditions on
    ``theta > theta_bar`` and the marginal one on ``theta_bbar < theta <= theta_bar``.
    """
    top = spec.upper(qcfg.truncation)
    theta_bar = threshold_type(spec.p0, p_threshold, top)
    theta_bbar = threshold_type(spec.p1, p_threshold, top)
    return DichotomyReport(
        p_threshold=float(p_threshold),
        theta_bar=theta_bar,
        theta_bbar=theta_bbar,
        tau_infra=_conditional_tau(spec, theta_bar, None, qcfg),
        tau_mar=_conditional_tau(spec, theta_bbar, theta_bar, qcfg),
    )


# --------------------------------------------------------------------------
# full report


DEGENERATE_MARKER = "degenerate-weights"


@dataclass(frozen=True)
class EstimandReport:
    N0: float
    N1: float
    ybar0: float
    ybar1: float
    pate: float
    tau_q0: float
    tau_q1: float
    tau_dp: Optional[float]
    omd: float
    decomposition_post: Decomposition
    decomposition_pre: Decomposition
    notes: tuple = field(default=())

    def value(self, name):
        value = getattr(self, name)
        return math.nan if value is None else value

    def to_rows(self):
        rows = [(k, getattr(self, k)) for k in
                ("N0", "N1", "ybar0", "ybar1", "pate", "tau_q0", "tau_q1")]
        rows.append(("tau_dp", DEGENERATE_MARKER if self.tau_dp is None else self.tau_dp))
        rows.append(("omd", self.omd))
        for anchor, dec in (("post", self.decomposition_post), ("pre", self.decomposition_pre)):
            rows.extend((f"{anchor}_{k}", v) for k, v in dec._asdict().items())
        return rows


def estimand_report(spec, qcfg=DEFAULT_QUADRATURE):
    ybar0, ybar1 = observed_mean(spec, 0, qcfg), observed_mean(spec, 1, qcfg)
    notes = []
    try:
        tau_dp = weighted_ate(spec, Marginality(), qcfg)
    except DegenerateWeightsError as exc:
        tau_dp = None
        notes.append(str(exc))
    return EstimandReport(
        N0=mass_entrants(spec, 0, qcfg),
        N1=mass_entrants(spec, 1, qcfg),
        ybar0=ybar0,
        ybar1=ybar1,
        pate=pate(spec, qcfg),
        tau_q0=weighted_ate(spec, PreRegime(), qcfg),
        tau_q1=weighted_ate(spec, PostRegime(), qcfg),
        tau_dp=tau_dp,
        omd=ybar1 - ybar0,
        decomposition_post=omd_decomposition(spec, "post", qcfg),
        decomposition_pre=omd_decomposition(spec, "pre", qcfg),
        notes=tuple(notes),
    )


def cell_average(spec, func, lower, upper, closed="left", qcfg=DEFAULT_QUADRATURE):
    """F-mass of a cell and the F-average of ``func`` over it."""
    mass = integrate(lambda t: np.ones_like(t), spec, qcfg, lower=lower, upper=upper, closed=closed)
    if mass <= 0:
        return 0.0, math.nan
    return mass, integrate(func, spec, qcfg, lower=lower, upper=upper, closed=closed) / mass
