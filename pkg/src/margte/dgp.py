"""Structural participation model.

A population of firms has productivity ``theta >= 0`` drawn from a
:class:`ProductivityDistribution`.  Under regime ``s`` (0 = before the
policy, 1 = after) a firm participates with probability ``p_s(theta)`` and,
if it does, reveals the outcome ``y_s(theta)``.  The potential outcomes are
latent for every type; they are only *observed* upon participation.

All model objects are frozen dataclasses.  Evaluation functions accept a
scalar or an array of productivities and return the same shape.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import ClassVar

import numpy as np
from scipy import integrate as _quad
from scipy import special

from .errors import ConfigError, DomainError

TRUNCATION_QUANTILE = 1.0 - 1e-10
VALIDATION_GRID_SIZE = 1024
DOMINANCE_SLACK = 1e-12


def _theta_array(theta):
    arr = np.asarray(theta, dtype=float)
    if np.isnan(arr).any() or (arr < 0).any():
        raise DomainError(f"productivity must be nonnegative, got {theta!r}")
    return arr


def _shaped(values, theta):
    return float(values) if np.ndim(theta) == 0 else values


def _finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    return value


# --------------------------------------------------------------------------
# productivity distributions


class ProductivityDistribution:
    """Base class; subclasses implement ``pdf``, ``cdf`` and ``ppf`` on arrays."""

    family: ClassVar[str]
    is_discrete: ClassVar[bool] = False

    def upper(self, quantile=TRUNCATION_QUANTILE):
        """Truncation point of the support used by quadrature."""
        return float(self.ppf(np.asarray(quantile)))

    def params(self):
        raise NotImplementedError


@dataclass(frozen=True)
class LogNormal(ProductivityDistribution):
    mu: float
    sigma: float

    family: ClassVar[str] = "lognormal"

    def __post_init__(self):
        object.__setattr__(self, "mu", _finite("mu", self.mu))
        object.__setattr__(self, "sigma", _finite("sigma", self.sigma))
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    def _z(self, theta):
        with np.errstate(divide="ignore"):
            return (np.log(theta) - self.mu) / self.sigma

    def pdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        z = self._z(theta)
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.exp(-0.5 * z * z) / (theta * self.sigma * math.sqrt(2 * math.pi))
        return np.where(theta > 0, dens, 0.0)

    def cdf(self, theta):
        return special.ndtr(self._z(np.asarray(theta, dtype=float)))

    def ppf(self, u):
        return np.exp(self.mu + self.sigma * special.ndtri(u))

    def isf(self, q):
        """Inverse survival function, accurate for tiny tail masses ``q``."""
        return np.exp(self.mu - self.sigma * special.ndtri(q))

    def params(self):
        return {"mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Exponential(ProductivityDistribution):
    rate: float

    family: ClassVar[str] = "exponential"

    def __post_init__(self):
        object.__setattr__(self, "rate", _finite("rate", self.rate))
        if self.rate <= 0:
            raise ValueError(f"rate must be positive, got {self.rate}")

    def pdf(self, theta):
        return self.rate * np.exp(-self.rate * np.asarray(theta, dtype=float))

    def cdf(self, theta):
        return -np.expm1(-self.rate * np.asarray(theta, dtype=float))

    def ppf(self, u):
        return -np.log1p(-np.asarray(u, dtype=float)) / self.rate

    def isf(self, q):
        return -np.log(np.asarray(q, dtype=float)) / self.rate

    def params(self):
        return {"rate": self.rate}


@dataclass(frozen=True)
class Discrete(ProductivityDistribution):
    """Finitely many productivity types ``support[k]`` with probability ``masses[k]``."""

    support: tuple
    masses: tuple

    family: ClassVar[str] = "discrete"
    is_discrete: ClassVar[bool] = True

    def __post_init__(self):
        support = tuple(_finite("support point", v) for v in self.support)
        masses = tuple(_finite("mass", v) for v in self.masses)
        if not support or len(support) != len(masses):
            raise ValueError("support and masses must be nonempty and of equal length")
        if any(v < 0 for v in support):
            raise ValueError("support points must be nonnegative")
        if any(b <= a for a, b in zip(support, support[1:])):
            raise ValueError("support points must be strictly increasing")
        if any(m <= 0 for m in masses):
            raise ValueError("masses must be positive")
        if abs(math.fsum(masses) - 1.0) > 1e-12:
            raise ValueError(f"masses must sum to 1, got {math.fsum(masses)!r}")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "masses", masses)

    @property
    def points(self):
        return np.asarray(self.support)

    @property
    def weights(self):
        return np.asarray(self.masses)

    def pdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        idx = np.searchsorted(self.points, theta)
        idx = np.minimum(idx, len(self.support) - 1)
        hit = self.points[idx] == theta
        return np.where(hit, self.weights[idx], 0.0)

    def cdf(self, theta):
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(self.points, np.asarray(theta, dtype=float), side="right")
        return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)

    def ppf(self, u):
        """Smallest support point whose cumulative mass reaches ``u``."""
        cum = np.cumsum(self.weights)
        idx = np.searchsorted(cum, np.asarray(u, dtype=float), side="left")
        return self.points[np.minimum(idx, len(self.support) - 1)]

    def upper(self, quantile=TRUNCATION_QUANTILE):
        return self.support[-1]

    def params(self):
        return {"support": list(self.support), "masses": list(self.masses)}


# --------------------------------------------------------------------------
# hiring (participation) probabilities


class HiringFunction:
    family: ClassVar[str]

    def breakpoints(self):
        """Points where the function is not smooth."""
        return ()


@dataclass(frozen=True)
class LogisticInTheta(HiringFunction):
    """``p(theta) = 1 / (1 + exp(-(intercept + slope * theta)))``.

    A negative slope is accepted here so that :func:`validate_spec` can report
    it; it violates monotonicity.
    """

    intercept: float
    slope: float

    family: ClassVar[str] = "logistic"

    def __post_init__(self):
        object.__setattr__(self, "intercept", _finite("intercept", self.intercept))
        object.__setattr__(self, "slope", _finite("slope", self.slope))

    def __call__(self, theta):
        return special.expit(self.intercept + self.slope * np.asarray(theta, dtype=float))

    def params(self):
        return {"intercept": self.intercept, "slope": self.slope}


@dataclass(frozen=True)
class RatioShift(HiringFunction):
    """``p(theta) = (theta + shift) / (theta + shift + 1)``."""

    shift: float

    family: ClassVar[str] = "ratio"

    def __post_init__(self):
        object.__setattr__(self, "shift", _finite("shift", self.shift))
        if self.shift < 0:
            raise ValueError(f"shift must be nonnegative, got {self.shift}")

    def __call__(self, theta):
        t = np.asarray(theta, dtype=float) + self.shift
        return t / (t + 1.0)

    def params(self):
        return {"shift": self.shift}


@dataclass(frozen=True)
class PiecewiseConstant(HiringFunction):
    """Right-continuous step function.

    ``values[k]`` applies on ``[breaks[k-1], breaks[k])`` with the first value
    below ``breaks[0]`` and the last one from ``breaks[-1]`` on, so
    ``len(values) == len(breaks) + 1``.  Empty ``breaks`` gives a constant.
    """

    breaks: tuple
    values: tuple

    family: ClassVar[str] = "piecewise"

    def __post_init__(self):
        breaks = tuple(_finite("break", v) for v in self.breaks)
        values = tuple(_finite("value", v) for v in self.values)
        if len(values) != len(breaks) + 1:
            raise ValueError("need exactly one more value than breaks")
        if any(b <= a for a, b in zip(breaks, breaks[1:])):
            raise ValueError("breaks must be strictly increasing")
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError("probabilities must lie in [0, 1]")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "values", values)

    def __call__(self, theta):
        idx = np.searchsorted(np.asarray(self.breaks, dtype=float),
                              np.asarray(theta, dtype=float), side="right")
        return np.asarray(self.values, dtype=float)[idx]

    def breakpoints(self):
        return self.breaks

    def params(self):
        return {"breaks": list(self.breaks), "values": list(self.values)}


def constant(prob):
    return PiecewiseConstant((), (prob,))


# --------------------------------------------------------------------------
# outcomes and covariates


@dataclass(frozen=True)
class OutcomeFunction:
    """Quadratic potential outcome ``c0 + c1*theta + c2*theta**2``."""

    c0: float
    c1: float = 0.0
    c2: float = 0.0

    def __post_init__(self):
        for name in ("c0", "c1", "c2"):
            object.__setattr__(self, name, _finite(name, getattr(self, name)))

    def __call__(self, theta):
        t = np.asarray(theta, dtype=float)
        return self.c0 + t * (self.c1 + t * self.c2)

    @property
    def coefficients(self):
        return (self.c0, self.c1, self.c2)


class CovariateModel:
    mode: ClassVar[str]
    # x is a deterministic function of theta, so participation is independent
    # of theta given x only as cells shrink (exactly, for Identity).
    deterministic: ClassVar[bool] = True


@dataclass(frozen=True)
class Identity(CovariateModel):
    mode: ClassVar[str] = "identity"

    def __call__(self, theta, noise=0.0):
        return np.asarray(theta, dtype=float) + 0.0

    def params(self):
        return {}


@dataclass(frozen=True)
class Binned(CovariateModel):
    """Covariate is the index of the cell ``[edges[k], edges[k+1])`` holding theta.

    Values outside ``[edges[0], edges[-1])`` are clamped to the first or last cell.
    """

    edges: tuple

    mode: ClassVar[str] = "binned"

    def __post_init__(self):
        edges = tuple(float(e) for e in self.edges)
        if len(edges) < 3:
            raise ValueError("binned covariate needs at least 2 cells")
        if any(math.isnan(e) for e in edges) or any(b < a for a, b in zip(edges, edges[1:])):
            raise ValueError("cell edges must be nondecreasing")
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_quantiles(cls, dist, n_cells):
        if n_cells < 2:
            raise ValueError("binned covariate needs at least 2 cells")
        inner = [float(dist.ppf(np.asarray(k / n_cells))) for k in range(1, n_cells)]
        return cls((0.0, *inner, math.inf))

    @property
    def n_cells(self):
        return len(self.edges) - 1

    def cell_interval(self, k):
        return self.edges[k], self.edges[k + 1]

    def __call__(self, theta, noise=0.0):
        idx = np.searchsorted(np.asarray(self.edges), np.asarray(theta, dtype=float), side="right") - 1
        return np.clip(idx, 0, self.n_cells - 1).astype(float)

    def params(self):
        return {"edges": list(self.edges)}


@dataclass(frozen=True)
class NoisyProxy(CovariateModel):
    """``x = theta + sd * z`` for a standard normal draw ``z``."""

    sd: float

    mode: ClassVar[str] = "noisy"
    deterministic: ClassVar[bool] = False

    def __post_init__(self):
        object.__setattr__(self, "sd", _finite("sd", self.sd))
        if self.sd < 0:
            raise ValueError("noise sd must be nonnegative")

    def __call__(self, theta, noise=0.0):
        return np.asarray(theta, dtype=float) + self.sd * np.asarray(noise, dtype=float)

    def params(self):
        return {"sd": self.sd}


# --------------------------------------------------------------------------
# the full specification


@dataclass(frozen=True)
class DGPSpec:
    distribution: ProductivityDistribution
    p0: HiringFunction
    p1: HiringFunction
    y0: OutcomeFunction
    y1: OutcomeFunction
    covariate: CovariateModel = Identity()

    def hiring(self, regime):
        return (self.p0, self.p1)[_regime(regime)]

    def outcome(self, regime):
        return (self.y0, self.y1)[_regime(regime)]

    def tau(self, theta):
        return self.y1(theta) - self.y0(theta)

    def delta_p(self, theta):
        return self.p1(theta) - self.p0(theta)

    def upper(self, quantile=TRUNCATION_QUANTILE):
        return self.distribution.upper(quantile)

    def breakpoints(self):
        return tuple(sorted(set(self.p0.breakpoints()) | set(self.p1.breakpoints())))

    def digest(self):
        blob = json.dumps(spec_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _regime(regime):
    if regime not in (0, 1):
        raise ValueError(f"regime must be 0 or 1, got {regime!r}")
    return int(regime)


# --------------------------------------------------------------------------
# operations


def eval_density(dist, theta):
    """Population density at ``theta``; the point mass for discrete families."""
    t = _theta_array(theta)
    return _shaped(dist.pdf(t), theta)


def eval_cdf(dist, theta):
    t = _theta_array(theta)
    return _shaped(dist.cdf(t), theta)


def eval_p(h, theta):
    t = _theta_array(theta)
    return _shaped(np.asarray(h(t), dtype=float), theta)


def eval_tau(spec, theta):
    t = _theta_array(theta)
    return _shaped(spec.tau(t), theta)


def eval_covariate(cm, theta, noise=0.0):
    """Covariate value for ``theta``; ``noise`` is a standard normal deviate."""
    t = _theta_array(theta)
    return _shaped(cm(t, noise), theta)


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def ok(self):
        return not self.violations

    def __str__(self):
        if self.ok:
            return "valid"
        return "; ".join(self.violations)


def validation_grid(spec, size=VALIDATION_GRID_SIZE):
    top = spec.upper()
    extra = [b for b in spec.breakpoints() if 0 <= b <= top]
    if spec.distribution.is_discrete:
        extra.extend(spec.distribution.support)
    return np.unique(np.concatenate([np.linspace(0.0, top, size), extra]))


def validate_spec(spec):
    """Check the model's shape restrictions; never raises.

    Returns a :class:`ValidationReport` listing every violated check.
    """
    problems = []
    grid = validation_grid(spec)
    for name in ("p0", "p1"):
        values = np.asarray(getattr(spec, name)(grid), dtype=float)
        bad = np.flatnonzero((values < 0) | (values > 1) | ~np.isfinite(values))
        if bad.size:
            problems.append(f"{name} leaves [0, 1] at theta={grid[bad[0]]:.6g}")
        drops = np.flatnonzero(np.diff(values) < -DOMINANCE_SLACK)
        if drops.size:
            problems.append(f"{name} is decreasing at theta={grid[drops[0] + 1]:.6g}")
    gap = spec.p1(grid) - spec.p0(grid)
    below = np.flatnonzero(gap < -DOMINANCE_SLACK)
    if below.size:
        problems.append(f"p1 does not dominate p0 at theta={grid[below[0]]:.6g}")

    dist = spec.distribution
    if dist.is_discrete:
        total = math.fsum(dist.masses)
        if abs(total - 1.0) > 1e-12:
            problems.append(f"discrete masses sum to {total!r}")
    else:
        top = spec.upper()
        pieces = np.unique([0.0, *dist.ppf(np.array([0.5, 0.9, 0.99, 0.9999])), top])
        mass = math.fsum(
            _quad.quad(lambda t: float(dist.pdf(t)), a, b, epsabs=1e-12, limit=200)[0]
            for a, b in zip(pieces, pieces[1:])
        )
        if abs(mass - float(dist.cdf(top))) > 1e-8:
            problems.append(f"density integrates to {mass!r} on the truncated support")

    if not problems:
        from . import oracle  # deferred: oracle depends on this module
        try:
            n0 = oracle.mass_entrants(spec, 0)
            n1 = oracle.mass_entrants(spec, 1)
        except Exception as exc:  # report, never raise
            problems.append(f"entrant mass unavailable: {exc}")
        else:
            if n1 < n0 - 1e-12:
                problems.append(f"N1={n1:.6g} is below N0={n0:.6g}")
    return ValidationReport(tuple(problems))


# --------------------------------------------------------------------------
# dict (de)serialisation, used by the CLI config and dataset provenance

_DISTRIBUTIONS = {c.family: c for c in (LogNormal, Exponential, Discrete)}
_HIRING = {c.family: c for c in (LogisticInTheta, RatioShift, PiecewiseConstant)}
_COVARIATES = {"identity", "binned", "noisy"}


def _take(table, path, allowed, required=()):
    if not isinstance(table, dict):
        raise ConfigError(f"[{path}] must be a table")
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in [{path}]")
    for key in required:
        if key not in table:
            raise ConfigError(f"missing key '{key}' in [{path}]")
    return table


def _build(cls, path, table, **kwargs):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{path}] {exc}") from None


def distribution_from_dict(table, path="dgp.distribution"):
    family = table.get("family") if isinstance(table, dict) else None
    if family not in _DISTRIBUTIONS:
        raise ConfigError(f"[{path}] family must be one of {sorted(_DISTRIBUTIONS)}, got {family!r}")
    cls = _DISTRIBUTIONS[family]
    fields = {"lognormal": ("mu", "sigma"), "exponential": ("rate",),
              "discrete": ("support", "masses")}[family]
    _take(table, path, ("family", *fields), fields)
    kwargs = {k: table[k] for k in fields}
    if family == "discrete":
        kwargs = {k: tuple(v) for k, v in kwargs.items()}
    return _build(cls, path, table, **kwargs)


def hiring_from_dict(table, path):
    family = table.get("family") if isinstance(table, dict) else None
    if family not in _HIRING:
        raise ConfigError(f"[{path}] family must be one of {sorted(_HIRING)}, got {family!r}")
    fields = {"logistic": ("intercept", "slope"), "ratio": ("shift",),
              "piecewise": ("breaks", "values")}[family]
    _take(table, path, ("family", *fields), fields)
    kwargs = {k: table[k] for k in fields}
    if family == "piecewise":
        kwargs = {k: tuple(v) for k, v in kwargs.items()}
    return _build(_HIRING[family], path, table, **kwargs)


def outcome_from_dict(table, path):
    _take(table, path, ("coefficients",), ("coefficients",))
    coefs = list(table["coefficients"])
    if not 1 <= len(coefs) <= 3:
        raise ConfigError(f"[{path}] coefficients must have 1 to 3 entries")
    return _build(OutcomeFunction, path, table, **dict(zip(("c0", "c1", "c2"), coefs)))


def covariate_from_dict(table, dist, path="dgp.covariate"):
    mode = table.get("mode") if isinstance(table, dict) else None
    if mode not in _COVARIATES:
        raise ConfigError(f"[{path}] mode must be one of {sorted(_COVARIATES)}, got {mode!r}")
    if mode == "identity":
        _take(table, path, ("mode",))
        return Identity()
    if mode == "noisy":
        _take(table, path, ("mode", "sd"), ("sd",))
        return _build(NoisyProxy, path, table, sd=table["sd"])
    _take(table, path, ("mode", "cells", "edges"))
    if ("cells" in table) == ("edges" in table):
        raise ConfigError(f"[{path}] binned mode needs exactly one of 'cells' or 'edges'")
    if "edges" in table:
        return _build(Binned, path, table, edges=tuple(table["edges"]))
    try:
        return Binned.from_quantiles(dist, int(table["cells"]))
    except ValueError as exc:
        raise ConfigError(f"[{path}] {exc}") from None


def spec_from_dict(table, path="dgp"):
    _take(table, path, ("distribution", "p0", "p1", "y0", "y1", "covariate"),
          ("distribution", "p0", "p1", "y0", "y1"))
    dist = distribution_from_dict(table["distribution"], f"{path}.distribution")
    return DGPSpec(
        distribution=dist,
        p0=hiring_from_dict(table["p0"], f"{path}.p0"),
        p1=hiring_from_dict(table["p1"], f"{path}.p1"),
        y0=outcome_from_dict(table["y0"], f"{path}.y0"),
        y1=outcome_from_dict(table["y1"], f"{path}.y1"),
        covariate=covariate_from_dict(table.get("covariate", {"mode": "identity"}), dist,
                                      f"{path}.covariate"),
    )


def spec_to_dict(spec):
    return {
        "distribution": {"family": spec.distribution.family, **spec.distribution.params()},
        "p0": {"family": spec.p0.family, **spec.p0.params()},
        "p1": {"family": spec.p1.family, **spec.p1.params()},
        "y0": {"coefficients": list(spec.y0.coefficients)},
        "y1": {"coefficients": list(spec.y1.coefficients)},
        "covariate": {"mode": spec.covariate.mode, **spec.covariate.params()},
    }


def two_type_spec(y1=(12.0, 23.0)):
    """Two productivity types used throughout the tests and example configs.

    theta in {1, 2} with equal mass, p0 = {0.2, 0.6}, p1 = {0.5, 0.8},
    y0 = {10, 20} and y1 as given (default {12, 23}).
    """
    y1_lo, y1_hi = y1
    return DGPSpec(
        distribution=Discrete((1.0, 2.0), (0.5, 0.5)),
        p0=PiecewiseConstant((1.5,), (0.2, 0.6)),
        p1=PiecewiseConstant((1.5,), (0.5, 0.8)),
        y0=OutcomeFunction(0.0, 10.0),
        y1=OutcomeFunction(2 * y1_lo - y1_hi, y1_hi - y1_lo),
    )

