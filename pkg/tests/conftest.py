import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import strategies as st

from margte import dgp


@pytest.fixture
def two_type():
    return dgp.two_type_spec()


# Exact values for the two-type model, from enumerate_exact below with
# Fractions: theta {1,2}, masses {1/2,1/2}, p0 {1/5,3/5}, p1 {1/2,4/5},
# y0 {10,20}, y1 {12,23}.
TWO_TYPE = {
    "N0": Fraction(2, 5),
    "N1": Fraction(13, 20),
    "ybar0": Fraction(35, 2),
    "ybar1": Fraction(244, 13),
    "pate": Fraction(5, 2),
    "tau_q0": Fraction(11, 4),
    "tau_q1": Fraction(34, 13),
    "tau_dp": Fraction(12, 5),
    "omd": Fraction(33, 26),
    "post": (Fraction(34, 13), Fraction(70, 13), Fraction(-175, 26)),
    "pre": (Fraction(11, 4), Fraction(41, 4), Fraction(-305, 26)),
}


def enumerate_exact(masses, p0, p1, y0, y1):
    """Every estimand of a finite-type model by direct summation over types.

    Works on Fractions or floats; shares no code with the package.
    """
    k = range(len(masses))

    def E(g):
        return sum(masses[i] * g(i) for i in k)

    tau = [y1[i] - y0[i] for i in k]
    n0, n1 = E(lambda i: p0[i]), E(lambda i: p1[i])
    out = {
        "N0": n0,
        "N1": n1,
        "ybar0": E(lambda i: y0[i] * p0[i]) / n0,
        "ybar1": E(lambda i: y1[i] * p1[i]) / n1,
        "pate": E(lambda i: tau[i]),
        "tau_q0": E(lambda i: tau[i] * p0[i]) / n0,
        "tau_q1": E(lambda i: tau[i] * p1[i]) / n1,
    }
    shift = E(lambda i: p1[i] - p0[i])
    out["tau_dp"] = E(lambda i: tau[i] * (p1[i] - p0[i])) / shift if shift else None
    out["omd"] = out["ybar1"] - out["ybar0"]
    out["post"] = (
        out["tau_q1"],
        E(lambda i: y0[i] * (p1[i] - p0[i])) / n1,
        (1 / n1 - 1 / n0) * E(lambda i: y0[i] * p0[i]),
    )
    out["pre"] = (
        out["tau_q0"],
        E(lambda i: y1[i] * (p1[i] - p0[i])) / n0,
        (1 / n1 - 1 / n0) * E(lambda i: y1[i] * p1[i]),
    )
    return out


def discrete_spec(support, masses, p0, p1, y0_coefs, y1_coefs, covariate=None):
    """Discrete model whose hiring steps sit midway between support points."""
    breaks = tuple((a + b) / 2 for a, b in zip(support, support[1:]))
    return dgp.DGPSpec(
        distribution=dgp.Discrete(tuple(support), tuple(masses)),
        p0=dgp.PiecewiseConstant(breaks, tuple(p0)),
        p1=dgp.PiecewiseConstant(breaks, tuple(p1)),
        y0=dgp.OutcomeFunction(*y0_coefs),
        y1=dgp.OutcomeFunction(*y1_coefs),
        covariate=covariate or dgp.Identity(),
    )


# --------------------------------------------------------------------------
# hypothesis strategies

coef = st.floats(-5, 5, allow_nan=False)
prob = st.floats(0.02, 0.98)


@st.composite
def distributions(draw, discrete=None):
    if discrete is None:
        kind = draw(st.sampled_from(["exponential", "lognormal", "discrete"]))
    elif discrete:
        kind = "discrete"
    else:
        kind = draw(st.sampled_from(["exponential", "lognormal"]))
    if kind == "exponential":
        return dgp.Exponential(draw(st.floats(0.3, 3.0)))
    if kind == "lognormal":
        return dgp.LogNormal(draw(st.floats(-1.0, 1.0)), draw(st.floats(0.2, 1.0)))
    k = draw(st.integers(1, 6))
    gaps = draw(st.lists(st.floats(0.1, 2.0), min_size=k, max_size=k))
    support = tuple(float(v) for v in np.cumsum(gaps) - gaps[0] + draw(st.floats(0.0, 1.0)))
    raw = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=k, max_size=k)))
    masses = raw / raw.sum()
    masses[-1] = 1.0 - math.fsum(masses[:-1])
    return dgp.Discrete(support, tuple(float(m) for m in masses))


@st.composite
def hiring_pairs(draw, top=10.0, strict=False):
    """A nondecreasing p0 and a p1 that dominates it pointwise."""
    lift = st.floats(0.05 if strict else 0.0, 1.5)
    family = draw(st.sampled_from(["logistic", "ratio", "piecewise"]))
    if family == "logistic":
        a, b = draw(st.floats(-3, 1)), draw(st.floats(0.0, 2.0))
        return dgp.LogisticInTheta(a, b), dgp.LogisticInTheta(a + draw(lift), b)
    if family == "ratio":
        c = draw(st.floats(0.05, 2.0))
        return dgp.RatioShift(c), dgp.RatioShift(c + draw(lift))
    k = draw(st.integers(0, 4))
    breaks = tuple(sorted(set(draw(st.lists(st.floats(0.05, top), min_size=k, max_size=k)))))
    v0 = np.sort(draw(st.lists(st.floats(0.02, 0.9), min_size=len(breaks) + 1,
                               max_size=len(breaks) + 1)))
    bumps = np.array(draw(st.lists(st.floats(0.05 if strict else 0.0, 0.5),
                                   min_size=v0.size, max_size=v0.size)))
    v1 = np.maximum.accumulate(np.minimum(1.0, v0 + bumps))
    return dgp.PiecewiseConstant(breaks, tuple(v0)), dgp.PiecewiseConstant(breaks, tuple(v1))


@st.composite
def outcomes(draw):
    return dgp.OutcomeFunction(draw(coef), draw(coef), draw(st.floats(-0.5, 0.5)))


@st.composite
def valid_specs(draw, discrete=None, strict=False):
    dist = draw(distributions(discrete))
    p0, p1 = draw(hiring_pairs(top=max(float(dist.upper(0.999)), 0.1), strict=strict))
    return dgp.DGPSpec(dist, p0, p1, draw(outcomes()), draw(outcomes()))
