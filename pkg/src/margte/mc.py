"""Monte Carlo replication harness.

Replicate ``r`` simulates with seed ``derive_seed(master_seed, REPLICATE, r)``
so a study can be extended without changing earlier replicates.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import oracle
from .errors import ConfigError, MargteError
from .estimators import make_estimator
from .rng import REPLICATE, derive_seed
from .synth import SampleConfig, simulate

DEFAULT_TARGETS = {
    "omd": "tau_q1",
    "ipw": "pate",
    "psm_post": "tau_q1",
    "psm_pre": "tau_q0",
    "marginality": "tau_dp",
}
TARGETS = ("omd", "pate", "tau_q0", "tau_q1", "tau_dp")


@dataclass(frozen=True)
class StudyConfig:
    spec: object
    estimators: dict = field(default_factory=dict)  # name -> option table
    replications: int = 500
    n: int = 1000
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.replications < 2:
            raise ValueError("a study needs at least 2 replications")
        if self.n < 100:
            raise ValueError("per-cohort sample size must be at least 100")


@dataclass(frozen=True)
class StudyRow:
    estimator: str
    target: str
    target_value: float
    mean: float
    bias: float
    sd: float
    rmse: float
    failures: int
    successes: int

    @property
    def mcse(self):
        """Standard error of the replicate mean."""
        return self.sd / math.sqrt(self.successes) if self.successes else math.nan


@dataclass(frozen=True)
class StudyResult:
    rows: tuple
    estimates: dict  # estimator -> array over replicates, NaN where it failed
    report: object = None

    def row(self, estimator):
        return next(r for r in self.rows if r.estimator == estimator)


def summarize(name, target, target_value, values):
    ok = values[~np.isnan(values)]
    failures = int(values.size - ok.size)
    if ok.size == 0:
        nan = math.nan
        return StudyRow(name, target, target_value, nan, nan, nan, nan, failures, 0)
    mean = float(ok.mean())
    bias = mean - target_value
    sd = float(ok.std())  # population SD, so rmse**2 == bias**2 + sd**2
    return StudyRow(name, target, target_value, mean, bias, sd,
                    math.sqrt(bias * bias + sd * sd), failures, int(ok.size))


def run_study(cfg):
    report = oracle.estimand_report(cfg.spec)
    plan = []
    for name, options in cfg.estimators.items():
        options = dict(options or {})
        target = options.pop("target", DEFAULT_TARGETS.get(name))
        if target not in TARGETS:
            raise ConfigError(f"{name}: target must be one of {', '.join(TARGETS)}")
        plan.append((name, target, make_estimator(name, options, cfg.spec)))

    def replicate(r):
        seed = derive_seed(cfg.seed, REPLICATE, r)
        ds = simulate(cfg.spec, SampleConfig(cfg.n, cfg.n, seed))
        out = []
        for _, _, estimator in plan:
            try:
                out.append(estimator(ds).point)
            except (MargteError, ValueError, np.linalg.LinAlgError):
                out.append(math.nan)
        return out

    if not plan:
        table = []
    elif cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            table = list(pool.map(replicate, range(cfg.replications)))
    else:
        table = [replicate(r) for r in range(cfg.replications)]
    table = np.array(table, dtype=float).reshape(cfg.replications, len(plan))

    rows, estimates = [], {}
    for j, (name, target, _) in enumerate(plan):
        estimates[name] = table[:, j]
        rows.append(summarize(name, target, report.value(target), table[:, j]))
    return StudyResult(tuple(rows), estimates, report)


STUDY_COLUMNS = ["estimator", "target", "target_value", "mean", "bias", "sd", "rmse", "failures"]


def _fmt(v):
    return "%.17g" % v if isinstance(v, float) else str(v)


def write_study_report(res, path):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(STUDY_COLUMNS)
            for r in res.rows:
                w.writerow([_fmt(getattr(r, c)) for c in STUDY_COLUMNS])
    except OSError as exc:
        raise OSError(f"cannot write study report to {path}: {exc.strerror}") from exc


def write_replicate_dump(res, path):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "estimator", "estimate"])
            names = list(res.estimates)
            n_rep = len(next(iter(res.estimates.values()))) if names else 0
            for r in range(n_rep):
                for name in names:
                    w.writerow([r, name, _fmt(float(res.estimates[name][r]))])
    except OSError as exc:
        raise OSError(f"cannot write replicate dump to {path}: {exc.strerror}") from exc
