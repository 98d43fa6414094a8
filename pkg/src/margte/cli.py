"""Command-line front end: ``margte {oracle,simulate,estimate,mc} --config run.toml``.

The run configuration is a TOML file with a ``[dgp]`` section and optional
``[sample]``, ``[estimate]``, ``[study]`` and ``[dichotomy]`` sections; the
schema is documented in README.md and the files under ``configs/``.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

from . import oracle
from .dgp import spec_from_dict, validate_spec
from .errors import ConfigError, MargteError
from .estimators import ESTIMATORS, bootstrap, make_estimator
from .mc import StudyConfig, run_study, write_replicate_dump, write_study_report
from .synth import SampleConfig, read_dataset, simulate, write_dataset

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SECTIONS = ("dgp", "sample", "estimate", "study", "dichotomy")


@dataclass
class EstimateSection:
    estimators: dict
    bootstrap: int = 200
    seed: int = 0


@dataclass
class StudySection:
    estimators: dict
    replications: int = 500
    n: int = 1000
    seed: int = 0


@dataclass
class RunConfig:
    spec: Optional[object] = None
    sample: Optional[SampleConfig] = None
    estimate: Optional[EstimateSection] = None
    study: Optional[StudySection] = None
    p_threshold: Optional[float] = None
    raw: dict = field(default_factory=dict)


def _check_keys(table, section, allowed):
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in [{section}]")


def _int(table, section, key, default):
    value = table.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"[{section}] {key} must be an integer")
    return value


def _estimator_tables(table, section):
    names = table.get("estimators", list(ESTIMATORS))
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ConfigError(f"[{section}] estimators must be a list of names")
    for key, value in table.items():
        if isinstance(value, dict) and key not in ESTIMATORS:
            raise ConfigError(f"unknown estimator table [{section}.{key}]")
    for name in names:
        if name not in ESTIMATORS:
            raise ConfigError(f"[{section}] unknown estimator '{name}'")
    return {name: dict(table.get(name, {})) for name in names}


def parse_config(raw):
    for section in raw:
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
    cfg = RunConfig(raw=raw)
    if "dgp" in raw:
        cfg.spec = spec_from_dict(raw["dgp"])
    if "sample" in raw:
        t = raw["sample"]
        _check_keys(t, "sample", ("n_pre", "n_post", "seed", "reveal_theta"))
        try:
            cfg.sample = SampleConfig(
                n_pre=_int(t, "sample", "n_pre", None),
                n_post=_int(t, "sample", "n_post", None),
                seed=_int(t, "sample", "seed", 0),
                reveal_theta=bool(t.get("reveal_theta", False)),
            )
        except ValueError as exc:
            raise ConfigError(f"[sample] {exc}") from None
    if "estimate" in raw:
        t = raw["estimate"]
        _check_keys(t, "estimate", ("estimators", "bootstrap", "seed", *ESTIMATORS))
        boot = _int(t, "estimate", "bootstrap", 200)
        if boot < 0:
            raise ConfigError("[estimate] bootstrap must be nonnegative (0 skips it)")
        cfg.estimate = EstimateSection(_estimator_tables(t, "estimate"), boot,
                                       _int(t, "estimate", "seed", 0))
    if "study" in raw:
        t = raw["study"]
        _check_keys(t, "study", ("estimators", "replications", "n", "seed", *ESTIMATORS))
        cfg.study = StudySection(_estimator_tables(t, "study"),
                                 _int(t, "study", "replications", 500),
                                 _int(t, "study", "n", 1000),
                                 _int(t, "study", "seed", 0))
    if "dichotomy" in raw:
        t = raw["dichotomy"]
        _check_keys(t, "dichotomy", ("p_threshold",))
        if "p_threshold" not in t:
            raise ConfigError("missing key 'p_threshold' in [dichotomy]")
        cfg.p_threshold = float(t["p_threshold"])
    return cfg


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_config(raw)


def _require(cfg, *sections):
    for section in sections:
        present = {"dgp": cfg.spec, "sample": cfg.sample, "estimate": cfg.estimate,
                   "study": cfg.study}[section]
        if present is None:
            raise ConfigError(f"config has no [{section}] section")


def _valid_spec(cfg):
    report = validate_spec(cfg.spec)
    if not report.ok:
        raise MargteError("invalid [dgp]: " + "; ".join(report.violations))
    return cfg.spec


def _fmt(value):
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def _atomic_write(path, write):
    """Write through a temporary file so ``path`` only appears when complete."""
    tmp = f"{path}.partial"
    try:
        write(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _write_rows(path, header, rows):
    def write(target):
        if str(path).endswith(".txt"):
            with open(target, "w", encoding="utf-8", newline="\n") as fh:
                for name, value in rows:
                    fh.write(f"{name} = {_fmt(value)}\n")
            return
        with open(target, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows([[_fmt(v) for v in row] for row in rows])

    _atomic_write(path, write)


# --------------------------------------------------------------------------
# commands


def cmd_oracle(config_path, out_path):
    cfg = load_config(config_path)
    _require(cfg, "dgp")
    spec = _valid_spec(cfg)
    report = oracle.estimand_report(spec)
    rows = report.to_rows()
    if cfg.p_threshold is not None:
        rows += oracle.dichotomy_analysis(spec, cfg.p_threshold).to_rows()
    _write_rows(out_path, ["name", "value"], rows)
    for note in report.notes:
        print(f"note: {note}")
    return 0


def cmd_simulate(config_path, out_path):
    cfg = load_config(config_path)
    _require(cfg, "dgp", "sample")
    spec = _valid_spec(cfg)
    ds = simulate(spec, cfg.sample)
    _atomic_write(out_path, lambda target: write_dataset(ds, target))
    for s in (0, 1):
        n, k = ds.cohort(s).size, ds.participants(s).size
        print(f"regime {s}: {k} of {n} firms participate (share {k / n:.6f})")
    return 0


ESTIMATE_COLUMNS = ["estimand", "point", "se", "n_used", "n_dropped", "warnings"]
FAILED = "FAILED"


def cmd_estimate(config_path, data_path, out_path, threads=1):
    cfg = load_config(config_path)
    _require(cfg, "estimate")
    spec = _valid_spec(cfg) if cfg.spec is not None else None
    estimators = {name: make_estimator(name, opts, spec)
                  for name, opts in cfg.estimate.estimators.items()}
    ds = read_dataset(data_path)
    rows = []
    for name, estimator in estimators.items():
        try:
            res = estimator(ds)
            if cfg.estimate.bootstrap:
                res = res.with_bootstrap(bootstrap(ds, estimator, cfg.estimate.bootstrap,
                                                   cfg.estimate.seed, threads))
        except (MargteError, ValueError) as exc:
            rows.append([name, FAILED, "", 0, 0, f"{type(exc).__name__}: {exc}"])
            continue
        rows.append([res.estimand, res.point, "" if res.se is None else res.se,
                     res.n_used, res.n_dropped, "; ".join(res.warnings)])
    _write_rows(out_path, ESTIMATE_COLUMNS, rows)
    return 0


def cmd_mc(config_path, out_path, threads=1, dump_path=None):
    cfg = load_config(config_path)
    _require(cfg, "dgp", "study")
    spec = _valid_spec(cfg)
    st = cfg.study
    try:
        study = StudyConfig(spec, st.estimators, st.replications, st.n, st.seed, threads)
    except ValueError as exc:
        raise ConfigError(f"[study] {exc}") from None
    res = run_study(study)
    if dump_path:
        _atomic_write(dump_path, lambda target: write_replicate_dump(res, target))
    _atomic_write(out_path, lambda target: write_study_report(res, target))
    for row in res.rows:
        print(f"{row.estimator:12s} target {row.target:7s} bias {row.bias:+.5f} "
              f"sd {row.sd:.5f} failures {row.failures}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="margte", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("oracle", "exact estimands of the configured model"),
        ("simulate", "draw a synthetic dataset"),
        ("estimate", "run estimators on a dataset file"),
        ("mc", "Monte Carlo study of estimator bias and dispersion"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--threads", type=int, default=1)
        if name == "estimate":
            p.add_argument("--data", required=True)
        if name == "mc":
            p.add_argument("--dump", help="optional per-replicate CSV")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    threads = max(1, args.threads)
    try:
        if args.command == "oracle":
            return cmd_oracle(args.config, args.out)
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out)
        if args.command == "estimate":
            return cmd_estimate(args.config, args.data, args.out, threads)
        return cmd_mc(args.config, args.out, threads, args.dump)
    except ConfigError as exc:
        print(f"margte: config error: {exc}", file=sys.stderr)
        return 2
    except (MargteError, OSError, ValueError) as exc:
        print(f"margte: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
