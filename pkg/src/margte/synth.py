"""Synthetic cross-sections drawn from a DGPSpec, and the dataset CSV format.

Two independent cohorts are drawn, one per regime.  Firm ``i`` of cohort
``s`` reads block ``i`` of the cohort stream ``Stream.from_seed(seed, COHORT, s)``:
word 0 drives productivity (inverse CDF), word 1 participation
(``u < p_s(theta)``) and word 2 the covariate noise (inverse normal CDF).
Pre-regime firms get ids ``0 .. n_pre-1`` and post-regime firms follow.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
from scipy import special

from .errors import ParseError
from .rng import COHORT, Stream, to_uniform


@dataclass(frozen=True)
class FirmRecord:
    firm_id: int
    regime: int
    x: float
    d: int
    outcome: Optional[float] = None
    theta: Optional[float] = None

    def __post_init__(self):
        if self.regime not in (0, 1):
            raise ValueError(f"regime must be 0 or 1, got {self.regime}")
        if self.d not in (0, 1):
            raise ValueError(f"participation must be 0 or 1, got {self.d}")
        if (self.outcome is not None) != (self.d == 1):
            raise ValueError("outcome must be present exactly when d == 1")


@dataclass(frozen=True)
class Provenance:
    spec_digest: str = ""
    seed: int = 0
    n_pre: int = 0
    n_post: int = 0
    covariate_mode: str = ""


@dataclass(frozen=True)
class SampleConfig:
    n_pre: int
    n_post: int
    seed: int = 0
    reveal_theta: bool = False

    def __post_init__(self):
        if int(self.n_pre) < 1 or int(self.n_post) < 1:
            raise ValueError("n_pre and n_post must be at least 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(eq=False)
class Dataset:
    """Column store of firm records.

    ``outcome`` is NaN where it is absent (``d == 0``); ``theta`` is ``None``
    unless the true types are revealed.
    """

    firm_id: np.ndarray
    regime: np.ndarray
    x: np.ndarray
    d: np.ndarray
    outcome: np.ndarray
    theta: Optional[np.ndarray] = None
    provenance: Optional[Provenance] = None

    def __post_init__(self):
        self.firm_id = np.asarray(self.firm_id, dtype=np.int64)
        self.regime = np.asarray(self.regime, dtype=np.int8)
        self.x = np.asarray(self.x, dtype=float)
        self.d = np.asarray(self.d, dtype=np.int8)
        self.outcome = np.asarray(self.outcome, dtype=float)
        if self.theta is not None:
            self.theta = np.asarray(self.theta, dtype=float)
        n = self.firm_id.shape[0]
        cols = [self.regime, self.x, self.d, self.outcome]
        if self.theta is not None:
            cols.append(self.theta)
        if any(c.shape != (n,) for c in cols):
            raise ValueError("dataset columns must be 1-d and of equal length")

    def __len__(self):
        return self.firm_id.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.theta is None) != (other.theta is None):
            return False
        same = all(
            np.array_equal(a, b, equal_nan=a.dtype.kind == "f")
            for a, b in zip(self._columns(), other._columns())
        )
        return same and self.provenance == other.provenance

    def _columns(self):
        cols = [self.firm_id, self.regime, self.x, self.d, self.outcome]
        return cols if self.theta is None else cols + [self.theta]

    @classmethod
    def empty(cls, with_theta=False):
        none = np.zeros(0)
        return cls(none, none, none, none, none, none if with_theta else None)

    @classmethod
    def from_records(cls, records, provenance=None):
        records = list(records)
        with_theta = bool(records) and all(r.theta is not None for r in records)
        return cls(
            firm_id=[r.firm_id for r in records],
            regime=[r.regime for r in records],
            x=[r.x for r in records],
            d=[r.d for r in records],
            outcome=[math.nan if r.outcome is None else r.outcome for r in records],
            theta=[r.theta for r in records] if with_theta else None,
            provenance=provenance,
        )

    def records(self) -> Iterator[FirmRecord]:
        for i in range(len(self)):
            yield FirmRecord(
                firm_id=int(self.firm_id[i]),
                regime=int(self.regime[i]),
                x=float(self.x[i]),
                d=int(self.d[i]),
                outcome=None if self.d[i] == 0 else float(self.outcome[i]),
                theta=None if self.theta is None else float(self.theta[i]),
            )

    def take(self, index):
        """Rows at ``index`` (may repeat, as in bootstrap resamples)."""
        index = np.asarray(index, dtype=np.intp)
        return Dataset(
            self.firm_id[index], self.regime[index], self.x[index], self.d[index],
            self.outcome[index], None if self.theta is None else self.theta[index],
            self.provenance,
        )

    def cohort(self, regime):
        return np.flatnonzero(self.regime == regime)

    def participants(self, regime):
        return np.flatnonzero((self.regime == regime) & (self.d == 1))


def _draw_cohort(spec, stream, n, regime):
    u = to_uniform(stream.blocks(0, n))
    theta = np.asarray(spec.distribution.ppf(u[:, 0]), dtype=float)
    x = spec.covariate(theta, special.ndtri(u[:, 2]))
    p = np.asarray(spec.hiring(regime)(theta), dtype=float)
    d = (u[:, 1] < p).astype(np.int8)
    outcome = np.where(d == 1, spec.outcome(regime)(theta), math.nan)
    return theta, x, d, outcome


def simulate(spec, cfg):
    """Draw the pre- and post-regime cohorts; deterministic in ``(spec, cfg)``."""
    cols = {k: [] for k in ("firm_id", "regime", "x", "d", "outcome", "theta")}
    offset = 0
    for regime, n in ((0, int(cfg.n_pre)), (1, int(cfg.n_post))):
        stream = Stream.from_seed(cfg.seed, COHORT, regime)
        theta, x, d, outcome = _draw_cohort(spec, stream, n, regime)
        cols["firm_id"].append(np.arange(offset, offset + n))
        cols["regime"].append(np.full(n, regime))
        cols["x"].append(x)
        cols["d"].append(d)
        cols["outcome"].append(outcome)
        cols["theta"].append(theta)
        offset += n
    data = {k: np.concatenate(v) for k, v in cols.items()}
    if not cfg.reveal_theta:
        data["theta"] = None
    prov = Provenance(spec.digest(), int(cfg.seed), int(cfg.n_pre), int(cfg.n_post),
                      spec.covariate.mode)
    return Dataset(**data, provenance=prov)


# --------------------------------------------------------------------------
# CSV format

HEADER = ["firm_id", "regime", "x", "d", "outcome"]
_PROV_FIELDS = ("spec_digest", "seed", "n_pre", "n_post", "covariate_mode")


def _fmt(value):
    return "%.17g" % value


def write_dataset(ds, path):
    """Write ``ds`` as UTF-8 CSV with LF line endings.

    Provenance, when present, is written as leading ``# key=value`` lines.
    """
    header = HEADER + (["theta"] if ds.theta is not None else [])
    lines = []
    if ds.provenance is not None:
        lines.extend(f"# {k}={getattr(ds.provenance, k)}" for k in _PROV_FIELDS)
    lines.append(",".join(header))
    theta = ds.theta
    for i in range(len(ds)):
        d = int(ds.d[i])
        row = [str(int(ds.firm_id[i])), str(int(ds.regime[i])), _fmt(ds.x[i]), str(d),
               _fmt(ds.outcome[i]) if d == 1 else ""]
        if theta is not None:
            row.append(_fmt(theta[i]))
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_prov(meta, first_line):
    if not meta:
        return None
    unknown = set(meta) - set(_PROV_FIELDS)
    if unknown:
        raise ParseError(first_line, f"unknown provenance field {sorted(unknown)[0]!r}")
    try:
        return Provenance(
            spec_digest=meta.get("spec_digest", ""),
            seed=int(meta.get("seed", 0)),
            n_pre=int(meta.get("n_pre", 0)),
            n_post=int(meta.get("n_post", 0)),
            covariate_mode=meta.get("covariate_mode", ""),
        )
    except ValueError as exc:
        raise ParseError(first_line, f"bad provenance: {exc}") from None


def read_dataset(path):
    meta = {}
    rows = []
    header = None
    seen = set()
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if header is None and line.startswith("#"):
                key, sep, value = line[1:].strip().partition("=")
                if not sep:
                    raise ParseError(lineno, "comment lines must read '# key=value'")
                meta[key.strip()] = value.strip()
                continue
            if header is None:
                header = line.split(",")
                if header not in (HEADER, HEADER + ["theta"]):
                    raise ParseError(lineno, f"unexpected header {line!r}")
                continue
            if not line:
                continue
            fields = next(csv.reader([line]))
            if len(fields) != len(header):
                raise ParseError(lineno, f"expected {len(header)} columns, got {len(fields)}")
            try:
                fid, regime, x, d = int(fields[0]), int(fields[1]), float(fields[2]), int(fields[3])
                outcome = float(fields[4]) if fields[4] != "" else None
                theta = float(fields[5]) if len(header) == 6 else None
            except ValueError as exc:
                raise ParseError(lineno, str(exc)) from None
            if regime not in (0, 1):
                raise ParseError(lineno, f"regime must be 0 or 1, got {regime}")
            if d not in (0, 1):
                raise ParseError(lineno, f"d must be 0 or 1, got {d}")
            if d == 0 and outcome is not None:
                raise ParseError(lineno, "outcome present on a non-participant row")
            if d == 1 and outcome is None:
                raise ParseError(lineno, "outcome missing on a participant row")
            if fid in seen:
                raise ParseError(lineno, f"duplicate firm_id {fid}")
            seen.add(fid)
            rows.append((fid, regime, x, d, math.nan if outcome is None else outcome, theta))
    if header is None:
        raise ParseError(1, "missing header")
    with_theta = len(header) == 6
    prov = _parse_prov(meta, 1)
    if not rows:
        ds = Dataset.empty(with_theta)
        ds.provenance = prov
        return ds
    cols = list(zip(*rows))
    return Dataset(
        firm_id=cols[0], regime=cols[1], x=cols[2], d=cols[3], outcome=cols[4],
        theta=cols[5] if with_theta else None, provenance=prov,
    )
