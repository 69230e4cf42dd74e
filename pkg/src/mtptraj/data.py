"""Longitudinal panel container, wide-CSV ingestion, and history features.

A panel holds, for each of ``tau`` assessment times, a covariate block
``L_t`` (n x p_t), an exposure column ``A_t`` and an outcome column
``Y_t``.  Panels are complete by construction: any missing or non-finite
cell is a hard error at load time.

The wide CSV format uses headers ``L{t}_{j}``, ``A{t}``, ``Y{t}`` (column
order irrelevant) and an optional leading comment ``# v: 0,2,4,6`` giving
the assessment times; without it times default to 1..tau.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError

__all__ = [
    "CsvSchema",
    "LongitudinalDataset",
    "TrajectoryEstimate",
    "StackedEstimate",
    "history_features",
    "history_feature_names",
    "load_csv",
    "write_csv",
]


@dataclass(frozen=True)
class CsvSchema:
    """Column-naming configuration for the wide format."""

    exposure_prefix: str = "A"
    outcome_prefix: str = "Y"
    covariate_prefix: str = "L"
    covariate_sep: str = "_"


@dataclass(frozen=True)
class LongitudinalDataset:
    """Rectangular n x tau panel of covariates, exposures, and outcomes.

    Immutable after construction; safe to share across threads.
    """

    covariates: tuple[np.ndarray, ...]  # one n x p_t block per time
    exposures: np.ndarray               # n x tau
    outcomes: np.ndarray                # n x tau
    assessment_times: np.ndarray        # length tau, strictly increasing

    def __post_init__(self):
        exposures = np.ascontiguousarray(np.asarray(self.exposures, dtype=np.float64))
        outcomes = np.ascontiguousarray(np.asarray(self.outcomes, dtype=np.float64))
        covariates = tuple(np.ascontiguousarray(np.asarray(block, dtype=np.float64))
                           for block in self.covariates)
        times = np.asarray(self.assessment_times, dtype=np.float64)
        object.__setattr__(self, "exposures", exposures)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "assessment_times", times)

        if exposures.ndim != 2 or outcomes.ndim != 2:
            raise DataError("exposures and outcomes must be n x tau matrices")
        n, tau = exposures.shape
        if tau < 1:
            raise DataError("at least one time point is required")
        if outcomes.shape != (n, tau):
            raise DataError(f"outcomes shape {outcomes.shape} != exposures shape {(n, tau)}")
        if len(covariates) != tau:
            raise DataError(f"expected {tau} covariate blocks, got {len(covariates)}")
        for t, block in enumerate(covariates, start=1):
            if block.ndim != 2 or block.shape[0] != n:
                raise DataError(f"covariate block L{t} must have {n} rows")
        if n < 2:
            raise DataError("need at least 2 individuals")
        if times.shape != (tau,):
            raise DataError(f"assessment_times must have length {tau}")
        if np.any(np.diff(times) <= 0.0):
            raise DataError("assessment_times must be strictly increasing")
        for name, arr in [("exposures", exposures), ("outcomes", outcomes)]:
            if not np.all(np.isfinite(arr)):
                row = int(np.argwhere(~np.isfinite(arr))[0][0])
                raise DataError(f"non-finite value in {name} at row {row}")
        for t, block in enumerate(covariates, start=1):
            if block.size and not np.all(np.isfinite(block)):
                row = int(np.argwhere(~np.isfinite(block))[0][0])
                raise DataError(f"non-finite value in L{t} at row {row}")

    @property
    def n(self) -> int:
        return self.exposures.shape[0]

    @property
    def tau(self) -> int:
        return self.exposures.shape[1]

    @property
    def p(self) -> tuple[int, ...]:
        return tuple(block.shape[1] for block in self.covariates)

    def equals(self, other: "LongitudinalDataset") -> bool:
        return (self.tau == other.tau and self.n == other.n
                and self.p == other.p
                and np.array_equal(self.assessment_times, other.assessment_times)
                and np.array_equal(self.exposures, other.exposures)
                and np.array_equal(self.outcomes, other.outcomes)
                and all(np.array_equal(a, b) for a, b in zip(self.covariates, other.covariates)))


@dataclass(frozen=True)
class TrajectoryEstimate:
    """Estimated outcome trajectory under one policy.

    ``eif`` is the n x tau matrix of estimated (uncentered) influence
    values; its column means equal ``theta_hat`` by construction.
    """

    policy_label: str
    theta_hat: np.ndarray  # length tau
    eif: np.ndarray        # n x tau

    def __post_init__(self):
        theta = np.asarray(self.theta_hat, dtype=np.float64)
        eif = np.asarray(self.eif, dtype=np.float64)
        object.__setattr__(self, "theta_hat", theta)
        object.__setattr__(self, "eif", eif)
        if eif.ndim != 2 or theta.shape != (eif.shape[1],):
            raise DataError("eif must be n x tau with theta_hat of length tau")
        scale = np.maximum(np.abs(theta), 1.0)
        if np.any(np.abs(eif.mean(axis=0) - theta) > 1e-12 * scale):
            raise DataError("eif column means do not reproduce theta_hat")


@dataclass(frozen=True)
class StackedEstimate:
    """Two trajectories stacked as (theta'_1..theta'_tau, theta''_1..theta''_tau)."""

    label_prime: str
    label_dprime: str
    theta_hat: np.ndarray  # length 2*tau
    eif: np.ndarray        # n x 2*tau

    def __post_init__(self):
        theta = np.asarray(self.theta_hat, dtype=np.float64)
        eif = np.asarray(self.eif, dtype=np.float64)
        object.__setattr__(self, "theta_hat", theta)
        object.__setattr__(self, "eif", eif)
        if eif.ndim != 2 or theta.shape != (eif.shape[1],) or eif.shape[1] % 2:
            raise DataError("stacked eif must be n x 2*tau")
        scale = np.maximum(np.abs(theta), 1.0)
        if np.any(np.abs(eif.mean(axis=0) - theta) > 1e-12 * scale):
            raise DataError("stacked eif column means do not reproduce theta_hat")

    @property
    def tau(self) -> int:
        return self.theta_hat.shape[0] // 2

    @property
    def n(self) -> int:
        return self.eif.shape[0]

    def trajectory(self, which: str) -> np.ndarray:
        tau = self.tau
        if which == "prime":
            return self.theta_hat[:tau]
        if which == "dprime":
            return self.theta_hat[tau:]
        raise ValueError("which must be 'prime' or 'dprime'")


def history_feature_names(p: tuple[int, ...], t: int,
                          schema: CsvSchema = CsvSchema()) -> list[str]:
    """Column names of the history design at time t.

    Order: A_1..A_{t-1}, then L_1..L_t blocks, then Y_1..Y_{t-1}.
    """
    names = [f"{schema.exposure_prefix}{s}" for s in range(1, t)]
    for s in range(1, t + 1):
        names += [f"{schema.covariate_prefix}{s}{schema.covariate_sep}{j}"
                  for j in range(1, p[s - 1] + 1)]
    names += [f"{schema.outcome_prefix}{s}" for s in range(1, t)]
    return names


def history_features(data: LongitudinalDataset, t: int) -> np.ndarray:
    """Materialize the history design H_t, one row per individual.

    Columns follow ``history_feature_names``: prior exposures, covariate
    blocks up to and including time t, prior outcomes.
    """
    if not 1 <= t <= data.tau:
        raise DataError(f"time index t={t} out of range 1..{data.tau}")
    blocks = [data.exposures[:, : t - 1]]
    blocks += [data.covariates[s] for s in range(t)]
    blocks += [data.outcomes[:, : t - 1]]
    return np.hstack(blocks)


_INT = r"([1-9][0-9]*)"


def _parse_header(columns: list[str], schema: CsvSchema):
    """Map raw columns onto (kind, t, j); returns structure or raises."""
    exp_re = re.compile(f"^{re.escape(schema.exposure_prefix)}{_INT}$")
    out_re = re.compile(f"^{re.escape(schema.outcome_prefix)}{_INT}$")
    cov_re = re.compile(
        f"^{re.escape(schema.covariate_prefix)}{_INT}{re.escape(schema.covariate_sep)}{_INT}$")

    exposures: dict[int, str] = {}
    outcomes: dict[int, str] = {}
    covariates: dict[tuple[int, int], str] = {}
    for col in columns:
        if m := exp_re.match(col):
            exposures[int(m.group(1))] = col
        elif m := out_re.match(col):
            outcomes[int(m.group(1))] = col
        elif m := cov_re.match(col):
            covariates[(int(m.group(1)), int(m.group(2)))] = col
        else:
            raise SchemaError(f"unrecognized column name: {col!r}")

    if not exposures:
        raise SchemaError(f"no exposure columns ({schema.exposure_prefix}1, ...) found")
    tau = max(max(exposures), max(outcomes, default=0),
              max((t for t, _ in covariates), default=0))
    for t in range(1, tau + 1):
        if t not in exposures:
            raise SchemaError(f"missing column {schema.exposure_prefix}{t}")
        if t not in outcomes:
            raise SchemaError(f"missing column {schema.outcome_prefix}{t}")
    p = []
    for t in range(1, tau + 1):
        js = sorted(j for (tt, j) in covariates if tt == t)
        if js != list(range(1, len(js) + 1)):
            missing = next(j for j in range(1, len(js) + 2) if j not in js)
            raise SchemaError(
                f"missing column {schema.covariate_prefix}{t}{schema.covariate_sep}{missing}")
        p.append(len(js))
    return tau, tuple(p), exposures, outcomes, covariates


def load_csv(path, schema: CsvSchema = CsvSchema()) -> LongitudinalDataset:
    """Load a wide-format CSV into a validated dataset.

    tau and the per-time covariate counts are inferred from the header;
    assessment times come from an optional first-line comment
    ``# v: v1,...,vtau`` and default to 1..tau.
    """
    times = None
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if first.lstrip().startswith("#"):
            body = first.lstrip()[1:].strip()
            if body.lower().startswith("v:"):
                times = np.array([float(x) for x in body[2:].split(",")])
            text = fh.read()
        else:
            text = first + fh.read()

    df = pd.read_csv(io.StringIO(text), dtype=str, skipinitialspace=True)
    tau, p, exp_cols, out_cols, cov_cols = _parse_header([str(c) for c in df.columns], schema)

    def numeric(col: str) -> np.ndarray:
        raw = df[col]
        bad = raw.isna() | (raw.str.strip() == "")
        if bad.any():
            row = int(np.argwhere(bad.to_numpy())[0][0])
            raise DataError(f"missing value in column {col!r} at row {row}")
        try:
            values = raw.astype(np.float64).to_numpy()
        except ValueError as exc:
            raise DataError(f"non-numeric value in column {col!r}: {exc}") from exc
        if not np.all(np.isfinite(values)):
            row = int(np.argwhere(~np.isfinite(values))[0][0])
            raise DataError(f"non-finite value in column {col!r} at row {row}")
        return values

    exposures = np.column_stack([numeric(exp_cols[t]) for t in range(1, tau + 1)])
    outcomes = np.column_stack([numeric(out_cols[t]) for t in range(1, tau + 1)])
    n = exposures.shape[0]
    covariates = []
    for t in range(1, tau + 1):
        if p[t - 1] == 0:
            covariates.append(np.empty((n, 0)))
        else:
            covariates.append(np.column_stack(
                [numeric(cov_cols[(t, j)]) for j in range(1, p[t - 1] + 1)]))

    if times is None:
        times = np.arange(1, tau + 1, dtype=np.float64)
    elif times.shape != (tau,):
        raise DataError(f"assessment-time comment has {times.shape[0]} entries, expected {tau}")

    return LongitudinalDataset(covariates=tuple(covariates), exposures=exposures,
                               outcomes=outcomes, assessment_times=times)


def write_csv(data: LongitudinalDataset, path, schema: CsvSchema = CsvSchema()) -> None:
    """Write the canonical wide CSV (L blocks, A, Y per time, with # v header)."""
    columns: dict[str, np.ndarray] = {}
    for t in range(1, data.tau + 1):
        for j in range(1, data.p[t - 1] + 1):
            columns[f"{schema.covariate_prefix}{t}{schema.covariate_sep}{j}"] = \
                data.covariates[t - 1][:, j - 1]
        columns[f"{schema.exposure_prefix}{t}"] = data.exposures[:, t - 1]
        columns[f"{schema.outcome_prefix}{t}"] = data.outcomes[:, t - 1]
    frame = pd.DataFrame(columns)
    times = ",".join(repr(float(v)) for v in data.assessment_times)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# v: {times}\n")
        frame.to_csv(fh, index=False)
