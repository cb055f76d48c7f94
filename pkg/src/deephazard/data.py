"""Survival dataset container, CSV ingestion, standardization and fold planning."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed survival data (bad CSV rows, invalid records)."""


class SurvivalRecord(NamedTuple):
    covariates: np.ndarray
    time: float
    event: bool


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std + self.mean


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Right-censored time-to-event data held as column arrays.

    Parameters
    ----------
    covariates : (N, d) array
    time : (N,) array of positive observed times
    event : (N,) boolean array, ``True`` when the event was observed
    feature_names : optional list of ``d`` column names
    standardization : stats of the transform already applied to ``covariates``
    """

    covariates: np.ndarray
    time: np.ndarray
    event: np.ndarray
    feature_names: tuple[str, ...] = ()
    standardization: Standardization | None = None

    def __post_init__(self):
        x = np.array(self.covariates, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        t = np.array(self.time, dtype=float).reshape(-1)
        e = np.array(self.event).reshape(-1)
        if x.ndim != 2 or x.shape[0] != t.shape[0] or e.shape[0] != t.shape[0]:
            raise DataError(
                f"inconsistent shapes: covariates {x.shape}, time {t.shape}, event {e.shape}"
            )
        if not np.all(np.isin(e, (0, 1))):
            raise DataError("event indicators must be 0/1")
        e = e.astype(bool)
        if not np.all(np.isfinite(x)):
            raise DataError("covariates contain non-finite values")
        if not np.all(np.isfinite(t)) or np.any(t <= 0):
            bad = int(np.flatnonzero(~(np.isfinite(t) & (t > 0)))[0])
            raise DataError(f"record {bad}: time must be positive and finite")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError(f"{len(names)} feature names for {x.shape[1]} features")
        for arr in (x, t, e):
            arr.setflags(write=False)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "time", t)
        object.__setattr__(self, "event", e)
        object.__setattr__(self, "feature_names", names)

    def __len__(self) -> int:
        return self.time.shape[0]

    @property
    def n_features(self) -> int:
        return self.covariates.shape[1]

    @property
    def records(self) -> list[SurvivalRecord]:
        return [
            SurvivalRecord(self.covariates[i], float(self.time[i]), bool(self.event[i]))
            for i in range(len(self))
        ]

    @classmethod
    def from_records(
        cls, records: Iterable[SurvivalRecord], feature_names: Sequence[str] = ()
    ) -> "SurvivalDataset":
        records = list(records)
        if not records:
            raise DataError("no records")
        x = np.stack([np.asarray(r.covariates, dtype=float) for r in records])
        return cls(
            x,
            [r.time for r in records],
            [bool(r.event) for r in records],
            tuple(feature_names),
        )

    def subset(self, indices) -> "SurvivalDataset":
        idx = np.asarray(indices, dtype=int)
        return SurvivalDataset(
            self.covariates[idx],
            self.time[idx],
            self.event[idx],
            self.feature_names,
            self.standardization,
        )

    def validate_for_training(self) -> None:
        if len(self) == 0:
            raise DataError("empty dataset")
        if not self.event.any():
            raise DataError("dataset has no observed events")


def load_csv(path, duration_column: str = "time", event_column: str = "event") -> SurvivalDataset:
    """Read a survival CSV; every column other than duration/event is a feature.

    Errors name the offending (1-based, header excluded) data row.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for col in (duration_column, event_column):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r}")
        ti = header.index(duration_column)
        ei = header.index(event_column)
        feat_idx = [j for j in range(len(header)) if j not in (ti, ei)]
        xs, ts, es = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"row {row_no}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                t = float(row[ti])
            except ValueError:
                raise DataError(f"row {row_no}: duration {row[ti]!r} is not a number") from None
            if not math.isfinite(t) or t <= 0:
                raise DataError(f"row {row_no}: duration must be positive and finite, got {row[ti]}")
            ev = row[ei].strip()
            if ev not in ("0", "1", "0.0", "1.0"):
                raise DataError(f"row {row_no}: event must be 0 or 1, got {row[ei]!r}")
            try:
                x = [float(row[j]) for j in feat_idx]
            except ValueError as exc:
                raise DataError(f"row {row_no}: {exc}") from None
            if not all(math.isfinite(v) for v in x):
                raise DataError(f"row {row_no}: non-finite covariate")
            xs.append(x)
            ts.append(t)
            es.append(ev.startswith("1"))
    if not ts:
        raise DataError(f"{path}: no data rows")
    names = tuple(header[j] for j in feat_idx)
    x = np.array(xs, dtype=float).reshape(len(ts), len(names))
    return SurvivalDataset(x, ts, es, names)


def save_csv(ds: SurvivalDataset, path, duration_column: str = "time", event_column: str = "event") -> None:
    # repr(float) round-trips exactly
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*ds.feature_names, duration_column, event_column])
        for i in range(len(ds)):
            w.writerow(
                [*(repr(float(v)) for v in ds.covariates[i]), repr(float(ds.time[i])), int(ds.event[i])]
            )


def fit_standardization(x: np.ndarray) -> Standardization:
    x = np.asarray(x, dtype=float)
    if x.shape[0] == 0:
        raise DataError("empty dataset")
    std = x.std(axis=0)  # population std
    varies = std > 0
    # constant columns pass through untouched
    return Standardization(np.where(varies, x.mean(axis=0), 0.0), np.where(varies, std, 1.0))


def standardize(ds: SurvivalDataset, stats: Standardization | None = None) -> SurvivalDataset:
    """Return a copy with zero-mean, unit-variance features.

    Zero-variance features pass through unchanged. Pass ``stats`` (for example
    ``train.standardization``) to apply a training-set transform to held-out data.
    """
    if len(ds) == 0:
        raise DataError("empty dataset")
    if stats is None:
        stats = fit_standardization(ds.covariates)
    return SurvivalDataset(
        stats.transform(ds.covariates), ds.time, ds.event, ds.feature_names, stats
    )


@dataclass(frozen=True)
class SplitPlan:
    """Repeated k-fold assignment of record indices.

    ``assignments[r][f]`` is the sorted test-index array of fold ``f`` in repeat ``r``.
    """

    seed: int
    k: int
    r: int
    n: int
    validation_fraction: float
    assignments: tuple[tuple[np.ndarray, ...], ...] = field(repr=False)

    def folds(self):
        """Yield ``(repeat, fold, train_idx, valid_idx, test_idx)``.

        The validation part is carved from the training portion with a
        deterministic per-(repeat, fold) shuffle.
        """
        for rep in range(self.r):
            for f in range(self.k):
                test = self.assignments[rep][f]
                rest = np.concatenate([self.assignments[rep][g] for g in range(self.k) if g != f])
                rng = np.random.default_rng([self.seed, rep, f, 1])
                rest = rng.permutation(rest)
                n_valid = max(1, int(round(self.validation_fraction * rest.size)))
                yield rep, f, np.sort(rest[n_valid:]), np.sort(rest[:n_valid]), test


def make_splits(
    ds: SurvivalDataset | int, k: int = 5, r: int = 2, seed: int = 0, validation_fraction: float = 0.2
) -> SplitPlan:
    n = ds if isinstance(ds, int) else len(ds)
    if k < 2 or r < 1:
        raise ValueError("need k >= 2 and r >= 1")
    if not 0 < validation_fraction < 1:
        raise ValueError("validation_fraction must lie in (0, 1)")
    if k > n:
        raise ValueError(f"k={k} folds for only {n} records")
    reps = []
    for rep in range(r):
        perm = np.random.default_rng([seed, rep, 0]).permutation(n)
        reps.append(tuple(np.sort(chunk) for chunk in np.array_split(perm, k)))
    return SplitPlan(seed, k, r, n, validation_fraction, tuple(reps))
