"""Illness-death observation records: validation, counts, and CSV round trip.

One subject contributes ``(v, w, delta1, delta2, delta3, x)``:

* ``v``      first observed time (diagnosis, death, or censoring),
* ``delta1`` 1 when diagnosis came first, ``delta2`` 1 when death came first
  (mutually exclusive; both 0 means censored in the healthy state),
* ``w``      death or censoring time after diagnosis (0 unless ``delta1`` is 1),
* ``delta3`` 1 when death was observed after diagnosis,
* ``x``      time-independent covariates shared by all three transitions.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import (
    DataWarning,
    DimensionMismatch,
    InvalidFlagCombination,
    MissingValue,
    NegativeTime,
)

__all__ = [
    "REQUIRED_COLUMNS",
    "Observation",
    "Dataset",
    "TransitionCounts",
    "validate",
    "load_csv",
    "transition_counts",
]

REQUIRED_COLUMNS = ("v", "w", "delta1", "delta2", "delta3")

TRANSITIONS = ("01", "02", "12")


def _check_flag(value, name: str) -> int:
    f = float(value)
    if f not in (0.0, 1.0):
        raise InvalidFlagCombination(f"{name} must be 0 or 1, got {value!r}")
    return int(f)


@dataclass(frozen=True)
class Observation:
    """A single validated illness-death record."""

    v: float
    w: float
    delta1: int
    delta2: int
    delta3: int
    x: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "v", float(self.v))
        object.__setattr__(self, "w", float(self.w))
        object.__setattr__(self, "delta1", _check_flag(self.delta1, "delta1"))
        object.__setattr__(self, "delta2", _check_flag(self.delta2, "delta2"))
        object.__setattr__(self, "delta3", _check_flag(self.delta3, "delta3"))
        object.__setattr__(self, "x", tuple(float(c) for c in self.x))
        if not all(np.isfinite(c) for c in self.x):
            raise MissingValue("covariates must be finite; no imputation is attempted")
        if not (np.isfinite(self.v) and np.isfinite(self.w)):
            raise MissingValue("times must be finite")
        if self.delta1 + self.delta2 > 1:
            raise InvalidFlagCombination("delta1 and delta2 are mutually exclusive")
        if self.delta3 == 1 and self.delta1 == 0:
            raise InvalidFlagCombination("delta3 = 1 requires delta1 = 1")
        if self.delta1 == 0 and self.w != 0.0:
            raise InvalidFlagCombination("w must be 0 for subjects without an observed diagnosis")
        if self.v <= 0.0:
            raise NegativeTime(f"v must be positive, got {self.v}")
        if self.delta1 == 1 and self.w < self.v:
            raise NegativeTime(f"w = {self.w} is below v = {self.v} for a diagnosed subject")
        if self.delta1 == 1 and self.delta3 == 1 and self.w == self.v:
            warnings.warn(
                "death recorded at the diagnosis instant (w == v with delta3 = 1); "
                "accepted, but check the data",
                DataWarning,
                stacklevel=2,
            )

    @property
    def n_events(self) -> int:
        """Number of observed transitions for this subject (0 to 3... at most 2)."""
        return self.delta1 + self.delta2 + self.delta3


class Dataset:
    """Immutable columnar container of validated observations.

    Arrays are read-only so a dataset can be shared across threads and
    processes without copies.
    """

    __slots__ = ("v", "w", "delta1", "delta2", "delta3", "x", "covariate_names")

    def __init__(self, v, w, delta1, delta2, delta3, x, covariate_names=None):
        v = np.ascontiguousarray(v, dtype=float)
        w = np.ascontiguousarray(w, dtype=float)
        d1 = np.ascontiguousarray(delta1, dtype=np.int8)
        d2 = np.ascontiguousarray(delta2, dtype=np.int8)
        d3 = np.ascontiguousarray(delta3, dtype=np.int8)
        x = np.ascontiguousarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = v.shape[0]
        if n < 1:
            raise DimensionMismatch("a dataset needs at least one observation")
        for name, arr in (("w", w), ("delta1", d1), ("delta2", d2), ("delta3", d3)):
            if arr.shape[0] != n:
                raise DimensionMismatch(f"column {name} has length {arr.shape[0]}, expected {n}")
        if x.shape[0] != n:
            raise DimensionMismatch(f"covariate matrix has {x.shape[0]} rows, expected {n}")
        if covariate_names is None:
            covariate_names = tuple(f"x{j + 1}" for j in range(x.shape[1]))
        covariate_names = tuple(str(c) for c in covariate_names)
        if len(covariate_names) != x.shape[1]:
            raise DimensionMismatch(
                f"{len(covariate_names)} covariate names for {x.shape[1]} columns"
            )
        self._validate_columns(v, w, d1, d2, d3, x)
        for arr in (v, w, d1, d2, d3, x):
            arr.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "delta1", d1)
        object.__setattr__(self, "delta2", d2)
        object.__setattr__(self, "delta3", d3)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "covariate_names", covariate_names)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    def __reduce__(self):
        # rebuild through the constructor so unpickling re-validates and the
        # arrays come back read-only
        return (
            _rebuild_dataset,
            (self.v, self.w, self.delta1, self.delta2, self.delta3, self.x, self.covariate_names),
        )

    @staticmethod
    def _validate_columns(v, w, d1, d2, d3, x):
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w)) and np.all(np.isfinite(x))):
            raise MissingValue("all entries must be finite; no imputation is attempted")
        for name, d in (("delta1", d1), ("delta2", d2), ("delta3", d3)):
            if not np.all((d == 0) | (d == 1)):
                raise InvalidFlagCombination(f"{name} entries must be 0 or 1")
        if np.any(d1 + d2 > 1):
            raise InvalidFlagCombination("delta1 and delta2 are mutually exclusive")
        if np.any((d3 == 1) & (d1 == 0)):
            raise InvalidFlagCombination("delta3 = 1 requires delta1 = 1")
        if np.any((d1 == 0) & (w != 0.0)):
            raise InvalidFlagCombination("w must be 0 for subjects without an observed diagnosis")
        if np.any(v <= 0.0):
            raise NegativeTime("v must be positive for every subject")
        if np.any((d1 == 1) & (w < v)):
            raise NegativeTime("w must be at least v for diagnosed subjects")
        zero_sojourn_death = (d1 == 1) & (d3 == 1) & (w == v)
        if np.any(zero_sojourn_death):
            warnings.warn(
                f"{int(zero_sojourn_death.sum())} subject(s) have death recorded at the "
                "diagnosis instant (w == v with delta3 = 1); accepted, but check the data",
                DataWarning,
                stacklevel=3,
            )

    @property
    def n(self) -> int:
        return self.v.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def observations(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation(
                v=self.v[i],
                w=self.w[i],
                delta1=int(self.delta1[i]),
                delta2=int(self.delta2[i]),
                delta3=int(self.delta3[i]),
                x=tuple(self.x[i]),
            )

    @classmethod
    def from_observations(cls, observations: Sequence[Observation], covariate_names=None):
        obs = list(observations)
        if not obs:
            raise DimensionMismatch("a dataset needs at least one observation")
        p = len(obs[0].x)
        for i, o in enumerate(obs):
            if len(o.x) != p:
                raise DimensionMismatch(
                    f"row {i} has {len(o.x)} covariates, expected {p}"
                )
        return cls(
            v=[o.v for o in obs],
            w=[o.w for o in obs],
            delta1=[o.delta1 for o in obs],
            delta2=[o.delta2 for o in obs],
            delta3=[o.delta3 for o in obs],
            x=[o.x for o in obs] if p else np.zeros((len(obs), 0)),
            covariate_names=covariate_names,
        )

    def covariate_index(self, names) -> np.ndarray:
        """Column indices for covariate ``names`` (raises on unknown names)."""
        lookup = {c: j for j, c in enumerate(self.covariate_names)}
        try:
            return np.array([lookup[str(nm)] for nm in names], dtype=int)
        except KeyError as exc:
            raise DimensionMismatch(f"unknown covariate {exc.args[0]!r}") from exc

    def to_csv(self, path) -> None:
        """Write the header-matched CSV schema (UTF-8, '.' decimal separator)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(REQUIRED_COLUMNS) + list(self.covariate_names))
            for i in range(self.n):
                row = [
                    repr(float(self.v[i])),
                    repr(float(self.w[i])),
                    int(self.delta1[i]),
                    int(self.delta2[i]),
                    int(self.delta3[i]),
                ]
                row.extend(repr(float(c)) for c in self.x[i])
                writer.writerow(row)


def validate(records: Iterable, covariate_names=None) -> Dataset:
    """Validate raw rows and assemble a :class:`Dataset`.

    ``records`` may be mappings keyed by column name (extra keys are treated
    as covariates, ordered by ``covariate_names`` or first-row order) or flat
    sequences laid out as ``v, w, delta1, delta2, delta3, covariates...``.
    All failing rows are reported together.
    """
    rows = list(records)
    if not rows:
        raise DimensionMismatch("no rows to validate")

    def split_row(row):
        if isinstance(row, Mapping):
            missing = [c for c in REQUIRED_COLUMNS if c not in row]
            if missing:
                raise DimensionMismatch(f"missing required column(s) {missing}")
            names = covariate_names
            if names is None:
                names = [k for k in row.keys() if k not in REQUIRED_COLUMNS]
            core = [row[c] for c in REQUIRED_COLUMNS]
            covs = [row[nm] for nm in names]
            return core, covs, tuple(names)
        seq = list(row)
        if len(seq) < 5:
            raise DimensionMismatch("a row needs at least v, w, delta1, delta2, delta3")
        return seq[:5], seq[5:], covariate_names

    observations = []
    problems = []
    names_seen = None
    for i, row in enumerate(rows):
        try:
            core, covs, names = split_row(row)
            if names_seen is None:
                names_seen = names
            obs = Observation(core[0], core[1], core[2], core[3], core[4], covs)
            observations.append(obs)
        except (ValueError, TypeError) as exc:
            problems.append((i, exc))
    if problems:
        detail = "; ".join(f"row {i}: {exc}" for i, exc in problems[:10])
        more = "" if len(problems) <= 10 else f" (+{len(problems) - 10} more)"
        first = problems[0][1]
        err_cls = type(first) if isinstance(first, ValueError) else MissingValue
        raise err_cls(f"{len(problems)} invalid row(s): {detail}{more}")
    p = len(observations[0].x)
    for i, o in enumerate(observations):
        if len(o.x) != p:
            raise DimensionMismatch(f"row {i} has {len(o.x)} covariates, expected {p}")
    return Dataset.from_observations(observations, covariate_names=names_seen)


def load_csv(path) -> Dataset:
    """Read the CSV schema ``v,w,delta1,delta2,delta3,<covariates...>``.

    Columns are matched by header name, not position; every non-required
    column is taken as a covariate. Empty cells are a hard error.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise DimensionMismatch(f"{path}: empty file, expected a header row")
        missing = [c for c in REQUIRED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise DimensionMismatch(f"{path}: missing required column(s) {missing}")
        cov_names = [c for c in reader.fieldnames if c not in REQUIRED_COLUMNS]
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            parsed = {}
            for key, val in raw.items():
                if key is None:
                    raise DimensionMismatch(f"{path}:{lineno}: more cells than header columns")
                if val is None or val.strip() == "":
                    raise MissingValue(f"{path}:{lineno}: empty value for column {key!r}")
                try:
                    parsed[key] = float(val)
                except ValueError as exc:
                    raise MissingValue(
                        f"{path}:{lineno}: column {key!r} is not numeric: {val!r}"
                    ) from exc
            rows.append(parsed)
    return validate(rows, covariate_names=cov_names)


def _rebuild_dataset(v, w, d1, d2, d3, x, names):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)  # already warned when first built
        return Dataset(v, w, d1, d2, d3, x, covariate_names=names)


class TransitionCounts(NamedTuple):
    n01: int
    n02: int
    n12: int
    n0: int
    n1: int


def transition_counts(data: Dataset) -> TransitionCounts:
    """Event counts per transition plus the state occupancy counts.

    ``n0`` is everyone (all subjects start healthy); ``n1`` counts subjects
    with an observed diagnosis.
    """
    n01 = int(data.delta1.sum())
    n02 = int(data.delta2.sum())
    n12 = int(data.delta3.sum())
    return TransitionCounts(n01=n01, n02=n02, n12=n12, n0=data.n, n1=n01)
