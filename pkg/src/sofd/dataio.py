"""Ingestion of the naval propulsion decay data, open-set splits and synthetic data.

Condition codes follow the decay table of the benchmark: ``0`` is the normal
condition and ``1..4`` are the propeller, hull, compressor and gas-turbine
decay faults. Inside a split the known classes are re-indexed ``0..K-1`` and
the unknown class gets index ``K``.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

UNLABELED = -1

# Measured variables kept after dropping linearly related attributes, in the
# order used everywhere downstream.
SELECTED_VARIABLES = (
    "GT shaft torque",
    "GT speed",
    "Shaft torque stbd",
    "HP turbine exit temperature",
    "Generator of gas speed",
    "Fuel flow",
    "ABB TIC control signal",
    "GT compressor outlet air pressure",
    "CGT compressor outlet air temperature",
    "External pressure",
    "HP turbine exit pressure",
    "TCS TIC control signal",
    "Average controllable pitch propeller thrust",
    "Average shaft rpm",
    "Average thrust coefficient",
    "Average propeller rps",
    "Average propeller torque",
)

# The remaining raw measurements. Public copies of the dataset name these
# differently; override through ``Schema.sensor_columns``.
EXTRA_VARIABLES = (
    "Lever position",
    "Ship speed",
    "Shaft torque port",
    "Shaft rpm stbd",
    "Shaft rpm port",
    "Propeller thrust stbd",
    "Propeller thrust port",
    "GT compressor inlet air temperature",
)

RAW_VARIABLES = SELECTED_VARIABLES + EXTRA_VARIABLES
COEFFICIENTS = ("kKt", "kH", "kKc", "kMt")


class DataError(ValueError):
    """Raised for unreadable, malformed or inconsistent input data."""


class Condition(enum.IntEnum):
    NORMAL = 0
    FAULT1 = 1  # propeller decay
    FAULT2 = 2  # hull decay
    FAULT3 = 3  # GT compressor decay
    FAULT4 = 4  # GT decay


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float
    lo_closed: bool = True
    hi_closed: bool = True

    def __contains__(self, v: float) -> bool:
        above = v >= self.lo if self.lo_closed else v > self.lo
        below = v <= self.hi if self.hi_closed else v < self.hi
        return above and below


_NOMINAL = {
    "kKt": Interval(0.95, 1.0),
    "kH": Interval(1.0, 1.1),
    "kKc": Interval(0.98, 1.0),
    "kMt": Interval(0.99, 1.0),
}

# Checked in this order; the first match wins. Only kMt = 0.99 lies in two
# closed brackets (normal and GT decay) and resolves to normal.
CONDITION_TABLE: dict[Condition, dict[str, Interval]] = {
    Condition.NORMAL: dict(_NOMINAL),
    Condition.FAULT1: {**_NOMINAL, "kKt": Interval(0.9, 0.95, hi_closed=False)},
    Condition.FAULT2: {**_NOMINAL, "kH": Interval(1.1, 1.2, lo_closed=False)},
    Condition.FAULT3: {**_NOMINAL, "kKc": Interval(0.95, 0.98, hi_closed=False)},
    Condition.FAULT4: {**_NOMINAL, "kMt": Interval(0.975, 0.99)},
}


@dataclass(frozen=True)
class RawRecord:
    speed_index: int
    kKt: float
    kH: float
    kKc: float
    kMt: float
    sensors: tuple[float, ...]

    def coefficient(self, name: str) -> float:
        return getattr(self, name)


@dataclass
class Schema:
    """Maps canonical names to CSV header names.

    ``sensor_columns`` lists the 25 raw measurements as ``(canonical, header)``
    pairs; the position in this list is the position in ``RawRecord.sensors``.
    """

    speed_column: str = "speed"
    coefficient_columns: dict[str, str] = field(
        default_factory=lambda: {c: c for c in COEFFICIENTS}
    )
    sensor_columns: list[tuple[str, str]] = field(
        default_factory=lambda: [(v, v) for v in RAW_VARIABLES]
    )

    @property
    def sensor_names(self) -> list[str]:
        return [name for name, _ in self.sensor_columns]

    @property
    def headers(self) -> list[str]:
        return (
            [self.speed_column]
            + [self.coefficient_columns[c] for c in COEFFICIENTS]
            + [h for _, h in self.sensor_columns]
        )

    @classmethod
    def from_mapping(cls, mapping: dict) -> "Schema":
        """Build from a config table; missing keys keep their defaults."""
        schema = cls()
        if "speed" in mapping:
            schema.speed_column = mapping["speed"]
        for c in COEFFICIENTS:
            if c in mapping:
                schema.coefficient_columns[c] = mapping[c]
        sensors = mapping.get("sensors", {})
        if isinstance(sensors, dict):
            schema.sensor_columns = [(n, sensors.get(n, h)) for n, h in schema.sensor_columns]
        else:
            schema.sensor_columns = [(n, n) for n in sensors]
        return schema


def _parse_float(cell: str, row: int, column: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"row {row}, column {column!r}: non-numeric value {cell!r}") from None
    if not math.isfinite(v):
        raise DataError(f"row {row}, column {column!r}: non-finite value {cell!r}")
    return v


def load_raw(path: str | Path, schema: Schema | None = None) -> list[RawRecord]:
    """Read a headered, comma-separated file into raw records (row order kept).

    Columns not named by the schema are ignored. Row numbers in error
    messages count data rows from 1.
    """
    schema = schema or Schema()
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")

    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None

        missing = [h for h in schema.headers if h not in header]
        if missing:
            raise DataError(
                f"{path}: schema mismatch, {len(missing)} column(s) missing: "
                + ", ".join(repr(m) for m in missing)
            )
        pos = {h: header.index(h) for h in schema.headers}
        coef_pos = [pos[schema.coefficient_columns[c]] for c in COEFFICIENTS]
        sensor_pos = [pos[h] for _, h in schema.sensor_columns]

        records = []
        for i, cells in enumerate(reader, start=1):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) != len(header):
                raise DataError(
                    f"row {i}: malformed, expected {len(header)} cells, got {len(cells)}"
                )
            speed = _parse_float(cells[pos[schema.speed_column]], i, schema.speed_column)
            if speed != int(speed) or not 1 <= speed <= 9:
                raise DataError(f"row {i}, column {schema.speed_column!r}: speed index {speed} not in 1..9")
            coefs = [_parse_float(cells[p], i, header[p]) for p in coef_pos]
            sensors = tuple(_parse_float(cells[p], i, header[p]) for p in sensor_pos)
            records.append(RawRecord(int(speed), *coefs, sensors))
    if not records:
        raise DataError(f"{path}: no data rows")
    return records


def condition_of(record: RawRecord) -> Condition | None:
    for cond, box in CONDITION_TABLE.items():
        if all(record.coefficient(c) in box[c] for c in COEFFICIENTS):
            return cond
    return None


def label_conditions(records: Iterable[RawRecord]) -> list[tuple[RawRecord, Condition | None]]:
    """Tag each record with its decay condition, or ``None`` when no interval box matches."""
    return [(r, condition_of(r)) for r in records]


def select_variables(record: RawRecord, schema: Schema | None = None) -> np.ndarray:
    """Project a raw record onto the 17 retained variables."""
    names = (schema or Schema()).sensor_names
    out = np.empty(len(SELECTED_VARIABLES))
    for j, var in enumerate(SELECTED_VARIABLES):
        try:
            out[j] = record.sensors[names.index(var)]
        except ValueError:
            raise DataError(f"variable {var!r} is not mapped by the schema") from None
    return out


@dataclass
class LabeledPool:
    """All labeled observations available to a split: features, condition code, speed."""

    x: np.ndarray
    condition: np.ndarray
    speed: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.condition = np.asarray(self.condition, dtype=int)
        self.speed = np.asarray(self.speed, dtype=int)
        if not (len(self.x) == len(self.condition) == len(self.speed)):
            raise DataError("pool arrays differ in length")

    @classmethod
    def from_records(cls, records: Sequence[RawRecord], schema: Schema | None = None) -> "LabeledPool":
        """Label, project and stack records; unassigned records are dropped."""
        rows, cond, speed = [], [], []
        for rec, c in label_conditions(records):
            if c is None:
                continue
            rows.append(select_variables(rec, schema))
            cond.append(int(c))
            speed.append(rec.speed_index)
        if not rows:
            raise DataError("no record matches a known condition")
        return cls(np.vstack(rows), np.array(cond), np.array(speed))

    def __len__(self) -> int:
        return len(self.x)


@dataclass
class Dataset:
    """A sample collection: ``role`` is one of D_l, D_u, D_p, D_s.

    ``y`` holds class indices (``0..K-1`` known, ``K`` unknown) or ``-1`` for
    unlabeled samples. ``ids`` are stable sample identities.
    """

    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    role: str
    n_known: int
    speed: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.x)

    @property
    def counts(self) -> dict[int, int]:
        labels, n = np.unique(self.y, return_counts=True)
        return {int(k): int(v) for k, v in zip(labels, n)}

    def subset(self, mask_or_index, role: str | None = None, y=None) -> "Dataset":
        sel = np.asarray(mask_or_index)
        return Dataset(
            x=self.x[sel],
            y=self.y[sel] if y is None else np.broadcast_to(y, self.ids[sel].shape).astype(int),
            ids=self.ids[sel],
            role=role or self.role,
            n_known=self.n_known,
            speed=None if self.speed is None else self.speed[sel],
        )

    def replace_x(self, x: np.ndarray) -> "Dataset":
        return Dataset(x, self.y, self.ids, self.role, self.n_known, self.speed)


@dataclass
class Split:
    labeled: Dataset
    unlabeled: Dataset
    truth: np.ndarray  # class indices of the unlabeled samples, unknown = K
    class_codes: tuple[int, ...]  # condition code for each class index


def build_split(
    pool: LabeledPool,
    known: Sequence[int],
    unknown: int,
    speed: int,
    per_class: int = 1800,
    train_frac: float = 0.7,
    seed: int = 0,
) -> Split:
    """Draw ``per_class`` samples per condition and split them into train/test.

    Known classes contribute ``train_frac`` of their draw to the labeled set
    and the rest to the unlabeled set; the unknown class contributes only its
    test fraction.
    """
    known = [int(k) for k in known]
    if not 0.0 < train_frac < 1.0:
        raise DataError(f"train_frac must lie in (0, 1), got {train_frac}")
    if unknown in known:
        raise DataError(f"unknown class {unknown} is also listed as known")
    if len(set(known)) != len(known) or not known:
        raise DataError(f"known classes must be distinct and non-empty: {known}")

    rng = np.random.default_rng(seed)
    n_train = int(round(train_frac * per_class))
    k = len(known)
    train_idx, train_y, test_idx, test_y = [], [], [], []
    for cls_index, code in enumerate(known + [unknown]):
        avail = np.flatnonzero((pool.condition == code) & (pool.speed == speed))
        if len(avail) < per_class:
            raise DataError(
                f"condition {code} at speed {speed}: {len(avail)} samples available, {per_class} requested"
            )
        chosen = rng.choice(avail, size=per_class, replace=False)
        if cls_index < k:
            train_idx.append(chosen[:n_train])
            train_y.append(np.full(n_train, cls_index))
        test_idx.append(chosen[n_train:])
        test_y.append(np.full(per_class - n_train, cls_index))

    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    truth = np.concatenate(test_y)
    order = rng.permutation(len(te))
    te, truth = te[order], truth[order]

    labeled = Dataset(pool.x[tr], np.concatenate(train_y), tr, "D_l", k, pool.speed[tr])
    unlabeled = Dataset(pool.x[te], np.full(len(te), UNLABELED), te, "D_u", k, pool.speed[te])
    return Split(labeled, unlabeled, truth, tuple(known) + (unknown,))


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Normalizer":
        x = np.asarray(x, dtype=float)
        if x.size == 0 or len(x) == 0:
            raise DataError("cannot fit a normalizer on an empty dataset")
        mean = x.mean(axis=0)
        std = x.std(axis=0)  # population std
        std = np.where(std > 0, std, 1.0)
        return cls(mean, std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std


def fit_normalizer(labeled: Dataset) -> Normalizer:
    return Normalizer.fit(labeled.x)


def apply_normalizer(norm: Normalizer, data: Dataset) -> Dataset:
    return data.replace_x(norm.transform(data.x))


@dataclass
class SyntheticSpec:
    means: np.ndarray  # (n_classes, m)
    scale: float  # isotropic covariance is scale * I
    n_per_class: int
    seed: int = 0

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        if not self.scale > 0:
            raise DataError("covariance scale must be positive")
        if self.n_per_class < 1:
            raise DataError("n_per_class must be positive")
        n = len(self.means)
        for i in range(n):
            for j in range(i + 1, n):
                if np.array_equal(self.means[i], self.means[j]):
                    raise DataError(f"class means {i} and {j} coincide")

    @property
    def n_classes(self) -> int:
        return len(self.means)


def separated_means(n_classes: int, m: int = 17, separation: float = 6.0, scale: float = 1.0) -> np.ndarray:
    """Class means on scaled coordinate axes, pairwise ``separation`` standard deviations apart."""
    if n_classes > m:
        raise DataError("need at least as many dimensions as classes")
    means = np.zeros((n_classes, m))
    means[np.arange(n_classes), np.arange(n_classes)] = separation * math.sqrt(scale) / math.sqrt(2.0)
    return means


def generate_synthetic(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian classes; returns features and labels ``1..n_classes``."""
    rng = np.random.default_rng(spec.seed)
    m = spec.means.shape[1]
    sd = math.sqrt(spec.scale)
    xs, ys = [], []
    for k, mu in enumerate(spec.means):
        xs.append(mu + sd * rng.standard_normal((spec.n_per_class, m)))
        ys.append(np.full(spec.n_per_class, k + 1))
    return np.vstack(xs), np.concatenate(ys)


def synthetic_pool(spec: SyntheticSpec, speed: int = 1) -> LabeledPool:
    x, y = generate_synthetic(spec)
    return LabeledPool(x, y, np.full(len(y), speed))


def write_prepared(path: str | Path, x: np.ndarray, condition: np.ndarray, speed: np.ndarray) -> None:
    """Write labeled, variable-selected rows: condition, speed, then the 17 variables."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["condition", "speed", *SELECTED_VARIABLES])
        for row, c, s in zip(x, condition, speed):
            w.writerow([int(c), int(s), *(repr(float(v)) for v in row)])


def read_prepared(path: str | Path) -> LabeledPool:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.shape[1] != 2 + len(SELECTED_VARIABLES):
        raise DataError(f"{path}: expected {2 + len(SELECTED_VARIABLES)} columns, got {arr.shape[1]}")
    return LabeledPool(arr[:, 2:], arr[:, 0].astype(int), arr[:, 1].astype(int))
