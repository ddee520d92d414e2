"""Core data model and file IO: events, feature matrices, experiment plans, results."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

UNLABELED = -1
CHANNELS = ("Vm", "Va", "F")


class EventClass(IntEnum):
    LL = 1  # load loss
    GL = 2  # generation loss
    LT = 3  # line trip
    BF = 4  # bus fault

    @classmethod
    def parse(cls, value: "str | int | EventClass") -> "EventClass":
        if isinstance(value, EventClass):
            return value
        if isinstance(value, str) and not value.lstrip("-").isdigit():
            try:
                return cls[value.upper()]
            except KeyError:
                raise ValueError(f"unknown event class {value!r}") from None
        return cls(int(value))


CLASS_CODES = tuple(int(c) for c in EventClass)


class DataError(ValueError):
    """Malformed or inconsistent data on disk or in memory."""


def fmt_float(x: float) -> str:
    # 17 significant digits round-trips every IEEE double
    return format(float(x), ".17g")


@dataclass(frozen=True, eq=False)
class EventRecord:
    event_id: str
    label: int  # EventClass code or UNLABELED
    sample_rate_hz: float
    data: np.ndarray  # (|C|*m, N), row blocks Vm, Va, F
    meta: dict = field(default_factory=dict)
    channels: tuple = CHANNELS

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise DataError(f"{self.event_id}: data must be 2-D, got shape {data.shape}")
        if data.shape[0] == 0 or data.shape[0] % len(self.channels):
            raise DataError(
                f"{self.event_id}: row count {data.shape[0]} not divisible by {len(self.channels)} channels"
            )
        if not np.all(np.isfinite(data)):
            raise DataError(f"{self.event_id}: non-finite entry in data")
        if not self.sample_rate_hz > 0:
            raise DataError(f"{self.event_id}: sample rate must be positive")
        if self.label != UNLABELED and self.label not in CLASS_CODES:
            raise DataError(f"{self.event_id}: invalid label {self.label}")
        data = data.copy()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "label", int(self.label))

    @property
    def m(self) -> int:
        return self.data.shape[0] // len(self.channels)

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def channel(self, name: str) -> np.ndarray:
        """The m x N block of one channel."""
        j = self.channels.index(name)
        return self.data[j * self.m:(j + 1) * self.m]

    def __eq__(self, other):
        if not isinstance(other, EventRecord):
            return NotImplemented
        return (
            self.event_id == other.event_id
            and self.label == other.label
            and self.sample_rate_hz == other.sample_rate_hz
            and self.channels == other.channels
            and self.data.shape == other.data.shape
            and bool(np.array_equal(self.data, other.data))
        )


@dataclass(eq=False)
class FeatureDataset:
    X: np.ndarray
    Y: np.ndarray
    feature_names: list
    event_ids: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=int)
        if self.X.ndim != 2:
            raise DataError("X must be 2-D")
        n, d = self.X.shape
        if self.Y.shape != (n,):
            raise DataError(f"Y has shape {self.Y.shape}, expected ({n},)")
        if len(self.feature_names) != d:
            raise DataError(f"{len(self.feature_names)} feature names for {d} columns")
        if len(self.event_ids) != n:
            raise DataError(f"{len(self.event_ids)} event ids for {n} rows")
        bad = set(np.unique(self.Y)) - set(CLASS_CODES) - {UNLABELED}
        if bad:
            raise DataError(f"invalid label codes {sorted(bad)}")
        expected = self.meta.get("d")
        if expected is not None and expected != d:
            raise DataError(f"feature dimension {d} disagrees with metadata d={expected}")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def __eq__(self, other):
        if not isinstance(other, FeatureDataset):
            return NotImplemented
        return (
            self.feature_names == other.feature_names
            and self.event_ids == other.event_ids
            and np.array_equal(self.Y, other.Y)
            and self.X.shape == other.X.shape
            and bool(np.array_equal(self.X, other.X))
        )


def feature_dimension(p: int, m_prime: int, n_channels: int = len(CHANNELS)) -> int:
    return 2 * p * n_channels * (m_prime + 1)


# -- events -------------------------------------------------------------------

def write_events(records: Sequence[EventRecord], path: "str | Path") -> Path:
    """Write one long-format CSV per event plus ``manifest.json``; returns the manifest path."""
    if not records:
        raise DataError("no events to write")
    ids = [r.event_id for r in records]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise DataError(f"duplicate event_id {dup!r}")
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in records:
        fname = f"{rec.event_id}.csv"
        m = rec.m
        with open(out / fname, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel", "pmu_index", "sample_index", "value"])
            for j, ch in enumerate(rec.channels):
                block = rec.data[j * m:(j + 1) * m]
                for i in range(m):
                    w.writerows((ch, i, n, fmt_float(v)) for n, v in enumerate(block[i]))
        entries.append({
            "event_id": rec.event_id,
            "file": fname,
            "class": rec.label,
            "sample_rate": rec.sample_rate_hz,
            "m": m,
            "N": rec.n_samples,
            "channels": list(rec.channels),
            "meta": rec.meta,
        })
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"events": entries}, indent=1, default=_json_default) + "\n")
    return manifest


def read_events(manifest: "str | Path") -> list:
    manifest = Path(manifest)
    if not manifest.is_file():
        raise DataError(f"manifest {manifest} not found")
    try:
        doc = json.loads(manifest.read_text())
        entries = doc["events"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"malformed manifest {manifest}: {exc}") from None
    records = []
    for e in entries:
        eid = e["event_id"]
        fpath = manifest.parent / e["file"]
        if not fpath.is_file():
            raise DataError(f"event {eid}: data file {fpath.name} missing")
        channels = tuple(e.get("channels", CHANNELS))
        m, N = int(e["m"]), int(e["N"])
        data = np.full((len(channels) * m, N), np.nan)
        with open(fpath, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["channel", "pmu_index", "sample_index", "value"]:
                raise DataError(f"event {eid}: bad header {header}")
            for row in reader:
                try:
                    j = channels.index(row[0])
                    i, n = int(row[1]), int(row[2])
                    if not (0 <= i < m and 0 <= n < N):
                        raise IndexError
                    data[j * m + i, n] = float(row[3])
                except (ValueError, IndexError):
                    raise DataError(f"event {eid}: bad row {row} for shape m={m}, N={N}") from None
        if np.isnan(data).any():
            raise DataError(f"event {eid}: missing or NaN entries")
        records.append(EventRecord(eid, int(e["class"]), float(e["sample_rate"]), data,
                                   e.get("meta", {}), channels))
    return records


# -- features -----------------------------------------------------------------

def write_features(ds: FeatureDataset, path: "str | Path") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event_id", "label", *ds.feature_names])
        for eid, y, row in zip(ds.event_ids, ds.Y, ds.X):
            w.writerow([eid, int(y), *map(fmt_float, row)])
    if ds.meta:
        path.with_suffix(".meta.json").write_text(json.dumps(ds.meta, indent=1, default=_json_default) + "\n")
    return path


def read_features(path: "str | Path", feature_names: "Sequence[str] | None" = None) -> FeatureDataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"features file {path} not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["event_id", "label"]:
            raise DataError(f"{path}: header must start with event_id,label")
        names = header[2:]
        if feature_names is not None and list(feature_names) != names:
            raise DataError(f"{path}: header does not match expected feature names")
        ids, ys, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            try:
                ys.append(int(row[1]))
                rows.append([float(v) for v in row[2:]])
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric cell") from None
            ids.append(row[0])
    meta_path = path.with_suffix(".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
    X = np.array(rows, dtype=float).reshape(len(rows), len(names))
    return FeatureDataset(X, np.array(ys, dtype=int), names, ids, meta)


# -- experiment plan ----------------------------------------------------------

ENGINES = ("self_training", "tsvm", "label_spreading")
CLASSIFIERS = ("kNN", "DT", "GB", "SVML", "SVMR")

DEFAULT_GRIDS = {
    "kNN": {"k": [1, 3, 5, 7]},
    "DT": {"max_depth": [3, 5, 10]},
    "GB": {"n_trees": [50, 100], "learning_rate": [0.05, 0.1]},
    "SVML": {"C": [0.1, 1, 10, 100]},
    # gamma values are multiplied by 1/d at fit time
    "SVMR": {"C": [0.1, 1, 10, 100], "gamma": [0.01, 0.1, 1]},
    "tsvm": {"C": [0.1, 1, 10, 100]},
    # sigma_scale multiplies the median-distance default width
    "label_spreading": {"alpha": [0.9, 0.5, 0.2], "sigma_scale": [0.2, 0.3, 0.5]},
}

DEFAULT_ENGINE_PARAMS = {
    "self_training": {"delta_self": None},  # None -> delta_U
    "tsvm": {"kernel": "linear", "anneal_steps": 5, "max_swaps": 200, "balance": False},
    "label_spreading": {"tol": 1e-6, "max_iter": 1000},
}


def steps_for(n_U: int, delta_U: int) -> int:
    return -(-n_U // delta_U) + 1


@dataclass
class ExperimentPlan:
    n_K: int = 10
    n_Q: int = 20
    n_L: int = 24
    delta_U: int = 100
    n_R: int = 20
    B_min: float = 0.2
    B_max: float = 0.8
    master_seed: int = 0
    engines: list = field(default_factory=lambda: list(ENGINES))
    classifiers: list = field(default_factory=lambda: list(CLASSIFIERS))
    combos: "list | None" = None
    grids: dict = field(default_factory=dict)
    engine_params: dict = field(default_factory=dict)
    cv_folds: int = 3
    max_tries: int = 10000
    record_timing: bool = False

    def __post_init__(self):
        for name in ("n_K", "n_Q", "n_L", "delta_U", "n_R", "cv_folds", "max_tries"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise DataError(f"{name} must be a positive integer, got {v!r}")
        if self.n_K < 2:
            raise DataError("n_K must be at least 2")
        if not (0 <= self.B_min <= self.B_max <= 1):
            raise DataError(f"need 0 <= B_min <= B_max <= 1, got ({self.B_min}, {self.B_max})")
        if len(CLASS_CODES) * self.B_min > 1 + 1e-12:
            raise DataError(f"|E|*B_min = {len(CLASS_CODES) * self.B_min} > 1: no balanced split exists")
        for e in self.engines:
            if e not in ENGINES:
                raise DataError(f"unknown engine {e!r}")
        for c in self.classifiers:
            if c not in CLASSIFIERS:
                raise DataError(f"unknown classifier {c!r}")
        if self.combos is not None:
            self.combos = [tuple(c) for c in self.combos]
            for e, c in self.combos:
                if e not in ENGINES or c not in CLASSIFIERS:
                    raise DataError(f"unknown combo ({e}, {c})")
        grids = {k: dict(v) for k, v in DEFAULT_GRIDS.items()}
        for k, v in self.grids.items():
            if k not in grids:
                raise DataError(f"grid for unknown model {k!r}")
            if not v or any(not vals for vals in v.values()):
                raise DataError(f"empty grid for {k!r}")
            grids[k] = dict(v)
        self.grids = grids
        params = {k: dict(v) for k, v in DEFAULT_ENGINE_PARAMS.items()}
        for k, v in self.engine_params.items():
            if k not in params:
                raise DataError(f"parameters for unknown engine {k!r}")
            unknown = set(v) - set(params[k])
            if unknown:
                raise DataError(f"unknown {k} parameters {sorted(unknown)}")
            params[k].update(v)
        self.engine_params = params

    # Approach 1 pairs self-training with its own base; Approach 2 crosses the
    # transductive engines with every downstream classifier.
    def cell_combos(self) -> list:
        if self.combos is not None:
            return list(self.combos)
        out = []
        for e in self.engines:
            for c in self.classifiers:
                out.append((e, c))
        return out

    def n_T(self, n_D: int) -> int:
        return (self.n_K - 1) * n_D // self.n_K

    def n_V(self, n_D: int) -> int:
        return n_D - self.n_T(n_D)

    def n_U(self, n_D: int) -> int:
        return self.n_T(n_D) - self.n_L

    def n_S(self, n_D: int) -> int:
        """Number of step values; the last step is capped at the whole pool."""
        return steps_for(self.n_U(n_D), self.delta_U)

    def validate_for(self, n_D: int) -> None:
        if self.n_K > n_D:
            raise DataError(f"n_K={self.n_K} exceeds n_D={n_D}")
        if self.n_L >= self.n_T(n_D):
            raise DataError(f"n_L={self.n_L} must be below n_T={self.n_T(n_D)}")

    def delta_self(self) -> int:
        v = self.engine_params["self_training"]["delta_self"]
        return self.delta_U if v is None else int(v)

    def total_cells(self, n_D: int) -> int:
        steps = 1 + (self.n_S(n_D) - 1) * self.n_R
        return len(self.cell_combos()) * self.n_K * self.n_Q * steps

    def to_dict(self) -> dict:
        return {
            "n_K": self.n_K, "n_Q": self.n_Q, "n_L": self.n_L, "delta_U": self.delta_U,
            "n_R": self.n_R, "B_min": self.B_min, "B_max": self.B_max,
            "master_seed": self.master_seed, "engines": list(self.engines),
            "classifiers": list(self.classifiers),
            "combos": None if self.combos is None else [list(c) for c in self.combos],
            "grids": self.grids, "engine_params": self.engine_params,
            "cv_folds": self.cv_folds, "max_tries": self.max_tries,
            "record_timing": self.record_timing,
        }


@dataclass(frozen=True)
class ResultRecord:
    engine: str
    classifier: str
    k: int
    q: int
    s: int
    r: int
    n_U_s: int
    auc: float  # nan for failed cells
    converged: bool = True
    wall_ms: "float | None" = None
    error: str = ""

    def __post_init__(self):
        if not math.isnan(self.auc) and not 0.0 <= self.auc <= 1.0:
            raise DataError(f"auc {self.auc} outside [0, 1]")

    @property
    def key(self) -> tuple:
        return (self.engine, self.classifier, self.k, self.q, self.s, self.r)

    @property
    def failed(self) -> bool:
        return math.isnan(self.auc)


RESULT_COLUMNS = ["engine", "classifier", "k", "q", "s", "r", "n_U_s", "auc", "converged", "wall_ms", "error"]


def result_to_row(rec: ResultRecord) -> list:
    return [
        rec.engine, rec.classifier, rec.k, rec.q, rec.s, rec.r, rec.n_U_s,
        "" if rec.failed else fmt_float(rec.auc),
        "true" if rec.converged else "false",
        "" if rec.wall_ms is None else f"{rec.wall_ms:.1f}",
        rec.error,
    ]


def write_results(records: Iterable[ResultRecord], path: "str | Path", append: bool = False) -> Path:
    path = Path(path)
    new = not append or not path.exists()
    with open(path, "w" if new else "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(RESULT_COLUMNS)
        w.writerows(result_to_row(r) for r in records)
    return path


def read_results(path: "str | Path") -> list:
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames[:8]) != RESULT_COLUMNS[:8]:
            raise DataError(f"{path}: unexpected results header {reader.fieldnames}")
        for row in reader:
            out.append(ResultRecord(
                engine=row["engine"], classifier=row["classifier"],
                k=int(row["k"]), q=int(row["q"]), s=int(row["s"]), r=int(row["r"]),
                n_U_s=int(row["n_U_s"]),
                auc=float(row["auc"]) if row["auc"] else float("nan"),
                converged=row.get("converged", "true") == "true",
                wall_ms=float(row["wall_ms"]) if row.get("wall_ms") else None,
                error=row.get("error") or "",
            ))
    return out


def _json_default(o: Any):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
