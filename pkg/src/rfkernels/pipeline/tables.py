"""CSV ingestion and train-only preprocessing."""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Mapping

import numpy as np

from ..trees import Dataset

Kind = Literal["numeric", "categorical"]
Task = Literal["classify", "regress"]


class CsvFormatError(ValueError):
    """Malformed CSV input; the message names the offending line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


@dataclass(frozen=True)
class TableSpec:
    """Which columns to read, how to treat them, and what to predict.

    ``columns=None`` takes every header column except the target. Columns
    missing from ``kinds`` are numeric.
    """

    target: str
    task: Task = "classify"
    kinds: Mapping[str, Kind] = field(default_factory=dict)
    columns: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.task not in ("classify", "regress"):
            raise ValueError(f"task must be 'classify' or 'regress', got {self.task!r}")
        for name, kind in self.kinds.items():
            if kind not in ("numeric", "categorical"):
                raise ValueError(f"column {name!r}: unknown kind {kind!r}")

    def kind(self, name: str) -> Kind:
        return self.kinds.get(name, "numeric")


@dataclass(frozen=True, eq=False)
class RawTable:
    """Parsed columns before any imputation.

    Numeric columns are float arrays with NaN for missing cells; categorical
    columns are object arrays with ``None`` for missing cells.
    """

    columns: tuple[str, ...]
    kinds: tuple[str, ...]
    features: dict
    target: np.ndarray
    task: str

    @property
    def n(self) -> int:
        return self.target.shape[0]

    def take(self, rows) -> "RawTable":
        rows = np.asarray(rows)
        feats = {c: v[rows] for c, v in self.features.items()}
        return RawTable(self.columns, self.kinds, feats, self.target[rows], self.task)


def _to_float(cell: str) -> float:
    cell = cell.strip()
    if not cell:
        return math.nan
    try:
        return float(cell)
    except ValueError:
        return math.nan


def load_csv(path, spec: TableSpec) -> RawTable:
    """Read a headed, comma-separated UTF-8 file.

    Rows whose field count differs from the header raise
    :class:`CsvFormatError` with the line number. Empty or unparseable
    numeric cells become missing values; rows with a missing target are
    dropped with a warning.
    """
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError("empty file (header row required)", 1) from None
        if spec.target not in header:
            raise CsvFormatError(f"target column {spec.target!r} not in header", 1)
        columns = tuple(spec.columns) if spec.columns is not None else tuple(
            h for h in header if h != spec.target)
        missing = [c for c in columns if c not in header]
        if missing:
            raise CsvFormatError(f"columns not in header: {', '.join(missing)}", 1)
        if not columns:
            raise CsvFormatError("no feature columns", 1)
        pos = {h: i for i, h in enumerate(header)}
        rows = []
        for record in reader:
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise CsvFormatError(
                    f"expected {len(header)} fields, found {len(record)}", reader.line_num)
            rows.append(record)
    feats = {}
    for c in columns:
        cells = [r[pos[c]] for r in rows]
        if spec.kind(c) == "numeric":
            feats[c] = np.array([_to_float(v) for v in cells], dtype=float)
        else:
            feats[c] = np.array([v.strip() or None for v in cells], dtype=object)
    tcells = [r[pos[spec.target]].strip() for r in rows]
    if spec.task == "regress":
        target = np.array([_to_float(v) for v in tcells], dtype=float)
        keep = ~np.isnan(target)
    else:
        target = np.array([v or None for v in tcells], dtype=object)
        keep = np.array([v is not None for v in target], dtype=bool)
    if not np.all(keep):
        warnings.warn(f"{path.name}: dropped {int((~keep).sum())} rows with a missing target",
                      RuntimeWarning, stacklevel=2)
        feats = {c: v[keep] for c, v in feats.items()}
        target = target[keep]
    kinds = tuple(spec.kind(c) for c in columns)
    return RawTable(columns, kinds, feats, target, spec.task)


def table_from_arrays(X, y, task: Task = "classify") -> RawTable:
    """Wrap numeric arrays (for instance a synthetic generator) as a raw table."""
    X = np.asarray(X, dtype=float)
    columns = tuple(f"x{j + 1}" for j in range(X.shape[1]))
    feats = {c: X[:, j].copy() for j, c in enumerate(columns)}
    target = np.asarray(y) if task == "regress" else np.asarray(y).astype(object)
    if task == "regress":
        target = target.astype(float)
    return RawTable(columns, ("numeric",) * X.shape[1], feats, target, task)


@dataclass(frozen=True)
class PreprocessState:
    """Statistics fitted on the training split only.

    ``numeric[c] = (mean, std, min, max)``: ``mean`` imputes and centres,
    ``std`` scales, and ``min``/``max`` are those of the standardized train
    column. ``categorical[c] = (mode, categories)``.
    """

    numeric: dict
    categorical: dict
    order: tuple[str, ...]
    classes: tuple | None
    dropped: tuple[str, ...] = ()

    def feature_names(self) -> list[str]:
        names = []
        for c in self.order:
            if c in self.numeric:
                names.append(c)
            else:
                names.extend(f"{c}={v}" for v in self.categorical[c][1])
        return names

    def to_json(self) -> str:
        return json.dumps({
            "numeric": {c: list(v) for c, v in self.numeric.items()},
            "categorical": {c: [m, list(cats)] for c, (m, cats) in self.categorical.items()},
            "order": list(self.order),
            "classes": None if self.classes is None else list(self.classes),
            "dropped": list(self.dropped),
        }, sort_keys=True)

    def transform(self, raw: RawTable, clip: bool = True) -> tuple[np.ndarray, np.ndarray]:
        blocks = []
        for c in self.order:
            col = raw.features[c]
            if c in self.numeric:
                mean, std, lo, hi = self.numeric[c]
                v = np.where(np.isnan(col), mean, col)
                z = (v - mean) / std if std > 0 else np.zeros_like(v)
                span = hi - lo
                u = (z - lo) / span if span > 0 else np.zeros_like(z)
                blocks.append(np.clip(u, 0.0, 1.0) if clip else u)
            else:
                mode, cats = self.categorical[c]
                v = np.array([mode if x is None else x for x in col], dtype=object)
                blocks.append(np.column_stack([(v == k).astype(float) for k in cats]))
        X = np.column_stack(blocks) if blocks else np.zeros((raw.n, 0))
        if self.classes is None:
            y = raw.target.astype(float)
        else:
            index = {k: i for i, k in enumerate(self.classes)}
            unknown = sorted({str(t) for t in raw.target if t not in index})
            if unknown:
                raise ValueError(f"labels not seen in training: {', '.join(unknown)}")
            y = np.array([index[t] for t in raw.target], dtype=float)
        return X, y


def fit_preprocess(train: RawTable) -> PreprocessState:
    """Fit imputation, encoding and scaling statistics on ``train``."""
    if train.n < 1:
        raise ValueError("training split is empty")
    numeric, categorical, order, dropped = {}, {}, [], []
    for c, kind in zip(train.columns, train.kinds):
        col = train.features[c]
        if kind == "numeric":
            ok = ~np.isnan(col)
            if not ok.any():
                warnings.warn(f"column {c!r} is entirely missing; dropped", RuntimeWarning, stacklevel=2)
                dropped.append(c)
                continue
            mean = float(col[ok].mean())
            v = np.where(ok, col, mean)
            std = float(v.std())
            z = (v - mean) / std if std > 0 else np.zeros_like(v)
            numeric[c] = (mean, std, float(z.min()), float(z.max()))
        else:
            present = [x for x in col if x is not None]
            if not present:
                warnings.warn(f"column {c!r} is entirely missing; dropped", RuntimeWarning, stacklevel=2)
                dropped.append(c)
                continue
            cats, counts = np.unique(np.array(present, dtype=str), return_counts=True)
            mode = str(cats[np.argmax(counts)])
            categorical[c] = (mode, tuple(str(k) for k in cats))
        order.append(c)
    if not order:
        raise ValueError("no usable feature columns")
    classes = None
    if train.task == "classify":
        classes = tuple(sorted({str(t) for t in train.target}))
    return PreprocessState(numeric, categorical, tuple(order), classes, tuple(dropped))


def _stringify(raw: RawTable) -> RawTable:
    feats = {c: (v if k == "numeric" else np.array([None if x is None else str(x) for x in v], dtype=object))
             for (c, v), k in zip(raw.features.items(), raw.kinds)}
    target = raw.target if raw.task == "regress" else np.array([str(t) for t in raw.target], dtype=object)
    return RawTable(raw.columns, raw.kinds, feats, target, raw.task)


def preprocess_fit_transform(train: RawTable, test: RawTable, spec: TableSpec | None = None
                             ) -> tuple[Dataset, Dataset, PreprocessState]:
    """Fit preprocessing on ``train`` and apply it to both splits.

    Test values are clipped into ``[0, 1]``; unseen test categories give an
    all-zero indicator block.
    """
    train, test = _stringify(train), _stringify(test)
    state = fit_preprocess(train)
    Xtr, ytr = state.transform(train)
    Xte, yte = state.transform(test)
    return Dataset(Xtr, ytr), Dataset(Xte, yte), state
