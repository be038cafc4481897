"""Columnar datasets with typed schemas.

A Dataset is a small column-major table: one float64 array per column plus a
schema describing each column's role (covariate, treatment, mediator, outcome)
and support (binary, categorical with levels, real). CSV export writes a
sidecar JSON document holding the schema so files round-trip losslessly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError

ROLES = ("covariate", "treatment", "mediator", "outcome")
SUPPORTS = ("binary", "categorical", "real")


@dataclass(frozen=True)
class Column:
    """Schema entry for one column."""

    name: str
    role: str
    support: str = "real"
    levels: tuple = ()

    def __post_init__(self):
        if self.role not in ROLES:
            raise SchemaError(f"unknown role {self.role!r} for column {self.name!r}")
        if self.support not in SUPPORTS:
            raise SchemaError(f"unknown support {self.support!r} for column {self.name!r}")
        if self.support == "binary":
            object.__setattr__(self, "levels", (0.0, 1.0))
        elif self.support == "categorical":
            if len(self.levels) < 2:
                raise SchemaError(f"categorical column {self.name!r} needs >= 2 levels")
            object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))

    @property
    def is_discrete(self) -> bool:
        return self.support in ("binary", "categorical")

    def admits(self, value) -> bool:
        """Whether a constant lies in this column's declared support."""
        if self.is_discrete:
            return float(value) in self.levels
        return np.isfinite(value)

    def to_dict(self) -> dict:
        d = {"name": self.name, "role": self.role, "support": self.support}
        if self.support == "categorical":
            d["levels"] = list(self.levels)
        return d

    @staticmethod
    def from_dict(d: dict) -> "Column":
        return Column(d["name"], d["role"], d.get("support", "real"),
                      tuple(d.get("levels", ())))


@dataclass
class Dataset:
    """Immutable-by-convention columnar table of observations."""

    schema: tuple[Column, ...]
    columns: dict[str, np.ndarray]
    seed: int | None = None
    n: int = field(init=False)

    def __post_init__(self):
        self.schema = tuple(self.schema)
        names = [c.name for c in self.schema]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate column names in schema")
        if set(names) != set(self.columns):
            raise SchemaError("schema columns and data columns disagree")
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) != 1:
            raise SchemaError("columns have unequal lengths")
        self.n = lengths.pop()
        if self.n < 1:
            raise SchemaError("dataset must contain at least one row")
        for col in self.schema:
            values = np.asarray(self.columns[col.name], dtype=np.float64)
            if not np.all(np.isfinite(values)):
                raise SchemaError(f"column {col.name!r} contains non-finite values")
            if col.is_discrete and not np.isin(values, col.levels).all():
                raise SchemaError(f"column {col.name!r} has values outside its declared support")
            self.columns[col.name] = values

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"dataset has no column {name!r}") from None

    def column_def(self, name: str) -> Column:
        for col in self.schema:
            if col.name == name:
                return col
        raise SchemaError(f"dataset has no column {name!r}")

    @property
    def outcome(self) -> Column:
        outcomes = [c for c in self.schema if c.role == "outcome"]
        if len(outcomes) != 1:
            raise SchemaError(f"expected exactly one outcome column, found {len(outcomes)}")
        return outcomes[0]

    def subset(self, mask_or_index: np.ndarray) -> "Dataset":
        cols = {k: v[mask_or_index] for k, v in self.columns.items()}
        return Dataset(self.schema, cols, seed=self.seed)

    # -- CSV + schema sidecar -------------------------------------------------

    def to_csv(self, path, schema_path=None) -> None:
        """Write rows as CSV (comma, '.' decimal, header, LF, UTF-8) plus a
        JSON schema sidecar (default: path with a .schema.json suffix)."""
        names = [c.name for c in self.schema]
        arrays = [self.columns[c.name] for c in self.schema]
        discrete = [c.is_discrete for c in self.schema]
        lines = [",".join(names)]
        for i in range(self.n):
            cells = []
            for arr, disc in zip(arrays, discrete):
                v = arr[i]
                cells.append(str(int(v)) if disc else repr(float(v)))
            lines.append(",".join(cells))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(self._sidecar(path, schema_path), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(self.schema_dict(), fh, indent=2)
            fh.write("\n")

    def schema_dict(self) -> dict:
        return {
            "columns": [c.to_dict() for c in self.schema],
            "n": self.n,
            "seed": self.seed,
        }

    @staticmethod
    def _sidecar(path, schema_path):
        return schema_path if schema_path is not None else f"{path}.schema.json"

    @staticmethod
    def from_csv(path, schema_path=None) -> "Dataset":
        with open(Dataset._sidecar(path, schema_path), encoding="utf-8") as fh:
            meta = json.load(fh)
        schema = tuple(Column.from_dict(d) for d in meta["columns"])
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            raw = np.loadtxt(fh, delimiter=",", dtype=np.float64, ndmin=2)
        expected = [c.name for c in schema]
        if header != expected:
            raise SchemaError(f"CSV header {header} does not match schema columns {expected}")
        cols = {name: raw[:, j].copy() for j, name in enumerate(header)}
        return Dataset(schema, cols, seed=meta.get("seed"))

    def sha256(self) -> str:
        """Content hash over schema and column bytes, for provenance blocks."""
        import hashlib

        h = hashlib.sha256()
        h.update(json.dumps(self.schema_dict(), sort_keys=True).encode())
        for col in self.schema:
            h.update(np.ascontiguousarray(self.columns[col.name]).tobytes())
        return h.hexdigest()
