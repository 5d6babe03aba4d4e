"""Typed mixed datasets, schema-driven CSV I/O and the rank-probit column expansion."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

KINDS = ("continuous", "count", "ordinal", "categorical")
NUMERIC_KINDS = ("continuous", "count", "ordinal")
MISSING_TOKENS = ("", "NA")


class SchemaError(ValueError):
    """Schema file is malformed or a cell violates the declared schema."""


class DataFormatError(ValueError):
    """CSV rows or tokens cannot be parsed."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    levels: tuple[str, ...] = ()
    support_lo: float | None = None
    support_hi: float | None = None
    as_orthant: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind in ("categorical", "ordinal"):
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"column {self.name!r}: duplicate levels")
            if self.kind == "categorical" and len(self.levels) < 2:
                raise SchemaError(f"column {self.name!r}: categorical needs >= 2 levels")
            if self.kind == "ordinal" and len(self.levels) < 1:
                raise SchemaError(f"column {self.name!r}: ordinal needs levels")
        if self.kind == "count" and self.support_lo is None:
            object.__setattr__(self, "support_lo", 0.0)
        if (self.support_lo is not None and self.support_hi is not None
                and not self.support_lo < self.support_hi):
            raise SchemaError(f"column {self.name!r}: support_lo must be < support_hi")
        if self.as_orthant and self.kind != "ordinal":
            raise SchemaError(f"column {self.name!r}: as_orthant only applies to ordinal")

    @property
    def is_numeric(self) -> bool:
        """True when the column enters the rank likelihood."""
        return self.kind in ("continuous", "count") or (self.kind == "ordinal" and not self.as_orthant)

    @property
    def is_discrete(self) -> bool:
        return self.kind in ("count", "ordinal")

    def to_json(self) -> dict:
        out: dict = {"name": self.name, "kind": self.kind}
        if self.levels:
            out["levels"] = list(self.levels)
        if self.kind in ("continuous", "count") and (self.support_lo is not None or self.support_hi is not None):
            out["support"] = [self.support_lo, self.support_hi]
        if self.as_orthant:
            out["as_orthant"] = True
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ColumnSpec":
        try:
            name, kind = obj["name"], obj["kind"]
        except KeyError as exc:
            raise SchemaError(f"schema column missing field {exc}") from None
        support = obj.get("support") or [None, None]
        if len(support) != 2:
            raise SchemaError(f"column {name!r}: support must be [lo, hi]")
        lo, hi = (None if s is None else float(s) for s in support)
        return cls(name=name, kind=kind, levels=tuple(str(v) for v in obj.get("levels", [])),
                   support_lo=lo, support_hi=hi, as_orthant=bool(obj.get("as_orthant", False)))


@dataclass
class MixedDataset:
    """An n x p table of typed cells with a missingness mask.

    ``cells`` holds reals for numeric kinds and level indices (stored as floats)
    for ordinal/categorical kinds; missing cells are NaN and ``mask`` is True there.
    """

    schema: list[ColumnSpec]
    cells: np.ndarray
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=float)
        if self.cells.ndim != 2 or self.cells.shape[1] != len(self.schema):
            raise SchemaError("cells must be n x p matching the schema")
        if self.mask is None:
            self.mask = np.isnan(self.cells)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.cells = np.where(self.mask, np.nan, self.cells)
        self.validate()

    @property
    def n(self) -> int:
        return self.cells.shape[0]

    @property
    def p(self) -> int:
        return self.cells.shape[1]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.schema]

    def column_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no column named {name!r}") from None

    def validate(self) -> None:
        if np.isnan(self.cells[~self.mask]).any():
            raise SchemaError("observed cell holds NaN")
        for j, spec in enumerate(self.schema):
            col = self.cells[~self.mask[:, j], j]
            if spec.kind in ("ordinal", "categorical"):
                bad = (col != np.round(col)) | (col < 0) | (col >= len(spec.levels))
                if bad.any():
                    raise SchemaError(f"column {spec.name!r}: invalid level index {col[bad][0]}")
            else:
                if spec.support_lo is not None and (col < spec.support_lo).any():
                    raise SchemaError(f"column {spec.name!r}: value below support {spec.support_lo}")
                if spec.support_hi is not None and (col > spec.support_hi).any():
                    raise SchemaError(f"column {spec.name!r}: value above support {spec.support_hi}")

    def complete_rows(self) -> np.ndarray:
        return ~self.mask.any(axis=1)

    def subset_rows(self, rows) -> "MixedDataset":
        return MixedDataset(self.schema, self.cells[rows], self.mask[rows])

    def copy(self) -> "MixedDataset":
        return MixedDataset(list(self.schema), self.cells.copy(), self.mask.copy())

    def level_labels(self, j: int) -> list[str | None]:
        levels = self.schema[j].levels
        return [None if m else levels[int(v)] for v, m in zip(self.cells[:, j], self.mask[:, j])]

    def schema_hash(self) -> str:
        blob = json.dumps(schema_to_json(self.schema), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def schema_to_json(schema: Sequence[ColumnSpec]) -> dict:
    return {"columns": [c.to_json() for c in schema]}


def load_schema(path) -> list[ColumnSpec]:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema {path}: {exc}") from None
    if not isinstance(obj, dict) or "columns" not in obj:
        raise SchemaError(f"schema {path}: expected an object with 'columns'")
    return [ColumnSpec.from_json(c) for c in obj["columns"]]


def write_schema(schema: Sequence[ColumnSpec], path) -> None:
    Path(path).write_text(json.dumps(schema_to_json(schema), indent=2) + "\n")


def _parse_cell(token: str, spec: ColumnSpec, row: int):
    if token in MISSING_TOKENS:
        return np.nan
    if spec.kind in ("ordinal", "categorical"):
        try:
            return float(spec.levels.index(token))
        except ValueError:
            raise SchemaError(f"row {row}, column {spec.name!r}: unknown level {token!r}") from None
    try:
        # float() is locale-independent; reject things like 'nan'/'inf' explicitly
        value = float(token)
    except ValueError:
        raise DataFormatError(f"row {row}, column {spec.name!r}: non-numeric token {token!r}") from None
    if not np.isfinite(value):
        raise DataFormatError(f"row {row}, column {spec.name!r}: non-finite token {token!r}")
    return value


def load_dataset(csv_path, schema_path) -> MixedDataset:
    """Read a CSV file against its JSON schema sidecar.

    Empty cells and the literal ``NA`` are missing; any other unparseable token
    raises. Row numbers in error messages are 1-based data rows.
    """
    schema = load_schema(schema_path)
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{csv_path}: empty file") from None
        names = [c.name for c in schema]
        if header != names:
            raise SchemaError(f"{csv_path}: header {header} does not match schema {names}")
        rows = []
        for r, tokens in enumerate(reader, start=1):
            if not tokens:
                continue
            if len(tokens) != len(schema):
                raise DataFormatError(f"row {r}: expected {len(schema)} fields, got {len(tokens)}")
            rows.append([_parse_cell(t.strip(), s, r) for t, s in zip(tokens, schema)])
    cells = np.array(rows, dtype=float).reshape(len(rows), len(schema))
    return MixedDataset(schema, cells)


def _format_cell(value: float, spec: ColumnSpec) -> str:
    if np.isnan(value):
        return "NA"
    if spec.kind in ("ordinal", "categorical"):
        return spec.levels[int(value)]
    if spec.kind == "count" and float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def write_dataset(data: MixedDataset, csv_path) -> None:
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(data.names)
        for i in range(data.n):
            writer.writerow([_format_cell(data.cells[i, j], s) for j, s in enumerate(data.schema)])


@dataclass(frozen=True)
class LatentColumn:
    """One column of the augmented latent matrix."""

    var: int
    level: int | None  # level indicated, for categorical sources; None otherwise
    kind: str  # "rank", "binary" or "orthant"


@dataclass
class AugmentedView:
    """Mapping from the p observed variables to the p* latent columns.

    ``gamma`` is an n x p* int8 matrix: 1/0 for categorical indicators, -1 where
    the indicator is unset (missing cell) or the column is a rank column.
    """

    col_map: list[LatentColumn]
    gamma: np.ndarray

    @property
    def p_star(self) -> int:
        return len(self.col_map)

    def columns_of(self, var: int) -> list[int]:
        return [j for j, c in enumerate(self.col_map) if c.var == var]

    def variable_groups(self) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = {}
        for j, c in enumerate(self.col_map):
            groups.setdefault(c.var, []).append(j)
        return groups


def expand_rpl(data: MixedDataset) -> AugmentedView:
    """Expand variables into latent columns.

    Numeric variables (and ordinal ones not flagged ``as_orthant``) get one rank
    column; two-level categoricals get one sign-coded column whose positive
    orthant means the second level; categoricals with k >= 3 levels get k
    diagonal-orthant indicator columns.
    """
    col_map: list[LatentColumn] = []
    gamma_cols = []
    for v, spec in enumerate(data.schema):
        col = data.cells[:, v]
        miss = data.mask[:, v]
        if spec.is_numeric:
            col_map.append(LatentColumn(v, None, "rank"))
            gamma_cols.append(np.full(data.n, -1, dtype=np.int8))
        elif len(spec.levels) == 2:
            col_map.append(LatentColumn(v, 1, "binary"))
            g = np.where(miss, -1, (np.nan_to_num(col) == 1)).astype(np.int8)
            gamma_cols.append(g)
        else:
            for m in range(len(spec.levels)):
                col_map.append(LatentColumn(v, m, "orthant"))
                g = np.where(miss, -1, (np.nan_to_num(col, nan=-1) == m)).astype(np.int8)
                gamma_cols.append(g)
    gamma = np.column_stack(gamma_cols) if gamma_cols else np.zeros((data.n, 0), dtype=np.int8)
    return AugmentedView(col_map, gamma)
