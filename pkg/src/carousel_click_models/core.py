"""Domain types shared by every other module.

Records are stored column-wise in numpy arrays. Row and column indices are
1-based at the public surface; ``Dataset.pos`` holds the flat 0-based cell
index ``(row - 1) * cols + (col - 1)`` used internally for bincount sums.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

EPS = 1e-6
"""Learned parameters live in [EPS, 1 - EPS]."""


class InvalidRecordError(ValueError):
    """A record breaks click => examined or click => impressed."""


class UnknownItemError(KeyError):
    """The item id is not part of the dataset catalog."""


class EmptyIndexError(LookupError):
    """The item is in the catalog but has no records (e.g. after filtering)."""


class PositionError(IndexError):
    """A (row, col) pair lies outside the carousel layout."""


def clip(p):
    """Clip a probability (scalar or array) into [EPS, 1 - EPS].

    >>> clip(0.0)
    1e-06
    """
    arr = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"cannot clip non-finite value(s): {p!r}")
    out = np.clip(arr, EPS, 1.0 - EPS)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class CarouselLayout:
    rows: int = 10
    cols: int = 15
    visible_set_size: int = 5
    swipe_sets: int = 3

    def __post_init__(self):
        for name in ("rows", "cols", "visible_set_size", "swipe_sets"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.cols != self.visible_set_size * self.swipe_sets:
            raise ValueError(
                f"cols ({self.cols}) must equal visible_set_size * swipe_sets "
                f"({self.visible_set_size} * {self.swipe_sets})"
            )

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @classmethod
    def single_set(cls, rows: int, cols: int) -> "CarouselLayout":
        """Layout without swiping: every column is visible at once."""
        return cls(rows=rows, cols=cols, visible_set_size=cols, swipe_sets=1)

    def check(self, row: int, col: int) -> None:
        if not (1 <= row <= self.rows and 1 <= col <= self.cols):
            raise PositionError(
                f"position ({row}, {col}) outside {self.rows}x{self.cols} layout"
            )

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "visible_set_size": self.visible_set_size,
            "swipe_sets": self.swipe_sets,
        }


REFERENCE_LAYOUT = CarouselLayout(rows=10, cols=15, visible_set_size=5, swipe_sets=3)


class InteractionRecord(NamedTuple):
    session: str
    item: str
    row: int
    col: int
    click: int
    examined: int
    impressed: int = 1


def check_record(rec: InteractionRecord) -> None:
    if rec.click and not rec.examined:
        raise InvalidRecordError(f"clicked but not examined: {rec}")
    if rec.click and not rec.impressed:
        raise InvalidRecordError(f"clicked but not impressed: {rec}")


def _as_flags(values, name: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} flags must be 0/1")
    return arr.astype(np.int8)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store of interaction records.

    Construction validates positions, the click => examined / impressed
    implications and uniqueness of (session, row, col). Index sets are
    computed lazily once and cached.
    """

    layout: CarouselLayout
    session: np.ndarray
    item: np.ndarray
    row: np.ndarray
    col: np.ndarray
    click: np.ndarray
    examined: np.ndarray
    impressed: np.ndarray
    catalog: frozenset | None = None
    stage_counts: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.session)
        set_ = object.__setattr__
        set_(self, "session", np.asarray(self.session).astype(str))
        set_(self, "item", np.asarray(self.item).astype(str))
        set_(self, "row", np.asarray(self.row, dtype=np.int64))
        set_(self, "col", np.asarray(self.col, dtype=np.int64))
        set_(self, "click", _as_flags(self.click, "click"))
        set_(self, "examined", _as_flags(self.examined, "examined"))
        set_(self, "impressed", _as_flags(self.impressed, "impressed"))
        set_(self, "stage_counts", MappingProxyType(dict(self.stage_counts)))
        for name in ("item", "row", "col", "click", "examined", "impressed"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name!r} has wrong length")
        bad = (self.row < 1) | (self.row > self.layout.rows)
        bad |= (self.col < 1) | (self.col > self.layout.cols)
        if bad.any():
            t = int(np.flatnonzero(bad)[0])
            raise PositionError(
                f"record {t}: position ({self.row[t]}, {self.col[t]}) outside "
                f"{self.layout.rows}x{self.layout.cols} layout"
            )
        for flag in ("examined", "impressed"):
            bad = (self.click == 1) & (getattr(self, flag) == 0)
            if bad.any():
                t = int(np.flatnonzero(bad)[0])
                raise InvalidRecordError(
                    f"{int(bad.sum())} record(s) clicked but not {flag}; first is "
                    f"record {t} (session {self.session[t]}, item {self.item[t]})"
                )
        if n:
            key = self.session_codes * self.layout.n_cells + self.pos
            if len(np.unique(key)) != n:
                raise ValueError("duplicate (session, row, col) records")

    @classmethod
    def from_records(cls, records: Iterable[Sequence], layout: CarouselLayout = REFERENCE_LAYOUT,
                     **kwargs) -> "Dataset":
        recs = [InteractionRecord(*r) for r in records]
        cols = list(zip(*recs)) if recs else [[]] * 7
        return cls(layout, *[np.asarray(c) for c in cols], **kwargs)

    def __len__(self) -> int:
        return len(self.session)

    def __iter__(self):
        return iter(self.records)

    @property
    def records(self) -> list[InteractionRecord]:
        return [
            InteractionRecord(s, u, int(i), int(j), int(c), int(e), int(m))
            for s, u, i, j, c, e, m in zip(
                self.session, self.item, self.row, self.col,
                self.click, self.examined, self.impressed,
            )
        ]

    # -- index machinery -------------------------------------------------

    @cached_property
    def _session_index(self):
        return np.unique(self.session, return_inverse=True)

    @cached_property
    def _item_index(self):
        return np.unique(self.item, return_inverse=True)

    @property
    def sessions(self) -> np.ndarray:
        """Sorted unique session ids."""
        return self._session_index[0]

    @property
    def session_codes(self) -> np.ndarray:
        return self._session_index[1].astype(np.int64)

    @property
    def items(self) -> np.ndarray:
        """Sorted unique ids of items that have at least one record."""
        return self._item_index[0]

    @property
    def item_codes(self) -> np.ndarray:
        return self._item_index[1].astype(np.int64)

    @cached_property
    def pos(self) -> np.ndarray:
        return (self.row - 1) * self.layout.cols + (self.col - 1)

    @property
    def n_sessions(self) -> int:
        return len(self.sessions)

    @cached_property
    def item_counts(self) -> np.ndarray:
        return np.bincount(self.item_codes, minlength=len(self.items))

    @cached_property
    def cell_counts(self) -> np.ndarray:
        """Records per cell as a rows x cols integer grid."""
        counts = np.bincount(self.pos, minlength=self.layout.n_cells)
        return counts.reshape(self.layout.rows, self.layout.cols)

    @cached_property
    def _item_positions(self) -> dict:
        order = np.argsort(self.item_codes, kind="stable")
        bounds = np.cumsum(np.concatenate([[0], self.item_counts]))
        return {
            u: order[bounds[k]:bounds[k + 1]] for k, u in enumerate(self.items)
        }

    @cached_property
    def _cell_positions(self) -> list:
        order = np.argsort(self.pos, kind="stable")
        counts = self.cell_counts.ravel()
        bounds = np.cumsum(np.concatenate([[0], counts]))
        return [order[bounds[k]:bounds[k + 1]] for k in range(len(counts))]

    @property
    def max_clicks_per_session(self) -> int:
        if not len(self):
            return 0
        return int(np.bincount(self.session_codes, weights=self.click).max())

    # -- derived datasets ------------------------------------------------

    def select(self, mask, stage: str | None = None) -> "Dataset":
        """Return the records where ``mask`` holds (a boolean array or indices)."""
        mask = np.asarray(mask)
        counts = dict(self.stage_counts)
        if stage is not None:
            counts[stage] = int(mask.sum() if mask.dtype == bool else len(mask))
        return Dataset(
            self.layout, self.session[mask], self.item[mask], self.row[mask],
            self.col[mask], self.click[mask], self.examined[mask], self.impressed[mask],
            catalog=self.catalog, stage_counts=counts,
        )

    def with_sessions(self, session_ids) -> "Dataset":
        return self.select(np.isin(self.session, np.asarray(list(session_ids)).astype(str)))

    def with_stage_counts(self, **counts: int) -> "Dataset":
        merged = {**self.stage_counts, **counts}
        return Dataset(
            self.layout, self.session, self.item, self.row, self.col, self.click,
            self.examined, self.impressed, catalog=self.catalog, stage_counts=merged,
        )


def index_by_item(dataset: Dataset, item) -> list[int]:
    """Indices of the records of ``item``, in record order."""
    key = str(item)
    hit = dataset._item_positions.get(key)
    if hit is None:
        if dataset.catalog is not None and key in dataset.catalog:
            raise EmptyIndexError(f"item {key!r} has no records in this dataset")
        raise UnknownItemError(key)
    return hit.tolist()


def index_by_position(dataset: Dataset, row: int, col: int) -> list[int]:
    """Indices of the records displayed at (row, col), 1-based, in record order."""
    dataset.layout.check(row, col)
    return dataset._cell_positions[(row - 1) * dataset.layout.cols + (col - 1)].tolist()


@dataclass(frozen=True)
class ItemAttraction:
    """Attraction probability per item id."""

    table: Mapping[str, float]

    def __post_init__(self):
        object.__setattr__(
            self, "table", MappingProxyType({str(k): float(v) for k, v in self.table.items()})
        )

    @classmethod
    def from_arrays(cls, items, values) -> "ItemAttraction":
        return cls(dict(zip(np.asarray(items).astype(str).tolist(), np.asarray(values, float).tolist())))

    @classmethod
    def constant(cls, items, value: float) -> "ItemAttraction":
        return cls({str(u): value for u in items})

    def __getitem__(self, item) -> float:
        return self.table[str(item)]

    def __len__(self) -> int:
        return len(self.table)

    def __contains__(self, item) -> bool:
        return str(item) in self.table

    def array(self, items, default: float | None = None) -> np.ndarray:
        """Values aligned with ``items``; missing ids use ``default`` or raise."""
        out = np.empty(len(items))
        missing = []
        for k, u in enumerate(items):
            v = self.table.get(str(u), default)
            if v is None:
                missing.append(u)
                v = math.nan
            out[k] = v
        if missing:
            raise KeyError(f"no attraction for {len(missing)} item(s), e.g. {missing[:5]}")
        return out

    def per_record(self, dataset: Dataset, default: float | None = None) -> np.ndarray:
        return self.array(dataset.items, default)[dataset.item_codes]


@dataclass(frozen=True, eq=False)
class PositionGrid:
    """Examination probability per (row, col) cell."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("position grid must be 2-D")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        return isinstance(other, PositionGrid) and np.array_equal(self.values, other.values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def at(self, row: int, col: int) -> float:
        rows, cols = self.values.shape
        if not (1 <= row <= rows and 1 <= col <= cols):
            raise PositionError(f"position ({row}, {col}) outside {rows}x{cols} grid")
        return float(self.values[row - 1, col - 1])

    def as_grid(self) -> np.ndarray:
        return self.values

    def to_rowcol(self) -> "RowCol":
        """Row means and column means of the grid."""
        return RowCol(self.values.mean(axis=1), self.values.mean(axis=0))


@dataclass(frozen=True, eq=False)
class RowCol:
    """Factored examination: row vector times column vector."""

    rows: np.ndarray
    cols: np.ndarray

    def __post_init__(self):
        for name in ("rows", "cols"):
            v = np.array(getattr(self, name), dtype=float)
            if v.ndim != 1:
                raise ValueError(f"{name} must be 1-D")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def __eq__(self, other):
        return (isinstance(other, RowCol) and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.cols, other.cols))

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.cols)

    def as_grid(self) -> np.ndarray:
        return np.outer(self.rows, self.cols)


@dataclass(frozen=True)
class Termination:
    """Single termination probability shared by every examined, unattractive item."""

    t: float

    def __post_init__(self):
        object.__setattr__(self, "t", clip(self.t))


ExaminationParams = PositionGrid | RowCol | Termination
