"""Click and examination probability kernels for the six carousel click models.

Every model factorises as P(click | i, j, u) = P(examination | i, j) * theta_u.
The cascade family (CM, TCM, CCM) derives examination from the attraction of
the items shown earlier in row-major order; the position-based family (CPBM,
RCPBM, OEPBM) learns it directly.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    EPS,
    CarouselLayout,
    Dataset,
    ItemAttraction,
    PositionError,
    PositionGrid,
    RowCol,
    Termination,
)


class ConfigurationError(ValueError):
    """Parameters, model kind and algorithm do not fit together."""


class ModelKind(str, enum.Enum):
    CM = "CM"
    TCM = "TCM"
    CCM = "CCM"
    CPBM = "CPBM"
    RCPBM = "RCPBM"
    OEPBM = "OEPBM"

    @property
    def is_cascade(self) -> bool:
        return self in (ModelKind.CM, ModelKind.TCM, ModelKind.CCM)

    @property
    def exam_type(self):
        return _EXAM_TYPES[self]


_EXAM_TYPES = {
    ModelKind.CM: type(None),
    ModelKind.TCM: Termination,
    ModelKind.CCM: Termination,
    ModelKind.CPBM: PositionGrid,
    ModelKind.OEPBM: PositionGrid,
    ModelKind.RCPBM: RowCol,
}


@dataclass(frozen=True)
class SessionContext:
    """Attractions of the items displayed before (row, col) in cascade order.

    ``prior_attractions`` lists full rows 1..row-1 (all ``cols`` columns) and
    then columns 1..col-1 of the target row.
    """

    row: int
    col: int
    cols: int
    prior_attractions: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "prior_attractions", tuple(float(x) for x in self.prior_attractions))
        expected = (self.row - 1) * self.cols + (self.col - 1)
        if len(self.prior_attractions) != expected:
            raise ValueError(
                f"context for ({self.row}, {self.col}) with {self.cols} columns needs "
                f"{expected} prior attractions, got {len(self.prior_attractions)}"
            )

    @classmethod
    def from_screen(cls, thetas: np.ndarray, row: int, col: int) -> "SessionContext":
        """Build the context from a rows x cols grid of displayed attractions."""
        thetas = np.asarray(thetas, dtype=float)
        n = (row - 1) * thetas.shape[1] + (col - 1)
        return cls(row, col, thetas.shape[1], tuple(thetas.ravel()[:n]))


def exam_prob_cm(ctx: SessionContext) -> float:
    """Probability that every earlier item was unattractive."""
    prior = np.asarray(ctx.prior_attractions, dtype=float)
    if prior.size == 0:
        return 1.0
    with np.errstate(divide="ignore"):
        return float(np.exp(np.log1p(-prior).sum()))


def exam_prob_tcm(ctx: SessionContext, t: float, i: int, j: int, layout: CarouselLayout) -> float:
    exponent = (i - 1) * layout.cols + j - 1
    return (1.0 - t) ** exponent * exam_prob_cm(ctx)


def exam_prob_ccm(ctx: SessionContext, t: float, i: int, j: int) -> float:
    # t_row is identified with t, so row switches and within-row steps share one factor
    return (1.0 - t) ** (i + j - 2) * exam_prob_cm(ctx)


def exam_prob_position(w: PositionGrid, i: int, j: int) -> float:
    return w.at(i, j)


def exam_prob_rowcol(w_rows: Sequence[float], w_cols: Sequence[float], i: int, j: int) -> float:
    if not (1 <= i <= len(w_rows) and 1 <= j <= len(w_cols)):
        raise PositionError(f"position ({i}, {j}) outside {len(w_rows)}x{len(w_cols)} factors")
    return float(w_rows[i - 1]) * float(w_cols[j - 1])


def _check_params(kind: ModelKind, params) -> None:
    if not isinstance(params, kind.exam_type):
        raise ConfigurationError(
            f"{kind.value} needs {kind.exam_type.__name__} examination params, "
            f"got {type(params).__name__}"
        )


def exam_prob(kind: ModelKind, params, i: int, j: int, ctx: SessionContext | None = None,
              layout: CarouselLayout | None = None) -> float:
    kind = ModelKind(kind)
    _check_params(kind, params)
    if kind.is_cascade:
        if ctx is None:
            raise ConfigurationError(f"{kind.value} needs a session context")
        if (ctx.row, ctx.col) != (i, j):
            raise ConfigurationError("context does not belong to the requested position")
        if kind is ModelKind.CM:
            return exam_prob_cm(ctx)
        if kind is ModelKind.TCM:
            if layout is None:
                layout = CarouselLayout.single_set(i, ctx.cols)
            return exam_prob_tcm(ctx, params.t, i, j, layout)
        return exam_prob_ccm(ctx, params.t, i, j)
    if ctx is not None:
        raise ConfigurationError(f"{kind.value} takes no session context")
    if kind is ModelKind.RCPBM:
        return exam_prob_rowcol(params.rows, params.cols, i, j)
    return exam_prob_position(params, i, j)


def click_prob(kind: ModelKind, params, theta_u: float, position: tuple[int, int],
               ctx: SessionContext | None = None, layout: CarouselLayout | None = None) -> float:
    i, j = position
    return exam_prob(kind, params, i, j, ctx, layout) * theta_u


# -- vectorised evaluation over datasets --------------------------------------


def cascade_exponents(kind: ModelKind, dataset: Dataset) -> np.ndarray:
    """Number of termination factors per record for TCM/CCM (zeros for CM)."""
    if kind is ModelKind.TCM:
        return dataset.pos.astype(float)
    if kind is ModelKind.CCM:
        return (dataset.row + dataset.col - 2).astype(float)
    return np.zeros(len(dataset))


def cascade_products(dataset: Dataset, theta: np.ndarray) -> np.ndarray:
    """Per-record product of (1 - theta) over earlier cells of the same session.

    ``theta`` is the per-record attraction. Cells of a session without a record
    (filtered, never impressed) count with the floor value ``EPS``.
    """
    layout = dataset.layout
    grid = np.full((dataset.n_sessions, layout.n_cells), EPS)
    grid[dataset.session_codes, dataset.pos] = theta
    with np.errstate(divide="ignore"):
        logs = np.log1p(-grid)
    exclusive = np.cumsum(logs, axis=1) - logs
    return np.exp(exclusive[dataset.session_codes, dataset.pos])


@dataclass(frozen=True)
class ClickModel:
    """A parameterised click model."""

    kind: ModelKind
    attraction: ItemAttraction
    examination: PositionGrid | RowCol | Termination | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ModelKind(self.kind))
        _check_params(self.kind, self.examination)

    def attraction_per_record(self, dataset: Dataset) -> np.ndarray:
        return self.attraction.per_record(dataset)

    def examination_per_record(self, dataset: Dataset) -> np.ndarray:
        kind = self.kind
        if kind.is_cascade:
            theta = self.attraction.per_record(dataset, default=EPS)
            exam = cascade_products(dataset, theta)
            if kind is not ModelKind.CM:
                exam = exam * (1.0 - self.examination.t) ** cascade_exponents(kind, dataset)
            return exam
        grid = self.examination.as_grid()
        if grid.shape != (dataset.layout.rows, dataset.layout.cols):
            raise ConfigurationError(
                f"examination grid {grid.shape} does not match layout "
                f"{dataset.layout.rows}x{dataset.layout.cols}"
            )
        return grid.ravel()[dataset.pos]

    def click_per_record(self, dataset: Dataset) -> np.ndarray:
        return self.examination_per_record(dataset) * self.attraction_per_record(dataset)

    def screen_click_probs(self, screen_thetas: np.ndarray, layout: CarouselLayout) -> np.ndarray:
        """Closed-form click probability of every cell of one screen.

        ``screen_thetas`` is the rows x cols grid of displayed item attractions.
        """
        thetas = np.asarray(screen_thetas, dtype=float)
        if self.kind.is_cascade:
            flat = thetas.ravel()
            with np.errstate(divide="ignore"):
                logs = np.log1p(-flat)
            exam = np.exp(np.cumsum(logs) - logs).reshape(thetas.shape)
            if self.kind is not ModelKind.CM:
                i, j = np.indices(thetas.shape) + 1
                k = (i - 1) * layout.cols + j - 1 if self.kind is ModelKind.TCM else i + j - 2
                exam = exam * (1.0 - self.examination.t) ** k
            return exam * thetas
        return self.examination.as_grid() * thetas



def model_to_dict(model: ClickModel) -> dict:
    exam = model.examination
    out = {"kind": model.kind.value, "attraction": dict(sorted(model.attraction.table.items()))}
    if isinstance(exam, Termination):
        out["termination"] = exam.t
    elif isinstance(exam, PositionGrid):
        out["position_grid"] = exam.values.tolist()
    elif isinstance(exam, RowCol):
        out["row_factors"] = exam.rows.tolist()
        out["col_factors"] = exam.cols.tolist()
    return out


def model_from_dict(data: dict) -> ClickModel:
    kind = ModelKind(data["kind"])
    exam = None
    if "termination" in data:
        exam = Termination(data["termination"])
    elif "position_grid" in data:
        exam = PositionGrid(np.asarray(data["position_grid"], dtype=float))
    elif "row_factors" in data:
        exam = RowCol(data["row_factors"], data["col_factors"])
    return ClickModel(kind, ItemAttraction(data["attraction"]), exam)
