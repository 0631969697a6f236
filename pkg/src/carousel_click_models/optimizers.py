"""Fitting: closed-form MLE, EM for the CPBM and full-batch gradient ascent for
the CPBM, RCPBM and OEPBM, plus the termination grid search for cascades.

All iterative updates are synchronous: every right-hand side uses the
parameters of the previous iteration. Per-parameter gradients are averaged
over that parameter's record set. Parameters are clipped to [EPS, 1 - EPS]
after every step; cells, rows or columns without records keep their value.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import (
    Dataset,
    ItemAttraction,
    PositionGrid,
    RowCol,
    Termination,
    clip,
)
from .data import AttractionInit, DataError, ExaminationInit, init_attraction, init_examination
from .likelihoods import CLICK, OELL, LikelihoodReport, click_log_likelihood, evaluate
from .models import ClickModel, ConfigurationError, ModelKind, model_to_dict

log = logging.getLogger(__name__)

LEARNING_RATES = (0.001, 0.01, 0.1)
TERMINATION_GRID = tuple(round(0.01 * k, 2) for k in range(1, 101))
TIE_DECIMALS = 4


class Algorithm(str, enum.Enum):
    MLE = "MLE"
    EM = "EM"
    GA = "GA"


COMPATIBLE = {
    ModelKind.CM: {Algorithm.MLE},
    ModelKind.TCM: {Algorithm.MLE},
    ModelKind.CCM: {Algorithm.MLE},
    ModelKind.CPBM: {Algorithm.EM, Algorithm.GA},
    ModelKind.RCPBM: {Algorithm.GA},
    ModelKind.OEPBM: {Algorithm.MLE, Algorithm.GA},
}


def objective_kind(kind: ModelKind) -> str:
    return OELL if ModelKind(kind) is ModelKind.OEPBM else CLICK


@dataclass(frozen=True)
class FitConfig:
    model_kind: ModelKind
    algorithm: Algorithm
    learning_rate: float | None = None
    iterations: int = 100
    eval_checkpoints: tuple[int, ...] = (0, 50, 100)
    attraction_init: AttractionInit = AttractionInit.CTR
    examination_init: ExaminationInit = ExaminationInit.GAZE
    fixed_attraction: bool = False
    termination: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "model_kind", ModelKind(self.model_kind))
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        object.__setattr__(self, "attraction_init", AttractionInit(self.attraction_init))
        object.__setattr__(self, "examination_init", ExaminationInit(self.examination_init))
        object.__setattr__(self, "eval_checkpoints", tuple(sorted(set(self.eval_checkpoints))))

    @property
    def iterative(self) -> bool:
        return self.algorithm is not Algorithm.MLE

    def validate(self) -> None:
        kind, alg = self.model_kind, self.algorithm
        if alg not in COMPATIBLE[kind]:
            raise ConfigurationError(f"{kind.value} cannot be fit with {alg.value}")
        if alg is Algorithm.GA and (self.learning_rate is None or self.learning_rate <= 0):
            raise ConfigurationError("gradient ascent needs a positive learning_rate")
        if self.iterative:
            if self.iterations < 0:
                raise ConfigurationError("iterations must be non-negative")
            if any(c < 0 or c > self.iterations for c in self.eval_checkpoints):
                raise ConfigurationError(
                    f"checkpoints {self.eval_checkpoints} must lie in [0, {self.iterations}]"
                )
            if not self.eval_checkpoints:
                raise ConfigurationError("at least one evaluation checkpoint is needed")
        if self.fixed_attraction and self.attraction_init is not AttractionInit.CTR:
            raise ConfigurationError("fixed attraction is pinned to the train CTR")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("model_kind", "algorithm", "attraction_init", "examination_init"):
            d[key] = d[key].value
        d["eval_checkpoints"] = list(self.eval_checkpoints)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "FitConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown FitConfig field(s): {sorted(unknown)}")
        data = dict(data)
        if "eval_checkpoints" in data:
            data["eval_checkpoints"] = tuple(data["eval_checkpoints"])
        return cls(**data)

    def label(self) -> str:
        parts = [self.model_kind.value, self.algorithm.value]
        if self.iterative:
            parts += [self.attraction_init.label, self.examination_init.label]
        if self.learning_rate is not None:
            parts.append(f"lr={self.learning_rate:g}")
        return " ".join(parts)


@dataclass(frozen=True)
class Checkpoint:
    iteration: int
    model: ClickModel
    train: dict[str, LikelihoodReport]
    validation: dict[str, LikelihoodReport] | None = None
    test: dict[str, LikelihoodReport] | None = None


@dataclass(frozen=True)
class FitResult:
    config: FitConfig
    trace: tuple[Checkpoint, ...]
    best_checkpoint: int
    selected_on: str
    validation_best_checkpoint: int | None = None
    hyperparameters: dict = field(default_factory=dict)

    def checkpoint(self, iteration: int) -> Checkpoint:
        for cp in self.trace:
            if cp.iteration == iteration:
                return cp
        raise KeyError(iteration)

    @property
    def best(self) -> Checkpoint:
        return self.checkpoint(self.best_checkpoint)

    @property
    def model(self) -> ClickModel:
        return self.best.model

    @property
    def final_model(self) -> ClickModel:
        return self.trace[-1].model

    @property
    def params(self):
        return self.model.attraction, self.model.examination

    def to_dict(self) -> dict:
        def reports(rs):
            return None if rs is None else {k: r.to_dict() for k, r in sorted(rs.items())}

        return {
            "config": self.config.to_dict(),
            "hyperparameters": dict(self.hyperparameters),
            "best_checkpoint": self.best_checkpoint,
            "selected_on": self.selected_on,
            "validation_best_checkpoint": self.validation_best_checkpoint,
            "trace": [
                {"iteration": cp.iteration, "train": reports(cp.train),
                 "validation": reports(cp.validation), "test": reports(cp.test)}
                for cp in self.trace
            ],
            "model": model_to_dict(self.model),
        }


def pick_best(values: list[tuple[int, float]]) -> int:
    """Iteration with the highest value at the reported precision; ties go to
    the lower iteration."""
    best_it, best_val = None, -np.inf
    for it, val in sorted(values):
        v = round(val, TIE_DECIMALS)
        if v > best_val:
            best_it, best_val = it, v
    return best_it


# -- index helper ----------------------------------------------------------------


class _Index:
    """Per-record codes and group sizes used by every update rule."""

    def __init__(self, dataset: Dataset):
        layout = dataset.layout
        self.layout = layout
        self.items = dataset.items
        self.ic = dataset.item_codes
        self.pos = dataset.pos
        self.ri = dataset.row - 1
        self.cj = dataset.col - 1
        self.c = dataset.click.astype(float)
        self.e = dataset.examined.astype(float)
        self.n_item = np.bincount(self.ic, minlength=len(self.items)).astype(float)
        self.n_cell = np.bincount(self.pos, minlength=layout.n_cells).astype(float)
        self.n_row = np.bincount(self.ri, minlength=layout.rows).astype(float)
        self.n_col = np.bincount(self.cj, minlength=layout.cols).astype(float)

    @staticmethod
    def _mean(codes, x, n):
        s = np.bincount(codes, weights=x, minlength=len(n))
        return np.divide(s, n, out=np.zeros_like(s), where=n > 0)

    def item_mean(self, x):
        return self._mean(self.ic, x, self.n_item)

    def cell_mean(self, x):
        return self._mean(self.pos, x, self.n_cell)

    def row_mean(self, x):
        return self._mean(self.ri, x, self.n_row)

    def col_mean(self, x):
        return self._mean(self.cj, x, self.n_col)

    def theta(self, attraction: ItemAttraction) -> np.ndarray:
        return attraction.array(self.items)

    def wrap_theta(self, attraction: ItemAttraction, values: np.ndarray) -> ItemAttraction:
        table = dict(attraction.table)
        table.update(zip(self.items.tolist(), values.tolist()))
        return ItemAttraction(table)

    def check_grid(self, grid: np.ndarray) -> np.ndarray:
        shape = (self.layout.rows, self.layout.cols)
        if grid.shape != shape:
            raise ConfigurationError(f"grid shape {grid.shape} does not match layout {shape}")
        return grid.ravel()


def _update_cells(w, mean_or_step, n, absolute: bool):
    new = mean_or_step if absolute else w + mean_or_step
    return clip(np.where(n > 0, new, w))


# -- raw array updates ------------------------------------------------------------


def _cpbm_grads(ix: _Index, th, w):
    tt, wt = th[ix.ic], w[ix.pos]
    denom = 1.0 - wt * tt
    g_t = ix.c / tt - (1 - ix.c) * wt / denom
    g_w = ix.c / wt - (1 - ix.c) * tt / denom
    return ix.item_mean(g_t), ix.cell_mean(g_w)


def _rcpbm_grads(ix: _Index, th, rows, cols):
    tt, rt, ct = th[ix.ic], rows[ix.ri], cols[ix.cj]
    denom = 1.0 - rt * ct * tt
    g_t = ix.c / tt - (1 - ix.c) * rt * ct / denom
    g_r = ix.c / rt - (1 - ix.c) * tt * ct / denom
    g_c = ix.c / ct - (1 - ix.c) * tt * rt / denom
    return ix.item_mean(g_t), ix.row_mean(g_r), ix.col_mean(g_c)


def _oepbm_grads(ix: _Index, th, w):
    tt, wt = th[ix.ic], w[ix.pos]
    g_t = ix.c / tt - (1 - ix.c) * ix.e / (1 - tt)
    g_w = ix.c / wt + (1 - ix.c) * ix.e / wt - (1 - ix.c) * (1 - ix.e) / (1 - wt)
    return ix.item_mean(g_t), ix.cell_mean(g_w)


def _em_cpbm(ix: _Index, th, w, fixed):
    tt, wt = th[ix.ic], w[ix.pos]
    denom = 1.0 - wt * tt
    new_w = _update_cells(w, ix.cell_mean(ix.c + (1 - ix.c) * wt * (1 - tt) / denom), ix.n_cell, True)
    if fixed:
        return th, new_w
    new_t = _update_cells(th, ix.item_mean(ix.c + (1 - ix.c) * (1 - wt) * tt / denom), ix.n_item, True)
    return new_t, new_w


def _ga_cpbm(ix, th, w, lr, fixed):
    g_t, g_w = _cpbm_grads(ix, th, w)
    new_w = _update_cells(w, lr * g_w, ix.n_cell, False)
    return (th if fixed else _update_cells(th, lr * g_t, ix.n_item, False)), new_w


def _ga_oepbm(ix, th, w, lr, fixed):
    g_t, g_w = _oepbm_grads(ix, th, w)
    new_w = _update_cells(w, lr * g_w, ix.n_cell, False)
    return (th if fixed else _update_cells(th, lr * g_t, ix.n_item, False)), new_w


def _ga_rcpbm(ix, th, rows, cols, lr, fixed):
    g_t, g_r, g_c = _rcpbm_grads(ix, th, rows, cols)
    new_r = _update_cells(rows, lr * g_r, ix.n_row, False)
    new_c = _update_cells(cols, lr * g_c, ix.n_col, False)
    return (th if fixed else _update_cells(th, lr * g_t, ix.n_item, False)), new_r, new_c


# -- public gradients and steps -------------------------------------------------------


def cpbm_gradients(dataset: Dataset, attraction: ItemAttraction, grid: PositionGrid):
    """Average click-likelihood gradients: per item (aligned with
    ``dataset.items``) and per cell (rows x cols, zero for empty cells)."""
    ix = _Index(dataset)
    g_t, g_w = _cpbm_grads(ix, ix.theta(attraction), ix.check_grid(grid.values))
    return g_t, g_w.reshape(grid.shape)


def rcpbm_gradients(dataset: Dataset, attraction: ItemAttraction, rowcol: RowCol):
    ix = _Index(dataset)
    return _rcpbm_grads(ix, ix.theta(attraction), rowcol.rows, rowcol.cols)


def oepbm_gradients(dataset: Dataset, attraction: ItemAttraction, grid: PositionGrid):
    """Average OELL gradients per item and per cell."""
    ix = _Index(dataset)
    g_t, g_w = _oepbm_grads(ix, ix.theta(attraction), ix.check_grid(grid.values))
    return g_t, g_w.reshape(grid.shape)


def em_step_cpbm(dataset: Dataset, attraction: ItemAttraction, grid: PositionGrid,
                 fixed_attraction: bool = False) -> tuple[ItemAttraction, PositionGrid]:
    ix = _Index(dataset)
    th, w = _em_cpbm(ix, ix.theta(attraction), ix.check_grid(grid.values), fixed_attraction)
    return ix.wrap_theta(attraction, th), PositionGrid(w.reshape(grid.shape))


def ga_step_cpbm(dataset: Dataset, attraction: ItemAttraction, grid: PositionGrid, lr: float,
                 fixed_attraction: bool = False) -> tuple[ItemAttraction, PositionGrid]:
    ix = _Index(dataset)
    th, w = _ga_cpbm(ix, ix.theta(attraction), ix.check_grid(grid.values), lr, fixed_attraction)
    return ix.wrap_theta(attraction, th), PositionGrid(w.reshape(grid.shape))


def ga_step_rcpbm(dataset: Dataset, attraction: ItemAttraction, rowcol: RowCol, lr: float,
                  fixed_attraction: bool = False) -> tuple[ItemAttraction, RowCol]:
    ix = _Index(dataset)
    th, r, c = _ga_rcpbm(ix, ix.theta(attraction), rowcol.rows, rowcol.cols, lr, fixed_attraction)
    return ix.wrap_theta(attraction, th), RowCol(r, c)


def ga_step_oepbm(dataset: Dataset, attraction: ItemAttraction, grid: PositionGrid, lr: float,
                  fixed_attraction: bool = False) -> tuple[ItemAttraction, PositionGrid]:
    ix = _Index(dataset)
    th, w = _ga_oepbm(ix, ix.theta(attraction), ix.check_grid(grid.values), lr, fixed_attraction)
    return ix.wrap_theta(attraction, th), PositionGrid(w.reshape(grid.shape))


# -- closed forms -----------------------------------------------------------------


def mle_attraction(dataset: Dataset) -> ItemAttraction:
    """Per-item click rate over all of the item's records."""
    if not len(dataset):
        raise DataError("cannot estimate attraction from an empty dataset")
    clicks = np.bincount(dataset.item_codes, weights=dataset.click, minlength=len(dataset.items))
    return ItemAttraction.from_arrays(dataset.items, clip(clicks / dataset.item_counts))


def mle_examination(dataset: Dataset) -> PositionGrid:
    """Per-cell examination rate over all records at the cell."""
    layout = dataset.layout
    n = dataset.cell_counts.ravel()
    if (n == 0).any():
        cells = [(int(k) // layout.cols + 1, int(k) % layout.cols + 1) for k in np.flatnonzero(n == 0)]
        raise DataError(f"no records at cell(s) {cells[:10]}; examination MLE undefined")
    seen = np.bincount(dataset.pos, weights=dataset.examined, minlength=layout.n_cells)
    return PositionGrid(clip(seen / n).reshape(layout.rows, layout.cols))


def select_termination(train: Dataset, validation: Dataset, kind: ModelKind,
                       grid=TERMINATION_GRID) -> tuple[float, dict[float, float]]:
    """Grid-search t on the validation click likelihood, attraction by MLE on
    ``train``. Ties resolve to the smaller t."""
    kind = ModelKind(kind)
    if kind not in (ModelKind.TCM, ModelKind.CCM):
        raise ConfigurationError(f"{kind.value} has no termination parameter")
    attraction = mle_attraction(train)
    scores = {}
    for t in grid:
        model = ClickModel(kind, attraction, Termination(t))
        scores[t] = click_log_likelihood(validation, model).total
    best = max(grid, key=lambda t: (scores[t], -t))
    return best, scores


def fit_cascade_mle(dataset: Dataset, kind: ModelKind, validation: Dataset | None = None,
                    termination: float | None = None, test: Dataset | None = None,
                    fixed_attraction: bool = False) -> FitResult:
    """Attraction by MLE; t from ``termination`` or a validation grid search."""
    kind = ModelKind(kind)
    config = FitConfig(kind, Algorithm.MLE, termination=termination,
                       fixed_attraction=fixed_attraction)
    return fit(config, dataset, validation, test)


# -- driver ----------------------------------------------------------------------------


def _require_support(ix: _Index, kind: ModelKind) -> None:
    layout = ix.layout
    if kind is ModelKind.RCPBM:
        for name, n in (("row", ix.n_row), ("column", ix.n_col)):
            if (n == 0).any():
                raise DataError(f"no training records in {name}(s) {(np.flatnonzero(n == 0) + 1).tolist()}")
        return
    if (ix.n_cell == 0).any():
        cells = [(int(k) // layout.cols + 1, int(k) % layout.cols + 1)
                 for k in np.flatnonzero(ix.n_cell == 0)]
        raise DataError(f"no training records at cell(s) {cells[:10]}")


def _evaluate_all(model, train, validation, test):
    return (evaluate(train, model),
            evaluate(validation, model) if validation is not None else None,
            evaluate(test, model) if test is not None else None)


def fit(config: FitConfig, train: Dataset, validation: Dataset | None = None,
        test: Dataset | None = None) -> FitResult:
    """Run one configuration and evaluate it at every checkpoint.

    The best checkpoint is chosen on the objective likelihood of ``test`` when
    given (as results tables report it), else validation, else train; the
    validation-selected checkpoint is kept alongside.
    """
    config.validate()
    kind, alg = config.model_kind, config.algorithm
    hyper = {}

    if kind.is_cascade:
        attraction = mle_attraction(train)
        exam = None
        if kind is not ModelKind.CM:
            t = config.termination
            if t is None:
                if validation is None:
                    raise ConfigurationError(f"{kind.value} needs a termination or a validation set")
                t, _ = select_termination(train, validation, kind)
                hyper["termination_selected_on"] = "validation"
            hyper["termination"] = t
            exam = Termination(t)
        model = ClickModel(kind, attraction, exam)
        trace = (Checkpoint(0, model, *_evaluate_all(model, train, validation, test)),)
    elif alg is Algorithm.MLE:
        attraction = (init_attraction(train, AttractionInit.CTR) if config.fixed_attraction
                      else mle_attraction(train))
        model = ClickModel(kind, attraction, mle_examination(train))
        trace = (Checkpoint(0, model, *_evaluate_all(model, train, validation, test)),)
    else:
        trace = _iterate(config, train, validation, test)

    objective = objective_kind(kind)
    chooser = "test" if test is not None else "validation" if validation is not None else "train"

    def score(cp, split):
        return getattr(cp, split)[objective].per_session_normalized

    best = pick_best([(cp.iteration, score(cp, chooser)) for cp in trace])
    val_best = (pick_best([(cp.iteration, score(cp, "validation")) for cp in trace])
                if validation is not None else None)
    if config.learning_rate is not None:
        hyper.setdefault("learning_rate", config.learning_rate)
    return FitResult(config, trace, best, chooser, val_best, hyper)


def _iterate(config, train, validation, test) -> tuple[Checkpoint, ...]:
    kind, alg = config.model_kind, config.algorithm
    layout = train.layout
    ix = _Index(train)
    _require_support(ix, kind)
    fixed = config.fixed_attraction
    att0 = init_attraction(train, config.attraction_init)
    grid0 = init_examination(train, layout, config.examination_init)
    th = ix.theta(att0)
    if kind is ModelKind.RCPBM:
        rc = grid0.to_rowcol()
        state = (clip(rc.rows), clip(rc.cols))
    else:
        state = (grid0.values.ravel().copy(),)

    def snapshot(th, state):
        attraction = ix.wrap_theta(att0, th)
        if kind is ModelKind.RCPBM:
            return ClickModel(kind, attraction, RowCol(*state))
        return ClickModel(kind, attraction, PositionGrid(state[0].reshape(layout.rows, layout.cols)))

    lr = config.learning_rate
    trace = []
    for it in range(config.iterations + 1):
        if it in config.eval_checkpoints:
            model = snapshot(th, state)
            trace.append(Checkpoint(it, model, *_evaluate_all(model, train, validation, test)))
        if it == config.iterations:
            break
        if alg is Algorithm.EM:
            th, w = _em_cpbm(ix, th, state[0], fixed)
            state = (w,)
        elif kind is ModelKind.CPBM:
            th, w = _ga_cpbm(ix, th, state[0], lr, fixed)
            state = (w,)
        elif kind is ModelKind.OEPBM:
            th, w = _ga_oepbm(ix, th, state[0], lr, fixed)
            state = (w,)
        else:
            th, r, c = _ga_rcpbm(ix, th, state[0], state[1], lr, fixed)
            state = (r, c)
    return tuple(trace)


def tune_learning_rate(config: FitConfig, subtrain: Dataset, validation: Dataset,
                       rates=LEARNING_RATES) -> tuple[float | None, dict]:
    """Pick the learning rate whose best validation checkpoint scores highest.

    Returns the rate and ``{rate: (score, iteration)}``; ties go to the
    earlier rate in ``rates``. Pass ``rates=[None]`` for EM to only locate the
    validation checkpoint.
    """
    rates = list(rates)
    objective = objective_kind(config.model_kind)
    tuned = {}
    for lr in rates:
        result = fit(replace(config, learning_rate=lr), subtrain, validation)
        scores = [(cp.iteration, cp.validation[objective].per_session_normalized)
                  for cp in result.trace]
        it = pick_best(scores)
        tuned[lr] = (round(dict(scores)[it], TIE_DECIMALS), it)
    best = max(rates, key=lambda lr: (tuned[lr][0], -rates.index(lr)))
    return best, tuned
