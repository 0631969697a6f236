"""Synthetic click logs with known ground truth.

Position-based kinds draw examination per cell independently and click on
examined, attractive items (several clicks per session are possible). Cascade
kinds walk the grid in row-major order:

* CM and TCM: every reached cell is examined; an attractive item is clicked
  and ends the session, an unattractive one ends it with probability t
  (t = 0 for CM).
* CCM: a row whose items are all unattractive is skipped without examining
  its items, ending the session with probability t; in the first row holding
  an attractive item the items are scanned like in the TCM.

Both stories reproduce the closed-form click probabilities exactly, which
``exact_click_distribution`` exposes for checking.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    CarouselLayout,
    Dataset,
    ItemAttraction,
    PositionGrid,
    RowCol,
    Termination,
)
from .models import ClickModel, ModelKind, model_from_dict, model_to_dict

BLOCK_SESSIONS = 4096


@dataclass(frozen=True, eq=False)
class GroundTruth:
    layout: CarouselLayout
    model_kind: ModelKind
    attraction: ItemAttraction
    examination: PositionGrid | RowCol | Termination | None
    sessions: int
    seed: int = 0
    screen: np.ndarray | None = None
    """Optional fixed rows x cols grid of item ids shown in every session;
    otherwise items are placed uniformly at random per session."""
    first_click_only: bool = False
    items: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "model_kind", ModelKind(self.model_kind))
        ClickModel(self.model_kind, self.attraction, self.examination)
        items = tuple(sorted(self.attraction.table))
        object.__setattr__(self, "items", items)
        if self.screen is not None:
            screen = np.asarray(self.screen).astype(str)
            if screen.shape != (self.layout.rows, self.layout.cols):
                raise ValueError("screen must be a rows x cols grid of item ids")
            missing = set(screen.ravel().tolist()) - set(items)
            if missing:
                raise ValueError(f"screen shows items without attraction: {sorted(missing)[:5]}")
            object.__setattr__(self, "screen", screen)
        exam = self.examination
        if isinstance(exam, (PositionGrid, RowCol)) and exam.shape != (self.layout.rows, self.layout.cols):
            raise ValueError("examination parameters do not match the layout")
        if self.sessions < 1:
            raise ValueError("need at least one session")

    @property
    def model(self) -> ClickModel:
        return ClickModel(self.model_kind, self.attraction, self.examination)


def _placements(gt: GroundTruth, rng: np.random.Generator, n: int) -> np.ndarray:
    """Item codes (into ``gt.items``) for n sessions, shape (n, cells)."""
    cells = gt.layout.n_cells
    if gt.screen is not None:
        lookup = {u: k for k, u in enumerate(gt.items)}
        codes = np.array([lookup[u] for u in gt.screen.ravel()])
        return np.broadcast_to(codes, (n, cells))
    n_items = len(gt.items)
    if n_items >= cells:
        return np.argsort(rng.random((n, n_items)), axis=1)[:, :cells]
    return rng.integers(0, n_items, size=(n, cells))


def _session_block(gt: GroundTruth, rng: np.random.Generator, n: int):
    """Simulate ``n`` sessions; returns (item codes, examined, clicked), each (n, cells)."""
    layout = gt.layout
    theta_table = np.array([gt.attraction[u] for u in gt.items])
    codes = _placements(gt, rng, n)
    theta = theta_table[codes]
    attractive = rng.random(theta.shape) < theta
    kind = gt.model_kind
    if not kind.is_cascade:
        w = gt.examination.as_grid().ravel()
        examined = rng.random(theta.shape) < w
        clicked = examined & attractive
        if gt.first_click_only:
            first = np.argmax(clicked, axis=1)
            keep = np.zeros_like(clicked)
            keep[np.arange(n), first] = True
            clicked &= keep
        return codes, examined, clicked

    t = 0.0 if kind is ModelKind.CM else gt.examination.t
    stop_draw = rng.random(theta.shape) < t
    cells = layout.n_cells
    examined = np.zeros((n, cells), dtype=bool)
    clicked = np.zeros((n, cells), dtype=bool)
    active = np.ones(n, dtype=bool)
    if kind is ModelKind.CCM:
        att = attractive.reshape(n, layout.rows, layout.cols)
        row_attractive = att.any(axis=2)
        row_stop = rng.random((n, layout.rows)) < t
        for i in range(layout.rows):
            row_ok = row_attractive[:, i]
            scanning = active & row_ok
            for j in range(layout.cols):
                k = i * layout.cols + j
                examined[:, k] = scanning
                hit = scanning & attractive[:, k]
                clicked[:, k] = hit
                scanning = scanning & ~hit & ~stop_draw[:, k]
            # an attractive row ends the session (click or termination inside it);
            # an unattractive one is skipped at topic level, leaving with prob. t
            active = active & ~row_ok & ~row_stop[:, i]
        return codes, examined, clicked
    for k in range(cells):
        examined[:, k] = active
        hit = active & attractive[:, k]
        clicked[:, k] = hit
        active = active & ~hit & ~stop_draw[:, k]
    return codes, examined, clicked


def _blocks(gt: GroundTruth):
    start = 0
    block = 0
    while start < gt.sessions:
        n = min(BLOCK_SESSIONS, gt.sessions - start)
        rng = np.random.default_rng([gt.seed, block])
        yield start, _session_block(gt, rng, n)
        start += n
        block += 1


def simulate(gt: GroundTruth) -> Dataset:
    """Generate one record per cell and session; every record is impressed."""
    layout = gt.layout
    cells = layout.n_cells
    items = np.asarray(gt.items)
    width = len(str(gt.sessions - 1))
    parts = {k: [] for k in ("session", "item", "pos", "click", "exam")}
    for start, (codes, examined, clicked) in _blocks(gt):
        n = codes.shape[0]
        sid = np.char.add("s", np.char.zfill(np.arange(start, start + n).astype(str), width))
        parts["session"].append(np.repeat(sid, cells))
        parts["item"].append(items[codes.ravel()])
        parts["pos"].append(np.tile(np.arange(cells), n))
        parts["click"].append(clicked.ravel())
        parts["exam"].append(examined.ravel())
    pos = np.concatenate(parts["pos"])
    n_records = len(pos)
    return Dataset(
        layout,
        np.concatenate(parts["session"]),
        np.concatenate(parts["item"]),
        pos // layout.cols + 1,
        pos % layout.cols + 1,
        np.concatenate(parts["click"]).astype(np.int8),
        np.concatenate(parts["exam"]).astype(np.int8),
        np.ones(n_records, dtype=np.int8),
        catalog=frozenset(gt.items),
    )


def empirical_click_rates(gt: GroundTruth) -> np.ndarray:
    """Per-cell click frequency over all simulated sessions (fixed screen only)."""
    if gt.screen is None:
        raise ValueError("per-cell click rates need a fixed screen")
    counts = np.zeros(gt.layout.n_cells)
    for _, (_, _, clicked) in _blocks(gt):
        counts += clicked.sum(axis=0)
    return (counts / gt.sessions).reshape(gt.layout.rows, gt.layout.cols)


def exact_click_distribution(gt: GroundTruth, screen=None) -> np.ndarray:
    """Closed-form P(click) for every cell of one screen."""
    screen = gt.screen if screen is None else np.asarray(screen).astype(str)
    if screen is None:
        raise ValueError("need a screen of item ids")
    thetas = np.vectorize(lambda u: gt.attraction[u], otypes=[float])(screen)
    return gt.model.screen_click_probs(thetas, gt.layout)


@dataclass(frozen=True)
class ParameterErrors:
    abs_errors: np.ndarray
    support: np.ndarray

    def max(self, min_support: int = 0) -> float:
        sel = self.abs_errors[self.support >= min_support]
        return float(sel.max()) if sel.size else 0.0

    def mean(self, min_support: int = 0) -> float:
        sel = self.abs_errors[self.support >= min_support]
        return float(sel.mean()) if sel.size else 0.0

    def count(self, min_support: int = 0) -> int:
        return int((self.support >= min_support).sum())


@dataclass(frozen=True)
class RecoveryReport:
    attraction: ParameterErrors
    examination: ParameterErrors | None

    def summary(self, min_support: int = 0) -> dict:
        out = {
            "attraction_max": self.attraction.max(min_support),
            "attraction_mean": self.attraction.mean(min_support),
            "attraction_count": self.attraction.count(min_support),
        }
        if self.examination is not None:
            out.update(
                examination_max=self.examination.max(min_support),
                examination_mean=self.examination.mean(min_support),
                examination_count=self.examination.count(min_support),
            )
        return out


def recovery_report(gt: GroundTruth, fitted, dataset: Dataset | None = None) -> RecoveryReport:
    """Absolute parameter errors of ``fitted`` (a ClickModel or FitResult)
    against the ground truth, with per-parameter record support from
    ``dataset`` (infinite support when no dataset is given)."""
    model = getattr(fitted, "model", fitted)
    items = [u for u in gt.items if u in model.attraction]
    truth = np.array([gt.attraction[u] for u in items])
    est = np.array([model.attraction[u] for u in items])
    if dataset is not None:
        counts = dict(zip(dataset.items.tolist(), dataset.item_counts.tolist()))
        support = np.array([counts.get(u, 0) for u in items])
    else:
        support = np.full(len(items), np.iinfo(np.int64).max)
    att = ParameterErrors(np.abs(est - truth), support)

    exam = None
    if isinstance(gt.examination, (PositionGrid, RowCol)) and isinstance(model.examination, (PositionGrid, RowCol)):
        if isinstance(gt.examination, RowCol) and isinstance(model.examination, RowCol):
            truth_e = np.concatenate([gt.examination.rows, gt.examination.cols])
            est_e = np.concatenate([model.examination.rows, model.examination.cols])
            if dataset is not None:
                sup = np.concatenate([dataset.cell_counts.sum(axis=1), dataset.cell_counts.sum(axis=0)])
            else:
                sup = np.full(len(truth_e), np.iinfo(np.int64).max)
        else:
            truth_e = gt.examination.as_grid().ravel()
            est_e = model.examination.as_grid().ravel()
            sup = (dataset.cell_counts.ravel() if dataset is not None
                   else np.full(len(truth_e), np.iinfo(np.int64).max))
        exam = ParameterErrors(np.abs(est_e - truth_e), sup)
    elif isinstance(gt.examination, Termination) and isinstance(model.examination, Termination):
        exam = ParameterErrors(np.array([abs(model.examination.t - gt.examination.t)]),
                               np.array([np.iinfo(np.int64).max]))
    return RecoveryReport(att, exam)


def random_ground_truth(kind, layout: CarouselLayout, n_items: int, sessions: int, seed: int = 0,
                        theta_range=(0.05, 0.95), exam_range=(0.2, 1.0), t: float = 0.2,
                        screen: bool = False, first_click_only: bool = False) -> GroundTruth:
    """Uniformly drawn parameters; the draw uses its own stream so that the
    parameters do not change with ``sessions``."""
    kind = ModelKind(kind)
    rng = np.random.default_rng([seed, 10**6])
    width = len(str(n_items - 1))
    items = [f"u{k:0{width}d}" for k in range(n_items)]
    attraction = ItemAttraction.from_arrays(items, rng.uniform(*theta_range, size=n_items))
    if kind is ModelKind.CM:
        exam = None
    elif kind.is_cascade:
        exam = Termination(t)
    elif kind is ModelKind.RCPBM:
        lo, hi = np.sqrt(exam_range[0]), np.sqrt(exam_range[1])
        exam = RowCol(rng.uniform(lo, hi, layout.rows), rng.uniform(lo, hi, layout.cols))
    else:
        exam = PositionGrid(rng.uniform(*exam_range, size=(layout.rows, layout.cols)))
    grid = None
    if screen:
        if n_items < layout.n_cells:
            raise ValueError("a fixed screen needs at least one item per cell")
        picks = rng.permutation(n_items)[:layout.n_cells]
        grid = np.asarray(items)[picks].reshape(layout.rows, layout.cols)
    return GroundTruth(layout, kind, attraction, exam, sessions, seed, grid, first_click_only)


def ground_truth_to_dict(gt: GroundTruth) -> dict:
    return {
        "layout": gt.layout.to_dict(),
        "sessions": gt.sessions,
        "seed": gt.seed,
        "first_click_only": gt.first_click_only,
        "screen": None if gt.screen is None else gt.screen.tolist(),
        "model": model_to_dict(gt.model),
    }


def ground_truth_from_dict(data: dict, seed: int | None = None) -> GroundTruth:
    """Build a GroundTruth from a config mapping.

    Either a full ``model`` block (as written by ``ground_truth_to_dict``) or
    ``model_kind`` and ``n_items`` for randomly drawn parameters.
    """
    data = dict(data)
    layout = CarouselLayout(**data.pop("layout", {})) if "layout" in data else CarouselLayout()
    file_seed = data.pop("seed", 0)
    seed = file_seed if seed is None else seed
    if "model" in data:
        model = model_from_dict(data.pop("model"))
        screen = data.pop("screen", None)
        gt = GroundTruth(layout, model.kind, model.attraction, model.examination,
                         data.pop("sessions"), seed, None if screen is None else np.asarray(screen),
                         data.pop("first_click_only", False))
    else:
        if "theta_range" in data:
            data["theta_range"] = tuple(data["theta_range"])
        if "exam_range" in data:
            data["exam_range"] = tuple(data["exam_range"])
        kind = data.pop("model_kind")
        gt = random_ground_truth(kind, layout, data.pop("n_items"), data.pop("sessions"), seed,
                                 **{k: data.pop(k) for k in list(data)
                                    if k in ("theta_range", "exam_range", "t", "screen",
                                             "first_click_only")})
    if data:
        raise ValueError(f"unknown ground-truth field(s): {sorted(data)}")
    return gt
