"""Interaction-log ingestion, filtering, seeded splitting and parameter
initialisation."""
from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import (
    REFERENCE_LAYOUT,
    CarouselLayout,
    Dataset,
    ItemAttraction,
    PositionGrid,
    clip,
)

log = logging.getLogger(__name__)

COLUMNS = ("session_id", "item_id", "row", "col", "click", "examined", "impressed")


class DataError(ValueError):
    """Malformed or unusable input data."""


class SplitError(DataError):
    """The split constraints cannot be satisfied."""


class AttractionInit(str, enum.Enum):
    UNIFORM = "uniform"
    CTR = "ctr"

    @property
    def label(self) -> str:
        return {"uniform": "Uniform", "ctr": "CTR"}[self.value]


class ExaminationInit(str, enum.Enum):
    GAZE = "gaze"
    CAROUSEL = "carousel"

    @property
    def label(self) -> str:
        return self.value.capitalize()


# -- files ---------------------------------------------------------------


def _sniff_delimiter(header: str) -> str:
    for delim in (",", "\t", ";", "|"):
        if header.split(delim)[0].strip() == COLUMNS[0]:
            return delim
    raise DataError(f"header must start with {COLUMNS[0]!r}, got {header.strip()!r}")


def _read_rows(path: Path, extra: tuple[str, ...] = ()):
    with open(path, newline="", encoding="utf-8") as fh:
        header = fh.readline()
        if not header:
            raise DataError(f"{path}: empty file")
        delim = _sniff_delimiter(header)
        names = [h.strip() for h in header.rstrip("\r\n").split(delim)]
        expected = list(COLUMNS) + list(extra)
        if names[: len(expected)] != expected:
            raise DataError(f"{path}: header {names} does not match {expected}")
        for lineno, row in enumerate(csv.reader(fh, delimiter=delim), start=2):
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != len(names):
                raise DataError(f"{path}:{lineno}: expected {len(names)} fields, got {len(row)}")
            yield lineno, [x.strip() for x in row]


def _parse(path, rows):
    cols = [[] for _ in range(7)]
    extras = []
    for lineno, row in rows:
        try:
            ints = [int(x) for x in row[2:7]]
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if any(flag not in (0, 1) for flag in ints[2:]):
            raise DataError(f"{path}:{lineno}: click/examined/impressed must be 0 or 1")
        for k, v in enumerate(row[:2] + ints):
            cols[k].append(v)
        extras.append(row[7:])
    return cols, extras


def _build(path, cols, layout, stage_counts=None) -> Dataset:
    arr = [np.asarray(c) for c in cols]
    click, examined, impressed = (a.astype(np.int8) for a in arr[4:7])
    row, col = arr[2].astype(np.int64), arr[3].astype(np.int64)
    bad = (row < 1) | (row > layout.rows) | (col < 1) | (col > layout.cols)
    if bad.any():
        t = int(np.flatnonzero(bad)[0])
        raise DataError(
            f"{path}: record {t + 1} has position ({row[t]}, {col[t]}) outside "
            f"the {layout.rows}x{layout.cols} layout"
        )
    if ((click == 1) & (impressed == 0)).any():
        raise DataError(f"{path}: clicked records must be impressed")
    # a click without a fixation is either a gaze-data error or a stray click
    keep = ~((click == 1) & (examined == 0))
    dropped = int((~keep).sum())
    if dropped:
        log.warning("%s: dropped %d clicked-but-unexamined record(s)", path, dropped)
    counts = dict(stage_counts or {})
    counts.update(loaded_records=len(click), dropped_click_without_exam=dropped)
    if dropped:
        # sessions whose click came without any fixation at all: gaze tracking
        # failed, and the session filter reports them as fixation-less
        session = arr[0]
        fixated = set(session[examined == 1].tolist())
        orphans = set(session[~keep].tolist()) - fixated
        counts["click_sessions_without_fixation"] = len(orphans)
    return Dataset(layout, *(a[keep] for a in arr), stage_counts=counts)


def load_interactions(path, layout: CarouselLayout = REFERENCE_LAYOUT) -> Dataset:
    """Read a delimiter-separated interaction file into a validated Dataset."""
    path = Path(path)
    cols, _ = _parse(path, _read_rows(path))
    if not cols[0]:
        raise DataError(f"{path}: no records")
    return _build(path, cols, layout)


def write_interactions(dataset: Dataset, path, split: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS + (("split",) if split else ()))
        for rec in dataset.records:
            writer.writerow(list(rec) + ([split] if split else []))


# -- filtering -------------------------------------------------------------


def filter_impressions(dataset: Dataset) -> Dataset:
    """Keep impressed records only; clicked records are always impressed."""
    keep = dataset.impressed == 1
    negatives = int((dataset.click == 0).sum())
    kept_negatives = int(((dataset.click == 0) & keep).sum())
    reduction = 1 - kept_negatives / negatives if negatives else 0.0
    log.info("impression filter: %d -> %d records (negatives reduced by %.1f%%)",
             len(dataset), int(keep.sum()), 100 * reduction)
    return dataset.select(keep, stage="impressed_records").with_stage_counts(
        negatives_before_impression_filter=negatives,
        negatives_after_impression_filter=kept_negatives,
    )


def negative_reduction(before: Dataset, after: Dataset) -> float:
    neg_before = int((before.click == 0).sum())
    neg_after = int((after.click == 0).sum())
    return 1 - neg_after / neg_before if neg_before else 0.0


def filter_sessions(dataset: Dataset) -> Dataset:
    """Drop click-less sessions, sessions without any fixation, and every record
    of an item that is never clicked.

    Sessions whose only click lacked a fixation lost that click at load time;
    they are counted here as clicked but fixation-less.
    """
    codes = dataset.session_codes
    n_sessions = dataset.n_sessions
    clicked = np.bincount(codes, weights=dataset.click, minlength=n_sessions) > 0
    fixated = np.bincount(codes, weights=dataset.examined, minlength=n_sessions) > 0
    keep_session = clicked & fixated
    unfixated = dataset.stage_counts.get("click_sessions_without_fixation", 0)
    counts = {
        "screens": n_sessions,
        "sessions_with_click": int(clicked.sum()) + unfixated,
        "sessions_without_fixation_removed": int((clicked & ~fixated).sum()) + unfixated,
        "sessions_kept": int(keep_session.sum()),
    }
    mask = keep_session[codes]
    clicked_items = np.unique(dataset.item[mask & (dataset.click == 1)])
    item_mask = np.isin(dataset.item, clicked_items)
    counts["never_clicked_item_records_removed"] = int((mask & ~item_mask).sum())
    out = dataset.select(mask & item_mask)
    if not len(out):
        raise DataError("session filters removed every record")
    counts["items"] = len(out.items)
    counts["clicks"] = int(out.click.sum())
    log.info("session filter: %s", counts)
    return out.with_stage_counts(**counts)


def prepare(dataset: Dataset) -> Dataset:
    """Full cleaning pipeline: session filters followed by the impression filter."""
    return filter_impressions(filter_sessions(dataset))


# -- splitting ---------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    test_click_threshold: int = 5
    validation_click_threshold: int = 4
    fraction: float = 0.5
    seed: int = 0
    max_redraw_rounds: int = 500

    def __post_init__(self):
        if self.test_click_threshold < 2 or self.validation_click_threshold < 2:
            raise ValueError("click thresholds must be at least 2")
        if not 0 < self.fraction < 1:
            raise ValueError("fraction must lie in (0, 1)")


def _click_sessions(dataset: Dataset) -> dict[str, np.ndarray]:
    clicked = dataset.click == 1
    items, sessions = dataset.item[clicked], dataset.session[clicked]
    order = np.lexsort((sessions, items))
    items, sessions = items[order], sessions[order]
    out = {}
    for u in np.unique(items):
        lo, hi = np.searchsorted(items, u, "left"), np.searchsorted(items, u, "right")
        out[str(u)] = np.unique(sessions[lo:hi])
    return out


def _holdout(dataset: Dataset, threshold: int, fraction: float, rng: np.random.Generator,
             max_rounds: int, what: str) -> tuple[np.ndarray, int]:
    """Pick sessions to hold out: floor(fraction * n) click sessions per item with
    at least ``threshold`` clicks, re-drawn until the retained part keeps
    enough clicks per held-out item, every item and every clicked cell."""
    by_item = _click_sessions(dataset)
    eligible = sorted(u for u, s in by_item.items() if len(s) >= threshold)
    if not eligible:
        raise SplitError(f"no item has {threshold} or more clicks; {what} set would be empty")
    min_keep = threshold - math.floor(threshold * fraction)

    def draw(u):
        s = by_item[u]
        return np.sort(rng.choice(s, math.floor(fraction * len(s)), replace=False))

    chosen = {u: draw(u) for u in eligible}
    clicked = dataset.click == 1
    clicked_cells = np.unique(dataset.pos[clicked])
    for rounds in range(max_rounds + 1):
        held = np.unique(np.concatenate(list(chosen.values())))
        out = np.isin(dataset.session, held)
        kept_click = clicked & ~out
        kept_cells = np.unique(dataset.pos[kept_click])
        bad_cells = np.setdiff1d(clicked_cells, kept_cells)
        kept_items = set(np.unique(dataset.item[~out]).tolist())
        blocking = set()
        for cell in bad_cells:
            sessions = np.unique(dataset.session[clicked & (dataset.pos == cell)])
            blocking.update(u for u in eligible if np.isin(chosen[u], sessions).any())
        retained = {u: len(np.setdiff1d(by_item[u], held)) for u in eligible}
        blocking.update(u for u in eligible if retained[u] < min_keep)
        lost = sorted(set(np.unique(dataset.item[out]).tolist()) - kept_items)
        for u in lost:
            shown = np.unique(dataset.session[dataset.item == u])
            blocking.update(v for v in eligible if np.isin(chosen[v], shown).any())
        if not blocking and not lost and not len(bad_cells):
            return out, rounds
        if rounds == max_rounds:
            break
        for u in sorted(blocking):
            chosen[u] = draw(u)
    cols = dataset.layout.cols
    cells = [(int(c) // cols + 1, int(c) % cols + 1) for c in bad_cells]
    hint = ""
    if dataset.max_clicks_per_session > 1:
        hint = (f"; sessions hold up to {dataset.max_clicks_per_session} clicks, so per-item "
                "holdouts cover most sessions (simulate with first_click_only)")
    raise SplitError(
        f"could not build the {what} split after {max_rounds} re-draws; positions "
        f"losing every retained click: {cells}; items without retained records: {lost[:10]}{hint}"
    )


def train_test_split(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng([spec.seed, 0])
    out, rounds = _holdout(dataset, spec.test_click_threshold, spec.fraction, rng,
                           spec.max_redraw_rounds, "test")
    log.info("train/test split: %d test records after %d re-draw round(s)", int(out.sum()), rounds)
    return (dataset.select(~out).with_stage_counts(test_redraw_rounds=rounds),
            dataset.select(out))


def train_validation_split(train: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, Dataset]:
    rng = np.random.default_rng([spec.seed, 1])
    out, rounds = _holdout(train, spec.validation_click_threshold, spec.fraction, rng,
                           spec.max_redraw_rounds, "validation")
    return (train.select(~out).with_stage_counts(validation_redraw_rounds=rounds),
            train.select(out))


@dataclass(frozen=True, eq=False)
class Splits:
    train: Dataset
    subtrain: Dataset
    validation: Dataset
    test: Dataset
    manifest: dict


def split_dataset(dataset: Dataset, spec: SplitSpec = SplitSpec()) -> Splits:
    """Train/test split followed by the train/validation split.

    ``train`` is the full training part; ``subtrain`` plus ``validation``
    partition it and are used for hyperparameter selection only.
    """
    train, test = train_test_split(dataset, spec)
    subtrain, validation = train_validation_split(train, spec)
    total = dataset.n_sessions
    manifest = {
        "split_spec": asdict(spec),
        "layout": dataset.layout.to_dict(),
        "stage_counts": dict(dataset.stage_counts),
        "splits": {
            name: {
                "sessions": part.n_sessions,
                "records": len(part),
                "clicks": int(part.click.sum()),
                "session_share": round(part.n_sessions / total, 6),
            }
            for name, part in (("train", train), ("subtrain", subtrain),
                               ("validation", validation), ("test", test))
        },
        "test_redraw_rounds": train.stage_counts.get("test_redraw_rounds", 0),
        "validation_redraw_rounds": subtrain.stage_counts.get("validation_redraw_rounds", 0),
    }
    return Splits(train, subtrain, validation, test, manifest)


def write_splits(splits: Splits, out_dir) -> Path:
    """Write ``splits.csv`` (schema plus a split column) and ``manifest.json``.

    Split labels are ``train`` (the sub-training part), ``validation`` and ``test``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "splits.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS + ("split",))
        for label, part in (("train", splits.subtrain), ("validation", splits.validation),
                            ("test", splits.test)):
            for rec in part.records:
                writer.writerow(list(rec) + [label])
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(splits.manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_splits(path, layout: CarouselLayout = REFERENCE_LAYOUT) -> Splits:
    path = Path(path)
    cols, extras = _parse(path, _read_rows(path, extra=("split",)))
    if not cols[0]:
        raise DataError(f"{path}: no records")
    labels = np.asarray([e[0] for e in extras])
    unknown = set(labels.tolist()) - {"train", "validation", "test"}
    if unknown:
        raise DataError(f"{path}: unknown split labels {sorted(unknown)}")
    full = _build(path, cols, layout)
    labels = labels[~((np.asarray(cols[4]) == 1) & (np.asarray(cols[5]) == 0))]
    subtrain = full.select(labels == "train")
    validation = full.select(labels == "validation")
    train = full.select(labels != "test")
    test = full.select(labels == "test")
    manifest = {}
    mpath = path.parent / "manifest.json"
    if mpath.exists():
        manifest = json.loads(mpath.read_text())
    return Splits(train, subtrain, validation, test, manifest)


# -- initialisation -----------------------------------------------------------


def init_attraction(train: Dataset, choice) -> ItemAttraction:
    """Uniform 0.5 for every item, or per-item CTR over impressed records."""
    choice = AttractionInit(choice)
    if choice is AttractionInit.UNIFORM:
        return ItemAttraction.constant(train.items, 0.5)
    n_items = len(train.items)
    impressed = np.bincount(train.item_codes, weights=train.impressed, minlength=n_items)
    clicks = np.bincount(train.item_codes, weights=train.click, minlength=n_items)
    if (impressed == 0).any():
        u = train.items[np.flatnonzero(impressed == 0)[0]]
        raise DataError(f"item {u!r} was never impressed; its CTR is undefined")
    return ItemAttraction.from_arrays(train.items, clip(clicks / impressed))


def carousel_grid(layout: CarouselLayout, row_discount: float = 0.95,
                  swipe_discount: float = 0.7) -> np.ndarray:
    """Prior examination: geometric decay down the rows and one discount for
    any swiped column set."""
    i, j = np.indices((layout.rows, layout.cols)) + 1
    grid = row_discount ** (i - 1) * np.where(j > layout.visible_set_size, swipe_discount, 1.0)
    return clip(grid)


def init_examination(train: Dataset, layout: CarouselLayout, choice) -> PositionGrid:
    """Gaze: per-cell share of impressed records that were examined.
    Carousel: the ``carousel_grid`` prior."""
    choice = ExaminationInit(choice)
    if choice is ExaminationInit.CAROUSEL:
        return PositionGrid(carousel_grid(layout))
    pos = train.pos
    impressed = np.bincount(pos, weights=train.impressed, minlength=layout.n_cells)
    examined = np.bincount(pos, weights=train.examined * train.impressed, minlength=layout.n_cells)
    if (impressed == 0).any():
        cells = [(int(k) // layout.cols + 1, int(k) % layout.cols + 1)
                 for k in np.flatnonzero(impressed == 0)]
        raise DataError(f"gaze initialisation undefined: no impressed records at {cells[:10]}")
    return PositionGrid(clip(examined / impressed).reshape(layout.rows, layout.cols))


__all__ = [
    "COLUMNS", "AttractionInit", "ExaminationInit", "DataError", "SplitError",
    "SplitSpec", "Splits", "load_interactions", "write_interactions", "filter_impressions",
    "filter_sessions", "prepare", "train_test_split", "train_validation_split",
    "split_dataset", "write_splits", "load_splits", "init_attraction", "init_examination",
    "carousel_grid", "negative_reduction",
]
