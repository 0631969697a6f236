"""Configuration matrix runner producing results tables."""
from __future__ import annotations

import csv
import enum
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from .core import REFERENCE_LAYOUT, CarouselLayout
from .data import AttractionInit, ExaminationInit, SplitSpec, Splits, load_interactions, load_splits, prepare, split_dataset
from .likelihoods import CLICK, OELL, dummy_baseline
from .models import ModelKind
from .optimizers import (
    LEARNING_RATES,
    TERMINATION_GRID,
    TIE_DECIMALS,
    Algorithm,
    FitConfig,
    fit,
    select_termination,
    tune_learning_rate,
)

log = logging.getLogger(__name__)

UNDEFINED = "undefined"
MODEL_ORDER = ["1% Click", "CM", "TCM", "CCM", "CPBM", "RCPBM", "OEPBM"]
COLUMNS = ["model", "alg", "lr", "att_init", "exam_init", "iter", "test_ll", "test_oell",
           "val_iter", "best", "status"]


class Scenario(str, enum.Enum):
    STANDARD = "standard"
    FIXED = "fixed"


def default_matrix(scenario=Scenario.STANDARD, iterations: int = 100,
                   eval_checkpoints=(0, 50, 100)) -> list[FitConfig]:
    """The reference configuration matrix. GA learning rates are left open
    (None) so that the runner tunes them on validation."""
    scenario = Scenario(scenario)
    fixed = scenario is Scenario.FIXED
    att_inits = [AttractionInit.CTR] if fixed else [AttractionInit.CTR, AttractionInit.UNIFORM]
    inits = [(a, e) for a in att_inits for e in (ExaminationInit.CAROUSEL, ExaminationInit.GAZE)]
    configs = [FitConfig(k, Algorithm.MLE, fixed_attraction=fixed) for k in (ModelKind.TCM, ModelKind.CCM)]
    for kind, alg in ((ModelKind.CPBM, Algorithm.EM), (ModelKind.CPBM, Algorithm.GA),
                      (ModelKind.RCPBM, Algorithm.GA), (ModelKind.OEPBM, Algorithm.GA)):
        for a, e in inits:
            configs.append(FitConfig(kind, alg, iterations=iterations, eval_checkpoints=eval_checkpoints,
                                     attraction_init=a, examination_init=e, fixed_attraction=fixed))
    configs.append(FitConfig(ModelKind.OEPBM, Algorithm.MLE, fixed_attraction=fixed))
    return configs


@dataclass
class ExperimentSpec:
    scenario: Scenario = Scenario.STANDARD
    splits: str | None = None
    raw: str | None = None
    split: SplitSpec = field(default_factory=SplitSpec)
    configs: list[FitConfig] | None = None
    include_dummy: bool = True
    learning_rates: tuple[float, ...] = LEARNING_RATES
    termination_grid: tuple[float, ...] = TERMINATION_GRID
    iterations: int = 100
    eval_checkpoints: tuple[int, ...] = (0, 50, 100)
    layout: CarouselLayout = REFERENCE_LAYOUT
    output: str = "results"
    seed: int = 0

    def __post_init__(self):
        self.scenario = Scenario(self.scenario)

    def matrix(self) -> list[FitConfig]:
        if self.configs is not None:
            configs = list(self.configs)
        else:
            configs = default_matrix(self.scenario, self.iterations, self.eval_checkpoints)
        out = []
        for cfg in configs:
            if self.scenario is Scenario.FIXED:
                cfg = replace(cfg, fixed_attraction=True)
            out.append(replace(cfg, seed=self.seed))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown experiment field(s): {sorted(unknown)}")
        if "split" in data:
            data["split"] = SplitSpec(**data["split"])
        if "layout" in data:
            data["layout"] = CarouselLayout(**data["layout"])
        if data.get("configs") is not None:
            data["configs"] = [FitConfig.from_dict(c) for c in data["configs"]]
        for key in ("learning_rates", "termination_grid", "eval_checkpoints"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.value,
            "splits": self.splits,
            "raw": self.raw,
            "split": {k: getattr(self.split, k) for k in self.split.__dataclass_fields__},
            "configs": None if self.configs is None else [c.to_dict() for c in self.configs],
            "include_dummy": self.include_dummy,
            "learning_rates": list(self.learning_rates),
            "termination_grid": list(self.termination_grid),
            "iterations": self.iterations,
            "eval_checkpoints": list(self.eval_checkpoints),
            "layout": self.layout.to_dict(),
            "output": self.output,
            "seed": self.seed,
        }


@dataclass
class ResultRow:
    model: str
    alg: str = "-"
    lr: str = "-"
    att_init: str = "-"
    exam_init: str = "-"
    iter: str = "-"
    test_ll: float | None = None
    test_oell: float | str | None = None
    val_iter: str = "-"
    best: str = ""
    status: str = "ok"
    fit: dict | None = None

    def sort_key(self):
        return (MODEL_ORDER.index(self.model) if self.model in MODEL_ORDER else len(MODEL_ORDER),
                self.alg, self.att_init, self.exam_init, self.lr)

    def cells(self) -> list[str]:
        def num(x):
            if x is None:
                return "-"
            if isinstance(x, str):
                return x
            return f"{x:.4f}"
        return [self.model, self.alg, self.lr, self.att_init, self.exam_init, self.iter,
                num(self.test_ll), num(self.test_oell), self.val_iter, self.best, self.status]


@dataclass
class ExperimentResults:
    spec: ExperimentSpec
    rows: list[ResultRow]
    manifest: dict = field(default_factory=dict)

    @property
    def failed(self) -> list[ResultRow]:
        return [r for r in self.rows if r.status != "ok"]


def _load(spec: ExperimentSpec) -> Splits:
    if spec.splits:
        return load_splits(spec.splits, spec.layout)
    if spec.raw:
        raw = load_interactions(spec.raw, spec.layout)
        return split_dataset(prepare(raw), replace(spec.split, seed=spec.seed))
    raise ValueError("experiment needs either 'splits' or 'raw' data")


def _fmt_lr(lr) -> str:
    return "-" if lr is None else f"{lr:g}"


def run_config(cfg: FitConfig, splits: Splits, spec: ExperimentSpec) -> ResultRow:
    kind, alg = cfg.model_kind, cfg.algorithm
    row = ResultRow(kind.value, alg.value)
    if cfg.iterative:
        row.att_init = cfg.attraction_init.label
        row.exam_init = cfg.examination_init.label
    probe = cfg
    if alg is Algorithm.GA and cfg.learning_rate is None:
        probe = replace(cfg, learning_rate=spec.learning_rates[0])
    probe.validate()
    hyper_scores = {}

    if kind in (ModelKind.TCM, ModelKind.CCM) and cfg.termination is None:
        t, _ = select_termination(splits.subtrain, splits.validation, kind, spec.termination_grid)
        cfg = replace(cfg, termination=t)
        hyper_scores = {"termination": t}
    elif cfg.iterative:
        rates = [cfg.learning_rate] if (alg is Algorithm.EM or cfg.learning_rate is not None) \
            else spec.learning_rates
        best_lr, tuned = tune_learning_rate(cfg, splits.subtrain, splits.validation, rates)
        cfg = replace(cfg, learning_rate=best_lr)
        row.val_iter = str(tuned[best_lr][1])
        hyper_scores = {"validation": {_fmt_lr(lr): {"score": s, "iteration": it}
                                       for lr, (s, it) in tuned.items()}}

    result = fit(cfg, splits.train, test=splits.test)
    best = result.best
    row.lr = _fmt_lr(cfg.learning_rate) if alg is Algorithm.GA else "-"
    row.iter = str(best.iteration) if cfg.iterative else "-"
    row.test_ll = best.test[CLICK].per_session_normalized
    row.test_oell = best.test[OELL].per_session_normalized if OELL in best.test else UNDEFINED
    row.fit = {**result.to_dict(), "tuning": hyper_scores}
    return row


def run_experiment(spec: ExperimentSpec, splits: Splits | None = None) -> ExperimentResults:
    """Fit every configuration and collect one row per configuration.

    Hyperparameters (termination, learning rate) are chosen on the validation
    split with models fit on the sub-training split; the reported fit uses the
    full training split and reports the best test checkpoint.
    """
    if splits is None:
        splits = _load(spec)
    rows = []
    if spec.include_dummy:
        click, oell = dummy_baseline(splits.test)
        rows.append(ResultRow("1% Click", test_ll=click.per_session_normalized,
                              test_oell=oell.per_session_normalized))
    for cfg in spec.matrix():
        try:
            rows.append(run_config(cfg, splits, spec))
        except Exception as exc:  # one bad configuration must not sink the run
            log.error("%s failed: %s", cfg.label(), exc)
            rows.append(ResultRow(cfg.model_kind.value, cfg.algorithm.value,
                                  _fmt_lr(cfg.learning_rate),
                                  cfg.attraction_init.label if cfg.iterative else "-",
                                  cfg.examination_init.label if cfg.iterative else "-",
                                  status=f"error: {type(exc).__name__}: {exc}"))
    rows.sort(key=ResultRow.sort_key)
    _flag_best(rows)
    spec_dict = spec.to_dict()
    spec_dict.pop("output")  # reports must not depend on where they are written
    manifest = {"split_manifest": splits.manifest, "spec": spec_dict}
    return ExperimentResults(spec, rows, manifest)


def _flag_best(rows: list[ResultRow]) -> None:
    for attr, tag in (("test_ll", "LL"), ("test_oell", "OELL")):
        vals = [round(getattr(r, attr), TIE_DECIMALS) for r in rows
                if r.status == "ok" and isinstance(getattr(r, attr), float)]
        if not vals:
            continue
        top = max(vals)
        for r in rows:
            v = getattr(r, attr)
            if r.status == "ok" and isinstance(v, float) and round(v, TIE_DECIMALS) == top:
                r.best = f"{r.best}+{tag}" if r.best else tag


def results_csv(results: ExperimentResults) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in results.rows:
        writer.writerow(r.cells())
    return buf.getvalue()


def results_text(results: ExperimentResults) -> str:
    header = ["Model", "Alg", "Lr", "Att Init", "Exam Init", "Iter", "Test LL", "Test OELL",
              "Val Iter", "Best", "Status"]
    body = [r.cells() for r in results.rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = [f"Scenario: {results.spec.scenario.value}"]
    fmt = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths)).rstrip()
    lines.append(fmt(header))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend(fmt(c) for c in body)
    return "\n".join(lines) + "\n"


def emit_report(results: ExperimentResults, out_dir) -> list[Path]:
    """Write results.csv, results.txt and fits.json into ``out_dir``."""
    if not results.rows:
        raise ValueError("no results to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [out_dir / "results.csv", out_dir / "results.txt", out_dir / "fits.json"]
    paths[0].write_text(results_csv(results), encoding="utf-8")
    paths[1].write_text(results_text(results), encoding="utf-8")
    fits = {
        "manifest": results.manifest,
        "rows": [{"row": dict(zip(COLUMNS, r.cells())), "fit": r.fit} for r in results.rows],
    }
    paths[2].write_text(json.dumps(fits, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return paths
