"""Command line interface.

Verbs: ``split``, ``fit``, ``experiment``, ``simulate`` and ``evaluate``.
Config files are JSON objects whose keys mirror the corresponding dataclass
fields (SplitSpec, FitConfig, ExperimentSpec, GroundTruth).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .core import REFERENCE_LAYOUT, CarouselLayout
from .data import (
    DataError,
    SplitSpec,
    load_interactions,
    load_splits,
    prepare,
    split_dataset,
    write_interactions,
    write_splits,
)
from .experiment import ExperimentSpec, Scenario, emit_report, results_text, run_config, run_experiment
from .likelihoods import OELL, dummy_baseline, evaluate
from .models import ConfigurationError, model_from_dict
from .optimizers import FitConfig
from .simulator import ground_truth_from_dict, ground_truth_to_dict, simulate

log = logging.getLogger("carousel_click_models")

EXIT_OK = 0
EXIT_FAILED = 1  # argparse itself exits with 2 on usage errors


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: expected a JSON object")
    return data


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _layout(cfg: dict) -> CarouselLayout:
    return CarouselLayout(**cfg.pop("layout")) if "layout" in cfg else REFERENCE_LAYOUT


def _splits_path(path) -> Path:
    path = Path(path)
    return path / "splits.csv" if path.is_dir() else path


def cmd_split(args) -> int:
    cfg = _read_config(args.config)
    layout = _layout(cfg)
    spec = SplitSpec(**cfg)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    raw = load_interactions(args.input, layout)
    splits = split_dataset(prepare(raw), spec)
    path = write_splits(splits, args.out)
    print(f"wrote {path}")
    for key in ("train", "subtrain", "validation", "test"):
        part = getattr(splits, key)
        print(f"  {key}: {part.n_sessions} sessions, {len(part)} records")
    log.debug("manifest: %s", splits.manifest)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _read_config(args.config)
    layout = _layout(cfg)
    seed = cfg.get("seed", 0) if args.seed is None else args.seed
    cfg["seed"] = seed
    config = FitConfig.from_dict(cfg)
    if args.scenario == Scenario.FIXED.value:
        config = replace(config, fixed_attraction=True)
    splits = load_splits(_splits_path(args.data), layout)
    # same protocol as one experiment row: tune on validation, refit on train
    row = run_config(config, splits, ExperimentSpec(layout=layout, seed=seed))
    _write_json(Path(args.out) / "fit.json", row.fit)
    print(f"{config.label()}: best iteration {row.iter}, lr {row.lr}")
    print(f"  test click: {row.test_ll:.4f}")
    if isinstance(row.test_oell, float):
        print(f"  test oell: {row.test_oell:.4f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _read_config(args.config)
    if args.scenario is not None:
        cfg["scenario"] = args.scenario
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["output"] = args.out
    spec = ExperimentSpec.from_dict(cfg)
    results = run_experiment(spec)
    emit_report(results, spec.output)
    sys.stdout.write(results_text(results))
    for row in results.failed:
        print(f"aborted: {row.model} {row.alg} {row.att_init} {row.exam_init}: {row.status}",
              file=sys.stderr)
    return EXIT_FAILED if results.failed else EXIT_OK


def cmd_simulate(args) -> int:
    gt = ground_truth_from_dict(_read_config(args.config), seed=args.seed)
    ds = simulate(gt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(ds, out / "interactions.csv")
    _write_json(out / "ground_truth.json", ground_truth_to_dict(gt))
    print(f"wrote {len(ds)} records from {ds.n_sessions} sessions to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    data = json.loads(Path(args.model).read_text(encoding="utf-8"))
    model = model_from_dict(data.get("model", data))
    cfg = _read_config(args.config)
    layout = _layout(cfg)
    ds = load_interactions(args.data, layout)
    reports = {k: r.to_dict() for k, r in evaluate(ds, model).items()}
    click, oell = dummy_baseline(ds)
    out = {"model": reports, "dummy": {"click": click.to_dict(), OELL: oell.to_dict()}}
    text = json.dumps(out, indent=1, sort_keys=True) + "\n"
    if args.out:
        _write_json(Path(args.out) / "evaluation.json", out)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="carousel-clicks",
                                     description="Fit and evaluate carousel click models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="overrides the seed in the config")
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("split", help="filter a raw log and write train/validation/test splits")
    p.add_argument("input", help="raw interaction file")
    common(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("fit", help="fit a single configuration")
    p.add_argument("data", help="splits.csv or the directory holding it")
    common(p)
    p.add_argument("--scenario", choices=[s.value for s in Scenario])
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("experiment", help="run the configuration matrix")
    common(p, out_required=False)
    p.add_argument("--scenario", choices=[s.value for s in Scenario])
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("simulate", help="write synthetic interactions from a ground truth")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="score a fitted model on a dataset")
    p.add_argument("model", help="fit.json or a model JSON")
    p.add_argument("data", help="interaction file")
    common(p, out_required=False)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (DataError, ConfigurationError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
