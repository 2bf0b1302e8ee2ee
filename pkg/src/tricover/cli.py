"""Command-line harness.

Subcommands map to campaign modes: ``coverage`` (random evaluation),
``generate`` (guided generation), ``baseline`` (neuron-coverage growth
curve), plus ``report`` to render saved reports as a summary table.
Flags override values from an optional JSON config file (--config).
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .errors import TricoverError
from .generate import GenParams
from .harness import CampaignConfig, read_report, render_table, run_campaign

_DEFAULTS = {
    "labels": None,
    "seeds": 10,
    "rng_seed": 0,
    "threshold": 0.0,
    "lambda1": 1.0,
    "lambda2": 0.1,
    "step_size": 0.1,
    "max_iters": 1000,
    "out": None,
    "target_model": 0,
    "dump_candidates": None,
    "retarget_each_iteration": False,
}

_MODE_BY_COMMAND = {
    "coverage": "random-eval",
    "generate": "guided-generate",
    "baseline": "neuron-coverage-baseline",
}


def _add_campaign_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--models", nargs="+", metavar="PATH",
                     help="model files in exchange format v1")
    sub.add_argument("--images", metavar="PATH", help="IDX image file")
    sub.add_argument("--labels", metavar="PATH", help="IDX label file (optional)")
    sub.add_argument("--seeds", type=int, metavar="N",
                     help="number of dataset inputs to sample (default 10)")
    sub.add_argument("--rng-seed", type=int, metavar="S",
                     help="seed for all random choices (default 0)")
    sub.add_argument("--threshold", type=float, metavar="T",
                     help="activation predicate cutoff (default 0)")
    sub.add_argument("--lambda1", type=float, metavar="X",
                     help="differential term weight (default 1)")
    sub.add_argument("--lambda2", type=float, metavar="X",
                     help="coverage term weight (default 0.1)")
    sub.add_argument("--step-size", type=float, metavar="X",
                     help="brightness step per iteration (default 0.1)")
    sub.add_argument("--max-iters", type=int, metavar="N",
                     help="ascent iteration budget per seed (default 1000)")
    sub.add_argument("--out", metavar="PATH", help="write the JSON report here")
    sub.add_argument("--config", metavar="FILE",
                     help="JSON file with the same keys; flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tricover",
        description="Triplet-coverage measurement and guided test-input "
                    "generation for feed-forward networks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command, help_text in (
        ("coverage", "measure coverage of randomly sampled dataset inputs"),
        ("generate", "generate inputs by coverage-guided gradient ascent"),
        ("baseline", "record neuron- and triplet-coverage growth per input"),
    ):
        p = sub.add_parser(command, help=help_text)
        _add_campaign_args(p)
    rep = sub.add_parser("report", help="summarize saved reports as a table")
    rep.add_argument("paths", nargs="+", metavar="REPORT",
                     help="report JSON files to summarize")
    return parser


def _load_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise TricoverError(f"cannot read config file {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise TricoverError(f"{path}: invalid JSON: {exc.msg} "
                            f"(line {exc.lineno})") from None
    if not isinstance(obj, dict):
        raise TricoverError(f"{path}: config file must hold a JSON object")
    unknown = set(obj) - set(_DEFAULTS) - {"models", "images"}
    if unknown:
        raise TricoverError(f"{path}: unknown config keys: {sorted(unknown)}")
    return obj


def _resolve(args: argparse.Namespace) -> CampaignConfig:
    file_values = _load_config_file(args.config) if args.config else {}

    def pick(flag_value, key):
        if flag_value is not None:
            return flag_value
        if key in file_values:
            return file_values[key]
        return _DEFAULTS.get(key)

    models = pick(args.models, "models")
    images = pick(args.images, "images")
    if not models:
        raise TricoverError("no models given (use --models or the config file)")
    if not images:
        raise TricoverError("no image file given (use --images or the config file)")

    rng_seed = int(pick(args.rng_seed, "rng_seed"))
    params = GenParams(
        lambda1=float(pick(args.lambda1, "lambda1")),
        lambda2=float(pick(args.lambda2, "lambda2")),
        step_size=float(pick(args.step_size, "step_size")),
        max_iterations=int(pick(args.max_iters, "max_iters")),
        threshold=float(pick(args.threshold, "threshold")),
        rng_seed=rng_seed,
        retarget_each_iteration=bool(pick(None, "retarget_each_iteration")),
    )
    return CampaignConfig(
        mode=_MODE_BY_COMMAND[args.command],
        model_paths=tuple(str(m) for m in models),
        images_path=str(images),
        labels_path=pick(args.labels, "labels"),
        seed_count=int(pick(args.seeds, "seeds")),
        rng_seed=rng_seed,
        params=params,
        report_path=pick(args.out, "out"),
        target_model=int(pick(None, "target_model")),
        dump_candidates=pick(None, "dump_candidates"),
    )


def _print_summary(report) -> None:
    final = report.coverage_final
    print(f"mode: {report.mode}")
    print(f"inputs tested: {report.inputs_tested}")
    print(f"triplet coverage: {100.0 * final.triplet_coverage:.2f}% "
          f"({final.fully_covered}/{final.total_triplets})")
    print(f"pair-cell coverage: {100.0 * final.pair_cell_coverage:.2f}%")
    print(f"neuron coverage: {100.0 * report.neuron_coverage:.2f}% "
          f"({report.neurons_covered}/{report.neurons_total})")
    print(f"corner cases: {report.corner_cases}")
    print(f"adversarial ratio: {100.0 * report.adversarial_ratio:.2f}%")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            reports = [read_report(p) for p in args.paths]
            sys.stdout.write(render_table(reports))
            return 0
        config = _resolve(args)
        report = run_campaign(config)
        _print_summary(report)
        if config.report_path:
            print(f"report written to {config.report_path}")
        return 0
    except (TricoverError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
