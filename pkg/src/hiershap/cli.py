"""Command-line pipeline: build hierarchies, explain, score, sweep, render.

Exit codes: 0 success, 2 usage or input error, 3 evaluator or transport
error. All commands are deterministic: identical inputs and flags produce
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EvaluationError, PartialResultError, ProtocolError
from .explainer import BudgetPolicy, load_saliency, owen_values, save_saliency
from .games import load_game_table
from .hierarchy import (
    DISTANCE_VARIANTS,
    KIND_AA,
    KIND_BPT,
    RasterImage,
    build_aa,
    build_bpt,
    load_tree,
    save_tree,
)
from .masking import Background, CachedGame, GroundTruth, ideal_linear_game
from .metrics import score_report
from .render import render_overlay
from .sweep import SweepConfig, rows_csv, run_sweep, summarize, summary_csv
from .synth import load_corpus, write_corpus

BRIDGE_ENV = "SHAPBPT_BRIDGE"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EVALUATOR = 3


class InputError(Exception):
    """Maps to exit code 2."""


@dataclass
class RunConfig:
    image: Path | None = None
    tree: Path | None = None
    kind: str = KIND_BPT
    distance: str = "default"
    budget: int | None = None
    priority: str = "weighted-gap"
    evaluator: str | None = None
    classes: tuple[int, ...] = (0,)
    grid: int | None = None
    ground_truth: Path | None = None
    out: Path | None = None
    seed: int = 0


def _existing(path: str | None, what: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.exists():
        raise InputError(f"{what} not found: {p}")
    return p


def _load_image(path: Path) -> RasterImage:
    try:
        return RasterImage.load(path)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc


def _load_truth(path: Path, n: int | None) -> GroundTruth:
    try:
        if path.suffix.lower() == ".png":
            return GroundTruth.load_png(path)
        if n is None:
            raise InputError(f"span ground truth {path} needs the image for its size")
        return GroundTruth.load_spans(path, n)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read ground truth {path}: {exc}") from exc


def make_evaluator(config: RunConfig, image: RasterImage):
    """Resolve the --evaluator spec into a game. Bridge addresses may be
    overridden by the SHAPBPT_BRIDGE environment variable."""
    spec = config.evaluator
    if spec is None:
        raise InputError("an --evaluator is required (ideal:<gt> | bridge:<host:port>)")
    kind, _, arg = spec.partition(":")
    if kind == "ideal":
        truth = _load_truth(_existing(arg, "ground truth"), image.num_pixels)
        if truth.n != image.num_pixels:
            raise InputError("ideal evaluator ground truth does not match the image size")
        return ideal_linear_game(truth)
    if kind == "table":
        return load_game_table(_existing(arg, "game table"))
    if kind == "bridge":
        address = os.environ.get(BRIDGE_ENV, arg)
        from .protocol import bridge_game

        return bridge_game(address, image.width, image.height, image.channels)
    raise InputError(f"unknown evaluator kind {kind!r}")


def _build_tree(config: RunConfig, image: RasterImage):
    if config.kind == KIND_BPT:
        return build_bpt(image, variant=config.distance)
    if config.kind == KIND_AA:
        return build_aa(image.width, image.height)
    raise InputError(f"unknown hierarchy kind {config.kind!r}")


def cmd_build_tree(config: RunConfig) -> int:
    image = _load_image(config.image)
    t0 = time.perf_counter()
    tree = _build_tree(config, image)
    elapsed = time.perf_counter() - t0
    save_tree(tree, config.out)
    print(f"nodes={tree.num_nodes} kind={tree.kind} build_seconds={elapsed:.3f} out={config.out}")
    return EXIT_OK


def cmd_explain(config: RunConfig) -> int:
    image = _load_image(config.image)
    if config.tree is not None:
        tree = load_tree(config.tree)
        if tree.n != image.num_pixels:
            raise InputError("tree does not match the image size")
        tree.width, tree.height = image.width, image.height
    else:
        tree = _build_tree(config, image)
    game = CachedGame(make_evaluator(config, image))
    policy = BudgetPolicy(
        budget=config.budget,
        priority_mode=config.priority,
        priority_class=config.classes[0],
    )
    saliency = owen_values(game, tree, policy, evaluator=config.evaluator)
    save_saliency(saliency, config.out)
    print(
        f"budget_spent={saliency.budget_spent} splits={saliency.split_evals // 2} "
        f"conservation_residual={saliency.conservation_residual():.3e} out={config.out}"
    )
    return EXIT_OK


def cmd_metrics(config: RunConfig, saliency_path: Path) -> int:
    saliency = load_saliency(saliency_path)
    image = _load_image(config.image)
    if (saliency.width, saliency.height) != (image.width, image.height):
        raise InputError("saliency dimensions do not match the image")
    truth = None
    if config.ground_truth is not None:
        truth = _load_truth(config.ground_truth, image.num_pixels)
        if truth.n != image.num_pixels:
            raise InputError("ground truth does not match the image size")
    game = CachedGame(make_evaluator(config, image))
    cls = config.classes[0]
    report = score_report(saliency, game, truth, grid=config.grid, cls=cls)
    outdir = config.out
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "report.json").write_text(report.to_json())
    for name in report.curves:
        (outdir / f"curve_{name}.csv").write_text(report.curve_csv(name))
    line = f"auc_plus={report.auc_plus:.6f} auc_minus={report.auc_minus:.6f}"
    if report.au_iou is not None:
        line += f" au_iou={report.au_iou:.6f} max_iou={report.max_iou:.6f}"
    print(line + f" out={outdir}")
    return EXIT_OK


def cmd_sweep(config: RunConfig, corpus: Path, budgets, kinds, jobs: int, per_image: Path | None) -> int:
    items = load_corpus(corpus)
    if not items:
        raise InputError(f"corpus {corpus} has no image/ground-truth pairs")
    sweep_config = SweepConfig(
        budgets=tuple(budgets),
        kinds=tuple(kinds),
        variant=config.distance,
        priority_mode=config.priority,
        grid=config.grid,
        jobs=jobs,
    )
    rows = run_sweep(items, sweep_config)
    config.out.write_text(summary_csv(summarize(rows)))
    if per_image is not None:
        per_image.write_text(rows_csv(rows))
    failures = sum(1 for r in rows if r.failed)
    print(f"images={len(items)} rows={len(rows)} failures={failures} out={config.out}")
    return EXIT_OK


def cmd_render(config: RunConfig, saliency_path: Path) -> int:
    saliency = load_saliency(saliency_path)
    image = _load_image(config.image)
    truth = None
    if config.ground_truth is not None:
        truth = _load_truth(config.ground_truth, image.num_pixels)
    overlay = render_overlay(image, saliency, cls=config.classes[0], truth=truth)
    overlay.save(config.out)
    print(f"out={config.out}")
    return EXIT_OK


def cmd_synth(out: Path, count: int, size: int, seed: int) -> int:
    manifest = write_corpus(out, count, seed0=seed, width=size, height=size)
    print(f"count={count} size={size}x{size} manifest={manifest}")
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiershap",
        description="Hierarchical Shapley saliency maps over image partition trees.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, image=False, out=True):
        if image:
            p.add_argument("--image", required=True, help="input PNG (8-bit RGB or gray)")
        if out:
            p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("build-tree", help="build and save a partition tree")
    common(p, image=True)
    p.add_argument("--kind", choices=(KIND_BPT, KIND_AA), default=KIND_BPT)
    p.add_argument("--distance", choices=DISTANCE_VARIANTS, default="default")

    p = sub.add_parser("explain", help="compute a saliency map")
    common(p, image=True)
    p.add_argument("--tree", help="prebuilt tree file (otherwise built from --kind)")
    p.add_argument("--kind", choices=(KIND_BPT, KIND_AA), default=KIND_BPT)
    p.add_argument("--distance", choices=DISTANCE_VARIANTS, default="default")
    p.add_argument("--budget", type=int, default=1000, help="max worth evaluations for splits")
    p.add_argument("--priority", choices=("weighted-gap", "weight-only", "signed-gap"), default="weighted-gap")
    p.add_argument("--evaluator", required=True, help="ideal:<gt-path> | bridge:<host:port> | table:<path>")
    p.add_argument("--classes", type=_int_list, default=[0], help="classes to explain; first steers the priority")

    p = sub.add_parser("metrics", help="score a saliency map")
    common(p, image=True)
    p.add_argument("--saliency", required=True)
    p.add_argument("--evaluator", required=True)
    p.add_argument("--ground-truth", help="PNG mask (nonzero pixels) or span text file")
    p.add_argument("--grid", type=int, default=None, help="quantile steps (default min(n, 100))")
    p.add_argument("--classes", type=_int_list, default=[0])

    p = sub.add_parser("sweep", help="explain and score a corpus over budgets")
    common(p)
    p.add_argument("--corpus", required=True, help="directory from the synth command")
    p.add_argument("--budgets", type=_int_list, required=True)
    p.add_argument("--kinds", default="bpt,aa", help="comma list of hierarchy kinds")
    p.add_argument("--distance", choices=DISTANCE_VARIANTS, default="default")
    p.add_argument("--priority", choices=("weighted-gap", "weight-only", "signed-gap"), default="weighted-gap")
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--per-image", help="also write one row per (image, kind, budget)")

    p = sub.add_parser("render", help="render a saliency heatmap over the image")
    common(p, image=True)
    p.add_argument("--saliency", required=True)
    p.add_argument("--ground-truth")
    p.add_argument("--classes", type=_int_list, default=[0])

    p = sub.add_parser("synth", help="generate a seeded synthetic blob corpus")
    common(p)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    config = RunConfig(
        image=_existing(getattr(args, "image", None), "image"),
        tree=_existing(getattr(args, "tree", None), "tree"),
        kind=getattr(args, "kind", KIND_BPT),
        distance=getattr(args, "distance", "default"),
        budget=getattr(args, "budget", None),
        priority=getattr(args, "priority", "weighted-gap"),
        evaluator=getattr(args, "evaluator", None),
        classes=tuple(getattr(args, "classes", [0])) or (0,),
        grid=getattr(args, "grid", None),
        ground_truth=_existing(getattr(args, "ground_truth", None), "ground truth"),
        out=Path(args.out) if getattr(args, "out", None) else None,
        seed=getattr(args, "seed", 0),
    )
    if args.command == "build-tree":
        return cmd_build_tree(config)
    if args.command == "explain":
        return cmd_explain(config)
    if args.command == "metrics":
        return cmd_metrics(config, _existing(args.saliency, "saliency"))
    if args.command == "sweep":
        return cmd_sweep(
            config,
            _existing(args.corpus, "corpus"),
            args.budgets,
            [k for k in args.kinds.split(",") if k],
            args.jobs,
            Path(args.per_image) if args.per_image else None,
        )
    if args.command == "render":
        return cmd_render(config, _existing(args.saliency, "saliency"))
    if args.command == "synth":
        return cmd_synth(config.out, args.count, args.size, args.seed)
    raise InputError(f"unknown command {args.command}")


def main(argv=None) -> None:
    try:
        sys.exit(run(argv))
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        sys.exit(EXIT_INPUT)
    except (EvaluationError, ProtocolError) as exc:
        print(f"evaluator error: {exc}", file=sys.stderr)
        sys.exit(EXIT_EVALUATOR)
    except PartialResultError as exc:
        print(f"evaluator failed mid-run: {exc}", file=sys.stderr)
        sys.exit(EXIT_EVALUATOR)


if __name__ == "__main__":
    main()
