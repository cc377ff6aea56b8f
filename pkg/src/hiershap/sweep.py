"""Budget sweeps over an image corpus: explain, score, aggregate.

One tree build per (image, kind); the coalition cache is shared across the
budgets of an image so repeated worth queries are free. Rows come back in
deterministic (image, kind, budget) order regardless of worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .explainer import BudgetPolicy, owen_values
from .hierarchy import KIND_AA, KIND_BPT, RasterImage, build_aa, build_bpt
from .masking import CachedGame, GroundTruth, ideal_linear_game
from .metrics import iou_curve, score_report

DEFAULT_KINDS = (KIND_BPT, KIND_AA)


@dataclass
class SweepRow:
    item: int
    kind: str
    budget: int
    auc_plus: float | None = None
    auc_minus: float | None = None
    au_iou: float | None = None
    max_iou: float | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass
class SweepConfig:
    budgets: tuple[int, ...]
    kinds: tuple[str, ...] = DEFAULT_KINDS
    variant: str = "default"
    priority_mode: str = "weighted-gap"
    grid: int | None = None
    jobs: int = 1
    with_auc: bool = True


def build_hierarchy(image: RasterImage, kind: str, variant: str = "default"):
    if kind == KIND_BPT:
        return build_bpt(image, variant=variant)
    if kind == KIND_AA:
        return build_aa(image.width, image.height)
    raise ValueError(f"unknown hierarchy kind {kind!r}")


def sweep_item(args) -> list[SweepRow]:
    index, image, truth, config = args
    rows: list[SweepRow] = []
    game = CachedGame(ideal_linear_game(truth))
    for kind in config.kinds:
        try:
            tree = build_hierarchy(image, kind, config.variant)
        except Exception as exc:
            rows.extend(
                SweepRow(index, kind, b, error=f"build: {exc}") for b in config.budgets
            )
            continue
        for budget in config.budgets:
            try:
                policy = BudgetPolicy(budget=budget, priority_mode=config.priority_mode)
                saliency = owen_values(game, tree, policy)
                if config.with_auc:
                    report = score_report(saliency, game, truth, grid=config.grid)
                    rows.append(
                        SweepRow(
                            index,
                            kind,
                            budget,
                            report.auc_plus,
                            report.auc_minus,
                            report.au_iou,
                            report.max_iou,
                        )
                    )
                else:
                    au_iou, max_iou, _ = iou_curve(
                        saliency.values[0], truth, grid=config.grid
                    )
                    rows.append(SweepRow(index, kind, budget, None, None, au_iou, max_iou))
            except Exception as exc:
                rows.append(SweepRow(index, kind, budget, error=str(exc)))
    return rows


def run_sweep(
    items: list[tuple[RasterImage, GroundTruth]], config: SweepConfig
) -> list[SweepRow]:
    tasks = [(k, image, truth, config) for k, (image, truth) in enumerate(items)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            per_item = list(pool.map(sweep_item, tasks))
    else:
        per_item = [sweep_item(t) for t in tasks]
    return [row for rows in per_item for row in rows]


@dataclass
class SweepSummary:
    kind: str
    budget: int
    count: int
    failures: int
    mean_auc_plus: float | None
    mean_auc_minus: float | None
    mean_au_iou: float | None
    mean_max_iou: float | None


def summarize(rows: list[SweepRow]) -> list[SweepSummary]:
    """Mean scores per (kind, budget), failed rows counted separately."""
    keys = sorted({(r.kind, r.budget) for r in rows}, key=lambda kb: (kb[0], kb[1]))
    out = []
    for kind, budget in keys:
        group = [r for r in rows if r.kind == kind and r.budget == budget]
        ok = [r for r in group if not r.failed]

        def mean(attr):
            vals = [getattr(r, attr) for r in ok if getattr(r, attr) is not None]
            return float(np.mean(vals)) if vals else None

        out.append(
            SweepSummary(
                kind=kind,
                budget=budget,
                count=len(ok),
                failures=len(group) - len(ok),
                mean_auc_plus=mean("auc_plus"),
                mean_auc_minus=mean("auc_minus"),
                mean_au_iou=mean("au_iou"),
                mean_max_iou=mean("max_iou"),
            )
        )
    return out


def summary_csv(summaries: list[SweepSummary]) -> str:
    lines = ["kind,budget,count,failures,auc_plus,auc_minus,au_iou,max_iou"]
    for s in summaries:
        cells = [s.kind, s.budget, s.count, s.failures]
        for v in (s.mean_auc_plus, s.mean_auc_minus, s.mean_au_iou, s.mean_max_iou):
            cells.append("" if v is None else repr(v))
        lines.append(",".join(str(c) for c in cells))
    return "\n".join(lines) + "\n"


def rows_csv(rows: list[SweepRow]) -> str:
    lines = ["item,kind,budget,auc_plus,auc_minus,au_iou,max_iou,error"]
    for r in rows:
        cells = [r.item, r.kind, r.budget]
        for v in (r.auc_plus, r.auc_minus, r.au_iou, r.max_iou):
            cells.append("" if v is None else repr(v))
        cells.append(r.error or "")
        lines.append(",".join(str(c) for c in cells))
    return "\n".join(lines) + "\n"
