"""Acceptance suite: one test per release criterion, each printing a verdict.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines. All tolerances are pinned here; the blob-corpus criteria share one
module-scoped sweep over 50 seeded images.
"""

import functools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import random_game, random_partition_tree
from hiershap.explainer import BudgetPolicy, full_expansion_eval_count, owen_values
from hiershap.hierarchy import (
    RasterImage,
    build_aa,
    build_bpt,
    load_tree,
    recount_perimeter,
    region_pixels,
    save_tree,
    to_structure,
    tree_validate,
)
from hiershap.masking import GroundTruth, ideal_linear_game
from hiershap.metrics import auc_curves, iou_curve
from hiershap.oracle import enumerate_marginals, from_nested, owen_hcs_recursive, owen_two_level
from hiershap.sweep import SweepConfig, run_sweep, summarize
from hiershap.synth import make_corpus

CORPUS_SIZE = 50
BUDGET_GRID = tuple(range(100, 1001, 100))


def criterion(number, summary):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\n[criterion {number:>2}] FAIL: {summary}")
                raise
            print(f"\n[criterion {number:>2}] PASS: {summary}")

        return wrapper

    return decorate


def spearman(xs, ys):
    def ranks(v):
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        r[order] = np.arange(len(v), dtype=np.float64)
        for u in np.unique(v):
            tie = v == u
            r[tie] = r[tie].mean()
        return r

    rx, ry = ranks(xs), ranks(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float((rx**2).sum() * (ry**2).sum()))
    return float((rx * ry).sum() / denom) if denom > 0 else 0.0


@pytest.fixture(scope="module")
def corpus():
    return [(s.image, s.truth) for s in make_corpus(CORPUS_SIZE, seed0=0)]


@pytest.fixture(scope="module")
def corpus_curves(corpus):
    config = SweepConfig(budgets=BUDGET_GRID, kinds=("bpt", "aa"), jobs=2, with_auc=False)
    summaries = summarize(run_sweep(corpus, config))
    by_kind = {"bpt": {}, "aa": {}}
    for s in summaries:
        assert s.failures == 0
        by_kind[s.kind][s.budget] = s
    return by_kind


@criterion(1, "worked-example decompositions reproduced as exact rationals")
def test_appendix_example_exactness():
    # Two-level example over players 1..6, teams {1,2} {3,4,5} {6}.
    structure = from_nested([[1, 2], [3, 4, 5], [6]])
    terms = enumerate_marginals(structure, 1)
    assert len(terms) == 8
    f6, f12 = Fraction(1, 6), Fraction(1, 12)
    expected = {
        (f6, frozenset()),
        (f6, frozenset({2})),
        (f6, frozenset({3, 4, 5, 6})),
        (f6, frozenset({3, 4, 5, 6, 2})),
        (f12, frozenset({6})),
        (f12, frozenset({6, 2})),
        (f12, frozenset({3, 4, 5})),
        (f12, frozenset({3, 4, 5, 2})),
    }
    assert {(t.weight, t.context) for t in terms} == expected
    assert sorted(t.weight for t in terms) == [f12] * 4 + [f6] * 4
    assert sum(t.weight for t in terms) == Fraction(1)

    # Three-level example over players 1..8.
    structure = from_nested([[[1, 2], [3, 4]], [[5, 6], [7], [8]]])
    terms = enumerate_marginals(structure, 1)
    assert len(terms) == 8
    assert all(t.weight == Fraction(1, 8) for t in terms)
    r = frozenset({5, 6, 7, 8})
    expected = {
        frozenset(),
        frozenset({2}),
        r,
        r | {2},
        frozenset({3, 4}),
        frozenset({3, 4, 2}),
        r | {3, 4},
        r | {3, 4, 2},
    }
    assert {t.context for t in terms} == expected


@criterion(2, "explainer matches the recursive oracle (1e-9); two-level matches (1e-12)")
def test_oracle_equivalence():
    rng = np.random.default_rng(2024)
    worst_binary = 0.0
    worst_two_level = 0.0
    for _ in range(200):
        n = int(rng.integers(4, 13))
        game = random_game(rng, n)

        tree = random_partition_tree(rng, n)
        result = owen_values(game, tree, BudgetPolicy(budget=None))
        structure = to_structure(tree)
        for i in range(n):
            expected = owen_hcs_recursive(game, structure, 0, i)
            worst_binary = max(worst_binary, abs(result.values[0][i] - expected))

        players = list(rng.permutation(n))
        teams = []
        while players:
            k = int(rng.integers(1, min(4, len(players)) + 1))
            teams.append([int(p) for p in players[:k]])
            players = players[k:]
        if len(teams) < 2:
            teams = [teams[0][:1], teams[0][1:]]
        flat = from_nested(teams)
        probe = int(rng.integers(0, n))
        a = owen_two_level(game, teams, probe)
        b = owen_hcs_recursive(game, flat, 0, probe)
        worst_two_level = max(worst_two_level, abs(a - b))
    assert worst_binary < 1e-9, f"binary-tree deviation {worst_binary}"
    assert worst_two_level < 1e-12, f"two-level deviation {worst_two_level}"


@criterion(3, "per-class totals conserved at every budget (1e-6 relative)")
def test_conservation_at_every_budget():
    rng = np.random.default_rng(77)
    for _ in range(100):
        n = int(rng.integers(2, 13))
        game = random_game(rng, n)
        tree = random_partition_tree(rng, n)
        budget = int(rng.integers(0, 2 * n * n))
        result = owen_values(game, tree, BudgetPolicy(budget=budget))
        gap = float(result.total[0])
        residual = abs(float(result.values[0].sum()) - gap)
        assert residual < 1e-6 * max(1.0, abs(gap))


@criterion(4, "balanced expansion to depth 1/2/3 costs exactly 2/10/42 evaluations")
def test_cost_recurrence():
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    for depth, expected in ((1, 2), (2, 10), (3, 42)):
        n = 1 << depth
        game = random_game(rng, n)
        tree = build_aa(n, 1)
        assert full_expansion_eval_count(game, tree, depth) == expected
    assert time.perf_counter() - t0 < 1.0


@criterion(5, "ideal-model closed forms: AUC+ 0.875, AUC- 0.125, max-IoU 1, AU-IoU 0.125+0.25 ln 4")
def test_ideal_model_closed_forms():
    n, gamma = 4096, 0.25
    g = int(n * gamma)
    truth = GroundTruth.from_indices(range(g), n)
    game = ideal_linear_game(truth)
    saliency = np.zeros(n)
    saliency[:g] = 1.0

    auc_plus, auc_minus, _ = auc_curves(saliency, game, grid=n)
    assert auc_plus == pytest.approx(0.875, abs=1e-12)
    assert auc_minus == pytest.approx(0.125, abs=1e-12)

    au_iou, max_iou, _ = iou_curve(saliency, truth, grid=n)
    assert max_iou == 1.0
    assert abs(au_iou - (0.125 + 0.25 * math.log(4))) < 2 / n


@criterion(6, "data-aware hierarchy beats the axis-aligned grid at budget 100")
def test_bpt_beats_aa(corpus_curves):
    bpt = corpus_curves["bpt"][100]
    aa = corpus_curves["aa"][100]
    assert bpt.count >= 50 and aa.count >= 50
    assert bpt.mean_max_iou > aa.mean_max_iou, (bpt.mean_max_iou, aa.mean_max_iou)
    assert bpt.mean_au_iou > aa.mean_au_iou, (bpt.mean_au_iou, aa.mean_au_iou)


@criterion(7, "scores converge monotonically and the data-aware hierarchy converges first")
def test_convergence_monotonicity(corpus_curves):
    budgets = list(BUDGET_GRID)
    bpt_curve = [corpus_curves["bpt"][b].mean_au_iou for b in budgets]
    aa_curve = [corpus_curves["aa"][b].mean_au_iou for b in budgets]

    rho = spearman(budgets, bpt_curve)
    assert rho >= 0.9, f"mean AU-IoU vs budget rank correlation {rho}"

    def crossing(curve):
        threshold = 0.95 * curve[-1]
        return next(b for b, v in zip(budgets, curve) if v >= threshold)

    bpt_at, aa_at = crossing(bpt_curve), crossing(aa_curve)
    assert bpt_at < aa_at, f"95% crossings: bpt at {bpt_at}, aa at {aa_at}"


@criterion(8, "hierarchy structural suite holds on 100 random images")
def test_hierarchy_structural_suite(tmp_path):
    rng = np.random.default_rng(88)
    cases = [(2, 1), (32, 32)]
    while len(cases) < 100:
        w = int(rng.integers(1, 33))
        h = int(rng.integers(1, 33))
        if w * h >= 2:
            cases.append((w, h))
    tree_path = tmp_path / "tree.bpt"
    for index, (w, h) in enumerate(cases):
        image = RasterImage(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))
        tree, stats = build_bpt(image, return_stats=True)
        assert tree.num_nodes == 2 * w * h - 1
        problems = tree_validate(tree, image)
        assert problems == [], f"{w}x{h} case {index}: {problems}"
        for node in range(tree.num_nodes):
            tracked = int(stats["perimeter"][node])
            assert tracked == recount_perimeter(region_pixels(tree, node), w, h)
        save_tree(tree, tree_path)
        first = tree_path.read_bytes()
        save_tree(load_tree(tree_path), tree_path)
        assert tree_path.read_bytes() == first


@criterion(9, "dropping the color term degrades localization")
def test_distance_ablation_direction(corpus, corpus_curves):
    config = SweepConfig(
        budgets=(100,), kinds=("bpt",), variant="no-color", jobs=2, with_auc=False
    )
    no_color = summarize(run_sweep(corpus, config))[0]
    assert no_color.failures == 0
    default = corpus_curves["bpt"][100]
    assert no_color.mean_max_iou < default.mean_max_iou, (
        no_color.mean_max_iou,
        default.mean_max_iou,
    )
