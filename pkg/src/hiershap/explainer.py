"""Budgeted hierarchical Shapley attribution over a partition tree.

The computation maintains a priority queue of pending tuples
(weight, context, region, worth(context), worth(context + region)).
Popping a divisible region while budget remains splits it: the two child
regions are evaluated against the context (two worth queries), and four
half-weight tuples are pushed, covering each child both with and without
its sibling joined to the context. Popping an indivisible region, or any
region once the budget is down to one evaluation, distributes the tuple's
mass uniformly over the region's pixels:

    value[i] += weight * (worth(context + region) - worth(context)) / |region|

Every split replaces a tuple's mass by four masses with the same total, so
the per-class sum over pixels always equals worth(all) - worth(none), at
any budget.
"""

from __future__ import annotations

import heapq
import json
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import EvaluationError, PartialResultError, StructuralError
from .games import Coalition
from .hierarchy import PartitionTree

PRIORITY_WEIGHTED_GAP = "weighted-gap"
PRIORITY_WEIGHT_ONLY = "weight-only"
PRIORITY_SIGNED_GAP = "signed-gap"
PRIORITY_MODES = (PRIORITY_WEIGHTED_GAP, PRIORITY_WEIGHT_ONLY, PRIORITY_SIGNED_GAP)

SALIENCY_MAGIC = b"SMP1"


@dataclass(frozen=True)
class BudgetPolicy:
    """Evaluation budget and split-ordering rule.

    ``budget`` is the maximum number of worth evaluations spent on splits
    (two per split); ``None`` runs to full leaf refinement. The two
    bootstrap evaluations of the empty and the full coalition are not
    charged against it. ``weighted-gap`` splits the tuple with the largest
    absolute attributable mass for ``priority_class``; ``weight-only``
    splits by structural weight alone; ``signed-gap`` prefers the most
    positive mass.
    """

    budget: int | None = None
    priority_mode: str = PRIORITY_WEIGHTED_GAP
    priority_class: int = 0

    def __post_init__(self):
        if self.budget is not None and self.budget < 0:
            raise ValueError("budget must be nonnegative")
        if self.priority_mode not in PRIORITY_MODES:
            raise ValueError(f"unknown priority mode {self.priority_mode!r}")


@dataclass(frozen=True)
class QueueEntry:
    """One pending expansion: context coalition, target region, cached worths."""

    w: Fraction
    q: Coalition
    node: int
    v_q: tuple
    v_qt: tuple
    seq: int


@dataclass
class SaliencyMap:
    """Per-pixel, per-class attribution values plus run provenance."""

    values: np.ndarray  # (num_classes, n) float64
    width: int
    height: int
    budget_requested: int | None
    budget_spent: int
    split_evals: int
    bootstrap_evals: int
    hierarchy: str
    priority_mode: str
    priority_class: int
    evaluator: str
    total: np.ndarray  # per class: worth(all) - worth(none)
    meta: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]

    @property
    def num_pixels(self) -> int:
        return self.values.shape[1]

    def plane(self, cls: int = 0) -> np.ndarray:
        return self.values[cls].reshape(self.height, self.width)

    def conservation_residual(self) -> float:
        return float(np.max(np.abs(self.values.sum(axis=1) - self.total)))


def _entry_key(mode: str, cls: int, w: Fraction, v_q, v_qt) -> float:
    if mode == PRIORITY_WEIGHT_ONLY:
        return float(w)
    gap = float(w) * (v_qt[cls] - v_q[cls])
    return gap if mode == PRIORITY_SIGNED_GAP else abs(gap)


def split_entry(
    tree: PartitionTree,
    entry: QueueEntry,
    v_qt1: tuple,
    v_qt2: tuple,
    next_seq: int,
    masks: list[int],
) -> tuple[QueueEntry, QueueEntry, QueueEntry, QueueEntry]:
    """The four half-weight successors of a divisible entry.

    ``v_qt1`` and ``v_qt2`` are the fresh worths of context + first child
    and context + second child; the parent's endpoint worths are reused as
    the remaining cached values.
    """
    if tree.is_leaf(entry.node):
        raise StructuralError(f"node {entry.node} is indivisible")
    t1, t2 = tree.children(entry.node)
    half = entry.w / 2
    q = entry.q
    return (
        QueueEntry(half, q, t1, entry.v_q, v_qt1, next_seq),
        QueueEntry(half, q | masks[t2], t1, v_qt2, entry.v_qt, next_seq + 1),
        QueueEntry(half, q, t2, entry.v_q, v_qt2, next_seq + 2),
        QueueEntry(half, q | masks[t1], t2, v_qt1, entry.v_qt, next_seq + 3),
    )


def owen_values(
    game,
    tree: PartitionTree,
    policy: BudgetPolicy = BudgetPolicy(),
    evaluator: str | None = None,
    trace_finalized: list | None = None,
) -> SaliencyMap:
    """Attribute worth to every pixel under the tree's coalition hierarchy.

    ``game`` needs ``num_players`` matching the tree's leaf count,
    ``num_classes``, and an order-aligned ``evaluate_batch``. All classes
    accumulate in one pass; the policy's class only steers the split order.
    """
    n = tree.n
    if game.num_players != n:
        raise StructuralError(
            f"game has {game.num_players} players, tree has {n} leaves"
        )
    classes = game.num_classes
    if not (0 <= policy.priority_class < classes):
        raise ValueError(f"priority class {policy.priority_class} out of range")

    values = np.zeros((classes, n))
    width = tree.width if tree.width is not None else n
    height = tree.height if tree.height is not None else 1
    evaluator = evaluator if evaluator is not None else getattr(game, "name", "game")
    masks = tree.node_masks()
    full_mask = masks[tree.root]

    def make_map(spent_splits: int, bootstrap: int, total) -> SaliencyMap:
        return SaliencyMap(
            values=values,
            width=width,
            height=height,
            budget_requested=policy.budget,
            budget_spent=spent_splits + bootstrap,
            split_evals=spent_splits,
            bootstrap_evals=bootstrap,
            hierarchy=tree.kind,
            priority_mode=policy.priority_mode,
            priority_class=policy.priority_class,
            evaluator=evaluator,
            total=np.zeros(classes) if total is None else np.asarray(total, dtype=np.float64),
        )

    try:
        bootstrap = game.evaluate_batch([0, full_mask])
    except Exception as exc:
        raise PartialResultError(
            f"bootstrap evaluation failed: {exc}", make_map(0, 0, None), None
        ) from exc
    v_empty = tuple(float(v) for v in bootstrap[0])
    v_full = tuple(float(v) for v in bootstrap[1])
    total = np.array(v_full) - np.array(v_empty)

    mode, cls = policy.priority_mode, policy.priority_class
    remaining = policy.budget
    split_evals = 0
    seq = 0
    root_entry = QueueEntry(Fraction(1), 0, tree.root, v_empty, v_full, seq)
    seq += 1
    heap = [(-_entry_key(mode, cls, root_entry.w, v_empty, v_full), root_entry.seq, root_entry)]

    while heap:
        _, _, entry = heapq.heappop(heap)
        node = entry.node
        if tree.is_leaf(node) or (remaining is not None and remaining <= 1):
            share = float(entry.w) / tree.region_size(node)
            gap = np.array(entry.v_qt) - np.array(entry.v_q)
            values[:, tree.region_pixel_array(node)] += (share * gap)[:, None]
            if trace_finalized is not None:
                trace_finalized.append(entry)
            continue
        t1, t2 = tree.children(node)
        batch = [entry.q | masks[t1], entry.q | masks[t2]]
        try:
            worths = game.evaluate_batch(batch)
        except Exception as exc:
            index = exc.index if isinstance(exc, EvaluationError) else None
            failing = batch[index] if index is not None and index < len(batch) else None
            raise PartialResultError(
                f"worth evaluation failed mid-run: {exc}",
                make_map(split_evals, 2, total),
                failing,
            ) from exc
        v_qt1 = tuple(float(v) for v in worths[0])
        v_qt2 = tuple(float(v) for v in worths[1])
        if remaining is not None:
            remaining -= 2
        split_evals += 2
        for child in split_entry(tree, entry, v_qt1, v_qt2, seq, masks):
            heapq.heappush(
                heap,
                (-_entry_key(mode, cls, child.w, child.v_q, child.v_qt), child.seq, child),
            )
        seq += 4

    return make_map(split_evals, 2, total)


def full_expansion_eval_count(game, tree: PartitionTree, depth: int) -> int:
    """Split evaluations consumed by exhaustively expanding to ``depth``.

    The tree must be full down to that depth (no leaf shallower than it).
    Weight-only ordering makes the expansion breadth-first, so a budget of
    exactly the recurrence value finishes the last split of the target
    depth with nothing left over.
    """
    from .oracle import expected_eval_count

    frontier = [(tree.root, 0)]
    while frontier:
        node, d = frontier.pop()
        if d < depth:
            if tree.is_leaf(node):
                raise StructuralError(
                    f"tree is not full to depth {depth}: leaf at depth {d}"
                )
            a, b = tree.children(node)
            frontier.extend([(a, d + 1), (b, d + 1)])
    policy = BudgetPolicy(budget=expected_eval_count(depth), priority_mode=PRIORITY_WEIGHT_ONLY)
    result = owen_values(game, tree, policy)
    return result.split_evals


def save_saliency(saliency: SaliencyMap, path) -> None:
    """Header, one float32 plane per class (row-major), JSON metadata trailer."""
    meta = {
        "budget": saliency.budget_requested,
        "budget_spent": saliency.budget_spent,
        "split_evals": saliency.split_evals,
        "bootstrap_evals": saliency.bootstrap_evals,
        "hierarchy": saliency.hierarchy,
        "priority_mode": saliency.priority_mode,
        "priority_class": saliency.priority_class,
        "evaluator": saliency.evaluator,
        "total": [float(v) for v in saliency.total],
    }
    meta.update(saliency.meta)
    with open(path, "wb") as fh:
        fh.write(SALIENCY_MAGIC)
        fh.write(struct.pack("<III", saliency.width, saliency.height, saliency.num_classes))
        fh.write(np.asarray(saliency.values, dtype="<f4").tobytes())
        fh.write(json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8"))


def load_saliency(path) -> SaliencyMap:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SALIENCY_MAGIC:
        raise StructuralError(f"{path}: not a saliency file")
    width, height, classes = struct.unpack_from("<III", data, 4)
    n = width * height
    body = 16 + 4 * n * classes
    if len(data) < body:
        raise StructuralError(f"{path}: truncated value planes")
    values = (
        np.frombuffer(data, dtype="<f4", count=n * classes, offset=16)
        .astype(np.float64)
        .reshape(classes, n)
    )
    meta = json.loads(data[body:].decode("utf-8")) if len(data) > body else {}
    known = {}
    for key in (
        "budget",
        "budget_spent",
        "split_evals",
        "bootstrap_evals",
        "hierarchy",
        "priority_mode",
        "priority_class",
        "evaluator",
        "total",
    ):
        known[key] = meta.pop(key, None)
    return SaliencyMap(
        values=values,
        width=int(width),
        height=int(height),
        budget_requested=known["budget"],
        budget_spent=known["budget_spent"] or 0,
        split_evals=known["split_evals"] or 0,
        bootstrap_evals=known["bootstrap_evals"] or 0,
        hierarchy=known["hierarchy"] or "unknown",
        priority_mode=known["priority_mode"] or "unknown",
        priority_class=known["priority_class"] or 0,
        evaluator=known["evaluator"] or "unknown",
        total=np.asarray(known["total"] or [0.0] * classes, dtype=np.float64),
        meta=meta,
    )
