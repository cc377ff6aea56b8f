"""Exact Shapley and Owen coalition values for small games.

Enumeration-based reference implementations, used as ground truth by the
budgeted explainer's tests. Weights are exact ``Fraction``s; worths are
floats supplied by a :class:`~hiershap.games.CharacteristicGame`.

Conventions
-----------
- Players are nonnegative integers; coalitions are ``frozenset``s here
  (converted to bitmasks only when querying a game).
- A coalition structure is a tree: a node either carries an ordered tuple
  of two or more children that partition its member set, or is an
  indivisible block.
- The Owen value of player i under a structure recurses through the chain
  of nodes containing i. At a node with m children, the children not
  containing i join the context coalition as whole blocks, each subset U
  of them weighted 1 / (m * C(m-1, |U|)). An indivisible block B finally
  contributes its block marginal against the accumulated context, split
  uniformly: (v(Q + B) - v(Q)) / |B|.
- With every block a singleton this reduces to the classical Shapley
  value; with a two-level structure it reduces to Owen's original
  coalition value.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from math import comb
from typing import Iterable, NamedTuple

import numpy as np

from .errors import CapacityError, StructuralError
from .games import CharacteristicGame, Coalition, coalition_of

MAX_EXACT_PLAYERS = 20
MAX_MARGINAL_ENTRIES = 1 << 16


@dataclass(frozen=True)
class CoalitionStructure:
    """Node of a hierarchical coalition structure.

    ``members`` is the node's player set; ``children`` is empty for an
    indivisible block, otherwise an ordered tuple of at least two nodes
    whose member sets partition ``members``.
    """

    members: frozenset
    children: tuple = ()

    @property
    def indivisible(self) -> bool:
        return not self.children

    @property
    def mask(self) -> Coalition:
        return coalition_of(self.members)

    @staticmethod
    def block(members: Iterable[int]) -> "CoalitionStructure":
        members = frozenset(members)
        if not members:
            raise StructuralError("indivisible block must be nonempty")
        return CoalitionStructure(members)

    @staticmethod
    def compose(children: Iterable["CoalitionStructure"]) -> "CoalitionStructure":
        children = tuple(children)
        if len(children) < 2:
            raise StructuralError("composed node needs at least two children")
        members = frozenset()
        total = 0
        for c in children:
            members |= c.members
            total += len(c.members)
        if total != len(members):
            raise StructuralError("children member sets must be pairwise disjoint")
        return CoalitionStructure(members, children)

    def depth(self) -> int:
        if self.indivisible:
            return 0
        return 1 + max(c.depth() for c in self.children)

    def validate(self) -> None:
        if not self.members:
            raise StructuralError("empty node")
        if self.children:
            union = frozenset()
            total = 0
            for c in self.children:
                c.validate()
                union |= c.members
                total += len(c.members)
            if union != self.members or total != len(self.members):
                raise StructuralError("children do not partition the parent")


def from_nested(spec) -> CoalitionStructure:
    """Build a structure from nested lists.

    An ``int`` is a singleton; a ``list``/``tuple`` groups its elements into
    a node (single-element groups collapse); a ``set``/``frozenset`` is an
    indivisible multi-player block. ``[[1, 2], [3, 4, 5], [6]]`` is the
    two-level structure with teams {1,2}, {3,4,5}, {6}, each team divisible
    down to single players.
    """
    if isinstance(spec, int):
        return CoalitionStructure.block([spec])
    if isinstance(spec, (set, frozenset)):
        return CoalitionStructure.block(spec)
    if isinstance(spec, (list, tuple)):
        if len(spec) == 0:
            raise StructuralError("empty group")
        if len(spec) == 1:
            return from_nested(spec[0])
        return CoalitionStructure.compose(from_nested(item) for item in spec)
    raise StructuralError(f"cannot interpret {spec!r} as a coalition structure")


def marginal(game: CharacteristicGame, coalition: Coalition, player: int, cls: int = 0) -> float:
    """Change in worth when ``player`` joins ``coalition``."""
    bit = 1 << player
    if coalition & bit:
        raise ValueError(f"player {player} is already in the coalition")
    with_p, without_p = game.evaluate_batch([coalition | bit, coalition])
    return float(with_p[cls] - without_p[cls])


def _subset_masks(bits: list[int]) -> np.ndarray:
    """All 2**k bitmasks over the given bit positions, as an int64 array."""
    masks = np.zeros(1 << len(bits), dtype=np.int64)
    for j, pos in enumerate(bits):
        step = 1 << j
        block = np.arange(len(masks)) & step
        masks += np.where(block != 0, np.int64(1 << pos), np.int64(0))
    return masks


def shapley_exact(
    game: CharacteristicGame, support: Coalition = 0, cls: int = 0
) -> np.ndarray:
    """Exact Shapley value of every player outside ``support``.

    ``support`` is a persistent coalition added to every enumerated subset;
    players inside it receive value 0 in the returned vector. With
    ``support == 0`` this is the classical Shapley value. Enumerates all
    subsets of the free players, so ``num_players`` is capped.
    """
    n = game.num_players
    if n > MAX_EXACT_PLAYERS:
        raise CapacityError(f"exact enumeration limited to {MAX_EXACT_PLAYERS} players, got {n}")
    free = [i for i in range(n) if not (support >> i) & 1]
    nf = len(free)
    if nf == 0:
        return np.zeros(n)

    # One batch for the full table over free subsets (support added in).
    masks = _subset_masks(free)
    worths = game.evaluate_batch([int(m) | support for m in masks])[:, cls]
    sizes = np.zeros(len(masks), dtype=np.int64)
    for j in range(nf):
        sizes += (np.arange(len(masks)) >> j) & 1

    values = np.zeros(n)
    index = np.arange(len(masks))
    inv_weight = np.array([nf * comb(nf - 1, s) for s in range(nf)], dtype=np.float64)
    for j, player in enumerate(free):
        without = index[(index >> j) & 1 == 0]
        with_p = without | (1 << j)
        weights = 1.0 / inv_weight[sizes[without]]
        values[player] = float(np.sum(weights * (worths[with_p] - worths[without])))
    return values


def owen_two_level(
    game: CharacteristicGame, teams: list, player: int, cls: int = 0
) -> float:
    """Owen coalition value by direct double enumeration over a flat partition.

    ``teams`` is a list of player iterables partitioning the game's player
    set. Outer sum: subsets of the other teams join as whole blocks. Inner
    sum: Shapley enumeration within the player's own team.
    """
    team_sets = [frozenset(t) for t in teams]
    union = frozenset()
    total = 0
    for t in team_sets:
        union |= t
        total += len(t)
    if total != len(union) or union != frozenset(range(game.num_players)):
        raise StructuralError("teams must partition the player set")
    own = [t for t in team_sets if player in t]
    if len(own) != 1:
        raise StructuralError(f"player {player} must belong to exactly one team")
    own = own[0]
    others = [t for t in team_sets if player not in t]
    mates = sorted(own - {player})
    m = len(team_sets)
    tj = len(own)

    cache: dict[Coalition, float] = {}

    def worth(mask: Coalition) -> float:
        if mask not in cache:
            cache[mask] = float(game.evaluate_batch([mask])[0][cls])
        return cache[mask]

    total_value = Fraction(0)
    acc = 0.0
    for h in range(len(others) + 1):
        w_outer = Fraction(1, m * comb(m - 1, h))
        for chosen in itertools.combinations(others, h):
            q_teams = coalition_of(frozenset().union(*chosen)) if chosen else 0
            for s in range(tj):
                w_inner = Fraction(1, tj * comb(tj - 1, s))
                w = w_outer * w_inner
                for inside in itertools.combinations(mates, s):
                    q = q_teams | coalition_of(inside)
                    delta = worth(q | (1 << player)) - worth(q)
                    acc += float(w) * delta
                    total_value += w
    assert total_value == 1
    return acc


def owen_hcs_recursive(
    game: CharacteristicGame,
    structure: CoalitionStructure,
    context: Coalition,
    player: int,
    cls: int = 0,
) -> float:
    """Owen value of ``player`` by direct recursion over the structure."""
    structure.validate()
    if player not in structure.members:
        raise StructuralError(f"player {player} is not in the structure")

    cache: dict[Coalition, float] = {}

    def worth(mask: Coalition) -> float:
        if mask not in cache:
            cache[mask] = float(game.evaluate_batch([mask])[0][cls])
        return cache[mask]

    def recurse(node: CoalitionStructure, q: Coalition) -> float:
        if node.indivisible:
            block = node.mask
            return (worth(q | block) - worth(q)) / len(node.members)
        own = next(c for c in node.children if player in c.members)
        others = [c for c in node.children if c is not own]
        m = len(node.children)
        acc = 0.0
        for h in range(len(others) + 1):
            w = 1.0 / (m * comb(m - 1, h))
            for chosen in itertools.combinations(others, h):
                q_u = q
                for c in chosen:
                    q_u |= c.mask
                acc += w * recurse(own, q_u)
        return acc

    return recurse(structure, context)


class WeightedMarginal(NamedTuple):
    """One term of the Owen decomposition for a fixed player.

    The player's indivisible block ``block`` joins context ``context``
    with weight ``weight``; the term's contribution to the player is
    ``weight * (v(context + block) - v(context)) / |block|``. Weights
    over all terms sum to exactly 1.
    """

    weight: Fraction
    context: frozenset
    block: frozenset


def marginal_count(structure: CoalitionStructure, player: int) -> int:
    """Number of weighted marginals in the player's decomposition."""
    node = structure
    count = 1
    while not node.indivisible:
        count *= 1 << (len(node.children) - 1)
        node = next(c for c in node.children if player in c.members)
    return count


def enumerate_marginals(structure: CoalitionStructure, player: int) -> list[WeightedMarginal]:
    """Materialize the player's Owen decomposition as exact weighted marginals.

    Applying the returned terms to any game reproduces
    :func:`owen_hcs_recursive` up to float summation order.
    """
    structure.validate()
    if player not in structure.members:
        raise StructuralError(f"player {player} is not in the structure")
    count = marginal_count(structure, player)
    if count > MAX_MARGINAL_ENTRIES:
        raise CapacityError(
            f"decomposition has {count} marginals, limit is {MAX_MARGINAL_ENTRIES}"
        )

    out: list[WeightedMarginal] = []

    def expand(node: CoalitionStructure, q: frozenset, w: Fraction) -> None:
        if node.indivisible:
            out.append(WeightedMarginal(w, q, node.members))
            return
        own = next(c for c in node.children if player in c.members)
        others = [c for c in node.children if c is not own]
        m = len(node.children)
        for h in range(len(others) + 1):
            weight = w / (m * comb(m - 1, h))
            for chosen in itertools.combinations(others, h):
                q_u = q
                for c in chosen:
                    q_u = q_u | c.members
                expand(own, q_u, weight)

    expand(structure, frozenset(), Fraction(1))
    return out


def apply_marginals(
    game: CharacteristicGame, terms: list[WeightedMarginal], cls: int = 0
) -> float:
    """Evaluate a decomposition against a game (test instrument)."""
    acc = 0.0
    for term in terms:
        q = coalition_of(term.context)
        block = coalition_of(term.block)
        hi, lo = game.evaluate_batch([q | block, q])
        acc += float(term.weight) * float(hi[cls] - lo[cls]) / len(term.block)
    return acc


def expected_eval_count(depth: int) -> int:
    """Worth-function evaluations needed to expand a balanced binary
    structure exhaustively to the given depth.

    Defined by the recurrence a(0) = 0, a(d) = 4 a(d-1) + 2: each split
    costs two evaluations and spawns four half-weight subproblems.
    """
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    a = 0
    for _ in range(depth):
        a = 4 * a + 2
    return a
