"""Shared helpers for building random games and abstract partition trees."""

import numpy as np
import pytest

from hiershap.games import from_table
from hiershap.hierarchy import tree_from_merges


def random_partition_tree(rng, n, kind="custom"):
    """Random binary tree over n abstract leaves, as a PartitionTree."""
    available = list(range(n))
    merges = []
    next_id = n
    while len(available) > 1:
        i, j = sorted(rng.choice(len(available), size=2, replace=False))
        b = available.pop(j)
        a = available.pop(i)
        merges.append((a, b))
        available.append(next_id)
        next_id += 1
    return tree_from_merges(merges, n, kind=kind)


def random_game(rng, n, classes=1):
    return from_table(rng.uniform(-1.0, 1.0, size=(1 << n, classes)))


class CountingGame:
    """Game wrapper recording every coalition the evaluator is asked."""

    def __init__(self, game):
        self.game = game
        self.num_players = game.num_players
        self.num_classes = game.num_classes
        self.name = getattr(game, "name", "game")
        self.queries = []

    def evaluate_batch(self, coalitions):
        self.queries.extend(coalitions)
        return self.game.evaluate_batch(coalitions)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
