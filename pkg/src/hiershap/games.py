"""Characteristic games: batched worth functions over pixel/player coalitions.

Coalitions are integer bitmasks: bit ``i`` set means player ``i`` is in the
coalition. A game maps coalitions to one real worth per explained class.
Worth of the empty coalition is normalized to zero once, at construction,
by caching the raw empty-coalition output and subtracting it from every
query.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import EvaluationError

Coalition = int


def full_coalition(n: int) -> Coalition:
    return (1 << n) - 1


def coalition_size(s: Coalition) -> int:
    return s.bit_count()


def coalition_members(s: Coalition):
    """Yield the player indices in ascending order."""
    while s:
        low = s & -s
        yield low.bit_length() - 1
        s ^= low


def coalition_of(members) -> Coalition:
    mask = 0
    for i in members:
        mask |= 1 << i
    return mask


class CharacteristicGame:
    """A worth function over coalitions, evaluated in batches.

    ``raw_batch`` maps a list of coalition bitmasks to an array of shape
    ``(len(batch), num_classes)``. Results must be order-aligned with the
    input and deterministic: the same coalition always yields the same
    worth. The empty-coalition worth is evaluated once here and subtracted
    from all subsequent queries, so ``evaluate(0) == 0`` per class.
    """

    def __init__(
        self,
        raw_batch: Callable[[Sequence[Coalition]], np.ndarray],
        num_players: int,
        num_classes: int = 1,
        name: str = "game",
    ):
        if num_players < 1:
            raise ValueError("num_players must be positive")
        if num_classes < 1:
            raise ValueError("num_classes must be positive")
        self._raw_batch = raw_batch
        self.num_players = num_players
        self.num_classes = num_classes
        self.name = name
        offset = np.asarray(raw_batch([0]), dtype=np.float64).reshape(1, -1)
        if offset.shape[1] != num_classes:
            raise ValueError(
                f"evaluator returned {offset.shape[1]} classes, expected {num_classes}"
            )
        if not np.all(np.isfinite(offset)):
            raise ValueError("empty-coalition worth must be finite")
        self._offset = offset

    def evaluate_batch(self, coalitions: Sequence[Coalition]) -> np.ndarray:
        """Worths for each coalition, shape ``(len(coalitions), num_classes)``."""
        coalitions = list(coalitions)
        if not coalitions:
            return np.zeros((0, self.num_classes))
        out = np.asarray(self._raw_batch(coalitions), dtype=np.float64)
        out = out.reshape(len(coalitions), -1)
        if out.shape[1] != self.num_classes:
            raise EvaluationError(
                f"evaluator returned {out.shape[1]} classes, expected {self.num_classes}"
            )
        return out - self._offset

    def evaluate(self, coalition: Coalition, cls: int | None = None):
        row = self.evaluate_batch([coalition])[0]
        return row if cls is None else float(row[cls])


def from_function(
    fn: Callable[[Coalition], float | Sequence[float]],
    num_players: int,
    num_classes: int = 1,
    name: str = "fn",
) -> CharacteristicGame:
    """Wrap a per-coalition scalar or vector function as a batch game."""

    def raw(batch):
        return np.array([np.atleast_1d(np.asarray(fn(s), dtype=np.float64)) for s in batch])

    return CharacteristicGame(raw, num_players, num_classes, name=name)


def from_table(table: np.ndarray, name: str = "table") -> CharacteristicGame:
    """Game backed by a full worth table of shape ``(2**n, num_classes)``.

    Row ``s`` holds the worths of the coalition with bitmask ``s``.
    """
    table = np.asarray(table, dtype=np.float64)
    if table.ndim == 1:
        table = table[:, None]
    rows = table.shape[0]
    n = rows.bit_length() - 1
    if rows < 2 or (1 << n) != rows:
        raise ValueError(f"table must have 2**n rows, got {rows}")

    def raw(batch):
        return table[np.asarray(batch, dtype=np.int64)]

    game = CharacteristicGame(raw, n, table.shape[1], name=name)
    game.table = table
    return game


def additive_game(values: Sequence[float], name: str = "additive") -> CharacteristicGame:
    """Game whose worth is the sum of per-player values of the members."""
    vals = np.asarray(values, dtype=np.float64)
    n = len(vals)

    def raw(batch):
        out = np.empty((len(batch), 1))
        for k, s in enumerate(batch):
            out[k, 0] = sum(vals[i] for i in coalition_members(s))
        return out

    return CharacteristicGame(raw, n, 1, name=name)


# Recorded-game text format: one line per coalition, the coalition bitmask
# as a decimal integer followed by one worth per class. Tables must be
# complete (all 2**n coalitions present exactly once), n <= 16.

MAX_RECORDED_PLAYERS = 16


def save_game_table(game: CharacteristicGame, path) -> None:
    if game.num_players > MAX_RECORDED_PLAYERS:
        raise ValueError(f"recorded games support at most {MAX_RECORDED_PLAYERS} players")
    masks = range(1 << game.num_players)
    worths = game.evaluate_batch(list(masks))
    with open(path, "w", encoding="utf-8") as fh:
        for s, row in zip(masks, worths):
            fh.write(f"{s} " + " ".join(repr(float(v)) for v in row) + "\n")


def load_game_table(path, name: str | None = None) -> CharacteristicGame:
    entries = {}
    num_classes = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            mask = int(parts[0])
            worths = [float(v) for v in parts[1:]]
            if num_classes is None:
                num_classes = len(worths)
            elif len(worths) != num_classes:
                raise ValueError(f"{path}:{lineno}: inconsistent class count")
            if not worths:
                raise ValueError(f"{path}:{lineno}: missing worth values")
            if mask in entries:
                raise ValueError(f"{path}:{lineno}: duplicate coalition {mask}")
            entries[mask] = worths
    rows = len(entries)
    n = rows.bit_length() - 1
    if rows < 2 or (1 << n) != rows or set(entries) != set(range(rows)):
        raise ValueError(f"{path}: table is not a complete 2**n coalition set")
    if n > MAX_RECORDED_PLAYERS:
        raise ValueError(f"recorded games support at most {MAX_RECORDED_PLAYERS} players")
    table = np.array([entries[s] for s in range(rows)])
    return from_table(table, name=name or str(path))
