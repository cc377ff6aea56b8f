"""Masking, span codec, ideal linear game, coalition cache."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiershap.errors import EvaluationError
from hiershap.games import CharacteristicGame, coalition_of, full_coalition
from hiershap.hierarchy import RasterImage
from hiershap.masking import (
    Background,
    CachedGame,
    CoalitionCache,
    GroundTruth,
    MaskSpec,
    apply_mask,
    cached_batch_evaluate,
    ideal_linear_game,
    mask_to_spans,
    spans_to_mask,
)


def checker_image(width=2, height=2):
    data = np.zeros((height, width, 3), dtype=np.uint8)
    data[:, : width // 2] = (10, 20, 30)
    data[:, width // 2 :] = (200, 210, 220)
    return RasterImage(data)


class CountingGame:
    """Wraps a game, counting raw batch invocations per coalition."""

    def __init__(self, game):
        self.game = game
        self.num_players = game.num_players
        self.num_classes = game.num_classes
        self.calls = []

    def evaluate_batch(self, coalitions):
        self.calls.extend(coalitions)
        return self.game.evaluate_batch(coalitions)


# ----------------------------------------------------------- span codec


def test_span_round_trip_known_values():
    n = 10
    mask = coalition_of([0, 1, 2, 5, 8, 9])
    spans = mask_to_spans(mask, n)
    assert spans == [(0, 3), (5, 1), (8, 2)]
    assert spans_to_mask(spans, n) == mask


def test_span_empty_and_full():
    assert mask_to_spans(0, 7) == []
    assert mask_to_spans(full_coalition(7), 7) == [(0, 7)]
    assert spans_to_mask([], 7) == 0
    assert spans_to_mask([(0, 7)], 7) == full_coalition(7)


def test_span_rejects_overlap_and_bounds():
    with pytest.raises(ValueError):
        spans_to_mask([(0, 3), (2, 2)], 8)
    with pytest.raises(ValueError):
        spans_to_mask([(6, 4)], 8)
    with pytest.raises(ValueError):
        spans_to_mask([(0, 0)], 8)


@settings(max_examples=200)
@given(st.integers(1, 300), st.data())
def test_span_round_trip_random(n, data):
    mask = data.draw(st.integers(0, (1 << n) - 1))
    assert spans_to_mask(mask_to_spans(mask, n), n) == mask


# ------------------------------------------------------------ apply_mask


def test_apply_mask_identity_when_everything_kept():
    img = checker_image()
    out = apply_mask(img, MaskSpec.full(img.num_pixels), Background())
    assert np.array_equal(out.data, img.data)


def test_apply_mask_empty_gives_constant_background():
    img = checker_image()
    out = apply_mask(img, MaskSpec(0, img.num_pixels), Background(color=(128, 128, 128)))
    assert np.all(out.data == 128)


def test_apply_mask_left_half():
    img = checker_image(2, 2)
    spec = MaskSpec(coalition_of([0, 2]), 4)
    out = apply_mask(img, spec, Background(color=(128, 128, 128)))
    assert np.array_equal(out.data[:, 0], img.data[:, 0])
    assert np.all(out.data[:, 1] == 128)


def test_apply_mask_idempotent():
    img = checker_image(4, 4)
    spec = MaskSpec(coalition_of([0, 5, 6, 11]), 16)
    bg = Background(color=(77, 88, 99))
    once = apply_mask(img, spec, bg)
    twice = apply_mask(once, spec, bg)
    assert np.array_equal(once.data, twice.data)


def test_apply_mask_reference_background():
    img = checker_image(2, 2)
    ref = RasterImage(np.full((2, 2, 3), 5, dtype=np.uint8))
    out = apply_mask(img, MaskSpec(0, 4), Background(mode="reference", reference=ref))
    assert np.all(out.data == 5)


def test_apply_mask_size_mismatch():
    img = checker_image(2, 2)
    with pytest.raises(ValueError):
        apply_mask(img, MaskSpec(0, 9), Background())


# ------------------------------------------------------ ideal linear game


def test_ideal_linear_endpoints():
    truth = GroundTruth.from_indices([0, 1, 2, 3], 16)
    game = ideal_linear_game(truth)
    assert game.evaluate(truth.mask, cls=0) == 1.0
    assert game.evaluate(0, cls=0) == 0.0
    assert game.evaluate(full_coalition(16), cls=0) == 1.0


def test_ideal_linear_proportion():
    truth = GroundTruth.from_indices([0, 1, 2, 3], 16)
    game = ideal_linear_game(truth)
    assert game.evaluate(coalition_of([3, 10, 11]), cls=0) == pytest.approx(0.25)


def test_ideal_linear_is_additive():
    truth = GroundTruth.from_indices([2, 5, 7], 12)
    game = ideal_linear_game(truth)
    a = coalition_of([0, 2, 3])
    b = coalition_of([5, 9])
    assert game.evaluate(a | b, cls=0) == pytest.approx(
        game.evaluate(a, cls=0) + game.evaluate(b, cls=0)
    )


def test_ground_truth_rejects_empty():
    with pytest.raises(ValueError):
        GroundTruth(0, 8)


def test_ground_truth_png_round_trip(tmp_path):
    truth = GroundTruth.from_indices([0, 3, 5, 6], 8)
    path = tmp_path / "gt.png"
    truth.save_png(4, 2, path)
    loaded = GroundTruth.load_png(path)
    assert loaded.mask == truth.mask
    assert loaded.n == 8


def test_ground_truth_span_file(tmp_path):
    path = tmp_path / "gt.txt"
    path.write_text("0,2\n5,1\n")
    truth = GroundTruth.load_spans(path, 8)
    assert truth.mask == coalition_of([0, 1, 5])


# -------------------------------------------------------------- caching


def test_cache_deduplicates_within_batch():
    truth = GroundTruth.from_indices([0], 4)
    counting = CountingGame(ideal_linear_game(truth))
    out = cached_batch_evaluate(counting, [MaskSpec(3, 4), MaskSpec(3, 4)])
    assert counting.calls == [3]
    assert out.shape == (2, 1)
    assert out[0] == out[1]


def test_cache_empty_batch():
    truth = GroundTruth.from_indices([0], 4)
    assert cached_batch_evaluate(ideal_linear_game(truth), []).shape == (0, 1)


def test_cache_matches_direct_evaluation():
    truth = GroundTruth.from_indices([1, 2], 4)
    game = ideal_linear_game(truth)
    masks = [0, full_coalition(4), 5, 0, 5]
    cached = cached_batch_evaluate(game, masks)
    direct = game.evaluate_batch(masks)
    assert np.array_equal(cached, direct)


def test_cache_serves_across_batches():
    truth = GroundTruth.from_indices([0], 6)
    counting = CountingGame(ideal_linear_game(truth))
    wrapped = CachedGame(counting)
    wrapped.evaluate_batch([1, 2])
    wrapped.evaluate_batch([2, 3])
    assert counting.calls == [1, 2, 3]
    assert wrapped.cache.hits == 1


def test_cache_eviction_bound():
    truth = GroundTruth.from_indices([0], 8)
    counting = CountingGame(ideal_linear_game(truth))
    cache = CoalitionCache(capacity=2)
    cache.evaluate(counting, [1, 2, 3])
    assert len(cache._store) == 2
    cache.evaluate(counting, [1])
    # 1 was evicted (oldest), so it is re-asked.
    assert counting.calls == [1, 2, 3, 1]


def test_cache_reports_failing_index():
    def raw(batch):
        if any(s == 7 for s in batch):
            raise RuntimeError("boom")
        return np.zeros((len(batch), 1))

    game = CharacteristicGame(raw, 4, 1)
    with pytest.raises(EvaluationError) as err:
        cached_batch_evaluate(game, [1, 7, 2])
    assert err.value.index == 1
