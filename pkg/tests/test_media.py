import numpy as np
import pytest

from feedflow.media import (
    BitrateLadder,
    QualityMap,
    RecommendationQueue,
    Video,
    chunk_size,
    quality,
    synthesize_video,
)

from conftest import flat_video


def test_chunk_size_lookup():
    video = Video("a", 2.0, ((250_000, 500_000),))
    assert chunk_size(video, 0, 1) == 500_000
    assert chunk_size(video, 0, 0) == 250_000


def test_chunk_size_out_of_range():
    video = Video("a", 2.0, ((250_000, 500_000),))
    with pytest.raises(IndexError):
        chunk_size(video, 1, 0)
    with pytest.raises(IndexError):
        chunk_size(video, 0, 2)


def test_video_rejects_level_decreasing_sizes():
    with pytest.raises(ValueError):
        Video("a", 2.0, ((500_000, 250_000),))
    with pytest.raises(ValueError):
        Video("a", 2.0, ((0, 1),))
    with pytest.raises(ValueError):
        Video("a", 0.0, ((1, 2),))


def test_ladder_invariants():
    with pytest.raises(ValueError):
        BitrateLadder((500,))
    with pytest.raises(ValueError):
        BitrateLadder((500, 500))
    ladder = BitrateLadder((500, 1000, 1500, 2500))
    assert ladder.top == 2500
    assert ladder.highest_level_at_most(1800) == 2
    assert ladder.highest_level_at_most(100) == 0  # floor rule
    assert ladder.highest_level_at_most(2500) == 3


def test_quality_linear_default():
    assert quality(2000) == pytest.approx(2.0)


def test_quality_log_identity():
    qmap = QualityMap("log", b_min_kbps=500)
    assert qmap(500) == pytest.approx(0.0)


def test_quality_rejects_nonpositive():
    with pytest.raises(ValueError):
        quality(0)
    with pytest.raises(ValueError):
        QualityMap("log")(-5)


@pytest.mark.parametrize("mode", ["linear", "log"])
def test_quality_strictly_increasing(mode):
    qmap = QualityMap(mode)
    rng = np.random.default_rng(2)
    for _ in range(100):
        b1, b2 = sorted(rng.uniform(100, 6000, 2))
        if b1 == b2:
            continue
        assert qmap(b1) < qmap(b2)


def test_queue_invariants():
    v = flat_video("a", 2)
    with pytest.raises(ValueError):
        RecommendationQueue(())
    with pytest.raises(ValueError):
        RecommendationQueue((v, flat_video("a", 3)))
    queue = RecommendationQueue((v, flat_video("b", 3)))
    assert len(queue) == 2
    assert queue[1].id == "b"


def test_synthesize_video_monotone_levels():
    rng = np.random.default_rng(7)
    ladder = BitrateLadder((500, 1000, 1500, 2500))
    for i in range(20):
        video = synthesize_video(f"v{i}", ladder, 2.0, int(rng.integers(1, 9)), rng)
        for row in video.chunk_sizes:
            assert all(b >= a for a, b in zip(row, row[1:]))
            assert all(s > 0 for s in row)
