"""Video representation: bitrate ladders, chunk-level sizes, and the
bitrate-to-quality mapping."""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BitrateLadder:
    """Available encodings in kbps, strictly increasing, at least two."""

    levels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(self.levels))
        if len(self.levels) < 2:
            raise ValueError("ladder needs at least 2 levels")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("ladder levels must be strictly increasing")
        if self.levels[0] <= 0:
            raise ValueError("bitrates must be positive")

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def top(self) -> int:
        return self.levels[-1]

    def highest_level_at_most(self, kbps: float) -> int:
        """Index of the highest level with bitrate <= kbps, floor at level 0."""
        level = 0
        for i, b in enumerate(self.levels):
            if b <= kbps:
                level = i
        return level


@dataclass(frozen=True)
class Video:
    """Per-chunk sizes in bytes across the ladder: chunk_sizes[chunk][level].

    Sizes are positive and non-decreasing in the ladder level for every chunk.
    """

    id: str
    chunk_duration: float
    chunk_sizes: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if self.chunk_duration <= 0:
            raise ValueError("chunk_duration must be > 0")
        if not self.chunk_sizes:
            raise ValueError("video has no chunks")
        for row in self.chunk_sizes:
            if any(s <= 0 for s in row):
                raise ValueError("chunk sizes must be > 0")
            if any(b < a for a, b in zip(row, row[1:])):
                raise ValueError("chunk sizes must be non-decreasing in level")

    @property
    def n_chunks(self) -> int:
        return len(self.chunk_sizes)

    @property
    def duration_s(self) -> float:
        return self.n_chunks * self.chunk_duration


def chunk_size(video: Video, chunk: int, level: int) -> int:
    """Size in bytes of `chunk` at ladder index `level`."""
    if not 0 <= chunk < video.n_chunks:
        raise IndexError(f"chunk {chunk} out of range for {video.id}")
    row = video.chunk_sizes[chunk]
    if not 0 <= level < len(row):
        raise IndexError(f"level {level} out of range for {video.id}")
    return row[level]


@dataclass(frozen=True)
class QualityMap:
    """Maps a bitrate in kbps to perceived quality.

    mode "linear": q(B) = B / 1000 (quality in Mbps units).
    mode "log":    q(B) = log(B / b_min_kbps).
    Both are strictly increasing.
    """

    mode: str = "linear"
    b_min_kbps: float = 500.0

    def __post_init__(self):
        if self.mode not in ("linear", "log"):
            raise ValueError(f"unknown quality mapping {self.mode!r}")
        if self.b_min_kbps <= 0:
            raise ValueError("b_min_kbps must be > 0")

    def __call__(self, bitrate_kbps: float) -> float:
        if bitrate_kbps <= 0:
            raise ValueError("bitrate must be > 0")
        if self.mode == "linear":
            return bitrate_kbps / 1000.0
        return math.log(bitrate_kbps / self.b_min_kbps)


def quality(bitrate_kbps: float, mapping: QualityMap | None = None) -> float:
    """Perceived quality of a bitrate under the given (default linear) map."""
    return (mapping or QualityMap())(bitrate_kbps)


@dataclass(frozen=True)
class RecommendationQueue:
    """Ordered videos for one session; ids unique, never empty."""

    videos: tuple[Video, ...]

    def __post_init__(self):
        object.__setattr__(self, "videos", tuple(self.videos))
        if not self.videos:
            raise ValueError("queue must not be empty")
        ids = [v.id for v in self.videos]
        if len(set(ids)) != len(ids):
            raise ValueError("queue video ids must be unique")

    def __len__(self) -> int:
        return len(self.videos)

    def __getitem__(self, i: int) -> Video:
        return self.videos[i]


def synthesize_video(
    video_id: str,
    ladder: BitrateLadder,
    chunk_duration: float,
    n_chunks: int,
    rng: np.random.Generator,
    noise_range: tuple[float, float] = (0.9, 1.1),
) -> Video:
    """Chunk sizes = bitrate * duration / 8 * noise, clamped so that each
    chunk stays non-decreasing across the ladder."""
    base = np.array(ladder.levels, dtype=float) * 1000.0 * chunk_duration / 8.0
    noise = rng.uniform(noise_range[0], noise_range[1], size=(n_chunks, len(ladder)))
    sizes = np.maximum.accumulate(base[None, :] * noise, axis=1)
    rows = tuple(tuple(int(max(1, round(s))) for s in row) for row in sizes)
    return Video(video_id, chunk_duration, rows)
