import numpy as np
import pytest

from feedflow.media import BitrateLadder, QualityMap, RecommendationQueue, Video
from feedflow.sim import SimConfig, legal_actions, new_session, step
from feedflow.traces import NetworkTrace, PreferenceParams, UserTrace

LADDER = BitrateLadder((500, 1000, 1500, 2500))


def flat_video(video_id: str, n_chunks: int, chunk_duration: float = 2.0,
               sizes=(125_000, 250_000, 375_000, 625_000)) -> Video:
    """Video whose chunks all share the same per-level sizes (exact bytes)."""
    return Video(video_id, chunk_duration, tuple(tuple(sizes) for _ in range(n_chunks)))


def make_queue(*videos: Video) -> RecommendationQueue:
    return RecommendationQueue(tuple(videos))


def uniform_prefs(alpha=1.0, beta=1.0, gamma=0.5, theta=0.01) -> PreferenceParams:
    return PreferenceParams(alpha, beta, gamma, theta)


def random_scenario(rng: np.random.Generator):
    """Small random (trace, queue, user) tuple for property sweeps."""
    n_videos = int(rng.integers(2, 5))
    videos = []
    for i in range(n_videos):
        n_chunks = int(rng.integers(2, 6))
        rows = []
        for _ in range(n_chunks):
            base = int(rng.integers(60_000, 200_000))
            rows.append(tuple(base * (lvl + 1) for lvl in range(4)))
        videos.append(Video(f"v{i}", 2.0, tuple(rows)))
    queue = RecommendationQueue(tuple(videos))
    samples = []
    t = 0.0
    for _ in range(int(rng.integers(2, 6))):
        samples.append((t, float(rng.uniform(0.5, 6.0))))
        t += float(rng.uniform(1.0, 4.0))
    trace = NetworkTrace(tuple(samples))
    user = UserTrace(tuple(float(rng.uniform(0.0, 9.0)) for _ in range(n_videos)))
    return trace, queue, user


def run_random_episode(rng: np.random.Generator, max_steps: int = 2000):
    """Drive a random legal policy to termination; returns (state, queue, log)."""
    trace, queue, user = random_scenario(rng)
    config = SimConfig(window=3, max_steps=max_steps)
    state = new_session(queue, user)
    outcomes = []
    while not state.finished:
        actions = legal_actions(state, queue, config)
        action = actions[int(rng.integers(len(actions)))]
        _, outcome = step(state, action, trace, user, queue, config)
        outcomes.append((action, outcome))
        if len(outcomes) >= max_steps:
            raise AssertionError("random episode did not terminate")
    return state, queue, user, trace, outcomes


@pytest.fixture(scope="session")
def demo_dataset():
    from feedflow.harness.datasets import load_dataset

    return load_dataset("demo")


@pytest.fixture
def qmap():
    return QualityMap()
