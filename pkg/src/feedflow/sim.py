"""Chunk-level discrete-event simulator for short-video feeds.

One session = one user working through a recommendation queue. Each video has
its own buffer of downloaded chunks. Playback runs concurrently with
downloads: while a Download or Pause action elapses, the playhead consumes
buffered content of the current video, stalls when the next chunk is missing,
and swipes to the next video once the user's intended watch time for the
current one is exhausted.

Accounting rules (these drive the byte-conservation invariant):
  * a chunk is "played" once the playhead enters it; entered chunks are
    appended to watch_log and their bytes count as played,
  * swiping away from a non-final video moves its unplayed buffered bytes to
    wasted_bytes; chunks completing later for that video are waste on arrival,
  * when the final video's watch time is exhausted the session ends and its
    unplayed buffered bytes remain in the buffer (the residual bucket),
  * stalls before a video has played its first frame are startup waiting,
    tracked separately and excluded from rebuffer_total; all later stalls are
    rebuffering, attributed to the chunk whose absence caused them.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .media import RecommendationQueue
from .traces import NetworkTrace, PreferenceParams, UserTrace, download_seconds

EPS = 1e-9


class SimulationError(RuntimeError):
    """Raised when the simulator is driven outside its contract."""


class InvalidActionError(ValueError):
    """Raised for actions that are illegal in the current state."""


@dataclass(frozen=True)
class Download:
    """Fetch the next missing chunk of queue video `video` at ladder `level`."""

    video: int
    level: int


@dataclass(frozen=True)
class Pause:
    """Halt downloads for `duration` seconds while playback continues."""

    duration: float


CompositeAction = Download | Pause


@dataclass
class StepOutcome:
    elapsed: float
    rebuffer: float
    chunks_played: int
    swipes: int
    newly_wasted_bytes: int
    terminal: bool
    startup_wait: float = 0.0


@dataclass
class SimConfig:
    """Simulator and observation settings."""

    window: int = 5  # lookahead: downloads allowed for this many videos
    pause_set: tuple[float, ...] = (0.5, 1.0, 2.0)
    throughput_window: int = 5  # downloads kept in the throughput history
    throughput_prior_mbps: float = 2.25  # cold-start estimate (class midpoint)
    max_steps: int = 5000  # guard against non-progressing policies
    # observation normalizers
    throughput_norm_mbps: float = 5.0
    buffer_norm_s: float = 20.0
    watch_norm_s: float = 30.0
    pref_norms: tuple[float, float, float, float] = (2.0, 2.0, 1.0, 0.02)


@dataclass
class BufferEntry:
    chunk: int
    level: int
    size: int


class SessionState:
    """Mutable state of one streaming session.

    Owned by a single episode; step() mutates in place. clone() produces an
    independent deep copy for candidate scoring.
    """

    def __init__(self, queue: RecommendationQueue, user: UserTrace):
        if len(user.watch_durations) != len(queue):
            raise ValueError("user trace length must match queue length")
        n = len(queue)
        self.clock = 0.0
        self.current_video = 0
        self.playhead = 0.0  # watched seconds within the current video
        self.buffers: list[list[BufferEntry]] = [[] for _ in range(n)]
        self.entered: list[int] = [0] * n  # chunks the playhead has entered
        self.waste_flagged: list[bool] = [False] * n  # swiped-away, non-final
        self.rebuffer_total = 0.0
        self.startup_wait_total = 0.0
        self.downloaded_bytes = 0
        self.wasted_bytes = 0
        self.watch_log: list[tuple[int, int, int]] = []  # (video, chunk, level)
        self.rebuffer_by_chunk: dict[tuple[int, int], float] = {}
        self.throughput_history: list[float] = []  # Mbps, most recent last
        self.finished = False

    def clone(self) -> "SessionState":
        other = object.__new__(SessionState)
        other.clock = self.clock
        other.current_video = self.current_video
        other.playhead = self.playhead
        other.buffers = [list(b) for b in self.buffers]
        other.entered = list(self.entered)
        other.waste_flagged = list(self.waste_flagged)
        other.rebuffer_total = self.rebuffer_total
        other.startup_wait_total = self.startup_wait_total
        other.downloaded_bytes = self.downloaded_bytes
        other.wasted_bytes = self.wasted_bytes
        other.watch_log = list(self.watch_log)
        other.rebuffer_by_chunk = dict(self.rebuffer_by_chunk)
        other.throughput_history = list(self.throughput_history)
        other.finished = self.finished
        return other

    def buffer_seconds(self, video: int, chunk_duration: float) -> float:
        """Playable seconds buffered for `video`, relative to its playhead."""
        total = len(self.buffers[video]) * chunk_duration
        if video == self.current_video:
            return max(0.0, total - self.playhead)
        return total


def new_session(queue: RecommendationQueue, user: UserTrace) -> SessionState:
    return SessionState(queue, user)


def watch_cap(queue: RecommendationQueue, user: UserTrace, video: int) -> float:
    """Seconds of `video` the user will watch: intended time capped at length."""
    return min(user.watch_durations[video], queue[video].duration_s)


def next_missing_chunk(state: SessionState, queue: RecommendationQueue, video: int) -> int | None:
    """Index of the next chunk to fetch for `video` (buffers grow as a prefix)."""
    have = len(state.buffers[video])
    return have if have < queue[video].n_chunks else None


def played_bytes(state: SessionState) -> int:
    return sum(state.buffers[v][c].size for v, c, _ in state.watch_log)


def residual_buffered_bytes(state: SessionState, queue: RecommendationQueue) -> int:
    """Unplayed, unwasted bytes still buffered (final video only at terminal)."""
    total = 0
    for v in range(len(queue)):
        if state.waste_flagged[v]:
            continue
        total += sum(e.size for e in state.buffers[v][state.entered[v]:])
    return total


def legal_actions(
    state: SessionState, queue: RecommendationQueue, config: SimConfig
) -> list[CompositeAction]:
    """Pause actions plus every (video, level) whose video lies in the
    lookahead window and still has a missing chunk. Never empty."""
    if state.finished:
        raise SimulationError("session is terminal")
    actions: list[CompositeAction] = [Pause(d) for d in config.pause_set]
    n_levels = len(queue[0].chunk_sizes[0])
    for offset in range(config.window):
        v = state.current_video + offset
        if v >= len(queue):
            break
        if next_missing_chunk(state, queue, v) is not None:
            actions.extend(Download(v, level) for level in range(n_levels))
    return actions


def _swipe(state: SessionState, queue: RecommendationQueue) -> tuple[int, bool]:
    """Advance past the current video. Returns (wasted bytes, ended)."""
    v = state.current_video
    wasted = 0
    if v == len(queue) - 1:
        state.finished = True
        state.current_video = len(queue)
        return 0, True
    for entry in state.buffers[v][state.entered[v]:]:
        wasted += entry.size
    state.wasted_bytes += wasted
    state.waste_flagged[v] = True
    state.current_video = v + 1
    state.playhead = 0.0
    return wasted, False


def _advance_playback(
    state: SessionState,
    duration: float,
    user: UserTrace,
    queue: RecommendationQueue,
) -> tuple[float, float, int, int, int]:
    """Let playback run for `duration` wall-clock seconds.

    Returns (rebuffer, startup_wait, chunks_played, swipes, wasted_bytes).
    """
    remaining = duration
    rebuffer = 0.0
    startup = 0.0
    chunks_played = 0
    swipes = 0
    wasted = 0
    while not state.finished:
        v = state.current_video
        cap = watch_cap(queue, user, v)
        if state.playhead >= cap - EPS:
            # Swipes fire as soon as the watch time is exhausted, even when
            # the step's time budget is already spent.
            w, _ = _swipe(state, queue)
            wasted += w
            swipes += 1
            continue
        if remaining <= EPS:
            break
        cd = queue[v].chunk_duration
        playable = min(cap, len(state.buffers[v]) * cd)
        available = playable - state.playhead
        if available <= EPS:
            # Stalled waiting for the next missing chunk of this video.
            needed = len(state.buffers[v])
            if state.entered[v] == 0:
                startup += remaining
                state.startup_wait_total += remaining
            else:
                rebuffer += remaining
                state.rebuffer_total += remaining
                key = (v, needed)
                state.rebuffer_by_chunk[key] = (
                    state.rebuffer_by_chunk.get(key, 0.0) + remaining
                )
            remaining = 0.0
            break
        dt = min(available, remaining)
        new_playhead = state.playhead + dt
        while state.entered[v] * cd < new_playhead - EPS:
            k = state.entered[v]
            state.watch_log.append((v, k, state.buffers[v][k].level))
            state.entered[v] += 1
            chunks_played += 1
        state.playhead = new_playhead
        remaining -= dt
    return rebuffer, startup, chunks_played, swipes, wasted


def _validate_action(
    state: SessionState,
    action: CompositeAction,
    queue: RecommendationQueue,
    config: SimConfig,
) -> None:
    if isinstance(action, Pause):
        if not any(abs(action.duration - d) < 1e-12 for d in config.pause_set):
            raise InvalidActionError(
                f"pause duration {action.duration} not in configured set"
            )
        return
    v = action.video
    if not state.current_video <= v < min(state.current_video + config.window, len(queue)):
        raise InvalidActionError(f"video {v} outside the lookahead window")
    if not 0 <= action.level < len(queue[v].chunk_sizes[0]):
        raise InvalidActionError(f"level {action.level} outside the ladder")
    if next_missing_chunk(state, queue, v) is None:
        raise InvalidActionError(f"video {v} is fully downloaded")


def step(
    state: SessionState,
    action: CompositeAction,
    trace: NetworkTrace,
    user: UserTrace,
    queue: RecommendationQueue,
    config: SimConfig,
) -> tuple[SessionState, StepOutcome]:
    """Apply one composite action. Mutates and returns `state`.

    A Download fetches the next missing chunk of the target video; its
    duration comes from integrating chunk bits against the trace from the
    current clock. Playback advances concurrently, and the chunk lands in the
    buffer when the download completes — even if the user swiped away from the
    target mid-download (the bytes then count as waste immediately).
    """
    if state.finished:
        raise SimulationError("step() on a terminal session")
    _validate_action(state, action, queue, config)

    if isinstance(action, Pause):
        elapsed = action.duration
        reb, startup, played, swipes, wasted = _advance_playback(
            state, elapsed, user, queue
        )
    else:
        chunk = next_missing_chunk(state, queue, action.video)
        size = queue[action.video].chunk_sizes[chunk][action.level]
        elapsed = download_seconds(trace, state.clock, 8.0 * size)
        reb, startup, played, swipes, wasted = _advance_playback(
            state, elapsed, user, queue
        )
        state.buffers[action.video].append(BufferEntry(chunk, action.level, size))
        state.downloaded_bytes += size
        if state.waste_flagged[action.video]:
            state.wasted_bytes += size
            wasted += size
        state.throughput_history.append(8.0 * size / elapsed / 1e6)
        del state.throughput_history[: -config.throughput_window]

    state.clock += elapsed
    outcome = StepOutcome(
        elapsed=elapsed,
        rebuffer=reb,
        chunks_played=played,
        swipes=swipes,
        newly_wasted_bytes=wasted,
        terminal=state.finished,
        startup_wait=startup,
    )
    return state, outcome


def throughput_estimate(state: SessionState, config: SimConfig) -> float:
    """Harmonic mean of recent download throughputs, or the cold-start prior."""
    history = state.throughput_history
    if not history:
        return config.throughput_prior_mbps
    return len(history) / sum(1.0 / x for x in history)


@dataclass
class Observation:
    """Fixed-size feature vector handed to decision policies."""

    features: np.ndarray

    @property
    def dim(self) -> int:
        return self.features.shape[0]


def observation_dim(config: SimConfig) -> int:
    return config.throughput_window + 1 + (config.window - 1) + 1 + 1 + 4


def observe(
    state: SessionState,
    prefs: PreferenceParams,
    queue: RecommendationQueue,
    user: UserTrace,
    config: SimConfig,
    last_level_count: int,
) -> Observation:
    """Deterministic normalized features: recent throughput, buffer levels for
    the window, last played level, remaining watch time, and the preference
    weights. Normalizers are the documented SimConfig constants."""
    feats = []
    history = state.throughput_history
    padded = [config.throughput_prior_mbps] * (
        config.throughput_window - len(history)
    ) + list(history)
    feats.extend(x / config.throughput_norm_mbps for x in padded)

    cd = queue[0].chunk_duration
    cur = state.current_video
    if cur < len(queue):
        feats.append(state.buffer_seconds(cur, cd) / config.buffer_norm_s)
    else:
        feats.append(0.0)
    for offset in range(1, config.window):
        v = cur + offset
        if v < len(queue):
            feats.append(state.buffer_seconds(v, cd) / config.buffer_norm_s)
        else:
            feats.append(0.0)

    if state.watch_log:
        feats.append(state.watch_log[-1][2] / max(1, last_level_count - 1))
    else:
        feats.append(0.0)

    remaining = 0.0
    for offset in range(config.window):
        v = cur + offset
        if v >= len(queue):
            break
        cap = watch_cap(queue, user, v)
        watched = state.playhead if v == cur else 0.0
        remaining += max(0.0, cap - watched)
    feats.append(remaining / (config.window * config.watch_norm_s))

    norms = config.pref_norms
    feats.extend(
        (prefs.alpha / norms[0], prefs.beta / norms[1],
         prefs.gamma / norms[2], prefs.theta / norms[3])
    )
    return Observation(np.asarray(feats, dtype=float))


EVENT_LOG_COLUMNS = (
    "clock",
    "action",
    "elapsed",
    "rebuffer",
    "swipes",
    "downloaded_bytes",
    "wasted_bytes",
)


def format_action(action: CompositeAction) -> str:
    if isinstance(action, Pause):
        return f"pause:{action.duration:g}"
    return f"download:v{action.video}:l{action.level}"


class EventLog:
    """Optional per-step CSV log for debugging and test fixtures."""

    def __init__(self):
        self.rows: list[tuple] = []

    def record(self, state: SessionState, action: CompositeAction, outcome: StepOutcome):
        self.rows.append(
            (
                state.clock,
                format_action(action),
                outcome.elapsed,
                outcome.rebuffer,
                outcome.swipes,
                state.downloaded_bytes,
                state.wasted_bytes,
            )
        )

    def to_csv(self) -> str:
        lines = [",".join(EVENT_LOG_COLUMNS)]
        for row in self.rows:
            lines.append(
                ",".join(f"{x:.9g}" if isinstance(x, float) else str(x) for x in row)
            )
        return "\n".join(lines) + "\n"
