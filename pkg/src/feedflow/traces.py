"""Input datasets for the simulator: network traces, user retention traces,
and per-user preference weights, plus a seeded synthesizer for all of them.

Trace files are plain UTF-8 text, one ``<seconds> <Mbps>`` pair per line.
Bandwidth classification follows the 1.5 / 3 Mbps convention, boundaries
assigned upward.
"""

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .media import BitrateLadder, Video, synthesize_video

LOW_MEDIUM_THRESHOLD_MBPS = 1.5
MEDIUM_HIGH_THRESHOLD_MBPS = 3.0


class TraceFormatError(ValueError):
    """Raised when a trace file cannot be parsed or violates invariants."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class ConfigError(ValueError):
    """Raised for inconsistent generator settings (e.g. min > max ranges)."""


class BandwidthClass(Enum):
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"


@dataclass(frozen=True)
class NetworkTrace:
    """Time-stamped bandwidth samples, piecewise-constant between samples.

    Timestamps must be strictly increasing and start at 0; bandwidths are in
    Mbps and strictly positive. Beyond the last sample the trace repeats
    cyclically; the final segment is given the same length as the one before
    it (a single-sample trace is constant forever).
    """

    samples: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.samples:
            raise TraceFormatError("trace has no samples")
        if self.samples[0][0] != 0.0:
            raise TraceFormatError("first timestamp must be 0")
        prev = -math.inf
        for t, bw in self.samples:
            if not (math.isfinite(t) and math.isfinite(bw)):
                raise TraceFormatError("non-finite sample value")
            if t <= prev:
                raise TraceFormatError("timestamps must be strictly increasing")
            if bw <= 0:
                raise TraceFormatError("bandwidth must be > 0")
            prev = t
        object.__setattr__(self, "_timestamps", tuple(t for t, _ in self.samples))

    @property
    def mean_bandwidth(self) -> float:
        return sum(bw for _, bw in self.samples) / len(self.samples)

    @property
    def span(self) -> float | None:
        """Cycle length, or None for a single-sample (constant) trace."""
        if len(self.samples) == 1:
            return None
        last = self.samples[-1][0]
        return last + (last - self.samples[-2][0])

    @staticmethod
    def constant(bandwidth_mbps: float) -> "NetworkTrace":
        return NetworkTrace(((0.0, bandwidth_mbps),))


@dataclass(frozen=True)
class UserTrace:
    """Intended watch time in seconds, one entry per video in the queue."""

    watch_durations: tuple[float, ...]

    def __post_init__(self):
        if any(d < 0 or not math.isfinite(d) for d in self.watch_durations):
            raise ValueError("watch durations must be finite and >= 0")


@dataclass(frozen=True)
class PreferenceParams:
    """Per-user objective weights: quality, rebuffer (per second), smoothness,
    and bandwidth cost (per MB)."""

    alpha: float
    beta: float
    gamma: float
    theta: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "theta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def parse_network_trace(text: str) -> NetworkTrace:
    """Parse trace text, one ``<seconds> <Mbps>`` pair per line.

    Blank lines are ignored. Malformed lines raise TraceFormatError with the
    1-based line number.
    """
    samples = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 2:
            raise TraceFormatError(f"expected '<seconds> <Mbps>', got {line!r}", line_no)
        try:
            t, bw = float(parts[0]), float(parts[1])
        except ValueError:
            raise TraceFormatError(f"non-numeric value in {line!r}", line_no) from None
        samples.append((t, bw))
    return NetworkTrace(tuple(samples))


def load_network_trace(source) -> NetworkTrace:
    """Load a trace from a byte/str stream, raw bytes, or str content."""
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    return parse_network_trace(source)


def dump_network_trace(trace: NetworkTrace) -> str:
    """Canonical text form; floats use repr so round-trips are exact."""
    return "".join(f"{t!r} {bw!r}\n" for t, bw in trace.samples)


def load_trace_file(path) -> NetworkTrace:
    with open(path, "rb") as fh:
        return load_network_trace(fh)


def save_trace_file(trace: NetworkTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_network_trace(trace))


def classify_trace(trace: NetworkTrace) -> BandwidthClass:
    """Classify by mean bandwidth; boundaries 1.5 and 3 Mbps assign upward."""
    mean = trace.mean_bandwidth
    if mean >= MEDIUM_HIGH_THRESHOLD_MBPS:
        return BandwidthClass.HIGH
    if mean >= LOW_MEDIUM_THRESHOLD_MBPS:
        return BandwidthClass.MEDIUM
    return BandwidthClass.LOW


def bandwidth_at(trace: NetworkTrace, t: float) -> float:
    """Bandwidth in Mbps at time t >= 0 (piecewise-constant, cyclic)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if len(trace.samples) == 1:
        return trace.samples[0][1]
    pos = t % trace.span
    i = bisect_right(trace._timestamps, pos) - 1
    return trace.samples[i][1]


def download_seconds(trace: NetworkTrace, start: float, bits: float) -> float:
    """Wall-clock seconds to move `bits` starting at `start`, integrating the
    piecewise-constant bandwidth (with cyclic extension)."""
    if bits <= 0:
        return 0.0
    if len(trace.samples) == 1:
        return bits / (trace.samples[0][1] * 1e6)
    span = trace.span
    ts = trace._timestamps
    pos = start % span
    elapsed = 0.0
    remaining = bits
    while True:
        i = bisect_right(ts, pos) - 1
        rate = trace.samples[i][1] * 1e6  # bits per second
        boundary = ts[i + 1] if i + 1 < len(ts) else span
        capacity = rate * (boundary - pos)
        if remaining <= capacity:
            return elapsed + remaining / rate
        remaining -= capacity
        elapsed += boundary - pos
        pos = boundary % span


# --- Synthetic dataset generation ---

# Class-specific mean-bandwidth ranges, kept strictly inside the class bounds
# so noise can never push a trace across a threshold.
DEFAULT_CLASS_MEAN_RANGES = {
    BandwidthClass.LOW: (0.6, 1.3),
    BandwidthClass.MEDIUM: (1.7, 2.8),
    BandwidthClass.HIGH: (3.3, 4.8),
}

# Cold-start throughput priors: midpoints of the class bands (HIGH is open
# ended; 4.0 matches the synthesizer's default range).
CLASS_PRIOR_MBPS = {
    BandwidthClass.LOW: 0.75,
    BandwidthClass.MEDIUM: 2.25,
    BandwidthClass.HIGH: 4.0,
}


@dataclass
class GeneratorConfig:
    """Settings for synthesize_dataset. All ranges are inclusive (lo, hi)."""

    traces_per_class: int = 5
    classes: tuple[BandwidthClass, ...] = (
        BandwidthClass.LOW,
        BandwidthClass.MEDIUM,
        BandwidthClass.HIGH,
    )
    trace_duration_s: float = 60.0
    trace_interval_s: float = 2.0
    bandwidth_jitter: float = 0.25  # sigma of the lognormal shape noise
    class_mean_ranges: dict = field(
        default_factory=lambda: dict(DEFAULT_CLASS_MEAN_RANGES)
    )

    n_videos: int = 20
    chunk_duration_s: float = 2.0
    ladder_kbps: tuple[int, ...] = (500, 1000, 1500, 2500)
    video_chunks_range: tuple[int, int] = (4, 8)
    size_noise_range: tuple[float, float] = (0.9, 1.1)

    n_users: int = 10
    queue_length: int = 6
    watch_duration_range_s: tuple[float, float] = (2.0, 10.0)

    alpha_range: tuple[float, float] = (0.5, 2.0)
    beta_range: tuple[float, float] = (0.5, 2.0)
    gamma_range: tuple[float, float] = (0.25, 1.0)
    theta_range: tuple[float, float] = (0.005, 0.02)

    def __post_init__(self):
        ranges = {
            "video_chunks_range": self.video_chunks_range,
            "size_noise_range": self.size_noise_range,
            "watch_duration_range_s": self.watch_duration_range_s,
            "alpha_range": self.alpha_range,
            "beta_range": self.beta_range,
            "gamma_range": self.gamma_range,
            "theta_range": self.theta_range,
            **{f"mean range {c.value}": r for c, r in self.class_mean_ranges.items()},
        }
        for name, (lo, hi) in ranges.items():
            if lo > hi:
                raise ConfigError(f"{name}: min {lo} > max {hi}")
        if self.traces_per_class < 1 or self.n_videos < 1 or self.n_users < 1:
            raise ConfigError("counts must be >= 1")
        if self.queue_length < 1:
            raise ConfigError("queue_length must be >= 1")


@dataclass
class Dataset:
    """The four simulator inputs plus the encoding parameters they share."""

    network_traces: list[NetworkTrace]
    videos: list[Video]
    users: list[UserTrace]
    prefs: list[PreferenceParams]
    ladder: BitrateLadder
    chunk_duration_s: float

    def traces_by_class(self) -> dict[BandwidthClass, list[NetworkTrace]]:
        grouped: dict[BandwidthClass, list[NetworkTrace]] = {
            c: [] for c in BandwidthClass
        }
        for trace in self.network_traces:
            grouped[classify_trace(trace)].append(trace)
        return grouped


def synthesize_dataset(config: GeneratorConfig, seed: int) -> Dataset:
    """Generate all four inputs deterministically from (config, seed).

    Traces are rescaled so their mean lands exactly on a value drawn from the
    class range, which guarantees the generated class under classify_trace.
    """
    rng = np.random.default_rng(seed)

    network_traces = []
    n_samples = max(2, int(round(config.trace_duration_s / config.trace_interval_s)))
    for cls in config.classes:
        lo, hi = config.class_mean_ranges[cls]
        for _ in range(config.traces_per_class):
            target_mean = rng.uniform(lo, hi)
            shape = rng.lognormal(0.0, config.bandwidth_jitter, n_samples)
            values = shape * (target_mean / shape.mean())
            samples = tuple(
                (i * config.trace_interval_s, float(v)) for i, v in enumerate(values)
            )
            network_traces.append(NetworkTrace(samples))

    ladder = BitrateLadder(config.ladder_kbps)
    videos = []
    lo_chunks, hi_chunks = config.video_chunks_range
    for i in range(config.n_videos):
        n_chunks = int(rng.integers(lo_chunks, hi_chunks + 1))
        videos.append(
            synthesize_video(
                f"v{i:03d}",
                ladder,
                config.chunk_duration_s,
                n_chunks,
                rng,
                noise_range=config.size_noise_range,
            )
        )

    users = []
    w_lo, w_hi = config.watch_duration_range_s
    for _ in range(config.n_users):
        durations = rng.uniform(w_lo, w_hi, config.queue_length)
        users.append(UserTrace(tuple(float(d) for d in durations)))

    prefs = []
    for _ in range(config.n_users):
        prefs.append(
            PreferenceParams(
                alpha=float(rng.uniform(*config.alpha_range)),
                beta=float(rng.uniform(*config.beta_range)),
                gamma=float(rng.uniform(*config.gamma_range)),
                theta=float(rng.uniform(*config.theta_range)),
            )
        )

    return Dataset(network_traces, videos, users, prefs, ladder, config.chunk_duration_s)
