"""Session scoring: QoE, bandwidth cost, and the personalized objective.

QoE over watched chunks n = 1..N:

    qoe  =  alpha * sum q(B_n)  -  beta * sum T_n
            -  gamma * sum |q(B_{n+1}) - q(B_n)|

where B_n is the bitrate of the n-th watched chunk, T_n the rebuffering
attributed to it, and q the configured quality map. The smoothness sum runs
over consecutive watched chunks across video boundaries. The objective is
qoe - theta * downloaded megabytes.
"""

import math
from dataclasses import dataclass
from typing import Sequence

from .media import BitrateLadder, QualityMap, RecommendationQueue
from .sim import SessionState, watch_cap
from .traces import PreferenceParams, UserTrace


@dataclass(frozen=True)
class QoeTerms:
    quality_sum: float
    rebuffer_sum: float
    smoothness_sum: float


@dataclass(frozen=True)
class SessionMetrics:
    qoe_raw: float
    qoe_terms: QoeTerms
    bandwidth_mb: float
    wastage_fraction: float
    objective: float


def qoe(
    bitrates_kbps: Sequence[float],
    rebuffer_s: Sequence[float],
    prefs: PreferenceParams,
    qmap: QualityMap,
) -> tuple[float, QoeTerms]:
    """QoE of a watched-chunk sequence with aligned rebuffer attribution."""
    if len(bitrates_kbps) != len(rebuffer_s):
        raise ValueError(
            f"{len(bitrates_kbps)} chunks but {len(rebuffer_s)} rebuffer entries"
        )
    qualities = [qmap(b) for b in bitrates_kbps]
    quality_sum = sum(qualities)
    rebuffer_sum = sum(rebuffer_s)
    smoothness_sum = sum(
        abs(b - a) for a, b in zip(qualities, qualities[1:])
    )
    raw = (
        prefs.alpha * quality_sum
        - prefs.beta * rebuffer_sum
        - prefs.gamma * smoothness_sum
    )
    return raw, QoeTerms(quality_sum, rebuffer_sum, smoothness_sum)


def bandwidth_cost(state: SessionState) -> float:
    """Total downloaded megabytes."""
    return state.downloaded_bytes / 1_000_000


def combined_objective(qoe_raw: float, bandwidth_mb: float, theta: float) -> float:
    if theta < 0:
        raise ValueError("theta must be >= 0")
    return qoe_raw - theta * bandwidth_mb


def session_metrics(
    state: SessionState,
    prefs: PreferenceParams,
    ladder: BitrateLadder,
    qmap: QualityMap,
) -> SessionMetrics:
    """Metrics of the session so far, from the state's watch/download ledgers."""
    bitrates = [ladder.levels[level] for _, _, level in state.watch_log]
    rebuffers = [
        state.rebuffer_by_chunk.get((v, c), 0.0) for v, c, _ in state.watch_log
    ]
    raw, terms = qoe(bitrates, rebuffers, prefs, qmap)
    bw_mb = bandwidth_cost(state)
    wastage = (
        state.wasted_bytes / state.downloaded_bytes if state.downloaded_bytes else 0.0
    )
    return SessionMetrics(
        qoe_raw=raw,
        qoe_terms=terms,
        bandwidth_mb=bw_mb,
        wastage_fraction=wastage,
        objective=combined_objective(raw, bw_mb, prefs.theta),
    )


def step_objective_delta(before: SessionMetrics, after: SessionMetrics) -> float:
    """Objective increment between two metric snapshots; the deltas of an
    episode telescope to its final objective."""
    return after.objective - before.objective


def qoe_bounds(
    queue: RecommendationQueue,
    user: UserTrace,
    prefs: PreferenceParams,
    ladder: BitrateLadder,
    qmap: QualityMap,
    rebuffer_budget_s: float = 30.0,
) -> tuple[float, float]:
    """Fixed normalization bounds for reporting.

    max: every watchable chunk at the top ladder quality, zero rebuffer.
    min: zero quality and the full rebuffer budget.
    """
    cd = queue[0].chunk_duration
    watchable = sum(
        math.ceil(watch_cap(queue, user, v) / cd - 1e-9) for v in range(len(queue))
    )
    hi = prefs.alpha * watchable * qmap(ladder.top)
    lo = -prefs.beta * rebuffer_budget_s
    return lo, hi


def normalize_qoe(qoe_raw: float, bounds: tuple[float, float]) -> float:
    """Map qoe_raw into [0, 1] with the given bounds, clamping."""
    lo, hi = bounds
    if hi <= lo:
        raise ValueError("invalid normalization bounds")
    return min(1.0, max(0.0, (qoe_raw - lo) / (hi - lo)))
