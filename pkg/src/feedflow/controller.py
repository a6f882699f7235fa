"""Decision pipeline: generate candidate actions, score them against the
user's objective, execute the best, and optionally train on the candidates'
average reward. Includes the rule-based buffer-threshold baseline and the
ablation policy variants.

Candidate scoring runs the action on a cloned session against a constant
trace at the historical throughput estimate, never the real future bandwidth.
The score is the one-step objective delta plus, for downloads whose chunk
falls inside the video's watch window, the quality the chunk will earn once
played — without that anticipation term a myopic delta prices every download
as pure cost and the argmax stalls on pauses.
"""

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gfn import ActionSpace, Adam, FlowModel, sample_candidates
from .gfn.flow import make_trajectory_batch, tb_gradient, update
from .media import BitrateLadder, QualityMap, RecommendationQueue
from .objective import SessionMetrics, session_metrics, step_objective_delta
from .sim import (
    CompositeAction,
    Download,
    EventLog,
    Pause,
    SessionState,
    SimConfig,
    SimulationError,
    new_session,
    observe,
    step,
    throughput_estimate,
    watch_cap,
)
from .traces import NetworkTrace, PreferenceParams, UserTrace

DEFAULT_FIXED_PREFS = PreferenceParams(alpha=1.25, beta=1.25, gamma=0.625, theta=0.0125)


@dataclass(frozen=True)
class GfnMulti:
    """Full pipeline: sample k candidates, execute the argmax by objective."""

    k: int = 10

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("GfnMulti needs k >= 2 (use GfnSingle for k = 1)")


@dataclass(frozen=True)
class GfnSingle:
    """Single-candidate ablation: one sampled action per decision."""


@dataclass(frozen=True)
class GfnFixedPref:
    """Non-personalized ablation: decisions use a fixed preference vector."""

    prefs: PreferenceParams = DEFAULT_FIXED_PREFS
    k: int = 10


@dataclass(frozen=True)
class RuleBased:
    """Buffer-threshold baseline with a throughput safety factor."""

    buffer_target_s: float = 10.0
    next_buffer_target_s: float = 4.0
    safety: float = 0.9


PolicyKind = GfnMulti | GfnSingle | GfnFixedPref | RuleBased


@dataclass(frozen=True)
class Scenario:
    """One evaluation unit: a trace, a video queue, a user, and preferences."""

    trace: NetworkTrace
    queue: RecommendationQueue
    user: UserTrace
    prefs: PreferenceParams
    scenario_id: str = ""


@dataclass
class ControllerConfig:
    sim: SimConfig
    ladder: BitrateLadder
    qmap: QualityMap
    tau_temp: float = 1.0
    learning_rate: float = 1e-3
    shared_reward: bool = True  # all candidates trained on the mean objective


@dataclass
class DecisionRecord:
    clock: float
    action: CompositeAction
    value: float
    n_candidates: int
    tb_loss: float | None = None


@dataclass
class EpisodeResult:
    metrics: SessionMetrics
    decision_log: list[DecisionRecord]
    mean_tb_loss: float | None = None
    mean_reward: float | None = None
    event_log: EventLog | None = None


def evaluate_candidate(
    state: SessionState,
    action: CompositeAction,
    prefs: PreferenceParams,
    queue: RecommendationQueue,
    user: UserTrace,
    cfg: ControllerConfig,
) -> float:
    """Score an action on a cloned state using the throughput estimate.

    The real state is never mutated and the true trace is never consulted.
    """
    est = throughput_estimate(state, cfg.sim)
    clone = state.clone()
    before = session_metrics(clone, prefs, cfg.ladder, cfg.qmap)
    rebuffer_before = clone.rebuffer_total
    step(clone, action, NetworkTrace.constant(est), user, queue, cfg.sim)
    after = session_metrics(clone, prefs, cfg.ladder, cfg.qmap)
    value = step_objective_delta(before, after)
    # The QoE ledger books a stall against the chunk whose absence caused it,
    # which only enters the metric once that chunk plays. Scoring must charge
    # stalls in the step they occur or waiting always looks free.
    stalled = clone.rebuffer_total - rebuffer_before
    attributed = after.qoe_terms.rebuffer_sum - before.qoe_terms.rebuffer_sum
    value -= prefs.beta * (stalled - attributed)
    if isinstance(action, Download):
        chunk = len(state.buffers[action.video])
        cd = queue[action.video].chunk_duration
        if chunk * cd < watch_cap(queue, user, action.video) - 1e-9:
            value += prefs.alpha * cfg.qmap(cfg.ladder.levels[action.level])
        if action.video == state.current_video and stalled > 0:
            # Fetching the blocking chunk: part of the stall is unavoidable,
            # so charge only the excess over the fastest possible unblock or
            # the argmax prefers pausing forever over ever recovering.
            floor_s = 8.0 * queue[action.video].chunk_sizes[chunk][0] / (est * 1e6)
            value += prefs.beta * min(stalled, floor_s)
    return value


def select_best(
    candidates: Sequence[CompositeAction], values: Sequence[float]
) -> CompositeAction:
    """Argmax by value; ties go to the earlier-ranked candidate."""
    return candidates[_best_index(values)]


def _best_index(values: Sequence[float]) -> int:
    if not values:
        raise ValueError("no candidates to select from")
    best = 0
    for i in range(1, len(values)):
        if values[i] > values[best]:
            best = i
    return best


def rule_based_decide(
    state: SessionState,
    queue: RecommendationQueue,
    cfg: ControllerConfig,
    policy: RuleBased,
) -> CompositeAction:
    """Keep the current video above its buffer target at the best sustainable
    level, then top up upcoming videos at the lowest level, else pause."""
    if state.finished:
        raise SimulationError("session is terminal")
    est_kbps = throughput_estimate(state, cfg.sim) * 1000.0
    cd = queue[0].chunk_duration
    cur = state.current_video
    if (
        state.buffer_seconds(cur, cd) < policy.buffer_target_s
        and len(state.buffers[cur]) < queue[cur].n_chunks
    ):
        level = cfg.ladder.highest_level_at_most(policy.safety * est_kbps)
        return Download(cur, level)
    for offset in range(1, cfg.sim.window):
        v = cur + offset
        if v >= len(queue):
            break
        if (
            state.buffer_seconds(v, cd) < policy.next_buffer_target_s
            and len(state.buffers[v]) < queue[v].n_chunks
        ):
            return Download(v, 0)
    return Pause(min(cfg.sim.pause_set))


def _gfn_decide_and_learn(
    policy: PolicyKind,
    model: FlowModel,
    state: SessionState,
    scenario: Scenario,
    cfg: ControllerConfig,
    rng: np.random.Generator,
    train: bool,
    optimizer: Adam | None,
) -> tuple[CompositeAction, DecisionRecord, float | None]:
    if isinstance(policy, GfnMulti):
        k, decision_prefs = policy.k, scenario.prefs
    elif isinstance(policy, GfnSingle):
        k, decision_prefs = 1, scenario.prefs
    else:
        k, decision_prefs = policy.k, policy.prefs

    obs = observe(
        state, decision_prefs, scenario.queue, scenario.user, cfg.sim,
        len(cfg.ladder),
    )
    space = ActionSpace(state, scenario.queue, cfg.sim)
    trajectories = sample_candidates(model, obs.features, space, k, rng)
    actions = [space.action_of(t.terminal) for t in trajectories]
    values = [
        evaluate_candidate(state, a, decision_prefs, scenario.queue, scenario.user, cfg)
        for a in actions
    ]
    best = _best_index(values)

    loss = None
    reward = None
    if train:
        if optimizer is None:
            raise ValueError("training requires an optimizer")
        if cfg.shared_reward:
            shared = math.exp(float(np.mean(values)) / cfg.tau_temp)
            rewards = np.full(len(trajectories), shared)
        else:
            rewards = np.exp(np.asarray(values) / cfg.tau_temp)
        batch = make_trajectory_batch(model, obs.features, space, trajectories)
        loss, grad = tb_gradient(model, batch, rewards)
        update(model, grad, optimizer)
        reward = float(np.mean(rewards))

    record = DecisionRecord(
        clock=state.clock,
        action=actions[best],
        value=values[best],
        n_candidates=len(actions),
        tb_loss=loss,
    )
    return actions[best], record, reward


def run_episode(
    policy: PolicyKind,
    model: FlowModel | None,
    scenario: Scenario,
    cfg: ControllerConfig,
    train: bool = False,
    rng: np.random.Generator | None = None,
    optimizer: Adam | None = None,
    metrics_prefs: PreferenceParams | None = None,
    log_events: bool = False,
) -> EpisodeResult:
    """Run one session to termination under the given policy.

    Reported metrics always use the scenario's true preferences (decision
    inputs may differ, e.g. for GfnFixedPref); pass metrics_prefs to override.
    Deterministic for fixed inputs and rng state.
    """
    if isinstance(policy, (GfnMulti, GfnSingle, GfnFixedPref)):
        if model is None:
            raise ValueError(f"{type(policy).__name__} needs a model")
        if rng is None:
            raise ValueError(f"{type(policy).__name__} needs an rng")
        if train and optimizer is None:
            optimizer = Adam(model.n_params, lr=cfg.learning_rate)

    state = new_session(scenario.queue, scenario.user)
    decision_log: list[DecisionRecord] = []
    losses: list[float] = []
    rewards: list[float] = []
    events = EventLog() if log_events else None

    steps = 0
    while not state.finished:
        if steps >= cfg.sim.max_steps:
            raise SimulationError(
                f"episode exceeded {cfg.sim.max_steps} steps without terminating"
            )
        if isinstance(policy, RuleBased):
            action = rule_based_decide(state, scenario.queue, cfg, policy)
            record = DecisionRecord(state.clock, action, 0.0, 0)
        else:
            action, record, reward = _gfn_decide_and_learn(
                policy, model, state, scenario, cfg, rng, train, optimizer
            )
            if record.tb_loss is not None:
                losses.append(record.tb_loss)
            if reward is not None:
                rewards.append(reward)
        _, outcome = step(
            state, action, scenario.trace, scenario.user, scenario.queue, cfg.sim
        )
        decision_log.append(record)
        if events is not None:
            events.record(state, action, outcome)
        steps += 1

    final_prefs = metrics_prefs if metrics_prefs is not None else scenario.prefs
    metrics = session_metrics(state, final_prefs, cfg.ladder, cfg.qmap)
    return EpisodeResult(
        metrics=metrics,
        decision_log=decision_log,
        mean_tb_loss=float(np.mean(losses)) if losses else None,
        mean_reward=float(np.mean(rewards)) if rewards else None,
        event_log=events,
    )
