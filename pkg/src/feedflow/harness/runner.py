"""Drivers that turn configuration + dataset into trained models and metrics.

All randomness flows from explicit integer seeds through per-purpose
`numpy` generators, so every run is a pure function of (config, seeds).
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from ..controller import (
    ControllerConfig,
    EpisodeResult,
    PolicyKind,
    RuleBased,
    Scenario,
    run_episode,
)
from ..gfn import Adam, FlowArch, FlowModel
from ..objective import normalize_qoe, qoe_bounds
from ..sim import SimConfig, observation_dim
from ..traces import BandwidthClass, CLASS_PRIOR_MBPS, Dataset, classify_trace
from .config import ExperimentConfig
from .datasets import build_scenarios, training_scenarios

METRICS_COLUMNS = (
    "policy",
    "class",
    "scenario_id",
    "seed",
    "qoe_norm",
    "qoe_raw",
    "rebuf_s",
    "bw_mb",
    "wastage_pct",
    "objective",
)

LOSS_CURVE_COLUMNS = ("episode", "mean_tb_loss", "mean_reward", "objective")


def model_arch(cfg: ExperimentConfig, dataset: Dataset) -> FlowArch:
    sim = cfg.sim
    return FlowArch(
        obs_dim=observation_dim(sim),
        feature_dim=1 + sim.window,
        hidden=tuple(cfg.hidden),
        n_slots=len(sim.pause_set) + sim.window + len(dataset.ladder),
    )


def new_model(cfg: ExperimentConfig, dataset: Dataset, seed: int) -> FlowModel:
    return FlowModel(model_arch(cfg, dataset), np.random.default_rng([seed, 0x0DE1]))


def controller_config(cfg: ExperimentConfig, dataset: Dataset, scenario: Scenario) -> ControllerConfig:
    """Per-scenario controller settings; the cold-start throughput prior is
    the scenario's bandwidth-class midpoint."""
    prior = CLASS_PRIOR_MBPS[classify_trace(scenario.trace)]
    sim = dataclasses.replace(cfg.sim, throughput_prior_mbps=prior)
    return ControllerConfig(
        sim=sim,
        ladder=dataset.ladder,
        qmap=cfg.quality_map(),
        tau_temp=cfg.tau_temp,
        learning_rate=cfg.learning_rate,
        shared_reward=cfg.shared_reward,
    )


def train_policy(
    cfg: ExperimentConfig,
    dataset: Dataset,
    policy: PolicyKind,
    seed: int,
) -> tuple[FlowModel, list[dict]]:
    """Train a fresh model by cycling the fixed training suite.

    Returns the model and one loss-curve row per episode.
    """
    if isinstance(policy, RuleBased):
        raise ValueError("the rule-based baseline is not trainable")
    suite = training_scenarios(dataset, cfg.training_scenarios, cfg.queue_length)
    model = new_model(cfg, dataset, seed)
    optimizer = Adam(model.n_params, lr=cfg.learning_rate)
    rng = np.random.default_rng([seed, 0x7EA2])
    curve = []
    for episode in range(cfg.training_episodes):
        scenario = suite[episode % len(suite)]
        result = run_episode(
            policy,
            model,
            scenario,
            controller_config(cfg, dataset, scenario),
            train=True,
            rng=rng,
            optimizer=optimizer,
        )
        curve.append(
            {
                "episode": episode,
                "mean_tb_loss": result.mean_tb_loss,
                "mean_reward": result.mean_reward,
                "objective": result.metrics.objective,
            }
        )
    return model, curve


def _metrics_row(
    cfg: ExperimentConfig,
    dataset: Dataset,
    policy_name: str,
    bw_class: BandwidthClass,
    scenario: Scenario,
    seed: int,
    result: EpisodeResult,
) -> dict:
    bounds = qoe_bounds(
        scenario.queue,
        scenario.user,
        scenario.prefs,
        dataset.ladder,
        cfg.quality_map(),
        cfg.rebuffer_budget_s,
    )
    m = result.metrics
    return {
        "policy": policy_name,
        "class": bw_class.value,
        "scenario_id": scenario.scenario_id,
        "seed": seed,
        "qoe_norm": normalize_qoe(m.qoe_raw, bounds),
        "qoe_raw": m.qoe_raw,
        "rebuf_s": m.qoe_terms.rebuffer_sum,
        "bw_mb": m.bandwidth_mb,
        "wastage_pct": 100.0 * m.wastage_fraction,
        "objective": m.objective,
    }


def evaluate_policy(
    cfg: ExperimentConfig,
    dataset: Dataset,
    policy_name: str,
    model: FlowModel | None,
    seeds: tuple[int, ...] | None = None,
    class_filter: BandwidthClass | None = None,
) -> list[dict]:
    """Evaluate one policy over the configured scenario suite and seeds."""
    policy = cfg.policy_kind(policy_name)
    scenarios = build_scenarios(dataset, cfg.scenarios_per_class, cfg.queue_length)
    rows = []
    for seed in seeds if seeds is not None else cfg.seeds:
        for index, (bw_class, scenario) in enumerate(scenarios):
            if class_filter is not None and bw_class != class_filter:
                continue
            rng = np.random.default_rng([seed, index])
            result = run_episode(
                policy,
                model,
                scenario,
                controller_config(cfg, dataset, scenario),
                train=False,
                rng=rng,
            )
            rows.append(
                _metrics_row(cfg, dataset, policy_name, bw_class, scenario, seed, result)
            )
    return rows


def ablate(
    cfg: ExperimentConfig, dataset: Dataset
) -> dict[str, list[dict]]:
    """Run the two ablation suites.

    candidates:       multi-candidate vs single-candidate generation.
    personalization:  per-user preferences vs one fixed preference vector.
    Each arm is trained independently per seed, then evaluated on the shared
    scenario suite.
    """
    suites: dict[str, list[dict]] = {"candidates": [], "personalization": []}
    for seed in cfg.seeds:
        multi_model, _ = train_policy(cfg, dataset, cfg.policy_kind("gfn_multi"), seed)
        single_model, _ = train_policy(cfg, dataset, cfg.policy_kind("gfn_single"), seed)
        fixed_model, _ = train_policy(
            cfg, dataset, cfg.policy_kind("gfn_fixed_pref"), seed
        )
        multi_rows = evaluate_policy(cfg, dataset, "gfn_multi", multi_model, (seed,))
        suites["candidates"].extend(multi_rows)
        suites["candidates"].extend(
            evaluate_policy(cfg, dataset, "gfn_single", single_model, (seed,))
        )
        suites["personalization"].extend(multi_rows)
        suites["personalization"].extend(
            evaluate_policy(cfg, dataset, "gfn_fixed_pref", fixed_model, (seed,))
        )
    return suites
