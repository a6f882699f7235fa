"""Conditional flow model over decision trees, with flow-matching and
trajectory-balance objectives.

The network maps concat(observation, state encoding) to one log edge flow per
output slot; a decision space selects the slots that correspond to the
children of a state. The forward policy is the softmax of the legal log
flows:

    P_F(child | s) = F(s -> child) / sum_c F(s -> c)

Because both spaces are trees, the backward policy puts probability 1 on the
unique parent, and the trajectory-balance loss of a trajectory tau ending in
x with reward R(x) reduces to

    L_TB(tau) = (log Z + sum_t log P_F(s_{t+1}|s_t) - log R(x))^2

The flow-matching loss penalizes, per non-root state, the squared gap between
log in-flow and log out-flow (terminal states compare in-flow to log reward).
Gradients are computed analytically and verified against finite differences
in the test suite.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .network import Adam, Mlp
from .spaces import TableTree

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class FlowArch:
    obs_dim: int
    feature_dim: int
    hidden: tuple[int, ...]
    n_slots: int

    @property
    def input_dim(self) -> int:
        return self.obs_dim + self.feature_dim


class FlowModel:
    """Parametric log edge flows plus a learnable log partition value."""

    def __init__(self, arch: FlowArch, rng: np.random.Generator):
        self.arch = arch
        self.net = Mlp([arch.input_dim, *arch.hidden, arch.n_slots], rng)
        self.log_z = 0.0
        self.step_count = 0

    @property
    def n_params(self) -> int:
        return self.net.n_params + 1

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.net.get_params(), [self.log_z]])

    def set_params(self, flat: np.ndarray) -> None:
        if flat.shape[0] != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters")
        self.net.set_params(flat[:-1])
        self.log_z = float(flat[-1])

    def _input(self, obs: np.ndarray, features: np.ndarray) -> np.ndarray:
        if obs.shape[0] != self.arch.obs_dim:
            raise ValueError(
                f"observation dim {obs.shape[0]} != expected {self.arch.obs_dim}"
            )
        return np.concatenate([obs, features])

    def log_edge_flows(self, obs: np.ndarray, space, state) -> np.ndarray:
        """log F(state -> child) for each child, in children() order."""
        if space.is_terminal(state):
            raise ValueError("terminal states have no outgoing flows")
        features, slots = space.encode(state)
        out, _ = self.net.forward(self._input(obs, features))
        return out[0, slots]


def forward_policy(model: FlowModel, obs: np.ndarray, space, state) -> np.ndarray:
    """Transition probabilities over children(state); sums to 1."""
    log_flows = model.log_edge_flows(obs, space, state)
    shifted = log_flows - log_flows.max()
    w = np.exp(shifted)
    return w / w.sum()


def backward_policy(space, state) -> tuple[object, float]:
    """The unique parent with probability 1 (the spaces are trees)."""
    parent, _ = space.parent(state)
    return parent, 1.0


@dataclass
class SampledTrajectory:
    """Root-to-terminal path: visited states, chosen child indices, and the
    forward log probabilities recorded at sampling time."""

    states: list
    choices: list[int]
    log_probs: list[float]

    @property
    def terminal(self):
        return self.states[-1]

    @property
    def log_prob(self) -> float:
        return float(sum(self.log_probs))


def sample_trajectory(
    model: FlowModel, obs: np.ndarray, space, rng: np.random.Generator
) -> SampledTrajectory:
    state = space.root()
    states = [state]
    choices: list[int] = []
    log_probs: list[float] = []
    while not space.is_terminal(state):
        probs = forward_policy(model, obs, space, state)
        choice = int(rng.choice(len(probs), p=probs))
        choices.append(choice)
        log_probs.append(float(np.log(probs[choice])))
        state = space.children(state)[choice]
        states.append(state)
    return SampledTrajectory(states, choices, log_probs)


def sample_candidates(
    model: FlowModel,
    obs: np.ndarray,
    space,
    k: int,
    rng: np.random.Generator,
    max_attempts: int | None = None,
) -> list[SampledTrajectory]:
    """Up to k distinct terminal candidates, ranked by descending trajectory
    log probability. Sampling stops after 5 * k attempts."""
    if k < 1:
        raise ValueError("k must be >= 1")
    budget = max_attempts if max_attempts is not None else 5 * k
    found: dict = {}
    for _ in range(budget):
        traj = sample_trajectory(model, obs, space, rng)
        if traj.terminal not in found:
            found[traj.terminal] = traj
            if len(found) == k:
                break
    ranked = sorted(found.values(), key=lambda t: -t.log_prob)
    return ranked


# --- Batched evaluation ---


@dataclass
class _Rows:
    """A batch of (input, legal slots) rows evaluated in one forward pass."""

    x: np.ndarray  # [n, input_dim]
    slots: np.ndarray  # [n, max_deg], padded with 0
    mask: np.ndarray  # [n, max_deg]

    @property
    def n(self) -> int:
        return self.x.shape[0]


def _build_rows(model: FlowModel, obs: np.ndarray, space, states: list) -> _Rows:
    encoded = [space.encode(s) for s in states]
    max_deg = max(len(slots) for _, slots in encoded)
    n = len(states)
    x = np.empty((n, model.arch.input_dim))
    slots = np.zeros((n, max_deg), dtype=int)
    mask = np.zeros((n, max_deg), dtype=bool)
    for i, (features, s) in enumerate(encoded):
        x[i] = model._input(obs, features)
        slots[i, : len(s)] = s
        mask[i, : len(s)] = True
    return _Rows(x, slots, mask)


def _row_values(out: np.ndarray, rows: _Rows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row legal log flows, their log-sum-exp, and softmax weights."""
    vals = out[np.arange(rows.n)[:, None], rows.slots]
    vals = np.where(rows.mask, vals, -np.inf)
    peak = vals.max(axis=1, keepdims=True)
    expv = np.where(rows.mask, np.exp(vals - peak), 0.0)
    total = expv.sum(axis=1, keepdims=True)
    lse = (peak + np.log(total)).ravel()
    softmax = expv / total
    return vals, lse, softmax


def _scatter_rows(grad_slots: np.ndarray, rows: _Rows, n_slots: int) -> np.ndarray:
    """Spread per-legal-slot gradients back onto the full output layout."""
    grad_out = np.zeros((rows.n, n_slots))
    np.add.at(
        grad_out,
        (np.repeat(np.arange(rows.n), rows.slots.shape[1]), rows.slots.ravel()),
        np.where(rows.mask, grad_slots, 0.0).ravel(),
    )
    return grad_out


@dataclass
class TrajectoryBatch:
    """Precompiled rows for the non-terminal steps of a set of trajectories."""

    rows: _Rows
    chosen: np.ndarray  # [n_rows] position of the chosen child within the row
    traj_id: np.ndarray  # [n_rows]
    n_traj: int


def make_trajectory_batch(
    model: FlowModel, obs: np.ndarray, space, trajectories: list[SampledTrajectory]
) -> TrajectoryBatch:
    states = []
    chosen = []
    traj_id = []
    for i, traj in enumerate(trajectories):
        for state, choice in zip(traj.states[:-1], traj.choices):
            states.append(state)
            chosen.append(choice)
            traj_id.append(i)
    rows = _build_rows(model, obs, space, states)
    return TrajectoryBatch(
        rows,
        np.asarray(chosen, dtype=int),
        np.asarray(traj_id, dtype=int),
        len(trajectories),
    )


def _tb_residuals(
    model: FlowModel, batch: TrajectoryBatch, rewards: np.ndarray
) -> tuple[np.ndarray, np.ndarray, list, np.ndarray]:
    out, cache = model.net.forward(batch.rows.x)
    vals, lse, softmax = _row_values(out, batch.rows)
    step_logp = vals[np.arange(batch.rows.n), batch.chosen] - lse
    sum_logp = np.zeros(batch.n_traj)
    np.add.at(sum_logp, batch.traj_id, step_logp)
    residuals = model.log_z + sum_logp - np.log(rewards)
    return residuals, softmax, cache, lse


def tb_losses(
    model: FlowModel, batch: TrajectoryBatch, rewards: np.ndarray
) -> np.ndarray:
    """Per-trajectory squared trajectory-balance residuals."""
    rewards = np.asarray(rewards, dtype=float)
    if np.any(rewards <= 0):
        raise ValueError("rewards must be > 0")
    residuals, _, _, _ = _tb_residuals(model, batch, rewards)
    return residuals**2


def tb_loss(
    model: FlowModel, obs: np.ndarray, space, trajectory: SampledTrajectory,
    reward: float,
) -> float:
    """Trajectory-balance loss of a single trajectory."""
    batch = make_trajectory_batch(model, obs, space, [trajectory])
    return float(tb_losses(model, batch, np.asarray([reward]))[0])


def tb_gradient(
    model: FlowModel, batch: TrajectoryBatch, rewards: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean TB loss over the batch and its gradient w.r.t. (net params, log_z)."""
    rewards = np.asarray(rewards, dtype=float)
    if np.any(rewards <= 0):
        raise ValueError("rewards must be > 0")
    residuals, softmax, cache, _ = _tb_residuals(model, batch, rewards)
    loss = float(np.mean(residuals**2))
    coef = 2.0 * residuals / batch.n_traj  # d loss / d residual_i
    row_coef = coef[batch.traj_id][:, None]
    grad_slots = -row_coef * softmax
    grad_slots[np.arange(batch.rows.n), batch.chosen] += row_coef.ravel()
    grad_out = _scatter_rows(grad_slots, batch.rows, model.arch.n_slots)
    grad_net = model.net.backward(cache, grad_out)
    grad_log_z = float(coef.sum())
    return loss, np.concatenate([grad_net, [grad_log_z]])


@dataclass
class StateBatch:
    """Precompiled rows for a flow-matching batch of non-root states."""

    parent_rows: _Rows
    parent_slot: np.ndarray  # output slot carrying the in-flow of each state
    own_rows: _Rows | None  # rows for the interior states only
    interior_pos: np.ndarray  # indices into the batch that are interior
    log_rewards: np.ndarray  # aligned with the batch; NaN for interior states


def make_state_batch(
    model: FlowModel, obs: np.ndarray, space, states: list, rewards
) -> StateBatch:
    """rewards: mapping or callable giving R(x) for the terminal states."""
    get_reward = rewards.__getitem__ if hasattr(rewards, "__getitem__") else rewards
    parents = []
    parent_slot = []
    interior = []
    interior_pos = []
    log_rewards = np.full(len(states), np.nan)
    for i, s in enumerate(states):
        p, slot_idx = space.parent(s)
        _, p_slots = space.encode(p)
        parents.append(p)
        parent_slot.append(p_slots[slot_idx])
        if space.is_terminal(s):
            r = float(get_reward(s))
            if r <= 0:
                raise ValueError("rewards must be > 0")
            log_rewards[i] = np.log(r)
        else:
            interior.append(s)
            interior_pos.append(i)
    own_rows = _build_rows(model, obs, space, interior) if interior else None
    return StateBatch(
        _build_rows(model, obs, space, parents),
        np.asarray(parent_slot, dtype=int),
        own_rows,
        np.asarray(interior_pos, dtype=int),
        log_rewards,
    )


def _fm_residuals(model: FlowModel, batch: StateBatch):
    p_out, p_cache = model.net.forward(batch.parent_rows.x)
    n = batch.parent_rows.n
    log_in = p_out[np.arange(n), batch.parent_slot]
    log_out = batch.log_rewards.copy()
    own = None
    if batch.own_rows is not None:
        o_out, o_cache = model.net.forward(batch.own_rows.x)
        _, o_lse, o_softmax = _row_values(o_out, batch.own_rows)
        log_out[batch.interior_pos] = o_lse
        own = (o_cache, o_softmax)
    return log_in - log_out, (p_out, p_cache), own


def fm_loss(model: FlowModel, obs: np.ndarray, space, states: list, rewards) -> float:
    """Mean squared in/out log-flow mismatch over the given non-root states."""
    batch = make_state_batch(model, obs, space, states, rewards)
    residuals, _, _ = _fm_residuals(model, batch)
    return float(np.mean(residuals**2))


def fm_gradient(
    model: FlowModel, obs: np.ndarray, space, states: list, rewards
) -> tuple[float, np.ndarray]:
    """Mean FM loss and its gradient w.r.t. (net params, log_z)."""
    batch = make_state_batch(model, obs, space, states, rewards)
    residuals, (p_out, p_cache), own = _fm_residuals(model, batch)
    n = batch.parent_rows.n
    loss = float(np.mean(residuals**2))
    coef = 2.0 * residuals / n
    grad_p = np.zeros_like(p_out)
    grad_p[np.arange(n), batch.parent_slot] = coef
    grad_net = model.net.backward(p_cache, grad_p)
    if own is not None:
        o_cache, o_softmax = own
        grad_slots = -coef[batch.interior_pos][:, None] * o_softmax
        grad_out = _scatter_rows(grad_slots, batch.own_rows, model.arch.n_slots)
        grad_net += model.net.backward(o_cache, grad_out)
    return loss, np.concatenate([grad_net, [0.0]])


def gradient(
    kind: str, model: FlowModel, obs: np.ndarray, space, batch, rewards
) -> tuple[float, np.ndarray]:
    """Analytic gradient of the requested loss over a batch.

    kind "tb": batch is a list of SampledTrajectory, rewards one value each.
    kind "fm": batch is a list of non-root states, rewards maps terminals.
    """
    if kind == "tb":
        compiled = make_trajectory_batch(model, obs, space, batch)
        return tb_gradient(model, compiled, np.asarray(rewards, dtype=float))
    if kind == "fm":
        return fm_gradient(model, obs, space, batch, rewards)
    raise ValueError(f"unknown loss kind {kind!r}")


def db_residual(
    model: FlowModel, obs: np.ndarray, space, state, child_index: int,
    reward: float | None = None,
) -> float:
    """Detailed-balance residual of the transition state -> child.

    For an interior child this is log F(state -> child) - log(out-flow of the
    child); for a terminal child it is log F(state -> child) - log R(child).
    All residuals are zero exactly when the flows are consistent.
    """
    log_flows = model.log_edge_flows(obs, space, state)
    child = space.children(state)[child_index]
    edge = float(log_flows[child_index])
    if space.is_terminal(child):
        if reward is None:
            raise ValueError("terminal transition needs a reward")
        if reward <= 0:
            raise ValueError("rewards must be > 0")
        return edge - float(np.log(reward))
    child_flows = model.log_edge_flows(obs, space, child)
    peak = child_flows.max()
    out = peak + np.log(np.exp(child_flows - peak).sum())
    return edge - float(out)


def update(model: FlowModel, grad: np.ndarray, optimizer: Adam) -> FlowModel:
    """Apply one optimizer step to (net params, log_z); returns the model."""
    model.set_params(optimizer.step(model.get_params(), grad))
    model.step_count += 1
    return model


def consistent_tabular_model(tree: TableTree) -> FlowModel:
    """Zero-hidden-layer model whose flows satisfy detailed balance exactly:
    each edge flow equals the child's state flow and log_z = log F(root)."""
    arch = FlowArch(
        obs_dim=0, feature_dim=tree.feature_dim, hidden=(), n_slots=tree.n_slots
    )
    model = FlowModel(arch, np.random.default_rng(0))
    flows = tree.state_flows()
    weights = np.zeros((tree.feature_dim, tree.n_slots))
    for s in range(tree.n_states):
        for slot, child in enumerate(tree.children(s)):
            weights[s, slot] = np.log(flows[child])
    flat = np.concatenate([weights.ravel(), np.zeros(tree.n_slots)])
    model.net.set_params(flat)
    model.log_z = float(np.log(flows[tree.root()]))
    return model


def save_checkpoint(model: FlowModel, path) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "arch": {
            "obs_dim": model.arch.obs_dim,
            "feature_dim": model.arch.feature_dim,
            "hidden": list(model.arch.hidden),
            "n_slots": model.arch.n_slots,
        },
        "params": model.net.get_params().tolist(),
        "log_z": model.log_z,
        "step_count": model.step_count,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path, expected_arch: FlowArch | None = None) -> FlowModel:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('format_version')}")
    arch = FlowArch(
        obs_dim=payload["arch"]["obs_dim"],
        feature_dim=payload["arch"]["feature_dim"],
        hidden=tuple(payload["arch"]["hidden"]),
        n_slots=payload["arch"]["n_slots"],
    )
    if expected_arch is not None and arch != expected_arch:
        raise ValueError(f"checkpoint architecture {arch} != expected {expected_arch}")
    model = FlowModel(arch, np.random.default_rng(0))
    params = np.asarray(payload["params"], dtype=float)
    model.net.set_params(params)
    model.log_z = float(payload["log_z"])
    model.step_count = int(payload["step_count"])
    return model
