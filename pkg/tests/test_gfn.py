import math

import numpy as np
import pytest

from feedflow.gfn import (
    ActionSpace,
    Adam,
    FlowArch,
    FlowModel,
    SampledTrajectory,
    TableTree,
    backward_policy,
    consistent_tabular_model,
    db_residual,
    fm_loss,
    forward_policy,
    load_checkpoint,
    make_trajectory_batch,
    sample_candidates,
    sample_trajectory,
    save_checkpoint,
    tb_gradient,
    tb_loss,
    tb_losses,
    update,
)
from feedflow.sim import Download, Pause, SimConfig, new_session
from feedflow.traces import NetworkTrace, UserTrace

from conftest import flat_video, make_queue

OBS0 = np.zeros(0)


def star_tree(rewards):
    """Root with one terminal child per reward."""
    n = len(rewards)
    children = [list(range(1, n + 1))] + [[] for _ in range(n)]
    return TableTree(children, {i + 1: r for i, r in enumerate(rewards)})


def chain_tree():
    """Single edge root -> terminal with reward 1."""
    return TableTree([[1], []], {1: 1.0})


def tabular_model(tree, log_flows, log_z=0.0):
    """Model whose affine output equals the given per-(state, slot) log flows."""
    arch = FlowArch(0, tree.feature_dim, (), tree.n_slots)
    model = FlowModel(arch, np.random.default_rng(0))
    weights = np.zeros((tree.feature_dim, tree.n_slots))
    for (s, slot), value in log_flows.items():
        weights[s, slot] = value
    model.net.set_params(np.concatenate([weights.ravel(), np.zeros(tree.n_slots)]))
    model.log_z = log_z
    return model


def enumerate_trajectories(tree):
    trajs = []
    for terminal in tree.terminals():
        states = [0]
        choices = []
        for s, slot in tree.path_to(terminal):
            choices.append(slot)
            states.append(tree.children(s)[slot])
        trajs.append(SampledTrajectory(states, choices, [0.0] * len(choices)))
    return trajs


def terminal_distribution(model, tree):
    """Exact terminal probabilities by multiplying forward policies."""
    probs = {}

    def walk(state, acc):
        if tree.is_terminal(state):
            probs[state] = acc
            return
        p = forward_policy(model, OBS0, tree, state)
        for i, child in enumerate(tree.children(state)):
            walk(child, acc * p[i])

    walk(0, 1.0)
    return probs


# --- forward / backward policies ---


def test_forward_policy_uniform_for_equal_flows():
    tree = star_tree([1.0, 1.0, 1.0, 1.0])
    model = tabular_model(tree, {})
    probs = forward_policy(model, OBS0, tree, 0)
    assert np.allclose(probs, 0.25)


def test_forward_policy_normalizes_flows():
    tree = star_tree([1.0, 1.0])
    model = tabular_model(tree, {(0, 0): math.log(1.0), (0, 1): math.log(3.0)})
    probs = forward_policy(model, OBS0, tree, 0)
    assert probs == pytest.approx([0.25, 0.75])
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_forward_policy_shift_invariant():
    tree = star_tree([1.0, 1.0, 1.0])
    flows = {(0, 0): 0.3, (0, 1): -1.2, (0, 2): 2.0}
    shifted = {k: v + 5.0 for k, v in flows.items()}
    p1 = forward_policy(tabular_model(tree, flows), OBS0, tree, 0)
    p2 = forward_policy(tabular_model(tree, shifted), OBS0, tree, 0)
    assert np.allclose(p1, p2)


def test_forward_policy_rejects_terminal():
    tree = chain_tree()
    model = tabular_model(tree, {})
    with pytest.raises(ValueError):
        forward_policy(model, OBS0, tree, 1)


def test_backward_policy_is_degenerate():
    tree = star_tree([1.0, 2.0])
    parent, prob = backward_policy(tree, 2)
    assert parent == 0 and prob == 1.0
    with pytest.raises(ValueError):
        backward_policy(tree, 0)


def test_backward_product_along_trajectory_is_one():
    rng = np.random.default_rng(3)
    tree = TableTree.random(rng, max_terminals=25)
    for traj in enumerate_trajectories(tree):
        product = 1.0
        for state in traj.states[1:]:
            _, prob = backward_policy(tree, state)
            product *= prob
        assert product == 1.0


# --- sampling ---


def test_sample_trajectory_deterministic_given_rng():
    rng = np.random.default_rng(5)
    tree = TableTree.random(rng, max_terminals=40)
    model = tabular_model(tree, {})
    t1 = sample_trajectory(model, OBS0, tree, np.random.default_rng(123))
    t2 = sample_trajectory(model, OBS0, tree, np.random.default_rng(123))
    assert t1.states == t2.states and t1.choices == t2.choices


def test_sample_trajectory_logprobs_match_policy():
    rng = np.random.default_rng(7)
    tree = TableTree.random(rng, max_terminals=30)
    model = tabular_model(
        tree,
        {
            (s, i): float(rng.normal())
            for s in range(tree.n_states)
            for i in range(len(tree.children(s)))
        },
    )
    traj = sample_trajectory(model, OBS0, tree, rng)
    for state, choice, logp in zip(traj.states, traj.choices, traj.log_probs):
        probs = forward_policy(model, OBS0, tree, state)
        assert logp == pytest.approx(math.log(probs[choice]))


def test_uniform_sampling_frequencies():
    # Uniform flows over T direct terminals: each frequency within 3 sigma.
    n, draws = 8, 10_000
    tree = star_tree([1.0] * n)
    model = tabular_model(tree, {})
    rng = np.random.default_rng(11)
    counts = np.zeros(n)
    for _ in range(draws):
        traj = sample_trajectory(model, OBS0, tree, rng)
        counts[traj.terminal - 1] += 1
    p = 1.0 / n
    sigma = math.sqrt(p * (1 - p) / draws)
    assert np.all(np.abs(counts / draws - p) <= 3 * sigma)


def test_sample_candidates_k1_single():
    tree = star_tree([1.0, 2.0, 3.0])
    model = tabular_model(tree, {})
    out = sample_candidates(model, OBS0, tree, 1, np.random.default_rng(1))
    assert len(out) == 1


def test_sample_candidates_distinct_and_bounded():
    tree = star_tree([1.0, 2.0, 3.0])
    model = tabular_model(tree, {})
    out = sample_candidates(model, OBS0, tree, 10, np.random.default_rng(2))
    terminals = [t.terminal for t in out]
    assert len(set(terminals)) == len(terminals)
    assert 1 <= len(out) <= 3  # only 3 distinct terminals exist


def test_sample_candidates_ranked_by_log_prob():
    tree = star_tree([1.0] * 4)
    model = tabular_model(
        tree, {(0, 0): 2.0, (0, 1): 1.0, (0, 2): 0.0, (0, 3): -1.0}
    )
    out = sample_candidates(model, OBS0, tree, 4, np.random.default_rng(3), max_attempts=200)
    logps = [t.log_prob for t in out]
    assert logps == sorted(logps, reverse=True)


# --- losses ---


def test_fm_loss_zero_for_consistent_flows():
    rng = np.random.default_rng(13)
    tree = TableTree.random(rng, max_terminals=40)
    model = consistent_tabular_model(tree)
    states = [s for s in range(tree.n_states) if s != 0]
    assert fm_loss(model, OBS0, tree, states, tree.reward) <= 1e-12


def test_fm_loss_single_edge_value():
    # Edge flow 2 into a terminal with reward 1: loss (log 2)^2.
    tree = chain_tree()
    model = tabular_model(tree, {(0, 0): math.log(2.0)})
    assert fm_loss(model, OBS0, tree, [1], tree.reward) == pytest.approx(
        math.log(2.0) ** 2
    )


def test_fm_loss_batch_permutation_invariant():
    rng = np.random.default_rng(17)
    tree = TableTree.random(rng, max_terminals=25)
    model = FlowModel(FlowArch(0, tree.feature_dim, (8,), tree.n_slots), rng)
    states = [s for s in range(tree.n_states) if s != 0]
    shuffled = list(states)
    rng.shuffle(shuffled)
    a = fm_loss(model, OBS0, tree, states, tree.reward)
    b = fm_loss(model, OBS0, tree, shuffled, tree.reward)
    assert a == pytest.approx(b, rel=1e-12)


def test_fm_loss_rejects_nonpositive_reward():
    tree = chain_tree()
    model = tabular_model(tree, {})
    with pytest.raises(ValueError):
        fm_loss(model, OBS0, tree, [1], {1: 0.0})


def test_tb_loss_two_terminal_toy_is_zero():
    # R = (1, 3), P_F = (0.25, 0.75), log Z = log 4 -> loss 0 on both paths.
    tree = star_tree([1.0, 3.0])
    model = tabular_model(
        tree,
        {(0, 0): math.log(1.0), (0, 1): math.log(3.0)},
        log_z=math.log(4.0),
    )
    for traj, reward in zip(enumerate_trajectories(tree), [1.0, 3.0]):
        assert tb_loss(model, OBS0, tree, traj, reward) == pytest.approx(0.0, abs=1e-24)


def test_tb_loss_reward_scale_shift_identity():
    rng = np.random.default_rng(19)
    tree = TableTree.random(rng, max_terminals=20)
    model = FlowModel(FlowArch(0, tree.feature_dim, (6,), tree.n_slots), rng)
    traj = enumerate_trajectories(tree)[0]
    reward = tree.reward(traj.terminal)
    c = 7.3
    base = tb_loss(model, OBS0, tree, traj, reward)
    model.log_z += math.log(c)
    scaled = tb_loss(model, OBS0, tree, traj, reward * c)
    assert scaled == pytest.approx(base, rel=1e-9)


def test_tb_loss_nonnegative():
    rng = np.random.default_rng(23)
    tree = TableTree.random(rng, max_terminals=20)
    model = FlowModel(FlowArch(0, tree.feature_dim, (6,), tree.n_slots), rng)
    trajs = enumerate_trajectories(tree)
    rewards = np.array([tree.reward(t.terminal) for t in trajs])
    batch = make_trajectory_batch(model, OBS0, tree, trajs)
    assert np.all(tb_losses(model, batch, rewards) >= 0.0)


def test_tb_rejects_nonpositive_reward():
    tree = chain_tree()
    model = tabular_model(tree, {})
    traj = enumerate_trajectories(tree)[0]
    with pytest.raises(ValueError):
        tb_loss(model, OBS0, tree, traj, 0.0)


def test_db_residual_consistent_and_terminal():
    rng = np.random.default_rng(29)
    tree = TableTree.random(rng, max_terminals=30)
    model = consistent_tabular_model(tree)
    for s in range(tree.n_states):
        for i, child in enumerate(tree.children(s)):
            reward = tree.reward(child) if tree.is_terminal(child) else None
            assert db_residual(model, OBS0, tree, s, i, reward) == pytest.approx(
                0.0, abs=1e-12
            )
    # terminal with F(x) = 2 and R(x) = 1 -> residual ln 2
    chain = chain_tree()
    model2 = tabular_model(chain, {(0, 0): math.log(2.0)})
    assert db_residual(model2, OBS0, chain, 0, 0, reward=1.0) == pytest.approx(
        math.log(2.0)
    )


def test_zero_db_residuals_imply_zero_tb_loss():
    rng = np.random.default_rng(31)
    for _ in range(5):
        tree = TableTree.random(rng, max_terminals=50)
        model = consistent_tabular_model(tree)
        trajs = enumerate_trajectories(tree)
        rewards = np.array([tree.reward(t.terminal) for t in trajs])
        batch = make_trajectory_batch(model, OBS0, tree, trajs)
        assert tb_losses(model, batch, rewards).max() <= 1e-12


# --- gradient / update ---


def test_gradient_vanishes_at_zero_loss():
    rng = np.random.default_rng(37)
    tree = TableTree.random(rng, max_terminals=30)
    model = consistent_tabular_model(tree)
    trajs = enumerate_trajectories(tree)
    rewards = np.array([tree.reward(t.terminal) for t in trajs])
    batch = make_trajectory_batch(model, OBS0, tree, trajs)
    _, grad = tb_gradient(model, batch, rewards)
    assert np.linalg.norm(grad) < 1e-8


def test_tb_gradient_wrt_log_z_is_twice_residual():
    tree = star_tree([1.0, 3.0])
    model = tabular_model(tree, {(0, 1): math.log(3.0)}, log_z=1.0)
    traj = enumerate_trajectories(tree)[0]
    batch = make_trajectory_batch(model, OBS0, tree, [traj])
    rewards = np.array([1.0])
    residuals = model.log_z + traj_log_prob(model, tree, traj) - np.log(rewards[0])
    _, grad = tb_gradient(model, batch, rewards)
    assert grad[-1] == pytest.approx(2.0 * residuals)


def traj_log_prob(model, tree, traj):
    total = 0.0
    for state, choice in zip(traj.states, traj.choices):
        total += math.log(forward_policy(model, OBS0, tree, state)[choice])
    return total


def test_update_zero_gradient_is_fixed_point():
    rng = np.random.default_rng(41)
    model = FlowModel(FlowArch(0, 4, (5,), 3), rng)
    opt = Adam(model.n_params, lr=0.1)
    before = model.get_params()
    update(model, np.zeros(model.n_params), opt)
    assert np.array_equal(model.get_params(), before)


def test_update_deterministic():
    rng = np.random.default_rng(43)
    grad = rng.normal(size=FlowModel(FlowArch(0, 4, (5,), 3), rng).n_params)

    def run():
        model = FlowModel(FlowArch(0, 4, (5,), 3), np.random.default_rng(43))
        opt = Adam(model.n_params, lr=0.05)
        for _ in range(3):
            update(model, grad, opt)
        return model.get_params()

    assert np.array_equal(run(), run())


def test_two_terminal_training_converges():
    # 2000 updates drive the TB loss below 1e-4 (fixed seed).
    tree = star_tree([1.0, 3.0])
    model = FlowModel(FlowArch(0, tree.feature_dim, (), tree.n_slots),
                      np.random.default_rng(47))
    opt = Adam(model.n_params, lr=0.05)
    trajs = enumerate_trajectories(tree)
    rewards = np.array([tree.reward(t.terminal) for t in trajs])
    batch = make_trajectory_batch(model, OBS0, tree, trajs)
    for _ in range(2000):
        _, grad = tb_gradient(model, batch, rewards)
        update(model, grad, opt)
    assert float(np.mean(tb_losses(model, batch, rewards))) < 1e-4
    assert model.step_count == 2000


# --- the controller-facing action space ---


def action_space_fixture():
    queue = make_queue(flat_video("a", 3), flat_video("b", 3), flat_video("c", 3))
    user = UserTrace((4.0, 4.0, 4.0))
    state = new_session(queue, user)
    config = SimConfig(window=2)
    return state, queue, user, config


def test_action_space_structure():
    state, queue, user, config = action_space_fixture()
    space = ActionSpace(state, queue, config)
    root_children = space.children(space.root())
    # 3 pauses + 2 legal videos at the root; 4 levels per video stage.
    assert len(root_children) == 5
    video_state = root_children[-1]
    assert len(space.children(video_state)) == 4
    leaf = space.children(video_state)[2]
    action = space.action_of(leaf)
    assert action == Download(1, 2)
    pause_action = space.action_of(root_children[0])
    assert pause_action == Pause(config.pause_set[0])


def test_action_space_matches_legal_actions():
    from feedflow.sim import legal_actions

    state, queue, user, config = action_space_fixture()
    space = ActionSpace(state, queue, config)
    leaves = []

    def collect(s):
        if space.is_terminal(s):
            leaves.append(space.action_of(s))
            return
        for c in space.children(s):
            collect(c)

    collect(space.root())
    assert sorted(map(repr, leaves)) == sorted(map(repr, legal_actions(state, queue, config)))


def test_action_space_parent_round_trip():
    state, queue, user, config = action_space_fixture()
    space = ActionSpace(state, queue, config)

    def check(s):
        for i, child in enumerate(space.children(s)):
            parent, slot = space.parent(child)
            assert parent == s
            _, slots = space.encode(s)
            assert slots[i] == slot
            check(child)

    check(space.root())


def test_model_policy_on_action_space():
    state, queue, user, config = action_space_fixture()
    space = ActionSpace(state, queue, config)
    obs = np.zeros(6)
    model = FlowModel(
        FlowArch(6, space.feature_dim, (16,), space.n_slots), np.random.default_rng(7)
    )
    probs = forward_policy(model, obs, space, space.root())
    assert probs.shape[0] == 5
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)
    traj = sample_trajectory(model, obs, space, np.random.default_rng(9))
    assert space.is_terminal(traj.terminal)


# --- checkpoints ---


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(51)
    model = FlowModel(FlowArch(3, 5, (8, 4), 6), rng)
    model.log_z = 0.7
    model.step_count = 12
    path = tmp_path / "model.json"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert np.array_equal(loaded.get_params(), model.get_params())
    assert loaded.step_count == 12
    assert loaded.arch == model.arch


def test_checkpoint_architecture_validation(tmp_path):
    rng = np.random.default_rng(53)
    model = FlowModel(FlowArch(3, 5, (8,), 6), rng)
    path = tmp_path / "model.json"
    save_checkpoint(model, path)
    with pytest.raises(ValueError):
        load_checkpoint(path, expected_arch=FlowArch(3, 5, (9,), 6))
