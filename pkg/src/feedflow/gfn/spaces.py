"""Decision spaces the flow model walks over.

Both spaces are trees rooted at an initial state: every state except the root
has exactly one parent, so the backward policy is degenerate. A space maps
each state to (encoding features, output slots): the model's output vector is
indexed by the slots to obtain one log edge flow per child.

ActionSpace is the per-decision space of the streaming controller, staged as
  stage 1: pause(duration) for each configured duration, or pick a video
           offset within the lookahead window that still has missing chunks;
  stage 2: after a video choice, pick a ladder level.
Pause choices are immediately terminal; (video, level) leaves map to Download
actions.

TableTree is an explicit enumerable tree with terminal rewards, used for
training/verification at toy scale. States are integers encoded one-hot, and
slot j means "j-th child of this state".
"""

from dataclasses import dataclass

import numpy as np

from ..sim import (
    CompositeAction,
    Download,
    Pause,
    SessionState,
    SimConfig,
    next_missing_chunk,
)
from ..media import RecommendationQueue


class TableTree:
    """Explicit tree with terminal rewards; states are integers, root is 0."""

    def __init__(self, children: list[list[int]], rewards: dict[int, float]):
        self.child_lists = children
        self.rewards = rewards
        self.n_states = len(children)
        self._parent: list[tuple[int, int] | None] = [None] * self.n_states
        for s, kids in enumerate(children):
            for slot, c in enumerate(kids):
                if self._parent[c] is not None:
                    raise ValueError(f"state {c} has two parents")
                self._parent[c] = (s, slot)
        for s in range(self.n_states):
            if not children[s] and s not in rewards:
                raise ValueError(f"terminal state {s} has no reward")
            if children[s] and s in rewards:
                raise ValueError(f"interior state {s} has a reward")
        if any(r <= 0 for r in rewards.values()):
            raise ValueError("rewards must be > 0")
        self.n_slots = max(len(kids) for kids in children)
        self.feature_dim = self.n_states

    def root(self) -> int:
        return 0

    def is_terminal(self, state: int) -> bool:
        return not self.child_lists[state]

    def children(self, state: int) -> list[int]:
        return self.child_lists[state]

    def parent(self, state: int) -> tuple[int, int]:
        p = self._parent[state]
        if p is None:
            raise ValueError("root has no parent")
        return p

    def encode(self, state: int) -> tuple[np.ndarray, np.ndarray]:
        feats = np.zeros(self.n_states)
        feats[state] = 1.0
        slots = np.arange(len(self.child_lists[state]), dtype=int)
        return feats, slots

    def reward(self, state: int) -> float:
        return self.rewards[state]

    def terminals(self) -> list[int]:
        return [s for s in range(self.n_states) if self.is_terminal(s)]

    def path_to(self, terminal: int) -> list[tuple[int, int]]:
        """Edges (state, child index) from the root down to `terminal`."""
        edges = []
        s = terminal
        while s != 0:
            p, slot = self.parent(s)
            edges.append((p, slot))
            s = p
        return list(reversed(edges))

    def state_flows(self) -> dict[int, float]:
        """Exact flows by backward induction: F(x) = R(x) at terminals,
        F(s) = sum of child flows elsewhere."""
        flows: dict[int, float] = {}

        def visit(s: int) -> float:
            if self.is_terminal(s):
                flows[s] = self.rewards[s]
            else:
                flows[s] = sum(visit(c) for c in self.child_lists[s])
            return flows[s]

        visit(0)
        return flows

    @staticmethod
    def random(
        rng: np.random.Generator,
        max_terminals: int = 200,
        branching: tuple[int, int] = (2, 4),
        reward_range: tuple[float, float] = (0.1, 10.0),
    ) -> "TableTree":
        """A random tree with between 2 and max_terminals leaves."""
        children: list[list[int]] = [[]]
        frontier = [0]
        n_leaves = 1
        target = int(rng.integers(2, max_terminals + 1))
        while frontier and n_leaves < target:
            idx = int(rng.integers(len(frontier)))
            s = frontier.pop(idx)
            n_kids = int(rng.integers(branching[0], branching[1] + 1))
            n_kids = min(n_kids, target - n_leaves + 1)
            if n_kids < 2:
                n_kids = 2
            kids = []
            for _ in range(n_kids):
                children.append([])
                kids.append(len(children) - 1)
            children[s] = kids
            frontier.extend(kids)
            n_leaves += n_kids - 1
        rewards = {
            s: float(rng.uniform(*reward_range))
            for s in range(len(children))
            if not children[s]
        }
        return TableTree(children, rewards)


ROOT = ("root",)


@dataclass(frozen=True)
class VideoChoice:
    offset: int  # position within the lookahead window


@dataclass(frozen=True)
class PauseLeaf:
    index: int  # into the configured pause set


@dataclass(frozen=True)
class DownloadLeaf:
    offset: int
    level: int


class ActionSpace:
    """Two-stage action tree for one decision point.

    Output slot layout (shared across states, masked per state):
      [0, P)            pause durations
      [P, P + W)        video offsets within the window
      [P + W, P + W + L) ladder levels
    The root exposes pause slots plus the currently legal video offsets; a
    VideoChoice state exposes the level slots.
    """

    def __init__(
        self,
        state: SessionState,
        queue: RecommendationQueue,
        config: SimConfig,
    ):
        self.config = config
        self.n_pause = len(config.pause_set)
        self.window = config.window
        self.n_levels = len(queue[0].chunk_sizes[0])
        self.n_slots = self.n_pause + self.window + self.n_levels
        self.feature_dim = 1 + self.window
        self.current_video = state.current_video
        self.legal_offsets = []
        for offset in range(self.window):
            v = state.current_video + offset
            if v < len(queue) and next_missing_chunk(state, queue, v) is not None:
                self.legal_offsets.append(offset)

    def root(self):
        return ROOT

    def is_terminal(self, state) -> bool:
        return isinstance(state, (PauseLeaf, DownloadLeaf))

    def children(self, state) -> list:
        if state == ROOT:
            kids: list = [PauseLeaf(i) for i in range(self.n_pause)]
            kids.extend(VideoChoice(o) for o in self.legal_offsets)
            return kids
        if isinstance(state, VideoChoice):
            return [DownloadLeaf(state.offset, lvl) for lvl in range(self.n_levels)]
        return []

    def parent(self, state) -> tuple[object, int]:
        if state == ROOT:
            raise ValueError("root has no parent")
        if isinstance(state, PauseLeaf):
            return ROOT, state.index
        if isinstance(state, VideoChoice):
            return ROOT, self.n_pause + state.offset
        return VideoChoice(state.offset), self.n_pause + self.window + state.level

    def encode(self, state) -> tuple[np.ndarray, np.ndarray]:
        feats = np.zeros(self.feature_dim)
        if state == ROOT:
            slots = [i for i in range(self.n_pause)]
            slots.extend(self.n_pause + o for o in self.legal_offsets)
        elif isinstance(state, VideoChoice):
            feats[0] = 1.0
            feats[1 + state.offset] = 1.0
            base = self.n_pause + self.window
            slots = [base + lvl for lvl in range(self.n_levels)]
        else:
            raise ValueError("terminal states have no children to encode")
        return feats, np.asarray(slots, dtype=int)

    def action_of(self, leaf) -> CompositeAction:
        """Translate a terminal state into the simulator action it denotes."""
        if isinstance(leaf, PauseLeaf):
            return Pause(self.config.pause_set[leaf.index])
        if isinstance(leaf, DownloadLeaf):
            return Download(self.current_video + leaf.offset, leaf.level)
        raise ValueError(f"{leaf!r} is not a terminal state")
