"""Offline dataset generation, empirical behavior density, sampling, persistence.

Datasets are immutable after generation and stored column-wise (struct of
arrays) for fast batched access; `transitions` offers the row view. The file
format is JSON Lines: one header object, then one object per transition, all
reals printed as decimals with 17 significant digits so round trips are
bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import json
import numpy as np

from . import envs
from .envs import ContinuousEnv, TabularMdp
from .seeding import component_rng

BEHAVIOR_KINDS = ("uniform-random", "scripted-proportional", "scripted-plus-gaussian")
# dataset quality tiers (mirrors the usual random/medium/expert split)
TIERS = {
    "random": ("uniform-random", 0.0),
    "medium": ("scripted-plus-gaussian", 0.3),
    "expert": ("scripted-proportional", 0.0),
}


class DatasetFormatError(ValueError):
    """Malformed dataset file; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass(frozen=True)
class BehaviorPolicy:
    """Declarative behavior spec; `bind` resolves it against an environment."""

    kind: str
    sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in BEHAVIOR_KINDS:
            raise ValueError(f"unknown behavior kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")

    @property
    def behavior_id(self) -> str:
        if self.kind == "scripted-plus-gaussian":
            return f"{self.kind}({self.sigma})"
        return self.kind

    def bind(self, env: ContinuousEnv):
        if self.kind == "uniform-random":
            return UniformRandomPolicy(env)
        expert = envs.expert_policy(env)
        if self.kind == "scripted-proportional":
            return expert
        return NoisyScriptedPolicy(expert, self.sigma, env)


class UniformRandomPolicy:
    deterministic = False

    def __init__(self, env: ContinuousEnv):
        self.low = env.action_low
        self.high = env.action_high

    def __call__(self, state, rng) -> np.ndarray:
        return rng.uniform(self.low, self.high)


class NoisyScriptedPolicy:
    """Scripted action plus Gaussian noise, clamped back into the action box.

    sigma is declared in physical control units; envs with normalized action
    interfaces divide by their control scale.
    """

    deterministic = False

    def __init__(self, base, sigma: float, env: ContinuousEnv):
        self.base = base
        self.sigma = sigma / env.control_scale
        self.low = env.action_low
        self.high = env.action_high

    def __call__(self, state, rng) -> np.ndarray:
        action = self.base(state, rng) + rng.normal(0.0, self.sigma, size=self.low.shape)
        return np.clip(action, self.low, self.high)


@dataclass(frozen=True)
class OfflineDataset:
    env_id: str
    behavior_id: str
    seed: int
    states: np.ndarray  # (n, state_dim)
    actions: np.ndarray  # (n, action_dim)
    rewards: np.ndarray  # (n,)
    next_states: np.ndarray  # (n, state_dim)
    dones: np.ndarray  # (n,) bool
    random_score: float
    expert_score: float

    def __post_init__(self):
        n = self.states.shape[0]
        if n == 0:
            raise ValueError("dataset must be non-empty")
        if (
            self.actions.shape[0] != n
            or self.rewards.shape != (n,)
            or self.next_states.shape != self.states.shape
            or self.dones.shape != (n,)
        ):
            raise ValueError("dataset arrays are dimension-inconsistent")
        if not self.random_score < self.expert_score:
            raise ValueError("ref scores must satisfy random_score < expert_score")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.actions.shape[1]

    @property
    def ref_scores(self) -> tuple[float, float]:
        return (self.random_score, self.expert_score)

    @property
    def transitions(self) -> Iterator[Transition]:
        for i in range(len(self)):
            yield Transition(
                state=self.states[i],
                action=self.actions[i],
                reward=float(self.rewards[i]),
                next_state=self.next_states[i],
                done=bool(self.dones[i]),
            )

    def state_action_points(self) -> np.ndarray:
        """The (s, a) point cloud used by the hull machinery."""
        return np.hstack([self.states, self.actions])


@dataclass(frozen=True)
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]


def score_policy(env: ContinuousEnv, policy, episodes: int, rng: np.random.Generator) -> float:
    """Mean undiscounted episode return (the 'score' used by normalized scoring)."""
    total = 0.0
    for _ in range(episodes):
        traj = envs.rollout(env, policy, env.horizon, int(rng.integers(0, 2**63 - 1)))
        total += float(traj.rewards().sum())
    return total / episodes


def generate_dataset(
    env: ContinuousEnv | TabularMdp,
    behavior: BehaviorPolicy,
    n_transitions: int,
    seed: int,
    ref_episodes: int = 100,
) -> OfflineDataset:
    """Roll full episodes under the behavior policy until n transitions are collected.

    The last episode may truncate. Reference scores (uniform-random and scripted
    expert, `ref_episodes` episodes each) are computed once here and stored.
    """
    if n_transitions < 1:
        raise ValueError("n_transitions must be >= 1")
    if isinstance(env, TabularMdp):
        return _generate_tabular(env, behavior, n_transitions, seed, ref_episodes)

    gen_rng = component_rng(seed, "behavior")
    policy = behavior.bind(env)
    states, actions, rewards, next_states, dones = [], [], [], [], []
    while len(states) < n_transitions:
        state = env.initial_state(gen_rng)
        for _ in range(env.horizon):
            action = policy(state, gen_rng)
            next_state, reward, done = envs.step(env, state, action)
            states.append(state)
            actions.append(action)
            rewards.append(reward)
            next_states.append(next_state)
            dones.append(done)
            if done or len(states) >= n_transitions:
                break
            state = next_state

    random_score = score_policy(
        env, UniformRandomPolicy(env), ref_episodes, component_rng(seed, "eval")
    )
    expert_score = score_policy(
        env, envs.expert_policy(env), ref_episodes, component_rng(seed, "oracle")
    )
    return OfflineDataset(
        env_id=env.env_id,
        behavior_id=behavior.behavior_id,
        seed=seed,
        states=np.asarray(states, dtype=np.float64),
        actions=np.asarray(actions, dtype=np.float64),
        rewards=np.asarray(rewards, dtype=np.float64),
        next_states=np.asarray(next_states, dtype=np.float64),
        dones=np.asarray(dones, dtype=bool),
        random_score=random_score,
        expert_score=expert_score,
    )


def _tabular_episode_return(
    mdp: TabularMdp, policy_matrix: np.ndarray, rng: np.random.Generator, cap: int
) -> float:
    state = int(rng.integers(0, mdp.n_states))
    while mdp.terminal[state]:
        state = int(rng.integers(0, mdp.n_states))
    total = 0.0
    for _ in range(cap):
        action = int(rng.choice(mdp.n_actions, p=policy_matrix[state]))
        state, reward, done = envs.tabular_step(mdp, state, action, rng)
        total += reward
        if done:
            break
    return total


def _generate_tabular(
    mdp: TabularMdp, behavior: BehaviorPolicy, n_transitions: int, seed: int, ref_episodes: int
) -> OfflineDataset:
    """Gridworld datasets: integer states/actions encoded as 1-vectors."""
    uniform = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    expert = envs.grid_expert_matrix(int(round(np.sqrt(mdp.n_states))))
    if behavior.kind == "uniform-random":
        matrix = uniform
    elif behavior.kind == "scripted-proportional":
        matrix = expert
    else:
        # gaussian jitter has no tabular analogue: mix expert with uniform
        matrix = 0.7 * expert + 0.3 * uniform

    rng = component_rng(seed, "behavior")
    cap = 100
    states, actions, rewards, next_states, dones = [], [], [], [], []
    while len(states) < n_transitions:
        state = int(rng.integers(0, mdp.n_states))
        while mdp.terminal[state]:
            state = int(rng.integers(0, mdp.n_states))
        for _ in range(cap):
            action = int(rng.choice(mdp.n_actions, p=matrix[state]))
            next_state, reward, done = envs.tabular_step(mdp, state, action, rng)
            states.append([float(state)])
            actions.append([float(action)])
            rewards.append(reward)
            next_states.append([float(next_state)])
            dones.append(done)
            if done or len(states) >= n_transitions:
                break
            state = next_state

    ref_rng = component_rng(seed, "eval")
    random_score = float(
        np.mean([_tabular_episode_return(mdp, uniform, ref_rng, cap) for _ in range(ref_episodes)])
    )
    expert_rng = component_rng(seed, "oracle")
    expert_score = float(
        np.mean([_tabular_episode_return(mdp, expert, expert_rng, cap) for _ in range(ref_episodes)])
    )
    return OfflineDataset(
        env_id="grid-5x5",
        behavior_id=behavior.behavior_id,
        seed=seed,
        states=np.asarray(states, dtype=np.float64),
        actions=np.asarray(actions, dtype=np.float64),
        rewards=np.asarray(rewards, dtype=np.float64),
        next_states=np.asarray(next_states, dtype=np.float64),
        dones=np.asarray(dones, dtype=bool),
        random_score=random_score,
        expert_score=expert_score,
    )


def empirical_mu(
    dataset: OfflineDataset,
    state: np.ndarray,
    action: np.ndarray,
    tol_s: float = 0.05,
    tol_a: float = 0.05,
) -> float:
    """Empirical behavior density: count ratio over tolerance balls.

    Exact indicator matching is measure-zero in continuous spaces, so states
    and actions match within L2 balls of radius tol_s / tol_a. Returns 0 when
    the state never appears.
    """
    if tol_s < 0 or tol_a < 0:
        raise ValueError("tolerances must be nonnegative")
    state = np.asarray(state, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    state_hits = np.linalg.norm(dataset.states - state, axis=1) <= tol_s
    n_state = int(state_hits.sum())
    if n_state == 0:
        return 0.0
    action_hits = np.linalg.norm(dataset.actions[state_hits] - action, axis=1) <= tol_a
    return float(action_hits.sum()) / n_state


def sample_batch(dataset: OfflineDataset, batch_size: int, rng: np.random.Generator) -> Batch:
    """Uniform sampling with replacement; reproducible from the generator state."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > len(dataset):
        raise ValueError("batch_size exceeds dataset size")
    idx = rng.integers(0, len(dataset), size=batch_size)
    return Batch(
        states=dataset.states[idx],
        actions=dataset.actions[idx],
        rewards=dataset.rewards[idx],
        next_states=dataset.next_states[idx],
        dones=dataset.dones[idx],
    )


# ---------------------------------------------------------------------------
# Persistence (JSON Lines, 17-significant-digit decimals)
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_vec(v: np.ndarray) -> str:
    return "[" + ",".join(_fmt(x) for x in v) + "]"


def save(dataset: OfflineDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = (
            "{"
            f'"env_id":{json.dumps(dataset.env_id)},'
            f'"state_dim":{dataset.state_dim},'
            f'"action_dim":{dataset.action_dim},'
            f'"behavior_id":{json.dumps(dataset.behavior_id)},'
            f'"seed":{dataset.seed},'
            f'"n":{len(dataset)},'
            f'"random_score":{_fmt(dataset.random_score)},'
            f'"expert_score":{_fmt(dataset.expert_score)}'
            "}"
        )
        fh.write(header + "\n")
        for i in range(len(dataset)):
            fh.write(
                "{"
                f'"s":{_fmt_vec(dataset.states[i])},'
                f'"a":{_fmt_vec(dataset.actions[i])},'
                f'"r":{_fmt(dataset.rewards[i])},'
                f'"s2":{_fmt_vec(dataset.next_states[i])},'
                f'"d":{1 if dataset.dones[i] else 0}'
                "}\n"
            )


def load(path) -> OfflineDataset:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(1, "empty file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(1, f"bad header: {exc}") from exc
    required = {
        "env_id",
        "state_dim",
        "action_dim",
        "behavior_id",
        "seed",
        "n",
        "random_score",
        "expert_score",
    }
    missing = required - header.keys()
    if missing:
        raise DatasetFormatError(1, f"header missing keys {sorted(missing)}")
    state_dim, action_dim = int(header["state_dim"]), int(header["action_dim"])
    n = int(header["n"])
    if len(lines) - 1 != n:
        raise DatasetFormatError(len(lines), f"expected {n} transitions, found {len(lines) - 1}")

    states = np.empty((n, state_dim))
    actions = np.empty((n, action_dim))
    rewards = np.empty(n)
    next_states = np.empty((n, state_dim))
    dones = np.empty(n, dtype=bool)
    for i, line in enumerate(lines[1:]):
        line_no = i + 2
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(line_no, f"bad JSON: {exc}") from exc
        for key in ("s", "a", "r", "s2", "d"):
            if key not in row:
                raise DatasetFormatError(line_no, f"missing field {key!r}")
        if len(row["s"]) != state_dim or len(row["s2"]) != state_dim:
            raise DatasetFormatError(line_no, f"state width != {state_dim}")
        if len(row["a"]) != action_dim:
            raise DatasetFormatError(line_no, f"action width != {action_dim}")
        if row["d"] not in (0, 1):
            raise DatasetFormatError(line_no, "done flag must be 0 or 1")
        states[i] = row["s"]
        actions[i] = row["a"]
        rewards[i] = row["r"]
        next_states[i] = row["s2"]
        dones[i] = bool(row["d"])

    return OfflineDataset(
        env_id=header["env_id"],
        behavior_id=header["behavior_id"],
        seed=int(header["seed"]),
        states=states,
        actions=actions,
        rewards=rewards,
        next_states=next_states,
        dones=dones,
        random_score=float(header["random_score"]),
        expert_score=float(header["expert_score"]),
    )
