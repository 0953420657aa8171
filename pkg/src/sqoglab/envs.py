"""Finite MDPs, desk-scale continuous control environments, and exact solvers.

Two deterministic continuous environments ("line-reach", "pendulum-lite") and
one tabular gridworld ("grid-5x5") stand in for full-scale benchmark suites.
All dynamics are pure functions of (state, action), which makes rollouts
bit-reproducible per seed and keeps the Monte-Carlo oracle cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Dynamics = Callable[[np.ndarray, np.ndarray], tuple[np.ndarray, float, bool]]
InitialState = Callable[[np.random.Generator], np.ndarray]


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with dense transition/reward tables.

    transition[s, a, s'] is row-stochastic in s'; terminal states are
    absorbing and contribute no bootstrap value.
    """

    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    gamma: float
    terminal: np.ndarray  # (S,) bool
    r_max: float

    def __post_init__(self):
        t = np.asarray(self.transition, dtype=np.float64)
        r = np.asarray(self.reward, dtype=np.float64)
        if t.ndim != 3 or t.shape[0] != t.shape[2] or r.shape != t.shape[:2]:
            raise ValueError("transition must be (S, A, S) and reward (S, A)")
        row_sums = t.sum(axis=2)
        if np.max(np.abs(row_sums - 1.0)) > 1e-12:
            raise ValueError("transition rows must sum to 1 within 1e-12")
        if np.any(t < 0):
            raise ValueError("transition probabilities must be nonnegative")
        if not np.all(np.isfinite(r)) or np.max(np.abs(r)) > self.r_max + 1e-12:
            raise ValueError(f"rewards must be finite with |r| <= {self.r_max}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "terminal", np.asarray(self.terminal, dtype=bool))

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]


@dataclass(frozen=True)
class ContinuousEnv:
    """Deterministic continuous-control environment with a bounded action box.

    control_scale is the physical control magnitude per unit action (1 when
    actions are the physical quantity itself); scripted behaviors express
    their noise in physical units.
    """

    env_id: str
    state_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    horizon: int
    dynamics: Dynamics = field(repr=False)
    initial_state: InitialState = field(repr=False)
    control_scale: float = 1.0


@dataclass(frozen=True)
class Trajectory:
    """Ordered (state, action, reward, next_state, done) steps from one episode."""

    steps: tuple[tuple[np.ndarray, np.ndarray, float, np.ndarray, bool], ...]
    seed: int

    def __len__(self) -> int:
        return len(self.steps)

    def rewards(self) -> np.ndarray:
        return np.array([s[2] for s in self.steps], dtype=np.float64)


class OutOfBoundsActionError(ValueError):
    """Raised when an action leaves the declared action box (no silent clipping)."""


def step(env: ContinuousEnv, state: np.ndarray, action: np.ndarray):
    """Advance one step; rejects out-of-bounds actions instead of clipping them."""
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (env.action_dim,):
        raise ValueError(f"action must have shape ({env.action_dim},)")
    if np.any(action < env.action_low - 1e-12) or np.any(action > env.action_high + 1e-12):
        raise OutOfBoundsActionError(
            f"action {action} outside [{env.action_low}, {env.action_high}] for {env.env_id}"
        )
    next_state, reward, done = env.dynamics(np.asarray(state, dtype=np.float64), action)
    return next_state, float(reward), bool(done)


def rollout(env: ContinuousEnv, policy, horizon: int, seed: int) -> Trajectory:
    """Run one episode; each rollout owns its random stream, so same seed => same data."""
    rng = np.random.default_rng(seed)
    state = env.initial_state(rng)
    steps = []
    for _ in range(horizon):
        action = policy(state, rng)
        next_state, reward, done = step(env, state, action)
        steps.append((state, action, reward, next_state, done))
        if done:
            break
        state = next_state
    return Trajectory(tuple(steps), seed)


def discounted_return(traj: Trajectory, gamma: float) -> float:
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    total = 0.0
    for reward in reversed(traj.rewards()):
        total = reward + gamma * total
    return float(total)


def wrap_angle(theta: float) -> float:
    """Map an angle to [-pi, pi)."""
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


# ---------------------------------------------------------------------------
# Desk-scale environments
# ---------------------------------------------------------------------------

LINE_REACH_DEFAULTS = {"step_gain": 0.1, "goal": 0.5, "horizon": 50}
PENDULUM_DEFAULTS = {
    "dt": 0.05,
    "gravity": 10.0,
    "mass": 1.0,
    "length": 1.0,
    "max_torque": 2.0,
    "horizon": 200,
}


def _make_line_reach(step_gain: float, goal: float, horizon: int) -> ContinuousEnv:
    def dynamics(state, action):
        s_next = float(np.clip(state[0] + step_gain * action[0], -1.0, 1.0))
        reward = -abs(s_next - goal)
        return np.array([s_next]), reward, False

    def initial(rng):
        return rng.uniform(-1.0, 1.0, size=1)

    return ContinuousEnv(
        env_id="line-reach",
        state_dim=1,
        action_dim=1,
        action_low=np.array([-1.0]),
        action_high=np.array([1.0]),
        horizon=horizon,
        dynamics=dynamics,
        initial_state=initial,
    )


def _make_pendulum_lite(
    dt: float, gravity: float, mass: float, length: float, max_torque: float, horizon: int
) -> ContinuousEnv:
    # Torque-limited swing-up; theta = 0 is upright. Semi-implicit Euler:
    # thdot' = thdot + (3g/2l sin(theta) + 3/(ml^2) u) dt, theta' = theta + thdot' dt.
    # Actions are normalized commands in [-1, 1]; torque u = max_torque * a.
    def dynamics(state, action):
        theta, thdot = float(state[0]), float(state[1])
        u = max_torque * float(action[0])
        cost = wrap_angle(theta) ** 2 + 0.1 * thdot**2 + 0.001 * u**2
        thdot_next = thdot + (
            1.5 * gravity / length * math.sin(theta) + 3.0 / (mass * length**2) * u
        ) * dt
        theta_next = wrap_angle(theta + thdot_next * dt)
        return np.array([theta_next, thdot_next]), -cost, False

    def initial(rng):
        return np.array([rng.uniform(-math.pi, math.pi), rng.uniform(-1.0, 1.0)])

    return ContinuousEnv(
        env_id="pendulum-lite",
        state_dim=2,
        action_dim=1,
        action_low=np.array([-1.0]),
        action_high=np.array([1.0]),
        horizon=horizon,
        dynamics=dynamics,
        initial_state=initial,
        control_scale=max_torque,
    )


def make_env(env_id: str, **overrides) -> ContinuousEnv:
    """Resolve a continuous environment from its string key."""
    if env_id == "line-reach":
        params = {**LINE_REACH_DEFAULTS, **overrides}
        return _make_line_reach(params["step_gain"], params["goal"], int(params["horizon"]))
    if env_id == "pendulum-lite":
        params = {**PENDULUM_DEFAULTS, **overrides}
        return _make_pendulum_lite(
            params["dt"],
            params["gravity"],
            params["mass"],
            params["length"],
            params["max_torque"],
            int(params["horizon"]),
        )
    if env_id == "grid-5x5":
        raise ValueError("grid-5x5 is tabular; use make_grid_mdp()")
    raise ValueError(f"unknown environment id {env_id!r}")


def make_grid_mdp(size: int = 5, gamma: float = 0.95) -> TabularMdp:
    """Deterministic gridworld: goal at the bottom-right corner, absorbing."""
    n_states = size * size
    n_actions = 4  # up, down, left, right
    goal = n_states - 1
    moves = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    transition = np.zeros((n_states, n_actions, n_states))
    reward = np.zeros((n_states, n_actions))
    for s in range(n_states):
        row, col = divmod(s, size)
        for a, (dr, dc) in enumerate(moves):
            if s == goal:
                transition[s, a, s] = 1.0  # absorbing
                continue
            r2 = min(max(row + dr, 0), size - 1)
            c2 = min(max(col + dc, 0), size - 1)
            s2 = r2 * size + c2
            transition[s, a, s2] = 1.0
            reward[s, a] = 1.0 if s2 == goal else -0.01
    terminal = np.zeros(n_states, dtype=bool)
    terminal[goal] = True
    return TabularMdp(transition=transition, reward=reward, gamma=gamma, terminal=terminal, r_max=1.0)


# ---------------------------------------------------------------------------
# Scripted controllers (used as expert behaviors and rollout policies)
# ---------------------------------------------------------------------------


class LineReachExpert:
    """Proportional controller driving the state to the goal."""

    deterministic = True

    def __init__(self, goal: float = 0.5, gain: float = 10.0):
        self.goal = goal
        self.gain = gain

    def __call__(self, state, rng=None) -> np.ndarray:
        return np.array([float(np.clip(self.gain * (self.goal - state[0]), -1.0, 1.0))])


class PendulumExpert:
    """Energy-pumping swing-up with PD stabilization near the top.

    Computes a torque, then emits the normalized command u / max_torque.
    """

    deterministic = True

    def __init__(
        self,
        gravity: float = 10.0,
        mass: float = 1.0,
        length: float = 1.0,
        max_torque: float = 2.0,
    ):
        self.inertia = mass * length**2 / 3.0
        self.e_top = mass * gravity * length / 2.0
        self.max_torque = max_torque
        self.gravity = gravity
        self.mass = mass
        self.length = length

    def __call__(self, state, rng=None) -> np.ndarray:
        theta = wrap_angle(float(state[0]))
        thdot = float(state[1])
        if abs(theta) < 0.4 and abs(thdot) < 2.0:
            u = -8.0 * theta - 2.0 * thdot
        else:
            # center of mass at l/2; potential zero at the horizontal
            energy = 0.5 * self.inertia * thdot**2 + (
                self.mass * self.gravity * self.length / 2.0
            ) * math.cos(theta)
            u = 2.0 * (self.e_top - energy) * math.copysign(1.0, thdot if thdot != 0.0 else 1.0)
        u = float(np.clip(u, -self.max_torque, self.max_torque))
        return np.array([u / self.max_torque])


def expert_policy(env: ContinuousEnv):
    if env.env_id == "line-reach":
        return LineReachExpert()
    if env.env_id == "pendulum-lite":
        return PendulumExpert()
    raise ValueError(f"no scripted expert for {env.env_id!r}")


# ---------------------------------------------------------------------------
# Exact tabular machinery
# ---------------------------------------------------------------------------


def validate_tabular_policy(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    policy = np.asarray(policy, dtype=np.float64)
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy must have shape (n_states, n_actions)")
    if np.max(np.abs(policy.sum(axis=1) - 1.0)) > 1e-10 or np.any(policy < 0):
        raise ValueError("policy rows must be distributions")
    return policy


def policy_backup(mdp: TabularMdp, policy: np.ndarray, q: np.ndarray) -> np.ndarray:
    """One exact Bellman backup under the policy; terminals contribute no bootstrap."""
    v = (policy * q).sum(axis=1)
    v = np.where(mdp.terminal, 0.0, v)
    return mdp.reward + mdp.gamma * (mdp.transition @ v)


def exact_policy_q(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """Solve the policy-evaluation fixed point as a linear system.

    Returns the unique Q with Q = r + gamma T Pi Q, residual sup-norm <= 1e-9.
    """
    policy = validate_tabular_policy(mdp, policy)
    n_s, n_a = mdp.n_states, mdp.n_actions
    n = n_s * n_a
    cont = np.where(mdp.terminal, 0.0, 1.0)
    # M[(s,a),(s',a')] = gamma * T(s'|s,a) * (1 - terminal(s')) * pi(a'|s')
    m = mdp.gamma * np.einsum("saj,j,jb->sajb", mdp.transition, cont, policy)
    a_mat = np.eye(n) - m.reshape(n, n)
    q = np.linalg.solve(a_mat, mdp.reward.reshape(n)).reshape(n_s, n_a)
    residual = float(np.max(np.abs(policy_backup(mdp, policy, q) - q)))
    if residual > 1e-9:
        raise RuntimeError(f"policy evaluation residual {residual:.3e} exceeds 1e-9")
    return q


def tabular_step(mdp: TabularMdp, state: int, action: int, rng: np.random.Generator):
    """Sample one transition; done is raised when the successor is terminal."""
    probs = mdp.transition[state, action]
    next_state = int(rng.choice(mdp.n_states, p=probs))
    reward = float(mdp.reward[state, action])
    return next_state, reward, bool(mdp.terminal[next_state])


def grid_expert_matrix(size: int = 5) -> np.ndarray:
    """Deterministic shortest-path policy for the gridworld (one-hot rows)."""
    n_states = size * size
    policy = np.zeros((n_states, 4))
    for s in range(n_states):
        row, col = divmod(s, size)
        if col < size - 1:
            policy[s, 3] = 1.0  # right
        elif row < size - 1:
            policy[s, 1] = 1.0  # down
        else:
            policy[s, 1] = 1.0  # at goal: arbitrary (absorbing)
    return policy
