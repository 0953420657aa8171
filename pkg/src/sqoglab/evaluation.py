"""Monte-Carlo Q oracle, action-grid reports, Q-difference metrics, CSV emission.

The oracle resets the environment to a given state, executes the queried
action, then follows the policy, averaging discounted returns over rollouts.
Desk environments carry their full state in the observation, so reset-to-state
is native. Grid reports sweep a 1-D action range at fixed increments and pair
critic values with oracle values, empirical behavior density, and hull
membership flags.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import envs
from .data import OfflineDataset, empirical_mu
from .envs import ContinuousEnv, TabularMdp
from .hull import ChnQuery, chn_contains

METRICS_COLUMNS = (
    "step",
    "critic_loss_td",
    "critic_loss_og",
    "lambda",
    "eval_return",
    "normalized_score",
)
GRID_COLUMNS = (
    "action",
    "critic_q",
    "oracle_q",
    "critic_q_norm",
    "oracle_q_norm",
    "density",
    "in_chn",
    "is_ood",
)


@dataclass(frozen=True)
class McOracleConfig:
    n_rollouts: int = 1000
    horizon: int = 200
    gamma: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.n_rollouts < 1:
            raise ValueError("n_rollouts must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")


@dataclass(frozen=True)
class ScoreRefs:
    random_score: float
    expert_score: float

    def __post_init__(self):
        if not self.expert_score > self.random_score:
            raise ValueError("expert_score must exceed random_score")


@dataclass(frozen=True)
class QGridReport:
    state: np.ndarray
    actions: np.ndarray
    critic_q: np.ndarray
    oracle_q: np.ndarray
    density: np.ndarray
    in_chn: np.ndarray
    is_ood: np.ndarray
    critic_norm_const: float
    oracle_norm_const: float

    @property
    def critic_q_norm(self) -> np.ndarray:
        return self.critic_q / self.critic_norm_const

    @property
    def oracle_q_norm(self) -> np.ndarray:
        return self.oracle_q / self.oracle_norm_const


def _rollout_return_continuous(
    env: ContinuousEnv,
    policy,
    state: np.ndarray,
    first_action: np.ndarray,
    horizon: int,
    gamma: float,
    rng: np.random.Generator,
) -> float:
    total = 0.0
    disc = 1.0
    s = np.asarray(state, dtype=np.float64)
    a = np.asarray(first_action, dtype=np.float64)
    for _ in range(horizon):
        s2, r, done = envs.step(env, s, a)
        total += disc * r
        disc *= gamma
        if done:
            break
        s = s2
        a = policy(s, rng)
    return total


def _rollout_return_tabular(
    mdp: TabularMdp,
    policy_matrix: np.ndarray,
    state: int,
    action: int,
    horizon: int,
    gamma: float,
    rng: np.random.Generator,
) -> float:
    total = 0.0
    disc = 1.0
    s, a = int(state), int(action)
    for _ in range(horizon):
        s2, r, done = envs.tabular_step(mdp, s, a, rng)
        total += disc * r
        disc *= gamma
        if done:
            break
        s = s2
        a = int(rng.choice(mdp.n_actions, p=policy_matrix[s]))
    return total


def mc_q(env, policy, state, action, cfg: McOracleConfig) -> float:
    """Monte-Carlo estimate of Q(state, action) under the policy.

    Deterministic policy on a deterministic continuous env: one rollout equals
    the n_rollouts average, so only one is run.
    """
    if isinstance(env, ContinuousEnv):
        deterministic = bool(getattr(policy, "deterministic", False))
        n = 1 if deterministic else cfg.n_rollouts
        returns = np.empty(n)
        for i in range(n):
            rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(i,)))
            returns[i] = _rollout_return_continuous(
                env, policy, state, action, cfg.horizon, cfg.gamma, rng
            )
        return float(returns.mean())
    if isinstance(env, TabularMdp):
        returns = np.empty(cfg.n_rollouts)
        for i in range(cfg.n_rollouts):
            rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(i,)))
            returns[i] = _rollout_return_tabular(
                env, np.asarray(policy), state, action, cfg.horizon, cfg.gamma, rng
            )
        return float(returns.mean())
    raise TypeError(f"environment {type(env).__name__} does not support state injection")


def action_grid(action_low: float, action_high: float, step: float) -> np.ndarray:
    """Inclusive grid at fixed increments (last point may fall short of the top)."""
    if step <= 0:
        raise ValueError("step must be positive")
    n = int(math.floor((action_high - action_low) / step + 1e-9))
    return action_low + step * np.arange(n + 1)


def _max_abs(values: np.ndarray, what: str) -> float:
    c = float(np.max(np.abs(values)))
    if c == 0.0:
        raise ValueError(f"normalization undefined: all {what} values are zero")
    return c


def q_grid(
    critic,
    env: ContinuousEnv,
    policy,
    state: np.ndarray,
    dataset: OfflineDataset,
    query: ChnQuery,
    cfg: McOracleConfig,
    step: float = 0.01,
    tol_s: float = 0.05,
    tol_a: float = 0.05,
    hull_tol: float = 1e-6,
) -> QGridReport:
    """Critic vs oracle values over the action grid at one state.

    Defined for 1-D action spaces only; higher dimensions are served by
    q_diff_metric instead. is_ood flags grid actions with zero empirical
    density in the (tol_s, tol_a) ball.
    """
    if env.action_dim != 1:
        raise ValueError("q_grid requires a 1-D action space; use q_diff_metric instead")
    state = np.asarray(state, dtype=np.float64)
    grid = action_grid(float(env.action_low[0]), float(env.action_high[0]), step)
    n = grid.shape[0]

    states_tiled = np.tile(state, (n, 1))
    critic_q = np.asarray(critic(states_tiled, grid[:, None]), dtype=np.float64)
    oracle_q = np.array([mc_q(env, policy, state, np.array([a]), cfg) for a in grid])
    density = np.array([empirical_mu(dataset, state, np.array([a]), tol_s, tol_a) for a in grid])
    in_chn = np.array(
        [chn_contains(np.concatenate([state, [a]]), query, tol=hull_tol) for a in grid]
    )
    return QGridReport(
        state=state,
        actions=grid,
        critic_q=critic_q,
        oracle_q=oracle_q,
        density=density,
        in_chn=in_chn,
        is_ood=density <= 0.0,
        critic_norm_const=_max_abs(critic_q, "critic"),
        oracle_norm_const=_max_abs(oracle_q, "oracle"),
    )


def q_diff_metric(critic, env, policy, sample_states_actions, cfg: McOracleConfig) -> float:
    """Mean absolute difference between max-abs-normalized critic and oracle values."""
    states, actions = sample_states_actions
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    if states.shape[0] == 0:
        raise ValueError("sample set must be non-empty")
    critic_q = np.asarray(critic(states, actions), dtype=np.float64)
    oracle_q = np.array(
        [mc_q(env, policy, states[i], actions[i], cfg) for i in range(states.shape[0])]
    )
    critic_norm = critic_q / _max_abs(critic_q, "critic")
    oracle_norm = oracle_q / _max_abs(oracle_q, "oracle")
    return float(np.mean(np.abs(critic_norm - oracle_norm)))


def normalized_score(score: float, refs: ScoreRefs) -> float:
    """100 (score - random) / (expert - random); 0 at random, 100 at expert."""
    return 100.0 * (score - refs.random_score) / (refs.expert_score - refs.random_score)


def ood_region_mask(report: QGridReport, density_threshold: float) -> np.ndarray:
    """Grid cells whose empirical behavior density falls below the threshold."""
    return report.density < density_threshold


def masked_norm_mae(report: QGridReport, mask: np.ndarray) -> float:
    """Mean |critic_norm - oracle_norm| over the masked grid cells."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask selects no grid cells")
    return float(np.mean(np.abs(report.critic_q_norm[mask] - report.oracle_q_norm[mask])))


def select_key_states(
    dataset: OfflineDataset, tol_s: float = 0.05, chunk: int = 512
) -> tuple[np.ndarray, np.ndarray]:
    """The two most frequently occurring states (densest tolerance balls).

    The second state is the densest one at distance > tol_s from the first so
    the pair does not collapse onto a single mode; ties break to the first
    occurrence.
    """
    states = dataset.states
    n = states.shape[0]
    counts = np.empty(n, dtype=np.int64)
    sq = (states**2).sum(axis=1)
    for start in range(0, n, chunk):
        block = states[start : start + chunk]
        d2 = (
            sq[start : start + chunk, None]
            + sq[None, :]
            - 2.0 * block @ states.T
        )
        counts[start : start + chunk] = (d2 <= tol_s**2 + 1e-12).sum(axis=1)
    first = int(np.argmax(counts))
    separated = np.linalg.norm(states - states[first], axis=1) > tol_s
    if not separated.any():
        raise ValueError("all states lie within tol_s of the densest state")
    masked_counts = np.where(separated, counts, -1)
    second = int(np.argmax(masked_counts))
    return states[first].copy(), states[second].copy()


# ---------------------------------------------------------------------------
# CSV emission (deterministic, re-emission is byte-identical)
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def write_metrics_csv(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in METRICS_COLUMNS])


def read_metrics_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for raw in reader:
            rows.append(
                {
                    key: (None if value == "" else float(value))
                    for key, value in raw.items()
                }
            )
        return rows


def write_grid_csv(report: QGridReport, path) -> None:
    critic_norm = report.critic_q_norm
    oracle_norm = report.oracle_q_norm
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GRID_COLUMNS)
        for i in range(report.actions.shape[0]):
            writer.writerow(
                [
                    _fmt(report.actions[i]),
                    _fmt(report.critic_q[i]),
                    _fmt(report.oracle_q[i]),
                    _fmt(critic_norm[i]),
                    _fmt(oracle_norm[i]),
                    _fmt(report.density[i]),
                    _fmt(bool(report.in_chn[i])),
                    _fmt(bool(report.is_ood[i])),
                ]
            )


def read_grid_csv(path) -> dict[str, np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        columns: dict[str, list[float]] = {col: [] for col in GRID_COLUMNS}
        for raw in reader:
            for col in GRID_COLUMNS:
                columns[col].append(float(raw[col]))
    return {col: np.asarray(vals) for col, vals in columns.items()}


def write_report(metrics: list[dict], grid_reports: list[QGridReport], out_dir) -> list[str]:
    """Emit the run metrics plus one grid CSV per key state; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    metrics_path = out / "metrics.csv"
    write_metrics_csv(metrics, metrics_path)
    paths.append(str(metrics_path))
    for k, report in enumerate(grid_reports):
        grid_path = out / f"grid_state{k}.csv"
        write_grid_csv(report, grid_path)
        paths.append(str(grid_path))
    return paths
