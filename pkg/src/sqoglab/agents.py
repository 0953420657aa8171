"""TD3+BC baseline and the SQOG agent: twin critics, delayed actor, OOD smoothing.

SQOG's critic loss is the TD term plus beta times an OOD generalization term:
the Q-value at a noise-perturbed in-sample action is pulled toward the
gradient-detached Q-value at the source action. With beta = 0 the update is
the TD3+BC critic update exactly; the two agents share rng-stream discipline
(independent streams per component) so that equivalence is bit-testable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import envs, nets
from .data import Batch, OfflineDataset, sample_batch
from .nets import AdamState, MlpSpec
from .seeding import component_rng, component_seed

NOISE_KINDS = ("normal-clip", "normal-tanh", "uniform")


@dataclass(frozen=True)
class NoiseSpec:
    """Perturbation used to synthesize near-dataset OOD actions."""

    kind: str = "normal-clip"
    scale: float = 0.6
    clip: float = 0.5

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.clip <= 0:
            raise ValueError("clip must be positive")
        if self.scale < 0:
            raise ValueError("scale must be nonnegative")

    def draw(self, shape, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(-self.clip, self.clip, size=shape)
        base = rng.normal(0.0, self.scale, size=shape) if self.scale > 0 else np.zeros(shape)
        if self.kind == "normal-tanh":
            return self.clip * np.tanh(base)
        return np.clip(base, -self.clip, self.clip)


@dataclass(frozen=True)
class SqogConfig:
    gamma: float = 0.99
    tau: float = 0.005
    actor_freq: int = 2
    batch_size: int = 256
    total_steps: int = 100_000
    alpha: float = 150.0
    beta: float = 0.5
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    target_noise_scale: float = 0.2
    target_noise_clip: float = 0.5
    lr_actor: float = 3e-4
    lr_critic: float = 3e-4
    hidden: tuple[int, ...] = (64, 64)
    eval_every: int = 5000
    eval_episodes: int = 10
    log_every: int = 100

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.actor_freq < 1:
            raise ValueError("actor_freq must be >= 1")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.eval_every > 0 and (
            self.log_every <= 0 or self.eval_every % self.log_every != 0
        ):
            raise ValueError("eval_every must be a positive multiple of log_every")


@dataclass
class Net:
    spec: MlpSpec
    params: np.ndarray

    def copy(self) -> "Net":
        return Net(spec=self.spec, params=self.params.copy())


@dataclass
class AgentNets:
    actor: Net
    actor_target: Net
    critic1: Net
    critic2: Net
    critic1_target: Net
    critic2_target: Net
    action_low: np.ndarray
    action_high: np.ndarray
    # dataset state statistics; network inputs are z-scored states (raw
    # actions), without which desk-scale critics extrapolate wildly
    state_mean: np.ndarray
    state_std: np.ndarray

    def normalize_states(self, states: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(states) - self.state_mean) / self.state_std


def init_agent_nets(
    state_dim: int,
    action_dim: int,
    action_low: np.ndarray,
    action_high: np.ndarray,
    hidden: tuple[int, ...],
    init_seed: int,
    state_mean: np.ndarray | None = None,
    state_std: np.ndarray | None = None,
) -> AgentNets:
    """Online networks seeded independently; targets start equal to online."""
    seeds = [
        int(np.random.SeedSequence(init_seed, spawn_key=(k,)).generate_state(1)[0])
        for k in range(3)
    ]
    actor_spec = MlpSpec(layer_sizes=(state_dim, *hidden, action_dim), init_seed=seeds[0])
    critic_sizes = (state_dim + action_dim, *hidden, 1)
    c1_spec = MlpSpec(layer_sizes=critic_sizes, init_seed=seeds[1])
    c2_spec = MlpSpec(layer_sizes=critic_sizes, init_seed=seeds[2])
    actor = Net(actor_spec, nets.init_params(actor_spec))
    critic1 = Net(c1_spec, nets.init_params(c1_spec))
    critic2 = Net(c2_spec, nets.init_params(c2_spec))
    return AgentNets(
        actor=actor,
        actor_target=actor.copy(),
        critic1=critic1,
        critic2=critic2,
        critic1_target=critic1.copy(),
        critic2_target=critic2.copy(),
        action_low=np.asarray(action_low, dtype=np.float64),
        action_high=np.asarray(action_high, dtype=np.float64),
        state_mean=np.zeros(state_dim) if state_mean is None else np.asarray(state_mean),
        state_std=np.ones(state_dim) if state_std is None else np.asarray(state_std),
    )


def dataset_state_stats(dataset: OfflineDataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and (floored) standard deviation of dataset states."""
    mean = dataset.states.mean(axis=0)
    std = np.maximum(dataset.states.std(axis=0), 1e-3)
    return mean, std


def actor_forward(agent: AgentNets, net: Net, states: np.ndarray) -> np.ndarray:
    z = nets.forward(net.spec, net.params, agent.normalize_states(states))
    return nets.squash_to_box(z, agent.action_low, agent.action_high)


def critic_forward(agent: AgentNets, net: Net, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    x = np.hstack([agent.normalize_states(states), np.atleast_2d(actions)])
    return nets.forward(net.spec, net.params, x)[:, 0]


class DeterministicActorPolicy:
    """Rollout-facing view of a trained actor."""

    deterministic = True

    def __init__(self, agent_nets: AgentNets):
        self.nets = agent_nets

    def __call__(self, state, rng=None) -> np.ndarray:
        return actor_forward(self.nets, self.nets.actor, state[None, :])[0]


def critic_q_function(agent: AgentNets, net: Net):
    """Batched (states, actions) -> Q callable for the evaluation tooling."""

    def q(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return critic_forward(agent, net, states, actions)

    return q


# ---------------------------------------------------------------------------
# Losses and updates
# ---------------------------------------------------------------------------


def sample_ood_action(
    action: np.ndarray,
    noise: NoiseSpec,
    action_low: np.ndarray,
    action_high: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Perturb an in-bounds action and clamp the result back into the box."""
    action = np.asarray(action, dtype=np.float64)
    eta = noise.draw(action.shape, rng)
    return np.clip(action + eta, action_low, action_high)


def critic_targets(batch: Batch, agent: AgentNets, cfg: SqogConfig, rng: np.random.Generator):
    """y = r + gamma min_i Q'_i(s', a') with smoothed target action and done masking."""
    smoothing = np.clip(
        rng.normal(0.0, cfg.target_noise_scale, size=batch.actions.shape),
        -cfg.target_noise_clip,
        cfg.target_noise_clip,
    )
    a_next = actor_forward(agent, agent.actor_target, batch.next_states)
    a_next = np.clip(a_next + smoothing, agent.action_low, agent.action_high)
    q1 = critic_forward(agent, agent.critic1_target, batch.next_states, a_next)
    q2 = critic_forward(agent, agent.critic2_target, batch.next_states, a_next)
    q_min = np.minimum(q1, q2)
    not_done = 1.0 - batch.dones.astype(np.float64)
    return batch.rewards + cfg.gamma * not_done * q_min


def td_loss_and_grad(batch: Batch, agent: AgentNets, critic: Net, targets: np.ndarray):
    """Mean squared TD error on in-sample pairs; targets are constants."""
    n = len(batch)
    x = np.hstack([agent.normalize_states(batch.states), batch.actions])
    q, cache = nets.forward_cached(critic.spec, critic.params, x)
    resid = q[:, 0] - targets
    loss = float(np.mean(resid**2))
    upstream = (2.0 / n) * resid[:, None]
    grad, _ = nets.backward(critic.spec, critic.params, x, upstream, cache)
    return loss, grad


def og_loss(
    batch: Batch,
    agent: AgentNets,
    critic: Net,
    noise: NoiseSpec,
    rng: np.random.Generator,
    perturbed_actions: np.ndarray | None = None,
):
    """OOD generalization loss and its gradient.

    mean((Q(s, a + eta) - Qbar(s, a))^2) where Qbar is the same critic's output
    at the source action with the gradient detached: only the perturbed-input
    branch contributes to the parameter gradient.
    """
    n = len(batch)
    if perturbed_actions is None:
        perturbed_actions = batch.actions + noise.draw(batch.actions.shape, rng)
    x_pert = np.hstack([agent.normalize_states(batch.states), perturbed_actions])
    q_pert, cache = nets.forward_cached(critic.spec, critic.params, x_pert)
    q_base = critic_forward(agent, critic, batch.states, batch.actions)  # detached target
    resid = q_pert[:, 0] - q_base
    loss = float(np.mean(resid**2))
    upstream = (2.0 / n) * resid[:, None]
    grad, _ = nets.backward(critic.spec, critic.params, x_pert, upstream, cache)
    return loss, grad


@dataclass
class CriticLossReport:
    td: float
    og: float


def critic_update(
    batch: Batch,
    agent: AgentNets,
    cfg: SqogConfig,
    target_rng: np.random.Generator,
    og_rng: np.random.Generator,
    opt1: AdamState,
    opt2: AdamState,
    use_og: bool,
) -> tuple[AdamState, AdamState, CriticLossReport]:
    """One optimizer step per critic on L_TD + beta * L_OG (shared eta per sample).

    Both loss terms run through a single stacked forward/backward per critic:
    rows 0..n hold the in-sample pairs, rows n.. the perturbed ones, and the
    OG term's detached target is the in-sample rows' own Q output.
    """
    targets = critic_targets(batch, agent, cfg, target_rng)
    n = len(batch)
    norm_states = agent.normalize_states(batch.states)
    x = np.hstack([norm_states, batch.actions])
    with_og = use_og and cfg.beta > 0
    if with_og:
        perturbed = np.clip(
            batch.actions + cfg.noise.draw(batch.actions.shape, og_rng),
            agent.action_low,
            agent.action_high,
        )
        x = np.vstack([x, np.hstack([norm_states, perturbed])])
    td_losses, og_losses = [], []
    for critic, opt in ((agent.critic1, opt1), (agent.critic2, opt2)):
        q, cache = nets.forward_cached(critic.spec, critic.params, x)
        with np.errstate(invalid="ignore"):  # non-finite q aborts just below
            resid_td = q[:n, 0] - targets
            loss_td = float(np.mean(resid_td**2))
            upstream = np.empty((x.shape[0], 1))
            upstream[:n, 0] = (2.0 / n) * resid_td
            loss_og = 0.0
            if with_og:
                resid_og = q[n:, 0] - q[:n, 0]  # target branch detached
                loss_og = float(np.mean(resid_og**2))
                upstream[n:, 0] = cfg.beta * (2.0 / n) * resid_og
        if not math.isfinite(loss_td) or not math.isfinite(loss_og):
            raise FloatingPointError(f"non-finite critic loss (td={loss_td}, og={loss_og})")
        grad, _ = nets.backward(critic.spec, critic.params, x, upstream, cache)
        critic.params, new_opt = nets.adam_step(critic.params, grad, opt, cfg.lr_critic)
        if critic is agent.critic1:
            opt1 = new_opt
        else:
            opt2 = new_opt
        td_losses.append(loss_td)
        og_losses.append(loss_og)
    return opt1, opt2, CriticLossReport(td=float(np.mean(td_losses)), og=float(np.mean(og_losses)))


def actor_loss_and_grad(batch: Batch, agent: AgentNets, cfg: SqogConfig):
    """Deterministic-policy loss -mean(lambda Q1(s, pi(s)) - ||pi(s) - a||^2).

    lambda = alpha N / sum|Q| is recomputed per batch and treated as a constant
    in the gradient (capped at alpha when the critic is still near zero).
    """
    n = len(batch)
    norm_states = agent.normalize_states(batch.states)
    z, cache = nets.forward_cached(agent.actor.spec, agent.actor.params, norm_states)
    a_pi = nets.squash_to_box(z, agent.action_low, agent.action_high)
    x = np.hstack([norm_states, a_pi])
    q, q_cache = nets.forward_cached(agent.critic1.spec, agent.critic1.params, x)
    q = q[:, 0]

    abs_sum = float(np.sum(np.abs(q)))
    lam = cfg.alpha if abs_sum < 1e-6 * n else cfg.alpha * n / abs_sum

    bc = np.sum((a_pi - batch.actions) ** 2, axis=1)
    loss = float(-np.mean(lam * q - bc))

    # dLoss/dQ = -lam/n; input grad of the critic provides dQ/da_pi
    upstream_q = np.full((n, 1), -lam / n)
    _, dx = nets.backward(agent.critic1.spec, agent.critic1.params, x, upstream_q, q_cache)
    state_dim = batch.states.shape[1]
    d_api = dx[:, state_dim:] + (2.0 / n) * (a_pi - batch.actions)
    dz = d_api * nets.squash_backward(z, agent.action_low, agent.action_high)
    grad, _ = nets.backward(agent.actor.spec, agent.actor.params, norm_states, dz, cache)
    return loss, grad, lam


def actor_update(
    batch: Batch, agent: AgentNets, cfg: SqogConfig, opt: AdamState
) -> tuple[AdamState, float]:
    _, grad, lam = actor_loss_and_grad(batch, agent, cfg)
    agent.actor.params, new_opt = nets.adam_step(agent.actor.params, grad, opt, cfg.lr_actor)
    return new_opt, lam


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass
class MetricsRow:
    step: int
    critic_loss_td: float
    critic_loss_og: float
    lam: float | None
    eval_return: float | None
    normalized_score: float | None


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    step: int
    nets: AgentNets
    opt_actor: AdamState
    opt_critic1: AdamState
    opt_critic2: AdamState
    rng_states: dict[str, dict]
    last_lambda: float | None


@dataclass
class TrainResult:
    nets: AgentNets
    metrics: list[MetricsRow]
    counts: dict[str, int]
    state: TrainState


def evaluate_policy(
    env: envs.ContinuousEnv, policy, episodes: int, rng: np.random.Generator
) -> float:
    total = 0.0
    for _ in range(episodes):
        traj = envs.rollout(env, policy, env.horizon, int(rng.integers(0, 2**63 - 1)))
        total += float(traj.rewards().sum())
    return total / episodes


def train(
    cfg: SqogConfig,
    dataset: OfflineDataset,
    seed: int,
    agent_kind: str = "sqog",
    env: envs.ContinuousEnv | None = None,
    resume: TrainState | None = None,
) -> TrainResult:
    """Algorithm loop: critic update every step, actor + targets every actor_freq steps.

    Exactly total_steps critic updates and floor(T/m) actor updates; fully
    reproducible per seed (independent component streams). Resuming from a
    saved state continues the step counter and all streams exactly.
    """
    if agent_kind not in ("sqog", "td3bc"):
        raise ValueError("agent_kind must be 'sqog' or 'td3bc'")
    use_og = agent_kind == "sqog"
    if env is None:
        env = envs.make_env(dataset.env_id)

    batch_rng = component_rng(seed, "batch")
    target_rng = component_rng(seed, "target_noise")
    og_rng = component_rng(seed, "og_noise")
    eval_rng = component_rng(seed, "eval")
    streams = {
        "batch": batch_rng,
        "target_noise": target_rng,
        "og_noise": og_rng,
        "eval": eval_rng,
    }

    if resume is None:
        start_step = 0
        state_mean, state_std = dataset_state_stats(dataset)
        agent = init_agent_nets(
            dataset.state_dim,
            dataset.action_dim,
            env.action_low,
            env.action_high,
            cfg.hidden,
            component_seed(seed, "init"),
            state_mean=state_mean,
            state_std=state_std,
        )
        opt_actor = nets.init_adam(agent.actor.spec.n_params)
        opt_c1 = nets.init_adam(agent.critic1.spec.n_params)
        opt_c2 = nets.init_adam(agent.critic2.spec.n_params)
        last_lambda: float | None = None
    else:
        start_step = resume.step
        agent = resume.nets
        opt_actor = resume.opt_actor
        opt_c1 = resume.opt_critic1
        opt_c2 = resume.opt_critic2
        last_lambda = resume.last_lambda
        for name, rng in streams.items():
            rng.bit_generator.state = resume.rng_states[name]

    metrics: list[MetricsRow] = []
    counts = {"critic_updates": 0, "actor_updates": 0, "target_updates": 0}
    td_acc: list[float] = []
    og_acc: list[float] = []

    for t in range(start_step + 1, cfg.total_steps + 1):
        batch = sample_batch(dataset, cfg.batch_size, batch_rng)
        opt_c1, opt_c2, report = critic_update(
            batch, agent, cfg, target_rng, og_rng, opt_c1, opt_c2, use_og
        )
        counts["critic_updates"] += 1
        td_acc.append(report.td)
        og_acc.append(report.og)

        if t % cfg.actor_freq == 0:
            opt_actor, last_lambda = actor_update(batch, agent, cfg, opt_actor)
            counts["actor_updates"] += 1
            agent.actor_target.params = nets.soft_update(
                agent.actor_target.params, agent.actor.params, cfg.tau
            )
            agent.critic1_target.params = nets.soft_update(
                agent.critic1_target.params, agent.critic1.params, cfg.tau
            )
            agent.critic2_target.params = nets.soft_update(
                agent.critic2_target.params, agent.critic2.params, cfg.tau
            )
            counts["target_updates"] += 1

        if cfg.log_every > 0 and t % cfg.log_every == 0:
            eval_return = None
            norm_score = None
            if cfg.eval_every > 0 and t % cfg.eval_every == 0:
                policy = DeterministicActorPolicy(agent)
                eval_return = evaluate_policy(env, policy, cfg.eval_episodes, eval_rng)
                lo, hi = dataset.ref_scores
                norm_score = 100.0 * (eval_return - lo) / (hi - lo)
            metrics.append(
                MetricsRow(
                    step=t,
                    critic_loss_td=float(np.mean(td_acc)),
                    critic_loss_og=float(np.mean(og_acc)),
                    lam=last_lambda,
                    eval_return=eval_return,
                    normalized_score=norm_score,
                )
            )
            td_acc.clear()
            og_acc.clear()

    final_state = TrainState(
        step=cfg.total_steps,
        nets=agent,
        opt_actor=opt_actor,
        opt_critic1=opt_c1,
        opt_critic2=opt_c2,
        rng_states={name: rng.bit_generator.state for name, rng in streams.items()},
        last_lambda=last_lambda,
    )
    return TrainResult(nets=agent, metrics=metrics, counts=counts, state=final_state)


def td3bc_config(cfg: SqogConfig) -> SqogConfig:
    """The baseline's view of a config: no OOD term."""
    return replace(cfg, beta=0.0)


# ---------------------------------------------------------------------------
# Run-state persistence (checkpoints + exact continuation)
# ---------------------------------------------------------------------------

_NET_FILES = {
    "actor": "actor.ckpt",
    "actor_target": "actor_target.ckpt",
    "critic1": "critic1.ckpt",
    "critic2": "critic2.ckpt",
    "critic1_target": "critic1_target.ckpt",
    "critic2_target": "critic2_target.ckpt",
}


def _adam_to_json(state: AdamState) -> dict:
    return {
        "m": state.m.tolist(),
        "v": state.v.tolist(),
        "t": state.t,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
    }


def _adam_from_json(blob: dict) -> AdamState:
    return AdamState(
        m=np.array(blob["m"], dtype=np.float64),
        v=np.array(blob["v"], dtype=np.float64),
        t=int(blob["t"]),
        beta1=float(blob["beta1"]),
        beta2=float(blob["beta2"]),
        eps=float(blob["eps"]),
    )


def save_train_state(state: TrainState, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for attr, fname in _NET_FILES.items():
        net: Net = getattr(state.nets, attr)
        nets.save_checkpoint(out / fname, net.spec, net.params, seed=0, step=state.step)
    blob = {
        "step": state.step,
        "last_lambda": state.last_lambda,
        "action_low": state.nets.action_low.tolist(),
        "action_high": state.nets.action_high.tolist(),
        "state_mean": state.nets.state_mean.tolist(),
        "state_std": state.nets.state_std.tolist(),
        "rng_states": state.rng_states,
        "opt_actor": _adam_to_json(state.opt_actor),
        "opt_critic1": _adam_to_json(state.opt_critic1),
        "opt_critic2": _adam_to_json(state.opt_critic2),
    }
    with open(out / "train_state.json", "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_train_state(run_dir) -> TrainState:
    run = Path(run_dir)
    state_path = run / "train_state.json"
    if not state_path.exists():
        raise FileNotFoundError(f"no train_state.json in {run}")
    with open(state_path, "r", encoding="utf-8") as fh:
        blob = json.load(fh)
    loaded = {}
    for attr, fname in _NET_FILES.items():
        spec, params, _seed, _step = nets.load_checkpoint(run / fname)
        loaded[attr] = Net(spec=spec, params=params)
    agent = AgentNets(
        action_low=np.array(blob["action_low"], dtype=np.float64),
        action_high=np.array(blob["action_high"], dtype=np.float64),
        state_mean=np.array(blob["state_mean"], dtype=np.float64),
        state_std=np.array(blob["state_std"], dtype=np.float64),
        **loaded,
    )
    return TrainState(
        step=int(blob["step"]),
        nets=agent,
        opt_actor=_adam_from_json(blob["opt_actor"]),
        opt_critic1=_adam_from_json(blob["opt_critic1"]),
        opt_critic2=_adam_from_json(blob["opt_critic2"]),
        rng_states=blob["rng_states"],
        last_lambda=blob["last_lambda"],
    )
