"""Executable checks of the operator's theoretical properties.

Instance builders plus raw measurement routines; callers (the CLI's
verify-operator command and the acceptance tests) apply the thresholds. The
SboSpec instances built here use full-region masks (every entry in-sample or
OOD with a neighbor), which realizes the convergence premise that policy
support stays inside the region.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tabular
from .envs import TabularMdp, exact_policy_q
from .tabular import SboSpec, make_sbo_spec


def random_mdp(
    n_states: int, n_actions: int, gamma: float, rng: np.random.Generator
) -> TabularMdp:
    """Dense random MDP without terminal states, rewards in [-1, 1]."""
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return TabularMdp(
        transition=transition,
        reward=reward,
        gamma=gamma,
        terminal=np.zeros(n_states, dtype=bool),
        r_max=1.0,
    )


def random_policy(n_states: int, n_actions: int, rng: np.random.Generator) -> np.ndarray:
    """Full-support stochastic policy (Dirichlet rows)."""
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def full_region_spec(n_states: int, n_actions: int, rng: np.random.Generator) -> SboSpec:
    """Every entry inside the region; a random subset in-sample (>= 1 per state)."""
    in_sample = rng.random((n_states, n_actions)) < 0.5
    for s in range(n_states):
        if not in_sample[s].any():
            in_sample[s, int(rng.integers(0, n_actions))] = True
    chn = np.ones((n_states, n_actions), dtype=bool)
    coords = np.arange(n_actions, dtype=np.float64)[:, None]
    return make_sbo_spec(in_sample, chn, coords)


def contraction_sweep(
    mdp: TabularMdp,
    policy: np.ndarray,
    spec: SboSpec,
    n_pairs: int,
    rng: np.random.Generator,
    q_scale: float = 10.0,
) -> np.ndarray:
    """Contraction ratios for random Q pairs."""
    shape = (mdp.n_states, mdp.n_actions)
    ratios = np.empty(n_pairs)
    for i in range(n_pairs):
        q1 = rng.uniform(-q_scale, q_scale, size=shape)
        q2 = rng.uniform(-q_scale, q_scale, size=shape)
        while np.array_equal(q1, q2):
            q2 = rng.uniform(-q_scale, q_scale, size=shape)
        ratios[i] = tabular.contraction_ratio(q1, q2, spec, mdp, policy)
    return ratios


@dataclass
class FixedPointSummary:
    iterations: list[int]
    max_pairwise_distance: float


def fixed_point_agreement(
    mdp: TabularMdp,
    policy: np.ndarray,
    spec: SboSpec,
    n_inits: int,
    rng: np.random.Generator,
    tol: float = 1e-8,
    max_iter: int = 500,
    q_scale: float = 10.0,
) -> FixedPointSummary:
    """Fixed points from random initializations plus their pairwise sup distance."""
    shape = (mdp.n_states, mdp.n_actions)
    points = []
    iterations = []
    for _ in range(n_inits):
        q0 = rng.uniform(-q_scale, q_scale, size=shape)
        q_star, its = tabular.fixed_point(q0, spec, mdp, policy, tol=tol, max_iter=max_iter)
        points.append(q_star)
        iterations.append(its)
    worst = 0.0
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            worst = max(worst, float(np.max(np.abs(points[i] - points[j]))))
    return FixedPointSummary(iterations=iterations, max_pairwise_distance=worst)


@dataclass
class OodStepCase:
    """One constructed instance of the monotone error-decrease claim."""

    error_before: float
    error_after: float
    epsilon: float
    lr: float

    @property
    def decreased(self) -> bool:
        return self.error_after < self.error_before


def ood_update_cases(
    n_instances: int,
    rng: np.random.Generator,
    n_states: int = 4,
    n_actions: int = 3,
    gamma: float = 0.9,
) -> list[OodStepCase]:
    """Instances satisfying the OOD-effects premises, checked against the exact Q.

    In-sample entries carry the exact policy Q; one OOD entry is displaced from
    its neighbor value by c * epsilon with c >= 1.5, which guarantees strict
    error decrease for any lr <= 0.25 (finite-rate margin; the claim itself is
    stated for an infinitesimal rate).
    """
    cases = []
    for _ in range(n_instances):
        mdp = random_mdp(n_states, n_actions, gamma, rng)
        policy = random_policy(n_states, n_actions, rng)
        q_exact = exact_policy_q(mdp, policy)

        s = int(rng.integers(0, n_states))
        a_ood = int(rng.integers(0, n_actions))
        in_sample = np.ones((n_states, n_actions), dtype=bool)
        in_sample[s, a_ood] = False
        chn = np.ones((n_states, n_actions), dtype=bool)
        coords = np.arange(n_actions, dtype=np.float64)[:, None]
        spec = make_sbo_spec(in_sample, chn, coords)
        nb = int(spec.neighbor[s, a_ood])

        gap_true = abs(float(q_exact[s, a_ood] - q_exact[s, nb]))
        epsilon = max(2.0 * gap_true, 0.05)
        c = float(rng.uniform(1.5, 4.0))
        sign = 1.0 if rng.random() < 0.5 else -1.0

        q = q_exact.copy()
        q[s, a_ood] = q[s, nb] + sign * c * epsilon
        # premises: |Q^pi(s,a) - Q(s,nb)| = gap_true < eps, |Q(s,a) - Q(s,nb)| = c eps > eps
        lr = float(rng.uniform(0.01, 0.25))
        q_next = tabular.ood_update_step(q, (s, a_ood), spec, lr)
        cases.append(
            OodStepCase(
                error_before=abs(float(q[s, a_ood] - q_exact[s, a_ood])),
                error_after=abs(float(q_next[s, a_ood] - q_exact[s, a_ood])),
                epsilon=epsilon,
                lr=lr,
            )
        )
    return cases


@dataclass
class DeltaLadderPoint:
    delta: float
    gap: float
    bound: float  # gamma * max neighbor value spread at this delta


def insample_gap_ladder(
    deltas: tuple[float, ...] = (0.2, 0.1, 0.05, 0.01),
    n_states: int = 3,
    gamma: float = 0.9,
    spread_slope: float = 1.0,
    seed: int = 0,
) -> list[DeltaLadderPoint]:
    """In-sample gap under shrinking neighbor distance, on nested action grids.

    Actions sit on a 0.01 lattice in [0, 1]; level delta marks multiples of
    2*delta as in-sample, so each OOD action has a neighbor within delta and
    the grids nest. OOD values sit spread_slope * distance below their
    neighbor's value, so successor substitutions never cancel and the gap is
    provably monotone in delta. Transitions depend only on the state, which
    keeps the growing in-sample mask from changing where the max is attained.
    """
    rng = np.random.default_rng(seed)
    n_actions = 101
    coords = (np.arange(n_actions) / 100.0)[:, None]
    rows = rng.dirichlet(np.ones(n_states), size=n_states)
    transition = np.repeat(rows[:, None, :], n_actions, axis=1)
    reward = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    mdp = TabularMdp(
        transition=transition,
        reward=reward,
        gamma=gamma,
        terminal=np.zeros(n_states, dtype=bool),
        r_max=1.0,
    )
    policy = np.full((n_states, n_actions), 1.0 / n_actions)
    base = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))

    points = []
    for delta in deltas:
        lattice = int(round(200.0 * delta))  # 2*delta in units of 0.01
        in_sample = np.zeros((n_states, n_actions), dtype=bool)
        in_sample[:, ::lattice] = True
        chn = np.ones((n_states, n_actions), dtype=bool)
        spec = make_sbo_spec(in_sample, chn, coords)
        if spec.delta_neighbor > delta + 1e-12:
            raise AssertionError("lattice construction violated the delta bound")

        q = base.copy()
        s_idx, a_idx = np.nonzero(spec.ood_in_region)
        nb = spec.neighbor[s_idx, a_idx]
        dist = np.abs(coords[a_idx, 0] - coords[nb, 0])
        q[s_idx, a_idx] = base[s_idx, nb] - spread_slope * dist

        gap = tabular.insample_effect_gap(q, spec, mdp, policy)
        spread = float(np.max(np.abs(q[s_idx, a_idx] - q[s_idx, nb]))) if s_idx.size else 0.0
        points.append(DeltaLadderPoint(delta=delta, gap=gap, bound=gamma * spread))
    return points
