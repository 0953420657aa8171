"""Exact smooth-Bellman machinery on finite MDPs.

The operator splits every (s, a) entry into three cases: in-sample entries get
the empirical backup, OOD entries inside the hull region get the value of a
designated in-sample neighbor action at the same state, and entries outside
the region are left untouched (neither sub-operator is defined there, and the
verification instances never route policy mass through them).

The backup evaluates successor values through the neighbor substitution: when
the policy proposes an OOD successor action, its value is read from that
action's in-sample neighbor. This is what makes the operator a sup-norm
gamma-contraction at OOD entries while perturbing in-sample backups by at most
gamma times the neighbor value spread.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import TabularMdp, policy_backup, validate_tabular_policy

QTable = np.ndarray  # (n_states, n_actions), float64


class FixedPointError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(
            f"no fixed point within {iterations} iterations; last residual {residual:.3e}"
        )
        self.iterations = iterations
        self.residual = residual


@dataclass(frozen=True)
class SboSpec:
    """Masks and neighbor map driving the operator's case split.

    neighbor[s, a] is the in-sample action index substituted at OOD-in-region
    entries, -1 elsewhere. action_coords embeds action indices into a metric
    space so the neighbor distance bound delta_neighbor is checkable.
    """

    in_sample: np.ndarray  # (S, A) bool
    chn: np.ndarray  # (S, A) bool
    neighbor: np.ndarray  # (S, A) int, -1 where undefined
    action_coords: np.ndarray  # (A, k)
    delta_neighbor: float

    def __post_init__(self):
        in_sample = np.asarray(self.in_sample, dtype=bool)
        chn = np.asarray(self.chn, dtype=bool)
        neighbor = np.asarray(self.neighbor, dtype=np.int64)
        coords = np.atleast_2d(np.asarray(self.action_coords, dtype=np.float64))
        if coords.shape[0] != in_sample.shape[1]:
            raise ValueError("action_coords must have one row per action")
        if in_sample.shape != chn.shape or neighbor.shape != in_sample.shape:
            raise ValueError("mask shapes disagree")
        if np.any(in_sample & ~chn):
            raise ValueError("in-sample entries must lie inside the region")
        ood_region = ~in_sample & chn
        if np.any((neighbor >= 0) != ood_region):
            raise ValueError("neighbor map must be defined exactly on OOD-in-region entries")
        s_idx, a_idx = np.nonzero(ood_region)
        nb = neighbor[s_idx, a_idx]
        if np.any(~in_sample[s_idx, nb]):
            raise ValueError("every mapped neighbor must be in-sample at the same state")
        dists = np.linalg.norm(coords[a_idx] - coords[nb], axis=1)
        if dists.size and float(dists.max()) > self.delta_neighbor + 1e-12:
            raise ValueError("a neighbor violates the declared delta_neighbor")
        object.__setattr__(self, "in_sample", in_sample)
        object.__setattr__(self, "chn", chn)
        object.__setattr__(self, "neighbor", neighbor)
        object.__setattr__(self, "action_coords", coords)

    @property
    def ood_in_region(self) -> np.ndarray:
        return ~self.in_sample & self.chn


def make_sbo_spec(
    in_sample: np.ndarray, chn: np.ndarray, action_coords: np.ndarray
) -> SboSpec:
    """Neighbor map: nearest in-sample action at the same state (ties: lowest index)."""
    in_sample = np.asarray(in_sample, dtype=bool)
    chn = np.asarray(chn, dtype=bool)
    coords = np.atleast_2d(np.asarray(action_coords, dtype=np.float64))
    n_states, n_actions = in_sample.shape
    neighbor = np.full((n_states, n_actions), -1, dtype=np.int64)
    delta = 0.0
    for s in range(n_states):
        candidates = np.nonzero(in_sample[s])[0]
        for a in range(n_actions):
            if in_sample[s, a] or not chn[s, a]:
                continue
            if candidates.size == 0:
                raise ValueError(f"state {s} has an OOD-in-region action but no in-sample action")
            dists = np.linalg.norm(coords[candidates] - coords[a], axis=1)
            nb = int(candidates[np.argmin(dists)])  # argmin takes the lowest index on ties
            neighbor[s, a] = nb
            delta = max(delta, float(np.linalg.norm(coords[a] - coords[nb])))
    return SboSpec(
        in_sample=in_sample,
        chn=chn,
        neighbor=neighbor,
        action_coords=coords,
        delta_neighbor=delta,
    )


def in_sample_mask_from_counts(counts: np.ndarray) -> np.ndarray:
    """Tabular in-sample means the generating dataset visited (s, a) at least once."""
    return np.asarray(counts) > 0


def empirical_bellman(q: QTable, mdp: TabularMdp, policy: np.ndarray) -> QTable:
    """Plain policy backup on every entry (exact transition model)."""
    policy = validate_tabular_policy(mdp, policy)
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("Q table shape mismatch")
    return policy_backup(mdp, policy, q)


def g1_apply(q: QTable, spec: SboSpec) -> QTable:
    """Smooth generalization: identity in-sample, neighbor value on OOD-in-region."""
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    s_idx, a_idx = np.nonzero(spec.ood_in_region)
    if s_idx.size:
        nb = spec.neighbor[s_idx, a_idx]
        if np.any(nb < 0):
            raise ValueError("OOD-in-region entry lacks a neighbor")
        out[s_idx, a_idx] = q[s_idx, nb]
    return out


def b2_apply(q: QTable, spec: SboSpec, mdp: TabularMdp, policy: np.ndarray) -> QTable:
    """Base operator: smoothed-successor backup in-sample, identity elsewhere."""
    q = np.asarray(q, dtype=np.float64)
    backed = empirical_bellman(g1_apply(q, spec), mdp, policy)
    return np.where(spec.in_sample, backed, q)


def sbo_apply(q: QTable, spec: SboSpec, mdp: TabularMdp, policy: np.ndarray) -> QTable:
    """The smooth Bellman operator: generalization applied after the base backup."""
    return g1_apply(b2_apply(q, spec, mdp, policy), spec)


def _check_policy_support_in_region(spec: SboSpec, policy: np.ndarray) -> None:
    if np.any((policy > 0) & ~spec.chn):
        raise ValueError("policy support must lie inside the region (fixed-point premise)")


def fixed_point(
    q0: QTable,
    spec: SboSpec,
    mdp: TabularMdp,
    policy: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 1000,
) -> tuple[QTable, int]:
    """Iterate the operator to its fixed point (sup-norm successive difference <= tol)."""
    policy = validate_tabular_policy(mdp, policy)
    _check_policy_support_in_region(spec, policy)
    q = np.asarray(q0, dtype=np.float64).copy()
    residual = np.inf
    for it in range(1, max_iter + 1):
        q_next = sbo_apply(q, spec, mdp, policy)
        residual = float(np.max(np.abs(q_next - q)))
        q = q_next
        if residual <= tol:
            return q, it
    raise FixedPointError(max_iter, residual)


def contraction_ratio(
    q1: QTable, q2: QTable, spec: SboSpec, mdp: TabularMdp, policy: np.ndarray
) -> float:
    """||SBO Q1 - SBO Q2||_inf / ||Q1 - Q2||_inf."""
    q1 = np.asarray(q1, dtype=np.float64)
    q2 = np.asarray(q2, dtype=np.float64)
    denom = float(np.max(np.abs(q1 - q2)))
    if denom == 0.0:
        raise ValueError("Q tables are identical; contraction ratio undefined")
    num = float(np.max(np.abs(sbo_apply(q1, spec, mdp, policy) - sbo_apply(q2, spec, mdp, policy))))
    return num / denom


def ood_update_step(q: QTable, sa_pair: tuple[int, int], spec: SboSpec, lr: float) -> QTable:
    """One squared-error gradient step pulling an OOD entry toward its neighbor value.

    Q'(s,a) = Q(s,a) + 2 lr (Q(s, nb) - Q(s,a)); lr <= 0.25 keeps the update from
    overshooting past the target, preserving the sign of (target - Q).
    """
    s, a = sa_pair
    if not 0.0 < lr <= 0.25:
        raise ValueError("lr must lie in (0, 0.25]")
    if spec.in_sample[s, a]:
        raise ValueError(f"({s}, {a}) is in-sample; the update targets OOD entries")
    if not spec.chn[s, a]:
        raise ValueError(f"({s}, {a}) lies outside the region")
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    target = q[s, spec.neighbor[s, a]]
    out[s, a] = q[s, a] + 2.0 * lr * (target - q[s, a])
    return out


def insample_effect_gap(q: QTable, spec: SboSpec, mdp: TabularMdp, policy: np.ndarray) -> float:
    """Max in-sample deviation of the smooth operator from the plain backup."""
    q = np.asarray(q, dtype=np.float64)
    smooth = sbo_apply(q, spec, mdp, policy)
    plain = empirical_bellman(q, mdp, policy)
    if not np.any(spec.in_sample):
        return 0.0
    return float(np.max(np.abs(smooth - plain)[spec.in_sample]))
