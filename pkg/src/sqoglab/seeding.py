"""Counter-based expansion of a master seed into per-component streams.

Every run is driven by one master seed. Each component (dataset generation,
network init, batch sampling, ...) gets its own independent stream derived
from (master, component counter), so a component can be re-run in isolation
and adding draws to one stream never perturbs another.
"""

from __future__ import annotations

import numpy as np

_COMPONENTS = {
    "dataset": 0,
    "init": 1,
    "batch": 2,
    "target_noise": 3,
    "og_noise": 4,
    "eval": 5,
    "behavior": 6,
    "verify": 7,
    "oracle": 8,
}


def component_seed_sequence(master_seed: int, component: str) -> np.random.SeedSequence:
    if component not in _COMPONENTS:
        raise KeyError(f"unknown seed component {component!r}")
    return np.random.SeedSequence(master_seed, spawn_key=(_COMPONENTS[component],))


def component_rng(master_seed: int, component: str) -> np.random.Generator:
    """Independent generator for one named component of a run."""
    return np.random.default_rng(component_seed_sequence(master_seed, component))


def component_seed(master_seed: int, component: str) -> int:
    """A plain integer seed derived for one component (for APIs that take ints)."""
    return int(component_seed_sequence(master_seed, component).generate_state(1)[0])
