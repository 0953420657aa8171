"""Command-line entry point.

Commands: gen-data, verify-operator, train, eval, sanity-check, sweep.
Configuration is an INI file with flat sections ([env], [dataset], [agent],
[noise], [eval], [sweep]); --override section.key=value flags win over file
values; unknown sections or keys are rejected. Every command writes the fully
resolved config next to its outputs so a run is reproducible from that file
plus the master seed.

Exit codes: 0 success, 1 usage/config error, 2 property violation, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import agents, data, envs, evaluation, hull, verify
from .seeding import component_rng, component_seed


class UsageError(Exception):
    pass


class PropertyViolation(Exception):
    pass


DEFAULTS: dict[str, dict[str, str]] = {
    "run": {"seed": "0", "command": "", "out": "out"},
    "env": {
        "id": "line-reach",
        "horizon": "",
        "goal": "",
        "step_gain": "",
        "dt": "",
        "gravity": "",
        "mass": "",
        "length": "",
        "max_torque": "",
    },
    "dataset": {"path": "dataset.jsonl", "tier": "medium", "n": "5000"},
    "agent": {
        "kind": "sqog",
        "gamma": "0.99",
        "tau": "0.005",
        "actor_freq": "2",
        "batch_size": "256",
        "total_steps": "100000",
        "alpha": "150",
        "beta": "0.5",
        "lr_actor": "3e-4",
        "lr_critic": "3e-4",
        "hidden": "64,64",
        "target_noise_scale": "0.2",
        "target_noise_clip": "0.5",
        "eval_every": "5000",
        "eval_episodes": "10",
        "log_every": "100",
        "resume": "",
    },
    "noise": {"kind": "normal-clip", "scale": "0.6", "clip": "0.5"},
    "eval": {
        "n_rollouts": "1000",
        "grid_step": "0.01",
        "tol_s": "0.05",
        "tol_a": "0.05",
        "density_threshold": "1e-12",
        "hull_tol": "1e-6",
        "hull_samples": "10000",
        "episodes": "10",
        "checkpoint_dir": "",
        "td3bc_dir": "",
        "sqog_dir": "",
    },
    "sweep": {
        "betas": "0.1,0.5,1,2",
        "alphas": "150",
        "noise_kinds": "normal-clip",
        "noise_scales": "0.6",
        "noise_clips": "0.5",
        "seeds": "0,1",
        "total_steps": "2000",
    },
}

_ENV_FLOAT_KEYS = ("goal", "step_gain", "dt", "gravity", "mass", "length", "max_torque")


def load_config(path: str | None, overrides: list[str], seed: int, out: str, command: str):
    """Returns (config dict, set of 'section.key' names the user set explicitly)."""
    cfg = {section: dict(values) for section, values in DEFAULTS.items()}
    provided: set[str] = set()
    if path is not None:
        parser = configparser.ConfigParser()
        parser.optionxform = str  # keep keys case-sensitive
        read = parser.read(path)
        if not read:
            raise UsageError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in cfg:
                raise UsageError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in cfg[section]:
                    raise UsageError(f"unknown config key {section}.{key}")
                cfg[section][key] = value
                provided.add(f"{section}.{key}")
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"override must look like section.key=value: {item!r}")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if section not in cfg or key not in cfg[section]:
            raise UsageError(f"unknown config key {section}.{key}")
        cfg[section][key] = value
        provided.add(f"{section}.{key}")
    cfg["run"]["seed"] = str(seed)
    cfg["run"]["out"] = out
    cfg["run"]["command"] = command
    return cfg, provided


def write_resolved_config(cfg, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    parser = configparser.ConfigParser()
    parser.optionxform = str
    for section in sorted(cfg):
        parser[section] = {k: cfg[section][k] for k in sorted(cfg[section])}
    with open(out_dir / "resolved_config.ini", "w", encoding="utf-8") as fh:
        parser.write(fh)


def _floatv(cfg, section, key) -> float:
    try:
        return float(cfg[section][key])
    except ValueError as exc:
        raise UsageError(f"{section}.{key} must be a number, got {cfg[section][key]!r}") from exc


def _intv(cfg, section, key) -> int:
    try:
        return int(cfg[section][key])
    except ValueError as exc:
        raise UsageError(f"{section}.{key} must be an integer, got {cfg[section][key]!r}") from exc


def build_env(cfg) -> envs.ContinuousEnv:
    env_id = cfg["env"]["id"]
    overrides = {}
    if cfg["env"]["horizon"]:
        overrides["horizon"] = _intv(cfg, "env", "horizon")
    for key in _ENV_FLOAT_KEYS:
        if cfg["env"][key]:
            overrides[key] = _floatv(cfg, "env", key)
    try:
        return envs.make_env(env_id, **overrides)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc


def build_agent_config(cfg) -> agents.SqogConfig:
    hidden = tuple(int(h) for h in cfg["agent"]["hidden"].split(",") if h)
    noise = agents.NoiseSpec(
        kind=cfg["noise"]["kind"],
        scale=_floatv(cfg, "noise", "scale"),
        clip=_floatv(cfg, "noise", "clip"),
    )
    try:
        return agents.SqogConfig(
            gamma=_floatv(cfg, "agent", "gamma"),
            tau=_floatv(cfg, "agent", "tau"),
            actor_freq=_intv(cfg, "agent", "actor_freq"),
            batch_size=_intv(cfg, "agent", "batch_size"),
            total_steps=_intv(cfg, "agent", "total_steps"),
            alpha=_floatv(cfg, "agent", "alpha"),
            beta=_floatv(cfg, "agent", "beta"),
            noise=noise,
            target_noise_scale=_floatv(cfg, "agent", "target_noise_scale"),
            target_noise_clip=_floatv(cfg, "agent", "target_noise_clip"),
            lr_actor=_floatv(cfg, "agent", "lr_actor"),
            lr_critic=_floatv(cfg, "agent", "lr_critic"),
            hidden=hidden,
            eval_every=_intv(cfg, "agent", "eval_every"),
            eval_episodes=_intv(cfg, "agent", "eval_episodes"),
            log_every=_intv(cfg, "agent", "log_every"),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def metrics_rows_to_dicts(rows) -> list[dict]:
    return [
        {
            "step": r.step,
            "critic_loss_td": r.critic_loss_td,
            "critic_loss_og": r.critic_loss_og,
            "lambda": r.lam,
            "eval_return": r.eval_return,
            "normalized_score": r.normalized_score,
        }
        for r in rows
    ]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(cfg, seed: int, out_dir: Path) -> int:
    env = build_env(cfg)
    tier = cfg["dataset"]["tier"]
    if tier not in data.TIERS:
        raise UsageError(f"unknown dataset tier {tier!r} (choose from {sorted(data.TIERS)})")
    kind, sigma = data.TIERS[tier]
    behavior = data.BehaviorPolicy(kind=kind, sigma=sigma)
    n = _intv(cfg, "dataset", "n")
    dataset = data.generate_dataset(env, behavior, n, component_seed(seed, "dataset"))
    path = out_dir / cfg["dataset"]["path"]
    path.parent.mkdir(parents=True, exist_ok=True)
    data.save(dataset, path)
    print(f"wrote {path}")
    print(
        f"env={dataset.env_id} behavior={dataset.behavior_id} n={len(dataset)} "
        f"state_dim={dataset.state_dim} action_dim={dataset.action_dim}"
    )
    print(f"ref_scores: random={dataset.random_score:.4f} expert={dataset.expert_score:.4f}")
    return 0


def cmd_verify_operator(cfg, seed: int, out_dir: Path) -> int:
    gamma = _floatv(cfg, "agent", "gamma")
    rng = component_rng(seed, "verify")
    lines = []
    failures = []

    mdp = verify.random_mdp(5, 3, gamma, rng)
    policy = verify.random_policy(5, 3, rng)
    spec = verify.full_region_spec(5, 3, rng)

    ratios = verify.contraction_sweep(mdp, policy, spec, 1000, rng)
    worst = float(ratios.max())
    ok = worst <= gamma + 1e-9
    lines.append(f"{'PASS' if ok else 'FAIL'} contraction: max ratio {worst:.12f} (gamma={gamma})")
    if not ok:
        failures.append(f"contraction ratio {worst} exceeds gamma {gamma}")

    if gamma > 0:
        summary = verify.fixed_point_agreement(mdp, policy, spec, 10, rng)
        ok = max(summary.iterations) <= 500 and summary.max_pairwise_distance <= 2e-7
        lines.append(
            f"{'PASS' if ok else 'FAIL'} fixed-point: max iterations {max(summary.iterations)}, "
            f"max pairwise distance {summary.max_pairwise_distance:.3e}"
        )
        if not ok:
            failures.append(
                f"fixed points disagree by {summary.max_pairwise_distance} "
                f"or iterations {max(summary.iterations)} > 500"
            )
    else:
        lines.append("PASS fixed-point: skipped (gamma=0 converges in one application)")

    ladder = verify.insample_gap_ladder(gamma=gamma if gamma > 0 else 0.9)
    gaps = [p.gap for p in ladder]
    monotone = all(gaps[i + 1] < gaps[i] for i in range(len(gaps) - 1))
    bounded = all(p.gap <= p.bound + 1e-12 for p in ladder)
    ok = monotone and bounded
    lines.append(
        f"{'PASS' if ok else 'FAIL'} in-sample gap ladder: gaps "
        + ", ".join(f"{p.delta}:{p.gap:.6f}" for p in ladder)
    )
    if not ok:
        failures.append(f"in-sample gap ladder not monotone/bounded: {gaps}")

    cases = verify.ood_update_cases(100, rng)
    bad = [c for c in cases if not c.decreased]
    ok = not bad
    lines.append(
        f"{'PASS' if ok else 'FAIL'} OOD update monotonicity: "
        f"{len(cases) - len(bad)}/{len(cases)} instances decreased"
    )
    if bad:
        c = bad[0]
        failures.append(
            f"OOD update failed to decrease error: before={c.error_before} "
            f"after={c.error_after} eps={c.epsilon} lr={c.lr}"
        )

    report = "\n".join(lines)
    print(report)
    with open(out_dir / "verify.txt", "w", encoding="utf-8") as fh:
        fh.write(report + "\n")
    if failures:
        raise PropertyViolation("; ".join(failures))
    return 0


def _load_dataset(cfg, out_dir: Path) -> data.OfflineDataset:
    raw = cfg["dataset"]["path"]
    path = Path(raw)
    if not path.exists():
        path = out_dir / raw
    if not path.exists():
        raise UsageError(f"dataset file not found: {raw}")
    return data.load(path)


def cmd_train(cfg, seed: int, out_dir: Path) -> int:
    dataset = _load_dataset(cfg, out_dir)
    env = build_env(cfg) if cfg["env"]["id"] == dataset.env_id else envs.make_env(dataset.env_id)
    agent_cfg = build_agent_config(cfg)
    kind = cfg["agent"]["kind"]
    if kind not in ("sqog", "td3bc"):
        raise UsageError(f"agent.kind must be sqog or td3bc, got {kind!r}")
    if kind == "td3bc":
        agent_cfg = agents.td3bc_config(agent_cfg)

    resume_state = None
    if cfg["agent"]["resume"]:
        try:
            resume_state = agents.load_train_state(Path(cfg["agent"]["resume"]))
        except FileNotFoundError as exc:
            raise UsageError(str(exc)) from exc
    result = agents.train(
        agent_cfg, dataset, seed, agent_kind=kind, env=env, resume=resume_state
    )
    evaluation.write_metrics_csv(metrics_rows_to_dicts(result.metrics), out_dir / "metrics.csv")
    agents.save_train_state(result.state, out_dir)
    print(f"trained {kind} for {result.counts['critic_updates']} critic updates")
    print(f"metrics: {out_dir / 'metrics.csv'}")
    return 0


def _final_policy_score(env, dataset, agent_nets, episodes, rng) -> float:
    policy = agents.DeterministicActorPolicy(agent_nets)
    score = agents.evaluate_policy(env, policy, episodes, rng)
    refs = evaluation.ScoreRefs(*dataset.ref_scores)
    return evaluation.normalized_score(score, refs)


def cmd_eval(cfg, seed: int, out_dir: Path) -> int:
    ckpt_dir = cfg["eval"]["checkpoint_dir"]
    if not ckpt_dir:
        raise UsageError("eval.checkpoint_dir is required")
    try:
        state = agents.load_train_state(Path(ckpt_dir))
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc
    dataset = _load_dataset(cfg, out_dir)
    env = envs.make_env(dataset.env_id)
    episodes = _intv(cfg, "eval", "episodes")
    rng = component_rng(seed, "eval")
    policy = agents.DeterministicActorPolicy(state.nets)
    score = agents.evaluate_policy(env, policy, episodes, rng)
    refs = evaluation.ScoreRefs(*dataset.ref_scores)
    norm = evaluation.normalized_score(score, refs)
    with open(out_dir / "eval.csv", "w", encoding="utf-8") as fh:
        fh.write("episodes,mean_return,normalized_score\n")
        fh.write(f"{episodes},{score:.17g},{norm:.17g}\n")
    print(f"mean return over {episodes} episodes: {score:.4f} (normalized {norm:.2f})")
    return 0


def cmd_sanity_check(cfg, seed: int, out_dir: Path) -> int:
    td3bc_dir, sqog_dir = cfg["eval"]["td3bc_dir"], cfg["eval"]["sqog_dir"]
    if not td3bc_dir or not sqog_dir:
        raise UsageError("eval.td3bc_dir and eval.sqog_dir are required")
    dataset = _load_dataset(cfg, out_dir)
    env = envs.make_env(dataset.env_id)
    try:
        loaded = {
            "td3bc": agents.load_train_state(Path(td3bc_dir)).nets,
            "sqog": agents.load_train_state(Path(sqog_dir)).nets,
        }
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from exc

    query = hull.chn_query_from_points(
        dataset.state_action_points(),
        n_samples=_intv(cfg, "eval", "hull_samples"),
        seed=component_seed(seed, "verify"),
    )
    tol_s = _floatv(cfg, "eval", "tol_s")
    key_states = evaluation.select_key_states(dataset, tol_s=tol_s)
    oracle_cfg = evaluation.McOracleConfig(
        n_rollouts=_intv(cfg, "eval", "n_rollouts"),
        horizon=env.horizon,
        gamma=_floatv(cfg, "agent", "gamma"),
        seed=component_seed(seed, "oracle"),
    )
    threshold = _floatv(cfg, "eval", "density_threshold")

    rows = ["agent,state_index,n_cells,ood_chn_mae"]
    maes = {}
    for name, nets_ in loaded.items():
        critic = agents.critic_q_function(nets_, nets_.critic1)
        policy = agents.DeterministicActorPolicy(nets_)
        total_abs, total_cells = 0.0, 0
        for k, state in enumerate(key_states):
            report = evaluation.q_grid(
                critic,
                env,
                policy,
                state,
                dataset,
                query,
                oracle_cfg,
                step=_floatv(cfg, "eval", "grid_step"),
                tol_s=tol_s,
                tol_a=_floatv(cfg, "eval", "tol_a"),
                hull_tol=_floatv(cfg, "eval", "hull_tol"),
            )
            evaluation.write_grid_csv(report, out_dir / f"grid_{name}_state{k}.csv")
            mask = evaluation.ood_region_mask(report, threshold) & report.in_chn
            if mask.any():
                diffs = np.abs(report.critic_q_norm[mask] - report.oracle_q_norm[mask])
                rows.append(f"{name},{k},{int(mask.sum())},{float(diffs.mean()):.17g}")
                total_abs += float(diffs.sum())
                total_cells += int(mask.sum())
            else:
                rows.append(f"{name},{k},0,")
        if total_cells == 0:
            raise PropertyViolation("no OOD grid cells inside the hull region")
        maes[name] = total_abs / total_cells
    rows.append(f"td3bc,pooled,,{maes['td3bc']:.17g}")
    rows.append(f"sqog,pooled,,{maes['sqog']:.17g}")
    with open(out_dir / "comparison.csv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    print(f"OOD-region MAE: td3bc={maes['td3bc']:.6f} sqog={maes['sqog']:.6f}")
    return 0


def cmd_sweep(cfg, seed: int, out_dir: Path) -> int:
    dataset = _load_dataset(cfg, out_dir)
    env = envs.make_env(dataset.env_id)
    base = build_agent_config(cfg)

    def _list(key, cast):
        return [cast(v) for v in cfg["sweep"][key].split(",") if v]

    betas = _list("betas", float)
    alphas = _list("alphas", float)
    kinds = [k.strip() for k in cfg["sweep"]["noise_kinds"].split(",") if k.strip()]
    scales = _list("noise_scales", float)
    clips = _list("noise_clips", float)
    seeds = _list("seeds", int)
    steps = _intv(cfg, "sweep", "total_steps")

    header = "beta,alpha,noise_kind,noise_scale,noise_clip,n_seeds,mean_score,std_score,failures"
    rows = [header]
    for beta in betas:
        for alpha in alphas:
            for kind in kinds:
                for scale in scales:
                    for clip in clips:
                        scores = []
                        failures = 0
                        for cell_seed in seeds:
                            try:
                                cell_cfg = dataclasses.replace(
                                    base,
                                    beta=beta,
                                    alpha=alpha,
                                    total_steps=steps,
                                    noise=agents.NoiseSpec(kind=kind, scale=scale, clip=clip),
                                )
                                result = agents.train(
                                    cell_cfg, dataset, cell_seed, agent_kind="sqog", env=env
                                )
                                scores.append(
                                    _final_policy_score(
                                        env,
                                        dataset,
                                        result.nets,
                                        cell_cfg.eval_episodes,
                                        component_rng(cell_seed, "eval"),
                                    )
                                )
                            except Exception as exc:  # record and continue the sweep
                                failures += 1
                                print(
                                    f"cell beta={beta} alpha={alpha} seed={cell_seed} failed: {exc}",
                                    file=sys.stderr,
                                )
                        mean = float(np.mean(scores)) if scores else float("nan")
                        std = float(np.std(scores)) if scores else float("nan")
                        rows.append(
                            f"{beta:.17g},{alpha:.17g},{kind},{scale:.17g},{clip:.17g},"
                            f"{len(scores)},{mean:.17g},{std:.17g},{failures}"
                        )
    with open(out_dir / "sweep.csv", "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    print(f"sweep written to {out_dir / 'sweep.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "verify-operator": cmd_verify_operator,
    "train": cmd_train,
    "eval": cmd_eval,
    "sanity-check": cmd_sanity_check,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = _Parser(prog="sqoglab", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config value as section.key=value (repeatable)",
    )
    try:
        args = parser.parse_args(argv)
        cfg, provided = load_config(args.config, args.override, args.seed, args.out, args.command)
        # operator verification defaults to the property-check discount, not
        # the training one; an explicit agent.gamma wins either way
        if args.command == "verify-operator" and "agent.gamma" not in provided:
            cfg["agent"]["gamma"] = "0.9"
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_resolved_config(cfg, out_dir)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](cfg, args.seed, out_dir)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except PropertyViolation as exc:
        print(f"property violation: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
