#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the numpy fallback.

Measures the per-op and whole-network-pass primitives at training shapes,
plus a full agent training step, and checks numerical agreement between the
backends. Run from the repo root after building the extension in place:

    python setup.py build_ext --inplace
    python benchmarks/bench_kernels.py
"""

import os
import time

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")

import numpy as np  # noqa: E402

from sqoglab._kernels import _numpy as np_backend  # noqa: E402

try:
    from sqoglab._kernels import _core as core_backend
except ImportError:
    core_backend = None


def best_of(fn, *args, repeats=7, inner=300):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / inner)
    return best * 1e6  # us


def row(label, np_time, core_time):
    if core_time is None:
        print(f"{label:34s} numpy {np_time:9.1f} us   compiled      n/a")
    else:
        print(
            f"{label:34s} numpy {np_time:9.1f} us   compiled {core_time:9.1f} us"
            f"   speedup {np_time / core_time:5.2f}x"
        )


def bench_ops():
    rng = np.random.default_rng(0)
    x = np.ascontiguousarray(rng.normal(size=(256, 64)))
    w = np.ascontiguousarray(rng.normal(size=(64, 64)))
    b = np.ascontiguousarray(rng.normal(size=64))
    dy = np.ascontiguousarray(rng.normal(size=(256, 64)))

    cases = [
        ("linear_forward 256x64x64", "linear_forward", (x, w, b)),
        ("linear_backward 256x64x64", "linear_backward", (dy, x, w)),
        ("relu_forward 256x64", "relu_forward", (x,)),
    ]
    for label, name, args in cases:
        np_t = best_of(getattr(np_backend, name), *args)
        core_t = best_of(getattr(core_backend, name), *args) if core_backend else None
        row(label, np_t, core_t)

    # whole-network passes at the agent's critic shape
    ws = [
        np.ascontiguousarray(rng.normal(size=(64, 3))),
        np.ascontiguousarray(rng.normal(size=(64, 64))),
        np.ascontiguousarray(rng.normal(size=(1, 64))),
    ]
    bs = [
        np.ascontiguousarray(rng.normal(size=64)),
        np.ascontiguousarray(rng.normal(size=64)),
        np.ascontiguousarray(rng.normal(size=1)),
    ]
    xin = np.ascontiguousarray(rng.normal(size=(512, 3)))
    up = np.ascontiguousarray(rng.normal(size=(512, 1)))
    np_t = best_of(np_backend.mlp_forward_cached, xin, ws, bs)
    core_t = best_of(core_backend.mlp_forward_cached, xin, ws, bs) if core_backend else None
    row("mlp_forward_cached 512x(3,64,64,1)", np_t, core_t)

    _, acts, pres = np_backend.mlp_forward_cached(xin, ws, bs)
    np_t = best_of(np_backend.mlp_backward, up, ws, acts, pres)
    core_t = best_of(core_backend.mlp_backward, up, ws, acts, pres) if core_backend else None
    row("mlp_backward 512x(3,64,64,1)", np_t, core_t)

    x1 = np.ascontiguousarray(rng.normal(size=(1, 3)))
    np_t = best_of(np_backend.mlp_forward, x1, ws, bs)
    core_t = best_of(core_backend.mlp_forward, x1, ws, bs) if core_backend else None
    row("mlp_forward single row", np_t, core_t)

    p = rng.normal(size=10_000)
    g = rng.normal(size=10_000)

    def adam(backend):
        m = np.zeros_like(p)
        v = np.zeros_like(p)
        pp = p.copy()
        backend.adam_step_inplace(pp, g, m, v, 1, 3e-4, 0.9, 0.999, 1e-8)

    np_t = best_of(adam, np_backend, inner=100)
    core_t = best_of(adam, core_backend, inner=100) if core_backend else None
    row("adam_step 10k params", np_t, core_t)


def check_agreement():
    rng = np.random.default_rng(1)
    ws = [
        np.ascontiguousarray(rng.normal(size=(16, 4))),
        np.ascontiguousarray(rng.normal(size=(16, 16))),
        np.ascontiguousarray(rng.normal(size=(1, 16))),
    ]
    bs = [np.ascontiguousarray(rng.normal(size=s)) for s in (16, 16, 1)]
    x = np.ascontiguousarray(rng.normal(size=(37, 4)))
    up = np.ascontiguousarray(rng.normal(size=(37, 1)))
    y1, acts1, pre1 = core_backend.mlp_forward_cached(x, ws, bs)
    y2, acts2, pre2 = np_backend.mlp_forward_cached(x, ws, bs)
    g1, dx1 = core_backend.mlp_backward(up, ws, acts1, pre1)
    g2, dx2 = np_backend.mlp_backward(up, ws, acts2, pre2)
    worst = float(np.max(np.abs(y1 - y2)))
    worst = max(worst, float(np.max(np.abs(np.asarray(dx1) - dx2))))
    for (dw1, db1), (dw2, db2) in zip(g1, g2):
        worst = max(worst, float(np.max(np.abs(np.asarray(dw1) - dw2))))
        worst = max(worst, float(np.max(np.abs(np.asarray(db1) - db2))))
    print(f"\nbackend agreement: max |compiled - numpy| = {worst:.2e}")
    assert worst < 1e-10, "backends disagree beyond roundoff"


def bench_training_step():
    from sqoglab import agents, data, envs

    env = envs.make_env("pendulum-lite")
    behavior = data.BehaviorPolicy("scripted-plus-gaussian", 0.3)
    dataset = data.generate_dataset(env, behavior, 2000, seed=11, ref_episodes=5)
    cfg = agents.SqogConfig(total_steps=300, eval_every=0, log_every=0)
    agents.train(
        agents.SqogConfig(total_steps=30, eval_every=0, log_every=0),
        dataset, seed=0, agent_kind="sqog", env=env,
    )  # warmup
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        agents.train(cfg, dataset, seed=0, agent_kind="sqog", env=env)
        best = min(best, (time.perf_counter() - t0) / cfg.total_steps)
    print(f"full agent training step: {best * 1e3:.2f} ms/step")


def main():
    import sqoglab

    print(f"active backend: {sqoglab.kernel_backend}")
    if core_backend is None:
        print("compiled core not built; benchmarking the numpy fallback only\n")
    bench_ops()
    if core_backend is not None:
        check_agreement()
    print(f"\n[{'compiled' if core_backend else 'numpy'} backend selected at import]")
    bench_training_step()


if __name__ == "__main__":
    main()
