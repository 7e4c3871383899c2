"""Timing harness for the hot kernels on both backends.

Measures top-k selection and the fused loss rows at queue scale, plus a
full training step, and prints numba speedup over the numpy fallback.
The first numba call pays the JIT compile; it is excluded by a warmup
pass.  Run:

    python3 benchmarks/bench_kernels.py --batch 128 --queue 4096 --dim 64
"""

import argparse
import time

import numpy as np

from softnce import backend
from softnce.config import RunConfig, build_plan, build_synth_config
from softnce.data import make_view_batch, synth_generate
from softnce.kernels import softnce_rows, topk_rows
from softnce.losses import pattern_betas
from softnce.optim import init_state, train_step
from softnce.tensorcore import l2_normalize_rows


def timeit(fn, iters):
    fn()  # warmup (and JIT compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(iters):
        fn()
    return (time.perf_counter() - t0) / iters


def bench_kernels(name, batch, queue, dim, k, iters):
    rng = np.random.default_rng(0)
    sims = rng.standard_normal((batch, queue)).astype(np.float32)
    sim_pos = rng.standard_normal(batch).astype(np.float32)
    betas = pattern_betas("linear_decay", k, 0.8).astype(np.float32)

    t_topk = timeit(lambda: topk_rows(sims, k, backend_name=name), iters)
    idx = topk_rows(sims, k, backend_name=name)
    t_rows = timeit(
        lambda: softnce_rows(sim_pos, sims, idx, betas, 0.8, 0.1, backend_name=name),
        iters)
    return t_topk, t_rows


def bench_step(name, batch, queue, dim, iters):
    backend.set_backend(name)
    cfg = RunConfig()
    import dataclasses
    cfg = dataclasses.replace(
        cfg,
        data=dataclasses.replace(cfg.data, input_dim=dim, n_instances=batch * 4,
                                 n_classes=4, eval_fraction=0.25),
        train=dataclasses.replace(cfg.train, batch_size=batch,
                                  queue_capacity=queue, total_epochs=10,
                                  warmup_epochs=1),
    )
    plan = build_plan(cfg)
    state = init_state(plan, dim, cfg.model.hidden_dims, cfg.model.feature_dim,
                       cfg.model.projector_hidden, cfg.model.embed_dim,
                       cfg.model.precision, steps_per_epoch=4)
    ds, meta = synth_generate(build_synth_config(cfg.data), seed=0)
    x = ds.train_inputs[:batch]
    alts = meta.alt_inputs[ds.split == 0][:batch]
    va, vb, _ = make_view_batch(x, alts, build_synth_config(cfg.data),
                                state.rng.stream("bench"))
    a = l2_normalize_rows(va)
    b = l2_normalize_rows(vb)

    def step():
        state.step = 0
        train_step(state, a, b)

    return timeit(step, iters)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--queue", type=int, default=4096)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--k", type=int, default=20)
    ap.add_argument("--iters", type=int, default=50)
    args = ap.parse_args()

    names = ["numpy"]
    if backend.HAS_NUMBA:
        names.append("numba")
    else:
        print("numba not installed; timing the numpy fallback only")

    print(f"batch={args.batch} queue={args.queue} dim={args.dim} "
          f"k={args.k} iters={args.iters}")
    results = {}
    for name in names:
        t_topk, t_rows = bench_kernels(name, args.batch, args.queue, args.dim,
                                       args.k, args.iters)
        t_step = bench_step(name, args.batch, args.queue, args.dim,
                            max(5, args.iters // 5))
        results[name] = (t_topk, t_rows, t_step)
        print(f"  {name:<6} topk {t_topk * 1e3:8.3f} ms   "
              f"loss rows {t_rows * 1e3:8.3f} ms   "
              f"train step {t_step * 1e3:8.3f} ms")

    if "numba" in results:
        np_t, nb_t = results["numpy"], results["numba"]
        print("  speedup (numpy/numba): "
              f"topk {np_t[0] / nb_t[0]:.2f}x, "
              f"loss rows {np_t[1] / nb_t[1]:.2f}x, "
              f"train step {np_t[2] / nb_t[2]:.2f}x")


if __name__ == "__main__":
    main()
