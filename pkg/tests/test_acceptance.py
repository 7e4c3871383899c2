"""Acceptance gate: one test per shipped guarantee, one printed verdict each.

Every test prints a single "[AC-n] PASS/FAIL" line with its measured
quantities, so a bare pytest run doubles as the release report.  The
direction-of-effect experiment (AC-5) trains fifteen small models and
dominates the runtime; everything else finishes in seconds.
"""

import math
import time
from collections import deque

import numpy as np
import pytest

from softnce import optim
from softnce import run as runmod
from softnce.checkpoint import load_checkpoint, save_checkpoint
from softnce.config import load_config
from softnce.evaluation import knn_classify
from softnce.gradcheck import run_gradcheck
from softnce.losses import (SmoothingConfig, alpha_at, beta_weights, info_nce,
                            pattern_betas, soft_nce, symmetric_pair_loss)
from softnce.membank import NegativeQueue, enqueue, top_k_similar
from softnce.model import momentum_at, params
from softnce.optim import TrainPlan, init_state, lr_at, restore_state, \
    snapshot_state, train_step
from softnce.tensorcore import l2_normalize_rows


def report(capsys, tag, ok, detail):
    with capsys.disabled():
        print(f"\n[{tag}] {'PASS' if ok else 'FAIL'}: {detail}", flush=True)
    assert ok, f"{tag}: {detail}"


def unit_rows(g, n, d):
    return l2_normalize_rows(g.standard_normal((n, d)))


def test_gradient_fidelity(capsys):
    rep = run_gradcheck(seed=0, trials=200, tolerance=1e-5)
    ok = rep.passed and rep.elapsed < 60.0
    report(capsys, "AC-1", ok,
           f"200 finite-difference cases, max rel err {rep.max_rel_error:.3e} "
           f"(tolerance 1e-05, worst {rep.worst.kind}#{rep.worst.index}), "
           f"{rep.elapsed:.1f}s")


def test_alpha_one_reduces_to_plain_loss(capsys):
    g = np.random.default_rng(2)
    worst_loss = 0.0
    worst_grad = 0.0
    for _ in range(1000):
        n = int(g.integers(1, 65))
        sims = g.standard_normal(n)
        sim_pos = float(g.standard_normal())
        tau = float(g.uniform(0.05, 1.0))
        cfg = SmoothingConfig(pattern=("average", "linear_decay")[int(g.integers(2))],
                              k=int(g.integers(1, n + 1)), alpha=1.0, tau=tau)
        w = beta_weights(sims, cfg, alpha=1.0)
        a = soft_nce(sim_pos, sims, w, tau)
        b = info_nce(sim_pos, sims, tau)
        worst_loss = max(worst_loss, abs(a.value - b.value))
        worst_grad = max(worst_grad, float(np.max(np.abs(a.grad_all - b.grad_all))))
    ok = worst_loss < 1e-12 and worst_grad < 1e-12
    report(capsys, "AC-2", ok,
           f"1000 random inputs, max |loss diff| {worst_loss:.1e}, "
           f"max |grad diff| {worst_grad:.1e} (tolerance 1e-12)")


def test_weights_stay_normalized(capsys):
    g = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        n = int(g.integers(1, 65))
        k = int(g.integers(1, n + 1))
        alpha = float(g.uniform(0.01, 1.0))
        cfg = SmoothingConfig(pattern=("average", "linear_decay")[int(g.integers(2))],
                              k=k, alpha=alpha)
        w = beta_weights(g.standard_normal(n), cfg, alpha=alpha)
        worst = max(worst, abs(w.alpha + float(w.betas.sum()) - 1.0))
    table = pattern_betas("linear_decay", 4, 0.8)
    table_err = float(np.max(np.abs(table - [0.1, 0.0667, 0.0333, 0.0])))
    ok = worst < 1e-12 and table_err < 1e-4
    report(capsys, "AC-3", ok,
           f"1000 draws, max |alpha + sum beta - 1| {worst:.1e}; "
           f"k=4 alpha=0.8 table err {table_err:.1e} (tolerance 1e-4)")


def test_equal_similarity_closed_form(capsys):
    worst = 0.0
    for n in (1, 10, 100, 4095):
        out = info_nce(0.25, np.full(n, 0.25), 0.1)
        worst = max(worst, abs(out.value - math.log(n + 1)))
    ok = worst < 1e-9
    report(capsys, "AC-4", ok,
           f"N in {{1, 10, 100, 4095}}, max |loss - ln(N+1)| {worst:.1e} "
           f"(tolerance 1e-9)")


def test_schedule_contracts(capsys):
    sm = SmoothingConfig(schedule="incremental", alpha_min=0.8)
    plan = TrainPlan(smoothing=sm, base_lr=0.2, warmup_epochs=5,
                     total_epochs=200, batch_size=16, queue_capacity=64)
    spe = 31
    lr_ok = lr_at(0, spe, plan) == 0.0 and lr_at(5 * spe, spe, plan) == plan.base_lr
    m_err = max(abs(momentum_at(0, 6200, 0.99) - 0.99),
                abs(momentum_at(6200, 6200, 0.99) - 1.0))
    a_err = max(abs(alpha_at(0, 200, sm) - 1.0),
                abs(alpha_at(200, 200, sm) - sm.alpha_min))
    ok = lr_ok and m_err < 1e-12 and a_err < 1e-12
    report(capsys, "AC-6", ok,
           f"lr endpoints exact {lr_ok}, momentum endpoint err {m_err:.1e}, "
           f"alpha endpoint err {a_err:.1e} (tolerance 1e-12)")


def test_protocol_invariants(capsys, monkeypatch, tmp_path):
    g = np.random.default_rng(7)

    # FIFO equivalence against a deque oracle over random enqueue schedules
    fifo_ok = True
    for _ in range(1000):
        cap = int(g.integers(1, 33))
        q = NegativeQueue(cap, 4, dtype=np.float64)
        oracle = deque(maxlen=cap)
        for _ in range(int(g.integers(1, 9))):
            rows = unit_rows(g, int(g.integers(1, cap + 1)), 4)
            enqueue(q, rows)
            oracle.extend(rows)
        fifo_ok &= bool(np.array_equal(q.snapshot(), np.array(oracle)))

    # top-k selection against a stable full sort, every k, ties included
    topk_ok = True
    for i in range(1000):
        n = int(g.integers(1, 33))
        q = NegativeQueue(n, 6, dtype=np.float64)
        rows = unit_rows(g, n, 6)
        if i % 5 == 0 and n > 1:
            rows[g.integers(1, n)] = rows[0]  # force exact similarity ties
        enqueue(q, rows)
        query = unit_rows(g, 1, 6)[0]
        sims = q.snapshot() @ query
        full = np.argsort(-sims, kind="stable")
        for k in range(1, n + 1):
            idx, vals = top_k_similar(q, query, k)
            topk_ok &= bool(np.array_equal(idx, full[:k]))
            topk_ok &= bool(np.array_equal(vals, sims[full[:k]]))

    # losses always read the queue before this step's keys enter it
    sm = SmoothingConfig(k=4, tau=0.1)
    plan = TrainPlan(smoothing=sm, base_lr=0.2, warmup_epochs=1,
                     total_epochs=50, batch_size=4, queue_capacity=16, seed=11)
    state = init_state(plan, 6, [8], 6, 6, 4, "double", steps_per_epoch=2)
    events = []
    real_loss, real_enq = optim.symmetric_pair_loss, optim.enqueue

    def spy_loss(*a, **kw):
        events.append("loss")
        return real_loss(*a, **kw)

    def spy_enq(*a, **kw):
        events.append("enqueue")
        return real_enq(*a, **kw)

    monkeypatch.setattr(optim, "symmetric_pair_loss", spy_loss)
    monkeypatch.setattr(optim, "enqueue", spy_enq)
    for step in range(100):
        state.epoch = step // 2
        gs = state.rng.stream("accept-order", step)
        train_step(state, unit_rows(gs, 4, 6), unit_rows(gs, 4, 6))
    monkeypatch.setattr(optim, "symmetric_pair_loss", real_loss)
    monkeypatch.setattr(optim, "enqueue", real_enq)
    order_ok = events == ["loss", "enqueue", "enqueue"] * 100

    # resume from a mid-run checkpoint reproduces the straight run bitwise
    plan2 = TrainPlan(smoothing=sm, base_lr=0.3, warmup_epochs=1,
                      total_epochs=4, batch_size=8, queue_capacity=32, seed=0)

    def drive(st, start, stop):
        for step in range(start, stop):
            st.epoch = step // 2
            gs = st.rng.stream("accept-resume", step)
            train_step(st, unit_rows(gs, 8, 6), unit_rows(gs, 8, 6))

    straight = init_state(plan2, 6, [8], 6, 6, 4, "double", steps_per_epoch=2)
    drive(straight, 0, 8)
    split = init_state(plan2, 6, [8], 6, 6, 4, "double", steps_per_epoch=2)
    drive(split, 0, 4)
    path = str(tmp_path / "mid.snce")
    save_checkpoint(path, snapshot_state(split, "cfg"))
    resumed = restore_state(load_checkpoint(path), plan2, steps_per_epoch=2)
    drive(resumed, 4, 8)
    resume_ok = (
        straight.step == resumed.step
        and all(np.array_equal(a, b) for a, b in
                zip(params(straight.pair.query), params(resumed.pair.query)))
        and all(np.array_equal(a, b) for a, b in
                zip(params(straight.pair.key), params(resumed.pair.key)))
        and all(np.array_equal(a, b) for a, b in
                zip(straight.velocities, resumed.velocities))
        and np.array_equal(straight.queue.snapshot(), resumed.queue.snapshot())
    )

    ok = fifo_ok and topk_ok and order_ok and resume_ok
    report(capsys, "AC-7", ok,
           f"fifo oracle {fifo_ok} (1000 schedules), top-k oracle {topk_ok} "
           f"(1000 queues, every k), loss-before-enqueue {order_ok} "
           f"(100 steps), resume bitwise {resume_ok}")


def test_symmetric_loss_swap_invariance(capsys):
    g = np.random.default_rng(8)
    sm = SmoothingConfig(k=5, tau=0.1, alpha=0.85)
    ok = True
    for _ in range(1000):
        q_a, k_b = unit_rows(g, 4, 8), unit_rows(g, 4, 8)
        q_b, k_a = unit_rows(g, 4, 8), unit_rows(g, 4, 8)
        negs = unit_rows(g, 16, 8)
        fwd = symmetric_pair_loss(q_a, k_b, q_b, k_a, negs, sm)
        rev = symmetric_pair_loss(q_b, k_a, q_a, k_b, negs, sm)
        ok &= fwd.value == rev.value
        ok &= fwd.forward_value == rev.reverse_value
    report(capsys, "AC-8", ok,
           "1000 random batches, view swap leaves the loss bit-identical")


def test_knn_matches_brute_force(capsys):
    g = np.random.default_rng(9)
    ok = True
    for _ in range(100):
        n = int(g.integers(25, 501))
        classes = int(g.integers(2, 8))
        train = unit_rows(g, n, 8)
        labels = g.integers(0, classes, n)
        queries = unit_rows(g, 10, 8)
        sims_all = queries @ train.T
        for k in (1, 5, 20):
            preds, _ = knn_classify(train, labels, queries, None, k=k)
            kk = min(k, n)
            expect = np.empty(10, dtype=np.int64)
            for i in range(10):
                top = np.argsort(-sims_all[i], kind="stable")[:kk]
                votes = np.zeros(classes)
                for j in top:
                    votes[labels[j]] += np.exp(sims_all[i, j] / 0.07)
                expect[i] = int(np.argmax(votes))
            ok &= bool(np.array_equal(preds, expect))
    report(capsys, "AC-9", ok,
           "100 random instances (n <= 500), k in {1, 5, 20}, "
           "predictions match a brute-force scorer exactly")


AC5_BASE = [
    "data.n_classes=10", "data.n_instances=5000", "data.input_dim=32",
    "data.class_sep=1.5", "data.class_spread=2.0", "data.aug_noise=0.5",
    "data.false_neg_rate=0.2", "data.false_pos_rate=0.1",
    "data.eval_fraction=0.2",
    "model.hidden_dims=[64]", "model.feature_dim=32",
    "model.projector_hidden=32", "model.embed_dim=16",
    "train.total_epochs=50", "train.warmup_epochs=5", "train.batch_size=128",
    "train.queue_capacity=2048", "train.base_lr=1.0",
    "train.checkpoint_every=1000",
    "smoothing.k=20", "smoothing.pattern=linear_decay", "smoothing.tau=0.06",
]


def test_smoothing_beats_plain_loss_on_noisy_labels(capsys, tmp_path):
    """Train 3 alphas x 5 seeds on label-noise-heavy synthetic data.

    The smoothed loss must win the 20-NN eval on at least 4 of 5 seeds,
    with the intermediate alpha landing between the two extremes on mean
    accuracy, inside a 15 minute budget.
    """
    t0 = time.monotonic()
    acc = {}
    for alpha in (1.0, 0.95, 0.8):
        for seed in range(5):
            cfg = load_config(None, AC5_BASE + [
                f"train.seed={seed}", f"smoothing.alpha={alpha}",
                f"train.run_name=ac5-a{alpha:g}-s{seed}"])
            res = runmod.pretrain(cfg, out_dir=str(tmp_path))
            acc[(alpha, seed)] = runmod.evaluate(cfg, res.checkpoint_path,
                                                 "knn", out_dir=str(tmp_path))
    elapsed = time.monotonic() - t0
    means = {a: float(np.mean([acc[(a, s)] for s in range(5)]))
             for a in (1.0, 0.95, 0.8)}
    wins = sum(acc[(0.8, s)] >= acc[(1.0, s)] for s in range(5))
    between = (min(means[1.0], means[0.8]) <= means[0.95]
               <= max(means[1.0], means[0.8]))
    ok = wins >= 4 and between and elapsed < 900.0
    report(capsys, "AC-5", ok,
           f"20-NN means: plain {means[1.0]:.4f}, alpha=0.95 "
           f"{means[0.95]:.4f}, alpha=0.8 {means[0.8]:.4f}; smoothed wins "
           f"{wins}/5 seeds; intermediate between extremes {between}; "
           f"{elapsed:.0f}s of 900s budget")
