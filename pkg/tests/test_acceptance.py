"""Acceptance suite: one test per criterion, each printing a PASS/FAIL verdict line.

The directional experiments (criteria 5 to 8) train small models on
synthetic corpora and take several minutes in total on one CPU.
"""

import math
import time

import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from acceptance_log import record
from gradcheck import check, max_violation, numeric_grads
from mtlcoder import tensor as tn
from mtlcoder.corpus import Corpus, GeneratorSpec, Session, Turn, VALIDATION_FRACTION, generate_synthetic
from mtlcoder.encoders import PAD, UNK, TurnEncoder, window_indices
from mtlcoder.evalreport import aggregate_session, baseline_always_present, f1_per_label
from mtlcoder.objectives import (
    DEFAULT_GAMMA,
    DEFAULT_LAMBDA,
    compute_sample_weights,
    diff_loss,
    multilabel_bce,
    task_discriminator,
    total_multitask_loss,
    weighted_loss,
)
from mtlcoder.tensor import AdamState, Tensor
from mtlcoder.trainer import (
    BATCH_SIZE,
    N_SEEDS,
    ModelConfig,
    TrainedModel,
    TurnIndex,
    build_multitask_net,
    load_checkpoint,
    save_checkpoint,
    train_multitask,
    train_single_task,
)
from test_tensor import CASES

FIVE_SEEDS = range(5)


def spec_with(spec: GeneratorSpec, **changes) -> GeneratorSpec:
    return GeneratorSpec(**{**spec.to_json(), **changes})


# ---------------------------------------------------------------------------
# 1. gradient correctness


def _full_stack_violation() -> float:
    rng = np.random.default_rng(8)
    vocab = {PAD: 0, UNK: 1, "a": 2, "b": 3, "c": 4}
    enc = TurnEncoder.initialize(vocab, 3, 2, 2, 2, rng)
    for p in enc.parameters().values():
        p.data = p.data + 0.1 * rng.normal(size=p.shape)
    U = tn.glorot_uniform_init(enc.output_dim, 2, rng)
    bu = Tensor(rng.normal(size=2), requires_grad=True)
    words, roles = [["a", "b"], ["c", "a", "b"]], ["T", "C"]
    windows = window_indices(2, [0, 1], 1)
    params = {**enc.parameters(), "U": U, "bu": bu}
    names = list(params)
    Y = np.array([[1, 0], [1, 1]])
    objective = lambda: weighted_loss(Y, tn.sigmoid(enc.encode(words, roles, windows) @ U + bu))

    def loss_at(arrays):
        saved = {n: params[n].data for n in names}
        for n, a in zip(names, arrays):
            params[n].data = a
        try:
            return objective().item()
        finally:
            for n in names:
                params[n].data = saved[n]

    analytic = tn.backward(objective(), params)
    numeric = numeric_grads(loss_at, [params[n].data.copy() for n in names])
    return max_violation([analytic[n] for n in names], numeric)


def _contract(out, seed):
    # fixed random weights make every Jacobian entry count towards the scalar
    return tn.sum(out * Tensor(np.random.default_rng(seed).normal(size=out.shape)))


def test_criterion_01_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    per_op = {}
    for kind, case in sorted(CASES.items()):
        sign = -1.0 if kind == "gradient_reversal" else 1.0
        worst = -math.inf
        for k in range(20):
            arrays, op = case(rng)
            worst = max(worst, check(lambda t: _contract(op(t), k), arrays, sign))
        per_op[kind] = worst
    stack = _full_stack_violation()
    elapsed = time.perf_counter() - start
    covered = set(per_op) == set(tn.OPS)
    ok = covered and max(per_op.values()) <= 0 and stack <= 0 and elapsed < 60
    bad = [k for k, v in per_op.items() if v > 0]
    assert record(1, "gradient-correctness", ok,
                  f"{len(per_op)} ops x 20 instances, failing ops {bad or 'none'}, full stack margin {stack:.2e}, "
                  f"rel tol 1e-4, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# 2. gradient reversal


def test_criterion_02_gradient_reversal():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 3))
    W1, W2 = rng.normal(size=(3, 5)), rng.normal(size=(5, 2))

    def grads(reverse: bool):
        a, b = Tensor(W1.copy(), requires_grad=True), Tensor(W2.copy(), requires_grad=True)
        h = tn.tanh(Tensor(x) @ a)
        h = tn.gradient_reversal(h) if reverse else h
        loss = tn.sum(tn.sigmoid(h @ b))
        return tn.backward(loss, {"a": a, "b": b}), loss.item()

    forward_same = all(
        tn.gradient_reversal(Tensor(v)).data.tobytes() == v.tobytes()
        for v in (x, np.array([0.0, -0.0, 1e308, 5e-324]), rng.normal(size=(2, 2, 2)))
    )
    plain, l0 = grads(False)
    flipped, l1 = grads(True)
    exact_flip = (-plain["a"]).tobytes() == flipped["a"].tobytes()
    downstream_same = plain["b"].tobytes() == flipped["b"].tobytes()
    ok = forward_same and l0 == l1 and exact_flip and downstream_same
    assert record(2, "gradient-reversal", ok,
                  f"forward bit-identical {forward_same}, upstream grad == -1x exactly {exact_flip}, "
                  f"downstream unchanged {downstream_same}")


# ---------------------------------------------------------------------------
# 3. formula oracles


def _oracle_weights(Y):
    n, L = len(Y), len(Y[0])
    out = []
    for row in Y:
        parts = []
        for l in range(L):
            if row[l]:
                pos = sum(r[l] for r in Y)
                parts.append((n - pos) / pos)
            else:
                parts.append(1.0)
        out.append(sum(parts) / L)
    return out


def test_criterion_03_formula_oracles():
    rng = np.random.default_rng(3)
    worst = {}

    # session averaging
    err = 0.0
    for _ in range(200):
        P = rng.uniform(size=(int(rng.integers(1, 9)), int(rng.integers(1, 5))))
        loop = [sum(P[j, l] for j in range(len(P))) / len(P) for l in range(P.shape[1])]
        err = max(err, float(np.max(np.abs(aggregate_session(P) - loop))))
    worst["session mean"] = err

    # multi-label BCE
    err = 0.0
    for _ in range(200):
        n, L = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        Y, P = rng.integers(0, 2, size=(n, L)), rng.uniform(0.01, 0.99, size=(n, L))
        loop = -sum(Y[i, l] * math.log(P[i, l]) + (1 - Y[i, l]) * math.log(1 - P[i, l]) for i in range(n) for l in range(L))
        err = max(err, abs(multilabel_bce(Y, Tensor(P)).item() - loop) / max(1.0, abs(loop)))
    worst["bce"] = err

    # sample weights over 1000 random label sets
    err = 0.0
    for _ in range(1000):
        L, n = int(rng.integers(1, 6)), int(rng.integers(2, 30))
        Y = rng.integers(0, 2, size=(n, L))
        Y[rng.integers(n)] = 1
        got = compute_sample_weights(Y).weights(Y)
        err = max(err, float(np.max(np.abs(got - _oracle_weights(Y.tolist())))))
    worst["sample weights"] = err

    # weighted sum
    err = 0.0
    for _ in range(200):
        n, L = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        Y, P, w = rng.integers(0, 2, size=(n, L)), rng.uniform(0.05, 0.95, size=(n, L)), rng.uniform(0.5, 5, size=n)
        loop = sum(w[i] * -sum(Y[i, l] * math.log(P[i, l]) + (1 - Y[i, l]) * math.log(1 - P[i, l]) for l in range(L)) for i in range(n))
        err = max(err, abs(weighted_loss(Y, Tensor(P), w).item() - loop) / max(1.0, abs(loop)))
    worst["weighted sum"] = err

    # discriminator
    err = 0.0
    for _ in range(200):
        G, U, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 1)), rng.normal(size=1)
        loop = [1 / (1 + math.exp(-(sum(G[i, k] * U[k, 0] for k in range(3)) + b[0]))) for i in range(4)]
        err = max(err, float(np.max(np.abs(task_discriminator(Tensor(G), Tensor(U), Tensor(b)).data - loop))))
    worst["discriminator"] = err

    # diff loss
    err = 0.0
    for _ in range(200):
        Gs, Gm = rng.normal(size=(5, 3)), rng.normal(size=(5, 2))
        loop = sum(sum(Gs[i, a] * Gm[i, c] for i in range(5)) ** 2 for a in range(3) for c in range(2))
        err = max(err, abs(diff_loss(Tensor(Gs), Tensor(Gm)).item() - loop) / max(1.0, loop))
    worst["diff loss"] = err

    # linear combination
    err = 0.0
    for _ in range(200):
        Em, Et, Ed = rng.uniform(0, 10, size=2), rng.uniform(0, 10), rng.uniform(0, 100)
        err = max(err, abs(total_multitask_loss(list(Em), Et, Ed) - (Em[0] + Em[1] + 0.05 * Et + 0.01 * Ed)))
    worst["total loss"] = err
    defaults = (DEFAULT_LAMBDA, DEFAULT_GAMMA) == (0.05, 0.01)

    ok = defaults and max(worst.values()) <= 1e-10
    assert record(3, "formula-oracles", ok,
                  "max errors " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (tol 1e-10)")


# ---------------------------------------------------------------------------
# 4. metric oracle


def _f1_loop(ref, pred):
    out = []
    for l in range(len(ref[0])):
        tp = sum(1 for r, p in zip(ref, pred) if r[l] and p[l])
        fp = sum(1 for r, p in zip(ref, pred) if not r[l] and p[l])
        fn = sum(1 for r, p in zip(ref, pred) if r[l] and not p[l])
        out.append(0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn))
    return out


def test_criterion_04_metric_oracle():
    rng = np.random.default_rng(4)
    mismatches = 0
    macro_mismatches = 0
    base_err = 0.0
    for _ in range(1000):
        n, L = int(rng.integers(1, 50)), int(rng.integers(1, 6))
        ref, pred = rng.integers(0, 2, size=(n, L)), rng.integers(0, 2, size=(n, L))
        oracle = _f1_loop(ref.tolist(), pred.tolist())
        s = f1_per_label(ref, pred)
        mismatches += s.f1.tolist() != oracle
        macro_mismatches += s.macro_f1 != sum(oracle) / L
        p = ref.mean(axis=0)
        base_err = max(base_err, float(np.max(np.abs(baseline_always_present(ref) - 2 * p / (1 + p)))))
    ok = mismatches == 0 and base_err == 0.0 and macro_mismatches == 0
    assert record(4, "metric-oracle", ok,
                  f"per-label mismatches {mismatches}/1000, macro mismatches {macro_mismatches}, "
                  f"baseline max error {base_err:.1e}")


# ---------------------------------------------------------------------------
# 5. learnability


def test_criterion_05_learnability():
    spec = GeneratorSpec(labels=["a", "b", "c"], markers=["mka", "mkb", "mkc"], marker_prob=[0.5, 0.5, 0.5],
                         sessions=200, seed=1)
    train = generate_synthetic(spec)
    test = generate_synthetic(spec_with(spec, seed=2, sessions=50))
    start = time.perf_counter()
    ckpt = train_single_task(train, ModelConfig(regime="ML", context=0, embedding_dim=16, max_epochs=20, seed=0))
    macro = TrainedModel(ckpt).evaluate(test).macro_f1
    elapsed = time.perf_counter() - start
    ok = macro >= 0.95 and ckpt.metadata["epochs_run"] <= 20 and elapsed < 300
    assert record(5, "learnability", ok,
                  f"held-out macro-F1 {macro:.4f} (need >= 0.95) after {ckpt.metadata['epochs_run']} epochs, {elapsed:.1f} s")


# ---------------------------------------------------------------------------
# 6. sample weighting on a rare label


def test_criterion_06_sample_weighting_effect():
    spec = GeneratorSpec(labels=["a", "b", "r"], markers=["mka", "mkb", "mkr"], marker_prob=[0.3, 0.3, 0.02],
                         sessions=200, seed=11)
    train = generate_synthetic(spec)
    test = generate_synthetic(spec_with(spec, seed=12, sessions=100))
    rare = {}
    for sw in (False, True):
        scores = []
        for seed in FIVE_SEEDS:
            cfg = ModelConfig(regime="ML", sample_weighting=sw, embedding_dim=16, max_epochs=15, seed=seed)
            scores.append(TrainedModel(train_single_task(train, cfg)).evaluate(test).f1[2])
        rare[sw] = scores
    mean_off, mean_on = float(np.mean(rare[False])), float(np.mean(rare[True]))
    prevalence = float(train.turn_labels()[:, 2].mean())
    ok = mean_on > mean_off
    assert record(6, "sample-weighting-effect", ok,
                  f"rare label (train prevalence {prevalence:.3f}) mean F1 unweighted {mean_off:.3f} vs weighted "
                  f"{mean_on:.3f}, delta {mean_on - mean_off:+.3f}; per seed off {np.round(rare[False], 3).tolist()} "
                  f"on {np.round(rare[True], 3).tolist()}")


# ---------------------------------------------------------------------------
# 7. context radius


def test_criterion_07_context_effect():
    spec = GeneratorSpec(labels=["a", "ctx"], markers=["mka", "mkc"], marker_prob=[0.4, 0.4], context_labels=["ctx"],
                         sessions=200, seed=21)
    train = generate_synthetic(spec)
    test = generate_synthetic(spec_with(spec, seed=22, sessions=100))
    ctx, macro = {}, {}
    for C in (0, 1):
        ctx[C], macro[C] = [], []
        for seed in FIVE_SEEDS:
            cfg = ModelConfig(regime="ML", context=C, embedding_dim=16, max_epochs=15, seed=seed)
            rep = TrainedModel(train_single_task(train, cfg)).evaluate(test)
            ctx[C].append(rep.f1[1])
            macro[C].append(rep.macro_f1)
    gain = float(np.mean(ctx[1]) - np.mean(ctx[0]))
    ok = gain >= 0.10
    assert record(7, "context-effect", ok,
                  f"previous-turn label mean F1 C=0 {np.mean(ctx[0]):.3f} vs C=1 {np.mean(ctx[1]):.3f}, "
                  f"gain {gain:+.3f} (need >= 0.10); macro-F1 {np.mean(macro[0]):.3f} -> {np.mean(macro[1]):.3f}")


# ---------------------------------------------------------------------------
# 8. adversarial invariance probe


def _offset_fillers(corpus: Corpus, offset: int) -> Corpus:
    """Shift filler indices so the second task draws from a partly different filler range."""
    shift = lambda w: f"w{int(w[1:]) + offset}" if w.startswith("w") else w
    sessions = tuple(
        Session(s.session_id, s.task, tuple(Turn(t.role, tuple(map(shift, t.words)), t.labels, t.raw_labels) for t in s.turns),
                s.labels, s.raw_labels)
        for s in corpus.sessions
    )
    return Corpus(corpus.space, sessions)


def _probe_accuracy(features_a: np.ndarray, features_b: np.ndarray, seed: int = 0) -> float:
    """Held-out accuracy of a fresh logistic-regression task probe (balanced classes, 50/50 split)."""
    rng = np.random.default_rng(seed)
    n = min(len(features_a), len(features_b))
    X = np.concatenate([features_a[rng.permutation(len(features_a))[:n]], features_b[rng.permutation(len(features_b))[:n]]])
    y = np.r_[np.zeros(n), np.ones(n)]
    order = rng.permutation(2 * n)
    X, y = X[order], y[order]
    probe = make_pipeline(StandardScaler(), LogisticRegression(max_iter=5000)).fit(X[:n], y[:n])
    return float(probe.score(X[n:], y[n:]))


def test_criterion_08_adversarial_invariance():
    base = dict(labels=["a", "b"], markers=["mka", "mkb"], sessions=100, vocab_size=150)
    offset = 25
    train_a = generate_synthetic(GeneratorSpec(**base, marker_prob=[0.4, 0.4], task="A", seed=31))
    train_b = _offset_fillers(generate_synthetic(GeneratorSpec(**base, marker_prob=[0.3, 0.5], task="B", seed=32)), offset)
    test_a = generate_synthetic(GeneratorSpec(**base, marker_prob=[0.4, 0.4], task="A", seed=41))
    test_b = _offset_fillers(generate_synthetic(GeneratorSpec(**base, marker_prob=[0.3, 0.5], task="B", seed=42)), offset)

    shared, private, control = [], [], []
    for seed in FIVE_SEEDS:
        cfg = ModelConfig(regime="ML", embedding_dim=16, max_epochs=10, seed=seed)
        init_a, init_b = train_single_task(train_a, cfg), train_single_task(train_b, cfg)
        mt_cfg = cfg.replace(regime="ML-MT", max_epochs=15)
        model = TrainedModel(train_multitask(train_a, train_b, mt_cfg, init_a, init_b))
        shared.append(_probe_accuracy(model.features(test_a, "shared"), model.features(test_b, "shared")))
        private.append(_probe_accuracy(model.features(test_a, "private"), model.features(test_b, "private")))
        # same run without the adversarial and orthogonality terms, for attribution
        plain = TrainedModel(train_multitask(train_a, train_b, mt_cfg.replace(lam=0.0, gamma=0.0), init_a, init_b))
        control.append(_probe_accuracy(plain.features(test_a, "shared"), plain.features(test_b, "shared")))
    ok = np.mean(shared) <= 0.65 and np.mean(private) >= 0.9
    assert record(8, "adversarial-invariance", ok,
                  f"probe accuracy shared {np.mean(shared):.3f} (need <= 0.65, per seed {np.round(shared, 3).tolist()}), "
                  f"private {np.mean(private):.3f} (need >= 0.9); control with lambda=gamma=0 shared "
                  f"{np.mean(control):.3f} (per seed {np.round(control, 3).tolist()})")


# ---------------------------------------------------------------------------
# 9. multi-task degeneration


def _toy(task, seed):
    return generate_synthetic(GeneratorSpec(labels=["a", "b"], markers=["mka", "mkb"], marker_prob=[0.4, 0.3],
                                            sessions=12, vocab_size=15, turns_per_session=(2, 4),
                                            words_per_turn=(2, 4), task=task, seed=seed))


def test_criterion_09_multitask_degeneration():
    a, b = _toy("A", 0), _toy("B", 5)
    cfg = ModelConfig(regime="ML", embedding_dim=4, max_epochs=1, batch_size=16)
    init_a, init_b = train_single_task(a, cfg), train_single_task(b, cfg)
    net = build_multitask_net(a, b, cfg.replace(regime="ML-MT", lam=0.0, gamma=0.0), init_a, init_b,
                              np.random.default_rng(0))
    batches = {"A": TurnIndex(a).batch(np.arange(20), 1), "B": TurnIndex(b).batch(np.arange(20), 1)}
    identical, total = 0, 0
    for task in ("A", "B"):
        params = net.private[task].trainable_parameters(f"private.{task}")
        joint = tn.backward(net.step_loss(batches), params)
        alone = tn.backward(weighted_loss(batches[task].labels, net.forward(task, batches[task])), params)
        identical += sum(joint[n].tobytes() == alone[n].tobytes() for n in params)
        total += len(params)
    assert record(9, "multitask-degeneration", identical == total,
                  f"{identical}/{total} private gradient tensors bitwise equal to the single-task gradients")


# ---------------------------------------------------------------------------
# 10. determinism and persistence


def test_criterion_10_determinism_and_persistence():
    a, b = _toy("A", 0), _toy("B", 5)
    cfg = ModelConfig(regime="ML", embedding_dim=4, max_epochs=2, batch_size=16, context=1, sample_weighting=True)
    runs = [save_checkpoint(train_single_task(a, cfg)) for _ in range(2)]
    sl = [save_checkpoint(train_single_task(a, cfg.replace(regime="SL"))) for _ in range(2)]
    init_a, init_b = load_checkpoint(runs[0]), train_single_task(b, cfg)
    mt = [save_checkpoint(train_multitask(a, b, cfg.replace(regime="ML-MT"), init_a, init_b)) for _ in range(2)]
    same_ckpt = runs[0] == runs[1] and sl[0] == sl[1] and mt[0] == mt[1]
    metrics_same = True
    for blob, corpus in ((runs[0], a), (sl[0], a), (mt[0], b)):
        original = load_checkpoint(blob)
        reloaded = load_checkpoint(save_checkpoint(load_checkpoint(blob)))
        r1, r2 = TrainedModel(original).evaluate(corpus), TrainedModel(reloaded).evaluate(corpus)
        metrics_same &= r1.to_json() == r2.to_json()
        metrics_same &= TrainedModel(original).posteriors(corpus).tobytes() == TrainedModel(reloaded).posteriors(corpus).tobytes()
        metrics_same &= save_checkpoint(reloaded) == blob
    assert record(10, "determinism-and-persistence", same_ckpt and metrics_same,
                  f"repeat runs byte-identical (ML, SL, ML-MT) {same_ckpt}; save-load-eval bit-exact {metrics_same}")


# ---------------------------------------------------------------------------
# 11. protocol defaults


def test_criterion_11_protocol_fidelity():
    c = ModelConfig()
    rng = np.random.default_rng(0)
    glorot_ok = all(
        tn.glorot_bound(r, k) == math.sqrt(6.0 / (r + k))
        and np.abs(tn.glorot_uniform_init(r, k, rng).data).max() <= math.sqrt(6.0 / (r + k))
        for r, k in ((3, 3), (300, 11), (64, 256))
    )
    checks = {
        "batch 32": c.batch_size == BATCH_SIZE == 32,
        "lr 1e-3": c.learning_rate == AdamState().learning_rate == 1e-3,
        "fine-tune lr 1e-4": c.finetune_learning_rate == 1e-4,
        "lambda 0.05": c.lam == 0.05,
        "gamma 0.01": c.gamma == 0.01,
        "10% session split": c.val_fraction == VALIDATION_FRACTION == 0.10,
        "glorot bound": glorot_ok,
        "10 seeds": c.n_seeds == N_SEEDS == 10,
    }
    failed = [k for k, v in checks.items() if not v]
    assert record(11, "protocol-fidelity", not failed,
                  f"{len(checks) - len(failed)}/{len(checks)} defaults hold" + (f", failing {failed}" if failed else ""))
