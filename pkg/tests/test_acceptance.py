"""Acceptance criteria, one test per criterion.

Each test prints a single ``[PASS]``/``[FAIL]`` line with the measured values;
the lines are repeated in the pytest terminal summary. Run directly with
``python tests/test_acceptance.py`` for just those lines.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from oracles import central_diff, pair_sigmoid, rel_error, softmax_nll
from protospace.alignment import (
    AlignmentAdapter,
    TrainConfig,
    TrainingProblem,
    init_adapter,
    procrustes,
    procrustes_adapter,
    train,
)
from protospace.cli import main
from protospace.corpus import EmbeddingStore, eol_prompt, verbalize_entity
from protospace.evaluation import leave_one_out, mcnemar_exact, pairwise_accuracy, pearson
from protospace.linalg import random_orthogonal
from protospace.objectives import (
    ClassificationBatch,
    LossConfig,
    RankBatchItem,
    classification_loss,
    combined_loss,
    ranking_loss,
)
from protospace.scoring import prototype_direction, score_ids
from protospace.synth import SynthWorldConfig, synth_world

RESULTS = []


def report(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {name}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_1_mcnemar_reproduction():
    t0 = time.perf_counter()
    p1 = mcnemar_exact(23, 7).p_value
    p2 = mcnemar_exact(3, 11).p_value
    p3 = mcnemar_exact(7, 8).p_value
    elapsed = time.perf_counter() - t0
    ok = abs(p1 - 0.0052) <= 2e-4 and abs(p2 - 0.057) <= 1e-3 and p3 == 1.0 and elapsed < 1
    report(1, "McNemar reproduction", ok,
           f"p(23,7)={p1:.5f} p(3,11)={p2:.5f} p(7,8)={p3:.3f} in {elapsed:.3f}s")


def test_2_loss_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for T in (0.25, 1.0):
        for _ in range(100):
            d = int(rng.integers(2, 33))
            c = rng.standard_normal(d)
            f = rng.standard_normal(d)
            loss, _ = classification_loss(ClassificationBatch(np.tile(f, (5, 1)), c, T))
            worst = max(worst, abs(loss - math.log(5)))
    rank_ok = True
    for _ in range(100):
        d = int(rng.integers(2, 33))
        e = rng.standard_normal(d)
        item = RankBatchItem(e, e.copy(), rng.standard_normal(d), int(rng.choice([-1, 1])), float(rng.uniform(0.1, 50)))
        rank_ok &= ranking_loss(item)[0] == 0.5
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and rank_ok and elapsed < 1
    report(2, "Loss identities", ok,
           f"max |L1 - ln5|={worst:.1e} over 200 batches; ranking(e1=e2)==0.5: {rank_ok}; {elapsed:.2f}s")


def _unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _oracle_W_loss(W, items, pairs, store, cfg):
    """Training objective at ``W`` from plain numpy forward + the scalar oracles."""
    def proto(i):
        v = W @ store[i]
        return v / np.linalg.norm(v)

    l1 = [softmax_nll([proto(s) for s in (it.target, *it.negatives)],
                      np.mean([store[e] for e in it.examples], axis=0), cfg.T) for it in items]
    l2 = [pair_sigmoid(store[p.item_a], store[p.item_b], proto(p.dimension), p.label, cfg.alpha) for p in pairs]
    return float(np.mean(l1) + cfg.lam * np.mean(l2))


def test_3_gradient_suite():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    cfg = LossConfig()
    counts = {}
    worst = 0.0
    for d in (2, 8, 32):
        n = 0
        for _ in range(30):
            protos, c = _unit_rows(rng, 5, d), _unit_rows(rng, 1, d)[0]
            _, g = classification_loss(ClassificationBatch(protos, c, cfg.T))
            worst = max(worst, rel_error(g.prototypes, central_diff(lambda p: softmax_nll(p, c, cfg.T), protos)),
                        rel_error(g.centroid, central_diff(lambda x: softmax_nll(protos, x, cfg.T), c)))
            n += 1
        for _ in range(30):
            e1, e2, f = _unit_rows(rng, 3, d)
            y = int(rng.choice([-1, 1]))
            _, g = ranking_loss(RankBatchItem(e1, e2, f, y, cfg.alpha))
            worst = max(worst,
                        rel_error(g.e1, central_diff(lambda x: pair_sigmoid(x, e2, f, y, cfg.alpha), e1)),
                        rel_error(g.e2, central_diff(lambda x: pair_sigmoid(e1, x, f, y, cfg.alpha), e2)),
                        rel_error(g.f, central_diff(lambda x: pair_sigmoid(e1, e2, x, y, cfg.alpha), f)))
            n += 1
        for _ in range(20):
            cbs = [ClassificationBatch(_unit_rows(rng, 5, d), _unit_rows(rng, 1, d)[0], cfg.T) for _ in range(2)]
            ris = [RankBatchItem(*_unit_rows(rng, 3, d), int(rng.choice([-1, 1])), cfg.alpha) for _ in range(3)]
            _, grads = combined_loss(cbs, ris, cfg)

            def total(protos0=None, f0=None):
                l1 = np.mean([softmax_nll(protos0 if (k == 0 and protos0 is not None) else b.prototypes,
                                          b.centroid, cfg.T) for k, b in enumerate(cbs)])
                l2 = np.mean([pair_sigmoid(r.e1, r.e2, f0 if (k == 0 and f0 is not None) else r.f, r.y, cfg.alpha)
                              for k, r in enumerate(ris)])
                return l1 + cfg.lam * l2

            worst = max(worst,
                        rel_error(grads.classification[0].prototypes,
                                  central_diff(lambda p: total(protos0=p), cbs[0].prototypes)),
                        rel_error(grads.ranking[0].f, central_diff(lambda x: total(f0=x), ris[0].f)))
            n += 1
        n_ent = 14 if d == 2 else 20
        for k in range(20):
            cfg_w = SynthWorldConfig(d=max(d, 8), n_entities=n_ent, n_features=4, latent_dim=min(3, max(d, 8) // 2),
                                     seed=int(rng.integers(1 << 30)))
            world = synth_world(cfg_w)
            if d == 2:
                # a genuinely 2-D store: random unit vectors with the world's item structure
                store = EmbeddingStore()
                for i in world.store.ids():
                    store.add(i, _unit_rows(rng, 1, 2)[0])
            else:
                store = world.store
            dim = store.dim
            items = world.class_items
            pairs = world.pairs_for(["f0", "f1"], max_pairs=5, seed=k)
            W = np.eye(dim) + 0.3 * rng.standard_normal((dim, dim))
            _, grad = TrainingProblem(items, pairs, store).loss_and_grad(AlignmentAdapter(W), cfg)
            idx = [divmod(int(j), dim) for j in rng.choice(dim * dim, size=min(dim * dim, 24), replace=False)]
            num = []
            for i, j in idx:
                def at(x, i=i, j=j):
                    Wp = W.copy()
                    Wp[i, j] = x[0]
                    return _oracle_W_loss(Wp, items, pairs, store, cfg)
                num.append(central_diff(at, [W[i, j]])[0])
            worst = max(worst, rel_error([grad[i, j] for i, j in idx], num))
            n += 1
        counts[d] = n
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and min(counts.values()) >= 100 and elapsed < 10
    report(3, "Gradient suite", ok,
           f"max rel error {worst:.1e} over {sum(counts.values())} instances "
           f"({', '.join(f'd={d}: {c}' for d, c in counts.items())}) in {elapsed:.1f}s")


def test_4_procrustes_suite():
    t0 = time.perf_counter()
    worst_entry = worst_orth = 0.0
    beaten = True
    rng = np.random.default_rng(4)
    for d in (4, 16):
        for rep in range(5):
            P = rng.standard_normal((32, d))
            assert np.linalg.matrix_rank(P) == d
            R = random_orthogonal(d, 100 * d + rep)
            C = P @ R
            W = procrustes(P, C)
            worst_entry = max(worst_entry, float(np.max(np.abs(W - R))))
            worst_orth = max(worst_orth, float(np.linalg.norm(W.T @ W - np.eye(d))))
            # probes: a noisy target so the optimum is not trivially zero
            Cn = C + 0.3 * rng.standard_normal(C.shape)
            Wn = procrustes(P, Cn)
            res = np.linalg.norm(P @ Wn - Cn)
            for s in range(1000 if rep == 0 else 100):
                if np.linalg.norm(P @ random_orthogonal(d, 7919 * s + rep) - Cn) < res - 1e-8:
                    beaten = False
    elapsed = time.perf_counter() - t0
    ok = worst_entry <= 1e-6 and worst_orth <= 1e-8 and beaten and elapsed < 5
    report(4, "Procrustes suite", ok,
           f"max |W-R|={worst_entry:.1e}, max ||W'W-I||={worst_orth:.1e}, optimal vs probes: {beaten}; "
           f"{elapsed:.2f}s")


def _held_out_accuracy(world, features, adapter):
    accs = []
    for f in features:
        pairs = world.pairs_for([f])
        proto = next(p for p in world.prototypes if p.feature_id == f)
        direction = prototype_direction(proto, world.store, adapter)
        scores = dict(zip(world.entity_ids, score_ids(world.entity_ids, direction, world.store, adapter)))
        accs.append(pairwise_accuracy(pairs, scores)[0])
    return float(np.mean(accs)), accs


def test_5_subspace_phenomenon_end_to_end():
    t0 = time.perf_counter()
    world = synth_world(SynthWorldConfig(d=64, n_entities=40, n_features=6, noise_sigma=0.05,
                                         hidden_map="orthogonal", seed=7))
    train_f, held_f = ["f0", "f1", "f2", "f3"], ["f4", "f5"]
    pre, pre_each = _held_out_accuracy(world, held_f, None)

    items = world.items_for(train_f)
    pairs = world.pairs_for(train_f)
    adapter, trace = train(init_adapter(64), items, pairs, world.store, TrainConfig(mode="class+rank-perc"))
    trained, trained_each = _held_out_accuracy(world, held_f, adapter)

    P = world.store.matrix([it.target for it in items])
    C = np.array([world.store.matrix(it.examples).mean(axis=0) for it in items])
    proc, proc_each = _held_out_accuracy(world, held_f, procrustes_adapter(P, C))
    elapsed = time.perf_counter() - t0
    ok = 0.0 <= pre <= 0.55 and trained >= 0.90 and proc >= 0.85 and elapsed < 60
    report(5, "Subspace mismatch end-to-end", ok,
           f"(a) pre-alignment {pre:.3f} {np.round(pre_each, 3).tolist()}; "
           f"(b) class+rank-perc {trained:.3f} {np.round(trained_each, 3).tolist()} after {len(trace)} epochs; "
           f"(c) Procrustes {proc:.3f} {np.round(proc_each, 3).tolist()}; {elapsed:.1f}s")


def test_6_leave_one_out_audit():
    t0 = time.perf_counter()
    worlds, store = [], EmbeddingStore()
    for k, (name, perceptual) in enumerate([("A", True), ("B", True), ("C", False)]):
        w = synth_world(SynthWorldConfig(d=32, n_entities=24, n_features=4, latent_dim=4, seed=60 + k,
                                         prefix=f"{name}_"))
        for i in w.store.ids():
            store.add(i, w.store[i], w.store.text(i))
        worlds.append((name, perceptual, w))
    datasets = [w.dataset(name, perceptual) for name, perceptual, w in worlds]
    class_items = [it for _, _, w in worlds for it in w.class_items]
    tags = {name: perceptual for name, perceptual, _ in worlds}

    modes = ["pretrained", "classification", "rank-perc", "rank-full", "class+rank-perc", "class+rank-full"]
    runs = 0
    ok = True
    for mode in modes:
        for rep in leave_one_out(datasets, mode, store, class_items, TrainConfig(epochs=20), max_pairs=60):
            runs += 1
            sources = rep.audit[0].split("train_datasets=")[1].split()[0]
            sources = [] if sources == "-" else sources.split(",")
            ok &= "overlap=0" in rep.audit[0] and rep.audit[-1].endswith("exclusion=PASS")
            ok &= rep.dataset not in sources
            if mode.endswith("rank-perc"):
                ok &= all(tags[s] for s in sources)
                ok &= any("perceptual_only=True" in line for line in rep.audit)
            if mode.endswith("rank-full"):
                ok &= sorted(sources) == sorted(set(tags) - {rep.dataset})
    elapsed = time.perf_counter() - t0
    ok = ok and runs == 18 and elapsed < 30
    report(6, "Leave-one-out audit", ok,
           f"{runs} held-out runs over {len(modes)} modes, empty train/eval intersection and perceptual-only "
           f"rank-perc sources: {ok}; {elapsed:.1f}s")


def _bytes(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def test_7_determinism(tmp_path):
    for run in ("a", "b"):
        assert main(["synth", "--seed", "5", "--out", str(tmp_path / f"synth_{run}")]) == 0
    synth_same = _bytes(tmp_path / "synth_a") == _bytes(tmp_path / "synth_b")
    src = tmp_path / "synth_a"
    for run in ("a", "b"):
        assert main(["train", "--class", str(src / "classification.json"), "--rank", str(src / "pairs.csv"),
                     "--emb", str(src / "embeddings.jsonl"), "--seed", "5", "--epochs", "10",
                     "--out", str(tmp_path / f"train_{run}.json")]) == 0
    train_same = ((tmp_path / "train_a.json").read_bytes() == (tmp_path / "train_b.json").read_bytes()
                  and (tmp_path / "train_a.trace.csv").read_bytes() == (tmp_path / "train_b.trace.csv").read_bytes())
    report(7, "Determinism", synth_same and train_same,
           f"synth outputs identical: {synth_same}; train adapter + trace identical: {train_same}")


def test_8_byte_exact_templates():
    prompt = eol_prompt("food item banana")
    verbal = verbalize_entity("banana", "food item")
    expected = b"The description of the term \x27food item banana\x27 in one word is"
    ok = prompt.encode("utf-8") == expected and verbal == "food item banana"
    report(8, "Byte-exact templates", ok, f"{prompt!r}; {verbal!r}")


def _exact_r(xs, ys):
    xs, ys = [Fraction(x) for x in xs], [Fraction(y) for y in ys]
    mx, my = sum(xs) / len(xs), sum(ys) / len(ys)
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return float(sxy) / math.sqrt(float(sxx * syy))


def test_9_statistics_correctness():
    fixed = [((1, 2, 3), (2, 4, 7)), ((1, 2, 3, 4), (4, 3, 2, 1)), ((1, 0, -1, 2, 5), (2, 1, 0, 0, 3))]
    hand = [15 / math.sqrt(228), -1.0, _exact_r(*fixed[2])]
    fixed_err = max(abs(pearson(x, y) - h) for (x, y), h in zip(fixed, hand))
    rng = np.random.default_rng(9)
    affine_err = 0.0
    for _ in range(1000):
        n = int(rng.integers(3, 50))
        x, y = rng.standard_normal(n), rng.standard_normal(n)
        a, c = rng.uniform(0.01, 100, size=2)
        b, d = rng.uniform(-100, 100, size=2)
        affine_err = max(affine_err, abs(pearson(a * x + b, c * y + d) - pearson(x, y)))
    ok = fixed_err <= 1e-12 and affine_err <= 1e-12
    report(9, "Statistics correctness", ok,
           f"fixed-vector max error {fixed_err:.1e}; affine invariance max |dr| {affine_err:.1e} over 1000")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failed = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_")):
        try:
            if "tmp_path" in fn.__code__.co_varnames[: fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as tmp:
                    fn(Path(tmp))
            else:
                fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
