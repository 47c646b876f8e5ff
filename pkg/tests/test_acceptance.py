"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import gc
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, random_scenes
from regiondrosonet.datasets import Perturbation, SynthSpec, generate_synthetic
from regiondrosonet.drosonet import DrosoNet, DrosoNetConfig, loss_and_grad
from regiondrosonet.ensemble import Ensemble, EnsembleConfig, load, save
from regiondrosonet.evaluation import MatchRecord, auc, evaluate, extended_precision, pr_curve, time_inference
from regiondrosonet.partition import PartitionPlan, partition_count
from regiondrosonet.voting import vote
from test_drosonet import numeric_grad
from test_voting import oracle


def report(name, ok, detail, elapsed, limit_s):
    in_time = elapsed < limit_s
    verdict = "PASS" if ok and in_time else "FAIL"
    line = f"{verdict}  {name}: {detail} [{elapsed:.1f}s, limit {limit_s:.0f}s]"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
    assert in_time, line


def top1(records):
    return sum(r.correct for r in records) / len(records)


class TestAcceptance:
    def test_structural_constants(self):
        start = time.perf_counter()
        default = EnsembleConfig(drosonet=DrosoNetConfig(d_hidden=2, epochs=1))
        built = Ensemble.build(default, 2)
        fig3 = partition_count(PartitionPlan.from_pairs([(2, 1), (1, 3)]))
        ok = (default.region_count, built.total_nets, len(built.groups), fig3) == (41, 82, 41, 5)
        report("structural constants", ok,
               f"P={default.region_count} T={built.total_nets} fig3 P={fig3}", time.perf_counter() - start, 1)

    def test_sparsity(self):
        start = time.perf_counter()
        rng = np.random.default_rng(2024)
        expected_ones = math.floor(0.1 * 2048 + 0.5)
        bad = 0
        for seed in range(100):
            d_hidden = int(rng.choice([64, 256, 2048]))
            net = DrosoNet.initialize(DrosoNetConfig(d_hidden=d_hidden, seed=seed * 7919 + 1))
            bad += int((net.projection_matrix().sum(axis=0) != expected_ones).any())
            for x in (rng.integers(0, 256, 2048) / 255.0, rng.random(2048)):
                bad += int(net.hidden(x).sum() != d_hidden // 2)
        report("sparsity and binarization", bad == 0 and expected_ones == 205,
               f"100 seeds, 200 inputs, {bad} violations", time.perf_counter() - start, 30)

    def test_voting_oracle(self):
        start = time.perf_counter()
        rng = np.random.default_rng(7)
        mismatches = 0
        for i in range(1000):
            n, t, k = int(rng.integers(1, 9)), int(rng.integers(1, 6)), int(rng.integers(1, 5))
            # every other instance is quantized so ties are common
            scores = rng.integers(0, 5, (t, n)) / 4.0 if i % 2 else rng.dirichlet(np.ones(n), t)
            m, conf = oracle(scores.tolist(), k)
            got = vote(scores, k)
            mismatches += int(got.place != m or abs(got.confidence - conf) > 1e-12)
        report("voting oracle equivalence", mismatches == 0, f"1000 instances, {mismatches} mismatches",
               time.perf_counter() - start, 10)

    def test_gradient(self):
        start = time.perf_counter()
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(seed)
            hidden = (rng.random((3, 8)) < 0.5).astype(np.float64)
            w = rng.normal(scale=0.5, size=(8, 3))
            b = rng.normal(scale=0.5, size=3)
            targets = np.arange(3)
            _, g_w, g_b = loss_and_grad(hidden, w, b, targets)
            for analytic, param in ((g_w, w), (g_b, b)):
                numeric = numeric_grad(lambda: loss_and_grad(hidden, w, b, targets)[0], param)
                rel = np.linalg.norm(analytic - numeric) / (np.linalg.norm(analytic) + np.linalg.norm(numeric))
                worst = max(worst, rel)
        report("gradient check", worst < 1e-4, f"worst relative error {worst:.2e}", time.perf_counter() - start, 5)

    @pytest.mark.slow
    def test_memorization(self):
        start = time.perf_counter()
        ref, qry, gt = generate_synthetic(SynthSpec(n_places=100, seed=0))
        model = Ensemble.build(EnsembleConfig(), 100).train_all(ref.images)
        result = evaluate(model, qry.images, gt, per_region=False)
        acc = top1(result.records)
        ok = abs(result.metrics.auc - 1.0) <= 1e-9 and acc == 1.0
        report("end-to-end memorization", ok, f"AUC={result.metrics.auc:.12f} top1={acc:.3f}",
               time.perf_counter() - start, 300)

    @pytest.mark.slow
    def test_region_specialization(self):
        start = time.perf_counter()
        pert = Perturbation(brightness_delta=25, shift=4, noise_sigma=10)
        whole = PartitionPlan.from_pairs([(1, 1)])
        margins = []
        for seed in range(3):
            ref, qry, gt = generate_synthetic(SynthSpec(n_places=200, seed=seed, perturbation=pert))
            aucs = []
            for cfg in (EnsembleConfig(master_seed=seed),
                        EnsembleConfig(grids=whole, z_per_region=82, master_seed=seed)):
                model = Ensemble.build(cfg, 200).train_all(ref.images)
                aucs.append(evaluate(model, qry.images, gt, per_region=False).metrics.auc)
                del model
                gc.collect()
            margins.append(aucs[0] - aucs[1])
            print(f"  seed {seed}: multi-grid AUC {aucs[0]:.4f}, whole-image AUC {aucs[1]:.4f}")
        report("region specialization", all(m >= 0 for m in margins),
               "margins " + ", ".join(f"{m:+.4f}" for m in margins), time.perf_counter() - start, 1200)

    @pytest.mark.slow
    def test_blank_region_diagnostics(self):
        start = time.perf_counter()
        ref, qry, gt = generate_synthetic(
            SynthSpec(n_places=100, seed=11, perturbation=Perturbation(10, 2, 6)))
        # 4x4 cell (1, 2) of a 128x64 frame
        for img in ref.images + qry.images:
            img[16:32, 64:96] = 128
        model = Ensemble.build(EnsembleConfig(master_seed=11), 100).train_all(ref.images)
        result = evaluate(model, qry.images, gt)
        labels = model.plan.region_labels()
        grid_idx = [p for p, (g, _, _) in enumerate(labels) if (g.rows, g.cols) == (4, 4)]
        blank = next(p for p in grid_idx if labels[p][1:] == (1, 2))
        aucs = {p: result.region_metrics[p].auc for p in grid_idx}
        others = min(v for p, v in aucs.items() if p != blank)
        ok = aucs[blank] < others
        report("per-region diagnostics", ok,
               f"blank cell AUC {aucs[blank]:.4f}, lowest other 4x4 cell {others:.4f}",
               time.perf_counter() - start, 600)

    @pytest.mark.slow
    def test_latency(self):
        start = time.perf_counter()
        ref, qry, _ = generate_synthetic(
            SynthSpec(n_places=1000, seed=5, perturbation=Perturbation(10, 2, 5)))
        # latency does not depend on weight values, so one epoch suffices
        cfg = EnsembleConfig(drosonet=DrosoNetConfig(epochs=1))
        model = Ensemble.build(cfg, 1000).train_all(ref.images)
        stats = time_inference(model.match, qry.images[:200], warmup=3)
        del model
        gc.collect()
        report("inference latency", stats.median_ms <= 50.0,
               f"N=1000 T=82 median {stats.median_ms:.1f} ms, mean {stats.mean_ms:.1f} ms, "
               f"p99 {stats.p99_ms:.1f} ms over {stats.samples} queries", time.perf_counter() - start, 120)

    def test_metric_fixture(self):
        start = time.perf_counter()
        recs = [MatchRecord(0, 0, 0.9, True), MatchRecord(1, 1, 0.8, False), MatchRecord(2, 2, 0.7, True)]
        points = pr_curve(recs)
        ep, p_r0, r_p100 = extended_precision(points)
        expected = [(Fraction(1, 3), Fraction(1)), (Fraction(1, 3), Fraction(1, 2)), (Fraction(2, 3), Fraction(2, 3))]
        exact_auc = Fraction(1, 3) + Fraction(1, 3) * (Fraction(1, 2) + Fraction(2, 3)) / 2
        ok = (points == [(float(r), float(p)) for r, p in expected]
              and ep == float(Fraction(2, 3)) and p_r0 == 1.0 and r_p100 == float(Fraction(1, 3))
              and abs(auc(points) - float(exact_auc)) <= 1e-15)
        report("metric fixtures", ok, f"points={[(round(r, 4), round(p, 4)) for r, p in points]} "
               f"ep={ep!r} auc={auc(points)!r} vs 19/36={float(exact_auc)!r}", time.perf_counter() - start, 1)

    def test_serialization(self, tmp_path):
        start = time.perf_counter()
        images = random_scenes(10, 128, 64, seed=9)
        cfg = EnsembleConfig(drosonet=DrosoNetConfig(d_hidden=128, epochs=20), master_seed=123)
        model = Ensemble.build(cfg, 10).train_all(images)
        before = [model.infer(img) for img in images]
        save(model, tmp_path / "model.rdn")
        loaded = load(tmp_path / "model.rdn")
        same_infer = all(np.array_equal(loaded.infer(img), s) for img, s in zip(images, before))
        save(loaded, tmp_path / "again.rdn")
        same_bytes = (tmp_path / "model.rdn").read_bytes() == (tmp_path / "again.rdn").read_bytes()
        ok = loaded.equals(model) and same_infer and same_bytes
        report("serialization round trip", ok,
               f"T={loaded.total_nets} bit-identical={loaded.equals(model)} infer-equal={same_infer}",
               time.perf_counter() - start, 60)
