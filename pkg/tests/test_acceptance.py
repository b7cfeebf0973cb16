"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run just this file with ``pytest tests/test_acceptance.py -v -s`` or
``python tests/test_acceptance.py``.
"""

import math
import sys
import time
from itertools import permutations

import numpy as np
import pytest

from bpldag.bpl import (
    BplParams,
    edge_covariance,
    expected_edge_count_and_grad,
    expected_edge_matrix,
    pl_score,
    prob_joint_precedes,
    prob_precedes,
    sample_dag,
    sample_dags,
    sample_permutation,
)
from bpldag.cli import main as cli_main
from bpldag.conditionals import LinearGaussian
from bpldag.estimators import analytic_gradient, analytic_score, reinforce_gradient, reinforce_step, variance_report
from bpldag.graph import evaluate_graph, is_dag
from bpldag.objective import InterventionalDataset, interventional_score
from bpldag.oracle import exact_edge_moments, exact_expected_score, exact_gradient, exact_pair_stats
from bpldag.synth import generate, noisy_target, ordering_reward, run_ordering_task, sample_er_dag
from bpldag.trainer import Adam, TrainConfig, extract_graph, fit

from conftest import random_batch, random_linear, random_params
from test_estimators import flatten, fd_analytic


def verdict(capsys, number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number:>2d}  {title}: {detail}"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def test_criterion_01_closed_forms(capsys):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for n in (3, 4, 5):
        for _ in range(50):
            params = random_params(n, rng, forbid_frac=0.1, scale=2.0)
            P2, P3, _ = exact_pair_stats(params.theta)
            mean, cov = exact_edge_moments(params)
            worst = max(worst, np.max(np.abs(expected_edge_matrix(params) - mean)))
            for i, j, k in permutations(range(n), 3):
                worst = max(worst,
                            abs(prob_precedes(params.theta, i, j) - P2[i, j]),
                            abs(prob_joint_precedes(params.theta, i, j, k) - P3[i, j, k]),
                            abs(edge_covariance(params, i, k, j) - cov[i, k, j]))
    seconds = time.perf_counter() - start
    verdict(capsys, 1, "closed forms vs enumeration", worst <= 1e-12 and seconds < 60,
            f"max abs error {worst:.2e} (<= 1e-12), {seconds:.1f}s (< 60s)")


def test_criterion_02_expected_score(capsys):
    rng = np.random.default_rng(202)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        batch = random_batch(4, 8, rng)
        params = random_params(4, rng, forbid_frac=0.1)
        model = random_linear(4, rng)
        worst = max(worst, abs(analytic_score(batch, params, model) - exact_expected_score(params, model, batch)))

    batch = random_batch(10, 8, rng)
    params = random_params(10, rng)
    model = random_linear(10, rng)
    values = np.concatenate([interventional_score(batch, sample_dags(params, rng, 10_000)[2], model)
                             for _ in range(10)])
    se = values.std(ddof=1) / math.sqrt(values.size)
    gap = abs(values.mean() - analytic_score(batch, params, model))
    seconds = time.perf_counter() - start
    ok = worst <= 1e-8 and gap <= 3 * se and seconds < 300
    verdict(capsys, 2, "analytic expected score", ok,
            f"enumeration error {worst:.1e} (<= 1e-8); n=10 MC gap {gap / se:.2f} SE (<= 3); {seconds:.1f}s")


def test_criterion_03_score_identities(capsys):
    rng = np.random.default_rng(303)
    worst_sum, worst_norm, worst_fisher = 0.0, -np.inf, -np.inf
    for n in (2, 4, 8):
        for scale in (0.0, 1.0, 3.0):
            theta = rng.normal(scale=scale, size=n)
            perms = sample_permutation(theta, rng, 100_000)
            scores = pl_score(theta, perms)
            sq = np.sum(scores**2, axis=1)
            worst_sum = max(worst_sum, np.max(np.abs(scores.sum(axis=1))))
            worst_norm = max(worst_norm, np.max(sq) - n * (n - 1))
            worst_fisher = max(worst_fisher, sq.mean() / (n - 1))
    ok = worst_sum <= 1e-12 and worst_norm <= 0 and worst_fisher <= 1.01
    verdict(capsys, 3, "score-function identities", ok,
            f"max |sum| {worst_sum:.1e}; max ||s||^2 - n(n-1) = {worst_norm:.2f} (<= 0); "
            f"max E||s||^2/(n-1) = {worst_fisher:.4f} (<= 1.01)")


def test_criterion_04_unbiased_estimators(capsys):
    rng = np.random.default_rng(404)
    batch = random_batch(3, 6, rng)
    params = random_params(3, rng, scale=0.7)
    model = random_linear(3, rng)
    exact = exact_gradient(params, model, batch)
    exact_vec = flatten(exact.d_theta, exact.d_edge_logits, exact.d_model)
    total = np.zeros_like(exact_vec)
    total_sq = np.zeros_like(exact_vec)
    draws = 100_000
    for _ in range(draws):
        b = reinforce_step(batch, params, model, K=4, lam=1.0, rng=rng)
        v = flatten(b.d_theta, b.d_edge_logits, b.d_model)
        total += v
        total_sq += v * v
    mean = total / draws
    se = np.sqrt(np.maximum(total_sq / draws - mean**2, 0.0) * draws / (draws - 1) / draws)
    # the exact gradient above has no sparsity term; add it back
    _, c_theta, c_edges = expected_edge_count_and_grad(params)
    exact_vec = exact_vec - flatten(c_theta, c_edges, {k: np.zeros_like(v) for k, v in exact.d_model.items()})
    z = np.abs(mean - exact_vec) / np.where(se > 0, se, np.inf)
    exact_coords = se == 0
    within = np.all(z[~exact_coords] <= 3) and np.allclose(mean[exact_coords], exact_vec[exact_coords], atol=1e-12)

    rel = 0.0
    for _ in range(3):
        b2 = random_batch(6, 10, rng)
        p2 = random_params(6, rng, forbid_frac=0.2)
        m2 = random_linear(6, rng)
        g = analytic_gradient(b2, p2, m2, lam=0.0)
        fd = fd_analytic(b2, p2, m2)
        rel = max(rel, np.max(np.abs(flatten(g.d_theta, g.d_edge_logits, g.d_model) - fd))
                  / max(1.0, np.max(np.abs(fd))))
    verdict(capsys, 4, "estimator unbiasedness", within and rel <= 1e-5,
            f"REINFORCE max |z| {np.max(z[~exact_coords]):.2f} over {int((~exact_coords).sum())} coords (<= 3); "
            f"analytic vs finite differences rel {rel:.1e} (<= 1e-5)")


def test_criterion_05_variance_bound(capsys):
    rng = np.random.default_rng(505)
    violations, checked = 0, 0
    tightest = 0.0
    for n in (10, 50):
        _, data = generate(n, "linear", degree=1.0, seed=n, n_obs=2000, n_int_per_var=50)
        # a zero-weight model scores every graph alike, so draw weights to make rewards vary
        model = random_linear(n, rng)
        params = BplParams.init(n)
        opt = Adam(lr=0.01)
        for _ in range(500):
            batch = data.subset(rng.integers(0, data.m, size=64))
            d_theta, d_edges, diag, _ = reinforce_gradient(
                params, lambda A: interventional_score(batch, A, model), 50, rng)
            checked += 1
            violations += diag["grad_var"] > diag["var_bound"]
            if diag["var_bound"] > 0:
                tightest = max(tightest, diag["grad_var"] / diag["var_bound"])
            opt.step({"theta": params.theta, "edge_logits": params.edge_logits},
                     {"theta": d_theta, "edge_logits": d_edges})
    verdict(capsys, 5, "variance bound", violations == 0,
            f"{violations} violations in {checked} steps; largest variance/bound {tightest:.3f}")


def test_criterion_06_baseline_variance(capsys):
    start = time.perf_counter()
    n = 50
    dag = sample_er_dag(n, 1.0, np.random.default_rng(606))
    rng = np.random.default_rng(607)
    K_values = [10, 50, 100, 200]
    rows = variance_report(BplParams.init(n), lambda step, r: ordering_reward(noisy_target(dag, 0.3, r)),
                           K_values, 10, rng, steps=200, train_K=100, lr=0.01, record_every=10)
    late = [r for r in rows if r["step"] >= 100]
    ratios = []
    for step in sorted({r["step"] for r in late}):
        for K in K_values:
            pair = {r["baseline_flag"]: r["trace_variance"] for r in late if r["step"] == step and r["K"] == K}
            ratios.append(pair[0] / pair[1])
    curves = {flag: [np.mean([r["trace_variance"] for r in late if r["K"] == K and r["baseline_flag"] == flag])
                     for K in K_values] for flag in (0, 1)}
    monotone = all(all(b <= a for a, b in zip(c, c[1:])) for c in curves.values())
    seconds = time.perf_counter() - start
    ok = min(ratios) >= 10 and monotone and seconds < 600
    verdict(capsys, 6, "baseline variance reduction", ok,
            f"min no-baseline/baseline ratio {min(ratios):.0f}x (>= 10x); baseline variance by K "
            f"{[f'{v:.2e}' for v in curves[1]]} monotone={monotone}; {seconds:.0f}s")


def test_criterion_07_structure_recovery(capsys):
    start = time.perf_counter()
    shds, f1s = [], []
    for seed in range(5):
        truth, data = generate(10, "linear", degree=1.0, seed=seed)
        result = fit(data, TrainConfig(seed=seed))
        report = evaluate_graph(result.graph, truth.dag)
        shds.append(report.shd)
        f1s.append(report.f1)
    seconds = time.perf_counter() - start
    ok = np.mean(shds) <= 5 and np.mean(f1s) >= 0.7 and seconds < 900
    verdict(capsys, 7, "structure recovery ER(10, e=1)", ok,
            f"SHD {shds} mean {np.mean(shds):.1f} (<= 5); F1 mean {np.mean(f1s):.2f} (>= 0.7); {seconds:.0f}s")


def test_criterion_08_ordering_convergence(capsys):
    start = time.perf_counter()
    best = {}
    for estimator in ("analytic", "reinforce"):
        result = run_ordering_task(100, estimator=estimator, seed=8)
        best[estimator] = max(result["tau"])
    seconds = time.perf_counter() - start
    ok = min(best.values()) >= 0.95 and seconds < 600
    verdict(capsys, 8, "ordering recovery n=100", ok,
            f"best tau analytic {best['analytic']:.3f}, reinforce {best['reinforce']:.3f} (>= 0.95); {seconds:.0f}s")


def test_criterion_09_acyclic_by_construction(capsys):
    rng = np.random.default_rng(909)
    bad_samples = bad_graphs = 0
    for _ in range(10_000):
        n = int(rng.integers(2, 51))
        params = random_params(n, rng, scale=3.0)
        params.edge_logits += rng.normal(scale=3.0)
        bad_samples += not is_dag(sample_dag(params, rng).adjacency)
        bad_graphs += not is_dag(extract_graph(params, 0.5))
    verdict(capsys, 9, "acyclicity by construction", bad_samples == 0 and bad_graphs == 0,
            f"{bad_samples} cyclic samples, {bad_graphs} cyclic extracted graphs out of 10^4 each")


def _analytic_step_seconds(n, reps=5):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((64, n))
    data = InterventionalDataset(X, np.arange(64) % (n + 1), {0: ()} | {j + 1: (j,) for j in range(n)})
    params = BplParams.init(n, theta=rng.normal(size=n))
    model = LinearGaussian.init(n)
    model.params["weights"][:] = rng.normal(scale=0.1, size=(n, n))
    analytic_gradient(data, params, model, subsample=True, rng=rng)
    times = []
    for _ in range(reps):
        t = time.perf_counter()
        analytic_gradient(data, params, model, subsample=True, rng=rng)
        times.append(time.perf_counter() - t)
    return min(times)


def test_criterion_10_scaling(capsys):
    small, large = _analytic_step_seconds(200), _analytic_step_seconds(400)
    ratio = large / small
    verdict(capsys, 10, "analytic per-step scaling", ratio <= 6,
            f"{small * 1e3:.1f} ms at n=200, {large * 1e3:.1f} ms at n=400, ratio {ratio:.2f} (<= 6)")


def test_criterion_11_determinism(capsys, tmp_path):
    def run(tag):
        data_dir, fit_dir = tmp_path / tag / "data", tmp_path / tag / "fit"
        common = ["--seed", "11", "--threads", "1"]
        assert cli_main(["generate", "--out", str(data_dir), "--n", "5", "--n-obs", "400", "--n-int", "40",
                         "--p-mislabel", "0.1", "--alpha", "0.7"] + common) == 0
        assert cli_main(["fit", "--data", str(data_dir), "--out", str(fit_dir), "--steps", "40",
                         "--mc-samples", "20", "--val-every", "10"] + common) == 0
        files = {}
        for d in (data_dir, fit_dir):
            for p in sorted(d.iterdir()):
                if p.name != "manifest.json":
                    files[f"{d.name}/{p.name}"] = p.read_bytes()
        return files

    first, second = run("a"), run("b")
    same = first == second
    verdict(capsys, 11, "byte-identical reruns", same,
            f"{len(first)} output files compared, identical={same}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
