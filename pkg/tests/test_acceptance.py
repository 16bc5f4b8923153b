"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The heavyweight criteria
drive the real CLI commands at their production sizes; determinism checks use
reduced sizes (the property is size-independent).
"""

from __future__ import annotations

import csv
import json
import math
import time
from pathlib import Path

import numpy as np
from click.testing import CliRunner

from memex.cli import main
from memex.core import (
    MaskPattern,
    RecoveryOrder,
    default_vocab,
    make_linear_grid,
)
from memex.corpora import assumption_violating_pair, chain_pair, random_instance, window_corpus
from memex.engine import arm_generate
from memex.extraction import (
    estimate_pz,
    gaussian_eps_approx,
    gaussian_fit_sup_distance,
    hamming_stats,
    hamming_trials,
    passes_normality_check,
    required_queries,
    success_probability,
)
from memex.oracle import (
    canonical_refinement_chain,
    check_assumption1,
    check_proposition1,
    check_theorem1,
    enumerate_orders_pz,
    log_exact_pz_fixed_partition,
)
from memex.pii import EMAIL, PHONE, ByteTokenizer, build_records, scan
from memex.samplers import SamplerConfig, TokenRule, substream
from memex.toymodel import corpus_from_rows, fit

import test_pii as pii_fixtures


def _report(criterion: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {criterion:02d} {name}: {status} {detail}".rstrip())
    assert ok, f"criterion {criterion} ({name}) failed: {detail}"


def _confusable_instance(seed: int):
    """Base with in-mask two-flip neighbors so recovery order matters."""
    gen = substream(seed, 900)
    k = int(gen.integers(4, 8))
    length = int(gen.integers(8, 11))
    vocab = default_vocab(k)
    base = [int(t) for t in gen.integers(0, k, size=length)]
    m_size = int(gen.integers(3, 7))
    mask_positions = sorted(int(p) for p in gen.choice(length, size=m_size, replace=False))
    rows, weights = [base], [1.0]
    for _ in range(int(gen.integers(1, 4))):
        row = list(base)
        flips = gen.choice(mask_positions, size=min(2, m_size), replace=False)
        for pos in flips:
            row[pos] = (row[pos] + 1 + int(gen.integers(0, k - 1))) % k
        rows.append(row)
        weights.append(float(gen.uniform(1.0, 4.0)))
    model = fit(corpus_from_rows(rows, vocab, weights), float(gen.uniform(0.08, 0.3)))
    z = model.corpus.sequences[0]
    mask = MaskPattern(frozenset(mask_positions), length)
    return model, z, mask, gen


def test_criterion_1_eq8_consistency():
    start = time.time()
    sampler = SamplerConfig("random_uniform", TokenRule.gumbel(1.0), seed=101)
    worst = 0.0
    for i in range(20):
        model, z, mask, gen = _confusable_instance(1000 + i)
        n_choices = [1, 2, 3, len(mask)]
        grid = make_linear_grid(n_choices[i % 4])
        est = estimate_pz(model, z, mask, grid, sampler, 65536, rng=2000 + i)
        exact = enumerate_orders_pz(model, z, mask, grid, "random_uniform")
        sigma = abs(est.mean - exact) / max(est.stderr, 1e-12)
        if est.stderr == 0:
            assert abs(est.mean - exact) < 1e-9
        else:
            worst = max(worst, sigma)
            assert sigma <= 3, (i, est.mean, exact, est.stderr)
    elapsed = time.time() - start
    _report(
        1,
        "eq8-consistency",
        elapsed < 300,
        f"(20 instances, worst gap {worst:.2f} sigma, {elapsed:.0f}s)",
    )


def test_criterion_2_scatter_agreement(tmp_path):
    runner = CliRunner()
    result = runner.invoke(
        main, ["scatter-pz", "--seed", "11", "--out-dir", str(tmp_path / "scatter")]
    )
    assert result.exit_code == 0, result.output
    rows = list(csv.DictReader(open(tmp_path / "scatter" / "scatter_pz.csv")))
    emp = np.array([float(r["empirical_pz"]) for r in rows])
    emp_se = np.array([float(r["empirical_stderr"]) for r in rows])
    theo = np.array([float(r["theoretical_pz"]) for r in rows])
    theo_se = np.array([float(r["theoretical_stderr"]) for r in rows])
    z = np.abs(emp - theo) / np.hypot(emp_se, theo_se)
    within = float(np.mean(z <= 3))
    corr = float(np.corrcoef(np.log(emp), np.log(theo))[0, 1])
    ok = len(rows) >= 50 and within >= 0.95 and corr >= 0.97
    _report(
        2,
        "empirical-vs-theoretical",
        ok,
        f"({len(rows)} examples, {within:.1%} within 3 sigma, log-log corr {corr:.4f})",
    )


def test_criterion_3_refinement_monotonicity():
    passing = 0
    attempts = 0
    while passing < 100 and attempts < 400:
        seed = 3000 + attempts
        attempts += 1
        multi = attempts % 3 == 0
        corpus, z = random_instance(seed, max_length=6 if multi else 8, multi_component=multi)
        model = fit(corpus, 0.1 + 0.05 * (attempts % 4))
        report = check_assumption1(model, z, max_len=8)
        if not report.holds:
            continue
        gen = substream(seed, 901)
        length = len(z)
        m_size = int(gen.integers(2, min(length, 6) + 1))
        positions = frozenset(int(p) for p in gen.choice(length, size=m_size, replace=False))
        mask = MaskPattern(positions, length)
        for _ in range(2):
            order = RecoveryOrder(tuple(int(p) for p in gen.permutation(sorted(positions))))
            chain = canonical_refinement_chain(order)
            logs = [log_exact_pz_fixed_partition(model, z, mask, order, p) for p in chain]
            assert all(b >= a - 1e-12 for a, b in zip(logs, logs[1:])), (seed, logs)
        passing += 1
    assert passing == 100, f"only {passing} passing instances in {attempts} attempts"

    corpus, probe = assumption_violating_pair()
    model = fit(corpus, 0.2)
    report = check_assumption1(model, probe)
    mask = MaskPattern(frozenset({0, 3}), 4)
    verdict = check_theorem1(model, probe, mask, RecoveryOrder((0, 3)), 2, 1)
    reversal = (
        (not report.holds)
        and verdict.status == "assumption_failed"
        and verdict.log_gap < 0
    )
    _report(
        3,
        "refinement-monotonicity",
        reversal,
        f"(100 passing instances monotone; adversarial reversal gap {verdict.log_gap:.4f})",
    )


def test_criterion_4_sequential_identity():
    sampler = SamplerConfig("greedy_confidence", TokenRule.argmax(), seed=7)
    checked_suffix = 0
    for i in range(50):
        gen = substream(4000 + i, 0)
        if i % 2 == 0:
            # contiguous suffix (prefix-conditioned completion setting)
            corpus, z = random_instance(4100 + i, max_length=8, multi_component=bool(i % 4))
            model = fit(corpus, 0.15)
            length = len(z)
            split = int(gen.integers(1, length))
            mask = MaskPattern(frozenset(range(split, length)), length)
            assert check_proposition1(model, z, mask)
            arm = arm_generate(
                model, z.tokens[:split], z.tokens[split:], sampler, substream(42, i)
            )
            order = RecoveryOrder(tuple(range(split, length)))
            from memex.core import per_token_partition

            diff = log_exact_pz_fixed_partition(
                model, z, mask, order, per_token_partition(order)
            )
            assert math.isclose(arm.log_pz, diff, rel_tol=1e-10, abs_tol=1e-12)
            checked_suffix += 1
        else:
            model, z, mask, _ = _confusable_instance(4200 + i)
            assert check_proposition1(model, z, mask)
    _report(
        4,
        "sequential-limit-identity",
        checked_suffix >= 20,
        f"(50 instances, {checked_suffix} contiguous-suffix)",
    )


def test_criterion_5_step_sweep(tmp_path):
    start = time.time()
    runner = CliRunner()
    result = runner.invoke(
        main, ["sweep-steps", "--seed", "5", "--out-dir", str(tmp_path / "sweep")]
    )
    assert result.exit_code == 0, result.output
    rows = list(csv.DictReader(open(tmp_path / "sweep" / "sweep_steps.csv")))
    medians = {r["steps"]: float(r["median_dlogp"]) for r in rows}
    ordered = [medians[k] for k in ("1", "2", "5", "10", "max")]
    nondecreasing = all(b >= a - 1e-12 for a, b in zip(ordered, ordered[1:]))
    gain = medians["max"] - medians["1"]
    elapsed = time.time() - start
    ok = nondecreasing and gain >= 0.5 and elapsed < 600
    _report(
        5,
        "step-sweep-monotone",
        ok,
        f"(medians {['%.3f' % v for v in ordered]}, max gain {gain:.3f} nats, {elapsed:.0f}s)",
    )


def test_criterion_6_query_budget():
    spot = required_queries(0.5, 0.99)
    assert spot.n == 7
    pz_grid = [1e-6, 1e-5, 1e-4, 1e-3, 0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 0.99]
    p_grid = [0.1, 0.5, 0.9, 0.99]
    checked = 0
    for pz in pz_grid:
        for p in p_grid:
            n = required_queries(pz, p).n
            assert success_probability(pz, n) >= p, (pz, p, n)
            if n > 1:
                assert success_probability(pz, n - 1) < p, (pz, p, n)
            checked += 1
    _report(6, "query-budget-minimality", True, f"({checked} grid points; n(0.5,0.99)=7)")


def test_criterion_7_gaussian_error_fit():
    corpus = window_corpus()
    z = corpus.sequences[0]
    gen = substream(77, 0)
    positions = frozenset(int(p) for p in gen.choice(100, size=20, replace=False))
    mask = MaskPattern(positions, 100)
    sampler = SamplerConfig("random_uniform", TokenRule.gumbel(1.0), seed=9)

    sups, fit_gaps = [], []
    for eta in (0.055, 0.3, 0.52):  # per-token error ~0.05, 0.275, 0.48
        model = fit(corpus, eta)
        d = hamming_trials(model, z, mask, make_linear_grid(5), sampler, 10_000, rng=701)
        stats_full = hamming_stats(d)
        sups.append(gaussian_fit_sup_distance(d, stats_full))
        stats_small = hamming_stats(d[:128])
        lo = max(0, int(math.ceil(stats_full.mu - 2 * stats_full.sigma)))
        hi = int(math.floor(stats_full.mu + 2 * stats_full.sigma))
        fit_gaps.append(
            max(
                abs(gaussian_eps_approx(stats_small, e) - gaussian_eps_approx(stats_full, e))
                for e in range(lo, hi + 1)
            )
        )
    assert all(s <= 0.08 for s in sups), sups
    assert all(g <= 0.05 for g in fit_gaps), fit_gaps

    control_corpus, control_z = chain_pair()
    control_model = fit(control_corpus, 0.1)
    control_mask = MaskPattern(frozenset(range(20)), 20)
    dc = hamming_trials(control_model, control_z, control_mask, "max", sampler, 1500, rng=702)
    control_sup = gaussian_fit_sup_distance(dc)
    ok = not passes_normality_check(dc)
    _report(
        7,
        "gaussian-error-fit",
        ok,
        f"(sup distances {['%.3f' % s for s in sups]}, 128-vs-10k gaps "
        f"{['%.3f' % g for g in fit_gaps]}, control sup {control_sup:.3f})",
    )


def test_criterion_8_train_vs_heldout(tmp_path):
    runner = CliRunner()
    result = runner.invoke(
        main, ["traintest", "--seed", "13", "--out-dir", str(tmp_path / "tt")]
    )
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / "tt" / "traintest_summary.json").read_text())
    ok = summary["p_value_one_sided"] < 0.01 and summary["median_train"] > summary["median_test"]
    _report(
        8,
        "train-dominates-heldout",
        ok,
        f"(one-sided p {summary['p_value_one_sided']:.2e}, "
        f"medians {summary['median_train']:.2f} vs {summary['median_test']:.2f})",
    )


def test_criterion_9_pii_pipeline():
    assert len(pii_fixtures.EMAIL_POSITIVE) >= 20
    assert len(pii_fixtures.EMAIL_NEGATIVE) >= 20
    assert len(pii_fixtures.PHONE_POSITIVE) >= 20
    assert len(pii_fixtures.PHONE_NEGATIVE) >= 20
    for text in pii_fixtures.EMAIL_POSITIVE:
        assert [c for c, _ in scan(text)] == [EMAIL], text
    for text in pii_fixtures.EMAIL_NEGATIVE:
        assert all(c != EMAIL for c, _ in scan(text)), text
    for text in pii_fixtures.PHONE_POSITIVE:
        assert [c for c, _ in scan(text)] == [PHONE], text
    for text in pii_fixtures.PHONE_NEGATIVE:
        assert all(c != PHONE for c, _ in scan(text)), text

    tok = ByteTokenizer()
    short = build_records([("d0", "x" * 40 + " a@b.co end")], tok, 10)
    assert short == []
    tainted = "c@d.ef " + "y" * 95 + " a@b.co end"
    assert all(
        r.category != EMAIL for r in build_records([("d1", tainted)], tok, 10)
    )
    good = build_records([("d2", "x" * 120 + " a@b.co end")], tok, 10)
    assert len(good) == 1 and len(good[0].prefix_tokens) == 100
    _report(9, "pii-pipeline", True, "(84 fixtures exact; prefix rules enforced)")


SMALL_CONFIGS = {
    "scatter-pz": {
        "scatter": {
            "screen_trials": 32,
            "theoretical_trials": 32,
            "empirical_trials": 500,
            "n_examples": 3,
        }
    },
    "sweep-steps": {"sweep": {"n_patterns": 4, "trials": 128, "step_set": [1, "max"]}},
    "np-table": {"np_table": {"trials": 2}},
    "eps-cdf": {"eps_cdf": {"trials": 300, "small_trials": 64}},
    "traintest": {"traintest": {"trials": 16}},
    "verify": {"verify": {"instances": 5, "max_len": 5}},
}

OUTPUT_FILES = {
    "fit-toy": ["model.json"],
    "scatter-pz": ["scatter_pz.csv", "scatter_estimates.csv", "scatter_summary.json"],
    "sweep-steps": ["sweep_steps.csv"],
    "np-table": ["np_table.csv"],
    "eps-cdf": ["eps_cdf.csv", "eps_cdf_summary.json"],
    "traintest": ["traintest.csv", "traintest_summary.json"],
    "verify": ["verify.json"],
}


def test_criterion_10_cli_determinism(tmp_path):
    runner = CliRunner()
    corpus_file = tmp_path / "corpus.txt"
    corpus_file.write_text("0 1 2 3\n1 2 3 0  # weight=2.0\n")

    def run(command: str, out_dir: Path, threads: int) -> dict[str, bytes]:
        args = [command, "--seed", "21", "--out-dir", str(out_dir)]
        if command == "fit-toy":
            args += ["--corpus", str(corpus_file), "--eta", "0.1"]
        else:
            cfg_path = tmp_path / f"{command}.json"
            cfg_path.write_text(json.dumps(SMALL_CONFIGS[command]))
            args += ["--config", str(cfg_path)]
        if command not in ("fit-toy", "verify"):
            args += ["--threads", str(threads)]
        result = runner.invoke(main, args)
        assert result.exit_code == 0, (command, result.output)
        return {name: (out_dir / name).read_bytes() for name in OUTPUT_FILES[command]}

    checked = []
    for command in OUTPUT_FILES:
        baseline = run(command, tmp_path / command / "base", 1)
        rerun = run(command, tmp_path / command / "rerun", 1)
        assert baseline == rerun, f"{command}: rerun differs"
        for threads in (4, 16):
            threaded = run(command, tmp_path / command / f"t{threads}", threads)
            assert baseline == threaded, f"{command}: threads={threads} differs"
        checked.append(command)
    _report(10, "cli-determinism", len(checked) == 7, f"(commands: {', '.join(checked)})")
