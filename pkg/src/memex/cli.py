"""Command-line surface: experiment orchestration with CSV/JSON outputs.

Every command is a pure function of (config file, flag overrides, seed, input
artifacts): rerunning produces byte-identical outputs, and the resolved
config's hash is stamped into every row. Flags beat the config file, which
beats built-in defaults.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import click
import numpy as np
from scipy.stats import mannwhitneyu

from . import corpora, extraction, oracle, pii, toymodel
from .core import MaskPattern, RecoveryOrder, default_vocab, make_linear_grid
from .engine import TruthConditionalCache
from .modelclient import RemoteModel
from .samplers import RANDOM_UNIFORM, SamplerConfig, derive_seed, substream

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "threads": 1,
    "out_dir": "out",
    "model": None,
    "eta": 0.1,
    "sampler": {
        "position_rule": RANDOM_UNIFORM,
        "token_rule": {"kind": "gumbel", "param": 1.0},
    },
    # reveal at least one token per intermediate step instead of the literal
    # floor (which can defer work to the terminal step)
    "at_least_one": False,
    "scatter": {
        "corpus": "builtin:scatter",
        "ratio_range": [0.2, 0.3],
        "screen_trials": 1024,
        "screen_threshold": 1e-3,
        "theoretical_trials": 1024,
        "empirical_trials": 100000,
        "n_examples": 56,
    },
    "sweep": {
        "corpus": "builtin:sweep",
        "step_set": [1, 2, 5, 10, "max"],
        "n_patterns": 48,
        "n_examples": 6,
        "trials": 4096,
        "mask_ratio": 0.25,
        "screen_threshold": 0.01,
    },
    "np_table": {
        "texts": "builtin:pii",
        "cap": 3000,
        "p_list": [0.5, 0.99],
        "n_queries": 10000,
        "trials": 16,
        "noise_eta": 0.98,
    },
    "eps_cdf": {
        "corpus": "builtin:window",
        "example": 0,
        "mask_size": 20,
        "trials": 10000,
        "small_trials": 128,
        "steps": 5,
        "eta": 0.3,
    },
    "traintest": {
        "train_corpus": "builtin:train",
        "heldout_corpus": "builtin:heldout",
        "mask_ratio": 0.25,
        "trials": 512,
    },
    "verify": {"instances": 25, "max_len": 6},
}

_BUILTIN_CORPORA = {
    "builtin:scatter": "scatter_corpus.txt",
    "builtin:sweep": "sweep_corpus.txt",
    "builtin:window": "window_corpus.txt",
    "builtin:train": "train_corpus.txt",
    "builtin:heldout": "heldout_corpus.txt",
}


def _data_path(name: str) -> Path:
    return Path(str(resources.files("memex").joinpath("data", name)))


def load_corpus_ref(ref: str) -> toymodel.Corpus:
    if ref in _BUILTIN_CORPORA:
        return toymodel.load_corpus(_data_path(_BUILTIN_CORPORA[ref]))
    return toymodel.load_corpus(ref)


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        elif value is not None:
            out[key] = value
    return out


def resolve_config(config_path: str | None, **flag_overrides: Any) -> dict:
    cfg = DEFAULTS
    if config_path:
        cfg = _merge(cfg, json.loads(Path(config_path).read_text()))
    top = {k: v for k, v in flag_overrides.items() if v is not None and not isinstance(v, dict)}
    nested = {k: v for k, v in flag_overrides.items() if isinstance(v, dict)}
    cfg = _merge(cfg, top)
    for section, vals in nested.items():
        cfg[section] = _merge(cfg.get(section, {}), vals)
    return cfg


def config_hash(cfg: dict) -> str:
    """Hash of the semantic config: output location and worker count are
    excluded so reruns and different thread counts stamp identical rows."""
    view = {k: v for k, v in cfg.items() if k not in ("out_dir", "threads")}
    blob = json.dumps(view, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def write_csv(
    path: Path, schema: str, cfg_hash: str, fieldnames: Sequence[str], rows: Sequence[dict]
) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        writer = csv.DictWriter(fh, fieldnames=["schema", "config_hash", *fieldnames])
        writer.writeheader()
        for row in rows:
            writer.writerow({"schema": schema, "config_hash": cfg_hash, **row})


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def load_model_ref(ref: str, eta: float):
    """A model artifact path, an http(s) endpoint, or builtin:<corpus> to fit."""
    if ref.startswith(("http://", "https://")):
        return RemoteModel.connect(ref)
    if ref.startswith("builtin:"):
        return toymodel.fit(load_corpus_ref(ref), eta)
    return toymodel.load_model(ref)


def _sampler_from_cfg(cfg: dict) -> SamplerConfig:
    return SamplerConfig.from_dict({**cfg["sampler"], "seed": cfg["seed"]})


@click.group()
def main() -> None:
    """Memorization measurement toolkit."""


_config_opt = click.option("--config", "config_path", type=click.Path(exists=True), default=None)
_seed_opt = click.option("--seed", type=int, default=None)
_out_opt = click.option("--out-dir", type=click.Path(), default=None)
_threads_opt = click.option("--threads", type=int, default=None)
_model_opt = click.option("--model", "model_ref", default=None, help="artifact path or endpoint URL")


@main.command("fit-toy")
@_config_opt
@_seed_opt
@_out_opt
@click.option("--corpus", "corpus_ref", default=None)
@click.option("--eta", type=float, default=None)
def cmd_fit_toy(config_path, seed, out_dir, corpus_ref, eta) -> None:
    """Fit the exact posterior model on a corpus file and save the artifact."""
    cfg = resolve_config(config_path, seed=seed, out_dir=out_dir, eta=eta, corpus=corpus_ref)
    if not cfg.get("corpus"):
        raise click.UsageError("--corpus (or config key 'corpus') is required")
    if not (0.0 < cfg["eta"] < 1.0):
        raise click.UsageError(f"eta must be in (0, 1), got {cfg['eta']}")
    corpus = load_corpus_ref(cfg["corpus"])
    model = toymodel.fit(corpus, cfg["eta"])
    out = Path(cfg["out_dir"]) / "model.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    toymodel.save_model(model, out)
    digest = hashlib.sha256(out.read_bytes()).hexdigest()
    click.echo(f"wrote {out} sha256={digest}")


@main.command("scatter-pz")
@_config_opt
@_seed_opt
@_out_opt
@_threads_opt
@_model_opt
@click.option("--trials", "empirical_trials", type=int, default=None, help="empirical generations per example")
def cmd_scatter_pz(config_path, seed, out_dir, threads, model_ref, empirical_trials) -> None:
    """Empirical vs theoretical recovery probability per example (one-step,
    fresh mask pattern per trial)."""
    cfg = resolve_config(
        config_path,
        seed=seed,
        out_dir=out_dir,
        threads=threads,
        model=model_ref,
        scatter={"empirical_trials": empirical_trials},
    )
    sc = cfg["scatter"]
    if sc["empirical_trials"] < 1 or sc["theoretical_trials"] < 1:
        raise click.UsageError("trial counts must be >= 1")
    chash = config_hash(cfg)
    model = load_model_ref(cfg["model"] or sc["corpus"], cfg["eta"])
    corpus = load_corpus_ref(sc["corpus"])
    ratio = tuple(sc["ratio_range"])
    rows = []
    estimates: list[tuple[str, extraction.PzEstimate]] = []
    for idx, z in enumerate(corpus.sequences[: sc["n_examples"]]):
        screen = extraction.pattern_pz_estimate(
            model, z, ratio, sc["screen_trials"], derive_seed(cfg["seed"], 1, idx)
        )
        if screen.mean <= sc["screen_threshold"]:
            continue
        theo = extraction.pattern_pz_estimate(
            model, z, ratio, sc["theoretical_trials"], derive_seed(cfg["seed"], 2, idx)
        )
        emp, emp_se = extraction.pattern_hit_rate(
            model, z, ratio, sc["empirical_trials"], derive_seed(cfg["seed"], 3, idx)
        )
        estimates.append((str(idx), theo))
        rows.append(
            {
                "example_id": idx,
                "empirical_pz": emp,
                "empirical_stderr": emp_se,
                "theoretical_pz": theo.mean,
                "theoretical_stderr": theo.stderr,
            }
        )
    out = Path(cfg["out_dir"]) / "scatter_pz.csv"
    write_csv(
        out,
        "memex-scatter/1",
        chash,
        ["example_id", "empirical_pz", "empirical_stderr", "theoretical_pz", "theoretical_stderr"],
        rows,
    )
    extraction.write_estimates_csv(Path(cfg["out_dir"]) / "scatter_estimates.csv", estimates, chash)
    write_json(
        Path(cfg["out_dir"]) / "scatter_summary.json",
        {**extraction.estimates_summary(estimates), "config_hash": chash},
    )
    click.echo(f"wrote {out} ({len(rows)} examples)")


def _draw_sweep_patterns(corpus, cfg_seed: int, n_patterns: int, ratio: float, n_examples: int):
    """Deterministic (example, mask) pairs cycling through the probe bases."""
    out = []
    n_probe = min(n_examples, len(corpus.sequences))
    for i in range(n_patterns):
        z = corpus.sequences[i % n_probe]
        gen = substream(cfg_seed, 7, i)
        size = max(1, round(ratio * len(z)))
        positions = frozenset(int(p) for p in gen.choice(len(z), size=size, replace=False))
        out.append((i, z, MaskPattern(positions, len(z))))
    return out


@main.command("sweep-steps")
@_config_opt
@_seed_opt
@_out_opt
@_threads_opt
@_model_opt
@click.option("--step-set", default=None, help='comma list, e.g. "1,2,5,10,max"')
@click.option("--mask-ratio", type=float, default=None)
@click.option("--trials", type=int, default=None)
def cmd_sweep_steps(config_path, seed, out_dir, threads, model_ref, step_set, mask_ratio, trials) -> None:
    """Median log-probability gain over the one-step baseline per resolution."""
    overrides: dict[str, Any] = {}
    if step_set:
        overrides["step_set"] = [s if s == "max" else int(s) for s in step_set.split(",")]
    cfg = resolve_config(
        config_path,
        seed=seed,
        out_dir=out_dir,
        threads=threads,
        model=model_ref,
        sweep={**overrides, "mask_ratio": mask_ratio, "trials": trials},
    )
    sw = cfg["sweep"]
    if sw["n_patterns"] < 1:
        raise click.UsageError("n_patterns must be >= 1")
    if 1 not in sw["step_set"]:
        raise click.UsageError("step_set must include the one-step baseline")
    chash = config_hash(cfg)
    corpus = load_corpus_ref(sw["corpus"])
    model = load_model_ref(cfg["model"] or sw["corpus"], cfg["eta"])
    sampler = _sampler_from_cfg(cfg)

    patterns = _draw_sweep_patterns(
        corpus, cfg["seed"], sw["n_patterns"], sw["mask_ratio"], sw["n_examples"]
    )
    kept = []
    for i, z, mask in patterns:
        cache = TruthConditionalCache(model, z, mask)
        one_step = math.exp(float(np.sum(cache.log_conds(0))))
        if one_step > sw["screen_threshold"]:
            kept.append((i, z, mask))

    rates: dict[int, dict[str, float]] = {}
    for i, z, mask in kept:
        per_step = {}
        for label in sw["step_set"]:
            grid = "max" if label == "max" else make_linear_grid(int(label))
            resolved = extraction._chunk_sizes(
                make_linear_grid(len(mask)) if grid == "max" else grid,
                len(mask),
                cfg["at_least_one"],
            )
            # identical chunk-size sequences are the same process: share the seed
            per_step[str(label)] = extraction.fast_exact_hit_rate(
                model, z, mask, grid, sampler, sw["trials"],
                derive_seed(cfg["seed"], 8, i, *resolved),
                at_least_one=cfg["at_least_one"],
            )
        rates[i] = per_step

    rows = []
    boot = substream(cfg["seed"], 9)
    for label in sw["step_set"]:
        key = str(label)
        dlogs = np.array(
            [
                math.log(r[key] / r["1"])
                for r in rates.values()
                if r["1"] > 0 and r[key] > 0
            ]
        )
        if dlogs.size == 0:
            median = ci_lo = ci_hi = float("nan")
        elif label == 1:
            median = ci_lo = ci_hi = 0.0
        else:
            median = float(np.median(dlogs))
            res = np.array(
                [np.median(dlogs[boot.integers(0, dlogs.size, dlogs.size)]) for _ in range(1000)]
            )
            ci_lo, ci_hi = (float(x) for x in np.percentile(res, [2.5, 97.5]))
        rows.append(
            {
                "steps": key,
                "median_dlogp": median,
                "ci_low": ci_lo,
                "ci_high": ci_hi,
                "n_patterns": int(dlogs.size),
            }
        )
    out = Path(cfg["out_dir"]) / "sweep_steps.csv"
    write_csv(out, "memex-sweep/1", chash, ["steps", "median_dlogp", "ci_low", "ci_high", "n_patterns"], rows)
    click.echo(f"wrote {out} ({len(kept)}/{len(patterns)} patterns past screening)")


@main.command("np-table")
@_config_opt
@_seed_opt
@_out_opt
@_threads_opt
@click.option("--trials", type=int, default=None)
def cmd_np_table(config_path, seed, out_dir, threads, trials) -> None:
    """Discoverable-record counts per (model, step, category, target p)."""
    cfg = resolve_config(
        config_path, seed=seed, out_dir=out_dir, threads=threads, np_table={"trials": trials}
    )
    npt = cfg["np_table"]
    chash = config_hash(cfg)
    if npt["texts"] == "builtin:pii":
        texts = corpora.synthetic_pii_texts()
    else:
        texts = json.loads(Path(npt["texts"]).read_text())["docs"]
    tokenizer = pii.ByteTokenizer()
    records = pii.build_records(texts, tokenizer, npt["cap"])
    sampler = _sampler_from_cfg(cfg)

    rows = []
    for cat_idx, category in enumerate(pii.CATEGORIES):
        cat_records = [r for r in records if r.category == category]
        if not cat_records:
            continue
        lengths = {len(r.prefix_tokens) + len(r.target_tokens) for r in cat_records}
        if len(lengths) != 1:
            raise click.UsageError(
                f"{category} records have mixed lengths {sorted(lengths)}; "
                "np-table needs equal-length records per category"
            )
        vocab = default_vocab(tokenizer.vocab_size)
        seqs = [list(r.prefix_tokens + r.target_tokens) for r in cat_records]
        memorizer = toymodel.fit(toymodel.corpus_from_rows(seqs, vocab), cfg["eta"])
        noise = toymodel.fit(toymodel.corpus_from_rows(seqs, vocab), npt["noise_eta"])
        for model_idx, (model_label, model) in enumerate(
            (("memorizer", memorizer), ("noise", noise))
        ):
            for step_idx, step_label in enumerate(("one", "max")):
                grid = make_linear_grid(1) if step_label == "one" else "max"
                audit = pii.audit_pii(
                    model,
                    cat_records,
                    "diffusion",
                    sampler,
                    npt["trials"],
                    npt["p_list"],
                    npt["n_queries"],
                    grid=grid,
                    rng=derive_seed(cfg["seed"], 21, cat_idx, model_idx, step_idx),
                    at_least_one=cfg["at_least_one"],
                )
                for p in npt["p_list"]:
                    rows.append(
                        {
                            "model": model_label,
                            "step": step_label,
                            "category": category,
                            "p": p,
                            "n": npt["n_queries"],
                            "count": audit.count(category, float(p)),
                        }
                    )
            arm_audit = pii.audit_pii(
                model, cat_records, "arm", sampler, 1, npt["p_list"], npt["n_queries"]
            )
            for p in npt["p_list"]:
                rows.append(
                    {
                        "model": model_label,
                        "step": "arm",
                        "category": category,
                        "p": p,
                        "n": npt["n_queries"],
                        "count": arm_audit.count(category, float(p)),
                    }
                )
    out = Path(cfg["out_dir"]) / "np_table.csv"
    write_csv(out, "memex-nptable/1", chash, ["model", "step", "category", "p", "n", "count"], rows)
    click.echo(f"wrote {out} ({len(records)} records)")


@main.command("eps-cdf")
@_config_opt
@_seed_opt
@_out_opt
@_threads_opt
@_model_opt
@click.option("--trials", type=int, default=None)
def cmd_eps_cdf(config_path, seed, out_dir, threads, model_ref, trials) -> None:
    """Empirical Hamming-error CDF vs Gaussian fits from few and many trials."""
    cfg = resolve_config(
        config_path, seed=seed, out_dir=out_dir, threads=threads, model=model_ref,
        eps_cdf={"trials": trials},
    )
    ec = cfg["eps_cdf"]
    chash = config_hash(cfg)
    corpus = load_corpus_ref(ec["corpus"])
    model = load_model_ref(cfg["model"] or ec["corpus"], ec["eta"])
    z = corpus.sequences[ec["example"]]
    gen = substream(cfg["seed"], 31)
    positions = frozenset(int(p) for p in gen.choice(len(z), size=ec["mask_size"], replace=False))
    mask = MaskPattern(positions, len(z))
    sampler = _sampler_from_cfg(cfg)
    grid = make_linear_grid(ec["steps"])
    distances = extraction.hamming_trials(
        model, z, mask, grid, sampler, ec["trials"], derive_seed(cfg["seed"], 32),
        threads=cfg["threads"], at_least_one=cfg["at_least_one"],
    )
    full_stats = extraction.hamming_stats(distances)
    small_stats = extraction.hamming_stats(distances[: ec["small_trials"]])
    rows = []
    for eps in range(ec["mask_size"] + 1):
        rows.append(
            {
                "eps": eps,
                "empirical_cdf": float((distances <= eps).mean()),
                "gaussian_cdf_small": extraction.gaussian_eps_approx(small_stats, eps),
                "gaussian_cdf_full": extraction.gaussian_eps_approx(full_stats, eps),
            }
        )
    out = Path(cfg["out_dir"]) / "eps_cdf.csv"
    write_csv(
        out,
        "memex-epscdf/1",
        chash,
        ["eps", "empirical_cdf", "gaussian_cdf_small", "gaussian_cdf_full"],
        rows,
    )
    summary = {
        "mu": full_stats.mu,
        "sigma": full_stats.sigma,
        "mu_small": small_stats.mu,
        "sigma_small": small_stats.sigma,
        "central_sup_distance": extraction.gaussian_fit_sup_distance(distances, full_stats),
        "trials": int(distances.size),
    }
    write_json(Path(cfg["out_dir"]) / "eps_cdf_summary.json", summary)
    click.echo(f"wrote {out} (sup distance {summary['central_sup_distance']:.4f})")


@main.command("traintest")
@_config_opt
@_seed_opt
@_out_opt
@_threads_opt
@click.option("--mask-ratio", type=float, default=None)
@click.option("--trials", type=int, default=None)
def cmd_traintest(config_path, seed, out_dir, threads, mask_ratio, trials) -> None:
    """Per-example log recovery estimates on training vs held-out data, plus a
    stochastic-dominance summary."""
    cfg = resolve_config(
        config_path, seed=seed, out_dir=out_dir, threads=threads,
        traintest={"mask_ratio": mask_ratio, "trials": trials},
    )
    tt = cfg["traintest"]
    chash = config_hash(cfg)
    train = load_corpus_ref(tt["train_corpus"])
    heldout = load_corpus_ref(tt["heldout_corpus"])
    model = toymodel.fit(train, cfg["eta"])
    ratio = (tt["mask_ratio"], tt["mask_ratio"])
    rows = []
    values: dict[str, list[float]] = {"train": [], "test": []}
    for split, seqs in (("train", train.sequences), ("test", heldout.sequences)):
        for idx, z in enumerate(seqs):
            est = extraction.pattern_pz_estimate(
                model, z, ratio, tt["trials"], derive_seed(cfg["seed"], 41, idx, 0 if split == "train" else 1)
            )
            log_pz = math.log(est.mean) if est.mean > 0 else float("-inf")
            values[split].append(log_pz)
            rows.append({"split": split, "example_id": idx, "log_pz_hat": log_pz})
    out = Path(cfg["out_dir"]) / "traintest.csv"
    write_csv(out, "memex-traintest/1", chash, ["split", "example_id", "log_pz_hat"], rows)

    a = np.array(values["train"])
    b = np.array(values["test"])
    stat = mannwhitneyu(a, b, alternative="greater")
    grid_points = np.sort(np.concatenate([a, b]))
    cdf_a = np.searchsorted(np.sort(a), grid_points, side="right") / a.size
    cdf_b = np.searchsorted(np.sort(b), grid_points, side="right") / b.size
    summary = {
        "n_train": int(a.size),
        "n_test": int(b.size),
        "median_train": float(np.median(a)),
        "median_test": float(np.median(b)),
        "mannwhitney_u": float(stat.statistic),
        "p_value_one_sided": float(stat.pvalue),
        "cdf_sup_gap": float(np.max(cdf_b - cdf_a)),
    }
    write_json(Path(cfg["out_dir"]) / "traintest_summary.json", summary)
    click.echo(f"wrote {out} (one-sided p={summary['p_value_one_sided']:.3g})")


@main.command("verify")
@_config_opt
@_seed_opt
@_out_opt
def cmd_verify(config_path, seed, out_dir) -> None:
    """Run the oracle suite on bundled small instances; nonzero exit on any
    unconditional-invariant failure."""
    cfg = resolve_config(config_path, seed=seed, out_dir=out_dir)
    vf = cfg["verify"]
    chash = config_hash(cfg)
    verdicts: dict[str, Any] = {"config_hash": chash, "instances": []}
    failures = 0

    for i in range(vf["instances"]):
        corpus, z = corpora.random_instance(derive_seed(cfg["seed"], 51, i), max_length=vf["max_len"])
        model = toymodel.fit(corpus, 0.1 + 0.3 * (i % 4) / 4)
        report = oracle.check_assumption1(model, z, max_len=vf["max_len"])
        gen = substream(cfg["seed"], 52, i)
        m_size = int(gen.integers(2, min(len(z), 5) + 1))
        positions = frozenset(int(p) for p in gen.choice(len(z), size=m_size, replace=False))
        mask = MaskPattern(positions, len(z))
        order = RecoveryOrder(tuple(gen.permutation(sorted(positions)).tolist()))
        chain = oracle.canonical_refinement_chain(order)
        logs = [
            oracle.log_exact_pz_fixed_partition(model, z, mask, order, part) for part in chain
        ]
        monotone = all(b >= a - 1e-12 for a, b in zip(logs, logs[1:]))
        prop1 = oracle.check_proposition1(model, z, mask)
        exact = oracle.exact_pz_fixed_partition(model, z, mask, order, chain[-1])
        enum_greedy = oracle.enumerate_orders_pz(model, z, mask, "max", "greedy_confidence")
        instance_ok = report.holds and monotone and prop1
        failures += 0 if instance_ok else 1
        verdicts["instances"].append(
            {
                "instance": i,
                "assumption_holds": report.holds,
                "chain_monotone": monotone,
                "proposition1": prop1,
                "per_token_exact": exact,
                "greedy_enumeration": enum_greedy,
            }
        )

    corpus, probe = corpora.assumption_violating_pair()
    model = toymodel.fit(corpus, 0.2)
    report = oracle.check_assumption1(model, probe)
    mask = MaskPattern(frozenset({0, 3}), 4)
    verdict = oracle.check_theorem1(model, probe, mask, RecoveryOrder((0, 3)), 2, 1)
    adversarial_ok = (not report.holds) and verdict.status == "assumption_failed" and verdict.log_gap < 0
    failures += 0 if adversarial_ok else 1
    verdicts["adversarial"] = {
        "violations_found": len(report.violations),
        "refinement_verdict": verdict.to_dict(),
        "reversal_demonstrated": adversarial_ok,
    }
    verdicts["failures"] = failures
    out = Path(cfg["out_dir"]) / "verify.json"
    write_json(out, verdicts)
    click.echo(f"wrote {out} (failures={failures})")
    if failures:
        sys.exit(1)


if __name__ == "__main__":
    main()
