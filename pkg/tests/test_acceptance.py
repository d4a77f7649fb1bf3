"""Acceptance suite: one test per criterion, one PASS/FAIL line each.

Heavy comparative experiments (criteria 7-11) share module-scoped fixtures;
independent runs inside a fixture parallelize over available cores, and
each criterion's asserted runtime is the wall time of the experiment groups
it consumes (shared groups are counted where the criteria share them).

Run with `pytest tests/test_acceptance.py -v -s` to see the lines.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from itertools import combinations

import numpy as np
import pytest

import partal_lab as pl
from partal_lab.acquisition import covering_radius, kcenter_greedy
from partal_lab.alcore import (
    ALConfig,
    LabelState,
    Oracle,
    hardest_examples_probe,
    partial_inference_probe,
    run_al,
    run_full_supervision,
    train_initial_model,
)
from partal_lab.cli import main
from partal_lab.model import (
    BatchNoise,
    LabelInjection,
    _forward,
    loss_and_grads,
    make_pool,
    masked_loss,
    per_sample_losses,
    train,
)
from partal_lab.uncertainty import discretized_shannon

SEEDS = (0, 1, 2, 3, 4)
GAUSS_ENTROPY = 0.5 * (1.0 + np.log(2.0 * np.pi))
_WORKERS = max(1, min(4, os.cpu_count() or 1))

slow = pytest.mark.slow


def _line(criterion: int, ok: bool, detail: str) -> None:
    print(f"[criterion {criterion:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def _pmap(fn, tasks):
    if _WORKERS <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=_WORKERS) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# Criteria 1-4: exact property suites.
# ---------------------------------------------------------------------------


def test_criterion_1_entropy_identities():
    t0 = time.perf_counter()
    shannon = pl.shannon_entropy_map(np.full((4, 1, 1), 0.25))[0, 0]
    gauss = pl.gaussian_entropy_map(np.ones((1, 1, 1)))[0, 0]
    ok_s = abs(shannon - np.log(4.0)) < 1e-9
    ok_g = abs(gauss - GAUSS_ENTROPY) < 1e-9
    elapsed = time.perf_counter() - t0
    _line(1, ok_s and ok_g and elapsed < 1.0,
          f"shannon(uniform 4)={shannon:.12f} vs ln4, "
          f"gauss(sigma^2=1)={gauss:.12f} vs {GAUSS_ENTROPY:.12f}, {elapsed:.3f}s")


def test_criterion_2_discretization_equivalence():
    t0 = time.perf_counter()
    std_normal = lambda x: np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi)
    errs = {eps: abs(discretized_shannon(std_normal, -8.0, 8.0, eps)
                     + np.log(eps) - 1.41894)
            for eps in (0.1, 0.05, 0.01)}
    ok_small = errs[0.01] < 1e-3
    ok_monotone = errs[0.1] > errs[0.05] > errs[0.01]
    elapsed = time.perf_counter() - t0
    _line(2, ok_small and ok_monotone and elapsed < 5.0,
          f"errors {{0.1: {errs[0.1]:.2e}, 0.05: {errs[0.05]:.2e}, "
          f"0.01: {errs[0.01]:.2e}}}, {elapsed:.2f}s")


def test_criterion_3_kcenter_two_approximation():
    t0 = time.perf_counter()
    gen = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        n = int(gen.integers(3, 13))
        feats = gen.random((n, int(gen.integers(1, 4))))
        k = int(gen.integers(1, min(5, n - 1) + 1))
        picks = kcenter_greedy(feats, {0}, k)
        greedy = covering_radius(feats, [0] + picks)
        best = min(covering_radius(feats, list(c))
                   for c in combinations(range(n), 1 + k))
        worst = max(worst, greedy / best if best > 0 else 1.0)
        assert greedy <= 2.0 * best + 1e-12
    elapsed = time.perf_counter() - t0
    _line(3, elapsed < 60.0,
          f"200 instances (<=12 points), worst greedy/optimal ratio "
          f"{worst:.4f} <= 2, {elapsed:.1f}s")


def test_criterion_4_gradient_correctness(micro_setup):
    t0 = time.perf_counter()
    net, mods, x, targets, mask, rng = micro_setup
    noise = BatchNoise.sample(rng.split(2), 5, 6, 0.3)
    injection = LabelInjection(values={"height": targets["height"]},
                               rows={"height": np.array([1, 0, 0, 1, 0], dtype=bool)})
    fwd = _forward(net, x, injection, noise)
    sample = per_sample_losses(net, fwd, targets,
                               {"height": mask[:, 0], "region": mask[:, 1]})
    aux_t = sum(np.where(np.isnan(sample[m.name]), 0.0, sample[m.name]) * m.loss_weight
                for m in mods)
    _, _, _, grads = loss_and_grads(net, fwd, targets, mask, aux_t)

    def main_obj():
        f = _forward(net, x, injection, noise)
        total, _ = masked_loss(f.stage1, f.stage2, targets, mask, net.modalities)
        return total

    def aux_obj():
        f = _forward(net, x, injection, noise)
        return float(np.mean((f.aux_pred - aux_t) ** 2))

    h = 1e-5
    worst = 0.0
    checked = 0
    for name, p in net.params.items():
        obj = aux_obj if name.startswith("aux") else main_obj
        flat = p.reshape(-1)
        ana = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = obj()
            flat[i] = orig - h
            down = obj()
            flat[i] = orig
            fd = (up - down) / (2 * h)
            rel = abs(fd - ana[i]) / max(abs(fd), abs(ana[i]), 1e-8)
            worst = max(worst, rel)
            checked += 1
    elapsed = time.perf_counter() - t0
    _line(4, worst < 1e-4 and elapsed < 60.0,
          f"{checked} parameter entries on the 4x4 K=2 micro-model, "
          f"worst rel err {worst:.2e} < 1e-4, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# Criterion 5: masked-loss leak freedom under NaN poisoning.
# ---------------------------------------------------------------------------


@slow
def test_criterion_5_poisoning_leak_freedom(reference_bundle):
    t0 = time.perf_counter()
    config = ALConfig(iterations=3, seed=0, poison_debug=True)
    record = run_al(reference_bundle, "partal", config)
    finite = all(np.isfinite(v.value) for row in record.rows
                 for v in row.metrics.values)

    # The untouched-parameters clause is exact with the stage-1 detach flag
    # and no weight decay (gradients otherwise reach the withheld initial
    # head through the distillation concat, and decoupled decay moves every
    # parameter). Drive 3 acquisition rounds that never touch one modality.
    bundle = reference_bundle
    withheld = bundle.modality_index("normals")
    net_cfg = pl.NetConfig(detach_stage1=True)
    tc = pl.TrainConfig(weight_decay=0.0, epochs=8, seed=0)
    state = LabelState(len(bundle.train), 3, list(range(10)))
    state.mask[:, withheld] = False  # withhold one modality entirely
    oracle = Oracle(bundle.train, cap=3 * 12)
    root = pl.SeededRng(17)
    net = pl.MultiTaskNet(bundle.modalities, bundle.H, bundle.W, bundle.C_in,
                          net_cfg, root.split(0))
    before = {k: v.copy() for k, v in net.modality_params("normals").items()}
    for it in range(3):
        pool = make_pool(bundle.train, state.mask, bundle.modalities,
                         poison_unlabelled=True)
        train(net, pool, replace(tc, seed=root.split(1, it).fold()))
        keep = [p for p in state.candidate_pairs() if p[1] != withheld]
        batch = pl.select_random_partial(keep, 12, root.split(2, it))
        oracle.reveal(state, batch)
    untouched = all(np.array_equal(before[k], net.modality_params("normals")[k])
                    for k in before)
    elapsed = time.perf_counter() - t0
    _line(5, finite and untouched and elapsed < 120.0,
          f"poisoned 3-iteration loop finite={finite}, withheld-modality "
          f"parameters untouched={untouched}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# Criterion 6: equal budget across all six strategies.
# ---------------------------------------------------------------------------


def _budget_task(args):
    strategy, seed = args
    bundle = pl.generate_dataset(
        pl.GeneratorConfig(n_train=150, n_test=30), seed=5)
    config = ALConfig(initial_fully_labelled=20, iterations=3,
                      budget_per_iteration=36, mc_passes=8, seed=seed,
                      train=pl.TrainConfig(epochs=6, seed=seed))
    record = run_al(bundle, strategy, config)
    return strategy, seed, [r.labels_used for r in record.rows]


@slow
def test_criterion_6_budget_protocol():
    t0 = time.perf_counter()
    tasks = [(s, seed) for s in pl.STRATEGY_NAMES for seed in (0, 1, 2)]
    results = _pmap(_budget_task, tasks)
    by_seed = {}
    for strategy, seed, used in results:
        by_seed.setdefault(seed, {})[strategy] = used
    equal = all(len({tuple(u) for u in per.values()}) == 1
                for per in by_seed.values())
    expected = [60, 96, 132, 168]
    exact = all(u == expected for per in by_seed.values() for u in per.values())
    elapsed = time.perf_counter() - t0
    _line(6, equal and exact,
          f"all 6 strategies x 3 seeds used labels {expected} at every "
          f"iteration, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# Criteria 7, 9, 10, 11: the headline comparative experiments.
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def reference_bundle():
    return pl.generate_dataset(pl.GeneratorConfig(), seed=0)


def _ref_task(seed):
    t0 = time.perf_counter()
    bundle = pl.generate_dataset(pl.GeneratorConfig(), seed=0)
    result = run_full_supervision(bundle, pl.TrainConfig(seed=seed), pl.NetConfig())
    t_train = time.perf_counter() - t0
    t0 = time.perf_counter()
    probe = partial_inference_probe(result.net, bundle)
    t_probe = time.perf_counter() - t0
    return seed, result.report, probe, t_train, t_probe


def _headline_task(args):
    strategy, seed, reference, normalize = args
    bundle = pl.generate_dataset(pl.GeneratorConfig(), seed=0)
    config = ALConfig(seed=seed, normalize=normalize,
                      train=pl.TrainConfig(seed=seed))
    record = run_al(bundle, strategy, config, reference=reference)
    return strategy, seed, normalize, record.final.delta_mtl


@pytest.fixture(scope="module")
def headline():
    """Reference runs + the four strategy groups of the headline protocol."""
    groups = {}
    t0 = time.perf_counter()
    refs_out = _pmap(_ref_task, list(SEEDS))
    groups["refs"] = time.perf_counter() - t0
    refs = {seed: report for seed, report, _, _, _ in refs_out}
    probes = {seed: probe for seed, _, probe, _, _ in refs_out}
    probe_time = sum(t for *_, t in refs_out)

    finals = {}
    for name, normalize in (("partal", True), ("random", True),
                            ("random_partial", True), ("partal_raw", False)):
        strategy = "partal" if name == "partal_raw" else name
        t0 = time.perf_counter()
        out = _pmap(_headline_task,
                    [(strategy, seed, refs[seed], normalize) for seed in SEEDS])
        groups[name] = time.perf_counter() - t0
        finals[name] = {seed: dm for _, seed, _, dm in out}
    return {"refs": refs, "probes": probes, "probe_time": probe_time,
            "finals": finals, "groups": groups}


@slow
def test_criterion_7_partal_beats_random(headline):
    partal = headline["finals"]["partal"]
    random_full = headline["finals"]["random"]
    wins = sum(partal[s] <= random_full[s] for s in SEEDS)
    mean_p = float(np.mean([partal[s] for s in SEEDS]))
    mean_r = float(np.mean([random_full[s] for s in SEEDS]))
    elapsed = (headline["groups"]["refs"] + headline["groups"]["partal"]
               + headline["groups"]["random"] + headline["groups"]["random_partial"])
    ok = wins >= 4 and mean_p < mean_r and elapsed < 900.0
    _line(7, ok,
          f"partal<=random in {wins}/5 seeds, means {mean_p:.4f} vs {mean_r:.4f}, "
          f"experiment wall {elapsed:.0f}s < 900s")


@slow
def test_criterion_8_hardest_examples(reference_bundle):
    t0 = time.perf_counter()
    results = _pmap(_hardest_task, list(SEEDS))
    margins = {m.name: [] for m in reference_bundle.modalities}
    for _, out in results:
        for m in reference_bundle.modalities:
            a = out["partal"].get(m.name)
            b = out["random"].get(m.name)
            if a is None or b is None:
                continue
            margins[m.name].append((b - a) if m.higher_is_better else (a - b))
    harder = {name: float(np.mean(vals)) for name, vals in margins.items()}
    n_harder = sum(v >= 0 for v in harder.values())
    elapsed = time.perf_counter() - t0
    _line(8, n_harder >= 2 and elapsed < 300.0,
          f"partal-selected samples harder on {n_harder}/3 modalities "
          f"(seed-mean margins {({k: round(v, 3) for k, v in harder.items()})}), "
          f"{elapsed:.0f}s")


def _hardest_task(seed):
    bundle = pl.generate_dataset(pl.GeneratorConfig(), seed=0)
    config = ALConfig(seed=seed, train=pl.TrainConfig(seed=seed))
    state, net, root = train_initial_model(bundle, config)
    budget = config.initial_fully_labelled * 3  # the initial set's size again
    out = hardest_examples_probe(net, bundle, state, ["partal", "random"],
                                 budget, config.mc_passes, root.split(7))
    return seed, out


@slow
def test_criterion_9_improved_inference(headline, reference_bundle):
    per_target = {m.name: {"base": [], "best": []}
                  for m in reference_bundle.modalities}
    for seed in SEEDS:
        rows = headline["probes"][seed]
        for m in reference_bundle.modalities:
            base = next(v for s, t, v in rows if s == () and t == m.name)
            best = next(v for s, t, v in rows if len(s) == 2 and t == m.name)
            per_target[m.name]["base"].append(base)
            per_target[m.name]["best"].append(best)
    improved = {}
    for m in reference_bundle.modalities:
        base = float(np.mean(per_target[m.name]["base"]))
        best = float(np.mean(per_target[m.name]["best"]))
        improved[m.name] = (best >= base) if m.higher_is_better else (best <= base)
    elapsed = headline["probe_time"]
    _line(9, all(improved.values()) and elapsed < 180.0,
          f"all-targets improvement with 2 injected modalities: {improved}, "
          f"probe time {elapsed:.1f}s")


@slow
def test_criterion_10_normalization_ablation(headline):
    with_norm = headline["finals"]["partal"]
    without = headline["finals"]["partal_raw"]
    wins = sum(with_norm[s] <= without[s] for s in SEEDS)
    elapsed = headline["groups"]["partal"] + headline["groups"]["partal_raw"]
    _line(10, wins >= 3 and elapsed < 900.0,
          f"normalized<=raw in {wins}/5 seeds "
          f"(norm {[round(with_norm[s], 3) for s in SEEDS]}, "
          f"raw {[round(without[s], 3) for s in SEEDS]}), wall {elapsed:.0f}s")


@slow
def test_criterion_11_random_partial_ordering(headline):
    mean = lambda name: float(np.mean([headline["finals"][name][s] for s in SEEDS]))
    partal, rp, rf = mean("partal"), mean("random_partial"), mean("random")
    ok = rp <= rf and partal <= rp
    _line(11, ok,
          f"seed-means partal={partal:.4f} <= random_partial={rp:.4f} "
          f"<= random={rf:.4f} (runtime shared with criterion 7)")


# ---------------------------------------------------------------------------
# Criterion 12: CLI determinism across --jobs.
# ---------------------------------------------------------------------------

CLI_CONFIG = """
[dataset]
num_train = 120
num_test = 30
path = {path}

[model]
epochs = 6

[al]
initial_fully_labelled = 10
iterations = 2
budget_per_iteration = 12
mc_passes = 6
strategies = partal, random
seeds = 0, 1

[output]
directory = {outdir}
"""


@slow
def test_criterion_12_cli_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "exp.ini"
    cfg.write_text(CLI_CONFIG.format(path=tmp_path / "ds", outdir=tmp_path / "out"))
    assert main(["generate", "--config", str(cfg)]) == 0
    digests = []
    for jobs in ("1", "2", "1"):
        assert main(["run", "--config", str(cfg), "--jobs", jobs]) == 0
        digests.append((tmp_path / "out" / "merged.csv").read_bytes())
    identical = digests[0] == digests[1] == digests[2]
    elapsed = time.perf_counter() - t0
    _line(12, identical,
          f"merged.csv byte-identical across --jobs 1/2/1 reruns, {elapsed:.0f}s")
