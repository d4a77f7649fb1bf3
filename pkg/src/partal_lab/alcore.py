"""Pool, oracle, budget accounting, and the active-learning loop.

One AL run alternates training on the currently labelled pairs with
acquiring new (sample, modality) labels from a simulated oracle under a
fixed per-iteration budget.  Every strategy spends exactly the same number
of label units per iteration, so runs are comparable point-for-point.

The loop evaluates after every training stage, including once after the
final acquisition, so the last row reflects all purchased labels; the
per-modality gap to the full-supervision reference is computed from that
final row.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .acquisition import (
    AcquisitionBatch,
    STRATEGY_NAMES,
    select_coreset,
    select_learning_loss,
    select_partal,
    select_random_full,
    select_random_partial,
    select_rbal,
)
from .data import CATEGORICAL, DatasetBundle, ModalitySpec, SampleRecord
from .metrics import MetricsReport, MetricValue, delta_mtl, metric_value
from .model import (
    LabelInjection,
    MultiTaskNet,
    NetConfig,
    TrainConfig,
    make_pool,
    predict,
    train,
)
from .numerics import SeededRng
from .uncertainty import (
    NormalizationParams,
    UncertaintyMatrix,
    apply_normalization,
    fit_normalization,
    pool_uncertainties,
)

# Stream tags for the per-run RNG tree.
_TAG_NET, _TAG_TRAIN, _TAG_SELECT, _TAG_MC, _TAG_FULLSUP = 1, 2, 3, 4, 9


class BudgetExhaustedError(RuntimeError):
    """The oracle was asked to spend beyond its cap."""


class LabelStateError(ValueError):
    """Invalid transition of the label mask (e.g. re-revealing a pair)."""


class LabelState:
    """Per-(sample, modality) labelled mask over the training pool."""

    def __init__(self, n_samples: int, n_modalities: int, initial_set: list[int]):
        self.mask = np.zeros((n_samples, n_modalities), dtype=bool)
        self.initial_set = sorted(int(i) for i in initial_set)
        for sid in self.initial_set:
            self.mask[sid, :] = True

    @property
    def labelled_pairs(self) -> int:
        return int(np.count_nonzero(self.mask))

    def reveal(self, pairs) -> None:
        for sid, k in pairs:
            if self.mask[sid, k]:
                raise LabelStateError(f"pair ({sid}, {k}) is already labelled")
            self.mask[sid, k] = True

    def candidate_pairs(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(~self.mask)
        return list(zip(rows.tolist(), cols.tolist()))

    def fully_unlabelled_ids(self) -> np.ndarray:
        return np.flatnonzero(~self.mask.any(axis=1))

    def partially_unlabelled_ids(self) -> np.ndarray:
        """Images with at least one unlabelled modality (the MC pool)."""
        return np.flatnonzero(~self.mask.all(axis=1))

    def labelled_any_ids(self) -> np.ndarray:
        return np.flatnonzero(self.mask.any(axis=1))


@dataclass
class Oracle:
    """Simulated annotator: reveals requested pairs and charges the budget."""

    records: list[SampleRecord]
    cap: int
    spent: int = 0

    def reveal(self, state: LabelState, batch: AcquisitionBatch) -> None:
        if self.spent + batch.cost > self.cap:
            raise BudgetExhaustedError(
                f"batch of {batch.cost} exceeds remaining budget {self.cap - self.spent}")
        state.reveal(batch.pairs)
        self.spent += batch.cost


@dataclass
class ALConfig:
    initial_fully_labelled: int = 40
    iterations: int = 8
    budget_per_iteration: int = 36
    mc_passes: int = 20
    seed: int = 0
    normalize: bool = True       # PartAL min-max normalization (ablation switch)
    poison_debug: bool = False   # NaN-sentinel unrevealed targets
    train: TrainConfig = field(default_factory=TrainConfig)
    net: NetConfig = field(default_factory=NetConfig)

    def validate(self, bundle: DatasetBundle) -> None:
        if self.initial_fully_labelled < 1:
            raise ValueError("initial_fully_labelled must be at least 1")
        if self.initial_fully_labelled > len(bundle.train):
            raise ValueError("initial_fully_labelled exceeds the training pool")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.iterations > 0 and self.budget_per_iteration < 1:
            raise ValueError("budget_per_iteration must be at least 1")
        if self.mc_passes < 2:
            raise ValueError("mc_passes must be at least 2")


@dataclass
class IterationRow:
    iteration: int
    labels_used: int
    metrics: MetricsReport
    delta_mtl: float | None
    wall_time: float


@dataclass
class ALRunRecord:
    strategy: str
    seed: int
    rows: list[IterationRow]
    exhausted: bool = False
    norm_params: NormalizationParams | None = None

    @property
    def final(self) -> IterationRow:
        return self.rows[-1]


def stack_inputs(records: list[SampleRecord]) -> np.ndarray:
    return np.stack([r.input for r in records]).astype(np.float64)


def stack_targets(records: list[SampleRecord],
                  modalities: list[ModalitySpec]) -> dict[str, np.ndarray]:
    return {m.name: np.stack([r.targets[m.name] for r in records]) for m in modalities}


def evaluate_model(net: MultiTaskNet, inputs: np.ndarray,
                   targets: dict[str, np.ndarray], modalities: list[ModalitySpec],
                   injection: LabelInjection | None = None) -> MetricsReport:
    """Stage-2 metrics over a sample set (injection off unless provided)."""
    preds = predict(net, inputs, injection)
    values = []
    for m in modalities:
        p = preds[m.name]
        if m.kind == CATEGORICAL:
            v = metric_value(m, np.argmax(p, axis=1), targets[m.name])
        else:
            v = metric_value(m, p, targets[m.name])
        values.append(MetricValue(m.name, m.metric, v, m.higher_is_better))
    return MetricsReport(values=values)


def _effective_budget(strategy: str, budget: int, state: LabelState, K: int) -> int:
    if strategy in ("partal", "random_partial"):
        available = len(state.candidate_pairs())
        return min(budget, available)
    if budget % K != 0:
        raise ValueError(f"budget {budget} not divisible by K={K} for strategy {strategy}")
    available = state.fully_unlabelled_ids().size * K
    return min(budget, available - available % K)


def _needs_uncertainty(strategy: str) -> bool:
    return strategy in ("partal", "rbal")


def _pool_matrix(net: MultiTaskNet, bundle: DatasetBundle, state: LabelState,
                 pool_targets: dict[str, np.ndarray], inputs: np.ndarray,
                 mc_passes: int, rng: SeededRng) -> UncertaintyMatrix:
    ids = state.partially_unlabelled_ids()
    return pool_uncertainties(
        net, inputs[ids],
        {name: arr[ids] for name, arr in pool_targets.items()},
        state.mask[ids], ids, mc_passes, rng)


def _select(strategy: str, net: MultiTaskNet, bundle: DatasetBundle, state: LabelState,
            matrix: UncertaintyMatrix | None, budget: int, inputs: np.ndarray,
            rng: SeededRng) -> AcquisitionBatch:
    K = bundle.num_modalities
    if strategy == "partal":
        return select_partal(matrix, budget)
    if strategy == "random":
        return select_random_full(state.fully_unlabelled_ids(), budget, K, rng)
    if strategy == "random_partial":
        return select_random_partial(state.candidate_pairs(), budget, rng)
    if strategy == "rbal":
        return select_rbal(matrix, budget, K)
    if strategy == "coreset":
        unlabelled = state.fully_unlabelled_ids()
        labelled = state.labelled_any_ids()
        return select_coreset(net, inputs[unlabelled], unlabelled,
                              inputs[labelled], budget, K)
    if strategy == "lloss":
        return select_learning_loss(net, inputs[state.fully_unlabelled_ids()],
                                    state.fully_unlabelled_ids(), budget, K)
    raise ValueError(f"unknown strategy {strategy!r}; valid: {', '.join(STRATEGY_NAMES)}")


def run_al(bundle: DatasetBundle, strategy: str, config: ALConfig,
           reference: MetricsReport | None = None) -> ALRunRecord:
    """One active-learning run; returns the per-iteration record.

    Each iteration trains a fresh network on all labelled pairs, evaluates
    on the test set without injection, then (except after the final
    evaluation) estimates uncertainties where the strategy needs them,
    selects a batch within budget, and reveals it through the oracle.
    """
    if strategy not in STRATEGY_NAMES:
        raise ValueError(f"unknown strategy {strategy!r}; valid: {', '.join(STRATEGY_NAMES)}")
    config.validate(bundle)
    K = bundle.num_modalities
    state = LabelState(len(bundle.train), K,
                       list(range(config.initial_fully_labelled)))
    oracle = Oracle(bundle.train, cap=config.iterations * config.budget_per_iteration)
    root = SeededRng(config.seed)

    train_inputs = stack_inputs(bundle.train)
    test_inputs = stack_inputs(bundle.test)
    test_targets = stack_targets(bundle.test, bundle.modalities)
    initial_units = config.initial_fully_labelled * K

    record = ALRunRecord(strategy=strategy, seed=config.seed, rows=[])
    net = None
    for it in range(config.iterations + 1):
        t0 = time.perf_counter()
        if net is None or config.train.reinit_each_iteration:
            net = MultiTaskNet(bundle.modalities, bundle.H, bundle.W, bundle.C_in,
                               config.net, root.split(_TAG_NET, it))
        pool = make_pool(bundle.train, state.mask, bundle.modalities,
                         poison_unlabelled=config.poison_debug)
        tc = replace(config.train, seed=root.split(_TAG_TRAIN, it).fold())
        train(net, pool, tc)
        report = evaluate_model(net, test_inputs, test_targets, bundle.modalities)
        report.delta_mtl = delta_mtl(report, reference) if reference is not None else None
        record.rows.append(IterationRow(
            iteration=it,
            labels_used=initial_units + oracle.spent,
            metrics=report,
            delta_mtl=report.delta_mtl,
            wall_time=time.perf_counter() - t0,
        ))
        if it == config.iterations or record.exhausted:
            break

        budget = _effective_budget(strategy, config.budget_per_iteration, state, K)
        if budget < config.budget_per_iteration:
            record.exhausted = True
        if budget == 0:
            break

        matrix = None
        if _needs_uncertainty(strategy):
            matrix = _pool_matrix(net, bundle, state, pool.targets, train_inputs,
                                  config.mc_passes, root.split(_TAG_MC, it))
            if strategy == "partal":
                if config.normalize:
                    if record.norm_params is None:
                        record.norm_params = fit_normalization(
                            matrix.raw, iteration=it + 1,
                            candidate_mask=matrix.candidate_mask)
                    matrix.normalized = apply_normalization(matrix.raw, record.norm_params)
                else:
                    matrix.normalized = matrix.raw.copy()

        batch = _select(strategy, net, bundle, state, matrix, budget,
                        train_inputs, root.split(_TAG_SELECT, it))
        if batch.exhausted:
            record.exhausted = True
        oracle.reveal(state, batch)
    return record


def train_initial_model(bundle: DatasetBundle, config: ALConfig
                        ) -> tuple[LabelState, MultiTaskNet, SeededRng]:
    """The state and model a run of ``config`` would have at iteration 0.

    Uses the same stream tags as :func:`run_al`, so probes on this model see
    exactly what the loop's first iteration saw.
    """
    config.validate(bundle)
    state = LabelState(len(bundle.train), bundle.num_modalities,
                       list(range(config.initial_fully_labelled)))
    root = SeededRng(config.seed)
    net = MultiTaskNet(bundle.modalities, bundle.H, bundle.W, bundle.C_in,
                       config.net, root.split(_TAG_NET, 0))
    pool = make_pool(bundle.train, state.mask, bundle.modalities)
    train(net, pool, replace(config.train, seed=root.split(_TAG_TRAIN, 0).fold()))
    return state, net, root


@dataclass
class FullSupervisionResult:
    report: MetricsReport
    net: MultiTaskNet


def run_full_supervision(bundle: DatasetBundle, train_config: TrainConfig,
                         net_config: NetConfig) -> FullSupervisionResult:
    """Train on every label of every training sample; the reference point."""
    root = SeededRng(train_config.seed).split(_TAG_FULLSUP)
    net = MultiTaskNet(bundle.modalities, bundle.H, bundle.W, bundle.C_in,
                       net_config, root.split(0))
    mask = np.ones((len(bundle.train), bundle.num_modalities), dtype=bool)
    pool = make_pool(bundle.train, mask, bundle.modalities)
    tc = replace(train_config, seed=root.split(1).fold())
    train(net, pool, tc)
    report = evaluate_model(net, stack_inputs(bundle.test),
                            stack_targets(bundle.test, bundle.modalities),
                            bundle.modalities)
    return FullSupervisionResult(report=report, net=net)


def delta_gap(record: ALRunRecord, full: MetricsReport) -> dict[str, float]:
    """Final-iteration metric minus the full-supervision metric, per modality."""
    final = record.final.metrics.by_name()
    ref = full.by_name()
    if set(final) != set(ref):
        raise ValueError("run and reference cover different modalities")
    return {name: final[name].value - ref[name].value for name in ref}


def hardest_examples_probe(net: MultiTaskNet, bundle: DatasetBundle, state: LabelState,
                           strategies: list[str], per_strategy_budget: int,
                           mc_passes: int, rng: SeededRng) -> dict[str, dict[str, float | None]]:
    """Mean current-model error on each strategy's freshly selected samples.

    All strategies see the same immutable pool snapshot.  For pair-level
    strategies a modality's mean covers only the samples whose pair was
    selected for it; a modality no pair landed on reports None.
    """
    if per_strategy_budget == 0:
        return {s: {} for s in strategies}
    inputs = stack_inputs(bundle.train)
    pool_targets = stack_targets(bundle.train, bundle.modalities)
    preds = predict(net, inputs)

    matrix = None
    if any(_needs_uncertainty(s) for s in strategies):
        matrix = _pool_matrix(net, bundle, state, pool_targets, inputs,
                              mc_passes, rng.split(_TAG_MC))
        params = fit_normalization(matrix.raw, iteration=1,
                                   candidate_mask=matrix.candidate_mask)
        matrix.normalized = apply_normalization(matrix.raw, params)

    out: dict[str, dict[str, float | None]] = {}
    for si, strategy in enumerate(strategies):
        batch = _select(strategy, net, bundle, state, matrix, per_strategy_budget,
                        inputs, rng.split(_TAG_SELECT, si))
        per_mod: dict[str, float | None] = {}
        for k, m in enumerate(bundle.modalities):
            ids = sorted(sid for sid, kk in batch.pairs if kk == k)
            if not ids:
                per_mod[m.name] = None
                continue
            p = preds[m.name][ids]
            t = pool_targets[m.name][ids]
            if m.kind == CATEGORICAL:
                per_mod[m.name] = metric_value(m, np.argmax(p, axis=1), t)
            else:
                per_mod[m.name] = metric_value(m, p, t)
        out[strategy] = per_mod
    return out


def partial_inference_probe(net: MultiTaskNet, bundle: DatasetBundle
                            ) -> list[tuple[tuple[str, ...], str, float]]:
    """Stage-2 metric of every target under every proper injected subset.

    Returns (provided_subset, target, value) rows for all subsets of size
    0..K-1 and all targets outside the subset, ordered by subset size.
    """
    mods = bundle.modalities
    names = [m.name for m in mods]
    test_inputs = stack_inputs(bundle.test)
    test_targets = stack_targets(bundle.test, mods)
    rows = []
    for size in range(len(mods)):
        for subset in _subsets(names, size):
            injection = LabelInjection(
                values={n: test_targets[n] for n in subset}) if subset else None
            report = evaluate_model(net, test_inputs, test_targets, mods, injection)
            for m in mods:
                if m.name in subset:
                    continue
                rows.append((subset, m.name, report.value(m.name)))
    return rows


def _subsets(names: list[str], size: int) -> list[tuple[str, ...]]:
    from itertools import combinations
    return [tuple(c) for c in combinations(names, size)]


def results_header(modalities: list[ModalitySpec], with_gaps: bool = True) -> list[str]:
    cols = ["iteration", "labels_used", "strategy", "seed"]
    cols += [f"{m.name}_{m.metric}" for m in modalities]
    cols.append("delta_mtl")
    if with_gaps:
        cols += [f"delta_{m.name}_{m.metric}" for m in modalities]
    return cols


def record_rows(record: ALRunRecord, modalities: list[ModalitySpec],
                gaps: dict[str, float] | None = None,
                with_gaps: bool = True) -> list[list[str]]:
    """CSV rows for one run; gap columns filled on the final row only."""
    out = []
    for row in record.rows:
        vals = [str(row.iteration), str(row.labels_used), record.strategy,
                str(record.seed)]
        vals += [repr(row.metrics.value(m.name)) for m in modalities]
        vals.append("" if row.delta_mtl is None else repr(row.delta_mtl))
        if with_gaps:
            is_final = row.iteration == record.rows[-1].iteration
            if gaps is not None and is_final:
                vals += [repr(gaps[m.name]) for m in modalities]
            else:
                vals += ["" for _ in modalities]
        out.append(vals)
    return out


def write_results_csv(path: str | Path, records: list[ALRunRecord],
                      modalities: list[ModalitySpec],
                      gaps: dict[tuple[str, int], dict[str, float]] | None = None,
                      with_gaps: bool = True) -> None:
    """Merged results, sorted by (strategy, seed, iteration)."""
    records = sorted(records, key=lambda r: (r.strategy, r.seed))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(results_header(modalities, with_gaps))
        for record in records:
            g = gaps.get((record.strategy, record.seed)) if gaps else None
            writer.writerows(record_rows(record, modalities, g, with_gaps))
