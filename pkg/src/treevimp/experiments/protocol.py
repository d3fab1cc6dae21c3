"""Permutation-proxy association tables: air pollution data and simulation.

One protocol replicate draws a fresh train/test split, grows a bootstrap
forest on the training part, and records the test-MSE increase after
permuting each single variable and each pair of variables.  Replicates get
their own seed streams, so any thread count gives the same table.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Optional, Sequence

import numpy as np

from ..forest import ForestConfig, grow_forest, oob_mse
from ..tree import Dataset
from ..vimp import permuted_mse_gains
from .io import AssociationRow, AssociationTable, load_airquality

AIRQUALITY_ORDER = ("Temp", "Wind", "Solar", "Month", "Day")
SIMULATION_LABELS = ("a", "b", "c", "d", "e", "f")


@dataclass(frozen=True)
class ProtocolConfig:
    train_fraction: float = 0.63
    num_trees: int = 1000
    mtry: int = 3
    replicates: int = 1000
    min_node_size: int = 5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")
        if self.replicates < 1 or self.num_trees < 1:
            raise ValueError("replicates and num_trees must be >= 1")

    def fast(self) -> "ProtocolConfig":
        """Desk-scale settings: 200 trees, 100 replicates."""
        return replace(self, num_trees=200, replicates=100)


@dataclass(frozen=True)
class ReplicateResult:
    singles: np.ndarray
    pairs: np.ndarray
    reference_mse: float


def _rng(*key: int) -> np.random.Generator:
    seed, *spawn = key
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=tuple(spawn))))


def run_replicate(data: Dataset, cfg: ProtocolConfig, pairs: Sequence[tuple[int, int]],
                  rng: np.random.Generator) -> ReplicateResult:
    n = data.n
    n_train = int(round(cfg.train_fraction * n))
    if n_train < 2 or n - n_train < 2:
        raise ValueError("train/test split leaves fewer than 2 rows on one side")
    perm = rng.permutation(n)
    train, test = data.subset(np.sort(perm[:n_train])), data.subset(np.sort(perm[n_train:]))
    forest_seed = int(rng.integers(0, 2**63 - 1))
    forest = grow_forest(train, ForestConfig(num_trees=cfg.num_trees, mtry=min(cfg.mtry, data.d), bootstrap=True,
                                             min_node_size=cfg.min_node_size, seed=forest_seed))
    ref, _ = oob_mse(forest, train)
    var_sets = [(v,) for v in range(data.d)] + [tuple(p) for p in pairs]
    gains = permuted_mse_gains(forest, test, var_sets, rng)
    return ReplicateResult(gains[:data.d], gains[data.d:], ref)


def _run_jobs(jobs, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda job: job(), jobs))
    return [job() for job in jobs]


def _pair_order(data: Dataset, order: Optional[Sequence[str]]):
    names = data.column_names
    ranked = list(order) if order else list(names)
    idx = [names.index(c) for c in ranked]
    return [(idx[i], idx[j]) for i, j in itertools.combinations(range(len(idx)), 2)]


def _table(results: list[ReplicateResult], data: Dataset, pairs, labels, seed: int, config: dict,
           notes: list[str]) -> AssociationTable:
    singles = np.mean([r.singles for r in results], axis=0)
    paired = np.mean([r.pairs for r in results], axis=0)
    ref = float(np.mean([r.reference_mse for r in results]))
    rows = []
    for k, (v, w) in enumerate(pairs):
        additive = float(singles[v] + singles[w])
        assoc = float(paired[k]) - additive
        rows.append(AssociationRow(f"{labels[v]}:{labels[w]}", float(paired[k]), additive, assoc,
                                   assoc / ref * 100.0))
    return AssociationTable(rows, ref, len(results), seed, {labels[v]: float(s) for v, s in enumerate(singles)},
                            config, notes)


def run_protocol(data: Dataset, cfg: ProtocolConfig, order: Optional[Sequence[str]] = None,
                 threads: int = 1) -> tuple[AssociationTable, list[ReplicateResult]]:
    """Average ``cfg.replicates`` protocol replicates on one dataset.

    Replicate ``r`` uses the stream ``SeedSequence(cfg.seed, spawn_key=(r,))``.
    The reference MSE is the replicate-mean of the training forests' OOB MSE.
    """
    pairs = _pair_order(data, order)
    jobs = [lambda r=r: run_replicate(data, cfg, pairs, _rng(cfg.seed, r)) for r in range(cfg.replicates)]
    results = _run_jobs(jobs, threads)
    table = _table(results, data, pairs, data.column_names, cfg.seed, asdict(cfg), [])
    return table, results


def run_airquality(cfg: ProtocolConfig = ProtocolConfig(), threads: int = 1):
    """Air pollution table: cube-root ozone on Solar, Wind, Temp, Month, Day."""
    data, dropped = load_airquality()
    data = Dataset(data.X, np.cbrt(data.y), data.column_names, "Ozone^(1/3)")
    table, results = run_protocol(data, cfg, AIRQUALITY_ORDER, threads)
    table.notes += [
        f"complete cases only: {data.n} rows kept, {dropped} rows with missing values dropped",
        "response is the cube root of Ozone",
        "single-variable permutations are drawn independently of the pair permutations",
        "assoc_per_mse = 100 * association / replicate-mean out-of-bag MSE of the training forests",
    ]
    return table, results


def simulate_dataset(n: int, rng: np.random.Generator, signal: bool = True) -> Dataset:
    """``Y = 30 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 20 x1 x4 + 5 x5 + eps`` with a sixth noise input."""
    X = rng.random((n, 6))
    eps = rng.standard_normal(n)
    y = eps
    if signal:
        y = (30.0 * np.sin(np.pi * X[:, 0] * X[:, 1]) + 20.0 * (X[:, 2] - 0.5) ** 2
             + 20.0 * X[:, 0] * X[:, 3] + 5.0 * X[:, 4] + eps)
    return Dataset(X, y, list(SIMULATION_LABELS), "Y")


def run_simulation(cfg: ProtocolConfig = ProtocolConfig(), n: int = 100, num_datasets: int = 100,
                   threads: int = 1, signal: bool = True):
    """Protocol table averaged over independently simulated datasets.

    Dataset ``k`` is drawn from ``SeedSequence(seed, spawn_key=(k,))`` and its
    replicate ``r`` runs on ``SeedSequence(seed, spawn_key=(k, r))``.
    """
    if n < 10:
        raise ValueError("n must be >= 10")
    if num_datasets < 1:
        raise ValueError("num_datasets must be >= 1")
    datasets = [simulate_dataset(n, _rng(cfg.seed, k), signal) for k in range(num_datasets)]
    pairs = _pair_order(datasets[0], None)
    jobs = [lambda k=k, r=r: run_replicate(datasets[k], cfg, pairs, _rng(cfg.seed, k, r))
            for k in range(num_datasets) for r in range(cfg.replicates)]
    flat = _run_jobs(jobs, threads)
    per_dataset = [flat[k * cfg.replicates:(k + 1) * cfg.replicates] for k in range(num_datasets)]
    # each dataset weighs the same: average within, then across datasets
    means = [ReplicateResult(np.mean([r.singles for r in res], axis=0), np.mean([r.pairs for r in res], axis=0),
                             float(np.mean([r.reference_mse for r in res]))) for res in per_dataset]
    config = asdict(cfg) | {"n": n, "num_datasets": num_datasets, "signal": signal}
    table = _table(means, datasets[0], pairs, SIMULATION_LABELS, cfg.seed, config, [
        "x1..x6 are coded a..f; x6 is pure noise",
        "values are averaged over replicates within a dataset, then over datasets",
        "assoc_per_mse = 100 * association / dataset-mean out-of-bag MSE of the training forests",
    ])
    table.replicates = cfg.replicates
    return table, flat


def dump_replicates(results: list[ReplicateResult], labels: Sequence[str], pairs: Sequence[tuple[int, int]],
                    replicates_per_dataset: Optional[int] = None) -> str:
    """Per-replicate CSV (for spot-checking the averages).

    ``pairs`` must list every pair the replicates were run on, in run order.
    """
    if results and len(pairs) != len(results[0].pairs):
        raise ValueError(f"expected {len(results[0].pairs)} pairs, got {len(pairs)}")
    head = ["dataset", "replicate", "reference_mse"] + list(labels) + [f"{labels[v]}:{labels[w]}" for v, w in pairs]
    lines = [",".join(head)]
    per = replicates_per_dataset or len(results)
    for i, r in enumerate(results):
        vals = [str(i // per), str(i % per), repr(r.reference_mse)]
        vals += [repr(float(x)) for x in r.singles] + [repr(float(x)) for x in r.pairs]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"
