"""Repeated-background study: sweep background sizes, resample, explain, aggregate.

Every (size, simulation) cell draws its own background with a seed derived
from the master seed, so cells are independent and can run in any order.
Aggregation happens after all cells of a size are collected, in simulation
index order, which keeps reports bit-identical across thread counts.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .ann import ModelWeights
from .data import DataTable
from .explainer import explain_deep, sample_background
from .importance import rank_variables, variable_importance
from .metrics import MIN_LEN_BLEU, mean_pairwise, variance_sums

log = logging.getLogger(__name__)

REPORT_FORMAT = "shapstab-report v1"
MASK64 = (1 << 64) - 1

PRESETS = {
    "desk": {"background_sizes": (50, 100, 200, 400), "simulations_per_size": 20},
    "paper": {"background_sizes": (100, 200, 300, 400, 500, 1000), "simulations_per_size": 100},
}


class StudyError(RuntimeError):
    """A simulation cell failed; ``m`` and ``simulation`` locate it."""

    def __init__(self, m: int, simulation: int, cause: Exception):
        super().__init__(f"simulation {simulation} at background size {m} failed: {cause}")
        self.m = m
        self.simulation = simulation
        self.cause = cause


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master_seed: int, size_index: int, simulation_index: int) -> int:
    """64-bit seed for one study cell.

    ``splitmix64(splitmix64(master) ^ (size_index << 32 | simulation_index))``.
    Every step is a bijection on 64-bit words, so for a fixed master seed the
    map is injective while both indices are below 2**32.
    """
    if not (0 <= size_index < 1 << 32 and 0 <= simulation_index < 1 << 32):
        raise ValueError("size and simulation indices must fit in 32 bits")
    packed = (size_index << 32) | simulation_index
    return _splitmix64(_splitmix64(master_seed & MASK64) ^ packed)


@dataclass
class StudyConfig:
    model: ModelWeights
    train: DataTable
    explain: DataTable
    background_sizes: Sequence[int] = PRESETS["desk"]["background_sizes"]
    simulations_per_size: int = PRESETS["desk"]["simulations_per_size"]
    master_seed: int = 0

    def validate(self):
        if self.simulations_per_size < 2:
            raise ValueError(f"at least 2 simulations per size are required, got {self.simulations_per_size}")
        if not self.background_sizes:
            raise ValueError("no background sizes given")
        for m in self.background_sizes:
            if not 1 <= m <= self.train.n_rows:
                raise ValueError(
                    f"background size {m} outside [1, {self.train.n_rows}] (training rows)"
                )
        if self.train.n_vars < MIN_LEN_BLEU:
            raise ValueError(f"quartile BLEU needs at least {MIN_LEN_BLEU} variables, got {self.train.n_vars}")
        if self.explain.n_rows == 0:
            raise ValueError("explanation table is empty")
        if self.train.n_vars != self.model.n_inputs or self.explain.n_vars != self.model.n_inputs:
            raise ValueError("model, training and explanation tables disagree on the number of variables")


@dataclass
class SizeResult:
    m: int
    seeds: list[int]
    variance_sum: np.ndarray
    mean_bleu: float
    bleu_quartiles: tuple[float, ...]
    mean_jaccard: float
    jaccard_quartiles: tuple[float, ...]
    rankings: list[list[int]]  # per simulation, variable indices most important first


@dataclass
class StabilityReport:
    column_names: list[str]
    master_seed: int
    simulations_per_size: int
    n_train: int
    n_explain: int
    sizes: list[SizeResult] = field(default_factory=list)

    def by_size(self, m: int) -> SizeResult:
        for s in self.sizes:
            if s.m == m:
                return s
        raise KeyError(m)

    def to_dict(self) -> dict:
        names = self.column_names
        blocks = {}
        for s in self.sizes:
            blocks[str(s.m)] = {
                "m": s.m,
                "seeds": [int(x) for x in s.seeds],
                "variance_sum": {names[j]: float(v) for j, v in enumerate(s.variance_sum)},
                "mean_bleu": {"average": s.mean_bleu, "quartiles": list(s.bleu_quartiles)},
                "mean_jaccard": {"average": s.mean_jaccard, "quartiles": list(s.jaccard_quartiles)},
                "rankings": [[names[j] for j in order] for order in s.rankings],
            }
        return {
            "format": REPORT_FORMAT,
            "column_names": list(names),
            "master_seed": int(self.master_seed),
            "simulations_per_size": int(self.simulations_per_size),
            "n_train": int(self.n_train),
            "n_explain": int(self.n_explain),
            "background_sizes": [s.m for s in self.sizes],
            "sizes": blocks,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_dict(cls, doc: dict) -> StabilityReport:
        try:
            if doc.get("format") != REPORT_FORMAT:
                raise ValueError(f"unknown report format {doc.get('format')!r}")
            names = list(doc["column_names"])
            index = {n: j for j, n in enumerate(names)}
            sizes = []
            for m in doc["background_sizes"]:
                b = doc["sizes"][str(m)]
                sizes.append(
                    SizeResult(
                        m=int(b["m"]),
                        seeds=[int(x) for x in b["seeds"]],
                        variance_sum=np.array([float(b["variance_sum"][n]) for n in names]),
                        mean_bleu=float(b["mean_bleu"]["average"]),
                        bleu_quartiles=tuple(float(x) for x in b["mean_bleu"]["quartiles"]),
                        mean_jaccard=float(b["mean_jaccard"]["average"]),
                        jaccard_quartiles=tuple(float(x) for x in b["mean_jaccard"]["quartiles"]),
                        rankings=[[index[n] for n in r] for r in b["rankings"]],
                    )
                )
            report = cls(
                column_names=names,
                master_seed=int(doc["master_seed"]),
                simulations_per_size=int(doc["simulations_per_size"]),
                n_train=int(doc["n_train"]),
                n_explain=int(doc["n_explain"]),
                sizes=sizes,
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise ValueError(f"malformed report: missing or invalid field {exc}") from None
        if not report.sizes:
            raise ValueError("report contains no background sizes")
        for s in report.sizes:
            if len(s.rankings) != report.simulations_per_size:
                raise ValueError(f"size {s.m}: expected {report.simulations_per_size} rankings, got {len(s.rankings)}")
            for r in s.rankings:
                if sorted(r) != list(range(len(names))):
                    raise ValueError(f"size {s.m}: a ranking is not a permutation of the variables")
        return report

    @classmethod
    def load(cls, path) -> StabilityReport:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not a JSON report ({exc})") from None
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: not a JSON report")
        return cls.from_dict(doc)


def run_simulation(model: ModelWeights, train: DataTable, explain: DataTable, m: int, seed: int):
    """One cell: fresh background, deep attributions, ranking. Returns (shap, order)."""
    bg = sample_background(train, m, seed)
    attr = explain_deep(model, explain, bg)
    return attr.shap, rank_variables(variable_importance(attr)).order


def resolve_threads(threads: int | None = None) -> int:
    if threads is None:
        env = os.environ.get("THREADS", "").strip()
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def run_study(
    config: StudyConfig,
    threads: int | None = None,
    seed_fn: Callable[[int, int, int], int] = derive_seed,
) -> StabilityReport:
    """Run every (size, simulation) cell and aggregate per size.

    ``threads`` defaults to the ``THREADS`` environment variable, then the CPU
    count. BLAS is pinned to one thread inside the study so each cell is
    computed identically regardless of scheduling. ``seed_fn`` replaces the
    seed derivation, e.g. to force identical backgrounds in tests.
    """
    config.validate()
    n_workers = resolve_threads(threads)
    n_sims = config.simulations_per_size
    report = StabilityReport(
        column_names=list(config.train.column_names),
        master_seed=config.master_seed,
        simulations_per_size=n_sims,
        n_train=config.train.n_rows,
        n_explain=config.explain.n_rows,
    )

    def cell(m, seed, s):
        try:
            return run_simulation(config.model, config.train, config.explain, m, seed)
        except Exception as exc:  # noqa: BLE001 - re-raised with its location
            raise StudyError(m, s, exc) from exc

    with threadpool_limits(limits=1), ThreadPoolExecutor(max_workers=n_workers) as pool:
        for size_index, m in enumerate(config.background_sizes):
            seeds = [int(seed_fn(config.master_seed, size_index, s)) for s in range(n_sims)]
            futures = [pool.submit(cell, m, seed, s) for s, seed in enumerate(seeds)]
            results = [f.result() for f in futures]
            stack = np.stack([shap for shap, _ in results])
            orders = [order for _, order in results]
            bleu_avg, bleu_quart = mean_pairwise(orders, "bleu_q")
            jac_avg, jac_quart = mean_pairwise(orders, "jaccard_q")
            report.sizes.append(
                SizeResult(
                    m=int(m),
                    seeds=seeds,
                    variance_sum=variance_sums(stack),
                    mean_bleu=bleu_avg,
                    bleu_quartiles=bleu_quart,
                    mean_jaccard=jac_avg,
                    jaccard_quartiles=jac_quart,
                    rankings=[o.tolist() for o in orders],
                )
            )
            log.info("m=%d: mean BLEU_Q %.4f, mean Jaccard_Q %.4f", m, bleu_avg, jac_avg)
    return report
