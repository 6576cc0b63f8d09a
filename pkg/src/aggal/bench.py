"""Benchmark harness: run a dataset x method x replicate experiment matrix,
write per-query CSV results, and summarize with paired significance tests."""

import csv
import io
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .acquisition import METHODS
from .bags import AggregationOracle, generate_bags
from .basis import BasisSpec, basis_from_dict, basis_to_dict, sample_random_features
from .datasets import (
    InstancePool,
    StandardizationStats,
    apply_standardizer,
    fit_standardizer,
    parse_csv,
    parse_libsvm,
    split_pool,
)
from .loop import EpisodeConfig, run_episode
from .model import PosteriorState
from .seeding import derive_seed
from .stats import paired_t_test


class ConfigError(ValueError):
    """The experiment configuration is unusable (exit code 2 territory)."""


class DataError(ValueError):
    """The data on disk is unreadable or inconsistent (exit code 3 territory)."""


_CONFIG_DEFAULTS = {
    "train_fraction": 0.8,
    "bag_min": 1,
    "bag_max": 20,
    "K": 128,
    "T": 30,
    "replicates": 50,
    "adam_steps": 1000,
    "adam_lr": 1e-3,
    "committee": 25,
    "label_column": -1,
    "hyper_init": "random",
    "reinit_hyper_each_query": False,
    "record_timing": True,
}


@dataclass
class ExperimentConfig:
    dataset: str
    format: str
    out: str
    master_seed: int
    methods: List[str]
    train_fraction: float = 0.8
    bag_min: int = 1
    bag_max: int = 20
    K: int = 128
    T: int = 30
    replicates: int = 50
    adam_steps: int = 1000
    adam_lr: float = 1e-3
    committee: int = 25
    label_column: Union[int, str] = -1  # CSV only
    hyper_init: str = "random"
    reinit_hyper_each_query: bool = False
    record_timing: bool = True

    def __post_init__(self):
        if self.format not in ("libsvm", "csv"):
            raise ConfigError(f"format must be 'libsvm' or 'csv', got {self.format!r}")
        if not self.methods:
            raise ConfigError("methods must be non-empty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; known: {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)")
        if not 1 <= self.bag_min <= self.bag_max:
            raise ConfigError("need 1 <= bag_min <= bag_max")
        if self.K < 2:
            raise ConfigError("K must be >= 2")

    @property
    def dataset_name(self) -> str:
        return Path(self.dataset).stem

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        required = ("dataset", "format", "out", "master_seed", "methods")
        missing = [kk for kk in required if kk not in d]
        if missing:
            raise ConfigError(f"config is missing required keys {missing}")
        known = set(required) | set(_CONFIG_DEFAULTS)
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"config has unknown keys {unknown}")
        kwargs = {kk: d[kk] for kk in d}
        return cls(**kwargs)


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    return ExperimentConfig.from_dict(raw)


def load_pool(
    path: Union[str, Path], fmt: str, label_column: Union[int, str] = -1
) -> InstancePool:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataError(f"cannot read dataset {path}: {e}") from None
    try:
        if fmt == "libsvm":
            return parse_libsvm(text)
        return parse_csv(text, label_column)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None


class ResultRow(NamedTuple):
    dataset: str
    method: str
    replicate: int
    query_index: int
    selected_bag_id: int
    mse: float
    lam: float
    beta: float
    wall_ms: float


RESULT_HEADER = (
    "dataset",
    "method",
    "replicate",
    "query_index",
    "selected_bag_id",
    "mse",
    "lambda",
    "beta",
    "wall_ms",
)

SUMMARY_HEADER = (
    "dataset",
    "method",
    "mean_mse",
    "stderr",
    "t_stat",
    "p_value",
    "best_equivalent",
)

CURVE_HEADER = ("dataset", "method", "query_index", "mean_mse", "stderr")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def _run_replicate(args) -> List[ResultRow]:
    """Worker for one replicate: shared split/bags/basis, one episode per method."""
    config, features, labels, replicate = args
    pool = InstancePool(features=features, labels=labels)
    split = split_pool(
        pool, config.train_fraction, derive_seed(config.master_seed, "split", replicate)
    )
    stats = fit_standardizer(pool, split.train_indices)
    std_pool = apply_standardizer(pool, stats)
    bag_max = min(config.bag_max, split.train_indices.size)
    bags = generate_bags(
        split.train_indices,
        min(config.bag_min, bag_max),
        bag_max,
        derive_seed(config.master_seed, "bags", replicate),
    )
    basis = sample_random_features(
        pool.n_features, config.K, derive_seed(config.master_seed, "basis", replicate)
    )
    rows: List[ResultRow] = []
    for method in config.methods:
        oracle = AggregationOracle(std_pool.labels)
        episode = EpisodeConfig(
            method=method,
            n_queries=config.T,
            seed=derive_seed(
                config.master_seed, "episode", config.dataset_name, method, replicate
            ),
            hyper_init=config.hyper_init,
            adam_steps=config.adam_steps,
            adam_lr=config.adam_lr,
            committee_size=config.committee,
            reinit_hyper_each_query=config.reinit_hyper_each_query,
            record_timing=config.record_timing,
            basis_seed=derive_seed(config.master_seed, "basis", replicate),
            basis_k=config.K,
        )
        history = run_episode(
            episode,
            std_pool.features,
            basis,
            bags,
            oracle,
            split.test_indices,
            std_pool.labels[split.test_indices],
        )
        rows.extend(
            ResultRow(
                dataset=config.dataset_name,
                method=method,
                replicate=replicate,
                query_index=r.query_index,
                selected_bag_id=r.bag_id,
                mse=r.mse,
                lam=r.lam,
                beta=r.beta,
                wall_ms=r.wall_ms,
            )
            for r in history.records
        )
    return rows


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> Path:
    """Run the full replicate matrix and write the results CSV atomically.

    Every replicate derives its own seeds from the master seed, so the
    output is byte-identical for a fixed config regardless of `jobs`
    (modulo the wall_ms timing column; set record_timing false to pin it).
    """
    pool = load_pool(config.dataset, config.format, config.label_column)
    tasks = [
        (config, pool.features, pool.labels, r) for r in range(config.replicates)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool_exec:
            per_replicate = list(pool_exec.map(_run_replicate, tasks))
    else:
        per_replicate = [_run_replicate(t) for t in tasks]
    rows = [row for chunk in per_replicate for row in chunk]
    rows.sort(key=lambda r: (r.dataset, r.method, r.replicate, r.query_index))
    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results_csv(out, rows)
    return out


def write_results_csv(path: Union[str, Path], rows: Sequence[ResultRow]) -> None:
    """Write rows with LF endings and 17-significant-digit floats via temp-file rename."""
    path = Path(path)
    buf = io.StringIO()
    buf.write(",".join(RESULT_HEADER) + "\n")
    for r in rows:
        buf.write(
            ",".join(
                (
                    r.dataset,
                    r.method,
                    str(r.replicate),
                    str(r.query_index),
                    str(r.selected_bag_id),
                    _fmt(r.mse),
                    _fmt(r.lam),
                    _fmt(r.beta),
                    _fmt(r.wall_ms),
                )
            )
            + "\n"
        )
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as f:
        f.write(buf.getvalue())
    os.replace(tmp, path)


def read_results_csv(path: Union[str, Path]) -> List[ResultRow]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataError(f"cannot read results {path}: {e}") from None
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != RESULT_HEADER:
        raise DataError(
            f"{path}: unexpected results header {header}; expected {list(RESULT_HEADER)}"
        )
    rows = []
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(RESULT_HEADER):
            raise DataError(f"{path}: line {lineno}: expected {len(RESULT_HEADER)} cells")
        try:
            rows.append(
                ResultRow(
                    dataset=rec[0],
                    method=rec[1],
                    replicate=int(rec[2]),
                    query_index=int(rec[3]),
                    selected_bag_id=int(rec[4]),
                    mse=float(rec[5]),
                    lam=float(rec[6]),
                    beta=float(rec[7]),
                    wall_ms=float(rec[8]),
                )
            )
        except ValueError as e:
            raise DataError(f"{path}: line {lineno}: {e}") from None
    return rows


class SummaryRow(NamedTuple):
    dataset: str
    method: str
    mean_mse: float
    stderr: float
    t_stat: float
    p_value: float
    best_equivalent: bool


class CurveRow(NamedTuple):
    dataset: str
    method: str
    query_index: int
    mean_mse: float
    stderr: float


def _stderr(values: np.ndarray) -> float:
    if values.size < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(values.size))


def summarize_results(
    rows: Sequence[ResultRow],
) -> Tuple[List[SummaryRow], List[CurveRow]]:
    """Aggregate per-query rows into Table-style means and Fig-style curves.

    Per (dataset, method): the MSE is averaged over queries within each
    replicate, then over replicates; each method is compared against the
    best-mean method of its dataset with a paired t-test over the
    replicate-level means (pairs matched by replicate index).
    """
    if not rows:
        raise DataError("no result rows to summarize")
    datasets = sorted({r.dataset for r in rows})
    methods = sorted({r.method for r in rows})
    replicates = sorted({r.replicate for r in rows})
    queries = sorted({r.query_index for r in rows})
    by_cell = {}
    for r in rows:
        by_cell[(r.dataset, r.method, r.replicate, r.query_index)] = r.mse
    gaps = [
        cell
        for cell in (
            (d, m, rep, q)
            for d in datasets
            for m in methods
            for rep in replicates
            for q in queries
        )
        if cell not in by_cell
    ]
    if gaps:
        shown = ", ".join(map(str, gaps[:10]))
        more = f" (+{len(gaps) - 10} more)" if len(gaps) > 10 else ""
        raise DataError(f"results grid has {len(gaps)} missing cells: {shown}{more}")

    summary: List[SummaryRow] = []
    curves: List[CurveRow] = []
    for d in datasets:
        rep_means = {
            m: np.asarray(
                [
                    np.mean([by_cell[(d, m, rep, q)] for q in queries])
                    for rep in replicates
                ]
            )
            for m in methods
        }
        overall = {m: float(v.mean()) for m, v in rep_means.items()}
        best = min(methods, key=lambda m: (overall[m], m))
        for m in methods:
            if m == best:
                t_stat, p_value = 0.0, 1.0
            else:
                test = paired_t_test(rep_means[m], rep_means[best])
                t_stat, p_value = test.t_stat, test.p_value
            summary.append(
                SummaryRow(
                    dataset=d,
                    method=m,
                    mean_mse=overall[m],
                    stderr=_stderr(rep_means[m]),
                    t_stat=t_stat,
                    p_value=p_value,
                    best_equivalent=(m == best) or p_value > 0.05,
                )
            )
            for q in queries:
                at_q = np.asarray([by_cell[(d, m, rep, q)] for rep in replicates])
                curves.append(
                    CurveRow(
                        dataset=d,
                        method=m,
                        query_index=q,
                        mean_mse=float(at_q.mean()),
                        stderr=_stderr(at_q),
                    )
                )
    return summary, curves


def write_summary_csv(path: Union[str, Path], rows: Sequence[SummaryRow]) -> None:
    _write_csv(path, SUMMARY_HEADER, rows)


def write_curves_csv(path: Union[str, Path], rows: Sequence[CurveRow]) -> None:
    _write_csv(path, CURVE_HEADER, rows)


def _write_csv(path, header, rows) -> None:
    path = Path(path)
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for r in rows:
        buf.write(",".join(_fmt(v) if not isinstance(v, str) else v for v in r) + "\n")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as f:
        f.write(buf.getvalue())
    os.replace(tmp, path)


@dataclass
class Checkpoint:
    """Enough state to re-score bags outside a running episode."""

    posterior: PosteriorState
    basis: BasisSpec
    standardizer: StandardizationStats
    dataset: str
    dataset_format: str
    method: str = "aggmi"
    label_column: Union[int, str] = -1


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> None:
    payload = {
        "posterior": ckpt.posterior.to_dict(),
        "basis": basis_to_dict(ckpt.basis),
        "standardizer": ckpt.standardizer.to_dict(),
        "dataset": ckpt.dataset,
        "dataset_format": ckpt.dataset_format,
        "method": ckpt.method,
        "label_column": ckpt.label_column,
    }
    Path(path).write_text(json.dumps(payload))


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        payload = json.loads(path.read_text())
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise DataError(f"checkpoint {path} is not valid JSON: {e}") from None
    return Checkpoint(
        posterior=PosteriorState.from_dict(payload["posterior"]),
        basis=basis_from_dict(payload["basis"]),
        standardizer=StandardizationStats.from_dict(payload["standardizer"]),
        dataset=payload["dataset"],
        dataset_format=payload["dataset_format"],
        method=payload.get("method", "aggmi"),
        label_column=payload.get("label_column", -1),
    )
