"""The active-learning episode driver: score, select, query, refit, evaluate."""

import math
import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .acquisition import METHODS, AcquisitionScore, BagFeatures, score_all, select
from .bags import AggregationOracle, Bag, LabeledBag
from .basis import BasisSpec, eval_basis
from .model import HyperParams, PosteriorState, fit_posterior, optimize_hyperparams
from .seeding import derive_seed


@dataclass
class EpisodeConfig:
    """Everything one episode needs besides the data itself."""

    method: str
    n_queries: int
    seed: int
    hyper_init: str = "random"  # or "fixed" (lam = beta = 1)
    adam_steps: int = 1000
    adam_lr: float = 1e-3
    committee_size: int = 25
    reinit_hyper_each_query: bool = False
    record_timing: bool = True
    record_posteriors: bool = False
    basis_seed: Optional[int] = None  # provenance; checked against the basis if set
    basis_k: Optional[int] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.n_queries < 1:
            raise ValueError("n_queries must be >= 1")
        if self.hyper_init not in ("random", "fixed"):
            raise ValueError("hyper_init must be 'random' or 'fixed'")


@dataclass(frozen=True)
class QueryRecord:
    query_index: int
    bag_id: int
    score: float
    lam: float
    beta: float
    mse: float
    wall_ms: float


@dataclass
class EpisodeHistory:
    records: List[QueryRecord] = field(default_factory=list)
    posteriors: List[PosteriorState] = field(default_factory=list)

    @property
    def selected_bag_ids(self) -> List[int]:
        return [r.bag_id for r in self.records]

    @property
    def mse_curve(self) -> np.ndarray:
        return np.asarray([r.mse for r in self.records])


def init_hyperparams(seed: int, mode: str) -> HyperParams:
    """Random init draws log lam, log beta ~ Uniform(log 0.5, log 2)."""
    if mode == "fixed":
        return HyperParams(lam=1.0, beta=1.0)
    rng = np.random.default_rng(derive_seed(seed, "hyper-init"))
    log_lam, log_beta = rng.uniform(math.log(0.5), math.log(2.0), size=2)
    return HyperParams(lam=math.exp(log_lam), beta=math.exp(log_beta))


def evaluate_mse(
    post: PosteriorState, phi_test: np.ndarray, test_labels: np.ndarray
) -> float:
    """Mean squared error of the posterior-mean point predictions."""
    test_labels = np.asarray(test_labels, dtype=np.float64)
    if test_labels.size == 0:
        raise ValueError("test set is empty")
    residual = post.m @ phi_test - test_labels
    return float(np.mean(residual * residual))


def run_episode(
    config: EpisodeConfig,
    features: np.ndarray,
    basis: BasisSpec,
    bags: Sequence[Bag],
    oracle: AggregationOracle,
    test_indices: Sequence[int],
    test_labels: np.ndarray,
) -> EpisodeHistory:
    """Run one full active-learning episode of T queries.

    Per query: score every unlabeled bag under the configured method, select
    the argmax (ties to the smallest bag id), observe its aggregated output,
    move it to the labeled set, re-optimize the precision hyperparameters on
    the labeled set, refit the posterior, and record the test MSE. Before the
    first query the posterior is the prior under the initialized
    hyperparameters.
    """
    if config.n_queries > len(bags):
        raise ValueError(
            f"n_queries={config.n_queries} exceeds the {len(bags)} available bags"
        )
    if config.basis_k is not None and basis.n_outputs != config.basis_k:
        raise ValueError("config.basis_k does not match the supplied basis")
    test_indices = np.asarray(test_indices, dtype=np.int64)
    bag_instance_ids = np.concatenate([b.instance_ids for b in bags])
    if np.intersect1d(bag_instance_ids, test_indices).size:
        raise ValueError("bags overlap the test instances")

    k = basis.n_outputs
    phi_pool = eval_basis(basis, features)
    order = sorted(range(len(bags)), key=lambda i: bags[i].id)
    bags = [bags[i] for i in order]
    feats = BagFeatures.from_bags(bags, phi_pool, features)
    phi_test = phi_pool[:, test_indices]

    hyper = init_hyperparams(config.seed, config.hyper_init)
    posterior = fit_posterior([], [], hyper, k=k)
    unlabeled = list(range(len(bags)))
    pos_by_id = {b.id: i for i, b in enumerate(bags)}
    labeled: List[LabeledBag] = []
    labeled_phis: List[np.ndarray] = []
    history = EpisodeHistory()
    if config.record_posteriors:
        history.posteriors.append(posterior)

    for t in range(1, config.n_queries + 1):
        t_start = time.perf_counter()
        live = feats.take(np.asarray(unlabeled, dtype=np.int64))
        raw = score_all(
            config.method,
            posterior,
            live,
            committee_size=config.committee_size,
            committee_seed=derive_seed(config.seed, "committee", t),
            random_seed=derive_seed(config.seed, "rand"),
            step=t,
        )
        scores = [
            AcquisitionScore(bag_id=int(i), score=float(v), method=config.method)
            for i, v in zip(live.ids, raw)
        ]
        chosen_id = select(scores)
        chosen_score = next(s.score for s in scores if s.bag_id == chosen_id)
        pos = pos_by_id[chosen_id]
        bag = bags[pos]
        unlabeled.remove(pos)

        labeled.append(LabeledBag(bag=bag, aggregated_output=oracle.query(bag)))
        labeled_phis.append(phi_pool[:, bag.instance_ids])

        if config.adam_steps > 0:
            start = (
                init_hyperparams(derive_seed(config.seed, "reinit", t), config.hyper_init)
                if config.reinit_hyper_each_query
                else hyper
            )
            hyper = optimize_hyperparams(
                labeled,
                labeled_phis,
                start,
                steps=config.adam_steps,
                lr=config.adam_lr,
                k=k,
            )
        posterior = fit_posterior(labeled, labeled_phis, hyper, k=k)
        mse = evaluate_mse(posterior, phi_test, test_labels)
        wall_ms = (time.perf_counter() - t_start) * 1000.0 if config.record_timing else 0.0
        history.records.append(
            QueryRecord(
                query_index=t,
                bag_id=chosen_id,
                score=chosen_score,
                lam=hyper.lam,
                beta=hyper.beta,
                mse=mse,
                wall_ms=wall_ms,
            )
        )
        if config.record_posteriors:
            history.posteriors.append(posterior)
    return history
