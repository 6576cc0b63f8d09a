"""Acquisition functions: score unlabeled bags and pick the next one to query.

Two families: the aggregation-aware scores (entropy / mutual information of
the bag's weighted-sum predictive, which see the covariance between the
instances in a bag) and the classic per-instance baselines that ignore it.
"""

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from .model import LOG_2PI, PosteriorState, predict_individual_batch, sample_posterior
from .seeding import derive_seed

METHODS = ("aggmi", "aggent", "mi", "ent", "qbc", "emcm", "var", "maxn", "minn", "rand")

AGGMI = "aggmi"
AGGENT = "aggent"


@dataclass(frozen=True)
class AcquisitionScore:
    bag_id: int
    score: float
    method: str


def _aggregated_variance(post: PosteriorState, phi_a, theta_a) -> float:
    theta_a = np.asarray(theta_a, dtype=np.float64)
    psi = np.asarray(phi_a, dtype=np.float64) @ theta_a
    z = post.whiten(psi)
    return float(theta_a @ theta_a) / post.hyper.beta + float(z @ z)


def score_agg_entropy(post: PosteriorState, phi_a, theta_a) -> float:
    """Entropy of the bag's aggregated-output predictive Gaussian."""
    return gaussian_entropy(_aggregated_variance(post, phi_a, theta_a))


def score_agg_mi(post: PosteriorState, phi_a, theta_a) -> float:
    """Mutual information between the bag's aggregated output and the weights.

    Equals the aggregated entropy minus the entropy of the output given the
    weights, which collapses to
    0.5 * (log[theta^T (I/beta + Phi^T S Phi) theta] - log[||theta||^2 / beta])
    and is always >= 0.
    """
    theta_a = np.asarray(theta_a, dtype=np.float64)
    v = _aggregated_variance(post, phi_a, theta_a)
    noise = float(theta_a @ theta_a) / post.hyper.beta
    return 0.5 * (math.log(v) - math.log(noise))


def gaussian_entropy(variance: float) -> float:
    if variance <= 0.0:
        raise ValueError(f"entropy needs a positive variance, got {variance}")
    return 0.5 * (math.log(variance) + LOG_2PI + 1.0)


def score_sum_entropy(post: PosteriorState, phi_a) -> float:
    """Sum of per-instance predictive entropies; blind to within-bag covariance."""
    _, variances = predict_individual_batch(post, np.asarray(phi_a, dtype=np.float64))
    return float(np.sum(0.5 * (np.log(variances) + LOG_2PI + 1.0)))


def score_sum_mi(post: PosteriorState, phi_a) -> float:
    """Sum of per-instance mutual informations; blind to within-bag covariance."""
    _, variances = predict_individual_batch(post, np.asarray(phi_a, dtype=np.float64))
    return float(np.sum(0.5 * (np.log(variances) - math.log(1.0 / post.hyper.beta))))


def score_qbc(
    post: PosteriorState, phi_a, theta_a, committee_size: int, seed: int
) -> float:
    """Variance of the aggregated prediction across a posterior-sampled committee."""
    if committee_size < 2:
        raise ValueError("committee_size must be >= 2")
    psi = np.asarray(phi_a, dtype=np.float64) @ np.asarray(theta_a, dtype=np.float64)
    committee = sample_posterior(post, committee_size, seed)
    return float(np.var(psi @ committee))


def score_emcm(
    post: PosteriorState, phi_a, theta_a, committee_size: int, seed: int
) -> float:
    """Expected gradient norm of the bag's squared loss under posterior samples.

    The gradient of the per-bag squared loss wrt w is (ybar - w^T psi) psi,
    so the expected model change is E|ybar_l - mean| * ||psi|| with the
    committee predictions standing in for the unknown ybar.
    """
    if committee_size < 2:
        raise ValueError("committee_size must be >= 2")
    psi = np.asarray(phi_a, dtype=np.float64) @ np.asarray(theta_a, dtype=np.float64)
    committee = sample_posterior(post, committee_size, seed)
    center = float(post.m @ psi)
    return float(np.mean(np.abs(psi @ committee - center))) * float(np.linalg.norm(psi))


def score_var(x_a: np.ndarray) -> float:
    """Total variance of the bag's input rows (sum of per-feature population variances)."""
    x_a = np.atleast_2d(np.asarray(x_a, dtype=np.float64))
    return float(np.sum(x_a.var(axis=0)))


def score_count(bag, mode: str) -> float:
    """Bag size, negated for min-mode so that argmax selection serves both."""
    if mode == "max":
        return float(bag.size)
    if mode == "min":
        return -float(bag.size)
    raise ValueError(f"mode must be 'max' or 'min', got {mode!r}")


def score_random(bag_count: int, seed: int, step: int) -> np.ndarray:
    """I.i.d. Uniform[0,1) scores, deterministic per (seed, step)."""
    if bag_count < 1:
        raise ValueError("bag_count must be >= 1")
    rng = np.random.default_rng(derive_seed(seed, "random-scores", step))
    return rng.random(bag_count)


def select(scores: Sequence[AcquisitionScore]) -> int:
    """Bag id with the maximal score; ties break toward the smallest id."""
    if not scores:
        raise ValueError("cannot select from an empty score list")
    for s in scores:
        if not math.isfinite(s.score):
            raise ValueError(f"non-finite score {s.score} for bag {s.bag_id}")
    best = max(scores, key=lambda s: (s.score, -s.bag_id))
    return best.bag_id


@dataclass(eq=False)
class BagFeatures:
    """Per-bag quantities precomputed once so scoring stays cheap per step."""

    ids: np.ndarray  # (B,)
    psi: np.ndarray  # (K, B), columns Phi_a theta_a
    weight_sq: np.ndarray  # (B,)
    sizes: np.ndarray  # (B,)
    input_variance: np.ndarray  # (B,)
    phi_columns: np.ndarray  # (K, sum N_a)
    col_offsets: np.ndarray  # (B + 1,)

    @classmethod
    def from_bags(cls, bags, phi_pool: np.ndarray, features: np.ndarray) -> "BagFeatures":
        cols = [phi_pool[:, b.instance_ids] for b in bags]
        offsets = np.zeros(len(bags) + 1, dtype=np.int64)
        np.cumsum([c.shape[1] for c in cols], out=offsets[1:])
        return cls(
            ids=np.asarray([b.id for b in bags], dtype=np.int64),
            psi=np.column_stack([c @ b.weights for c, b in zip(cols, bags)]),
            weight_sq=np.asarray([b.weight_norm_sq for b in bags]),
            sizes=np.asarray([b.size for b in bags], dtype=np.int64),
            input_variance=np.asarray(
                [score_var(features[b.instance_ids]) for b in bags]
            ),
            phi_columns=np.concatenate(cols, axis=1),
            col_offsets=offsets,
        )

    def take(self, positions: np.ndarray) -> "BagFeatures":
        """Subset to the bags at the given positions (e.g. the still-unlabeled ones)."""
        positions = np.asarray(positions, dtype=np.int64)
        spans = [
            np.arange(self.col_offsets[p], self.col_offsets[p + 1]) for p in positions
        ]
        offsets = np.zeros(positions.size + 1, dtype=np.int64)
        np.cumsum([sp.size for sp in spans], out=offsets[1:])
        keep = np.concatenate(spans) if spans else np.zeros(0, dtype=np.int64)
        return BagFeatures(
            ids=self.ids[positions],
            psi=self.psi[:, positions],
            weight_sq=self.weight_sq[positions],
            sizes=self.sizes[positions],
            input_variance=self.input_variance[positions],
            phi_columns=self.phi_columns[:, keep],
            col_offsets=offsets,
        )


def score_all(
    method: str,
    post: PosteriorState,
    feats: BagFeatures,
    committee_size: int = 25,
    committee_seed: int = 0,
    random_seed: int = 0,
    step: int = 0,
) -> np.ndarray:
    """Score every bag in `feats` under one method; returns an array aligned
    with feats.ids. Equivalent to calling the per-bag functions bag by bag,
    but with the linear algebra batched."""
    if method not in METHODS:
        raise ValueError(f"unknown acquisition method {method!r}")
    beta = post.hyper.beta
    if method in ("aggent", "aggmi"):
        v = feats.weight_sq / beta + post.quad_form_cov(feats.psi)
        if method == "aggent":
            return 0.5 * (np.log(v) + LOG_2PI + 1.0)
        return 0.5 * (np.log(v) - np.log(feats.weight_sq / beta))
    if method in ("ent", "mi"):
        _, variances = predict_individual_batch(post, feats.phi_columns)
        if method == "ent":
            per_instance = 0.5 * (np.log(variances) + LOG_2PI + 1.0)
        else:
            per_instance = 0.5 * (np.log(variances) - math.log(1.0 / beta))
        return np.add.reduceat(per_instance, feats.col_offsets[:-1])
    if method in ("qbc", "emcm"):
        committee = sample_posterior(post, committee_size, committee_seed)
        preds = feats.psi.T @ committee
        if method == "qbc":
            return preds.var(axis=1)
        centers = post.m @ feats.psi
        norms = np.linalg.norm(feats.psi, axis=0)
        return np.mean(np.abs(preds - centers[:, None]), axis=1) * norms
    if method == "var":
        return feats.input_variance.copy()
    if method == "maxn":
        return feats.sizes.astype(np.float64)
    if method == "minn":
        return -feats.sizes.astype(np.float64)
    return score_random(feats.ids.size, random_seed, step)
