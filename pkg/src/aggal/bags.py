"""Instance sets (bags) with aggregation weights, and the aggregated-label oracle."""

import json
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np


@dataclass(eq=False)
class Bag:
    """A group of pool instances whose outputs are only observable as a weighted sum."""

    id: int
    instance_ids: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.instance_ids = np.asarray(self.instance_ids, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.instance_ids.ndim != 1 or self.instance_ids.size == 0:
            raise ValueError("a bag needs at least one instance")
        if self.weights.shape != self.instance_ids.shape:
            raise ValueError("weights length must equal instance count")
        if float(self.weights @ self.weights) <= 0.0:
            raise ValueError("bag weights must have positive squared norm")

    @property
    def size(self) -> int:
        return self.instance_ids.size

    @property
    def weight_norm_sq(self) -> float:
        return float(self.weights @ self.weights)


@dataclass(eq=False)
class LabeledBag:
    bag: Bag
    aggregated_output: float

    def __post_init__(self):
        self.aggregated_output = float(self.aggregated_output)
        if not np.isfinite(self.aggregated_output):
            raise ValueError("aggregated output must be finite")


def generate_bags(
    train_indices: Sequence[int], min_size: int, max_size: int, seed: int
) -> List[Bag]:
    """Partition the training instances into randomly sized bags.

    Sizes are drawn i.i.d. uniform on [min_size, max_size]; when a draw
    exceeds the number of remaining instances the final bag takes all of
    them (possibly fewer than min_size). Weights default to all ones, i.e.
    sum aggregation.
    """
    idx = np.asarray(train_indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("train_indices must be non-empty")
    if not 1 <= min_size <= max_size <= idx.size:
        raise ValueError(
            f"require 1 <= min_size <= max_size <= {idx.size}, "
            f"got [{min_size}, {max_size}]"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(idx)
    bags = []
    pos = 0
    while pos < order.size:
        size = int(rng.integers(min_size, max_size + 1))
        size = min(size, order.size - pos)
        members = order[pos : pos + size]
        bags.append(Bag(id=len(bags), instance_ids=members, weights=np.ones(size)))
        pos += size
    return bags


class AggregationOracle:
    """Labeling authority that reveals only weighted sums of hidden labels.

    No public method or attribute exposes an individual label; the learner
    can only ever see aggregates.
    """

    def __init__(self, hidden_labels: np.ndarray):
        self._hidden_labels = np.asarray(hidden_labels, dtype=np.float64).copy()
        self._query_log: List[int] = []

    def query(self, bag: Bag) -> float:
        """Observe the aggregated output of a bag and log the access."""
        ids = bag.instance_ids
        if ids.min() < 0 or ids.max() >= self._hidden_labels.size:
            raise IndexError(
                f"bag {bag.id} references instances outside the label vector"
            )
        self._query_log.append(bag.id)
        return float(bag.weights @ self._hidden_labels[ids])

    @property
    def query_log(self) -> tuple:
        return tuple(self._query_log)

    @property
    def query_count(self) -> int:
        return len(self._query_log)


def average_to_sum(avg_value: float, n: int) -> float:
    """Convert an averaged aggregate to a summed one without seeing individual labels."""
    if n < 1:
        raise ValueError(f"set size must be >= 1, got {n}")
    return float(avg_value) * n


def bag_to_dict(bag: Bag) -> dict:
    return {
        "id": int(bag.id),
        "instances": bag.instance_ids.tolist(),
        "weights": bag.weights.tolist(),
    }


def bag_from_dict(d: dict) -> Bag:
    return Bag(id=int(d["id"]), instance_ids=d["instances"], weights=d["weights"])


def bags_to_json(bags: Sequence[Bag]) -> str:
    return json.dumps([bag_to_dict(b) for b in bags], indent=2)


def bags_from_json(text: str) -> List[Bag]:
    return [bag_from_dict(d) for d in json.loads(text)]
