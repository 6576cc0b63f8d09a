"""Feature maps: random cosine features approximating an RBF kernel, and a
plain identity-plus-bias basis for small hand-checkable tests."""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

RANDOM_FEATURES = "random_features"
IDENTITY_WITH_BIAS = "identity_with_bias"


@dataclass(eq=False)
class BasisSpec:
    """Frozen definition of a feature map x -> phi(x) in R^K.

    For random features, row k < K-1 of the output is
    sqrt(2/(K-1)) * cos(-B_k x + c_k) and the last row is the constant 1
    (the bias feature). The inner products of the non-bias rows approximate
    exp(-||x - x'||^2 / 2) for unit-lengthscale inputs.
    """

    kind: str
    input_dim: int
    n_outputs: int
    projection: Optional[np.ndarray] = None  # (K-1, D)
    phases: Optional[np.ndarray] = None  # (K-1,)

    def __post_init__(self):
        if self.kind == RANDOM_FEATURES:
            if self.n_outputs < 2:
                raise ValueError("random features need K >= 2 (one cosine plus bias)")
            self.projection = np.asarray(self.projection, dtype=np.float64)
            self.phases = np.asarray(self.phases, dtype=np.float64)
            if self.projection.shape != (self.n_outputs - 1, self.input_dim):
                raise ValueError("projection must have shape (K-1, D)")
            if self.phases.shape != (self.n_outputs - 1,):
                raise ValueError("phases must have shape (K-1,)")
            if not (
                np.all(np.isfinite(self.projection)) and np.all(np.isfinite(self.phases))
            ):
                raise ValueError("projection and phases must be finite")
        elif self.kind == IDENTITY_WITH_BIAS:
            if self.n_outputs != self.input_dim + 1:
                raise ValueError("identity basis has K = D + 1")
        else:
            raise ValueError(f"unknown basis kind {self.kind!r}")


def sample_random_features(input_dim: int, n_outputs: int, seed: int) -> BasisSpec:
    """Draw a random-features basis: projections N(0,1), phases Uniform(0, 2*pi)."""
    if input_dim < 1:
        raise ValueError(f"input_dim must be >= 1, got {input_dim}")
    if n_outputs < 2:
        raise ValueError(f"n_outputs must be >= 2, got {n_outputs}")
    rng = np.random.default_rng(seed)
    return BasisSpec(
        kind=RANDOM_FEATURES,
        input_dim=input_dim,
        n_outputs=n_outputs,
        projection=rng.standard_normal((n_outputs - 1, input_dim)),
        phases=rng.uniform(0.0, 2.0 * math.pi, size=n_outputs - 1),
    )


def identity_with_bias(input_dim: int) -> BasisSpec:
    return BasisSpec(kind=IDENTITY_WITH_BIAS, input_dim=input_dim, n_outputs=input_dim + 1)


def eval_basis(spec: BasisSpec, X: np.ndarray) -> np.ndarray:
    """Evaluate the feature map on rows of X, returning Phi with shape (K, N)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != spec.input_dim:
        raise ValueError(
            f"X has {X.shape[1]} columns but the basis expects {spec.input_dim}"
        )
    ones = np.ones((1, X.shape[0]))
    if spec.kind == IDENTITY_WITH_BIAS:
        return np.vstack([X.T, ones])
    scale = math.sqrt(2.0 / (spec.n_outputs - 1))
    cosines = scale * np.cos(spec.phases[:, None] - spec.projection @ X.T)
    return np.vstack([cosines, ones])


def basis_to_dict(spec: BasisSpec) -> dict:
    d = {"kind": spec.kind, "input_dim": spec.input_dim, "n_outputs": spec.n_outputs}
    if spec.kind == RANDOM_FEATURES:
        d["projection"] = spec.projection.tolist()
        d["phases"] = spec.phases.tolist()
    return d


def basis_from_dict(d: dict) -> BasisSpec:
    if d["kind"] == IDENTITY_WITH_BIAS:
        return identity_with_bias(int(d["input_dim"]))
    return BasisSpec(
        kind=d["kind"],
        input_dim=int(d["input_dim"]),
        n_outputs=int(d["n_outputs"]),
        projection=np.asarray(d["projection"], dtype=np.float64),
        phases=np.asarray(d["phases"], dtype=np.float64),
    )
