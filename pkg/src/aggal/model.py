"""Closed-form Bayesian inference for linear basis models observed through
weighted-sum aggregates.

The weights w of y = w^T phi(x) + noise get an isotropic Gaussian prior with
precision lam; observation noise has precision beta. A bag with feature
columns Phi_a and aggregation weights theta_a contributes one Gaussian
observation ybar_a ~ N(psi_a^T w, s_a / beta) where psi_a = Phi_a theta_a and
s_a = ||theta_a||^2, so the posterior over w stays Gaussian:

    S^-1 = lam I + beta * sum_a psi_a psi_a^T / s_a
    m    = beta * S * sum_a (ybar_a / s_a) psi_a

Everything downstream (predictives, marginal likelihood, entropy and mutual
information scores) reads off this state.
"""

import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numba import njit
from scipy.linalg import cho_solve, solve_triangular

from .bags import LabeledBag

LOG_2PI = math.log(2.0 * math.pi)


class NumericalError(RuntimeError):
    """Linear algebra failed beyond salvage (e.g. Cholesky after jitter escalation)."""


@dataclass(frozen=True)
class HyperParams:
    """Prior precision lam and noise precision beta, both strictly positive."""

    lam: float
    beta: float

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lam must be finite and > 0, got {self.lam}")
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be finite and > 0, got {self.beta}")


@dataclass(eq=False)
class PosteriorState:
    """Gaussian posterior N(m, S) over the weights, stored via chol(S^-1)."""

    m: np.ndarray
    prec_chol: np.ndarray  # lower triangular L with L L^T = S^-1
    hyper: HyperParams

    @property
    def k(self) -> int:
        return self.m.size

    def whiten(self, v: np.ndarray) -> np.ndarray:
        """L^-1 v, so that ||whiten(v)||^2 = v^T S v."""
        return solve_triangular(self.prec_chol, v, lower=True)

    def quad_form_cov(self, V: np.ndarray) -> np.ndarray:
        """Column-wise v^T S v for the columns of V."""
        z = self.whiten(V)
        return np.sum(z * z, axis=0)

    def covariance(self) -> np.ndarray:
        return cho_solve((self.prec_chol, True), np.eye(self.k))

    def precision(self) -> np.ndarray:
        return self.prec_chol @ self.prec_chol.T

    def to_dict(self) -> dict:
        return {
            "m": self.m.tolist(),
            "prec_chol": self.prec_chol.tolist(),
            "lam": self.hyper.lam,
            "beta": self.hyper.beta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PosteriorState":
        return cls(
            m=np.asarray(d["m"], dtype=np.float64),
            prec_chol=np.asarray(d["prec_chol"], dtype=np.float64),
            hyper=HyperParams(lam=float(d["lam"]), beta=float(d["beta"])),
        )


@dataclass(frozen=True)
class GaussianMoment:
    mean: float
    variance: float


def weighted_sum_moments(
    mu: np.ndarray, Sigma: np.ndarray, theta: np.ndarray
) -> GaussianMoment:
    """Moments of theta^T y for y ~ N(mu, Sigma): (theta^T mu, theta^T Sigma theta)."""
    mu = np.asarray(mu, dtype=np.float64)
    Sigma = np.asarray(Sigma, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    n = theta.size
    if mu.shape != (n,) or Sigma.shape != (n, n):
        raise ValueError(
            f"shape mismatch: mu {mu.shape}, Sigma {Sigma.shape}, theta {theta.shape}"
        )
    variance = float(theta @ Sigma @ theta)
    if variance < 0.0:
        if variance < -1e-12:
            raise NumericalError(
                f"weighted-sum variance {variance} is negative beyond tolerance"
            )
        variance = 0.0
    return GaussianMoment(mean=float(theta @ mu), variance=variance)


def _cholesky_spd(A: np.ndarray, context: str = "") -> np.ndarray:
    """Lower Cholesky factor with escalating diagonal jitter as a rescue."""
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    k = A.shape[0]
    base = 1e-10 * float(np.trace(A)) / k
    for mult in (1.0, 10.0, 100.0):
        try:
            return np.linalg.cholesky(A + (mult * base) * np.eye(k))
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"Cholesky failed after jitter escalation up to {100 * base:.3e}"
        f"{' (' + context + ')' if context else ''}; K={k}, trace={np.trace(A):.6e}"
    )


def _stack_bags(
    labeled: Sequence[LabeledBag],
    phi_per_bag: Sequence[np.ndarray],
    k: Optional[int],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Stack per-bag aggregated feature vectors psi_a = Phi_a theta_a.

    Returns (P, s, ybar, k) where P is K x A with psi columns, s the squared
    weight norms, ybar the observed aggregates.
    """
    if len(labeled) != len(phi_per_bag):
        raise ValueError("labeled bags and feature blocks must align")
    if k is None:
        if not phi_per_bag:
            raise ValueError("k is required when the labeled set is empty")
        k = phi_per_bag[0].shape[0]
    a_count = len(labeled)
    P = np.empty((k, a_count))
    s = np.empty(a_count)
    ybar = np.empty(a_count)
    for i, (lb, phi) in enumerate(zip(labeled, phi_per_bag)):
        theta = lb.bag.weights
        if phi.shape != (k, theta.size):
            raise ValueError(
                f"bag {lb.bag.id}: feature block shape {phi.shape} does not match "
                f"(K={k}, N_a={theta.size})"
            )
        P[:, i] = phi @ theta
        s[i] = lb.bag.weight_norm_sq
        ybar[i] = lb.aggregated_output
    return P, s, ybar, k


def fit_posterior(
    labeled: Sequence[LabeledBag],
    phi_per_bag: Sequence[np.ndarray],
    hyper: HyperParams,
    k: Optional[int] = None,
) -> PosteriorState:
    """Exact posterior over the weights given aggregated observations.

    With no labeled bags this recovers the prior: m = 0, S^-1 = lam I.
    """
    P, s, ybar, k = _stack_bags(labeled, phi_per_bag, k)
    prec = hyper.lam * np.eye(k)
    if len(labeled) > 0:
        prec += hyper.beta * ((P / s) @ P.T)
        prec = 0.5 * (prec + prec.T)
    L = _cholesky_spd(prec, context=f"lam={hyper.lam:.3e}, beta={hyper.beta:.3e}, A={len(labeled)}")
    b = hyper.beta * (P @ (ybar / s)) if len(labeled) > 0 else np.zeros(k)
    m = cho_solve((L, True), b)
    return PosteriorState(m=m, prec_chol=L, hyper=hyper)


def predict_individual(post: PosteriorState, phi_x: np.ndarray) -> GaussianMoment:
    """Predictive N(m^T phi, 1/beta + phi^T S phi) for one instance."""
    phi_x = np.asarray(phi_x, dtype=np.float64)
    if phi_x.shape != (post.k,):
        raise ValueError(f"phi_x must have length {post.k}, got {phi_x.shape}")
    z = post.whiten(phi_x)
    return GaussianMoment(
        mean=float(post.m @ phi_x),
        variance=1.0 / post.hyper.beta + float(z @ z),
    )


def predict_individual_batch(
    post: PosteriorState, Phi: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorized predictive means and variances for feature columns Phi (K x N)."""
    means = post.m @ Phi
    variances = 1.0 / post.hyper.beta + post.quad_form_cov(Phi)
    return means, variances


def predict_aggregated(
    post: PosteriorState, phi_a: np.ndarray, theta_a: np.ndarray
) -> GaussianMoment:
    """Predictive distribution of the weighted-sum output of a bag."""
    theta_a = np.asarray(theta_a, dtype=np.float64)
    if phi_a.shape != (post.k, theta_a.size):
        raise ValueError(
            f"feature block shape {phi_a.shape} does not match "
            f"(K={post.k}, N_a={theta_a.size})"
        )
    s = float(theta_a @ theta_a)
    if s <= 0.0:
        raise ValueError("bag weights must have positive squared norm")
    psi = phi_a @ theta_a
    z = post.whiten(psi)
    return GaussianMoment(
        mean=float(post.m @ psi),
        variance=s / post.hyper.beta + float(z @ z),
    )


def sample_posterior(post: PosteriorState, n_samples: int, seed: int) -> np.ndarray:
    """Draw n_samples weight vectors w ~ N(m, S); returns shape (K, n_samples)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    z = np.random.default_rng(seed).standard_normal((post.k, n_samples))
    # S = L^-T L^-1, so L^-T z has covariance S
    return post.m[:, None] + solve_triangular(post.prec_chol.T, z, lower=False)


def log_marginal(
    labeled: Sequence[LabeledBag],
    phi_per_bag: Sequence[np.ndarray],
    hyper: HyperParams,
    k: Optional[int] = None,
) -> float:
    """Log marginal likelihood of the observed aggregates with w integrated out.

    Equals (A/2) log beta + (K/2) log lam - (1/2) sum_a log s_a
    + (1/2) log|S| - (beta/2) sum_a ybar_a^2 / s_a + (1/2) m^T S^-1 m
    - (A/2) log 2*pi, and is exactly 0 for an empty labeled set.
    """
    if len(labeled) == 0:
        return 0.0
    P, s, ybar, k = _stack_bags(labeled, phi_per_bag, k)
    a_count = len(labeled)
    prec = hyper.lam * np.eye(k) + hyper.beta * ((P / s) @ P.T)
    prec = 0.5 * (prec + prec.T)
    L = _cholesky_spd(prec, context="log_marginal")
    log_det_s = -2.0 * float(np.sum(np.log(np.diag(L))))
    b = hyper.beta * (P @ (ybar / s))
    m = cho_solve((L, True), b)
    return 0.5 * (
        a_count * math.log(hyper.beta)
        + k * math.log(hyper.lam)
        - float(np.sum(np.log(s)))
        + log_det_s
        - hyper.beta * float(ybar @ (ybar / s))
        + float(b @ m)
        - a_count * LOG_2PI
    )


def log_marginal_grad(
    labeled: Sequence[LabeledBag],
    phi_per_bag: Sequence[np.ndarray],
    hyper: HyperParams,
    k: Optional[int] = None,
) -> np.ndarray:
    """Analytic gradient of log_marginal with respect to (log lam, log beta)."""
    P, s, ybar, k = _stack_bags(labeled, phi_per_bag, k)
    a_count = len(labeled)
    lam, beta = hyper.lam, hyper.beta
    prec = lam * np.eye(k)
    if a_count > 0:
        prec += beta * ((P / s) @ P.T)
        prec = 0.5 * (prec + prec.T)
    L = _cholesky_spd(prec, context="log_marginal_grad")
    L_inv = solve_triangular(L, np.eye(k), lower=True)
    tr_s = float(np.sum(L_inv * L_inv))
    b = beta * (P @ (ybar / s)) if a_count > 0 else np.zeros(k)
    m = cho_solve((L, True), b)
    quad = float(b @ m)  # m^T S^-1 m
    m_sq = float(m @ m)
    sum_y2_s = float(ybar @ (ybar / s)) if a_count > 0 else 0.0
    d_lam = k / (2.0 * lam) - 0.5 * tr_s - 0.5 * m_sq
    # G = (S^-1 - lam I)/beta gives tr(S G) and m^T G m without re-summing bags
    tr_sg = (k - lam * tr_s) / beta
    m_gm = (quad - lam * m_sq) / beta
    d_beta = (
        a_count / (2.0 * beta) - 0.5 * tr_sg - 0.5 * sum_y2_s + quad / beta - 0.5 * m_gm
    )
    return np.array([lam * d_lam, beta * d_beta])


class _EigenMarginal:
    """log_marginal as a function of (log lam, log beta) alone.

    The bag-dependent matrix G = sum_a psi_a psi_a^T / s_a does not change
    while the hyperparameters are optimized, so one eigendecomposition
    G = V diag(g) V^T up front reduces every objective/gradient evaluation
    to O(K) work on the eigenvalues.
    """

    def __init__(
        self,
        labeled: Sequence[LabeledBag],
        phi_per_bag: Sequence[np.ndarray],
        k: Optional[int] = None,
    ):
        P, s, ybar, k = _stack_bags(labeled, phi_per_bag, k)
        self.k = k
        self.a_count = len(labeled)
        if self.a_count > 0:
            G = (P / s) @ P.T
            G = 0.5 * (G + G.T)
            g, V = np.linalg.eigh(G)
            self.eigvals = np.clip(g, 0.0, None)
            u = P @ (ybar / s)
            self.ut_sq = (V.T @ u) ** 2
            self.sum_log_s = float(np.sum(np.log(s)))
            self.sum_y2_s = float(ybar @ (ybar / s))
        else:
            self.eigvals = np.zeros(k)
            self.ut_sq = np.zeros(k)
            self.sum_log_s = 0.0
            self.sum_y2_s = 0.0

    def value(self, log_lam: float, log_beta: float) -> float:
        lam, beta = math.exp(log_lam), math.exp(log_beta)
        d = lam + beta * self.eigvals
        quad = beta * beta * float(np.sum(self.ut_sq / d))
        return 0.5 * (
            self.a_count * log_beta
            + self.k * log_lam
            - self.sum_log_s
            - float(np.sum(np.log(d)))
            - beta * self.sum_y2_s
            + quad
            - self.a_count * LOG_2PI
        )


@njit(cache=True)
def _adam_ascend(
    eigvals, ut_sq, k_dim, a_count, sum_y2_s, sum_log_s, x0, x1, steps, lr, b1, b2, eps
):  # pragma: no cover - exercised through optimize_hyperparams
    """Adam ascent of the eigen-reduced log marginal over (log lam, log beta).

    Returns (x0, x1, best0, best1, best_val, steps_done); steps_done < steps
    signals an abort on a non-finite objective.
    """
    m0 = 0.0
    m1 = 0.0
    v0 = 0.0
    v1 = 0.0
    best_val = -np.inf
    best0 = x0
    best1 = x1
    log2pi = np.log(2.0 * np.pi)
    n = eigvals.shape[0]
    for t in range(1, steps + 1):
        lam = np.exp(x0)
        beta = np.exp(x1)
        beta_sq = beta * beta
        quad = 0.0
        sum_logd = 0.0
        s_invd = 0.0
        s_g_invd = 0.0
        s_q_invd = 0.0
        s_gq_invd = 0.0
        for i in range(n):
            d = lam + beta * eigvals[i]
            invd = 1.0 / d
            q = beta_sq * ut_sq[i] * invd
            quad += q
            sum_logd += np.log(d)
            s_invd += invd
            s_g_invd += eigvals[i] * invd
            s_q_invd += q * invd
            s_gq_invd += eigvals[i] * q * invd
        val = 0.5 * (
            a_count * x1
            + k_dim * x0
            - sum_log_s
            - sum_logd
            - beta * sum_y2_s
            + quad
            - a_count * log2pi
        )
        if not np.isfinite(val):
            return x0, x1, best0, best1, best_val, t - 1
        if val > best_val:
            best_val = val
            best0 = x0
            best1 = x1
        d_lam = k_dim / (2.0 * lam) - 0.5 * s_invd - 0.5 * s_q_invd
        d_beta = (
            a_count / (2.0 * beta)
            - 0.5 * s_g_invd
            - 0.5 * sum_y2_s
            + quad / beta
            - 0.5 * s_gq_invd
        )
        g0 = lam * d_lam
        g1 = beta * d_beta
        m0 = b1 * m0 + (1.0 - b1) * g0
        m1 = b1 * m1 + (1.0 - b1) * g1
        v0 = b2 * v0 + (1.0 - b2) * g0 * g0
        v1 = b2 * v1 + (1.0 - b2) * g1 * g1
        c1 = 1.0 - b1**t
        c2 = 1.0 - b2**t
        x0 = x0 + lr * (m0 / c1) / (np.sqrt(v0 / c2) + eps)
        x1 = x1 + lr * (m1 / c1) / (np.sqrt(v1 / c2) + eps)
    return x0, x1, best0, best1, best_val, steps


def optimize_hyperparams(
    labeled: Sequence[LabeledBag],
    phi_per_bag: Sequence[np.ndarray],
    init: HyperParams,
    steps: int = 1000,
    lr: float = 1e-3,
    adam_beta1: float = 0.9,
    adam_beta2: float = 0.999,
    adam_eps: float = 1e-8,
    k: Optional[int] = None,
) -> HyperParams:
    """First-order ascent of the log marginal over unconstrained (log lam, log beta).

    Deterministic given its inputs. If the objective ever turns non-finite
    the run aborts and the best finite iterate seen so far is returned.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0 or len(labeled) == 0:
        # empty data gives a flat objective (log marginal identically 0)
        return init
    prob = _EigenMarginal(labeled, phi_per_bag, k)
    xf0, xf1, best0, best1, best_val, steps_done = _adam_ascend(
        prob.eigvals,
        prob.ut_sq,
        float(prob.k),
        float(prob.a_count),
        prob.sum_y2_s,
        prob.sum_log_s,
        math.log(init.lam),
        math.log(init.beta),
        steps,
        lr,
        adam_beta1,
        adam_beta2,
        adam_eps,
    )
    if steps_done < steps:
        warnings.warn(
            f"hyperparameter ascent hit a non-finite objective at step "
            f"{steps_done + 1}/{steps}; returning best finite iterate "
            f"(lam={math.exp(best0):.3e}, beta={math.exp(best1):.3e})",
            RuntimeWarning,
        )
        if math.isfinite(best_val):
            return HyperParams(lam=math.exp(best0), beta=math.exp(best1))
        return init
    return HyperParams(lam=math.exp(xf0), beta=math.exp(xf1))


def make_labeled_bags(bags, aggregated_outputs) -> List[LabeledBag]:
    """Pair bags with their observed aggregates."""
    return [
        LabeledBag(bag=b, aggregated_output=y) for b, y in zip(bags, aggregated_outputs)
    ]
