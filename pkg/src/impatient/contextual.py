"""Linear-in-context extension of the Gaussian filter.

Each arm's latent parameter lives in R^(k*J): one length-k block per outcome,
and a user with context x has expected outcome j equal to x . theta_block_j.
Whitened observations become linear measurements of the stacked parameter
through a feature vector combining the context with the whitening row, so the
posterior update keeps the usual precision form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from impatient.gaussian import Belief, RewardSpec, sample_belief

__all__ = [
    "ContextualPrior",
    "context_features",
    "contextual_posterior_update",
    "contextual_batch_oracle",
    "contextual_ts_select",
    "contextual_optimal_arm",
]


@dataclass(frozen=True)
class ContextualPrior:
    """Prior over the stacked per-outcome coefficient blocks."""

    mu1: np.ndarray  # length k*J
    sigma1: np.ndarray  # (k*J, k*J)
    v: np.ndarray  # (J, J) outcome noise
    k: int

    def __post_init__(self):
        mu1 = np.asarray(self.mu1, dtype=np.float64).reshape(-1)
        sigma1 = np.asarray(self.sigma1, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if mu1.size % self.k:
            raise ValueError("mu1 length must be a multiple of k")
        if sigma1.shape != (mu1.size, mu1.size):
            raise ValueError("sigma1 must be (k*J, k*J)")
        if v.shape[0] * self.k != mu1.size:
            raise ValueError("v must be (J, J) with k*J matching mu1")
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "sigma1", sigma1)
        object.__setattr__(self, "v", v)

    @property
    def j_outcomes(self):
        return self.mu1.size // self.k


def context_features(x, ell) -> np.ndarray:
    """Feature vector of a whitened measurement: block i is the context
    scaled by the i-th entry of the whitening row."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    ell = np.asarray(ell, dtype=np.float64).reshape(-1)
    return np.kron(ell, x)


def contextual_posterior_update(belief: Belief, observations) -> Belief:
    """Precision-form update from (feature vector, whitened value) pairs."""
    observations = list(observations)
    if not observations:
        return belief
    dim = belief.dim
    info_matrix = np.zeros((dim, dim))
    info_vector = np.zeros(dim)
    for feat, value in observations:
        feat = np.asarray(feat, dtype=np.float64).reshape(-1)
        if feat.size != dim:
            raise ValueError("feature dimension disagrees with belief")
        info_matrix += np.outer(feat, feat)
        info_vector += feat * float(value)
    eye = np.eye(dim)
    precision_old = np.linalg.solve(belief.cov, eye)
    cov_new = np.linalg.solve(precision_old + info_matrix, eye)
    cov_new = 0.5 * (cov_new + cov_new.T)
    mean_new = cov_new @ (precision_old @ belief.mean + info_vector)
    return Belief(mean=mean_new, cov=cov_new)


def _measurement_matrix(x, k, j_outcomes):
    m = np.zeros((j_outcomes, k * j_outcomes))
    for j in range(j_outcomes):
        m[j, j * k : (j + 1) * k] = x
    return m


def contextual_batch_oracle(prior: ContextualPrior, users) -> Belief:
    """Exact conditional of the stacked parameter given all unmasked raw
    outcomes of context-bearing users; joint-Gaussian conditioning with no
    whitening or incremental structure."""
    dim = prior.mu1.size
    j_outcomes = prior.j_outcomes
    rows = []  # (measurement row block, value offset info)
    values, mean_parts, blocks = [], [], []
    for x, outcomes, mask in users:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        outcomes = np.asarray(outcomes, dtype=np.float64).reshape(-1)
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            continue
        m_full = _measurement_matrix(x, prior.k, j_outcomes)
        blocks.append((m_full[idx], idx))
        values.append(outcomes[idx])
        mean_parts.append(m_full[idx] @ prior.mu1)
    if not blocks:
        return Belief(mean=prior.mu1.copy(), cov=prior.sigma1.copy())
    y = np.concatenate(values)
    mean_y = np.concatenate(mean_parts)
    total = y.size
    cov_yy = np.empty((total, total))
    cov_ty = np.empty((dim, total))
    offsets = np.cumsum([0] + [m.shape[0] for m, _ in blocks])
    for a, (m_a, idx_a) in enumerate(blocks):
        sl_a = slice(offsets[a], offsets[a + 1])
        cov_ty[:, sl_a] = prior.sigma1 @ m_a.T
        for b, (m_b, idx_b) in enumerate(blocks):
            sl_b = slice(offsets[b], offsets[b + 1])
            block = m_a @ prior.sigma1 @ m_b.T
            if a == b:
                block += prior.v[np.ix_(idx_a, idx_b)]
            cov_yy[sl_a, sl_b] = block
    solved = np.linalg.solve(cov_yy, np.column_stack([cov_ty.T, y - mean_y]))
    gain = solved[:, :dim].T
    mean = prior.mu1 + gain @ (y - mean_y)
    cov = prior.sigma1 - gain @ cov_ty.T
    return Belief(mean=mean, cov=0.5 * (cov + cov.T))


def _project(theta, x, k):
    """Per-outcome expected values x . theta_block_j of a stacked parameter."""
    theta = np.asarray(theta, dtype=np.float64)
    return theta.reshape(-1, k) @ np.asarray(x, dtype=np.float64)


def contextual_ts_select(beliefs, x, reward: RewardSpec, rng, k=None):
    """Thompson selection for one user: sample each arm's stacked parameter
    (in ascending arm order), project through the context, and take the arm
    with the highest sampled reward; ties go to the lowest arm id."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    k = x.size if k is None else k
    best_arm, best_value = None, -np.inf
    for arm_id in sorted(beliefs):
        theta = sample_belief(beliefs[arm_id], rng)
        value = float(reward.r0 + reward.r1 @ _project(theta, x, k))
        if value > best_value:
            best_arm, best_value = arm_id, value
    return best_arm


def contextual_optimal_arm(x, latents, reward: RewardSpec, k=None):
    """Best arm for one context under the true stacked parameters."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    k = x.size if k is None else k
    best_arm, best_value = None, -np.inf
    for arm_id in sorted(latents):
        value = float(reward.r0 + reward.r1 @ _project(latents[arm_id], x, k))
        if value > best_value:
            best_arm, best_value = arm_id, value
    return best_arm
