"""Multivariate-Gaussian beliefs over latent mean outcomes.

The latent vector theta of an arm has a Gaussian prior N(mu1, sigma1) and
each user's outcome vector is theta plus correlated noise with covariance v.
Whitening the noise through the Cholesky factor of v turns every partially
revealed outcome into a unit-variance scalar observation, so the posterior
over theta can be accumulated one rank-one information term at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DefinitenessError",
    "NumericalError",
    "PriorParams",
    "CholeskyFactors",
    "Belief",
    "WhitenedObservation",
    "RewardSpec",
    "cholesky_whiten",
    "transform_outcome",
    "posterior_update",
    "posterior_batch_oracle",
    "sample_belief",
    "reward_belief",
    "ensure_positive_definite",
]

SYMMETRY_RTOL = 1e-12

# Jitter ladder used before factorizing a covariance that fails a Cholesky:
# start at JITTER_BASE * trace / dim, escalate tenfold, give up after 3 tries.
JITTER_BASE = 1e-10
JITTER_RETRIES = 3


class DefinitenessError(ValueError):
    """A matrix required to be positive definite is not."""


class NumericalError(ArithmeticError):
    """A linear solve failed; the covariance is numerically singular."""


def _check_symmetric(m, name):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {m.shape}")
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.T).max() > SYMMETRY_RTOL * scale:
        raise ValueError(f"{name} is not symmetric within tolerance")
    return 0.5 * (m + m.T)


def _failing_leading_minor(m):
    """Index (1-based) of the first non-PD leading minor, or 0 if PD."""
    for k in range(1, m.shape[0] + 1):
        try:
            np.linalg.cholesky(m[:k, :k])
        except np.linalg.LinAlgError:
            return k
    return 0


def _check_positive_definite(m, name):
    k = _failing_leading_minor(m)
    if k:
        raise DefinitenessError(
            f"{name} is not positive definite: leading minor of order {k} fails"
        )


@dataclass(frozen=True)
class PriorParams:
    """Gaussian hyperparameters of one feature class: prior N(mu1, sigma1)
    over theta and within-user noise covariance v."""

    mu1: np.ndarray
    sigma1: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        mu1 = np.asarray(self.mu1, dtype=np.float64).reshape(-1)
        sigma1 = _check_symmetric(self.sigma1, "sigma1")
        v = _check_symmetric(self.v, "v")
        if sigma1.shape[0] != mu1.size or v.shape[0] != mu1.size:
            raise ValueError("mu1, sigma1 and v must share one dimension")
        _check_positive_definite(sigma1, "sigma1")
        _check_positive_definite(v, "v")
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "sigma1", sigma1)
        object.__setattr__(self, "v", v)

    @property
    def dim(self):
        return self.mu1.size


@dataclass(frozen=True)
class CholeskyFactors:
    """Lower-triangular factor L of the noise covariance (v = L L^T) plus
    the rows of L^-1 used to whiten partially revealed outcomes."""

    l: np.ndarray
    l_inv_rows: np.ndarray

    @property
    def dim(self):
        return self.l.shape[0]

    def row(self, j):
        """Whitening row for outcome index j (1-based)."""
        return self.l_inv_rows[j - 1]


@dataclass(frozen=True)
class Belief:
    """Posterior N(mean, cov) over an arm's latent mean-outcome vector."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = _check_symmetric(self.cov, "cov")
        if cov.shape[0] != mean.size:
            raise ValueError("mean and cov dimensions disagree")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self):
        return self.mean.size


@dataclass(frozen=True)
class WhitenedObservation:
    """One whitened scalar observation: index j (1-based) and value."""

    index_j: int
    value: float

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ValueError("whitened observation value must be finite")


@dataclass(frozen=True)
class RewardSpec:
    """Affine reward r0 + r1 . y over an outcome vector."""

    r0: float
    r1: np.ndarray = field(default_factory=lambda: np.ones(1))

    def __post_init__(self):
        r1 = np.asarray(self.r1, dtype=np.float64).reshape(-1)
        if not np.any(r1 != 0.0):
            raise ValueError("r1 must have at least one nonzero entry")
        object.__setattr__(self, "r1", r1)

    def of(self, y):
        """Reward of an outcome vector (or batch of row vectors)."""
        y = np.asarray(y, dtype=np.float64)
        return self.r0 + y @ self.r1


def cholesky_whiten(v) -> CholeskyFactors:
    """Factor a PD noise covariance as L L^T and return L with the rows of
    its inverse.

    The rows of L^-1 are the whitening projections: row j applied to an
    outcome vector yields a unit-variance scalar that depends only on the
    first j outcome entries, because L^-1 is lower triangular.
    """
    v = _check_symmetric(v, "v")
    try:
        l = np.linalg.cholesky(v)
    except np.linalg.LinAlgError:
        k = _failing_leading_minor(v)
        raise DefinitenessError(
            f"noise covariance is not positive definite: leading minor of order {k} fails"
        ) from None
    l_inv = np.linalg.solve(l, np.eye(v.shape[0]))
    # The strict upper triangle is zero in exact arithmetic; enforce it so
    # prefix sufficiency holds exactly.
    l_inv = np.tril(l_inv)
    return CholeskyFactors(l=l, l_inv_rows=l_inv)


def transform_outcome(prefix, factors: CholeskyFactors, j: int) -> WhitenedObservation:
    """Whiten the j-th outcome from the first j raw outcome entries."""
    prefix = np.asarray(prefix, dtype=np.float64).reshape(-1)
    if not 1 <= j <= factors.dim:
        raise ValueError(f"outcome index {j} outside 1..{factors.dim}")
    if prefix.size != j:
        raise ValueError(f"prefix has length {prefix.size}, expected {j}")
    value = float(factors.l_inv_rows[j - 1, :j] @ prefix)
    return WhitenedObservation(index_j=j, value=value)


def _psd_factor(cov):
    """Cholesky-like factor A with A A^T = cov, repairing slight indefiniteness
    with the documented jitter ladder."""
    cov = np.asarray(cov, dtype=np.float64)
    if not cov.any():
        return np.zeros_like(cov)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    dim = cov.shape[0]
    base = JITTER_BASE * max(np.trace(cov), 0.0) / dim
    if base == 0.0:
        base = JITTER_BASE
    for k in range(JITTER_RETRIES):
        try:
            return np.linalg.cholesky(cov + base * 10.0**k * np.eye(dim))
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        "covariance could not be factorized even after jitter repair"
    )


def _psd_inverse(cov, what="covariance"):
    """Inverse of a PD matrix, with the jitter ladder on near-singularity."""
    cov = np.asarray(cov, dtype=np.float64)
    dim = cov.shape[0]
    eye = np.eye(dim)
    try:
        np.linalg.cholesky(cov)
        return np.linalg.solve(cov, eye)
    except np.linalg.LinAlgError:
        pass
    base = JITTER_BASE * max(np.trace(cov), 0.0) / dim
    if base == 0.0:
        base = JITTER_BASE
    for k in range(JITTER_RETRIES):
        jittered = cov + base * 10.0**k * eye
        try:
            np.linalg.cholesky(jittered)
            return np.linalg.solve(jittered, eye)
        except np.linalg.LinAlgError:
            continue
    raise NumericalError(
        f"{what} is numerically singular; consider adding diagonal jitter"
    )


def ensure_positive_definite(m, rel_floor=1e-6):
    """Return a PD copy of a symmetric PSD estimate, adding a relative ridge.

    Fitted covariance estimates can be exactly singular (a constant outcome
    coordinate yields a zero row); a small ridge keeps the filter usable.
    """
    m = _check_symmetric(np.asarray(m, dtype=np.float64), "matrix")
    dim = m.shape[0]
    scale = max(np.trace(m) / dim, np.finfo(np.float64).tiny)
    ridge = rel_floor * scale
    for _ in range(60):
        try:
            np.linalg.cholesky(m + ridge * np.eye(dim))
            return m + ridge * np.eye(dim)
        except np.linalg.LinAlgError:
            ridge *= 10.0
    raise DefinitenessError("matrix could not be repaired to positive definite")


def posterior_update(belief: Belief, observations) -> Belief:
    """Fold whitened observations into a belief in one precision-form step.

    ``observations`` is a sequence of (WhitenedObservation, whitening row)
    pairs; each pair contributes a rank-one precision term and an information
    term, so the arrival order within the batch is irrelevant.
    """
    observations = list(observations)
    if not observations:
        return belief
    dim = belief.dim
    info_matrix = np.zeros((dim, dim))
    info_vector = np.zeros(dim)
    for obs, row in observations:
        row = np.asarray(row, dtype=np.float64).reshape(-1)
        if row.size != dim:
            raise ValueError("whitening row dimension disagrees with belief")
        info_matrix += np.outer(row, row)
        info_vector += row * obs.value
    precision_old = _psd_inverse(belief.cov, "belief covariance")
    cov_new = _psd_inverse(precision_old + info_matrix, "posterior precision")
    cov_new = 0.5 * (cov_new + cov_new.T)
    mean_new = cov_new @ (precision_old @ belief.mean + info_vector)
    return Belief(mean=mean_new, cov=cov_new)


def posterior_batch_oracle(prior: PriorParams, users) -> Belief:
    """Exact conditional of theta given all unmasked raw outcome entries.

    Forms the joint Gaussian over (theta, observed entries) directly from the
    prior and conditions on the observations; no whitening, no incremental
    structure. Serves as an independent cross-check of posterior_update.
    """
    dim = prior.dim
    observed_values = []
    blocks = []  # (user index, observed coordinate indices)
    for u, (outcomes, mask) in enumerate(users):
        outcomes = np.asarray(outcomes, dtype=np.float64).reshape(-1)
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if outcomes.size != dim or mask.size != dim:
            raise ValueError("outcome vector and mask must have length J")
        idx = np.flatnonzero(mask)
        if idx.size:
            blocks.append((u, idx))
            observed_values.append(outcomes[idx])
    if not blocks:
        return Belief(mean=prior.mu1.copy(), cov=prior.sigma1.copy())

    y = np.concatenate(observed_values)
    total = y.size
    cov_yy = np.empty((total, total))
    cov_ty = np.empty((dim, total))
    mean_y = np.empty(total)
    offsets = np.cumsum([0] + [idx.size for _, idx in blocks])
    for a, (u, idx) in enumerate(blocks):
        sl = slice(offsets[a], offsets[a + 1])
        cov_ty[:, sl] = prior.sigma1[:, idx]
        mean_y[sl] = prior.mu1[idx]
        for b, (w, jdx) in enumerate(blocks):
            sl2 = slice(offsets[b], offsets[b + 1])
            block = prior.sigma1[np.ix_(idx, jdx)].copy()
            if u == w:
                block += prior.v[np.ix_(idx, jdx)]
            cov_yy[sl, sl2] = block
    try:
        solved = np.linalg.solve(cov_yy, np.column_stack([cov_ty.T, y - mean_y]))
    except np.linalg.LinAlgError:
        raise NumericalError("observation covariance is singular") from None
    gain = solved[:, :dim].T
    mean = prior.mu1 + gain @ (y - mean_y)
    cov = prior.sigma1 - gain @ cov_ty.T
    cov = 0.5 * (cov + cov.T)
    return Belief(mean=mean, cov=cov)


def sample_belief(belief: Belief, rng) -> np.ndarray:
    """Draw one latent vector from the belief; reproducible under a fixed
    generator seed."""
    factor = _psd_factor(belief.cov)
    z = rng.standard_normal(belief.dim)
    return belief.mean + factor @ z


def reward_belief(belief: Belief, reward: RewardSpec):
    """Mean and variance of the scalar reward under the belief."""
    if reward.r1.size != belief.dim:
        raise ValueError("reward weights dimension disagrees with belief")
    mean = float(reward.r0 + reward.r1 @ belief.mean)
    var = float(reward.r1 @ belief.cov @ reward.r1)
    return mean, max(var, 0.0)
