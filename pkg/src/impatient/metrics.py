"""Value of progressive feedback, regret accounting, and ratio diagnostics.

The value of progressive feedback at decision time t is half the log ratio
between the posterior variance of the mean reward given delayed outcomes only
and the variance given everything the censoring schedule has revealed. Both
variances are deterministic functions of the information counts under the
Gaussian model, so the metric is a property of the environment alone.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from impatient.environments import DelaySchedule
from impatient.gaussian import PriorParams, RewardSpec, cholesky_whiten

__all__ = [
    "VopfQuery",
    "RegretRecord",
    "vopf_general",
    "vopf_two_outcome",
    "two_outcome_equivalent_query",
    "optimal_arm",
    "instantaneous_regret",
    "regret_ratio_log",
    "write_regret_csv",
    "write_vopf_csv",
    "write_ratio_csv",
]


@dataclass(frozen=True)
class VopfQuery:
    """Inputs of one feedback-value evaluation."""

    prior: PriorParams
    reward: RewardSpec
    delays: DelaySchedule
    m: int
    t: int
    z: str | None = None

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")


@dataclass
class RegretRecord:
    """Per-batch regret stream of one replication."""

    replication: int
    deltas: list

    def cumulative(self) -> np.ndarray:
        return np.cumsum(np.asarray(self.deltas, dtype=np.float64))


def _reward_variance_for_counts(s, q, weights):
    """Posterior variance of the reward projection when whitened outcome j
    has been observed ``weights[j]`` times.

    s is the prior covariance expressed in the whitened outcome basis and q
    the reward weights in that basis. Uses the Woodbury form, which needs no
    prior inversion and stays stable for singular weight patterns.
    """
    prior_var = float(q @ s @ q)
    if not weights.any():
        return prior_var
    b = np.sqrt(weights)
    core = np.eye(s.shape[0]) + (b[:, None] * s) * b[None, :]
    v = b * (s @ q)
    return prior_var - float(v @ np.linalg.solve(core, v))


def vopf_general(query: VopfQuery) -> float:
    """Feedback value in nats at decision time t.

    The denominator variance conditions on every (batch, outcome) cell the
    schedule has revealed strictly before t; the numerator conditions only on
    batches old enough to be fully revealed. With no such batch the numerator
    is the prior variance.
    """
    delays = query.delays.delays
    d_max = query.delays.d_max
    t = query.t
    factors = cholesky_whiten(query.prior.v)
    s = factors.l_inv_rows @ query.prior.sigma1 @ factors.l_inv_rows.T
    s = 0.5 * (s + s.T)
    q = factors.l.T @ query.reward.r1
    full_batches = max(0, t - 1 - d_max)
    counts_delayed = np.full(delays.size, float(query.m * full_batches))
    counts_progressive = query.m * np.maximum(0, t - 1 - delays).astype(np.float64)
    var_delayed = _reward_variance_for_counts(s, q, counts_delayed)
    var_progressive = _reward_variance_for_counts(s, q, counts_progressive)
    return max(0.0, 0.5 * math.log(var_delayed / var_progressive))


def vopf_two_outcome(rho, sigma_r_sq, m, t, d_max) -> float:
    """Closed form for the two-outcome case: immediate first outcome with
    correlation rho to the delayed reward outcome."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    if t < d_max:
        raise ValueError("the closed form is stated for t >= d_max")
    n = m * (t - d_max)
    return 0.5 * math.log(
        (sigma_r_sq + n + 1.0) / (sigma_r_sq + n + 1.0 - rho**2)
    )


def two_outcome_equivalent_query(rho, sigma_r_sq, m, t, d_max) -> VopfQuery:
    """General query whose information sets match the two-outcome closed
    form.

    The closed form conditions on m*(t - d_max) fully revealed users plus
    exactly one user with only the first outcome visible. Expressed in
    general-schedule terms that is batch size 1, delays (0, 1), evaluated at
    decision time m*(t - d_max) + 2. A correlation of exactly 1 is nudged
    below 1 so the prior stays positive definite; the effect on the value is
    of the same order as the nudge.
    """
    rho_c = min(float(rho), 1.0 - 1e-12)
    corr = np.array([[1.0, rho_c], [rho_c, 1.0]])
    prior = PriorParams(mu1=np.zeros(2), sigma1=corr, v=sigma_r_sq * corr)
    reward = RewardSpec(r0=0.0, r1=np.array([0.0, 1.0]))
    delays = DelaySchedule(delays=np.array([0, 1]))
    return VopfQuery(prior=prior, reward=reward, delays=delays, m=1, t=m * (t - d_max) + 2)


def optimal_arm(arms) -> int:
    """Arm id with the highest true mean reward; ties go to the lowest id."""
    best = min(arms, key=lambda arm: (-arm.r_bar, arm.arm_id))
    return best.arm_id


def instantaneous_regret(optimal_outcomes, assigned_outcomes, reward: RewardSpec) -> float:
    """Per-user average reward gap between the optimal arm's counterfactual
    outcomes and the assigned arms' outcomes for one batch."""
    optimal_outcomes = np.atleast_2d(np.asarray(optimal_outcomes, dtype=np.float64))
    assigned_outcomes = np.atleast_2d(np.asarray(assigned_outcomes, dtype=np.float64))
    if optimal_outcomes.shape != assigned_outcomes.shape:
        raise ValueError("outcome arrays must align user by user")
    return float(np.mean(reward.of(optimal_outcomes) - reward.of(assigned_outcomes)))


def regret_ratio_log(progressive_runs, delayed_runs) -> np.ndarray:
    """Per-batch log ratio of mean delayed regret over mean progressive
    regret; batches where either mean is non-positive come out as NaN."""
    progressive_runs = np.asarray(progressive_runs, dtype=np.float64)
    delayed_runs = np.asarray(delayed_runs, dtype=np.float64)
    if progressive_runs.ndim != 2 or delayed_runs.ndim != 2:
        raise ValueError("runs must be (replications, batches) arrays")
    if progressive_runs.shape[1] != delayed_runs.shape[1]:
        raise ValueError("run sets cover different batch grids")
    mean_p = progressive_runs.mean(axis=0)
    mean_d = delayed_runs.mean(axis=0)
    out = np.full(mean_p.size, np.nan)
    ok = (mean_p > 0) & (mean_d > 0)
    out[ok] = np.log(mean_d[ok] / mean_p[ok])
    return out


# ---------------------------------------------------------------------------
# CSV schemas
# ---------------------------------------------------------------------------


def write_regret_csv(path, records):
    """regret.csv: policy, replication, t, delta, cumulative."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["policy", "replication", "t", "delta", "cumulative"])
        for policy in sorted(records):
            for record in records[policy]:
                cum = record.cumulative()
                for t, delta in enumerate(record.deltas, start=1):
                    writer.writerow(
                        [
                            policy,
                            record.replication,
                            t,
                            format(delta, ".17g"),
                            format(cum[t - 1], ".17g"),
                        ]
                    )


def write_vopf_csv(path, rows):
    """vopf.csv: preset, m, t, vopf_nats. Rows are (preset, m, t, value)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["preset", "m", "t", "vopf_nats"])
        for preset, m, t, value in rows:
            writer.writerow([preset, m, t, format(value, ".17g")])


def write_ratio_csv(path, preset, log_ratios):
    """ratio.csv: preset, t, log_ratio with empty cells for missing values."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["preset", "t", "log_ratio"])
        for t, value in enumerate(log_ratios, start=1):
            cell = "" if not np.isfinite(value) else format(value, ".17g")
            writer.writerow([preset, t, cell])
