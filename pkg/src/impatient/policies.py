"""Decision policies over Gaussian beliefs.

Thompson sampling assigns each user to the arm whose sampled mean reward is
highest; a lower-variance variant rounds the assignment probabilities to
multiples of 1/m and hands out exact user counts. Sequential elimination
keeps a shrinking active set and spreads users uniformly over it. Baselines
are expressed as feedback views that reshape when outcomes reach the filter
and which outcome the selection reward weighs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from impatient.environments import DelaySchedule
from impatient.gaussian import (
    Belief,
    PriorParams,
    RewardSpec,
    _psd_inverse,
    cholesky_whiten,
    reward_belief,
)

__all__ = [
    "ROSTER",
    "AllocationProbs",
    "FeedbackView",
    "PolicyState",
    "make_policy",
    "isotropic_prior",
    "ts_assign",
    "ts_probs",
    "round_probs",
    "ts_rnd_assign",
    "seq_elim_step",
    "apply_feedback",
]

ROSTER = (
    "progressive",
    "progressive_rnd",
    "delayed",
    "day_two",
    "oracle",
    "seq_elim_1pct",
    "seq_elim_4pct",
    "progressive_isotropic",
)

DEFAULT_N_MC = 2048


@dataclass(frozen=True)
class AllocationProbs:
    """Arm assignment probabilities, optionally rounded to multiples of 1/m."""

    probs: dict
    granularity: int | None = None

    def __post_init__(self):
        total = float(sum(self.probs.values()))
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {total}, not 1")
        if self.granularity is not None:
            m = self.granularity
            for arm, p in self.probs.items():
                if abs(p * m - round(p * m)) > 1e-9:
                    raise ValueError(f"probability of arm {arm} is not a multiple of 1/{m}")

    def counts(self):
        """Exact per-arm user counts; only valid on rounded allocations."""
        if self.granularity is None:
            raise ValueError("allocation is not rounded")
        return {a: int(round(p * self.granularity)) for a, p in self.probs.items()}


@dataclass(frozen=True)
class FeedbackView:
    """Policy-side reshaping of the delay schedule and selection reward.

    progressive     observe outcomes at their true delays
    delayed         withhold everything until all outcomes are revealed
    day_two_proxy   forward outcomes 1..2 only and score arms by outcome 2
    oracle          observe the full vector right after assignment
    """

    mode: str

    MODES = ("progressive", "delayed", "day_two_proxy", "oracle")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise ValueError(f"unknown view mode {self.mode!r}")

    def effective_delay(self, j: int, delays: DelaySchedule):
        """Delay at which the view forwards outcome j, or None for never."""
        if self.mode == "progressive":
            return int(delays.delays[j - 1])
        if self.mode == "delayed":
            return delays.d_max
        if self.mode == "oracle":
            return 0
        return int(delays.delays[j - 1]) if j <= 2 else None

    def selection_reward(self, reward: RewardSpec) -> RewardSpec:
        """Reward used for arm selection (regret is always scored on the
        true reward)."""
        if self.mode != "day_two_proxy":
            return reward
        r1 = np.zeros(reward.r1.size)
        r1[min(1, r1.size - 1)] = 1.0
        return RewardSpec(r0=0.0, r1=r1)

    def newly_visible(self, tau_u: int, t: int, outcomes, delays: DelaySchedule):
        """Items the view forwards at the end of batch t for a user assigned
        at tau_u: list of (j, prefix of the first j raw outcomes)."""
        outcomes = np.asarray(outcomes, dtype=np.float64)
        items = []
        for j in range(1, delays.dim + 1):
            d_eff = self.effective_delay(j, delays)
            if d_eff is not None and t == tau_u + d_eff:
                items.append((j, outcomes[:j]))
        return items


@dataclass
class PolicyState:
    """Mutable per-run policy state: beliefs per arm, the non-eliminated
    set, the feedback view, and reward/whitening configuration."""

    name: str
    prior: PriorParams
    reward: RewardSpec
    delays: DelaySchedule
    view: FeedbackView
    kind: str = "ts"  # ts | ts_rnd | seq_elim
    threshold: float | None = None
    n_mc: int = DEFAULT_N_MC
    beliefs: dict = field(default_factory=dict)
    active: set = field(default_factory=set)

    def __post_init__(self):
        self.factors = cholesky_whiten(self.prior.v)
        self.sel_reward = self.view.selection_reward(self.reward)
        self._moments = {}
        # precision-form mirror of the beliefs: one linear solve per updated
        # arm per batch; identical to chaining rank-one updates because the
        # posterior is order-independent
        self._prior_precision = _psd_inverse(self.prior.sigma1, "prior covariance")
        self._prior_info = self._prior_precision @ self.prior.mu1
        self._row_outers = [np.outer(r, r) for r in self.factors.l_inv_rows]
        self._eye = np.eye(self.prior.dim)
        self._precision = {}
        self._info = {}

    def add_arm(self, arm_id):
        if arm_id in self.beliefs:
            return
        self.beliefs[arm_id] = Belief(mean=self.prior.mu1.copy(), cov=self.prior.sigma1.copy())
        self._precision[arm_id] = self._prior_precision.copy()
        self._info[arm_id] = self._prior_info.copy()
        self.active.add(arm_id)

    def set_belief(self, arm_id, belief: Belief):
        """Replace one arm's belief, keeping the precision mirror in sync."""
        self.beliefs[arm_id] = belief
        precision = _psd_inverse(belief.cov, "belief covariance")
        self._precision[arm_id] = precision
        self._info[arm_id] = precision @ belief.mean
        self.active.add(arm_id)
        self._moments.pop(arm_id, None)

    def reward_moments(self, arm_id):
        cached = self._moments.get(arm_id)
        if cached is None:
            cached = reward_belief(self.beliefs[arm_id], self.sel_reward)
            self._moments[arm_id] = cached
        return cached

    def assign(self, t, selectable, m, rng):
        """Arm ids for the m users of batch t, restricted to ``selectable``."""
        for arm_id in selectable:
            self.add_arm(arm_id)
        if self.kind == "seq_elim":
            assignments, self.active = seq_elim_step(
                self, self.threshold, self.n_mc, m, rng, selectable=selectable
            )
            return assignments
        if self.kind == "ts_rnd":
            return ts_rnd_assign(self, m, self.n_mc, rng, arm_ids=selectable)
        return ts_assign(self, m, rng, arm_ids=selectable)

    def apply_feedback(self, items):
        apply_feedback(self, items)


def isotropic_prior(j_outcomes: int) -> PriorParams:
    """Uninformative preset: zero mean, prior covariance 100 I, noise I."""
    return PriorParams(
        mu1=np.zeros(j_outcomes),
        sigma1=100.0 * np.eye(j_outcomes),
        v=np.eye(j_outcomes),
    )


def make_policy(
    name: str,
    prior: PriorParams,
    reward: RewardSpec,
    delays: DelaySchedule,
    n_mc: int = DEFAULT_N_MC,
) -> PolicyState:
    """Instantiate a roster policy by name."""
    if name not in ROSTER:
        raise ValueError(f"unknown policy {name!r}; roster: {', '.join(ROSTER)}")
    view_mode = {
        "delayed": "delayed",
        "day_two": "day_two_proxy",
        "oracle": "oracle",
    }.get(name, "progressive")
    kind = "ts"
    threshold = None
    if name == "progressive_rnd":
        kind = "ts_rnd"
    elif name.startswith("seq_elim"):
        kind = "seq_elim"
        threshold = 0.01 if name.endswith("1pct") else 0.04
    if name == "progressive_isotropic":
        prior = isotropic_prior(delays.dim)
    return PolicyState(
        name=name,
        prior=prior,
        reward=reward,
        delays=delays,
        view=FeedbackView(mode=view_mode),
        kind=kind,
        threshold=threshold,
        n_mc=n_mc,
    )


def _arm_list(state: PolicyState, arm_ids):
    ids = sorted(state.beliefs) if arm_ids is None else sorted(arm_ids)
    if not ids:
        raise ValueError("no arms to assign")
    return ids


def _reward_draws(state: PolicyState, ids, n, rng):
    """n independent sampled rewards per arm, as an (n, len(ids)) matrix.

    Only the scalar projection of the sampled latent vector enters the
    argmax, so sampling the reward belief directly is distributionally
    identical to sampling the full vector and projecting.
    """
    means = np.empty(len(ids))
    sds = np.empty(len(ids))
    for k, arm_id in enumerate(ids):
        mean, var = state.reward_moments(arm_id)
        means[k] = mean
        sds[k] = math.sqrt(max(var, 0.0))
    return means + rng.standard_normal((n, len(ids))) * sds


def ts_assign(state: PolicyState, m: int, rng, arm_ids=None):
    """Independent Thompson assignment for each of the m users; ties go to
    the lowest arm id."""
    ids = _arm_list(state, arm_ids)
    draws = _reward_draws(state, ids, m, rng)
    return [ids[k] for k in np.argmax(draws, axis=1)]


def ts_probs(state: PolicyState, n_mc: int, rng, arm_ids=None) -> AllocationProbs:
    """Monte-Carlo estimate of each arm's probability of winning the
    Thompson argmax."""
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    ids = _arm_list(state, arm_ids)
    draws = _reward_draws(state, ids, n_mc, rng)
    winners = np.argmax(draws, axis=1)
    counts = np.bincount(winners, minlength=len(ids)).astype(np.float64)
    probs = counts / counts.sum()
    return AllocationProbs(probs=dict(zip(ids, probs)))


def round_probs(p: AllocationProbs, m: int) -> AllocationProbs:
    """Round every non-argmax probability up to the next multiple of 1/m and
    give the argmax arm the residual, so counts m*p are whole numbers."""
    ids = sorted(p.probs)
    vals = np.array([p.probs[a] for a in ids])
    if np.any(vals <= 0.0):
        raise ValueError("all probabilities must be positive before rounding")
    top = int(np.argmax(vals))  # first maximum: lowest arm id
    counts = {}
    for k, arm_id in enumerate(ids):
        if k == top:
            continue
        # q/m with p in ((q-1)/m, q/m]; the epsilon keeps exact multiples put
        q = math.ceil(vals[k] * m - 1e-9)
        counts[arm_id] = max(q, 1)
    residual = m - sum(counts.values())
    if residual < 0:
        raise ValueError(
            f"batch size {m} too small to round {len(ids)} probabilities"
        )
    counts[ids[top]] = residual
    return AllocationProbs(
        probs={a: counts[a] / m for a in ids}, granularity=m
    )


def ts_rnd_assign(state: PolicyState, m: int, n_mc: int, rng, arm_ids=None):
    """Lower-variance Thompson assignment: exactly m*p_rnd users per arm,
    filled in contiguous blocks in user order.

    The true assignment probabilities are strictly positive, but a
    Monte-Carlo estimate can be exactly zero; such estimates are floored at
    a tiny positive value so the rounding step still sends them up to 1/m.
    """
    probs = ts_probs(state, n_mc, rng, arm_ids=arm_ids)
    floored = np.maximum(np.array(list(probs.probs.values())), 1e-12)
    floored /= floored.sum()
    probs = AllocationProbs(probs=dict(zip(probs.probs, floored)))
    rounded = round_probs(probs, m)
    assignments = []
    for arm_id in sorted(rounded.probs):
        assignments.extend([arm_id] * int(round(rounded.probs[arm_id] * m)))
    return assignments


def seq_elim_step(
    state: PolicyState, threshold: float, n_mc: int, m: int, rng, selectable=None
):
    """One sequential-elimination step: drop active arms whose posterior
    probability of being optimal falls below the threshold (never all of
    them), then spread the m users uniformly over the survivors."""
    active = sorted(state.active if selectable is None else set(selectable) & state.active)
    if not active:
        raise ValueError("active set is empty")
    if len(active) == 1:
        return [active[0]] * m, set(active)
    probs = ts_probs(state, n_mc, rng, arm_ids=active)
    survivors = [a for a in active if probs.probs[a] >= threshold]
    if not survivors:
        best = max(active, key=lambda a: (probs.probs[a], -a))
        survivors = [best]
    assignments = [survivors[i % len(survivors)] for i in range(m)]
    return assignments, set(survivors)


def apply_feedback(state: PolicyState, items):
    """Fold newly forwarded outcome items into the beliefs.

    ``items`` is an iterable of (arm_id, j, prefix) where prefix holds the
    first j raw outcome entries of one user; items must already have passed
    the state's feedback view. Each whitened value adds a rank-one precision
    term and an information term, accumulated per (arm, outcome index) and
    resolved with one linear solve per touched arm.
    """
    by_arm = {}
    for arm_id, j, prefix in items:
        by_arm.setdefault(arm_id, {}).setdefault(j, []).append(prefix)
    for arm_id, groups in by_arm.items():
        precision = state._precision[arm_id]
        info = state._info[arm_id]
        for j, prefixes in groups.items():
            row = state.factors.l_inv_rows[j - 1]
            values = np.asarray(prefixes, dtype=np.float64) @ row[:j]
            precision += len(prefixes) * state._row_outers[j - 1]
            info += row * float(values.sum())
        cov = np.linalg.solve(precision, state._eye)
        cov = 0.5 * (cov + cov.T)
        state.beliefs[arm_id] = Belief(mean=cov @ info, cov=cov)
        state._moments.pop(arm_id, None)
    return state
