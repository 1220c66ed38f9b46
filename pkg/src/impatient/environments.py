"""Data-generating environments and censoring for batched simulations.

Covers the correlated-Gaussian generative model, trace-replay over a pool of
recorded outcome vectors, a binary engagement-trace generator that stands in
for production data, and the rolling-action variant where the arm catalog
changes every batch.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from impatient.gaussian import PriorParams, RewardSpec
from impatient import rngstreams

__all__ = [
    "DelaySchedule",
    "SyntheticEnvSpec",
    "ArmLatent",
    "TraceDataset",
    "CensoredTrace",
    "make_synthetic",
    "make_two_outcome",
    "sample_outcomes",
    "replay_sample",
    "binary_trace",
    "gen_binary_traces",
    "rotate_actions",
    "censor",
    "read_traces_csv",
    "write_traces_csv",
    "SyntheticEnvironment",
    "ReplayEnvironment",
    "RollingEnvironment",
]


@dataclass(frozen=True)
class DelaySchedule:
    """Per-outcome reveal delays, in batches."""

    delays: np.ndarray

    def __post_init__(self):
        delays = np.asarray(self.delays, dtype=np.int64).reshape(-1)
        if delays.size == 0 or np.any(delays < 0):
            raise ValueError("delays must be a non-empty vector of integers >= 0")
        object.__setattr__(self, "delays", delays)

    @property
    def d_max(self) -> int:
        return int(self.delays.max())

    @property
    def dim(self) -> int:
        return self.delays.size


@dataclass(frozen=True)
class SyntheticEnvSpec:
    """Correlated-Gaussian generative model: one shared-signal coefficient
    alpha controls how much early outcomes reveal about later ones."""

    alpha: float
    j_outcomes: int = 25
    batch_size: int = 10
    num_arms: int = 20

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.j_outcomes < 1 or self.batch_size < 1 or self.num_arms < 1:
            raise ValueError("j_outcomes, batch_size and num_arms must be >= 1")

    @property
    def reward_scale(self) -> float:
        j = self.j_outcomes
        return float(np.sqrt((1 - self.alpha**2) * j + self.alpha**2 * j**2))

    def sigma1(self) -> np.ndarray:
        j = self.j_outcomes
        return (1 - self.alpha**2) * np.eye(j) + self.alpha**2 * np.ones((j, j))

    def noise_cov(self) -> np.ndarray:
        return float(self.batch_size) * np.eye(self.j_outcomes)


@dataclass(frozen=True)
class ArmLatent:
    """One arm's latent mean-outcome vector and derived mean reward."""

    arm_id: int
    theta: np.ndarray
    r_bar: float
    z: str | None = None


@dataclass
class TraceDataset:
    """Pool of recorded outcome traces grouped by arm.

    ``arms`` maps arm_id -> (z, traces) where traces is an (N, J) array.
    ``contexts`` optionally maps arm_id -> (N, k) user-context rows aligned
    with the traces.
    """

    arms: dict
    contexts: dict = field(default_factory=dict)

    def __post_init__(self):
        j = None
        for arm_id, (_, traces) in self.arms.items():
            traces = np.asarray(traces, dtype=np.float64)
            if traces.ndim != 2 or traces.shape[0] < 1:
                raise ValueError(f"arm {arm_id} must have at least one trace")
            if j is None:
                j = traces.shape[1]
            elif traces.shape[1] != j:
                raise ValueError("every trace must have the same number of outcomes")
            self.arms[arm_id] = (self.arms[arm_id][0], traces)
        if j is None:
            raise ValueError("dataset has no arms")
        self.j_outcomes = j

    @property
    def arm_ids(self):
        return sorted(self.arms)

    def traces_of(self, arm_id) -> np.ndarray:
        if arm_id not in self.arms:
            raise KeyError(f"unknown arm {arm_id!r}")
        return self.arms[arm_id][1]

    def class_of(self, arm_id):
        if arm_id not in self.arms:
            raise KeyError(f"unknown arm {arm_id!r}")
        return self.arms[arm_id][0]

    def counts(self) -> dict:
        return {a: self.arms[a][1].shape[0] for a in self.arms}


@dataclass(frozen=True)
class CensoredTrace:
    """One user's outcome vector plus the batch it was assigned in."""

    user_id: int
    arm_id: int
    tau_u: int
    outcomes: np.ndarray

    def observed_through(self, t: int, delays: DelaySchedule) -> np.ndarray:
        """Visibility mask at decision time t: entry j visible iff
        t > tau_u + d_j."""
        return t > self.tau_u + delays.delays


def censor(trace: CensoredTrace, t: int, delays: DelaySchedule):
    """Outcome entries that become visible exactly at decision time t.

    Entry j is visible iff t > tau_u + d_j, so it is newly visible at
    t = tau_u + d_j + 1. Returns a list of (j, value) with 1-based j.
    """
    if t < trace.tau_u:
        raise ValueError("cannot censor before the assignment batch")
    newly = np.flatnonzero(t == trace.tau_u + delays.delays + 1)
    return [(int(j) + 1, float(trace.outcomes[j])) for j in newly]


def make_synthetic(spec: SyntheticEnvSpec, rng):
    """Draw a synthetic environment: latent vectors for every arm plus the
    correctly specified prior, scaled average-outcome reward, and the
    one-new-outcome-per-batch delay schedule."""
    j = spec.j_outcomes
    sigma1 = spec.sigma1()
    prior = PriorParams(mu1=np.zeros(j), sigma1=sigma1, v=spec.noise_cov())
    reward = RewardSpec(r0=0.0, r1=np.ones(j) / spec.reward_scale)
    delays = DelaySchedule(delays=np.arange(j))
    chol = np.linalg.cholesky(sigma1)
    arms = []
    for arm_id in range(spec.num_arms):
        theta = chol @ rng.standard_normal(j)
        arms.append(
            ArmLatent(arm_id=arm_id, theta=theta, r_bar=float(reward.of(theta)))
        )
    return prior, arms, reward, delays


def make_two_outcome(correlation, noise_scale, d_max, num_arms, rng, batch_size=1):
    """Two-outcome environment: the first outcome is immediate, the reward is
    the second outcome revealed after d_max batches, and ``correlation``
    controls how predictive the first outcome is.

    A correlation of exactly 1 makes the covariances singular, so it is
    clipped just below 1; the behavioral difference is far below Monte-Carlo
    resolution.
    """
    rho = min(float(correlation), 1.0 - 1e-9)
    if not 0.0 <= rho < 1.0:
        raise ValueError("correlation must lie in [0, 1]")
    corr = np.array([[1.0, rho], [rho, 1.0]])
    prior = PriorParams(mu1=np.zeros(2), sigma1=corr, v=noise_scale * corr)
    reward = RewardSpec(r0=0.0, r1=np.array([0.0, 1.0]))
    delays = DelaySchedule(delays=np.array([0, d_max]))
    chol = np.linalg.cholesky(corr)
    arms = []
    for arm_id in range(num_arms):
        theta = chol @ rng.standard_normal(2)
        arms.append(
            ArmLatent(arm_id=arm_id, theta=theta, r_bar=float(reward.of(theta)))
        )
    return prior, arms, reward, delays


def sample_outcomes(arm: ArmLatent, v, n: int, rng) -> np.ndarray:
    """n independent outcome vectors around the arm's latent mean."""
    if n < 0:
        raise ValueError("n must be >= 0")
    v = np.asarray(v, dtype=np.float64)
    if n == 0:
        return np.empty((0, arm.theta.size))
    chol = np.linalg.cholesky(v)
    return arm.theta + rng.standard_normal((n, arm.theta.size)) @ chol.T


def replay_sample(dataset: TraceDataset, arm_id, rng) -> np.ndarray:
    """One trace drawn uniformly with replacement from the arm's pool."""
    traces = dataset.traces_of(arm_id)
    return traces[int(rng.integers(traces.shape[0]))]


def binary_trace(stay_prob, return_prob, j_outcomes, rng) -> np.ndarray:
    """One binary engagement trace from a two-state chain.

    Day 1 is always engaged; afterwards the user stays engaged with
    ``stay_prob`` and comes back from an idle day with ``return_prob``.
    """
    y = np.empty(j_outcomes)
    y[0] = 1.0
    engaged = True
    for j in range(1, j_outcomes):
        p = stay_prob if engaged else return_prob
        engaged = rng.random() < p
        y[j] = 1.0 if engaged else 0.0
    return y


# Fixture constants of the binary-trace generator. Each arm mixes a durable
# component (drives the return probability and hence long-run engagement)
# with a partially correlated early-retention component (drives the stay
# probability and hence the first days), so early signals are informative
# but imperfect. The lognormal spread gives a heavy right tail of very
# sticky arms.
_STICKINESS_LOG_MEAN = -0.3
_STICKINESS_LOG_SD = 0.9
_RETURN_FRACTION = 0.25
_EARLY_SHIFT = 0.4
_EARLY_MIX = 0.5
_STAY_MIN, _STAY_MAX = 0.02, 0.97


def gen_binary_traces(
    num_arms=200, traces_per_arm=100, j_outcomes=60, rng=None, num_classes=1
) -> TraceDataset:
    """Synthetic binary engagement dataset over ``num_arms`` arms.

    Each arm draws a lognormal stickiness level that sets its two-state
    chain; classes (when more than one) shift the stickiness distribution.
    The reward convention for these traces is the plain sum of the entries.
    """
    if rng is None:
        rng = np.random.default_rng()
    if j_outcomes < 1 or traces_per_arm < 1 or num_arms < 1:
        raise ValueError("num_arms, traces_per_arm and j_outcomes must be >= 1")
    if num_classes < 1:
        raise ValueError("num_classes must be >= 1")
    offsets = np.linspace(-0.4, 0.4, num_classes) if num_classes > 1 else [0.0]
    arms = {}
    for arm_id in range(num_arms):
        cls = arm_id % num_classes
        durable_shock = rng.standard_normal()
        early_shock = _EARLY_MIX * durable_shock + np.sqrt(1 - _EARLY_MIX**2) * rng.standard_normal()
        durable = np.exp(_STICKINESS_LOG_MEAN + offsets[cls] + _STICKINESS_LOG_SD * durable_shock)
        early = np.exp(
            _STICKINESS_LOG_MEAN + _EARLY_SHIFT + offsets[cls] + _STICKINESS_LOG_SD * early_shock
        )
        back = float(np.clip(_RETURN_FRACTION * durable / (1.0 + durable), 0.005, 0.9))
        stay = float(np.clip(early / (1.0 + early), _STAY_MIN, _STAY_MAX))
        traces = np.array(
            [binary_trace(stay, back, j_outcomes, rng) for _ in range(traces_per_arm)]
        )
        arms[arm_id] = (f"z{cls}", traces)
    return TraceDataset(arms=arms)


def rotate_actions(active, reservoir, t):
    """Retire the oldest active arm and introduce one from the reservoir.

    ``active`` is a list of (introduction_time, arm_id); ties on the
    introduction time retire the lowest arm_id. Returns the new active list
    and the remaining reservoir.
    """
    if not reservoir:
        raise RuntimeError("action reservoir exhausted; cannot rotate")
    if not active:
        raise ValueError("active set must not be empty")
    oldest = min(active, key=lambda pair: (pair[0], pair[1]))
    new_active = [pair for pair in active if pair != oldest]
    new_active.append((t, reservoir[0]))
    return new_active, list(reservoir[1:])


# ---------------------------------------------------------------------------
# CSV interchange
# ---------------------------------------------------------------------------


def write_traces_csv(dataset: TraceDataset, path):
    """Write the dataset as UTF-8 CSV: arm_id,z,y1..yJ[,x1..xk]."""
    j = dataset.j_outcomes
    k = 0
    if dataset.contexts:
        k = next(iter(dataset.contexts.values())).shape[1]
    header = ["arm_id", "z"] + [f"y{i}" for i in range(1, j + 1)]
    header += [f"x{i}" for i in range(1, k + 1)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for arm_id in dataset.arm_ids:
            z, traces = dataset.arms[arm_id]
            ctx = dataset.contexts.get(arm_id)
            for i, row in enumerate(traces):
                out = [arm_id, "" if z is None else z]
                out += [format(v, ".17g") for v in row]
                if ctx is not None:
                    out += [format(v, ".17g") for v in ctx[i]]
                writer.writerow(out)


def read_traces_csv(path) -> TraceDataset:
    """Parse a traces CSV; J (and any context width) is inferred from the
    header. Raises ValueError naming the line of the first malformed row."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("traces CSV is empty") from None
        if len(header) < 3 or header[0] != "arm_id" or header[1] != "z":
            raise ValueError("traces CSV header must start with arm_id,z,y1,...")
        y_cols = [h for h in header[2:] if h.startswith("y")]
        x_cols = [h for h in header[2:] if h.startswith("x")]
        expected_y = [f"y{i}" for i in range(1, len(y_cols) + 1)]
        expected_x = [f"x{i}" for i in range(1, len(x_cols) + 1)]
        if y_cols != expected_y or x_cols != expected_x or not y_cols:
            raise ValueError("traces CSV outcome columns must be y1..yJ (then x1..xk)")
        j = len(y_cols)
        k = len(x_cols)
        rows = {}
        ctx_rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 + j + k:
                raise ValueError(f"line {lineno}: expected {2 + j + k} fields, got {len(row)}")
            try:
                arm_id = int(row[0])
                values = [float(v) for v in row[2 : 2 + j]]
                ctx = [float(v) for v in row[2 + j :]]
            except ValueError:
                raise ValueError(f"line {lineno}: malformed numeric field") from None
            z = row[1] or None
            rows.setdefault(arm_id, (z, []))[1].append(values)
            if k:
                ctx_rows.setdefault(arm_id, []).append(ctx)
    arms = {a: (z, np.array(tr)) for a, (z, tr) in rows.items()}
    contexts = {a: np.array(c) for a, c in ctx_rows.items()}
    return TraceDataset(arms=arms, contexts=contexts)


# ---------------------------------------------------------------------------
# Runtime environments used by the simulation harness
# ---------------------------------------------------------------------------


class SyntheticEnvironment:
    """Gaussian environment with common-random-number potential outcomes.

    The potential outcomes of one batch for one arm form a matrix drawn from
    an RNG substream keyed by (batch, arm) alone; user u reads row u. Every
    policy sharing a replication therefore sees identical draws wherever its
    assignments agree, and nothing a policy does can perturb the stream.
    """

    def __init__(self, prior, arms, reward, delays, streams):
        self.prior = prior
        self.arms = {arm.arm_id: arm for arm in arms}
        self.reward = reward
        self.delays = delays
        self._streams = streams
        self._chol_v = np.linalg.cholesky(prior.v)

    @property
    def arm_ids(self):
        return sorted(self.arms)

    def selectable_arm_ids(self, t):
        return self.arm_ids

    def batch_outcomes(self, t, arm_id, m) -> np.ndarray:
        """Potential outcome vectors of all m users of batch t for one arm."""
        gen = self._streams.generator(rngstreams.OUTCOMES, t, arm_id)
        theta = self.arms[arm_id].theta
        return theta + gen.standard_normal((m, theta.size)) @ self._chol_v.T

    def mean_reward(self, arm_id) -> float:
        return self.arms[arm_id].r_bar

    def optimal_arm(self, t):
        ids = self.selectable_arm_ids(t)
        rewards = np.array([self.mean_reward(a) for a in ids])
        return ids[int(np.argmax(rewards))]

    def end_of_batch(self, t):
        return None


class ReplayEnvironment:
    """Replays recorded traces; an arm's true mean reward is its pool mean."""

    def __init__(self, dataset, reward, delays, streams):
        self.dataset = dataset
        self.reward = reward
        self.delays = delays
        self._streams = streams
        self._mean = {
            a: float(np.mean(reward.of(dataset.traces_of(a))))
            for a in dataset.arm_ids
        }

    @property
    def arm_ids(self):
        return self.dataset.arm_ids

    def selectable_arm_ids(self, t):
        return self.arm_ids

    def batch_outcomes(self, t, arm_id, m) -> np.ndarray:
        """One uniformly resampled trace per user of batch t for one arm."""
        gen = self._streams.generator(rngstreams.OUTCOMES, t, arm_id)
        traces = self.dataset.traces_of(arm_id)
        return traces[gen.integers(traces.shape[0], size=m)]

    def mean_reward(self, arm_id) -> float:
        return self._mean[arm_id]

    def optimal_arm(self, t):
        ids = self.selectable_arm_ids(t)
        rewards = np.array([self._mean[a] for a in ids])
        return ids[int(np.argmax(rewards))]

    def end_of_batch(self, t):
        return None


class RollingEnvironment(ReplayEnvironment):
    """Replay environment whose catalog rolls: after every batch the oldest
    active arm retires and a reservoir arm is introduced."""

    def __init__(self, dataset, reward, delays, streams, active_count):
        super().__init__(dataset, reward, delays, streams)
        ids = self.dataset.arm_ids
        if len(ids) <= active_count:
            raise ValueError("dataset must hold more arms than the active count")
        self.active = [(0, a) for a in ids[:active_count]]
        self.reservoir = list(ids[active_count:])
        self.introduced = list(ids[:active_count])

    def selectable_arm_ids(self, t):
        return sorted(a for _, a in self.active)

    def end_of_batch(self, t):
        self.active, self.reservoir = rotate_actions(self.active, self.reservoir, t)
        self.introduced.append(self.active[-1][1])
        return self.active[-1][1]
