"""Batched simulation loop, replication management, and experiment presets.

Every batch, the policy assigns m users from what the censoring schedule has
revealed so far, the environment realizes full potential-outcome vectors for
the assigned arm and for the optimal arm, per-user regret is recorded, and
newly visible outcomes flow back to the policy. Assignment at batch t can
only use data revealed strictly before t.

All randomness is keyed: environment outcome draws depend on (replication,
batch, arm) only, so every policy inside a replication faces the same world,
and each policy's own sampling lives in its own stream.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace
from multiprocessing import get_context

import numpy as np

from impatient import __version__, rngstreams
from impatient.environments import (
    DelaySchedule,
    ReplayEnvironment,
    RollingEnvironment,
    SyntheticEnvironment,
    SyntheticEnvSpec,
    gen_binary_traces,
    make_synthetic,
    make_two_outcome,
)
from impatient.gaussian import RewardSpec
from impatient.metrics import RegretRecord, instantaneous_regret, write_regret_csv
from impatient.policies import make_policy
from impatient.priorfit import fit_all_classes
from impatient.rngstreams import StreamFactory

__all__ = [
    "SyntheticSpec",
    "TwoOutcomeSpec",
    "ReplaySpec",
    "ExperimentConfig",
    "RunResult",
    "run_episode",
    "run_replications",
    "preset",
    "PRESET_NAMES",
    "summarize",
    "summarize_cumulative",
    "write_manifest",
]


@dataclass(frozen=True)
class SyntheticSpec:
    """Correlated-Gaussian environment; arms are redrawn per replication."""

    alpha: float
    j_outcomes: int = 25
    num_arms: int = 20


@dataclass(frozen=True)
class TwoOutcomeSpec:
    """Two-outcome environment: immediate leading indicator, delayed reward."""

    correlation: float
    noise_scale: float = 1.0
    d_max: int = 10
    num_arms: int = 20


@dataclass(frozen=True)
class ReplaySpec:
    """Binary-trace replay; one dataset is generated per config and shared by
    all replications, and the policies use a prior fitted on a separate
    training dataset (or the isotropic preset where a policy asks for it)."""

    num_arms: int = 200
    traces_per_arm: int = 300
    j_outcomes: int = 60
    train_arms: int = 200
    train_traces_per_arm: int = 300
    rolling_active: int | None = None


@dataclass
class ExperimentConfig:
    preset: str
    env: object
    policies: list
    horizon: int
    m: int
    replications: int
    master_seed: int
    n_mc: int = 2048
    common_random_numbers: bool = True
    ratio_outputs: bool = False
    policy_options: dict = field(default_factory=dict)  # name -> {"n_mc": ...}
    out_dir: str | None = None

    def __post_init__(self):
        if self.horizon < 1 or self.m < 1 or self.replications < 1:
            raise ValueError("horizon, m and replications must be >= 1")

    @property
    def thresholds(self):
        out = set()
        for name in self.policies:
            if name == "seq_elim_1pct":
                out.add(0.01)
            elif name == "seq_elim_4pct":
                out.add(0.04)
        return out

    @property
    def active_count(self):
        return getattr(self.env, "rolling_active", None)


@dataclass
class RunResult:
    config: ExperimentConfig
    records: dict  # policy -> list[RegretRecord]
    wall_clock: float
    seeds: dict = field(default_factory=dict)
    final_beliefs: dict = field(default_factory=dict)  # policy -> {arm: Belief}, last replication

    def deltas(self, policy) -> np.ndarray:
        """(replications, horizon) per-batch regret matrix."""
        return np.array([r.deltas for r in self.records[policy]])

    def cumulative(self, policy) -> np.ndarray:
        return np.array([r.cumulative() for r in self.records[policy]])


def summarize(curves: np.ndarray):
    """Mean and standard error across replication curves."""
    curves = np.asarray(curves, dtype=np.float64)
    mean = curves.mean(axis=0)
    n = curves.shape[0]
    if n > 1:
        stderr = curves.std(axis=0, ddof=1) / math.sqrt(n)
    else:
        stderr = np.zeros_like(mean)
    return mean, stderr


def summarize_cumulative(records):
    return summarize(np.array([r.cumulative() for r in records]))


# ---------------------------------------------------------------------------
# Environment and prior construction
# ---------------------------------------------------------------------------


class _ConfigContext:
    """Per-replication environment construction.

    Replications each own a world draw: for replay environments that means a
    fresh generated dataset pair (train for fitting, eval for replay) per
    replication, shared by every policy inside the replication. The artifacts
    of one replication are cached so the per-policy loop fits the prior once.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self._replay_cache = {}

    def _replay_world(self, rep: int):
        cached = self._replay_cache.get(rep)
        if cached is not None:
            return cached
        config = self.config
        spec = config.env
        streams = StreamFactory(config.master_seed, rngstreams.DATASET, rep)
        num_arms = spec.num_arms
        if spec.rolling_active is not None:
            num_arms = spec.rolling_active + config.horizon
        dataset = gen_binary_traces(
            num_arms, spec.traces_per_arm, spec.j_outcomes, streams.generator("eval")
        )
        train = gen_binary_traces(
            spec.train_arms,
            spec.train_traces_per_arm,
            spec.j_outcomes,
            streams.generator("train"),
        )
        fitted = fit_all_classes(train)
        prior = fitted.to_prior_params(fitted.class_labels()[0])
        reward = RewardSpec(r0=0.0, r1=np.ones(spec.j_outcomes))
        delays = DelaySchedule(delays=np.arange(spec.j_outcomes))
        world = (dataset, prior, reward, delays)
        self._replay_cache = {rep: world}  # keep only the current replication
        return world

    def build_env(self, rep: int, policy_name: str):
        config = self.config
        spec = config.env
        key = [rep] if config.common_random_numbers else [rep, policy_name]
        streams = StreamFactory(config.master_seed, *key)
        if isinstance(spec, SyntheticSpec):
            env_spec = SyntheticEnvSpec(
                alpha=spec.alpha,
                j_outcomes=spec.j_outcomes,
                batch_size=config.m,
                num_arms=spec.num_arms,
            )
            prior, arms, reward, delays = make_synthetic(
                env_spec, streams.generator(rngstreams.ARM_LATENTS)
            )
            return SyntheticEnvironment(prior, arms, reward, delays, streams), prior
        if isinstance(spec, TwoOutcomeSpec):
            prior, arms, reward, delays = make_two_outcome(
                spec.correlation,
                spec.noise_scale,
                spec.d_max,
                spec.num_arms,
                streams.generator(rngstreams.ARM_LATENTS),
            )
            return SyntheticEnvironment(prior, arms, reward, delays, streams), prior
        if isinstance(spec, ReplaySpec):
            dataset, prior, reward, delays = self._replay_world(rep)
            if spec.rolling_active is not None:
                env = RollingEnvironment(dataset, reward, delays, streams, spec.rolling_active)
            else:
                env = ReplayEnvironment(dataset, reward, delays, streams)
            return env, prior
        raise TypeError(f"unknown environment spec {type(spec).__name__}")


# ---------------------------------------------------------------------------
# Episode loop
# ---------------------------------------------------------------------------


def run_episode(env, policy, horizon: int, m: int, policy_rng, replication=0, audit=None):
    """One policy's episode: assignments can only use outcomes whose reveal
    time lies strictly before the current batch."""
    deltas = []
    # arrival schedule: batch index -> list of (tau, user, arm, j)
    schedule = {}
    outcomes_store = {}  # (tau, user) -> realized outcome vector
    for t in range(1, horizon + 1):
        selectable = env.selectable_arm_ids(t)
        assignments = policy.assign(t, selectable, m, policy_rng)
        a_star = env.optimal_arm(t)
        needed = sorted(set(assignments) | {a_star})
        draws = {arm: env.batch_outcomes(t, arm, m) for arm in needed}
        assigned = np.array([draws[assignments[u]][u] for u in range(m)])
        optimal = draws[a_star]
        deltas.append(instantaneous_regret(optimal, assigned, env.reward))
        for u in range(m):
            outcomes_store[(t, u)] = assigned[u]
            for j in range(1, env.delays.dim + 1):
                d_eff = policy.view.effective_delay(j, env.delays)
                if d_eff is None:
                    continue
                schedule.setdefault(t + d_eff, []).append((t, u, assignments[u], j))
        items = []
        for tau, u, arm, j in schedule.pop(t, ()):
            if audit is not None:
                audit(t, tau, arm, j)
            items.append((arm, j, outcomes_store[(tau, u)][:j]))
        policy.apply_feedback(items)
        env.end_of_batch(t)
    return RegretRecord(replication=replication, deltas=deltas)


def _run_one_replication(context: _ConfigContext, rep: int):
    config = context.config
    out = {}
    beliefs = {}
    for name in config.policies:
        env, prior = context.build_env(rep, name)
        n_mc = int(config.policy_options.get(name, {}).get("n_mc", config.n_mc))
        policy = make_policy(name, prior, env.reward, env.delays, n_mc=n_mc)
        for arm_id in env.selectable_arm_ids(1):
            policy.add_arm(arm_id)
        policy_rng = rngstreams.substream(
            config.master_seed, rep, rngstreams.POLICY, name
        )
        out[name] = run_episode(
            env, policy, config.horizon, config.m, policy_rng, replication=rep
        )
        beliefs[name] = policy.beliefs
    return rep, out, beliefs


def run_replications(config: ExperimentConfig, jobs: int = 1, out_dir=None) -> RunResult:
    """Run every (policy, replication) pair and aggregate.

    Results are bitwise reproducible for a given master seed regardless of
    ``jobs``; partial results are flushed to ``out_dir`` if a replication
    fails midway.
    """
    start = time.monotonic()
    if out_dir is None:
        out_dir = config.out_dir
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    context = _ConfigContext(config)
    records = {name: [None] * config.replications for name in config.policies}
    final_beliefs = {}
    try:
        if jobs > 1:
            with get_context("fork").Pool(processes=jobs) as pool:
                for rep, out, beliefs in pool.imap_unordered(
                    _ReplicationTask(context), range(config.replications)
                ):
                    for name, record in out.items():
                        records[name][rep] = record
                    if rep == config.replications - 1:
                        final_beliefs = beliefs
        else:
            for rep in range(config.replications):
                _, out, beliefs = _run_one_replication(context, rep)
                for name, record in out.items():
                    records[name][rep] = record
                if rep == config.replications - 1:
                    final_beliefs = beliefs
    except Exception:
        if out_dir is not None:
            partial = {
                name: [r for r in recs if r is not None]
                for name, recs in records.items()
            }
            partial = {name: recs for name, recs in partial.items() if recs}
            if partial:
                write_regret_csv(f"{out_dir}/regret.csv", partial)
        raise
    result = RunResult(
        config=config,
        records=records,
        wall_clock=time.monotonic() - start,
        seeds={"master_seed": config.master_seed},
        final_beliefs=final_beliefs,
    )
    if out_dir is not None:
        write_regret_csv(f"{out_dir}/regret.csv", records)
        write_manifest(f"{out_dir}/manifest.csv", config.preset, config.master_seed, result.wall_clock)
    return result


class _ReplicationTask:
    """Picklable callable for the worker pool."""

    def __init__(self, context):
        self.context = context

    def __call__(self, rep):
        return _run_one_replication(self.context, rep)


def write_manifest(path, preset_name, seed, wall_clock):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("preset,seed,version,wall_clock_s\n")
        fh.write(f"{preset_name},{seed},impatient-{__version__},{wall_clock:.3f}\n")


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

PRESET_NAMES = (
    "genmodel",
    "genmodel-ratio",
    "replay-200",
    "priors",
    "nonstationary",
    "seqelim",
)

DEFAULT_SEED = 20240


def preset(name: str, seed: int = DEFAULT_SEED) -> ExperimentConfig:
    """Fully specified configuration for a named experiment.

    Replication counts default to publication scale; desk-scale runs shrink
    them through overrides (CLI flags or dataclasses.replace).
    """
    if name == "genmodel":
        return ExperimentConfig(
            preset=name,
            env=SyntheticSpec(alpha=0.8, j_outcomes=25, num_arms=20),
            policies=["progressive", "delayed"],
            horizon=50,
            m=10,
            replications=500,
            master_seed=seed,
        )
    if name == "genmodel-ratio":
        config = preset("genmodel", seed)
        return replace(config, preset=name, ratio_outputs=True)
    if name == "replay-200":
        return ExperimentConfig(
            preset=name,
            env=ReplaySpec(num_arms=200),
            policies=["progressive", "delayed", "day_two", "oracle"],
            horizon=90,
            m=50,
            replications=10,
            master_seed=seed,
        )
    if name == "priors":
        # horizon covers the cold-start window before any full reward lands
        return ExperimentConfig(
            preset=name,
            env=ReplaySpec(num_arms=200),
            policies=["progressive", "progressive_isotropic", "delayed"],
            horizon=60,
            m=10,
            replications=10,
            master_seed=seed,
        )
    if name == "nonstationary":
        return ExperimentConfig(
            preset=name,
            env=ReplaySpec(num_arms=150, rolling_active=60),
            policies=["progressive", "delayed", "day_two"],
            horizon=90,
            m=25,
            replications=10,
            master_seed=seed,
        )
    if name == "seqelim":
        return ExperimentConfig(
            preset=name,
            env=SyntheticSpec(alpha=0.1, j_outcomes=25, num_arms=20),
            policies=["progressive", "seq_elim_1pct", "seq_elim_4pct"],
            horizon=50,
            m=10,
            replications=5000,
            master_seed=seed,
        )
    raise ValueError(f"unknown preset {name!r}; valid: {', '.join(PRESET_NAMES)}")
