"""Bandit policies that exploit progressively revealed engagement outcomes.

The package combines a Gaussian filter over censored outcome vectors with
Thompson-sampling policies, empirical-Bayes prior fitting, the value of
progressive feedback metric, and a batched simulation harness with
experiment presets and a CLI.
"""

from impatient.gaussian import (
    Belief,
    CholeskyFactors,
    PriorParams,
    RewardSpec,
    WhitenedObservation,
    cholesky_whiten,
    posterior_batch_oracle,
    posterior_update,
    reward_belief,
    sample_belief,
)

__version__ = "0.1.0"

__all__ = [
    "Belief",
    "CholeskyFactors",
    "PriorParams",
    "RewardSpec",
    "WhitenedObservation",
    "cholesky_whiten",
    "posterior_batch_oracle",
    "posterior_update",
    "reward_belief",
    "sample_belief",
    "__version__",
]
