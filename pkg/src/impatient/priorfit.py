"""Empirical-Bayes fitting of the filter's hyperparameters.

Historical traces of arms in one feature class yield moment estimators: the
noise covariance is the average of per-arm within-arm covariances, the prior
mean is the plain average of per-arm trace means, and the prior covariance is
the scatter of those means around the fitted prior mean. A marginal
negative-log-likelihood diagnostic lets callers sanity-check the estimates.

Two documented biases are kept as-is: per-arm covariances use the 1/N
normalization, and the prior-covariance scatter is not deflated by the
noise-over-count inflation term.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from impatient.gaussian import PriorParams, ensure_positive_definite

logger = logging.getLogger(__name__)

__all__ = [
    "FittedPrior",
    "fit_noise_cov",
    "fit_prior_mean",
    "fit_prior_cov",
    "fit_all_classes",
    "marginal_nll",
    "write_prior_csvs",
    "read_prior_csvs",
]


@dataclass(frozen=True)
class FittedPrior:
    """Per-class hyperparameter estimates plus the counts they used."""

    classes: dict  # z -> dict(mu, sigma, v)
    arm_counts: dict  # z -> number of arms
    trace_counts: dict  # z -> number of traces

    def class_labels(self):
        return sorted(self.classes)

    def to_prior_params(self, z, ridge_rel=1e-6) -> PriorParams:
        """Usable filter parameters for class z; singular estimates (e.g. a
        constant outcome coordinate) get a small relative ridge."""
        est = self.classes[z]
        return PriorParams(
            mu1=est["mu"],
            sigma1=ensure_positive_definite(est["sigma"], ridge_rel),
            v=ensure_positive_definite(est["v"], ridge_rel),
        )


def _class_arms(dataset, z):
    arms = [a for a in dataset.arm_ids if dataset.class_of(a) == z]
    if not arms:
        raise ValueError(f"feature class {z!r} has no arms")
    return arms


def fit_noise_cov(dataset, z) -> np.ndarray:
    """Average of the per-arm within-arm outcome covariances (1/N form)."""
    arms = _class_arms(dataset, z)
    total = np.zeros((dataset.j_outcomes, dataset.j_outcomes))
    for arm_id in arms:
        traces = dataset.traces_of(arm_id)
        if traces.shape[0] < 2:
            raise ValueError(
                f"arm {arm_id!r} has {traces.shape[0]} trace(s); "
                "need at least 2 to estimate noise covariance"
            )
        centered = traces - traces.mean(axis=0)
        total += centered.T @ centered / traces.shape[0]
    return total / len(arms)


def fit_prior_mean(dataset, z) -> np.ndarray:
    """Unweighted average of the per-arm trace means."""
    arms = _class_arms(dataset, z)
    means = np.array([dataset.traces_of(a).mean(axis=0) for a in arms])
    return means.mean(axis=0)


def fit_prior_cov(dataset, z, mu) -> np.ndarray:
    """Scatter of per-arm trace means around the fitted prior mean."""
    arms = _class_arms(dataset, z)
    if len(arms) < 2:
        raise ValueError(f"feature class {z!r} has {len(arms)} arm(s); need at least 2")
    mu = np.asarray(mu, dtype=np.float64)
    scatter = np.zeros((dataset.j_outcomes, dataset.j_outcomes))
    for arm_id in arms:
        diff = dataset.traces_of(arm_id).mean(axis=0) - mu
        scatter += np.outer(diff, diff)
    return scatter / len(arms)


def fit_all_classes(dataset) -> FittedPrior:
    """Fit every feature class in the dataset.

    A class with a single arm cannot support a prior-covariance estimate; it
    falls back to the pooled scatter across all classes, with a warning.
    """
    labels = sorted({dataset.class_of(a) or "" for a in dataset.arm_ids})
    classes, arm_counts, trace_counts = {}, {}, {}
    pooled = None
    for z in labels:
        arms = [a for a in dataset.arm_ids if (dataset.class_of(a) or "") == z]
        mu = np.array([dataset.traces_of(a).mean(axis=0) for a in arms]).mean(axis=0)
        v = np.zeros((dataset.j_outcomes, dataset.j_outcomes))
        for arm_id in arms:
            traces = dataset.traces_of(arm_id)
            if traces.shape[0] < 2:
                raise ValueError(
                    f"arm {arm_id!r} has {traces.shape[0]} trace(s); "
                    "need at least 2 to estimate noise covariance"
                )
            centered = traces - traces.mean(axis=0)
            v += centered.T @ centered / traces.shape[0]
        v /= len(arms)
        sigma = None
        if len(arms) >= 2:
            sigma = np.zeros_like(v)
            for arm_id in arms:
                diff = dataset.traces_of(arm_id).mean(axis=0) - mu
                sigma += np.outer(diff, diff)
            sigma /= len(arms)
        classes[z] = {"mu": mu, "sigma": sigma, "v": v}
        arm_counts[z] = len(arms)
        trace_counts[z] = int(sum(dataset.traces_of(a).shape[0] for a in arms))
    # pooled scatter for single-arm classes
    all_means = np.array([dataset.traces_of(a).mean(axis=0) for a in dataset.arm_ids])
    grand = all_means.mean(axis=0)
    pooled = (all_means - grand).T @ (all_means - grand) / all_means.shape[0]
    for z, est in classes.items():
        if est["sigma"] is None:
            logger.warning(
                "class %r has a single arm; using the pooled prior covariance", z
            )
            est["sigma"] = pooled
    return FittedPrior(classes=classes, arm_counts=arm_counts, trace_counts=trace_counts)


def marginal_nll(dataset, z, mu, sigma, v) -> float:
    """Marginal negative log likelihood (up to constants) of the per-arm
    trace means under candidate hyperparameters: each arm contributes
    log det(sigma + v/N) plus the weighted squared distance of its mean."""
    arms = _class_arms(dataset, z)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    total = 0.0
    for arm_id in arms:
        traces = dataset.traces_of(arm_id)
        combined = sigma + v / traces.shape[0]
        try:
            np.linalg.cholesky(combined)
        except np.linalg.LinAlgError:
            raise ValueError(
                f"sigma + v/N is not positive definite for arm {arm_id!r}"
            ) from None
        sign, logdet = np.linalg.slogdet(combined)
        diff = traces.mean(axis=0) - mu
        total += logdet + float(diff @ np.linalg.solve(combined, diff))
    return total


# ---------------------------------------------------------------------------
# CSV bundle
# ---------------------------------------------------------------------------


def _write_matrix_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_prior_csvs(fitted: FittedPrior, out_dir):
    """Write prior_mean.csv (z,j,value), prior_cov.csv and noise_cov.csv
    (z,i,j,value) under out_dir."""
    mean_rows, cov_rows, noise_rows = [], [], []
    for z in fitted.class_labels():
        est = fitted.classes[z]
        dim = est["mu"].size
        for j in range(dim):
            mean_rows.append([z, j + 1, format(est["mu"][j], ".17g")])
        for i in range(dim):
            for j in range(dim):
                cov_rows.append([z, i + 1, j + 1, format(est["sigma"][i, j], ".17g")])
                noise_rows.append([z, i + 1, j + 1, format(est["v"][i, j], ".17g")])
    _write_matrix_csv(f"{out_dir}/prior_mean.csv", ["z", "j", "value"], mean_rows)
    _write_matrix_csv(f"{out_dir}/prior_cov.csv", ["z", "i", "j", "value"], cov_rows)
    _write_matrix_csv(f"{out_dir}/noise_cov.csv", ["z", "i", "j", "value"], noise_rows)


def read_prior_csvs(in_dir) -> FittedPrior:
    """Load a prior bundle written by write_prior_csvs."""
    means, covs, noises = {}, {}, {}
    with open(f"{in_dir}/prior_mean.csv", encoding="utf-8", newline="") as fh:
        for row in list(csv.reader(fh))[1:]:
            means.setdefault(row[0], {})[int(row[1])] = float(row[2])
    for name, store in (("prior_cov", covs), ("noise_cov", noises)):
        with open(f"{in_dir}/{name}.csv", encoding="utf-8", newline="") as fh:
            for row in list(csv.reader(fh))[1:]:
                store.setdefault(row[0], {})[(int(row[1]), int(row[2]))] = float(row[3])
    classes = {}
    for z, mu_map in means.items():
        dim = max(mu_map)
        mu = np.array([mu_map[j] for j in range(1, dim + 1)])
        sigma = np.array(
            [[covs[z][(i, j)] for j in range(1, dim + 1)] for i in range(1, dim + 1)]
        )
        v = np.array(
            [[noises[z][(i, j)] for j in range(1, dim + 1)] for i in range(1, dim + 1)]
        )
        classes[z] = {"mu": mu, "sigma": sigma, "v": v}
    return FittedPrior(classes=classes, arm_counts={}, trace_counts={})
