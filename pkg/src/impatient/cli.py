"""Command-line entry point.

Subcommands: ``simulate`` (run a preset or config-file experiment and write
the metrics CSVs), ``fit-prior`` (empirical-Bayes fit from a traces CSV),
``vopf`` (feedback-value curves over an (m, t) grid), and ``gen-traces``
(write a synthetic binary-trace dataset). Flag values override config-file
values; defaults fill the rest. Exit codes: 0 success, 2 configuration or
input error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import replace

import numpy as np

from impatient.environments import (
    DelaySchedule,
    SyntheticEnvSpec,
    gen_binary_traces,
    read_traces_csv,
    write_traces_csv,
)
from impatient.gaussian import PriorParams, RewardSpec
from impatient.harness import (
    PRESET_NAMES,
    SyntheticSpec,
    preset,
    run_replications,
)
from impatient.metrics import (
    VopfQuery,
    regret_ratio_log,
    vopf_general,
    write_ratio_csv,
    write_vopf_csv,
)
from impatient.priorfit import fit_all_classes, read_prior_csvs, write_prior_csvs
from impatient import rngstreams


class ConfigError(Exception):
    """Bad flag, config key, or input file; maps to exit code 2."""


def default_out_root():
    return os.environ.get("IMPATIENT_OUT_DIR", "out")


def _parse_policies(text):
    return [p.strip() for p in text.split(",") if p.strip()]


def _load_config_file(path):
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    if "experiment" not in parser:
        raise ConfigError("config file must contain an [experiment] section")
    base = dict(parser["experiment"])
    policy_options = {}
    for section in parser.sections():
        if section.startswith("policy:"):
            policy_options[section.split(":", 1)[1]] = dict(parser[section])
    return base, policy_options


def resolve_config(args):
    """Merge preset, config file, and flags into one ExperimentConfig."""
    file_values, policy_options = ({}, {})
    if args.config:
        file_values, policy_options = _load_config_file(args.config)
    preset_name = args.preset or file_values.get("preset")
    if not preset_name:
        raise ConfigError("no preset given: pass --preset or set preset in the config file")
    try:
        config = preset(preset_name)
    except ValueError as err:
        raise ConfigError(str(err)) from None

    def pick(flag_value, key, cast):
        if flag_value is not None:
            return cast(flag_value)
        if key in file_values:
            try:
                return cast(file_values[key])
            except ValueError:
                raise ConfigError(f"bad value for config key '{key}'") from None
        return None

    seed = pick(args.seed, "seed", int)
    if seed is not None:
        config = replace(config, master_seed=seed)
    replications = pick(args.replications, "replications", int)
    if replications is not None:
        config = replace(config, replications=replications)
    horizon = pick(args.horizon, "horizon", int)
    if horizon is not None:
        config = replace(config, horizon=horizon)
    m = pick(args.m, "m", int)
    if m is not None:
        config = replace(config, m=m)
    n_mc = pick(args.n_mc, "n_mc", int)
    if n_mc is not None:
        config = replace(config, n_mc=n_mc)
    policies = pick(args.policies, "policies", _parse_policies)
    if policies:
        config = replace(config, policies=policies)
    crn = pick(None, "crn", lambda s: s.strip().lower() in ("1", "true", "yes"))
    if args.independent_streams:
        crn = False
    if crn is not None:
        config = replace(config, common_random_numbers=crn)
    alpha = pick(args.alpha, "alpha", float)
    if alpha is not None:
        if not isinstance(config.env, SyntheticSpec):
            raise ConfigError(f"key 'alpha' does not apply to the {config.preset} environment")
        config = replace(config, env=replace(config.env, alpha=alpha))
    arms = pick(args.arms, "arms", int)
    if arms is not None:
        config = replace(config, env=replace(config.env, num_arms=arms))
    if policy_options:
        unknown = set(policy_options) - set(config.policies)
        if unknown:
            raise ConfigError(f"policy section for unknown policy: {sorted(unknown)[0]}")
        parsed = {}
        for name, options in policy_options.items():
            bad = set(options) - {"n_mc"}
            if bad:
                raise ConfigError(f"unknown key '{sorted(bad)[0]}' in [policy:{name}]")
            try:
                parsed[name] = {"n_mc": int(options["n_mc"])} if "n_mc" in options else {}
            except ValueError:
                raise ConfigError(f"bad value for n_mc in [policy:{name}]") from None
        config = replace(config, policy_options=parsed)
    if config.replications < 1:
        raise ConfigError("key 'replications' must be >= 1")
    return config


def _echo_resolved(config, out_dir):
    path = os.path.join(out_dir, "resolved_config.ini")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("[experiment]\n")
        fh.write(f"preset = {config.preset}\n")
        fh.write(f"env = {config.env!r}\n")
        fh.write(f"policies = {', '.join(config.policies)}\n")
        fh.write(f"horizon = {config.horizon}\n")
        fh.write(f"m = {config.m}\n")
        fh.write(f"replications = {config.replications}\n")
        fh.write(f"seed = {config.master_seed}\n")
        fh.write(f"n_mc = {config.n_mc}\n")
        fh.write(f"crn = {config.common_random_numbers}\n")


def cmd_simulate(args):
    config = resolve_config(args)
    out_dir = args.out or os.path.join(default_out_root(), config.preset)
    os.makedirs(out_dir, exist_ok=True)
    result = run_replications(config, jobs=args.jobs, out_dir=out_dir)
    _echo_resolved(config, out_dir)
    if config.ratio_outputs:
        _write_ratio_outputs(config, result, out_dir)
    print(f"wrote {out_dir}/regret.csv ({config.replications} replications)")
    return 0


def _write_ratio_outputs(config, result, out_dir):
    if not {"progressive", "delayed"} <= set(config.policies):
        raise ConfigError("ratio outputs need both 'progressive' and 'delayed' policies")
    curve = regret_ratio_log(result.deltas("progressive"), result.deltas("delayed"))
    label = f"{config.preset}:alpha={config.env.alpha}"
    write_ratio_csv(os.path.join(out_dir, "ratio.csv"), label, curve)
    spec = config.env
    env_spec = SyntheticEnvSpecAdapter(spec, config.m)
    rows = [
        (label, config.m, t, vopf_general(env_spec.query(t)))
        for t in range(1, config.horizon + 1)
    ]
    write_vopf_csv(os.path.join(out_dir, "vopf.csv"), rows)


class SyntheticEnvSpecAdapter:
    """Feedback-value queries for a synthetic experiment configuration."""

    def __init__(self, spec: SyntheticSpec, m: int):
        env_spec = SyntheticEnvSpec(
            alpha=spec.alpha, j_outcomes=spec.j_outcomes, batch_size=m, num_arms=1
        )
        self.prior = PriorParams(
            mu1=np.zeros(spec.j_outcomes), sigma1=env_spec.sigma1(), v=env_spec.noise_cov()
        )
        self.reward = RewardSpec(
            r0=0.0, r1=np.ones(spec.j_outcomes) / env_spec.reward_scale
        )
        self.delays = DelaySchedule(delays=np.arange(spec.j_outcomes))
        self.m = m

    def query(self, t):
        return VopfQuery(
            prior=self.prior, reward=self.reward, delays=self.delays, m=self.m, t=t
        )


def cmd_fit_prior(args):
    try:
        dataset = read_traces_csv(args.traces)
    except FileNotFoundError:
        raise ConfigError(f"traces file not found: {args.traces}") from None
    except ValueError as err:
        raise ConfigError(str(err)) from None
    try:
        fitted = fit_all_classes(dataset)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    out_dir = args.out or os.path.join(default_out_root(), "prior")
    os.makedirs(out_dir, exist_ok=True)
    write_prior_csvs(fitted, out_dir)
    for z in fitted.class_labels():
        print(
            f"class {z}: {fitted.arm_counts[z]} arms, {fitted.trace_counts[z]} traces"
        )
    print(f"wrote prior bundle to {out_dir}")
    return 0


def _parse_int_list(text, key):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad value for '{key}': expected comma-separated integers") from None
    if not values:
        raise ConfigError(f"'{key}' must not be empty")
    return values


def cmd_vopf(args):
    m_values = _parse_int_list(args.m, "--m")
    if args.t_max < 1:
        raise ConfigError("'--t-max' must be >= 1")
    sources = []
    if args.priors:
        fitted = read_prior_csvs(args.priors)
        for z in fitted.class_labels():
            prior = fitted.to_prior_params(z)
            j = prior.dim
            sources.append((z, prior, RewardSpec(r0=0.0, r1=np.ones(j)), j))
    elif args.alpha is not None:
        # synthetic prior: noise scales with m, so it is built per m below
        sources.append((f"alpha={args.alpha}", None, None, args.j))
    else:
        raise ConfigError("give a prior source: --priors DIR or --alpha VALUE")

    delays = None
    if args.delays:
        delays = DelaySchedule(delays=np.array(_parse_int_list(args.delays, "--delays")))

    rows = []
    for label, prior, reward, j in sources:
        d = delays or DelaySchedule(delays=np.arange(j))
        if d.dim != j:
            raise ConfigError(f"'--delays' needs {j} entries, got {d.dim}")
        for m in m_values:
            if prior is None:
                env_spec = SyntheticEnvSpec(
                    alpha=args.alpha, j_outcomes=j, batch_size=m, num_arms=1
                )
                prior_m = PriorParams(
                    mu1=np.zeros(j), sigma1=env_spec.sigma1(), v=env_spec.noise_cov()
                )
                reward_m = RewardSpec(r0=0.0, r1=np.ones(j) / env_spec.reward_scale)
            else:
                prior_m, reward_m = prior, reward
            for t in range(1, args.t_max + 1):
                value = vopf_general(
                    VopfQuery(prior=prior_m, reward=reward_m, delays=d, m=m, t=t)
                )
                rows.append((label, m, t, value))
    out_dir = args.out or os.path.join(default_out_root(), "vopf")
    os.makedirs(out_dir, exist_ok=True)
    write_vopf_csv(os.path.join(out_dir, "vopf.csv"), rows)
    print(f"wrote {out_dir}/vopf.csv ({len(rows)} rows)")
    return 0


def cmd_gen_traces(args):
    if args.traces_per_arm < 1:
        raise ConfigError("'--traces-per-arm' must be >= 1")
    if args.arms < 1 or args.j < 1 or args.classes < 1:
        raise ConfigError("'--arms', '--j' and '--classes' must be >= 1")
    rng = rngstreams.substream(args.seed, rngstreams.DATASET)
    dataset = gen_binary_traces(
        args.arms, args.traces_per_arm, args.j, rng, num_classes=args.classes
    )
    out = args.out or os.path.join(default_out_root(), "traces.csv")
    parent = os.path.dirname(out)
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_traces_csv(dataset, out)
    print(f"wrote {out} ({args.arms} arms x {args.traces_per_arm} traces)")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="impatient",
        description="Simulations and tools for bandits with progressively revealed outcomes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a preset or config-file experiment")
    sim.add_argument("--preset", help=f"experiment preset: {', '.join(PRESET_NAMES)}")
    sim.add_argument("--config", help="INI config file ([experiment] plus [policy:*])")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--replications", type=int)
    sim.add_argument("--horizon", type=int, help="number of batches T")
    sim.add_argument("--m", type=int, help="users per batch")
    sim.add_argument("--n-mc", dest="n_mc", type=int)
    sim.add_argument("--alpha", type=float, help="synthetic information level")
    sim.add_argument("--arms", type=int, help="number of arms")
    sim.add_argument("--policies", help="comma-separated roster names")
    sim.add_argument("--independent-streams", action="store_true",
                     help="disable common random numbers across policies")
    sim.add_argument("--jobs", type=int, default=1)
    sim.add_argument("--out", help="output directory")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit-prior", help="empirical-Bayes fit from a traces CSV")
    fit.add_argument("traces", help="traces CSV (arm_id,z,y1..yJ)")
    fit.add_argument("--out", help="output directory for the prior bundle")
    fit.set_defaults(func=cmd_fit_prior)

    vopf = sub.add_parser("vopf", help="feedback-value curves over an (m, t) grid")
    vopf.add_argument("--priors", help="directory with a fitted prior bundle")
    vopf.add_argument("--alpha", type=float, help="synthetic prior instead of a bundle")
    vopf.add_argument("--j", type=int, default=25, help="outcomes for the synthetic prior")
    vopf.add_argument("--m", default="10,50,200", help="comma-separated batch sizes")
    vopf.add_argument("--t-max", dest="t_max", type=int, default=60)
    vopf.add_argument("--delays", help="comma-separated reveal delays (default 0..J-1)")
    vopf.add_argument("--out", help="output directory")
    vopf.set_defaults(func=cmd_vopf)

    gen = sub.add_parser("gen-traces", help="write a synthetic binary-trace dataset")
    gen.add_argument("--arms", type=int, default=200)
    gen.add_argument("--traces-per-arm", dest="traces_per_arm", type=int, default=100)
    gen.add_argument("--j", type=int, default=60)
    gen.add_argument("--classes", type=int, default=1)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", help="output CSV path")
    gen.set_defaults(func=cmd_gen_traces)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, ArithmeticError) as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
