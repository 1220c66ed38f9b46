#!/usr/bin/env python3
"""Render paper-style figures from the simulation CSV outputs.

Usage: plots/render.py --figure <name> --in <dir> --out <file>

Figures read only the documented CSV schemas (regret.csv, ratio.csv,
vopf.csv) and compute nothing beyond per-batch means and standard errors.
Solid lines are reserved for the progressive policy, dashed for the delayed
baseline.
"""

import argparse
import csv
import math
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


class RenderError(Exception):
    pass


POLICY_STYLES = {
    "progressive": {"label": "Progressive", "linestyle": "-", "color": "C0"},
    "progressive_rnd": {"label": "Progressive (rounded)", "linestyle": "-", "color": "C4"},
    "progressive_isotropic": {"label": "Progressive (isotropic prior)", "linestyle": "-.", "color": "C2"},
    "delayed": {"label": "Delayed", "linestyle": "--", "color": "C1"},
    "day_two": {"label": "Day-two proxy", "linestyle": ":", "color": "C3"},
    "oracle": {"label": "Oracle", "linestyle": (0, (3, 1, 1, 1)), "color": "C5"},
    "seq_elim_1pct": {"label": "Elimination 1%", "linestyle": "--", "color": "C6"},
    "seq_elim_4pct": {"label": "Elimination 4%", "linestyle": ":", "color": "C7"},
}


def read_rows(path, required):
    if not os.path.exists(path):
        raise RenderError(f"missing input file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for column in required:
            if column not in header:
                raise RenderError(f"{os.path.basename(path)}: missing column '{column}'")
        rows = list(reader)
    if not rows:
        raise RenderError(f"{os.path.basename(path)}: no data rows")
    return rows


def cumulative_summary(in_dir):
    """Per-policy (t, mean, stderr) of cumulative regret across replications."""
    rows = read_rows(
        os.path.join(in_dir, "regret.csv"),
        ["policy", "replication", "t", "delta", "cumulative"],
    )
    curves = {}
    for row in rows:
        key = (row["policy"], row["replication"])
        curves.setdefault(key, []).append((int(row["t"]), float(row["cumulative"])))
    by_policy = {}
    for (policy, _), points in curves.items():
        points.sort()
        by_policy.setdefault(policy, []).append([value for _, value in points])
    summary = {}
    for policy, reps in by_policy.items():
        horizon = min(len(r) for r in reps)
        data = [r[:horizon] for r in reps]
        n = len(data)
        means, stderrs = [], []
        for t in range(horizon):
            values = [r[t] for r in data]
            mean = sum(values) / n
            if n > 1:
                var = sum((v - mean) ** 2 for v in values) / (n - 1)
                stderrs.append(math.sqrt(var / n))
            else:
                stderrs.append(0.0)
            means.append(mean)
        summary[policy] = (list(range(1, horizon + 1)), means, stderrs)
    return summary


def draw_regret_panel(ax, summary, title):
    for policy in sorted(summary):
        ts, mean, stderr = summary[policy]
        style = POLICY_STYLES.get(policy, {"label": policy, "linestyle": "-"})
        line = ax.plot(ts, mean, linestyle=style["linestyle"],
                       color=style.get("color"), label=style["label"])[0]
        low = [m - s for m, s in zip(mean, stderr)]
        high = [m + s for m, s in zip(mean, stderr)]
        ax.fill_between(ts, low, high, alpha=0.2, color=line.get_color())
    ax.set_xlabel("decision time (batches)")
    ax.set_ylabel("cumulative regret")
    ax.set_title(title)
    ax.legend()


def render_regret(in_dir, out_path, title):
    fig, ax = plt.subplots(figsize=(6.5, 4.25))
    draw_regret_panel(ax, cumulative_summary(in_dir), title)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def render_seqelim(in_dir, out_path, d_max):
    fig, ax = plt.subplots(figsize=(6.5, 4.25))
    draw_regret_panel(ax, cumulative_summary(in_dir), "Thompson sampling vs. sequential elimination")
    ax.axvline(d_max, linestyle="--", color="0.4", linewidth=1)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def render_ratio_vopf(in_dir, out_path):
    vopf_rows = read_rows(os.path.join(in_dir, "vopf.csv"), ["preset", "m", "t", "vopf_nats"])
    ratio_rows = read_rows(os.path.join(in_dir, "ratio.csv"), ["preset", "t", "log_ratio"])
    fig, (left, right) = plt.subplots(1, 2, figsize=(10, 4.25))
    series = {}
    for row in vopf_rows:
        series.setdefault((row["preset"], row["m"]), []).append(
            (int(row["t"]), float(row["vopf_nats"]))
        )
    for (preset, m), points in sorted(series.items()):
        points.sort()
        left.plot([t for t, _ in points], [v for _, v in points], label=f"{preset}, m={m}")
    left.set_xlabel("decision time (batches)")
    left.set_ylabel("value of progressive feedback (nats)")
    left.set_title("Feedback value")
    left.legend()
    curves = {}
    for row in ratio_rows:
        if row["log_ratio"] == "":
            continue
        curves.setdefault(row["preset"], []).append((int(row["t"]), float(row["log_ratio"])))
    for preset, points in sorted(curves.items()):
        points.sort()
        right.plot([t for t, _ in points], [v for _, v in points], label=preset)
    right.set_xlabel("decision time (batches)")
    right.set_ylabel("log regret ratio (delayed / progressive)")
    right.set_title("Empirical benefit")
    right.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


FIGURES = {
    "genmodel-regret": lambda args: render_regret(
        args.in_dir, args.out, "Cumulative regret, synthetic environment"
    ),
    "ratio-vopf": lambda args: render_ratio_vopf(args.in_dir, args.out),
    "replay-regret": lambda args: render_regret(
        args.in_dir, args.out, "Cumulative regret, trace replay"
    ),
    "priors": lambda args: render_regret(
        args.in_dir, args.out, "Fitted vs. uninformative prior"
    ),
    "nonstationary": lambda args: render_regret(
        args.in_dir, args.out, "Cumulative regret, rolling action set"
    ),
    "seqelim": lambda args: render_seqelim(args.in_dir, args.out, args.dmax),
}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--figure", required=True, choices=sorted(FIGURES))
    parser.add_argument("--in", dest="in_dir", required=True, help="directory with the CSV inputs")
    parser.add_argument("--out", required=True, help="output image path (png/pdf/svg)")
    parser.add_argument("--dmax", type=int, default=24,
                        help="reveal horizon marked in the seqelim figure")
    args = parser.parse_args(argv)
    try:
        FIGURES[args.figure](args)
    except RenderError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
