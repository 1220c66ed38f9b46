"""Smoke test: all six figures render from real simulation CSVs.

Prefers the CSVs written by the acceptance suite under artifacts/acceptance;
when those are absent it produces small-scale equivalents through the CLI, so
the figures always come from the documented external interfaces.
"""

import pathlib
import subprocess
import sys

import pytest

pytest.importorskip("matplotlib")
import render

ROOT = pathlib.Path(__file__).resolve().parent.parent
ARTIFACTS = ROOT / "artifacts" / "acceptance"

FIGURE_INPUTS = {
    "genmodel-regret": "genmodel",
    "ratio-vopf": "genmodel-ratio",
    "replay-regret": "nonstationary",
    "priors": "priors",
    "nonstationary": "nonstationary",
    "seqelim": "seqelim",
}


def cli(*argv):
    proc = subprocess.run(
        [sys.executable, "-m", "impatient.cli", *argv],
        cwd=ROOT,
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="module")
def input_dirs(tmp_path_factory):
    """Acceptance artifacts if present, else desk-scale CLI runs."""
    dirs = {}
    missing = [
        name
        for name in set(FIGURE_INPUTS.values())
        if not (ARTIFACTS / name / "regret.csv").exists()
    ]
    if not missing:
        return {name: ARTIFACTS / name for name in set(FIGURE_INPUTS.values())}
    base = tmp_path_factory.mktemp("csvs")
    cli(
        "simulate", "--preset", "genmodel", "--replications", "3",
        "--horizon", "8", "--seed", "5", "--out", str(base / "genmodel"),
    )
    cli(
        "simulate", "--preset", "genmodel-ratio", "--replications", "3",
        "--horizon", "8", "--seed", "5", "--out", str(base / "genmodel-ratio"),
    )
    cli(
        "simulate", "--preset", "seqelim", "--replications", "2",
        "--horizon", "6", "--n-mc", "64", "--seed", "5", "--out", str(base / "seqelim"),
    )
    cli(
        "simulate", "--preset", "nonstationary", "--replications", "2",
        "--horizon", "6", "--m", "4", "--n-mc", "64", "--seed", "5",
        "--out", str(base / "nonstationary"),
    )
    cli(
        "simulate", "--preset", "priors", "--replications", "2",
        "--horizon", "6", "--m", "4", "--n-mc", "64", "--seed", "5",
        "--out", str(base / "priors"),
    )
    for name in set(FIGURE_INPUTS.values()):
        dirs[name] = base / name
    return dirs


@pytest.mark.parametrize("figure", sorted(FIGURE_INPUTS))
def test_figure_renders_non_empty(figure, input_dirs, tmp_path):
    in_dir = input_dirs[FIGURE_INPUTS[figure]]
    out = tmp_path / f"{figure}.png"
    code = render.main(["--figure", figure, "--in", str(in_dir), "--out", str(out)])
    assert code == 0
    assert out.exists() and out.stat().st_size > 0


class TestErrorHandling:
    def test_missing_column_named(self, tmp_path, capsys):
        bad = tmp_path / "regret.csv"
        bad.write_text("policy,replication,t,delta\np,0,1,0.5\n")
        code = render.main(
            ["--figure", "genmodel-regret", "--in", str(tmp_path), "--out", str(tmp_path / "x.png")]
        )
        assert code == 1
        assert "cumulative" in capsys.readouterr().err

    def test_empty_csv_fails(self, tmp_path, capsys):
        bad = tmp_path / "regret.csv"
        bad.write_text("policy,replication,t,delta,cumulative\n")
        code = render.main(
            ["--figure", "genmodel-regret", "--in", str(tmp_path), "--out", str(tmp_path / "x.png")]
        )
        assert code == 1
        assert "no data rows" in capsys.readouterr().err

    def test_missing_file_fails(self, tmp_path):
        code = render.main(
            ["--figure", "ratio-vopf", "--in", str(tmp_path), "--out", str(tmp_path / "x.png")]
        )
        assert code == 1
