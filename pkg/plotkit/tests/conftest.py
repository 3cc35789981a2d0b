import subprocess
import sys

import pytest


def run_sim(*args):
    """Drive the simulation package through its CLI; plotkit itself only
    ever sees the CSV files."""
    proc = subprocess.run([sys.executable, "-m", "dremsim", *args],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="session")
def short_traces(tmp_path_factory):
    out = tmp_path_factory.mktemp("short")
    run_sim("run", "scenario_a", "--law", "both", "--horizon", "5.0", "--out", str(out))
    run_sim("run", "scenario_c", "--law", "both", "--horizon", "1.0", "--out", str(out))
    return out


@pytest.fixture(scope="session")
def full_traces(tmp_path_factory):
    out = tmp_path_factory.mktemp("full")
    for name in ("scenario_a", "scenario_b", "scenario_c"):
        run_sim("run", name, "--law", "both", "--out", str(out))
    return out
