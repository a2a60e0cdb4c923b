"""Shared fixtures: real result directories produced by the wavekin CLI.

The plots package consumes only the files the simulation CLI writes, so
the fixtures run that CLI (it must be installed alongside this package)
into session-scoped temporary directories.  Configs are kept small so
the whole fixture build stays around a minute.
"""

import os
import shutil
import subprocess
from pathlib import Path

import pytest

WAVEKIN = shutil.which("wavekin")

CENSUS_INI = """\
[experiment]
tag = census
out = run

[box]
d = 2
L = 8 16 32
beta = 1 1
cutoff = 1
gamma = 0.75

[census]
k = 0 0
times = 1 16 256
beta_alt = 1 sqrt2
"""

COMPARE_INI = """\
[experiment]
tag = compare
out = run

[box]
d = 2
L = 6 8
beta = 1 1
cutoff = 1
gamma = 0.75

[spectrum]
family = gaussian_bump
amplitude = 1.0
width = 0.5

[noise]
law = gaussian

[evolve]
dt = 0.01

[ensemble]
M = 200
base_seed = 11

[kinetic]
dtau = 0.025
w = 0.4419417382415922
kernel = box

[compare]
tau = 0.1
"""

# free flow: the measured spectrum must sit on the input spectrum
CONTROL_INI = COMPARE_INI.replace("gamma = 0.75", "gamma = inf").replace(
    "M = 200", "M = 1024"
).replace("base_seed = 11", "base_seed = 17")

DIAGRAMS_INI = """\
[experiment]
tag = diagrams
out = run

[box]
d = 1
L = 2
beta = 1
cutoff = 1
gamma = 0.5

[spectrum]
family = gaussian_bump
amplitude = 1.0
width = 0.5

[diagrams]
tau = 0.3
"""


def run_cli(experiment: str, config_text: str, root: Path) -> Path:
    """Run one wavekin experiment under ``root`` and return its result dir."""
    if WAVEKIN is None:
        pytest.fail("wavekin CLI not on PATH; install the simulation package first")
    root.mkdir(parents=True, exist_ok=True)
    cfg = root / "config.ini"
    cfg.write_text(config_text)
    env = dict(os.environ, WAVEKIN_OUT=str(root))
    proc = subprocess.run(
        [WAVEKIN, experiment, "--config", str(cfg)],
        env=env,
        capture_output=True,
        text=True,
        timeout=900,
    )
    if proc.returncode != 0:
        pytest.fail(
            f"wavekin {experiment} failed ({proc.returncode}):\n{proc.stderr}"
        )
    return root / "run"


@pytest.fixture(scope="session")
def census_results(tmp_path_factory) -> Path:
    return run_cli("census", CENSUS_INI, tmp_path_factory.mktemp("census"))


@pytest.fixture(scope="session")
def compare_results(tmp_path_factory) -> Path:
    return run_cli("compare", COMPARE_INI, tmp_path_factory.mktemp("compare"))


@pytest.fixture(scope="session")
def control_results(tmp_path_factory) -> Path:
    return run_cli("compare", CONTROL_INI, tmp_path_factory.mktemp("control"))


@pytest.fixture(scope="session")
def diagrams_results(tmp_path_factory) -> Path:
    return run_cli("diagrams", DIAGRAMS_INI, tmp_path_factory.mktemp("diagrams"))


def copy_results(src: Path, dst: Path) -> Path:
    """Writable clone of a result directory for corruption tests."""
    shutil.copytree(src, dst)
    return dst
