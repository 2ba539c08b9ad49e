"""Shared fixtures: the 12 h closed-loop matrices are run once per session."""

import dataclasses
import time

import pytest

from hydrobess.core import Scenario, SynthParams
from hydrobess.harness import run_scenario, standard_matrix

RESULTS: dict[int, tuple[bool, str]] = {}


def record(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    RESULTS[number] = (ok, line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[n][1])


def _run_all(scenarios):
    out = {}
    for s in scenarios:
        t = time.perf_counter()
        res = run_scenario(s)
        out[s.name] = (res, time.perf_counter() - t)
    return out


@pytest.fixture(scope="session")
def matrix_12h():
    """Hydro, DBF and DLMPC at 5 and 9 kW on the 12 h synthetic trace (seed 0)."""
    return _run_all(standard_matrix(Scenario(duration_h=12.0, seed=0)))


@pytest.fixture(scope="session")
def split_12h():
    """The battery runs on the same trace with a split segment added."""
    base = Scenario(duration_h=12.0, seed=0, synth=SynthParams(split=True))
    scen = [s for s in standard_matrix(base) if s.controller.kind != "hydro"]
    return _run_all(dataclasses.replace(s, name=s.name + "_split") for s in scen)
