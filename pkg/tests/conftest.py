from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import dicholin as dl

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FROZEN = json.loads((Path(__file__).with_name("data") / "frozen.json").read_text())
LN2 = math.log(2.0)

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def frozen():
    return FROZEN


def sin_pert(amp: float, dim: int = 2, coord: int = 0, out: int = 0) -> dl.PerturbationSequence:
    direction = np.zeros(dim)
    direction[out] = 1.0
    return dl.PerturbationSequence(dl.Embed(dl.Sin(coord, amp), direction), abs(amp), abs(amp))


@pytest.fixture(scope="session")
def dimx():
    return dl.make_dimension_exchange()


@pytest.fixture(scope="session")
def dimx_prob(dimx):
    sys_ = dl.NonlinearSystem(dimx.seq, sin_pert(0.02))
    return dl.ConjugacyProblem(sys_, dimx.cert, tail_tol=1e-9, iter_tol=1e-10)


@pytest.fixture(scope="session")
def dimx_zero(dimx):
    return dl.ConjugacyProblem(dl.NonlinearSystem(dimx.seq, dl.PerturbationSequence.zero()), dimx.cert)


@pytest.fixture(scope="session")
def scalar():
    return dl.make_scalar(0.5)


@pytest.fixture(scope="session")
def scalar_prob(scalar):
    sys_ = dl.NonlinearSystem(scalar.seq, sin_pert(0.05, dim=1))
    return dl.ConjugacyProblem(sys_, scalar.cert, tail_tol=1e-9, iter_tol=1e-10)


@pytest.fixture(scope="session")
def shift():
    return dl.make_weighted_shift(dl.ShiftSpec.two_sided(0.5, 2.0))
