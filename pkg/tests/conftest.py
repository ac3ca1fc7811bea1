"""Shared meshes and operators.

Mesh families used across the suite (unit disk unless stated):

* ``coarse``: uniform h = 0.1, for fast unit tests.
* ``u1`` / ``u2``: uniform h = 0.04 and its halving h = 0.02.
* ``g1`` / ``g2``: boundary-graded meshes (interior 0.08, boundary 0.01) and
  their halving (0.04, 0.005); small-time kernel checks need boundary
  resolution well below 1e-2.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import pytest

from dtnmap.dtn import DtnOperator, build_dtn
from dtnmap.fem import DiscreteForms, assemble, identity_coefficients
from dtnmap.geometry import Mesh, make_disk, triangulate


@dataclass
class Built:
    mesh: Mesh
    forms: DiscreteForms
    op: DtnOperator
    seconds: float


def build_disk(h: float, boundary_h: float | None = None) -> Built:
    start = time.perf_counter()
    mesh = triangulate(make_disk(1.0), h, boundary_h)
    forms = assemble(mesh, identity_coefficients())
    op = build_dtn(forms)
    return Built(mesh, forms, op, time.perf_counter() - start)


@pytest.fixture(scope="session")
def coarse() -> Built:
    return build_disk(0.1)


@pytest.fixture(scope="session")
def u1() -> Built:
    return build_disk(0.04)


@pytest.fixture(scope="session")
def u2() -> Built:
    return build_disk(0.02)


@pytest.fixture(scope="session")
def g1() -> Built:
    return build_disk(0.08, 0.01)


@pytest.fixture(scope="session")
def g2() -> Built:
    return build_disk(0.04, 0.005)


_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    props = dict(report.user_properties)
    if "criterion" in props:
        status = "PASS" if report.passed else "FAIL"
        _CRITERIA[props["criterion"]] = (status, props.get("summary", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=int):
        status, summary = _CRITERIA[key]
        terminalreporter.write_line(f"criterion {int(key):2d}: {status}  {summary}")
