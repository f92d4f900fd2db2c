"""Shared fixtures: geometry, reference models, and the trained dictionary.

The default-resolution model and the full reduced-basis dictionary are
expensive, so they are built once per session.  Tests that check solve
counters build their own small models instead of mutating these.
"""

import sys
import time

import pytest

from pmopt import fem, geom, rb


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance-gate verdict lines after the test summary.

    Passing tests have their stdout captured, so the per-criterion
    PASS/FAIL lines with measured margins would otherwise only show up
    under -s or on failure.
    """
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT_LINES", None) if mod else None
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tri():
    return geom.build_geometry()


@pytest.fixture(scope="session")
def model(tri):
    """Reference model at the default refinement."""
    return fem.assemble_reference(tri, fem.MaterialTable())


@pytest.fixture(scope="session")
def model_small(tri):
    """Coarser model for tests that need many full solves."""
    return fem.assemble_reference(tri, fem.MaterialTable(), levels=3)


@pytest.fixture(scope="session")
def trained_dictionary(model):
    """Default dictionary with build metadata (shared by the acceptance gate)."""
    n_threads = 4
    t0 = time.perf_counter()
    dictionary = rb.build_dictionary(model, n_threads=n_threads)
    return {
        "dictionary": dictionary,
        "build_seconds": time.perf_counter() - t0,
        "n_threads": n_threads,
    }
