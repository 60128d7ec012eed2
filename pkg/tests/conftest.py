"""Shared fixtures plus a per-criterion summary for the acceptance suite."""

from __future__ import annotations

import re

import numpy as np
import pytest

_ACCEPTANCE_RESULTS: dict[str, tuple[str, str]] = {}
_CRITERION_RE = re.compile(r"test_criterion_(\d+)_?(\w*)")


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    m = _CRITERION_RE.search(report.nodeid)
    if not m:
        return
    label = m.group(1).lstrip("0") or "0"
    _ACCEPTANCE_RESULTS[label] = (report.outcome.upper(), m.group(2).replace("_", " "))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for label in sorted(_ACCEPTANCE_RESULTS, key=int):
        outcome, desc = _ACCEPTANCE_RESULTS[label]
        word = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"criterion {label:>2} [{word}] {desc}")


def max_gradcheck_error(loss_fn, params: dict, coords: list[tuple[str, tuple]], eps: float = 1e-5) -> float:
    """Worst relative error between analytic grads and central differences.

    `loss_fn(params)` must return (loss, grads).  The denominator is floored
    at 1e-8: central differences carry an absolute noise floor of roughly
    machine_eps * |loss| / eps, so coordinates with true gradients below it
    can only be compared absolutely.
    """
    _, grads = loss_fn(params)
    worst = 0.0
    for name, idx in coords:
        orig = params[name][idx]
        params[name][idx] = orig + eps
        lp, _ = loss_fn(params)
        params[name][idx] = orig - eps
        lm, _ = loss_fn(params)
        params[name][idx] = orig
        fd = (lp - lm) / (2 * eps)
        an = grads[name][idx]
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst


def random_coords(params: dict, n: int, rng: np.random.Generator) -> list[tuple[str, tuple]]:
    names = sorted(params)
    coords = []
    for _ in range(n):
        name = names[int(rng.integers(len(names)))]
        flat = int(rng.integers(params[name].size))
        coords.append((name, np.unravel_index(flat, params[name].shape)))
    return coords


@pytest.fixture(scope="session")
def vector_task():
    """Train/test split of the bundled cluster dataset (shared task means)."""
    from rmtscope.nets.data import cluster_dataset

    x_train, y_train = cluster_dataset(4000, dim=64, classes=10, seed=123, task_seed=77)
    x_test, y_test = cluster_dataset(2000, dim=64, classes=10, seed=124, task_seed=77)
    return x_train, y_train, x_test, y_test
