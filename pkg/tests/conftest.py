from __future__ import annotations

import numpy as np
import pytest

from l2run import nncore as nn


def numeric_grads(spec, params, x, upstream, head=0, h=1e-5):
    """Central finite differences of sum(upstream * f(x)) for every parameter and the input."""
    def objective(p, xx):
        return float(np.sum(upstream * nn.forward(spec, p, xx, head)))

    grads = {}
    for name, arr in params.arrays.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = objective(params, x)
            flat[i] = orig - h
            fm = objective(params, x)
            flat[i] = orig
            g.reshape(-1)[i] = (fp - fm) / (2 * h)
        grads[name] = g
    dx = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = objective(params, x)
        x[idx] = orig - h
        fm = objective(params, x)
        x[idx] = orig
        dx[idx] = (fp - fm) / (2 * h)
    return grads, dx


def max_rel_error(a, b):
    denom = np.maximum(np.abs(a) + np.abs(b), 1e-6)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spec(rng, i):
    """Small random network cycling through every layer kind and activation."""
    acts = nn.ACTIVATIONS
    act = acts[i % len(acts)]
    ln = bool((i // 4) % 2)
    kind = i % 4
    d = int(rng.integers(3, 7))
    if kind == 0:
        body = (nn.dense(int(rng.integers(2, 9)), act, ln), nn.dense(int(rng.integers(2, 9)), "selu", True),
                nn.dense(2, acts[(i + 1) % len(acts)]))
        return nn.NetworkSpec(d, body)
    if kind == 1:
        body = (nn.conv1d(2, act, ln, kernel=3), nn.dense(int(rng.integers(2, 6)), act), nn.dense(1))
        return nn.NetworkSpec(d, body)
    if kind == 2:
        body = (nn.conv1d(2, "relu", False, kernel=3), nn.residual(2, act, ln, kernel=3), nn.dense(2, "tanh"))
        return nn.NetworkSpec(d, body)
    body = (nn.dense(5, act, ln),)
    head = (nn.dense(4, "elu", ln), nn.dense(2, "tanh"))
    return nn.NetworkSpec(d, body, head, n_heads=3)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Records one PASS/FAIL line per criterion, echoed in the terminal summary."""
    def report(number: int, ok: bool, detail: str, extra=()):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        ACCEPTANCE_LINES.extend(f"    {x}" for x in extra)
        print(line)
        for x in extra:
            print(f"    {x}")
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
