import numpy as np
import pytest

from sonicpose.trace_model import generate_stationary_trace, generate_walk_trace


@pytest.fixture(scope="session")
def walk():
    return generate_walk_trace(4.0, 10.0, 200.0, 20.0)


@pytest.fixture(scope="session")
def noisy_walk():
    return generate_walk_trace(4.0, 10.0, 200.0, 20.0, noise=(0.02, 0.002), seed=1)


@pytest.fixture(scope="session")
def still():
    return generate_stationary_trace(10.0)


def integrate(trace, start_pos=None):
    """Independent left-rectangle strapdown oracle for yaw-free traces."""
    t = trace.imu.t
    a = np.asarray(trace.imu.accel) - np.array([0.0, 0.0, 9.80665])
    p = np.zeros((len(t), 3))
    v = np.zeros(3)
    p[0] = trace.ground_truth.position[0] if start_pos is None else start_pos
    for k in range(len(t) - 1):
        h = t[k + 1] - t[k]
        p[k + 1] = p[k] + v * h + 0.5 * a[k] * h * h
        v = v + a[k] * h
    return p


ACCEPTANCE: list[str] = []


def record(number: int, title: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
