import numpy as np
import pytest

from fedghbm import AlgoKind, PartitionSpec, RunConfig, SamplerSpec, TaskSpec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(name="fedavg", rounds=6, **algo):
    return RunConfig(
        task=TaskSpec(kind="logistic", n=300, d_in=4, n_classes=3),
        partition=PartitionSpec(kind="dirichlet", num_clients=10, alpha=0.5),
        sampler=SamplerSpec(kind="uniform", participation=0.3),
        algorithm=AlgoKind(name=name, client_lr=0.05, local_steps=2, **algo),
        rounds=rounds,
        batch_size=8,
        seed=7,
    )


@pytest.fixture
def make_config():
    return small_config


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record ``(criterion, ok, detail, seconds)``; lines are printed at session end."""

    def record(number, title, ok, detail, seconds, limit):
        timing_ok = seconds < limit
        status = "PASS" if ok and timing_ok else "FAIL"
        ACCEPTANCE_LINES.append(
            f"[{status}] criterion {number:>2} {title}: {detail} ({seconds:.2f}s, limit {limit:g}s)"
        )
        return ok and timing_ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
