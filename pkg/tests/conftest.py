import numpy as np
import pytest

from drivefp.dataset import ChannelProfile, DriverProfile, synthesize_dataset


def separable_profiles(n_channels: int = 4, gap: float = 10.0, std: float = 1.0) -> list[DriverProfile]:
    """Three drivers whose channel means sit ``gap`` apart."""
    names = [f"ch{i}" for i in range(n_channels)]
    out = []
    for d, label in enumerate("ABC"):
        means = {n: ChannelProfile(50.0 + gap * ((d + i) % 3), std) for i, n in enumerate(names)}
        out.append(DriverProfile(label, means))
    return out


@pytest.fixture(scope="session")
def small_dataset():
    return synthesize_dataset(
        separable_profiles(),
        120,
        7,
        road_types=("city_way", "motor_way"),
        trips_per_road=2,
        autocorrelation=0.5,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Filled by test_acceptance; reported after the run so the lines survive output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
