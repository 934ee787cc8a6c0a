import numpy as np
import pytest

from cyclet import nets as N
from cyclet.rng import SplitMix64, derive_seed


def perturbed_nets(seed: int, size: int = 32):
    """Four initialised nets with norm/bias params moved off their defaults."""
    g, f = N.GeneratorNet("G", size), N.GeneratorNet("F", size)
    dx, dy = N.DiscriminatorNet("DX", size), N.DiscriminatorNet("DY", size)
    for i, net in enumerate((g, f, dx, dy)):
        N.init_params(net, derive_seed(seed, i))
        rng = SplitMix64(derive_seed(seed, 100 + i))
        for name, t in net.params.items():
            if not name.endswith(".weight"):
                t.data += 0.1 * rng.normal(t.shape)
            else:
                t.data *= 5.0  # bigger kernels give scores away from the 0 init regime
    return g, f, dx, dy


def random_images(rng: SplitMix64, batch: int = 2, size: int = 32) -> np.ndarray:
    return np.tanh(rng.normal((batch, 3, size, size)))


@pytest.fixture
def nets4():
    return perturbed_nets(11)


# ------------------------------------------------------ acceptance reporting

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)
    print(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
