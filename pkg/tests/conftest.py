import numpy as np
import pytest
import torch

torch.set_num_threads(1)


def random_maps(rng, n_coils, shape):
    raw = rng.standard_normal((n_coils, *shape)) + 1j * rng.standard_normal((n_coils, *shape))
    return raw / np.sqrt(np.sum(np.abs(raw) ** 2, axis=0))


def uniform_maps(rng, n_coils, shape):
    """Spatially constant coil weights; moving the object then only ramps the phase."""
    w = rng.standard_normal(n_coils) + 1j * rng.standard_normal(n_coils)
    w /= np.linalg.norm(w)
    return np.broadcast_to(w[:, None, None], (n_coils, *shape)).copy()


def random_mask(rng, width, p=0.5):
    return (rng.random(width) < p).astype(np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
