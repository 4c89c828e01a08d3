import numpy as np
import pytest

from shotfrugal.ansatz import build_hea
from shotfrugal.lossspec import DatasetEntry, LossSpec, mse_loss, polynomial_loss
from shotfrugal.simulator import SYMBOLS, MeasurableTerm, StateVector

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_state(n, rng):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return StateVector(n, v / np.linalg.norm(v))


def random_term(n, rng):
    while True:
        factors = tuple(str(s) for s in rng.choice(SYMBOLS, size=n))
        if any(f != "I" for f in factors):
            return MeasurableTerm(factors)


def random_entries(n, count, rng, labels=False):
    p = rng.dirichlet(np.ones(count))
    return [DatasetEntry(random_state(n, rng), float(pi), float(rng.uniform(-1, 1)) if labels else None)
            for pi in p]


def random_terms(n, count, rng):
    return [(float(rng.choice([-1, 1]) * rng.uniform(0.3, 1.5)), random_term(n, rng)) for _ in range(count)]


def random_instance(rng, kind="linear", degree=2):
    """A random small spec, its circuit and a random theta."""
    n = int(rng.integers(2, 4))
    n_entries = int(rng.integers(1, 4))
    n_terms = int(rng.integers(1, 4))
    entries = random_entries(n, n_entries, rng, labels=(kind == "mse"))
    terms = [random_terms(n, n_terms, rng) for _ in entries]
    if kind == "linear":
        spec = LossSpec(entries, terms, constant_offset=float(rng.uniform(-1, 1)))
    elif kind == "mse":
        spec = mse_loss(entries, terms)
    else:
        coeffs = rng.uniform(-1, 1, size=degree + 1)
        spec = polynomial_loss(entries, terms, coeffs, constant_offset=float(rng.uniform(-0.5, 0.5)))
    circuit = build_hea(n, 1)
    theta = rng.uniform(0, 2 * np.pi, circuit.n_params)
    return spec, circuit, theta


def within_se(samples, exact, k=4.0, atol=1e-9):
    """True when the sample mean lies within ``k`` standard errors of ``exact``."""
    samples = np.asarray(samples, dtype=float)
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(samples.shape[0])
    return np.all(np.abs(mean - exact) <= k * se + atol), mean, se


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
