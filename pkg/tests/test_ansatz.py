import numpy as np
import pytest

from oracles import finite_difference
from conftest import random_term
from shotfrugal.ansatz import SHIFT, build_hea, build_strongly_entangling, shifted_batch, shifted_theta
from shotfrugal.exceptions import SizeError
from shotfrugal.simulator import apply_circuit, expectation, init_zero


@pytest.mark.parametrize("n,layers,count", [(4, 2, 20), (8, 2, 40), (14, 2, 70)])
def test_hea_published_counts(n, layers, count):
    assert build_hea(n, layers).n_params == count


def test_hea_single_layer_by_enumeration():
    c = build_hea(4, 1)
    ry = [g for g in c.gates if g.kind == "RY"]
    assert c.n_params == len(ry) == 3 * 4
    cz = [g.qubits for g in c.gates if g.kind == "CZ"]
    assert cz == [(0, 1), (2, 3), (1, 2), (0, 3)]


def test_hea_layout():
    c = build_hea(3, 1)
    kinds = [(g.kind, g.qubits) for g in c.gates]
    assert kinds == [("RY", (0,)), ("RY", (1,)), ("RY", (2,)), ("CZ", (0, 1)),
                     ("RY", (0,)), ("RY", (1,)), ("RY", (2,)), ("CZ", (1, 2)), ("CZ", (0, 2)),
                     ("RY", (0,)), ("RY", (1,)), ("RY", (2,))]


def test_strongly_entangling_counts():
    assert build_strongly_entangling(4, 3).n_params == 36


def test_strongly_entangling_two_qubits():
    c = build_strongly_entangling(2, 1)
    assert c.n_params == 6
    assert [g.qubits for g in c.gates if g.kind == "CNOT"] == [(0, 1)]


def test_strongly_entangling_ring():
    c = build_strongly_entangling(3, 2)
    cnots = [g.qubits for g in c.gates if g.kind == "CNOT"]
    assert cnots[:3] == [(0, 1), (1, 2), (2, 0)]
    assert cnots[3:] == [(0, 2), (1, 0), (2, 1)]  # range 2 on the second layer


@pytest.mark.parametrize("builder", [build_hea, build_strongly_entangling])
def test_too_small(builder):
    with pytest.raises(SizeError):
        builder(1, 2)
    with pytest.raises(SizeError):
        builder(3, 0)


@pytest.mark.parametrize("builder", [build_hea, build_strongly_entangling])
def test_rebuild_is_identical(builder):
    assert builder(5, 3).gates == builder(5, 3).gates


def test_every_parameter_used_once():
    for c in (build_hea(5, 2), build_strongly_entangling(4, 2)):
        used = sorted(p for g in c.gates for p in g.params)
        assert used == list(range(c.n_params))


class TestShiftedTheta:
    def test_plus(self):
        np.testing.assert_allclose(shifted_theta([0, 0], 0, +1), [np.pi / 2, 0])

    def test_minus(self):
        np.testing.assert_allclose(shifted_theta([1.0], 0, -1), [1.0 - np.pi / 2])

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            shifted_theta([0, 0], 5, 1)

    def test_input_untouched(self):
        theta = np.zeros(3)
        shifted_theta(theta, 1, 1)
        assert not theta.any()

    def test_batch_order(self):
        b = shifted_batch([0.0, 1.0])
        np.testing.assert_allclose(b, [[SHIFT, 1], [-SHIFT, 1], [0, 1 + SHIFT], [0, 1 - SHIFT]])


@pytest.mark.parametrize("builder", [build_hea, build_strongly_entangling])
def test_parameter_shift_matches_finite_differences(rng, builder):
    circuit = builder(3, 2)
    for _ in range(3):
        term = random_term(3, rng)
        theta = rng.uniform(0, 2 * np.pi, circuit.n_params)

        def f(t):
            return expectation(apply_circuit(init_zero(3), circuit, t), term)

        shift = np.array([(f(shifted_theta(theta, x, 1)) - f(shifted_theta(theta, x, -1))) / 2
                          for x in range(circuit.n_params)])
        np.testing.assert_allclose(shift, finite_difference(f, theta), atol=1e-4)
