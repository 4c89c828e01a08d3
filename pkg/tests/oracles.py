"""Dense-matrix reference implementations used as independent test oracles."""

import numpy as np
from scipy.linalg import expm

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.diag([1.0, -1.0]).astype(complex)
P0 = np.diag([1.0, 0.0]).astype(complex)
P1 = np.diag([0.0, 1.0]).astype(complex)
MATS = {"I": I2, "X": X, "Y": Y, "Z": Z, "P0": P0, "P1": P1}


def embed(ops: dict, n: int) -> np.ndarray:
    """Kronecker product with qubit q on bit q (qubit 0 least significant)."""
    out = np.eye(1, dtype=complex)
    for q in reversed(range(n)):
        out = np.kron(out, ops.get(q, I2))
    return out


def term_matrix(factors) -> np.ndarray:
    n = len(factors)
    return embed({q: MATS[f] for q, f in enumerate(factors)}, n)


def rot(pauli, angle):
    return expm(-0.5j * angle * pauli)


def controlled(n, control, target, op):
    return embed({control: P0}, n) + embed({control: P1, target: op}, n)


def circuit_unitary(circuit, theta) -> np.ndarray:
    n = circuit.n_qubits
    u = np.eye(2**n, dtype=complex)
    for g in circuit.gates:
        if g.kind == "RY":
            m = embed({g.qubits[0]: rot(Y, theta[g.params[0]])}, n)
        elif g.kind == "RZ":
            m = embed({g.qubits[0]: rot(Z, theta[g.params[0]])}, n)
        elif g.kind == "RY_FIXED":
            m = embed({g.qubits[0]: rot(Y, g.angle)}, n)
        elif g.kind == "ROT":
            a, b, c = (theta[p] for p in g.params)
            m = embed({g.qubits[0]: rot(Z, c) @ rot(Y, b) @ rot(Z, a)}, n)
        elif g.kind == "CZ":
            m = controlled(n, g.qubits[0], g.qubits[1], Z)
        elif g.kind == "CNOT":
            m = controlled(n, g.qubits[0], g.qubits[1], X)
        else:
            raise ValueError(g.kind)
        u = m @ u
    return u


def dense_expectation(amps, factors) -> float:
    return float(np.real(np.vdot(amps, term_matrix(factors) @ amps)))


def dense_loss(spec, circuit, theta) -> float:
    """Loss from dense matrices: E_i = offset + sum_j c_ij <psi_i|U^dag h U|psi_i>."""
    u = circuit_unitary(circuit, theta)
    total = 0.0
    for e, terms in zip(spec.entries, spec.terms):
        out = u @ e.state.amplitudes
        value = spec.constant_offset + sum(c * dense_expectation(out, t.factors) for c, t in terms)
        if spec.mse:
            total += e.probability * (e.label - value) ** 2
        else:
            total += e.probability * sum(a * value**z for z, a in enumerate(spec.poly_coeffs))
    return total


def finite_difference(f, theta, h=1e-5) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    out = np.empty_like(theta)
    for x in range(theta.size):
        e = np.zeros_like(theta)
        e[x] = h
        out[x] = (f(theta + e) - f(theta - e)) / (2 * h)
    return out


def esym_ustat(samples, z) -> float:
    """Brute-force U-statistic by enumerating subsets."""
    from itertools import combinations

    subsets = list(combinations(range(len(samples)), z))
    return float(np.mean([np.prod([samples[i] for i in s]) for s in subsets]))
