"""Parameterized circuits and parameter-shift helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError, SizeError
from .simulator import MAX_QUBITS, Gate

SHIFT = np.pi / 2


@dataclass(frozen=True)
class ParamCircuit:
    n_qubits: int
    gates: tuple[Gate, ...]
    n_params: int

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise SizeError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        used = []
        for gate in self.gates:
            gate.validate(self.n_qubits)
            used.extend(gate.params)
        if sorted(used) != list(range(self.n_params)):
            raise ShapeError("every parameter index must be used by exactly one gate slot")

    @property
    def param_gates(self) -> tuple[Gate, ...]:
        return tuple(g for g in self.gates if g.params)


def _check_size(n_qubits: int, layers: int) -> None:
    if n_qubits < 2:
        raise SizeError(f"need at least 2 qubits, got {n_qubits}")
    if n_qubits > MAX_QUBITS:
        raise SizeError(f"at most {MAX_QUBITS} qubits supported, got {n_qubits}")
    if layers < 1:
        raise SizeError(f"need at least 1 layer, got {layers}")


def _ry_column(n_qubits: int, start: int) -> list[Gate]:
    return [Gate("RY", (q,), (start + q,)) for q in range(n_qubits)]


def build_hea(n_qubits: int, layers: int) -> ParamCircuit:
    """Hardware-efficient ansatz of alternating R_y columns and CZ ladders.

    Each layer is R_y column, CZ on (0,1),(2,3),..., R_y column, CZ on
    (1,2),(3,4),... plus the wrap pair (0, n-1). A closing R_y column follows
    the last layer, giving ``layers * 2n + n`` parameters.
    """
    _check_size(n_qubits, layers)
    gates: list[Gate] = []
    p = 0
    even = [(q, q + 1) for q in range(0, n_qubits - 1, 2)]
    odd = [(q, q + 1) for q in range(1, n_qubits - 1, 2)] + [(0, n_qubits - 1)]
    for _ in range(layers):
        gates += _ry_column(n_qubits, p)
        p += n_qubits
        gates += [Gate("CZ", pair) for pair in even]
        gates += _ry_column(n_qubits, p)
        p += n_qubits
        gates += [Gate("CZ", pair) for pair in odd]
    gates += _ry_column(n_qubits, p)
    p += n_qubits
    return ParamCircuit(n_qubits, tuple(gates), p)


def build_strongly_entangling(n_qubits: int, layers: int) -> ParamCircuit:
    """ROT on every qubit followed by a CNOT ring of range ``l mod (n-1) + 1``.

    With two qubits the ring collapses to a single CNOT per layer.
    """
    _check_size(n_qubits, layers)
    gates: list[Gate] = []
    p = 0
    for layer in range(layers):
        for q in range(n_qubits):
            gates.append(Gate("ROT", (q,), (p, p + 1, p + 2)))
            p += 3
        if n_qubits == 2:
            gates.append(Gate("CNOT", (0, 1)))
            continue
        r = layer % (n_qubits - 1) + 1
        gates += [Gate("CNOT", (q, (q + r) % n_qubits)) for q in range(n_qubits)]
    return ParamCircuit(n_qubits, tuple(gates), p)


def shifted_theta(theta, x: int, sign: int) -> np.ndarray:
    """Copy of ``theta`` with component ``x`` moved by ``sign * pi/2``."""
    theta = np.array(theta, dtype=float).reshape(-1)
    if not 0 <= x < theta.shape[0]:
        raise IndexError(f"parameter index {x} out of range for length {theta.shape[0]}")
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    theta[x] += sign * SHIFT
    return theta


def shifted_batch(theta) -> np.ndarray:
    """All ``2d`` shifted bindings, rows ordered ``(0,+), (0,-), (1,+), ...``."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    d = theta.shape[0]
    out = np.repeat(theta[None, :], 2 * d, axis=0)
    idx = np.arange(d)
    out[2 * idx, idx] += SHIFT
    out[2 * idx + 1, idx] -= SHIFT
    return out
