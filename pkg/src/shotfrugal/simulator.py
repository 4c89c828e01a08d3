"""Dense statevector engine.

Exact expectation values and single-shot sampling for tensor-product
observables built from ``I, X, Y, Z`` and the single-qubit projectors
``P0 = |0><0|`` and ``P1 = |1><1|``.

Qubit ``q`` is bit ``q`` of the amplitude index (qubit 0 is the least
significant bit).
"""

from __future__ import annotations

import contextlib
import contextvars
import functools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DistributionError, ShapeError, SizeError

MAX_QUBITS = 14
SYMBOLS = ("I", "X", "Y", "Z", "P0", "P1")

# eigenvalue attached to measured bit 0 / bit 1, after basis rotation
_BIT_VALUES = {
    "I": (1.0, 1.0),
    "X": (1.0, -1.0),
    "Y": (1.0, -1.0),
    "Z": (1.0, -1.0),
    "P0": (1.0, 0.0),
    "P1": (0.0, 1.0),
}
OUTCOME_VALUES = np.array([1.0, 0.0, -1.0])

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_SDG = np.array([[1, 0], [0, -1j]], dtype=complex)
_HSDG = _H @ _SDG


@dataclass(frozen=True, eq=False)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise SizeError(f"n_qubits must be in [1, {MAX_QUBITS}], got {self.n_qubits}")
        amps = np.array(self.amplitudes, dtype=np.complex128).reshape(-1)
        if amps.shape[0] != 2**self.n_qubits:
            raise ShapeError(
                f"expected {2**self.n_qubits} amplitudes for {self.n_qubits} qubits, got {amps.shape[0]}"
            )
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > 1e-10:
            raise DistributionError(f"state is not normalized (|psi|^2 = {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return 2**self.n_qubits

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class Gate:
    """One circuit instruction.

    ``params`` holds parameter indices: one for ``RY``/``RZ``, three for
    ``ROT`` (applied as ``RZ(params[2]) RY(params[1]) RZ(params[0])``).
    ``angle`` is only read by ``RY_FIXED``.
    """

    kind: str
    qubits: tuple[int, ...]
    params: tuple[int, ...] = ()
    angle: float = 0.0

    _ARITY = {"RY": (1, 1), "RZ": (1, 1), "RY_FIXED": (1, 0), "ROT": (1, 3), "CZ": (2, 0), "CNOT": (2, 0)}

    def __post_init__(self):
        if self.kind not in self._ARITY:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        n_q, n_p = self._ARITY[self.kind]
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        object.__setattr__(self, "params", tuple(int(p) for p in self.params))
        if len(self.qubits) != n_q or len(self.params) != n_p:
            raise ShapeError(f"{self.kind} takes {n_q} qubit(s) and {n_p} parameter(s)")
        if n_q == 2 and self.qubits[0] == self.qubits[1]:
            raise ValueError(f"{self.kind} qubits must be distinct, got {self.qubits}")

    def validate(self, n_qubits: int) -> None:
        for q in self.qubits:
            if not 0 <= q < n_qubits:
                raise ShapeError(f"gate {self.kind} acts on qubit {q}, circuit has {n_qubits}")


@dataclass(frozen=True)
class MeasurableTerm:
    """Tensor product of single-qubit factors; ``factors[q]`` acts on qubit ``q``."""

    factors: tuple[str, ...]

    def __post_init__(self):
        factors = tuple(str(f).upper() for f in self.factors)
        bad = [f for f in factors if f not in SYMBOLS]
        if bad:
            raise ValueError(f"unknown factor symbol(s) {bad}; allowed {SYMBOLS}")
        if not factors:
            raise ShapeError("a term needs at least one factor")
        object.__setattr__(self, "factors", factors)

    @classmethod
    def from_map(cls, n_qubits: int, factors: dict[int, str]) -> "MeasurableTerm":
        symbols = ["I"] * n_qubits
        for q, s in factors.items():
            if not 0 <= q < n_qubits:
                raise ShapeError(f"qubit {q} out of range for {n_qubits} qubits")
            symbols[q] = s
        return cls(tuple(symbols))

    @classmethod
    def single(cls, n_qubits: int, qubit: int, symbol: str) -> "MeasurableTerm":
        return cls.from_map(n_qubits, {qubit: symbol})

    @property
    def n_qubits(self) -> int:
        return len(self.factors)

    @property
    def rotation_key(self) -> tuple[tuple[int, str], ...]:
        return tuple((q, f) for q, f in enumerate(self.factors) if f in ("X", "Y"))

    def __str__(self):
        return "".join(f if len(f) == 1 else f"[{f}]" for f in self.factors)


# --------------------------------------------------------------------------
# shot accounting

class ShotMeter:
    """Running total of single shots drawn inside a :func:`shot_meter` block."""

    def __init__(self):
        self.shots = 0
        self.calls = 0

    def record(self, shots: int) -> None:
        self.shots += int(shots)
        self.calls += 1


_ACTIVE_METERS: contextvars.ContextVar[tuple[ShotMeter, ...]] = contextvars.ContextVar(
    "shotfrugal_meters", default=()
)


@contextlib.contextmanager
def shot_meter():
    """Count every shot sampled in the enclosed block (nesting allowed)."""
    meter = ShotMeter()
    token = _ACTIVE_METERS.set(_ACTIVE_METERS.get() + (meter,))
    try:
        yield meter
    finally:
        _ACTIVE_METERS.reset(token)


def _record(shots: int) -> None:
    for meter in _ACTIVE_METERS.get():
        meter.record(shots)


# --------------------------------------------------------------------------
# state construction and evolution

def init_zero(n_qubits: int) -> StateVector:
    if not 1 <= n_qubits <= MAX_QUBITS:
        raise SizeError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits}")
    amps = np.zeros(2**n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(n_qubits, amps)


def _axis(n_qubits: int, qubit: int, lead: int) -> int:
    return lead + (n_qubits - 1 - qubit)


def _slices(ndim: int, axis: int, bit: int) -> tuple:
    idx = [slice(None)] * ndim
    idx[axis] = bit
    return tuple(idx)


def _apply_1q(x: np.ndarray, m00, m01, m10, m11, axis: int) -> np.ndarray:
    s0 = _slices(x.ndim, axis, 0)
    s1 = _slices(x.ndim, axis, 1)
    a, b = x[s0], x[s1]
    out = np.empty(x.shape, dtype=np.complex128)
    out[s0] = m00 * a + m01 * b
    out[s1] = m10 * a + m11 * b
    return out


def _angle_view(angles: np.ndarray, ndim: int) -> np.ndarray:
    return angles.reshape(angles.shape + (1,) * (ndim - 1))


def evolve(amplitudes: np.ndarray, n_qubits: int, gates: Sequence[Gate], thetas: np.ndarray) -> np.ndarray:
    """Apply a gate list for a batch of parameter vectors.

    ``amplitudes`` has shape ``(B, 2**n)``; ``thetas`` has shape ``(T, d)``.
    Returns an array of shape ``(T, B, 2**n)``.
    """
    amplitudes = np.asarray(amplitudes, dtype=np.complex128)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    n_batch = amplitudes.shape[0]
    n_t = thetas.shape[0]
    lead = 2
    x = np.broadcast_to(amplitudes.reshape((1, n_batch) + (2,) * n_qubits), (n_t, n_batch) + (2,) * n_qubits)
    x = np.ascontiguousarray(x)
    for gate in gates:
        kind = gate.kind
        if kind in ("RY", "RY_FIXED"):
            ang = thetas[:, gate.params[0]] if kind == "RY" else np.full(n_t, gate.angle)
            c = _angle_view(np.cos(ang / 2), x.ndim - 1)
            s = _angle_view(np.sin(ang / 2), x.ndim - 1)
            x = _apply_1q(x, c, -s, s, c, _axis(n_qubits, gate.qubits[0], lead))
        elif kind == "RZ":
            ang = thetas[:, gate.params[0]]
            ph = _angle_view(np.exp(-0.5j * ang), x.ndim - 1)
            x = _apply_1q(x, ph, 0.0, 0.0, np.conj(ph), _axis(n_qubits, gate.qubits[0], lead))
        elif kind == "ROT":
            ax = _axis(n_qubits, gate.qubits[0], lead)
            phi, th, om = (thetas[:, p] for p in gate.params)
            ph = _angle_view(np.exp(-0.5j * phi), x.ndim - 1)
            x = _apply_1q(x, ph, 0.0, 0.0, np.conj(ph), ax)
            c = _angle_view(np.cos(th / 2), x.ndim - 1)
            s = _angle_view(np.sin(th / 2), x.ndim - 1)
            x = _apply_1q(x, c, -s, s, c, ax)
            ph = _angle_view(np.exp(-0.5j * om), x.ndim - 1)
            x = _apply_1q(x, ph, 0.0, 0.0, np.conj(ph), ax)
        elif kind == "CZ":
            a0 = _axis(n_qubits, gate.qubits[0], lead)
            a1 = _axis(n_qubits, gate.qubits[1], lead)
            idx = [slice(None)] * x.ndim
            idx[a0] = 1
            idx[a1] = 1
            x[tuple(idx)] *= -1
        elif kind == "CNOT":
            ac = _axis(n_qubits, gate.qubits[0], lead)
            at = _axis(n_qubits, gate.qubits[1], lead)
            i10 = [slice(None)] * x.ndim
            i11 = [slice(None)] * x.ndim
            i10[ac], i10[at] = 1, 0
            i11[ac], i11[at] = 1, 1
            i10, i11 = tuple(i10), tuple(i11)
            tmp = x[i10].copy()
            x[i10] = x[i11]
            x[i11] = tmp
    return x.reshape(n_t, n_batch, 2**n_qubits)


def _check_theta(circuit, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != circuit.n_params:
        raise ShapeError(f"theta has length {theta.shape[0]}, circuit expects {circuit.n_params}")
    return theta


def apply_circuit(state: StateVector, circuit, theta) -> StateVector:
    """Return ``U(theta)|state>`` for a parameterized circuit."""
    if state.n_qubits != circuit.n_qubits:
        raise ShapeError(f"state has {state.n_qubits} qubits, circuit has {circuit.n_qubits}")
    theta = _check_theta(circuit, theta)
    out = evolve(state.amplitudes[None, :], state.n_qubits, circuit.gates, theta[None, :])[0, 0]
    # renormalize away rounding drift before the strict constructor check
    out = out / np.sqrt(np.vdot(out, out).real)
    return StateVector(state.n_qubits, out)


# --------------------------------------------------------------------------
# measurement

@functools.lru_cache(maxsize=4096)
def _bit_values(factors: tuple[str, ...]) -> np.ndarray:
    """Per-basis-index single-shot value of ``factors`` after basis rotation."""
    n = len(factors)
    idx = np.arange(2**n)
    values = np.ones(2**n)
    for q, f in enumerate(factors):
        v0, v1 = _BIT_VALUES[f]
        if (v0, v1) == (1.0, 1.0):
            continue
        bits = (idx >> q) & 1
        values = values * np.where(bits == 1, v1, v0)
    values.setflags(write=False)
    return values


def _rotate(amps: np.ndarray, n_qubits: int, rotation_key) -> np.ndarray:
    """Rotate X/Y factors to the computational basis; ``amps`` is ``(..., 2**n)``."""
    if not rotation_key:
        return amps
    shape = amps.shape
    lead = len(shape) - 1
    x = amps.reshape(shape[:-1] + (2,) * n_qubits)
    for q, f in rotation_key:
        m = _H if f == "X" else _HSDG
        x = _apply_1q(x, m[0, 0], m[0, 1], m[1, 0], m[1, 1], _axis(n_qubits, q, lead))
    return x.reshape(shape)


def _check_term(state: StateVector, term: MeasurableTerm) -> None:
    if term.n_qubits != state.n_qubits:
        raise ShapeError(f"term acts on {term.n_qubits} qubits, state has {state.n_qubits}")


def measurement_probabilities(state: StateVector, term: MeasurableTerm) -> np.ndarray:
    """Born probabilities of each bitstring in the term's eigenbasis."""
    _check_term(state, term)
    rotated = _rotate(state.amplitudes, state.n_qubits, term.rotation_key)
    return np.abs(rotated) ** 2


def expectation(state: StateVector, term: MeasurableTerm) -> float:
    probs = measurement_probabilities(state, term)
    return float(probs @ _bit_values(term.factors))


def outcome_distribution(state: StateVector, term: MeasurableTerm) -> np.ndarray:
    """Probabilities of single-shot outcomes ``(+1, 0, -1)``."""
    probs = measurement_probabilities(state, term)
    return _collapse(probs, _bit_values(term.factors))


def _collapse(probs: np.ndarray, values: np.ndarray) -> np.ndarray:
    p_plus = probs[..., values == 1.0].sum(axis=-1)
    p_minus = probs[..., values == -1.0].sum(axis=-1)
    p_zero = np.clip(1.0 - p_plus - p_minus, 0.0, 1.0)
    return np.stack([p_plus, p_zero, p_minus], axis=-1)


def outcome_table(evolved: np.ndarray, n_qubits: int, entry_index: Sequence[int],
                  terms: Sequence[MeasurableTerm]) -> np.ndarray:
    """Outcome distributions for many (entry, term) pairs at once.

    ``evolved`` has shape ``(T, N, 2**n)`` (see :func:`evolve`); term ``k`` is
    measured on entry ``entry_index[k]``. Returns shape ``(T, K, 3)``.
    """
    entry_index = np.asarray(entry_index, dtype=int)
    n_t = evolved.shape[0]
    out = np.empty((n_t, len(terms), 3))
    groups: dict = {}
    for k, term in enumerate(terms):
        groups.setdefault(term.rotation_key, []).append(k)
    for key, ks in groups.items():
        ks = np.asarray(ks)
        used = np.unique(entry_index[ks])
        probs = np.abs(_rotate(evolved[:, used, :], n_qubits, key)) ** 2
        pos = np.searchsorted(used, entry_index[ks])
        values = np.stack([_bit_values(terms[k].factors) for k in ks])
        plus = (values == 1.0).astype(float)
        minus = (values == -1.0).astype(float)
        sel = probs[:, pos, :]
        p_plus = np.einsum("tkd,kd->tk", sel, plus)
        p_minus = np.einsum("tkd,kd->tk", sel, minus)
        out[:, ks, 0] = p_plus
        out[:, ks, 2] = p_minus
        out[:, ks, 1] = np.clip(1.0 - p_plus - p_minus, 0.0, 1.0)
    return out


def _normalized(dist: np.ndarray) -> np.ndarray:
    dist = np.clip(np.asarray(dist, dtype=float), 0.0, None)
    return dist / dist.sum(axis=-1, keepdims=True)


def sample_term(state: StateVector, term: MeasurableTerm, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Single-shot outcomes of measuring ``term`` on ``state``."""
    if shots < 0:
        raise ValueError(f"shots must be >= 0, got {shots}")
    probs = measurement_probabilities(state, term)
    if shots == 0:
        return np.empty(0)
    cdf = np.cumsum(probs)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(shots), side="right")
    np.minimum(idx, probs.shape[0] - 1, out=idx)
    _record(shots)
    return _bit_values(term.factors)[idx].copy()


def draw_outcomes(dist: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """``shots`` i.i.d. single-shot values from a ``(+1, 0, -1)`` distribution."""
    if shots <= 0:
        return np.empty(0)
    _record(shots)
    return rng.choice(OUTCOME_VALUES, size=int(shots), p=_normalized(dist))


def draw_counts(dists: np.ndarray, shots: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Outcome counts ``(n_plus, n_zero, n_minus)`` for each row of ``dists``."""
    shots = np.asarray(shots, dtype=np.int64)
    total = int(shots.sum())
    if total == 0:
        return np.zeros(shots.shape + (3,), dtype=np.int64)
    _record(total)
    return rng.multinomial(shots, _normalized(dists))


# --------------------------------------------------------------------------
# ensembles

def density_from_ensemble(entries: Iterable[tuple[StateVector, float]]) -> np.ndarray:
    entries = list(entries)
    if not entries:
        raise DistributionError("empty ensemble")
    probs = np.array([p for _, p in entries], dtype=float)
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise DistributionError(f"ensemble probabilities must be >= 0 and sum to 1 (sum={probs.sum()!r})")
    amps = np.stack([s.amplitudes for s, _ in entries])
    rho = (amps.T * probs) @ amps.conj()
    return 0.5 * (rho + rho.conj().T)


def exact_top_eigenvalues(rho: np.ndarray, m: int) -> np.ndarray:
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {rho.shape}")
    if not 1 <= m <= rho.shape[0]:
        raise SizeError(f"m must be in [1, {rho.shape[0]}], got {m}")
    vals = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[::-1][:m]
    return np.clip(vals, 0.0, 1.0)
