"""Dataset-averaged loss functions built from measurable terms.

A loss is ``L = sum_i p_i * l(E_i)`` where ``E_i = offset + sum_j c_ij <h_ij>``
and ``l`` is a polynomial. Linear losses use ``l(E) = E``; the mean squared
error uses ``l_i(E) = (y_i - E)**2``.

Flattened per-term arrays are enumerated entry-major then term-major.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from math import comb
from typing import Iterable, Sequence

import numpy as np

from .ansatz import ParamCircuit, shifted_batch
from .exceptions import DistributionError, ShapeError, SpecificationError
from .simulator import MeasurableTerm, StateVector, apply_circuit, evolve, init_zero, outcome_table

_TABLE_CACHE_SIZE = 6
# amplitudes held at once while building outcome tables
_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True, eq=False)
class DatasetEntry:
    prep: StateVector | ParamCircuit
    probability: float
    label: float | None = None

    def __post_init__(self):
        p = float(self.probability)
        if not (0.0 < p <= 1.0):
            raise DistributionError(f"entry probability must lie in (0, 1], got {p!r}")
        object.__setattr__(self, "probability", p)
        if isinstance(self.prep, ParamCircuit) and self.prep.n_params != 0:
            raise SpecificationError("a state-preparation circuit must be parameter-free")
        if self.label is not None:
            object.__setattr__(self, "label", float(self.label))

    @property
    def n_qubits(self) -> int:
        return self.prep.n_qubits

    @property
    def state(self) -> StateVector:
        if isinstance(self.prep, StateVector):
            return self.prep
        cached = self.__dict__.get("_state")
        if cached is None:
            cached = apply_circuit(init_zero(self.prep.n_qubits), self.prep, np.empty(0))
            object.__setattr__(self, "_state", cached)
        return cached


def _fold_offset(coeffs: np.ndarray, offset: float) -> np.ndarray:
    """Rewrite ``sum_z a_z (o + X)^z`` as ``sum_k a'_k X^k``."""
    degree = coeffs.shape[-1] - 1
    out = np.zeros_like(coeffs)
    for z in range(degree + 1):
        for k in range(z + 1):
            out[..., k] += coeffs[..., z] * comb(z, k) * offset ** (z - k)
    return out


@dataclass(frozen=True, eq=False)
class LossSpec:
    """Loss specification.

    ``terms[i]`` lists ``(c_ij, h_ij)`` pairs for entry ``i``. ``poly_coeffs``
    holds ``a_0..a_D`` of the outer polynomial and is ignored for MSE specs,
    whose per-entry polynomial comes from the labels.
    """

    entries: tuple[DatasetEntry, ...]
    terms: tuple[tuple[tuple[float, MeasurableTerm], ...], ...]
    constant_offset: float = 0.0
    poly_coeffs: tuple[float, ...] = (0.0, 1.0)
    mse: bool = False
    _cache: OrderedDict = field(default_factory=OrderedDict, repr=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        if not entries:
            raise SpecificationError("the dataset must contain at least one entry")
        if len(self.terms) != len(entries):
            raise ShapeError(f"{len(entries)} entries but {len(self.terms)} term lists")
        n = entries[0].n_qubits
        if any(e.n_qubits != n for e in entries):
            raise ShapeError("all dataset entries must have the same number of qubits")
        probs = np.array([e.probability for e in entries])
        if abs(probs.sum() - 1.0) > 1e-9:
            raise DistributionError(f"entry probabilities sum to {probs.sum()!r}, expected 1")

        cleaned = []
        for i, entry_terms in enumerate(self.terms):
            kept = []
            for c, term in entry_terms:
                c = float(c)
                if not np.isfinite(c):
                    raise SpecificationError(f"non-finite coefficient {c!r} in entry {i}")
                if term.n_qubits != n:
                    raise ShapeError(f"term {term} acts on {term.n_qubits} qubits, entries have {n}")
                if c != 0.0:
                    kept.append((c, term))
            cleaned.append(tuple(kept))

        offset = float(self.constant_offset)
        if not np.isfinite(offset):
            raise SpecificationError("constant_offset must be finite")
        if self.mse:
            labels = [e.label for e in entries]
            if any(y is None for y in labels):
                raise SpecificationError("every entry of an MSE loss needs a label")
            y = np.array(labels, dtype=float)
            poly = np.stack([y**2, -2 * y, np.ones_like(y)], axis=1)
        else:
            a = np.array(self.poly_coeffs, dtype=float).reshape(-1)
            if a.size == 0 or not np.all(np.isfinite(a)):
                raise SpecificationError("poly_coeffs must be a nonempty finite vector")
            nz = np.flatnonzero(a)
            a = a[: (nz[-1] + 1 if nz.size else 1)]
            if a.size == 1:
                a = np.append(a, 0.0)
            poly = np.tile(a, (len(entries), 1))

        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "terms", tuple(cleaned))
        object.__setattr__(self, "constant_offset", offset)
        object.__setattr__(self, "poly_coeffs", tuple(float(v) for v in poly[0]) if not self.mse else (0.0, 0.0, 1.0))

        entry_index = np.array([i for i, t in enumerate(cleaned) for _ in t], dtype=int)
        coeffs = np.array([c for t in cleaned for c, _ in t], dtype=float)
        flat_terms = tuple(term for t in cleaned for _, term in t)
        object.__setattr__(self, "n_qubits", n)
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "entry_index", entry_index)
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "flat_terms", flat_terms)
        object.__setattr__(self, "entry_poly", poly)
        object.__setattr__(self, "folded_poly", _fold_offset(poly, offset))
        for arr in (probs, entry_index, coeffs, poly, self.folded_poly):
            arr.setflags(write=False)

    # ---- structure -------------------------------------------------------

    @property
    def n_entries(self) -> int:
        return len(self.entries)

    @property
    def n_terms(self) -> int:
        return len(self.flat_terms)

    @property
    def degree(self) -> int:
        return int(self.folded_poly.shape[1] - 1)

    @property
    def kind(self) -> str:
        if self.mse:
            return "mse"
        return "linear" if self.degree <= 1 else "poly"

    @property
    def weights(self) -> np.ndarray:
        """Flattened ``q_ij = p_i c_ij``."""
        return self.probabilities[self.entry_index] * self.coeffs

    @property
    def linear_weights(self) -> np.ndarray:
        """Weights of ``<h_ij>`` when the loss is linear (``p_i a_1 c_ij``)."""
        if self.kind != "linear":
            raise SpecificationError("linear weights exist only for linear losses")
        return self.weights * self.folded_poly[self.entry_index, 1]

    @property
    def linear_constant(self) -> float:
        """Shot-free part of a linear loss."""
        if self.kind != "linear":
            raise SpecificationError("the linear constant exists only for linear losses")
        return float(self.probabilities @ self.folded_poly[:, 0])

    def initial_amplitudes(self) -> np.ndarray:
        cached = self.__dict__.get("_amps")
        if cached is None:
            cached = np.stack([e.state.amplitudes for e in self.entries])
            cached.setflags(write=False)
            object.__setattr__(self, "_amps", cached)
        return cached

    def _check_circuit(self, circuit: ParamCircuit, thetas: np.ndarray) -> None:
        if circuit.n_qubits != self.n_qubits:
            raise ShapeError(f"circuit has {circuit.n_qubits} qubits, loss has {self.n_qubits}")
        if thetas.shape[-1] != circuit.n_params:
            raise ShapeError(f"theta has length {thetas.shape[-1]}, circuit expects {circuit.n_params}")

    def outcome_tables(self, circuit: ParamCircuit, thetas) -> np.ndarray:
        """Outcome distributions ``(+1, 0, -1)`` of every flattened term.

        ``thetas`` has shape ``(T, d)``; the result has shape ``(T, K, 3)``.
        Recent results are cached per circuit and parameter batch.
        """
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        self._check_circuit(circuit, thetas)
        key = (id(circuit), thetas.shape, thetas.tobytes())
        hit = self._cache.get(key)
        if hit is not None and hit[0] is circuit:
            self._cache.move_to_end(key)
            return hit[1]
        amps = self.initial_amplitudes()
        per_row = max(1, _CHUNK_ELEMENTS // amps.size)
        parts = []
        for start in range(0, thetas.shape[0], per_row):
            evolved = evolve(amps, self.n_qubits, circuit.gates, thetas[start:start + per_row])
            parts.append(outcome_table(evolved, self.n_qubits, self.entry_index, self.flat_terms))
        table = np.concatenate(parts, axis=0) if parts else np.empty((0, self.n_terms, 3))
        table.setflags(write=False)
        self._cache[key] = (circuit, table)
        while len(self._cache) > _TABLE_CACHE_SIZE:
            self._cache.popitem(last=False)
        return table

    def expectations(self, circuit: ParamCircuit, thetas) -> np.ndarray:
        """Exact ``<h_ij>`` for every row of ``thetas``; shape ``(T, K)``."""
        table = self.outcome_tables(circuit, thetas)
        return table[..., 0] - table[..., 2]

    def entry_values(self, circuit: ParamCircuit, thetas) -> np.ndarray:
        """Exact ``E_i`` for every row of ``thetas``; shape ``(T, N)``."""
        exp = self.expectations(circuit, thetas)
        out = np.full((exp.shape[0], self.n_entries), self.constant_offset)
        np.add.at(out, (slice(None), self.entry_index), exp * self.coeffs)
        return out


# --------------------------------------------------------------------------
# constructors

def _entries(entries: Iterable[DatasetEntry]) -> tuple[DatasetEntry, ...]:
    entries = tuple(entries)
    if not entries:
        raise SpecificationError("the dataset must contain at least one entry")
    return entries


def _check_width(entries, n_qubits: int) -> None:
    for e in entries:
        if e.n_qubits != n_qubits:
            raise ShapeError(f"entry has {e.n_qubits} qubits, expected {n_qubits}")


def vqse_coefficients(n_qubits: int) -> np.ndarray:
    """``r_j = 1.0 + 0.2 (j - 1)`` for ``j = 1..n``."""
    return 1.0 + 0.2 * np.arange(n_qubits)


def vqse_local_loss(entries: Sequence[DatasetEntry], n_qubits: int) -> LossSpec:
    """``H = 1 - sum_j r_j Z_j`` on every entry."""
    entries = _entries(entries)
    _check_width(entries, n_qubits)
    r = vqse_coefficients(n_qubits)
    terms = tuple((-r[q], MeasurableTerm.single(n_qubits, q, "Z")) for q in range(n_qubits))
    return LossSpec(entries, (terms,) * len(entries), constant_offset=1.0)


def _trash(n_qubits: int, n_trash: int) -> list[int]:
    if not 1 <= n_trash < n_qubits:
        raise SpecificationError(f"n_trash must be in [1, {n_qubits - 1}], got {n_trash}")
    return list(range(n_qubits - n_trash, n_qubits))


def autoencoder_local_loss(entries: Sequence[DatasetEntry], n_qubits: int, n_trash: int) -> LossSpec:
    """``H_L = 1 - (1/n_B) sum_{j in trash} P0_j``; trash is the last ``n_trash`` qubits."""
    trash = _trash(n_qubits, n_trash)
    entries = _entries(entries)
    _check_width(entries, n_qubits)
    terms = tuple((-1.0 / n_trash, MeasurableTerm.single(n_qubits, q, "P0")) for q in trash)
    return LossSpec(entries, (terms,) * len(entries), constant_offset=1.0)


def autoencoder_global_loss(entries: Sequence[DatasetEntry], n_qubits: int, n_trash: int) -> LossSpec:
    """``H_G = 1 - P0`` on all trash qubits at once."""
    trash = _trash(n_qubits, n_trash)
    entries = _entries(entries)
    _check_width(entries, n_qubits)
    term = MeasurableTerm.from_map(n_qubits, {q: "P0" for q in trash})
    return LossSpec(entries, (((-1.0, term),),) * len(entries), constant_offset=1.0)


def mse_loss(entries: Sequence[DatasetEntry],
             terms_per_entry: Sequence[Sequence[tuple[float, MeasurableTerm]]]) -> LossSpec:
    """``sum_i p_i (y_i - sum_j c_ij <h_ij>)**2``."""
    entries = _entries(entries)
    missing = [i for i, e in enumerate(entries) if e.label is None]
    if missing:
        raise SpecificationError(f"entries {missing} carry no label")
    return LossSpec(entries, tuple(tuple(t) for t in terms_per_entry), mse=True)


def polynomial_loss(entries: Sequence[DatasetEntry],
                    terms_per_entry: Sequence[Sequence[tuple[float, MeasurableTerm]]],
                    poly_coeffs: Sequence[float], constant_offset: float = 0.0) -> LossSpec:
    return LossSpec(_entries(entries), tuple(tuple(t) for t in terms_per_entry),
                    constant_offset=constant_offset, poly_coeffs=tuple(poly_coeffs))


# --------------------------------------------------------------------------
# exact oracles

def _poly_eval(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    powers = x[..., None] ** np.arange(coeffs.shape[-1])
    return (coeffs * powers).sum(axis=-1)


def _poly_deriv(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    k = np.arange(1, coeffs.shape[-1])
    powers = x[..., None] ** (k - 1)
    return (coeffs[..., 1:] * k * powers).sum(axis=-1)


def exact_loss(spec: LossSpec, circuit: ParamCircuit, theta) -> float:
    theta = np.asarray(theta, dtype=float).reshape(-1)
    values = spec.entry_values(circuit, theta[None, :])[0]
    if spec.mse:
        labels = np.array([e.label for e in spec.entries])
        return float(spec.probabilities @ (labels - values) ** 2)
    return float(spec.probabilities @ _poly_eval(spec.entry_poly, values))


def exact_gradient(spec: LossSpec, circuit: ParamCircuit, theta) -> np.ndarray:
    """Chain rule through ``l`` with parameter-shift derivatives of each ``E_i``."""
    theta = np.asarray(theta, dtype=float).reshape(-1)
    d = theta.shape[0]
    rows = np.vstack([shifted_batch(theta), theta[None, :]])
    values = spec.entry_values(circuit, rows)
    dE = 0.5 * (values[0:2 * d:2] - values[1:2 * d:2])
    outer = _poly_deriv(spec.entry_poly, values[-1])
    return dE @ (spec.probabilities * outer)


def lipschitz_bound(spec: LossSpec) -> float:
    """``sum |q_ij|`` for linear losses; for others, the summed magnitude of
    the gradient-expansion weights."""
    if spec.kind == "linear":
        return float(np.abs(spec.linear_weights).sum())
    from .estimators import gradient_expansion

    return float(np.abs(gradient_expansion(spec).weights).sum())
