"""scikit-learn style wrappers around the quantum PCA and autoencoder tasks.

Inputs are 2-D complex arrays, one normalized statevector per row.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .ansatz import build_hea, build_strongly_entangling
from .exceptions import ConfigurationError, ShapeError
from .lossspec import DatasetEntry, autoencoder_local_loss, exact_loss, vqse_local_loss
from .optimizers import OptimizerConfig, adam_run, refoqus_run, rosalin_run
from .simulator import MAX_QUBITS, StateVector, evolve

_NORM_TOL = 1e-6


def check_states(X, n_qubits: int | None = None) -> np.ndarray:
    """Validate a batch of statevectors and renormalize rows within tolerance."""
    X = np.array(X, dtype=np.complex128, copy=True)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError(f"expected a nonempty 2-D array of states, got shape {X.shape}")
    dim = X.shape[1]
    n = dim.bit_length() - 1
    if dim < 2 or dim != 1 << n or n > MAX_QUBITS:
        raise ShapeError(f"row length must be 2**n with 1 <= n <= {MAX_QUBITS}, got {dim}")
    if n_qubits is not None and n != n_qubits:
        raise ShapeError(f"states have {n} qubits, the model was fit on {n_qubits}")
    if not np.all(np.isfinite(X)):
        raise ValueError("states contain NaN or inf")
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1.0) > _NORM_TOL):
        raise ValueError("every state must have unit norm (tolerance 1e-6)")
    return X / norms[:, None]


def _entries(X: np.ndarray, sample_weight) -> list[DatasetEntry]:
    if sample_weight is None:
        p = np.full(X.shape[0], 1.0 / X.shape[0])
    else:
        w = np.asarray(sample_weight, dtype=float).reshape(-1)
        if w.shape[0] != X.shape[0] or np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("sample_weight must be positive, finite and one per state")
        p = w / w.sum()
    return [DatasetEntry(StateVector(x.shape[0].bit_length() - 1, x), pi) for x, pi in zip(X, p)]


class _VariationalModel(BaseEstimator, TransformerMixin):
    def _circuit(self, n):
        if self.ansatz == "hea":
            return build_hea(n, self.layers)
        if self.ansatz == "strongly_entangling":
            return build_strongly_entangling(n, self.layers)
        raise ConfigurationError(f"unknown ansatz {self.ansatz!r}")

    def _train(self, spec, circuit):
        config = OptimizerConfig(s_max=self.s_max, alpha=self.alpha, mu=self.mu, s_cap=self.s_cap,
                                 seed=self.random_state)
        if self.optimizer == "refoqus":
            return refoqus_run(spec, circuit, config)
        if self.optimizer == "rosalin":
            return rosalin_run(spec, circuit, config)
        if self.optimizer == "adam":
            return adam_run(spec, circuit, config)
        raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")

    def _unitary(self) -> np.ndarray:
        dim = 1 << self.n_qubits_
        cols = evolve(np.eye(dim, dtype=np.complex128), self.n_qubits_, self.circuit_.gates, self.theta_[None, :])
        return cols[0].T

    def _rotate(self, X) -> np.ndarray:
        check_is_fitted(self, "theta_")
        X = check_states(X, self.n_qubits_)
        return X @ self.unitary_.T


class QuantumPCA(_VariationalModel):
    """Variational state eigensolver used as principal component analysis.

    The fitted circuit rotates the weighted ensemble's density matrix toward
    the computational basis; ``eigenvalues_`` holds the largest diagonal
    entries read out after the rotation and ``components_`` the basis indices
    they sit on.
    """

    def __init__(self, n_components=None, ansatz="hea", layers=2, optimizer="refoqus", s_max=100_000,
                 alpha=None, mu=0.99, s_cap=10_000, random_state=0):
        self.n_components = n_components
        self.ansatz = ansatz
        self.layers = layers
        self.optimizer = optimizer
        self.s_max = s_max
        self.alpha = alpha
        self.mu = mu
        self.s_cap = s_cap
        self.random_state = random_state

    def fit(self, X, y=None, sample_weight=None):
        X = check_states(X)
        n = X.shape[1].bit_length() - 1
        k = X.shape[1] if self.n_components is None else int(self.n_components)
        if not 1 <= k <= X.shape[1]:
            raise ValueError(f"n_components must lie in [1, {X.shape[1]}], got {self.n_components}")
        circuit = self._circuit(n)
        spec = vqse_local_loss(_entries(X, sample_weight), n)
        self.record_ = self._train(spec, circuit)
        self.circuit_, self.theta_, self.n_qubits_ = circuit, self.record_.theta, n
        self.n_features_in_ = X.shape[1]
        self.unitary_ = self._unitary()
        self.loss_ = exact_loss(spec, circuit, self.theta_)

        p = np.abs(X @ self.unitary_.T) ** 2
        w = np.full(X.shape[0], 1.0 / X.shape[0]) if sample_weight is None else \
            np.asarray(sample_weight, dtype=float) / np.sum(sample_weight)
        diag = w @ p
        order = np.argsort(-diag, kind="stable")[:k]
        self.components_ = order
        self.eigenvalues_ = diag[order]
        return self

    def transform(self, X):
        """Probability weight of each state on the fitted components."""
        return (np.abs(self._rotate(X)) ** 2)[:, self.components_]

    def score(self, X, y=None):
        """Negative local eigensolver loss on ``X`` (higher is better)."""
        X = check_states(X, getattr(self, "n_qubits_", None))
        spec = vqse_local_loss(_entries(X, None), self.n_qubits_)
        return -exact_loss(spec, self.circuit_, self.theta_)


class QuantumAutoencoder(_VariationalModel):
    """Compress states onto the low qubits by driving the high ("trash")
    qubits to ``|0>``.

    ``transform`` returns the normalized latent amplitudes on the kept qubits
    and ``inverse_transform`` maps latent states back through the inverse
    circuit with the trash register reset to ``|0>``.
    """

    def __init__(self, n_trash=None, ansatz="strongly_entangling", layers=2, optimizer="refoqus",
                 s_max=100_000, alpha=None, mu=0.99, s_cap=10_000, random_state=0):
        self.n_trash = n_trash
        self.ansatz = ansatz
        self.layers = layers
        self.optimizer = optimizer
        self.s_max = s_max
        self.alpha = alpha
        self.mu = mu
        self.s_cap = s_cap
        self.random_state = random_state

    def fit(self, X, y=None, sample_weight=None):
        X = check_states(X)
        n = X.shape[1].bit_length() - 1
        trash = -(-n // 2) if self.n_trash is None else int(self.n_trash)
        circuit = self._circuit(n)
        spec = autoencoder_local_loss(_entries(X, sample_weight), n, trash)
        self.record_ = self._train(spec, circuit)
        self.circuit_, self.theta_, self.n_qubits_, self.n_trash_ = circuit, self.record_.theta, n, trash
        self.n_features_in_ = X.shape[1]
        self.unitary_ = self._unitary()
        self.loss_ = exact_loss(spec, circuit, self.theta_)
        return self

    @property
    def latent_dim_(self) -> int:
        return 1 << (self.n_qubits_ - self.n_trash_)

    def transform(self, X):
        z = self._rotate(X)[:, : self.latent_dim_]
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        return z / np.where(norms > 0, norms, 1.0)

    def inverse_transform(self, Z):
        check_is_fitted(self, "theta_")
        Z = np.asarray(Z, dtype=np.complex128)
        if Z.ndim != 2 or Z.shape[1] != self.latent_dim_:
            raise ShapeError(f"expected latent states of length {self.latent_dim_}, got shape {Z.shape}")
        full = np.zeros((Z.shape[0], 1 << self.n_qubits_), dtype=np.complex128)
        full[:, : self.latent_dim_] = Z
        return full @ self.unitary_.conj()

    def score(self, X, y=None):
        """One minus the local trash loss on ``X``."""
        X = check_states(X, getattr(self, "n_qubits_", None))
        spec = autoencoder_local_loss(_entries(X, None), self.n_qubits_, self.n_trash_)
        return 1.0 - exact_loss(spec, self.circuit_, self.theta_)
