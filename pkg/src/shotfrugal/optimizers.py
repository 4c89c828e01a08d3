"""Shot-adaptive optimizers and baselines.

``refoqus_run`` samples dataset entries and measurement terms jointly;
``rosalin_run`` sweeps every entry and samples only terms within each entry;
``adam_run`` measures every term of every entry with a fixed shot count.
Both adaptive optimizers share the gCANS loop in :func:`gcans_optimize`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .ansatz import ParamCircuit
from .estimators import estimate_gradient, gradient_expansion, min_block_size
from .exceptions import ConfigurationError, SpecificationError
from .lossspec import LossSpec, exact_loss, lipschitz_bound
from .sampling import AllocationStrategy

DEFAULT_MU = 0.99
DEFAULT_SHOT_CAP = 10**4
_CEIL_TOL = 1e-9

GradientOracle = Callable[[np.ndarray, np.ndarray, np.random.Generator], tuple]


@dataclass(frozen=True)
class OptimizerConfig:
    """Optimizer settings.

    ``alpha`` and ``lipschitz`` default to ``1/L`` and the loss's Lipschitz
    bound. ``s_min`` and ``s_cap`` are per-component shot counts per
    iteration; ``s_max`` is the total budget. ``s_min=None`` means one block.

    ``variance_rule="std"`` feeds ``sqrt(xi)`` to the gCANS rule as the
    per-component standard deviation; ``"variance"`` feeds the variance
    average ``xi`` itself.
    """

    s_max: int
    alpha: float | None = None
    lipschitz: float | None = None
    mu: float = DEFAULT_MU
    s_min: int | None = None
    s_cap: int = DEFAULT_SHOT_CAP
    seed: int = 0
    strategy: AllocationStrategy = AllocationStrategy.WRS
    theta0: tuple[float, ...] | None = None
    variance_rule: str = "std"

    def resolved(self, lipschitz: float) -> "OptimizerConfig":
        lip = self.lipschitz if self.lipschitz is not None else lipschitz
        alpha = self.alpha if self.alpha is not None else (1.0 / lip if lip > 0 else None)
        cfg = replace(self, lipschitz=lip, alpha=alpha, strategy=AllocationStrategy.parse(self.strategy))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if int(self.s_max) < 1:
            raise ConfigurationError(f"s_max must be >= 1, got {self.s_max}")
        if not 0.0 <= self.mu < 1.0:
            raise ConfigurationError(f"mu must lie in [0, 1), got {self.mu}")
        if self.alpha is None or self.lipschitz is None or not (self.lipschitz > 0):
            raise ConfigurationError("alpha and a positive lipschitz constant are required")
        if not 0.0 < self.alpha * self.lipschitz < 2.0:
            raise ConfigurationError(f"need 0 < alpha*L < 2, got {self.alpha * self.lipschitz}")
        if self.s_min is not None and self.s_min < 1:
            raise ConfigurationError(f"s_min must be >= 1, got {self.s_min}")
        if self.variance_rule not in ("std", "variance"):
            raise ConfigurationError(f"variance_rule must be 'std' or 'variance', got {self.variance_rule!r}")
        if self.s_cap < 1 or (self.s_min is not None and self.s_cap < self.s_min):
            raise ConfigurationError(f"s_cap must be >= max(1, s_min), got {self.s_cap}")


@dataclass
class RefoqusState:
    theta: np.ndarray
    chi: np.ndarray
    xi: np.ndarray
    chi_raw: np.ndarray
    xi_raw: np.ndarray
    s: np.ndarray  # blocks per component for the next iteration
    t: int = 0
    s_spent: int = 0

    @classmethod
    def start(cls, theta0: np.ndarray, s_min_blocks: int) -> "RefoqusState":
        d = theta0.shape[0]
        z = np.zeros(d)
        return cls(theta0.copy(), z.copy(), z.copy(), z.copy(), z.copy(), np.full(d, s_min_blocks, dtype=np.int64))


@dataclass
class RunRecord:
    """Per-iteration rows ``(t, s_spent, loss, metric, shots)`` plus the final parameters."""

    rows: list = field(default_factory=list)
    theta: np.ndarray | None = None
    optimizer: str = ""
    state: RefoqusState | None = None

    def append(self, t: int, s_spent: int, loss: float, metric: float, shots: np.ndarray) -> None:
        self.rows.append((t, int(s_spent), float(loss), float(metric), np.asarray(shots, dtype=np.int64).copy()))

    @property
    def iterations(self) -> int:
        return len(self.rows)

    @property
    def shots(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows], dtype=np.int64)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows])

    @property
    def metrics(self) -> np.ndarray:
        return np.array([r[3] for r in self.rows])


# --------------------------------------------------------------------------
# shot-count rules

def _gain_factor(alpha: float, lipschitz: float) -> float:
    la = lipschitz * alpha
    if not 0.0 < la < 2.0:
        raise ConfigurationError(f"need 0 < alpha*L < 2, got {la}")
    return 2.0 * la / (2.0 - la)


def _ceil(x: np.ndarray) -> np.ndarray:
    return np.ceil(np.asarray(x, dtype=float) - _CEIL_TOL)


def gcans_shots(sigma, grad_norm_sq: float, alpha: float, lipschitz: float,
                s_min: int = 1, s_cap: int | None = None) -> np.ndarray:
    """Globally coupled rule ``s_x = k sigma_x sum(sigma) / |grad|^2``, ceiled and clamped."""
    sigma = np.abs(np.asarray(sigma, dtype=float).reshape(-1))
    factor = _gain_factor(alpha, lipschitz)
    upper = np.inf if s_cap is None else s_cap
    if not grad_norm_sq > 0:
        return np.full(sigma.shape, s_min, dtype=np.int64)
    raw = factor * sigma * sigma.sum() / grad_norm_sq
    return np.clip(_ceil(np.minimum(raw, 1e18)), s_min, upper).astype(np.int64)


def icans_shots(sigma, g, alpha: float, lipschitz: float,
                s_min: int = 1, s_cap: int | None = None) -> np.ndarray:
    """Per-component rule ``s_x = k sigma_x^2 / g_x^2``.

    Recommendations are capped by the largest finite one (and by ``s_cap``);
    components with ``g_x = 0`` receive that cap.
    """
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    g = np.asarray(g, dtype=float).reshape(-1)
    factor = _gain_factor(alpha, lipschitz)
    finite = g != 0
    raw = np.full(sigma.shape, np.inf)
    raw[finite] = _ceil(factor * sigma[finite] ** 2 / g[finite] ** 2)
    if np.any(finite):
        cap = float(raw[finite].max())
    else:
        cap = float(s_cap) if s_cap is not None else float(s_min)
    if s_cap is not None:
        cap = min(cap, float(s_cap))
    return np.clip(np.minimum(raw, cap), s_min, max(cap, s_min)).astype(np.int64)


# --------------------------------------------------------------------------
# gCANS loop

def gcans_optimize(oracle: GradientOracle, theta0, config: OptimizerConfig, s0: int = 1,
                   loss_fn: Callable[[np.ndarray], float] | None = None,
                   metric_fn: Callable[[np.ndarray], float] | None = None,
                   max_iterations: int | None = None, rng=None, name: str = "gcans") -> RunRecord:
    """Run the gCANS loop until ``s_max`` shots are spent.

    ``oracle(theta, shots, rng)`` returns ``(g, S, shots_used)`` where ``S``
    is the per-block variance and ``shots`` the per-component budget (a
    multiple of ``s0``). Shot counts are tracked in blocks of ``s0``.
    """
    config.validate()
    rng = np.random.default_rng(config.seed) if rng is None else rng
    theta0 = np.asarray(theta0, dtype=float).reshape(-1)
    s_min_blocks = max(1, math.ceil((config.s_min or s0) / s0))
    cap_blocks = max(s_min_blocks, config.s_cap // s0)
    state = RefoqusState.start(theta0, s_min_blocks)
    record = RunRecord(optimizer=name)
    mu = config.mu
    while state.s_spent < config.s_max and (max_iterations is None or state.t < max_iterations):
        budget = s0 * state.s
        g, S, used = oracle(state.theta, budget, rng)
        g = np.asarray(g, dtype=float)
        state.s_spent += int(np.sum(used))
        state.chi_raw = mu * state.chi_raw + (1 - mu) * g
        state.xi_raw = mu * state.xi_raw + (1 - mu) * np.asarray(S, dtype=float)
        correction = 1.0 - mu ** (state.t + 1)
        state.chi = state.chi_raw / correction
        state.xi = state.xi_raw / correction
        state.theta = state.theta - config.alpha * g
        spread = np.sqrt(state.xi) if config.variance_rule == "std" else state.xi
        state.s = gcans_shots(spread, float(state.chi @ state.chi), config.alpha,
                              config.lipschitz, s_min_blocks, cap_blocks)
        loss = loss_fn(state.theta) if loss_fn is not None else float("nan")
        metric = metric_fn(state.theta) if metric_fn is not None else loss
        record.append(state.t, state.s_spent, loss, metric, budget)
        state.t += 1
    record.theta = state.theta
    record.state = state
    return record


def _initial_theta(config: OptimizerConfig, circuit: ParamCircuit, rng: np.random.Generator) -> np.ndarray:
    if config.theta0 is not None:
        theta = np.asarray(config.theta0, dtype=float).reshape(-1)
        if theta.shape[0] != circuit.n_params:
            raise ConfigurationError(f"theta0 has length {theta.shape[0]}, circuit expects {circuit.n_params}")
        return theta
    return rng.uniform(0.0, 2 * np.pi, circuit.n_params)


def _prepare(spec: LossSpec, circuit: ParamCircuit, config: OptimizerConfig) -> OptimizerConfig:
    if spec.n_terms == 0:
        raise ConfigurationError("the loss has no measurable terms; nothing to optimize")
    if circuit.n_qubits != spec.n_qubits:
        raise ConfigurationError(f"circuit has {circuit.n_qubits} qubits, loss has {spec.n_qubits}")
    try:
        lip = lipschitz_bound(spec)
    except SpecificationError as exc:
        raise ConfigurationError(str(exc)) from exc
    return config.resolved(lip)


def _adaptive_run(spec, circuit, config, metric_fn, scope, name, max_iterations):
    config = _prepare(spec, circuit, config)
    rng = np.random.default_rng(config.seed)
    theta0 = _initial_theta(config, circuit, rng)
    s0 = min_block_size(spec, "gradient")
    if scope == "per_entry":
        s0 *= spec.n_entries

    def oracle(theta, budget, gen):
        est = estimate_gradient(spec, circuit, theta, budget, config.strategy, gen, scope)
        return est.g, est.S, est.shots_per_component

    return gcans_optimize(oracle, theta0, config, s0, lambda th: exact_loss(spec, circuit, th), metric_fn,
                          max_iterations, rng, name)


def refoqus_run(spec: LossSpec, circuit: ParamCircuit, config: OptimizerConfig,
                metric_fn: Callable[[np.ndarray], float] | None = None,
                max_iterations: int | None = None) -> RunRecord:
    """gCANS with shots sampled jointly over dataset entries and measurement terms.

    The gradient estimator is chosen from the loss kind (linear, MSE or
    general polynomial).
    """
    return _adaptive_run(spec, circuit, config, metric_fn, "joint", "refoqus", max_iterations)


def rosalin_run(spec: LossSpec, circuit: ParamCircuit, config: OptimizerConfig,
                metric_fn: Callable[[np.ndarray], float] | None = None,
                max_iterations: int | None = None) -> RunRecord:
    """gCANS that visits every dataset entry each block and samples only terms.

    A block holds one minimal block per entry, so with ``N`` entries and a
    linear loss every component costs at least ``2N`` shots per iteration.
    """
    return _adaptive_run(spec, circuit, config, metric_fn, "per_entry", "rosalin", max_iterations)


def adam_run(spec: LossSpec, circuit: ParamCircuit, config: OptimizerConfig, shots_per_circuit: int = 100,
             beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, lr: float | None = None,
             metric_fn: Callable[[np.ndarray], float] | None = None,
             max_iterations: int | None = None) -> RunRecord:
    """Adam on gradients measured with a fixed number of shots per circuit.

    For linear losses every (entry, term, shift) circuit gets exactly
    ``shots_per_circuit`` shots. For polynomial losses every expansion term
    gets ``ceil(shots_per_circuit / s0)`` blocks. ``lr`` defaults to
    ``config.alpha`` when given, otherwise 0.1.
    """
    if shots_per_circuit < 1:
        raise ConfigurationError(f"shots_per_circuit must be >= 1, got {shots_per_circuit}")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1 and eps > 0):
        raise ConfigurationError("Adam needs beta1, beta2 in [0, 1) and eps > 0")
    if int(config.s_max) < 1:
        raise ConfigurationError(f"s_max must be >= 1, got {config.s_max}")
    if spec.n_terms == 0:
        raise ConfigurationError("the loss has no measurable terms; nothing to optimize")
    if circuit.n_qubits != spec.n_qubits:
        raise ConfigurationError(f"circuit has {circuit.n_qubits} qubits, loss has {spec.n_qubits}")
    step = lr if lr is not None else (config.alpha if config.alpha is not None else 0.1)
    if not step > 0:
        raise ConfigurationError(f"learning rate must be positive, got {step}")
    rng = np.random.default_rng(config.seed)
    theta = _initial_theta(config, circuit, rng)
    d = theta.shape[0]
    if spec.kind == "linear":
        per_component = 2 * shots_per_circuit * spec.n_terms
    else:
        s0 = min_block_size(spec, "gradient")
        per_component = s0 * len(gradient_expansion(spec).weights) * math.ceil(shots_per_circuit / s0)
    budget = np.full(d, per_component, dtype=np.int64)
    m = np.zeros(d)
    v = np.zeros(d)
    spent = 0
    record = RunRecord(optimizer="adam")
    t = 0
    while spent < config.s_max and (max_iterations is None or t < max_iterations):
        est = estimate_gradient(spec, circuit, theta, budget, AllocationStrategy.UDS, rng)
        spent += int(est.shots_per_component.sum())
        m = beta1 * m + (1 - beta1) * est.g
        v = beta2 * v + (1 - beta2) * est.g**2
        m_hat = m / (1 - beta1 ** (t + 1))
        v_hat = v / (1 - beta2 ** (t + 1))
        theta = theta - step * m_hat / (np.sqrt(v_hat) + eps)
        loss = exact_loss(spec, circuit, theta)
        record.append(t, spent, loss, metric_fn(theta) if metric_fn is not None else loss, budget)
        t += 1
    record.theta = theta
    return record
