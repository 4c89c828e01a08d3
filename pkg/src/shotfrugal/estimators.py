"""Unbiased single-shot estimators of losses and gradients.

Linear losses use the weighted-sum estimator
``L = const + sum_k q_k / E[s_k] * sum_{shots} r``, with the expectation of
the random shot count in the denominator. Polynomial losses (including the
mean squared error) are expanded with the multinomial theorem into products
of expectations; each product is estimated from independent shot streams with
U-statistics, and expansion terms are sampled in blocks of ``s0`` shots.

Every estimator exists in a single-draw form and a batched ``draw_*`` form
that produces many independent draws with the same code path.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb, factorial
from typing import Callable

import numpy as np
from scipy.special import comb as comb_array

from .ansatz import ParamCircuit, shifted_batch
from .exceptions import BudgetError, DegreeError, DistributionError, NonTerminationError, SpecificationError
from .lossspec import LossSpec
from .sampling import AllocationStrategy, _round_robin, split_blocks, wrs_probabilities
from .simulator import draw_counts, sample_term

MAX_DEGREE = 4
MAX_TERMS_PER_ENTRY = 8
IBS_CAP = 10**7
# bound on (runs x terms) cells processed at once by the batched paths
_CHUNK_CELLS = 1 << 21

SCOPES = ("joint", "per_entry")


@dataclass(frozen=True)
class EstimateResult:
    value: float
    variance_of_single_shot: float
    shots_used: int


@dataclass(frozen=True, eq=False)
class GradientEstimate:
    g: np.ndarray
    S: np.ndarray
    shots_per_component: np.ndarray


# --------------------------------------------------------------------------
# U-statistics

def ustat_power(samples, z: int) -> float:
    """Unbiased estimate of ``mu**z`` from i.i.d. samples.

    Averages the product over all ``z``-subsets, using the elementary
    symmetric polynomial recurrence (``O(s z)``).
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    s = x.shape[0]
    if z < 1:
        raise DegreeError(f"degree must be >= 1, got {z}")
    if s < z:
        raise DegreeError(f"need at least {z} samples for degree {z}, got {s}")
    before = np.ones(s)  # e_{k-1} over the samples preceding each position
    for _ in range(z):
        running = np.cumsum(x * before)
        before = np.concatenate(([0.0], running[:-1]))
    return float(running[-1] / comb(s, z))


def _ustat_from_counts(n_plus, n_minus, n, z: int) -> np.ndarray:
    """U-statistic of degree ``z`` for samples in {+1, 0, -1} given their counts."""
    total = np.zeros(np.shape(n), dtype=float)
    for i in range(z + 1):
        total += comb_array(n_plus, i) * comb_array(n_minus, z - i) * (-1.0) ** (z - i)
    return total / comb_array(n, z)


def _mean_from_counts(counts: np.ndarray) -> np.ndarray:
    n = counts.sum(axis=-1)
    return (counts[..., 0] - counts[..., 2]) / np.maximum(n, 1)


# --------------------------------------------------------------------------
# allocation helpers

def _entry_groups(entry_of: np.ndarray, scope: str) -> list[np.ndarray]:
    if scope not in SCOPES:
        raise ValueError(f"scope must be one of {SCOPES}, got {scope!r}")
    if scope == "joint":
        return [np.arange(entry_of.shape[0])]
    return [np.flatnonzero(entry_of == i) for i in np.unique(entry_of)]


def _grouped_blocks(n_blocks: np.ndarray, weights: np.ndarray, groups: list[np.ndarray],
                    strategy, rng):
    """Blocks per item, their analytic means, and blocks per group.

    With one group this is a plain strategy split. With several groups the
    blocks are first dealt evenly across groups (round-robin remainder), then
    split within each group by the strategy.
    """
    u, t = n_blocks.shape[0], weights.shape[0]
    if len(groups) == 1:
        blocks, expected, _ = split_blocks(n_blocks, wrs_probabilities(weights), strategy, rng)
        return blocks, expected, n_blocks[:, None]
    per_group = _round_robin(n_blocks, np.ones(len(groups), dtype=bool))
    blocks = np.zeros((u, t), dtype=np.int64)
    expected = np.zeros((u, t))
    for g, idx in enumerate(groups):
        b, e, _ = split_blocks(per_group[:, g], wrs_probabilities(weights[idx]), strategy, rng)
        blocks[:, idx] = b
        expected[:, idx] = e
    return blocks, expected, per_group


def _sample_var(n, total, total_sq) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = (total_sq - total**2 / n) / (n - 1)
    return np.where(n >= 2, np.maximum(var, 0.0), np.nan)


# --------------------------------------------------------------------------
# linear engine

def _linear_runs(spec: LossSpec, tables: np.ndarray, rows: np.ndarray, budgets: np.ndarray,
                 strategy, rng, scope: str, fallback_scale: float = 1.0):
    """Weighted-sum estimates of ``sum_k q_k <h_k>`` for many independent runs.

    Run ``u`` spends ``budgets[u]`` shots on the distributions ``tables[rows[u]]``.
    Returns the per-run estimate and the per-shot sample variance summed over
    allocation groups. A group that saw fewer than two shots contributes
    ``fallback_scale * (sum_g |q|)**2``; per-shot values never exceed
    ``sum_g |q|`` in magnitude.
    """
    q = spec.linear_weights
    groups = _entry_groups(spec.entry_index, scope)
    shots, expected, group_shots = _grouped_blocks(budgets, q, groups, strategy, rng)
    counts = draw_counts(tables[rows], shots, rng)
    r = counts[..., 0] - counts[..., 2]
    r2 = counts[..., 0] + counts[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(expected > 0, q / expected, 0.0)
    contrib = scale * r
    values = contrib.sum(axis=1)
    var = np.zeros(budgets.shape[0])
    for g, idx in enumerate(groups):
        s = group_shots[:, g].astype(float)
        total = s * contrib[:, idx].sum(axis=1)
        total_sq = ((scale[:, idx] * s[:, None]) ** 2 * r2[:, idx]).sum(axis=1)
        bound = fallback_scale * np.abs(q[idx]).sum() ** 2
        v = _sample_var(s, total, total_sq)
        var = var + np.where(np.isfinite(v), v, bound)
    return values, var


def _chunks(n_draws: int, cells_per_draw: int):
    step = max(1, _CHUNK_CELLS // max(1, cells_per_draw))
    for start in range(0, n_draws, step):
        yield min(step, n_draws - start)


def _require_kind(spec: LossSpec, kinds: tuple[str, ...], what: str) -> None:
    if spec.kind not in kinds:
        raise SpecificationError(f"{what} needs a {' or '.join(kinds)} loss, got {spec.kind}")


def _theta(theta) -> np.ndarray:
    return np.asarray(theta, dtype=float).reshape(-1)


def _linear_loss_draws(spec, circuit, theta, s_tot, strategy, rng, draws):
    if s_tot < 1:
        raise BudgetError(f"s_tot must be >= 1, got {s_tot}")
    const = spec.linear_constant
    if spec.n_terms == 0:
        return np.full(draws, const), np.zeros(draws)
    tables = spec.outcome_tables(circuit, theta[None, :])
    values, variances = [], []
    for n in _chunks(draws, spec.n_terms):
        v, var = _linear_runs(spec, tables, np.zeros(n, dtype=int), np.full(n, s_tot, dtype=np.int64),
                              strategy, rng, "joint")
        values.append(v + const)
        variances.append(var)
    return np.concatenate(values), np.concatenate(variances)


def estimate_loss_linear(spec: LossSpec, circuit: ParamCircuit, theta, s_tot: int,
                         strategy=AllocationStrategy.WRS, rng=None) -> EstimateResult:
    """One draw of the weighted-sum loss estimator."""
    _require_kind(spec, ("linear",), "estimate_loss_linear")
    rng = np.random.default_rng(rng)
    value, var = _linear_loss_draws(spec, circuit, _theta(theta), int(s_tot), strategy, rng, 1)
    return EstimateResult(float(value[0]), float(var[0]), int(s_tot) if spec.n_terms else 0)


def _component_budgets(shots_per_component, d: int, s0: int) -> np.ndarray:
    budgets = np.asarray(shots_per_component, dtype=np.int64).reshape(-1)
    if budgets.shape[0] != d:
        raise BudgetError(f"expected {d} component budgets, got {budgets.shape[0]}")
    if np.any(budgets < s0):
        raise BudgetError(f"every component budget must be >= {s0}, got min {int(budgets.min())}")
    return budgets


def _linear_gradient_draws(spec, circuit, theta, budgets, strategy, rng, draws, scope):
    d = theta.shape[0]
    if spec.n_terms == 0:
        return np.zeros((draws, d)), np.zeros((draws, d))
    tables = spec.outcome_tables(circuit, shifted_batch(theta))
    plus = budgets - budgets // 2
    minus = budgets // 2
    sign_budgets = np.stack([plus, minus], axis=1).reshape(-1)  # rows (0,+), (0,-), (1,+), ...
    rows = np.arange(2 * d)
    gs, ss = [], []
    for n in _chunks(draws, 2 * d * spec.n_terms):
        # fallback 2 (sum |q|)^2 per sign makes the per-block fallback (sum |q|)^2
        v, var = _linear_runs(spec, tables, np.tile(rows, n), np.tile(sign_budgets, n), strategy, rng, scope, 2.0)
        v = v.reshape(n, d, 2)
        var = var.reshape(n, d, 2)
        gs.append(0.5 * (v[..., 0] - v[..., 1]))
        ss.append(0.25 * (var[..., 0] + var[..., 1]))
    return np.concatenate(gs), np.concatenate(ss)


def estimate_gradient_linear(spec: LossSpec, circuit: ParamCircuit, theta, shots_per_component,
                             strategy=AllocationStrategy.WRS, rng=None, scope: str = "joint") -> GradientEstimate:
    """Parameter-shift gradient of a linear loss.

    Component ``x`` spends its budget in two halves on independent estimates
    of the loss at ``theta +/- pi/2 e_x``. With ``scope="joint"`` terms are
    sampled across all entries at once; ``scope="per_entry"`` deals the shots
    evenly over entries first and samples terms within each entry.

    ``S[x]`` is the sample variance of one block (one shot on each shifted
    circuit per allocation group), falling back to ``(sum |q|)**2`` when fewer
    than two shots landed in some group.
    """
    _require_kind(spec, ("linear",), "estimate_gradient_linear")
    theta = _theta(theta)
    rng = np.random.default_rng(rng)
    budgets = _component_budgets(shots_per_component, theta.shape[0], 2)
    g, s = _linear_gradient_draws(spec, circuit, theta, budgets, strategy, rng, 1, scope)
    spent = budgets if spec.n_terms else np.zeros_like(budgets)
    return GradientEstimate(g[0], s[0], spent.copy())


# --------------------------------------------------------------------------
# polynomial expansion engine

@dataclass(frozen=True, eq=False)
class Expansion:
    """Multinomial expansion of a polynomial loss (or of its gradient).

    Term ``tau`` contributes ``weights[tau] * F_tau`` where ``F_tau`` is the
    product of ``<h_k>**b`` over ``factors[tau]`` times, in gradient mode, the
    parameter-shift derivative of ``<h_{shift_term[tau]}>``.
    """

    weights: np.ndarray
    entry: np.ndarray
    shift_term: np.ndarray
    factor_terms: tuple[tuple[int, ...], ...]
    factor_degrees: tuple[tuple[int, ...], ...]
    constant: float
    gradient: bool

    @property
    def orders(self) -> np.ndarray:
        return np.array([sum(b) for b in self.factor_degrees], dtype=np.int64)

    @property
    def block_size(self) -> int:
        top = int(self.orders.max()) if self.orders.size else 0
        return top + 2 if self.gradient else max(top, 1)


def _compositions(total: int, parts: int):
    for cut in itertools.combinations(range(total + parts - 1), parts - 1):
        prev, out = -1, []
        for c in cut + (total + parts - 1,):
            out.append(c - prev - 1)
            prev = c
        yield tuple(out)


def _multinomial(b) -> int:
    out = factorial(sum(b))
    for v in b:
        out //= factorial(v)
    return out


def _expand(spec: LossSpec, gradient: bool) -> Expansion:
    if spec.degree > MAX_DEGREE:
        raise DegreeError(f"polynomial degree {spec.degree} exceeds the supported maximum {MAX_DEGREE}")
    weights, entry, shift, fterms, fdeg = [], [], [], [], []
    for i in range(spec.n_entries):
        idx = np.flatnonzero(spec.entry_index == i)
        if idx.size > MAX_TERMS_PER_ENTRY:
            raise DegreeError(f"entry {i} has {idx.size} terms, at most {MAX_TERMS_PER_ENTRY} supported")
        c = spec.coeffs[idx]
        p = spec.probabilities[i]
        for k in range(1, spec.degree + 1):
            a = spec.folded_poly[i, k]
            if a == 0.0 or idx.size == 0:
                continue
            order = k - 1 if gradient else k
            for b in _compositions(order, idx.size):
                base = p * a * _multinomial(b) * float(np.prod(c ** np.array(b)))
                if gradient:
                    base *= k
                used = sorted(((bj, int(idx[j])) for j, bj in enumerate(b) if bj > 0), key=lambda t: -t[0])
                ft = tuple(t for _, t in used)
                fd = tuple(bj for bj, _ in used)
                targets = idx if gradient else [-1]
                for jp, t in enumerate(targets):
                    w = base * (c[jp] if gradient else 1.0)
                    if w == 0.0:
                        continue
                    weights.append(w)
                    entry.append(i)
                    shift.append(int(t))
                    fterms.append(ft)
                    fdeg.append(fd)
    constant = 0.0 if gradient else float(spec.probabilities @ spec.folded_poly[:, 0])
    return Expansion(np.array(weights, dtype=float), np.array(entry, dtype=int), np.array(shift, dtype=int),
                     tuple(fterms), tuple(fdeg), constant, gradient)


def gradient_expansion(spec: LossSpec) -> Expansion:
    cached = spec.__dict__.get("_grad_expansion")
    if cached is None:
        cached = _expand(spec, True)
        object.__setattr__(spec, "_grad_expansion", cached)
    return cached


def loss_expansion(spec: LossSpec) -> Expansion:
    cached = spec.__dict__.get("_loss_expansion")
    if cached is None:
        cached = _expand(spec, False)
        object.__setattr__(spec, "_loss_expansion", cached)
    return cached


def _shape_groups(exp: Expansion):
    cached = exp.__dict__.get("_shapes")
    if cached is None:
        shapes: dict[tuple[int, ...], list[int]] = {}
        for tau, fd in enumerate(exp.factor_degrees):
            shapes.setdefault(fd, []).append(tau)
        group_of = np.zeros(len(exp.factor_degrees), dtype=int)
        cached = []
        for g, (fd, taus) in enumerate(shapes.items()):
            group_of[taus] = g
            terms = np.array([exp.factor_terms[t] for t in taus], dtype=int).reshape(len(taus), len(fd))
            local = np.full(len(exp.factor_degrees), -1, dtype=int)
            local[taus] = np.arange(len(taus))
            cached.append((np.array(fd, dtype=int), terms, local))
        cached = (group_of, cached)
        object.__setattr__(exp, "_shapes", cached)
    return cached


def _expansion_runs(exp: Expansion, tables: np.ndarray, row_plus: np.ndarray, row_minus: np.ndarray,
                    row_center: np.ndarray, budgets: np.ndarray, s0: int, strategy, rng, scope: str):
    """Block-sampled estimates of ``sum_tau w_tau F_tau`` for many runs.

    Each run splits its budget into ``budgets // s0`` blocks assigned to
    expansion terms by the strategy; leftover shots go round-robin to the
    run's blocks. A block's value is ``w_tau * N / E[n_tau] * F_b`` with
    ``F_b`` built from fresh, independent shot streams, so the run mean is
    unbiased. Returns per-run means and summed per-group block variances.
    """
    u = budgets.shape[0]
    n_tau = exp.weights.shape[0]
    n_blocks = budgets // s0
    rem = budgets % s0
    groups = _entry_groups(exp.entry, scope)
    blocks, expected, group_blocks = _grouped_blocks(n_blocks, exp.weights, groups, strategy, rng)

    pair = np.repeat(np.arange(u * n_tau), blocks.reshape(-1))
    b_run = pair // n_tau
    b_tau = pair % n_tau
    n_total = pair.shape[0]
    run_start = np.concatenate(([0], np.cumsum(n_blocks)[:-1]))
    rank = np.arange(n_total) - run_start[b_run]
    nb = n_blocks[b_run]
    shots = s0 + rem[b_run] // nb + (rank < rem[b_run] % nb)

    orders = exp.orders[b_tau]
    f = np.ones(n_total)
    if exp.gradient:
        shift = (2 * shots) // (2 + orders)
        n_plus = shift - shift // 2
        n_minus = shift // 2
        k_shift = exp.shift_term[b_tau]
        c_plus = draw_counts(tables[row_plus[b_run], k_shift], n_plus, rng)
        c_minus = draw_counts(tables[row_minus[b_run], k_shift], n_minus, rng)
        f *= 0.5 * (_mean_from_counts(c_plus) - _mean_from_counts(c_minus))
        product = shots - shift
    else:
        product = shots

    group_of, shapes = _shape_groups(exp)
    b_group = group_of[b_tau]
    for g, (degrees, terms, local) in enumerate(shapes):
        if degrees.size == 0:
            continue
        sel = np.flatnonzero(b_group == g)
        if sel.size == 0:
            continue
        total_deg = int(degrees.sum())
        p_sel = product[sel]
        base = (p_sel[:, None] * degrees[None, :]) // total_deg
        spare = p_sel - base.sum(axis=1)
        n_f = base + (np.arange(degrees.size)[None, :] < spare[:, None])
        rows = row_center[b_run[sel]]
        loc = local[b_tau[sel]]
        for j, z in enumerate(degrees):
            counts = draw_counts(tables[rows, terms[loc, j]], n_f[:, j], rng)
            f[sel] *= _ustat_from_counts(counts[:, 0], counts[:, 2], n_f[:, j], int(z))

    group_index = np.zeros(n_tau, dtype=int)
    for gi, idx in enumerate(groups):
        group_index[idx] = gi
    b_grp = group_index[b_tau]
    n_in_group = group_blocks[b_run, b_grp]
    y = exp.weights[b_tau] * n_in_group / expected[b_run, b_tau] * f

    n_groups = len(groups)
    cell = b_run * n_groups + b_grp
    sums = np.bincount(cell, weights=y, minlength=u * n_groups).reshape(u, n_groups)
    sq = np.bincount(cell, weights=y * y, minlength=u * n_groups).reshape(u, n_groups)
    with np.errstate(divide="ignore", invalid="ignore"):
        means = np.where(group_blocks > 0, sums / np.maximum(group_blocks, 1), 0.0)
    var = _sample_var(group_blocks, sums, sq)
    # block values are bounded by the group's summed weight magnitude
    bound = np.array([np.abs(exp.weights[idx]).sum() ** 2 for idx in groups])
    var = np.where(np.isfinite(var), var, bound[None, :]).sum(axis=1)
    return means.sum(axis=1), var


def _poly_gradient_draws(spec, circuit, theta, budgets, strategy, rng, draws, scope):
    exp = gradient_expansion(spec)
    d = theta.shape[0]
    s0 = exp.block_size
    if exp.weights.size == 0:
        return np.zeros((draws, d)), np.zeros((draws, d))
    tables = spec.outcome_tables(circuit, np.vstack([shifted_batch(theta), theta[None, :]]))
    comp = np.arange(d)
    gs, ss = [], []
    for n in _chunks(draws, d * max(1, int(budgets.max() // s0))):
        c = np.tile(comp, n)
        v, var = _expansion_runs(exp, tables, 2 * c, 2 * c + 1, np.full(c.shape, 2 * d), np.tile(budgets, n),
                                 s0, strategy, rng, scope)
        gs.append(v.reshape(n, d))
        ss.append(var.reshape(n, d))
    return np.concatenate(gs), np.concatenate(ss)


def _poly_loss_draws(spec, circuit, theta, s_tot, strategy, rng, draws):
    exp = loss_expansion(spec)
    if exp.weights.size == 0:
        return np.full(draws, exp.constant), np.zeros(draws), 0
    s0 = exp.block_size
    if s_tot < s0:
        raise BudgetError(f"s_tot must be >= {s0} for this loss, got {s_tot}")
    tables = spec.outcome_tables(circuit, theta[None, :])
    values, variances = [], []
    for n in _chunks(draws, max(1, s_tot // s0)):
        zeros = np.zeros(n, dtype=int)
        v, var = _expansion_runs(exp, tables, zeros, zeros, zeros, np.full(n, s_tot, dtype=np.int64),
                                 s0, strategy, rng, "joint")
        values.append(v + exp.constant)
        variances.append(var)
    return np.concatenate(values), np.concatenate(variances), s_tot


def estimate_gradient_poly(spec: LossSpec, circuit: ParamCircuit, theta, shots_per_component,
                           strategy=AllocationStrategy.WRS, rng=None, scope: str = "joint") -> GradientEstimate:
    """Gradient of a polynomial loss via the multinomial expansion.

    Blocks of ``s0 = 2 + max order`` shots are assigned to expansion terms in
    proportion to ``|w_tau|``. Inside a block, ``floor(2 s / (2 + order))``
    shots go to the two shifted circuits and the rest to the product factors.
    A spec that is linear after simplification is handed to
    :func:`estimate_gradient_linear` unchanged.
    """
    if spec.kind == "linear":
        return estimate_gradient_linear(spec, circuit, theta, shots_per_component, strategy, rng, scope)
    theta = _theta(theta)
    rng = np.random.default_rng(rng)
    exp = gradient_expansion(spec)
    budgets = _component_budgets(shots_per_component, theta.shape[0], exp.block_size)
    g, s = _poly_gradient_draws(spec, circuit, theta, budgets, strategy, rng, 1, scope)
    spent = budgets if exp.weights.size else np.zeros_like(budgets)
    return GradientEstimate(g[0], s[0], spent.copy())


def estimate_gradient_mse(spec: LossSpec, circuit: ParamCircuit, theta, shots_per_component,
                          strategy=AllocationStrategy.WRS, rng=None, scope: str = "joint") -> GradientEstimate:
    """Gradient of the mean squared error.

    Expansion terms are ``-2 p_i (y_i - offset) c_ij d<h_ij>`` and
    ``2 p_i c_ij c_ij' <h_ij> d<h_ij'>``; the minimum block is three shots.
    """
    _require_kind(spec, ("mse",), "estimate_gradient_mse")
    return estimate_gradient_poly(spec, circuit, theta, shots_per_component, strategy, rng, scope)


def estimate_loss_poly(spec: LossSpec, circuit: ParamCircuit, theta, s_tot: int,
                       strategy=AllocationStrategy.WRS, rng=None) -> EstimateResult:
    """Polynomial loss; each ``prod <h>**b`` comes from per-factor U-statistics."""
    if spec.kind == "linear":
        return estimate_loss_linear(spec, circuit, theta, s_tot, strategy, rng)
    rng = np.random.default_rng(rng)
    value, var, spent = _poly_loss_draws(spec, circuit, _theta(theta), int(s_tot), strategy, rng, 1)
    return EstimateResult(float(value[0]), float(var[0]), int(spent))


def estimate_loss_mse(spec: LossSpec, circuit: ParamCircuit, theta, s_tot: int,
                      strategy=AllocationStrategy.WRS, rng=None) -> EstimateResult:
    """Mean squared error; ``sum p_i y_i**2`` is exact, the rest is sampled.

    Squares of a single expectation use the pair-average U-statistic, cross
    products use two independent streams.
    """
    _require_kind(spec, ("mse",), "estimate_loss_mse")
    return estimate_loss_poly(spec, circuit, theta, s_tot, strategy, rng)


# --------------------------------------------------------------------------
# batched draws

def draw_loss_estimates(spec: LossSpec, circuit: ParamCircuit, theta, s_tot: int, draws: int,
                        strategy=AllocationStrategy.WRS, rng=None) -> np.ndarray:
    """``draws`` independent loss estimates (same estimator as the single-draw API)."""
    rng = np.random.default_rng(rng)
    theta = _theta(theta)
    if spec.kind == "linear":
        return _linear_loss_draws(spec, circuit, theta, int(s_tot), strategy, rng, draws)[0]
    return _poly_loss_draws(spec, circuit, theta, int(s_tot), strategy, rng, draws)[0]


def draw_gradient_estimates(spec: LossSpec, circuit: ParamCircuit, theta, shots_per_component, draws: int,
                            strategy=AllocationStrategy.WRS, rng=None, scope: str = "joint"):
    """``draws`` independent gradient estimates; returns ``(g, S)`` of shape ``(draws, d)``."""
    rng = np.random.default_rng(rng)
    theta = _theta(theta)
    if spec.kind == "linear":
        budgets = _component_budgets(shots_per_component, theta.shape[0], 2)
        return _linear_gradient_draws(spec, circuit, theta, budgets, strategy, rng, draws, scope)
    budgets = _component_budgets(shots_per_component, theta.shape[0], gradient_expansion(spec).block_size)
    return _poly_gradient_draws(spec, circuit, theta, budgets, strategy, rng, draws, scope)


def estimate_gradient(spec: LossSpec, circuit: ParamCircuit, theta, shots_per_component,
                      strategy=AllocationStrategy.WRS, rng=None, scope: str = "joint") -> GradientEstimate:
    """Dispatch on the loss kind."""
    if spec.kind == "linear":
        return estimate_gradient_linear(spec, circuit, theta, shots_per_component, strategy, rng, scope)
    if spec.kind == "mse":
        return estimate_gradient_mse(spec, circuit, theta, shots_per_component, strategy, rng, scope)
    return estimate_gradient_poly(spec, circuit, theta, shots_per_component, strategy, rng, scope)


# --------------------------------------------------------------------------
# variance, block sizes, inverse binomial sampling

def analytic_variance_linear(spec: LossSpec, circuit: ParamCircuit, theta, moments) -> float:
    """Exact variance of the linear loss estimator.

    ``moments`` is ``(E[s], Cov[s])`` for the flattened terms, as returned by
    :func:`shotfrugal.sampling.allocation_moments`.
    """
    _require_kind(spec, ("linear",), "analytic_variance_linear")
    mean_s, cov_s = (np.asarray(m, dtype=float) for m in moments)
    q = spec.linear_weights
    if mean_s.shape != q.shape or cov_s.shape != (q.size, q.size):
        raise SpecificationError("allocation moments do not match the number of terms")
    if np.any((mean_s <= 0) & (q != 0)):
        raise DistributionError("every term with nonzero weight needs E[s] > 0")
    table = spec.outcome_tables(circuit, _theta(theta)[None, :])[0]
    mu = table[:, 0] - table[:, 2]
    second = table[:, 0] + table[:, 2]
    sigma2 = np.maximum(second - mu**2, 0.0)
    a = q * mu / mean_s
    return float(np.sum(q**2 * sigma2 / mean_s) + a @ cov_s @ a)


def min_block_size(spec: LossSpec, mode: str = "gradient") -> int:
    """Smallest number of shots that yields one unbiased sample."""
    if mode not in ("gradient", "loss"):
        raise ValueError(f"mode must be 'gradient' or 'loss', got {mode!r}")
    if spec.kind == "linear":
        return 2 if mode == "gradient" else 1
    exp = gradient_expansion(spec) if mode == "gradient" else loss_expansion(spec)
    return exp.block_size


def ibs_neg_log_likelihood(bernoulli_sampler: Callable[[np.random.Generator], int], rng=None,
                           cap: int = IBS_CAP) -> tuple[float, int]:
    """Inverse binomial sampling estimate of ``-ln p``.

    Draws until the first success (``K`` draws) and returns the harmonic sum
    ``H_{K-1}`` together with ``K``.
    """
    rng = np.random.default_rng(rng)
    k = 0
    value = 0.0
    while k < cap:
        k += 1
        if bernoulli_sampler(rng):
            return value, k
        value += 1.0 / k
    raise NonTerminationError(f"no success within {cap} draws; success probability is likely zero")


def projector_sampler(state, term) -> Callable[[np.random.Generator], int]:
    """Single-shot Bernoulli sampler of a projector-valued term on ``state``."""
    return lambda rng: int(sample_term(state, term, 1, rng)[0] != 0.0)
