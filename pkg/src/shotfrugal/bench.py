"""Experiment runner: datasets, tasks, metrics, CSV traces and summaries."""

from __future__ import annotations

import csv
import dataclasses
import glob
import json
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .ansatz import ParamCircuit, build_hea, build_strongly_entangling
from .exceptions import ConfigurationError, DistributionError, SizeError
from .lossspec import (DatasetEntry, LossSpec, autoencoder_local_loss, mse_loss, vqse_local_loss)
from .optimizers import OptimizerConfig, RunRecord, adam_run, refoqus_run, rosalin_run
from .simulator import MeasurableTerm, StateVector, evolve, exact_top_eigenvalues

TASKS = ("vqse_pca", "autoencoder", "mse_toy")
ANSATZE = ("hea", "strongly_entangling")
OPTIMIZERS = ("refoqus", "rosalin", "adam")
METRICS = ("eigenvalue_error", "loss")
TRACE_HEADER = ("iter", "shots", "loss", "metric", "wall_ms")
SUMMARY_HEADER = ("budget", "median", "p2_5", "p97_5", "n_seeds")
GRID_POINTS = 60


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of one experiment; the config file uses exactly these keys."""

    task: str = "vqse_pca"
    n_qubits: int = 4
    ansatz: str = "hea"
    layers: int = 2
    dataset_seed: int = 0
    dataset_count: int = 20
    dataset_depth: int = 2
    dataset_path: str | None = None
    dataset_spread: float | None = None
    optimizer: str = "refoqus"
    alpha: float | None = None
    mu: float = 0.99
    s_min: int | None = None
    s_max: int = 10**6
    s_cap: int = 10**4
    adam_shots: int = 100
    seeds: tuple[int, ...] = (0,)
    metric: str | None = None
    metric_m: int = 16
    n_trash: int | None = None
    threshold: float = 1e-2
    output: str = "results"
    jobs: int = 1
    wall_clock: bool = False

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigurationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.ansatz not in ANSATZE:
            raise ConfigurationError(f"ansatz must be one of {ANSATZE}, got {self.ansatz!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.metric is not None and self.metric not in METRICS:
            raise ConfigurationError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.s_max < 1:
            raise ConfigurationError(f"s_max must be >= 1, got {self.s_max}")
        if not self.seeds:
            raise ConfigurationError("seeds must be nonempty")
        if not 2 <= self.n_qubits <= 14:
            raise ConfigurationError(f"n_qubits must be in [2, 14], got {self.n_qubits}")
        if self.layers < 1 or self.dataset_count < 1 or self.dataset_depth < 0:
            raise ConfigurationError("layers and dataset_count must be >= 1, dataset_depth >= 0")
        if self.metric_m < 1 or self.jobs < 1 or self.adam_shots < 1:
            raise ConfigurationError("metric_m, jobs and adam_shots must be >= 1")
        if self.n_trash is not None and not 1 <= self.n_trash < self.n_qubits:
            raise ConfigurationError(f"n_trash must be in [1, {self.n_qubits - 1}]")

    @property
    def resolved_metric(self) -> str:
        if self.metric is not None:
            return self.metric
        return "eigenvalue_error" if self.task == "vqse_pca" else "loss"

    @property
    def resolved_trash(self) -> int:
        return self.n_trash if self.n_trash is not None else math.ceil(self.n_qubits / 2)


_INT_KEYS = {"n_qubits", "layers", "dataset_seed", "dataset_count", "dataset_depth", "s_min", "s_max", "s_cap",
             "adam_shots", "metric_m", "n_trash", "jobs"}
_FLOAT_KEYS = {"alpha", "mu", "threshold", "dataset_spread"}


def _parse_int(key: str, text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"{key} must be an integer")
    return int(value)


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else (":" if ":" in line else None)
        if sep is None:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split(sep, 1))
        if key not in fields:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        try:
            if value.lower() in ("", "none", "null") and key in _INT_KEYS | _FLOAT_KEYS | {"dataset_path", "metric"}:
                values[key] = None
            elif key in _INT_KEYS:
                values[key] = _parse_int(key, value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key == "seeds":
                values[key] = tuple(_parse_int(key, v) for v in value.replace(",", " ").split())
            elif key == "wall_clock":
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError("expected a boolean")
                values[key] = value.lower() in ("true", "1", "yes")
            else:
                values[key] = value
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


# --------------------------------------------------------------------------
# datasets

def _random_states(rng: np.random.Generator, n_qubits: int, count: int, depth: int,
                   spread: float | None = None) -> np.ndarray:
    dim = 2**n_qubits
    amps = np.zeros((1, dim), dtype=complex)
    amps[0, 0] = 1.0
    if depth == 0:
        return np.repeat(amps, count, axis=0)
    circuit = build_hea(n_qubits, depth)
    if spread is None:
        thetas = rng.uniform(0.0, 2 * np.pi, (count, circuit.n_params))
    else:
        center = rng.uniform(0.0, 2 * np.pi, circuit.n_params)
        thetas = center + spread * rng.standard_normal((count, circuit.n_params))
    return evolve(amps, n_qubits, circuit.gates, thetas)[:, 0, :]


def _entries_from_amplitudes(n_qubits: int, amps: np.ndarray, labels=None) -> list[DatasetEntry]:
    count = amps.shape[0]
    out = []
    for k in range(count):
        v = amps[k] / np.linalg.norm(amps[k])
        out.append(DatasetEntry(StateVector(n_qubits, v), 1.0 / count, None if labels is None else labels[k]))
    return out


def generate_ensemble(seed: int, n_qubits: int, count: int, depth: int,
                      spread: float | None = None) -> list[DatasetEntry]:
    """``count`` states from random-angle hardware-efficient circuits, uniform weights.

    By default every angle is uniform on ``[0, 2pi)``. With ``spread`` set,
    all states share one random center and each angle deviates from it by
    ``spread`` times a standard normal, giving a clustered ensemble whose
    density matrix has a few dominant eigenvalues.
    """
    if count < 1:
        raise SizeError(f"count must be >= 1, got {count}")
    if depth < 0:
        raise SizeError(f"depth must be >= 0, got {depth}")
    if spread is not None and spread < 0:
        raise SizeError(f"spread must be >= 0, got {spread}")
    rng = np.random.default_rng(seed)
    return _entries_from_amplitudes(n_qubits, _random_states(rng, n_qubits, count, depth, spread))


def generate_compressible_ensemble(seed: int, n_qubits: int, count: int, depth: int,
                                   n_trash: int) -> list[DatasetEntry]:
    """States ``V (phi_k (x) |0...0>)``: random ``phi_k`` on the kept qubits, trash
    qubits in ``|0>``, then one shared random hardware-efficient circuit ``V``."""
    if not 1 <= n_trash < n_qubits:
        raise SizeError(f"n_trash must be in [1, {n_qubits - 1}]")
    rng = np.random.default_rng(seed)
    kept = n_qubits - n_trash
    dim_kept = 2**kept
    phi = rng.normal(size=(count, dim_kept)) + 1j * rng.normal(size=(count, dim_kept))
    phi /= np.linalg.norm(phi, axis=1, keepdims=True)
    amps = np.zeros((count, 2**n_qubits), dtype=complex)
    amps[:, :dim_kept] = phi  # trash qubits are the high bits
    if depth > 0:
        v = build_hea(n_qubits, depth)
        theta = rng.uniform(0.0, 2 * np.pi, v.n_params)
        amps = evolve(amps, n_qubits, v.gates, theta[None, :])[0]
    return _entries_from_amplitudes(n_qubits, amps)


def generate_regression_data(seed: int, n_qubits: int, count: int, depth: int, circuit: ParamCircuit):
    """Random input states labelled by a teacher parameter vector, so a zero-loss fit exists."""
    rng = np.random.default_rng(seed)
    amps = _random_states(rng, n_qubits, count, depth)
    teacher = rng.uniform(0.0, 2 * np.pi, circuit.n_params)
    out = evolve(amps, n_qubits, circuit.gates, teacher[None, :])[0]
    probs = np.abs(out) ** 2
    bits = (np.arange(2**n_qubits)[:, None] >> np.arange(n_qubits)[None, :]) & 1
    z = probs @ (1 - 2 * bits)
    labels = z.mean(axis=1)
    terms = [(1.0 / n_qubits, MeasurableTerm.single(n_qubits, q, "Z")) for q in range(n_qubits)]
    return _entries_from_amplitudes(n_qubits, amps, labels), terms


def load_dataset(path) -> list[DatasetEntry]:
    """Read the line-oriented dataset format.

    Header ``nqubits=<n> entries=<N>``, then for each entry a ``p=<real>``
    line and ``2**n`` lines ``<re> <im>``. ``#`` starts a comment.
    """
    path = Path(path)
    try:
        raw_lines = path.read_text().splitlines()
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc
    lines = []
    for lineno, raw in enumerate(raw_lines, 1):
        text = raw.split("#", 1)[0].strip()
        if text:
            lines.append((lineno, text))
    if not lines:
        raise ValueError(f"{path}: empty dataset file")

    def fail(lineno, msg):
        raise ValueError(f"{path}:{lineno}: {msg}")

    lineno, header = lines[0]
    fields = dict(part.split("=", 1) for part in header.split() if "=" in part)
    try:
        n = int(fields["nqubits"])
        count = int(fields["entries"])
    except (KeyError, ValueError):
        fail(lineno, f"expected header 'nqubits=<n> entries=<N>', got {header!r}")
    if not 1 <= n <= 14 or count < 1:
        fail(lineno, f"bad header values nqubits={n} entries={count}")
    dim = 2**n
    expected_lines = 1 + count * (1 + dim)
    if len(lines) != expected_lines:
        fail(lines[-1][0], f"expected {count} records of {1 + dim} lines, found {len(lines) - 1} data lines")
    entries = []
    probs = []
    pos = 1
    for record in range(count):
        lineno, text = lines[pos]
        if not text.startswith("p="):
            fail(lineno, f"record {record}: expected 'p=<real>', got {text!r}")
        try:
            p = float(text[2:])
        except ValueError:
            fail(lineno, f"record {record}: bad probability {text!r}")
        amps = np.empty(dim, dtype=complex)
        for k in range(dim):
            lineno, text = lines[pos + 1 + k]
            parts = text.split()
            try:
                if len(parts) != 2:
                    raise ValueError
                amps[k] = complex(float(parts[0]), float(parts[1]))
            except ValueError:
                fail(lineno, f"record {record}: expected '<re> <im>', got {text!r}")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > 1e-6:
            raise DistributionError(f"{path}: record {record} has squared norm {norm!r} (tolerance 1e-6)")
        probs.append(p)
        entries.append((amps / math.sqrt(norm), p))
        pos += 1 + dim
    total = sum(probs)
    if abs(total - 1.0) > 1e-9 or any(p <= 0 for p in probs):
        raise DistributionError(f"{path}: probabilities must be positive and sum to 1 (sum={total!r})")
    return [DatasetEntry(StateVector(n, a), p) for a, p in entries]


def save_dataset(entries: Sequence[DatasetEntry], path) -> None:
    n = entries[0].n_qubits
    with open(path, "w", newline="\n") as fh:
        fh.write(f"nqubits={n} entries={len(entries)}\n")
        for e in entries:
            fh.write(f"p={float(e.probability)!r}\n")
            for a in e.state.amplitudes:
                fh.write(f"{float(a.real)!r} {float(a.imag)!r}\n")


# --------------------------------------------------------------------------
# metrics

def readout_diagonal(entries: Sequence[DatasetEntry], circuit: ParamCircuit, theta) -> np.ndarray:
    """Diagonal of ``U rho U^dagger`` for the ensemble ``rho``."""
    amps = np.stack([e.state.amplitudes for e in entries])
    probs = np.array([e.probability for e in entries])
    out = evolve(amps, circuit.n_qubits, circuit.gates, np.asarray(theta, dtype=float)[None, :])[0]
    return probs @ (np.abs(out) ** 2)


def eigenvalue_error(entries: Sequence[DatasetEntry], circuit: ParamCircuit, theta, m: int,
                     exact: np.ndarray | None = None) -> float:
    """Squared error between the top ``m`` eigenvalues of ``rho`` and the top
    ``m`` diagonal entries of ``U rho U^dagger``."""
    dim = 2**circuit.n_qubits
    if not 1 <= m <= dim:
        raise SizeError(f"m must be in [1, {dim}], got {m}")
    if exact is None:
        exact = ensemble_eigenvalues(entries, m)
    diag = np.sort(readout_diagonal(entries, circuit, theta))[::-1][:m]
    return float(np.sum((exact[:m] - diag) ** 2))


def ensemble_eigenvalues(entries: Sequence[DatasetEntry], m: int) -> np.ndarray:
    amps = np.stack([e.state.amplitudes for e in entries])
    probs = np.array([e.probability for e in entries])
    rho = (amps.T * probs) @ amps.conj()
    return exact_top_eigenvalues(0.5 * (rho + rho.conj().T), m)


# --------------------------------------------------------------------------
# experiments

@dataclass
class Task:
    spec: LossSpec
    circuit: ParamCircuit
    entries: list
    metric_fn: object


def build_task(config: ExperimentConfig) -> Task:
    n = config.n_qubits
    builder = build_hea if config.ansatz == "hea" else build_strongly_entangling
    circuit = builder(n, config.layers)
    if config.dataset_path is not None:
        entries = load_dataset(config.dataset_path)
        if entries[0].n_qubits != n:
            raise ConfigurationError(f"dataset has {entries[0].n_qubits} qubits, config says {n}")
    else:
        entries = None
    if config.task == "vqse_pca":
        if entries is None:
            entries = generate_ensemble(config.dataset_seed, n, config.dataset_count, config.dataset_depth,
                                        config.dataset_spread)
        spec = vqse_local_loss(entries, n)
    elif config.task == "autoencoder":
        if entries is None:
            entries = generate_compressible_ensemble(config.dataset_seed, n, config.dataset_count,
                                                     config.dataset_depth, config.resolved_trash)
        spec = autoencoder_local_loss(entries, n, config.resolved_trash)
    else:
        data, terms = generate_regression_data(config.dataset_seed, n, config.dataset_count,
                                               config.dataset_depth, circuit)
        if entries is not None:
            raise ConfigurationError("mse_toy generates its own labelled data; dataset_path is not supported")
        entries = data
        spec = mse_loss(entries, [terms] * len(entries))
    if config.resolved_metric == "eigenvalue_error":
        if config.task != "vqse_pca":
            raise ConfigurationError("eigenvalue_error is only defined for vqse_pca")
        m = min(config.metric_m, 2**n)
        exact = ensemble_eigenvalues(entries, m)
        metric_fn = _EigenMetric(entries, circuit, m, exact)
    else:
        metric_fn = None
    return Task(spec, circuit, entries, metric_fn)


class _EigenMetric:
    def __init__(self, entries, circuit, m, exact):
        self.entries, self.circuit, self.m, self.exact = entries, circuit, m, exact

    def __call__(self, theta) -> float:
        return eigenvalue_error(self.entries, self.circuit, theta, self.m, self.exact)


def run_seed(config: ExperimentConfig, seed: int, task: Task | None = None) -> RunRecord:
    task = task or build_task(config)
    opt = OptimizerConfig(s_max=config.s_max, alpha=config.alpha, mu=config.mu, s_min=config.s_min,
                          s_cap=config.s_cap, seed=seed)
    if config.optimizer == "refoqus":
        return refoqus_run(task.spec, task.circuit, opt, task.metric_fn)
    if config.optimizer == "rosalin":
        return rosalin_run(task.spec, task.circuit, opt, task.metric_fn)
    return adam_run(task.spec, task.circuit, opt, config.adam_shots, metric_fn=task.metric_fn)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace(record: RunRecord, path, wall_ms: Sequence[float] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for k, (t, shots, loss, metric, _) in enumerate(record.rows):
            wall = 0 if wall_ms is None else wall_ms[k]
            writer.writerow((t, shots, _fmt(loss), _fmt(metric), _fmt(wall) if wall_ms is not None else 0))


def read_trace(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected trace header {header}")
        rows = [r for r in reader if r]
    return {
        "iter": np.array([int(r[0]) for r in rows], dtype=np.int64),
        "shots": np.array([int(r[1]) for r in rows], dtype=np.int64),
        "loss": np.array([float(r[2]) for r in rows]),
        "metric": np.array([float(r[3]) for r in rows]),
    }


def best_so_far_at(shots: np.ndarray, metric: np.ndarray, budgets: np.ndarray) -> np.ndarray:
    """Lowest metric reached with at most ``b`` shots, for each budget ``b``."""
    best = np.minimum.accumulate(metric) if metric.size else metric
    idx = np.searchsorted(shots, budgets, side="right") - 1
    return np.where(idx >= 0, best[np.clip(idx, 0, None)] if best.size else np.nan, np.nan)


def shots_to_threshold(shots: np.ndarray, metric: np.ndarray, threshold: float) -> float:
    hit = np.flatnonzero(metric <= threshold)
    return float(shots[hit[0]]) if hit.size else math.inf


def summarize_traces(traces: Sequence[dict], threshold: float | None = None, grid_points: int = GRID_POINTS):
    """Median and 2.5/97.5 percentile bands of the best-so-far metric on a log budget grid."""
    if not traces:
        raise ValueError("no traces to summarize")
    lo = min(int(t["shots"][0]) for t in traces if t["shots"].size)
    hi = max(int(t["shots"][-1]) for t in traces if t["shots"].size)
    grid = np.unique(np.round(np.geomspace(max(lo, 1), max(hi, 1), grid_points)).astype(np.int64))
    curves = np.array([best_so_far_at(t["shots"], t["metric"], grid) for t in traces])
    rows = []
    for k, b in enumerate(grid):
        col = curves[:, k]
        ok = col[np.isfinite(col)]
        if ok.size:
            rows.append((int(b), float(np.median(ok)), float(np.percentile(ok, 2.5)),
                         float(np.percentile(ok, 97.5)), int(ok.size)))
        else:
            rows.append((int(b), math.nan, math.nan, math.nan, 0))
    stats = {
        "n_traces": len(traces),
        "median_iterations": float(np.median([t["iter"].size for t in traces])),
        "median_final_metric": float(np.median([t["metric"][-1] for t in traces if t["metric"].size])),
        "median_best_metric": float(np.median([t["metric"].min() for t in traces if t["metric"].size])),
        "median_final_loss": float(np.median([t["loss"][-1] for t in traces if t["loss"].size])),
    }
    if threshold is not None:
        hits = [shots_to_threshold(t["shots"], t["metric"], threshold) for t in traces]
        med = float(np.median(hits))
        stats["threshold"] = threshold
        stats["median_shots_to_threshold"] = med if math.isfinite(med) else None
    return rows, stats


def write_summary(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        for b, med, lo, hi, n in rows:
            writer.writerow((b, _fmt(med), _fmt(lo), _fmt(hi), n))


def _seed_job(args):
    config, seed = args
    start = time.perf_counter()
    try:
        record = run_seed(config, seed)
    except Exception as exc:  # one failing seed must not sink the others
        return seed, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}"
    elapsed = (time.perf_counter() - start) * 1000.0
    return seed, record, elapsed


def trace_path(config: ExperimentConfig, seed: int) -> Path:
    return Path(config.output) / f"trace_{config.task}_{config.optimizer}_seed{seed}.csv"


def run_experiment(config: ExperimentConfig) -> dict:
    """Run every seed, write one trace per seed plus ``summary.csv`` and ``summary.json``.

    ``wall_ms`` is written as 0 unless ``wall_clock`` is enabled, which keeps
    traces byte-identical across reruns.
    """
    out_dir = Path(config.output)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    build_task(config)  # surface config errors before any seed runs
    jobs = [(config, s) for s in config.seeds]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            results = list(pool.map(_seed_job, jobs))
    else:
        results = [_seed_job(j) for j in jobs]
    traces, failures, records, paths = [], {}, {}, []
    for seed, record, info in results:
        if record is None:
            failures[str(seed)] = info
            continue
        path = trace_path(config, seed)
        wall = None
        if config.wall_clock:
            wall = np.linspace(info / max(record.iterations, 1), info, record.iterations)
        write_trace(record, path, wall)
        paths.append(path.name)
        records[seed] = record
        traces.append(read_trace(path))
    summary = {"task": config.task, "optimizer": config.optimizer, "seeds": list(config.seeds),
               "failures": failures, "traces": paths, "band": "percentile 2.5/97.5 across seeds"}
    if traces:
        rows, stats = summarize_traces(traces, config.threshold)
        prefix = out_dir / f"summary_{config.task}_{config.optimizer}"
        write_summary(rows, f"{prefix}.csv")
        summary.update(stats)
        with open(f"{prefix}.json", "w", newline="\n") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    summary["records"] = records
    return summary


def summarize_glob(pattern: str, out: str, threshold: float | None = None) -> dict:
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise FileNotFoundError(f"no trace files match {pattern!r}")
    rows, stats = summarize_traces([read_trace(p) for p in paths], threshold)
    write_summary(rows, out)
    stats["traces"] = paths
    return stats
