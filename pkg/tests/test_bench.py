import json

import numpy as np
import pytest

from oracles import circuit_unitary
from conftest import random_state
from shotfrugal.ansatz import build_hea
from shotfrugal.bench import (
    ExperimentConfig,
    best_so_far_at,
    build_task,
    eigenvalue_error,
    generate_compressible_ensemble,
    generate_ensemble,
    load_dataset,
    parse_config,
    read_trace,
    run_experiment,
    save_dataset,
    shots_to_threshold,
    summarize_traces,
)
from shotfrugal.exceptions import ConfigurationError, DistributionError, SizeError
from shotfrugal.lossspec import DatasetEntry, exact_loss
from shotfrugal.simulator import StateVector, density_from_ensemble


class TestGenerate:
    def test_reproducible(self):
        a = generate_ensemble(7, 2, 3, 1)
        b = generate_ensemble(7, 2, 3, 1)
        assert len(a) == 3
        for x, y in zip(a, b):
            assert x.state.amplitudes.tobytes() == y.state.amplitudes.tobytes()
            assert abs(np.linalg.norm(x.state.amplitudes) - 1) < 1e-12

    def test_uniform_probabilities(self):
        assert all(e.probability == pytest.approx(1 / 101) for e in generate_ensemble(0, 2, 101, 1))

    def test_depth_zero(self):
        entries = generate_ensemble(0, 3, 4, 0)
        rho = density_from_ensemble((e.state, e.probability) for e in entries)
        assert np.linalg.eigvalsh(rho)[-1] == pytest.approx(1.0)

    def test_bad_count(self):
        with pytest.raises(SizeError):
            generate_ensemble(0, 2, 0, 1)

    def test_compressible_has_zero_loss_solution(self):
        # V^dag undoes the preparation, so some circuit reaches zero trash loss
        entries = generate_compressible_ensemble(3, 4, 5, 0, 2)
        for e in entries:
            assert np.allclose(e.state.amplitudes[4:], 0)


class TestDatasetFile:
    def test_round_trip(self, tmp_path):
        entries = generate_ensemble(1, 2, 3, 2)
        path = tmp_path / "d.txt"
        save_dataset(entries, path)
        back = load_dataset(path)
        for a, b in zip(entries, back):
            np.testing.assert_allclose(a.state.amplitudes, b.state.amplitudes, rtol=0, atol=1e-15)
            assert a.probability == b.probability

    def test_basis_states(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text("# two states\nnqubits=1 entries=2\np=0.5\n1 0\n0 0\np=0.5\n0 0\n1 0\n")
        entries = load_dataset(path)
        assert len(entries) == 2
        np.testing.assert_array_equal(entries[1].state.amplitudes, [0, 1])

    def test_probability_sum(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text("nqubits=1 entries=2\np=0.5\n1 0\n0 0\np=0.4\n0 0\n1 0\n")
        with pytest.raises(DistributionError):
            load_dataset(path)

    def test_norm_tolerance(self, tmp_path):
        path = tmp_path / "d.txt"
        a = np.sqrt(0.999999)
        path.write_text(f"nqubits=1 entries=1\np=1\n{a} 0\n0 0\n")
        entries = load_dataset(path)
        assert np.linalg.norm(entries[0].state.amplitudes) == pytest.approx(1.0, abs=1e-12)
        path.write_text("nqubits=1 entries=1\np=1\n0.99 0\n0 0\n")
        with pytest.raises(DistributionError):
            load_dataset(path)

    def test_parse_error_has_line(self, tmp_path):
        path = tmp_path / "d.txt"
        path.write_text("nqubits=1 entries=1\np=1\n1 zero\n0 0\n")
        with pytest.raises(ValueError, match=r"d.txt:3"):
            load_dataset(path)


class TestEigenvalueError:
    def test_diagonalizing_unitary(self):
        circuit = build_hea(2, 1)
        # a rank-1 state is diagonalized whenever U maps it to a basis state; theta = 0 on |00> does
        zero = [DatasetEntry(StateVector(2, [1, 0, 0, 0]), 1.0)]
        assert eigenvalue_error(zero, circuit, np.zeros(circuit.n_params), 4) < 1e-12

    def test_maximally_mixed(self, rng):
        basis = np.eye(4)
        entries = [DatasetEntry(StateVector(2, b), 0.25) for b in basis]
        circuit = build_hea(2, 1)
        assert eigenvalue_error(entries, circuit, rng.uniform(0, 6, circuit.n_params), 4) < 1e-12

    def test_rank_one_dense(self, rng):
        psi = random_state(2, rng)
        circuit = build_hea(2, 2)
        theta = rng.uniform(0, 6, circuit.n_params)
        u = circuit_unitary(circuit, theta)
        diag = np.sort(np.abs(u @ psi.amplitudes) ** 2)[::-1]
        expected = np.sum((np.array([1.0, 0, 0]) - diag[:3]) ** 2)
        got = eigenvalue_error([DatasetEntry(psi, 1.0)], circuit, theta, 3)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_nonnegative(self, rng):
        entries = generate_ensemble(2, 2, 5, 2)
        circuit = build_hea(2, 1)
        for _ in range(10):
            assert eigenvalue_error(entries, circuit, rng.uniform(0, 6, circuit.n_params), 4) >= 0

    def test_m_too_large(self):
        with pytest.raises(SizeError):
            eigenvalue_error(generate_ensemble(0, 2, 2, 1), build_hea(2, 1), np.zeros(6), 5)


class TestConfig:
    def test_parse(self):
        cfg = parse_config("task = autoencoder  # comment\nseeds = 1, 2 3\nalpha: 0.1\nwall_clock = yes\n")
        assert cfg.task == "autoencoder" and cfg.seeds == (1, 2, 3) and cfg.alpha == 0.1 and cfg.wall_clock

    @pytest.mark.parametrize("text", ["bogus = 1", "task = nope", "seeds = 1\nseeds = 2", "layers = 1.5",
                                      "s_max = 0", "no separator"])
    def test_errors(self, text):
        with pytest.raises(ConfigurationError):
            parse_config(text)

    def test_autoencoder_trash_default(self):
        assert ExperimentConfig(task="autoencoder", n_qubits=5).resolved_trash == 3

    def test_eigen_metric_only_for_pca(self):
        with pytest.raises(ConfigurationError):
            build_task(ExperimentConfig(task="autoencoder", metric="eigenvalue_error"))


class TestTraces:
    def test_best_so_far(self):
        shots = np.array([10, 20, 30])
        metric = np.array([3.0, 1.0, 2.0])
        np.testing.assert_allclose(best_so_far_at(shots, metric, np.array([5, 10, 25, 100])), [np.nan, 3, 1, 1])

    def test_threshold(self):
        assert shots_to_threshold(np.array([1, 2, 3]), np.array([5, 0.5, 0.1]), 1.0) == 2
        assert shots_to_threshold(np.array([1]), np.array([5.0]), 1.0) == np.inf

    def test_summary_bands(self):
        traces = [{"iter": np.arange(3), "shots": np.array([10, 100, 1000]), "loss": np.zeros(3),
                   "metric": np.array([1.0, 0.5, 0.1]) * k} for k in range(1, 6)]
        rows, stats = summarize_traces(traces, threshold=0.6)
        last = rows[-1]
        assert last[0] == 1000 and last[1] == pytest.approx(0.3) and last[4] == 5
        assert last[2] <= last[1] <= last[3]
        assert stats["median_shots_to_threshold"] == 1000  # only k=1 crosses at 100


def small_config(tmp_path, **kw):
    base = dict(task="vqse_pca", n_qubits=3, layers=1, dataset_count=5, s_max=20000, seeds=(0, 1, 2),
                output=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentConfig(**base)


class TestRunExperiment:
    def test_structure(self, tmp_path):
        cfg = small_config(tmp_path)
        summary = run_experiment(cfg)
        out = tmp_path / "out"
        traces = sorted(out.glob("trace_*.csv"))
        assert len(traces) == 3
        assert (out / "summary_vqse_pca_refoqus.csv").exists()
        data = json.loads((out / "summary_vqse_pca_refoqus.json").read_text())
        assert data["failures"] == {} and "median_iterations" in data
        for p in traces:
            assert p.read_text().splitlines()[0] == "iter,shots,loss,metric,wall_ms"
            tr = read_trace(p)
            assert np.all(np.diff(tr["shots"]) > 0)
            np.testing.assert_array_equal(tr["iter"], np.arange(tr["iter"].size))
            assert np.all(tr["metric"] >= 0)
        assert set(summary["records"]) == {0, 1, 2}

    def test_byte_identical_rerun(self, tmp_path):
        a = small_config(tmp_path / "a")
        b = small_config(tmp_path / "b")
        run_experiment(a)
        run_experiment(b)
        for seed in a.seeds:
            name = f"trace_vqse_pca_refoqus_seed{seed}.csv"
            assert (tmp_path / "a" / "out" / name).read_bytes() == (tmp_path / "b" / "out" / name).read_bytes()

    def test_parallel_matches_serial(self, tmp_path):
        run_experiment(small_config(tmp_path / "s"))
        run_experiment(small_config(tmp_path / "p", jobs=2))
        for p in (tmp_path / "s" / "out").glob("trace_*.csv"):
            assert p.read_bytes() == (tmp_path / "p" / "out" / p.name).read_bytes()

    @pytest.mark.parametrize("task,optimizer,ansatz", [("autoencoder", "rosalin", "strongly_entangling"),
                                                       ("mse_toy", "refoqus", "hea"),
                                                       ("vqse_pca", "adam", "hea")])
    def test_other_tasks(self, tmp_path, task, optimizer, ansatz):
        cfg = small_config(tmp_path, task=task, optimizer=optimizer, ansatz=ansatz, seeds=(0,), adam_shots=5)
        summary = run_experiment(cfg)
        assert summary["failures"] == {}
        rec = summary["records"][0]
        task_obj = build_task(cfg)
        assert rec.losses[-1] == pytest.approx(exact_loss(task_obj.spec, task_obj.circuit, rec.theta))

    def test_dataset_path(self, tmp_path):
        path = tmp_path / "d.txt"
        save_dataset(generate_ensemble(4, 3, 4, 1), path)
        summary = run_experiment(small_config(tmp_path, dataset_path=str(path), seeds=(0,)))
        assert summary["failures"] == {}

    def test_dataset_width_mismatch(self, tmp_path):
        path = tmp_path / "d.txt"
        save_dataset(generate_ensemble(4, 2, 4, 1), path)
        with pytest.raises(ConfigurationError):
            run_experiment(small_config(tmp_path, dataset_path=str(path)))
