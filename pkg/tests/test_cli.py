import json
import subprocess
import sys

from shotfrugal.bench import load_dataset
from shotfrugal.cli import main


def write_config(tmp_path, extra=""):
    path = tmp_path / "exp.cfg"
    path.write_text(f"task = vqse_pca\nn_qubits = 2\nlayers = 1\ndataset_count = 3\ns_max = 3000\n"
                    f"seeds = 0 1\noutput = {tmp_path / 'out'}\n{extra}")
    return path


def test_run(tmp_path, capsys):
    assert main(["run", str(write_config(tmp_path))]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert len(summary["traces"]) == 2


def test_overrides(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", str(cfg), "--seed-override", "5", "--budget-override", "500"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["seeds"] == [5]
    assert (tmp_path / "out" / "trace_vqse_pca_refoqus_seed5.csv").exists()


def test_config_errors(tmp_path):
    assert main(["run", str(write_config(tmp_path, "colour = blue\n"))]) == 2
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["gen-dataset", "--seed", "1"]) == 2


def test_gen_dataset(tmp_path):
    out = tmp_path / "d.txt"
    assert main(["gen-dataset", "--seed", "7", "--qubits", "2", "--count", "3", "--depth", "1", "--out", str(out)]) == 0
    assert len(load_dataset(out)) == 3
    assert main(["gen-dataset", "--seed", "7", "--qubits", "2", "--count", "0", "--depth", "1",
                 "--out", str(out)]) == 2


def test_summarize(tmp_path, capsys):
    main(["run", str(write_config(tmp_path))])
    capsys.readouterr()
    out = tmp_path / "summary.csv"
    assert main(["summarize", str(tmp_path / "out" / "trace_*.csv"), "--out", str(out), "--threshold", "0.5"]) == 0
    assert out.read_text().startswith("budget,median,p2_5,p97_5,n_seeds\n")
    assert main(["summarize", str(tmp_path / "nothing_*.csv"), "--out", str(out)]) == 3


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "shotfrugal.cli", "run", str(write_config(tmp_path, "bad line\n"))],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "config error" in proc.stderr
