import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedpe import harness
from fedpe.cli import main
from fedpe.env import BanditInstance, save_instance, synth_instance
from fedpe.errors import ConfigError, InvalidLogError
from fedpe.harness import ExperimentSpec, checkpoint_rounds, run_experiment
from fedpe.protocol import AlgorithmConfig, run_policy
from fedpe.schedule import phase_lengths
from fedpe.trace import PhaseRecord, comm_cost, compute_regret, sparsity_level


def tiny_env():
    X = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    return BanditInstance(X, np.array([[1.0, 0.0], [0.0, 0.5]]), "disjoint", 0.0, 1.0, 1.0, 1.0)


def test_compute_regret_example():
    np.testing.assert_allclose(compute_regret(tiny_env(), [[0, 1, 1]]), [0.0, 0.5, 1.0])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 40))
def test_compute_regret_matches_loop(seed, T):
    rng = np.random.default_rng(seed)
    env = synth_instance(3, 4, 2, rng=rng)
    log = rng.integers(0, 4, (3, T))
    total, expect = 0.0, []
    for t in range(T):
        for i in range(3):
            total += env.means[i].max() - env.means[i, log[i, t]]
        expect.append(total)
    np.testing.assert_allclose(compute_regret(env, log), expect, atol=1e-12)


@pytest.mark.parametrize("log", [[[0, 2]], [[-1, 0]], [0, 1], [[0], [1]]])
def test_compute_regret_rejects_bad_logs(log):
    with pytest.raises(InvalidLogError):
        compute_regret(tiny_env(), log)


def test_comm_cost_example():
    assert comm_cost([PhaseRecord(1, 1, up_scalars=6, down_scalars=0, sparsity=1.0, sweeps=0)]) == 6
    assert comm_cost([]) == 0


@pytest.mark.parametrize("pi, M, level", [([0.5, 0.5, 0.0], 1, 2.0), ([1.0, 1.0], 2, 1.0),
                                          ([1e-10, 1.0, 0.3, 0.7], 2, 1.5)])
def test_sparsity_level(pi, M, level):
    assert sparsity_level(pi, M) == level


def one_arm_env():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((3, 1, 2))
    X /= np.linalg.norm(X, axis=2, keepdims=True)
    return BanditInstance(X, np.array([[1.0, 0.0]]), "disjoint", 1.0, 1.0, 1.0, 1.0)


def test_exponential_records_and_doubling():
    env = one_arm_env()
    M, d = env.M, env.d
    full_phase = M * d + M * (d + d * d) + 2 * M
    totals = []
    for T in (2 ** 10, 2 ** 11):
        cfg = AlgorithmConfig("fed_pe", T, 0.1, phase_lengths("exponential", T, 1))
        tr = run_policy(env, cfg, 0)
        assert len(tr.phases) == cfg.schedule.H
        totals.append(tr.total_comm)
    assert totals[1] - totals[0] == full_phase


def test_checkpoint_rounds():
    assert np.array_equal(checkpoint_rounds(100), np.arange(1, 101))
    T = 2 ** 16
    starts = [0, 1000, 5000, 40000]
    pts = checkpoint_rounds(T, starts)
    assert pts[0] == 1 and pts[-1] == T
    assert len(pts) <= harness.CHECKPOINTS + len(starts)
    assert {1000, 5000, 40000} <= set(pts.tolist())
    assert np.all(np.diff(pts) > 0)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def instance_file(tmp_path):
    path = tmp_path / "inst.json"
    save_instance(synth_instance(5, 3, 2, rng=np.random.default_rng(7)), path)
    return path


def experiment(instance, out, jobs=1, algos=("fed-pe", "local-ucb")):
    return ExperimentSpec(instance, algos, 600, (0, 1, 2), out, jobs=jobs)


def test_run_experiment_files_and_summary(instance_file, tmp_path):
    res = run_experiment(experiment(instance_file, tmp_path / "a"))
    out = tmp_path / "a"
    traces = sorted(p.name for p in out.glob("trace_*.csv"))
    assert traces == [f"trace_{a}_s{s}.csv" for a in ("fed-pe", "local-ucb") for s in range(3)]
    assert not res.failures
    summary = {r["algo"]: r for r in read_csv(out / "summary.csv")}
    for algo in ("fed-pe", "local-ucb"):
        finals = [float(read_csv(out / f"trace_{algo}_s{s}.csv")[-1]["cum_regret"]) for s in range(3)]
        assert float(summary[algo]["final_regret_mean"]) == np.mean(finals)
        assert float(summary[algo]["final_regret_std"]) == np.std(finals, ddof=1)
    assert summary["local-ucb"]["total_comm_mean"] == "0.0"
    assert summary["local-ucb"]["sparsity_mean"] == "nan"
    phases = read_csv(out / "phases.csv")
    assert {r["algo"] for r in phases} == {"fed-pe"}
    rows = read_csv(out / "trace_fed-pe_s0.csv")
    assert len(rows) == 600 and rows[0]["round"] == "1"


def test_reruns_are_byte_identical(instance_file, tmp_path):
    outs = []
    for name, jobs in (("a", 1), ("b", 1), ("c", 2)):
        run_experiment(experiment(instance_file, tmp_path / name, jobs=jobs))
        outs.append({p.name: p.read_bytes() for p in (tmp_path / name).iterdir()})
    assert outs[0] == outs[1] == outs[2]


def test_failed_cells_are_recorded(instance_file, tmp_path, monkeypatch):
    def boom(*a, **k):
        raise FloatingPointError("injected")

    monkeypatch.setattr(harness, "run_policy", boom)
    res = run_experiment(experiment(instance_file, tmp_path / "f"))
    assert len(res.failures) == 3
    rows = read_csv(tmp_path / "f" / "failures.csv")
    assert [r["seed"] for r in rows] == ["0", "1", "2"]
    assert "injected" in rows[0]["error"]
    # the other algorithm still ran
    assert len(list((tmp_path / "f").glob("trace_local-ucb_*.csv"))) == 3
    code = main(["run", "--instance", str(instance_file), "--algo", "fed-pe", "--T", "600",
                 "--out", str(tmp_path / "g")])
    assert code == 2


def test_spec_validation(instance_file, tmp_path):
    with pytest.raises(ConfigError):
        ExperimentSpec(instance_file, ("nope",), 100, (0,), tmp_path)
    with pytest.raises(ConfigError):
        ExperimentSpec(instance_file, ("fed-pe",), 100, (), tmp_path)
    with pytest.raises(ConfigError):
        run_experiment(ExperimentSpec(instance_file, ("shared",), 600, (0,), tmp_path))


def test_cli_synth_run_design(tmp_path, capsys):
    inst = tmp_path / "i.json"
    assert main(["synth", "--M", "4", "--K", "3", "--d", "2", "--seed", "3", "--out", str(inst)]) == 0
    doc = json.loads(inst.read_text())
    assert (doc["M"], doc["K"], doc["d"]) == (4, 3, 2)
    out = tmp_path / "o"
    assert main(["run", "--instance", str(inst), "--algo", "fed-pe,enhanced,collaborative",
                 "--T", "500", "--seeds", "0,1", "--schedule", "uniform", "--out", str(out)]) == 0
    assert (out / "summary.csv").exists() and len(list(out.glob("trace_*.csv"))) == 6

    prob = tmp_path / "p.json"
    prob.write_text(json.dumps({"mode": "disjoint", "clients": [
        {"arms": [0, 1], "directions": [[1, 0], [0, 1]]},
        {"arms": [0], "directions": [[1, 1]]}]}))
    capsys.readouterr()
    assert main(["design", "--problem", str(prob)]) == 0
    blocks = capsys.readouterr().out.strip().split("\n\n")
    assert blocks[0].splitlines()[0] == "client,arm,pi"
    weights = [float(line.split(",")[2]) for line in blocks[0].splitlines()[1:]]
    assert weights[2] == pytest.approx(1.0)
    assert sum(weights[:2]) == pytest.approx(1.0)
    metrics = dict(line.split(",") for line in blocks[2].splitlines()[1:])
    assert metrics["certified"] == "true" and metrics["rank_total"] == "3"


@pytest.mark.parametrize("argv", [
    ["run", "--instance", "missing.json", "--algo", "fed-pe", "--T", "100", "--out", "x"],
    ["run", "--algo", "fed-pe"],
    ["synth", "--M", "0", "--K", "2", "--d", "2", "--out", "x.json"],
])
def test_cli_config_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 1


def test_cli_bad_schedule_exits_1(instance_file, tmp_path):
    assert main(["run", "--instance", str(instance_file), "--algo", "fed-pe", "--T", "600",
                 "--schedule", "exp:0", "--out", str(tmp_path / "o")]) == 1


def test_module_entry_point(tmp_path):
    inst = tmp_path / "i.json"
    proc = subprocess.run([sys.executable, "-m", "fedpe", "synth", "--M", "2", "--K", "2", "--d", "2",
                           "--out", str(inst)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert inst.exists()
