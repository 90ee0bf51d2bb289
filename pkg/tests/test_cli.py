import json
import subprocess
import sys

import pytest

from mdpauction.cli import main
from mdpauction.instance import (
    GenerationConfig,
    generate_instance,
    load_instance,
    serialize_instance,
)


def run_cli(args, capsys):
    code = main(args)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# --- gen ---------------------------------------------------------------------------


def test_gen_stdout_matches_library(capsys):
    code, out, err = run_cli(["gen", "--n", "3", "--m", "2", "--sigma", "0.1",
                              "--seed", "7"], capsys)
    assert code == 0 and err == ""
    expected = serialize_instance(
        generate_instance(GenerationConfig(n_tasks=3, n_agents=2,
                                           sigma_v_sq=0.1, seed=7))
    )
    assert out == expected + "\n"


def test_gen_to_file_round_trips(tmp_path, capsys):
    path = tmp_path / "inst.json"
    code, _, _ = run_cli(["gen", "--n", "2", "--m", "1", "--seed", "3",
                          "--out", str(path)], capsys)
    assert code == 0
    inst = load_instance(str(path))
    assert inst.n_tasks == 2 and inst.n_agents == 1 and inst.seed == 3


def test_gen_batch_files(tmp_path, capsys):
    stem = tmp_path / "batch.json"
    code, _, _ = run_cli(["gen", "--n", "2", "--m", "1", "--seed", "0",
                          "--count", "3", "--out", str(stem)], capsys)
    assert code == 0
    files = sorted(tmp_path.glob("batch-*.json"))
    assert [f.name for f in files] == [
        "batch-0000.json", "batch-0001.json", "batch-0002.json"
    ]
    texts = [f.read_text() for f in files]
    assert len(set(texts)) == 3  # distinct derived seeds
    run_cli(["gen", "--n", "2", "--m", "1", "--seed", "0", "--count", "3",
             "--out", str(tmp_path / "again.json")], capsys)
    for i, f in enumerate(sorted(tmp_path.glob("again-*.json"))):
        assert f.read_text() == texts[i]


def test_gen_batch_requires_out(capsys):
    code, out, err = run_cli(["gen", "--n", "2", "--m", "1", "--count", "2"],
                             capsys)
    assert code == 1
    assert err.startswith("error:")


def test_gen_rejects_bad_size(capsys):
    code, _, err = run_cli(["gen", "--n", "-1", "--m", "1"], capsys)
    assert code == 1 and err.startswith("error:")


# --- solve -------------------------------------------------------------------------


@pytest.fixture()
def instance_file(tmp_path, capsys):
    path = tmp_path / "inst.json"
    run_cli(["gen", "--n", "4", "--m", "2", "--sigma", "0.1", "--seed", "5",
             "--out", str(path)], capsys)
    return str(path)


def test_solve_auction_output(instance_file, capsys):
    args = ["solve", instance_file, "--method", "auction", "--quadrature", "4"]
    code, out, err = run_cli(args, capsys)
    assert code == 0 and err == ""
    lines = out.splitlines()
    assert lines[0] == "method: auction"
    assert lines[1].startswith("agent 0: tasks [")
    assert lines[2].startswith("agent 1: tasks [")
    assert lines[3].startswith("unassigned: [")
    assert lines[4].startswith("total value: ")
    assert lines[5].startswith("expected reward: ")
    assert lines[6].startswith("rounds: ")
    assert "converged: True" in lines[6]
    code2, out2, _ = run_cli(args, capsys)
    assert out2 == out  # byte-identical rerun


@pytest.mark.parametrize("method", ["cbba", "robust-cbba"])
def test_solve_baselines(instance_file, capsys, method):
    code, out, _ = run_cli(
        ["solve", instance_file, "--method", method, "--samples", "20"], capsys
    )
    assert code == 0
    assert out.splitlines()[0] == f"method: {method}"


def test_solve_json_out(instance_file, tmp_path, capsys):
    out_path = tmp_path / "plan.json"
    args = ["solve", instance_file, "--method", "auction", "--quadrature", "4",
            "--out", str(out_path)]
    assert run_cli(args, capsys)[0] == 0
    doc = json.loads(out_path.read_text())
    assert set(doc) == {
        "method", "assignment", "paths", "unassigned", "per_agent_value",
        "total_value", "expected_reward", "rounds_to_converge", "converged",
        "score_evaluations",
    }
    assert doc["method"] == "auction"
    first = out_path.read_text()
    run_cli(args, capsys)
    assert out_path.read_text() == first


def test_solve_missing_file(capsys):
    code, _, err = run_cli(["solve", "/nonexistent/inst.json"], capsys)
    assert code == 1 and err.startswith("error:")


def test_unknown_command_and_flag(capsys):
    assert run_cli(["frobnicate"], capsys)[0] == 2
    assert run_cli(["gen", "--n", "2", "--m", "1", "--bogus"], capsys)[0] == 2


# --- validate ----------------------------------------------------------------------


def test_validate_generated_instance(tmp_path, capsys):
    out_path = tmp_path / "report.csv"
    args = ["validate", "--n", "3", "--m", "2", "--sigma", "0.1", "--seed", "2",
            "--rounds", "20", "--quadrature", "4", "--samples", "10",
            "--out", str(out_path)]
    code, out, err = run_cli(args, capsys)
    assert code == 0 and err == ""
    lines = out.splitlines()
    assert len(lines) == 3
    for line, method in zip(lines, ("auction", "cbba", "robust-cbba")):
        assert line.startswith(f"{method}: expected ")
        assert "finish_rate" in line
    text = out_path.read_text()
    header = text.splitlines()[0]
    assert header == ("instance_seed,method,rollout_count,expected_reward,"
                      "actual_reward_mean,actual_reward_std,finish_rate,"
                      "served_total,failed_total,unassigned_total")
    run_cli(args, capsys)
    assert out_path.read_text() == text  # deterministic CSV bytes


def test_validate_instance_file(instance_file, capsys):
    code, out, _ = run_cli(
        ["validate", instance_file, "--methods", "cbba", "--rounds", "10"],
        capsys,
    )
    assert code == 0
    assert out.startswith("cbba: expected ")


def test_validate_unknown_method(capsys):
    code, _, err = run_cli(
        ["validate", "--methods", "auction,magic", "--rounds", "5"], capsys
    )
    assert code == 1 and "magic" in err


# --- bench -------------------------------------------------------------------------


def test_bench_stdout_deterministic(tmp_path, capsys):
    out_path = tmp_path / "bench.csv"
    args = ["bench", "--dims", "2,3", "--samples", "10", "--repeats", "1",
            "--out", str(out_path)]
    code, out, err = run_cli(args, capsys)
    assert code == 0 and err == ""
    lines = out.splitlines()
    assert len(lines) == 6
    assert lines[0].startswith("n=2 method=auction evaluations=")
    header = out_path.read_text().splitlines()[0]
    assert header == ("n_tasks,n_agents,instance_seed,method,score_evaluations,"
                      "setup_wall_s,coordination_wall_s,total_wall_s")
    code2, out2, _ = run_cli(args, capsys)
    assert out2 == out  # counters never depend on the clock


# --- check -------------------------------------------------------------------------


def test_check_monotonicity_passes(capsys):
    code, out, _ = run_cli(
        ["check", "--property", "monotonicity", "--trials", "5"], capsys
    )
    assert code == 0
    assert "property: monotonicity" in out
    assert out.strip().endswith("PASS")


def test_check_optimality_passes(capsys):
    code, out, _ = run_cli(
        ["check", "--property", "optimality", "--trials", "4"], capsys
    )
    assert code == 0
    assert "min_ratio=" in out
    assert out.strip().endswith("PASS")


def test_console_script_wiring():
    proc = subprocess.run(
        [sys.executable, "-m", "mdpauction.cli", "gen", "--n", "1", "--m", "1"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert '"horizon"' in proc.stdout
