"""End-to-end checks of the command line front end."""

from __future__ import annotations

import json

import pytest

from planloop.cli import main
from planloop.memory import read_store
from planloop.orchestrate import read_results
from planloop.reasoning import clear_candidate_cache

SCENARIO = """
format: 1
objects:
  - {id: cube_a, name: amber cube, color: amber, shape: block, size_class: small, grip_width: 0.5}
  - {id: cube_b, name: brown cube, color: brown, shape: block, size_class: small, grip_width: 0.5}
  - {id: cube_c, name: cream cube, color: cream, shape: block, size_class: small, grip_width: 0.5}
affordance_rules:
  - name: blocks-stick
    object: {shape: block}
    target: {shape: block}
    outcomes:
      - {kind: no_op, p: 1.0, reason: policy}
"""

REGISTRY = """
format: 1
tasks:
  toy_stack:
    label: stack three blocks
    scenario: toy_scenario.yaml
    goal: stack_of_three
    variation: shuffle_table_order
    grammar:
      objects: [cube_a, cube_b, cube_c]
      targets: [cube_a, cube_b, cube_c]
      canonical: "put the {object} on the {target}"
      alternate: "move the {object} onto the {target}"
    exemplars:
      - stack three of the blocks into one tower
"""


@pytest.fixture(autouse=True)
def fresh_cache():
    clear_candidate_cache()
    yield
    clear_candidate_cache()


@pytest.fixture()
def registry_path(tmp_path):
    (tmp_path / "toy_scenario.yaml").write_text(SCENARIO, encoding="utf-8")
    path = tmp_path / "registry.yaml"
    path.write_text(REGISTRY, encoding="utf-8")
    return path


def run_args(registry_path, out, *extra):
    return [
        "run",
        "--task", "toy_stack",
        "--registry", str(registry_path),
        "--methods", "liten",
        "--trials", "2",
        "--max-iterations", "2",
        "--out", str(out),
        *extra,
    ]


def test_run_writes_results_csv(registry_path, tmp_path, capsys):
    out = tmp_path / "results.csv"
    assert main(run_args(registry_path, out)) == 0
    rows = read_results(out)
    # 2 trials x 2 iterations, nothing ever succeeds in this scenario
    assert len(rows) == 4
    assert {r["trial_seed"] for r in rows} == {"0", "1"}
    assert all(r["success"] == "0" for r in rows)
    assert f"wrote 4 rows to {out} (0 errored iterations)" in capsys.readouterr().out


def test_run_flags_override_the_config_file(registry_path, tmp_path):
    config = tmp_path / "config.yaml"
    config.write_text(
        f"tasks: toy_stack\nmethods: liten\ntrials: 1\nmax_iterations: 2\n"
        f"registry_path: {registry_path}\n",
        encoding="utf-8",
    )
    out = tmp_path / "results.csv"
    assert main(["run", "--config", str(config), "--trials", "3", "--out", str(out)]) == 0
    assert {r["trial_seed"] for r in read_results(out)} == {"0", "1", "2"}


def test_run_without_tasks_is_a_config_error(capsys):
    assert main(["run"]) == 2
    assert "config error: no tasks given" in capsys.readouterr().err


def test_run_with_unknown_method_is_a_config_error(registry_path, tmp_path, capsys):
    out = tmp_path / "results.csv"
    assert main(run_args(registry_path, out, "--methods", "osmosis")) == 2
    assert "config error" in capsys.readouterr().err


def test_run_with_unreadable_config_file(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "gone.yaml")]) == 4
    assert "cannot read config file" in capsys.readouterr().err


def test_run_with_non_mapping_config_file(tmp_path, capsys):
    config = tmp_path / "config.yaml"
    config.write_text("- just\n- a\n- list\n", encoding="utf-8")
    assert main(["run", "--config", str(config)]) == 2
    assert "must hold a mapping" in capsys.readouterr().err


def test_run_replay_without_cassette_is_a_backend_error(registry_path, tmp_path, capsys):
    out = tmp_path / "results.csv"
    assert main(run_args(registry_path, out, "--judge", "llm")) == 3
    assert "backend error" in capsys.readouterr().err


def test_run_record_without_credentials_is_a_backend_error(registry_path, tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("PLANLOOP_API_KEY", raising=False)
    out = tmp_path / "results.csv"
    code = main(run_args(registry_path, out, "--judge", "llm", "--gateway-mode", "record"))
    assert code == 3
    assert "PLANLOOP_API_KEY" in capsys.readouterr().err


def test_store_out_demands_a_single_trial(registry_path, tmp_path, capsys):
    out = tmp_path / "results.csv"
    args = run_args(registry_path, out, "--store-out", str(tmp_path / "store.json"))
    assert main(args) == 2
    assert "exactly one task, one method, and one trial" in capsys.readouterr().err


def test_store_out_then_inspect(registry_path, tmp_path, capsys):
    out = tmp_path / "results.csv"
    store_path = tmp_path / "store.json"
    args = run_args(registry_path, out, "--trials", "1", "--store-out", str(store_path))
    assert main(args) == 0
    store = read_store(store_path)
    assert store.mode == "liten"
    assert len(store.attempts) == 2
    capsys.readouterr()

    assert main(["inspect-store", str(store_path)]) == 0
    text = capsys.readouterr().out
    assert "memory mode: liten; attempts: 2" in text
    assert "attempt 1:" in text
    assert "instruction evidence (successes, failures):" in text


def test_inspect_store_rejects_malformed_files(tmp_path, capsys):
    path = tmp_path / "store.json"
    path.write_text(json.dumps({"format": 1}), encoding="utf-8")
    assert main(["inspect-store", str(path)]) == 4
    assert "file error" in capsys.readouterr().err


def test_report_prints_the_final_iteration_table(registry_path, tmp_path, capsys):
    results = tmp_path / "results.csv"
    main(run_args(registry_path, results))
    capsys.readouterr()

    report_out = tmp_path / "report.csv"
    assert main(["report", str(results), "--out", str(report_out)]) == 0
    text = capsys.readouterr().out
    assert f"wrote 2 rows to {report_out}" in text
    assert "cumulative success rate at iteration 2:" in text
    assert "rate=0.0000" in text
    assert "toy_stack" in text and "liten" in text


def test_report_rejects_missing_and_wrong_files(tmp_path, capsys):
    assert main(["report", str(tmp_path / "gone.csv")]) == 4
    assert "file error" in capsys.readouterr().err

    not_results = tmp_path / "other.csv"
    not_results.write_text("a,b\n1,2\n", encoding="utf-8")
    assert main(["report", str(not_results)]) == 4
    assert "not a results file" in capsys.readouterr().err


def test_report_on_empty_results(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text(
        "method,task,trial_seed,iteration,success,first_success_iteration,errored\n",
        encoding="utf-8",
    )
    assert main(["report", str(empty)]) == 0
    assert "no rows to report" in capsys.readouterr().out
