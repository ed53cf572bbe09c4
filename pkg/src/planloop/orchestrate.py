"""Experiment loop: trials of plan, execute, assess, remember, retry.

A trial fixes (task, method, trial_seed) and runs up to max_iterations
attempts, resetting the scene each attempt and stopping early on success.
Outcome sampling streams are derived from (seed_base, trial_seed, iteration,
step_index) with the method deliberately left out, so methods issuing the
same instruction at the same point see the same physics.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import AuthError, CassetteMiss, ConfigError, PlanloopError, SchemaError
from .gateway import API_KEY_VAR, Cassette, LlmGateway
from .judging import (
    ABLATION_FULL,
    ABLATION_LEVELS,
    ABLATION_SUCCESS_ONLY,
    AttemptInput,
    LlmJudge,
    OracleJudge,
    make_reflection,
    run_assessment,
)
from .memory import AttemptRecord, ExperienceStore, StoredSubtask, visible_evidence
from .policy import DEFAULT_HORIZON, SubtaskInstruction, execute_subtask
from .reasoning import HeuristicReasoner, LlmReasoner, build_context
from .scenario import load_scenario
from .tasks import TaskSpec, goal_satisfied, initial_variation, load_task_registry
from .world import copy_scene, render_observation, stable_rng

__all__ = [
    "METHODS",
    "RESULTS_COLUMNS",
    "REPORT_COLUMNS",
    "RunConfig",
    "run_trial",
    "run_experiment",
    "write_results",
    "read_results",
    "build_report",
    "write_report",
]

METHODS = ("liten", "positive_icl", "reflexion", "no_feedback")

RESULTS_COLUMNS = (
    "method",
    "task",
    "trial_seed",
    "iteration",
    "success",
    "first_success_iteration",
    "errored",
)

REPORT_COLUMNS = (
    "task",
    "method",
    "iteration",
    "trials",
    "errored_trials",
    "cumulative_successes",
    "success_rate",
)


@dataclass(frozen=True)
class RunConfig:
    tasks: tuple[str, ...]
    methods: tuple[str, ...] = METHODS
    trials: int = 20
    seed_base: int = 0
    max_iterations: int = 5
    ablation: str = ABLATION_FULL
    judge_backend: str = "oracle"
    reasoner_backend: str = "heuristic"
    horizon: int = DEFAULT_HORIZON
    stop_on: str = "goal"
    model_id: str = "gpt-4o-mini"
    gateway_mode: str = "replay"
    cassette_path: str | None = None
    registry_path: str | None = None
    workers: int = 1

    def validate(self) -> None:
        if not self.tasks:
            raise ConfigError("at least one task is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; valid: {list(METHODS)}")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be at least 1")
        if self.ablation not in ABLATION_LEVELS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.judge_backend not in ("oracle", "llm"):
            raise ConfigError(f"unknown judge backend {self.judge_backend!r}")
        if self.reasoner_backend not in ("heuristic", "llm"):
            raise ConfigError(f"unknown reasoner backend {self.reasoner_backend!r}")
        if self.stop_on not in ("goal", "judge"):
            raise ConfigError(f"stop_on must be goal or judge, not {self.stop_on!r}")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if self.gateway_mode not in ("replay", "record", "live"):
            raise ConfigError(f"unknown gateway mode {self.gateway_mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.workers > 1 and self.gateway_mode == "record":
            raise ConfigError("recording a cassette with parallel workers is not supported")

    @classmethod
    def from_mapping(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        body = dict(doc)
        for key in ("tasks", "methods"):
            if key in body and body[key] is not None:
                if isinstance(body[key], str):
                    body[key] = tuple(part for part in body[key].split(",") if part)
                else:
                    body[key] = tuple(body[key])
        try:
            config = cls(**body)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from exc
        config.validate()
        return config


# ---------------------------------------------------------------------------
# backends


def _make_gateway(config: RunConfig) -> LlmGateway:
    if config.gateway_mode in ("record", "live") and not os.environ.get(API_KEY_VAR):
        raise AuthError(f"{API_KEY_VAR} is not set; cannot run in {config.gateway_mode} mode")
    cassette = Cassette()
    if config.cassette_path is not None:
        if Path(config.cassette_path).exists():
            cassette = Cassette.load(config.cassette_path)
        elif config.gateway_mode == "replay":
            raise CassetteMiss(f"cassette file {config.cassette_path} does not exist")
    elif config.gateway_mode == "replay":
        raise CassetteMiss("replay mode needs a cassette path")
    return LlmGateway(
        mode=config.gateway_mode,
        cassette=cassette,
        cassette_path=config.cassette_path,
    )


def _make_backends(config: RunConfig):
    gateway = None
    if config.judge_backend == "llm" or config.reasoner_backend == "llm":
        gateway = _make_gateway(config)
    judge = OracleJudge() if config.judge_backend == "oracle" else LlmJudge(gateway, config.model_id)
    if config.reasoner_backend == "heuristic":
        reasoner = HeuristicReasoner()
    else:
        reasoner = LlmReasoner(gateway, config.model_id)
    return judge, reasoner


# ---------------------------------------------------------------------------
# one trial


def _update_store(
    method: str,
    store: ExperienceStore,
    attempt: AttemptInput,
    iteration: int,
    plan_texts: tuple[str, ...],
    ablation: str,
    judge,
):
    """Append this attempt per the method's memory mode; returns the overall."""
    if method == "no_feedback":
        return None
    if method == "reflexion":
        reflection = make_reflection(attempt, iteration)
        store.append_attempt(AttemptRecord(iteration, plan_texts, (), reflection))
        return reflection
    if method == "positive_icl":
        assessments, overall = run_assessment(attempt, ABLATION_SUCCESS_ONLY, judge)
        kept = tuple(
            StoredSubtask(record.instruction, assessment)
            for record, assessment in zip(attempt.records, assessments)
            if assessment.verdict
        )
        store.append_attempt(AttemptRecord(iteration, plan_texts, kept, None))
        return overall
    assessments, overall = run_assessment(attempt, ablation, judge)
    kept = tuple(
        StoredSubtask(record.instruction, assessment)
        for record, assessment in zip(attempt.records, assessments)
    )
    store.append_attempt(AttemptRecord(iteration, plan_texts, kept, overall))
    return overall


def run_trial(
    task: TaskSpec,
    method: str,
    trial_seed: int,
    config: RunConfig,
    judge,
    reasoner,
) -> tuple[list[dict], ExperienceStore]:
    """Run one trial; returns per-iteration result rows and the final store."""
    doc = initial_variation(task, trial_seed)
    scene0, table, _roster = load_scenario(doc)
    store = ExperienceStore(mode=method)
    instruction_text = task.exemplars[trial_seed % len(task.exemplars)]

    rows: list[dict] = []
    first_success: int | None = None
    for iteration in range(1, config.max_iterations + 1):
        scene = copy_scene(scene0)
        try:
            if reasoner.name == "heuristic":
                plan = reasoner.propose(task, scene, table.objects, visible_evidence(store))
            else:
                bundle = build_context(
                    instruction_text,
                    render_observation(scene, table.objects).text(),
                    store,
                )
                plan = reasoner.propose_from_bundle(bundle)

            first_obs = render_observation(scene, table.objects)
            records = []
            for step_index, step in enumerate(plan.steps):
                rng = stable_rng(config.seed_base, trial_seed, iteration, step_index)
                scene, record = execute_subtask(
                    SubtaskInstruction(step.text), scene, table, rng, config.horizon
                )
                records.append(record)

            attempt = AttemptInput(task=task, records=tuple(records), first_obs=first_obs)
            success = goal_satisfied(task, scene, scene0)
            if success and first_success is None:
                first_success = iteration

            stop = success
            if not success or config.stop_on == "judge":
                overall = _update_store(
                    method, store, attempt, iteration, plan.texts(), config.ablation, judge
                )
                if config.stop_on == "judge":
                    stop = success if overall is None else overall.verdict
        except PlanloopError:
            rows.append(
                {
                    "method": method,
                    "task": task.name,
                    "trial_seed": trial_seed,
                    "iteration": iteration,
                    "success": 0,
                    "first_success_iteration": "",
                    "errored": 1,
                }
            )
            break
        rows.append(
            {
                "method": method,
                "task": task.name,
                "trial_seed": trial_seed,
                "iteration": iteration,
                "success": int(success),
                "first_success_iteration": "" if first_success is None else first_success,
                "errored": 0,
            }
        )
        if stop:
            break
    return rows, store


# ---------------------------------------------------------------------------
# the full grid


def _trial_job(args: tuple) -> list[dict]:
    config_doc, task_name, method, trial_seed = args
    config = RunConfig.from_mapping(config_doc)
    registry = load_task_registry(config.registry_path)
    judge, reasoner = _make_backends(config)
    rows, _store = run_trial(registry[task_name], method, trial_seed, config, judge, reasoner)
    return rows


def run_experiment(config: RunConfig) -> list[dict]:
    config.validate()
    registry = load_task_registry(config.registry_path)
    missing = [t for t in config.tasks if t not in registry]
    if missing:
        raise ConfigError(f"unknown tasks {missing}; registry has {sorted(registry)}")

    jobs = [
        (task_name, method, seed)
        for task_name in config.tasks
        for method in config.methods
        for seed in range(config.trials)
    ]
    rows: list[dict] = []
    if config.workers > 1:
        config_doc = asdict(config)
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for chunk in pool.map(
                _trial_job, [(config_doc,) + job for job in jobs], chunksize=4
            ):
                rows.extend(chunk)
    else:
        judge, reasoner = _make_backends(config)
        for task_name, method, seed in jobs:
            trial_rows, _store = run_trial(
                registry[task_name], method, seed, config, judge, reasoner
            )
            rows.extend(trial_rows)
    return rows


# ---------------------------------------------------------------------------
# results files


def results_to_csv_text(rows: list[dict]) -> str:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=RESULTS_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return out.getvalue()


def write_results(rows: list[dict], path: str | Path) -> None:
    Path(path).write_text(results_to_csv_text(rows), encoding="utf-8")


def read_results(path: str | Path) -> list[dict]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot read results file: {exc}", path=str(path)) from exc
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != RESULTS_COLUMNS:
        raise SchemaError(
            f"not a results file (columns {reader.fieldnames}); reports cannot be re-reported",
            path=str(path),
        )
    return list(reader)


def build_report(rows: list[dict]) -> list[dict]:
    """Cumulative success curve per (task, method) over iterations."""
    if not rows:
        return []
    max_iteration = max(int(r["iteration"]) for r in rows)
    groups: dict[tuple[str, str], dict[int, dict]] = {}
    order: list[tuple[str, str]] = []
    for row in rows:
        key = (row["task"], row["method"])
        if key not in groups:
            groups[key] = {}
            order.append(key)
        seed = int(row["trial_seed"])
        trial = groups[key].setdefault(seed, {"first_success": None, "errored": False})
        if int(row["errored"]):
            trial["errored"] = True
        if int(row["success"]) and trial["first_success"] is None:
            trial["first_success"] = int(row["iteration"])

    report: list[dict] = []
    for task, method in order:
        trials = groups[(task, method)]
        total = len(trials)
        errored = sum(1 for t in trials.values() if t["errored"])
        clean = total - errored
        for k in range(1, max_iteration + 1):
            cum = sum(
                1
                for t in trials.values()
                if not t["errored"] and t["first_success"] is not None and t["first_success"] <= k
            )
            rate = cum / clean if clean else 0.0
            report.append(
                {
                    "task": task,
                    "method": method,
                    "iteration": k,
                    "trials": total,
                    "errored_trials": errored,
                    "cumulative_successes": cum,
                    "success_rate": f"{rate:.4f}",
                }
            )
    return report


def write_report(report_rows: list[dict], path: str | Path) -> None:
    out = io.StringIO()
    writer = csv.DictWriter(out, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in report_rows:
        writer.writerow(row)
    Path(path).write_text(out.getvalue(), encoding="utf-8")
