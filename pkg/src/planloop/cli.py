"""Command line front end: run experiments, report curves, inspect stores.

Exit codes: 0 success, 2 configuration problems, 3 model-backend problems,
4 unreadable or malformed files.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from .errors import (
    AuthError,
    BackendError,
    CassetteMiss,
    ConfigError,
    ParseError,
    SchemaError,
    TransportError,
    ValidationError,
)
from .memory import read_store, render_context, visible_evidence
from .orchestrate import (
    METHODS,
    RunConfig,
    build_report,
    read_results,
    run_experiment,
    run_trial,
    write_report,
    write_results,
    _make_backends,
)
from .tasks import load_task_registry

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planloop",
        description="affordance learning loop experiments on a simulated tabletop",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid and write a results CSV")
    run.add_argument("--config", help="YAML file with RunConfig keys; flags override it")
    run.add_argument("--task", "--tasks", dest="tasks", help="comma-separated task names")
    run.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    run.add_argument("--trials", type=int, help="trial seeds per (task, method)")
    run.add_argument("--seed-base", type=int, dest="seed_base")
    run.add_argument("--max-iterations", type=int, dest="max_iterations")
    run.add_argument("--ablation", help="full, no_failure_reasoning, or success_only")
    run.add_argument("--judge", dest="judge_backend", help="oracle or llm")
    run.add_argument("--reasoner", dest="reasoner_backend", help="heuristic or llm")
    run.add_argument("--horizon", type=int)
    run.add_argument("--stop-on", dest="stop_on", help="goal or judge")
    run.add_argument("--model", dest="model_id")
    run.add_argument("--gateway-mode", dest="gateway_mode", help="replay, record, or live")
    run.add_argument("--cassette", dest="cassette_path")
    run.add_argument("--registry", dest="registry_path")
    run.add_argument("--parallel", type=int, dest="workers")
    run.add_argument("--out", default="results.csv", help="results CSV path")
    run.add_argument(
        "--store-out",
        help="write the experience store as JSON; needs exactly one task, method, and trial",
    )

    report = sub.add_parser("report", help="cumulative success per iteration from a results CSV")
    report.add_argument("results", help="results CSV produced by the run command")
    report.add_argument("--out", help="write the report CSV here instead of only printing")

    inspect = sub.add_parser("inspect-store", help="pretty-print a saved experience store")
    inspect.add_argument("store", help="store JSON written by run --store-out")

    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    doc: dict = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise SchemaError(f"cannot read config file: {exc}", path=args.config) from exc
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise SchemaError(f"config file is not valid YAML: {exc}", path=args.config) from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping of RunConfig keys")
        doc.update(loaded)
    overrides = {
        "tasks": args.tasks,
        "methods": args.methods,
        "trials": args.trials,
        "seed_base": args.seed_base,
        "max_iterations": args.max_iterations,
        "ablation": args.ablation,
        "judge_backend": args.judge_backend,
        "reasoner_backend": args.reasoner_backend,
        "horizon": args.horizon,
        "stop_on": args.stop_on,
        "model_id": args.model_id,
        "gateway_mode": args.gateway_mode,
        "cassette_path": args.cassette_path,
        "registry_path": args.registry_path,
        "workers": args.workers,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if "tasks" not in doc:
        raise ConfigError("no tasks given; pass --task or a config file")
    return RunConfig.from_mapping(doc)


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    if args.store_out:
        if len(config.tasks) != 1 or len(config.methods) != 1 or config.trials != 1:
            raise ConfigError("--store-out needs exactly one task, one method, and one trial")
        registry = load_task_registry(config.registry_path)
        missing = [t for t in config.tasks if t not in registry]
        if missing:
            raise ConfigError(f"unknown tasks {missing}; registry has {sorted(registry)}")
        judge, reasoner = _make_backends(config)
        rows, store = run_trial(
            registry[config.tasks[0]], config.methods[0], 0, config, judge, reasoner
        )
        from .memory import write_store

        write_store(store, args.store_out)
    else:
        rows = run_experiment(config)
    write_results(rows, args.out)
    errored = sum(int(r["errored"]) for r in rows)
    print(f"wrote {len(rows)} rows to {args.out} ({errored} errored iterations)")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    rows = read_results(args.results)
    report = build_report(rows)
    if args.out:
        write_report(report, args.out)
        print(f"wrote {len(report)} rows to {args.out}")
    if report:
        final_iteration = max(int(r["iteration"]) for r in report)
        print(f"cumulative success rate at iteration {final_iteration}:")
        for row in report:
            if int(row["iteration"]) == final_iteration:
                print(
                    f"  {row['task']:>18} {row['method']:>14} "
                    f"{row['cumulative_successes']:>3}/{row['trials']:>3} "
                    f"rate={row['success_rate']} errored={row['errored_trials']}"
                )
    else:
        print("no rows to report")
    return 0


def _cmd_inspect_store(args: argparse.Namespace) -> int:
    store = read_store(args.store)
    print(f"memory mode: {store.mode}; attempts: {len(store.attempts)}")
    print(render_context(store))
    evidence = visible_evidence(store)
    if evidence.counts:
        print("instruction evidence (successes, failures):")
        for key in sorted(evidence.counts):
            s, f = evidence.counts[key]
            print(f"  {key!r}: {s}, {f}")
    if evidence.blacklisted_objects:
        print(f"avoided objects: {sorted(evidence.blacklisted_objects)}")
    if evidence.substitution_pairs:
        print(f"observed substitutions: {sorted(evidence.substitution_pairs)}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "report":
            return _cmd_report(args)
        return _cmd_inspect_store(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (AuthError, TransportError, CassetteMiss, BackendError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 3
    except (SchemaError, ParseError, ValidationError, OSError) as exc:
        print(f"file error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
