"""Record the demo cassette used by the replay tests.

Runs one liten trial on the stacking task with scripted model replies piped
through the gateway in record mode, so the saved cassette replays a full
two-iteration loop without any network. Both plans fail the task on purpose:
the second step of each targets a narrow top the policy never lands on.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from planloop.gateway import API_KEY_VAR, LlmGateway
from planloop.judging import LlmJudge
from planloop.orchestrate import RunConfig, run_trial
from planloop.reasoning import LlmReasoner
from planloop.tasks import load_task_registry

CASSETTE_PATH = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "demo_cassette.json"
MODEL_ID = "gpt-4o-mini"

REPLIES = [
    # iteration 1: plan, then verdict/outcome/failure for each step, then overall
    "1. put the blue block on top of the big purple plate\n"
    "2. put the green beans can on top of the blue block",
    "no",
    "the blue block slid off the plate and landed back on the table",
    json.dumps(
        {
            "hypotheses": ["the block is too light for a steady top-down release"],
            "suggestions": ["try a heavier object with a flatter base"],
        }
    ),
    "no",
    "the can never moved; the gripper hovered and gave up",
    json.dumps(
        {
            "hypotheses": ["the policy refuses placements onto narrow block tops"],
            "suggestions": ["pick a wider support such as the plate"],
        }
    ),
    "VERDICT: no\nneither placement stuck, the stack never grew past one level.",
    # iteration 2: first step judged a success, second still fails
    "1. put the yellow cylinder block on top of the big purple plate\n"
    "2. put the green beans can on top of the yellow cylinder block",
    "yes",
    "the yellow cylinder block sat centered on the big purple plate",
    "no",
    "the can never left its spot on the table",
    json.dumps(
        {
            "hypotheses": ["the policy cannot place cans onto narrow cylinder tops"],
            "suggestions": ["stack the can on the plate or another can instead"],
        }
    ),
    "VERDICT: no\nthe tower reached two levels and stalled there.",
]


def scripted_transport(replies: list[str]):
    queue = list(replies)

    def transport(url, headers, payload):
        if not queue:
            raise RuntimeError("script ran out of replies; the call sequence changed")
        content = queue.pop(0)
        return 200, json.dumps({"choices": [{"message": {"content": content}}]})

    return transport, queue


def main() -> None:
    os.environ.setdefault(API_KEY_VAR, "local-demo-key")  # record mode checks it
    CASSETTE_PATH.parent.mkdir(parents=True, exist_ok=True)
    if CASSETTE_PATH.exists():
        CASSETTE_PATH.unlink()

    transport, queue = scripted_transport(REPLIES)
    gateway = LlmGateway(
        mode="record",
        cassette_path=str(CASSETTE_PATH),
        transport=transport,
        sleeper=lambda _: None,
    )
    config = RunConfig(
        tasks=("stacking",),
        methods=("liten",),
        trials=1,
        max_iterations=2,
        judge_backend="llm",
        reasoner_backend="llm",
        gateway_mode="record",
        cassette_path=str(CASSETTE_PATH),
    )
    task = load_task_registry(None)["stacking"]
    rows, store = run_trial(
        task, "liten", 0, config, LlmJudge(gateway, MODEL_ID), LlmReasoner(gateway, MODEL_ID)
    )

    if queue:
        raise SystemExit(f"{len(queue)} scripted replies were never consumed")
    if [r["success"] for r in rows] != [0, 0]:
        raise SystemExit(f"expected two failed iterations, got {rows}")
    if len(store.attempts) != 2:
        raise SystemExit(f"expected two stored attempts, got {len(store.attempts)}")
    print(f"recorded {len(gateway.cassette.entries)} exchanges to {CASSETTE_PATH}")


if __name__ == "__main__":
    main()
