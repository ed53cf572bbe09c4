"""Structured assessment of executed plans.

Per subtask the chain asks: did it succeed? what happened instead? why might
that have happened (with minimal change suggestions)? — or, on success, what
did the environment look like. An overall assessment wraps the subtask
verdicts. Ablation levels suppress later chain steps. The oracle backend
reads ground-truth events; the language-model backend sees only the first and
last observations per subtask.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import BackendError, ValidationError
from .gateway import ChatRequest, LlmGateway
from .policy import SubtaskRecord
from .tasks import TaskSpec, goal_satisfied
from .templates import load_template
from .world import Observation, scene_from_entries

__all__ = [
    "ABLATION_FULL",
    "ABLATION_NO_FAILURE_REASONING",
    "ABLATION_SUCCESS_ONLY",
    "ABLATION_LEVELS",
    "MAX_HYPOTHESES",
    "SubtaskAssessment",
    "OverallAssessment",
    "AttemptInput",
    "OracleJudge",
    "LlmJudge",
    "run_assessment",
    "make_reflection",
]

ABLATION_FULL = "full"
ABLATION_NO_FAILURE_REASONING = "no_failure_reasoning"
ABLATION_SUCCESS_ONLY = "success_only"
ABLATION_LEVELS = (ABLATION_FULL, ABLATION_NO_FAILURE_REASONING, ABLATION_SUCCESS_ONLY)

MAX_HYPOTHESES = 4


@dataclass(frozen=True)
class SubtaskAssessment:
    """Judge output for one subtask; later fields absent when gated off."""

    verdict: bool
    outcome_description: str | None = None
    failure_hypotheses: tuple[str, ...] | None = None
    minimal_change_suggestions: tuple[str, ...] | None = None
    success_env_description: str | None = None
    backend: str = "oracle"


@dataclass(frozen=True)
class OverallAssessment:
    """Judge output for the whole attempt."""

    task_label: str
    narrative: str
    verdict: bool


@dataclass(frozen=True)
class AttemptInput:
    """Everything the judge may look at for one executed plan."""

    task: TaskSpec
    records: tuple[SubtaskRecord, ...]
    first_obs: Observation  # scene at the start of the attempt


# ---------------------------------------------------------------------------
# event-log digging shared by the oracle backend


def _event_by_kind(record: SubtaskRecord, kind: str):
    for event in record.events:
        if event.kind == kind:
            return event
    return None


def _names(record: SubtaskRecord) -> dict[str, str]:
    return record.first_obs.names_map()


def _intended_object(record: SubtaskRecord) -> str | None:
    sub = _event_by_kind(record, "substitute_target")
    if sub is not None:
        return sub.detail_map().get("intended")
    for event in record.events:
        if event.kind in ("grasp", "no_op", "timeout"):
            return event.subject
    return None


def _placement(record: SubtaskRecord) -> tuple[str | None, str | None, str]:
    """(moved object, target, preposition) from the place event, if any."""
    place = _event_by_kind(record, "place")
    if place is None:
        return None, None, "on"
    detail = place.detail_map()
    prep = "into" if detail.get("support") == "in" else "onto"
    return place.subject, detail.get("target"), prep


# ---------------------------------------------------------------------------
# oracle backend


class OracleJudge:
    """Deterministic judge that reads the ground-truth record.

    Hypothesis and suggestion strings come from a fixed canonical vocabulary
    so downstream heuristic planning stays deterministic.
    """

    name = "oracle"

    def judge_success(self, record: SubtaskRecord) -> bool:
        return record.gt_outcome.kind == "success"

    def judge_outcome(self, record: SubtaskRecord) -> str:
        kind = record.gt_outcome.kind
        names = _names(record)
        if kind == "wrong_object":
            moved, target, prep = _placement(record)
            intended = _intended_object(record)
            return (
                f"the robot moved the {names.get(moved, moved)} {prep} the "
                f"{names.get(target, target)} instead of the {names.get(intended, intended)}"
            )
        if kind == "partial_place_then_fall":
            moved, target, _ = _placement(record)
            return (
                f"the robot placed the {names.get(moved, moved)} only partially on the "
                f"{names.get(target, target)} and it fell back onto the table"
            )
        if kind == "knock_off_occupant":
            moved, target, _ = _placement(record)
            knock = _event_by_kind(record, "knock_off")
            evicted = knock.subject if knock is not None else None
            return (
                f"the robot placed the {names.get(moved, moved)} on the "
                f"{names.get(target, target)} but knocked the {names.get(evicted, evicted)} "
                "back onto the table"
            )
        return "the scene did not change"

    def judge_failure_reason(
        self, record: SubtaskRecord, outcome_description: str
    ) -> tuple[tuple[str, ...], tuple[str, ...]]:
        kind = record.gt_outcome.kind
        reason = record.gt_outcome.reason
        names = _names(record)
        intended = _intended_object(record)
        obj = names.get(intended, intended)
        if kind == "wrong_object":
            moved, target, _ = _placement(record)
            sub = names.get(moved, moved)
            tgt = names.get(target, target)
            hypotheses = (
                f"the policy may be biased toward larger objects and moved the {sub} "
                f"instead of the {obj} when targeting the {tgt}",
            )
            suggestions = (
                f"instruct the {sub} directly if moving it also serves the task",
                f"use a more specific description of the {obj}",
            )
        elif kind == "partial_place_then_fall":
            moved, target, prep = _placement(record)
            tgt = names.get(target, target)
            hypotheses = (
                f"the VLA may lack precise top-down placement abilities when placing the {obj} "
                f"{prep} the {tgt}",
            )
            suggestions = (f"avoid placements that move the {obj}; pick a steadier object",)
        elif kind == "knock_off_occupant":
            moved, target, _ = _placement(record)
            knock = _event_by_kind(record, "knock_off")
            evicted = names.get(knock.subject, knock.subject) if knock is not None else "occupant"
            hypotheses = (
                f"placing the {names.get(moved, moved)} likely displaced the {evicted} "
                f"from the {names.get(target, target)}",
            )
            suggestions = ("place objects on unoccupied surfaces first",)
        elif kind == "no_op" and reason == "grip":
            hypotheses = (f"the gripper could not grasp the {obj} due to size constraints",)
            suggestions = (f"avoid moving the {obj}; choose a different object",)
        elif kind == "no_op" and reason == "reach":
            container = None
            for oid, sup in record.first_obs.entries:
                if oid == intended and sup[0] == "in":
                    container = names.get(sup[1], sup[1])
            hypotheses = (
                f"the gripper could not reach the {obj} inside the {container} "
                "due to size constraints",
            )
            suggestions = ("move an object from a shallower or wider container instead",)
        else:  # timeouts, parse/grounding gaps, generic policy stalls
            hypotheses = ("the policy did not make progress within the time limit",)
            suggestions = ("try an instruction the policy was trained on",)
        return hypotheses[:MAX_HYPOTHESES], suggestions

    def judge_success_env(self, record: SubtaskRecord) -> str:
        return record.first_obs.text()

    def judge_overall(
        self, attempt: AttemptInput, assessments: tuple[SubtaskAssessment, ...]
    ) -> OverallAssessment:
        if not attempt.records:
            return OverallAssessment(attempt.task.label, "no subtasks executed", False)
        final_scene = scene_from_entries(attempt.records[-1].last_obs.entries)
        initial_scene = scene_from_entries(attempt.first_obs.entries)
        verdict = goal_satisfied(attempt.task, final_scene, initial_scene)
        ok = sum(1 for a in assessments if a.verdict)
        bits = [
            f"the task '{attempt.task.label}' {'succeeded' if verdict else 'failed'}: "
            f"{ok} of {len(assessments)} subtasks succeeded"
        ]
        for i, (record, assessment) in enumerate(zip(attempt.records, assessments), start=1):
            if not assessment.verdict:
                bits.append(f"subtask {i} ('{record.instruction}') failed")
        return OverallAssessment(attempt.task.label, "; ".join(bits), verdict)


# ---------------------------------------------------------------------------
# language-model backend


def _parse_yes_no(text: str) -> bool:
    head = text.strip().lower()
    if head.startswith("yes"):
        return True
    if head.startswith("no"):
        return False
    raise BackendError(f"judge backend returned neither yes nor no: {text[:80]!r}")


class LlmJudge:
    """Judge backed by a chat model; consumes only first/last observations."""

    name = "llm"

    def __init__(self, gateway: LlmGateway, model_id: str) -> None:
        self.gateway = gateway
        self.model_id = model_id

    def _ask(self, template: str, **fields: str) -> str:
        prompt = load_template(template).format(**fields)
        request = ChatRequest(
            model_id=self.model_id,
            messages=(("user", prompt),),
            temperature=0.0,  # judging is deterministic
        )
        return self.gateway.complete(request)

    def judge_success(self, record: SubtaskRecord) -> bool:
        reply = self._ask(
            "judge_success.v1.txt",
            instruction=record.instruction,
            first_obs=record.first_obs.text(),
            last_obs=record.last_obs.text(),
        )
        return _parse_yes_no(reply)

    def judge_outcome(self, record: SubtaskRecord) -> str:
        return self._ask(
            "judge_outcome.v1.txt",
            instruction=record.instruction,
            first_obs=record.first_obs.text(),
            last_obs=record.last_obs.text(),
        ).strip()

    def judge_failure_reason(
        self, record: SubtaskRecord, outcome_description: str
    ) -> tuple[tuple[str, ...], tuple[str, ...]]:
        reply = self._ask(
            "judge_failure.v1.txt",
            instruction=record.instruction,
            outcome=outcome_description,
            first_obs=record.first_obs.text(),
        )
        try:
            body = json.loads(reply)
            hypotheses = tuple(str(h) for h in body["hypotheses"])
            suggestions = tuple(str(s) for s in body.get("suggestions", []))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise BackendError(f"failure-reason reply was not the expected JSON: {exc}") from exc
        return hypotheses[:MAX_HYPOTHESES], suggestions

    def judge_success_env(self, record: SubtaskRecord) -> str:
        return self._ask(
            "judge_success_env.v1.txt",
            instruction=record.instruction,
            first_obs=record.first_obs.text(),
        ).strip()

    def judge_overall(
        self, attempt: AttemptInput, assessments: tuple[SubtaskAssessment, ...]
    ) -> OverallAssessment:
        if not attempt.records:
            return OverallAssessment(attempt.task.label, "no subtasks executed", False)
        summary = "\n".join(
            f"subtask {i} ('{r.instruction}'): {'succeeded' if a.verdict else 'failed'}"
            for i, (r, a) in enumerate(zip(attempt.records, assessments), start=1)
        )
        reply = self._ask(
            "judge_overall.v1.txt",
            task=attempt.task.label,
            subtasks=summary,
            last_obs=attempt.records[-1].last_obs.text(),
        )
        lines = reply.strip().splitlines()
        if not lines or not lines[0].lower().startswith("verdict:"):
            raise BackendError(f"overall reply missing VERDICT line: {reply[:80]!r}")
        verdict = _parse_yes_no(lines[0].split(":", 1)[1])
        narrative = "\n".join(lines[1:]).strip() or lines[0]
        return OverallAssessment(attempt.task.label, narrative, verdict)


# ---------------------------------------------------------------------------
# assessment driver


def run_assessment(
    attempt: AttemptInput, ablation: str, judge
) -> tuple[tuple[SubtaskAssessment, ...], OverallAssessment]:
    """Run the gated chain for each subtask, then the overall assessment.

    Gating: the outcome step fires only for failed subtasks when the ablation
    keeps it; failure reasoning additionally requires the full chain; the
    environment description fires only for successes.
    """
    if ablation not in ABLATION_LEVELS:
        raise ValidationError(f"unknown ablation level {ablation!r}")
    assessments: list[SubtaskAssessment] = []
    for i, record in enumerate(attempt.records):
        try:
            verdict = judge.judge_success(record)
            outcome_description = None
            hypotheses = None
            suggestions = None
            success_env = None
            if verdict:
                success_env = judge.judge_success_env(record)
            elif ablation != ABLATION_SUCCESS_ONLY:
                outcome_description = judge.judge_outcome(record)
                if ablation == ABLATION_FULL:
                    hypotheses, suggestions = judge.judge_failure_reason(
                        record, outcome_description
                    )
        except BackendError as exc:
            raise BackendError(f"subtask {i + 1} ({record.instruction!r}): {exc}") from exc
        assessments.append(
            SubtaskAssessment(
                verdict=verdict,
                outcome_description=outcome_description,
                failure_hypotheses=hypotheses,
                minimal_change_suggestions=suggestions,
                success_env_description=success_env,
                backend=judge.name,
            )
        )
    overall = judge.judge_overall(attempt, tuple(assessments))
    return tuple(assessments), overall


# ---------------------------------------------------------------------------
# coarse reflection baseline


def make_reflection(attempt: AttemptInput, iteration_index: int) -> OverallAssessment:
    """One free-form reflection from the raw event log, bypassing the chain.

    Reads the concatenated coarse events the way an unstructured summarizer
    would: any placement event looks like success, so partial placements,
    substitutions, and knock-offs are routinely misread as completed subtasks.
    """
    seemed: list[tuple[str, bool]] = []
    for record in attempt.records:
        placed = any(event.kind == "place" for event in record.events)
        seemed.append((record.instruction, placed))
    if not seemed:
        return OverallAssessment(attempt.task.label, "no subtasks executed", False)
    parts = [
        f"attempt {iteration_index}: tried {len(seemed)} subtasks."
    ]
    for text, ok in seemed:
        parts.append(f"'{text}' {'appeared to succeed' if ok else 'did not change anything'}.")
    all_ok = all(ok for _, ok in seemed)
    parts.append(
        "overall the plan seemed to go well." if all_ok else "overall some steps accomplished nothing."
    )
    return OverallAssessment(attempt.task.label, " ".join(parts), all_ok)
