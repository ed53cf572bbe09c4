"""Language-conditioned manipulation policy mock.

Grounds short English placement instructions against the roster by lexical
overlap (with a size-class bias that reproduces the large-object preference of
the underlying policy), then samples an outcome from the hidden affordance
table. Never aborts a run: anything the policy cannot parse, ground, or match
becomes a diagnostic NO_OP record.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import NoRuleMatch, UnparseableInstruction, ValidationError
from .world import (
    AffordanceTable,
    GroundedAction,
    Observation,
    ObjectSpec,
    Outcome,
    SceneState,
    SimEvent,
    apply_outcome,
    copy_scene,
    render_observation,
    sample_outcome,
)

__all__ = [
    "DEFAULT_HORIZON",
    "SubtaskInstruction",
    "Grounding",
    "SubtaskRecord",
    "ground_instruction",
    "execute_subtask",
    "wire_request",
    "wire_response",
    "record_from_wire",
]

DEFAULT_HORIZON = 300
MAX_INSTRUCTION_CHARS = 200

# Lexical bonus per size class; larger objects soak up grounding attention.
SIZE_BONUS = {"small": 0.05, "medium": 0.15, "large": 0.25}

# Surface synonyms folded into object token sets before overlap scoring.
SHAPE_SYNONYMS = {
    "cube": "block",
    "tin": "can",
    "dish": "plate",
}

_VERB_FORMS = (
    ("put_on", re.compile(r"^\s*(?:put|place)\s+(?:the\s+)?(.+?)\s+(?:on\s+top\s+of|onto|on|into|in)\s+(?:the\s+)?(.+?)\s*\.?\s*$", re.IGNORECASE)),
    ("move_to", re.compile(r"^\s*move\s+(?:the\s+)?(.+?)\s+(?:to|into|onto|on)\s+(?:the\s+)?(.+?)\s*\.?\s*$", re.IGNORECASE)),
)


@dataclass(frozen=True)
class SubtaskInstruction:
    """One short imperative sentence handed to the policy."""

    text: str

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValidationError("instruction text must be non-empty")
        if len(self.text) > MAX_INSTRUCTION_CHARS:
            raise ValidationError(f"instruction text longer than {MAX_INSTRUCTION_CHARS} chars")


@dataclass(frozen=True)
class Grounding:
    """Instruction resolved to ids, with per-object attention scores."""

    action_kind: str
    object_id: str | None  # None when unresolved
    target_id: str | None
    attention: tuple[tuple[str, float], ...]

    def attention_map(self) -> dict[str, float]:
        return dict(self.attention)


@dataclass(frozen=True)
class SubtaskRecord:
    """Ground-truth trace of executing one instruction.

    The event log and gt_outcome are reserved for the oracle judge and the
    coarse reflection baseline; language-model judges see only the
    observations.
    """

    instruction: str
    first_obs: Observation
    last_obs: Observation
    events: tuple[SimEvent, ...]
    gt_outcome: Outcome
    steps_used: int


def _tokens(phrase: str) -> list[str]:
    words = re.findall(r"[a-z0-9]+", phrase.lower())
    return [SHAPE_SYNONYMS.get(w, w) for w in words if w not in ("the", "a", "an")]


def _object_vocab(spec: ObjectSpec) -> set[str]:
    vocab = set(_tokens(spec.name))
    vocab.add(spec.color.lower())
    vocab.add(spec.shape.lower())
    vocab.update(_tokens(spec.shape))
    return vocab


def _score_phrase(phrase: str, objects: dict[str, ObjectSpec], biased: bool) -> dict[str, float]:
    words = _tokens(phrase)
    scores: dict[str, float] = {}
    for oid, spec in objects.items():
        vocab = _object_vocab(spec)
        overlap = sum(1 for w in words if w in vocab) / max(len(words), 1)
        score = overlap
        if biased:
            score += SIZE_BONUS[spec.size_class]
        scores[oid] = round(score, 6)
    return scores


def ground_instruction(
    instruction: SubtaskInstruction, objects: dict[str, ObjectSpec]
) -> Grounding:
    """Resolve instruction text to (action kind, object, target) plus attention.

    Raises UnparseableInstruction when no verb form matches. Returns an
    UNRESOLVED grounding (ids of None) when a reference shares no token with
    any roster object.
    """
    text = instruction.text
    for kind, pattern in _VERB_FORMS:
        match = pattern.match(text)
        if match:
            obj_phrase, tgt_phrase = match.group(1), match.group(2)
            obj_overlap = _score_phrase(obj_phrase, objects, biased=False)
            attention = _score_phrase(obj_phrase, objects, biased=True)
            tgt_overlap = _score_phrase(tgt_phrase, objects, biased=False)

            object_id = None
            if any(v > 0.0 for v in obj_overlap.values()):
                object_id = max(attention, key=lambda oid: (attention[oid], oid))
            target_id = None
            if any(v > 0.0 for v in tgt_overlap.values()):
                target_id = max(tgt_overlap, key=lambda oid: (tgt_overlap[oid], oid))
            if target_id is not None and target_id == object_id:
                target_id = None  # self-placement never grounds

            return Grounding(
                action_kind=kind,
                object_id=object_id,
                target_id=target_id,
                attention=tuple(sorted(attention.items())),
            )
    raise UnparseableInstruction(f"no verb form recognized in {text!r}")


NO_OP_DIAG_COST = 300


def _diagnostic_record(
    instruction: SubtaskInstruction,
    scene: SceneState,
    objects: dict[str, ObjectSpec],
    reason: str,
    horizon: int,
) -> tuple[SceneState, SubtaskRecord]:
    obs = render_observation(scene, objects)
    subject = next(iter(objects), "scene")
    event = SimEvent("no_op", subject, min(NO_OP_DIAG_COST, horizon), (("reason", reason),))
    record = SubtaskRecord(
        instruction=instruction.text,
        first_obs=obs,
        last_obs=obs,
        events=(event,),
        gt_outcome=Outcome("no_op", reason=reason),
        steps_used=event.step_cost,
    )
    return copy_scene(scene), record


def execute_subtask(
    instruction: SubtaskInstruction,
    scene: SceneState,
    table: AffordanceTable,
    rng,
    horizon: int = DEFAULT_HORIZON,
) -> tuple[SceneState, SubtaskRecord]:
    """Run one instruction against the hidden table and record what happened.

    The arm returns to home before each subtask. If the sampled outcome's
    event costs would exceed the horizon the subtask times out: the scene is
    left untouched and a single timeout event is recorded.
    """
    if horizon < 1:
        raise ValidationError("horizon must be at least 1")
    objects = table.objects
    start = copy_scene(scene)
    start.arm_home = True  # reset to home between subtasks

    first_obs = render_observation(start, objects)

    try:
        grounding = ground_instruction(instruction, objects)
    except UnparseableInstruction:
        return _diagnostic_record(instruction, start, objects, "parse", horizon)
    if grounding.object_id is None or grounding.target_id is None:
        return _diagnostic_record(instruction, start, objects, "grounding", horizon)

    action = GroundedAction(
        kind=grounding.action_kind,
        object_id=grounding.object_id,
        target_id=grounding.target_id,
        attention=grounding.attention,
    )
    try:
        outcome = sample_outcome(table, action, start, rng)
    except NoRuleMatch:
        return _diagnostic_record(instruction, start, objects, "no_rule", horizon)

    new_scene, events, effective = apply_outcome(start, objects, action, outcome)
    total_cost = sum(e.step_cost for e in events)
    if total_cost > horizon:
        timeout_event = SimEvent("timeout", action.object_id, horizon, (("reason", "timeout"),))
        record = SubtaskRecord(
            instruction=instruction.text,
            first_obs=first_obs,
            last_obs=first_obs,
            events=(timeout_event,),
            gt_outcome=Outcome("no_op", reason="timeout"),
            steps_used=horizon,
        )
        return start, record

    last_obs = render_observation(new_scene, objects)
    record = SubtaskRecord(
        instruction=instruction.text,
        first_obs=first_obs,
        last_obs=last_obs,
        events=events,
        gt_outcome=effective,
        steps_used=total_cost,
    )
    return new_scene, record


# ---------------------------------------------------------------------------
# policy endpoint wire format
#
# A remote policy can replace this mock behind the same contract:
#   request:  {"instruction": str, "observation": observation_to_wire(...)}
#   response: {"record": record_to_wire(...)}  mirroring SubtaskRecord.


def observation_to_wire(obs: Observation) -> dict:
    return {
        "mode": obs.mode,
        "names": [[oid, name] for oid, name in obs.names],
        "entries": [[oid, list(sup)] for oid, sup in obs.entries],
        "lines": list(obs.lines),
    }


def observation_from_wire(doc: dict) -> Observation:
    return Observation(
        mode=str(doc["mode"]),
        names=tuple((str(a), str(b)) for a, b in doc["names"]),
        entries=tuple((str(oid), (str(sup[0]), None if sup[1] is None else str(sup[1]))) for oid, sup in doc["entries"]),
        lines=tuple(str(line) for line in doc["lines"]),
    )


def wire_request(instruction: SubtaskInstruction, obs: Observation) -> dict:
    return {"instruction": instruction.text, "observation": observation_to_wire(obs)}


def wire_response(record: SubtaskRecord) -> dict:
    return {
        "record": {
            "instruction": record.instruction,
            "first_obs": observation_to_wire(record.first_obs),
            "last_obs": observation_to_wire(record.last_obs),
            "events": [
                {
                    "kind": e.kind,
                    "subject": e.subject,
                    "step_cost": e.step_cost,
                    "detail": {k: v for k, v in e.detail},
                }
                for e in record.events
            ],
            "gt_outcome": {
                "kind": record.gt_outcome.kind,
                "substitute": record.gt_outcome.substitute,
                "reason": record.gt_outcome.reason,
            },
            "steps_used": record.steps_used,
        }
    }


def record_from_wire(doc: dict) -> SubtaskRecord:
    body = doc["record"]
    return SubtaskRecord(
        instruction=str(body["instruction"]),
        first_obs=observation_from_wire(body["first_obs"]),
        last_obs=observation_from_wire(body["last_obs"]),
        events=tuple(
            SimEvent(
                kind=str(e["kind"]),
                subject=str(e["subject"]),
                step_cost=int(e["step_cost"]),
                detail=tuple(sorted((str(k), str(v)) for k, v in e["detail"].items())),
            )
            for e in body["events"]
        ),
        gt_outcome=Outcome(
            kind=str(body["gt_outcome"]["kind"]),
            substitute=body["gt_outcome"]["substitute"],
            reason=body["gt_outcome"]["reason"],
        ),
        steps_used=int(body["steps_used"]),
    )
