"""In-context experience store accumulated across attempts.

What gets stored depends on the memory mode: the full assessment hierarchy,
positive examples only, one coarse reflection per attempt, or nothing. The
store renders to prompt text and exposes parsed evidence for planning.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import SchemaError, ValidationError
from .judging import OverallAssessment, SubtaskAssessment

__all__ = [
    "STORE_FORMAT",
    "MEMORY_MODES",
    "MAX_FIELD_CHARS",
    "normalize_instruction",
    "StoredSubtask",
    "AttemptRecord",
    "Evidence",
    "ExperienceStore",
    "render_context",
    "visible_evidence",
    "serialize_store",
    "deserialize_store",
    "write_store",
    "read_store",
]

STORE_FORMAT = 1
MEMORY_MODES = ("liten", "positive_icl", "reflexion", "no_feedback")
MAX_FIELD_CHARS = 600

_ARTICLES = re.compile(r"\b(?:the|a|an)\b\s*")
_REFLECTION_LINE = re.compile(r"'(.+?)' (appeared to succeed|did not change anything)\.")
_BLACKLIST_HYPOTHESIS = re.compile(
    r"could not (?:grasp|reach) the (.+?) (?:due to|inside)"
)
_UNSTEADY_HYPOTHESIS = re.compile(
    r"lack precise top-down placement abilities when placing the (.+?) (?:onto|into) the "
)
_BIAS_HYPOTHESIS = re.compile(r"instead of the (.+?) when targeting the (.+)$")
_DISPLACED_HYPOTHESIS = re.compile(r"likely displaced the .+? from the (.+)$")
_SUBSTITUTION_OUTCOME = re.compile(
    r"the robot moved the (.+?) (?:onto|into) the (.+?) instead"
)


def normalize_instruction(text: str) -> str:
    return _ARTICLES.sub("", text.strip().lower()).strip()


@dataclass(frozen=True)
class StoredSubtask:
    instruction: str
    assessment: SubtaskAssessment | None


@dataclass(frozen=True)
class AttemptRecord:
    """One attempt as remembered: the plan, what the judge kept, the wrap-up."""

    iteration: int
    plan_texts: tuple[str, ...]
    subtasks: tuple[StoredSubtask, ...]
    overall: OverallAssessment | None


@dataclass(frozen=True)
class Evidence:
    """Planning-visible digest of the store."""

    counts: dict[str, tuple[int, int]]  # normalized text -> (successes, failures)
    blacklisted_objects: frozenset[str]
    avoided_pairs: frozenset[tuple[str, str]]  # (object name, target name)
    substitution_pairs: frozenset[tuple[str, str]]  # (moved name, target name)
    crowded_targets: frozenset[str] = frozenset()  # targets where a placement displaced something


@dataclass
class ExperienceStore:
    mode: str
    attempts: list[AttemptRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.mode not in MEMORY_MODES:
            raise ValidationError(f"unknown memory mode {self.mode!r}")

    def append_attempt(self, record: AttemptRecord) -> None:
        # attempts arrive strictly in order; a gap or repeat is a caller bug
        if record.iteration != len(self.attempts) + 1:
            raise IndexError(
                f"attempt iteration {record.iteration} does not follow "
                f"{len(self.attempts)} stored attempts"
            )
        self.attempts.append(record)


def _cap(text: str) -> str:
    if len(text) <= MAX_FIELD_CHARS:
        return text
    return text[:MAX_FIELD_CHARS] + "…truncated"


def render_context(store: ExperienceStore, mode: str | None = None) -> str:
    """Prompt text for the accumulated experience, oldest attempt first."""
    mode = store.mode if mode is None else mode
    if not store.attempts:
        return "(no prior attempts)"
    parts: list[str] = []
    for attempt in store.attempts:
        parts.append(f"attempt {attempt.iteration}:")
        if mode == "reflexion":
            if attempt.overall is not None:
                parts.append(f"  reflection: {_cap(attempt.overall.narrative)}")
            continue
        for sub in attempt.subtasks:
            a = sub.assessment
            if a is None:
                parts.append(f"  subtask '{_cap(sub.instruction)}'")
                continue
            status = "succeeded" if a.verdict else "failed"
            parts.append(f"  subtask '{_cap(sub.instruction)}' {status}")
            if a.success_env_description is not None:
                parts.append(f"    worked in: {_cap(a.success_env_description)}")
            if a.outcome_description is not None:
                parts.append(f"    what happened: {_cap(a.outcome_description)}")
            for hyp in a.failure_hypotheses or ():
                parts.append(f"    why it may have failed: {_cap(hyp)}")
            for sug in a.minimal_change_suggestions or ():
                parts.append(f"    possible fix: {_cap(sug)}")
        if attempt.overall is not None:
            parts.append(f"  overall: {_cap(attempt.overall.narrative)}")
    return "\n".join(parts)


def visible_evidence(store: ExperienceStore, mode: str | None = None) -> Evidence:
    """Parse the store into counts, blacklists, and observed substitutions.

    Only text that actually made it into the store is read, so ablations and
    memory modes gate evidence by construction rather than by branching here.
    """
    mode = store.mode if mode is None else mode
    counts: dict[str, list[int]] = {}
    blacklist: set[str] = set()
    avoided: set[tuple[str, str]] = set()
    pairs: set[tuple[str, str]] = set()
    crowded: set[str] = set()

    def bump(text: str, success: bool) -> None:
        key = normalize_instruction(text)
        slot = counts.setdefault(key, [0, 0])
        slot[0 if success else 1] += 1

    for attempt in store.attempts:
        if mode == "reflexion":
            if attempt.overall is not None:
                for text, phrase in _REFLECTION_LINE.findall(attempt.overall.narrative):
                    bump(text, phrase == "appeared to succeed")
            continue
        for sub in attempt.subtasks:
            a = sub.assessment
            if a is None:
                continue
            bump(sub.instruction, a.verdict)
            if a.outcome_description is not None:
                hit = _SUBSTITUTION_OUTCOME.search(a.outcome_description)
                if hit:
                    pairs.add((normalize_instruction(hit.group(1)), normalize_instruction(hit.group(2))))
            for hyp in a.failure_hypotheses or ():
                hit = _BLACKLIST_HYPOTHESIS.search(hyp)
                if hit:
                    blacklist.add(normalize_instruction(hit.group(1)))
                hit = _UNSTEADY_HYPOTHESIS.search(hyp)
                if hit:
                    blacklist.add(normalize_instruction(hit.group(1)))
                hit = _BIAS_HYPOTHESIS.search(hyp)
                if hit:
                    avoided.add(
                        (normalize_instruction(hit.group(1)), normalize_instruction(hit.group(2)))
                    )
                hit = _DISPLACED_HYPOTHESIS.search(hyp)
                if hit:
                    crowded.add(normalize_instruction(hit.group(1)))
    return Evidence(
        counts={k: (v[0], v[1]) for k, v in counts.items()},
        blacklisted_objects=frozenset(blacklist),
        avoided_pairs=frozenset(avoided),
        substitution_pairs=frozenset(pairs),
        crowded_targets=frozenset(crowded),
    )


# ---------------------------------------------------------------------------
# persistence


def _assessment_to_doc(a: SubtaskAssessment | None) -> dict | None:
    if a is None:
        return None
    return {
        "verdict": a.verdict,
        "outcome_description": a.outcome_description,
        "failure_hypotheses": list(a.failure_hypotheses) if a.failure_hypotheses is not None else None,
        "minimal_change_suggestions": (
            list(a.minimal_change_suggestions) if a.minimal_change_suggestions is not None else None
        ),
        "success_env_description": a.success_env_description,
        "backend": a.backend,
    }


def _overall_to_doc(o: OverallAssessment | None) -> dict | None:
    if o is None:
        return None
    return {"task_label": o.task_label, "narrative": o.narrative, "verdict": o.verdict}


def serialize_store(store: ExperienceStore) -> dict:
    return {
        "store_format": STORE_FORMAT,
        "mode": store.mode,
        "attempts": [
            {
                "iteration": att.iteration,
                "plan_texts": list(att.plan_texts),
                "subtasks": [
                    {"instruction": s.instruction, "assessment": _assessment_to_doc(s.assessment)}
                    for s in att.subtasks
                ],
                "overall": _overall_to_doc(att.overall),
            }
            for att in store.attempts
        ],
    }


def write_store(store: ExperienceStore, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(serialize_store(store), indent=2) + "\n", encoding="utf-8"
    )


def _bad(message: str, path: str | None) -> SchemaError:
    return SchemaError(message, path=path)


def deserialize_store(doc: dict, path: str | None = None) -> ExperienceStore:
    if not isinstance(doc, dict):
        raise _bad("store document must be a mapping", path)
    if doc.get("store_format") != STORE_FORMAT:
        raise _bad(f"store_format must be {STORE_FORMAT}", path)
    mode = doc.get("mode")
    if mode not in MEMORY_MODES:
        raise _bad(f"unknown memory mode {mode!r}", path)
    store = ExperienceStore(mode=mode)
    attempts = doc.get("attempts")
    if not isinstance(attempts, list):
        raise _bad("attempts must be a list", path)
    for i, att in enumerate(attempts):
        if not isinstance(att, dict):
            raise _bad(f"attempt {i} must be a mapping", path)
        try:
            subtasks = tuple(
                StoredSubtask(
                    instruction=str(s["instruction"]),
                    assessment=_assessment_from_doc(s["assessment"]),
                )
                for s in att["subtasks"]
            )
            record = AttemptRecord(
                iteration=int(att["iteration"]),
                plan_texts=tuple(str(t) for t in att["plan_texts"]),
                subtasks=subtasks,
                overall=_overall_from_doc(att["overall"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise _bad(f"attempt {i} is malformed: {exc}", path) from exc
        try:
            store.append_attempt(record)
        except IndexError as exc:
            raise _bad(str(exc), path) from exc
    return store


def _assessment_from_doc(doc: dict | None) -> SubtaskAssessment | None:
    if doc is None:
        return None
    return SubtaskAssessment(
        verdict=bool(doc["verdict"]),
        outcome_description=doc.get("outcome_description"),
        failure_hypotheses=(
            tuple(doc["failure_hypotheses"]) if doc.get("failure_hypotheses") is not None else None
        ),
        minimal_change_suggestions=(
            tuple(doc["minimal_change_suggestions"])
            if doc.get("minimal_change_suggestions") is not None
            else None
        ),
        success_env_description=doc.get("success_env_description"),
        backend=str(doc.get("backend", "oracle")),
    )


def _overall_from_doc(doc: dict | None) -> OverallAssessment | None:
    if doc is None:
        return None
    return OverallAssessment(
        task_label=str(doc["task_label"]),
        narrative=str(doc["narrative"]),
        verdict=bool(doc["verdict"]),
    )


def read_store(path: str | Path) -> ExperienceStore:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"unreadable store: {exc}", path=str(path)) from exc
    return deserialize_store(doc, path=str(path))
