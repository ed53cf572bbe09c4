"""Experience store: ordering, rendering, evidence extraction, persistence."""

from __future__ import annotations

import pytest

from planloop.errors import SchemaError, ValidationError
from planloop.judging import OverallAssessment, SubtaskAssessment
from planloop.memory import (
    MAX_FIELD_CHARS,
    AttemptRecord,
    ExperienceStore,
    StoredSubtask,
    deserialize_store,
    normalize_instruction,
    read_store,
    render_context,
    serialize_store,
    visible_evidence,
    write_store,
)


def sub(instruction, verdict, outcome=None, hyps=None, fixes=None, env=None):
    return StoredSubtask(
        instruction=instruction,
        assessment=SubtaskAssessment(
            verdict=verdict,
            outcome_description=outcome,
            failure_hypotheses=hyps,
            minimal_change_suggestions=fixes,
            success_env_description=env,
        ),
    )


def attempt(i, subtasks, overall=None):
    return AttemptRecord(
        iteration=i,
        plan_texts=tuple(s.instruction for s in subtasks),
        subtasks=tuple(subtasks),
        overall=overall,
    )


def test_store_rejects_unknown_modes():
    with pytest.raises(ValidationError):
        ExperienceStore(mode="photographic")


def test_append_attempt_enforces_strict_ordering():
    store = ExperienceStore(mode="liten")
    store.append_attempt(attempt(1, [sub("put the cube on the plate", True)]))
    with pytest.raises(IndexError, match="does not follow 1 stored attempts"):
        store.append_attempt(attempt(3, [sub("put the cube on the plate", True)]))
    with pytest.raises(IndexError):
        store.append_attempt(attempt(1, [sub("put the cube on the plate", True)]))
    store.append_attempt(attempt(2, [sub("put the cube on the plate", False)]))
    assert [a.iteration for a in store.attempts] == [1, 2]


def test_normalize_instruction_strips_articles_and_case():
    assert normalize_instruction("Put the Blue Cube on an old plate") == "put blue cube on old plate"


# ---------------------------------------------------------------------------
# rendering


def test_render_context_empty_store():
    assert render_context(ExperienceStore(mode="liten")) == "(no prior attempts)"


def test_render_context_full_hierarchy():
    store = ExperienceStore(mode="liten")
    store.append_attempt(
        attempt(
            1,
            [
                sub("put the cube on the plate", True, env="the cube is on the table"),
                sub(
                    "put the can on the cube",
                    False,
                    outcome="the scene did not change",
                    hyps=("the gripper could not grasp the can due to size constraints",),
                    fixes=("avoid moving the can; choose a different object",),
                ),
            ],
            overall=OverallAssessment("stack", "the task 'stack' failed: 1 of 2 subtasks succeeded", False),
        )
    )
    text = render_context(store)
    assert text.splitlines() == [
        "attempt 1:",
        "  subtask 'put the cube on the plate' succeeded",
        "    worked in: the cube is on the table",
        "  subtask 'put the can on the cube' failed",
        "    what happened: the scene did not change",
        "    why it may have failed: the gripper could not grasp the can due to size constraints",
        "    possible fix: avoid moving the can; choose a different object",
        "  overall: the task 'stack' failed: 1 of 2 subtasks succeeded",
    ]


def test_render_context_reflexion_shows_only_the_narrative():
    store = ExperienceStore(mode="reflexion")
    store.append_attempt(
        AttemptRecord(
            iteration=1,
            plan_texts=("put the cube on the plate",),
            subtasks=(),
            overall=OverallAssessment("stack", "attempt 1: tried 1 subtasks. 'put the cube on the plate' appeared to succeed. overall the plan seemed to go well.", True),
        )
    )
    text = render_context(store)
    assert "reflection:" in text
    assert not any(line.startswith("  subtask") for line in text.splitlines())


def test_render_context_caps_long_fields():
    store = ExperienceStore(mode="liten")
    long_env = "x" * (MAX_FIELD_CHARS + 50)
    store.append_attempt(attempt(1, [sub("put the cube on the plate", True, env=long_env)]))
    text = render_context(store)
    assert "…truncated" in text
    assert long_env not in text


# ---------------------------------------------------------------------------
# evidence extraction


def test_evidence_counts_normalize_surface_forms():
    store = ExperienceStore(mode="liten")
    store.append_attempt(attempt(1, [sub("put the cube on the plate", False, outcome="the scene did not change")]))
    store.append_attempt(attempt(2, [sub("Put the cube on a plate", True, env="scene")]))
    evidence = visible_evidence(store)
    assert evidence.counts == {"put cube on plate": (1, 1)}


def test_evidence_blacklists_grip_reach_and_unsteady_objects():
    store = ExperienceStore(mode="liten")
    store.append_attempt(
        attempt(
            1,
            [
                sub(
                    "put the big plate on the cube",
                    False,
                    outcome="the scene did not change",
                    hyps=("the gripper could not grasp the big plate due to size constraints",),
                ),
                sub(
                    "put the egg on the cube",
                    False,
                    outcome="the robot placed the egg only partially on the cube and it fell back onto the table",
                    hyps=("the VLA may lack precise top-down placement abilities when placing the egg onto the cube",),
                ),
                sub(
                    "put the grapes on the shelf",
                    False,
                    outcome="the scene did not change",
                    hyps=("the gripper could not reach the grapes inside the deep bowl due to size constraints",),
                ),
            ],
        )
    )
    evidence = visible_evidence(store)
    assert evidence.blacklisted_objects == {"big plate", "egg", "grapes"}


def test_evidence_collects_bias_substitution_and_crowding():
    store = ExperienceStore(mode="liten")
    store.append_attempt(
        attempt(
            1,
            [
                sub(
                    "put the blue cube on the plate",
                    False,
                    outcome="the robot moved the soup tin onto the plate instead of the blue cube",
                    hyps=(
                        "the policy may be biased toward larger objects and moved the soup tin "
                        "instead of the blue cube when targeting the plate",
                    ),
                ),
                sub(
                    "put the egg on the sponge",
                    False,
                    outcome="the robot placed the egg on the sponge but knocked the banana back onto the table",
                    hyps=("placing the egg likely displaced the banana from the sponge",),
                ),
            ],
        )
    )
    evidence = visible_evidence(store)
    assert evidence.substitution_pairs == {("soup tin", "plate")}
    assert evidence.avoided_pairs == {("blue cube", "plate")}
    assert evidence.crowded_targets == {"sponge"}


def test_evidence_for_reflexion_reads_the_narrative_lines():
    store = ExperienceStore(mode="reflexion")
    store.append_attempt(
        AttemptRecord(
            iteration=1,
            plan_texts=("put the cube on the plate", "put the can on the cube"),
            subtasks=(),
            overall=OverallAssessment(
                "stack",
                "attempt 1: tried 2 subtasks. 'put the cube on the plate' appeared to succeed. "
                "'put the can on the cube' did not change anything. overall some steps accomplished nothing.",
                False,
            ),
        )
    )
    evidence = visible_evidence(store)
    assert evidence.counts == {
        "put cube on plate": (1, 0),
        "put can on cube": (0, 1),
    }
    assert not evidence.blacklisted_objects


def test_evidence_ignores_subtasks_without_assessments():
    store = ExperienceStore(mode="no_feedback")
    store.append_attempt(
        AttemptRecord(
            iteration=1,
            plan_texts=("put the cube on the plate",),
            subtasks=(StoredSubtask("put the cube on the plate", None),),
            overall=None,
        )
    )
    evidence = visible_evidence(store)
    assert evidence.counts == {}
    assert not evidence.blacklisted_objects
    assert not evidence.crowded_targets


# ---------------------------------------------------------------------------
# persistence


def full_store():
    store = ExperienceStore(mode="liten")
    store.append_attempt(
        attempt(
            1,
            [
                sub("put the cube on the plate", True, env="the cube is on the table"),
                sub(
                    "put the can on the cube",
                    False,
                    outcome="the scene did not change",
                    hyps=("the policy did not make progress within the time limit",),
                    fixes=("try an instruction the policy was trained on",),
                ),
            ],
            overall=OverallAssessment("stack", "the task 'stack' failed: 1 of 2 subtasks succeeded", False),
        )
    )
    store.append_attempt(attempt(2, [sub("put the can on the plate", True, env="scene")]))
    return store


def test_store_round_trips_through_json(tmp_path):
    store = full_store()
    path = tmp_path / "store.json"
    write_store(store, path)
    loaded = read_store(path)
    assert loaded.mode == store.mode
    assert loaded.attempts == store.attempts


def test_deserialize_rejects_malformed_documents(tmp_path):
    with pytest.raises(SchemaError):
        deserialize_store({"store_format": 2, "mode": "liten", "attempts": []})
    with pytest.raises(SchemaError, match="memory mode"):
        deserialize_store({"store_format": 1, "mode": "eidetic", "attempts": []})
    with pytest.raises(SchemaError, match="attempts"):
        deserialize_store({"store_format": 1, "mode": "liten", "attempts": "none"})
    with pytest.raises(SchemaError, match="malformed"):
        deserialize_store(
            {"store_format": 1, "mode": "liten", "attempts": [{"iteration": 1}]}
        )
    # iteration gaps are schema errors on load, not crashes
    doc = serialize_store(full_store())
    doc["attempts"][1]["iteration"] = 5
    with pytest.raises(SchemaError, match="does not follow"):
        deserialize_store(doc)


def test_read_store_carries_the_path_in_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(SchemaError) as err:
        read_store(bad)
    assert err.value.path == str(bad)
    with pytest.raises(SchemaError):
        read_store(tmp_path / "missing.json")
