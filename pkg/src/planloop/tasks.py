"""Task definitions: goal predicates, layout variation, and the task registry."""

from __future__ import annotations

import copy
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import yaml

from .errors import ParseError, UnknownGoal, ValidationError
from .scenario import read_scenario_file
from .world import SceneState, chain_length, scene_children, stable_rng

__all__ = [
    "GrammarSpec",
    "TaskSpec",
    "load_task_registry",
    "default_registry_path",
    "goal_satisfied",
    "initial_variation",
    "GOAL_IDS",
    "VARIATION_IDS",
]


@dataclass(frozen=True)
class GrammarSpec:
    """Instruction grammar one task exposes to the planner and the policy."""

    object_ids: tuple[str, ...]
    target_ids: tuple[str, ...]
    container_target_ids: tuple[str, ...]
    canonical_form: str  # e.g. "put the {object} on top of the {target}"
    alternate_form: str  # surface rephrasing of the same grounded action


@dataclass(frozen=True)
class TaskSpec:
    """One benchmark task: scenario, goal, variation rule and grammar."""

    name: str
    label: str
    scenario_path: str
    goal_id: str
    variation_id: str
    grammar: GrammarSpec
    exemplars: tuple[str, ...]


# ---------------------------------------------------------------------------
# goal predicates


def _stack_of_three(scene: SceneState, initial: SceneState) -> bool:
    return any(chain_length(scene, oid) >= 3 for oid in scene.supports)


def _empty_two_bowls(scene: SceneState, initial: SceneState) -> bool:
    emptied = 0
    for oid in initial.supports:
        had = scene_children(initial, oid)
        if had and not scene_children(scene, oid):
            emptied += 1
    return emptied >= 2


def _max_three_on_table(scene: SceneState, initial: SceneState) -> bool:
    on_table = sum(1 for sup in scene.supports.values() if sup[0] == "table")
    return on_table <= 3


_GOALS = {
    "stack_of_three": _stack_of_three,
    "empty_two_bowls": _empty_two_bowls,
    "max_three_on_table": _max_three_on_table,
}
GOAL_IDS = tuple(sorted(_GOALS))


def goal_satisfied(task: TaskSpec, scene: SceneState, initial_scene: SceneState) -> bool:
    """Evaluate the task's goal predicate on a scene.

    ``initial_scene`` is the trial's starting layout; the emptying goal is
    defined relative to which containers initially held anything.
    """
    try:
        predicate = _GOALS[task.goal_id]
    except KeyError:
        raise UnknownGoal(f"task {task.name!r} references unknown goal {task.goal_id!r}") from None
    return predicate(scene, initial_scene)


# ---------------------------------------------------------------------------
# layout variation


def _shuffle_table_order(doc: dict, rng) -> dict:
    """Permute the roster listing order; placements themselves are unchanged."""
    doc = copy.deepcopy(doc)
    objects = list(doc.get("objects", []))
    rng.shuffle(objects)
    doc["objects"] = objects
    return doc


def _shuffle_container_contents(doc: dict, rng) -> dict:
    """Permute which item starts in which initially-filled container."""
    doc = copy.deepcopy(doc)
    supports = dict(doc.get("initial_supports", {}))
    filled = [(oid, sup) for oid, sup in supports.items() if isinstance(sup, dict) and "in" in sup]
    containers = [sup["in"] for _, sup in filled]
    rng.shuffle(containers)
    for (oid, _), container in zip(filled, containers):
        supports[oid] = {"in": container}
    doc["initial_supports"] = supports
    return doc


_VARIATIONS = {
    "shuffle_table_order": _shuffle_table_order,
    "shuffle_container_contents": _shuffle_container_contents,
}
VARIATION_IDS = tuple(sorted(_VARIATIONS))


def initial_variation(task: TaskSpec, trial_seed: int) -> dict:
    """Scenario document for one trial; seed 0 is the canonical layout."""
    doc = read_scenario_file(task.scenario_path)
    if trial_seed == 0:
        return doc
    try:
        vary = _VARIATIONS[task.variation_id]
    except KeyError:
        raise ValidationError(
            f"task {task.name!r} references unknown variation {task.variation_id!r}"
        ) from None
    return vary(doc, stable_rng("variation", task.name, trial_seed))


# ---------------------------------------------------------------------------
# registry


def default_registry_path() -> Path:
    return Path(str(resources.files("planloop") / "scenarios" / "registry.yaml"))


def load_task_registry(path: str | Path | None = None) -> dict[str, TaskSpec]:
    """Read the task registry file into TaskSpec values keyed by task name."""
    registry_path = Path(path) if path is not None else default_registry_path()
    try:
        doc = yaml.safe_load(registry_path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ParseError(f"cannot read task registry {registry_path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"task registry {registry_path} is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != 1:
        raise ValidationError("task registry must be a mapping with format: 1")
    tasks: dict[str, TaskSpec] = {}
    for name, entry in (doc.get("tasks") or {}).items():
        if not isinstance(entry, dict):
            raise ValidationError(f"task {name!r}: entry must be a mapping")
        grammar_doc = entry.get("grammar")
        if not isinstance(grammar_doc, dict):
            raise ValidationError(f"task {name!r}: missing grammar section")
        grammar = GrammarSpec(
            object_ids=tuple(grammar_doc.get("objects", [])),
            target_ids=tuple(grammar_doc.get("targets", [])),
            container_target_ids=tuple(grammar_doc.get("container_targets", [])),
            canonical_form=str(grammar_doc.get("canonical", "")),
            alternate_form=str(grammar_doc.get("alternate", "")),
        )
        for form in (grammar.canonical_form, grammar.alternate_form):
            if "{object}" not in form or "{target}" not in form:
                raise ValidationError(f"task {name!r}: grammar form {form!r} lacks placeholders")
        goal_id = str(entry.get("goal", ""))
        if goal_id not in _GOALS:
            raise UnknownGoal(f"task {name!r} references unknown goal {goal_id!r}")
        variation_id = str(entry.get("variation", ""))
        if variation_id not in _VARIATIONS:
            raise ValidationError(f"task {name!r}: unknown variation {variation_id!r}")
        scenario = registry_path.parent / str(entry.get("scenario", ""))
        tasks[name] = TaskSpec(
            name=name,
            label=str(entry.get("label", name)),
            scenario_path=str(scenario),
            goal_id=goal_id,
            variation_id=variation_id,
            grammar=grammar,
            exemplars=tuple(str(e) for e in entry.get("exemplars", [])),
        )
    if not tasks:
        raise ValidationError("task registry defines no tasks")
    return tasks
