"""Deterministic tabletop world: scene state, hidden affordances, outcome semantics.

The scene is a support forest (every object rests on the table, on another
object, or inside a container). A hidden affordance table maps grounded
actions to outcome distributions; nothing outside the simulator may read it.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field, replace

from .errors import NoRuleMatch, ValidationError

__all__ = [
    "ON_TABLE",
    "on",
    "inside",
    "ObjectSpec",
    "SceneState",
    "SimEvent",
    "Outcome",
    "GroundedAction",
    "AffordanceRule",
    "AffordanceTable",
    "Observation",
    "stable_rng",
    "scene_children",
    "scene_descendants",
    "chain_length",
    "copy_scene",
    "validate_scene",
    "sample_outcome",
    "apply_outcome",
    "render_observation",
    "scene_from_entries",
    "replay_events",
]

# ---------------------------------------------------------------------------
# support representation

# A support is ("table", None), ("on", parent_id) or ("in", parent_id).
Support = tuple[str, "str | None"]

ON_TABLE: Support = ("table", None)


def on(parent: str) -> Support:
    return ("on", parent)


def inside(parent: str) -> Support:
    return ("in", parent)


SIZE_CLASSES = frozenset({"small", "medium", "large"})
SHAPES = frozenset(
    {
        "block",
        "cylinder",
        "can",
        "plate",
        "bowl",
        "fruit",
        "sponge",
        "egg",
        "banana",
        "notepad",
        "bread-slice",
    }
)
CONTAINER_SHAPES = frozenset({"bowl"})

OUTCOME_KINDS = (
    "success",
    "wrong_object",
    "partial_place_then_fall",
    "knock_off_occupant",
    "no_op",
)

EVENT_KINDS = frozenset(
    {"grasp", "place", "drop", "knock_off", "substitute_target", "no_op", "timeout"}
)

# Abstract costs per event kind, in policy time steps.
GRASP_COST = 60
PLACE_COST = 80
DROP_COST = 30
KNOCK_COST = 15
SUBSTITUTE_COST = 5
NO_OP_COST = 300

# Containers at least this deep hide their contents from the gripper. Used
# only for picking physically plausible wrong-object substitutes; primary
# outcome probabilities always come from the rules.
DEEP_CONTAINER_DEPTH = 0.5


def stable_rng(*parts: object) -> random.Random:
    """Platform-stable RNG derived from a tuple of hashable parts."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


# ---------------------------------------------------------------------------
# core types


@dataclass(frozen=True)
class ObjectSpec:
    """Physical description of one manipulable object."""

    id: str
    name: str
    color: str
    shape: str
    size_class: str
    grip_width: float
    container_depth: float = 0.0
    stack_stability: float = 0.5

    def validate(self) -> None:
        if not self.id or not self.name or not self.color:
            raise ValidationError(f"object {self.id!r}: id, name and color are required")
        if self.shape not in SHAPES:
            raise ValidationError(f"object {self.id!r}: unknown shape {self.shape!r}")
        if self.size_class not in SIZE_CLASSES:
            raise ValidationError(f"object {self.id!r}: unknown size_class {self.size_class!r}")
        if not 0.0 < self.grip_width <= 2.0:
            raise ValidationError(f"object {self.id!r}: grip_width must be in (0, 2]")
        if self.container_depth < 0.0:
            raise ValidationError(f"object {self.id!r}: container_depth must be >= 0")
        if (self.container_depth > 0.0) != (self.shape in CONTAINER_SHAPES):
            raise ValidationError(
                f"object {self.id!r}: container_depth > 0 exactly for container shapes"
            )
        if not 0.0 <= self.stack_stability <= 1.0:
            raise ValidationError(f"object {self.id!r}: stack_stability must be in [0, 1]")

    @property
    def is_container(self) -> bool:
        return self.container_depth > 0.0

    @property
    def graspable(self) -> bool:
        return self.grip_width <= 1.0


@dataclass
class SceneState:
    """Support forest plus arm state.

    Insertion order of ``supports`` tracks placement recency: re-placing an
    object moves its entry to the end, so the earliest-placed child of a
    support is the first matching entry.
    """

    supports: dict[str, Support]
    arm_home: bool = True


@dataclass(frozen=True)
class SimEvent:
    """One coarse physical event emitted while executing a subtask."""

    kind: str
    subject: str
    step_cost: int
    detail: tuple[tuple[str, str], ...] = ()

    def detail_map(self) -> dict[str, str]:
        return dict(self.detail)


@dataclass(frozen=True)
class Outcome:
    """Sampled result category for one grounded action."""

    kind: str
    substitute: str | None = None  # wrong_object: the object actually moved
    reason: str | None = None  # no_op: grip | reach | policy | timeout | ...


@dataclass(frozen=True)
class GroundedAction:
    """Instruction resolved against the roster, with grounding attention."""

    kind: str  # "put_on" | "move_to"
    object_id: str
    target_id: str
    attention: tuple[tuple[str, float], ...] = ()

    def attention_map(self) -> dict[str, float]:
        return dict(self.attention)


# ---------------------------------------------------------------------------
# affordance rules


@dataclass(frozen=True)
class AffordanceRule:
    """Matcher plus outcome distribution for a family of grounded actions."""

    name: str
    action_kind: str  # "put_on" | "move_to" | "any"
    object_pred: tuple[tuple[str, object], ...]
    target_pred: tuple[tuple[str, object], ...]
    precondition: tuple[tuple[str, object], ...]  # {"kind": ...} items
    outcomes: tuple[tuple[Outcome, float], ...]
    bias: tuple[tuple[str, float], ...] = ()  # wrong_object size-class weights

    def bias_map(self) -> dict[str, float]:
        return dict(self.bias)


def _pred_matches(pred: dict[str, object], spec: ObjectSpec) -> bool:
    for key, value in pred.items():
        if key == "any":
            continue
        if key == "id" and spec.id != value:
            return False
        if key == "id_in" and spec.id not in value:  # type: ignore[operator]
            return False
        if key == "shape" and spec.shape != value:
            return False
        if key == "size_class" and spec.size_class != value:
            return False
        if key == "color" and spec.color != value:
            return False
        if key == "is_container" and spec.is_container != bool(value):
            return False
    return True


def _precondition_holds(precond: dict[str, object], action: GroundedAction, scene: SceneState) -> bool:
    kind = precond.get("kind", "always")
    if kind == "always":
        return True
    if kind == "object_in":
        container = str(precond["container"])
        support = scene.supports.get(action.object_id)
        if container == "any":
            holds = support is not None and support[0] == "in"
        else:
            holds = support == inside(container)
    elif kind == "target_occupied":
        holds = bool(scene_children(scene, action.target_id))
    else:
        raise ValidationError(f"unknown precondition kind {kind!r}")
    if precond.get("negate"):
        return not holds
    return holds


def _complementary(preconds: list[dict[str, object]]) -> bool:
    """True when the preconditions form {P, not P} on one axis."""
    if len(preconds) != 2:
        return False
    a, b = preconds
    axis_a = {k: v for k, v in a.items() if k != "negate"}
    axis_b = {k: v for k, v in b.items() if k != "negate"}
    return axis_a == axis_b and bool(a.get("negate")) != bool(b.get("negate"))


@dataclass
class AffordanceTable:
    """Hidden mapping from grounded actions to outcome distributions.

    Only the simulator may consult this; the reasoner and judge work from
    observations and records alone.
    """

    objects: dict[str, ObjectSpec]
    rules: list[AffordanceRule]
    # resolved at validation: (kind, object_id, target_id) -> [(precond, rule)]
    _index: dict[tuple[str, str, str], list[tuple[dict[str, object], AffordanceRule]]] = field(
        default_factory=dict, repr=False
    )

    def validate(self) -> None:
        for spec in self.objects.values():
            spec.validate()
        for rule in self.rules:
            total = sum(p for _, p in rule.outcomes)
            if abs(total - 1.0) > 1e-9:
                raise ValidationError(f"rule {rule.name!r}: outcome probabilities sum to {total}")
            for outcome, p in rule.outcomes:
                if outcome.kind not in OUTCOME_KINDS:
                    raise ValidationError(f"rule {rule.name!r}: unknown outcome {outcome.kind!r}")
                if p < 0.0:
                    raise ValidationError(f"rule {rule.name!r}: negative probability")
            if rule.action_kind not in ("put_on", "move_to", "any"):
                raise ValidationError(f"rule {rule.name!r}: bad action kind {rule.action_kind!r}")

        self._index = {}
        ids = list(self.objects)
        for kind in ("put_on", "move_to"):
            for obj in ids:
                for tgt in ids:
                    if obj == tgt:
                        continue
                    matches = [
                        r
                        for r in self.rules
                        if r.action_kind in (kind, "any")
                        and _pred_matches(dict(r.object_pred), self.objects[obj])
                        and _pred_matches(dict(r.target_pred), self.objects[tgt])
                    ]
                    if not matches:
                        continue  # outside the table's domain
                    preconds = [dict(r.precondition) for r in matches]
                    if len(matches) == 1:
                        if preconds[0].get("kind", "always") != "always":
                            raise ValidationError(
                                f"action ({kind}, {obj}, {tgt}): single rule "
                                f"{matches[0].name!r} has a partial precondition"
                            )
                    elif not _complementary(preconds):
                        names = ", ".join(r.name for r in matches)
                        raise ValidationError(
                            f"action ({kind}, {obj}, {tgt}): rules [{names}] overlap without "
                            "complementary preconditions"
                        )
                    moved = self.objects[obj]
                    if not moved.graspable:
                        for rule in matches:
                            movers = [
                                o.kind
                                for o, p in rule.outcomes
                                if p > 0.0
                                and o.kind
                                in ("success", "partial_place_then_fall", "knock_off_occupant")
                            ]
                            if movers:
                                raise ValidationError(
                                    f"rule {rule.name!r} lets ungraspable object {obj!r} move "
                                    f"({', '.join(movers)})"
                                )
                    self._index[(kind, obj, tgt)] = [(dict(r.precondition), r) for r in matches]

    def find_rule(self, action: GroundedAction, scene: SceneState) -> AffordanceRule:
        entries = self._index.get((action.kind, action.object_id, action.target_id))
        if not entries:
            raise NoRuleMatch(
                f"no affordance rule covers ({action.kind}, {action.object_id}, {action.target_id})"
            )
        hits = [rule for precond, rule in entries if _precondition_holds(precond, action, scene)]
        if len(hits) != 1:
            raise NoRuleMatch(
                f"{len(hits)} rules match ({action.kind}, {action.object_id}, "
                f"{action.target_id}) in the current scene"
            )
        return hits[0]


# ---------------------------------------------------------------------------
# scene helpers


def scene_children(scene: SceneState, parent: str) -> list[str]:
    """Children of a support, earliest placed first."""
    return [oid for oid, sup in scene.supports.items() if sup[1] == parent]


def scene_descendants(scene: SceneState, root: str) -> set[str]:
    out: set[str] = set()
    frontier = [root]
    while frontier:
        nxt = frontier.pop()
        for child in scene_children(scene, nxt):
            if child not in out:
                out.add(child)
                frontier.append(child)
    return out


def chain_length(scene: SceneState, top: str) -> int:
    """Number of objects in the support chain from ``top`` down to the table."""
    length = 0
    cursor: str | None = top
    while cursor is not None:
        length += 1
        sup = scene.supports[cursor]
        cursor = sup[1]
    return length


def copy_scene(scene: SceneState) -> SceneState:
    return SceneState(dict(scene.supports), scene.arm_home)


def validate_scene(scene: SceneState, objects: dict[str, ObjectSpec]) -> None:
    """Check roster agreement, acyclicity, table rooting and resting rules."""
    if set(scene.supports) != set(objects):
        raise ValidationError("scene roster does not match object roster")
    for oid, sup in scene.supports.items():
        kind, parent = sup
        if kind == "table":
            if parent is not None:
                raise ValidationError(f"object {oid!r}: table support takes no parent")
            continue
        if kind not in ("on", "in"):
            raise ValidationError(f"object {oid!r}: unknown support kind {kind!r}")
        if parent not in objects:
            raise ValidationError(f"object {oid!r}: rests on unknown object {parent!r}")
        if parent == oid:
            raise ValidationError(f"object {oid!r}: rests on itself")
        spec = objects[parent]
        if kind == "in" and not spec.is_container:
            raise ValidationError(f"object {oid!r}: 'in' support on non-container {parent!r}")
        if kind == "on" and spec.container_depth == 0.0 and spec.stack_stability == 0.0:
            raise ValidationError(f"object {oid!r}: rests on zero-stability object {parent!r}")
    for oid in scene.supports:
        seen = {oid}
        cursor = scene.supports[oid][1]
        while cursor is not None:
            if cursor in seen:
                raise ValidationError(f"support cycle through {cursor!r}")
            seen.add(cursor)
            cursor = scene.supports[cursor][1]


def _support_for(target: ObjectSpec) -> Support:
    return inside(target.id) if target.is_container else on(target.id)


def _move(scene: SceneState, objects: dict[str, ObjectSpec], oid: str, sup: Support) -> None:
    """Re-support ``oid``; anything resting on it falls to where it was."""
    prior = scene.supports[oid]
    for child in scene_children(scene, oid):
        scene.supports[child] = prior
    del scene.supports[oid]
    scene.supports[oid] = sup


# ---------------------------------------------------------------------------
# sampling and applying outcomes


def _substitute_candidates(
    table: AffordanceTable, action: GroundedAction, scene: SceneState
) -> list[tuple[str, float]]:
    """Physically plausible stand-ins for the instructed object, with weights."""
    attention = action.attention_map()
    bias: dict[str, float] = {}
    entries = table._index.get((action.kind, action.object_id, action.target_id), [])
    for precond, rule in entries:
        if _precondition_holds(precond, action, scene):
            bias = rule.bias_map()
    out: list[tuple[str, float]] = []
    for oid, spec in table.objects.items():
        if oid in (action.object_id, action.target_id):
            continue
        if not spec.graspable:
            continue
        if scene_children(scene, oid):
            continue  # would topple its own stack
        sup = scene.supports.get(oid)
        if sup == _support_for(table.objects[action.target_id]):
            continue  # already at the target
        if sup is not None and sup[0] == "in":
            parent = table.objects.get(sup[1] or "")
            if parent is not None and parent.container_depth >= DEEP_CONTAINER_DEPTH:
                continue  # out of the gripper's reach
        if action.target_id in scene_descendants(scene, oid):
            continue  # placing it would create a cycle
        weight = bias.get(spec.size_class, 0.0) * attention.get(oid, 1.0)
        if weight > 0.0:
            out.append((oid, weight))
    return out


def sample_rule_outcome(rule: AffordanceRule, rng: random.Random) -> Outcome:
    """Categorical draw over a rule's declared outcomes."""
    roll = rng.random()
    chosen = rule.outcomes[-1][0]
    cumulative = 0.0
    for outcome, p in rule.outcomes:
        cumulative += p
        if roll < cumulative:
            chosen = outcome
            break
    return chosen


def sample_outcome(
    table: AffordanceTable, action: GroundedAction, scene: SceneState, rng: random.Random
) -> Outcome:
    """Draw one outcome for a grounded action from its matching rule."""
    rule = table.find_rule(action, scene)
    chosen = sample_rule_outcome(rule, rng)
    if chosen.kind != "wrong_object":
        return chosen
    candidates = _substitute_candidates(table, action, scene)
    if not candidates:
        return Outcome("no_op", reason="policy")
    total = sum(w for _, w in candidates)
    pick = rng.random() * total
    acc = 0.0
    substitute = candidates[-1][0]
    for oid, w in candidates:
        acc += w
        if pick < acc:
            substitute = oid
            break
    return replace(chosen, substitute=substitute)


def apply_outcome(
    scene: SceneState,
    objects: dict[str, ObjectSpec],
    action: GroundedAction,
    outcome: Outcome,
) -> tuple[SceneState, tuple[SimEvent, ...], Outcome]:
    """Apply a sampled outcome, returning (new scene, events, effective outcome).

    Total over all inputs. Physically impossible placements (cycles, resting
    on a zero-stability object) degrade rather than violate the forest
    invariant, and the returned outcome reflects what actually happened.
    """
    new = copy_scene(scene)
    obj, tgt = action.object_id, action.target_id

    def support_kind() -> str:
        return "in" if objects[tgt].is_container else "on"

    def place_events(moved: str) -> tuple[SimEvent, ...]:
        return (
            SimEvent("grasp", moved, GRASP_COST),
            SimEvent("place", moved, PLACE_COST, (("target", tgt), ("support", support_kind()))),
        )

    def placement_blocked(moved: str) -> bool:
        if moved == tgt or tgt in scene_descendants(new, moved):
            return True
        spec = objects[tgt]
        return spec.container_depth == 0.0 and spec.stack_stability == 0.0

    if outcome.kind == "no_op":
        return new, (SimEvent("no_op", obj, NO_OP_COST, (("reason", outcome.reason or "policy"),)),), outcome

    if outcome.kind == "success":
        if placement_blocked(obj):
            return new, (SimEvent("no_op", obj, NO_OP_COST, (("reason", "unplaceable"),)),), Outcome(
                "no_op", reason="unplaceable"
            )
        _move(new, objects, obj, _support_for(objects[tgt]))
        return new, place_events(obj), outcome

    if outcome.kind == "partial_place_then_fall":
        _move(new, objects, obj, ON_TABLE)
        events = (
            SimEvent("grasp", obj, GRASP_COST),
            SimEvent("place", obj, PLACE_COST, (("target", tgt), ("quality", "partial"))),
            SimEvent("drop", obj, DROP_COST, (("target", "table"),)),
        )
        return new, events, outcome

    if outcome.kind == "knock_off_occupant":
        occupants = scene_children(new, tgt)
        if placement_blocked(obj):
            return new, (SimEvent("no_op", obj, NO_OP_COST, (("reason", "unplaceable"),)),), Outcome(
                "no_op", reason="unplaceable"
            )
        _move(new, objects, obj, _support_for(objects[tgt]))
        if not occupants:
            return new, place_events(obj), Outcome("success")
        evicted = occupants[0]  # earliest placed
        new.supports[evicted] = ON_TABLE
        events = place_events(obj) + (
            SimEvent("knock_off", evicted, KNOCK_COST, (("target", "table"),)),
        )
        return new, events, replace(outcome, substitute=evicted)

    if outcome.kind == "wrong_object":
        sub = outcome.substitute
        if sub is None or sub not in objects or placement_blocked(sub):
            return new, (SimEvent("no_op", obj, NO_OP_COST, (("reason", "policy"),)),), Outcome(
                "no_op", reason="policy"
            )
        _move(new, objects, sub, _support_for(objects[tgt]))
        events = (
            SimEvent("substitute_target", sub, SUBSTITUTE_COST, (("intended", obj),)),
            SimEvent("grasp", sub, GRASP_COST),
            SimEvent("place", sub, PLACE_COST, (("target", tgt), ("support", support_kind()))),
        )
        return new, events, outcome

    raise ValidationError(f"unknown outcome kind {outcome.kind!r}")


# ---------------------------------------------------------------------------
# observations


@dataclass(frozen=True)
class Observation:
    """Deterministic rendering of a scene.

    ``entries`` is the canonical order-normalized snapshot (sorted by object
    id); ``lines`` is the textual rendering in roster order; ``names`` maps
    ids to display names so downstream text never needs the roster.
    """

    mode: str
    names: tuple[tuple[str, str], ...]
    entries: tuple[tuple[str, Support], ...]
    lines: tuple[str, ...]

    def text(self) -> str:
        return "\n".join(self.lines)

    def names_map(self) -> dict[str, str]:
        return dict(self.names)


def render_observation(
    scene: SceneState, objects: dict[str, ObjectSpec], mode: str = "structured"
) -> Observation:
    """Render the scene as a structured snapshot or deterministic sentences."""
    if mode not in ("structured", "textual"):
        raise ValidationError(f"unknown observation mode {mode!r}")
    names = tuple((oid, spec.name) for oid, spec in objects.items())
    entries = tuple(sorted(scene.supports.items()))
    lines: list[str] = []
    for oid, spec in objects.items():
        kind, parent = scene.supports[oid]
        if kind == "table":
            lines.append(f"the {spec.name} is on the table")
        elif kind == "on":
            lines.append(f"the {spec.name} is on the {objects[parent].name}")
        else:
            lines.append(f"the {spec.name} is in the {objects[parent].name}")
    return Observation(mode=mode, names=names, entries=entries, lines=tuple(lines))


def scene_from_entries(entries: tuple[tuple[str, Support], ...]) -> SceneState:
    """Rebuild a scene from an observation snapshot."""
    return SceneState({oid: (sup[0], sup[1]) for oid, sup in entries})


def replay_events(
    entries: tuple[tuple[str, Support], ...], events: tuple[SimEvent, ...]
) -> tuple[tuple[str, Support], ...]:
    """Fold a subtask's events over a snapshot; used to audit records."""
    supports: dict[str, Support] = {oid: sup for oid, sup in entries}

    def land(moved: str, sup: Support) -> None:
        prior = supports[moved]
        for child, csup in list(supports.items()):
            if csup[1] == moved:
                supports[child] = prior
        supports[moved] = sup

    for event in events:
        detail = event.detail_map()
        if event.kind == "place":
            if detail.get("quality") == "partial":
                continue  # the paired drop event records where it ended
            land(event.subject, (detail.get("support", "on"), detail["target"]))
        elif event.kind in ("drop", "knock_off"):
            land(event.subject, ON_TABLE)
    return tuple(sorted(supports.items()))
