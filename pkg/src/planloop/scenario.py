"""Scenario documents: human-editable YAML describing a world and its affordances.

A scenario file has ``format: 1`` and three sections: ``objects``,
``initial_supports`` and ``affordance_rules``. Loading validates everything
up front so a bad document never reaches the simulator.
"""

from __future__ import annotations

from pathlib import Path

import yaml

from .errors import ParseError, ValidationError
from .world import (
    ON_TABLE,
    AffordanceRule,
    AffordanceTable,
    ObjectSpec,
    Outcome,
    SceneState,
    inside,
    on,
    validate_scene,
)

__all__ = ["SCENARIO_FORMAT", "load_scenario", "read_scenario_file"]

SCENARIO_FORMAT = 1

_PRED_KEYS = frozenset({"any", "id", "id_in", "shape", "size_class", "color", "is_container"})
_PRECOND_KEYS = frozenset({"kind", "container", "negate"})


def read_scenario_file(path: str | Path) -> dict:
    """Parse a scenario YAML file into a document dict."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read scenario file {path}: {exc}") from exc
    return parse_scenario_text(text, source=str(path))


def parse_scenario_text(text: str, source: str = "<string>") -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"{source}: invalid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{source}: scenario document must be a mapping")
    return doc


def _require(doc: dict, key: str, kind: type, default=None):
    if key not in doc:
        if default is not None:
            return default
        raise ValidationError(f"scenario missing required section {key!r}")
    value = doc[key]
    if not isinstance(value, kind):
        raise ValidationError(f"scenario section {key!r} must be a {kind.__name__}")
    return value


def _parse_object(entry: dict) -> ObjectSpec:
    if not isinstance(entry, dict):
        raise ValidationError("each object entry must be a mapping")
    try:
        return ObjectSpec(
            id=str(entry["id"]),
            name=str(entry["name"]),
            color=str(entry["color"]),
            shape=str(entry["shape"]),
            size_class=str(entry["size_class"]),
            grip_width=float(entry["grip_width"]),
            container_depth=float(entry.get("container_depth", 0.0)),
            stack_stability=float(entry.get("stack_stability", 0.5)),
        )
    except KeyError as exc:
        raise ValidationError(f"object entry missing field {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"object entry has a malformed field: {exc}") from exc


def _parse_support(value, ids: set[str]):
    if value == "table":
        return ON_TABLE
    if isinstance(value, dict) and len(value) == 1:
        ((kind, parent),) = value.items()
        if kind in ("on", "in") and parent in ids:
            return on(parent) if kind == "on" else inside(parent)
    raise ValidationError(f"bad initial support {value!r}")


def _parse_pred(value) -> tuple[tuple[str, object], ...]:
    if not isinstance(value, dict) or not value:
        raise ValidationError(f"rule predicate must be a non-empty mapping, got {value!r}")
    unknown = set(value) - _PRED_KEYS
    if unknown:
        raise ValidationError(f"rule predicate has unknown keys {sorted(unknown)}")
    items = []
    for key, val in value.items():
        if key == "id_in":
            if not isinstance(val, list):
                raise ValidationError("id_in predicate takes a list of ids")
            items.append((key, tuple(str(v) for v in val)))
        else:
            items.append((key, val))
    return tuple(items)


def _parse_precondition(value) -> tuple[tuple[str, object], ...]:
    if value in (None, "always"):
        return (("kind", "always"),)
    if not isinstance(value, dict):
        raise ValidationError(f"bad precondition {value!r}")
    unknown = set(value) - _PRECOND_KEYS
    if unknown:
        raise ValidationError(f"precondition has unknown keys {sorted(unknown)}")
    kind = value.get("kind")
    if kind == "object_in":
        if "container" not in value:
            raise ValidationError("object_in precondition needs a container id")
        return tuple(sorted(value.items()))
    if kind == "target_occupied":
        return tuple(sorted(value.items()))
    raise ValidationError(f"unknown precondition kind {kind!r}")


def _parse_outcomes(entries, rule_name: str) -> tuple[tuple[tuple[Outcome, float], ...], tuple]:
    if not isinstance(entries, list) or not entries:
        raise ValidationError(f"rule {rule_name!r}: outcomes must be a non-empty list")
    outcomes = []
    bias: tuple = ()
    for entry in entries:
        if not isinstance(entry, dict) or "kind" not in entry or "p" not in entry:
            raise ValidationError(f"rule {rule_name!r}: each outcome needs kind and p")
        kind = str(entry["kind"])
        p = float(entry["p"])
        reason = entry.get("reason")
        if kind == "wrong_object":
            raw_bias = entry.get("bias")
            if not isinstance(raw_bias, dict) or not raw_bias:
                raise ValidationError(
                    f"rule {rule_name!r}: wrong_object outcome needs a bias weight map"
                )
            bias = tuple(sorted((str(k), float(v)) for k, v in raw_bias.items()))
        outcomes.append((Outcome(kind, reason=str(reason) if reason else None), p))
    return tuple(outcomes), bias


def load_scenario(doc: dict) -> tuple[SceneState, AffordanceTable, list[ObjectSpec]]:
    """Build the initial scene, hidden affordance table, and roster from a document."""
    if not isinstance(doc, dict):
        raise ValidationError("scenario document must be a mapping")
    fmt = doc.get("format")
    if fmt != SCENARIO_FORMAT:
        raise ValidationError(f"unsupported scenario format {fmt!r} (expected {SCENARIO_FORMAT})")

    roster = [_parse_object(entry) for entry in _require(doc, "objects", list, default=[])]
    ids = [spec.id for spec in roster]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate object ids in scenario")
    objects = {spec.id: spec for spec in roster}

    raw_supports = _require(doc, "initial_supports", dict, default={})
    unknown = set(raw_supports) - set(objects)
    if unknown:
        raise ValidationError(f"initial_supports references unknown objects {sorted(unknown)}")
    supports = {}
    for oid in objects:  # roster order fixes placement order
        supports[oid] = _parse_support(raw_supports.get(oid, "table"), set(objects))
    scene = SceneState(supports)
    validate_scene(scene, objects)

    rules = []
    for i, entry in enumerate(_require(doc, "affordance_rules", list, default=[])):
        if not isinstance(entry, dict):
            raise ValidationError(f"rule #{i}: must be a mapping")
        name = str(entry.get("name", f"rule-{i}"))
        outcomes, bias = _parse_outcomes(entry.get("outcomes"), name)
        rules.append(
            AffordanceRule(
                name=name,
                action_kind=str(entry.get("action", "any")),
                object_pred=_parse_pred(entry.get("object", {"any": True})),
                target_pred=_parse_pred(entry.get("target", {"any": True})),
                precondition=_parse_precondition(entry.get("precondition")),
                outcomes=outcomes,
                bias=bias,
            )
        )

    table = AffordanceTable(objects=objects, rules=rules)
    table.validate()
    return scene, table, roster
