"""Plan generation over the task grammar, informed by stored experience.

The heuristic reasoner enumerates grounded candidate plans symbolically
(assuming every step succeeds), scores each step from the evidence with a
Laplace estimate, and ranks plans by worst-step tier before magnitude. It
never touches the hidden affordance model; everything it knows arrives
through the experience store. A scripted reasoner replays fixed plans for
tests and a chat-model reasoner delegates the whole decision to a prompt.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass

from .errors import EmptyPlanError, PlanParseError
from .gateway import ChatRequest, LlmGateway
from .memory import Evidence, ExperienceStore, normalize_instruction, render_context
from .tasks import TaskSpec, goal_satisfied
from .templates import load_template
from .world import ObjectSpec, SceneState

__all__ = [
    "LIKELY_THRESHOLD",
    "MAX_PLAN_STEPS",
    "MAX_ENUM_DEPTH",
    "PriorityTier",
    "PlanStep",
    "Plan",
    "PromptBundle",
    "build_context",
    "estimate_success",
    "enumerate_candidates",
    "clear_candidate_cache",
    "HeuristicReasoner",
    "ScriptedReasoner",
    "LlmReasoner",
]

LIKELY_THRESHOLD = 0.5
MAX_PLAN_STEPS = 6
MAX_ENUM_DEPTH = 4


class PriorityTier(enum.IntEnum):
    """Step preference classes; lower sorts first."""

    LIKELY_SUCCESS = 0
    UNTRIED = 1
    REPHRASED_UNLIKELY = 2


@dataclass(frozen=True)
class PlanStep:
    text: str
    object_id: str | None = None
    target_id: str | None = None


@dataclass(frozen=True)
class Plan:
    steps: tuple[PlanStep, ...]

    def texts(self) -> tuple[str, ...]:
        return tuple(step.text for step in self.steps)


# ---------------------------------------------------------------------------
# prompt assembly

SECTION_ORDER = ("usage_instructions", "task_instruction", "observation", "experience")


@dataclass(frozen=True)
class PromptBundle:
    """Reasoner prompt inputs; section order is part of the contract."""

    usage_instructions: str
    task_instruction: str
    observation: str
    experience: str

    def sections(self) -> tuple[tuple[str, str], ...]:
        return tuple((name, getattr(self, name)) for name in SECTION_ORDER)

    def render_text(self) -> str:
        return load_template("reasoner_plan.v1.txt").format(
            usage_instructions=self.usage_instructions,
            task_instruction=self.task_instruction,
            observation=self.observation,
            experience=self.experience,
        )


def build_context(task_instruction: str, observation: str, store: ExperienceStore) -> PromptBundle:
    return PromptBundle(
        usage_instructions=load_template("usage_instructions.v1.txt").strip(),
        task_instruction=task_instruction,
        observation=observation,
        experience=render_context(store),
    )


# ---------------------------------------------------------------------------
# evidence scoring


def estimate_success(text: str, evidence: Evidence) -> float:
    """Laplace success estimate for an instruction text; untried gives 0.5."""
    s, f = evidence.counts.get(normalize_instruction(text), (0, 0))
    return (s + 1) / (s + f + 2)


def _scored(
    text: str, pair: tuple[str, str], evidence: Evidence
) -> tuple[float, bool]:
    s, f = evidence.counts.get(normalize_instruction(text), (0, 0))
    if pair in evidence.substitution_pairs:
        s += 1  # an observed substitution is evidence the move works
    return (s + 1) / (s + f + 2), (s + f) > 0


def _step_tier(
    pair: tuple[str, str], tried: bool, est: float, evidence: Evidence
) -> PriorityTier:
    if pair[0] in evidence.blacklisted_objects or pair in evidence.avoided_pairs:
        return PriorityTier.REPHRASED_UNLIKELY
    if not tried:
        return PriorityTier.UNTRIED
    if est >= LIKELY_THRESHOLD:
        return PriorityTier.LIKELY_SUCCESS
    return PriorityTier.REPHRASED_UNLIKELY


# ---------------------------------------------------------------------------
# symbolic candidate enumeration

_CANDIDATE_CACHE: dict[tuple, tuple] = {}


def clear_candidate_cache() -> None:
    _CANDIDATE_CACHE.clear()


def _children_ids(supports: dict, oid: str) -> list[str]:
    return [cid for cid, sup in supports.items() if sup[1] == oid]


def _symbolic_moves(task: TaskSpec, supports: dict) -> list[tuple[str, str, str]]:
    grammar = task.grammar
    moves = []
    for oid in grammar.object_ids:
        if _children_ids(supports, oid):
            continue  # something rests on it
        for tid in grammar.target_ids:
            if tid == oid:
                continue
            if tid in _descendants(supports, oid):
                continue  # would place onto its own stack
            kind = "in" if tid in grammar.container_target_ids else "on"
            moves.append((oid, tid, kind))
    return moves


def _descendants(supports: dict, oid: str) -> set[str]:
    out: set[str] = set()
    frontier = [oid]
    while frontier:
        cur = frontier.pop()
        for cid, sup in supports.items():
            if sup[1] == cur and cid not in out:
                out.add(cid)
                frontier.append(cid)
    return out


def enumerate_candidates(
    task: TaskSpec,
    scene: SceneState,
    depth: int | None = None,
    max_depth: int = MAX_ENUM_DEPTH,
) -> tuple[tuple[tuple[str, str, str], ...], ...]:
    """All action sequences that reach the goal if every step succeeds.

    With depth unset, the shortest depth that yields any candidate is used.
    Sequences are (object_id, target_id, support_kind) triples in a stable
    order; results are memoized on (task, scene, depth).
    """
    snapshot = tuple(scene.supports.items())
    key = (task.name, snapshot, depth, max_depth)
    cached = _CANDIDATE_CACHE.get(key)
    if cached is not None:
        return cached

    initial = SceneState(dict(scene.supports))

    def search(depth_budget: int) -> list[tuple]:
        found: list[tuple] = []

        def recurse(supports: dict, prefix: tuple) -> None:
            if len(prefix) == depth_budget:
                if goal_satisfied(task, SceneState(dict(supports)), initial):
                    found.append(prefix)
                return
            for oid, tid, kind in _symbolic_moves(task, supports):
                nxt = dict(supports)
                nxt[oid] = (kind, tid)
                recurse(nxt, prefix + ((oid, tid, kind),))

        recurse(dict(scene.supports), ())
        return found

    if depth is not None:
        result = tuple(search(depth))
    else:
        result = ()
        for d in range(1, max_depth + 1):
            found = search(d)
            if found:
                result = tuple(found)
                break
    _CANDIDATE_CACHE[key] = result
    return result


# ---------------------------------------------------------------------------
# reasoners


class HeuristicReasoner:
    """Deterministic planner: tier first, then estimates, then spelling."""

    name = "heuristic"

    def propose(
        self,
        task: TaskSpec,
        scene: SceneState,
        objects: dict[str, ObjectSpec],
        evidence: Evidence,
    ) -> Plan:
        candidates = enumerate_candidates(task, scene)
        if not candidates:
            raise EmptyPlanError(f"no candidate plans reach the goal of {task.name}")
        names = {oid: spec.name for oid, spec in objects.items()}
        forms = (task.grammar.canonical_form, task.grammar.alternate_form)

        step_cache: dict[tuple[str, str], tuple[PriorityTier, float, str]] = {}

        def best_step(oid: str, tid: str) -> tuple[PriorityTier, float, str]:
            hit = step_cache.get((oid, tid))
            if hit is not None:
                return hit
            pair = (normalize_instruction(names[oid]), normalize_instruction(names[tid]))
            options = []
            for idx, form in enumerate(forms):
                text = form.format(object=names[oid], target=names[tid])
                est, tried = _scored(text, pair, evidence)
                tier = _step_tier(pair, tried, est, evidence)
                options.append((tier, -est, idx, text))
            tier, neg_est, _, text = min(options)
            out = (tier, -neg_est, text)
            step_cache[(oid, tid)] = out
            return out

        # once a displacement lesson is stored, placing onto a spot that is
        # occupied at that point in the plan counts against the whole plan
        crowd_aware = bool(evidence.crowded_targets)

        ranked = []
        for seq in candidates:
            tiers = []
            ests = []
            texts = []
            crowd = 0
            sym = dict(scene.supports) if crowd_aware else None
            for oid, tid, kind in seq:
                tier, est, text = best_step(oid, tid)
                tiers.append(tier)
                ests.append(est)
                texts.append(text)
                if sym is not None:
                    if _children_ids(sym, tid):
                        crowd += 1
                    sym[oid] = (kind, tid)
            product = 1.0
            for e in ests:
                product *= e
            key = (max(tiers), crowd, -min(ests), -product, tuple(texts))
            ranked.append((key, seq, tuple(texts)))
        _, seq, texts = min(ranked, key=lambda item: item[0])
        steps = tuple(
            PlanStep(text=text, object_id=oid, target_id=tid)
            for text, (oid, tid, _) in zip(texts, seq)
        )
        return Plan(steps)


class ScriptedReasoner:
    """Feeds a fixed sequence of plans; mainly for tests and demos."""

    name = "scripted"

    def __init__(self, plans: list[list[str]]) -> None:
        self._queue = [list(p) for p in plans]

    def propose(self, *args, **kwargs) -> Plan:
        if not self._queue:
            raise EmptyPlanError("scripted reasoner ran out of plans")
        texts = self._queue.pop(0)
        if not texts:
            raise EmptyPlanError("scripted plan has no steps")
        return Plan(tuple(PlanStep(text=t) for t in texts))

    def propose_from_bundle(self, bundle: PromptBundle) -> Plan:
        return self.propose()


_PLAN_LINE = re.compile(r"^\s*(\d+)[.)]\s*(.+?)\s*$")


def parse_plan_reply(reply: str) -> Plan:
    """Numbered lines, consecutive from 1, anything else is a parse error."""
    steps: list[PlanStep] = []
    for line in reply.splitlines():
        hit = _PLAN_LINE.match(line)
        if not hit:
            continue
        number = int(hit.group(1))
        if number != len(steps) + 1:
            raise PlanParseError(f"plan numbering jumps to {number} at {line.strip()!r}")
        steps.append(PlanStep(text=hit.group(2)))
    if not steps:
        raise PlanParseError(f"no numbered plan lines in reply: {reply[:80]!r}")
    if len(steps) > MAX_PLAN_STEPS:
        raise PlanParseError(f"plan has {len(steps)} steps; the cap is {MAX_PLAN_STEPS}")
    return Plan(tuple(steps))


class LlmReasoner:
    """Planner backed by a chat model via the gateway."""

    name = "llm"

    def __init__(self, gateway: LlmGateway, model_id: str) -> None:
        self.gateway = gateway
        self.model_id = model_id

    def propose_from_bundle(self, bundle: PromptBundle) -> Plan:
        request = ChatRequest(
            model_id=self.model_id,
            messages=(("user", bundle.render_text()),),
            temperature=0.0,
        )
        return parse_plan_reply(self.gateway.complete(request))
