"""Behaviour-tree data model and tick engine.

Composites use memory semantics: a sequence or fallback that returned
``RUNNING`` resumes at the running child on the next tick. Time is simulated;
actions advance the environment clock and a parallel node runs each child on
a forked clock starting at its own entry time.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping, Optional

import numpy as np

from mmbt.fusion import FusionPolicy


class BTError(Exception):
    """Base class for engine errors."""


class UnknownHandler(BTError):
    pass


class BlackboardTypeError(BTError):
    pass


class KeyAbsent(BTError, KeyError):
    pass


class StatusError(BTError):
    """A handler returned something other than a legal status."""


class TreeStructureError(BTError, ValueError):
    pass


class TraceSinkError(BTError):
    """The trace sink failed; the tick result itself is unaffected."""

    def __init__(self, message: str, status: "Status"):
        super().__init__(message)
        self.status = status


class Status(enum.Enum):
    RUNNING = "running"
    SUCCESS = "success"
    FAILURE = "failure"


RUNNING = Status.RUNNING
SUCCESS = Status.SUCCESS
FAILURE = Status.FAILURE


class Kind(str, enum.Enum):
    SEQUENCE = "sequence"
    FALLBACK = "fallback"
    PARALLEL = "parallel"
    INVERTER = "inverter"
    FORCE_SUCCESS = "force_success"
    REPEAT_UNTIL_SUCCESS = "repeat_until_success"
    ACTION = "action"
    CONDITION = "condition"
    SKILL = "use_skill"

    @property
    def is_composite(self) -> bool:
        return self in (Kind.SEQUENCE, Kind.FALLBACK, Kind.PARALLEL)

    @property
    def is_decorator(self) -> bool:
        return self in (Kind.INVERTER, Kind.FORCE_SUCCESS, Kind.REPEAT_UNTIL_SUCCESS)

    @property
    def is_leaf(self) -> bool:
        return self in (Kind.ACTION, Kind.CONDITION, Kind.SKILL)


@dataclass(frozen=True)
class SourceSpan:
    line: int = 1
    column: int = 1

    def __post_init__(self):
        if self.line < 1 or self.column < 1:
            raise ValueError(f"span must be 1-based, got {self.line}:{self.column}")


@dataclass
class Node:
    """One tree node.

    ``name`` is the action, condition or skill name for leaves. A condition
    with ``policy=None`` is a deterministic world read; otherwise it is a
    multimodal fused condition.
    """

    kind: Kind
    children: list[Node] = field(default_factory=list)
    name: str = ""
    args: dict[str, Any] = field(default_factory=dict)
    max_repeats: Optional[int] = None
    policy: Optional[FusionPolicy] = None
    id: str = field(default="", compare=False)
    span: Optional[SourceSpan] = field(default=None, compare=False, repr=False)

    def walk(self) -> Iterator[Node]:
        yield self
        for child in self.children:
            yield from child.walk()


def sequence(*children: Node) -> Node:
    return Node(Kind.SEQUENCE, list(children))


def fallback(*children: Node) -> Node:
    return Node(Kind.FALLBACK, list(children))


def parallel(*children: Node) -> Node:
    return Node(Kind.PARALLEL, list(children))


def inverter(child: Node) -> Node:
    return Node(Kind.INVERTER, [child])


def force_success(child: Node) -> Node:
    return Node(Kind.FORCE_SUCCESS, [child])


def repeat_until_success(child: Node, max_repeats: Optional[int] = None) -> Node:
    return Node(Kind.REPEAT_UNTIL_SUCCESS, [child], max_repeats=max_repeats)


def action(name: str, **args: Any) -> Node:
    return Node(Kind.ACTION, name=name, args=dict(args))


def condition(name: str, policy: Optional[FusionPolicy] = None) -> Node:
    return Node(Kind.CONDITION, name=name, policy=policy)


def use_skill(name: str) -> Node:
    return Node(Kind.SKILL, name=name)


def check_node(node: Node) -> None:
    """Raise TreeStructureError if ``node`` or a descendant breaks arity rules."""
    for n in node.walk():
        k = n.kind
        if k.is_leaf and n.children:
            raise TreeStructureError(f"{k.value} {n.name!r} must not have children")
        if k.is_composite and not n.children:
            raise TreeStructureError(f"{k.value} needs at least one child")
        if k.is_decorator and len(n.children) != 1:
            raise TreeStructureError(f"{k.value} needs exactly one child, has {len(n.children)}")
        if k is Kind.REPEAT_UNTIL_SUCCESS and n.max_repeats is not None and n.max_repeats < 1:
            raise TreeStructureError("repeat_until_success max must be positive")
        if k in (Kind.ACTION, Kind.CONDITION, Kind.SKILL) and not n.name:
            raise TreeStructureError(f"{k.value} without a name")


def assign_ids(node: Node, prefix: str) -> None:
    node.id = prefix
    for i, child in enumerate(node.children):
        label = f"{prefix}/{i}"
        if child.kind.is_leaf:
            label += f":{child.name}"
        assign_ids(child, label)


@dataclass
class TreeDef:
    name: str
    root: Node
    skills: dict[str, Node] = field(default_factory=dict)

    def __post_init__(self):
        check_node(self.root)
        for skill in self.skills.values():
            check_node(skill)
        assign_ids(self.root, self.name)
        for skill_name, body in self.skills.items():
            assign_ids(body, f"@{skill_name}")
        self._check_skills()

    def _check_skills(self) -> None:
        state: dict[str, int] = {}

        def visit(skill: str, path: tuple[str, ...]) -> None:
            if state.get(skill) == 2:
                return
            if state.get(skill) == 1:
                raise TreeStructureError("skill cycle: " + " -> ".join(path + (skill,)))
            state[skill] = 1
            for ref in _skill_refs(self.skills[skill]):
                if ref not in self.skills:
                    raise TreeStructureError(f"unresolved skill {ref!r}")
                visit(ref, path + (skill,))
            state[skill] = 2

        for ref in _skill_refs(self.root):
            if ref not in self.skills:
                raise TreeStructureError(f"unresolved skill {ref!r}")
            visit(ref, ())

    def expanded(self) -> Iterator[Node]:
        """Every node reachable from the root, with skill bodies inlined."""

        def go(node: Node) -> Iterator[Node]:
            yield node
            if node.kind is Kind.SKILL:
                yield from go(self.skills[node.name])
            for child in node.children:
                yield from go(child)

        return go(self.root)


def _skill_refs(node: Node) -> list[str]:
    return [n.name for n in node.walk() if n.kind is Kind.SKILL]


@dataclass(eq=False)
class TimeSeries:
    """Uniformly sampled multichannel series, shape (samples, channels)."""

    values: np.ndarray
    period: float

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return self.period == other.period and np.array_equal(self.values, other.values)

    def __len__(self) -> int:
        return len(self.values)


_BB_TYPES = (bool, int, float, str, TimeSeries)


class Blackboard:
    def __init__(self) -> None:
        self._data: dict[str, Any] = {}

    def put(self, key: str, value: Any) -> None:
        if type(value) not in _BB_TYPES:
            raise BlackboardTypeError(f"unsupported blackboard value for {key!r}: {type(value).__name__}")
        self._data[key] = value

    def get(self, key: str, expected: Optional[type] = None) -> Any:
        try:
            value = self._data[key]
        except KeyError:
            raise KeyAbsent(key) from None
        if expected is not None and type(value) is not expected:
            raise BlackboardTypeError(
                f"{key!r} holds {type(value).__name__}, expected {expected.__name__}"
            )
        return value

    def __contains__(self, key: str) -> bool:
        return key in self._data

    def keys(self):
        return self._data.keys()


class SimClock:
    def __init__(self, now: float = 0.0) -> None:
        if now < 0 or math.isnan(now):
            raise ValueError("clock time must be non-negative")
        self.now = float(now)

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError(f"cannot advance clock by negative {seconds}")
        self.now += seconds

    def advance_to(self, t: float) -> None:
        if t < self.now:
            raise ValueError(f"clock cannot move back from {self.now} to {t}")
        self.now = t


@dataclass(frozen=True)
class TickRecord:
    trial: int
    tick: int
    node_id: str
    kind: str
    status: Status
    t_enter: float
    t_exit: float

    def as_dict(self) -> dict[str, Any]:
        return {
            "trial": self.trial,
            "tick": self.tick,
            "node_id": self.node_id,
            "kind": self.kind,
            "status": self.status.value,
            "t_enter": self.t_enter,
            "t_exit": self.t_exit,
        }


ActionHandler = Callable[[Node, "Environment"], Status]
ConditionHandler = Callable[[Node, "Environment"], Status]


@dataclass
class Environment:
    actions: Mapping[str, ActionHandler]
    conditions: Mapping[str, ConditionHandler]
    blackboard: Blackboard = field(default_factory=Blackboard)
    clock: SimClock = field(default_factory=SimClock)
    trace: Optional[Callable[[TickRecord], None]] = None
    trial: int = 0
    after_tick: Optional[Callable[["Environment"], None]] = None


class _Rt:
    """Runtime instance of a node: the definition plus per-instance memory."""

    __slots__ = ("node", "kind", "id", "children", "cursor", "count")

    def __init__(self, node: Node, rid: str, children: list[_Rt]):
        self.node = node
        self.kind = node.kind
        self.id = rid
        self.children = children
        self.cursor = 0
        self.count = 0


class BehaviorTree:
    """A ticking instance of a TreeDef.

    One instance per trial; instances share nothing, so distinct trials can
    run concurrently.
    """

    def __init__(self, tree: TreeDef):
        self.tree = tree
        self.root = self._compile(tree.root, tree.name)
        self.ticks = 0
        self._records: Optional[list] = None

    def _compile(self, node: Node, rid: str) -> _Rt:
        if node.kind is Kind.SKILL:
            body = self._compile(self.tree.skills[node.name], f"{rid}/0")
            return _Rt(node, rid, [body])
        children = []
        for i, child in enumerate(node.children):
            cid = f"{rid}/{i}"
            if child.kind.is_leaf:
                cid += f":{child.name}"
            children.append(self._compile(child, cid))
        return _Rt(node, rid, children)

    def nodes(self) -> Iterator[_Rt]:
        stack = [self.root]
        while stack:
            rt = stack.pop()
            yield rt
            stack.extend(reversed(rt.children))

    def check_handlers(self, env: Environment) -> None:
        for rt in self.nodes():
            if rt.kind is Kind.ACTION and rt.node.name not in env.actions:
                raise UnknownHandler(f"no action handler for {rt.node.name!r}")
            if rt.kind is Kind.CONDITION and rt.node.name not in env.conditions:
                raise UnknownHandler(f"no condition handler for {rt.node.name!r}")

    def reset(self) -> None:
        """Clear cursors and repeat counters. Blackboard and clock are untouched."""
        for rt in self.nodes():
            rt.cursor = 0
            rt.count = 0

    def tick(self, env: Environment) -> Status:
        self.ticks += 1
        self._records = [] if env.trace is not None else None
        status = self._tick(self.root, env)
        if env.after_tick is not None:
            env.after_tick(env)
        if self._records:
            records, self._records = self._records, None
            try:
                for rec in records:
                    env.trace(rec)
            except Exception as exc:
                raise TraceSinkError(f"trace sink failed: {exc}", status) from exc
        return status

    def _tick(self, rt: _Rt, env: Environment) -> Status:
        records = self._records
        if records is not None:
            slot = len(records)
            records.append(None)
            t_enter = env.clock.now
        kind = rt.kind
        if kind is Kind.SEQUENCE:
            status = self._sequence(rt, env, SUCCESS)
        elif kind is Kind.FALLBACK:
            status = self._sequence(rt, env, FAILURE)
        elif kind is Kind.ACTION:
            handler = env.actions.get(rt.node.name)
            if handler is None:
                raise UnknownHandler(f"no action handler for {rt.node.name!r}")
            status = handler(rt.node, env)
            if not isinstance(status, Status):
                raise StatusError(f"action {rt.node.name!r} returned {status!r}")
        elif kind is Kind.CONDITION:
            handler = env.conditions.get(rt.node.name)
            if handler is None:
                raise UnknownHandler(f"no condition handler for {rt.node.name!r}")
            status = handler(rt.node, env)
            if status is not SUCCESS and status is not FAILURE:
                raise StatusError(f"condition {rt.node.name!r} returned {status!r}")
        elif kind is Kind.PARALLEL:
            status = self._parallel(rt, env)
        elif kind is Kind.REPEAT_UNTIL_SUCCESS:
            status = self._repeat(rt, env)
        elif kind is Kind.INVERTER:
            status = self._tick(rt.children[0], env)
            if status is SUCCESS:
                status = FAILURE
            elif status is FAILURE:
                status = SUCCESS
        elif kind is Kind.FORCE_SUCCESS:
            status = self._tick(rt.children[0], env)
            if status is FAILURE:
                status = SUCCESS
        else:  # skill reference
            status = self._tick(rt.children[0], env)
        if records is not None:
            records[slot] = TickRecord(
                env.trial, self.ticks, rt.id, kind.value, status, t_enter, env.clock.now
            )
        return status

    def _sequence(self, rt: _Rt, env: Environment, keep_going: Status) -> Status:
        # Sequence continues on SUCCESS, fallback on FAILURE.
        children = rt.children
        i = rt.cursor
        while i < len(children):
            status = self._tick(children[i], env)
            if status is RUNNING:
                rt.cursor = i
                return RUNNING
            if status is not keep_going:
                rt.cursor = 0
                return status
            i += 1
        rt.cursor = 0
        return keep_going

    def _parallel(self, rt: _Rt, env: Environment) -> Status:
        main = env.clock
        entry = main.now
        latest = entry
        statuses = []
        try:
            for child in rt.children:
                env.clock = SimClock(entry)
                statuses.append(self._tick(child, env))
                latest = max(latest, env.clock.now)
        finally:
            env.clock = main
        main.advance_to(latest)
        if FAILURE in statuses:
            return FAILURE
        if RUNNING in statuses:
            return RUNNING
        return SUCCESS

    def _repeat(self, rt: _Rt, env: Environment) -> Status:
        limit = rt.node.max_repeats
        child = rt.children[0]
        while True:
            status = self._tick(child, env)
            if status is RUNNING:
                return RUNNING
            if status is SUCCESS:
                rt.count = 0
                return SUCCESS
            rt.count += 1
            if limit is not None and rt.count >= limit:
                rt.count = 0
                return FAILURE
            _reset_subtree(child)


def _reset_subtree(rt: _Rt) -> None:
    stack = [rt]
    while stack:
        r = stack.pop()
        r.cursor = 0
        r.count = 0
        stack.extend(r.children)


def tick_tree(bt: BehaviorTree, env: Environment) -> Status:
    return bt.tick(env)


def reset_tree(bt: BehaviorTree, env: Environment) -> None:
    bt.reset()
