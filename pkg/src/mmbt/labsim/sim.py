"""Binds a task world to the behaviour-tree engine for one seeded trial."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from mmbt.bt import FAILURE, SUCCESS, BehaviorTree, Environment, Node, Status, TickRecord, TreeDef
from mmbt.fusion import FusionPolicy, decide
from mmbt.labsim.ft import synth_ft_trace
from mmbt.labsim.sensors import NoSurrogate, SensorSurrogate
from mmbt.labsim.world import (
    CappingParams,
    CappingWorld,
    FaultInjection,
    InsertionParams,
    InsertionWorld,
)

TASKS = ("capping", "insertion")

CAPPING_ACTIONS = (
    "move_to_pre_pick",
    "move_to_pick",
    "move_home",
    "open_gripper",
    "close_gripper",
    "move_to_pre_mount",
    "move_until_contact",
    "record_ft",
    "record_tactile",
    "capture_rgb",
    "rotate_cw_90",
    "rotate_ccw_90",
    "inc_fasten_iter",
)
INSERTION_ACTIONS = (
    "move_to_pre_pick",
    "move_to_pick",
    "move_home",
    "open_gripper",
    "close_gripper",
    "move_to_preinsert",
    "move_until_contact",
    "record_ft",
    "capture_rgb",
    "capture_depth",
)
# conditions answered by reading the world directly, without a surrogate
DETERMINISTIC_CONDITIONS = {
    "capping": ("gripper_open", "at_fasten_end", "max_iter_reached", "capped_verified"),
    "insertion": ("gripper_open",),
}
FUSED_CONDITIONS = {
    "capping": ("mount_aligned", "fully_capped"),
    "insertion": ("rack_aligned", "rack_inserted"),
}
GUARD_CONDITIONS = frozenset({"max_iter_reached"})

TACTILE_FPS = 30.0


@dataclass
class TaskSetup:
    """Everything a trial needs besides the tree, the seed and the trial index."""

    task: str
    surrogates: dict[str, tuple[SensorSurrogate, ...]]
    durations: dict[str, float]
    faults: FaultInjection = field(default_factory=FaultInjection)
    capping: CappingParams = field(default_factory=CappingParams)
    insertion: InsertionParams = field(default_factory=InsertionParams)
    policies: dict[str, FusionPolicy] = field(default_factory=dict)
    strict_eq1: bool = False
    ft_rate_hz: float = 60.0
    synth_traces: bool = True

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        actions = CAPPING_ACTIONS if self.task == "capping" else INSERTION_ACTIONS
        missing = [a for a in actions if a not in self.durations]
        if missing:
            raise ValueError(f"durations missing for {missing}")
        bad = {k: v for k, v in self.durations.items() if not (v >= 0 and math.isfinite(v))}
        if bad:
            raise ValueError(f"durations must be finite and non-negative: {bad}")


@dataclass(frozen=True)
class VoteLog:
    condition: str
    modalities: tuple[str, ...]
    votes: tuple[int, ...]
    weighted_sum: float
    verdict: bool
    truth: bool
    t: float

    def as_dict(self) -> dict:
        return {
            "condition": self.condition,
            "votes": [{"modality": m, "s": s} for m, s in zip(self.modalities, self.votes)],
            "weighted_sum": self.weighted_sum,
            "verdict": "success" if self.verdict else "failure",
        }


@dataclass
class TrialResult:
    trial: int
    status: Status
    world: object
    duration: float
    votes: list[VoteLog]


def trial_streams(seed: int, trial: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent (decision, signal) RNG streams for one trial.

    Decision draws (world sampling, faults, surrogate votes) never share a
    stream with the decorative F/T signal, so trace settings cannot shift
    outcomes.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(trial)])
    decision, signal = ss.spawn(2)
    return np.random.default_rng(decision), np.random.default_rng(signal)


class LabTrial:
    def __init__(self, setup: TaskSetup, trial: int, seed: int):
        self.setup = setup
        self.trial = trial
        self.rng, self.signal_rng = trial_streams(seed, trial)
        if setup.task == "capping":
            self.world = CappingWorld.sample(setup.capping, self.rng)
        else:
            self.world = InsertionWorld(params=setup.insertion)
        self.votes: list[VoteLog] = []
        self._frames = 0
        self.env = Environment(
            actions=self._action_table(),
            conditions=self._condition_table(),
            trial=trial,
        )

    # -- wiring -------------------------------------------------------------
    def _action_table(self) -> dict[str, Callable[[Node, Environment], Status]]:
        w = self.world
        effects: dict[str, Callable[[Node, Environment], None]] = {
            "move_to_pre_pick": lambda n, e: w.move("pre_pick"),
            "move_to_pick": lambda n, e: w.move("pick"),
            "move_home": lambda n, e: w.move("home"),
            "open_gripper": lambda n, e: w.open_gripper(),
            "close_gripper": lambda n, e: w.close_gripper(),
            "move_until_contact": lambda n, e: w.move_until_contact(),
            "record_ft": self._record_ft,
            "capture_rgb": self._capture("rgb_frame"),
        }
        if self.setup.task == "capping":
            effects.update(
                {
                    "move_to_pre_mount": self._move_to_pre_mount,
                    "record_tactile": self._record_tactile,
                    "rotate_cw_90": lambda n, e: w.rotate_cw_90(),
                    "rotate_ccw_90": lambda n, e: w.rotate_ccw_90(),
                    "inc_fasten_iter": self._inc_fasten_iter,
                }
            )
        else:
            effects.update(
                {
                    "move_to_preinsert": self._move_to_preinsert,
                    "capture_depth": self._capture("depth_frame"),
                }
            )
        durations = self.setup.durations

        def bind(name: str, effect: Callable[[Node, Environment], None]):
            nominal = durations[name]

            def handler(node: Node, env: Environment) -> Status:
                effect(node, env)
                env.clock.advance(float(node.args.get("duration", nominal)))
                if node.name.startswith("move"):
                    env.blackboard.put("location", w.location)
                return SUCCESS

            return handler

        return {name: bind(name, effect) for name, effect in effects.items()}

    def _condition_table(self) -> dict[str, Callable[[Node, Environment], Status]]:
        w = self.world
        table: dict[str, Callable[[Node, Environment], Status]] = {
            "gripper_open": lambda n, e: FAILURE if w.gripper_closed else SUCCESS,
        }
        if self.setup.task == "capping":
            table["at_fasten_end"] = lambda n, e: SUCCESS if w.wrist_at_end else FAILURE
            table["max_iter_reached"] = self._max_iter_reached
            table["capped_verified"] = self._capped_verified
        for name in FUSED_CONDITIONS[self.setup.task]:
            table[name] = self._fused
        return table

    # -- actions --------------------------------------------------------------
    def _record_ft(self, node: Node, env: Environment) -> None:
        if not self.setup.synth_traces:
            return
        duration = float(node.args.get("duration", self.setup.durations["record_ft"]))
        if duration > 0:
            contact = self.world.location in ("vial", "holder")
            trace = synth_ft_trace(duration, self.setup.ft_rate_hz, self.signal_rng, contact)
            env.blackboard.put("ft_trace", trace)

    def _record_tactile(self, node: Node, env: Environment) -> None:
        duration = float(node.args.get("duration", self.setup.durations["record_tactile"]))
        env.blackboard.put("tactile_frames", int(round(duration * TACTILE_FPS)))

    def _capture(self, key: str):
        def effect(node: Node, env: Environment) -> None:
            self._frames += 1
            env.blackboard.put(key, self._frames)

        return effect

    def _move_to_pre_mount(self, node: Node, env: Environment) -> None:
        w = self.world
        w.move("pre_mount")
        w.cap_offset = self.setup.faults.capping_offset(
            self.rng, self.trial, w.params.thread_engage_tol_mm
        )

    def _move_to_preinsert(self, node: Node, env: Environment) -> None:
        p = self.setup.insertion
        offset = self.setup.faults.insertion_offset(self.rng, self.trial, p.tol_xy_mm, p.tol_yaw_deg)
        self.world.move_to_preinsert(offset)

    def _inc_fasten_iter(self, node: Node, env: Environment) -> None:
        self.world.inc_fasten_iter()
        env.blackboard.put("fasten_iter", self.world.fasten_iter)

    # -- conditions -----------------------------------------------------------
    def _max_iter_reached(self, node: Node, env: Environment) -> Status:
        w = self.world
        if w.fasten_iter >= w.params.max_iterations:
            w.guard_tripped = True
            return SUCCESS
        return FAILURE

    def _capped_verified(self, node: Node, env: Environment) -> Status:
        bb = env.blackboard
        ok = "verdict.fully_capped" in bb and bb.get("verdict.fully_capped", bool)
        return SUCCESS if ok else FAILURE

    def policy_for(self, node: Node) -> FusionPolicy:
        policy = self.setup.policies.get(node.name, node.policy)
        if policy is None:
            raise NoSurrogate(f"condition {node.name!r} has no fusion policy")
        return policy

    def _fused(self, node: Node, env: Environment) -> Status:
        name = node.name
        policy = self.policy_for(node)
        try:
            group = self.setup.surrogates[name]
        except KeyError:
            raise NoSurrogate(name) from None
        by_modality = {s.modality: s for s in group}
        truth = self.world.ground_truth(name)
        rng = self.rng
        votes = []
        for modality in policy.modalities:
            try:
                surrogate = by_modality[modality]
            except KeyError:
                raise NoSurrogate(f"{name}.{modality}") from None
            votes.append(surrogate.predict(truth, rng))
        total = math.fsum(w * s for w, s in zip(policy.weights, votes))
        if self.setup.strict_eq1:
            total /= policy.n
        verdict = decide(total, policy)
        self.votes.append(
            VoteLog(name, policy.modalities, tuple(votes), total, verdict, truth, env.clock.now)
        )
        env.blackboard.put(f"verdict.{name}", verdict)
        return SUCCESS if verdict else FAILURE

    # -- running --------------------------------------------------------------
    def run(
        self,
        tree: TreeDef,
        trace: Optional[Callable[[TickRecord], None]] = None,
        audit: bool = False,
        max_ticks: int = 1000,
    ) -> TrialResult:
        """Tick the root until it stops returning RUNNING."""
        bt = BehaviorTree(tree)
        env = self.env
        bt.check_handlers(env)
        env.trace = trace
        if audit:
            env.after_tick = lambda e: self.world.check_invariants()
        status = bt.tick(env)
        while status is Status.RUNNING and bt.ticks < max_ticks:
            status = bt.tick(env)
        return TrialResult(self.trial, status, self.world, env.clock.now, self.votes)
