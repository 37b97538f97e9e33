"""Ground-truth world state for the capping and insertion tasks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class PhysicalOrderError(RuntimeError):
    """An action was issued in a state where it makes no physical sense.

    This points at a malformed tree, not at a failed trial.
    """


class InvariantViolation(AssertionError):
    pass


@dataclass
class FaultInjection:
    enabled: bool = False
    alternate_classes: bool = False
    capping_offset_mm: float = 10.0
    insertion_offset_mm: float = 2.5
    insertion_yaw_deg: float = 2.5

    def capping_offset(self, rng: np.random.Generator, trial: int, tol: float) -> tuple[float, float]:
        if not self.enabled:
            return (0.0, 0.0)
        r = self.capping_offset_mm
        if not self.alternate_classes:
            x, y = rng.uniform(-r, r, 2)
            return (float(x), float(y))
        if trial % 2 == 0:
            x, y = rng.uniform(-min(tol, r), min(tol, r), 2)
            return (float(x), float(y))
        if r <= tol:
            raise ValueError("offset range never exceeds the mesh tolerance; cannot force a misaligned class")
        while True:
            x, y = rng.uniform(-r, r, 2)
            if max(abs(x), abs(y)) > tol:
                return (float(x), float(y))

    def insertion_offset(
        self, rng: np.random.Generator, trial: int, tol_xy: float, tol_yaw: float
    ) -> tuple[float, float, float]:
        if not self.enabled:
            return (0.0, 0.0, 0.0)
        r, ry = self.insertion_offset_mm, self.insertion_yaw_deg
        if not self.alternate_classes:
            x, y = rng.uniform(-r, r, 2)
            return (float(x), float(y), float(rng.uniform(-ry, ry)))
        if trial % 2 == 0:
            a, b = min(tol_xy, r), min(tol_yaw, ry)
            x, y = rng.uniform(-a, a, 2)
            return (float(x), float(y), float(rng.uniform(-b, b)))
        if r <= tol_xy and ry <= tol_yaw:
            raise ValueError("offset ranges never exceed the tolerances; cannot force a misaligned class")
        while True:
            x, y = rng.uniform(-r, r, 2)
            yaw = rng.uniform(-ry, ry)
            if abs(x) > tol_xy or abs(y) > tol_xy or abs(yaw) > tol_yaw:
                return (float(x), float(y), float(yaw))


@dataclass
class CappingParams:
    thread_engage_tol_mm: float = 3.0
    required_turns: tuple[int, int] = (6, 11)
    cross_thread_prob: float = 0.04
    max_iterations: int = 12


@dataclass
class InsertionParams:
    tol_xy_mm: float = 2.0
    tol_yaw_deg: float = 2.0


@dataclass
class CappingWorld:
    params: CappingParams = field(default_factory=CappingParams)
    required_turns: int = 8
    cross_threaded: bool = False
    location: str = "home"
    gripper_closed: bool = True
    wrist_at_end: bool = False
    cap_grasped: bool = False
    cap_on_vial: bool = False
    cap_offset: tuple[float, float] = (0.0, 0.0)
    cap_dropped: bool = False
    mounted_ok: bool = False
    applied_turns: int = 0
    sealed: bool = False
    fasten_iter: int = 0
    guard_tripped: bool = False

    @classmethod
    def sample(cls, params: CappingParams, rng: np.random.Generator) -> CappingWorld:
        lo, hi = params.required_turns
        turns = int(rng.integers(lo, hi + 1))
        crossed = bool(rng.random() < params.cross_thread_prob)
        return cls(params=params, required_turns=turns, cross_threaded=crossed)

    def ground_truth(self, condition: str) -> bool:
        if condition == "mount_aligned":
            return self.mounted_ok and not self.cap_dropped
        if condition == "fully_capped":
            return self.sealed
        raise KeyError(condition)

    @property
    def succeeded(self) -> bool:
        return self.sealed

    # -- actions --------------------------------------------------------------
    def move(self, where: str) -> None:
        if where != "vial" and self.cap_on_vial and self.cap_grasped:
            # leaving the vial while holding a cap that sits on it
            self.cap_grasped = False
        self.location = where

    def open_gripper(self) -> None:
        if self.cap_grasped:
            self.cap_grasped = False
            if self.cap_on_vial and not self.mounted_ok:
                self.cap_dropped = True
                self.cap_on_vial = False
        self.gripper_closed = False

    def close_gripper(self) -> None:
        if not self.gripper_closed:
            if self.location == "pick" and not self.cap_on_vial and not self.cap_dropped:
                self.cap_grasped = True
            elif self.location == "vial" and self.cap_on_vial:
                self.cap_grasped = True
        self.gripper_closed = True

    def move_until_contact(self) -> None:
        if not self.cap_grasped:
            raise PhysicalOrderError("move_until_contact without a grasped cap")
        self.location = "vial"
        self.cap_on_vial = True
        x, y = self.cap_offset
        self.mounted_ok = max(abs(x), abs(y)) <= self.params.thread_engage_tol_mm

    def rotate_cw_90(self) -> None:
        if not self.gripper_closed:
            raise PhysicalOrderError("rotate_cw_90 with the gripper open")
        if self.wrist_at_end:
            raise PhysicalOrderError("rotate_cw_90 with the wrist already at the fastening end")
        self.wrist_at_end = True
        if self.cap_grasped and self.cap_on_vial and self.mounted_ok:
            self.applied_turns += 1
            if not self.cross_threaded and self.applied_turns >= self.required_turns:
                self.sealed = True

    def rotate_ccw_90(self) -> None:
        if self.gripper_closed:
            raise PhysicalOrderError("rotate_ccw_90 with the gripper closed would unscrew the cap")
        if not self.wrist_at_end:
            raise PhysicalOrderError("rotate_ccw_90 with the wrist already at the start")
        self.wrist_at_end = False

    def inc_fasten_iter(self) -> None:
        self.fasten_iter += 1

    def check_invariants(self) -> None:
        if self.sealed and not (self.mounted_ok and self.applied_turns >= self.required_turns):
            raise InvariantViolation("sealed without a proper mount and enough turns")
        if self.cap_dropped and (self.mounted_ok or self.sealed):
            raise InvariantViolation("a dropped cap cannot be mounted or sealed")
        if self.fasten_iter > self.params.max_iterations:
            raise InvariantViolation(
                f"fasten_iter {self.fasten_iter} exceeds max_iterations {self.params.max_iterations}"
            )


@dataclass
class InsertionWorld:
    params: InsertionParams = field(default_factory=InsertionParams)
    location: str = "home"
    gripper_closed: bool = True
    rack_grasped: bool = False
    offset: tuple[float, float] = (0.0, 0.0)
    yaw: float = 0.0
    aligned_ok: bool = False
    inserted_ok: bool = False

    def ground_truth(self, condition: str) -> bool:
        if condition == "rack_aligned":
            return self.aligned_ok
        if condition == "rack_inserted":
            return self.inserted_ok
        raise KeyError(condition)

    @property
    def succeeded(self) -> bool:
        return self.inserted_ok

    def within_tolerance(self) -> bool:
        x, y = self.offset
        tol = self.params.tol_xy_mm
        return abs(x) <= tol and abs(y) <= tol and abs(self.yaw) <= self.params.tol_yaw_deg

    def move(self, where: str) -> None:
        self.location = where

    def open_gripper(self) -> None:
        self.rack_grasped = False
        self.gripper_closed = False

    def close_gripper(self) -> None:
        if not self.gripper_closed and self.location == "pick":
            self.rack_grasped = True
        self.gripper_closed = True

    def move_to_preinsert(self, offset: tuple[float, float, float]) -> None:
        if not self.rack_grasped:
            raise PhysicalOrderError("move_to_preinsert without a grasped rack")
        self.location = "preinsert"
        x, y, yaw = offset
        self.offset = (x, y)
        self.yaw = yaw
        self.aligned_ok = self.within_tolerance()

    def move_until_contact(self) -> None:
        if not self.rack_grasped or self.location != "preinsert":
            raise PhysicalOrderError("move_until_contact needs a grasped rack at the pre-insert frame")
        self.location = "holder"
        self.inserted_ok = self.aligned_ok

    def check_invariants(self) -> None:
        if self.inserted_ok and not self.aligned_ok:
            raise InvariantViolation("inserted without alignment")
        if self.location in ("preinsert", "holder") and self.aligned_ok != self.within_tolerance():
            raise InvariantViolation("aligned_ok disagrees with the tolerances")
