"""Run configuration: YAML file -> validated RunConfig."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from mmbt import dsl
from mmbt.bt import Kind, TreeDef
from mmbt.fusion import FusionError, FusionPolicy, ModalityAccuracy
from mmbt.labsim import (
    DETERMINISTIC_CONDITIONS,
    GUARD_CONDITIONS,
    TASKS,
    CappingParams,
    FaultInjection,
    InsertionParams,
    SensorSurrogate,
    TaskSetup,
)


class ConfigError(ValueError):
    pass


class TreeError(ValueError):
    """The configured tree failed to parse or validate."""

    def __init__(self, diagnostics: list[dsl.ParseDiagnostic], path: str):
        self.diagnostics = diagnostics
        self.path = path
        super().__init__("\n".join(d.format(path) for d in diagnostics))


def shipped_config_path(task: str) -> Path:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    return Path(str(resources.files("mmbt") / "data" / f"{task}.yaml"))


@dataclass
class RunConfig:
    task: str
    tree_path: str
    tree: TreeDef
    tree_text: str
    setup: TaskSetup
    trials: int = 100
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def digest(self) -> str:
        """sha256 over the canonical config body and the tree source."""
        body = {k: v for k, v in self.raw.items() if k not in ("trials", "seed", "tree")}
        h = hashlib.sha256()
        h.update(json.dumps(body, sort_keys=True, separators=(",", ":")).encode())
        h.update(b"\0")
        h.update(self.tree_text.encode())
        return h.hexdigest()

    def condition_modalities(self) -> dict[str, list[str]]:
        return {cond: [s.modality for s in group] for cond, group in self.setup.surrogates.items()}

    def policy(self, condition: str) -> FusionPolicy:
        if condition in self.setup.policies:
            return self.setup.policies[condition]
        for node in self.tree.expanded():
            if node.kind is Kind.CONDITION and node.name == condition and node.policy is not None:
                return node.policy
        raise ConfigError(f"no fusion policy for condition {condition!r}")

    def accuracies(self, condition: str) -> list[ModalityAccuracy]:
        try:
            return [s.accuracy for s in self.setup.surrogates[condition]]
        except KeyError:
            raise ConfigError(f"no surrogates for condition {condition!r}") from None

    def with_overrides(
        self,
        trials: Optional[int] = None,
        seed: Optional[int] = None,
        faults: Optional[bool] = None,
    ) -> RunConfig:
        raw = copy.deepcopy(self.raw)
        if trials is not None:
            raw["trials"] = trials
        if seed is not None:
            raw["seed"] = seed
        if faults is not None:
            raw.setdefault("faults", {})["enabled"] = faults
        return from_dict(raw, base_dir=Path(self.tree_path).parent, tree_text=self.tree_text,
                         tree_path=self.tree_path)


def _section(raw: Mapping, key: str) -> dict:
    value = raw.get(key) or {}
    if not isinstance(value, Mapping):
        raise ConfigError(f"section {key!r} must be a mapping")
    return dict(value)


def _number(section: Mapping, key: str, default: float) -> float:
    value = section.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}")
    return float(value)


def _parse_surrogates(raw: Mapping) -> dict[str, tuple[SensorSurrogate, ...]]:
    out = {}
    for condition, modalities in _section(raw, "surrogates").items():
        if not isinstance(modalities, Mapping) or not modalities:
            raise ConfigError(f"surrogates.{condition} must map modality -> accuracies")
        group = []
        for modality, acc in modalities.items():
            if isinstance(acc, (int, float)) and not isinstance(acc, bool):
                acc = {"sensitivity": acc, "specificity": acc}
            if not isinstance(acc, Mapping) or set(acc) - {"sensitivity", "specificity"}:
                raise ConfigError(f"surrogates.{condition}.{modality} needs sensitivity/specificity")
            try:
                group.append(
                    SensorSurrogate(
                        ModalityAccuracy(
                            str(modality),
                            _number(acc, "sensitivity", float("nan")),
                            _number(acc, "specificity", float("nan")),
                        )
                    )
                )
            except ValueError as exc:
                raise ConfigError(f"surrogates.{condition}.{modality}: {exc}") from None
        out[str(condition)] = tuple(group)
    return out


def _parse_policies(raw: Mapping) -> dict[str, FusionPolicy]:
    out = {}
    for condition, spec in _section(raw, "fusion").items():
        if not isinstance(spec, Mapping):
            raise ConfigError(f"fusion.{condition} must be a mapping")
        try:
            out[str(condition)] = FusionPolicy(
                tuple(spec["modalities"]), tuple(spec["weights"]), float(spec.get("lambda", 0.5))
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"fusion.{condition}: missing or malformed {exc}") from None
        except FusionError as exc:
            raise ConfigError(f"fusion.{condition}: {exc}") from None
    return out


def from_dict(
    raw: Mapping[str, Any],
    base_dir: Union[str, Path] = ".",
    tree_text: Optional[str] = None,
    tree_path: Optional[str] = None,
) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a mapping")
    raw = copy.deepcopy(dict(raw))
    task = raw.get("task")
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {task!r}")
    trials = raw.get("trials", 100)
    if isinstance(trials, bool) or not isinstance(trials, int) or trials < 1:
        raise ConfigError(f"trials must be a positive integer, got {trials!r}")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not (0 <= seed < 2**64):
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")

    source: Union[str, bytes, None] = tree_text
    if source is None:
        if "tree" not in raw:
            raise ConfigError("config needs a 'tree' path")
        path = Path(raw["tree"])
        if not path.is_absolute():
            path = Path(base_dir) / path
        try:
            source = path.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read tree {path}: {exc}") from None
        tree_path = str(path)
    try:
        tree = dsl.parse(source)
    except dsl.ParseError as exc:
        raise TreeError(exc.diagnostics, tree_path or "<tree>") from None
    if isinstance(source, bytes):
        source = source.decode("utf-8")

    faults_raw = _section(raw, "faults")
    world = _section(raw, "world")
    tolerances = dict(world.get("tolerances") or {})
    distributions = dict(world.get("distributions") or {})
    faults = FaultInjection(
        enabled=bool(faults_raw.get("enabled", False)),
        alternate_classes=bool(faults_raw.get("alternate_classes", False)),
        capping_offset_mm=_number(distributions, "cap_offset_mm", 10.0),
        insertion_offset_mm=_number(distributions, "offset_mm", 2.5),
        insertion_yaw_deg=_number(distributions, "yaw_deg", 2.5),
    )
    turns = world.get("required_turns", [6, 11])
    if (
        not isinstance(turns, (list, tuple))
        or len(turns) != 2
        or not all(isinstance(t, int) and not isinstance(t, bool) for t in turns)
        or not (1 <= turns[0] <= turns[1])
    ):
        raise ConfigError(f"world.required_turns must be [lo, hi] integers, got {turns!r}")
    max_iterations = world.get("max_iterations", 12)
    if isinstance(max_iterations, bool) or not isinstance(max_iterations, int) or max_iterations < 1:
        raise ConfigError(f"world.max_iterations must be a positive integer, got {max_iterations!r}")
    cross = _number(distributions, "cross_thread_prob", 0.0)
    if not (0.0 <= cross <= 1.0):
        raise ConfigError("world.distributions.cross_thread_prob must be in [0, 1]")
    capping = CappingParams(
        thread_engage_tol_mm=_number(tolerances, "thread_engage_mm", 3.0),
        required_turns=(turns[0], turns[1]),
        cross_thread_prob=cross,
        max_iterations=max_iterations,
    )
    insertion = InsertionParams(
        tol_xy_mm=_number(tolerances, "xy_mm", 2.0),
        tol_yaw_deg=_number(tolerances, "yaw_deg", 2.0),
    )
    durations_raw = _section(raw, "durations")
    durations = {str(k): _number(durations_raw, k, 0.0) for k in durations_raw}
    try:
        setup = TaskSetup(
            task=task,
            surrogates=_parse_surrogates(raw),
            durations=durations,
            faults=faults,
            capping=capping,
            insertion=insertion,
            policies=_parse_policies(raw),
            strict_eq1=bool(raw.get("strict_eq1", False)),
            ft_rate_hz=_number(world, "ft_rate_hz", 60.0),
            synth_traces=bool(world.get("synth_traces", True)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    config = RunConfig(task, tree_path or "<tree>", tree, source, setup, trials, seed, raw)
    _check_against_tree(config)
    return config


def _check_against_tree(config: RunConfig) -> None:
    tree = config.tree
    setup = config.setup
    diags = dsl.validate(tree, GUARD_CONDITIONS, config.condition_modalities())
    if any(d.severity == dsl.ERROR for d in diags):
        raise TreeError(diags, config.tree_path)
    deterministic = DETERMINISTIC_CONDITIONS[config.task]
    for node in tree.expanded():
        if node.kind is Kind.ACTION and node.name not in setup.durations:
            raise ConfigError(f"action {node.name!r} has no duration entry")
        if node.kind is not Kind.CONDITION:
            continue
        if node.policy is None and node.name not in setup.policies:
            if node.name not in deterministic:
                raise ConfigError(f"condition {node.name!r} has no fusion policy")
            continue
        policy = setup.policies.get(node.name, node.policy)
        known = config.condition_modalities().get(node.name)
        if known is None:
            raise ConfigError(f"condition {node.name!r} has no surrogates entry")
        missing = [m for m in policy.modalities if m not in known]
        if missing:
            raise ConfigError(f"condition {node.name!r}: no surrogate for modalities {missing}")


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return from_dict(raw, base_dir=path.parent)
