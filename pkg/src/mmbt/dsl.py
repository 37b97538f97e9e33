"""Indentation-structured text format for behaviour trees (``.bt`` files).

One node per line, two spaces per level::

    tree capping
      sequence
        use_skill grasp_cap
        condition mount_aligned modalities=[vision,ft] weights=[0.6,0.4] lambda=0.5

Full-line ``#`` comments and blank lines are ignored. A condition written
without ``modalities=``/``weights=`` is a deterministic world read.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Optional, Union

from mmbt.bt import Kind, Node, SourceSpan, TreeDef, TreeStructureError
from mmbt.fusion import WEIGHT_SUM_TOL, FusionPolicy

ERROR = "error"
WARNING = "warning"

ERR_INDENT = "ErrIndent"
ERR_KEYWORD = "ErrUnknownKeyword"
ERR_ARITY = "ErrArity"
ERR_WEIGHTS = "ErrWeights"
ERR_UNRESOLVED = "ErrUnresolvedSkill"
ERR_CYCLE = "ErrSkillCycle"
ERR_SYNTAX = "ErrSyntax"
ERR_DUPLICATE = "ErrDuplicate"
ERR_ENCODING = "ErrEncoding"
WARN_GUARD = "WarnUnguardedRepeat"
WARN_UNREACHABLE = "WarnUnreachable"
WARN_MODALITY = "WarnUnknownModality"

DEFAULT_GUARDS = frozenset({"max_iter_reached"})

_COMPOSITES = {"sequence": Kind.SEQUENCE, "fallback": Kind.FALLBACK, "parallel": Kind.PARALLEL}
_DECORATORS = {
    "inverter": Kind.INVERTER,
    "force_success": Kind.FORCE_SUCCESS,
    "repeat_until_success": Kind.REPEAT_UNTIL_SUCCESS,
}
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_\-]*\Z")
_TOKEN = re.compile(r"[^\s=\[]+=\[[^\]]*\]?|\S+")
_INT = re.compile(r"[+-]?\d+\Z")
_FLOAT = re.compile(r"[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?\Z")


@dataclass(frozen=True)
class ParseDiagnostic:
    severity: str
    code: str
    message: str
    span: SourceSpan

    def format(self, path: str = "<input>") -> str:
        return f"{path}:{self.span.line}:{self.span.column}: {self.severity} {self.code}: {self.message}"


class ParseError(Exception):
    def __init__(self, diagnostics: list[ParseDiagnostic]):
        self.diagnostics = diagnostics
        first = diagnostics[0] if diagnostics else None
        super().__init__(first.format() if first else "parse failed")


@dataclass
class _Line:
    lineno: int
    level: int
    text: str  # without indentation
    column: int  # 1-based column of first token
    children: list

    def span(self, token: Optional[str] = None) -> SourceSpan:
        col = self.column
        if token:
            idx = self.text.find(token)
            if idx >= 0:
                col += idx
        return SourceSpan(self.lineno, col)


class _Parser:
    def __init__(self) -> None:
        self.diags: list[ParseDiagnostic] = []

    def error(self, code: str, message: str, span: SourceSpan) -> None:
        self.diags.append(ParseDiagnostic(ERROR, code, message, span))

    # -- line structure -------------------------------------------------
    def lines(self, text: str) -> list[_Line]:
        roots: list[_Line] = []
        stack: list[_Line] = []
        for lineno, raw in enumerate(text.split("\n"), start=1):
            if raw.endswith("\r"):
                raw = raw[:-1]
            stripped = raw.lstrip(" \t")
            if not stripped.strip() or stripped.startswith("#"):
                continue
            lead = raw[: len(raw) - len(stripped)]
            if "\t" in lead:
                self.error(ERR_INDENT, "tab in indentation", SourceSpan(lineno, lead.index("\t") + 1))
                continue
            if len(lead) % 2:
                self.error(ERR_INDENT, f"odd indentation of {len(lead)} spaces", SourceSpan(lineno, 1))
                continue
            level = len(lead) // 2
            line = _Line(lineno, level, stripped.rstrip(), len(lead) + 1, [])
            while stack and stack[-1].level >= level:
                stack.pop()
            expected = stack[-1].level + 1 if stack else 0
            if level != expected:
                self.error(
                    ERR_INDENT,
                    f"indentation jumps to level {level}, expected at most {expected}",
                    SourceSpan(lineno, 1),
                )
                continue
            (stack[-1].children if stack else roots).append(line)
            stack.append(line)
        return roots

    # -- nodes ------------------------------------------------------------
    def node(self, line: _Line) -> Optional[Node]:
        tokens = _TOKEN.findall(line.text)
        keyword = tokens[0]
        rest = tokens[1:]
        if keyword in _COMPOSITES:
            kind = _COMPOSITES[keyword]
            self.no_args(line, keyword, rest)
            if not line.children:
                self.error(ERR_ARITY, f"{keyword} needs at least one child", line.span(keyword))
            children = [self.node(c) for c in line.children]
            if any(c is None for c in children) or not children:
                return None
            return self.spanned(Node(kind, children), line)
        if keyword in _DECORATORS:
            kind = _DECORATORS[keyword]
            max_repeats = None
            if kind is Kind.REPEAT_UNTIL_SUCCESS and rest and rest[0].startswith("max="):
                value = rest[0][4:]
                if _INT.match(value) and int(value) >= 1:
                    max_repeats = int(value)
                else:
                    self.error(ERR_SYNTAX, f"max must be a positive integer, got {value!r}", line.span(rest[0]))
                rest = rest[1:]
            self.no_args(line, keyword, rest)
            if len(line.children) != 1:
                self.error(
                    ERR_ARITY,
                    f"{keyword} needs exactly one child, has {len(line.children)}",
                    line.span(keyword),
                )
            children = [self.node(c) for c in line.children]
            if len(children) != 1 or children[0] is None:
                return None
            return self.spanned(Node(kind, children, max_repeats=max_repeats), line)
        if keyword in ("action", "condition", "use_skill"):
            if line.children:
                self.error(ERR_ARITY, f"{keyword} cannot have children", line.children[0].span())
            if not rest or not _NAME.match(rest[0]):
                self.error(ERR_SYNTAX, f"{keyword} needs a name", line.span(keyword))
                return None
            name = rest[0]
            if keyword == "action":
                args = self.kvargs(line, rest[1:])
                return None if args is None else self.spanned(Node(Kind.ACTION, name=name, args=args), line)
            if keyword == "use_skill":
                self.no_args(line, keyword, rest[1:])
                return self.spanned(Node(Kind.SKILL, name=name), line)
            policy = self.policy(line, rest[1:])
            if policy is False:
                return None
            return self.spanned(Node(Kind.CONDITION, name=name, policy=policy), line)
        if keyword in ("tree", "skill"):
            self.error(ERR_KEYWORD, f"{keyword!r} is only allowed at top level", line.span(keyword))
            return None
        self.error(ERR_KEYWORD, f"unknown keyword {keyword!r}", line.span(keyword))
        return None

    @staticmethod
    def spanned(node: Node, line: _Line) -> Node:
        node.span = SourceSpan(line.lineno, line.column)
        return node

    def no_args(self, line: _Line, keyword: str, rest: list[str]) -> None:
        if rest:
            self.error(ERR_SYNTAX, f"unexpected {rest[0]!r} after {keyword}", line.span(rest[0]))

    def kvargs(self, line: _Line, tokens: list[str]) -> Optional[dict[str, Any]]:
        args: dict[str, Any] = {}
        ok = True
        for tok in tokens:
            key, eq, value = tok.partition("=")
            if not eq or not _NAME.match(key) or not value:
                self.error(ERR_SYNTAX, f"expected key=value, got {tok!r}", line.span(tok))
                ok = False
                continue
            if key in args:
                self.error(ERR_DUPLICATE, f"argument {key!r} given twice", line.span(tok))
                ok = False
                continue
            parsed = parse_scalar(value)
            if parsed is None:
                self.error(ERR_SYNTAX, f"bad value {value!r}", line.span(tok))
                ok = False
                continue
            args[key] = parsed
        return args if ok else None

    def policy(self, line: _Line, tokens: list[str]):
        fields: dict[str, str] = {}
        order = ("modalities", "weights", "lambda")
        for tok in tokens:
            key, eq, value = tok.partition("=")
            if not eq or key not in order:
                self.error(ERR_SYNTAX, f"unexpected {tok!r} in condition", line.span(tok))
                return False
            if key in fields:
                self.error(ERR_DUPLICATE, f"{key} given twice", line.span(tok))
                return False
            fields[key] = value
        if not fields:
            return None
        if "modalities" not in fields or "weights" not in fields:
            self.error(ERR_SYNTAX, "condition needs both modalities= and weights=", line.span("condition"))
            return False
        modalities = _list_items(fields["modalities"])
        if modalities is None or not modalities or not all(_NAME.match(m) for m in modalities):
            self.error(ERR_SYNTAX, "modalities must be a list like [vision,ft]", line.span("modalities="))
            return False
        raw_weights = _list_items(fields["weights"])
        weights = None if raw_weights is None else [_number(w) for w in raw_weights]
        if weights is None or any(w is None for w in weights):
            self.error(ERR_SYNTAX, "weights must be a list of numbers", line.span("weights="))
            return False
        threshold = 0.5
        if "lambda" in fields:
            threshold = _number(fields["lambda"])
            if threshold is None or not (0.0 <= threshold <= 1.0):
                self.error(ERR_SYNTAX, "lambda must be a number in [0, 1]", line.span("lambda="))
                return False
        if len(set(modalities)) != len(modalities):
            self.error(ERR_DUPLICATE, "duplicate modality", line.span("modalities="))
            return False
        if len(weights) != len(modalities):
            self.error(
                ERR_WEIGHTS,
                f"{len(modalities)} modalities but {len(weights)} weights",
                line.span("weights="),
            )
            return False
        if any(w < 0 or not math.isfinite(w) for w in weights):
            self.error(ERR_WEIGHTS, "weights must be finite and non-negative", line.span("weights="))
            return False
        total = math.fsum(weights)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            self.error(ERR_WEIGHTS, f"weights sum to {total:.12g}, not 1", line.span("weights="))
            return False
        return FusionPolicy(tuple(modalities), tuple(weights), threshold)

    # -- file -------------------------------------------------------------
    def file(self, text: str) -> Optional[TreeDef]:
        roots = self.lines(text)
        tree_name = None
        tree_root = None
        tree_line = None
        skills: dict[str, Node] = {}
        skill_lines: dict[str, _Line] = {}
        saw_block = False
        for line in roots:
            tokens = _TOKEN.findall(line.text)
            keyword = tokens[0]
            if keyword not in ("tree", "skill"):
                self.error(ERR_KEYWORD, f"expected tree or skill, got {keyword!r}", line.span(keyword))
                continue
            saw_block = True
            if len(tokens) != 2 or not _NAME.match(tokens[1]):
                self.error(ERR_SYNTAX, f"{keyword} needs exactly one name", line.span(keyword))
                continue
            name = tokens[1]
            if len(line.children) != 1:
                self.error(
                    ERR_ARITY,
                    f"{keyword} {name} needs exactly one root node, has {len(line.children)}",
                    line.span(keyword),
                )
                continue
            body = self.node(line.children[0])
            if keyword == "tree":
                if tree_line is not None:
                    self.error(ERR_DUPLICATE, "only one tree per file", line.span(keyword))
                    continue
                tree_name, tree_root, tree_line = name, body, line
            else:
                if name in skill_lines:
                    self.error(ERR_DUPLICATE, f"skill {name} defined twice", line.span(name))
                    continue
                skill_lines[name] = line
                if body is not None:
                    skills[name] = body
        if not saw_block and not self.diags:
            self.error(ERR_KEYWORD, "expected tree or skill", SourceSpan(1, 1))
        elif tree_line is None and saw_block:
            self.error(ERR_ARITY, "file defines no tree", roots[0].span() if roots else SourceSpan(1, 1))
        if self.diags or tree_root is None:
            if not self.diags:
                self.error(ERR_SYNTAX, "no tree produced", SourceSpan(1, 1))
            return None
        self.check_skills(tree_root, skills, skill_lines)
        if self.diags:
            return None
        try:
            return TreeDef(tree_name, tree_root, skills)
        except TreeStructureError as exc:
            self.error(ERR_SYNTAX, str(exc), tree_line.span())
            return None

    def check_skills(self, root: Node, skills: dict[str, Node], skill_lines: dict[str, _Line]) -> None:
        for owner in [root, *skills.values()]:
            for n in owner.walk():
                if n.kind is Kind.SKILL and n.name not in skills:
                    self.error(ERR_UNRESOLVED, f"unknown skill {n.name!r}", _span_of(n))
        if self.diags:
            return
        color: dict[str, int] = {}
        reported: set[str] = set()

        def visit(name: str) -> None:
            color[name] = 1
            for n in skills[name].walk():
                if n.kind is not Kind.SKILL:
                    continue
                if color.get(n.name) == 1 and n.name not in reported:
                    reported.add(n.name)
                    self.error(ERR_CYCLE, f"skill {n.name!r} uses itself", _span_of(n))
                elif n.name not in color:
                    visit(n.name)
            color[name] = 2

        for name in skills:
            if name not in color:
                visit(name)


def _span_of(node: Node) -> SourceSpan:
    return node.span or SourceSpan(1, 1)


def _list_items(value: str) -> Optional[list[str]]:
    if not (value.startswith("[") and value.endswith("]")):
        return None
    inner = value[1:-1].strip()
    if not inner:
        return []
    return [item.strip() for item in inner.split(",")]


def _number(text: str) -> Optional[float]:
    if not _FLOAT.match(text):
        return None
    return float(text)


def parse_scalar(text: str) -> Union[bool, int, float, str, None]:
    if text in ("true", "false"):
        return text == "true"
    if _INT.match(text):
        return int(text)
    if _FLOAT.match(text):
        return float(text)
    if _NAME.match(text):
        return text
    return None


def parse(text: Union[str, bytes]) -> TreeDef:
    """Parse ``.bt`` source. Raises ParseError carrying every Error diagnostic."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            prefix = bytes(text)[: exc.start]
            line = prefix.count(b"\n") + 1
            column = exc.start - (prefix.rfind(b"\n") + 1) + 1
            raise ParseError(
                [ParseDiagnostic(ERROR, ERR_ENCODING, "input is not valid UTF-8", SourceSpan(line, column))]
            ) from None
    parser = _Parser()
    try:
        tree = parser.file(text)
    except RecursionError:
        parser.error(ERR_SYNTAX, "tree nested too deeply", SourceSpan(1, 1))
        tree = None
    if tree is None:
        raise ParseError(parser.diags)
    return tree


def parse_file(path) -> TreeDef:
    with open(path, "rb") as fh:
        return parse(fh.read())


# -- serialization ----------------------------------------------------------


def format_number(x: Union[int, float]) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    text = format(x, ".12g")
    if not any(c in text for c in ".eEn"):
        text += ".0"
    return text


def _format_value(value: Any) -> str:
    if isinstance(value, (bool, int, float)):
        return format_number(value)
    return str(value)


def _node_line(node: Node) -> str:
    k = node.kind
    if k.is_composite or k in (Kind.INVERTER, Kind.FORCE_SUCCESS):
        return k.value
    if k is Kind.REPEAT_UNTIL_SUCCESS:
        return k.value if node.max_repeats is None else f"{k.value} max={node.max_repeats}"
    if k is Kind.SKILL:
        return f"use_skill {node.name}"
    if k is Kind.ACTION:
        parts = [f"action {node.name}"]
        parts.extend(f"{key}={_format_value(v)}" for key, v in node.args.items())
        return " ".join(parts)
    if node.policy is None:
        return f"condition {node.name}"
    p = node.policy
    return (
        f"condition {node.name} modalities=[{','.join(p.modalities)}]"
        f" weights=[{','.join(format_number(w) for w in p.weights)}]"
        f" lambda={format_number(p.threshold)}"
    )


def _emit(node: Node, depth: int, out: list[str]) -> None:
    out.append("  " * depth + _node_line(node))
    for child in node.children:
        _emit(child, depth + 1, out)


def serialize(tree: TreeDef) -> str:
    """Canonical text: tree block first, then skills in definition order."""
    out = [f"tree {tree.name}"]
    _emit(tree.root, 1, out)
    for name, body in tree.skills.items():
        out.append("")
        out.append(f"skill {name}")
        _emit(body, 1, out)
    return "\n".join(out) + "\n"


def _close(a: float, b: float, tol: float) -> bool:
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)


def _args_equal(a: Mapping[str, Any], b: Mapping[str, Any], tol: float) -> bool:
    if list(a) != list(b):
        return False
    for key in a:
        x, y = a[key], b[key]
        if isinstance(x, bool) or isinstance(y, bool) or isinstance(x, str) or isinstance(y, str):
            if x != y or type(x) is not type(y):
                return False
        elif not _close(float(x), float(y), tol):
            return False
    return True


def nodes_equal(a: Node, b: Node, tol: float = 1e-11) -> bool:
    if a.kind is not b.kind or a.name != b.name or a.max_repeats != b.max_repeats:
        return False
    if not _args_equal(a.args, b.args, tol):
        return False
    if (a.policy is None) != (b.policy is None):
        return False
    if a.policy is not None:
        pa, pb = a.policy, b.policy
        if pa.modalities != pb.modalities or not _close(pa.threshold, pb.threshold, tol):
            return False
        if not all(_close(x, y, tol) for x, y in zip(pa.weights, pb.weights)):
            return False
    if len(a.children) != len(b.children):
        return False
    return all(nodes_equal(x, y, tol) for x, y in zip(a.children, b.children))


def structurally_equal(a: TreeDef, b: TreeDef, tol: float = 1e-11) -> bool:
    """Equality up to the rounding that 12-significant-digit rendering introduces."""
    if a.name != b.name or list(a.skills) != list(b.skills):
        return False
    if not nodes_equal(a.root, b.root, tol):
        return False
    return all(nodes_equal(a.skills[k], b.skills[k], tol) for k in a.skills)


# -- validation -------------------------------------------------------------


def validate(
    tree: TreeDef,
    guards: Iterable[str] = DEFAULT_GUARDS,
    config_modalities: Optional[Mapping[str, Iterable[str]]] = None,
) -> list[ParseDiagnostic]:
    """Static lints on a parsed tree. Returns warnings; never raises.

    ``config_modalities`` maps condition name to the modalities the run
    configuration knows about for it.
    """
    guards = frozenset(guards)
    diags: list[ParseDiagnostic] = []
    owners = [tree.root, *tree.skills.values()]

    def subtree_has_guard(node: Node, seen: frozenset[str]) -> bool:
        for n in node.walk():
            if n.kind is Kind.CONDITION and n.name in guards:
                return True
            if n.kind is Kind.SKILL and n.name in tree.skills and n.name not in seen:
                if subtree_has_guard(tree.skills[n.name], seen | {n.name}):
                    return True
        return False

    for owner in owners:
        for n in owner.walk():
            if n.kind is Kind.REPEAT_UNTIL_SUCCESS and n.max_repeats is None:
                if not subtree_has_guard(n, frozenset()):
                    diags.append(
                        ParseDiagnostic(
                            WARNING,
                            WARN_GUARD,
                            "repeat_until_success has no max and no guard condition; it may never stop",
                            _span_of(n),
                        )
                    )
            if n.kind is Kind.FALLBACK:
                for i, child in enumerate(n.children):
                    if child.kind is Kind.FORCE_SUCCESS:
                        for dead in n.children[i + 1 :]:
                            diags.append(
                                ParseDiagnostic(
                                    WARNING,
                                    WARN_UNREACHABLE,
                                    "unreachable: an earlier force_success sibling always succeeds",
                                    _span_of(dead),
                                )
                            )
                        break
            if config_modalities is not None and n.kind is Kind.CONDITION and n.policy is not None:
                known = set(config_modalities.get(n.name, ()))
                for m in n.policy.modalities:
                    if m not in known:
                        diags.append(
                            ParseDiagnostic(
                                WARNING,
                                WARN_MODALITY,
                                f"condition {n.name}: modality {m!r} is not in the run configuration",
                                _span_of(n),
                            )
                        )
    return diags
