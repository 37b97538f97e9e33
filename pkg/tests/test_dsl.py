import random
from importlib import resources

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmbt import dsl
from mmbt.bt import Kind, TreeDef, action, condition, fallback, force_success, inverter
from mmbt.bt import parallel, repeat_until_success, sequence, use_skill
from mmbt.fusion import FusionPolicy


def shipped(name):
    return (resources.files("mmbt") / "data" / name).read_text(encoding="utf-8")


def errors_of(text):
    with pytest.raises(dsl.ParseError) as info:
        dsl.parse(text)
    return info.value.diagnostics


# -- shipped trees ---------------------------------------------------------------


def test_insertion_tree_resolves_three_skills():
    tree = dsl.parse(shipped("insertion.bt"))
    assert tree.root.kind is Kind.SEQUENCE
    assert [c.kind for c in tree.root.children] == [Kind.SKILL] * 3
    assert [c.name for c in tree.root.children] == ["grasp_rack", "align_rack", "insert_rack"]
    assert set(tree.skills) == {"grasp_rack", "align_rack", "insert_rack"}


def test_capping_tree_resolves_three_skills():
    tree = dsl.parse(shipped("capping.bt"))
    assert [c.name for c in tree.root.children] == ["grasp_cap", "mount_cap", "fasten_cap"]


@pytest.mark.parametrize("name", ["capping.bt", "insertion.bt"])
def test_shipped_trees_validate_clean(name):
    tree = dsl.parse(shipped(name))
    diags = dsl.validate(tree)
    assert not [d for d in diags if d.severity == dsl.ERROR]
    assert not [d for d in diags if d.code == dsl.WARN_GUARD]


@pytest.mark.parametrize("name", ["capping.bt", "insertion.bt"])
def test_shipped_round_trip(name):
    tree = dsl.parse(shipped(name))
    text = dsl.serialize(tree)
    again = dsl.parse(text)
    assert dsl.structurally_equal(tree, again)
    assert dsl.serialize(again) == text


# -- examples ------------------------------------------------------------------


def test_weights_not_summing_to_one():
    diags = errors_of("tree t\n  condition aligned modalities=[vision,depth] weights=[0.6,0.5]\n")
    assert [d.code for d in diags] == [dsl.ERR_WEIGHTS]
    assert diags[0].span.line == 2


def test_weights_length_mismatch():
    diags = errors_of("tree t\n  condition aligned modalities=[vision,depth] weights=[1.0]\n")
    assert dsl.ERR_WEIGHTS in [d.code for d in diags]


def test_empty_file():
    diags = errors_of("")
    assert len(diags) == 1
    assert diags[0].severity == dsl.ERROR
    assert "expected tree or skill" in diags[0].message


def test_lambda_defaults_to_half():
    tree = dsl.parse("tree t\n  condition ok modalities=[a,b] weights=[0.5,0.5]\n")
    assert tree.root.policy == FusionPolicy(("a", "b"), (0.5, 0.5), 0.5)


def test_condition_without_modalities_is_deterministic():
    tree = dsl.parse("tree t\n  condition gripper_open\n")
    assert tree.root.kind is Kind.CONDITION and tree.root.policy is None


def test_action_kvargs_are_typed():
    tree = dsl.parse("tree t\n  action record_ft duration=2.0 n=3 tag=front on=true\n")
    assert tree.root.args == {"duration": 2.0, "n": 3, "tag": "front", "on": True}


def test_repeat_max():
    tree = dsl.parse("tree t\n  repeat_until_success max=5\n    action a\n")
    assert tree.root.max_repeats == 5


def test_crlf_and_comments_accepted():
    text = "# header\r\ntree t\r\n  sequence\r\n\r\n    # inner\r\n    action a\r\n"
    tree = dsl.parse(text)
    assert tree.root.children[0].name == "a"


@pytest.mark.parametrize(
    "text,code,line",
    [
        ("tree t\n\tsequence\n    action a\n", dsl.ERR_INDENT, 2),
        ("tree t\n   action a\n", dsl.ERR_INDENT, 2),
        ("tree t\n  bogus x\n", dsl.ERR_KEYWORD, 2),
        ("tree t\n  sequence\n", dsl.ERR_ARITY, 2),
        ("tree t\n  inverter\n    action a\n    action b\n", dsl.ERR_ARITY, 2),
        ("tree t\n  use_skill s\n", dsl.ERR_UNRESOLVED, 2),
        ("tree t\n  use_skill a\nskill a\n  use_skill b\nskill b\n  use_skill a\n", dsl.ERR_CYCLE, None),
        ("tree t\n  action a\nskill s\n  action a\nskill s\n  action b\n", dsl.ERR_DUPLICATE, 5),
    ],
)
def test_error_codes(text, code, line):
    diags = errors_of(text)
    assert code in [d.code for d in diags]
    hit = next(d for d in diags if d.code == code)
    if line is not None:
        assert hit.span.line == line


def test_invalid_utf8():
    diags = errors_of(b"tree t\n  action \xff\n")
    assert diags[0].code == dsl.ERR_ENCODING


def test_error_locality_points_at_token():
    text = "tree t\n  sequence\n    action a\n    frobnicate z\n"
    (d,) = errors_of(text)
    line = text.splitlines()[d.span.line - 1]
    assert "frobnicate" in line
    assert line[d.span.column - 1 :].startswith("frobnicate")


def test_diagnostic_format():
    (d,) = errors_of("tree t\n  bogus x\n")
    assert d.format("x.bt") == "x.bt:2:3: error ErrUnknownKeyword: unknown keyword 'bogus'"


# -- serializer ----------------------------------------------------------------


def test_thirds_survive_round_trip():
    third = 1 / 3
    policy = FusionPolicy(("a", "b", "c"), (third, third, third))
    tree = TreeDef("t", condition("ok", policy))
    again = dsl.parse(dsl.serialize(tree))
    assert abs(sum(again.root.policy.weights) - 1.0) <= 1e-9
    assert dsl.structurally_equal(tree, again)


def test_serialize_is_byte_stable():
    tree = dsl.parse(shipped("capping.bt"))
    assert dsl.serialize(tree) == dsl.serialize(tree)
    assert dsl.serialize(tree).endswith("\n")
    assert "\r" not in dsl.serialize(tree)


@pytest.mark.parametrize(
    "x,text",
    [(2, "2"), (2.0, "2.0"), (0.1, "0.1"), (1 / 3, "0.333333333333"), (1e-20, "1e-20"), (-1.5, "-1.5")],
)
def test_format_number(x, text):
    assert dsl.format_number(x) == text


# -- lints -----------------------------------------------------------------------


def test_unguarded_repeat_warns():
    tree = dsl.parse("tree t\n  repeat_until_success\n    action a\n")
    assert [d.code for d in dsl.validate(tree)] == [dsl.WARN_GUARD]


def test_repeat_with_max_or_guard_is_quiet():
    tree = dsl.parse("tree t\n  repeat_until_success max=3\n    action a\n")
    assert dsl.validate(tree) == []
    tree = dsl.parse(
        "tree t\n  repeat_until_success\n    fallback\n      condition max_iter_reached\n      action a\n"
    )
    assert dsl.validate(tree) == []


def test_guard_inside_skill_counts():
    tree = dsl.parse(
        "tree t\n  repeat_until_success\n    use_skill g\nskill g\n  condition max_iter_reached\n"
    )
    assert dsl.validate(tree) == []


def test_unreachable_after_force_success():
    text = "tree t\n  fallback\n    force_success\n      action a\n    action x\n"
    diags = dsl.validate(dsl.parse(text))
    assert [d.code for d in diags] == [dsl.WARN_UNREACHABLE]
    assert diags[0].span.line == 5


def test_unknown_modality_warns_only_with_config():
    tree = dsl.parse("tree t\n  condition ok modalities=[vision,sonar] weights=[0.5,0.5]\n")
    assert dsl.validate(tree) == []
    diags = dsl.validate(tree, config_modalities={"ok": ["vision"]})
    assert [d.code for d in diags] == [dsl.WARN_MODALITY]
    assert "sonar" in diags[0].message


# -- round trip on generated trees --------------------------------------------------

NAMES = ["a", "b", "move_home", "x_1", "grip-2"]
MODS = ["vision", "ft", "tactile", "depth"]


def _random_weights(rng, n):
    raw = [rng.random() + 0.01 for _ in range(n)]
    total = sum(raw)
    return tuple(w / total for w in raw)


def _random_args(rng):
    args = {}
    for key in rng.sample(["duration", "n", "tag", "on", "gain"], rng.randint(0, 3)):
        args[key] = rng.choice(
            [rng.uniform(0, 50), rng.randint(-5, 99), rng.choice(["left", "front"]), rng.random() < 0.5,
             rng.uniform(-1e-6, 1e6)]
        )
    return args


def random_node(rng, depth, skills):
    if depth >= 6 or rng.random() < 0.35:
        r = rng.random()
        if r < 0.45:
            return action(rng.choice(NAMES), **_random_args(rng))
        if r < 0.85:
            if rng.random() < 0.3:
                return condition(rng.choice(NAMES))
            mods = tuple(rng.sample(MODS, rng.randint(1, 4)))
            policy = FusionPolicy(mods, _random_weights(rng, len(mods)), round(rng.random(), 3))
            return condition(rng.choice(NAMES), policy)
        if skills:
            return use_skill(rng.choice(skills))
        return action("leaf")
    r = rng.random()
    if r < 0.7:
        kids = [random_node(rng, depth + 1, skills) for _ in range(rng.randint(1, 4))]
        return rng.choice([sequence, fallback, parallel])(*kids)
    child = random_node(rng, depth + 1, skills)
    if r < 0.8:
        return inverter(child)
    if r < 0.9:
        return force_success(child)
    return repeat_until_success(child, rng.choice([None, rng.randint(1, 20)]))


def random_tree(rng):
    # skills may only refer to earlier skills, so there are no cycles
    skills = {}
    names = []
    for i in range(rng.randint(0, 3)):
        name = f"skill_{i}"
        skills[name] = random_node(rng, 1, list(names))
        names.append(name)
    return TreeDef(f"t{rng.randint(0, 99)}", random_node(rng, 0, names), skills)


def test_round_trip_generated_trees():
    rng = random.Random(20250101)
    count = 0
    for _ in range(1200):
        tree = random_tree(rng)
        text = dsl.serialize(tree)
        again = dsl.parse(text)
        assert dsl.structurally_equal(tree, again), text
        assert dsl.serialize(again) == text
        count += 1
    assert count >= 1000


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_hypothesis_seeds(seed):
    tree = random_tree(random.Random(seed))
    assert dsl.structurally_equal(tree, dsl.parse(dsl.serialize(tree)))


# -- totality ------------------------------------------------------------------------

ALPHABET = b"  \t\n\r#=[],.-_0123456789abcdefghijklmnopqrstuvwxyz"
KEYWORDS = [b"tree ", b"skill ", b"sequence", b"fallback", b"parallel", b"inverter", b"force_success",
            b"repeat_until_success", b"max=", b"action ", b"condition ", b"use_skill ", b"modalities=[",
            b"weights=[", b"lambda=", b"\n  ", b"\n    ", b"\n"]


def _fuzz_input(rng, seeds):
    r = rng.random()
    if r < 0.3:
        return bytes(rng.getrandbits(8) for _ in range(rng.randint(0, 60)))
    if r < 0.6:
        return b"".join(rng.choice(KEYWORDS) if rng.random() < 0.4 else bytes([rng.choice(ALPHABET)])
                        for _ in range(rng.randint(0, 40)))
    # mutate a valid file
    data = bytearray(rng.choice(seeds))
    for _ in range(rng.randint(1, 4)):
        op = rng.random()
        pos = rng.randrange(len(data) + 1)
        if op < 0.4 and data:
            del data[min(pos, len(data) - 1)]
        elif op < 0.8:
            data.insert(pos, rng.choice(ALPHABET))
        else:
            data[pos:pos] = rng.choice(KEYWORDS)
    return bytes(data)


def _check_total(data):
    try:
        tree = dsl.parse(data)
    except dsl.ParseError as exc:
        assert exc.diagnostics
        assert all(d.severity == dsl.ERROR for d in exc.diagnostics)
        text = data.decode("utf-8", "replace") if isinstance(data, bytes) else data
        n_lines = text.count("\n") + 1
        for d in exc.diagnostics:
            assert 1 <= d.span.line <= n_lines + 1
        return False
    assert isinstance(tree, TreeDef)
    return True


def test_fuzz_totality():
    rng = random.Random(7)
    seeds = [b"tree t\n  sequence\n    action a duration=1.0\n    condition c modalities=[x,y] weights=[0.5,0.5]\n",
             shipped("capping.bt").encode(), shipped("insertion.bt").encode()]
    parsed = 0
    for _ in range(100_000):
        parsed += _check_total(_fuzz_input(rng, seeds))
    # some mutations keep the file valid; most must not
    assert 0 < parsed < 100_000


@settings(max_examples=500, deadline=None)
@given(st.binary(max_size=200))
def test_fuzz_hypothesis_bytes(data):
    _check_total(data)


@settings(max_examples=500, deadline=None)
@given(st.text(alphabet=st.sampled_from(list(" \t\nabcsequencetrfl=[],.0123456789#")), max_size=200))
def test_fuzz_hypothesis_text(text):
    _check_total(text)


def test_deep_nesting_does_not_crash():
    depth = 3000
    lines = ["tree t"] + ["  " * (i + 1) + "inverter" for i in range(depth)] + ["  " * (depth + 1) + "action a"]
    _check_total("\n".join(lines) + "\n")
