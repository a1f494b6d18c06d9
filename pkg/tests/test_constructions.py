import pytest

from treeflow.bitseq import BitString, index_of
from treeflow.constructions import (
    ConfigError,
    RunConfig,
    build,
    build_atom,
    build_atom_family,
    build_divisible,
    build_hyperimmune,
    build_nonstochastic,
    ml_test,
    prefix_free,
    reference_roster_descriptors,
    union_mass,
)
from treeflow.network import ONE, Rational

B = BitString.from_str

FLIP_FIRST = [
    {"kind": "flip", "name": "flip"},
    {"kind": "silent", "name": "silent"},
    {"kind": "echo", "name": "echo"},
]


def test_config_validation_errors():
    with pytest.raises(ConfigError):
        RunConfig(preset="nope", depth=5).validate()
    with pytest.raises(ConfigError):
        RunConfig(preset="atom", depth=-1).validate()
    with pytest.raises(ConfigError):
        RunConfig(preset="family", depth=5, networks=1).validate()
    with pytest.raises(ConfigError):
        RunConfig(preset="atom", depth=5, networks=2).validate()
    with pytest.raises(ConfigError):
        RunConfig(preset="atom", depth=5, discard_mode="drop").validate()
    with pytest.raises(ConfigError):
        RunConfig(preset="atom", depth=5, mode="fast").validate()
    cfg = RunConfig(preset="atom", depth=5)
    cfg.rosters = {"operators": [], "functions": []}
    with pytest.raises(ConfigError):
        cfg.validate()


def test_config_payload_round_trip():
    cfg = RunConfig(preset="family", depth=9, networks=3, seed=4)
    again = RunConfig.from_payload(cfg.to_payload())
    assert again == cfg
    with pytest.raises(ConfigError):
        RunConfig.from_payload({"preset": "atom", "depth": 3, "bogus": 1})


def test_reference_rosters_are_embedded():
    cfg = RunConfig(preset="atom", depth=3)
    assert cfg.rosters == reference_roster_descriptors()
    ops, fns = cfg.resolved_rosters()
    assert len(ops.bases) == 5
    assert len(fns.bases) == 2


def test_nonstochastic_reference_run():
    b = build_nonstochastic(20)
    assert [p["case"] for p in b.provenance] == [
        1, 3, 1, 2, 1, 1, 3, 3, 3, 1, 3, 3, 3, 3, 1, 3, 3, 3, 3, 3,
    ]
    edges = b.all_edges()
    assert [(str(e.source), str(e.target)) for e in edges] == [
        ("0", "0000"),
        ("1", "1000"),
    ]
    assert all(e.q == Rational(1, 16) for e in edges)
    assert all(e.task == 1 and e.step_drawn == 4 for e in edges)
    # The targets pause nothing, their siblings carry the continued share.
    net = b.network(1)
    assert net.delay(B("0000")) == 0
    assert net.delay(B("0101")) == Rational(1, 15)


def test_atom_reference_run():
    b = build_atom(20)
    edges = b.all_edges()
    assert [(str(e.source), str(e.target), e.task, e.subtask, e.step_drawn) for e in edges] == [
        ("0", "0000000", 1, 1, 7)
    ]
    assert edges[0].q == Rational(1, 16)
    by_step = {p["step"]: p for p in b.provenance}
    assert by_step[7]["case"] == 2
    # The sibling subtask's session restarts past the drawn level.
    assert by_step[11]["case"] == 1
    assert by_step[12]["case"] == 1


def test_family_reference_run():
    b = build_atom_family(20)
    edges = b.all_edges()
    assert [(e.network_id, str(e.source), str(e.target)) for e in edges] == [
        (1, "0", "0000000")
    ]
    assert len(b.discards) == 1
    d = b.discards[0]
    assert d.network_id == 2
    assert [c.pattern() for c in d.cubes] == ["0000000"]
    assert d.bound == Rational(1, 16)
    # The discarded vertex pauses everything on the target network.
    assert b.network(2).delay(B("0000000")) == ONE
    frame = dict(
        (c.pattern(), v) for c, v in b.network(2).frames[8]
    )
    for pat in frame:
        assert not pat.startswith("0000000")


def test_family_records_discards_in_provenance():
    b = build_atom_family(20)
    step7 = b.provenance[6]
    assert step7["case"] == 2
    assert len(step7["discards"]) == 1
    assert step7["discards"][0]["network"] == 2
    assert step7["discards"][0]["bound"] == "1/16"


def test_family_wrap_collision_goes_inert():
    b = build_atom_family(21, network_count=2)
    step21 = b.provenance[20]
    assert step21["task"] == 6
    assert step21["case"] == 3
    assert step21["note"] == "base and target collide after wrapping"
    assert [(e.network_id, str(e.source)) for e in b.all_edges()] == [(1, "0")]


def test_hyperimmune_task_one_is_inert():
    b = build_hyperimmune(8)
    notes = [p["note"] for p in b.provenance if p["task"] == 1]
    assert notes
    assert all(n == "task 1 carries no decoded index" for n in notes)
    assert not [e for e in b.all_edges() if e.task == 1]


def test_hyperimmune_sparse_draw_shape():
    b = build_hyperimmune(32)
    sparse = [e for e in b.all_edges() if e.task % 2 == 1]
    assert len(sparse) == 32
    assert {e.step_drawn for e in sparse} == {18}
    assert all(e.network_id == 1 and e.q == Rational(1, 81) for e in sparse)
    for e in sparse:
        src, tgt = str(e.source), str(e.target)
        assert len(src) == 6
        assert tgt == src + "1" + "0" * (len(tgt) - len(src) - 1)
    # 2^5 class members: width-6 session frees the five leading positions.
    assert len({str(e.source)[:5] for e in sparse}) == 32


def test_hyperimmune_even_task_discards_on_target():
    b = build_hyperimmune(32)
    family_edges = [e for e in b.all_edges() if e.task == 2]
    assert len(family_edges) == 4
    assert {str(e.source) for e in family_edges} == {"000", "010", "100", "110"}
    recs = [d for d in b.discards if d.edge.task == 2]
    assert len(recs) == 4
    assert {d.network_id for d in recs} == {2}
    pats = {c.pattern() for d in recs for c in d.cubes}
    # Equal class suffixes give equal image patterns; the region is shared.
    assert len(pats) == 1
    assert sorted(str(d.bound) for d in recs) == [
        "1/1024", "1/16384", "1/4096", "1/65536",
    ]
    inside = next(iter(pats)).replace("*", "0")
    assert b.network(2).delay(B(inside)) == ONE


def test_divisible_reference_run_draws_nothing():
    b = build_divisible(20)
    assert not b.all_edges()
    assert not b.discards
    assert {p["case"] for p in b.provenance} <= {1, 3}


def test_divisible_flip_roster_draws_with_discards():
    b = build_divisible(6, operator_roster=FLIP_FIRST)
    edges = b.all_edges()
    assert [(str(e.source), str(e.target), e.step_drawn) for e in edges] == [
        ("0", "0000", 4),
        ("1", "10000", 5),
    ]
    assert [
        ([c.pattern() for c in d.cubes], str(d.bound)) for d in b.discards
    ] == [
        (["1111"], "1/16"),
        (["01111"], "1/32"),
    ]
    net = b.network(1)
    assert net.delay(B("1111")) == ONE
    assert net.delay(B("01111")) == ONE
    # Pre-draw mass of the first region: sixteenth of the level scaled by
    # the one earlier pause, within the recorded allowance.
    assert Rational(15, 256) <= Rational(1, 16)


def test_build_rejects_unknown_preset_before_running():
    cfg = RunConfig(preset="atom", depth=4)
    cfg.preset = "mystery"
    with pytest.raises(ConfigError):
        build(cfg)


def test_prefix_free_and_union_mass():
    roots = [B("01"), B("010"), B("0"), B("11"), B("110")]
    kept = prefix_free(roots)
    assert [str(r) for r in kept] == ["0", "11"]
    assert union_mass(roots) == Rational(3, 4)
    assert union_mass([]) == 0


def test_ml_test_nonstochastic_bounds():
    b = build_nonstochastic(20)
    m = ml_test(b)
    assert m.max_task == 5
    assert m.ok()
    one = m.per_index[1]
    assert one["roots"] == ["0000", "1000"]
    assert one["mass"] == Rational(1, 8)
    assert one["bound_sum"] == Rational(3, 8)
    assert one["bound_sum"] <= Rational(1, 2)
    for i in range(2, 6):
        assert m.per_index[i]["edge_count"] == 0
    assert m.tails[1]["mass"] == 0


def test_ml_test_atom_and_index_filter():
    b = build_atom(20)
    m = ml_test(b, index=1)
    assert set(m.per_index) == {1}
    assert m.per_index[1]["roots"] == ["0000000"]
    assert m.per_index[1]["mass"] == Rational(1, 128)
    assert m.ok()
    with pytest.raises(ConfigError):
        ml_test(b, index=40)


def test_ml_test_rejects_other_presets():
    b = build_atom_family(8)
    with pytest.raises(ConfigError):
        ml_test(b)


def test_builds_are_deterministic():
    first = build_hyperimmune(24)
    second = build_hyperimmune(24)
    assert first.provenance == second.provenance
    assert [e.to_record() for e in first.all_edges()] == [
        e.to_record() for e in second.all_edges()
    ]


def test_discard_allowance_accumulates():
    b = build_hyperimmune(32)
    assert b.discard_allowance(2, 29) == 0
    total = b.discard_allowance(2, 32)
    assert total == sum((d.bound for d in b.discards), Rational(0))
    assert total < Rational(1, 8)
