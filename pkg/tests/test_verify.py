"""Checks over finished runs, and controls that corrupt a bundle in one
place and watch exactly one check trip."""

import dataclasses
from fractions import Fraction

import pytest

from treeflow.bitseq import BitString
from treeflow.constructions import (
    RunConfig,
    build_atom,
    build_atom_family,
    build_divisible,
    build_hyperimmune,
    build_nonstochastic,
)
from treeflow.network import ExtraEdge
from treeflow.scheduler import ResourceLimit
from treeflow.verify import (
    check_extension_shadow,
    check_ratio_identity,
    dense_oracle,
    run_checks,
)

DEFAULT_NAMES = [
    "delay_form",
    "no_overlap",
    "conservation",
    "sn_bound",
    "duplication",
    "ratio_identity",
    "separators",
    "discards",
]


def _by_name(reports):
    return {r.name: r for r in reports}


def _assert_only_fails(reports, target):
    by = _by_name(reports)
    assert not by[target].passed, f"{target} did not trip"
    leaked = [
        (n, r.witness) for n, r in by.items() if n != target and not r.passed
    ]
    assert leaked == [], leaked
    return by[target]


@pytest.fixture(scope="module")
def hyper32():
    return build_hyperimmune(32)


BUILDERS = {
    "nonstochastic": build_nonstochastic,
    "divisible": build_divisible,
    "atom": build_atom,
    "family": build_atom_family,
    "hyperimmune": build_hyperimmune,
}


@pytest.mark.parametrize("preset", sorted(BUILDERS))
def test_all_checks_clean_at_depth_12(preset):
    reports = run_checks(BUILDERS[preset](12))
    names = [r.name for r in reports]
    assert names[: len(DEFAULT_NAMES)] == DEFAULT_NAMES
    if preset in ("nonstochastic", "atom"):
        assert names[-1] == "extension_shadow"
    failed = [(r.name, r.witness) for r in reports if not r.passed]
    assert failed == []


def test_report_payload_shape():
    reports = run_checks(build_atom(8))
    for r in reports:
        payload = r.to_payload()
        assert payload["name"] == r.name
        assert payload["passed"] is True
        assert isinstance(payload["details"], dict)
        assert payload["levels"] == [0, 8]
        assert payload["runtime"] >= 0


def test_unknown_check_name_rejected():
    b = build_atom(6)
    with pytest.raises(KeyError):
        run_checks(b, names=["delay_form", "bogus"])


def test_deep_multi_network_run_clean(hyper32):
    reports = run_checks(hyper32)
    failed = [(r.name, r.witness) for r in reports if not r.passed]
    assert failed == []
    by = _by_name(reports)
    assert sum(len(net.edges) for net in hyper32.networks) == 36
    assert len(hyper32.discards) == 4
    assert by["duplication"].details["classes"] >= 2
    assert 1 in by["ratio_identity"].details["covered"]


def test_deep_sparse_smoke():
    b = build_atom_family(48)
    assert sum(len(net.edges) for net in b.networks) == 1
    assert len(b.discards) == 1
    names = ["delay_form", "no_overlap", "conservation", "sn_bound", "duplication"]
    failed = [(r.name, r.witness) for r in run_checks(b, names=names) if not r.passed]
    assert failed == []


def test_ratio_identity_covers_every_task_at_depth_20():
    for b in (build_atom(20), build_atom_family(20)):
        rep = check_ratio_identity(b, min_coverage=Fraction(4, 5))
        assert rep.passed, rep.witness
        assert rep.details["covered"] == [1, 2, 3, 4, 5]


def test_ratio_identity_coverage_bar_can_trip(hyper32):
    # Deep runs reset most session starts, so only a couple of tasks have
    # settled levels to draw pairs from; the strict bar has to notice.
    rep = check_ratio_identity(hyper32, min_coverage=Fraction(4, 5))
    assert not rep.passed
    assert "coverage" in rep.witness


def test_poked_delay_value_trips_only_delay_form():
    b = build_nonstochastic(12)
    table = b.network(1).tables[-1]
    table.vertex[BitString(12, 0)] = Fraction(2, 5)
    table._partition = None
    rep = _assert_only_fails(run_checks(b), "delay_form")
    assert rep.witness["value"] == "2/5"
    assert rep.witness["level"] == 12


def test_nested_edge_pair_trips_only_no_overlap():
    b = build_nonstochastic(12)
    net = b.network(1)
    # Weightless pair sitting below every settled session start, so the
    # crossing structure is the only thing wrong with it.
    outer = ExtraEdge(
        source=BitString(10, 0),
        target=BitString(12, 0),
        q=Fraction(0),
        task=1,
        subtask=None,
        network_id=1,
        step_drawn=4,
    )
    inner = ExtraEdge(
        source=BitString(11, 0),
        target=BitString(13, 0),
        q=Fraction(0),
        task=1,
        subtask=None,
        network_id=1,
        step_drawn=4,
    )
    net.edges.extend([outer, inner])
    rep = _assert_only_fails(run_checks(b), "no_overlap")
    assert rep.witness["outer"] == ["0" * 10, "0" * 12]
    assert rep.witness["inner"] == ["0" * 11, "0" * 13]


def test_corrupted_weight_trips_only_conservation():
    b = build_nonstochastic(12)
    net = b.network(1)
    e = net.edges[0]
    # Flat list only: flow paths keep using the clean lookup table, so
    # the mismatch shows up as stored inflow, not everywhere at once.
    net.edges[0] = dataclasses.replace(e, q=e.q * 2)
    rep = _assert_only_fails(run_checks(b), "conservation")
    assert rep.witness["identity"] == "stored inflow"
    assert rep.witness["level"] == len(e.target)


def test_moved_class_member_trips_only_duplication(hyper32):
    b = build_hyperimmune(32)
    net = b.network(1)
    batch = sorted(
        (e for e in net.edges if e.step_drawn == 18),
        key=lambda e: e.source.value,
    )
    assert len(batch) == 32
    first, second = batch[0], batch[1]
    # Same class, same weight, same tail, but two members now share one
    # free prefix. Sources at this level still carry equal mass, so the
    # level balance stays intact.
    moved = dataclasses.replace(second, source=first.source, target=first.target)
    net.edges[net.edges.index(second)] = moved
    rep = _assert_only_fails(run_checks(b), "duplication")
    assert rep.witness["network"] == 1
    assert rep.witness["size"] == 32
    assert rep.witness["expected_size"] == 32


def test_edge_across_session_start_trips_only_separators():
    b = build_nonstochastic(12)
    net = b.network(1)
    spanner = ExtraEdge(
        source=BitString(2, 0b11),
        target=BitString(5, 0b11000),
        q=Fraction(0),
        task=1,
        subtask=None,
        network_id=1,
        step_drawn=4,
    )
    net.edges.append(spanner)
    rep = _assert_only_fails(run_checks(b), "separators")
    assert rep.witness["task"] == 2
    assert rep.witness["w"] == 5
    assert rep.witness["edge"] == ["11", "11000"]


def test_inflated_discard_bound_trips_only_discards():
    b = build_atom_family(12)
    assert b.discards
    b.discards[0] = dataclasses.replace(b.discards[0], bound=Fraction(1, 8))
    rep = _assert_only_fails(run_checks(b), "discards")
    assert rep.witness["bound"] == "1/8"
    assert rep.witness["expected"] == "1/16"


def test_vertex_replay_agrees_and_catches_wrong_installs():
    cfg = RunConfig(preset="nonstochastic", depth=8)
    assert dense_oracle(cfg).passed
    rep = dense_oracle(cfg, rho_override=4)
    assert not rep.passed
    assert rep.details["differences"] >= 1
    assert rep.witness["first"]


def test_vertex_replay_refuses_deep_runs():
    with pytest.raises(ResourceLimit):
        dense_oracle(RunConfig(preset="nonstochastic", depth=20))


def test_shadow_walk_violation_branch():
    b = build_nonstochastic(8)
    clean = check_extension_shadow(b, task=1, admits=lambda i, x: False)
    assert clean.passed
    assert clean.details["qualifying"] == 0
    # Force every prefix to admit: paths missing the drawn edges have no
    # way to satisfy the walk and must be reported.
    rep = check_extension_shadow(b, task=1, admits=lambda i, x: True)
    assert not rep.passed
    assert rep.witness["task"] == 1
    path = rep.witness["path"]
    assert not path.startswith("0000")
    assert not path.startswith("1000")
