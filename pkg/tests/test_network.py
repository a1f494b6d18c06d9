import random
from fractions import Fraction

import pytest

from treeflow.bitseq import BitString
from treeflow.cubes import Cube
from treeflow.network import (
    ConstructionError,
    DelayTable,
    EdgeClass,
    ElementaryNetwork,
    ExtraEdge,
    rat_parse,
    rat_str,
    uniform_interval_mass,
)

B = BitString.from_str
F = Fraction


def build_e1():
    """Depth-3 fixture: s("0") = 1/3, one extra edge ("0", "000") with q = 1/3."""
    net = ElementaryNetwork()
    t1 = DelayTable(1)
    t1.set_vertex(B("0"), F(1, 3))
    net.commit_level(t1)
    net.commit_level(DelayTable(2))
    edge = ExtraEdge(B("0"), B("000"), F(1, 3), task=1, subtask=None,
                     network_id=1, step_drawn=3)
    cls = EdgeClass(Cube.vertex(B("0")), B("00"), F(1, 3), (edge,))
    net.commit_level(DelayTable(3), [cls])
    return net


class DenseEval:
    """Brute-force oracle: materialize every vertex and apply the recurrences
    literally. Independent of the sparse engine's cubes and ledgers."""

    def __init__(self, tables, edges, depth):
        self.depth = depth
        self.s = {}
        for n in range(depth + 1):
            for v in range(1 << n):
                x = BitString(n, v)
                self.s[x] = tables[n].delay(x)
        self.R = {BitString(0, 0): F(1)}
        by_target = {}
        for e in edges:
            by_target.setdefault(e.target, []).append(e)
        for n in range(1, depth + 1):
            for v in range(1 << n):
                x = BitString(n, v)
                parent = x.truncate(n - 1)
                r = self.R[parent] * (1 - self.s[parent]) / 2
                for e in by_target.get(x, []):
                    r += e.q * self.R[e.source]
                self.R[x] = r
        self.edges = edges

    def P(self, x):
        total = self.R[x]
        for e in self.edges:
            if e.source.is_strict_prefix_of(x) and x.is_strict_prefix_of(e.target):
                total += e.q * self.R[e.source]
        return total

    def total_R(self, n):
        return sum(self.R[BitString(n, v)] for v in range(1 << n))

    def inflow(self, n):
        return sum(e.q * self.R[e.source] for e in self.edges if len(e.target) == n)


def test_e1_golden_values():
    net = build_e1()
    assert net.delay(B("0")) == F(1, 3)
    assert net.delay(B("1")) == 0
    assert net.frame_eval(B("")) == 1
    assert net.frame_eval(B("00")) == F(1, 6)
    assert net.frame_eval(B("000")) == F(1, 4)
    assert net.frame_eval(B("001")) == F(1, 12)
    assert net.flow_eval(B("00")) == F(1, 3)
    assert net.flow_eval(B("000")) == F(1, 4)
    assert net.flow_eval(B("001")) == F(1, 12)
    assert net.flow_eval(B("000")) + net.flow_eval(B("001")) == net.flow_eval(B("00"))
    stats = net.level_stats(3)
    assert stats.total_R == 1
    assert stats.extra_inflow == F(1, 6)
    assert stats.s_n == F(5, 6)
    assert net.level_stats(0).s_n == 1
    assert net.pattern_mass(3, Cube.from_pattern("000")) == F(1, 4)
    assert net.pattern_mass(3, Cube.whole_level(3)) == 1


def test_e1_flow_dominates_frame_everywhere():
    net = build_e1()
    for n in range(4):
        for v in range(1 << n):
            x = BitString(n, v)
            assert net.flow_eval(x) >= net.frame_eval(x)


def test_e1_matches_brute_force():
    net = build_e1()
    oracle = DenseEval(net.tables, net.edges, 3)
    for n in range(4):
        for v in range(1 << n):
            x = BitString(n, v)
            assert net.frame_eval(x) == oracle.R[x], x
            assert net.flow_eval(x) == oracle.P(x), x
        assert net.level_stats(n).total_R == oracle.total_R(n)
        assert net.level_stats(n).extra_inflow == oracle.inflow(n)


def test_uniform_network_is_halving():
    net = ElementaryNetwork()
    for n in range(1, 7):
        net.commit_level(DelayTable(n))
    for n in range(7):
        assert net.frame_eval(BitString(n, 0)) == F(1, 1 << n)
        assert net.level_stats(n).s_n == 1
    assert net.pattern_mass(5, Cube.from_pattern("0****")) == F(1, 2)


def test_uniform_interval_mass():
    assert uniform_interval_mass(B("")) == 1
    assert uniform_interval_mass(B("01")) == F(1, 4)
    x = B("0110")
    assert (
        uniform_interval_mass(x.child(0)) + uniform_interval_mass(x.child(1))
        == uniform_interval_mass(x)
    )


def test_delay_table_precedence():
    t = DelayTable(4, default=F(1, 5))
    t.add_subtree(B("01"), F(1, 7))
    t.add_suffix(Cube.from_pattern("*11*"), F(1, 9))
    t.set_vertex(B("0110"), F(1, 2))
    assert t.delay(B("1010")) == F(1, 5)
    assert t.delay(B("0100")) == F(1, 7)
    assert t.delay(B("0111")) == F(1, 9)  # suffix beats subtree
    assert t.delay(B("0110")) == F(1, 2)  # vertex beats suffix
    parts = t.s_partition()
    # Partition covers the level exactly once with the resolved values.
    seen = {}
    for cube, v in parts:
        for x in cube.members():
            assert x not in seen
            seen[x] = v
    assert len(seen) == 16
    for x, v in seen.items():
        assert v == t.delay(x)


def test_delay_table_rejects_bad_values_and_conflicts():
    t = DelayTable(3)
    with pytest.raises(ConstructionError):
        t.set_vertex(B("000"), F(2, 5))
    with pytest.raises(ConstructionError):
        t.set_vertex(B("000"), F(3, 2))
    t.set_vertex(B("000"), F(1, 4))
    t.set_vertex(B("000"), F(1, 4))  # idempotent
    with pytest.raises(ConstructionError):
        t.set_vertex(B("000"), F(1, 5))
    t.add_subtree(B("01"), F(1, 2))
    with pytest.raises(ConstructionError):
        t.add_subtree(B("0"), F(1, 3))
    t.add_suffix(Cube.from_pattern("**1"), F(1, 6))
    with pytest.raises(ConstructionError):
        t.add_suffix(Cube.from_pattern("*11"), F(1, 7))
    # Equal-value overlap is fine: the overlap is carved away.
    t.add_suffix(Cube.from_pattern("1**"), F(1, 6))
    assert t.delay(B("101")) == F(1, 6)
    assert t.delay(B("100")) == F(1, 6)


def test_edge_validation():
    with pytest.raises(ConstructionError):
        ExtraEdge(B("0"), B("00"), F(1, 3), 1, None, 1, 2)  # gap 1
    with pytest.raises(ConstructionError):
        ExtraEdge(B("1"), B("000"), F(1, 3), 1, None, 1, 3)  # not a prefix
    net = ElementaryNetwork()
    t1 = DelayTable(1)
    t1.set_vertex(B("0"), F(1, 3))
    net.commit_level(t1)
    net.commit_level(DelayTable(2))
    bad_q = ExtraEdge(B("0"), B("000"), F(1, 4), 1, None, 1, 3)
    with pytest.raises(ConstructionError):
        net.commit_level(
            DelayTable(3),
            [EdgeClass(Cube.vertex(B("0")), B("00"), F(1, 4), (bad_q,))],
        )


def test_second_outgoing_edge_rejected():
    net = ElementaryNetwork()
    t1 = DelayTable(1)
    t1.set_vertex(B("0"), F(1, 3))
    net.commit_level(t1)
    net.commit_level(DelayTable(2))
    e1 = ExtraEdge(B("0"), B("000"), F(1, 3), 1, None, 1, 3)
    net.commit_level(DelayTable(3), [EdgeClass(Cube.vertex(B("0")), B("00"), F(1, 3), (e1,))])
    e2 = ExtraEdge(B("0"), B("0000"), F(1, 3), 1, None, 1, 4)
    with pytest.raises(ConstructionError):
        net.commit_level(
            DelayTable(4),
            [EdgeClass(Cube.vertex(B("0")), B("000"), F(1, 3), (e2,))],
        )


def random_network(seed, depth=7):
    """Random valid network: random 1/M delays, class edges with q = s(source)."""
    rng = random.Random(seed)
    net = ElementaryNetwork()
    step = 0
    for n in range(1, depth + 1):
        step += 1
        t = DelayTable(n, default=F(1, rng.choice([1000, 50, 9])) if rng.random() < 0.5 else F(0))
        for _ in range(rng.randrange(3)):
            x = BitString(n, rng.randrange(1 << n))
            if x not in t.vertex:
                t.set_vertex(x, F(1, rng.randrange(2, 9)))
        if rng.random() < 0.4 and n >= 2:
            root = BitString(rng.randrange(1, n), 0)
            root = BitString(len(root), rng.randrange(1 << len(root)))
            try:
                t.add_subtree(root, F(1, rng.randrange(2, 7)))
            except ConstructionError:
                pass
        classes = []
        if n >= 3:
            # Try a few single extra edges from vertices with positive delay.
            for _ in range(rng.randrange(3)):
                m = rng.randrange(1, n - 1)
                x = BitString(m, rng.randrange(1 << m))
                s = net.delay(x)
                if s == 0 or net.outgoing_edge(x) is not None:
                    continue
                if any(e.source == x for c in classes for e in c.edges):
                    continue
                tail = BitString(n - m, rng.randrange(1 << (n - m)))
                e = ExtraEdge(x, x.concat(tail), s, task=1, subtask=None,
                              network_id=1, step_drawn=step)
                classes.append(EdgeClass(Cube.vertex(x), tail, s, (e,)))
        net.commit_level(t, classes)
    return net


@pytest.mark.parametrize("seed", range(8))
def test_random_networks_match_brute_force(seed):
    net = random_network(seed)
    oracle = DenseEval(net.tables, net.edges, net.depth)
    for n in range(net.depth + 1):
        stats = net.level_stats(n)
        assert stats.total_R == oracle.total_R(n)
        assert stats.extra_inflow == oracle.inflow(n)
        for v in range(1 << n):
            x = BitString(n, v)
            assert net.frame_eval(x) == oracle.R[x]
            assert net.flow_eval(x) == oracle.P(x)


@pytest.mark.parametrize("seed", range(4))
def test_random_networks_satisfy_flow_laws(seed):
    net = random_network(seed)
    for n in range(net.depth):
        for v in range(1 << n):
            x = BitString(n, v)
            px = net.flow_eval(x)
            p0 = net.flow_eval(x.child(0))
            p1 = net.flow_eval(x.child(1))
            assert p0 + p1 <= px
            # Equality exactly where nothing is terminally delayed at x:
            # either s(x) = 0, or the delayed share leaves along an extra
            # edge, or no mass reaches x at all.
            s = net.delay(x)
            e = net.outgoing_edge(x)
            out_extra = e.q if e is not None else F(0)
            if net.frame_eval(x) * (s - out_extra) == 0:
                assert p0 + p1 == px


@pytest.mark.parametrize("seed", range(4))
def test_random_network_outflow_bound(seed):
    net = random_network(seed)
    for n in range(net.depth + 1):
        for v in range(1 << n):
            x = BitString(n, v)
            s = net.delay(x)
            e = net.outgoing_edge(x)
            out = (1 - s) if n < net.depth else F(0)
            if e is not None:
                out += e.q
            assert out <= 1


def test_pre_frame_excludes_step_edges():
    net = ElementaryNetwork()
    t1 = DelayTable(1)
    t1.set_vertex(B("0"), F(1, 3))
    net.commit_level(t1)
    net.commit_level(DelayTable(2))
    # Pre-commit view of level 3: pure push, no inflow.
    assert net.pattern_mass(3, Cube.from_pattern("000"), pre=True) == F(1, 12)
    e = ExtraEdge(B("0"), B("000"), F(1, 3), 1, None, 1, 3)
    net.commit_level(DelayTable(3), [EdgeClass(Cube.vertex(B("0")), B("00"), F(1, 3), (e,))])
    assert net.pattern_mass(3, Cube.from_pattern("000")) == F(1, 4)


def test_rat_round_trip():
    assert rat_str(F(5, 6)) == "5/6"
    assert rat_parse("5/6") == F(5, 6)
    assert rat_parse(rat_str(F(0))) == 0
