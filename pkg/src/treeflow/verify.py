"""Invariant checks over completed runs.

Each check reads a finished bundle and re-derives one structural fact from
the stored tables, frames, and edge lists, reporting an exact witness when
the fact fails. Sampled checks draw from a seeded generator recorded in
the report, so reruns see the same samples.
"""

from __future__ import annotations

import dataclasses
import random
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from treeflow.bitseq import BitString, index_of, restricted_triple, unpair_1
from treeflow.cubes import Cube
from treeflow.network import rat_str
from treeflow.operators import apply_modified
from treeflow.scheduler import ResourceLimit

Rational = Fraction
ZERO = Fraction(0)
ONE = Fraction(1)
HALF = Fraction(1, 2)

T2_PRESETS = {"atom", "family", "hyperimmune"}
LENGTH_PRESETS = {"nonstochastic", "atom"}

ORACLE_DEPTH_CAP = 14


@dataclass
class CheckReport:
    name: str
    passed: bool
    witness: Optional[dict] = None
    details: dict = field(default_factory=dict)
    levels: Optional[tuple[int, int]] = None
    runtime: float = 0.0

    def to_payload(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "witness": self.witness,
            "details": self.details,
            "levels": list(self.levels) if self.levels else None,
            "runtime": round(self.runtime, 6),
        }


def _report(name, start, passed, witness=None, details=None, levels=None):
    return CheckReport(
        name=name,
        passed=passed,
        witness=witness,
        details=details or {},
        levels=levels,
        runtime=time.monotonic() - start,
    )


def _frame_total(net, n) -> Fraction:
    return sum((v * c.count() for c, v in net.frames[n]), ZERO)


def _pushed_into(net, n) -> Fraction:
    """Mass the level n-1 frame sends to level n through the tree edges."""
    total = ZERO
    parts = net.tables[n - 1].s_partition()
    for c, v in net.frames[n - 1]:
        if v == 0:
            continue
        for c2, s in parts:
            inter = c.intersect(c2)
            if inter is not None:
                total += v * (1 - s) * inter.count()
    return total


def _pre_mass(net, level, cubes) -> Fraction:
    """Mass arriving at `cubes` (level `level`) before level edges land."""
    total = ZERO
    parts = net.tables[level - 1].s_partition()
    for c, v in net.frames[level - 1]:
        if v == 0:
            continue
        for c2, s in parts:
            if s == 1:
                continue
            inter = c.intersect(c2)
            if inter is None:
                continue
            child = inter.extend(1)
            for cube in cubes:
                hit = child.intersect(cube)
                if hit is not None:
                    total += v * (1 - s) / 2 * hit.count()
    return total


def _stream_task(bundle, n: int) -> int:
    return bundle.state.stream.task(n)


def _active_tasks(bundle) -> list[int]:
    return sorted({_stream_task(bundle, n) for n in range(1, bundle.depth + 1)})


def _stable_tasks(bundle) -> dict[int, int]:
    """Tasks whose session start no longer moves, mapped to their w."""
    depth = bundle.depth
    cutoff = (3 * depth) // 4
    out = {}
    for i in _active_tasks(bundle):
        w = bundle.state.w_session(i, depth)
        if w is not None and bundle.state.barrier(i) <= cutoff:
            out[i] = w
    return out


def _random_member(cube: Cube, rng: random.Random) -> BitString:
    fixed = dict(cube.fixed)
    value = 0
    for pos in range(1, cube.length + 1):
        value = (value << 1) | fixed.get(pos, rng.randrange(2))
    return BitString(cube.length, value)


def _acting_net(bundle, i: int) -> int:
    preset = bundle.config.preset
    count = bundle.config.networks
    if preset == "family":
        base, _target, _op = restricted_triple(i)
        return (base - 1) % count + 1
    if preset == "hyperimmune":
        if i == 1:
            return 1
        if i % 2 == 0:
            base, _target, _op = restricted_triple(i // 2)
            return (base - 1) % count + 1
        return (unpair_1((i - 1) // 2) - 1) % count + 1
    return 1


# --- the checks ---------------------------------------------------------


def check_delay_form(bundle) -> CheckReport:
    """Every stored delay is 0 or a unit fraction 1/M."""
    start = time.monotonic()

    def bad(v):
        return v != 0 and (v.numerator != 1 or not 0 < v <= 1)

    for net in bundle.networks:
        for table in net.tables:
            entries = [("default", None, table.default)]
            entries += [("vertex", str(x), v) for x, v in table.vertex.items()]
            entries += [("suffix", c.pattern(), v) for c, v in table.suffix]
            entries += [("subtree", str(r), v) for r, v in table.subtree.items()]
            for kind, where, v in entries:
                if bad(Fraction(v)):
                    return _report(
                        "delay_form",
                        start,
                        False,
                        witness={
                            "network": net.network_id,
                            "level": table.level,
                            "kind": kind,
                            "where": where,
                            "value": rat_str(Fraction(v)),
                        },
                    )
    return _report(
        "delay_form", start, True, levels=(0, bundle.depth)
    )


def check_no_overlap(bundle) -> CheckReport:
    """No pair of edges with nested sources and a crossing in between."""
    start = time.monotonic()
    for net in bundle.networks:
        for a in net.edges:
            for b in net.edges:
                if (
                    b.source.is_strict_prefix_of(a.source)
                    and a.source.is_strict_prefix_of(b.target)
                    and len(b.target) < len(a.target)
                ):
                    return _report(
                        "no_overlap",
                        start,
                        False,
                        witness={
                            "network": net.network_id,
                            "outer": [str(b.source), str(b.target)],
                            "inner": [str(a.source), str(a.target)],
                        },
                    )
    return _report("no_overlap", start, True, levels=(0, bundle.depth))


def check_conservation(bundle) -> CheckReport:
    """Per level: frame total equals pushed share plus edge inflow, the
    stored aggregates match both, and held mass splits into the delayed
    part plus exactly the recorded discard regions."""
    start = time.monotonic()

    def fail(net, n, what, lhs, rhs):
        return _report(
            "conservation",
            start,
            False,
            witness={
                "network": net.network_id,
                "level": n,
                "identity": what,
                "lhs": rat_str(lhs),
                "rhs": rat_str(rhs),
            },
        )

    for net in bundle.networks:
        for n in range(bundle.depth + 1):
            total = _frame_total(net, n)
            agg = net.aggregates[n]
            if total != agg.total_R:
                return fail(net, n, "stored total", total, agg.total_R)
            if n == 0:
                continue
            pushed = _pushed_into(net, n)
            inflow = sum(
                (
                    e.q * net.frame_eval(e.source)
                    for e in net.edges
                    if len(e.target) == n
                ),
                ZERO,
            )
            if inflow != agg.extra_inflow:
                return fail(net, n, "stored inflow", inflow, agg.extra_inflow)
            if total != pushed + inflow:
                return fail(net, n, "level balance", total, pushed + inflow)
        # Held mass at each level: the s = 1 region must be exactly the
        # recorded discard regions, nothing more.
        for n in range(bundle.depth + 1):
            dead = [c for c, s in net.tables[n].s_partition() if s == 1]
            recorded = [
                c
                for d in bundle.discards
                if d.network_id == net.network_id and d.edge.step_drawn == n
                for c in d.cubes
            ]
            extra = dead
            for cube in recorded:
                extra = [p for piece in extra for p in piece.subtract(cube)]
            if extra:
                return _report(
                    "conservation",
                    start,
                    False,
                    witness={
                        "network": net.network_id,
                        "level": n,
                        "identity": "unrecorded dead region",
                        "region": extra[0].pattern(),
                    },
                )
            orphan = recorded
            for cube in dead:
                orphan = [p for piece in orphan for p in piece.subtract(cube)]
            if orphan:
                return _report(
                    "conservation",
                    start,
                    False,
                    witness={
                        "network": net.network_id,
                        "level": n,
                        "identity": "recorded region not silenced",
                        "region": orphan[0].pattern(),
                    },
                )
    return _report("conservation", start, True, levels=(0, bundle.depth))


def check_sn_bound(bundle) -> CheckReport:
    """Level aggregates stay above the install-loss budget and 1/2."""
    start = time.monotonic()
    rho = bundle.config.rho_base
    for net in bundle.networks:
        loss = ZERO
        for n in range(bundle.depth + 1):
            if n >= 1:
                loss += Fraction(1, (n + rho) ** 2)
            budget = ONE - loss - bundle.discard_allowance(net.network_id, n)
            s_n = net.aggregates[n].s_n
            if s_n < budget or s_n < HALF:
                return _report(
                    "sn_bound",
                    start,
                    False,
                    witness={
                        "network": net.network_id,
                        "level": n,
                        "s_n": rat_str(s_n),
                        "budget": rat_str(budget),
                    },
                )
    return _report("sn_bound", start, True, levels=(0, bundle.depth))


def check_duplication(bundle) -> CheckReport:
    """Edges drawn at one step split into suffix classes: equal weight,
    equal tail, and one member per free prefix."""
    start = time.monotonic()
    if bundle.config.preset not in T2_PRESETS:
        return _report(
            "duplication", start, True, details={"note": "not applicable"}
        )
    w_by_step = {p["step"]: p["w"] for p in bundle.provenance}
    classes = 0
    for net in bundle.networks:
        groups: dict[tuple, list] = {}
        for e in net.edges:
            w = w_by_step[e.step_drawn]
            tail = e.target.suffix_from(len(e.source) + 1)
            key = (
                e.step_drawn,
                len(e.source),
                str(e.source.suffix_from(w)),
                str(tail),
            )
            groups.setdefault(key, []).append((e, w))
        classes += len(groups)
        for key, members in groups.items():
            w = members[0][1]
            want = 1 << (w - 1)
            qs = {e.q for e, _ in members}
            prefixes = {
                e.source.value >> (len(e.source) - w + 1) for e, _ in members
            }
            if len(qs) != 1 or len(members) != want or len(prefixes) != want:
                return _report(
                    "duplication",
                    start,
                    False,
                    witness={
                        "network": net.network_id,
                        "class": list(key),
                        "size": len(members),
                        "expected_size": want,
                        "weights": sorted(rat_str(q) for q in qs),
                    },
                )
    return _report(
        "duplication", start, True, details={"classes": classes},
        levels=(0, bundle.depth),
    )


def check_ratio_identity(
    bundle, samples: int = 1000, min_coverage: Optional[Fraction] = None
) -> CheckReport:
    """Flows inside suffix-equivalent subtrees stay proportional: for a
    class pair y, z the conditional flows against their width-w prefixes
    agree exactly. Pairs straddling an unsettled task level are skipped."""
    start = time.monotonic()
    if bundle.config.preset not in T2_PRESETS:
        return _report(
            "ratio_identity", start, True, details={"note": "not applicable"}
        )
    depth = bundle.depth
    stable = _stable_tasks(bundle)
    tasks = _active_tasks(bundle)
    usable: dict[int, list[int]] = {}
    for i, w in stable.items():
        levels = [
            m for m in range(w, depth + 1) if _stream_task(bundle, m) == i
        ]
        if levels:
            usable[i] = levels
    rng = random.Random(f"{bundle.config.seed}:ratio")
    order = sorted(usable)
    included = 0
    skipped = {"straddle": 0, "zero_prefix_flow": 0}
    covered = set()
    for t in range(samples):
        if not order:
            break
        i = order[t % len(order)]
        w = stable[i]
        m = rng.choice(usable[i])
        if any(
            _stream_task(bundle, lev) not in stable
            for lev in range(w + 1, m + 1)
        ):
            skipped["straddle"] += 1
            continue
        net = bundle.network(_acting_net(bundle, i))
        y = BitString(m, rng.randrange(1 << m))
        low = m - w + 1
        z = BitString(
            m, (rng.randrange(1 << (w - 1)) << low) | (y.value & ((1 << low) - 1))
        )
        py_root = net.flow_eval(y.truncate(w))
        pz_root = net.flow_eval(z.truncate(w))
        if py_root == 0 or pz_root == 0:
            skipped["zero_prefix_flow"] += 1
            continue
        if net.flow_eval(y) * pz_root != net.flow_eval(z) * py_root:
            return _report(
                "ratio_identity",
                start,
                False,
                witness={
                    "task": i,
                    "w": w,
                    "network": net.network_id,
                    "y": str(y),
                    "z": str(z),
                    "P_y": rat_str(net.flow_eval(y)),
                    "P_z": rat_str(net.flow_eval(z)),
                    "P_y_root": rat_str(py_root),
                    "P_z_root": rat_str(pz_root),
                },
            )
        included += 1
        covered.add(i)
    coverage = Fraction(len(covered), len(tasks)) if tasks else ONE
    details = {
        "samples": samples,
        "included": included,
        "skipped": skipped,
        "tasks": len(tasks),
        "covered": sorted(covered),
        "coverage": rat_str(coverage),
        "stable": {str(i): w for i, w in sorted(stable.items())},
    }
    # Every settled task with levels to draw from must contribute at
    # least one compared pair; a stricter coverage bar over all active
    # tasks applies when the caller sets one.
    missing = sorted(set(usable) - covered)
    passed = not missing
    witness = {"uncovered_settled_tasks": missing} if missing else None
    if passed and min_coverage is not None and coverage < min_coverage:
        passed = False
        witness = {"coverage": rat_str(coverage)}
    return _report(
        "ratio_identity",
        start,
        passed,
        witness=witness,
        details=details,
        levels=(0, depth),
    )


def check_separators(bundle, sample_cap: int = 512) -> CheckReport:
    """Levels no edge crosses: flow halves from parent to child there.
    Each settled task's session start must itself be such a level on the
    network the task acts on."""
    start = time.monotonic()
    depth = bundle.depth
    rng = random.Random(f"{bundle.config.seed}:separators")
    separators: dict[int, list[int]] = {}
    for net in bundle.networks:
        levels = [
            n
            for n in range(depth + 1)
            if all(
                len(e.source) >= n or len(e.target) < n for e in net.edges
            )
        ]
        separators[net.network_id] = levels
        for n in levels:
            if n == 0:
                continue
            if (1 << n) <= 4096:
                values = range(1 << n)
            else:
                values = [rng.randrange(1 << n) for _ in range(sample_cap)]
            for value in values:
                x = BitString(n, value)
                if net.flow_eval(x) > net.flow_eval(x.truncate(n - 1)) / 2:
                    return _report(
                        "separators",
                        start,
                        False,
                        witness={
                            "network": net.network_id,
                            "level": n,
                            "vertex": str(x),
                            "P": rat_str(net.flow_eval(x)),
                            "P_parent": rat_str(net.flow_eval(x.truncate(n - 1))),
                        },
                    )
    stable = _stable_tasks(bundle)
    for i, w in sorted(stable.items()):
        net = bundle.network(_acting_net(bundle, i))
        for e in net.edges:
            if len(e.source) < w <= len(e.target):
                return _report(
                    "separators",
                    start,
                    False,
                    witness={
                        "task": i,
                        "w": w,
                        "network": net.network_id,
                        "edge": [str(e.source), str(e.target)],
                    },
                )
    return _report(
        "separators",
        start,
        True,
        details={
            "separators": {str(k): v for k, v in separators.items()},
            "session_starts": {str(i): w for i, w in sorted(stable.items())},
            "unsettled": sorted(set(_active_tasks(bundle)) - set(stable)),
        },
        levels=(0, depth),
    )


def check_discards(bundle, member_cap: int = 4096) -> CheckReport:
    """Recorded discards respect the draw-time mass bound, and silenced
    vertices pass nothing on: both children carry zero flow."""
    start = time.monotonic()
    checked = 0
    sampled = False
    rng = random.Random(f"{bundle.config.seed}:discards")
    for d in bundle.discards:
        net = bundle.network(d.network_id)
        level = d.edge.step_drawn
        want = Fraction(1, 1 << (index_of(d.edge.source) + 3))
        if d.bound != want:
            return _report(
                "discards",
                start,
                False,
                witness={
                    "network": d.network_id,
                    "level": level,
                    "bound": rat_str(d.bound),
                    "expected": rat_str(want),
                },
            )
        mass = _pre_mass(net, level, list(d.cubes))
        if mass > d.bound:
            return _report(
                "discards",
                start,
                False,
                witness={
                    "network": d.network_id,
                    "level": level,
                    "mass": rat_str(mass),
                    "bound": rat_str(d.bound),
                    "patterns": [c.pattern() for c in d.cubes],
                },
            )
        if level + 1 > bundle.depth:
            continue
        for cube in d.cubes:
            if cube.count() <= member_cap:
                members = list(cube.members(cap=member_cap))
            else:
                sampled = True
                members = [_random_member(cube, rng) for _ in range(64)]
            for v in members:
                for b in (0, 1):
                    child = v.child(b)
                    if net.flow_eval(child) != 0:
                        return _report(
                            "discards",
                            start,
                            False,
                            witness={
                                "network": d.network_id,
                                "vertex": str(v),
                                "child": str(child),
                                "P": rat_str(net.flow_eval(child)),
                            },
                        )
                checked += 1
    return _report(
        "discards",
        start,
        True,
        details={
            "records": len(bundle.discards),
            "vertices_checked": checked,
            "sampled": sampled,
        },
        levels=(0, bundle.depth),
    )


def check_extension_shadow(
    bundle,
    task: Optional[int] = None,
    admits: Optional[Callable[[int, BitString], bool]] = None,
) -> CheckReport:
    """Support paths all of whose prefixes could still satisfy a task's
    predicate must run through one of that task's edges or over an s = 1
    vertex. Needs full paths, so depths stay small."""
    start = time.monotonic()
    depth = bundle.depth
    if depth > ORACLE_DEPTH_CAP:
        raise ResourceLimit(f"path walk needs depth <= {ORACLE_DEPTH_CAP}")
    if admits is None and bundle.config.preset not in LENGTH_PRESETS:
        return _report(
            "extension_shadow", start, True, details={"note": "not applicable"}
        )
    tasks = [task] if task is not None else _active_tasks(bundle)
    ops = bundle.operators

    memo: dict[tuple[int, BitString], bool] = {}

    def default_admits(i: int, x: BitString) -> bool:
        op = ops.operator_for(i)
        if op.max_image_len(depth) <= index_of(x) + i:
            return False
        for value in range(1 << (depth - len(x))):
            y = x.concat(BitString(depth - len(x), value))
            if len(apply_modified(op, y)) > index_of(x) + i:
                return True
        return False

    test = admits or default_admits

    def admits_at(i: int, x: BitString) -> bool:
        key = (i, x)
        if key not in memo:
            memo[key] = test(i, x)
        return memo[key]

    counts = {"paths": 0, "qualifying": 0, "via_edge": 0, "via_discard": 0}
    for net in bundle.networks:
        stack = [BitString(0, 0)]
        while stack:
            x = stack.pop()
            if len(x) < depth:
                for b in (0, 1):
                    child = x.child(b)
                    if net.flow_eval(child) > 0:
                        stack.append(child)
                continue
            counts["paths"] += 1
            prefixes = [x.truncate(m) for m in range(1, depth + 1)]
            for i in tasks:
                if not all(admits_at(i, p) for p in reversed(prefixes)):
                    continue
                counts["qualifying"] += 1
                through = any(
                    e.task == i and e.target.is_prefix_of(x)
                    for e in net.edges
                )
                dead = any(net.delay(p) == 1 for p in prefixes)
                if through:
                    counts["via_edge"] += 1
                elif dead:
                    counts["via_discard"] += 1
                else:
                    return _report(
                        "extension_shadow",
                        start,
                        False,
                        witness={"network": net.network_id, "path": str(x), "task": i},
                        details=counts,
                    )
    return _report(
        "extension_shadow", start, True, details=counts, levels=(0, depth)
    )


def dense_oracle(config, rho_override: Optional[int] = None) -> CheckReport:
    """Rebuild with the vertex-by-vertex mirror and compare everything."""
    from treeflow.constructions import build
    from treeflow.dense import compare_runs, dense_build

    start = time.monotonic()
    if config.depth > ORACLE_DEPTH_CAP:
        raise ResourceLimit(
            f"oracle replay capped at depth {ORACLE_DEPTH_CAP}, got {config.depth}"
        )
    bundle = build(config)
    mirror_config = (
        dataclasses.replace(config, rho_base=rho_override)
        if rho_override is not None
        else config
    )
    problems = compare_runs(bundle, dense_build(mirror_config))
    return _report(
        "dense_oracle",
        start,
        not problems,
        witness={"first": problems[0]} if problems else None,
        details={"differences": len(problems), "preset": config.preset},
        levels=(0, config.depth),
    )


CHECKS: dict[str, Callable] = {
    "delay_form": check_delay_form,
    "no_overlap": check_no_overlap,
    "conservation": check_conservation,
    "sn_bound": check_sn_bound,
    "duplication": check_duplication,
    "ratio_identity": check_ratio_identity,
    "separators": check_separators,
    "discards": check_discards,
    "extension_shadow": check_extension_shadow,
}


def run_checks(bundle, names: Optional[list[str]] = None) -> list[CheckReport]:
    if names is None:
        names = [
            "delay_form",
            "no_overlap",
            "conservation",
            "sn_bound",
            "duplication",
            "ratio_identity",
            "separators",
            "discards",
        ]
        if (
            bundle.depth <= ORACLE_DEPTH_CAP
            and bundle.config.preset in LENGTH_PRESETS
        ):
            names.append("extension_shadow")
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks: {unknown}")
    return [CHECKS[n](bundle) for n in names]
