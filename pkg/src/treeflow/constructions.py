"""The five concrete constructions and the interval test sets.

Each preset pairs a step engine with one predicate:

  nonstochastic  t1 steps, image length must outgrow the source's code
  divisible      designated-vertex t1 steps with image-region discards
  atom           t2 steps with the image-length predicate
  family         t2 steps on a base network, discards on a target network
  hyperimmune    even tasks run the family semantics, odd tasks draw
                 single-1 "sparse" edges gated by a step-counted function

A driver advances every network one level per step and commits them
together, so frames, aggregates, and the edge history stay in lockstep.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

from treeflow.bitseq import BitString, index_of, restricted_triple, unpair_1
from treeflow.cubes import Cube
from treeflow.network import (
    ONE,
    ZERO,
    ConstructionError,
    DelayTable,
    ElementaryNetwork,
    Rational,
    rat_str,
)
from treeflow.operators import (
    FunctionRoster,
    OperatorRoster,
    apply_modified,
    load_rosters,
    phi_bounded,
)
from treeflow.scheduler import PairedTaskStream, ResourceLimit, ScheduleState, TaskStream
from treeflow.templates import (
    Caps,
    DiscardRecord,
    EdgePredicate,
    StepContext,
    StepOutcome,
    class_cube,
    discard_pieces,
    t1_discard_step,
    t1_step,
    t2_step,
)

PRESETS = ("nonstochastic", "divisible", "atom", "family", "hyperimmune")
MULTI_NETWORK_PRESETS = ("family", "hyperimmune")


class ConfigError(Exception):
    """Bad run parameters, caught before any construction starts."""


def reference_roster_descriptors() -> dict:
    """The default operator and function line-up for acceptance runs."""
    return {
        "operators": [
            {"kind": "echo", "name": "echo"},
            {"kind": "silent", "name": "silent"},
            {"kind": "flip", "name": "flip"},
            {"kind": "doubler", "name": "doubler"},
            {"kind": "const", "bits": "110010011", "name": "const-110010011"},
        ],
        "functions": [
            {"kind": "linear", "a": 2, "b": 2, "name": "linear-2x+2"},
            {"kind": "table", "rows": [], "name": "empty-table"},
        ],
    }


def _roster_dict(operators=None, functions=None) -> dict:
    ref = reference_roster_descriptors()
    return {
        "operators": list(operators) if operators else ref["operators"],
        "functions": list(functions) if functions else ref["functions"],
    }


@dataclass
class RunConfig:
    preset: str
    depth: int
    networks: int = 1
    rho_base: int = 3
    discard_mode: str = "exclude"
    seed: int = 0
    mode: str = "sparse"
    rosters: Optional[dict] = None

    def __post_init__(self):
        if self.rosters is None:
            self.rosters = _roster_dict()

    def validate(self) -> None:
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.depth < 0:
            raise ConfigError("depth must not be negative")
        if self.preset in MULTI_NETWORK_PRESETS:
            if self.networks < 2:
                raise ConfigError(f"preset {self.preset} needs at least 2 networks")
        elif self.networks != 1:
            raise ConfigError(f"preset {self.preset} runs on a single network")
        if self.discard_mode not in ("exclude", "reject"):
            raise ConfigError(f"unknown discard mode {self.discard_mode!r}")
        if self.rho_base < 1:
            raise ConfigError("rho base must be at least 1")
        if self.mode not in ("sparse", "dense"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not (self.rosters.get("operators") and self.rosters.get("functions")):
            raise ConfigError("rosters need operators and functions")

    def resolved_rosters(self) -> tuple[OperatorRoster, FunctionRoster]:
        return load_rosters(self.rosters)

    def to_payload(self) -> dict:
        return {
            "preset": self.preset,
            "depth": self.depth,
            "networks": self.networks,
            "rho_base": self.rho_base,
            "discard_mode": self.discard_mode,
            "seed": self.seed,
            "mode": self.mode,
            "rosters": self.rosters,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(payload) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        return cls(**payload)


@dataclass
class ConstructionBundle:
    config: RunConfig
    networks: list[ElementaryNetwork]
    state: ScheduleState
    provenance: list[dict]
    discards: list[DiscardRecord]
    operators: OperatorRoster
    functions: FunctionRoster

    @property
    def depth(self) -> int:
        return self.config.depth

    def network(self, net_id: int) -> ElementaryNetwork:
        return self.networks[net_id - 1]

    def all_edges(self):
        out = []
        for net in self.networks:
            out.extend(net.edges)
        out.sort(key=lambda e: (e.step_drawn, e.network_id, index_of(e.source)))
        return out

    def discard_allowance(self, net_id: int, level: int) -> Rational:
        """Total mass allowance claimed by discards on a network up to a level."""
        total = ZERO
        for d in self.discards:
            if d.network_id == net_id and d.edge.step_drawn <= level:
                total += d.bound
        return total


# --- predicates ---------------------------------------------------------


class LengthPredicate(EdgePredicate):
    """Targets whose operator image outgrows the source's code number."""

    def __init__(self, ctx: StepContext, operator, task: int):
        super().__init__(ctx)
        self.operator = operator
        self.task = task
        self._reach = min(operator.max_image_len(ctx.n), ctx.n)

    def iter_sources(self, cube, level):
        # Only sources with index_of(x) + task < achievable image length
        # can qualify, which caps the enumeration at a fixed code number.
        base = (1 << level) - 1
        top = self._reach - self.task
        for value in range(1 << level):
            if base + value >= top:
                break
            x = BitString(level, value)
            if cube.contains(x):
                yield x

    def holds(self, x, y):
        img = apply_modified(self.operator, y)
        return len(img) > index_of(x) + self.task

    def beta(self, x):
        if self._reach <= index_of(x) + self.task:
            return None
        return super().beta(x)


class ImageMassPredicate(EdgePredicate):
    """Non-prefix image whose region carries little frame mass."""

    def __init__(self, ctx: StepContext, operator, mode: str):
        super().__init__(ctx)
        self.operator = operator
        self.mode = mode

    def _pieces_mass(self, pieces) -> Rational:
        total = ZERO
        for piece in pieces:
            total += self.ctx.net.pattern_mass(self.ctx.n, piece, pre=True)
        return total

    def holds(self, x, y):
        img = apply_modified(self.operator, y)
        if img.is_prefix_of(y):
            return False
        pieces = discard_pieces(img, x, self.ctx.n, self.mode)
        if pieces is None:
            return False
        return not exceeds_dyadic(self._pieces_mass(pieces), index_of(x) + 3)

    def beta(self, x):
        if self.operator.prefix_image_only():
            return None
        if self.operator.length_determined() and self.ctx.n - len(x) >= 2:
            # One evaluation settles the mass conjunct for every target.
            probe = next(x.extensions(self.ctx.n))
            img = apply_modified(self.operator, probe)
            pieces = discard_pieces(img, x, self.ctx.n, self.mode)
            if pieces is None:
                return None
            if exceeds_dyadic(self._pieces_mass(pieces), index_of(x) + 3):
                return None
        return super().beta(x)


def exceeds_dyadic(value: Rational, e: int) -> bool:
    """value > 2**-e, without building the power (e can run to billions)."""
    if value <= 0:
        return False
    if e >= value.denominator.bit_length():
        # numerator * 2**e >= 2**e >= 2**bitlen(den) > den
        return True
    return value > Rational(1, 1 << e)


def family_pattern(img: BitString, w: int, level: int) -> Optional[Cube]:
    """Level vertices agreeing with the image at positions w..l(image).

    An image longer than the level pins positions no level vertex has, so
    the region is empty and None comes back."""
    if len(img) < w:
        return Cube.whole_level(level)
    if len(img) > level:
        return None
    return Cube.suffix_pattern(level, w, img.suffix_from(w))


class TargetMassPredicate(EdgePredicate):
    """Mass bound on the target network, one bound per class member."""

    def __init__(self, ctx: StepContext, operator, target: ElementaryNetwork, w):
        super().__init__(ctx)
        self.operator = operator
        self.target = target
        self.w = w
        self._pre = None

    def _worst_member(self, x) -> BitString:
        # Free positions 1..w-1 are the high bits of the code, so the
        # largest-index class member has them all set.
        length = len(x)
        mask = ((1 << (self.w - 1)) - 1) << (length - self.w + 1)
        return BitString(length, x.value | mask)

    def _member_ok(self, member, tail, n) -> bool:
        img = apply_modified(self.operator, member.concat(tail))
        cube = family_pattern(img, self.w, n)
        if cube is None:
            return True
        mass = self.target.pattern_mass(n, cube, pre=True)
        return not exceeds_dyadic(mass, index_of(member) + 3)

    def holds(self, x, y):
        n = self.ctx.n
        tail = y.suffix_from(len(x) + 1)
        # The largest index carries the tightest bound; checking it first
        # settles almost every rejection in one mass evaluation.
        worst = self._worst_member(x)
        if not self._member_ok(worst, tail, n):
            return False
        klass = class_cube(x, self.w)
        cap = self.ctx.caps.class_members
        if klass.count() > cap:
            raise ResourceLimit(
                f"class of {x} has {klass.count()} members, cap is {cap}"
            )
        for member in klass.members(cap=cap):
            if member != worst and not self._member_ok(member, tail, n):
                return False
        return True

    def iter_sources(self, cube, level):
        n = self.ctx.n
        if n - level < 2:
            # No legal target that close to the level being built.
            return
        w = self.w
        mask = ((1 << (w - 1)) - 1) << (level - w + 1)
        min_val = 0
        for pos, bit in cube.fixed:
            min_val |= bit << (level - pos)
        # Loosest bound any source in this piece can offer: the smallest
        # worst-member index. One region-wide mass floor against it can
        # rule out the whole piece without enumerating it.
        e_min = (1 << level) - 1 + (min_val | mask) + 3
        if self.operator.length_determined():
            img = apply_modified(self.operator, BitString(n, 0))
            pat = family_pattern(img, w, n)
            if pat is not None:
                mass = self.target.pattern_mass(n, pat, pre=True)
                if exceeds_dyadic(mass, e_min):
                    return
        elif self.operator.prefix_image_only():
            keep = [(p, b) for p, b in cube.fixed if p >= w]
            keep += [(p, 1) for p in range(1, w)]
            floor = self._floor_over(Cube(n, keep))
            if floor is not None and exceeds_dyadic(floor, e_min):
                return
        elif w >= 2:
            for b in (0, 1):
                floor = self._floor_over(Cube.subtree(BitString(1, b), n))
                if floor is not None and exceeds_dyadic(floor, e_min):
                    return
        yield from super().iter_sources(cube, level)

    def _floor_over(self, region: Cube) -> Optional[Rational]:
        """Least value the pending frame pushes anywhere into `region`,
        or None when part of it is dead (so zero-mass hits are possible)."""
        if self._pre is None:
            self._pre = list(self.target.pre_frame(self.ctx.n))
        best = None
        covered = 0
        for cube, v in self._pre:
            inter = cube.intersect(region)
            if inter is None:
                continue
            if v == 0:
                return None
            covered += inter.count()
            best = v if best is None else min(best, v)
        if covered != region.count():
            return None
        return best

    def beta(self, x):
        n = self.ctx.n
        if self.operator.length_determined() and n - len(x) >= 2:
            # Same image for every member and every target: test the mass
            # once against the tightest (largest-index) member bound.
            probe = next(x.extensions(n))
            img = apply_modified(self.operator, probe)
            cube = family_pattern(img, self.w, n)
            if cube is not None:
                mass = self.target.pattern_mass(n, cube, pre=True)
                if exceeds_dyadic(mass, index_of(self._worst_member(x)) + 3):
                    return None
            return probe
        # Two closed-form impossibility tests keep deep sources from
        # scanning their whole subtree when the member bound sits below
        # any reachable mass.
        worst = self._worst_member(x)
        e = index_of(worst) + 3
        if self.operator.prefix_image_only():
            # The image is a prefix of the probed extension, so the
            # pattern region always contains that extension itself; its
            # pushed value alone exceeds the bound.
            floor = self._floor_over(Cube.subtree(worst, n))
            if floor is not None and exceeds_dyadic(floor, e):
                return None
        elif self.w >= 2:
            # Patterns leave positions 1..w-1 free, so every region meets
            # both halves of the level; a fully-live half already carries
            # more than the bound per vertex.
            for b in (0, 1):
                floor = self._floor_over(Cube.subtree(BitString(1, b), n))
                if floor is not None and exceeds_dyadic(floor, e):
                    return None
        return super().beta(x)


class SparsityPredicate(EdgePredicate):
    """Forced-shape targets: the source, one 1, then zeros to the level;
    allowed only once the level reaches a step-counted function value."""

    def __init__(self, ctx: StepContext, functions: FunctionRoster, j: int):
        super().__init__(ctx)
        self.functions = functions
        self.j = j

    def forced_target(self, x) -> Optional[BitString]:
        n = self.ctx.n
        if n - len(x) < 2:
            return None
        return x.child(1).concat(BitString(n - len(x) - 1, 0))

    def holds(self, x, y):
        if y != self.forced_target(x):
            return False
        value = phi_bounded(self.functions, self.j, len(x) + 2, self.ctx.n)
        return value is not None and self.ctx.n >= value

    def beta(self, x):
        y = self.forced_target(x)
        if y is not None and self.holds(x, y):
            return y
        return None


# --- drivers ------------------------------------------------------------


def _discard_record(d: DiscardRecord) -> dict:
    return {
        "network": d.network_id,
        "patterns": [c.pattern() for c in d.cubes],
        "edge_network": d.edge.network_id,
        "source": str(d.edge.source),
        "target": str(d.edge.target),
        "step": d.edge.step_drawn,
        "bound": rat_str(d.bound),
    }


def _prov(out: StepOutcome, tables: dict[int, DelayTable]) -> dict:
    return {
        "step": out.step,
        "task": out.task,
        "subtask": out.subtask,
        "network": out.network_id,
        "case": out.case_taken,
        "w": out.w,
        "wk": out.wk,
        "edges": [e.to_record() for e in out.edges],
        "discards": [_discard_record(d) for d in out.discards],
        "tables": {str(net_id): t.to_record() for net_id, t in sorted(tables.items())},
        "note": out.note,
    }


def _zero_outcome(n: int, net_id: int, i: int, k, table: DelayTable, note: str):
    return StepOutcome(
        step=n,
        network_id=net_id,
        task=i,
        subtask=k,
        case_taken=3,
        delay_assignments=table.to_record(),
        note=note,
    )


def _step_nonstochastic(config, n, nets, state, ops, fns, caps):
    net = nets[0]
    i = state.stream.task(n)
    ctx = StepContext(n=n, i=i, net=net, state=state, rho_base=config.rho_base, caps=caps)
    pred = LengthPredicate(ctx, ops.operator_for(i), i)
    table, classes, out = t1_step(ctx, pred)
    return {1: table}, {1: classes}, out


def _step_divisible(config, n, nets, state, ops, fns, caps):
    net = nets[0]
    i = state.stream.task(n)
    designated = state.stream.designated(n)
    op = ops.operator_for(i)
    ctx = StepContext(n=n, i=i, net=net, state=state, rho_base=config.rho_base, caps=caps)
    pred = ImageMassPredicate(ctx, op, config.discard_mode)
    table, classes, out = t1_discard_step(
        ctx,
        pred,
        designated,
        lambda y: apply_modified(op, y),
        config.discard_mode,
    )
    return {1: table}, {1: classes}, out


def _step_atom(config, n, nets, state, ops, fns, caps):
    net = nets[0]
    i = state.stream.task(n)
    k = state.stream.subtask(n)
    ctx = StepContext(
        n=n, i=i, net=net, state=state, k=k, rho_base=config.rho_base, caps=caps
    )
    pred = LengthPredicate(ctx, ops.operator_for(i), i)
    table, classes, out = t2_step(ctx, pred)
    return {1: table}, {1: classes}, out


def _family_semantics(config, n, nets, state, ops, caps, i, k, triple_index):
    """Shared by the family preset and hyperimmune even tasks: t2 on the
    decoded base network, image-pattern discards on the target network."""
    base_raw, target_raw, op_num = restricted_triple(triple_index)
    count = len(nets)
    base_id = (base_raw - 1) % count + 1
    target_id = (target_raw - 1) % count + 1
    tables = {net.network_id: DelayTable(n) for net in nets}
    if base_id == target_id:
        out = _zero_outcome(
            n, base_id, i, k, tables[base_id], "base and target collide after wrapping"
        )
        return tables, {}, out
    acting = nets[base_id - 1]
    target = nets[target_id - 1]
    ctx = StepContext(
        n=n, i=i, net=acting, state=state, k=k, rho_base=config.rho_base, caps=caps
    )
    w = state.w_session(i, n)
    op = ops.base_for(op_num)
    pred = TargetMassPredicate(ctx, op, target, w)
    table, classes, out = t2_step(ctx, pred)
    tables[base_id] = table
    records = []
    written: set = set()
    for e in out.edges:
        img = apply_modified(op, e.target)
        cube = family_pattern(img, w, n)
        # Edges in one class share an image suffix, so their patterns
        # coincide; the discarded region is a union and gets one write,
        # while every edge still books its own allowance. An image past
        # the truncation depth leaves nothing to silence yet.
        if cube is not None:
            key = cube.pattern()
            if key not in written:
                written.add(key)
                tables[target_id].add_suffix(cube, ONE)
        records.append(
            DiscardRecord(
                network_id=target_id,
                cubes=(cube,) if cube is not None else (),
                edge=e,
                bound=Rational(1, 1 << (index_of(e.source) + 3)),
            )
        )
    if records:
        out = dataclasses.replace(out, discards=tuple(records))
    return tables, {base_id: classes}, out


def _step_family(config, n, nets, state, ops, fns, caps):
    i = state.stream.task(n)
    k = state.stream.subtask(n)
    return _family_semantics(config, n, nets, state, ops, caps, i, k, i)


def _step_hyperimmune(config, n, nets, state, ops, fns, caps):
    i = state.stream.task(n)
    k = state.stream.subtask(n)
    tables = {net.network_id: DelayTable(n) for net in nets}
    if i == 1:
        out = _zero_outcome(n, 1, i, k, tables[1], "task 1 carries no decoded index")
        return tables, {}, out
    if i % 2 == 0:
        return _family_semantics(config, n, nets, state, ops, caps, i, k, i // 2)
    j = (i - 1) // 2
    net_id = (unpair_1(j) - 1) % len(nets) + 1
    acting = nets[net_id - 1]
    ctx = StepContext(
        n=n, i=i, net=acting, state=state, k=k, rho_base=config.rho_base, caps=caps
    )
    pred = SparsityPredicate(ctx, fns, j)
    table, classes, out = t2_step(ctx, pred)
    tables[net_id] = table
    return tables, {net_id: classes}, out


_STEP_FNS = {
    "nonstochastic": _step_nonstochastic,
    "divisible": _step_divisible,
    "atom": _step_atom,
    "family": _step_family,
    "hyperimmune": _step_hyperimmune,
}


def build(config: RunConfig, caps: Optional[Caps] = None) -> ConstructionBundle:
    config.validate()
    ops, fns = config.resolved_rosters()
    caps = caps or Caps()
    stream = PairedTaskStream() if config.preset == "divisible" else TaskStream()
    state = ScheduleState(stream, config.depth)
    count = config.networks
    nets = [ElementaryNetwork(m + 1) for m in range(count)]
    provenance: list[dict] = []
    discards: list[DiscardRecord] = []
    step_fn = _STEP_FNS[config.preset]
    for n in range(1, config.depth + 1):
        tables, classes_by_net, out = step_fn(config, n, nets, state, ops, fns, caps)
        for net in nets:
            net.commit_level(
                tables[net.network_id], classes_by_net.get(net.network_id, [])
            )
        for e in out.edges:
            state.record_edge(e.task, e.subtask, len(e.target))
        discards.extend(out.discards)
        provenance.append(_prov(out, tables))
    return ConstructionBundle(
        config=config,
        networks=nets,
        state=state,
        provenance=provenance,
        discards=discards,
        operators=ops,
        functions=fns,
    )


def build_nonstochastic(depth: int, operator_roster=None, **kw) -> ConstructionBundle:
    cfg = RunConfig(
        preset="nonstochastic", depth=depth, rosters=_roster_dict(operator_roster), **kw
    )
    return build(cfg)


def build_divisible(depth: int, operator_roster=None, **kw) -> ConstructionBundle:
    cfg = RunConfig(
        preset="divisible", depth=depth, rosters=_roster_dict(operator_roster), **kw
    )
    return build(cfg)


def build_atom(depth: int, operator_roster=None, **kw) -> ConstructionBundle:
    cfg = RunConfig(
        preset="atom", depth=depth, rosters=_roster_dict(operator_roster), **kw
    )
    return build(cfg)


def build_atom_family(
    depth: int, network_count: int = 3, operator_roster=None, **kw
) -> ConstructionBundle:
    cfg = RunConfig(
        preset="family",
        depth=depth,
        networks=network_count,
        rosters=_roster_dict(operator_roster),
        **kw,
    )
    return build(cfg)


def build_hyperimmune(
    depth: int,
    network_count: int = 3,
    operator_roster=None,
    function_roster=None,
    **kw,
) -> ConstructionBundle:
    cfg = RunConfig(
        preset="hyperimmune",
        depth=depth,
        networks=network_count,
        rosters=_roster_dict(operator_roster, function_roster),
        **kw,
    )
    return build(cfg)


# --- interval test sets -------------------------------------------------


@dataclass
class MLTest:
    """Per task index: the interval roots, their union mass, and the sum of
    the per-edge allowances 2^-(index_of(source)+i)."""

    per_index: dict[int, dict]
    tails: dict[int, dict]
    max_task: int

    def ok(self) -> bool:
        return all(entry["ok"] for entry in self.per_index.values()) and all(
            entry["ok"] for entry in self.tails.values()
        )


def prefix_free(roots: list[BitString]) -> list[BitString]:
    kept: list[BitString] = []
    for r in sorted(set(roots), key=lambda s: (len(s), s.value)):
        if not any(k.is_prefix_of(r) for k in kept):
            kept.append(r)
    return kept


def union_mass(roots: list[BitString]) -> Rational:
    total = ZERO
    for r in prefix_free(roots):
        total += Rational(1, 1 << len(r))
    return total


def ml_test(bundle: ConstructionBundle, index: Optional[int] = None) -> MLTest:
    if bundle.config.preset not in ("nonstochastic", "atom"):
        raise ConfigError(
            "interval test sets are defined for the image-length presets only"
        )
    stream = bundle.state.stream
    max_task = max(
        (stream.task(n) for n in range(1, bundle.depth + 1)), default=0
    )
    if index is not None and index > max_task:
        raise ConfigError(f"task {index} never runs at depth {bundle.depth}")
    roots_by_task: dict[int, list[BitString]] = {}
    allowance: dict[int, Rational] = {}
    for i in range(1, max_task + 1):
        op = bundle.operators.operator_for(i)
        roots: list[BitString] = []
        bound = ZERO
        for net in bundle.networks:
            for e in net.edges:
                if e.task != i:
                    continue
                roots.append(apply_modified(op, e.target))
                bound += Rational(1, 1 << (index_of(e.source) + i))
        roots_by_task[i] = roots
        allowance[i] = bound
    per_index = {}
    tails = {}
    for i in range(1, max_task + 1):
        mass = union_mass(roots_by_task[i])
        cap = Rational(1, 1 << i)
        per_index[i] = {
            "roots": [str(r) for r in prefix_free(roots_by_task[i])],
            "mass": mass,
            "bound_sum": allowance[i],
            "edge_count": len(roots_by_task[i]),
            "ok": mass <= allowance[i] <= cap,
        }
        tail_roots: list[BitString] = []
        for j in range(i + 1, max_task + 1):
            tail_roots.extend(roots_by_task[j])
        tail_mass = union_mass(tail_roots)
        tails[i] = {
            "roots": [str(r) for r in prefix_free(tail_roots)],
            "mass": tail_mass,
            "ok": tail_mass <= cap,
        }
    if index is not None:
        per_index = {index: per_index[index]}
        tails = {index: tails[index]}
    return MLTest(per_index=per_index, tails=tails, max_task=max_task)
