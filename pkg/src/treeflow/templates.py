"""Step engines that draw extra edges and write delay tables.

Three engines share one skeleton. Each step n on a network either installs
a fresh uniform delay 1/(n+3)^2 across level n (case 1, session start),
processes candidate vertices by drawing edges and shifting their delayed
share onto descendants (case 2), or writes an all-zero level (case 3).

t1_step handles one vertex per edge. t1_discard_step restricts processing
to a single designated vertex and additionally marks the operator image's
region as dead (s = 1). t2_step runs inside leading subtrees and replicates
every draw and every delay write across suffix-equivalence classes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from treeflow.bitseq import BitString, index_of
from treeflow.cubes import Cube, subtract_many
from treeflow.network import (
    ONE,
    ZERO,
    ConstructionError,
    DelayTable,
    EdgeClass,
    ElementaryNetwork,
    ExtraEdge,
    Rational,
)
from treeflow.scheduler import ResourceLimit, ScheduleState, candidates


@dataclass
class Caps:
    """Hard enumeration limits. Hitting one raises, never degrades."""

    candidates: int = 4096
    beta_scan: int = 8192
    class_members: int = 4096


@dataclass(frozen=True)
class DiscardRecord:
    """Region killed (s = 1) on `network_id` by `edge`, with the mass
    allowance 2^-(index_of(source)+3) the drawing predicate guaranteed."""

    network_id: int
    cubes: tuple[Cube, ...]
    edge: ExtraEdge
    bound: Rational


@dataclass(frozen=True)
class StepOutcome:
    step: int
    network_id: int
    task: int
    subtask: Optional[int]
    case_taken: int
    w: Optional[int] = None
    wk: Optional[int] = None
    edges: tuple[ExtraEdge, ...] = ()
    discards: tuple[DiscardRecord, ...] = ()
    delay_assignments: Optional[dict] = None
    note: str = ""


@dataclass
class StepContext:
    n: int
    i: int
    net: ElementaryNetwork
    state: ScheduleState
    k: Optional[int] = None
    rho_base: int = 3
    caps: Caps = field(default_factory=Caps)

    def install_value(self) -> Rational:
        return Rational(1, (self.n + self.rho_base) ** 2)


class EdgePredicate:
    """Decides whether (x, y) may become an extra edge, and finds targets.

    Subclasses override holds(x, y). beta returns the numerically least
    length-n extension of x satisfying it, or None; a pair at distance 1
    is never a legal extra edge, so such x have no target at all. The
    source enumeration may be overridden to prune by viability bounds.
    """

    def __init__(self, ctx: StepContext):
        self.ctx = ctx

    def holds(self, x: BitString, y: BitString) -> bool:
        raise NotImplementedError

    def iter_sources(self, cube: Cube, level: int):
        yield from cube.members(cap=self.ctx.caps.class_members)

    def beta(self, x: BitString) -> Optional[BitString]:
        n = self.ctx.n
        if n - len(x) < 2:
            return None
        budget = self.ctx.caps.beta_scan
        for count, y in enumerate(x.extensions(n)):
            if count >= budget:
                raise ResourceLimit(
                    f"edge-target scan from {x} exceeded {budget} at level {n}"
                )
            if self.holds(x, y):
                return y
        return None


def _outcome(ctx: StepContext, case: int, table: DelayTable, **kw) -> StepOutcome:
    return StepOutcome(
        step=ctx.n,
        network_id=ctx.net.network_id,
        task=ctx.i,
        subtask=ctx.k,
        case_taken=case,
        delay_assignments=table.to_record(),
        **kw,
    )


def designated_candidate(
    ctx: StepContext, predicate: EdgePredicate, x: BitString, w: int
) -> list[tuple[BitString, BitString]]:
    """The single-vertex candidate check used by the discard engine."""
    if not (w <= len(x) < ctx.n):
        return []
    if len(x) not in ctx.state.candidate_levels(ctx.i, w, ctx.n):
        return []
    if ctx.net.delay(x) == 0 or ctx.net.outgoing_edge(x) is not None:
        return []
    y = predicate.beta(x)
    return [] if y is None else [(x, y)]


def t1_step(
    ctx: StepContext,
    predicate: EdgePredicate,
    designated: Optional[BitString] = None,
    image_of: Optional[Callable[[BitString], BitString]] = None,
    discard_mode: str = "exclude",
):
    """One construction step; returns (table, edge classes, outcome).

    With `designated` set, only that vertex is eligible and `image_of`
    supplies the region discarded behind the drawn edge.
    """
    n, i, net, state = ctx.n, ctx.i, ctx.net, ctx.state
    w = state.w_session(i, n)
    if w is None:
        table = DelayTable(n)
        return table, [], _outcome(ctx, 3, table, note="no session start yet")
    if w == n:
        table = DelayTable(n, default=ctx.install_value())
        return table, [], _outcome(ctx, 1, table, w=w)
    if designated is not None:
        pairs = designated_candidate(ctx, predicate, designated, w)
    else:
        pairs = candidates(state, net, i, n, predicate, w, cap=ctx.caps.candidates)
    if not pairs:
        table = DelayTable(n)
        return table, [], _outcome(ctx, 3, table, w=w, note="no candidates")

    table = DelayTable(n)
    classes: list[EdgeClass] = []
    drawn: list[ExtraEdge] = []
    discards: list[DiscardRecord] = []
    for x, y in pairs:
        s = net.delay(x)
        edge = ExtraEdge(
            source=x,
            target=y,
            q=s,
            task=i,
            subtask=ctx.k,
            network_id=net.network_id,
            step_drawn=n,
        )
        classes.append(EdgeClass(Cube.vertex(x), y.suffix_from(len(x) + 1), s, (edge,)))
        drawn.append(edge)
        table.set_vertex(y, ZERO)
        if s != ONE:
            table.add_subtree(x, s / (ONE - s))
        if image_of is not None:
            pieces = discard_pieces(image_of(y), x, n, discard_mode)
            if pieces is None:
                raise ConstructionError(
                    f"edge ({x}, {y}) reaches into its own image region "
                    "in reject mode; the predicate should have refused it"
                )
            if pieces:
                for piece in pieces:
                    table.add_subtree(prefix_root(piece), ONE)
                discards.append(
                    DiscardRecord(
                        network_id=net.network_id,
                        cubes=tuple(pieces),
                        edge=edge,
                        bound=Rational(1, 2 ** (index_of(x) + 3)),
                    )
                )
    return table, classes, _outcome(
        ctx, 2, table, w=w, edges=tuple(drawn), discards=tuple(discards)
    )


def t1_discard_step(
    ctx: StepContext,
    predicate: EdgePredicate,
    designated: BitString,
    image_of: Callable[[BitString], BitString],
    discard_mode: str = "exclude",
):
    """Single-designated-vertex variant: at most one edge per step, and the
    image region behind the edge goes dead."""
    return t1_step(
        ctx,
        predicate,
        designated=designated,
        image_of=image_of,
        discard_mode=discard_mode,
    )


def discard_pieces(
    img: BitString, source: BitString, n: int, mode: str
) -> Optional[list[Cube]]:
    """Level-n region to kill behind an edge: extensions of the operator
    image, never touching the source's own subtree.

    In exclude mode the source subtree is carved out of the region. In
    reject mode a comparable image/source pair returns None: the edge
    itself was supposed to be refused.
    """
    if len(img) > n:
        return []
    region = Cube.subtree(img, n)
    comparable = img.is_prefix_of(source) or source.is_prefix_of(img)
    if mode == "reject":
        return None if comparable else [region]
    if comparable:
        return subtract_many(region, [Cube.subtree(source, n)])
    return [region]


def prefix_root(piece: Cube) -> BitString:
    """The root vertex of a cube that pins exactly positions 1..k."""
    value = 0
    for count, (pos, bit) in enumerate(piece.fixed, start=1):
        if pos != count:
            raise ConstructionError("discard piece is not a subtree region")
        value = value * 2 + bit
    return BitString(len(piece.fixed), value)


def class_cube(x: BitString, w: int) -> Cube:
    """All vertices agreeing with x at positions w..l(x)."""
    return Cube.suffix_pattern(len(x), w, x.suffix_from(w))


def t2_step(ctx: StepContext, predicate: EdgePredicate):
    """Subtree-replicated step: the leading subtree's candidates drive, and
    each draw plus each delay write is copied across suffix classes."""
    n, i, k, net, state = ctx.n, ctx.i, ctx.k, ctx.net, ctx.state
    if k is None:
        raise ConstructionError("t2_step needs a subtask index")
    w = state.w_session(i, n)
    if w is None:
        table = DelayTable(n)
        return table, [], _outcome(ctx, 3, table, note="no session start yet")
    if k > 2**w:
        table = DelayTable(n)
        return table, [], _outcome(
            ctx, 3, table, w=w, note="subsession index beyond subtree count"
        )
    wk = state.w_subsession(i, k, n)
    if wk is None:
        table = DelayTable(n)
        return table, [], _outcome(ctx, 3, table, w=w, note="no subsession start yet")
    if wk == n:
        table = DelayTable(n, default=ctx.install_value())
        return table, [], _outcome(ctx, 1, table, w=w, wk=wk)
    leading_root = BitString(w, k - 1)
    pairs = candidates(
        state,
        net,
        i,
        n,
        predicate,
        w,
        subtask=k,
        wk=wk,
        subtree_root=leading_root,
        cap=ctx.caps.candidates,
    )
    if not pairs:
        table = DelayTable(n)
        return table, [], _outcome(ctx, 3, table, w=w, wk=wk, note="no candidates")

    table = DelayTable(n)
    classes: list[EdgeClass] = []
    drawn: list[ExtraEdge] = []
    draws = [(x, y, net.delay(x)) for x, y in pairs]
    # Every target class must be dug out of every descendant region before
    # any suffix write lands, else a later target would inherit a nonzero
    # delay from an earlier candidate's descendants.
    target_cubes = [
        Cube.suffix_pattern(n, w, y.suffix_from(w)) for (_x, y, _s) in draws
    ]
    for x, y, s in draws:
        tail = y.suffix_from(len(x) + 1)
        members = sorted(
            class_cube(x, w).members(cap=ctx.caps.class_members), key=index_of
        )
        edges = tuple(
            ExtraEdge(
                source=m,
                target=m.concat(tail),
                q=s,
                task=i,
                subtask=k,
                network_id=net.network_id,
                step_drawn=n,
            )
            for m in members
        )
        classes.append(EdgeClass(class_cube(x, w), tail, s, edges))
        drawn.extend(edges)
        if s != ONE:
            value = s / (ONE - s)
            desc = Cube.suffix_pattern(n, w, x.suffix_from(w))
            for piece in subtract_many(desc, target_cubes):
                table.add_suffix(piece, value)
    return table, classes, _outcome(
        ctx, 2, table, w=w, wk=wk, edges=tuple(drawn)
    )
