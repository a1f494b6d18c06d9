"""Monotone operator providers and their budgeted evaluation.

A provider describes a computably enumerable graph of (input, output, cost)
entries on binary strings, subject to three axioms: every input maps to the
empty string at cost 0, outputs are closed downward under prefix, and any two
outputs reachable from nested inputs within one budget are prefix-comparable.
`apply_modified` evaluates the induced total map at budget len(x): the longest
output of length <= len(x) reachable from a prefix of x within that budget.

Two provider families cover everything the constructions need: finite tables
of explicit entries, and deterministic transducers that emit bits while
scanning the input. Partial integer functions follow the same budget idiom
(`phi_bounded`), with tables and total linear maps as providers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

from treeflow.bitseq import EMPTY, BitString, unpair_1

_ENUM_BUDGET_LIMIT = 16


class OperatorError(Exception):
    """Bad provider description (a configuration problem)."""


class InconsistentGraph(OperatorError):
    """A provider produced prefix-incomparable outputs for nested inputs."""


class TableOperator:
    """Finite explicit graph: a list of (input, output, cost) entries."""

    def __init__(self, entries: Iterable[tuple[BitString, BitString, int]]):
        self.entries = []
        for x, y, cost in entries:
            if cost < 1:
                raise OperatorError("table entry cost must be >= 1")
            self.entries.append((x, y, cost))

    def graph(self, budget: int) -> list[tuple[BitString, BitString, int]]:
        out = [(EMPTY, EMPTY, 0)]
        out.extend(e for e in self.entries if e[2] <= budget)
        return out

    def image(self, x: BitString) -> BitString:
        budget = len(x)
        best = EMPTY
        for src, dst, cost in self.entries:
            if cost > budget or not src.is_prefix_of(x):
                continue
            y = dst.truncate(min(len(dst), budget))
            if best.is_prefix_of(y):
                best = y
            elif not y.is_prefix_of(best):
                raise InconsistentGraph(
                    f"outputs {best} and {y} are incomparable at input {x}"
                )
        return best

    def max_image_len(self, budget: int) -> int:
        lens = [min(len(d), budget) for _, d, c in self.entries if c <= budget]
        return max(lens, default=0)

    def prefix_image_only(self) -> bool:
        return all(d.is_prefix_of(s) for s, d, _ in self.entries)

    def length_determined(self) -> bool:
        # A table with entries distinguishes inputs; only the empty table
        # (image always empty) is safely length-determined.
        return not self.entries


class TransducerOperator:
    """Deterministic transducer: scan input bits, emit output bits.

    rules maps (state, bit) to (next_state, emitted bits). A missing rule
    halts the machine with no further output. The graph entry for input x is
    (x, emitted(x), len(x)), plus the mandatory (empty, empty, 0).
    """

    def __init__(self, rules: dict[tuple[str, int], tuple[str, tuple[int, ...]]],
                 start: str):
        self.rules = dict(rules)
        self.start = start
        for (state, b), (nxt, emit) in self.rules.items():
            if b not in (0, 1) or any(e not in (0, 1) for e in emit):
                raise OperatorError(f"bad rule ({state}, {b}) -> ({nxt}, {emit})")

    def run(self, x: BitString) -> BitString:
        state = self.start
        out_len = 0
        out_val = 0
        for p in range(1, len(x) + 1):
            rule = self.rules.get((state, x.bit(p)))
            if rule is None:
                break
            state, emit = rule
            for e in emit:
                out_val = (out_val << 1) | e
                out_len += 1
        return BitString(out_len, out_val)

    def graph(self, budget: int) -> list[tuple[BitString, BitString, int]]:
        if budget > _ENUM_BUDGET_LIMIT:
            raise OperatorError(
                f"refusing to materialize transducer graph past budget {_ENUM_BUDGET_LIMIT}"
            )
        out = [(EMPTY, EMPTY, 0)]
        for n in range(1, budget + 1):
            for v in range(1 << n):
                x = BitString(n, v)
                out.append((x, self.run(x), n))
        return out

    def image(self, x: BitString) -> BitString:
        y = self.run(x)
        return y.truncate(min(len(y), len(x)))

    def max_image_len(self, budget: int) -> int:
        # Longest possible emission over inputs of length <= budget, by a
        # forward pass over reachable states.
        best = {self.start: 0}
        overall = 0
        for _ in range(budget):
            nxt: dict[str, int] = {}
            for state, tot in best.items():
                for b in (0, 1):
                    rule = self.rules.get((state, b))
                    if rule is None:
                        continue
                    tgt, emit = rule
                    cand = tot + len(emit)
                    if cand > nxt.get(tgt, -1):
                        nxt[tgt] = cand
            if not nxt:
                break
            best = nxt
            overall = max(overall, max(best.values()))
        return min(overall, budget)

    def prefix_image_only(self) -> bool:
        # Sound, incomplete test that every image is a prefix of its input:
        # label states echo/silent, demand echo rules emit exactly the read
        # bit, silent rules emit nothing and never hand back to an echo state.
        silent = {s for (s, _), (_, emit) in self.rules.items() if emit == ()}
        for (s, b), (tgt, emit) in self.rules.items():
            if s in silent:
                # Once silent, must stay silent, or the image stops being a prefix.
                if emit != () or tgt not in silent:
                    return False
            elif emit != (b,):
                return False
        return True

    def length_determined(self) -> bool:
        """True when the output depends only on the input's length (both
        rules of every state take the same transition and emission)."""
        states = {s for (s, _b) in self.rules}
        return all(
            self.rules.get((s, 0)) == self.rules.get((s, 1)) for s in states
        )


Operator = TableOperator | TransducerOperator


def enumerate_graph(op: Operator, budget: int) -> list[tuple[BitString, BitString, int]]:
    return op.graph(budget)


def apply_modified(op: Operator, x: BitString) -> BitString:
    """Longest output of length <= len(x) reachable from a prefix of x."""
    return op.image(x)


def echo_operator() -> TransducerOperator:
    return TransducerOperator({("a", 0): ("a", (0,)), ("a", 1): ("a", (1,))}, "a")


def silent_operator() -> TransducerOperator:
    return TransducerOperator({("a", 0): ("a", ()), ("a", 1): ("a", ())}, "a")


def flip_operator() -> TransducerOperator:
    return TransducerOperator({("a", 0): ("a", (1,)), ("a", 1): ("a", (0,))}, "a")


def doubler_operator() -> TransducerOperator:
    return TransducerOperator({("a", 0): ("a", (0, 0)), ("a", 1): ("a", (1, 1))}, "a")


def const_operator(bits: str) -> TransducerOperator:
    """Emits a fixed string on the first input bit, then nothing."""
    emit = tuple(int(c) for c in bits)
    return TransducerOperator(
        {("a", 0): ("b", emit), ("a", 1): ("b", emit),
         ("b", 0): ("b", ()), ("b", 1): ("b", ())},
        "a",
    )


@dataclass
class OperatorRoster:
    """Finitely many base providers repeated over all task indices.

    Task i gets base ((unpair_1(i) - 1) mod count), so every base serves
    infinitely many indices.
    """

    bases: tuple[Operator, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.bases:
            raise OperatorError("empty operator roster")
        if not self.names:
            self.names = tuple(f"op{k}" for k in range(len(self.bases)))

    def operator_for(self, i: int) -> Operator:
        return self.bases[(unpair_1(i) - 1) % len(self.bases)]

    def name_for(self, i: int) -> str:
        return self.names[(unpair_1(i) - 1) % len(self.bases)]

    def base_for(self, number: int) -> Operator:
        """Direct lookup by operator number (no index decode), wrapped."""
        return self.bases[(number - 1) % len(self.bases)]

    def base_name_for(self, number: int) -> str:
        return self.names[(number - 1) % len(self.bases)]


def roster_operator(roster: OperatorRoster, i: int) -> Operator:
    return roster.operator_for(i)


class TableFunction:
    """Partial integer function given by explicit (arg, value, cost) rows."""

    def __init__(self, rows: Iterable[tuple[int, int, int]]):
        self.rows = {}
        for arg, value, cost in rows:
            if cost < 0:
                raise OperatorError("function cost must be >= 0")
            self.rows[arg] = (value, cost)

    def bounded(self, arg: int, steps: int) -> Optional[int]:
        hit = self.rows.get(arg)
        if hit is None or hit[1] > steps:
            return None
        return hit[0]


class LinearFunction:
    """Total function a*x + b, charged cost equal to its value."""

    def __init__(self, a: int, b: int):
        if a < 0 or b < 0:
            raise OperatorError("linear coefficients must be >= 0")
        self.a = a
        self.b = b

    def bounded(self, arg: int, steps: int) -> Optional[int]:
        value = self.a * arg + self.b
        return value if value <= steps else None


PartialFunction = TableFunction | LinearFunction


@dataclass
class FunctionRoster:
    bases: tuple[PartialFunction, ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.bases:
            raise OperatorError("empty function roster")
        if not self.names:
            self.names = tuple(f"fn{k}" for k in range(len(self.bases)))

    def function_for(self, j: int) -> PartialFunction:
        return self.bases[(unpair_1(j) - 1) % len(self.bases)]

    def name_for(self, j: int) -> str:
        return self.names[(unpair_1(j) - 1) % len(self.bases)]


def phi_bounded(roster: FunctionRoster, j: int, arg: int, steps: int) -> Optional[int]:
    return roster.function_for(j).bounded(arg, steps)


def load_operator(desc: dict) -> tuple[str, Operator]:
    kind = desc.get("kind")
    name = desc.get("name", kind)
    if kind == "echo":
        return name, echo_operator()
    if kind == "silent":
        return name, silent_operator()
    if kind == "flip":
        return name, flip_operator()
    if kind == "doubler":
        return name, doubler_operator()
    if kind == "const":
        return name, const_operator(desc["bits"])
    if kind == "table":
        entries = [
            (BitString.from_str(s), BitString.from_str(d), int(c))
            for s, d, c in desc["entries"]
        ]
        return name, TableOperator(entries)
    if kind == "transducer":
        rules = {
            (state, int(b)): (tgt, tuple(int(e) for e in emit))
            for state, b, tgt, emit in desc["rules"]
        }
        return name, TransducerOperator(rules, desc["start"])
    raise OperatorError(f"unknown operator kind {kind!r}")


def load_function(desc: dict) -> tuple[str, PartialFunction]:
    kind = desc.get("kind")
    name = desc.get("name", kind)
    if kind == "linear":
        return name, LinearFunction(int(desc["a"]), int(desc["b"]))
    if kind == "table":
        return name, TableFunction(
            [(int(a), int(v), int(c)) for a, v, c in desc["rows"]]
        )
    raise OperatorError(f"unknown function kind {kind!r}")


def load_rosters(desc: dict) -> tuple[OperatorRoster, FunctionRoster]:
    op_descs = desc.get("operators", [])
    fn_descs = desc.get("functions", [])
    if not op_descs or not fn_descs:
        raise OperatorError("roster description needs operators and functions")
    names_o, ops = zip(*(load_operator(d) for d in op_descs))
    names_f, fns = zip(*(load_function(d) for d in fn_descs))
    return (
        OperatorRoster(tuple(ops), tuple(names_o)),
        FunctionRoster(tuple(fns), tuple(names_f)),
    )
