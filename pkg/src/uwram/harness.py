"""Trace replay against the structures and a plain sorted-list oracle.

Trace format, one op per line (``#`` starts a comment)::

    insert <uint>
    delete <uint>
    pred <uint>
    member <uint>
    pmember <uint> ... <uint>      # exactly K operands

Values are decimal or ``0b``-prefixed binary.
"""

from __future__ import annotations

import bisect
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .machine import CostCounters, Machine, MachineConfig, UsageError, lanes_for
from .pdict import ParallelDict
from .xtrie import PredecessorSet
from .xtrie_eps import EpsPredecessorSet

KINDS = ("insert", "delete", "pred", "member", "pmember")
STRUCTURES = ("pdict", "xtrie", "xtrie-eps")
PROFILES = ("uniform", "clustered", "sorted", "adversarial-dense")
COST_CLASSES = CostCounters.FIELDS + ("total",)

# Peak arena words stay below C1 * max(n, 1) + C2 * w for these constants
# (measured on random traces, then rounded up; see the acceptance suite).
SPACE_CONSTANTS = {"pdict": (32, 8), "xtrie": (96, 8), "xtrie-eps": (32, 8)}

# The eight 6-bit values of the worked example and its query.
EXAMPLE_VALUES = (0b001000, 0b001010, 0b001011, 0b101000, 0b101010, 0b110110, 0b110111, 0b111100)
EXAMPLE_QUERY = 0b110101


def space_bound(structure: str, n: int, w: int) -> int:
    c1, c2 = SPACE_CONSTANTS[structure]
    return c1 * max(n, 1) + c2 * w


def example_trace() -> list[TraceOp]:
    """Insert the example set, query, insert the query point, query again."""
    ops = [TraceOp("insert", (v,)) for v in EXAMPLE_VALUES]
    ops += [TraceOp("pred", (EXAMPLE_QUERY,)), TraceOp("insert", (EXAMPLE_QUERY,)),
            TraceOp("pred", (EXAMPLE_QUERY,))]
    return ops


# Largest live set the generators aim for when w is small.  The arena has
# 2**w - 1 words, which at w = 8 leaves room for only a handful of keys.
SMALL_W_LIVE = {8: 7, 16: 400}


class TraceError(UsageError):
    """Malformed trace or a trace that does not fit the configuration."""

    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


@dataclass(frozen=True)
class TraceOp:
    kind: str
    operands: tuple[int, ...]

    def __str__(self) -> str:
        return " ".join([self.kind, *map(str, self.operands)])


def _parse_uint(tok: str) -> int:
    if tok.startswith("0b"):
        return int(tok[2:], 2)
    if not tok.isdigit():
        raise ValueError(tok)
    return int(tok)


def parse_trace(text: str) -> list[TraceOp]:
    ops = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        kind, *toks = line.split()
        if kind not in KINDS:
            raise TraceError(f"unknown op {kind!r}", lineno)
        try:
            operands = tuple(_parse_uint(t) for t in toks)
        except ValueError as e:
            raise TraceError(f"bad operand {e.args[0]!r}", lineno) from None
        if kind != "pmember" and len(operands) != 1:
            raise TraceError(f"{kind} takes one operand, got {len(operands)}", lineno)
        if kind == "pmember" and not operands:
            raise TraceError("pmember needs operands", lineno)
        ops.append(TraceOp(kind, operands))
    return ops


def format_trace(ops: Iterable[TraceOp]) -> str:
    return "".join(f"{op}\n" for op in ops)


def check_trace(ops: Sequence[TraceOp], w: int, K: int) -> None:
    for i, op in enumerate(ops):
        if any(v >> w for v in op.operands):
            raise TraceError(f"op {i} ({op}): operand does not fit in {w} bits")
        if op.kind == "pmember" and len(op.operands) != K:
            raise TraceError(f"op {i}: pmember needs {K} operands, got {len(op.operands)}")


# -- generation

def gen_trace(w: int, profile: str, n: int, seed: int, *, K: int | None = None,
              max_live: int | None = None, mix=(0.5, 0.2, 0.3)) -> list[TraceOp]:
    """Deterministic mixed trace of ``n`` ops (inserts, deletes, queries).

    ``mix`` gives the insert / delete / query proportions; the query is
    ``pred`` or, when ``K`` is given, alternately ``member`` and ``pmember``.
    """
    if profile not in PROFILES:
        raise UsageError(f"unknown profile {profile!r}")
    if n < 0:
        raise UsageError("n must be >= 0")
    rng = random.Random(seed)
    if max_live is None:
        max_live = SMALL_W_LIVE.get(w)
    top = (1 << w) - 1
    draw = _key_source(profile, w, rng)
    live: list[int] = []
    live_set: set[int] = set()
    ops: list[TraceOp] = []
    p_ins, p_del, _ = mix
    for _ in range(n):
        r = rng.random()
        if r < p_ins and (max_live is None or len(live) < max_live):
            x = draw()
            ops.append(TraceOp("insert", (x,)))
            if x not in live_set:
                live_set.add(x)
                live.append(x)
        elif r < p_ins + p_del and live:
            # mostly present keys, sometimes an absent one
            if rng.random() < 0.85:
                i = rng.randrange(len(live))
                x = live[i]
                live[i] = live[-1]
                live.pop()
                live_set.discard(x)
            else:
                x = draw()
                if x in live_set:
                    live_set.discard(x)
                    live.remove(x)
            ops.append(TraceOp("delete", (x,)))
        else:
            x = draw() if not live or rng.random() < 0.5 else min(top, rng.choice(live) + rng.randrange(3))
            if K is None:
                ops.append(TraceOp("pred", (x,)))
            elif rng.random() < 0.5:
                ops.append(TraceOp("member", (x,)))
            else:
                pool = live or [x]
                lanes = [rng.choice(pool) if rng.random() < 0.5 else draw() for _ in range(K)]
                ops.append(TraceOp("pmember", tuple(lanes)))
    return ops


def _key_source(profile: str, w: int, rng: random.Random) -> Callable[[], int]:
    top = (1 << w) - 1
    if profile == "uniform":
        return lambda: rng.getrandbits(w)
    if profile == "clustered":
        centers = [rng.getrandbits(w) for _ in range(4)]
        spread = max(4, 1 << (w // 3))
        return lambda: min(top, max(0, rng.choice(centers) + rng.randrange(-spread, spread)))
    if profile == "sorted":
        state = {"next": rng.getrandbits(max(1, w // 2))}

        def nxt() -> int:
            state["next"] += 1 + rng.randrange(4)
            return state["next"] & top
        return nxt
    # adversarial-dense: long shared prefixes, keys differing in the low bits
    base = rng.getrandbits(w) & ~0xFF & top
    return lambda: base | rng.getrandbits(min(8, w))


# -- oracle

def oracle_predecessor(ref: Sequence[int], x: int) -> int | None:
    i = bisect.bisect_right(ref, x)
    return ref[i - 1] if i else None


def oracle_member(ref: Sequence[int], x: int) -> bool:
    i = bisect.bisect_left(ref, x)
    return i < len(ref) and ref[i] == x


class Oracle:
    """Sorted list; plain host arithmetic only."""

    def __init__(self):
        self.ref: list[int] = []

    def insert(self, x: int) -> None:
        i = bisect.bisect_left(self.ref, x)
        if i == len(self.ref) or self.ref[i] != x:
            self.ref.insert(i, x)

    def delete(self, x: int) -> None:
        i = bisect.bisect_left(self.ref, x)
        if i < len(self.ref) and self.ref[i] == x:
            self.ref.pop(i)

    def pred(self, x: int) -> int | None:
        return oracle_predecessor(self.ref, x)

    def member(self, x: int) -> bool:
        return oracle_member(self.ref, x)


# -- structures under test

class Adapter:
    """Uniform face over a structure: insert/delete/pred/member/pmember."""

    name = "abstract"

    def __init__(self, m: Machine):
        self.m = m

    def insert(self, x: int) -> None:
        raise NotImplementedError

    def delete(self, x: int) -> None:
        raise NotImplementedError

    def pred(self, x: int) -> int | None:
        raise UsageError(f"{self.name} does not support pred")

    def member(self, x: int) -> bool:
        return self.pred(x) == x

    def pmember(self, xs: Sequence[int]) -> list[int]:
        raise UsageError(f"{self.name} does not support pmember")

    def violations(self) -> list[str]:
        return []

    def extra(self) -> dict:
        return {}


class PDictAdapter(Adapter):
    name = "pdict"

    def __init__(self, m: Machine, seed: int):
        super().__init__(m)
        self.d = ParallelDict(m, seed, table_factor=1 if m.w == 8 else 4)

    def insert(self, x):
        self.d.insert(x)

    def delete(self, x):
        self.d.delete(x)

    def member(self, x):
        return self.d.member(x)

    def pmember(self, xs):
        return self.d.pmember(self.m.uw(xs)).tolist()

    def violations(self):
        return self.d.invariant_violations()

    def extra(self):
        return {"rebuilds": self.d.rebuilds}


class XTrieAdapter(Adapter):
    name = "xtrie"

    def __init__(self, m: Machine, seed: int):
        super().__init__(m)
        self.s = PredecessorSet(m, seed, table_factor=1 if m.w == 8 else 4)

    def insert(self, x):
        self.s.insert(x)

    def delete(self, x):
        self.s.delete(x)

    def pred(self, x):
        return self.s.predecessor(x)

    def violations(self):
        return self.s.invariant_violations()


class EpsAdapter(XTrieAdapter):
    name = "xtrie-eps"

    def __init__(self, m: Machine, seed: int):
        Adapter.__init__(self, m)
        self.s = EpsPredecessorSet(m, seed, table_factor=1 if m.w == 8 else 4)

    def extra(self):
        return {"max_rounds": self.s.max_rounds, "round_bound": self.s.round_bound,
                "splits": self.s.splits}


ADAPTERS: dict[str, type[Adapter]] = {
    "pdict": PDictAdapter,
    "xtrie": XTrieAdapter,
    "xtrie-eps": EpsAdapter,
}


def machine_for(structure: str, w: int, epsilon: Fraction | str | int = 1,
                validate: bool = False) -> Machine:
    eps = Fraction(epsilon)
    if structure == "xtrie" and eps != 1:
        raise UsageError("xtrie runs with K = w lanes; use --epsilon 1 or xtrie-eps")
    cfg = MachineConfig(w=w, K=lanes_for(w, eps), epsilon=eps)
    return Machine(cfg, validate=validate)


# -- running

@dataclass
class Mismatch:
    index: int
    op: str
    expected: object
    got: object


@dataclass
class RunReport:
    structure: str
    w: int
    epsilon: str
    K: int
    seed: int
    validate: bool
    ops: int = 0
    counts: dict[str, int] = field(default_factory=lambda: {k: 0 for k in KINDS})
    mismatch_count: int = 0
    mismatches: list[Mismatch] = field(default_factory=list)
    invariant_violations: int = 0
    cost_mean: dict[str, dict[str, float]] = field(default_factory=dict)
    cost_max: dict[str, dict[str, int]] = field(default_factory=dict)
    peak_arena_words: int = 0
    max_live: int = 0
    space_bound: int | None = None
    final_size: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.mismatch_count == 0 and self.invariant_violations == 0

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "mismatches"}
        d["mismatches"] = [m.__dict__ for m in self.mismatches]
        d["ok"] = self.ok
        return d

    def to_text(self) -> str:
        lines = [f"structure: {self.structure}", f"w: {self.w}", f"epsilon: {self.epsilon}",
                 f"K: {self.K}", f"seed: {self.seed}", f"validate: {self.validate}",
                 f"ops: {self.ops}"]
        lines += [f"count.{k}: {v}" for k, v in self.counts.items()]
        lines.append(f"mismatches: {self.mismatch_count}")
        for mm in self.mismatches:
            lines.append(f"mismatch: op {mm.index} ({mm.op}) expected {mm.expected} got {mm.got}")
        lines.append(f"invariant_violations: {self.invariant_violations}")
        for kind in self.cost_mean:
            for cls in COST_CLASSES:
                lines.append(f"cost.{kind}.{cls}: mean {self.cost_mean[kind][cls]:.2f} "
                             f"max {self.cost_max[kind][cls]}")
        lines.append(f"peak_arena_words: {self.peak_arena_words}")
        lines.append(f"max_live: {self.max_live}")
        if self.space_bound is not None:
            lines.append(f"space_bound: {self.space_bound}")
        lines.append(f"final_size: {self.final_size}")
        lines += [f"{k}: {v}" for k, v in sorted(self.extra.items())]
        lines.append(f"result: {'PASS' if self.ok else 'FAIL'}")
        return "\n".join(lines) + "\n"

    def to_json_lines(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True) + "\n"


MAX_LISTED_MISMATCHES = 20


def run_trace(structure: str, trace: Sequence[TraceOp], *, w: int, epsilon="1", seed: int = 0,
              validate: bool = False, check_every: int = 1,
              factory: Callable[[Machine, int], Adapter] | None = None,
              machine: Machine | None = None) -> RunReport:
    """Replay ``trace`` on a fresh structure and on the oracle.

    With ``validate`` the machine checks model preconditions and the
    structure's invariants are scanned every ``check_every`` updates.
    ``factory`` replaces the named structure (used for harness self-tests).
    """
    if factory is None and structure not in ADAPTERS:
        raise UsageError(f"unknown structure {structure!r}")
    m = machine or machine_for(structure, w, epsilon, validate)
    check_trace(trace, m.w, m.K)
    adapter = (factory or ADAPTERS[structure])(m, seed)
    oracle = Oracle()
    report = RunReport(structure, m.w, str(m.cfg.epsilon), m.K, seed, validate)
    totals: dict[str, CostCounters] = {}
    maxes: dict[str, dict[str, int]] = {}
    updates = 0
    for i, op in enumerate(trace):
        before = m.counters.snapshot()
        x = op.operands[0]
        expected = got = None
        if op.kind == "insert":
            adapter.insert(x)
            oracle.insert(x)
        elif op.kind == "delete":
            adapter.delete(x)
            oracle.delete(x)
        elif op.kind == "pred":
            got, expected = adapter.pred(x), oracle.pred(x)
        elif op.kind == "member":
            got, expected = adapter.member(x), oracle.member(x)
        else:
            got = adapter.pmember(op.operands)
            expected = [int(oracle.member(v)) for v in op.operands]
        cost = m.counters - before
        report.counts[op.kind] += 1
        acc = totals.setdefault(op.kind, CostCounters())
        acc += cost
        mx = maxes.setdefault(op.kind, {c: 0 for c in COST_CLASSES})
        for cls in CostCounters.FIELDS:
            mx[cls] = max(mx[cls], getattr(cost, cls))
        mx["total"] = max(mx["total"], cost.total())
        if got != expected:
            report.mismatch_count += 1
            if len(report.mismatches) < MAX_LISTED_MISMATCHES:
                report.mismatches.append(Mismatch(i, str(op), expected, got))
        if op.kind in ("insert", "delete"):
            report.max_live = max(report.max_live, len(oracle.ref))
            updates += 1
            if validate and check_every and updates % check_every == 0:
                report.invariant_violations += len(adapter.violations())
    if validate:
        report.invariant_violations += len(adapter.violations())
    report.ops = len(trace)
    for kind, acc in totals.items():
        n = report.counts[kind]
        mean = {cls: getattr(acc, cls) / n for cls in CostCounters.FIELDS}
        mean["total"] = acc.total() / n
        report.cost_mean[kind] = mean
        report.cost_max[kind] = maxes[kind]
    report.peak_arena_words = m.arena.peak_words
    if structure in SPACE_CONSTANTS:
        report.space_bound = space_bound(structure, report.max_live, m.w)
    report.final_size = len(oracle.ref)
    report.extra = adapter.extra()
    return report


class StubAdapter(Adapter):
    """Deliberately wrong structure: forgets every third insert."""

    name = "stub"

    def __init__(self, m: Machine, seed: int):
        super().__init__(m)
        self.ref = Oracle()
        self.seen = 0

    def insert(self, x):
        self.seen += 1
        if self.seen % 3:
            self.ref.insert(x)

    def delete(self, x):
        self.ref.delete(x)

    def pred(self, x):
        self.m.word(1)
        return self.ref.pred(x)

    def pmember(self, xs):
        return [int(self.ref.member(v)) for v in xs]


def self_test(seed: int = 0) -> bool:
    """True when the harness catches the stub's divergence."""
    trace = gen_trace(16, "uniform", 300, seed)
    report = run_trace("stub", trace, w=16, seed=seed, factory=StubAdapter,
                       machine=machine_for("xtrie", 16))
    return report.mismatch_count > 0
