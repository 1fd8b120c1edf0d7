"""Constant-time predecessor search on a K = w machine (the xtra-fast trie).

Keys have ``key_bits <= w - 1`` bits and are placed in the top bits of a
word, ``xh = x << (w - key_bits)``.  Every edge (u, v) of the compacted trie
over S is stored in a :class:`ParallelDict` under ``key(u, v)``: its label
followed by a 1-bit and zero padding.  The satellite data of an edge is the
pair of leaf-list addresses of min(v) and max(v).

Small sets live in a sorted arena block instead; the trie is built when the
set reaches ``trie_threshold`` elements (default w) and torn down again at
``fallback_threshold`` (default w/2).
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from .machine import InvariantViolation, Machine, Ultraword, UsageError
from .pdict import ParallelDict

NODE_WORDS = 3  # value, prev, next
VAL, PREV, NEXT = 0, 1, 2


class LeafList:
    """Sorted doubly linked list of arena nodes; address 0 is null."""

    def __init__(self, m: Machine):
        self.m = m
        self.head = 0
        self.tail = 0
        self.size = 0

    def new_node(self, value: int) -> int:
        node = self.m.alloc(NODE_WORDS)
        self.m.store(node + VAL, value)
        return node

    def insert_after(self, prev: int, value: int) -> int:
        """Link a new node right after ``prev`` (at the head when prev is 0)."""
        m = self.m
        node = self.new_node(value)
        nxt = m.load(prev + NEXT) if prev else self.head
        m.store(node + PREV, prev)
        m.store(node + NEXT, nxt)
        if prev:
            m.store(prev + NEXT, node)
        else:
            self.head = node
        if nxt:
            m.store(nxt + PREV, node)
        else:
            self.tail = node
        self.size += 1
        return node

    def unlink(self, node: int) -> None:
        m = self.m
        prev, nxt = m.load(node + PREV), m.load(node + NEXT)
        if prev:
            m.store(prev + NEXT, nxt)
        else:
            self.head = nxt
        if nxt:
            m.store(nxt + PREV, prev)
        else:
            self.tail = prev
        m.free(node, NODE_WORDS)
        self.size -= 1

    def nodes(self) -> list[int]:
        cells = self.m.arena.cells
        out, node = [], self.head
        while node:
            out.append(node)
            node = int(cells[node + NEXT])
        return out

    def values(self) -> list[int]:
        cells = self.m.arena.cells
        return [int(cells[n + VAL]) for n in self.nodes()]

    def destroy(self) -> None:
        for node in self.nodes():
            self.m.free(node, NODE_WORDS)
        self.head = self.tail = 0
        self.size = 0

    def violations(self) -> list[str]:
        cells = self.m.arena.cells
        problems = []
        prev, node, last, count = 0, self.head, None, 0
        while node:
            if int(cells[node + PREV]) != prev:
                problems.append(f"leaf list: node {node} has prev {int(cells[node + PREV])}, expected {prev}")
            v = int(cells[node + VAL])
            if last is not None and v <= last:
                problems.append(f"leaf list: {v} follows {last}")
            last, prev, node = v, node, int(cells[node + NEXT])
            count += 1
            if count > self.size + 1:
                problems.append("leaf list: cycle")
                break
        if prev != self.tail:
            problems.append("leaf list: tail does not match last node")
        if count != self.size:
            problems.append(f"leaf list: {count} nodes, size says {self.size}")
        return problems


class SortedBlock:
    """Small sorted array in the arena; searched on the host and charged as host_ops."""

    def __init__(self, m: Machine, values=()):
        self.m = m
        values = sorted(set(values))
        self.n = len(values)
        self.cap = max(4, 1 << max(0, (self.n - 1).bit_length()))
        self.addr = m.alloc(self.cap)
        m.arena.cells[self.addr: self.addr + self.n] = values
        m.host(self.n)

    def _view(self) -> np.ndarray:
        return self.m.arena.cells[self.addr: self.addr + self.n]

    def _search(self, x: int) -> int:
        self.m.host(max(1, self.n.bit_length()))
        return int(np.searchsorted(self._view(), np.uint64(x), side="right"))

    def predecessor(self, x: int) -> int | None:
        i = self._search(x)
        return int(self.m.arena.cells[self.addr + i - 1]) if i else None

    def insert(self, x: int) -> bool:
        i = self._search(x)
        cells = self.m.arena.cells
        if i and int(cells[self.addr + i - 1]) == x:
            return False
        if self.n == self.cap:
            new = self.m.alloc(2 * self.cap)
            cells = self.m.arena.cells
            cells[new: new + self.n] = cells[self.addr: self.addr + self.n]
            self.m.free(self.addr, self.cap)
            self.m.host(self.n)
            self.addr, self.cap = new, 2 * self.cap
        a = self.addr
        cells[a + i + 1: a + self.n + 1] = cells[a + i: a + self.n].copy()
        cells[a + i] = x
        self.m.host(self.n - i + 1)
        self.n += 1
        return True

    def delete(self, x: int) -> bool:
        i = self._search(x)
        cells = self.m.arena.cells
        a = self.addr
        if not i or int(cells[a + i - 1]) != x:
            return False
        cells[a + i - 1: a + self.n - 1] = cells[a + i: a + self.n].copy()
        self.m.host(self.n - i + 1)
        self.n -= 1
        return True

    def max(self) -> int | None:
        self.m.host(1)
        return int(self.m.arena.cells[self.addr + self.n - 1]) if self.n else None

    def values(self) -> list[int]:
        return [int(v) for v in self._view()]

    def destroy(self) -> None:
        self.m.free(self.addr, self.cap)
        self.n = 0

    def violations(self) -> list[str]:
        v = self._view()
        if self.n > 1 and not bool(np.all(v[1:] > v[:-1])):
            return ["fallback block is not strictly increasing"]
        return []


def prefix_mask(w: int, i: int) -> int:
    """Lane i of M': i ones followed by w - i zeros."""
    return ((1 << i) - 1) << (w - i)


def lone_bit(w: int, i: int) -> int:
    """Lane i of H: only the (i+1)th leftmost bit set."""
    return 1 << (w - 1 - i)


def edge_key(w: int, xh: int, length: int) -> int:
    """Key of the edge whose label is the first ``length`` bits of xh."""
    return (xh & prefix_mask(w, length)) | lone_bit(w, length)


class TrieConstants:
    """Ultraword constants M' and H, kept in the arena."""

    def __init__(self, m: Machine):
        self.m = m
        w, K = m.w, m.K
        self.addr = m.alloc(2 * K)
        for i in range(K):
            m.store(self.addr + i, prefix_mask(w, i))
            m.store(self.addr + K + i, lone_bit(w, i))

    def load(self) -> tuple[Ultraword, Ultraword]:
        return self.m.load_ultra(self.addr), self.m.load_ultra(self.addr + self.m.K)

    def destroy(self) -> None:
        self.m.free(self.addr, 2 * self.m.K)


@dataclass
class Search:
    """Everything a predecessor query learns; reused by updates."""

    k: int            # lane of the exit edge, 0 if there is none
    I: Ultraword
    P: Ultraword
    block: int        # data block of the exit edge
    min_node: int
    max_node: int
    min_value: int
    max_value: int
    left_node: int    # node left of min(v)
    answer: int | None
    answer_node: int


@dataclass(frozen=True)
class ExitEdge:
    lane: int
    key: int
    I: Ultraword
    P: Ultraword
    min_addr: int
    max_addr: int


def compacted_edges(values: list[int], bits: int) -> dict[tuple[int, int], tuple[int, int]]:
    """Reference compacted trie: {(label, label length): (min leaf, max leaf)}."""
    out: dict[tuple[int, int], tuple[int, int]] = {}

    def bit(x: int, d: int) -> int:
        return (x >> (bits - 1 - d)) & 1

    def walk(group: list[int], depth: int) -> None:
        # group shares its first `depth` bits; split on bit `depth`
        for b in (0, 1):
            sub = [x for x in group if bit(x, depth) == b]
            if not sub:
                continue
            out[(sub[0] >> (bits - depth - 1), depth + 1)] = (sub[0], sub[-1])
            lcp = bits
            if len(sub) > 1:
                lcp = bits - 1 - (sub[0] ^ sub[-1]).bit_length() + 1
            if lcp < bits:
                walk(sub, lcp)

    if values:
        walk(sorted(values), 0)
    return out


class XtraFastTrie:
    """Predecessor structure over ``key_bits``-bit keys (default w - 1)."""

    def __init__(self, m: Machine, seed: int | None = 0, *, key_bits: int | None = None,
                 trie_threshold: int | None = None, fallback_threshold: int | None = None,
                 table_factor: int = 4, rng: random.Random | None = None):
        if m.K != m.w:
            raise UsageError("the xtra-fast trie needs K = w components")
        self.m = m
        self.w = m.w
        self.key_bits = self.w - 1 if key_bits is None else key_bits
        if not 1 <= self.key_bits <= self.w - 1:
            raise UsageError(f"key_bits must be in [1, w-1], got {self.key_bits}")
        self.shift = self.w - self.key_bits
        self.rng = rng if rng is not None else random.Random(seed)
        self.trie_threshold = self.w if trie_threshold is None else trie_threshold
        self.fallback_threshold = self.w // 2 if fallback_threshold is None else fallback_threshold
        if self.fallback_threshold >= self.trie_threshold:
            raise UsageError("fallback_threshold must be below trie_threshold")
        self.table_factor = table_factor
        self.n = 0
        self.mode = "fallback"
        self.mode_switches = 0
        self.fallback: SortedBlock | None = SortedBlock(m)
        self.D: ParallelDict | None = None
        self.L: LeafList | None = None
        self.consts: TrieConstants | None = None
        if self.trie_threshold <= 0:
            self._enter_trie()

    # -- public interface

    def __len__(self) -> int:
        return self.n

    def __contains__(self, x: int) -> bool:
        return self.predecessor(x) == x

    def _check_key(self, x: int) -> None:
        if not 0 <= x < (1 << self.key_bits):
            raise UsageError(f"key {x} does not fit in {self.key_bits} bits")

    def predecessor(self, x: int) -> int | None:
        """Largest stored y <= x, or None."""
        self._check_key(x)
        if self.mode == "fallback":
            return self.fallback.predecessor(x)
        return self._search(x).answer

    def insert(self, x: int) -> bool:
        self._check_key(x)
        if self.mode == "fallback":
            added = self.fallback.insert(x)
        else:
            added = self._trie_insert(x)
        if added:
            self.n += 1
            if self.mode == "fallback" and self.n >= self.trie_threshold:
                self._enter_trie()
        return added

    def delete(self, x: int) -> bool:
        self._check_key(x)
        if self.mode == "fallback":
            removed = self.fallback.delete(x)
        else:
            removed = self._trie_delete(x)
        if removed:
            self.n -= 1
            if self.mode == "trie" and self.n <= self.fallback_threshold:
                self._leave_trie()
        return removed

    def max(self) -> int | None:
        if self.mode == "fallback":
            return self.fallback.max()
        return self.m.load(self.L.tail + VAL) if self.L.tail else None

    def values(self) -> list[int]:
        return self.fallback.values() if self.mode == "fallback" else self.L.values()

    # -- mode switching

    def _enter_trie(self) -> None:
        m = self.m
        values = self.fallback.values() if self.fallback else []
        if self.fallback:
            self.fallback.destroy()
            self.fallback = None
        self.D = ParallelDict(m, satellite=True, data_words=2, table_factor=self.table_factor,
                              rng=self.rng)
        self.L = LeafList(m)
        self.consts = TrieConstants(m)
        # per-lane scratch words: target of the parallel repair for unused lanes
        self.scratch = m.alloc(m.K + 1)
        self.scratch_lanes = m.uw([self.scratch + i for i in range(m.K)])
        # stand-in for "no exit edge": a data block pointing at a null node
        self.dummy_node = m.alloc(NODE_WORDS)
        self.dummy_block = m.alloc(2)
        m.store(self.dummy_block, self.dummy_node)
        m.store(self.dummy_block + 1, self.dummy_node)
        self.mode = "trie"
        self.mode_switches += 1
        for v in values:
            self._trie_insert(v)

    def _leave_trie(self) -> None:
        m = self.m
        values = self.L.values()
        m.host(len(values))
        self.D.destroy()
        self.L.destroy()
        self.consts.destroy()
        m.free(self.scratch, m.K + 1)
        m.free(self.dummy_node, NODE_WORDS)
        m.free(self.dummy_block, 2)
        self.D = self.L = self.consts = None
        self.fallback = SortedBlock(m, values)
        self.mode = "fallback"
        self.mode_switches += 1

    # -- trie internals

    def prefix_labels(self, x: int) -> Ultraword:
        """Lane i: key of the length-i prefix of x."""
        if self.mode != "trie":
            raise UsageError("prefix_labels needs trie mode")
        m = self.m
        Mp, H = self.consts.load()
        return m.or_(m.and_(m.broadcast(x << self.shift), Mp), H)

    def _search(self, x: int) -> Search:
        m = self.m
        I, P = self.D.pretrieve(self.prefix_labels(x))
        # lane 0 (empty label) never matches, so k = 0 means "no exit edge"
        c = m.compress(I)
        m.word(1)
        k = m.msb_index(c | 1)
        m.store_ultra(self.scratch, P)
        m.word(1)
        block = m.load(self.scratch + k) if k else self.dummy_block
        min_node = m.load(block)
        max_node = m.load(block + 1)
        min_value = m.load(min_node + VAL)
        max_value = m.load(max_node + VAL)
        left_node = m.load(min_node + PREV)
        left_value = m.load(left_node + VAL)
        tail = self.L.tail
        tail_value = m.load(tail + VAL)
        m.word(3)
        if k == 0:
            high = (x >> (self.key_bits - 1)) & 1
            answer_node = tail if high else 0
            answer = tail_value if answer_node else None
        elif x >= max_value:
            answer_node, answer = max_node, max_value
        else:
            answer_node = left_node
            answer = left_value if left_node else None
        return Search(k, I, P, block, min_node, max_node, min_value, max_value,
                      left_node, answer, answer_node)

    def find_exit_edge(self, x: int) -> ExitEdge | None:
        self._check_key(x)
        if self.mode != "trie":
            raise UsageError("find_exit_edge needs trie mode")
        s = self._search(x)
        if s.k == 0:
            return None
        return ExitEdge(s.k, edge_key(self.w, x << self.shift, s.k), s.I, s.P,
                        s.min_node, s.max_node)

    def _repair(self, s: Search, side: int, old: int, new: int) -> None:
        """Redirect every path pointer (min: side 0, max: side 1) equal to ``old``."""
        m = self.m
        # drop the exit lane
        _, H = self.consts.load()
        I = m.xor(s.I, m.eq(m.broadcast(lone_bit(self.w, s.k)), H))
        # lanes without an edge hold arbitrary addresses; point them at
        # private scratch words so the scattered write has distinct targets
        P = m.add(m.blend(self.scratch_lanes, s.P, I), m.broadcast(side))
        Mv = m.scatter_read(P)
        E = m.eq(Mv, m.broadcast(old))
        B = m.blend(Mv, m.broadcast(new), m.and_(I, E))
        m.scatter_write(P, B)

    def _trie_insert(self, x: int) -> bool:
        m, w = self.m, self.w
        s = self._search(x)
        if s.answer == x and s.answer_node:
            return False
        xh = x << self.shift
        if s.k == 0:
            high = (x >> (self.key_bits - 1)) & 1
            node = self.L.insert_after(self.L.tail if high else 0, x)
            self.D.insert(edge_key(w, xh, 1), (node, node))
            return True
        left = x < s.min_value
        m.word(1)
        node = self.L.insert_after(s.left_node if left else s.max_node, x)
        # branching node p: longest common prefix of x and the leaves below v
        m.word(2)
        depth = w - 1 - m.msb_index(xh ^ (s.min_value << self.shift))
        key_px = edge_key(w, xh, depth + 1)
        key_pv = key_px ^ (1 << (w - depth - 1))
        m.word(4)
        # (u, p) keeps the key of (u, v); only one of its pointers changes
        m.store(s.block + (0 if left else 1), node)
        self.D.insert(key_px, (node, node))
        self.D.insert(key_pv, (s.min_node, s.max_node))
        if left:
            self._repair(s, 0, s.min_node, node)
        else:
            self._repair(s, 1, s.max_node, node)
        return True

    def _trie_delete(self, x: int) -> bool:
        m, w = self.m, self.w
        s = self._search(x)
        if s.answer != x or not s.answer_node:
            return False
        node = s.max_node
        key_px = edge_key(w, x << self.shift, s.k)
        m.word(2)
        if s.k == 1:
            self.D.delete(key_px)
            self.L.unlink(node)
            return True
        is_left = not (key_px >> (w - s.k)) & 1
        m.word(2)
        if is_left:
            self._repair(s, 0, node, m.load(node + NEXT))
        else:
            self._repair(s, 1, node, m.load(node + PREV))
        self.D.delete(key_px)
        self.D.delete(key_px ^ (1 << (w - s.k)))
        self.L.unlink(node)
        return True

    # -- checking

    def invariant_violations(self) -> list[str]:
        if self.mode == "fallback":
            problems = self.fallback.violations()
            if self.fallback.n != self.n:
                problems.append(f"fallback holds {self.fallback.n} values, n = {self.n}")
            return problems
        problems = self.L.violations() + self.D.invariant_violations()
        cells = self.m.arena.cells
        values = self.L.values()
        if len(values) != self.n:
            problems.append(f"leaf list holds {len(values)} values, n = {self.n}")
        expected = {}
        for (label, length), (lo, hi) in compacted_edges(values, self.key_bits).items():
            xh = label << (self.w - length)
            expected[edge_key(self.w, xh, length)] = (lo, hi)
        stored = dict(self.D.entries())
        if set(stored) != set(expected):
            missing = sorted(set(expected) - set(stored))[:3]
            extra = sorted(set(stored) - set(expected))[:3]
            problems.append(f"edge keys differ from the compacted trie (missing {missing}, extra {extra})")
        for key in set(stored) & set(expected):
            blk = stored[key]
            got = (int(cells[int(cells[blk]) + VAL]), int(cells[int(cells[blk + 1]) + VAL]))
            if got != expected[key]:
                problems.append(f"edge {key:#x}: min/max leaves {got}, expected {expected[key]}")
        if self.n and len(stored) > 2 * self.n - 1:
            problems.append(f"{len(stored)} edges for {self.n} leaves")
        return problems

    def check_invariants(self) -> None:
        problems = self.invariant_violations()
        if problems:
            raise InvariantViolation("; ".join(problems[:5]))

    def destroy(self) -> None:
        if self.mode == "trie":
            self._leave_trie()
        self.fallback.destroy()


class PredecessorSet:
    """w-bit keys: one trie over (w-1)-bit keys for each value of the top bit."""

    def __init__(self, m: Machine, seed: int | None = 0, **kw):
        self.m = m
        self.w = m.w
        rng = random.Random(seed)
        self.halves = (XtraFastTrie(m, rng=random.Random(rng.getrandbits(64)), **kw),
                       XtraFastTrie(m, rng=random.Random(rng.getrandbits(64)), **kw))
        self._low = (1 << (self.w - 1)) - 1

    def _split(self, x: int) -> tuple[int, int]:
        if not 0 <= x <= self.m.cfg.mask:
            raise UsageError(f"key {x} does not fit in {self.w} bits")
        return x >> (self.w - 1), x & self._low

    def __len__(self) -> int:
        return len(self.halves[0]) + len(self.halves[1])

    def __contains__(self, x: int) -> bool:
        return self.predecessor(x) == x

    def insert(self, x: int) -> bool:
        top, low = self._split(x)
        return self.halves[top].insert(low)

    def delete(self, x: int) -> bool:
        top, low = self._split(x)
        return self.halves[top].delete(low)

    def predecessor(self, x: int) -> int | None:
        top, low = self._split(x)
        p = self.halves[top].predecessor(low)
        if p is not None:
            return p | (top << (self.w - 1))
        if top == 1:
            return self.halves[0].max()
        return None

    def values(self) -> list[int]:
        hi = 1 << (self.w - 1)
        return self.halves[0].values() + [v | hi for v in self.halves[1].values()]

    def invariant_violations(self) -> list[str]:
        return [f"S{i}: {p}" for i, h in enumerate(self.halves) for p in h.invariant_violations()]

    def check_invariants(self) -> None:
        problems = self.invariant_violations()
        if problems:
            raise InvariantViolation("; ".join(problems[:5]))
