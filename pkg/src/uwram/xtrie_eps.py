"""Predecessor search with ultrawords of K = ceil(w**eps) components.

The set is cut into buckets of Theta(w) consecutive values.  One separator
per bucket goes into an *uncompacted* trie whose every prefix is a
dictionary entry, so the present prefix lengths of any query form a range
1..L.  L is found by a K-way search driven by a static B-tree over the
prefix lengths: each node holds up to K (M', H) constant pairs, so one
parallel membership query per node picks the child.  Height is at most
ceil(1/eps) + 1.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import numpy as np

from .machine import InvariantViolation, Machine, UsageError
from .pdict import ParallelDict
from .xtrie import SortedBlock, edge_key, lone_bit, prefix_mask

SEP, PREV, NEXT, COUNT, VALUES = 0, 1, 2, 3, 4


class ConstantBTree:
    """Static B-tree over prefix lengths 1..bits, stored in the arena.

    Node layout: ``[k, M'_v (K words), H_v (K words), children (K+1 words)]``;
    a null child is 0.
    """

    def __init__(self, m: Machine, bits: int):
        self.m = m
        self.K = m.K
        self.node_words = 3 * self.K + 2
        self.nodes: list[int] = []
        self.root = self._build(list(range(1, bits + 1)))
        self.height = self._height(self.root)

    def _build(self, lengths: list[int]) -> int:
        m, K = self.m, self.K
        if not lengths:
            return 0
        if len(lengths) <= K:
            keys, groups = lengths, [[] for _ in range(len(lengths) + 1)]
        else:
            # K keys spread evenly, the rest shared among K+1 children
            rest = len(lengths) - K
            sizes = [rest // (K + 1) + (1 if i < rest % (K + 1) else 0) for i in range(K + 1)]
            keys, groups, pos = [], [], 0
            for i in range(K + 1):
                groups.append(lengths[pos: pos + sizes[i]])
                pos += sizes[i]
                if i < K:
                    keys.append(lengths[pos])
                    pos += 1
        children = [self._build(g) for g in groups]
        node = m.alloc(self.node_words)
        self.nodes.append(node)
        m.store(node, len(keys))
        for i, length in enumerate(keys):
            m.store(node + 1 + i, prefix_mask(m.w, length))
            m.store(node + 1 + K + i, lone_bit(m.w, length))
        for i, child in enumerate(children):
            m.store(node + 1 + 2 * K + i, child)
        return node

    def _height(self, node: int) -> int:
        if not node:
            return 0
        cells = self.m.arena.cells
        k = int(cells[node])
        return 1 + max(self._height(int(cells[node + 1 + 2 * self.K + i])) for i in range(k + 1))

    def lengths(self) -> list[int]:
        """All stored prefix lengths, in order (for checks)."""
        cells, K, w = self.m.arena.cells, self.K, self.m.w
        out: list[int] = []

        def walk(node: int) -> None:
            if not node:
                return
            k = int(cells[node])
            for i in range(k + 1):
                walk(int(cells[node + 1 + 2 * K + i]))
                if i < k:
                    out.append(w - int(cells[node + 1 + K + i]).bit_length())

        walk(self.root)
        return out

    def destroy(self) -> None:
        for node in self.nodes:
            self.m.free(node, self.node_words)
        self.nodes = []


@dataclass
class Located:
    bucket: int          # bucket whose separator is the largest one <= x
    rounds: int
    lcp: int


class EpsTrie:
    """Predecessor structure over ``key_bits``-bit keys (default w - 1)."""

    def __init__(self, m: Machine, seed: int | None = 0, *, key_bits: int | None = None,
                 trie_threshold: int | None = None, fallback_threshold: int | None = None,
                 table_factor: int = 4, rng: random.Random | None = None):
        self.m = m
        self.w = m.w
        self.K = m.K
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
        self.split_above = 2 * self.w
        self.merge_below = max(1, self.w // 4)
        self.bucket_words = VALUES + self.split_above + 1
        eps = m.cfg.epsilon
        self.round_bound = math.ceil(1 / eps) + 1
        self.n = 0
        self.mode = "fallback"
        self.splits = self.merges = 0
        self.max_rounds = 0
        self.last_rounds = 0
        self.fallback: SortedBlock | None = SortedBlock(m)
        self.D: ParallelDict | None = None
        self.btree: ConstantBTree | None = None
        self.head = self.tail = 0
        self.buckets = 0
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
        self._check_key(x)
        if self.mode == "fallback":
            return self.fallback.predecessor(x)
        loc = self._locate(x)
        return self._bucket_pred(loc.bucket, x)

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
        if not self.tail:
            return None
        count = self.m.load(self.tail + COUNT)
        return self.m.load(self.tail + VALUES + count - 1) if count else None

    def values(self) -> list[int]:
        if self.mode == "fallback":
            return self.fallback.values()
        out = []
        for b in self.bucket_list():
            out.extend(self._bucket_values(b))
        return out

    # -- buckets (bounded sorted arrays, searched on the host)

    def bucket_list(self) -> list[int]:
        cells, out, b = self.m.arena.cells, [], self.head
        while b:
            out.append(b)
            b = int(cells[b + NEXT])
        return out

    def _bucket_values(self, b: int) -> np.ndarray:
        cells = self.m.arena.cells
        count = int(cells[b + COUNT])
        return cells[b + VALUES: b + VALUES + count]

    def _new_bucket(self, sep: int, values, after: int) -> int:
        m = self.m
        b = m.alloc(self.bucket_words)
        m.store(b + SEP, sep)
        self._set_values(b, values)
        nxt = m.load(after + NEXT) if after else self.head
        m.store(b + PREV, after)
        m.store(b + NEXT, nxt)
        if after:
            m.store(after + NEXT, b)
        else:
            self.head = b
        if nxt:
            m.store(nxt + PREV, b)
        else:
            self.tail = b
        self.buckets += 1
        return b

    def _unlink_bucket(self, b: int) -> None:
        m = self.m
        prev, nxt = m.load(b + PREV), m.load(b + NEXT)
        if prev:
            m.store(prev + NEXT, nxt)
        else:
            self.head = nxt
        if nxt:
            m.store(nxt + PREV, prev)
        else:
            self.tail = prev
        m.free(b, self.bucket_words)
        self.buckets -= 1

    def _set_values(self, b: int, values) -> None:
        n = len(values)
        self.m.arena.cells[b + VALUES: b + VALUES + n] = values
        self.m.store(b + COUNT, n)
        self.m.host(n)

    def _bucket_pred(self, b: int, x: int) -> int | None:
        m = self.m
        vals = self._bucket_values(b)
        m.host(max(1, len(vals).bit_length()))
        i = int(np.searchsorted(vals, np.uint64(x), side="right"))
        if i:
            return int(vals[i - 1])
        prev = m.load(b + PREV)
        if not prev:
            return None
        count = m.load(prev + COUNT)
        return m.load(prev + VALUES + count - 1)

    # -- separator search

    def lcp_search(self, x: int) -> tuple[int, int]:
        """(length of the longest prefix of x in the separator trie, B-tree rounds)."""
        self._check_key(x)
        if self.mode != "trie":
            raise UsageError("lcp_search needs trie mode")
        m, K, w = self.m, self.K, self.w
        X = m.broadcast(x << self.shift)
        ones = m.not_(m.zeros(X))
        best, rounds, node = 0, 0, self.btree.root
        while node:
            rounds += 1
            k = m.load(node)
            keep = m.shr(ones, (K - k) * w)
            Mv = m.and_(m.load_ultra(node + 1), keep)
            Hv = m.and_(m.load_ultra(node + 1 + K), keep)
            I = self.D.pmember(m.or_(m.and_(X, Mv), Hv))
            c = m.compress(I)
            m.word(1)
            if c:
                j = m.msb_index(c) + 1
                best = w - 1 - m.msb_index(m.load(node + K + j))
            else:
                j = 0
            node = m.load(node + 1 + 2 * K + j)
        if rounds > self.round_bound:
            raise AssertionError(f"separator search took {rounds} rounds, bound {self.round_bound}")
        return best, rounds

    def _locate(self, x: int) -> Located:
        """Bucket with the largest separator <= x (there is one: the first separator is 0)."""
        m, w = self.m, self.w
        lcp, rounds = self.lcp_search(x)
        self.last_rounds = rounds
        self.max_rounds = max(self.max_rounds, rounds)
        xh = x << self.shift
        if lcp == 0:
            # only possible when x starts with 1 and no separator does
            return Located(self.tail, rounds, lcp)
        blk = self.D.data_addr(edge_key(w, xh, lcp))
        lo, hi = m.load(blk), m.load(blk + 1)
        m.word(2)
        if lcp == self.key_bits or (xh >> (w - 1 - lcp)) & 1:
            # x equals a separator, or leaves the trie to the right of it
            return Located(hi, rounds, lcp)
        return Located(m.load(lo + PREV), rounds, lcp)

    # -- separator trie maintenance (one entry per prefix, sequential updates)

    def _add_separator(self, b: int) -> None:
        m, w = self.m, self.w
        sh = m.load(b + SEP) << self.shift
        sep = sh >> self.shift
        for length in range(1, self.key_bits + 1):
            key = edge_key(w, sh, length)
            m.word(3)
            blk = self.D.data_addr(key)
            if blk is None:
                self.D.insert(key, (b, b))
                continue
            if sep < m.load(m.load(blk) + SEP):
                m.store(blk, b)
            if sep > m.load(m.load(blk + 1) + SEP):
                m.store(blk + 1, b)

    def _remove_separator(self, b: int) -> None:
        """Drop b's separator; b must still be linked so its neighbours are known."""
        m, w = self.m, self.w
        sh = m.load(b + SEP) << self.shift
        prev, nxt = m.load(b + PREV), m.load(b + NEXT)
        for length in range(1, self.key_bits + 1):
            key = edge_key(w, sh, length)
            m.word(3)
            blk = self.D.data_addr(key)
            lo, hi = m.load(blk), m.load(blk + 1)
            if lo == b and hi == b:
                self.D.delete(key)
            elif lo == b:
                m.store(blk, nxt)
            elif hi == b:
                m.store(blk + 1, prev)

    # -- updates

    def _trie_insert(self, x: int) -> bool:
        b = self._locate(x).bucket
        vals = self._bucket_values(b)
        self.m.host(max(1, len(vals).bit_length()))
        i = int(np.searchsorted(vals, np.uint64(x)))
        if i < len(vals) and int(vals[i]) == x:
            return False
        new = np.insert(vals, i, np.uint64(x))
        self._set_values(b, new)
        if len(new) > self.split_above:
            self._split(b, new)
        return True

    def _split(self, b: int, vals: np.ndarray) -> None:
        mid = len(vals) // 2
        self._set_values(b, vals[:mid])
        right = self._new_bucket(int(vals[mid]), vals[mid:], b)
        self._add_separator(right)
        self.splits += 1

    def _trie_delete(self, x: int) -> bool:
        b = self._locate(x).bucket
        vals = self._bucket_values(b)
        self.m.host(max(1, len(vals).bit_length()))
        i = int(np.searchsorted(vals, np.uint64(x)))
        if i == len(vals) or int(vals[i]) != x:
            return False
        rest = np.delete(vals, i)
        self._set_values(b, rest)
        if len(rest) < self.merge_below and self.buckets > 1:
            self._merge(b)
        return True

    def _merge(self, b: int) -> None:
        m = self.m
        nxt = m.load(b + NEXT)
        left, right = (b, nxt) if nxt else (m.load(b + PREV), b)
        both = np.concatenate([self._bucket_values(left), self._bucket_values(right)])
        self._remove_separator(right)
        self._unlink_bucket(right)
        self.merges += 1
        self._set_values(left, both)
        if len(both) > self.split_above:
            self._split(left, both)

    # -- mode switching

    def _enter_trie(self) -> None:
        m = self.m
        values = self.fallback.values() if self.fallback else []
        if self.fallback:
            self.fallback.destroy()
            self.fallback = None
        self.D = ParallelDict(m, satellite=True, data_words=2, table_factor=self.table_factor,
                              rng=self.rng)
        self.btree = ConstantBTree(m, self.key_bits)
        self.head = self.tail = 0
        self.buckets = 0
        self.mode = "trie"
        chunks = [values[i: i + self.w] for i in range(0, len(values), self.w)] or [[]]
        if len(chunks) > 1 and len(chunks[-1]) < self.merge_below:
            chunks[-2:] = [chunks[-2] + chunks[-1]]
        after = 0
        for i, chunk in enumerate(chunks):
            after = self._new_bucket(0 if i == 0 else chunk[0], np.array(chunk, dtype=np.uint64), after)
            self._add_separator(after)

    def _leave_trie(self) -> None:
        values = self.values()
        self.m.host(len(values))
        self.D.destroy()
        self.btree.destroy()
        for b in self.bucket_list():
            self.m.free(b, self.bucket_words)
        self.D = self.btree = None
        self.head = self.tail = 0
        self.buckets = 0
        self.fallback = SortedBlock(self.m, values)
        self.mode = "fallback"

    # -- checking

    def invariant_violations(self) -> list[str]:
        if self.mode == "fallback":
            problems = self.fallback.violations()
            if self.fallback.n != self.n:
                problems.append(f"fallback holds {self.fallback.n} values, n = {self.n}")
            return problems
        cells = self.m.arena.cells
        problems = self.D.invariant_violations()
        blist = self.bucket_list()
        if len(blist) != self.buckets:
            problems.append(f"{len(blist)} linked buckets, counter says {self.buckets}")
        total, prev, prev_max, seps = 0, 0, None, []
        for b in blist:
            sep, count = int(cells[b + SEP]), int(cells[b + COUNT])
            vals = [int(v) for v in self._bucket_values(b)]
            seps.append(sep)
            total += count
            if int(cells[b + PREV]) != prev:
                problems.append(f"bucket {b}: prev link broken")
            if any(u >= v for u, v in zip(vals, vals[1:])):
                problems.append(f"bucket {b}: values not strictly increasing")
            if vals and vals[0] < sep:
                problems.append(f"bucket {b}: value {vals[0]} below separator {sep}")
            if prev_max is not None and prev_max >= sep:
                problems.append(f"bucket {b}: previous bucket max {prev_max} >= separator {sep}")
            if count > self.split_above:
                problems.append(f"bucket {b}: {count} values exceed {self.split_above}")
            if len(blist) > 1 and count < self.merge_below:
                problems.append(f"bucket {b}: {count} values below {self.merge_below}")
            if vals:
                prev_max = vals[-1]
            prev = b
        if blist and seps[0] != 0:
            problems.append("first separator is not 0")
        if blist and prev != self.tail:
            problems.append("bucket tail pointer is stale")
        if total != self.n:
            problems.append(f"buckets hold {total} values, n = {self.n}")
        # every prefix of every separator, with min/max buckets
        expected: dict[int, tuple[int, int]] = {}
        for b, sep in zip(blist, seps):
            sh = sep << self.shift
            for length in range(1, self.key_bits + 1):
                key = edge_key(self.w, sh, length)
                lo, hi = expected.get(key, (b, b))
                expected[key] = (lo, b)
        stored = dict(self.D.entries())
        if set(stored) != set(expected):
            problems.append(f"separator trie has {len(stored)} entries, expected {len(expected)}")
        for key in set(stored) & set(expected):
            blk = stored[key]
            got = (int(cells[blk]), int(cells[blk + 1]))
            if got != expected[key]:
                problems.append(f"prefix {key:#x}: min/max buckets {got}, expected {expected[key]}")
        if self.btree.lengths() != list(range(1, self.key_bits + 1)):
            problems.append("B-tree does not hold every prefix length in order")
        if self.btree.height > self.round_bound:
            problems.append(f"B-tree height {self.btree.height} exceeds {self.round_bound}")
        return problems

    def check_invariants(self) -> None:
        problems = self.invariant_violations()
        if problems:
            raise InvariantViolation("; ".join(problems[:5]))


class EpsPredecessorSet:
    """w-bit keys split on the top bit into two :class:`EpsTrie` halves."""

    def __init__(self, m: Machine, seed: int | None = 0, **kw):
        self.m = m
        self.w = m.w
        rng = random.Random(seed)
        self.halves = (EpsTrie(m, rng=random.Random(rng.getrandbits(64)), **kw),
                       EpsTrie(m, rng=random.Random(rng.getrandbits(64)), **kw))
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

    @property
    def max_rounds(self) -> int:
        return max(h.max_rounds for h in self.halves)

    @property
    def round_bound(self) -> int:
        return self.halves[0].round_bound

    @property
    def splits(self) -> int:
        return sum(h.splits for h in self.halves)

    def values(self) -> list[int]:
        hi = 1 << (self.w - 1)
        return self.halves[0].values() + [v | hi for v in self.halves[1].values()]

    def invariant_violations(self) -> list[str]:
        return [f"S{i}: {p}" for i, h in enumerate(self.halves) for p in h.invariant_violations()]

    def check_invariants(self) -> None:
        problems = self.invariant_violations()
        if problems:
            raise InvariantViolation("; ".join(problems[:5]))
