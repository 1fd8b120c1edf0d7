"""Two-level dynamic perfect hashing with parallel membership queries.

Layout in the arena:

* ``T``: ``2**c`` slots of five words ``(addr(T_j), 2**c_j, a_j, b_j, cap_j)``,
  where ``b_j`` is the bucket size and ``cap_j`` the largest size the current
  sub-table may hold before it is rebuilt larger.
* ``T_j``: ``2**c_j`` slots of ``slot_width`` words.  A slot holding key x
  satisfies ``h_j(x) == slot``.  Empty slots hold ``2**(w-1)`` at slot 0 and
  0 elsewhere, so ``x in S`` iff ``T_j[h_j(x)] == x`` for every w-bit x.
* Empty buckets all share one read-only two-slot table.
* With satellite data each slot has a second word: the address of a data
  block of ``data_words`` words owned by the dictionary.
"""

from __future__ import annotations

import random
from typing import Iterable, Sequence

import numpy as np

from .hashing import even_mask, parallel_ms_hash
from .machine import InvariantViolation, Machine, Ultraword, UsageError

TUPLE_WORDS = 5
_U64 = np.uint64


def _pow2_at_least(x: int) -> int:
    return 1 << max(0, (x - 1).bit_length())


class ParallelDict:
    def __init__(self, m: Machine, seed: int | None = 0, *, satellite: bool = False,
                 data_words: int = 1, n0: int = 1, table_factor: int = 4,
                 rng: random.Random | None = None):
        if table_factor < 1:
            raise UsageError("table_factor must be at least 1")
        if satellite and data_words < 1:
            raise UsageError("data_words must be at least 1")
        self.m = m
        self.w = m.w
        self.rng = rng if rng is not None else random.Random(seed)
        self.satellite = satellite
        self.slot_width = 2 if satellite else 1
        self.data_words = data_words
        self.table_factor = table_factor
        self.n = 0
        self.updates = 0
        self.rebuilds = 0
        self._sentinel = 1 << (self.w - 1)
        self._max_c = self.w - 1
        self._min_c = self._top_bits(max(n0, 1))

        self.M_addr = m.alloc(m.K)
        m.store_ultra(self.M_addr, even_mask(m))
        self.empty_addr = m.alloc(2 * self.slot_width)
        m.store(self.empty_addr, self._sentinel)

        self.a = 1
        self.c = self._min_c
        self.T_addr = 0
        self._build_top([])

    # -- scalar hashing (two word instructions: multiply, shift)

    def _h(self, a: int, c: int, x: int) -> int:
        self.m.word(2)
        return ((a * x) & self.m.cfg.mask) >> (self.w - c)

    def _hv(self, a: int, c: int, xs: np.ndarray) -> np.ndarray:
        # vectorized evaluation for whole-table scans; charged per key
        self.m.word(2 * len(xs))
        if self.w == 64:
            prod = xs * _U64(a)
        else:
            prod = (xs * _U64(a)) & _U64(self.m.cfg.mask)
        return prod >> _U64(self.w - c)

    def _top_bits(self, n: int) -> int:
        size = _pow2_at_least(self.table_factor * max(n, 4))
        return min(max(size.bit_length() - 1, 1), self._max_c)

    # -- construction

    def _read_block(self, addr: int, n: int) -> np.ndarray:
        self.m.counters.contiguous_accesses += -(-n // self.m.K)
        return self.m.arena.cells[addr: addr + n]

    def _write_block(self, addr: int, values) -> None:
        n = len(values)
        self.m.counters.contiguous_accesses += -(-n // self.m.K)
        self.m.arena.cells[addr: addr + n] = values

    def _empty_tuple(self) -> list[int]:
        return [self.empty_addr, 2, 1, 0, 0]

    def _build_top(self, items: list[tuple[int, int]]) -> None:
        m = self.m
        n = len(items)
        c = max(self._min_c, self._top_bits(n))
        keys = np.array([k for k, _ in items], dtype=_U64)
        tries = 0
        while True:
            a = self.rng.getrandbits(self.w) | 1
            slots = self._hv(a, c, keys)
            sizes = np.bincount(slots.astype(np.int64), minlength=1 << c) if n else None
            if n == 0 or int((sizes * (sizes - 1)).sum()) <= 2 * n + 2:
                break
            tries += 1
            if tries % 32 == 0 and c < self._max_c:
                c += 1
        self.a, self.c = a, c
        self.T_addr = m.alloc(TUPLE_WORDS * (1 << c))
        table = np.tile(np.array(self._empty_tuple(), dtype=_U64), (1 << c, 1))
        buckets: dict[int, list[tuple[int, int]]] = {}
        for (k, d), j in zip(items, slots.tolist() if n else []):
            buckets.setdefault(j, []).append((k, d))
        sw, mask, w = self.slot_width, m.cfg.mask, self.w
        cells = m.arena.cells
        for j, bucket in buckets.items():
            if len(bucket) == 1:
                # any multiplier separates one key: two slots, no retries
                k, d = bucket[0]
                aj = self.rng.getrandbits(w) | 1
                m.word(2)
                s = ((aj * k) & mask) >> (w - 1)
                addr = m.alloc(2 * sw)
                cells = m.arena.cells
                m.counters.contiguous_accesses += -(-(2 * sw) // m.K)
                cells[addr] = self._sentinel
                cells[addr + sw * s] = k
                if sw == 2:
                    cells[addr + sw * s + 1] = d
                table[j] = (addr, 2, aj, 1, 2)
            else:
                table[j] = self._build_bucket(bucket)
        # the empty table plus one five-word store per filled slot
        self._write_block(self.T_addr, table.reshape(-1))
        m.counters.contiguous_accesses += TUPLE_WORDS * len(buckets)
        self.n = n
        self.updates = 0
        self.budget = max(n // 2, 4)

    def _build_bucket(self, items: list[tuple[int, int]], min_size: int = 2) -> list[int]:
        """Allocate and fill a collision-free sub-table; returns its 5-tuple."""
        m, sw = self.m, self.slot_width
        b = len(items)
        size = max(min_size, _pow2_at_least(max(2, b * (b - 1))))
        size = min(size, 1 << self._max_c)
        keys = [k for k, _ in items]
        mask, w = self.m.cfg.mask, self.w
        tries = 0
        while True:
            cj = size.bit_length() - 1
            aj = self.rng.getrandbits(self.w) | 1
            self.m.word(2 * b)
            slots = [((aj * k) & mask) >> (w - cj) for k in keys]
            if len(set(slots)) == b:
                break
            tries += 1
            if tries % 32 == 0 and size < (1 << self._max_c):
                size *= 2
        addr = m.alloc(sw * size)
        cells = m.arena.cells
        m.counters.contiguous_accesses += -(-(sw * size) // m.K)
        cells[addr] = self._sentinel
        for (k, d), s in zip(items, slots):
            cells[addr + sw * s] = k
            if sw == 2:
                cells[addr + sw * s + 1] = d
        cap = b
        while (cap + 1) * cap <= size:
            cap += 1
        return [addr, size, aj, b, cap]

    def _write_tuple(self, j: int, tup: Sequence[int]) -> None:
        # five single-word stores
        q = self.T_addr + TUPLE_WORDS * j
        self.m.arena.check(q + TUPLE_WORDS - 1)
        self.m.counters.contiguous_accesses += TUPLE_WORDS
        self.m.arena.cells[q: q + TUPLE_WORDS] = tup

    def _read_tuple(self, j: int) -> list[int]:
        # five single-word loads
        q = self.T_addr + TUPLE_WORDS * j
        self.m.arena.check(q + TUPLE_WORDS - 1)
        self.m.counters.contiguous_accesses += TUPLE_WORDS
        return self.m.arena.cells[q: q + TUPLE_WORDS].tolist()

    def _bucket_items(self, tup: Sequence[int]) -> list[tuple[int, int]]:
        addr, size, aj, b, _ = tup
        if b == 0:
            return []
        sw = self.slot_width
        block = self._read_block(addr, sw * size).reshape(size, sw)
        keys = block[:, 0]
        hit = self._hv(aj, size.bit_length() - 1, keys) == np.arange(size, dtype=_U64)
        datas = block[hit, 1] if sw == 2 else np.zeros(int(hit.sum()), dtype=_U64)
        return list(zip(keys[hit].tolist(), datas.tolist()))

    def _free_bucket(self, tup: Sequence[int]) -> None:
        if tup[0] != self.empty_addr:
            self.m.free(tup[0], self.slot_width * tup[1])

    # -- scalar operations

    def _locate(self, x: int):
        j = self._h(self.a, self.c, x)
        tup = self._read_tuple(j)
        addr, size, aj = tup[0], tup[1], tup[2]
        s = self._h(aj, size.bit_length() - 1, x)
        slot = addr + self.slot_width * s
        y = self.m.load(slot)
        self.m.word(1)
        return j, tup, s, slot, y == x

    def member(self, x: int) -> bool:
        return self._locate(x)[4]

    def __contains__(self, x: int) -> bool:
        return self.member(x)

    def __len__(self) -> int:
        return self.n

    def data_addr(self, x: int) -> int | None:
        """Address of x's data block, or None if x is absent."""
        if not self.satellite:
            raise UsageError("dictionary was built without satellite data")
        _, _, _, slot, present = self._locate(x)
        return self.m.load(slot + 1) if present else None

    def insert(self, x: int, data: Sequence[int] | None = None) -> int | None:
        """Add x; in satellite mode store ``data`` and return its block address."""
        if not 0 <= x <= self.m.cfg.mask:
            raise UsageError(f"key {x} does not fit in {self.w} bits")
        if data is not None and not self.satellite:
            raise UsageError("dictionary was built without satellite data")
        m = self.m
        j, tup, s, slot, present = self._locate(x)
        if present:
            if not self.satellite:
                return None
            daddr = m.load(slot + 1)
            if data is not None:
                self._store_data(daddr, data)
            return daddr
        daddr = 0
        if self.satellite:
            daddr = m.alloc(self.data_words)
            if data is not None:
                self._store_data(daddr, data)
        addr, size, aj, b, cap = tup
        occupied = self._h(aj, size.bit_length() - 1, m.load(slot)) == s
        if b + 1 > cap or occupied:
            items = self._bucket_items(tup)
            items.append((x, daddr))
            self._free_bucket(tup)
            # grow the table only when the size bound forces it
            self._write_tuple(j, self._build_bucket(items, min_size=2 if b + 1 > cap else size))
        else:
            m.store(slot, x)
            if self.satellite:
                m.store(slot + 1, daddr)
            m.store(self.T_addr + TUPLE_WORDS * j + 3, b + 1)
        self.n += 1
        self._tick()
        return daddr if self.satellite else None

    def _store_data(self, daddr: int, data: Sequence[int]) -> None:
        if len(data) != self.data_words:
            raise UsageError(f"expected {self.data_words} data words, got {len(data)}")
        for i, v in enumerate(data):
            self.m.store(daddr + i, v)

    def delete(self, x: int) -> bool:
        """Remove x; returns whether it was present."""
        m = self.m
        j, tup, s, slot, present = self._locate(x)
        if not present:
            return False
        m.store(slot, self._sentinel if s == 0 else 0)
        if self.satellite:
            m.free(m.load(slot + 1), self.data_words)
            m.store(slot + 1, 0)
        b = tup[3] - 1
        if b == 0:
            self._free_bucket(tup)
            self._write_tuple(j, self._empty_tuple())
        else:
            m.store(self.T_addr + TUPLE_WORDS * j + 3, b)
        self.n -= 1
        self._tick()
        return True

    def _tick(self) -> None:
        self.updates += 1
        if self.updates > self.budget:
            self.rebuild()

    def rebuild(self) -> None:
        """Rehash everything with a fresh top-level function sized to n."""
        items = self.entries(charge=True)
        self._release_tables()
        self.rebuilds += 1
        self._build_top(items)

    def _live_buckets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(table address, slot count, multiplier) of every non-empty bucket."""
        size = 1 << self.c
        T = self._read_block(self.T_addr, TUPLE_WORDS * size).reshape(size, TUPLE_WORDS)
        live = T[:, 3] != 0
        return T[live, 0], T[live, 1], T[live, 2]

    def _release_tables(self) -> None:
        addrs, sizes, _ = self._live_buckets()
        sw = self.slot_width
        for addr, size in zip(addrs.tolist(), sizes.tolist()):
            self.m.free(addr, sw * size)
        self.m.free(self.T_addr, TUPLE_WORDS * (1 << self.c))

    def entries(self, charge: bool = False) -> list[tuple[int, int]]:
        """All (key, data address) pairs; data address is 0 without satellite data.

        Scans every sub-table; the charge equals reading each table once and
        hashing every slot.
        """
        m, sw = self.m, self.slot_width
        snap = None if charge else m.counters.snapshot()  # scans for checks are free
        addrs, sizes, mults = self._live_buckets()
        out: list[tuple[int, int]] = []
        if len(addrs):
            counts = sizes.astype(np.int64)
            total = int(counts.sum())
            m.counters.contiguous_accesses += int((-(-(sw * counts) // m.K)).sum())
            m.word(2 * total)
            owner = np.repeat(np.arange(len(addrs)), counts)
            starts = np.cumsum(counts) - counts
            slot = np.arange(total, dtype=np.int64) - starts[owner]
            where = addrs[owner].astype(np.int64) + sw * slot
            cells = m.arena.cells
            keys = cells[where]
            shift = _U64(self.w) - np.log2(sizes.astype(np.float64)).astype(_U64)
            prod = keys * mults[owner]
            if self.w < 64:
                prod &= _U64(m.cfg.mask)
            hit = (prod >> shift[owner]) == slot.astype(_U64)
            datas = cells[where[hit] + 1] if sw == 2 else np.zeros(int(hit.sum()), dtype=_U64)
            out = list(zip(keys[hit].tolist(), datas.tolist()))
        if snap is not None:
            m.counters.restore(snap)
        return out

    def keys(self) -> list[int]:
        return sorted(k for k, _ in self.entries())

    def destroy(self) -> None:
        """Return every arena word held by the dictionary."""
        blocks = [d for _, d in self.entries()] if self.satellite else []
        self._release_tables()
        for d in blocks:
            self.m.free(d, self.data_words)
        self.m.free(self.empty_addr, 2 * self.slot_width)
        self.m.free(self.M_addr, self.m.K)
        self.T_addr = 0
        self.n = 0

    # -- parallel queries

    def _probe(self, X: Ultraword) -> tuple[Ultraword, Ultraword]:
        """Common part of pmember / pretrieve: returns (I, P' + K')."""
        m = self.m
        M = m.load_ultra(self.M_addr)
        # step 1: top-level hash of every component
        J = parallel_ms_hash(m, X, m.broadcast(self.a), m.broadcast(1 << self.c), M)
        # step 2: fetch the sub-table tuples and hash again
        Q = m.add(m.broadcast(self.T_addr), m.mul(m.broadcast(TUPLE_WORDS), J))
        P2 = m.scatter_read(Q)
        C2 = m.scatter_read(m.add(Q, m.broadcast(1)))
        A2 = m.scatter_read(m.add(Q, m.broadcast(2)))
        Kh = parallel_ms_hash(m, X, A2, C2, M)
        if self.satellite:
            Kh = m.mul(m.broadcast(2), Kh)
        # step 3: compare against the slot contents
        slots = m.add(P2, Kh)
        R = m.scatter_read(slots)
        return m.eq(X, R), slots

    def pmember(self, X: Ultraword) -> Ultraword:
        """Component i is 1 iff X<i> is stored."""
        return self._probe(X)[0]

    def pretrieve(self, X: Ultraword) -> tuple[Ultraword, Ultraword]:
        """(I, D): I as pmember, D<i> the data address of X<i> where I<i> = 1."""
        if not self.satellite:
            raise UsageError("dictionary was built without satellite data")
        m = self.m
        I, slots = self._probe(X)
        D = m.scatter_read(m.add(slots, m.broadcast(1)))
        return I, D

    # -- checking

    def invariant_violations(self) -> list[str]:
        """Scan the whole structure; returns human-readable problems (empty if sound)."""
        cells = self.m.arena.cells
        problems: list[str] = []
        sw, w = self.slot_width, self.w
        mask = self.m.cfg.mask

        def h(a, c, x):
            return ((a * x) & mask) >> (w - c)

        if [int(v) for v in cells[self.empty_addr: self.empty_addr + 2 * sw]] != \
                [self._sentinel] + [0] * (2 * sw - 1):
            problems.append("shared empty table was modified")
        if [int(v) for v in cells[self.M_addr: self.M_addr + self.m.K]] != \
                [1 - (i & 1) for i in range(self.m.K)]:
            problems.append("stored M constant was modified")
        total = 0
        for j in range(1 << self.c):
            q = self.T_addr + TUPLE_WORDS * j
            addr, size, aj, b, cap = (int(v) for v in cells[q: q + TUPLE_WORDS])
            if b == 0:
                if [addr, size, aj, b, cap] != self._empty_tuple():
                    problems.append(f"bucket {j}: empty bucket has tuple {[addr, size, aj, b, cap]}")
                continue
            if size & (size - 1) or size < 2 or not aj & 1:
                problems.append(f"bucket {j}: bad function (size {size}, a {aj})")
                continue
            if not self.m.arena.is_allocated(addr, sw * size):
                problems.append(f"bucket {j}: table at {addr} is not a live allocation")
            if b > cap or cap * (cap - 1) > size:
                problems.append(f"bucket {j}: size {b} / bound {cap} inconsistent with {size} slots")
            cj = size.bit_length() - 1
            found = 0
            for s in range(size):
                y = int(cells[addr + sw * s])
                if h(aj, cj, y) == s:
                    found += 1
                    if h(self.a, self.c, y) != j:
                        problems.append(f"bucket {j}: key {y} belongs to bucket {h(self.a, self.c, y)}")
                    if sw == 2 and not self.m.arena.is_allocated(int(cells[addr + sw * s + 1]),
                                                                 self.data_words):
                        problems.append(f"bucket {j}: key {y} has no live data block")
                else:
                    want = self._sentinel if s == 0 else 0
                    if y != want:
                        problems.append(f"bucket {j}: slot {s} holds {y}, expected sentinel {want}")
            if found != b:
                problems.append(f"bucket {j}: {found} keys stored but size word says {b}")
            total += found
        if total != self.n:
            problems.append(f"{total} keys stored but n = {self.n}")
        return problems

    def check_invariants(self) -> None:
        problems = self.invariant_violations()
        if problems:
            raise InvariantViolation("; ".join(problems[:5]))


def build(m: Machine, keys: Iterable[int], seed: int = 0, **kw) -> ParallelDict:
    d = ParallelDict(m, seed, **kw)
    for x in keys:
        d.insert(x)
    return d
