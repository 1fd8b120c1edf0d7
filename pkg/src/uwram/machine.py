"""Simulated ultra-wide word RAM.

A :class:`Machine` owns a word-addressable :class:`Arena` and a set of
:class:`CostCounters`.  Ultraword registers are :class:`Ultraword` values:
immutable vectors of ``K`` components of ``w`` bits each, with component
``i`` counted from the right.  Every public machine operation charges the
counters, so the instruction cost of an algorithm built on top of the
machine is an exact, replayable number.
"""

from __future__ import annotations

import bisect
import dataclasses
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

_U64 = np.uint64

DEFAULT_ARENA_WORDS = 1 << 26


class UWRAMError(Exception):
    """Base class for machine errors."""


class UsageError(UWRAMError):
    """An operation was called with arguments it does not accept."""


class PreconditionError(UWRAMError):
    """A model precondition was violated (only raised in validating mode)."""


class MemoryFault(UWRAMError):
    """An address outside the arena was accessed."""


class OutOfMemory(UWRAMError):
    """The arena has no room for an allocation."""


class InvariantViolation(UWRAMError):
    """A structural invariant scan found a problem."""


def _ceil_root_power(w: int, eps: Fraction) -> int:
    # smallest integer k with k**q >= w**p, i.e. k = ceil(w ** (p/q))
    p, q = eps.numerator, eps.denominator
    target = w ** p
    k = max(1, round(w ** float(eps)))
    while k ** q < target:
        k += 1
    while k > 1 and (k - 1) ** q >= target:
        k -= 1
    return k


def lanes_for(w: int, epsilon: Fraction | str | float) -> int:
    """Number of components for ``w**(1+epsilon)``-bit ultrawords, rounded up to even."""
    eps = Fraction(epsilon)
    k = _ceil_root_power(w, eps)
    k += k % 2
    return max(2, min(k, w))


@dataclass(frozen=True)
class MachineConfig:
    w: int
    K: int
    epsilon: Fraction = Fraction(1)
    arena_capacity: int | None = None

    def __post_init__(self):
        if self.w % 2 or not 8 <= self.w <= 64:
            raise UsageError(f"w must be even and in [8, 64], got {self.w}")
        if self.K % 2 or not 2 <= self.K <= self.w:
            raise UsageError(f"K must be even and in [2, w], got {self.K}")
        eps = Fraction(self.epsilon)
        if not 0 < eps <= 1:
            raise UsageError(f"epsilon must lie in (0, 1], got {eps}")
        object.__setattr__(self, "epsilon", eps)
        cap = self.arena_capacity
        if cap is None:
            cap = min((1 << self.w) - 1, DEFAULT_ARENA_WORDS)
        if not 2 <= cap < (1 << self.w):
            raise UsageError(f"arena_capacity must be in [2, 2**w), got {cap}")
        object.__setattr__(self, "arena_capacity", cap)

    @classmethod
    def for_epsilon(cls, w: int, epsilon: Fraction | str | float = 1,
                    arena_capacity: int | None = None) -> "MachineConfig":
        eps = Fraction(epsilon)
        return cls(w=w, K=lanes_for(w, eps), epsilon=eps, arena_capacity=arena_capacity)

    @property
    def bits(self) -> int:
        return self.K * self.w

    @property
    def mask(self) -> int:
        return (1 << self.w) - 1


def _pack(lanes: np.ndarray, w: int) -> int:
    if w in (8, 16, 32, 64):
        return int.from_bytes(lanes.astype(f"<u{w // 8}").tobytes(), "little")
    return sum(int(v) << (i * w) for i, v in enumerate(lanes))


def _unpack(v: int, w: int, K: int) -> np.ndarray:
    if w in (8, 16, 32, 64):
        raw = v.to_bytes(K * w // 8, "little")
        return np.frombuffer(raw, dtype=f"<u{w // 8}").astype(_U64)
    mask = (1 << w) - 1
    return np.array([(v >> (i * w)) & mask for i in range(K)], dtype=_U64)


class Ultraword:
    """Immutable register value; ``X[i]`` is component ``i`` (rightmost is 0).

    The register is held as one ``K*w``-bit integer ``v`` with component i
    in bits ``[i*w, (i+1)*w)``.
    """

    __slots__ = ("v", "cfg")

    def __init__(self, v: int, cfg: MachineConfig):
        self.v = v
        self.cfg = cfg

    @classmethod
    def of(cls, cfg: MachineConfig, values: Sequence[int]) -> "Ultraword":
        """Build from a sequence where ``values[i]`` becomes component ``i``."""
        values = [int(v) for v in values]
        if len(values) != cfg.K:
            raise UsageError(f"expected {cfg.K} components, got {len(values)}")
        v = 0
        for i, x in enumerate(values):
            if not 0 <= x <= cfg.mask:
                raise UsageError(f"component {x} does not fit in {cfg.w} bits")
            v |= x << (i * cfg.w)
        return cls(v, cfg)

    @classmethod
    def filled(cls, cfg: MachineConfig, value: int) -> "Ultraword":
        return cls.of(cfg, [value] * cfg.K)

    @property
    def lanes(self) -> np.ndarray:
        return _unpack(self.v, self.cfg.w, self.cfg.K)

    def __getitem__(self, i: int) -> int:
        if not -self.cfg.K <= i < self.cfg.K:
            raise IndexError(i)
        return (self.v >> ((i % self.cfg.K) * self.cfg.w)) & self.cfg.mask

    def __len__(self) -> int:
        return self.cfg.K

    def __iter__(self) -> Iterator[int]:
        return iter(self.tolist())

    def tolist(self) -> list[int]:
        w, mask = self.cfg.w, self.cfg.mask
        return [(self.v >> (i * w)) & mask for i in range(self.cfg.K)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Ultraword):
            return NotImplemented
        return self.v == other.v and self.cfg == other.cfg

    def __hash__(self):
        return hash((self.cfg, self.v))

    def __repr__(self) -> str:
        body = ",".join(str(x) for x in reversed(self.tolist()))
        return f"<{body}>"


@dataclass
class CostCounters:
    word_ops: int = 0
    ultra_ops: int = 0
    scattered_reads: int = 0
    scattered_writes: int = 0
    contiguous_accesses: int = 0
    # work done by substitute host-side structures (small sorted arrays)
    host_ops: int = 0

    FIELDS = ("word_ops", "ultra_ops", "scattered_reads", "scattered_writes",
              "contiguous_accesses", "host_ops")

    def snapshot(self) -> "CostCounters":
        return dataclasses.replace(self)

    def __sub__(self, other: "CostCounters") -> "CostCounters":
        return CostCounters(*(getattr(self, f) - getattr(other, f) for f in self.FIELDS))

    def __add__(self, other: "CostCounters") -> "CostCounters":
        return CostCounters(*(getattr(self, f) + getattr(other, f) for f in self.FIELDS))

    def __iadd__(self, other: "CostCounters") -> "CostCounters":
        for f in self.FIELDS:
            setattr(self, f, getattr(self, f) + getattr(other, f))
        return self

    def total(self) -> int:
        """All model instructions (host-side substitute work excluded)."""
        return (self.word_ops + self.ultra_ops + self.scattered_reads
                + self.scattered_writes + self.contiguous_accesses)

    def as_dict(self) -> dict[str, int]:
        return {f: getattr(self, f) for f in self.FIELDS}

    def restore(self, snap: "CostCounters") -> None:
        for f in self.FIELDS:
            setattr(self, f, getattr(snap, f))

    def reset(self) -> None:
        for f in self.FIELDS:
            setattr(self, f, 0)


class Arena:
    """Word-addressable memory with a best-fit, eagerly coalescing allocator.

    Address 0 is the scratch word used by broadcast and is never allocated,
    which also makes 0 usable as a null link.  Free space at the end of the
    used region is returned to the bump pointer ``top``; addresses at or
    above ``top`` are out of bounds.
    """

    def __init__(self, capacity: int, w: int):
        self.capacity = capacity
        self.w = w
        self.cells = np.zeros(min(capacity, 1024), dtype=_U64)
        self.top = 1
        self._free_at: dict[int, int] = {}      # start -> size
        self._free_end: dict[int, int] = {}     # end -> start
        self._by_size: dict[int, dict[int, None]] = defaultdict(dict)
        self._sizes: list[int] = []             # sorted sizes with free blocks
        self._blocks: dict[int, int] = {}
        self.live_words = 0
        self.peak_words = 0

    def __len__(self) -> int:
        return self.top

    def _ensure(self, end: int) -> None:
        size = len(self.cells)
        if end <= size:
            return
        while size < end:
            size *= 2
        size = min(size, self.capacity)
        grown = np.zeros(size, dtype=_U64)
        grown[: len(self.cells)] = self.cells
        self.cells = grown

    def _add_free(self, start: int, size: int) -> None:
        self._free_at[start] = size
        self._free_end[start + size] = start
        group = self._by_size[size]
        if not group:
            bisect.insort(self._sizes, size)
        group[start] = None

    def _remove_free(self, start: int) -> int:
        size = self._free_at.pop(start)
        del self._free_end[start + size]
        group = self._by_size[size]
        del group[start]
        if not group:
            del self._by_size[size]
            self._sizes.pop(bisect.bisect_left(self._sizes, size))
        return size

    def alloc(self, n: int) -> int:
        if n < 1:
            raise UsageError(f"alloc of {n} words")
        i = bisect.bisect_left(self._sizes, n)
        if i < len(self._sizes):
            size = self._sizes[i]
            group = self._by_size[size]
            addr, _ = group.popitem()
            if not group:
                del self._by_size[size]
                self._sizes.pop(i)
            del self._free_at[addr]
            del self._free_end[addr + size]
            if size > n:
                self._add_free(addr + n, size - n)
        elif self.top + n <= self.capacity:
            addr = self.top
            self._ensure(addr + n)
            self.top += n
        else:
            raise OutOfMemory(f"cannot allocate {n} words "
                              f"({self.live_words} live of {self.capacity})")
        self.cells[addr: addr + n] = 0
        self._blocks[addr] = n
        self.live_words += n
        self.peak_words = max(self.peak_words, self.live_words)
        return addr

    def free(self, addr: int, n: int) -> None:
        if self._blocks.get(addr) != n:
            raise UsageError(f"free of {n} words at {addr} does not match an allocation")
        del self._blocks[addr]
        self.live_words -= n
        start, end = addr, addr + n
        if start in self._free_end:
            left = self._free_end[start]
            self._remove_free(left)
            start = left
        if end in self._free_at:
            end += self._remove_free(end)
        if end == self.top:
            self.top = start
        else:
            self._add_free(start, end - start)

    def is_allocated(self, addr: int, n: int = 1) -> bool:
        return self._blocks.get(addr) == n

    def check(self, addr: int) -> None:
        if not 0 <= addr < self.top:
            raise MemoryFault(f"address {addr} outside arena [0, {self.top})")

    def dump_hex(self, start: int = 0, stop: int | None = None) -> str:
        stop = self.top if stop is None else min(stop, self.top)
        return "\n".join(f"{a:08x}: {int(self.cells[a]):016x}" for a in range(start, stop))


class Machine:
    """One UWRAM instance: registers are values, memory and counters are state.

    With ``validate=True`` every model precondition (distinct scattered-write
    addresses, operand alignment for 2w-bit multiplication, 0/1 selectors) is
    checked; with ``validate=False`` violations give unspecified results.

    Componentwise operations other than multiplication are evaluated with
    word-level parallelism on the register integer; each one is charged as
    a single ultraword instruction.
    """

    def __init__(self, cfg: MachineConfig, validate: bool = True,
                 fast_kernels: bool | None = None):
        self.cfg = cfg
        self.validate = validate
        # fixed, branch-free instruction sequences may be evaluated in one
        # vectorized step (same results and charges); never when validating
        self.fast_kernels = (not validate) if fast_kernels is None else fast_kernels
        self.arena = Arena(cfg.arena_capacity, cfg.w)
        self.counters = CostCounters()
        w, K = cfg.w, cfg.K
        self.w, self.K = w, K
        self._mask = cfg.mask
        self._full = (1 << (K * w)) - 1
        self._ones = sum(1 << (i * w) for i in range(K))
        self._hi = self._ones << (w - 1)
        self._lo = self._full ^ self._hi
        # guard bit of every 2w-bit block, for blockwise addition
        self._guard = sum(1 << (2 * w * b + 2 * w - 1) for b in range(K // 2))
        self._unguard = self._full ^ self._guard
        self._odd_mask = sum(cfg.mask << (i * w) for i in range(1, K, 2))
        self._wmask = _U64(cfg.mask)
        self._byte_lanes = w in (8, 16, 32, 64)
        self._dtype = np.dtype(f"<u{w // 8}") if self._byte_lanes else None
        self._nbytes = K * w // 8

    # -- construction helpers (no cost: they stand for values already in registers)

    def uw(self, values: Sequence[int]) -> Ultraword:
        return Ultraword.of(self.cfg, values)

    def filled(self, value: int) -> Ultraword:
        return Ultraword.filled(self.cfg, value)

    def _wrap(self, v: int) -> Ultraword:
        return Ultraword(v, self.cfg)

    def _lanes(self, X: Ultraword) -> np.ndarray:
        return _unpack(X.v, self.w, self.K)

    def _index(self, X: Ultraword) -> np.ndarray:
        if self._dtype is not None:
            return np.frombuffer(X.v.to_bytes(self._nbytes, "little"), self._dtype)
        return self._lanes(X)

    def _pack(self, lanes: np.ndarray) -> Ultraword:
        if self._dtype is not None:
            return Ultraword(int.from_bytes(lanes.astype(self._dtype).tobytes(), "little"), self.cfg)
        return Ultraword(_pack(lanes, self.w), self.cfg)

    def _check(self, *regs: Ultraword) -> None:
        for r in regs:
            if r.cfg is not self.cfg and r.cfg != self.cfg:
                raise UsageError("ultraword built under a different machine configuration")

    # -- word-level accounting

    def word(self, n: int = 1) -> None:
        """Charge ``n`` ordinary word-RAM instructions."""
        self.counters.word_ops += n

    def host(self, n: int = 1) -> None:
        self.counters.host_ops += n

    def msb_index(self, x: int) -> int:
        if x <= 0:
            raise UsageError("msb_index of zero")
        self.counters.word_ops += 1
        return x.bit_length() - 1

    # -- componentwise arithmetic

    def add(self, X: Ultraword, Y: Ultraword) -> Ultraword:
        self._check(X, Y)
        self.counters.ultra_ops += 1
        x, y, lo = X.v, Y.v, self._lo
        return self._wrap(((x & lo) + (y & lo)) ^ ((x ^ y) & self._hi))

    def sub(self, X: Ultraword, Y: Ultraword) -> Ultraword:
        self._check(X, Y)
        self.counters.ultra_ops += 1
        x, y, hi = X.v, Y.v, self._hi
        return self._wrap(((x | hi) - (y & self._lo)) ^ ((x ^ y ^ self._full) & hi))

    def mul(self, X: Ultraword, Y: Ultraword) -> Ultraword:
        self._check(X, Y)
        self.counters.ultra_ops += 1
        if self._dtype is not None:
            # native-width lanes wrap modulo 2**w on their own
            nb = self._nbytes
            z = (np.frombuffer(X.v.to_bytes(nb, "little"), self._dtype)
                 * np.frombuffer(Y.v.to_bytes(nb, "little"), self._dtype))
            return self._wrap(int.from_bytes(z.tobytes(), "little"))
        z = self._lanes(X) * self._lanes(Y)
        z &= self._wmask
        return self._pack(z)

    def _diff(self, x: int, y: int) -> int:
        return ((x | self._hi) - (y & self._lo)) ^ ((x ^ y ^ self._full) & self._hi)

    def lt(self, X: Ultraword, Y: Ultraword) -> Ultraword:
        self._check(X, Y)
        self.counters.ultra_ops += 1
        x, y, full = X.v, Y.v, self._full
        # borrow out of the top bit of x - y, per component
        borrow = ((x ^ full) & y) | ((x ^ y ^ full) & self._diff(x, y))
        return self._wrap((borrow & self._hi) >> (self.w - 1))

    def eq(self, X: Ultraword, Y: Ultraword) -> Ultraword:
        self._check(X, Y)
        self.counters.ultra_ops += 1
        d = X.v ^ Y.v
        nonzero = (((d & self._lo) + self._lo) | d) & self._hi
        return self._wrap((nonzero ^ self._hi) >> (self.w - 1))

    def and_(self, X: Ultraword, Y: Ultraword) -> Ultraword:
        self._check(X, Y)
        self.counters.ultra_ops += 1
        return self._wrap(X.v & Y.v)

    def or_(self, X: Ultraword, Y: Ultraword) -> Ultraword:
        self._check(X, Y)
        self.counters.ultra_ops += 1
        return self._wrap(X.v | Y.v)

    def xor(self, X: Ultraword, Y: Ultraword) -> Ultraword:
        self._check(X, Y)
        self.counters.ultra_ops += 1
        return self._wrap(X.v ^ Y.v)

    def not_(self, X: Ultraword) -> Ultraword:
        self._check(X)
        self.counters.ultra_ops += 1
        return self._wrap(X.v ^ self._full)

    def shl(self, X: Ultraword, bits: int) -> Ultraword:
        """Shift the whole register left by ``bits``, filling with zeros."""
        self._check(X)
        if bits < 0:
            raise UsageError(f"negative shift {bits}")
        self.counters.ultra_ops += 1
        return self._wrap((X.v << bits) & self._full if bits < self.K * self.w else 0)

    def shr(self, X: Ultraword, bits: int) -> Ultraword:
        self._check(X)
        if bits < 0:
            raise UsageError(f"negative shift {bits}")
        self.counters.ultra_ops += 1
        return self._wrap(X.v >> bits)

    _ARITH = {"add": "add", "sub": "sub", "mul": "mul", "lt": "lt", "eq": "eq",
              "and": "and_", "or": "or_", "xor": "xor"}

    def cw_arith(self, mode: str, X: Ultraword, Y=None) -> Ultraword:
        """Dispatch one componentwise or whole-register operation by name."""
        if mode in self._ARITH:
            if not isinstance(Y, Ultraword):
                raise UsageError(f"{mode} needs two ultraword operands")
            return getattr(self, self._ARITH[mode])(X, Y)
        if mode == "not":
            return self.not_(X)
        if mode in ("shl", "shr"):
            if not isinstance(Y, int):
                raise UsageError("shift amount must be an int bit count")
            return self.shl(X, Y) if mode == "shl" else self.shr(X, Y)
        raise UsageError(f"unknown mode {mode!r}")

    def zeros(self, X: Ultraword) -> Ultraword:
        """All-zero register, made by shifting ``X`` out entirely."""
        return self.shl(X, self.K * self.w)

    def blend(self, X: Ultraword, Y: Ultraword, I: Ultraword) -> Ultraword:
        """Lane i of Y where I<i> = 1, else lane i of X."""
        self._check(X, Y, I)
        if self.validate and I.v & ~self._ones:
            raise PreconditionError("blend selector has a component outside {0, 1}")
        sel = self.sub(self.zeros(I), I)
        return self.or_(self.and_(X, self.not_(sel)), self.and_(Y, sel))

    def compress(self, X: Ultraword) -> int:
        """K-bit word whose bit i is the low bit of X<i>."""
        self._check(X)
        self.counters.ultra_ops += 1
        low = X.v & self._ones
        if self._byte_lanes:
            raw = np.frombuffer(low.to_bytes(self.K * self.w // 8, "little"), dtype=np.uint8)
            bits = raw[:: self.w // 8]
        else:
            bits = (self._lanes(X) & _U64(1)).astype(np.uint8)
        return int.from_bytes(np.packbits(bits, bitorder="little").tobytes(), "little")

    # -- 2w-bit componentwise multiplication

    def _add_2w(self, X: Ultraword, Y: Ultraword) -> Ultraword:
        # carry-guard trick: drop the top bit of each 2w-bit block so carries
        # stay inside the block, add, then restore the top bits by xor.
        self.counters.ultra_ops += 6
        x, y, ug = X.v, Y.v, self._unguard
        return self._wrap(((x & ug) + (y & ug)) ^ ((x ^ y) & self._guard))

    def mul_2w(self, X: Ultraword, Y: Ultraword) -> Ultraword:
        """Exact 2w-bit products of the even components.

        Block (2i+1, 2i) of the result holds X<2i> * Y<2i>, high half in the
        odd component.  Odd components of both operands must be zero.
        """
        self._check(X, Y)
        if self.validate:
            if (X.v | Y.v) & self._odd_mask:
                raise PreconditionError("mul_2w operands must be zero in odd components")
        half = self.w // 2
        m = self.broadcast((1 << half) - 1)
        x_lo = self.and_(X, m)
        x_hi = self.and_(self.shr(X, half), m)
        y_lo = self.and_(Y, m)
        y_hi = self.and_(self.shr(Y, half), m)
        hh = self.shl(self.mul(x_hi, y_hi), self.w)
        hl = self.shl(self.mul(x_hi, y_lo), half)
        lh = self.shl(self.mul(x_lo, y_hi), half)
        ll = self.mul(x_lo, y_lo)
        return self._add_2w(self._add_2w(hh, hl), self._add_2w(lh, ll))

    # -- memory

    def load(self, addr: int) -> int:
        self.counters.contiguous_accesses += 1
        self.arena.check(addr)
        return int(self.arena.cells[addr])

    def store(self, addr: int, value: int) -> None:
        self.counters.contiguous_accesses += 1
        self.arena.check(addr)
        if self.validate and not 0 <= value <= self._mask:
            raise PreconditionError(f"value {value} does not fit in a word")
        self.arena.cells[addr] = value

    def load_ultra(self, addr: int) -> Ultraword:
        """Contiguous read of K words starting at ``addr``."""
        self.counters.contiguous_accesses += 1
        self.arena.check(addr)
        self.arena.check(addr + self.K - 1)
        return self._pack(self.arena.cells[addr: addr + self.K])

    def store_ultra(self, addr: int, X: Ultraword) -> None:
        self._check(X)
        self.counters.contiguous_accesses += 1
        self.arena.check(addr)
        self.arena.check(addr + self.K - 1)
        self.arena.cells[addr: addr + self.K] = self._lanes(X)

    def scatter_read(self, A: Ultraword) -> Ultraword:
        self._check(A)
        self.counters.scattered_reads += 1
        idx = self._index(A)
        if int(idx.max()) >= self.arena.top:
            raise MemoryFault(f"scattered read outside arena at {int(idx.max())}")
        return self._pack(self.arena.cells[idx])

    def scatter_write(self, A: Ultraword, X: Ultraword) -> None:
        self._check(A, X)
        self.counters.scattered_writes += 1
        idx = self._index(A)
        if int(idx.max()) >= self.arena.top:
            raise MemoryFault(f"scattered write outside arena at {int(idx.max())}")
        if self.validate and len(np.unique(idx)) != len(idx):
            raise PreconditionError("scattered write addresses must be distinct")
        self.arena.cells[idx] = self._index(X)

    def broadcast(self, x: int) -> Ultraword:
        """Copy ``x`` into every component: write it to address 0, gather from zeros."""
        if not 0 <= x <= self._mask:
            raise PreconditionError(f"value {x} does not fit in a word")
        self.counters.ultra_ops += 1  # shift a register out to get <0,...,0>
        self.counters.contiguous_accesses += 1
        self.counters.scattered_reads += 1
        self.arena.cells[0] = x
        return self._wrap(x * self._ones)

    def alloc(self, n: int) -> int:
        """Base of ``n`` fresh zeroed words."""
        addr = self.arena.alloc(n)
        self.counters.word_ops += 1
        self.counters.contiguous_accesses += -(-n // self.K)
        return addr

    def free(self, addr: int, n: int) -> None:
        self.arena.free(addr, n)
        self.counters.word_ops += 1

    def dump_hex(self, start: int = 0, stop: int | None = None) -> str:
        return self.arena.dump_hex(start, stop)
