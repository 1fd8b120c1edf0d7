import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from uwram.machine import (
    CostCounters, Machine, MachineConfig, MemoryFault, OutOfMemory,
    PreconditionError, Ultraword, UsageError, lanes_for,
)
from conftest import make_machine

CONFIGS = [(8, 8), (10, 4), (16, 2), (16, 16), (32, 8), (64, 4), (64, 64)]


def lane_vectors(w, K):
    word = st.one_of(st.integers(0, (1 << w) - 1),
                     st.sampled_from([0, 1, (1 << w) - 1, 1 << (w - 1)]))
    return st.lists(word, min_size=K, max_size=K)


@pytest.mark.parametrize("w,K", CONFIGS)
def test_componentwise_ops_match_lane_oracle(w, K):
    m = make_machine(w, K)
    mask = (1 << w) - 1

    @settings(max_examples=60, deadline=None)
    @given(lane_vectors(w, K), lane_vectors(w, K))
    def check(a, b):
        X, Y = m.uw(a), m.uw(b)
        assert m.add(X, Y).tolist() == [(x + y) & mask for x, y in zip(a, b)]
        assert m.sub(X, Y).tolist() == [(x - y) & mask for x, y in zip(a, b)]
        assert m.mul(X, Y).tolist() == [(x * y) & mask for x, y in zip(a, b)]
        assert m.lt(X, Y).tolist() == [int(x < y) for x, y in zip(a, b)]
        assert m.eq(X, Y).tolist() == [int(x == y) for x, y in zip(a, b)]
        assert m.and_(X, Y).tolist() == [x & y for x, y in zip(a, b)]
        assert m.or_(X, Y).tolist() == [x | y for x, y in zip(a, b)]
        assert m.xor(X, Y).tolist() == [x ^ y for x, y in zip(a, b)]
        assert m.not_(X).tolist() == [x ^ mask for x in a]
        assert m.compress(X) == sum((x & 1) << i for i, x in enumerate(a))

    check()


@pytest.mark.parametrize("w,K", CONFIGS)
def test_whole_register_shifts(w, K):
    m = make_machine(w, K)
    r = random.Random(w + K)
    a = [r.getrandbits(w) for _ in range(K)]
    X = m.uw(a)
    v = X.v
    full = (1 << (K * w)) - 1
    for s in (0, 1, w - 1, w, w + 3, K * w - 1, K * w, K * w + 5):
        assert m.shl(X, s).v == (v << s) & full
        assert m.shr(X, s).v == v >> s
    assert m.shr(X, w).tolist() == a[1:] + [0]
    assert m.shl(X, w).tolist() == [0] + a[:-1]
    with pytest.raises(UsageError):
        m.shl(X, -1)


def test_cw_arith_dispatch():
    m = make_machine(8, 4)
    X, Y = m.uw([1, 2, 3, 250]), m.uw([4, 2, 1, 10])
    assert m.cw_arith("add", X, Y).tolist() == [5, 4, 4, 4]
    assert m.cw_arith("lt", X, Y).tolist() == [1, 0, 0, 0]
    assert m.cw_arith("not", X).tolist() == [254, 253, 252, 5]
    assert m.cw_arith("shr", X, 8).tolist() == [2, 3, 250, 0]
    with pytest.raises(UsageError):
        m.cw_arith("div", X, Y)
    with pytest.raises(UsageError):
        m.cw_arith("add", X)


def test_broadcast_examples():
    m = make_machine(16, 8)
    assert m.broadcast(0).tolist() == [0] * 8
    assert m.broadcast(5).tolist() == [5] * 8
    c = m.counters
    assert (c.ultra_ops, c.scattered_reads) == (2, 2)
    lt = m.cw_arith("lt", m.broadcast(3), m.broadcast(7))
    assert m.compress(lt) == (1 << 8) - 1
    with pytest.raises(PreconditionError):
        m.broadcast(1 << 16)


def test_msb_index():
    m = make_machine(16, 2)
    assert m.msb_index(1) == 0
    assert m.msb_index(1 << 15) == 15
    x = 0b0010110
    loop = max(i for i in range(16) if x >> i & 1)
    assert m.msb_index(x) == loop == 4
    assert m.counters.word_ops == 3
    with pytest.raises(UsageError):
        m.msb_index(0)


@pytest.mark.parametrize("w", [8, 16, 32, 64])
def test_mul_2w_exact(w):
    m = make_machine(w, 8)
    r = random.Random(w)
    top = (1 << w) - 1
    for _ in range(200):
        a = [r.choice([0, 1, top, r.getrandbits(w)]) if i % 2 == 0 else 0 for i in range(8)]
        b = [r.choice([0, 1, top, r.getrandbits(w)]) if i % 2 == 0 else 0 for i in range(8)]
        z = m.mul_2w(m.uw(a), m.uw(b)).tolist()
        for i in range(0, 8, 2):
            assert z[i] | z[i + 1] << w == a[i] * b[i]


def test_mul_2w_rejects_odd_lanes():
    m = make_machine(8, 4)
    with pytest.raises(PreconditionError):
        m.mul_2w(m.uw([1, 1, 0, 0]), m.uw([1, 0, 0, 0]))


def test_blend_and_selector_check():
    m = make_machine(8, 4)
    X, Y = m.uw([1, 2, 3, 4]), m.uw([9, 8, 7, 6])
    assert m.blend(X, Y, m.uw([1, 0, 1, 0])).tolist() == [9, 2, 7, 4]
    with pytest.raises(PreconditionError):
        m.blend(X, Y, m.uw([2, 0, 0, 0]))


def test_scatter_round_trip_and_duplicates():
    m = make_machine(16, 4)
    base = m.alloc(64)
    A = m.uw([base + 3, base + 17, base + 42, base + 5])
    X = m.uw([11, 22, 33, 44])
    m.scatter_write(A, X)
    assert m.scatter_read(A) == X
    assert (m.counters.scattered_reads, m.counters.scattered_writes) == (1, 1)
    # duplicate reads are fine, duplicate writes are not
    assert m.scatter_read(m.uw([base + 3] * 4)).tolist() == [11] * 4
    with pytest.raises(PreconditionError):
        m.scatter_write(m.uw([base, base, base + 1, base + 2]), X)
    with pytest.raises(MemoryFault):
        m.scatter_read(m.uw([base, base, base, m.arena.top + 10]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 4000), min_size=4, max_size=4, unique=True))
def test_random_addresses_round_trip(addrs):
    m = make_machine(16, 4)
    m.alloc(4001)
    X = m.uw([a * 7 % 65536 for a in addrs])
    m.scatter_write(m.uw(addrs), X)
    assert m.scatter_read(m.uw(addrs)) == X


def test_load_store_ultra():
    m = make_machine(32, 4)
    a = m.alloc(4)
    m.store_ultra(a, m.uw([1, 2, 3, 4]))
    assert m.load_ultra(a).tolist() == [1, 2, 3, 4]
    assert m.load(a + 2) == 3
    with pytest.raises(MemoryFault):
        m.load(m.arena.top)


def test_arena_allocator_reuses_and_coalesces():
    m = make_machine(16, 2)
    a = m.alloc(10)
    b = m.alloc(10)
    c = m.alloc(10)
    m.store(b, 99)
    m.free(b, 10)
    assert m.alloc(4) == b           # best fit inside the hole
    assert m.load(b) == 0            # fresh blocks are zeroed
    m.free(b, 4)
    m.free(a, 10)
    assert m.alloc(20) == a          # the two holes merged
    m.free(c, 10)
    assert m.arena.top == a + 20     # trailing space returns to the bump pointer
    with pytest.raises(UsageError):
        m.free(a, 3)


def test_arena_out_of_memory():
    m = make_machine(8, 2)
    m.alloc(200)
    with pytest.raises(OutOfMemory):
        m.alloc(100)
    assert m.arena.peak_words == 200


def test_ultraword_basics():
    cfg = MachineConfig(w=8, K=4)
    X = Ultraword.of(cfg, [1, 2, 3, 4])
    assert X[0] == 1 and X[3] == 4 and len(X) == 4 and list(X) == [1, 2, 3, 4]
    assert X.v == 0x04030201
    assert Ultraword.filled(cfg, 7).tolist() == [7] * 4
    with pytest.raises(UsageError):
        Ultraword.of(cfg, [1, 2, 3])
    with pytest.raises(UsageError):
        Ultraword.of(cfg, [256, 0, 0, 0])


def test_config_validation_and_lanes():
    with pytest.raises(UsageError):
        MachineConfig(w=7, K=2)
    with pytest.raises(UsageError):
        MachineConfig(w=16, K=3)
    with pytest.raises(UsageError):
        MachineConfig(w=16, K=32)
    assert lanes_for(64, 1) == 64
    assert lanes_for(64, Fraction(1, 2)) == 8
    assert lanes_for(64, Fraction(1, 3)) == 4
    assert lanes_for(16, Fraction(1, 2)) == 4
    assert lanes_for(8, Fraction(1, 2)) == 4     # ceil(sqrt 8) = 3, rounded up to even
    assert MachineConfig.for_epsilon(32, "1/2").K == 6
    assert MachineConfig(w=8, K=2).arena_capacity == 255


def test_counters_arithmetic():
    a = CostCounters(word_ops=3, ultra_ops=2, host_ops=5)
    b = a.snapshot()
    a += CostCounters(ultra_ops=1)
    assert (a - b).ultra_ops == 1
    assert a.total() == 6
    a.restore(b)
    assert a == b
    a.reset()
    assert a.total() == 0


def test_validating_and_fast_modes_agree():
    r = random.Random(3)
    ms = [make_machine(32, 8, validate=v) for v in (True, False)]
    a = [r.getrandbits(32) for _ in range(8)]
    b = [r.getrandbits(32) for _ in range(8)]
    outs = [(m.add(m.uw(a), m.uw(b)), m.lt(m.uw(a), m.uw(b))) for m in ms]
    assert outs[0][0].tolist() == outs[1][0].tolist()
    assert outs[0][1].tolist() == outs[1][1].tolist()
    assert ms[0].counters == ms[1].counters


def test_dump_hex():
    m = make_machine(16, 2)
    a = m.alloc(2)
    m.store(a, 0xBEEF)
    assert f"{a:08x}: {0xBEEF:016x}" in m.dump_hex()
