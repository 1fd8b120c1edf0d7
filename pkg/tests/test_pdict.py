import random

import pytest
from hypothesis import given, settings, strategies as st

from uwram.machine import UsageError
from uwram.pdict import ParallelDict, build
from conftest import make_machine


def small_universe(w, r):
    if w == 8:
        return r.choice([0, 128, 255, 3, 5, 77, 130, 200, 64, 9])
    return r.choice([0, 1 << (w - 1), r.getrandbits(w), r.getrandbits(10)])


def test_fresh_dictionary_is_empty():
    m = make_machine(16, 4)
    d = ParallelDict(m, 1)
    r = random.Random(0)
    assert len(d) == 0
    for _ in range(50):
        assert not d.member(r.getrandbits(16))
    assert d.pmember(m.uw([0, 1 << 15, 5, 7])).tolist() == [0] * 4
    d.check_invariants()


def test_insert_member_delete_basics():
    m = make_machine(32, 8)
    d = ParallelDict(m, 2)
    d.insert(42)
    assert 42 in d and len(d) == 1
    d.insert(42)
    assert len(d) == 1
    assert not d.delete(7)
    assert d.delete(42)
    assert 42 not in d and len(d) == 0
    d.check_invariants()


@pytest.mark.parametrize("w", [16, 32, 64])
def test_reserved_values_are_ordinary_keys(w):
    m = make_machine(w, 8)
    d = ParallelDict(m, w)
    top = 1 << (w - 1)
    X = m.uw([0, top, 0, top, 1, 2, 3, 4])
    assert d.pmember(X).tolist() == [0] * 8
    d.insert(0)
    assert d.pmember(X).tolist() == [1, 0, 1, 0, 0, 0, 0, 0]
    d.insert(top)
    d.delete(0)
    assert d.pmember(X).tolist() == [0, 1, 0, 1, 0, 0, 0, 0]
    assert d.member(top) and not d.member(0)
    d.check_invariants()


@pytest.mark.parametrize("w,K", [(8, 8), (16, 16), (32, 8), (64, 64)])
@pytest.mark.parametrize("satellite", [False, True])
def test_trace_matches_set_oracle(w, K, satellite):
    m = make_machine(w, K)
    d = ParallelDict(m, seed=w, satellite=satellite, data_words=2,
                     table_factor=1 if w == 8 else 4)
    r = random.Random(w * 7 + satellite)
    ref = {}
    steps = 400 if w == 8 else 1200
    for t in range(steps):
        x = small_universe(w, r)
        if r.random() < 0.6:
            addr = d.insert(x, [x & 0xFF, 7] if satellite else None)
            ref.setdefault(x, addr)
        else:
            assert d.delete(x) == (x in ref)
            ref.pop(x, None)
        if t % 100 == 0:
            d.check_invariants()
            assert d.keys() == sorted(ref)
        pool = list(ref) or [0]
        xs = [r.choice(pool) if r.random() < 0.5 else r.getrandbits(w) for _ in range(K)]
        if satellite:
            I, D = d.pretrieve(m.uw(xs))
            for i, x in enumerate(xs):
                if x in ref:
                    assert D[i] == ref[x]
                    assert m.load(D[i]) == x & 0xFF
        else:
            I = d.pmember(m.uw(xs))
        assert I.tolist() == [int(x in ref) for x in xs]
        assert I.tolist() == [int(d.member(x)) for x in xs]
    d.check_invariants()


def test_pretrieve_needs_satellite_mode():
    m = make_machine(16, 4)
    d = ParallelDict(m)
    with pytest.raises(UsageError):
        d.pretrieve(m.uw([1, 2, 3, 4]))
    with pytest.raises(UsageError):
        d.insert(5, [1])


def test_broadcast_of_stored_key_gives_equal_addresses():
    m = make_machine(32, 8)
    d = ParallelDict(m, 3, satellite=True)
    addr = d.insert(99, [123])
    I, D = d.pretrieve(m.uw([99] * 8))
    assert I.tolist() == [1] * 8
    assert D.tolist() == [addr] * 8


def test_pmember_cost_is_constant():
    m = make_machine(32, 16, validate=False)
    d = ParallelDict(m, 4)
    r = random.Random(4)
    costs = set()
    for n in (10, 100, 1000):
        while len(d) < n:
            d.insert(r.getrandbits(32))
        for _ in range(5):
            before = m.counters.snapshot()
            d.pmember(m.uw([r.getrandbits(32) for _ in range(16)]))
            costs.add(tuple((m.counters - before).as_dict().items()))
    assert len(costs) == 1


def test_rebuilds_happen_and_keep_invariants():
    m = make_machine(32, 4)
    d = ParallelDict(m, 5)
    r = random.Random(5)
    keys = [r.getrandbits(32) for _ in range(300)]
    for k in keys:
        d.insert(k)
    for k in keys[::2]:
        d.delete(k)
    assert d.rebuilds > 3
    d.check_invariants()
    assert d.keys() == sorted(set(keys[1::2]))


def test_destroy_returns_all_words():
    m = make_machine(32, 8)
    before = m.arena.live_words
    d = build(m, range(1, 200, 3), seed=6, satellite=True, data_words=3)
    assert m.arena.live_words > before
    d.destroy()
    assert m.arena.live_words == before


def test_invariant_scan_detects_corruption():
    m = make_machine(16, 4)
    d = build(m, [5, 9, 300, 4000], seed=7)
    assert d.invariant_violations() == []
    m.arena.cells[d.empty_addr] = 3
    assert any("empty table" in p for p in d.invariant_violations())


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 2 ** 16 - 1)), max_size=60))
def test_hypothesis_ops_match_set(ops):
    m = make_machine(16, 4)
    d = ParallelDict(m, 8)
    ref = set()
    for ins, x in ops:
        if ins:
            d.insert(x)
            ref.add(x)
        else:
            d.delete(x)
            ref.discard(x)
    assert d.keys() == sorted(ref)
    d.check_invariants()
