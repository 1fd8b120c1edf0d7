import random

import numpy as np
import pytest

from uwram.hashing import MultiplyShiftFn, even_mask, ms_hash, parallel_ms_hash
from uwram.machine import Machine, MachineConfig, PreconditionError, UsageError
from conftest import make_machine


def random_lanes(m, r):
    w, K = m.w, m.K
    xs = [r.getrandbits(w) for _ in range(K)]
    As = [r.getrandbits(w) | 1 for _ in range(K)]
    cs = [r.randint(1, w) for _ in range(K)]
    return xs, As, cs


def hash_lanes(m, xs, As, cs):
    return parallel_ms_hash(m, m.uw(xs), m.uw(As), m.uw([1 << c for c in cs]),
                            even_mask(m))


def test_scalar_examples():
    assert ms_hash(MultiplyShiftFn(5, 3, 8), 7) == 1
    r = random.Random(0)
    for w in (8, 16, 32, 64):
        for _ in range(200):
            f = MultiplyShiftFn.random(r, r.randint(1, w), w)
            assert ms_hash(f, 0) == 0
            assert ms_hash(f, 1 << (w - 1)) >= 1
            assert f(3) == ms_hash(f, 3)


def test_fn_validation():
    with pytest.raises(UsageError):
        MultiplyShiftFn(4, 3, 8)
    with pytest.raises(UsageError):
        MultiplyShiftFn(5, 0, 8)
    with pytest.raises(UsageError):
        MultiplyShiftFn(257, 3, 8)


@pytest.mark.parametrize("w,K", [(8, 8), (16, 4), (16, 16), (32, 32), (64, 8), (64, 64), (12, 6)])
def test_lanes_match_scalar_oracle(w, K):
    m = make_machine(w, K)
    r = random.Random(w * K)
    for _ in range(60):
        xs, As, cs = random_lanes(m, r)
        cs = [min(c, w - 1) for c in cs]
        H = hash_lanes(m, xs, As, cs)
        assert H.tolist() == [ms_hash(MultiplyShiftFn(a, c, w), x) for x, a, c in zip(xs, As, cs)]


def test_zero_input_and_broadcast_example():
    m = make_machine(8, 8)
    assert hash_lanes(m, [0] * 8, [5] * 8, [3] * 8).tolist() == [0] * 8
    assert hash_lanes(m, [7] * 8, [5] * 8, [3] * 8).tolist() == [1] * 8


def test_c_must_be_power_of_two():
    m = make_machine(16, 4)
    X = m.uw([1, 2, 3, 4])
    A = m.uw([1, 3, 5, 7])
    with pytest.raises(PreconditionError):
        parallel_ms_hash(m, X, A, m.uw([4, 6, 8, 2]), even_mask(m))
    with pytest.raises(PreconditionError):
        parallel_ms_hash(m, X, A, m.uw([4, 1, 8, 2]), even_mask(m))


def test_cost_flat_in_K():
    costs = []
    for K in (8, 64):
        m = make_machine(64, K)
        r = random.Random(K)
        xs, As, cs = random_lanes(m, r)
        cs = [min(c, 63) for c in cs]
        before = m.counters.snapshot()
        hash_lanes(m, xs, As, cs)
        costs.append((m.counters - before).as_dict())
    assert costs[0] == costs[1]
    assert costs[0]["ultra_ops"] > 0


@pytest.mark.parametrize("w", [8, 16, 32, 64])
@pytest.mark.parametrize("K", [2, 8])
def test_fused_kernel_matches_instruction_sequence(w, K):
    r = random.Random(w + K)
    slow = Machine(MachineConfig(w, K), validate=False, fast_kernels=False)
    fast = Machine(MachineConfig(w, K), validate=False, fast_kernels=True)
    for _ in range(40):
        xs, As, cs = random_lanes(slow, r)
        cs = [min(c, w - 1) for c in cs]
        outs = [hash_lanes(mm, xs, As, cs) for mm in (slow, fast)]
        assert outs[0] == outs[1]
        assert slow.counters == fast.counters
        assert slow.arena.cells[0] == fast.arena.cells[0]


def test_universality_small_sample():
    w, c, x, y = 16, 8, 1234, 40001
    rng = np.random.default_rng(5)
    a = rng.integers(0, 1 << 15, size=20000, dtype=np.uint64) * 2 + 1
    hx = ((a * np.uint64(x)) & np.uint64(0xFFFF)) >> np.uint64(w - c)
    hy = ((a * np.uint64(y)) & np.uint64(0xFFFF)) >> np.uint64(w - c)
    rate = float(np.mean(hx == hy))
    p = 2 / 2 ** c
    assert rate <= p + 3 * (p * (1 - p) / len(a)) ** 0.5
