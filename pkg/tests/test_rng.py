import numpy as np
import pytest

from stormnet import kernels
from stormnet.rng import Rng, derive_seed, splitmix64

MASK = (1 << 64) - 1


def _reference_stream(seed, n):
    """Independent xoshiro256** implementation (splitmix64-seeded),
    transcribed separately from the package code."""
    z = seed & MASK
    state = []
    for _ in range(4):
        z = (z + 0x9E3779B97F4A7C15) & MASK
        t = z
        t = ((t ^ (t >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        t = ((t ^ (t >> 27)) * 0x94D049BB133111EB) & MASK
        state.append(t ^ (t >> 31))
    s0, s1, s2, s3 = state
    out = []
    for _ in range(n):
        r = (s1 * 5) & MASK
        r = ((r << 7) | (r >> 57)) & MASK
        out.append((r * 9) & MASK)
        t = (s1 << 17) & MASK
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & MASK
    return out


@pytest.mark.parametrize("seed", [0, 1, 42, 2**63 + 17])
def test_raw_stream_matches_reference(seed):
    got = [int(v) for v in Rng(seed).raw(64)]
    assert got == _reference_stream(seed, 64)


def test_equal_seeds_equal_first_million_draws():
    a = Rng(99).uniform(1_000_000)
    b = Rng(99).uniform(1_000_000)
    assert np.array_equal(a, b)


def test_stream_independent_of_request_chunking():
    whole = Rng(7).uniform(1000)
    r = Rng(7)
    parts = np.concatenate([r.uniform(1), r.uniform(499), r.uniform(500)])
    assert np.array_equal(whole, parts)


def test_backends_produce_identical_bits():
    state_a = Rng(5)._state.copy()
    state_b = state_a.copy()
    out_a = np.empty(10000, dtype=np.uint64)
    out_b = np.empty(10000, dtype=np.uint64)
    kernels.get_backend("numpy").xoshiro_fill(state_a, out_a)
    kernels.get_backend("numba").xoshiro_fill(state_b, out_b)
    assert np.array_equal(out_a, out_b)
    assert np.array_equal(state_a, state_b)


def test_uniform_range_and_moments():
    u = Rng(3).uniform(200_000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005


def test_uniform_bounds_rescale():
    u = Rng(3).uniform(1000, low=-2.0, high=5.0)
    assert u.min() >= -2.0 and u.max() < 5.0


def test_normal_moments():
    z = Rng(11).normal(200_000)
    assert abs(z.mean()) < 0.01
    assert abs(z.std() - 1.0) < 0.01


def test_poisson_mean_and_zero_rate():
    lam = np.full(50_000, 2.5)
    counts = Rng(13).poisson(lam)
    assert abs(counts.mean() - 2.5) < 0.05
    assert np.all(Rng(13).poisson(np.zeros(100)) == 0)


def test_permutation_is_permutation_and_deterministic():
    p1 = Rng(21).permutation(500)
    p2 = Rng(21).permutation(500)
    assert np.array_equal(p1, p2)
    assert np.array_equal(np.sort(p1), np.arange(500))


def test_splitmix64_reference_values():
    # splitmix64(advanced state) checked against the published recipe,
    # evaluated by hand with python ints
    z = (0 + 0x9E3779B97F4A7C15) & MASK
    t = z
    t = ((t ^ (t >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    t = ((t ^ (t >> 27)) * 0x94D049BB133111EB) & MASK
    assert splitmix64(z) == (t ^ (t >> 31))


def test_derive_seed_disjoint_across_splits():
    seeds = set()
    total = 0
    for split_id in (0, 1, 2):
        for idx in range(3000):
            seeds.add(derive_seed(1234, split_id, idx))
            total += 1
    assert len(seeds) == total


def test_derive_seed_key_order_matters():
    assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)


def test_spawn_children_differ():
    r = Rng(8)
    a_draw = r.spawn(0).uniform(100)
    b_draw = r.spawn(1).uniform(100)
    assert not np.array_equal(a_draw, b_draw)
    assert np.array_equal(Rng(8).spawn(0).uniform(100), a_draw)
