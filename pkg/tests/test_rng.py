import numpy as np

from ovmorph import rng


def test_streams_are_reproducible_and_keyed():
    a = rng.uniform53(rng.stream(5, 1), 8)
    b = rng.uniform53(rng.stream(5, 1), 8)
    c = rng.uniform53(rng.stream(5, 2), 8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert np.all((a >= 0) & (a < 1))


FROZEN_U = [0.9429375528828794, 0.3163371523854981]


def test_frozen_values():
    # pins the raw-draw conversion so a numpy upgrade cannot silently change results
    u = rng.uniform53(rng.stream(0, 0), 2)
    assert u.tolist() == FROZEN_U


def test_partial_shuffle_extends_same_permutation():
    full = rng.permutation(rng.stream(3), 10)
    ps = rng.PartialShuffle(rng.stream(3), 10)
    head = ps.take(4)
    tail = ps.take(6)
    assert ps.remaining == 0
    assert np.array_equal(np.concatenate([head, tail]), full)
    assert sorted(full.tolist()) == list(range(10))
    assert len(ps.take(3)) == 0


def test_integers_bounds():
    x = rng.integers(rng.stream(1), 7, 1000)
    assert x.min() == 0 and x.max() == 6


def test_permutation_roughly_uniform():
    counts = np.zeros((4, 4))
    for s in range(4000):
        p = rng.permutation(rng.stream(s), 4)
        counts[np.arange(4), p] += 1
    assert np.all(np.abs(counts - 1000) < 120)


def test_derive_seed_distinct():
    seeds = {rng.derive_seed(0, k) for k in range(100)}
    assert len(seeds) == 100
