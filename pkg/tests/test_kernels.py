import numpy as np
import pytest

from ovmorph import kernels
from ovmorph.fixtures import disc_coords

BACKENDS = kernels.backends()
needs_both = pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")


def test_backend_selected():
    assert kernels.BACKEND in BACKENDS


@needs_both
def test_best_split_parity():
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    gen = np.random.default_rng(0)
    for _ in range(300):
        n, d, c = int(gen.integers(2, 60)), int(gen.integers(1, 6)), int(gen.integers(2, 4))
        X = np.ascontiguousarray(gen.integers(0, 6, size=(n, d)).astype(np.float64) * gen.choice([1.0, 0.1]))
        y = gen.integers(0, c, size=n).astype(np.intp)
        idx = np.sort(gen.integers(0, n, size=n)).astype(np.intp)
        feats = np.sort(gen.choice(d, size=int(gen.integers(1, d + 1)), replace=False)).astype(np.intp)
        leaf = int(gen.integers(1, 4))
        assert py.best_split(X, y, idx, feats, c, leaf) == cy.best_split(X, y, idx, feats, c, leaf)


@needs_both
def test_apply_tree_parity():
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    feature = np.array([0, 1, -1, -1, -1], dtype=np.intp)
    threshold = np.array([0.5, -0.25, 0, 0, 0], dtype=np.float64)
    left = np.array([1, 2, -1, -1, -1], dtype=np.intp)
    right = np.array([4, 3, -1, -1, -1], dtype=np.intp)
    X = np.random.default_rng(1).normal(size=(500, 2))
    a = py.apply_tree(X, feature, threshold, left, right)
    b = cy.apply_tree(X, feature, threshold, left, right)
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= {2, 3, 4}


@needs_both
def test_contour_parity():
    py, cy = BACKENDS["python"], BACKENDS["cython"]
    gen = np.random.default_rng(2)
    for _ in range(200):
        img = (gen.random((int(gen.integers(1, 12)), int(gen.integers(1, 12)))) < 0.6).astype(np.uint8)
        img = np.pad(img, 1)
        assert py.contour_steps(img) == cy.contour_steps(img)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_contour_known_shapes(name):
    k = BACKENDS[name]
    square = np.pad(np.ones((3, 3), dtype=np.uint8), 1)
    assert k.contour_steps(square) == (8, 0)
    single = np.pad(np.ones((1, 1), dtype=np.uint8), 1)
    assert k.contour_steps(single) == (0, 0)
    diamond = np.zeros((5, 5), dtype=np.uint8)
    diamond[1, 2] = diamond[2, 1] = diamond[2, 3] = diamond[3, 2] = 1
    assert k.contour_steps(diamond) == (0, 4)
    d = disc_coords(6, (8, 8))
    img = np.zeros((17, 17), dtype=np.uint8)
    img[d[:, 0], d[:, 1]] = 1
    a, g = k.contour_steps(img)
    assert a + g * np.sqrt(2) == pytest.approx(2 * np.pi * 6, rel=0.1)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_best_split_simple(name):
    k = BACKENDS[name]
    X = np.array([[1.0], [2.0], [8.0], [9.0]])
    y = np.array([0, 0, 1, 1], dtype=np.intp)
    f, thr, score = k.best_split(X, y, np.arange(4, dtype=np.intp), np.array([0], dtype=np.intp), 2, 1)
    assert (f, thr, score) == (0, 5.0, 4.0)
    f, _, _ = k.best_split(np.ones((4, 1)), y, np.arange(4, dtype=np.intp), np.array([0], dtype=np.intp), 2, 1)
    assert f == -1
