import numpy as np
import pytest

from kbody.bodies import Ball, KEllipsoid, QBall, Tabulated
from kbody.errors import UnsupportedDimension, ZeroVector
from kbody.symmetry import (
    BlockRotation,
    Dimensions,
    align_to,
    as_rng,
    block_matrix,
    block_rotate,
    canonicalize,
    derive_seed,
    haar_sample,
    is_k_balanced,
    orbit_average,
    orbit_similarity,
    random_unit,
    similarity_to_axes,
    stratum_axis,
)

DIMS = [Dimensions(1, 3), Dimensions(2, 2), Dimensions(2, 3), Dimensions(3, 3)]


def parallel_unit(dims, rng, size=None):
    """Directions whose blocks are parallel (the only ones with sections
    when kappa >= 3)."""
    m = 1 if size is None else size
    out = np.stack([np.kron(random_unit(dims.n, rng), random_unit(dims.kappa, rng))
                    for _ in range(m)])
    return out[0] if size is None else out


def test_dimensions_basic():
    d = Dimensions(2, 3)
    assert d.ambient == 6
    with pytest.raises(Exception):
        Dimensions(0, 3)
    with pytest.raises(Exception):
        Dimensions(2, 1)


def test_derive_seed_deterministic():
    assert derive_seed(3, "abc") == derive_seed(3, "abc")
    assert derive_seed(3, "abc") != derive_seed(3, "abd")
    assert derive_seed(1, 2) != derive_seed(2, 1)


def test_block_matrix_shape():
    d = Dimensions(2, 3)
    x = np.arange(6.0)
    b = block_matrix(d, x)
    assert b.shape == (3, 2)
    assert np.allclose(b[1], [2.0, 3.0])
    stacked = block_matrix(d, np.stack([x, x]))
    assert stacked.shape == (2, 3, 2)


@pytest.mark.parametrize("dims", DIMS)
def test_haar_sample_orthogonal(dims, rng):
    for _ in range(8):
        sig = haar_sample(dims.kappa, rng)
        m = sig.matrix
        assert np.allclose(m @ m.T, np.eye(dims.kappa), atol=1e-12)
        assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("dims", DIMS)
def test_block_rotate_preserves_norm_and_blocks(dims, rng):
    x = random_unit(dims.ambient, rng, 32)
    sig = haar_sample(dims.kappa, rng)
    y = block_rotate(dims, sig, x)
    assert np.allclose(np.linalg.norm(y, axis=1), 1.0, atol=1e-12)
    bx = np.linalg.norm(block_matrix(dims, x), axis=2)
    by = np.linalg.norm(block_matrix(dims, y), axis=2)
    # block lengths are the rotation invariants
    assert np.allclose(bx, by, atol=1e-12)


def test_block_rotation_compose(rng):
    a = haar_sample(3, rng)
    b = haar_sample(3, rng)
    c = a.compose(b)
    assert np.allclose(c.matrix, a.matrix @ b.matrix)


@pytest.mark.parametrize("dims", DIMS)
def test_canonicalize_orbit_invariant(dims, rng):
    for _ in range(6):
        x = random_unit(dims.ambient, rng)
        cx = canonicalize(dims, x)
        sig = haar_sample(dims.kappa, rng)
        cy = canonicalize(dims, block_rotate(dims, sig, x))
        assert np.allclose(cx, cy, atol=1e-8)
        # idempotent
        assert np.allclose(canonicalize(dims, cx), cx, atol=1e-10)


@pytest.mark.parametrize("dims", DIMS)
def test_orbit_similarity_bounds(dims, rng):
    x = random_unit(dims.ambient, rng, 12)
    y = (parallel_unit(dims, rng, 7) if dims.kappa >= 3
         else random_unit(dims.ambient, rng, 7))
    s = orbit_similarity(dims, x, y)
    assert s.shape == (12, 7)
    assert np.all(s >= -1e-12) and np.all(s <= 1 + 1e-12)
    # similarity to itself is 1
    d = orbit_similarity(dims, y, y)
    assert np.allclose(np.diag(d), 1.0, atol=1e-10)


@pytest.mark.parametrize("dims", DIMS)
def test_orbit_similarity_rotation_invariant(dims, rng):
    x = random_unit(dims.ambient, rng, 6)
    y = (parallel_unit(dims, rng, 6) if dims.kappa >= 3
         else random_unit(dims.ambient, rng, 6))
    s0 = orbit_similarity(dims, x, y)
    sig = haar_sample(dims.kappa, rng)
    s1 = orbit_similarity(dims, block_rotate(dims, sig, x), y)
    assert np.allclose(s0, s1, atol=1e-10)


def test_stratum_axis_parallel_blocks(rng):
    dims = Dimensions(3, 3)
    x = parallel_unit(dims, rng)
    ax = stratum_axis(dims, x)
    assert ax.shape == (dims.kappa,)
    assert np.linalg.norm(ax) == pytest.approx(1.0, abs=1e-10)
    # every block of x is parallel to the returned axis
    b = block_matrix(dims, x)
    for row in b:
        ln = np.linalg.norm(row)
        if ln > 1e-12:
            assert abs(row @ ax) / ln == pytest.approx(1.0, abs=1e-8)


def test_align_to_increases_similarity(rng):
    dims = Dimensions(2, 3)
    x = random_unit(dims.ambient, rng)
    y = random_unit(dims.ambient, rng)
    z = align_to(dims, x, y)
    # alignment keeps the orbit and maximizes the plain inner product
    assert orbit_similarity(dims, z[None], y[None])[0, 0] == pytest.approx(
        orbit_similarity(dims, x[None], y[None])[0, 0], abs=1e-10)
    assert z @ x >= y @ x - 1e-12


@pytest.mark.parametrize("dims", DIMS)
def test_is_k_balanced_accepts_invariant_bodies(dims):
    assert is_k_balanced(dims, Ball(dims))
    assert is_k_balanced(dims, QBall(dims, 1.5))
    xi = np.zeros(dims.ambient)
    xi[0] = 1.0
    assert is_k_balanced(dims, KEllipsoid(dims, 2.0, 0.7, xi))


def test_is_k_balanced_rejects_skewed_body(rng):
    dims = Dimensions(2, 2)

    class Skewed(Ball):
        def _norm_rows(self, x):
            return np.linalg.norm(x * np.array([1.0, 2.0, 1.0, 1.0]), axis=1)

    assert not is_k_balanced(dims, Skewed(dims))


def test_orbit_average_constant(rng):
    dims = Dimensions(2, 2)
    x = random_unit(dims.ambient, rng)
    val = orbit_average(dims, lambda p: np.ones(p.shape[0]), x, 64, rng)
    assert val == pytest.approx(1.0, abs=1e-12)


def test_random_unit_shapes(rng):
    v = random_unit(5, rng)
    assert v.shape == (5,)
    m = random_unit(5, rng, 9)
    assert m.shape == (9, 5)
    assert np.allclose(np.linalg.norm(m, axis=1), 1.0)


def test_similarity_to_axes_matches_orbit_similarity(rng):
    dims = Dimensions(3, 3)
    x = random_unit(dims.ambient, rng, 10)
    y = parallel_unit(dims, rng, 4)
    axes = np.stack([stratum_axis(dims, v) for v in y])
    s1 = similarity_to_axes(dims, x, axes)
    s2 = orbit_similarity(dims, x, y)
    assert np.allclose(s1, s2, atol=1e-8)
