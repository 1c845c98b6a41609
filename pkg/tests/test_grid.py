from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import mode_eigenvalue, periodic_grid, sin_mode
from oceanode.errors import NonFiniteInput, NonPositiveKappa, OutOfBounds, ShapeMismatch, ValidationError
from oceanode.grid import (
    GridSpec,
    advection_term,
    crop_region,
    diffusion_term,
    gradient,
    laplacian,
    stability_bound,
)

seeds = st.integers(0, 2 ** 31 - 1)


def test_gridspec_rejects_tiny_and_bad_spacing():
    with pytest.raises(ValidationError):
        GridSpec(2, 8)
    with pytest.raises(ValidationError):
        GridSpec(8, 8, dx=0.0)
    with pytest.raises(ShapeMismatch):
        GridSpec(8, 8, mask=np.ones((8, 7), dtype=bool))


def test_gradient_of_constant_is_zero():
    g = GridSpec(8, 12)
    gx, gy = gradient(np.full(g.shape, 3.7), g)
    assert np.all(gx == 0) and np.all(gy == 0)


def test_gradient_sinusoid_within_truncation_bound():
    W = 32
    g = periodic_grid(32, W)
    jj = np.arange(W)[None, :] * np.ones((32, 1))
    f = np.sin(2 * np.pi * jj / W)
    gx, _ = gradient(f, g)
    # discrete identity: central difference of a sinusoid is sin(k) cos(kx)
    k = 2 * np.pi / W
    np.testing.assert_allclose(gx, np.sin(k) * np.cos(k * jj), atol=1e-14)
    assert np.abs(gx - k * np.cos(k * jj)).max() < k ** 3 / 6


def test_single_ocean_cell_has_zero_gradient():
    mask = np.zeros((5, 5), dtype=bool)
    mask[2, 2] = True
    g = GridSpec(5, 5, mask=mask)
    f = np.arange(25.0).reshape(5, 5)
    gx, gy = gradient(f, g)
    assert np.all(gx == 0) and np.all(gy == 0)
    assert np.all(laplacian(f, g) == 0)


def test_nonfinite_ocean_input_rejected():
    g = GridSpec(6, 6)
    f = np.zeros(g.shape)
    f[2, 3] = np.nan
    with pytest.raises(NonFiniteInput):
        gradient(f, g)
    with pytest.raises(NonFiniteInput):
        laplacian(f, g)


def test_nan_on_land_is_ignored():
    mask = np.ones((6, 6), dtype=bool)
    mask[2, 2] = False
    g = GridSpec(6, 6, mask=mask)
    f = np.ones(g.shape)
    f[2, 2] = np.nan
    assert np.all(np.isfinite(laplacian(f, g)))


def test_laplacian_constant_is_zero():
    g = GridSpec(7, 9)
    assert np.all(laplacian(np.full(g.shape, -2.0), g) == 0)


@pytest.mark.parametrize("kx,ky", [(1, 0), (3, 0), (2, 1), (5, 4)])
def test_laplacian_fourier_eigenvalue(kx, ky):
    H, W = 16, 32
    g = periodic_grid(H, W)
    f = sin_mode(H, W, kx, ky)
    np.testing.assert_allclose(laplacian(f, g), -mode_eigenvalue(H, W, kx, ky) * f, atol=1e-13)


def test_laplacian_eigenvalue_with_spacing():
    H, W, dx, dy = 8, 16, 0.5, 2.0
    g = periodic_grid(H, W, dx=dx, dy=dy)
    f = sin_mode(H, W, 2, 1)
    np.testing.assert_allclose(laplacian(f, g), -mode_eigenvalue(H, W, 2, 1, dx, dy) * f, atol=1e-12)


@given(seeds)
def test_laplacian_sums_to_zero_on_periodic_ocean(seed):
    g = periodic_grid(12, 20)
    f = np.random.default_rng(seed).normal(size=(100,) + g.shape)
    sums = laplacian(f, g).sum(axis=(-2, -1))
    assert np.abs(sums).max() < 1e-10


def test_default_boundaries_also_conserve():
    # periodic x, reflective y: the reflective copy keeps a zero-flux edge
    g = GridSpec(10, 14)
    f = np.random.default_rng(0).normal(size=(20,) + g.shape)
    assert np.abs(laplacian(f, g).sum(axis=(-2, -1))).max() < 1e-10


@given(seeds, st.floats(-3, 3), st.floats(-3, 3))
def test_gradient_linearity(seed, a, b):
    g = GridSpec(9, 11)
    r = np.random.default_rng(seed)
    f, h = r.normal(size=g.shape), r.normal(size=g.shape)
    lhs = gradient(a * f + b * h, g)
    gf, gh = gradient(f, g), gradient(h, g)
    for k in range(2):
        np.testing.assert_allclose(lhs[k], a * gf[k] + b * gh[k], atol=1e-12)


@given(seeds)
def test_mask_absorption(seed):
    r = np.random.default_rng(seed)
    mask = r.random((10, 12)) > 0.3
    g = GridSpec(10, 12, mask=mask)
    f = r.normal(size=g.shape)
    f2 = f.copy()
    f2[~mask] = r.normal(size=(~mask).sum()) * 100
    V = r.normal(size=(2,) + g.shape)
    outs = [gradient(f, g)[0], gradient(f, g)[1], laplacian(f, g), advection_term(f, V, g), diffusion_term(f, 0.3, g)]
    outs2 = [gradient(f2, g)[0], gradient(f2, g)[1], laplacian(f2, g), advection_term(f2, V, g),
             diffusion_term(f2, 0.3, g)]
    for o, o2 in zip(outs, outs2):
        assert np.all(o[~mask] == 0)
        np.testing.assert_array_equal(o[mask], o2[mask])


def test_coastline_neighbor_takes_centre_value():
    mask = np.ones((5, 6), dtype=bool)
    mask[2, 3] = False
    g = GridSpec(5, 6, mask=mask)
    f = np.zeros(g.shape)
    f[2, 2] = 1.0
    lap = laplacian(f, g)
    # the land neighbour at (2,3) mirrors the centre, so only three arms contribute
    assert lap[2, 2] == pytest.approx(-3.0)
    gx, _ = gradient(f, g)
    # d/dx at (2,2): (f[2,3]->centre 1 - f[2,1] 0) / 2
    assert gx[2, 2] == pytest.approx(0.5)


def test_second_order_truncation():
    def max_err(n):
        L = 2 * np.pi
        g = periodic_grid(4, n, dx=L / n)
        x = np.arange(n) * L / n
        f = np.sin(x)[None, :] * np.ones((4, 1)) + 0.5 * np.cos(2 * x)[None, :]
        exact = np.cos(x) - np.sin(2 * x)
        return np.abs(gradient(f, g)[0] - exact[None, :]).max()

    for n in (16, 32, 64):
        assert max_err(n) / max_err(2 * n) >= 3.5


def test_advection_zero_velocity_and_constant_field():
    g = GridSpec(8, 8)
    r = np.random.default_rng(1)
    assert np.all(advection_term(r.normal(size=g.shape), np.zeros((2,) + g.shape), g) == 0)
    assert np.all(advection_term(np.full(g.shape, 4.0), r.normal(size=(2,) + g.shape), g) == 0)


def test_advection_matches_negative_gradient():
    g = periodic_grid(8, 32)
    f = sin_mode(8, 32)
    V = np.zeros((2,) + g.shape)
    V[0] = 1.0
    np.testing.assert_array_equal(advection_term(f, V, g), -gradient(f, g)[0])


def test_advection_shape_mismatch():
    g = GridSpec(8, 8)
    with pytest.raises(ShapeMismatch):
        advection_term(np.zeros(g.shape), np.zeros((3, 8, 8)), g)
    with pytest.raises(ShapeMismatch):
        advection_term(np.zeros(g.shape), np.zeros((2, 8, 9)), g)


def test_diffusion_term():
    H, W = 8, 16
    g = periodic_grid(H, W)
    assert np.all(diffusion_term(np.ones(g.shape), 1.0, g) == 0)
    f = sin_mode(H, W, 2, 0)
    np.testing.assert_allclose(diffusion_term(f, 0.5, g), -0.5 * mode_eigenvalue(H, W, 2, 0) * f, atol=1e-14)
    for bad in (0.0, -1.0):
        with pytest.raises(NonPositiveKappa):
            diffusion_term(f, bad, g)


def test_diffusion_term_accepts_kappa_map():
    g = GridSpec(6, 8)
    f = np.random.default_rng(2).normal(size=g.shape)
    kmap = np.full(g.shape, 0.25)
    np.testing.assert_allclose(diffusion_term(f, kmap, g), 0.25 * laplacian(f, g))


def test_crop_full_extent_is_identity():
    g = GridSpec(32, 64)
    f = np.random.default_rng(3).normal(size=g.shape)
    vals, sub = crop_region(f, g, (-90, 90), (0, 360))
    np.testing.assert_array_equal(vals, f)
    assert sub.shape == g.shape and sub.boundary_x == "periodic"


def test_crop_equatorial_pacific_rows():
    g = GridSpec(32, 64)                   # 5.625 degree cells
    vals, sub = crop_region(np.zeros(g.shape), g, (-5, 5), (160, -100))
    lats = g.lats
    expected_rows = np.nonzero(np.abs(lats) <= 5)[0]
    assert expected_rows.tolist() == [15, 16]
    assert vals.shape[0] == 2
    # 160E .. 260E: centres 5.625*j in [160, 260]
    assert vals.shape[1] == len([j for j in range(64) if 160 <= 5.625 * j <= 260])


def test_crop_regional_edges_reflective():
    g = GridSpec(32, 64)
    _, sub = crop_region(np.zeros(g.shape), g, (-30, 30), (100, 200))
    assert sub.boundary_x == "reflective" and sub.boundary_y == "reflective"


def test_crop_empty_range():
    g = GridSpec(32, 64)
    with pytest.raises(OutOfBounds):
        crop_region(np.zeros(g.shape), g, (10, -10), (0, 10))
    with pytest.raises(OutOfBounds):
        crop_region(np.zeros(g.shape), g, (1.0, 1.5), (0, 10))


def test_stability_bound():
    assert stability_bound(0.1, 1, 1, 1)
    assert not stability_bound(1.0, 1, 1, 1)
    assert stability_bound(1e-12, 1, 1, 1e6)
    assert stability_bound(0.0, 1, 1, 1e9)
