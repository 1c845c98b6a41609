from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import periodic_grid, sin_mode
from oceanode.autodiff import ParamSet, Tensor, gradcheck, inverse_softplus
from oceanode.data import SyntheticParams, gen_synthetic
from oceanode.errors import ShapeMismatch, TooFewKnots, ValidationError
from oceanode.grid import GridSpec, gradient, laplacian
from oceanode.velocity import (
    RbfPrior,
    VelocityConfig,
    VelocityEstimate,
    estimate_initial_velocity,
    kernel_expand,
    residual,
    residual_loss,
)


def test_residual_trivial_zero():
    g = GridSpec(8, 8)
    R = residual(np.full(g.shape, 2.0), np.zeros(g.shape), np.zeros((2,) + g.shape), 0.7, g)
    assert np.all(R == 0)


def test_residual_pure_advection_cancels():
    g = periodic_grid(8, 32)
    Y = sin_mode(8, 32)
    c = 0.4
    V = np.zeros((2,) + g.shape)
    V[0] = c
    dYdt = -c * gradient(Y, g)[0]
    R = residual(Y, dYdt, V, 1e-300, g)
    assert np.abs(R).max() < 1e-15


def test_residual_pure_diffusion_cancels():
    g = periodic_grid(8, 32)
    Y = sin_mode(8, 32, 2, 1)
    R = residual(Y, 0.3 * laplacian(Y, g), np.zeros((2,) + g.shape), 0.3, g)
    assert np.abs(R).max() < 1e-15


def test_residual_land_zero_and_shapes():
    mask = np.ones((6, 6), dtype=bool)
    mask[1, 1] = False
    g = GridSpec(6, 6, mask=mask)
    r = np.random.default_rng(0)
    R = residual(r.normal(size=g.shape), r.normal(size=g.shape), r.normal(size=(2,) + g.shape), 0.1, g)
    assert R[1, 1] == 0
    with pytest.raises(ShapeMismatch):
        residual(np.zeros((6, 6)), np.zeros((6, 5)), np.zeros((2, 6, 6)), 0.1, g)


def test_residual_loss_gradcheck():
    mask = np.ones((8, 8), dtype=bool)
    mask[3:5, 1:3] = False
    g = GridSpec(8, 8, mask=mask)
    r = np.random.default_rng(1)
    Y, dY = r.normal(size=g.shape), r.normal(size=g.shape)
    smoother = RbfPrior(2.0).smoothing_matrix(g)
    for cfg, sm in ((VelocityConfig(alpha=1e-2, rbf=False), None), (VelocityConfig(alpha=1e-2), smoother)):
        ps = ParamSet({"V": 0.3 * r.normal(size=(2,) + g.shape), "k": np.array(inverse_softplus(0.2))})
        rep = gradcheck(lambda p: residual_loss(Y, dY, p["V"], p["k"], g, cfg, sm), ps, rtol=1e-4, h=1e-4)
        assert rep.passed, str(rep)


def test_rbf_kernel_symmetric_unit_diagonal():
    r = np.random.default_rng(2)
    coords = r.uniform(0, 10, size=(12, 2))
    K = RbfPrior(1.5).kernel_matrix(coords)
    np.testing.assert_allclose(K, K.T)
    np.testing.assert_array_equal(np.diag(K), 1.0)
    Kp = RbfPrior(1.5).kernel_matrix(coords, period=10.0)
    np.testing.assert_allclose(Kp, Kp.T)


def test_smoother_preserves_uniform_flow():
    mask = np.ones((10, 16), dtype=bool)
    mask[3:6, 4:9] = False
    g = GridSpec(10, 16, mask=mask)
    S = RbfPrior(3.0).smoothing_matrix(g)
    u = np.where(mask, 1.0, 0.0).ravel()
    np.testing.assert_allclose((S @ u)[mask.ravel()], 1.0, atol=1e-12)


def test_zero_signal_leaves_velocity_at_zero():
    g = GridSpec(8, 16)
    vals = np.full((3,) + g.shape, 1.5)
    est = estimate_initial_velocity(vals, [0, 6, 12], g, VelocityConfig(epochs=50))
    assert np.sqrt((est.velocity ** 2).sum(0)).max() <= 1e-6


def test_too_few_snapshots():
    g = GridSpec(8, 8)
    with pytest.raises(TooFewKnots):
        estimate_initial_velocity(np.zeros((2, 8, 8)), [0, 6], g)


def _instance(seed=0, **kw):
    ds = gen_synthetic("advdiff", SyntheticParams(length=4, split_fractions=(1.0, 0.0, 0.0), **kw), seed)
    return ds.variables["sst"].values[:3], ds.times[:3], ds.grid


def test_invariants_and_determinism():
    vals, times, g = _instance()
    a = estimate_initial_velocity(vals, times, g)
    b = estimate_initial_velocity(vals, times, g)
    assert a.kappa > 0 and np.isfinite(a.final_loss) and a.epochs_run == 200
    assert a.velocity.tobytes() == b.velocity.tobytes() and a.kappa_raw == b.kappa_raw
    tail = np.array(a.loss_history[-10:])
    assert np.all(np.diff(tail) <= 1e-6)


def test_estimate_roundtrip(tmp_path):
    vals, times, g = _instance()
    a = estimate_initial_velocity(vals, times, g, VelocityConfig(epochs=20))
    a.save(tmp_path / "v0")
    b = VelocityEstimate.load(tmp_path / "v0")
    assert b.velocity.tobytes() == a.velocity.tobytes() and b.kappa_raw == a.kappa_raw


def test_recovers_slow_uniform_flow():
    # slow flow at the default synthetic settings: three 6h snapshots resolve the tendency
    vals, times, g = _instance(velocity=(0.15, -0.1), kappa=0.1)
    est = estimate_initial_velocity(vals, times, g)
    interior = np.zeros(g.shape, dtype=bool)
    interior[2:-2] = True
    truth = np.array([0.15, -0.1])[:, None]
    err = np.linalg.norm(est.velocity[:, interior] - truth) / np.linalg.norm(np.broadcast_to(truth, (2, interior.sum())))
    assert err < 0.10          # frozen regression bound: 0.082 on this instance (0.061 in penalty mode)
    assert 0.05 < est.kappa < 0.15  # 0.072 observed; the spline tendency biases it low


@settings(max_examples=5)
@given(st.integers(0, 2 ** 16))
def test_stronger_regularisation_shrinks_velocity(seed):
    vals, times, g = _instance(0)
    noisy = vals + 1e-3 * np.random.default_rng(seed).normal(size=vals.shape)
    norms = [float((estimate_initial_velocity(noisy, times, g, VelocityConfig(alpha=a, epochs=100)).velocity ** 2).sum())
             for a in (1e-5, 1e-3, 1e-1)]
    assert norms[1] <= norms[0] and norms[2] <= norms[1]


def test_kernel_expand_matches_smoother():
    g = GridSpec(6, 10)
    S = RbfPrior(2.0).smoothing_matrix(g)
    u = np.random.default_rng(0).standard_normal((2,) + g.shape)
    out = kernel_expand(Tensor(u), S, g).data
    for c in range(2):
        np.testing.assert_allclose(out[c].ravel(), S @ u[c].ravel(), atol=1e-12)


@pytest.mark.parametrize("mode", ["basis", "penalty", "both"])
def test_rbf_modes_run_and_stay_finite(mode):
    vals, times, g = _instance()
    est = estimate_initial_velocity(vals, times, g, VelocityConfig(epochs=20, rbf_mode=mode))
    assert np.isfinite(est.velocity).all() and est.kappa > 0


def test_unknown_rbf_mode_rejected():
    vals, times, g = _instance()
    with pytest.raises(ValidationError):
        estimate_initial_velocity(vals, times, g, VelocityConfig(epochs=2, rbf_mode="kernel"))
