from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import mode_eigenvalue
from oceanode.data import (
    Dataset,
    Normalization,
    SyntheticParams,
    Trajectory,
    diurnal_source,
    gen_synthetic,
    load_dataset,
    make_windows,
    save_dataset,
)
from oceanode.errors import (
    ChecksumMismatch,
    ManifestMalformed,
    ShapeMismatch,
    SplitTooShort,
    UnstableParams,
    ValidationError,
)
from oceanode.grid import GridSpec


def _dataset(T=10, H=4, W=5, splits=None, seed=0):
    g = GridSpec(H, W)
    vals = np.random.default_rng(seed).normal(size=(T, H, W))
    return Dataset(g, {"sst": Trajectory(vals, 6.0 * np.arange(T))}, 6.0, splits or {"train": (0, T)})


def test_two_value_normalisation():
    g = GridSpec(3, 3)
    vals = np.stack([np.zeros((3, 3)), np.full((3, 3), 2.0)])
    ds = Dataset(g, {"sst": Trajectory(vals, [0.0, 6.0])}, 6.0, {"train": (0, 2)})
    n = ds.normalization["sst"]
    assert (n.mean, n.std) == (1.0, 1.0)
    z = ds.standardized("sst")
    assert np.all(z[0] == -1) and np.all(z[1] == 1)


def test_training_statistics_standardised():
    ds = gen_synthetic("advdiff", SyntheticParams(polar_land=True, land=[(5, 11, 10, 16)]), 0)
    z = ds.standardized("sst")[slice(*ds.splits["train"])][:, ds.grid.mask]
    assert abs(z.mean()) < 1e-6 and abs(z.std() - 1) < 1e-4
    assert np.all(ds.standardized("sst")[:, ~ds.grid.mask] == 0)


@given(st.floats(-100, 100), st.floats(1e-3, 100), st.integers(0, 10_000))
def test_standardise_roundtrip(mean, std, seed):
    n = Normalization(mean, std)
    x = np.random.default_rng(seed).normal(size=20) * 10
    np.testing.assert_allclose(n.invert(n.apply(x)), x, atol=1e-9)


def test_split_ordering_enforced():
    with pytest.raises(ValidationError):
        _dataset(splits={"train": (0, 6), "val": (5, 8), "test": (8, 10)})
    with pytest.raises(ValidationError):
        _dataset(splits={"train": (4, 8), "test": (0, 4)})


def test_window_counts():
    ds = _dataset(T=10)
    assert len(make_windows(ds, 3, 5)) == 3
    assert len(make_windows(_dataset(T=8), 3, 5)) == 1
    with pytest.raises(ValidationError):
        make_windows(ds, 3, 0)
    with pytest.raises(ValidationError):
        make_windows(ds, 2, 1)
    with pytest.raises(SplitTooShort):
        make_windows(_dataset(T=7), 3, 5)


def test_window_contents_and_subsampling():
    ds = _dataset(T=12)
    w = make_windows(ds, 3, 2, every=2)[1]
    z = ds.standardized("sst")
    np.testing.assert_array_equal(w.inputs, z[[1, 3, 5]])
    np.testing.assert_array_equal(w.targets, z[[7, 9]])
    np.testing.assert_array_equal(w.target_times, [42.0, 54.0])
    assert w.t0 == 30.0 and np.all(w.forcing == 0)


@given(st.integers(10, 40), st.data())
def test_windows_never_straddle_splits(T, data):
    a = data.draw(st.integers(3, T - 6))
    b = data.draw(st.integers(a + 1, T - 3))
    ds = _dataset(T=T, splits={"train": (0, a), "val": (a, b), "test": (b, T)})
    p, q = data.draw(st.integers(3, 4)), data.draw(st.integers(1, 3))
    every = data.draw(st.integers(1, 2))
    for name, (s0, s1) in ds.splits.items():
        try:
            wins = make_windows(ds, p, q, name, every=every)
        except SplitTooShort:
            assert s1 - s0 < (p + q - 1) * every + 1
            continue
        assert len(wins) == s1 - s0 - (p + q - 1) * every
        for w in wins:
            t = np.concatenate([w.input_times, w.target_times]) / 6.0
            assert s0 <= t.min() and t.max() < s1


def test_roundtrip_bit_identical(tmp_path):
    ds = gen_synthetic("advdiff_forced", SyntheticParams(source_amplitude=0.02, land=[(4, 8, 3, 9)]), 1)
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path / "manifest.json")
    assert set(back.variables) == {"sst", "sw", "lw", "lhf", "shf"}
    for k, v in ds.variables.items():
        assert back.variables[k].values.tobytes() == v.values.tobytes()
        assert back.variables[k].times.tobytes() == v.times.tobytes()
    np.testing.assert_array_equal(back.grid.mask, ds.grid.mask)
    assert back.splits == ds.splits and back.normalization == ds.normalization and back.cadence == ds.cadence


def test_f32_storage(tmp_path):
    ds = _dataset()
    save_dataset(ds, tmp_path, dtype="f32")
    back = load_dataset(tmp_path)
    np.testing.assert_array_equal(back.variables["sst"].values, ds.variables["sst"].values.astype(np.float32))


def test_corrupt_inputs(tmp_path):
    ds = _dataset()
    save_dataset(ds, tmp_path)
    blob = tmp_path / "sst.bin"
    raw = blob.read_bytes()
    blob.write_bytes(raw[:-8])
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["variables"][0]["sha256"] = hashlib.sha256(raw[:-8]).hexdigest()
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(ShapeMismatch):
        load_dataset(tmp_path)

    blob.write_bytes(raw[:-8] + b"\x00" * 8)
    with pytest.raises(ChecksumMismatch):
        load_dataset(tmp_path)

    (tmp_path / "manifest.json").write_text("{not json")
    with pytest.raises(ManifestMalformed):
        load_dataset(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "other"}))
    with pytest.raises(ManifestMalformed):
        load_dataset(tmp_path)


def test_diffusion_generator_matches_discrete_decay():
    prm = SyntheticParams(height=8, width=32, length=5, kappa=0.2, initial="sin", mode=(2, 0), spinup=0.0)
    ds = gen_synthetic("diffusion", prm, 0)
    vals = ds.variables["sst"].values
    lam = mode_eigenvalue(8, 32, 2, 0)
    dt = prm.cadence / prm.substeps
    for n in range(prm.length):
        expected = (1 - 0.2 * lam * dt) ** (n * prm.substeps) * vals[0]
        np.testing.assert_allclose(vals[n], expected, rtol=1e-3, atol=1e-12)


def test_advection_generator_centroid_drift():
    prm = SyntheticParams(height=48, width=96, length=9, velocity=(0.5, -0.3), initial="blob",
                          blob_center=(36.0, 20.0), blob_width=3.0, spinup=0.0)
    ds = gen_synthetic("advection", prm, 0)
    vals = ds.variables["sst"].values
    ii, jj = np.meshgrid(np.arange(48), np.arange(96), indexing="ij")

    def centroid(y):
        return np.array([(y * jj).sum(), (y * ii).sum()]) / y.sum()

    drift = centroid(vals[-1]) - centroid(vals[0])
    expected = np.array([0.5, -0.3]) * 48.0
    assert np.all(np.abs(drift - expected) <= 0.02 * np.abs(expected))


def test_still_generator_is_constant():
    ds = gen_synthetic("advdiff", SyntheticParams(kappa=0.0, velocity=(0.0, 0.0), length=6), 3)
    vals = ds.variables["sst"].values
    assert all(np.array_equal(v, vals[0]) for v in vals)


def test_generator_deterministic_and_seeded():
    a = gen_synthetic("advdiff", SyntheticParams(length=8), 7)
    b = gen_synthetic("advdiff", SyntheticParams(length=8), 7)
    c = gen_synthetic("advdiff", SyntheticParams(length=8), 8)
    assert a.variables["sst"].values.tobytes() == b.variables["sst"].values.tobytes()
    assert a.variables["sst"].values.tobytes() != c.variables["sst"].values.tobytes()


def test_forced_generator_flux_channels():
    prm = SyntheticParams(length=6, source_amplitude=0.05, flux_scale=2.0)
    ds = gen_synthetic("advdiff_forced", prm, 0)
    assert ds.has_forcing
    for k, t in enumerate(ds.times):
        np.testing.assert_allclose(ds.variables["sw"].values[k], diurnal_source(ds.grid, t, 0.05) / 2.0)
    assert all(np.all(ds.variables[c].values == 0) for c in ("lw", "lhf", "shf"))
    w = make_windows(ds, 3, 1, "train")[0]
    np.testing.assert_allclose(w.forcing[0], ds.standardized("sw")[2])


def test_unstable_params():
    with pytest.raises(UnstableParams):
        gen_synthetic("diffusion", SyntheticParams(kappa=5.0, substeps=10), 0)
    with pytest.raises(UnstableParams):
        gen_synthetic("advection", SyntheticParams(velocity=(20.0, 0.0), substeps=10), 0)
    with pytest.raises(ValidationError):
        gen_synthetic("tides", SyntheticParams(), 0)
