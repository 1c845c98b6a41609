from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oceanode.embeddings import (
    INTERACTION,
    N_CHANNELS,
    EmbeddingBuilder,
    build_embedding,
    spatial_embedding,
    standardize_orography,
    temporal_embedding,
)
from oceanode.errors import ShapeMismatch
from oceanode.grid import GridSpec


def test_temporal_at_zero():
    np.testing.assert_array_equal(temporal_embedding(0.0), [0.0, 1.0, 0.0, 1.0])


def test_temporal_at_twelve_hours():
    e = temporal_embedding(12.0)
    np.testing.assert_allclose(e, [0.0, -1.0, np.sin(np.pi / 365), np.cos(np.pi / 365)], atol=1e-15)
    assert e[2] == pytest.approx(0.00861, abs=5e-6)
    assert e[3] == pytest.approx(0.99996, abs=5e-6)


@given(st.floats(-1e5, 1e5))
def test_temporal_yearly_periodicity(t):
    np.testing.assert_allclose(temporal_embedding(t), temporal_embedding(t + 365 * 24), atol=1e-9)


def test_spatial_equator_and_shape():
    g = GridSpec(33, 64, lat0=-90.0, dlat=180.0 / 32)    # row 16 sits on the equator
    s = spatial_embedding(g)
    assert s.shape == (6, 33, 64)
    assert g.lats[16] == 0.0
    np.testing.assert_array_equal(s[0, 16], 0.0)
    np.testing.assert_array_equal(s[1, 16], 1.0)
    assert spatial_embedding(GridSpec(32, 64)).shape == (6, 32, 64)


def test_longitude_periodicity():
    g1 = GridSpec(8, 16, lon0=10.0)
    g2 = GridSpec(8, 16, lon0=370.0)
    s1, s2 = spatial_embedding(g1), spatial_embedding(g2)
    np.testing.assert_allclose(s1[2:4], s2[2:4], atol=1e-12)


def test_channel_layout_and_count():
    g = GridSpec(8, 12)
    e = build_embedding(g, 0.0)
    assert e.shape == (N_CHANNELS, 8, 12) and N_CHANNELS == 36
    # sin-temporal channels are 0 at t=0, so their interaction planes vanish
    inter = e[INTERACTION].reshape(6, 4, 8, 12)
    assert np.all(inter[:, 0] == 0) and np.all(inter[:, 2] == 0)
    np.testing.assert_array_equal(inter[:, 1], e[:6])


def test_static_channels():
    mask = np.zeros((5, 6), dtype=bool)
    g = GridSpec(5, 6, mask=mask)
    e = build_embedding(g, 3.0)
    assert np.all(e[-2] == 0)                     # all land -> zero plane
    g2 = GridSpec(5, 6)
    oro = np.arange(30.0).reshape(5, 6)
    e2 = build_embedding(g2, 3.0, oro=oro)
    assert np.all(e2[-2] == 1)
    assert e2[-1].mean() == pytest.approx(0.0, abs=1e-12) and e2[-1].std() == pytest.approx(1.0)


def test_flat_orography_is_zero():
    assert np.all(standardize_orography(np.full((4, 4), 7.0)) == 0)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        build_embedding(GridSpec(5, 6), 0.0, lsm=np.ones((5, 5)))


@given(st.floats(-1e4, 1e4))
def test_embedding_bounded_and_pure(t):
    g = GridSpec(6, 8)
    e = build_embedding(g, t)
    assert np.abs(e[:-2]).max() <= 1.0
    assert e.tobytes() == build_embedding(g, t).tobytes()


def test_batched_matches_scalar():
    b = EmbeddingBuilder(GridSpec(6, 8))
    batch = b(np.array([0.0, 7.0, 30.0]))
    for k, t in enumerate([0.0, 7.0, 30.0]):
        np.testing.assert_array_equal(batch[k], b(t))


def test_interaction_block_isolated():
    b = EmbeddingBuilder(GridSpec(6, 8))
    e = b(13.0)
    rebuilt = e.copy()
    rebuilt[INTERACTION] = 0.0
    changed = np.any(rebuilt != e, axis=(1, 2))
    assert set(np.nonzero(changed)[0]) <= set(range(INTERACTION.start, INTERACTION.stop))
