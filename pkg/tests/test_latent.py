import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sblds.errors import ValidationError
from sblds.latent import (
    SCALER_EPS,
    LatentScaler,
    LatentVolume,
    apply_scaler,
    assemble,
    decompose,
    fit_scaler,
    invert_scaler,
)


def test_assemble_shapes():
    zs = [np.full((1, 8, 8), k, np.float32) for k in range(16)]
    vol = assemble(zs)
    assert vol.dims == (1, 8, 8, 16)
    assert vol.depth == 16
    assert assemble(zs[:1]).depth == 1
    with pytest.raises(ValidationError):
        assemble([])
    with pytest.raises(ValidationError):
        assemble([np.zeros((1, 8, 8)), np.zeros((1, 8, 4))])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_assemble_decompose_inverse(c, d, h, w, seed):
    rng = np.random.default_rng(seed)
    zs = [rng.standard_normal((c, h, w)).astype(np.float32) for _ in range(d)]
    back = decompose(assemble(zs))
    assert len(back) == d
    for a, b in zip(zs, back):
        assert np.array_equal(a, b)


def test_scaler_examples():
    const = [LatentVolume(np.full((1, 2, 2, 2), 3.0))]
    s = fit_scaler(const)
    assert s.std == SCALER_EPS and s.mean == 3.0
    assert np.all(np.isfinite(apply_scaler(const[0], s).code))

    two = [LatentVolume(np.zeros((1, 2, 2, 2))), LatentVolume(np.full((1, 2, 2, 2), 2.0))]
    assert fit_scaler(two).mean == 1.0


def test_apply_scaler_standardizes():
    rng = np.random.default_rng(0)
    vols = [LatentVolume(rng.normal(3.0, 2.5, (1, 4, 8, 8))) for _ in range(5)]
    s = fit_scaler(vols)
    scaled = np.concatenate([apply_scaler(v, s).code.ravel() for v in vols])
    assert abs(scaled.mean()) <= 1e-6
    assert abs(scaled.std() - 1.0) <= 1e-3


def test_scaler_roundtrip_and_state():
    rng = np.random.default_rng(1)
    v = LatentVolume(rng.standard_normal((1, 3, 4, 4)))
    ident = LatentScaler(0.0, 1.0)
    assert np.array_equal(apply_scaler(v, ident).code, v.code)
    s = LatentScaler(0.7, 2.3)
    scaled = apply_scaler(v, s)
    assert scaled.scaler_applied and not v.scaler_applied
    with pytest.raises(ValidationError):
        apply_scaler(scaled, s)
    back = invert_scaler(scaled, s)
    assert not back.scaler_applied
    np.testing.assert_allclose(back.code, v.code, atol=1e-6)
    with pytest.raises(ValidationError):
        invert_scaler(v, s)
    assert LatentScaler.from_json(s.to_json()) == s


def test_fit_scaler_order_independent():
    rng = np.random.default_rng(2)
    vols = [LatentVolume(rng.normal(0.3, 1.7, (1, 4, 8, 8))) for _ in range(7)]
    ref = fit_scaler(vols)
    for k in range(5):
        perm = np.random.default_rng(k).permutation(len(vols))
        assert fit_scaler([vols[i] for i in perm]) == ref


def test_latent_validate():
    code = np.zeros((1, 2, 2, 2))
    code[0, 1, 1, 1] = np.inf
    with pytest.raises(ValidationError):
        LatentVolume(code).validate()
    with pytest.raises(ValidationError):
        LatentVolume(np.zeros((2, 2, 2)))
