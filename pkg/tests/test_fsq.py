import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from avtok.errors import NumericError, ValidationError
from avtok.fsq import (
    FACE_LEVELS,
    SPEECH_LEVELS,
    FsqConfig,
    code_to_index,
    fsq_bound,
    fsq_bound_grad,
    fsq_dequantize,
    fsq_forward_ste,
    fsq_preimage,
    fsq_quantize,
    index_to_code,
    round_half_away,
)

FACE = FsqConfig(FACE_LEVELS)


def test_vocab_arithmetic():
    assert FACE.implied_vocab == 1000
    assert FsqConfig(SPEECH_LEVELS).implied_vocab == 6561


@pytest.mark.parametrize("levels", [(), (1,), (4, 0)])
def test_config_rejects_bad_levels(levels):
    with pytest.raises(ValidationError):
        FsqConfig(levels)


def test_config_json_round_trip():
    assert FsqConfig.from_json(FACE.to_json()) == FACE
    assert FACE.to_json() == '{"levels": [8, 5, 5, 5]}'


def test_bound_at_zero():
    out = fsq_bound(np.zeros(4), FACE)
    assert np.all(np.abs(out) <= FACE.half_width)
    assert out[1] == 0.0


def test_bound_saturates():
    assert np.all(fsq_bound(np.full(4, 1e6), FACE) <= [3.5, 2, 2, 2])
    assert np.all(fsq_bound(np.full(4, -1e6), FACE) >= [-3.5, -2, -2, -2])


def test_bound_range_many_inputs(rng):
    z = np.concatenate([rng.normal(scale=3, size=(50_000, 4)),
                        rng.choice([-1, 1], size=(50_000, 4)) * 10.0 ** rng.uniform(0, 300, size=(50_000, 4))])
    out = fsq_bound(z, FACE)
    assert np.all(np.abs(out) <= FACE.half_width)


def test_bound_errors():
    with pytest.raises(ValidationError):
        fsq_bound(np.zeros(3), FACE)
    with pytest.raises(NumericError):
        fsq_bound(np.array([0, np.nan, 0, 0]), FACE)
    with pytest.raises(NumericError):
        fsq_quantize(np.array([np.inf, 0, 0, 0]), FACE)


def test_round_half_away():
    assert list(round_half_away([-2.5, -1.5, -0.5, 0.5, 1.5, 2.5])) == [-3, -2, -1, 1, 2, 3]


def test_quantize_examples():
    assert list(fsq_quantize(np.zeros(4), FACE)[1:]) == [2, 2, 2]
    assert list(fsq_quantize(np.full(4, 1e6), FACE)) == [7, 4, 4, 4]
    assert list(fsq_quantize(np.full(4, -1e6), FACE)) == [0, 0, 0, 0]


def test_quantize_surjective_on_grid():
    # brute-force sweep over [-4, 4]^4
    g = np.linspace(-4, 4, 41)
    mesh = np.stack(np.meshgrid(g, g, g, g, indexing="ij"), -1).reshape(-1, 4)
    codes = fsq_quantize(mesh, FACE)
    assert len({tuple(c) for c in codes}) == 1000


def test_dequantize_examples():
    assert np.allclose(fsq_dequantize([0, 0, 0, 0], FACE), -1)
    assert np.allclose(fsq_dequantize([7, 4, 4, 4], FACE), 1)
    assert np.allclose(fsq_dequantize([4, 2, 2, 2], FACE), [(4 - 3.5) / 3.5, 0, 0, 0])
    with pytest.raises(ValidationError):
        fsq_dequantize([8, 0, 0, 0], FACE)


def test_idempotent_through_preimage():
    codes = np.array(list(itertools.product(*[range(l) for l in FACE_LEVELS])))
    z = fsq_preimage(codes, FACE)
    assert np.all(np.isfinite(z))
    assert np.array_equal(fsq_quantize(z, FACE), codes)


def _oracle_index(code, levels):
    # independent little-endian evaluation by Horner's rule from the top digit
    idx = 0
    for c, l in zip(reversed(code), reversed(levels)):
        idx = idx * l + c
    return idx


def test_index_examples():
    assert code_to_index([0, 0, 0, 0], FACE) == 0
    assert code_to_index([1, 0, 0, 0], FACE) == 1
    assert code_to_index([7, 4, 4, 4], FACE) == 7 + 4 * 8 + 4 * 40 + 4 * 200 == 999
    assert list(index_to_code(0, FACE)) == [0, 0, 0, 0]
    assert list(index_to_code(999, FACE)) == [7, 4, 4, 4]


def test_index_matches_enumeration_oracle():
    # 0 is least significant, so iterating with dimension 0 fastest counts up
    codes = [tuple(reversed(c)) for c in itertools.product(*[range(l) for l in reversed(FACE_LEVELS)])]
    for expected, code in enumerate(codes):
        assert _oracle_index(code, FACE_LEVELS) == expected
    assert np.array_equal(code_to_index(np.array(codes), FACE), np.arange(1000))


def test_exhaustive_bijection():
    ids = np.arange(1000)
    assert np.array_equal(code_to_index(index_to_code(ids, FACE), FACE), ids)


def test_index_errors():
    with pytest.raises(ValidationError):
        index_to_code(1000, FACE)
    with pytest.raises(ValidationError):
        index_to_code(-1, FACE)
    with pytest.raises(ValidationError):
        code_to_index([0, 5, 0, 0], FACE)


def test_ste_forward_definition():
    z = np.zeros(4)
    values, _ = fsq_forward_ste(z, FACE)
    assert np.array_equal(values, fsq_dequantize(fsq_quantize(z, FACE), FACE))


def test_ste_gradient_matches_finite_differences(rng):
    # rounding is transparent: the backward derivative is d/dz [bound(z) / h]
    for z in rng.normal(size=(10, 4)):
        _, grad = fsq_forward_ste(z, FACE)
        eps = 1e-6
        num = (fsq_bound(z + eps, FACE) - fsq_bound(z - eps, FACE)) / (2 * eps) / FACE.half_width
        assert np.allclose(grad, num, atol=1e-6)
        assert np.allclose(grad, fsq_bound_grad(z, FACE) / FACE.half_width)


def test_ste_gradient_vanishes_when_saturated():
    _, grad = fsq_forward_ste(np.full(4, 50.0), FACE)
    assert np.all(grad < 1e-12)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (4,), elements=st.floats(-1e6, 1e6)))
def test_quantize_deterministic_and_in_range(z):
    a, b = fsq_quantize(z, FACE), fsq_quantize(z.copy(), FACE)
    assert np.array_equal(a, b)
    assert np.all((a >= 0) & (a < np.array(FACE_LEVELS)))
