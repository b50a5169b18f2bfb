import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from uada.augment import (
    ALL_KINDS, MAX_LEVEL, AugmentError, ImageBatch, OpInstance, OpKind, ParamLocator, ParamSpec,
    Pipeline, Registry, adaptable_params, apply_op, apply_pipeline, level_to_physical,
    param_specs, sample_pipeline,
)

from conftest import random_batch

H = W = 16


def op(kind, *levels):
    return OpInstance.make(kind, levels, H, W)


def all_ops():
    """Every (kind, level tuple) with direction and centers fixed to a few values."""
    for kind in ALL_KINDS:
        specs = param_specs(kind, H, W)
        for level in range(MAX_LEVEL + 1):
            rest = [[s.min_level, s.max_level, (s.min_level + s.max_level) // 2] for s in specs[1:]]
            for tail in ([r[i] for r in rest] for i in range(3)):
                yield op(kind, level, *tail)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def test_single_kind_registry():
    p = sample_pipeline(np.random.default_rng(7), Registry((OpKind.ROTATE,), H, W), 1)
    assert len(p) == 1 and p.ops[0].kind is OpKind.ROTATE
    assert 0 <= p.ops[0].levels[0] <= 9


def test_same_seed_same_pipeline():
    reg = Registry.default(H, W)
    a = [sample_pipeline(np.random.default_rng(3), reg, 2) for _ in range(2)]
    assert a[0] == a[1]


def test_without_replacement_when_possible():
    reg = Registry.default(H, W)
    rng = np.random.default_rng(0)
    for _ in range(500):
        kinds = [o.kind for o in sample_pipeline(rng, reg, 10).ops]
        assert len(set(kinds)) == 10


def test_with_replacement_beyond_registry():
    p = sample_pipeline(np.random.default_rng(0), Registry((OpKind.ROTATE, OpKind.CUTOUT), H, W), 5)
    assert len(p) == 5


def test_empty_registry_and_bad_n_ops():
    with pytest.raises(AugmentError):
        sample_pipeline(np.random.default_rng(0), Registry((), H, W), 1)
    with pytest.raises(AugmentError):
        sample_pipeline(np.random.default_rng(0), Registry.default(H, W), 0)


def test_kind_frequencies_uniform():
    # n_ops=2 out of 10 kinds: each kind appears in a draw with probability 1/5
    reg = Registry.default(H, W)
    rng = np.random.default_rng(2024)
    n = 10**6
    counts = dict.fromkeys(ALL_KINDS, 0)
    for _ in range(n):
        for o in sample_pipeline(rng, reg, 2).ops:
            counts[o.kind] += 1
    expected = n * 2 / 10
    for kind, c in counts.items():
        assert abs(c / expected - 1) < 0.01, (kind, c)
    chi2 = sum((c - expected) ** 2 / expected for c in counts.values())
    assert chi2 < 27.88  # 99.9% quantile, 9 degrees of freedom


def test_level_frequencies_uniform():
    reg = Registry((OpKind.ROTATE,), H, W)
    rng = np.random.default_rng(5)
    levels = np.array([sample_pipeline(rng, reg, 1).ops[0].levels[0] for _ in range(50000)])
    counts = np.bincount(levels, minlength=10)
    chi2 = ((counts - 5000) ** 2 / 5000).sum()
    assert chi2 < 27.88


# ---------------------------------------------------------------------------
# lattices and magnitudes
# ---------------------------------------------------------------------------

def test_rotate_table():
    assert level_to_physical(OpKind.ROTATE, 0, 0) == 0.0
    assert level_to_physical(OpKind.ROTATE, 0, 9) == 30.0
    for level in range(10):
        assert math.isclose(level_to_physical(OpKind.ROTATE, 0, level), level * 30 / 9)


def test_posterize_and_solarize_tables():
    assert level_to_physical(OpKind.POSTERIZE, 0, 0) == 8.0
    assert [level_to_physical(OpKind.POSTERIZE, 0, v) for v in range(10)] == [
        8 - math.floor(v * 4 / 9) for v in range(10)]
    assert level_to_physical(OpKind.SOLARIZE, 0, 0) == 1.0
    assert level_to_physical(OpKind.SOLARIZE, 0, 9) == 0.0


def test_translate_and_cutout_tables():
    for v in range(10):
        assert level_to_physical(OpKind.TRANSLATE_X, 0, v, (H, 20)) == math.floor(v * 0.3 * 20 / 9 + 0.5)
        assert level_to_physical(OpKind.TRANSLATE_Y, 0, v, (12, W)) == math.floor(v * 0.3 * 12 / 9 + 0.5)
        assert level_to_physical(OpKind.CUTOUT, 0, v, (H, W)) == math.floor(v * 8 / 9 + 0.5)
    with pytest.raises(AugmentError):
        level_to_physical(OpKind.TRANSLATE_X, 0, 3)


def test_factor_tables():
    for kind in (OpKind.BRIGHTNESS, OpKind.CONTRAST):
        assert level_to_physical(kind, 0, 0) == 1.0
        assert math.isclose(level_to_physical(kind, 0, 9), 1.9)
    assert math.isclose(level_to_physical(OpKind.SHEAR_X, 0, 9), 0.3)
    assert level_to_physical(OpKind.ROTATE, 1, 0) == -1.0
    assert level_to_physical(OpKind.ROTATE, 1, 1) == 1.0


def test_out_of_range_level():
    with pytest.raises(AugmentError):
        level_to_physical(OpKind.ROTATE, 0, 10)
    with pytest.raises(AugmentError):
        level_to_physical(OpKind.ROTATE, 0, -1)
    with pytest.raises(AugmentError):
        level_to_physical(OpKind.SOLARIZE, 1, 0)
    with pytest.raises(AugmentError):
        op(OpKind.ROTATE, 12, 0)


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_magnitude_maps_monotone(kind):
    values = [level_to_physical(kind, 0, v, (H, W)) for v in range(10)]
    diffs = np.diff(values)
    if kind in (OpKind.SOLARIZE, OpKind.POSTERIZE):
        # stronger effect means a lower threshold or fewer bits
        assert (diffs <= 0).all()
    else:
        assert (diffs >= 0).all()


@pytest.mark.parametrize("kind", ALL_KINDS)
def test_identity_level_maps_to_identity_magnitude(kind):
    spec = param_specs(kind, H, W)[0]
    if spec.identity_level is None:
        assert kind is OpKind.SOLARIZE
        return
    value = level_to_physical(kind, 0, spec.identity_level, (H, W))
    identity = {OpKind.BRIGHTNESS: 1.0, OpKind.CONTRAST: 1.0, OpKind.POSTERIZE: 8.0}.get(kind, 0.0)
    assert value == identity


def test_param_spec_validation():
    with pytest.raises(AugmentError):
        ParamSpec("x", 3, 2)
    with pytest.raises(AugmentError):
        ParamSpec("x", 0, 2, identity_level=5)
    s = ParamSpec("x", 0, 9)
    assert s.clamp(12) == 9 and s.clamp(-3) == 0 and s.n_levels == 10


def test_cutout_declares_three_specs():
    names = [s.name for s in param_specs(OpKind.CUTOUT, 12, 20)]
    assert names == ["size", "center_x", "center_y"]
    assert param_specs(OpKind.CUTOUT, 12, 20)[1].max_level == 19
    assert param_specs(OpKind.CUTOUT, 12, 20)[2].max_level == 11


def test_opkind_parse():
    assert OpKind.parse("translatex") is OpKind.TRANSLATE_X
    with pytest.raises(AugmentError):
        OpKind.parse("Invert")


def test_image_batch_validation():
    with pytest.raises(AugmentError):
        ImageBatch(np.zeros((2, 16, 16)), np.zeros(2, int))
    with pytest.raises(AugmentError):
        ImageBatch(np.zeros((0, 1, 16, 16)), np.zeros(0, int))
    with pytest.raises(AugmentError):
        ImageBatch(np.zeros((2, 1, 16, 16)), np.zeros(3, int))


# ---------------------------------------------------------------------------
# applying ops
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind", [k for k in ALL_KINDS if param_specs(k, H, W)[0].identity_level is not None])
def test_identity_is_bit_exact(kind, rng):
    b = random_batch(rng, n=3, c=3)
    specs = param_specs(kind, H, W)
    for tail in ([s.min_level for s in specs[1:]], [s.max_level for s in specs[1:]]):
        out = apply_op(op(kind, specs[0].identity_level, *tail), b)
        assert np.array_equal(out.data, b.data) and out.data.dtype == b.data.dtype


def test_brightness_closed_form():
    b = ImageBatch(np.full((2, 1, H, W), 0.5, np.float32), np.array([0, 1]))
    out = apply_op(op(OpKind.BRIGHTNESS, 9, 1), b).data
    assert np.all(out == np.float32(min(0.5 * 1.9, 1.0)))
    out = apply_op(op(OpKind.BRIGHTNESS, 9, 0), b).data
    assert np.allclose(out, 0.5 * 0.1)


def test_contrast_closed_form():
    data = np.zeros((1, 1, 2, 2), np.float32)
    data[0, 0] = [[0.2, 0.4], [0.6, 0.8]]
    out = apply_op(OpInstance.make(OpKind.CONTRAST, (5, 1), 2, 2), ImageBatch(data, np.array([0]))).data
    factor = 1 + 5 * 0.1
    assert np.allclose(out[0, 0], np.clip(0.5 + factor * (data[0, 0] - 0.5), 0, 1), atol=1e-6)


def test_solarize_closed_form(rng):
    b = random_batch(rng)
    out = apply_op(op(OpKind.SOLARIZE, 3), b).data
    thr = np.float32(1 - 3 / 9)
    assert np.array_equal(out, np.where(b.data >= thr, 1 - b.data, b.data))


def test_posterize_closed_form():
    raw = np.arange(256, dtype=np.uint8).reshape(1, 1, 16, 16)
    b = ImageBatch(raw.astype(np.float32) / np.float32(255), np.array([0]))
    out = apply_op(op(OpKind.POSTERIZE, 9), b).data
    assert np.allclose(out * 255, (raw & 0xF0).astype(np.float32), atol=1e-4)


def test_cutout_zeroes_square():
    b = ImageBatch(np.ones((1, 1, H, W), np.float32), np.array([0]))
    out = apply_op(op(OpKind.CUTOUT, 9, 4, 10), b).data[0, 0]
    side = 8
    expected = np.ones((H, W), np.float32)
    expected[10 - side // 2:10 - side // 2 + side, 4 - side // 2:4 - side // 2 + side] = 0
    assert np.array_equal(out, expected)
    corner = apply_op(op(OpKind.CUTOUT, 9, 0, 0), b).data[0, 0]
    assert corner[:4, :4].sum() == 0 and corner.sum() == H * W - 16


def _nearest_affine_oracle(img, m):
    """Scalar reference for inverse-mapped nearest-neighbour warps."""
    h, w = img.shape
    cy, cx = (h - 1) / 2, (w - 1) / 2
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            sx = math.floor(m[0][0] * (x - cx) + m[0][1] * (y - cy) + cx + 0.5)
            sy = math.floor(m[1][0] * (x - cx) + m[1][1] * (y - cy) + cy + 0.5)
            if 0 <= sx < w and 0 <= sy < h:
                out[y, x] = img[sy, sx]
    return out


@pytest.mark.parametrize("level,direction", [(3, 1), (9, 0), (5, 1)])
def test_rotate_matches_scalar_oracle(level, direction, rng):
    img = rng.random((H, W)).astype(np.float32)
    b = ImageBatch(img[None, None], np.array([0]))
    theta = math.radians((1 if direction else -1) * level * 30 / 9)
    c, s = math.cos(theta), math.sin(theta)
    expected = _nearest_affine_oracle(img, [[c, s], [-s, c]])
    assert np.array_equal(apply_op(op(OpKind.ROTATE, level, direction), b).data[0, 0], expected)


def test_shear_matches_scalar_oracle(rng):
    img = rng.random((H, W)).astype(np.float32)
    b = ImageBatch(img[None, None], np.array([0]))
    s = 7 * 0.3 / 9
    assert np.array_equal(apply_op(op(OpKind.SHEAR_X, 7, 1), b).data[0, 0],
                          _nearest_affine_oracle(img, [[1, -s], [0, 1]]))
    assert np.array_equal(apply_op(op(OpKind.SHEAR_Y, 7, 0), b).data[0, 0],
                          _nearest_affine_oracle(img, [[1, 0], [s, 1]]))


def test_translate_shifts_content():
    img = np.zeros((1, 1, H, W), np.float32)
    img[0, 0, 7, 7] = 1
    b = ImageBatch(img, np.array([0]))
    k = int(level_to_physical(OpKind.TRANSLATE_X, 0, 5, (H, W)))
    out = apply_op(op(OpKind.TRANSLATE_X, 5, 1), b).data[0, 0]
    assert out[7, 7 + k] == 1 and out.sum() == 1
    out = apply_op(op(OpKind.TRANSLATE_Y, 5, 0), b).data[0, 0]
    assert out[7 - k, 7] == 1 and out.sum() == 1


def test_translate_round_trip_on_interior():
    rng = np.random.default_rng(9)
    img = np.zeros((2, 3, H, W), np.float32)
    img[:, :, 5:11, 5:11] = rng.random((2, 3, 6, 6))
    b = ImageBatch(img, np.array([0, 1]))
    p = Pipeline((op(OpKind.TRANSLATE_X, 4, 1), op(OpKind.TRANSLATE_X, 4, 0)))
    k = int(level_to_physical(OpKind.TRANSLATE_X, 0, 4, (H, W)))
    out = apply_pipeline(p, b).data
    assert np.array_equal(out[..., : W - k], img[..., : W - k])


def test_pipeline_is_composition(rng):
    b = random_batch(rng, n=3, c=3)
    ops = (op(OpKind.ROTATE, 4, 1), op(OpKind.CONTRAST, 7, 0), op(OpKind.CUTOUT, 5, 3, 12))
    expected = b
    for o in ops:
        expected = apply_op(o, expected)
    assert np.array_equal(apply_pipeline(Pipeline(ops), b).data, expected.data)


def test_identity_pipeline_and_absorption(rng):
    b = random_batch(rng)
    ident = Pipeline((op(OpKind.ROTATE, 0, 1), op(OpKind.CUTOUT, 0, 3, 3), op(OpKind.POSTERIZE, 0)))
    assert np.array_equal(apply_pipeline(ident, b).data, b.data)
    cut = op(OpKind.CUTOUT, 6, 8, 8)
    assert np.array_equal(apply_pipeline(Pipeline((op(OpKind.ROTATE, 0, 0), cut)), b).data,
                          apply_op(cut, b).data)


def test_ops_are_pure_range_preserving_and_keep_labels(rng):
    b = random_batch(rng, n=3, c=3)
    before = b.data.copy()
    for o in all_ops():
        out = apply_op(o, b)
        assert out.data.min() >= 0 and out.data.max() <= 1, o
        assert out.data.dtype == b.data.dtype and out.data.shape == b.data.shape
        assert out.labels is b.labels
        assert np.array_equal(apply_op(o, b).data, out.data)
    assert np.array_equal(b.data, before)


@given(
    st.sampled_from(ALL_KINDS), st.integers(0, 9), st.integers(0, 1),
    st.integers(0, 2**32 - 1), st.sampled_from([np.float32, np.float64]),
)
def test_range_property(kind, level, direction, seed, dtype):
    r = np.random.default_rng(seed)
    data = r.random((2, 2, 12, 10)).astype(dtype)
    data[0, 0, 0, :3] = [0.0, 1.0, 0.5]
    b = ImageBatch(data, np.array([0, 1]))
    specs = param_specs(kind, 12, 10)
    tail = [int(r.integers(s.min_level, s.max_level + 1)) if s.name != "direction" else direction
            for s in specs[1:]]
    out = apply_op(OpInstance.make(kind, (level, *tail), 12, 10), b).data
    assert out.min() >= 0 and out.max() <= 1 and out.dtype == dtype


# ---------------------------------------------------------------------------
# adaptable parameters
# ---------------------------------------------------------------------------

def test_adaptable_params_examples():
    assert adaptable_params(Pipeline((op(OpKind.ROTATE, 3, 1),))) == [ParamLocator(0, 0)]
    p = Pipeline((op(OpKind.ROTATE, 3, 1), op(OpKind.CUTOUT, 2, 4, 5)))
    assert adaptable_params(p) == [ParamLocator(0, 0), ParamLocator(1, 0), ParamLocator(1, 1),
                                   ParamLocator(1, 2)]


def test_no_adaptable_params():
    frozen = (ParamSpec("m", 0, 9, adaptable=False),)
    p = Pipeline((OpInstance(OpKind.ROTATE, (3,), frozen),))
    assert adaptable_params(p) == []


def test_pipeline_edit_and_hash():
    p = Pipeline((op(OpKind.ROTATE, 3, 1), op(OpKind.SOLARIZE, 2)))
    q = p.with_level(ParamLocator(1, 0), 5)
    assert q.level(ParamLocator(1, 0)) == 5 and p.level(ParamLocator(1, 0)) == 2
    assert q != p and q.with_level(ParamLocator(1, 0), 2) == p
    assert hash(q.with_level(ParamLocator(1, 0), 2)) == hash(p)
    assert "Rotate(magnitude=3,direction=1)" in p.describe()
    with pytest.raises(AugmentError):
        Pipeline(())
