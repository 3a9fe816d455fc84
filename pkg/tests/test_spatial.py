import math

import numpy as np
import pytest

from asaug.grids import IGNORE, argmax
from asaug.spatial import (
    IDENTITY, Interpolation, SpatialTransform, affine_matrix, apply_to_image, apply_to_mask,
    apply_to_probmap, invert, photometric_jitter, validity_of,
)

from conftest import random_probmap


def random_transform(r, max_rot=180.0, max_shift=0.4):
    return SpatialTransform(r.uniform(-max_rot, max_rot), r.uniform(-max_shift, max_shift),
                            r.uniform(-max_shift, max_shift))


def test_transform_field_checks():
    with pytest.raises(ValueError):
        SpatialTransform(0.0, 1.5, 0.0)
    with pytest.raises(ValueError):
        SpatialTransform(float("nan"))
    assert SpatialTransform(725.0).rotation_deg == 5.0
    assert SpatialTransform(-370.0).rotation_deg == -10.0


def test_identity_fixed_point(rng):
    img = rng.random((5, 7, 3))
    out, valid = apply_to_image(img, IDENTITY)
    assert np.array_equal(out, img) and valid.all()
    mask = rng.integers(0, 4, size=(5, 7))
    out_m, valid_m = apply_to_mask(mask, IDENTITY)
    assert np.array_equal(out_m, mask) and valid_m.all()
    p = random_probmap(rng, 3, 5, 7)
    out_p, valid_p = apply_to_probmap(p, IDENTITY)
    assert np.array_equal(out_p, p) and valid_p.all()


def test_shift_right_one_pixel_on_2x2():
    img = np.array([[[0.1] * 3, [0.2] * 3], [[0.3] * 3, [0.4] * 3]])
    t = SpatialTransform(0.0, 0.5, 0.0)
    out, valid = apply_to_image(img, t)
    assert not valid[:, 0].any() and valid[:, 1].all()
    assert np.all(out[:, 0] == 0.0)
    assert np.array_equal(out[:, 1], img[:, 0])
    m, mvalid = apply_to_mask(np.array([[0, 1], [2, 3]]), t)
    assert m[:, 0].tolist() == [IGNORE, IGNORE] and m[:, 1].tolist() == [0, 2]
    assert np.array_equal(mvalid, valid)


def _quarter_turn_oracle(grid):
    # output (i, j) samples source at the inverse map of a 90 degree
    # counterclockwise turn about the centre (0.5, 0.5) of a 2x2 grid:
    # (x, y) -> (x_src, y_src) = (1 - y, x)
    out = np.empty_like(grid)
    for i in range(2):
        for j in range(2):
            x_src, y_src = 1 - i, j
            out[i, j] = grid[y_src, x_src]
    return out


def test_quarter_turn_mask_matches_hand_oracle():
    mask = np.array([[0, 1], [2, 3]])
    out, valid = apply_to_mask(mask, SpatialTransform(90.0))
    assert valid.all()
    assert out.tolist() == [[1, 3], [0, 2]]
    assert np.array_equal(out, _quarter_turn_oracle(mask))


def test_quarter_turn_image_nearest_is_permutation(rng):
    img = rng.random((2, 2, 3))
    out, valid = apply_to_image(img, SpatialTransform(90.0), Interpolation.NEAREST)
    assert valid.all()
    assert np.array_equal(out, _quarter_turn_oracle(img))
    bil, _ = apply_to_image(img, SpatialTransform(90.0))
    assert np.array_equal(bil, out)


def test_invert_examples():
    assert invert(IDENTITY) == IDENTITY
    assert invert(SpatialTransform(0.0, 0.25, 0.0)) == SpatialTransform(0.0, -0.25, 0.0)


@pytest.mark.parametrize("shape", [(8, 8), (6, 10)])
def test_invert_composes_to_identity(rng, shape):
    h, w = shape
    for _ in range(100):
        t = random_transform(rng)
        a = np.vstack([affine_matrix(t, h, w), [0, 0, 1]])
        b = np.vstack([affine_matrix(invert(t, shape), h, w), [0, 0, 1]])
        assert np.max(np.abs(b @ a - np.eye(3))) <= 1e-9


def test_validity_examples():
    assert validity_of(IDENTITY, 4, 4).all()
    assert not validity_of(SpatialTransform(0.0, 1.0, 0.0), 4, 4).any()
    valid = validity_of(SpatialTransform(0.0, 0.5, 0.0), 4, 4)
    assert not valid[:, :2].any() and valid[:, 2:].all()


def test_integer_translation_round_trip(rng):
    h, w = 7, 9
    img = rng.random((h, w, 3))
    mask = rng.integers(0, 5, size=(h, w))
    p = random_probmap(rng, 4, h, w)
    for _ in range(50):
        kx, ky = int(rng.integers(-4, 5)), int(rng.integers(-3, 4))
        t = SpatialTransform(0.0, kx / w, ky / h)
        back = SpatialTransform(0.0, -kx / w, -ky / h)
        moved, v1 = apply_to_image(img, t, Interpolation.NEAREST)
        restored, v2 = apply_to_image(moved, back, Interpolation.NEAREST)
        keep = v2 & apply_to_mask(v1.astype(np.int64), back)[0].astype(bool)
        assert np.array_equal(restored[keep], img[keep])
        # bilinear sampling at integer offsets is exact as well
        bil, _ = apply_to_image(apply_to_image(img, t)[0], back)
        assert np.array_equal(bil[keep], img[keep])
        m2 = apply_to_mask(apply_to_mask(mask, t)[0], back)[0]
        assert np.array_equal(m2[keep], mask[keep])
        p2 = apply_to_probmap(apply_to_probmap(p, t)[0], back)[0]
        assert np.array_equal(p2[:, keep], p[:, keep])


def test_argmax_commutes_with_probmap_transform(rng):
    for _ in range(200):
        c, h, w = int(rng.integers(2, 6)), int(rng.integers(2, 10)), int(rng.integers(2, 10))
        p = random_probmap(rng, c, h, w)
        t = random_transform(rng)
        moved, valid = apply_to_probmap(p, t)
        mask_moved, mvalid = apply_to_mask(argmax(p), t)
        assert np.array_equal(valid, mvalid)
        assert np.array_equal(argmax(moved)[valid], mask_moved[valid])


def test_probmap_simplex_preserved_exactly(rng):
    for _ in range(50):
        p = random_probmap(rng, 5, 9, 9)
        moved, valid = apply_to_probmap(p, random_transform(rng))
        # valid output vectors are verbatim copies of source vectors
        src_sums = set(p.sum(axis=0).ravel().tolist())
        assert set(moved.sum(axis=0)[valid].tolist()) <= src_sums
        assert np.all(np.abs(moved.sum(axis=0)[valid] - 1.0) <= 1e-12)
        assert np.all(moved[:, ~valid] == 0.0)


def test_all_validity_masks_agree(rng):
    img = rng.random((6, 8, 3))
    mask = rng.integers(0, 3, size=(6, 8))
    p = random_probmap(rng, 3, 6, 8)
    for _ in range(50):
        t = random_transform(rng, max_shift=0.9)
        expected = validity_of(t, 6, 8)
        assert np.array_equal(apply_to_image(img, t)[1], expected)
        assert np.array_equal(apply_to_image(img, t, "nearest")[1], expected)
        assert np.array_equal(apply_to_mask(mask, t)[1], expected)
        assert np.array_equal(apply_to_probmap(p, t)[1], expected)


def test_ignore_propagates_through_mask_transform():
    mask = np.array([[IGNORE, 1], [2, 3]])
    out, valid = apply_to_mask(mask, SpatialTransform(90.0))
    assert out[1, 0] == IGNORE and valid.all()


def test_bilinear_values_stay_in_range(rng):
    img = rng.random((9, 9, 3))
    for _ in range(20):
        out, valid = apply_to_image(img, random_transform(rng))
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.all(out[~valid] == 0.0)


def test_half_turn_reverses_both_axes(rng):
    img = rng.random((4, 6, 3))
    out, valid = apply_to_image(img, SpatialTransform(180.0))
    assert valid.all() and np.array_equal(out, img[::-1, ::-1])


def test_photometric_jitter():
    img = np.full((3, 3, 3), 0.5)
    assert np.array_equal(photometric_jitter(img, 0.0, 1.0), img)
    assert np.allclose(photometric_jitter(img, 0.2, 1.0), 0.7)
    with pytest.raises(ValueError):
        photometric_jitter(img, 0.0, 2.0)
    with pytest.raises(ValueError):
        photometric_jitter(img, 0.6, 1.0)


def test_invert_rejects_unrepresentable():
    with pytest.raises(ValueError):
        invert(SpatialTransform(45.0, 1.0, 1.0))


def test_rotation_of_square_canvas_keeps_centre_valid():
    valid = validity_of(SpatialTransform(45.0), 9, 9)
    assert valid[4, 4] and not valid[0, 0]
    assert math.isclose(valid.mean(), 1.0, abs_tol=0.25)
