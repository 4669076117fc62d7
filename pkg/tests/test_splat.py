import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rtsplat import autodiff as ad
from rtsplat.autodiff import value
from rtsplat.evaluator import PositionBuffer
from rtsplat.shading import ShadedLayer
from rtsplat.splat import (
    Bucket,
    assign_layers,
    composite_background,
    composite_over,
    kernel_normalizer,
    splat_layer_single,
    splat_multilayer,
    splat_weight,
)

# direct 3x3 summation of exp(-d^2 / (2 sigma^2)) with sigma = 0.5 around a centred splat
W_CENTRED = 1.0 + 4.0 * np.exp(-2.0) + 4.0 * np.exp(-4.0)

coord = st.floats(2.0, 12.0, allow_nan=False)


def buffers(valid, rgba, xy=None, depth=None):
    """Colour and position buffers; splats sit on their pixel centres unless ``xy`` is given."""
    valid = np.asarray(valid, bool)
    K, H, W = valid.shape
    if xy is None:
        ys, xs = np.mgrid[0:H, 0:W].astype(float)
        xy = np.broadcast_to(np.stack([xs, ys], -1), (K, H, W, 2))
    if depth is None:
        depth = np.broadcast_to(np.arange(1.0, K + 1).reshape(K, 1, 1) / (K + 1), (K, H, W))
    rgba = ad.where(valid[..., None], rgba, 0.0)
    screen = ad.concatenate([xy, np.asarray(depth)[..., None]], axis=-1)
    return ShadedLayer(valid, rgba), PositionBuffer(valid, screen)


# ---------------------------------------------------------------- kernel


def test_normalizer_for_centred_splat():
    assert abs(float(kernel_normalizer(np.array([5.0, 5.0]))) - 1.6146037) <= 1e-6
    assert np.isclose(float(kernel_normalizer(np.array([5.0, 5.0]))), W_CENTRED, rtol=1e-15)


def test_centre_and_side_weights():
    p = np.array([5.0, 5.0])
    assert abs(float(splat_weight(p, [5, 5])) - 0.650315) <= 1e-6
    assert abs(float(splat_weight(p, [6, 5])) - 0.088010) <= 1e-6
    assert np.isclose(float(splat_weight(p, [6, 5])), 1.05 / W_CENTRED * np.exp(-2.0), rtol=1e-15)


def test_weight_outside_support_is_zero():
    p = np.array([5.2, 4.9])
    assert float(splat_weight(p, [7, 5])) == 0.0
    assert float(splat_weight(p, [5, 3])) == 0.0


@given(coord, coord)
def test_weights_sum_to_one_point_oh_five(x, y):
    p = np.array([x, y])
    a = np.floor(p + 0.5)
    total = sum(float(splat_weight(p, a + [dx, dy])) for dy in (-1, 0, 1) for dx in (-1, 0, 1))
    assert abs(total - 1.05) <= 1e-12
    assert total > 1.0


@given(coord, coord, st.integers(-1, 1), st.integers(-1, 1))
def test_weight_positive_inside_support(x, y, dx, dy):
    p = np.array([x, y])
    assert float(splat_weight(p, np.floor(p + 0.5) + [dx, dy])) > 0.0


def test_weight_gradient_check():
    q = np.array([6.0, 5.0])
    anchor = np.array([5.0, 5.0])
    f = lambda p: splat_weight(p, q, anchor)
    assert ad.check_gradient(f, np.array([5.2, 4.9]), h=1e-6) < 1e-6


# ---------------------------------------------------------------- single layer


def test_isolated_splat_alpha():
    valid = np.zeros((1, 7, 7), bool)
    valid[0, 3, 3] = True
    c, p = buffers(valid, np.ones(4))
    out = value(splat_layer_single(c, p))
    assert abs(out[3, 3, 3] - 0.650315) <= 1e-6
    assert np.isclose(out[3, 4, 3], 1.05 / W_CENTRED * np.exp(-2.0))
    assert np.isclose(out[4, 4, 3], 1.05 / W_CENTRED * np.exp(-4.0))
    assert out[3, 5, 3] == 0.0


def test_uniform_interior_reproduces_colour():
    valid = np.ones((1, 9, 9), bool)
    colour = np.array([0.2, 0.4, 0.6, 1.0])
    c, p = buffers(valid, colour)
    out = value(splat_layer_single(c, p))
    assert np.abs(out[1:-1, 1:-1] - colour).max() <= 1e-12


def test_all_invalid_gives_zero_image():
    c, p = buffers(np.zeros((1, 5, 6), bool), np.ones(4))
    assert np.all(value(splat_layer_single(c, p)) == 0.0)
    c2, p2 = buffers(np.zeros((2, 5, 6), bool), np.ones(4))
    assert np.all(value(splat_multilayer(c2, p2)) == 0.0)


def test_single_layer_rejects_multiple_layers():
    c, p = buffers(np.ones((2, 3, 3), bool), np.ones(4))
    with pytest.raises(ValueError):
        splat_layer_single(c, p)


def test_interior_fidelity_with_rasterized_image():
    """Static opaque scene, splats on pixel centres: interior equals the shaded image."""
    rng = np.random.default_rng(0)
    H = W = 24
    valid = np.zeros((1, H, W), bool)
    valid[0, 4:20, 5:18] = True
    # smooth shading so interior pixels differ from each other
    ys, xs = np.mgrid[0:H, 0:W]
    rgb = np.stack([xs / W, ys / H, np.full((H, W), 0.5)], -1)
    rgba = np.concatenate([rgb, np.ones((H, W, 1))], -1)[None]
    c, p = buffers(valid, rgba)
    out = value(splat_layer_single(c, p))
    # not exactly equal: a smooth colour field is averaged by the kernel
    inner = (slice(6, 18), slice(7, 16))
    assert np.abs(out[inner] - rgba[0][inner]).max() < 0.02
    # but a piecewise-constant one is reproduced exactly
    flat = np.where(valid[0][..., None], rng.uniform(size=4) * [1, 1, 1, 0] + [0, 0, 0, 1], 0.0)[None]
    c, p = buffers(valid, flat)
    out = value(splat_layer_single(c, p))
    assert np.abs(out[inner] - flat[0][inner]).max() <= 1e-6


# ---------------------------------------------------------------- layer assignment


def test_assign_layers_pairing_rule():
    got = assign_layers(np.array([1.0, 3.0]), np.array([1.01, 2.9]), np.array([True, True]), np.array([True, True]))
    assert got.tolist() == [Bucket.CENTER, Bucket.BACK]


def test_assign_layers_occluder_edge():
    got = assign_layers(np.array([0.5, 1.0]), np.array([1.0, 0.0]), np.array([True, True]), np.array([True, False]))
    assert got.tolist() == [Bucket.FRONT, Bucket.CENTER]


def test_assign_layers_single_layer_all_centre():
    rng = np.random.default_rng(1)
    pd, qd = rng.uniform(size=(1, 20)), rng.uniform(size=(1, 20))
    pv, qv = rng.uniform(size=(1, 20)) < 0.8, rng.uniform(size=(1, 20)) < 0.8
    got = assign_layers(pd, qd, pv, qv)
    assert np.all(got[pv] == Bucket.CENTER) and np.all(got[~pv] == Bucket.NONE)


def test_assign_layers_without_neighbours():
    got = assign_layers(np.array([0.2, 0.6]), np.zeros(2), np.array([True, True]), np.array([False, False]))
    assert got.tolist() == [Bucket.CENTER, Bucket.CENTER]


def test_assign_layers_tie_goes_to_nearer_layer():
    got = assign_layers(np.array([0.4, 0.6, 0.9]), np.array([0.5, 0.95, 0.0]), np.ones(3, bool), np.array([True, True, False]))
    assert got.tolist() == [Bucket.CENTER, Bucket.BACK, Bucket.BACK]


@given(arrays(np.float64, (3, 4), elements=st.floats(0, 1)), arrays(np.float64, (3, 4), elements=st.floats(0, 1)), arrays(bool, (3, 4)), arrays(bool, (3, 4)))
def test_assign_layers_structure(pd, qd, pv, qv):
    pd, qd = np.sort(pd, axis=0), np.sort(qd, axis=0)
    got = assign_layers(pd, qd, pv, qv)
    assert np.all((got == Bucket.NONE) == ~pv)
    # at most one centre per pixel, and every front layer lies before it
    centre = got == Bucket.CENTER
    assert np.all(centre.sum(0) <= np.where(qv.any(0), 1, 3))
    for col in range(4):
        c = np.flatnonzero(centre[:, col])
        if qv[:, col].any() and len(c):
            assert np.all(got[: c[0], col][pv[: c[0], col]] == Bucket.FRONT)


# ---------------------------------------------------------------- compositing


def test_over_examples():
    front = np.array([0.5, 0.0, 0.0, 0.5])
    back = np.array([0.0, 0.5, 0.0, 0.5])
    assert np.allclose(composite_over(front, back), [0.5, 0.25, 0.0, 0.75])
    opaque = np.array([0.1, 0.2, 0.3, 1.0])
    assert np.array_equal(composite_over(opaque, back), opaque)
    assert np.array_equal(composite_over(np.zeros(4), back), back)


def test_background():
    assert np.allclose(composite_background(np.array([0.2, 0.0, 0.0, 0.5]), [0.0, 0.0, 1.0]), [0.2, 0.0, 0.5, 1.0])


# ---------------------------------------------------------------- multi layer


def random_layer_scene(rng, K, H=10, W=12):
    valid = rng.uniform(size=(K, H, W)) < 0.7
    valid[1:] &= valid[:-1]
    rgba = rng.uniform(size=(K, H, W, 4))
    rgba[..., :3] *= rgba[..., 3:]
    ys, xs = np.mgrid[0:H, 0:W].astype(float)
    xy = np.stack([xs, ys], -1) + rng.uniform(-0.4, 0.4, size=(K, H, W, 2))
    depth = np.sort(rng.uniform(0.1, 0.9, size=(K, H, W)), axis=0)
    return valid, rgba, xy, depth


def test_one_layer_multilayer_equals_single_bitwise():
    rng = np.random.default_rng(2)
    valid, rgba, xy, depth = random_layer_scene(rng, 1)
    c, p = buffers(valid, rgba, xy, depth)
    assert np.array_equal(value(splat_multilayer(c, p)), value(splat_layer_single(c, p)))


def test_empty_front_buffer_leaves_centre():
    valid = np.ones((1, 6, 6), bool)
    c, p = buffers(valid, np.array([0.3, 0.3, 0.3, 1.0]))
    image, (front, centre, back) = splat_multilayer(c, p, return_buffers=True)
    assert np.all(value(front) == 0) and np.all(value(back) == 0)
    assert np.array_equal(value(image), value(centre))


def test_multilayer_alpha_bounded():
    rng = np.random.default_rng(3)
    valid, rgba, xy, depth = random_layer_scene(rng, 3)
    c, p = buffers(valid, rgba, xy, depth)
    image, bufs = splat_multilayer(c, p, return_buffers=True)
    for b in bufs:
        a = value(b)[..., 3]
        assert np.all(a >= 0) and np.all(a <= 1.0 + 1e-12)
    assert np.all(value(image)[..., 3] <= 1.0 + 1e-12)


def test_multilayer_gradient_check():
    rng = np.random.default_rng(4)
    valid, rgba, xy, depth = random_layer_scene(rng, 2, 6, 7)
    w = rng.normal(size=(6, 7, 4))

    def f(q):
        c, p = buffers(valid, rgba, ad.reshape(q, xy.shape), depth)
        return ad.sum(splat_multilayer(c, p) * w)

    assert ad.check_gradient(f, xy.ravel(), h=1e-6) < 1e-4

    def g(col):
        c, p = buffers(valid, ad.reshape(col, rgba.shape), xy, depth)
        return ad.sum(splat_multilayer(c, p) * w)

    assert ad.check_gradient(g, rgba.ravel(), h=1e-6) < 1e-6


def test_hidden_object_gets_no_gradient_with_two_layers():
    """An opaque occluder in front of a moving object hides the motion entirely."""
    H = W = 16
    valid = np.zeros((2, H, W), bool)
    valid[0, 2:14, 2:14] = True
    valid[1, 5:11, 5:11] = True
    rgba = np.zeros((2, H, W, 4))
    rgba[0] = [1.0, 0.0, 0.0, 1.0]
    rgba[1] = [0.0, 1.0, 0.0, 1.0]
    ys, xs = np.mgrid[0:H, 0:W].astype(float)
    base = np.stack([xs, ys], -1)
    depth = np.stack([np.full((H, W), 0.3), np.full((H, W), 0.6)])
    move = np.zeros((2, H, W, 2))
    move[1, ..., 0] = 1.0

    def image(t):
        c, p = buffers(valid, rgba, base + move * t[0], depth)
        return splat_multilayer(c, p)

    d = ad.jvp(image, np.zeros(1), np.ones(1))[1]
    assert np.abs(d).max() == 0.0
