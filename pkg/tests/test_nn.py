import itertools

import numpy as np
import pytest

from src.core.nn import (DEPTH, FEATURES, DiscriminatorParams, GeneratorParams, Tape, conv_backward, conv_forward,
                         discriminator_backward, discriminator_forward, generator_backward, generator_forward,
                         init_params, pack_params, param_header, pooling_matrix, unpack_params)
from src.errors import CheckpointError, DimensionError, TrainingError


def with_random_biases(params, rng):
    names = params.names()
    return params.from_tensors([rng.standard_normal(t.shape) * 0.1 if name.endswith("_b") else t
                                for name, t in zip(names, params.tensors())])


def perturbed(params, index, delta):
    tensors = params.tensors()
    tensors[index] = tensors[index] + delta
    return params.from_tensors(tensors)


def test_conv_forward_matches_loops(rng):
    x = rng.standard_normal((5, 4, 2))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = conv_forward(x, w, b, (1, 1))
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    expected = np.zeros((5, 4, 3))
    for i, j, o in itertools.product(range(5), range(4), range(3)):
        expected[i, j, o] = b[o] + np.sum(xp[i:i + 3, j:j + 3, :] * w[o].transpose(1, 2, 0))
    assert np.allclose(out, expected)


def test_conv_backward_finite_difference(rng):
    x = rng.standard_normal((4, 4, 3, 2))
    w = rng.standard_normal((2, 2, 3, 3, 3))
    b = rng.standard_normal(2)
    pad = (1, 1, 0)
    grad_out = rng.standard_normal(conv_forward(x, w, b, pad).shape)
    dw, db, dx = conv_backward(x, w, pad, grad_out)

    def loss(x_, w_, b_):
        return float(np.sum(conv_forward(x_, w_, b_, pad) * grad_out))

    eps = 1e-6
    for value, grad, build in ((x, dx, lambda d: (x + d, w, b)),
                               (w, dw, lambda d: (x, w + d, b)),
                               (b, db, lambda d: (x, w, b + d))):
        direction = rng.standard_normal(value.shape)
        numeric = (loss(*build(eps * direction)) - loss(*build(-eps * direction))) / (2 * eps)
        assert float(np.sum(grad * direction)) == pytest.approx(numeric, rel=1e-6)


def test_pooling_matrix_rows_average():
    matrix = pooling_matrix(30)
    assert matrix.shape == (12, 30)
    assert np.allclose(matrix.sum(axis=1), 1.0)
    # Fewer inputs than bins: each bin copies one input
    small = pooling_matrix(6)
    assert np.allclose(small.sum(axis=1), 1.0)
    assert np.all((small > 0).sum(axis=1) == 1)


def test_generator_shapes():
    gen, _ = init_params(0)
    out = generator_forward(gen, np.zeros((7, 9, DEPTH), dtype=np.float32))
    assert out.shape == (7, 9)
    assert out.dtype == np.float32


def test_generator_rejects_wrong_depth():
    gen, _ = init_params(0)
    with pytest.raises(DimensionError):
        generator_forward(gen, np.zeros((7, 7, 5)))


def test_generator_gradient_finite_difference(rng):
    gen, _ = init_params(1)
    gen = with_random_biases(gen.astype(np.float64), rng)
    sub = rng.random((5, 6, DEPTH))
    upstream = rng.standard_normal((5, 6))
    tape = Tape()
    generator_forward(gen, sub, tape)
    grads = generator_backward(gen, tape, upstream)

    eps = 1e-7
    for index, (tensor, grad) in enumerate(zip(gen.tensors(), grads.tensors())):
        direction = rng.standard_normal(tensor.shape)
        plus = np.sum(generator_forward(perturbed(gen, index, eps * direction), sub) * upstream)
        minus = np.sum(generator_forward(perturbed(gen, index, -eps * direction), sub) * upstream)
        numeric = (plus - minus) / (2 * eps)
        assert float(np.sum(grad * direction)) == pytest.approx(numeric, rel=1e-4, abs=1e-8), GeneratorParams.names()[index]


def test_discriminator_output_is_probability(rng):
    _, disc = init_params(2)
    prob = discriminator_forward(disc, rng.random((20, 20)).astype(np.float32))
    assert 0.0 < prob < 1.0


def test_discriminator_gradient_finite_difference(rng):
    _, disc = init_params(3)
    disc = with_random_biases(disc.astype(np.float64), rng)
    image = rng.random((14, 13))
    tape = Tape()
    discriminator_forward(disc, image, tape)
    grads, input_grad = discriminator_backward(disc, tape, 1.7)

    eps = 1e-7
    for index, (tensor, grad) in enumerate(zip(disc.tensors(), grads.tensors())):
        direction = rng.standard_normal(tensor.shape)
        plus = 1.7 * discriminator_forward(perturbed(disc, index, eps * direction), image)
        minus = 1.7 * discriminator_forward(perturbed(disc, index, -eps * direction), image)
        numeric = (plus - minus) / (2 * eps)
        assert float(np.sum(grad * direction)) == pytest.approx(numeric, rel=1e-4, abs=1e-9), DiscriminatorParams.names()[index]

    direction = rng.standard_normal(image.shape)
    plus = 1.7 * discriminator_forward(disc, image + eps * direction)
    minus = 1.7 * discriminator_forward(disc, image - eps * direction)
    assert float(np.sum(input_grad * direction)) == pytest.approx((plus - minus) / (2 * eps), rel=1e-4, abs=1e-9)


def test_backward_without_forward():
    gen, disc = init_params(0)
    with pytest.raises(TrainingError):
        generator_backward(gen, Tape(), np.zeros((4, 4)))
    with pytest.raises(TrainingError):
        discriminator_backward(disc, Tape(), 1.0)


def test_init_is_deterministic_and_he_scaled():
    gen_a, disc_a = init_params(7)
    gen_b, disc_b = init_params(7)
    gen_c, _ = init_params(8)
    assert all(np.array_equal(a, b) for a, b in zip(gen_a.tensors(), gen_b.tensors()))
    assert all(np.array_equal(a, b) for a, b in zip(disc_a.tensors(), disc_b.tensors()))
    assert not np.array_equal(gen_a.conv3d_1_w, gen_c.conv3d_1_w)

    assert float(np.std(gen_a.conv3d_2_w)) == pytest.approx(np.sqrt(2.0 / 216), rel=0.1)
    assert float(np.std(disc_a.fc_1_w)) == pytest.approx(np.sqrt(2.0 / 1152), rel=0.1)
    assert np.all(gen_a.conv3d_1_b == 0)
    assert gen_a.conv2d_1_w.dtype == np.float32


def test_param_shapes_are_checked():
    with pytest.raises(DimensionError):
        GeneratorParams.from_tensors([np.zeros((1,))] * len(GeneratorParams.names()))


def test_pack_unpack_preserves_parameters():
    gen, disc = init_params(4)
    header = {**param_header(gen, "gen"), **param_header(disc, "disc")}
    payload = pack_params(gen, disc)
    gen_back, offset = unpack_params(GeneratorParams, header, "gen", payload)
    disc_back, offset = unpack_params(DiscriminatorParams, header, "disc", payload, offset)
    assert offset == len(payload)
    assert all(np.array_equal(a, b) for a, b in zip(gen.tensors(), gen_back.tensors()))
    assert all(np.array_equal(a, b) for a, b in zip(disc.tensors(), disc_back.tensors()))


def test_unpack_rejects_bad_header_and_truncation():
    gen, _ = init_params(4)
    header = param_header(gen, "gen")
    payload = pack_params(gen)
    with pytest.raises(CheckpointError, match="tronquées"):
        unpack_params(GeneratorParams, header, "gen", payload[:-4])
    bad = {**header, "gen.conv2d_2_w": "1x16x5x5"}
    with pytest.raises(CheckpointError, match="conv2d_2_w"):
        unpack_params(GeneratorParams, bad, "gen", payload)
    with pytest.raises(CheckpointError, match="version"):
        unpack_params(GeneratorParams, {**header, "gen.nn_version": "9"}, "gen", payload)


def test_zero_upstream_gives_zero_gradients(rng):
    gen, disc = init_params(9)
    tape = Tape()
    generator_forward(gen, rng.random((6, 6, DEPTH)).astype(np.float32), tape)
    grads = generator_backward(gen, tape, np.zeros((6, 6), dtype=np.float32))
    assert all(not np.any(g) for g in grads.tensors())

    tape = Tape()
    discriminator_forward(disc, rng.random((10, 10)).astype(np.float32), tape)
    grads, input_grad = discriminator_backward(disc, tape, 0.0)
    assert all(not np.any(g) for g in grads.tensors())
    assert not np.any(input_grad)


def test_final_bias_gradient_is_upstream_sum(rng):
    gen, _ = init_params(10)
    gen = gen.astype(np.float64)
    upstream = rng.standard_normal((7, 5))
    tape = Tape()
    generator_forward(gen, rng.random((7, 5, DEPTH)), tape)
    grads = generator_backward(gen, tape, upstream)
    assert float(grads.conv2d_2_b[0]) == pytest.approx(float(upstream.sum()), rel=1e-12, abs=1e-12)


def test_generator_receptive_field_is_nine_by_nine():
    gen, _ = init_params(11)
    gen = gen.astype(np.float64)
    sub = np.zeros((21, 21, DEPTH))
    sub[10, 10, :] = 1.0
    out = generator_forward(gen, sub)
    assert np.any(out != 0)
    outside = np.ones(out.shape, dtype=bool)
    outside[6:15, 6:15] = False
    assert not np.any(out[outside])


def test_generator_is_translation_equivariant(rng):
    gen, _ = init_params(12)
    gen = with_random_biases(gen.astype(np.float64), rng)
    sub = np.zeros((24, 24, DEPTH))
    sub[8:11, 7:12, :] = rng.random((3, 5, DEPTH))
    shifted = np.roll(sub, (3, 2), axis=(0, 1))
    out = generator_forward(gen, sub)
    out_shifted = generator_forward(gen, shifted)
    # Away from the zero-padded border
    assert np.allclose(out_shifted[8:19, 7:20], out[5:16, 5:18], atol=1e-12)


def test_zero_discriminator_outputs_one_half(rng):
    disc = DiscriminatorParams.zeros()
    assert discriminator_forward(disc, rng.random((16, 16))) == 0.5


def test_discriminator_feature_length():
    _, disc = init_params(13)
    tape = Tape()
    discriminator_forward(disc, np.ones((20, 17), dtype=np.float32), tape)
    assert FEATURES == 1152
    assert tape.values["features"].shape == (FEATURES,)


def test_zero_input_with_zero_biases_gives_zero_output():
    gen, _ = init_params(14)
    out = generator_forward(gen, np.zeros((9, 9, DEPTH), dtype=np.float32))
    assert not np.any(out)


def test_first_conv_variance_follows_he():
    variances = [float(np.var(init_params(seed)[0].conv3d_1_w)) for seed in range(10)]
    assert float(np.mean(variances)) == pytest.approx(2.0 / 27, rel=0.2)
