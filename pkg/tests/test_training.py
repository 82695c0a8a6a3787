import numpy as np
import pytest

from src.core.nn import (DEPTH, DiscriminatorParams, GeneratorParams, Tape, generator_backward, generator_forward,
                         init_params)
from src.core.projector import Volume3D
from src.core.training import (Adam, TrainConfig, TrainingExample, build_examples, discriminator_loss,
                               generator_loss, intensity_scale, lambda_schedule, masked_mse, train_stage)
from src.errors import DimensionError, TrainingError


def examples(rng, count=3, size=6):
    return [TrainingExample(sub=rng.random((size, size, DEPTH)), target=rng.random((size, size)),
                            mask=rng.random((size, size)) > 0.3, z_center=k) for k in range(count)]


def test_masked_mse_oracle():
    pred = np.array([[1.0, 2.0], [3.0, 4.0]])
    gt = np.array([[0.0, 2.0], [5.0, 0.0]])
    mask = np.array([[True, True], [True, False]])
    assert masked_mse(pred, gt, mask) == pytest.approx((1.0 + 0.0 + 4.0) / 3)


def test_masked_mse_errors():
    with pytest.raises(TrainingError):
        masked_mse(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2), dtype=bool))
    with pytest.raises(DimensionError):
        masked_mse(np.zeros((2, 2)), np.zeros((2, 3)), np.ones((2, 2), dtype=bool))


@pytest.mark.parametrize("r, expected", [
    (0.5, 0.1),
    (3.0, 1.0),
    (0.01, 0.01),
    (0.0099, 0.001),
    (123.0, 100.0),
    (1e-12, 1e-8),
])
def test_lambda_schedule(r, expected):
    assert lambda_schedule(r) == pytest.approx(expected)


def test_lambda_schedule_reference_values():
    assert lambda_schedule(1.0) == 1.0
    assert lambda_schedule(0.038) == pytest.approx(0.01, rel=1e-15)
    assert lambda_schedule(250.0) == pytest.approx(100.0, rel=1e-15)
    assert lambda_schedule(1e-9) == 1e-8


def test_lambda_schedule_rejects_nonpositive():
    with pytest.raises(TrainingError):
        lambda_schedule(0.0)


def with_random_biases(params, rng):
    return params.from_tensors([rng.standard_normal(t.shape) * 0.1 if name.endswith("_b") else t
                                for name, t in zip(params.names(), params.tensors())])


def directional_check(params, grads, loss_fn, rng, eps=1e-7):
    for index, (tensor, grad) in enumerate(zip(params.tensors(), grads.tensors())):
        direction = rng.standard_normal(tensor.shape)
        plus, minus = params.tensors(), params.tensors()
        plus[index] = plus[index] + eps * direction
        minus[index] = minus[index] - eps * direction
        numeric = (loss_fn(params.from_tensors(plus)) - loss_fn(params.from_tensors(minus))) / (2 * eps)
        assert float(np.sum(grad * direction)) == pytest.approx(numeric, rel=1e-4, abs=1e-9), params.names()[index]


def test_generator_loss_gradient_finite_difference(rng):
    gen, disc = init_params(5)
    gen = with_random_biases(gen.astype(np.float64), rng)
    disc = with_random_biases(disc.astype(np.float64), rng)
    batch = examples(rng)
    loss, grads, info = generator_loss(gen, disc, batch)
    assert info["lambda"] == lambda_schedule(info["mse"])

    def frozen_loss(params):
        # λ stays at the value of the unperturbed batch
        _, _, other = generator_loss(params, disc, batch)
        return -info["lambda"] * other["adversarial"] + other["mse"]

    assert loss == pytest.approx(frozen_loss(gen))
    directional_check(gen, grads, frozen_loss, rng)


def test_discriminator_loss_gradient_finite_difference(rng):
    gen, disc = init_params(6)
    gen = with_random_biases(gen.astype(np.float64), rng)
    disc = with_random_biases(disc.astype(np.float64), rng)
    batch = examples(rng, count=2)
    loss, grads = discriminator_loss(disc, gen, batch)
    assert loss >= 0
    directional_check(disc, grads, lambda params: discriminator_loss(params, gen, batch)[0], rng)


def test_zero_discriminator_leaves_only_the_mse_gradient(rng):
    gen, _ = init_params(7)
    gen = gen.astype(np.float64)
    disc = DiscriminatorParams.zeros(np.float64)
    batch = examples(rng)
    loss, grads, info = generator_loss(gen, disc, batch)
    assert info["adversarial"] == 0.5
    assert loss == pytest.approx(-0.5 * info["lambda"] + info["mse"])

    expected = GeneratorParams.zeros(np.float64)
    for example in batch:
        tape = Tape()
        out = generator_forward(gen, example.sub, tape)
        upstream = 2.0 / (len(batch) * example.mask.sum()) * (out - example.target) * example.mask
        for acc, g in zip(expected.tensors(), generator_backward(gen, tape, upstream).tensors()):
            acc += g
    for name, got, want in zip(gen.names(), grads.tensors(), expected.tensors()):
        assert np.allclose(got, want, rtol=1e-10, atol=1e-14), name


def test_constant_half_discriminator_loss(rng):
    gen, _ = init_params(8)
    loss, _ = discriminator_loss(DiscriminatorParams.zeros(np.float64), gen.astype(np.float64), examples(rng))
    assert loss == pytest.approx(0.5)


def test_adam_first_step_moves_by_learning_rate():
    gen, _ = init_params(0)
    grads = gen.from_tensors([np.ones_like(t) for t in gen.tensors()])
    updated = Adam(gen, lr=1e-3).step(gen, grads)
    for before, after in zip(gen.tensors(), updated.tensors()):
        assert np.allclose(before - after, 1e-3, atol=1e-6)
        assert after.dtype == np.float32


def test_intensity_scale():
    gt = Volume3D(data=np.full((4, 4, 4), 0.02), voxel=1.0)
    assert intensity_scale(gt, np.ones((4, 4, 4), dtype=bool)) == pytest.approx(0.02)
    assert intensity_scale(gt, np.zeros((4, 4, 4), dtype=bool)) == 1.0


def test_build_examples_skips_empty_roi():
    nz = 12
    volume = Volume3D(data=np.ones((5, 5, nz)), voxel=1.0)
    roi = np.zeros((5, 5, nz), dtype=bool)
    roi[:, :, 5] = True
    roi[:, :, 6] = True
    built = build_examples(volume, volume, roi, depth=DEPTH)
    assert [e.z_center for e in built] == [5, 6]
    with pytest.raises(TrainingError):
        build_examples(volume, volume, np.zeros_like(roi), depth=DEPTH)


def small_stage(seed):
    rng = np.random.default_rng(seed)
    gt = Volume3D(data=rng.random((6, 6, 12)).astype(np.float32) * 0.04, voxel=1.0)
    noisy = Volume3D(data=(gt.data + 0.01 * rng.standard_normal(gt.shape)).astype(np.float32), voxel=1.0)
    roi = np.ones(gt.shape, dtype=bool)
    return noisy, gt, roi


def test_train_stage_is_deterministic():
    noisy, gt, roi = small_stage(0)
    cfg = TrainConfig(epochs=2, batch_size=2, disc_every=1, seed=3)
    first = train_stage(noisy, gt, roi, cfg, progress=False)
    second = train_stage(noisy, gt, roi, cfg, progress=False)
    assert first.g_losses == second.g_losses
    assert all(np.array_equal(a, b) for a, b in zip(first.gen.tensors(), second.gen.tensors()))
    assert len(first.g_losses) == 2 * 2
    assert len(first.d_losses) == 4
    assert first.intensity_scale == pytest.approx(float(gt.data.max()))


def test_train_stage_reduces_masked_mse():
    noisy, gt, roi = small_stage(1)
    cfg = TrainConfig(epochs=30, batch_size=3, seed=0)
    checkpoint = train_stage(noisy, gt, roi, cfg, progress=False)
    assert np.mean(checkpoint.mse_history[-3:]) < np.mean(checkpoint.mse_history[:3])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_g=0.0)
