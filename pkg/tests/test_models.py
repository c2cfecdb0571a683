import numpy as np
import pytest

from stormnet.container import ContainerError
from stormnet.errors import ShapeError
from stormnet.layers import Pool2D
from stormnet.losses_optim import SGD, loss_and_grad
from stormnet.models import Model, ModelSpec, build, count_params
from stormnet.rng import Rng


def test_spec_json_roundtrip_bit_exact():
    spec = ModelSpec(kind="cnn", input_shape=(48, 48, 4), conv_blocks=(8, 16),
                     dense_head=(64,), dropout_rate=0.17, use_batchnorm=True,
                     output="sigmoid-scalar", seed=99)
    again = ModelSpec.from_json(spec.to_json())
    assert again == spec
    assert again.to_json() == spec.to_json()


def test_perceptron_param_count():
    spec = ModelSpec(kind="perceptron", input_shape=(36,))
    model = build(spec)
    assert model.param_count() == 37
    assert count_params(spec) == 37


def test_mlp_param_count_example():
    # 36*16+16 + 16*8+8 + 8*1+1
    spec = ModelSpec(kind="mlp", input_shape=(36,), hidden_layers=(16, 8),
                     output="sigmoid-scalar")
    assert count_params(spec) == 737
    assert build(spec).param_count() == 737


def test_param_count_formula_matches_instantiated_over_random_specs():
    rng = Rng(77)
    for trial in range(50):
        kind = ("perceptron", "mlp", "cnn", "unet")[rng.integer(4)]
        bn = rng.uniform() < 0.5
        if kind == "perceptron":
            spec = ModelSpec(kind=kind, input_shape=(rng.integer(30) + 1,))
        elif kind == "mlp":
            widths = tuple(rng.integer(20) + 1 for _ in range(rng.integer(3) + 1))
            spec = ModelSpec(kind=kind, input_shape=(rng.integer(30) + 2,),
                             hidden_layers=widths, use_batchnorm=bn)
        elif kind == "cnn":
            blocks = tuple(2 ** (rng.integer(3) + 1) for _ in range(rng.integer(2) + 1))
            spec = ModelSpec(kind=kind, input_shape=(16, 16, rng.integer(4) + 1),
                             conv_blocks=blocks, dense_head=(rng.integer(16) + 1,),
                             use_batchnorm=bn)
        else:
            spec = ModelSpec(kind=kind, input_shape=(48, 48, rng.integer(4) + 1),
                             depth=rng.integer(3) + 1, base_filters=2 ** (rng.integer(3) + 1),
                             use_batchnorm=bn, output="sigmoid-map")
        assert count_params(spec) == build(spec).param_count(), spec


def test_unet_shape_ladder_d2_f8():
    spec = ModelSpec(kind="unet", input_shape=(48, 48, 4), depth=2, base_filters=8,
                     output="sigmoid-map")
    model = build(spec)
    p = model.parameters()
    assert p["enc0_conv.W"].shape == (3, 3, 4, 8)
    assert p["enc1_conv.W"].shape == (3, 3, 8, 16)
    assert p["bottleneck_conv.W"].shape == (3, 3, 16, 32)
    assert p["dec1_conv.W"].shape == (3, 3, 48, 16)
    assert p["dec0_conv.W"].shape == (3, 3, 24, 8)
    assert p["head.W"].shape == (1, 1, 8, 1)
    out = model.predict(Rng(1).uniform((2, 48, 48, 4)))
    assert out.shape == (2, 48, 48, 1)


def test_unet_output_spatial_extent_matches_input():
    spec = ModelSpec(kind="unet", input_shape=(48, 48, 4), depth=3, base_filters=4,
                     output="sigmoid-map")
    out = build(spec).predict(Rng(2).uniform((3, 48, 48, 4)))
    assert out.shape == (3, 48, 48, 1)
    assert np.all((out > 0) & (out < 1))


def test_sigmoid_output_strictly_in_unit_interval():
    spec = ModelSpec(kind="mlp", input_shape=(36,), hidden_layers=(16,),
                     output="sigmoid-scalar")
    out = build(spec).predict(Rng(3).uniform((40, 36), -5.0, 5.0))
    assert out.shape == (40, 1)
    assert np.all((out > 0) & (out < 1))


def test_zero_input_relu_linear_mlp_outputs_zero():
    spec = ModelSpec(kind="mlp", input_shape=(10,), hidden_layers=(8, 4),
                     activation="relu", output="linear-scalar")
    out = build(spec).predict(np.zeros((3, 10)))
    assert np.all(out == 0.0)


def test_inference_forward_is_deterministic():
    spec = ModelSpec(kind="cnn", input_shape=(16, 16, 2), conv_blocks=(4, 8),
                     dense_head=(8,), dropout_rate=0.3, output="sigmoid-scalar")
    model = build(spec)
    x = Rng(4).uniform((3, 16, 16, 2))
    assert np.array_equal(model.predict(x), model.predict(x))


def test_build_validation_errors():
    with pytest.raises(ShapeError, match="2\\^"):
        build(ModelSpec(kind="cnn", input_shape=(18, 18, 2), conv_blocks=(4, 8),
                        output="sigmoid-scalar"))
    with pytest.raises(ShapeError, match="< 3"):
        build(ModelSpec(kind="unet", input_shape=(32, 32, 2), depth=4,
                        output="sigmoid-map"))
    with pytest.raises(ShapeError, match="map output"):
        build(ModelSpec(kind="unet", input_shape=(48, 48, 4), output="sigmoid-scalar"))
    with pytest.raises(ShapeError, match="scalar output"):
        build(ModelSpec(kind="cnn", input_shape=(16, 16, 1), conv_blocks=(4,),
                        output="sigmoid-map"))


def test_serialize_roundtrip_bitwise():
    spec = ModelSpec(kind="cnn", input_shape=(16, 16, 3), conv_blocks=(4, 8),
                     dense_head=(8,), use_batchnorm=True, output="sigmoid-scalar", seed=5)
    model = build(spec)
    # make buffers non-trivial
    model.set_mode("train")
    model.forward(Rng(5).uniform((8, 16, 16, 3)))
    blob = model.serialize()
    again = Model.deserialize(blob)
    assert again.spec == spec
    for name, arr in model.parameters().items():
        assert np.array_equal(arr, again.parameters()[name]), name
    for name, arr in model.buffers().items():
        assert np.array_equal(arr, again.buffers()[name]), name
    x = Rng(6).uniform((4, 16, 16, 3))
    assert np.array_equal(model.predict(x), again.predict(x))


def test_deserialize_truncated_blob_fails_checksum():
    model = build(ModelSpec(kind="perceptron", input_shape=(5,)))
    blob = model.serialize()
    with pytest.raises(ContainerError):
        Model.deserialize(blob[:-7])


def test_unet_skip_connections_carry_information():
    spec = ModelSpec(kind="unet", input_shape=(16, 16, 2), depth=2, base_filters=4,
                     output="sigmoid-map", seed=8)
    model = build(spec)
    rng = Rng(9)
    x = rng.uniform((4, 16, 16, 2))
    y = (rng.uniform((4, 16, 16, 1)) < 0.2).astype(np.float64)
    opt = SGD(lr=0.5)
    model.set_mode("train")
    for _ in range(5):
        out = model.forward(x)
        _, grad = loss_and_grad("bce", out, y)
        model.backward(grad)
        opt.step(model.parameters(), model.gradients())
    model.set_mode("inference")
    probe = rng.uniform((2, 16, 16, 2))
    with_skips = model.forward(probe)
    without = model.forward(probe, zero_skips=True)
    assert not np.allclose(with_skips, without)


def test_cnn_translation_covariance_at_first_pooled_scale():
    spec = ModelSpec(kind="cnn", input_shape=(16, 16, 1), conv_blocks=(3,),
                     dense_head=(), activation="linear", output="linear-scalar", seed=10)
    model = build(spec)
    x = np.zeros((1, 16, 16, 1))
    x[0, 4:10, 4:10, 0] = Rng(11).uniform((6, 6))
    shifted = np.roll(x, (2, 2), axis=(1, 2))
    model.set_mode("inference")
    maps = model.forward_collect(x)
    maps_shifted = model.forward_collect(shifted)
    pool_idx = next(i for i, l in enumerate(model._layers) if isinstance(l, Pool2D))
    m1, m2 = maps[pool_idx], maps_shifted[pool_idx]
    assert np.array_equal(m2[:, 3:7, 3:7, :], m1[:, 2:6, 2:6, :])


def test_reseeded_dropout_training_forward_reproducible():
    spec = ModelSpec(kind="mlp", input_shape=(12,), hidden_layers=(16,),
                     dropout_rate=0.5, output="sigmoid-scalar", seed=12)
    x = Rng(13).uniform((6, 12))
    outs = []
    for _ in range(2):
        model = build(spec)
        model.reseed_stochastic(777)
        model.set_mode("train")
        outs.append(model.forward(x))
    assert np.array_equal(outs[0], outs[1])


def test_input_gradient_matches_fd_for_scalar_model():
    from stormnet.losses_optim import finite_difference_check

    spec = ModelSpec(kind="mlp", input_shape=(6,), hidden_layers=(5,),
                     activation="sigmoid", output="sigmoid-scalar", seed=14)
    model = build(spec)
    x = Rng(15).uniform((1, 6))
    _, grad = model.input_gradient(x)

    def f(xv):
        return float(model.predict(xv).sum())

    assert finite_difference_check(f, x, grad) <= 1e-6
