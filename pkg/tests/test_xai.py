import numpy as np
import pytest

from stormnet.models import ModelSpec, build
from stormnet.rng import Rng
from stormnet.xai import (
    AttributionResult, aggregate_attributions, attribute, permutation_importance,
    shuffle_feature_group, shuffle_image_group,
)


def _labeled_images(n=80, seed=0, channels=4):
    """Images whose label depends only on channel 0's mean."""
    rng = Rng(seed)
    images = rng.uniform((n, 8, 8, channels))
    signal = images[:, :, :, 0].mean(axis=(1, 2))
    labels = (signal > np.median(signal)).astype(np.float64)
    return images, labels


def test_shuffle_preserves_value_multiset_and_other_channels():
    rng = Rng(1)
    images = Rng(2).uniform((10, 6, 6, 4))
    shuffled = shuffle_image_group(images, (1,), rng)
    assert np.array_equal(np.sort(shuffled[:, :, :, 1].ravel()),
                          np.sort(images[:, :, :, 1].ravel()))
    for c in (0, 2, 3):
        assert np.array_equal(shuffled[:, :, :, c], images[:, :, :, c])
    assert not np.array_equal(shuffled[:, :, :, 1], images[:, :, :, 1])


def test_shuffle_feature_group_moves_rows_jointly():
    rng = Rng(3)
    feats = Rng(4).uniform((20, 6))
    shuffled = shuffle_feature_group(feats, (2, 3), rng)
    assert np.array_equal(shuffled[:, [0, 1, 4, 5]], feats[:, [0, 1, 4, 5]])
    # rows move together: each shuffled (c2, c3) pair exists in the original
    pairs = {tuple(row) for row in feats[:, [2, 3]]}
    assert all(tuple(row) in pairs for row in shuffled[:, [2, 3]])


def test_ignored_channels_get_exactly_zero_importance():
    images, labels = _labeled_images()

    def predict(x):
        return x[:, :, :, 0].mean(axis=(1, 2))

    result = permutation_importance(predict, images, labels, metric="auc",
                                    mode="single", n_resamples=5, sample_size=40,
                                    seed=3)
    assert result.importance_mean["ir"] == 0.0
    assert result.importance_mean["wv"] == 0.0
    assert result.importance_mean["vis"] == 0.0
    assert result.importance_std["ir"] == 0.0


def test_informative_channel_importance_drops_auc_to_chance():
    images, labels = _labeled_images(n=200)

    def predict(x):
        return x[:, :, :, 0].mean(axis=(1, 2))

    result = permutation_importance(predict, images, labels, metric="auc",
                                    mode="single", n_resamples=10, sample_size=150,
                                    seed=4)
    # base AUC is 1.0; shuffling channel 0 leaves a label-independent input
    assert result.base_mean == 1.0
    assert result.importance_mean["vil"] > 0.4
    assert abs(result.base_mean - result.importance_mean["vil"] - 0.5) < 0.1
    assert result.ranked_groups()[0] == "vil"


def test_single_pass_invariant_to_group_order():
    images, labels = _labeled_images(n=60)

    def predict(x):
        return x[:, :, :, 0].mean(axis=(1, 2)) + 0.3 * x[:, :, :, 1].mean(axis=(1, 2))

    kw = dict(metric="auc", mode="single", n_resamples=4, sample_size=30, seed=5)
    fwd = permutation_importance(predict, images, labels,
                                 groups={"vil": (0,), "ir": (1,), "wv": (2,), "vis": (3,)},
                                 **kw)
    rev = permutation_importance(predict, images, labels,
                                 groups={"vis": (3,), "wv": (2,), "ir": (1,), "vil": (0,)},
                                 **kw)
    for g in ("vil", "ir", "wv", "vis"):
        assert fwd.importance_mean[g] == rev.importance_mean[g]


def test_multipass_eliminates_stronger_channel_first():
    rng = Rng(6)
    images = rng.uniform((160, 8, 8, 2))
    score_true = 2.0 * images[:, :, :, 0].mean(axis=(1, 2)) \
        + 0.5 * images[:, :, :, 1].mean(axis=(1, 2))
    labels = (score_true > np.median(score_true)).astype(np.float64)

    def predict(x):
        return 2.0 * x[:, :, :, 0].mean(axis=(1, 2)) + 0.5 * x[:, :, :, 1].mean(axis=(1, 2))

    groups = {"strong": (0,), "weak": (1,)}
    result = permutation_importance(predict, images, labels, metric="auc",
                                    groups=groups, mode="multi", n_resamples=6,
                                    sample_size=100, seed=7)
    assert all(order[0] == "strong" for order in result.elimination_orders)
    assert all(sorted(order) == ["strong", "weak"] for order in result.elimination_orders)
    assert result.mean_rank["strong"] < result.mean_rank["weak"]
    assert result.final_mean == pytest.approx(0.5, abs=0.15)

    # exhaustive-order oracle on one resample: greedy must pick the group
    # whose single shuffle degrades the metric most
    from stormnet.metrics import roc_auc
    from stormnet.rng import derive_seed

    r_rng = Rng(derive_seed(7, 201, 0))
    idx = r_rng.permutation(160)[:100]
    x_r, y_r = images[idx], labels[idx]
    degradations = {}
    for name, channels in groups.items():
        g_rng = Rng(derive_seed(7, 201, 0, 203, 0, *channels))
        shuffled = shuffle_image_group(x_r, channels, g_rng)
        degradations[name] = roc_auc(predict(x_r), y_r)[1] - roc_auc(predict(shuffled), y_r)[1]
    assert max(degradations, key=degradations.get) == "strong"


def test_groups_must_partition_channels():
    images, labels = _labeled_images(n=20)
    with pytest.raises(ValueError, match="partition"):
        permutation_importance(lambda x: x[:, 0, 0, 0], images, labels,
                               groups={"a": (0, 1), "b": (1, 2)}, n_resamples=1,
                               sample_size=10)


def test_sample_size_exceeding_dataset_errors():
    images, labels = _labeled_images(n=20)
    with pytest.raises(ValueError, match="sample_size"):
        permutation_importance(lambda x: x[:, 0, 0, 0], images, labels,
                               n_resamples=1, sample_size=50)


def test_importance_csv_and_json():
    images, labels = _labeled_images(n=40)
    result = permutation_importance(lambda x: x[:, :, :, 0].mean(axis=(1, 2)),
                                    images, labels, n_resamples=2, sample_size=20,
                                    seed=8)
    lines = result.to_csv().strip().split("\n")
    assert lines[0] == "channel,mean_importance,stddev"
    assert len(lines) == 5
    assert "importance_mean" in result.to_json()


def _linear_image_model(seed=0):
    spec = ModelSpec(kind="perceptron", input_shape=(6, 6, 4),
                     output="linear-scalar", seed=seed)
    return build(spec)


def test_attribution_exact_for_linear_model():
    model = _linear_image_model(seed=1)
    rng = Rng(2)
    x = rng.uniform((6, 6, 4))
    background = rng.uniform((5, 6, 6, 4))
    result = attribute(model, x, background, n_steps=16, seed=3)
    w = model.parameters()["L1_Dense.W"][:, 0].reshape(6, 6, 4)
    expected = w * (x - background.mean(axis=0))
    assert np.max(np.abs(result.attribution - expected)) <= 1e-10
    assert result.completeness_residual <= 1e-10


def test_attribution_zero_when_input_is_its_own_background():
    model = _linear_image_model(seed=4)
    x = Rng(5).uniform((6, 6, 4))
    result = attribute(model, x, x[None], n_steps=8, seed=6)
    assert np.all(result.attribution == 0.0)
    assert result.completeness_residual <= 1e-12


def test_attribution_completeness_small_cnn():
    spec = ModelSpec(kind="cnn", input_shape=(16, 16, 2), conv_blocks=(4, 8),
                     dense_head=(8,), output="sigmoid-scalar", seed=7)
    model = build(spec)
    rng = Rng(8)
    x = rng.uniform((16, 16, 2))
    background = rng.uniform((4, 16, 16, 2))
    result = attribute(model, x, background, n_steps=128, seed=9)
    assert result.completeness_residual <= 0.02
    assert result.attribution.shape == (16, 16, 2)
    assert result.channel_sums.shape == (2,)


def test_structurally_ignored_channel_attribution_is_zero():
    spec = ModelSpec(kind="cnn", input_shape=(8, 8, 3), conv_blocks=(4,),
                     dense_head=(), output="sigmoid-scalar", seed=10)
    model = build(spec)
    model.parameters()["L0_conv0.W"][:, :, 2, :] = 0.0
    rng = Rng(11)
    result = attribute(model, rng.uniform((8, 8, 3)), rng.uniform((3, 8, 8, 3)),
                       n_steps=32, seed=12)
    assert np.max(np.abs(result.attribution[:, :, 2])) <= 1e-10


def test_aggregate_ratios():
    a = AttributionResult(
        attribution=np.zeros((2, 2, 4)), channel_sums=np.array([3.0, 0.0, 0.0, 0.0]),
        channel_abs_sums=np.array([3.0, 0.0, 0.0, 0.0]), expected_value=0.0,
        model_output=3.0, completeness_residual=0.0,
    )
    out = aggregate_attributions([a])
    assert out["ratio_signed"] == [1.0, 0.0, 0.0, 0.0]
    assert np.isclose(sum(out["ratio_signed"]), 1.0)

    b = AttributionResult(
        attribution=np.zeros((2, 2, 4)), channel_sums=np.array([1.0, -1.0, 0.0, 0.0]),
        channel_abs_sums=np.ones(4), expected_value=0.0, model_output=0.0,
        completeness_residual=0.0,
    )
    with pytest.raises(ValueError, match="zero"):
        aggregate_attributions([b])
    assert np.isclose(sum(aggregate_attributions([a, b])["ratio_signed"]), 1.0)
