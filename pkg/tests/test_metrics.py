import numpy as np
import pytest

from imupose.metrics import (
    ChannelGroup,
    ConfusionMatrix,
    class_f1_scores,
    default_channel_groups,
    macro_f1,
    performance_change,
    permutation_importance,
    write_confusion_csv,
    write_metrics_csv,
)

def test_confusion_matrix_from_predictions():
    cm = ConfusionMatrix.from_predictions(["BT", "BT", "ST"], ["BT", "ST", "ST"], ("BT", "ST"))
    np.testing.assert_array_equal(cm.counts, [[1, 1], [0, 1]])
    assert cm.total == 3


def test_confusion_matrix_rejects_negative_and_nonsquare():
    with pytest.raises(ValueError):
        ConfusionMatrix(np.array([[1, 2]]), ("a", "b"))
    with pytest.raises(ValueError):
        ConfusionMatrix(np.array([[1, -1], [0, 2]]), ("a", "b"))


def test_macro_f1_perfect_classifier():
    cm = ConfusionMatrix(np.diag([5, 3, 9]), ("a", "b", "c"))
    assert macro_f1(cm) == 1.0


def test_macro_f1_hand_computed_two_class():
    cm = ConfusionMatrix(np.array([[8, 2], [3, 7]]), ("a", "b"))
    scores = class_f1_scores(cm)
    np.testing.assert_allclose(scores["a"], 0.76190, atol=1e-5)
    np.testing.assert_allclose(scores["b"], 0.73684, atol=1e-5)
    np.testing.assert_allclose(macro_f1(cm), 0.74937, atol=1e-5)


def test_macro_f1_zero_tp_class_scores_zero():
    # class b: present in truth, never predicted correctly or at all
    cm = ConfusionMatrix(np.array([[4, 0], [2, 0]]), ("a", "b"))
    scores = class_f1_scores(cm)
    assert scores["b"] == 0.0


def test_macro_f1_ignores_absent_classes():
    cm = ConfusionMatrix(np.array([[4, 0, 0], [1, 3, 0], [0, 0, 0]]), ("a", "b", "c"))
    scores = class_f1_scores(cm)
    assert "c" not in scores
    assert set(scores) == {"a", "b"}


def test_macro_f1_empty_matrix_rejected():
    with pytest.raises(ValueError):
        macro_f1(ConfusionMatrix(np.zeros((2, 2), dtype=int), ("a", "b")))


def test_macro_f1_invariant_under_relabeling():
    rng = np.random.default_rng(0)
    counts = rng.integers(0, 20, (4, 4))
    cm = ConfusionMatrix(counts, ("a", "b", "c", "d"))
    perm = [2, 0, 3, 1]
    cm2 = ConfusionMatrix(counts[np.ix_(perm, perm)], ("c", "a", "d", "b"))
    np.testing.assert_allclose(macro_f1(cm2), macro_f1(cm), atol=1e-12)


def test_macro_f1_bounded():
    rng = np.random.default_rng(1)
    for _ in range(50):
        counts = rng.integers(0, 30, (3, 3))
        if counts.sum() == 0:
            continue
        assert 0.0 <= macro_f1(ConfusionMatrix(counts, ("a", "b", "c"))) <= 1.0


def test_row_normalized_display():
    cm = ConfusionMatrix(np.array([[2, 2], [0, 0]]), ("a", "b"))
    norm = cm.row_normalized()
    np.testing.assert_allclose(norm[0], [0.5, 0.5])
    np.testing.assert_allclose(norm[1], [0.0, 0.0])


# -- performance change -------------------------------------------------------

def test_performance_change_reference_pairs():
    assert performance_change(0.812, 0.828) == -1.9
    assert performance_change(0.831, 0.839) == -1.0
    assert performance_change(0.5, 0.5) == 0.0


def test_performance_change_rejects_zero_baseline():
    with pytest.raises(ValueError):
        performance_change(0.5, 0.0)


def test_performance_change_sign_antisymmetric():
    for delta in (0.01, 0.037, 0.2):
        up = performance_change(0.5 + delta, 0.5)
        down = performance_change(0.5 - delta, 0.5)
        assert up == -down
        assert up > 0 > down


# -- permutation importance ---------------------------------------------------

def _channel_mean_classifier(channel: int):
    """Pure oracle: class by sign of the window mean of one channel."""
    def predict(data):
        means = data[:, :, channel].mean(axis=1)
        return np.where(means > 0, "BT", "ST").astype("<U2")
    return predict


def _signed_dataset(n=60, channels=6, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal((n, 10, channels)) * 0.05
    labels = np.array(["BT" if i % 2 else "ST" for i in range(n)], dtype="<U2")
    data[:, :, 0] += np.where(labels == "BT", 1.0, -1.0)[:, None]
    from imupose.pipeline import LabeledDataset
    return LabeledDataset(data, labels, np.arange(n, dtype=float), "x")


def test_permutation_importance_localizes_information():
    ds = _signed_dataset()
    groups = [ChannelGroup("first", (0, 1)), ChannelGroup("rest", (2, 3, 4, 5))]
    result = permutation_importance(_channel_mean_classifier(0), ds, groups,
                                    repeats=5, seed=0)
    assert result.baseline_f1 == 1.0
    assert result.mean_delta["rest"] == 0.0          # classifier ignores these
    assert result.mean_delta["first"] < -0.3         # identity destroyed


def test_permutation_importance_rejects_overlap():
    ds = _signed_dataset()
    groups = [ChannelGroup("a", (0, 1)), ChannelGroup("b", (1, 2))]
    with pytest.raises(ValueError, match="overlap"):
        permutation_importance(_channel_mean_classifier(0), ds, groups)


def test_permute_then_restore_is_bit_identical():
    ds = _signed_dataset()
    rng = np.random.default_rng(3)
    perm = rng.permutation(len(ds))
    idx = [0, 1]
    shuffled = ds.data.copy()
    shuffled[:, :, idx] = ds.data[perm][:, :, idx]
    restored = shuffled.copy()
    inverse = np.argsort(perm)
    restored[:, :, idx] = shuffled[inverse][:, :, idx]
    np.testing.assert_array_equal(restored, ds.data)


def test_default_groups_cover_thirty_channels():
    groups = default_channel_groups()
    assert len(groups) == 10
    all_idx = sorted(i for g in groups for i in g.indices)
    assert all_idx == list(range(30))


def test_metric_csv_emission(tmp_path):
    cm = ConfusionMatrix(np.array([[8, 2], [3, 7]]), ("BT", "ST"))
    write_metrics_csv(cm, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "class,f1"
    assert lines[-1].startswith("macro,0.7493")
    write_confusion_csv(cm, tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[1] == "BT,8,2"
