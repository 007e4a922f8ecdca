import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustfusion.metrics import ConfusionMatrix, accumulate, miou, pixel_acc, random_predictor_miou


def test_perfect_prediction():
    truth = np.array([[0, 1], [2, 2]])
    cm = accumulate(ConfusionMatrix(3), truth, truth)
    assert pixel_acc(cm) == 1.0 and miou(cm) == 1.0


def test_hand_counted_two_class():
    cm = accumulate(ConfusionMatrix(2), np.array([0, 1, 1, 1]), np.array([0, 0, 1, 1]))
    np.testing.assert_array_equal(cm.counts, [[1, 1], [0, 2]])
    assert pixel_acc(cm) == 0.75
    np.testing.assert_allclose(cm.class_iou(), [1 / 2, 2 / 3])
    assert miou(cm) == pytest.approx(7 / 12, abs=1e-15)


def test_absent_classes_excluded():
    cm = accumulate(ConfusionMatrix(4), np.array([0, 0, 1]), np.array([0, 1, 1]))
    iou = cm.class_iou()
    assert np.isnan(iou[2]) and np.isnan(iou[3])
    assert miou(cm) == pytest.approx((1 / 2 + 1 / 2) / 2)


def test_predicted_but_absent_class_is_excluded():
    # class 2 predicted but never true: excluded from the mean by convention
    cm = accumulate(ConfusionMatrix(3), np.array([2, 1]), np.array([0, 1]))
    assert np.isnan(cm.class_iou()[2])
    assert miou(cm) == pytest.approx(0.5)


def test_empty_matrix_errors():
    with pytest.raises(ValueError):
        pixel_acc(ConfusionMatrix(3))
    with pytest.raises(ValueError):
        miou(ConfusionMatrix(3))


def test_ignore_id_and_range():
    cm = ConfusionMatrix(3).accumulate(np.array([0, 1]), np.array([0, 255]), ignore_id=255)
    assert cm.total == 1
    with pytest.raises(ValueError):
        ConfusionMatrix(3).accumulate(np.array([3]), np.array([0]))
    with pytest.raises(ValueError):
        ConfusionMatrix(3).accumulate(np.array([0, 1]), np.array([0]))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 100_000), n_images=st.integers(1, 5))
def test_additivity(seed, n_images):
    r = np.random.default_rng(seed)
    preds = [r.integers(0, 6, (8, 8)) for _ in range(n_images)]
    truths = [r.integers(0, 6, (8, 8)) for _ in range(n_images)]
    summed = ConfusionMatrix(6)
    for p, t in zip(preds, truths):
        summed = summed + ConfusionMatrix(6).accumulate(p, t)
    union = ConfusionMatrix(6).accumulate(np.concatenate(preds), np.concatenate(truths))
    np.testing.assert_array_equal(summed.counts, union.counts)
    assert miou(summed) == miou(union)
    assert summed.total == 64 * n_images
    assert 0 <= pixel_acc(summed) <= 1 and 0 <= miou(summed) <= 1


def test_random_predictor_baseline_matches_simulation():
    freq = np.array([0.4, 0.3, 0.2, 0.1])
    r = np.random.default_rng(0)
    truth = r.choice(4, size=400_000, p=freq)
    pred = r.integers(0, 4, size=truth.size)
    sim = miou(ConfusionMatrix(4).accumulate(pred, truth))
    assert random_predictor_miou(freq) == pytest.approx(sim, abs=2e-3)
