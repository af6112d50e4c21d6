import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qunet.data import make_partitions, synth_dataset
from qunet.exceptions import ShapeError
from qunet.harness import aggregate_stats, iou, mean_iou, results_csv, run_protocol, train
from qunet.models import ModelConfig, build_model


def test_iou_hand_values():
    pred = np.array([[0.9, 0.6], [0.2, 0.5]])
    target = np.array([[1, 0], [1, 0]])
    # predicted {00, 01, 11}, target {00, 10}: intersection 1, union 4
    assert iou(pred, target) == pytest.approx(0.25)
    assert iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
    assert iou(np.ones((2, 2)), np.ones((2, 2))) == 1.0
    with pytest.raises(ShapeError):
        iou(np.zeros(3), np.zeros(4))


def test_mean_iou_is_per_image():
    preds = np.stack([np.ones((1, 2, 2)), np.zeros((1, 2, 2))])
    targets = np.stack([np.ones((1, 2, 2)), np.eye(2)[None]])
    assert mean_iou(preds, targets) == pytest.approx(0.5)


def test_stats_reference_values():
    s = aggregate_stats(range(1, 11))
    assert (s.lower_quartile, s.median, s.upper_quartile) == (3.25, 5.5, 7.75)
    assert s.iqr == 4.5 and s.mean == 5.5
    assert (s.whisker_low, s.whisker_high) == (1, 10) and s.outliers == []
    assert s.q3 <= s.q2 <= s.q1


def test_stats_outlier():
    s = aggregate_stats([0.70, 0.71, 0.72, 0.73, 0.74, 0.10])
    assert s.outliers == [0.10]
    assert s.whisker_low == 0.70 and s.whisker_high == 0.74
    with pytest.raises(ValueError):
        aggregate_stats([])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40))
def test_stats_ordering_and_whisker_rule(values):
    s = aggregate_stats(values)
    v = np.asarray(values)
    assert s.q3 <= s.q2 <= s.q1
    lo, hi = s.lower_quartile - 1.5 * s.iqr, s.upper_quartile + 1.5 * s.iqr
    inside = v[(v >= lo) & (v <= hi)]
    # whiskers are the extreme data points inside the fences
    assert s.whisker_low == inside.min() and s.whisker_high == inside.max()
    assert lo <= s.whisker_low <= s.whisker_high <= hi
    assert all(x < lo or x > hi for x in s.outliers)
    assert len(s.outliers) == int(np.sum((v < lo) | (v > hi)))


def test_train_reports_losses_and_iou():
    data = synth_dataset(12, size=32, seed=0)
    part = make_partitions([d.id for d in data], 1, 0.75)[0]
    with pytest.warns(UserWarning):
        result = train(build_model(ModelConfig(input_size=32)), part, data, epochs=2, batch_size=64)
    assert len(result.epoch_losses) == 2 and 0 <= result.test_iou <= 1
    assert result.model == "unet" and result.scale == "tiny"


def test_protocol_outputs_are_byte_identical(tmp_path):
    data = synth_dataset(10, size=32, seed=0)
    cfg = ModelConfig("qunet-4-2", "tiny", input_size=32)
    files = []
    for run in ("a", "b"):
        results, stats = run_protocol(cfg, data, 2, 0.8, epochs=1, batch_size=4, out_dir=tmp_path / run)
        files.append(((tmp_path / run / "runs.csv").read_bytes(), (tmp_path / run / "summary.json").read_bytes()))
        assert [r.seed for r in results] == [0, 1] and stats.n == 2
    assert files[0] == files[1]
    assert results_csv(results).splitlines()[0] == "model,scale,seed,test_iou,epoch_losses"


def test_iou_spec_examples():
    t = np.array([[1.0, 1.0], [0.0, 0.0]])
    assert iou(t, t) == 1.0
    assert iou(np.ones((2, 2)), t) == 0.5
    assert iou(1 - t, t) == 0.0


def test_stats_small_examples():
    assert aggregate_stats([1, 2, 3, 4, 5]).median == 3
    assert aggregate_stats(np.arange(1, 11) / 10).median == pytest.approx(0.55)
    s = aggregate_stats([0.4] * 6)
    assert s.iqr == 0 and s.outliers == []


def test_two_epoch_descent_and_determinism():
    data = synth_dataset(40, size=32, seed=0)
    part = make_partitions([d.id for d in data], 1, 0.8)[0]
    runs = [train(build_model(ModelConfig(input_size=32), seed=0), part, data, epochs=2, batch_size=8)
            for _ in range(2)]
    assert runs[0].epoch_losses[1] < runs[0].epoch_losses[0]
    assert runs[0] == runs[1]


def test_ten_partition_protocol():
    data = synth_dataset(10, size=32, seed=0)
    results, stats = run_protocol(ModelConfig(input_size=32), data, epochs=1, batch_size=8)
    assert len(results) == 10 and stats.n == 10
    assert [r.seed for r in results] == list(range(10))
