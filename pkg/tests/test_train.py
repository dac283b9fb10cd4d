import numpy as np
import pytest

from attrikit.calibration import CalibrationTable, apply_thresholds
from attrikit.data.manifest import DatasetManifest, SplitView
from attrikit.data.synthetic import generate_synthetic, standard_spec
from attrikit.data.transforms import AugmentationConfig
from attrikit.errors import ConfigError, DataError, NumericError, ShapeError
from attrikit.network import NetworkConfig, load_checkpoint
from attrikit.train import TrainConfig, calibrate, config_hash, evaluate, predict_proba, train

NET = NetworkConfig(stem_channels=4, stage_blocks=[1, 1], stage_channels=[4, 8], num_attributes=8)
AUG = AugmentationConfig(long_sides=(24, 32), eval_long_side=32)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    return generate_synthetic(standard_spec({"train": 48, "val": 16, "test": 16}, seed=1, size=32), root)


def quick(epochs=2, **kw):
    return TrainConfig(epochs=epochs, augmentation=AUG, **kw)


def test_lr_schedule_drops_at_floor_boundaries():
    tc = TrainConfig(epochs=10, lr_drop_milestones=(0.5,))
    assert [tc.lr_at(e) for e in range(10)] == [0.1] * 5 + [0.01] * 5
    tc = TrainConfig(epochs=7)  # floor(3.5) = 3, floor(5.81) = 5
    assert [round(tc.lr_at(e), 6) for e in range(7)] == [0.1, 0.1, 0.1, 0.01, 0.01, 0.001, 0.001]


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr_drop_milestones=(0.8, 0.5))
    with pytest.raises(ConfigError):
        TrainConfig(lr_drop_milestones=(1.2,))
    with pytest.raises(ConfigError):
        TrainConfig(base_lr=0)
    with pytest.raises(ConfigError):
        TrainConfig(calibration="magic")


def test_seeded_runs_are_identical(dataset, tmp_path):
    a = train(dataset, NET, quick(), tmp_path / "a")
    b = train(dataset, NET, quick(), tmp_path / "b")
    assert a.history[-1]["loss"] == b.history[-1]["loss"]
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    assert a.calibration.read_bytes() == b.calibration.read_bytes()


def test_worker_threads_do_not_change_the_checkpoint(dataset, tmp_path):
    a = train(dataset, NET, quick(1), tmp_path / "a")
    b = train(dataset, NET, quick(1, workers=2), tmp_path / "b")
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()


def test_log_is_stamped_and_line_oriented(dataset, tmp_path):
    tc = quick()
    run = train(dataset, NET, tc, tmp_path)
    lines = run.log.read_text(encoding="utf-8").splitlines()
    assert lines[0] == f"# config_hash={config_hash(NET, tc)} seed=0"
    assert any(line == "# net.stage_channels=4,8" for line in lines)
    epochs = [line for line in lines if line.startswith("epoch=")]
    assert len(epochs) == 2
    for key in ("loss=", "lr=", "elapsed="):
        assert key in epochs[0]


def test_config_hash_tracks_settings():
    assert config_hash(NET, quick()) == config_hash(NET, quick())
    assert config_hash(NET, quick()) != config_hash(NET, quick(seed=1))


def test_memorizes_a_tiny_set(tmp_path):
    m = generate_synthetic(standard_spec({"train": 16, "val": 8}, seed=2, size=32), tmp_path / "d")
    aug = AugmentationConfig.disabled(long_sides=(32,), eval_long_side=32)
    net = NetworkConfig(stem_channels=8, stage_blocks=[1, 1], stage_channels=[8, 16], num_attributes=8)
    tc = TrainConfig(epochs=200, batch_size=8, augmentation=aug, weight_decay=0.0, select_best=False,
                     weighting="none", lr_drop_milestones=(0.9,))
    run = train(m, net, tc, tmp_path / "r")
    assert run.history[-1]["loss"] < 0.25 * run.history[0]["loss"]
    report = evaluate(run.checkpoint, m.split("train"), CalibrationTable.load(run.calibration), aug)
    assert report.mA >= 0.95 and report.example_f1 >= 0.95


def test_evaluate_is_deterministic_and_checks_attribute_counts(dataset, tmp_path):
    run = train(dataset, NET, quick(1), tmp_path)
    table = CalibrationTable.load(run.calibration)
    first = evaluate(run.checkpoint, dataset.split("test"), table, AUG).to_text()
    assert evaluate(run.checkpoint, dataset.split("test"), table, AUG).to_text() == first
    with pytest.raises(ShapeError):
        evaluate(run.checkpoint, dataset.split("test"), CalibrationTable.naive(3), AUG)


def test_calibrate_methods(dataset, tmp_path):
    run = train(dataset, NET, quick(1), tmp_path)
    net = load_checkpoint(run.checkpoint)
    train_view = dataset.split("train")
    assert np.all(calibrate(net, train_view, "naive").thresholds == 0.5)
    table = calibrate(net, train_view, "fpr", 0.2, AUG)
    preds = apply_thresholds(predict_proba(net, train_view, AUG), table)
    y = train_view.labels()
    for j in range(y.shape[1]):
        neg = y[:, j] == 0
        assert preds[neg, j].mean() <= 0.2


def test_calibration_never_reads_validation_labels(dataset, tmp_path, monkeypatch):
    run = train(dataset, NET, quick(1), tmp_path)
    net = load_checkpoint(run.checkpoint)
    clean = calibrate(net, dataset.split("train"), "f1", aug=AUG)

    # sentinel: poison every validation/test label and make reading them fail loudly
    poisoned = DatasetManifest(dataset.attribute_names, [
        r if r.split == "train" else type(r)(r.path, 1 - r.labels, r.split) for r in dataset.records
    ], root=dataset.root, mean_pixel=dataset.mean_pixel)
    original = SplitView.labels

    def guarded(self):
        if self.name != "train":
            raise AssertionError(f"calibration read {self.name} labels")
        return original(self)

    monkeypatch.setattr(SplitView, "labels", guarded)
    again = calibrate(net, poisoned.split("train"), "f1", aug=AUG)
    np.testing.assert_array_equal(clean.thresholds, again.thresholds)
    with pytest.raises(DataError):
        calibrate(net, poisoned.split("val"), "f1", aug=AUG)


def test_divergence_aborts_with_diagnostic(dataset, tmp_path):
    with pytest.raises(NumericError, match="epoch 1"):
        train(dataset, NET, quick(1, base_lr=1e12), tmp_path)
    assert "diverged" in (tmp_path / "train.log").read_text()


def test_mismatched_attribute_count_rejected(dataset, tmp_path):
    with pytest.raises(ShapeError):
        train(dataset, NetworkConfig(num_attributes=3), quick(1), tmp_path)
