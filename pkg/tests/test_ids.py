import numpy as np
import pytest

from canrbm.codec import AttackType, CanFrame, Label, decode_matrix, filter_standard_frames
from canrbm.errors import DimensionError
from canrbm.fixtures import fixture_log
from canrbm.generator import GenerationConfig
from canrbm.ids import (N_FEATURES, ClassifierConfig, LinearClassifier, SplitSpec, augmentation_experiment,
                        cross_entropy, evaluate_classifier, split_windows, train_classifier, training_attack_data,
                        windows_from_log)
from canrbm.rbm import init_rbm
from canrbm.windows import (CLASSES, WINDOW_WIDTH, WindowLabel, WindowSample, content_hash, export_window_images,
                            read_window_image, window_frames)

N, D, F, G, R = CLASSES


def rows(n, seed=0):
    return np.random.default_rng(seed).integers(0, 2, (n, 96), dtype=np.uint8)


def toy_windows(label, n, seed, hot_column):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        m = (rng.random((27, 96)) < 0.1).astype(np.uint8)
        m[:, hot_column] = 1
        out.append(WindowSample(m, label))
    return out


class TestWindowing:
    def test_count_law(self):
        assert len(window_frames(rows(54), [None] * 54)) == 2
        assert len(window_frames(rows(80), [None] * 80)) == 2
        assert len(window_frames(rows(26), [None] * 26)) == 0

    def test_labels(self):
        (w,) = window_frames(rows(27), [None] * 27)
        assert w.label is N and w.start == 0
        (w,) = window_frames(rows(27), [None] * 26 + [AttackType.GEAR])
        assert w.label is G

    def test_mixed_majority_then_earliest(self):
        labels = [R, G, G, R] + [None] * 23
        assert window_frames(rows(27), labels)[0].label is R
        labels = [R, G, G] + [None] * 24
        assert window_frames(rows(27), labels)[0].label is G

    def test_rows_are_consecutive(self):
        data = rows(60, 3)
        ws = window_frames(data, [None] * 60)
        assert np.array_equal(ws[1].matrix, data[27:54]) and ws[1].start == 27

    def test_errors(self):
        with pytest.raises(ValueError):
            window_frames(np.zeros((0, 96)), [])
        with pytest.raises(ValueError):
            window_frames(rows(27), [None] * 27, width=0)
        with pytest.raises(DimensionError):
            window_frames(np.zeros((27, 16)), [None] * 27)
        with pytest.raises(DimensionError):
            window_frames(rows(27), [None] * 26)
        with pytest.raises(DimensionError):
            WindowSample(np.zeros((27, 95)), N)

    def test_samples_are_immutable_values(self):
        a = WindowSample(rows(27), F)
        b = WindowSample(rows(27), F)
        assert a == b and hash(a) == hash(b)
        with pytest.raises(ValueError):
            a.matrix[0, 0] = 1
        assert content_hash([a]) != content_hash([WindowSample(rows(27), R)])


class TestImages:
    def test_black_white_and_round_trip(self, tmp_path):
        ws = [WindowSample(np.zeros((27, 96)), N), WindowSample(np.ones((27, 96)), D), WindowSample(rows(27), R)]
        paths = export_window_images(ws, tmp_path)
        assert [p.name for p in paths] == ["000000_normal.pgm", "000001_dos.pgm", "000002_rpm.pgm"]
        raw = paths[0].read_bytes()
        assert raw.startswith(b"P5\n96 27\n255\n") and set(raw[len(b"P5\n96 27\n255\n"):]) == {0}
        assert set(paths[1].read_bytes()[13:]) == {255} and len(paths[1].read_bytes()) == 13 + 27 * 96
        for w, p in zip(ws, paths):
            assert np.array_equal(read_window_image(p), w.matrix)


@pytest.fixture(scope="module")
def toy():
    return toy_windows(N, 40, 0, 5) + toy_windows(G, 40, 1, 50)


@pytest.fixture(scope="module")
def source():
    src = {None: fixture_log(None, 27 * 200, seed=1)}
    for i, at in enumerate(AttackType):
        src[at] = fixture_log(at, 27 * 30, seed=10 + i)
    return src


class TestClassifier:
    def test_separable_toy_fits(self, toy):
        model = train_classifier(toy, ClassifierConfig(epochs=20, lr=0.05))
        assert evaluate_classifier(model, toy).accuracy == 1.0
        assert model.weights.shape == (5, N_FEATURES) and np.all(np.isfinite(model.weights))

    def test_zero_epochs_uniform(self, toy):
        model = train_classifier(toy, ClassifierConfig(epochs=0))
        assert np.allclose(model.predict_proba(toy), 0.2, atol=1e-15)

    def test_order_invariant_and_deterministic(self, toy):
        cfg = ClassifierConfig(epochs=3, seed=4)
        a = train_classifier(toy, cfg)
        b = train_classifier(list(reversed(toy)), cfg)
        assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError):
            train_classifier(toy_windows(F, 5, 0, 1))

    def test_validation_selects_best_epoch(self, toy):
        model = train_classifier(toy, ClassifierConfig(epochs=6), validation=toy[::3])
        assert 1 <= model.epochs <= 6
        losses = []
        for e in range(1, 7):
            losses.append(cross_entropy(train_classifier(toy, ClassifierConfig(epochs=e)), toy[::3]))
        assert model.epochs == int(np.argmin(losses)) + 1

    def test_always_normal_model(self):
        model = LinearClassifier.zeros()
        model.bias[N.index] = 1.0
        test = toy_windows(N, 10, 2, 0)
        report = evaluate_classifier(model, test)
        assert report.accuracy == 1.0 and report.auc is None

    def test_random_model_at_chance(self):
        rng = np.random.default_rng(0)
        model = LinearClassifier(rng.normal(0, 1, (5, N_FEATURES)), rng.normal(0, 1, 5))
        test = [WindowSample(rng.integers(0, 2, (27, 96)), label) for label in CLASSES for _ in range(400)]
        report = evaluate_classifier(model, test)
        assert abs(report.accuracy - 0.2) < 0.05
        values = [report.accuracy, report.auc, *report.precision.values(), *report.recall.values(),
                  *report.f1.values()]
        assert all(0 <= v <= 1 for v in values)

    def test_config_and_shape_checks(self):
        with pytest.raises(ValueError):
            ClassifierConfig(batch_size=0)
        with pytest.raises(DimensionError):
            LinearClassifier(np.zeros((4, 10)), np.zeros(5))
        with pytest.raises(ValueError):
            evaluate_classifier(LinearClassifier.zeros(), [])


class TestSplit:
    def _windows(self):
        return [WindowSample(rows(27, i), N) for i in range(50)] + [WindowSample(rows(27, 100 + i), F)
                                                                   for i in range(20)]

    def test_fractions(self):
        split = split_windows(self._windows(), SplitSpec(seed=1))
        counts = {p: split.class_counts(p) for p in ("train", "validation", "test")}
        assert (counts["train"][N], counts["validation"][N], counts["test"][N]) == (40, 10, 0)
        assert (counts["train"][F], counts["validation"][F], counts["test"][F]) == (14, 4, 2)
        all_idx = sorted(sum(split.indices.values(), []))
        assert all_idx == list(range(70))

    def test_seeded(self):
        a, b = split_windows(self._windows(), SplitSpec(seed=3)), split_windows(self._windows(), SplitSpec(seed=3))
        assert a.indices == b.indices
        assert a.indices != split_windows(self._windows(), SplitSpec(seed=4)).indices

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            SplitSpec(normal=(0.9, 0.2, 0.0))
        with pytest.raises(ValueError):
            SplitSpec(abnormal=(0.5, 0.5))
        with pytest.raises(ValueError):
            split_windows(self._windows()[:50])  # normal only: the default test share for it is empty


class TestExperiment:
    def test_identity_without_models(self, source):
        result = augmentation_experiment(source, {}, SplitSpec(seed=0), classifier_config=ClassifierConfig(epochs=2))
        assert result.before == result.after
        assert result.meta["hashes_before"] == result.meta["hashes_after"]
        assert result.accuracy_delta == 0.0

    def test_augmentation_touches_train_only(self, source):
        models = {at: init_rbm(at.mode.width, 8 if at is AttackType.DOS else 32, 0) for at in AttackType}
        result = augmentation_experiment(source, models, SplitSpec(seed=0), GenerationConfig(count=270, gibbs_iters=2),
                                         ClassifierConfig(epochs=2))
        before, after = result.meta["hashes_before"], result.meta["hashes_after"]
        assert before["validation"] == after["validation"] and before["test"] == after["test"]
        assert before["train"] != after["train"]
        for label in CLASSES[1:]:
            assert result.augmented.class_counts()[label] - result.split.class_counts()[label] == 10
        table = result.tsv().splitlines()
        assert table[0] == "metric\tbefore\tafter\tdelta" and table[1].startswith("accuracy\t")

    def test_missing_class(self, source):
        partial = {k: v for k, v in source.items() if k is not AttackType.RPM}
        with pytest.raises(ValueError, match="rpm"):
            augmentation_experiment(partial, {})

    def test_training_attack_data(self, source):
        windows = windows_from_log(source[AttackType.GEAR], AttackType.GEAR)
        split = split_windows(windows + windows_from_log(source[None], None), SplitSpec(seed=2))
        data = training_attack_data(source[AttackType.GEAR], split, AttackType.GEAR)
        frames = filter_standard_frames(source[AttackType.GEAR])
        expected = sum(f.injected for w in split.train if w.label is G for f in frames[w.start:w.start + 27])
        assert len(data) == expected > 0
        _, ids, _ = decode_matrix(data.matrix)
        assert set(ids.tolist()) == {0x43F}
        dos = training_attack_data(source[AttackType.DOS], split, AttackType.DOS)
        assert len(dos) == 0 and dos.matrix.shape == (0, 16)

    def test_windows_from_log_filters_dlc(self):
        frames = [CanFrame(i * 1e-3, 0x100, 8, (0,) * 8) for i in range(27)]
        frames.insert(5, CanFrame(0.0045, 0x2B0, 5, (1, 2, 3, 4, 5), Label.INJECTED))
        (w,) = windows_from_log(frames, AttackType.GEAR)
        assert w.label is N and w.matrix.shape == (WINDOW_WIDTH, 96)
