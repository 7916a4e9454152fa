"""Desk-scale intrusion-detection experiment.

A multinomial logistic regression over flattened 27x96 windows stands in for
the image CNNs: it is a proxy that keeps the before/after augmentation logic
(imbalance hurts minority recall, synthetic attack windows restore it), not a
reproduction of CNN numbers.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import log_softmax, softmax

from .codec import DEFAULT_SCALE_FACTOR, AttackType, CanFrame, EncodedDataset, Mode, encode_frames, \
    filter_standard_frames, normalize_timestamps
from .errors import DimensionError
from .generator import GenerationConfig, augment_dataset, check_mode, generate_frames
from .metrics import ClassificationReport, ConfusionTally, classification_metrics, macro_ovr_auc
from .rbm import RbmModel
from .windows import CLASSES, WINDOW_WIDTH, WindowLabel, WindowSample, WindowSplit, window_frames

logger = logging.getLogger(__name__)

N_FEATURES = WINDOW_WIDTH * Mode.FULL96.width


@dataclass(frozen=True)
class ClassifierConfig:
    epochs: int = 10
    lr: float = 0.01
    batch_size: int = 64
    l2: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0 or self.l2 < 0:
            raise ValueError(f"invalid classifier config {self}")


@dataclass
class LinearClassifier:
    weights: np.ndarray  # (n_classes, n_features)
    bias: np.ndarray
    seed: int = 0
    epochs: int = 0
    classes: tuple[WindowLabel, ...] = CLASSES

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[0] != len(self.classes) \
                or self.bias.shape != (len(self.classes),):
            raise DimensionError("classifier weights and bias disagree with the class list")

    @classmethod
    def zeros(cls, n_features: int = N_FEATURES, seed: int = 0) -> "LinearClassifier":
        return cls(np.zeros((len(CLASSES), n_features)), np.zeros(len(CLASSES)), seed, 0)

    def decision(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weights.T + self.bias

    def predict_proba(self, windows: Sequence[WindowSample] | np.ndarray) -> np.ndarray:
        return softmax(self.decision(_features(windows)), axis=1)

    def predict(self, windows: Sequence[WindowSample] | np.ndarray) -> list[WindowLabel]:
        return [self.classes[k] for k in np.argmax(self.decision(_features(windows)), axis=1)]


def _features(windows: Sequence[WindowSample] | np.ndarray) -> np.ndarray:
    if isinstance(windows, np.ndarray):
        return windows.reshape(windows.shape[0], -1).astype(np.float64)
    if not windows:
        return np.zeros((0, N_FEATURES))
    return np.stack([w.matrix.reshape(-1) for w in windows]).astype(np.float64)


def _canonical_order(windows: Sequence[WindowSample]) -> list[WindowSample]:
    # makes training independent of how the caller ordered the samples
    return sorted(windows, key=lambda w: (w.label.index, w.matrix.tobytes()))


def train_classifier(train: Sequence[WindowSample], config: ClassifierConfig = ClassifierConfig(),
                     validation: Sequence[WindowSample] = ()) -> LinearClassifier:
    """Mini-batch gradient descent on the L2-regularized softmax cross-entropy, from zero weights.

    With a nonempty ``validation`` set the parameters of the epoch with the
    lowest validation cross-entropy are returned instead of the last ones.
    """
    if len({w.label for w in train}) < 2:
        raise ValueError("training set needs at least two classes")
    ordered = _canonical_order(train)
    x = _features(ordered)
    y = np.array([w.label.index for w in ordered])
    onehot = np.eye(len(CLASSES))[y]
    model = LinearClassifier.zeros(x.shape[1], config.seed)
    rng = np.random.default_rng(config.seed)
    best = (np.inf, model.weights.copy(), model.bias.copy(), 0)
    for epoch in range(config.epochs):
        order = rng.permutation(len(y))
        for s in range(0, len(y), config.batch_size):
            idx = order[s:s + config.batch_size]
            err = softmax(model.decision(x[idx]), axis=1) - onehot[idx]
            model.weights -= config.lr * (err.T @ x[idx] / len(idx) + config.l2 * model.weights)
            model.bias -= config.lr * err.mean(axis=0)
        model.epochs = epoch + 1
        if validation:
            loss = cross_entropy(model, validation)
            if loss < best[0]:
                best = (loss, model.weights.copy(), model.bias.copy(), epoch + 1)
    if validation and config.epochs:
        _, model.weights, model.bias, model.epochs = best
    return model


def cross_entropy(model: LinearClassifier, windows: Sequence[WindowSample]) -> float:
    y = np.array([w.label.index for w in windows])
    return float(-log_softmax(model.decision(_features(windows)), axis=1)[np.arange(len(y)), y].mean())


def evaluate_classifier(model: LinearClassifier, test: Sequence[WindowSample]) -> ClassificationReport:
    if not test:
        raise ValueError("test set is empty")
    probs = model.predict_proba(test)
    pred = [model.classes[k] for k in np.argmax(probs, axis=1)]
    truth = [w.label for w in test]
    tally = ConfusionTally.from_predictions(truth, pred, model.classes)
    auc, per_class = macro_ovr_auc(probs, [t.index for t in truth], [c.value for c in model.classes])
    return classification_metrics(tally, auc, per_class)


# --------------------------------------------------------------------------- split protocol

@dataclass(frozen=True)
class SplitSpec:
    """Per-group (train, validation, test) fractions; normal and attack classes are split separately."""

    normal: tuple[float, float, float] = (0.8, 0.2, 0.0)
    abnormal: tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = 0

    def __post_init__(self):
        for fr in (self.normal, self.abnormal):
            if len(fr) != 3 or any(not 0 <= f <= 1 for f in fr) or fr[0] + fr[1] > 1 or sum(fr) > 1 + 1e-9:
                raise ValueError(f"invalid split fractions {fr}")


def split_windows(windows: Sequence[WindowSample], spec: SplitSpec = SplitSpec()) -> WindowSplit:
    """Seeded per-class split. ``indices`` records the input positions of each partition."""
    parts: dict[str, list[int]] = {"train": [], "validation": [], "test": []}
    for label in CLASSES:
        members = [i for i, w in enumerate(windows) if w.label is label]
        if not members:
            continue
        fr = spec.normal if label is WindowLabel.NORMAL else spec.abnormal
        rng = np.random.default_rng([spec.seed, label.index])
        members = [members[i] for i in rng.permutation(len(members))]
        n = len(members)
        n_train = int(round(fr[0] * n))
        n_val = min(int(round(fr[1] * n)), n - n_train)
        n_test = min(int(round(fr[2] * n)), n - n_train - n_val)
        parts["train"] += members[:n_train]
        parts["validation"] += members[n_train:n_train + n_val]
        parts["test"] += members[n_train + n_val:n_train + n_val + n_test]
    for name in parts:
        parts[name].sort()
    if not parts["train"] or not parts["test"]:
        raise ValueError("split leaves an empty training or test partition")
    pick = lambda name: tuple(windows[i] for i in parts[name])  # noqa: E731
    return WindowSplit(pick("train"), pick("validation"), pick("test"), parts)


def windows_from_log(frames: Sequence[CanFrame], attack_type: AttackType | None,
                     scale_factor: int = DEFAULT_SCALE_FACTOR, width: int = WINDOW_WIDTH) -> list[WindowSample]:
    """Encode a capture (dlc filter, deltas, Full96) and window it; injected frames carry ``attack_type``."""
    standard = filter_standard_frames(frames)
    if not standard:
        return []
    encoded = encode_frames(standard, normalize_timestamps(standard, scale_factor))
    labels = [attack_type if (f.injected and attack_type is not None) else None for f in standard]
    return window_frames(encoded, labels, width)


def training_attack_data(frames: Sequence[CanFrame], split: WindowSplit, attack_type: AttackType,
                         scale_factor: int = DEFAULT_SCALE_FACTOR, width: int = WINDOW_WIDTH) -> EncodedDataset:
    """Injected frames of ``attack_type`` that fall inside its training windows, encoded for that attack's RBM.

    ``frames`` must be the capture the windows were cut from. Deltas are taken
    over the whole filtered capture, as in :func:`canrbm.codec.preprocess`.
    """
    standard = filter_standard_frames(frames)
    label = WindowLabel.of(attack_type)
    rows = sorted({i for w in split.train if w.label is label and w.start >= 0
                   for i in range(w.start, w.start + width) if standard[i].injected})
    if not rows:
        return EncodedDataset(np.zeros((0, attack_type.mode.width), dtype=np.uint8), attack_type, scale_factor)
    deltas = normalize_timestamps(standard, scale_factor)
    matrix = encode_frames([standard[i] for i in rows], [deltas[i] for i in rows], attack_type.mode)
    return EncodedDataset(matrix, attack_type, scale_factor)


# --------------------------------------------------------------------------- experiment

@dataclass
class ComparisonReport:
    before: ClassificationReport
    after: ClassificationReport
    split: WindowSplit
    augmented: WindowSplit
    meta: dict = field(default_factory=dict)

    @property
    def accuracy_delta(self) -> float:
        return self.after.accuracy - self.before.accuracy

    @property
    def macro_f1_delta(self) -> float:
        return self.after.macro_f1 - self.before.macro_f1

    def tsv(self) -> str:
        rows = [("metric", "before", "after", "delta")]

        def add(name, b, a):
            if b is None or a is None:
                rows.append((name, "" if b is None else f"{b:.6f}", "" if a is None else f"{a:.6f}", ""))
            else:
                rows.append((name, f"{b:.6f}", f"{a:.6f}", f"{a - b:+.6f}"))

        add("accuracy", self.before.accuracy, self.after.accuracy)
        add("macro_f1", self.before.macro_f1, self.after.macro_f1)
        add("macro_auc", self.before.auc, self.after.auc)
        for c in self.before.f1:
            rows.append((f"support_{c}", str(self.before.support[c]), str(self.after.support[c]), ""))
            add(f"precision_{c}", self.before.precision[c], self.after.precision[c])
            add(f"recall_{c}", self.before.recall[c], self.after.recall[c])
            add(f"f1_{c}", self.before.f1[c], self.after.f1[c])
        for c, n in self.augmented.class_counts("train").items():
            rows.append((f"train_windows_{c.value}", str(self.split.class_counts("train")[c]), str(n),
                         f"{n - self.split.class_counts('train')[c]:+d}"))
        return "".join("\t".join(r) + "\n" for r in rows)


def augmentation_experiment(source: Mapping[WindowLabel | AttackType | None, Sequence[CanFrame]],
                            models: Mapping[AttackType, RbmModel] | Callable[[WindowSplit], Mapping[AttackType, RbmModel]],
                            split: SplitSpec = SplitSpec(),
                            gen_config: GenerationConfig = GenerationConfig(),
                            classifier_config: ClassifierConfig = ClassifierConfig(),
                            scale_factor: int = DEFAULT_SCALE_FACTOR,
                            width: int = WINDOW_WIDTH) -> ComparisonReport:
    """Train the proxy classifier before and after adding generated attack windows.

    ``source`` maps each class (normal plus the four attacks) to its capture.
    ``models`` may also be a callable that receives the raw split and returns
    the models, so generators can be fit on training data only. Each model generates ``gen_config.count`` frames with a per-class seed;
    both classifiers use the same seed and are scored on the same test set.
    """
    logs = {}
    for key, frames in source.items():
        label = key if isinstance(key, WindowLabel) else WindowLabel.of(key)
        logs[label] = frames
    missing = [c.value for c in CLASSES if c not in logs]
    if missing:
        raise ValueError(f"source lacks classes: {', '.join(missing)}")

    windows: list[WindowSample] = []
    for label in CLASSES:
        attack = None if label is WindowLabel.NORMAL else AttackType(label.value)
        windows += windows_from_log(logs[label], attack, scale_factor, width)
    base = split_windows(windows, split)
    if callable(models):
        models = models(base)

    generated = {}
    for attack_type, model in models.items():
        check_mode(model, attack_type)
        cfg = replace(gen_config, seed=int(np.random.SeedSequence([gen_config.seed, WindowLabel.of(attack_type).index])
                                           .generate_state(1)[0]))
        generated[attack_type] = generate_frames(model, cfg, scale_factor)
    augmented = augment_dataset(base, generated, width)

    before = evaluate_classifier(train_classifier(base.train, classifier_config, base.validation), base.test)
    after = evaluate_classifier(train_classifier(augmented.train, classifier_config, augmented.validation),
                                augmented.test)
    logger.info("accuracy %.4f -> %.4f, macro F1 %.4f -> %.4f",
                before.accuracy, after.accuracy, before.macro_f1, after.macro_f1)
    meta = {"hashes_before": base.hashes(), "hashes_after": augmented.hashes()}
    return ComparisonReport(before, after, base, augmented, meta)
