"""Bernoulli-Bernoulli restricted Boltzmann machine.

Energy of a joint state::

    E(v, h) = -a.v - b.h - v.W.h

with ``W`` indexed ``[visible, hidden]`` everywhere. Both conditionals factorize
into logistic units::

    p(h_j = 1 | v) = sigmoid(b_j + sum_i v_i W[i, j])
    p(v_i = 1 | h) = sigmoid(a_i + sum_j W[i, j] h_j)

Besides training and sampling, the module carries exact oracles for models
small enough to enumerate (partition function, joint table, log-likelihood
gradient); these exist to validate the stochastic paths.
"""

from __future__ import annotations

import hashlib
import io
import itertools
import logging
from dataclasses import dataclass, field
from typing import IO, Union

import numpy as np
from scipy.special import expit, logsumexp

from .codec import AttackType, EncodedDataset, Mode
from .errors import DimensionError, EnumerationTooLargeError, ModelFormatError

logger = logging.getLogger(__name__)

MAX_ENUMERATION_UNITS = 20
FORMAT_MAGIC = "CANRBM v1"


@dataclass
class RbmModel:
    a: np.ndarray
    b: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.a = np.array(self.a, dtype=np.float64).reshape(-1)
        self.b = np.array(self.b, dtype=np.float64).reshape(-1)
        self.w = np.array(self.w, dtype=np.float64)
        if self.w.shape != (self.a.size, self.b.size):
            raise DimensionError(f"weights {self.w.shape} do not match biases ({self.a.size}, {self.b.size})")
        if self.a.size < 1 or self.b.size < 1:
            raise DimensionError("both layers need at least one unit")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.w))):
            raise ValueError("model parameters must be finite")

    @property
    def kv(self) -> int:
        return self.a.size

    @property
    def kh(self) -> int:
        return self.b.size

    @property
    def parameter_count(self) -> int:
        return self.kv + self.kh + self.kv * self.kh

    def copy(self) -> "RbmModel":
        return RbmModel(self.a.copy(), self.b.copy(), self.w.copy())

    def fingerprint(self) -> str:
        """Short content hash of the parameters, used as a model id in provenance records."""
        digest = hashlib.sha256()
        for arr in (self.a, self.b, self.w):
            digest.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return digest.hexdigest()[:16]

    def __eq__(self, other) -> bool:
        if not isinstance(other, RbmModel):
            return NotImplemented
        return (np.array_equal(self.a, other.a) and np.array_equal(self.b, other.b)
                and np.array_equal(self.w, other.w))


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.1
    epochs: int = 30
    cd_k: int = 1
    batch_size: int = 64
    seed: int = 0
    init_sigma: float = 0.01

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.cd_k < 1:
            raise ValueError("cd_k must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.init_sigma >= 0:
            raise ValueError("init_sigma must be >= 0")


@dataclass
class TrainReport:
    model: RbmModel
    reconstruction_error: list[float] = field(default_factory=list)

    @property
    def epochs_completed(self) -> int:
        return len(self.reconstruction_error)


def init_rbm(kv: int, kh: int, seed: int = 0, init_sigma: float = 0.01) -> RbmModel:
    if kv < 1 or kh < 1:
        raise DimensionError(f"layer sizes must be positive, got kv={kv}, kh={kh}")
    if init_sigma < 0:
        raise ValueError("init_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, init_sigma, size=(kv, kh)) if init_sigma > 0 else np.zeros((kv, kh))
    return RbmModel(np.zeros(kv), np.zeros(kh), w)


def _check_width(x: np.ndarray, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (width,):
        raise DimensionError(f"{what} needs trailing dimension {width}, got shape {x.shape}")
    return x


def energy(model: RbmModel, v, h) -> float | np.ndarray:
    """E(v, h); broadcasts over leading batch dimensions of ``v`` and ``h``."""
    v = _check_width(v, model.kv, "visible state")
    h = _check_width(h, model.kh, "hidden state")
    return -(v @ model.a) - (h @ model.b) - np.einsum("...i,ij,...j->...", v, model.w, h)


def hidden_probs(model: RbmModel, v) -> np.ndarray:
    v = _check_width(v, model.kv, "visible state")
    return expit(model.b + v @ model.w)


def visible_probs(model: RbmModel, h) -> np.ndarray:
    h = _check_width(h, model.kh, "hidden state")
    return expit(model.a + h @ model.w.T)


def sample_bits(probs, rng: np.random.Generator) -> np.ndarray:
    """Independent Bernoulli draws, one per entry of ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any((probs < 0) | (probs > 1)) or np.any(np.isnan(probs)):
        raise ValueError("probabilities must lie in [0, 1]")
    return (rng.random(probs.shape) < probs).astype(np.uint8)


def gibbs_chain(model: RbmModel, v0, steps: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Run ``steps`` rounds of h ~ p(h|v), v ~ p(v|h) from ``v0``.

    ``v0`` may be a single state or a batch of independent chains (one per row).
    Returns the final visible state and the hidden state that produced it.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    v = _check_width(v0, model.kv, "visible state")
    h = None
    for _ in range(steps):
        h = sample_bits(hidden_probs(model, v), rng)
        v = sample_bits(visible_probs(model, h), rng)
    return v, h


def _as_matrix(dataset, kv: int) -> np.ndarray:
    matrix = dataset.matrix if isinstance(dataset, EncodedDataset) else np.asarray(dataset)
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if matrix.shape[0] == 0 or matrix.size == 0:
        raise ValueError("training dataset is empty")
    if matrix.shape[1] != kv:
        raise DimensionError(f"dataset rows have {matrix.shape[1]} bits, model expects {kv}")
    return matrix


def cd_update(model: RbmModel, v: np.ndarray, cd_k: int, rng: np.random.Generator):
    """Per-row CD-k statistics for a batch ``v``.

    Returns ``(da, db, dw, v_neg)`` where each delta is the batch mean of
    ``v - v'``, ``p(h|v) - p(h|v')`` and ``v p(h|v)^T - v' p(h|v')^T``
    (unscaled by the learning rate), and ``v_neg`` is the sampled reconstruction.
    """
    ph_pos = hidden_probs(model, v)
    h = sample_bits(ph_pos, rng)
    for step in range(cd_k):
        v_neg = sample_bits(visible_probs(model, h), rng).astype(np.float64)
        ph_neg = hidden_probs(model, v_neg)
        if step + 1 < cd_k:
            h = sample_bits(ph_neg, rng)
    n = v.shape[0]
    da = (v - v_neg).mean(axis=0)
    db = (ph_pos - ph_neg).mean(axis=0)
    dw = (v.T @ ph_pos - v_neg.T @ ph_neg) / n
    return da, db, dw, v_neg


def train_cd(model: RbmModel, dataset, config: TrainConfig = TrainConfig()) -> TrainReport:
    """Contrastive-divergence training, in place on ``model``.

    Each epoch visits the data in a seeded random order, in mini-batches of
    ``config.batch_size`` (``batch_size=1`` gives the per-sample loop). The
    weight update uses hidden activation probabilities in both phases. The
    per-epoch reconstruction error is the mean Hamming distance between each
    input and its sampled reconstruction.
    """
    data = _as_matrix(dataset, model.kv)
    rng = np.random.default_rng(config.seed)
    report = TrainReport(model)
    n = data.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        hamming = 0.0
        for start in range(0, n, config.batch_size):
            v = data[order[start:start + config.batch_size]]
            da, db, dw, v_neg = cd_update(model, v, config.cd_k, rng)
            model.a += config.eta * da
            model.b += config.eta * db
            model.w += config.eta * dw
            hamming += float(np.abs(v - v_neg).sum())
        report.reconstruction_error.append(hamming / n)
        logger.debug("epoch %d reconstruction error %.4f", epoch + 1, report.reconstruction_error[-1])
    return report


# --------------------------------------------------------------------------- exact oracles

def all_states(n: int) -> np.ndarray:
    """Every {0,1}^n vector, in binary counting order (first column most significant)."""
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.float64).reshape(2**n, n)


@dataclass
class ExactDistribution:
    visible_states: np.ndarray
    hidden_states: np.ndarray
    joint: np.ndarray  # [visible state, hidden state]
    log_z: float

    @property
    def z(self) -> float:
        return float(np.exp(self.log_z))

    @property
    def marginal_v(self) -> np.ndarray:
        return self.joint.sum(axis=1)

    @property
    def marginal_h(self) -> np.ndarray:
        return self.joint.sum(axis=0)

    def visible_index(self, v) -> int:
        v = np.asarray(v, dtype=np.int64).reshape(-1)
        return int(v @ (1 << np.arange(v.size - 1, -1, -1)))


def _check_enumerable(model: RbmModel) -> None:
    if model.kv + model.kh > MAX_ENUMERATION_UNITS:
        raise EnumerationTooLargeError(
            f"kv + kh = {model.kv + model.kh} exceeds the enumeration limit of {MAX_ENUMERATION_UNITS}")


def exact_distribution(model: RbmModel) -> ExactDistribution:
    """Enumerate p(v, h) = exp(-E(v, h)) / Z over all 2^(kv+kh) joint states."""
    _check_enumerable(model)
    vs = all_states(model.kv)
    hs = all_states(model.kh)
    neg_energy = (vs @ model.a)[:, None] + (hs @ model.b)[None, :] + vs @ model.w @ hs.T
    log_z = float(logsumexp(neg_energy))
    return ExactDistribution(vs, hs, np.exp(neg_energy - log_z), log_z)


def free_energy(model: RbmModel, v) -> np.ndarray:
    """F(v) = -log sum_h exp(-E(v, h)), with the hidden sum done analytically."""
    v = _check_width(v, model.kv, "visible state")
    return -(v @ model.a) - np.logaddexp(0.0, model.b + v @ model.w).sum(axis=-1)


def log_likelihood(model: RbmModel, data, weights=None) -> float:
    """Mean (or weighted mean) exact log p(v) over ``data``."""
    _check_enumerable(model)
    data = _as_matrix(data, model.kv)
    dist = exact_distribution(model)
    ll = -free_energy(model, data) - dist.log_z
    return float(np.average(ll, weights=weights))


def exact_loglik_gradient(model: RbmModel, dataset, weights=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradient of the mean log-likelihood with respect to (a, b, W).

    The data term uses analytic hidden activations; the model term is read off
    the enumerated joint. ``weights`` optionally weights the data rows.
    """
    _check_enumerable(model)
    data = _as_matrix(dataset, model.kv)
    if weights is None:
        weights = np.full(data.shape[0], 1.0 / data.shape[0])
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (data.shape[0],):
            raise DimensionError("one weight per data row required")
        weights = weights / weights.sum()
    ph = hidden_probs(model, data)
    data_v = weights @ data
    data_h = weights @ ph
    data_vh = (data * weights[:, None]).T @ ph

    dist = exact_distribution(model)
    model_v = dist.marginal_v @ dist.visible_states
    model_h = dist.marginal_h @ dist.hidden_states
    model_vh = dist.visible_states.T @ dist.joint @ dist.hidden_states
    return data_v - model_v, data_h - model_h, data_vh - model_vh


# --------------------------------------------------------------------------- persistence

@dataclass(frozen=True)
class ModelMeta:
    attack_type: AttackType | None = None
    mode: Mode | None = None
    scale_factor: int = 10**6
    comments: tuple[str, ...] = ()

    @classmethod
    def for_attack(cls, attack_type: AttackType, scale_factor: int = 10**6, comments=()) -> "ModelMeta":
        return cls(attack_type, attack_type.mode, scale_factor, tuple(comments))


def _fmt(values) -> str:
    return " ".join(repr(float(x)) for x in values)


def save_model(model: RbmModel, meta: ModelMeta = ModelMeta()) -> bytes:
    """Serialize to the versioned text format (full round-trip float precision)."""
    if meta.mode is not None and meta.mode.width != model.kv:
        raise DimensionError(f"{meta.mode.value} models need {meta.mode.width} visible units, got {model.kv}")
    attack = meta.attack_type.value if meta.attack_type else "-"
    mode = meta.mode.value if meta.mode else "-"
    lines = [FORMAT_MAGIC, f"{attack} {mode} {model.kv} {model.kh} {meta.scale_factor}"]
    lines += [f"# {c}" for c in meta.comments]
    lines += [f"a {model.kv}", _fmt(model.a), f"b {model.kh}", _fmt(model.b), f"W {model.kv} {model.kh}"]
    lines += [_fmt(row) for row in model.w]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _floats(line: str, expected: int, what: str) -> np.ndarray:
    try:
        values = [float(t) for t in line.split()]
    except ValueError as exc:
        raise ModelFormatError(f"non-numeric value in {what}") from exc
    if len(values) != expected:
        raise DimensionError(f"{what} declares {expected} values, found {len(values)}")
    return np.array(values)


def load_model(source: Union[bytes, str, IO[bytes], IO[str]]) -> tuple[RbmModel, ModelMeta]:
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    elif isinstance(source, str):
        text = source
    else:
        raw = source.read()
        text = raw.decode("utf-8") if isinstance(raw, bytes) else raw
    lines = text.splitlines()
    comments = tuple(line[1:].strip() for line in lines if line.startswith("#"))
    body = [line for line in lines if not line.startswith("#")]
    if not body or body[0].strip() != FORMAT_MAGIC:
        found = body[0].strip() if body else "<empty>"
        raise ModelFormatError(f"unsupported model format {found!r}, expected {FORMAT_MAGIC!r}")
    expected_lines = None
    try:
        attack, mode, kv_s, kh_s, scale_s = body[1].split()
        kv, kh, scale = int(kv_s), int(kh_s), int(scale_s)
        expected_lines = 2 + 2 + 2 + 1 + kv
        if len(body) < expected_lines:
            raise ModelFormatError(f"truncated model: {len(body)} of {expected_lines} lines")
        if body[2].split() != ["a", str(kv)] or body[4].split() != ["b", str(kh)] \
                or body[6].split() != ["W", str(kv), str(kh)]:
            raise DimensionError("section headers disagree with declared layer sizes")
        a = _floats(body[3], kv, "a")
        b = _floats(body[5], kh, "b")
        w = np.stack([_floats(body[7 + i], kh, f"W row {i}") for i in range(kv)])
        meta = ModelMeta(
            None if attack == "-" else AttackType(attack),
            None if mode == "-" else Mode(mode),
            scale,
            comments,
        )
    except (IndexError, ValueError) as exc:
        raise ModelFormatError(f"malformed model header or body: {exc}") from exc
    if len(body) > expected_lines and any(line.strip() for line in body[expected_lines:]):
        raise DimensionError("trailing data after the declared weight rows")
    if meta.mode is not None and meta.mode.width != kv:
        raise DimensionError(f"{meta.mode.value} model declares kv={kv}")
    return RbmModel(a, b, w), meta


def write_model(path, model: RbmModel, meta: ModelMeta = ModelMeta()) -> None:
    with open(path, "wb") as fh:
        fh.write(save_model(model, meta))


def read_model(path) -> tuple[RbmModel, ModelMeta]:
    with open(path, "rb") as fh:
        return load_model(io.BytesIO(fh.read()))
