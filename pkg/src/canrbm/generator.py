"""Synthetic attack frames sampled from a trained RBM.

Each sample starts from a uniform random hidden vector and is carried through
``gibbs_iters`` visible/hidden round trips; the last visible state is the
output. Samples are produced in fixed-size shards with seeds spawned from the
configured seed, so the result only depends on (model, config), not on how
many workers ran the shards.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import IO

import numpy as np

from .codec import (DEFAULT_SCALE_FACTOR, AttackType, BitVector, GeneratedFrame, Mode, Provenance,
                    decode_matrix, encode_matrix)
from .errors import DimensionError
from .rbm import RbmModel, hidden_probs, sample_bits, visible_probs
from .windows import WINDOW_WIDTH, WindowLabel, WindowSample, WindowSplit, window_frames

logger = logging.getLogger(__name__)


class OutputMode(Enum):
    STOCHASTIC = "stochastic"
    DETERMINISTIC = "deterministic"


@dataclass(frozen=True)
class GenerationConfig:
    count: int = 10_000
    gibbs_iters: int = 50
    seed: int = 0
    output_mode: OutputMode = OutputMode.STOCHASTIC
    shard_size: int = 4096
    workers: int = 1

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.gibbs_iters < 1:
            raise ValueError("gibbs_iters must be >= 1")
        if self.shard_size < 1 or self.workers < 1:
            raise ValueError("shard_size and workers must be >= 1")


def _run_shard(model: RbmModel, n: int, config: GenerationConfig, seed_seq: np.random.SeedSequence) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    h = sample_bits(np.full((n, model.kh), 0.5), rng)
    for it in range(config.gibbs_iters):
        pv = visible_probs(model, h)
        if it + 1 == config.gibbs_iters and config.output_mode is OutputMode.DETERMINISTIC:
            return (pv >= 0.5).astype(np.uint8)
        v = sample_bits(pv, rng)
        if it + 1 < config.gibbs_iters:
            h = sample_bits(hidden_probs(model, v), rng)
    return v


def generate_matrix(model: RbmModel, config: GenerationConfig) -> np.ndarray:
    """``config.count x model.kv`` array of generated bits, in (shard, index) order."""
    sizes = [min(config.shard_size, config.count - s) for s in range(0, config.count, config.shard_size)]
    seeds = np.random.SeedSequence(config.seed).spawn(len(sizes))
    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            shards = list(pool.map(lambda args: _run_shard(model, args[0], config, args[1]), zip(sizes, seeds)))
    else:
        shards = [_run_shard(model, n, config, s) for n, s in zip(sizes, seeds)]
    return np.concatenate(shards, axis=0)


def generate_bitvectors(model: RbmModel, config: GenerationConfig) -> list[BitVector]:
    mode = Mode.for_width(model.kv)
    return [BitVector(row, mode) for row in generate_matrix(model, config)]


def frames_from_matrix(matrix: np.ndarray, model_id: str = "", seed: int = 0) -> list[GeneratedFrame]:
    deltas, ids, payloads = decode_matrix(matrix)
    if ids is None:
        return [GeneratedFrame(int(d), provenance=Provenance(model_id, seed, i)) for i, d in enumerate(deltas)]
    return [
        GeneratedFrame(int(d), int(c), tuple(int(x) for x in p), Provenance(model_id, seed, i))
        for i, (d, c, p) in enumerate(zip(deltas, ids, payloads))
    ]


def generate_frames(model: RbmModel, config: GenerationConfig,
                    scale_factor: int = DEFAULT_SCALE_FACTOR) -> list[GeneratedFrame]:
    """Generate and decode frames; ``delta_ticks`` are in units of ``1/scale_factor`` s."""
    Mode.for_width(model.kv)
    if scale_factor < 1:
        raise ValueError("scale_factor must be a positive integer")
    return frames_from_matrix(generate_matrix(model, config), model.fingerprint(), config.seed)


def frames_to_full96(frames: Sequence[GeneratedFrame]) -> np.ndarray:
    """Re-encode generated frames as Full96 rows; timing-only frames become id 0 with a zero payload."""
    if not frames:
        return np.zeros((0, 96), dtype=np.uint8)
    ids = [f.can_id if f.can_id is not None else 0 for f in frames]
    payloads = [f.data if f.data is not None else (0,) * 8 for f in frames]
    return encode_matrix([f.delta_ticks for f in frames], ids, payloads, Mode.FULL96)


# --------------------------------------------------------------------------- generated CSV

def write_generated_csv(frames: Sequence[GeneratedFrame], stream: IO[str]) -> None:
    """Rows follow the input log schema with flag ``T``; the timestamp column holds integer delta ticks."""
    for f in frames:
        can_id = f.can_id if f.can_id is not None else 0
        data = f.data if f.data is not None else (0,) * 8
        stream.write(f"{f.delta_ticks},{can_id:04x},8,{','.join(f'{b:02x}' for b in data)},T\n")


def read_generated_csv(stream, mode: Mode = Mode.FULL96) -> list[GeneratedFrame]:
    frames = []
    for line_no, line in enumerate(stream, start=1):
        line = line.decode("utf-8") if isinstance(line, bytes) else line
        if not line.strip():
            continue
        fields = line.strip().split(",")
        if len(fields) != 12 or fields[2] != "8" or fields[-1] != "T":
            raise ValueError(f"line {line_no}: not a generated-frame row: {line.strip()!r}")
        delta = int(fields[0])
        if mode is Mode.DOS16:
            frames.append(GeneratedFrame(delta, provenance=Provenance("", 0, line_no - 1)))
        else:
            frames.append(GeneratedFrame(delta, int(fields[1], 16), tuple(int(b, 16) for b in fields[3:11]),
                                         Provenance("", 0, line_no - 1)))
    return frames


def manifest_line(model: RbmModel, config: GenerationConfig, scale_factor: int, **extra) -> str:
    items = {
        "model_id": model.fingerprint(),
        "seed": config.seed,
        "gibbs_iters": config.gibbs_iters,
        "scale_factor": scale_factor,
        "count": config.count,
        "output_mode": config.output_mode.value,
        "timestamp_column": "delta_ticks",
        **extra,
    }
    return " ".join(f"{k}={v}" for k, v in items.items())


# --------------------------------------------------------------------------- augmentation

def generated_windows(frames: Sequence[GeneratedFrame], label: WindowLabel,
                      width: int = WINDOW_WIDTH) -> list[WindowSample]:
    """Window consecutive generated frames; every frame counts as injected of ``label``."""
    if len(frames) < width:
        return []
    return window_frames(frames_to_full96(frames), [label] * len(frames), width)


def augment_dataset(original: WindowSplit,
                    generated: Mapping[WindowLabel | AttackType, Sequence[GeneratedFrame]],
                    width: int = WINDOW_WIDTH) -> WindowSplit:
    """Append windowed generated frames to the training partition only.

    Validation and test partitions are passed through as the same objects.
    """
    if not original.train or all(w.label is not WindowLabel.NORMAL for w in original.train):
        raise ValueError("original training partition must contain regular (normal) windows")
    extra: list[WindowSample] = []
    for key, frames in generated.items():
        label = key if isinstance(key, WindowLabel) else WindowLabel.of(key)
        if label is WindowLabel.NORMAL:
            raise ValueError("generated frames cannot carry the regular/normal label")
        extra.extend(generated_windows(frames, label, width))
    logger.info("augmenting training set with %d generated windows", len(extra))
    return WindowSplit(original.train + tuple(extra), original.validation, original.test, dict(original.indices))


def check_mode(model: RbmModel, attack_type: AttackType) -> None:
    if model.kv != attack_type.mode.width:
        raise DimensionError(
            f"{attack_type.value} generator needs {attack_type.mode.width} visible units, model has {model.kv}")
