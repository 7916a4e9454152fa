"""27-frame windows: the classification unit of the intrusion-detection proxy.

A window stacks consecutive Full96-encoded frames into a ``width x 96`` bit
matrix. It can be exported losslessly as a binary PGM image (bit 0 -> black,
bit 1 -> white).
"""

from __future__ import annotations

import hashlib
import os
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .codec import AttackType, Mode
from .errors import DimensionError

WINDOW_WIDTH = 27


class WindowLabel(Enum):
    NORMAL = "normal"
    DOS = "dos"
    FUZZY = "fuzzy"
    GEAR = "gear"
    RPM = "rpm"

    @classmethod
    def of(cls, attack_type: AttackType | None) -> "WindowLabel":
        return cls.NORMAL if attack_type is None else cls(attack_type.value)

    @property
    def index(self) -> int:
        return list(WindowLabel).index(self)


CLASSES: tuple[WindowLabel, ...] = tuple(WindowLabel)


@dataclass(frozen=True, eq=False)
class WindowSample:
    matrix: np.ndarray
    label: WindowLabel
    start: int = -1  # index of the first frame in its source log; -1 for synthetic windows

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.uint8)
        if matrix.ndim != 2 or matrix.shape[1] != Mode.FULL96.width:
            raise DimensionError(f"window rows must be 96 bits, got shape {matrix.shape}")
        if np.any(matrix > 1):
            raise ValueError("window entries must be 0 or 1")
        matrix.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)

    def __eq__(self, other) -> bool:
        if not isinstance(other, WindowSample):
            return NotImplemented
        return self.label is other.label and np.array_equal(self.matrix, other.matrix)

    def __hash__(self) -> int:
        return hash((self.label, self.matrix.tobytes()))


def _window_label(row_labels: Sequence[WindowLabel]) -> WindowLabel:
    injected = [lab for lab in row_labels if lab is not WindowLabel.NORMAL]
    if not injected:
        return WindowLabel.NORMAL
    counts = Counter(injected)
    top = max(counts.values())
    # majority injected class; ties go to the class seen first in the window
    return next(lab for lab in injected if counts[lab] == top)


def window_frames(encoded: np.ndarray | Sequence, labels: Sequence[WindowLabel | AttackType | None],
                  width: int = WINDOW_WIDTH) -> list[WindowSample]:
    """Cut encoded frames into consecutive, non-overlapping windows of ``width`` rows.

    ``labels`` gives one entry per frame: ``None`` or ``WindowLabel.NORMAL`` for
    regular frames, the attack class for injected ones. A window is labeled
    normal only if all of its frames are regular. The tail that does not fill a
    window is dropped.
    """
    if width < 1:
        raise ValueError("window width must be >= 1")
    rows = np.asarray([getattr(v, "bits", v) for v in encoded] if not isinstance(encoded, np.ndarray) else encoded,
                      dtype=np.uint8)
    if rows.size == 0:
        raise ValueError("no frames to window")
    if rows.ndim != 2 or rows.shape[1] != Mode.FULL96.width:
        raise DimensionError(f"windows need 96-bit rows, got shape {rows.shape}")
    if len(labels) != rows.shape[0]:
        raise DimensionError("one label per frame required")
    norm = [lab if isinstance(lab, WindowLabel) else WindowLabel.of(lab) for lab in labels]
    return [
        WindowSample(rows[s:s + width], _window_label(norm[s:s + width]), s)
        for s in range(0, rows.shape[0] - width + 1, width)
    ]


def content_hash(windows: Iterable[WindowSample]) -> str:
    """Order-sensitive digest of window contents and labels."""
    digest = hashlib.sha256()
    for w in windows:
        digest.update(w.label.value.encode())
        digest.update(np.asarray(w.matrix.shape, dtype="<i8").tobytes())
        digest.update(w.matrix.tobytes())
    return digest.hexdigest()


@dataclass(frozen=True)
class WindowSplit:
    train: tuple[WindowSample, ...]
    validation: tuple[WindowSample, ...] = ()
    test: tuple[WindowSample, ...] = ()
    indices: dict = field(default_factory=dict, compare=False)  # partition -> source window indices

    def hashes(self) -> dict[str, str]:
        return {name: content_hash(getattr(self, name)) for name in ("train", "validation", "test")}

    def class_counts(self, partition: str = "train") -> dict[WindowLabel, int]:
        counts = Counter(w.label for w in getattr(self, partition))
        return {lab: counts.get(lab, 0) for lab in CLASSES}


# --------------------------------------------------------------------------- image export

def _pgm_bytes(matrix: np.ndarray) -> bytes:
    rows, cols = matrix.shape
    header = f"P5\n{cols} {rows}\n255\n".encode("ascii")
    return header + (matrix.astype(np.uint8) * 255).tobytes()


def export_window_images(windows: Sequence[WindowSample], directory: str | os.PathLike) -> list[Path]:
    """Write one binary PGM per window, named ``<index>_<label>.pgm``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, w in enumerate(windows):
        path = directory / f"{i:06d}_{w.label.value}.pgm"
        path.write_bytes(_pgm_bytes(w.matrix))
        paths.append(path)
    return paths


def read_window_image(path: str | os.PathLike) -> np.ndarray:
    """Read a binary PGM written by :func:`export_window_images` back into a bit matrix."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode("ascii"))
        pos = end
    magic, cols, rows, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic != "P5" or maxval != 255:
        raise ValueError(f"{path}: not an 8-bit binary graymap")
    pixels = np.frombuffer(raw[pos + 1:pos + 1 + rows * cols], dtype=np.uint8)
    if pixels.size != rows * cols:
        raise ValueError(f"{path}: truncated image data")
    return (pixels.reshape(rows, cols) > 127).astype(np.uint8)
