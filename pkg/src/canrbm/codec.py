"""CAN log parsing and the frame <-> bit-vector codec.

Frames are reduced to fixed-width binary vectors for the RBM visible layer:

    Full96: [delta ticks, 16 bits][identifier, 16 bits][8 payload bytes, 64 bits]
    Dos16:  [delta ticks, 16 bits]

All fields are written most-significant bit first. The delta is the gap to the
previous frame on the bus, multiplied by ``scale_factor`` and rounded half-up,
then clamped to an unsigned 16-bit range.
"""

from __future__ import annotations

import io
import logging
import string
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from typing import IO, Union

import numpy as np

from .errors import DatasetFormatError, DimensionError, InvalidFrameError, OrderingError, ParseError

logger = logging.getLogger(__name__)

MAX_STANDARD_ID = 0x7FF
MAX_DELTA = 0xFFFF
STANDARD_DLC = 8
DEFAULT_SCALE_FACTOR = 10**6


class Label(Enum):
    REGULAR = "R"
    INJECTED = "T"


class Mode(Enum):
    FULL96 = "full96"
    DOS16 = "dos16"

    @property
    def width(self) -> int:
        return 96 if self is Mode.FULL96 else 16

    @classmethod
    def for_width(cls, width: int) -> "Mode":
        for mode in cls:
            if mode.width == width:
                return mode
        raise DimensionError(f"no encoding mode has width {width}")


class AttackType(Enum):
    DOS = "dos"
    FUZZY = "fuzzy"
    GEAR = "gear"
    RPM = "rpm"

    @property
    def mode(self) -> Mode:
        # DoS frames are always id 0 with a zero payload, so only timing is modeled.
        return Mode.DOS16 if self is AttackType.DOS else Mode.FULL96


@dataclass(frozen=True)
class CanFrame:
    timestamp: float
    can_id: int
    dlc: int
    data: tuple[int, ...]
    label: Label = Label.REGULAR

    def __post_init__(self):
        object.__setattr__(self, "data", tuple(int(b) for b in self.data))
        if not 0 <= self.dlc <= 8:
            raise InvalidFrameError(f"dlc {self.dlc} outside 0..8")
        if len(self.data) != self.dlc:
            raise InvalidFrameError(f"dlc {self.dlc} but {len(self.data)} data bytes")
        if any(not 0 <= b <= 0xFF for b in self.data):
            raise InvalidFrameError(f"data byte out of range in {self.data}")
        if not 0 <= self.can_id <= MAX_STANDARD_ID:
            raise InvalidFrameError(f"identifier {self.can_id:#x} is not an 11-bit standard id")
        if not self.timestamp >= 0:
            raise InvalidFrameError(f"negative timestamp {self.timestamp}")

    @property
    def injected(self) -> bool:
        return self.label is Label.INJECTED


@dataclass(frozen=True, eq=False)
class BitVector:
    """Fixed-width {0,1} vector in one of the two encoding modes."""

    bits: np.ndarray
    mode: Mode

    def __post_init__(self):
        bits = np.array(self.bits, dtype=np.uint8).reshape(-1)
        if bits.size != self.mode.width:
            raise DimensionError(f"{self.mode.value} vector needs {self.mode.width} bits, got {bits.size}")
        if np.any(bits > 1):
            raise ValueError("bit vector entries must be 0 or 1")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return self.bits.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitVector):
            return NotImplemented
        return self.mode is other.mode and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self) -> int:
        return hash((self.mode, self.bits.tobytes()))

    def __str__(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)


@dataclass
class EncodedDataset:
    """A stack of same-mode bit vectors with the metadata needed to decode them.

    ``matrix`` has one row per vector and ``mode.width`` columns.
    """

    matrix: np.ndarray
    attack_type: AttackType
    scale_factor: int = DEFAULT_SCALE_FACTOR

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.uint8)
        if self.matrix.ndim != 2 or self.matrix.shape[1] != self.mode.width:
            raise DimensionError(
                f"{self.attack_type.value} dataset needs {self.mode.width}-bit rows, got shape {self.matrix.shape}"
            )
        if self.scale_factor < 1:
            raise ValueError("scale_factor must be a positive integer")

    @property
    def mode(self) -> Mode:
        return self.attack_type.mode

    @property
    def vectors(self) -> list[BitVector]:
        return [BitVector(row, self.mode) for row in self.matrix]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_vectors(cls, vectors: Sequence[BitVector], attack_type: AttackType,
                     scale_factor: int = DEFAULT_SCALE_FACTOR) -> "EncodedDataset":
        if any(v.mode is not attack_type.mode for v in vectors):
            raise DimensionError(f"{attack_type.value} datasets hold only {attack_type.mode.value} vectors")
        matrix = np.array([v.bits for v in vectors], dtype=np.uint8).reshape(len(vectors), attack_type.mode.width)
        return cls(matrix, attack_type, scale_factor)


@dataclass(frozen=True)
class Provenance:
    model_id: str
    seed: int
    index: int


@dataclass(frozen=True)
class GeneratedFrame:
    """A decoded vector. ``can_id`` and ``data`` are None for timing-only (Dos16) vectors."""

    delta_ticks: int
    can_id: int | None = None
    data: tuple[int, ...] | None = None
    provenance: Provenance | None = None

    @property
    def dlc(self) -> int | None:
        return None if self.data is None else len(self.data)

    @property
    def id_out_of_range(self) -> bool:
        # 16 id bits can decode past the 11-bit standard range; kept, but flagged.
        return self.can_id is not None and self.can_id > MAX_STANDARD_ID


@dataclass(frozen=True)
class ParseIssue:
    line_no: int
    line: str
    reason: str


@dataclass
class ParseReport:
    records: int = 0
    issues: list[ParseIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.issues


# --------------------------------------------------------------------------- parsing

Stream = Union[IO[bytes], IO[str], Iterable[str], Iterable[bytes], bytes, str]


def _iter_lines(stream: Stream) -> Iterable[str]:
    if isinstance(stream, (bytes, str)):
        stream = io.StringIO(stream.decode("utf-8") if isinstance(stream, bytes) else stream)
    for raw in stream:
        yield raw.decode("utf-8") if isinstance(raw, bytes) else raw


def _parse_hex(text: str, max_digits: int) -> int:
    text = text.strip()
    if not 1 <= len(text) <= max_digits or any(c not in string.hexdigits for c in text):
        raise ValueError(f"expected 1-{max_digits} hex digits, got {text!r}")
    return int(text, 16)


def parse_record(line: str) -> CanFrame:
    """Parse one ``timestamp,id,dlc,d0,...,flag`` record. Raises ValueError on malformed input."""
    fields = [f.strip() for f in line.strip().split(",")]
    if len(fields) < 4:
        raise ValueError("too few fields")
    timestamp = float(fields[0])
    if not np.isfinite(timestamp) or timestamp < 0:
        raise ValueError(f"bad timestamp {fields[0]!r}")
    can_id = _parse_hex(fields[1], 4)
    if can_id > MAX_STANDARD_ID:
        raise ValueError(f"identifier {can_id:#x} is not an 11-bit standard id")
    dlc = int(fields[2])
    if not 0 <= dlc <= 8:
        raise ValueError(f"dlc {dlc} outside 0..8")
    if len(fields) != dlc + 4:
        raise ValueError(f"dlc {dlc} needs {dlc + 4} fields, got {len(fields)}")
    data = tuple(_parse_hex(f, 2) for f in fields[3:3 + dlc])
    flag = fields[-1].upper()
    if flag not in ("R", "T"):
        raise ValueError(f"unknown flag {fields[-1]!r}")
    return CanFrame(timestamp, can_id, dlc, data, Label(flag))


def _looks_like_header(line: str) -> bool:
    head = line.split(",", 1)[0].strip()
    try:
        float(head)
    except ValueError:
        return True
    return False


def parse_hcrl_csv(stream: Stream, *, strict: bool = False, report: ParseReport | None = None) -> list[CanFrame]:
    """Parse an HCRL Car-Hacking style CSV log.

    Records look like ``1478195721.913135,0260,8,fb,7f,00,00,40,7f,09,22,R``.
    A single non-numeric header line at the top is skipped. In lenient mode
    malformed records (including extended identifiers) are logged into
    ``report`` and skipped; with ``strict=True`` the first one raises
    :class:`ParseError`.
    """
    report = report if report is not None else ParseReport()
    frames: list[CanFrame] = []
    for line_no, line in enumerate(_iter_lines(stream), start=1):
        if not line.strip():
            continue
        if line_no == 1 and _looks_like_header(line):
            continue
        try:
            frame = parse_record(line)
        except (ValueError, InvalidFrameError) as exc:
            if strict:
                raise ParseError(line_no, line.rstrip("\r\n"), str(exc)) from exc
            report.issues.append(ParseIssue(line_no, line.rstrip("\r\n"), str(exc)))
            continue
        frames.append(frame)
        report.records += 1
    if report.issues:
        logger.warning("skipped %d malformed records", len(report.issues))
    return frames


def format_record(frame: CanFrame) -> str:
    payload = ",".join(f"{b:02x}" for b in frame.data)
    parts = [f"{frame.timestamp:.6f}", f"{frame.can_id:04x}", str(frame.dlc)]
    if payload:
        parts.append(payload)
    parts.append(frame.label.value)
    return ",".join(parts)


def write_hcrl_csv(frames: Iterable[CanFrame], stream: IO[str]) -> None:
    for frame in frames:
        stream.write(format_record(frame) + "\n")


# --------------------------------------------------------------------------- processing steps

def filter_standard_frames(frames: Iterable[CanFrame]) -> list[CanFrame]:
    return [f for f in frames if f.dlc == STANDARD_DLC]


def _round_half_up(value: Decimal) -> int:
    return int(value.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def normalize_timestamps(frames: Sequence[CanFrame], scale_factor: int = DEFAULT_SCALE_FACTOR) -> list[int]:
    """Per-frame timestamp deltas in ticks of ``1/scale_factor`` seconds.

    The first frame has no predecessor and gets 0. Gaps longer than the 16-bit
    range are clamped to 65535.

    Arithmetic is done on the shortest decimal form of each timestamp so that
    microsecond log values at epoch magnitude (~1.5e9 s, where a double only
    resolves ~0.2 us) difference exactly.
    """
    if scale_factor < 1 or int(scale_factor) != scale_factor:
        raise ValueError("scale_factor must be a positive integer")
    scale = Decimal(int(scale_factor))
    out: list[int] = []
    prev: Decimal | None = None
    for i, frame in enumerate(frames):
        ts = Decimal(repr(float(frame.timestamp)))
        if prev is None:
            out.append(0)
        else:
            if ts < prev:
                raise OrderingError(i)
            out.append(min(_round_half_up((ts - prev) * scale), MAX_DELTA))
        prev = ts
    return out


def _uint_bits(values: np.ndarray, width: int) -> np.ndarray:
    shifts = np.arange(width - 1, -1, -1, dtype=np.int64)
    return ((np.asarray(values, dtype=np.int64)[:, None] >> shifts) & 1).astype(np.uint8)


def _bits_uint(bits: np.ndarray) -> np.ndarray:
    width = bits.shape[-1]
    weights = 1 << np.arange(width - 1, -1, -1, dtype=np.int64)
    return bits.astype(np.int64) @ weights


def encode_matrix(deltas: Sequence[int], can_ids: Sequence[int] | None = None,
                  payloads: np.ndarray | Sequence[Sequence[int]] | None = None,
                  mode: Mode = Mode.FULL96) -> np.ndarray:
    """Vectorized encoder: one row per frame, columns laid out as in the module docstring."""
    deltas = np.asarray(deltas, dtype=np.int64).reshape(-1)
    if np.any((deltas < 0) | (deltas > MAX_DELTA)):
        raise ValueError("deltas must fit in 16 bits")
    parts = [_uint_bits(deltas, 16)]
    if mode is Mode.FULL96:
        ids = np.asarray(can_ids, dtype=np.int64).reshape(-1)
        data = np.asarray(payloads, dtype=np.int64).reshape(len(deltas), -1)
        if ids.size != deltas.size:
            raise DimensionError("one identifier per delta required")
        if data.shape[1] != STANDARD_DLC:
            raise InvalidFrameError(f"Full96 needs 8-byte payloads, got {data.shape[1]}")
        if np.any((ids < 0) | (ids > MAX_DELTA)) or np.any((data < 0) | (data > 0xFF)):
            raise ValueError("identifier or payload out of range")
        parts.append(_uint_bits(ids, 16))
        parts.append(_uint_bits(data.reshape(-1), 8).reshape(len(deltas), 64))
    return np.concatenate(parts, axis=1)


def encode_frame(frame: CanFrame, delta: int, mode: Mode = Mode.FULL96) -> BitVector:
    if mode is Mode.FULL96 and frame.dlc != STANDARD_DLC:
        raise InvalidFrameError(f"Full96 encoding needs dlc 8, frame has dlc {frame.dlc}")
    if mode is Mode.DOS16:
        return BitVector(encode_matrix([delta], mode=mode)[0], mode)
    return BitVector(encode_matrix([delta], [frame.can_id], [frame.data], mode)[0], mode)


def encode_frames(frames: Sequence[CanFrame], deltas: Sequence[int], mode: Mode = Mode.FULL96) -> np.ndarray:
    if len(frames) != len(deltas):
        raise DimensionError("one delta per frame required")
    if mode is Mode.DOS16:
        return encode_matrix(deltas, mode=mode)
    if any(f.dlc != STANDARD_DLC for f in frames):
        raise InvalidFrameError("Full96 encoding needs dlc 8 on every frame")
    if not frames:
        return np.zeros((0, mode.width), dtype=np.uint8)
    return encode_matrix(deltas, [f.can_id for f in frames], [f.data for f in frames], mode)


def decode_matrix(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Inverse of :func:`encode_matrix`: (deltas, ids, payloads); ids/payloads None for 16-bit rows."""
    matrix = np.asarray(matrix, dtype=np.uint8)
    if matrix.ndim != 2:
        raise DimensionError("expected a 2-D bit matrix")
    width = matrix.shape[1]
    Mode.for_width(width)
    deltas = _bits_uint(matrix[:, :16])
    if width == 16:
        return deltas, None, None
    ids = _bits_uint(matrix[:, 16:32])
    payloads = _bits_uint(matrix[:, 32:].reshape(-1, 8, 8))
    return deltas, ids, payloads


def decode_frame(vec: BitVector, scale_factor: int = DEFAULT_SCALE_FACTOR) -> GeneratedFrame:
    """Decode a bit vector back into (delta ticks, identifier, payload).

    ``scale_factor`` is accepted for symmetry with the encoder; ticks are returned
    as-is (seconds = ticks / scale_factor).
    """
    deltas, ids, payloads = decode_matrix(vec.bits[None, :])
    if ids is None:
        return GeneratedFrame(int(deltas[0]))
    return GeneratedFrame(int(deltas[0]), int(ids[0]), tuple(int(b) for b in payloads[0]))


def preprocess(frames: Sequence[CanFrame], attack_type: AttackType,
               scale_factor: int = DEFAULT_SCALE_FACTOR, *, injected_only: bool = True) -> EncodedDataset:
    """Run the full processing chain: dlc filter, timestamp deltas, binary encoding.

    Deltas are taken over the whole filtered log (gaps on the bus), after which
    only injected frames are kept unless ``injected_only`` is False.
    """
    standard = filter_standard_frames(frames)
    deltas = normalize_timestamps(standard, scale_factor)
    if injected_only:
        keep = [i for i, f in enumerate(standard) if f.injected]
        standard = [standard[i] for i in keep]
        deltas = [deltas[i] for i in keep]
    matrix = encode_frames(standard, deltas, attack_type.mode)
    return EncodedDataset(matrix, attack_type, scale_factor)


# --------------------------------------------------------------------------- dataset files

DATASET_MAGIC = "CANRBM-DATASET v1"


def save_dataset(dataset: EncodedDataset, comments: Sequence[str] = ()) -> bytes:
    """Text form: magic line, ``attack mode width rows scale_factor``, ``#`` comments, one bit string per row."""
    lines = [DATASET_MAGIC, f"{dataset.attack_type.value} {dataset.mode.value} {dataset.mode.width} "
                             f"{len(dataset)} {dataset.scale_factor}"]
    lines += [f"# {c}" for c in comments]
    lines += ["".join("1" if b else "0" for b in row) for row in dataset.matrix]
    return ("\n".join(lines) + "\n").encode("ascii")


def load_dataset(source: bytes | str) -> tuple[EncodedDataset, tuple[str, ...]]:
    text = source.decode("utf-8") if isinstance(source, bytes) else source
    lines = text.splitlines()
    if not lines or lines[0].strip() != DATASET_MAGIC:
        raise DatasetFormatError(f"not an encoded dataset (expected {DATASET_MAGIC!r} on line 1)")
    try:
        attack_s, mode_s, width_s, rows_s, scale_s = lines[1].split()
        attack, mode, width, rows, scale = AttackType(attack_s), Mode(mode_s), int(width_s), int(rows_s), int(scale_s)
    except (IndexError, ValueError) as exc:
        raise DatasetFormatError(f"malformed dataset header: {exc}") from exc
    if mode is not attack.mode or width != mode.width:
        raise DimensionError(f"{attack.value} datasets are {attack.mode.value}, header says {mode.value}/{width}")
    comments = tuple(line[1:].strip() for line in lines[2:] if line.startswith("#"))
    body = [line.strip() for line in lines[2:] if line.strip() and not line.startswith("#")]
    if len(body) != rows:
        raise DatasetFormatError(f"header declares {rows} rows, found {len(body)}")
    if any(len(r) != width or set(r) - {"0", "1"} for r in body):
        raise DimensionError(f"every row must be {width} characters of 0/1")
    matrix = np.array([[c == "1" for c in r] for r in body], dtype=np.uint8).reshape(rows, width)
    return EncodedDataset(matrix, attack, scale), comments
