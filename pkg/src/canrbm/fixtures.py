"""Deterministic synthetic CAN traffic with DoS, fuzzy and spoofing injections.

Background traffic is a set of periodic ECUs (1-20 ms periods, +/-5% period
jitter); attack frames are interleaved at exact, seeded positions. Timing is
kept in integer microseconds so the emitted CSV round-trips exactly through
:func:`canrbm.codec.parse_hcrl_csv`.
"""

from __future__ import annotations

import heapq
import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .codec import MAX_STANDARD_ID, AttackType, CanFrame, Label

START_US = 1_478_195_721_000_000
FRAME_TIME_US = (200, 260)  # bus occupancy of one frame at 500 kbit/s, inclusive range
PERIOD_JITTER = 0.05


class AttackKind(Enum):
    DOS = "dos"
    FUZZY = "fuzzy"
    SPOOFING = "spoofing"


@dataclass(frozen=True)
class SignalPayload:
    """Payload recipe for one background ECU.

    ``counter`` names a byte that increments per emission, ``wave`` a byte that
    follows a slow sinusoid, ``noise`` a byte redrawn uniformly every time.
    """

    base: tuple[int, ...]
    counter: int | None = None
    wave: int | None = None
    noise: int | None = None

    def __call__(self, rng: np.random.Generator, k: int) -> tuple[int, ...]:
        out = list(self.base)
        if self.counter is not None:
            out[self.counter] = (out[self.counter] + k) % 256
        if self.wave is not None:
            out[self.wave] = int(round(out[self.wave] + 20 * math.sin(k / 25.0))) % 256
        if self.noise is not None:
            out[self.noise] = int(rng.integers(0, 256))
        return tuple(out)


@dataclass(frozen=True)
class IdSchedule:
    can_id: int
    period: float
    payload: SignalPayload


def default_id_pool() -> list[IdSchedule]:
    """Background ECUs loosely modeled on a passenger-car capture (ids from real logs)."""
    ms = 1e-3
    return [
        IdSchedule(0x260, 10 * ms, SignalPayload((0xFB, 0x7F, 0x00, 0x00, 0x40, 0x7F, 0x09, 0x22), counter=7)),
        IdSchedule(0x2A0, 10 * ms, SignalPayload((0x00, 0x00, 0x00, 0x00, 0x0E, 0x23, 0x29, 0xD0), wave=5)),
        IdSchedule(0x329, 10 * ms, SignalPayload((0x05, 0x21, 0x74, 0x09, 0x21, 0x21, 0x00, 0x6E), wave=1)),
        IdSchedule(0x545, 10 * ms, SignalPayload((0xFE, 0x5D, 0x00, 0x00, 0x00, 0x3C, 0x00, 0x00), counter=1)),
        IdSchedule(0x2B0, 10 * ms, SignalPayload((0x19, 0x21, 0x21, 0x30, 0x08), noise=3)),
        IdSchedule(0x430, 20 * ms, SignalPayload((0x64, 0x00, 0x9B, 0x1D, 0x97, 0x02, 0xBD, 0x00), noise=4)),
        IdSchedule(0x4B1, 20 * ms, SignalPayload((0x0C, 0xBE, 0x7F, 0x14, 0x11, 0x20, 0x00, 0x14), counter=0)),
        IdSchedule(0x316, 10 * ms, SignalPayload((0x05, 0x22, 0x68, 0x09, 0x22, 0x20, 0x00, 0x75), wave=2)),
        IdSchedule(0x43F, 10 * ms, SignalPayload((0x10, 0x40, 0x60, 0xFF, 0x75, 0x00, 0x00, 0x00), counter=7)),
        IdSchedule(0x18F, 10 * ms, SignalPayload((0xFE, 0x3B, 0x00, 0x00, 0x00, 0x3C, 0x00, 0x00), wave=1)),
        IdSchedule(0x370, 10 * ms, SignalPayload((0x00, 0x20, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00), noise=2)),
        IdSchedule(0x440, 10 * ms, SignalPayload((0xFF, 0x00, 0x00, 0x00, 0xFF, 0x6E, 0x08, 0x00), wave=5)),
        IdSchedule(0x4F0, 20 * ms, SignalPayload((0x00, 0x00, 0x00, 0x80, 0x00, 0x53, 0x32, 0x00), counter=6)),
        IdSchedule(0x153, 10 * ms, SignalPayload((0x00, 0x80, 0x10, 0xFF, 0x00, 0xFF, 0x90, 0x0B), counter=7)),
        IdSchedule(0x002, 10 * ms, SignalPayload((0x00, 0x00, 0x00, 0x00, 0x00, 0x03, 0x0E, 0x2D), counter=6)),
        IdSchedule(0x5F0, 20 * ms, SignalPayload((0x01, 0x00),)),
        IdSchedule(0x690, 20 * ms, SignalPayload((0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00), noise=0)),
        IdSchedule(0x0A0, 1 * ms * 5, SignalPayload((0x61, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00), wave=2)),
    ]


@dataclass(frozen=True)
class AttackSpec:
    """Injection recipe.

    ``gap_us`` is the inclusive range of the bus gap preceding each injected
    frame. For spoofing, byte ``i`` of the payload is ``payload_template[i]``
    plus a uniform integer in ``[-jitter[i], jitter[i]]``, clipped to a byte.
    """

    kind: AttackKind
    rate: float
    target_id: int | None = None
    payload_template: tuple[int, ...] | None = None
    jitter: tuple[int, ...] = (0,) * 8
    gap_us: tuple[int, int] = (200, 260)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rate < 1:
            raise ValueError(f"injection rate must lie in (0, 1), got {self.rate}")
        if self.kind is AttackKind.SPOOFING:
            if self.target_id is None or not 0 <= self.target_id <= MAX_STANDARD_ID:
                raise ValueError("spoofing needs a standard 11-bit target_id")
            if self.payload_template is None or len(self.payload_template) != 8:
                raise ValueError("spoofing needs an 8-byte payload template")
            if len(self.jitter) != 8:
                raise ValueError("jitter needs one entry per payload byte")
        if not 0 < self.gap_us[0] <= self.gap_us[1]:
            raise ValueError("gap_us must be a positive, ordered range")


GEAR_TARGET_ID = 0x43F
RPM_TARGET_ID = 0x316

# Engineering choices: injection periods of ~0.3 ms (DoS), ~0.5 ms (fuzzy) and ~1 ms (spoofing)
# against ~0.55 ms mean background spacing. Emitted by `canrbm fixtures` as the fixture manifest.
ATTACK_PRESETS: dict[AttackType, dict] = {
    AttackType.DOS: dict(kind=AttackKind.DOS, rate=0.6, gap_us=(250, 350)),
    AttackType.FUZZY: dict(kind=AttackKind.FUZZY, rate=0.5, gap_us=(400, 600)),
    AttackType.GEAR: dict(kind=AttackKind.SPOOFING, rate=0.35, target_id=GEAR_TARGET_ID,
                          payload_template=(0x01, 0x45, 0x60, 0xFF, 0x6B, 0x00, 0x00, 0x00),
                          jitter=(0, 0, 1, 0, 4, 0, 0, 0), gap_us=(900, 1100)),
    AttackType.RPM: dict(kind=AttackKind.SPOOFING, rate=0.35, target_id=RPM_TARGET_ID,
                         payload_template=(0x45, 0x29, 0x24, 0xFF, 0x29, 0x24, 0x00, 0xFF),
                         jitter=(0, 0, 0, 0, 2, 0, 0, 0), gap_us=(900, 1100)),
}


def attack_preset(attack_type: AttackType, rate: float | None = None, seed: int = 0) -> AttackSpec:
    params = dict(ATTACK_PRESETS[attack_type])
    if rate is not None:
        params["rate"] = rate
    return AttackSpec(seed=seed, **params)


def _injected_frame(spec: AttackSpec, rng: np.random.Generator, ts_us: int) -> CanFrame:
    ts = ts_us / 1e6
    if spec.kind is AttackKind.DOS:
        return CanFrame(ts, 0x000, 8, (0,) * 8, Label.INJECTED)
    if spec.kind is AttackKind.FUZZY:
        can_id = int(rng.integers(0, MAX_STANDARD_ID + 1))
        return CanFrame(ts, can_id, 8, tuple(int(x) for x in rng.integers(0, 256, size=8)), Label.INJECTED)
    jitter = np.asarray(spec.jitter)
    offsets = rng.integers(-jitter, jitter + 1)
    payload = np.clip(np.asarray(spec.payload_template) + offsets, 0, 255)
    return CanFrame(ts, spec.target_id, 8, tuple(int(x) for x in payload), Label.INJECTED)


def simulate_traffic(n_frames: int, id_pool: Sequence[IdSchedule] | None = None,
                     attack: AttackSpec | None = None, seed: int = 0) -> list[CanFrame]:
    """Produce ``n_frames`` labeled frames with nondecreasing microsecond timestamps.

    With an attack, exactly ``round(rate * n_frames)`` slots, chosen uniformly
    at random, carry injected frames; the rest follow the background schedule.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    pool = list(id_pool) if id_pool is not None else default_id_pool()
    if not pool:
        raise ValueError("id_pool must not be empty")
    root = np.random.SeedSequence([seed, attack.seed if attack else 0])
    bg_rng, attack_rng = (np.random.default_rng(s) for s in root.spawn(2))

    injected = np.zeros(n_frames, dtype=bool)
    if attack is not None:
        n_inj = int(round(attack.rate * n_frames))
        injected[attack_rng.choice(n_frames, size=n_inj, replace=False)] = True

    # heap of (due time us, pool index); emission counters per pool entry
    heap = []
    for i, sched in enumerate(pool):
        period_us = sched.period * 1e6
        heapq.heappush(heap, (START_US + int(bg_rng.integers(0, max(1, int(period_us)))), i))
    emitted = [0] * len(pool)

    frames: list[CanFrame] = []
    clock = START_US
    for slot in range(n_frames):
        if injected[slot]:
            clock += int(attack_rng.integers(attack.gap_us[0], attack.gap_us[1] + 1))
            frames.append(_injected_frame(attack, attack_rng, clock))
            continue
        due, i = heapq.heappop(heap)
        sched = pool[i]
        clock = max(due, clock + int(bg_rng.integers(FRAME_TIME_US[0], FRAME_TIME_US[1] + 1)))
        data = sched.payload(bg_rng, emitted[i])
        frames.append(CanFrame(clock / 1e6, sched.can_id, len(data), data, Label.REGULAR))
        emitted[i] += 1
        period_us = sched.period * 1e6 * (1 + bg_rng.uniform(-PERIOD_JITTER, PERIOD_JITTER))
        heapq.heappush(heap, (due + int(round(period_us)), i))
    return frames


def fixture_log(attack_type: AttackType | None, n_frames: int, seed: int = 0,
                rate: float | None = None) -> list[CanFrame]:
    """Normal traffic (``attack_type=None``) or traffic carrying one preset attack."""
    attack = attack_preset(attack_type, rate, seed) if attack_type is not None else None
    return simulate_traffic(n_frames, attack=attack, seed=seed)


def fixture_manifest() -> dict:
    return {
        "start_us": START_US,
        "frame_time_us": list(FRAME_TIME_US),
        "period_jitter": PERIOD_JITTER,
        "id_pool": [
            {"id": f"{s.can_id:03x}", "period_s": s.period, "base": list(s.payload.base),
             "counter": s.payload.counter, "wave": s.payload.wave, "noise": s.payload.noise}
            for s in default_id_pool()
        ],
        "attacks": {
            at.value: {k: (v.value if isinstance(v, Enum) else list(v) if isinstance(v, tuple) else v)
                       for k, v in params.items()}
            for at, params in ATTACK_PRESETS.items()
        },
    }
