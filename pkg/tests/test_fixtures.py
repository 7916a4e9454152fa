import io
import json

import numpy as np
import pytest

from canrbm.codec import AttackType, Label, normalize_timestamps, parse_hcrl_csv, write_hcrl_csv
from canrbm.fixtures import (ATTACK_PRESETS, GEAR_TARGET_ID, RPM_TARGET_ID, AttackKind, AttackSpec, IdSchedule,
                             SignalPayload, attack_preset, default_id_pool, fixture_log, fixture_manifest,
                             simulate_traffic)


def injected(frames):
    return [f for f in frames if f.injected]


class TestAttackSpec:
    @pytest.mark.parametrize("kwargs", [
        dict(kind=AttackKind.DOS, rate=0.0),
        dict(kind=AttackKind.DOS, rate=1.0),
        dict(kind=AttackKind.SPOOFING, rate=0.3),
        dict(kind=AttackKind.SPOOFING, rate=0.3, target_id=0x800, payload_template=(0,) * 8),
        dict(kind=AttackKind.SPOOFING, rate=0.3, target_id=0x10, payload_template=(0,) * 7),
        dict(kind=AttackKind.FUZZY, rate=0.3, gap_us=(5, 1)),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            AttackSpec(**kwargs)

    def test_simulate_input_checks(self):
        with pytest.raises(ValueError):
            simulate_traffic(0)
        with pytest.raises(ValueError):
            simulate_traffic(10, id_pool=[])


class TestTraffic:
    def test_dos_frames(self):
        frames = simulate_traffic(3000, attack=AttackSpec(AttackKind.DOS, 0.4), seed=1)
        inj = injected(frames)
        assert inj and all(f.can_id == 0 and f.data == (0,) * 8 for f in inj)

    def test_spoofing_target(self):
        spec = AttackSpec(AttackKind.SPOOFING, 0.3, target_id=0x43F, payload_template=(1, 69, 96, 255, 107, 0, 0, 0),
                          jitter=(0, 0, 2, 0, 0, 0, 0, 0))
        inj = injected(simulate_traffic(2000, attack=spec, seed=2))
        assert all(f.can_id == 1087 for f in inj)
        assert {f.data[2] for f in inj} <= set(range(94, 99)) and all(f.data[0] == 1 for f in inj)

    def test_fuzzy_ranges(self):
        inj = injected(simulate_traffic(5000, attack=AttackSpec(AttackKind.FUZZY, 0.5), seed=3))
        ids = [f.can_id for f in inj]
        assert max(ids) <= 0x7FF and len(set(ids)) > 1000

    def test_rate(self):
        frames = simulate_traffic(10_000, attack=AttackSpec(AttackKind.DOS, 0.3), seed=4)
        assert abs(len(injected(frames)) / 10_000 - 0.3) <= 0.01

    def test_timestamps_nondecreasing_and_positive_deltas(self):
        for at in AttackType:
            frames = fixture_log(at, 4000, seed=5)
            ts = np.array([f.timestamp for f in frames])
            assert np.all(np.diff(ts) > 0)
            assert normalize_timestamps(frames)[1:].count(0) == 0

    def test_background_only(self):
        frames = fixture_log(None, 1000, seed=6)
        assert not injected(frames) and {f.label for f in frames} == {Label.REGULAR}
        pool_ids = {s.can_id for s in default_id_pool()}
        assert {f.can_id for f in frames} <= pool_ids

    def test_determinism(self):
        assert fixture_log(AttackType.RPM, 2000, seed=7) == fixture_log(AttackType.RPM, 2000, seed=7)
        assert fixture_log(AttackType.RPM, 2000, seed=7) != fixture_log(AttackType.RPM, 2000, seed=8)

    def test_custom_pool(self):
        pool = [IdSchedule(0x123, 0.002, SignalPayload((1, 2, 3, 4, 5, 6, 7, 8), counter=0))]
        frames = simulate_traffic(50, id_pool=pool, seed=1)
        assert [f.data[0] for f in frames[:3]] == [1, 2, 3]

    def test_emit_parse_self_consistency(self):
        frames = fixture_log(AttackType.FUZZY, 3000, seed=9)
        buf = io.StringIO()
        write_hcrl_csv(frames, buf)
        assert parse_hcrl_csv(buf.getvalue(), strict=True) == frames


class TestPresets:
    def test_spoofing_targets(self):
        assert attack_preset(AttackType.GEAR).target_id == GEAR_TARGET_ID == 0x43F
        assert attack_preset(AttackType.RPM).target_id == RPM_TARGET_ID == 0x316
        assert attack_preset(AttackType.DOS, rate=0.1).rate == 0.1
        assert set(ATTACK_PRESETS) == set(AttackType)

    def test_manifest_is_json(self):
        manifest = json.loads(json.dumps(fixture_manifest()))
        assert manifest["attacks"]["gear"]["kind"] == "spoofing"
        assert len(manifest["id_pool"]) == len(default_id_pool())
