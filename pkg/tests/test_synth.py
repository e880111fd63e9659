import numpy as np
import pytest

from avtp_ids.pcap import ingest, parse_ethernet
from avtp_ids.synth import (
    AttackPlan,
    StreamConfig,
    attacked_capture,
    burst_positions,
    config_from_kv,
    gen_stream,
    inject_replay,
    read_ground_truth,
    read_kv_config,
    write_capture,
    write_ground_truth,
)
from avtp_ids.windows import WindowSet, window_labels


def test_sequence_numbers_cycle():
    seq = [f.data[20] for f in gen_stream(StreamConfig(n_frames=300))]
    assert seq == list(range(256)) + list(range(44))


def test_stream_fields():
    cfg = StreamConfig(seed=2, n_frames=50)
    frames = gen_stream(cfg)
    assert all(len(f.data) == 438 for f in frames)
    assert all(f.data[22:30] == cfg.stream_id for f in frames)
    assert all(parse_ethernet(f).ethertype == 0x22F0 for f in frames)
    ts = [f.timestamp for f in frames]
    assert ts == sorted(ts)
    avtp_ts = [int.from_bytes(f.data[30:34], "big") for f in frames]
    deltas = {(b - a) % 2**32 for a, b in zip(avtp_ts, avtp_ts[1:])}
    assert deltas == {cfg.period_ns}
    # Payload beyond the feature prefix differs from frame to frame.
    assert len({f.data[58:] for f in frames}) == 50


def test_determinism():
    cfg = StreamConfig(seed=9, n_frames=40)
    assert [f.data for f in gen_stream(cfg)] == [f.data for f in gen_stream(cfg)]
    assert gen_stream(cfg)[0].data != gen_stream(StreamConfig(seed=10, n_frames=40))[0].data


def test_config_validation():
    with pytest.raises(ValueError):
        StreamConfig(frame_len=57)
    with pytest.raises(ValueError):
        StreamConfig(period_ns=0)


def test_injection_single_segment():
    stream = gen_stream(StreamConfig(n_frames=200))
    plan = AttackPlan(0, 36, tuple(range(100, 136)))
    res = inject_replay(stream, plan)
    assert len(res.frames) == 236
    assert len(res.replay_set) <= 36
    inj = [f for f, m in zip(res.frames, res.injected) if m]
    assert [f.data for f in inj] == [f.data for f in stream[:36]]
    assert res.injected.sum() == 36 and res.original.sum() == 36


def test_zero_injections():
    stream = gen_stream(StreamConfig(n_frames=50))
    res = inject_replay(stream, AttackPlan(0, 36, ()))
    assert [f.data for f in res.frames] == [f.data for f in stream]
    assert not res.injected.any()


def test_plan_errors():
    stream = gen_stream(StreamConfig(n_frames=50))
    with pytest.raises(ValueError):
        inject_replay(stream, AttackPlan(0, 36, (60,)))
    with pytest.raises(ValueError):
        inject_replay(stream, AttackPlan(0, 36, (10,)))
    with pytest.raises(ValueError):
        AttackPlan(0, 0, ())
    with pytest.raises(ValueError):
        AttackPlan(0, 4, (9, 8))


@pytest.mark.parametrize("w", [8, 16, 24, 32, 40])
def test_labels_from_replay_set_match_ground_truth(w):
    res = attacked_capture(StreamConfig(seed=4, n_frames=1500), n_bursts=5)
    feats = np.stack([np.frombuffer(f.data[:58], np.uint8) for f in res.frames])
    from_r = WindowSet(feats, w, labels=window_labels(res.replay_set.mask(feats), w)).labels
    from_truth = window_labels(res.injected, w)
    np.testing.assert_array_equal(from_r, from_truth)
    # Every window overlapping an injected frame is abnormal.
    for k in np.flatnonzero(res.injected)[:20]:
        assert from_r[max(0, k - w + 1) : k + 1].all()


def test_burst_positions_layout():
    pos = burst_positions(1000, 3, burst_len=4, spacing=2, start=36, seed=1)
    assert len(pos) == 12 and list(pos) == sorted(pos) and pos[0] >= 36
    with pytest.raises(ValueError):
        burst_positions(100, 10, burst_len=36)


def test_capture_files(tmp_path):
    res = attacked_capture(StreamConfig(seed=5, n_frames=400), n_bursts=2)
    write_capture(res, tmp_path / "a.pcap")
    write_ground_truth(res, tmp_path / "a.truth")
    packets, _ = ingest(tmp_path / "a.pcap")
    assert len(packets) == len(res.frames)
    assert [p.full_bytes for p in packets] == [f.data for f in res.frames]
    np.testing.assert_array_equal(read_ground_truth(tmp_path / "a.truth", len(packets)), res.injected)


def test_kv_config(tmp_path):
    (tmp_path / "cfg.txt").write_text("seed = 3\nn_frames = 0x20  # hex ok\nvlan_id=5\ntalker_mac = 02:00:00:00:00:01\n")
    cfg = config_from_kv(read_kv_config(tmp_path / "cfg.txt"))
    assert (cfg.seed, cfg.n_frames, cfg.vlan_id) == (3, 32, 5)
    assert cfg.talker_mac == bytes.fromhex("020000000001")
