"""Simulation, batch evaluation, ROI and snapshot interchange tests."""

import json
import math

import numpy as np
import pytest

import chordsim as cs
from chordsim import channelizer as chz
from chordsim import harness
from chordsim import locator as loc
from chordsim.decoder import decode_pipeline
from chordsim.harness import (BatchConfig, HarnessError, SceneSpec, SnapshotRecord,
                              bits_to_hex, channel_to_snapshots, evaluate_roi,
                              export_snapshots, gate_corpus, hex_to_bits,
                              import_snapshots, nearest_rank_percentile,
                              multipath_tag, random_epc, run_batch, simulate_capture,
                              single_path_tag)
from chordsim.model import ModelError, Scene, default_array_geometry, default_carrier_plan


@pytest.fixture(scope="module")
def plan():
    return default_carrier_plan()


@pytest.fixture(scope="module")
def geom():
    return default_array_geometry()


@pytest.fixture(scope="module")
def grid():
    return loc.GridSpec()


def test_clean_capture_decodes_exactly(plan, geom):
    rng = np.random.default_rng(0)
    tag = single_path_tag((0.3, 2.5, 1.11), random_epc(rng))
    spec = SceneSpec(scene=Scene(tags=(tag,)), snr_db=30.0)
    caps, pkt, h = simulate_capture(spec, plan, geom, seed=1)
    banks = [chz.notch_dc(chz.channelize(c, plan)) for c in caps]
    packet = decode_pipeline(banks, plan, geom)
    assert packet.crc_ok
    assert packet.epc_bits == tag.epc_bits
    err = np.abs(np.angle(packet.channel.h * np.conj(h.h)))
    assert np.max(err) < 0.05


def test_low_snr_decode_mostly_fails(plan, geom):
    # the 8-antenna x 16-carrier diversity is worth ~21 dB, so the decode
    # waterfall sits near -15 dB per channel; -18 dB breaks most packets
    rng = np.random.default_rng(1)
    tag = single_path_tag((0.3, 2.5, 1.11), random_epc(rng))
    spec = SceneSpec(scene=Scene(tags=(tag,)), snr_db=-18.0)
    failures = 0
    for seed in range(6):
        banks, pkt, _ = simulate_capture(spec, plan, geom, seed=seed, fast_path=True)
        banks = [chz.notch_dc(b) for b in banks]
        try:
            packet = decode_pipeline(banks, plan, geom)
            ok = packet.crc_ok and packet.epc_bits == tag.epc_bits
        except Exception:
            ok = False
        failures += not ok
    assert failures / 6 > 0.5


def test_fast_path_matches_full_path_channel(plan, geom):
    rng = np.random.default_rng(2)
    tag = multipath_tag((0.4, 3.0, 1.11), random_epc(rng), (1.2, 4.0, 1.11), 0.5)
    spec = SceneSpec(scene=Scene(tags=(tag,)), snr_db=28.0, t0_s=1.0e-3)
    caps, _, _ = simulate_capture(spec, plan, geom, seed=9)
    full_banks = [chz.notch_dc(chz.channelize(c, plan)) for c in caps]
    fast_banks, _, _ = simulate_capture(spec, plan, geom, seed=9, fast_path=True)
    fast_banks = [chz.notch_dc(b) for b in fast_banks]
    pkt_full = decode_pipeline(full_banks, plan, geom)
    pkt_fast = decode_pipeline(fast_banks, plan, geom)
    assert pkt_full.epc_bits == pkt_fast.epc_bits
    err = np.sum(np.abs(pkt_full.channel.h - pkt_fast.channel.h) ** 2)
    ref = np.sum(np.abs(pkt_full.channel.h) ** 2)
    assert 10 * math.log10(err / ref) < -40.0


def test_run_batch_noiseless_bound(plan, geom, grid):
    rng = np.random.default_rng(3)
    scenes = []
    for _ in range(10):
        pos = (float(rng.uniform(-1.2, 1.2)), float(rng.uniform(1.0, 5.5)), 1.11)
        scenes.append(SceneSpec(scene=Scene(tags=(single_path_tag(pos, random_epc(rng)),)),
                                snr_db=80.0))
    cfg = BatchConfig(plan=plan, geom=geom, grid=grid, seed=5)
    rep = run_batch(scenes, cfg)
    assert rep.n_failed == 0
    assert rep.p99_m <= grid.cell_m * math.sqrt(2)


def test_run_batch_empty_rejected(plan, geom, grid):
    with pytest.raises(HarnessError):
        run_batch([], BatchConfig(plan=plan, geom=geom, grid=grid))


def test_run_batch_deterministic(plan, geom, grid):
    corpus = harness.desk_multipath_corpus(n_scenes=4, seed=12)
    cfg = BatchConfig(plan=plan, geom=geom, grid=grid,
                      prior=loc.PriorROI(path_bounds_m=(1.5, 14.0)), seed=6)
    a = run_batch(corpus, cfg)
    b = run_batch(corpus, cfg)
    assert [r.error_m for r in a.results] == [r.error_m for r in b.results]
    assert a.p99_m == b.p99_m


def test_ablation_unknown_axis(plan, geom, grid):
    corpus = harness.desk_multipath_corpus(n_scenes=2, seed=1)
    cfg = BatchConfig(plan=plan, geom=geom, grid=grid)
    with pytest.raises(HarnessError):
        harness.ablation_sweep(corpus, "power", cfg)


def test_bandwidth_subsets_contiguous_from_low_edge(plan):
    counts = [len(harness.bandwidth_carrier_indices(plan, bw))
              for bw in harness.BANDWIDTH_SETTINGS_HZ]
    assert counts == [5, 10, 11, 16]
    idx = harness.bandwidth_carrier_indices(plan, 50e6)
    assert idx == list(range(5))


def test_sweep_csv_format(tmp_path):
    rows = [{"setting": "50MHz", "p50_m": 0.1, "p90_m": 0.2, "p99_m": 0.4}]
    path = tmp_path / "sweep.csv"
    harness.sweep_rows_to_csv(rows, path)
    text = path.read_text().splitlines()
    assert text[0] == "setting,p50_m,p90_m,p99_m"
    assert text[1].startswith("50MHz,0.1")


def test_percentile_nearest_rank():
    vals = list(range(1, 51))
    assert nearest_rank_percentile(vals, 50) == 25
    assert nearest_rank_percentile(vals, 99) == 50  # fewer than 100 -> max
    assert nearest_rank_percentile([3.0], 99) == 3.0
    with pytest.raises(HarnessError):
        nearest_rank_percentile([], 50)
    ranks = [nearest_rank_percentile(vals, p) for p in (50, 90, 99)]
    assert ranks == sorted(ranks)


# --- ROI evaluation ----------------------------------------------------------

def test_evaluate_roi_all_inside_correct():
    decisions = [{"label": "inside", "classified": "inside"} for _ in range(20)]
    decisions += [{"label": "outside", "classified": "outside"} for _ in range(20)]
    miss, cross = evaluate_roi(decisions)
    assert miss == 0.0 and cross == 0.0


def test_evaluate_roi_one_cross_percent():
    decisions = [{"label": "inside", "classified": "inside"} for _ in range(10)]
    decisions += [{"label": "outside", "classified": "outside"} for _ in range(99)]
    decisions += [{"label": "outside", "classified": "inside"}]
    miss, cross = evaluate_roi(decisions)
    assert miss == 0.0
    assert cross == pytest.approx(0.01)


def test_evaluate_roi_undecoded_counts_missed():
    decisions = [{"label": "inside", "classified": None},
                 {"label": "inside", "classified": "inside"},
                 {"label": "outside", "classified": "outside"}]
    miss, cross = evaluate_roi(decisions)
    assert miss == pytest.approx(0.5)


def test_evaluate_roi_label_validation():
    with pytest.raises(HarnessError):
        evaluate_roi([{"label": "nowhere", "classified": "inside"}])


# --- snapshots ---------------------------------------------------------------

def test_hex_round_trip():
    rng = np.random.default_rng(4)
    bits = tuple(rng.integers(0, 2, 96))
    assert hex_to_bits(bits_to_hex(bits)) == bits


def test_snapshot_export_import_bit_identical(tmp_path, plan, geom):
    rng = np.random.default_rng(5)
    tag = single_path_tag((0.2, 3.1, 1.11), random_epc(rng))
    h = cs.synth_channel(Scene(tags=(tag,)), geom, plan, 0)
    h = harness.noisy_channel(h, 25.0, rng)
    records = channel_to_snapshots(h, tag.epc_bits, 12.5)
    path = tmp_path / "snap.jsonl"
    export_snapshots(records, path)
    text_before = path.read_text()
    parsed = [harness.parse_snapshot_line(l) for l in text_before.splitlines()]
    assert parsed == records
    export_snapshots(parsed, tmp_path / "snap2.jsonl")
    assert (tmp_path / "snap2.jsonl").read_text() == text_before

    groups = import_snapshots(path, geom, plan)
    assert len(groups) == 1
    epc, ts, ch = groups[0]
    assert epc == bits_to_hex(tag.epc_bits)
    assert np.allclose(ch.h, h.h)
    assert np.all(ch.mask)


def test_snapshot_missing_carrier_masked(tmp_path, plan, geom):
    rng = np.random.default_rng(6)
    tag = single_path_tag((0.2, 3.1, 1.11), random_epc(rng))
    h = cs.synth_channel(Scene(tags=(tag,)), geom, plan, 0)
    records = channel_to_snapshots(h, tag.epc_bits, 0.0)
    dropped = [r for r in records if not (r.antenna_id == 2 and r.carrier_hz == plan.carriers_hz[7])]
    path = tmp_path / "partial.jsonl"
    export_snapshots(dropped, path)
    _, _, ch = import_snapshots(path, geom, plan)[0]
    assert not ch.mask[2, 7]
    assert ch.mask.sum() == 8 * 16 - 1


def test_snapshot_malformed_line_number(tmp_path, plan, geom):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"epc": "ab"}\nnot json\n')
    with pytest.raises(HarnessError, match="line 1"):
        import_snapshots(path, geom, plan)


def test_replay_equivalence(tmp_path, plan, geom, grid):
    # localizing from exported snapshots equals the in-memory run
    rng = np.random.default_rng(7)
    tag = multipath_tag((0.5, 2.8, 1.11), random_epc(rng), (1.4, 3.8, 1.11), 0.5)
    h = harness.noisy_channel(cs.synth_channel(Scene(tags=(tag,)), geom, plan, 0), 22.0, rng)
    prior = loc.PriorROI(path_bounds_m=(1.5, 14.0))
    direct = loc.localize(h, grid, geom, plan, prior)
    path = tmp_path / "replay.jsonl"
    export_snapshots(channel_to_snapshots(h, tag.epc_bits, 1.0), path)
    _, _, ch = import_snapshots(path, geom, plan)[0]
    # quality round-trips through rssi, not identically; reuse imported values
    replayed = loc.localize(
        cs.ChannelMatrix(h=ch.h, carriers_hz=ch.carriers_hz, geometry=geom,
                         quality=h.quality, mask=ch.mask),
        grid, geom, plan, prior)
    assert replayed.position_m == direct.position_m


def test_packet_record_round_trip(plan, geom):
    rng = np.random.default_rng(8)
    tag = single_path_tag((0.1, 2.2, 1.11), random_epc(rng))
    h = harness.noisy_channel(cs.synth_channel(Scene(tags=(tag,)), geom, plan, 0), 30.0, rng)
    rec = harness.packet_record(tag.epc_bits, 1e-3, 5.0, True, h)
    doc = json.loads(json.dumps(rec))
    back = harness.record_to_channel(doc, geom, plan)
    assert np.allclose(back.h, h.h, atol=1e-12)


def test_gate_corpus_labels():
    scenes, labels = gate_corpus(n_inside=5, n_outside=7, seed=3)
    assert len(scenes) == 12
    assert labels.count("inside") == 5 and labels.count("outside") == 7
    for spec, label in zip(scenes, labels):
        y = spec.scene.tags[0].position_m[1]
        assert (y <= 2.0) if label == "inside" else (y >= 3.0)
