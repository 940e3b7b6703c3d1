"""Scenario simulation, batch evaluation, ablation sweeps and dataset I/O.

Each simulated capture carries one tag reply (slot arbitration between tags is
the activating reader's job and out of scope); scenes with several tags yield
one capture per tag.  All randomness flows from explicit seeds, so batches are
reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve as sps_fftconvolve

from . import model
from .model import (ArrayGeometry, CarrierPlan, ChannelMatrix, ModelError,
                    PropagationPath, Scene, TagDef, subset_plan, subset_geometry,
                    synth_channel)
from .waveform import (BLF_DEFAULT_HZ, DEFAULT_FORMAT, MILLER_M_DEFAULT,
                       MultisineSpec, PacketFormat, TagPacket, backscatter_mix,
                       build_packet_baseband, packet_layout, random_walk_drift,
                       synth_multisine)
from .channelizer import (ChannelBank, WidebandCapture, bandlimit_tag, channelize,
                          design_lowpass, notch_dc, processed_tag_baseband,
                          ANTIALIAS_PASS_HZ, SHAPE_PASS_HZ, SHAPE_STOP_HZ, TAG_STOP_HZ)
from .decoder import DecodeError, decode_pipeline
from .locator import (GridSpec, LocalizePolicy, LocationEstimate, PriorROI,
                      DEFAULT_POLICY, localize)

CLOCK_STRETCH_MARGIN = 1.18


class HarnessError(ModelError):
    pass


def bits_to_hex(bits) -> str:
    bits = [int(b) for b in bits]
    return "".join(f"{int(''.join(map(str, bits[i:i + 4])), 2):x}" for i in range(0, len(bits), 4))


def hex_to_bits(s: str) -> tuple[int, ...]:
    return tuple(int(b) for ch in s for b in f"{int(ch, 16):04b}")


def random_epc(rng, n_bits: int = 96) -> tuple[int, ...]:
    return tuple(int(b) for b in rng.integers(0, 2, size=n_bits))


@dataclass(frozen=True)
class SceneSpec:
    """Scene plus capture conditions for simulation."""

    scene: Scene
    snr_db: float = 20.0
    leak_db: float | None = 20.0
    t0_s: float | None = None
    alpha0_frac: float = 0.0
    drift_frac: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise HarnessError("target SNR must be finite")


def _noise_gain(plan: CarrierPlan) -> float:
    """Noise power gain of the anti-alias + shaping chain (white input)."""
    out_rate = plan.channel_out_rate_hz
    aa = design_lowpass(plan.capture_rate_hz, ANTIALIAS_PASS_HZ,
                        max(out_rate - TAG_STOP_HZ, ANTIALIAS_PASS_HZ * 1.5))
    sh = design_lowpass(out_rate, SHAPE_PASS_HZ, SHAPE_STOP_HZ)
    return float(np.sum(aa ** 2) * np.sum(sh ** 2))


def _leak_gains(geom: ArrayGeometry, plan: CarrierPlan, antenna: int,
                amplitude: float) -> np.ndarray:
    tx = np.asarray(geom.tx_wideband_position_m)
    rx = np.asarray(geom.rx_positions_m[antenna])
    d = float(np.linalg.norm(rx - tx))
    f = np.asarray(plan.carriers_hz)
    return amplitude * np.exp(-2j * math.pi * f * d / model.C_M_PER_S)


def _make_packet(spec: SceneSpec, tag: TagDef, rng,
                 blf_hz: float, miller_m: int, fmt: PacketFormat) -> TagPacket:
    t0 = spec.t0_s if spec.t0_s is not None else float(rng.uniform(0.9e-3, 1.1e-3))
    rn16 = tuple(int(b) for b in rng.integers(0, 2, size=16))
    drift: tuple[float, ...] = ()
    if spec.drift_frac > 0:
        layout = packet_layout(blf_hz, miller_m, len(tag.epc_bits), fmt)
        n_sym = int(math.ceil(layout.total_s / (miller_m / blf_hz))) + 8
        drift = random_walk_drift(n_sym, blf_hz, rng, max_frac=spec.drift_frac)
    return TagPacket(rn16_bits=rn16, epc_bits=tag.epc_bits, blf_hz=blf_hz,
                     miller_m=miller_m, t0_s=t0,
                     alpha0_hz=spec.alpha0_frac * blf_hz, drift_alpha_hz=drift)


def simulate_capture(spec: SceneSpec, plan: CarrierPlan, geom: ArrayGeometry,
                     seed: int, tag_index: int = 0, fast_path: bool = False,
                     blf_hz: float = BLF_DEFAULT_HZ, miller_m: int = MILLER_M_DEFAULT,
                     fmt: PacketFormat = DEFAULT_FORMAT):
    """Simulate one tag reply at every antenna.

    Returns (captures-or-banks, packet, channel).  The full path emits
    WidebandCapture objects for the channelizer; the fast path applies the
    channelizer's own filter chain to the tag baseband directly and emits
    per-antenna ChannelBank objects, bypassing the wideband mixing.
    """
    rng = np.random.default_rng(seed)
    pkt = _make_packet(spec, spec.scene.tags[tag_index], rng, blf_hz, miller_m, fmt)
    layout = packet_layout(blf_hz, miller_m, len(pkt.epc_bits), fmt)
    duration = pkt.t0_s + layout.total_s * CLOCK_STRETCH_MARGIN + 0.3e-3

    h = synth_channel(spec.scene, geom, plan, tag_index)
    tag_wave = build_packet_baseband(pkt, plan.capture_rate_hz, fmt)

    snr_lin = 10 ** (spec.snr_db / 10)
    leak_amp = 0.0
    mean_h = float(np.sqrt(np.mean(np.abs(h.h) ** 2)))
    if spec.leak_db is not None:
        leak_amp = mean_h * 10 ** (spec.leak_db / 20)

    if fast_path:
        base = processed_tag_baseband(tag_wave, plan)
        sig_power = float(np.mean(np.abs(base.samples[np.abs(base.samples) > 0.1]) ** 2))
        noise_var_chan = mean_h ** 2 * sig_power / snr_lin
        dec = plan.decimation
        sh = design_lowpass(plan.channel_out_rate_hz, SHAPE_PASS_HZ, SHAPE_STOP_HZ)
        sh_gain = float(np.sum(sh ** 2))
        n = base.samples.size
        banks = []
        for k in range(geom.n_antennas):
            streams = np.outer(h.h[k], base.samples)
            if leak_amp > 0:
                streams += _leak_gains(geom, plan, k, leak_amp)[:, None]
            white = (rng.standard_normal((plan.n_carriers, n))
                     + 1j * rng.standard_normal((plan.n_carriers, n)))
            white *= math.sqrt(noise_var_chan / sh_gain / dec / 2)
            noise = sps_fftconvolve(white, sh[None, :], mode="same", axes=1)
            streams = streams + noise
            banks.append(ChannelBank(streams=streams, rate_hz=plan.channel_out_rate_hz,
                                     carriers_hz=plan.carriers_hz, antenna_id=k,
                                     start_s=0.0, group_delay_s=(sh.size - 1) / 2
                                     / plan.channel_out_rate_hz))
        return banks, pkt, h

    excitation = synth_multisine(MultisineSpec(plan=plan, duration_s=duration))
    tag_bl = bandlimit_tag(tag_wave)
    active = np.abs(tag_bl.samples) > 0.1
    sig_power = float(np.mean(np.abs(tag_bl.samples[active]) ** 2)) if active.any() else 1.0
    noise_var_wide = mean_h ** 2 * sig_power / snr_lin / _noise_gain(plan)

    captures = []
    n = excitation.samples.size
    t = excitation.times()
    for k in range(geom.n_antennas):
        rx = backscatter_mix(excitation, tag_bl, h, k).samples
        if leak_amp > 0:
            gl = _leak_gains(geom, plan, k, leak_amp)
            for off, phi, g in zip(plan.tone_offsets_hz, plan.tone_phases_rad, gl):
                rx = rx + g * np.exp(1j * (2 * math.pi * off * t + phi))
        noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) \
            * math.sqrt(noise_var_wide / 2)
        captures.append(WidebandCapture(samples=rx + noise, rate_hz=plan.capture_rate_hz,
                                        center_hz=plan.capture_center_hz,
                                        start_s=0.0, antenna_id=k))
    return captures, pkt, h


def noisy_channel(h: ChannelMatrix, snr_db: float, rng) -> ChannelMatrix:
    """Channel-domain capture surrogate: complex white noise on every entry at
    the target mean per-entry SNR, quality filled with the realized SNR."""
    power = float(np.mean(np.abs(h.h) ** 2))
    var = power / 10 ** (snr_db / 10)
    noise = (rng.standard_normal(h.shape) + 1j * rng.standard_normal(h.shape)) \
        * math.sqrt(var / 2)
    noisy = h.h + noise
    quality = 10 * np.log10(np.maximum(np.abs(h.h) ** 2 / var, 1e-12))
    return ChannelMatrix(h=noisy, carriers_hz=h.carriers_hz, geometry=h.geometry,
                         quality=quality)


# ---------------------------------------------------------------------------
# Batch evaluation


@dataclass(frozen=True)
class BatchConfig:
    plan: CarrierPlan
    geom: ArrayGeometry
    grid: GridSpec
    prior: PriorROI | None = None
    policy: LocalizePolicy = DEFAULT_POLICY
    mode: str = "channel"          # "channel" or "waveform"
    fast_path: bool = True
    seed: int = 0
    blf_hz: float = BLF_DEFAULT_HZ
    miller_m: int = MILLER_M_DEFAULT
    fmt: PacketFormat = DEFAULT_FORMAT

    def digest(self) -> str:
        doc = {
            "carriers": list(self.plan.carriers_hz),
            "rx": [list(p) for p in self.geom.rx_positions_m],
            "grid": [self.grid.x_extent_m, self.grid.y_extent_m, self.grid.cell_m],
            "mode": self.mode,
            "policy": self.policy.mode,
            "seed": self.seed,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TagResult:
    scene_index: int
    tag_index: int
    true_position_m: tuple[float, float, float]
    estimate: LocationEstimate | None
    error_m: float | None
    decoded: bool
    crc_ok: bool | None = None


@dataclass(frozen=True)
class RunReport:
    results: tuple[TagResult, ...]
    p50_m: float
    p90_m: float
    p99_m: float
    n_tags: int
    n_failed: int
    throughput_pps: float
    config_digest: str
    miss_rate: float | None = None
    cross_rate: float | None = None

    def to_dict(self) -> dict:
        return {
            "p50_m": self.p50_m, "p90_m": self.p90_m, "p99_m": self.p99_m,
            "n_tags": self.n_tags, "n_failed": self.n_failed,
            "throughput_pps": self.throughput_pps, "config_digest": self.config_digest,
            "miss_rate": self.miss_rate, "cross_rate": self.cross_rate,
            "errors_m": [r.error_m for r in self.results],
        }


def nearest_rank_percentile(values, pct: float) -> float:
    """Nearest-rank percentile; the 99th of fewer than 100 samples is the max."""
    vals = sorted(float(v) for v in values)
    if not vals:
        raise HarnessError("no values to rank")
    rank = max(int(math.ceil(pct / 100.0 * len(vals))), 1)
    return vals[rank - 1]


def _scene_seed(base: int, scene_idx: int, tag_idx: int) -> int:
    return (base * 1_000_003 + scene_idx * 1009 + tag_idx) % (2 ** 32)


def run_batch(scenes: list[SceneSpec], cfg: BatchConfig,
              carrier_idx=None, antenna_idx=None,
              policy: LocalizePolicy | None = None) -> RunReport:
    """Decode (or channel-surrogate) and localize every tag of every scene.

    ``carrier_idx``/``antenna_idx`` subset the full plan/geometry while the
    noise draws stay tied to the full-size seeds, so ablation settings see
    identical realizations on their shared entries.  Individual failures are
    recorded, never aborting the batch.
    """
    if not scenes:
        raise HarnessError("empty scene list")
    policy = policy or cfg.policy
    plan = cfg.plan if carrier_idx is None else subset_plan(cfg.plan, carrier_idx)
    geom = cfg.geom if antenna_idx is None else subset_geometry(cfg.geom, len(antenna_idx))

    results: list[TagResult] = []
    busy_s = 0.0
    for si, spec in enumerate(scenes):
        for ti, tag in enumerate(spec.scene.tags):
            seed = _scene_seed(cfg.seed, si, ti)
            rng = np.random.default_rng(seed)
            estimate = None
            decoded = False
            crc_ok = None
            try:
                if cfg.mode == "channel":
                    h_full = synth_channel(spec.scene, cfg.geom, cfg.plan, ti)
                    noisy = noisy_channel(h_full, spec.snr_db, rng)
                    h_sub = noisy.h
                    q_sub = noisy.quality
                    if antenna_idx is not None:
                        h_sub = h_sub[list(antenna_idx)]
                        q_sub = q_sub[list(antenna_idx)]
                    if carrier_idx is not None:
                        h_sub = h_sub[:, list(carrier_idx)]
                        q_sub = q_sub[:, list(carrier_idx)]
                    ch = ChannelMatrix(h=h_sub, carriers_hz=plan.carriers_hz,
                                       geometry=geom, quality=q_sub)
                    decoded = True
                    t_start = time.perf_counter()
                else:
                    sim, pkt, _ = simulate_capture(spec, plan, geom, seed, ti,
                                                   fast_path=cfg.fast_path,
                                                   blf_hz=cfg.blf_hz,
                                                   miller_m=cfg.miller_m, fmt=cfg.fmt)
                    if isinstance(sim[0], WidebandCapture):
                        banks = [channelize(c, plan) for c in sim]
                    else:
                        banks = sim
                    banks = [notch_dc(b, blf_hz=cfg.blf_hz) for b in banks]
                    t_start = time.perf_counter()
                    packet = decode_pipeline(banks, plan, geom, cfg.fmt, cfg.blf_hz,
                                             cfg.miller_m, epc_len=len(tag.epc_bits))
                    decoded = True
                    crc_ok = packet.crc_ok
                    ch = packet.channel
                estimate = localize(ch, cfg.grid, geom, plan, cfg.prior, policy)
                busy_s += time.perf_counter() - t_start
            except (DecodeError, ModelError):
                pass
            error = None
            if estimate is not None:
                error = float(np.hypot(estimate.position_m[0] - tag.position_m[0],
                                       estimate.position_m[1] - tag.position_m[1]))
            results.append(TagResult(scene_index=si, tag_index=ti,
                                     true_position_m=tag.position_m, estimate=estimate,
                                     error_m=error, decoded=decoded, crc_ok=crc_ok))
    errors = [r.error_m for r in results if r.error_m is not None]
    n_failed = sum(1 for r in results if r.error_m is None)
    if not errors:
        errors = [float("inf")]
    throughput = (len(results) - n_failed) / busy_s if busy_s > 0 else 0.0
    return RunReport(
        results=tuple(results),
        p50_m=nearest_rank_percentile(errors, 50),
        p90_m=nearest_rank_percentile(errors, 90),
        p99_m=nearest_rank_percentile(errors, 99),
        n_tags=len(results), n_failed=n_failed,
        throughput_pps=throughput, config_digest=cfg.digest(),
    )


def bandwidth_carrier_indices(plan: CarrierPlan, bandwidth_hz: float) -> list[int]:
    """Carriers within ``bandwidth_hz`` of the low band edge (contiguous subset)."""
    f0 = plan.carriers_hz[0]
    return [i for i, f in enumerate(plan.carriers_hz) if f - f0 <= bandwidth_hz * (1 + 1e-12)]


BANDWIDTH_SETTINGS_HZ = (50e6, 100e6, 150e6, 200e6)
ANTENNA_SETTINGS = (2, 4, 6, 8)
ALGORITHM_SETTINGS = ("basic", "enhanced")


def ablation_sweep(corpus: list[SceneSpec], axis: str, cfg: BatchConfig,
                   settings=None) -> list[dict]:
    """Percentile-error table along one resource axis, same corpus and seeds
    for every setting."""
    rows = []
    if axis == "bandwidth":
        for bw in settings or BANDWIDTH_SETTINGS_HZ:
            idx = bandwidth_carrier_indices(cfg.plan, bw)
            rep = run_batch(corpus, cfg, carrier_idx=idx)
            rows.append({"setting": f"{bw / 1e6:.0f}MHz", "p50_m": rep.p50_m,
                         "p90_m": rep.p90_m, "p99_m": rep.p99_m})
    elif axis == "antennas":
        for n_ant in settings or ANTENNA_SETTINGS:
            idx = model.antenna_subset_indices(cfg.geom, n_ant)
            rep = run_batch(corpus, cfg, antenna_idx=idx)
            rows.append({"setting": str(n_ant), "p50_m": rep.p50_m,
                         "p90_m": rep.p90_m, "p99_m": rep.p99_m})
    elif axis == "algorithm":
        for name in settings or ALGORITHM_SETTINGS:
            if name == "basic":
                policy = LocalizePolicy(mode="never")
            elif name == "enhanced":
                policy = LocalizePolicy(mode="conditional")
            else:
                raise HarnessError(f"unknown algorithm setting {name!r}")
            rep = run_batch(corpus, cfg, policy=policy)
            rows.append({"setting": name, "p50_m": rep.p50_m,
                         "p90_m": rep.p90_m, "p99_m": rep.p99_m})
    else:
        raise HarnessError(f"unknown sweep axis {axis!r}")
    return rows


def sweep_rows_to_csv(rows: list[dict], path) -> None:
    lines = ["setting,p50_m,p90_m,p99_m"]
    lines += [f"{r['setting']},{r['p50_m']:.6f},{r['p90_m']:.6f},{r['p99_m']:.6f}"
              for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def evaluate_roi(decisions: list[dict]) -> tuple[float, float]:
    """Miss and cross rates from {'label', 'classified'} records.

    Miss: inside tags not classified inside (undecoded counts as missed).
    Cross: outside tags classified inside.
    """
    for d in decisions:
        if d.get("label") not in ("inside", "outside"):
            raise HarnessError("every tag needs an inside/outside label")
    inside = [d for d in decisions if d["label"] == "inside"]
    outside = [d for d in decisions if d["label"] == "outside"]
    if not inside or not outside:
        raise HarnessError("need both inside and outside tags")
    miss = sum(1 for d in inside if d.get("classified") != "inside") / len(inside)
    cross = sum(1 for d in outside if d.get("classified") == "inside") / len(outside)
    return miss, cross


# ---------------------------------------------------------------------------
# Scene corpus builders


def single_path_tag(position_m, epc_bits) -> TagDef:
    return TagDef(epc_bits=tuple(epc_bits), position_m=tuple(float(v) for v in position_m),
                  paths=(PropagationPath(gain=1.0, direct=True),))


def multipath_tag(position_m, epc_bits, reflector_m, reflect_gain: float) -> TagDef:
    return TagDef(epc_bits=tuple(epc_bits), position_m=tuple(float(v) for v in position_m),
                  paths=(PropagationPath(gain=1.0, direct=True),
                         PropagationPath(gain=reflect_gain, reflector_m=tuple(reflector_m))))


def desk_multipath_corpus(n_scenes: int = 200, seed: int = 7, snr_db: float = 16.0,
                          tags_per_scene: tuple[int, int] = (1, 5),
                          reflectors_per_tag: tuple[int, int] = (1, 2),
                          gain_range: tuple[float, float] = (0.3, 0.9),
                          x_range=(-1.4, 1.4), y_range=(1.0, 6.0),
                          z_m: float = 1.11) -> list[SceneSpec]:
    """Multipath evaluation corpus: reflectors drawn within 2 m of each tag.

    Severity (gains up to 0.9, up to two reflectors, 16 dB channels) is tuned
    so the basic hologram shows a meter-class 99th-percentile tail on desk
    scale, the regime the suppression layers target.
    """
    rng = np.random.default_rng(seed)
    scenes = []
    for _ in range(n_scenes):
        n_tags = int(rng.integers(tags_per_scene[0], tags_per_scene[1] + 1))
        tags = []
        for _ in range(n_tags):
            pos = (float(rng.uniform(*x_range)), float(rng.uniform(*y_range)), z_m)
            paths = [PropagationPath(gain=1.0, direct=True)]
            n_refl = int(rng.integers(reflectors_per_tag[0], reflectors_per_tag[1] + 1))
            for _ in range(n_refl):
                ang = rng.uniform(0, 2 * math.pi)
                dist = rng.uniform(0.5, 2.0)
                refl = (pos[0] + dist * math.cos(ang),
                        max(pos[1] + dist * math.sin(ang), 0.3), z_m)
                paths.append(PropagationPath(gain=float(rng.uniform(*gain_range)),
                                             reflector_m=refl))
            tags.append(TagDef(epc_bits=random_epc(rng), position_m=pos,
                               paths=tuple(paths)))
        scenes.append(SceneSpec(scene=Scene(tags=tuple(tags), seed=int(rng.integers(2 ** 31))),
                                snr_db=snr_db))
    return scenes


def gate_corpus(n_inside: int = 100, n_outside: int = 100, seed: int = 11,
                snr_db: float = 20.0, inside_y=(0.5, 2.0), outside_y=(3.0, 6.0),
                x_range=(-1.2, 1.2), z_m: float = 1.11):
    """Gate-reading corpus: labeled inside/outside tags, multipath on.

    Returns (scenes, labels) with one tag per scene.
    """
    rng = np.random.default_rng(seed)
    scenes, labels = [], []
    for label, y_range, count in (("inside", inside_y, n_inside),
                                  ("outside", outside_y, n_outside)):
        for _ in range(count):
            pos = (float(rng.uniform(*x_range)), float(rng.uniform(*y_range)), z_m)
            ang = rng.uniform(0, 2 * math.pi)
            dist = rng.uniform(0.5, 2.0)
            refl = (pos[0] + dist * math.cos(ang),
                    max(pos[1] + dist * math.sin(ang), 0.3), z_m)
            tag = multipath_tag(pos, random_epc(rng), refl, float(rng.uniform(0.2, 0.6)))
            scenes.append(SceneSpec(scene=Scene(tags=(tag,), seed=int(rng.integers(2 ** 31))),
                                    snr_db=snr_db))
            labels.append(label)
    return scenes, labels


# ---------------------------------------------------------------------------
# Snapshot interchange (line-delimited JSON)


@dataclass(frozen=True)
class SnapshotRecord:
    """One channel observation of one tag reply."""

    epc: str
    timestamp_s: float
    antenna_id: int
    carrier_hz: float
    phase_rad: float
    rssi_db: float
    re: float | None = None
    im: float | None = None

    def __post_init__(self):
        if not -math.pi < self.phase_rad <= math.pi + 1e-12:
            raise HarnessError("phase must lie in (-pi, pi]")

    def to_json(self) -> str:
        doc = {"epc": self.epc, "timestamp_s": self.timestamp_s,
               "antenna_id": self.antenna_id, "carrier_hz": self.carrier_hz,
               "phase_rad": self.phase_rad, "rssi_db": self.rssi_db}
        if self.re is not None:
            doc["re"] = self.re
            doc["im"] = self.im
        return json.dumps(doc, sort_keys=True)


def parse_snapshot_line(line: str) -> SnapshotRecord:
    doc = json.loads(line)
    return SnapshotRecord(epc=doc["epc"], timestamp_s=float(doc["timestamp_s"]),
                          antenna_id=int(doc["antenna_id"]),
                          carrier_hz=float(doc["carrier_hz"]),
                          phase_rad=float(doc["phase_rad"]),
                          rssi_db=float(doc["rssi_db"]),
                          re=doc.get("re"), im=doc.get("im"))


def channel_to_snapshots(ch: ChannelMatrix, epc_bits, timestamp_s: float) -> list[SnapshotRecord]:
    recs = []
    epc = bits_to_hex(epc_bits)
    for k in range(ch.shape[0]):
        for l in range(ch.shape[1]):
            v = ch.h[k, l]
            q = float(ch.quality[k, l]) if ch.quality is not None else 0.0
            recs.append(SnapshotRecord(
                epc=epc, timestamp_s=timestamp_s, antenna_id=k,
                carrier_hz=ch.carriers_hz[l], phase_rad=float(np.angle(v)),
                rssi_db=20 * math.log10(max(abs(v), 1e-12)),
                re=float(v.real), im=float(v.imag)))
    return recs


def export_snapshots(records: list[SnapshotRecord], path) -> None:
    Path(path).write_text("".join(r.to_json() + "\n" for r in records))


def import_snapshots(path, geom: ArrayGeometry, plan: CarrierPlan,
                     window_s: float = 10e-3, parser=None):
    """Group snapshot lines into per-reply channel matrices.

    Records sharing an EPC within ``window_s`` form one reply; carriers or
    antennas never observed stay masked.  ``parser`` adapts foreign record
    schemas (it receives the raw line and must return a SnapshotRecord).
    Malformed lines raise with their line number.
    """
    parser = parser or parse_snapshot_line
    records = []
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(parser(line))
        except Exception as exc:
            raise HarnessError(f"line {i}: {exc}") from exc
    records.sort(key=lambda r: (r.timestamp_s, r.epc, r.antenna_id, r.carrier_hz))
    carrier_index = {f: l for l, f in enumerate(plan.carriers_hz)}
    groups: list[tuple[str, float, list[SnapshotRecord]]] = []
    for rec in records:
        placed = False
        for g in groups:
            if g[0] == rec.epc and abs(rec.timestamp_s - g[1]) <= window_s:
                g[2].append(rec)
                placed = True
                break
        if not placed:
            groups.append((rec.epc, rec.timestamp_s, [rec]))
    out = []
    for epc, ts, recs in groups:
        h = np.zeros((geom.n_antennas, plan.n_carriers), dtype=complex)
        mask = np.zeros(h.shape, dtype=bool)
        quality = np.full(h.shape, -np.inf)
        for rec in recs:
            if rec.carrier_hz not in carrier_index:
                raise HarnessError(f"carrier {rec.carrier_hz} not in the plan")
            l = carrier_index[rec.carrier_hz]
            if rec.re is not None:
                h[rec.antenna_id, l] = rec.re + 1j * rec.im
            else:
                h[rec.antenna_id, l] = 10 ** (rec.rssi_db / 20) * np.exp(1j * rec.phase_rad)
            mask[rec.antenna_id, l] = True
            quality[rec.antenna_id, l] = rec.rssi_db
        out.append((epc, ts, ChannelMatrix(h=h, carriers_hz=plan.carriers_hz,
                                           geometry=geom, quality=quality, mask=mask)))
    return out


# ---------------------------------------------------------------------------
# Decoded-packet records (the decode CLI output / locator input schema)


def packet_record(epc_bits, t0_s: float, alpha0_hz: float, crc_ok: bool,
                  ch: ChannelMatrix) -> dict:
    channels = []
    for k in range(ch.shape[0]):
        for l in range(ch.shape[1]):
            channels.append({
                "antenna": k, "carrier_hz": ch.carriers_hz[l],
                "re": float(ch.h[k, l].real), "im": float(ch.h[k, l].imag),
                "snr_db": float(ch.quality[k, l]) if ch.quality is not None else None,
            })
    return {"epc": bits_to_hex(epc_bits), "t0": t0_s, "alpha0": alpha0_hz,
            "crc_ok": crc_ok, "channels": channels}


def record_to_channel(doc: dict, geom: ArrayGeometry, plan: CarrierPlan) -> ChannelMatrix:
    h = np.zeros((geom.n_antennas, plan.n_carriers), dtype=complex)
    quality = np.zeros(h.shape)
    carrier_index = {f: l for l, f in enumerate(plan.carriers_hz)}
    for c in doc["channels"]:
        l = carrier_index[float(c["carrier_hz"])]
        h[int(c["antenna"]), l] = float(c["re"]) + 1j * float(c["im"])
        if c.get("snr_db") is not None:
            quality[int(c["antenna"]), l] = float(c["snr_db"])
    return ChannelMatrix(h=h, carriers_hz=plan.carriers_hz, geometry=geom, quality=quality)
