"""Multisine excitation and Miller-coded tag uplink synthesis.

The tag baseband here is the ideal +/-1 ASK switching waveform; every tone of
the excitation sees the same modulation.  Clock imperfections follow the
square-wave clock model: the instantaneous subcarrier frequency is
f_blf - alpha0 - alpha(t), delayed by the start-of-frame offset t0.  Positive
alpha therefore means a slower tag clock.

RNG state is always passed explicitly; synthesis is bit-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import CarrierPlan, ChannelMatrix, ModelError

BLF_DEFAULT_HZ = 250e3
MILLER_M_DEFAULT = 4
SYNC_BITS = (0, 1, 1, 1)
PILOT_SYMBOLS_DEFAULT = 4
TREXT_EXTRA_PILOT = 12
GAP_DEFAULT_S = 200e-6

ALPHA0_LIMIT_FRAC = 0.10
DRIFT_LIMIT_FRAC = 0.025


@dataclass(frozen=True, eq=False)
class BasebandWave:
    """Complex baseband sample series.

    Synthesis functions that know their tone decomposition attach it via the
    ``tone_*`` fields so downstream mixing can regenerate individual tones.
    """

    samples: np.ndarray
    rate_hz: float
    start_s: float = 0.0
    tone_offsets_hz: tuple[float, ...] | None = None
    tone_phases_rad: tuple[float, ...] | None = None
    tone_amplitude: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=complex))
        if self.rate_hz <= 0:
            raise ModelError("sample rate must be positive")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.rate_hz

    def times(self) -> np.ndarray:
        return self.start_s + np.arange(self.samples.size) / self.rate_hz


@dataclass(frozen=True)
class MultisineSpec:
    plan: CarrierPlan
    duration_s: float
    amplitude: float = 1.0

    def __post_init__(self):
        if self.duration_s <= 0:
            raise ModelError("duration must be positive")
        if self.plan.n_carriers < 1:
            raise ModelError("need at least one tone")


def synth_multisine(spec: MultisineSpec) -> BasebandWave:
    """Sum of equal-amplitude complex tones at the plan's capture-band offsets."""
    plan = spec.plan
    rate = plan.capture_rate_hz
    offsets = np.asarray(plan.tone_offsets_hz, dtype=float)
    if np.any(np.abs(offsets) >= rate / 2):
        raise ModelError("tone offset outside the Nyquist band of the capture rate")
    n = int(round(spec.duration_s * rate))
    t = np.arange(n) / rate
    phases = np.asarray(plan.tone_phases_rad, dtype=float)
    samples = spec.amplitude * np.exp(
        1j * (2 * np.pi * offsets[:, None] * t[None, :] + phases[:, None])
    ).sum(axis=0)
    return BasebandWave(samples=samples, rate_hz=rate, start_s=0.0,
                        tone_offsets_hz=tuple(offsets),
                        tone_phases_rad=tuple(phases),
                        tone_amplitude=spec.amplitude)


def crest_factor(wave: BasebandWave) -> float:
    """Peak magnitude over RMS of the sample series."""
    x = wave.samples
    if x.size == 0:
        raise ModelError("empty wave")
    rms = math.sqrt(float(np.mean(np.abs(x) ** 2)))
    if rms == 0:
        raise ModelError("all-zero wave has no crest factor")
    return float(np.max(np.abs(x)) / rms)


def papr_db(wave: BasebandWave) -> float:
    return 20.0 * math.log10(crest_factor(wave))


def newman_phases(n_tones: int) -> np.ndarray:
    """Quadratic phase schedule pi*(i-1)^2/n, a strong low-crest starting point."""
    i = np.arange(n_tones)
    return np.pi * i ** 2 / n_tones


def _tone_harmonics(offsets_hz) -> tuple[np.ndarray, float]:
    """Express offsets as integer multiples of their greatest common divisor."""
    off = np.asarray(offsets_hz, dtype=float)
    nz = np.abs(off[np.abs(off) > 1e-9])
    if nz.size == 0:
        raise ModelError("all offsets zero; nothing to optimize")
    ints = np.round(nz).astype(np.int64)
    if np.any(np.abs(nz - ints) > 1e-6):
        raise ModelError("tone offsets must sit on an integer-hertz grid")
    f0 = float(np.gcd.reduce(ints))
    k = np.round(off / f0).astype(np.int64)
    return k, f0


def _multisine_period(phases: np.ndarray, k: np.ndarray, n_grid: int) -> np.ndarray:
    spectrum = np.zeros(n_grid, dtype=complex)
    np.add.at(spectrum, k % n_grid, np.exp(1j * phases))
    return np.fft.ifft(spectrum) * n_grid


def optimize_tone_phases(offsets_hz, iterations: int = 200) -> tuple[float, ...]:
    """Crest-minimizing tone phases for an arbitrary commensurate tone set.

    Newman initialization followed by iterative clip-and-restore: the period
    waveform is hard-clipped at its RMS and the tone phases are re-read from
    the clipped spectrum.  The best phase set seen is kept, so the result is
    never worse than the initialization.
    """
    k, _ = _tone_harmonics(offsets_hz)
    n = k.size
    if n < 2:
        raise ModelError("need at least two tones")
    n_grid = 1 << max(8, int(np.ceil(np.log2(16 * (np.max(np.abs(k)) + 1)))))
    phases = newman_phases(n)

    def cf(ph):
        x = _multisine_period(ph, k, n_grid)
        return float(np.max(np.abs(x)) / np.sqrt(np.mean(np.abs(x) ** 2)))

    best = phases.copy()
    best_cf = cf(best)
    cur = phases.copy()
    for _ in range(max(0, iterations)):
        x = _multisine_period(cur, k, n_grid)
        rms = np.sqrt(np.mean(np.abs(x) ** 2))
        mag = np.abs(x)
        x = np.where(mag > rms, x * (rms / np.maximum(mag, 1e-30)), x)
        spectrum = np.fft.fft(x) / n_grid
        cur = np.angle(spectrum[k % n_grid])
        c = cf(cur)
        if c < best_cf:
            best_cf, best = c, cur.copy()
    return tuple(float(p) for p in best)


def optimize_crest_phases(n_tones: int, iterations: int = 200) -> tuple[float, ...]:
    """Crest-minimizing phases for ``n_tones`` uniformly spaced tones."""
    if n_tones < 2:
        raise ModelError("need at least two tones")
    return optimize_tone_phases(np.arange(1, n_tones + 1, dtype=float), iterations)


# ---------------------------------------------------------------------------
# Gen2 uplink framing


def gen2_crc16(bits) -> list[int]:
    """CRC-16 (0x1021, init 0xFFFF, output inverted) over a bit sequence."""
    reg = 0xFFFF
    for b in bits:
        msb = (reg >> 15) & 1
        reg = (reg << 1) & 0xFFFF
        if msb ^ int(b):
            reg ^= 0x1021
    reg ^= 0xFFFF
    return [(reg >> (15 - i)) & 1 for i in range(16)]


def pc_word(epc_len_bits: int) -> list[int]:
    """Protocol-control word: 5-bit EPC word count followed by zeros."""
    if epc_len_bits % 16:
        raise ModelError("EPC length must be a whole number of 16-bit words")
    words = epc_len_bits // 16
    return [(words >> (4 - i)) & 1 for i in range(5)] + [0] * 11


def epc_reply_bits(epc_bits, include_pc_crc: bool = True) -> list[int]:
    epc = [int(b) for b in epc_bits]
    if not include_pc_crc:
        return epc
    payload = pc_word(len(epc)) + epc
    return payload + gen2_crc16(payload)


def check_epc_reply(reply_bits) -> tuple[list[int], bool]:
    """Split a PC+EPC+CRC reply and report whether the CRC matches."""
    bits = [int(b) for b in reply_bits]
    if len(bits) < 32:
        return bits, False
    payload, crc = bits[:-16], bits[-16:]
    return payload[16:], gen2_crc16(payload) == crc


@dataclass(frozen=True)
class PacketFormat:
    """Uplink framing knobs shared by the synthesizer and the decoder."""

    pilot_symbols: int = PILOT_SYMBOLS_DEFAULT
    sync_bits: tuple[int, ...] = SYNC_BITS
    trext: bool = False
    gap_s: float = GAP_DEFAULT_S
    include_pc_crc: bool = True
    dummy_bit: bool = True

    @property
    def total_pilot_symbols(self) -> int:
        return self.pilot_symbols + (TREXT_EXTRA_PILOT if self.trext else 0)

    @property
    def preamble_bits(self) -> tuple[int, ...]:
        return (0,) * self.total_pilot_symbols + tuple(self.sync_bits)


DEFAULT_FORMAT = PacketFormat()


@dataclass(frozen=True, eq=False)
class TagPacket:
    """One tag uplink (RN16 reply then EPC reply) plus its clock imperfections.

    ``drift_alpha_hz`` samples alpha(t) once per symbol period of elapsed
    reply time; the last value holds beyond the array.
    """

    rn16_bits: tuple[int, ...]
    epc_bits: tuple[int, ...]
    blf_hz: float = BLF_DEFAULT_HZ
    miller_m: int = MILLER_M_DEFAULT
    t0_s: float = 0.0
    alpha0_hz: float = 0.0
    drift_alpha_hz: tuple[float, ...] = ()

    def __post_init__(self):
        if len(self.rn16_bits) != 16:
            raise ModelError("RN16 must be 16 bits")
        if len(self.epc_bits) % 16 or not self.epc_bits:
            raise ModelError("EPC length must be a positive multiple of 16 bits")
        if self.miller_m not in (2, 4, 8):
            raise ModelError("miller_m must be 2, 4 or 8")
        if abs(self.alpha0_hz) > ALPHA0_LIMIT_FRAC * self.blf_hz + 1e-9:
            raise ModelError("alpha0 outside +/-10% of BLF")
        if self.drift_alpha_hz and max(abs(a) for a in self.drift_alpha_hz) > \
                DRIFT_LIMIT_FRAC * self.blf_hz + 1e-9:
            raise ModelError("drift outside +/-2.5% of BLF")
        if self.t0_s < 0:
            raise ModelError("t0 must be non-negative")

    @property
    def symbol_s(self) -> float:
        return self.miller_m / self.blf_hz


def random_walk_drift(n_symbols: int, blf_hz: float, rng,
                      max_frac: float = DRIFT_LIMIT_FRAC,
                      step_frac: float = 0.0006) -> tuple[float, ...]:
    """Bounded random walk for alpha(t): reflective clipping at +/-max_frac*blf."""
    limit = max_frac * blf_hz
    steps = rng.normal(0.0, step_frac * blf_hz, size=n_symbols)
    out = np.zeros(n_symbols)
    a = rng.uniform(-limit, limit)
    for i, s in enumerate(steps):
        a += s
        if a > limit:
            a = 2 * limit - a
        elif a < -limit:
            a = -2 * limit - a
        out[i] = np.clip(a, -limit, limit)
    return tuple(float(v) for v in out)


def random_tag_packet(rng, blf_hz: float = BLF_DEFAULT_HZ, miller_m: int = MILLER_M_DEFAULT,
                      epc_len: int = 96, t0_s: float = 0.0,
                      alpha0_frac: float = 0.0, drift_frac: float = 0.0,
                      fmt: PacketFormat = DEFAULT_FORMAT) -> TagPacket:
    rn16 = tuple(int(b) for b in rng.integers(0, 2, size=16))
    epc = tuple(int(b) for b in rng.integers(0, 2, size=epc_len))
    drift: tuple[float, ...] = ()
    if drift_frac > 0:
        layout = packet_layout(blf_hz, miller_m, epc_len, fmt)
        n_sym = int(np.ceil(layout.total_s / (miller_m / blf_hz))) + 8
        drift = random_walk_drift(n_sym, blf_hz, rng, max_frac=drift_frac)
    return TagPacket(rn16_bits=rn16, epc_bits=epc, blf_hz=blf_hz, miller_m=miller_m,
                     t0_s=t0_s, alpha0_hz=alpha0_frac * blf_hz, drift_alpha_hz=drift)


# ---------------------------------------------------------------------------
# Miller-M line coding


def miller_symbol_signs(bits) -> np.ndarray:
    """Baseband start sign of each symbol: inversion at every symbol boundary,
    which a mid-symbol inversion (data-1) cancels."""
    bits = np.asarray(bits, dtype=int)
    factors = np.where(bits == 0, -1, 1)
    signs = np.ones(bits.size, dtype=int)
    if bits.size > 1:
        signs[1:] = np.cumprod(factors[:-1])
    return signs


def miller_encode(bits, blf_hz: float, miller_m: int, rate_hz: float,
                  preamble: bool = True,
                  fmt: PacketFormat = DEFAULT_FORMAT) -> BasebandWave:
    """+/-1 Miller-M baseband: M subcarrier cycles per bit, phase inversion at
    every symbol boundary plus a mid-symbol inversion for data-1.  The frame
    preamble (pilot zeros + sync pattern) is prepended when ``preamble``."""
    if miller_m not in (2, 4, 8):
        raise ModelError("miller_m must be 2, 4 or 8")
    if rate_hz < 8 * blf_hz:
        raise ModelError("sample rate must be at least 8x BLF")
    frame = (list(fmt.preamble_bits) if preamble else []) + [int(b) for b in bits]
    if not frame:
        raise ModelError("no bits to encode")
    frame = np.asarray(frame, dtype=int)
    if np.any((frame != 0) & (frame != 1)):
        raise ModelError("bits must be 0/1")
    t_sym = miller_m / blf_hz
    n = int(round(frame.size * t_sym * rate_hz))
    t = np.arange(n) / rate_hz
    # One global half-period index drives the subcarrier, the symbol index and
    # the mid-symbol flip, so coincident inversions cancel exactly even when
    # boundaries fall between samples.
    half = np.floor(2 * blf_hz * t + 1e-9).astype(np.int64)
    sym = np.minimum(half // (2 * miller_m), frame.size - 1)
    sq = 1 - 2 * (half % 2)
    mid = np.where((frame[sym] == 1) & (half - sym * 2 * miller_m >= miller_m), -1, 1)
    signs = miller_symbol_signs(frame)
    samples = (signs[sym] * mid * sq).astype(complex)
    return BasebandWave(samples=samples, rate_hz=rate_hz)


def miller_slice(wave: BasebandWave, blf_hz: float, miller_m: int, n_bits: int,
                 preamble: bool = True, fmt: PacketFormat = DEFAULT_FORMAT) -> list[int]:
    """Hard-decision symbol slicer for a +/-1-domain Miller frame.

    Tracks the boundary sign recursion and picks the bit whose symbol template
    correlates best; exact at high SNR.  The decoder proper uses the Viterbi
    search instead.
    """
    rate = wave.rate_hz
    t_sym = miller_m / blf_hz
    skip = len(fmt.preamble_bits) if preamble else 0
    x = np.real(wave.samples)
    bits: list[int] = []
    sign = miller_symbol_signs(list(fmt.preamble_bits) + [0])[-1] if preamble else 1
    for i in range(n_bits):
        a = int(round((skip + i) * t_sym * rate))
        b = int(round((skip + i + 1) * t_sym * rate))
        t = np.arange(a, b) / rate
        sq = 1 - 2 * (np.floor(2 * blf_hz * t).astype(np.int64) % 2)
        within = t - (skip + i) * t_sym
        tmpl0 = sign * sq
        tmpl1 = sign * np.where(within >= t_sym / 2, -1, 1) * sq
        bit = int(np.dot(x[a:b], tmpl1) > np.dot(x[a:b], tmpl0))
        bits.append(bit)
        sign = sign if bit else -sign
    return bits


# ---------------------------------------------------------------------------
# Full uplink packet


@dataclass(frozen=True)
class PacketLayout:
    """Nominal packet timing: RN16 frame, idle gap, EPC frame."""

    symbol_s: float
    preamble_symbols: int
    pilot_symbols: int
    rn16_frame_symbols: int
    epc_frame_symbols: int
    gap_s: float

    @property
    def rn16_start_s(self) -> float:
        return 0.0

    @property
    def rn16_s(self) -> float:
        return self.rn16_frame_symbols * self.symbol_s

    @property
    def epc_start_s(self) -> float:
        return self.rn16_s + self.gap_s

    @property
    def epc_s(self) -> float:
        return self.epc_frame_symbols * self.symbol_s

    @property
    def total_s(self) -> float:
        return self.epc_start_s + self.epc_s

    @property
    def rn16_active_s(self) -> float:
        """Data-bearing RN16 reply time (sync + payload + dummy, pilot excluded)."""
        return (self.rn16_frame_symbols - self.pilot_symbols) * self.symbol_s

    @property
    def active_s(self) -> float:
        """Data-bearing time of the whole packet (pilot and gap excluded)."""
        return (self.rn16_frame_symbols + self.epc_frame_symbols
                - 2 * self.pilot_symbols) * self.symbol_s

    @property
    def template_symbols(self) -> tuple[int, int]:
        """Matched-filter template lengths (RN16-only, full packet) in symbols."""
        return (self.rn16_frame_symbols,
                self.rn16_frame_symbols + self.epc_frame_symbols)


def packet_layout(blf_hz: float, miller_m: int, epc_len: int,
                  fmt: PacketFormat = DEFAULT_FORMAT) -> PacketLayout:
    t_sym = miller_m / blf_hz
    pre = len(fmt.preamble_bits)
    dummy = 1 if fmt.dummy_bit else 0
    epc_payload = epc_len + (32 if fmt.include_pc_crc else 0)
    return PacketLayout(
        symbol_s=t_sym,
        preamble_symbols=pre,
        pilot_symbols=fmt.total_pilot_symbols,
        rn16_frame_symbols=pre + 16 + dummy,
        epc_frame_symbols=pre + epc_payload + dummy,
        gap_s=fmt.gap_s,
    )


def _frame_bits(payload, fmt: PacketFormat) -> list[int]:
    return list(fmt.preamble_bits) + [int(b) for b in payload] + ([1] if fmt.dummy_bit else [])


def packet_template(pkt: TagPacket, rate_hz: float,
                    fmt: PacketFormat = DEFAULT_FORMAT) -> BasebandWave:
    """Nominal-clock full-packet baseband (RN16 frame, idle gap, EPC frame)."""
    layout = packet_layout(pkt.blf_hz, pkt.miller_m, len(pkt.epc_bits), fmt)
    n = int(round(layout.total_s * rate_hz))
    samples = np.zeros(n, dtype=complex)
    rn16 = miller_encode(_frame_bits(pkt.rn16_bits, fmt), pkt.blf_hz, pkt.miller_m,
                         rate_hz, preamble=False, fmt=fmt)
    epc = miller_encode(_frame_bits(epc_reply_bits(pkt.epc_bits, fmt.include_pc_crc), fmt),
                        pkt.blf_hz, pkt.miller_m, rate_hz, preamble=False, fmt=fmt)
    i0 = int(round(layout.epc_start_s * rate_hz))
    samples[:rn16.samples.size] = rn16.samples
    samples[i0:i0 + epc.samples.size] = epc.samples
    return BasebandWave(samples=samples, rate_hz=rate_hz)


def _drift_integral(elapsed: np.ndarray, pkt: TagPacket) -> np.ndarray:
    """Exact integral of the piecewise-constant alpha(t) from 0 to each elapsed time."""
    if not pkt.drift_alpha_hz:
        return np.zeros_like(elapsed)
    alpha = np.asarray(pkt.drift_alpha_hz, dtype=float)
    t_sym = pkt.symbol_s
    cum = np.concatenate([[0.0], np.cumsum(alpha) * t_sym])
    idx = np.minimum((elapsed / t_sym).astype(int), alpha.size - 1)
    return cum[idx] + alpha[idx] * (elapsed - idx * t_sym)


def clock_warp(elapsed: np.ndarray, pkt: TagPacket) -> np.ndarray:
    """Map elapsed receive time (since t0) to nominal template time.

    The tag clock runs at f_blf - alpha0 - alpha(t), so nominal time advances
    by the integral of that rate over f_blf.
    """
    elapsed = np.asarray(elapsed, dtype=float)
    return elapsed - (pkt.alpha0_hz * elapsed + _drift_integral(elapsed, pkt)) / pkt.blf_hz


def apply_clock_offset(wave: BasebandWave, pkt: TagPacket) -> BasebandWave:
    """Time-warp a nominal waveform onto the tag's imperfect clock and delay
    it by t0.  Resamples along the exactly integrated clock phase."""
    rate = wave.rate_hz
    dur = wave.duration_s
    # Upper bound for how long the slowed-down clock can stretch the packet.
    stretch = 1.0 / (1.0 - ALPHA0_LIMIT_FRAC - DRIFT_LIMIT_FRAC)
    n_out = int(round((pkt.t0_s + dur * stretch) * rate)) + 1
    t = np.arange(n_out) / rate
    elapsed = t - pkt.t0_s
    live = elapsed >= 0
    nominal = np.zeros_like(t)
    nominal[live] = clock_warp(elapsed[live], pkt)
    src_t = np.arange(wave.samples.size) / rate
    re = np.interp(nominal, src_t, np.real(wave.samples), left=0.0, right=0.0)
    im = np.interp(nominal, src_t, np.imag(wave.samples), left=0.0, right=0.0)
    out = re + 1j * im
    out[~live] = 0.0
    return BasebandWave(samples=out, rate_hz=rate, start_s=wave.start_s)


def build_packet_baseband(pkt: TagPacket, rate_hz: float,
                          fmt: PacketFormat = DEFAULT_FORMAT,
                          rn16_only: bool = False) -> BasebandWave:
    """Full uplink baseband with the packet's clock imperfections applied."""
    if rn16_only:
        base = miller_encode(_frame_bits(pkt.rn16_bits, fmt), pkt.blf_hz, pkt.miller_m,
                             rate_hz, preamble=False, fmt=fmt)
    else:
        base = packet_template(pkt, rate_hz, fmt)
    return apply_clock_offset(base, pkt)


def backscatter_mix(excitation: BasebandWave, tag: BasebandWave,
                    channel: ChannelMatrix, antenna: int) -> BasebandWave:
    """Received baseband at one antenna: every excitation tone modulated by the
    tag baseband and weighted by that carrier's channel entry."""
    if excitation.tone_offsets_hz is None:
        raise ModelError("excitation wave carries no tone decomposition")
    if abs(excitation.rate_hz - tag.rate_hz) > 1e-6:
        raise ModelError("excitation and tag sample rates differ")
    if not 0 <= antenna < channel.shape[0]:
        raise ModelError("antenna index out of range")
    if len(excitation.tone_offsets_hz) != channel.shape[1]:
        raise ModelError("tone count does not match channel carriers")
    n = excitation.samples.size
    b = np.zeros(n, dtype=complex)
    i0 = int(round((tag.start_s - excitation.start_s) * excitation.rate_hz))
    src = tag.samples
    lo, hi = max(i0, 0), min(i0 + src.size, n)
    if hi <= lo:
        raise ModelError("tag waveform does not overlap the excitation")
    b[lo:hi] = src[lo - i0:hi - i0]
    t = excitation.times()
    amp = excitation.tone_amplitude if excitation.tone_amplitude is not None else 1.0
    out = np.zeros(n, dtype=complex)
    h = channel.h[antenna]
    for off, phi, hl in zip(excitation.tone_offsets_hz, excitation.tone_phases_rad, h):
        out += hl * amp * np.exp(1j * (2 * np.pi * off * t + phi)) * b
    return BasebandWave(samples=out, rate_hz=excitation.rate_hz, start_s=excitation.start_s)


# ---------------------------------------------------------------------------
# Interleaved complex-float32 file format with a JSON sidecar


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_wave(wave: BasebandWave, path) -> Path:
    """Write little-endian float32 I/Q pairs plus a JSON sidecar."""
    path = Path(path)
    inter = np.empty(2 * wave.samples.size, dtype="<f4")
    inter[0::2] = np.real(wave.samples).astype("<f4")
    inter[1::2] = np.imag(wave.samples).astype("<f4")
    path.write_bytes(inter.tobytes())
    meta = {
        "format": "cf32-interleaved-le",
        "rate_hz": wave.rate_hz,
        "start_s": wave.start_s,
        "n_samples": int(wave.samples.size),
    }
    if wave.tone_offsets_hz is not None:
        meta["tone_offsets_hz"] = list(wave.tone_offsets_hz)
        meta["tone_phases_rad"] = list(wave.tone_phases_rad)
        meta["tone_amplitude"] = wave.tone_amplitude
    _sidecar_path(path).write_text(json.dumps(meta, indent=2))
    return path


def load_wave(path) -> BasebandWave:
    path = Path(path)
    meta = json.loads(_sidecar_path(path).read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    samples = raw[0::2].astype(float) + 1j * raw[1::2].astype(float)
    if samples.size != meta["n_samples"]:
        raise ModelError("sample count does not match sidecar")
    tones = meta.get("tone_offsets_hz")
    return BasebandWave(
        samples=samples, rate_hz=float(meta["rate_hz"]), start_s=float(meta["start_s"]),
        tone_offsets_hz=tuple(tones) if tones else None,
        tone_phases_rad=tuple(meta["tone_phases_rad"]) if tones else None,
        tone_amplitude=meta.get("tone_amplitude"),
    )
