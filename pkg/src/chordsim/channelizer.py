"""Digital channelization: slice a wideband capture into per-carrier baseband
streams and remove the single-tone self-interference at each channel's DC.

All channels share one linear-phase FIR design so their group delay is
identical; streams are delay-compensated onto the capture time axis and the
transient span is reported for downstream correlators to skip.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .model import CarrierPlan, ModelError, TAG_BANDWIDTH_HZ
from .waveform import BasebandWave, save_wave, load_wave

STOPBAND_ATTEN_DB = 80.0
# Channel shaping filter (at the decimated rate): passes the +/-BLF subcarrier
# sidebands of Miller-4 at BLF 250 kHz and stops before the desk-scale
# neighbor's band edge.  The tag bandlimit and this filter are staggered so
# their transition bands never overlap at the 693.75 kHz desk spacing, which
# keeps adjacent-channel leakage below -55 dB per neighbor.
SHAPE_PASS_HZ = 300e3
SHAPE_STOP_HZ = 370e3
# Pre-decimation anti-alias filter (at the capture rate).
ANTIALIAS_PASS_HZ = 400e3
# Transmit-side tag bandlimit: keeps the fundamental subcarrier sidebands,
# drops the square-wave harmonics that would otherwise collide with other
# channels in the compressed desk-scale capture.
TAG_PASS_HZ = 300e3
TAG_STOP_HZ = 380e3

NOTCH_DEFAULT_HZ = 10e3


def design_lowpass(rate_hz: float, pass_hz: float, stop_hz: float,
                   atten_db: float = STOPBAND_ATTEN_DB) -> np.ndarray:
    """Windowed-sinc (Kaiser) linear-phase FIR, odd length for integer delay."""
    if not 0 < pass_hz < stop_hz < rate_hz / 2:
        raise ModelError("invalid filter band edges")
    width = (stop_hz - pass_hz) / (rate_hz / 2)
    numtaps, beta = sps.kaiserord(atten_db, width)
    numtaps |= 1
    return sps.firwin(numtaps, (pass_hz + stop_hz) / 2, window=("kaiser", beta), fs=rate_hz)


def _filter_aligned(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Filter and remove the group delay; output sample n is aligned with
    input sample n."""
    delay = (taps.size - 1) // 2
    y = sps.fftconvolve(x, taps, mode="full")
    return y[delay:delay + x.size]


@dataclass(frozen=True, eq=False)
class WidebandCapture:
    """Complex capture of the whole multisine band at one antenna."""

    samples: np.ndarray
    rate_hz: float
    center_hz: float
    start_s: float = 0.0
    antenna_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=complex))
        if not np.all(np.isfinite(self.samples)):
            raise ModelError("capture samples must be finite")


@dataclass(frozen=True, eq=False)
class ChannelBank:
    """Per-carrier baseband streams at the decimated channel rate.

    ``group_delay_s`` is the filter transient span at each end of every
    stream; those samples are present but not trustworthy.
    """

    streams: np.ndarray
    rate_hz: float
    carriers_hz: tuple[float, ...]
    antenna_id: int = 0
    start_s: float = 0.0
    group_delay_s: float = 0.0
    compression: dict | None = None

    def __post_init__(self):
        object.__setattr__(self, "streams", np.asarray(self.streams, dtype=complex))
        if self.streams.ndim != 2 or self.streams.shape[0] != len(self.carriers_hz):
            raise ModelError("stream count must equal carrier count")

    @property
    def n_channels(self) -> int:
        return self.streams.shape[0]

    @property
    def n_samples(self) -> int:
        return self.streams.shape[1]

    def times(self) -> np.ndarray:
        return self.start_s + np.arange(self.n_samples) / self.rate_hz


def compression_report(plan: CarrierPlan, tag_bandwidth_hz: float = TAG_BANDWIDTH_HZ) -> dict:
    """Data-rate and effective-information compression of the channelized form."""
    l = plan.n_carriers
    return {
        "data_rate_fraction": l * plan.channel_out_rate_hz / plan.capture_rate_hz,
        "information_fraction": l * tag_bandwidth_hz / plan.span_hz,
    }


def channelize(capture: WidebandCapture, plan: CarrierPlan) -> ChannelBank:
    """Mix each tone offset to DC, low-pass, decimate to the channel rate.

    The per-tone phase of the plan is removed during mixing, so a tag response
    h*tone*B comes out as h*B directly.
    """
    if abs(capture.rate_hz - plan.capture_rate_hz) > 1e-6:
        raise ModelError("capture rate does not match the plan")
    rate = plan.capture_rate_hz
    out_rate = plan.channel_out_rate_hz
    dec = plan.decimation
    offsets = np.asarray(plan.tone_offsets_hz, dtype=float)
    if np.any(np.abs(offsets) + ANTIALIAS_PASS_HZ > 0.49 * rate):
        raise ModelError("carrier too close to the capture Nyquist edge")

    aa = design_lowpass(rate, ANTIALIAS_PASS_HZ, max(out_rate - TAG_STOP_HZ, ANTIALIAS_PASS_HZ * 1.5))
    sh = design_lowpass(out_rate, SHAPE_PASS_HZ, SHAPE_STOP_HZ)

    t = capture.start_s + np.arange(capture.samples.size) / rate
    n_out = (capture.samples.size - 1) // dec + 1
    streams = np.empty((plan.n_carriers, n_out), dtype=complex)
    for l, (off, phi) in enumerate(zip(offsets, plan.tone_phases_rad)):
        mixed = capture.samples * np.exp(-1j * (2 * np.pi * off * t + phi))
        low = _filter_aligned(mixed, aa)[::dec]
        streams[l] = _filter_aligned(low, sh)
    transient = (aa.size - 1) / 2 / rate + (sh.size - 1) / 2 / out_rate
    return ChannelBank(
        streams=streams, rate_hz=out_rate, carriers_hz=plan.carriers_hz,
        antenna_id=capture.antenna_id, start_s=capture.start_s,
        group_delay_s=transient, compression=compression_report(plan),
    )


def apply_shaping(wave: BasebandWave, out_rate_hz: float) -> BasebandWave:
    """Run a channel-rate waveform through the shared channel shaping filter.

    This is the reference path: a directly synthesized per-channel baseband
    filtered this way matches the channelized wideband capture.
    """
    if abs(wave.rate_hz - out_rate_hz) > 1e-6:
        raise ModelError("waveform is not at the channel rate")
    sh = design_lowpass(out_rate_hz, SHAPE_PASS_HZ, SHAPE_STOP_HZ)
    return BasebandWave(samples=_filter_aligned(wave.samples, sh), rate_hz=out_rate_hz,
                        start_s=wave.start_s)


def bandlimit_tag(wave: BasebandWave) -> BasebandWave:
    """Transmit-side bandlimit of the +/-1 tag baseband, common to all tones."""
    taps = design_lowpass(wave.rate_hz, TAG_PASS_HZ, TAG_STOP_HZ)
    return BasebandWave(samples=_filter_aligned(wave.samples, taps), rate_hz=wave.rate_hz,
                        start_s=wave.start_s)


def processed_tag_baseband(tag_capture_rate: BasebandWave, plan: CarrierPlan,
                           bandlimit: bool = True) -> BasebandWave:
    """Tag baseband as it appears in one channel stream: bandlimited, decimated
    through the anti-alias filter, and channel-shaped.

    Multiplying this by h[k][l] reproduces channel (k, l) of a channelized
    capture up to cross-channel leakage, which is the fast simulation path.
    """
    rate = plan.capture_rate_hz
    if abs(tag_capture_rate.rate_hz - rate) > 1e-6:
        raise ModelError("tag waveform must be at the capture rate")
    out_rate = plan.channel_out_rate_hz
    dec = plan.decimation
    x = tag_capture_rate.samples
    if bandlimit:
        x = _filter_aligned(x, design_lowpass(rate, TAG_PASS_HZ, TAG_STOP_HZ))
    aa = design_lowpass(rate, ANTIALIAS_PASS_HZ, max(out_rate - TAG_STOP_HZ, ANTIALIAS_PASS_HZ * 1.5))
    low = _filter_aligned(x, aa)[::dec]
    shaped = _filter_aligned(low, design_lowpass(out_rate, SHAPE_PASS_HZ, SHAPE_STOP_HZ))
    return BasebandWave(samples=shaped, rate_hz=out_rate, start_s=tag_capture_rate.start_s)


def notch_dc(bank: ChannelBank, notch_hz: float = NOTCH_DEFAULT_HZ,
             blf_hz: float = 250e3) -> ChannelBank:
    """Remove a narrow band around DC from every channel.

    Implemented as an exact spectral projection (FFT bins inside +/-notch_hz
    zeroed), so it is idempotent and leaves the +/-BLF subcarrier sidebands
    untouched.
    """
    if notch_hz <= 0 or notch_hz >= blf_hz:
        raise ModelError("notch must be narrower than the subcarrier offset")
    if bank.rate_hz <= 2 * blf_hz:
        raise ModelError("channel rate too low for the subcarrier sidebands")
    spectra = np.fft.fft(bank.streams, axis=1)
    freqs = np.fft.fftfreq(bank.n_samples, d=1.0 / bank.rate_hz)
    spectra[:, np.abs(freqs) <= notch_hz] = 0.0
    return replace(bank, streams=np.fft.ifft(spectra, axis=1))


def dynamic_range_required(bits: int) -> float:
    """Quantizer dynamic range 6.02 N + 1.76 dB."""
    if bits < 1:
        raise ModelError("need at least one bit")
    return 6.02 * bits + 1.76


# ---------------------------------------------------------------------------
# Bank export: one file per channel plus a JSON manifest


def save_bank(bank: ChannelBank, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for l in range(bank.n_channels):
        name = f"ch_{l:02d}.cf32"
        save_wave(BasebandWave(samples=bank.streams[l], rate_hz=bank.rate_hz,
                               start_s=bank.start_s), directory / name)
        files.append(name)
    manifest = {
        "rate_hz": bank.rate_hz,
        "start_s": bank.start_s,
        "antenna_id": bank.antenna_id,
        "group_delay_s": bank.group_delay_s,
        "carriers_hz": list(bank.carriers_hz),
        "files": files,
        "compression": bank.compression,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return directory / "manifest.json"


def load_bank(manifest_path) -> ChannelBank:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    meta = json.loads(manifest_path.read_text())
    streams = [load_wave(manifest_path.parent / name).samples for name in meta["files"]]
    return ChannelBank(
        streams=np.asarray(streams), rate_hz=float(meta["rate_hz"]),
        carriers_hz=tuple(meta["carriers_hz"]), antenna_id=int(meta["antenna_id"]),
        start_s=float(meta["start_s"]), group_delay_s=float(meta["group_delay_s"]),
        compression=meta.get("compression"),
    )
