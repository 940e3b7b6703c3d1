"""Uplink recovery from channelized captures.

One pass, no iteration: preamble search (joint t0/CFO grid with refinement) ->
Costas tracking of the residual clock fluctuation -> clock compensation ->
max-SNR combining over antennas per carrier -> maximum-ratio combining across
carriers -> Viterbi bit search -> full-packet matched channel estimation.

Streams are plain complex arrays at the channel rate; every stage is a pure
function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import ndimage
from scipy import optimize as sopt

from .model import ArrayGeometry, CarrierPlan, ChannelMatrix, ModelError
from .channelizer import ChannelBank, apply_shaping
from .waveform import (BLF_DEFAULT_HZ, DEFAULT_FORMAT, MILLER_M_DEFAULT,
                       PacketFormat, TagPacket, check_epc_reply, miller_encode,
                       miller_symbol_signs, packet_layout, packet_template)

ALPHA_SEARCH_FRAC = 0.10
ALPHA_STEP_FRAC = 0.0025
DETECTION_THRESHOLD = 0.3
METRIC_THRESHOLD = 0.1
TRACK_LIMIT_FRAC = 0.03
CLOCK_STRETCH = 1.0 / (1.0 - 0.125)


class DecodeError(RuntimeError):
    """Decode failure with the pipeline stage attributed."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage


class NoPacketError(DecodeError):
    """No preamble found above the detection threshold."""

    def __init__(self, message: str = "correlation peak below threshold"):
        super().__init__("preamble_search", message)


@dataclass(frozen=True)
class SyncEstimate:
    t0_hat_s: float
    alpha0_hat_hz: float
    correlation_peak: float

    def __post_init__(self):
        if not 0.0 <= self.correlation_peak <= 1.0 + 1e-9:
            raise ModelError("correlation peak must be normalized to [0, 1]")


@dataclass(frozen=True, eq=False)
class ClockTrack:
    """Per-symbol estimate of the residual clock fluctuation alpha(t)."""

    alpha_t_hz: np.ndarray
    symbol_s: float
    loop_bandwidth_hz: float
    lock_flag: bool


@dataclass(frozen=True, eq=False)
class DecodedPacket:
    rn16_bits: tuple[int, ...]
    epc_bits: tuple[int, ...]
    crc_ok: bool
    channel: ChannelMatrix
    sync: SyncEstimate
    track: ClockTrack
    snr_db: np.ndarray


def _preamble_template(blf_hz: float, miller_m: int, rate_hz: float,
                       fmt: PacketFormat) -> np.ndarray:
    wave = miller_encode(fmt.preamble_bits, blf_hz, miller_m, rate_hz,
                         preamble=False, fmt=fmt)
    return np.real(wave.samples)


def _parabolic_refine(values: np.ndarray, p: int) -> float:
    if not 0 < p < values.size - 1:
        return 0.0
    c0, c1, c2 = values[p - 1], values[p], values[p + 1]
    denom = c0 - 2 * c1 + c2
    if abs(denom) < 1e-12:
        return 0.0
    return float(np.clip(0.5 * (c0 - c2) / denom, -0.5, 0.5))


def preamble_search(stream: np.ndarray, rate_hz: float,
                    blf_hz: float = BLF_DEFAULT_HZ, miller_m: int = MILLER_M_DEFAULT,
                    fmt: PacketFormat = DEFAULT_FORMAT,
                    window_s: tuple[float, float] | None = None,
                    alpha_span_frac: float = ALPHA_SEARCH_FRAC,
                    alpha_step_frac: float = ALPHA_STEP_FRAC,
                    threshold: float = DETECTION_THRESHOLD,
                    alpha_center_hz: float = 0.0,
                    second_preamble_offset_s: float | None = None) -> SyncEstimate:
    """Joint argmax of the normalized preamble correlation over start time and
    initial clock offset.

    The t0 axis is searched on the sample grid and refined by parabolic
    interpolation; the alpha0 axis on a grid of ``alpha_step_frac`` * BLF and
    refined by bounded scalar minimization.  When the nominal spacing of a
    second in-packet preamble is given, candidates are scored by both peaks
    (both uplink replies start with the same preamble, so a lone correlation
    cannot tell them apart) and alpha0 is re-estimated from the measured
    preamble-to-preamble time baseline, which is far more sensitive than the
    preamble-length correlation itself.
    """
    x = np.asarray(stream, dtype=complex)
    if rate_hz < 4 * blf_hz:
        raise ModelError("channel rate must be at least 4x BLF")
    n = x.size
    max_tmpl = int(2 * len(fmt.preamble_bits) * miller_m / blf_hz * rate_hz)
    nfft = int(2 ** np.ceil(np.log2(n + max_tmpl + 1)))
    xf = np.fft.fft(x, nfft)
    energy = np.concatenate([[0.0], np.cumsum(np.abs(x) ** 2)])
    # Drift can move the second preamble by up to 2.5% of its spacing, and the
    # alpha grid saturates 2.5% short of the worst-case total clock offset.
    pair_win = 8
    if second_preamble_offset_s is not None:
        pair_win = int(0.04 * second_preamble_offset_s * rate_hz) + 8

    lo = 0 if window_s is None else max(0, int(window_s[0] * rate_hz))
    hi = n if window_s is None else min(n, int(window_s[1] * rate_hz))
    if lo >= hi:
        raise ModelError("search window outside the stream")

    def correlate(alpha_hz: float):
        tmpl = _preamble_template(blf_hz - alpha_hz, miller_m, rate_hz, fmt)
        lt = tmpl.size
        corr = np.abs(np.fft.ifft(xf * np.conj(np.fft.fft(tmpl, nfft)))[:n])
        t_norm = math.sqrt(float(np.sum(tmpl ** 2)))
        window_energy = energy[lt:] - energy[:-lt]
        # windows holding only numerical residue would normalize to spurious
        # perfect correlations
        floor = 1e-9 * float(window_energy.max()) + 1e-30
        seg = np.sqrt(np.maximum(window_energy, floor))
        rho = np.zeros(n)
        m = seg.size
        rho[:m] = np.where(window_energy > 100 * floor, corr[:m] / (t_norm * seg), 0.0)
        return rho, corr

    def peak_for(alpha_hz: float):
        rho, corr = correlate(alpha_hz)
        top = min(hi, n - 1)
        score = rho.copy()
        if second_preamble_offset_s is not None:
            d = int(round(second_preamble_offset_s * blf_hz / (blf_hz - alpha_hz) * rate_hz))
            paired = ndimage.maximum_filter1d(rho, size=2 * pair_win + 1, mode="nearest")
            shifted = np.zeros(n)
            if d < n:
                shifted[:n - d] = paired[d:]
            score = rho + shifted
        p = lo + int(np.argmax(score[lo:top]))
        return float(rho[p]), p, corr

    alphas = alpha_center_hz + \
        np.arange(-alpha_span_frac, alpha_span_frac + 1e-12, alpha_step_frac) * blf_hz
    best = max((peak_for(a) + (a,) for a in alphas), key=lambda r: r[0])
    _, _, _, alpha_best = best

    step = alpha_step_frac * blf_hz
    res = sopt.minimize_scalar(
        lambda a: -peak_for(a)[0],
        bounds=(alpha_best - step, alpha_best + step), method="bounded",
        options={"xatol": step / 50},
    )
    if -res.fun > best[0]:
        alpha_best = float(res.x)
    rho_best, p_best, corr = peak_for(alpha_best)

    if rho_best < threshold:
        raise NoPacketError()

    t0 = (p_best + _parabolic_refine(corr, p_best)) / rate_hz
    alpha_hat = float(alpha_best)
    if second_preamble_offset_s is not None:
        d = int(round(second_preamble_offset_s * blf_hz / (blf_hz - alpha_best) * rate_hz))
        w_lo = max(p_best + d - pair_win, 0)
        w_hi = min(p_best + d + pair_win + 1, n)
        if w_hi > w_lo:
            p2 = w_lo + int(np.argmax(corr[w_lo:w_hi]))
            t2 = (p2 + _parabolic_refine(corr, p2)) / rate_hz
            if t2 > t0:
                alpha_hat = blf_hz * (1.0 - second_preamble_offset_s / (t2 - t0))
        # the initial offset itself is bounded by the +/-10% protocol envelope
        limit = ALPHA_SEARCH_FRAC * blf_hz
        alpha_hat = float(np.clip(alpha_hat, -limit, limit))
    return SyncEstimate(t0_hat_s=t0, alpha0_hat_hz=alpha_hat,
                        correlation_peak=min(float(rho_best), 1.0))


def pll_track(stream: np.ndarray, rate_hz: float, sync: SyncEstimate,
              blf_hz: float = BLF_DEFAULT_HZ, miller_m: int = MILLER_M_DEFAULT,
              n_symbols: int = 160,
              loop_bw_frac: float = 0.04, damping: float = 0.707) -> ClockTrack:
    """Second-order Costas loop on the Miller subcarrier.

    Tracks the residual fluctuation left after removing the estimated initial
    offset; the per-symbol frequency register is reported as alpha(t).  The
    loop freezes when the subcarrier envelope drops (inter-reply gap).
    """
    x = np.asarray(stream, dtype=complex)
    t_sym = miller_m / blf_hz
    f_sub = blf_hz - sync.alpha0_hat_hz
    i0 = max(int(round(sync.t0_hat_s * rate_hz)), 0)
    n_span = int(round(n_symbols * t_sym * rate_hz * CLOCK_STRETCH))
    seg = x[i0:i0 + n_span]
    if seg.size < int(4 * t_sym * rate_hz):
        raise ModelError("stream too short behind the sync point")

    bn = loop_bw_frac * blf_hz
    theta_n = bn / rate_hz
    denom = 1.0 + 2.0 * damping * theta_n + theta_n ** 2
    kp = 4.0 * damping * theta_n / denom
    ki = 4.0 * theta_n ** 2 / denom
    lp = 1.0 - math.exp(-2.0 * math.pi * (blf_hz / 2.0) / rate_hz)

    t = (i0 + np.arange(seg.size)) / rate_hz - sync.t0_hat_s
    base = np.exp(-2j * math.pi * f_sub * t)

    # Seed the loop phase and frequency from the pilot symbols (known baseband
    # signs), so the short reply is tracked without an acquisition transient:
    # the residual left by the preamble search can reach a few kHz, which a
    # 5 kHz loop would spend most of the RN16 reply pulling in.  Quarter-symbol
    # phase blocks on the CFO-stretched grid, skipping the filter-smeared
    # region after each symbol boundary, fitted by weighted least squares.
    t_sym_eff = t_sym * blf_hz / f_sub
    nq = max(int(t_sym_eff / 4 * rate_hz), 4)
    mids, phis, wts = [], [], []
    for s in range(4):
        for quarter in (1, 2, 3):
            a = int(round((s * 4 + quarter) * t_sym_eff / 4 * rate_hz))
            b = a + nq
            if b > seg.size:
                break
            blk = np.mean(seg[a:b] * base[a:b]) * (1 - 2 * (s % 2))
            mids.append((a + b) / 2.0)
            phis.append(np.angle(blk))
            wts.append(abs(blk))
    freq = 0.0
    phase = float(phis[0]) if phis else 0.0
    if len(phis) >= 4:
        phi_u = np.unwrap(np.asarray(phis))
        mids_a = np.asarray(mids)
        w = np.asarray(wts)
        slope, intercept = np.polyfit(mids_a, phi_u, 1, w=w)
        freq = float(np.clip(slope, -2 * math.pi * 6e3 / rate_hz,
                             2 * math.pi * 6e3 / rate_hz))
        phase = float(intercept)
    z1 = 0.0 + 0.0j
    z2 = 0.0 + 0.0j
    freq_log = np.zeros(seg.size)
    err_log = np.zeros(seg.size)
    warm = min(int(2 * t_sym * rate_hz), seg.size)
    ref_power = float(np.mean(np.abs(seg[:warm]) ** 2)) + 1e-30
    gate = 0.02 * ref_power
    cos, sin = math.cos, math.sin
    phase_log = np.zeros(seg.size)
    for i in range(seg.size):
        v = seg[i] * base[i] * complex(cos(phase), -sin(phase))
        z1 += lp * (v - z1)
        z2 += lp * (z1 - z2)
        p = z2.real * z2.real + z2.imag * z2.imag
        err = (z2.real * z2.imag) / p if p > gate else 0.0
        freq += ki * err
        phase += freq + kp * err
        freq_log[i] = freq
        phase_log[i] = phase
        err_log[i] = err

    # Per-symbol alpha from NCO phase increments: in lock the phase register
    # carries the exact accumulated clock trajectory (the frequency register
    # lags a moving clock), so integrating these symbol averages reproduces
    # the tracked timing exactly.
    bounds = np.minimum(np.round(np.arange(n_symbols + 1) * t_sym * rate_hz).astype(int),
                        seg.size - 1)
    spans = np.maximum(bounds[1:] - bounds[:-1], 1)
    dphase = phase_log[bounds[1:]] - phase_log[bounds[:-1]]
    delta_f_hz = dphase * rate_hz / (2.0 * math.pi) / spans
    alpha_t = np.clip(-delta_f_hz, -TRACK_LIMIT_FRAC * blf_hz, TRACK_LIMIT_FRAC * blf_hz)

    late = err_log[seg.size // 2:]
    late = late[late != 0.0]
    lock = bool(late.size > 32 and np.var(late) < 0.05)
    return ClockTrack(alpha_t_hz=alpha_t, symbol_s=t_sym,
                      loop_bandwidth_hz=bn, lock_flag=lock)


def _clock_map(elapsed: np.ndarray, sync: SyncEstimate, track: ClockTrack,
               blf_hz: float) -> np.ndarray:
    """Estimated nominal template time for each elapsed receive time."""
    alpha = np.asarray(track.alpha_t_hz, dtype=float)
    if alpha.size == 0:
        integral = np.zeros_like(elapsed)
    else:
        cum = np.concatenate([[0.0], np.cumsum(alpha) * track.symbol_s])
        idx = np.minimum((elapsed / track.symbol_s).astype(int), alpha.size - 1)
        integral = cum[idx] + alpha[idx] * (elapsed - idx * track.symbol_s)
    return elapsed - (sync.alpha0_hat_hz * elapsed + integral) / blf_hz


def _warp_gather(n_vals: np.ndarray, rate_hz: float, n_out: int):
    """Interpolation indices/weights mapping nominal sample times into the
    warped source axis."""
    target = np.arange(n_out) / rate_hz
    if n_vals[-1] < target[-1]:
        raise DecodeError("compensate_clock", "stream too short for the packet span")
    j = np.clip(np.searchsorted(n_vals, target) - 1, 0, n_vals.size - 2)
    w = (target - n_vals[j]) / np.maximum(n_vals[j + 1] - n_vals[j], 1e-30)
    return j, np.clip(w, 0.0, 1.0)


def track_packet_clock(stream: np.ndarray, rate_hz: float, sync: SyncEstimate,
                       layout, blf_hz: float = BLF_DEFAULT_HZ,
                       miller_m: int = MILLER_M_DEFAULT,
                       fmt: PacketFormat = DEFAULT_FORMAT) -> ClockTrack:
    """Clock track over a whole two-reply packet.

    One Costas pass per reply (each seeded from its own pilot), with the
    inter-reply gap pinned so the integrated clock lands exactly on the
    measured EPC-frame preamble position.  Tracking each reply separately
    keeps the loop's phase-slip exposure to a single reply span and lets the
    second reply re-anchor after the signal-free gap.
    """
    t_sym = layout.symbol_s
    # track spans are in received time: a slow clock stretches each frame
    n1_span = int(math.ceil(layout.rn16_frame_symbols * CLOCK_STRETCH)) + 1
    n2_span = int(math.ceil(layout.epc_frame_symbols * CLOCK_STRETCH)) + 2
    tr1 = pll_track(stream, rate_hz, sync, blf_hz, miller_m, n_symbols=n1_span)

    eff = blf_hz / (blf_hz - sync.alpha0_hat_hz)
    expected = sync.t0_hat_s + layout.epc_start_s * eff
    # the reported alpha0 saturates at +/-10% while drift adds up to 2.5% more
    w = 0.04 * layout.epc_start_s + 12.0 / rate_hz
    sync2 = SyncEstimate(t0_hat_s=expected, alpha0_hat_hz=sync.alpha0_hat_hz,
                         correlation_peak=0.0)
    try:
        found = preamble_search(stream, rate_hz, blf_hz, miller_m, fmt,
                                window_s=(expected - w, expected + w),
                                alpha_span_frac=0.03, alpha_step_frac=0.005,
                                alpha_center_hz=sync.alpha0_hat_hz,
                                threshold=0.15)
        sync2 = SyncEstimate(t0_hat_s=found.t0_hat_s, alpha0_hat_hz=found.alpha0_hat_hz,
                             correlation_peak=found.correlation_peak)
    except (NoPacketError, ModelError):
        pass
    tr2 = pll_track(stream, rate_hz, sync2, blf_hz, miller_m, n_symbols=n2_span)

    e2 = sync2.t0_hat_s - sync.t0_hat_s
    n_total = int(math.ceil(layout.total_s * CLOCK_STRETCH / t_sym)) + 2
    alpha = np.zeros(n_total)
    n1 = tr1.alpha_t_hz.size
    alpha[:n1] = tr1.alpha_t_hz
    s_e2 = max(int(e2 / t_sym), n1)
    # Solve the constant gap alpha so that the integrated clock maps the
    # measured second-preamble time onto the nominal EPC frame start.
    alpha2_total = sync2.alpha0_hat_hz + tr2.alpha_t_hz - sync.alpha0_hat_hz
    slot_start = s_e2 * t_sym
    # nominal time wanted at the start of the slot containing e2:
    n_at_slot = layout.epc_start_s - (e2 - slot_start) * \
        (1.0 - (sync.alpha0_hat_hz + float(alpha2_total[0])) / blf_hz)
    target_integral = blf_hz * (slot_start - n_at_slot) - sync.alpha0_hat_hz * slot_start
    done = float(np.sum(alpha[:n1])) * t_sym
    span = slot_start - n1 * t_sym
    if span > t_sym / 4:
        gap_alpha = (target_integral - done) / span
    else:
        gap_alpha = float(alpha2_total[0])
    limit = TRACK_LIMIT_FRAC * blf_hz * 2
    alpha[n1:s_e2] = np.clip(gap_alpha, -limit, limit)
    for s in range(s_e2, n_total):
        j = min(max(int((s * t_sym - e2) / t_sym + 0.5), 0), alpha2_total.size - 1)
        alpha[s] = alpha2_total[j]
    return ClockTrack(alpha_t_hz=alpha, symbol_s=t_sym,
                      loop_bandwidth_hz=tr1.loop_bandwidth_hz,
                      lock_flag=tr1.lock_flag and tr2.lock_flag)


def _compensate_rows(rows: np.ndarray, rate_hz: float, sync: SyncEstimate,
                     track: ClockTrack, blf_hz: float,
                     duration_s: float | None) -> np.ndarray:
    """Warp one or more parallel streams onto the nominal clock (shared map)."""
    x = np.atleast_2d(np.asarray(rows, dtype=complex))
    i0 = max(int(math.ceil(sync.t0_hat_s * rate_hz)) - 1, 0)
    src = x[:, i0:]
    # elapsed may start a fraction of a sample negative; the clock map is
    # monotone there, which keeps the interpolation exact at integer t0
    elapsed = (i0 + np.arange(src.shape[1])) / rate_hz - sync.t0_hat_s
    n_vals = _clock_map(elapsed, sync, track, blf_hz)
    if duration_s is None:
        duration_s = float(n_vals[-1])
    n_out = int(round(duration_s * rate_hz))
    j, w = _warp_gather(n_vals, rate_hz, n_out)
    return src[:, j] * (1.0 - w) + src[:, j + 1] * w


def compensate_clock(stream: np.ndarray, rate_hz: float, sync: SyncEstimate,
                     track: ClockTrack, blf_hz: float = BLF_DEFAULT_HZ,
                     duration_s: float | None = None) -> np.ndarray:
    """Resample a stream onto the nominal tag clock.

    Output sample m sits at nominal packet time m/rate after the estimated
    start of frame; t0, the initial offset and the tracked fluctuation are all
    removed.
    """
    return _compensate_rows(stream, rate_hz, sync, track, blf_hz, duration_s)[0]


def msnr_combine(streams: np.ndarray, noise_cov: np.ndarray,
                 diag_load_frac: float = 1e-3):
    """Max-SNR spatial combining: dominant generalized eigenvector of the
    (signal, noise) covariance pencil.

    Returns (steered stream, weights, loaded flag); ``loaded`` reports the
    diagonal-loading fallback for a singular noise covariance.
    """
    x = np.atleast_2d(np.asarray(streams, dtype=complex))
    k, n = x.shape
    if k == 1:
        return x[0].copy(), np.ones(1, dtype=complex), False
    rn = np.asarray(noise_cov, dtype=complex)
    rn = 0.5 * (rn + rn.conj().T)
    rx = x @ x.conj().T / n
    scale = max(np.trace(rn).real, 1e-6 * np.trace(rx).real, 1e-30) / k
    loaded = False
    if np.linalg.cond(rn) > 1e9:
        rn = rn + diag_load_frac * scale * np.eye(k)
        loaded = True
    rs = 0.5 * ((rx - rn) + (rx - rn).conj().T)
    try:
        vals, vecs = sla.eigh(rs, rn)
    except sla.LinAlgError:
        rn = rn + diag_load_frac * scale * np.eye(k)
        loaded = True
        vals, vecs = sla.eigh(rs, rn)
    w = vecs[:, -1]
    w = w / np.linalg.norm(w)
    pivot = int(np.argmax(np.abs(w)))
    w = w * np.exp(-1j * np.angle(w[pivot]))
    return w.conj() @ x, w, loaded


def mrc_combine(streams: np.ndarray, gains, noise_vars) -> np.ndarray:
    """Maximum-ratio combining with weights conj(g)/sigma^2, normalized to a
    unit effective gain so the output sits in the template domain."""
    x = np.atleast_2d(np.asarray(streams, dtype=complex))
    g = np.asarray(gains, dtype=complex)
    s2 = np.maximum(np.asarray(noise_vars, dtype=float), 1e-30)
    w = np.conj(g) / s2
    scale = float(np.sum(np.abs(g) ** 2 / s2))
    return (w @ x) / max(scale, 1e-30)


def _symbol_windows(frame_start_s: float, first_symbol: int, n_symbols: int,
                    t_sym: float, rate_hz: float, n_stream: int):
    starts = [int(round((frame_start_s + (first_symbol + i) * t_sym) * rate_hz))
              for i in range(n_symbols + 1)]
    if starts[-1] > n_stream:
        raise DecodeError("viterbi", "stream too short for the symbol span")
    return starts


def _symbol_templates(frame_start_s: float, first_symbol: int, n_symbols: int,
                      blf_hz: float, t_sym: float, rate_hz: float, starts):
    """Crisp +/-1 symbol templates (entering sign +1) for bits 0 and 1; the
    subcarrier phase is referenced to the frame start."""
    tmpl0, tmpl1 = [], []
    for i in range(n_symbols):
        idx = np.arange(starts[i], starts[i + 1])
        t = idx / rate_hz - frame_start_s
        sq = 1 - 2 * (np.floor(2 * blf_hz * t).astype(np.int64) % 2)
        within = t - (first_symbol + i) * t_sym
        tmpl0.append(sq.astype(float))
        tmpl1.append(np.where(within >= t_sym / 2, -1.0, 1.0) * sq)
    return tmpl0, tmpl1


def viterbi_decode(stream: np.ndarray, rate_hz: float, frame_start_s: float,
                   first_symbol: int, n_bits: int, entering_sign: int,
                   blf_hz: float = BLF_DEFAULT_HZ, miller_m: int = MILLER_M_DEFAULT):
    """Maximum-likelihood Miller bit sequence over the two-state sign trellis.

    State is the baseband sign entering a symbol; a data-0 flips it, a data-1
    keeps it.  Branch metrics are correlations with the crisp symbol
    templates, so the search is exactly equivalent to scoring every bit
    sequence with the same metric.
    """
    y = np.asarray(stream, dtype=complex)
    t_sym = miller_m / blf_hz
    starts = _symbol_windows(frame_start_s, first_symbol, n_bits, t_sym, rate_hz, y.size)
    tmpl0, tmpl1 = _symbol_templates(frame_start_s, first_symbol, n_bits,
                                     blf_hz, t_sym, rate_hz, starts)
    # c[i, b] for entering sign +1; sign -1 negates it.
    c = np.zeros((n_bits, 2))
    norm = 0.0
    for i in range(n_bits):
        seg = np.real(y[starts[i]:starts[i + 1]])
        c[i, 0] = float(np.dot(seg, tmpl0[i]))
        c[i, 1] = float(np.dot(seg, tmpl1[i]))
        norm += float(np.linalg.norm(seg) * np.linalg.norm(tmpl0[i]))

    neg_inf = -1e30
    # metric[s] for s in (+1, -1) encoded as index 0 / 1
    metric = np.array([0.0 if entering_sign == 1 else neg_inf,
                       0.0 if entering_sign == -1 else neg_inf])
    back = np.zeros((n_bits, 2), dtype=np.int8)
    for i in range(n_bits):
        new = np.full(2, neg_inf)
        choice = np.zeros(2, dtype=np.int8)
        for s_new in (0, 1):
            # data-1 keeps the sign, data-0 flips it
            from_keep = metric[s_new] + (1 - 2 * s_new) * c[i, 1]
            from_flip = metric[1 - s_new] + (1 - 2 * (1 - s_new)) * c[i, 0]
            if from_keep >= from_flip:
                new[s_new], choice[s_new] = from_keep, 1
            else:
                new[s_new], choice[s_new] = from_flip, 0
        metric = new
        back[i] = choice
    s = int(np.argmax(metric))
    bits = np.zeros(n_bits, dtype=int)
    for i in range(n_bits - 1, -1, -1):
        bits[i] = back[i, s]
        if bits[i] == 0:
            s = 1 - s
    return bits.tolist(), float(np.max(metric) / max(norm, 1e-30))


def _sign_after(bits) -> int:
    return int(miller_symbol_signs(list(bits) + [0])[-1])


def full_packet_channel_estimate(banks: list[ChannelBank], rn16_bits, epc_bits,
                                 sync: SyncEstimate, track: ClockTrack,
                                 plan: CarrierPlan, geom: ArrayGeometry,
                                 fmt: PacketFormat = DEFAULT_FORMAT,
                                 blf_hz: float = BLF_DEFAULT_HZ,
                                 miller_m: int = MILLER_M_DEFAULT) -> ChannelMatrix:
    """Normalized matched-filter channel estimate against the clock-true
    full-packet template, per antenna and carrier."""
    pkt = TagPacket(rn16_bits=tuple(int(b) for b in rn16_bits),
                    epc_bits=tuple(int(b) for b in epc_bits),
                    blf_hz=blf_hz, miller_m=miller_m)
    rate = banks[0].rate_hz
    tmpl = apply_shaping(packet_template(pkt, rate, fmt), rate).samples.real
    n_t = tmpl.size

    k_n, l_n = len(banks), plan.n_carriers
    for bank in banks:
        if bank.n_channels != l_n:
            raise ModelError("bank carrier count does not match the plan")
        if bank.n_samples < n_t:
            raise ModelError("stream shorter than the template")
    flat = np.stack([b.streams for b in banks]).reshape(k_n * l_n, -1)
    comp = _compensate_rows(flat, rate, sync, track, blf_hz, n_t / rate)[:, :n_t]
    return _matched_estimate(comp, tmpl, k_n, l_n, plan, geom)


def _matched_estimate(comp: np.ndarray, tmpl: np.ndarray, k_n: int, l_n: int,
                      plan: CarrierPlan, geom: ArrayGeometry) -> ChannelMatrix:
    active = np.abs(tmpl) > 0.1
    t_energy = float(np.sum(tmpl ** 2))
    h = (comp @ tmpl) / t_energy
    resid = comp[:, active] - h[:, None] * tmpl[active]
    noise = np.mean(np.abs(resid) ** 2, axis=1) + 1e-30
    sig = np.abs(h) ** 2 * float(np.mean(tmpl[active] ** 2))
    snr = 10.0 * np.log10(np.maximum(sig / noise, 1e-30))
    return ChannelMatrix(h=h.reshape(k_n, l_n), carriers_hz=plan.carriers_hz,
                         geometry=geom, quality=snr.reshape(k_n, l_n))


def decode_pipeline(banks: list[ChannelBank], plan: CarrierPlan, geom: ArrayGeometry,
                    fmt: PacketFormat = DEFAULT_FORMAT,
                    blf_hz: float = BLF_DEFAULT_HZ, miller_m: int = MILLER_M_DEFAULT,
                    epc_len: int = 96,
                    detection_threshold: float = DETECTION_THRESHOLD,
                    metric_threshold: float = METRIC_THRESHOLD) -> DecodedPacket:
    """One-shot decode of a tag reply from per-antenna channel banks.

    Banks are expected to be time-aligned to a common capture clock and
    DC-notched.  Raises DecodeError/NoPacketError with stage attribution.
    """
    if not banks:
        raise ModelError("need at least one channel bank")
    rate = banks[0].rate_hz
    k_n, l_n = len(banks), plan.n_carriers
    if geom.n_antennas != k_n:
        raise ModelError("bank count does not match the geometry")
    layout = packet_layout(blf_hz, miller_m, epc_len, fmt)

    stack = np.stack([b.streams for b in banks])        # [K, L, N]
    energies = np.sum(np.abs(stack) ** 2, axis=2)
    k_best, l_best = np.unravel_index(int(np.argmax(energies)), energies.shape)

    sync = preamble_search(stack[k_best, l_best], rate, blf_hz, miller_m, fmt,
                           threshold=detection_threshold,
                           alpha_span_frac=ALPHA_SEARCH_FRAC + 0.025,
                           second_preamble_offset_s=layout.epc_start_s)
    # Clock tracking runs on the best carrier combined across antennas
    # (preamble-matched gains); the array gain keeps the loop's timing jitter
    # well under a quarter subcarrier period at threshold SNR.
    pre_sync = np.real(miller_encode(fmt.preamble_bits, blf_hz - sync.alpha0_hat_hz,
                                     miller_m, rate, preamble=False, fmt=fmt).samples)
    i_sync = max(int(round(sync.t0_hat_s * rate)), 0)
    pre_win = stack[:, l_best, i_sync:i_sync + pre_sync.size]
    g_track = pre_win @ pre_sync[:pre_win.shape[1]]
    denom = float(np.sum(np.abs(g_track))) or 1.0
    track_stream = (np.conj(g_track) @ stack[:, l_best, :]) / denom
    track = track_packet_clock(track_stream, rate, sync, layout,
                               blf_hz, miller_m, fmt)

    # Noise covariance per carrier from the signal-free pre-SOF window.
    pre_hi = max(int(sync.t0_hat_s * rate) - 2, 2)
    pre_lo = max(pre_hi - int(1e-3 * rate), 0)
    if pre_hi - pre_lo < 8 * k_n:
        raise DecodeError("msnr_combine", "pre-SOF window too short for a covariance")

    n_nom = int(round(layout.total_s * rate))
    flat = stack.reshape(k_n * l_n, -1)
    comp = _compensate_rows(flat, rate, sync, track, blf_hz, layout.total_s)
    comp = comp.reshape(k_n, l_n, n_nom)

    pre_tmpl = np.real(miller_encode(fmt.preamble_bits, blf_hz, miller_m, rate,
                                     preamble=False, fmt=fmt).samples)
    lp = pre_tmpl.size
    pre_energy = float(np.sum(pre_tmpl ** 2))

    steered = np.zeros((l_n, n_nom), dtype=complex)
    gains = np.zeros(l_n, dtype=complex)
    noise_vars = np.zeros(l_n)
    for l in range(l_n):
        pre = stack[:, l, pre_lo:pre_hi]
        rn = pre @ pre.conj().T / pre.shape[1]
        out, w_l, _ = msnr_combine(comp[:, l, :], rn)
        steered[l] = out
        noise_vars[l] = max(float(np.real(w_l.conj() @ rn @ w_l)), 1e-30)
        gains[l] = complex(np.dot(out[:lp], pre_tmpl)) / pre_energy

    combined = mrc_combine(steered, gains, noise_vars)

    sign0 = _sign_after(fmt.preamble_bits)
    n_dummy = 1 if fmt.dummy_bit else 0
    rn16, m1 = viterbi_decode(combined, rate, 0.0, layout.preamble_symbols,
                              16 + n_dummy, sign0, blf_hz, miller_m)
    rn16 = rn16[:16]
    epc_payload = epc_len + (32 if fmt.include_pc_crc else 0)
    reply, m2 = viterbi_decode(combined, rate, layout.epc_start_s,
                               layout.preamble_symbols, epc_payload + n_dummy,
                               sign0, blf_hz, miller_m)
    reply = reply[:epc_payload]
    if min(m1, m2) < metric_threshold:
        raise DecodeError("viterbi", "path metric below threshold")
    if fmt.include_pc_crc:
        epc, crc_ok = check_epc_reply(reply)
    else:
        epc, crc_ok = reply, True
    if len(epc) != epc_len:
        raise DecodeError("viterbi", "decoded EPC has the wrong length")

    est_pkt = TagPacket(rn16_bits=tuple(int(b) for b in rn16),
                        epc_bits=tuple(int(b) for b in epc),
                        blf_hz=blf_hz, miller_m=miller_m)
    tmpl = apply_shaping(packet_template(est_pkt, rate, fmt), rate).samples.real
    channel = _matched_estimate(comp.reshape(k_n * l_n, -1)[:, :tmpl.size], tmpl,
                                k_n, l_n, plan, geom)
    return DecodedPacket(rn16_bits=tuple(rn16), epc_bits=tuple(epc), crc_ok=crc_ok,
                         channel=channel, sync=sync, track=track,
                         snr_db=channel.quality)
