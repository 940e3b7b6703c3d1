"""Near-field localization with pluggable kernels and layers.

A kernel scores the similarity of one channel's measured phase against the
phase a candidate location would produce; layers combine kernels across
carriers and antennas.  The basic hologram sums the exponential kernel over
the whole grid; the multipath-suppression pipeline inserts a time-of-flight
layer, direct-path identification against prior range bounds, and a
direct-path enhancement before the final summation.

Phase bookkeeping: channel entries store angle(h) = minus the propagation
phase.  Holograms and ToF profiles operate on propagation phases (they negate
angle(h) internally); the enhancement layer works directly in the angle(h)
domain, matching its defining formula.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .model import (ArrayGeometry, CarrierPlan, ChannelMatrix, ModelError,
                    C_M_PER_S, wrap_phase)


@dataclass(frozen=True)
class ExponentialPhaseKernel:
    """similarity(phi, theta) = exp(-j (phi - theta)); unit magnitude, equals
    one when the phases agree."""

    def similarity(self, measured_phase_rad, theoretical_phase_rad):
        return np.exp(-1j * (np.asarray(measured_phase_rad)
                             - np.asarray(theoretical_phase_rad)))


DEFAULT_KERNEL = ExponentialPhaseKernel()


@dataclass(frozen=True)
class GridSpec:
    """Planar search grid at a fixed height, row-major over (y, x) cells."""

    x_extent_m: tuple[float, float] = (-1.6, 1.6)
    y_extent_m: tuple[float, float] = (0.5, 6.5)
    cell_m: float = 0.05
    z_m: float = 1.11

    def __post_init__(self):
        if self.cell_m <= 0:
            raise ModelError("cell size must be positive")
        if self.x_extent_m[1] <= self.x_extent_m[0] or self.y_extent_m[1] <= self.y_extent_m[0]:
            raise ModelError("grid extents are degenerate")

    @property
    def nx(self) -> int:
        return max(int(round((self.x_extent_m[1] - self.x_extent_m[0]) / self.cell_m)), 1)

    @property
    def ny(self) -> int:
        return max(int(round((self.y_extent_m[1] - self.y_extent_m[0]) / self.cell_m)), 1)

    def x_centers(self) -> np.ndarray:
        return self.x_extent_m[0] + (np.arange(self.nx) + 0.5) * self.cell_m

    def y_centers(self) -> np.ndarray:
        return self.y_extent_m[0] + (np.arange(self.ny) + 0.5) * self.cell_m

    def cell_position(self, iy: int, ix: int) -> tuple[float, float, float]:
        return (float(self.x_centers()[ix]), float(self.y_centers()[iy]), self.z_m)


@dataclass(frozen=True, eq=False)
class HologramResult:
    heatmap: np.ndarray
    argmax_iy: int
    argmax_ix: int
    position_m: tuple[float, float, float]
    likelihood: float


@dataclass(frozen=True, eq=False)
class TofProfile:
    distances_m: np.ndarray
    magnitude: np.ndarray
    complex_values: np.ndarray


@dataclass(frozen=True)
class PriorROI:
    """Prior knowledge of the scanning area.

    ``path_bounds_m`` bounds the total Tx->tag->Rx path length scanned for the
    direct path (the ToF profile axis).  ``region_xy`` optionally gives a
    polygon in the grid plane for inside/outside classification; without it,
    classification falls back to the path-length band.
    """

    path_bounds_m: tuple[float, float]
    region_xy: tuple[tuple[float, float], ...] | None = None
    peak_threshold: float = 0.55

    def __post_init__(self):
        a, b = self.path_bounds_m
        if not 0 <= a < b:
            raise ModelError("path bounds must satisfy 0 <= a < b")
        if not 0 < self.peak_threshold < 1:
            raise ModelError("peak threshold must be in (0, 1)")


@dataclass(frozen=True, eq=False)
class LocationEstimate:
    position_m: tuple[float, float, float]
    likelihood: float
    heatmap: np.ndarray | None = None
    d0_rough_m: float | None = None
    enhancement_applied: bool = False
    fallback: str | None = None


def _measured_propagation_phases(ch: ChannelMatrix | np.ndarray) -> np.ndarray:
    h = ch.h if isinstance(ch, ChannelMatrix) else np.asarray(ch, dtype=complex)
    return -np.angle(h)


def _grid_path_lengths(grid: GridSpec, geom: ArrayGeometry) -> np.ndarray:
    """Total Tx->cell->Rx_k length for every antenna and cell, [K, ny*nx]."""
    xs, ys = np.meshgrid(grid.x_centers(), grid.y_centers())
    cells = np.column_stack([xs.ravel(), ys.ravel(), np.full(xs.size, grid.z_m)])
    tx = np.asarray(geom.tx_wideband_position_m)
    d_tx = np.linalg.norm(cells - tx, axis=1)
    rx = geom.rx_array()
    d_rx = np.linalg.norm(cells[None, :, :] - rx[:, None, :], axis=2)
    return d_tx[None, :] + d_rx


def _phase_hologram(prop_phases: np.ndarray, mask: np.ndarray | None,
                    grid: GridSpec, geom: ArrayGeometry, plan: CarrierPlan) -> HologramResult:
    k_n, l_n = prop_phases.shape
    if k_n != geom.n_antennas or l_n != plan.n_carriers:
        raise ModelError("phase matrix does not match geometry/plan")
    if grid.nx * grid.ny == 0:
        raise ModelError("empty grid")
    totals = _grid_path_lengths(grid, geom)
    freqs = np.asarray(plan.carriers_hz)
    acc = np.zeros(totals.shape[1], dtype=complex)
    for k in range(k_n):
        for l in range(l_n):
            if mask is not None and not mask[k, l]:
                continue
            theta = (2 * math.pi * freqs[l] / C_M_PER_S) * totals[k]
            acc += np.exp(-1j * (prop_phases[k, l] - theta))
    heat = np.abs(acc).reshape(grid.ny, grid.nx)
    flat_idx = int(np.argmax(heat))
    iy, ix = divmod(flat_idx, grid.nx)
    return HologramResult(heatmap=heat, argmax_iy=iy, argmax_ix=ix,
                          position_m=grid.cell_position(iy, ix),
                          likelihood=float(heat[iy, ix]))


def basic_hologram(ch: ChannelMatrix, grid: GridSpec, geom: ArrayGeometry,
                   plan: CarrierPlan) -> HologramResult:
    """Likelihood surface |sum_kl exp(-j(phi_kl - theta(g,k,l)))| over the grid.

    Ties break to the lowest row-major cell index.
    """
    return _phase_hologram(_measured_propagation_phases(ch), ch.mask, grid, geom, plan)


def summation_layer(enhanced_phases: np.ndarray, grid: GridSpec, geom: ArrayGeometry,
                    plan: CarrierPlan, mask: np.ndarray | None = None) -> HologramResult:
    """Final combining layer: the hologram evaluated on enhanced channel
    phases (angle(h) domain), sharing the basic hologram implementation."""
    return _phase_hologram(-np.asarray(enhanced_phases, dtype=float), mask, grid, geom, plan)


def peak_find_2d(heatmap: np.ndarray, rel_threshold: float = 0.5) -> list[tuple[int, int, float]]:
    """Local maxima over 8-neighborhoods above rel_threshold * global max,
    sorted by magnitude descending."""
    heat = np.asarray(heatmap, dtype=float)
    if heat.size == 0:
        raise ModelError("empty heatmap")
    limit = rel_threshold * float(heat.max())
    local_max = heat >= ndimage.maximum_filter(heat, size=3, mode="nearest")
    iy, ix = np.nonzero(local_max & (heat >= limit) & (heat > 0))
    peaks = sorted(((int(y), int(x), float(heat[y, x])) for y, x in zip(iy, ix)),
                   key=lambda p: -p[2])
    return peaks


def tof_profile(ch_row, plan: CarrierPlan, d_max_m: float = 20.0,
                spacing_m: float = 0.05) -> TofProfile:
    """Time-of-flight layer: S(d) = sum_l exp(-j(phi_l - 2 pi f_l d / c)) on a
    total-path-length axis, the nonuniform inverse transform of the measured
    per-carrier propagation phases."""
    h = np.asarray(ch_row, dtype=complex).ravel()
    if h.size < 2:
        raise ModelError("time resolution needs at least two carriers")
    if spacing_m <= 0 or spacing_m > 0.1:
        raise ModelError("profile spacing must be positive and at most 0.1 m")
    phi = -np.angle(h)
    freqs = np.asarray(plan.carriers_hz, dtype=float)
    if freqs.size != h.size:
        raise ModelError("carrier count does not match the channel row")
    d = np.arange(0.0, d_max_m + spacing_m / 2, spacing_m)
    s = np.exp(1j * (2 * math.pi / C_M_PER_S) * np.outer(d, freqs)
               - 1j * phi[None, :]).sum(axis=1)
    return TofProfile(distances_m=d, magnitude=np.abs(s), complex_values=s)


def tof_spectrum(ch_row, plan: CarrierPlan, d_max_m: float = 20.0,
                 spacing_m: float = 0.05, one_way: bool = False) -> TofProfile:
    """Same mathematics as ``tof_profile``; ``one_way=True`` re-parameterizes
    the axis as one-way distance (total path / 2)."""
    prof = tof_profile(ch_row, plan, d_max_m=(2 * d_max_m if one_way else d_max_m),
                       spacing_m=(2 * spacing_m if one_way else spacing_m))
    if not one_way:
        return prof
    return TofProfile(distances_m=prof.distances_m / 2,
                      magnitude=prof.magnitude, complex_values=prof.complex_values)


def identify_direct_path(profile: TofProfile, prior: PriorROI) -> float | None:
    """Direct-path identification: crop the profile to the prior bounds and
    return the first (nearest) local maximum above the relative threshold;
    None when no peak qualifies."""
    d = profile.distances_m
    a, b = prior.path_bounds_m
    if a > d[-1] or b < d[0]:
        raise ModelError("prior bounds outside the profile axis")
    left = int(np.argmin(np.abs(d - a)))
    right = int(np.argmin(np.abs(d - b)))
    if right - left < 2:
        raise ModelError("prior bounds crop the profile to fewer than three samples")
    mag = profile.magnitude[left:right + 1]
    limit = prior.peak_threshold * float(mag.max())
    diff = np.diff(mag)
    spacing = float(d[1] - d[0])
    for i in range(1, mag.size - 1):
        if diff[i - 1] > 0 and diff[i] < 0 and mag[i] > limit:
            # climb to the top of this lobe (the scan can stop on a shoulder)
            half_width = max(int(0.4 / spacing), 1)
            lo = max(i - half_width, 0)
            hi = min(i + half_width + 1, mag.size)
            j = lo + int(np.argmax(mag[lo:hi]))
            # sub-sample parabolic refinement
            delta = 0.0
            if 0 < j < mag.size - 1:
                denom = mag[j - 1] - 2 * mag[j] + mag[j + 1]
                if abs(denom) > 1e-12:
                    delta = float(np.clip(0.5 * (mag[j - 1] - mag[j + 1]) / denom, -1, 1))
            return float(d[left + j] + delta * spacing)
    return None


def enhance_direct_path(ch_row, plan: CarrierPlan, d0_rough_m: float) -> np.ndarray:
    """Direct-path enhancement: phi~_l = angle(sum_i e^{j phi_i}
    e^{j 2 pi (f_i - f_l) d0 / c}), operating on angle(h) phases."""
    h = np.asarray(ch_row, dtype=complex).ravel()
    phi = np.angle(h)
    freqs = np.asarray(plan.carriers_hz, dtype=float)
    if freqs.size != h.size:
        raise ModelError("carrier count does not match the channel row")
    k = 2 * math.pi * d0_rough_m / C_M_PER_S
    combined = np.exp(1j * (phi + k * freqs)).sum()
    return wrap_phase(np.angle(combined) - k * freqs)


def combined_carrier_channel(ch: ChannelMatrix) -> np.ndarray:
    """Quality-weighted average of the channel rows across antennas, feeding
    the ToF layer a single row per carrier."""
    h = ch.h
    if ch.quality is None:
        weights = np.ones(h.shape[0])
    else:
        weights = 10.0 ** (np.asarray(ch.quality, dtype=float) / 10.0)
        weights = np.mean(weights, axis=1)
        total = weights.sum()
        weights = weights / total if total > 0 else np.ones(h.shape[0]) / h.shape[0]
    return np.einsum("k,kl->l", weights, h)


@dataclass(frozen=True)
class LocalizePolicy:
    """When to run the multipath-suppression layers.

    ``conditional`` (default) enhances only when the basic hologram is
    genuinely ambiguous: a second peak at least ``peak_threshold`` of the
    maximum and at least ``min_separation_m`` away (sub-resolution multipath
    merges into the main lobe, where re-pinning the range cannot help).
    ``always`` and ``never`` are for ablations.
    """

    mode: str = "conditional"
    peak_threshold: float = 0.6
    min_separation_m: float = 0.75
    consistency_threshold: float = 0.8

    def __post_init__(self):
        if self.mode not in ("conditional", "always", "never"):
            raise ModelError("policy mode must be conditional/always/never")


DEFAULT_POLICY = LocalizePolicy()


def localize(ch: ChannelMatrix, grid: GridSpec, geom: ArrayGeometry, plan: CarrierPlan,
             prior: PriorROI | None = None, policy: LocalizePolicy = DEFAULT_POLICY,
             keep_heatmap: bool = False) -> LocationEstimate:
    """Full localization pipeline.

    Basic hologram first; when the policy calls for it (and a prior is given),
    identify the direct path on the combined ToF profile, enhance every
    antenna row and re-run the summation layer.  Falls back to the basic
    result (flagged) when no direct path qualifies.
    """
    base = basic_hologram(ch, grid, geom, plan)
    want_enhance = policy.mode == "always"
    if policy.mode == "conditional":
        peaks = peak_find_2d(base.heatmap, policy.peak_threshold)
        want_enhance = False
        for iy, ix, _ in peaks[1:]:
            dist = math.hypot((ix - base.argmax_ix) * grid.cell_m,
                              (iy - base.argmax_iy) * grid.cell_m)
            if dist >= policy.min_separation_m:
                want_enhance = True
                break
    if not want_enhance or prior is None:
        return LocationEstimate(position_m=base.position_m, likelihood=base.likelihood,
                                heatmap=base.heatmap if keep_heatmap else None,
                                enhancement_applied=False,
                                fallback=None if not want_enhance else "no prior")

    d_max = max(prior.path_bounds_m[1] * 1.25, 1.0)
    profile = tof_profile(combined_carrier_channel(ch), plan, d_max_m=d_max)
    d0 = identify_direct_path(profile, prior)
    if d0 is None:
        return LocationEstimate(position_m=base.position_m, likelihood=base.likelihood,
                                heatmap=base.heatmap if keep_heatmap else None,
                                enhancement_applied=False, fallback="no direct path")
    enhanced = np.stack([enhance_direct_path(ch.h[k], plan, d0)
                         for k in range(ch.shape[0])])
    final = summation_layer(enhanced, grid, geom, plan, mask=ch.mask)
    # The enhanced pick must still explain the raw phases: among the basic
    # hologram's ambiguous peaks it selects one, but a bad range pin would
    # land somewhere that is no peak at all.  Fall back in that case.
    raw_score = base.heatmap[final.argmax_iy, final.argmax_ix]
    if raw_score < policy.consistency_threshold * base.likelihood:
        return LocationEstimate(position_m=base.position_m, likelihood=base.likelihood,
                                heatmap=base.heatmap if keep_heatmap else None,
                                d0_rough_m=d0, enhancement_applied=False,
                                fallback="enhanced estimate inconsistent with raw phases")
    return LocationEstimate(position_m=final.position_m, likelihood=final.likelihood,
                            heatmap=final.heatmap if keep_heatmap else None,
                            d0_rough_m=d0, enhancement_applied=True)


def aoa_spectrum(ch_column, geom: ArrayGeometry, plan: CarrierPlan, carrier: int,
                 step_deg: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Angle-of-arrival layer at one carrier: S(psi) = sum_k e^{-j phi_k}
    e^{j 2 pi f x_k sin(psi) / c} over psi in [-90, 90] degrees, using the
    exact per-element positions (the co-prime gap needs no uniform-spacing
    idealization).  Returns (psi_deg, S)."""
    h = np.asarray(ch_column, dtype=complex).ravel()
    if h.size < 2:
        raise ModelError("angle estimation needs at least two antennas")
    if h.size != geom.n_antennas:
        raise ModelError("channel column does not match the geometry")
    if not 0 <= carrier < plan.n_carriers:
        raise ModelError("carrier index out of range")
    if step_deg <= 0 or step_deg > 0.5:
        raise ModelError("angle step must be positive and at most 0.5 degrees")
    x_k = geom.rx_array()[:, 0]
    psi = np.arange(-90.0, 90.0 + step_deg / 2, step_deg)
    f = plan.carriers_hz[carrier]
    steer = np.exp(1j * (2 * math.pi * f / C_M_PER_S)
                   * np.outer(np.sin(np.deg2rad(psi)), x_k))
    s = steer @ np.exp(-1j * np.angle(h))
    return psi, s


def _point_in_polygon(x: float, y: float, poly) -> bool:
    """Ray casting with boundary points counted inside."""
    pts = list(poly)
    n = len(pts)
    inside = False
    for i in range(n):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % n]
        # on-segment check
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if abs(cross) < 1e-12 and min(x1, x2) - 1e-12 <= x <= max(x1, x2) + 1e-12 \
                and min(y1, y2) - 1e-12 <= y <= max(y1, y2) + 1e-12:
            return True
        if (y1 > y) != (y2 > y):
            x_int = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_int:
                inside = not inside
    return inside


def classify_roi(estimate: LocationEstimate, prior: PriorROI,
                 geom: ArrayGeometry | None = None) -> str:
    """inside/outside decision for an estimate; boundary points classify
    inside (recall is favored).  Uses the polygon when present, otherwise the
    total-path-length band (which needs the geometry)."""
    x, y = estimate.position_m[0], estimate.position_m[1]
    if prior.region_xy is not None:
        return "inside" if _point_in_polygon(x, y, prior.region_xy) else "outside"
    if geom is None:
        raise ModelError("path-band classification needs the geometry")
    pos = np.asarray(estimate.position_m)
    tx = np.asarray(geom.tx_wideband_position_m)
    centroid = geom.rx_array().mean(axis=0)
    total = float(np.linalg.norm(pos - tx) + np.linalg.norm(centroid - pos))
    a, b = prior.path_bounds_m
    return "inside" if a <= total <= b else "outside"
