"""Noise floor, peak extraction and per-CPI hypothesis selection."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from typing import Iterable

import numpy as np

from .errors import LengthMismatchError, ValidationError
from .pulse_stack import AmbiguitySurface

DEFAULT_THRESHOLD_DB = 13.0
DETECTION_COLUMNS = ("epoch_s", "cpi_s", "delay_s", "doppler_hz", "chirp_hz_per_s",
                     "jerk_hz_per_s2", "snr_db")


@dataclass(frozen=True)
class Detection:
    delay_s: float
    doppler_hz: float
    chirp_hz_per_s: float
    jerk_hz_per_s2: float
    snr_db: float
    cpi_s: float
    epoch_s: float
    surface_id: int = 0
    delay_bin: int = 0
    doppler_bin: int = 0

    def row(self) -> list:
        d = asdict(self)
        return [d[c] for c in DETECTION_COLUMNS]


def peak_exclusion(shape, delay_bin: int, doppler_bin: int, guard_delay: int = 2,
                   guard_doppler: int = 2) -> np.ndarray:
    """Boolean mask covering a box around one cell (Doppler wraps)."""
    mask = np.zeros(shape, dtype=bool)
    rows = np.arange(max(0, delay_bin - guard_delay), min(shape[0], delay_bin + guard_delay + 1))
    cols = np.arange(doppler_bin - guard_doppler, doppler_bin + guard_doppler + 1) % shape[1]
    mask[np.ix_(rows, cols)] = True
    return mask


def noise_floor(surface: AmbiguitySurface, exclusion: np.ndarray | None = None) -> float:
    """Mean noise power estimated as ``median / ln 2`` over non-excluded cells.

    For exponentially distributed (complex Gaussian) cell powers the median
    is ``ln 2`` times the mean.
    """
    power = surface.power
    if exclusion is None:
        cells = power.ravel()
    else:
        exclusion = np.asarray(exclusion, dtype=bool)
        if exclusion.shape != power.shape:
            raise LengthMismatchError("exclusion mask must match the surface")
        if exclusion.sum() * 2 >= power.size:
            raise ValidationError("exclusion must cover less than half the surface", "exclusion")
        cells = power[~exclusion]
    return float(np.median(cells) / np.log(2.0))


def _parabolic_offset(ym, y0, yp) -> float:
    denom = ym - 2.0 * y0 + yp
    if not np.isfinite(denom) or denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (ym - yp) / denom, -0.5, 0.5))


def extract_peak(surface: AmbiguitySurface, floor: float, surface_id: int = 0) -> Detection:
    """Global maximum with 3-point parabolic refinement on log power.

    Doppler neighbours wrap around the axis; delay is refined only away from
    the axis ends.
    """
    if not floor > 0:
        raise ValidationError("must be positive", "floor")
    power = surface.power
    i, k = np.unravel_index(int(np.argmax(power)), power.shape)
    peak = float(power[i, k])
    n_delay, n_dop = power.shape

    def logp(a, b):
        return np.log(max(float(power[a, b]), 1e-300))

    dk = 0.0
    if n_dop >= 3:
        dk = _parabolic_offset(logp(i, (k - 1) % n_dop), logp(i, k), logp(i, (k + 1) % n_dop))
    di = 0.0
    if 0 < i < n_delay - 1:
        di = _parabolic_offset(logp(i - 1, k), logp(i, k), logp(i + 1, k))
    dop_axis = surface.doppler_axis_hz
    dop_step = (dop_axis[1] - dop_axis[0]) if dop_axis.size > 1 else 0.0
    del_axis = surface.delay_axis_s
    del_step = (del_axis[1] - del_axis[0]) if del_axis.size > 1 else 0.0
    snr_db = 10.0 * np.log10(peak / floor) if peak > 0 else -np.inf
    return Detection(
        delay_s=float(del_axis[i] + di * del_step),
        doppler_hz=float(dop_axis[k] + dk * dop_step),
        chirp_hz_per_s=surface.chirp_hz_per_s,
        jerk_hz_per_s2=surface.jerk_hz_per_s2,
        snr_db=float(snr_db),
        cpi_s=surface.cpi_s,
        epoch_s=surface.epoch_s,
        surface_id=surface_id,
        delay_bin=int(i),
        doppler_bin=int(k),
    )


def detect(surface: AmbiguitySurface, surface_id: int = 0, guard_delay: int = 2,
           guard_doppler: int = 2) -> Detection:
    """Peak detection with the floor measured away from the peak's own cells."""
    power = surface.power
    i, k = np.unravel_index(int(np.argmax(power)), power.shape)
    mask = peak_exclusion(power.shape, i, k, guard_delay, guard_doppler)
    if mask.sum() * 2 >= power.size:
        mask = None
    return extract_peak(surface, noise_floor(surface, mask), surface_id)


def best_hypothesis(surfaces: Iterable[AmbiguitySurface]) -> Detection:
    """Detection from the surface with the highest peak SNR.

    Accepts any iterable, so a lazy sweep is consumed one surface at a time.
    """
    best = None
    first = None
    for idx, surface in enumerate(surfaces):
        if first is None:
            first = surface
        elif not surface.same_axes(first):
            raise LengthMismatchError(f"surface {idx} does not share the first surface's axes")
        det = detect(surface, surface_id=idx)
        if best is None or det.snr_db > best.snr_db:
            best = det
    if best is None:
        raise ValidationError("need at least one surface", "surfaces")
    return best


def write_detections(path, detections: Iterable[Detection]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DETECTION_COLUMNS)
        for det in detections:
            writer.writerow([repr(float(v)) for v in det.row()])
