"""Two-stage migration compensation on a pulse stack.

Range walk is removed with the keystone transform (fast-frequency dependent
resampling of slow time); Doppler walk is removed afterwards by multiplying
slow time with a quadratic (dechirp) or quadratic-plus-cubic (dejerk) phase
and re-running only the Doppler DFT for each hypothesis.

Hypothesis units: ``chirp_hz_per_s`` is the coefficient ``c_r`` of ``t**2``
in the removed phase (in cycles) and ``jerk_hz_per_s2`` the coefficient
``c_j`` of ``t**3``. A target whose Doppler changes at ``w`` Hz/s is matched
by ``c_r = w / 2``; see ``DopplerHypothesis.from_doppler_derivatives``.
Slow time is always centred on mid-CPI.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.fft

from .errors import ResourceLimitError, ValidationError
from .pulse_stack import (AmbiguitySurface, PulseStack, doppler_axis, resolve_doppler,
                          slow_time_window)

KEYSTONE_HALF_LENGTH = 8
MIN_KEYSTONE_BATCHES = 8
DEFAULT_MAX_SURFACES = 4096


@dataclass(frozen=True)
class DopplerHypothesis:
    chirp_hz_per_s: float = 0.0
    jerk_hz_per_s2: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.chirp_hz_per_s) and np.isfinite(self.jerk_hz_per_s2)):
            raise ValidationError("hypothesis must be finite")

    @classmethod
    def from_acceleration(cls, acceleration_m_s2: float, wavelength_m: float,
                          jerk_hz_per_s2: float = 0.0) -> "DopplerHypothesis":
        """``c_r = a / wavelength``."""
        return cls(acceleration_m_s2 / wavelength_m, jerk_hz_per_s2)

    @classmethod
    def from_doppler_derivatives(cls, doppler_rate_hz_per_s: float,
                                 doppler_accel_hz_per_s2: float = 0.0) -> "DopplerHypothesis":
        """Hypothesis matching a Doppler history ``v0 + w*t + q*t**2/2``."""
        return cls(doppler_rate_hz_per_s / 2.0, doppler_accel_hz_per_s2 / 6.0)

    def acceleration(self, wavelength_m: float) -> float:
        return self.chirp_hz_per_s * wavelength_m

    def as_tuple(self):
        return (self.chirp_hz_per_s, self.jerk_hz_per_s2)


def hypothesis_axis(start: float, stop: float, count: int | None = None,
                    step: float | None = None) -> np.ndarray:
    """Uniform, strictly increasing axis from ``start`` towards ``stop``.

    Give either ``count`` (endpoints included) or ``step`` (``stop`` included
    when it falls on the lattice).
    """
    if count is not None:
        count = int(count)
        if count < 1:
            raise ValidationError("must be at least 1", "count")
        if count == 1:
            return np.array([float(start)])
        if not stop > start:
            raise ValidationError("stop must exceed start", "stop")
        return np.linspace(start, stop, count)
    if step is None or not step > 0:
        raise ValidationError("need a positive step or a count", "step")
    if stop < start:
        raise ValidationError("stop must not precede start", "stop")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def chirp_axis(start: float, stop: float, cpi_s: float, count: int | None = None) -> np.ndarray:
    """Chirp grid; spacing defaults to ``1 / cpi**2`` (quarter-cycle edge error)."""
    return hypothesis_axis(start, stop, count, None if count else 1.0 / cpi_s**2)


def jerk_axis(start: float, stop: float, cpi_s: float, count: int | None = None) -> np.ndarray:
    """Jerk grid; spacing defaults to ``2 / cpi**3``."""
    return hypothesis_axis(start, stop, count, None if count else 2.0 / cpi_s**3)


def slow_time_phase(stack: PulseStack, hyp: DopplerHypothesis) -> np.ndarray:
    """``exp(-2j*pi*(c_r*t**2 + c_j*t**3))`` over centred slow time."""
    t = stack.slow_time_s
    return np.exp(-2j * np.pi * (hyp.chirp_hz_per_s * t**2 + hyp.jerk_hz_per_s2 * t**3))


def dechirp(stack: PulseStack, hyp: DopplerHypothesis) -> PulseStack:
    """Remove a quadratic slow-time phase; the jerk term must be zero."""
    if hyp.jerk_hz_per_s2 != 0.0:
        raise ValidationError("dechirp takes no jerk term; use dejerk", "jerk_hz_per_s2")
    return dejerk(stack, hyp)


def dejerk(stack: PulseStack, hyp: DopplerHypothesis) -> PulseStack:
    """Remove quadratic plus cubic slow-time phase."""
    return stack.with_data(stack.data * slow_time_phase(stack, hyp))


def _windowed_sinc(x, half_length):
    w = np.where(np.abs(x) < half_length, 0.54 + 0.46 * np.cos(np.pi * x / half_length), 0.0)
    return np.sinc(x) * w


def resample_slow_time(rows: np.ndarray, positions: np.ndarray,
                       half_length: int = KEYSTONE_HALF_LENGTH) -> np.ndarray:
    """Interpolate each row of ``rows`` at fractional batch ``positions``.

    Hamming-windowed sinc whose taps are renormalised over the samples that
    exist, so constants survive exactly up to the edges. Positions more
    than half a batch outside the record come back as zero.
    """
    rows = np.atleast_2d(rows)
    n_rows, M = rows.shape
    positions = np.broadcast_to(positions, rows.shape)
    base = np.floor(positions).astype(np.int64)
    mu = positions - base
    acc = np.zeros(rows.shape, np.complex128)
    norm = np.zeros(rows.shape)
    row_idx = np.arange(n_rows)[:, None]
    for tap in range(-half_length + 1, half_length + 1):
        idx = base + tap
        valid = (idx >= 0) & (idx < M)
        h = _windowed_sinc(mu - tap, half_length) * valid
        acc += rows[row_idx, np.clip(idx, 0, M - 1)] * h
        norm += h
    inside = (positions >= -0.5) & (positions <= M - 0.5) & (np.abs(norm) > 1e-3)
    return np.where(inside, acc / np.where(inside, norm, 1.0), 0.0)


def fast_frequency_size(n_delay: int) -> int:
    """Zero-padded DFT length across delay (power of two, at least twice)."""
    return 1 << int(np.ceil(np.log2(max(2, 2 * n_delay))))


def keystone(stack: PulseStack, workers: int | None = None) -> PulseStack:
    """Keystone transform: remove linear range walk for every target at once.

    Slow time at fast frequency ``f`` is resampled at ``t * f_c / (f_c + f)``
    so that the delay of a constant range-rate target is frozen at its
    mid-CPI value.
    """
    M = stack.n_batches
    if M < MIN_KEYSTONE_BATCHES:
        raise ValidationError(f"keystone needs at least {MIN_KEYSTONE_BATCHES} batches",
                              "n_batches")
    nfft = fast_frequency_size(stack.n_delay)
    f = np.fft.fftfreq(nfft, 1.0 / stack.sample_rate_hz)
    rf = stack.carrier_hz + f
    if np.any(rf <= 0):
        raise ValidationError("carrier plus fast frequency must stay positive", "carrier_hz")
    spectrum = scipy.fft.fft(stack.data, nfft, axis=0, workers=workers)
    centre = (M - 1) / 2.0
    scale = (stack.carrier_hz / rf)[:, None]
    positions = centre + (np.arange(M)[None, :] - centre) * scale
    resampled = resample_slow_time(spectrum, positions)
    data = scipy.fft.ifft(resampled, axis=0, workers=workers)[: stack.n_delay]
    return stack.with_data(data)


def iter_hypotheses(stack: PulseStack, chirp_grid: Sequence[float],
                    jerk_grid: Sequence[float] = (0.0,), window: str = "rect",
                    max_surfaces: int = DEFAULT_MAX_SURFACES,
                    workers: int | None = None) -> Iterator[AmbiguitySurface]:
    """Lazily yield one surface per ``(chirp, jerk)`` pair, chirp varying fastest.

    Only the slow-time phase and Doppler DFT are repeated; the stack itself
    is computed once by the caller.
    """
    chirp_grid = np.atleast_1d(np.asarray(chirp_grid, dtype=np.float64))
    jerk_grid = np.atleast_1d(np.asarray(jerk_grid, dtype=np.float64))
    if chirp_grid.size == 0 or jerk_grid.size == 0:
        raise ValidationError("hypothesis grids must be nonempty")
    total = chirp_grid.size * jerk_grid.size
    if total > max_surfaces:
        raise ResourceLimitError(
            f"{total} hypotheses requested, cap is {max_surfaces} surfaces")
    w = slow_time_window(window, stack.n_batches)
    t = stack.slow_time_s
    axis = doppler_axis(stack.n_batches, stack.batch_duration_s)
    for cj in jerk_grid:
        for cr in chirp_grid:
            phase = np.exp(-2j * np.pi * (cr * t**2 + cj * t**3))
            yield AmbiguitySurface(
                power=resolve_doppler(stack.data, w * phase, workers),
                delay_axis_s=stack.delay_axis_s,
                doppler_axis_hz=axis,
                hypothesis=(cr, cj),
                cpi_s=stack.cpi_s,
                epoch_s=stack.epoch_s,
            )


def hypothesis_sweep(stack: PulseStack, chirp_grid: Iterable[float],
                     jerk_grid: Iterable[float] = (0.0,), window: str = "rect",
                     max_surfaces: int = DEFAULT_MAX_SURFACES,
                     workers: int | None = None) -> list[AmbiguitySurface]:
    """All surfaces of a chirp x jerk grid over one stack."""
    return list(iter_hypotheses(stack, list(chirp_grid), list(jerk_grid), window,
                                max_surfaces, workers))
