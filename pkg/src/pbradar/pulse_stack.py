"""Batched range compression and Doppler resolution.

The streams are cut into contiguous batches; each batch of surveillance is
cross-correlated against the matching reference to form one slow-time column
of a delay x slow-time stack, and a DFT across slow time resolves Doppler.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.fft
from scipy.signal import get_window

from .errors import AliasingError, LengthMismatchError, ValidationError
from .signal_core import ComplexBaseband

# Above this many delay bins the per-batch correlation runs through FFTs.
DIRECT_DELAY_LIMIT = 64

SURFACE_MAGIC = b"AMBS"
SURFACE_VERSION = 1
_SURFACE_HEADER = struct.Struct("<4sIIIddd")


def _readonly(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PulseStack:
    """Range-compressed batches, ``data[delay_bin, batch]``."""

    data: np.ndarray
    delay_axis_s: np.ndarray
    batch_duration_s: float
    epoch_s: float
    carrier_hz: float
    sample_rate_hz: float
    partial_first_batch: bool = False

    def __post_init__(self):
        data = _readonly(self.data, np.complex128)
        delay = _readonly(self.delay_axis_s, np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 2:
            raise ValidationError("need n_delay >= 1 and n_batches >= 2", "data")
        if delay.shape != (data.shape[0],):
            raise LengthMismatchError("delay axis does not match data rows")
        if delay.size > 1 and not np.allclose(np.diff(delay), 1.0 / self.sample_rate_hz):
            raise ValidationError("delay axis must be uniform at the sample spacing",
                                  "delay_axis_s")
        if not self.batch_duration_s > 0:
            raise ValidationError("must be positive", "batch_duration_s")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "delay_axis_s", delay)

    @property
    def n_delay(self) -> int:
        return self.data.shape[0]

    @property
    def n_batches(self) -> int:
        return self.data.shape[1]

    @property
    def cpi_s(self) -> float:
        return self.n_batches * self.batch_duration_s

    @property
    def slow_time_s(self) -> np.ndarray:
        """Batch instants centred on mid-CPI."""
        m = np.arange(self.n_batches)
        return (m - (self.n_batches - 1) / 2.0) * self.batch_duration_s

    def with_data(self, data) -> "PulseStack":
        return replace(self, data=data)


@dataclass(frozen=True, eq=False)
class AmbiguitySurface:
    """Delay x Doppler power for one ``(chirp, jerk)`` hypothesis."""

    power: np.ndarray
    delay_axis_s: np.ndarray
    doppler_axis_hz: np.ndarray
    hypothesis: tuple = (0.0, 0.0)
    cpi_s: float = 1.0
    epoch_s: float = 0.0

    def __post_init__(self):
        power = _readonly(self.power, np.float64)
        delay = _readonly(self.delay_axis_s, np.float64)
        doppler = _readonly(self.doppler_axis_hz, np.float64)
        if power.shape != (delay.size, doppler.size):
            raise LengthMismatchError(
                f"power {power.shape} does not match axes ({delay.size}, {doppler.size})")
        if np.any(power < 0) or not np.all(np.isfinite(power)):
            raise ValidationError("power must be finite and non-negative", "power")
        object.__setattr__(self, "power", power)
        object.__setattr__(self, "delay_axis_s", delay)
        object.__setattr__(self, "doppler_axis_hz", doppler)
        object.__setattr__(self, "hypothesis", tuple(float(h) for h in self.hypothesis))

    @property
    def chirp_hz_per_s(self) -> float:
        return self.hypothesis[0]

    @property
    def jerk_hz_per_s2(self) -> float:
        return self.hypothesis[1]

    def same_axes(self, other: "AmbiguitySurface") -> bool:
        return (self.power.shape == other.power.shape
                and np.array_equal(self.delay_axis_s, other.delay_axis_s)
                and np.array_equal(self.doppler_axis_hz, other.doppler_axis_hz))


def doppler_axis(n_batches: int, batch_duration_s: float) -> np.ndarray:
    return np.fft.fftshift(np.fft.fftfreq(n_batches, batch_duration_s))


def _check_pair(reference: ComplexBaseband, surveillance: ComplexBaseband):
    if reference.sample_rate_hz != surveillance.sample_rate_hz:
        raise LengthMismatchError("reference and surveillance sample rates differ")
    if reference.carrier_hz != surveillance.carrier_hz:
        raise LengthMismatchError("reference and surveillance carriers differ")


def compress(reference: ComplexBaseband, surveillance: ComplexBaseband, max_delay_s: float,
             batch_len_samples: int, *, min_delay_s: float = 0.0, start_sample: int = 0,
             n_batches: int | None = None, workers: int | None = None) -> PulseStack:
    """Range-compress contiguous batches into a pulse stack.

    ``data[d, m] = sum_l surv[s0 + m*L + l] * conj(ref[s0 + m*L + l - d])`` for
    delay bins ``d`` covering ``[min_delay_s, max_delay_s]``. Reference samples
    before the stream start read as zero; ``partial_first_batch`` records
    whether that happened. With the defaults the whole stream is used.
    """
    _check_pair(reference, surveillance)
    if len(reference) != len(surveillance):
        raise LengthMismatchError(
            f"stream lengths differ ({len(reference)} vs {len(surveillance)})")
    fs = surveillance.sample_rate_hz
    L = int(batch_len_samples)
    if L < 1:
        raise ValidationError("must be positive", "batch_len_samples")
    if L > len(surveillance):
        raise LengthMismatchError("batch longer than the stream")
    if max_delay_s < 0 or min_delay_s < 0 or min_delay_s > max_delay_s:
        raise ValidationError("need 0 <= min_delay_s <= max_delay_s", "max_delay_s")
    if n_batches is None:
        n_batches = (len(surveillance) - start_sample) // L
    M = int(n_batches)
    if M < 2:
        raise ValidationError("need at least two batches", "batch_len_samples")
    if start_sample < 0 or start_sample + M * L > len(surveillance):
        raise ValidationError("batches run past the stream end", "start_sample")

    d_min = int(round(min_delay_s * fs))
    d_max = int(round(max_delay_s * fs))
    n_delay = d_max - d_min + 1
    surv = surveillance.samples[start_sample:start_sample + M * L]
    # zero-padded reference so that index (start - d_max) maps to 0
    pad = max(0, d_max - start_sample)
    ref = np.concatenate([np.zeros(pad, np.complex128), reference.samples])
    origin = start_sample + pad

    if n_delay <= DIRECT_DELAY_LIMIT:
        data = np.empty((n_delay, M), np.complex128)
        for i in range(n_delay):
            lo = origin - (d_min + i)
            data[i] = (surv * np.conj(ref[lo:lo + M * L])).reshape(M, L).sum(axis=1)
    else:
        span = n_delay - 1
        nfft = scipy.fft.next_fast_len(L + span)
        first = origin - d_max + np.arange(M)[:, None] * L
        r_ext = ref[first + np.arange(L + span)[None, :]]
        R = scipy.fft.fft(r_ext, nfft, axis=1, workers=workers)
        S = scipy.fft.fft(surv.reshape(M, L), nfft, axis=1, workers=workers)
        corr = scipy.fft.ifft(R * np.conj(S), axis=1, workers=workers)
        # column q of corr holds lag d = d_max - q
        data = np.conj(corr[:, span::-1]).T

    return PulseStack(
        data=data,
        delay_axis_s=(d_min + np.arange(n_delay)) / fs,
        batch_duration_s=L / fs,
        epoch_s=surveillance.epoch_s + start_sample / fs,
        carrier_hz=surveillance.carrier_hz,
        sample_rate_hz=fs,
        partial_first_batch=start_sample < d_max,
    )


def slow_time_window(name: str, n: int) -> np.ndarray:
    """Taper across slow time; ``rect`` means no taper."""
    if name in (None, "rect", "rectangular", "none", "boxcar"):
        return np.ones(n)
    try:
        return get_window(name, n, fftbins=False)
    except ValueError as exc:
        raise ValidationError(f"unknown window {name!r}", "window") from exc


def resolve_doppler(data: np.ndarray, window: np.ndarray, workers: int | None = None) -> np.ndarray:
    """``|DFT_m(data * window)|**2`` with zero Doppler centred."""
    spec = scipy.fft.fft(data * window, axis=1, workers=workers)
    spec = np.fft.fftshift(spec, axes=1)
    return spec.real**2 + spec.imag**2


def doppler_transform(stack: PulseStack, window: str = "rect",
                      hypothesis=(0.0, 0.0), workers: int | None = None) -> AmbiguitySurface:
    """Resolve Doppler across slow time."""
    w = slow_time_window(window, stack.n_batches)
    return AmbiguitySurface(
        power=resolve_doppler(stack.data, w, workers),
        delay_axis_s=stack.delay_axis_s,
        doppler_axis_hz=doppler_axis(stack.n_batches, stack.batch_duration_s),
        hypothesis=hypothesis,
        cpi_s=stack.cpi_s,
        epoch_s=stack.epoch_s,
    )


def unambiguous_doppler(stack_or_batch) -> float:
    """Half-width of the unaliased Doppler band, ``1 / (2 * batch_duration)``.

    Accepts a PulseStack or a batch duration in seconds.
    """
    tb = getattr(stack_or_batch, "batch_duration_s", stack_or_batch)
    return 1.0 / (2.0 * float(tb))


def check_doppler_extent(doppler_hz, batch_duration_s: float, field: str = "processing.batch_len"):
    """Raise AliasingError if any Doppler reaches the unambiguous bound."""
    bound = unambiguous_doppler(batch_duration_s)
    peak = float(np.max(np.abs(doppler_hz)))
    if peak >= bound:
        raise AliasingError(
            f"target Doppler reaches {peak:.1f} Hz but batches only resolve +-{bound:.1f} Hz",
            field)


def write_surface(path, surface: AmbiguitySurface) -> Path:
    """Write the binary power dump plus ``.delay.csv`` / ``.doppler.csv`` axes."""
    path = Path(path)
    header = _SURFACE_HEADER.pack(SURFACE_MAGIC, SURFACE_VERSION, surface.power.shape[0],
                                  surface.power.shape[1], surface.cpi_s, *surface.hypothesis)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(surface.power, dtype="<f4").tobytes())
    for suffix, axis, name in ((".delay.csv", surface.delay_axis_s, "delay_s"),
                               (".doppler.csv", surface.doppler_axis_hz, "doppler_hz")):
        with open(path.with_suffix(suffix), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", name])
            writer.writerows((i, repr(float(v))) for i, v in enumerate(axis))
    return path


def read_surface(path) -> AmbiguitySurface:
    path = Path(path)
    raw = path.read_bytes()
    magic, version, n_delay, n_doppler, cpi, chirp, jerk = _SURFACE_HEADER.unpack_from(raw)
    if magic != SURFACE_MAGIC:
        raise ValidationError(f"bad magic {magic!r}", str(path))
    if version != SURFACE_VERSION:
        raise ValidationError(f"unsupported version {version}", str(path))
    power = np.frombuffer(raw, dtype="<f4", offset=_SURFACE_HEADER.size,
                          count=n_delay * n_doppler).reshape(n_delay, n_doppler)
    axes = []
    for suffix in (".delay.csv", ".doppler.csv"):
        with open(path.with_suffix(suffix), newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        axes.append(np.array([float(r[1]) for r in rows]))
    return AmbiguitySurface(power.astype(np.float64), axes[0], axes[1], (chirp, jerk), cpi)
