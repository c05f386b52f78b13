"""Sample streams and waveform synthesis.

Holds the complex baseband stream type shared by every stage, the
band-limited fractional-delay engine, and the forward model that turns a
reference waveform plus a target phase history into a surveillance echo.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InsufficientLeadInError, LengthMismatchError, ValidationError

# Signal-level interpolator: Kaiser-windowed sinc, 32 taps.
DELAY_HALF_LENGTH = 16
DELAY_KAISER_BETA = 10.0


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ComplexBaseband:
    """Uniformly sampled complex baseband stream.

    ``carrier_hz`` is the RF centre frequency the stream was mixed down from
    and ``epoch_s`` the absolute time of the first sample.
    """

    samples: np.ndarray
    sample_rate_hz: float
    carrier_hz: float
    epoch_s: float = 0.0

    def __post_init__(self):
        samples = _frozen(self.samples, np.complex128)
        if samples.ndim != 1 or samples.size < 1:
            raise ValidationError("need a 1-D stream with at least one sample", "samples")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("samples must be finite", "samples")
        for name in ("sample_rate_hz", "carrier_hz"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0:
                raise ValidationError(f"must be finite and positive, got {value}", name)
            object.__setattr__(self, name, value)
        epoch = float(self.epoch_s)
        if not np.isfinite(epoch):
            raise ValidationError("must be finite", "epoch_s")
        object.__setattr__(self, "epoch_s", epoch)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    @property
    def times(self) -> np.ndarray:
        """Absolute sample times."""
        return self.epoch_s + np.arange(self.samples.size) / self.sample_rate_hz

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))

    def with_samples(self, samples, epoch_s=None) -> "ComplexBaseband":
        return replace(self, samples=samples,
                       epoch_s=self.epoch_s if epoch_s is None else epoch_s)

    def slice(self, start: int, stop: int) -> "ComplexBaseband":
        """Sub-stream ``[start, stop)`` with its epoch moved accordingly."""
        if not 0 <= start < stop <= len(self):
            raise ValidationError(f"slice [{start}, {stop}) outside stream of {len(self)}")
        return self.with_samples(self.samples[start:stop],
                                 self.epoch_s + start / self.sample_rate_hz)


@dataclass(frozen=True, eq=False)
class PhaseHistory:
    """Per-sample target history driving echo synthesis.

    ``delay_s`` is the bistatic delay relative to the direct path,
    ``phase_cycles`` the carrier phase applied to the echo.
    """

    delay_s: np.ndarray
    phase_cycles: np.ndarray
    amplitude: np.ndarray = field(default=None)

    def __post_init__(self):
        delay = _frozen(self.delay_s, np.float64)
        phase = _frozen(self.phase_cycles, np.float64)
        amp = np.ones_like(delay) if self.amplitude is None else self.amplitude
        amp = _frozen(np.broadcast_to(amp, delay.shape), np.float64)
        if not (delay.ndim == phase.ndim == 1 and delay.shape == phase.shape == amp.shape):
            raise LengthMismatchError("delay, phase and amplitude must share one length")
        if np.any(delay < 0) or np.any(amp < 0):
            raise ValidationError("delay_s and amplitude must be non-negative")
        if not (np.all(np.isfinite(delay)) and np.all(np.isfinite(phase))):
            raise ValidationError("history must be finite")
        object.__setattr__(self, "delay_s", delay)
        object.__setattr__(self, "phase_cycles", phase)
        object.__setattr__(self, "amplitude", amp)

    def __len__(self):
        return self.delay_s.size


def _kaiser_sinc(x, half_length, beta):
    ratio = np.clip(1.0 - (x / half_length) ** 2, 0.0, None)
    w = np.i0(beta * np.sqrt(ratio)) / np.i0(beta)
    return np.sinc(x) * np.where(np.abs(x) < half_length, w, 0.0)


def fractional_delay(x: np.ndarray, delay_samples, half_length: int = DELAY_HALF_LENGTH,
                     beta: float = DELAY_KAISER_BETA) -> np.ndarray:
    """Evaluate ``x`` at positions ``n - delay_samples[n]``.

    ``delay_samples`` is a scalar or one value per output sample (negative
    values advance). Taps falling outside ``x`` read as zero. Integer delays
    reproduce the input exactly.
    """
    x = np.asarray(x)
    n = x.size
    pos = np.arange(n, dtype=np.float64) - np.broadcast_to(
        np.asarray(delay_samples, dtype=np.float64), (n,))
    base = np.floor(pos)
    mu = pos - base
    base = base.astype(np.int64)
    out = np.zeros(n, dtype=np.complex128)
    exact = mu == 0.0
    for tap in range(-half_length + 1, half_length + 1):
        idx = base + tap
        valid = (idx >= 0) & (idx < n)
        if not valid.any():
            continue
        h = _kaiser_sinc(mu - tap, half_length, beta)
        # sinc(-tap) is not exactly zero in floating point
        h[exact] = 1.0 if tap == 0 else 0.0
        out[valid] += x[idx[valid]] * h[valid]
    return out


def make_fm_surrogate(duration_s: float, bandwidth_hz: float, sample_rate_hz: float,
                      seed: int, carrier_hz: float = 100e6, epoch_s: float = 0.0) -> ComplexBaseband:
    """Band-limited complex Gaussian noise standing in for an FM broadcast.

    The spectrum is brick-wall limited to ``+-bandwidth_hz/2`` and the stream
    normalised to unit mean power.
    """
    if duration_s <= 0:
        raise ValidationError("must be positive", "duration_s")
    if not 0 < bandwidth_hz <= sample_rate_hz:
        raise ValidationError("need 0 < bandwidth_hz <= sample_rate_hz", "bandwidth_hz")
    n = int(round(duration_s * sample_rate_hz))
    if n < 1:
        raise ValidationError("duration shorter than one sample", "duration_s")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    spectrum = np.fft.fft(noise)
    freqs = np.fft.fftfreq(n, 1.0 / sample_rate_hz)
    spectrum[np.abs(freqs) > bandwidth_hz / 2] = 0.0
    samples = np.fft.ifft(spectrum)
    samples /= np.sqrt(np.mean(np.abs(samples) ** 2))
    return ComplexBaseband(samples, sample_rate_hz, carrier_hz, epoch_s)


def synthesize_echo(waveform: ComplexBaseband, history: PhaseHistory,
                    allow_partial: bool = False) -> ComplexBaseband:
    """Delay, phase-rotate and scale ``waveform`` along ``history``.

    ``output[n] = amplitude[n] * waveform(t_n - delay_s[n]) * exp(2j*pi*phase_cycles[n])``
    with band-limited interpolation at fractional times.

    Raises InsufficientLeadInError when an output sample would need waveform
    from before the first sample, unless ``allow_partial`` is set, in which
    case the missing history reads as zero.
    """
    if len(history) != len(waveform):
        raise LengthMismatchError(
            f"history has {len(history)} samples, waveform has {len(waveform)}")
    delay_samples = history.delay_s * waveform.sample_rate_hz
    if not allow_partial:
        earliest = np.arange(len(waveform)) - delay_samples
        if earliest.min() < 0:
            need = float(np.max(delay_samples - np.arange(len(waveform))))
            raise InsufficientLeadInError(
                f"echo needs {need:.1f} samples of waveform before the stream start")
    delayed = fractional_delay(waveform.samples, delay_samples)
    out = history.amplitude * delayed * np.exp(2j * np.pi * history.phase_cycles)
    return waveform.with_samples(out)


def add_noise(signal: ComplexBaseband, snr_db: float, seed: int,
              signal_power: float | None = None) -> ComplexBaseband:
    """Add circular complex white Gaussian noise at ``snr_db``.

    The noise power is ``signal_power / 10**(snr_db/10)``; ``signal_power``
    defaults to the measured mean power of ``signal``. ``snr_db = inf`` is the
    no-noise sentinel and returns ``signal`` unchanged.
    """
    if np.isposinf(snr_db):
        return signal
    if np.isnan(snr_db):
        raise ValidationError("must not be NaN", "snr_db")
    p_sig = signal.power if signal_power is None else float(signal_power)
    p_noise = p_sig / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    n = len(signal)
    noise = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(p_noise / 2.0)
    return signal.with_samples(signal.samples + noise)
