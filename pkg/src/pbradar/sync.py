"""Recovery of an unsynchronised reference channel.

Sign convention used throughout: ``time_offset_s`` is how late the recorded
reference runs relative to the true illuminator signal and
``freq_offset_hz`` the spurious frequency it carries, i.e.
``ref_recorded(t) = ref_true(t - dt) * exp(2j*pi*df*t)``. ``apply_correction``
undoes exactly that, and offsets from successive stages add.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import fftconvolve

from .detect import Detection
from .errors import NoDetectionError, ValidationError
from .signal_core import ComplexBaseband, fractional_delay

COARSE_STEP_S = 1e-3
REFINE_STEPS = 2
COARSE_THRESHOLD = 7.0


class Stage(str, enum.Enum):
    COARSE = "coarse"
    FINE = "fine"


@dataclass(frozen=True)
class SyncSolution:
    time_offset_s: float
    freq_offset_hz: float
    stage: Stage = Stage.COARSE
    residual_delay_bins: float | None = None
    residual_doppler_bins: float | None = None
    peak_ratio: float | None = None

    def __post_init__(self):
        if not (np.isfinite(self.time_offset_s) and np.isfinite(self.freq_offset_hz)):
            raise ValidationError("offsets must be finite")
        object.__setattr__(self, "stage", Stage(self.stage))

    def then(self, later: "SyncSolution") -> "SyncSolution":
        """Total correction of applying ``self`` and then ``later``."""
        return SyncSolution(self.time_offset_s + later.time_offset_s,
                            self.freq_offset_hz + later.freq_offset_hz, later.stage)

    def negated(self) -> "SyncSolution":
        return SyncSolution(-self.time_offset_s, -self.freq_offset_hz, self.stage)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage"] = self.stage.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyncSolution":
        return cls(**d)


def _sliding_energy(x: np.ndarray, width: int) -> np.ndarray:
    c = np.concatenate([[0.0], np.cumsum(np.abs(x) ** 2)])
    return c[width:] - c[:-width]


def coarse_align(surv: ComplexBaseband, ref: ComplexBaseband, event_window_s: tuple,
                 search_span_s: float, step_s: float = COARSE_STEP_S,
                 threshold: float = COARSE_THRESHOLD) -> SyncSolution:
    """Locate a transient surveillance event inside the reference.

    The surveillance snippet inside ``event_window_s`` (absolute times) is
    correlated against the reference for lags within ``+-search_span_s``. The
    normalised correlation profile is reduced to ``step_s`` lag blocks; the
    best block must exceed ``threshold`` times the median block, and the lag
    is then refined at sample resolution within ``REFINE_STEPS`` blocks.
    """
    if surv.sample_rate_hz != ref.sample_rate_hz:
        raise ValidationError("sample rates differ", "ref")
    fs = surv.sample_rate_hz
    w0 = int(round((event_window_s[0] - surv.epoch_s) * fs))
    w1 = int(round((event_window_s[1] - surv.epoch_s) * fs))
    if not 0 <= w0 < w1 <= len(surv):
        raise ValidationError("event window outside the surveillance stream", "event_window_s")
    snippet = surv.samples[w0:w1]
    width = snippet.size
    # reference index aligned with the snippet start at zero lag
    zero = int(round((surv.epoch_s - ref.epoch_s) * fs)) + w0
    span = int(round(search_span_s * fs))
    lo = max(0, zero - span)
    hi = min(len(ref) - width, zero + span)
    if hi < lo:
        raise ValidationError("search span falls outside the reference stream", "search_span_s")
    segment = ref.samples[lo:hi + width]
    corr = fftconvolve(segment, np.conj(snippet[::-1]), mode="valid")
    energy = _sliding_energy(segment, width)
    snippet_energy = np.sum(np.abs(snippet) ** 2)
    denom = np.sqrt(np.maximum(energy * snippet_energy, 1e-300))
    profile = np.abs(corr) / denom

    block = max(1, int(round(step_s * fs)))
    n_blocks = int(np.ceil(profile.size / block))
    padded = np.full(n_blocks * block, -np.inf)
    padded[: profile.size] = profile
    coarse = padded.reshape(n_blocks, block).max(axis=1)
    best_block = int(np.argmax(coarse))
    ratio = float(coarse[best_block] / np.median(coarse))
    if not ratio >= threshold:
        raise NoDetectionError(
            f"event correlation peak only {ratio:.2f}x the median lag profile "
            f"(threshold {threshold}x)")
    a = max(0, (best_block - REFINE_STEPS) * block)
    b = min(profile.size, (best_block + REFINE_STEPS + 1) * block)
    lag_index = a + int(np.argmax(profile[a:b]))
    offset = (lo + lag_index - zero) / fs
    return SyncSolution(offset, 0.0, Stage.COARSE, peak_ratio=ratio)


def fine_align(measured: Detection, predicted: tuple) -> SyncSolution:
    """Offsets from a known target's measured versus predicted delay/Doppler.

    A late reference makes echoes appear early and a reference carrying
    ``+df`` lowers the measured Doppler by ``df``, so both offsets are
    ``predicted - measured``.
    """
    pred_delay, pred_doppler = predicted
    return SyncSolution(float(pred_delay - measured.delay_s),
                        float(pred_doppler - measured.doppler_hz), Stage.FINE)


def closed_loop_residual(solution: SyncSolution, measured_after: Detection, predicted: tuple,
                         delay_bin_s: float) -> SyncSolution:
    """Record the misalignment still visible after a correction, in bins."""
    pred_delay, pred_doppler = predicted
    return SyncSolution(
        solution.time_offset_s, solution.freq_offset_hz, solution.stage,
        residual_delay_bins=float(abs(measured_after.delay_s - pred_delay) / delay_bin_s),
        residual_doppler_bins=float(abs(measured_after.doppler_hz - pred_doppler)
                                    * measured_after.cpi_s),
        peak_ratio=solution.peak_ratio,
    )


def apply_correction(ref: ComplexBaseband, sol: SyncSolution) -> ComplexBaseband:
    """Advance ``ref`` by ``time_offset_s`` and remove ``freq_offset_hz``.

    Samples shifted in from beyond the record are zero; the frequency term
    is referenced to the first sample.
    """
    fs = ref.sample_rate_hz
    shift = sol.time_offset_s * fs
    if abs(shift) >= len(ref):
        raise ValidationError("time offset exceeds the stream length", "time_offset_s")
    whole = int(np.floor(shift))
    frac = shift - whole
    samples = np.zeros(len(ref), np.complex128)
    if whole >= 0:
        samples[: len(ref) - whole] = ref.samples[whole:]
    else:
        samples[-whole:] = ref.samples[: len(ref) + whole]
    if frac:
        samples = fractional_delay(samples, -frac)
    if sol.freq_offset_hz:
        t = np.arange(len(ref)) / fs
        samples = samples * np.exp(-2j * np.pi * sol.freq_offset_hz * t)
    return ref.with_samples(samples)
