"""Direct evaluation of the delay/Doppler/Doppler-rate ambiguity function.

Deliberately slow and transform-free: every value is one explicit sum over
samples, so it can be checked by reading it. Used as ground truth for the
pulse-stack pipeline.
"""

from __future__ import annotations

import numpy as np

from .errors import LengthMismatchError, ResourceLimitError, ValidationError
from .pulse_stack import AmbiguitySurface
from .signal_core import ComplexBaseband

MAX_ORACLE_SAMPLES = 65_536
MAX_ORACLE_AXIS = 64


def _centred_times(n, fs, batch_len):
    if batch_len is None:
        return (np.arange(n) - (n - 1) / 2.0) / fs
    # slow-time sampled variant: every sample carries its batch's start time
    m = np.arange(n) // batch_len
    n_batches = n // batch_len
    return (m - (n_batches - 1) / 2.0) * batch_len / fs


def _lagged_product(surv: ComplexBaseband, ref: ComplexBaseband, delay_samples: int, n: int):
    """``s[n] * conj(r[n - d])`` with out-of-range reference reading zero."""
    d = int(delay_samples)
    if abs(d) >= len(ref):
        raise ValidationError(f"delay {d} outside stream bounds", "delay_samples")
    s = surv.samples[:n]
    r = np.zeros(n, np.complex128)
    if d >= 0:
        r[d:] = ref.samples[: n - d]
    else:
        r[: n + d] = ref.samples[-d:n]
    return s * np.conj(r)


def _check(surv, ref, batch_len):
    if surv.sample_rate_hz != ref.sample_rate_hz:
        raise LengthMismatchError("sample rates differ")
    n = min(len(surv), len(ref))
    if batch_len is not None:
        if batch_len < 1 or n // batch_len < 1:
            raise ValidationError("batch_len must fit the stream", "batch_len")
        n = (n // batch_len) * batch_len
    return n


def caf_point(surv: ComplexBaseband, ref: ComplexBaseband, delay_samples: int,
              doppler_hz: float, chirp_hz_per_s: float = 0.0,
              batch_len: int | None = None) -> complex:
    """``sum_n s[n] conj(r[n-d]) exp(-2j pi (v t_n + w t_n**2 / 2))``.

    ``chirp_hz_per_s`` is the Doppler rate ``w``; ``t_n`` is centred on the
    middle of the evaluated span. With ``batch_len`` the phase is held at
    each batch's instant, the slow-time sampled form the pulse stack computes.
    """
    n = _check(surv, ref, batch_len)
    prod = _lagged_product(surv, ref, delay_samples, n)
    t = _centred_times(n, surv.sample_rate_hz, batch_len)
    return complex(np.sum(prod * np.exp(-2j * np.pi * (doppler_hz * t + 0.5 * chirp_hz_per_s * t**2))))


def caf_grid(surv: ComplexBaseband, ref: ComplexBaseband, delay_axis, doppler_axis,
             chirp: float = 0.0, batch_len: int | None = None) -> AmbiguitySurface:
    """``|caf_point|**2`` over a delay (samples) x Doppler (Hz) grid.

    Capped at 65,536 samples and 64 x 64 points. The resulting surface
    records its hypothesis as the equivalent dechirp coefficient ``chirp / 2``.
    """
    delays = np.atleast_1d(np.asarray(delay_axis)).astype(np.int64)
    dopplers = np.atleast_1d(np.asarray(doppler_axis, dtype=np.float64))
    if delays.size == 0 or dopplers.size == 0:
        raise ValidationError("axes must be nonempty")
    n = _check(surv, ref, batch_len)
    if n > MAX_ORACLE_SAMPLES:
        raise ResourceLimitError(f"oracle limited to {MAX_ORACLE_SAMPLES} samples, got {n}")
    if delays.size > MAX_ORACLE_AXIS or dopplers.size > MAX_ORACLE_AXIS:
        raise ResourceLimitError(f"oracle grid limited to {MAX_ORACLE_AXIS} points per axis")
    fs = surv.sample_rate_hz
    t = _centred_times(n, fs, batch_len)
    power = np.empty((delays.size, dopplers.size))
    for i, d in enumerate(delays):
        prod = _lagged_product(surv, ref, d, n)
        for k, v in enumerate(dopplers):
            value = np.sum(prod * np.exp(-2j * np.pi * (v * t + 0.5 * chirp * t**2)))
            power[i, k] = value.real**2 + value.imag**2
    cpi = n / fs
    return AmbiguitySurface(power, delays / fs, dopplers, (chirp / 2.0, 0.0), cpi, surv.epoch_s)
