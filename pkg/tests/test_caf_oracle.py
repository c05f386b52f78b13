import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from pbradar.caf_oracle import caf_grid, caf_point
from pbradar.errors import LengthMismatchError, ResourceLimitError
from pbradar.pulse_stack import compress, doppler_axis, doppler_transform
from pbradar.signal_core import ComplexBaseband

from conftest import noise_stream

FS = 1000.0


def centred_t(n):
    return (np.arange(n) - (n - 1) / 2) / FS


def test_zero_lag_is_energy(white):
    chi = caf_point(white, white, 0, 0.0)
    assert chi.imag == pytest.approx(0.0, abs=1e-9)
    assert chi.real == pytest.approx(np.sum(np.abs(white.samples) ** 2), rel=1e-12)


def test_shifted_copy_gives_overlap_energy(white):
    x = np.zeros(len(white), complex)
    x[3:] = white.samples[:-3]
    surv = white.with_samples(x)
    overlap = np.sum(np.abs(white.samples[:-3]) ** 2)
    assert abs(caf_point(surv, white, 3, 0.0)) == pytest.approx(overlap, rel=1e-12)


def test_doppler_rate_peak_on_grid():
    r = noise_stream(2000, seed=1, fs=FS)
    t = centred_t(2000)
    s = r.with_samples(r.samples * np.exp(2j * np.pi * (7.0 * t + 0.5 * 4.0 * t**2)))
    best = abs(caf_point(s, r, 0, 7.0, 4.0))
    for v in np.linspace(5, 9, 21):
        for w in np.linspace(0, 8, 21):
            assert abs(caf_point(s, r, 0, v, w)) <= best * (1 + 1e-12)


def test_grid_argmax_at_truth_of_noiseless_echo():
    r = noise_stream(4000, seed=2, fs=FS)
    t = centred_t(4000)
    x = np.zeros(4000, complex)
    x[6:] = r.samples[:-6]
    s = r.with_samples(x * np.exp(2j * np.pi * 12.5 * t))
    surf = caf_grid(s, r, np.arange(0, 12), np.arange(0, 25.0, 0.5))
    i, k = np.unravel_index(np.argmax(surf.power), surf.power.shape)
    assert (i, surf.doppler_axis_hz[k]) == (6, 12.5)


def test_matches_pulse_stack_at_batch_bins():
    L, M = 50, 16
    r = noise_stream(L * M, seed=3, fs=FS)
    s = noise_stream(L * M, seed=4, fs=FS)
    fast = doppler_transform(compress(r, s, 9 / FS, L))
    slow = caf_grid(s, r, np.arange(10), doppler_axis(M, L / FS), batch_len=L)
    assert np.max(np.abs(fast.power - slow.power)) / np.max(slow.power) <= 1e-6
    assert slow.hypothesis == (0.0, 0.0)


def test_zero_surveillance_gives_zero_surface(white):
    zero = white.with_samples(np.zeros(len(white)))
    surf = caf_grid(zero, white, np.arange(4), np.linspace(-5, 5, 4))
    assert np.all(surf.power == 0.0)


def test_caps():
    big = noise_stream(70_000, fs=FS)
    with pytest.raises(ResourceLimitError):
        caf_grid(big, big, [0], [0.0])
    small = noise_stream(100, fs=FS)
    with pytest.raises(ResourceLimitError):
        caf_grid(small, small, np.arange(65), [0.0])


def test_rate_mismatch():
    a = noise_stream(100, fs=FS)
    b = ComplexBaseband(a.samples, 2 * FS, a.carrier_hz)
    with pytest.raises(LengthMismatchError):
        caf_point(a, b, 0, 0.0)


def test_surface_records_equivalent_dechirp():
    r = noise_stream(200, fs=FS)
    assert caf_grid(r, r, [0], [0.0], chirp=8.0).hypothesis == (4.0, 0.0)


@given(seed=st.integers(0, 500), d=st.integers(-20, 20), v=st.floats(-200, 200),
       w=st.floats(-100, 100))
def test_cauchy_schwarz(seed, d, v, w):
    s = noise_stream(300, seed=seed, fs=FS)
    r = noise_stream(300, seed=seed + 1, fs=FS)
    bound = np.sqrt(np.sum(np.abs(s.samples) ** 2) * np.sum(np.abs(r.samples) ** 2))
    assert abs(caf_point(s, r, d, v, w)) <= bound * (1 + 1e-12)


@given(seed=st.integers(0, 500), k=st.integers(0, 63))
def test_single_batch_dft_identity(seed, k):
    n = 64
    s = noise_stream(n, seed=seed, fs=FS)
    r = noise_stream(n, seed=seed + 7, fs=FS)
    v = k * FS / n
    prod = s.samples * np.conj(r.samples)
    dft = np.fft.fft(prod)[k]
    # centring the time origin only adds a known phase
    expected = dft * np.exp(2j * np.pi * v * (n - 1) / 2 / FS)
    assert_allclose(caf_point(s, r, 0, v), expected, rtol=1e-9, atol=1e-9)


@given(seed=st.integers(0, 500), d=st.integers(-10, 10), v=st.floats(-100, 100))
def test_conjugate_symmetry(seed, d, v):
    s = noise_stream(128, seed=seed, fs=FS)
    r = noise_stream(128, seed=seed + 3, fs=FS)
    forward = caf_point(s, r, d, v)
    swapped = caf_point(r, s, -d, -v)
    assert abs(swapped) == pytest.approx(abs(forward), rel=1e-9, abs=1e-9)
    # equal to the conjugate up to the phase of the shifted time origin
    assert_allclose(swapped, np.conj(forward) * np.exp(-2j * np.pi * v * d / FS),
                    rtol=1e-9, atol=1e-9)
