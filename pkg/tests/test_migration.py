import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from pbradar.detect import best_hypothesis, detect
from pbradar.errors import ResourceLimitError, ValidationError
from pbradar.migration import (DopplerHypothesis, chirp_axis, dechirp, dejerk, hypothesis_axis,
                               hypothesis_sweep, iter_hypotheses, jerk_axis, keystone,
                               resample_slow_time)
from pbradar.pulse_stack import PulseStack, doppler_transform

from stacks import energy_in_central_bins, target_stack


def quad_stack(c_r, M=500, tb=0.01, c_j=0.0):
    t = (np.arange(M) - (M - 1) / 2) * tb
    data = np.exp(2j * np.pi * (c_r * t**2 + c_j * t**3))[None, :]
    return PulseStack(data, [0.0], tb, 0.0, 1e8, 1e3)


def random_stack(seed, shape=(6, 40)):
    rng = np.random.default_rng(seed)
    data = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return PulseStack(data, np.arange(shape[0]) / 1e3, 0.01, 0.0, 1e8, 1e3)


class TestHypothesis:
    def test_acceleration_relation(self):
        h = DopplerHypothesis.from_acceleration(30.0, 3.0)
        assert h.chirp_hz_per_s == pytest.approx(10.0)
        assert h.acceleration(3.0) == pytest.approx(30.0)

    def test_from_doppler_derivatives(self):
        h = DopplerHypothesis.from_doppler_derivatives(20.0, 6.0)
        assert h.as_tuple() == (10.0, 1.0)

    def test_finite(self):
        with pytest.raises(ValidationError):
            DopplerHypothesis(np.nan)

    @given(start=st.floats(-50, 50), span=st.floats(0.1, 50), cpi=st.floats(0.5, 10))
    def test_axes_strictly_increasing_uniform(self, start, span, cpi):
        for ax, step in ((chirp_axis(start, start + span, cpi), 1 / cpi**2),
                         (jerk_axis(start, start + span, cpi), 2 / cpi**3)):
            if ax.size > 1:
                assert np.all(np.diff(ax) > 0)
                assert_allclose(np.diff(ax), step, rtol=1e-9)
            assert ax[0] == start and ax[-1] <= start + span + 1e-9

    def test_axis_count(self):
        assert_allclose(hypothesis_axis(-20, 20, count=41), np.arange(-20, 21))
        with pytest.raises(ValidationError):
            hypothesis_axis(0, 1)


class TestDechirp:
    def test_zero_is_identity(self):
        s = random_stack(0)
        assert_array_equal(dechirp(s, DopplerHypothesis()).data, s.data)
        assert_array_equal(dejerk(s, DopplerHypothesis()).data, s.data)

    def test_matched_dechirp_concentrates_to_one_bin(self):
        s = quad_stack(10.0)
        power = doppler_transform(dechirp(s, DopplerHypothesis(10.0))).power[0]
        assert 10 * np.log10(power.max() / s.n_batches**2) == pytest.approx(0.0, abs=0.2)
        assert np.sum(np.delete(power, np.argmax(power))) <= 1e-18 * power.max()

    def test_sweep_peaks_at_truth(self):
        s = quad_stack(10.0)  # 5 s CPI
        grid = np.linspace(5, 15, 201)
        peaks = [sf.power.max() for sf in iter_hypotheses(s, grid)]
        assert abs(grid[int(np.argmax(peaks))] - 10.0) <= 2 / 5.0**2

    def test_dechirp_refuses_jerk(self):
        with pytest.raises(ValidationError, match="jerk"):
            dechirp(random_stack(1), DopplerHypothesis(1.0, 0.5))

    def test_dejerk_reduces_to_dechirp_bit_exactly(self):
        s = random_stack(2)
        assert_array_equal(dejerk(s, DopplerHypothesis(3.7, 0.0)).data,
                           dechirp(s, DopplerHypothesis(3.7)).data)

    @given(a=st.floats(-50, 50), b=st.floats(-50, 50), seed=st.integers(0, 99))
    def test_unitary_and_phases_add(self, a, b, seed):
        s = random_stack(seed)
        once = dechirp(s, DopplerHypothesis(a))
        assert_allclose(np.sum(np.abs(once.data) ** 2), np.sum(np.abs(s.data) ** 2), rtol=1e-12)
        twice = dechirp(once, DopplerHypothesis(b))
        assert_allclose(twice.data, dechirp(s, DopplerHypothesis(a + b)).data,
                        rtol=1e-9, atol=1e-9)

    def test_dejerk_matches_cubic_target(self):
        s = quad_stack(10.0, M=800, c_j=1.0)
        power = doppler_transform(dejerk(s, DopplerHypothesis(10.0, 1.0))).power[0]
        assert power.max() == pytest.approx(800.0**2, rel=1e-9)


class TestSweep:
    def test_single_hypothesis_is_plain_transform(self):
        s = random_stack(3)
        (surf,) = hypothesis_sweep(s, [0.0], [0.0], window="hann")
        assert_array_equal(surf.power, doppler_transform(s, "hann").power)

    def test_grid_argmax_nearest_truth(self):
        s = quad_stack(10.0)
        surfaces = hypothesis_sweep(s, np.linspace(-20, 20, 41))
        det = best_hypothesis(surfaces)
        assert det.chirp_hz_per_s == 10.0

    def test_straddle_loss_at_default_spacing(self):
        cpi = 4.0
        step = 1 / cpi**2
        s = quad_stack(10.0 + step / 2, M=400)
        matched = doppler_transform(dechirp(s, DopplerHypothesis(10.0 + step / 2))).power.max()
        for c in (10.0, 10.0 + step):
            off = doppler_transform(dechirp(s, DopplerHypothesis(c))).power.max()
            assert 10 * np.log10(matched / off) <= 3.0

    def test_order_chirp_fastest(self):
        surfaces = hypothesis_sweep(random_stack(4), [1.0, 2.0, 3.0], [0.0, 0.5])
        assert [s.hypothesis for s in surfaces] == [
            (1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (1.0, 0.5), (2.0, 0.5), (3.0, 0.5)]

    def test_stack_reused_not_recompressed(self, monkeypatch):
        import pbradar.pulse_stack as ps

        def boom(*a, **k):
            raise AssertionError("compress re-invoked")

        monkeypatch.setattr(ps, "compress", boom)
        assert len(hypothesis_sweep(random_stack(5), np.arange(5.0), [0.0, 1.0])) == 10

    def test_surface_cap(self):
        with pytest.raises(ResourceLimitError):
            next(iter_hypotheses(random_stack(6), np.arange(100.0), np.arange(50.0),
                                 max_surfaces=4096))

    def test_unimodal_near_truth(self):
        cpi = 5.0
        grid = 10.0 + np.arange(-5, 6) / cpi**2
        peaks = np.array([s.power.max() for s in iter_hypotheses(quad_stack(10.0), grid)])
        i0 = 5
        assert np.all(np.diff(peaks[: i0 + 1]) > 0)
        assert np.all(np.diff(peaks[i0:]) < 0)


class TestKeystone:
    FS = 1e6

    def test_static_target_is_identity(self):
        s = target_stack(32, 128, self.FS, 100 * self.FS, 1e-3, lambda t: 7.3e-6 + 0 * t)
        out = keystone(s)
        err = np.abs(out.data - s.data) ** 2 / np.max(np.abs(s.data) ** 2)
        assert 10 * np.log10(err.max() + 1e-300) <= -60

    def test_walk_of_eight_bins_is_frozen(self):
        M, tb, fc = 256, 1e-3, 5 * self.FS
        cpi = M * tb
        rate = 8 / self.FS / cpi
        s = target_stack(48, M, self.FS, fc, tb, lambda t: 20 / self.FS + rate * t)
        before = energy_in_central_bins(s.data, 20.0)
        after = energy_in_central_bins(keystone(s).data, 20.0)
        assert before <= 0.30
        assert after >= 0.90

    def test_energy_preserved_within_half_db(self):
        M, tb, fc = 256, 1e-3, 50 * self.FS
        # 200 Hz Doppler, well inside the +-500 Hz unambiguous band
        s = target_stack(48, M, self.FS, fc, tb, lambda t: 20 / self.FS - 4e-6 * t)
        ratio = np.sum(np.abs(keystone(s).data) ** 2) / np.sum(np.abs(s.data) ** 2)
        assert abs(10 * np.log10(ratio)) <= 0.5

    def test_tone_scaling_at_one_percent_offset(self):
        fs, fc, tb, M = 1.28e6, 10e6, 1e-3, 1024
        n_delay = 64  # fast-frequency DFT of 128 bins, 10 kHz apart
        nu = 400.0
        t = (np.arange(M) - (M - 1) / 2) * tb
        d = np.arange(n_delay)
        data = np.exp(2j * np.pi * 10 * d / 128)[:, None] * np.exp(2j * np.pi * nu * t)[None, :]
        out = keystone(PulseStack(data, d / fs, tb, 0.0, fc, fs))
        row = np.fft.fft(out.data, 128, axis=0)[10]
        spec = np.abs(np.fft.fft(row * np.hanning(M), 64 * M))
        f = np.fft.fftfreq(64 * M, tb)
        assert f[np.argmax(spec)] == pytest.approx(nu / 1.01, abs=0.1)

    def test_needs_eight_batches(self):
        with pytest.raises(ValidationError, match="n_batches"):
            keystone(random_stack(0, shape=(4, 7)))

    def test_resample_identity_on_grid(self):
        rows = np.random.default_rng(0).standard_normal((3, 20)) + 0j
        assert_allclose(resample_slow_time(rows, np.arange(20.0)), rows, atol=1e-12)


def test_two_stage_gain_grows_three_db_per_doubling():
    # constant range rate plus constant chirp; uncompensated limit 1/sqrt(c_r) = 0.5 s
    fs, fc, tb = 1e6, 100e6, 5e-3
    doppler, c_r = 40.0, 4.0
    rate = -doppler / fc
    curv = -c_r / fc

    def tau(t):
        return 10 / fs + rate * t + curv * t**2

    means = []
    for M in (100, 200, 400, 800):
        snrs = []
        for seed in range(10):
            s = target_stack(24, M, fs, fc, tb, tau, noise_sigma=1.0, seed=seed, amplitude=0.05)
            s = keystone(s)
            snrs.append(detect(next(iter_hypotheses(s, [c_r]))).snr_db)
        means.append(np.mean(snrs))
    steps = np.diff(means)
    assert np.all(np.abs(steps - 3.0) <= 0.7), steps
