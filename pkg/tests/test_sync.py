import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pbradar.detect import Detection, detect
from pbradar.errors import NoDetectionError, ValidationError
from pbradar.pulse_stack import compress, doppler_transform
from pbradar.signal_core import ComplexBaseband, add_noise, fractional_delay, make_fm_surrogate
from pbradar.sync import (Stage, SyncSolution, apply_correction, closed_loop_residual,
                          coarse_align, fine_align)

FS = 8000.0


def det(delay_s, doppler_hz, cpi_s=1.0):
    return Detection(delay_s, doppler_hz, 0.0, 0.0, 20.0, cpi_s, 0.0)


def offset_pair(offset_s, seed=0, duration_s=10.0, event=(2.0, 2.05)):
    """Surveillance with one transient and a reference recorded ``offset_s`` late."""
    lead = int(np.ceil(offset_s * FS)) + 1
    n = int(duration_s * FS)
    true = make_fm_surrogate((n + lead) / FS, 0.8 * FS, FS, seed)
    base = true.samples[lead:]
    i0, i1 = int(event[0] * FS), int(event[1] * FS)
    surv = np.zeros(n, complex)
    surv[i0:i1] = 10 * base[i0:i1]
    surv = add_noise(ComplexBaseband(surv, FS, 1e8), 0.0, seed + 1, signal_power=1.0)
    whole = int(np.floor(offset_s * FS))
    rec = fractional_delay(true.samples[lead - whole:lead - whole + n], offset_s * FS - whole)
    return surv, ComplexBaseband(rec, FS, 1e8)


class TestCoarse:
    def test_recovers_large_offset(self):
        surv, ref = offset_pair(3.217)
        sol = coarse_align(surv, ref, (2.0, 2.05), 5.0)
        assert sol.stage is Stage.COARSE
        assert sol.time_offset_s == pytest.approx(3.217, abs=1e-3)
        assert sol.peak_ratio >= 7

    def test_identical_streams_zero_offset(self):
        s = make_fm_surrogate(2.0, 0.8 * FS, FS, seed=3)
        sol = coarse_align(s, s, (0.5, 0.55), 0.5)
        assert abs(sol.time_offset_s) <= 1e-3

    def test_pure_noise_rejected(self):
        rejected = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            a = rng.standard_normal(8000) + 1j * rng.standard_normal(8000)
            b = rng.standard_normal(8000) + 1j * rng.standard_normal(8000)
            try:
                coarse_align(ComplexBaseband(a, FS, 1e8), ComplexBaseband(b, FS, 1e8),
                             (0.4, 0.45), 0.3)
            except NoDetectionError:
                rejected += 1
        assert rejected >= 99

    def test_window_outside_stream(self):
        s = make_fm_surrogate(1.0, 0.8 * FS, FS, seed=3)
        with pytest.raises(ValidationError, match="event_window_s"):
            coarse_align(s, s, (0.9, 1.2), 0.1)

    def test_span_outside_reference(self):
        s = make_fm_surrogate(1.0, 0.8 * FS, FS, seed=3)
        short = s.with_samples(s.samples[:100], epoch_s=50.0)
        with pytest.raises(ValidationError, match="search_span_s"):
            coarse_align(s, short, (0.2, 0.25), 0.1)


class TestFine:
    def test_equal_is_zero(self):
        sol = fine_align(det(1e-3, 5.0), (1e-3, 5.0))
        assert (sol.time_offset_s, sol.freq_offset_hz, sol.stage) == (0.0, 0.0, Stage.FINE)

    def test_late_reference_sign(self):
        # a reference recorded 2 ms late with +0.8 Hz makes echoes early and low
        sol = fine_align(det(1e-3 - 2e-3, 5.0 - 0.8), (1e-3, 5.0))
        assert sol.time_offset_s == pytest.approx(2e-3)
        assert sol.freq_offset_hz == pytest.approx(0.8)

    def test_closed_loop_residual_bins(self):
        sol = closed_loop_residual(SyncSolution(1.0, 2.0, Stage.FINE), det(1.25e-3, 5.3, 2.0),
                                   (1e-3, 5.0), 1e-3)
        assert sol.residual_delay_bins == pytest.approx(0.25)
        assert sol.residual_doppler_bins == pytest.approx(0.6)


class TestApplyCorrection:
    def setup_method(self):
        self.x = make_fm_surrogate(1.0, 0.8 * FS, FS, seed=9)

    def power_err_db(self, a, b, edge=64):
        a, b = a.samples[edge:-edge], b.samples[edge:-edge]
        # remove the best constant phase before comparing
        phase = np.vdot(a, b) / abs(np.vdot(a, b))
        err = np.sum(np.abs(b - phase * a) ** 2) / np.sum(np.abs(a) ** 2)
        return 10 * np.log10(max(err, 1e-30))

    def test_zero_is_identity(self):
        out = apply_correction(self.x, SyncSolution(0.0, 0.0))
        np.testing.assert_array_equal(out.samples, self.x.samples)

    def test_undoes_offset_to_true_delay_bin(self):
        # echo 12 samples behind the true reference; recorded reference 3.4 samples late
        true = self.x
        echo = np.zeros(len(true), complex)
        echo[12:] = true.samples[:-12]
        surv = true.with_samples(echo)
        late = true.with_samples(fractional_delay(true.samples, 3.4))
        off = detect(doppler_transform(compress(late, surv, 20 / FS, 400)))
        assert off.delay_bin != 12
        fixed = apply_correction(late, SyncSolution(3.4 / FS, 0.0))
        on = detect(doppler_transform(compress(fixed, surv, 20 / FS, 400)))
        assert on.delay_bin == 12

    @given(dt=st.floats(-0.01, 0.01), df=st.floats(-50, 50))
    def test_apply_then_negate(self, dt, df):
        sol = SyncSolution(dt, df)
        back = apply_correction(apply_correction(self.x, sol), sol.negated())
        assert self.power_err_db(self.x, back, edge=200) <= -60

    @given(dt1=st.floats(-0.005, 0.005), dt2=st.floats(-0.005, 0.005),
           df1=st.floats(-20, 20), df2=st.floats(-20, 20))
    def test_composition(self, dt1, dt2, df1, df2):
        a, b = SyncSolution(dt1, df1), SyncSolution(dt2, df2)
        seq = apply_correction(apply_correction(self.x, a), b)
        joint = apply_correction(self.x, a.then(b))
        assert self.power_err_db(joint, seq, edge=200) <= -60

    def test_shift_exceeding_stream(self):
        with pytest.raises(ValidationError, match="time_offset_s"):
            apply_correction(self.x, SyncSolution(2.0, 0.0))


class TestSolution:
    def test_finite(self):
        with pytest.raises(ValidationError):
            SyncSolution(np.inf, 0.0)

    def test_dict_round_trip(self):
        sol = SyncSolution(1.5, -0.2, "fine", 0.1, 0.2, None)
        assert SyncSolution.from_dict(sol.to_dict()) == sol
        assert sol.to_dict()["stage"] == "fine"
