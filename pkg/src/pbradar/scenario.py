"""Scenario configuration, stream synthesis and the multi-CPI processing run.

A scenario is a JSON document whose field names carry their units. Parsing
is strict: unknown keys and out-of-range values raise ValidationError naming
the offending field, so every number behind a result is auditable.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .detect import DEFAULT_THRESHOLD_DB, Detection, detect, write_detections
from .errors import ResourceLimitError, ValidationError
from .geometry import (CircularOrbit, PolynomialTrajectory, Site, observables,
                       render_phase_history, wavelength)
from .migration import (DEFAULT_MAX_SURFACES, DopplerHypothesis, chirp_axis, iter_hypotheses,
                        jerk_axis, keystone)
from .pulse_stack import check_doppler_extent, compress, slow_time_window, write_surface
from .signal_core import (ComplexBaseband, add_noise, fractional_delay, make_fm_surrogate,
                          synthesize_echo)
from .streamio import read_stream
from .sync import (SyncSolution, apply_correction, closed_loop_residual, coarse_align,
                   fine_align)

CACHE_ENV = "PBRADAR_CACHE_DIR"
# waveform history generated ahead of the first surveillance sample
LEAD_IN_S = 0.02


def _take(d: dict, key: str, path: str, default=...):
    if key in d:
        return d[key]
    if default is ...:
        raise ValidationError("required field missing", f"{path}.{key}" if path else key)
    return default


def _no_extra(d: dict, allowed: set, path: str):
    extra = set(d) - allowed
    if extra:
        raise ValidationError(f"unknown field(s) {sorted(extra)}", path or "<root>")


def _number(value, path: str, positive=False, nonneg=False) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"expected a number, got {value!r}", path) from None
    if not np.isfinite(x):
        raise ValidationError("must be finite", path)
    if positive and x <= 0:
        raise ValidationError("must be positive", path)
    if nonneg and x < 0:
        raise ValidationError("must be non-negative", path)
    return x


@dataclass(frozen=True)
class GridSpec:
    """Hypothesis axis in physical units; ``count=None`` means CPI-derived spacing."""

    start: float = 0.0
    stop: float = 0.0
    count: int | None = 1
    unit: str = "hz"  # "hz" (Hz/s or Hz/s^2) or "accel" (m/s^2, chirp grids only)

    @classmethod
    def from_dict(cls, d: dict, path: str, order: int) -> "GridSpec":
        if not isinstance(d, dict):
            raise ValidationError("expected an object", path)
        hz = ("start_hz_per_s", "stop_hz_per_s") if order == 2 else (
            "start_hz_per_s2", "stop_hz_per_s2")
        acc = ("start_m_per_s2", "stop_m_per_s2")
        if hz[0] in d:
            keys, unit = hz, "hz"
        elif order == 2 and acc[0] in d:
            keys, unit = acc, "accel"
        else:
            raise ValidationError(f"needs {hz[0]}" + (f" or {acc[0]}" if order == 2 else ""), path)
        _no_extra(d, set(keys) | {"count"}, path)
        start = _number(_take(d, keys[0], path), f"{path}.{keys[0]}")
        stop = _number(_take(d, keys[1], path), f"{path}.{keys[1]}")
        count = d.get("count")
        if count is not None:
            if int(count) != count or count < 1:
                raise ValidationError("must be a positive integer", f"{path}.count")
            count = int(count)
            if count > 1 and stop <= start:
                raise ValidationError("stop must exceed start", f"{path}.{keys[1]}")
        elif stop < start:
            raise ValidationError("stop must not precede start", f"{path}.{keys[1]}")
        return cls(start, stop, count, unit)

    def to_dict(self, order: int) -> dict:
        if self.unit == "accel":
            keys = ("start_m_per_s2", "stop_m_per_s2")
        else:
            keys = ("start_hz_per_s", "stop_hz_per_s") if order == 2 else (
                "start_hz_per_s2", "stop_hz_per_s2")
        d = {keys[0]: self.start, keys[1]: self.stop}
        if self.count is not None:
            d["count"] = self.count
        return d

    def axis(self, cpi_s: float, order: int, wavelength_m: float) -> np.ndarray:
        scale = 1.0 / wavelength_m if self.unit == "accel" else 1.0
        make = chirp_axis if order == 2 else jerk_axis
        return make(self.start * scale, self.stop * scale, cpi_s, self.count)


def _window_name(name, path: str) -> str:
    try:
        slow_time_window(str(name), 8)
    except ValidationError:
        raise ValidationError(f"unknown window {name!r}", path) from None
    return str(name)


@dataclass(frozen=True)
class Processing:
    cpi_s: tuple
    batch_len: int
    max_delay_s: float
    min_delay_s: float = 0.0
    hop_s: float | None = None
    chirp_grid: GridSpec = field(default_factory=GridSpec)
    jerk_grid: GridSpec = field(default_factory=GridSpec)
    keystone: bool = True
    window: str = "hann"
    max_surfaces: int = DEFAULT_MAX_SURFACES
    threshold_db: float = DEFAULT_THRESHOLD_DB

    KEYS = {"cpi_s", "batch_len", "max_delay_s", "min_delay_s", "hop_s", "chirp_grid",
            "jerk_grid", "keystone", "window", "max_surfaces", "threshold_db"}

    @classmethod
    def from_dict(cls, d: dict, path="processing") -> "Processing":
        if not isinstance(d, dict):
            raise ValidationError("expected an object", path)
        _no_extra(d, cls.KEYS, path)
        cpis = _take(d, "cpi_s", path)
        if not isinstance(cpis, list) or not cpis:
            raise ValidationError("expected a nonempty list", f"{path}.cpi_s")
        cpis = tuple(_number(c, f"{path}.cpi_s", positive=True) for c in cpis)
        batch = _take(d, "batch_len", path)
        if not isinstance(batch, int) or batch < 1:
            raise ValidationError("must be a positive integer", f"{path}.batch_len")
        hop = d.get("hop_s")
        max_surfaces = d.get("max_surfaces", DEFAULT_MAX_SURFACES)
        if not isinstance(max_surfaces, int) or max_surfaces < 1:
            raise ValidationError("must be a positive integer", f"{path}.max_surfaces")
        keystone_on = d.get("keystone", True)
        if not isinstance(keystone_on, bool):
            raise ValidationError("must be true or false", f"{path}.keystone")
        return cls(
            cpi_s=cpis,
            batch_len=batch,
            max_delay_s=_number(_take(d, "max_delay_s", path), f"{path}.max_delay_s", nonneg=True),
            min_delay_s=_number(d.get("min_delay_s", 0.0), f"{path}.min_delay_s", nonneg=True),
            hop_s=None if hop is None else _number(hop, f"{path}.hop_s", positive=True),
            chirp_grid=GridSpec.from_dict(
                d.get("chirp_grid", {"start_hz_per_s": 0.0, "stop_hz_per_s": 0.0, "count": 1}),
                f"{path}.chirp_grid", 2),
            jerk_grid=GridSpec.from_dict(
                d.get("jerk_grid", {"start_hz_per_s2": 0.0, "stop_hz_per_s2": 0.0, "count": 1}),
                f"{path}.jerk_grid", 3),
            keystone=keystone_on,
            window=_window_name(d.get("window", "hann"), f"{path}.window"),
            max_surfaces=max_surfaces,
            threshold_db=_number(d.get("threshold_db", DEFAULT_THRESHOLD_DB),
                                 f"{path}.threshold_db"),
        )

    def to_dict(self) -> dict:
        d = {"cpi_s": list(self.cpi_s), "batch_len": self.batch_len,
             "max_delay_s": self.max_delay_s, "min_delay_s": self.min_delay_s,
             "chirp_grid": self.chirp_grid.to_dict(2), "jerk_grid": self.jerk_grid.to_dict(3),
             "keystone": self.keystone, "window": self.window,
             "max_surfaces": self.max_surfaces, "threshold_db": self.threshold_db}
        if self.hop_s is not None:
            d["hop_s"] = self.hop_s
        return d


@dataclass(frozen=True)
class SyncFault:
    """Clock and oscillator errors injected into the reference recording.

    A 50 ms stationary transient echo (the meteor-like event) is placed in
    the surveillance channel for coarse alignment.
    """

    time_offset_s: float
    freq_offset_hz: float
    event_time_s: float
    event_duration_s: float = 0.05
    event_delay_s: float = 5e-4
    event_snr_db: float = 10.0
    search_span_s: float = 5.0

    @classmethod
    def from_dict(cls, d: dict, path="sync_fault") -> "SyncFault":
        if not isinstance(d, dict):
            raise ValidationError("expected an object", path)
        names = [f for f in cls.__dataclass_fields__]
        _no_extra(d, set(names), path)
        kwargs = {}
        for name in names:
            if name in d:
                kwargs[name] = _number(d[name], f"{path}.{name}")
        for required in ("time_offset_s", "freq_offset_hz", "event_time_s"):
            _take(d, required, path)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _trajectory_from_dict(d: dict, path="trajectory"):
    if not isinstance(d, dict):
        raise ValidationError("expected an object", path)
    kind = _take(d, "type", path)
    try:
        if kind == "polynomial":
            _no_extra(d, {"type", "coefficients_m"}, path)
            return PolynomialTrajectory(tuple(map(tuple, _take(d, "coefficients_m", path))))
        if kind == "circular_orbit":
            keys = {"altitude_m", "ground_track_offset_m", "heading_deg", "phase_at_epoch_rad"}
            _no_extra(d, keys | {"type"}, path)
            kwargs = {k: _number(d[k], f"{path}.{k}") for k in keys if k in d}
            _take(d, "altitude_m", path)
            return CircularOrbit(**kwargs)
    except ValidationError as exc:
        if exc.field and not exc.field.startswith(path):
            raise ValidationError(exc.detail, f"{path}.{exc.field}") from None
        raise
    except TypeError as exc:
        raise ValidationError(str(exc), path) from None
    raise ValidationError(f"unknown trajectory type {kind!r}", f"{path}.type")


def _trajectory_to_dict(traj) -> dict:
    if isinstance(traj, PolynomialTrajectory):
        return {"type": "polynomial", "coefficients_m": [list(c) for c in traj.coefficients_m]}
    return {"type": "circular_orbit", "altitude_m": traj.altitude_m,
            "ground_track_offset_m": traj.ground_track_offset_m,
            "heading_deg": traj.heading_deg, "phase_at_epoch_rad": traj.phase_at_epoch_rad}


@dataclass(frozen=True)
class Scenario:
    name: str
    tx: Site
    rx: Site
    trajectory: object
    carrier_hz: float
    bandwidth_hz: float
    sample_rate_hz: float
    duration_s: float
    rcs_amplitude: float
    snr_db: float
    seed: int
    processing: Processing
    start_s: float = 0.0
    sync_fault: SyncFault | None = None
    streams: dict | None = None

    KEYS = {"name", "sites", "trajectory", "carrier_hz", "bandwidth_hz", "sample_rate_hz",
            "duration_s", "start_s", "target", "noise", "seed", "processing", "sync_fault",
            "streams"}

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "Scenario":
        if not isinstance(d, dict):
            raise ValidationError("scenario must be a JSON object")
        _no_extra(d, cls.KEYS, "")
        sites = _take(d, "sites", "")
        if not isinstance(sites, dict):
            raise ValidationError("expected an object", "sites")
        _no_extra(sites, {"tx", "rx"}, "sites")
        parsed_sites = []
        for key in ("tx", "rx"):
            site = _take(sites, key, "sites")
            if not isinstance(site, dict):
                raise ValidationError("expected an object", f"sites.{key}")
            _no_extra(site, {"position_m"}, f"sites.{key}")
            try:
                parsed_sites.append(Site(tuple(_take(site, "position_m", f"sites.{key}"))))
            except (ValidationError, TypeError):
                raise ValidationError("need three finite components",
                                      f"sites.{key}.position_m") from None
        target = d.get("target", {})
        _no_extra(target, {"rcs_amplitude"}, "target")
        noise = d.get("noise", {})
        _no_extra(noise, {"snr_db"}, "noise")
        seed = _take(d, "seed", "")
        if not isinstance(seed, int) or seed < 0:
            raise ValidationError("must be a non-negative integer", "seed")
        snr = noise.get("snr_db", float("inf"))
        snr = float("inf") if snr is None else _number(snr, "noise.snr_db")
        streams = d.get("streams")
        if streams is not None:
            if not isinstance(streams, dict) or set(streams) != {"reference", "surveillance"}:
                raise ValidationError("needs exactly reference and surveillance paths", "streams")
            if base_dir is not None:
                streams = {k: str((base_dir / v).resolve()) for k, v in streams.items()}
        sc = cls(
            name=str(d.get("name", "scenario")),
            tx=parsed_sites[0],
            rx=parsed_sites[1],
            trajectory=_trajectory_from_dict(_take(d, "trajectory", "")),
            carrier_hz=_number(_take(d, "carrier_hz", ""), "carrier_hz", positive=True),
            bandwidth_hz=_number(_take(d, "bandwidth_hz", ""), "bandwidth_hz", positive=True),
            sample_rate_hz=_number(_take(d, "sample_rate_hz", ""), "sample_rate_hz", positive=True),
            duration_s=_number(_take(d, "duration_s", ""), "duration_s", positive=True),
            start_s=_number(d.get("start_s", 0.0), "start_s"),
            rcs_amplitude=_number(target.get("rcs_amplitude", 1.0), "target.rcs_amplitude",
                                  nonneg=True),
            snr_db=snr,
            seed=seed,
            processing=Processing.from_dict(_take(d, "processing", "")),
            sync_fault=None if d.get("sync_fault") is None else SyncFault.from_dict(d["sync_fault"]),
            streams=streams,
        )
        sc.validate_static()
        return sc

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"not valid JSON ({exc})", str(path)) from None
        return cls.from_dict(data, base_dir=path.parent)

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "sites": {"tx": {"position_m": list(self.tx.position_m)},
                      "rx": {"position_m": list(self.rx.position_m)}},
            "trajectory": _trajectory_to_dict(self.trajectory),
            "carrier_hz": self.carrier_hz,
            "bandwidth_hz": self.bandwidth_hz,
            "sample_rate_hz": self.sample_rate_hz,
            "duration_s": self.duration_s,
            "start_s": self.start_s,
            "target": {"rcs_amplitude": self.rcs_amplitude},
            "noise": {"snr_db": None if np.isposinf(self.snr_db) else self.snr_db},
            "seed": self.seed,
            "processing": self.processing.to_dict(),
            "sync_fault": None if self.sync_fault is None else self.sync_fault.to_dict(),
        }
        if self.streams is not None:
            d["streams"] = dict(self.streams)
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @property
    def wavelength_m(self) -> float:
        return wavelength(self.carrier_hz)

    @property
    def batch_duration_s(self) -> float:
        return self.processing.batch_len / self.sample_rate_hz

    def n_batches(self, cpi_s: float) -> int:
        return int(round(cpi_s / self.batch_duration_s))

    def validate_static(self):
        """Checks that need no synthesis."""
        p = self.processing
        if self.bandwidth_hz > self.sample_rate_hz:
            raise ValidationError("exceeds sample_rate_hz", "bandwidth_hz")
        for cpi in p.cpi_s:
            batches = cpi / self.batch_duration_s
            if abs(batches - round(batches)) > 1e-6 or round(batches) < 2:
                raise ValidationError(
                    f"CPI {cpi} s is not a whole number (>= 2) of {p.batch_len}-sample batches",
                    "processing.cpi_s")
            if cpi > self.duration_s:
                raise ValidationError(f"CPI {cpi} s longer than duration_s", "processing.cpi_s")
        if p.min_delay_s > p.max_delay_s:
            raise ValidationError("exceeds max_delay_s", "processing.min_delay_s")
        total = max(len(p.chirp_grid.axis(c, 2, self.wavelength_m)) for c in p.cpi_s) * max(
            len(p.jerk_grid.axis(c, 3, self.wavelength_m)) for c in p.cpi_s)
        if total > p.max_surfaces:
            raise ResourceLimitError(
                f"hypothesis grid needs {total} surfaces per CPI, cap is {p.max_surfaces}")
        if self.sync_fault is not None:
            sf = self.sync_fault
            if not self.start_s <= sf.event_time_s <= self.start_s + self.duration_s - sf.event_duration_s:
                raise ValidationError("event must lie inside the stream", "sync_fault.event_time_s")

    def cpi_centres(self) -> np.ndarray:
        """Common CPI centre times shared by every CPI length."""
        p = self.processing
        longest = max(p.cpi_s)
        hop = p.hop_s if p.hop_s is not None else min(p.cpi_s)
        # centres sit on multiples of the hop so runs with different spans line up
        earliest = self.start_s + p.max_delay_s + longest / 2
        latest = self.start_s + self.duration_s - longest / 2
        k0 = int(np.ceil(earliest / hop - 1e-9))
        k1 = int(np.floor(latest / hop + 1e-9))
        if k1 < k0:
            raise ValidationError("duration too short for the longest CPI", "duration_s")
        return hop * np.arange(k0, k1 + 1)

    def truth(self, times) -> object:
        return observables(self.tx, self.rx, self.trajectory, np.atleast_1d(times),
                           self.carrier_hz)

    def validate_kinematics(self):
        """Checks against the target's truth over the processed span."""
        p = self.processing
        t = np.linspace(self.start_s, self.start_s + self.duration_s, 2001)
        obs = self.truth(t)
        check_doppler_extent(obs.doppler_hz, self.batch_duration_s)
        centres = self.cpi_centres()
        lo, hi = centres[0] - max(p.cpi_s) / 2, centres[-1] + max(p.cpi_s) / 2
        inside = (t >= lo) & (t <= hi)
        delays = obs.delay_s[inside]
        if delays.min() < p.min_delay_s or delays.max() > p.max_delay_s:
            raise ValidationError(
                f"target delay spans [{delays.min():.6g}, {delays.max():.6g}] s, outside the "
                f"processed window [{p.min_delay_s}, {p.max_delay_s}] s", "processing.max_delay_s")




@dataclass
class Streams:
    reference: ComplexBaseband
    surveillance: ComplexBaseband
    # unsynchronised reference as recorded, present when a sync fault is configured
    recorded_reference: ComplexBaseband | None = None


def _target_echo(sc: Scenario, waveform: ComplexBaseband, n_lead: int, n: int) -> np.ndarray:
    """Target echo over the ``n`` stream samples; ``waveform`` starts ``n_lead`` earlier."""
    fs = sc.sample_rate_hz
    t_first = waveform.epoch_s
    t_last = t_first + (n_lead + n - 1) / fs
    # the range spline is cubic Hermite, so a coarse knot spacing is plenty
    t_grid = np.linspace(t_first, t_last, max(4, int(np.ceil((t_last - t_first) * 50)) + 1))
    hist = render_phase_history(sc.truth(t_grid), fs, sc.rcs_amplitude, t_first, n_lead + n)
    # only the lead-in samples may reach back before the waveform start, and they are dropped
    if np.max(hist.delay_s[n_lead:]) * fs > n_lead:
        raise ValidationError("target delay exceeds the synthesized lead-in",
                              "processing.max_delay_s")
    return synthesize_echo(waveform, hist, allow_partial=True).samples[n_lead:].copy()


def _faulted_reference(wave: np.ndarray, base: int, n_rec: int, fs: float,
                       fault: SyncFault) -> np.ndarray:
    """``true(t - dt) * exp(2j pi df t)`` with ``wave[base]`` the true sample at the stream start."""
    shift = fault.time_offset_s * fs
    whole = int(np.floor(shift))
    lo = base - whole
    if lo < 0:
        raise ValidationError("not enough waveform history for the offset", "sync_fault.time_offset_s")
    seg = np.zeros(n_rec, np.complex128)
    avail = min(n_rec, wave.size - lo)
    seg[:avail] = wave[lo:lo + avail]
    if shift != whole:
        seg = fractional_delay(seg, shift - whole)
    return seg * np.exp(2j * np.pi * fault.freq_offset_hz * np.arange(n_rec) / fs)


def synthesize_streams(sc: Scenario) -> Streams:
    """Clean reference, noisy surveillance and, with a sync fault, the recorded reference.

    The illuminator has unit power and the surveillance noise power is
    ``10**(-snr_db/10)``, so the per-sample echo SNR is
    ``snr_db + 20 log10(rcs_amplitude)``.
    """
    fs = sc.sample_rate_hz
    n = int(round(sc.duration_s * fs))
    fault = sc.sync_fault
    max_delay = max(sc.processing.max_delay_s, fault.event_delay_s if fault else 0.0)
    n_lead = int(np.ceil((max_delay + LEAD_IN_S) * fs))
    n_back = 0
    n_rec = n
    if fault is not None:
        n_back = max(0, int(np.ceil(fault.time_offset_s * fs)) + 1)
        n_rec = n + n_back
    n_total = n_back + n_lead + n
    wave = make_fm_surrogate(n_total / fs, sc.bandwidth_hz, fs, sc.seed, sc.carrier_hz,
                             sc.start_s - (n_back + n_lead) / fs)
    noise_seed = int(np.random.default_rng([sc.seed, 1]).integers(2**63))
    local = wave.slice(n_back, n_total)

    surv = _target_echo(sc, local, n_lead, n)
    if fault is not None:
        i0 = int(round((fault.event_time_s - sc.start_s) * fs))
        i1 = i0 + int(round(fault.event_duration_s * fs))
        d = int(round(fault.event_delay_s * fs))
        noise_db = sc.snr_db if np.isfinite(sc.snr_db) else 0.0
        amp = 10 ** ((fault.event_snr_db - noise_db) / 20)
        surv[i0:i1] += amp * local.samples[n_lead + i0 - d:n_lead + i1 - d]
    surveillance = add_noise(ComplexBaseband(surv, fs, sc.carrier_hz, sc.start_s),
                             sc.snr_db, noise_seed, signal_power=1.0)
    reference = local.slice(n_lead, n_lead + n)
    recorded = None
    if fault is not None:
        rec = _faulted_reference(wave.samples, n_back + n_lead, n_rec, fs, fault)
        recorded = ComplexBaseband(rec, fs, sc.carrier_hz, sc.start_s)
    return Streams(reference, surveillance, recorded)


def _cache_file(sc: Scenario) -> Path | None:
    root = os.environ.get(CACHE_ENV)
    if not root:
        return None
    key = hashlib.sha256((__version__ + sc.canonical_json()).encode()).hexdigest()[:32]
    return Path(root) / f"streams_{key}.npz"


def load_streams(sc: Scenario) -> Streams:
    """Streams from files, the cache directory, or fresh synthesis."""
    if sc.streams is not None:
        ref = read_stream(sc.streams["reference"])
        surv = read_stream(sc.streams["surveillance"])
        for s, name in ((ref, "reference"), (surv, "surveillance")):
            if s.sample_rate_hz != sc.sample_rate_hz:
                raise ValidationError("sample rate disagrees with sample_rate_hz",
                                      f"streams.{name}")
        n = min(len(ref), len(surv))
        if sc.sync_fault is not None:
            return Streams(ref.slice(0, n), surv.slice(0, n), ref)
        return Streams(ref.slice(0, n), surv.slice(0, n))
    cache = _cache_file(sc)
    if cache is not None and cache.exists():
        with np.load(cache) as z:
            meta = (sc.sample_rate_hz, sc.carrier_hz, sc.start_s)
            rec = z["recorded"] if "recorded" in z.files else None
            return Streams(ComplexBaseband(z["reference"], *meta),
                           ComplexBaseband(z["surveillance"], *meta),
                           None if rec is None else ComplexBaseband(rec, *meta))
    streams = synthesize_streams(sc)
    if cache is not None:
        cache.parent.mkdir(parents=True, exist_ok=True)
        arrays = {"reference": streams.reference.samples,
                  "surveillance": streams.surveillance.samples}
        if streams.recorded_reference is not None:
            arrays["recorded"] = streams.recorded_reference.samples
        tmp = cache.with_suffix(".tmp.npz")
        np.savez(tmp, **arrays)
        os.replace(tmp, cache)
    return streams


def cpi_label(cpi_s: float) -> str:
    return f"cpi_{cpi_s:g}s"


@dataclass(frozen=True)
class CpiResult:
    cpi_s: float
    t_center_s: float
    detection: Detection
    surface: object = None


def process_cpi(sc: Scenario, streams: Streams, cpi_s: float, t_center_s: float, *,
                reference: ComplexBaseband | None = None, min_delay_s: float | None = None,
                keep_surface: bool = False, workers: int | None = None) -> CpiResult:
    """Compress, compensate and sweep hypotheses for one CPI centred at ``t_center_s``."""
    p = sc.processing
    fs = sc.sample_rate_hz
    ref = streams.reference if reference is None else reference
    n_batches = sc.n_batches(cpi_s)
    start = int(round((t_center_s - cpi_s / 2 - streams.surveillance.epoch_s) * fs))
    stack = compress(ref, streams.surveillance, p.max_delay_s, p.batch_len,
                     min_delay_s=p.min_delay_s if min_delay_s is None else min_delay_s,
                     start_sample=start, n_batches=n_batches, workers=workers)
    if p.keystone:
        stack = keystone(stack, workers=workers)
    lam = sc.wavelength_m
    surfaces = iter_hypotheses(stack, p.chirp_grid.axis(cpi_s, 2, lam),
                               p.jerk_grid.axis(cpi_s, 3, lam), p.window, p.max_surfaces,
                               workers)
    best, best_surface = None, None
    for idx, surface in enumerate(surfaces):
        det = detect(surface, surface_id=idx)
        if best is None or det.snr_db > best.snr_db:
            best = det
            best_surface = surface if keep_surface else None
    return CpiResult(cpi_s, float(t_center_s), best, best_surface)


def _predicted(sc: Scenario, t_center_s: float) -> tuple:
    obs = sc.truth([t_center_s])
    return float(obs.delay_s[0]), float(obs.doppler_hz[0])


def run_sync(sc: Scenario, streams: Streams, event_window_s: tuple | None = None,
             search_span_s: float | None = None, workers: int | None = None) -> dict:
    """Coarse event alignment, fine alignment on one CPI, then a closed-loop check.

    The event window and search span default to the scenario's sync fault.
    """
    fault = sc.sync_fault
    recorded = streams.recorded_reference
    if recorded is None:
        recorded = streams.reference
    n = len(streams.surveillance)
    if event_window_s is None or search_span_s is None:
        if fault is None:
            raise ValidationError("needs an event window and search span", "sync_fault")
        event_window_s = (fault.event_time_s, fault.event_time_s + fault.event_duration_s)
        search_span_s = fault.search_span_s
    coarse = coarse_align(streams.surveillance, recorded, tuple(event_window_s), search_span_s)

    def corrected(sol: SyncSolution) -> ComplexBaseband:
        return apply_correction(recorded, sol).slice(0, n)

    cpi = min(sc.processing.cpi_s)
    centres = sc.cpi_centres()
    t_c = float(centres[len(centres) // 2])
    predicted = _predicted(sc, t_c)
    first = process_cpi(sc, streams, cpi, t_c, reference=corrected(coarse), min_delay_s=0.0,
                        workers=workers).detection
    fine = fine_align(first, predicted)
    total = coarse.then(fine)
    after = process_cpi(sc, streams, cpi, t_c, reference=corrected(total), min_delay_s=0.0,
                        workers=workers).detection
    checked = closed_loop_residual(total, after, predicted, 1.0 / sc.sample_rate_hz)
    return {
        "injected": None if fault is None else {"time_offset_s": fault.time_offset_s,
                                                "freq_offset_hz": fault.freq_offset_hz},
        "coarse": coarse.to_dict(),
        "fine": fine.to_dict(),
        "solution": checked.to_dict(),
        "cpi_s": cpi,
        "t_center_s": t_c,
        "predicted": {"delay_s": predicted[0], "doppler_hz": predicted[1]},
        "measured_before": {"delay_s": first.delay_s, "doppler_hz": first.doppler_hz},
        "measured_after": {"delay_s": after.delay_s, "doppler_hz": after.doppler_hz},
    }


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def run(sc: Scenario, out_dir, threads: int = 1, dump_surfaces: bool = False) -> dict:
    """Process every CPI length over the common centre grid and write the run directory.

    Returns the manifest. Outputs are identical for identical configs,
    whatever ``threads`` is.
    """
    sc.validate_kinematics()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    streams = load_streams(sc)
    centres = sc.cpi_centres()
    p = sc.processing
    tasks = [(cpi, float(t)) for t in centres for cpi in p.cpi_s]

    def work(task):
        return process_cpi(sc, streams, task[0], task[1], keep_surface=dump_surfaces)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]

    outputs = ["detections.csv", "snr_vs_time.csv", "chirp_vs_time.csv"]
    write_detections(out / "detections.csv", [r.detection for r in results])
    by_key = {(r.cpi_s, r.t_center_s): r.detection for r in results}
    truth = sc.truth(centres)
    labels = [cpi_label(c) for c in p.cpi_s]
    with open(out / "snr_vs_time.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_center_s", *labels])
        for t in centres:
            w.writerow([_fmt(t), *(_fmt(by_key[(c, float(t))].snr_db) for c in p.cpi_s)])
    with open(out / "chirp_vs_time.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_center_s", "truth_chirp_hz_per_s", *labels])
        for t, rate in zip(centres, truth.chirp_hz_per_s):
            row = [_fmt(t), _fmt(DopplerHypothesis.from_doppler_derivatives(rate).chirp_hz_per_s)]
            for c in p.cpi_s:
                det = by_key[(c, float(t))]
                row.append(_fmt(det.chirp_hz_per_s) if det.snr_db >= p.threshold_db else "")
            w.writerow(row)
    if dump_surfaces:
        sdir = out / "surfaces"
        sdir.mkdir(exist_ok=True)
        for r in results:
            index = int(np.argmin(np.abs(centres - r.t_center_s)))
            name = f"{cpi_label(r.cpi_s)}_{index:04d}.ambs"
            write_surface(sdir / name, r.surface)
            outputs.append(f"surfaces/{name}")
    if sc.sync_fault is not None:
        report = run_sync(sc, streams)
        (out / "sync.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        outputs.append("sync.json")
    manifest = {
        "software": "pbradar",
        "version": __version__,
        "config_sha256": sc.config_hash(),
        "config": sc.to_dict(),
        "n_cpi_centres": int(centres.size),
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
