"""Bistatic scene description and target kinematics.

Positions are local ENU metres. Delays are referenced to the direct
transmitter-to-receiver path, and Doppler is positive for a closing target:
``doppler = -(1/wavelength) * d(bistatic_range)/dt``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .errors import GeometryError, ValidationError
from .signal_core import PhaseHistory

SPEED_OF_LIGHT = 299_792_458.0
EARTH_RADIUS_M = 6_371_000.0
EARTH_MU = 3.986004418e14


def wavelength(carrier_hz: float) -> float:
    return SPEED_OF_LIGHT / carrier_hz


def chirp_from_acceleration(acceleration_m_s2: float, wavelength_m: float) -> float:
    """Dechirp rate for an acceleration hypothesis, ``c_r = a / wavelength``."""
    return acceleration_m_s2 / wavelength_m


def acceleration_from_chirp(chirp_hz_per_s: float, wavelength_m: float) -> float:
    return chirp_hz_per_s * wavelength_m


@dataclass(frozen=True)
class Site:
    position_m: tuple

    def __post_init__(self):
        pos = tuple(float(v) for v in self.position_m)
        if len(pos) != 3 or not all(np.isfinite(pos)):
            raise ValidationError("need three finite components", "position_m")
        object.__setattr__(self, "position_m", pos)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.position_m)


@dataclass(frozen=True)
class PolynomialTrajectory:
    """``p(t) = p0 + p1*t + p2*t**2 + p3*t**3``; missing terms are zero."""

    coefficients_m: tuple

    def __post_init__(self):
        coeffs = tuple(tuple(float(v) for v in c) for c in self.coefficients_m)
        if not 1 <= len(coeffs) <= 4 or any(len(c) != 3 for c in coeffs):
            raise ValidationError("need 1 to 4 three-vectors", "coefficients_m")
        if not np.all(np.isfinite(coeffs)):
            raise ValidationError("coefficients must be finite", "coefficients_m")
        object.__setattr__(self, "coefficients_m", coeffs)

    def kinematics(self, t):
        """Position and its first three time derivatives, each ``(n, 3)``."""
        t = np.asarray(t, dtype=np.float64)[:, None]
        c = np.zeros((4, 3))
        c[: len(self.coefficients_m)] = self.coefficients_m
        pos = c[0] + c[1] * t + c[2] * t**2 + c[3] * t**3
        vel = c[1] + 2 * c[2] * t + 3 * c[3] * t**2
        acc = 2 * c[2] + 6 * c[3] * t
        jerk = np.broadcast_to(6 * c[3], pos.shape)
        return pos, vel, acc, jerk


@dataclass(frozen=True)
class CircularOrbit:
    """Planar circular orbit over a spherical, non-rotating Earth.

    The local origin sits on the Earth's surface with the Earth centre at
    ``(0, 0, -R_e)``. The ground track is a great circle whose closest point
    to the origin lies ``ground_track_offset_m`` (surface distance) to the
    left of the direction of motion; ``heading_deg`` is the azimuth of motion
    at that point (0 = north/+y, 90 = east/+x). ``phase_at_epoch_rad`` is the
    orbital angle past that closest point at ``t = 0``.
    """

    altitude_m: float
    ground_track_offset_m: float = 0.0
    heading_deg: float = 90.0
    phase_at_epoch_rad: float = 0.0

    def __post_init__(self):
        if not 100e3 < self.altitude_m < 2000e3:
            raise ValidationError("LEO altitude must lie in (100 km, 2000 km)", "altitude_m")
        for name in ("ground_track_offset_m", "heading_deg", "phase_at_epoch_rad"):
            if not np.isfinite(getattr(self, name)):
                raise ValidationError("must be finite", name)

    @property
    def radius_m(self) -> float:
        return EARTH_RADIUS_M + self.altitude_m

    @property
    def angular_rate(self) -> float:
        return float(np.sqrt(EARTH_MU / self.radius_m**3))

    @property
    def speed_m_s(self) -> float:
        return float(np.sqrt(EARTH_MU / self.radius_m))

    @property
    def closest_approach_time_s(self) -> float:
        return -self.phase_at_epoch_rad / self.angular_rate

    def _basis(self):
        az = np.deg2rad(self.heading_deg)
        along = np.array([np.sin(az), np.cos(az), 0.0])
        left = np.array([-along[1], along[0], 0.0])
        beta = self.ground_track_offset_m / EARTH_RADIUS_M
        radial = np.cos(beta) * np.array([0.0, 0.0, 1.0]) + np.sin(beta) * left
        return radial, along

    def kinematics(self, t):
        t = np.asarray(t, dtype=np.float64)[:, None]
        radial, along = self._basis()
        w = self.angular_rate
        r = self.radius_m
        theta = self.phase_at_epoch_rad + w * t
        cos, sin = np.cos(theta), np.sin(theta)
        centre = np.array([0.0, 0.0, -EARTH_RADIUS_M])
        pos = centre + r * (cos * radial + sin * along)
        vel = r * w * (-sin * radial + cos * along)
        acc = -(w**2) * (pos - centre)
        jerk = -(w**2) * vel
        return pos, vel, acc, jerk


def _leg(u, du, ddu, dddu):
    """Length of ``u(t)`` and its first three derivatives."""
    r = np.linalg.norm(u, axis=1)
    if np.any(r < 1e-6):
        raise GeometryError("target coincides with a site")
    dr = np.einsum("ij,ij->i", u, du) / r
    ddr = (np.einsum("ij,ij->i", du, du) + np.einsum("ij,ij->i", u, ddu) - dr**2) / r
    dddr = (3 * np.einsum("ij,ij->i", du, ddu) + np.einsum("ij,ij->i", u, dddu)
            - 3 * dr * ddr) / r
    return r, dr, ddr, dddr


@dataclass(frozen=True, eq=False)
class BistaticObservables:
    t_s: np.ndarray
    range_m: np.ndarray
    range_rate_m_s: np.ndarray
    delay_s: np.ndarray
    doppler_hz: np.ndarray
    chirp_hz_per_s: np.ndarray
    jerk_hz_per_s2: np.ndarray
    lambda_m: float
    baseline_m: float


def observables(tx: Site, rx: Site, traj, t_grid, carrier_hz: float) -> BistaticObservables:
    """Bistatic range, delay, Doppler and its first two rates on ``t_grid``.

    ``chirp_hz_per_s`` and ``jerk_hz_per_s2`` here are the first and second
    time derivatives of the Doppler frequency; all derivatives are closed
    form for both trajectory types.
    """
    t = np.asarray(t_grid, dtype=np.float64)
    if t.ndim != 1 or t.size < 1:
        raise ValidationError("need a 1-D time grid", "t_grid")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValidationError("must be strictly increasing", "t_grid")
    if not carrier_hz > 0:
        raise ValidationError("must be positive", "carrier_hz")
    lam = wavelength(carrier_hz)
    pos, vel, acc, jerk = traj.kinematics(t)
    total = [np.zeros_like(t) for _ in range(4)]
    for site in (tx, rx):
        for acc_total, part in zip(total, _leg(pos - site.vector, vel, acc, jerk)):
            acc_total += part
    rng, rdot, rddot, rdddot = total
    baseline = float(np.linalg.norm(tx.vector - rx.vector))
    return BistaticObservables(
        t_s=t,
        range_m=rng,
        range_rate_m_s=rdot,
        delay_s=(rng - baseline) / SPEED_OF_LIGHT,
        doppler_hz=-rdot / lam,
        chirp_hz_per_s=-rddot / lam,
        jerk_hz_per_s2=-rdddot / lam,
        lambda_m=lam,
        baseline_m=baseline,
    )


def render_phase_history(obs: BistaticObservables, sample_rate_hz: float, rcs_amplitude: float,
                         t0: float | None = None, n_samples: int | None = None) -> PhaseHistory:
    """Resample observables onto a sample clock for echo synthesis.

    Range is interpolated with a cubic Hermite spline whose slopes are the
    range rates, so the echo's discrete Doppler follows ``obs.doppler_hz``.
    The span defaults to the whole observable grid.
    """
    t_obs = obs.t_s
    if t_obs.size < 2:
        raise ValidationError("need at least two observable instants", "obs")
    if t0 is None:
        t0 = float(t_obs[0])
    if n_samples is None:
        n_samples = int(np.floor((t_obs[-1] - t0) * sample_rate_hz)) + 1
    t = t0 + np.arange(n_samples) / sample_rate_hz
    tol = 1e-9 * max(1.0, abs(t_obs[-1]))
    if t[0] < t_obs[0] - tol or t[-1] > t_obs[-1] + tol:
        raise ValidationError(
            f"sample span [{t[0]}, {t[-1]}] s outside observable grid "
            f"[{t_obs[0]}, {t_obs[-1]}] s", "obs")
    spline = CubicHermiteSpline(t_obs, obs.range_m - obs.baseline_m, obs.range_rate_m_s)
    excess = spline(np.clip(t, t_obs[0], t_obs[-1]))
    return PhaseHistory(
        delay_s=np.maximum(excess, 0.0) / SPEED_OF_LIGHT,
        phase_cycles=-excess / obs.lambda_m,
        amplitude=np.full(n_samples, float(rcs_amplitude)),
    )
