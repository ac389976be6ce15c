"""Solar position from time and place.

Implements the Astronomical Almanac low-precision algorithm (Michalsky,
Solar Energy 40(3), 1988): apparent topocentric azimuth/elevation good
to about 0.01 degrees over 1950-2050. No atmospheric refraction is
applied here; refraction is injected as a simulator disturbance where
wanted.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass

import numpy as np

from .geometry import azel_to_direction

# Default site: Plataforma Solar de Almeria central tower field.
PSA_LATITUDE_DEG = 37.09
PSA_LONGITUDE_DEG = -2.36


class OutOfEpoch(ValueError):
    """Timestamp outside the algorithm's 1950-2050 validity window."""


@dataclass(frozen=True)
class GeoTime:
    """Geographic location plus a UTC instant (POSIX seconds)."""

    latitude_deg: float
    longitude_deg: float
    timestamp: float

    def __post_init__(self):
        if abs(self.latitude_deg) > 90.0:
            raise ValueError(f"latitude {self.latitude_deg} out of range")
        if abs(self.longitude_deg) > 180.0:
            raise ValueError(f"longitude {self.longitude_deg} out of range")

    @classmethod
    def from_iso(cls, latitude_deg: float, longitude_deg: float, iso: str) -> "GeoTime":
        t = dt.datetime.fromisoformat(iso.replace("Z", "+00:00"))
        if t.tzinfo is None:
            t = t.replace(tzinfo=dt.timezone.utc)
        return cls(latitude_deg, longitude_deg, t.timestamp())

    def shifted(self, seconds: float) -> "GeoTime":
        return GeoTime(self.latitude_deg, self.longitude_deg, self.timestamp + seconds)


@dataclass(frozen=True)
class SunPosition:
    """Apparent topocentric sun position (no refraction)."""

    azimuth_deg: float  # clockwise from North
    elevation_deg: float

    @property
    def direction(self) -> np.ndarray:
        """Unit vector toward the sun in the world ENU frame."""
        return azel_to_direction(self.azimuth_deg, self.elevation_deg)

    @property
    def above_horizon(self) -> bool:
        return self.elevation_deg > 0.0


def sun_direction(gt: GeoTime) -> SunPosition:
    """Apparent topocentric sun azimuth/elevation for a GeoTime.

    Raises:
        OutOfEpoch: if the timestamp's UTC year is outside 1950-2050.
    """
    t = dt.datetime.fromtimestamp(gt.timestamp, tz=dt.timezone.utc)
    if not (1950 <= t.year <= 2050):
        raise OutOfEpoch(f"year {t.year} outside supported range 1950-2050")

    # Days from J2000.0 epoch (JD 2451545.0); unix epoch is JD 2440587.5.
    n = gt.timestamp / 86400.0 + 2440587.5 - 2451545.0
    ut_hours = (t.hour + t.minute / 60.0 + t.second / 3600.0
                + t.microsecond / 3.6e9)

    mean_long = (280.460 + 0.9856474 * n) % 360.0
    mean_anom = math.radians((357.528 + 0.9856003 * n) % 360.0)
    ecl_long = math.radians(
        (mean_long + 1.915 * math.sin(mean_anom)
         + 0.020 * math.sin(2.0 * mean_anom)) % 360.0
    )
    obliquity = math.radians(23.439 - 4.0e-7 * n)

    ra = math.atan2(math.cos(obliquity) * math.sin(ecl_long), math.cos(ecl_long))
    dec = math.asin(math.sin(obliquity) * math.sin(ecl_long))

    gmst_hours = (6.697375 + 0.0657098242 * n + ut_hours) % 24.0
    lmst_rad = math.radians(((gmst_hours + gt.longitude_deg / 15.0) % 24.0) * 15.0)
    hour_angle = lmst_rad - ra
    hour_angle = (hour_angle + math.pi) % (2.0 * math.pi) - math.pi

    lat = math.radians(gt.latitude_deg)
    sin_el = (math.sin(dec) * math.sin(lat)
              + math.cos(dec) * math.cos(lat) * math.cos(hour_angle))
    el = math.asin(max(-1.0, min(1.0, sin_el)))

    # atan2 of (sin az, cos az) scaled by the common positive factor cos(el).
    az = math.atan2(
        -math.cos(dec) * math.sin(hour_angle),
        (math.sin(dec) - math.sin(el) * math.sin(lat)) / max(math.cos(lat), 1e-12),
    )

    # Horizontal parallax: the sun is observed from the surface, not the
    # geocenter (about 8.8 arcsec at the horizon).
    el -= math.radians(8.794 / 3600.0) * math.cos(el)

    return SunPosition(
        azimuth_deg=math.degrees(az) % 360.0,
        elevation_deg=math.degrees(el),
    )
