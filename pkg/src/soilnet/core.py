"""Domain types and numerics: gravimetric water content, sensor calibration,
temperature decode.

All functions here are pure; no I/O, no shared state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class Channel(str, Enum):
    MOISTURE_VOLTAGE = "moisture"
    TEMPERATURE_C = "temperature"


# Physical sensor ranges used for gateway-side validation.
MOISTURE_VOLT_RANGE = (0.0, 3.3)
TEMPERATURE_C_RANGE = (-55.0, 125.0)

# Depths (cm) used by the reference field deployment.
STANDARD_DEPTHS_CM = (5, 15, 50, 100)


def channel_range(channel: Channel) -> tuple[float, float]:
    if channel is Channel.MOISTURE_VOLTAGE:
        return MOISTURE_VOLT_RANGE
    return TEMPERATURE_C_RANGE


def value_in_range(channel: Channel, value: float) -> bool:
    lo, hi = channel_range(channel)
    return math.isfinite(value) and lo <= value <= hi


@dataclass(frozen=True)
class RawReading:
    """One timestamped sensor sample (volts for moisture, °C for temperature).

    ``timestamp`` is unix seconds, UTC, second resolution. ``seq`` increases
    strictly within each (profile_id, depth_cm, channel) stream.
    """

    profile_id: str
    depth_cm: int
    channel: Channel
    value: float
    timestamp: int
    seq: int


class NonPositiveDryMass(ValueError):
    pass


class NegativeWater(ValueError):
    pass


@dataclass(frozen=True)
class GravimetricSample:
    """Oven-dry calibration sample: wet/dry masses plus densities."""

    mass_wet_g: float
    mass_dry_g: float
    bulk_density_g_cm3: float
    water_density_g_cm3: float = 1.0
    site_tag: str = ""
    depth_cm: int = 0


def gravimetric_vwc(sample: GravimetricSample) -> float:
    """Volumetric water content (dimensionless fraction) from an oven-dried
    soil sample: ((m_wet - m_dry) / m_dry) * (rho_bulk / rho_water).

    Multiply by 100 for percent.
    """
    if sample.mass_dry_g <= 0:
        raise NonPositiveDryMass(f"dry mass must be > 0, got {sample.mass_dry_g}")
    if sample.mass_wet_g < sample.mass_dry_g:
        raise NegativeWater(
            f"wet mass {sample.mass_wet_g} < dry mass {sample.mass_dry_g}"
        )
    if sample.bulk_density_g_cm3 <= 0 or sample.water_density_g_cm3 <= 0:
        raise ValueError("densities must be strictly positive")
    return (
        (sample.mass_wet_g - sample.mass_dry_g)
        / sample.mass_dry_g
        * (sample.bulk_density_g_cm3 / sample.water_density_g_cm3)
    )


class Transform(str, Enum):
    """Input transform applied to the sensor voltage before the quadratic."""

    RECIPROCAL = "reciprocal"
    IDENTITY = "identity"


class ZeroVoltage(ValueError):
    pass


class InsufficientPoints(ValueError):
    pass


class SingularSystem(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationModel:
    """Quadratic voltage-to-VWC calibration: vwc% = a*x^2 + b*x + c where
    x is 1/voltage (RECIPROCAL) or the raw voltage (IDENTITY)."""

    a: float
    b: float
    c: float
    transform: Transform = Transform.RECIPROCAL
    fit_rmse: float = 0.0
    fit_r2: float = 1.0
    n_points: int = 0

    def to_dict(self) -> dict:
        return {
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "transform": self.transform.value,
            "fit_rmse": self.fit_rmse,
            "fit_r2": self.fit_r2,
            "n_points": self.n_points,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationModel":
        return cls(
            a=float(d["a"]),
            b=float(d["b"]),
            c=float(d["c"]),
            transform=Transform(d.get("transform", "reciprocal")),
            fit_rmse=float(d.get("fit_rmse", 0.0)),
            fit_r2=float(d.get("fit_r2", 1.0)),
            n_points=int(d.get("n_points", 0)),
        )


# Field calibration of the capacitive probes against gravimetric samples.
FIELD_CALIBRATION = CalibrationModel(a=-71.789, b=158.04, c=-37.711, transform=Transform.RECIPROCAL)


def _transform_voltage(transform: Transform, voltage: float) -> float:
    if transform is Transform.RECIPROCAL:
        if voltage <= 0:
            raise ZeroVoltage(f"voltage must be > 0 for reciprocal transform, got {voltage}")
        return 1.0 / voltage
    return voltage


def apply_calibration(model: CalibrationModel, voltage: float) -> float:
    """Convert a sensor voltage to volumetric water content in percent.

    Returns the raw polynomial value without clamping; callers attach a
    [0, 100] validity flag downstream if they need one.
    """
    x = _transform_voltage(model.transform, voltage)
    return model.a * x * x + model.b * x + model.c


def fit_calibration(
    points: list[tuple[float, float]],
    transform: Transform = Transform.RECIPROCAL,
) -> CalibrationModel:
    """Ordinary least-squares quadratic fit of VWC% on transformed voltage.

    Solves the normal equations on a mean-centered design for conditioning.
    Requires at least 3 distinct transformed x values.
    """
    if len(points) < 3:
        raise InsufficientPoints(f"need >= 3 points, got {len(points)}")
    xs = np.array([_transform_voltage(transform, v) for v, _ in points], dtype=float)
    ys = np.array([vwc for _, vwc in points], dtype=float)
    if len(set(xs.tolist())) < 3:
        raise InsufficientPoints("need >= 3 distinct transformed x values")

    # Center the x^2 and x columns; the intercept is recovered afterwards.
    cols = np.column_stack([xs * xs, xs])
    col_means = cols.mean(axis=0)
    y_mean = ys.mean()
    xc = cols - col_means
    yc = ys - y_mean
    gram = xc.T @ xc
    rhs = xc.T @ yc
    if np.linalg.cond(gram) > 1e12:
        raise SingularSystem("design matrix is rank-deficient or near-singular")
    ab = np.linalg.solve(gram, rhs)
    a, b = float(ab[0]), float(ab[1])
    c = float(y_mean - ab @ col_means)

    pred = a * xs * xs + b * xs + c
    resid = ys - pred
    fit_rmse = float(np.sqrt(np.mean(resid**2)))
    ss_tot = float(np.sum((ys - y_mean) ** 2))
    fit_r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return CalibrationModel(
        a=a, b=b, c=c, transform=transform,
        fit_rmse=fit_rmse, fit_r2=fit_r2, n_points=len(points),
    )


def decode_ds18b20(raw: int) -> float:
    """Decode a 16-bit two's-complement probe register at 12-bit resolution
    (1/16 °C per count). Total on the whole 16-bit range."""
    if not 0 <= raw <= 0xFFFF:
        if -0x8000 <= raw < 0:
            raw &= 0xFFFF
        else:
            raise ValueError(f"raw value {raw} outside 16-bit range")
    if raw >= 0x8000:
        raw -= 0x10000
    return raw / 16.0
