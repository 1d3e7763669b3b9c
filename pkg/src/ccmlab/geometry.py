"""Uniform planar array steering vectors and geometric channel synthesis.

The base station carries an n_ele x n_az planar array. A departure
direction (elevation theta measured from +z, azimuth phi in the xy plane)
maps to the unit-norm steering vector

    a(theta, phi) = kron(a_az, a_ele) / sqrt(n_ele * n_az)

with per-element phases

    a_ele[q] = exp(j 2 pi (d/lambda) q cos(theta)),          q = 0..n_ele-1
    a_az[p]  = exp(j 2 pi (d/lambda) p sin(theta) sin(phi)), p = 0..n_az-1

so entry (p * n_ele + q) of the flat vector is a_az[p] * a_ele[q] / sqrt(N).
The elevation index runs fastest; this layout is a declared convention of
this package. A channel is the gain-weighted sum of steering vectors over
propagation paths.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ArrayConfig:
    """Planar array geometry: element counts and spacing in wavelengths."""

    n_ele: int
    n_az: int
    spacing_ratio: float = 0.5

    def __post_init__(self):
        if self.n_ele < 1 or self.n_az < 1:
            raise ValueError("antenna counts must be >= 1")
        if self.spacing_ratio <= 0:
            raise ValueError("spacing_ratio must be positive")

    @property
    def n_total(self):
        return self.n_ele * self.n_az


@dataclass(frozen=True)
class PathComponent:
    """One propagation path: complex gain and departure angles (radians)."""

    gain: complex
    elevation: float
    azimuth: float

    def __post_init__(self):
        if not np.isfinite(self.gain):
            raise ValueError("path gain must be finite")
        _check_angles(self.elevation, self.azimuth)


def _check_angles(elevation, azimuth):
    if not 0.0 <= elevation <= np.pi:
        raise ValueError("elevation %r outside [0, pi]" % (elevation,))
    if not -np.pi <= azimuth <= np.pi:
        raise ValueError("azimuth %r outside [-pi, pi]" % (azimuth,))


def steering_vector(cfg, elevation, azimuth):
    """Unit-norm steering vector for one departure direction.

    Returns a complex vector of length ``cfg.n_total`` whose entries all
    have magnitude 1/sqrt(n_total).
    """
    _check_angles(elevation, azimuth)
    return steering_matrix(cfg, np.asarray([elevation]), np.asarray([azimuth]))[0]


def steering_matrix(cfg, elevations, azimuths):
    """Steering vectors for a batch of directions, one per row.

    Vectorized form of `steering_vector`; angle domains are the caller's
    responsibility here.
    """
    elevations = np.asarray(elevations, dtype=float)
    azimuths = np.asarray(azimuths, dtype=float)
    k = 2.0 * np.pi * cfg.spacing_ratio
    ph_ele = k * np.cos(elevations)
    ph_az = k * np.sin(elevations) * np.sin(azimuths)
    a_ele = np.exp(1j * np.outer(ph_ele, np.arange(cfg.n_ele)))
    a_az = np.exp(1j * np.outer(ph_az, np.arange(cfg.n_az)))
    # kron(a_az, a_ele) row-wise: azimuth index slow, elevation index fast
    full = a_az[:, :, None] * a_ele[:, None, :]
    return full.reshape(len(elevations), cfg.n_total) / np.sqrt(cfg.n_total)


def synthesize_channel(cfg, paths):
    """Channel vector as the gain-weighted sum of per-path steering vectors.

    Raises ValueError on an empty path list: a location with no propagation
    path is a scene defect and must surface explicitly.
    """
    if len(paths) == 0:
        raise ValueError("no propagation paths: cannot synthesize a channel")
    els = np.array([p.elevation for p in paths])
    azs = np.array([p.azimuth for p in paths])
    gains = np.array([p.gain for p in paths], dtype=complex)
    return gains @ steering_matrix(cfg, els, azs)
