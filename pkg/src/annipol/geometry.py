"""Setup geometry: two pixelated polarimeters, a scatterer crystal and a point source.

Lab frame (mm): the scatterer (Detector C) sits at the origin, the photon
heading for Detector B travels along +z, the source sits on the -z axis
between the scatterer and Detector A, and Detector A faces it along -z.
Detector B is rotated about the lab y axis by the nominal prior-scatter angle.
Each polarimeter has its own pixel axes (ex, ey); both start aligned with
lab x and y so that azimuths of the two modules share a common reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from annipol.errors import ConfigError


@dataclass(frozen=True)
class DetectorGeometry:
    pixels_per_side: int = 8
    pitch: float = 2.2  # mm
    crystal_side: float = 1.9  # mm
    crystal_length: float = 20.0  # mm
    distance_to_scatterer: float = 50.0  # mm, scatterer to front face
    rotation_theta_scat: float = 0.0  # deg
    energy_resolution_fwhm_at_511: float = 0.081

    def __post_init__(self):
        if self.pixels_per_side < 1:
            raise ConfigError("pixels_per_side must be >= 1")
        if not self.pitch > self.crystal_side > 0:
            raise ConfigError("pitch must exceed the crystal side, both positive")
        if self.crystal_length <= 0:
            raise ConfigError("crystal_length must be positive")
        if not self.distance_to_scatterer > 0:
            raise ConfigError("distance_to_scatterer must be positive")
        if not 0.0 < self.energy_resolution_fwhm_at_511 < 1.0:
            raise ConfigError("energy resolution fraction must lie in (0, 1)")

    @property
    def half_width(self) -> float:
        return 0.5 * self.pixels_per_side * self.pitch

    def pixel_center(self, ix, iy):
        """Local (x, y) of a pixel centre in mm."""
        off = 0.5 * self.pixels_per_side
        return (np.asarray(ix) + 0.5 - off) * self.pitch, (np.asarray(iy) + 0.5 - off) * self.pitch

    def pixel_index(self, x, y):
        """Pixel indices containing local (x, y); -1 where outside the matrix."""
        off = 0.5 * self.pixels_per_side
        ix = np.floor(np.asarray(x) / self.pitch + off).astype(np.int64)
        iy = np.floor(np.asarray(y) / self.pitch + off).astype(np.int64)
        inside = (ix >= 0) & (ix < self.pixels_per_side) & (iy >= 0) & (iy < self.pixels_per_side)
        return np.where(inside, ix, -1), np.where(inside, iy, -1)


@dataclass(frozen=True)
class ScattererSpec:
    side: float = 3.0  # mm, cross-section seen by the incoming photon
    length: float = 20.0  # mm
    energy_resolution_fwhm_at_511: float = 0.121
    active: bool = True
    source_distance: float = 10.0  # mm

    def __post_init__(self):
        if not 0.0 < self.energy_resolution_fwhm_at_511 < 1.0:
            raise ConfigError("scatterer resolution fraction must lie in (0, 1)")
        if self.side <= 0 or self.length <= 0 or self.source_distance <= 0:
            raise ConfigError("scatterer dimensions and source distance must be positive")


def angular_coverage(geometry: DetectorGeometry) -> float:
    """Half-angle (deg) subtended by the matrix edge seen from the scatterer."""
    if math.isinf(geometry.distance_to_scatterer):
        return 0.0
    return math.degrees(math.atan(geometry.half_width / geometry.distance_to_scatterer))


@dataclass(frozen=True)
class Frame:
    """Placement of a polarimeter: front-face centre, inward axis and pixel axes."""

    center: np.ndarray
    axis: np.ndarray
    ex: np.ndarray
    ey: np.ndarray


@dataclass(frozen=True)
class SetupGeometry:
    detector_a: DetectorGeometry = field(default_factory=DetectorGeometry)
    detector_b: DetectorGeometry = field(default_factory=DetectorGeometry)
    scatterer: ScattererSpec = field(default_factory=ScattererSpec)

    @property
    def source_position(self) -> np.ndarray:
        return np.array([0.0, 0.0, -self.scatterer.source_distance])

    def frame_a(self) -> Frame:
        d = self.detector_a.distance_to_scatterer
        return Frame(
            center=np.array([0.0, 0.0, -d]),
            axis=np.array([0.0, 0.0, -1.0]),
            ex=np.array([1.0, 0.0, 0.0]),
            ey=np.array([0.0, 1.0, 0.0]),
        )

    def frame_b(self) -> Frame:
        t = math.radians(self.detector_b.rotation_theta_scat)
        axis = np.array([math.sin(t), 0.0, math.cos(t)])
        return Frame(
            center=self.detector_b.distance_to_scatterer * axis,
            axis=axis,
            ex=np.array([math.cos(t), 0.0, -math.sin(t)]),
            ey=np.array([0.0, 1.0, 0.0]),
        )

    def cone_to_b_from_source(self) -> float:
        """Half-angle (rad) of a cone around +z from the source that covers Detector B's face."""
        b = self.detector_b
        return math.atan(math.sqrt(2.0) * b.half_width / (b.distance_to_scatterer + self.scatterer.source_distance))

    def cone_to_scatterer(self) -> float:
        """Half-angle (rad) of a cone from the source covering the scatterer cross-section."""
        s = self.scatterer
        return math.atan(math.sqrt(2.0) * 0.5 * s.side / s.source_distance)

    def cone_to_b_from_scatterer(self) -> float:
        """Half-angle (rad) around B's axis covering its face from any point of the scatterer."""
        b = self.detector_b
        reach = math.sqrt(2.0) * (b.half_width + 0.5 * self.scatterer.side)
        return math.atan(reach / b.distance_to_scatterer)
