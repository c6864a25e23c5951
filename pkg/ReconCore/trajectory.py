"""
Golden-angle radial k-space trajectories.

Coordinates are in radians: a pixel-grid image of side n has its Nyquist
frequency at ±π in both axes.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

logger = logging.getLogger(__name__)

# The small golden angle, in degrees.
GOLDEN_ANGLE_DEG = 68.25


@dataclass(frozen=True)
class Trajectory:
    """
    K-space sample locations organized by spoke.

    Attributes:
        points (ndarray): float64 array of shape (n_spokes, points_per_spoke, 2)
            holding (k_x, k_y) per sample, spoke-major.
        n_spokes (int): Number of spokes N_s (lines for a Cartesian grid).
        points_per_spoke (int): Samples per spoke N_p.
        start_index (int): Golden-angle index of the first spoke.
        kind (str): 'radial' or 'cartesian'.
    """

    points: np.ndarray = field(repr=False)
    n_spokes: int
    points_per_spoke: int
    start_index: int = 0
    kind: str = 'radial'

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.shape != (self.n_spokes, self.points_per_spoke, 2):
            raise ValueError(
                f"points must have shape ({self.n_spokes}, {self.points_per_spoke}, 2), got {pts.shape}"
            )
        # Tolerate the rounding of r cos θ at |r| = π.
        if np.any(np.abs(pts) > np.pi * (1 + 1e-12)):
            raise ValueError("Trajectory coordinates must lie in [-pi, pi]")
        pts.flags.writeable = False
        object.__setattr__(self, 'points', pts)

    @property
    def n_samples(self):
        return self.n_spokes * self.points_per_spoke

    @property
    def kxy(self):
        """Flat (M, 2) view of the sample coordinates, spoke-major."""
        return self.points.reshape(-1, 2)

    def radius(self):
        """Signed radial coordinate of every sample, shape (n_spokes, points_per_spoke)."""
        n = self.points_per_spoke
        return np.broadcast_to(np.arange(n) * (2 * np.pi / (n - 1)) - np.pi, (self.n_spokes, n))

    def sidecar(self):
        return {
            'kind': self.kind,
            'n_spokes': self.n_spokes,
            'points_per_spoke': self.points_per_spoke,
            'start_index': self.start_index,
        }


def spoke_angles(n_spokes, start_index=0):
    """Angle of each spoke in radians; not reduced modulo 2π."""
    return np.deg2rad((start_index + np.arange(n_spokes)) * GOLDEN_ANGLE_DEG)


def golden_angle_radial(n_spokes, points_per_spoke, start_index=0):
    """
    Build a 2D golden-angle radial trajectory.

    Sample n_p of spoke n_s sits at radius r = n_p·Δr − π, Δr = 2π/(N_p − 1),
    along the angle (start_index + n_s)·68.25°. Both ends ±π are sampled and
    spoke 0 lies on the +x axis.

    Args:
        n_spokes (int): Number of spokes, ≥ 1.
        points_per_spoke (int): Samples per spoke, ≥ 2. Usually the image side.
        start_index (int): Golden-angle index of the first spoke, ≥ 0.

    Returns:
        Trajectory: The radial trajectory.

    Raises:
        ValueError: If a count is out of range.
    """
    if n_spokes < 1:
        raise ValueError("n_spokes must be at least 1")
    if points_per_spoke < 2:
        raise ValueError("points_per_spoke must be at least 2 (the radial step is undefined otherwise)")
    if start_index < 0:
        raise ValueError("start_index must be non-negative")

    dr = 2 * np.pi / (points_per_spoke - 1)
    r = np.arange(points_per_spoke) * dr - np.pi
    theta = spoke_angles(n_spokes, start_index)
    points = np.stack(
        [np.outer(np.cos(theta), r), np.outer(np.sin(theta), r)],
        axis=-1,
    )
    return Trajectory(points, n_spokes, points_per_spoke, start_index, 'radial')


def cartesian_grid(side):
    """
    Full Cartesian sampling of a side×side image as a Trajectory.

    Line j holds k_y = 2π(j − side/2)/side and k_x sweeping the same grid,
    so the exact transform of the samples is the centered DFT.
    """
    if side < 2 or side % 2:
        raise ValueError("side must be an even integer >= 2")
    k = 2 * np.pi * (np.arange(side) - side // 2) / side
    ky, kx = np.meshgrid(k, k, indexing='ij')
    return Trajectory(np.stack([kx, ky], axis=-1), side, side, 0, 'cartesian')


def acceleration_factor(image_side, n_spokes):
    """
    Acceleration factor √N / N_s of 2D radial sampling, as an exact fraction.

    Args:
        image_side (int): The image side √N.
        n_spokes (int): Number of spokes.

    Returns:
        Fraction: image_side / n_spokes.
    """
    if n_spokes <= 0:
        raise ValueError("n_spokes must be positive")
    if image_side <= 0:
        raise ValueError("image_side must be positive")
    return Fraction(image_side, n_spokes)


def spokes_for_af(image_side, af):
    """Number of spokes giving the acceleration factor closest to ``af`` (at least 1)."""
    return max(1, int(round(image_side / af)))
