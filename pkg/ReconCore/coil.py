"""
Multi-coil measurement operator.

For coil ℓ the sampling operator is Φ_ℓ = F S_ℓ (gridded NUFFT after a
pixelwise sensitivity map). The back-projection of coil data is
x_b = κ Σ_ℓ S_ℓ† F†(D y_ℓ) and the data-consistency operator is
P = Σ_ℓ Φ_ℓ† D Φ_ℓ. κ normalizes the point-spread function of P.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .conf import resolve
from .dcomp import DcWeights
from .nufft import NufftPlan, check_image, check_kspace, nufft_adjoint, nufft_forward

logger = logging.getLogger(__name__)

MAPS_RECIPE_VERSION = 1
DIRAC_VALUE = np.sqrt(2) * (1 + 1j) / 2


@dataclass(frozen=True)
class SensitivityMaps:
    """
    Diagonal coil sensitivities with Σ_ℓ |S_ℓ|² = 1 at every pixel.

    Attributes:
        maps (ndarray): complex128 array of shape (L, n, n).
        seed (int or None): Seed the maps were synthesized from.
        recipe_version (int): Version of the synthesis recipe.
    """

    maps: np.ndarray = field(repr=False)
    seed: int = None
    recipe_version: int = MAPS_RECIPE_VERSION

    def __post_init__(self):
        maps = np.ascontiguousarray(self.maps, dtype=np.complex128)
        if maps.ndim != 3 or maps.shape[0] < 1 or maps.shape[1] != maps.shape[2]:
            raise ValueError(f"maps must have shape (L, n, n) with L >= 1, got {maps.shape}")
        energy = np.sum(np.abs(maps) ** 2, axis=0)
        if not np.allclose(energy, 1.0, rtol=0, atol=1e-12):
            raise ValueError("sensitivity maps must satisfy sum_l |S_l|^2 = 1 at every pixel")
        maps.flags.writeable = False
        object.__setattr__(self, 'maps', maps)

    @property
    def n_coils(self):
        return self.maps.shape[0]

    @property
    def side(self):
        return self.maps.shape[1]

    def sidecar(self):
        return {
            'n_coils': self.n_coils,
            'side': self.side,
            'seed': self.seed,
            'recipe_version': self.recipe_version,
        }


def synth_sensitivities(n_coils, side, seed=0):
    """
    Synthesize smooth coil sensitivities satisfying the sum-of-squares constraint.

    Each coil is a Gaussian magnitude bump centered near the edge of the field
    of view at evenly spaced angles (with a seeded global rotation and seeded
    bump widths) times a seeded linear phase ramp. The profiles are then
    divided pixelwise by their root-sum-of-squares. A single coil is the
    identity map.

    Args:
        n_coils (int): Number of coils L ≥ 1.
        side (int): Image side.
        seed (int): Seed for the random geometry; the same seed gives the same maps.

    Returns:
        SensitivityMaps: Maps of shape (L, side, side).
    """
    if n_coils < 1:
        raise ValueError("n_coils must be at least 1")
    if n_coils == 1:
        return SensitivityMaps(np.ones((1, side, side), dtype=np.complex128), seed)

    rng = np.random.default_rng(seed)
    c = (np.arange(side) - side / 2) / (side / 2)
    yy, xx = np.meshgrid(c, c, indexing='ij')

    rotation = rng.uniform(0, 2 * np.pi)
    angles = rotation + 2 * np.pi * np.arange(n_coils) / n_coils
    widths = rng.uniform(0.4, 0.7, size=n_coils)
    slopes = rng.uniform(-np.pi / 2, np.pi / 2, size=(n_coils, 2))
    offsets = rng.uniform(-np.pi, np.pi, size=n_coils)

    profiles = np.empty((n_coils, side, side), dtype=np.complex128)
    for coil in range(n_coils):
        cx, cy = 0.9 * np.cos(angles[coil]), 0.9 * np.sin(angles[coil])
        magnitude = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * widths[coil] ** 2))
        phase = slopes[coil, 0] * xx + slopes[coil, 1] * yy + offsets[coil]
        profiles[coil] = magnitude * np.exp(1j * phase)

    rss = np.sqrt(np.sum(np.abs(profiles) ** 2, axis=0))
    return SensitivityMaps(profiles / rss, seed)


@dataclass(frozen=True)
class MeasurementModel:
    """
    Everything needed to apply Φ_ℓ, its adjoint, D and κ.

    Attributes:
        maps (SensitivityMaps): Coil sensitivities.
        plan (NufftPlan): Gridding plan of the trajectory.
        dc (DcWeights): Density-compensation weights.
        kappa (float): Back-projection normalization κ > 0.
    """

    maps: SensitivityMaps
    plan: NufftPlan
    dc: DcWeights
    kappa: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.maps.side != self.plan.side:
            raise ValueError("sensitivity maps and NUFFT plan disagree on the image side")
        if self.dc.w.shape[0] != self.plan.n_samples:
            raise ValueError("density-compensation weights do not match the trajectory")

    @property
    def side(self):
        return self.plan.side

    @property
    def n_coils(self):
        return self.maps.n_coils

    @property
    def n_samples(self):
        return self.plan.n_samples


def build_model(maps, plan, dc, kappa_mode=None):
    """Assemble a MeasurementModel, computing κ from its components."""
    return MeasurementModel(maps, plan, dc, compute_kappa(maps, plan, dc, mode=kappa_mode))


def coil_forward(model, x, coil):
    """Φ_ℓ x = F(S_ℓ ⊙ x) for one coil."""
    return nufft_forward(model.plan, model.maps.maps[coil] * x)


def coil_adjoint(model, y, coil, weights=None):
    """S_ℓ† F†(W y) for one coil; W defaults to the identity."""
    if weights is not None:
        y = weights * y
    return np.conj(model.maps.maps[coil]) * nufft_adjoint(model.plan, y)


def forward_multicoil(model, x):
    """
    Noiseless multi-coil data y_ℓ = F(S_ℓ ⊙ x).

    Returns:
        ndarray: complex128 array of shape (L, M).
    """
    x = check_image(x, model.side)
    return np.stack([coil_forward(model, x, coil) for coil in range(model.n_coils)])


def _check_coil_data(model, y):
    y = np.asarray(y)
    if y.ndim != 2 or y.shape[0] != model.n_coils:
        raise ValueError(f"expected data for {model.n_coils} coils, got shape {y.shape}")
    return np.stack([check_kspace(y_l, model.n_samples) for y_l in y])


def dc_adjoint_sum(model, y):
    """Σ_ℓ S_ℓ† F†(D y_ℓ), summed in coil order."""
    y = _check_coil_data(model, y)
    out = np.zeros((model.side, model.side), dtype=np.complex128)
    for coil in range(model.n_coils):
        out += coil_adjoint(model, y[coil], coil, model.dc.w)
    return out


def back_project(model, y):
    """
    Normalized back-projection x_b = κ Σ_ℓ S_ℓ† F†(D y_ℓ).

    Args:
        model (MeasurementModel): The measurement model.
        y (array-like): Coil data of shape (L, M).

    Returns:
        ndarray: The back-projected image.
    """
    return model.kappa * dc_adjoint_sum(model, y)


def normal_apply(model, x):
    """P x = Σ_ℓ Φ_ℓ† D Φ_ℓ x, without κ."""
    return dc_adjoint_sum(model, forward_multicoil(model, x))


def dirac_image(side):
    """Dirac image whose central element is √2(1 + i)/2."""
    delta = np.zeros((side, side), dtype=np.complex128)
    delta[side // 2, side // 2] = DIRAC_VALUE
    return delta


def psf_peak(psf, mode):
    """Peak of a point-spread function: max |Re| + |Im| ('l1') or max modulus ('modulus')."""
    if mode == 'l1':
        return float(np.max(np.abs(psf.real) + np.abs(psf.imag)))
    if mode == 'modulus':
        return float(np.max(np.abs(psf)))
    raise ValueError(f"unknown kappa mode {mode!r}")


def compute_kappa(maps, plan, dc, mode=None):
    """
    κ = 1 / peak(Σ_ℓ Φ_ℓ† D Φ_ℓ δ).

    The peak is read per pixel as |Re| + |Im| of the complex value by default
    ('l1'); 'modulus' takes the per-pixel modulus instead.

    Raises:
        ValueError: If the normal operator maps the Dirac image to zero.
    """
    mode = resolve(mode, 'KAPPA_MODE')
    probe = MeasurementModel(maps, plan, dc, 1.0)
    peak = psf_peak(normal_apply(probe, dirac_image(plan.side)), mode)
    if not peak > 0:
        raise ValueError("degenerate measurement operator: the point-spread function is zero")
    kappa = 1.0 / peak
    logger.info("kappa = %.6e (PSF peak read as %s)", kappa, mode)
    return kappa
