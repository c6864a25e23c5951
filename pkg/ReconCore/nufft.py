"""
Non-uniform Fourier transforms on arbitrary 2D trajectories.

Conventions shared by the whole operator stack:

- an image is a square complex array of even side n, row-major; entry
  (row, col) sits at pixel coordinate p = (col − n/2, row − n/2);
- k-space data is a complex vector with one entry per trajectory sample,
  spoke-major;
- the forward transform is y_m = Σ_n x_n exp(−i k_m·p_n), unnormalized.

``nudft_forward``/``nudft_adjoint`` evaluate the direct sums and serve as the
reference. ``make_plan`` precomputes a Kaiser–Bessel gridding structure and
``nufft_forward``/``nufft_adjoint`` apply it; the two gridded operators are
exact conjugate transposes of each other.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.sparse
from scipy.special import i0

from .conf import resolve
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

_NUDFT_CHUNK = 512


def check_image(x, side=None, name='image'):
    """
    Validate a complex image and return it as complex128.

    Raises:
        ValueError: If the array is not square with an even side, does not
            match ``side``, or holds non-finite values.
    """
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ValueError(f"{name} must be a square 2D array, got shape {x.shape}")
    if x.shape[0] % 2:
        raise ValueError(f"{name} side must be even, got {x.shape[0]}")
    if side is not None and x.shape[0] != side:
        raise ValueError(f"{name} side {x.shape[0]} does not match expected side {side}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x.astype(np.complex128, copy=False)


def check_kspace(y, n_samples, name='k-space data'):
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(f"{name} must be a vector of length {n_samples}, got shape {y.shape}")
    return y.astype(np.complex128, copy=False)


def pixel_coordinates(side):
    """Centered integer pixel coordinates (p_x, p_y), each of shape (side, side)."""
    c = np.arange(side) - side // 2
    py, px = np.meshgrid(c, c, indexing='ij')
    return px, py


def nudft_matrix(kxy, side):
    """
    Dense NUDFT matrix with entries exp(−i k_m·p_n), shape (len(kxy), side²).

    Only meant for small problems and test oracles.
    """
    px, py = pixel_coordinates(side)
    kxy = np.asarray(kxy, dtype=np.float64).reshape(-1, 2)
    phase = np.outer(kxy[:, 0], px.ravel()) + np.outer(kxy[:, 1], py.ravel())
    return np.exp(-1j * phase)


def nudft_forward(x, traj):
    """
    Direct-sum forward NUDFT, O(N·M).

    Args:
        x (ndarray): Complex image.
        traj (Trajectory): Sample locations.

    Returns:
        ndarray: complex128 k-space vector of length traj.n_samples.
    """
    x = check_image(x)
    side = x.shape[0]
    flat = x.ravel()
    kxy = traj.kxy
    y = np.empty(kxy.shape[0], dtype=np.complex128)
    for start in range(0, kxy.shape[0], _NUDFT_CHUNK):
        stop = start + _NUDFT_CHUNK
        y[start:stop] = nudft_matrix(kxy[start:stop], side) @ flat
    return y


def nudft_adjoint(y, traj, side):
    """
    Direct-sum adjoint NUDFT: x_n = Σ_m y_m exp(+i k_m·p_n).

    Raises:
        ValueError: If ``y`` does not have one entry per sample.
    """
    y = check_kspace(y, traj.n_samples)
    kxy = traj.kxy
    x = np.zeros(side * side, dtype=np.complex128)
    for start in range(0, kxy.shape[0], _NUDFT_CHUNK):
        stop = start + _NUDFT_CHUNK
        x += nudft_matrix(kxy[start:stop], side).conj().T @ y[start:stop]
    return x.reshape(side, side)


def kaiser_bessel_beta(kernel_width, oversampling):
    """Kaiser–Bessel shape parameter β = π√(J²/ρ²·(ρ − 0.5)² − 0.8)."""
    return np.pi * np.sqrt(kernel_width ** 2 / oversampling ** 2 * (oversampling - 0.5) ** 2 - 0.8)


def kaiser_bessel(u, kernel_width, beta):
    """
    Kaiser–Bessel kernel with its pedestal removed, zero outside |u| < J/2.

    (I0(β√(1 − (2u/J)²)) − 1) / (I0(β) − 1): peak 1 at u = 0 and exactly 0 at
    |u| = J/2, so samples that land on a grid node see a symmetric window.
    """
    u = np.asarray(u, dtype=np.float64)
    arg = 1.0 - (2.0 * u / kernel_width) ** 2
    inside = arg >= 0
    out = np.zeros_like(u)
    out[inside] = (i0(beta * np.sqrt(arg[inside])) - 1.0) / (i0(beta) - 1.0)
    return out


def kaiser_bessel_ft(f, kernel_width, beta):
    """
    Continuous Fourier transform of ``kaiser_bessel`` at frequency f (cycles per grid cell).

    J·sinh(z)/z with z = √(β² − (πJf)²) (continued as J·sin(z)/z when the
    radicand is negative), minus the transform J·sinc(Jf) of the pedestal.
    """
    f = np.asarray(f, dtype=np.float64)
    z2 = beta ** 2 - (np.pi * kernel_width * f) ** 2
    z = np.sqrt(np.abs(z2))
    with np.errstate(invalid='ignore', divide='ignore'):
        val = np.where(z2 > 0, np.sinh(z) / z, np.sin(z) / z)
    val = np.where(z == 0, 1.0, val)
    return kernel_width * (val - np.sinc(kernel_width * f)) / (i0(beta) - 1.0)


@dataclass(frozen=True)
class NufftPlan:
    """
    Precomputed Kaiser–Bessel gridding for one trajectory and image side.

    Attributes:
        traj (Trajectory): The sampled locations.
        side (int): Image side n.
        oversampling (float): Grid oversampling ρ.
        kernel_width (int): Kernel width J in grid cells.
        beta (float): Kaiser–Bessel shape parameter.
        grid_size (int): Oversampled grid side K = ρn.
        interp (scipy.sparse.csr_matrix): Real (M, K²) interpolation matrix G;
            row m holds the J² weights of sample m, wrapped periodically.
        deapod (ndarray): Strictly positive (n, n) deapodization image.
    """

    traj: Trajectory = field(repr=False)
    side: int
    oversampling: float
    kernel_width: int
    beta: float
    grid_size: int
    interp: scipy.sparse.csr_matrix = field(repr=False)
    deapod: np.ndarray = field(repr=False)

    @property
    def n_samples(self):
        return self.traj.n_samples

    def grid_indices(self):
        """Rows (and columns) of the oversampled grid that hold the image pixels."""
        return (np.arange(self.side) - self.side // 2) % self.grid_size

    def interpolate(self, grid):
        """Apply G: oversampled grid (K, K) to samples."""
        return self.interp @ grid.ravel()

    def spread(self, y):
        """Apply Gᵀ: samples to oversampled grid (K, K)."""
        return (self.interp.T @ y).reshape(self.grid_size, self.grid_size)


def _kernel_weights(t, kernel_width, beta):
    """Grid cells and weights touched by fractional grid coordinates t (one axis)."""
    j0 = np.ceil(t - kernel_width / 2.0).astype(np.int64)
    cells = j0[:, None] + np.arange(kernel_width)[None, :]
    weights = kaiser_bessel(t[:, None] - cells, kernel_width, beta)
    return cells, weights


def interpolation_matrix(t, grid_size, kernel_width, beta):
    """
    Kaiser–Bessel interpolation from a (grid_size, grid_size) grid to points.

    Args:
        t (ndarray): (M, 2) point coordinates in grid cells, (x, y) order,
            the grid origin at cell 0; indices wrap modulo grid_size.
        grid_size (int): Grid side.
        kernel_width (int): Kernel width J in cells.
        beta (float): Kaiser–Bessel shape parameter.

    Returns:
        scipy.sparse.csr_matrix: Real (M, grid_size²) matrix with J² weights per row.
    """
    cx, wx = _kernel_weights(t[:, 0], kernel_width, beta)
    cy, wy = _kernel_weights(t[:, 1], kernel_width, beta)
    m = t.shape[0]
    cols = (cy % grid_size)[:, :, None] * grid_size + (cx % grid_size)[:, None, :]
    vals = wy[:, :, None] * wx[:, None, :]
    rows = np.repeat(np.arange(m), kernel_width * kernel_width)
    return scipy.sparse.csr_matrix(
        (vals.ravel(), (rows, cols.ravel())),
        shape=(m, grid_size * grid_size),
    )


def make_plan(traj, side, oversampling=None, kernel_width=None):
    """
    Precompute the gridding structure of ``traj`` for images of side ``side``.

    Args:
        traj (Trajectory): Sample locations.
        side (int): Even image side.
        oversampling (float, optional): ρ ≥ 1.25. Defaults to the configured value (2).
        kernel_width (int, optional): J ≥ 2. Defaults to the configured value (6).

    Returns:
        NufftPlan: An immutable plan.

    Raises:
        ValueError: On out-of-range parameters or a grid too small for the kernel.
    """
    oversampling = float(resolve(oversampling, 'OVERSAMPLING'))
    kernel_width = int(resolve(kernel_width, 'KERNEL_WIDTH'))
    if side < 2 or side % 2:
        raise ValueError("side must be an even integer >= 2")
    if oversampling < 1.25:
        raise ValueError("oversampling must be at least 1.25")
    if kernel_width < 2:
        raise ValueError("kernel_width must be at least 2")
    grid_size = int(round(oversampling * side))
    if grid_size < 2 * kernel_width:
        raise ValueError(
            f"oversampled grid of side {grid_size} is too small for kernel width {kernel_width}"
        )

    beta = float(kaiser_bessel_beta(kernel_width, oversampling))
    interp = interpolation_matrix(traj.kxy * (grid_size / (2 * np.pi)), grid_size, kernel_width, beta)
    m = traj.n_samples

    p = np.arange(side) - side // 2
    apod = kaiser_bessel_ft(p / grid_size, kernel_width, beta)
    deapod = 1.0 / np.outer(apod, apod)

    logger.debug(
        "NUFFT plan: %d samples, side %d, grid %d, J=%d, beta=%.4f",
        m, side, grid_size, kernel_width, beta,
    )
    return NufftPlan(traj, side, oversampling, kernel_width, beta, grid_size, interp, deapod)


def nufft_forward(plan, x):
    """
    Gridded forward transform: deapodize, zero-pad, FFT, interpolate.

    Raises:
        ValueError: If the image side does not match the plan.
    """
    x = check_image(x, plan.side)
    idx = plan.grid_indices()
    grid = np.zeros((plan.grid_size, plan.grid_size), dtype=np.complex128)
    grid[np.ix_(idx, idx)] = x * plan.deapod
    return plan.interpolate(scipy.fft.fft2(grid))


def nufft_adjoint(plan, y):
    """
    Exact conjugate transpose of ``nufft_forward``: spread, inverse FFT, crop, deapodize.

    Raises:
        ValueError: If ``y`` does not have one entry per sample.
    """
    y = check_kspace(y, plan.n_samples)
    grid = scipy.fft.ifft2(plan.spread(y), norm='forward')
    idx = plan.grid_indices()
    return grid[np.ix_(idx, idx)] * plan.deapod
