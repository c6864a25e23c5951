"""
Density compensation weights by the iterative Pipe–Menon scheme.

With C w = G Gᵀ w (spread to a grid, interpolate back) the iteration repeats
w ← w / (C w) until C w ≈ 1. No FFT and no deapodization are involved.

G is a Kaiser–Bessel gridding matrix of its own, wider than the imaging
plan's: the density estimate has to bridge the angular gaps between spokes
at the edge of k-space. For radial trajectories the grid does not wrap and
every spoke is continued by guard samples past ±π, so the last samples of a
spoke see the same neighbourhood as the ones inside. Guards take part in
C w but get no weight of their own in the result. A Cartesian trajectory
covers one full period of k-space and keeps the periodic grid.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .conf import resolve
from .nufft import interpolation_matrix, kaiser_bessel_beta
from .trajectory import spoke_angles

logger = logging.getLogger(__name__)

CLAMP_FLOOR = 1e-14


@dataclass(frozen=True)
class DcWeights:
    """
    Diagonal of the density-compensation matrix D.

    Attributes:
        w (ndarray): Non-negative float64 weights, one per sample.
        iterations (int): Iterations run.
        residual (float): Final ‖C w − 1‖_∞ over the trajectory's samples.
        residual_history (tuple): ‖C w − 1‖_∞ before each update.
        clamped (bool): Whether any C w entry had to be clamped to 1e-14.
    """

    w: np.ndarray = field(repr=False)
    iterations: int = 0
    residual: float = float('nan')
    residual_history: tuple = ()
    clamped: bool = False

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=np.float64)
        if w.ndim != 1 or np.any(~np.isfinite(w)) or np.any(w < 0):
            raise ValueError("density-compensation weights must be a finite non-negative vector")
        w.flags.writeable = False
        object.__setattr__(self, 'w', w)

    @classmethod
    def uniform(cls, n_samples):
        """Unit weights (no compensation)."""
        return cls(np.ones(n_samples))


@dataclass(frozen=True)
class DensityGrid:
    """
    Gridding matrix the density estimate runs on.

    Attributes:
        interp (scipy.sparse.csr_matrix): Real matrix G; the first
            ``n_samples`` rows are the trajectory's samples, the rest guards.
        n_samples (int): Trajectory samples.
        n_guards (int): Guard rows after the samples.
        grid_size (int): Grid side.
        periodic (bool): Whether the grid wraps around at ±π.
    """

    interp: scipy.sparse.csr_matrix = field(repr=False)
    n_samples: int
    n_guards: int
    grid_size: int
    periodic: bool

    def gram(self, w):
        """C w = G Gᵀ w over samples and guards."""
        return self.interp @ (self.interp.T @ w)


def guard_points(traj, per_end):
    """(n_spokes·2·per_end, 2) points continuing every spoke ``per_end`` radial steps past each end."""
    dr = 2 * np.pi / (traj.points_per_spoke - 1)
    steps = np.arange(1, per_end + 1) * dr
    r = np.concatenate([-np.pi - steps[::-1], np.pi + steps])
    theta = spoke_angles(traj.n_spokes, traj.start_index)
    points = np.stack([np.outer(np.cos(theta), r), np.outer(np.sin(theta), r)], axis=-1)
    return points.reshape(-1, 2)


def density_grid(plan, oversampling=None, kernel_width=None):
    """
    Build the gridding matrix for the density estimate of ``plan.traj``.

    Args:
        plan (NufftPlan): Supplies the trajectory and image side.
        oversampling (float, optional): Grid oversampling, ≥ 1.25. Defaults to the configured 1.25.
        kernel_width (int, optional): Kernel width in grid cells, ≥ 2. Defaults to the configured 16.

    Returns:
        DensityGrid: The matrix plus bookkeeping.
    """
    oversampling = float(resolve(oversampling, 'DC_OVERSAMPLING'))
    kernel_width = int(resolve(kernel_width, 'DC_KERNEL_WIDTH'))
    if oversampling < 1.25:
        raise ValueError("density oversampling must be at least 1.25")
    if kernel_width < 2:
        raise ValueError("density kernel width must be at least 2")

    traj = plan.traj
    period = int(round(oversampling * plan.side))
    cell = 2 * np.pi / period
    beta = float(kaiser_bessel_beta(kernel_width, oversampling))

    periodic = traj.kind == 'cartesian' or traj.points_per_spoke < 2
    if periodic:
        kxy, grid_size = traj.kxy, period
    else:
        per_end = int(np.ceil(kernel_width * (traj.points_per_spoke - 1) / (oversampling * plan.side)))
        kxy = np.concatenate([traj.kxy, guard_points(traj, per_end)])
        # half the grid must hold the farthest guard plus half a kernel
        grid_size = 2 * int(np.ceil(np.max(np.abs(kxy)) / cell + kernel_width / 2 + 1))

    interp = interpolation_matrix(kxy / cell, grid_size, kernel_width, beta)
    logger.debug(
        "Density grid: %d samples + %d guards, grid %d, J=%d, periodic=%s",
        traj.n_samples, kxy.shape[0] - traj.n_samples, grid_size, kernel_width, periodic,
    )
    return DensityGrid(interp, traj.n_samples, kxy.shape[0] - traj.n_samples, grid_size, periodic)


def pipe_menon(plan, max_iters=None, tol=None, init=None):
    """
    Compute density-compensation weights for the plan's trajectory.

    Args:
        plan (NufftPlan): Gridding plan; supplies the trajectory and image side.
        max_iters (int, optional): Iteration cap, ≥ 1. Defaults to the configured 20.
        tol (float, optional): Stop when ‖C w − 1‖_∞ < tol. Defaults to 1e-2.
        init (ndarray, optional): Starting weights. Defaults to all ones.
            Guards start at the mean of ``init``.

    Returns:
        DcWeights: The weights plus convergence metadata.
    """
    max_iters = int(resolve(max_iters, 'DC_MAX_ITERS'))
    tol = float(resolve(tol, 'DC_TOL'))
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    if tol <= 0:
        raise ValueError("tol must be positive")

    w = np.ones(plan.n_samples) if init is None else np.array(init, dtype=np.float64)
    if w.shape != (plan.n_samples,) or np.any(w < 0):
        raise ValueError("init must be a non-negative vector with one entry per sample")

    grid = density_grid(plan)
    m = grid.n_samples
    w = np.concatenate([w, np.full(grid.n_guards, float(np.mean(w)) if m else 1.0)])

    history = []
    clamped = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        cw = grid.gram(w)
        history.append(float(np.max(np.abs(cw[:m] - 1.0))))
        if history[-1] < tol:
            iterations -= 1
            break
        low = cw < CLAMP_FLOOR
        if np.any(low):
            clamped = True
            cw = np.where(low, CLAMP_FLOOR, cw)
        w = w / cw
        logger.debug("Pipe-Menon iteration %d: residual %.3e", iterations, history[-1])

    residual = float(np.max(np.abs(grid.gram(w)[:m] - 1.0)))
    history.append(residual)
    if clamped:
        logger.warning("Pipe-Menon: C w fell below %.0e on some samples and was clamped", CLAMP_FLOOR)
    tail = history[-6:]
    if any(b > a for a, b in zip(tail, tail[1:])):
        logger.warning("Pipe-Menon: fixed-point residual was not monotone over the last iterations")
    if residual >= tol:
        logger.warning(
            "Pipe-Menon: residual %.3e is still above tol %.0e after %d iterations", residual, tol, iterations,
        )
    logger.info("Density compensation: %d iterations, residual %.3e", iterations, residual)
    return DcWeights(w[:m], iterations, residual, tuple(history), clamped)
