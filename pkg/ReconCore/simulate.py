"""
Ground-truth phantoms, noise calibration and dataset synthesis.

A phantom is peak-normalized, so its dynamic range is 1/σ where σ is a low
percentile of the foreground modulus. For each coil the k-space noise level
τ_ℓ = σ√(2L_ℓ²/L'_ℓ) is chosen so the back-projected noise has std σ; L_ℓ
and L'_ℓ measure the coil operator with the density compensation applied
once and twice (see ``coil_operator_norms``).
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .coil import (
    MeasurementModel, back_project, build_model, coil_adjoint, coil_forward,
    forward_multicoil, synth_sensitivities,
)
from .conf import resolve, toolkit_settings
from .dcomp import DcWeights, pipe_menon
from .exceptions import DataError, NonConvergenceError
from .nufft import check_image, make_plan
from .serializers import DatasetConfigSerializer, DatasetManifestSerializer
from .storage import (
    RNG_ALGORITHM, load_maps, load_trajectory, provenance, read_array, read_json,
    save_maps, save_trajectory, validate, write_array, write_json,
)
from .trajectory import acceleration_factor, golden_angle_radial

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
REFERENCE_TEST_SPOKES = (12, 16, 24, 32, 48, 64)
REFERENCE_SIDE = 192


@dataclass(frozen=True)
class Phantom:
    """
    Peak-normalized complex ground truth.

    Attributes:
        image (ndarray): (n, n) complex image with max modulus 1.
        sigma (float): Faintest-intensity level σ ∈ (0, 1].
        seed (int or None): Generator seed.
        percentile (float): Percentile σ was taken at.
    """

    image: np.ndarray = field(repr=False)
    sigma: float
    seed: int = None
    percentile: float = 6.0

    @property
    def dr(self):
        return 1.0 / self.sigma

    @property
    def side(self):
        return self.image.shape[0]


def faintest_intensity(image, percentile=None, threshold=None):
    """σ: the ``percentile``-th percentile of |pixel| over pixels with |pixel| > threshold."""
    percentile = float(resolve(percentile, 'PERCENTILE'))
    threshold = float(resolve(threshold, 'FOREGROUND_THRESHOLD'))
    modulus = np.abs(image)
    foreground = modulus[modulus > threshold]
    if foreground.size == 0:
        raise ValueError("image has no foreground above the threshold")
    return float(np.percentile(foreground, percentile))


def phantom_from_image(image, percentile=None, seed=None):
    """Peak-normalize ``image`` and attach its faintest-intensity level."""
    image = check_image(image)
    peak = np.max(np.abs(image))
    if peak == 0:
        raise ValueError("image is identically zero")
    image = image / peak
    percentile = float(resolve(percentile, 'PERCENTILE'))
    return Phantom(image, faintest_intensity(image, percentile), seed, percentile)


def disk_phantom(side, radius=0.6, percentile=None):
    """Constant-modulus disk of the given radius (fraction of the half side)."""
    c = (np.arange(side) - side / 2) / (side / 2)
    yy, xx = np.meshgrid(c, c, indexing='ij')
    return phantom_from_image((xx ** 2 + yy ** 2 <= radius ** 2).astype(np.complex128), percentile)


def _ellipse_mask(xx, yy, cx, cy, a, b, angle):
    cos, sin = np.cos(angle), np.sin(angle)
    u = (xx - cx) * cos + (yy - cy) * sin
    v = -(xx - cx) * sin + (yy - cy) * cos
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def make_phantom(side, n_ellipses=10, seed=0, percentile=None):
    """
    Random ellipse phantom with complex amplitudes and a smooth phase.

    A large body ellipse carries a log-uniform magnitude in [10⁻², 1]; the
    n_ellipses − 1 inner ellipses add their own log-uniform magnitudes. All
    amplitude phases lie within ±π/4 of each other so overlaps never cancel.
    A smooth quadratic phase is applied and the result is peak-normalized.

    Args:
        side (int): Even image side.
        n_ellipses (int): Number of ellipses, ≥ 1 (the first one is the body).
        seed (int): Generator seed.
        percentile (float, optional): Percentile for σ, in (0, 50]. Defaults to 6.

    Returns:
        Phantom: The normalized phantom and its σ.
    """
    if side % 2 or side < 2:
        raise ValueError("side must be an even integer >= 2")
    if n_ellipses < 1:
        raise ValueError("n_ellipses must be at least 1")
    percentile = float(resolve(percentile, 'PERCENTILE'))
    if not 0 < percentile <= 50:
        raise ValueError("percentile must lie in (0, 50]")

    rng = np.random.default_rng(seed)
    c = (np.arange(side) - side / 2) / (side / 2)
    yy, xx = np.meshgrid(c, c, indexing='ij')

    def amplitude():
        return 10 ** rng.uniform(-2.0, 0.0) * np.exp(1j * rng.uniform(-np.pi / 8, np.pi / 8))

    body_a, body_b = rng.uniform(0.6, 0.85, size=2)
    body_angle = rng.uniform(0, np.pi)
    body = _ellipse_mask(xx, yy, 0.0, 0.0, body_a, body_b, body_angle)
    image = amplitude() * body
    for _ in range(n_ellipses - 1):
        a, b = rng.uniform(0.05, 0.3, size=2)
        radius = rng.uniform(0, 0.5) * min(body_a, body_b)
        theta = rng.uniform(0, 2 * np.pi)
        mask = _ellipse_mask(xx, yy, radius * np.cos(theta), radius * np.sin(theta), a, b, rng.uniform(0, np.pi))
        image = image + amplitude() * (mask & body)

    coeffs = rng.uniform(-1, 1, size=5)
    phase = coeffs[0] * xx + coeffs[1] * yy + coeffs[2] * xx * yy + coeffs[3] * xx ** 2 + coeffs[4] * yy ** 2
    image = image * np.exp(1j * phase)
    return phantom_from_image(image, percentile, seed)


def spectral_norm(op, shape, tol=None, max_iters=None, seed=0):
    """
    √λ_max of a self-adjoint positive semidefinite operator, by power iteration.

    The eigenvalue estimate is the Rayleigh quotient of the current iterate.

    Args:
        op (callable): Applies the operator to an array of ``shape``.
        shape (int or tuple): Shape of the operator's domain.
        tol (float, optional): Stop when the relative eigenvalue change is below tol.
        max_iters (int, optional): Iteration cap.
        seed (int): Seed of the random start vector.

    Returns:
        float: Square root of the dominant eigenvalue.

    Raises:
        NonConvergenceError: After ``max_iters`` iterations, carrying the last estimate.
    """
    tol = float(resolve(tol, 'SPECTRAL_TOL'))
    max_iters = int(resolve(max_iters, 'SPECTRAL_MAX_ITERS'))
    rng = np.random.default_rng(seed)
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    x /= np.linalg.norm(x)
    lam_old = None
    lam = 0.0
    for it in range(max_iters):
        z = op(x)
        lam = max(float(np.real(np.vdot(x, z))), 0.0)
        norm = np.linalg.norm(z)
        if norm == 0:
            return 0.0
        if lam_old is not None and abs(lam - lam_old) <= tol * lam:
            logger.debug("Power iteration converged after %d iterations", it + 1)
            return math.sqrt(lam)
        lam_old = lam
        x = z / norm
    raise NonConvergenceError(
        f"power iteration did not converge in {max_iters} iterations", last_estimate=math.sqrt(lam)
    )


def noise_std(sigma, L_once, L_twice):
    """
    k-space noise std τ = σ√(2·L_once²/L_twice).

    Raises:
        ValueError: If any input is not positive.
    """
    if not (sigma > 0 and L_once > 0 and L_twice > 0):
        raise ValueError("sigma, L_once and L_twice must all be positive")
    return sigma * math.sqrt(2.0 * L_once ** 2 / L_twice)


def coil_operator_norms(model, coil, reading=None, seed=0):
    """
    L_ℓ and L'_ℓ of coil ``coil``: the norms of Φ_ℓ†DΦ_ℓ and Φ_ℓ†D²Φ_ℓ.

    'psf' (default) takes the largest diagonal entry of each operator,
    Σ_m d_m·max|S_ℓ|² and Σ_m d_m²·max|S_ℓ|². 'spectral' returns λ_max of
    each operator itself, the square of what ``spectral_norm`` reports
    (‖D^½Φ_ℓ‖² and ‖DΦ_ℓ‖²), not its square root.

    Returns:
        tuple: (L_ℓ, L'_ℓ), both on the scale of the operators' eigenvalues.
    """
    reading = resolve(reading, 'NOISE_NORM')
    d = model.dc.w
    if reading == 'psf':
        peak = float(np.max(np.abs(model.maps.maps[coil]) ** 2))
        return float(np.sum(d)) * peak, float(np.sum(d ** 2)) * peak
    if reading == 'spectral':
        shape = (model.side, model.side)

        def once(x):
            return coil_adjoint(model, coil_forward(model, x, coil), coil, d)

        def twice(x):
            return coil_adjoint(model, coil_forward(model, x, coil), coil, d ** 2)

        return spectral_norm(once, shape, seed=seed) ** 2, spectral_norm(twice, shape, seed=seed) ** 2
    raise ValueError(f"unknown operator-norm reading {reading!r}")


def draw_noise(rng, tau, shape, noise_model=None):
    """
    Complex Gaussian noise.

    'circular': total std τ (each component τ/√2). 'per_component': each
    component std τ.
    """
    noise_model = resolve(noise_model, 'NOISE_MODEL')
    scale = tau / math.sqrt(2.0) if noise_model == 'circular' else tau
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


@dataclass(frozen=True)
class InverseProblem:
    """
    One simulated acquisition.

    Attributes:
        phantom (Phantom): Ground truth.
        model (MeasurementModel): Operator, DC weights and κ.
        tau (tuple): Per-coil noise std τ_ℓ.
        norm_once (tuple): Per-coil L_ℓ.
        norm_twice (tuple): Per-coil L'_ℓ.
        data (ndarray): Noisy coil data (L, M).
        x_b (ndarray): Back-projected image.
        seed (int): Noise seed.
    """

    phantom: Phantom
    model: MeasurementModel
    tau: tuple
    norm_once: tuple
    norm_twice: tuple
    data: np.ndarray = field(repr=False)
    x_b: np.ndarray = field(repr=False)
    seed: int = 0

    @property
    def af(self):
        return float(acceleration_factor(self.model.side, self.model.plan.traj.n_spokes))


def calibrate_noise(model, sigma, reading=None):
    """Per-coil (τ_ℓ, L_ℓ, L'_ℓ) for a target image-domain noise level σ."""
    taus, once, twice = [], [], []
    for coil in range(model.n_coils):
        L_once, L_twice = coil_operator_norms(model, coil, reading)
        once.append(L_once)
        twice.append(L_twice)
        taus.append(noise_std(sigma, L_once, L_twice))
    return tuple(taus), tuple(once), tuple(twice)


def simulate_acquisition(phantom, model, seed=0, noise_model=None, reading=None):
    """
    Simulate y_ℓ = Φ_ℓ x⋆ + n_ℓ and back-project it.

    Args:
        phantom (Phantom): Ground truth; its σ sets the noise level.
        model (MeasurementModel): The measurement model.
        seed (int): Noise seed.
        noise_model (str, optional): 'circular' or 'per_component'.
        reading (str, optional): Operator-norm reading, see ``coil_operator_norms``.

    Returns:
        InverseProblem: Data, back-projection and noise bookkeeping.
    """
    if phantom.side != model.side:
        raise ValueError("phantom and measurement model disagree on the image side")
    taus, once, twice = calibrate_noise(model, phantom.sigma, reading)
    rng = np.random.default_rng(seed)
    clean = forward_multicoil(model, phantom.image)
    noise = np.stack([draw_noise(rng, tau, clean.shape[1], noise_model) for tau in taus])
    data = clean + noise
    x_b = back_project(model, data)
    return InverseProblem(phantom, model, taus, once, twice, data, x_b, seed)


@dataclass
class DatasetConfig:
    """Settings of ``make_dataset``; validated by ``DatasetConfigSerializer``."""

    side: int = 64
    train_count: int = 500
    val_count: int = 50
    test_count: int = 60
    spokes_min: int = 3
    spokes_max: int = 27
    coils_min: int = 2
    coils_max: int = 8
    test_spokes: list = field(default_factory=list)
    percentile: float = 6.0
    n_ellipses: int = 10
    oversampling: float = 2.0
    kernel_width: int = 6
    dc_iters: int = 20
    seed: int = 0

    def __post_init__(self):
        if not self.test_spokes:
            self.test_spokes = scaled_test_spokes(self.side)

    def validated(self):
        return validate(DatasetConfigSerializer, asdict(self))


def scaled_test_spokes(side):
    """Spoke counts giving, at this side, the acceleration factors of the reference 6-AF grid."""
    return sorted({max(1, round(n * side / REFERENCE_SIDE)) for n in REFERENCE_TEST_SPOKES})


def build_measurement(side, n_spokes, n_coils, seed, oversampling=None, kernel_width=None, dc_iters=None):
    """Trajectory, plan, DC weights, maps and κ for one acquisition geometry."""
    traj = golden_angle_radial(n_spokes, side)
    plan = make_plan(traj, side, oversampling, kernel_width)
    dc = pipe_menon(plan, max_iters=dc_iters)
    maps = synth_sensitivities(n_coils, side, seed)
    return build_model(maps, plan, dc)


def _item_plan(config, master_seed):
    """Per-item (id, split, seed, n_spokes, n_coils), all drawn from the master seed."""
    rng = np.random.default_rng(master_seed)
    splits = (
        ['train'] * config['train_count']
        + ['val'] * config['val_count']
        + ['test'] * config['test_count']
    )
    plan = []
    for index, split in enumerate(splits):
        seed = int(rng.integers(0, 2 ** 31 - 1))
        n_coils = int(rng.integers(config['coils_min'], config['coils_max'] + 1))
        if split == 'test':
            n_spokes = config['test_spokes'][len([p for p in plan if p[1] == 'test']) % len(config['test_spokes'])]
        else:
            n_spokes = int(rng.integers(config['spokes_min'], config['spokes_max'] + 1))
        plan.append((f"{split}-{index:05d}", split, seed, n_spokes, n_coils))
    return plan


def write_problem(item_dir, problem):
    """Persist one InverseProblem; returns the file map relative to ``item_dir.parent.parent``."""
    item_dir = Path(item_dir)
    model = problem.model
    files = {
        'gt': write_array(item_dir / 'gt.c16', problem.phantom.image, '<c16',
                          meta={'sigma': problem.phantom.sigma, 'percentile': problem.phantom.percentile}),
        'trajectory': save_trajectory(item_dir / 'trajectory.f8', model.plan.traj),
        'dc': write_array(item_dir / 'dc.f8', model.dc.w, '<f8',
                          meta={'iterations': model.dc.iterations, 'residual': model.dc.residual,
                                'clamped': model.dc.clamped}),
        'maps': save_maps(item_dir / 'maps.c16', model.maps),
        'data': write_array(item_dir / 'data.c16', problem.data, '<c16'),
        'x_b': write_array(item_dir / 'x_b.c16', problem.x_b, '<c16'),
    }
    root = item_dir.parent.parent
    return {key: str(path.relative_to(root)) for key, path in files.items()}


def problem_record(item_id, split, problem, files):
    model = problem.model
    return {
        'id': item_id,
        'split': split,
        'seed': problem.seed,
        'side': model.side,
        'n_spokes': model.plan.traj.n_spokes,
        'n_coils': model.n_coils,
        'af': problem.af,
        'sigma': problem.phantom.sigma,
        'dr': problem.phantom.dr,
        'kappa': model.kappa,
        'tau': list(problem.tau),
        'norm_once': list(problem.norm_once),
        'norm_twice': list(problem.norm_twice),
        'files': files,
        'oversampling': model.plan.oversampling,
        'kernel_width': model.plan.kernel_width,
    }


def _generate_item(out_dir, config, entry):
    item_id, split, seed, n_spokes, n_coils = entry
    model = build_measurement(
        config['side'], n_spokes, n_coils, seed,
        config['oversampling'], config['kernel_width'], config['dc_iters'],
    )
    phantom = make_phantom(config['side'], config['n_ellipses'], seed, config['percentile'])
    problem = simulate_acquisition(phantom, model, seed)
    files = write_problem(Path(out_dir) / 'items' / item_id, problem)
    logger.info("Wrote %s (N_s=%d, L=%d, DR=%.1f)", item_id, n_spokes, n_coils, phantom.dr)
    return problem_record(item_id, split, problem, files)


def make_dataset(config, out_dir, workers=None):
    """
    Simulate and persist a dataset of inverse problems.

    Items are generated independently (in parallel when ``workers`` > 1); the
    manifest is written once, after every item succeeded.

    Args:
        config (DatasetConfig or dict): Generation settings.
        out_dir (path): Output directory.
        workers (int, optional): Thread count. Defaults to the configured value.

    Returns:
        dict: The validated manifest.

    Raises:
        DataError: If the config is invalid or any item failed (no manifest is written).
    """
    if isinstance(config, DatasetConfig):
        config = config.validated()
    else:
        config = validate(DatasetConfigSerializer, config)
    workers = int(resolve(workers, 'WORKERS'))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = _item_plan(config, config['seed'])

    def run(entry):
        try:
            return entry[0], _generate_item(out_dir, config, entry), None
        except (OSError, ValueError, DataError) as exc:
            return entry[0], None, exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, entries))
    else:
        results = [run(entry) for entry in entries]

    failures = {item_id: exc for item_id, _, exc in results if exc is not None}
    if failures:
        for item_id, exc in failures.items():
            logger.error("Item %s failed: %s", item_id, exc)
        raise DataError(f"{len(failures)} of {len(entries)} items failed; no manifest written")

    manifest = {
        'version': MANIFEST_VERSION,
        'rng': RNG_ALGORITHM,
        'master_seed': config['seed'],
        'config': config,
        'items': [record for _, record, _ in results],
        'provenance': provenance(config, seeds={e[0]: e[2] for e in entries}, command='gen_data'),
    }
    manifest = write_json(out_dir / 'manifest.json', manifest, DatasetManifestSerializer, context={'root': out_dir})
    logger.info("Dataset of %d items written to %s", len(entries), out_dir)
    return manifest


def load_manifest(root):
    """Read and validate ``root/manifest.json`` (including that referenced files exist)."""
    root = Path(root)
    return read_json(root / 'manifest.json', DatasetManifestSerializer, context={'root': root})


def load_problem(root, record):
    """
    Rebuild an InverseProblem from its manifest record.

    The NUFFT plan is recomputed from the stored trajectory with the dataset's
    gridding parameters; DC weights, maps, κ and data are read back.
    """
    root = Path(root)
    files = record['files']
    traj = load_trajectory(root / files['trajectory'])
    gt, gt_meta = read_array(root / files['gt'], with_meta=True)
    plan = make_plan(traj, record['side'], record.get('oversampling'), record.get('kernel_width'))
    model = MeasurementModel(
        load_maps(root / files['maps']),
        plan,
        DcWeights(read_array(root / files['dc'])),
        record['kappa'],
    )
    phantom = Phantom(gt, record['sigma'], record['seed'], gt_meta.get('percentile', toolkit_settings.PERCENTILE))
    return InverseProblem(
        phantom, model, tuple(record['tau']), tuple(record['norm_once']), tuple(record['norm_twice']),
        read_array(root / files['data']), read_array(root / files['x_b']), record['seed'],
    )
