"""
The R2D2 series: residual computation, per-iteration normalization,
series inference and sequential training.

Starting from x⁽⁰⁾ = 0 and r⁽⁰⁾ = x_b, module i maps the normalized pair
(x⁽ⁱ⁻¹⁾, r⁽ⁱ⁻¹⁾) to an image update that is denormalized and added to the
estimate. The residual fed to later modules is |x_b| − |κPx| in the default
'magnitude' mode and x_b − κPx in 'complex' mode.
"""

import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .coil import normal_apply
from .conf import resolve
from .exceptions import DataError, DivergenceError, NonFiniteError, NumericalError
from .nn import AdamState, Architecture, adam_step, apply, backward, forward, init_params, l1_loss
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .serializers import SeriesManifestSerializer
from .simulate import load_manifest, load_problem
from .storage import file_hash, provenance, read_array, read_json, write_array, write_json

logger = logging.getLogger(__name__)

SERIES_VERSION = 1
SERIES_FILE = 'series.json'
NORMALIZATION = 'mean-modulus'
TRACE_HEADER = ('iteration', 'psnr', 'ssim', 'rdr', 'alpha')
STAGES_HEADER = ('stage', 'epochs', 'train_loss', 'val_psnr', 'val_ssim', 'val_rdr')
TELESCOPING_TOL = 1e-12

CONTINUE = 'continue'
STOP = 'stop'

IN_CHANNELS = {'magnitude': 3, 'complex': 4}


def residual(x_b, model, x):
    """Back-projected data residual r = x_b − κPx."""
    if np.shape(x_b) != np.shape(x):
        raise ValueError(f"x_b shape {np.shape(x_b)} does not match x shape {np.shape(x)}")
    return x_b - model.kappa * normal_apply(model, x)


def magnitude_residual(x_b, model, x):
    """Real residual |x_b| − |κPx|, pixelwise."""
    if np.shape(x_b) != np.shape(x):
        raise ValueError(f"x_b shape {np.shape(x_b)} does not match x shape {np.shape(x)}")
    return np.abs(x_b) - np.abs(model.kappa * normal_apply(model, x))


def residual_pair(x_b, model, x):
    """Complex and magnitude residuals from a single application of P."""
    projected = model.kappa * normal_apply(model, x)
    return x_b - projected, np.abs(x_b) - np.abs(projected)


def normalization_factor(x_b, x, iteration):
    """
    α⁽ⁱ⁾: mean modulus of x⁽ⁱ⁻¹⁾, or of x_b for the first module.

    A zero estimate (every earlier module predicted no update) falls back to
    the mean modulus of x_b.
    """
    alpha = float(np.mean(np.abs(x))) if iteration > 1 else 0.0
    if alpha == 0.0:
        alpha = float(np.mean(np.abs(x_b)))
    if not alpha > 0:
        raise ValueError("cannot normalize: the back-projected image is zero")
    return alpha


def module_input(x_b, x, r, iteration, residual_mode):
    """
    Unnormalized channel stack of module ``iteration``.

    Magnitude mode: [0, Re x_b, Im x_b] for the first module, then
    [Re x, Im x, r]. Complex mode: [0, 0, Re x_b, Im x_b], then
    [Re x, Im x, Re r, Im r].
    """
    zero = np.zeros(x_b.shape)
    if residual_mode == 'magnitude':
        if iteration == 1:
            return np.stack([zero, x_b.real, x_b.imag])
        return np.stack([x.real, x.imag, np.real(r)])
    if residual_mode == 'complex':
        if iteration == 1:
            return np.stack([zero, zero, x_b.real, x_b.imag])
        return np.stack([x.real, x.imag, r.real, r.imag])
    raise ValueError(f"unknown residual mode {residual_mode!r}")


def as_channels(image):
    return np.stack([image.real, image.imag])


def module_update(params, x_b, x, r, iteration, residual_mode):
    """
    Denormalized update α·G(inputs/α) of one module.

    Returns:
        tuple: (complex update image, α).
    """
    alpha = normalization_factor(x_b, x, iteration)
    inputs = module_input(x_b, x, r, iteration, residual_mode) / alpha
    out = apply(params, inputs[None])[0]
    return alpha * (out[0] + 1j * out[1]), alpha


@dataclass
class ModuleSeries:
    """
    An ordered list of trained modules and its provenance.

    Attributes:
        modules (list): ModuleParams, one per stage.
        residual_mode (str): 'magnitude' or 'complex'.
        dataset_hash (str): sha256 of the training manifest.
        seed (int): Training seed.
        stages (list): Per-stage records (epochs, loss, validation metrics).
        stopped_early (bool): Whether the stopping rule ended training.
        provenance (dict): Version, config hash and seeds of the training run.
    """

    modules: list
    residual_mode: str = 'magnitude'
    dataset_hash: str = ''
    seed: int = 0
    stages: list = field(default_factory=list)
    stopped_early: bool = False
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.modules:
            raise ValueError("a series needs at least one module")
        if self.residual_mode not in IN_CHANNELS:
            raise ValueError(f"unknown residual mode {self.residual_mode!r}")
        families = {m.arch for m in self.modules}
        if len(families) != 1:
            raise ValueError(f"modules of a series must share one architecture family, got {sorted(families)}")
        for params in self.modules:
            if params.architecture.in_channels != IN_CHANNELS[self.residual_mode]:
                raise ValueError(
                    f"{self.residual_mode} residuals need {IN_CHANNELS[self.residual_mode]} input channels"
                )

    @property
    def architecture(self):
        return self.modules[0].architecture

    @property
    def n_stages(self):
        return len(self.modules)

    def save(self, directory):
        """Write one checkpoint per stage and the validated ``series.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        records = []
        for stage, params in enumerate(self.modules, start=1):
            name = f'stage_{stage:02d}.npz'
            save_checkpoint(directory / name, params)
            record = self.stages[stage - 1] if stage <= len(self.stages) else {}
            records.append({
                'stage': stage,
                'checkpoint': name,
                'epochs': record.get('epochs', 0),
                'train_loss': record.get('train_loss'),
                'val_psnr': record.get('val_psnr'),
                'val_ssim': record.get('val_ssim'),
                'val_rdr': record.get('val_rdr'),
            })
        write_json(directory / SERIES_FILE, {
            'version': SERIES_VERSION,
            'architecture': self.architecture.to_dict(),
            'residual_mode': self.residual_mode,
            'normalization': NORMALIZATION,
            'dataset_hash': self.dataset_hash,
            'seed': self.seed,
            'stopped_early': self.stopped_early,
            'stages': records,
            'provenance': self.provenance,
        }, SeriesManifestSerializer)
        return directory

    @classmethod
    def load(cls, directory):
        """
        Raises:
            DataError: If the manifest is invalid or a checkpoint disagrees with it.
        """
        directory = Path(directory)
        manifest = read_json(directory / SERIES_FILE, SeriesManifestSerializer)
        if manifest['normalization'] != NORMALIZATION:
            raise DataError(f"unsupported normalization {manifest['normalization']!r}")
        declared = Architecture(**manifest['architecture'])
        modules = []
        for record in manifest['stages']:
            params = load_checkpoint(directory / record['checkpoint'])
            if params.architecture != declared:
                raise DataError(f"{record['checkpoint']} does not match the series architecture")
            modules.append(params)
        try:
            return cls(
                modules, manifest['residual_mode'], manifest['dataset_hash'], manifest['seed'],
                manifest['stages'], manifest['stopped_early'], manifest['provenance'],
            )
        except ValueError as exc:
            raise DataError(f"{directory} holds an inconsistent series: {exc}") from exc


@dataclass(frozen=True)
class TraceRow:
    """One iteration of a reconstruction; row 0 describes the back-projection."""

    iteration: int
    x: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    alpha: float
    rdr: float
    psnr: float = None
    ssim: float = None


@dataclass
class Reconstruction:
    """
    Output of ``r2d2_infer``.

    Attributes:
        x (ndarray): Final estimate x⁽ᴵ⁾ (x_b when no module ran).
        trace (list): TraceRow per iteration, starting with iteration 0.
        updates (list): Denormalized module outputs, in iteration order.
        timings (dict): Seconds spent in module inference and residual computation.
    """

    x: np.ndarray
    trace: list
    updates: list
    timings: dict = field(default_factory=dict)

    @property
    def best_iteration(self):
        """Iteration of highest PSNR, when a ground truth was given."""
        scored = [row for row in self.trace if row.psnr is not None]
        if not scored:
            return None
        return max(scored, key=lambda row: row.psnr).iteration


def check_telescoping(x, updates):
    """
    Assert x⁽ᴵ⁾ equals the sum of the module updates taken in iteration order.

    Raises:
        NumericalError: If the ℓ∞ mismatch exceeds 1e-12·‖x⁽ᴵ⁾‖∞.
    """
    if not updates:
        return 0.0
    total = np.zeros_like(updates[0])
    for update in updates:
        total = total + update
    mismatch = float(np.max(np.abs(x - total)))
    if mismatch > TELESCOPING_TOL * float(np.max(np.abs(x))):
        raise NumericalError(f"telescoping identity violated: mismatch {mismatch:.3e}")
    return mismatch


def r2d2_infer(series, x_b, model, max_iters=None, gt=None):
    """
    Run the first ``max_iters`` modules of ``series`` on one problem.

    Args:
        series (ModuleSeries): Trained modules.
        x_b (ndarray): Back-projected image.
        model (MeasurementModel): Measurement model that produced x_b.
        max_iters (int, optional): Modules to run, ≤ I. Defaults to I.
        gt (ndarray, optional): Ground truth; adds PSNR and SSIM to the trace.

    Returns:
        Reconstruction: Final estimate and per-iteration trace.

    Raises:
        ValueError: If ``max_iters`` exceeds the series length or the image
            side does not match the modules.
        NonFiniteError: If an iterate holds NaN or infinity, naming the iteration.
    """
    max_iters = series.n_stages if max_iters is None else int(max_iters)
    if not 0 <= max_iters <= series.n_stages:
        raise ValueError(f"max_iters must lie in [0, {series.n_stages}], got {max_iters}")
    factor = 2 ** series.architecture.depth
    if x_b.shape[0] % factor:
        raise ValueError(f"image side {x_b.shape[0]} is not divisible by 2^depth = {factor}")

    mode = series.residual_mode

    def row(iteration, x_shown, r, alpha, rdr):
        if gt is None:
            return TraceRow(iteration, x_shown, r, alpha, rdr)
        return TraceRow(iteration, x_shown, r, alpha, rdr, metrics.psnr(gt, x_shown), metrics.ssim(gt, x_shown))

    x = np.zeros_like(x_b)
    r = x_b if mode == 'complex' else np.abs(x_b)
    trace = [row(0, x_b, r, None, 1.0)]
    updates = []
    t_infer = t_residual = 0.0
    for iteration in range(1, max_iters + 1):
        tick = time.perf_counter()
        update, alpha = module_update(series.modules[iteration - 1], x_b, x, r, iteration, mode)
        t_infer += time.perf_counter() - tick
        if not np.all(np.isfinite(update)):
            raise NonFiniteError(f"non-finite estimate at iteration {iteration}", name=f'iteration {iteration}')
        x = x + update
        updates.append(update)

        tick = time.perf_counter()
        r_complex, r_magnitude = residual_pair(x_b, model, x)
        t_residual += time.perf_counter() - tick
        r = r_complex if mode == 'complex' else r_magnitude
        trace.append(row(iteration, x, r, alpha, metrics.rdr(x_b, r_complex)))
        logger.debug("iteration %d: alpha=%.4e rdr=%.4e", iteration, alpha, trace[-1].rdr)

    check_telescoping(x, updates)
    final = x if updates else x_b
    return Reconstruction(final, trace, updates, {'t_infer': t_infer, 't_residual': t_residual})


def write_trace_csv(path, reconstruction):
    """Write the trace with header iteration,psnr,ssim,rdr,alpha; re-checks the telescoping identity."""
    check_telescoping(reconstruction.x, reconstruction.updates)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for row in reconstruction.trace:
            writer.writerow([row.iteration, _cell(row.psnr), _cell(row.ssim), _cell(row.rdr), _cell(row.alpha)])
    return path


def _cell(value):
    if value is None:
        return ''
    return repr(float(value))


def stopping_check(history, patience=2, min_delta_psnr=0.05, min_delta_ssim=0.001):
    """
    Decide whether sequential training should stop.

    Args:
        history (list): (PSNR, SSIM) validation pairs, one per trained stage.
        patience (int): Consecutive non-improving stages that trigger a stop.

    Returns:
        str: ``STOP`` when neither metric beat its running best by more than
        its min delta for ``patience`` consecutive stages, else ``CONTINUE``.
    """
    if not history:
        raise ValueError("stopping_check needs at least one stage")
    best_psnr, best_ssim = history[0]
    stalled = 0
    for psnr, ssim in history[1:]:
        improved = psnr > best_psnr + min_delta_psnr or ssim > best_ssim + min_delta_ssim
        best_psnr, best_ssim = max(best_psnr, psnr), max(best_ssim, ssim)
        stalled = 0 if improved else stalled + 1
    return STOP if stalled >= patience else CONTINUE


@dataclass(frozen=True)
class TrainingConfig:
    """
    Hyper-parameters of ``train_series``.

    Attributes:
        epochs (int): Epochs per stage.
        batch_size (int): Mini-batch size.
        lr (float): Adam learning rate.
        patience (int): Stopping-rule patience, in stages.
        min_delta_psnr (float): PSNR improvement (dB) that counts as progress.
        min_delta_ssim (float): SSIM improvement that counts as progress.
        residual_mode (str): 'magnitude' or 'complex'; defaults to the configured value.
        seed (int): Seed of initialization and shuffling.
        workers (int): Threads for the per-item state updates.
    """

    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-4
    patience: int = 2
    min_delta_psnr: float = 0.05
    min_delta_ssim: float = 0.001
    residual_mode: str = None
    seed: int = 0
    workers: int = None

    def resolved(self):
        return replace(
            self,
            residual_mode=resolve(self.residual_mode, 'RESIDUAL_MODE'),
            workers=int(resolve(self.workers, 'WORKERS')),
        )

    def as_dict(self):
        return {
            'epochs': self.epochs, 'batch_size': self.batch_size, 'lr': self.lr,
            'patience': self.patience, 'min_delta_psnr': self.min_delta_psnr,
            'min_delta_ssim': self.min_delta_ssim, 'residual_mode': self.residual_mode,
            'seed': self.seed,
        }


@dataclass
class ItemState:
    """x⁽ⁱ⁾ and r⁽ⁱ⁾ of one dataset item after stage i."""

    x: np.ndarray
    r: np.ndarray


def initial_state(problem, residual_mode):
    x_b = problem.x_b
    return ItemState(np.zeros_like(x_b), x_b if residual_mode == 'complex' else np.abs(x_b))


def _state_paths(workdir, stage, item_id):
    base = Path(workdir) / 'states' / f'stage_{stage:02d}'
    return base / f'{item_id}.x.c16', base / f'{item_id}.r.c16'


def save_state(workdir, stage, item_id, state):
    x_path, r_path = _state_paths(workdir, stage, item_id)
    write_array(x_path, state.x, '<c16')
    write_array(r_path, state.r.astype(np.complex128), '<c16', meta={'real': bool(np.isrealobj(state.r))})


def load_state(workdir, stage, item_id):
    x_path, r_path = _state_paths(workdir, stage, item_id)
    r, meta = read_array(r_path, with_meta=True)
    return ItemState(read_array(x_path), r.real.copy() if meta.get('real') else r)


def stage_batch(problems, states, stage, residual_mode):
    """
    Normalized inputs and targets of stage ``stage`` for every item.

    Returns:
        tuple: inputs (K, C, n, n), targets (K, 2, n, n) holding (x⋆ − x⁽ⁱ⁻¹⁾)/α, and α (K,).
    """
    inputs, targets, alphas = [], [], []
    for problem, state in zip(problems, states):
        alpha = normalization_factor(problem.x_b, state.x, stage)
        inputs.append(module_input(problem.x_b, state.x, state.r, stage, residual_mode) / alpha)
        targets.append(as_channels(problem.phantom.image - state.x) / alpha)
        alphas.append(alpha)
    return np.stack(inputs), np.stack(targets), np.asarray(alphas)


def dataset_loss(params, inputs, targets, batch_size=16):
    """Mean per-item L1 loss of ``params`` over a stage dataset."""
    total = 0.0
    for start in range(0, inputs.shape[0], batch_size):
        pred = apply(params, inputs[start:start + batch_size])
        loss, _ = l1_loss(pred, targets[start:start + batch_size])
        total += loss * pred.shape[0]
    return total / inputs.shape[0]


def advance_state(params, problem, state, stage, residual_mode):
    """Apply module ``stage`` to one item: x⁽ⁱ⁾ = x⁽ⁱ⁻¹⁾ + update, then its new residual."""
    update, _ = module_update(params, problem.x_b, state.x, state.r, stage, residual_mode)
    if not np.all(np.isfinite(update)):
        raise NonFiniteError(f"non-finite estimate after stage {stage}", name=f'stage {stage}')
    x = state.x + update
    r_complex, r_magnitude = residual_pair(problem.x_b, problem.model, x)
    return ItemState(x, r_complex if residual_mode == 'complex' else r_magnitude), r_complex


def train_stage(params, inputs, targets, config, stage, workdir):
    """
    Minimize the L1 loss of one module with Adam.

    Returns:
        tuple: Trained ModuleParams and the per-epoch mean training loss.

    Raises:
        DivergenceError: If the loss or a gradient goes non-finite; the last
            good parameters are saved and their checkpoint attached.
    """
    rng = np.random.default_rng([config.seed, stage])
    tensors = params.tensors
    state = AdamState.zeros_like(tensors)
    good = params
    losses = []
    n = inputs.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        try:
            for start in range(0, n, config.batch_size):
                idx = order[start:start + config.batch_size]
                current = params.with_tensors(tensors)
                pred, tape = forward(current, inputs[idx])
                loss, grad = l1_loss(pred, targets[idx])
                if not math.isfinite(loss):
                    raise NonFiniteError(f"non-finite loss in epoch {epoch + 1}", name='loss')
                _, grads = backward(current, tape, grad)
                tensors, state = adam_step(tensors, grads, state, lr=config.lr)
                epoch_loss += loss * len(idx)
        except NonFiniteError as exc:
            checkpoint = save_checkpoint(Path(workdir) / f'stage_{stage:02d}_last_good.npz', good)
            raise DivergenceError(
                f"stage {stage} diverged in epoch {epoch + 1}: {exc}", stage=stage, checkpoint=checkpoint,
            ) from exc
        good = params.with_tensors(tensors)
        losses.append(epoch_loss / n)
        logger.debug("stage %d epoch %d: loss %.6f", stage, epoch + 1, losses[-1])
    return good, losses


def _map_items(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def validation_metrics(problems, states, complex_residuals):
    """Mean PSNR, SSIM and RDR of the current validation estimates."""
    if not problems:
        return None, None, None
    psnrs = [metrics.psnr(p.phantom.image, s.x) for p, s in zip(problems, states)]
    ssims = [metrics.ssim(p.phantom.image, s.x) for p, s in zip(problems, states)]
    rdrs = [metrics.rdr(p.x_b, r) for p, r in zip(problems, complex_residuals)]
    return float(np.mean(psnrs)), float(np.mean(ssims)), float(np.mean(rdrs))


def write_stages_csv(path, stages):
    with open(path, 'w', newline='') as fh:
        writer = csv.writer(fh)
        writer.writerow(STAGES_HEADER)
        for record in stages:
            writer.writerow([record.get(key) if record.get(key) is not None else '' for key in STAGES_HEADER])


def train_series(dataset_root, architecture, n_stages, config=None, out_dir=None, resume=False):
    """
    Train an R2D2 series stage by stage.

    Stage i trains module i on (x⋆, x⁽ⁱ⁻¹⁾, r⁽ⁱ⁻¹⁾) triplets normalized by
    α⁽ⁱ⁻¹⁾, warm-started from module i − 1. After the stage, every train and
    validation item is advanced to x⁽ⁱ⁾, r⁽ⁱ⁾ and persisted under
    ``out_dir/states``; the series manifest and ``stages.csv`` are rewritten
    so training can resume from the last completed stage.

    Args:
        dataset_root (path): Directory holding ``manifest.json``.
        architecture (Architecture): Module shapes; ``in_channels`` is set from the residual mode.
        n_stages (int): Maximum number of stages I ≥ 1.
        config (TrainingConfig, optional): Hyper-parameters.
        out_dir (path): Series directory.
        resume (bool): Continue from the series already in ``out_dir``.

    Returns:
        ModuleSeries: The trained (possibly early-stopped) series.

    Raises:
        DataError: If the dataset has no training items or the resume state is missing.
        DivergenceError: If a stage diverges.
    """
    if n_stages < 1:
        raise ValueError("n_stages must be at least 1")
    config = (config or TrainingConfig()).resolved()
    mode = config.residual_mode
    architecture = replace(architecture, in_channels=IN_CHANNELS[mode], out_channels=2)
    dataset_root = Path(dataset_root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    manifest = load_manifest(dataset_root)
    train_records = [r for r in manifest['items'] if r['split'] == 'train']
    val_records = [r for r in manifest['items'] if r['split'] == 'val']
    if not train_records:
        raise DataError(f"{dataset_root} has no training items")
    dataset_hash = file_hash(dataset_root / 'manifest.json')

    train_problems = _map_items(lambda r: load_problem(dataset_root, r), train_records, config.workers)
    val_problems = _map_items(lambda r: load_problem(dataset_root, r), val_records, config.workers)
    records = train_records + val_records
    problems = train_problems + val_problems

    modules, stage_records, start = [], [], 1
    if resume and (out_dir / SERIES_FILE).exists():
        series = ModuleSeries.load(out_dir)
        if series.dataset_hash != dataset_hash:
            raise DataError("cannot resume: the series was trained on a different dataset")
        if series.architecture != architecture or series.residual_mode != mode:
            raise DataError("cannot resume: architecture or residual mode differs from the saved series")
        if series.stopped_early:
            logger.info("Series in %s already stopped early; nothing to resume", out_dir)
            return series
        modules, stage_records = list(series.modules), list(series.stages)
        start = len(modules) + 1
        states = [load_state(out_dir, start - 1, r['id']) for r in records]
        logger.info("Resuming after stage %d from %s", start - 1, out_dir)
    else:
        states = [initial_state(p, mode) for p in problems]

    n_train = len(train_records)
    history = [(s['val_psnr'], s['val_ssim']) for s in stage_records if s.get('val_psnr') is not None]
    stopped = False
    run_provenance = provenance(
        {'architecture': architecture.to_dict(), 'training': config.as_dict(), 'n_stages': n_stages},
        seeds={'training': config.seed}, command='train',
    )

    for stage in range(start, n_stages + 1):
        inputs, targets, _ = stage_batch(train_problems, states[:n_train], stage, mode)
        params = modules[-1].copy() if modules else init_params(architecture, seed=config.seed)
        initial_loss = dataset_loss(params, inputs, targets, config.batch_size)
        logger.info("Stage %d: %d training items, initial loss %.6f", stage, n_train, initial_loss)
        params, losses = train_stage(params, inputs, targets, config, stage, out_dir)
        modules.append(params)

        advanced = _map_items(
            lambda pair: advance_state(params, pair[0], pair[1], stage, mode),
            list(zip(problems, states)), config.workers,
        )
        states = [state for state, _ in advanced]
        for record, state in zip(records, states):
            save_state(out_dir, stage, record['id'], state)

        val_psnr, val_ssim, val_rdr = validation_metrics(
            val_problems, states[n_train:], [r for _, r in advanced[n_train:]],
        )
        stage_records.append({
            'stage': stage,
            'epochs': config.epochs,
            'train_loss': losses[-1] if losses else initial_loss,
            'val_psnr': val_psnr,
            'val_ssim': val_ssim,
            'val_rdr': val_rdr,
        })
        if val_psnr is not None:
            logger.info("Stage %d trained: val PSNR %.3f dB, SSIM %.4f, RDR %.4f", stage, val_psnr, val_ssim, val_rdr)
            history.append((val_psnr, val_ssim))
            stopped = stopping_check(
                history, config.patience, config.min_delta_psnr, config.min_delta_ssim,
            ) == STOP
        series = ModuleSeries(
            modules, mode, dataset_hash, config.seed, stage_records, stopped, run_provenance,
        )
        series.save(out_dir)
        write_stages_csv(out_dir / 'stages.csv', stage_records)
        _append_training_log(out_dir, stage, losses, config)
        if stopped:
            logger.warning("Validation metrics stalled for %d stages; stopping after stage %d", config.patience, stage)
            break

    return ModuleSeries.load(out_dir)


def _append_training_log(out_dir, stage, losses, config):
    path = Path(out_dir) / 'training_log.json'
    log = read_json(path) if path.exists() else {'hyperparameters': config.as_dict(), 'stages': []}
    log['stages'] = [entry for entry in log['stages'] if entry['stage'] != stage]
    log['stages'].append({'stage': stage, 'epoch_losses': losses})
    write_json(path, log)
