"""
Batch evaluation of a trained series on one dataset split: per-item scores
and timings, per-iteration curves, and a per-AF summary.
"""

import csv
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import metrics
from .exceptions import DataError
from .r2d2 import r2d2_infer
from .simulate import load_manifest, load_problem

logger = logging.getLogger(__name__)

ITEM_COLUMNS = (
    'id', 'n_spokes', 'n_coils', 'af', 'dr', 'psnr_xb', 'ssim_xb', 'psnr', 'ssim', 'ssim_windowed',
    'rdr', 'iterations', 'best_iteration', 't_load', 't_infer', 't_residual', 't_total',
)
CURVE_COLUMNS = ('id', 'af', 'dr', 'iteration', 'psnr', 'ssim', 'rdr')
SUMMARY_COLUMNS = (
    'af', 'n_spokes', 'count', 'psnr_mean', 'psnr_std', 'ssim_mean', 'ssim_std',
    'rdr_mean', 't_load', 't_infer', 't_residual', 't_total',
)


@dataclass
class ItemScore:
    id: str
    n_spokes: int
    n_coils: int
    af: float
    dr: float
    psnr_xb: float
    ssim_xb: float
    psnr: float
    ssim: float
    ssim_windowed: float
    rdr: float
    iterations: int
    best_iteration: int
    t_load: float
    t_infer: float
    t_residual: float
    t_total: float


def evaluate_split(series, dataset_root, split='test', max_iters=None, windowed=False):
    """
    Reconstruct every item of ``split`` and score it.

    Returns:
        tuple: (list of ItemScore, list of per-iteration curve rows).

    Raises:
        DataError: If the split is empty.
    """
    manifest = load_manifest(dataset_root)
    records = [r for r in manifest['items'] if r['split'] == split]
    if not records:
        raise DataError(f"{dataset_root} has no '{split}' items to evaluate")

    scores, curves = [], []
    for record in records:
        start = time.perf_counter()
        problem = load_problem(dataset_root, record)
        t_load = time.perf_counter() - start
        result = r2d2_infer(series, problem.x_b, problem.model, max_iters, gt=problem.phantom.image)
        t_total = time.perf_counter() - start
        gt = problem.phantom.image
        first, last = result.trace[0], result.trace[-1]
        scores.append(ItemScore(
            id=record['id'], n_spokes=record['n_spokes'], n_coils=record['n_coils'],
            af=record['af'], dr=record['dr'],
            psnr_xb=first.psnr, ssim_xb=first.ssim, psnr=last.psnr, ssim=last.ssim,
            ssim_windowed=metrics.ssim_windowed(gt, result.x) if windowed else None,
            rdr=last.rdr, iterations=last.iteration, best_iteration=result.best_iteration,
            t_load=t_load, t_infer=result.timings['t_infer'], t_residual=result.timings['t_residual'],
            t_total=t_total,
        ))
        for row in result.trace:
            curves.append({
                'id': record['id'], 'af': record['af'], 'dr': record['dr'],
                'iteration': row.iteration, 'psnr': row.psnr, 'ssim': row.ssim, 'rdr': row.rdr,
            })
        logger.debug("%s: PSNR %.3f dB after %d iteration(s)", record['id'], last.psnr, last.iteration)
    return scores, curves


def summarize_by_af(scores):
    """Mean and (population) std of PSNR/SSIM per acceleration factor, highest AF first."""
    groups = {}
    for score in scores:
        groups.setdefault((score.af, score.n_spokes), []).append(score)
    rows = []
    for (af, n_spokes), group in sorted(groups.items(), key=lambda item: -item[0][0]):
        psnrs = np.array([s.psnr for s in group])
        ssims = np.array([s.ssim for s in group])
        rows.append({
            'af': af,
            'n_spokes': n_spokes,
            'count': len(group),
            'psnr_mean': float(np.mean(psnrs)),
            'psnr_std': float(np.std(psnrs)),
            'ssim_mean': float(np.mean(ssims)),
            'ssim_std': float(np.std(ssims)),
            'rdr_mean': float(np.mean([s.rdr for s in group])),
            't_load': float(np.mean([s.t_load for s in group])),
            't_infer': float(np.mean([s.t_infer for s in group])),
            't_residual': float(np.mean([s.t_residual for s in group])),
            't_total': float(np.mean([s.t_total for s in group])),
        })
    return rows


def format_table(summary):
    """Human-readable per-AF table."""
    lines = [f"{'AF':>7} {'N_s':>5} {'n':>4} {'PSNR (dB)':>16} {'SSIM':>16} {'t_total (s)':>12}"]
    for row in summary:
        lines.append(
            f"{row['af']:7.2f} {row['n_spokes']:5d} {row['count']:4d} "
            f"{row['psnr_mean']:8.2f} ± {row['psnr_std']:5.2f} "
            f"{row['ssim_mean']:8.4f} ± {row['ssim_std']:5.4f} {row['t_total']:12.4f}"
        )
    return '\n'.join(lines)


def write_rows(path, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='') as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            row = asdict(row) if isinstance(row, ItemScore) else row
            writer.writerow({key: '' if row[key] is None else row[key] for key in columns})
    return path
