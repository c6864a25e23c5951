from pathlib import Path

import numpy as np

from ...exceptions import DataError
from ...r2d2 import ModuleSeries, r2d2_infer, write_trace_csv
from ...simulate import load_manifest, load_problem
from ...storage import write_array, write_pgm
from ..base import ToolkitCommand, comma_list

EMIT_CHOICES = ('pgm', 'csv', 'raw')


class Command(ToolkitCommand):
    """
    Reconstruct one problem of a dataset with a trained series.

    Writes ``iter_XX.pgm`` (|x⁽ⁱ⁾|, iteration 0 being the back-projection),
    ``trace.csv`` and the raw final estimate, as selected by ``--emit``.
    """
    help = 'Run R2D2 inference on one dataset item.'

    def add_arguments(self, parser):
        parser.add_argument('--series', required=True, help='Series directory.')
        parser.add_argument('--dataset', required=True, help='Dataset directory.')
        parser.add_argument('--problem', required=True, help='Item id in the dataset manifest.')
        parser.add_argument('--out', required=True, help='Output directory.')
        parser.add_argument('--max-iters', type=int, default=None)
        parser.add_argument('--emit', type=comma_list, default=['pgm', 'csv'],
                            help='Comma-separated subset of pgm,csv,raw.')

    def run(self, **options):
        emit = options['emit']
        unknown = sorted(set(emit) - set(EMIT_CHOICES))
        if unknown:
            raise ValueError(f"unknown --emit value(s): {unknown}")

        series = ModuleSeries.load(options['series'])
        manifest = load_manifest(options['dataset'])
        records = {record['id']: record for record in manifest['items']}
        if options['problem'] not in records:
            raise DataError(f"no item {options['problem']!r} in {options['dataset']}")
        problem = load_problem(options['dataset'], records[options['problem']])
        factor = 2 ** series.architecture.depth
        if problem.model.side % factor:
            raise DataError(
                f"image side {problem.model.side} does not fit a depth-{series.architecture.depth} series"
            )

        result = r2d2_infer(series, problem.x_b, problem.model, options['max_iters'], gt=problem.phantom.image)
        out = Path(options['out'])
        out.mkdir(parents=True, exist_ok=True)
        if 'pgm' in emit:
            for row in result.trace:
                write_pgm(out / f'iter_{row.iteration:02d}.pgm', np.abs(row.x))
        if 'csv' in emit:
            write_trace_csv(out / 'trace.csv', result)
        if 'raw' in emit:
            write_array(out / 'x_final.c16', result.x, '<c16')
            write_array(out / 'x_b.c16', problem.x_b, '<c16')
        self.write_provenance(out / 'provenance.json', {
            'series': str(options['series']),
            'dataset': str(options['dataset']),
            'problem': options['problem'],
            'max_iters': options['max_iters'],
            'emit': emit,
        }, seeds={'problem': problem.seed})

        last = result.trace[-1]
        self.stdout.write(self.style.SUCCESS(
            f"{options['problem']}: {len(result.trace) - 1} iteration(s), "
            f"PSNR {last.psnr:.3f} dB, SSIM {last.ssim:.4f}, RDR {last.rdr:.4f}"
        ))
