from pathlib import Path

from ...evaluation import (
    CURVE_COLUMNS, ITEM_COLUMNS, SUMMARY_COLUMNS, evaluate_split, format_table, summarize_by_af, write_rows,
)
from ...r2d2 import ModuleSeries
from ..base import ToolkitCommand


class Command(ToolkitCommand):
    help = 'Evaluate a trained series on a dataset split and write per-AF tables and curves.'

    def add_arguments(self, parser):
        parser.add_argument('--series', required=True, help='Series directory.')
        parser.add_argument('--dataset', required=True, help='Dataset directory.')
        parser.add_argument('--out', required=True, help='Report directory.')
        parser.add_argument('--split', choices=['train', 'val', 'test'], default='test')
        parser.add_argument('--max-iters', type=int, default=None)
        parser.add_argument('--windowed-ssim', action='store_true',
                            help='Also report the Gaussian-windowed SSIM of the final estimate.')

    def run(self, **options):
        series = ModuleSeries.load(options['series'])
        scores, curves = evaluate_split(
            series, options['dataset'], options['split'], options['max_iters'], options['windowed_ssim'],
        )
        summary = summarize_by_af(scores)
        out = Path(options['out'])
        write_rows(out / 'items.csv', ITEM_COLUMNS, scores)
        write_rows(out / 'curves.csv', CURVE_COLUMNS, curves)
        write_rows(out / 'summary.csv', SUMMARY_COLUMNS, summary)
        table = format_table(summary)
        (out / 'summary.txt').write_text(table + '\n')
        self.write_provenance(out / 'provenance.json', {
            'series': str(options['series']),
            'dataset': str(options['dataset']),
            'split': options['split'],
            'max_iters': options['max_iters'],
        })
        self.stdout.write(table)
