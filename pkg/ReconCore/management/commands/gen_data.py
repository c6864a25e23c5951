from pathlib import Path

from django.core.management.base import CommandError

from ...exceptions import EXIT_USAGE, DataError
from ...simulate import DatasetConfig, make_dataset, scaled_test_spokes
from ...storage import file_hash
from ..base import ToolkitCommand, comma_list


class Command(ToolkitCommand):
    """
    Simulate a dataset of radial multi-coil inverse problems.

    Spoke counts default to the reference range of 10 to 80 spokes at side
    192, scaled to ``--side``; the test split cycles through the scaled
    six-AF grid.
    """
    help = 'Generate phantoms, radial acquisitions and back-projections into --out.'

    def add_arguments(self, parser):
        parser.add_argument('--out', required=True, help='Output dataset directory.')
        parser.add_argument('--side', type=int, default=64)
        parser.add_argument('--train-count', type=int, default=500)
        parser.add_argument('--val-count', type=int, default=50)
        parser.add_argument('--test-count', type=int, default=0)
        parser.add_argument('--spokes-min', type=int, default=None)
        parser.add_argument('--spokes-max', type=int, default=None)
        parser.add_argument('--test-spokes', type=lambda v: comma_list(v, int), default=None,
                            help='Comma-separated spoke counts of the test split.')
        parser.add_argument('--coils-min', type=int, default=2)
        parser.add_argument('--coils-max', type=int, default=8)
        parser.add_argument('--percentile', type=float, default=6.0)
        parser.add_argument('--n-ellipses', type=int, default=10)
        parser.add_argument('--oversampling', type=float, default=2.0)
        parser.add_argument('--kernel-width', type=int, default=6)
        parser.add_argument('--dc-iters', type=int, default=20)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--workers', type=int, default=None)

    def run(self, **options):
        side = options['side']
        config = DatasetConfig(
            side=side,
            train_count=options['train_count'],
            val_count=options['val_count'],
            test_count=options['test_count'],
            spokes_min=options['spokes_min'] or max(1, round(10 * side / 192)),
            spokes_max=options['spokes_max'] or max(1, round(80 * side / 192)),
            coils_min=options['coils_min'],
            coils_max=options['coils_max'],
            test_spokes=options['test_spokes'] or scaled_test_spokes(side),
            percentile=options['percentile'],
            n_ellipses=options['n_ellipses'],
            oversampling=options['oversampling'],
            kernel_width=options['kernel_width'],
            dc_iters=options['dc_iters'],
            seed=options['seed'],
        )
        try:
            config.validated()
        except DataError as exc:
            raise CommandError(str(exc), returncode=EXIT_USAGE) from exc
        out = Path(options['out'])
        manifest = make_dataset(config, out, workers=options['workers'])
        digest = file_hash(out / 'manifest.json')
        self.stdout.write(self.style.SUCCESS(
            f"Wrote {len(manifest['items'])} inverse problems to {out} (manifest sha256 {digest})"
        ))
