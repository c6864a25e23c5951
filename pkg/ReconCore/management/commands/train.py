from pathlib import Path

from ...nn import Architecture
from ...r2d2 import TrainingConfig, train_series
from ..base import ToolkitCommand


class Command(ToolkitCommand):
    help = 'Train an R2D2 series of U-Net or U-WDSR modules on a generated dataset.'

    def add_arguments(self, parser):
        parser.add_argument('--dataset', required=True, help='Dataset directory (holds manifest.json).')
        parser.add_argument('--out', required=True, help='Series directory.')
        parser.add_argument('--arch', choices=['unet', 'uwdsr'], default='unet')
        parser.add_argument('--stages', type=int, default=3, help='Maximum number of modules I.')
        parser.add_argument('--epochs', type=int, default=30)
        parser.add_argument('--batch', type=int, default=8)
        parser.add_argument('--lr', type=float, default=1e-4)
        parser.add_argument('--patience', type=int, default=2)
        parser.add_argument('--base-channels', type=int, default=None)
        parser.add_argument('--depth', type=int, default=3)
        parser.add_argument('--n-blocks', type=int, default=4)
        parser.add_argument('--residual-mode', choices=['magnitude', 'complex'], default=None)
        parser.add_argument('--seed', type=int, default=0)
        parser.add_argument('--workers', type=int, default=None)
        parser.add_argument('--resume', action='store_true', help='Continue after the last completed stage.')

    def run(self, **options):
        overrides = {'depth': options['depth'], 'n_blocks': options['n_blocks']}
        if options['base_channels']:
            overrides['base_channels'] = options['base_channels']
        architecture = Architecture.default(options['arch'], **overrides)
        config = TrainingConfig(
            epochs=options['epochs'],
            batch_size=options['batch'],
            lr=options['lr'],
            patience=options['patience'],
            residual_mode=options['residual_mode'],
            seed=options['seed'],
            workers=options['workers'],
        )
        out = Path(options['out'])
        series = train_series(
            options['dataset'], architecture, options['stages'], config, out, resume=options['resume'],
        )
        self.write_provenance(out / 'provenance.json', {
            'architecture': series.architecture.to_dict(),
            'training': config.resolved().as_dict(),
            'stages': options['stages'],
            'dataset': str(options['dataset']),
        }, seeds={'training': options['seed']})

        for record in series.stages:
            if record.get('val_psnr') is not None:
                self.stdout.write(
                    f"stage {record['stage']}: val PSNR {record['val_psnr']:.3f} dB, "
                    f"SSIM {record['val_ssim']:.4f}, RDR {record['val_rdr']:.4f}"
                )
        note = ' (stopped early)' if series.stopped_early else ''
        self.stdout.write(self.style.SUCCESS(f"Trained {series.n_stages} stage(s){note} into {out}"))
