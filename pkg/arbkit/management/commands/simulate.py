import logging

from django.core.management.base import CommandError

from arbkit.market_models import build_model
from arbkit.paths import write_path_file
from arbkit.reports import build_report
from arbkit.serializers import config_echo, grid_of

from ._base import EXIT_CONFIG, ArbkitCommand

logger = logging.getLogger(__name__)


class Command(ArbkitCommand):
    help = 'Simulate paths of a catalog model and write them to an ARBK path file'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--paths', help='Path file to write (overrides outputs.paths)')

    def run(self, options):
        config = self.config(options)
        target = options.get('paths') or config['outputs'].get('paths')
        if not target:
            raise CommandError('outputs.paths: a path file is required', returncode=EXIT_CONFIG)
        self.report_path = config['outputs'].get('report')

        model = build_model(config['model'])
        grid = grid_of(config)
        bundle = model.simulate(grid, config['n_paths'], config['root_seed'], threads=self.threads(options))
        write_path_file(target, bundle)

        results = {
            'paths_file': str(target),
            'n_paths': bundle.n_paths,
            'dim': bundle.dim,
            'aux': sorted(bundle.aux),
        }
        return build_report('simulate', config_echo(config), results=results), 0
