import logging

from django.conf import settings
from django.core.management.base import CommandError

from arbkit.reports import build_report
from arbkit.scenarios import SCENARIOS
from arbkit.serializers import config_echo, grid_of, thresholds_of

from ._base import EXIT_SCENARIO_FAILED, EXIT_UNKNOWN, ArbkitCommand

logger = logging.getLogger(__name__)

DEFAULT_HORIZON = 1.0
DEFAULT_STEPS = 4096
DEFAULT_PATHS = 50000


class Command(ArbkitCommand):
    help = 'Run a self-checking scenario; exits 1 when any check fails'

    def add_arguments(self, parser):
        parser.add_argument('name', help=f'One of: {", ".join(SCENARIOS)}')
        super().add_arguments(parser)
        parser.add_argument('--horizon', type=float, help='Horizon T (default 1)')
        parser.add_argument('--steps', type=int, help='Grid steps N (default 4096)')

    def run(self, options):
        name = options['name']
        if name not in SCENARIOS:
            raise CommandError(f'unknown scenario {name!r}', returncode=EXIT_UNKNOWN)

        defaults = {
            'model': {'kind': 'drifted_bm'},
            'grid': {'T': DEFAULT_HORIZON, 'N': DEFAULT_STEPS},
            'n_paths': DEFAULT_PATHS,
            'root_seed': settings.ARBKIT_DEFAULT_SEED,
        }
        grid = {}
        if options.get('horizon') is not None:
            grid['T'] = options['horizon']
        if options.get('steps') is not None:
            grid['N'] = options['steps']
        overrides = {'grid': grid} if grid else {}
        config = self.config(options, required=False, defaults=defaults, overrides=overrides)
        self.report_path = config['outputs'].get('report')

        logger.info('running scenario %s', name)
        result = SCENARIOS[name](
            grid_of(config), config['n_paths'], config['root_seed'],
            threads=self.threads(options), chunk_paths=settings.ARBKIT_CHUNK_PATHS,
            thresholds=thresholds_of(config),
        )
        report = build_report('scenario', config_echo(config), scenarios=[result.to_dict()])
        return report, 0 if result.passed else EXIT_SCENARIO_FAILED
