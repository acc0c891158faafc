from django.conf import settings

from arbkit.market_models import build_model
from arbkit.pipeline import change_measure
from arbkit.reports import build_report, certificates_of
from arbkit.serializers import config_echo, grid_of, measure_of, thresholds_of

from ._base import ArbkitCommand


class Command(ArbkitCommand):
    help = 'Classify under P and under Q = Z_T P, with the diagnostics of the density'

    def run(self, options):
        config = self.config(options)
        self.report_path = config['outputs'].get('report')

        model = build_model(config['model'])
        result = change_measure(
            model, measure_of(config), grid_of(config), config['n_paths'], config['root_seed'],
            thresholds=thresholds_of(config), threads=self.threads(options),
            chunk_paths=settings.ARBKIT_CHUNK_PATHS,
        )
        conditions = [c.upper() for c in config['conditions']]
        data = result.to_dict(conditions)
        verdicts = data['under_p']['verdicts'] + data['under_q']['verdicts']
        report = build_report(
            'change_measure', config_echo(config),
            verdicts=verdicts, certificates=certificates_of(verdicts), results=data,
        )
        return report, 0
