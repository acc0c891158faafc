from django.conf import settings

from arbkit.market_models import build_model
from arbkit.pipeline import classify
from arbkit.reports import build_report, certificates_of
from arbkit.serializers import config_echo, grid_of, thresholds_of

from ._base import ArbkitCommand


class Command(ArbkitCommand):
    help = 'Classify NIP / NSA / NA1 / NA for a catalog model under P'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--conditions', help='Comma-separated subset of nip,nsa,na1,na')

    def run(self, options):
        overrides = {}
        if options.get('conditions'):
            overrides['conditions'] = [c.strip() for c in options['conditions'].split(',') if c.strip()]
        config = self.config(options, overrides=overrides)
        self.report_path = config['outputs'].get('report')

        model = build_model(config['model'])
        result = classify(
            model, grid_of(config), config['n_paths'], config['root_seed'],
            thresholds=thresholds_of(config), threads=self.threads(options),
            chunk_paths=settings.ARBKIT_CHUNK_PATHS,
        )
        conditions = [c.upper() for c in config['conditions']]
        data = result.to_dict(conditions)
        verdicts = data.pop('verdicts')
        report = build_report(
            'classify', config_echo(config),
            verdicts=verdicts, certificates=certificates_of(verdicts), results=data,
        )
        return report, 0
