import hashlib
import json
import logging
import time

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from arbkit.canonical import canonical_json
from arbkit.configuration import flatten_errors, load_config
from arbkit.exceptions import ArbkitError, PathFileError
from arbkit.models import RunRecord
from arbkit.reports import digest, render, write_report
from arbkit.serializers import run_config

logger = logging.getLogger(__name__)

EXIT_SCENARIO_FAILED = 1
EXIT_CONFIG = 2
EXIT_UNKNOWN = 3
EXIT_IO = 4


def merged(base, update):
    """Nested dict update; sections present in both are merged key by key"""
    result = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(result.get(key), dict):
            result[key] = merged(result[key], value)
        else:
            result[key] = value
    return result

class ArbkitCommand(BaseCommand):
    """Shared flags, config handling, error mapping and report output"""

    # report file named by the config, used when --out is absent
    report_path = None

    def add_arguments(self, parser):
        parser.add_argument('--config', help='Run configuration file (key = value, or JSON)')
        parser.add_argument('--out', help='Write the report to this file')
        parser.add_argument('--seed', type=int, help='Root seed (overrides root_seed)')
        parser.add_argument('--threads', type=int, help='Worker threads (default: ARBKIT_THREADS)')
        parser.add_argument('--n-paths', dest='n_paths', type=int, help='Number of paths (overrides n_paths)')
        parser.add_argument('--json', action='store_true', help='Print the report on stdout')
        parser.add_argument('--record', action='store_true', help='Store the run in the database')

    def threads(self, options):
        threads = options.get('threads') or settings.ARBKIT_THREADS
        if threads < 1:
            raise CommandError('--threads must be at least 1', returncode=EXIT_CONFIG)
        return threads

    def config(self, options, required=True, defaults=None, overrides=None):
        """Load, override and validate the run configuration"""
        data = merged({}, defaults or {})
        if options.get('config'):
            data = merged(data, load_config(options['config']))
        elif required:
            raise CommandError('--config is required', returncode=EXIT_CONFIG)
        data = merged(data, overrides or {})
        if options.get('seed') is not None:
            data['root_seed'] = options['seed']
        if options.get('n_paths') is not None:
            data['n_paths'] = options['n_paths']
        return run_config(data)

    def handle(self, *args, **options):
        started = time.perf_counter()
        try:
            report, exit_code = self.run(options)
        except serializers.ValidationError as exc:
            for line in flatten_errors(exc.detail):
                self.stderr.write(line)
            raise CommandError('invalid configuration', returncode=EXIT_CONFIG)
        except (OSError, PathFileError) as exc:
            raise CommandError(f'I/O error: {exc}', returncode=EXIT_IO)
        except ArbkitError as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG)

        report['timing'] = {'elapsed_seconds': time.perf_counter() - started}
        self.emit(report, options)
        if options.get('record') or settings.ARBKIT_RECORD_RUNS:
            self.record(report, exit_code)
        if exit_code == EXIT_SCENARIO_FAILED:
            raise CommandError('scenario failed', returncode=EXIT_SCENARIO_FAILED)

    def run(self, options):
        """Return (report, exit code)"""
        raise NotImplementedError

    def emit(self, report, options):
        out = options.get('out') or self.report_path
        if out:
            try:
                write_report(out, report)
            except OSError as exc:
                raise CommandError(f'I/O error: {exc}', returncode=EXIT_IO)
        if options.get('json'):
            self.stdout.write(render(report), ending='')
        elif not out:
            self.stdout.write(self.summary(report))

    def summary(self, report):
        lines = [f"{v['condition']}: {v['state']}" for v in report['verdicts']]
        lines += [f"{s['scenario']}: {'PASS' if s['pass'] else 'FAIL'}" for s in report['scenarios']]
        return '\n'.join(lines) or report['command']

    def record(self, report, exit_code):
        config_digest = hashlib.sha256(canonical_json(report['config']).encode('utf-8')).hexdigest()
        RunRecord.objects.create(
            command=report['command'],
            config_digest=config_digest,
            report_digest=digest(report),
            report=json.loads(render(report)),
            exit_code=exit_code,
        )
        logger.info('recorded %s run %s', report['command'], config_digest[:12])
