from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from arbkit.configuration import flatten_errors
from arbkit.reports import load_report, validate_report

from ._base import EXIT_CONFIG, EXIT_IO


class Command(BaseCommand):
    help = 'Validate a report file against the report schema'

    def add_arguments(self, parser):
        parser.add_argument('report', help='Report file to validate')

    def handle(self, *args, **options):
        try:
            data = load_report(options['report'])
        except (OSError, ValueError) as exc:
            raise CommandError(f'cannot read report: {exc}', returncode=EXIT_IO)
        try:
            validate_report(data)
        except serializers.ValidationError as exc:
            for line in flatten_errors(exc.detail):
                self.stderr.write(line)
            raise CommandError('report does not match the schema', returncode=EXIT_CONFIG)
        self.stdout.write(f"{options['report']}: valid")
