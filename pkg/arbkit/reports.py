"""
Report assembly. Reports are canonical JSON; everything except the timing
section is a pure function of the config.
"""

import hashlib
import json
import logging
from pathlib import Path

from . import __version__
from .canonical import canonical_json
from .serializers import REPORT_SCHEMA, ReportSerializer

logger = logging.getLogger(__name__)

TOOL_NAME = 'arbkit'


def build_report(command, config, verdicts=(), certificates=(), scenarios=(), results=None, elapsed=0.0):
    return {
        'schema': REPORT_SCHEMA,
        'tool': {'name': TOOL_NAME, 'version': __version__},
        'command': command,
        'config': config,
        'verdicts': list(verdicts),
        'certificates': list(certificates),
        'scenarios': list(scenarios),
        'results': results or {},
        'timing': {'elapsed_seconds': float(elapsed)},
    }


def certificates_of(verdicts):
    """Distinct certificates attached to verdicts, in verdict order"""
    seen, certs = set(), []
    for verdict in verdicts:
        cert = verdict.get('certificate')
        if cert is None:
            continue
        key = canonical_json(cert)
        if key not in seen:
            seen.add(key)
            certs.append(cert)
    return certs


def without_timing(report):
    return {key: value for key, value in report.items() if key != 'timing'}


def render(report):
    return canonical_json(report) + '\n'


def digest(report):
    """SHA-256 of the canonical report without timing"""
    return hashlib.sha256(canonical_json(without_timing(report)).encode('utf-8')).hexdigest()


def write_report(path, report):
    path = Path(path)
    path.write_text(render(report), encoding='utf-8')
    logger.info('report written to %s', path)


def load_report(path):
    return json.loads(Path(path).read_text(encoding='utf-8'))


def validate_report(data):
    serializer = ReportSerializer(data=data)
    serializer.is_valid(raise_exception=True)
    return serializer.validated_data
