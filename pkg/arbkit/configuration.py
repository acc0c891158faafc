"""
Run configuration files.

The flat format is one `key = value` per line with dotted keys
(`model.kind = stopped_bm`); values holding a comma become lists. A file
whose first non-blank character is `{` is read as JSON, which is how the
config echoed in a report is fed back in.
"""

import json
import logging
from pathlib import Path

from decouple import Csv, RepositoryEnv
from rest_framework import serializers

logger = logging.getLogger(__name__)


def _value(raw):
    if ',' in raw:
        return Csv()(raw)
    return raw


def nest(flat):
    """Turn {'a.b': v} into {'a': {'b': v}}"""
    nested = {}
    for key in sorted(flat):
        parts = key.split('.')
        node = nested
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise serializers.ValidationError({key: [f'{part!r} is both a value and a section.']})
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise serializers.ValidationError({key: [f'{parts[-1]!r} is both a value and a section.']})
        node[parts[-1]] = flat[key]
    return nested


def parse_flat(path):
    path = Path(path)
    for number, line in enumerate(path.read_text(encoding='utf-8').splitlines(), 1):
        line = line.strip()
        if line and not line.startswith('#') and '=' not in line:
            raise serializers.ValidationError({'config': [f'line {number} is not a key = value pair.']})
    data = RepositoryEnv(str(path)).data
    return nest({key: _value(value) for key, value in data.items()})


def load_config(path):
    """Read a run configuration file into nested, still unvalidated data"""
    path = Path(path)
    text = path.read_text(encoding='utf-8')
    if text.lstrip().startswith('{'):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise serializers.ValidationError({'config': [f'invalid JSON: {exc.msg} (line {exc.lineno}).']})
        if not isinstance(data, dict):
            raise serializers.ValidationError({'config': ['a JSON config must be an object.']})
    else:
        data = parse_flat(path)
    logger.debug('loaded config %s with sections %s', path, sorted(data))
    return data


def flatten_errors(errors, prefix=''):
    """DRF error structures as 'dotted.field: message' lines"""
    lines = []
    if isinstance(errors, dict):
        for key, value in errors.items():
            name = key if key != 'non_field_errors' else ''
            dotted = '.'.join(p for p in (prefix, str(name)) if p)
            lines.extend(flatten_errors(value, dotted))
    elif isinstance(errors, list):
        for n, value in enumerate(errors):
            if isinstance(value, (dict, list)):
                lines.extend(flatten_errors(value, f'{prefix}[{n}]'))
            else:
                lines.append(f'{prefix or "config"}: {value}')
    else:
        lines.append(f'{prefix or "config"}: {errors}')
    return lines
