"""Canonical JSON: sorted keys, 17 significant digits, byte-stable output."""

import json
import math

import numpy as np

NON_FINITE = {
    math.inf: 'Infinity',
    -math.inf: '-Infinity',
}


def format_float(value):
    value = float(value)
    if math.isnan(value):
        return '"NaN"'
    if math.isinf(value):
        return json.dumps(NON_FINITE[value])
    text = format(value, '.17g')
    if text in ('-0', '0'):
        return '0.0' if text == '0' else '-0.0'
    if 'e' not in text and '.' not in text:
        text += '.0'
    return text


def _encode(obj, out):
    if obj is None or isinstance(obj, (bool, np.bool_)):
        out.append(json.dumps(None if obj is None else bool(obj)))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        out.append('{')
        for n, key in enumerate(sorted(obj, key=str)):
            if n:
                out.append(',')
            out.append(json.dumps(str(key), ensure_ascii=False))
            out.append(':')
            _encode(obj[key], out)
        out.append('}')
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append('[')
        for n, item in enumerate(obj):
            if n:
                out.append(',')
            _encode(item, out)
        out.append(']')
    else:
        raise TypeError(f'cannot encode {type(obj).__name__} as canonical JSON')


def canonical_json(obj):
    """Serialise obj to canonical JSON text (no trailing newline)"""
    out = []
    _encode(obj, out)
    return ''.join(out)


def decode_float(value):
    """Inverse of the non-finite encoding used by canonical_json"""
    if isinstance(value, str):
        return {'Infinity': math.inf, '-Infinity': -math.inf, 'NaN': math.nan}[value]
    return float(value)
