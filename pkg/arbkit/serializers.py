import math

from rest_framework import serializers

from .arbitrage import CertificateKind, Condition, Thresholds, VerdictState
from .canonical import decode_float
from .exceptions import ArbkitError
from .market_models import MODEL_KINDS, ModelSpec
from .paths import TimeGrid
from .pipeline import GIRSANOV_MODES, MEASURE_KINDS, MeasureChange

CONDITIONS = ('nip', 'nsa', 'na1', 'na')
SEED_LIMIT = 2 ** 64
REPORT_SCHEMA = 'arbkit.report/1'


class StrictSerializer(serializers.Serializer):
    """Serializer that rejects fields it does not declare"""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ['Unknown field.'] for key in unknown})
        return super().to_internal_value(data)


class ExtendedFloatField(serializers.FloatField):
    """Float that also accepts the report spellings of non-finite values"""

    def to_internal_value(self, data):
        if data in ('Infinity', '-Infinity', 'NaN'):
            return decode_float(data)
        return super().to_internal_value(data)


class ScalarListField(serializers.ListField):
    """List that also accepts a single scalar, as flat config files write one-element lists"""

    def to_internal_value(self, data):
        if isinstance(data, (str, int, float)):
            data = [data]
        return super().to_internal_value(data)


# Run configuration

class GridSerializer(StrictSerializer):
    """Grid: uniform (T, N) or an explicit list of times"""
    T = serializers.FloatField(required=False, default=1.0)
    N = serializers.IntegerField(required=False, min_value=2)
    spacing = serializers.ChoiceField(choices=['uniform', 'explicit'], default='uniform')
    times = ScalarListField(child=serializers.FloatField(), required=False, min_length=3)

    def validate(self, attrs):
        if attrs['spacing'] == 'explicit':
            if 'times' not in attrs:
                raise serializers.ValidationError({'times': ['Explicit spacing needs a list of times.']})
            try:
                grid = TimeGrid(attrs['times'])
            except ArbkitError as exc:
                raise serializers.ValidationError({'times': [str(exc)]})
            attrs['T'] = grid.horizon
            attrs['N'] = grid.n_steps
            return attrs
        if 'N' not in attrs:
            raise serializers.ValidationError({'N': ['This field is required.']})
        if not math.isfinite(attrs['T']) or attrs['T'] <= 0:
            raise serializers.ValidationError({'T': ['The horizon must be positive.']})
        attrs.pop('times', None)
        return attrs


class ModelSpecSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=MODEL_KINDS)
    params = serializers.DictField(required=False, default=dict)

    def validate(self, attrs):
        try:
            spec = ModelSpec(attrs['kind'], attrs['params'])
        except (ArbkitError, TypeError, ValueError) as exc:
            raise serializers.ValidationError({'params': [str(exc)]})
        return {'kind': spec.kind, 'params': spec.params}


class ThresholdsSerializer(StrictSerializer):
    tol_nu = serializers.FloatField(default=1e-8)
    rho_div = serializers.FloatField(default=1.5)
    k_max = serializers.FloatField(default=1e6)
    tol_mono = serializers.FloatField(default=1e-9)
    eps_pos = serializers.FloatField(default=1e-6)
    eps_jump = serializers.FloatField(default=None, allow_null=True)
    ladder = ScalarListField(child=serializers.IntegerField(min_value=1), min_length=1,
                                   default=lambda: list(Thresholds().ladder))
    v_ladder = ScalarListField(child=serializers.FloatField(), min_length=1,
                                     default=lambda: list(Thresholds().v_ladder))
    refine_factor = serializers.IntegerField(min_value=2, default=2)
    localization = serializers.IntegerField(min_value=2, default=8)
    min_positive_fraction = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.0)

    def validate(self, attrs):
        errors = {}
        for name in ('tol_nu', 'rho_div', 'k_max', 'tol_mono', 'eps_pos', 'eps_jump'):
            value = attrs.get(name)
            if value is not None and not (math.isfinite(value) and value > 0):
                errors[name] = ['Must be positive.']
        if any(v <= 0 for v in attrs['v_ladder']):
            errors['v_ladder'] = ['Capitals must be positive.']
        if errors:
            raise serializers.ValidationError(errors)
        return attrs


class MeasureChangeSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=MEASURE_KINDS, default='none')
    theta0 = ScalarListField(child=serializers.FloatField(), required=False, default=list)
    bounds = ScalarListField(child=serializers.FloatField(), required=False, min_length=2, max_length=2)
    density_file = serializers.CharField(required=False)
    mode = serializers.ChoiceField(choices=GIRSANOV_MODES, default='analytic')

    def validate(self, attrs):
        if attrs['kind'] == 'exponential' and not attrs['theta0']:
            raise serializers.ValidationError({'theta0': ['An exponential density needs theta0.']})
        if attrs['kind'] == 'custom' and not attrs.get('density_file'):
            raise serializers.ValidationError({'density_file': ['A custom density needs a path file.']})
        bounds = attrs.get('bounds')
        if bounds is not None and not 0 < bounds[0] < 1 < bounds[1]:
            raise serializers.ValidationError({'bounds': ['Bounds must satisfy 0 < lower < 1 < upper.']})
        return attrs


class OutputsSerializer(StrictSerializer):
    paths = serializers.CharField(required=False)
    report = serializers.CharField(required=False)


class RunConfigSerializer(StrictSerializer):
    """Validated run configuration; the echo leaves out outputs"""
    model = ModelSpecSerializer()
    grid = GridSerializer()
    n_paths = serializers.IntegerField(min_value=1)
    root_seed = serializers.IntegerField(min_value=0, max_value=SEED_LIMIT - 1, default=0)
    thresholds = ThresholdsSerializer(required=False, default=dict)
    measure_change = MeasureChangeSerializer(required=False, default=dict)
    conditions = ScalarListField(
        child=serializers.ChoiceField(choices=CONDITIONS), required=False, default=lambda: list(CONDITIONS),
    )
    outputs = OutputsSerializer(required=False, default=dict)

    def validate_thresholds(self, value):
        # nested defaults skip validation when the section is absent
        return value or ThresholdsSerializer().run_validation({})

    def validate_measure_change(self, value):
        return value or MeasureChangeSerializer().run_validation({})

    def validate_outputs(self, value):
        return value or {}


def run_config(data):
    serializer = RunConfigSerializer(data=data)
    serializer.is_valid(raise_exception=True)
    return serializer.validated_data


def config_echo(config):
    """Plain-dict copy of a validated config, fit to be fed back in"""
    def plain(obj):
        if isinstance(obj, dict):
            return {key: plain(value) for key, value in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [plain(v) for v in obj]
        return obj
    echo = plain(config)
    echo.pop('outputs', None)
    return echo


def grid_of(config):
    grid = config['grid']
    if grid['spacing'] == 'explicit':
        return TimeGrid(grid['times'])
    return TimeGrid.uniform(grid['T'], grid['N'])


def thresholds_of(config):
    return Thresholds(**config['thresholds'])


def measure_of(config):
    m = config['measure_change']
    return MeasureChange(
        kind=m['kind'],
        theta0=tuple(m.get('theta0', ())),
        bounds=tuple(m['bounds']) if m.get('bounds') else None,
        density_file=m.get('density_file'),
        mode=m['mode'],
    )


# Reports

class CertificateSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=[k.value for k in CertificateKind])
    label = serializers.CharField(allow_blank=True)
    measure = serializers.ChoiceField(choices=['P', 'Q'])
    verified = serializers.BooleanField()
    reason = serializers.CharField()
    stats = serializers.DictField()


class VerdictSerializer(StrictSerializer):
    condition = serializers.ChoiceField(choices=[c.value for c in Condition])
    state = serializers.ChoiceField(choices=[s.value for s in VerdictState])
    evidence = serializers.DictField()
    thresholds = serializers.DictField(allow_empty=False)
    certificate = CertificateSerializer(allow_null=True)

    def validate(self, attrs):
        if attrs['state'] == VerdictState.FAILS_WITH_CERTIFICATE.value:
            cert = attrs.get('certificate')
            if not cert or not cert['verified']:
                raise serializers.ValidationError({'certificate': ['A failing verdict needs a verified certificate.']})
        return attrs


class ExpectedSerializer(StrictSerializer):
    quantity = serializers.CharField()
    relation = serializers.ChoiceField(choices=['within', 'equals', 'at_least', 'at_most'])
    target = serializers.JSONField()
    tolerance = ExtendedFloatField()
    provenance = serializers.CharField()


class ObservedSerializer(StrictSerializer):
    quantity = serializers.CharField()
    value = serializers.JSONField()
    stderr = ExtendedFloatField()
    passed = serializers.BooleanField()


class ScenarioGridSerializer(StrictSerializer):
    T = serializers.FloatField()
    N = serializers.IntegerField(min_value=1)


class ScenarioReportSerializer(StrictSerializer):
    scenario = serializers.CharField()
    seed = serializers.IntegerField(min_value=0)
    grid = ScenarioGridSerializer()
    n_paths = serializers.IntegerField(min_value=1)
    expected = ExpectedSerializer(many=True)
    observed = ObservedSerializer(many=True)
    details = serializers.DictField()

    def get_fields(self):
        fields = super().get_fields()
        fields['pass'] = serializers.BooleanField()
        return fields

    def validate(self, attrs):
        expected, observed = attrs['expected'], attrs['observed']
        if [e['quantity'] for e in expected] != [o['quantity'] for o in observed]:
            raise serializers.ValidationError({'observed': ['Observed quantities do not match the expected ones.']})
        if attrs['pass'] != all(o['passed'] for o in observed):
            raise serializers.ValidationError({'pass': ['Pass must hold iff every check passed.']})
        return attrs


class ToolSerializer(StrictSerializer):
    name = serializers.CharField()
    version = serializers.CharField()


class TimingSerializer(StrictSerializer):
    elapsed_seconds = serializers.FloatField(min_value=0.0)


class ReportSerializer(StrictSerializer):
    schema = serializers.ChoiceField(choices=[REPORT_SCHEMA])
    tool = ToolSerializer()
    command = serializers.ChoiceField(choices=['simulate', 'classify', 'change_measure', 'scenario'])
    config = serializers.DictField()
    verdicts = VerdictSerializer(many=True)
    certificates = CertificateSerializer(many=True)
    scenarios = ScenarioReportSerializer(many=True)
    results = serializers.DictField()
    timing = TimingSerializer()
