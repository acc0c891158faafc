"""
Catalog of market models: exact samplers, analytic characteristics (a, c, B),
coupled grid refinement and, where the model defines one, the canonical
density process.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .arbitrage import StepDecomposition
from .exceptions import ContractViolation, DensityAbsent, InvalidModelSpec
from .measure import DensityProcess
from .numerics import DEFAULT_TOL, derive_stream
from .paths import GridProcess, PathBundle

logger = logging.getLogger(__name__)

MODEL_KINDS = ('drifted_bm', 'stopped_bm', 'bes3', 'exp_default', 'compensator_model', 'kernel_drift')


def _floats(value, name):
    try:
        return [float(v) for v in np.atleast_1d(value)]
    except (TypeError, ValueError):
        raise InvalidModelSpec(f'{name} must be a number or a list of numbers')


def _positive(params, name):
    value = float(params[name])
    if not np.isfinite(value) or value <= 0:
        raise InvalidModelSpec(f'{name} must be positive')
    return value


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InvalidModelSpec(f'unknown model kind {self.kind!r}')
        params = dict(self.params)
        validator = getattr(self, f'_validate_{self.kind}')
        object.__setattr__(self, 'params', validator(params))

    @staticmethod
    def _only(params, allowed):
        extra = set(params) - set(allowed)
        if extra:
            raise InvalidModelSpec(f'unknown parameters: {", ".join(sorted(extra))}')

    def _validate_drifted_bm(self, params):
        self._only(params, ('d', 'mu', 'sigma', 's0'))
        d = int(params.get('d', len(_floats(params['mu'], 'mu')) if 'mu' in params else 1))
        if d < 1:
            raise InvalidModelSpec('d must be at least 1')
        mu = _floats(params.get('mu', [0.0] * d), 'mu')
        sigma = _floats(params.get('sigma', np.eye(d).ravel()), 'sigma')
        s0 = _floats(params.get('s0', [0.0] * d), 's0')
        if len(mu) != d or len(s0) != d:
            raise InvalidModelSpec(f'mu and s0 need {d} entries')
        if len(sigma) != d * d:
            raise InvalidModelSpec(f'sigma needs {d * d} entries (row-major)')
        if not np.all(np.isfinite(mu + sigma + s0)):
            raise InvalidModelSpec('parameters must be finite')
        return {'d': d, 'mu': mu, 'sigma': sigma, 's0': s0}

    def _validate_stopped_bm(self, params):
        self._only(params, ('s0',))
        return {'s0': _positive({'s0': params.get('s0', 1.0)}, 's0')}

    def _validate_bes3(self, params):
        self._only(params, ('x0',))
        return {'x0': _positive({'x0': params.get('x0', 1.0)}, 'x0')}

    def _validate_rate(self, params):
        self._only(params, ('rate',))
        return {'rate': _positive({'rate': params.get('rate', 1.0)}, 'rate')}

    _validate_exp_default = _validate_rate
    _validate_compensator_model = _validate_rate

    def _validate_kernel_drift(self, params):
        self._only(params, ('rate',))
        rate = float(params.get('rate', 1.0))
        if not np.isfinite(rate):
            raise InvalidModelSpec('rate must be finite')
        return {'rate': rate}

    @property
    def dim(self):
        if self.kind == 'drifted_bm':
            return self.params['d']
        return 2 if self.kind == 'kernel_drift' else 1


@dataclass(frozen=True)
class JumpSpec:
    """Single jump at an exponential time: intensity(t, x, alive) and size(t, x, alive)"""
    law: str
    rate: float
    intensity: Callable
    size: Callable


def _clock(t0, t1):
    return np.asarray(t1, dtype=float) - np.asarray(t0, dtype=float)


@dataclass(frozen=True)
class Characteristics:
    """a(t, x, alive) -> (..., d), c(t, x, alive) -> (..., d, d), B increments.

    t broadcasts against the (M, N) leading axes of x.
    """
    a_fn: Callable
    c_fn: Callable
    b_increment: Callable = _clock
    jump_spec: Optional[JumpSpec] = None


def alive_mask(bundle):
    alive = bundle.aux.get('alive')
    if alive is None:
        return np.ones(bundle.values.shape[:2], dtype=bool)
    return np.asarray(alive) > 0.5


class MarketModel:
    kind = ''

    def __init__(self, spec):
        self.spec = spec
        self.params = spec.params

    @property
    def dim(self):
        return self.spec.dim

    # Simulation

    def _sample_path(self, gen, grid):
        raise NotImplementedError

    def _sample_block(self, grid, start, stop, root_seed):
        return [self._sample_path(derive_stream(root_seed, n).generator(), grid) for n in range(start, stop)]

    def simulate(self, grid, n_paths, root_seed, path_offset=0, threads=1):
        if n_paths < 1:
            raise ContractViolation('n_paths must be at least 1')
        first, last = path_offset, path_offset + n_paths
        threads = max(1, int(threads))
        if threads == 1:
            samples = self._sample_block(grid, first, last, root_seed)
        else:
            edges = np.linspace(first, last, threads + 1).astype(int)
            with ThreadPoolExecutor(max_workers=threads) as pool:
                blocks = pool.map(lambda se: self._sample_block(grid, se[0], se[1], root_seed),
                                  zip(edges[:-1], edges[1:]))
                samples = [s for block in blocks for s in block]
        stacked = {key: np.stack([s[key] for s in samples]) for key in samples[0]}
        values = stacked.pop('S')
        if values.ndim == 2:
            values = values[:, :, None]
        return PathBundle(
            grid=grid, values=values, aux=stacked, root_seed=int(root_seed),
            model=self.kind, params=self.params, path_offset=path_offset,
        )

    # Coupled refinement

    def refine(self, bundle, factor):
        raise NotImplementedError

    def _bridge(self, bundle, latent, factor):
        """Fill a latent Brownian motion in on the refined grid.

        Each coarse cell gets factor - 1 Brownian-bridge points drawn from the
        path's refinement sub-stream; coarse values are kept exactly.
        """
        coarse = bundle.grid
        fine = coarse.refine(factor)
        x = np.asarray(latent, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        m, size, k = x.shape
        n = size - 1
        out = np.empty((m, n * factor + 1, k))
        out[:, ::factor] = x
        if factor == 1:
            return fine, out
        draws = np.stack([
            derive_stream(bundle.root_seed, bundle.path_offset + p)
            .generator(bundle.level + 1)
            .standard_normal((factor - 1, n, k))
            for p in range(m)
        ])
        t0, t1 = coarse.times[:-1], coarse.times[1:]
        prev_t = t0.copy()
        prev = x[:, :-1]
        end = x[:, 1:]
        for j in range(1, factor):
            s = fine.times[j::factor][:n]
            w = (s - prev_t) / (t1 - prev_t)
            var = (s - prev_t) * (t1 - s) / (t1 - prev_t)
            point = prev + w[None, :, None] * (end - prev) + np.sqrt(var)[None, :, None] * draws[:, j - 1]
            out[:, j::factor][:, :n] = point
            prev, prev_t = point, s
        return fine, out

    def _fine_bundle(self, bundle, fine_grid, values, aux):
        if values.ndim == 2:
            values = values[:, :, None]
        return PathBundle(
            grid=fine_grid, values=values, aux=aux, root_seed=bundle.root_seed,
            model=self.kind, params=self.params, path_offset=bundle.path_offset,
            level=bundle.level + 1,
        )

    # Analysis

    def characteristics(self):
        raise NotImplementedError

    def density_process(self, bundle):
        raise DensityAbsent(f'{self.kind} has no canonical density process')

    def driving_noise(self, bundle):
        """(W, loading): driving Brownian motion and the loading of S on it"""
        raise DensityAbsent(f'{self.kind} has no Brownian driver for an exponential density')

    def decompose(self, bundle, tol=DEFAULT_TOL):
        chars = self.characteristics()
        times = bundle.grid.times
        x = bundle.values[:, :-1]
        alive = alive_mask(bundle)[:, :-1]
        t = times[None, :-1]
        a = np.broadcast_to(chars.a_fn(t, x, alive), x.shape)
        c = np.broadcast_to(chars.c_fn(t, x, alive), x.shape + (x.shape[-1],))
        db = chars.b_increment(times[:-1], times[1:])
        return StepDecomposition.build(bundle.grid, a, c, db=db, tol=tol)

    def jump_drift(self, bundle):
        """Compensator drift intensity x jump size per cell (zero without jumps)"""
        chars = self.characteristics()
        x = bundle.values[:, :-1]
        if chars.jump_spec is None:
            return np.zeros(x.shape)
        alive = alive_mask(bundle)[:, :-1]
        t = bundle.grid.times[None, :-1]
        spec = chars.jump_spec
        return spec.intensity(t, x, alive)[..., None] * spec.size(t, x, alive)


class DriftedBM(MarketModel):
    """S = s0 + mu t + sigma W"""
    kind = 'drifted_bm'

    @property
    def mu(self):
        return np.array(self.params['mu'])

    @property
    def sigma(self):
        d = self.params['d']
        return np.array(self.params['sigma']).reshape(d, d)

    def _assemble(self, times, w):
        return np.asarray(self.params['s0']) + times[:, None] * self.mu + w @ self.sigma.T

    def _sample_path(self, gen, grid):
        d = self.params['d']
        steps = np.sqrt(grid.dt)[:, None] * gen.standard_normal((grid.n_steps, d))
        w = np.vstack([np.zeros(d), np.cumsum(steps, axis=0)])
        return {'S': self._assemble(grid.times, w), 'W': w}

    def refine(self, bundle, factor):
        fine, w = self._bridge(bundle, bundle.aux['W'], factor)
        values = np.stack([self._assemble(fine.times, path) for path in w])
        return self._fine_bundle(bundle, fine, values, {'W': w})

    def characteristics(self):
        mu, sigma = self.mu, self.sigma
        c = sigma @ sigma.T
        return Characteristics(
            a_fn=lambda t, x, alive: np.broadcast_to(mu, x.shape),
            c_fn=lambda t, x, alive: np.broadcast_to(c, x.shape + (x.shape[-1],)),
        )

    def driving_noise(self, bundle):
        return bundle.aux['W'], self.sigma[None, None]


class StoppedBM(MarketModel):
    """Brownian motion from s0 absorbed at zero, with bridge-corrected absorption"""
    kind = 'stopped_bm'

    @staticmethod
    def _absorb(times, free, uniforms):
        """Stop a free path at its first bridge-detected crossing of zero"""
        dt = np.diff(times)
        w0, w1 = free[:-1], free[1:]
        with np.errstate(over='ignore'):
            cross = np.exp(-2.0 * np.maximum(w0, 0.0) * np.maximum(w1, 0.0) / dt)
        hit = (w1 <= 0) | (uniforms < cross)
        absorbed = hit.any()
        k = int(np.argmax(hit)) + 1 if absorbed else times.size
        s = free.copy()
        s[k:] = 0.0
        alive = np.arange(times.size) < k
        return s, alive, (float(times[k]) if absorbed else np.inf)

    def _sample_path(self, gen, grid):
        steps = np.sqrt(grid.dt) * gen.standard_normal(grid.n_steps)
        uniforms = gen.random(grid.n_steps)
        free = self.params['s0'] + np.concatenate([[0.0], np.cumsum(steps)])
        s, alive, absorbed_at = self._absorb(grid.times, free, uniforms)
        return {'S': s, 'W': free, 'alive': alive.astype(float), 'absorbed_at': absorbed_at}

    def refine(self, bundle, factor):
        fine, free = self._bridge(bundle, bundle.aux['W'], factor)
        free = free[:, :, 0]
        coarse_hit = bundle.aux['absorbed_at']
        values, alive, absorbed = [], [], []
        for p in range(bundle.n_paths):
            gen = derive_stream(bundle.root_seed, bundle.path_offset + p).generator(bundle.level + 1, 1)
            s, live, at = self._absorb(fine.times, free[p], gen.random(fine.n_steps))
            if at > coarse_hit[p]:
                # absorbed on the coarse grid: the fine path stops no later
                k = int(np.searchsorted(fine.times, coarse_hit[p]))
                s[k:] = 0.0
                live = np.arange(fine.times.size) < k
                at = float(fine.times[k])
            values.append(s)
            alive.append(live.astype(float))
            absorbed.append(at)
        aux = {'W': free, 'alive': np.stack(alive), 'absorbed_at': np.array(absorbed)}
        return self._fine_bundle(bundle, fine, np.stack(values), aux)

    def characteristics(self):
        return Characteristics(
            a_fn=lambda t, x, alive: np.zeros(x.shape),
            c_fn=lambda t, x, alive: alive.astype(float)[..., None, None] * np.ones(x.shape + (1,)),
        )

    def density_process(self, bundle):
        s0 = self.params['s0']
        z = bundle.values[:, :, 0] / s0
        cov = alive_mask(bundle).astype(float)[:, :, None] / s0
        return DensityProcess(Z=GridProcess(bundle.grid, z), cov_rate=cov, name='stopped_bm')

    def driving_noise(self, bundle):
        w = bundle.aux['W'] - self.params['s0']
        loading = alive_mask(bundle).astype(float)[:, :, None, None]
        return w[:, :, None], loading


class Bessel3(MarketModel):
    """|x0 e1 + B| for a three-dimensional Brownian motion B"""
    kind = 'bes3'

    def _norm(self, b):
        shifted = b.copy()
        shifted[..., 0] += self.params['x0']
        return np.sqrt(np.sum(shifted ** 2, axis=-1))

    def _sample_path(self, gen, grid):
        steps = np.sqrt(grid.dt)[:, None] * gen.standard_normal((grid.n_steps, 3))
        b = np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])
        return {'S': self._norm(b), 'B3': b}

    def refine(self, bundle, factor):
        fine, b = self._bridge(bundle, bundle.aux['B3'], factor)
        return self._fine_bundle(bundle, fine, self._norm(b), {'B3': b})

    def characteristics(self):
        return Characteristics(
            a_fn=lambda t, x, alive: 1.0 / x,
            c_fn=lambda t, x, alive: np.ones(x.shape + (1,)),
        )

    def driving_noise(self, bundle):
        b = bundle.aux['B3']
        shifted = b.copy()
        shifted[..., 0] += self.params['x0']
        direction = shifted / np.linalg.norm(shifted, axis=-1, keepdims=True)
        return b, direction[:, :, None, :]


class ExpDefault(MarketModel):
    """S_t = 1{xi > t} e^{rate t} with xi ~ Exp(rate)"""
    kind = 'exp_default'

    def _sample_xi(self, gen):
        return float(gen.exponential(1.0 / self.params['rate']))

    def _evaluate(self, times, xi):
        alive = times < xi
        return np.where(alive, np.exp(self.params['rate'] * times), 0.0), alive

    def _sample_path(self, gen, grid):
        xi = self._sample_xi(gen)
        s, alive = self._evaluate(grid.times, xi)
        return {'S': s, 'xi': xi, 'alive': alive.astype(float)}

    def refine(self, bundle, factor):
        fine = bundle.grid.refine(factor)
        xi = bundle.aux['xi']
        evaluated = [self._evaluate(fine.times, x) for x in xi]
        values = np.stack([s for s, _ in evaluated])
        alive = np.stack([a for _, a in evaluated]).astype(float)
        return self._fine_bundle(bundle, fine, values, {'xi': xi, 'alive': alive})

    def jump_spec(self):
        rate = self.params['rate']
        return JumpSpec(
            law='exponential', rate=rate,
            intensity=lambda t, x, alive: rate * alive.astype(float),
            size=lambda t, x, alive: -x,
        )

    def characteristics(self):
        return Characteristics(
            a_fn=lambda t, x, alive: np.zeros(x.shape),
            c_fn=lambda t, x, alive: np.zeros(x.shape + (1,)),
            jump_spec=self.jump_spec(),
        )

    def density_process(self, bundle):
        rate = self.params['rate']
        xi = bundle.aux['xi']
        times = bundle.grid.times
        z = np.where(times[None, :] < xi[:, None], np.exp(rate * times)[None, :], 0.0)
        horizon = bundle.grid.horizon
        hit = xi <= horizon
        return DensityProcess(
            Z=GridProcess(bundle.grid, z),
            exact_zero_time=np.where(hit, xi, np.inf),
            left_limit=np.where(hit, np.exp(rate * np.minimum(xi, horizon)), np.nan),
            kills_at_jump=True,
            cov_rate=np.zeros(z.shape + (1,)),
            name='exp_default',
        )


class CompensatorModel(ExpDefault):
    """S = -(1{t >= xi} - B) with compensator B_t = rate (t ∧ xi)"""
    kind = 'compensator_model'

    def _evaluate(self, times, xi):
        alive = times < xi
        compensator = self.params['rate'] * np.minimum(times, xi)
        return -((~alive).astype(float) - compensator), alive

    def _sample_path(self, gen, grid):
        sample = super()._sample_path(gen, grid)
        sample['B'] = self.params['rate'] * np.minimum(grid.times, sample['xi'])
        return sample

    def refine(self, bundle, factor):
        fine = super().refine(bundle, factor)
        aux = dict(fine.aux)
        aux['B'] = self.params['rate'] * np.minimum(fine.grid.times[None, :], aux['xi'][:, None])
        return self._fine_bundle(bundle, fine.grid, fine.values, aux)

    def jump_spec(self):
        rate = self.params['rate']
        return JumpSpec(
            law='exponential', rate=rate,
            intensity=lambda t, x, alive: rate * alive.astype(float),
            size=lambda t, x, alive: -np.ones(x.shape),
        )


class KernelDrift(MarketModel):
    """S = (W, rate·t): the second coordinate drifts where c is singular"""
    kind = 'kernel_drift'

    def _assemble(self, times, w):
        return np.column_stack([w, self.params['rate'] * times])

    def _sample_path(self, gen, grid):
        steps = np.sqrt(grid.dt) * gen.standard_normal(grid.n_steps)
        w = np.concatenate([[0.0], np.cumsum(steps)])
        return {'S': self._assemble(grid.times, w), 'W': w[:, None]}

    def refine(self, bundle, factor):
        fine, w = self._bridge(bundle, bundle.aux['W'], factor)
        values = np.stack([self._assemble(fine.times, path[:, 0]) for path in w])
        return self._fine_bundle(bundle, fine, values, {'W': w})

    def characteristics(self):
        drift = np.array([0.0, self.params['rate']])
        c = np.diag([1.0, 0.0])
        return Characteristics(
            a_fn=lambda t, x, alive: np.broadcast_to(drift, x.shape),
            c_fn=lambda t, x, alive: np.broadcast_to(c, x.shape + (2,)),
        )

    def driving_noise(self, bundle):
        return bundle.aux['W'], np.array([[1.0], [0.0]])[None, None]


MODEL_CLASSES = {cls.kind: cls for cls in (DriftedBM, StoppedBM, Bessel3, ExpDefault, CompensatorModel, KernelDrift)}


def build_model(spec):
    if not isinstance(spec, ModelSpec):
        spec = ModelSpec(**spec)
    return MODEL_CLASSES[spec.kind](spec)


def simulate(spec, grid, n_paths, root_seed, path_offset=0, threads=1):
    return build_model(spec).simulate(grid, n_paths, root_seed, path_offset=path_offset, threads=threads)


def characteristics(spec):
    return build_model(spec).characteristics()


def density_process(spec, bundle):
    return build_model(spec).density_process(bundle)
