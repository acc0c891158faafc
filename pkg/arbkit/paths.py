"""
Time grids, path storage, left-point stochastic integrals, realized
covariation, admissibility checks and the binary path file.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Protocol

import numpy as np

from .canonical import canonical_json
from .exceptions import (
    ContractViolation, NonPredictableError, PathFileError, ShapeMismatch, UnsupportedRefinement,
)

logger = logging.getLogger(__name__)

MAGIC = b'ARBK'
FORMAT_VERSION = 1
HEADER = struct.Struct('<IIIdQI')
U32 = struct.Struct('<I')


@dataclass(frozen=True)
class TimeGrid:
    """Strictly increasing times 0 = t_0 < ... < t_N = T"""
    times: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        if times.ndim != 1 or times.size < 2:
            raise ContractViolation('a grid needs at least two times')
        if times[0] != 0.0:
            raise ContractViolation('grids start at t = 0')
        if not np.all(np.diff(times) > 0):
            raise ContractViolation('grid times must be strictly increasing')
        times.setflags(write=False)
        object.__setattr__(self, 'times', times)

    @classmethod
    def uniform(cls, horizon, n_steps):
        if n_steps < 1 or horizon <= 0:
            raise ContractViolation('uniform grid needs horizon > 0 and at least one step')
        times = np.linspace(0.0, float(horizon), int(n_steps) + 1)
        times[-1] = float(horizon)
        return cls(times)

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def n_steps(self):
        return self.times.size - 1

    @property
    def dt(self):
        return np.diff(self.times)

    def refine(self, factor):
        """Insert factor - 1 equally spaced points into every cell"""
        factor = int(factor)
        if factor < 1:
            raise ContractViolation('refinement factor must be >= 1')
        frac = np.arange(factor) / factor
        left = self.times[:-1, None] + frac[None, :] * self.dt[:, None]
        times = np.append(left.ravel(), self.horizon)
        return TimeGrid(times)

    def same_as(self, other):
        return self.times.shape == other.times.shape and np.array_equal(self.times, other.times)


@dataclass(frozen=True)
class PathBundle:
    """M paths of a d-dimensional process on a grid, plus companion processes.

    aux holds named arrays: time-indexed companions have shape (M, N+1, ...),
    per-path quantities (such as a jump time) have shape (M,).
    """
    grid: TimeGrid
    values: np.ndarray
    aux: Dict[str, np.ndarray] = field(default_factory=dict)
    root_seed: int = 0
    model: str = ''
    params: dict = field(default_factory=dict)
    path_offset: int = 0
    level: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).view()
        if values.ndim != 3 or values.shape[1] != self.grid.times.size:
            raise ShapeMismatch(f'values shape {values.shape} does not fit a grid of {self.grid.times.size} times')
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)
        aux = {}
        for name, arr in self.aux.items():
            # read-only views; the caller keeps its own arrays and dict
            arr = np.asarray(arr).view()
            if arr.shape[0] != values.shape[0]:
                raise ShapeMismatch(f'aux {name!r} has {arr.shape[0]} paths, expected {values.shape[0]}')
            if arr.ndim >= 2 and arr.shape[1] != values.shape[1]:
                raise ShapeMismatch(f'aux {name!r} is not on the bundle grid')
            arr.setflags(write=False)
            aux[name] = arr
        object.__setattr__(self, 'aux', aux)

    @property
    def n_paths(self):
        return self.values.shape[0]

    @property
    def dim(self):
        return self.values.shape[2]


class PastView:
    """Read access to a bundle restricted to grid indices <= index"""

    def __init__(self, bundle, index):
        self._bundle = bundle
        self.index = index

    @property
    def time(self):
        return float(self._bundle.grid.times[self.index])

    def _check(self, j):
        j = self.index if j is None else j
        if j > self.index:
            raise NonPredictableError(f'integrand at index {self.index} read index {j}')
        return j

    def value(self, j=None):
        return self._bundle.values[:, self._check(j)]

    def aux(self, name, j=None):
        arr = self._bundle.aux[name]
        if arr.ndim < 2:
            raise NonPredictableError(f'aux {name!r} is not time-indexed and may reveal the future')
        return arr[:, self._check(j)]


@dataclass(frozen=True)
class GridProcess:
    """Values on a grid; an integrand's value at index i applies on (t_i, t_{i+1}]"""
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 2:
            values = values[:, :, None]
        if values.ndim != 3 or values.shape[1] != self.grid.times.size:
            raise ShapeMismatch(f'process shape {values.shape} does not fit the grid')
        object.__setattr__(self, 'values', values)

    @property
    def n_paths(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[2]

    @classmethod
    def from_generator(cls, bundle, generator, width=None):
        """Build an integrand by calling generator(view) for every cell.

        The view only exposes information up to the cell's left endpoint;
        reading later indices raises NonPredictableError.
        """
        width = bundle.dim if width is None else width
        n = bundle.grid.n_steps
        values = np.zeros((bundle.n_paths, n + 1, width))
        for i in range(n):
            values[:, i] = np.broadcast_to(generator(PastView(bundle, i)), (bundle.n_paths, width))
        return cls(bundle.grid, values)

    @classmethod
    def constant(cls, grid, n_paths, vector):
        vector = np.atleast_1d(np.asarray(vector, dtype=float))
        values = np.broadcast_to(vector, (n_paths, grid.times.size, vector.size)).copy()
        values[:, -1] = 0.0
        return cls(grid, values)

    def scaled(self, factor):
        return GridProcess(self.grid, self.values * factor)

    def matrices(self):
        """Reshape a flattened d x d process to (M, N+1, d, d)"""
        d = int(round(np.sqrt(self.width)))
        if d * d != self.width:
            raise ShapeMismatch('process is not a flattened square matrix')
        return self.values.reshape(self.n_paths, -1, d, d)


class GainsProcess(GridProcess):
    """G(H) = ∫ H dS with G_0 = 0"""

    def __post_init__(self):
        super().__post_init__()
        if self.width != 1:
            raise ShapeMismatch('gains processes are scalar')
        if np.any(self.values[:, 0] != 0.0):
            raise ContractViolation('gains start at zero')

    @property
    def paths(self):
        return self.values[:, :, 0]

    @property
    def terminal(self):
        return self.values[:, -1, 0]


def ito_integral(H, S):
    """Left-point sums G_{t_j} = Σ_{i<j} H_{t_i}ᵀ (S_{t_{i+1}} - S_{t_i})"""
    if not H.grid.same_as(S.grid):
        raise ShapeMismatch('integrand and price live on different grids')
    if H.width != S.dim:
        raise ShapeMismatch(f'integrand width {H.width} does not match dimension {S.dim}')
    if H.n_paths not in (1, S.n_paths):
        raise ShapeMismatch(f'integrand has {H.n_paths} paths, price has {S.n_paths}')
    h = H.values[:, :-1]
    if not np.all(np.isfinite(h)):
        raise ContractViolation('integrand has non-finite values')
    increments = (h * np.diff(S.values, axis=1)).sum(axis=-1)
    gains = np.zeros((S.n_paths, S.grid.times.size))
    np.cumsum(increments, axis=1, out=gains[:, 1:])
    return GainsProcess(S.grid, gains)


def realized_covariation(S):
    """Cumulative Σ ΔS^i ΔS^j per path, flattened to width d*d"""
    dS = np.diff(S.values, axis=1)
    outer = dS[..., :, None] * dS[..., None, :]
    cum = np.zeros((S.n_paths, S.grid.times.size, S.dim, S.dim))
    np.cumsum(outer, axis=1, out=cum[:, 1:])
    return GridProcess(S.grid, cum.reshape(S.n_paths, S.grid.times.size, S.dim * S.dim))


@dataclass(frozen=True)
class AdmissibilityResult:
    per_path: np.ndarray
    admissible: bool
    bound: float


def check_admissible(G, a, tol=1e-12, mask=None):
    """a-admissibility: G >= -a - tol at every grid time, per path"""
    if a < 0:
        raise ContractViolation('admissibility bound must be non-negative')
    per_path = G.paths.min(axis=1) >= -a - tol
    considered = per_path if mask is None else per_path[np.asarray(mask, dtype=bool)]
    return AdmissibilityResult(per_path=per_path, admissible=bool(np.all(considered)), bound=float(a))


class CoupledSampler(Protocol):
    """A model able to simulate a bundle and refine it on a finer grid"""

    def simulate(self, grid, n_paths, root_seed, path_offset=0, threads=1) -> PathBundle: ...

    def refine(self, bundle, factor) -> PathBundle: ...


def refine_grid(sampler, grid, n_paths, root_seed, factor, path_offset=0, threads=1):
    """Simulate on grid and on its factor-refinement with shared driving noise"""
    refine = getattr(sampler, 'refine', None)
    if refine is None:
        raise UnsupportedRefinement(f'{type(sampler).__name__} cannot refine paths')
    coarse = sampler.simulate(grid, n_paths, root_seed, path_offset=path_offset, threads=threads)
    fine = refine(coarse, factor)
    return coarse, fine


# Path file

def _sidecar(path):
    return Path(f'{path}.json')


def write_path_file(path, bundle, metadata=None):
    """Write the ARBK binary format plus a JSON sidecar with model metadata"""
    path = Path(path)
    names = sorted(bundle.aux)
    with open(path, 'wb') as fh:
        fh.write(MAGIC + bytes([FORMAT_VERSION]))
        fh.write(HEADER.pack(bundle.dim, bundle.grid.n_steps, bundle.n_paths,
                             bundle.grid.horizon, int(bundle.root_seed), len(names)))
        for name in names:
            raw = name.encode('utf-8')
            fh.write(U32.pack(len(raw)) + raw)
        fh.write(bundle.grid.times.astype('<f8').tobytes())
        fh.write(np.ascontiguousarray(bundle.values, dtype='<f8').tobytes())
        for name in names:
            arr = np.ascontiguousarray(bundle.aux[name], dtype='<f8')
            fh.write(U32.pack(arr.ndim) + b''.join(U32.pack(n) for n in arr.shape))
            fh.write(arr.tobytes())

    sidecar = {
        'format_version': FORMAT_VERSION,
        'model': bundle.model,
        'params': bundle.params,
        'path_offset': bundle.path_offset,
        'level': bundle.level,
    }
    sidecar.update(metadata or {})
    _sidecar(path).write_text(canonical_json(sidecar) + '\n', encoding='utf-8')
    logger.info('wrote %d paths x %d steps to %s', bundle.n_paths, bundle.grid.n_steps, path)


def _read(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise PathFileError('unexpected end of path file')
    return data


def read_path_file(path):
    """Read a bundle written by write_path_file"""
    path = Path(path)
    with open(path, 'rb') as fh:
        head = _read(fh, 5)
        if head[:4] != MAGIC:
            raise PathFileError(f'{path} is not an ARBK path file')
        if head[4] != FORMAT_VERSION:
            raise PathFileError(f'unsupported path file version {head[4]}')
        d, n, m, horizon, seed, aux_count = HEADER.unpack(_read(fh, HEADER.size))
        names = []
        for _ in range(aux_count):
            (length,) = U32.unpack(_read(fh, U32.size))
            names.append(_read(fh, length).decode('utf-8'))
        times = np.frombuffer(_read(fh, 8 * (n + 1)), dtype='<f8').astype(float)
        values = np.frombuffer(_read(fh, 8 * m * (n + 1) * d), dtype='<f8').astype(float)
        aux = {}
        for name in names:
            (ndim,) = U32.unpack(_read(fh, U32.size))
            shape = tuple(U32.unpack(_read(fh, U32.size))[0] for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            aux[name] = np.frombuffer(_read(fh, 8 * count), dtype='<f8').astype(float).reshape(shape)

    if times[-1] != horizon:
        raise PathFileError('header horizon does not match the stored grid')
    meta = {}
    sidecar = _sidecar(path)
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding='utf-8'))
    return PathBundle(
        grid=TimeGrid(times),
        values=values.reshape(m, n + 1, d),
        aux=aux,
        root_seed=seed,
        model=meta.get('model', ''),
        params=meta.get('params', {}),
        path_offset=meta.get('path_offset', 0),
        level=meta.get('level', 0),
    )
