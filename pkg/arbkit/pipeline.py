"""
Chunked classification and change-of-measure runs.

Paths are simulated and analysed chunk by chunk; every chunk contributes
per-path evidence which is concatenated before any verdict is formed, so the
reports depend on the seed, grid and path count only.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .arbitrage import (
    DEFAULT_THRESHOLDS, NipEvidence, TradeoffReport, check_na, check_na1, check_nsa,
    mean_variance_tradeoff, nflvr_summary, nip_evidence, nip_verdict,
)
from .exceptions import ContractViolation, ShapeMismatch
from .measure import (
    BlockSamples, BoundCheck, DensityProcess, StoppingReport, checkpoint_indices, deflator_samples,
    diagnose_deflator, exponential_density, girsanov, jump_to_zero_probability, mvt_under_q,
    profile_from_columns, stopping_times, summarize_products,
)
from .paths import GridProcess, read_path_file, realized_covariation

logger = logging.getLogger(__name__)

# Upper bound on (paths x fine cells x d²) analysed at once
CELL_BUDGET = 2 ** 21

MEASURE_KINDS = ('none', 'canonical', 'exponential', 'custom')
GIRSANOV_MODES = ('analytic', 'estimated')


@dataclass(frozen=True)
class MeasureChange:
    kind: str = 'none'
    theta0: Tuple[float, ...] = ()
    bounds: Optional[Tuple[float, float]] = None
    density_file: Optional[str] = None
    mode: str = 'analytic'

    def __post_init__(self):
        if self.kind not in MEASURE_KINDS:
            raise ContractViolation(f'unknown measure change {self.kind!r}')
        if self.mode not in GIRSANOV_MODES:
            raise ContractViolation(f'unknown girsanov mode {self.mode!r}')
        if self.kind == 'exponential' and not self.theta0:
            raise ContractViolation('an exponential density needs theta0')
        if self.kind == 'custom' and not self.density_file:
            raise ContractViolation('a custom density needs a density file')


def chunk_size(requested, grid, dim, factor):
    cells = grid.n_steps * max(1, factor) * dim * dim
    return max(1, min(int(requested), CELL_BUDGET // max(1, cells)))


class DensitySource:
    """Builds the density of a chunk (and of its refinement) for a measure change"""

    def __init__(self, model, measure, grid):
        self.model = model
        self.measure = measure
        self.custom = None
        if measure.kind == 'custom':
            bundle = read_path_file(measure.density_file)
            if bundle.dim != 1 or not bundle.grid.same_as(grid):
                raise ShapeMismatch('custom density must be scalar and live on the run grid')
            self.custom = bundle

    def build(self, bundle):
        kind = self.measure.kind
        if kind == 'none':
            return DensityProcess.unit(bundle.grid, bundle.n_paths, bundle.dim)
        if kind == 'canonical':
            return self.model.density_process(bundle)
        if kind == 'exponential':
            w, loading = self.model.driving_noise(bundle)
            return exponential_density(w, loading, self.measure.theta0, bundle.grid, self.measure.bounds)
        rows = slice(bundle.path_offset, bundle.path_offset + bundle.n_paths)
        z = self.custom.values[rows, :, 0]
        if z.shape[0] != bundle.n_paths:
            raise ShapeMismatch('custom density has fewer paths than the run')
        return DensityProcess(Z=GridProcess(bundle.grid, z), name='custom')

    def build_fine(self, fine):
        if self.measure.kind == 'custom':
            return None
        return self.build(fine)


@dataclass
class _Evidence:
    """Per-chunk evidence under one measure"""
    tradeoff: list = field(default_factory=list)
    nip: list = field(default_factory=list)

    def fold(self, thresholds, measure):
        tradeoff = TradeoffReport.concat(self.tradeoff)
        nip = nip_verdict(NipEvidence.concat(self.nip), thresholds, measure)
        nsa = check_nsa(tradeoff, nip, thresholds)
        na1 = check_na1(tradeoff, nip, thresholds=thresholds)
        na = check_na([nip.certificate], thresholds)
        return ClassificationResult(
            measure=measure,
            verdicts={'NIP': nip, 'NSA': nsa, 'NA1': na1, 'NA': na},
            nflvr=nflvr_summary(na1, na),
            tradeoff=tradeoff,
        )


@dataclass(frozen=True)
class ClassificationResult:
    measure: str
    verdicts: dict
    nflvr: dict
    tradeoff: TradeoffReport
    extra: dict = field(default_factory=dict)

    def states(self):
        return {name: v.state.value for name, v in self.verdicts.items()}

    def to_dict(self, conditions=('NIP', 'NSA', 'NA1', 'NA')):
        data = {
            'measure': self.measure,
            'verdicts': [self.verdicts[c].to_dict() for c in conditions],
            'nflvr': self.nflvr,
            'tradeoff': self.tradeoff.summary(),
        }
        data.update(self.extra)
        return data


@dataclass(frozen=True)
class MeasureChangeResult:
    p: ClassificationResult
    q: ClassificationResult
    stopping: StoppingReport
    unit_mass: object
    profile: object
    deflator: object
    bound: BoundCheck
    variance_warning: bool
    nu_preserved: bool

    def to_dict(self, conditions=('NIP', 'NSA', 'NA1', 'NA')):
        return {
            'under_p': self.p.to_dict(conditions),
            'under_q': self.q.to_dict(conditions),
            'stopping': self.stopping.summary(),
            'jump_to_zero': jump_to_zero_probability(self.stopping).to_dict(),
            'density_mass': self.unit_mass.to_dict(),
            'inverse_density': self.profile.to_dict(),
            'deflator_diagnostic': self.deflator.to_dict(),
            'kunita_watanabe_bound': self.bound.summary(),
            'variance_warning': self.variance_warning,
            'nu_preserved': self.nu_preserved,
        }


def _covariation_gap(bundle, decomp):
    """|realized <S>_T - Σ c ΔB| per path (Frobenius)"""
    realized = realized_covariation(bundle).matrices()[:, -1]
    analytic = np.einsum('mnij,n->mij', decomp.c, decomp.db)
    return np.sqrt(np.sum((realized - analytic) ** 2, axis=(1, 2)))


def iter_chunks(model, grid, n_paths, root_seed, threads, chunk):
    for offset in range(0, n_paths, chunk):
        size = min(chunk, n_paths - offset)
        logger.debug('chunk of %d paths at offset %d', size, offset)
        yield model.simulate(grid, size, root_seed, path_offset=offset, threads=threads)


def _p_chunk(model, bundle, fine, thresholds, evidence, gaps):
    decomp = model.decompose(bundle)
    fine_decomp = model.decompose(fine) if fine is not None else None
    evidence.tradeoff.append(mean_variance_tradeoff(decomp, fine_decomp, thresholds))
    evidence.nip.append(nip_evidence(decomp, bundle, None, thresholds, 'P'))
    gaps.append(_covariation_gap(bundle, decomp))
    return decomp, fine_decomp


def classify(model, grid, n_paths, root_seed, thresholds=DEFAULT_THRESHOLDS, threads=1, chunk_paths=2000):
    """Simulate, decompose and classify NIP / NSA / NA1 / NA under P"""
    chunk = chunk_size(chunk_paths, grid, model.dim, thresholds.refine_factor)
    logger.info('classifying %s: %d paths, %d steps, chunks of %d', model.kind, n_paths, grid.n_steps, chunk)
    evidence, gaps = _Evidence(), []
    for bundle in iter_chunks(model, grid, n_paths, root_seed, threads, chunk):
        fine = model.refine(bundle, thresholds.refine_factor)
        _p_chunk(model, bundle, fine, thresholds, evidence, gaps)
    result = evidence.fold(thresholds, 'P')
    gap = np.concatenate(gaps)
    extra = {'covariation_gap': {'mean': float(gap.mean()), 'max': float(gap.max())}}
    logger.info('verdicts under P: %s', result.states())
    return ClassificationResult(result.measure, result.verdicts, result.nflvr, result.tradeoff, extra)


def change_measure(model, measure, grid, n_paths, root_seed, thresholds=DEFAULT_THRESHOLDS,
                   threads=1, chunk_paths=2000, checkpoints=8):
    """Classify under P and under Q, with the diagnostics of the density"""
    chunk = chunk_size(chunk_paths, grid, model.dim, thresholds.refine_factor)
    source = DensitySource(model, measure, grid)
    logger.info('changing measure (%s) on %s: %d paths, %d steps', measure.kind, model.kind, n_paths, grid.n_steps)

    p_evidence, q_evidence, gaps = _Evidence(), _Evidence(), []
    stopping, z_terminal, columns, deflators, bounds = [], [], [], [], []
    warning, nu_preserved = False, True
    idx = checkpoint_indices(grid, checkpoints)
    continuous = model.characteristics().jump_spec is None

    for bundle in iter_chunks(model, grid, n_paths, root_seed, threads, chunk):
        fine = model.refine(bundle, thresholds.refine_factor)
        decomp, fine_decomp = _p_chunk(model, bundle, fine, thresholds, p_evidence, gaps)
        z = source.build(bundle)
        z_fine = source.build_fine(fine)

        q = girsanov(decomp, z, bundle, measure.mode, model.jump_drift(bundle))
        fine_q = None
        if z_fine is not None:
            fine_q = girsanov(fine_decomp, z_fine, fine, measure.mode, model.jump_drift(fine)).as_step_decomposition()
        tradeoff_q, bound = mvt_under_q(q, z, thresholds, fine=fine_q)
        q_evidence.tradeoff.append(tradeoff_q)
        q_evidence.nip.append(nip_evidence(q.as_step_decomposition(), bundle, z.terminal, thresholds, 'Q'))
        bounds.append(bound)
        warning |= q.variance_warning
        if continuous:
            nu_preserved &= bool(np.array_equal(q.nu_bar, np.where(q.active[..., None], decomp.nu, 0.0)))

        stopping.append(stopping_times(z, thresholds.ladder, thresholds.eps_jump))
        z_terminal.append(z.terminal.copy())
        columns.append(z.values[:, idx])
        unit = GridProcess(grid, np.ones((1, grid.times.size, 1)))
        deflators.append(deflator_samples(unit, z, bundle, thresholds.localization))

    p = p_evidence.fold(thresholds, 'P')
    gap = np.concatenate(gaps)
    p = ClassificationResult(p.measure, p.verdicts, p.nflvr, p.tradeoff,
                             {'covariation_gap': {'mean': float(gap.mean()), 'max': float(gap.max())}})
    q = q_evidence.fold(thresholds, 'Q')
    z_terminal = np.concatenate(z_terminal)
    result = MeasureChangeResult(
        p=p,
        q=q,
        stopping=StoppingReport.concat(stopping),
        unit_mass=summarize_products(z_terminal, z_terminal),
        profile=profile_from_columns(grid.times[idx], np.concatenate(columns), z_terminal),
        deflator=diagnose_deflator(BlockSamples.concat(deflators)),
        bound=BoundCheck.concat(bounds),
        variance_warning=warning,
        nu_preserved=nu_preserved,
    )
    logger.info('verdicts under P: %s; under Q: %s', p.states(), q.states())
    return result
