"""
Mean-variance trade-off, tri-state no-arbitrage classifiers and
verification of explicit arbitrage certificates.

Everything that looks at paths produces per-path evidence first; evidence
from several path chunks concatenates, and verdicts are a deterministic fold
over the concatenated evidence.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Dict, Optional, Sequence

import numpy as np

from .exceptions import ContractViolation, ShapeMismatch
from .numerics import DEFAULT_TOL, pinv_psd, wilson_interval
from .paths import GridProcess, PathBundle, TimeGrid, ito_integral

logger = logging.getLogger(__name__)


class Condition(str, Enum):
    NIP = 'NIP'
    NSA = 'NSA'
    NA1 = 'NA1'
    NA = 'NA'
    NFLVR = 'NFLVR'


class VerdictState(str, Enum):
    HOLDS_NUMERICALLY = 'HOLDS_NUMERICALLY'
    FAILS_WITH_CERTIFICATE = 'FAILS_WITH_CERTIFICATE'
    INCONCLUSIVE = 'INCONCLUSIVE'


class CertificateKind(str, Enum):
    INCREASING_PROFIT = 'INCREASING_PROFIT'
    STRONG_ARBITRAGE = 'STRONG_ARBITRAGE'
    ARBITRAGE_OPPORTUNITY = 'ARBITRAGE_OPPORTUNITY'
    FIRST_KIND = 'FIRST_KIND'


# Certificate kinds that witness a failure of NA
NA_WITNESSES = (
    CertificateKind.INCREASING_PROFIT,
    CertificateKind.STRONG_ARBITRAGE,
    CertificateKind.ARBITRAGE_OPPORTUNITY,
)


@dataclass(frozen=True)
class Thresholds:
    tol_nu: float = 1e-8
    rho_div: float = 1.5
    k_max: float = 1e6
    tol_mono: float = 1e-9
    eps_pos: float = 1e-6
    eps_jump: Optional[float] = None
    ladder: Sequence[int] = (2, 4, 8, 16, 32, 64, 128, 256, 512, 1024)
    v_ladder: Sequence[float] = (1.0, 0.5, 0.25, 0.125)
    refine_factor: int = 2
    localization: int = 8
    min_positive_fraction: float = 0.0

    def __post_init__(self):
        for name in ('tol_nu', 'rho_div', 'k_max', 'tol_mono', 'eps_pos'):
            if getattr(self, name) <= 0:
                raise ContractViolation(f'threshold {name} must be positive')
        object.__setattr__(self, 'ladder', tuple(int(n) for n in self.ladder))
        object.__setattr__(self, 'v_ladder', tuple(float(v) for v in self.v_ladder))

    def as_dict(self):
        data = asdict(self)
        data['ladder'] = list(self.ladder)
        data['v_ladder'] = list(self.v_ladder)
        return data


DEFAULT_THRESHOLDS = Thresholds()


@dataclass(frozen=True)
class StepDecomposition:
    """Per (path, cell) characteristics and their split a = c·lam + nu.

    Arrays are indexed (M, N, ...) where cell i is (t_i, t_{i+1}]; db holds the
    clock increments and active marks the cells under analysis.
    """
    grid: TimeGrid
    a: np.ndarray
    c: np.ndarray
    c_pinv: np.ndarray
    lam: np.ndarray
    nu: np.ndarray
    db: np.ndarray
    active: np.ndarray

    @classmethod
    def build(cls, grid, a, c, db=None, active=None, tol=DEFAULT_TOL):
        a = np.asarray(a, dtype=float)
        c = np.asarray(c, dtype=float)
        if a.ndim != 3 or c.shape != a.shape + a.shape[-1:]:
            raise ShapeMismatch(f'drift {a.shape} and diffusion {c.shape} do not line up')
        if a.shape[1] != grid.n_steps:
            raise ShapeMismatch('characteristics must be given per grid cell')
        db = grid.dt if db is None else np.asarray(db, dtype=float)
        if np.any(db < 0):
            raise ContractViolation('clock increments must be non-negative')
        active = np.ones(a.shape[:2], dtype=bool) if active is None else np.asarray(active, dtype=bool)
        result = pinv_psd(c, tol)
        pinv = result.pinv.entries
        lam = np.einsum('mnij,mnj->mni', pinv, a)
        nu = a - np.einsum('mnij,mnj->mni', c, lam)
        return cls(grid=grid, a=a, c=c, c_pinv=pinv, lam=lam, nu=nu, db=db, active=active)

    @property
    def n_paths(self):
        return self.a.shape[0]

    @property
    def dim(self):
        return self.a.shape[2]

    def tradeoff_rate(self):
        """lamᵀ c lam per cell, zero on inactive cells"""
        rate = np.einsum('mni,mnij,mnj->mn', self.lam, self.c, self.lam)
        return np.where(self.active, rate, 0.0)

    def drift_scale(self):
        a = np.abs(self.a[self.active]) if self.a.size else np.zeros(1)
        return max(1.0, float(a.max())) if a.size else 1.0


# Mean-variance trade-off

@dataclass(frozen=True)
class TradeoffReport:
    K_hat: GridProcess
    terminal: np.ndarray
    divergence: np.ndarray
    sigma_estimate: np.ndarray
    refined: bool
    support: np.ndarray

    @classmethod
    def concat(cls, parts):
        first = parts[0]
        return cls(
            K_hat=GridProcess(first.K_hat.grid, np.concatenate([p.K_hat.values for p in parts])),
            terminal=np.concatenate([p.terminal for p in parts]),
            divergence=np.concatenate([p.divergence for p in parts]),
            sigma_estimate=np.concatenate([p.sigma_estimate for p in parts]),
            refined=all(p.refined for p in parts),
            support=np.concatenate([p.support for p in parts]),
        )

    def divergence_fraction(self):
        n = int(self.support.sum())
        return float(self.divergence[self.support].sum() / n) if n else 0.0

    def sigma_finite_fraction(self):
        n = int(self.support.sum())
        return float(np.isfinite(self.sigma_estimate[self.support]).sum() / n) if n else 0.0

    def summary(self):
        k = self.terminal[self.support]
        return {
            'n_paths': int(self.support.sum()),
            'mean_terminal': float(k.mean()) if k.size else 0.0,
            'max_terminal': float(k.max()) if k.size else 0.0,
            'divergence_fraction': self.divergence_fraction(),
            'sigma_finite_fraction': self.sigma_finite_fraction(),
            'refined': self.refined,
        }


def mean_variance_tradeoff(decomp, fine=None, thresholds=DEFAULT_THRESHOLDS, support=None):
    """K_t = Σ lamᵀ c lam ΔB, with divergence flags from a coupled refinement"""
    rate = decomp.tradeoff_rate() * decomp.db[None, :]
    m, n = rate.shape
    k_hat = np.zeros((m, n + 1))
    np.cumsum(rate, axis=1, out=k_hat[:, 1:])
    support = np.ones(m, dtype=bool) if support is None else np.asarray(support, dtype=bool)

    divergence = np.zeros(m, dtype=bool)
    sigma = np.full(m, np.inf)
    if fine is not None:
        factor = fine.grid.n_steps // n
        if factor * n != fine.grid.n_steps or fine.n_paths != m:
            raise ShapeMismatch('refined decomposition is not coupled to the coarse one')
        fine_rate = (fine.tradeoff_rate() * fine.db[None, :]).reshape(m, n, factor).sum(axis=2)
        fine_total = fine_rate.sum(axis=1)
        divergence = (fine_total > thresholds.rho_div * k_hat[:, -1]) & (fine_total > thresholds.k_max)
        cell_flags = (fine_rate > thresholds.rho_div * rate) & (fine_rate > thresholds.k_max)
        flagged = cell_flags.any(axis=1)
        first = np.argmax(cell_flags, axis=1)
        sigma = np.where(flagged, decomp.grid.times[first], np.inf)

    return TradeoffReport(
        K_hat=GridProcess(decomp.grid, k_hat),
        terminal=k_hat[:, -1].copy(),
        divergence=divergence,
        sigma_estimate=sigma,
        refined=fine is not None,
        support=support,
    )


# Certificates

@dataclass(frozen=True)
class Certificate:
    kind: CertificateKind
    strategy: Optional[GridProcess] = None
    family: Optional[Dict[float, GridProcess]] = None
    claim: Optional[np.ndarray] = None
    label: str = ''
    measure: str = 'P'
    admissibility_bound: float = 0.0
    tolerance: Optional[float] = None
    expected_gain: Optional[float] = None
    verified: bool = False
    reason: str = 'not verified'
    stats: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            'kind': self.kind.value,
            'label': self.label,
            'measure': self.measure,
            'verified': self.verified,
            'reason': self.reason,
            'stats': self.stats,
        }


@dataclass(frozen=True)
class CertificateCheck:
    """Per-path outcome of checking one certificate on one or more chunks"""
    support: np.ndarray
    weights: np.ndarray
    monotone: np.ndarray
    min_gain: np.ndarray
    terminal: np.ndarray
    doubled_dominates: np.ndarray
    claim_positive: np.ndarray
    family_ok: np.ndarray
    scale: float

    @classmethod
    def concat(cls, parts):
        return cls(
            support=np.concatenate([p.support for p in parts]),
            weights=np.concatenate([p.weights for p in parts]),
            monotone=np.concatenate([p.monotone for p in parts]),
            min_gain=np.concatenate([p.min_gain for p in parts]),
            terminal=np.concatenate([p.terminal for p in parts]),
            doubled_dominates=np.concatenate([p.doubled_dominates for p in parts]),
            claim_positive=np.concatenate([p.claim_positive for p in parts]),
            family_ok=np.concatenate([p.family_ok for p in parts]),
            scale=max(p.scale for p in parts),
        )


def _supported(bundle, support):
    return PathBundle(grid=bundle.grid, values=bundle.values[support])


def _rows(process, support):
    if process.n_paths == 1:
        return process
    return GridProcess(process.grid, process.values[support])


def check_certificate(cert, S, weights=None, thresholds=DEFAULT_THRESHOLDS):
    """Evaluate a certificate's strategy on the supported paths of S.

    Paths with zero weight are null under the weighted measure and are never
    read.
    """
    m = S.n_paths
    weights = np.ones(m) if weights is None else np.asarray(weights, dtype=float)
    if weights.shape != (m,):
        raise ShapeMismatch('weights must hold one value per path')
    support = weights > 0
    sub = _supported(S, support)
    k = int(support.sum())

    monotone = np.zeros(m, dtype=bool)
    min_gain = np.full(m, np.nan)
    terminal = np.full(m, np.nan)
    doubled = np.zeros(m, dtype=bool)
    claim_positive = np.zeros(m, dtype=bool)
    family_ok = np.zeros(m, dtype=bool)
    scale = 1.0

    if cert.kind is CertificateKind.FIRST_KIND:
        if not cert.family or cert.claim is None:
            raise ContractViolation('first-kind certificates need a strategy family and a claim')
        claim = np.asarray(cert.claim, dtype=float)[support]
        ok = np.ones(k, dtype=bool)
        tol = cert.tolerance if cert.tolerance is not None else thresholds.tol_mono
        for v, strategy in sorted(cert.family.items(), reverse=True):
            gains = ito_integral(_rows(strategy, support), sub)
            ok &= gains.paths.min(axis=1) >= -v - tol
            ok &= v + gains.terminal >= claim - tol
        family_ok[support] = ok
        claim_positive[support] = claim > thresholds.eps_pos
    else:
        if cert.strategy is None:
            raise ContractViolation('certificate has no strategy')
        gains = ito_integral(_rows(cert.strategy, support), sub)
        g = gains.paths
        if k:
            scale = max(1.0, float(np.abs(g[:, -1]).max()))
        steps = np.diff(g, axis=1)
        monotone[support] = steps.min(axis=1, initial=0.0) >= -thresholds.tol_mono * scale
        min_gain[support] = g.min(axis=1)
        terminal[support] = g[:, -1]
        doubled_gains = ito_integral(_rows(cert.strategy.scaled(2.0), support), sub).paths
        doubled[support] = np.all(doubled_gains >= g - thresholds.tol_mono * scale, axis=1)

    return CertificateCheck(
        support=support, weights=weights, monotone=monotone, min_gain=min_gain,
        terminal=terminal, doubled_dominates=doubled, claim_positive=claim_positive,
        family_ok=family_ok, scale=scale,
    )


def finalize_certificate(cert, check, thresholds=DEFAULT_THRESHOLDS):
    """Decide a certificate from its (possibly concatenated) per-path check"""
    s = check.support
    n = int(s.sum())
    stats = {'n_support': n, 'n_paths': int(s.size)}
    if n == 0:
        return replace(cert, verified=False, reason='no supported paths', stats=stats)

    if cert.kind is CertificateKind.FIRST_KIND:
        hits = int(check.claim_positive[s].sum())
        lower, upper = wilson_interval(hits, n)
        stats.update({
            'v_ladder': sorted(cert.family, reverse=True),
            'claim_positive_fraction': hits / n,
            'claim_positive_lower': lower,
            'claim_positive_upper': upper,
            'superreplicated_fraction': float(check.family_ok[s].mean()),
        })
        if not np.all(check.family_ok[s]):
            return _reject(cert, 'some H^v is not v-admissible or misses the claim', stats)
        if lower <= 0:
            return _reject(cert, 'claim is not positive with positive probability', stats)
        return replace(cert, verified=True, reason='verified', stats=stats)

    terminal = check.terminal[s]
    tol = cert.tolerance if cert.tolerance is not None else thresholds.tol_mono * check.scale
    positive = terminal > thresholds.eps_pos
    hits = int(positive.sum())
    lower, upper = wilson_interval(hits, n)
    weighted = np.where(s, check.weights * np.nan_to_num(check.terminal), 0.0)
    stats.update({
        'positive_fraction': hits / n,
        'positive_lower': lower,
        'positive_upper': upper,
        'mean_terminal': float(terminal.mean()),
        'min_terminal': float(terminal.min()),
        'max_terminal': float(terminal.max()),
        'sd_terminal': float(terminal.std(ddof=1)) if n > 1 else 0.0,
        'weighted_mean_terminal': float(weighted.mean()),
        'min_gain': float(check.min_gain[s].min()),
        'monotone_fraction': float(check.monotone[s].mean()),
        'tolerance': float(tol),
    })
    if cert.expected_gain is not None:
        stats['expected_gain'] = float(cert.expected_gain)
    if lower <= 0 or hits / n < thresholds.min_positive_fraction:
        return _reject(cert, 'terminal gains are not positive with positive probability', stats)

    if cert.kind is CertificateKind.INCREASING_PROFIT:
        stats['unbounded'] = bool(np.all(check.doubled_dominates[s]))
        if not np.all(check.monotone[s]):
            return _reject(cert, 'gains decrease on some path', stats)
    elif cert.kind is CertificateKind.STRONG_ARBITRAGE:
        if np.any(check.min_gain[s] < -tol):
            return _reject(cert, 'strategy is not 0-admissible', stats)
    elif cert.kind is CertificateKind.ARBITRAGE_OPPORTUNITY:
        stats['admissibility_bound'] = float(cert.admissibility_bound)
        if np.any(check.min_gain[s] < -cert.admissibility_bound - tol):
            return _reject(cert, 'strategy is not admissible at the stated bound', stats)
        if np.any(terminal < -tol):
            return _reject(cert, 'terminal gains are negative on some path', stats)
    return replace(cert, verified=True, reason='verified', stats=stats)


def _reject(cert, reason, stats):
    logger.warning('%s certificate (%s) rejected: %s', cert.kind.value, cert.label, reason)
    return replace(cert, verified=False, reason=reason, stats=stats)


def verify_certificate(cert, S, weights=None, thresholds=DEFAULT_THRESHOLDS):
    return finalize_certificate(cert, check_certificate(cert, S, weights, thresholds), thresholds)


# Classifiers

@dataclass(frozen=True)
class Verdict:
    condition: Condition
    state: VerdictState
    evidence: dict
    thresholds: dict
    certificate: Optional[Certificate] = None

    def __post_init__(self):
        if self.state is VerdictState.FAILS_WITH_CERTIFICATE:
            if self.certificate is None or not self.certificate.verified:
                raise ContractViolation('a failing verdict needs a verified certificate')

    def to_dict(self):
        return {
            'condition': self.condition.value,
            'state': self.state.value,
            'evidence': self.evidence,
            'thresholds': self.thresholds,
            'certificate': self.certificate.to_dict() if self.certificate else None,
        }


def nip_certificate(decomp, S, measure='P'):
    """Candidate increasing profit H = nu (only the kernel part of the drift is traded)"""
    nu = np.where(decomp.active[..., None], decomp.nu, 0.0)
    values = np.zeros((decomp.n_paths, decomp.grid.times.size, decomp.dim))
    values[:, :-1] = nu
    expected = (np.einsum('mni,mni->mn', nu, nu) * decomp.db[None, :]).sum(axis=1)
    return Certificate(
        kind=CertificateKind.INCREASING_PROFIT,
        strategy=GridProcess(decomp.grid, values),
        label='H = nu',
        measure=measure,
        expected_gain=float(expected.mean()) if expected.size else 0.0,
    )


@dataclass(frozen=True)
class NipEvidence:
    nu_mass: np.ndarray
    support: np.ndarray
    scale: float
    check: Optional[CertificateCheck]
    expected_gain: float

    @classmethod
    def concat(cls, parts):
        checks = [p.check for p in parts]
        sizes = np.array([p.support.size for p in parts], dtype=float)
        return cls(
            nu_mass=np.concatenate([p.nu_mass for p in parts]),
            support=np.concatenate([p.support for p in parts]),
            scale=max(p.scale for p in parts),
            check=CertificateCheck.concat(checks) if all(c is not None for c in checks) else None,
            expected_gain=float(np.dot(sizes, [p.expected_gain for p in parts]) / sizes.sum()),
        )


def nip_evidence(decomp, S, weights=None, thresholds=DEFAULT_THRESHOLDS, measure='P'):
    support = np.ones(decomp.n_paths, dtype=bool) if weights is None else np.asarray(weights) > 0
    nu_norm = np.sqrt(np.einsum('mni,mni->mn', decomp.nu, decomp.nu))
    mass = (np.where(decomp.active, nu_norm, 0.0) * decomp.db[None, :]).sum(axis=1)
    cert = nip_certificate(decomp, S, measure)
    check = check_certificate(cert, S, weights, thresholds)
    return NipEvidence(
        nu_mass=mass, support=support, scale=decomp.drift_scale(),
        check=check, expected_gain=cert.expected_gain,
    )


def nip_verdict(evidence, thresholds=DEFAULT_THRESHOLDS, measure='P'):
    mass = evidence.nu_mass[evidence.support]
    max_mass = float(mass.max()) if mass.size else 0.0
    limit = thresholds.tol_nu * evidence.scale
    info = {'max_nu_mass': max_mass, 'nu_limit': limit, 'measure': measure}
    if max_mass <= limit:
        return Verdict(Condition.NIP, VerdictState.HOLDS_NUMERICALLY, info, thresholds.as_dict())
    cert = Certificate(
        kind=CertificateKind.INCREASING_PROFIT, label='H = nu', measure=measure,
        expected_gain=evidence.expected_gain,
    )
    if evidence.check is not None:
        cert = finalize_certificate(cert, evidence.check, thresholds)
    if cert.verified:
        return Verdict(Condition.NIP, VerdictState.FAILS_WITH_CERTIFICATE, info, thresholds.as_dict(), cert)
    info['certificate_rejected'] = cert.reason
    return Verdict(Condition.NIP, VerdictState.INCONCLUSIVE, info, thresholds.as_dict())


def check_nip(decomp, S, weights=None, thresholds=DEFAULT_THRESHOLDS, measure='P'):
    """NIP holds iff nu = 0; a non-zero nu is traded as H = nu for a certificate"""
    return nip_verdict(nip_evidence(decomp, S, weights, thresholds, measure), thresholds, measure)


def _inherit(condition, verdict, thresholds, extra):
    evidence = dict(extra, inherited_from=verdict.condition.value)
    return Verdict(condition, VerdictState.FAILS_WITH_CERTIFICATE, evidence, thresholds.as_dict(), verdict.certificate)


def check_nsa(tradeoff, nip, thresholds=DEFAULT_THRESHOLDS):
    """NSA holds iff nu = 0 and no trade-off increment explodes (sigma = inf)"""
    info = {'sigma_finite_fraction': tradeoff.sigma_finite_fraction(), 'refined': tradeoff.refined}
    if nip.state is VerdictState.FAILS_WITH_CERTIFICATE:
        return _inherit(Condition.NSA, nip, thresholds, info)
    if nip.state is VerdictState.HOLDS_NUMERICALLY and info['sigma_finite_fraction'] == 0.0:
        return Verdict(Condition.NSA, VerdictState.HOLDS_NUMERICALLY, info, thresholds.as_dict())
    return Verdict(Condition.NSA, VerdictState.INCONCLUSIVE, info, thresholds.as_dict())


def check_na1(tradeoff, nip, first_kind=None, thresholds=DEFAULT_THRESHOLDS):
    """NA1 holds iff nu = 0 and the trade-off is finite at T"""
    info = {'divergence_fraction': tradeoff.divergence_fraction(), 'tradeoff': tradeoff.summary()}
    if nip.state is VerdictState.FAILS_WITH_CERTIFICATE:
        return _inherit(Condition.NA1, nip, thresholds, info)
    if nip.state is VerdictState.HOLDS_NUMERICALLY and info['divergence_fraction'] == 0.0:
        return Verdict(Condition.NA1, VerdictState.HOLDS_NUMERICALLY, info, thresholds.as_dict())
    if first_kind is not None and first_kind.verified:
        return Verdict(Condition.NA1, VerdictState.FAILS_WITH_CERTIFICATE, info, thresholds.as_dict(), first_kind)
    return Verdict(Condition.NA1, VerdictState.INCONCLUSIVE, info, thresholds.as_dict())


def check_na(certificates, thresholds=DEFAULT_THRESHOLDS):
    """NA can only fail, through a verified arbitrage-type certificate"""
    for cert in certificates:
        if cert is not None and cert.verified and cert.kind in NA_WITNESSES:
            info = {'witness': cert.kind.value}
            return Verdict(Condition.NA, VerdictState.FAILS_WITH_CERTIFICATE, info, thresholds.as_dict(), cert)
    info = {'witness': None, 'note': 'no standalone NA test exists; only certificates decide'}
    return Verdict(Condition.NA, VerdictState.INCONCLUSIVE, info, thresholds.as_dict())


def nflvr_summary(na1, na):
    """NFLVR = NA1 and NA"""
    if VerdictState.FAILS_WITH_CERTIFICATE in (na1.state, na.state):
        state = VerdictState.FAILS_WITH_CERTIFICATE
    elif na1.state is VerdictState.HOLDS_NUMERICALLY and na.state is VerdictState.HOLDS_NUMERICALLY:
        state = VerdictState.HOLDS_NUMERICALLY
    else:
        state = VerdictState.INCONCLUSIVE
    return {
        'condition': Condition.NFLVR.value,
        'state': state.value,
        'components': {'NA1': na1.state.value, 'NA': na.state.value},
    }
