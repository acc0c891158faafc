"""
Absolutely continuous changes of measure: density processes, the stopping
times at which a density reaches zero, reweighting, the Girsanov-Lenglart
drift and the local-martingale diagnostic for candidate deflators.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np

from .arbitrage import DEFAULT_THRESHOLDS, StepDecomposition, mean_variance_tradeoff
from .exceptions import ContractViolation, ShapeMismatch
from .numerics import wilson_interval
from .paths import GridProcess

logger = logging.getLogger(__name__)

# Relative slack of the Kunita-Watanabe bound on K^Q
BOUND_RELATIVE_SLACK = 0.05
BOUND_ABSOLUTE_SLACK = 1e-8

DIAGNOSTIC_BLOCKS = 16
DIAGNOSTIC_THRESHOLD = 4.0

# Minimum active paths per regressor for the estimated covariation
PATHS_PER_REGRESSOR = 10


class Approach(str, Enum):
    CONTINUOUS = 'CONTINUOUS'
    JUMP = 'JUMP'
    NONE = 'NONE'


@dataclass(frozen=True)
class DensityProcess:
    """Non-negative P-martingale Z with Z_0 = 1, absorbed at zero.

    exact_zero_time and left_limit carry the analytic hitting time of zero and
    Z just before it when the model knows them (inf / nan otherwise);
    cov_rate is d<S, Z>/dB on the grid when known analytically.
    """
    Z: GridProcess
    exact_zero_time: Optional[np.ndarray] = None
    left_limit: Optional[np.ndarray] = None
    kills_at_jump: bool = False
    cov_rate: Optional[np.ndarray] = None
    name: str = ''

    def __post_init__(self):
        z = self.Z.values
        if self.Z.width != 1:
            raise ShapeMismatch('a density process is scalar')
        if np.any(z < 0) or not np.all(np.isfinite(z)):
            raise ContractViolation('density values must be finite and non-negative')
        if np.any(np.abs(z[:, 0, 0] - 1.0) > 1e-12):
            raise ContractViolation('density processes start at 1')
        dead = np.maximum.accumulate(z[:, :, 0] == 0.0, axis=1)
        if np.any(z[:, :, 0][dead] != 0.0):
            raise ContractViolation('density left zero after reaching it')
        if self.exact_zero_time is not None and self.exact_zero_time.shape != (self.n_paths,):
            raise ShapeMismatch('exact_zero_time needs one entry per path')
        if self.cov_rate is not None and self.cov_rate.shape[:2] != z.shape[:2]:
            raise ShapeMismatch('cov_rate must be given on the density grid')

    @classmethod
    def unit(cls, grid, n_paths, dim=1):
        """Z ≡ 1, the identity change of measure"""
        return cls(
            Z=GridProcess(grid, np.ones((n_paths, grid.times.size))),
            cov_rate=np.zeros((n_paths, grid.times.size, dim)),
            name='unit',
        )

    @property
    def grid(self):
        return self.Z.grid

    @property
    def n_paths(self):
        return self.Z.n_paths

    @property
    def values(self):
        return self.Z.values[:, :, 0]

    @property
    def terminal(self):
        return self.values[:, -1]

    def left_values(self):
        """Z at the left endpoint of every cell"""
        return self.values[:, :-1]

    def restricted(self, rows):
        pick = (lambda arr: None if arr is None else arr[rows])
        return replace(
            self,
            Z=GridProcess(self.grid, self.Z.values[rows]),
            exact_zero_time=pick(self.exact_zero_time),
            left_limit=pick(self.left_limit),
            cov_rate=pick(self.cov_rate),
        )


# Stopping times

@dataclass(frozen=True)
class StoppingReport:
    tau: np.ndarray
    tau_n: np.ndarray
    ladder: tuple
    z_before_zero: np.ndarray
    approach: np.ndarray
    eps_jump: float
    horizon: float

    @classmethod
    def concat(cls, parts):
        first = parts[0]
        return cls(
            tau=np.concatenate([p.tau for p in parts]),
            tau_n=np.concatenate([p.tau_n for p in parts], axis=1),
            ladder=first.ladder,
            z_before_zero=np.concatenate([p.z_before_zero for p in parts]),
            approach=np.concatenate([p.approach for p in parts]),
            eps_jump=first.eps_jump,
            horizon=first.horizon,
        )

    @property
    def n_paths(self):
        return self.tau.size

    def survival_ladder(self):
        """P(tau > tau_n) for every n of the ladder, with Wilson bounds"""
        rows = []
        m = self.n_paths
        for k, n in enumerate(self.ladder):
            hits = int(np.sum(self.tau > self.tau_n[k]))
            lower, upper = wilson_interval(hits, m)
            rows.append({
                'n': n,
                'estimate': hits / m if m else 1.0,
                'lower': lower,
                'upper': upper,
                'resolved': 1.0 / n >= self.eps_jump,
            })
        return rows

    def counts(self):
        return {a.value: int(np.sum(self.approach == a.value)) for a in Approach}

    def summary(self):
        finite = np.isfinite(self.tau)
        return {
            'n_paths': self.n_paths,
            'eps_jump': self.eps_jump,
            'approach': self.counts(),
            'zero_fraction': float(finite.mean()) if self.n_paths else 0.0,
            'survival_ladder': self.survival_ladder(),
        }


def default_eps_jump(grid):
    return 5.0 * float(np.sqrt(grid.dt.max()))


def stopping_times(Z, ladder, eps_jump=None):
    """tau = first time Z or Z_- is zero; tau_n = first time Z < 1/n, capped at T"""
    ladder = tuple(int(n) for n in ladder)
    if not ladder:
        raise ContractViolation('the tau_n ladder is empty')
    grid = Z.grid
    eps_jump = default_eps_jump(grid) if eps_jump is None else float(eps_jump)
    z = Z.values
    m, size = z.shape

    zero = z == 0.0
    hit = zero.any(axis=1)
    k = np.argmax(zero, axis=1)
    tau = np.where(hit, grid.times[k], np.inf)
    z_before = np.where(hit & (k > 0), z[np.arange(m), np.maximum(k - 1, 0)], np.nan)
    if Z.exact_zero_time is not None:
        exact = np.isfinite(Z.exact_zero_time) & hit
        tau = np.where(exact, Z.exact_zero_time, tau)
        if Z.left_limit is not None:
            z_before = np.where(exact, Z.left_limit, z_before)

    approach = np.full(m, Approach.NONE.value, dtype=object)
    approach[hit] = Approach.CONTINUOUS.value
    approach[hit & (z_before > eps_jump)] = Approach.JUMP.value

    tau_n = np.empty((len(ladder), m))
    for row, n in enumerate(ladder):
        below = z < 1.0 / n
        first = np.where(below.any(axis=1), grid.times[np.argmax(below, axis=1)], grid.horizon)
        tau_n[row] = np.minimum(first, np.minimum(tau, grid.horizon))

    return StoppingReport(
        tau=tau, tau_n=tau_n, ladder=ladder, z_before_zero=z_before,
        approach=approach, eps_jump=eps_jump, horizon=grid.horizon,
    )


@dataclass(frozen=True)
class ProbabilityEstimate:
    estimate: float
    lower: float
    upper: float
    successes: int
    trials: int

    def to_dict(self):
        return {
            'estimate': self.estimate, 'lower': self.lower, 'upper': self.upper,
            'successes': self.successes, 'trials': self.trials,
        }


def jump_to_zero_probability(report):
    hits = int(np.sum(report.approach == Approach.JUMP.value))
    trials = report.n_paths
    lower, upper = wilson_interval(hits, trials)
    return ProbabilityEstimate(hits / trials if trials else 0.0, lower, upper, hits, trials)


# Reweighting

@dataclass(frozen=True)
class WeightedExpectation:
    estimate: float
    stderr: float
    effective_sample_size: float
    n_paths: int

    def to_dict(self):
        return {
            'estimate': self.estimate,
            'stderr': self.stderr,
            'effective_sample_size': self.effective_sample_size,
            'n_paths': self.n_paths,
        }

    def within(self, target, allowance=0.0, k=3.0):
        return abs(self.estimate - target) <= max(k * self.stderr, allowance)


def weighted_products(payoff, Z_T):
    """Z_T·payoff with Q-null paths set to zero"""
    payoff = np.asarray(payoff, dtype=float)
    Z_T = np.asarray(Z_T, dtype=float)
    if payoff.shape != Z_T.shape:
        raise ShapeMismatch('payoff and density need one value per path')
    support = Z_T > 0
    product = np.zeros_like(Z_T)
    product[support] = Z_T[support] * payoff[support]
    if not np.all(np.isfinite(product)):
        raise ContractViolation('payoff is not finite on a path with positive weight')
    return product


def reweight(payoff, Z_T):
    """E_Q[payoff] = E_P[Z_T payoff]"""
    product = weighted_products(payoff, Z_T)
    return summarize_products(product, np.asarray(Z_T, dtype=float))


def summarize_products(product, Z_T):
    m = product.size
    stderr = float(product.std(ddof=1) / np.sqrt(m)) if m > 1 else 0.0
    sq = float(np.sum(Z_T ** 2))
    ess = float(np.sum(Z_T) ** 2 / sq) if sq > 0 else 0.0
    return WeightedExpectation(
        estimate=float(product.mean()) if m else 0.0,
        stderr=stderr,
        effective_sample_size=min(ess, float(m)),
        n_paths=m,
    )


# Girsanov-Lenglart

@dataclass(frozen=True)
class QDecomposition:
    """Canonical decomposition of S under Q on the cells where Z_- > 0"""
    base: StepDecomposition
    theta: np.ndarray
    lambda_bar: np.ndarray
    nu_bar: np.ndarray
    a_bar: np.ndarray
    m_bar_increments: np.ndarray
    active: np.ndarray
    mode: str
    variance_warning: bool = False

    def as_step_decomposition(self):
        b = self.base
        return StepDecomposition(
            grid=b.grid, a=self.a_bar, c=b.c, c_pinv=b.c_pinv,
            lam=self.lambda_bar, nu=self.nu_bar, db=b.db, active=self.active,
        )


def estimate_cov_rate(decomp, Z, S):
    """Cross-path regression of ΔM ΔZ / ΔB on [1, Z, S] per cell"""
    z = Z.values
    dS = np.diff(S.values, axis=1)
    dZ = np.diff(z, axis=1)
    m, n, d = dS.shape
    rate = np.zeros((m, n, d))
    needed = PATHS_PER_REGRESSOR * (2 + d)
    warning = False
    for i in range(n):
        rows = decomp.active[:, i] & (z[:, i] > 0)
        count = int(rows.sum())
        if count == 0:
            continue
        if count < needed:
            warning = True
        db = decomp.db[i]
        dm = dS[rows, i] - decomp.a[rows, i] * db
        y = dm * dZ[rows, i, None] / db
        x = np.column_stack([np.ones(count), z[rows, i], S.values[rows, i]])
        beta, *_ = np.linalg.lstsq(x, y, rcond=None)
        rate[rows, i] = x @ beta
    if warning:
        logger.warning('covariation regression ran with fewer than %d paths on some cells', needed)
    return rate, warning


def girsanov(decomp, Z, S, mode='analytic', jump_drift=None):
    """lam_bar = lam + theta/Z_-, nu_bar = nu, theta = c⁺ d<M, Z>/dB.

    When Z is killed exactly at the jump of S, jump_drift (intensity times
    jump size per cell) is removed from the drift before splitting it.
    """
    if not Z.grid.same_as(decomp.grid) or Z.n_paths != decomp.n_paths:
        raise ShapeMismatch('density and decomposition do not describe the same paths')
    z_left = Z.left_values()
    active = decomp.active & (z_left > 0)

    if mode == 'analytic':
        if Z.cov_rate is None:
            raise ContractViolation(f'density {Z.name!r} has no analytic covariation; use mode=estimated')
        rate = Z.cov_rate[:, :-1]
        warning = False
    elif mode == 'estimated':
        rate, warning = estimate_cov_rate(decomp, Z, S)
    else:
        raise ContractViolation(f'unknown girsanov mode {mode!r}')

    theta = np.einsum('mnij,mnj->mni', decomp.c_pinv, rate)
    theta = np.where(active[..., None], theta, 0.0)
    safe_z = np.where(active, z_left, 1.0)[..., None]

    lam, nu = decomp.lam, decomp.nu
    if Z.kills_at_jump and jump_drift is not None:
        a_killed = decomp.a - jump_drift
        lam = np.einsum('mnij,mnj->mni', decomp.c_pinv, a_killed)
        nu = a_killed - np.einsum('mnij,mnj->mni', decomp.c, lam)

    lambda_bar = np.where(active[..., None], lam + theta / safe_z, 0.0)
    nu_bar = np.where(active[..., None], nu, 0.0)
    a_bar = np.einsum('mnij,mnj->mni', decomp.c, lambda_bar) + nu_bar
    m_bar = np.diff(S.values, axis=1) - a_bar * decomp.db[None, :, None]
    m_bar = np.where(active[..., None], m_bar, 0.0)

    return QDecomposition(
        base=decomp, theta=theta, lambda_bar=lambda_bar, nu_bar=nu_bar, a_bar=a_bar,
        m_bar_increments=m_bar, active=active, mode=mode, variance_warning=warning,
    )


@dataclass(frozen=True)
class BoundCheck:
    """Pathwise K^Q_t <= 2 K_t + 2 Σ θᵀcθ/Z_-² ΔB at every grid time; lhs and rhs hold the terminal values"""
    lhs: np.ndarray
    rhs: np.ndarray
    per_path: np.ndarray

    @classmethod
    def concat(cls, parts):
        return cls(
            lhs=np.concatenate([p.lhs for p in parts]),
            rhs=np.concatenate([p.rhs for p in parts]),
            per_path=np.concatenate([p.per_path for p in parts]),
        )

    @property
    def holds(self):
        return bool(np.all(self.per_path))

    def summary(self):
        return {'holds': self.holds, 'violations': int(np.sum(~self.per_path))}


def mvt_under_q(qdec, Z, thresholds=DEFAULT_THRESHOLDS, fine=None):
    """Mean-variance trade-off under Q, with the Kunita-Watanabe bound"""
    support = Z.terminal > 0
    report = mean_variance_tradeoff(qdec.as_step_decomposition(), fine=fine, thresholds=thresholds, support=support)

    base = qdec.base
    db = base.db[None, :]
    k_p = np.cumsum(np.einsum('mni,mnij,mnj->mn', base.lam, base.c, base.lam) * db, axis=1)
    z_left = np.where(qdec.active, Z.left_values(), 1.0)
    drift = np.einsum('mni,mnij,mnj->mn', qdec.theta, base.c, qdec.theta) / z_left ** 2
    extra = np.cumsum(np.where(qdec.active, drift, 0.0) * db, axis=1)
    rhs = 2.0 * k_p + 2.0 * extra
    lhs = report.K_hat.values[:, 1:, 0]
    # every grid time, not only T
    ok = np.all(lhs <= rhs * (1.0 + BOUND_RELATIVE_SLACK) + BOUND_ABSOLUTE_SLACK, axis=1)
    return report, BoundCheck(lhs=lhs[:, -1].copy(), rhs=rhs[:, -1].copy(), per_path=ok)


# Local-martingale diagnostic

@dataclass(frozen=True)
class LocalMartingaleDiagnostic:
    statistic: float
    passed: bool
    threshold: float
    components: dict
    blocks: int
    localization: int

    def to_dict(self):
        return {
            'statistic': self.statistic,
            'passed': self.passed,
            'threshold': self.threshold,
            'components': self.components,
            'blocks': self.blocks,
            'localization': self.localization,
        }


def _robust_tstats(state, y):
    """|coef|/stderr of y on [1, state - mean] with heteroskedasticity-robust errors"""
    n = y.size
    if n < 3:
        return 0.0
    scale = float(np.abs(y).max())
    if scale == 0.0:
        return 0.0
    centred = state - state.mean()
    cols = [np.ones(n)]
    if np.ptp(centred) > 1e-12 * max(1.0, float(np.abs(state).max())):
        cols.append(centred)
    x = np.column_stack(cols)
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    bread = np.linalg.pinv(x.T @ x)
    meat = (x * (resid ** 2)[:, None]).T @ x
    se = np.sqrt(np.maximum(np.diag(bread @ meat @ bread), 0.0))
    stats = np.where(
        se > 1e-15 * scale,
        np.abs(beta) / np.where(se > 0, se, 1.0),
        np.where(np.abs(beta) > 1e-12 * scale, np.inf, 0.0),
    )
    return float(stats.max())


@dataclass(frozen=True)
class BlockSamples:
    """Per-path block data of a deflator candidate: (M, blocks, components)"""
    names: tuple
    live: np.ndarray
    state: np.ndarray
    weighted_increment: np.ndarray
    localization: int

    @classmethod
    def concat(cls, parts):
        first = parts[0]
        return cls(
            names=first.names,
            live=np.concatenate([p.live for p in parts]),
            state=np.concatenate([p.state for p in parts]),
            weighted_increment=np.concatenate([p.weighted_increment for p in parts]),
            localization=first.localization,
        )


def deflator_samples(L, Z, S, localization=8, blocks=DIAGNOSTIC_BLOCKS):
    """Q-weighted block increments of L/Z and (L/Z)·S^i stopped at tau_n.

    The weight of a block is the likelihood ratio Z_end/Z_start; paths already
    stopped or dead at the block start are not live.
    """
    l = L.values[:, :, 0]
    if np.any(l <= 0):
        raise ContractViolation('a deflator candidate must be strictly positive')
    if l.shape[0] not in (1, Z.n_paths):
        raise ShapeMismatch('deflator and density describe different paths')
    z = Z.values
    m, size = z.shape
    n = size - 1
    l = np.broadcast_to(l, z.shape)

    below = z < 1.0 / localization
    stop = np.where(below.any(axis=1), np.argmax(below, axis=1), n)
    ratio = np.divide(l, z, out=np.full(z.shape, np.inf), where=z > 0)
    names = ['L/Z']
    processes = [ratio]
    for i in range(S.dim):
        names.append(f'L/Z*S{i}')
        with np.errstate(invalid='ignore'):
            processes.append(np.where(z > 0, ratio * S.values[:, :, i], np.inf))

    edges = np.unique(np.linspace(0, n, min(blocks, n) + 1).astype(int))
    rows = np.arange(m)
    k = len(edges) - 1
    live = np.zeros((m, k), dtype=bool)
    state = np.zeros((m, k, len(names)))
    incr = np.zeros((m, k, len(names)))
    for b, (s, e) in enumerate(zip(edges[:-1], edges[1:])):
        alive = (z[:, s] > 0) & (s < stop)
        live[:, b] = alive
        end = np.minimum(e, stop)
        z_end = z[:, e]
        weight = np.where(alive & (z_end > 0), z_end / np.where(alive, z[:, s], 1.0), 0.0)
        for j, x in enumerate(processes):
            with np.errstate(invalid='ignore'):
                step = np.where(weight > 0, x[rows, end] - x[:, s], 0.0)
            incr[:, b, j] = weight * step
            state[:, b, j] = np.where(alive, x[:, s], 0.0)
    return BlockSamples(
        names=tuple(names), live=live, state=state, weighted_increment=incr, localization=localization,
    )


def diagnose_deflator(samples, threshold=DIAGNOSTIC_THRESHOLD):
    worst = {}
    for j, name in enumerate(samples.names):
        stat = 0.0
        for b in range(samples.live.shape[1]):
            rows = samples.live[:, b]
            if rows.any():
                stat = max(stat, _robust_tstats(samples.state[rows, b, j], samples.weighted_increment[rows, b, j]))
        worst[name] = stat
    statistic = max(worst.values())
    passed = statistic < threshold
    logger.info('local-martingale diagnostic %s (max t = %.3g)', 'passed' if passed else 'failed', statistic)
    return LocalMartingaleDiagnostic(
        statistic=statistic, passed=passed, threshold=threshold, components=worst,
        blocks=samples.live.shape[1], localization=samples.localization,
    )


def smd_under_q(L, Z, S, localization=8, blocks=DIAGNOSTIC_BLOCKS, threshold=DIAGNOSTIC_THRESHOLD):
    """Test that L/Z and (L/Z)·S^i are Q-local martingales.

    A non-zero conditional mean of the weighted increments in any block fails
    the diagnostic.
    """
    return diagnose_deflator(deflator_samples(L, Z, S, localization, blocks), threshold)


# Supplementary diagnostics

@dataclass(frozen=True)
class InverseDensityProfile:
    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    alive_fraction: np.ndarray
    non_increasing: bool

    def to_dict(self):
        return {
            'times': list(self.times),
            'values': list(self.values),
            'stderr': list(self.stderr),
            'alive_fraction': list(self.alive_fraction),
            'non_increasing': self.non_increasing,
        }


def checkpoint_indices(grid, checkpoints=8):
    return np.unique(np.linspace(0, grid.n_steps, checkpoints + 1).astype(int))


def profile_from_columns(times, columns, z_terminal):
    """E_Q[1/Z_t] = E_P[Z_T/Z_t; Z_t > 0] from Z sampled at checkpoint columns"""
    values, errs, alive = [], [], []
    for j in range(columns.shape[1]):
        live = columns[:, j] > 0
        ratio = np.zeros(columns.shape[0])
        ratio[live] = z_terminal[live] / columns[live, j]
        values.append(float(ratio.mean()))
        errs.append(float(ratio.std(ddof=1) / np.sqrt(ratio.size)) if ratio.size > 1 else 0.0)
        alive.append(float(live.mean()))
    values, errs = np.array(values), np.array(errs)
    slack = 3.0 * np.sqrt(errs[1:] ** 2 + errs[:-1] ** 2) + 1e-12
    return InverseDensityProfile(
        times=np.asarray(times, dtype=float),
        values=values,
        stderr=errs,
        alive_fraction=np.array(alive),
        non_increasing=bool(np.all(np.diff(values) <= slack)),
    )


def inverse_density_profile(Z, checkpoints=8):
    idx = checkpoint_indices(Z.grid, checkpoints)
    return profile_from_columns(Z.grid.times[idx], Z.values[:, idx], Z.terminal)


def exponential_density(W, loading, theta0, grid, bounds=None):
    """Z = exp(θ0·W_t - |θ0|² t/2), optionally stopped on leaving (lower, upper).

    W is the (M, N+1, k) driving Brownian motion and loading the (M, N+1, d, k)
    sensitivity of S to it; the covariation rate d<S, Z>/dt is Z·loading·θ0.
    """
    W = np.asarray(W, dtype=float)
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if W.ndim != 3 or W.shape[2] != theta0.size:
        raise ShapeMismatch('theta0 must match the width of the driving noise')
    t = grid.times[None, :]
    z = np.exp(W @ theta0 - 0.5 * float(theta0 @ theta0) * t)
    running = np.ones(z.shape, dtype=bool)
    if bounds is not None:
        lower, upper = bounds
        if not 0 < lower < 1 < upper:
            raise ContractViolation('density bounds must bracket 1 and stay positive')
        out = (z <= lower) | (z >= upper)
        hit = out.any(axis=1)
        first = np.where(hit, np.argmax(out, axis=1), z.shape[1])
        cols = np.arange(z.shape[1])[None, :]
        running = cols < first[:, None]
        frozen = z[np.arange(z.shape[0]), np.minimum(first, z.shape[1] - 1)]
        z = np.where(running | ~hit[:, None], z, frozen[:, None])
        running = running | ~hit[:, None]
    cov_rate = np.asarray(loading, dtype=float) @ theta0
    cov_rate = cov_rate * (z * running)[..., None]
    name = 'exponential' if bounds is None else 'bounded-exponential'
    return DensityProcess(Z=GridProcess(grid, z), cov_rate=cov_rate, name=name)
