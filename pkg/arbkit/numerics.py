"""
Small dense linear algebra on symmetric positive semidefinite matrices and
the random-stream contract shared by every simulation.

All matrix routines accept a single d x d matrix or a stack (..., d, d) so the
same code serves one grid cell or every (path, cell) pair of a bundle.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .exceptions import ContractViolation, NotPSDError, ShapeMismatch

DEFAULT_TOL = 1e-12
PSD_EPS = 1e-10
MAX_DIM = 64
SEED_LIMIT = 2 ** 64

# z-value of the Wilson intervals reported next to 3-stderr tolerances
WILSON_Z = 3.0


def symmetrize(a):
    """Return (a + aᵀ)/2, which is exactly symmetric in floating point"""
    a = np.asarray(a, dtype=float)
    return (a + np.swapaxes(a, -1, -2)) / 2.0


@dataclass(frozen=True)
class SymMatrix:
    """Symmetric matrix, or a stack of them along the leading axes"""
    entries: np.ndarray
    psd: bool = True

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim < 2 or entries.shape[-1] != entries.shape[-2]:
            raise ContractViolation(f'expected (..., d, d) entries, got shape {entries.shape}')
        if entries.shape[-1] < 1:
            raise ContractViolation('matrix dimension must be at least 1')
        if not np.array_equal(entries, np.swapaxes(entries, -1, -2)):
            raise ContractViolation('matrix is not symmetric')
        entries.setflags(write=False)
        object.__setattr__(self, 'entries', entries)

    @property
    def dim(self):
        return self.entries.shape[-1]

    @classmethod
    def identity(cls, d):
        return cls(np.eye(d))

    @classmethod
    def diag(cls, values):
        return cls(np.diag(np.asarray(values, dtype=float)))


@dataclass(frozen=True)
class PseudoinverseResult:
    pinv: SymMatrix
    rank: Union[int, np.ndarray]
    range_projector: SymMatrix
    tol_used: float


@dataclass(frozen=True)
class DriftDecomposition:
    """a = c·lam + nu with nu in the kernel of c"""
    lam: np.ndarray
    nu: np.ndarray
    pinv: Optional[PseudoinverseResult] = field(default=None, repr=False)


def _as_sym(c):
    if isinstance(c, SymMatrix):
        return c
    return SymMatrix(c)


def pinv_psd(c, tol=DEFAULT_TOL):
    """Moore-Penrose pseudoinverse of a symmetric PSD matrix (or stack)"""
    c = _as_sym(c)
    if tol <= 0:
        raise ContractViolation('tol must be positive')
    if c.dim > MAX_DIM:
        raise ContractViolation(f'dimension {c.dim} exceeds {MAX_DIM}')

    if c.dim == 1:
        return _pinv_scalar(c, tol)
    if c.entries.ndim > 2:
        flat = c.entries.reshape(-1, c.dim, c.dim)
        if np.all(flat == flat[0]):
            single = pinv_psd(SymMatrix(flat[0], c.psd), tol)
            shape = c.entries.shape
            return PseudoinverseResult(
                pinv=SymMatrix(np.broadcast_to(single.pinv.entries, shape)),
                rank=np.full(shape[:-2], single.rank),
                range_projector=SymMatrix(np.broadcast_to(single.range_projector.entries, shape)),
                tol_used=tol,
            )

    w, v = np.linalg.eigh(c.entries)
    top = np.maximum(w[..., -1], 0.0)
    trace = np.abs(np.trace(c.entries, axis1=-2, axis2=-1))
    floor = np.maximum(np.sqrt(tol) * top, PSD_EPS * trace)
    if c.psd and np.any(w[..., 0] < -floor):
        worst = float(np.min(w[..., 0] + floor))
        raise NotPSDError(f'eigenvalue below tolerance by {-worst:.3e}')

    keep = w > tol * top[..., None]
    inv = np.divide(1.0, w, out=np.zeros_like(w), where=keep)
    vt = np.swapaxes(v, -1, -2)
    pinv = symmetrize((v * inv[..., None, :]) @ vt)
    projector = symmetrize((v * keep[..., None, :]) @ vt)
    rank = keep.sum(axis=-1)
    if np.ndim(rank) == 0:
        rank = int(rank)
    return PseudoinverseResult(
        pinv=SymMatrix(pinv),
        rank=rank,
        range_projector=SymMatrix(projector),
        tol_used=tol,
    )


def _pinv_scalar(c, tol):
    w = c.entries[..., 0, 0]
    # rounding noise is measured against the largest variance in the stack
    top = max(float(np.max(w)), 0.0)
    floor = np.maximum(np.sqrt(tol) * top, PSD_EPS * np.abs(w))
    if c.psd and np.any(w < -floor):
        raise NotPSDError(f'negative variance {float(w.min()):.3e}')
    keep = w > 0
    inv = np.divide(1.0, w, out=np.zeros_like(w), where=keep)
    rank = keep.astype(int)
    return PseudoinverseResult(
        pinv=SymMatrix(inv[..., None, None]),
        rank=int(rank) if np.ndim(rank) == 0 else rank,
        range_projector=SymMatrix(keep.astype(float)[..., None, None]),
        tol_used=tol,
    )


def decompose_drift(a, c, tol=DEFAULT_TOL):
    """Split the drift a into c·lam (range part) and nu (kernel part)"""
    c = _as_sym(c)
    a = np.asarray(a, dtype=float)
    if a.shape != c.entries.shape[:-1]:
        raise ShapeMismatch(f'drift shape {a.shape} does not match matrix shape {c.entries.shape}')
    result = pinv_psd(c, tol)
    lam = np.einsum('...ij,...j->...i', result.pinv.entries, a)
    nu = a - np.einsum('...ij,...j->...i', c.entries, lam)
    return DriftDecomposition(lam=lam, nu=nu, pinv=result)


def penrose_residuals(c, result):
    """Relative Frobenius residuals of the four Penrose identities"""
    c = _as_sym(c).entries
    p = result.pinv.entries

    def rel(x, ref):
        scale = max(np.linalg.norm(ref), np.finfo(float).tiny)
        return float(np.linalg.norm(x) / scale)

    cp = c @ p
    pc = p @ c
    return (
        rel(cp @ c - c, c),
        rel(pc @ p - p, p) if np.any(p) else 0.0,
        rel(cp - cp.T, cp) if np.any(cp) else 0.0,
        rel(pc - pc.T, pc) if np.any(pc) else 0.0,
    )


# Random streams

@dataclass(frozen=True)
class RngStream:
    """Counter-based stream: draws depend only on (root_seed, stream_id, position)"""
    root_seed: int
    stream_id: int
    position: int = 0

    def __post_init__(self):
        if not 0 <= int(self.root_seed) < SEED_LIMIT:
            raise ContractViolation('root_seed must fit in an unsigned 64-bit integer')
        if int(self.stream_id) < 0:
            raise ContractViolation('stream_id must be non-negative')

    def generator(self, *sub_key):
        """A numpy Generator positioned at this stream's counter.

        sub_key selects an independent child stream (used for grid refinement).
        """
        seq = np.random.SeedSequence(int(self.root_seed), spawn_key=(int(self.stream_id), *map(int, sub_key)))
        bits = np.random.Philox(seq)
        if self.position:
            bits.advance(int(self.position))
        return np.random.Generator(bits)

    def advanced(self, steps):
        return RngStream(self.root_seed, self.stream_id, self.position + int(steps))


def derive_stream(root_seed, stream_id):
    return RngStream(int(root_seed), int(stream_id))


def wilson_interval(successes, trials, z=WILSON_Z) -> Tuple[float, float]:
    """Wilson score interval for a binomial proportion"""
    if trials <= 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1.0 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)
