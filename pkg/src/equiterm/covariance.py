"""Covariance blocks of the discounted (power, fuel, emission) price vector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CovarianceError
from .process import PathEnsemble, raw_covariance

__all__ = ["CovarianceBlocks", "estimate_covariance"]

# ridge policy: lift eigenvalues to at least RIDGE_FLOOR, give up past RIDGE_CAP
RIDGE_FLOOR = 1e-10
RIDGE_CAP = 1e-6
# relative spectral gap below which the matrix counts as exactly dependent
SINGULAR_REL = 1e-12


def _sym_frozen(a, name, tol=1e-9) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise CovarianceError(f"{name} must be square")
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
    if float(np.max(np.abs(a - a.T))) > tol * scale:
        raise CovarianceError(f"{name} must be symmetric")
    a = np.ascontiguousarray(0.5 * (a + a.T))
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class CovarianceBlocks:
    """The three blocks of the stacked covariance: power (q1), power-to-
    fuel+emission cross (q2), and fuel+emission (q3).

    All entries refer to the discounted price vector in canonical order;
    the stacked matrix must be symmetric positive definite (no price series
    may be an exact linear combination of the others).
    """

    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray
    ridge: float = 0.0
    _stacked: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        q1 = _sym_frozen(self.q1, "q1")
        q3 = _sym_frozen(self.q3, "q3")
        q2 = np.ascontiguousarray(np.asarray(self.q2, dtype=float))
        n = q1.shape[0]
        m = q3.shape[0]
        if q2.shape != (n, m):
            raise CovarianceError(f"q2 must have shape ({n}, {m}), got {q2.shape}")
        if m % n != 0:
            raise CovarianceError("q3 width must be a multiple of the contract count")
        q2.flags.writeable = False
        object.__setattr__(self, "q1", q1)
        object.__setattr__(self, "q2", q2)
        object.__setattr__(self, "q3", q3)
        stacked = np.block([[q1, q2], [q2.T, q3]])
        stacked.flags.writeable = False
        object.__setattr__(self, "_stacked", stacked)

    @property
    def n_contracts(self) -> int:
        return self.q1.shape[0]

    @property
    def n_fuels(self) -> int:
        return self.q3.shape[0] // self.n_contracts - 1

    def stacked(self) -> np.ndarray:
        """Full covariance of the (power, fuel, emission) vector."""
        return self._stacked

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self._stacked)[0])

    def is_positive_definite(self) -> bool:
        return self.min_eigenvalue() > 0.0


def estimate_covariance(ensemble: PathEnsemble) -> CovarianceBlocks:
    """Weighted sample covariance of the discounted stacked price vector.

    The raw estimate is symmetrized and, when its smallest eigenvalue sits
    below the floor, lifted by a small ridge.  Exact linear dependence in
    the paths (the estimate is numerically singular relative to its scale)
    or a required ridge beyond the cap are rejected: such data violates the
    no-linear-dependence assumption and no regularization can fix it.
    """
    if ensemble.n_paths < 2:
        raise CovarianceError("need at least two paths to estimate a covariance")
    full = raw_covariance(ensemble)
    eigs = np.linalg.eigvalsh(full)
    lam_min, lam_max = float(eigs[0]), float(eigs[-1])
    if lam_max <= 0.0 or lam_min <= SINGULAR_REL * lam_max:
        raise CovarianceError(
            "path ensemble is linearly dependent (smallest eigenvalue "
            f"{lam_min:.3e} vs largest {lam_max:.3e}); the no-linear-dependence "
            "assumption fails"
        )
    ridge = max(0.0, RIDGE_FLOOR - lam_min)
    if ridge > RIDGE_CAP:
        raise CovarianceError(
            f"covariance needs ridge {ridge:.3e} beyond the cap {RIDGE_CAP:.0e}"
        )
    if ridge > 0.0:
        full = full + ridge * np.eye(full.shape[0])
    n = ensemble.grid.n_contracts
    return CovarianceBlocks(full[:n, :n], full[:n, n:], full[n:, n:], ridge=ridge)
