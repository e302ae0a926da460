"""Reference recoverers: greedy pursuit and the decoupled (two-layer) UAMP-SBL."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .mrf import MrfParams, MrfPrior
from .transform import MeasurementOperator, unvec, vec
from . import uamp

log = logging.getLogger(__name__)


def atom_budget(n_paths: int, n_coeffs: int) -> int:
    """Default pursuit budget: ``n_paths`` blocks of 2% of the grid each."""
    return max(1, n_paths) * max(1, round(0.02 * n_coeffs))


@dataclass(frozen=True)
class GreedyConfig:
    max_atoms: int = 80
    residual_tol: float = 1e-6

    def __post_init__(self):
        if self.max_atoms < 1:
            raise ValueError("max_atoms must be >= 1")
        if not 0 < self.residual_tol < 1:
            raise ValueError("residual_tol must lie in (0, 1)")


@dataclass
class GreedyResult:
    x_hat: np.ndarray
    support: list
    residual_norms: list = field(default_factory=list)
    regularized: bool = False


def _atom(op: MeasurementOperator, i: int, q: int) -> np.ndarray:
    # column (i, q) of B^T kron A is vec(A[:, i] B[q, :])
    return vec(np.outer(op.a_factor[:, i], op.b_factor[q, :]))


def somp_estimate(y, op: MeasurementOperator, config: GreedyConfig = GreedyConfig()) -> GreedyResult:
    """Orthogonal matching pursuit on the vectorized Kronecker model.

    Each step adds the atom with the largest normalized correlation to the
    residual, then refits all selected coefficients by least squares.
    """
    y = vec(np.asarray(y)) if np.ndim(y) == 2 else np.asarray(y)
    I, Q = op.signal_shape
    col_norm = np.outer(np.linalg.norm(op.a_factor, axis=0), np.linalg.norm(op.b_factor, axis=1))
    col_norm = np.where(col_norm > 0, col_norm, np.inf)
    y_norm = np.linalg.norm(y)
    x = np.zeros((I, Q), dtype=complex)
    result = GreedyResult(x, [], [float(y_norm)])
    if y_norm == 0:
        return result
    residual = y.copy()
    cols = []
    coef = np.zeros(0, dtype=complex)
    for _ in range(min(config.max_atoms, op.M, op.N)):
        corr = np.abs(op.adjoint(residual)) / col_norm
        for i, q in result.support:
            corr[i, q] = -1.0
        i, q = np.unravel_index(np.argmax(corr), corr.shape)
        result.support.append((int(i), int(q)))
        cols.append(_atom(op, i, q))
        Phi_s = np.stack(cols, axis=1)
        G = Phi_s.conj().T @ Phi_s
        rhs = Phi_s.conj().T @ y
        try:
            if np.linalg.cond(G) > 1e12:
                raise np.linalg.LinAlgError
            coef = np.linalg.solve(G, rhs)
        except np.linalg.LinAlgError:
            log.warning("rank-deficient support of size %d; loading the diagonal", len(cols))
            result.regularized = True
            coef = np.linalg.solve(G + 1e-10 * np.eye(len(cols)), rhs)
        residual = y - Phi_s @ coef
        rn = float(np.linalg.norm(residual))
        result.residual_norms.append(rn)
        if rn / y_norm < config.residual_tol:
            break
    for (i, q), c in zip(result.support, coef):
        x[i, q] = c
    return result


def twolayer_params(params: MrfParams = MrfParams()) -> MrfParams:
    """The same Gamma layers with the support field switched off."""
    return replace(params, alpha=0.0, eta=0.0)


def uamp_sbl_twolayer(r, op: MeasurementOperator, config: uamp.UampConfig = uamp.UampConfig(),
                      params: MrfParams = MrfParams(), **kwargs) -> uamp.UampResult:
    """UAMP-SBL with independent coefficients (``alpha = eta = 0``)."""
    return uamp.run(r, op, MrfPrior(twolayer_params(params)), config, **kwargs)
