"""Unitary approximate message passing with sparse Bayesian learning.

The estimator works in the unitary-transformed domain ``r = U^H y`` with
the operator ``Lambda V^H`` (see :class:`~xlmimo.transform.MeasurementOperator`).
All per-measurement quantities are ``M_R x K`` grids and all per-coefficient
quantities are ``I x Q`` grids; nothing of size ``M x N`` is ever formed.

The prior is pluggable: any object with ``update(x_hat, v) -> gamma_hat`` and
``reset(shape)`` works.  :class:`~xlmimo.mrf.MrfPrior` is the default.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .mrf import MrfParams, MrfPrior
from .transform import MeasurementOperator, unvec

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    def __init__(self, msg, iteration):
        super().__init__(f"{msg} (iteration {iteration})")
        self.iteration = iteration


@dataclass(frozen=True)
class UampConfig:
    max_iters: int = 20
    tol: float = 1e-6
    damping: float = 1.0
    var_floor: float = 1e-12
    var_cap: float = 1e12
    # "posterior": z_hat is the Gaussian posterior mean of z given p and r.
    # "listing": z_hat = beta tau_p p / (1 + beta tau_p), ignoring r.
    zhat_rule: str = "posterior"
    # rescale r so the implied signal has unit power per coefficient
    normalize: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.zhat_rule not in ("posterior", "listing"):
            raise ValueError(f"unknown zhat_rule {self.zhat_rule!r}")


@dataclass
class UampState:
    x_hat: np.ndarray
    tau_x: float
    gamma_hat: np.ndarray
    beta_hat: float
    residual: np.ndarray
    p: np.ndarray | None = None
    tau_p: np.ndarray | None = None
    z_hat: np.ndarray | None = None
    v_z: np.ndarray | None = None
    tau_s: np.ndarray | None = None
    q: np.ndarray | None = None
    tau_q: float | None = None
    v_x: np.ndarray | None = None  # per-coefficient posterior variance
    iteration: int = 0


def init_state(signal_shape, obs_shape) -> UampState:
    """Starting point: tau_x = 1, x_hat = 0, gamma_hat = 1, beta_hat = 1, residual = 0."""
    if min(*signal_shape, *obs_shape) < 1:
        raise ValueError("dimensions must be positive")
    return UampState(
        x_hat=np.zeros(signal_shape, dtype=complex),
        tau_x=1.0,
        gamma_hat=np.ones(signal_shape),
        beta_hat=1.0,
        residual=np.zeros(obs_shape, dtype=complex),
    )


def _guard(arr, name, config: UampConfig, it):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"non-finite {name}", it)
    lo, hi = config.var_floor, config.var_cap
    if np.any(arr < lo) or np.any(arr > hi):
        log.debug("iteration %d: clamping %s into [%g, %g]", it, name, lo, hi)
        arr = np.clip(arr, lo, hi)
    return arr


def noise_precision(r, z_hat, v_z, floor: float = 1e-12) -> float:
    """``M / (||r - z_hat||^2 + sum(v_z))``: mean of the Gamma belief on the noise precision."""
    denom = np.sum(np.abs(r - z_hat) ** 2) + np.sum(v_z)
    if not np.isfinite(denom):
        raise FloatingPointError("non-finite noise-precision statistic")
    return np.size(r) / max(denom, floor)


def measurement_halfstep(state: UampState, r: np.ndarray, op: MeasurementOperator,
                         config: UampConfig = UampConfig()) -> UampState:
    """Measurement module, noise-precision update and residual (listing lines 2-8)."""
    it = state.iteration
    lam = op.lambda_grid
    tau_p = state.tau_x * lam
    p = op.apply_t(state.x_hat) - tau_p * state.residual
    beta = state.beta_hat
    v_z = tau_p / (1 + beta * tau_p)
    if config.zhat_rule == "posterior":
        z_hat = (beta * tau_p * r + p) / (1 + beta * tau_p)
    else:
        z_hat = beta * tau_p * p / (1 + beta * tau_p)
    try:
        beta = noise_precision(r, z_hat, v_z, config.var_floor)
    except FloatingPointError:
        raise DivergenceError("non-finite noise-precision statistic", it) from None
    beta = float(np.clip(beta, 1 / config.var_cap, config.var_cap))
    tau_s = 1 / (tau_p + 1 / beta)
    tau_s = _guard(tau_s, "tau_s", config, it)
    residual = tau_s * (r - p)
    return replace(state, tau_p=tau_p, p=p, v_z=v_z, z_hat=z_hat, beta_hat=beta,
                   tau_s=tau_s, residual=residual)


def estimation_halfstep(state: UampState, gamma_hat: np.ndarray, op: MeasurementOperator,
                        config: UampConfig = UampConfig()) -> UampState:
    """Pseudo-observation and Gaussian denoiser (listing lines 9-12)."""
    it = state.iteration
    lam = op.lambda_grid
    N = op.N
    tau_q = N / np.sum(lam * state.tau_s)
    if not np.isfinite(tau_q) or tau_q <= 0:
        raise DivergenceError("non-positive tau_q", it)
    tau_q = float(np.clip(tau_q, config.var_floor, config.var_cap))
    q = state.x_hat + tau_q * op.adjoint_t(state.residual)
    shrink = 1 + tau_q * gamma_hat
    v_x = tau_q / shrink
    x_new = q / shrink
    if config.damping < 1:
        x_new = config.damping * x_new + (1 - config.damping) * state.x_hat
    tau_x = float(np.mean(v_x))
    if not np.all(np.isfinite(x_new)) or not tau_x > 0:
        raise DivergenceError("non-finite posterior estimate", it)
    return replace(state, tau_q=tau_q, q=q, x_hat=x_new, tau_x=tau_x, v_x=v_x,
                   gamma_hat=gamma_hat)


def posterior_mean_var(q, tau_q, gamma_hat):
    """Mean and variance of ``CN(x; q, tau_q) * CN(x; 0, 1/gamma)`` (normalized)."""
    shrink = 1 + tau_q * np.asarray(gamma_hat)
    return q / shrink, tau_q / shrink


@dataclass
class UampResult:
    x_hat: np.ndarray
    H_hat: np.ndarray | None
    state: UampState
    trace: list = field(default_factory=list)
    converged: bool = False
    scale: float = 1.0

    @property
    def iterations(self) -> int:
        return self.state.iteration


def _signal_scale(r, op):
    """Amplitude that brings the implied per-coefficient signal power to one."""
    energy = np.sum(np.abs(r) ** 2)
    lam_total = np.sum(op.lambda_grid)
    if energy <= 0 or lam_total <= 0:
        return 1.0
    return float(np.sqrt(energy / lam_total))


def run(r, op: MeasurementOperator, prior=None, config: UampConfig = UampConfig(),
        H_true: np.ndarray | None = None, x_true: np.ndarray | None = None) -> UampResult:
    """Run the estimator on a preprocessed operator and ``r = U^H y``.

    The trace holds one dict per iteration with ``tau_q``, ``tau_x``,
    ``beta_hat``, ``rel_change``, a per-iteration wall time and, when a truth
    is supplied, ``nmse``.
    """
    R = np.asarray(r)
    if R.ndim == 1:
        R = unvec(R, op.obs_shape)
    if prior is None:
        prior = MrfPrior(MrfParams())
    scale = _signal_scale(R, op) if config.normalize else 1.0
    Rn = R / scale
    prior.reset(op.signal_shape)
    state = init_state(op.signal_shape, op.obs_shape)
    trace = []
    converged = False
    for t in range(config.max_iters):
        t0 = time.perf_counter()
        state.iteration = t
        state = measurement_halfstep(state, Rn, op, config)
        x_prev = state.x_hat
        state = estimation_halfstep(state, state.gamma_hat, op, config)
        gamma = prior.update(state.x_hat, state.v_x)
        state.gamma_hat = gamma
        state.iteration = t + 1
        nx = np.linalg.norm(state.x_hat)
        rel = np.linalg.norm(state.x_hat - x_prev) / nx if nx > 0 else 0.0
        rec = {
            "iteration": t + 1,
            "tau_q": state.tau_q * scale**2,
            "tau_x": state.tau_x * scale**2,
            "beta_hat": state.beta_hat / scale**2,
            "rel_change": float(rel),
            "wall_s": time.perf_counter() - t0,
        }
        if H_true is not None or x_true is not None:
            X = state.x_hat * scale
            if x_true is not None:
                rec["nmse"] = nmse_ratio(X, x_true)
            else:
                rec["nmse"] = nmse_ratio(op.to_channel(X), H_true)
        trace.append(rec)
        if rel < config.tol:
            converged = True
            break
    X = state.x_hat * scale
    H_hat = op.to_channel(X) if op.dictionary is not None else None
    return UampResult(X, H_hat, state, trace, converged, scale)


def nmse_ratio(est, truth) -> float:
    truth = np.asarray(truth)
    den = np.sum(np.abs(truth) ** 2)
    if den == 0:
        raise ValueError("NMSE undefined for an all-zero reference")
    return float(np.sum(np.abs(np.asarray(est) - truth) ** 2) / den)
