"""Scalar state evolution driven by a Monte-Carlo MMSE table.

The estimator's pseudo-observation behaves like ``q = x + w`` with
``w ~ CN(0, tau)``.  :func:`build_mmse_table` measures the prior module's
denoising error on that channel over a grid of ``tau``; :func:`se_trajectory`
then iterates

    tau_t = N / sum(lam / (mmse_{t-1} * lam + 1/beta))

with ``mmse_0`` the initial ``tau_x`` and ``mmse_t = table(tau_t)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .mrf import MrfParams, MrfPrior
from .uamp import posterior_mean_var


@dataclass(frozen=True)
class MmseTable:
    noise_grid: np.ndarray
    mmse_values: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.noise_grid, dtype=float)
        m = np.asarray(self.mmse_values, dtype=float)
        if g.ndim != 1 or g.shape != m.shape or g.size < 2:
            raise ValueError("noise grid and MMSE values must be matching 1-D arrays")
        if np.any(g <= 0) or np.any(np.diff(g) <= 0):
            raise ValueError("noise grid must be positive and strictly increasing")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("MMSE values must be finite and non-negative")
        object.__setattr__(self, "noise_grid", g)
        object.__setattr__(self, "mmse_values", m)

    def __call__(self, tau):
        """Interpolated MMSE, linear in log-log coordinates; clamps outside the grid."""
        tau = np.asarray(tau, dtype=float)
        lo, hi = self.noise_grid[0], self.noise_grid[-1]
        if np.any(tau < lo) or np.any(tau > hi):
            warnings.warn("noise variance outside the MMSE table; clamping", RuntimeWarning,
                          stacklevel=2)
        t = np.clip(tau, lo, hi)
        m = np.maximum(self.mmse_values, np.finfo(float).tiny)
        return np.exp(np.interp(np.log(t), np.log(self.noise_grid), np.log(m)))

    def rescaled(self, power: float) -> "MmseTable":
        """Table for a signal whose per-coefficient power is ``power`` times larger."""
        return MmseTable(self.noise_grid * power, self.mmse_values * power)

    def to_text(self) -> str:
        rows = ["# noise_var mmse"]
        rows += [f"{float(g)!r} {float(m)!r}" for g, m in zip(self.noise_grid, self.mmse_values)]
        return "\n".join(rows) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MmseTable":
        data = np.loadtxt(text.splitlines(), comments="#", ndmin=2)
        return cls(data[:, 0], data[:, 1])


def default_noise_grid(signal_power: float = 1.0, n: int = 40) -> np.ndarray:
    return signal_power * np.logspace(-6, 2, n)


def denoise(q: np.ndarray, tau: float, params: MrfParams, passes: int = 1) -> np.ndarray:
    """The estimator's denoiser on ``q = x + w``: prior update then Gaussian posterior.

    Starts from ``gamma = 1``; each pass refreshes ``gamma`` from the current
    posterior and recomputes the posterior mean.
    """
    prior = MrfPrior(params)
    prior.reset(q.shape)
    x_hat, v = posterior_mean_var(q, tau, np.ones(q.shape))
    for _ in range(passes):
        gamma = prior.update(x_hat, v)
        x_hat, v = posterior_mean_var(q, tau, gamma)
    return x_hat


def build_mmse_table(params: MrfParams, x_samples, noise_grid, n_samples: int,
                     rng: np.random.Generator, passes: int = 1) -> MmseTable:
    """Empirical denoising MSE per noise level.

    ``x_samples`` is a sequence of ``I x Q`` grids (or a callable ``rng -> grid``)
    drawn from the signal distribution.  Grids are reused cyclically until at
    least ``n_samples`` coefficients have been denoised at each noise level.
    """
    if n_samples < 10_000:
        raise ValueError("need at least 1e4 samples for a usable MMSE estimate")
    noise_grid = np.asarray(noise_grid, dtype=float)
    if callable(x_samples):
        draw = x_samples
        pool = None
    else:
        pool = [np.asarray(x) for x in x_samples]
        if not pool:
            raise ValueError("no signal samples")
    mmse = np.empty(noise_grid.size)
    for j, tau in enumerate(noise_grid):
        err, count, idx = 0.0, 0, 0
        while count < n_samples:
            x = draw(rng) if pool is None else pool[idx % len(pool)]
            idx += 1
            w = np.sqrt(tau / 2) * (rng.standard_normal(x.shape) + 1j * rng.standard_normal(x.shape))
            x_hat = denoise(x + w, tau, params, passes)
            err += np.sum(np.abs(x_hat - x) ** 2)
            count += x.size
        mmse[j] = err / count
    return MmseTable(noise_grid, mmse)


def se_trajectory(table: MmseTable, lambda_vec, beta_inv: float, n_iters: int,
                  tau_x0: float = 1.0, n_signal: int | None = None) -> np.ndarray:
    """Predicted effective noise variance ``tau_t`` for ``t = 1..n_iters``."""
    lam = np.ravel(np.asarray(lambda_vec, dtype=float))
    if beta_inv < 0:
        raise ValueError("beta_inv must be non-negative")
    N = lam.size if n_signal is None else n_signal
    out = np.empty(n_iters)
    mmse = tau_x0
    for t in range(n_iters):
        denom = np.sum(lam / (mmse * lam + beta_inv))
        out[t] = N / denom
        mmse = float(table(out[t]))
    return out


def se_floor(lambda_vec, beta_inv: float, n_signal: int | None = None) -> float:
    """Lower bound on every ``tau_t`` (zero MMSE)."""
    lam = np.ravel(np.asarray(lambda_vec, dtype=float))
    N = lam.size if n_signal is None else n_signal
    return N * beta_inv / np.sum(lam)
