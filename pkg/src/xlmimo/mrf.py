"""Three-layer sparse prior with a 4-connected Ising support field.

Each coefficient ``x_n`` is ``CN(0, 1/gamma_n)``; ``gamma_n`` is Gamma(a, b)
when its support state ``s_n = +1`` (active) and Gamma(a_bar, b_bar) when
``s_n = -1``.  The support states form an Ising field on the ``I x Q``
angular-delay lattice with coupling ``alpha`` and bias ``eta``.

Lattice directions: *left/right* are the delay neighbours ``(i, q-1)`` and
``(i, q+1)``; *top/bottom* are the angular neighbours ``(i-1, q)`` and
``(i+1, q)``.  ``lam_left[i, q]`` is the message arriving at ``(i, q)`` from
its left neighbour, expressed as the probability it assigns to ``s = +1``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class MrfParams:
    # defaults tuned for unit-power coefficients (the estimator normalizes r)
    alpha: float = 0.6
    eta: float = -0.2
    a: float = 1.0
    b: float = 0.1
    a_bar: float = 1.0
    b_bar: float = 1e-7
    sweeps: int = 1

    def __post_init__(self):
        if min(self.a, self.b, self.a_bar, self.b_bar) <= 0:
            raise ValueError("Gamma shape and rate parameters must be positive")
        if (self.a_bar / self.b_bar) < 1e3 * (self.a / self.b):
            raise ValueError("inactive-state mean precision must exceed the active one by >= 1e3")
        if self.sweeps < 1:
            raise ValueError("sweeps must be >= 1")

    @property
    def decoupled(self) -> bool:
        return self.alpha == 0 and self.eta == 0


def _clip(p):
    return np.clip(p, PROB_FLOOR, 1 - PROB_FLOOR)


def compute_pi_out(x_hat, v, params: MrfParams):
    """Probability that the Gamma evidence favours the active state."""
    E = np.abs(x_hat) ** 2 + v
    num = params.a * (params.b_bar + E)
    return num / (num + params.a_bar * (params.b + E))


def _shift(grid, di, dq):
    """``out[i, q] = grid[i - di, q - dq]`` with 1/2 where that cell is off the lattice."""
    out = np.full_like(grid, 0.5)
    I, Q = grid.shape
    src_i = slice(max(0, -di), I - max(0, di))
    dst_i = slice(max(0, di), I - max(0, -di))
    src_q = slice(max(0, -dq), Q - max(0, dq))
    dst_q = slice(max(0, dq), Q - max(0, -dq))
    out[dst_i, dst_q] = grid[src_i, src_q]
    return out


@dataclass
class MrfMessageGrid:
    pi_out: np.ndarray
    lam_left: np.ndarray
    lam_right: np.ndarray
    lam_top: np.ndarray
    lam_bottom: np.ndarray
    pi_in: np.ndarray
    gamma_hat: np.ndarray

    @classmethod
    def uniform(cls, shape):
        half = lambda: np.full(shape, 0.5)
        return cls(half(), half(), half(), half(), half(), half(), np.ones(shape))

    @property
    def shape(self):
        return self.pi_out.shape


def _outgoing(pi, lam_a, lam_b, lam_c, params: MrfParams):
    """Sum-product message a cell sends to one neighbour.

    ``lam_a..lam_c`` are the messages the sender received from its other three
    neighbours.  Normalized over the receiver's state in {-1, +1}.
    """
    al, et = params.alpha, params.eta
    on = pi * lam_a * lam_b * lam_c
    off = (1 - pi) * (1 - lam_a) * (1 - lam_b) * (1 - lam_c)
    # sender unary e^{-eta s}, pairwise e^{alpha s s'}
    m_pos = np.exp(al - et) * on + np.exp(-al + et) * off
    m_neg = np.exp(-al - et) * on + np.exp(al + et) * off
    return m_pos / (m_pos + m_neg)


def update_directional_messages(grid: MrfMessageGrid, params: MrfParams) -> MrfMessageGrid:
    """One synchronous sweep of the four directional message grids."""
    pi = grid.pi_out
    L, R, T, B = grid.lam_left, grid.lam_right, grid.lam_top, grid.lam_bottom
    # message each cell sends to its right neighbour ignores what came from the right
    to_right = _outgoing(pi, L, T, B, params)
    to_left = _outgoing(pi, R, T, B, params)
    to_bottom = _outgoing(pi, L, R, T, params)
    to_top = _outgoing(pi, L, R, B, params)
    grid.lam_left = _clip(_shift(to_right, 0, 1))
    grid.lam_right = _clip(_shift(to_left, 0, -1))
    grid.lam_top = _clip(_shift(to_bottom, 1, 0))
    grid.lam_bottom = _clip(_shift(to_top, -1, 0))
    return grid


def compute_pi_in(grid: MrfMessageGrid, params: MrfParams) -> np.ndarray:
    lams = (grid.lam_left, grid.lam_right, grid.lam_top, grid.lam_bottom)
    on = np.exp(-params.eta) * np.prod(lams, axis=0)
    off = np.exp(params.eta) * np.prod([1 - l for l in lams], axis=0)
    return _clip(on / (on + off))


def update_gamma(x_hat, v, pi_in, params: MrfParams) -> np.ndarray:
    """Posterior mean of the precision under the two-component Gamma belief."""
    E = np.abs(x_hat) ** 2 + v
    return pi_in * (params.a + 1) / (params.b + E) + \
        (1 - pi_in) * (params.a_bar + 1) / (params.b_bar + E)


def support_belief(grid: MrfMessageGrid) -> np.ndarray:
    """Approximate marginal ``P(s_n = +1)`` combining local evidence and neighbours."""
    on = grid.pi_out * grid.pi_in
    return on / (on + (1 - grid.pi_out) * (1 - grid.pi_in))


@dataclass
class MrfPrior:
    """Stateful prior module; holds the message grid between outer iterations."""
    params: MrfParams = field(default_factory=MrfParams)
    grid: MrfMessageGrid | None = None

    def reset(self, shape):
        self.grid = MrfMessageGrid.uniform(shape)

    def update(self, x_hat: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Run the prior module once and return the new precisions ``gamma_hat``."""
        if self.grid is None or self.grid.shape != x_hat.shape:
            self.reset(x_hat.shape)
        g, p = self.grid, self.params
        g.pi_out = _clip(compute_pi_out(x_hat, v, p))
        if p.decoupled:
            # independent coefficients: neighbours carry no information
            g.pi_in = np.full(x_hat.shape, 0.5)
        else:
            for _ in range(p.sweeps):
                update_directional_messages(g, p)
            g.pi_in = compute_pi_in(g, p)
        g.gamma_hat = update_gamma(x_hat, v, g.pi_in, p)
        if not np.all(np.isfinite(g.gamma_hat)) or np.any(g.gamma_hat <= 0):
            raise FloatingPointError("prior precisions left the positive finite range")
        return g.gamma_hat


def prior_update(x_hat, v, params: MrfParams, grid: MrfMessageGrid | None = None):
    """Functional form of :meth:`MrfPrior.update`; returns ``(gamma_hat, grid)``."""
    prior = MrfPrior(params, grid)
    gamma = prior.update(np.asarray(x_hat), np.asarray(v))
    return gamma, prior.grid


def loopy_marginals(pi_out: np.ndarray, params: MrfParams, max_sweeps: int = 500,
                    tol: float = 1e-12) -> np.ndarray:
    """Iterate the message sweep to a fixed point for fixed evidence; return beliefs."""
    grid = MrfMessageGrid.uniform(pi_out.shape)
    grid.pi_out = _clip(np.asarray(pi_out, dtype=float))
    for _ in range(max_sweeps):
        old = np.stack([grid.lam_left, grid.lam_right, grid.lam_top, grid.lam_bottom])
        update_directional_messages(grid, params)
        new = np.stack([grid.lam_left, grid.lam_right, grid.lam_top, grid.lam_bottom])
        if np.max(np.abs(new - old)) < tol:
            break
    grid.pi_in = compute_pi_in(grid, params)
    return support_belief(grid)


def ising_log_potential(support: np.ndarray, params: MrfParams) -> float:
    """``log prod u * v`` for a +/-1 support grid, each lattice edge counted once."""
    s = np.asarray(support, dtype=float)
    pair = np.sum(s[:, 1:] * s[:, :-1]) + np.sum(s[1:, :] * s[:-1, :])
    return params.alpha * pair - params.eta * np.sum(s)
