"""Independent numerical references used by the tests.

None of these call into the package; they integrate or enumerate directly.
"""
import itertools

import numpy as np
from scipy import integrate, optimize


def _moments_1d(center, var_lik, prec_prior):
    """Mass, mean and second central moment of exp(-(t-c)^2/v - g t^2) by adaptive quadrature."""
    expo = lambda t: (t - center) ** 2 / var_lik + prec_prior * t**2
    mode = optimize.minimize_scalar(expo, bracket=(min(0.0, center) - 1, max(0.0, center) + 1),
                                    tol=1e-14).x
    floor = expo(mode)
    f = lambda t: np.exp(-(expo(t) - floor))
    width = 40 * np.sqrt(min(var_lik, 1 / prec_prior if prec_prior > 0 else var_lik))
    lo, hi = mode - width, mode + width
    kw = dict(points=[mode], limit=400, epsabs=1e-12, epsrel=1e-12)
    z = integrate.quad(f, lo, hi, **kw)[0]
    m = integrate.quad(lambda t: t * f(t), lo, hi, **kw)[0] / z
    v = integrate.quad(lambda t: (t - m) ** 2 * f(t), lo, hi, **kw)[0] / z
    return m, v


def gauss_product_moments_2d(q, tau, gamma):
    """Mean and variance of the normalized CN(x; q, tau) CN(x; 0, 1/gamma) over the complex plane.

    Integrated as a tensor product over the real and imaginary axes; each
    complex Gaussian splits into two real ones of variance tau/2 and 1/(2 gamma).
    """
    q = complex(q)
    # CN(x; q, tau) ~ exp(-|x-q|^2 / tau); CN(x; 0, 1/gamma) ~ exp(-gamma |x|^2)
    mr, vr = _moments_1d(q.real, tau, gamma)
    mi, vi = _moments_1d(q.imag, tau, gamma)
    return complex(mr, mi), vr + vi


def gamma_component_mean(shape, rate, energy):
    """Mean of the normalized density proportional to g^shape exp(-g (rate + energy))."""
    c = rate + energy
    # integrate in u = g * c so the peak sits near u = shape for every scale
    z = integrate.quad(lambda u: u**shape * np.exp(-u), 0, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]
    m = integrate.quad(lambda u: u ** (shape + 1) * np.exp(-u), 0, np.inf, epsabs=0, epsrel=1e-12,
                       limit=200)[0]
    return m / z / c


def gamma_belief_mean(pi_in, a, b, a_bar, b_bar, energy):
    """Mean of pi_in * (active belief) + (1 - pi_in) * (inactive belief), components normalized."""
    return pi_in * gamma_component_mean(a, b, energy) + \
        (1 - pi_in) * gamma_component_mean(a_bar, b_bar, energy)


def ising_energy(S, alpha, eta):
    S = np.asarray(S, dtype=float)
    pair = np.sum(S[:, 1:] * S[:, :-1]) + np.sum(S[1:, :] * S[:-1, :])
    return alpha * pair - eta * np.sum(S)


def ising_marginals_brute(pi_out, alpha, eta):
    """P(s_n = +1) on a small lattice by enumerating every support pattern."""
    pi_out = np.asarray(pi_out, dtype=float)
    shape = pi_out.shape
    Z = 0.0
    acc = np.zeros(shape)
    for bits in itertools.product((-1, 1), repeat=pi_out.size):
        S = np.array(bits).reshape(shape)
        w = np.exp(ising_energy(S, alpha, eta)) * np.prod(np.where(S == 1, pi_out, 1 - pi_out))
        Z += w
        acc += w * (S == 1)
    return acc / Z


def pair_message_brute(pi_sender, lam_in, alpha, eta):
    """Message a cell sends to one neighbour, by summing over the sender's two states.

    The sender carries its evidence, its own bias e^{-eta s} and the three
    other incoming messages; the edge contributes e^{alpha s s'}.
    """
    out = {}
    for recv in (-1, 1):
        tot = 0.0
        for s in (-1, 1):
            w = pi_sender if s == 1 else 1 - pi_sender
            for l in lam_in:
                w *= l if s == 1 else 1 - l
            tot += w * np.exp(-eta * s) * np.exp(alpha * s * recv)
        out[recv] = tot
    return out[1] / (out[1] + out[-1])
