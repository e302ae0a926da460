"""Angular-delay dictionaries, hybrid combiner and the Kronecker measurement operator.

The observation model is ``Y = A X B + N`` with ``A = W F_A`` and
``B = F_D^H``.  Its vectorized form ``y = (B^T kron A) x + n`` is never
materialized in the estimator: every product is applied in matrix form, and
the SVD of the Kronecker operator is assembled from the SVDs of its two
factors.

Vectorization is column-major throughout: entry ``(i, q)`` of an ``I x Q``
grid sits at position ``i + I*q`` of the vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Above this many entries of Phi the dense helpers refuse to build it.
DENSE_LIMIT = 2**22


def vec(X: np.ndarray) -> np.ndarray:
    return np.asarray(X).reshape(-1, order="F")


def unvec(x: np.ndarray, shape) -> np.ndarray:
    x = np.asarray(x)
    if x.size != shape[0] * shape[1]:
        raise ValueError(f"cannot reshape {x.size} entries into {shape}")
    return x.reshape(shape, order="F")


@dataclass(frozen=True)
class Dictionary:
    angular: np.ndarray  # N_R x I
    delay: np.ndarray  # K x Q

    @property
    def is_square(self) -> bool:
        return self.angular.shape[0] == self.angular.shape[1] and \
            self.delay.shape[0] == self.delay.shape[1]


def dft_dictionary(n_rows: int, n_cols: int) -> np.ndarray:
    """Oversampled DFT matrix with entries exp(-j 2 pi r c / n_cols) / sqrt(n_rows)."""
    if n_cols < n_rows:
        raise ValueError(f"grid size {n_cols} undersamples {n_rows} rows")
    r = np.arange(n_rows)[:, None]
    c = np.arange(n_cols)[None, :]
    return np.exp(-2j * np.pi * ((r * c) % n_cols) / n_cols) / np.sqrt(n_rows)


def build_dictionary(n_antennas: int, n_angles: int, n_subcarriers: int,
                     n_delays: int) -> Dictionary:
    return Dictionary(dft_dictionary(n_antennas, n_angles),
                      dft_dictionary(n_subcarriers, n_delays))


def to_angular_delay(H: np.ndarray, dictionary: Dictionary) -> np.ndarray:
    """Exact analysis ``X = F_A^H H F_D``; only defined for square dictionaries."""
    if not dictionary.is_square:
        raise NotImplementedError("angular-delay analysis needs I = N_R and Q = K")
    H = np.asarray(H)
    if H.shape != (dictionary.angular.shape[0], dictionary.delay.shape[0]):
        raise ValueError("channel shape does not match the dictionary")
    return dictionary.angular.conj().T @ H @ dictionary.delay


def from_angular_delay(X: np.ndarray, dictionary: Dictionary) -> np.ndarray:
    X = np.asarray(X)
    if X.shape != (dictionary.angular.shape[1], dictionary.delay.shape[1]):
        raise ValueError("angular-delay grid shape does not match the dictionary")
    return dictionary.angular @ X @ dictionary.delay.conj().T


def build_combiner(m_r: int, n_antennas: int, rng: np.random.Generator,
                   n_rf: int = 1) -> np.ndarray:
    """Phase-shifter combiner: ``m_r`` rows of unit-modulus entries scaled by 1/sqrt(N_R).

    Rows ``p*n_rf .. (p+1)*n_rf - 1`` form the combiner of time slot ``p``.
    """
    if m_r < 1 or n_rf < 1 or m_r % n_rf:
        raise ValueError(f"M_R={m_r} is not a positive multiple of N_RF={n_rf}")
    phases = rng.uniform(0.0, 2 * np.pi, size=(m_r, n_antennas))
    return np.exp(1j * phases) / np.sqrt(n_antennas)


@dataclass(frozen=True)
class KroneckerSVD:
    """SVD of ``B^T kron A`` kept as the SVDs of ``A`` and ``B^T``.

    ``U = U_bt kron U_a`` and ``V = V_bt kron V_a``.  The singular values sit
    on a permuted diagonal: grid entry ``(m, k)`` of the transformed domain
    carries ``s_a[m] * s_bt[k]`` and couples to grid entry ``(m, k)`` of the
    ``I x Q`` right-singular coordinates.
    """
    u_a: np.ndarray  # M_R x M_R
    s_a: np.ndarray  # min(M_R, I)
    vh_a: np.ndarray  # min(M_R, I) x I
    u_bt: np.ndarray  # K x K
    s_bt: np.ndarray  # min(K, Q)
    vh_bt: np.ndarray  # min(K, Q) x Q

    @property
    def sigma_grid(self) -> np.ndarray:
        """Singular values arranged on the ``M_R x K`` observation grid (zeros padded)."""
        out = np.zeros((self.u_a.shape[0], self.u_bt.shape[0]))
        out[:self.s_a.size, :self.s_bt.size] = np.outer(self.s_a, self.s_bt)
        return out


class MeasurementOperator:
    """``x -> vec(A X B)`` with optional unitary preprocessing.

    Build with :meth:`from_parts` or directly from the two factors.  After
    :func:`svd_preprocess` the operator also exposes the transformed map
    ``Lambda V^H`` (:meth:`apply_t` / :meth:`adjoint_t`) used by the estimator.
    """

    def __init__(self, a_factor, b_factor, combiner=None, dictionary=None, svd=None):
        self.a_factor = np.asarray(a_factor)
        self.b_factor = np.asarray(b_factor)
        self.combiner = combiner
        self.dictionary = dictionary
        self.svd = svd
        self._lambda = None if svd is None else svd.sigma_grid**2

    @classmethod
    def from_parts(cls, combiner: np.ndarray, dictionary: Dictionary):
        return cls(combiner @ dictionary.angular, dictionary.delay.conj().T,
                   combiner=combiner, dictionary=dictionary)

    @property
    def obs_shape(self):
        return (self.a_factor.shape[0], self.b_factor.shape[1])

    @property
    def signal_shape(self):
        return (self.a_factor.shape[1], self.b_factor.shape[0])

    @property
    def M(self) -> int:
        return self.obs_shape[0] * self.obs_shape[1]

    @property
    def N(self) -> int:
        return self.signal_shape[0] * self.signal_shape[1]

    def _as_grid(self, v, shape):
        v = np.asarray(v)
        if v.ndim == 1:
            return unvec(v, shape)
        if v.shape != shape:
            raise ValueError(f"expected shape {shape}, got {v.shape}")
        return v

    def forward(self, X) -> np.ndarray:
        """``vec(A X B)``; accepts a grid or its vectorization."""
        X = self._as_grid(X, self.signal_shape)
        return vec(self.a_factor @ X @ self.b_factor)

    def adjoint(self, v) -> np.ndarray:
        """``A^H V B^H`` as an ``I x Q`` grid."""
        V = self._as_grid(v, self.obs_shape)
        return self.a_factor.conj().T @ V @ self.b_factor.conj().T

    def dense(self) -> np.ndarray:
        """Materialized ``B^T kron A``; only for small test instances."""
        if self.M * self.N > DENSE_LIMIT:
            raise MemoryError(f"refusing to materialize a {self.M} x {self.N} operator")
        return np.kron(self.b_factor.T, self.a_factor)

    def to_channel(self, X) -> np.ndarray:
        if self.dictionary is None:
            raise ValueError("operator has no dictionary attached")
        return from_angular_delay(self._as_grid(X, self.signal_shape), self.dictionary)

    # unitary-transformed domain

    def _need_svd(self):
        if self.svd is None:
            raise RuntimeError("call svd_preprocess first")
        return self.svd

    @property
    def lambda_grid(self) -> np.ndarray:
        """``Lambda Lambda^H 1`` on the ``M_R x K`` grid."""
        self._need_svd()
        return self._lambda

    @property
    def lambda_vec(self) -> np.ndarray:
        return vec(self.lambda_grid)

    def unitary_transform(self, y) -> np.ndarray:
        """``r = U^H y`` returned as an ``M_R x K`` grid."""
        svd = self._need_svd()
        Y = self._as_grid(y, self.obs_shape)
        return svd.u_a.conj().T @ Y @ svd.u_bt.conj()

    def inverse_unitary_transform(self, r) -> np.ndarray:
        svd = self._need_svd()
        R = self._as_grid(r, self.obs_shape)
        return svd.u_a @ R @ svd.u_bt.T

    def apply_t(self, X) -> np.ndarray:
        """``Lambda V^H x`` on grids."""
        svd = self._need_svd()
        X = self._as_grid(X, self.signal_shape)
        Z = svd.vh_a @ X @ svd.vh_bt.T
        out = np.zeros(self.obs_shape, dtype=complex)
        ra, rb = svd.s_a.size, svd.s_bt.size
        out[:ra, :rb] = svd.s_a[:, None] * svd.s_bt[None, :] * Z
        return out

    def adjoint_t(self, S) -> np.ndarray:
        """``V Lambda^H s`` on grids."""
        svd = self._need_svd()
        S = self._as_grid(S, self.obs_shape)
        ra, rb = svd.s_a.size, svd.s_bt.size
        G = svd.s_a[:, None] * svd.s_bt[None, :] * S[:ra, :rb]
        return svd.vh_a.conj().T @ G @ svd.vh_bt.conj()

    def svd_dense_factors(self):
        """Materialized ``(U, Lambda, V)`` of ``Phi``; small instances only."""
        svd = self._need_svd()
        if self.M * self.N > DENSE_LIMIT:
            raise MemoryError("operator too large to materialize")
        U = np.kron(svd.u_bt, svd.u_a)
        I, Q = self.signal_shape
        va = np.zeros((I, I), dtype=complex)
        va[:, :svd.vh_a.shape[0]] = svd.vh_a.conj().T
        vb = np.zeros((Q, Q), dtype=complex)
        vb[:, :svd.vh_bt.shape[0]] = svd.vh_bt.conj().T
        V = np.kron(vb, va)
        Lam = np.zeros((self.M, self.N))
        mr, K = self.obs_shape
        for k in range(svd.s_bt.size):
            for m in range(svd.s_a.size):
                Lam[m + mr * k, m + I * k] = svd.s_a[m] * svd.s_bt[k]
        return U, Lam, V


def svd_preprocess(op: MeasurementOperator) -> MeasurementOperator:
    """Attach the Kronecker-factored SVD of ``Phi = B^T kron A`` to a copy of ``op``."""
    A, Bt = op.a_factor, op.b_factor.T
    if not np.any(A) or not np.any(Bt):
        raise np.linalg.LinAlgError("degenerate SVD: operator is identically zero")
    u_a, s_a, vh_a = np.linalg.svd(A, full_matrices=False)
    u_bt, s_bt, vh_bt = np.linalg.svd(Bt, full_matrices=False)
    # the observation grid needs a full square left basis
    if u_a.shape[1] < A.shape[0]:
        u_a = np.linalg.svd(A, full_matrices=True)[0]
    if u_bt.shape[1] < Bt.shape[0]:
        u_bt = np.linalg.svd(Bt, full_matrices=True)[0]
    svd = KroneckerSVD(u_a, s_a, vh_a, u_bt, s_bt, vh_bt)
    return MeasurementOperator(op.a_factor, op.b_factor, op.combiner, op.dictionary, svd)
