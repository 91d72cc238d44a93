"""Finite determinantal point processes in the L-ensemble form.

Subsets are represented as ``frozenset`` of item indices. Samplers take an
explicit seed (int, ``SeedSequence`` or ``Generator``).
"""

from __future__ import annotations

import itertools
from typing import Iterable

import numpy as np

from .errors import (InstanceTooLargeError, InvalidParameterError,
                     NumericalDegeneracyError, PsdViolationError)
from .network import as_rng

SYMMETRY_TOL = 1e-9
PSD_FLOOR_REL = 1e-8
RESIDUAL_NORM_TOL = 1e-12
MAX_ENUMERATION_N = 12


class DppKernel:
    """Symmetric PSD L-matrix with a cached eigendecomposition.

    Eigenvalues in ``(-1e-8 * lambda_max, 0)`` are rounding noise and get
    clamped to zero; when that happens ``l_matrix`` is replaced by the
    reconstruction so that every quantity derived from the kernel refers to
    the same PSD matrix. Anything more negative raises
    :class:`PsdViolationError`.

    Parameters
    ----------
    l_matrix : array_like, shape (N, N)

    Attributes
    ----------
    l_matrix : ndarray
    eigenvalues : ndarray, ascending, all >= 0
    eigenvectors : ndarray, columns orthonormal
    clamped : int
        Number of eigenvalues that were floored.
    """

    def __init__(self, l_matrix):
        L = np.array(l_matrix, dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise InvalidParameterError(f"L must be square, got shape {L.shape}")
        if not np.all(np.isfinite(L)):
            raise InvalidParameterError("L has non-finite entries")
        asym = np.abs(L - L.T)
        if np.any(asym > SYMMETRY_TOL * np.maximum(1.0, np.abs(L))):
            raise InvalidParameterError("L is not symmetric")
        L = 0.5 * L + 0.5 * L.T
        lam, vecs = np.linalg.eigh(L)
        top = max(lam[-1], 0.0) if lam.size else 0.0
        tol = PSD_FLOOR_REL * top + 1e-14
        if lam.size and lam[0] < -tol:
            raise PsdViolationError(
                f"eigenvalue {lam[0]:.3e} below the PSD floor -{tol:.3e}")
        negative = lam < 0
        self.clamped = int(np.count_nonzero(negative))
        if self.clamped:
            lam = np.where(negative, 0.0, lam)
            L = (vecs * lam) @ vecs.T
            L = 0.5 * (L + L.T)
        for arr in (L, lam, vecs):
            arr.setflags(write=False)
        self.l_matrix = L
        self.eigenvalues = lam
        self.eigenvectors = vecs

    @property
    def n(self) -> int:
        return self.l_matrix.shape[0]

    def log_normalizer(self) -> float:
        """log det(L + I)."""
        return float(np.sum(np.log1p(self.eigenvalues)))

    def __repr__(self):
        return f"DppKernel(n={self.n}, clamped={self.clamped})"


class ElementaryDpp:
    """Elementary DPP given by k orthonormal N-vectors (the columns of ``vectors``)."""

    def __init__(self, vectors):
        V = np.array(vectors, dtype=float)
        if V.ndim == 1:
            V = V[:, None]
        gram = V.T @ V
        if not np.allclose(gram, np.eye(V.shape[1]), rtol=0.0, atol=1e-9):
            raise InvalidParameterError("elementary DPP vectors must be orthonormal")
        V.setflags(write=False)
        self.vectors = V

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    def marginal_kernel(self) -> np.ndarray:
        return self.vectors @ self.vectors.T


def _as_index_list(subset: Iterable[int], n: int) -> list:
    idx = sorted({int(i) for i in subset})
    if idx and (idx[0] < 0 or idx[-1] >= n):
        raise InvalidParameterError(f"subset {idx} not within 0..{n - 1}")
    return idx


def _principal_det(M: np.ndarray, idx: list) -> float:
    if not idx:
        return 1.0
    return float(np.linalg.det(M[np.ix_(idx, idx)]))


def marginal_kernel(kernel: DppKernel) -> np.ndarray:
    """K = sum_n lambda_n / (1 + lambda_n) v_n v_n^T."""
    V = kernel.eigenvectors
    lam = kernel.eigenvalues
    K = (V * (lam / (1.0 + lam))) @ V.T
    return 0.5 * (K + K.T)


def marginal_kernel_direct(kernel: DppKernel) -> np.ndarray:
    """K = (L + I)^{-1} L, without the eigendecomposition."""
    L = kernel.l_matrix
    return np.linalg.solve(L + np.eye(kernel.n), L)


def subset_probability(kernel: DppKernel, subset) -> float:
    """P_L(Y) = det(L_Y) / det(L + I)."""
    idx = _as_index_list(subset, kernel.n)
    return _principal_det(kernel.l_matrix, idx) / float(np.prod(1.0 + kernel.eigenvalues))


def marginal_probability(k_matrix, subset) -> float:
    """P(A is contained in Y) = det(K_A)."""
    K = np.asarray(k_matrix, dtype=float)
    return _principal_det(K, _as_index_list(subset, K.shape[0]))


def enumerate_distribution(kernel: DppKernel) -> dict:
    """Exact probability of every subset, for N <= 12."""
    n = kernel.n
    if n > MAX_ENUMERATION_N:
        raise InstanceTooLargeError(f"enumeration limited to N <= {MAX_ENUMERATION_N}, got {n}")
    z = float(np.prod(1.0 + kernel.eigenvalues))
    L = kernel.l_matrix
    out = {}
    for size in range(n + 1):
        for combo in itertools.combinations(range(n), size):
            out[frozenset(combo)] = _principal_det(L, list(combo)) / z
    return out


def _projection_draws(B: np.ndarray, k: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Iterated norm-proportional column selection, vectorised over draws.

    ``B`` has shape (size, r, N): each draw's orthonormal basis stored as
    rows, padded with zero rows. ``k`` holds the basis size of each draw.
    After each pick the chosen column direction is projected out of the
    basis (twice, for numerical orthogonality). Returns a boolean
    (size, N) membership matrix with exactly ``k[s]`` entries in row ``s``.
    """
    size, _, n = B.shape
    out = np.zeros((size, n), dtype=bool)
    rows = np.arange(size)
    for step in range(int(k.max(initial=0))):
        live = step < k
        norms2 = np.einsum("skn,skn->sn", B, B)
        w = np.where(~out & (norms2 >= RESIDUAL_NORM_TOL ** 2), norms2, 0.0)
        total = w.sum(axis=1)
        if np.any(live & (total <= 0)):
            raise NumericalDegeneracyError(
                f"all residual norms vanished after {step} picks")
        cdf = np.cumsum(w, axis=1)
        u = rng.random(size) * np.where(live, total, 1.0)
        pick = np.minimum((cdf <= u[:, None]).sum(axis=1), n - 1)
        # guard against landing on a zero-weight tail because of rounding
        pick = np.where(w[rows, pick] > 0, pick, np.argmax(w, axis=1))
        out[rows[live], pick[live]] = True
        col = B[rows, :, pick]
        nrm = np.sqrt(np.maximum(norms2[rows, pick], 1e-300))
        unit = np.where(live[:, None], col / nrm[:, None], 0.0)
        for _ in range(2):
            B = B - unit[:, :, None] * np.einsum("sk,skn->sn", unit, B)[:, None, :]
    return out


def _members(row: np.ndarray) -> frozenset:
    return frozenset(int(i) for i in np.flatnonzero(row))


def sample_elementary(e: ElementaryDpp, seed=None) -> frozenset:
    """Draw exactly ``e.k`` items; P(Y) = det(K^V_Y)."""
    if e.k < 1:
        raise InvalidParameterError("elementary DPP needs at least one vector")
    draw = _projection_draws(e.vectors.T[None, :, :].copy(), np.array([e.k]), as_rng(seed))
    return _members(draw[0])


def sample_dpp(kernel: DppKernel, seed=None) -> frozenset:
    """One exact draw: pick eigenvectors independently, then sample the elementary DPP."""
    return _members(sample_dpp_batch(kernel, 1, seed)[0])


def sample_dpp_batch(kernel: DppKernel, size: int, seed=None) -> np.ndarray:
    """``size`` independent draws as a boolean (size, N) membership matrix.

    Eigenvector ``n`` enters a draw with probability ``lambda_n / (1 + lambda_n)``;
    the draw is then completed by the elementary sampler on the kept
    eigenvectors.
    """
    rng = as_rng(seed)
    n = kernel.n
    if size < 0:
        raise InvalidParameterError("size must be non-negative")
    if size == 0 or n == 0:
        return np.zeros((size, n), dtype=bool)
    lam = kernel.eigenvalues
    keep = rng.random((size, n)) < lam / (1.0 + lam)
    B = np.where(keep[:, :, None], kernel.eigenvectors.T[None, :, :], 0.0)
    return _projection_draws(B, keep.sum(axis=1), rng)


def greedy_map(kernel: DppKernel) -> frozenset:
    """Greedy log-det ascent from the empty set.

    Adds the item with the largest ratio det(L_{Y+i}) / det(L_Y) while that
    ratio exceeds 1; ties go to the lowest index. Ratios are maintained with
    an incremental Cholesky factor, so the cost is O(N k^2).
    """
    L = kernel.l_matrix
    n = kernel.n
    gains = np.diag(L).copy()
    factors = np.zeros((0, n))
    chosen = []
    remaining = np.ones(n, dtype=bool)
    while remaining.any():
        cand = np.where(remaining, gains, -np.inf)
        j = int(np.argmax(cand))
        if not cand[j] > 1.0:
            break
        e = (L[j] - factors[:, j] @ factors) / np.sqrt(cand[j])
        factors = np.vstack([factors, e])
        gains = gains - e * e
        remaining[j] = False
        chosen.append(j)
    return frozenset(chosen)
