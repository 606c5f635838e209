"""Capacity estimation: matrix roots, the time-varying Kalman filter, projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numba import njit

from .core import BlockStructure, CapacityMatrix

SYM_TOL = 1e-10
FEASIBLE_RTOL = 1e-12


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        P = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if P.shape != (m.shape[0], m.shape[0]):
            raise ValueError(f"covariance shape {P.shape} does not match mean length {m.shape[0]}")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", P)

    def check(self, tol: float = 1e-10) -> None:
        P = self.cov
        if np.max(np.abs(P - P.T), initial=0.0) > tol:
            raise ValueError("covariance is not symmetric")
        if np.linalg.eigvalsh(P).min() < -tol:
            raise ValueError("covariance is not positive semidefinite")


def sym_sqrt(S, floor: float) -> tuple[np.ndarray, np.ndarray]:
    """Square root and inverse square root of a symmetric matrix.

    Eigenvalues below ``floor`` are raised to ``floor`` first, so both roots
    exist and ``root @ root`` is the floored matrix.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(1.0, np.max(np.abs(S), initial=0.0))
    if np.max(np.abs(S - S.T), initial=0.0) > SYM_TOL * scale:
        raise ValueError("matrix is not symmetric")
    if not floor > 0:
        raise ValueError("floor must be positive")
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    w = np.maximum(w, floor)
    sw = np.sqrt(w)
    root = (V * sw) @ V.T
    inv_root = (V / sw) @ V.T
    return 0.5 * (root + root.T), 0.5 * (inv_root + inv_root.T)


def kalman_step(state: KalmanState, H, obs, process_var: float) -> KalmanState:
    """Random-walk predict followed by an update with unit observation noise."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    obs = np.atleast_1d(np.asarray(obs, dtype=float))
    if not np.all(np.isfinite(H)):
        raise ValueError("sensing matrix must be finite")
    K = state.mean.shape[0]
    P = state.cov + process_var * np.eye(K)
    S = H @ P @ H.T + np.eye(H.shape[0])
    cho = scipy.linalg.cho_factor(S)
    gain = scipy.linalg.cho_solve(cho, H @ P).T
    mean = state.mean + gain @ (obs - H @ state.mean)
    cov = (np.eye(K) - gain @ H) @ P
    return KalmanState(mean, 0.5 * (cov + cov.T))


def project_capacity(c, C_total: float) -> np.ndarray:
    """Clamp negatives to zero and rescale to sum ``C_total``; all-zero falls back to uniform."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if not np.all(np.isfinite(c)):
        raise ValueError("capacity vector must be finite")
    if not C_total > 0:
        raise ValueError("total capacity must be positive")
    c = np.maximum(c, 0.0)
    s = c.sum()
    if abs(s - C_total) <= FEASIBLE_RTOL * C_total:
        # already on the constraint set; leaving it untouched makes projection idempotent
        return c
    if s > 0:
        return (c / s) * C_total
    return np.full(c.shape, C_total / c.shape[0])


def filter_blocks(info_mats, info_vecs, totals, blocks: BlockStructure, lam: float, init,
                  project: bool = True) -> np.ndarray:
    """Forward filter over blocks given each block's summed observation information.

    Process noise ``I / lam`` enters at every block boundary and the prior is
    ``N(init, I / lam)``.  Within a block the state is constant, so the block's
    Kalman updates reduce to adding ``info_mats[b]`` to the precision and
    ``info_vecs[b]`` to the information vector.

    Returns the ``(B, K)`` array of block means, projected onto the capacity
    constraint when ``project`` is true (the projected mean is carried forward).
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    info_mats = np.ascontiguousarray(info_mats, dtype=float)
    info_vecs = np.ascontiguousarray(info_vecs, dtype=float)
    B, K = info_vecs.shape
    if info_mats.shape != (B, K, K) or B != len(blocks):
        raise ValueError("information arrays do not match the block structure")
    init = np.asarray(init, dtype=float)
    if init.shape != (K,):
        raise ValueError(f"init must have length {K}")
    if not (np.all(np.isfinite(info_mats)) and np.all(np.isfinite(info_vecs))):
        raise FloatingPointError("capacity filter received non-finite information")
    ends = np.asarray(totals, dtype=float)[np.array([z - 1 for _, z in blocks], dtype=np.intp)]
    if project and not np.all(ends > 0):
        raise ValueError("total capacity must be positive")
    out = _filter_kernel(info_mats, info_vecs, ends, float(lam), init.copy(), bool(project))
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("capacity filter produced non-finite values")
    return out


@njit(cache=True)
def _project_inplace(c, C_total):
    K = c.shape[0]
    s = 0.0
    for i in range(K):
        if c[i] < 0.0:
            c[i] = 0.0
        s += c[i]
    if abs(s - C_total) <= FEASIBLE_RTOL * C_total:
        return
    if s > 0.0:
        for i in range(K):
            c[i] = (c[i] / s) * C_total
    else:
        for i in range(K):
            c[i] = C_total / K


@njit(cache=True)
def _filter_kernel(mats, vecs, ends, lam, mean, project):
    B, K = vecs.shape
    eye = np.eye(K)
    cov = eye / lam
    out = np.empty((B, K))
    for b in range(B):
        if b > 0:
            cov = cov + eye / lam
        prec = np.linalg.inv(cov)
        prec = 0.5 * (prec + prec.T) + mats[b]
        cov = np.linalg.inv(prec)
        cov = 0.5 * (cov + cov.T)
        mean = mean + cov @ (vecs[b] - mats[b] @ mean)
        if project:
            _project_inplace(mean, ends[b])
        out[b] = mean
    return out


def expand_blocks(block_means, totals, blocks: BlockStructure) -> CapacityMatrix:
    """Write each block's shares to every step of the block, scaled to that step's total."""
    totals = np.asarray(totals, dtype=float)
    means = np.asarray(block_means, dtype=float)
    if not np.all(np.isfinite(means)):
        raise ValueError("capacity vector must be finite")
    # row-wise project_capacity(mean, 1.0)
    m = np.maximum(means, 0.0)
    s = m.sum(axis=1, keepdims=True)
    pos = np.where(s > 0, s, 1.0)
    shares = np.where(np.abs(s - 1.0) <= FEASIBLE_RTOL, m, np.where(s > 0, m / pos, 1.0 / m.shape[1]))
    vals = totals[:, None] * shares[blocks.block_ids()]
    return CapacityMatrix(vals, totals)


def estimate_capacities(sensing, observations, totals, blocks: BlockStructure, lam: float,
                        init) -> CapacityMatrix:
    """Filter per-step observations ``eta_t = H_t c_t + v_t`` into a capacity matrix.

    ``sensing`` is ``(T, K, K)`` (the ``Sigma_t^{1/2}`` matrices) and
    ``observations`` is ``(T, K)``.
    """
    H = np.asarray(sensing, dtype=float)
    eta = np.asarray(observations, dtype=float)
    totals = np.asarray(totals, dtype=float)
    T = blocks.T
    if H.ndim != 3 or H.shape[0] != T or eta.shape != H.shape[:2] or totals.shape != (T,):
        raise ValueError("sensing/observation/totals dimensions do not match the block structure")
    if np.any(np.asarray(init) < 0):
        raise ValueError("init must be nonnegative")
    mats, vecs = _block_sums(np.ascontiguousarray(H), np.ascontiguousarray(eta), blocks.starts())
    means = filter_blocks(mats, vecs, totals, blocks, lam, init)
    return expand_blocks(means, totals, blocks)


@njit(cache=True)
def _block_sums(H, eta, starts):
    """Per-block sums of ``H_t^T H_t`` and ``H_t^T eta_t`` without per-step temporaries."""
    T, K, _ = H.shape
    B = starts.shape[0]
    mats = np.zeros((B, K, K))
    vecs = np.zeros((B, K))
    b = 0
    for t in range(T):
        while b + 1 < B and t >= starts[b + 1]:
            b += 1
        Ht = H[t]
        for i in range(K):
            acc = 0.0
            for r in range(K):
                acc += Ht[r, i] * eta[t, r]
            vecs[b, i] += acc
            for j in range(i, K):
                acc = 0.0
                for r in range(K):
                    acc += Ht[r, i] * Ht[r, j]
                mats[b, i, j] += acc
                if j != i:
                    mats[b, j, i] += acc
    return mats, vecs


def estimate_capacities_stepwise(sensing, observations, totals, blocks: BlockStructure, lam: float,
                                 init, project: bool = True) -> np.ndarray:
    """Reference path: one :func:`kalman_step` per time step.  Returns ``(B, K)`` block means."""
    K = len(init)
    state = KalmanState(np.asarray(init, dtype=float), np.eye(K) / lam)
    out = np.empty((len(blocks), K))
    for b, (a, z) in enumerate(blocks):
        for t in range(a, z):
            pv = 1.0 / lam if (t == a and b > 0) else 0.0
            state = kalman_step(state, sensing[t], observations[t], pv)
        if project:
            state = KalmanState(project_capacity(state.mean, totals[z - 1]), state.cov)
        out[b] = state.mean
    return out
