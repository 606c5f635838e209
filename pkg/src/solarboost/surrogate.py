"""Loss algebra for one time step: true objective, majorizer, derivatives, Sigma.

Notation per step ``t``: ``c`` are the grid capacities, ``q`` the current
ensemble's per-grid predictions, ``Y`` the observed aggregate and ``delta``
a candidate per-grid increment of the unit-output function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .capfilter import sym_sqrt


@dataclass(frozen=True)
class StepContext:
    c: np.ndarray
    q: np.ndarray
    Y: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if c.shape != q.shape or c.ndim != 1:
            raise ValueError(f"c and q must be vectors of equal length, got {c.shape} and {q.shape}")
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(q)) and np.isfinite(self.Y)):
            raise ValueError("step context must be finite")
        if np.any(c < 0):
            raise ValueError("capacities must be nonnegative")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "Y", float(self.Y))

    @property
    def K(self) -> int:
        return self.c.shape[0]


def residual_dot(ctx: StepContext) -> float:
    """``c . r = Y - c . q``; the capacity-weighted residual of the current model."""
    return ctx.Y - float(ctx.c @ ctx.q)


def true_objective(ctx: StepContext, delta) -> float:
    delta = np.asarray(delta, dtype=float)
    return (residual_dot(ctx) - float(ctx.c @ delta)) ** 2


def surrogate_loss(ctx: StepContext, delta) -> float:
    """Jensen majorizer with equal weights 1/K; tangent to the true objective at ``delta = 0``."""
    delta = np.asarray(delta, dtype=float)
    K = ctx.K
    r = residual_dot(ctx)
    return float(np.sum((r - K * ctx.c * delta) ** 2) / K)


def grad_hess(ctx: StepContext) -> tuple[np.ndarray, np.ndarray]:
    """Per-grid boosting gradient and Hessian at the start of a round.

    The gradient is shared by the true objective and its majorizer at
    ``delta = 0``.  The Hessian ``2 c_i^2`` is the diagonal curvature of the
    true objective; the majorizer's own diagonal curvature is ``K`` times larger.
    """
    r = residual_dot(ctx)
    return -2.0 * ctx.c * r, 2.0 * ctx.c ** 2


def grad_hess_batch(c: np.ndarray, q: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`grad_hess` over all steps; ``c`` and ``q`` are ``(T, K)``."""
    r = Y - np.einsum("tk,tk->t", c, q)
    return -2.0 * c * r[:, None], 2.0 * c * c


def raw_sigma(q: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """``K diag(delta^2) + q q' + q delta' + delta q'`` without flooring."""
    q = np.asarray(q, dtype=float)
    delta = np.asarray(delta, dtype=float)
    K = q.shape[0]
    S = K * np.diag(delta ** 2) + np.outer(q, q) + np.outer(q, delta) + np.outer(delta, q)
    return 0.5 * (S + S.T)


def default_floor(S: np.ndarray, rel: float = 1e-6) -> float:
    return rel * (1.0 + np.trace(S) / S.shape[0])


def sigma_matrix(ctx: StepContext, delta, pd_floor=None) -> np.ndarray:
    """Quadratic form of the majorizer in ``c``, eigenvalue-floored to be positive definite.

    ``pd_floor`` is an absolute eigenvalue floor; ``None`` uses the scale-aware
    default ``1e-6 * (1 + trace / K)``.
    """
    S = raw_sigma(ctx.q, delta)
    floor = default_floor(S) if pd_floor is None else float(pd_floor)
    root, _ = sym_sqrt(S, floor)
    S = root @ root
    return 0.5 * (S + S.T)


def surrogate_matrix_form(ctx: StepContext, delta) -> float:
    """The majorizer written as ``Y^2 - 2 Y c'(delta + q) + c' Sigma c`` (unfloored)."""
    delta = np.asarray(delta, dtype=float)
    S = raw_sigma(ctx.q, delta)
    c = ctx.c
    return ctx.Y ** 2 - 2.0 * ctx.Y * float(c @ (delta + ctx.q)) + float(c @ S @ c)


def observation(ctx: StepContext, delta, pd_floor=None) -> tuple[np.ndarray, np.ndarray]:
    """Sensing matrix ``Sigma^{1/2}`` and preprocessed observation ``Y Sigma^{-1/2}(delta + q)``."""
    delta = np.asarray(delta, dtype=float)
    S = raw_sigma(ctx.q, delta)
    floor = default_floor(S) if pd_floor is None else float(pd_floor)
    root, inv_root = sym_sqrt(S, floor)
    return root, ctx.Y * (inv_root @ (delta + ctx.q))


def block_information(q, delta, Y, blocks, rel_floor=1e-6):
    """Per-block sums of the observation information of every step.

    For a step with sensing matrix ``H = Sigma^{1/2}`` and observation ``eta``,
    ``H'H = Sigma`` and ``H' eta = Y (delta + q)``.  Summing these over a
    block gives the exact information a run of Kalman updates would add.
    ``Sigma`` is positive semidefinite by construction
    (``K diag(delta^2) - delta delta' + (q + delta)(q + delta)'``), so the floor
    enters as a diagonal shift of ``rel_floor * (1 + trace / K)`` per step.

    ``q`` and ``delta`` are ``(T, K)``; returns arrays of shape ``(B, K, K)`` and ``(B, K)``.
    """
    q = np.asarray(q, dtype=float)
    delta = np.asarray(delta, dtype=float)
    Y = np.asarray(Y, dtype=float)
    K = q.shape[1]
    qd = q + delta
    trace = K * np.sum(delta ** 2, axis=1) + np.sum(q * q, axis=1) + 2.0 * np.sum(q * delta, axis=1)
    floors = rel_floor * (1.0 + trace / K)
    mats = np.empty((len(blocks), K, K))
    vecs = np.empty((len(blocks), K))
    diag = np.arange(K)
    for b, (a, z) in enumerate(blocks):
        u, d = qd[a:z], delta[a:z]
        m = u.T @ u - d.T @ d
        m[diag, diag] += K * np.sum(d * d, axis=0) + floors[a:z].sum()
        mats[b] = m
        vecs[b] = Y[a:z] @ u
    return mats, vecs
