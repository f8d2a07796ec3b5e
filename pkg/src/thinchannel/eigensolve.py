"""Smallest eigenpairs of the symmetric pencil ``K x = lam M x``.

:func:`lobpcg` is a block preconditioned conjugate-gradient iteration with
Rayleigh-Ritz on ``span{X, W, P}``; :func:`dense_oracle` solves small
problems exactly through a Cholesky reduction and serves as its check.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EigenSolverError, FactorizationError, ParameterError

log = logging.getLogger(__name__)

PRECONDITIONERS = ("factorized", "jacobi")
DENSE_LIMIT = 2000
UNIT_ROUNDOFF = np.finfo(float).eps / 2
RESIDUAL_FLOOR_FACTOR = 64.0


@dataclass(frozen=True)
class EigenRequest:
    """Parameters of an eigensolve.

    ``block_size`` defaults to ``k + max(2, k // 2)``. ``shift`` is the
    ``sigma`` in the preconditioner ``(K + sigma M)^-1``; ``None`` picks it
    automatically (zero when Dirichlet constraints make ``K`` definite).
    """

    k: int
    tol: float = 1e-8
    max_iter: int = 500
    block_size: Optional[int] = None
    seed: int = 0
    preconditioner: str = "factorized"
    shift: Optional[float] = None
    debug: bool = False

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("k must be >= 1")
        if not self.tol > 0:
            raise ParameterError("tol must be > 0")
        if self.max_iter < 1:
            raise ParameterError("max_iter must be >= 1")
        if self.block_size is not None and self.block_size < self.k:
            raise ParameterError("block_size must be >= k")
        if self.preconditioner not in PRECONDITIONERS:
            raise ParameterError(f"unknown preconditioner {self.preconditioner!r}")

    @property
    def block(self):
        return self.block_size if self.block_size is not None else self.k + max(2, self.k // 2)


@dataclass
class EigenResult:
    """Eigenpairs in ascending order with M-orthonormal ``vectors``.

    ``floors`` holds the rounding-error level of each relative residual;
    a pair counts as converged when its residual is below
    ``max(tol, floor)``.
    """

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool
    floors: Optional[np.ndarray] = None
    history: Optional[list] = None


def _residuals(K, M, values, X, KX, MX):
    R = KX - MX * values
    denom = np.linalg.norm(KX, axis=0) + np.abs(values) * np.linalg.norm(MX, axis=0)
    denom = np.where(denom > 0, denom, 1.0)
    absX = np.abs(X)
    scale = (np.linalg.norm(abs(K) @ absX, axis=0)
             + np.abs(values) * np.linalg.norm(abs(M) @ absX, axis=0))
    floors = RESIDUAL_FLOOR_FACTOR * UNIT_ROUNDOFF * scale / denom
    return np.linalg.norm(R, axis=0) / denom, floors


def relative_residuals(K, M, values, vectors):
    """``||K x - lam M x|| / (||K x|| + |lam| ||M x||)`` per column."""
    return _residuals(K, M, values, vectors, K @ vectors, M @ vectors)[0]


def residual_floors(K, M, values, vectors):
    """Attainable relative residual in double precision, per column.

    Forming ``K x`` in floating point commits an error of about
    ``u |K| |x|``; for pencils with very large stiffness entries (thin
    channels) or for kernel vectors this exceeds any fixed tolerance.
    """
    return _residuals(K, M, values, vectors, K @ vectors, M @ vectors)[1]


def rayleigh_quotient(forms, x):
    """``x^T K x / x^T M x``."""
    x = np.asarray(x, dtype=float)
    den = float(x @ (forms.M @ x))
    if not den > 0:
        raise ParameterError("vector has zero M-norm")
    return float(x @ (forms.K @ x)) / den


def _dense_pencil(A, B):
    """All eigenpairs of ``A x = mu B x`` via ``B = L L^T``; vectors B-orthonormal."""
    try:
        L = np.linalg.cholesky(B)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("matrix is not positive definite") from exc
    Y = la.solve_triangular(L, A, lower=True)
    C = la.solve_triangular(L, Y.T, lower=True)
    mu, V = np.linalg.eigh(0.5 * (C + C.T))
    return mu, la.solve_triangular(L.T, V, lower=False)


def dense_oracle(forms):
    """All eigenpairs via a Cholesky reduction and a symmetric eigendecomposition.

    The direct reduction of ``(K, M)`` has absolute eigenvalue errors of
    order ``u * lam_max``, which is large relative to the low eigenvalues
    of thin-channel pencils. The low end is therefore taken from the
    inverse pencil ``M x = mu (K + sigma M) x``, whose errors are of order
    ``u (lam + sigma)**2 / (lam_1 + sigma)``; each eigenvalue comes from
    whichever reduction has the smaller error estimate.
    """
    K = forms.K.toarray() if sp.issparse(forms.K) else np.asarray(forms.K, dtype=float)
    M = forms.M.toarray() if sp.issparse(forms.M) else np.asarray(forms.M, dtype=float)
    n = K.shape[0]
    if n > DENSE_LIMIT:
        raise ParameterError(f"dense oracle limited to n <= {DENSE_LIMIT}, got {n}")
    try:
        values, vectors = _dense_pencil(K, M)
    except FactorizationError as exc:
        raise FactorizationError("mass matrix is not positive definite") from exc
    lam_max = max(abs(values[-1]), 1e-300)
    try:
        np.linalg.cholesky(K)
        sigma = 0.0
    except np.linalg.LinAlgError:
        sigma = 1e-6 * lam_max
    try:
        mu, W = _dense_pencil(M, K + sigma * M)
    except FactorizationError:
        mu = None
    if mu is not None:
        inv_vals = 1.0 / mu[::-1] - sigma
        W = W[:, ::-1] / np.sqrt(mu[::-1])          # rescale to M-orthonormal
        low = inv_vals[0] + sigma
        use_inv = (values + sigma) ** 2 < lam_max * low
        values = np.where(use_inv, inv_vals, values)
        vectors = np.where(use_inv[None, :], W, vectors)
        order = np.argsort(values, kind="stable")
        values, vectors = values[order], vectors[:, order]
    res, floors = _residuals(K, M, values, vectors, K @ vectors, M @ vectors)
    return EigenResult(values, vectors, res, 1, True, floors)


def _auto_shift(forms, kind):
    if forms.has_dirichlet:
        return 0.0
    K, M = forms.K, forms.M
    if kind == "jacobi":
        return 1e-3 * K.diagonal().sum() / K.shape[0]
    return 1e-10 * K.diagonal().sum() / M.diagonal().sum()


def _preconditioner(forms, req):
    sigma = req.shift if req.shift is not None else _auto_shift(forms, req.preconditioner)
    A = (forms.K + sigma * forms.M).tocsc()
    if req.preconditioner == "jacobi":
        d = A.diagonal()
        if np.any(d <= 0):
            raise EigenSolverError("shifted stiffness has a non-positive diagonal")
        inv = 1.0 / d
        return lambda R: R * inv[:, None]
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise EigenSolverError(f"shifted stiffness is singular (sigma={sigma:g})") from exc
    return lu.solve


def _svqb(U, MU, drop=1e-12):
    """M-orthonormalize the columns of ``U``, dropping near-dependent directions."""
    G = U.T @ MU
    G = 0.5 * (G + G.T)
    d = np.sqrt(np.abs(np.diag(G)))
    keep = d > 0
    if not keep.any():
        return U[:, :0], MU[:, :0]
    U, MU, G, d = U[:, keep], MU[:, keep], G[np.ix_(keep, keep)], d[keep]
    Gs = G / np.outer(d, d)
    theta, V = np.linalg.eigh(Gs)
    good = theta > drop * theta.max()
    T = (V[:, good] / np.sqrt(theta[good])) / d[:, None]
    return U @ T, MU @ T


def _orthogonalize(W, Q, MQ, M, passes=2):
    """Remove the M-components of ``W`` along the M-orthonormal ``Q``."""
    for _ in range(passes):
        W = W - Q @ (MQ.T @ W)
    return W, M @ W


def lobpcg(forms, req: EigenRequest):
    """``req.k`` smallest eigenpairs of ``(forms.K, forms.M)``.

    Deterministic for a fixed ``req.seed``. Columns whose relative residual
    is below ``req.tol`` are soft-locked (kept in the basis, no new search
    direction). On Gram-matrix breakdown the iteration restarts once from a
    fresh random block.
    """
    K, M = forms.K, forms.M
    n = K.shape[0]
    if req.k > n:
        raise ParameterError(f"k={req.k} exceeds problem size {n}")
    bs = min(req.block, n)
    if 3 * bs >= n:
        res = dense_oracle(forms)
        return EigenResult(res.values[:req.k], res.vectors[:, :req.k],
                           res.residuals[:req.k], 0, True, res.floors[:req.k])
    precond = _preconditioner(forms, req)
    rng = np.random.default_rng(req.seed)
    for attempt in range(2):
        X0 = rng.standard_normal((n, bs))
        try:
            return _iterate(K, M, X0, precond, req, bs)
        except _Breakdown as exc:
            log.warning("lobpcg breakdown (%s); restarting with a fresh block", exc)
    raise EigenSolverError("lobpcg broke down twice")


class _Breakdown(Exception):
    pass


def _iterate(K, M, X, precond, req, bs):
    X, MX = _svqb(X, M @ X)
    if X.shape[1] < bs:
        raise _Breakdown("initial block is rank deficient")
    KX = K @ X
    theta, C = np.linalg.eigh(0.5 * (X.T @ KX + KX.T @ X))
    X, MX, KX = X @ C, MX @ C, KX @ C
    P = MP = None
    history = [] if req.debug else None
    it = 0
    for it in range(1, req.max_iter + 1):
        R = KX - MX * theta
        res, floors = _residuals(K, M, theta, X, KX, MX)
        done = res <= np.maximum(req.tol, floors)
        if np.all(done[:req.k]):
            it -= 1
            break
        active = ~done
        W = precond(R[:, active])
        W, MW = _orthogonalize(W, X, MX, M)
        blocks, mblocks = [X], [MX]
        if P is not None:
            P, MP = _orthogonalize(P, X, MX, M)
            P, MP = _svqb(P, MP)
            blocks.append(P)
            mblocks.append(MP)
            Q = np.hstack(blocks)
            MQ = np.hstack(mblocks)
            W, MW = _orthogonalize(W, Q, MQ, M)
        W, MW = _svqb(W, MW)
        if W.shape[1] == 0:
            raise _Breakdown("search directions collapsed")
        blocks.append(W)
        mblocks.append(MW)
        Q = np.hstack(blocks)
        MQ = np.hstack(mblocks)
        KQ = np.hstack([KX, K @ Q[:, bs:]])
        A = Q.T @ KQ
        A = 0.5 * (A + A.T)
        new_theta, C = np.linalg.eigh(A)
        new_theta, C = new_theta[:bs], C[:, :bs]
        if req.debug:
            jump = new_theta - theta
            if np.any(jump > 1e-10 * np.maximum(1.0, np.abs(theta))):
                raise AssertionError(f"Ritz values increased at iteration {it}: {jump.max():g}")
            history.append(new_theta.copy())
        theta = new_theta
        X, MX, KX = Q @ C, MQ @ C, KQ @ C
        Ct = C[bs:]
        P, MP = Q[:, bs:] @ Ct, MQ[:, bs:] @ Ct
        # renormalize X against drift
        X, MX = _svqb(X, MX)
        if X.shape[1] < bs:
            raise _Breakdown("Ritz block lost rank")
        KX = K @ X
        Ax = 0.5 * (X.T @ KX + KX.T @ X)
        theta, Cx = np.linalg.eigh(Ax)
        X, MX, KX = X @ Cx, MX @ Cx, KX @ Cx
    else:
        it = req.max_iter
    k = req.k
    values = theta[:k].copy()
    vectors = X[:, :k].copy()
    resid, floors = _residuals(K, M, values, vectors, K @ vectors, M @ vectors)
    converged = bool(np.all(resid <= np.maximum(req.tol, floors)))
    if not converged:
        log.warning("lobpcg stopped after %d iterations; max residual %.3g", it, resid.max())
    return EigenResult(values, vectors, resid, it, converged, floors, history)
