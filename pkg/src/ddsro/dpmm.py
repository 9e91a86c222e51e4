"""Truncated Dirichlet process Gaussian mixture fitted by mean-field
variational inference (stick-breaking weights, Normal-Wishart components).

The component posterior is reported in covariance units: ``psi`` is the
inverse-Wishart scale (the inverse of the precision-Wishart scale), so that
``kappa * sqrt(psi)`` is the scale of the posterior predictive Student-t.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.special import digamma, gammaln

log = logging.getLogger(__name__)


class DpmmError(ValueError):
    pass


# ---------------------------------------------------------------------------
# small dense symmetric eigensolver


def jacobi_eigh(A, tol: float = 1e-12, max_sweeps: int = 100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with ascending eigenvalues and ``A = V diag(w) V^T``.
    Sweeps until the off-diagonal Frobenius norm is at most ``tol`` times the
    matrix norm.
    """
    A = np.array(A, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if not np.allclose(A, A.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(A).max(initial=0.0))):
        raise ValueError("matrix must be symmetric")
    A = 0.5 * (A + A.T)
    V = np.eye(n)
    scale = np.linalg.norm(A)
    if n < 2 or scale == 0.0:
        w = np.diag(A).copy()
        order = np.argsort(w, kind="stable")
        return w[order], V[:, order]
    for _ in range(max_sweeps):
        off = math.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = 0.5 * (A[q, q] - A[p, p]) / apq
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                # rotate rows/cols p and q
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                rp = A[p, :].copy()
                rq = A[q, :].copy()
                A[p, :] = c * rp - s * rq
                A[q, :] = s * rp + c * rq
                A[p, q] = A[q, p] = 0.0
                vp = V[:, p].copy()
                vq = V[:, q].copy()
                V[:, p] = c * vp - s * vq
                V[:, q] = s * vp + c * vq
    else:
        raise DpmmError("Jacobi eigensolver did not converge")
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def sqrtm_psd(A) -> np.ndarray:
    """Symmetric PSD square root via the eigen-decomposition.

    Tiny negative eigenvalues from round-off are clipped to zero.
    """
    w, V = jacobi_eigh(A)
    if w.size and w[0] < -1e-10 * max(1.0, abs(w[-1])):
        raise DpmmError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3g})")
    root = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    return 0.5 * (root + root.T)


def is_spd(A, rel_tol: float = 1e-10) -> bool:
    w, _ = jacobi_eigh(A)
    return bool(w.size) and w[0] > rel_tol * max(abs(w[-1]), 1e-300)


# ---------------------------------------------------------------------------
# model types


@dataclass
class DpmmConfig:
    truncation: int = 10
    alpha: float = 1.0
    base_mean: Optional[np.ndarray] = None
    base_scale: float = 1.0
    base_dof: Optional[float] = None
    base_scale_matrix: Optional[np.ndarray] = None
    max_iters: int = 500
    elbo_tol: float = 1e-6
    seed: int = 0
    # run from k-means++ seedings with 1..truncation clusters and keep the
    # best final ELBO; off means a single run seeded with `truncation` clusters
    init_search: bool = True

    def resolved(self, points: np.ndarray) -> "DpmmConfig":
        """Fill data-dependent defaults and validate."""
        d = points.shape[1]
        mean = points.mean(axis=0) if self.base_mean is None else np.asarray(self.base_mean, float).ravel()
        if self.base_scale_matrix is None:
            cov = np.atleast_2d(np.cov(points, rowvar=False, bias=True))
            cov = cov + 1e-6 * max(np.trace(cov) / d, 1e-12) * np.eye(d)
        else:
            cov = np.atleast_2d(np.asarray(self.base_scale_matrix, float))
        dof = d + 2.0 if self.base_dof is None else float(self.base_dof)
        cfg = DpmmConfig(self.truncation, self.alpha, mean, self.base_scale, dof, cov,
                         self.max_iters, self.elbo_tol, self.seed, self.init_search)
        if cfg.truncation < 1:
            raise DpmmError("truncation must be >= 1")
        if cfg.alpha <= 0 or cfg.base_scale <= 0:
            raise DpmmError("alpha and base_scale must be positive")
        if cfg.base_dof < d:
            raise DpmmError(f"base_dof {cfg.base_dof} must be >= dim {d}")
        if mean.size != d or cov.shape != (d, d):
            raise DpmmError("base measure dimensions do not match the data")
        if not np.allclose(cov, cov.T) or not is_spd(cov):
            raise DpmmError("base_scale_matrix must be symmetric positive definite")
        return cfg


@dataclass
class ComponentPosterior:
    tau: float
    nu: float
    mu: np.ndarray
    lam: float
    omega: float
    psi: np.ndarray

    def to_dict(self):
        return {
            "tau": self.tau, "nu": self.nu, "mu": list(map(float, self.mu)),
            "lambda": self.lam, "omega": self.omega, "psi": np.asarray(self.psi).tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["tau"]), float(d["nu"]), np.asarray(d["mu"], float),
                   float(d["lambda"]), float(d["omega"]), np.asarray(d["psi"], float))


@dataclass
class MixturePosterior:
    class_id: int
    components: List[ComponentPosterior]
    weights: np.ndarray
    elbo_trace: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def dim(self) -> int:
        return self.components[0].mu.size

    def to_dict(self):
        return {
            "class_id": self.class_id,
            "components": [c.to_dict() for c in self.components],
            "gamma": list(map(float, self.weights)),
            "elbo_trace": list(map(float, self.elbo_trace)),
            "iterations": self.iterations,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("class_id", 0), [ComponentPosterior.from_dict(c) for c in d["components"]],
                   np.asarray(d["gamma"], float), list(d.get("elbo_trace", [])),
                   d.get("iterations", 0), d.get("converged", False))


def stick_breaking_weights(taus: Sequence[float], nus: Sequence[float], M: int) -> np.ndarray:
    """Expected stick-breaking weights; the last weight takes the remainder."""
    if M < 1:
        raise DpmmError("M must be >= 1")
    taus = np.asarray(taus, float)[: M - 1]
    nus = np.asarray(nus, float)[: M - 1]
    if taus.size < M - 1 or nus.size < M - 1:
        raise DpmmError(f"need at least {M - 1} stick parameters")
    if np.any(taus <= 0) or np.any(nus <= 0):
        raise DpmmError("stick parameters must be positive")
    frac = taus / (taus + nus)
    remain = np.concatenate([[1.0], np.cumprod(nus / (taus + nus))])[: M - 1]
    g = frac * remain
    return np.append(g, 1.0 - g.sum())


def effective_components(post: MixturePosterior, gamma_star: float) -> List[int]:
    """Indices with weight >= gamma_star, heaviest first (ties: lower index)."""
    if not 0.0 <= gamma_star < 1.0:
        raise DpmmError("gamma_star must lie in [0, 1)")
    w = np.asarray(post.weights)
    keep = [i for i in range(w.size) if w[i] >= gamma_star]
    keep.sort(key=lambda i: (-w[i], i))
    if not keep:
        raise DpmmError("threshold removed all components")
    return keep


# ---------------------------------------------------------------------------
# variational inference


class _State:
    """Variational parameters for all M components."""

    def __init__(self, M, d):
        self.tau = np.ones(M)
        self.nu = np.ones(M)
        self.beta = np.ones(M)
        self.m = np.zeros((M, d))
        self.dof = np.ones(M)
        self.psi = np.zeros((M, d, d))  # inverse-Wishart scale (covariance units)
        self.prec_scale = np.zeros((M, d, d))  # Wishart scale W = inv(psi)
        self.logdet_psi = np.zeros(M)


def _kmeanspp_resp(points, M, rng):
    """Hard responsibilities from k-means++ seeding."""
    L = points.shape[0]
    centers = [points[rng.integers(L)]]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for _ in range(1, min(M, L)):
        total = d2.sum()
        if total <= 0:
            break
        idx = rng.choice(L, p=d2 / total)
        centers.append(points[idx])
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    C = np.array(centers)
    lab = np.argmin(((points[:, None, :] - C[None]) ** 2).sum(-1), axis=1)
    R = np.zeros((L, M))
    R[np.arange(L), lab] = 1.0
    return R


def _m_step(X, R, cfg, st, iteration):
    M, d = R.shape[1], X.shape[1]
    Nk = R.sum(axis=0)
    m0, b0, n0, psi0 = cfg.base_mean, cfg.base_scale, cfg.base_dof, cfg.base_scale_matrix
    # stick-breaking Beta parameters
    tail = np.concatenate([np.cumsum(Nk[::-1])[::-1][1:], [0.0]])
    st.tau = 1.0 + Nk
    st.nu = cfg.alpha + tail
    for k in range(M):
        n = Nk[k]
        if n > 1e-10:
            xbar = R[:, k] @ X / n
            diff = X - xbar
            S = (R[:, k, None] * diff).T @ diff  # already multiplied by N_k
        else:
            xbar = m0.copy()
            S = np.zeros((d, d))
        beta = b0 + n
        st.beta[k] = beta
        st.m[k] = (b0 * m0 + n * xbar) / beta
        st.dof[k] = n0 + n
        dm = (xbar - m0)[:, None]
        psi = psi0 + S + (b0 * n / (b0 + n)) * (dm @ dm.T)
        psi = 0.5 * (psi + psi.T)
        try:
            chol = np.linalg.cholesky(psi)
        except np.linalg.LinAlgError:
            raise DpmmError(f"component {k} scale matrix not positive definite at iteration {iteration}") from None
        st.psi[k] = psi
        st.logdet_psi[k] = 2.0 * np.sum(np.log(np.diag(chol)))
        inv_chol = np.linalg.inv(chol)
        st.prec_scale[k] = inv_chol.T @ inv_chol
    return Nk


def _expected_log_pi(st):
    M = st.tau.size
    dg = digamma(st.tau + st.nu)
    e_log_v = digamma(st.tau) - dg
    e_log_1mv = digamma(st.nu) - dg
    e_log_v[M - 1] = 0.0
    prefix = np.concatenate([[0.0], np.cumsum(e_log_1mv[: M - 1])])
    return e_log_v + prefix, e_log_v, e_log_1mv


def _expected_logdet_lambda(st, d):
    i = np.arange(1, d + 1)
    return np.array([np.sum(digamma((st.dof[k] + 1 - i) / 2.0)) + d * math.log(2.0) - st.logdet_psi[k]
                     for k in range(st.dof.size)])


def _mahalanobis(X, st):
    M = st.dof.size
    out = np.empty((X.shape[0], M))
    for k in range(M):
        diff = X - st.m[k]
        out[:, k] = np.einsum("ni,ij,nj->n", diff, st.prec_scale[k], diff)
    return out


def _log_rho(X, st):
    d = X.shape[1]
    e_log_pi, _, _ = _expected_log_pi(st)
    e_logdet = _expected_logdet_lambda(st, d)
    quad = d / st.beta + st.dof * _mahalanobis(X, st)
    return e_log_pi + 0.5 * e_logdet - 0.5 * d * math.log(2 * math.pi) - 0.5 * quad


def _softmax_rows(logr):
    mx = logr.max(axis=1, keepdims=True)
    R = np.exp(logr - mx)
    R /= R.sum(axis=1, keepdims=True)
    return R


def _log_wishart_norm(logdet_W, dof, d):
    """log B(W, nu) for the Wishart normaliser."""
    i = np.arange(1, d + 1)
    return (-0.5 * dof * logdet_W - 0.5 * dof * d * math.log(2.0)
            - 0.25 * d * (d - 1) * math.log(math.pi) - np.sum(gammaln((dof + 1 - i) / 2.0)))


def _elbo(X, R, st, cfg):
    L, d = X.shape
    M = R.shape[1]
    Nk = R.sum(axis=0)
    e_log_pi, e_log_v, e_log_1mv = _expected_log_pi(st)
    e_logdet = _expected_logdet_lambda(st, d)
    m0, b0, n0, psi0 = cfg.base_mean, cfg.base_scale, cfg.base_dof, cfg.base_scale_matrix

    # E log p(X | Z, mu, Lambda), written per point to avoid the S_k detour
    quad = d / st.beta + st.dof * _mahalanobis(X, st)
    ll = 0.5 * np.sum(R * (e_logdet - d * math.log(2 * math.pi) - quad))

    e_log_pz = np.sum(Nk * e_log_pi)
    a = cfg.alpha
    stick = slice(0, M - 1)
    e_log_pv = np.sum(math.log(a) + (a - 1.0) * e_log_1mv[stick])
    tv, nv = st.tau[stick], st.nu[stick]
    e_log_qv = np.sum(gammaln(tv + nv) - gammaln(tv) - gammaln(nv)
                      + (tv - 1.0) * e_log_v[stick] + (nv - 1.0) * e_log_1mv[stick])

    sign, logdet_psi0 = np.linalg.slogdet(psi0)
    logB0 = _log_wishart_norm(-logdet_psi0, n0, d)
    e_log_pml = 0.0
    e_log_qml = 0.0
    for k in range(M):
        dm = st.m[k] - m0
        e_log_pml += 0.5 * (d * math.log(b0 / (2 * math.pi)) + e_logdet[k] - d * b0 / st.beta[k]
                            - b0 * st.dof[k] * dm @ st.prec_scale[k] @ dm)
        e_log_pml += logB0 + 0.5 * (n0 - d - 1) * e_logdet[k] - 0.5 * st.dof[k] * np.trace(psi0 @ st.prec_scale[k])
        logBk = _log_wishart_norm(-st.logdet_psi[k], st.dof[k], d)
        entropy = -logBk - 0.5 * (st.dof[k] - d - 1) * e_logdet[k] + 0.5 * st.dof[k] * d
        e_log_qml += 0.5 * e_logdet[k] + 0.5 * d * math.log(st.beta[k] / (2 * math.pi)) - 0.5 * d - entropy

    with np.errstate(divide="ignore", invalid="ignore"):
        e_log_qz = np.sum(np.where(R > 0, R * np.log(R), 0.0))
    return float(ll + e_log_pz + e_log_pv + e_log_pml - e_log_qz - e_log_qv - e_log_qml)


def _posterior_from_state(st, R, class_id, trace, iters, converged):
    M = st.tau.size
    comps = [ComponentPosterior(float(st.tau[k]), float(st.nu[k]), st.m[k].copy(), float(st.beta[k]),
                                float(st.dof[k]), st.psi[k].copy()) for k in range(M)]
    w = stick_breaking_weights(st.tau, st.nu, M)
    return MixturePosterior(class_id, comps, w, trace, iters, converged)


def fit_dpmm(points, cfg: Optional[DpmmConfig] = None, class_id: int = 0,
             on_iteration: Optional[Callable[[int, np.ndarray, float], None]] = None) -> MixturePosterior:
    """Coordinate-ascent VI.  ``on_iteration(it, responsibilities, elbo)`` is a
    diagnostic hook called once per sweep."""
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    L = X.shape[0] if X.size else 0
    d = X.shape[1] if X.ndim == 2 and X.size else 0
    if L == 0 or d == 0:
        raise DpmmError("no points to fit")
    if L < d + 2:
        raise DpmmError(f"need at least dim+2 = {d + 2} points, got {L}")
    if not np.all(np.isfinite(X)):
        raise DpmmError("points contain non-finite values")
    cfg = (cfg or DpmmConfig()).resolved(X)
    M = cfg.truncation
    best = None
    sizes = range(1, M + 1) if cfg.init_search else (M,)
    for K in sizes:
        rng = np.random.default_rng([cfg.seed, K])
        R0 = np.zeros((L, M))
        R0[:, :K] = _kmeanspp_resp(X, K, rng)
        run = _coordinate_ascent(X, R0, cfg, on_iteration)
        # strict > keeps the smallest seeding on ties
        if best is None or run[2][-1] > best[2][-1]:
            best = run
    st, R, trace, it, converged = best
    log.debug("dpmm class %s: %d sweeps, elbo %.6g", class_id, it, trace[-1])
    return _posterior_from_state(st, R, class_id, trace, it, converged)


def _coordinate_ascent(X, R, cfg, on_iteration):
    st = _State(cfg.truncation, X.shape[1])
    trace: List[float] = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        _m_step(X, R, cfg, st, it)
        R = _softmax_rows(_log_rho(X, st))
        elbo = _elbo(X, R, st, cfg)
        if on_iteration is not None:
            on_iteration(it, R, elbo)
        if trace and elbo - trace[-1] < cfg.elbo_tol:
            trace.append(elbo)
            converged = True
            break
        trace.append(elbo)
    # parameters consistent with the final responsibilities
    _m_step(X, R, cfg, st, it)
    return st, R, trace, it, converged


def responsibilities(post: MixturePosterior, points) -> np.ndarray:
    """Posterior component responsibilities of ``points`` under ``post``."""
    X = np.asarray(points, float)
    M, d = len(post.components), post.dim
    st = _State(M, d)
    for k, c in enumerate(post.components):
        st.tau[k], st.nu[k], st.m[k], st.beta[k], st.dof[k] = c.tau, c.nu, c.mu, c.lam, c.omega
        st.psi[k] = c.psi
        sign, st.logdet_psi[k] = np.linalg.slogdet(c.psi)
        st.prec_scale[k] = np.linalg.inv(c.psi)
    return _softmax_rows(_log_rho(X, st))
