"""Phase retrieval: spectral initialization and the competitor updates."""
from __future__ import annotations

from dataclasses import dataclass
import math
import warnings

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import BracketError, ConvergenceError, InvalidArgument, TheoryDomainError
from .scalar_kit import QuadratureRule, argmin_scalar, gauss_hermite, root_bisect

DEFAULT_EPS = 1e-3
LAMBDA_MAX = 50.0


def preprocess_T(y, eps: float = DEFAULT_EPS):
    """T(y) = (y − 1)/(y + sqrt(1+ε) − 1)."""
    if eps <= 0:
        raise InvalidArgument("eps must be positive")
    y = np.asarray(y, dtype=float)
    out = (y - 1.0) / (y + math.sqrt(1.0 + eps) - 1.0)
    return out if out.ndim else float(out)


# ------------------------------------------------------------------ theory

@dataclass(frozen=True)
class SpectralTheory:
    epsilon: float
    delta: float
    lambda_bar: float
    lambda_star: float
    a: float
    order: int
    sub_threshold: bool = False


def _theory_nodes():
    """Nodes/weights for E[f(G²)] on G ≥ 0: Gauss-Legendre panels graded toward 0.

    The integrands are rational in G² with poles near ±i/sqrt(λ − 1), so plain
    Gauss-Hermite converges slowly once λ is large; graded panels do not care.
    """
    x, w = np.polynomial.legendre.leggauss(20)
    edges = np.concatenate([[0.0], np.geomspace(1e-5, 1.0, 41), np.linspace(1.0, 13.0, 49)[1:]])
    g, wt = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        g.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        wt.append(0.5 * (hi - lo) * w)
    g = np.concatenate(g)
    wt = np.concatenate(wt) * 2.0 * np.exp(-0.5 * g**2) / math.sqrt(2.0 * math.pi)
    return g**2, wt


_THEORY_NODES = _theory_nodes()


def _spectral_functions(delta, eps, rule):
    if rule is None:
        g2, w = _THEORY_NODES
    else:
        g2, w = rule.nodes**2, rule.weights
    t = preprocess_T(g2, eps)

    def phi(lam):
        return lam * float(w @ (t * g2 / (lam - t)))

    def psi(lam):
        return lam / delta + lam * float(w @ (t / (lam - t)))

    def a_sq(lam):
        num = 1.0 / delta - float(w @ (t**2 / (lam - t) ** 2))
        den = 1.0 / delta + float(w @ (t**2 * (g2 - 1.0) / (lam - t) ** 2))
        return num / den

    return phi, psi, a_sq


def spectral_overlap_theory(delta: float, eps: float = DEFAULT_EPS, rule: QuadratureRule | None = None,
                            lambda_max: float = LAMBDA_MAX, lambda_cap: float = 1e6) -> SpectralTheory:
    """Asymptotic |⟨θ, θ⁰⟩|/d of the preprocessed spectral estimator.

    The squared overlap comes from the λ* display; `a` is its square root,
    reported as 0 below the weak-recovery threshold δ ≤ 1 + ε.  The search
    interval (1, lambda_max] is doubled until ζ − φ changes sign or lambda_cap
    is passed.  `rule=None` integrates with graded Gauss-Legendre panels;
    passing a Gauss-Hermite rule reproduces plain quadrature.
    """
    if delta <= 0:
        raise InvalidArgument("delta must be positive")
    phi, psi, a_sq = _spectral_functions(delta, eps, rule)
    order = rule.order if rule is not None else _THEORY_NODES[0].size
    lo = 1.0 + 1e-9
    hi = float(lambda_max)
    while True:
        lam_bar = argmin_scalar(psi, lo, hi, 1e-10)
        zeta = lambda lam: psi(max(lam, lam_bar))
        try:
            lam_star = root_bisect(lambda lam: zeta(lam) - phi(lam), lo, hi, 1e-12)
            break
        except BracketError as exc:
            if delta <= 1.0 + eps:
                return SpectralTheory(eps, delta, lam_bar, math.nan, 0.0, order, True)
            if hi >= lambda_cap:
                raise TheoryDomainError(f"no solution of zeta = phi on (1, {hi:g}] for delta={delta}") from exc
            hi *= 2.0
    if delta <= 1.0 + eps:
        return SpectralTheory(eps, delta, lam_bar, lam_star, 0.0, order, True)
    a2 = a_sq(lam_star)
    sub = a2 <= 0
    a = math.sqrt(min(max(a2, 0.0), 1.0))
    return SpectralTheory(eps, delta, lam_bar, lam_star, a, order, sub)


# ------------------------------------------------------------------ spectral init

def leading_eigenvector(D, method: str = "eigh", scale: float | None = None, max_iter: int = 500,
                        tol: float = 1e-8, seed: int = 0):
    """Top eigenpair of a symmetric matrix.

    "eigh" uses LAPACK.  "power" runs power iteration on D + cI with
    c = `scale` (an upper bound on ‖D‖) + 1, raising ConvergenceError if the
    residual ‖Dv − λv‖/c stays above tol after max_iter steps.
    """
    D = np.asarray(D, dtype=float)
    if method == "eigh":
        lam, V = np.linalg.eigh(D)
        return float(lam[-1]), V[:, -1].copy()
    if method != "power":
        raise InvalidArgument(f"unknown eigen method {method!r}")
    c = (scale if scale is not None else float(np.abs(D).sum(axis=1).max())) + 1.0
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(D.shape[0])
    v /= np.linalg.norm(v)
    res = math.inf
    for _ in range(max_iter):
        w = D @ v + c * v
        v = w / np.linalg.norm(w)
        Dv = D @ v
        lam = float(v @ Dv)
        res = float(np.linalg.norm(Dv - lam * v)) / c
        if res <= tol:
            return lam, v
    raise ConvergenceError(f"power iteration residual {res:.3e} after {max_iter} iterations", residual=res)


def spectral_matrix(X, y, eps: float = DEFAULT_EPS):
    """D_n = Σ_i T(δ·y_i) x_i x_iᵀ.

    With design variance 1/n the responses have mean 1/δ; rescaling by δ puts
    them on the unit-mean scale the preprocessing function is built for.
    """
    n, d = X.shape
    z = preprocess_T((n / d) * np.asarray(y), eps)
    return X.T @ (z[:, None] * X), z


def spectral_init(sample, eps: float = DEFAULT_EPS, method: str = "eigh", theta=None):
    """θ⁰ = √d · v₁(D_n), sign fixed so that ⟨θ⁰, θ⟩ ≥ 0; returns (θ⁰, overlap)."""
    X = sample.X
    d = X.shape[1]
    D, z = spectral_matrix(X, sample.y, eps)
    scale = None
    if method == "power":
        scale = float(np.max(np.abs(z))) * operator_norm(X) ** 2
    _, v = leading_eigenvector(D, method, scale)
    theta = sample.theta if theta is None else theta
    theta0 = math.sqrt(d) * v
    if theta0 @ theta < 0:
        theta0 = -theta0
    ov = float(theta0 @ theta) / (np.linalg.norm(theta0) * np.linalg.norm(theta))
    return theta0, ov


# ------------------------------------------------------------------ updates

@dataclass(frozen=True)
class AlgoParams:
    eta: float = 1.0
    xi: float = 0.1
    L: float | None = None
    alpha_taf: float = 0.6
    gamma_taf: float = 0.7
    inner_iters: int = 300
    inner_rho: float | None = None
    inner_tol: float = 1e-6

    def __post_init__(self):
        for name in ("alpha_taf", "gamma_taf", "inner_iters", "inner_tol"):
            if getattr(self, name) <= 0:
                raise InvalidArgument(f"{name} must be positive")
        if self.eta < 0 or self.xi < 0:
            raise InvalidArgument("step sizes must be non-negative")


def grad_descent_step(X, y, theta, eta, delta):
    """θ + (4ηδ²/n) Xᵀ((y − (Xθ)²) ⊙ Xθ)."""
    n = X.shape[0]
    p = X @ theta
    return theta + (4.0 * eta * delta**2 / n) * (X.T @ ((y - p**2) * p))


def one_step_prox_linear(X, y, theta, xi):
    """θ + 2ξ Xᵀ(sign(y − (Xθ)²) ⊙ Xθ), sign(0) = 0."""
    p = X @ theta
    return theta + 2.0 * xi * (X.T @ (np.sign(y - p**2) * p))


def taf_step(X, y, theta, alpha_taf=0.6, gamma_taf=0.7):
    """Truncated amplitude flow: θ − α Σ_{i∈I} (⟨x_i,θ⟩ − √y_i sign⟨x_i,θ⟩) x_i."""
    p = X @ theta
    sy = np.sqrt(y)
    keep = np.abs(p) >= sy / (1.0 + gamma_taf)
    resid = np.where(keep, p - sy * np.sign(p), 0.0)
    return theta - alpha_taf * (X.T @ resid)


def operator_norm(X, tol: float = 1e-10, max_iter: int = 1000, seed: int = 0) -> float:
    """‖X‖_op by power iteration on XᵀX."""
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(X.shape[1])
    nv = np.linalg.norm(v)
    if nv == 0 or not np.any(X):
        raise InvalidArgument("operator_norm needs a nonzero matrix")
    v /= nv
    prev = 0.0
    for _ in range(max_iter):
        w = X.T @ (X @ v)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            v = rng.standard_normal(X.shape[1])
            v /= np.linalg.norm(v)
            continue
        v = w / lam
        if abs(lam - prev) <= tol * lam:
            return math.sqrt(lam)
        prev = lam
    raise ConvergenceError(f"operator norm power iteration did not converge in {max_iter} steps",
                           residual=abs(lam - prev) / max(lam, 1e-300))


@dataclass(frozen=True)
class ProxInfo:
    iterations: int
    objective: float
    objective_at_zero: float
    stagnated: bool


def _soft(x, k):
    return np.sign(x) * np.maximum(np.abs(x) - k, 0.0)


def prox_linear_step(X, y, theta, L, inner: AlgoParams | None = None, return_info: bool = False):
    """One prox-linear step: approximately minimize over Δ = ϑ − θ

        (L/2)‖Δ‖² + ‖AΔ + c‖₁,   A = 2 diag(Xθ) X,  c = (Xθ)² − y,

    by ADMM on the split r = AΔ + c.  The best iterate seen is returned, so the
    objective never exceeds its value at Δ = 0.
    """
    if L <= 0:
        raise InvalidArgument("L must be positive")
    inner = inner or AlgoParams()
    rho = inner.inner_rho if inner.inner_rho is not None else L
    p = X @ theta
    A = 2.0 * p[:, None] * X
    c = p**2 - y

    def objective(D):
        return 0.5 * L * float(D @ D) + float(np.abs(A @ D + c).sum())

    d = X.shape[1]
    j0 = float(np.abs(c).sum())
    best_D, best_j = np.zeros(d), j0
    if j0 == 0.0:
        out = theta.copy()
        return (out, ProxInfo(0, 0.0, 0.0, False)) if return_info else out
    fac = cho_factor(L * np.eye(d) + rho * (A.T @ A))
    D = np.zeros(d)
    r = c.copy()
    w = np.zeros_like(c)
    j_prev = j0
    stagnated = True
    k = 0
    for k in range(1, inner.inner_iters + 1):
        D = cho_solve(fac, rho * (A.T @ (r - w - c)))
        AD = A @ D
        r_old = r
        r = _soft(AD + c + w, 1.0 / rho)
        w = w + AD + c - r
        j = objective(D)
        if j < best_j:
            best_D, best_j = D.copy(), j
        prim = float(np.linalg.norm(AD + c - r))
        dual = rho * float(np.linalg.norm(A.T @ (r - r_old)))
        scale = max(1.0, float(np.linalg.norm(c)))
        if abs(j_prev - j) <= inner.inner_tol * max(1.0, j) and prim <= inner.inner_tol * scale * 10 \
                and dual <= inner.inner_tol * scale * 10:
            stagnated = False
            break
        j_prev = j
    if stagnated and return_info is False:
        warnings.warn("prox-linear inner solver hit its iteration budget", RuntimeWarning, stacklevel=2)
    out = theta + best_D
    if return_info:
        return out, ProxInfo(k, best_j, j0, stagnated)
    return out
