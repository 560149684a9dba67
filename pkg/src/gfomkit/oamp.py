"""Gram-Schmidt orthogonalization of AMP iterates in L² and the α_t overlaps."""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import InconsistentSEError, InvalidArgument
from .priors import JointPrior, second_moment
from .state_evolution import LowerBoundSeq, SEState

DEGENERACY_TOL = 1e-10


@dataclass(frozen=True)
class OrthogonalizedSpec:
    """Row t of `c` expresses R_t = Σ_s c[t, s] Y_s (Y_s is the law of f_s).

    x[t] = 1 when R_t has unit norm, 0 when Y_t lies in the span of earlier Y's;
    alpha[t] = E[Θ R_t] is α_{t+1}.
    """

    c: np.ndarray
    x: np.ndarray
    alpha: np.ndarray
    residual_sq: np.ndarray
    source: SEState | None = None

    def __post_init__(self):
        for name in ("c", "x", "alpha", "residual_sq"):
            a = np.array(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)


def orthogonalize_gram(K, overlaps, m2, tol=DEGENERACY_TOL, source=None) -> OrthogonalizedSpec:
    """Modified Gram-Schmidt on Gram matrix K with E[Θ Y_s] = overlaps[s]."""
    K = np.asarray(K, dtype=float)
    mu = np.asarray(overlaps, dtype=float)
    T = len(mu)
    if K.shape != (T, T):
        raise InvalidArgument(f"Gram matrix shape {K.shape} does not match {T} overlaps")
    for t in range(T):
        bound = math.sqrt(max(m2, 0.0) * max(K[t, t], 0.0))
        if abs(mu[t]) > bound * (1 + 1e-8) + 1e-12:
            raise InconsistentSEError(
                f"|E[Θ Y_{t}]| = {abs(mu[t]):.6g} exceeds Cauchy-Schwarz bound {bound:.6g}"
            )
    c = np.zeros((T, T))
    x = np.zeros(T, dtype=int)
    alpha = np.zeros(T)
    r2 = np.zeros(T)
    basis = []
    for t in range(T):
        v = np.zeros(T)
        v[t] = 1.0
        for q in basis:
            v = v - (v @ K @ q) * q
        r = float(v @ K @ v)
        r2[t] = r
        if r <= tol * max(1.0, K[t, t]):
            # zero residual: keep the unnormalized row so that c_tt = 1
            c[t] = v
            x[t] = 0
            alpha[t] = 0.0
        else:
            q = v / math.sqrt(r)
            c[t] = q
            x[t] = 1
            alpha[t] = float(q @ mu)
            basis.append(q)
    return OrthogonalizedSpec(c, x, alpha, r2, source)


def orthogonalize(se: SEState, prior: JointPrior, tol: float = DEGENERACY_TOL) -> OrthogonalizedSpec:
    """Orthogonalize Y_0..Y_{T-1} using Σ_{s+1,t+1} = E[Y_s Y_t] and μ_{t+1} = E[Θ Y_t]."""
    return orthogonalize_gram(se.Sigma, se.mu, second_moment(prior), tol, source=se)


def sufficient_statistic_overlap(alpha) -> float:
    """‖α‖₂, the SNR of the collapsed Gaussian observation of Θ."""
    a = np.asarray(list(alpha), dtype=float)
    return float(np.sqrt(np.sum(a * a))) if a.size else 0.0


@dataclass(frozen=True)
class AlphaBoundReport:
    t: np.ndarray
    alpha_norm: np.ndarray
    gamma: np.ndarray
    passed: np.ndarray
    slack: float

    @property
    def all_passed(self):
        return bool(np.all(self.passed))

    @property
    def max_excess(self):
        return float(np.max(self.alpha_norm - self.gamma, initial=-np.inf))


def verify_alpha_bound(spec: OrthogonalizedSpec, lb: LowerBoundSeq, slack: float = 1e-9) -> AlphaBoundReport:
    """Check ‖α_{≤t}‖₂ ≤ γ_t + slack for t = 1..T."""
    T = len(spec.alpha)
    if lb.gamma is None or len(lb.gamma) < T + 1:
        raise InvalidArgument(f"need γ_0..γ_{T}, lower-bound sequence has {0 if lb.gamma is None else len(lb.gamma)}")
    norms = np.sqrt(np.cumsum(spec.alpha**2))
    gam = np.asarray(lb.gamma[1:T + 1])
    return AlphaBoundReport(np.arange(1, T + 1), norms, gam, norms <= gam + slack, slack)
