"""State evolution for symmetric and GLM AMP, and the optimality recursions.

Denoisers are sums of separable `Term`s.  A term reads a subset of past
iterates (1-based indices) plus the side variables, so every expectation only
integrates over the Gaussian coordinates the term actually touches.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence
import math

import numpy as np
from scipy.stats import norm, qmc

from .errors import InvalidArgument, SEDegenerateError
from .priors import (
    Channel,
    JointPrior,
    channel_information,
    mmse,
    posterior_moments,
    second_moment,
)
from .scalar_kit import QuadratureRule, gauss_hermite

SIGMA_FLOOR = 1e-12


# ------------------------------------------------------------------ denoisers

@dataclass(frozen=True)
class Term:
    """One separable summand of a nonlinearity.

    func(x, *side) -> values, where x[..., j] is iterate `args[j]`.
    grad(x, *side) -> array (..., len(args)) of partial derivatives (optional).
    """

    func: Callable
    args: tuple = ()
    grad: Callable | None = None

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(int(s) for s in self.args))
        if any(s < 1 for s in self.args):
            raise InvalidArgument("term arguments are 1-based iterate indices")


def _stack(iterates, args):
    if not args:
        return np.zeros(iterates[0].shape + (0,)) if iterates else np.zeros((1, 0))
    return np.stack([iterates[s - 1] for s in args], axis=-1)


def eval_terms(terms, iterates, *side):
    """Apply a nonlinearity (tuple of terms) to vectors; iterates[s-1] is iterate s."""
    n = side[0].shape[0] if side and np.ndim(side[0]) else (iterates[0].shape[0] if iterates else 1)
    out = np.zeros(n)
    for term in terms:
        if term.args:
            x = np.stack([iterates[s - 1] for s in term.args], axis=-1)
        else:
            x = np.zeros((n, 0))
        out = out + np.broadcast_to(term.func(x, *side), (n,))
    return out


@dataclass(frozen=True)
class DenoiserSpec:
    """Nonlinearities f_0, f_1, ...; steps[t] is the term tuple of f_t."""

    kind: str
    steps: tuple
    flag: str = "lipschitz"

    def __post_init__(self):
        if self.flag not in ("lipschitz", "polynomial"):
            raise InvalidArgument(f"flag must be 'lipschitz' or 'polynomial', got {self.flag!r}")
        steps = tuple(tuple(s) for s in self.steps)
        for t, terms in enumerate(steps):
            for term in terms:
                if any(s > t for s in term.args):
                    raise InvalidArgument(f"f_{t} may only read iterates 1..{t}")
        object.__setattr__(self, "steps", steps)

    def __len__(self):
        return len(self.steps)

    def apply(self, t, iterates, *side):
        return eval_terms(self.steps[t], iterates, *side)

    @classmethod
    def from_terms(cls, steps, flag="lipschitz", kind="custom"):
        return cls(kind, tuple(tuple(s) for s in steps), flag)

    @classmethod
    def bayes(cls, prior: JointPrior, gammas: Sequence[float], t_max: int | None = None):
        """f_t(x; u) = E[Θ | γ_tΘ + G = x/γ_t, U = u], f_0 = E[Θ | U]."""
        gammas = [float(g) for g in gammas]
        t_max = len(gammas) - 1 if t_max is None else t_max
        steps = []
        for t in range(t_max + 1):
            g = gammas[t] if t > 0 else 0.0
            steps.append((_bayes_term(prior, g, t),))
        return cls("bayes_posterior_mean", tuple(steps), "lipschitz")

    @classmethod
    def linear(cls, coeffs):
        """coeffs[t] = (c_u, c_1, ..., c_t): f_t = c_u·u + Σ_s c_s x_s."""
        steps = []
        for t, c in enumerate(coeffs):
            c = np.asarray(c, dtype=float)
            if c.shape != (t + 1,):
                raise InvalidArgument(f"linear coefficients for f_{t} need length {t + 1}")
            terms = [Term(_lin_u(c[0]))] if c[0] != 0 else []
            if t > 0:
                cs = c[1:].copy()
                terms.append(Term(_lin_x(cs), tuple(range(1, t + 1)), _lin_grad(cs)))
            steps.append(tuple(terms))
        return cls("linear", tuple(steps), "polynomial")

    @classmethod
    def polynomial(cls, coeffs):
        """coeffs[t] has shape (t+1, D+1); row 0 is a polynomial in u, row s in x_s."""
        steps = []
        for t, c in enumerate(coeffs):
            c = np.asarray(c, dtype=float)
            if c.ndim != 2 or c.shape[0] != t + 1:
                raise InvalidArgument(f"polynomial coefficients for f_{t} need shape ({t + 1}, D+1)")
            terms = [Term(_poly_u(c[0].copy()))]
            for s in range(1, t + 1):
                if np.any(c[s] != 0):
                    terms.append(Term(_poly_x(c[s].copy()), (s,), _poly_grad(c[s].copy())))
            steps.append(tuple(terms))
        return cls("polynomial", tuple(steps), "polynomial")

    @classmethod
    def tabulated(cls, tables):
        """tables[t] = (grid, values): f_0 interpolates in u, f_t in the latest iterate."""
        steps = []
        for t, (grid, vals) in enumerate(tables):
            grid = np.asarray(grid, dtype=float)
            vals = np.asarray(vals, dtype=float)
            if t == 0:
                steps.append((Term(_tab_u(grid, vals)),))
            else:
                steps.append((Term(_tab_x(grid, vals), (t,)),))
        return cls("tabulated", tuple(steps), "lipschitz")


# closures kept at module level so specs stay picklable-free but simple

def _bayes_term(prior, gamma, t):
    if t == 0 or gamma <= 0:
        def f(x, u):
            return posterior_moments(prior, 0.0, np.zeros(np.shape(u)), u)[0]
        return Term(f)

    def f(x, u):
        return posterior_moments(prior, gamma, x[..., 0] / gamma, u)[0]

    def grad(x, u):
        # d/dx E[Θ | γΘ+G = x/γ] = Var[Θ | ...]
        return posterior_moments(prior, gamma, x[..., 0] / gamma, u)[1][..., None]

    return Term(f, (t,), grad)


def _lin_u(c0):
    return lambda x, u: c0 * np.asarray(u, dtype=float)


def _lin_x(cs):
    return lambda x, u: x @ cs


def _lin_grad(cs):
    return lambda x, u: np.broadcast_to(cs, x.shape)


def _poly_u(c):
    return lambda x, u: np.polynomial.polynomial.polyval(np.asarray(u, dtype=float), c)


def _poly_x(c):
    return lambda x, u: np.polynomial.polynomial.polyval(x[..., 0], c)


def _poly_grad(c):
    dc = np.polynomial.polynomial.polyder(c) if c.size > 1 else np.zeros(1)
    return lambda x, u: np.polynomial.polynomial.polyval(x[..., 0], dc)[..., None]


def _tab_u(grid, vals):
    return lambda x, u: np.interp(u, grid, vals)


def _tab_x(grid, vals):
    return lambda x, u: np.interp(x[..., 0], grid, vals)


# ------------------------------------------------------------------ records

def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SEState:
    """mu[t-1] = μ_t, Sigma[s-1, t-1] = Σ_{s,t}, b[t-1, s-1] = b_{t,s}.

    GLM runs also carry Sigma_bar (index 0 is Ḡ_0), xi[t-1, s-1] = ξ_{t,s}
    and eta[t-1, s-1] = η_{t,s}.
    """

    mu: np.ndarray
    Sigma: np.ndarray
    b: np.ndarray
    Sigma_bar: np.ndarray | None = None
    xi: np.ndarray | None = None
    eta: np.ndarray | None = None
    delta: float | None = None

    def __post_init__(self):
        for name in ("mu", "Sigma", "b", "Sigma_bar", "xi", "eta"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _frozen(v))

    @property
    def t_max(self):
        return len(self.mu)

    def onsager(self, t, s):
        return float(self.b[t - 1, s - 1])


@dataclass(frozen=True)
class LowerBoundSeq:
    """Optimality recursion output.

    rank_one: gamma[s] = γ_s, mmse_curve[s] = mmse(γ_s) for s = 0..t_max.
    glm: beta/sigma/sigma_tilde/mmse_curve/optimal_correlation at index s-1 hold step s.
    """

    kind: str
    mmse_curve: np.ndarray
    optimal_correlation: np.ndarray
    second_moment: float
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    sigma: np.ndarray | None = None
    sigma_tilde: np.ndarray | None = None
    delta: float | None = None
    truncated: bool = False

    def __post_init__(self):
        for name in ("mmse_curve", "optimal_correlation", "gamma", "beta", "sigma", "sigma_tilde"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, _frozen(v))


# ------------------------------------------------------------------ engine

@dataclass(frozen=True)
class EngineConfig:
    rule: QuadratureRule = field(default_factory=gauss_hermite)
    budget: int = 2_000_000
    qmc_points: int = 2**16
    qmc_seed: int = 0
    fd_step: float = 1e-5
    psd_tol: float = 1e-9
    max_tensor_dims: int = 3


@lru_cache(maxsize=64)
def _tensor_points(k, order):
    r = gauss_hermite(order)
    grids = np.meshgrid(*([r.nodes] * k), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=-1)
    wg = np.meshgrid(*([r.weights] * k), indexing="ij")
    w = np.prod(np.stack([g.ravel() for g in wg], axis=-1), axis=-1)
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


@lru_cache(maxsize=16)
def _qmc_points(k, m, seed):
    sob = qmc.Sobol(d=k, scramble=True, seed=seed)
    z = norm.ppf(sob.random(m))
    z.setflags(write=False)
    return z, np.full(m, 1.0 / m)


def psd_sqrt(C, tol=1e-9):
    """Symmetric square root factor L with L L^T = C, clipping tiny negative eigenvalues."""
    C = 0.5 * (C + C.T)
    w, V = np.linalg.eigh(C)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if w.size and w.min() < -tol * scale:
        raise SEDegenerateError(f"covariance is indefinite: smallest eigenvalue {w.min():.3e}")
    return V * np.sqrt(np.clip(w, 0.0, None))


class _Engine:
    """E[F(mean·A + G, A, B)] with (A, B, w) discrete nodes and G ~ N(0, C)."""

    def __init__(self, cfg: EngineConfig):
        self.cfg = cfg

    def points(self, k, n_outer):
        cfg = self.cfg
        if k == 0:
            return np.zeros((1, 0)), np.ones(1)
        if k <= cfg.max_tensor_dims:
            m = int((cfg.budget / max(n_outer, 1)) ** (1.0 / k))
            m = min(cfg.rule.order, max(8, m))
            return _tensor_points(k, m)
        return _qmc_points(k, cfg.qmc_points, cfg.qmc_seed)

    def expect(self, A, B, wA, mean, C, F):
        k = len(mean)
        Z, wZ = self.points(k, len(wA))
        L = psd_sqrt(np.asarray(C, dtype=float), self.cfg.psd_tol) if k else np.zeros((0, 0))
        G = Z @ L.T
        mean = np.asarray(mean, dtype=float)
        chunk = max(1, self.cfg.budget // max(len(wZ), 1))
        total = 0.0
        for i in range(0, len(wA), chunk):
            a = A[i:i + chunk]
            X = a[:, None, None] * mean[None, None, :] + G[None, :, :]
            vals = np.broadcast_to(F(X, a[:, None], B[i:i + chunk][:, None]), X.shape[:2])
            total += float(wA[i:i + chunk] @ vals @ wZ)
        return total


def _term_value(term, X, pos, *side):
    return term.func(X[..., pos], *side)


def _term_partial(term, X, pos, j, h, *side):
    """∂ of `term` w.r.t. its j-th argument, analytic if available."""
    x = X[..., pos]
    if term.grad is not None:
        return np.asarray(term.grad(x, *side))[..., j]
    xp = x.copy()
    xm = x.copy()
    xp[..., j] += h
    xm[..., j] -= h
    return (term.func(xp, *side) - term.func(xm, *side)) / (2.0 * h)


# ------------------------------------------------------------------ symmetric SE

class SymmetricSE:
    """Incremental state evolution: feed f_0, f_1, ... one at a time."""

    def __init__(self, prior: JointPrior, cfg: EngineConfig | None = None, fd_only=False):
        self.cfg = cfg or EngineConfig()
        self.engine = _Engine(self.cfg)
        self.A, self.B, self.w = prior.nodes(self.cfg.rule)
        self.m2 = second_moment(prior)
        self.fd_only = fd_only
        self.steps = []
        self.mu = []
        self.Sigma = np.zeros((0, 0))
        self.b = np.zeros((0, 0))

    def _E(self, idx, F):
        mean = [self.mu[s - 1] for s in idx]
        rows = [s - 1 for s in idx]
        C = self.Sigma[np.ix_(rows, rows)]
        return self.engine.expect(self.A, self.B, self.w, mean, C, F)

    def _strip(self, term):
        if self.fd_only and term.grad is not None:
            return Term(term.func, term.args)
        return term

    def onsager_row(self, terms):
        """b_{t,s}, s = 1..t, for f_t given Σ_{≤t}."""
        t = len(self.mu)
        row = np.zeros(t)
        h = self.cfg.fd_step
        for term in terms:
            term = self._strip(term)
            idx = term.args
            for j, s in enumerate(idx):
                F = lambda X, A, B, term=term, j=j: _term_partial(term, X, list(range(len(idx))), j, h, B)
                row[s - 1] += self._E(idx, F)
        return row

    def add(self, terms):
        t = len(self.steps)
        if len(self.mu) != t:
            raise InvalidArgument("state evolution is out of sync")
        if t > 0:
            row = self.onsager_row(terms)
            b = np.zeros((t, t))
            b[: t - 1, : t - 1] = self.b
            b[t - 1, :] = row
            self.b = b
        self.steps.append(tuple(terms))
        mu = 0.0
        for term in terms:
            idx = term.args
            F = lambda X, A, B, term=term, idx=idx: A * _term_value(term, X, list(range(len(idx))), B)
            mu += self._E(idx, F)
        col = np.zeros(t + 1)
        for s in range(t + 1):
            acc = 0.0
            for ta in self.steps[s]:
                for tb in terms:
                    idx = tuple(sorted(set(ta.args) | set(tb.args)))
                    pa = [idx.index(v) for v in ta.args]
                    pb = [idx.index(v) for v in tb.args]
                    F = lambda X, A, B, ta=ta, tb=tb, pa=pa, pb=pb: (
                        _term_value(ta, X, pa, B) * _term_value(tb, X, pb, B)
                    )
                    acc += self._E(idx, F)
            col[s] = acc
        S = np.zeros((t + 1, t + 1))
        S[:t, :t] = self.Sigma
        S[:, t] = col
        S[t, :] = col
        self.Sigma = S
        self.mu.append(mu)

    def state(self):
        T = len(self.mu)
        b = np.zeros((T, T))
        b[: self.b.shape[0], : self.b.shape[1]] = self.b
        return SEState(np.array(self.mu), self.Sigma.copy(), b)


def amp_se(prior: JointPrior, denoisers: DenoiserSpec, t_max: int, rule: QuadratureRule | None = None,
           cfg: EngineConfig | None = None) -> SEState:
    """μ_1..μ_T, Σ (T×T) and b_{t,s} for t ≤ T (row T only if f_T is supplied)."""
    if t_max < 1:
        raise InvalidArgument("t_max must be at least 1")
    if len(denoisers) < t_max:
        raise InvalidArgument(f"need f_0..f_{t_max - 1}, got {len(denoisers)} nonlinearities")
    cfg = cfg or EngineConfig(rule=rule or gauss_hermite())
    se = SymmetricSE(prior, cfg)
    for t in range(t_max):
        se.add(denoisers.steps[t])
    st = se.state()
    if len(denoisers) > t_max:
        b = np.array(st.b)
        b[t_max - 1, :] = se.onsager_row(denoisers.steps[t_max])
        st = SEState(st.mu, st.Sigma, b)
    return st


def onsager_coeffs(se: SEState, denoisers: DenoiserSpec, prior: JointPrior, rule: QuadratureRule | None = None,
                   method: str = "auto", cfg: EngineConfig | None = None) -> np.ndarray:
    """b[t-1, s-1] = E[∂_s f_t] for t = 1..T; method 'fd' forces finite differences."""
    if method not in ("auto", "fd"):
        raise InvalidArgument(f"unknown method {method!r}")
    cfg = cfg or EngineConfig(rule=rule or gauss_hermite())
    eng = SymmetricSE(prior, cfg, fd_only=(method == "fd"))
    T = se.t_max
    b = np.zeros((T, T))
    for t in range(1, min(T, len(denoisers) - 1) + 1):
        eng.mu = list(se.mu[:t])
        eng.Sigma = np.array(se.Sigma[:t, :t])
        b[t - 1, :t] = eng.onsager_row(denoisers.steps[t])
    return b


# ------------------------------------------------------------------ GLM SE

class GLMSE:
    """Incremental GLM state evolution; feed f_0, g_1, f_1, g_2, ...

    f-terms are called as func(x, y, u), g-terms as func(x, v).
    """

    def __init__(self, prior_tv: JointPrior, channel: Channel, side_wu: JointPrior | None, delta: float,
                 cfg: EngineConfig | None = None):
        if delta <= 0:
            raise InvalidArgument("delta must be positive")
        self.cfg = cfg or EngineConfig()
        self.engine = _Engine(self.cfg)
        self.channel = channel
        self.delta = float(delta)
        self.T, self.V, self.wT = prior_tv.nodes(self.cfg.rule)
        if side_wu is not None:
            self.W, self.U, self.wW = side_wu.nodes(self.cfg.rule)
        elif channel.uses_noise:
            r = self.cfg.rule
            self.W, self.U, self.wW = r.nodes.copy(), np.zeros(r.order), r.weights.copy()
        else:
            self.W, self.U, self.wW = np.zeros(1), np.zeros(1), np.ones(1)
        self.m2 = second_moment(prior_tv)
        self.f_steps = []
        self.g_steps = []
        self.mu = []
        self.Sigma = np.zeros((0, 0))
        self.Sbar = np.array([[self.m2 / self.delta]])
        self.xi = np.zeros((0, 0))
        self.eta = np.zeros((0, 0))

    def _E_f(self, idx, F):
        rows = [0] + list(idx)
        C = self.Sbar[np.ix_(rows, rows)]
        ch = self.channel

        def G(X, W, U):
            y = ch.h(X[..., 0], W)
            return F(X[..., 1:], X[..., 0], y, W, U)

        return self.engine.expect(self.W, self.U, self.wW, np.zeros(len(rows)), C, G)

    def _E_g(self, idx, F):
        rows = [s - 1 for s in idx]
        mean = [self.mu[s - 1] for s in idx]
        C = self.Sigma[np.ix_(rows, rows)]
        return self.engine.expect(self.T, self.V, self.wT, mean, C, F)

    def add_f(self, terms):
        t = len(self.f_steps)
        if len(self.g_steps) != t:
            raise InvalidArgument("add g_t before f_t")
        h = self.cfg.fd_step
        ch = self.channel
        if t > 0:
            row = np.zeros(t)
            for term in terms:
                for j, s in enumerate(term.args):
                    pos = list(range(len(term.args)))
                    F = lambda X, g0, y, W, U, term=term, j=j, pos=pos: _term_partial(term, X, pos, j, h, y, U)
                    row[s - 1] += self._E_f(term.args, F)
            xi = np.zeros((t, t))
            xi[: t - 1, : t - 1] = self.xi
            xi[t - 1] = row
            self.xi = xi
        self.f_steps.append(tuple(terms))
        mu = 0.0
        for term in terms:
            pos = list(range(len(term.args)))

            def F(X, g0, y, W, U, term=term, pos=pos):
                yp = ch.h(g0 + h, W)
                ym = ch.h(g0 - h, W)
                return (term.func(X[..., pos], yp, U) - term.func(X[..., pos], ym, U)) / (2.0 * h)

            mu += self._E_f(term.args, F)
        col = np.zeros(t + 1)
        for s in range(t + 1):
            acc = 0.0
            for ta in self.f_steps[s]:
                for tb in terms:
                    idx = tuple(sorted(set(ta.args) | set(tb.args)))
                    pa = [idx.index(v) for v in ta.args]
                    pb = [idx.index(v) for v in tb.args]
                    F = lambda X, g0, y, W, U, ta=ta, tb=tb, pa=pa, pb=pb: (
                        ta.func(X[..., pa], y, U) * tb.func(X[..., pb], y, U)
                    )
                    acc += self._E_f(idx, F)
            col[s] = acc
        S = np.zeros((t + 1, t + 1))
        S[:t, :t] = self.Sigma
        S[:, t] = col
        S[t, :] = col
        self.Sigma = S
        self.mu.append(mu)

    def add_g(self, terms):
        t = len(self.g_steps) + 1
        if len(self.f_steps) != t:
            raise InvalidArgument("g_t needs f_0..f_{t-1} first")
        h = self.cfg.fd_step
        row = np.zeros(t)
        for term in terms:
            for j, s in enumerate(term.args):
                pos = list(range(len(term.args)))
                F = lambda X, A, B, term=term, j=j, pos=pos: _term_partial(term, X, pos, j, h, B)
                row[s - 1] += self._E_g(term.args, F) / self.delta
        eta = np.zeros((t, t))
        eta[: t - 1, : t - 1] = self.eta
        eta[t - 1] = row
        self.eta = eta
        self.g_steps.append(tuple(terms))
        col = np.zeros(t + 1)
        for term in terms:
            pos = list(range(len(term.args)))
            F = lambda X, A, B, term=term, pos=pos: A * term.func(X[..., pos], B)
            col[0] += self._E_g(term.args, F) / self.delta
        for s in range(1, t + 1):
            acc = 0.0
            for ta in self.g_steps[s - 1]:
                for tb in terms:
                    idx = tuple(sorted(set(ta.args) | set(tb.args)))
                    pa = [idx.index(v) for v in ta.args]
                    pb = [idx.index(v) for v in tb.args]
                    F = lambda X, A, B, ta=ta, tb=tb, pa=pa, pb=pb: ta.func(X[..., pa], B) * tb.func(X[..., pb], B)
                    acc += self._E_g(idx, F)
            col[s] = acc / self.delta
        S = np.zeros((t + 1, t + 1))
        S[:t, :t] = self.Sbar
        S[:, t] = col
        S[t, :] = col
        self.Sbar = S

    def state(self):
        T = len(self.mu)
        b = np.zeros((T, T))
        xi = np.zeros((T, T))
        xi[: self.xi.shape[0], : self.xi.shape[1]] = self.xi
        eta = np.zeros((max(T, self.eta.shape[0]),) * 2)
        eta[: self.eta.shape[0], : self.eta.shape[1]] = self.eta
        return SEState(np.array(self.mu), self.Sigma.copy(), b, self.Sbar.copy(), xi, eta, self.delta)


def glm_amp_se(prior_tv: JointPrior, channel: Channel, side_wu: JointPrior | None, f_steps, g_steps,
               delta: float, t_max: int, rule: QuadratureRule | None = None,
               cfg: EngineConfig | None = None) -> SEState:
    """GLM state evolution through f_0..f_{T-1} and g_1..g_T (g_steps[i] is g_{i+1}).

    Each f_steps[t] / g_steps[i] is a tuple of Terms.
    """
    if t_max < 1:
        raise InvalidArgument("t_max must be at least 1")
    if len(f_steps) < t_max or len(g_steps) < t_max - 1:
        raise InvalidArgument("not enough nonlinearities for t_max")
    cfg = cfg or EngineConfig(rule=rule or gauss_hermite())
    se = GLMSE(prior_tv, channel, side_wu, delta, cfg)
    for t in range(t_max):
        if t > 0:
            se.add_g(g_steps[t - 1])
        se.add_f(f_steps[t])
    if len(g_steps) >= t_max:
        se.add_g(g_steps[t_max - 1])
    return se.state()


# ------------------------------------------------------------------ optimality recursions

def gamma_recursion(prior: JointPrior, t_max: int, rule: QuadratureRule | None = None) -> LowerBoundSeq:
    """γ_0 = 0, γ_{s+1}² = E[Θ²] − mmse(γ_s)."""
    if t_max < 0:
        raise InvalidArgument("t_max must be non-negative")
    rule = rule or gauss_hermite()
    m2 = second_moment(prior)
    gam = [0.0]
    mm = []
    for s in range(t_max + 1):
        mm.append(mmse(prior, gam[s], rule))
        if s < t_max:
            gam.append(math.sqrt(max(m2 - mm[s], 0.0)))
    mm = np.array(mm)
    corr = np.sqrt(np.clip(1.0 - mm / m2, 0.0, 1.0)) if m2 > 0 else np.zeros_like(mm)
    return LowerBoundSeq("rank_one", mm, corr, m2, gamma=np.array(gam))


def glm_beta_recursion(prior_tv: JointPrior, channel: Channel, side_wu: JointPrior | None, delta: float,
                       t_max: int, rule: QuadratureRule | None = None) -> LowerBoundSeq:
    """(β_s, σ_s, σ̃_s), s = 1..t_max, with σ_1² = E[Θ²]/δ and σ̃_1 = 0."""
    if delta <= 0:
        raise InvalidArgument("delta must be positive")
    if t_max < 1:
        raise InvalidArgument("t_max must be at least 1")
    rule = rule or gauss_hermite()
    m2 = second_moment(prior_tv)
    s2, st2 = m2 / delta, 0.0
    beta, sig, sigt, mm, corr = [], [], [], [], []
    truncated = False
    for s in range(1, t_max + 1):
        sigma, sigma_t = math.sqrt(s2), math.sqrt(st2)
        if sigma < SIGMA_FLOOR:
            # numerically perfect recovery; remaining steps are pinned at the limit
            truncated = True
            for _ in range(s, t_max + 1):
                beta.append(math.inf)
                sig.append(0.0)
                sigt.append(math.sqrt(m2 / delta))
                mm.append(0.0)
                corr.append(1.0)
            break
        info = channel_information(channel, sigma, sigma_t, side_wu, rule)
        b = math.sqrt(max(info, 0.0)) / sigma
        m = mmse(prior_tv, b, rule)
        beta.append(b)
        sig.append(sigma)
        sigt.append(sigma_t)
        mm.append(m)
        corr.append(math.sqrt(max(0.0, 1.0 - m / m2)) if m2 > 0 else 0.0)
        s2, st2 = m / delta, max(m2 - m, 0.0) / delta
    return LowerBoundSeq("glm", np.array(mm), np.array(corr), m2, beta=np.array(beta), sigma=np.array(sig),
                         sigma_tilde=np.array(sigt), delta=float(delta), truncated=truncated)


@dataclass(frozen=True)
class MonotonicityReport:
    grid: np.ndarray
    values: np.ndarray
    max_violation: float
    monotone: bool


def beta_monotonicity_check(channel: Channel, side_wu: JointPrior | None, omega0_sq: float, grid,
                            rule: QuadratureRule | None = None, tol: float = 1e-9) -> MonotonicityReport:
    """a ↦ E[E[Z0 | h(aZ0 + sqrt(ω0² − a²)Z1, W), U, Z1]²]/a² on an ascending grid."""
    grid = np.asarray(grid, dtype=float)
    if omega0_sq <= 0:
        raise InvalidArgument("omega0_sq must be positive")
    if np.any(np.diff(grid) <= 0):
        raise InvalidArgument("grid must be strictly ascending")
    if grid.size and (grid[0] <= 0 or grid[-1] > math.sqrt(omega0_sq) * (1 + 1e-12)):
        raise InvalidArgument("grid must lie in (0, omega0]")
    vals = np.array([
        channel_information(channel, a, math.sqrt(max(omega0_sq - a * a, 0.0)), side_wu, rule) / a**2
        for a in grid
    ])
    viol = float(np.max(np.diff(vals), initial=0.0))
    viol = max(viol, 0.0)
    return MonotonicityReport(grid, vals, viol, viol <= tol)
