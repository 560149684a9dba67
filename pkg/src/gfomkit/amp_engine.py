"""Finite-n samplers and AMP iterations (symmetric spiked model and GLM)."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence
import math
import zlib

import numpy as np

from .errors import DivergenceError, InvalidArgument
from .priors import Channel, JointPrior, second_moment, squared_channel_information
from .scalar_kit import QuadratureRule, gauss_hermite
from .state_evolution import (
    DenoiserSpec,
    EngineConfig,
    LowerBoundSeq,
    SEState,
    SymmetricSE,
    Term,
    amp_se,
    eval_terms,
    gamma_recursion,
)

DIVERGENCE_FACTOR = 1e6


# ------------------------------------------------------------------ randomness

def make_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator from an int, SeedSequence or Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


def purpose_tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def trial_rng(master_seed: int, trial_index: int, purpose: str = "data") -> np.random.Generator:
    """Independent stream keyed by (master_seed, trial_index, purpose)."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(trial_index), purpose_tag(purpose)))
    return np.random.Generator(np.random.Philox(ss))


def _check_iterate(v, it, scale):
    if not np.all(np.isfinite(v)):
        raise DivergenceError(f"non-finite iterate at iteration {it}", iteration=it)
    nrm = float(np.linalg.norm(v))
    if nrm > DIVERGENCE_FACTOR * math.sqrt(scale):
        raise DivergenceError(f"iterate norm {nrm:.3e} exceeds guard at iteration {it}", iteration=it)


# ------------------------------------------------------------------ samples

@dataclass(frozen=True)
class SpikedSample:
    n: int
    X: np.ndarray
    theta: np.ndarray
    u: np.ndarray
    noise_kind: str
    seed: object = None


def sample_spiked(prior: JointPrior, n: int, noise_kind: str = "gaussian", seed=0) -> SpikedSample:
    """X = θθᵀ/n + W with W symmetric, off-diagonal variance 1/n."""
    if n < 2:
        raise InvalidArgument("n must be at least 2")
    rng = make_rng(seed)
    theta, u = prior.sample(rng, n)
    if noise_kind == "gaussian":
        G = rng.standard_normal((n, n))
        W = (G + G.T) / math.sqrt(2.0 * n)
    elif noise_kind == "rademacher":
        S = rng.choice(np.array([-1.0, 1.0]), size=(n, n))
        W = np.triu(S, 1)
        W = (W + W.T) / math.sqrt(n)
    else:
        raise InvalidArgument(f"unknown noise kind {noise_kind!r}")
    X = np.outer(theta, theta) / n + W
    return SpikedSample(n, X, theta, u, noise_kind, seed)


@dataclass(frozen=True)
class GLMSample:
    n: int
    d: int
    X: np.ndarray
    theta: np.ndarray
    y: np.ndarray
    w: np.ndarray
    u: np.ndarray
    v: np.ndarray
    channel: Channel
    seed: object = None

    @property
    def delta(self):
        return self.n / self.d


def sample_glm(prior_tv: JointPrior, side_wu: JointPrior | None, channel: Channel, n: int, d: int,
               seed=0) -> GLMSample:
    """Design with iid N(0, 1/n) entries, y_i = h(⟨x_i, θ⟩, w_i)."""
    if n < 2 or d < 2:
        raise InvalidArgument("n and d must be at least 2")
    rng = make_rng(seed)
    theta, v = prior_tv.sample(rng, d)
    if side_wu is None:
        w = rng.standard_normal(n) if channel.uses_noise else np.zeros(n)
        u = np.zeros(n)
    else:
        w, u = side_wu.sample(rng, n)
    X = rng.standard_normal((n, d)) / math.sqrt(n)
    y = channel.h(X @ theta, w)
    return GLMSample(n, d, X, theta, y, w, u, v, channel, seed)


# ------------------------------------------------------------------ runs

@dataclass
class AMPRun:
    iterates: list
    estimates: list = field(default_factory=list)
    b_iterates: list = field(default_factory=list)
    overlap: list = field(default_factory=list)
    gram: np.ndarray | None = None
    mse: list = field(default_factory=list)
    correlation: list = field(default_factory=list)
    converged_at: int | None = None

    @property
    def t(self):
        return len(self.iterates)


def correlation(est, theta) -> float:
    """|⟨θ̂, θ⟩| / (‖θ̂‖‖θ‖); a zero estimate has correlation 0."""
    ne = float(np.linalg.norm(est))
    nt = float(np.linalg.norm(theta))
    if ne == 0.0 or nt == 0.0:
        return 0.0
    return min(1.0, abs(float(est @ theta)) / (ne * nt))


def run_amp_symmetric(sample: SpikedSample, denoisers: DenoiserSpec, se: SEState, t: int,
                      estimator: Callable | None = None) -> AMPRun:
    """a^{k+1} = X f_k(a^{≤k}; u) − Σ_{s≤k} b_{k,s} f_{s−1}(a^{≤s−1}; u)."""
    if len(denoisers) < t:
        raise InvalidArgument(f"need f_0..f_{t - 1}")
    if t > 1 and se.b.shape[0] < t - 1:
        raise InvalidArgument("state evolution does not supply Onsager terms through t")
    X, u, n = sample.X, sample.u, sample.n
    iterates, fvals = [], []
    for k in range(t):
        fk = denoisers.apply(k, iterates, u)
        fvals.append(fk)
        a = X @ fk
        for s in range(1, k + 1):
            bks = se.b[k - 1, s - 1]
            if bks != 0.0:
                a = a - bks * fvals[s - 1]
        _check_iterate(a, k + 1, n)
        iterates.append(a)
    run = AMPRun(iterates)
    run.overlap = [float(a @ sample.theta) / n for a in iterates]
    A = np.array(iterates) if iterates else np.zeros((0, n))
    run.gram = A @ A.T / n
    if estimator is not None:
        for k in range(1, t + 1):
            est = estimator(k, iterates[:k], u)
            run.estimates.append(est)
            run.mse.append(float(np.mean((est - sample.theta) ** 2)))
            run.correlation.append(correlation(est, sample.theta))
    return run


@dataclass(frozen=True)
class BayesPlan:
    lb: LowerBoundSeq
    denoisers: DenoiserSpec
    se: SEState


def bayes_plan_symmetric(prior: JointPrior, t: int, rule: QuadratureRule | None = None) -> BayesPlan:
    """γ recursion, posterior-mean denoisers f_0..f_t and their state evolution."""
    rule = rule or gauss_hermite()
    lb = gamma_recursion(prior, t, rule)
    spec = DenoiserSpec.bayes(prior, lb.gamma, t)
    se = amp_se(prior, spec, max(t, 1), rule)
    return BayesPlan(lb, spec, se)


def run_bayes_amp_symmetric(sample: SpikedSample, prior: JointPrior, t: int, rule: QuadratureRule | None = None,
                            plan: BayesPlan | None = None) -> AMPRun:
    """Bayes AMP; θ̂^k is the posterior mean applied to a^k."""
    plan = plan or bayes_plan_symmetric(prior, t, rule)
    spec = plan.denoisers
    return run_amp_symmetric(sample, spec, plan.se, t, estimator=lambda k, its, u: spec.apply(k, its, u))


def run_glm_amp(sample: GLMSample, f_steps, g_steps, se: SEState, t: int) -> AMPRun:
    """Alternating GLM AMP.

    b^{k+1} = Xᵀ f_k(a^{≤k}; y, u) − Σ_{s≤k} ξ_{k,s} g_s(b^{≤s}; v)
    a^k     = X g_k(b^{≤k}; v) − Σ_{s≤k} η_{k,s} f_{s−1}(a^{≤s−1}; y, u)
    g_steps[i] holds g_{i+1}.  Returns a^1..a^t and b^1..b^t.
    """
    if len(f_steps) < t or len(g_steps) < t:
        raise InvalidArgument("need f_0..f_{t-1} and g_1..g_t")
    X, y, u, v = sample.X, sample.y, sample.u, sample.v
    n, d = sample.n, sample.d
    A, B, fv, gv = [], [], [], []
    for k in range(t):
        # b^{k+1}
        fk = eval_terms(f_steps[k], A, y, u)
        fv.append(fk)
        b = X.T @ fk
        for s in range(1, k + 1):
            xi = se.xi[k - 1, s - 1]
            if xi != 0.0:
                b = b - xi * gv[s - 1]
        _check_iterate(b, k + 1, d)
        B.append(b)
        # a^{k+1}
        gk = eval_terms(g_steps[k], B, v)
        gv.append(gk)
        a = X @ gk
        for s in range(1, k + 2):
            eta = se.eta[k, s - 1]
            if eta != 0.0:
                a = a - eta * fv[s - 1]
        _check_iterate(a, k + 1, n)
        A.append(a)
    run = AMPRun(A, b_iterates=B)
    run.overlap = [float(b @ sample.theta) / d for b in B]
    return run


@lru_cache(maxsize=256)
def _cached_information(rho, order):
    return squared_channel_information(rho, gauss_hermite(order))


def _pr_information(rho, rule):
    # the β schedule is deterministic given a_hat, so trials share these integrals
    return _cached_information(float(rho), (rule or gauss_hermite()).order)


def run_bayes_amp_pr(sample: GLMSample, theta0, a_hat: float, t: int, rule: QuadratureRule | None = None,
                     max_iter_guard: bool = True) -> AMPRun:
    """Bayes AMP for noiseless phase retrieval with a standard Gaussian signal.

    Written as GLM AMP with f_0 ≡ 0, g_1 = a_hat·θ⁰ (the posterior mean of Θ
    given the initializer), and memory-free posterior-mean denoisers after:

      response side  f(p, y) = (E[z | p, y] − p)/v,  E[z | p, y] = √y tanh(p√y/v),
                     where z | p ~ N(p, v), v = (1 − q)/δ;
      signal side    g(b) = b/(1 + β²), since b ≈ β²Θ + βZ.

    q is the overlap of the current signal estimate, β² = I(√(q/(1−q)))/v with
    I the squared-channel information, ξ = −β² and η = 1/(δ(1+β²)).
    estimates[k-1] is the estimate after k iterations.
    """
    if sample.channel.kind != "squared_noiseless":
        raise InvalidArgument("Bayes AMP for phase retrieval needs the squared channel")
    if not 0.0 <= a_hat <= 1.0:
        raise InvalidArgument("a_hat must lie in [0, 1]")
    X, y = sample.X, sample.y
    n, d = sample.n, sample.d
    delta = n / d
    sy = np.sqrt(y)
    theta0 = np.asarray(theta0, dtype=float)
    g = a_hat * theta0
    q = a_hat**2
    eta = 0.0
    f_prev = np.zeros(n)
    A, B, est = [], [], []
    run = AMPRun(A, est, B)
    for k in range(1, t + 1):
        vres = (1.0 - q) / delta
        if vres < 1e-12:
            run.converged_at = k - 1
            break
        a = X @ g - eta * f_prev
        _check_iterate(a, k, n)
        f = (sy * np.tanh(a * sy / vres) - a) / vres
        beta2 = _pr_information(math.sqrt(q / (1.0 - q)), rule) / vres
        b = X.T @ f + beta2 * g
        _check_iterate(b, k, d)
        g = b / (1.0 + beta2)
        q = beta2 / (1.0 + beta2)
        eta = 1.0 / (delta * (1.0 + beta2))
        f_prev = f
        A.append(a)
        B.append(b)
        est.append(g.copy())
    # a converged run keeps its last estimate for the remaining iterations
    last = est[-1] if est else a_hat * theta0
    while len(est) < t:
        est.append(last.copy())
    run.correlation = [correlation(e, sample.theta) for e in est]
    run.mse = [float(np.mean((e - sample.theta) ** 2)) for e in est]
    run.overlap = [float(e @ sample.theta) / d for e in est]
    return run


# ------------------------------------------------------------------ empirical vs SE

@dataclass(frozen=True)
class SECheckRow:
    name: str
    empirical: float
    predicted: float
    tol: float

    @property
    def diff(self):
        return self.empirical - self.predicted

    @property
    def ok(self):
        return abs(self.diff) <= self.tol


@dataclass(frozen=True)
class SECheckReport:
    rows: tuple

    @property
    def max_deviation(self):
        return max((abs(r.diff) for r in self.rows), default=0.0)

    @property
    def all_ok(self):
        return all(r.ok for r in self.rows)


def empirical_vs_se(run: AMPRun, sample: SpikedSample, se: SEState, prior: JointPrior,
                    lb: LowerBoundSeq | None = None, tol: float = 0.03) -> SECheckReport:
    """Compare (1/n)Σψ(a_i, θ_i, u_i) with E[ψ(μΘ + G, Θ, U)] for a fixed ψ set.

    ψ ∈ {1, a^t θ, (a^t)², a^s a^t} and, when `lb` is given, (θ̂^t − θ)² against mmse(γ_t).
    """
    n = sample.n
    m2 = second_moment(prior)
    rows = [SECheckRow("one", float(np.mean(np.ones(n))), 1.0, tol)]
    T = min(run.t, se.t_max)
    for t in range(1, T + 1):
        a = run.iterates[t - 1]
        rows.append(SECheckRow(f"overlap_{t}", float(a @ sample.theta) / n, float(se.mu[t - 1]), tol))
        rows.append(SECheckRow(f"second_moment_{t}", float(a @ a) / n,
                               float(se.mu[t - 1] ** 2 * m2 + se.Sigma[t - 1, t - 1]), tol))
        for s in range(1, t):
            b = run.iterates[s - 1]
            rows.append(SECheckRow(f"inner_{s}_{t}", float(a @ b) / n,
                                   float(se.mu[s - 1] * se.mu[t - 1] * m2 + se.Sigma[s - 1, t - 1]), tol))
    if lb is not None:
        for t, m in enumerate(run.mse[:T], start=1):
            rows.append(SECheckRow(f"sq_error_{t}", m, float(lb.mmse_curve[t]), tol))
    return SECheckReport(tuple(rows))


# ------------------------------------------------------------------ GFOM reduction

@dataclass(frozen=True)
class GFOM:
    """u^{t+1} = X F_t(u^{≤t}; u) + G_t(u^{≤t}; u); F[t], G[t] act entrywise on (list, u)."""

    F: tuple
    G: tuple


def run_gfom(sample: SpikedSample, gfom: GFOM, t: int):
    us = []
    for k in range(t):
        us.append(sample.X @ gfom.F[k](us, sample.u) + gfom.G[k](us, sample.u))
    return us


@dataclass
class GFOMReduction:
    denoisers: DenoiserSpec
    se: SEState
    phi: Callable

    def recover(self, iterates, u):
        return self.phi(len(iterates), iterates, u)


def gfom_to_amp(gfom: GFOM, prior: JointPrior, t: int, rule: QuadratureRule | None = None) -> GFOMReduction:
    """Rewrite a GFOM as AMP: f_k = F_k ∘ φ_k, with φ the change of variables

    u^{k+1} = a^{k+1} + Σ_{s≤k} b_{k,s} f_{s−1}(a^{≤s−1}; u) + G_k(φ_k(a^{≤k}); u).
    """
    cfg = EngineConfig(rule=rule or gauss_hermite())
    se = SymmetricSE(prior, cfg)
    f_funcs = []

    def phi(k, a_list, u):
        us = []
        for j in range(k):
            val = a_list[j] + gfom.G[j](us, u)
            for s in range(1, j + 1):
                val = val + se.b[j - 1, s - 1] * f_funcs[s - 1](a_list[: s - 1], u)
            us.append(val)
        return us

    def make_f(k):
        def f(a_list, u):
            return gfom.F[k](phi(k, a_list, u), u)
        return f

    steps = []
    for k in range(t):
        f = make_f(k)
        f_funcs.append(f)
        term = Term(lambda x, u, f=f, k=k: f([x[..., j] for j in range(k)], u), tuple(range(1, k + 1)))
        steps.append((term,))
        se.add((term,))
    spec = DenoiserSpec.from_terms(steps, kind="gfom")
    return GFOMReduction(spec, se.state(), phi)
