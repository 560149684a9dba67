import math

import numpy as np
import pytest

from gfomkit.amp_engine import run_glm_amp, sample_glm
from gfomkit.errors import InvalidArgument, SEDegenerateError
from gfomkit.priors import Channel, JointPrior, mmse, second_moment
from gfomkit.scalar_kit import gauss_hermite
from gfomkit.state_evolution import (
    DenoiserSpec,
    Term,
    amp_se,
    beta_monotonicity_check,
    gamma_recursion,
    glm_amp_se,
    glm_beta_recursion,
    onsager_coeffs,
    psd_sqrt,
)


def ident(s):
    return Term(lambda x, u: x[..., 0], (s,), lambda x, u: np.ones_like(x))


def const(c):
    return Term(lambda x, u: np.full(np.shape(u), c))


U = Term(lambda x, u: u)


# ---------------------------------------------------------------- gamma recursion

@pytest.mark.parametrize("prior", [JointPrior.gaussian(0.0), JointPrior.rademacher()])
def test_gamma_zero_without_side_info(prior):
    lb = gamma_recursion(prior, 8)
    np.testing.assert_array_equal(lb.gamma, 0.0)
    np.testing.assert_allclose(lb.mmse_curve, 1.0, atol=1e-14)


def test_gamma_gaussian_first_steps():
    a = 0.6
    lb = gamma_recursion(JointPrior.gaussian(a), 3)
    assert lb.gamma[1] ** 2 == pytest.approx(a * a, abs=1e-14)
    g1 = lb.gamma[1] ** 2
    # Gaussian conjugacy with the side channel folded in
    assert lb.gamma[2] ** 2 == pytest.approx(1 - (1 - a * a) / (1 + g1 * (1 - a * a)), abs=1e-13)


def test_gamma_nondecreasing_and_consistent():
    prior = JointPrior.rademacher(0.4)
    lb = gamma_recursion(prior, 10)
    assert np.all(np.diff(lb.gamma) >= -1e-15)
    for s in range(10):
        assert lb.gamma[s + 1] ** 2 == pytest.approx(1.0 - mmse(prior, lb.gamma[s]), abs=1e-14)
    np.testing.assert_allclose(lb.optimal_correlation, np.sqrt(1 - lb.mmse_curve), atol=1e-14)


def test_gamma_negative_t():
    with pytest.raises(InvalidArgument):
        gamma_recursion(JointPrior.rademacher(), -1)


# ---------------------------------------------------------------- symmetric SE

def test_se_prior_moments():
    se = amp_se(JointPrior.gaussian(1.0), DenoiserSpec.from_terms([(U,)]), 1)
    assert se.mu[0] == pytest.approx(1.0, abs=1e-13)
    assert se.Sigma[0, 0] == pytest.approx(1.0, abs=1e-13)


def test_se_zero_denoisers():
    spec = DenoiserSpec.linear([(0.0,), (0.0, 0.0), (0.0, 0.0, 0.0)])
    se = amp_se(JointPrior.rademacher(0.5), spec, 3)
    np.testing.assert_array_equal(se.mu, 0.0)
    np.testing.assert_array_equal(se.Sigma, 0.0)


def test_se_linear_denoisers_by_hand():
    # f_0 = u, f_1 = x_1: a¹ ~ μ1Θ + N(0, Σ11), μ2 = μ1, Σ12 = E[U a¹] = aμ1, Σ22 = μ1² + Σ11
    a = 0.5
    se = amp_se(JointPrior.rademacher(a), DenoiserSpec.linear([(1.0,), (0.0, 1.0)]), 2)
    assert se.mu == pytest.approx([a, a], abs=1e-13)
    assert se.Sigma[0, 1] == pytest.approx(a * a, abs=1e-13)
    assert se.Sigma[1, 1] == pytest.approx(a * a + 1.0, abs=1e-13)


def test_onsager_identity_and_constant():
    spec = DenoiserSpec.from_terms([(U,), (ident(1),), (ident(2),), (ident(3),)])
    se = amp_se(JointPrior.rademacher(0.5), spec, 3, cfg=None)
    np.testing.assert_allclose(se.b[:2, :2], np.eye(2), atol=1e-12)
    spec = DenoiserSpec.from_terms([(U,), (const(0.3),), (const(-1.0),)])
    se = amp_se(JointPrior.rademacher(0.5), spec, 3)
    np.testing.assert_array_equal(se.b, 0.0)


def test_onsager_tanh_analytic_vs_fd():
    g = 0.8
    prior = JointPrior.rademacher()
    th = Term(lambda x, u: np.tanh(g * x[..., 0]), (1,), lambda x, u: (g / np.cosh(g * x[..., 0]) ** 2)[..., None])
    th2 = Term(th.func, (2,), th.grad)
    spec = DenoiserSpec.from_terms([(Term(lambda x, u: np.ones_like(u)),), (th,), (th2,)])
    rule = gauss_hermite(64)
    se = amp_se(prior, spec, 3, rule)
    # b_{1,1} = g E[sech²(g(μ1Θ + √Σ11 G))] with Θ = ±1 symmetric
    mu, s = se.mu[0], math.sqrt(se.Sigma[0, 0])
    oracle = g * float(rule.weights @ (1.0 / np.cosh(g * (mu + s * rule.nodes)) ** 2))
    assert se.b[0, 0] == pytest.approx(oracle, abs=1e-12)
    fd = onsager_coeffs(se, spec, prior, rule, method="fd")
    np.testing.assert_allclose(se.b, fd, atol=1e-6)


def test_denoiser_spec_rejects_future_iterates():
    with pytest.raises(InvalidArgument):
        DenoiserSpec.from_terms([(ident(1),)])


def test_psd_sqrt_and_degenerate():
    C = np.array([[2.0, 1.0], [1.0, 2.0]])
    R = psd_sqrt(C)
    np.testing.assert_allclose(R @ R.T, C, atol=1e-14)
    np.testing.assert_allclose(psd_sqrt(np.zeros((2, 2))), 0.0)
    with pytest.raises(SEDegenerateError):
        psd_sqrt(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_se_many_dims_uses_qmc_and_stays_consistent():
    # f_t depends on all past iterates: 5-dim expectations take the QMC path
    prior = JointPrior.rademacher(0.5)
    spec = DenoiserSpec.linear([(1.0,), (0.2, 0.5), (0.1, 0.3, 0.4), (0.0, 0.2, 0.2, 0.2), (0.0, 0.1, 0.1, 0.1, 0.1)])
    se = amp_se(prior, spec, 5)
    assert np.all(np.linalg.eigvalsh(se.Sigma) > -1e-9)
    # linear maps of Gaussians: μ_{t+1} = c_u a + Σ_s c_s μ_s
    mu = [0.5]
    for c in [(0.2, 0.5), (0.1, 0.3, 0.4), (0.0, 0.2, 0.2, 0.2), (0.0, 0.1, 0.1, 0.1, 0.1)]:
        mu.append(c[0] * 0.5 + sum(ci * m for ci, m in zip(c[1:], mu)))
    np.testing.assert_allclose(se.mu, mu, atol=1e-3)


# ---------------------------------------------------------------- GLM SE

def fy(c):
    return Term(lambda x, y, u: c * y)


def ftanh(c, s):
    return Term(lambda x, y, u: np.tanh(c * x[..., 0]), (s,), lambda x, y, u: (c / np.cosh(c * x[..., 0]) ** 2)[..., None])


def glin(s, c=1.0):
    return Term(lambda x, v: c * x[..., 0], (s,), lambda x, v: np.full(x.shape, c))


def test_glm_g_zero_rows():
    zero_g = Term(lambda x, v: np.zeros(np.shape(v)))
    se = glm_amp_se(JointPrior.rademacher(), Channel.linear(0.5), None, [(fy(1.0),), (fy(1.0),)],
                    [(zero_g,), (zero_g,)], 2.0, 2)
    assert se.Sigma_bar[0, 0] == pytest.approx(0.5)
    np.testing.assert_allclose(se.Sigma_bar[1:, :], 0.0, atol=1e-15)


def test_glm_f_zero():
    zero_f = Term(lambda x, y, u: np.zeros(np.shape(y)))
    se = glm_amp_se(JointPrior.gaussian(), Channel.squared(), None, [(zero_f,), (zero_f,)], [(glin(1),)], 1.5, 2)
    np.testing.assert_allclose(se.mu, 0.0, atol=1e-12)
    np.testing.assert_allclose(se.Sigma, 0.0, atol=1e-15)


def test_glm_linear_by_hand():
    # y = Ḡ0 + τW, f_0 = y, g_1 = b, f_1 = y − a¹
    tau, delta = 0.5, 2.0
    m2 = 1.0
    f_steps = [(fy(1.0),), (fy(1.0), Term(lambda x, y, u: -x[..., 0], (1,), lambda x, y, u: -np.ones_like(x)))]
    se = glm_amp_se(JointPrior.rademacher(), Channel.linear(tau), None, f_steps, [(glin(1),)], delta, 2)
    mu1 = 1.0
    S11 = m2 / delta + tau**2
    assert se.mu[0] == pytest.approx(mu1, abs=1e-8)
    assert se.Sigma[0, 0] == pytest.approx(S11, abs=1e-12)
    Sb01 = mu1 * m2 / delta
    Sb11 = (mu1**2 * m2 + S11) / delta
    assert se.Sigma_bar[0, 1] == pytest.approx(Sb01, abs=1e-12)
    assert se.Sigma_bar[1, 1] == pytest.approx(Sb11, abs=1e-12)
    assert se.eta[0, 0] == pytest.approx(1.0 / delta, abs=1e-8)
    assert se.xi[0, 0] == pytest.approx(-1.0, abs=1e-8)
    # f_1 = Ḡ0 + τW − a¹
    assert se.mu[1] == pytest.approx(1.0, abs=1e-8)
    S22 = m2 / delta + tau**2 - 2 * Sb01 + Sb11
    assert se.Sigma[1, 1] == pytest.approx(S22, abs=1e-12)
    assert se.Sigma[0, 1] == pytest.approx(m2 / delta + tau**2 - Sb01, abs=1e-12)


def _glm_steps():
    f_steps = [(fy(0.8),), (fy(0.8), ftanh(1.0, 1)),
               (fy(0.8), ftanh(0.7, 2), Term(lambda x, y, u: 0.2 * x[..., 0], (1,), lambda x, y, u: np.full(x.shape, 0.2)))]
    g_steps = [(glin(1),),
               (Term(lambda x, v: np.tanh(x[..., 0]), (2,), lambda x, v: (1 / np.cosh(x[..., 0]) ** 2)[..., None]),),
               (glin(2, 0.5), glin(3, 0.3))]
    return f_steps, g_steps


def test_glm_amp_matches_direct_arithmetic():
    f_steps, g_steps = _glm_steps()
    se = glm_amp_se(JointPrior.rademacher(), Channel.linear(0.5), None, f_steps, g_steps, 2.0, 3)
    s = sample_glm(JointPrior.rademacher(), None, Channel.linear(0.5), 8, 4, seed=3)
    run = run_glm_amp(s, f_steps, g_steps, se, 3)
    X, y = s.X, s.y
    f = [lambda A: 0.8 * y,
         lambda A: 0.8 * y + np.tanh(A[0]),
         lambda A: 0.8 * y + np.tanh(0.7 * A[1]) + 0.2 * A[0]]
    g = [lambda B: B[0], lambda B: np.tanh(B[1]), lambda B: 0.5 * B[1] + 0.3 * B[2]]
    A, B, F, G = [], [], [], []
    for k in range(3):
        F.append(f[k](A))
        b = X.T @ F[k] - sum(se.xi[k - 1, s_ - 1] * G[s_ - 1] for s_ in range(1, k + 1))
        B.append(b)
        G.append(g[k](B))
        a = X @ G[k] - sum(se.eta[k, s_ - 1] * F[s_ - 1] for s_ in range(1, k + 2))
        A.append(a)
    for k in range(3):
        np.testing.assert_allclose(run.b_iterates[k], B[k], atol=1e-13)
        np.testing.assert_allclose(run.iterates[k], A[k], atol=1e-13)
        assert run.b_iterates[k].shape == (4,) and run.iterates[k].shape == (8,)


def test_glm_amp_empirical_matches_se():
    f_steps, g_steps = _glm_steps()
    prior = JointPrior.rademacher()
    ch = Channel.linear(0.5)
    n, d = 6000, 3000
    se = glm_amp_se(prior, ch, None, f_steps, g_steps, n / d, 3, gauss_hermite(40))
    M, BB, AA = [], [], []
    for seed in range(4):
        s = sample_glm(prior, None, ch, n, d, seed=seed)
        run = run_glm_amp(s, f_steps, g_steps, se, 3)
        B, A = np.array(run.b_iterates), np.vstack([s.X @ s.theta, np.array(run.iterates)])
        M.append(B @ s.theta / d)
        BB.append(B @ B.T / d - np.outer(se.mu, se.mu))
        AA.append(A @ A.T / n)
    np.testing.assert_allclose(np.mean(M, 0), se.mu, atol=0.05)
    np.testing.assert_allclose(np.mean(BB, 0), se.Sigma, atol=0.05)
    np.testing.assert_allclose(np.mean(AA, 0), se.Sigma_bar, atol=0.05)


# ---------------------------------------------------------------- beta recursion

def test_beta_zero_squared_no_side():
    lb = glm_beta_recursion(JointPrior.gaussian(0.0), Channel.squared(), None, 2.5, 10)
    np.testing.assert_array_equal(lb.beta, 0.0)
    np.testing.assert_allclose(lb.optimal_correlation, 0.0, atol=1e-12)


def test_beta_linear_noiseless_first_step():
    delta = 2.0
    lb = glm_beta_recursion(JointPrior.rademacher(), Channel.linear(0.0), None, delta, 1)
    assert lb.sigma[0] == pytest.approx(math.sqrt(1.0 / delta))
    assert lb.beta[0] == pytest.approx(math.sqrt(delta), abs=1e-12)


def test_beta_phase_retrieval_increasing():
    lb = glm_beta_recursion(JointPrior.gaussian(0.8749), Channel.squared(), None, 2.5, 30)
    finite = lb.beta[np.isfinite(lb.beta)]
    assert np.all(np.diff(finite) > 0)
    assert np.all(np.diff(lb.optimal_correlation) >= 0)
    assert lb.optimal_correlation[0] == pytest.approx(0.8749, abs=1e-12)


def test_beta_truncates_on_perfect_recovery():
    lb = glm_beta_recursion(JointPrior.rademacher(), Channel.linear(0.0), None, 2.0, 12)
    assert lb.truncated
    k = int(np.argmax(~np.isfinite(lb.beta)))
    assert k > 0 and np.all(np.isinf(lb.beta[k:]))
    np.testing.assert_array_equal(lb.sigma[k:], 0.0)
    np.testing.assert_array_equal(lb.optimal_correlation[k:], 1.0)


def test_beta_recursion_definitions():
    prior = JointPrior.rademacher()
    lb = glm_beta_recursion(prior, Channel.linear(1.0), None, 1.5, 5)
    m2 = second_moment(prior)
    assert lb.sigma[0] ** 2 == pytest.approx(m2 / 1.5)
    assert lb.sigma_tilde[0] == 0.0
    for s in range(4):
        assert lb.sigma[s + 1] ** 2 == pytest.approx(lb.mmse_curve[s] / 1.5, abs=1e-13)
        assert lb.sigma_tilde[s + 1] ** 2 == pytest.approx((m2 - lb.mmse_curve[s]) / 1.5, abs=1e-13)


def test_monotonicity_examples():
    grid = np.linspace(0.2, 1.0, 9)
    rep = beta_monotonicity_check(Channel.linear(1.0), None, 1.0, grid)
    assert rep.monotone and np.all(np.diff(rep.values) < 0)
    rep = beta_monotonicity_check(Channel.squared(), None, 1.0, np.linspace(0.05, 1.0, 40))
    assert rep.monotone and rep.max_violation <= 1e-9
    rep = beta_monotonicity_check(Channel.squared(), None, 1.0, [0.5])
    assert rep.monotone
    with pytest.raises(InvalidArgument):
        beta_monotonicity_check(Channel.squared(), None, 1.0, [0.5, 1.5])
