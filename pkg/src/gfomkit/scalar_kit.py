"""Gauss-Hermite quadrature against N(0,1), golden-section search and bisection."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import BracketError, InvalidArgument, NumericDomainError

MAX_ORDER = 512
DEFAULT_ORDER = 64
GOLDEN_MAX_ITER = 200
BISECT_MAX_ITER = 200


@dataclass(frozen=True)
class QuadratureRule:
    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)


def _scaled_hermite(x, n):
    """Orthonormal probabilists' Hermite p_{n-1}(x), p_n(x) with a common log-scale.

    Returns (p_prev, p_cur, logscale) so that true values are p * exp(logscale).
    """
    p_prev = np.zeros_like(x)
    p_cur = np.ones_like(x)
    logscale = np.zeros_like(x)
    for k in range(n):
        p_next = (x * p_cur - math.sqrt(k) * p_prev) / math.sqrt(k + 1)
        p_prev, p_cur = p_cur, p_next
        big = np.abs(p_cur) > 1e100
        if np.any(big):
            p_prev = np.where(big, p_prev * 1e-100, p_prev)
            p_cur = np.where(big, p_cur * 1e-100, p_cur)
            logscale = logscale + np.where(big, 100 * math.log(10.0), 0.0)
    return p_prev, p_cur, logscale


@lru_cache(maxsize=32)
def _golub_welsch(order):
    off = np.sqrt(np.arange(1, order, dtype=float))
    x = eigh_tridiagonal(np.zeros(order), off, eigvals_only=True)
    # polish the eigenvalues with Newton on p_n; p_n' = sqrt(n) p_{n-1}
    for _ in range(2):
        p_prev, p_cur, _ = _scaled_hermite(x, order)
        x = x - p_cur / (math.sqrt(order) * p_prev)
    x = np.sort(x)
    x = 0.5 * (x - x[::-1])
    # w_i = 1 / (n p_{n-1}(x_i)^2), evaluated in log space so tails underflow cleanly
    p_prev, _, logscale = _scaled_hermite(x, order)
    logw = -math.log(order) - 2.0 * (np.log(np.abs(p_prev)) + logscale)
    w = np.exp(logw)
    w = 0.5 * (w + w[::-1])
    w = w / w.sum()
    return x, w


def gauss_hermite(order: int = DEFAULT_ORDER) -> QuadratureRule:
    """Probabilists' Gauss-Hermite rule with weights summing to one."""
    if isinstance(order, bool) or int(order) != order or not 1 <= order <= MAX_ORDER:
        raise InvalidArgument(f"quadrature order must be an integer in [1, {MAX_ORDER}], got {order!r}")
    order = int(order)
    if order == 1:
        return QuadratureRule(1, np.zeros(1), np.ones(1))
    x, w = _golub_welsch(order)
    return QuadratureRule(order, x.copy(), w.copy())


def _check_finite(vals, where):
    vals = np.asarray(vals, dtype=float)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise NumericDomainError(f"integrand is not finite at node {where(tuple(idx))}")
    return vals


def expect_1d(f, rule: QuadratureRule) -> float:
    """E[f(Z)], Z ~ N(0,1). `f` is called once on the array of nodes."""
    z = rule.nodes
    vals = np.broadcast_to(f(z), z.shape)
    vals = _check_finite(vals, lambda i: f"z={z[i[0]]!r}")
    return float(rule.weights @ vals)


def expect_2d(f, rule: QuadratureRule) -> float:
    """E[f(Z0, Z1)] for independent standard Gaussians, tensor-product rule."""
    z = rule.nodes
    z0, z1 = np.meshgrid(z, z, indexing="ij")
    vals = np.broadcast_to(f(z0, z1), z0.shape)
    vals = _check_finite(vals, lambda i: f"(z0={z[i[0]]!r}, z1={z[i[1]]!r})")
    return float(rule.weights @ vals @ rule.weights)


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def argmin_scalar(f, lo: float, hi: float, tol: float = 1e-10) -> float:
    """Golden-section search for the minimizer of a unimodal f on [lo, hi]."""
    if not lo < hi:
        raise InvalidArgument(f"need lo < hi, got [{lo}, {hi}]")
    if tol <= 0:
        raise InvalidArgument("tol must be positive")
    a, b = float(lo), float(hi)
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(GOLDEN_MAX_ITER):
        if b - a <= tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        elif fc > fd:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
        else:
            # tie: a unimodal f has its minimizer in [c, d]
            a, b = c, d
            c = b - _INVPHI * (b - a)
            d = a + _INVPHI * (b - a)
            fc, fd = f(c), f(d)
    return 0.5 * (a + b)


def root_bisect(f, lo: float, hi: float, tol: float = 1e-12) -> float:
    """Bisection for a sign change of f on [lo, hi]."""
    a, b = float(lo), float(hi)
    fa, fb = f(a), f(b)
    if fa == 0:
        return a
    if fb == 0:
        return b
    if np.sign(fa) == np.sign(fb):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f(lo)={fa}, f(hi)={fb}")
    for _ in range(BISECT_MAX_ITER):
        if b - a <= tol:
            break
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0:
            return m
        if np.sign(fm) == np.sign(fa):
            a, fa = m, fm
        else:
            b, fb = m, fm
    return 0.5 * (a + b)
