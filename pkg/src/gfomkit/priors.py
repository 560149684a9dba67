"""Scalar joint laws, posterior-mean denoisers and scalar channels."""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import expit, logsumexp

from .errors import InvalidArgument, InvalidObservation
from .scalar_kit import QuadratureRule, gauss_hermite

KINDS = (
    "gaussian_with_overlap",
    "rademacher_no_side",
    "rademacher_with_overlap",
    "sparse_two_point",
    "discrete_grid",
)


@dataclass(frozen=True)
class JointPrior:
    """Law of one coordinate (Θ, U): signal plus side information.

    For the overlap kinds U = aΘ + sqrt(1-a²) G' with G' ~ N(0,1) independent.
    For discrete_grid, `atoms` holds (θ, u, mass) triples.
    """

    kind: str
    a: float = 0.0
    p: float = 1.0
    atoms: tuple = field(default=())

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown prior kind {self.kind!r}")
        if self.kind in ("gaussian_with_overlap", "rademacher_with_overlap"):
            if not 0.0 <= self.a <= 1.0:
                raise InvalidArgument(f"overlap a must lie in [0, 1], got {self.a}")
        if self.kind == "sparse_two_point" and not 0.0 < self.p <= 1.0:
            raise InvalidArgument(f"sparsity p must lie in (0, 1], got {self.p}")
        if self.kind == "discrete_grid":
            if len(self.atoms) == 0:
                raise InvalidArgument("discrete_grid needs at least one atom")
            atoms = tuple((float(t), float(u), float(m)) for t, u, m in self.atoms)
            masses = np.array([m for _, _, m in atoms])
            if np.any(masses < 0) or abs(masses.sum() - 1.0) > 1e-12:
                raise InvalidArgument("discrete_grid masses must be non-negative and sum to 1")
            object.__setattr__(self, "atoms", atoms)

    # constructors
    @classmethod
    def gaussian(cls, a=0.0):
        return cls("gaussian_with_overlap", a=float(a))

    @classmethod
    def rademacher(cls, a=None):
        if a is None:
            return cls("rademacher_no_side")
        return cls("rademacher_with_overlap", a=float(a))

    @classmethod
    def sparse(cls, p):
        return cls("sparse_two_point", p=float(p))

    @classmethod
    def discrete(cls, atoms):
        return cls("discrete_grid", atoms=tuple(atoms))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind")
        allowed = {"a", "p", "atoms"}
        extra = set(d) - allowed
        if extra:
            raise InvalidArgument(f"unknown prior keys {sorted(extra)}")
        if "atoms" in d:
            d["atoms"] = tuple(tuple(x) for x in d["atoms"])
        return cls(kind, **d)

    @property
    def has_side_info(self):
        if self.kind in ("gaussian_with_overlap", "rademacher_with_overlap"):
            return self.a > 0
        if self.kind == "discrete_grid":
            return len({u for _, u, _ in self.atoms}) > 1
        return False

    @property
    def side_precision(self):
        """Extra Gaussian-channel SNR² contributed by U (overlap kinds)."""
        if self.a >= 1.0:
            return math.inf
        return self.a**2 / (1.0 - self.a**2)

    def nodes(self, rule: QuadratureRule | None = None):
        """Quadrature/atomic representation: arrays (θ, u, weight)."""
        rule = rule or gauss_hermite()
        z, w = rule.nodes, rule.weights
        if self.kind == "gaussian_with_overlap":
            th = np.repeat(z, z.size)
            g = np.tile(z, z.size)
            wt = np.outer(w, w).ravel()
            if self.a == 0.0:
                return z.copy(), np.zeros_like(z), w.copy()
            u = self.a * th + math.sqrt(max(1.0 - self.a**2, 0.0)) * g
            return th, u, wt
        if self.kind == "rademacher_no_side":
            return np.array([-1.0, 1.0]), np.zeros(2), np.array([0.5, 0.5])
        if self.kind == "rademacher_with_overlap":
            th = np.repeat([-1.0, 1.0], z.size)
            g = np.tile(z, 2)
            wt = 0.5 * np.tile(w, 2)
            if self.a >= 1.0:
                return np.array([-1.0, 1.0]), np.array([-1.0, 1.0]), np.array([0.5, 0.5])
            return th, self.a * th + math.sqrt(1.0 - self.a**2) * g, wt
        if self.kind == "sparse_two_point":
            return np.array([0.0, 1.0 / math.sqrt(self.p)]), np.zeros(2), np.array([1.0 - self.p, self.p])
        arr = np.array(self.atoms, dtype=float)
        return arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy()

    def sample(self, rng: np.random.Generator, n: int):
        """Draw n iid pairs (θ_i, u_i)."""
        if self.kind == "gaussian_with_overlap":
            th = rng.standard_normal(n)
            g = rng.standard_normal(n)
            return th, self.a * th + math.sqrt(max(1.0 - self.a**2, 0.0)) * g
        if self.kind in ("rademacher_no_side", "rademacher_with_overlap"):
            th = rng.choice(np.array([-1.0, 1.0]), size=n)
            if self.kind == "rademacher_no_side":
                return th, np.zeros(n)
            g = rng.standard_normal(n)
            return th, self.a * th + math.sqrt(max(1.0 - self.a**2, 0.0)) * g
        if self.kind == "sparse_two_point":
            th = np.where(rng.random(n) < self.p, 1.0 / math.sqrt(self.p), 0.0)
            return th, np.zeros(n)
        arr = np.array(self.atoms, dtype=float)
        idx = rng.choice(len(arr), size=n, p=arr[:, 2])
        return arr[idx, 0], arr[idx, 1]


def second_moment(prior: JointPrior) -> float:
    """E[Θ²]."""
    if prior.kind in ("gaussian_with_overlap", "rademacher_no_side", "rademacher_with_overlap"):
        return 1.0
    if prior.kind == "sparse_two_point":
        return 1.0
    th, _, w = prior.nodes()
    return float(w @ th**2)


def posterior_moments(prior: JointPrior, gamma, y, u=0.0):
    """(E[Θ | γΘ+G=y, U=u], Var[Θ | ...]), elementwise over broadcast (y, u)."""
    if gamma < 0:
        raise InvalidArgument("gamma must be non-negative")
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    y, u = np.broadcast_arrays(y, u)
    kind = prior.kind
    if kind == "gaussian_with_overlap":
        if prior.a >= 1.0:
            return u.copy(), np.zeros_like(u)
        k = prior.side_precision
        prec = 1.0 + gamma**2 + k
        num = gamma * y + (prior.a / (1.0 - prior.a**2)) * u if prior.a > 0 else gamma * y
        return num / prec, np.full_like(y, 1.0 / prec)
    if kind in ("rademacher_no_side", "rademacher_with_overlap"):
        if kind == "rademacher_with_overlap" and prior.a >= 1.0:
            m = np.sign(u)
            return m, np.zeros_like(m)
        field_ = gamma * y
        if kind == "rademacher_with_overlap" and prior.a > 0:
            field_ = field_ + (prior.a / (1.0 - prior.a**2)) * u
        m = np.tanh(field_)
        return m, 1.0 - m**2
    if kind == "sparse_two_point":
        c = 1.0 / math.sqrt(prior.p)
        if prior.p >= 1.0:
            return np.full_like(y, c), np.zeros_like(y)
        logit = math.log(prior.p / (1.0 - prior.p)) + gamma * c * y - 0.5 * gamma**2 * c**2
        pi = expit(logit)
        return c * pi, c**2 * pi * (1.0 - pi)
    # discrete grid: weight atoms consistent with the observed u
    arr = np.array(prior.atoms, dtype=float)
    th, ua, m = arr[:, 0], arr[:, 1], arr[:, 2]
    with np.errstate(divide="ignore"):
        logm = np.log(m)
    match = np.isclose(u[..., None], ua, rtol=0.0, atol=1e-12)
    # an observation off the u-support carries no usable side information
    none = ~np.any(match & (m > 0), axis=-1, keepdims=True)
    match = match | none
    logits = logm + gamma * th * y[..., None] - 0.5 * gamma**2 * th**2
    logits = np.where(match, logits, -np.inf)
    post = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
    mean = post @ th
    var = post @ th**2 - mean**2
    return mean, np.maximum(var, 0.0)


def posterior_mean(prior: JointPrior, gamma, y, u=0.0):
    """E[Θ | γΘ+G = y, U = u]."""
    m, _ = posterior_moments(prior, gamma, y, u)
    return m if m.ndim else float(m)


def mmse(prior: JointPrior, gamma, rule: QuadratureRule | None = None) -> float:
    """E[Θ²] − E[E[Θ | γΘ+G, U]²] by quadrature over G and the prior's nodes."""
    if gamma < 0:
        raise InvalidArgument("gamma must be non-negative")
    rule = rule or gauss_hermite()
    th, u, wp = prior.nodes(rule)
    m2 = second_moment(prior)
    y = gamma * th[:, None] + rule.nodes[None, :]
    pm, _ = posterior_moments(prior, gamma, y, u[:, None])
    val = m2 - float(wp @ (pm**2) @ rule.weights)
    return min(max(val, 0.0), m2)


# ---------------------------------------------------------------- channels

CHANNEL_KINDS = ("squared_noiseless", "linear_gaussian")


@dataclass(frozen=True)
class Channel:
    """Scalar output channel y = h(x, w)."""

    kind: str
    tau: float = 0.0

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise InvalidArgument(f"unknown channel kind {self.kind!r}")
        if self.tau < 0:
            raise InvalidArgument("tau must be non-negative")

    @classmethod
    def squared(cls):
        return cls("squared_noiseless")

    @classmethod
    def linear(cls, tau=0.0):
        return cls("linear_gaussian", float(tau))

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind")
        extra = set(d) - {"tau"}
        if extra:
            raise InvalidArgument(f"unknown channel keys {sorted(extra)}")
        return cls(kind, **d)

    @property
    def uses_noise(self):
        return self.kind == "linear_gaussian" and self.tau > 0

    def h(self, x, w=0.0):
        if self.kind == "squared_noiseless":
            return np.asarray(x) ** 2
        return np.asarray(x) + self.tau * np.asarray(w)


def _side_rho(side: JointPrior | None) -> float:
    if side is None:
        return 0.0
    if side.kind != "gaussian_with_overlap":
        raise InvalidArgument("channel side information must be gaussian_with_overlap or absent")
    return side.a


def channel_posterior_z0(channel: Channel, sigma, sigma_t, y, u=0.0, z1=0.0, side=None):
    """E[Z0 | h(σZ0 + σ̃Z1, W) = y, U = u, Z1 = z1]."""
    if sigma <= 0:
        raise InvalidArgument("sigma must be positive")
    y = np.asarray(y, dtype=float)
    z1 = np.asarray(z1, dtype=float)
    if channel.kind == "squared_noiseless":
        if np.any(y < 0):
            raise InvalidObservation("squared channel observations must be non-negative")
        r = np.sqrt(y)
        m = sigma_t * z1
        # two branches x = ±sqrt(y); closed form of the weighted branch average
        out = (r * np.tanh(r * m / sigma**2) - m) / sigma
        return out if out.ndim else float(out)
    rho = _side_rho(side)
    u = np.asarray(u, dtype=float)
    tau = channel.tau
    out = sigma * (y - sigma_t * z1 - tau * rho * u) / (sigma**2 + tau**2 * (1.0 - rho**2))
    return out if out.ndim else float(out)


# squared-channel information I(ρ) = E[E[Z0|·]²] at σ = 1, σ̃ = ρ.
# With m = ρZ1 and x = Z0 + m ~ N(m, 1), Var(Z0 | ·) = x² sech²(m x), so
# I(ρ) = 1 − E_m E_x[x² sech²(m x)].
_S_GRID = np.linspace(-40.0, 40.0, 1601)
_U_GRID = np.linspace(-14.0, 14.0, 2801)


def _sech2(x):
    e = np.exp(-2.0 * np.abs(x))
    return 4.0 * e / (1.0 + e) ** 2


def _inner_var(m, rule):
    m = np.atleast_1d(np.asarray(m, dtype=float))
    out = np.empty_like(m)
    small = np.abs(m) <= 1.0
    if np.any(small):
        ms = m[small][:, None]
        x = ms + rule.nodes[None, :]
        out[small] = (x**2 * _sech2(ms * x)) @ rule.weights
    if np.any(~small):
        # substitute s = m x; sech² localizes s, trapezoid is spectrally accurate here
        mb = m[~small][:, None]
        hs = _S_GRID[1] - _S_GRID[0]
        x = _S_GRID[None, :] / mb
        dens = np.exp(-0.5 * (x - mb) ** 2) / math.sqrt(2.0 * math.pi)
        out[~small] = (x**2 * _sech2(_S_GRID)[None, :] * dens).sum(axis=1) * hs / np.abs(mb[:, 0])
    return out


def squared_channel_information(rho, rule: QuadratureRule | None = None) -> float:
    """E[E[Z0 | (Z0 + ρZ1)², Z1]²] (scale-free form of the squared channel)."""
    rho = abs(float(rho))
    if rho == 0.0:
        return 0.0
    if rule is None or rule.order < 80:
        rule = gauss_hermite(80)
    # outer integrand has complex singularities near the real axis, which stalls
    # Gauss-Hermite (2e-5 error at ρ = 1, order 80); the trapezoid rule is spectral
    if rho <= 1.0:
        h = _U_GRID[1] - _U_GRID[0]
        dens = np.exp(-0.5 * _U_GRID**2) / math.sqrt(2.0 * math.pi)
        val = 1.0 - float((_inner_var(rho * _U_GRID, rule) * dens).sum() * h)
    else:
        h = _U_GRID[1] - _U_GRID[0]
        dens = np.exp(-0.5 * (_U_GRID / rho) ** 2) / (math.sqrt(2.0 * math.pi) * rho)
        val = 1.0 - float((_inner_var(_U_GRID, rule) * dens).sum() * h)
    return min(max(val, 0.0), 1.0)


def channel_information(channel: Channel, sigma, sigma_t, side=None, rule=None, method="auto") -> float:
    """E[E[Z0 | h(σZ0 + σ̃Z1, W), U, Z1]²].

    method="auto" uses closed forms (linear) or the scale-free integral (squared);
    method="quadrature" uses plain tensor Gauss-Hermite and serves as a cross-check.
    """
    if sigma <= 0:
        raise InvalidArgument("sigma must be positive")
    rho = _side_rho(side)
    if method == "auto":
        if channel.kind == "squared_noiseless":
            return squared_channel_information(sigma_t / sigma, rule)
        return sigma**2 / (sigma**2 + channel.tau**2 * (1.0 - rho**2))
    if method != "quadrature":
        raise InvalidArgument(f"unknown method {method!r}")
    rule = rule or gauss_hermite()
    z, w = rule.nodes, rule.weights
    if channel.kind == "squared_noiseless" or channel.tau == 0.0:
        z0, z1 = np.meshgrid(z, z, indexing="ij")
        y = channel.h(sigma * z0 + sigma_t * z1)
        e = channel_posterior_z0(channel, sigma, sigma_t, y, 0.0, z1)
        return float(w @ (e**2) @ w)
    # linear with noise: W = ρU + sqrt(1−ρ²)W'
    z0, z1, uu, wp = np.meshgrid(z, z, z, z, indexing="ij")
    ww = rho * uu + math.sqrt(1.0 - rho**2) * wp
    y = channel.h(sigma * z0 + sigma_t * z1, ww)
    e = channel_posterior_z0(channel, sigma, sigma_t, y, uu, z1, side=side)
    wt = np.einsum("i,j,k,l->ijkl", w, w, w, w)
    return float(np.sum(wt * e**2))
