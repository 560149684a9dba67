"""Monte-Carlo orchestration, configuration and result persistence."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, fields
import json
import math
from pathlib import Path
import time

import numpy as np

from .amp_engine import (
    correlation,
    make_rng,
    run_bayes_amp_pr,
    run_bayes_amp_symmetric,
    bayes_plan_symmetric,
    sample_glm,
    sample_spiked,
    trial_rng,
)
from .errors import ConfigError, DivergenceError
from .oamp import orthogonalize, verify_alpha_bound
from .phase_retrieval import (
    AlgoParams,
    grad_descent_step,
    one_step_prox_linear,
    operator_norm,
    prox_linear_step,
    spectral_init,
    spectral_overlap_theory,
    taf_step,
)
from .priors import Channel, JointPrior
from .scalar_kit import gauss_hermite
from .state_evolution import DenoiserSpec, EngineConfig, SymmetricSE, gamma_recursion, glm_beta_recursion

ALGORITHMS = ("bayes_amp", "gd", "one_step_prox_linear", "prox_linear", "taf")
EXPERIMENT_KINDS = ("pr_bench", "step_sweep", "se_check", "lower_bound", "spectral_theory", "oamp_fuzz")
# which AlgoParams field a step sweep varies for each algorithm
SWEEP_PARAM = {"gd": "eta", "one_step_prox_linear": "xi", "taf": "alpha_taf"}
_ALGO_PARAM_KEYS = {f.name for f in fields(AlgoParams)}


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class AlgoSpec:
    name: str
    params: AlgoParams = field(default_factory=AlgoParams)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        name = d.pop("name", None)
        if name not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")
        extra = set(d) - _ALGO_PARAM_KEYS
        if extra:
            raise ConfigError(f"unknown parameters {sorted(extra)} for algorithm {name}")
        return cls(name, AlgoParams(**d))

    def to_dict(self):
        out = {"name": self.name}
        out.update({k: v for k, v in asdict(self.params).items()})
        return out


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    n: int = 1000
    d: int = 400
    trials: int = 50
    t_max: int = 10
    master_seed: int = 0
    algorithms: tuple = ()
    prior: dict | None = None
    channel: dict | None = None
    quadrature_order: int = 64
    output: str | None = None
    epsilon: float = 1e-3
    workers: int = 1
    sweep: dict | None = None
    delta: float | None = None
    noise: str = "gaussian"
    record_wall_clock: bool = False
    fuzz_specs: int = 100
    fuzz_degree: int = 3

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.n < 2 or self.d < 2:
            raise ConfigError("n and d must be at least 2")
        if self.t_max < 0:
            raise ConfigError("t_max must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        algos = tuple(a if isinstance(a, AlgoSpec) else AlgoSpec.from_dict(a) for a in self.algorithms)
        object.__setattr__(self, "algorithms", algos)
        if self.sweep is not None:
            for name, grid in self.sweep.items():
                if name not in SWEEP_PARAM:
                    raise ConfigError(f"cannot sweep algorithm {name!r}; sweepable: {sorted(SWEEP_PARAM)}")
                extra = set(grid) - {"lo", "hi", "points", "values"}
                if extra:
                    raise ConfigError(f"unknown sweep keys {sorted(extra)} for {name}")

    @property
    def delta_eff(self):
        return self.delta if self.delta is not None else self.n / self.d

    @classmethod
    def from_dict(cls, d, kind=None):
        d = dict(d)
        allowed = {f.name for f in fields(cls)}
        extra = set(d) - allowed
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        if kind is not None:
            if d.get("kind", kind) != kind:
                raise ConfigError(f"config kind {d['kind']!r} does not match subcommand {kind!r}")
            d["kind"] = kind
        if "kind" not in d:
            raise ConfigError("config needs a 'kind'")
        d["algorithms"] = tuple(d.get("algorithms", ()))
        return cls(**d)

    @classmethod
    def from_json(cls, path, kind=None):
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data, kind)

    def replace(self, **kw):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return ExperimentConfig(**d)


# ------------------------------------------------------------------ records

@dataclass(frozen=True)
class TrialRecord:
    algo: str
    n: int
    d: int
    delta: float
    trial_index: int
    iter: int
    correlation: float
    mse: float
    wall_ms: float
    status: str = "ok"


@dataclass(frozen=True)
class SweepRecord:
    algo: str
    step: float
    n: int
    d: int
    delta: float
    trial_index: int
    iter: int
    correlation: float
    mse: float
    status: str = "ok"


@dataclass
class ExperimentResult:
    records: list
    sidecar: dict
    timing: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def _fmt(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def emit_csv(records, path, record_type=None):
    """Header plus one row per record, columns in dataclass field order, LF endings."""
    rtype = record_type or (type(records[0]) if records else TrialRecord)
    names = [f.name for f in fields(rtype)]
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names)
            for r in records:
                w.writerow([_fmt(getattr(r, k)) for k in names])
    except OSError as exc:
        raise OSError(f"cannot write CSV {path}: {exc}") from exc
    return path


def read_csv(path, record_type=TrialRecord):
    types = {f.name: f.type for f in fields(record_type)}
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            kw = {}
            for k, v in row.items():
                t = types[k]
                kw[k] = int(v) if t in ("int", int) else float(v) if t in ("float", float) else v
            out.append(record_type(**kw))
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def emit_json(obj, path):
    path = Path(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_jsonable(obj), fh, indent=2, allow_nan=False)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write JSON {path}: {exc}") from exc
    return path


# ------------------------------------------------------------------ phase retrieval trials

_PR_PRIOR = JointPrior.gaussian(0.0)
_PR_CHANNEL = Channel.squared()
_GUARD = 1e6


def pr_theory(delta, eps, t_max, order=64):
    """Spectral level a and the optimal correlation for iterations 0..t_max.

    Benchmark iteration k is matched with step k+1 of the β recursion, whose
    first step carries only the initializer's information (β_1 = 0).
    """
    rule = gauss_hermite(order)
    th = spectral_overlap_theory(delta, eps)
    lb = glm_beta_recursion(JointPrior.gaussian(th.a), _PR_CHANNEL, None, delta, t_max + 1, rule)
    return {
        "delta": delta,
        "epsilon": eps,
        "a": th.a,
        "lambda_star": th.lambda_star,
        "beta": list(lb.beta),
        "optimal_correlation": list(lb.optimal_correlation),
    }


def _pr_sample(cfg, trial):
    sample = sample_glm(_PR_PRIOR, None, _PR_CHANNEL, cfg.n, cfg.d, seed=trial_rng(cfg.master_seed, trial, "data"))
    theta0, ov = spectral_init(sample, cfg.epsilon)
    return sample, theta0, ov


def _iterate(name, params, sample, theta0, t_max, L=None):
    """Yield (iter, estimate) for a first-order competitor, iteration 0 = initializer."""
    X, y = sample.X, sample.y
    theta = theta0.copy()
    yield 0, theta
    for k in range(1, t_max + 1):
        if name == "gd":
            theta = grad_descent_step(X, y, theta, params.eta, sample.delta)
        elif name == "one_step_prox_linear":
            theta = one_step_prox_linear(X, y, theta, params.xi)
        elif name == "taf":
            theta = taf_step(X, y, theta, params.alpha_taf, params.gamma_taf)
        elif name == "prox_linear":
            theta, _ = prox_linear_step(X, y, theta, L, params, return_info=True)
        else:
            raise ConfigError(f"algorithm {name!r} is not an iterative competitor")
        if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > _GUARD * math.sqrt(sample.d):
            raise DivergenceError(f"{name} diverged at iteration {k}", iteration=k)
        yield k, theta


def _run_algo(name, params, sample, theta0, t_max, a_hat, L=None):
    """Per-iteration (correlation, mse, elapsed_ms, status) for iterations 0..t_max."""
    th = sample.theta
    d = sample.d
    out = []
    t0 = time.perf_counter()
    if name == "bayes_amp":
        out.append((correlation(theta0, th), float(np.mean((theta0 - th) ** 2)), 0.0, "ok"))
        try:
            run = run_bayes_amp_pr(sample, theta0, a_hat, t_max)
            ms = (time.perf_counter() - t0) * 1e3
            for k in range(t_max):
                out.append((run.correlation[k], run.mse[k], ms * (k + 1) / t_max, "ok"))
        except DivergenceError as exc:
            it = exc.iteration or 1
            ms = (time.perf_counter() - t0) * 1e3
            while len(out) <= t_max:
                out.append((0.0, math.nan, ms, "diverged" if len(out) >= it else "ok"))
        return out
    try:
        for k, est in _iterate(name, params, sample, theta0, t_max, L):
            out.append((correlation(est, th), float(np.sum((est - th) ** 2)) / d,
                        (time.perf_counter() - t0) * 1e3, "ok"))
    except DivergenceError:
        ms = (time.perf_counter() - t0) * 1e3
        while len(out) <= t_max:
            out.append((0.0, math.nan, ms, "diverged"))
    return out


def _pr_trial(args):
    cfg, trial, a_hat = args
    sample, theta0, _ = _pr_sample(cfg, trial)
    L = None
    if any(a.name == "prox_linear" for a in cfg.algorithms):
        L = 2.0 * operator_norm(sample.X) ** 2
    rows, timing = [], {}
    for spec in cfg.algorithms:
        L_use = spec.params.L if spec.params.L is not None else L
        res = _run_algo(spec.name, spec.params, sample, theta0, cfg.t_max, a_hat, L_use)
        timing[spec.name] = res[-1][2]
        for k, (c, m, ms, st) in enumerate(res):
            rows.append(TrialRecord(spec.name, cfg.n, cfg.d, cfg.n / cfg.d, trial, k, c, m,
                                    ms if cfg.record_wall_clock else 0.0, st))
    return rows, timing


def _map(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _timing_summary(per_trial):
    out = {}
    for name in per_trial[0] if per_trial else {}:
        v = np.array([t[name] for t in per_trial])
        out[name] = {"mean_ms": float(v.mean()), "std_ms": float(v.std()), "trials": int(v.size)}
    return out


def format_timing(timing) -> str:
    lines = [f"{'algorithm':<22}{'mean ms':>12}{'std ms':>12}{'trials':>8}"]
    for name, t in timing.items():
        lines.append(f"{name:<22}{t['mean_ms']:>12.2f}{t['std_ms']:>12.2f}{t['trials']:>8d}")
    return "\n".join(lines)


def run_pr_bench(cfg: ExperimentConfig) -> ExperimentResult:
    if not cfg.algorithms:
        raise ConfigError("pr_bench needs at least one algorithm")
    theory = pr_theory(cfg.n / cfg.d, cfg.epsilon, cfg.t_max, cfg.quadrature_order)
    jobs = [(cfg, i, theory["a"]) for i in range(cfg.trials)]
    res = _map(_pr_trial, jobs, cfg.workers)
    records = [r for rows, _ in res for r in rows]
    timing = _timing_summary([t for _, t in res])
    summary = {
        "rows_ok": sum(r.status == "ok" for r in records),
        "rows_diverged": sum(r.status == "diverged" for r in records),
    }
    return ExperimentResult(records, theory, timing, summary)


def sweep_grid(spec) -> np.ndarray:
    if "values" in spec:
        return np.asarray(spec["values"], dtype=float)
    return np.geomspace(float(spec["lo"]), float(spec["hi"]), int(spec["points"]))


def _sweep_trial(args):
    cfg, trial = args
    sample, theta0, _ = _pr_sample(cfg, trial)
    rows = []
    for name, spec in cfg.sweep.items():
        for step in sweep_grid(spec):
            params = AlgoParams(**{SWEEP_PARAM[name]: float(step)})
            for k, (c, m, _, st) in enumerate(_run_algo(name, params, sample, theta0, cfg.t_max, 0.0)):
                rows.append(SweepRecord(name, float(step), cfg.n, cfg.d, cfg.n / cfg.d, trial, k, c, m, st))
    return rows


def best_steps(records, t=None):
    """Step with the largest mean correlation at iteration t (default: last)."""
    out = {}
    algos = sorted({r.algo for r in records})
    for name in algos:
        rs = [r for r in records if r.algo == name]
        tt = max(r.iter for r in rs) if t is None else t
        steps = sorted({r.step for r in rs})
        means = [float(np.mean([r.correlation for r in rs if r.step == s and r.iter == tt])) for s in steps]
        i = int(np.argmax(means))
        out[name] = {"step": steps[i], "mean_correlation": means[i], "iter": tt,
                     "grid": steps, "mean_by_step": means}
    return out


def run_step_sweep(cfg: ExperimentConfig) -> ExperimentResult:
    if not cfg.sweep:
        raise ConfigError("step_sweep needs a 'sweep' section")
    jobs = [(cfg, i) for i in range(cfg.trials)]
    records = [r for rows in _map(_sweep_trial, jobs, cfg.workers) for r in rows]
    return ExperimentResult(records, {}, {}, {"best": best_steps(records)})


# ------------------------------------------------------------------ rank-one and theory experiments

def _prior_of(cfg, default):
    return JointPrior.from_dict(cfg.prior) if cfg.prior is not None else default


def _se_trial(args):
    cfg, prior, plan, trial = args
    sample = sample_spiked(prior, cfg.n, cfg.noise, seed=trial_rng(cfg.master_seed, trial, "spiked"))
    t0 = time.perf_counter()
    run = run_bayes_amp_symmetric(sample, prior, cfg.t_max, plan=plan)
    ms = (time.perf_counter() - t0) * 1e3
    rows = [TrialRecord("bayes_amp_rank_one", cfg.n, cfg.n, 1.0, trial, k, run.correlation[k - 1], run.mse[k - 1],
                        ms * k / cfg.t_max if cfg.record_wall_clock else 0.0)
            for k in range(1, cfg.t_max + 1)]
    return rows, run.overlap, run.mse


def run_se_check(cfg: ExperimentConfig) -> ExperimentResult:
    if cfg.t_max < 1:
        raise ConfigError("se_check needs t_max >= 1")
    prior = _prior_of(cfg, JointPrior.rademacher(0.5))
    plan = bayes_plan_symmetric(prior, cfg.t_max, gauss_hermite(cfg.quadrature_order))
    res = _map(_se_trial, [(cfg, prior, plan, i) for i in range(cfg.trials)], cfg.workers)
    records = [r for rows, _, _ in res for r in rows]
    mean = np.array([o for _, o, _ in res]).mean(axis=0)
    mse = np.array([m for _, _, m in res]).mean(axis=0)
    dev = mean - np.asarray(plan.se.mu[: cfg.t_max])
    dev_mse = mse - np.asarray(plan.lb.mmse_curve[1: cfg.t_max + 1])
    summary = {
        "gamma": list(plan.lb.gamma),
        "se_mu": list(plan.se.mu[: cfg.t_max]),
        "empirical_overlap_mean": list(mean),
        "mmse": list(plan.lb.mmse_curve[1: cfg.t_max + 1]),
        "empirical_mse_mean": list(mse),
        "max_abs_deviation": float(max(np.max(np.abs(dev)), np.max(np.abs(dev_mse)))),
    }
    return ExperimentResult(records, {}, {}, summary)


def run_lower_bound(cfg: ExperimentConfig) -> ExperimentResult:
    rule = gauss_hermite(cfg.quadrature_order)
    if cfg.channel is None:
        prior = _prior_of(cfg, JointPrior.rademacher(0.5))
        lb = gamma_recursion(prior, cfg.t_max, rule)
        out = {"kind": "rank_one", "gamma": list(lb.gamma), "mmse": list(lb.mmse_curve),
               "optimal_correlation": list(lb.optimal_correlation)}
    else:
        prior = _prior_of(cfg, JointPrior.gaussian(0.0))
        ch = Channel.from_dict(cfg.channel)
        lb = glm_beta_recursion(prior, ch, None, cfg.delta_eff, max(cfg.t_max, 1), rule)
        out = {"kind": "glm", "delta": cfg.delta_eff, "beta": list(lb.beta), "sigma": list(lb.sigma),
               "sigma_tilde": list(lb.sigma_tilde), "mmse": list(lb.mmse_curve),
               "optimal_correlation": list(lb.optimal_correlation), "truncated": lb.truncated}
    return ExperimentResult([], out)


def run_spectral_theory(cfg: ExperimentConfig) -> ExperimentResult:
    th = spectral_overlap_theory(cfg.delta_eff, cfg.epsilon)
    return ExperimentResult([], asdict(th))


def random_polynomial_spec(rng, prior, t_max, degree, rule=None):
    """Random separable polynomial denoisers f_0..f_{t_max-1} and their state evolution.

    Coefficients are U[-1, 1] in the standardized iterates x_s/√Σ_ss.  Raw
    coefficients make Σ_tt grow like Σ³ per step and overflow float64 by t ≈ 6.
    """
    se = SymmetricSE(prior, EngineConfig(rule=rule or gauss_hermite()))
    coeffs = []
    powers = np.arange(degree + 1)
    for t in range(t_max):
        c = rng.uniform(-1.0, 1.0, size=(t + 1, degree + 1))
        if t:
            sd = np.sqrt(np.diag(se.Sigma)[:t])
            sd = np.where(sd > 1e-8, sd, 1.0)
            c[1:] = c[1:] / sd[:, None] ** powers
        coeffs.append(c)
        se.add(DenoiserSpec.polynomial(coeffs).steps[t])
    return DenoiserSpec.polynomial(coeffs), se.state()


def oamp_fuzz(prior, n_specs=100, t_max=6, degree=3, seed=0, slack=1e-9, order=16):
    """Random polynomial denoisers; every one must satisfy ‖α_{≤t}‖ ≤ γ_t."""
    rule = gauss_hermite(order)
    lb = gamma_recursion(prior, t_max, rule)
    rng = make_rng(seed)
    worst, failures = -math.inf, []
    for i in range(n_specs):
        _, se = random_polynomial_spec(rng, prior, t_max, degree, rule)
        rep = verify_alpha_bound(orthogonalize(se, prior), lb, slack)
        if not np.all(np.isfinite(rep.alpha_norm)):
            failures.append(i)
            continue
        worst = max(worst, rep.max_excess)
        if not rep.all_passed:
            failures.append(i)
    return {"n_specs": n_specs, "t_max": t_max, "degree": degree, "slack": slack,
            "failures": failures, "max_excess": worst}


def run_oamp_fuzz(cfg: ExperimentConfig) -> ExperimentResult:
    prior = _prior_of(cfg, JointPrior.rademacher(0.5))
    rep = oamp_fuzz(prior, cfg.fuzz_specs, min(cfg.t_max, 6) or 1, cfg.fuzz_degree, cfg.master_seed)
    return ExperimentResult([], rep)


_RUNNERS = {
    "pr_bench": run_pr_bench,
    "step_sweep": run_step_sweep,
    "se_check": run_se_check,
    "lower_bound": run_lower_bound,
    "spectral_theory": run_spectral_theory,
    "oamp_fuzz": run_oamp_fuzz,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return _RUNNERS[cfg.kind](cfg)
