"""Estimation and uncertainty for the composite likelihood.

* ``adam_fit`` / ``gradient_descent_fit`` minimise the negative composite
  log-likelihood per component and time step, drawing fresh complement
  simulations at every step.
* ``godambe`` estimates the sensitivity ``S``, variability ``V`` and Godambe
  ``G = S V^-1 S`` matrices, either from Hessians and gradient covariances
  over bootstrap datasets or from block-gradient outer products.
* ``ConfidenceEllipsoid`` turns ``G`` into joint and per-coordinate sets,
  and ``coverage_experiment`` measures how often they cover the truth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import NumericalError, OptimizationError, SimbaError
from .gradients import grad_composite, hessian_composite
from .rng import derive_seed, generator
from .simulate import ensure_outbreak

METHODS = ("expected_plain", "expected_bartlett", "observed_bartlett")


# optimisers --------------------------------------------------------------------

@dataclass
class AdamConfig:
    learning_rate: float = 0.1
    steps: int = 500
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    restart_on_nonfinite: bool = True
    max_restarts: int = 20
    restart_scale: float = 1.0
    average_last: int = 0          # report the mean of the last k iterates (0: final iterate)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.average_last < 0 or self.average_last > self.steps:
            raise ValueError("average_last must lie in [0, steps]")


@dataclass
class GradientDescentConfig:
    """Plain steepest descent: theta <- theta - learning_rate * grad."""
    learning_rate: float = 100.0
    steps: int = 200
    restart_on_nonfinite: bool = True
    max_restarts: int = 20
    restart_scale: float = 1.0
    average_last: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.average_last < 0 or self.average_last > self.steps:
            raise ValueError("average_last must lie in [0, steps]")


class Adam:
    """Bias-corrected Adam update on a flat parameter vector."""

    def __init__(self, config: AdamConfig, dim: int):
        self.config = config
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.t = 0

    def step(self, theta, grad):
        c = self.config
        self.t += 1
        self.m = c.beta1 * self.m + (1 - c.beta1) * grad
        self.v = c.beta2 * self.v + (1 - c.beta2) * grad ** 2
        mhat = self.m / (1 - c.beta1 ** self.t)
        vhat = self.v / (1 - c.beta2 ** self.t)
        return theta - c.learning_rate * mhat / (np.sqrt(vhat) + c.eps)


class _Descent:
    def __init__(self, config, dim):
        self.config = config

    def step(self, theta, grad):
        return theta - self.config.learning_rate * grad


@dataclass
class FitResult:
    theta: np.ndarray
    trace: np.ndarray              # loss per step
    theta0: np.ndarray
    restarts: int = 0
    path: np.ndarray | None = None
    natural: dict | None = None
    seed: int | None = None
    config: object = None


def minimize(objective, theta0, config, seed=0):
    """Minimise a stochastic objective ``objective(theta, step) -> (loss, grad)``.

    A nonfinite loss or gradient either restarts from a random point around
    ``theta0`` (fresh optimiser state) or raises :class:`OptimizationError`.
    """
    theta0 = np.asarray(theta0, dtype=float)
    if not np.all(np.isfinite(theta0)):
        raise ValueError("theta0 must be finite")
    make = Adam if isinstance(config, AdamConfig) else _Descent
    opt = make(config, theta0.size)
    theta = theta0.copy()
    trace = np.empty(config.steps)
    path = np.empty((config.steps + 1, theta0.size))
    path[0] = theta
    restarts = 0
    for step in range(config.steps):
        try:
            loss, grad = objective(theta, step)
        except NumericalError:
            loss, grad = math.inf, None
        ok = np.isfinite(loss) and grad is not None and np.all(np.isfinite(grad))
        if not ok:
            trace[step] = np.nan
            if not config.restart_on_nonfinite or restarts >= config.max_restarts:
                raise OptimizationError(f"nonfinite loss at step {step}", trace[: step + 1].copy())
            restarts += 1
            g = generator(seed, "restart", restarts)
            theta = theta0 + config.restart_scale * g.standard_normal(theta0.size)
            opt = make(config, theta0.size)
            path[step + 1] = theta
            continue
        trace[step] = loss
        theta = opt.step(theta, np.asarray(grad, dtype=float))
        path[step + 1] = theta
    k = config.average_last
    est = path[-k:].mean(axis=0) if k > 0 else theta
    return FitResult(est, trace, theta0, restarts, path, seed=seed, config=config)


def adam_minimize(objective, theta0, config=None, seed=0):
    return minimize(objective, theta0, config or AdamConfig(), seed)


def fit_composite(model, theta_map, theta0, y, P, variant, partition, config, seed, include_feedback_terms=True):
    y = model.check_observations(y)
    scale = 1.0 / (model.n_components * y.shape[0])

    def objective(theta, step):
        rep = grad_composite(model, theta_map, theta, y, P, variant, partition,
                             derive_seed(seed, step), include_feedback_terms=include_feedback_terms)
        return -rep.value * scale, -rep.gradient * scale

    res = minimize(objective, theta0, config, seed)
    res.natural = theta_map.natural_values(res.theta)
    return res


def adam_fit(model, theta_map, theta0, y, P, variant="no_feedback", partition=None, config=None,
             seed=0, include_feedback_terms=True) -> FitResult:
    """Adam on  -composite / (N T)  with fresh simulations at every step."""
    return fit_composite(model, theta_map, theta0, y, P, variant, partition, config or AdamConfig(), seed,
                include_feedback_terms)


def gradient_descent_fit(model, theta_map, theta0, y, P, variant="no_feedback", partition=None,
                         config=None, seed=0) -> FitResult:
    """Steepest descent on the same normalised loss as :func:`adam_fit`."""
    return fit_composite(model, theta_map, theta0, y, P, variant, partition,
                config or GradientDescentConfig(), seed)


# Godambe information ------------------------------------------------------------

@dataclass
class GodambeMatrices:
    S: np.ndarray
    V: np.ndarray
    G: np.ndarray
    method: str
    B: int
    ridge: float = 0.0             # added to V before inversion (0 if not needed)
    first_identity: np.ndarray | None = None   # mean gradient / standard error

    @property
    def covariance(self):
        return _sym_inverse(self.G)[0]

    def to_dict(self):
        return {"method": self.method, "B": self.B, "ridge": self.ridge,
                "S": self.S.tolist(), "V": self.V.tolist(), "G": self.G.tolist(),
                "first_identity": None if self.first_identity is None else self.first_identity.tolist()}


@dataclass
class BootstrapDraws:
    """Per-dataset block gradients (B, |K|, d) and optional Hessians (B, d, d)."""
    block_gradients: np.ndarray
    hessians: np.ndarray | None
    values: np.ndarray
    seed: int

    @property
    def gradients(self):
        return self.block_gradients.sum(axis=1)


def _sym(a):
    return 0.5 * (a + a.T)


def _sym_inverse(a, ridge_rel=1e-8, rcond=1e-12):
    """Inverse of a symmetric matrix via eigendecomposition, with ridge fallback."""
    a = _sym(np.atleast_2d(a))
    d = a.shape[0]
    w, U = np.linalg.eigh(a)
    ridge = 0.0
    top = np.max(np.abs(w)) if w.size else 0.0
    if w.size and (w.min() <= rcond * max(top, 1e-300)):
        ridge = ridge_rel * max(np.trace(a), 0.0) / d
        if ridge <= 0:
            ridge = ridge_rel
        w = w + ridge
    return (U / w) @ U.T, ridge


def first_identity_residual(gradients):
    """Mean gradient over datasets divided by its standard error, per coordinate."""
    g = np.asarray(gradients, dtype=float)
    B = g.shape[0]
    if B < 2:
        raise ValueError("need at least two gradients")
    se = g.std(axis=0, ddof=1) / math.sqrt(B)
    mean = g.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(se > 0, mean / se, np.where(mean == 0, 0.0, np.inf))


def bootstrap_draws(model, theta_map, theta, T, P, B, seed, variant="no_feedback", partition=None,
                    hessians=False, min_infected=0) -> BootstrapDraws:
    """Simulate B datasets at ``theta`` and differentiate the composite on each."""
    if B < 2:
        raise ValueError("B must be >= 2 for expected information")
    natural = theta_map.natural_values(theta)
    grads, hes, vals = [], [], []
    for b in range(B):
        _, obs = ensure_outbreak(model, natural, T, derive_seed(seed, 1, b), min_infected)
        s = derive_seed(seed, 2, b)
        if hessians:
            rep = hessian_composite(model, theta_map, theta, obs.obs, P, variant, partition, s)
            hes.append(rep.hessian)
        else:
            rep = grad_composite(model, theta_map, theta, obs.obs, P, variant, partition, s)
        grads.append(rep.block_gradients)
        vals.append(rep.value)
    return BootstrapDraws(np.array(grads), np.array(hes) if hessians else None, np.array(vals), seed)


def godambe_from_draws(draws: BootstrapDraws, method) -> GodambeMatrices:
    bg = draws.block_gradients
    B = bg.shape[0]
    g = bg.sum(axis=1)
    if method == "expected_plain":
        if draws.hessians is None:
            raise ValueError("expected_plain needs Hessians")
        S = -draws.hessians.mean(axis=0)
        V = np.atleast_2d(np.cov(g, rowvar=False, ddof=1))
    elif method in ("expected_bartlett", "observed_bartlett"):
        S = np.einsum("bki,bkj->ij", bg, bg) / B
        V = np.einsum("bi,bj->ij", g, g) / B
    else:
        raise ValueError(f"method must be one of {METHODS}")
    S, V = _sym(S), _sym(V)
    Vinv, ridge = _sym_inverse(V)
    G = _sym(S @ Vinv @ S)
    resid = first_identity_residual(g) if B >= 2 else None
    return GodambeMatrices(S, V, G, method, B, ridge, resid)


def godambe(model, theta_map, theta_hat, partition=None, P=50, B=200, method="expected_bartlett",
            seed=0, variant="no_feedback", y_observed=None, T=None, min_infected=0) -> GodambeMatrices:
    """Godambe information at ``theta_hat`` (unconstrained scale)."""
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    theta_hat = np.asarray(theta_hat, dtype=float)
    if method == "observed_bartlett":
        if y_observed is None:
            raise ValueError("observed_bartlett needs y_observed")
        rep = grad_composite(model, theta_map, theta_hat, y_observed, P, variant, partition, seed)
        draws = BootstrapDraws(rep.block_gradients[None], None, np.array([rep.value]), seed)
        out = godambe_from_draws(draws, method)
        out.first_identity = None
        return out
    if T is None:
        if y_observed is None:
            raise ValueError("need T or y_observed to set the simulation horizon")
        T = np.asarray(y_observed).shape[0]
    draws = bootstrap_draws(model, theta_map, theta_hat, T, P, B, seed, variant, partition,
                            hessians=method == "expected_plain", min_infected=min_infected)
    return godambe_from_draws(draws, method)


# confidence sets ----------------------------------------------------------------

@dataclass
class ConfidenceEllipsoid:
    """{θ : (θ - center)ᵀ G (θ - center) <= χ²_d(level)}."""
    center: np.ndarray
    shape: np.ndarray
    level: float = 0.95

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(-1)
        self.shape = np.atleast_2d(np.asarray(self.shape, dtype=float))
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if self.shape.shape != (self.center.size, self.center.size):
            raise ValueError("shape must be d x d")

    @property
    def radius2(self):
        return float(stats.chi2.ppf(self.level, self.center.size))

    def distance2(self, theta):
        diff = np.asarray(theta, dtype=float).reshape(-1) - self.center
        if diff.shape != self.center.shape:
            raise ValueError("dimension mismatch")
        return float(diff @ self.shape @ diff)

    def contains(self, theta):
        return self.distance2(theta) <= self.radius2

    def marginal_intervals(self):
        """(d, 2) array of center ± z·sqrt(diag(G⁻¹))."""
        cov, _ = _sym_inverse(self.shape)
        z = float(stats.norm.ppf(0.5 + self.level / 2))
        half = z * np.sqrt(np.maximum(np.diag(cov), 0.0))
        return np.column_stack([self.center - half, self.center + half])

    def marginal_contains(self, theta):
        iv = self.marginal_intervals()
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return (iv[:, 0] <= theta) & (theta <= iv[:, 1])


def ellipsoid_contains(e: ConfidenceEllipsoid, theta) -> bool:
    return e.contains(theta)


# coverage -------------------------------------------------------------------------

@dataclass
class CoverageReport:
    level: float
    joint: dict                    # method -> coverage
    joint_se: dict
    marginal: dict                 # method -> (d,) coverage
    rows: list = field(default_factory=list)
    failures: int = 0
    reps: int = 0
    failure_messages: list = field(default_factory=list)


def _binom_se(p, n):
    return math.sqrt(max(p * (1 - p), 0.0) / n) if n > 0 else float("nan")


def summarize_coverage(rows, methods, level, d, reps, failures=0, messages=()):
    joint, se, marg = {}, {}, {}
    for m in methods:
        hits = [r[f"{m}_joint"] for r in rows]
        n = len(hits)
        p = float(np.mean(hits)) if n else float("nan")
        joint[m] = p
        se[m] = _binom_se(p, n)
        marg[m] = (np.array([[r[f"{m}_marg{i}"] for i in range(d)] for r in rows]).mean(axis=0)
                   if n else np.full(d, np.nan))
    return CoverageReport(level, joint, se, marg, list(rows), failures, reps, list(messages))


def coverage_row(rep, truth, estimate, godambes, level):
    row = {"rep": rep}
    for i, v in enumerate(np.asarray(estimate).reshape(-1)):
        row[f"theta_hat{i}"] = float(v)
    for name, g in godambes.items():
        e = ConfidenceEllipsoid(estimate, g.G, level)
        row[f"{name}_joint"] = bool(e.contains(truth))
        for i, hit in enumerate(e.marginal_contains(truth)):
            row[f"{name}_marg{i}"] = bool(hit)
    return row


def coverage_experiment(model, theta_map, reps=50, T=100, P=50, B=200,
                        methods=("expected_bartlett",), seed=0, variant="no_feedback", partition=None,
                        level=0.95, fit_config=None, P_godambe=None, min_infected=0,
                        init_scale=0.5, progress=None) -> CoverageReport:
    """Simulate, fit, build Godambe sets and record whether they cover the truth.

    The truth is ``theta_map.base``.  Each replicate refits the free entries
    from the truth plus N(0, init_scale²) noise on the unconstrained scale.
    All requested methods share one set of bootstrap draws.  Replicates that
    fail numerically are counted and skipped.
    """
    truth = theta_map.pack()
    fit_config = fit_config or AdamConfig()
    need_h = "expected_plain" in methods
    rows, failures, messages = [], 0, []
    for r in range(reps):
        try:
            _, obs = ensure_outbreak(model, theta_map.base, T, derive_seed(seed, 1, r), min_infected)
            start = truth + init_scale * generator(seed, "fit", r).standard_normal(truth.size)
            fit = fit_composite(model, theta_map, start, obs.obs, P, variant, partition, fit_config,
                       derive_seed(seed, 2, r))
            gods = {}
            if any(m.startswith("expected") for m in methods):
                draws = bootstrap_draws(model, theta_map, fit.theta, T, P_godambe or P, B,
                                        derive_seed(seed, 3, r), variant, partition, need_h, min_infected)
                for m in methods:
                    if m.startswith("expected"):
                        gods[m] = godambe_from_draws(draws, m)
            if "observed_bartlett" in methods:
                gods["observed_bartlett"] = godambe(model, theta_map, fit.theta, partition, P_godambe or P,
                                                    B, "observed_bartlett", derive_seed(seed, 4, r),
                                                    variant, y_observed=obs.obs)
            rows.append(coverage_row(r, truth, fit.theta, gods, level))
        except SimbaError as exc:
            failures += 1
            messages.append(f"rep {r}: {exc}")
        if progress is not None:
            progress(r, rows[-1] if rows else None)
    return summarize_coverage(rows, methods, level, theta_map.dim, reps, failures, messages)


def gaussian_coverage(G, reps=500, level=0.95, seed=0, truth=None) -> CoverageReport:
    """Coverage when θ̂ ~ N(θ*, G⁻¹) exactly and G is known."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    d = G.shape[0]
    truth = np.zeros(d) if truth is None else np.asarray(truth, dtype=float)
    cov, _ = _sym_inverse(G)
    L = np.linalg.cholesky(_sym(cov))
    g = generator(seed, "coverage", 0)
    rows = []
    fake = GodambeMatrices(G, G, G, "known", 0)
    for r in range(reps):
        est = truth + L @ g.standard_normal(d)
        rows.append(coverage_row(r, truth, est, {"known": fake}, level))
    return summarize_coverage(rows, ("known",), level, d, reps)


def coverage_from_estimates(truth, estimates, G_list, level=0.95) -> CoverageReport:
    """Coverage of supplied estimates and Godambe matrices (one per replicate)."""
    truth = np.asarray(truth, dtype=float).reshape(-1)
    rows = [coverage_row(r, truth, est, {"given": GodambeMatrices(G, G, G, "given", 0)}, level)
            for r, (est, G) in enumerate(zip(estimates, G_list))]
    return summarize_coverage(rows, ("given",), level, truth.size, len(rows))
