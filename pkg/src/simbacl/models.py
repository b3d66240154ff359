"""Factorial HMMs for individual-based epidemics.

Every built-in model shares one structure: component ``n`` moves according
to a per-component kernel whose only dependence on the rest of the system
is a scalar *pressure*

    pressure_n = sum_m W[n, m] * d(x^m)

with ``d`` a fixed per-state infectivity indicator.  ``W`` is either a
constant scalar (homogeneous mixing, ``homogeneous_weight``) or an N x N
matrix that may depend on the parameters.  Emissions are binary detections
with state-dependent probabilities; ``-1`` marks a missing observation.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import dual as du
from . import rng
from .errors import (DataError, DegenerateKernelError, ParameterError,
                     UnsupportedModelError)
from .parameters import ParamBlock, check_block

MISSING = -1


@dataclass
class Covariates:
    """Per-component covariates.

    ``w`` holds regression covariates (intercept first) for the SIS family,
    ``coords`` planar locations in km, ``cattle``/``sheep`` herd sizes.
    """
    w: np.ndarray | None = None
    coords: np.ndarray | None = None
    cattle: np.ndarray | None = None
    sheep: np.ndarray | None = None

    def __post_init__(self):
        for name in ("w", "coords", "cattle", "sheep"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=float))
        for name in ("cattle", "sheep"):
            v = getattr(self, name)
            if v is not None and np.any(v < 0):
                raise DataError(f"{name} counts must be nonnegative")

    @cached_property
    def distances(self) -> np.ndarray:
        if self.coords is None:
            raise DataError("covariates have no coordinates")
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        dist = np.sqrt((diff ** 2).sum(-1))
        np.fill_diagonal(dist, 0.0)
        return dist

    def __len__(self):
        for v in (self.w, self.coords, self.cattle):
            if v is not None:
                return len(v)
        return 0


def regression_covariates(n, seed=0):
    """``w_n = (1, z_n)`` with ``z_n`` standard normal."""
    z = rng.generator(seed, "covariates").standard_normal(n)
    return np.column_stack([np.ones(n), z])


class FactorialModel:
    """Base class; subclasses define states, layout, and the per-θ laws."""

    name = "base"
    state_names: tuple = ()
    infectivity: np.ndarray = np.zeros(0)
    homogeneous_weight: float | None = None
    layout: tuple = ()

    def __init__(self, n_components, covariates=None):
        if int(n_components) < 1:
            raise ParameterError("n_components must be positive")
        self.n_components = int(n_components)
        self.covariates = covariates

    @property
    def n_states(self):
        return len(self.state_names)

    @property
    def obs_alphabet(self):
        return "binary detection: 0 undetected, nonzero detected, -1 missing"

    @property
    def coupled(self):
        return not (self.homogeneous_weight == 0.0)

    @property
    def neighborhood(self):
        """``None`` means every component may influence every other."""
        if not self.coupled:
            return [np.array([n]) for n in range(self.n_components)]
        return None

    def baseline(self) -> dict:
        raise NotImplementedError

    def check_params(self, params) -> dict:
        out = {}
        for b in self.layout:
            if b.name not in params:
                raise ParameterError(f"missing parameter block {b.name!r}")
            v = params[b.name]
            out[b.name] = v if du.is_dual(v) else check_block(b, v)
        return out

    def laws(self, params) -> dict:
        """Per-θ quantities: ``initial`` (N, X), ``detection`` (N, X), ``weights``."""
        raise NotImplementedError

    def kernel(self, laws, pressure, comp):
        """Transition matrices (..., X, X) for components ``comp`` under ``pressure``."""
        raise NotImplementedError

    def transition_rows(self, laws, pressure, comp, state):
        """Rows of the kernel for source states ``state``: shape (..., X)."""
        kern = self.kernel(laws, pressure, comp)
        shape = du.value(kern).shape
        idx = np.broadcast_to(np.asarray(state)[..., None, None], shape[:-2] + (1, shape[-1]))
        return du.take_along_axis(kern, idx, -2)[..., 0, :]

    def log_transition_prob(self, laws, pressure, comp, prev, nxt):
        """log p(x_t = nxt | x_{t-1} = prev) under the given pressure."""
        rows = self.transition_rows(laws, pressure, comp, prev)
        shape = du.value(rows).shape
        idx = np.broadcast_to(np.asarray(nxt)[..., None], shape[:-1] + (1,))
        return du.log(du.take_along_axis(rows, idx, -1)[..., 0])

    # derived quantities ------------------------------------------------------
    def pressure(self, laws, states):
        """Pressure on every component given full states (..., N)."""
        d = self.infectivity[states]
        if self.homogeneous_weight is not None:
            tot = self.homogeneous_weight * d.sum(-1, keepdims=True)
            return np.broadcast_to(tot, d.shape)
        return du.einsum("nm,...m->...n", laws["weights"], d)

    def transition_probs(self, laws, states):
        """Rows p(x_t^n = . | x_{t-1} = states) with shape (..., N, X)."""
        states = np.asarray(states)
        pr = self.pressure(laws, states)
        comp = np.broadcast_to(np.arange(self.n_components), states.shape)
        return self.transition_rows(laws, pr, comp, states)

    def emission(self, laws, y, comp=None):
        """Likelihood vectors p(y | x = .) with shape y.shape + (X,)."""
        y = np.asarray(y)
        det = laws["detection"]
        if comp is None:
            comp = np.broadcast_to(np.arange(self.n_components), y.shape)
        det = det[comp]
        hit = (y != 0)[..., None]
        lik = du.where(hit, det, 1.0 - det)
        return du.where((y == MISSING)[..., None], 1.0, lik)

    def check_states(self, states):
        states = np.asarray(states)
        if states.shape[-1] != self.n_components:
            raise DataError(f"expected {self.n_components} components, got {states.shape[-1]}")
        if np.any((states < 0) | (states >= self.n_states)):
            raise DataError("latent state out of range")
        return states

    def check_observations(self, y):
        y = np.asarray(y)
        if y.ndim != 2 or y.shape[1] != self.n_components:
            raise DataError(f"observations must have shape (T, {self.n_components}), got {y.shape}")
        if np.any(y < MISSING):
            raise DataError("observation outside alphabet")
        return y.astype(np.int64)

    def assumption_constants(self, params):
        raise UnsupportedModelError(f"model {self.name!r} provides no interaction constants")


def _detection_from_q(q, n):
    q = q if du.is_dual(q) else np.asarray(q, dtype=float)
    return du.broadcast_to(q, (n,) + du.value(q).shape)


class SIS(FactorialModel):
    """Homogeneously mixing SIS with logistic covariate effects."""

    name = "sis"
    state_names = ("S", "I")
    infectivity = np.array([0.0, 1.0])
    layout = (
        ParamBlock("beta0", 2),
        ParamBlock("beta_lambda", 2),
        ParamBlock("beta_gamma", 2),
        ParamBlock("q", 2, "unit"),
        ParamBlock("iota", 1, "positive"),
    )

    def __init__(self, n_components, covariates=None, seed=0):
        if covariates is None:
            covariates = Covariates(w=regression_covariates(n_components, seed))
        super().__init__(n_components, covariates)
        if covariates.w is None or covariates.w.shape != (self.n_components, 2):
            raise DataError(f"{self.name} needs covariates w of shape ({self.n_components}, 2)")
        self.homogeneous_weight = 1.0 / self.n_components

    def baseline(self):
        return {
            "beta0": np.array([-np.log(1 / 0.01 - 1), 0.0]),
            "beta_lambda": np.array([-1.0, 2.0]),
            "beta_gamma": np.array([-1.0, -1.0]),
            "q": np.array([0.6, 0.4]),
            "iota": np.array([0.001]),
        }

    def _rates(self, p):
        w = self.covariates.w
        lam = du.sigmoid(du.matvec(w, p["beta_lambda"]))
        gam = du.sigmoid(du.matvec(w, p["beta_gamma"]))
        return lam, gam

    def laws(self, params):
        p = self.check_params(params)
        w = self.covariates.w
        lam, gam = self._rates(p)
        inf0 = du.sigmoid(du.matvec(w, p["beta0"]))
        return {
            "initial": du.stack([1.0 - inf0, inf0], -1),
            "detection": _detection_from_q(p["q"], self.n_components),
            "lambda": lam,
            "gamma": gam,
            "iota": p["iota"][0],
            "weights": None,
        }

    def _infection(self, laws, pressure, comp):
        return laws["lambda"][comp] * (pressure + laws["iota"])

    def kernel(self, laws, pressure, comp):
        rate = self._infection(laws, pressure, comp)
        gam = laws["gamma"][comp]
        stay = du.exp(-rate)
        rec = -du.expm1(-gam)
        return du.stack([
            du.stack([stay, -du.expm1(-rate)], -1),
            du.stack([rec, du.exp(-gam)], -1),
        ], -2)

    def transition_rows(self, laws, pressure, comp, state):
        rate = self._infection(laws, pressure, comp)
        gam = laws["gamma"][comp]
        sus = np.asarray(state) == 0
        return du.stack([
            du.where(sus, du.exp(-rate), -du.expm1(-gam)),
            du.where(sus, -du.expm1(-rate), du.exp(-gam)),
        ], -1)

    def log_transition_prob(self, laws, pressure, comp, prev, nxt):
        rate = self._infection(laws, pressure, comp)
        gam = laws["gamma"][comp]
        prev = np.asarray(prev)
        nxt = np.asarray(nxt)
        from_s = du.where(nxt == 0, -rate, du.log(-du.expm1(-rate)))
        from_i = du.where(nxt == 0, du.log(-du.expm1(-gam)), -gam)
        return du.where(prev == 0, from_s, from_i)

    def max_pressure(self, laws):
        return np.ones(self.n_components)

    def interaction_matrix(self, laws):
        """N * W[nbar, n]: the per-pair interaction scale entering d_{n,nbar}."""
        return None

    def assumption_constants(self, params):
        laws = self.laws(params)
        lam = du.value(laws["lambda"])
        gam = du.value(laws["gamma"])
        iota = float(du.value(laws["iota"]))
        maxp = self.max_pressure(laws)
        entries = np.stack([
            np.exp(-lam * (maxp + iota)),
            -np.expm1(-lam * iota),
            -np.expm1(-gam),
            np.exp(-gam),
        ])
        eps = float(entries.min())
        if not eps > 0:
            raise DegenerateKernelError("kernel entries are not bounded away from zero (epsilon <= 0)")
        return AssumptionConstants(s=lam.copy(), epsilon=eps, interaction=self.interaction_matrix(laws),
                                   d_description="indicator of the infected state")


class SpatialSIS(SIS):
    """SIS whose pressure is weighted by a Gaussian kernel of distance."""

    name = "sis_spatial"
    layout = SIS.layout + (ParamBlock("psi", 1, "positive"),)

    def __init__(self, n_components, covariates=None, seed=0, side_km=10.0):
        if covariates is None:
            g = rng.generator(seed, "covariates", 1)
            covariates = Covariates(w=regression_covariates(n_components, seed),
                                    coords=g.uniform(0.0, side_km, size=(n_components, 2)))
        if covariates.coords is None:
            raise DataError("sis_spatial needs coordinates")
        super().__init__(n_components, covariates)
        self.homogeneous_weight = None

    def baseline(self):
        b = super().baseline()
        b["beta0"] = np.array([0.1, 0.0])
        b["iota"] = np.array([0.01])
        b["psi"] = np.array([1.0])
        return b

    def laws(self, params):
        out = super().laws(params)
        p = self.check_params(params)
        e2 = self.covariates.distances ** 2
        psi = p["psi"][0]
        w = du.exp(e2 * (-0.5) * du.reciprocal(psi * psi)) * (1.0 / self.n_components)
        out["weights"] = du.where(np.eye(self.n_components, dtype=bool), 0.0, w)
        return out

    def max_pressure(self, laws):
        return du.value(laws["weights"]).sum(1)

    def interaction_matrix(self, laws):
        return du.value(laws["weights"]) * self.n_components


class SEIR(SIS):
    """SIS family with an exposed stage and absorbing removal."""

    name = "seir"
    state_names = ("S", "E", "I", "R")
    infectivity = np.array([0.0, 0.0, 1.0, 0.0])
    layout = (
        ParamBlock("beta0", 2),
        ParamBlock("beta_lambda", 2),
        ParamBlock("beta_gamma", 2),
        ParamBlock("rho", 1, "positive"),
        ParamBlock("q", 4, "unit"),
        ParamBlock("iota", 1, "positive"),
    )
    default_free = {"beta0": True, "beta_lambda": True, "beta_gamma": True, "rho": True,
                    "q": [False, False, True, True], "iota": True}

    transition_rows = FactorialModel.transition_rows
    log_transition_prob = FactorialModel.log_transition_prob

    def baseline(self):
        b = super().baseline()
        b["rho"] = np.array([0.2])
        b["q"] = np.array([0.0, 0.0, 0.6, 0.4])
        return b

    def laws(self, params):
        out = super().laws(params)
        p = self.check_params(params)
        inf0 = out["initial"][:, 1]
        zero = np.zeros(self.n_components)
        out["initial"] = du.stack([1.0 - inf0, zero, inf0, zero], -1)
        out["rho"] = p["rho"][0]
        return out

    def kernel(self, laws, pressure, comp):
        rate = self._infection(laws, pressure, comp)
        gam = laws["gamma"][comp]
        rho = laws["rho"]
        stay = du.exp(-rate)
        shape = du.value(stay).shape
        z = np.zeros(shape)
        o = np.ones(shape)
        rho_stay = du.broadcast_to(du.exp(-rho) * o, shape) if du.is_dual(rho) else np.exp(-rho) * o
        rho_go = 1.0 - rho_stay
        return du.stack([
            du.stack([stay, -du.expm1(-rate), z, z], -1),
            du.stack([z, rho_stay, rho_go, z], -1),
            du.stack([z, z, du.exp(-gam), -du.expm1(-gam)], -1),
            du.stack([z, z, z, o], -1),
        ], -2)

    def assumption_constants(self, params):
        raise UnsupportedModelError("interaction constants are only derived for the SIS family")


class SINR(FactorialModel):
    """Farm-level SINR with a Cauchy-type spatial kernel and herd-size effects."""

    name = "sinr"
    state_names = ("S", "I", "N", "R")
    infectivity = np.array([0.0, 1.0, 0.0, 0.0])
    layout = (
        ParamBlock("tau", 1, "positive"),
        ParamBlock("gamma", 1, "positive"),
        ParamBlock("delta", 1, "positive"),
        ParamBlock("zeta", 1, "positive"),
        ParamBlock("chi", 1, "positive"),
        ParamBlock("psi", 1, "positive"),
        ParamBlock("xi", 1, "positive"),
        ParamBlock("q", 4, "unit"),
    )
    default_free = {"tau": True, "gamma": True, "delta": True, "zeta": True, "chi": True,
                    "psi": True, "xi": True}

    def __init__(self, n_components, covariates=None, seed=0, side_km=20.0):
        if covariates is None:
            covariates = synthetic_farms(n_components, seed, side_km)
        for f in ("coords", "cattle", "sheep"):
            if getattr(covariates, f) is None:
                raise DataError(f"sinr needs farm {f}")
        super().__init__(n_components, covariates)
        self.homogeneous_weight = None

    def baseline(self):
        return {
            "tau": np.array([40.0]),
            "gamma": np.array([0.5]),
            "delta": np.array([4.0e4]),
            "zeta": np.array([2.0]),
            "chi": np.array([0.5]),
            "psi": np.array([1.0]),
            "xi": np.array([2.0]),
            "q": np.array([0.0, 0.0, 1.0, 0.0]),
        }

    def pair_pressure(self, p):
        """lambda[src, dst]: pressure an infected ``src`` exerts on ``dst``."""
        cov = self.covariates
        n = self.n_components
        chi = p["chi"][0]
        cat = np.maximum(cov.cattle, 1e-300)
        shp = np.maximum(cov.sheep, 1e-300)
        cchi = du.exp(np.log(cat) * chi)
        schi = du.exp(np.log(shp) * chi)
        cchi = du.where(cov.cattle > 0, cchi, 0.0)
        schi = du.where(cov.sheep > 0, schi, 0.0)
        infect = cchi * p["zeta"][0] + schi
        suscept = cchi * p["xi"][0] + schi
        psi = p["psi"][0]
        e2 = cov.distances ** 2
        spatial = psi * du.reciprocal(e2 + psi * psi)
        lam = infect.reshape(n, 1) * suscept.reshape(1, n) * spatial * (p["delta"][0] * (1.0 / n))
        return du.where(np.eye(n, dtype=bool), 0.0, lam)

    def laws(self, params):
        p = self.check_params(params)
        n = self.n_components
        lam = self.pair_pressure(p)
        weights = lam.swapaxes(0, 1) * (1.0 / n)
        total = du.total(lam, axis=0) * (1.0 / n)
        p0 = -du.expm1(-(total * p["tau"][0]))
        zero = np.zeros(n)
        gam = p["gamma"][0]
        return {
            "initial": du.stack([1.0 - p0, p0, zero, zero], -1),
            "detection": _detection_from_q(p["q"], n),
            "weights": weights,
            "gamma": gam,
        }

    def kernel(self, laws, pressure, comp):
        rate = pressure
        stay = du.exp(-rate)
        shape = du.value(stay).shape
        z = np.zeros(shape)
        o = np.ones(shape)
        gam = laws["gamma"]
        g_stay = du.exp(-gam) * o
        return du.stack([
            du.stack([stay, -du.expm1(-rate), z, z], -1),
            du.stack([z, g_stay, 1.0 - g_stay, z], -1),
            du.stack([z, z, z, o], -1),
            du.stack([z, z, z, o], -1),
        ], -2)


class IndependentChains(FactorialModel):
    """Uncoupled components sharing one Markov chain and detection law.

    Parameters are the initial vector, the row-major transition matrix and
    per-state detection probabilities.  Useful as a reference point: every
    composite likelihood built on it is exact.
    """

    name = "independent"
    homogeneous_weight = 0.0

    def __init__(self, n_components, covariates=None, seed=0, n_states=2):
        super().__init__(n_components, covariates)
        k = int(n_states)
        if k < 1:
            raise ParameterError("n_states must be positive")
        self.state_names = tuple(f"s{i}" for i in range(k))
        self.infectivity = np.zeros(k)
        self.layout = (
            ParamBlock("initial", k, "unit"),
            ParamBlock("transition", k * k, "unit"),
            ParamBlock("q", k, "unit"),
        )
        self.default_free = {"initial": False, "transition": False, "q": True}

    def baseline(self):
        k = self.n_states
        if k == 1:
            return {"initial": np.ones(1), "transition": np.ones(1), "q": np.array([0.5])}
        trans = np.full((k, k), 0.2 / (k - 1))
        np.fill_diagonal(trans, 0.8)
        return {"initial": np.full(k, 1.0 / k), "transition": trans.ravel(),
                "q": np.linspace(0.3, 0.7, k)}

    def check_params(self, params):
        p = super().check_params(params)
        for name, rows in (("initial", 1), ("transition", self.n_states)):
            v = p[name]
            if not du.is_dual(v) and np.any(np.abs(v.reshape(rows, -1).sum(1) - 1.0) > 1e-12):
                raise ParameterError(f"{name} rows must sum to one")
        return p

    def laws(self, params):
        p = self.check_params(params)
        n, k = self.n_components, self.n_states
        return {
            "initial": du.broadcast_to(p["initial"], (n, k)),
            "detection": _detection_from_q(p["q"], n),
            "transition": p["transition"].reshape(k, k),
            "weights": None,
        }

    def kernel(self, laws, pressure, comp):
        shape = np.broadcast_shapes(np.shape(du.value(pressure)), np.shape(comp))
        return du.broadcast_to(laws["transition"], shape + (self.n_states, self.n_states))

    def assumption_constants(self, params):
        trans = du.value(self.laws(params)["transition"])
        eps = float(trans.min())
        if not eps > 0:
            raise DegenerateKernelError("kernel entries are not bounded away from zero (epsilon <= 0)")
        return AssumptionConstants(s=np.zeros(self.n_components), epsilon=eps,
                                   d_description="constant (no interaction)")


def synthetic_farms(n, seed=0, side_km=20.0):
    """Synthetic farm records: uniform locations, overdispersed herd sizes."""
    g = rng.generator(seed, "covariates", 2)
    coords = g.uniform(0.0, side_km, size=(n, 2))
    has_cattle = g.random(n) < 0.7
    has_sheep = g.random(n) < 0.6
    none = ~(has_cattle | has_sheep)
    has_cattle |= none
    cattle = np.where(has_cattle, np.round(g.lognormal(4.0, 1.0, n)) + 1, 0.0)
    sheep = np.where(has_sheep, np.round(g.lognormal(5.0, 1.0, n)) + 1, 0.0)
    return Covariates(coords=coords, cattle=cattle, sheep=sheep)


@dataclass
class AssumptionConstants:
    """Interaction bounds: |p(x'|x) - p(x'|xbar)| <= (s/N)|d(x^n) - d(xbar^n)|.

    ``interaction`` is ``None`` for homogeneous mixing; otherwise an N x N
    matrix ``M`` so that ``d_{n,nbar}(x) = M[nbar, n] * I(x infected)``.
    """
    s: np.ndarray
    epsilon: float
    interaction: np.ndarray | None = None
    d_description: str = ""

    @property
    def a_of_eps(self):
        e = self.epsilon
        return 2.0 * (1.0 / (2.0 * e ** 2) + 1.0 / (3.0 * e ** 3))

    @property
    def s_max(self):
        return np.maximum(self.s ** 2, self.s ** 3)


MODELS = {"sis": SIS, "sis_spatial": SpatialSIS, "seir": SEIR, "sinr": SINR,
          "independent": IndependentChains}


def make_model(name, n_components, covariates=None, seed=0):
    try:
        cls = MODELS[name]
    except KeyError:
        raise ParameterError(f"unknown model {name!r}; expected one of {sorted(MODELS)}") from None
    return cls(n_components, covariates=covariates, seed=seed)


def default_free(model):
    return getattr(model, "default_free", None) or {b.name: True for b in model.layout}


# single-component operations ---------------------------------------------------

def initial_distribution(model, n, params):
    _check_index(model, n)
    return np.asarray(du.value(model.laws(params)["initial"])[n])


def transition_row(model, n, x_prev, params):
    _check_index(model, n)
    x_prev = model.check_states(np.asarray(x_prev).reshape(-1))
    rows = model.transition_probs(model.laws(params), x_prev)
    return np.asarray(du.value(rows)[n])


def emission_vector(model, n, y, params):
    _check_index(model, n)
    y = int(y)
    if y < MISSING:
        raise DataError("observation outside alphabet")
    laws = model.laws(params)
    return np.asarray(du.value(model.emission(laws, np.array(y), np.array(n))))


def sis_assumption_constants(model, params):
    if not isinstance(model, SIS) or isinstance(model, SEIR):
        raise UnsupportedModelError("interaction constants are only derived for SIS and spatial SIS")
    return model.assumption_constants(params)


def _check_index(model, n):
    if not 0 <= int(n) < model.n_components:
        raise DataError(f"component index {n} outside [0, {model.n_components})")
