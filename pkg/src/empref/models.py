"""Likelihood models, data sets, and their transformations.

Models evaluate ``log p(x | theta)`` with numpy broadcasting over both
arguments. Reparametrizing the parameter and transforming the measurement are
both expressed as wrapper models so that every downstream quantity
(likelihood, Fisher information, expected information) is computed by the same
code in either space.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DegenerateLikelihoodError, NonMonotoneMapError
from .grid import Grid, GridDensity, make_uniform_grid, normalize

_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)
# Gaussian tails beyond this many scales carry less than 1e-8 of the mass.
SUPPORT_SCALES = 6.0


# --------------------------------------------------------------------------
# transformations

@dataclass(frozen=True)
class Diffeomorphism:
    """Increasing smooth bijection of the real line (or part of it).

    Parameters
    ----------
    forward, inverse : callable
        Vectorized maps ``t -> phi(t)`` and ``y -> phi^{-1}(y)``.
    derivative : callable
        ``t -> phi'(t)``, positive on the working interval.
    name : str
    """

    forward: Callable
    inverse: Callable
    derivative: Callable
    name: str = "map"

    def inverse_derivative(self, y):
        """Derivative of the inverse map at ``y``."""
        return 1.0 / self.derivative(self.inverse(y))

    def inverted(self) -> "Diffeomorphism":
        return Diffeomorphism(self.inverse, self.forward,
                              self.inverse_derivative, f"inv({self.name})")

    def check(self, lo: float, hi: float, n_probe: int = 100) -> None:
        """Verify round trip and monotonicity on ``[lo, hi]``."""
        t = np.linspace(lo, hi, n_probe)
        if np.any(~(self.derivative(t) > 0)):
            raise NonMonotoneMapError(f"{self.name} is not increasing on [{lo}, {hi}]")
        y = self.forward(t)
        back = self.forward(self.inverse(y))
        if not np.allclose(back, y, rtol=1e-9, atol=0):
            raise ValueError(f"{self.name}: inverse does not invert forward")

    @classmethod
    def identity(cls) -> "Diffeomorphism":
        return cls(lambda t: np.asarray(t, dtype=float) * 1.0,
                   lambda y: np.asarray(y, dtype=float) * 1.0,
                   lambda t: np.ones_like(np.asarray(t, dtype=float)),
                   "identity")

    @classmethod
    def exp(cls) -> "Diffeomorphism":
        return cls(np.exp, np.log, np.exp, "exp")

    @classmethod
    def log(cls) -> "Diffeomorphism":
        return cls.exp().inverted()

    @classmethod
    def affine(cls, scale: float, shift: float = 0.0) -> "Diffeomorphism":
        if not scale > 0:
            raise NonMonotoneMapError("affine map needs a positive scale")
        return cls(lambda t: scale * np.asarray(t, dtype=float) + shift,
                   lambda y: (np.asarray(y, dtype=float) - shift) / scale,
                   lambda t: np.full_like(np.asarray(t, dtype=float), scale),
                   f"affine({scale:g},{shift:g})")


# --------------------------------------------------------------------------
# models

class LikelihoodModel:
    """Interface for ``p(x | theta)`` with a real parameter and measurement.

    Subclasses implement :meth:`log_density`, :meth:`sample` and
    :meth:`x_support`. :meth:`fisher` returns the analytic Fisher information
    or ``None`` when it has to be computed numerically.
    """

    def log_density(self, x, theta):
        raise NotImplementedError

    def sample(self, theta, rng: np.random.Generator):
        raise NotImplementedError

    def x_support(self, lo: float, hi: float) -> tuple[float, float]:
        """Measurement interval carrying the mass for parameters in ``[lo, hi]``."""
        raise NotImplementedError

    def fisher(self, theta):
        return None

    def density(self, x, theta):
        return np.exp(self.log_density(x, theta))

    def config(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} has no JSON form")


@dataclass(frozen=True)
class GaussianLocationModel(LikelihoodModel):
    """``x | theta ~ N(theta, sigma^2)``."""

    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"sigma must be positive, got {self.sigma}")

    def log_density(self, x, theta):
        z = (np.asarray(x, dtype=float) - theta) / self.sigma
        with np.errstate(over="ignore"):
            # overflow gives -inf, i.e. zero density
            return -0.5 * z * z - _LOG_SQRT_2PI - math.log(self.sigma)

    def sample(self, theta, rng):
        theta = np.asarray(theta, dtype=float)
        return theta + self.sigma * rng.standard_normal(theta.shape)

    def x_support(self, lo, hi):
        return lo - SUPPORT_SCALES * self.sigma, hi + SUPPORT_SCALES * self.sigma

    def fisher(self, theta):
        return np.full_like(np.asarray(theta, dtype=float), 1.0 / self.sigma**2)

    def config(self):
        return {"model": "gauss-location", "sigma": self.sigma}


@dataclass(frozen=True)
class ReparametrizedModel(LikelihoodModel):
    """Model in the coordinates ``theta~ = phi(theta)``.

    ``p(x | theta~) = p(x | theta = phi^{-1}(theta~))``. The analytic Fisher
    information of the base model is deliberately not carried over.
    """

    base: LikelihoodModel
    phi: Diffeomorphism

    def log_density(self, x, theta):
        return self.base.log_density(x, self.phi.inverse(theta))

    def sample(self, theta, rng):
        return self.base.sample(self.phi.inverse(theta), rng)

    def x_support(self, lo, hi):
        return self.base.x_support(float(self.phi.inverse(lo)),
                                   float(self.phi.inverse(hi)))


@dataclass(frozen=True)
class MeasurementTransformedModel(LikelihoodModel):
    """Model for ``x~ = psi(x)``: density ``|psi^{-1}'(x~)| p(psi^{-1}(x~) | theta)``."""

    base: LikelihoodModel
    psi: Diffeomorphism

    def log_density(self, x, theta):
        x = np.asarray(x, dtype=float)
        return (self.base.log_density(self.psi.inverse(x), theta)
                + np.log(self.psi.inverse_derivative(x)))

    def sample(self, theta, rng):
        return self.psi.forward(self.base.sample(theta, rng))

    def x_support(self, lo, hi):
        a, b = self.base.x_support(lo, hi)
        return float(self.psi.forward(a)), float(self.psi.forward(b))

    def fisher(self, theta):
        # Fisher information does not see invertible transforms of the data
        return self.base.fisher(theta)


@dataclass(frozen=True)
class TwoPointModel:
    """Parameter with two states, each with a Gaussian measurement density."""

    means: tuple[float, float] = (2.0, 4.0)
    sds: tuple[float, float] = (1.0, 1.0)
    labels: tuple[str, str] = ("theta1", "theta2")

    def __post_init__(self):
        if len(self.means) != 2 or len(self.sds) != 2:
            raise ConfigError("two-point model needs two means and two sds")
        if min(self.sds) <= 0:
            raise ConfigError("two-point model sds must be positive")

    def log_densities(self, x) -> np.ndarray:
        """Array of shape ``(2, len(x))`` with ``log p(x | theta_k)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        mu = np.asarray(self.means, dtype=float)[:, None]
        sd = np.asarray(self.sds, dtype=float)[:, None]
        z = (x[None, :] - mu) / sd
        return -0.5 * z * z - _LOG_SQRT_2PI - np.log(sd)

    def x_support(self) -> tuple[float, float]:
        lo = min(m - SUPPORT_SCALES * s for m, s in zip(self.means, self.sds))
        hi = max(m + SUPPORT_SCALES * s for m, s in zip(self.means, self.sds))
        return lo, hi

    def config(self):
        return {"model": "two-point", "means": list(self.means),
                "sds": list(self.sds)}


def model_from_config(cfg: dict):
    """Build a model from its JSON description.

    ``{"model": "gauss-location", "sigma": 0.3}`` or
    ``{"model": "two-point", "means": [2, 4], "sds": [1, 1]}``.
    """
    kind = cfg.get("model")
    try:
        if kind == "gauss-location":
            return GaussianLocationModel(float(cfg["sigma"]))
        if kind == "two-point":
            return TwoPointModel(tuple(float(m) for m in cfg.get("means", (2, 4))),
                                 tuple(float(s) for s in cfg.get("sds", (1, 1))))
    except KeyError as exc:
        raise ConfigError(f"model config is missing {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad model config: {exc}") from None
    raise ConfigError(f"unknown model {kind!r}")


def transform_model(model: LikelihoodModel, phi: Diffeomorphism) -> LikelihoodModel:
    """Express ``model`` in the parameter coordinates ``phi(theta)``."""
    return ReparametrizedModel(model, phi)


def transform_dataset(model: LikelihoodModel, psi: Diffeomorphism,
                      data: "Dataset") -> tuple[LikelihoodModel, "Dataset"]:
    """Map measurements through ``psi`` and return the matching model."""
    return (MeasurementTransformedModel(model, psi),
            Dataset(psi.forward(data.points)))


# --------------------------------------------------------------------------
# data

@dataclass(frozen=True, eq=False)
class Dataset:
    """Measurements ``x_1, ..., x_M``."""

    points: np.ndarray = field()

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1)
        if not np.all(np.isfinite(pts)):
            raise ConfigError("data must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def M(self) -> int:
        return self.points.size

    def __len__(self):
        return self.M

    def without(self, m: int) -> "Dataset":
        return Dataset(np.delete(self.points, m))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x"])
            for x in self.points:
                w.writerow([f"{x:.17g}"])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with Path(path).open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or "x" not in reader.fieldnames:
                raise ConfigError(f"{path}: expected a header with column 'x'")
            try:
                return cls([float(r["x"]) for r in reader])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}: {exc}") from None


# --------------------------------------------------------------------------
# priors and sampling

def bimodal_truth(grid: Grid | None = None) -> GridDensity:
    """Equal mixture of N(1, 0.5^2) and N(3, 0.5^2) truncated to [0, 4].

    Evaluated on ``grid`` (default: 200 equidistant nodes on [0, 4]) and
    renormalized there.
    """
    if grid is None:
        grid = make_uniform_grid(0.0, 4.0, 200)
    t = grid.nodes
    vals = 0.5 * (np.exp(-0.5 * ((t - 1.0) / 0.5) ** 2)
                  + np.exp(-0.5 * ((t - 3.0) / 0.5) ** 2)) / (0.5 * math.sqrt(2 * math.pi))
    vals = np.where((t >= 0.0) & (t <= 4.0), vals, 0.0)
    return normalize(vals, grid)


def grid_cdf(p: GridDensity) -> np.ndarray:
    """Piecewise-linear-density CDF at the nodes (cumulative trapezoid)."""
    v, t = p.values, p.grid.nodes
    c = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))])
    return c / c[-1]


def sample_grid_density(p: GridDensity, size, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws with the CDF linearly interpolated between nodes."""
    u = rng.random(size)
    return np.interp(u, grid_cdf(p), p.grid.nodes)


def sample_dataset(model: LikelihoodModel, true_prior, M: int, seed: int) -> Dataset:
    """Draw ``theta_m ~ true_prior`` then ``x_m ~ p(x | theta_m)``.

    ``true_prior`` is a :class:`GridDensity` or a callable
    ``(rng, size) -> thetas``. The result depends only on ``seed``.
    """
    if int(M) != M or M < 1:
        raise ConfigError(f"M must be a positive integer, got {M}")
    rng = np.random.default_rng(seed)
    if isinstance(true_prior, GridDensity):
        theta = sample_grid_density(true_prior, int(M), rng)
    else:
        theta = np.asarray(true_prior(rng, int(M)), dtype=float)
    return Dataset(model.sample(theta, rng))


# --------------------------------------------------------------------------
# marginal likelihood

def log_likelihood_matrix(model: LikelihoodModel, x, theta) -> np.ndarray:
    """``log p(x_m | theta_j)`` as an array of shape ``(len(x), len(theta))``."""
    x = np.asarray(x, dtype=float).reshape(-1, 1)
    theta = np.asarray(theta, dtype=float).reshape(1, -1)
    return np.broadcast_to(model.log_density(x, theta),
                           (x.shape[0], theta.shape[1])).astype(float)


def _log_masses(prior: GridDensity) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(prior.masses)


def marginal_density(model: LikelihoodModel, prior: GridDensity, x):
    """Prior predictive density ``sum_j p(x | theta_j) w_j weight_j``.

    Scalar in, scalar out; arrays are handled elementwise.
    """
    scalar = np.ndim(x) == 0
    logA = log_likelihood_matrix(model, np.atleast_1d(x), prior.grid.nodes)
    out = np.exp(logsumexp(logA + _log_masses(prior), axis=1))
    return float(out[0]) if scalar else out


def log_marginal_densities(model: LikelihoodModel, prior: GridDensity,
                           data: Dataset) -> np.ndarray:
    """``log p(x_m | prior)`` for every observation, via log-sum-exp."""
    logA = log_likelihood_matrix(model, data.points, prior.grid.nodes)
    return logsumexp(logA + _log_masses(prior), axis=1)


def log_marginal_likelihood(model: LikelihoodModel, prior: GridDensity,
                            data: Dataset) -> float:
    """``log L(prior) = sum_m log p(x_m | prior)``."""
    if data.M < 1:
        raise ConfigError("need at least one observation")
    terms = log_marginal_densities(model, prior, data)
    if np.any(~np.isfinite(terms)):
        bad = int(np.flatnonzero(~np.isfinite(terms))[0])
        raise DegenerateLikelihoodError(
            f"observation {bad} (x={data.points[bad]:g}) has zero marginal density")
    return float(math.fsum(terms))


def load_config(path) -> dict:
    try:
        with Path(path).open(encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
