"""Fisher information, Jeffreys prior, mutual information and penalties.

All penalties are functionals of a :class:`~empref.grid.GridDensity`. The
missing-information penalty is the KL divergence from the (grid-normalized)
Jeffreys prior; it is the only one here that does not depend on the choice of
parameter coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, NonPositiveInformationError
from .grid import (
    Grid,
    GridDensity,
    kl_divergence,
    make_nonuniform_grid,
    neg_entropy,
    normalize,
    trapezoid_weights,
)
from .models import (
    LikelihoodModel,
    TwoPointModel,
    log_likelihood_matrix,
    sample_grid_density,
)

N_X = 2001

PENALTY_KINDS = ("none", "tikhonov", "neg_entropy", "missing_info")
_ALIASES = {"neg-entropy": "neg_entropy", "missing-info": "missing_info",
            "entropy": "neg_entropy", "l2": "tikhonov"}


def fisher_information(model: LikelihoodModel, theta: float, n_x: int = N_X) -> float:
    """Fisher information ``E[(d/dtheta log p(x|theta))^2]`` at ``theta``.

    Uses the model's analytic form when it has one. Otherwise the score is a
    central difference with step ``1e-5 * (1 + |theta|)`` and the expectation is
    a trapezoid rule with ``n_x`` nodes over the model's measurement support.
    """
    analytic = model.fisher(theta)
    if analytic is not None:
        value = float(analytic)
    else:
        lo, hi = model.x_support(theta, theta)
        x = np.linspace(lo, hi, n_x)
        w = trapezoid_weights(x)
        h = 1e-5 * (1.0 + abs(theta))
        score = (model.log_density(x, theta + h) - model.log_density(x, theta - h)) / (2 * h)
        p = np.exp(model.log_density(x, theta))
        value = float(np.sum(w * p * score**2))
    if not value > 0 or not math.isfinite(value):
        raise NonPositiveInformationError(
            f"Fisher information at theta={theta:g} is {value!r}")
    return value


def jeffreys_prior(model: LikelihoodModel, g: Grid) -> GridDensity:
    """Density proportional to ``sqrt(i(theta))``, normalized on ``g``."""
    info = np.array([fisher_information(model, float(t)) for t in g.nodes])
    return normalize(np.sqrt(info), g)


# --------------------------------------------------------------------------
# penalties

def penalty_tikhonov(p: GridDensity) -> float:
    """Squared L2 norm ``int p^2``."""
    return float(p.values**2 @ p.grid.weights)


def penalty_missing_info(p: GridDensity, ref: GridDensity) -> float:
    """``KL(p || ref)`` with ``ref`` the normalized Jeffreys prior."""
    return kl_divergence(p, ref)


@dataclass(frozen=True)
class PenaltySpec:
    """Which penalty to subtract from the marginal log-likelihood.

    Parameters
    ----------
    kind : {"none", "tikhonov", "neg_entropy", "missing_info"}
    reference : GridDensity, optional
        Reference density for ``missing_info``. When omitted it is filled in
        with the Jeffreys prior of the model on the estimation grid (see
        :meth:`resolve`).
    """

    kind: str = "missing_info"
    reference: GridDensity | None = None

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in PENALTY_KINDS:
            raise ConfigError(f"unknown penalty {self.kind!r}; "
                              f"choose from {', '.join(PENALTY_KINDS)}")
        object.__setattr__(self, "kind", kind)
        if self.reference is not None:
            if kind != "missing_info":
                raise ConfigError("a reference density only applies to missing_info")
            if np.any(self.reference.values <= 0):
                raise ConfigError("missing_info reference must be strictly positive")

    def resolve(self, model: LikelihoodModel, g: Grid) -> "PenaltySpec":
        """Return a copy with the Jeffreys reference attached where needed."""
        if self.kind != "missing_info":
            return self
        if self.reference is not None:
            if self.reference.grid != g:
                raise ConfigError("penalty reference lives on a different grid")
            return self
        return PenaltySpec("missing_info", jeffreys_prior(model, g))

    def value(self, p: GridDensity) -> float:
        if self.kind == "none":
            return 0.0
        if self.kind == "tikhonov":
            return penalty_tikhonov(p)
        if self.kind == "neg_entropy":
            return neg_entropy(p)
        if self.reference is None:
            raise ConfigError("unresolved missing_info penalty: call resolve() first")
        return penalty_missing_info(p, self.reference)

    def describe(self) -> dict:
        return {"kind": self.kind}


# --------------------------------------------------------------------------
# mutual information

def _mutual_information(logP: np.ndarray, masses: np.ndarray, xw: np.ndarray) -> float:
    # logP: (n_states, n_x); integral over x of sum_j m_j p_j log(p_j / q)
    keep = masses > 0
    logP, masses = logP[keep], masses[keep]
    logq = logsumexp(logP + np.log(masses)[:, None], axis=0)
    inner = (np.exp(logP) * (logP - logq)) @ xw
    return float(masses @ inner)


def expected_information(model: LikelihoodModel, p: GridDensity, n_x: int = N_X,
                         full_output: bool = False):
    """Mutual information between parameter and one measurement.

    Double trapezoid quadrature: the parameter on the grid of ``p``, the
    measurement on ``n_x`` nodes over the model's support for the grid's range.

    Returns the value clipped at zero; with ``full_output`` also the raw
    quadrature value.
    """
    lo, hi = model.x_support(*p.grid.bounds)
    x = np.linspace(lo, hi, n_x)
    logP = log_likelihood_matrix(model, x, p.grid.nodes).T
    raw = _mutual_information(logP, p.masses, trapezoid_weights(x))
    value = max(raw, 0.0)
    return (value, raw) if full_output else value


def two_point_information(model: TwoPointModel, pi1: float, n_x: int = N_X) -> float:
    """Mutual information for a prior ``(pi1, 1 - pi1)`` on the two states."""
    if not 0.0 <= pi1 <= 1.0:
        raise ConfigError(f"pi1 must lie in [0, 1], got {pi1}")
    if pi1 in (0.0, 1.0):
        return 0.0
    lo, hi = model.x_support()
    x = np.linspace(lo, hi, n_x)
    raw = _mutual_information(model.log_densities(x), np.array([pi1, 1.0 - pi1]),
                              trapezoid_weights(x))
    return max(raw, 0.0)


def information_curve_two_point(model: TwoPointModel, resolution: int = 201,
                                n_x: int = N_X) -> np.ndarray:
    """Mutual information on an equidistant grid of ``pi1`` in [0, 1].

    Returns an array of shape ``(resolution, 2)`` with columns ``pi1`` and the
    mutual information.
    """
    if resolution < 3:
        raise ConfigError("resolution must be at least 3")
    pi1 = np.linspace(0.0, 1.0, resolution)
    info = np.array([two_point_information(model, float(q), n_x) for q in pi1])
    return np.column_stack([pi1, info])


def _refined(p: GridDensity, max_step: float) -> GridDensity:
    gaps = np.diff(p.grid.nodes)
    r = max(1, int(math.ceil(gaps.max() / max_step)))
    if r == 1:
        return p
    frac = np.arange(r) / r
    nodes = (p.grid.nodes[:-1, None] + gaps[:, None] * frac[None, :]).ravel()
    nodes = np.append(nodes, p.grid.nodes[-1])
    g = make_nonuniform_grid(nodes)
    return normalize(np.interp(nodes, p.grid.nodes, p.values), g)


def expected_information_replicated(model: LikelihoodModel, p: GridDensity, N: int,
                                    samples: int = 2000, seed: int = 0,
                                    chunk: int = 4_000_000) -> tuple[float, float]:
    """Monte Carlo mutual information for ``N`` replicated measurements.

    Averages ``log p(x_vec | theta) - log p(x_vec | p)`` over
    ``theta ~ p`` and ``x_vec`` of ``N`` iid draws from ``p(x | theta)``. The
    marginal is a log-domain grid quadrature on a refinement of the grid of
    ``p`` fine enough to resolve the ``N``-observation likelihood.

    Returns
    -------
    estimate, standard_error : float
    """
    if N < 1:
        raise ConfigError("N must be at least 1")
    if samples < 100:
        raise ConfigError("samples must be at least 100")
    # counter-based stream: every draw is fixed by (seed, position)
    rng = np.random.Generator(np.random.Philox(seed))
    theta = sample_grid_density(p, samples, rng)
    x = model.sample(np.repeat(theta[:, None], N, axis=1), rng)

    info_max = max(fisher_information(model, float(t)) for t in p.grid.nodes)
    fine = _refined(p, 1.0 / (8.0 * math.sqrt(N * info_max)))
    with np.errstate(divide="ignore"):
        log_m = np.log(fine.masses)
    nodes = fine.grid.nodes

    diffs = np.empty(samples)
    step = max(1, chunk // (N * nodes.size))
    for s in range(0, samples, step):
        xs = x[s:s + step]
        ll_true = model.log_density(xs, theta[s:s + step, None]).sum(axis=1)
        ll_grid = model.log_density(xs[:, :, None], nodes[None, None, :]).sum(axis=1)
        diffs[s:s + step] = ll_true - logsumexp(ll_grid + log_m, axis=1)
    return float(diffs.mean()), float(diffs.std(ddof=1) / math.sqrt(samples))
