"""Maximum (penalized) marginal likelihood on a parameter grid.

The unknown is the vector of node masses ``m_j = w_j * weight_j`` on the
probability simplex. The unpenalized problem is solved by EM; penalized
problems by exponentiated-gradient (mirror) ascent in mass coordinates,

    m_j <- m_j * exp(eta * dF/dm_j),   then renormalize,

with Nesterov extrapolation in log-mass coordinates, backtracking on ``eta``,
and a restart whenever an extrapolated step fails to improve the objective.
Every iterate stays strictly positive and exactly on the simplex.

The solver runs a *batch* of problems that share the observations but weight
them differently (one row of weights per problem). A single fit is a batch of
one; leave-one-out cross-validation solves all folds together.

Convergence is certified by a duality gap: linearizing only the concave
log-likelihood and maximizing the linearization minus the exact penalty over
the simplex gives an upper bound on the optimal objective. The gap is zero
exactly at the optimum and is invariant under additive shifts of the
log-likelihood.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DegenerateLikelihoodError, NumericalError
from .grid import Grid, GridDensity, normalize, uniform_density, write_density_csv
from .information import PenaltySpec
from .models import Dataset, LikelihoodModel, log_likelihood_matrix

log = logging.getLogger(__name__)

MIN_STEP = 1e-16
_CHECK_EVERY = 10


@dataclass(frozen=True)
class SolverConfig:
    """Stopping and step-size settings.

    Attributes
    ----------
    max_iters : int
    tol : float
        Stop once the certified remaining objective increase is below
        ``tol * max(1, n_obs)``. EM instead stops on relative objective change
        below ``tol``.
    step_rule : {"backtracking", "fixed"}
        ``fixed`` takes plain multiplicative steps of size ``eta0`` without
        extrapolation or line search.
    eta0, shrink, growth : float
        Initial step, backtracking factor, growth after an accepted step.
    floor : float
        Smallest density value kept, so masses never underflow to zero.
    """

    max_iters: int = 5000
    tol: float = 1e-9
    step_rule: str = "backtracking"
    eta0: float = 1.0
    shrink: float = 0.5
    growth: float = 1.1
    floor: float = 1e-300

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError("max_iters must be a positive integer")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.step_rule not in ("backtracking", "fixed"):
            raise ConfigError(f"unknown step rule {self.step_rule!r}")
        if not self.eta0 > 0 or not 0 < self.shrink < 1 or not self.growth >= 1:
            raise ConfigError("invalid step-size parameters")
        if not self.floor >= 0:
            raise ConfigError("floor must be nonnegative")

    def as_dict(self) -> dict:
        return {"max_iters": self.max_iters, "tol": self.tol,
                "step_rule": self.step_rule, "eta0": self.eta0,
                "shrink": self.shrink, "growth": self.growth, "floor": self.floor}


@dataclass
class EstimationResult:
    """Outcome of a fit.

    ``gap`` is the certified bound on how much the objective could still
    increase (NaN for EM). ``status`` is ``"converged"``, ``"max-iters"`` or
    ``"no-progress"``.
    """

    prior: GridDensity
    gamma: float
    penalty: PenaltySpec
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    gradient_norm_final: float
    loglik: float = math.nan
    penalty_value: float = math.nan
    gap: float = math.nan
    status: str = "converged"
    method: str = "mirror-ascent"

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])

    def write(self, out_dir) -> None:
        """Write ``prior.csv`` and ``trace.csv`` into ``out_dir``."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_density_csv(self.prior, out / "prior.csv")
        with (out / "trace.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "objective"])
            for i, v in enumerate(self.objective_trace):
                w.writerow([i, f"{v:.17g}"])


# --------------------------------------------------------------------------
# objective

class _Objective:
    """``sum_i W[f, i] log p(x_i | m_f) - gamma * Phi(m_f)`` for each row ``f``.

    Works on masses ``m`` of shape ``(F, J)``.
    """

    def __init__(self, logA: np.ndarray, weights: np.ndarray, grid: Grid,
                 penalty: PenaltySpec, gamma: float):
        self.logA = logA
        self.shift = logA.max(axis=1)
        if not np.all(np.isfinite(self.shift)):
            bad = int(np.flatnonzero(~np.isfinite(self.shift))[0])
            raise DegenerateLikelihoodError(
                f"observation {bad} has zero likelihood at every grid node")
        self.A = np.exp(logA - self.shift[:, None])
        self.W = np.atleast_2d(np.asarray(weights, dtype=float))
        self.const = self.W @ self.shift
        self.n_obs = self.W.sum(axis=1)
        self.delta = grid.weights
        self.log_delta = np.log(grid.weights)
        self.kind = penalty.kind
        self.gamma = float(gamma) if penalty.kind != "none" else 0.0
        if penalty.kind == "missing_info":
            # log of reference masses
            self.log_ref = np.log(penalty.reference.values) + self.log_delta
        elif penalty.kind == "neg_entropy":
            self.log_ref = self.log_delta
        else:
            self.log_ref = None

    # log-likelihood -------------------------------------------------------
    def _log_s(self, m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # S[f, i] = sum_j A_ij m_fj in units of exp(shift_i)
        S = m @ self.A.T
        bad = (S <= 0) & (self.W > 0)
        with np.errstate(divide="ignore"):
            logS = np.log(S)
        if np.any(bad):
            for f, i in zip(*np.nonzero(bad)):
                with np.errstate(divide="ignore"):
                    logS[f, i] = logsumexp(self.logA[i] - self.shift[i] + np.log(m[f]))
            if np.any(~np.isfinite(logS[bad])):
                raise DegenerateLikelihoodError(
                    "an observation has zero marginal density under the prior")
        return S, logS

    def loglik(self, m: np.ndarray) -> np.ndarray:
        _, logS = self._log_s(m)
        return self.const + np.sum(np.where(self.W > 0, self.W * logS, 0.0), axis=1)

    def loglik_grad(self, m: np.ndarray, S: np.ndarray, logS: np.ndarray) -> np.ndarray:
        if np.all(S[self.W > 0] > 0):
            with np.errstate(divide="ignore", invalid="ignore"):
                R = np.where(self.W > 0, self.W / S, 0.0)
            return R @ self.A
        # underflowed rows: ratios in the log domain
        out = np.empty_like(m)
        for f in range(m.shape[0]):
            rows = self.W[f] > 0
            lr = self.logA[rows] - self.shift[rows, None] - logS[f, rows, None]
            out[f] = self.W[f, rows] @ np.exp(lr)
        return out

    # penalty ----------------------------------------------------------------
    def penalty(self, m: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(m.shape[0])
        if self.kind == "tikhonov":
            return np.sum(m * m / self.delta, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(m > 0, m * (np.log(m) - self.log_ref), 0.0)
        val = t.sum(axis=1)
        # int w log w = KL(m || weights) over the masses
        return val

    def penalty_grad(self, m: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return np.zeros_like(m)
        if self.kind == "tikhonov":
            return 2.0 * m / self.delta
        with np.errstate(divide="ignore"):
            return np.log(m) - self.log_ref + 1.0

    # combined ---------------------------------------------------------------
    def value(self, m: np.ndarray) -> np.ndarray:
        ll = self.loglik(m)
        if self.gamma == 0.0:
            return ll
        return ll - self.gamma * self.penalty(m)

    def value_and_grad(self, m: np.ndarray):
        S, logS = self._log_s(m)
        ll = self.const + np.sum(np.where(self.W > 0, self.W * logS, 0.0), axis=1)
        a = self.loglik_grad(m, S, logS)
        if self.gamma == 0.0:
            return ll, a, a
        return (ll - self.gamma * self.penalty(m), a,
                a - self.gamma * self.penalty_grad(m))

    def gap(self, m: np.ndarray, a: np.ndarray) -> np.ndarray:
        """Upper bound on ``max F - F(m)`` from the linearized log-likelihood."""
        am = np.sum(a * m, axis=1)
        if self.gamma == 0.0:
            return a.max(axis=1) - am
        g = self.gamma
        if self.kind == "tikhonov":
            return np.array([_quadratic_simplex_max(a[f], self.delta, g)
                             for f in range(m.shape[0])]) - am + g * self.penalty(m)
        lin = g * logsumexp(a / g + self.log_ref, axis=1)
        return lin - am + g * self.penalty(m)


def _quadratic_simplex_max(a: np.ndarray, delta: np.ndarray, gamma: float) -> float:
    """``max <a, m> - gamma * sum m^2 / delta`` over the probability simplex."""
    # optimum m_j = delta_j * max(0, a_j - lam) / (2 gamma) with sum m = 1
    order = np.argsort(-a)
    a_s, d_s = a[order], delta[order]
    cd = np.cumsum(d_s)
    cad = np.cumsum(a_s * d_s)
    lam = (cad - 2.0 * gamma) / cd
    # largest k whose threshold leaves all k leading entries active
    k = int(np.nonzero(a_s > lam)[0].max())
    lam_k = lam[k]
    m = delta * np.maximum(0.0, a - lam_k) / (2.0 * gamma)
    return float(a @ m - gamma * np.sum(m * m / delta))


# --------------------------------------------------------------------------
# batch solvers

@dataclass
class _BatchOutcome:
    masses: np.ndarray
    objective: np.ndarray
    iterations: np.ndarray
    status: list
    gap: np.ndarray
    grad_norm: np.ndarray
    traces: list = field(default_factory=list)


def _normalize_rows(m: np.ndarray, floor_mass: np.ndarray) -> np.ndarray:
    m = m / m.sum(axis=1, keepdims=True)
    return np.maximum(m, floor_mass)


def _softmax_rows(u: np.ndarray, floor_mass: np.ndarray) -> np.ndarray:
    e = np.exp(u - u.max(axis=1, keepdims=True))
    return _normalize_rows(e, floor_mass)


def _mirror_ascent(obj: _Objective, m0: np.ndarray, config: SolverConfig,
                   record: bool = False) -> _BatchOutcome:
    """Accelerated exponentiated-gradient ascent for every row of ``m0``."""
    F_rows = m0.shape[0]
    floor_mass = config.floor * obj.delta
    m = _normalize_rows(np.array(m0, dtype=float), floor_mass)
    u = np.log(m)
    u_prev = u.copy()
    fx = obj.value(m)
    eta = np.full(F_rows, config.eta0)
    k_mom = np.zeros(F_rows)
    iters = np.zeros(F_rows, dtype=int)
    status = ["max-iters"] * F_rows
    gap = np.full(F_rows, np.inf)
    active = np.ones(F_rows, dtype=bool)
    thresholds = config.tol * np.maximum(1.0, obj.n_obs)
    traces = [[float(v)] for v in fx] if record else []
    fixed = config.step_rule == "fixed"

    def sub(rows):
        o = object.__new__(_Objective)
        o.__dict__.update(obj.__dict__)
        o.W, o.const, o.n_obs = obj.W[rows], obj.const[rows], obj.n_obs[rows]
        return o

    for it in range(1, config.max_iters + 1):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        ob = obj if rows.size == F_rows else sub(rows)
        beta = 0.0 if fixed else (k_mom[rows] / (k_mom[rows] + 3.0))[:, None]
        y = u[rows] + beta * (u[rows] - u_prev[rows])
        my = _softmax_rows(y, floor_mass)
        fy, _, gy = ob.value_and_grad(my)
        gy = gy - gy.max(axis=1, keepdims=True)
        et = eta[rows]
        un = y + et[:, None] * gy
        mn = _softmax_rows(un, floor_mass)
        fn = ob.value(mn)
        failed = np.zeros(rows.size, dtype=bool)
        if not fixed:
            todo = fn < fy
            while np.any(todo):
                et[todo] *= config.shrink
                failed |= todo & (et < MIN_STEP)
                todo &= ~failed
                if not np.any(todo):
                    break
                idx = np.flatnonzero(todo)
                un[idx] = y[idx] + et[idx, None] * gy[idx]
                mn[idx] = _softmax_rows(un[idx], floor_mass)
                fn[idx] = sub(rows[idx]).value(mn[idx])
                todo[idx] = fn[idx] < fy[idx]
        improved = (fn >= fx[rows]) & ~failed
        if fixed:
            improved[:] = True
        acc = rows[improved]
        u_prev[acc] = u[acc]
        m[acc] = mn[improved]
        u[acc] = np.log(m[acc])
        fx[acc] = fn[improved]
        if not fixed:
            eta[acc] = et[improved] * config.growth
        k_mom[acc] += 1
        # restart extrapolation where the step did not improve
        rej = rows[~improved]
        stuck = rej[(k_mom[rej] == 0) & failed[~improved]]
        k_mom[rej] = 0
        u_prev[rej] = u[rej]
        eta[rej] = np.maximum(et[~improved], MIN_STEP)
        for f in stuck:
            status[f] = "no-progress"
            active[f] = False
        iters[rows] = it
        if record:
            for f in rows:
                traces[f].append(float(fx[f]))
        if it % _CHECK_EVERY == 0 or it == config.max_iters:
            live = np.flatnonzero(active)
            if live.size:
                ob = obj if live.size == F_rows else sub(live)
                _, a, _ = ob.value_and_grad(m[live])
                gap[live] = ob.gap(m[live], a)
                done = live[gap[live] <= thresholds[live]]
                for f in done:
                    status[f] = "converged"
                active[done] = False

    _, a, g = obj.value_and_grad(m)
    final_gap = obj.gap(m, a)
    gbar = np.sum(m * g, axis=1, keepdims=True)
    grad_norm = np.sqrt(np.sum(m * (g - gbar) ** 2, axis=1))
    for f in range(F_rows):
        if status[f] == "max-iters" and final_gap[f] <= thresholds[f]:
            status[f] = "converged"
    return _BatchOutcome(m, fx, iters, status, final_gap, grad_norm, traces)


def _em(obj: _Objective, m0: np.ndarray, config: SolverConfig,
        record: bool = False) -> _BatchOutcome:
    """Fixed-point EM ``m_j <- m_j * mean_i A_ij / p(x_i | m)`` for each row."""
    F_rows = m0.shape[0]
    m = np.array(m0, dtype=float)
    m /= m.sum(axis=1, keepdims=True)
    ll = obj.loglik(m)
    iters = np.zeros(F_rows, dtype=int)
    status = ["max-iters"] * F_rows
    active = np.ones(F_rows, dtype=bool)
    traces = [[float(v)] for v in ll] if record else []
    for it in range(1, config.max_iters + 1):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        W = obj.W[rows]
        S, logS = obj._log_s(m[rows]) if rows.size == F_rows else _sub_log_s(obj, rows, m[rows])
        sub_obj = object.__new__(_Objective)
        sub_obj.__dict__.update(obj.__dict__)
        sub_obj.W = W
        a = sub_obj.loglik_grad(m[rows], S, logS)
        new = m[rows] * a / obj.n_obs[rows, None]
        new /= new.sum(axis=1, keepdims=True)
        sub_obj.const = obj.const[rows]
        new_ll = sub_obj.loglik(new)
        drop = ll[rows] - new_ll
        if np.any(drop > 1e-10):
            raise NumericalError(
                f"EM decreased the log-likelihood by {drop.max():.3g}")
        change = np.abs(new_ll - ll[rows])
        m[rows] = new
        ll_old = ll[rows]
        ll[rows] = new_ll
        iters[rows] = it
        if record:
            for f in rows:
                traces[f].append(float(ll[f]))
        done = change <= config.tol * np.maximum(1.0, np.abs(ll_old))
        for f in rows[done]:
            status[f] = "converged"
        active[rows[done]] = False

    _, a, _ = obj.value_and_grad(m)
    gap = a.max(axis=1) - np.sum(a * m, axis=1)
    gbar = np.sum(m * a, axis=1, keepdims=True)
    grad_norm = np.sqrt(np.sum(m * (a - gbar) ** 2, axis=1))
    return _BatchOutcome(m, ll, iters, status, gap, grad_norm, traces)


def _sub_log_s(obj: _Objective, rows, m):
    o = object.__new__(_Objective)
    o.__dict__.update(obj.__dict__)
    o.W = obj.W[rows]
    return o._log_s(m)


# --------------------------------------------------------------------------
# public entry points

def _check_inputs(data: Dataset, gamma: float) -> None:
    if data.M < 1:
        raise ConfigError("need at least one observation")
    if not (gamma >= 0 and math.isfinite(gamma)):
        raise ConfigError(f"gamma must be finite and >= 0, got {gamma}")


def _initial_masses(grid: Grid, init: GridDensity | None) -> np.ndarray:
    if init is None:
        return uniform_density(grid).masses[None, :]
    if init.grid != grid:
        raise ConfigError("initial density lives on a different grid")
    return init.masses[None, :]


def _as_result(out: _BatchOutcome, grid: Grid, obj: _Objective, penalty: PenaltySpec,
               gamma: float, method: str) -> EstimationResult:
    m = out.masses[0]
    prior = normalize(m / grid.weights, grid)
    ll = float(obj.loglik(out.masses)[0])
    pen = float(obj.penalty(out.masses)[0])
    trace = np.array(out.traces[0]) if out.traces else np.array([out.objective[0]])
    status = out.status[0]
    if status == "no-progress":
        log.warning("solver stopped without progress (gap %.3g)", out.gap[0])
    return EstimationResult(
        prior=prior, gamma=float(gamma), penalty=penalty, objective_trace=trace,
        iterations=int(out.iterations[0]), converged=status == "converged",
        gradient_norm_final=float(out.grad_norm[0]), loglik=ll, penalty_value=pen,
        gap=float(out.gap[0]), status=status, method=method)


def em_npmle(model: LikelihoodModel, data: Dataset, g: Grid,
             config: SolverConfig | None = None, init: GridDensity | None = None,
             ) -> EstimationResult:
    """Nonparametric maximum likelihood prior on ``g`` by EM.

    The log-likelihood is checked to be non-decreasing at every iteration.
    Nodes with zero starting mass keep zero mass.
    """
    config = config or SolverConfig()
    _check_inputs(data, 0.0)
    logA = log_likelihood_matrix(model, data.points, g.nodes)
    penalty = PenaltySpec("none")
    obj = _Objective(logA, np.ones((1, data.M)), g, penalty, 0.0)
    out = _em(obj, _initial_masses(g, init), config, record=True)
    res = _as_result(out, g, obj, penalty, 0.0, "em")
    res.gap = math.nan
    return res


def solve_mple(model: LikelihoodModel, data: Dataset, g: Grid, penalty: PenaltySpec,
               gamma: float, config: SolverConfig | None = None,
               init: GridDensity | None = None) -> EstimationResult:
    """Maximize ``log L(pi) - gamma * Phi(pi)`` over densities on ``g``.

    ``gamma == 0`` (or ``penalty.kind == "none"``) is delegated to
    :func:`em_npmle`. For ``missing_info`` without an explicit reference the
    Jeffreys prior of ``model`` on ``g`` is used.
    """
    config = config or SolverConfig()
    _check_inputs(data, gamma)
    if gamma == 0 or penalty.kind == "none":
        res = em_npmle(model, data, g, config, init)
        res.penalty = penalty
        return res
    penalty = penalty.resolve(model, g)
    logA = log_likelihood_matrix(model, data.points, g.nodes)
    obj = _Objective(logA, np.ones((1, data.M)), g, penalty, gamma)
    out = _mirror_ascent(obj, _initial_masses(g, init), config, record=True)
    return _as_result(out, g, obj, penalty, gamma, "mirror-ascent")


def fit_batch(model: LikelihoodModel, data: Dataset, g: Grid, penalty: PenaltySpec,
              gamma: float, weights: np.ndarray, config: SolverConfig | None = None,
              ) -> tuple[np.ndarray, list]:
    """Fit one prior per row of observation ``weights`` (shape ``(F, M)``).

    Returns node masses of shape ``(F, J)`` and the per-row status strings.
    Every row starts from the uniform density.
    """
    config = config or SolverConfig()
    _check_inputs(data, gamma)
    weights = np.atleast_2d(np.asarray(weights, dtype=float))
    if weights.shape[1] != data.M:
        raise ConfigError("weights need one column per observation")
    m0 = np.repeat(uniform_density(g).masses[None, :], weights.shape[0], axis=0)
    logA = log_likelihood_matrix(model, data.points, g.nodes)
    if gamma == 0 or penalty.kind == "none":
        obj = _Objective(logA, weights, g, PenaltySpec("none"), 0.0)
        out = _em(obj, m0, config)
    else:
        penalty = penalty.resolve(model, g)
        obj = _Objective(logA, weights, g, penalty, gamma)
        out = _mirror_ascent(obj, m0, config)
    return out.masses, out.status


def objective_and_gradient(model: LikelihoodModel, data: Dataset, p, penalty: PenaltySpec,
                           gamma: float, grid: Grid | None = None):
    """Objective ``log L - gamma * Phi`` and its gradient in the node values.

    ``p`` is a :class:`GridDensity` or an array of positive node values on
    ``grid`` (need not be normalized). The gradient component ``j`` is

        sum_m p(x_m|theta_j) weight_j / p(x_m|p) - gamma * dPhi/dw_j.
    """
    if isinstance(p, GridDensity):
        grid = p.grid
        w = p.values
    else:
        if grid is None:
            raise ConfigError("a grid is required with raw node values")
        w = np.asarray(p, dtype=float)
    _check_inputs(data, gamma)
    penalty = penalty.resolve(model, grid)
    logA = log_likelihood_matrix(model, data.points, grid.nodes)
    obj = _Objective(logA, np.ones((1, data.M)), grid, penalty, gamma)
    if penalty.kind in ("missing_info", "neg_entropy") and gamma > 0 and np.any(w <= 0):
        raise ConfigError("penalty needs a strictly positive density")
    m = (w * grid.weights)[None, :]
    value, _, grad = obj.value_and_grad(m)
    return float(value[0]), grad[0] * grid.weights
