"""End-to-end experiments.

* Reparametrization: estimate a prior on ``[0, 4]`` with a given penalty, push
  it through ``exp`` and compare with the estimate computed directly in the
  transformed coordinates.
* Restriction: estimates on ``[0, 2]`` restricted to ``[0, 1]`` versus fits
  made directly on ``[0, 1]``.
* Two-point model: mutual information and the induced hyperprior as functions
  of the prior weight of the first state.

Every runner can write its inputs and outputs as CSV files into a directory.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .estimation import EstimationResult, SolverConfig, solve_mple
from .grid import (
    Grid,
    GridDensity,
    make_uniform_grid,
    normalize,
    pushforward_density,
    tv_distance,
    uniform_density,
    write_density_csv,
)
from .information import PenaltySpec, information_curve_two_point
from .models import (
    Dataset,
    Diffeomorphism,
    GaussianLocationModel,
    TwoPointModel,
    bimodal_truth,
    grid_cdf,
    sample_dataset,
    transform_model,
)
from .selection import DEFAULT_GAMMAS, loo_cross_validate

SIGMA = 0.3
RESTRICTION_SIGMA = 0.5


def _write_report(rows: dict, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        for k, v in rows.items():
            w.writerow([k, f"{v:.17g}" if isinstance(v, float) else v])


def _on_grid(p: GridDensity, g: Grid) -> GridDensity:
    """Linear interpolation of ``p`` onto ``g`` (zero outside ``p``'s range)."""
    if p.grid == g:
        return p
    return normalize(np.interp(g.nodes, p.grid.nodes, p.values, left=0.0, right=0.0), g)


def local_modes(p: GridDensity) -> np.ndarray:
    """Locations of the local maxima of the node values, endpoints included.

    A flat run of equal maximal values counts once, at its centre.
    """
    v = p.values
    # collapse runs of equal values
    keep = np.concatenate([[True], np.diff(v) != 0])
    idx = np.flatnonzero(keep)
    vals = v[idx]
    run_end = np.append(idx[1:], v.size) - 1
    left = np.concatenate([[-np.inf], vals[:-1]])
    right = np.concatenate([vals[1:], [-np.inf]])
    peaks = np.flatnonzero((vals > left) & (vals > right))
    centre = (idx[peaks] + run_end[peaks]) / 2.0
    return np.interp(centre, np.arange(v.size), p.grid.nodes)


def mass_between(p: GridDensity, lo: float, hi: float) -> float:
    """Mass of ``[lo, hi]`` under the piecewise-linear density."""
    cdf = grid_cdf(p)
    return float(np.interp(hi, p.grid.nodes, cdf) - np.interp(lo, p.grid.nodes, cdf))


# --------------------------------------------------------------------------
# reparametrization

@dataclass
class InvarianceReport:
    """TV distances between pushed-forward and re-estimated priors.

    ``tv`` maps each penalty kind to its distance; ``tv_er`` and ``tv_l2`` are
    the ``missing_info`` and ``tikhonov`` entries (NaN when not run).
    ``gamma_star_original`` / ``gamma_star_transformed`` are filled in when
    gamma is chosen by cross-validation.
    """

    tv: dict
    gamma_used: float
    seed: int
    M: int
    J: int
    grid_mode: str
    transform: str
    gamma_star_original: float = math.nan
    gamma_star_transformed: float = math.nan
    status: dict = field(default_factory=dict)

    @property
    def tv_er(self) -> float:
        return self.tv.get("missing_info", math.nan)

    @property
    def tv_l2(self) -> float:
        return self.tv.get("tikhonov", math.nan)

    def rows(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k not in ("tv", "status")}
        for k, v in self.tv.items():
            out[f"tv_{k}"] = float(v)
        for k, v in self.status.items():
            out[f"status_{k}"] = v
        return out


def run_invariance_experiment(seed: int, M: int = 100, J: int = 200, gamma: float = 1.0,
                              penalties=("missing_info", "tikhonov"),
                              grid_mode: str = "image", transform: str = "exp",
                              select_gamma: bool = False, gammas=DEFAULT_GAMMAS,
                              fresh_J: int | None = None,
                              config: SolverConfig | None = None,
                              out_dir=None) -> InvarianceReport:
    """Compare ``phi_* (estimate in theta)`` with the estimate in ``phi(theta)``.

    Data: ``M`` draws with ``sigma = 0.3`` from the truncated bimodal prior on
    ``[0, 4]``. The transformed problem uses the reparametrized model and the
    same measurements and gamma.

    Parameters
    ----------
    grid_mode : {"image", "fresh"}
        ``image`` estimates on the nodes ``phi(theta_j)``; ``fresh`` uses an
        equidistant grid with ``fresh_J`` (default ``J``) nodes on the image
        interval and compares after linear interpolation of the pushforward.
    transform : {"exp", "identity"}
    select_gamma : bool
        Choose gamma by leave-one-out cross-validation with the
        ``missing_info`` penalty in both spaces; the original-space choice is
        then used for every fit.
    """
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    if grid_mode not in ("image", "fresh"):
        raise ConfigError(f"unknown grid mode {grid_mode!r}")
    maps = {"exp": Diffeomorphism.exp, "identity": Diffeomorphism.identity}
    if transform not in maps:
        raise ConfigError(f"unknown transform {transform!r}")
    phi = maps[transform]()
    config = config or SolverConfig()

    g = make_uniform_grid(0.0, 4.0, J)
    model = GaussianLocationModel(SIGMA)
    data = sample_dataset(model, bimodal_truth(g), M, seed)
    tmodel = transform_model(model, phi)
    image = pushforward_density(uniform_density(g), phi).grid
    if grid_mode == "image":
        tg = image
    else:
        tg = make_uniform_grid(*image.bounds, fresh_J or J)

    report = InvarianceReport({}, float(gamma), seed, M, J, grid_mode, transform)
    if select_gamma:
        cv0 = loo_cross_validate(model, data, g, PenaltySpec("missing_info"), gammas, config)
        cv1 = loo_cross_validate(tmodel, data, tg, PenaltySpec("missing_info"), gammas, config)
        report.gamma_star_original = cv0.chosen
        report.gamma_star_transformed = cv1.chosen
        report.gamma_used = cv0.chosen

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        data.to_csv(out / "data.csv")
    for kind in penalties:
        pen = PenaltySpec(kind)
        est = solve_mple(model, data, g, pen, report.gamma_used, config)
        push = _on_grid(pushforward_density(est.prior, phi), tg)
        est_t = solve_mple(tmodel, data, tg, pen, report.gamma_used, config)
        report.tv[kind] = tv_distance(push, est_t.prior)
        report.status[kind] = f"{est.status}/{est_t.status}"
        if out is not None:
            write_density_csv(est.prior, out / f"prior_{kind}_original.csv")
            write_density_csv(push, out / f"prior_{kind}_pushforward.csv")
            write_density_csv(est_t.prior, out / f"prior_{kind}_transformed.csv")
    if out is not None:
        _write_report(report.rows(), out / "report.csv")
    return report


# --------------------------------------------------------------------------
# restriction

@dataclass
class RestrictionReport:
    """Restricted ``[0, 2]`` fit versus direct ``[0, 1]`` fit."""

    restricted: GridDensity
    direct: GridDensity
    tv: float
    mass_restricted: float
    mass_direct: float
    gamma: float
    seed: int
    M: int
    M_used: int

    def rows(self) -> dict:
        return {"tv": self.tv, "mass_0.8_1_restricted": self.mass_restricted,
                "mass_0.8_1_direct": self.mass_direct, "gamma": self.gamma,
                "seed": self.seed, "M": self.M, "M_used": self.M_used}


def run_restriction_experiment(seed: int, M: int = 100, gamma: float = 1.0,
                               nodes_per_unit: int = 100, data_max: float | None = None,
                               config: SolverConfig | None = None,
                               out_dir=None) -> RestrictionReport:
    """Fit on ``[0, 2]`` and on ``[0, 1]`` with the missing-information penalty.

    Data are ``M`` draws with ``sigma = 0.5`` from the uniform prior on
    ``[0, 2]``. Both grids share their nodes on ``[0, 1]``. With ``data_max``
    only observations below it are used for both fits.
    """
    if not gamma > 0:
        raise ConfigError("gamma must be positive")
    config = config or SolverConfig()
    model = GaussianLocationModel(RESTRICTION_SIGMA)
    wide = make_uniform_grid(0.0, 2.0, 2 * nodes_per_unit + 1)
    narrow = make_uniform_grid(0.0, 1.0, nodes_per_unit + 1)
    data = sample_dataset(model, uniform_density(wide), M, seed)
    used = data
    if data_max is not None:
        pts = data.points[data.points < data_max]
        if pts.size == 0:
            raise ConfigError("no observations below data_max")
        used = Dataset(pts)

    pen = PenaltySpec("missing_info")
    fit_wide = solve_mple(model, used, wide, pen, gamma, config)
    restricted = normalize(fit_wide.prior.values[:narrow.size], narrow)
    direct = solve_mple(model, used, narrow, pen, gamma, config).prior
    report = RestrictionReport(
        restricted, direct, tv_distance(restricted, direct),
        mass_between(restricted, 0.8, 1.0), mass_between(direct, 0.8, 1.0),
        float(gamma), seed, M, used.M)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        used.to_csv(out / "data.csv")
        write_density_csv(fit_wide.prior, out / "prior_wide.csv")
        write_density_csv(restricted, out / "prior_restricted.csv")
        write_density_csv(direct, out / "prior_direct.csv")
        _write_report(report.rows(), out / "report.csv")
    return report


# --------------------------------------------------------------------------
# two-point model

def run_two_point_demo(resolution: int = 201, gamma: float = 1.0,
                       model: TwoPointModel | None = None, out_dir=None) -> np.ndarray:
    """Mutual information curve and hyperprior ``exp(gamma * I)``.

    Returns columns ``pi1, mutual_information, hyperprior`` where the
    hyperprior is normalized to integrate to one over ``pi1`` in [0, 1]
    (trapezoid rule).
    """
    model = model or TwoPointModel()
    curve = information_curve_two_point(model, resolution)
    g = make_uniform_grid(0.0, 1.0, resolution)
    hyper = normalize(np.exp(gamma * curve[:, 1]), g).values
    table = np.column_stack([curve, hyper])
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "curve.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["pi1", "mutual_information", "hyperprior"])
            for row in table:
                w.writerow([f"{v:.17g}" for v in row])
        k = int(np.argmax(curve[:, 1]))
        _write_report({"argmax_pi1": float(curve[k, 0]), "max_information": float(curve[k, 1]),
                       "gamma": float(gamma), "resolution": resolution}, out / "report.csv")
    return table


def estimate_result_rows(res: EstimationResult) -> dict:
    """Flat diagnostics of a fit for ``report.csv`` / ``meta.json``."""
    return {"gamma": res.gamma, "penalty": res.penalty.kind, "iterations": res.iterations,
            "converged": res.converged, "status": res.status, "objective": res.objective,
            "loglik": res.loglik, "penalty_value": res.penalty_value, "gap": res.gap,
            "gradient_norm_final": res.gradient_norm_final}
