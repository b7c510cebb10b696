"""Two-stage estimation: preliminary index, adaptive trimming, then per-truncation
fits with cross-validated bandwidths and truncation chosen by estimated MSE."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.optimize import minimize

from .exceptions import FitError, InsufficientDataError, InvalidInputError, NumericalError
from .objective import AdaptiveTrimming, FixedBoxTrimming, Objective, default_trimming_level
from .selection import (
    PAPER_H_GRID,
    asymptotic_components,
    cv_bandwidth,
    default_h_grid,
    default_tau_grid,
    largest_event_weight,
    retained_count,
    sandwich,
    select_truncation,
    TruncationChoice,
)
from .survival import censoring_survival, default_tau0, empirical_cdf_H, km_jump_weights

logger = logging.getLogger(__name__)

AUTO = "auto"


@dataclass(frozen=True)
class FitConfig:
    """Tuning of the estimation pipeline. ``"auto"`` entries are data driven.

    box : ``(d, 2)`` closed box for preliminary trimming, or ``"auto"``
        (coordinate-wise 5%-95% sample quantiles).
    c : adaptive trimming level, or ``"auto"`` (5th percentile of the pilot
        index density at the observations).
    h0 : pilot bandwidth, or ``"auto"`` (``sd(theta'X) n^-1/7`` at the start value).
    h_grid : bandwidth candidates, ``"auto"`` or ``"paper"`` (1.0, 1.1, ..., 1.5).
    tau_grid : truncation candidates or ``"auto"``.
    tau0 : outer truncation bound or ``"auto"``; tau1 : lower window end or ``"auto"``.
    """

    box: object = AUTO
    c: object = AUTO
    h0: object = AUTO
    h_grid: object = AUTO
    tau_grid: object = AUTO
    tau0: object = AUTO
    tau1: object = AUTO
    neighborhood_radius: float = 0.5
    param_bound: float = 10.0
    max_iters: int = 1000
    x_tolerance: float = 1e-4
    f_tolerance: float = 1e-8
    restarts: int = 3
    jitter: float = 0.1
    max_alternations: int = 5
    alternation_tolerance: float = 1e-4
    bandwidth_mode: str = "alternate"
    leave_one_out: bool = True
    n_quadrature: int = 128
    seed: int = 0

    def __post_init__(self):
        if not self.neighborhood_radius > 0:
            raise InvalidInputError("neighborhood_radius must be positive")
        if not (self.x_tolerance > 0 and self.f_tolerance > 0):
            raise InvalidInputError("optimizer tolerances must be positive")
        if int(self.max_iters) < 1:
            raise InvalidInputError("max_iters must be at least 1")
        if int(self.restarts) < 0:
            raise InvalidInputError("restarts must be non-negative")
        if self.bandwidth_mode not in ("alternate", "exact"):
            raise InvalidInputError(f"unknown bandwidth_mode {self.bandwidth_mode!r}")
        if not self.param_bound > 0:
            raise InvalidInputError("param_bound must be positive")
        for name in ("box", "c", "h0", "h_grid", "tau_grid", "tau0", "tau1"):
            value = getattr(self, name)
            if isinstance(value, str) and value not in (AUTO, "paper"):
                raise InvalidInputError(f"{name}: unknown keyword {value!r}")

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise InvalidInputError(f"unknown fit configuration keys: {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = np.asarray(v).tolist() if isinstance(v, (np.ndarray, tuple, list)) else v
        return out


@dataclass
class OptimizerRun:
    start: list
    value: float
    converged: bool
    iterations: int
    message: str


def restart_points(center, n_restarts, scale, rng):
    """``center`` followed by ``n_restarts`` Gaussian jitters of it."""
    center = np.asarray(center, dtype=float)
    pts = [center]
    for _ in range(n_restarts):
        pts.append(center + scale * rng.standard_normal(center.size))
    return pts


def maximize_simplex(fun, starts, step, cfg, bounds=None, ball=None):
    """Maximise ``fun`` over free coordinates by Nelder-Mead from each start.

    ``ball = (center, radius)`` confines the search: points outside score
    ``-inf``. Returns the best point, its value and per-start diagnostics.
    """
    dim = len(starts[0])

    def penalised(v):
        if ball is not None and np.linalg.norm(v - ball[0]) > ball[1]:
            return np.inf
        return -fun(v)

    runs, best_x, best_f = [], None, -np.inf
    for x0 in starts:
        x0 = np.asarray(x0, dtype=float)
        if ball is not None:
            offset = x0 - ball[0]
            dist = np.linalg.norm(offset)
            if dist > ball[1]:
                # pulled slightly inside so rounding cannot leave the start infeasible
                x0 = ball[0] + offset * (ball[1] * (1 - 1e-9) / dist)
        if bounds is not None:
            x0 = np.clip(x0, bounds[0][0], bounds[0][1])
        simplex = np.vstack([x0] + [x0 + step * e for e in np.eye(dim)])
        res = minimize(
            penalised, x0, method="Nelder-Mead", bounds=bounds,
            options={"maxiter": int(cfg.max_iters), "xatol": cfg.x_tolerance,
                     "fatol": cfg.f_tolerance, "initial_simplex": simplex},
        )
        value = -float(res.fun)
        runs.append(OptimizerRun(x0.tolist(), value, bool(res.success), int(res.nit), str(res.message)))
        if value > best_f:
            best_x, best_f = np.asarray(res.x, dtype=float), value
    return best_x, best_f, runs


def stute_least_squares_start(sample, weights):
    """Index direction from Kaplan-Meier weighted least squares, first coefficient scaled to 1."""
    d = sample.d
    design = np.column_stack((np.ones(sample.n), sample.x))
    w = weights.w
    sw = np.sqrt(w)
    try:
        beta, *_ = np.linalg.lstsq(design * sw[:, None], sample.z * sw, rcond=None)
    except np.linalg.LinAlgError:
        return np.zeros(d - 1)
    slope = beta[1:]
    if not np.all(np.isfinite(slope)) or abs(slope[0]) < 1e-8 * max(1.0, np.abs(slope).max()):
        return np.zeros(d - 1)
    return slope[1:] / slope[0]


def _theta(free):
    return np.concatenate(([1.0], np.asarray(free, dtype=float)))


def _window_lo(sample, config):
    return float(sample.z.min()) if config.tau1 == AUTO else float(config.tau1)


def _tau0(sample, config):
    return default_tau0(sample) if config.tau0 == AUTO else float(config.tau0)


@dataclass(frozen=True)
class PreliminaryFit:
    theta: np.ndarray
    h0: float
    start: np.ndarray
    trimming: object
    loglik: float
    runs: list = field(default_factory=list, repr=False)
    level: float = 0.0


def preliminary_fit(sample, config=None, weights=None):
    """Preliminary index estimate under fixed-box trimming and pilot bandwidth.

    Maximises the pseudo-log-likelihood over ``|theta_k| <= param_bound``
    (``k >= 1``) with the window ``[tau1, tau0]``. Multi-start Nelder-Mead from
    the weighted least squares direction and jittered copies of it. Denominators
    are guarded at the trimming level evaluated along that direction.
    """
    config = config or FitConfig()
    weights = km_jump_weights(sample) if weights is None else weights
    d = sample.d
    start = stute_least_squares_start(sample, weights)
    bound = float(config.param_bound)
    start = np.clip(start, -bound, bound)
    if config.h0 == AUTO:
        spread = float(np.std(sample.x @ _theta(start), ddof=1)) if sample.n > 1 else 0.0
        if not spread > 0:
            raise FitError("covariate index has zero spread", stage="preliminary")
        h0 = spread * sample.n ** (-1 / 7)
    else:
        h0 = float(config.h0)
    box = (FixedBoxTrimming.from_quantiles(sample.x) if isinstance(config.box, str)
           else FixedBoxTrimming(config.box))
    if d == 1:
        return PreliminaryFit(np.ones(1), h0, np.ones(1), box, float("nan"))
    if sample.delta.sum() < d + 1:
        raise InsufficientDataError(
            f"{int(sample.delta.sum())} uncensored observations for {d - 1} free coordinates"
        )
    window = (_window_lo(sample, config), _tau0(sample, config))
    level = (default_trimming_level(sample, weights, _theta(start), h0, window)
             if config.c == AUTO else float(config.c))
    objective = Objective(sample, weights, h0, window, box, config.leave_one_out, level)
    if objective.obs.size < d + 1:
        raise FitError(
            f"only {objective.obs.size} observations survive box trimming", stage="preliminary"
        )
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 0]))
    starts = restart_points(start, int(config.restarts), config.jitter, rng)
    bounds = [(-bound, bound)] * (d - 1)
    best, value, runs = maximize_simplex(
        lambda v: -objective(v), starts, 0.2, config, bounds=bounds,
    )
    if not any(r.converged for r in runs):
        raise FitError("Nelder-Mead did not converge from any start", stage="preliminary",
                       trace=runs)
    return PreliminaryFit(_theta(best), h0, _theta(start), box, value, runs, level)


@dataclass
class BranchFit:
    """Fit at one truncation point ``tau``."""

    tau: float
    theta: np.ndarray
    h: float
    loglik: float
    components: object
    alternations: int
    n_retained: int
    n_terms: int
    n_excluded: int
    runs: list = field(default_factory=list, repr=False)

    @property
    def E2(self):
        return self.components.E2


@dataclass
class _Context:
    sample: object
    weights: object
    config: FitConfig
    theta_n: np.ndarray
    trimming_mask: np.ndarray
    h_grid: tuple
    tau0: float
    tau1: float
    G: object
    H: object
    c: float = 0.0


def _fit_branch(ctx, tau):
    sample, cfg = ctx.sample, ctx.config
    if not (ctx.tau1 < tau <= ctx.tau0):
        raise InvalidInputError(f"tau={tau} outside ({ctx.tau1}, {ctx.tau0}]")
    window = (ctx.tau1, float(tau))
    unc = sample.delta == 1
    in_window = int(np.sum(unc & (sample.z >= ctx.tau1) & (sample.z <= tau)))
    needed = max(sample.d + 1, int(np.ceil(0.1 * unc.sum())))
    if in_window < needed:
        raise InsufficientDataError(
            f"window [{ctx.tau1:g}, {tau:g}] holds {in_window} uncensored observations, "
            f"need {needed}"
        )
    free_n = ctx.theta_n[1:]
    ball = (free_n, float(cfg.neighborhood_radius))
    step = min(0.1, cfg.neighborhood_radius / 2)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 1, int(round(tau * 1e6)) & 0xFFFFFFFF]))

    def cv(theta):
        return cv_bandwidth(sample, ctx.weights, theta, window, ctx.h_grid, cfg.n_quadrature)

    def objective_for(h):
        return Objective(sample, ctx.weights, h, window, ctx.trimming_mask, cfg.leave_one_out,
                         ctx.c)

    runs = []
    if sample.d == 1:
        theta, h, alternations = ctx.theta_n.copy(), cv(ctx.theta_n), 0
    elif cfg.bandwidth_mode == "exact":
        def value(free):
            theta_ = _theta(free)
            h_ = cv(theta_)
            return objective_for(h_).loglik(theta_).value

        starts = restart_points(free_n, int(cfg.restarts), cfg.jitter, rng)
        best, _, runs = maximize_simplex(value, starts, step, cfg, ball=ball)
        if value(free_n) > value(best):
            best = free_n.copy()
        theta, h, alternations = _theta(best), cv(_theta(best)), 1
    else:
        theta = ctx.theta_n.copy()
        h = cv(theta)
        alternations = 0
        while True:
            alternations += 1
            obj = objective_for(h)
            if alternations == 1:
                starts = restart_points(free_n, int(cfg.restarts), cfg.jitter, rng)
            else:
                starts = [theta[1:]]
            best, best_val, r = maximize_simplex(lambda v: -obj(v), starts, step, cfg, ball=ball)
            runs.extend(r)
            if not any(x.converged for x in r):
                raise FitError(f"Nelder-Mead did not converge at tau={tau:g}", stage="branch",
                               trace=runs)
            if -obj(free_n) > best_val:
                best = free_n.copy()
            new_theta = _theta(best)
            change = np.linalg.norm(new_theta - theta) / max(1.0, np.linalg.norm(theta))
            theta = new_theta
            h_new = cv(theta)
            if h_new == h or alternations >= cfg.max_alternations:
                break
            if change < cfg.alternation_tolerance and alternations > 1:
                break
            h = h_new

    final = objective_for(h).checked_loglik(theta)
    comps = asymptotic_components(
        sample, ctx.weights, theta, h, float(tau), ctx.tau0, ctx.trimming_mask,
        tau1=ctx.tau1, level=ctx.c, G=ctx.G, H=ctx.H,
    )
    return BranchFit(
        tau=float(tau), theta=theta, h=float(h), loglik=final.value, components=comps,
        alternations=alternations, n_retained=retained_count(sample, tau),
        n_terms=final.n_terms, n_excluded=final.n_excluded, runs=runs,
    )


@dataclass
class IndexModelFit:
    """Result of the estimation pipeline.

    ``branches`` maps each candidate truncation point to its :class:`BranchFit`;
    ``theta_hat`` is the branch at ``tau_hat``.
    """

    theta_hat: np.ndarray
    theta_prelim: np.ndarray
    h_hat: float
    tau_hat: float
    tau0: float
    tau1: float
    h0: float
    c: float
    h_grid: tuple
    tau_grid: tuple
    E2_table: dict
    V_hat: np.ndarray
    Delta_hat: np.ndarray
    Sigma_hat: np.ndarray
    singular: bool
    n: int
    n_retained: int
    weight_inf: float
    weight_tau: float
    weight_tau_raw: float
    exclusions: dict
    failures: dict
    no_censoring: bool
    elapsed: float
    branches: dict = field(repr=False, default_factory=dict)

    @property
    def E2(self):
        return self.E2_table[self.tau_hat]

    def standard_errors(self):
        return standard_errors(self, self.n)[1]


def standard_errors(fit, n=None):
    """``Sigma / n`` and per-coordinate standard errors ``sqrt(diag(Sigma) / n)``."""
    n = fit.n if n is None else n
    sigma, _ = sandwich(fit.V_hat, fit.Delta_hat)
    cov = sigma / n
    return cov, np.sqrt(np.clip(np.diag(cov), 0.0, None))


def _resolve_h_grid(sample, config, theta_n):
    if isinstance(config.h_grid, str):
        grid = PAPER_H_GRID if config.h_grid == "paper" else default_h_grid(sample, theta_n)
    else:
        grid = tuple(sorted(float(h) for h in np.atleast_1d(config.h_grid)))
    if not grid or any(not h > 0 for h in grid):
        raise InvalidInputError("bandwidth grid must be non-empty and positive")
    return tuple(grid)


def _prepare(sample, config):
    weights = km_jump_weights(sample)
    tau1 = _window_lo(sample, config)
    try:
        tau0 = _tau0(sample, config)
    except NumericalError as exc:
        raise FitError(str(exc), stage="setup") from exc
    try:
        prelim = preliminary_fit(sample, config, weights)
    except FitError:
        raise
    except NumericalError as exc:
        raise FitError(str(exc), stage="preliminary") from exc
    window0 = (tau1, tau0)
    try:
        c = (default_trimming_level(sample, weights, prelim.theta, prelim.h0, window0)
             if config.c == AUTO else float(config.c))
        trimming = AdaptiveTrimming(sample, weights, prelim.theta, prelim.h0, window0, c)
        mask = trimming(sample.x)
    except NumericalError as exc:
        raise FitError(str(exc), stage="trimming") from exc
    if not mask.any():
        raise FitError(f"adaptive trimming at c={c:g} rejects every observation", stage="trimming")
    h_grid = _resolve_h_grid(sample, config, prelim.theta)
    ctx = _Context(sample, weights, config, prelim.theta, mask, h_grid, tau0, tau1,
                   censoring_survival(sample), empirical_cdf_H(sample), c)
    return ctx, prelim, c


def _assemble(ctx, prelim, c, choice, t_start):
    sample, weights = ctx.sample, ctx.weights
    best = choice.table[choice.tau_hat]
    comps = best.components
    sigma, singular = sandwich(comps.V_hat, comps.Delta_hat)
    raw = largest_event_weight(sample, weights, choice.tau_hat)
    return IndexModelFit(
        theta_hat=best.theta.copy(),
        theta_prelim=prelim.theta.copy(),
        h_hat=best.h,
        tau_hat=choice.tau_hat,
        tau0=ctx.tau0,
        tau1=ctx.tau1,
        h0=prelim.h0,
        c=c,
        h_grid=ctx.h_grid,
        tau_grid=tuple(sorted(choice.table) + sorted(choice.failures)),
        E2_table=choice.E2_table,
        V_hat=comps.V_hat,
        Delta_hat=comps.Delta_hat,
        Sigma_hat=sigma,
        singular=bool(singular or comps.singular),
        n=sample.n,
        n_retained=best.n_retained,
        weight_inf=largest_event_weight(sample, weights),
        weight_tau=largest_event_weight(sample, weights, choice.tau_hat, renormalise=True),
        weight_tau_raw=raw,
        exclusions={
            "trimmed_by_J0": int(np.sum(~ctx.trimming_mask)),
            "likelihood_terms": best.n_terms,
            "likelihood_excluded": best.n_excluded,
        },
        failures=dict(choice.failures),
        no_censoring=bool(np.all(sample.delta == 1)),
        elapsed=time.perf_counter() - t_start,
        branches=dict(choice.table),
    )


def _stage(func, stage):
    try:
        return func()
    except FitError:
        raise
    except NumericalError as exc:
        raise FitError(str(exc), stage=stage) from exc


def fit(sample, config=None):
    """Full adaptive pipeline; returns an :class:`IndexModelFit`."""
    config = config or FitConfig()
    t_start = time.perf_counter()
    ctx, prelim, c = _prepare(sample, config)
    if isinstance(config.tau_grid, str):
        grid = default_tau_grid(sample, ctx.tau0)
    else:
        grid = tuple(float(t) for t in np.atleast_1d(config.tau_grid))
    logger.debug("tau grid %s, h grid %s", grid, ctx.h_grid)
    choice = _stage(lambda: select_truncation(grid, lambda tau: _fit_branch(ctx, tau)),
                    "truncation")
    return _assemble(ctx, prelim, c, choice, t_start)


def fixed_tau_fit(sample, config=None, tau=None):
    """Pipeline restricted to one truncation point (``tau0`` when ``tau`` is None)."""
    config = config or FitConfig()
    t_start = time.perf_counter()
    ctx, prelim, c = _prepare(sample, config)
    tau = ctx.tau0 if tau is None else float(tau)
    branch = _stage(lambda: _fit_branch(ctx, tau), "branch")
    return _assemble(ctx, prelim, c, TruncationChoice(tau, {tau: branch}, {}), t_start)

