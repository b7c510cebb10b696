"""Simulation design with calibrated censoring and Monte Carlo summaries.

Random streams: replication ``r`` draws from a Philox generator keyed by
``SeedSequence(seed, spawn_key=(r,))``; censoring calibration uses
``spawn_key=(CALIBRATION_KEY,)``. Replications are therefore independent of
execution order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import bisect

from .exceptions import CalibrationError, CensIndexError, HarnessError, InvalidInputError
from .fitter import FitConfig, fit, fixed_tau_fit
from .survival import CensoredSample

CALIBRATION_KEY = 2 ** 31 - 1
THETA0 = (1.0, 0.5, 1.4, 0.2)
MODES = ("adaptive_tau", "fixed_tau0", "both")


@dataclass(frozen=True)
class SimDesign:
    """Single-index regression ``Y = theta0'X + eps`` with exponential censoring.

    Each covariate is ``0.2 N(0, 1) + 0.8 N(0.25, s2)``; ``s2 = 2`` is read as a
    variance unless ``mixture_scale="sd"``. ``eps`` is centred normal with
    variance ``|theta0'X|``.
    """

    n: int = 100
    target_p: float = 0.25
    reps: int = 50
    seed: int = 20240101
    theta0: tuple = THETA0
    mixture_scale: str = "variance"
    noise: bool = True

    def __post_init__(self):
        if int(self.n) < 20:
            raise InvalidInputError(f"n must be at least 20, got {self.n}")
        if not 0.0 <= float(self.target_p) < 0.9:
            raise InvalidInputError(f"target_p must lie in [0, 0.9), got {self.target_p}")
        if int(self.reps) < 1:
            raise InvalidInputError("reps must be at least 1")
        if self.mixture_scale not in ("variance", "sd"):
            raise InvalidInputError("mixture_scale must be 'variance' or 'sd'")
        if float(self.theta0[0]) != 1.0:
            raise InvalidInputError("theta0 must have first component 1")

    @property
    def d(self):
        return len(self.theta0)

    @property
    def second_sd(self):
        return np.sqrt(2.0) if self.mixture_scale == "variance" else 2.0


def rep_generator(seed, key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(key,))))


def draw_covariates(design, size, rng):
    pick = rng.random((size, design.d)) < 0.2
    first = rng.standard_normal((size, design.d))
    second = 0.25 + design.second_sd * rng.standard_normal((size, design.d))
    return np.where(pick, first, second)


def draw_responses(design, x, rng):
    index = x @ np.asarray(design.theta0, dtype=float)
    eps = rng.standard_normal(index.size) * np.sqrt(np.abs(index))
    return index + eps if design.noise else index


def censoring_fraction(y, lam):
    """``P(Y > C | Y)`` averaged over ``y`` for ``C ~ Exp(rate=lam)``, ``C >= 0``."""
    if lam == 0:
        return 0.0
    pos = np.clip(y, 0.0, None)
    return float(np.mean(-np.expm1(-lam * pos)))


def calibrate_censoring_rate(design, target_p=None, draws=100_000):
    """Exponential censoring rate giving censoring probability ``target_p``.

    Bisection on ``lam`` of the Monte Carlo estimate of ``P(Y > C)`` over
    ``draws`` simulated responses (conditional probabilities are exact given
    ``Y``, so the estimate is monotone in ``lam``).
    """
    target = design.target_p if target_p is None else float(target_p)
    if not 0.0 <= target < 0.9:
        raise InvalidInputError(f"target_p must lie in [0, 0.9), got {target}")
    if target == 0.0:
        return 0.0
    rng = rep_generator(design.seed, CALIBRATION_KEY)
    y = draw_responses(design, draw_covariates(design, draws, rng), rng)
    ceiling = float(np.mean(y > 0))
    if target >= ceiling - 1e-3:
        raise CalibrationError(
            f"censoring proportion {target} unreachable: only {ceiling:.3f} of responses are positive"
        )
    lo, hi = 1e-8, 1.0
    while censoring_fraction(y, hi) < target:
        hi *= 2.0
        if hi > 1e8:
            raise CalibrationError("could not bracket the censoring rate")
    return float(bisect(lambda lam: censoring_fraction(y, lam) - target, lo, hi, xtol=1e-12))


def generate_dataset(design, rep_index, lam):
    """One replication: ``Z = min(Y, C)``, ``delta = 1{Y <= C}``."""
    rng = rep_generator(design.seed, int(rep_index))
    x = draw_covariates(design, design.n, rng)
    y = draw_responses(design, x, rng)
    if lam > 0:
        c = rng.exponential(1.0 / lam, design.n)
    else:
        c = np.full(design.n, np.inf)
    delta = (y <= c).astype(int)
    return CensoredSample(np.minimum(y, c), delta, x)


@dataclass
class ModeSummary:
    bias: np.ndarray
    covariance: np.ndarray
    mse: float
    n_ok: int


@dataclass
class MonteCarloReport:
    design: dict
    lam: float
    summaries: dict
    mean_N: float
    weight_inf: float
    weight_tau: float
    weight_tau_raw: float
    censor_fraction: float
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def mse(self, mode):
        return self.summaries[mode].mse


def summarize(estimates, theta0):
    """Bias, ``1/R`` covariance and MSE of free-coordinate estimates."""
    est = np.asarray(estimates, dtype=float)[:, 1:]
    err = est - np.asarray(theta0, dtype=float)[1:]
    bias = err.mean(axis=0)
    centred = err - bias
    cov = centred.T @ centred / err.shape[0]
    mse = float(np.mean(np.sum(err ** 2, axis=1)))
    return ModeSummary(bias, cov, mse, int(est.shape[0]))


def run_replication(design, rep, lam, mode, config):
    """Fit one replication; returns a plain-dict record or raises."""
    sample = generate_dataset(design, rep, lam)
    rec = {"rep": int(rep), "censor_fraction": float(1 - sample.delta.mean())}
    if mode == "fixed_tau0":
        res = fixed_tau_fit(sample, config)
        rec.update(theta_fixed=res.theta_hat.tolist(), tau0=res.tau0,
                   delta_min_eig=_min_eig(res.Delta_hat))
    else:
        res = fit(sample, config)
        rec.update(
            theta_adaptive=res.theta_hat.tolist(), tau_hat=res.tau_hat, tau0=res.tau0,
            h_hat=res.h_hat, N=res.n_retained, weight_inf=res.weight_inf,
            weight_tau=res.weight_tau, weight_tau_raw=res.weight_tau_raw,
            E2_table={str(k): v for k, v in res.E2_table.items()},
            delta_min_eig=min(_min_eig(b.components.Delta_hat) for b in res.branches.values()),
        )
        if mode == "both":
            if res.tau0 in res.branches:
                rec["theta_fixed"] = res.branches[res.tau0].theta.tolist()
            else:
                rec["theta_fixed"] = fixed_tau_fit(sample, config).theta_hat.tolist()
    return rec


def _min_eig(m):
    m = np.atleast_2d(m)
    return float(np.linalg.eigvalsh(m).min()) if m.size else 0.0


def _safe_replication(design, rep, lam, mode, config):
    try:
        return run_replication(design, rep, lam, mode, config)
    except CensIndexError as exc:
        return {"rep": int(rep), "failed": f"{type(exc).__name__}: {exc}"}


def monte_carlo_report(design, mode="both", config=None, n_jobs=1, max_failure_rate=0.2):
    """Run ``design.reps`` replications and aggregate bias, covariance and MSE.

    Failed replications are listed in ``failures`` with their reasons; more
    than ``max_failure_rate`` of them raises :class:`HarnessError`.
    """
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}")
    config = config or FitConfig(h_grid="paper")
    lam = calibrate_censoring_rate(design)
    reps = range(int(design.reps))
    if n_jobs == 1:
        out = [_safe_replication(design, r, lam, mode, config) for r in reps]
    else:
        out = Parallel(n_jobs=n_jobs)(
            delayed(_safe_replication)(design, r, lam, mode, config) for r in reps
        )
    out.sort(key=lambda r: r["rep"])
    failures = [r for r in out if "failed" in r]
    records = [r for r in out if "failed" not in r]
    if len(failures) > max_failure_rate * design.reps or not records:
        raise HarnessError(
            f"{len(failures)} of {design.reps} replications failed: "
            + "; ".join(f"rep {f['rep']}: {f['failed']}" for f in failures[:5])
        )
    summaries = {}
    if mode in ("adaptive_tau", "both"):
        summaries["adaptive_tau"] = summarize([r["theta_adaptive"] for r in records], design.theta0)
    if mode in ("fixed_tau0", "both"):
        summaries["fixed_tau0"] = summarize([r["theta_fixed"] for r in records], design.theta0)

    def avg(key):
        vals = [r[key] for r in records if key in r]
        return float(np.mean(vals)) if vals else float("nan")

    return MonteCarloReport(
        design=asdict(design), lam=lam, summaries=summaries, mean_N=avg("N"),
        weight_inf=avg("weight_inf"), weight_tau=avg("weight_tau"),
        weight_tau_raw=avg("weight_tau_raw"), censor_fraction=avg("censor_fraction"),
        records=records, failures=failures,
    )


def weight_diagnostics(report):
    """``(mean N, Weight^inf, Weight^tau_hat)`` from an adaptive report."""
    return report.mean_N, report.weight_inf, report.weight_tau
