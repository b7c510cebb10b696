"""Trimming functions and the Kaplan-Meier weighted pseudo-log-likelihood."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_theta, check_window
from .exceptions import DegenerateObjectiveError, InvalidInputError
from .kernels import DENSITY_FLOOR, WindowSmoother, _estimate, index_density
from .survival import window_mask


class FixedBoxTrimming:
    """Indicator of a closed box ``prod_k [lo_k, hi_k]`` in covariate space."""

    mode = "fixed_box"

    def __init__(self, box):
        box = np.asarray(box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2:
            raise InvalidInputError("box must have shape (d, 2)")
        if not np.all(np.isfinite(box)) or np.any(box[:, 1] <= box[:, 0]):
            raise InvalidInputError("box has an empty or degenerate side")
        self.box = box

    @classmethod
    def from_quantiles(cls, x, lower=0.05, upper=0.95):
        x = np.asarray(x, dtype=float)
        box = np.column_stack((np.quantile(x, lower, axis=0), np.quantile(x, upper, axis=0)))
        # a constant column would give an empty box
        flat = box[:, 1] <= box[:, 0]
        box[flat, 0] -= 0.5
        box[flat, 1] += 0.5
        return cls(box)

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.all((x >= self.box[:, 0]) & (x <= self.box[:, 1]), axis=1)


def trimming_fixed(x_row, box):
    return int(FixedBoxTrimming(box)(x_row)[0])


class AdaptiveTrimming:
    """``1{ estimated density of theta_pilot'X at theta_pilot'x > c }``."""

    mode = "adaptive"

    def __init__(self, sample, weights, theta_pilot, h0, tau_window, c):
        if not np.isfinite(c) or c < 0:
            raise InvalidInputError(f"trimming level c must be >= 0, got {c}")
        self.sample = sample
        self.weights = weights
        self.theta_pilot = check_theta(theta_pilot, sample.d)
        self.h0 = float(h0)
        self.tau_window = check_window(tau_window)
        self.c = float(c)

    def pilot_density(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return index_density(
            self.sample, self.weights, self.theta_pilot, self.h0, self.tau_window,
            x @ self.theta_pilot,
        )

    def __call__(self, x):
        return self.pilot_density(x) > self.c


def trimming_adaptive(x_row, theta_pilot, h0, tau_window, c, sample, weights):
    return int(AdaptiveTrimming(sample, weights, theta_pilot, h0, tau_window, c)(x_row)[0])


def default_trimming_level(sample, weights, theta_pilot, h0, tau_window, quantile=0.05):
    """Lower ``quantile`` of the pilot index density over the observed covariates.

    The fourth-order kernel can push the pilot estimate below zero in sparse
    regions, so the level is floored at zero.
    """
    dens = index_density(sample, weights, theta_pilot, h0, tau_window, sample.x @ theta_pilot)
    return max(float(np.quantile(dens, quantile)), 0.0)


@dataclass(frozen=True)
class LoglikValue:
    value: float
    n_terms: int
    n_excluded: int


class KernelLikelihoodDensity:
    """Kernel conditional density at observations, for use inside the likelihood.

    With ``leave_one_out`` the observation being scored is dropped from both
    kernel sums. A value is trimmed when its denominator, read as an index
    density (divided by the window mass), is at most ``level``.
    """

    def __init__(self, sample, weights, h, tau_window, leave_one_out=True, level=0.0):
        self.smoother = WindowSmoother(sample, weights, tau_window)
        self.sample = sample
        self.h = float(h)
        self.leave_one_out = leave_one_out
        self.den_floor = float(level) * self.smoother.mass

    def __call__(self, theta, obs):
        sm = self.smoother
        x = self.sample.x[obs]
        exclude = sm.loo_exclusion(obs) if self.leave_one_out else None
        num, den = sm.sums(theta, self.h, self.sample.z[obs], x @ theta, exclude)
        return _estimate(num, den, den_floor=self.den_floor)


def _trim_mask(sample, J):
    if J is None:
        return np.ones(sample.n, dtype=bool)
    if callable(J):
        return np.asarray(J(sample.x), dtype=bool)
    mask = np.asarray(J, dtype=bool)
    if mask.shape != (sample.n,):
        raise InvalidInputError("trimming mask must have one entry per observation")
    return mask


def contributing(sample, weights, J, tau_window):
    """Observations entering the likelihood: uncensored, in window, not trimmed."""
    mask = (sample.delta == 1) & window_mask(sample.z, check_window(tau_window))
    mask &= _trim_mask(sample, J) & (weights.w > 0)
    return np.flatnonzero(mask)


def pseudo_loglik(sample, weights, theta, density, J, tau_window, *, obs=None, strict=True):
    """``sum_i delta_i W_in 1{Z_i in A} J(X_i) log f(Z_i, theta'X_i)``.

    ``density(theta, obs)`` returns ``(values, trimmed)`` at the requested
    observations (or just values). Trimmed or non-positive values add 0. The
    exclusion tally counts in-window uncensored observations dropped either by
    ``J`` or by the density floor.
    """
    theta = check_theta(theta, sample.d)
    candidates = contributing(sample, weights, None, tau_window)
    if obs is None:
        obs = contributing(sample, weights, J, tau_window)
    if obs.size == 0:
        return LoglikValue(0.0, 0, int(candidates.size))
    got = density(theta, obs)
    if isinstance(got, tuple):
        values, trimmed = got
    else:
        values = np.asarray(got, dtype=float)
        trimmed = np.zeros(values.shape, dtype=bool)
    keep = ~trimmed & (values > DENSITY_FLOOR)
    if strict and not keep.any():
        raise DegenerateObjectiveError(
            f"all {obs.size} likelihood terms fall below the density floor"
        )
    total = float(np.dot(weights.w[obs][keep], np.log(values[keep])))
    return LoglikValue(total, int(keep.sum()), int(candidates.size - keep.sum()))


class Objective:
    """Negated pseudo-log-likelihood over the free coordinates, for minimisers."""

    def __init__(self, sample, weights, h, tau_window, J, leave_one_out=True, level=0.0):
        self.sample = sample
        self.weights = weights
        self.tau_window = check_window(tau_window)
        self.density = KernelLikelihoodDensity(sample, weights, h, tau_window, leave_one_out, level)
        self.obs = contributing(sample, weights, J, tau_window)
        self.last = None

    def full_theta(self, free):
        return np.concatenate(([1.0], np.asarray(free, dtype=float)))

    def loglik(self, theta):
        res = pseudo_loglik(
            self.sample, self.weights, theta, self.density, None, self.tau_window,
            obs=self.obs, strict=False,
        )
        self.last = res
        return res

    def checked_loglik(self, theta):
        res = self.loglik(theta)
        if res.n_terms == 0:
            raise DegenerateObjectiveError("every likelihood term was excluded")
        return res

    def __call__(self, free):
        return -self.loglik(self.full_theta(free)).value
