"""Product-limit estimators, Kaplan-Meier integrals and their influence function.

Observations are ordered by follow-up time; among tied times uncensored
observations come first, so a censored observation tied with an event is still
at risk for that event.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import as_design_matrix, as_event_vector, as_float_vector
from .exceptions import (
    DegenerateWindowError,
    InvalidInputError,
    NumericalError,
    SingularWeightError,
)


@dataclass(frozen=True)
class CensoredSample:
    """Observed triples ``(z_i, delta_i, x_i)``.

    ``z`` holds follow-up times ``min(Y, C)``, ``delta`` the event flags
    (1 = uncensored) and ``x`` the ``n x d`` covariate matrix. Column 0 of ``x``
    carries the index coefficient pinned to 1.
    """

    z: np.ndarray
    delta: np.ndarray
    x: np.ndarray
    order: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        z = as_float_vector(self.z, "z")
        delta = as_event_vector(self.delta)
        if delta.size != z.size:
            raise InvalidInputError(
                f"delta has length {delta.size} but z has length {z.size}"
            )
        x = as_design_matrix(self.x, n_rows=z.size)
        for arr in (z, delta, x):
            arr.setflags(write=False)
        # primary key z ascending, secondary key uncensored first
        order = np.lexsort((1 - delta, z))
        order.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "order", order)

    @property
    def n(self):
        return self.z.size

    @property
    def d(self):
        return self.x.shape[1]

    @property
    def uncensored(self):
        return self.delta == 1

    def subset(self, idx):
        idx = np.asarray(idx)
        return CensoredSample(self.z[idx], self.delta[idx], self.x[idx])


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function starting at 0.

    ``value(t)`` adds every jump at or before ``t``; ``left_limit(t)`` adds the
    jumps strictly before ``t``.
    """

    jump_times: np.ndarray
    jump_sizes: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.jump_times, dtype=float).reshape(-1)
        sizes = np.asarray(self.jump_sizes, dtype=float).reshape(-1)
        if times.size != sizes.size:
            raise InvalidInputError("jump_times and jump_sizes differ in length")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise InvalidInputError("jump_times must be strictly increasing")
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "jump_sizes", sizes)
        object.__setattr__(self, "_cum", np.concatenate(([0.0], np.cumsum(sizes))))

    def __call__(self, t):
        return self.value(t)

    def value(self, t):
        pos = np.searchsorted(self.jump_times, t, side="right")
        return self._cum[pos]

    def left_limit(self, t):
        pos = np.searchsorted(self.jump_times, t, side="left")
        return self._cum[pos]


@dataclass(frozen=True)
class KMWeights:
    """Kaplan-Meier masses ``W_in`` in the sample's original order.

    Censored observations carry mass 0. ``order`` is the tie-resolved sort
    order used to build the weights.
    """

    w: np.ndarray
    order: np.ndarray

    @property
    def total_mass(self):
        return float(self.w.sum())

    def scaled(self, factor):
        return KMWeights(self.w * factor, self.order)


def km_jump_weights(sample):
    """Jumps of the Kaplan-Meier estimator of the response distribution.

    Uses the sequential form ``W_(i) = delta_(i)/(n-i+1) prod_{j<i}
    ((n-j)/(n-j+1))^delta_(j)``, rewritten so that only censored predecessors
    enter the product. Without censoring every weight is exactly ``1/n``.
    """
    if sample.n < 1:
        raise InvalidInputError("empty sample")
    n = sample.n
    order = sample.order
    d_sorted = sample.delta[order]
    # rank i (1-based) has n-i+1 observations at or after it
    at_risk = np.arange(n, 0, -1, dtype=float)
    factors = np.where(d_sorted == 0, at_risk / (at_risk - 1.0 + (at_risk == 1)), 1.0)
    # censored predecessors only; a censored last observation never matters
    before = np.concatenate(([1.0], np.cumprod(factors)[:-1]))
    w_sorted = d_sorted * before / n
    w = np.empty(n)
    w[order] = w_sorted
    w.setflags(write=False)
    return KMWeights(w=w, order=order)


def _product_limit(times, events, counts_at_risk):
    """Product-limit distribution function from per-time event/risk counts."""
    hazard = np.divide(events, counts_at_risk, out=np.zeros_like(events), where=counts_at_risk > 0)
    surv = np.cumprod(1.0 - hazard)
    cdf = 1.0 - surv
    sizes = np.diff(np.concatenate(([0.0], cdf)))
    keep = events > 0
    return StepFunction(times[keep], sizes[keep])


def censoring_survival(sample):
    """Kaplan-Meier estimator ``G`` of the censoring distribution function.

    Event flag is ``1 - delta``. At a tied time the uncensored observations
    have already left the censoring risk set.
    """
    if sample.n < 1:
        raise InvalidInputError("empty sample")
    times, inv = np.unique(sample.z, return_inverse=True)
    censored = np.bincount(inv, weights=(sample.delta == 0), minlength=times.size)
    total = np.bincount(inv, minlength=times.size).astype(float)
    strictly_after = sample.n - np.cumsum(total)
    return _product_limit(times, censored, strictly_after + censored)


def response_distribution(sample, weights=None):
    """Kaplan-Meier estimator of the response distribution ``F_Y``."""
    weights = km_jump_weights(sample) if weights is None else weights
    times, inv = np.unique(sample.z, return_inverse=True)
    sizes = np.bincount(inv, weights=weights.w, minlength=times.size)
    keep = sizes > 0
    return StepFunction(times[keep], sizes[keep])


def empirical_cdf_H(sample):
    """Empirical distribution function of the follow-up times."""
    times, counts = np.unique(sample.z, return_counts=True)
    return StepFunction(times, counts / sample.n)


def default_tau0(sample):
    """Largest uncensored follow-up time strictly below the overall maximum."""
    zmax = sample.z.max()
    cand = sample.z[(sample.delta == 1) & (sample.z < zmax)]
    if cand.size == 0:
        raise DegenerateWindowError(
            "no uncensored follow-up time lies strictly below the maximum"
        )
    return float(cand.max())


def _integrand_values(sample, integrand, rows):
    vals = []
    for i in rows:
        v = np.asarray(integrand(sample.x[i], sample.z[i]), dtype=float)
        if not np.all(np.isfinite(v)):
            raise NumericalError(f"integrand is not finite at observation {int(i)}")
        vals.append(v)
    return np.array(vals)


def stute_integral(sample, integrand, weights=None):
    """Kaplan-Meier integral ``sum_i delta_i W_in phi(x_i, z_i)``.

    ``integrand`` is called as ``phi(x_row, z)`` at uncensored observations
    only; it may return a scalar or a vector.
    """
    weights = km_jump_weights(sample) if weights is None else weights
    rows = np.flatnonzero(sample.delta == 1)
    if rows.size == 0:
        return 0.0
    vals = _integrand_values(sample, integrand, rows)
    out = np.tensordot(weights.w[rows], vals, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def window_mask(z, window):
    lo, hi = window
    return (z >= lo) & (z <= hi)


def influence_psi(sample, f1, tau, tau0, *, tau1=None, weights=None, G=None, H=None):
    """Estimated influence function of a Kaplan-Meier integral, per observation.

    Parameters
    ----------
    sample : CensoredSample
    f1 : callable or array
        Either ``f1(x_row, z) -> vector`` or an ``(n, k)`` array of its values at
        the observations (rows of censored observations are ignored).
    tau, tau0 : float
        Upper truncation ``tau`` of ``A_tau = [tau1, tau]`` and the outer bound
        ``tau0`` of the inner integral, ``tau <= tau0``.
    tau1 : float, optional
        Lower end of ``A_tau``; defaults to ``min z``.

    Returns
    -------
    ndarray of shape (n, k)
        Row ``i`` is the inverse-censoring-weighted term plus the censoring
        martingale correction, in closed discrete form.
    """
    n = sample.n
    tau1 = float(sample.z.min()) if tau1 is None else float(tau1)
    if tau > tau0:
        raise InvalidInputError(f"tau={tau} exceeds tau0={tau0}")
    weights = km_jump_weights(sample) if weights is None else weights
    G = censoring_survival(sample) if G is None else G
    H = empirical_cdf_H(sample) if H is None else H

    unc = sample.delta == 1
    in_a = unc & window_mask(sample.z, (tau1, tau)) & (sample.z <= tau0)
    if callable(f1):
        vals = np.zeros((n, 0))
        rows = np.flatnonzero(in_a)
        if rows.size:
            got = _integrand_values(sample, f1, rows)
            vals = np.zeros((n,) + got.shape[1:])
            vals[rows] = got
        else:
            probe = np.atleast_1d(np.asarray(f1(sample.x[0], sample.z[0]), dtype=float))
            vals = np.zeros((n, probe.size))
    else:
        vals = np.array(f1, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != n:
            raise InvalidInputError("f1 array must have one row per observation")
        vals = np.where(in_a[:, None], vals, 0.0)
        if not np.all(np.isfinite(vals)):
            raise NumericalError("f1 has non-finite values inside the window")
    vals = vals.reshape(n, -1)

    surv_c = 1.0 - G.left_limit(sample.z)
    bad = in_a & (surv_c <= 0)
    if bad.any():
        raise SingularWeightError(
            f"1 - G(z-) = 0 at uncensored observation {int(np.flatnonzero(bad)[0])}"
        )
    first = np.zeros_like(vals)
    first[in_a] = vals[in_a] / surv_c[in_a, None]

    # gamma(y) = sum_j g_j 1{z_j >= y}, accumulated from the right in sorted order
    g = weights.w[:, None] * vals
    zs = sample.z[sample.order]
    g_sorted = g[sample.order]
    tail = np.cumsum(g_sorted[::-1], axis=0)[::-1]
    tail = np.vstack((tail, np.zeros((1, tail.shape[1]))))

    def gamma(y):
        return tail[np.searchsorted(zs, y, side="left")]

    surv_h = 1.0 - H.left_limit(sample.z)
    second = np.zeros_like(vals)
    cens = ~unc
    second[cens] = gamma(sample.z[cens]) / surv_h[cens, None]

    t = G.jump_times
    if t.size:
        comp = gamma(t) * (G.jump_sizes / ((1.0 - G.left_limit(t)) * (1.0 - H.left_limit(t))))[:, None]
        cum = np.vstack((np.zeros((1, comp.shape[1])), np.cumsum(comp, axis=0)))
        second -= cum[np.searchsorted(t, sample.z, side="right")]
    return first + second
