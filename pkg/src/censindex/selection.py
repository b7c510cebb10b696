"""Bandwidth cross-validation and truncation selection by estimated asymptotic MSE."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_theta, check_window
from .exceptions import InsufficientDataError, InvalidInputError, NumericalError, SelectionError
from .kernels import DENSITY_FLOOR, WindowSmoother, _estimate, quotient_gradient
from .objective import contributing
from .survival import (
    censoring_survival,
    default_tau0,
    empirical_cdf_H,
    influence_psi,
)

N_QUADRATURE = 128
PAPER_H_GRID = tuple(np.round(np.linspace(1.0, 1.5, 6), 10))


def default_h_grid(sample, theta, size=10, lower=0.5, upper=2.0):
    """Log-spaced bandwidths around ``sd(theta'X) * n^(-1/7)``."""
    base = float(np.std(sample.x @ theta, ddof=1)) * sample.n ** (-1 / 7)
    if not np.isfinite(base) or base <= 0:
        raise InvalidInputError("index has zero spread; cannot build a bandwidth grid")
    return tuple(np.geomspace(lower * base, upper * base, size))


def default_tau_grid(sample, tau0=None):
    """Uncensored order statistics at the 50%, 60%, ..., 100% levels, capped at ``tau0``."""
    tau0 = default_tau0(sample) if tau0 is None else tau0
    unc = np.sort(sample.z[sample.delta == 1])
    levels = np.arange(5, 11) / 10
    ranks = np.ceil(levels * unc.size).astype(int) - 1
    taus = np.minimum(unc[np.clip(ranks, 0, unc.size - 1)], tau0)
    taus = np.unique(taus[taus > sample.z.min()])
    if taus.size == 0:
        taus = np.array([tau0])
    return tuple(float(t) for t in taus)


def cv_criterion(sample, weights, theta, tau_window, h, n_grid=N_QUADRATURE):
    """Cross-validated integrated squared error of the conditional density estimate.

    ``sum_i W_in 1{Z_i in A} { int_A f_{-i}(z, theta'X_i)^2 dz - 2 f_{-i}(Z_i, theta'X_i) }``
    with leave-one-out estimates in both terms and trapezoid quadrature over
    ``n_grid`` equally spaced points of the window. Returns ``nan`` when every
    term is degenerate.
    """
    theta = check_theta(theta, sample.d)
    lo, hi = check_window(tau_window)
    sm = WindowSmoother(sample, weights, (lo, hi))
    obs = sm.members
    if obs.size == 0:
        return float("nan")
    u = sample.x[obs] @ theta
    exclude = sm.loo_exclusion(obs)
    grid = np.linspace(lo, hi, n_grid)
    dens, den = sm.density_on_grid(theta, h, grid, u, exclude)
    ok = den > DENSITY_FLOOR
    if not ok.any():
        return float("nan")
    sq = np.trapezoid(dens ** 2, grid, axis=1)
    num, den2 = sm.sums(theta, h, sample.z[obs], u, exclude)
    point, _ = _estimate(num, den2)
    terms = sq - 2.0 * point
    return float(np.dot(weights.w[obs][ok], terms[ok]))


def cv_profile(sample, weights, theta, tau_window, h_grid, n_grid=N_QUADRATURE):
    return np.array([cv_criterion(sample, weights, theta, tau_window, h, n_grid) for h in h_grid])


def cv_bandwidth(sample, weights, theta, tau_window, h_grid, n_grid=N_QUADRATURE):
    """Grid bandwidth minimising :func:`cv_criterion`; ties go to the larger ``h``."""
    h_grid = np.asarray(h_grid, dtype=float)
    if h_grid.size == 0:
        raise InvalidInputError("empty bandwidth grid")
    if h_grid.size == 1:
        return float(h_grid[0])
    crit = cv_profile(sample, weights, theta, tau_window, h_grid, n_grid)
    finite = np.isfinite(crit)
    if not finite.any():
        raise SelectionError("cross-validation criterion is degenerate for every bandwidth")
    best = np.min(crit[finite])
    chosen = np.flatnonzero(finite & (crit == best))
    return float(h_grid[chosen].max())


def e2_from(V, W, n):
    """``n^-1 W' V^-1 V^-1 W``; pseudo-inverse and a flag when ``V`` is singular."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    W = np.asarray(W, dtype=float).reshape(-1)
    if W.size == 0:
        return 0.0, False
    singular = np.linalg.matrix_rank(V) < V.shape[0]
    Vinv = np.linalg.pinv(V) if singular else np.linalg.inv(V)
    step = Vinv @ W
    return float(step @ step) / n, bool(singular)


def sandwich(V, Delta):
    """``V^-1 Delta V^-1`` with the same singularity handling as :func:`e2_from`."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    if V.size == 0:
        return np.zeros((0, 0)), False
    singular = np.linalg.matrix_rank(V) < V.shape[0]
    Vinv = np.linalg.pinv(V) if singular else np.linalg.inv(V)
    S = Vinv @ Delta @ Vinv
    return (S + S.T) / 2, bool(singular)


@dataclass(frozen=True)
class AsymptoticComponents:
    """Plug-in pieces of the estimator's asymptotic law, over the free coordinates."""

    V_hat: np.ndarray
    W_hat: np.ndarray
    Delta_hat: np.ndarray
    E2: float
    singular: bool
    n_contributing: int
    psi: np.ndarray = field(repr=False)

    @property
    def Sigma_hat(self):
        return sandwich(self.V_hat, self.Delta_hat)[0]


def score_terms(sample, weights, theta, h, tau_window, J, leave_one_out=False, level=0.0):
    """``f1 = J grad f / f`` at the contributing observations (free coordinates).

    Returns ``(obs, f1_rows)``; observations whose density is trimmed (see
    :class:`~censindex.objective.KernelLikelihoodDensity` for ``level``) are dropped.
    """
    obs = contributing(sample, weights, J, tau_window)
    sm = WindowSmoother(sample, weights, tau_window)
    if obs.size == 0:
        return obs, np.zeros((0, sample.d - 1))
    exclude = sm.loo_exclusion(obs) if leave_one_out else None
    num, den, gnum, gden = sm.gradient_sums(theta, h, sample.z[obs], sample.x[obs], exclude)
    value, trimmed = _estimate(num, den, den_floor=level * sm.mass)
    grad = quotient_gradient(num, den, gnum, gden)
    keep = ~trimmed
    f1 = grad[keep, 1:] / value[keep, None]
    return obs[keep], f1


def asymptotic_components(sample, weights, theta_hat, h, tau, tau0, J, *, tau1=None,
                          leave_one_out=False, level=0.0, G=None, H=None):
    """``V``, ``W``, ``Delta`` and the MSE proxy ``E2`` at a fitted ``theta_hat``.

    ``V = sum_i delta_i W_in f1 f1'`` over contributing observations,
    ``W = n^-1/2 sum_i psi_i``, ``Delta`` is the ``1/n`` covariance of the
    influence rows ``psi_i`` and ``E2 = n^-1 W' V^-2 W``.
    """
    theta_hat = check_theta(theta_hat, sample.d)
    tau1 = float(sample.z.min()) if tau1 is None else float(tau1)
    n, dfree = sample.n, sample.d - 1
    obs, f1 = score_terms(sample, weights, theta_hat, h, (tau1, tau), J, leave_one_out, level)
    if obs.size < dfree + 1:
        raise InsufficientDataError(
            f"{obs.size} contributing observations for {dfree} free coordinates"
        )
    w = weights.w[obs]
    V = (f1 * w[:, None]).T @ f1
    V = (V + V.T) / 2
    full = np.zeros((n, dfree))
    full[obs] = f1
    G = censoring_survival(sample) if G is None else G
    H = empirical_cdf_H(sample) if H is None else H
    psi = influence_psi(sample, full, tau, tau0, tau1=tau1, weights=weights, G=G, H=H)
    W = psi.sum(axis=0) / np.sqrt(n)
    centred = psi - psi.mean(axis=0)
    Delta = centred.T @ centred / n
    Delta = (Delta + Delta.T) / 2
    E2, singular = e2_from(V, W, n)
    return AsymptoticComponents(V, W, Delta, E2, singular, int(obs.size), psi)


@dataclass(frozen=True)
class TruncationChoice:
    tau_hat: float
    table: dict
    failures: dict

    @property
    def E2_table(self):
        return {tau: res.E2 for tau, res in self.table.items()}


def select_truncation(tau_grid, fit_at):
    """Pick the grid ``tau`` minimising ``fit_at(tau).E2``; ties go to the larger ``tau``.

    ``fit_at`` may raise a package :class:`NumericalError` for a candidate; such
    candidates are recorded and skipped.
    """
    tau_grid = sorted(float(t) for t in tau_grid)
    if not tau_grid:
        raise InvalidInputError("empty truncation grid")
    table, failures = {}, {}
    for tau in tau_grid:
        try:
            table[tau] = fit_at(tau)
        except NumericalError as exc:
            failures[tau] = f"{type(exc).__name__}: {exc}"
    valid = [t for t, r in table.items() if np.isfinite(r.E2)]
    if not valid:
        raise SelectionError(
            "every truncation candidate failed: "
            + "; ".join(f"tau={t:g}: {m}" for t, m in failures.items()),
            failures,
        )
    best = min(table[t].E2 for t in valid)
    tau_hat = max(t for t in valid if table[t].E2 == best)
    return TruncationChoice(tau_hat, table, failures)


def retained_count(sample, tau):
    return int(np.sum(sample.z <= tau))


def largest_event_weight(sample, weights, tau=None, renormalise=False):
    """KM mass of the largest uncensored ``Z <= tau`` (all data when ``tau`` is None)."""
    mask = sample.delta == 1
    if tau is not None:
        mask &= sample.z <= tau
    if not mask.any():
        return float("nan")
    idx = np.flatnonzero(mask)
    top = idx[np.lexsort((idx, sample.z[idx]))[-1]]
    w = float(weights.w[top])
    if renormalise:
        w /= float(weights.w[mask].sum())
    return w

