"""Scikit-learn style wrapper around the estimation pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import as_design_matrix, split_censored_target
from .exceptions import InvalidInputError
from .fitter import AUTO, FitConfig, fit, standard_errors
from .kernels import DENSITY_FLOOR, WindowSmoother, _estimate
from .survival import CensoredSample, km_jump_weights


class CensoredIndexRegressor(TransformerMixin, BaseEstimator):
    """Single-index conditional density model for right-censored responses.

    The conditional density of ``Y`` given ``X`` is assumed to depend on ``X``
    only through ``theta'X`` with ``theta[0] = 1``. Fitting maximises a
    Kaplan-Meier weighted kernel pseudo-likelihood, choosing the bandwidth by
    cross-validation and the truncation point by estimated asymptotic MSE.

    Parameters mirror :class:`~censindex.fitter.FitConfig`.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
        Estimated index direction, first entry 1.
    coef_prelim_ : ndarray of shape (n_features,)
        Preliminary estimate.
    bandwidth_, truncation_ : float
        Selected ``h`` and ``tau``.
    covariance_ : ndarray of shape (n_features - 1, n_features - 1)
        Estimated covariance of the free coordinates (``Sigma / n``).
    standard_errors_ : ndarray of shape (n_features - 1,)
    result_ : IndexModelFit
        Full pipeline output.

    Examples
    --------
    >>> import numpy as np
    >>> from censindex import CensoredIndexRegressor
    >>> rng = np.random.default_rng(0)
    >>> X = rng.normal(size=(80, 2))
    >>> y = np.column_stack((X @ [1.0, 0.5] + rng.normal(size=80), np.ones(80)))
    >>> est = CensoredIndexRegressor(tau_grid=[float(np.quantile(y[:, 0], 0.9))]).fit(X, y)
    >>> float(est.coef_[0]), est.coef_.shape
    (1.0, (2,))
    """

    def __init__(self, box=AUTO, c=AUTO, h0=AUTO, h_grid=AUTO, tau_grid=AUTO, tau0=AUTO,
                 tau1=AUTO, neighborhood_radius=0.5, param_bound=10.0, max_iters=1000,
                 x_tolerance=1e-4, f_tolerance=1e-8, restarts=3, jitter=0.1,
                 max_alternations=5, alternation_tolerance=1e-4, bandwidth_mode="alternate",
                 leave_one_out=True, n_quadrature=128, seed=0):
        self.box = box
        self.c = c
        self.h0 = h0
        self.h_grid = h_grid
        self.tau_grid = tau_grid
        self.tau0 = tau0
        self.tau1 = tau1
        self.neighborhood_radius = neighborhood_radius
        self.param_bound = param_bound
        self.max_iters = max_iters
        self.x_tolerance = x_tolerance
        self.f_tolerance = f_tolerance
        self.restarts = restarts
        self.jitter = jitter
        self.max_alternations = max_alternations
        self.alternation_tolerance = alternation_tolerance
        self.bandwidth_mode = bandwidth_mode
        self.leave_one_out = leave_one_out
        self.n_quadrature = n_quadrature
        self.seed = seed

    def _config(self):
        return FitConfig.from_dict(self.get_params())

    def fit(self, X, y):
        """Fit on covariates ``X`` and censored target ``y``.

        ``y`` is an ``(n, 2)`` array of ``(z, delta)`` pairs or a structured
        array with fields ``z``/``delta`` (or ``time``/``event``).
        """
        z, delta = split_censored_target(y)
        X = as_design_matrix(X, n_rows=z.size, name="X")
        sample = CensoredSample(z, delta, X)
        res = fit(sample, self._config())
        self.result_ = res
        self.coef_ = res.theta_hat.copy()
        self.coef_prelim_ = res.theta_prelim.copy()
        self.bandwidth_ = res.h_hat
        self.truncation_ = res.tau_hat
        self.covariance_, self.standard_errors_ = standard_errors(res)
        self.n_features_in_ = X.shape[1]
        self._sample = sample
        self._weights = km_jump_weights(sample)
        return self

    def _check_X(self, X):
        check_is_fitted(self, "coef_")
        X = as_design_matrix(X, name="X")
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(
                f"X has {X.shape[1]} features, the model was fitted with {self.n_features_in_}"
            )
        return X

    def transform(self, X):
        """Index values ``X @ coef_`` as a column."""
        return (self._check_X(X) @ self.coef_)[:, None]

    def _smoother(self):
        return WindowSmoother(self._sample, self._weights, (self.result_.tau1, self.truncation_))

    def predict_density(self, X, z):
        """Estimated conditional density of ``Y`` at ``z`` given ``X`` (window-restricted).

        ``z`` broadcasts against the rows of ``X``. Points whose estimate is
        trimmed get ``nan``.
        """
        X = self._check_X(X)
        u = X @ self.coef_
        z, u = np.broadcast_arrays(np.asarray(z, dtype=float), u)
        num, den = self._smoother().sums(self.coef_, self.bandwidth_, z.ravel(), u.ravel())
        value, trimmed = _estimate(num, den)
        return np.where(trimmed, np.nan, value).reshape(z.shape)

    def predict(self, X, n_grid=256):
        """Conditional mean of ``Y`` given ``X`` and ``Y`` inside the selected window.

        The density estimate is integrated on ``n_grid`` points; negative
        values of the fourth-order estimate are clipped before normalising.
        """
        X = self._check_X(X)
        lo, hi = self.result_.tau1, self.truncation_
        grid = np.linspace(lo, hi, int(n_grid))
        u = X @ self.coef_
        dens, den = self._smoother().density_on_grid(self.coef_, self.bandwidth_, grid, u)
        dens = np.clip(dens, 0.0, None)
        mass = np.trapezoid(dens, grid, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.trapezoid(dens * grid, grid, axis=1) / mass
        return np.where((den > DENSITY_FLOOR) & (mass > 0), mean, np.nan)

    def score(self, X, y):
        """Kaplan-Meier weighted mean log density of ``y`` under the fitted model.

        Only uncensored points inside the selected window with a usable
        estimate enter; the weights are renormalised over them.
        """
        z, delta = split_censored_target(y)
        X = self._check_X(X)
        sample = CensoredSample(z, delta, X)
        w = km_jump_weights(sample).w
        lo, hi = self.result_.tau1, self.truncation_
        use = (delta == 1) & (z >= lo) & (z <= hi) & (w > 0)
        dens = self.predict_density(X[use], z[use])
        ok = np.isfinite(dens) & (dens > DENSITY_FLOOR)
        if not ok.any():
            return float("-inf")
        ww = w[use][ok]
        return float(np.dot(ww, np.log(dens[ok])) / ww.sum())
