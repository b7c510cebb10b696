"""Fourth-order kernel and Kaplan-Meier weighted kernel density estimators.

The kernel is ``K = 2k - k*k`` with ``k`` the Epanechnikov kernel. It is an
even piecewise polynomial supported on ``[-2, 2]``:

    K(u) = 3|u|^5/160 - 3|u|^3/8 - 3u^2/4 + 9/10      for |u| <= 1
    K(u) = 3(|u| - 2)^3 (u^2 + 6|u| + 4) / 160         for 1 < |u| <= 2

``K'`` jumps at ``|u| = 1`` (inherited from ``k``); derivatives are taken
piecewise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial

from ._validation import check_positive, check_theta, check_window
from ._fastsums import kernel_sums
from .exceptions import DegenerateWindowError, InvalidInputError
from .survival import window_mask

DENSITY_FLOOR = 1e-10


class FourthOrderKernel:
    """``K = 2k - k*k`` for the Epanechnikov ``k``, with two derivatives."""

    support = 2.0

    def __init__(self):
        inner = Polynomial([9 / 10, 0.0, -3 / 4, -3 / 8, 0.0, 3 / 160])
        outer = 3 / 160 * Polynomial([-2.0, 1.0]) ** 3 * Polynomial([4.0, 6.0, 1.0])
        self._pieces = [(inner, outer)]
        for _ in range(2):
            i, o = self._pieces[-1]
            self._pieces.append((i.deriv(), o.deriv()))

    def __call__(self, u, order=0):
        return self.evaluate(u, order)

    def evaluate(self, u, order=0):
        """Evaluate ``K`` (order 0), ``K'`` (1) or ``K''`` (2) at ``u``."""
        if order not in (0, 1, 2):
            raise InvalidInputError(f"kernel derivative order must be 0, 1 or 2, got {order}")
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        inner, outer = self._pieces[order]
        out = np.where(a <= 1.0, inner(a), np.where(a <= 2.0, outer(a), 0.0))
        if order == 1:
            out = np.sign(u) * out
        return out if out.ndim else float(out)

    def scaled(self, u, h, order=0):
        """``h^-(1+order) K^(order)(u / h)``."""
        return self.evaluate(np.asarray(u) / h, order) / h ** (1 + order)


KERNEL = FourthOrderKernel()


def kernel_eval(u, order=0):
    return KERNEL.evaluate(u, order)


@dataclass(frozen=True)
class DensityEstimate:
    """Conditional density value with the index-density denominator used.

    ``trimmed`` is set when the denominator or the value falls at or below
    ``DENSITY_FLOOR``; such values must not enter a log-likelihood.
    """

    value: np.ndarray
    denominator: np.ndarray
    trimmed: np.ndarray


class WindowSmoother:
    """Kernel sums over the uncensored observations inside a truncation window.

    Holds the window's data once so that repeated evaluations at different
    ``theta`` only redo the kernel arithmetic. The kernel matrices are rebuilt
    on each call; nothing is cached across calls.
    """

    def __init__(self, sample, weights, window):
        self.sample = sample
        self.window = check_window(window)
        inw = (sample.delta == 1) & window_mask(sample.z, self.window) & (weights.w > 0)
        self.members = np.flatnonzero(inw)
        self.a = weights.w[self.members]
        self.z = sample.z[self.members]
        self.x = sample.x[self.members]
        # column of observation i among the members, or -1
        self.position = np.full(sample.n, -1)
        self.position[self.members] = np.arange(self.members.size)

    @property
    def mass(self):
        return float(self.a.sum())

    def require_nonempty(self):
        if self.members.size == 0:
            raise DegenerateWindowError(
                f"no uncensored observation in window [{self.window[0]}, {self.window[1]}]"
            )

    def _index_kernel(self, theta, u_eval, h, exclude, order=0):
        ku = KERNEL.scaled(u_eval[:, None] - (self.x @ theta)[None, :], h, order)
        if exclude is not None:
            rows = np.flatnonzero(exclude >= 0)
            ku[rows, exclude[rows]] = 0.0
        return ku

    def sums(self, theta, h, z_eval, u_eval, exclude=None):
        """Numerator and denominator sums at points ``(z_eval, u_eval)``.

        ``exclude[e]`` is a member column dropped from row ``e`` (leave-one-out),
        or -1.
        """
        if exclude is None:
            exclude = np.full(len(u_eval), -1, dtype=np.int64)
        return kernel_sums(
            np.ascontiguousarray(u_eval, dtype=float),
            np.ascontiguousarray(z_eval, dtype=float),
            np.ascontiguousarray(exclude, dtype=np.int64),
            self.x @ theta, self.z, self.a, float(h),
        )

    def dense_sums(self, theta, h, z_eval, u_eval, exclude=None):
        """Same as :meth:`sums`, with full kernel matrices."""
        ku = self._index_kernel(theta, u_eval, h, exclude)
        kz = KERNEL.scaled(z_eval[:, None] - self.z[None, :], h)
        den = ku @ self.a
        num = (ku * kz) @ self.a
        return num, den

    def gradient_sums(self, theta, h, z_eval, x_eval, exclude=None):
        """Sums and their theta-gradients at ``(z_eval, theta'x_eval)``."""
        u_eval = x_eval @ theta
        ku = self._index_kernel(theta, u_eval, h, exclude)
        dku = self._index_kernel(theta, u_eval, h, exclude, order=1)
        kz = KERNEL.scaled(z_eval[:, None] - self.z[None, :], h)
        den = ku @ self.a
        num = (ku * kz) @ self.a
        # d/dtheta K_h(theta'(x - X_j)) = K_h'(.) (x - X_j)
        gd = dku * self.a
        gn = gd * kz
        grad_den = gd.sum(axis=1)[:, None] * x_eval - gd @ self.x
        grad_num = gn.sum(axis=1)[:, None] * x_eval - gn @ self.x
        return num, den, grad_num, grad_den

    def density_on_grid(self, theta, h, z_grid, u_eval, exclude=None):
        """``f(z, u_e)`` for every ``z`` in ``z_grid`` and every ``u_e``: shape (E, G)."""
        ku = self._index_kernel(theta, u_eval, h, exclude)
        kz = KERNEL.scaled(z_grid[:, None] - self.z[None, :], h)
        den = ku @ self.a
        num = (ku * self.a) @ kz.T
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(den[:, None] > DENSITY_FLOOR, num / den[:, None], 0.0), den

    def loo_exclusion(self, obs):
        return self.position[np.asarray(obs)]


def _estimate(num, den, floor=DENSITY_FLOOR, den_floor=0.0):
    ok = den > max(floor, den_floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        value = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
    trimmed = ~ok | (value < floor)
    return value, trimmed


def _check_common(sample, theta, h):
    theta = check_theta(theta, sample.d)
    h = check_positive(h, "bandwidth h")
    return theta, h


def conditional_density(sample, weights, theta, h, tau_window, z, u):
    """Kernel estimate of the density of ``Y`` at ``z`` given ``theta'X = u`` and ``Y`` in the window.

    Ratio of ``sum_i delta_i W_in 1{Z_i in A} K_h(u - theta'X_i) K_h(z - Z_i)``
    to ``sum_i delta_i W_in 1{Z_i in A} K_h(u - theta'X_i)``. ``z`` and ``u``
    broadcast against each other.
    """
    theta, h = _check_common(sample, theta, h)
    sm = WindowSmoother(sample, weights, tau_window)
    z, u = np.broadcast_arrays(np.asarray(z, dtype=float), np.asarray(u, dtype=float))
    shape = z.shape
    num, den = sm.sums(theta, h, z.reshape(-1), u.reshape(-1))
    value, trimmed = _estimate(num, den)
    if not shape:
        return DensityEstimate(float(value[0]), float(den[0]), bool(trimmed[0]))
    return DensityEstimate(value.reshape(shape), den.reshape(shape), trimmed.reshape(shape))


def conditional_density_gradient(sample, weights, theta, h, tau_window, z, x_row):
    """Gradient in ``theta`` of ``theta -> f_theta(z, theta'x_row)``.

    Differentiates through ``theta'x_row`` and every ``theta'X_i``. The pinned
    coordinate 0 is included; callers drop it. Accepts a single point or
    arrays ``z`` of shape (E,) with ``x_row`` of shape (E, d). Returns zeros
    where the denominator is trimmed.
    """
    theta, h = _check_common(sample, theta, h)
    sm = WindowSmoother(sample, weights, tau_window)
    single = np.ndim(z) == 0
    z_eval = np.atleast_1d(np.asarray(z, dtype=float))
    x_eval = np.atleast_2d(np.asarray(x_row, dtype=float))
    num, den, gnum, gden = sm.gradient_sums(theta, h, z_eval, x_eval)
    grad = quotient_gradient(num, den, gnum, gden)
    return grad[0] if single else grad


def quotient_gradient(num, den, grad_num, grad_den):
    ok = den > DENSITY_FLOOR
    safe = np.where(ok, den, 1.0)
    value = num / safe
    grad = (grad_num - value[:, None] * grad_den) / safe[:, None]
    return np.where(ok[:, None], grad, 0.0)


def index_density(sample, weights, theta, h, tau_window, u):
    """Kernel estimate of the density of ``theta'X`` given ``Y`` in the window.

    Kaplan-Meier weighted kernel sum normalised by the window's total mass.
    """
    theta, h = _check_common(sample, theta, h)
    sm = WindowSmoother(sample, weights, tau_window)
    sm.require_nonempty()
    u = np.asarray(u, dtype=float)
    ku = KERNEL.scaled(u.reshape(-1)[:, None] - (sm.x @ theta)[None, :], h)
    out = (ku @ sm.a) / sm.mass
    return out.reshape(u.shape) if u.ndim else float(out[0])
