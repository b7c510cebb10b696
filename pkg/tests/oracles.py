"""Brute-force reference computations used as independent test oracles.

Everything here is written with plain loops straight from the definitions,
sharing no code with the package beyond the sample container.
"""

import itertools

import numpy as np


def sorted_positions(z, delta):
    # time ascending, events before censorings at ties
    return sorted(range(len(z)), key=lambda i: (z[i], 1 - delta[i]))


def km_weights_bruteforce(z, delta):
    """Jumps of 1 - prod_{j: Z_(j) <= t} (1 - delta_(j) / (n - j + 1)) at each observation."""
    n = len(z)
    order = sorted_positions(z, delta)
    w = np.zeros(n)
    surv = 1.0
    for rank, i in enumerate(order):
        at_risk = n - rank
        new = surv * (1.0 - delta[i] / at_risk)
        w[i] = surv - new
        surv = new
    return w


def censoring_cdf_bruteforce(z, delta, t, left=False):
    """Product-limit estimate of P(C <= t) (or P(C < t)) with events leaving first."""
    n = len(z)
    surv = 1.0
    for time in sorted(set(z)):
        if (time > t) or (left and time >= t):
            break
        cens = sum(1 for i in range(n) if z[i] == time and delta[i] == 0)
        risk = sum(1 for i in range(n) if z[i] > time) + cens
        if cens:
            surv *= 1.0 - cens / risk
    return 1.0 - surv


def ecdf_bruteforce(z, t, left=False):
    return sum(1 for v in z if (v < t if left else v <= t)) / len(z)


def censoring_jumps_bruteforce(z, delta):
    out = []
    for time in sorted(set(z)):
        jump = censoring_cdf_bruteforce(z, delta, time) - censoring_cdf_bruteforce(z, delta, time, left=True)
        if jump > 0:
            out.append((time, jump))
    return out


def psi_bruteforce(z, delta, f1_vals, tau1, tau, tau0):
    """Influence rows from the definition, summing over every (observation, jump) pair.

    ``f1_vals[i]`` is the integrand's value at observation ``i`` (vector).
    """
    n = len(z)
    w = km_weights_bruteforce(z, delta)
    f1_vals = np.asarray(f1_vals, dtype=float).reshape(n, -1)
    in_a = [delta[j] == 1 and tau1 <= z[j] <= tau and z[j] <= tau0 for j in range(n)]

    def gamma(y):
        tot = np.zeros(f1_vals.shape[1])
        for j in range(n):
            if in_a[j] and z[j] >= y:
                tot += w[j] * f1_vals[j]
        return tot

    jumps = censoring_jumps_bruteforce(z, delta)
    rows = []
    for i in range(n):
        g_left = censoring_cdf_bruteforce(z, delta, z[i], left=True)
        first = f1_vals[i] / (1 - g_left) if in_a[i] else np.zeros(f1_vals.shape[1])
        # integral of gamma(y) / (1 - H(y-)) against dM_i
        mart = np.zeros(f1_vals.shape[1])
        if delta[i] == 0:
            mart += gamma(z[i]) / (1 - ecdf_bruteforce(z, z[i], left=True))
        for t, dg in jumps:
            if z[i] >= t:
                g_t = censoring_cdf_bruteforce(z, delta, t, left=True)
                mart -= gamma(t) * dg / ((1 - g_t) * (1 - ecdf_bruteforce(z, t, left=True)))
        rows.append(first + mart)
    return np.array(rows)


def all_delta_patterns(n):
    return [np.array(p) for p in itertools.product((0, 1), repeat=n)]


def kernel_by_convolution(u, grid_step=1e-4):
    """``2k(u) - (k*k)(u)`` with the convolution done by quadrature."""
    from scipy.integrate import quad

    def k(v):
        return 0.75 * (1 - v * v) if abs(v) <= 1 else 0.0

    lo, hi = max(-1.0, u - 1.0), min(1.0, u + 1.0)
    conv = quad(lambda t: k(t) * k(u - t), lo, hi, epsabs=1e-14, epsrel=1e-13)[0] if hi > lo else 0.0
    return 2 * k(u) - conv


def dense_conditional_density(z_obs, x_obs, w, theta, h, z, u, kernel):
    """Direct double sum of the kernel ratio."""
    ku = np.array([kernel((u - xi @ theta) / h) / h for xi in x_obs])
    kz = np.array([kernel((z - zi) / h) / h for zi in z_obs])
    den = np.sum(w * ku)
    return np.sum(w * ku * kz) / den if den > 0 else 0.0


# uncensored reference pipeline ---------------------------------------------

def _k(u, h):
    from censindex.kernels import KERNEL

    return KERNEL.scaled(u, h)


class UncensoredReference:
    """Plain-data version of the estimation pipeline for ``delta == 1``.

    Uses equal weights ``1/n``, ordinary least squares for the start value and
    direct leave-one-out kernel ratios. Only the generic simplex driver is
    shared with the package.
    """

    floor = 1e-10

    def __init__(self, z, x, seed=0, restarts=3, jitter=0.1, radius=0.5, bound=10.0,
                 n_quadrature=128, max_alternations=5, alternation_tolerance=1e-4):
        self.z = np.asarray(z, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.n, self.d = self.x.shape
        self.w = np.full(self.n, 1.0 / self.n)
        self.seed, self.restarts, self.jitter = seed, restarts, jitter
        self.radius, self.bound, self.nq = radius, bound, n_quadrature
        self.max_alt, self.alt_tol = max_alternations, alternation_tolerance
        self.lo, self.hi = self.z.min(), self.z.max()

    def theta(self, free):
        return np.concatenate(([1.0], np.asarray(free, dtype=float)))

    def index_density(self, theta, h, u):
        return (_k(u[:, None] - (self.x @ theta)[None, :], h) @ self.w) / self.w.sum()

    def level(self, theta, h):
        return max(float(np.quantile(self.index_density(theta, h, self.x @ theta), 0.05)), 0.0)

    def loglik(self, theta, h, use, level):
        u = self.x @ theta
        ku = _k(u[:, None] - u[None, :], h)
        np.fill_diagonal(ku, 0.0)
        kz = _k(self.z[:, None] - self.z[None, :], h)
        den = ku @ self.w
        num = (ku * kz) @ self.w
        ok = den > max(self.floor, level * self.w.sum())
        val = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
        keep = use & ok & (val > self.floor)
        return float(np.dot(self.w[keep], np.log(val[keep])))

    def cv(self, theta, h):
        u = self.x @ theta
        ku = _k(u[:, None] - u[None, :], h)
        np.fill_diagonal(ku, 0.0)
        den = ku @ self.w
        grid = np.linspace(self.lo, self.hi, self.nq)
        kg = _k(grid[:, None] - self.z[None, :], h)
        ok = den > self.floor
        dens = np.where(ok[:, None], ((ku * self.w) @ kg.T) / np.where(ok, den, 1.0)[:, None], 0.0)
        point = np.where(ok, ((ku * _k(self.z[:, None] - self.z[None, :], h)) @ self.w)
                         / np.where(ok, den, 1.0), 0.0)
        terms = np.trapezoid(dens ** 2, grid, axis=1) - 2.0 * point
        return float(np.dot(self.w[ok], terms[ok]))

    def bandwidth(self, theta, grid):
        crit = np.array([self.cv(theta, h) for h in grid])
        return float(np.asarray(grid)[crit == crit.min()].max())

    def fit(self, cfg):
        from censindex.fitter import maximize_simplex, restart_points

        design = np.column_stack((np.ones(self.n), self.x))
        slope = np.linalg.lstsq(design, self.z, rcond=None)[0][1:]
        start = np.clip(slope[1:] / slope[0], -self.bound, self.bound)
        h0 = float(np.std(self.x @ self.theta(start), ddof=1)) * self.n ** (-1 / 7)
        q = np.quantile(self.x, [0.05, 0.95], axis=0)
        in_box = np.all((self.x >= q[0]) & (self.x <= q[1]), axis=1)
        lvl = self.level(self.theta(start), h0)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0]))
        starts = restart_points(start, self.restarts, self.jitter, rng)
        bounds = [(-self.bound, self.bound)] * (self.d - 1)
        prelim, _, _ = maximize_simplex(
            lambda v: self.loglik(self.theta(v), h0, in_box, lvl), starts, 0.2, cfg, bounds=bounds)
        theta_n = self.theta(prelim)
        c = self.level(theta_n, h0)
        J0 = self.index_density(theta_n, h0, self.x @ theta_n) > c
        base = float(np.std(self.x @ theta_n, ddof=1)) * self.n ** (-1 / 7)
        h_grid = tuple(np.geomspace(0.5 * base, 2.0 * base, 10))
        free_n = prelim
        tau = self.hi
        rng = np.random.default_rng(
            np.random.SeedSequence([self.seed, 1, int(round(tau * 1e6)) & 0xFFFFFFFF]))
        theta, h, rounds = theta_n.copy(), self.bandwidth(theta_n, h_grid), 0
        while True:
            rounds += 1
            starts = (restart_points(free_n, self.restarts, self.jitter, rng) if rounds == 1
                      else [theta[1:]])

            def ll(v, h=h):
                return self.loglik(self.theta(v), h, J0, c)

            best, best_val, _ = maximize_simplex(ll, starts, min(0.1, self.radius / 2), cfg,
                                                 ball=(free_n, self.radius))
            if ll(free_n) > best_val:
                best = free_n.copy()
            new = self.theta(best)
            change = np.linalg.norm(new - theta) / max(1.0, np.linalg.norm(theta))
            theta = new
            h_new = self.bandwidth(theta, h_grid)
            if h_new == h or rounds >= self.max_alt:
                break
            if change < self.alt_tol and rounds > 1:
                break
            h = h_new
        return theta_n, theta, h
