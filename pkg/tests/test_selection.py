from types import SimpleNamespace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from censindex.exceptions import InsufficientDataError, InvalidInputError, NumericalError, SelectionError
from censindex.kernels import kernel_eval
from censindex.selection import (
    PAPER_H_GRID,
    asymptotic_components,
    cv_bandwidth,
    cv_criterion,
    default_h_grid,
    default_tau_grid,
    e2_from,
    largest_event_weight,
    retained_count,
    sandwich,
    select_truncation,
)
from censindex.survival import CensoredSample, default_tau0, km_jump_weights
from conftest import random_sample


def fan_yim_reference(z, x, theta, h, n_grid=128):
    """Uncensored leave-one-out ISE criterion written with explicit loops."""
    n = len(z)
    u = x @ theta
    grid = np.linspace(z.min(), z.max(), n_grid)
    total = 0.0
    for i in range(n):
        others = [j for j in range(n) if j != i]
        ku = np.array([kernel_eval((u[i] - u[j]) / h) / h for j in others])
        den = ku.sum()
        if den <= 1e-10:
            continue
        f_grid = np.array([sum(ku[k] * kernel_eval((g - z[j]) / h) / h for k, j in enumerate(others))
                           for g in grid]) / den
        f_pt = sum(ku[k] * kernel_eval((z[i] - z[j]) / h) / h for k, j in enumerate(others)) / den
        sq = np.sum((f_grid[1:] ** 2 + f_grid[:-1] ** 2) / 2 * np.diff(grid))
        total += (sq - 2 * f_pt) / n
    return total


class TestCV:
    def test_uncensored_reference(self, rng):
        n = 25
        s = CensoredSample(rng.normal(size=n), np.ones(n), rng.normal(size=(n, 2)))
        w = km_jump_weights(s)
        theta = np.array([1.0, 0.7])
        for h in (0.8, 1.5):
            got = cv_criterion(s, w, theta, (s.z.min(), s.z.max()), h)
            assert got == pytest.approx(fan_yim_reference(s.z, s.x, theta, h), abs=1e-10)

    def test_singleton_grid(self, rng):
        s = random_sample(rng, 20)
        assert cv_bandwidth(s, km_jump_weights(s), [1.0, 0.0], (0.0, 5.0), [0.7]) == 0.7

    def test_ties_go_to_larger(self, rng, monkeypatch):
        import censindex.selection as sel

        monkeypatch.setattr(sel, "cv_profile", lambda *a, **k: np.array([1.0, 0.5, 0.5, 2.0]))
        s = random_sample(rng, 20)
        assert sel.cv_bandwidth(s, km_jump_weights(s), [1.0, 0.0], (0.0, 5.0), [1, 2, 3, 4]) == 3.0

    def test_all_degenerate(self, rng, monkeypatch):
        import censindex.selection as sel

        monkeypatch.setattr(sel, "cv_profile", lambda *a, **k: np.array([np.nan, np.nan]))
        s = random_sample(rng, 20)
        with pytest.raises(SelectionError):
            sel.cv_bandwidth(s, km_jump_weights(s), [1.0, 0.0], (0.0, 5.0), [1.0, 2.0])

    def test_empty_grid(self, rng):
        s = random_sample(rng, 20)
        with pytest.raises(InvalidInputError):
            cv_bandwidth(s, km_jump_weights(s), [1.0, 0.0], (0.0, 5.0), [])

    def test_quadrature_resolution_stable(self, sim_sample_200):
        s = sim_sample_200
        w = km_jump_weights(s)
        theta = np.array([1.0, 0.5, 1.4, 0.2])
        win = (s.z.min(), default_tau0(s))
        a = cv_criterion(s, w, theta, win, 1.2, n_grid=128)
        b = cv_criterion(s, w, theta, win, 1.2, n_grid=1024)
        assert a == pytest.approx(b, rel=1e-2)

    def test_grids(self, rng):
        s = random_sample(rng, 50)
        hs = default_h_grid(s, np.array([1.0, 1.0]))
        assert len(hs) == 10 and np.all(np.diff(hs) > 0)
        taus = default_tau_grid(s)
        assert max(taus) <= default_tau0(s)
        assert set(taus) <= set(s.z[s.delta == 1])
        assert PAPER_H_GRID == (1.0, 1.1, 1.2, 1.3, 1.4, 1.5)


class TestE2Algebra:
    def test_identity_V(self):
        W = np.array([1.0, -2.0, 0.5])
        assert e2_from(np.eye(3), W, 10)[0] == pytest.approx(np.dot(W, W) / 10, abs=0)

    def test_zero_W(self):
        assert e2_from(np.diag([1.0, 2.0]), np.zeros(2), 5)[0] == 0.0

    def test_scaling_exact(self, rng):
        A = rng.normal(size=(3, 3))
        V = A @ A.T + np.eye(3)
        W = rng.normal(size=3)
        base = e2_from(V, W, 50)[0]
        assert e2_from(2 * V, W, 50)[0] * 4 == pytest.approx(base, rel=1e-14)
        assert e2_from(V, 2 * W, 50)[0] == pytest.approx(4 * base, rel=1e-14)
        assert e2_from(V, 3 * W, 50)[0] == pytest.approx(9 * base, rel=1e-14)

    def test_singular_flag(self):
        V = np.array([[1.0, 1.0], [1.0, 1.0]])
        e2, singular = e2_from(V, np.array([1.0, 1.0]), 4)
        assert singular and np.isfinite(e2)
        assert sandwich(V, np.eye(2))[1]


class TestAsymptoticComponents:
    def test_shapes_and_psd(self, sim_sample_200):
        s = sim_sample_200
        w = km_jump_weights(s)
        tau0 = default_tau0(s)
        comps = asymptotic_components(s, w, [1.0, 0.5, 1.4, 0.2], 1.2, tau0, tau0, None)
        assert comps.V_hat.shape == (3, 3) and comps.W_hat.shape == (3,)
        assert_allclose(comps.V_hat, comps.V_hat.T, atol=1e-10)
        assert np.linalg.eigvalsh(comps.Delta_hat).min() >= -1e-10
        assert comps.E2 >= 0
        assert comps.E2 == pytest.approx(e2_from(comps.V_hat, comps.W_hat, s.n)[0])
        Sigma = comps.Sigma_hat
        assert_allclose(Sigma, Sigma.T, atol=1e-12)

    def test_insufficient(self, rng):
        s = random_sample(rng, 30, d=3)
        w = km_jump_weights(s)
        with pytest.raises(InsufficientDataError):
            asymptotic_components(s, w, [1.0, 0.0, 0.0], 1.0, s.z.max(), s.z.max(),
                                  np.zeros(s.n, bool))


class TestSelectTruncation:
    def test_argmin_and_ties(self):
        e2 = {1.0: 0.3, 2.0: 0.1, 3.0: 0.1, 4.0: 0.2}
        choice = select_truncation(e2, lambda t: SimpleNamespace(E2=e2[t]))
        assert choice.tau_hat == 3.0
        assert choice.E2_table == e2

    def test_singleton(self):
        assert select_truncation([5.0], lambda t: SimpleNamespace(E2=1.0)).tau_hat == 5.0

    def test_failures_recorded(self):
        def fit_at(t):
            if t < 2:
                raise NumericalError("bad")
            return SimpleNamespace(E2=t)

        choice = select_truncation([1.0, 2.0, 3.0], fit_at)
        assert choice.tau_hat == 2.0 and 1.0 in choice.failures

    def test_all_fail(self):
        def fit_at(t):
            raise NumericalError("bad")

        with pytest.raises(SelectionError) as info:
            select_truncation([1.0, 2.0], fit_at)
        assert set(info.value.failures) == {1.0, 2.0}


class TestWeights:
    def test_no_censoring(self, rng):
        n = 40
        s = CensoredSample(rng.normal(size=n), np.ones(n), rng.normal(size=(n, 1)))
        w = km_jump_weights(s)
        assert largest_event_weight(s, w) == 1 / n
        tau = np.sort(s.z)[29]
        assert retained_count(s, tau) == 30
        assert largest_event_weight(s, w, tau, renormalise=True) == pytest.approx(1 / 30)
