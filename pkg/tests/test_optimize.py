"""Penalization merits, inner optimizers and the multistart solver."""

import math

import numpy as np
import pytest

from stockopt.optimize import (
    MeritSpec,
    gradient_descent,
    latin_hypercube,
    merit_value,
    nelder_mead,
    solve_constrained,
)

BOX01 = np.array([[0.0, 1.0], [0.0, 1.0]])


def test_latin_hypercube_examples():
    assert latin_hypercube(1, 2, seed=0).tolist() == [[0.5, 0.5]]
    pts = latin_hypercube(2, 1, seed=1)
    assert sorted(pts[:, 0].tolist()) == [0.25, 0.75]


def test_latin_hypercube_stratification_and_determinism():
    for n in (1, 2, 10, 100):
        for dim in (1, 3, 5):
            a = latin_hypercube(n, dim, seed=42)
            b = latin_hypercube(n, dim, seed=42)
            assert np.array_equal(a, b)
            for d in range(dim):
                strata = np.floor(a[:, d] * n).astype(int)
                assert sorted(strata.tolist()) == list(range(n))


def test_merit_value_examples():
    sp = MeritSpec(kind="squared_penalty")
    assert merit_value(sp, 5.0, 2.0, mu=10.0) == pytest.approx(45.0)
    assert merit_value(sp, 5.0, -2.0, mu=10.0) == pytest.approx(5.0)

    al = MeritSpec(kind="augmented_lagrangian")
    rng = np.random.default_rng(0)
    for f, g, mu in rng.uniform(0.1, 5.0, size=(20, 3)):
        assert merit_value(al, f, g, mu, lam=0.0) == pytest.approx(
            merit_value(sp, f, g, mu / 2.0)
        )

    lb = MeritSpec(kind="log_barrier")
    assert merit_value(lb, 5.0, -1.0, mu=3.0) == pytest.approx(5.0)
    assert math.isinf(merit_value(lb, 5.0, 0.1, mu=3.0))


def test_squared_penalty_monotone_in_mu():
    sp = MeritSpec(kind="squared_penalty")
    values = [merit_value(sp, 1.0, 0.7, mu) for mu in (1.0, 2.0, 5.0, 50.0)]
    assert all(a <= b for a, b in zip(values, values[1:]))


def test_nelder_mead_quadratic():
    merit = lambda p: (p[0] - 0.3) ** 2 + (p[1] - 0.7) ** 2
    for start in ([0.1, 0.1], [0.9, 0.2], [0.5, 0.5]):
        res = nelder_mead(merit, BOX01, start)
        assert res.point == pytest.approx([0.3, 0.7], abs=1e-6)


def test_nelder_mead_rosenbrock():
    merit = lambda p: 100 * (p[1] - p[0] ** 2) ** 2 + (1 - p[0]) ** 2
    box = np.array([[-2.0, 2.0], [-2.0, 2.0]])
    res = nelder_mead(merit, box, [0.0, 0.0])
    assert res.point == pytest.approx([1.0, 1.0], abs=1e-4)


def test_nelder_mead_boundary_optimum():
    box = np.array([[0.0, 1.0]] * 3)
    res = nelder_mead(lambda p: p[0], box, [0.6, 0.4, 0.5])
    assert res.point[0] == pytest.approx(0.0, abs=1e-6)


def test_gradient_descent_quadratic():
    merit = lambda p: (p[0] - 0.4) ** 2 + 2 * (p[1] - 0.6) ** 2
    res = gradient_descent(merit, BOX01, [0.1, 0.9])
    assert res.point == pytest.approx([0.4, 0.6], abs=1e-6)


def test_gradient_descent_projection_saturates():
    res = gradient_descent(lambda p: p[0], np.array([[0.2, 1.0]]), [0.9])
    assert res.point[0] == pytest.approx(0.2, abs=1e-6)


def test_gradient_descent_handles_barrier_sentinel():
    # merit is +inf for x > 0.5; the optimizer must halve steps past the
    # sentinel instead of propagating non-finite arithmetic
    def merit(p):
        if p[0] > 0.5:
            return math.inf
        return (p[0] - 0.45) ** 2

    res = gradient_descent(merit, np.array([[0.0, 1.0]]), [0.3])
    assert math.isfinite(res.value)
    assert res.point[0] == pytest.approx(0.45, abs=1e-5)


def brute_force_constrained(f, g, box, resolution=1e-3):
    """Grid-search oracle over the feasible set."""
    axes = [np.arange(lo, hi + resolution / 2, resolution) for lo, hi in box]
    best, best_p = np.inf, None
    grid = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([a.ravel() for a in grid], axis=1)
    for p in pts:
        if g(p) <= 0 and f(p) < best:
            best, best_p = f(p), p
    return best_p, best


F3 = lambda p: float(np.sum(np.asarray(p) ** 2))
G3 = lambda p: 0.5 - p[0]
BOX3 = np.array([[0.0, 1.0]] * 3)


def test_solve_constrained_matches_brute_force():
    outcome = solve_constrained(F3, G3, BOX3, n_starts=3, seed=5)
    # [DERIVED] oracle (coarsened for runtime; exact optimum is analytic)
    oracle_p, oracle_f = brute_force_constrained(
        lambda p: F3(p), G3, BOX3, resolution=0.05
    )
    assert oracle_p == pytest.approx([0.5, 0.0, 0.0], abs=1e-12)
    assert outcome.feasible
    assert outcome.best == pytest.approx([0.5, 0.0, 0.0], abs=1e-3)
    assert outcome.f_best == pytest.approx(0.25, abs=2e-3)
    assert outcome.g_best <= 0.0
    assert oracle_f == pytest.approx(0.25, abs=1e-12)


def test_solve_constrained_inactive_constraint():
    outcome = solve_constrained(
        lambda p: (p[0] - 0.5) ** 2, lambda p: -1.0, np.array([[0.0, 1.0]]), n_starts=2, seed=0
    )
    assert outcome.feasible
    assert outcome.best[0] == pytest.approx(0.5, abs=1e-6)


def test_solve_constrained_no_feasible_point():
    outcome = solve_constrained(
        lambda p: p[0], lambda p: 1.0, np.array([[0.0, 1.0]]), n_starts=2, seed=0
    )
    assert not outcome.feasible


def test_solve_constrained_deterministic():
    a = solve_constrained(F3, G3, BOX3, n_starts=2, seed=9)
    b = solve_constrained(F3, G3, BOX3, n_starts=2, seed=9)
    assert np.array_equal(a.best, b.best)
    assert a.total_evaluations == b.total_evaluations
    assert [r.evaluations for r in a.per_run] == [r.evaluations for r in b.per_run]


def test_barrier_skips_infeasible_starts():
    # constraint feasible only for p0 < 0.1: most LHS starts are infeasible
    outcome = solve_constrained(
        lambda p: p[0], lambda p: p[0] - 0.1, np.array([[0.0, 1.0]]), n_starts=5, seed=2
    )
    skipped = [r for r in outcome.per_run if r.skipped]
    assert all(r.method == "log_barrier" for r in skipped)
    assert len(skipped) > 0
    assert outcome.feasible


def test_evaluation_count_magnitudes():
    # qualitative check: simplex search needs orders of magnitude more
    # surrogate evaluations than the finite-difference descent
    outcome = solve_constrained(
        lambda p: (p[0] - 0.6) ** 2 + (p[1] - 0.4) ** 2,
        lambda p: 0.2 - p[0],
        BOX01,
        n_starts=2,
        seed=3,
    )
    nm = [r.evaluations for r in outcome.per_run if r.optimizer == "nelder_mead" and not r.skipped]
    gd = [r.evaluations for r in outcome.per_run if r.optimizer == "gradient" and not r.skipped]
    assert min(nm) >= 500  # O(10^3)
    assert max(gd) <= max(nm)
