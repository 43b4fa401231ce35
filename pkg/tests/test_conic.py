"""Dense conic solver with outer-approximation cuts."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ranslice.conic import (ConicProblem, ConvexCut, conic_solve, hermitian_to_params,
                            min_trace_problem, params_to_hermitian, real_embedding,
                            trace_coefficients)


def random_hermitian(rng, n):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (A + A.conj().T)


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
@settings(max_examples=40)
def test_parametrization_round_trip(n, seed):
    rng = np.random.default_rng(seed)
    X = random_hermitian(rng, n)
    np.testing.assert_allclose(params_to_hermitian(hermitian_to_params(X), n), X, atol=1e-14)
    C = random_hermitian(rng, n)
    assert trace_coefficients(C) @ hermitian_to_params(X) == pytest.approx(
        np.trace(C @ X).real, abs=1e-10)
    # embedding doubles each eigenvalue
    w = np.linalg.eigvalsh(X)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(real_embedding(X))),
                               np.sort(np.repeat(w, 2)), atol=1e-10)


@pytest.mark.parametrize("n", [1, 2, 5, 9])
def test_min_trace_is_smallest_eigenvalue(n):
    rng = np.random.default_rng(n)
    C = random_hermitian(rng, n)
    w, V = np.linalg.eigh(C)
    sol = conic_solve(min_trace_problem(C))
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(w[0], abs=1e-7)
    X = params_to_hermitian(sol.x, n)
    if n == 1 or w[1] - w[0] > 1e-3:
        u = V[:, 0]
        np.testing.assert_allclose(X, np.outer(u, u.conj()), atol=1e-5)


def test_box_quadratic_matches_projection():
    rng = np.random.default_rng(1)
    d = rng.uniform(0.5, 3.0, 6)
    c = rng.normal(0, 4, 6)
    lo, hi = -np.ones(6), np.ones(6)
    G = np.vstack([np.eye(6), -np.eye(6)])
    h = np.concatenate([hi, -lo])
    sol = conic_solve(ConicProblem(q=c, P=np.diag(d), G_lin=G, h_lin=h))
    x = np.clip(-c / d, lo, hi)
    ref = ConicProblem(q=c, P=np.diag(d)).objective(x)
    assert sol.objective == pytest.approx(ref, abs=1e-9)
    # iterate accuracy is the square root of the objective accuracy
    np.testing.assert_allclose(sol.x, x, atol=1e-5)


def test_cut_loop_meets_convex_constraint():
    # maximize x + y subject to exp(x) + y^2 <= 3 and a loose box
    g = lambda v: (float(np.exp(v[0]) + v[1] ** 2 - 3.0), np.array([np.exp(v[0]), 2 * v[1]]))
    G = np.vstack([np.eye(2), -np.eye(2)])
    h = np.full(4, 10.0)
    sol = conic_solve(ConicProblem(q=np.array([-1.0, -1.0]), G_lin=G, h_lin=h,
                                   cuts=[ConvexCut(g, "exp")]))
    assert sol.status == "optimal"
    assert g(sol.x)[0] <= 1e-7
    assert sol.n_cuts > 0
    # objective values are non-decreasing as cuts shrink the relaxation
    assert np.all(np.diff(sol.objective_history) >= -1e-9)
    # stationarity on the curve: y = exp(x) / 2
    assert sol.x[1] == pytest.approx(np.exp(sol.x[0]) / 2, abs=1e-3)


def test_infeasible_returns_certificate():
    G = np.array([[1.0], [-1.0]])
    h = np.array([1.0, -2.0])  # x <= 1 and x >= 2
    sol = conic_solve(ConicProblem(q=np.array([1.0]), G_lin=G, h_lin=h))
    assert sol.status == "infeasible"
    z = sol.certificate
    assert z is not None and np.all(z >= -1e-9)
    assert G.T @ z == pytest.approx(0.0, abs=1e-8) and h @ z < 0
