"""Small dense conic programs with outer-approximation cuts.

Problems are stated as

    minimize    q^T x + 1/2 x^T P x
    subject to  G_lin x <= h_lin,  A x = b,
                (h - G x) in second-order cones,
                (h - G x) in PSD cones,
                c_k(x) <= 0  for convex callables c_k,

and solved with the primal-dual interior-point method of CVXOPT.  The
quadratic term is moved into a rotated second-order cone so that the
cone-LP driver, which detects infeasibility, handles every case.  Convex
callables are replaced by supporting hyperplanes added one round at a
time until the largest violation falls below a tolerance.

Hermitian PSD variables are handled through the real symmetric embedding
``[[Re X, -Im X], [Im X, Re X]]``, parametrized by ``n^2`` real numbers.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from cvxopt import matrix as cvx_matrix
from cvxopt import solvers as cvx_solvers

from .errors import InvalidParameterError, SolverError

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Hermitian parametrization
# ---------------------------------------------------------------------------

def hermitian_index(n):
    """Index lists ``(diag, upper_i, upper_j)`` defining the parametrization.

    Parameters ``0..n-1`` are the diagonal, the next ``n(n-1)/2`` the real
    parts of the strict upper triangle and the last ``n(n-1)/2`` the
    imaginary parts.
    """
    iu, ju = np.triu_indices(n, 1)
    return np.arange(n), iu, ju


def params_to_hermitian(p, n):
    """Hermitian matrix from its ``n^2`` real parameters."""
    p = np.asarray(p, dtype=float)
    if p.size != n * n:
        raise InvalidParameterError(f"need {n * n} parameters, got {p.size}")
    d, iu, ju = hermitian_index(n)
    m = iu.size
    X = np.zeros((n, n), dtype=complex)
    X[d, d] = p[:n]
    X[iu, ju] = p[n:n + m] + 1j * p[n + m:]
    X[ju, iu] = p[n:n + m] - 1j * p[n + m:]
    return X


def hermitian_to_params(X):
    """Inverse of :func:`params_to_hermitian` (uses the upper triangle)."""
    X = np.asarray(X)
    n = X.shape[0]
    d, iu, ju = hermitian_index(n)
    return np.concatenate([X[d, d].real, X[iu, ju].real, X[iu, ju].imag])


def real_embedding(X):
    """Real symmetric embedding of a Hermitian matrix."""
    X = np.asarray(X)
    A, B = X.real, X.imag
    return np.block([[A, -B], [B, A]])


def trace_coefficients(C):
    """Vector ``c`` with ``c @ p = tr(C X(p))`` for Hermitian ``C``."""
    C = np.asarray(C)
    n = C.shape[0]
    d, iu, ju = hermitian_index(n)
    # tr(CX) = sum_k C_kk X_kk + 2 sum_{k<l} Re(C_kl conj(X_kl))
    return np.concatenate([C[d, d].real, 2.0 * C[iu, ju].real, 2.0 * C[iu, ju].imag])


def embedding_operator(n):
    """Matrix mapping parameters to the column-major vec of the embedding."""
    N = n * n
    E = np.zeros((4 * n * n, N))
    for k in range(N):
        e = np.zeros(N)
        e[k] = 1.0
        E[:, k] = real_embedding(params_to_hermitian(e, n)).reshape(-1, order="F")
    return E


_EMB_CACHE: dict = {}


def cached_embedding_operator(n):
    if n not in _EMB_CACHE:
        _EMB_CACHE[n] = embedding_operator(n)
    return _EMB_CACHE[n]


# ---------------------------------------------------------------------------
# Problem and solution containers
# ---------------------------------------------------------------------------

@dataclass
class ConvexCut:
    """Convex constraint ``value(x) <= 0`` supplied as a callable.

    ``fn(x)`` must return ``(value, gradient)``.
    """

    fn: Callable
    name: str = ""


@dataclass
class ConicProblem:
    """Dense conic program; see module docstring for the form."""

    q: np.ndarray
    P: np.ndarray | None = None
    G_lin: np.ndarray | None = None
    h_lin: np.ndarray | None = None
    soc: list = field(default_factory=list)
    psd: list = field(default_factory=list)
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    cuts: list = field(default_factory=list)
    const: float = 0.0

    @property
    def n(self):
        return int(np.asarray(self.q).size)

    def objective(self, x):
        x = np.asarray(x, dtype=float)
        val = float(self.q @ x) + self.const
        if self.P is not None:
            val += 0.5 * float(x @ self.P @ x)
        return val


@dataclass
class ConicSolution:
    """Result of :func:`conic_solve`.

    Attributes
    ----------
    x : ndarray or None
    status : str
        ``"optimal"``, ``"infeasible"``, ``"inaccurate"`` or ``"unbounded"``.
    objective : float
    kkt_residual : float
        Largest of the scaled primal and dual residuals reported by the solver.
    gap : float
    max_violation : float
        Largest cut-constraint value at ``x`` (direct evaluation).
    n_cuts : int
    objective_history : list of float
        Optimal value after each cut round.
    certificate : ndarray or None
        Dual ray proving infeasibility, when detected.
    z_psd : list of ndarray
        Dual matrices of the PSD blocks (embedded form).
    """

    x: np.ndarray | None
    status: str
    objective: float = np.nan
    kkt_residual: float = np.nan
    gap: float = np.nan
    max_violation: float = 0.0
    n_cuts: int = 0
    objective_history: list = field(default_factory=list)
    certificate: np.ndarray | None = None
    z_psd: list = field(default_factory=list)
    iterations: int = 0


SOLVER_OPTIONS = {"show_progress": False, "abstol": 1e-11, "reltol": 1e-10,
                  "feastol": 1e-10, "maxiters": 100}


def _stack(problem: ConicProblem, extra_rows, extra_rhs):
    """Assemble the cone-LP data with the quadratic term in a rotated cone."""
    n = problem.n
    use_quad = problem.P is not None and np.any(problem.P != 0)
    nv = n + (1 if use_quad else 0)
    c = np.zeros(nv)
    c[:n] = problem.q
    lin_G = [] if problem.G_lin is None else [np.asarray(problem.G_lin, dtype=float)]
    lin_h = [] if problem.h_lin is None else [np.asarray(problem.h_lin, dtype=float)]
    if extra_rows:
        lin_G.append(np.asarray(extra_rows))
        lin_h.append(np.asarray(extra_rhs))
    blocks_G, blocks_h, dims = [], [], {"l": 0, "q": [], "s": []}
    if lin_G:
        Gl = np.vstack(lin_G)
        hl = np.concatenate(lin_h)
        blocks_G.append(np.hstack([Gl, np.zeros((Gl.shape[0], nv - n))]))
        blocks_h.append(hl)
        dims["l"] = Gl.shape[0]
    if use_quad:
        c[n] = 1.0
        w, V = np.linalg.eigh(0.5 * (problem.P + problem.P.T))
        keep = w > 1e-14 * max(1.0, np.max(np.abs(w)))
        F = (np.sqrt(w[keep])[:, None] * V[:, keep].T)
        r = F.shape[0]
        # ||(sqrt2 F x, tau - 1)|| <= tau + 1  <=>  x'Px <= 2 tau
        Gq = np.zeros((r + 2, nv))
        hq = np.zeros(r + 2)
        Gq[0, n] = -1.0
        hq[0] = 1.0
        Gq[1, n] = -1.0
        hq[1] = -1.0
        Gq[2:, :n] = -np.sqrt(2.0) * F
        blocks_G.append(Gq)
        blocks_h.append(hq)
        dims["q"].append(r + 2)
    for Gq, hq in problem.soc:
        Gq = np.asarray(Gq, dtype=float)
        blocks_G.append(np.hstack([Gq, np.zeros((Gq.shape[0], nv - n))]))
        blocks_h.append(np.asarray(hq, dtype=float))
        dims["q"].append(Gq.shape[0])
    for Gs, hs, dim in problem.psd:
        Gs = np.asarray(Gs, dtype=float)
        blocks_G.append(np.hstack([Gs, np.zeros((Gs.shape[0], nv - n))]))
        blocks_h.append(np.asarray(hs, dtype=float))
        dims["s"].append(int(dim))
    G = np.vstack(blocks_G) if blocks_G else np.zeros((0, nv))
    h = np.concatenate(blocks_h) if blocks_h else np.zeros(0)
    A = b = None
    if problem.A is not None:
        A = np.hstack([np.asarray(problem.A, dtype=float),
                       np.zeros((np.shape(problem.A)[0], nv - n))])
        b = np.asarray(problem.b, dtype=float)
    return c, G, h, dims, A, b, use_quad


def _run(c, G, h, dims, A, b, options, kktsolver="chol"):
    args = dict(c=cvx_matrix(c), G=cvx_matrix(G), h=cvx_matrix(h), dims=dims)
    if A is not None:
        args["A"] = cvx_matrix(A)
        args["b"] = cvx_matrix(b)
    return cvx_solvers.conelp(options=options, kktsolver=kktsolver, **args)


def _single_solve(problem, extra_rows, extra_rhs, kkt_tol, options):
    c, G, h, dims, A, b, use_quad = _stack(problem, extra_rows, extra_rhs)
    n = problem.n
    scale = max(1.0, float(np.max(np.abs(c))) if c.size else 1.0)
    # Cholesky-based KKT solves are fastest here; LDL is the restart path
    try:
        res = _run(c / scale, G, h, dims, A, b, options)
        if res["status"] == "unknown":
            raise ArithmeticError("iteration limit without convergence")
    except (ArithmeticError, ValueError) as exc:
        log.info("conic solver failed (%s); regularized restart", exc)
        reg = dict(options)
        reg["feastol"] = max(options["feastol"], 1e-9)
        reg["refinement"] = 3
        try:
            res = _run(c / scale, G, h, dims, A, b, reg, kktsolver="ldl")
        except (ArithmeticError, ValueError) as exc2:
            raise SolverError(f"conic solver failed twice: {exc2}") from exc2
    status = res["status"]
    z = np.array(res["z"]).ravel() if res["z"] is not None else None
    if status == "primal infeasible":
        return ConicSolution(x=None, status="infeasible", certificate=z,
                             iterations=res["iterations"])
    if status == "dual infeasible":
        return ConicSolution(x=None, status="unbounded", iterations=res["iterations"])
    x = np.array(res["x"]).ravel()[:n]
    kkt = max(float(res["primal infeasibility"] or 0.0), float(res["dual infeasibility"] or 0.0))
    ok = status == "optimal" or kkt <= kkt_tol
    z_psd = []
    if z is not None and dims["s"]:
        off = dims["l"] + sum(dims["q"])
        for dim in dims["s"]:
            z_psd.append(z[off:off + dim * dim].reshape((dim, dim), order="F"))
            off += dim * dim
    return ConicSolution(
        x=x, status="optimal" if ok else "inaccurate",
        objective=problem.objective(x), kkt_residual=kkt,
        gap=float(res["gap"] or 0.0), z_psd=z_psd, iterations=res["iterations"])


def conic_solve(problem: ConicProblem, kkt_tol=1e-6, cut_tol=1e-7, max_rounds=80,
                options=None) -> ConicSolution:
    """Solve a :class:`ConicProblem`, refining convex cuts until feasible.

    Parameters
    ----------
    problem : ConicProblem
    kkt_tol : float
        Largest accepted scaled primal/dual residual.
    cut_tol : float
        Largest accepted value of any convex cut callable at the solution.
    max_rounds : int
        Cap on cut rounds.
    options : dict, optional
        Overrides for the CVXOPT options.

    Returns
    -------
    ConicSolution
        ``status`` is ``"infeasible"`` with a dual certificate when the
        current outer approximation is already infeasible.
    """
    opts = dict(SOLVER_OPTIONS)
    if options:
        opts.update(options)
    rows, rhs, history = [], [], []
    sol = None
    for rnd in range(max_rounds):
        sol = _single_solve(problem, rows, rhs, kkt_tol, opts)
        if sol.x is None:
            sol.n_cuts = len(rows)
            sol.objective_history = history
            return sol
        history.append(sol.objective)
        worst = 0.0
        new = []
        for cut in problem.cuts:
            val, grad = cut.fn(sol.x)
            worst = max(worst, float(val))
            if val > cut_tol:
                grad = np.asarray(grad, dtype=float)
                new.append((grad, float(grad @ sol.x - val)))
        sol.max_violation = worst
        sol.n_cuts = len(rows)
        sol.objective_history = history
        if not new:
            return sol
        for g, r in new:
            rows.append(g)
            rhs.append(r)
    log.warning("cut loop hit %d rounds with violation %.3g", max_rounds, sol.max_violation)
    if sol.status == "optimal":
        sol.status = "inaccurate"
    return sol


def min_trace_problem(C):
    """``min tr(C X)`` subject to ``tr(X) = 1`` and ``X`` Hermitian PSD."""
    C = np.asarray(C)
    n = C.shape[0]
    E = cached_embedding_operator(n)
    q = trace_coefficients(C)
    A = trace_coefficients(np.eye(n))[None, :]
    return ConicProblem(q=q, A=A, b=np.array([1.0]), psd=[(-E, np.zeros(E.shape[0]), 2 * n)])
