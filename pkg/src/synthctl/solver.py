"""Minimization of the quadratic moment objective over the probability simplex.

The objective Q(w) = (b - A w)' V (b - A w) is a convex quadratic, so a
monotone accelerated projected-gradient method with exact Euclidean simplex
projection is certifiably optimal and needs no external solver. The step size
is 1/L with L estimated by power iteration on A'VA and grown deterministically
whenever the quadratic upper bound it implies is violated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, SingularGramError
from .moments import MomentSystem
from .panel import PanelData

__all__ = [
    "WeightVector",
    "SolveDiagnostics",
    "SolverOptions",
    "project_simplex",
    "solve_simplex_qp",
    "ls_unconstrained",
]


@dataclass(frozen=True)
class WeightVector:
    """A point on the simplex, with an optional intercept for demeaned fits.

    ``simplex=False`` skips the feasibility checks; only the unconstrained
    least-squares fit uses that escape hatch.
    """

    weights: np.ndarray
    intercept: float | None = None
    simplex: bool = True

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.shape[0] < 1:
            raise DimensionMismatchError("weights must be a non-empty 1-D vector")
        if self.simplex:
            if w.min() < -1e-12:
                raise DimensionMismatchError(
                    f"weights must be nonnegative, min entry {w.min():.3e}"
                )
            w = np.maximum(w, 0.0)
            if abs(w.sum() - 1.0) > 1e-9:
                raise DimensionMismatchError(
                    f"weights must sum to 1, got {w.sum():.12f}"
                )
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class SolveDiagnostics:
    iterations: int
    final_objective: float
    projected_gradient_norm: float
    rank_estimate: int
    converged: bool
    non_unique: bool = False


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 100_000


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based, exact).

    The output has nonnegative entries and sums to exactly 1.0, and feasible
    inputs are returned unchanged, which makes the projection idempotent at
    the bit level.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] < 1:
        raise DimensionMismatchError("projection input must be a non-empty 1-D vector")
    if not np.isfinite(v).all():
        raise DimensionMismatchError("projection input must be finite")
    if v.min() >= 0.0 and v.sum() == 1.0:
        return v.copy()
    n = v.shape[0]
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - 1.0
    ind = np.arange(1, n + 1)
    rho = int(np.count_nonzero(u - cssv / ind > 0))
    theta = cssv[rho - 1] / rho
    w = np.maximum(v - theta, 0.0)
    # absorb the residual summation error so sum(w) == 1.0 bitwise
    for i in np.argsort(w)[::-1]:
        excess = w.sum() - 1.0
        if excess == 0.0:
            break
        if w[i] - excess >= 0.0:
            w[i] -= excess
    return w


class _Quadratic:
    """Residual-form evaluation of Q(w) = (b - A w)' V (b - A w)."""

    def __init__(self, system: MomentSystem, v: np.ndarray | None):
        self.a = system.a_matrix
        self.b = system.b_vector
        if v is not None:
            v = np.asarray(v, dtype=float)
            if v.shape != (self.a.shape[0], self.a.shape[0]):
                raise DimensionMismatchError(
                    f"V has shape {v.shape}, expected {(self.a.shape[0],) * 2}"
                )
        self.v = v

    def _vdot(self, r: np.ndarray) -> np.ndarray:
        return r if self.v is None else self.v @ r

    def residual(self, w: np.ndarray) -> np.ndarray:
        return self.b - self.a @ w

    def value_of_residual(self, r: np.ndarray) -> float:
        return float(r @ self._vdot(r))

    def value(self, w: np.ndarray) -> float:
        return self.value_of_residual(self.residual(w))

    def gradient_of_residual(self, r: np.ndarray) -> np.ndarray:
        return -2.0 * (self.a.T @ self._vdot(r))

    def gradient(self, w: np.ndarray) -> np.ndarray:
        return self.gradient_of_residual(self.residual(w))

    def curvature(self, d: np.ndarray) -> float:
        """d' (A'VA) d, the quadratic growth along direction d."""
        ad = self.a @ d
        return float(ad @ self._vdot(ad))

    def lipschitz(self) -> float:
        """2 * lambda_max(A'VA) by deterministic power iteration."""
        n = self.a.shape[1]
        x = np.ones(n) / np.sqrt(n)
        lam = 0.0
        for _ in range(200):
            y = self.a.T @ self._vdot(self.a @ x)
            norm = float(np.linalg.norm(y))
            if norm == 0.0:
                return 0.0
            x = y / norm
            lam_new = self.curvature(x)
            if abs(lam_new - lam) <= 1e-13 * max(lam_new, 1.0):
                lam = lam_new
                break
            lam = lam_new
        return 2.0 * lam


def _polish(q: _Quadratic, w: np.ndarray, f_w: float, lip: float, tol: float):
    """Exact equality-constrained solve on the current support.

    Near the optimum the projected-gradient iterates identify the active
    face; solving the face's KKT system then lands on the exact minimizer in
    one step. The candidate is accepted only if it stays on the simplex,
    does not increase the objective, and certifies first-order optimality.
    Callers only invoke this when the minimizer is unique (full-rank
    systems), so the deterministic tie-break on flat faces is untouched.
    """
    support = w > 0.0
    k = int(support.sum())
    if k == 0:
        return None
    a_s = q.a[:, support]
    va_s = a_s if q.v is None else q.v @ a_s
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = 2.0 * (a_s.T @ va_s)
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.concatenate([2.0 * (va_s.T @ q.b), [1.0]])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    candidate = np.zeros_like(w)
    candidate[support] = sol[:k]
    if candidate.min() < -1e-9 or abs(candidate.sum() - 1.0) > 1e-6:
        return None
    candidate = project_simplex(candidate)
    f_c = q.value(candidate)
    if f_c > f_w + 1e-12 * max(f_w, 1.0):
        return None
    pg = float(
        np.abs(candidate - project_simplex(candidate - q.gradient(candidate) / lip)).max()
    )
    if pg > tol:
        return None
    return candidate, f_c, pg


def solve_simplex_qp(
    system: MomentSystem,
    v: np.ndarray | None = None,
    opts: SolverOptions = SolverOptions(),
) -> tuple[WeightVector, SolveDiagnostics]:
    """Minimize (b - A w)' V (b - A w) over the simplex.

    Deterministic: fixed uniform start, fixed iteration schedule, no
    randomness. When A is numerically rank-deficient the minimizer may be a
    face of the simplex; the limit from the uniform start is returned and
    ``non_unique`` is flagged in the diagnostics (uniqueness needs rank(A) = J).
    """
    q = _Quadratic(system, v)
    n = q.a.shape[1]
    rank = int(np.linalg.matrix_rank(q.a))
    non_unique = rank < n
    w = np.full(n, 1.0 / n)

    if n == 1:
        w1 = np.array([1.0])
        return (
            WeightVector(w1),
            SolveDiagnostics(
                iterations=0,
                final_objective=q.value(w1),
                projected_gradient_norm=0.0,
                rank_estimate=rank,
                converged=True,
                non_unique=False,
            ),
        )

    lip = q.lipschitz()
    if lip <= 0.0:
        # zero quadratic: every feasible point is optimal
        return (
            WeightVector(w),
            SolveDiagnostics(
                iterations=0,
                final_objective=q.value(w),
                projected_gradient_norm=0.0,
                rank_estimate=rank,
                converged=True,
                non_unique=non_unique,
            ),
        )
    lip *= 1.05  # power iteration approaches the eigenvalue from below

    f_w = q.value(w)
    y = w
    t = 1.0
    pg_norm = np.inf
    iterations = 0
    converged = False
    since_restart = 0
    stagnant = 0
    may_polish = not non_unique  # keep the uniform-start tie-break on flat faces
    for iterations in range(1, opts.max_iter + 1):
        r_y = q.residual(y)
        grad_y = q.gradient_of_residual(r_y)
        step = project_simplex(y - grad_y / lip)
        d = step - y
        ad = q.a @ d
        # grow the step bound if the quadratic majorization at y is violated
        while q.value_of_residual(ad) > 0.5 * lip * float(d @ d) * (1.0 + 1e-12):
            lip *= 2.0
            step = project_simplex(y - grad_y / lip)
            d = step - y
            ad = q.a @ d
        f_step = q.value_of_residual(r_y - ad)

        # monotone acceleration: keep the best iterate seen so far; when a
        # step fails to improve and momentum has run a while, restart it
        # (ill-conditioned systems converge far faster with restarts)
        since_restart += 1
        stagnant = 0 if f_step < f_w else stagnant + 1
        if f_step <= f_w:
            w_new, f_new = step, f_step
        else:
            w_new, f_new = w, f_w
        if f_step > f_w and since_restart >= 50:
            y, t = w_new, 1.0
            since_restart = 0
        else:
            t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = w_new + (t / t_new) * (step - w_new) + ((t - 1.0) / t_new) * (w_new - w)
            t = t_new
        w, f_w = w_new, f_new

        # the optimality certificate is priced at two extra products, so
        # confirm it only periodically or once the iterate stops moving
        if float(np.abs(d).max()) <= 4.0 * opts.tol or iterations % 16 == 0:
            pg_norm = float(np.abs(w - project_simplex(w - q.gradient(w) / lip)).max())
            if pg_norm <= opts.tol:
                converged = True
                break
            if may_polish and (pg_norm <= 100.0 * opts.tol or stagnant >= 300):
                # the active face is very likely final: finish with one
                # exact solve on that face
                polished = _polish(q, w, f_w, lip, opts.tol)
                if polished is not None:
                    w, f_w, pg_norm = polished
                    converged = True
                    break
            if stagnant >= 600:
                break  # no objective progress at float resolution: stalled

    if not converged:
        pg_norm = float(np.abs(w - project_simplex(w - q.gradient(w) / lip)).max())
        converged = pg_norm <= opts.tol
        if not converged and may_polish:
            polished = _polish(q, w, f_w, lip, opts.tol)
            if polished is not None:
                w, f_w, pg_norm = polished
                converged = True

    return (
        WeightVector(w),
        SolveDiagnostics(
            iterations=iterations,
            final_objective=max(f_w, 0.0),
            projected_gradient_norm=pg_norm,
            rank_estimate=rank,
            converged=converged,
            non_unique=non_unique,
        ),
    )


def ls_unconstrained(panel: PanelData) -> np.ndarray:
    """Ordinary least squares of treated on untreated pre-period outcomes.

    No intercept and no simplex constraint; this is the estimator whose
    probability limit carries the measurement-error attenuation bias.
    """
    x = panel.untreated_outcomes[:, : panel.t0].T  # (T0, J)
    y = panel.treated_outcomes[: panel.t0]
    if np.linalg.matrix_rank(x) < x.shape[1]:
        raise SingularGramError(
            "pre-period Gram matrix of untreated outcomes is singular"
        )
    gram = x.T @ x
    return np.linalg.solve(gram, x.T @ y)
