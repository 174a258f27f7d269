"""Retrieval alignment: distribute idea strength over chunks under budgets.

Two solvers operate on the same problem data (routing matrix C, embedding
matrix V, query q, budget f, relevance gamma = Vᵀq):

* ``solve_utility`` maximizes the proportional-fairness objective
  sum_s gamma_s log x_s subject to C x <= f by dual ascent. The primal is
  closed form, x_s = gamma_s / (C(:,s)ᵀ lambda); prices follow a projected
  subgradient with diminishing step.
* ``solve_cls`` minimizes ½‖Vx − q‖² subject to C x = f through the KKT
  block system [[VᵀV, Cᵀ], [C, 0]] [x; lambda] = [Vᵀq; f].

``aligned_retrieve`` ranks classes by solved strength, keeps the top k',
and expands to every chunk incident to a kept class.

The module also houses the small dense kernel (matmul and friends) the
solvers sit on.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .embedding import embed
from .errors import SingularSystem
from .gateway import ModelGateway
from .index import Index
from .retrieval import RetrievalResult, filter_ballots

log = logging.getLogger("unweaver.alignment")

ALIGN_METHODS = ("none", "utility", "cls")

GAMMA_MIN = 1e-9
CLS_MAX_SIZE = 4096
CLS_TOL = 1e-8
REFINEMENT_ROUNDS = 3


# --------------------------------------------------------------------------
# dense kernel


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def matvec(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    a, v = np.asarray(a, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if a.shape[1] != v.shape[0]:
        raise ValueError(f"cannot apply {a.shape} to vector of length {v.shape[0]}")
    return a @ v


def transpose(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64).T


def gram(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a.T @ a


def lu_solve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a x = b by LU with partial pivoting; singular a raises."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got {a.shape}")
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystem("solution contains non-finite entries")
    return x


def pseudoinverse(a: np.ndarray) -> np.ndarray:
    """Moore-Penrose inverse of a full-column-rank matrix, (AᵀA)⁻¹Aᵀ."""
    a = np.asarray(a, dtype=np.float64)
    return lu_solve(gram(a), a.T)


def project_query(v: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Orthogonal projection of q onto the column space of v."""
    return matvec(v, matvec(pseudoinverse(v), q))


# --------------------------------------------------------------------------
# problem and solution containers


@dataclass(frozen=True)
class AlignmentProblem:
    """C: (K, S) binary routing, V: (P, S), q: (P,), f: (K,) > 0.

    gamma entries at or below zero mark classes excluded from allocation
    (their strength is pinned to zero).
    """

    C: np.ndarray
    V: np.ndarray
    q: np.ndarray
    f: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        for name in ("C", "V", "q", "f", "gamma"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        K, S = self.C.shape
        if self.V.shape[1] != S or self.q.shape != (self.V.shape[0],):
            raise ValueError("V/q shapes inconsistent with C")
        if self.f.shape != (K,) or self.gamma.shape != (S,):
            raise ValueError("f/gamma shapes inconsistent with C")
        if not np.all(np.isfinite(self.f)) or np.any(self.f <= 0.0):
            raise ValueError("budgets f must be finite and positive")
        if not np.all(np.isfinite(self.gamma)):
            raise ValueError("gamma must be finite")
        if not np.all((self.C == 0.0) | (self.C == 1.0)):
            raise ValueError("C must be binary")
        if np.any(self.C.sum(axis=0) == 0.0):
            raise ValueError("every class must appear in at least one chunk")

    @classmethod
    def from_query(
        cls,
        C: np.ndarray,
        V: np.ndarray,
        q: np.ndarray,
        f: np.ndarray | None = None,
        gamma_min: float = GAMMA_MIN,
    ) -> "AlignmentProblem":
        """Build a problem with gamma = Vᵀq, floored at gamma_min.

        Classes with nonpositive raw relevance are excluded outright; the
        floor only lifts small positive values, keeping the log utility
        well defined.
        """
        C = np.asarray(C, dtype=np.float64)
        V = np.asarray(V, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64)
        raw = V.T @ q
        gamma = np.where(raw > 0.0, np.maximum(raw, gamma_min), 0.0)
        if f is None:
            f = np.ones(C.shape[0], dtype=np.float64)
        return cls(C=C, V=V, q=q, f=f, gamma=gamma)


@dataclass(frozen=True)
class AlignmentSolution:
    x: np.ndarray
    lam: np.ndarray
    iterations: int
    kkt_residual: float
    status: str  # converged | max_iter | singular


def _stationarity(problem: AlignmentProblem, x: np.ndarray, lam: np.ndarray) -> float:
    gaps = []
    for s in range(problem.C.shape[1]):
        if x[s] > 0.0:
            gaps.append(abs(problem.gamma[s] / x[s] - float(problem.C[:, s] @ lam)))
    return max(gaps) if gaps else 0.0


# --------------------------------------------------------------------------
# solvers


def solve_utility(
    problem: AlignmentProblem,
    eps: float = 1e-8,
    t_max: int = 100000,
    step0: float = 0.1,
    lambda_min: float = 1e-12,
) -> AlignmentSolution:
    """Dual ascent on the proportional-fairness allocation.

    Prices start uniform at 1/K, the primal is recomputed in closed form
    each step, and iteration stops when the active budget residual
    ‖Cx − f‖_∞ drops below eps. Budget rows with no positive-relevance
    class are vacuous: they are skipped and keep price zero. On hitting
    t_max the best iterate seen is returned with status "max_iter".
    """
    C, f = problem.C, problem.f
    K, S = C.shape
    active = problem.gamma > 0.0
    x = np.zeros(S, dtype=np.float64)
    lam = np.zeros(K, dtype=np.float64)
    if not np.any(active):
        return AlignmentSolution(x=x, lam=lam, iterations=0, kkt_residual=0.0, status="converged")

    C_act = C[:, active]
    gamma_act = problem.gamma[active]
    live = C_act.sum(axis=1) > 0.0
    if not np.all(live):
        log.debug("%d budget rows vacuous (no active class)", int(np.sum(~live)))
    lam[live] = 1.0 / K

    best_resid = math.inf
    best_x = np.zeros(C_act.shape[1], dtype=np.float64)
    best_lam = lam.copy()
    best_t = 0
    for t in range(1, t_max + 1):
        x_act = gamma_act / (C_act.T @ lam)
        rho = C_act @ x_act
        resid = float(np.max(np.abs(rho[live] - f[live]))) if np.any(live) else 0.0
        if resid < best_resid:
            best_resid, best_x, best_lam, best_t = resid, x_act.copy(), lam.copy(), t
        if resid < eps:
            x[active] = x_act
            return AlignmentSolution(
                x=x,
                lam=lam.copy(),
                iterations=t,
                kkt_residual=_stationarity(problem, x, lam),
                status="converged",
            )
        step = step0 / math.sqrt(t)
        lam[live] = np.maximum(lambda_min, lam[live] + step * (rho[live] - f[live]))

    x[active] = best_x
    log.warning("utility solver hit t_max=%d, best residual %.3e", t_max, best_resid)
    return AlignmentSolution(
        x=x,
        lam=best_lam,
        iterations=best_t,
        kkt_residual=_stationarity(problem, x, best_lam),
        status="max_iter",
    )


def solve_cls(problem: AlignmentProblem, max_size: int = CLS_MAX_SIZE) -> AlignmentSolution:
    """Equality-constrained least squares via the assembled KKT system.

    One LU solve plus a few rounds of iterative refinement; if the budget
    or stationarity residual still exceeds 1e-8 the system is reported
    singular (rank preconditions on C and the stacked block were violated).
    """
    C, V, q, f = problem.C, problem.V, problem.q, problem.f
    K, S = C.shape
    if K + S > max_size:
        raise ValueError(f"KKT system of size {K + S} exceeds limit {max_size}")
    G = gram(V)
    M = np.block([[G, C.T], [C, np.zeros((K, K))]])
    rhs = np.concatenate([V.T @ q, f])
    sol = lu_solve(M, rhs)
    for _ in range(REFINEMENT_ROUNDS):
        residual = rhs - M @ sol
        if float(np.max(np.abs(residual))) < CLS_TOL:
            break
        sol = sol + lu_solve(M, residual)
    x, lam = sol[:S], sol[S:]
    primal = float(np.max(np.abs(C @ x - f)))
    stationary = float(np.max(np.abs(G @ x + C.T @ lam - V.T @ q)))
    if primal >= CLS_TOL or stationary >= CLS_TOL:
        raise SingularSystem(
            f"KKT system is singular or ill-conditioned "
            f"(residuals {primal:.2e}, {stationary:.2e})"
        )
    return AlignmentSolution(
        x=x,
        lam=lam,
        iterations=1,
        kkt_residual=max(primal, stationary),
        status="converged",
    )


# --------------------------------------------------------------------------
# aligned retrieval


def _rank_classes(strength: np.ndarray, gamma: np.ndarray) -> list[int]:
    return sorted(range(len(strength)), key=lambda s: (-strength[s], -gamma[s], s))


def aligned_retrieve(
    index: Index,
    query_text: str,
    method: str = "utility",
    f_policy: float = 1.0,
    k_prime: int = 5,
    gateway: ModelGateway | None = None,
) -> RetrievalResult:
    """Select top-k' classes by aligned strength, expand to their chunks.

    method "none" ranks by relevance gamma alone; "utility" and "cls" rank
    by the solved strength x̄ (ties by gamma, then class id). Chunks are
    ordered by the total strength incident on them. A non-convergent
    utility solve falls back to "none" with the fallback flag set; a
    singular CLS system propagates SingularSystem.
    """
    if method not in ALIGN_METHODS:
        raise ValueError(f"method must be one of {ALIGN_METHODS}")
    if k_prime < 1:
        raise ValueError("k_prime must be >= 1")
    if f_policy <= 0.0 or not math.isfinite(f_policy):
        raise ValueError("f_policy must be a positive finite budget")
    if index.n_classes == 0:
        log.warning("index has no classes; returning empty result")
        return RetrievalResult(
            selected_classes=[],
            filtered_ballots=np.zeros((0, index.n_chunks), dtype=np.float64),
            elected_chunks=[],
            rule_scores={},
            status="empty",
        )

    incidence = index.incidence()
    C, V = incidence.matrix, index.embeddings
    q = embed([query_text], index.config.embed, gateway, phase="query")[0]
    f = np.full(index.n_chunks, float(f_policy), dtype=np.float64)
    problem = AlignmentProblem.from_query(C, V, q, f=f)

    fallback = False
    if method == "none":
        strength = problem.gamma
    elif method == "utility":
        solution = solve_utility(problem)
        if solution.status == "max_iter":
            log.warning("utility solver did not converge; falling back to relevance ranking")
            fallback = True
            strength = problem.gamma
        else:
            strength = solution.x
    else:
        strength = solve_cls(problem).x

    if k_prime > index.n_classes:
        log.warning("k_prime=%d exceeds class count %d; clamped", k_prime, index.n_classes)
    ranked = _rank_classes(strength, problem.gamma)
    selected = ranked[: min(k_prime, index.n_classes)]
    selected_set = set(selected)

    mass = np.zeros(index.n_chunks, dtype=np.float64)
    for s in selected:
        mass += C[:, s] * strength[s]
    chunk_ids = [k for k in range(index.n_chunks) if any(C[k, s] > 0.0 for s in selected)]
    chunk_ids.sort(key=lambda k: (-mass[k], k))

    return RetrievalResult(
        selected_classes=[(s, float(strength[s])) for s in selected],
        filtered_ballots=filter_ballots(incidence, selected_set),
        elected_chunks=chunk_ids,
        rule_scores={k: float(mass[k]) for k in chunk_ids},
        fallback=fallback,
    )
