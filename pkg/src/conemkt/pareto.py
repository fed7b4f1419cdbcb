"""Vector expected-utility maximization over the attainable set.

``solve_scalarized`` maximizes ``<lambda, E U(X_T)>`` by conditional gradient
(Frank-Wolfe with away steps) on the transfer-plan polytope, using the simplex
solver as linear minimization oracle.  ``is_pareto_maximal`` decides whether a
candidate can be improved componentwise by a cutting-plane method on the
concave improvement program; its linear relaxations are upper bounds, so a
small bound certifies maximality while an unbounded relaxation exposes an
arbitrage ray.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .arbitrage import ArbitrageCertificate, check_na
from .attainable import Skeleton, TransferPlan, assemble_constraints
from .config import get_tolerances
from .lp_core import LE, LinearProgram, LpError, solve_lp
from .market_cones import BidAskProcess
from .scenario_tree import ScenarioTree
from .utility import UtilitySpec, expected_vector_utility

log = logging.getLogger(__name__)

MAX_FW_ITERATIONS = 10_000


class SolverError(RuntimeError):
    pass


@dataclass
class ParetoSolution:
    weights: np.ndarray            # normalized, sum 1
    raw_weights: np.ndarray
    plan: TransferPlan
    terminal: np.ndarray           # (leaves, d)
    utility: np.ndarray            # (d,)
    gap: float
    iterations: int = 0
    converged: bool = True
    plan_vector: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self, tree: ScenarioTree) -> dict:
        return {
            "weights": self.weights.tolist(),
            "raw_weights": self.raw_weights.tolist(),
            "plan": self.plan.to_records(tree),
            "terminal": {lid: self.terminal[k].tolist() for k, lid in enumerate(tree.leaf_ids)},
            "utility": self.utility.tolist(),
            "gap": self.gap,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def _clip_terminal(X: np.ndarray) -> np.ndarray:
    low = X.min(initial=0.0)
    if low < -1e-9:
        warnings.warn(f"terminal position {low:.3e} below zero; projected to 0", RuntimeWarning)
    return np.maximum(X, 0.0)


class _Objective:
    """``phi(X) = sum_leaves sum_i P(leaf) lambda_i U^i(X^i)`` and its derivatives along lines."""

    def __init__(self, tree: ScenarioTree, spec: UtilitySpec, lam: np.ndarray):
        self.spec = spec
        self.W = tree.leaf_probabilities[:, None] * lam[None, :]

    def value(self, X) -> float:
        return float(np.sum(self.W * self.spec.value(np.maximum(X, 0.0))))

    def grad(self, X) -> np.ndarray:
        return self.W * self.spec.deriv(np.maximum(X, 0.0))

    def hess_diag(self, X) -> np.ndarray:
        return self.W * self.spec.second(np.maximum(X, 0.0))

    def line_search(self, X: np.ndarray, D: np.ndarray, gmax: float) -> float:
        """Exact maximizer of the concave section ``g -> phi(X + g D)`` on ``[0, gmax]``.

        Safeguarded Newton on the derivative, falling back to bisection.
        """
        def d1(g):
            return float(np.sum(self.grad(X + g * D) * D))

        if d1(0.0) <= 0.0:
            return 0.0
        if d1(gmax) >= 0.0:
            return gmax
        lo, hi = 0.0, gmax
        g = 0.5 * gmax
        for _ in range(100):
            val = d1(g)
            if val > 0:
                lo = g
            else:
                hi = g
            curv = float(np.sum(self.W * self.spec.second(np.maximum(X + g * D, 0.0)) * D * D))
            nxt = g - val / curv if curv < 0 else 0.5 * (lo + hi)
            if not lo < nxt < hi:
                nxt = 0.5 * (lo + hi)
            if abs(nxt - g) <= 1e-15 * max(1.0, gmax) or hi - lo <= 1e-14 * gmax:
                return nxt
            g = nxt
        return g


def normalize_weights(lam) -> tuple[np.ndarray, np.ndarray]:
    raw = np.asarray(lam, dtype=float).ravel()
    if raw.size == 0 or np.any(~(raw > 0)):
        raise ValueError(f"scalarization weights must be strictly positive, got {raw}")
    return raw / raw.sum(), raw


def _corrective_step(obj: "_Objective", atoms: np.ndarray, alpha: np.ndarray,
                     max_newton: int = 200) -> np.ndarray:
    """Maximize ``phi(alpha @ atoms)`` over the probability simplex.

    Active-set Newton: a regularized Newton direction on the support with the
    constraint ``sum(delta) = 0``, exact line search capped by the ratio test,
    atoms dropped when their weight reaches zero.
    """
    alpha = alpha.copy()
    shape = obj.W.shape
    for _ in range(max_newton):
        F = np.flatnonzero(alpha > 0)
        if F.size == 1:
            break
        AF = atoms[F]
        X = (alpha[F] @ AF).reshape(shape)
        gX = obj.grad(X).ravel()
        hX = obj.hess_diag(X).ravel()
        g = AF @ gX
        H = (AF * hX) @ AF.T
        kf = F.size
        rho = 1e-12 * (1.0 + float(np.max(np.abs(np.diag(H)))))
        K = np.zeros((kf + 1, kf + 1))
        K[:kf, :kf] = H - rho * np.eye(kf)
        K[:kf, kf] = 1.0
        K[kf, :kf] = 1.0
        rhs = np.concatenate([-g, [0.0]])
        try:
            delta = np.linalg.solve(K, rhs)[:kf]
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(K, rhs, rcond=None)[0][:kf]
        delta -= delta.mean()
        ascent = float(g @ delta)
        if not ascent > 1e-17:
            break
        neg = delta < 0
        ratios = alpha[F][neg] / -delta[neg]
        gmax = float(ratios.min())
        DX = (delta @ AF).reshape(shape)
        step = obj.line_search(X, DX, gmax)
        if step <= 0.0:
            break
        new = alpha[F] + step * delta
        if step >= gmax:
            new[np.flatnonzero(neg)[int(np.argmin(ratios))]] = 0.0
        new = np.where(new > 1e-15, new, 0.0)
        alpha[F] = new / new.sum()
        if step < gmax and step * ascent < 1e-18:
            break
    return alpha


def solve_scalarized(tree: ScenarioTree, process: BidAskProcess, x, spec: UtilitySpec, lam,
                     tol: float | None = None, max_iter: int = MAX_FW_ITERATIONS,
                     skeleton: Skeleton | None = None, variant: str = "corrective") -> ParetoSolution:
    """Maximize ``<lambda, E U(X_T)>`` over the attainable terminal positions from ``x``.

    Conditional gradient from the zero plan: each iteration asks the linear
    oracle for the vertex maximizing the linearized objective.  With
    ``variant="corrective"`` (default) the weights over all vertices found so
    far are then re-optimized (simplicial decomposition); ``variant="away"``
    is the classical away-step method with a single exact line search.
    Stops once the Frank-Wolfe gap, an upper bound on the remaining
    suboptimality, is at most ``tol``; if ``max_iter`` is hit first the
    result carries ``converged=False`` and the final gap.
    """
    tol = get_tolerances().fw_gap if tol is None else tol
    if variant not in ("corrective", "away"):
        raise ValueError(f"unknown variant {variant!r}")
    lam, raw = normalize_weights(lam)
    if lam.size != process.d or spec.d != process.d:
        raise ValueError("weights, utility spec and market dimension disagree")
    sk = skeleton or assemble_constraints(tree, process, x, box=False)
    obj = _Objective(tree, spec, lam)
    p = np.zeros(sk.n_plan)
    X = sk.terminal(p)
    verts = [p.copy()]                       # plan-space atoms
    images = [X.ravel().copy()]              # their terminal positions
    keys = {np.round(X.ravel(), 12).tobytes(): 0}
    alpha = np.array([1.0])
    basis = None
    gap = np.inf
    it = 0
    while True:
        G = obj.grad(X)
        g = sk.objective(G)
        out = solve_lp(sk.lp.with_objective(g, maximize=True), warm_start=basis)
        if out.status == "unbounded":
            raise SolverError("linear oracle unbounded: the market admits arbitrage")
        if not out.optimal:
            raise SolverError(f"linear oracle returned {out.status}")
        basis = out.basis
        s = out.x
        gap = float(g @ s - g @ p)
        if gap <= tol or it >= max_iter:
            break
        it += 1
        Xs = sk.terminal(s).ravel()
        key = np.round(Xs, 12).tobytes()
        if key not in keys:
            keys[key] = len(verts)
            verts.append(s.copy())
            images.append(Xs)
            alpha = np.append(alpha, 0.0)
        ks = keys[key]
        if variant == "corrective":
            start = alpha.copy()
            step = obj.line_search(X, (Xs - X.ravel()).reshape(X.shape), 1.0)
            start *= 1.0 - step
            start[ks] += step
            alpha = _corrective_step(obj, np.array(images), start)
        else:
            live = np.flatnonzero(alpha > 0)
            sc = np.array(images)[live] @ G.ravel()
            away = int(live[np.argmin(sc)])
            away_gap = float(G.ravel() @ X.ravel() - sc.min())
            if gap >= away_gap or live.size == 1:
                D = Xs - X.ravel()
                step = obj.line_search(X, D.reshape(X.shape), 1.0)
                alpha *= 1.0 - step
                alpha[ks] += step
            else:
                a_v = alpha[away]
                D = X.ravel() - images[away]
                gmax = a_v / (1.0 - a_v)
                step = obj.line_search(X, D.reshape(X.shape), gmax)
                alpha *= 1.0 + step
                alpha[away] -= step
                if step >= gmax:
                    alpha[away] = 0.0
        alpha = np.where(alpha > 1e-15, alpha, 0.0)
        alpha /= alpha.sum()
        live = np.flatnonzero(alpha > 0)
        if live.size < len(verts):
            verts = [verts[k] for k in live]
            images = [images[k] for k in live]
            alpha = alpha[live]
            keys = {np.round(v, 12).tobytes(): i for i, v in enumerate(images)}
        p = alpha @ np.array(verts)
        X = _clip_terminal(sk.terminal(p))
    converged = gap <= tol
    if not converged:
        log.warning("Frank-Wolfe stopped after %d iterations with gap %.3e > tol %.1e", it, gap, tol)
    X = np.maximum(sk.terminal(p), 0.0)
    return ParetoSolution(lam, raw, sk.plan(np.maximum(p, 0.0)), X,
                          expected_vector_utility(tree, X, spec), gap, it, converged, p)


def frank_wolfe_gap(tree: ScenarioTree, process: BidAskProcess, x, spec: UtilitySpec,
                    solution: ParetoSolution, skeleton: Skeleton | None = None) -> float:
    """Recompute the gap at a returned solution with a fresh oracle call."""
    sk = skeleton or assemble_constraints(tree, process, x, box=False)
    obj = _Objective(tree, spec, solution.weights)
    p = solution.plan_vector if solution.plan_vector is not None else solution.plan.to_vector()
    g = sk.objective(obj.grad(sk.terminal(p)))
    out = solve_lp(sk.lp.with_objective(g, maximize=True))
    return float(g @ out.x - g @ p)
def scalarized_objective(tree: ScenarioTree, process: BidAskProcess, x, spec: UtilitySpec, lam,
                         plan_vector, skeleton: Skeleton | None = None) -> tuple[float, np.ndarray]:
    """Value and plan-space gradient of ``p -> <lambda, E U(X_T(p))>`` (weights as given).

    The gradient is the chain rule through the linear map ``p -> X_T``.
    """
    sk = skeleton or assemble_constraints(tree, process, x, box=False)
    obj = _Objective(tree, spec, np.asarray(lam, dtype=float))
    X = sk.terminal(np.asarray(plan_vector, dtype=float))
    return obj.value(X), sk.objective(obj.grad(X))


@dataclass
class ParetoCheck:
    maximal: bool
    dominator: np.ndarray | None          # terminal map, (leaves, d)
    improvement: float                    # best sum of componentwise gains found
    bound: float                          # upper bound on any such sum (inf for a ray)
    iterations: int = 0

    def to_dict(self, tree: ScenarioTree) -> dict:
        dom = None
        if self.dominator is not None:
            dom = {lid: self.dominator[k].tolist() for k, lid in enumerate(tree.leaf_ids)}
        return {"maximal": self.maximal, "dominator": dom, "improvement": self.improvement,
                "bound": self.bound, "iterations": self.iterations}


class _Gains:
    """Componentwise gains ``g_i(X) = E U^i(X^i) - c_i`` with per-component gradients."""

    def __init__(self, tree: ScenarioTree, spec: UtilitySpec, floor: np.ndarray):
        self.tree = tree
        self.spec = spec
        self.c = np.asarray(floor, dtype=float)
        self.P = tree.leaf_probabilities

    def values(self, X) -> np.ndarray:
        return self.P @ self.spec.value(np.maximum(X, 0.0)) - self.c

    def grads(self, X) -> np.ndarray:
        """(d, leaves*d) rows: gradient of ``g_i`` in flattened terminal space."""
        L, d = X.shape
        G = self.P[:, None] * self.spec.deriv(np.maximum(X, 0.0))
        out = np.zeros((d, L * d))
        for i in range(d):
            out[i, i::d] = G[:, i]
        return out

    def segment_search(self, Y: np.ndarray, D: np.ndarray) -> float:
        """Largest-sum step on ``[0, 1]`` along ``Y + t D`` keeping every gain nonnegative."""
        t_max = 1.0
        g1 = self.values(Y + D)
        for i in np.flatnonzero(g1 < 0):
            lo, hi = 0.0, t_max
            for _ in range(80):
                mid = 0.5 * (lo + hi)
                if self.values(Y + mid * D)[i] >= 0:
                    lo = mid
                else:
                    hi = mid
            t_max = min(t_max, lo)
        slope = lambda t: float(np.sum(self.grads(Y + t * D) @ D.ravel()))
        if slope(0.0) <= 0:
            return 0.0
        if slope(t_max) >= 0:
            return t_max
        lo, hi = 0.0, t_max
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if slope(mid) > 0:
                lo = mid
            else:
                hi = mid
        return lo


def is_pareto_maximal(tree: ScenarioTree, process: BidAskProcess, x, spec: UtilitySpec,
                      candidate, tol: float | None = None, max_iter: int = 200) -> ParetoCheck:
    """Decide whether some attainable position improves ``candidate`` componentwise by more than ``tol`` in total.

    Kelley cutting planes for ``max sum s_i`` subject to
    ``E U^i(X^i) - E U^i(candidate^i) >= s_i >= 0`` over the attainable set
    (no box).  Each relaxation linearizes the utilities at points visited so
    far; by concavity its value bounds the total gain from above, so
    ``bound <= tol`` certifies maximality.  Improvements found by searching
    along the segment to each relaxation optimum give the lower end of the
    bracket and the dominator.  An unbounded relaxation is an arbitrage ray.
    The candidate is assumed attainable from ``x``.
    """
    tol = get_tolerances().pareto if tol is None else tol
    Y = np.asarray(candidate, dtype=float)
    sk = assemble_constraints(tree, process, x, box=False)
    d = process.d
    n = sk.n_plan
    L = len(tree.leaves)
    if Y.shape != (L, d):
        raise ValueError(f"candidate has shape {Y.shape}, expected ({L}, {d})")
    gains = _Gains(tree, spec, expected_vector_utility(tree, Y, spec))
    best = 0.0
    cut_rows, cut_rhs = [], []

    def add_cuts(Z):
        gv = gains.values(Z)
        Gr = gains.grads(Z)
        for i in range(d):
            row = np.zeros(n + d)
            row[:n] = -(Gr[i] @ sk.R)
            row[n + i] = 1.0
            scale = np.abs(row).max()
            cut_rows.append(row / scale)
            cut_rhs.append((gv[i] + Gr[i] @ (sk.x_flat - Z.ravel())) / scale)

    add_cuts(Y)
    c = np.concatenate([np.zeros(n), np.ones(d)])
    base = np.hstack([-sk.R, np.zeros((sk.R.shape[0], d))])
    bound = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        A = np.vstack([base] + cut_rows)
        b = np.concatenate([sk.x_flat, cut_rhs])
        out = solve_lp(LinearProgram(c, A, [LE] * A.shape[0], b, maximize=True))
        if out.status == "unbounded":
            DX = (sk.R @ np.maximum(out.ray[:n], 0.0)).reshape(L, d)
            if DX.max() <= 0:
                raise SolverError("unbounded improvement relaxation without an improving ray")
            dom = Y + DX / DX.max()
            return ParetoCheck(False, dom, float(np.sum(gains.values(dom))), np.inf, it)
        if not out.optimal:
            raise SolverError(f"improvement relaxation returned {out.status}")
        bound = float(out.objective)
        if bound <= tol:
            return ParetoCheck(True, None, best, bound, it)
        if best > tol:
            return ParetoCheck(False, Y, best, bound, it)
        X_lp = np.maximum(sk.terminal(out.x[:n]), 0.0)
        t = gains.segment_search(Y, X_lp - Y)
        if t > 0:
            Y = Y + t * (X_lp - Y)
            best = float(np.sum(gains.values(Y)))
            add_cuts(Y)
        add_cuts(X_lp)
    log.warning("improvement search stopped after %d rounds, bracket [%.3e, %.3e]", it, best, bound)
    return ParetoCheck(best <= tol, Y if best > 0 else None, best, bound, it)


def domination_point(tree: ScenarioTree, process: BidAskProcess, x, spec: UtilitySpec,
                     X_T, tol: float | None = None, max_iter: int = 50) -> ParetoSolution:
    """A Pareto maximal position whose expected utilities dominate those of ``X_T``.

    Maximizes ``sum_i E U^i`` subject to ``E U^i >= E U^i(X_T)`` by relaxing
    the lower-bound rows with multipliers ``nu >= 0``: each dual evaluation is
    a scalarized solve with weights ``1 + nu``, and the convex dual is
    minimized by projected Newton steps with a finite-difference Hessian.
    The loop stops at the first weights whose maximizer dominates ``X_T`` to
    within ``1e-9`` per component; being a scalarized maximizer with positive
    weights, that point is Pareto maximal.
    """
    tol = get_tolerances().fw_gap if tol is None else tol
    na = check_na(tree, process)
    if not na.holds:
        raise SolverError("no Pareto maximal point exists: the market admits arbitrage")
    X_T = np.asarray(X_T, dtype=float)
    floor = expected_vector_utility(tree, X_T, spec)
    d = process.d
    sk = assemble_constraints(tree, process, x, box=False)
    inner_tol = min(tol, 1e-10)
    slack = 1e-9

    def evaluate(nu):
        sol = solve_scalarized(tree, process, x, spec, 1.0 + nu, tol=inner_tol, skeleton=sk)
        g = sol.utility - floor
        return sol, g, float((1.0 + nu) @ g)

    nu = np.zeros(d)
    sol, g, D = evaluate(nu)
    for _ in range(max_iter):
        if np.all(g >= -slack):
            return sol
        h = 1e-4
        J = np.zeros((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h * (1.0 + nu[j])
            J[:, j] = (evaluate(nu + e)[1] - g) / e[j]
        J = 0.5 * (J + J.T) + 1e-10 * np.eye(d)
        free = ~((nu <= 0) & (g > 0))
        step = np.zeros(d)
        if np.any(free):
            Jf = J[np.ix_(free, free)]
            try:
                step[free] = -np.linalg.solve(Jf, g[free])
            except np.linalg.LinAlgError:
                step[free] = -np.linalg.lstsq(Jf, g[free], rcond=None)[0]
        if not step @ g < 0:
            step = -g
        t = 1.0
        while True:
            trial = np.maximum(nu + t * step, 0.0)
            s2, g2, D2 = evaluate(trial)
            if D2 <= D - 1e-4 * t * abs(step @ g) or t < 1e-6:
                break
            t *= 0.5
        nu, sol, g, D = trial, s2, g2, D2
    raise SolverError(f"no dominating scalarization found; worst shortfall {g.min():.3e}")


def improvement_from_arbitrage(tree: ScenarioTree, process: BidAskProcess, x, spec: UtilitySpec,
                               candidate, cert: ArbitrageCertificate) -> np.ndarray:
    """Add the certificate's terminal position to ``candidate``.

    The sum is attainable (plans concatenate) and, utilities being strictly
    increasing, weakly improves every component and strictly improves those
    assets where the certificate pays on a positive-probability leaf.
    """
    if not cert.is_valid(tree, process):
        raise ValueError("invalid arbitrage certificate")
    return np.asarray(candidate, dtype=float) + cert.replay(tree, process)


@dataclass
class SweepFailure:
    weights: np.ndarray
    raw_weights: np.ndarray
    error: str


def simplex_grid(d: int, n: int) -> list[np.ndarray]:
    """``n`` strictly positive weight vectors on the unit simplex.

    Evenly spaced for ``d = 2``; for larger ``d`` a fixed-seed Dirichlet sample.
    """
    if n < 1:
        raise ValueError("grid needs at least one point")
    if d == 1:
        return [np.ones(1)] * n
    if d == 2:
        ts = np.arange(1, n + 1) / (n + 1)
        return [np.array([t, 1.0 - t]) for t in ts]
    return list(np.random.default_rng(0).dirichlet(np.ones(d), n))


def pareto_front_sweep(tree: ScenarioTree, process: BidAskProcess, x, spec: UtilitySpec, grid,
                       tol: float | None = None) -> list:
    """One scalarized solve per weight vector, sorted by normalized weights.

    Failures are kept in place as ``SweepFailure`` entries; the sweep continues.
    """
    sk = assemble_constraints(tree, process, x, box=False)
    out = []
    for lam in grid:
        w, raw = normalize_weights(lam)
        try:
            out.append(solve_scalarized(tree, process, x, spec, raw, tol=tol, skeleton=sk))
        except (SolverError, LpError) as exc:
            log.error("sweep point %s failed: %s", raw, exc)
            out.append(SweepFailure(w, raw, str(exc)))
    out.sort(key=lambda s: tuple(s.weights))
    return out


def dominates(u, v, tol: float = 0.0) -> bool:
    """``u`` beats ``v`` by more than ``tol`` in some component and loses nowhere beyond ``tol``."""
    u, v = np.asarray(u), np.asarray(v)
    return bool(np.all(u >= v - tol) and np.any(u > v + tol))


def mutually_nondominating(utilities, tol: float = 1e-6) -> bool:
    us = [np.asarray(u) for u in utilities]
    return not any(dominates(a, b, tol) for a in us for b in us if a is not b)
