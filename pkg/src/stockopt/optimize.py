"""Constrained optimization on the surrogates.

Three penalization methods (squared penalty, augmented Lagrangian,
log-barrier) crossed with two derivative-free optimizers (projected
gradient descent with finite differences, Nelder-Mead with clamping),
multistarted from Latin hypercube samples. The best feasible final
iterate wins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

BARRIER_INFEASIBLE = math.inf

METHODS = ("squared_penalty", "augmented_lagrangian", "log_barrier")
OPTIMIZERS = ("gradient", "nelder_mead")


@dataclass(frozen=True)
class MeritSpec:
    """Penalization method and its outer-loop schedule."""

    kind: str = "squared_penalty"
    mu0: float = 1.0
    mu_growth: float = 10.0
    outer_iters: int = 8
    lambda0: float = 0.0

    def __post_init__(self):
        if self.kind not in METHODS:
            raise ValueError(f"unknown penalization method {self.kind!r}")
        if self.mu0 <= 0:
            raise ValueError("mu0 must be > 0")
        if self.mu_growth <= 1:
            raise ValueError("mu_growth must be > 1")
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be >= 1")


def merit_value(spec: MeritSpec, f_val: float, g_val: float, mu: float, lam: float = 0.0) -> float:
    """Penalized merit; +inf sentinel for barrier infeasibility."""
    if mu <= 0:
        raise ValueError("mu must be > 0")
    if spec.kind == "squared_penalty":
        return f_val + mu * max(0.0, g_val) ** 2
    if spec.kind == "augmented_lagrangian":
        shifted = max(0.0, lam / mu + g_val)
        return f_val + 0.5 * mu * (shifted**2 - (lam / mu) ** 2)
    # log barrier
    if g_val >= 0.0:
        return BARRIER_INFEASIBLE
    return f_val - mu * math.log(-g_val)


@dataclass
class InnerOptions:
    """Shared settings of the two unconstrained optimizers."""

    nm_max_iter: int = 1000
    nm_diameter_tol: float = 1e-8  # times the box diagonal
    nm_initial_scale: float = 0.05  # initial simplex edge, fraction of box width
    gd_max_iter: int = 500
    gd_grad_tol: float = 1e-8
    gd_armijo: float = 1e-4
    fd_fraction: float = 2.0**-6  # finite-difference step, fraction of box width


@dataclass
class InnerResult:
    point: np.ndarray
    value: float
    converged: bool


def latin_hypercube(n: int, dim: int, seed) -> np.ndarray:
    """n stratum-center samples in the unit cube, one per stratum and axis."""
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    cols = [rng.permutation(n) for _ in range(dim)]
    return (np.stack(cols, axis=1) + 0.5) / n


def _clamp(p: np.ndarray, box: np.ndarray) -> np.ndarray:
    return np.clip(p, box[:, 0], box[:, 1])


def nelder_mead(merit, box: np.ndarray, start, opts: InnerOptions | None = None) -> InnerResult:
    """Simplex search with iterates clamped to the box.

    Standard coefficients: reflection 1, expansion 2, contraction 0.5,
    shrink 0.5. Terminates on simplex diameter below nm_diameter_tol times
    the box diagonal or on the iteration budget.
    """
    opts = opts or InnerOptions()
    box = np.asarray(box, dtype=np.float64)
    start = _clamp(np.asarray(start, dtype=np.float64), box)
    n = len(start)
    widths = box[:, 1] - box[:, 0]
    diag = float(np.linalg.norm(widths))

    simplex = [start]
    for d in range(n):
        p = start.copy()
        step = opts.nm_initial_scale * widths[d]
        p[d] = p[d] + step if p[d] + step <= box[d, 1] else p[d] - step
        simplex.append(_clamp(p, box))
    simplex = np.array(simplex)
    values = np.array([merit(p) for p in simplex])

    converged = False
    for _ in range(opts.nm_max_iter):
        order = np.argsort(values, kind="stable")
        simplex = simplex[order]
        values = values[order]
        spread = max(
            float(np.linalg.norm(simplex[i] - simplex[0])) for i in range(1, n + 1)
        )
        if spread < opts.nm_diameter_tol * diag:
            converged = True
            break
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]

        reflected = _clamp(centroid + (centroid - worst), box)
        fr = merit(reflected)
        if fr < values[0]:
            expanded = _clamp(centroid + 2.0 * (centroid - worst), box)
            fe = merit(expanded)
            if fe < fr:
                simplex[-1], values[-1] = expanded, fe
            else:
                simplex[-1], values[-1] = reflected, fr
            continue
        if fr < values[-2]:
            simplex[-1], values[-1] = reflected, fr
            continue
        contracted = _clamp(centroid + 0.5 * (worst - centroid), box)
        fc = merit(contracted)
        if fc < values[-1]:
            simplex[-1], values[-1] = contracted, fc
            continue
        # shrink towards the best vertex
        for i in range(1, n + 1):
            simplex[i] = _clamp(simplex[0] + 0.5 * (simplex[i] - simplex[0]), box)
            values[i] = merit(simplex[i])

    best = int(np.argmin(values))
    return InnerResult(point=simplex[best].copy(), value=float(values[best]), converged=converged)


def gradient_descent(merit, box: np.ndarray, start, opts: InnerOptions | None = None) -> InnerResult:
    """Projected descent with central finite differences and Armijo backtracking.

    The finite-difference step is fd_fraction of each box width so that the
    stencil straddles the kinks of the piecewise-linear surrogate. Infinite
    merit values (barrier sentinel) shrink the line-search step and fall back
    to one-sided differences in the gradient.
    """
    opts = opts or InnerOptions()
    box = np.asarray(box, dtype=np.float64)
    x = _clamp(np.asarray(start, dtype=np.float64), box)
    n = len(x)
    widths = box[:, 1] - box[:, 0]
    delta = opts.fd_fraction * widths

    fx = merit(x)
    converged = False
    for _ in range(opts.gd_max_iter):
        grad = np.zeros(n)
        for d in range(n):
            up = x.copy()
            up[d] += delta[d]
            dn = x.copy()
            dn[d] -= delta[d]
            fu = merit(_clamp(up, box))
            fd_ = merit(_clamp(dn, box))
            if math.isinf(fu) and math.isinf(fd_):
                grad[d] = 0.0
            elif math.isinf(fu):
                grad[d] = (fx - fd_) / delta[d]
            elif math.isinf(fd_):
                grad[d] = (fu - fx) / delta[d]
            else:
                grad[d] = (fu - fd_) / (2.0 * delta[d])

        # projected-gradient stationarity measure
        trial_full = _clamp(x - grad, box)
        proj_grad = x - trial_full
        if np.linalg.norm(proj_grad) < opts.gd_grad_tol:
            converged = True
            break

        step = 1.0
        accepted = False
        for _ in range(60):
            trial = _clamp(x - step * grad, box)
            ft = merit(trial)
            if not math.isinf(ft):
                decrease = float(grad @ (x - trial))
                if ft <= fx - opts.gd_armijo * decrease and ft < fx:
                    x, fx = trial, ft
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            converged = True  # no descent direction left at this resolution
            break
    return InnerResult(point=x, value=float(fx), converged=converged)


@dataclass
class RunRecord:
    """Outcome of one (method, optimizer, start) combination."""

    method: str
    optimizer: str
    start: np.ndarray
    point: np.ndarray
    f_value: float
    g_value: float
    evaluations: int
    converged: bool
    skipped: bool = False


@dataclass
class OptimizationOutcome:
    best: np.ndarray
    f_best: float
    g_best: float
    feasible: bool
    per_run: list[RunRecord] = field(default_factory=list)
    total_evaluations: int = 0
    best_method: str = ""
    best_optimizer: str = ""
    best_evaluations: int = 0


@dataclass
class SolveOptions:
    merit_specs: tuple[MeritSpec, ...] = tuple(MeritSpec(kind=k) for k in METHODS)
    inner: InnerOptions = field(default_factory=InnerOptions)


class _CountingPair:
    """Counts paired (objective, constraint) surrogate evaluations."""

    def __init__(self, f, g):
        self._f = f
        self._g = g
        self.count = 0

    def __call__(self, p):
        self.count += 1
        return self._f(p), self._g(p)


def _run_outer(spec: MeritSpec, optimizer: str, pair, box, start, inner_opts) -> InnerResult:
    mu = spec.mu0
    lam = spec.lambda0
    x = np.asarray(start, dtype=np.float64)
    result = InnerResult(point=x, value=math.inf, converged=False)
    for _ in range(spec.outer_iters):
        def merit(p, mu=mu, lam=lam):
            f_val, g_val = pair(p)
            return merit_value(spec, f_val, g_val, mu, lam)

        if optimizer == "gradient":
            result = gradient_descent(merit, box, x, inner_opts)
        else:
            result = nelder_mead(merit, box, x, inner_opts)
        x = result.point
        if spec.kind == "augmented_lagrangian":
            _, g_val = pair(x)
            lam = max(0.0, lam + mu * g_val)
        if spec.kind == "log_barrier":
            mu = mu / spec.mu_growth
        else:
            mu = mu * spec.mu_growth
    return result


def solve_constrained(
    f, g, box, n_starts: int = 5, seed=0, options: SolveOptions | None = None,
    level_w: int | None = None,
) -> OptimizationOutcome:
    """All six method x optimizer variants from Latin hypercube starts.

    f, g: callables on points of Gamma (surrogate evaluations are counted
    pairwise). When the surrogate's sparse-grid level is given, the
    finite-difference step becomes 2^-(w+2) of each box width so the stencil
    straddles the dyadic kinks of the piecewise-linear interpolant. Returns
    the best final iterate with g <= 0; if no run ends feasible the outcome
    carries feasible=False and the best g instead.
    """
    options = options or SolveOptions()
    if level_w is not None:
        options = SolveOptions(
            merit_specs=options.merit_specs,
            inner=replace(options.inner, fd_fraction=2.0 ** -(level_w + 2)),
        )
    box = np.asarray(box, dtype=np.float64)
    dim = box.shape[0]
    unit_starts = latin_hypercube(n_starts, dim, seed)
    starts = box[:, 0] + unit_starts * (box[:, 1] - box[:, 0])

    runs: list[RunRecord] = []
    for spec in options.merit_specs:
        for optimizer in OPTIMIZERS:
            for start in starts:
                pair = _CountingPair(f, g)
                if spec.kind == "log_barrier":
                    _, g0 = pair(start)
                    if g0 >= 0.0:
                        runs.append(
                            RunRecord(
                                method=spec.kind,
                                optimizer=optimizer,
                                start=start.copy(),
                                point=start.copy(),
                                f_value=math.inf,
                                g_value=g0,
                                evaluations=pair.count,
                                converged=False,
                                skipped=True,
                            )
                        )
                        continue
                result = _run_outer(spec, optimizer, pair, box, start, options.inner)
                f_val, g_val = pair(result.point)
                runs.append(
                    RunRecord(
                        method=spec.kind,
                        optimizer=optimizer,
                        start=start.copy(),
                        point=result.point.copy(),
                        f_value=f_val,
                        g_value=g_val,
                        evaluations=pair.count,
                        converged=result.converged,
                    )
                )

    total = sum(r.evaluations for r in runs)
    candidates = [r for r in runs if not r.skipped and r.g_value <= 0.0]
    feasible = bool(candidates)
    if not feasible:
        candidates = [r for r in runs if not r.skipped]
    if not candidates:
        candidates = runs

    def rank(r: RunRecord):
        return (r.f_value, tuple(r.point))

    winner = min(candidates, key=rank)
    return OptimizationOutcome(
        best=winner.point.copy(),
        f_best=winner.f_value,
        g_best=winner.g_value,
        feasible=feasible,
        per_run=runs,
        total_evaluations=total,
        best_method=winner.method,
        best_optimizer=winner.optimizer,
        best_evaluations=winner.evaluations,
    )
