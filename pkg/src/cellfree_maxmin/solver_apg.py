"""Monotone accelerated projected gradient (APG) solver for the smoothed
max-min rate problem.

The nonsmooth objective min_u R_u(mu) is replaced by the log-sum-exp soft
minimum f_sigma (accuracy ln(T)/sigma, T = total users) and maximized over
the per-AP orthant-ball set S with:

  * extrapolation y^n = mu^n + (t_{n-1}/t_n)(z^n - mu^n)
                      + ((t_{n-1}-1)/t_n)(mu^n - mu^{n-1}),
    t_{n+1} = 0.5 + sqrt(t_n^2 + 0.25), t_0 = t_1 = 1;
  * two backtracking searches (from y and from mu^n) accepting the first
    step with f(x+) >= f(x) + delta*||x+ - x||^2, step sizes carried over
    and regrown by 1/kappa once per iteration;
  * a monotone pick between the extrapolated and plain iterate, so the
    f_sigma trace never decreases.

The same driver is reused by the bisection feasibility oracle with a
different (concave) objective.
"""

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import kernels
from .rates import PowerControl, RateModel, as_mu_matrix


@dataclass(frozen=True)
class SmoothingConfig:
    """Soft-min smoothness parameter; larger sigma tracks the true minimum
    more closely at the price of a stiffer gradient."""

    sigma: float = 100.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    def gap_bound(self, total_users: int) -> float:
        """Guaranteed accuracy: f <= f_sigma <= f + ln(T)/sigma."""
        return math.log(total_users) / self.sigma


@dataclass(frozen=True)
class ApgConfig:
    delta: float = 1e-5          # sufficient-increase constant
    kappa: float = 0.45          # backtracking shrink factor
    alpha_y0: float = 1.0        # initial step size, extrapolated branch
    alpha_mu0: float = 1.0       # initial step size, plain branch
    max_iters: int = 5000
    stop_tol: float = 1e-6       # objective change over stop_window
    stop_window: int = 20
    line_search_cap: int = 60

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not 0.0 < self.kappa < 1.0:
            raise ValueError("kappa must lie in (0, 1)")
        if self.alpha_y0 <= 0 or self.alpha_mu0 <= 0:
            raise ValueError("initial step sizes must be positive")


class LineSearchError(RuntimeError):
    """Backtracking exceeded its cap on the non-extrapolated branch, which a
    correct gradient/objective pair cannot do."""

    def __init__(self, iteration: int, alpha: float, f_current: float, f_best: float):
        self.iteration = iteration
        self.alpha = alpha
        self.f_current = f_current
        self.f_best = f_best
        super().__init__(
            f"line search failed at iteration {iteration}: "
            f"alpha={alpha:.3e}, f={f_current!r}, best trial {f_best!r}"
        )


@dataclass
class DriverResult:
    x: np.ndarray
    f: float
    aux: float
    iterations: int
    termination: str
    trace_f: List[float] = field(default_factory=list)
    trace_aux: List[float] = field(default_factory=list)
    trace_alpha_y: List[float] = field(default_factory=list)
    trace_alpha_mu: List[float] = field(default_factory=list)
    trace_bt_y: List[int] = field(default_factory=list)
    trace_bt_mu: List[int] = field(default_factory=list)
    trace_elapsed: List[float] = field(default_factory=list)
    extrapolation_rejections: int = 0


def monotone_apg(
    value_grad: Callable,
    value: Callable,
    project: Callable,
    x0: np.ndarray,
    cfg: ApgConfig,
    monitor: Optional[Callable] = None,
    clock: Optional[Callable[[], float]] = None,
) -> DriverResult:
    """Maximize a smooth objective over a projectable set.

    value(x) -> (f, aux); value_grad(x) -> (f, aux, grad). `aux` is carried
    into the trace untouched (the callers store the true min-rate or the max
    cone residual there). `monitor(x, f, aux, it)` may return a termination
    reason to stop early.
    """
    clock = clock or time.perf_counter
    start = clock()

    mu = project(np.ascontiguousarray(x0, dtype=float))
    mu_prev = mu
    z = mu
    t_prev = 1.0
    t_cur = 1.0
    alpha_y = cfg.alpha_y0
    alpha_mu = cfg.alpha_mu0

    f_cur, aux_cur = value(mu)
    res = DriverResult(x=mu, f=f_cur, aux=aux_cur, iterations=0, termination="max_iters")
    res.trace_f.append(f_cur)
    res.trace_aux.append(aux_cur)
    res.trace_alpha_y.append(alpha_y)
    res.trace_alpha_mu.append(alpha_mu)
    res.trace_bt_y.append(0)
    res.trace_bt_mu.append(0)
    res.trace_elapsed.append(clock() - start)

    for it in range(1, cfg.max_iters + 1):
        # the raw extrapolation can leave S when iterates ride the ball
        # boundary, making the sufficient-increase test unsatisfiable; the
        # projected extrapolation keeps the test and the momentum intact
        y = project(mu + (t_prev / t_cur) * (z - mu) + ((t_prev - 1.0) / t_cur) * (mu - mu_prev))
        fy, _, gy = value_grad(y)

        alpha_y_in = alpha_y
        alpha_y = alpha_y / cfg.kappa
        bt_y = 0
        z_ok = False
        while bt_y <= cfg.line_search_cap:
            z_new = project(y + alpha_y * gy)
            fz, aux_z = value(z_new)
            diff = z_new - y
            if fz >= fy + cfg.delta * float(np.vdot(diff, diff)):
                z_ok = True
                break
            alpha_y *= cfg.kappa
            bt_y += 1
        if not z_ok:
            alpha_y = alpha_y_in  # rejected extrapolation must not sink the step size

        fmu, _, gmu = value_grad(mu)
        alpha_mu = alpha_mu / cfg.kappa
        bt_mu = 0
        v_ok = False
        fv_best = -math.inf
        while bt_mu <= cfg.line_search_cap:
            v_new = project(mu + alpha_mu * gmu)
            fv, aux_v = value(v_new)
            fv_best = max(fv_best, fv)
            diff = v_new - mu
            if fv >= fmu + cfg.delta * float(np.vdot(diff, diff)):
                v_ok = True
                break
            alpha_mu *= cfg.kappa
            bt_mu += 1
        if not v_ok:
            raise LineSearchError(it, alpha_mu, fmu, fv_best)

        t_next = 0.5 + math.sqrt(t_cur * t_cur + 0.25)

        if z_ok and fz > fv:
            mu_next, f_next, aux_next = z_new, fz, aux_z
        else:
            mu_next, f_next, aux_next = v_new, fv, aux_v
        if not z_ok:
            res.extrapolation_rejections += 1
            z_new = v_new

        mu_prev = mu
        mu = mu_next
        z = z_new
        t_prev, t_cur = t_cur, t_next
        f_cur, aux_cur = f_next, aux_next

        res.trace_f.append(f_cur)
        res.trace_aux.append(aux_cur)
        res.trace_alpha_y.append(alpha_y)
        res.trace_alpha_mu.append(alpha_mu)
        res.trace_bt_y.append(bt_y)
        res.trace_bt_mu.append(bt_mu)
        res.trace_elapsed.append(clock() - start)
        res.iterations = it

        if monitor is not None:
            reason = monitor(mu, f_cur, aux_cur, it)
            if reason:
                res.termination = reason
                break

        if it >= cfg.stop_window:
            if abs(res.trace_f[-1] - res.trace_f[-1 - cfg.stop_window]) < cfg.stop_tol:
                res.termination = "objective_plateau"
                break

    res.x = mu
    res.f = f_cur
    res.aux = aux_cur
    return res


# ---------------------------------------------------------------------------
# public operations on the rate model
# ---------------------------------------------------------------------------

def project_feasible(x, num_aps: Optional[int] = None) -> PowerControl:
    """Exact Euclidean projection onto S: per AP, clip negatives then scale
    into the unit ball if needed. Accepts an (N, M) matrix or a flat
    group-major vector plus num_aps."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        if num_aps is None:
            raise ValueError("flat input requires num_aps")
        arr = arr.reshape(-1, num_aps)
    mat = kernels.IMPL.project_ball_orthant(np.ascontiguousarray(arr))
    return PowerControl.from_matrix(mat)


def smooth_objective(model: RateModel, mu, sigma: float) -> float:
    mat = as_mu_matrix(mu, model)
    f, _ = kernels.IMPL.soft_min_value(
        model.gamma_sqrt, model.a_sq, model.group_ptr, mat, model.rho_bar, sigma
    )
    return float(f)


def smooth_gradient(model: RateModel, mu, sigma: float) -> np.ndarray:
    """Gradient of the soft minimum, returned flat (group-major, length MN)."""
    mat = as_mu_matrix(mu, model)
    _, _, grad = kernels.IMPL.soft_min_value_grad(
        model.gamma_sqrt, model.a_sq, model.group_ptr, mat, model.rho_bar, sigma
    )
    return grad.ravel()


def objective_closures(model: RateModel, sigma: float):
    """(value, value_grad, project) triple bound to a model and sigma; value
    functions return (f_sigma, true_min_rate[, grad])."""
    impl = kernels.IMPL
    gs, asq, ptr, rho = model.gamma_sqrt, model.a_sq, model.group_ptr, model.rho_bar

    def value(mat):
        return impl.soft_min_value(gs, asq, ptr, mat, rho, sigma)

    def value_grad(mat):
        return impl.soft_min_value_grad(gs, asq, ptr, mat, rho, sigma)

    def project(mat):
        return impl.project_ball_orthant(mat)

    return value, value_grad, project


@dataclass
class SolveReport:
    """Solution, objectives, and the per-iteration trace of one APG run."""

    power: PowerControl
    f_sigma: float
    min_rate: float
    sigma: float
    iterations: int
    termination: str
    wall_time_s: float
    trace_f_sigma: np.ndarray
    trace_f_true: np.ndarray
    trace_alpha_y: np.ndarray
    trace_alpha_mu: np.ndarray
    trace_bt_y: np.ndarray
    trace_bt_mu: np.ndarray
    trace_elapsed_s: np.ndarray
    extrapolation_rejections: int = 0

    def write_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([
                "iter", "f_sigma_nats", "f_true_nats", "alpha_y", "alpha_mu",
                "backtracks_y", "backtracks_mu", "elapsed_s",
            ])
            for i in range(self.trace_f_sigma.shape[0]):
                writer.writerow([
                    i,
                    repr(float(self.trace_f_sigma[i])),
                    repr(float(self.trace_f_true[i])),
                    repr(float(self.trace_alpha_y[i])),
                    repr(float(self.trace_alpha_mu[i])),
                    int(self.trace_bt_y[i]),
                    int(self.trace_bt_mu[i]),
                    repr(float(self.trace_elapsed_s[i])),
                ])


def apg_solve(
    model: RateModel,
    cfg: Optional[ApgConfig] = None,
    smoothing: Optional[SmoothingConfig] = None,
    mu0=None,
    clock: Optional[Callable[[], float]] = None,
) -> SolveReport:
    """Run the monotone APG on the smoothed max-min rate objective.

    Starts from the (feasible, strictly positive) equal power allocation
    unless mu0 is given."""
    cfg = cfg or ApgConfig()
    smoothing = smoothing or SmoothingConfig()
    if mu0 is None:
        mat0 = PowerControl.epa(model.num_aps, model.num_groups).by_group
    else:
        mat0 = as_mu_matrix(mu0, model)
        if (mat0 <= 0).any():
            raise ValueError("mu0 must be strictly positive")
        if not PowerControl.from_matrix(mat0).is_feasible():
            raise ValueError("mu0 must be feasible")

    impl = kernels.IMPL
    gs, asq, ptr, rho = model.gamma_sqrt, model.a_sq, model.group_ptr, model.rho_bar
    sigma = smoothing.sigma
    clock = clock or time.perf_counter
    start = clock()

    mu = impl.project_ball_orthant(np.ascontiguousarray(mat0, dtype=float))
    mu_prev = mu
    z = mu
    t_prev = 1.0
    t_cur = 1.0
    alpha_y = cfg.alpha_y0
    alpha_mu = cfg.alpha_mu0
    f_cur, aux_cur = impl.soft_min_value(gs, asq, ptr, mu, rho, sigma)

    trace_f = [f_cur]
    trace_aux = [aux_cur]
    trace_ay = [alpha_y]
    trace_am = [alpha_mu]
    trace_bty = [0]
    trace_btm = [0]
    trace_el = [clock() - start]
    rejections = 0
    iterations = 0
    termination = "max_iters"

    for it in range(1, cfg.max_iters + 1):
        (mu_next, z, f_cur, aux_cur, alpha_y, alpha_mu, bt_y, bt_mu, status) = impl.rate_apg_step(
            gs, asq, ptr, rho, sigma, mu, mu_prev, z, t_prev, t_cur,
            alpha_y, alpha_mu, cfg.delta, cfg.kappa, cfg.line_search_cap,
        )
        if status == 1:
            raise LineSearchError(it, alpha_mu, f_cur, f_cur)
        if status == 2:
            rejections += 1
        mu_prev = mu
        mu = mu_next
        t_prev, t_cur = t_cur, 0.5 + math.sqrt(t_cur * t_cur + 0.25)
        iterations = it

        trace_f.append(f_cur)
        trace_aux.append(aux_cur)
        trace_ay.append(alpha_y)
        trace_am.append(alpha_mu)
        trace_bty.append(int(bt_y))
        trace_btm.append(int(bt_mu))
        trace_el.append(clock() - start)

        if it >= cfg.stop_window:
            if abs(trace_f[-1] - trace_f[-1 - cfg.stop_window]) < cfg.stop_tol:
                termination = "objective_plateau"
                break

    wall = clock() - start
    return SolveReport(
        power=PowerControl.from_matrix(mu),
        f_sigma=f_cur,
        min_rate=aux_cur,
        sigma=sigma,
        iterations=iterations,
        termination=termination,
        wall_time_s=wall,
        trace_f_sigma=np.array(trace_f),
        trace_f_true=np.array(trace_aux),
        trace_alpha_y=np.array(trace_ay),
        trace_alpha_mu=np.array(trace_am),
        trace_bt_y=np.array(trace_bty, dtype=int),
        trace_bt_mu=np.array(trace_btm, dtype=int),
        trace_elapsed_s=np.array(trace_el),
        extrapolation_rejections=rejections,
    )


def apg_solve_continuation(
    model: RateModel,
    sigmas: Sequence[float],
    cfg: Optional[ApgConfig] = None,
    mu0=None,
    clock: Optional[Callable[[], float]] = None,
) -> List[SolveReport]:
    """Chain APG solves over an increasing sigma schedule, warm-starting each
    stage at the previous solution. A single-entry schedule is the plain
    fixed-sigma solver; extra stages squeeze the smoothing bias at little
    cost because the warm starts are already near-optimal."""
    if not sigmas:
        raise ValueError("sigma schedule must be non-empty")
    reports = []
    start_point = mu0
    for sigma in sigmas:
        report = apg_solve(model, cfg=cfg, smoothing=SmoothingConfig(sigma=sigma),
                           mu0=start_point, clock=clock)
        reports.append(report)
        # converged iterates may have exactly-zero entries; nudge them so the
        # next stage's strictly-positive start requirement holds
        start_mat = np.maximum(report.power.by_group, 1e-12)
        start_point = kernels.IMPL.project_ball_orthant(np.ascontiguousarray(start_mat))
    return reports
