"""Baseline optimizers and the inexact high-order proximal-point method.

Every solver works on an *objective*: any object with
``objective_eval(x) -> (value, subgradient)`` and ``value(x)``. The problem
classes of :mod:`qprox.problems` qualify, and :class:`FunctionObjective`
wraps plain callables. An objective may also expose ``anchor`` (reference
minimizer) and ``h_star``; traces then carry distance and relative-error
columns.

The outer loop follows the proximal-point template

    choose beta_k, then find x_{k+1} with Q_k(x_{k+1}) <= inf Q_k + eps_k,
    Q_k(y) = h(y) + ||y - x_k||^p / (p beta_k),

with the subproblem solved inexactly by Adam plus an acceptance test on
``Q_k``. When a lower bound on ``h`` is supplied (``h >= 0`` for every loss
in this package) the gap ``Q_k(y) - inf Q_k`` is certified by
``Q_k(y) - lower_bound`` and the inner run can stop once the forcing target
is met.
"""

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgument, RequiresDistance
from .numerics import frobenius_norm

__all__ = [
    "FunctionObjective",
    "AdamState",
    "adam_step",
    "BaselineConfig",
    "run_baseline",
    "prox_model_value",
    "jp_map",
    "InnerConfig",
    "ProxResult",
    "solve_prox_subproblem",
    "prox_result_at",
    "ForcingSchedule",
    "forcing_value",
    "HippaConfig",
    "run_hippa",
    "SolverTrace",
    "TRACE_COLUMNS",
]


class FunctionObjective:
    """Objective built from a value callable and a subgradient callable."""

    def __init__(self, value, subgrad, anchor=None, h_star=None):
        self._value = value
        self._subgrad = subgrad
        self.anchor = None if anchor is None else np.asarray(anchor, dtype=np.float64)
        self.h_star = h_star

    def value(self, x):
        return float(self._value(x))

    __call__ = value

    def objective_eval(self, x):
        return float(self._value(x)), np.asarray(self._subgrad(x), dtype=np.float64)


class _Counted:
    """Counts ``objective_eval`` calls; ``value`` calls are counted too."""

    def __init__(self, obj):
        self.obj = obj
        self.evals = 0

    def objective_eval(self, x):
        self.evals += 1
        return self.obj.objective_eval(x)

    def value(self, x):
        self.evals += 1
        return self.obj.value(x)


# ---------------------------------------------------------------- Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, shape, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros(shape), np.zeros(shape), 0, lr, beta1, beta2, eps)


def adam_step(state, x, g):
    """One bias-corrected Adam update; returns ``(new_state, new_x)``.

    The input state is left untouched.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape != np.shape(x) or g.shape != state.m.shape:
        raise InvalidArgument("shape mismatch in adam_step")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    x_new = x - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps), x_new


# ---------------------------------------------------------------- traces

TRACE_COLUMNS = (
    "k", "h", "eps_hat", "step_norm", "residual_norm", "rel_w_err", "grad_evals", "wall_time_s",
)
# extra bookkeeping kept after the core columns
EXTRA_COLUMNS = (
    "dist", "eps_inner", "eps_res", "gap_cert", "eps_target", "beta", "q_center", "q_new",
    "retries", "inner_lr", "clean_mse", "clean_hkd",
)


@dataclass
class SolverTrace:
    """Per-iteration records of one solver run.

    Row ``k = 0`` describes the starting point. For proximal runs row
    ``k >= 1`` describes the step from ``x_{k-1}`` to ``x_k``. ``iterates``
    keeps the points themselves in memory (not serialized) for audits.
    """

    method: str
    rows: list = field(default_factory=list)
    status: str = "running"
    p: Optional[float] = None
    iterates: list = field(default_factory=list)
    residuals: list = field(default_factory=list)

    def append(self, **rec):
        if self.rows and rec["k"] <= self.rows[-1]["k"]:
            raise InvalidArgument("trace rows must have increasing k")
        if self.rows and rec["grad_evals"] < self.rows[-1]["grad_evals"]:
            raise InvalidArgument("grad_evals must be nondecreasing")
        row = {c: float("nan") for c in TRACE_COLUMNS + EXTRA_COLUMNS}
        row.update(rec)
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    @property
    def final(self):
        return self.rows[-1]

    def to_csv(self, path, include_time=True):
        cols = [c for c in TRACE_COLUMNS + EXTRA_COLUMNS if include_time or c != "wall_time_s"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_fmt(r[c], c) for c in cols])

    @classmethod
    def from_csv(cls, path, method=""):
        tr = cls(method)
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                row = {c: float("nan") for c in TRACE_COLUMNS + EXTRA_COLUMNS}
                for c, v in rec.items():
                    row[c] = int(v) if c in _INT_COLUMNS and v != "nan" else float(v)
                tr.rows.append(row)
        tr.status = "loaded"
        return tr


_INT_COLUMNS = ("k", "grad_evals", "retries")


def _fmt(v, col):
    if col in _INT_COLUMNS and math.isfinite(v):
        return "%d" % int(v)
    # 17 significant digits round-trip float64 exactly
    return "%.16e" % float(v)


def _dist_info(obj, x):
    anchor = getattr(obj, "anchor", None)
    if anchor is None:
        return float("nan"), float("nan")
    d = frobenius_norm(x - anchor)
    na = frobenius_norm(anchor)
    return d, (d / na if na > 0 else float("nan"))


def _clean_metrics(obj, x):
    if hasattr(obj, "Zt_clean"):
        E = x @ obj.Zs - obj.Zt_clean
        return float(np.sum(E * E)) / (2.0 * obj.N), obj.value(x, clean=True)
    return float("nan"), float("nan")


# ---------------------------------------------------------------- baselines


@dataclass
class BaselineConfig:
    lr: float = 1e-3
    max_iter: int = 2000
    stop_rel_err: float = 1e-4
    log_every: int = 1


def run_baseline(problem, method, config=None, rng=None, x0=None):
    """Adam or constant-step subgradient descent from ``x0`` (default ``problem.W0``).

    Stops when the relative error to ``problem.anchor`` drops to
    ``stop_rel_err`` or after ``max_iter`` updates. A non-finite value ends
    the run with status ``"diverged"``.
    """
    cfg = config or BaselineConfig()
    if method not in ("adam", "subgrad"):
        raise InvalidArgument("unknown baseline %r" % (method,))
    x = np.array(problem.W0 if x0 is None else x0, dtype=np.float64)
    obj = _Counted(problem)
    tr = SolverTrace(method)
    state = AdamState.fresh(x.shape, lr=cfg.lr)
    t0 = time.perf_counter()
    k = 0
    h, g = obj.objective_eval(x)
    while True:
        dist, rel = _dist_info(problem, x)
        if not math.isfinite(h):
            tr.status = "diverged"
            break
        if k % cfg.log_every == 0 or rel <= cfg.stop_rel_err or k == cfg.max_iter:
            cm, ch = _clean_metrics(problem, x)
            tr.append(k=k, h=h, eps_hat=0.0, step_norm=0.0 if k == 0 else step, residual_norm=frobenius_norm(g),
                      rel_w_err=rel, grad_evals=obj.evals, wall_time_s=time.perf_counter() - t0, dist=dist,
                      clean_mse=cm, clean_hkd=ch)
        if rel <= cfg.stop_rel_err:
            tr.status = "converged"
            break
        if k == cfg.max_iter:
            tr.status = "max_iter"
            break
        if method == "adam":
            state, x_new = adam_step(state, x, g)
        else:
            x_new = x - cfg.lr * g
        step = frobenius_norm(x_new - x)
        x = x_new
        k += 1
        h, g = obj.objective_eval(x)
    tr.iterates.append(x)
    return tr


# ---------------------------------------------------------------- prox model


def jp_map(d, p):
    """``||d||^(p-2) d``, extended by 0 at ``d = 0``."""
    if not p > 1:
        raise InvalidArgument("p must exceed 1")
    d = np.asarray(d, dtype=np.float64)
    n = frobenius_norm(d)
    if n == 0.0:
        return np.zeros_like(d)
    return n ** (p - 2.0) * d


def _reg(d, beta, p):
    return frobenius_norm(d) ** p / (p * beta)


def prox_model_value(h, x_center, beta, p, y):
    """``h(y) + ||y - x_center||^p / (p beta)``; ``h`` is a callable or objective."""
    if not beta > 0 or not p > 1:
        raise InvalidArgument("need beta > 0 and p > 1")
    hv = h.value(y) if hasattr(h, "value") else float(h(y))
    return hv + _reg(np.asarray(y, dtype=np.float64) - x_center, beta, p)


@dataclass
class InnerConfig:
    """Inner Adam settings.

    Without a forcing target the subproblem gets a fixed budget of Adam
    steps from the center. The last iterate is accepted when it does not
    increase the model value; otherwise the learning rate is multiplied by
    ``lr_decay`` and the run restarts, at most ``max_retries`` times, before
    falling back to the zero step.

    With a target ``eps`` the solver runs rounds of ``budget`` steps, each
    restarted from the best point so far. A round that fails to improve the
    best model value shrinks the step size by ``lr_decay``. The run stops
    after a non-improving round at step size at most ``eps / ||g0||``,
    ``g0`` being the model subgradient at the center, or after
    ``max_rounds`` rounds. Each Adam step moves every coordinate by about
    the step size, so this ties the attainable accuracy to ``eps``.
    """

    budget: int = 25
    lr: float = 3e-3
    max_retries: int = 3
    lr_decay: float = 0.5
    max_rounds: int = 400


@dataclass
class ProxResult:
    y: np.ndarray
    q_center: float
    q_new: float
    h_new: float
    eps_hat: float
    eps_inner: float
    eps_res: float
    gap_cert: float
    residual: np.ndarray
    residual_norm: float
    subgrad: np.ndarray
    inner_iters: int
    retries: int
    lr: float
    status: str


def solve_prox_subproblem(h, x_center, beta, p, inner_cfg=None, rng=None, target=None, lower_bound=None,
                          h_center=None):
    """Approximately minimize ``Q(y) = h(y) + ||y - x_center||^p / (p beta)``.

    Parameters
    ----------
    h : objective
        Object with ``objective_eval``; wrap it in a counter to count calls.
    target : float, optional
        Forcing value ``eps_k``; switches to the restarted mode described in
        :class:`InnerConfig`.
    lower_bound : float, optional
        Known lower bound on ``h``. The regularizer is nonnegative, so it also
        bounds ``inf Q`` and ``Q(y) - lower_bound`` is a certified gap. In
        the restarted mode the run also stops once this gap is below target.
    h_center : float, optional
        ``h(x_center)`` if already known.

    Returns
    -------
    ProxResult
        ``eps_hat = max(0, Q(y) - min seen Q) + beta * ||res||^2 / 2`` with
        both parts also returned, where ``res`` is the subgradient of ``Q``
        at ``y``. ``gap_cert`` is ``Q(y) - lower_bound`` (nan without a bound).
        The returned ``y`` always satisfies ``Q(y) <= Q(x_center)``.
    """
    cfg = inner_cfg or InnerConfig()
    if cfg.budget < 1:
        raise InvalidArgument("inner budget must be at least 1")
    if not beta > 0 or not p > 1:
        raise InvalidArgument("need beta > 0 and p > 1")
    x_center = np.asarray(x_center, dtype=np.float64)
    if target is not None:
        return _solve_restarted(h, x_center, beta, p, cfg, target, lower_bound)
    if h_center is None:
        h_center = h.objective_eval(x_center)[0]
    q_center = float(h_center)
    lr = cfg.lr
    iters = 0
    for attempt in range(cfg.max_retries + 1):
        y = x_center.copy()
        state = AdamState.fresh(y.shape, lr=lr)
        q_best = math.inf
        for _ in range(cfg.budget):
            hv, g = h.objective_eval(y)
            iters += 1
            q_best = min(q_best, hv + _reg(y - x_center, beta, p))
            state, y = adam_step(state, y, g + jp_map(y - x_center, p) / beta)
        hv, g = h.objective_eval(y)
        q = hv + _reg(y - x_center, beta, p)
        q_best = min(q_best, q)
        if math.isfinite(q) and q <= q_center:
            return _result(y, x_center, beta, p, q_center, q, hv, g, q_best, lower_bound, iters, attempt, lr,
                           "accepted")
        if attempt < cfg.max_retries:
            lr *= cfg.lr_decay
    # zero step: Q is unchanged
    hv, g = h.objective_eval(x_center)
    return _result(x_center.copy(), x_center, beta, p, q_center, q_center, hv, g, q_center, lower_bound, iters,
                   cfg.max_retries, lr, "zero_step")


def _solve_restarted(h, xc, beta, p, cfg, target, lower):
    hv, g = h.objective_eval(xc)
    q_center = hv
    best = (q_center, xc.copy(), hv, g)
    floor = target / max(frobenius_norm(g), 1e-300)
    lr = cfg.lr
    iters = 0
    status = "max_rounds"
    for _ in range(cfg.max_rounds):
        q_start = best[0]
        y = best[1].copy()
        g = best[3]
        state = AdamState.fresh(y.shape, lr=lr)
        for _ in range(cfg.budget):
            state, y = adam_step(state, y, g + jp_map(y - xc, p) / beta)
            hv, g = h.objective_eval(y)
            iters += 1
            q = hv + _reg(y - xc, beta, p)
            if q < best[0]:
                best = (q, y.copy(), hv, g)
        if lower is not None and best[0] - lower <= target:
            status = "certified"
            break
        if best[0] >= q_start:
            if lr <= floor:
                status = "converged"
                break
            lr = max(lr * cfg.lr_decay, floor)
    q, y, hv, g = best
    return _result(y, xc, beta, p, q_center, q, hv, g, q, lower, iters, 0, lr, status)


def prox_result_at(h, x_center, beta, p, y, lower_bound=None):
    """Package a known proximal point ``y`` (e.g. from a closed form) as a :class:`ProxResult`."""
    x_center = np.asarray(x_center, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    q_center = h.objective_eval(x_center)[0]
    hv, g = h.objective_eval(y)
    q = hv + _reg(y - x_center, beta, p)
    return _result(y, x_center, beta, p, q_center, q, hv, g, q, lower_bound, 0, 0, float("nan"), "exact")


def _result(y, xc, beta, p, q_center, q, hv, g, q_best, lower, iters, retries, lr, status):
    res = g + jp_map(y - xc, p) / beta
    rn = frobenius_norm(res)
    e_in = max(0.0, q - q_best)
    e_res = 0.5 * beta * rn * rn
    gap = q - lower if lower is not None else float("nan")
    return ProxResult(y, q_center, q, hv, e_in + e_res, e_in, e_res, gap, res, rn, g, iters, retries, lr, status)


# ---------------------------------------------------------------- forcing


@dataclass(frozen=True)
class ForcingSchedule:
    """Inexactness budget per outer iteration.

    ``geometric``: ``E rho^(2k)``; ``power``: ``M^2 r_k^(2(p-1+delta))``;
    ``summable``: ``c/(k+1)^2``; ``constant``: ``c``; ``none``: no target.
    """

    kind: str = "none"
    E: float = 1.0
    rho: float = 0.5
    M: float = 1.0
    delta: float = 0.5
    c: float = 1.0

    def __post_init__(self):
        if self.kind not in ("none", "constant", "summable", "geometric", "power"):
            raise InvalidArgument("unknown forcing kind %r" % (self.kind,))
        if self.kind == "geometric" and not 0.0 < self.rho < 1.0:
            raise InvalidArgument("geometric forcing needs rho in (0, 1)")
        if self.kind == "power" and not self.delta > 0:
            raise InvalidArgument("power forcing needs delta > 0")
        if self.kind in ("constant", "summable") and not self.c >= 0:
            raise InvalidArgument("forcing constant must be nonnegative")


def forcing_value(schedule, k, r_k=None, p=2.0):
    """Target ``eps_k`` for outer iteration ``k``; ``r_k`` is the distance to the minimizer."""
    kind = schedule.kind
    if kind == "none":
        return None
    if kind == "constant":
        return schedule.c
    if kind == "summable":
        return schedule.c / (k + 1.0) ** 2
    if kind == "geometric":
        return schedule.E * schedule.rho ** (2 * k)
    if r_k is None or not math.isfinite(r_k):
        raise RequiresDistance("power forcing needs the distance r_k")
    return schedule.M ** 2 * r_k ** (2.0 * (p - 1.0 + schedule.delta))


# ---------------------------------------------------------------- HiPPA


@dataclass
class HippaConfig:
    p: float = 2.0
    beta_min: float = 10.0
    beta_max: float = 10.0
    beta_rule: str = "constant"
    inner_budget: int = 25
    inner_lr: float = 3e-3
    max_retries: int = 3
    lr_decay: float = 0.5
    persist_lr: bool = True
    max_rounds: int = 400
    forcing: ForcingSchedule = field(default_factory=ForcingSchedule)
    lower_bound: Optional[float] = None
    max_outer: int = 80
    stop_rel_err: float = 1e-4
    stop_step_norm: float = 1e-10

    def __post_init__(self):
        if not self.p > 1:
            raise InvalidArgument("p must exceed 1")
        if not 0 < self.beta_min <= self.beta_max:
            raise InvalidArgument("need 0 < beta_min <= beta_max")
        if self.beta_rule not in ("constant", "schedule"):
            raise InvalidArgument("beta_rule must be 'constant' or 'schedule'")

    def beta(self, k):
        if self.beta_rule == "constant":
            return self.beta_max
        # grow geometrically from beta_min, capped at beta_max
        return min(self.beta_max, self.beta_min * 2.0 ** k)


def run_hippa(problem, config=None, rng=None, x0=None, prox_solver: Optional[Callable] = None):
    """Inexact high-order proximal-point method.

    Parameters
    ----------
    problem : objective
    config : HippaConfig
    x0 : array, optional
        Start point (default ``problem.W0``).
    prox_solver : callable, optional
        ``prox_solver(h, x_center, beta, p, target) -> ProxResult`` replacing
        the inner Adam run (used with closed-form proximal maps).

    Returns
    -------
    SolverTrace
        ``iterates`` holds every ``x_k``, ``residuals`` the residual vector
        behind each recorded ``residual_norm``.
    """
    cfg = config or HippaConfig()
    x = np.array(problem.W0 if x0 is None else x0, dtype=np.float64)
    obj = _Counted(problem)
    inner = InnerConfig(cfg.inner_budget, cfg.inner_lr, cfg.max_retries, cfg.lr_decay, cfg.max_rounds)
    tr = SolverTrace("hippa", p=cfg.p)
    t0 = time.perf_counter()
    h = obj.value(x)
    dist, rel = _dist_info(problem, x)
    cm, ch = _clean_metrics(problem, x)
    tr.append(k=0, h=h, eps_hat=0.0, step_norm=0.0, residual_norm=float("nan"), rel_w_err=rel, grad_evals=obj.evals,
              wall_time_s=time.perf_counter() - t0, dist=dist, retries=0, inner_lr=inner.lr, clean_mse=cm,
              clean_hkd=ch)
    tr.iterates.append(x.copy())
    tr.residuals.append(None)
    prev_step = None
    if rel <= cfg.stop_rel_err:
        tr.status = "converged"
        return tr
    for k in range(cfg.max_outer):
        beta = cfg.beta(k)
        r_k = dist if math.isfinite(dist) else prev_step
        eps_k = forcing_value(cfg.forcing, k, r_k, cfg.p) if r_k is not None or cfg.forcing.kind != "power" else None
        if prox_solver is not None:
            res = prox_solver(obj, x, beta, cfg.p, eps_k)
        else:
            res = solve_prox_subproblem(obj, x, beta, cfg.p, inner, rng, eps_k, cfg.lower_bound, h_center=h)
            if cfg.persist_lr and eps_k is None:
                inner.lr = res.lr
        y = res.y
        step = frobenius_norm(y - x)
        x, h = y, res.h_new
        dist, rel = _dist_info(problem, x)
        cm, ch = _clean_metrics(problem, x)
        tr.append(k=k + 1, h=h, eps_hat=res.eps_hat, step_norm=step, residual_norm=res.residual_norm,
                  rel_w_err=rel, grad_evals=obj.evals, wall_time_s=time.perf_counter() - t0, dist=dist,
                  eps_inner=res.eps_inner, eps_res=res.eps_res, gap_cert=res.gap_cert,
                  eps_target=float("nan") if eps_k is None else eps_k, beta=beta, q_center=res.q_center,
                  q_new=res.q_new, retries=res.retries, inner_lr=res.lr, clean_mse=cm, clean_hkd=ch)
        tr.iterates.append(x.copy())
        tr.residuals.append(res.residual)
        prev_step = step
        if rel <= cfg.stop_rel_err:
            tr.status = "converged"
            return tr
        # a zero step under a loose forcing target is expected, not a stall
        if step <= cfg.stop_step_norm and res.status == "accepted":
            tr.status = "stalled"
            return tr
        if dist == 0.0:
            tr.status = "converged"
            return tr
    tr.status = "max_outer"
    return tr
