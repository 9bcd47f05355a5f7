"""Post-hoc checks of the convergence theory on recorded solver traces."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import CannotFit, IncompleteTrace, InvalidArgument
from .quasar_cert import DEFAULT_TOL, Tally, residual_gap_check, stability_check
from .solvers import jp_map

__all__ = [
    "RateFit",
    "verify_descent_summability",
    "fit_linear_rate",
    "check_superlinear",
    "outer_iteration_count",
    "aggregate_runs",
    "audit_hippa_trace",
    "rate_report",
    "RATE_COLUMNS",
]

FLOOR = 1e-14
RATE_COLUMNS = ("method", "p", "rho_hat", "B_hat", "ratios_decreasing", "N_at_1e-4")


@dataclass(frozen=True)
class RateFit:
    rho_hat: float
    B_hat: float
    window: tuple
    residual_of_fit: float


def verify_descent_summability(trace, h_star, p, beta_sequence=None, tol=DEFAULT_TOL):
    """Audit the descent and step-summability inequalities on a proximal trace.

    For every step ``k``:  ``h_{k+1} <= h_k + eps_k`` and, when the model
    values are recorded, ``Q_k(x_{k+1}) <= Q_k(x_k) + eps_k``. Over the
    run: ``sum_k ||x_{k+1} - x_k||^p / (p beta_k) <= h_0 - h_star + sum_k eps_k``.
    Violations are labelled with the step index ``k + 1``; the summed
    inequality is labelled ``"sum"``.
    """
    rows = trace.rows if hasattr(trace, "rows") else trace
    t = Tally("descent_summability", tol, None)
    if len(rows) < 2:
        t.add(0.0, label="sum")
        return t.report()
    if beta_sequence is None:
        beta_sequence = [r["beta"] for r in rows[1:]]
    if len(beta_sequence) != len(rows) - 1:
        raise InvalidArgument("need one beta per step")
    total_step = 0.0
    total_eps = 0.0
    for i in range(1, len(rows)):
        prev, cur = rows[i - 1], rows[i]
        eps = cur["eps_hat"]
        beta = beta_sequence[i - 1]
        if eps is None or not math.isfinite(eps) or not math.isfinite(beta):
            raise IncompleteTrace("step %d has no eps_hat/beta record" % cur["k"])
        t.add(prev["h"] + eps - cur["h"], label=cur["k"])
        qc, qn = cur.get("q_center", float("nan")), cur.get("q_new", float("nan"))
        if math.isfinite(qc) and math.isfinite(qn):
            t.add(qc + eps - qn, label=cur["k"])
        total_step += cur["step_norm"] ** p / (p * beta)
        total_eps += eps
    t.add(rows[0]["h"] - h_star + total_eps - total_step, label="sum")
    return t.report()


def _clean_sequence(r):
    """Validate ``r`` and cut it at the first entry below the floor."""
    r = np.asarray(r, dtype=np.float64).ravel()
    if np.any(~np.isfinite(r)) or np.any(r < 0):
        raise CannotFit("sequence has negative or non-finite entries")
    small = np.flatnonzero(r < FLOOR)
    return r[:small[0]] if small.size else r


def _tail(n, tail_fraction, min_points):
    size = max(int(math.ceil(tail_fraction * n)), min(min_points, n))
    return n - size, n


def fit_linear_rate(r, tail_fraction=0.5, min_points=5):
    """Least-squares fit of ``log r_k = a + k log rho`` on the tail.

    The window is the last ``tail_fraction`` of the sequence (at least
    ``min_points`` entries when available), after cutting the sequence at
    the first value below 1e-14. ``residual_of_fit`` is the RMS residual in
    log space.
    """
    r = _clean_sequence(r)
    lo, hi = _tail(len(r), tail_fraction, min_points)
    if hi - lo < 3:
        raise CannotFit("need at least 3 positive points in the tail window")
    k = np.arange(lo, hi, dtype=np.float64)
    y = np.log(r[lo:hi])
    slope, icpt = np.polyfit(k, y, 1)
    resid = y - (slope * k + icpt)
    return RateFit(float(np.exp(slope)), float("nan"), (lo, hi), float(np.sqrt(np.mean(resid ** 2))))


def check_superlinear(r, p, tail_fraction=0.5, min_points=4):
    """Ratio test for the recursion ``r_{k+1} <= B r_k^(p-1)``.

    Returns ``{"ratios_decreasing", "B_hat", "ratios", "window"}`` where
    the ratios ``r_{k+1}/r_k`` are taken over the tail window and
    ``B_hat = max r_{k+1} / r_k^(p-1)`` over the same window. Entries from
    the first value below 1e-14 on are dropped.
    """
    r = _clean_sequence(r)
    if len(r) < 4:
        raise CannotFit("need at least 4 positive points")
    lo, hi = _tail(len(r), tail_fraction, min_points)
    w = r[lo:hi]
    ratios = w[1:] / w[:-1]
    B = float(np.max(w[1:] / w[:-1] ** (p - 1.0)))
    return {
        "ratios_decreasing": bool(np.all(np.diff(ratios) < 0)),
        "B_hat": B,
        "ratios": ratios,
        "window": (lo, hi),
    }


def outer_iteration_count(r, eps):
    """Smallest ``N`` with ``r_k <= eps`` for every recorded ``k >= N``; ``None`` if never."""
    r = np.asarray(r, dtype=np.float64).ravel()
    if r.size == 0 or not r[-1] <= eps:
        return None
    above = np.flatnonzero(~(r <= eps))
    return int(above[-1] + 1) if above.size else 0


def aggregate_runs(values):
    """Mean and sample (n-1) standard deviation; the spread of one value is 0."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidArgument("cannot aggregate an empty list")
    std = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return {"mean": float(np.mean(v)), "sample_std": std}


def audit_hippa_trace(problem, trace, cert, tol=DEFAULT_TOL):
    """Run every per-trace theorem audit on an in-memory proximal trace.

    Returns reports for descent/summability, stability at each step (with
    ``e`` the recorded model residual) and the residual-to-gap bounds at
    the final iterate (``r`` the residual, ``w`` the regularizer part).
    """
    p = trace.p
    rows = trace.rows
    out = {"descent_summability": verify_descent_summability(trace, cert.h_star, p, tol=tol)}
    if len(trace.iterates) != len(rows) or len(trace.residuals) != len(rows):
        raise IncompleteTrace("trace does not carry its iterates")
    h = problem.value
    stab = Tally("stability", tol, None)
    for i in range(1, len(rows)):
        rep = stability_check(h, cert, trace.iterates[i - 1], trace.iterates[i], rows[i]["beta"], p,
                              trace.residuals[i], tol)
        stab.add(rep.worst_margin, label=rows[i]["k"])
    out["stability"] = stab.report()
    if len(rows) > 1:
        x_prev, y = trace.iterates[-2], trace.iterates[-1]
        w = jp_map(y - x_prev, p) / rows[-1]["beta"]
        out["residual_gap"] = residual_gap_check(h, cert, y, trace.residuals[-1], w, tol)
    return out


def rate_report(method, p, dist, eps=1e-4):
    """One row of the rate table for a distance sequence."""
    row = {"method": method, "p": p, "rho_hat": float("nan"), "B_hat": float("nan"),
           "ratios_decreasing": "", "N_at_1e-4": outer_iteration_count(dist, eps)}
    try:
        row["rho_hat"] = fit_linear_rate(dist).rho_hat
    except CannotFit:
        pass
    try:
        sl = check_superlinear(dist, p)
        row["B_hat"] = sl["B_hat"]
        row["ratios_decreasing"] = sl["ratios_decreasing"]
    except CannotFit:
        pass
    return row
