"""Sampled verification of the strong quasar-convexity inequalities.

A certificate claims that ``h`` is ``(kappa, gamma)``-strongly
quasar-convex with respect to the minimizer ``anchor``:

    h(l a + (1-l) x) <= kappa l h(a) + (1 - kappa l) h(x)
                        - l (1 - l/(2-kappa)) (kappa gamma / 2) ||x - a||^2

for all ``x`` and ``l`` in [0, 1]. The checkers below evaluate this
inequality and its consequences on sampled points and report the most
negative slack ("margin"). A sample counts as a violation only when its
margin is below ``-tol``.

Checkers take plain callables: ``h(x) -> float``, ``subgrad(x) -> array``
and optionally ``branches(x) -> list of arrays`` returning every extreme
Clarke selection at ``x`` (used on kink spheres, where an inequality that
is linear in the selection must hold for both endpoints).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgument, NotApplicable
from .numerics import frobenius_norm, make_rng

__all__ = [
    "QuasarCert",
    "CheckReport",
    "BallSampler",
    "lambda_samples",
    "check_interpolation",
    "check_first_order",
    "check_growth_error_bound",
    "residual_gap_check",
    "stability_check",
    "REPORT_COLUMNS",
    "Tally",
]

DEFAULT_TOL = 1e-9
REPORT_COLUMNS = ("checker", "samples", "violations", "worst_margin", "tol", "seed")


@dataclass(frozen=True)
class QuasarCert:
    """Claimed constants ``(kappa, gamma)`` toward ``anchor`` with ``h(anchor) = h_star``."""

    kappa: float
    gamma: float
    anchor: np.ndarray
    h_star: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.kappa <= 1.0):
            raise InvalidArgument("kappa must lie in (0, 1]")
        if not self.gamma >= 0.0:
            raise InvalidArgument("gamma must be nonnegative")
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=np.float64))

    @classmethod
    def for_problem(cls, problem, kappa=None, gamma=None):
        """Certificate from a problem's proven constants, optionally overridden."""
        c = problem.quasar_constants()
        return cls(c.kappa if kappa is None else kappa, c.gamma if gamma is None else gamma,
                   problem.anchor, problem.h_star)

    def consistent_with(self, h, tol=1e-12):
        return abs(h(self.anchor) - self.h_star) <= tol

    def scaled(self, kappa_factor=1.0, gamma_factor=1.0):
        return QuasarCert(min(self.kappa * kappa_factor, 1.0), self.gamma * gamma_factor, self.anchor, self.h_star)


@dataclass
class CheckReport:
    checker: str
    samples: int
    violations: int
    worst_margin: float
    tol: float = DEFAULT_TOL
    seed: Optional[int] = None
    worst_point: Optional[np.ndarray] = None
    violated_at: list = field(default_factory=list)

    @property
    def passed(self):
        return self.violations == 0

    def merge(self, other):
        """Combine two reports on disjoint sample batches."""
        worst = self if self.worst_margin <= other.worst_margin else other
        return CheckReport(self.checker, self.samples + other.samples, self.violations + other.violations,
                           min(self.worst_margin, other.worst_margin), self.tol, self.seed, worst.worst_point,
                           self.violated_at + other.violated_at)

    def csv_row(self):
        return [self.checker, "%d" % self.samples, "%d" % self.violations, "%.10e" % self.worst_margin,
                "%.3e" % self.tol, "" if self.seed is None else "%d" % self.seed]


class Tally:
    """Accumulates margins into a :class:`CheckReport`."""

    def __init__(self, name, tol, seed):
        self.name, self.tol, self.seed = name, tol, seed
        self.n = 0
        self.bad = 0
        self.worst = np.inf
        self.point = None
        self.at = []

    def add(self, margin, point=None, label=None):
        self.n += 1
        if margin < -self.tol:
            self.bad += 1
            if label is not None:
                self.at.append(label)
        if margin < self.worst:
            self.worst = float(margin)
            self.point = point

    def report(self):
        return CheckReport(self.name, self.n, self.bad, self.worst, self.tol, self.seed, self.point, self.at)


class BallSampler:
    """Points ``center + t u`` with ``u`` a uniform unit direction and ``t ~ U[0, radius]``.

    Uniform radii (rather than volume-uniform points) keep plenty of
    samples near the center, where kinks and the quadratic terms compete.
    """

    def __init__(self, center, radius, seed=0):
        if not radius > 0:
            raise InvalidArgument("sampler radius must be positive")
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)
        self.seed = seed
        self.rng = make_rng(seed)

    def __call__(self):
        u = self.rng.standard_normal(self.center.shape)
        u /= frobenius_norm(u)
        return self.center + self.rng.uniform(0.0, self.radius) * u


def lambda_samples(rng, n):
    """``n`` interpolation weights: 0, 1 and 1/2 first, then uniform draws."""
    fixed = [0.0, 1.0, 0.5][:n]
    return np.concatenate([fixed, rng.uniform(0.0, 1.0, size=max(n - len(fixed), 0))])


def _selections(x, subgrad, branches):
    return branches(x) if branches is not None else [subgrad(x)]


def check_interpolation(h, cert, sampler, n, tol=DEFAULT_TOL, seed=None):
    """Sampled check of the defining interpolation inequality.

    ``margin = RHS - LHS`` per sample.
    """
    k, g, a = cert.kappa, cert.gamma, cert.anchor
    lam_rng = make_rng(getattr(sampler, "seed", 0) if seed is None else seed)
    lams = lambda_samples(lam_rng, n)
    t = Tally("interpolation", tol, seed)
    for lam in lams:
        x = sampler()
        hx = h(x)
        d2 = frobenius_norm(x - a) ** 2
        rhs = k * lam * cert.h_star + (1.0 - k * lam) * hx - lam * (1.0 - lam / (2.0 - k)) * (k * g / 2.0) * d2
        t.add(rhs - h(lam * a + (1.0 - lam) * x), x)
    return t.report()


def check_first_order(h, subgrad, cert, sampler, n, tol=DEFAULT_TOL, seed=None, branches=None):
    """``h(a) >= h(x) + <v, a - x>/kappa + gamma/2 ||x - a||^2`` for every selection ``v``."""
    k, g, a = cert.kappa, cert.gamma, cert.anchor
    t = Tally("first_order", tol, seed)
    for _ in range(n):
        x = sampler()
        hx = h(x)
        d = a - x
        base = cert.h_star - hx - 0.5 * g * frobenius_norm(d) ** 2
        margin = min(base - float(np.sum(v * d)) / k for v in _selections(x, subgrad, branches))
        t.add(margin, x)
    return t.report()


def check_growth_error_bound(h, subgrad, cert, sampler, n, tol=DEFAULT_TOL, seed=None, branches=None):
    """Quadratic growth and the error bound.

    Growth: ``h(x) - h(a) >= kappa gamma / (2 (2 - kappa)) ||x - a||^2``.
    Error bound: ``||x - a|| <= 2/(kappa gamma) ||v||``, with ``||v||`` the
    smallest norm over the available selections standing in for
    ``dist(0, subdifferential)``. Each point contributes two samples.
    """
    k, g, a = cert.kappa, cert.gamma, cert.anchor
    if g == 0.0:
        raise NotApplicable("growth and error bounds need gamma > 0")
    c_grow = k * g / (2.0 * (2.0 - k))
    t = Tally("growth_error_bound", tol, seed)
    for _ in range(n):
        x = sampler()
        dist = frobenius_norm(x - a)
        t.add(h(x) - cert.h_star - c_grow * dist * dist, x)
        vmin = min(frobenius_norm(v) for v in _selections(x, subgrad, branches))
        t.add(2.0 / (k * g) * vmin - dist, x)
    return t.report()


def residual_gap_check(h, cert, x, r, w, tol=DEFAULT_TOL):
    """Distance and value-gap bounds for a point with ``r`` in ``subdiff h(x) + w``.

    ``||x - a|| <= 2 (||w|| + ||r||) / (kappa gamma)`` and
    ``h(x) - h(a) <= (||w|| + ||r||)^2 / (2 kappa^2 gamma)``.
    """
    k, g, a = cert.kappa, cert.gamma, cert.anchor
    if g == 0.0:
        raise NotApplicable("residual bounds need gamma > 0")
    s = frobenius_norm(w) + frobenius_norm(r)
    t = Tally("residual_gap", tol, None)
    t.add(2.0 * s / (k * g) - frobenius_norm(x - a), x)
    t.add(s * s / (2.0 * k * k * g) - (h(x) - cert.h_star), x)
    return t.report()


def stability_check(h, cert, x_prev, y, beta, p, e, tol=DEFAULT_TOL):
    """Stability of an approximate proximal point ``y`` computed from ``x_prev``.

    ``kappa (h(y) - h(a)) + kappa gamma/2 ||y - a||^2
    <= ||x_prev - y||^(p-1) ||y - a|| / beta + ||e|| ||y - a||``,
    where ``e = v + ||y - x_prev||^(p-2) (y - x_prev) / beta`` for a
    selection ``v`` at ``y``.
    """
    k, g, a = cert.kappa, cert.gamma, cert.anchor
    dy = frobenius_norm(y - a)
    lhs = k * (h(y) - cert.h_star) + 0.5 * k * g * dy * dy
    rhs = frobenius_norm(x_prev - y) ** (p - 1.0) * dy / beta + frobenius_norm(e) * dy
    t = Tally("stability", tol, None)
    t.add(rhs - lhs, y)
    return t.report()
