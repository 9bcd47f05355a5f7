"""Residual-level robust losses.

Every loss maps a residual vector ``z`` to a nonnegative value and offers a
Clarke-subgradient selection. Batched methods (``values`` / ``subgrads``)
act column-wise on a ``d x N`` matrix of residuals, which is how the
composed objectives in :mod:`qprox.problems` call them.

Kink conventions
----------------
* Capped loss on the sphere ``||z|| = tau``: the outer-branch element
  ``2 mu z`` (smallest radial slope of the Clarke interval).
* Radial anisotropic loss on ``||z|| = tau``: the outer-branch radial slope
  ``1/2 + 2 mu tau``.
* Any loss at ``z = 0``: the zero vector, which lies in the Clarke
  subdifferential since the origin is the minimizer.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateScale, InvalidArgument, NonLipschitzPoint, UnsupportedFamily
from .numerics import smallest_singular_value

__all__ = [
    "QuasarConstants",
    "RobustLoss",
    "CappedLoss",
    "RadialAnisoLoss",
    "BaselineLoss",
    "FractionalPowerLoss",
    "LadPsi",
    "MultitaskPsi",
    "SensingPsi",
    "default_angular_weight",
    "psi_tau",
    "scale_from_quantile",
    "BASELINE_KINDS",
]

BASELINE_KINDS = ("mse", "huber", "pseudo-huber", "cauchy", "welsch")

@dataclass(frozen=True)
class QuasarConstants:
    kappa: float
    gamma: float

    def __post_init__(self):
        if not (0.0 < self.kappa <= 1.0):
            raise InvalidArgument("kappa must lie in (0, 1], got %r" % self.kappa)
        if not self.gamma >= 0.0:
            raise InvalidArgument("gamma must be nonnegative, got %r" % self.gamma)


def _col_norms(R):
    return np.sqrt(np.sum(R * R, axis=0))


def _as_columns(z):
    z = np.asarray(z, dtype=np.float64)
    return z.reshape(-1, 1)


class RobustLoss:
    """Base class. Subclasses implement ``values`` and ``subgrads``."""

    family = "abstract"

    def values(self, R):
        raise NotImplementedError

    def subgrads(self, R):
        raise NotImplementedError

    def value(self, z):
        return float(self.values(_as_columns(z))[0])

    def subgrad(self, z):
        z = np.asarray(z, dtype=np.float64)
        return self.subgrads(_as_columns(z)).reshape(z.shape)

    def subgrad_branches(self, z):
        """All extreme Clarke selections at ``z`` (one element off the kinks)."""
        return [self.subgrad(z)]

    def quasar_constants(self):
        raise UnsupportedFamily("no proven quasar constants for %s" % self.family)

    __call__ = value


@dataclass(frozen=True)
class CappedLoss(RobustLoss):
    """``min(||z||, tau) + mu ||z||^2`` with ``0 < mu tau < 1/2``."""

    tau: float
    mu: float
    family = "capped"

    def __post_init__(self):
        if not (self.tau > 0 and self.mu > 0):
            raise InvalidArgument("tau and mu must be positive")
        if not self.mu * self.tau < 0.5:
            raise InvalidArgument("capped loss needs mu*tau < 1/2, got %g" % (self.mu * self.tau))

    def values(self, R):
        r = _col_norms(R)
        return np.minimum(r, self.tau) + self.mu * r * r

    def subgrads(self, R):
        r = _col_norms(R)
        inner = (r < self.tau) & (r > 0)
        # inner branch: (1 + 2 mu r) z / r ; outer and kink: 2 mu z
        coef = np.full_like(r, 2.0 * self.mu)
        coef[inner] = 1.0 / r[inner] + 2.0 * self.mu
        coef[r == 0] = 0.0
        return R * coef

    def subgrad_branches(self, z):
        z = np.asarray(z, dtype=np.float64)
        r = float(np.linalg.norm(z))
        if r > 0 and abs(r - self.tau) < 1e-12:
            return [(1.0 / r + 2.0 * self.mu) * z, 2.0 * self.mu * z]
        return [self.subgrad(z)]

    def quasar_constants(self):
        mt = self.mu * self.tau
        return QuasarConstants(kappa=mt / (1.0 + 2.0 * mt), gamma=self.mu)


def psi_tau(r, tau):
    """Radial profile: ``r`` up to ``tau``, ``sqrt(tau r)`` beyond."""
    r = np.asarray(r, dtype=np.float64)
    return np.where(r <= tau, r, np.sqrt(tau * np.maximum(r, 0.0)))


def default_angular_weight(u):
    """``q(u) = 1 + (1 + u_1)^2 / 2``: nonconstant, C^1, values in [1, 3]."""
    return 1.0 + 0.5 * (1.0 + u[0]) ** 2


def _default_angular_grad(u):
    g = np.zeros_like(u)
    g[0] = 1.0 + u[0]
    return g


@dataclass(frozen=True)
class RadialAnisoLoss(RobustLoss):
    """``(psi_tau(||z||) + mu ||z||^2) q(z / ||z||)`` with ``mu tau < 1/8``.

    ``q`` acts on column-stacked unit vectors (shape ``d x N``) and returns
    ``N`` weights; ``q_grad`` returns the Euclidean gradient of some smooth
    extension of ``q`` (it is projected onto the tangent space here).
    ``q_max`` records the upper bound of ``q`` on the sphere.
    """

    tau: float
    mu: float
    q: Callable = default_angular_weight
    q_grad: Callable = _default_angular_grad
    q_max: float = 3.0
    family = "radial-aniso"

    def __post_init__(self):
        if not (self.tau > 0 and self.mu > 0):
            raise InvalidArgument("tau and mu must be positive")
        if not self.mu * self.tau < 0.125:
            raise InvalidArgument("radial loss needs mu*tau < 1/8, got %g" % (self.mu * self.tau))

    def radial(self, r):
        return psi_tau(r, self.tau) + self.mu * np.asarray(r) ** 2

    def radial_slope(self, r):
        r = np.asarray(r, dtype=np.float64)
        upper = 0.5 * np.sqrt(self.tau / np.maximum(r, self.tau))
        return np.where(r < self.tau, 1.0, upper) + 2.0 * self.mu * r

    def values(self, R):
        r = _col_norms(R)
        out = np.zeros_like(r)
        nz = r > 0
        if np.any(nz):
            U = R[:, nz] / r[nz]
            out[nz] = self.radial(r[nz]) * np.atleast_1d(self.q(U))
        return out

    def subgrads(self, R):
        G = np.zeros_like(R)
        r = _col_norms(R)
        nz = r > 0
        if not np.any(nz):
            return G
        rn = r[nz]
        U = R[:, nz] / rn
        qv = np.atleast_1d(self.q(U))
        dq = self.q_grad(U)
        tangential = dq - U * np.sum(U * dq, axis=0)
        G[:, nz] = U * (self.radial_slope(rn) * qv) + tangential * (self.radial(rn) / rn)
        return G

    def quasar_constants(self):
        return QuasarConstants(kappa=0.5, gamma=6.0 * self.mu)


@dataclass(frozen=True)
class BaselineLoss(RobustLoss):
    """Smooth comparison losses: mse, huber, pseudo-huber, cauchy, welsch.

    ``scale`` is the Huber/pseudo-Huber ``delta`` or the Cauchy/Welsch ``c``;
    it is ignored by ``mse``.
    """

    kind: str
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise InvalidArgument("unknown baseline loss %r" % self.kind)
        if not self.scale > 0:
            raise InvalidArgument("scale must be positive")

    @property
    def family(self):
        return self.kind

    def values(self, R):
        r2 = np.sum(R * R, axis=0)
        s2 = self.scale ** 2
        if self.kind == "mse":
            return 0.5 * r2
        if self.kind == "huber":
            r = np.sqrt(r2)
            return np.where(r <= self.scale, 0.5 * r2, self.scale * (r - 0.5 * self.scale))
        if self.kind == "pseudo-huber":
            # s^2 (sqrt(1 + r^2/s^2) - 1) without cancellation at small r
            return r2 / (np.sqrt(1.0 + r2 / s2) + 1.0)
        if self.kind == "cauchy":
            return 0.5 * s2 * np.log1p(r2 / s2)
        return 0.5 * s2 * -np.expm1(-r2 / s2)

    def subgrads(self, R):
        r2 = np.sum(R * R, axis=0)
        s2 = self.scale ** 2
        if self.kind == "mse":
            return R.copy()
        if self.kind == "huber":
            r = np.sqrt(r2)
            coef = np.where(r <= self.scale, 1.0, self.scale / np.maximum(r, self.scale))
            return R * coef
        if self.kind == "pseudo-huber":
            return R / np.sqrt(1.0 + r2 / s2)
        if self.kind == "cauchy":
            return R / (1.0 + r2 / s2)
        return R * np.exp(-r2 / s2)

    def quasar_constants(self):
        if self.kind == "mse":
            # 1/2 ||z||^2 is 1-strongly convex; a convenience, not a derived claim
            return QuasarConstants(kappa=1.0, gamma=1.0)
        return super().quasar_constants()


# --- fractional-power family ------------------------------------------------


class _Psi:
    """Positively homogeneous residual model anchored at ``anchor``."""

    anchor: np.ndarray
    m_psi: float

    def __call__(self, x):
        raise NotImplementedError

    def subgrad(self, x):
        raise NotImplementedError


class LadPsi(_Psi):
    """``||A (x - anchor)||_1``; lower constant ``sigma_min(A)``."""

    kind = "lad"

    def __init__(self, A, anchor):
        self.A = np.asarray(A, dtype=np.float64)
        self.anchor = np.asarray(anchor, dtype=np.float64)
        self.m_psi = smallest_singular_value(self.A)

    def __call__(self, x):
        return float(np.sum(np.abs(self.A @ (x - self.anchor))))

    def subgrad(self, x):
        return self.A.T @ np.sign(self.A @ (x - self.anchor))


class MultitaskPsi(_Psi):
    """``(1/N) sum_i ||(W - anchor) x_i||``; lower constant ``sigma_min(X) / N``."""

    kind = "multitask"

    def __init__(self, X, anchor):
        self.X = np.asarray(X, dtype=np.float64)
        self.anchor = np.asarray(anchor, dtype=np.float64)
        self.N = self.X.shape[1]
        self.m_psi = smallest_singular_value(self.X) / self.N

    def __call__(self, W):
        return float(np.sum(_col_norms((W - self.anchor) @ self.X)) / self.N)

    def subgrad(self, W):
        E = (W - self.anchor) @ self.X
        r = _col_norms(E)
        U = np.divide(E, r, out=np.zeros_like(E), where=r > 0)
        return U @ self.X.T / self.N


class SensingPsi(_Psi):
    """``||A vec(X - anchor)||_1`` for a sensing matrix ``A`` of shape ``p x (m n)``.

    ``m_psi`` is the certified bound ``sigma_min(A) <= min ||A(U)||_1`` over
    unit-Frobenius ``U``. :meth:`sampled_m` gives the (optimistic) estimate
    from random directions, for reporting only.
    """

    kind = "matrix-sensing"

    def __init__(self, A, anchor):
        self.A = np.asarray(A, dtype=np.float64)
        self.anchor = np.asarray(anchor, dtype=np.float64)
        if self.A.shape[1] != self.anchor.size:
            raise InvalidArgument("sensing matrix does not match the variable size")
        self.m_psi = smallest_singular_value(self.A)

    def __call__(self, X):
        return float(np.sum(np.abs(self.A @ (X - self.anchor).ravel())))

    def subgrad(self, X):
        s = np.sign(self.A @ (X - self.anchor).ravel())
        return (self.A.T @ s).reshape(self.anchor.shape)

    def sampled_m(self, rng, n=10_000):
        U = rng.standard_normal((n, self.anchor.size))
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        return float(np.min(np.sum(np.abs(U @ self.A.T), axis=1)))


@dataclass(frozen=True)
class FractionalPowerLoss:
    """``psi(x)^theta`` for a positively homogeneous ``psi`` on a ball of radius ``R``.

    ``kappa`` is the chosen quasar weight, any value in ``(0, theta)``;
    it defaults to ``theta / 2``.
    """

    theta: float
    psi: _Psi
    R: float
    kappa: Optional[float] = None
    m_psi: Optional[float] = None
    family = "fractional-power"

    def __post_init__(self):
        if not (0.0 < self.theta < 1.0):
            raise InvalidArgument("theta must lie in (0, 1)")
        if not self.R > 0:
            raise InvalidArgument("radius must be positive")
        if self.kappa is None:
            object.__setattr__(self, "kappa", 0.5 * self.theta)
        if not (0.0 < self.kappa < self.theta):
            raise InvalidArgument("kappa must lie in (0, theta)")
        if self.m_psi is None:
            object.__setattr__(self, "m_psi", self.psi.m_psi)
        if not self.m_psi > 0:
            raise InvalidArgument("m_psi must be positive")

    @property
    def anchor(self):
        return self.psi.anchor

    def value(self, x):
        return self.psi(np.asarray(x, dtype=np.float64)) ** self.theta

    __call__ = value

    def subgrad(self, x):
        x = np.asarray(x, dtype=np.float64)
        if np.linalg.norm(x - self.anchor) < 1e-12:
            raise NonLipschitzPoint("fractional-power loss has no finite subgradient at its anchor")
        pv = self.psi(x)
        if pv <= 0.0:
            raise NonLipschitzPoint("psi vanishes away from the anchor")
        return self.theta * pv ** (self.theta - 1.0) * self.psi.subgrad(x)

    def subgrad_branches(self, x):
        return [self.subgrad(x)]

    def quasar_constants(self):
        th, k = self.theta, self.kappa
        gamma = 2.0 * (th - k) / k * self.m_psi ** th * self.R ** (th - 2.0)
        return QuasarConstants(kappa=k, gamma=gamma)


def scale_from_quantile(norms, q):
    """Linearly interpolated ``q``-quantile of ``norms`` (must be positive)."""
    norms = np.asarray(norms, dtype=np.float64).ravel()
    if norms.size == 0:
        raise InvalidArgument("empty norm list")
    if not 0.0 <= q <= 1.0:
        raise InvalidArgument("quantile must lie in [0, 1]")
    if not np.any(norms > 0):
        raise DegenerateScale("all residual norms are zero")
    s = float(np.quantile(norms, q))
    if s <= 0.0:
        raise DegenerateScale("quantile %g of the residual norms is zero" % q)
    return s
