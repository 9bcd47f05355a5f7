"""Composed objectives over matrix variables.

Each problem object exposes the same small protocol, used by the
certification checks and the solvers:

``value(x)``, ``subgrad(x)``, ``objective_eval(x) -> (value, subgrad)``,
``anchor`` (the reference minimizer), ``h_star`` (value at the anchor) and
``quasar_constants()``.

Distillation instances carry both clean and training (possibly corrupted)
teacher features; the objective is always evaluated on the training
targets unless ``clean=True`` is passed.
"""

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateInstance, DegenerateMetric, InvalidArgument
from .losses import (
    CappedLoss,
    FractionalPowerLoss,
    LadPsi,
    MultitaskPsi,
    QuasarConstants,
    RadialAnisoLoss,
    RobustLoss,
    SensingPsi,
    scale_from_quantile,
)
from .numerics import frobenius_norm, gaussian_matrix, smallest_singular_value

__all__ = [
    "CorruptionSpec",
    "DistillationProblem",
    "StitchProblem",
    "AppendixProblem",
    "gen_distillation",
    "gen_stitch",
    "gen_lad",
    "gen_multitask",
    "gen_sensing",
    "apply_replacement_corruption",
    "objective_eval",
    "problem_quasar_constants",
    "nonstar_witness_search",
    "metrics",
    "dump_matrices",
    "load_matrices",
]

_RANK_TOL = 1e-12


@dataclass(frozen=True)
class CorruptionSpec:
    rho_corr: float
    mode: str = "replacement"

    def __post_init__(self):
        if not 0.0 <= self.rho_corr <= 1.0:
            raise InvalidArgument("rho_corr must lie in [0, 1]")
        if self.mode != "replacement":
            raise InvalidArgument("only replacement corruption is supported")


def apply_replacement_corruption(Zt, spec, rng):
    """Replace a ``rho_corr`` fraction of columns by other samples' columns.

    Returns ``(Z_train, corrupted_indices)``. ``round(rho_corr * N)``
    distinct columns ``i`` are chosen uniformly; each receives clean column
    ``j`` drawn uniformly from ``{0..N-1} \\ {i}``.
    """
    if isinstance(spec, (int, float)):
        spec = CorruptionSpec(float(spec))
    Zt = np.asarray(Zt, dtype=np.float64)
    N = Zt.shape[1]
    k = int(np.floor(spec.rho_corr * N + 0.5))
    out = Zt.copy()
    if k == 0:
        return out, np.zeros(0, dtype=np.int64)
    if N < 2:
        raise InvalidArgument("replacement corruption needs at least two samples")
    idx = np.sort(rng.choice(N, size=k, replace=False))
    src = rng.integers(0, N - 1, size=k)
    src = src + (src >= idx)
    out[:, idx] = Zt[:, src]
    return out, idx


def _checksum(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a, dtype=np.float64)
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()[:16]


@dataclass
class DistillationProblem:
    """Feature-alignment objective ``(1/N) sum_i loss(W z_s,i - z_t,i)``.

    ``Zs`` is ``d_s x N``, teacher matrices are ``d_t x N`` and
    ``W_star`` is ``d_t x d_s`` with ``W_star @ Zs == Zt_clean``.
    ``loss`` defaults to the capped loss but any :class:`RobustLoss` works
    (the robustness study swaps it).
    """

    Zs: np.ndarray
    Zt_clean: np.ndarray
    Zt_train: np.ndarray
    W_star: np.ndarray
    loss: RobustLoss
    W0: Optional[np.ndarray] = None
    corrupted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    _sigma: Optional[float] = field(default=None, repr=False)

    @property
    def N(self):
        return self.Zs.shape[1]

    @property
    def anchor(self):
        return self.W_star

    @property
    def sigma_min(self):
        if self._sigma is None:
            self._sigma = smallest_singular_value(self.Zs)
        return self._sigma

    def residuals(self, W, clean=False):
        return W @ self.Zs - (self.Zt_clean if clean else self.Zt_train)

    def value(self, W, clean=False):
        return float(np.mean(self.loss.values(self.residuals(W, clean))))

    __call__ = value

    def subgrad(self, W, clean=False):
        G = self.loss.subgrads(self.residuals(W, clean))
        return G @ self.Zs.T / self.N

    def objective_eval(self, W, clean=False):
        R = self.residuals(W, clean)
        return float(np.mean(self.loss.values(R))), self.loss.subgrads(R) @ self.Zs.T / self.N

    @property
    def h_star(self):
        return self.value(self.W_star)

    def with_loss(self, loss):
        return DistillationProblem(
            self.Zs, self.Zt_clean, self.Zt_train, self.W_star, loss, self.W0, self.corrupted, self._sigma
        )

    def clean(self):
        """Same instance with the corruption removed."""
        return DistillationProblem(
            self.Zs, self.Zt_clean, self.Zt_clean, self.W_star, self.loss, self.W0,
            np.zeros(0, dtype=np.int64), self._sigma
        )

    def initial_residual_norms(self):
        W0 = self.W0 if self.W0 is not None else np.zeros_like(self.W_star)
        return np.linalg.norm(self.residuals(W0), axis=0)

    def quasar_constants(self):
        """Constants for the realizable (clean-target) objective."""
        if not isinstance(self.loss, CappedLoss):
            return self.loss.quasar_constants()
        base = self.loss.quasar_constants()
        return QuasarConstants(base.kappa, self.loss.mu / self.N * self.sigma_min ** 2)

    def checksum(self):
        W0 = self.W0 if self.W0 is not None else np.zeros(0)
        return _checksum(self.Zs, self.Zt_clean, self.Zt_train, self.W_star, W0)

    def matrices(self):
        out = {"Zs": self.Zs, "Zt_clean": self.Zt_clean, "Zt_train": self.Zt_train, "W_star": self.W_star}
        if self.W0 is not None:
            out["W0"] = self.W0
        return out

    def to_csv(self, path):
        extra = {}
        if isinstance(self.loss, CappedLoss):
            extra["loss"] = np.array([[self.loss.tau, self.loss.mu]])
        dump_matrices({**self.matrices(), **extra}, path)

    @classmethod
    def from_csv(cls, path):
        m = load_matrices(path)
        tau, mu = m["loss"][0]
        diff = np.any(m["Zt_train"] != m["Zt_clean"], axis=0)
        return cls(m["Zs"], m["Zt_clean"], m["Zt_train"], m["W_star"], CappedLoss(tau, mu), m.get("W0"),
                   np.flatnonzero(diff))


def gen_distillation(rng, N=500, d_s=20, d_t=15, w_scale=None, tau_quantile=0.7, mu_tau=0.05,
                     rho_corr=0.0, w0_scale=0.2, W0=None):
    """Draw a realizable distillation instance.

    Draw order: ``Zs`` (standard normal), ``W_star`` (entry scale
    ``w_scale``, default ``sqrt(2 / (d_s d_t))`` so that
    ``E ||W_star||_F^2 = 2``), ``W0`` (scale ``w0_scale`` unless supplied),
    then the corruption. ``tau`` is the ``tau_quantile`` of the training
    residual norms at ``W0`` and ``mu = mu_tau / tau``.
    """
    if N < d_s:
        raise InvalidArgument("need N >= d_s for a full-row-rank Zs")
    if not 0.0 < tau_quantile <= 1.0:
        raise InvalidArgument("tau_quantile must lie in (0, 1]")
    if not 0.0 < mu_tau < 0.5:
        raise InvalidArgument("mu_tau must lie in (0, 1/2)")
    if w_scale is None:
        w_scale = np.sqrt(2.0 / (d_s * d_t))
    for _ in range(5):
        Zs = rng.standard_normal((d_s, N))
        sigma = smallest_singular_value(Zs)
        if sigma > _RANK_TOL:
            break
    else:
        raise DegenerateInstance("Zs stayed rank deficient after 5 draws")
    W_star = gaussian_matrix(rng, d_t, d_s, w_scale)
    if W0 is None:
        W0 = gaussian_matrix(rng, d_t, d_s, w0_scale)
    Zt_clean = W_star @ Zs
    Zt_train, idx = apply_replacement_corruption(Zt_clean, CorruptionSpec(rho_corr), rng)
    norms = np.linalg.norm(W0 @ Zs - Zt_train, axis=0)
    tau = scale_from_quantile(norms, tau_quantile)
    loss = CappedLoss(tau, mu_tau / tau)
    return DistillationProblem(Zs, Zt_clean, Zt_train, W_star, loss, W0, idx, sigma)


@dataclass
class StitchProblem:
    """Affine stitching objective ``H(vec(A_tilde X_tilde - Y))``.

    ``X_tilde`` is the feature matrix with an appended row of ones and
    ``vec`` stacks columns.
    """

    X_tilde: np.ndarray
    Y: np.ndarray
    A_star_tilde: np.ndarray
    loss: RadialAnisoLoss
    _sigma: Optional[float] = field(default=None, repr=False)

    @property
    def anchor(self):
        return self.A_star_tilde

    @property
    def sigma_min(self):
        if self._sigma is None:
            self._sigma = smallest_singular_value(self.X_tilde)
        return self._sigma

    def residual_vector(self, A):
        return (A @ self.X_tilde - self.Y).ravel(order="F")

    def value(self, A):
        return self.loss.value(self.residual_vector(A))

    __call__ = value

    def subgrad(self, A):
        g = self.loss.subgrad(self.residual_vector(A))
        return g.reshape(self.Y.shape, order="F") @ self.X_tilde.T

    def objective_eval(self, A):
        return self.value(A), self.subgrad(A)

    @property
    def h_star(self):
        return self.value(self.A_star_tilde)

    def quasar_constants(self):
        return QuasarConstants(0.5, 6.0 * self.loss.mu * self.sigma_min ** 2)


def gen_stitch(rng, N=60, d_x=6, d_y=4, tau=1.0, mu=0.05, loss=None):
    X = rng.standard_normal((d_x, N))
    X_tilde = np.vstack([X, np.ones((1, N))])
    A_star = rng.standard_normal((d_y, d_x + 1)) / np.sqrt(d_x + 1)
    Y = A_star @ X_tilde
    if loss is None:
        loss = RadialAnisoLoss(tau, mu)
    return StitchProblem(X_tilde, Y, A_star, loss)


@dataclass
class AppendixProblem:
    """Fractional-power objective ``psi(x)^theta`` restricted to a ball of radius ``R``."""

    kind: str
    loss: FractionalPowerLoss

    @property
    def anchor(self):
        return self.loss.anchor

    @property
    def theta(self):
        return self.loss.theta

    @property
    def R(self):
        return self.loss.R

    def value(self, x):
        return self.loss.value(x)

    __call__ = value

    def subgrad(self, x):
        return self.loss.subgrad(x)

    def objective_eval(self, x):
        return self.value(x), self.subgrad(x)

    @property
    def h_star(self):
        return 0.0

    def quasar_constants(self):
        return self.loss.quasar_constants()


def gen_lad(rng, m=30, n=5, theta=0.5, R=1.0, kappa=None):
    A = rng.standard_normal((m, n))
    xbar = rng.standard_normal((n, 1))
    return AppendixProblem("lad", FractionalPowerLoss(theta, LadPsi(A, xbar), R, kappa))


def gen_multitask(rng, N=40, d=5, p_out=3, theta=0.5, R=1.0, kappa=None):
    X = rng.standard_normal((d, N))
    W_bar = rng.standard_normal((p_out, d))
    return AppendixProblem("multitask", FractionalPowerLoss(theta, MultitaskPsi(X, W_bar), R, kappa))


def gen_sensing(rng, m=4, n=3, n_meas=30, theta=0.5, R=1.0, kappa=None):
    A = rng.standard_normal((n_meas, m * n))
    X_bar = rng.standard_normal((m, n))
    return AppendixProblem("matrix-sensing", FractionalPowerLoss(theta, SensingPsi(A, X_bar), R, kappa))


def objective_eval(problem, W):
    return problem.objective_eval(np.asarray(W, dtype=np.float64))


def problem_quasar_constants(problem):
    """Proven constants and the reference minimizer of ``problem``."""
    return problem.quasar_constants(), problem.anchor


def nonstar_witness_search(problem, rng, trials):
    """Look for ``dW`` with ``sum_i [Phi(dW z_i / 2) - Phi(dW z_i) / 2] > 0``.

    Random Gaussian directions are rescaled so that the median residual
    norm ``||dW z_i||`` equals ``2 tau``. Returns ``(dW, margin)`` for the
    first direction with positive margin, else ``None``.
    """
    loss = problem.loss
    shape = problem.W_star.shape
    for _ in range(int(trials)):
        D = rng.standard_normal(shape)
        med = np.median(np.linalg.norm(D @ problem.Zs, axis=0))
        if med <= 0:
            continue
        D *= 2.0 * loss.tau / med
        margin = nonstar_margin(problem, D)
        if margin > 0:
            return D, margin
    return None


def nonstar_margin(problem, D):
    R = D @ problem.Zs
    return float(np.sum(problem.loss.values(0.5 * R) - 0.5 * problem.loss.values(R)))


def metrics(problem, W):
    """Relative recovery error, clean MSE and clean objective at ``W``."""
    ws = frobenius_norm(problem.W_star)
    if ws == 0.0:
        raise DegenerateMetric("W_star is the zero matrix")
    E = W @ problem.Zs - problem.Zt_clean
    return {
        "rel_w_err": frobenius_norm(W - problem.W_star) / ws,
        "clean_mse": float(np.sum(E * E)) / (2.0 * problem.N),
        "clean_hkd": problem.value(W, clean=True),
    }


def dump_matrices(mats, path):
    """Write named matrices as CSV blocks, each headed by ``# name,rows,cols``."""
    with open(path, "w") as fh:
        for name, M in mats.items():
            M = np.atleast_2d(np.asarray(M, dtype=np.float64))
            fh.write("# %s,%d,%d\n" % (name, M.shape[0], M.shape[1]))
            for row in M:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_matrices(path):
    out = {}
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = 0
    while i < len(lines):
        name, rows, cols = lines[i][2:].split(",")
        rows, cols = int(rows), int(cols)
        block = [[float(v) for v in ln.split(",")] for ln in lines[i + 1:i + 1 + rows]]
        out[name] = np.array(block, dtype=np.float64).reshape(rows, cols)
        i += 1 + rows
    return out
