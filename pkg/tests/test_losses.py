import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qprox.errors import DegenerateScale, InvalidArgument, NonLipschitzPoint, UnsupportedFamily
from qprox.losses import (
    BASELINE_KINDS,
    BaselineLoss,
    CappedLoss,
    FractionalPowerLoss,
    LadPsi,
    MultitaskPsi,
    RadialAnisoLoss,
    SensingPsi,
    psi_tau,
    scale_from_quantile,
)
from qprox.numerics import make_rng


def flat_q(U):
    return np.ones(U.shape[1]) if U.ndim == 2 else 1.0


def flat_q_grad(U):
    return np.zeros_like(U)


def fd_grad(f, z, h=1e-6):
    g = np.zeros_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e.flat[i] = h
        g.flat[i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


def all_losses():
    out = [CappedLoss(1.0, 0.25), RadialAnisoLoss(1.0, 0.1)]
    out += [BaselineLoss(k, 0.7) for k in BASELINE_KINDS]
    return out


def test_capped_value_hand():
    assert CappedLoss(1.0, 0.25).value(np.array([2.0, 0.0])) == 2.0


def test_zero_residual_gives_zero():
    for loss in all_losses():
        assert loss.value(np.zeros(3)) == 0.0
        assert np.array_equal(loss.subgrad(np.zeros(3)), np.zeros(3))


def test_huber_outer_branch():
    assert BaselineLoss("huber", 1.0).value(np.array([2.0, 0.0])) == 1.5


def test_aniso_upper_branch_flat_q():
    loss = RadialAnisoLoss(1.0, 0.1, q=flat_q, q_grad=flat_q_grad)
    assert loss.value(np.array([4.0, 0.0])) == pytest.approx(3.6, abs=1e-14)


def test_capped_subgrad_branches():
    loss = CappedLoss(1.0, 0.25)
    assert loss.subgrad(np.array([0.5, 0.0])) == pytest.approx([1.25, 0.0])
    assert loss.subgrad(np.array([2.0, 0.0])) == pytest.approx([1.0, 0.0])
    # on the kink sphere the outer (smallest radial slope) element is returned
    z = np.array([0.6, 0.8])
    assert loss.subgrad(z) == pytest.approx(2 * 0.25 * z)
    br = loss.subgrad_branches(z)
    assert len(br) == 2
    assert br[0] == pytest.approx((1.0 + 0.5) * z)


def test_quasar_constants():
    c = CappedLoss(1.0, 0.25).quasar_constants()
    assert c.kappa == pytest.approx(1 / 6) and c.gamma == 0.25
    c = RadialAnisoLoss(1.0, 0.1).quasar_constants()
    assert (c.kappa, c.gamma) == (0.5, pytest.approx(0.6))
    c = BaselineLoss("mse").quasar_constants()
    assert (c.kappa, c.gamma) == (1.0, 1.0)
    for k in ("huber", "pseudo-huber", "cauchy", "welsch"):
        with pytest.raises(UnsupportedFamily):
            BaselineLoss(k).quasar_constants()


def test_fractional_gamma_formula():
    # identity LAD operator has sigma_min = 1, so m_psi = 1
    loss = FractionalPowerLoss(0.5, LadPsi(np.eye(2), np.zeros((2, 1))), R=1.0, kappa=0.25)
    assert loss.m_psi == pytest.approx(1.0)
    c = loss.quasar_constants()
    assert c.kappa == 0.25 and c.gamma == pytest.approx(2.0)


def test_parameter_validation():
    with pytest.raises(InvalidArgument):
        CappedLoss(1.0, 0.5)
    with pytest.raises(InvalidArgument):
        RadialAnisoLoss(1.0, 0.2)
    with pytest.raises(InvalidArgument):
        BaselineLoss("huber", 0.0)
    with pytest.raises(InvalidArgument):
        BaselineLoss("tukey")
    with pytest.raises(InvalidArgument):
        FractionalPowerLoss(1.0, LadPsi(np.eye(2), np.zeros((2, 1))), R=1.0)


def test_scale_from_quantile():
    assert scale_from_quantile([2, 2, 2, 2], 0.3) == 2.0
    assert scale_from_quantile([1, 2, 3, 4], 1.0) == 4.0
    assert scale_from_quantile([1, 2, 3, 4], 0.5) == 2.5
    with pytest.raises(DegenerateScale):
        scale_from_quantile([0.0, 0.0], 0.5)


def test_psi_kink_continuity():
    tau = 1.7
    assert psi_tau(np.nextafter(tau, 0), tau) == pytest.approx(tau, rel=1e-15)
    assert psi_tau(np.nextafter(tau, 10), tau) == pytest.approx(tau, rel=1e-15)
    assert psi_tau(tau, tau) == tau


@settings(max_examples=60)
@given(st.floats(0.01, 10.0), st.floats(0.01, 0.99), st.integers(0, 1000))
def test_capped_star_violation_witness(tau, frac, seed):
    mu = frac * 0.5 / tau
    loss = CappedLoss(tau, mu)
    u = make_rng(seed).standard_normal(4)
    u /= np.linalg.norm(u)
    margin = loss.value(tau * u) - 0.5 * loss.value(2 * tau * u)
    assert margin > 0
    assert margin == pytest.approx(tau / 2 - mu * tau * tau, rel=1e-9, abs=1e-12)


def test_subgrad_matches_finite_differences():
    rng = make_rng(3)
    for loss in all_losses():
        worst = 0.0
        for _ in range(1000):
            z = rng.standard_normal(3) * rng.uniform(0.05, 4.0)
            r = np.linalg.norm(z)
            if abs(r - 1.0) < 1e-3 or abs(r - 0.7) < 1e-3:
                continue  # near a kink
            g = loss.subgrad(z)
            fd = fd_grad(loss.value, z)
            # the floor keeps finite-difference noise on vanishing gradients out
            worst = max(worst, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-3))
        assert worst <= 1e-6, (loss, worst)


def test_fractional_subgrad_fd_and_anchor_error():
    rng = make_rng(4)
    psis = [LadPsi(rng.standard_normal((8, 3)), rng.standard_normal((3, 1))),
            MultitaskPsi(rng.standard_normal((3, 10)), rng.standard_normal((2, 3))),
            SensingPsi(rng.standard_normal((12, 6)), rng.standard_normal((2, 3)))]
    for psi in psis:
        loss = FractionalPowerLoss(0.5, psi, R=1.0)
        x = psi.anchor + 0.3 * rng.standard_normal(psi.anchor.shape)
        fd = fd_grad(loss.value, x)
        assert np.linalg.norm(loss.subgrad(x) - fd) <= 1e-6 * np.linalg.norm(fd)
        with pytest.raises(NonLipschitzPoint):
            loss.subgrad(psi.anchor)
        assert loss.value(psi.anchor) == 0.0


@settings(max_examples=50)
@given(st.floats(0.0, 0.999), st.floats(0.1, 0.9), st.integers(0, 1000))
def test_fractional_homogeneity_transfer(lam, theta, seed):
    # lam near 1 makes the interpolated point a cancellation; keep 1 - lam >= 1e-3
    rng = make_rng(seed)
    psi = LadPsi(rng.standard_normal((6, 3)), rng.standard_normal((3, 1)))
    loss = FractionalPowerLoss(theta, psi, R=1.0)
    x = psi.anchor + rng.standard_normal((3, 1))
    lhs = loss.value(lam * psi.anchor + (1 - lam) * x)
    assert lhs == pytest.approx((1 - lam) ** theta * loss.value(x), rel=1e-10, abs=1e-300)


@settings(max_examples=100)
@given(st.floats(0.0, 50.0), st.floats(0.05, 5.0))
def test_smooth_baselines_below_mse(r, c):
    z = np.array([r, 0.0])
    mse = BaselineLoss("mse").value(z)
    for k in ("welsch", "cauchy", "pseudo-huber", "huber"):
        assert BaselineLoss(k, c).value(z) <= mse * (1 + 1e-12) + 1e-300


def test_batched_matches_single():
    rng = make_rng(9)
    R = rng.standard_normal((3, 7))
    for loss in all_losses():
        v = loss.values(R)
        G = loss.subgrads(R)
        for i in range(7):
            assert v[i] == pytest.approx(loss.value(R[:, i]), rel=1e-14)
            assert G[:, i] == pytest.approx(loss.subgrad(R[:, i]), rel=1e-13)
