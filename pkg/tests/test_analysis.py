import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qprox.analysis import (
    aggregate_runs,
    audit_hippa_trace,
    check_superlinear,
    fit_linear_rate,
    outer_iteration_count,
    rate_report,
    verify_descent_summability,
)
from qprox.errors import CannotFit, IncompleteTrace, InvalidArgument
from qprox.numerics import make_rng
from qprox.problems import gen_distillation
from qprox.quasar_cert import QuasarCert
from qprox.solvers import HippaConfig, SolverTrace, run_hippa


def hand_trace(hs, eps, steps, beta=1.0):
    tr = SolverTrace("hand", p=2.0)
    tr.append(k=0, h=hs[0], eps_hat=0.0, step_norm=0.0, grad_evals=0)
    for k in range(1, len(hs)):
        tr.append(k=k, h=hs[k], eps_hat=eps[k - 1], step_norm=steps[k - 1], grad_evals=k, beta=beta)
    return tr


def test_descent_trivial_and_pass():
    tr = hand_trace([1.0], [], [])
    assert verify_descent_summability(tr, 0.0, 2.0).passed
    tr = hand_trace([1.0, 0.5, 0.2], [0.0, 0.0], [0.5, 0.3])
    assert verify_descent_summability(tr, 0.0, 2.0).passed


def test_descent_violation_located():
    tr = hand_trace([1.0, 1.5, 0.2], [0.1, 0.0], [0.1, 0.1])
    rep = verify_descent_summability(tr, 0.0, 2.0)
    assert not rep.passed and rep.violated_at == [1]


def test_summability_violation():
    # huge steps with tiny decrease break the summed bound only
    tr = hand_trace([1.0, 0.9], [0.0], [10.0])
    rep = verify_descent_summability(tr, 0.0, 2.0)
    assert rep.violated_at == ["sum"]


def test_descent_incomplete():
    tr = hand_trace([1.0, 0.5], [float("nan")], [0.1])
    with pytest.raises(IncompleteTrace):
        verify_descent_summability(tr, 0.0, 2.0)
    tr = hand_trace([1.0, 0.5], [0.0], [0.1])
    with pytest.raises(InvalidArgument):
        verify_descent_summability(tr, 0.0, 2.0, beta_sequence=[1.0, 1.0])


@settings(max_examples=50)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=20))
def test_exact_descent_implies_monotone(decrements):
    hs = [10.0]
    for d in decrements:
        hs.append(hs[-1] - d)
    tr = hand_trace(hs, [0.0] * len(decrements), [0.0] * len(decrements))
    assert verify_descent_summability(tr, min(hs) - 1.0, 2.0).passed
    assert np.all(np.diff(tr.column("h")) <= 0)


def test_linear_fit_examples():
    k = np.arange(30)
    assert fit_linear_rate(0.5 ** k).rho_hat == pytest.approx(0.5, abs=1e-12)
    assert fit_linear_rate(3 * 0.9 ** k).rho_hat == pytest.approx(0.9, abs=1e-12)
    assert fit_linear_rate(np.full(10, 2.0)).rho_hat == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(CannotFit):
        fit_linear_rate([1.0, -1.0, 0.5, 0.2])


@settings(max_examples=30)
@given(st.floats(1e-3, 1e3), st.floats(0.1, 0.95))
def test_linear_fit_scale_invariant(c, rho):
    r = rho ** np.arange(25)
    assert fit_linear_rate(c * r).rho_hat == pytest.approx(fit_linear_rate(r).rho_hat, rel=1e-9)


def test_superlinear_examples():
    r = [0.5]
    for _ in range(4):
        r.append(r[-1] ** 2)
    out = check_superlinear(r, 3.0, tail_fraction=1.0)
    assert out["ratios_decreasing"]
    assert list(out["ratios"][:3]) == pytest.approx([0.5, 0.25, 0.0625])
    assert out["B_hat"] == pytest.approx(1.0)
    out = check_superlinear(0.5 ** np.arange(8), 3.0)
    assert not out["ratios_decreasing"]
    r = [0.5]
    for _ in range(4):
        r.append(0.3 * r[-1] ** 2)
    assert check_superlinear(r, 3.0, tail_fraction=1.0)["B_hat"] == pytest.approx(0.3)


def test_superlinear_truncates_at_zero():
    out = check_superlinear([0.5, 0.25, 0.0625, 0.004, 0.0, 0.0], 3.0, tail_fraction=1.0)
    assert out["window"] == (0, 4)


def test_outer_iteration_count_examples():
    r = 0.5 ** np.arange(20)
    assert outer_iteration_count(r, 1e-3) == 10
    assert outer_iteration_count(r, 2.0) == 0
    assert outer_iteration_count(r, 1e-9) is None


@settings(max_examples=50)
@given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
def test_outer_count_monotone(e1, e2):
    r = 0.7 ** np.arange(60)
    lo, hi = sorted((e1, e2))
    n_lo, n_hi = outer_iteration_count(r, lo), outer_iteration_count(r, hi)
    assert n_hi <= n_lo


@pytest.mark.parametrize("rho", [0.3, 0.5, 0.8, 0.95])
def test_log_complexity_law(rho):
    r = rho ** np.arange(2000)
    step = math.ceil(math.log(10) / math.log(1 / rho))
    for eps in (1e-2, 1e-4, 1e-6):
        diff = outer_iteration_count(r, eps / 10) - outer_iteration_count(r, eps)
        assert abs(diff - step) <= 1


def test_loglog_complexity_law():
    r = [0.9]
    while r[-1] > 1e-300:
        r.append(r[-1] ** 2)
    r = np.array(r)
    for eps in (1e-2, 1e-5, 1e-10, 1e-40):
        assert outer_iteration_count(r, eps * eps) <= outer_iteration_count(r, eps) + 1


def test_aggregate_examples():
    assert aggregate_runs([4.2]) == {"mean": 4.2, "sample_std": 0.0}
    a = aggregate_runs([1.0, 3.0])
    assert a["mean"] == 2.0 and a["sample_std"] == pytest.approx(math.sqrt(2))
    assert aggregate_runs([2, 2, 2]) == {"mean": 2.0, "sample_std": 0.0}
    with pytest.raises(InvalidArgument):
        aggregate_runs([])


def test_audit_on_solver_trace():
    P = gen_distillation(make_rng(3), rho_corr=0.2)
    tr = run_hippa(P, HippaConfig(p=2.0, beta_min=10.0, beta_max=10.0))
    reps = audit_hippa_trace(P, tr, QuasarCert.for_problem(P))
    assert set(reps) == {"descent_summability", "stability", "residual_gap"}
    assert all(r.passed for r in reps.values())


def test_rate_report_columns():
    row = rate_report("m", 2.0, 0.5 ** np.arange(20))
    assert row["rho_hat"] == pytest.approx(0.5) and row["N_at_1e-4"] == 14
    row = rate_report("m", 2.0, [1.0, 0.1])
    assert math.isnan(row["rho_hat"]) and row["ratios_decreasing"] == ""
