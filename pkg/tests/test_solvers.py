import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qprox.errors import InvalidArgument, RequiresDistance
from qprox.numerics import frobenius_norm, make_rng
from qprox.problems import gen_distillation
from qprox.solvers import (
    AdamState,
    BaselineConfig,
    ForcingSchedule,
    FunctionObjective,
    HippaConfig,
    InnerConfig,
    SolverTrace,
    TRACE_COLUMNS,
    adam_step,
    forcing_value,
    jp_map,
    prox_model_value,
    prox_result_at,
    run_baseline,
    run_hippa,
    solve_prox_subproblem,
)


def abs_obj(**kw):
    return FunctionObjective(lambda y: float(np.sum(np.abs(y))), lambda y: np.sign(y), **kw)


def quad_obj(center=0.0):
    c = np.atleast_1d(np.asarray(center, dtype=float))
    return FunctionObjective(lambda y: 0.5 * float(np.sum((y - c) ** 2)), lambda y: y - c, anchor=c, h_star=0.0)


def soft_threshold_oracle(obj, x, beta, p, eps):
    return prox_result_at(obj, x, beta, p, np.sign(x) * np.maximum(np.abs(x) - beta, 0.0))


@pytest.fixture(scope="module")
def small_problem():
    return gen_distillation(make_rng(21), N=200, d_s=8, d_t=5, rho_corr=0.2)


# ---------------------------------------------------------------- adam


def test_adam_zero_gradient_keeps_x():
    x = np.array([[1.0, -2.0]])
    st_, x1 = adam_step(AdamState.fresh(x.shape), x, np.zeros_like(x))
    assert np.array_equal(x1, x)


def test_adam_first_step_is_sign_step():
    x = np.zeros(4)
    g = np.array([3.0, -0.2, 1e-3, -50.0])
    st_, x1 = adam_step(AdamState.fresh(x.shape, lr=1e-3), x, g)
    assert np.allclose(x1, -1e-3 * np.sign(g), rtol=1e-4)
    assert np.all(st_.v >= 0) and st_.t == 1


def test_adam_deterministic():
    s = AdamState.fresh((3,), lr=0.01)
    x, g = np.ones(3), np.array([1.0, 2.0, -1.0])
    a = adam_step(s, x, g)
    b = adam_step(s, x, g)
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[0].m, b[0].m)


# ---------------------------------------------------------------- baselines


def test_subgrad_geometric_recursion():
    obj = quad_obj(1.0)
    tr = run_baseline(obj, "subgrad", BaselineConfig(lr=0.1, max_iter=500, stop_rel_err=1e-4), x0=np.array([2.0]))
    assert tr.status == "converged"
    assert tr.final["k"] == math.ceil(math.log(1e-4) / math.log(0.9)) == 88
    assert tr.final["grad_evals"] == 89


def test_iteration_cap():
    tr = run_baseline(quad_obj(1.0), "adam", BaselineConfig(max_iter=10), x0=np.array([2.0]))
    assert len(tr) <= 11 and tr.status == "max_iter"


def test_adam_decreases_quadratic():
    tr = run_baseline(quad_obj(0.0), "adam", BaselineConfig(lr=1e-3, max_iter=100, stop_rel_err=0.0),
                      x0=np.array([1.0]))
    h = tr.column("h")
    assert np.all(np.diff(h) < 0)


def test_divergence_flag():
    obj = FunctionObjective(lambda y: float(np.sum(y ** 4)), lambda y: 4 * y ** 3)
    with np.errstate(over="ignore", invalid="ignore"):
        tr = run_baseline(obj, "subgrad", BaselineConfig(lr=1.0, max_iter=50), x0=np.array([10.0]))
    assert tr.status == "diverged"


def test_unknown_baseline():
    with pytest.raises(InvalidArgument):
        run_baseline(quad_obj(), "sgd", x0=np.ones(1))


# ---------------------------------------------------------------- prox model


def test_prox_model_value_examples():
    h = lambda y: float(np.sum(np.abs(y)))
    assert prox_model_value(h, np.array([3.0]), 1.0, 2.0, np.array([3.0])) == 3.0
    assert prox_model_value(h, np.array([3.0]), 1.0, 2.0, np.array([2.0])) == 2.5
    assert prox_model_value(h, np.array([3.0]), 1.0, 3.0, np.array([2.0])) == pytest.approx(2 + 1 / 3)


def test_jp_map_examples():
    d = np.array([[1.5, -2.0]])
    assert np.array_equal(jp_map(d, 2.0), d)
    assert jp_map(np.array([2.0, 0.0]), 3.0) == pytest.approx([4.0, 0.0])
    assert np.array_equal(jp_map(np.zeros(3), 1.5), np.zeros(3))


def test_prox_abs_soft_threshold():
    r = solve_prox_subproblem(abs_obj(), np.array([3.0]), 1.0, 2.0, InnerConfig(budget=25, lr=0.1), target=1e-6)
    assert abs(r.y[0] - 2.0) <= 1e-2
    true_gap = r.q_new - 2.5
    assert r.eps_hat <= 1e-3
    assert r.eps_hat >= true_gap - 1e-12


def test_prox_quadratic_shrinkage():
    r = solve_prox_subproblem(quad_obj(), np.array([1.0]), 1.0, 2.0, InnerConfig(budget=25, lr=0.1), target=1e-8)
    assert abs(r.y[0] - 0.5) <= 1e-3


def test_prox_fixed_budget_large():
    r = solve_prox_subproblem(abs_obj(), np.array([3.0]), 1.0, 2.0, InnerConfig(budget=500, lr=0.05))
    assert r.status == "accepted" and abs(r.y[0] - 2.0) <= 1e-2
    assert r.eps_hat >= r.q_new - 2.5 - 1e-12


def test_zero_step_fallback():
    # a wrong-way "subgradient" makes every inner run increase Q
    obj = FunctionObjective(lambda y: float(np.sum(np.abs(y))), lambda y: -np.sign(y))
    x = np.array([1.0])
    r = solve_prox_subproblem(obj, x, 1.0, 2.0, InnerConfig(budget=5, lr=0.1, max_retries=2))
    assert r.status == "zero_step" and r.retries == 2
    assert np.array_equal(r.y, x) and r.q_new == r.q_center


def test_inner_budget_validation():
    with pytest.raises(InvalidArgument):
        solve_prox_subproblem(abs_obj(), np.ones(1), 1.0, 2.0, InnerConfig(budget=0))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 50.0), st.sampled_from([1.5, 2.0, 3.0]), st.integers(0, 1000))
def test_acceptance_contract(beta, p, seed):
    P = gen_distillation(make_rng(seed % 5), N=60, d_s=4, d_t=3, rho_corr=0.2)
    x = make_rng(seed).standard_normal(P.W_star.shape)
    r = solve_prox_subproblem(P, x, beta, p, InnerConfig(budget=10, lr=0.05))
    assert prox_model_value(P, x, beta, p, r.y) <= prox_model_value(P, x, beta, p, x)


# ---------------------------------------------------------------- forcing


def test_forcing_values():
    g = ForcingSchedule("geometric", E=1.0, rho=0.5)
    assert forcing_value(g, 0) == 1.0
    assert forcing_value(g, 2) == 0.0625
    pw = ForcingSchedule("power", M=1.0, delta=0.5)
    assert forcing_value(pw, 0, 0.1, 3.0) == pytest.approx(1e-5, rel=1e-12)
    assert forcing_value(ForcingSchedule("summable", c=2.0), 3) == pytest.approx(2.0 / 16)
    assert forcing_value(ForcingSchedule("constant", c=0.3), 7) == 0.3
    assert forcing_value(ForcingSchedule(), 4) is None
    with pytest.raises(RequiresDistance):
        forcing_value(pw, 1, None, 3.0)


def test_forcing_validation():
    with pytest.raises(InvalidArgument):
        ForcingSchedule("geometric", rho=1.0)
    with pytest.raises(InvalidArgument):
        ForcingSchedule("power", delta=0.0)
    with pytest.raises(InvalidArgument):
        ForcingSchedule("cubic")


# ---------------------------------------------------------------- hippa


def test_hippa_config_validation():
    with pytest.raises(InvalidArgument):
        HippaConfig(p=1.0)
    with pytest.raises(InvalidArgument):
        HippaConfig(beta_min=5.0, beta_max=1.0)
    assert HippaConfig(beta_min=1.0, beta_max=8.0, beta_rule="schedule").beta(2) == 4.0


def test_exact_oracle_chain():
    obj = abs_obj(anchor=np.zeros(1), h_star=0.0)
    tr = run_hippa(obj, HippaConfig(p=2.0, beta_min=1.0, beta_max=1.0), x0=np.array([3.0]),
                   prox_solver=soft_threshold_oracle)
    assert [float(x[0]) for x in tr.iterates] == [3.0, 2.0, 1.0, 0.0]
    assert tr.status == "converged" and tr.final["k"] == 3


def test_hippa_descent_and_accounting(small_problem):
    cfg = HippaConfig(p=2.0, beta_min=10.0, beta_max=10.0, max_outer=15)
    tr = run_hippa(small_problem, cfg)
    for prev, cur in zip(tr.rows, tr.rows[1:]):
        assert cur["q_new"] <= cur["q_center"] + cur["eps_hat"]
        assert cur["h"] <= prev["h"] + cur["eps_hat"]
        evals = cur["grad_evals"] - prev["grad_evals"]
        assert evals == (cur["retries"] + 1) * (cfg.inner_budget + 1)


def test_hippa_residual_consistency(small_problem):
    tr = run_hippa(small_problem, HippaConfig(p=3.0, beta_min=30.0, beta_max=30.0, max_outer=5))
    for k in range(1, len(tr)):
        x_prev, y = tr.iterates[k - 1], tr.iterates[k]
        res = small_problem.subgrad(y) + jp_map(y - x_prev, 3.0) / tr.rows[k]["beta"]
        assert frobenius_norm(res) == tr.rows[k]["residual_norm"]


def test_hippa_reaches_tolerance_p3():
    P = gen_distillation(make_rng(0), rho_corr=0.2)
    tr = run_hippa(P, HippaConfig(p=3.0, beta_min=30.0, beta_max=30.0))
    assert tr.status == "converged" and tr.final["rel_w_err"] <= 1e-4 and tr.final["k"] <= 80


# ---------------------------------------------------------------- traces


def test_trace_validation():
    tr = SolverTrace("x")
    tr.append(k=0, grad_evals=1)
    with pytest.raises(InvalidArgument):
        tr.append(k=0, grad_evals=2)
    with pytest.raises(InvalidArgument):
        tr.append(k=1, grad_evals=0)


def test_trace_csv_round_trip(tmp_path, small_problem):
    tr = run_hippa(small_problem, HippaConfig(max_outer=4))
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    header = path.read_text().splitlines()[0].split(",")
    assert tuple(header[:8]) == TRACE_COLUMNS
    back = SolverTrace.from_csv(path)
    for a, b in zip(tr.rows, back.rows):
        for c in header:
            assert (a[c] == b[c]) or (math.isnan(a[c]) and math.isnan(b[c]))
    tr.to_csv(tmp_path / "nt.csv", include_time=False)
    assert "wall_time_s" not in (tmp_path / "nt.csv").read_text().splitlines()[0]
