"""
Proximal point versus Adam and subgradient descent
==================================================

One corrupted distillation instance, five solvers, and the rate of the
proximal iterates toward the teacher map.
"""

# %%
from qprox.analysis import audit_hippa_trace, rate_report
from qprox.numerics import child_rng
from qprox.problems import gen_distillation
from qprox.quasar_cert import QuasarCert
from qprox.solvers import BaselineConfig, HippaConfig, run_baseline, run_hippa

P = gen_distillation(child_rng(2024, 0), rho_corr=0.2, tau_quantile=0.7, mu_tau=0.05)
print("instance", P.checksum()[:12], "N =", P.N)

# %%
for method, lr in (("adam", 1e-3), ("subgrad", 0.3)):
    tr = run_baseline(P, method, BaselineConfig(lr=lr, max_iter=2000, stop_rel_err=1e-4))
    print("%-8s rel_w_err %.3e after %d steps" % (method, tr.final["rel_w_err"], tr.final["k"]))

# %%
cert = QuasarCert.for_problem(P)
for p, beta in ((1.5, 8.0), (2.0, 10.0), (3.0, 30.0)):
    cfg = HippaConfig(p=p, beta_min=beta, beta_max=beta, inner_budget=25, inner_lr=3e-3, max_outer=80,
                      stop_rel_err=1e-4)
    tr = run_hippa(P, cfg)
    audits = audit_hippa_trace(P, tr, cert)
    row = rate_report("hippa-p%g" % p, p, tr.column("dist"))
    print("p=%-4g rel_w_err %.3e  outer %3d  grad evals %4d  rho_hat %.3f  audit violations %d"
          % (p, tr.final["rel_w_err"], tr.final["k"], tr.final["grad_evals"], row["rho_hat"],
             sum(r.violations for r in audits.values())))
