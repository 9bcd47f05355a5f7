"""Configuration-driven experiments with CSV outputs.

Three experiment kinds share one configuration type:

``loss-robustness``
    Every loss is trained with the same Adam settings from the same start
    on the same corrupted data, for each seed and corruption level.
``solver-compare``
    Adam, subgradient descent and the proximal method for several orders
    ``p`` on one shared instance per seed, with per-run traces, theorem
    audits and rate estimates.
``certify``
    Sampled quasar-convexity checks on every problem family, with
    falsification controls and non-star-convexity witnesses.

All numbers are written in scientific notation. Run ``s`` of a sweep
draws from ``child_rng(master_seed, s)``, so outputs do not depend on
``jobs``. Files are byte-identical across reruns except for timing
columns (see :func:`comparable_text`).
"""

import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, is_dataclass, replace
from fractions import Fraction
from typing import Optional

import numpy as np

from .analysis import aggregate_runs, audit_hippa_trace, rate_report, RATE_COLUMNS
from .errors import ConfigError, IncompleteTrace
from .losses import BaselineLoss, CappedLoss, RadialAnisoLoss, default_angular_weight, scale_from_quantile
from .numerics import child_rng, frobenius_norm
from .problems import (
    gen_distillation,
    gen_lad,
    gen_multitask,
    gen_sensing,
    gen_stitch,
    metrics,
    nonstar_witness_search,
)
from .quasar_cert import (
    BallSampler,
    QuasarCert,
    check_first_order,
    check_growth_error_bound,
    check_interpolation,
)
from .solvers import BaselineConfig, ForcingSchedule, HippaConfig, run_baseline, run_hippa

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "KINDS",
    "LOSSES",
    "ExperimentConfig",
    "ResultRow",
    "default_config",
    "load_config",
    "config_from_dict",
    "run_loss_robustness",
    "run_solver_comparison",
    "run_certification",
    "run_rate_regimes",
    "emit_plot_data",
    "comparable_text",
    "read_csv",
]

KINDS = ("loss-robustness", "solver-compare", "certify")
BASELINES = ("welsch", "cauchy", "pseudo-huber", "huber", "mse")
LOSSES = ("capped",) + BASELINES
CERT_PROBLEMS = ("capped", "aniso", "h_kd", "stitch", "lad", "multitask", "matrix-sensing")
FIGURES = {
    "rel_w_err_vs_iter": ("k", "rel_w_err"),
    "clean_mse_vs_iter": ("k", "clean_mse"),
    "clean_hkd_vs_iter": ("k", "clean_hkd"),
    "clean_hkd_vs_time": ("wall_time_s", "clean_hkd"),
}


# ---------------------------------------------------------------- config


@dataclass
class ProblemSettings:
    N: int = 500
    d_s: int = 20
    d_t: int = 15
    w_scale: Optional[float] = None
    w0: str = "gaussian"
    w0_scale: float = 0.2
    tau_quantile: float = 0.7
    mu_tau: float = 0.05


@dataclass
class LossSettings:
    capped_tau_quantile: float = 0.8
    capped_mu_tau: float = 0.2
    baselines: list = field(default_factory=lambda: list(BASELINES))
    scale_quantiles: dict = field(default_factory=lambda: {b: 0.5 for b in BASELINES if b != "mse"})


@dataclass
class MethodSettings:
    lr: float = 1e-3
    max_iter: int = 2000


@dataclass
class HippaVariant:
    p: float
    beta: float


@dataclass
class HippaSettings:
    variants: list = field(default_factory=lambda: [HippaVariant(1.5, 8.0), HippaVariant(2.0, 10.0),
                                                    HippaVariant(3.0, 30.0)])
    inner_budget: int = 25
    inner_lr: float = 3e-3
    max_retries: int = 3
    lr_decay: float = 0.5
    max_outer: int = 80


@dataclass
class SolverSettings:
    adam: MethodSettings = field(default_factory=MethodSettings)
    subgd: MethodSettings = field(default_factory=lambda: MethodSettings(lr=0.3))
    hippa: HippaSettings = field(default_factory=HippaSettings)
    stop_rel_err: float = 1e-4
    log_every: int = 1
    audit: bool = True


@dataclass
class CertifySettings:
    problems: list = field(default_factory=lambda: list(CERT_PROBLEMS))
    samples: int = 10_000
    control_samples: int = 1_000
    tol: float = 1e-9
    inflate: float = 1e3
    witness_trials: int = 50


@dataclass
class OutputSettings:
    traces: str = "traces"
    write_traces: bool = True


@dataclass
class ExperimentConfig:
    """Everything an experiment needs; every field can be set from TOML.

    ``seeds`` lists run indices; run ``s`` uses ``child_rng(master_seed, s)``.
    """

    experiment: str
    master_seed: int = 2024
    seeds: list = field(default_factory=lambda: list(range(20)))
    corruption: list = field(default_factory=lambda: [0.2])
    problem: ProblemSettings = field(default_factory=ProblemSettings)
    losses: LossSettings = field(default_factory=LossSettings)
    solvers: SolverSettings = field(default_factory=SolverSettings)
    certify: CertifySettings = field(default_factory=CertifySettings)
    output: OutputSettings = field(default_factory=OutputSettings)

    def validate(self):
        if self.experiment not in KINDS:
            raise ConfigError("experiment must be one of %s" % ", ".join(KINDS))
        if not self.seeds:
            raise ConfigError("seeds must be a nonempty list")
        if any(not isinstance(s, int) or isinstance(s, bool) or s < 0 for s in self.seeds):
            raise ConfigError("seeds must be nonnegative integers")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if not self.corruption or any(not 0.0 <= c <= 1.0 for c in self.corruption):
            raise ConfigError("corruption levels must lie in [0, 1]")
        if self.problem.w0 not in ("gaussian", "zeros"):
            raise ConfigError("problem.w0 must be 'gaussian' or 'zeros'")
        unknown = set(self.losses.baselines) - set(BASELINES)
        if unknown:
            raise ConfigError("unknown baseline losses: %s" % ", ".join(sorted(unknown)))
        for b in self.losses.baselines:
            if b != "mse" and b not in self.losses.scale_quantiles:
                raise ConfigError("no scale quantile for %s" % b)
        unknown = set(self.certify.problems) - set(CERT_PROBLEMS)
        if unknown:
            raise ConfigError("unknown certification problems: %s" % ", ".join(sorted(unknown)))
        if not self.solvers.hippa.variants:
            raise ConfigError("solvers.hippa.variants must be nonempty")
        return self


def default_config(kind):
    """Defaults for ``kind``; the robustness study starts from zero and trains a fixed budget."""
    if kind == "loss-robustness":
        cfg = ExperimentConfig(kind, corruption=[0.0, 0.2, 0.5])
        cfg.problem.w0 = "zeros"
        cfg.solvers.stop_rel_err = 0.0
        return cfg.validate()
    if kind in KINDS:
        return ExperimentConfig(kind).validate()
    raise ConfigError("unknown experiment kind %r" % (kind,))


def _coerce(value, current, where):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError("%s must be true or false" % where)
        return value
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("%s must be an integer" % where)
        return value
    if isinstance(current, float) or (current is None and where.endswith("w_scale")):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("%s must be a number" % where)
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError("%s must be a string" % where)
        return value
    if isinstance(current, list):
        if not isinstance(value, list):
            raise ConfigError("%s must be a list" % where)
        return value
    if isinstance(current, dict):
        if not isinstance(value, dict):
            raise ConfigError("%s must be a table" % where)
        return {**current, **{k: float(v) for k, v in value.items()}}
    return value


def _merge(obj, data, prefix=""):
    if not isinstance(data, dict):
        raise ConfigError("%s must be a table" % (prefix.rstrip(".") or "config"))
    names = {f.name for f in fields(obj)}
    kw = {}
    for key, value in data.items():
        name = key.replace("-", "_")
        where = prefix + key
        if name not in names:
            raise ConfigError("unknown config key %r" % where)
        current = getattr(obj, name)
        if is_dataclass(current):
            kw[name] = _merge(current, value, where + ".")
        elif name == "variants":
            if not isinstance(value, list):
                raise ConfigError("%s must be a list of {p, beta} tables" % where)
            out = []
            for i, v in enumerate(value):
                if not isinstance(v, dict) or set(v) != {"p", "beta"}:
                    raise ConfigError("%s[%d] needs exactly the keys p and beta" % (where, i))
                out.append(HippaVariant(float(v["p"]), float(v["beta"])))
            kw[name] = out
        elif name == "corruption":
            kw[name] = [float(_coerce(c, 0.0, where)) for c in _coerce(value, current, where)]
        else:
            kw[name] = _coerce(value, current, where)
    return replace(obj, **kw)


def config_from_dict(data, kind=None):
    """Build a validated config; unknown keys raise :class:`ConfigError`."""
    data = dict(data)
    given = data.pop("experiment", None)
    if kind is not None and given is not None and given != kind:
        raise ConfigError("config is for %r, not %r" % (given, kind))
    kind = kind or given
    if kind is None:
        raise ConfigError("config does not name an experiment")
    return _merge(default_config(kind), data).validate()


def load_config(path=None, kind=None, master_seed=None):
    """Read a TOML config (or take the defaults when ``path`` is None)."""
    if path is None:
        cfg = default_config(kind)
    else:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("cannot parse %s: %s" % (path, exc)) from exc
        cfg = config_from_dict(data, kind)
    if master_seed is not None:
        cfg = replace(cfg, master_seed=int(master_seed))
    return cfg


# ---------------------------------------------------------------- csv


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    seed: int
    method: str
    corruption: float
    metric: str
    value: float


RESULT_COLUMNS = ("experiment", "seed", "method", "corruption", "metric", "value")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return "%d" % v
    if isinstance(v, (float, np.floating)):
        return "%.10e" % v
    if v is None:
        return ""
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def comparable_text(path):
    """File content with timing data removed, for determinism checks.

    Drops every column whose name contains ``time`` and every long-format
    row whose ``metric`` does.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return ""
    keep = [i for i, c in enumerate(rows[0]) if "time" not in c]
    mcol = rows[0].index("metric") if "metric" in rows[0] else None
    out = []
    for r in rows:
        if mcol is not None and r is not rows[0] and "time" in r[mcol]:
            continue
        out.append(",".join(r[i] for i in keep))
    return "\n".join(out) + "\n"


def _pmap(fn, args, jobs):
    if jobs is None or jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as ex:
        return list(ex.map(fn, *zip(*args)))


def _summaries(rows, order):
    groups = {}
    for r in rows:
        groups.setdefault((r.method, r.corruption, r.metric), []).append(r.value)
    out = []
    for (method, corr, metric), vals in sorted(groups.items(), key=lambda kv: (order(kv[0][0]), kv[0][1], kv[0][2])):
        agg = aggregate_runs(vals)
        out.append((method, corr, metric, len(vals), agg["mean"], agg["sample_std"]))
    return out


def _distillation(cfg, seed, rho, tau_quantile, mu_tau):
    p = cfg.problem
    W0 = np.zeros((p.d_t, p.d_s)) if p.w0 == "zeros" else None
    return gen_distillation(child_rng(cfg.master_seed, seed), N=p.N, d_s=p.d_s, d_t=p.d_t, w_scale=p.w_scale,
                            tau_quantile=tau_quantile, mu_tau=mu_tau, rho_corr=rho, w0_scale=p.w0_scale, W0=W0)


# ---------------------------------------------------------------- loss robustness


def _robustness_losses(cfg, problem):
    out = {"capped": problem.loss}
    norms = problem.initial_residual_norms()
    for b in cfg.losses.baselines:
        scale = 1.0 if b == "mse" else scale_from_quantile(norms, cfg.losses.scale_quantiles[b])
        out[b] = BaselineLoss(b, scale)
    return out


def _robustness_seed(cfg, seed):
    rows, sums = [], []
    opt = cfg.solvers.adam
    bcfg = BaselineConfig(lr=opt.lr, max_iter=opt.max_iter, stop_rel_err=cfg.solvers.stop_rel_err,
                          log_every=max(opt.max_iter, 1))
    for rho in cfg.corruption:
        P = _distillation(cfg, seed, rho, cfg.losses.capped_tau_quantile, cfg.losses.capped_mu_tau)
        for name, loss in _robustness_losses(cfg, P).items():
            Pl = P.with_loss(loss)
            sums.append((seed, rho, name, Pl.checksum()))
            tr = run_baseline(Pl, "adam", bcfg)
            m = metrics(P, tr.iterates[-1])
            rows.append(ResultRow("loss-robustness", seed, name, rho, "rel_w_err", m["rel_w_err"]))
            rows.append(ResultRow("loss-robustness", seed, name, rho, "clean_mse", m["clean_mse"]))
    return rows, sums


def _loss_rank(name):
    return LOSSES.index(name) if name in LOSSES else len(LOSSES)


def run_loss_robustness(config, out_dir, jobs=1):
    """Train every loss on shared data for each seed and corruption level.

    Writes ``runs.csv`` (one :class:`ResultRow` per value), ``summary.csv``
    (mean and sample std over seeds), ``checksums.csv`` (instance checksum
    of the data each loss was trained on) and the two tables
    ``table_rel_w_err.csv`` / ``table_clean_mse.csv`` (one row per loss,
    mean and std per corruption level). Returns the summary rows.
    """
    cfg = config.validate()
    os.makedirs(out_dir, exist_ok=True)
    results = _pmap(_robustness_seed, [(cfg, s) for s in cfg.seeds], jobs)
    rows = [r for res in results for r in res[0]]
    sums = [c for res in results for c in res[1]]
    rows.sort(key=lambda r: (r.seed, r.corruption, _loss_rank(r.method), r.metric))
    _write_csv(os.path.join(out_dir, "runs.csv"), RESULT_COLUMNS, [astuple_row(r) for r in rows])
    _write_csv(os.path.join(out_dir, "checksums.csv"), ("seed", "corruption", "method", "checksum"), sums)
    summary = _summaries(rows, _loss_rank)
    _write_csv(os.path.join(out_dir, "summary.csv"),
               ("method", "corruption", "metric", "n", "mean", "sample_std"), summary)
    for metric in ("rel_w_err", "clean_mse"):
        header = ["loss", "setting"]
        for c in cfg.corruption:
            header += ["mean_rho%g" % c, "std_rho%g" % c]
        table = []
        for name in ("capped",) + tuple(cfg.losses.baselines):
            if name == "capped":
                setting = "tau-q=%g mu_tau=%g" % (cfg.losses.capped_tau_quantile, cfg.losses.capped_mu_tau)
            elif name == "mse":
                setting = "none"
            else:
                setting = "scale-q=%g" % cfg.losses.scale_quantiles[name]
            line = [name, setting]
            for c in cfg.corruption:
                s = next(x for x in summary if x[0] == name and x[1] == c and x[2] == metric)
                line += [s[4], s[5]]
            table.append(line)
        _write_csv(os.path.join(out_dir, "table_%s.csv" % metric), header, table)
    return summary


def astuple_row(r):
    return (r.experiment, r.seed, r.method, r.corruption, r.metric, r.value)


# ---------------------------------------------------------------- solver comparison


def _method_names(cfg):
    return ["adam", "subgd"] + ["hippa-p%g" % v.p for v in cfg.solvers.hippa.variants]


def _hippa_config(cfg, variant):
    h = cfg.solvers.hippa
    return HippaConfig(p=variant.p, beta_min=variant.beta, beta_max=variant.beta, inner_budget=h.inner_budget,
                       inner_lr=h.inner_lr, max_retries=h.max_retries, lr_decay=h.lr_decay, max_outer=h.max_outer,
                       stop_rel_err=cfg.solvers.stop_rel_err)


def trace_name(seed, rho, method):
    return "seed%03d_rho%g_%s.csv" % (seed, rho, method)


def _compare_seed(cfg, seed, trace_dir):
    s = cfg.solvers
    rows, sums, audits, rates = [], [], [], []
    for rho in cfg.corruption:
        P = _distillation(cfg, seed, rho, cfg.problem.tau_quantile, cfg.problem.mu_tau)
        cert = QuasarCert.for_problem(P)
        runs = [("adam", lambda: run_baseline(P, "adam", BaselineConfig(s.adam.lr, s.adam.max_iter, s.stop_rel_err,
                                                                         s.log_every))),
                ("subgd", lambda: run_baseline(P, "subgrad", BaselineConfig(s.subgd.lr, s.subgd.max_iter,
                                                                            s.stop_rel_err, s.log_every)))]
        for v in s.hippa.variants:
            runs.append(("hippa-p%g" % v.p, lambda v=v: run_hippa(P, _hippa_config(cfg, v))))
        for method, run in runs:
            sums.append((seed, rho, method, P.checksum()))
            tr = run()
            f = tr.final
            reached = bool(f["rel_w_err"] <= s.stop_rel_err)
            for metric, value in (("rel_w_err", f["rel_w_err"]), ("clean_mse", f["clean_mse"]),
                                  ("clean_hkd", f["clean_hkd"]), ("grad_evals", f["grad_evals"]),
                                  ("iterations", f["k"]), ("reached", 1 if reached else 0),
                                  ("time_s", f["wall_time_s"])):
                rows.append(ResultRow("solver-compare", seed, method, rho, metric, value))
            if trace_dir is not None:
                tr.to_csv(os.path.join(trace_dir, trace_name(seed, rho, method)))
            if tr.p is not None:
                if s.audit:
                    for checker, rep in audit_hippa_trace(P, tr, cert).items():
                        audits.append((seed, rho, method, checker, rep.samples, rep.violations, rep.worst_margin,
                                       rep.tol))
                rep = rate_report(method, tr.p, tr.column("dist"))
                rates.append((seed, rho) + tuple(rep[c] for c in RATE_COLUMNS))
    return rows, sums, audits, rates


def run_solver_comparison(config, out_dir, jobs=1):
    """Run every solver on one shared instance per seed.

    Writes ``runs.csv``, ``summary.csv``, ``table3.csv`` (one row per
    method: mean and std of final rel_w_err, clean_mse, clean_hkd,
    grad_evals and time, plus the number of runs reaching the tolerance),
    ``checksums.csv``, ``audits.csv``, ``rates.csv`` and one trace CSV per
    run under ``traces/``. Returns the summary rows.
    """
    cfg = config.validate()
    os.makedirs(out_dir, exist_ok=True)
    trace_dir = None
    if cfg.output.write_traces:
        trace_dir = os.path.join(out_dir, cfg.output.traces)
        os.makedirs(trace_dir, exist_ok=True)
    results = _pmap(_compare_seed, [(cfg, sd, trace_dir) for sd in cfg.seeds], jobs)
    names = _method_names(cfg)
    rank = lambda m: names.index(m)
    rows = sorted((r for res in results for r in res[0]),
                  key=lambda r: (r.seed, r.corruption, rank(r.method), r.metric))
    _write_csv(os.path.join(out_dir, "runs.csv"), RESULT_COLUMNS, [astuple_row(r) for r in rows])
    _write_csv(os.path.join(out_dir, "checksums.csv"), ("seed", "corruption", "method", "checksum"),
               [c for res in results for c in res[1]])
    _write_csv(os.path.join(out_dir, "audits.csv"),
               ("seed", "corruption", "method", "checker", "samples", "violations", "worst_margin", "tol"),
               [a for res in results for a in res[2]])
    _write_csv(os.path.join(out_dir, "rates.csv"), ("seed", "corruption") + RATE_COLUMNS,
               [r for res in results for r in res[3]])
    summary = _summaries(rows, rank)
    _write_csv(os.path.join(out_dir, "summary.csv"),
               ("method", "corruption", "metric", "n", "mean", "sample_std"), summary)
    metrics_ = ("rel_w_err", "clean_mse", "clean_hkd", "grad_evals", "time_s")
    header = ["method", "corruption"] + [m + s for m in metrics_ for s in ("_mean", "_std")] + ["reached", "runs"]
    table = []
    for rho in cfg.corruption:
        for m in names:
            line = [m, rho]
            got = {x[2]: x for x in summary if x[0] == m and x[1] == rho}
            for metric in metrics_:
                line += [got[metric][4], got[metric][5]]
            line += [int(round(got["reached"][4] * got["reached"][3])), got["reached"][3]]
            table.append(line)
    _write_csv(os.path.join(out_dir, "table3.csv"), header, table)
    return summary


# ---------------------------------------------------------------- certification


def _cert_seed(master, i, j):
    return int(np.random.SeedSequence([int(master), i, j]).generate_state(1)[0])


def _cert_targets(cfg, name, idx):
    """``(h, subgrad, branches, cert, radius)`` for one certification problem."""
    rng = child_rng(cfg.master_seed, 1000 + idx)
    if name == "capped":
        loss = CappedLoss(1.0, 0.25)
        c = loss.quasar_constants()
        return loss.value, loss.subgrad, loss.subgrad_branches, QuasarCert(c.kappa, c.gamma, np.zeros(3)), 5.0
    if name == "aniso":
        loss = RadialAnisoLoss(1.0, 0.1)
        c = loss.quasar_constants()
        return loss.value, loss.subgrad, None, QuasarCert(c.kappa, c.gamma, np.zeros(3)), 20.0
    if name == "h_kd":
        p = cfg.problem
        P = gen_distillation(rng, N=p.N, d_s=p.d_s, d_t=p.d_t, w_scale=p.w_scale, tau_quantile=p.tau_quantile,
                             mu_tau=p.mu_tau, rho_corr=0.0, w0_scale=p.w0_scale)
        return P.value, P.subgrad, None, QuasarCert.for_problem(P), 5.0 * frobenius_norm(P.W_star - P.W0)
    if name == "stitch":
        S = gen_stitch(rng)
        return S.value, S.subgrad, None, QuasarCert.for_problem(S), 5.0 * frobenius_norm(S.anchor)
    A = {"lad": gen_lad, "multitask": gen_multitask, "matrix-sensing": gen_sensing}[name](rng)
    return A.value, A.subgrad, None, QuasarCert.for_problem(A), A.R


def _certify_problem(cfg, name):
    idx = CERT_PROBLEMS.index(name)
    h, sg, br, cert, radius = _cert_targets(cfg, name, idx)
    c = cfg.certify
    controls = [("proven", cert, c.samples), ("gamma_x%g" % c.inflate, cert.scaled(gamma_factor=c.inflate),
                                             c.control_samples)]
    if name == "capped":
        controls.append(("kappa_to_1", QuasarCert(1.0, cert.gamma, cert.anchor, cert.h_star), c.control_samples))
    out = []
    for ci, (control, qc, n) in enumerate(controls):
        for j, checker in enumerate(("interpolation", "first_order", "growth_error_bound")):
            seed = _cert_seed(cfg.master_seed, idx, 10 * ci + j)
            sampler = BallSampler(qc.anchor, radius, seed)
            if checker == "interpolation":
                rep = check_interpolation(h, qc, sampler, n, c.tol, seed)
            elif checker == "first_order":
                rep = check_first_order(h, sg, qc, sampler, n, c.tol, seed, br)
            else:
                rep = check_growth_error_bound(h, sg, qc, sampler, n, c.tol, seed, br)
            out.append((name, control, qc.kappa, qc.gamma, checker, rep.samples, rep.violations, rep.worst_margin,
                        rep.tol, seed))
    return out


def nonstar_witnesses(master_seed, trials=50, problem=None):
    """Strict violations of star-convexity, each recomputed independently.

    Returns rows ``(problem, construction, margin, check_margin)``; the
    check margin for the capped and anisotropic losses is the closed form
    (exact rational arithmetic for the capped loss), for ``h_KD`` a direct
    evaluation of the objective at the midpoint.
    """
    rng = child_rng(master_seed, 2000)
    rows = []
    tau, mu = Fraction(1), Fraction(1, 4)
    cap = CappedLoss(float(tau), float(mu))
    u = rng.standard_normal(3)
    u /= np.linalg.norm(u)
    m = cap.value(cap.tau * u) - 0.5 * cap.value(2.0 * cap.tau * u)
    rows.append(("capped", "z=2tau*u, lambda=1/2", m, float(tau / 2 - mu * tau * tau)))

    an = RadialAnisoLoss(1.0, 0.1)
    m = an.value(an.tau * u) - 0.25 * an.value(4.0 * an.tau * u)
    closed = float(default_angular_weight(u)) * an.tau * (0.5 - 3.0 * an.mu * an.tau)
    rows.append(("aniso", "z=4tau*u, lambda=3/4", m, closed))

    if problem is None:
        problem = gen_distillation(child_rng(master_seed, 2001), N=100, rho_corr=0.0)
    problem = problem.clean()
    found = nonstar_witness_search(problem, rng, trials)
    if found is None:
        rows.append(("h_kd", "median residual 2tau", float("nan"), float("nan")))
    else:
        D, margin = found
        W = problem.W_star
        direct = problem.N * (problem.value(W + 0.5 * D) - 0.5 * problem.value(W + D) - 0.5 * problem.value(W))
        rows.append(("h_kd", "median residual 2tau", margin, direct))
    return rows


def run_certification(config, out_dir, jobs=1):
    """Sampled checks of every configured problem, with falsification controls.

    ``report.csv`` has one row per (problem, control, checker). Control
    ``proven`` uses the proven constants and should show no violations;
    the inflated controls should. ``witnesses.csv`` lists the
    non-star-convexity witnesses.
    """
    cfg = config.validate()
    os.makedirs(out_dir, exist_ok=True)
    results = _pmap(_certify_problem, [(cfg, p) for p in cfg.certify.problems], jobs)
    rows = [r for res in results for r in res]
    _write_csv(os.path.join(out_dir, "report.csv"),
               ("problem", "control", "kappa", "gamma", "checker", "samples", "violations", "worst_margin", "tol",
                "seed"), rows)
    wit = nonstar_witnesses(cfg.master_seed, cfg.certify.witness_trials)
    _write_csv(os.path.join(out_dir, "witnesses.csv"), ("problem", "construction", "margin", "check_margin"), wit)
    return rows


# ---------------------------------------------------------------- rate regimes


def run_rate_regimes(master_seed=2024, seeds=(0, 1, 2), max_outer=40, problem_kw=None):
    """Proximal runs in the linear and superlinear regimes on clean instances.

    ``p = 2`` with geometric forcing (``E = 1``, ``rho = 0.8``, ``beta = 10``)
    and ``p = 3`` with distance-powered forcing (``M = 1``, ``delta = 0.5``,
    ``beta = 0.1``, small enough that the regularizer shapes the steps).
    Returns ``(rows, traces)``: rate-report rows keyed by seed and the
    traces themselves.
    """
    regimes = {
        "hippa-p2-geometric": HippaConfig(p=2.0, beta_min=10.0, beta_max=10.0,
                                          forcing=ForcingSchedule("geometric", E=1.0, rho=0.8),
                                          max_outer=max_outer, stop_rel_err=1e-12),
        "hippa-p3-power": HippaConfig(p=3.0, beta_min=0.1, beta_max=0.1,
                                      forcing=ForcingSchedule("power", M=1.0, delta=0.5),
                                      max_outer=max_outer, stop_rel_err=1e-12),
    }
    rows, traces = [], {}
    for s in seeds:
        P = gen_distillation(child_rng(master_seed, s), rho_corr=0.0, **(problem_kw or {}))
        for name, hc in regimes.items():
            tr = run_hippa(P, hc)
            traces[(s, name)] = tr
            rep = rate_report(name, hc.p, tr.column("dist"))
            rows.append((s,) + tuple(rep[c] for c in RATE_COLUMNS))
    return rows, traces


# ---------------------------------------------------------------- plot data


def _trace_groups(trace_dir):
    groups = {}
    for fn in sorted(os.listdir(trace_dir)):
        if not fn.endswith(".csv") or "_" not in fn:
            continue
        parts = fn[:-4].split("_", 2)
        if len(parts) != 3:
            continue
        groups.setdefault("%s_%s" % (parts[0], parts[1]), {})[parts[2]] = os.path.join(trace_dir, fn)
    return groups


def emit_plot_data(trace_dir, out_dir, run=None):
    """Two-column ``x,y`` series for the convergence figures.

    Uses the traces of one run (``run`` like ``"seed000_rho0.2"``; default
    the first in sorted order) and writes ``<figure>/<method>.csv`` for the
    four figures in :data:`FIGURES`. Time axes are shifted to start at 0.
    Points with a non-positive or non-finite ``y`` are dropped (the figures
    use log scales). Returns ``{figure: [methods]}``.
    """
    groups = _trace_groups(trace_dir)
    if not groups:
        raise IncompleteTrace("no trace files in %s" % trace_dir)
    run = run or sorted(groups)[0]
    if run not in groups:
        raise IncompleteTrace("no traces for run %r" % run)
    out = {}
    for method, path in sorted(groups[run].items()):
        rows = read_csv(path)
        for fig, (xc, yc) in FIGURES.items():
            if not rows or xc not in rows[0] or yc not in rows[0]:
                raise IncompleteTrace("%s lacks column %s or %s" % (path, xc, yc))
            x = np.array([float(r[xc]) for r in rows])
            y = np.array([float(r[yc]) for r in rows])
            if xc == "wall_time_s":
                x = x - x[0]
            ok = np.isfinite(x) & np.isfinite(y) & (y > 0)
            d = os.path.join(out_dir, fig)
            os.makedirs(d, exist_ok=True)
            _write_csv(os.path.join(d, method + ".csv"), ("x", "y"), zip(x[ok].tolist(), y[ok].tolist()))
            out.setdefault(fig, []).append(method)
    return out
