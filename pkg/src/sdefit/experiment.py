"""Monte Carlo harness for the consistency and CLT statements.

Replication ``r`` at grid index ``e`` draws its noise from stream
``stream_id(e, r)`` under key ``seed_base``; results are gathered in index
order, so the report does not depend on the number of worker threads.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import stats

from .asymptotics import (
    affine_drift_clt_covariance,
    diffusion_clt_covariance,
    drift_clt_covariance,
    ou_coefficients,
    stationary_draws,
)
from .core import Form1, Form2, ModelSpec, Parameter, ScalingRegime, affine_coefficients, eval_a
from .diffusion import estimate_diffusion, estimate_from_moments
from .drift import PenaltySpec, amle_kron, amle_linear, amle_linear_moments, amle_newton
from .core import LinearDriftKron
from .exceptions import SDEFitError, ValidationError
from .linalg import vec
from .rng import stream_id
from .simulate import SimConfig, euler_maruyama, exact_ou, exact_ou_moments

ESTIMATORS = ("drift_linear", "drift_newton", "diff_form1", "diff_form2")
FAILURE_LIMIT = 0.01
KS_LEVEL = 0.01
TOLERANCE_NOTE = (
    "Covariance tolerances are engineering choices calibrated by pilot runs; "
    "the limit theorems give no rate for covariance convergence."
)


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything that determines an experiment's output.

    ``model_name`` / ``model_params`` only serve serialization; the model
    itself is ``model``.
    """

    model: ModelSpec
    theta0: Parameter
    epsilon_grid: tuple
    gap_exponent: float = 1.5
    replications: int = 400
    estimator: str = "drift_linear"
    seed_base: int = 0
    use_exact_ou: bool = True
    substeps: int = 16
    x0: Optional[tuple] = None
    allow_regime_violation: bool = False
    oracle_vartheta: bool = False
    penalty: Optional[PenaltySpec] = None
    fast_path: bool = True
    bootstrap: int = 200
    stationary_n: int = 20000
    model_name: str = "custom"
    model_params: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = tuple(float(e) for e in np.atleast_1d(self.epsilon_grid))
        object.__setattr__(self, "epsilon_grid", grid)
        if not grid or any(not 0 < e <= 1 for e in grid):
            raise ValidationError("epsilon_grid entries must lie in (0, 1]")
        if any(b >= a for a, b in zip(grid, grid[1:])):
            raise ValidationError("epsilon_grid must be strictly decreasing")
        if self.estimator not in ESTIMATORS:
            raise ValidationError(f"estimator must be one of {ESTIMATORS}")
        if int(self.replications) < 2:
            raise ValidationError("replications must be >= 2")
        if len(grid) > 2048 or int(self.replications) > 2**21:
            raise ValidationError("at most 2048 grid points and 2**21 replications")
        if self.x0 is not None:
            object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))

    @property
    def is_drift(self):
        return self.estimator.startswith("drift")

    def regimes(self):
        return [ScalingRegime.from_exponent(e, self.gap_exponent) for e in self.epsilon_grid]

    def check_regime(self, kind):
        """Rate conditions: gap -> 0 for consistency, gap / eps -> 0 for the CLTs."""
        g = self.gap_exponent
        ok = g > 0 if kind == "consistency" else g > 1
        if not ok and not self.allow_regime_violation:
            need = "gap_exponent > 0" if kind == "consistency" else "gap_exponent > 1"
            raise ValidationError(f"{kind} run needs {need}; set allow_regime_violation for a negative control")

    def to_dict(self):
        return {
            "model": {"name": self.model_name, "params": _jsonable(self.model_params)},
            "theta0": {"mu": self.theta0.mu.tolist(), "vartheta": self.theta0.vartheta.tolist()},
            "epsilon_grid": list(self.epsilon_grid),
            "gap_exponent": self.gap_exponent,
            "replications": int(self.replications),
            "estimator": self.estimator,
            "seed_base": int(self.seed_base),
            "use_exact_ou": self.use_exact_ou,
            "substeps": int(self.substeps),
            "x0": None if self.x0 is None else list(self.x0),
            "allow_regime_violation": self.allow_regime_violation,
            "oracle_vartheta": self.oracle_vartheta,
            "penalty": None if self.penalty is None else {"alpha": self.penalty.alpha, "p": self.penalty.p},
            "fast_path": self.fast_path,
            "bootstrap": int(self.bootstrap),
            "stationary_n": int(self.stationary_n),
        }

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, allow_nan=False).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class ExperimentReport:
    kind: str
    plan: dict
    rows: list
    diagnostics: dict
    metadata: dict
    raw: list
    wall_time: float = 0.0

    def row(self, i):
        return self.rows[i]

    def to_dict(self):
        return _jsonable({"kind": self.kind, "plan": self.plan, "rows": self.rows,
                          "diagnostics": self.diagnostics, "metadata": self.metadata})

    def write(self, out_dir):
        """Write report.json, summary.csv, raw_estimates.csv and timing.json."""
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, allow_nan=False)
            fh.write("\n")
        cols = ["epsilon", "gap", "m", "bias", "rmse", "cov_frob_err", "ks_stat", "failures"]
        with open(os.path.join(out_dir, "summary.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in self.rows:
                w.writerow([_cell(r.get(c)) for c in cols])
        with open(os.path.join(out_dir, "raw_estimates.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            k = max((len(r["estimate"]) for r in self.raw if r["estimate"] is not None), default=0)
            w.writerow(["epsilon_index", "epsilon", "replication", "stream", "ok", "reason"]
                       + [f"est{j + 1}" for j in range(k)])
            for r in self.raw:
                est = r["estimate"] if r["estimate"] is not None else [None] * k
                w.writerow([r["epsilon_index"], _cell(r["epsilon"]), r["replication"], r["stream"],
                            int(r["ok"]), r["reason"]] + [_cell(v) for v in est])
        # wall time lives apart so that report.json stays bit-reproducible
        with open(os.path.join(out_dir, "timing.json"), "w", encoding="utf-8") as fh:
            json.dump({"wall_time_s": self.wall_time}, fh)
            fh.write("\n")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else ""
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


# per-replication work --------------------------------------------------------


class _Runner:
    """Pre-computed, read-only pieces shared by all replications of a plan."""

    def __init__(self, plan):
        self.plan = plan
        model, theta0 = plan.model, plan.theta0
        self.d = model.dim_state
        self.form = model.diffusion_form
        if plan.estimator == "diff_form1" and not isinstance(self.form, Form1):
            raise ValidationError("diff_form1 needs a model with a Form1 diffusion")
        if plan.estimator == "diff_form2" and not isinstance(self.form, Form2):
            raise ValidationError("diff_form2 needs a model with a Form2 diffusion")
        if plan.is_drift and not plan.oracle_vartheta and not isinstance(self.form, (Form1, Form2)):
            raise ValidationError("plug-in vartheta needs a Form1/Form2 model; use oracle_vartheta")
        if plan.estimator == "drift_linear" and model.structure is None:
            raise ValidationError("drift_linear needs a linear drift structure")
        self.ou = None
        if plan.use_exact_ou and model.ou is not None:
            gh = ou_coefficients(model, theta0.mu)
            if gh is None:
                raise ValidationError("OU-tagged model has a drift that is not affine in x")
            self.ou = (gh[0], gh[1], eval_a(model, theta0.vartheta, np.zeros(self.d)))
        if plan.x0 is not None:
            self.x0 = np.array(plan.x0)
        elif self.ou is not None:
            self.x0 = np.linalg.solve(self.ou[1], self.ou[0])
        else:
            self.x0 = np.zeros(self.d)
        if self.x0.size != self.d:
            raise ValidationError("x0 has the wrong dimension")
        self.coef = None
        if (plan.fast_path and self.ou is not None and model.structure is not None
                and model.state_independent_diffusion and plan.estimator != "drift_newton"
                and _constant_shape(self.form, self.d)):
            self.coef = affine_coefficients(model.B0, self.d)
        if plan.is_drift:
            self.target = theta0.mu.copy()
        else:
            self.target = vec(theta0.vartheta)

    def config(self, e, r, regime):
        K = 1 if self.ou is not None else int(self.plan.substeps)
        return SimConfig(self.x0, regime, K, self.plan.seed_base, "original", stream_id(e, r))

    def __call__(self, task):
        e, r, regime = task
        plan = self.plan
        cfg = self.config(e, r, regime)
        out = {"epsilon_index": e, "epsilon": regime.epsilon, "replication": r, "stream": cfg.stream,
               "ok": False, "reason": "", "estimate": None, "raw": None}
        try:
            if self.coef is not None:
                est, raw = self._fast(cfg)
            else:
                est, raw = self._record(cfg)
            if not np.all(np.isfinite(est)):
                raise ValidationError("non-finite estimate")
            out.update(ok=True, reason="ok", estimate=est, raw=raw)
        except SDEFitError as exc:
            out["reason"] = type(exc).__name__
        return out

    def _plugin(self, fit):
        if self.plan.oracle_vartheta:
            return self.plan.theta0.vartheta
        return Parameter(self.plan.theta0.mu, fit.sym).vartheta

    def _fast(self, cfg):
        g, H, a = self.ou
        mom = exact_ou_moments(g, H, a, cfg)
        fit = estimate_from_moments(mom, self.form, self.x0) if isinstance(self.form, (Form1, Form2)) else None
        if not self.plan.is_drift:
            return vec(fit.sym), vec(fit.raw)
        a_hat = eval_a(self.plan.model, self._plugin(fit), self.x0)
        mu_hat, _ = amle_linear_moments(mom, self.coef, a_hat)
        return mu_hat, None

    def _record(self, cfg):
        plan = self.plan
        if self.ou is not None:
            g, H, a = self.ou
            rec = exact_ou(g, H, a, cfg)
        else:
            rec = euler_maruyama(plan.model, plan.theta0, cfg)
        fit = estimate_diffusion(rec, plan.model) if isinstance(self.form, (Form1, Form2)) else None
        if not plan.is_drift:
            return vec(fit.sym), vec(fit.raw)
        vt = self._plugin(fit)
        if plan.estimator == "drift_newton":
            res = amle_newton(rec, plan.model, vt, plan.penalty)
            if not res.converged:
                raise ValidationError(f"Newton did not converge ({res.reason})")
        elif isinstance(plan.model.structure, LinearDriftKron):
            res = amle_kron(rec, plan.model, vt)
        else:
            res = amle_linear(rec, plan.model, vt)
        return res.mu_hat, None


def _constant_shape(form, d):
    if isinstance(form, Form1):
        fn = form.a0
    elif isinstance(form, Form2):
        fn = form.sigma0
    else:
        return False
    C = affine_coefficients(fn, d)
    return C is not None and not np.any(C[1:])


def _simulate(plan, threads):
    runner = _Runner(plan)
    regimes = plan.regimes()
    tasks = [(e, r, reg) for e, reg in enumerate(regimes) for r in range(int(plan.replications))]
    threads = max(1, int(threads or 1))
    if threads == 1:
        results = [runner(t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(runner, tasks))
    return runner, regimes, results


# statistics ------------------------------------------------------------------


def _basic_row(plan, regime, results, target):
    R = len(results)
    ok = [r for r in results if r["ok"]]
    failures = R - len(ok)
    row = {
        "epsilon": regime.epsilon,
        "gap": regime.gap,
        "m": regime.m,
        "scaled_gap": regime.scaled_gap,
        "replications": R,
        "failures": failures,
        "failure_reasons": sorted({r["reason"] for r in results if not r["ok"]}),
        "valid": failures <= FAILURE_LIMIT * R,
    }
    if len(ok) < 2:
        row["valid"] = False
        return row, None
    est = np.array([r["estimate"] for r in ok])
    err = est - target
    n = err.shape[0]
    sq = np.sum(err**2, axis=1)
    mse = sq.mean()
    rmse = float(np.sqrt(mse))
    bias_vec = err.mean(axis=0)
    bias_se = err.std(axis=0, ddof=1) / np.sqrt(n)
    row.update({
        "bias": float(np.linalg.norm(bias_vec)),
        "bias_se": float(np.sqrt(np.sum(bias_se**2))),
        "bias_vector": bias_vec,
        "bias_vector_se": bias_se,
        "rmse": rmse,
        "rmse_se": float(sq.std(ddof=1) / np.sqrt(n) / (2 * rmse)) if rmse > 0 else 0.0,
        "mean_estimate": est.mean(axis=0),
    })
    return row, err


def _vech_index(d):
    # column-major positions of the lower triangle (diagonal included)
    return np.array([j * d + i for j in range(d) for i in range(j, d)])


def _clt_stats(std, theo):
    n, k = std.shape
    emp = np.atleast_2d(np.cov(std.T, ddof=1))
    frob = float(np.linalg.norm(emp - theo) / np.linalg.norm(theo))
    D2 = np.einsum("ni,ij,nj->n", std, np.linalg.inv(theo), std)
    ks = float(stats.kstest(D2, "chi2", args=(k,)).statistic)
    return emp, frob, ks


def _add_clt(row, err, scale, theo, idx, boot, seed):
    std = scale * err[:, idx]
    theo = theo[np.ix_(idx, idx)]
    emp, frob, ks = _clt_stats(std, theo)
    n = std.shape[0]
    ratio = np.diag(emp) / np.diag(theo)
    fb, kb, rb = [], [], []
    rng = np.random.default_rng(seed)
    for _ in range(int(boot)):
        pick = rng.integers(0, n, n)
        e_b, f_b, k_b = _clt_stats(std[pick], theo)
        fb.append(f_b)
        kb.append(k_b)
        rb.append(np.diag(e_b) / np.diag(theo))
    row.update({
        "standardization": float(scale),
        "theoretical_covariance": theo,
        "empirical_covariance": emp,
        "cov_frob_err": frob,
        "cov_frob_err_se": float(np.std(fb, ddof=1)) if boot > 1 else None,
        "variance_ratio": ratio,
        "variance_ratio_se": np.std(rb, axis=0, ddof=1) if boot > 1 else None,
        "ks_stat": ks,
        "ks_stat_se": float(np.std(kb, ddof=1)) if boot > 1 else None,
        "ks_critical_1pct": float(stats.kstwo.ppf(1 - KS_LEVEL, n)),
        "mahalanobis_dof": int(std.shape[1]),
    })
    row["ks_pass"] = row["ks_stat"] < row["ks_critical_1pct"]


def _decay(plan, rows):
    out = {"steps": []}
    usable = [r for r in rows if "rmse" in r]
    if len(usable) != len(rows) or len(rows) < 2:
        out["complete"] = False
        return out
    for a, b in zip(rows, rows[1:]):
        # predicted RMSE ratio: sqrt(eps) for the drift, sqrt(eps * gap) = sqrt(1/m) for vartheta
        theory = np.sqrt(a["epsilon"] / b["epsilon"]) if plan.is_drift else np.sqrt(b["m"] / a["m"])
        ratio = a["rmse"] / b["rmse"] if b["rmse"] > 0 else np.inf
        z = (a["rmse"] - b["rmse"]) / np.hypot(a["rmse_se"], b["rmse_se"])
        out["steps"].append({
            "from_epsilon": a["epsilon"],
            "to_epsilon": b["epsilon"],
            "rmse_ratio": float(ratio),
            "theory_ratio": float(theory),
            "ratio_vs_theory": float(ratio / theory),
            "z": float(z),
        })
    eps = np.array([r["epsilon"] for r in rows])
    rmse = np.array([r["rmse"] for r in rows])
    slope = np.polyfit(np.log(eps), np.log(rmse), 1)[0] if np.all(rmse > 0) else float("nan")
    out.update({
        "complete": True,
        "strictly_decreasing_2se": all(s["z"] > 2 for s in out["steps"]),
        "rate_within_1p5": all(1 / 1.5 <= s["ratio_vs_theory"] <= 1.5 for s in out["steps"]),
        "loglog_slope": float(slope),
        "final_over_first_rmse": float(rmse[-1] / rmse[0]),
        "final_bias_z": float(rows[-1]["bias"] / rows[-1]["bias_se"]) if rows[-1]["bias_se"] > 0 else None,
    })
    return out


def _theory(plan, regimes):
    """Theoretical covariance of the standardized statistic and its description."""
    model, theta0 = plan.model, plan.theta0
    if plan.is_drift:
        clt = affine_drift_clt_covariance(model, theta0) if model.ou is not None else None
        source = "exact_stationary_moments"
        if clt is None:
            sample = stationary_draws(model, theta0, plan.stationary_n, plan.seed_base)
            clt = drift_clt_covariance(model, theta0, sample)
            source = sample.source
        return clt.covariance, {"Sigma": clt.sigma, "Sigma_se": clt.sigma_se,
                                "covariance": clt.covariance, "source": source}
    sample = stationary_draws(model, theta0, plan.stationary_n, plan.seed_base)
    law = diffusion_clt_covariance(model.diffusion_form, theta0.vartheta, sample)
    info = law.to_dict()
    info["vec_covariance_sym"] = law.vec_covariance_sym
    info["source"] = sample.source
    return law.vec_covariance_sym, info


def _run(plan, kind, threads):
    plan.check_regime(kind)
    t0 = time.perf_counter()
    runner, regimes, results = _simulate(plan, threads)
    R = int(plan.replications)
    rows = []
    theo = info = None
    if kind == "clt":
        theo, info = _theory(plan, regimes)
    d = plan.model.dim_state
    idx = np.arange(runner.target.size) if plan.is_drift else _vech_index(d)
    for e, reg in enumerate(regimes):
        chunk = results[e * R:(e + 1) * R]
        row, err = _basic_row(plan, reg, chunk, runner.target)
        if kind == "clt" and err is not None:
            scale = 1 / np.sqrt(reg.epsilon) if plan.is_drift else 1 / np.sqrt(reg.scaled_gap)
            _add_clt(row, err, scale, theo, idx, plan.bootstrap, [int(plan.seed_base), e])
        rows.append(row)
    raw = []
    for res in results:
        est = res["raw"] if res["raw"] is not None else res["estimate"]
        raw.append({k: res[k] for k in ("epsilon_index", "epsilon", "replication", "stream", "ok", "reason")}
                   | {"estimate": None if est is None else [float(v) for v in est]})
    meta = {
        "config_hash": plan.config_hash(),
        "tolerance_note": TOLERANCE_NOTE,
        "failure_limit": FAILURE_LIMIT,
        "fast_path": runner.coef is not None,
        "simulator": "exact_ou" if runner.ou is not None else f"euler(K={plan.substeps})",
        "target": runner.target,
        "valid": all(r["valid"] for r in rows),
    }
    if info is not None:
        meta["theory"] = info
    diagnostics = _decay(plan, rows)
    report = ExperimentReport(kind, plan.to_dict(), rows, diagnostics, meta, raw)
    report.wall_time = time.perf_counter() - t0
    return report


def run_consistency(plan, threads=1):
    """RMSE/bias along the epsilon grid with a standard-error-aware decay diagnostic."""
    return _run(plan, "consistency", threads)


def run_clt(plan, threads=1):
    """Standardized-estimate covariance and Mahalanobis/chi-square KS per epsilon."""
    return _run(plan, "clt", threads)


def with_overrides(plan, **kw):
    return replace(plan, **kw)
