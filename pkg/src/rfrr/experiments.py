"""Sweeps, figure presets and the ``rfrr`` command line.

A run is described by one JSON document (see ``ExperimentConfig``).  Every
sweep writes a CSV with a fixed column set plus a sidecar ``.json`` holding
the resolved configuration.  Nothing time- or host-dependent is written, so
the same config and seed give byte-identical output.
"""
import argparse
import csv
from dataclasses import dataclass, field, asdict, replace
import json
import math
import os
from pathlib import Path
import sys
import time

import numpy as np
from scipy import integrate, stats

from . import __version__
from .errors import NumericalError, ValidationError
from .fixed_point import (PATH_AGREE, RESIDUAL_CERT, singular_value_density, tau_by_newton,
                          tau_by_nu, tau_closed_form, tau_residuals)
from .simulator import (SimulationSetup, exact_test_error, build_features, fit_rfrr,
                        make_dataset, run_trials)
from .special_functions import (gegenbauer_basis, sample_sphere, subspace_dim_float,
                                tau_quadrature)
from .spectral_decomposition import (ActivationModel, NoiseModel, TargetModel, derive_scalars,
                                     target_frequencies)
from .theory import (classify, critical_factors, overparam_factors, predict, predict_overparam,
                     regime_from_counts, underparam_factors)

COLUMNS = [
    "sweep_var", "sweep_value", "d", "n", "p", "lambda", "ell", "regime",
    "theory_Rtest", "theory_Rtrain", "theory_Lnorm", "theory_Btest", "theory_Vtest",
    "theory_alpha_c", "stair_gt_km1", "stair_gt_k",
    "emp_Rtest_mean", "emp_Rtest_se", "emp_Rtrain_mean", "emp_Rtrain_se",
    "emp_Lnorm_mean", "emp_Lnorm_se", "emp_gcv_mean", "emp_gcv_se", "trials", "base_seed",
]
# appended after the fixed set; same for every run
EXTRA_COLUMNS = ["theory_bias", "theory_variance", "theory_krr_Rtest", "theory_krr_Lnorm",
                 "emp_Rtest_std", "emp_Rtrain_std", "norm_convention", "convention", "rho2"]

SWEEP_VARS = ("p", "n", "lambda", "psi1", "psi2", "theta1", "theta2", "kappa1", "snr")
DEFAULT_COUNT = 16


# ---------------------------------------------------------------------------
# configuration

@dataclass
class ExperimentConfig:
    activation: object
    target: object
    kappa1: float = 2.0
    kappa2: float = 2.0
    theta1: float = 1.0
    theta2: float = 1.0
    d: int = None
    n: int = None
    p: int = None
    noise_variance: float = 0.0
    lam: float = 1.0
    lambdas: list = None          # optional outer loop over lambda
    sweep: dict = None            # {variable, grid, min, max, count}
    trials: int = 0
    base_seed: int = 0
    convention: str = None        # finite_d | hermite_limit | None (auto)
    model: str = "rf"
    max_degree: int = None
    output: str = None
    label: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("kappa1", "kappa2", "theta1", "theta2"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if not self.lam >= 1e-8:
            raise ValidationError("lambda must be >= 1e-8")
        if self.noise_variance < 0:
            raise ValidationError("noise_variance must be >= 0")
        if self.trials < 0:
            raise ValidationError("trials must be >= 0 (0 = theory only)")
        if self.convention not in (None, "finite_d", "hermite_limit"):
            raise ValidationError(f"unknown convention {self.convention!r}")
        if self.model not in ("rf", "krr", "gaussian"):
            raise ValidationError(f"unknown model {self.model!r}")
        if self.d is not None and self.d < 2:
            raise ValidationError("d must be >= 2")
        if self.trials > 0 and self.d is None:
            raise ValidationError("simulation needs an explicit dimension d")
        for lam in self.lambdas or ():
            if not lam >= 1e-8:
                raise ValidationError("lambda must be >= 1e-8")
        if self.sweep is not None:
            s = self.sweep
            if s.get("variable") not in SWEEP_VARS:
                raise ValidationError(f"sweep variable must be one of {SWEEP_VARS}")
            if s.get("grid", "log") not in ("log", "linear"):
                raise ValidationError("sweep grid must be 'log' or 'linear'")
            lo, hi = s.get("min"), s.get("max")
            if lo is None or hi is None or not (lo > 0 and hi > 0):
                raise ValidationError("sweep bounds must be positive")
            if lo > hi:
                raise ValidationError("sweep min must not exceed max")
            if int(s.get("count", DEFAULT_COUNT)) < 1:
                raise ValidationError("sweep count must be >= 1")
            if s["variable"] in ("n", "p") and self.d is None:
                raise ValidationError("sweeping n or p needs an explicit dimension d")
            if s["variable"] == "lambda" and hi < 1e-8:
                raise ValidationError("lambda must be >= 1e-8")

    @classmethod
    def from_dict(cls, raw):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(raw) - known
        if extra:
            raise ValidationError(f"unknown config keys: {sorted(extra)}")
        if "activation" not in raw or "target" not in raw:
            raise ValidationError("config needs 'activation' and 'target'")
        return cls(**raw)

    @classmethod
    def load(cls, path):
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self):
        return asdict(self)


def sweep_values(sweep):
    if sweep is None:
        return [None]
    lo, hi = float(sweep["min"]), float(sweep["max"])
    count = int(sweep.get("count", DEFAULT_COUNT))
    if count == 1:
        return [lo]
    if sweep.get("grid", "log") == "log":
        return list(np.geomspace(lo, hi, count))
    return list(np.linspace(lo, hi, count))


# ---------------------------------------------------------------------------
# grid points

@dataclass
class Point:
    kappa1: float
    kappa2: float
    theta1: float
    theta2: float
    lam: float
    rho2: float
    d: int = None
    n: int = None
    p: int = None


def _level(kappa):
    k = round(kappa)
    return int(k) if abs(kappa - k) < 1e-12 else int(math.ceil(kappa))


def resolve_point(cfg, value, lam=None, norm2=None):
    """Apply one sweep value to the base configuration."""
    pt = Point(cfg.kappa1, cfg.kappa2, cfg.theta1, cfg.theta2,
               cfg.lam if lam is None else lam, cfg.noise_variance, cfg.d, cfg.n, cfg.p)
    d = pt.d
    if d is not None:
        if pt.n is not None:
            pt.theta2 = pt.n / d ** pt.kappa2
        if pt.p is not None:
            pt.theta1 = pt.p / d ** pt.kappa1
    var = cfg.sweep["variable"] if cfg.sweep else None
    if var == "p":
        pt.theta1 = value / d ** pt.kappa1
    elif var == "n":
        pt.theta2 = value / d ** pt.kappa2
    elif var == "lambda":
        pt.lam = value
    elif var in ("psi1", "psi2"):
        kap = pt.kappa1 if var == "psi1" else pt.kappa2
        ell = _level(min(pt.kappa1, pt.kappa2))
        if abs(kap - ell) > 1e-12:
            raise ValidationError(f"{var} is only defined when its exponent equals the level {ell}")
        th = value / math.factorial(ell)
        if var == "psi1":
            pt.theta1 = th
        else:
            pt.theta2 = th
    elif var == "theta1":
        pt.theta1 = value
    elif var == "theta2":
        pt.theta2 = value
    elif var == "kappa1":
        pt.kappa1 = value
    elif var == "snr":
        pt.rho2 = norm2 / value
    if d is not None:
        pt.p = max(1, int(round(pt.theta1 * d ** pt.kappa1)))
        pt.n = max(1, int(round(pt.theta2 * d ** pt.kappa2)))
    return pt


class Models:
    """Activation/target models, one per dimension (None = no dimension)."""

    def __init__(self, cfg):
        self.cfg = cfg
        self._cache = {}

    def get(self, d):
        if d not in self._cache:
            act = ActivationModel(self.cfg.activation, dim=d, max_degree=self.cfg.max_degree)
            tgt = TargetModel(self.cfg.target, dim=d)
            self._cache[d] = (act, tgt)
        return self._cache[d]

    def convention(self, d):
        if self.cfg.convention:
            return self.cfg.convention
        # with an explicit d, monomial specs are converted to the degree-d
        # Gegenbauer basis before use, so the finite-d coefficients apply
        return "finite_d" if d is not None else self.get(d)[0].default_convention


def _regime(pt):
    if pt.d is not None:
        return regime_from_counts(pt.d, pt.n, pt.p, pt.kappa1, pt.kappa2)
    return classify(pt.kappa1, pt.kappa2, pt.theta1, pt.theta2)


def _krr(pt, act, tgt_coeffs, conv):
    """KRR (p = infinity) prediction at the same n; (R_test, L_norm)."""
    ell = _level(pt.kappa2)
    if ell < 1:
        ell = 1
    reg = classify(pt.kappa2 + 1, pt.kappa2, 1.0, pt.theta2)
    if pt.d is not None:
        reg.psi2 = pt.n * math.factorial(reg.ell) / float(pt.d) ** reg.ell
    try:
        sc = derive_scalars(act, reg.ell, pt.lam, conv)
    except ValidationError:
        return math.nan, math.nan
    fr = target_frequencies(tgt_coeffs, reg.ell)
    out = predict_overparam(reg, sc.zeta, sc.lam_bar, fr.F_ell, fr.F_gt2, pt.rho2, sc.mu_gt2)
    return out.R_test, out.L_norm


def theory_point(pt, models):
    act, tgt = models.get(pt.d)
    conv = models.convention(pt.d)
    reg = _regime(pt)
    sc = derive_scalars(act, reg.ell, pt.lam, conv)
    coeffs = tgt.coefficients(conv)
    fr = target_frequencies(coeffs, reg.ell)
    pred = predict(reg, sc, fr, pt.rho2)
    krr_R, krr_L = _krr(pt, act, coeffs, conv)
    return reg, fr, pred, (krr_R, krr_L), conv


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def run_config(cfg, trials=None, threads=1, progress=None):
    """All rows of a sweep (theory, plus empirical columns when trials > 0)."""
    trials = cfg.trials if trials is None else trials
    if trials > 0 and cfg.d is None:
        raise ValidationError("simulation needs an explicit dimension d")
    models = Models(cfg)
    norm2 = None
    if cfg.sweep and cfg.sweep["variable"] == "snr":
        _, tgt = models.get(cfg.d)
        c = tgt.coefficients(models.convention(cfg.d))
        norm2 = float(np.dot(c, c))
    rows = []
    lambdas = cfg.lambdas or [cfg.lam]
    var = cfg.sweep["variable"] if cfg.sweep else ""
    for lam in lambdas:
        for value in sweep_values(cfg.sweep):
            pt = resolve_point(cfg, value, lam=lam, norm2=norm2)
            reg, fr, pred, krr, conv = theory_point(pt, models)
            row = {c: None for c in COLUMNS + EXTRA_COLUMNS}
            row.update(
                sweep_var=var, sweep_value=value, d=pt.d, n=pt.n, p=pt.p, ell=reg.ell,
                regime=reg.tag, theory_Rtest=pred.R_test, theory_Rtrain=pred.R_train,
                theory_Lnorm=pred.L_norm, theory_Btest=pred.B_test, theory_Vtest=pred.V_test,
                theory_alpha_c=pred.alpha_c, stair_gt_km1=fr.stair_at(reg.ell - 1),
                stair_gt_k=fr.stair_at(reg.ell), theory_bias=pred.bias,
                theory_variance=pred.variance, theory_krr_Rtest=krr[0], theory_krr_Lnorm=krr[1],
                norm_convention=pred.norm_convention, convention=conv, rho2=pt.rho2,
                trials=trials, base_seed=cfg.base_seed)
            row["lambda"] = pt.lam
            if trials > 0:
                act, tgt = models.get(pt.d)
                setup = SimulationSetup(pt.d, pt.n, pt.p, act, tgt, NoiseModel(pt.rho2), pt.lam,
                                        model=cfg.model, norm_convention=pred.norm_convention)
                agg = run_trials(setup, trials, cfg.base_seed, threads=threads)
                m, se, sd = agg.mean, agg.stderr, agg.std
                row.update(emp_Rtest_mean=m["test_error"], emp_Rtest_se=se["test_error"],
                           emp_Rtrain_mean=m["train_error"], emp_Rtrain_se=se["train_error"],
                           emp_Lnorm_mean=m["norm_stat"], emp_Lnorm_se=se["norm_stat"],
                           emp_gcv_mean=m["gcv_stat"], emp_gcv_se=se["gcv_stat"],
                           emp_Rtest_std=sd["test_error"], emp_Rtrain_std=sd["train_error"])
            rows.append(row)
            if progress:
                progress(row)
    return rows


def write_csv(rows, path, columns=None):
    columns = columns or COLUMNS + EXTRA_COLUMNS
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    return path


def write_sidecar(path, payload):
    side = Path(str(path) + ".json")
    side.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return side


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _emit(cfg, rows, out, extra=None):
    write_csv(rows, out)
    payload = {"config": cfg.to_dict(), "version": __version__,
               "conventions": sorted({r["convention"] for r in rows}),
               "norm_conventions": sorted({r["norm_convention"] for r in rows}),
               "regimes": sorted({r["regime"] for r in rows})}
    if extra:
        payload.update(extra)
    write_sidecar(out, payload)


def cmd_predict(cfg, out=None):
    rows = run_config(cfg, trials=0)
    if out:
        _emit(cfg, rows, out)
    return rows


def cmd_simulate(cfg, out=None, trials=None, threads=1):
    rows = run_config(cfg, trials=trials, threads=threads)
    if out:
        _emit(replace(cfg, trials=cfg.trials if trials is None else trials), rows, out)
    return rows


# ---------------------------------------------------------------------------
# spectra

def ks_distance(a, b):
    return float(stats.ks_2samp(a, b).statistic)


def density_cdf(grid, rho):
    cdf = integrate.cumulative_trapezoid(rho, grid, initial=0.0)
    return cdf


def cdf_deviation(samples, grid, cdf):
    """sup |F_emp - F_theory| over the grid and the sample points."""
    s = np.sort(np.asarray(samples))
    emp_at_grid = np.searchsorted(s, grid, side="right") / len(s)
    dev = np.abs(emp_at_grid - cdf).max()
    # left limits at the grid points as well, so jumps are not missed
    emp_left = np.searchsorted(s, grid, side="left") / len(s)
    return float(max(dev, np.abs(emp_left - cdf).max()))


@dataclass
class SpectraResult:
    edges: np.ndarray
    rf_mass: np.ndarray
    ge_mass: np.ndarray
    density_centers: np.ndarray
    density_mass: np.ndarray
    ks: float
    cdf_dev_rf: float
    cdf_dev_ge: float
    rf_samples: np.ndarray = field(repr=False, default=None)
    ge_samples: np.ndarray = field(repr=False, default=None)
    aggregates: dict = field(repr=False, default_factory=dict)


def spectra(cfg, trials=1, threads=1, bins=64, eta=1e-3, grid_points=4000):
    """Pooled singular values of Z and Z_G, 64-bin histograms, theory density."""
    if cfg.d is None:
        raise ValidationError("spectra needs an explicit dimension d")
    trials = max(1, trials)
    models = Models(cfg)
    pt = resolve_point(cfg, None)
    act, tgt = models.get(pt.d)
    conv = models.convention(pt.d)
    reg = _regime(pt)
    out, aggs = {}, {}
    for model in ("rf", "gaussian"):
        setup = SimulationSetup(pt.d, pt.n, pt.p, act, tgt, NoiseModel(pt.rho2), pt.lam,
                                model=model, keep_singular_values=True)
        agg = aggs[model] = run_trials(setup, trials, cfg.base_seed, threads=threads)
        out[model] = np.concatenate([r.singular_values for r in agg.records])
    rf, ge = out["rf"], out["gaussian"]
    coeffs, tail = act.coefficients(conv)
    ell = reg.ell
    top = 1.05 * max(rf.max(), ge.max())
    grid = np.linspace(0.0, top, grid_points)
    rho = singular_value_density(reg.psi1, reg.psi2, float(coeffs[ell]),
                                 math.sqrt(float(tail[ell])), reg.psi1 + reg.psi2, grid, eta)
    if not np.all(np.isfinite(rho)):
        raise NumericalError("theoretical density is not finite on the grid")
    cdf = density_cdf(grid, rho)
    edges = np.linspace(0.0, top, bins + 1)
    rf_mass = np.histogram(rf, edges)[0] / len(rf)
    ge_mass = np.histogram(ge, edges)[0] / len(ge)
    th_mass = np.diff(np.interp(edges, grid, cdf))
    return SpectraResult(edges, rf_mass, ge_mass, 0.5 * (edges[1:] + edges[:-1]), th_mass,
                         ks_distance(rf, ge), cdf_deviation(rf, grid, cdf),
                         cdf_deviation(ge, grid, cdf), rf, ge, aggs)


def cmd_spectra(cfg, out=None, trials=None, threads=1):
    res = spectra(cfg, trials=cfg.trials if trials is None else trials, threads=threads)
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "center", "rf_mass", "gaussian_mass", "theory_mass"])
            for i in range(len(res.rf_mass)):
                w.writerow([_fmt(res.edges[i]), _fmt(res.edges[i + 1]),
                            _fmt(res.density_centers[i]), _fmt(res.rf_mass[i]),
                            _fmt(res.ge_mass[i]), _fmt(res.density_mass[i])])
        write_sidecar(path, {"config": cfg.to_dict(), "version": __version__,
                             "ks_rf_vs_gaussian": res.ks, "cdf_dev_rf": res.cdf_dev_rf,
                             "cdf_dev_gaussian": res.cdf_dev_ge,
                             "test_error": {m: {"mean": a.mean["test_error"],
                                                "stderr": a.stderr["test_error"]}
                                            for m, a in res.aggregates.items()},
                             "samples": {"rf": len(res.rf_samples), "gaussian": len(res.ge_samples)}})
    return res


# ---------------------------------------------------------------------------
# verify

@dataclass
class Check:
    name: str
    passed: bool
    observed: float
    expected: str
    details: dict = field(default_factory=dict)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: observed {self.observed:.3g}, expected {self.expected}"


def check_path_equivalence(mutate=False):
    """Both tau routes on the certification grid; worst gap and residual."""
    worst_gap = worst_res = 0.0
    failures = []
    t0 = time.perf_counter()
    for p1 in (0.25, 1.0, 4.0):
        for p2 in (0.25, 1.0, 4.0):
            for zeta in (0.5, 1.0, 2.0):
                for lb in (1e-3, 0.1, 1.0, 10.0):
                    try:
                        a1, a2, _ = tau_by_nu(p1, p2, 1j * zeta if mutate else zeta, lb)
                        b1, b2, _ = tau_by_newton(p1, p2, zeta, lb)
                    except (NumericalError, ValidationError, ValueError, TypeError) as exc:
                        failures.append(f"({p1},{p2},{zeta},{lb}): {exc}")
                        worst_gap = math.inf
                        continue
                    gap = max(abs(a1 - b1) / abs(b1), abs(a2 - b2) / abs(b2))
                    e1, e2, sc = tau_residuals(a1, a2, p1, p2, zeta, lb)
                    worst_gap = max(worst_gap, gap)
                    worst_res = max(worst_res, max(abs(e1), abs(e2)) / sc)
    ok = worst_gap <= PATH_AGREE and worst_res <= RESIDUAL_CERT
    return Check("fixed-point path equivalence", ok, worst_gap, f"<= {PATH_AGREE:g}",
                 {"max_scaled_residual": worst_res, "seconds": time.perf_counter() - t0,
                  "failures": failures[:5]})


def check_regime_limits():
    worst = 0.0
    tuples = [(0.5, 0.7, 0.3), (2.0, 1.2, 1.0), (5.0, 2.0, 0.05)]
    for p2, zeta, lb in tuples:
        (B, V, a, _, _), _ = critical_factors(1e8, p2, zeta, lb, 1.0)
        Bo, Vo, ao, _, _, _ = overparam_factors(p2, zeta, lb, 1.0)
        worst = max(worst, abs(B - Bo) / abs(Bo), abs(V - Vo) / abs(Vo), abs(a - ao) / abs(ao))
        (B, V, a, _, _), _ = critical_factors(p2, 1e8, zeta, lb, 1.0)
        Bu, _, _, _, _, _ = underparam_factors(p2, zeta, 1.0)
        worst = max(worst, abs(B - Bu) / abs(Bu), abs(V), abs(a - 1.0))
    small = 0.0
    for zeta, lb, gamma in ((1.0, 1.0, 1.0), (0.5, 0.1, 3.0)):
        ref = tau_closed_form(gamma, zeta, lb)
        _, sol = critical_factors(1e-6 * gamma, 1e-6, zeta, lb, 1.0)
        small = max(small, abs(sol.tau1 - ref.tau1), abs(sol.tau2 - ref.tau2))
    ok = worst < 1e-3 and small < 1e-6
    return Check("regime limits", ok, max(worst, small), "< 1e-3 (large psi), < 1e-6 (small psi)",
                 {"large_psi_rel": worst, "small_psi_abs": small})


def check_orthonormality():
    worst = 0.0
    for d in (5, 10, 50):
        x, w = tau_quadrature(d, 64)
        Q = gegenbauer_basis(d, 8).values(x)
        G = (Q * w) @ Q.T
        worst = max(worst, np.abs(G - np.eye(9)).max())
        ends = gegenbauer_basis(d, 8).values(math.sqrt(d))
        for k in range(9):
            worst = max(worst, abs(ends[k] / math.sqrt(subspace_dim_float(d, k)) - 1))
    return Check("orthonormality and endpoint identity", worst < 1e-10, worst, "< 1e-10")


def check_exact_risk(mc_points=400_000):
    d, n, p = 6, 40, 25
    act = ActivationModel({"gegenbauer": [[1, 1.0], [2, 1.0]], "dim": d}, dim=d)
    tgt = TargetModel({"gegenbauer": [[1, 1.0]], "dim": d}, dim=d)
    setup = SimulationSetup(d, n, p, act, tgt, NoiseModel(0.01), 0.1)
    data = make_dataset(setup, 11)
    Z = build_features(data.X, data.W, act)
    a = fit_rfrr(Z, data.y, setup.lam)
    R = exact_test_error(a, data.W, tgt.direction, setup.target_coeffs, act, d)
    X = sample_sphere(d, math.sqrt(d), mc_points, 12)
    err = (tgt.function(X @ tgt.direction) - build_features(X, data.W, act) @ a) ** 2
    se = err.std() / math.sqrt(len(err))
    z = abs(err.mean() - R) / se
    return Check("exact risk vs fresh-sample Monte Carlo", z < 3, z, "< 3 stderr",
                 {"closed_form": R, "monte_carlo": float(err.mean()), "stderr": se})


def check_gcv(trials=10):
    d = 40
    cfg = ExperimentConfig(activation={"monomial": [0, 1.5, 3, 2]},
                           target={"monomial": [0, 0.5, 1.5, 1]}, d=d,
                           theta1=0.5, theta2=0.5, lam=1.0, noise_variance=0.25)
    row = run_config(cfg, trials=trials)[0]
    rel = abs(row["emp_gcv_mean"] - row["theory_alpha_c"]) / row["theory_alpha_c"]
    return Check("GCV consistency", rel < 0.05, rel, "< 5% relative",
                 {"alpha_c": row["theory_alpha_c"], "gcv_mean": row["emp_gcv_mean"]})


CHECKS = {
    "paths": check_path_equivalence,
    "limits": check_regime_limits,
    "orthonormality": check_orthonormality,
    "exact_risk": check_exact_risk,
    "gcv": check_gcv,
}


def cmd_verify(names=None, mutate=False):
    report = []
    for name in names or CHECKS:
        fn = CHECKS[name]
        report.append(fn(mutate=True) if (mutate and name == "paths") else fn())
    return report


# ---------------------------------------------------------------------------
# figure presets

_FIG3_SIGMA = {"monomial": [0, 1.5, 3, 2]}
_FIG3_TARGET = {"monomial": [0, 0.5, 1.5, 1]}


def _scaled_d(base, scale):
    return max(3, int(round(base * scale)))


def preset(figure_id, scale=1.0, count=DEFAULT_COUNT, trials=None):
    """{panel name: ExperimentConfig} for a figure; trials default to the figure's own."""
    if figure_id == "fig_critical":
        d = _scaled_d(50, scale)
        t = 100 if trials is None else trials
        base = dict(activation=_FIG3_SIGMA, target=_FIG3_TARGET, d=d, lam=1.0,
                    noise_variance=0.25, trials=t)
        log = dict(grid="log", min=0.1, max=10.0, count=count)
        return {
            "left": ExperimentConfig(**base, theta2=0.5, sweep=dict(variable="psi1", **log)),
            "middle": ExperimentConfig(**base, theta1=0.5, sweep=dict(variable="psi2", **log)),
            "right": ExperimentConfig(**base, kappa1=1.5, kappa2=1.5, theta1=1.0,
                                      sweep=dict(variable="theta2", **log)),
        }
    if figure_id == "fig_overunder":
        d = _scaled_d(50, scale)
        t = 100 if trials is None else trials
        base = dict(activation={"monomial": [0, 1, 0.1]}, target={"monomial": [0, 1, 1]}, d=d,
                    lam=1.0, noise_variance=0.25, trials=t)
        log = dict(grid="log", min=0.1, max=10.0, count=count)
        return {
            "over": ExperimentConfig(**base, kappa1=2, kappa2=1, theta1=1.0,
                                     sweep=dict(variable="psi2", **log)),
            "under": ExperimentConfig(**base, kappa1=1, kappa2=2, theta2=1.0,
                                      sweep=dict(variable="psi1", **log)),
        }
    if figure_id == "fig_norm":
        d = _scaled_d(100, scale)
        t = 100 if trials is None else trials
        n = int(round(1.25 * d * d))
        return {
            "main": ExperimentConfig(
                activation={"gegenbauer": [[2, 0.5], [3, 0.3]], "dim": d},
                target={"gegenbauer": [[2, 1.5], [3, 0.5]], "dim": d}, d=d, n=n,
                lam=2.5e-3, noise_variance=0.04, trials=t,
                sweep=dict(variable="p", grid="log", min=0.1 * n, max=10.0 * n, count=count)),
        }
    if figure_id == "fig_optlambda":
        d = _scaled_d(100, scale)
        base = dict(activation={"gegenbauer": [[2, 0.5], [3, 0.5]], "dim": d},
                    target={"gegenbauer": [[2, 2.0]], "dim": d},
                    trials=0 if trials is None else trials)
        lams = [1e-4, 1e-3, 1e-2, 1e-1, 1.0]
        snr5 = 4.0 / 5
        return {
            "left": ExperimentConfig(**base, theta2=10.0, noise_variance=snr5, lambdas=lams,
                                     sweep=dict(variable="theta1", grid="log", min=0.1, max=100.0,
                                                count=count)),
            "middle": ExperimentConfig(**base, theta1=10.0, noise_variance=snr5, lambdas=lams,
                                       sweep=dict(variable="theta2", grid="log", min=0.1,
                                                  max=100.0, count=count)),
            "right": ExperimentConfig(**base, theta1=10.0, theta2=1.0, noise_variance=1.0,
                                      lambdas=lams,
                                      sweep=dict(variable="snr", grid="log", min=0.1, max=100.0,
                                                 count=count)),
        }
    if figure_id == "fig_biasvar":
        base = dict(activation={"monomial": [0, 1, 1, 1, 1]},
                    target={"monomial": [0, 0.5, 0.5, 0.5]}, lam=1.0, noise_variance=1.0,
                    trials=0, kappa2=2.0, theta1=1.0)
        sweep = dict(variable="kappa1", grid="linear", min=0.5, max=3.5, count=61)
        return {f"psi2_{v:g}": ExperimentConfig(**base, theta2=v / 2, sweep=sweep)
                for v in (0.1, 1.0, 10.0)}
    if figure_id == "fig_spectra":
        d = _scaled_d(50, scale)
        return {"main": ExperimentConfig(activation={"monomial": [0, 0, 2, 1]},
                                         target=_FIG3_TARGET, d=d, theta1=0.5, theta2=1.0,
                                         lam=1.0, noise_variance=0.25,
                                         trials=1 if trials is None else trials)}
    raise ValidationError(f"unknown figure {figure_id!r}")


FIGURES = ("fig_critical", "fig_overunder", "fig_norm", "fig_optlambda", "fig_spectra",
           "fig_biasvar")


def cmd_reproduce(figure_id, out_dir, scale=1.0, trials=None, threads=1, count=DEFAULT_COUNT):
    """Write one CSV (plus sidecar) per panel into ``out_dir``; returns the paths."""
    panels = preset(figure_id, scale=scale, count=count, trials=trials)
    out_dir = Path(out_dir)
    paths = []
    for name, cfg in panels.items():
        path = out_dir / f"{figure_id}_{name}.csv"
        if figure_id == "fig_spectra":
            cmd_spectra(cfg, out=path, trials=cfg.trials, threads=threads)
        else:
            rows = run_config(cfg, threads=threads)
            _emit(cfg, rows, path, {"figure": figure_id, "panel": name,
                                    "sweep_variable": cfg.sweep["variable"]})
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# command line

def _threads(n):
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n or 1)


def _build_parser():
    ap = argparse.ArgumentParser(prog="rfrr", description="Random feature ridge regression asymptotics")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", help="output CSV path (directory for reproduce)")
        p.add_argument("--trials", type=int, help="override the number of trials")
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads (0 = auto)")

    common(sub.add_parser("predict", help="theory curves only"))
    common(sub.add_parser("simulate", help="theory plus Monte Carlo"))
    common(sub.add_parser("spectra", help="singular value histograms vs theory"))
    v = sub.add_parser("verify", help="run the cross-module property suite")
    v.add_argument("--checks", nargs="*", choices=sorted(CHECKS))
    r = sub.add_parser("reproduce", help="regenerate a figure's CSV bundle")
    r.add_argument("figure", choices=FIGURES)
    r.add_argument("--scale", type=float, default=1.0, help="multiply the figure's d by this")
    r.add_argument("--count", type=int, default=DEFAULT_COUNT, help="grid points per panel")
    common(r, config=False)
    return ap


def _load(args):
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
        cfg.validate()
    return cfg


def _print_rows(rows, fh=None):
    w = csv.writer(fh or sys.stdout, lineterminator="\n")
    cols = COLUMNS + EXTRA_COLUMNS
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            report = cmd_verify(args.checks)
            for c in report:
                print(c.line())
                for k, v in c.details.items():
                    print(f"    {k}: {v}")
            return 0 if all(c.passed for c in report) else 2
        threads = _threads(args.threads)
        if args.command == "reproduce":
            out = args.out or f"results/{args.figure}"
            for p in cmd_reproduce(args.figure, out, scale=args.scale, trials=args.trials,
                                   threads=threads, count=args.count):
                print(p)
            return 0
        cfg = _load(args)
        if args.command == "predict":
            rows = cmd_predict(cfg, args.out)
        elif args.command == "simulate":
            rows = cmd_simulate(cfg, args.out, threads=threads)
        else:
            res = cmd_spectra(cfg, args.out, threads=threads)
            print(f"KS(rf, gaussian) = {res.ks:.4f}; sup|F_rf - F_theory| = {res.cdf_dev_rf:.4f}; "
                  f"sup|F_gauss - F_theory| = {res.cdf_dev_ge:.4f}")
            return 0
        if not args.out:
            _print_rows(rows)
        return 0
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
