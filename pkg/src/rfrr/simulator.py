"""Finite-size Monte Carlo for RFRR, KRR and the Gaussian-equivalent model.

Test errors are evaluated in closed form from the Gegenbauer expansions of
sigma and f* (addition theorem), so no held-out sample is drawn.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from scipy import linalg

from .errors import FactorizationFailure, MemoryBudgetExceeded, SolverFailure, ValidationError
from .special_functions import gegenbauer_basis, sample_sphere, subspace_dim_float
from .spectral_decomposition import ActivationModel, NoiseModel, TargetModel

_CHUNK_BYTES = 64 * 2 ** 20
_TAIL_WARN = 1e-6


@dataclass
class Dataset:
    X: np.ndarray
    W: np.ndarray
    eps: np.ndarray
    y: np.ndarray
    seed: int


@dataclass
class EmpiricalResult:
    test_error: float
    train_error: float
    norm_stat: float
    gcv_stat: float
    norm_convention: str = "per_n"
    condition: float = float("nan")
    trace_gap: float = float("nan")
    warnings: list = field(default_factory=list)
    singular_values: np.ndarray = None


# ---------------------------------------------------------------------------
# features and ridge solves

def _sigma(activation):
    return activation.function if isinstance(activation, ActivationModel) else activation


def build_features(X, W, activation):
    """Z = sigma(X W^T) / sqrt(p)."""
    X = np.asarray(X, dtype=float)
    W = np.asarray(W, dtype=float)
    if X.shape[1] != W.shape[1]:
        raise ValidationError("X and W must share the input dimension")
    Z = _sigma(activation)(X @ W.T)
    Z /= math.sqrt(W.shape[0])
    return Z


def _spd_solve(A, b):
    """Cholesky solve of an SPD system with one step of iterative refinement."""
    try:
        cf = linalg.cho_factor(A, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        cond = np.linalg.cond(A)
        raise FactorizationFailure(f"Cholesky failed (cond ~ {cond:.2e})", condition=cond) from exc
    x = linalg.cho_solve(cf, b, check_finite=False)
    x += linalg.cho_solve(cf, b - A @ x, check_finite=False)
    return x, cf


@dataclass
class RidgeFit:
    a: np.ndarray
    dual: bool
    factor: tuple
    lam: float
    gram_eigs: np.ndarray = None


def fit_rfrr(Z, y, lam, return_fit=False):
    """a = (Z^T Z + lam I)^{-1} Z^T y; dual form Z^T (Z Z^T + lam I)^{-1} y when n < p."""
    if not lam > 0:
        raise ValidationError("ridge parameter must be positive")
    n, p = Z.shape
    if n < p:
        G = Z @ Z.T
        G[np.diag_indices(n)] += lam
        u, cf = _spd_solve(G, y)
        a = Z.T @ u
        fit = RidgeFit(a, True, cf, lam)
    else:
        G = Z.T @ Z
        G[np.diag_indices(p)] += lam
        a, cf = _spd_solve(G, Z.T @ y)
        fit = RidgeFit(a, False, cf, lam)
    return fit if return_fit else a


def _chol_inv_trace(cf):
    L = np.tril(cf[0])
    Linv = linalg.solve_triangular(L, np.eye(L.shape[0]), lower=True, check_finite=False)
    return float(np.einsum("ij,ij->", Linv, Linv))


def _chol_cond(cf):
    dg = np.abs(np.diag(cf[0]))
    return float((dg.max() / dg.min()) ** 2)


# ---------------------------------------------------------------------------
# closed-form risk

def _series_coeffs(act, d, K=None):
    """(varsigma_k, N_k) at dimension d plus the L2 tail above the truncation."""
    K = act.max_degree if K is None else K
    g, total = act.function.gegenbauer_projection(d, K)
    if act.function.is_polynomial and act.function.degree < K:
        # above the degree the projections are rounding noise
        g = g.copy()
        g[act.function.degree + 1:] = 0.0
        return g, np.array([subspace_dim_float(d, k) for k in range(len(g))]), 0.0
    N = np.array([subspace_dim_float(d, k) for k in range(len(g))])
    tail = max(total - float(g @ g), 0.0)
    return g, N, tail


def quad_form_poly(a, W, coeffs, d, chunk=None):
    """a^T M a with M_ij = sum_k coeffs[k] q_k(sqrt(d) <w_i, w_j>), in row chunks."""
    p = W.shape[0]
    basis = gegenbauer_basis(d, max(len(coeffs) - 1, 1))
    rows = chunk or max(1, _CHUNK_BYTES // (8 * 3 * p))
    sd = math.sqrt(d)
    out = 0.0
    for s in range(0, p, rows):
        G = W[s:s + rows] @ W.T
        G *= sd
        np.clip(G, -sd, sd, out=G)
        M = basis.series(coeffs, G, check=False)
        out += float(a[s:s + rows] @ (M @ a))
    return out


def cos_poly(coeffs, d):
    """Monomial coefficients in t of sum_k coeffs[k] q_k(sqrt(d) t)."""
    P = np.polynomial.Polynomial
    c = gegenbauer_basis(d, max(len(coeffs) - 1, 1)).recurrence
    x = P([0.0, math.sqrt(d)])
    prev, cur = P([1.0]), x
    out = coeffs[0] * prev
    if len(coeffs) > 1:
        out = out + coeffs[1] * cur
    for k in range(1, len(coeffs) - 1):
        prev, cur = cur, (x * cur - c[k] * prev) / c[k + 1]
        out = out + coeffs[k + 1] * cur
    return np.pad(out.coef, (0, max(0, len(coeffs) - len(out.coef))))


def hadamard_power_form(a, W, m, chunk=2048):
    """sum_ij a_i a_j <w_i, w_j>^m = ||sum_j a_j w_j^{(x)m}||^2 for m <= 3."""
    if m == 0:
        return float(a.sum()) ** 2
    if m == 1:
        v = W.T @ a
        return float(v @ v)
    if m == 2:
        A = W.T @ (a[:, None] * W)
        return float(np.einsum("ij,ij->", A, A))
    if m == 3:
        d = W.shape[1]
        A = np.zeros((d, d * d))
        for s in range(0, W.shape[0], chunk):
            Wc = W[s:s + chunk]
            kr = (Wc[:, :, None] * Wc[:, None, :]).reshape(len(Wc), d * d)
            A += (a[s:s + chunk, None] * Wc).T @ kr
        return float(np.einsum("ij,ij->", A, A))
    raise ValueError("tensor route only for m <= 3")


def quad_form(a, W, coeffs, d):
    """Dispatch: tensor route when the series has degree <= 3 and d^3 is small, else row chunks."""
    K = len(coeffs) - 1
    while K > 0 and coeffs[K] == 0.0:
        K -= 1
    p, dd = W.shape
    if K <= 3 and dd ** K <= 4 * p * dd:
        poly = cos_poly(np.asarray(coeffs[: K + 1], dtype=float), d)
        return sum(poly[m] * hadamard_power_form(a, W, m) for m in range(K + 1) if poly[m] != 0.0)
    return quad_form_poly(a, W, coeffs, d)


def exact_test_error(a, W, beta, target_coeffs, act, d, return_parts=False):
    """||f*||^2 - 2 a^T V + a^T U a with V, U from the addition theorem.

    V_j = p^{-1/2} sum_k b_k xi_k q_k(sqrt(d) <beta, w_j>)
    U_ij = p^{-1} sum_k varsigma_k^2 q_k(sqrt(d) <w_i, w_j>) / sqrt(N_k)
    """
    a = np.asarray(a, dtype=float)
    p = W.shape[0]
    b = np.asarray(target_coeffs, dtype=float)
    K = max(act.max_degree, len(b) - 1)
    g, N, tail = _series_coeffs(act, d, K)
    notes = []
    if not act.function.is_polynomial and tail > _TAIL_WARN * max(act.sphere_norm2, 1e-300):
        notes.append(f"activation series truncated at degree {K}; tail {tail:.2e} added on the diagonal only")
    bb = np.zeros(K + 1)
    bb[: len(b)] = b
    sd = math.sqrt(d)
    basis = gegenbauer_basis(d, max(K, 1))
    xi = g / np.sqrt(N)
    t = np.clip(sd * (W @ beta), -sd, sd)
    V = basis.series(bb * xi, t, check=False) / math.sqrt(p)
    quad = quad_form(a, W, g * g / np.sqrt(N), d) / p
    quad += tail * float(a @ a) / p
    R = float(bb @ bb) - 2 * float(a @ V) + quad
    if return_parts:
        return R, notes
    return R


# ---------------------------------------------------------------------------
# empirical statistics

def empirical_stats(Z, y, a, lam, convention="per_n", fit=None, check_trace=None):
    """Training error, norm statistic, GCV statistic and the trace-identity gap."""
    n, p = Z.shape
    resid = y - Z @ a
    train = float(resid @ resid) / n
    norm = float(a @ a) / (n if convention == "per_n" else p)
    if fit is None:
        fit = fit_rfrr(Z, y, lam, return_fit=True)
    tr_small = _chol_inv_trace(fit.factor)
    # trace over the n x n resolvent; the smaller Gram shares its nonzero spectrum
    tr_n = tr_small if fit.dual else tr_small + (n - p) / lam
    gcv = (lam / n * tr_n) ** 2
    if check_trace is None:
        check_trace = max(n, p) <= 3000
    gap = float("nan")
    if check_trace:
        other = Z.T @ Z if fit.dual else Z @ Z.T
        other[np.diag_indices(other.shape[0])] += lam
        tr_other = _chol_inv_trace(linalg.cho_factor(other, lower=True, check_finite=False))
        tr_nn, tr_pp = (tr_small, tr_other) if fit.dual else (tr_other, tr_small)
        want = (n - p) / lam
        gap = abs((tr_nn - tr_pp) - want) / max(abs(want), abs(tr_nn), 1e-300)
        if gap > 1e-8:
            raise SolverFailure(f"trace identity violated (rel gap {gap:.2e})", residual=gap)
    return EmpiricalResult(float("nan"), train, norm, gcv, convention,
                           _chol_cond(fit.factor), gap)


# ---------------------------------------------------------------------------
# data generation and trials

@dataclass
class SimulationSetup:
    d: int
    n: int
    p: int
    activation: ActivationModel
    target: TargetModel
    noise: NoiseModel
    lam: float
    model: str = "rf"            # rf | krr | gaussian
    norm_convention: str = "per_n"
    keep_singular_values: bool = False
    max_features: int = 2_000_000

    def __post_init__(self):
        if self.model not in ("rf", "krr", "gaussian"):
            raise ValidationError(f"unknown model {self.model!r}")
        if self.d < 2 or self.n < 1 or self.p < 1:
            raise ValidationError("need d >= 2, n >= 1, p >= 1")
        if not self.lam > 0:
            raise ValidationError("ridge parameter must be positive")
        if self.activation.dim != self.d:
            self.activation = ActivationModel(self.activation.function, dim=self.d,
                                              max_degree=self.activation.max_degree)
        if self.target.dim != self.d:
            self.target = TargetModel(self.target.function, dim=self.d)

    @property
    def target_coeffs(self):
        return self.target.coefficients("finite_d")


def _streams(seed, count):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


def make_dataset(setup, seed):
    rx, rw, re = _streams(seed, 3)
    d = setup.d
    X = sample_sphere(d, math.sqrt(d), setup.n, rx)
    W = sample_sphere(d, 1.0, setup.p, rw)
    eps = re.standard_normal(setup.n) * math.sqrt(setup.noise.variance)
    beta = setup.target.direction
    y = setup.target.function(np.clip(X @ beta, -math.sqrt(d), math.sqrt(d))) + eps
    return Dataset(X, W, eps, y, seed)


def rf_trial(setup, seed):
    data = make_dataset(setup, seed)
    Z = build_features(data.X, data.W, setup.activation)
    fit = fit_rfrr(Z, data.y, setup.lam, return_fit=True)
    res = empirical_stats(Z, data.y, fit.a, setup.lam, setup.norm_convention, fit=fit,
                          check_trace=False)
    res.test_error, notes = exact_test_error(fit.a, data.W, setup.target.direction,
                                             setup.target_coeffs, setup.activation, setup.d,
                                             return_parts=True)
    res.warnings.extend(notes)
    if setup.keep_singular_values:
        res.singular_values = linalg.svdvals(Z, check_finite=False)
    return res


def krr_kernel(X1, X2, act, d):
    g, N, _ = _series_coeffs(act, d)
    basis = gegenbauer_basis(d, max(len(g) - 1, 1))
    sd = math.sqrt(d)
    G = np.clip(X1 @ X2.T / sd, -sd, sd)
    return basis.series(g * g / np.sqrt(N), G, check=False)


def krr_fit_and_error(X, y, lam, act, target_coeffs, beta, d):
    """Kernel ridge regression with K(x,x') = sum_k varsigma_k^2 q_k(<x,x'>/sqrt d)/sqrt(N_k)."""
    if not lam > 0:
        raise ValidationError("ridge parameter must be positive")
    n = X.shape[0]
    K = krr_kernel(X, X, act, d)
    A = K.copy()
    A[np.diag_indices(n)] += lam
    u, cf = _spd_solve(A, y)
    g, N, tail = _series_coeffs(act, d)
    b = np.asarray(target_coeffs, dtype=float)
    Kd = max(len(g), len(b)) - 1
    gg = np.zeros(Kd + 1)
    gg[: len(g)] = g
    bb = np.zeros(Kd + 1)
    bb[: len(b)] = b
    NN = np.array([subspace_dim_float(d, k) for k in range(Kd + 1)])
    basis = gegenbauer_basis(d, max(Kd, 1))
    sd = math.sqrt(d)
    # E_x[f*(x) K(x, x_i)] = sum_k b_k varsigma_k^2 q_k(<beta, x_i>) / N_k
    cross = basis.series(bb * gg ** 2 / NN, np.clip(X @ beta, -sd, sd), check=False)
    # E_x[K(x, x_i) K(x, x_j)] = sum_k varsigma_k^4 q_k(<x_i, x_j>/sqrt d) / N_k^{3/2}
    Ux = basis.series(gg ** 4 / NN ** 1.5, np.clip(X @ X.T / sd, -sd, sd), check=False)
    test = float(bb @ bb) - 2 * float(u @ cross) + float(u @ Ux @ u)
    resid = y - K @ u
    tr = _chol_inv_trace(cf)
    res = EmpiricalResult(test, float(resid @ resid) / n, float(u @ K @ u) / n,
                          (lam / n * tr) ** 2, "per_n", _chol_cond(cf))
    if tail > _TAIL_WARN * max(act.sphere_norm2 or 0.0, 1e-300):
        res.warnings.append(f"kernel series truncated (tail {tail:.2e})")
    return res


def krr_trial(setup, seed):
    data = make_dataset(setup, seed)
    return krr_fit_and_error(data.X, data.y, setup.lam, setup.activation, setup.target_coeffs,
                             setup.target.direction, setup.d)


def gaussian_equiv_run(setup, seed, chunk_cols=2048):
    """Gaussian covariate model with the same per-degree second moments.

    Degree-k block: G_k (n x N_k), F_k (p x N_k), standard normal except the
    degree-0 coordinate which is identically 1.  Z_G = sum_k xi_k G_k F_k^T / sqrt(p).
    The target puts weight b_k on the first coordinate of block k.  Blocks where
    sigma has no mass only enter through that single coordinate, so they are never
    materialised.
    """
    d, n, p = setup.d, setup.n, setup.p
    b = np.asarray(setup.target_coeffs, dtype=float)
    g, N, tail = _series_coeffs(setup.activation, d)
    if tail > _TAIL_WARN * max(setup.activation.sphere_norm2, 1e-300):
        raise ValidationError("Gaussian-equivalent run needs a finite activation series")
    deg = [k for k in range(len(g)) if g[k] != 0.0]
    M = int(sum(N[k] for k in deg))
    if M > setup.max_features:
        raise MemoryBudgetExceeded(
            f"Gaussian-equivalent model needs M = {M} features (budget {setup.max_features})")
    K = max(len(g), len(b)) - 1
    seqs = np.random.SeedSequence(seed).spawn(2 * (K + 1) + 1)
    y = np.random.default_rng(seqs[-1]).standard_normal(n) * math.sqrt(setup.noise.variance)
    xi = np.zeros(K + 1)
    xi[: len(g)] = g / np.sqrt(N)
    bb = np.zeros(K + 1)
    bb[: len(b)] = b

    def f_chunks(k):
        # F_k regenerated from its own stream; identical on every pass
        rf = np.random.default_rng(seqs[2 * k + 1])
        Nk = int(subspace_dim_float(d, k))
        for s in range(0, Nk, chunk_cols):
            yield rf.standard_normal((p, min(chunk_cols, Nk - s)))

    Zg = np.zeros((n, p))
    for k in range(K + 1):
        rg = np.random.default_rng(seqs[2 * k])
        if k == 0:
            y += bb[0]
            Zg += xi[0] / math.sqrt(p)
            continue
        if xi[k] == 0.0:
            if bb[k]:
                y += bb[k] * rg.standard_normal(n)
            continue
        for j, Fc in enumerate(f_chunks(k)):
            Gc = rg.standard_normal((n, Fc.shape[1]))
            if j == 0 and bb[k]:
                y += bb[k] * Gc[:, 0]
            Zg += (xi[k] / math.sqrt(p)) * (Gc @ Fc.T)
    fit = fit_rfrr(Zg, y, setup.lam, return_fit=True)
    a = fit.a
    res = empirical_stats(Zg, y, a, setup.lam, setup.norm_convention, fit=fit, check_trace=False)
    # ||beta* - Sigma F^T a / sqrt(p)||^2, block by block
    test = float(bb @ bb) + 2 * (-bb[0] * xi[0] * float(a.sum()) / math.sqrt(p)) + (xi[0] * a.sum()) ** 2 / p
    for k in range(1, K + 1):
        if xi[k] == 0.0:
            continue
        for j, Fc in enumerate(f_chunks(k)):
            v = Fc.T @ a
            test += xi[k] ** 2 * float(v @ v) / p
            if j == 0:
                test -= 2 * bb[k] * xi[k] * v[0] / math.sqrt(p)
    res.test_error = test
    if setup.keep_singular_values:
        res.singular_values = linalg.svdvals(Zg, check_finite=False)
    return res


_TRIALS = {"rf": rf_trial, "krr": krr_trial, "gaussian": gaussian_equiv_run}

METRICS = ("test_error", "train_error", "norm_stat", "gcv_stat")


@dataclass
class TrialAggregate:
    trials: int
    base_seed: int
    mean: dict
    std: dict
    stderr: dict
    records: list


def run_trials(setup, trials, base_seed, threads=1):
    """Trial t uses seed base_seed + t; reduction is keyed by trial index."""
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    fn = _TRIALS[setup.model]

    def one(t):
        try:
            return fn(setup, base_seed + t)
        except Exception as exc:
            exc.args = (f"trial {t} (seed {base_seed + t}) failed: {exc}",) + exc.args[1:]
            raise

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            records = list(ex.map(one, range(trials)))
    else:
        records = [one(t) for t in range(trials)]
    mean, std, se = {}, {}, {}
    for m in METRICS:
        v = np.array([getattr(r, m) for r in records])
        mean[m] = float(v.mean())
        if trials > 1:
            std[m] = float(v.std(ddof=1))
            se[m] = std[m] / math.sqrt(trials)
        else:
            std[m] = 0.0
            se[m] = 0.0
    for r in records:
        for w in r.warnings:
            warnings.warn(w, RuntimeWarning, stacklevel=2)
    return TrialAggregate(trials, base_seed, mean, std, se, records)
