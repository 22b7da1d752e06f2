"""Gegenbauer and Hermite polynomials, sphere sampling and quadrature.

Conventions
-----------
``q_k`` (dimension ``d``) is the degree-k polynomial orthonormal under
``tau_{d,1}``, the law of one coordinate of a uniform point on the sphere of
radius sqrt(d).  Its density is proportional to ``(1 - x^2/d)^((d-3)/2)`` on
``[-sqrt(d), sqrt(d)]``.  ``He_k`` is the orthonormal (probabilists') Hermite
polynomial, the d -> infinity limit of ``q_k``.
"""
from dataclasses import dataclass, field
from functools import lru_cache
import math

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import betaln, roots_jacobi

from .errors import DegreeOutOfRange, ValidationError

MAX_DEGREE = 16
_OVERSHOOT = 1e-9


def subspace_dim(d, k):
    """Dimension N_k of degree-k spherical harmonics on S^{d-1}.

    Exact integer arithmetic.  Python ints never wrap; converting a huge
    result to float raises OverflowError instead of returning inf.
    """
    d, k = int(d), int(k)
    if d < 2 or k < 0:
        raise ValidationError(f"subspace_dim needs d >= 2, k >= 0 (got d={d}, k={k})")
    if k == 0:
        return 1
    if k == 1:
        return d
    num = (d + 2 * k - 2) * math.comb(d + k - 3, k - 1)
    out, rem = divmod(num, k)
    assert rem == 0
    return out


def subspace_dim_float(d, k):
    n = subspace_dim(d, k)
    try:
        return float(n)
    except OverflowError as exc:
        raise OverflowError(f"N_{k} at d={d} does not fit in a float") from exc


def tau_d1_moment(d, m):
    """m-th moment of tau_{d,1}."""
    if m < 0:
        raise ValidationError("moment order must be >= 0")
    if m % 2:
        return 0.0
    k = m // 2
    out = 1.0
    for i in range(k):
        out *= (2 * i + 1) / (1.0 + 2.0 * i / d)
    return out


def _offdiag(d, K):
    # c_k with x q_k = c_{k+1} q_{k+1} + c_k q_{k-1}
    c = np.zeros(K + 1)
    if K >= 1:
        c[1] = 1.0
    for k in range(2, K + 1):
        c[k] = math.sqrt(d * k * (k + d - 3) / ((2 * k + d - 2) * (2 * k + d - 4)))
    return c


@dataclass(frozen=True)
class GegenbauerBasis:
    """Orthonormal Gegenbauer polynomials q_0..q_K at dimension ``dim``.

    ``recurrence[k]`` is the coefficient c_k in
    ``x q_k = c_{k+1} q_{k+1} + c_k q_{k-1}``.  These are the ultraspherical
    recurrence coefficients (parameter (d-2)/2) rewritten for the argument
    x/sqrt(d) and unit norm; c_k^2 -> k recovers the Hermite recurrence.
    """

    dim: int
    max_degree: int
    recurrence: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 2:
            raise ValidationError("dimension must be >= 2")
        if not 0 <= self.max_degree <= MAX_DEGREE:
            raise DegreeOutOfRange(f"max_degree must be in [0, {MAX_DEGREE}]")
        object.__setattr__(self, "recurrence", _offdiag(self.dim, self.max_degree))

    def values(self, x, upto=None, check=True):
        """Array of shape (upto+1,) + x.shape with q_0(x)..q_upto(x)."""
        K = self.max_degree if upto is None else upto
        if K > self.max_degree:
            raise DegreeOutOfRange(f"degree {K} > max_degree {self.max_degree}")
        x = np.asarray(x, dtype=float)
        if check:
            lim = math.sqrt(self.dim) * (1 + _OVERSHOOT)
            if np.any(np.abs(x) > lim):
                raise ValidationError("argument outside [-sqrt(d), sqrt(d)]")
        c = self.recurrence
        out = np.empty((K + 1,) + x.shape)
        out[0] = 1.0
        if K >= 1:
            out[1] = x
        for k in range(1, K):
            out[k + 1] = (x * out[k] - c[k] * out[k - 1]) / c[k + 1]
        return out

    def eval(self, k, x, check=True):
        if k < 0 or k > self.max_degree:
            raise DegreeOutOfRange(f"degree {k} not in [0, {self.max_degree}]")
        return self.values(x, upto=k, check=check)[k]

    def series(self, coeffs, x, check=True):
        """Evaluate sum_k coeffs[k] q_k(x), keeping only two recurrence terms in memory."""
        coeffs = np.asarray(coeffs, dtype=float)
        K = len(coeffs) - 1
        if K > self.max_degree:
            raise DegreeOutOfRange(f"series degree {K} > max_degree {self.max_degree}")
        x = np.asarray(x, dtype=float)
        if check:
            lim = math.sqrt(self.dim) * (1 + _OVERSHOOT)
            if np.any(np.abs(x) > lim):
                raise ValidationError("argument outside [-sqrt(d), sqrt(d)]")
        out = np.full(x.shape, coeffs[0] if K >= 0 else 0.0)
        if K < 1:
            return out
        c = self.recurrence
        prev = np.ones_like(x)
        cur = x.copy()
        out += coeffs[1] * cur
        for k in range(1, K):
            nxt = (x * cur - c[k] * prev) / c[k + 1]
            prev, cur = cur, nxt
            if coeffs[k + 1] != 0.0:
                out += coeffs[k + 1] * cur
        return out


@lru_cache(maxsize=64)
def _basis(d, K):
    return GegenbauerBasis(d, K)


def gegenbauer_basis(d, K):
    return _basis(int(d), int(K))


def gegenbauer_eval(basis, k, x):
    return basis.eval(k, x)


def hermite_values(K, x):
    """He_0..He_K at x (orthonormal under N(0,1))."""
    x = np.asarray(x, dtype=float)
    out = np.empty((K + 1,) + x.shape)
    out[0] = 1.0
    if K >= 1:
        out[1] = x
    for k in range(1, K):
        out[k + 1] = (x * out[k] - math.sqrt(k) * out[k - 1]) / math.sqrt(k + 1)
    return out


def hermite_eval(k, x):
    if k < 0:
        raise ValidationError("Hermite degree must be >= 0")
    return hermite_values(k, x)[k]


@lru_cache(maxsize=32)
def _tau_rule(d, nodes):
    a = (d - 3) / 2
    with np.errstate(all="ignore"):
        t, w = roots_jacobi(nodes, a, a)
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(w)) and w.sum() > 0):
        # scipy's asymptotics break down for very large exponents; use
        # Golub-Welsch on the orthonormal recurrence instead
        c = _offdiag(d, nodes)[1:] / math.sqrt(d)
        t, vec = eigh_tridiagonal(np.zeros(nodes), c[: nodes - 1])
        w = vec[0] ** 2
    w = w / w.sum()
    x = math.sqrt(d) * t
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def tau_quadrature(d, nodes=256):
    """Gauss-Jacobi rule for tau_{d,1}: nodes on [-sqrt d, sqrt d], weights sum to 1."""
    return _tau_rule(int(d), int(nodes))


def tau_logpdf(d, x):
    a = (d - 3) / 2
    x = np.asarray(x, dtype=float)
    lognorm = 0.5 * math.log(d) + betaln(0.5, a + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return a * np.log1p(-(x * x) / d) - lognorm


def composite_rule(lo, hi, breaks=(), nodes=64, scale=1.0):
    """Composite Gauss-Legendre nodes/weights on [lo, hi].

    Panels are split at ``breaks`` and on a geometric ladder of width
    ``scale`` around zero so that kinks sit on panel edges.
    """
    edges = {lo, hi}
    for b in breaks:
        if lo < b < hi:
            edges.add(float(b))
    r = scale / 8
    while r < max(abs(lo), abs(hi)):
        for s in (-r, r):
            if lo < s < hi:
                edges.add(s)
        r *= 2
    if lo < 0 < hi:
        edges.add(0.0)
    edges = np.array(sorted(edges))
    g, gw = np.polynomial.legendre.leggauss(nodes)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1:] - edges[:-1])
    x = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    w = (half[:, None] * gw[None, :]).ravel()
    return x, w


def sample_sphere(d, radius, count, seed):
    """``count`` i.i.d. uniform points on S^{d-1}(radius), one per row."""
    if d < 2 or radius <= 0:
        raise ValidationError("sample_sphere needs d >= 2 and radius > 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    g = rng.standard_normal((int(count), int(d)))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    g *= radius
    return g


@dataclass
class AdditionCheck:
    lhs: float
    rhs: float
    stderr: float


def addition_theorem_check(d, k, w, w2, mc_samples=200_000, seed=0, chunk=50_000):
    """Monte Carlo test of E_x[q_k(<x,w>) q_k(<x,w'>)] = q_k(sqrt(d)<w,w'>)/sqrt(N_k)."""
    w = np.asarray(w, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    if abs(np.linalg.norm(w) - 1) > 1e-10 or abs(np.linalg.norm(w2) - 1) > 1e-10:
        raise ValidationError("w and w' must be unit vectors")
    basis = gegenbauer_basis(d, max(k, 1))
    cos = float(np.clip(w @ w2, -1.0, 1.0))
    rhs = float(basis.eval(k, math.sqrt(d) * cos)) / math.sqrt(subspace_dim_float(d, k))
    if k == 0:
        return AdditionCheck(1.0, rhs, 0.0)
    rng = np.random.default_rng(seed)
    s1 = 0.0
    s2 = 0.0
    left = int(mc_samples)
    while left > 0:
        m = min(chunk, left)
        x = sample_sphere(d, math.sqrt(d), m, rng)
        u = np.clip(x @ w, -math.sqrt(d), math.sqrt(d))
        v = np.clip(x @ w2, -math.sqrt(d), math.sqrt(d))
        prod = basis.eval(k, u) * basis.eval(k, v)
        s1 += prod.sum()
        s2 += (prod * prod).sum()
        left -= m
    n = int(mc_samples)
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0)
    return AdditionCheck(mean, rhs, math.sqrt(var / n))
