"""Hermite / Gegenbauer decompositions of activations and targets.

A scalar function can be given three ways (the config's tagged union):

* ``{"gegenbauer": [[k, c], ...], "dim": d}``  -- finite series in q_k at d
* ``{"monomial": [c0, c1, ...]}``             -- polynomial in x
* ``{"named": "relu"}`` / ``"shifted_relu(c)"`` -- max(x - c, 0)

Polynomial inputs are projected with Gauss rules that are exact for their
degree.  Plain callables use Gauss rules with node doubling, or composite
Gauss-Legendre panels when kink locations are supplied.
"""
from dataclasses import dataclass, field
import math
import re

import numpy as np
from scipy.special import roots_hermitenorm

from .errors import AccuracyFailure, AssumptionViolation, ValidationError
from .special_functions import (
    MAX_DEGREE,
    composite_rule,
    gegenbauer_basis,
    hermite_values,
    tau_logpdf,
    tau_quadrature,
)

CONVENTIONS = ("finite_d", "hermite_limit")
_TAIL_RTOL = 1e-8
_DOUBLING_OK = 1e-10
_DOUBLING_FAIL = 1e-8


def _gauss_rule(nodes):
    x, w = roots_hermitenorm(nodes)
    return x, w / w.sum()


class ScalarFunction:
    """A univariate function with known polynomial structure when available."""

    def __init__(self, func=None, *, monomial=None, gegenbauer=None, dim=None,
                 breaks=(), label=None):
        given = sum(v is not None for v in (func, monomial, gegenbauer))
        if given != 1:
            raise ValidationError("give exactly one of func, monomial, gegenbauer")
        self.breaks = tuple(breaks)
        self.monomial = None
        self.gegenbauer = None
        self.dim = dim
        if monomial is not None:
            c = np.trim_zeros(np.asarray(monomial, dtype=float), "b")
            self.monomial = c if len(c) else np.zeros(1)
            self.degree = len(self.monomial) - 1
            self._f = lambda x: np.polynomial.polynomial.polyval(x, self.monomial)
        elif gegenbauer is not None:
            if dim is None:
                raise ValidationError("a Gegenbauer series needs its dimension")
            coeffs = np.zeros(max([int(k) for k, _ in gegenbauer] + [0]) + 1)
            for k, v in gegenbauer:
                if int(k) < 0:
                    raise ValidationError("negative degree in Gegenbauer series")
                coeffs[int(k)] += float(v)
            self.gegenbauer = coeffs
            self.degree = len(coeffs) - 1
            basis = gegenbauer_basis(dim, max(self.degree, 1))
            self._f = lambda x: basis.series(coeffs, x, check=False)
        else:
            self.degree = None
            self._f = func
        self.label = label or self._default_label()

    def _default_label(self):
        if self.monomial is not None:
            return "monomial" + str(list(self.monomial))
        if self.gegenbauer is not None:
            return f"gegenbauer@{self.dim}" + str(list(self.gegenbauer))
        return getattr(self._f, "__name__", "callable")

    @property
    def is_polynomial(self):
        return self.degree is not None

    def __call__(self, x):
        return self._f(np.asarray(x, dtype=float))

    def scaled(self, c):
        if self.monomial is not None:
            return ScalarFunction(monomial=c * self.monomial)
        if self.gegenbauer is not None:
            return ScalarFunction(gegenbauer=[(k, c * v) for k, v in enumerate(self.gegenbauer)],
                                  dim=self.dim)
        f = self._f
        return ScalarFunction(lambda x: c * f(x), breaks=self.breaks, label=f"{c}*{self.label}")

    # projections -------------------------------------------------------

    def _project(self, rule, K, polys):
        """Inner products <f, P_k> and ||f||^2 under a quadrature rule."""
        x, w = rule
        fx = self(x)
        P = polys(K, x)
        return P @ (w * fx), float(w @ (fx * fx))

    def _converged(self, make_rule, K, polys, start):
        prev = None
        n = start
        while True:
            cur = self._project(make_rule(n), K, polys)
            if prev is not None:
                gap = max(np.max(np.abs(cur[0] - prev[0]), initial=0.0), abs(cur[1] - prev[1]))
                if gap <= _DOUBLING_OK:
                    return cur
                if n >= start * 16:
                    if gap <= _DOUBLING_FAIL:
                        return cur
                    raise AccuracyFailure(
                        f"quadrature for {self.label} not converged (doubling change {gap:.2e})")
            prev = cur
            n *= 2

    def hermite_projection(self, K):
        """(mu_0..mu_K, E f(G)^2)."""
        if self.is_polynomial:
            n = max(64, self.degree + K + 2)
            return self._project(_gauss_rule(n), K, hermite_values)
        if self.breaks:
            lim = 40.0
            def rule(n):
                x, w = composite_rule(-lim, lim, self.breaks, nodes=n)
                return x, w * np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
            return self._converged(rule, K, hermite_values, 32)
        return self._converged(_gauss_rule, K, hermite_values, 256)

    def gegenbauer_projection(self, d, K):
        """(varsigma_0..varsigma_K at dimension d, ||f||^2 under tau_{d,1})."""
        basis = gegenbauer_basis(d, K)
        polys = lambda kk, x: basis.values(x, upto=kk, check=False)
        if self.gegenbauer is not None and d == self.dim:
            out = np.zeros(K + 1)
            m = min(K, self.degree)
            out[: m + 1] = self.gegenbauer[: m + 1]
            return out, float(self.gegenbauer @ self.gegenbauer)
        if self.is_polynomial:
            n = max(64, self.degree + K + 2)
            return self._project(tau_quadrature(d, n), K, polys)
        if self.breaks:
            r = math.sqrt(d)
            def rule(n):
                x, w = composite_rule(-r, r, self.breaks, nodes=n)
                return x, w * np.exp(tau_logpdf(d, x))
            return self._converged(rule, K, polys, 32)
        return self._converged(lambda n: tau_quadrature(d, n), K, polys, 256)


def parse_function(spec, dim=None):
    """Build a ScalarFunction from the config's tagged union."""
    if isinstance(spec, ScalarFunction):
        return spec
    if callable(spec):
        return ScalarFunction(spec)
    if not isinstance(spec, dict) or len(set(spec) - {"dim"}) != 1:
        raise ValidationError(f"function spec must have one of gegenbauer/monomial/named: {spec!r}")
    if "monomial" in spec:
        return ScalarFunction(monomial=spec["monomial"])
    if "gegenbauer" in spec:
        d = spec.get("dim", dim)
        return ScalarFunction(gegenbauer=spec["gegenbauer"], dim=d)
    if "named" in spec:
        name = str(spec["named"]).strip()
        if name == "relu":
            return ScalarFunction(lambda x: np.maximum(x, 0.0), breaks=(0.0,), label="relu")
        m = re.fullmatch(r"shifted_relu\(\s*([-+0-9.eE]+)\s*\)", name)
        if m:
            c = float(m.group(1))
            return ScalarFunction(lambda x: np.maximum(x - c, 0.0), breaks=(c,),
                                  label=f"shifted_relu({c})")
        raise ValidationError(f"unknown named function {name!r}")
    raise ValidationError(f"bad function spec {spec!r}")


def _clamp_tail(total, partial):
    tail = total - np.cumsum(partial ** 2)
    scale = max(total, 1.0)
    if np.any(tail < -1e-9 * scale):
        raise AccuracyFailure("coefficient energy exceeds the L2 norm (Parseval violated)")
    return np.maximum(tail, 0.0)


def _auto_degree(fn, project):
    if fn.is_polynomial:
        return min(fn.degree, MAX_DEGREE)
    K = 4
    while True:
        coeffs, total = project(K)
        tail = _clamp_tail(total, coeffs)
        if total == 0 or tail[-1] / total < _TAIL_RTOL or K >= MAX_DEGREE:
            return K
        K = min(2 * K, MAX_DEGREE)


@dataclass
class HermiteCoefficients:
    mu: np.ndarray
    tail: np.ndarray          # tail[k] = mu_{>k}^2
    norm2: float              # E sigma(G)^2


def hermite_coeffs(sigma, K):
    fn = parse_function(sigma)
    mu, total = fn.hermite_projection(K)
    return HermiteCoefficients(mu, _clamp_tail(total, mu), total)


def gegenbauer_coeffs(sigma, d, K):
    """varsigma_0..varsigma_K of sigma at dimension d."""
    fn = parse_function(sigma, dim=d)
    return fn.gegenbauer_projection(d, K)[0]


@dataclass
class ActivationModel:
    """Spectral description of an activation at dimension ``dim``."""

    function: ScalarFunction
    dim: int = None
    max_degree: int = None
    gegenbauer: np.ndarray = field(init=False, repr=False)
    gegenbauer_tail: np.ndarray = field(init=False, repr=False)
    sphere_norm2: float = field(init=False)
    hermite: HermiteCoefficients = field(init=False, repr=False)

    def __post_init__(self):
        fn = self.function = parse_function(self.function, dim=self.dim)
        if self.dim is None:
            self.dim = fn.dim
        K = self.max_degree
        if K is None:
            K = _auto_degree(fn, fn.hermite_projection)
            if fn.is_polynomial:
                K = min(max(K, 4), MAX_DEGREE)
        self.max_degree = K
        self.hermite = hermite_coeffs(fn, K)
        if self.dim is not None:
            g, total = fn.gegenbauer_projection(self.dim, K)
            self.gegenbauer = g
            self.sphere_norm2 = total
            self.gegenbauer_tail = _clamp_tail(total, g)
        else:
            self.gegenbauer = None
            self.gegenbauer_tail = None
            self.sphere_norm2 = None

    @property
    def default_convention(self):
        return "finite_d" if self.function.gegenbauer is not None else "hermite_limit"

    def coefficients(self, convention):
        """(coefficients, tails) under the chosen convention."""
        if convention == "finite_d":
            if self.gegenbauer is None:
                raise ValidationError("finite_d convention needs a dimension")
            return self.gegenbauer, self.gegenbauer_tail
        if convention == "hermite_limit":
            return self.hermite.mu, self.hermite.tail
        raise ValidationError(f"unknown convention {convention!r}")


@dataclass(frozen=True)
class Scalars:
    mu_ell: float
    mu_gt2: float
    zeta: float
    lam_bar: float
    convention: str


def derive_scalars(act, ell, lam, convention=None):
    """(mu_ell, mu_{>ell}^2, zeta, lambda_bar) at level ell."""
    if lam <= 0:
        raise ValidationError("ridge parameter must be positive")
    convention = convention or act.default_convention
    coeffs, tail = act.coefficients(convention)
    if ell > len(coeffs) - 1:
        raise ValidationError(f"level {ell} above the computed degree {len(coeffs) - 1}")
    norm2 = act.sphere_norm2 if convention == "finite_d" else act.hermite.norm2
    mu = float(coeffs[ell])
    gt2 = float(tail[ell])
    if abs(mu) <= 1e-12 * math.sqrt(max(norm2, 1e-300)):
        raise AssumptionViolation(f"coefficient at level {ell} vanishes")
    if gt2 <= 1e-12 * norm2:
        raise AssumptionViolation(f"no spectral mass above level {ell} (mu_>{ell}^2 = {gt2:.3g})")
    return Scalars(mu, gt2, abs(mu) / math.sqrt(gt2), lam / gt2, convention)


@dataclass(frozen=True)
class NoiseModel:
    variance: float = 0.0
    distribution: str = "gaussian"

    def __post_init__(self):
        if self.variance < 0:
            raise ValidationError("noise variance must be >= 0")
        if self.distribution != "gaussian":
            raise ValidationError("only Gaussian noise is supported")


@dataclass
class TargetModel:
    """f*(x) = sum_k b_k q_k(<beta, x>); ``function`` holds the profile."""

    function: ScalarFunction
    dim: int = None
    direction: np.ndarray = None

    def __post_init__(self):
        self.function = parse_function(self.function, dim=self.dim)
        if self.dim is None:
            self.dim = self.function.dim
        if self.direction is not None:
            b = np.asarray(self.direction, dtype=float)
            nrm = np.linalg.norm(b)
            if nrm == 0:
                raise ValidationError("target direction must be nonzero")
            self.direction = b / nrm
        elif self.dim is not None:
            self.direction = np.eye(self.dim)[0]
        if not self.function.is_polynomial:
            raise ValidationError("targets must be finite series (polynomial)")

    def coefficients(self, convention=None):
        fn = self.function
        if convention is None:
            convention = "finite_d" if fn.gegenbauer is not None else "hermite_limit"
        K = fn.degree
        if convention == "finite_d":
            if self.dim is None:
                raise ValidationError("finite_d convention needs a dimension")
            return fn.gegenbauer_projection(self.dim, K)[0]
        if convention == "hermite_limit":
            return fn.hermite_projection(K)[0]
        raise ValidationError(f"unknown convention {convention!r}")


@dataclass(frozen=True)
class Frequencies:
    F_ell: float
    F_gt2: float
    stair: tuple      # stair[k] = ||P_{>k} f*||^2, k = 0..deg
    total: float

    def stair_at(self, k):
        if k < 0:
            return self.total
        if k >= len(self.stair):
            return 0.0
        return self.stair[k]


def target_frequencies(coeffs, ell):
    """F_ell, F_{>ell}^2 and the staircase levels from target coefficients."""
    b = np.asarray(coeffs, dtype=float)
    sq = b * b
    total = float(sq.sum())
    stair = tuple(float(sq[k + 1:].sum()) for k in range(len(b)))
    F_ell = float(abs(b[ell])) if ell < len(b) else 0.0
    F_gt2 = float(sq[ell + 1:].sum()) if ell + 1 < len(b) else 0.0
    return Frequencies(F_ell, F_gt2, stair, total)
