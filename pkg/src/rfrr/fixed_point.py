"""Fixed-point systems behind the critical-regime formulas.

Three coupled systems are solved here:

* (tau1, tau2) at real z = lambda_bar: two cubic polynomial equations.
* (nu1, nu2) on the upper half plane, the resolvent form of the same object.
* (m1, m2), the block-matrix Stieltjes pair used for spectral densities.

``solve_tau`` runs two independent routes and insists they agree: damped
nu-iteration mapped through the nu -> tau correspondence, and Newton on the
cubics with its own continuation in lambda_bar.
"""
from dataclasses import dataclass
import cmath
import math

import mpmath
import numpy as np

from .errors import (
    BranchFailure,
    ConsistencyFailure,
    DerivativeFailure,
    SolverFailure,
    ValidationError,
)

LAMBDA_FLOOR = 1e-8
DAMPING = 0.5
MAX_ITER = 100_000
TOL = 1e-13
CONTINUATION_STEPS = 30
RESIDUAL_CERT = 1e-10
PATH_AGREE = 1e-9
PATH_FAIL = 1e-8
# beyond this psi1/psi2 imbalance the nu system is too ill-conditioned for float64
EXTREME_RATIO = 1e4
POLISH_DPS = 40


@dataclass
class FixedPointSolution:
    tau1: float
    tau2: float
    dtau1: float
    dtau2: float
    residual1: float
    residual2: float
    iterations: int
    method: str
    path_gap: float = 0.0
    scaled_residual: float = 0.0


@dataclass
class StieltjesPoint:
    z: complex
    m1: complex
    m2: complex

    @property
    def m(self):
        return self.m1 + self.m2


def _check_lambda(lam_bar):
    if not lam_bar >= LAMBDA_FLOOR:
        raise ValidationError(
            f"lambda_bar={lam_bar!r} below the supported floor {LAMBDA_FLOOR:g}")


# ---------------------------------------------------------------------------
# nu system

def _nu_map(n1, n2, r1, r2, z2, psi, z):
    D = 1 - z2 * psi * n1 * n2
    return (r1 / (-z - n2 - z2 * n2 / D),
            r2 / (-z - n1 - z2 * n1 / D))


def _damped(step_map, x1, x2, path, tol, max_iter, damping):
    total = 0
    for zz in path:
        prev = math.inf
        for it in range(1, max_iter + 1):
            f1, f2 = step_map(x1, x2, zz)
            d1 = f1 - x1
            d2 = f2 - x2
            x1 = x1 + damping * d1
            x2 = x2 + damping * d2
            size = abs(d1) + abs(d2)
            # slow contraction: the remaining error is about step * q / (1 - q)
            q = min(size / prev, 0.999999) if prev > 0 else 0.0
            prev = size
            if size / (1 - q) < 2 * tol * max(abs(x1), abs(x2), 1e-300):
                break
        else:
            raise SolverFailure(
                f"no convergence after {max_iter} iterations at z={zz}",
                residual=abs(d1) + abs(d2))
        total += it
    return x1, x2, total


def _im_path(z, steps):
    top = 1e3 * max(1.0, abs(z))
    if z.imag >= top:
        return [z]
    ys = np.geomspace(top, z.imag, steps)
    return [complex(z.real, y) for y in ys]


def solve_nu(theta1, theta2, zeta, psi, z, *, damping=DAMPING, tol=TOL,
             max_iter=MAX_ITER, steps=CONTINUATION_STEPS, info=False):
    """(nu1, nu2) at z in the upper half plane.

    nu1 = (theta1/theta) / (-z - nu2 - zeta^2 nu2 / (1 - zeta^2 psi nu1 nu2)),
    nu2 likewise with the indices swapped.
    """
    z = complex(z)
    if not z.imag > 0:
        raise ValidationError("solve_nu needs Im z > 0")
    if theta1 <= 0 or theta2 <= 0 or zeta <= 0 or psi < 0:
        raise ValidationError("solve_nu needs theta1, theta2, zeta > 0 and psi >= 0")
    th = theta1 + theta2
    r1, r2 = theta1 / th, theta2 / th
    z2 = zeta * zeta
    path = _im_path(z, steps)
    n1 = -r1 / path[0]
    n2 = -r2 / path[0]
    step = lambda a, b, zz: _nu_map(a, b, r1, r2, z2, psi, zz)
    n1, n2, its = _damped(step, n1, n2, path, tol, max_iter, damping)
    if n1.imag < -1e-12 or n2.imag < -1e-12:
        raise BranchFailure(f"nu left the upper half plane: {n1}, {n2}")
    f1, f2 = step(n1, n2, z)
    res = max(abs(f1 - n1), abs(f2 - n2))
    if res > 1e-12 * max(1.0, abs(n1), abs(n2)):
        raise SolverFailure(f"nu residual {res:.2e} too large", residual=res)
    if info:
        return n1, n2, {"iterations": its, "residual": res}
    return n1, n2


def nu_psi0_closed_form(theta1, theta2, zeta, z):
    """Explicit nu2 at psi = 0 (quadratic root); nu1 by swapping indices."""
    th = theta1 + theta2
    z = complex(z)
    c = z * z / (1 + zeta * zeta)

    def one(ta, tb):
        b = (ta - tb) / th + c
        disc = cmath.sqrt(b * b - 4 * (ta / th) * c)
        cands = [(-b - disc) / (2 * z), (-b + disc) / (2 * z)]
        # the resolvent branch has non-negative imaginary part
        cands.sort(key=lambda v: -v.imag)
        return cands[0]

    return one(theta1, theta2), one(theta2, theta1)


# ---------------------------------------------------------------------------
# tau system

def tau_residuals(t1, t2, psi1, psi2, zeta, z):
    """The two cubic equations, plus the magnitude of their largest term."""
    A = zeta * zeta
    r = psi1 / psi2
    core = A * t1 * t2 * (z * t1 - 1)
    e1 = core + r * (A * t1 * t2 + (t2 - t1) / psi2)
    e2 = core + (t1 - t2) * (t1 + A * t2) / psi2
    scale = max(abs(A * t1 * t2 * z * t1), abs(A * t1 * t2), abs(r * A * t1 * t2),
                abs(r * t1 / psi2), abs(r * t2 / psi2), abs(t1 * t1 / psi2),
                abs(A * t2 * t2 / psi2), abs((A - 1) * t1 * t2 / psi2), 1e-300)
    return e1, e2, scale


def _tau_jacobian(t1, t2, psi1, psi2, zeta, z):
    A = zeta * zeta
    r = psi1 / psi2
    base1 = A * t2 * (2 * z * t1 - 1)
    base2 = A * t1 * (z * t1 - 1)
    J = np.array([
        [base1 + r * (A * t2 - 1 / psi2), base2 + r * (A * t1 + 1 / psi2)],
        [base1 + (2 * t1 + (A - 1) * t2) / psi2, base2 + ((A - 1) * t1 - 2 * A * t2) / psi2],
    ])
    dz = A * t1 * t1 * t2
    return J, np.array([dz, dz])


def _newton_tau(t1, t2, psi1, psi2, zeta, z, max_iter=100):
    # Newton in (log tau1, log tau2) on the equations divided by tau1 tau2;
    # this removes the spurious root at the origin and keeps iterates positive
    s = np.log([t1, t2])
    for it in range(max_iter):
        t1, t2 = np.exp(s)
        e1, e2, _ = tau_residuals(t1, t2, psi1, psi2, zeta, z)
        J, _ = _tau_jacobian(t1, t2, psi1, psi2, zeta, z)
        p = t1 * t2
        G = np.array([e1, e2]) / p
        JG = (J - np.outer([e1, e2], [1 / t1, 1 / t2])) / p * np.array([t1, t2])
        try:
            step = np.linalg.solve(JG, G)
        except np.linalg.LinAlgError as exc:
            raise SolverFailure(
                f"singular Newton Jacobian (cond={np.linalg.cond(JG):.2e})") from exc
        if not np.all(np.isfinite(step)):
            raise SolverFailure("Newton step not finite")
        step = np.clip(step, -2.0, 2.0)
        s = s - step
        if np.max(np.abs(step)) <= 1e-15:
            break
    t1, t2 = np.exp(s)
    return float(t1), float(t2), it + 1


def tau_by_newton(psi1, psi2, zeta, lam_bar, steps=CONTINUATION_STEPS, seed=None):
    """Newton on the cubics with continuation in lambda_bar from the heavy-ridge end."""
    top = 1e3 * max(1.0, lam_bar)
    its = 0
    if seed is None:
        t1 = t2 = 1.0 / top
        for u in np.geomspace(top, lam_bar, steps):
            t1, t2, k = _newton_tau(t1, t2, psi1, psi2, zeta, u)
            its += k
    else:
        t1, t2, its = _newton_tau(seed[0], seed[1], psi1, psi2, zeta, lam_bar)
    return t1, t2, its


def _polish_nu(n1, n2, r1, r2, z2, psi, z, dps=POLISH_DPS):
    """Newton on nu = map(nu) in extended precision, started from the float solution."""
    with mpmath.workdps(dps):
        r1, r2, z2, psi, z = (mpmath.mpf(r1), mpmath.mpf(r2), mpmath.mpf(z2), mpmath.mpf(psi),
                              mpmath.mpc(z))

        def f1(a, b):
            return a - _nu_map(a, b, r1, r2, z2, psi, z)[0]

        def f2(a, b):
            return b - _nu_map(a, b, r1, r2, z2, psi, z)[1]

        try:
            a, b = mpmath.findroot([f1, f2], (mpmath.mpc(n1), mpmath.mpc(n2)))
        except (ValueError, ZeroDivisionError) as exc:
            raise SolverFailure(f"extended-precision nu polish failed: {exc}") from exc
    return a, b


def tau_by_nu(psi1, psi2, zeta, lam_bar, **kw):
    """Primary route: nu at z = i sqrt(theta1 u / theta), mapped to (tau1, tau2)."""
    psi = psi1 + psi2
    th1, th2 = psi1, psi2
    th = th1 + th2
    z = 1j * math.sqrt(th1 * lam_bar / th)
    n1, n2, info = solve_nu(th1, th2, zeta, psi, z, info=True, **kw)
    if max(th1, th2) > EXTREME_RATIO * min(th1, th2):
        n1, n2 = _polish_nu(n1, n2, th1 / th, th2 / th, zeta * zeta, psi, z)
        with mpmath.workdps(POLISH_DPS):
            c = -1j * mpmath.sqrt(mpmath.mpf(th1) * th / (mpmath.mpf(th2) ** 2 * lam_bar))
            t1 = complex(c * n2)
            t2 = complex(c * n2 / (1 - mpmath.mpf(zeta) ** 2 * psi * n1 * n2))
    else:
        c = -1j * math.sqrt(th1 * th / (th2 * th2 * lam_bar))
        t1 = c * n2
        t2 = c * n2 / (1 - zeta * zeta * psi * n1 * n2)
    if abs(t1.imag) > 1e-8 * abs(t1) or abs(t2.imag) > 1e-8 * abs(t2):
        raise BranchFailure(f"tau not real: {t1}, {t2}")
    return t1.real, t2.real, info["iterations"]


def tau_derivatives(sol, psi1, psi2, zeta, lam_bar):
    """(tau1', tau2') by implicit differentiation of the cubics in z."""
    J, g = _tau_jacobian(sol.tau1, sol.tau2, psi1, psi2, zeta, lam_bar)
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond > 1e14:
        raise DerivativeFailure(f"implicit-derivative system singular (cond={cond:.2e})")
    d = np.linalg.solve(J, -g)
    return float(d[0]), float(d[1])


def tau_closed_form(gamma, zeta, lam_bar):
    """tau1 = tau2 below the integer level (psi1 = psi2 = 0, theta1/theta2 = gamma)."""
    _check_lambda(lam_bar)
    if gamma <= 0 or zeta <= 0:
        raise ValidationError("tau_closed_form needs gamma, zeta > 0")
    z = lam_bar
    c = gamma / (1 + zeta * zeta)
    A = 1 - gamma - c * z
    S = math.sqrt(A * A + 4 * c * z)
    if A >= 0:
        tau = (A + S) / (2 * z)
    else:
        # same root, written without cancellation
        tau = 2 * c / (S - A)
    dA = -c
    dS = (A * dA + 2 * c) / S
    dtau = ((dA + dS) * z - (A + S)) / (2 * z * z)
    return FixedPointSolution(tau, tau, dtau, dtau, 0.0, 0.0, 0, "closed_form")


def solve_tau(psi1, psi2, zeta, lam_bar, theta1=None, theta2=None):
    """Certified (tau1, tau2, tau1', tau2') at z = lambda_bar."""
    _check_lambda(lam_bar)
    if zeta <= 0:
        raise ValidationError("zeta must be positive")
    if psi1 < 0 or psi2 < 0:
        raise ValidationError("psi1, psi2 must be >= 0")
    if psi1 == 0 and psi2 == 0:
        if theta1 is None or theta2 is None:
            raise ValidationError("below-level solve needs theta1 and theta2")
        return tau_closed_form(theta1 / theta2, zeta, lam_bar)
    if psi1 == 0 or psi2 == 0:
        raise ValidationError("critical regime needs psi1, psi2 both positive or both zero")
    if not (math.isfinite(psi1) and math.isfinite(psi2)):
        raise ValidationError("infinite psi belongs to the closed-form regimes")

    a1, a2, its = tau_by_nu(psi1, psi2, zeta, lam_bar)
    try:
        b1, b2, nits = tau_by_newton(psi1, psi2, zeta, lam_bar)
        seeded = False
    except SolverFailure:
        b1, b2, nits = tau_by_newton(psi1, psi2, zeta, lam_bar, seed=(a1, a2))
        seeded = True
    gap = max(abs(a1 - b1) / abs(b1), abs(a2 - b2) / abs(b2))
    if gap > PATH_FAIL:
        raise ConsistencyFailure(
            f"nu route ({a1:.12g}, {a2:.12g}) and Newton route ({b1:.12g}, {b2:.12g}) "
            f"disagree (rel gap {gap:.2e})")

    cands = []
    for t1, t2, method in ((a1, a2, "nu_iteration"), (b1, b2, "newton")):
        e1, e2, scale = tau_residuals(t1, t2, psi1, psi2, zeta, lam_bar)
        cands.append((max(abs(e1), abs(e2)) / scale, t1, t2, e1, e2, method))
    cands.sort(key=lambda c: c[0])
    sres, t1, t2, e1, e2, method = cands[0]
    if t1 <= 0 or t2 <= 0:
        raise BranchFailure(f"non-positive fixed point ({t1}, {t2})")
    if sres > RESIDUAL_CERT:
        raise SolverFailure(f"fixed point residual {sres:.2e} above certification level",
                            residual=sres)
    sol = FixedPointSolution(t1, t2, 0.0, 0.0, abs(e1), abs(e2), its + nits,
                             method + ("+seeded" if seeded else ""), gap, sres)
    sol.dtau1, sol.dtau2 = tau_derivatives(sol, psi1, psi2, zeta, lam_bar)
    return sol


# ---------------------------------------------------------------------------
# Stieltjes pair for the block matrix [[0, Zt^T], [Zt, 0]], Zt = sigma(XW^T)/sqrt(n+p)

def _m_map(m1, m2, r1, r2, mu_l2, mu_g2, psi, z):
    D = 1 - psi * mu_l2 * m1 * m2
    return (r1 / (-z - mu_g2 * m2 - mu_l2 * m2 / D),
            r2 / (-z - mu_g2 * m1 - mu_l2 * m1 / D))


def solve_stieltjes(theta1, theta2, mu_ell, mu_gt, psi, z, *, damping=DAMPING, tol=TOL,
                    max_iter=MAX_ITER, steps=CONTINUATION_STEPS):
    """(m1, m2) at z, Im z > 0, by damped iteration continued from large Im z."""
    z = complex(z)
    if not z.imag > 0:
        raise ValidationError("solve_stieltjes needs Im z > 0")
    th = theta1 + theta2
    r1, r2 = theta1 / th, theta2 / th
    mu_l2, mu_g2 = mu_ell * mu_ell, mu_gt * mu_gt
    path = _im_path(z, steps)
    m1 = -r1 / path[0]
    m2 = -r2 / path[0]
    step = lambda a, b, zz: _m_map(a, b, r1, r2, mu_l2, mu_g2, psi, zz)
    m1, m2, _ = _damped(step, m1, m2, path, tol, max_iter, damping)
    if m1.imag < -1e-12 or m2.imag < -1e-12:
        raise BranchFailure(f"Stieltjes pair left the upper half plane: {m1}, {m2}")
    return StieltjesPoint(z, m1, m2)


def _stieltjes_grid(theta1, theta2, mu_ell, mu_gt, psi, zs, damping=DAMPING, tol=1e-12,
                    max_iter=MAX_ITER, steps=CONTINUATION_STEPS):
    """Vectorised version of solve_stieltjes over an array of z values."""
    zs = np.asarray(zs, dtype=complex)
    th = theta1 + theta2
    r1, r2 = theta1 / th, theta2 / th
    mu_l2, mu_g2 = mu_ell * mu_ell, mu_gt * mu_gt
    top = 1e3 * max(1.0, float(np.max(np.abs(zs))))
    m1 = -r1 / (zs.real + 1j * top)
    m2 = -r2 / (zs.real + 1j * top)
    for y in np.geomspace(top, float(zs.imag.min()), steps):
        zz = zs.real + 1j * np.maximum(zs.imag, y)
        for it in range(max_iter):
            f1, f2 = _m_map(m1, m2, r1, r2, mu_l2, mu_g2, psi, zz)
            d1 = f1 - m1
            d2 = f2 - m2
            m1 = m1 + damping * d1
            m2 = m2 + damping * d2
            scale = np.maximum(1.0, np.maximum(np.abs(m1), np.abs(m2)))
            if np.max((np.abs(d1) + np.abs(d2)) / scale) < 2 * tol:
                break
        else:
            raise SolverFailure("Stieltjes grid iteration did not converge",
                                residual=float(np.max(np.abs(d1) + np.abs(d2))))
    return m1, m2


def singular_value_density(theta1, theta2, mu_ell, mu_gt, psi, grid, eta=1e-3):
    """Limiting density of the singular values of Z = sigma(XW^T)/sqrt(p).

    The block matrix eigenvalue density (1/pi) Im m(E + i eta) puts mass
    min(n,p)/(n+p) on E > 0; rescaling by sqrt(theta/theta1) maps the
    singular values of Zt to those of Z.  The atom at zero (|n - p| null
    directions) is subtracted, so the result integrates to one over the
    min(n, p) singular values.
    """
    if not 1e-4 <= eta <= 1e-2:
        raise ValidationError("eta must lie in [1e-4, 1e-2]")
    grid = np.asarray(grid, dtype=float)
    th = theta1 + theta2
    c = math.sqrt(th / theta1)
    E = grid / c
    m1, m2 = _stieltjes_grid(theta1, theta2, mu_ell, mu_gt, psi, E + 1j * eta)
    rho = (m1 + m2).imag / math.pi
    # the |n - p| zero eigenvalues contribute atom * eta / (pi (E^2 + eta^2)); drop it
    atom = abs(theta1 - theta2) / th
    rho = rho - atom * eta / (math.pi * (E * E + eta * eta))
    frac = min(theta1, theta2) / th
    return rho / frac / c
