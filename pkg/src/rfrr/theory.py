"""Asymptotic test error, training error and norm of RFRR in every regime.

Scalings: p ~ theta1 d^kappa1, n ~ theta2 d^kappa2, level ell = ceil(min kappa).
psi_i = lim count_i / (d^ell / ell!) is 0, finite or infinite depending on
where kappa_i sits relative to ell.  When (d, n, p) are given the finite
ratios count/(d^ell/ell!) are used directly.
"""
from dataclasses import dataclass, field, asdict
import math

from .errors import ValidationError
from .fixed_point import LAMBDA_FLOOR, solve_tau

PSI_INF = 1e10
_INT_TOL = 1e-12


def _level(kappa):
    k = round(kappa)
    if abs(kappa - k) < _INT_TOL:
        return int(k), True
    return int(math.ceil(kappa)), False


@dataclass
class ScalingRegime:
    kappa1: float
    kappa2: float
    theta1: float
    theta2: float
    d: int = None
    n: int = None
    p: int = None
    ell: int = field(init=False)
    psi1: float = field(init=False)
    psi2: float = field(init=False)
    tag: str = field(init=False)

    @property
    def family(self):
        return self.tag.rsplit("_", 2)[0]

    @property
    def at_level(self):
        return self.tag.endswith("at_level")

    @property
    def gamma(self):
        return self.theta1 / self.theta2


def _psi(kappa, theta, ell, count, d):
    if d is not None and count is not None:
        return count * math.factorial(ell) / float(d) ** ell
    if abs(kappa - ell) < _INT_TOL:
        return theta * math.factorial(ell)
    return 0.0 if kappa < ell else math.inf


def classify(kappa1, kappa2, theta1=1.0, theta2=1.0, d=None, n=None, p=None):
    """Fill a ScalingRegime (level, psi's, regime tag)."""
    for name, v in (("kappa1", kappa1), ("kappa2", kappa2), ("theta1", theta1), ("theta2", theta2)):
        if not v > 0:
            raise ValidationError(f"{name} must be positive")
    r = ScalingRegime(kappa1, kappa2, theta1, theta2, d, n, p)
    ell, at = _level(min(kappa1, kappa2))
    r.ell = max(ell, 1) if min(kappa1, kappa2) > 0 else ell
    if abs(kappa1 - kappa2) < _INT_TOL:
        fam = "critical"
    elif kappa1 > kappa2:
        fam = "overparam"
    else:
        fam = "underparam"
    r.tag = f"{fam}_{'at' if at else 'below'}_level"
    r.psi1 = _psi(kappa1, theta1, r.ell, p, d)
    r.psi2 = _psi(kappa2, theta2, r.ell, n, d)
    return r


def regime_from_counts(d, n, p, kappa1=None, kappa2=None):
    """Regime for an explicit (d, n, p); kappas default to log(count)/log(d) rounded to 1e-9."""
    k1 = kappa1 if kappa1 is not None else math.log(p) / math.log(d)
    k2 = kappa2 if kappa2 is not None else math.log(n) / math.log(d)
    return classify(k1, k2, p / d ** k1, n / d ** k2, d=d, n=n, p=p)


@dataclass
class RiskPrediction:
    B_test: float
    V_test: float
    alpha_c: float
    B_norm: float
    V_norm: float
    norm_convention: str
    F_ell2: float = 0.0
    F_gt2: float = 0.0
    rho2: float = 0.0
    regime: str = ""
    stair: tuple = ()
    extras: dict = field(default_factory=dict)

    @property
    def R_test(self):
        return self.F_ell2 * self.B_test + self.F_gt2 + (self.F_gt2 + self.rho2) * self.V_test

    @property
    def R_train(self):
        return self.alpha_c * (self.R_test + self.rho2)

    @property
    def L_norm(self):
        return self.F_ell2 * self.B_norm + (self.F_gt2 + self.rho2) * self.V_norm

    @property
    def bias(self):
        return self.F_ell2 * self.B_test + self.F_gt2 * (1 + self.V_test)

    @property
    def variance(self):
        return self.rho2 * self.V_test

    def with_target(self, F_ell, F_gt2, rho2, stair=()):
        self.F_ell2 = F_ell * F_ell
        self.F_gt2 = F_gt2
        self.rho2 = rho2
        self.stair = tuple(stair)
        return self

    def as_dict(self):
        out = asdict(self)
        for k in ("R_test", "R_train", "L_norm", "bias", "variance"):
            out[k] = getattr(self, k)
        return out


def _check(zeta, lam_bar, mu_gt2):
    if not zeta > 0:
        raise ValidationError("zeta must be positive")
    if not lam_bar >= LAMBDA_FLOOR:
        raise ValidationError(f"lambda_bar below the supported floor {LAMBDA_FLOOR:g}")
    if not mu_gt2 > 0:
        raise ValidationError("mu_>ell^2 must be positive")


def critical_factors(psi1, psi2, zeta, lam_bar, mu_gt2, gamma=None):
    """(B_test, V_test, alpha_c, B_norm, V_norm) from the tau fixed point."""
    sol = solve_tau(psi1, psi2, zeta, lam_bar,
                    theta1=gamma if gamma is not None else None,
                    theta2=1.0 if gamma is not None else None)
    t1, t2, d1, d2 = sol.tau1, sol.tau2, sol.dtau1, sol.dtau2
    B = -d2 / t1 ** 2
    V = -d1 / t1 ** 2 - 1
    a = lam_bar ** 2 * t1 ** 2
    Bn = (t2 + lam_bar * d2) / mu_gt2
    Vn = (t1 + lam_bar * d1) / mu_gt2
    return (B, V, a, Bn, Vn), sol


def overparam_factors(psi2, zeta, lam_bar, mu_gt2, at_level=True):
    z2 = zeta * zeta
    eta = (lam_bar + 1) / z2
    if at_level and psi2 > 0:
        th = (math.sqrt((psi2 + eta + 1) ** 2 - 4 * psi2) + psi2 - 1 - eta) / (2 * eta * psi2)
        den = eta * psi2 * th * th + 1
        B = (psi2 ** 2 * eta ** 2 * th ** 3
             + (psi2 * eta ** 2 + psi2 * eta - psi2 ** 2 * eta) * th ** 2 + 1 - psi2) / den
        V = (psi2 * th - psi2 * eta * th * th) / den
    else:
        th = 1 / (1 + eta)
        B, V = 1.0, 0.0
    a = lam_bar ** 2 * th * th / z2 ** 2
    Bn = ((1 - eta * th) / z2 - lam_bar * B * th * th / z2 ** 2) / mu_gt2
    Vn = (th / z2 - lam_bar * (V + 1) * th * th / z2 ** 2) / mu_gt2
    return B, V, a, Bn, Vn, th


def underparam_factors(psi1, zeta, mu_gt2, at_level=True):
    if not (at_level and psi1 > 0):
        return 1.0, 0.0, 1.0, 0.0, 0.0, None
    iz2 = 1 / (zeta * zeta)
    z2 = zeta * zeta
    B = 0.5 * (1 - psi1 - iz2 + math.sqrt((1 + psi1 + iz2) ** 2 - 4 * psi1))
    b = 1 + z2 - z2 * psi1
    disc = math.sqrt(b * b + 4 * z2 * psi1)
    # positive root of z2 psi1 th^2 + b th - 1 = 0, written without cancellation
    th = 2 / (b + disc) if b >= 0 else (disc - b) / (2 * z2 * psi1)
    Bn = (th * z2 * (1 - psi1) * psi1 + th * th * z2 * psi1 ** 2) / (1 + z2 * (1 - psi1 + 2 * psi1 * th))
    return B, 0.0, 1.0, Bn / mu_gt2, 0.0, th


def predict_critical(regime, zeta, lam_bar, F_ell=0.0, F_gt2=0.0, rho2=0.0, mu_gt2=1.0):
    _check(zeta, lam_bar, mu_gt2)
    psi1, psi2 = regime.psi1, regime.psi2
    extras = {}
    if psi1 > PSI_INF and psi2 > PSI_INF:
        raise ValidationError("both psi infinite: not a critical configuration")
    if psi1 > PSI_INF:
        out = predict_overparam(regime, zeta, lam_bar, F_ell, F_gt2, rho2, mu_gt2, psi2=psi2)
        out.extras["routed"] = "overparam"
        return out
    if psi2 > PSI_INF:
        out = predict_underparam(regime, zeta, F_ell, F_gt2, rho2, mu_gt2, psi1=psi1)
        # keep the per-n norm convention of the critical regime
        out.B_norm *= psi1 / psi2 if psi2 else 0.0
        out.norm_convention = "per_n"
        out.extras["routed"] = "underparam"
        return out
    if psi1 == 0 and psi2 == 0:
        f, sol = critical_factors(0.0, 0.0, zeta, lam_bar, mu_gt2, gamma=regime.gamma)
    else:
        f, sol = critical_factors(psi1, psi2, zeta, lam_bar, mu_gt2)
    extras.update(tau1=sol.tau1, tau2=sol.tau2, dtau1=sol.dtau1, dtau2=sol.dtau2,
                  method=sol.method, path_gap=sol.path_gap, residual=sol.scaled_residual)
    B, V, a, Bn, Vn = f
    return RiskPrediction(B, V, a, Bn, Vn, "per_n", regime=regime.tag,
                          extras=extras).with_target(F_ell, F_gt2, rho2)


def predict_overparam(regime, zeta, lam_bar, F_ell=0.0, F_gt2=0.0, rho2=0.0, mu_gt2=1.0,
                      psi2=None):
    """Also the kernel ridge regression (p = infinity) prediction."""
    _check(zeta, lam_bar, mu_gt2)
    psi2 = regime.psi2 if psi2 is None else psi2
    at = regime.at_level or (0 < psi2 < math.inf)
    B, V, a, Bn, Vn, th = overparam_factors(psi2, zeta, lam_bar, mu_gt2, at_level=at)
    return RiskPrediction(B, V, a, Bn, Vn, "per_n", regime=regime.tag,
                          extras={"vartheta": th}).with_target(F_ell, F_gt2, rho2)


def predict_underparam(regime, zeta, F_ell=0.0, F_gt2=0.0, rho2=0.0, mu_gt2=1.0, psi1=None):
    """Also the approximation-error (n = infinity) prediction."""
    if not zeta > 0 or not mu_gt2 > 0:
        raise ValidationError("zeta and mu_>ell^2 must be positive")
    psi1 = regime.psi1 if psi1 is None else psi1
    at = regime.at_level or (0 < psi1 < math.inf)
    B, V, a, Bn, Vn, th = underparam_factors(psi1, zeta, mu_gt2, at_level=at)
    return RiskPrediction(B, V, a, Bn, Vn, "per_p", regime=regime.tag,
                          extras={"vartheta": th}).with_target(F_ell, F_gt2, rho2)


def predict(regime, scalars, freqs, rho2=0.0):
    """Dispatch on the regime family and attach the staircase levels."""
    fam = regime.family
    if fam == "critical":
        out = predict_critical(regime, scalars.zeta, scalars.lam_bar, freqs.F_ell, freqs.F_gt2,
                               rho2, scalars.mu_gt2)
    elif fam == "overparam":
        out = predict_overparam(regime, scalars.zeta, scalars.lam_bar, freqs.F_ell, freqs.F_gt2,
                                rho2, scalars.mu_gt2)
    else:
        out = predict_underparam(regime, scalars.zeta, freqs.F_ell, freqs.F_gt2, rho2,
                                 scalars.mu_gt2)
    out.stair = freqs.stair
    out.extras["convention"] = scalars.convention
    return out


def gcv_alpha(regime, zeta, lam_bar):
    """alpha_c, the ratio R_train / (R_test + rho^2)."""
    fam = regime.family
    if fam == "critical":
        return predict_critical(regime, zeta, lam_bar).alpha_c
    if fam == "overparam":
        return predict_overparam(regime, zeta, lam_bar).alpha_c
    return 1.0
