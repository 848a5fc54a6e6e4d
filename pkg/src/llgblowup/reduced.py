"""Orthogonality moments, the log-singular reduced operator B0, and the
parameter-inequality checker for the gluing exponents."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Callable

import numpy as np
from scipy.integrate import quad


# --------------------------------------------------------------------------
# moments

def _m_scale(x):
    return 0.5 * (-3 * x**2 - 8 * x**4) * (x * x + 1) ** -3.5


def _m_rot(x):
    return (3 * x**2 - 4 * x**4) * (x * x + 1) ** -4.5


def _m_mode1a(x):
    return 2 * x**3 / (x + math.sqrt(x * x + 1)) * (x * x + 1) ** -2.5


def _m_mode1b(x):
    s = math.sqrt(x * x + 1)
    return 4 * x**4 * (x * x + x * s + 1) / (x + s) * (x * x + 1) ** -4


def _m_norm(x):
    return 4 * x**3 / (x * x + 1) ** 3


def _m_odd(x):
    return -2 * x * (x * x - 1) / (x * x + 1) ** 3


MOMENTS = [
    ("scale", _m_scale, -1.0),
    ("rotation", _m_rot, 0.0),
    ("mode1_a", _m_mode1a, 5.0 / 3.0 - math.log(4.0)),
    ("mode1_b", _m_mode1b, 0.8),
    ("normalisation", _m_norm, 1.0),
    ("cross", _m_odd, 0.0),
]


def _integrate_half_line(f: Callable[[float], float], tol: float = 1e-12) -> float:
    """int_0^inf f by splitting at 1 and mapping the tail x = 1/s."""
    head = quad(f, 0.0, 1.0, epsabs=tol, epsrel=tol, limit=200)[0]
    tail = quad(lambda s: f(1.0 / s) / (s * s) if s > 0 else 0.0, 0.0, 1.0,
                epsabs=tol, epsrel=tol, limit=200)[0]
    return head + tail


def moment_table(tol: float = 1e-12):
    """Rows (name, computed, expected)."""
    return [(name, _integrate_half_line(f, tol), exact) for name, f, exact in MOMENTS]


# --------------------------------------------------------------------------
# rate profile and B0

@dataclass
class RateProfile:
    T: float
    kappa: float
    t: np.ndarray
    p: np.ndarray
    pdot: np.ndarray


def _check_T(T):
    if not (0 < T < math.exp(-1)):
        raise ValueError("need 0 < T < 1/e")


def p0_value(t, T: float, kappa: float = 1.0, tol: float = 1e-13) -> float:
    """kappa |ln T| int_0^{T-t} du / ln(u)^2, by quadrature in v = -ln u."""
    _check_T(T)
    u = T - t
    if u <= 0:
        return 0.0
    v0 = -math.log(u)
    # du = -u dv, u = e^{-v}: int_{v0}^inf e^{-v} / v^2 dv
    val = quad(lambda v: math.exp(-v) / (v * v), v0, np.inf, epsabs=0, epsrel=tol, limit=200)[0]
    return kappa * abs(math.log(T)) * val


def p0_dot(t, T: float, kappa: float = 1.0):
    t = np.asarray(t, dtype=float)
    return -kappa * abs(math.log(T)) / np.log(T - t) ** 2


def p0_profile(T: float, kappa: float = 1.0, n: int = 200) -> RateProfile:
    """Leading rate profile sampled on nodes clustered towards t = T."""
    _check_T(T)
    gaps = T * np.geomspace(1.0, 1e-12, n)
    t = T - gaps
    t = np.append(t, T)
    p = np.array([p0_value(ti, T, kappa) for ti in t])
    pdot = np.append(p0_dot(t[:-1], T, kappa), 0.0)
    return RateProfile(T, kappa, t, p, pdot)


def lam_star(t, T: float):
    """Ansatz scale |ln T| (T - t) / ln(T - t)^2."""
    u = T - np.asarray(t, dtype=float)
    return abs(math.log(T)) * u / np.log(u) ** 2


def lam_star_dot(t, T: float):
    u = T - np.asarray(t, dtype=float)
    L = np.log(u)
    return -abs(math.log(T)) * (1.0 / L**2 - 2.0 / L**3)


def b0_apply(pdot: Callable[[float], complex], t: float, lam_t: float,
             tol: float = 1e-11) -> complex:
    """int_0^{t - lam^2} pdot(s) / (t - s) ds.

    With w = ln(t - s) the integrand becomes pdot(t - e^w), smooth on
    [2 ln lam, ln t]; that substitution clusters nodes at the singular end.
    """
    lo = 2 * math.log(lam_t)
    hi = math.log(t)
    if lo >= hi:
        raise ValueError("empty integration interval: t <= lam^2")
    f = lambda w: pdot(t - math.exp(w))
    re = quad(lambda w: complex(f(w)).real, lo, hi, epsabs=0, epsrel=tol, limit=400)[0]
    im = quad(lambda w: complex(f(w)).imag, lo, hi, epsabs=0, epsrel=tol, limit=400)[0]
    return complex(re, im)


def b0_relative_error(T: float, frac: float, kappa: float = 1.0):
    """(B0[p0] + kappa)/kappa at t = frac*T with lam = lam_star, and the tolerance
    3 ln|ln(T-t)| / |ln(T-t)|."""
    t = frac * T
    val = b0_apply(lambda s: p0_dot(s, T, kappa), t, float(lam_star(t, T)))
    L = abs(math.log(T - t))
    return abs(val.real + kappa) / kappa, 3 * math.log(L) / L, val


# --------------------------------------------------------------------------
# gluing parameters

@dataclass
class GluingParams:
    Theta: float
    beta: float
    sigma0: float
    delta0: float
    nu: float
    l: float
    alpha: float
    alpha0: float

    @property
    def m(self) -> float:
        return self.Theta - self.alpha * (1 - self.beta)

    @classmethod
    def from_dict(cls, d: dict) -> "GluingParams":
        keys = cls.__dataclass_fields__.keys()
        missing = [k for k in keys if k not in d]
        if missing:
            raise KeyError(f"missing parameters: {missing}")
        extra = set(d) - set(keys)
        if extra:
            raise KeyError(f"unknown parameters: {sorted(extra)}")
        return cls(**{k: float(d[k]) for k in keys})


def constraints(g: GluingParams):
    """Every inequality as (label, slack); feasible iff each slack > 0."""
    Th, b, s0, d0, nu, l, al, a0 = (g.Theta, g.beta, g.sigma0, g.delta0, g.nu,
                                      g.l, g.alpha, g.alpha0)
    return [
        ("nu - delta0 - 1/2 > 0", nu - d0 - 0.5),
        ("Theta + beta + delta0 - nu < 0", -(Th + b + d0 - nu)),
        ("3 beta < 1 + Theta", 1 + Th - 3 * b),
        ("delta0 > 0", d0),
        ("delta0 < beta", b - d0),
        ("beta < 1/2", 0.5 - b),
        ("beta (l+1) - 1 + nu - delta0 - Theta > 0", b * (l + 1) - 1 + nu - d0 - Th),
        ("Theta + 2 beta - 1 < 0", 1 - Th - 2 * b),
        ("2 beta + delta0 - nu < 0", nu - 2 * b - d0),
        ("Theta > 0", Th),
        ("Theta < beta", b - Th),
        ("alpha > 0", al),
        ("alpha < 1", 1 - al),
        ("Theta + 1/2 - beta - alpha/2 < 0", -(Th + 0.5 - b - al / 2)),
        ("sigma0 > 0", s0),
        ("beta - sigma0 - alpha/2 < 0", -(b - s0 - al / 2)),
        ("1 - sigma0 - (1+alpha)(1-beta) < 0", -(1 - s0 - (1 + al) * (1 - b))),
        ("Theta + 2 sigma0 - beta < 0", b - Th - 2 * s0),
        ("nu > 0", nu),
        ("nu < 1", 1 - nu),
        ("l > 0", l),
        ("l < 1", 1 - l),
        ("nu + beta l - 1 < 0", 1 - nu - b * l),
        ("alpha0 > 0", a0),
        ("alpha0 < 1/2", 0.5 - a0),
        ("2 beta - 1 + alpha0 > 0", 2 * b - 1 + a0),
        ("1 + Theta - alpha(1-beta) + (1+alpha0) alpha/2 - 2 beta > nu - delta0",
         1 + Th - al * (1 - b) + (1 + a0) * al / 2 - 2 * b - (nu - d0)),
        ("2 Theta < alpha", al - 2 * Th),
    ]


def param_feasible(g: GluingParams):
    """Return (ok, list of violated inequality labels)."""
    bad = [label for label, slack in constraints(g) if not slack > 0]
    return (not bad), bad


def box_intervals(partial: dict):
    """Nested intervals of the published feasible box, given the values fixed so far.

    Yields (name, lo, hi) in dependency order; ``partial`` is filled by the caller.
    """
    Th = partial.get("Theta")
    b = partial.get("beta")
    s = {}
    s["Theta"] = (0.0, 0.25)
    if Th is not None:
        s["beta"] = (0.25, (1 + Th) / 4)
    if Th is not None and b is not None:
        s["sigma0"] = (0.0, (b - Th) / 2)
        s["delta0"] = (0.0, (1 - 4 * Th) / 4)
        d0 = partial.get("delta0")
        if d0 is not None:
            s["nu"] = (1 - 2 * b + d0 + Th, (3 - 4 * b + 4 * d0 + 4 * Th) / 4)
            nu = partial.get("nu")
            if nu is not None:
                s["l"] = ((1 - b + d0 - nu + Th) / b, 1.0)
                s["alpha0"] = (max(1 - 2 * b, 2 * nu - 2 * d0 + 2 * b - 1 - 2 * Th), 0.5)
                a0 = partial.get("alpha0")
                s0 = partial.get("sigma0")
                if a0 is not None and s0 is not None:
                    s["alpha"] = (max(2 * Th + 1 - 2 * b, 2 * b - 2 * s0, (b - s0) / (1 - b),
                                      2 * (nu - d0 + 2 * b - 1 - Th) / (2 * b + a0 - 1)), 1.0)
    return s


ORDER = ["Theta", "beta", "sigma0", "delta0", "nu", "l", "alpha0", "alpha"]


def sample_box(rng: np.random.Generator, where: str = "uniform") -> GluingParams:
    """Draw a point from the published box, each coordinate inside its
    (conditional) interval.  ``where="mid"`` takes interval midpoints."""
    vals: dict = {}
    for name in ORDER:
        lo, hi = box_intervals(vals)[name]
        if where == "mid":
            vals[name] = 0.5 * (lo + hi)
        else:
            # stay off the open endpoints
            eps = 1e-9 * (hi - lo)
            vals[name] = rng.uniform(lo + eps, hi - eps)
    return GluingParams(**vals)


def sample_outside(rng: np.random.Generator) -> tuple:
    """A box sample with one coordinate pushed past an endpoint of its interval.

    The excursion is 30-100% of the interval width.  Returns
    (params, coordinate name, "lo" | "hi").
    """
    vals = asdict(sample_box(rng))
    name = ORDER[rng.integers(len(ORDER))]
    side = "lo" if rng.integers(2) == 0 else "hi"
    partial = {k: vals[k] for k in ORDER[:ORDER.index(name)]}
    lo, hi = box_intervals(partial)[name]
    step = rng.uniform(0.3, 1.0) * (hi - lo)
    vals[name] = lo - step if side == "lo" else hi + step
    return GluingParams(**vals), name, side
