"""History-driven non-local correction around a shrinking bubble.

The complex scalar

    Phi0(z, t) = -z int_0^t pdot(s)/(t-s) K0(z^2/(t-s)) ds,
    K0(zeta)   = 2 (1 - exp(-(a+ib) zeta / 4)) / zeta,

solves (a+ib) d_t Phi0 = Phi0_zz + Phi0_z/z - Phi0/z^2 - 2 (a+ib) pdot / z and
cancels the slowly decaying part of -d_t U.  All integrals are done in the
variable u = ln(t - s), where ds/(t-s) = -du and the crossover zeta = 1
sits at u = 2 ln z.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad, quad_vec
from scipy.interpolate import CubicSpline

from .geometry import BubbleParams, PhysParams, bubble_field, frame_polar, rotate_z
from .linops import vector_kernels


# --------------------------------------------------------------------------
# kernel and self-similar profile

_SERIES_CUT = 0.05
_NSER = 14
_FACT = np.array([math.factorial(n) for n in range(_NSER + 3)], dtype=float)


def kernel_K0(zeta, pp: PhysParams, order: int = 0):
    """K0 or its first/second zeta-derivative; Taylor series where |c zeta/4| is small."""
    zeta = np.asarray(zeta, dtype=float)
    c = pp.c
    x = -c / 4.0
    small = np.abs(x) * zeta < _SERIES_CUT
    out = np.empty(zeta.shape, dtype=complex)
    zs = zeta[small]
    if zs.size:
        # K0 = -2 sum_{n>=1} x^n zeta^{n-1} / n!
        acc = np.zeros(zs.shape, dtype=complex)
        for n in range(order + 1, _NSER + order + 1):
            fall = _FACT[n - 1] / _FACT[n - 1 - order]
            acc += x**n * fall * zs ** (n - 1 - order) / _FACT[n]
        out[small] = -2.0 * acc
    zl = zeta[~small]
    if zl.size:
        E = np.exp(-c * zl / 4.0)
        one = -np.expm1(-c * zl / 4.0)
        if order == 0:
            out[~small] = 2.0 * one / zl
        elif order == 1:
            out[~small] = -2.0 * one / zl**2 + (c / 2.0) * E / zl
        elif order == 2:
            out[~small] = 4.0 * one / zl**3 - c * E / zl**2 - (c * c / 8.0) * E / zl
        else:
            raise ValueError("order must be 0, 1 or 2")
    return out if out.ndim else complex(out)


def profile_q0(xi: float, pp: PhysParams, tol: float = 1e-12) -> complex:
    """q0(xi) = (2 xi/(a+ib)) int_xi^inf (1 - exp(-(a+ib) eta^2/4)) eta^-3 d eta.

    For xi < 1 the integral is split at 1; the tail beyond max(xi, 1) is
    mapped by eta = 1/s onto a finite interval.
    """
    if not xi > 0:
        raise ValueError("xi must be positive")
    c = pp.c

    def g(eta):
        return -np.expm1(-c * eta * eta / 4.0) / eta**3

    def g_tail(s):
        # eta = m/s, d eta = -m/s^2 ds
        return 0.0 if s == 0 else g(m / s) * m / (s * s)

    def cq(f, lo, hi):
        re = quad(lambda v: f(v).real, lo, hi, epsabs=0, epsrel=tol, limit=400)
        im = quad(lambda v: f(v).imag, lo, hi, epsabs=0, epsrel=tol, limit=400)
        return complex(re[0], im[0])

    m = max(xi, 1.0)
    total = cq(g_tail, 0.0, 1.0)
    if xi < 1.0:
        total += cq(g, xi, 1.0)
    return 2.0 * xi / c * total


# --------------------------------------------------------------------------
# parameter histories

@dataclass
class ParamHistory:
    """Bubble parameters sampled on [0, T] (or given by closed forms)."""

    t: np.ndarray
    p: np.ndarray
    xi: np.ndarray
    pdot: Optional[np.ndarray] = None
    xidot: Optional[np.ndarray] = None
    T: Optional[float] = None
    p_fn: Optional[Callable] = None
    pdot_fn: Optional[Callable] = None
    xi_fn: Optional[Callable] = None
    xidot_fn: Optional[Callable] = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.p = np.asarray(self.p, dtype=complex)
        self.xi = np.asarray(self.xi, dtype=float).reshape(len(self.t), 2)
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time nodes must be strictly increasing")
        if np.any(np.abs(self.p) <= 0):
            raise ValueError("|p| must be positive")
        if self.T is None:
            self.T = float(self.t[-1])
        if self.p_fn is None:
            self._sp = CubicSpline(self.t, self.p)
            self._sx = CubicSpline(self.t, self.xi, axis=0)
            if self.pdot is not None:
                self._spd = CubicSpline(self.t, np.asarray(self.pdot, dtype=complex))
            else:
                self._spd = self._sp.derivative()
            if self.xidot is not None:
                self._sxd = CubicSpline(self.t, np.asarray(self.xidot, dtype=float), axis=0)
            else:
                self._sxd = self._sx.derivative()

    # evaluation -----------------------------------------------------------
    def covers(self, t) -> bool:
        t = np.asarray(t)
        return bool(np.all(t >= self.t[0] - 1e-15) and np.all(t <= self.t[-1] + 1e-15))

    def p_at(self, t):
        return self.p_fn(t) if self.p_fn else self._sp(t)

    def pdot_at(self, t):
        return self.pdot_fn(t) if self.pdot_fn else self._spd(t)

    def xi_at(self, t):
        if self.xi_fn:
            return self.xi_fn(t)
        return self._sx(t)

    def xidot_at(self, t):
        if self.xidot_fn:
            return self.xidot_fn(t)
        return self._sxd(t)

    def bubble(self, t) -> BubbleParams:
        p = complex(self.p_at(t))
        return BubbleParams(abs(p), math.atan2(p.imag, p.real), tuple(np.asarray(self.xi_at(t))))

    def pdot_consistency(self) -> float:
        """Max relative mismatch between stored pdot and a finite difference of p."""
        if self.pdot is None:
            return 0.0
        fd = np.gradient(self.p, self.t)
        scale = np.maximum(np.abs(self.pdot), 1e-300)
        return float(np.max(np.abs(fd[1:-1] - self.pdot[1:-1]) / scale[1:-1]))

    # construction ---------------------------------------------------------
    @classmethod
    def ansatz(cls, T: float, gamma0: float = 0.0, n: int = 400,
               xidot: tuple = (0.0, 0.0)) -> "ParamHistory":
        """p(t) = lam_*(t) e^{i gamma0} with lam_* = |ln T| (T-t)/ln^2(T-t); the
        centre drifts with constant velocity xidot."""
        from .reduced import lam_star, lam_star_dot
        ph = np.exp(1j * gamma0)
        v = np.asarray(xidot, dtype=float)
        t = T * (1 - np.geomspace(1.0, 1e-9, n))
        t[0] = 0.0
        return cls(
            t=t, p=lam_star(t, T) * ph, xi=np.outer(t, v), T=T,
            pdot=lam_star_dot(t, T) * ph, xidot=np.tile(v, (n, 1)),
            p_fn=lambda s: lam_star(s, T) * ph,
            pdot_fn=lambda s: lam_star_dot(s, T) * ph,
            xi_fn=lambda s: np.multiply.outer(np.asarray(s, dtype=float), v),
            xidot_fn=lambda s: np.broadcast_to(v, np.shape(s) + (2,)).copy(),
        )

    @classmethod
    def constant_rate(cls, c: complex, T: float, p0: complex = 1.0, n: int = 50):
        t = np.linspace(0.0, T, n)
        return cls(t=t, p=p0 + c * t, xi=np.zeros((n, 2)), T=T,
                   pdot=np.full(n, c, dtype=complex),
                   p_fn=lambda s: p0 + c * np.asarray(s),
                   pdot_fn=lambda s: c + 0 * np.asarray(s),
                   xi_fn=lambda s: np.zeros(np.shape(s) + (2,)),
                   xidot_fn=lambda s: np.zeros(np.shape(s) + (2,)))

    @classmethod
    def from_csv(cls, path) -> "ParamHistory":
        import csv
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError("empty history file")
        keys = {k.strip().lower().replace(" ", "_"): k for k in rows[0]}

        def col(*names):
            for nm in names:
                if nm in keys:
                    return np.array([float(r[keys[nm]]) for r in rows])
            return None

        t = col("t")
        re, im = col("re_p", "rep"), col("im_p", "imp")
        x1, x2 = col("xi1"), col("xi2")
        if t is None or re is None or im is None or x1 is None or x2 is None:
            raise ValueError("history needs columns t, Re p, Im p, xi1, xi2")
        rd, idd = col("re_pdot", "repdot"), col("im_pdot", "impdot")
        pdot = rd + 1j * idd if rd is not None and idd is not None else None
        return cls(t=t, p=re + 1j * im, xi=np.column_stack([x1, x2]), pdot=pdot)


# --------------------------------------------------------------------------
# Phi0 and derivatives

@dataclass
class CorrectionSample:
    Phi0: np.ndarray
    dz: np.ndarray
    dzz: np.ndarray
    z: np.ndarray
    t: float


def _integrands(u, z, t, hist, pp):
    """Integrand vectors of (Phi0, dz Phi0, dzz Phi0) in the variable u = ln(t-s)."""
    sig = math.exp(u)
    pd = complex(hist.pdot_at(t - sig))
    zeta = z * z / sig
    k0 = kernel_K0(zeta, pp, 0)
    k1 = kernel_K0(zeta, pp, 1)
    k2 = kernel_K0(zeta, pp, 2)
    f0 = -z * pd * k0
    f1 = -pd * (k0 + 2 * zeta * k1)
    f2 = -pd * (6 * zeta * k1 + 4 * zeta**2 * k2) / z
    return f0, f1, f2


_TAIL = 36.0   # integrate u down to 2 ln z_min - _TAIL; the rest is O(e^-36)


def phi0_eval(z, t: float, hist: ParamHistory, pp: PhysParams,
              epsrel: float = 1e-10) -> CorrectionSample:
    """Phi0 and its z-derivatives at one time, vectorised over z.

    Adaptive Gauss-Kronrod (21-point) in u with break points at u = 2 ln z.
    The neglected sliver t - s < e^{u_min} is added in closed form from the
    large-zeta limit K0 ~ 2/zeta.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if np.any(z <= 0):
        raise ValueError("z must be positive")
    if not (t > 0 and hist.covers(0.0) and hist.covers(t)):
        raise ValueError("history does not cover [0, t]")
    hi = math.log(t)
    lo = min(2 * math.log(z.min()), hi) - _TAIL
    pts = sorted({float(p) for p in 2 * np.log(z) if lo < p < hi})

    def f(u):
        a, b, c = _integrands(u, z, t, hist, pp)
        return np.concatenate([a.real, a.imag, b.real, b.imag, c.real, c.imag])

    val, _ = quad_vec(f, lo, hi, epsabs=1e-300, epsrel=epsrel, points=pts or None,
                      norm="max", limit=20000)
    n = len(z)
    out = [val[2 * i * n:(2 * i + 1) * n] + 1j * val[(2 * i + 1) * n:(2 * i + 2) * n]
           for i in range(3)]
    # sliver: int_{-inf}^{lo} -z pd K0 du ~ -z pd 2 e^{lo}/z^2, derivatives follow
    pd = complex(hist.pdot_at(t))
    e = math.exp(lo)
    out[0] += -2 * pd * e / z
    out[1] += 2 * pd * e / z**2
    out[2] += -4 * pd * e / z**3
    return CorrectionSample(out[0], out[1], out[2], z, t)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(10)


def phi0_fixed(z, t: float, hist: ParamHistory, pp: PhysParams, panel: float = 0.2,
               u_floor: Optional[float] = None):
    """Phi0 only, by a composite 10-point Gauss-Legendre rule on uniform u-panels.

    The panel layout moves smoothly with t and is shared by all z, so the
    quadrature error is a smooth function of (z, t).  That is what makes
    finite differences of the result meaningful.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    hi = math.log(t)
    lo = (2 * math.log(z.min()) - _TAIL) if u_floor is None else u_floor
    lo = min(lo, hi - 1.0)
    npan = max(1, int(math.ceil((hi - lo) / panel)))
    edges = np.linspace(lo, hi, npan + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * (edges[1] - edges[0])
    u = (mid[:, None] + half * _GL_X[None, :]).ravel()
    w = np.tile(half * _GL_W, npan)
    sig = np.exp(u)
    pd = np.asarray(hist.pdot_at(t - sig), dtype=complex)
    zeta = np.divide.outer(z * z, sig)
    k0 = kernel_K0(zeta.ravel(), pp, 0).reshape(zeta.shape)
    val = -(z[:, None] * k0 * pd[None, :]) @ w
    val += -2 * complex(hist.pdot_at(t)) * math.exp(lo) / z
    return val


def phi0_star_field(x, t: float, hist: ParamHistory, pp: PhysParams, engine: str = "adaptive"):
    """Vector correction (rho^2/(rho^2+1)) Phi0(z, t) e^{i theta} in the first two slots."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    b = hist.bubble(t)
    d = x - np.asarray(b.xi)
    r = np.hypot(d[:, 0], d[:, 1])
    th = np.arctan2(d[:, 1], d[:, 0])
    z = np.sqrt(r * r + b.lam**2)
    if engine == "adaptive":
        ph = phi0_eval(z, t, hist, pp).Phi0
    else:
        ph = phi0_fixed(z, t, hist, pp)
    rho2 = (r / b.lam) ** 2
    val = rho2 / (rho2 + 1) * ph * np.exp(1j * th)
    return np.column_stack([val.real, val.imag, np.zeros_like(r)])


def phi0_star_grad_closed(x, t: float, hist: ParamHistory, pp: PhysParams):
    """Cartesian gradient of Phi0* (complex slot) from the radial derivatives.

    With F(r) = r^2/(r^2+lam^2) Phi0(z), the field is F(r) e^{i theta}, so
    d_x1 = e^{i theta}(cos th F' - i sin th F/r), d_x2 = e^{i theta}(sin th F' + i cos th F/r).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    b = hist.bubble(t)
    d = x - np.asarray(b.xi)
    r = np.hypot(d[:, 0], d[:, 1])
    th = np.arctan2(d[:, 1], d[:, 0])
    lam = b.lam
    z = np.sqrt(r * r + lam * lam)
    cs = phi0_eval(z, t, hist, pp)
    g = r * r / (r * r + lam * lam)
    dg = 2 * r * lam * lam / (r * r + lam * lam) ** 2
    F = g * cs.Phi0
    Fr = dg * cs.Phi0 + g * cs.dz * r / z
    e = np.exp(1j * th)
    c, s = np.cos(th), np.sin(th)
    return e * (c * Fr - 1j * s * F / r), e * (s * Fr + 1j * c * F / r)


# --------------------------------------------------------------------------
# the new error S

def e0_complex(rho, lam: float, lamdot: float, gammadot: float):
    """Complex form of (lamdot/lam) Z01 + gammadot Z02: -2 rho/(rho^2+1) (lamdot/lam + i gammadot)."""
    rho = np.asarray(rho, dtype=float)
    return -2 * rho / (rho * rho + 1) * (lamdot / lam + 1j * gammadot)


def dt_bubble(x, t: float, hist: ParamHistory):
    """d_t U from the parameter velocities:
    -lamdot/lam Q Z01 - gammadot Q Z02 - sum_i xidot_i/lam Q Z1i."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    b = hist.bubble(t)
    p = complex(hist.p_at(t))
    pd = complex(hist.pdot_at(t))
    # pdot = (lamdot + i lam gammadot) e^{i gamma}
    q = pd / p
    lamdot_over_lam, gammadot = q.real, q.imag
    xid = np.asarray(hist.xidot_at(t), dtype=float)
    y = (x - np.asarray(b.xi)) / b.lam
    out = -lamdot_over_lam * vector_kernels(0, 1, y) - gammadot * vector_kernels(0, 2, y)
    out = out - (xid[0] * vector_kernels(1, 1, y) + xid[1] * vector_kernels(1, 2, y)) / b.lam
    return rotate_z(b.gamma, out)


def residual_Sj(x, t: float, hist: ParamHistory, pp: PhysParams,
                h_rel: float = 2e-3, k_rel: float = 1e-3):
    """S = -d_t Phi0* + (a - b U^)[Delta Phi0* + |grad U|^2 Phi0* - 2 grad(U.Phi0*) grad U] - d_t U.

    Phi0* is differenced in t (central, step k_rel * min(T-t, t, z^2)) and in
    x (five-point stencil, step h_rel * z).  U and grad U are differenced on
    the same stencil; d_t U comes from the parameter velocities.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = len(x)
    if not 0 < t < hist.T:
        raise ValueError("t too close to the ends of the history for a time difference")
    b = hist.bubble(t)
    r = np.hypot(*(x - np.asarray(b.xi)).T)
    z = np.sqrt(r * r + b.lam**2)
    h = h_rel * z
    k = k_rel * np.minimum(np.minimum(hist.T - t, t), z * z)
    if np.any(k <= 0) or np.any(t - k < 0) or np.any(t + k > hist.T):
        raise ValueError("t too close to the ends of the history for a time difference")
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    offs = [np.zeros(2), e1, -e1, e2, -e2]
    pts = np.concatenate([x + h[:, None] * o for o in offs])       # (5n, 2)

    def star_fixed(pts_, tt):
        bb = hist.bubble(tt)
        d = pts_ - np.asarray(bb.xi)
        rr = np.hypot(d[:, 0], d[:, 1])
        th = np.arctan2(d[:, 1], d[:, 0])
        zz = np.sqrt(rr * rr + bb.lam**2)
        ph = phi0_fixed(zz, tt, hist, pp, u_floor=2 * math.log(bb.lam) - _TAIL)
        rho2 = (rr / bb.lam) ** 2
        return rho2 / (rho2 + 1) * ph * np.exp(1j * th)

    P = star_fixed(pts, t).reshape(5, n)
    # time differences: one evaluation per point (k depends on the point)
    Pp = np.array([star_fixed(x[i:i + 1], t + k[i])[0] for i in range(n)])
    Pm = np.array([star_fixed(x[i:i + 1], t - k[i])[0] for i in range(n)])
    dtP = (Pp - Pm) / (2 * k)

    U = bubble_field(b, pts).reshape(5, n, 3)
    vec = lambda c: np.stack([c.real, c.imag, np.zeros_like(c.real)], -1)
    Pv = vec(P)                                                     # (5, n, 3)
    lapP = (Pv[1] + Pv[2] + Pv[3] + Pv[4] - 4 * Pv[0]) / (h * h)[:, None]
    dU = [(U[1] - U[2]) / (2 * h)[:, None], (U[3] - U[4]) / (2 * h)[:, None]]
    gradU2 = sum(np.sum(d * d, -1) for d in dU)
    s = np.sum(U * Pv, -1)                                          # U.Phi0*
    ds = [(s[1] - s[2]) / (2 * h), (s[3] - s[4]) / (2 * h)]
    U0, P0 = U[0], Pv[0]
    inner = lapP + gradU2[:, None] * P0 - 2 * (ds[0][:, None] * dU[0] + ds[1][:, None] * dU[1])
    damped = pp.a * inner - pp.b * np.cross(U0, inner)
    return -vec(dtP) + damped - dt_bubble(x, t, hist)


def sj_bound(rho, t: float, hist: ParamHistory):
    """lam_*^-1 <rho>^-2 + |lamdot_*| <rho>^-1 + |xidot|."""
    from .reduced import lam_star, lam_star_dot
    T = hist.T
    jr = np.sqrt(1 + np.asarray(rho) ** 2)
    xid = np.linalg.norm(np.asarray(hist.xidot_at(t), dtype=float))
    return 1 / lam_star(t, T) / jr**2 + abs(lam_star_dot(t, T)) / jr + xid


def phi0_bound(z, t: float, T: float):
    """z 1{z^2 < t} + t |ln T|^-1 z^-1 1{z^2 >= t}."""
    z = np.asarray(z, dtype=float)
    return np.where(z * z < t, z, t / abs(math.log(T)) / z)


def phi0_certificate(T: float, pp: PhysParams, n: int = 40, z_max: float = 1.0):
    """Max over a log grid of (|Phi0| + z|Phi0_z| + z^2|Phi0_zz|) / bound."""
    from .reduced import lam_star
    hist = ParamHistory.ansatz(T)
    worst = 0.0
    for gap in np.geomspace(0.5 * T, 1e-6 * T, n):
        t = T - gap
        z = np.geomspace(float(lam_star(t, T)), z_max, n)
        cs = phi0_eval(z, t, hist, pp)
        lhs = np.abs(cs.Phi0) + z * np.abs(cs.dz) + z * z * np.abs(cs.dzz)
        worst = max(worst, float(np.max(lhs / phi0_bound(z, t, T))))
    return worst


def sj_certificate(T: float, pp: PhysParams, n: int = 40, rho_min: float = 1e-2,
                   rho_max: float = 1e3):
    """Max over a log (rho, t) grid of |S| / (Sj bound)."""
    hist = ParamHistory.ansatz(T)
    worst = 0.0
    rho = np.geomspace(rho_min, rho_max, n)
    for gap in np.geomspace(0.5 * T, 1e-6 * T, n):
        t = T - gap
        b = hist.bubble(t)
        x = np.column_stack([b.lam * rho, np.zeros_like(rho)]) + np.asarray(b.xi)
        S = residual_Sj(x, t, hist, pp)
        ratio = np.linalg.norm(S, axis=1) / sj_bound(rho, t, hist)
        worst = max(worst, float(ratio.max()))
    return worst
