"""Degree-one equivariant LLG flow on a disc, with blow-up diagnostics.

Maps of the form u(r, theta) = e^{theta J} v(r) reduce the equation to an
evolution for the profile v: [0, R] -> S^2,

    v_t = a (Lv + g v) - b v x Lv,
    Lv  = v'' + v'/r + J^2 v / r^2,     g = |v'|^2 + |Jv|^2 / r^2 .

The profile is pinned at both ends: v(0) is a pole (regularity) and v(R)
keeps its initial value.  The radial mesh is r = R sinh(kappa s)/sinh(kappa)
on a uniform s-grid, which is nearly uniform in the core and geometric
further out.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy.integrate import simpson
from scipy.linalg import lapack
from scipy.optimize import least_squares

from ._fd import Stencil
from .geometry import PhysParams


class UnderresolvedBlowup(RuntimeError):
    """Raised when the state stops being finite; carries the last good state."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state


@dataclass
class SimConfig:
    a: float = 1.0
    b: float = 0.0
    r_outer: float = 1.0
    n_nodes: int = 800
    grading: float = 12.0          # kappa of the sinh map; ~0 gives a uniform mesh
    scheme: str = "ros2"           # "rk4" (explicit, projected) or "ros2" (linearly implicit)
    dt_policy: str = "adaptive"    # "fixed" | "self-similar" | "adaptive"
    dt: float = 1e-6
    cfl: float = 0.2
    c_ss: float = 0.05             # dt = c_ss * lam_est^2 under the self-similar policy
    rtol: float = 1e-5
    renormalize: bool = True
    t_max: float = 1.0
    lam_stop: float = 1e-6
    max_steps: int = 200000
    sample_every: int = 1
    max_wall: float = 600.0

    @property
    def pp(self) -> PhysParams:
        return PhysParams(self.a, self.b)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        known = {f for f in cls.__dataclass_fields__}
        bad = set(d) - known
        if bad:
            raise KeyError(f"unknown config keys: {sorted(bad)}")
        kw = {}
        for k, v in d.items():
            typ = type(getattr(cls(), k))
            kw[k] = _coerce(v, typ)
        return cls(**kw)


def _coerce(v, typ):
    if typ is bool and isinstance(v, str):
        return v.strip().lower() in ("1", "true", "yes", "on")
    return typ(v)


@dataclass
class Mesh:
    r: np.ndarray
    s: np.ndarray
    r_s: np.ndarray

    @classmethod
    def sinh(cls, R: float, n: int, kappa: float) -> "Mesh":
        s = np.linspace(0.0, 1.0, n + 1)
        if kappa < 1e-8:
            return cls(R * s, s, np.full_like(s, R))
        r = R * np.sinh(kappa * s) / np.sinh(kappa)
        r_s = R * kappa * np.cosh(kappa * s) / np.sinh(kappa)
        return cls(r, s, r_s)

    @property
    def dr_min(self) -> float:
        return float(self.r[1] - self.r[0])


@dataclass
class SimState:
    t: float
    v: np.ndarray                 # (n+1, 3), includes the pinned end nodes
    mesh: Mesh
    diagnostics: list = field(default_factory=list)


@dataclass
class BlowupDiagnostics:
    t: np.ndarray
    lam: np.ndarray
    energy: np.ndarray
    max_grad: np.ndarray
    fit: Optional[dict] = None
    reason: str = ""
    wall: float = 0.0

    def to_csv(self, path):
        arr = np.column_stack([self.t, self.lam, self.energy, self.max_grad])
        np.savetxt(path, arr, delimiter=",", header="t,lambda_est,energy,max_grad",
                   comments="", fmt="%.16e")

    def fit_json(self) -> str:
        return json.dumps(self.fit, indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# profiles

def bubble_profile(mesh: Mesh, lam: float, twist: float = 0.0, gamma: float = 0.0,
                   azimuth: float = 0.0):
    """Scaled bubble with optional outer twists.

    v = (sin h cos phi, sin h sin phi, cos h) with
    h = pi - 2 arctan(r/lam) - twist (r/R)^2 and phi = gamma + azimuth (r/R)^2.
    twist = azimuth = 0 gives the exact scaled bubble rotated by gamma; a
    positive twist winds the boundary value past the north pole, and the
    azimuthal twist sets the phase of the outer field relative to the core.
    """
    r = mesh.r
    rho = r / lam
    if twist == 0.0:
        d = 1 + rho * rho
        sh, ch = 2 * rho / d, (rho * rho - 1) / d
    else:
        h = np.pi - 2 * np.arctan(rho) - twist * (r / r[-1]) ** 2
        sh, ch = np.sin(h), np.cos(h)
    phi = gamma + azimuth * (r / r[-1]) ** 2
    return np.column_stack([np.cos(phi) * sh, np.sin(phi) * sh, ch])


def initial_state(mesh: Mesh, lam: float = 0.1, twist: float = 0.0,
                  gamma: float = 0.0, azimuth: float = 0.0) -> SimState:
    return SimState(0.0, bubble_profile(mesh, lam, twist, gamma, azimuth), mesh)


# --------------------------------------------------------------------------
# right-hand side and diagnostics

class Discretisation:
    """Cached stencils for one mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.st = Stencil(mesh.r)
        self.ri = mesh.r[1:-1]

    def derivs(self, v):
        d1 = self.st.d1(v)[1:-1]
        d2 = self.st.d2(v)[1:-1]
        return d1, d2

    def tension(self, v):
        """(Lv, g, v') at interior nodes.

        The in-plane components vanish linearly at r = 0, so they are
        differenced as q = v/r, which is even and regular:
        v'' + v'/r - v/r^2 = r q'' + 3 q'.
        """
        r_all = self.mesh.r
        r = self.ri
        q = np.empty((len(r_all), 2))
        q[1:] = v[1:, :2] / r_all[1:, None]
        r1, r2 = r_all[1], r_all[2]
        q[0] = (r2 * r2 * q[1] - r1 * r1 * q[2]) / (r2 * r2 - r1 * r1)
        dq1 = self.st.d1(q)[1:-1]
        dq2 = self.st.d2(q)[1:-1]
        d1z = self.st.d1(v[:, 2])[1:-1]
        d2z = self.st.d2(v[:, 2])[1:-1]
        Lv = np.empty((len(r), 3))
        Lv[:, :2] = r[:, None] * dq2 + 3 * dq1
        Lv[:, 2] = d2z + d1z / r
        d1 = np.empty_like(Lv)
        d1[:, :2] = q[1:-1] + r[:, None] * dq1
        d1[:, 2] = d1z
        vi = v[1:-1]
        g = np.sum(d1 * d1, 1) + (vi[:, 0] ** 2 + vi[:, 1] ** 2) / r**2
        return Lv, g, d1


_DISC_CACHE: dict = {}


def _disc(mesh: Mesh) -> Discretisation:
    key = id(mesh)
    d = _DISC_CACHE.get(key)
    if d is None or d.mesh is not mesh:
        d = Discretisation(mesh)
        _DISC_CACHE.clear()
        _DISC_CACHE[key] = d
    return d


def equivariant_rhs(state: SimState, pp: PhysParams) -> np.ndarray:
    """F(v) on all nodes; the pinned end rows are zero."""
    return _rhs(state.v, _disc(state.mesh), pp)


def _rhs(v, disc: Discretisation, pp: PhysParams):
    Lv, g, _ = disc.tension(v)
    vi = v[1:-1]
    F = np.zeros_like(v)
    F[1:-1] = pp.a * (Lv + g[:, None] * vi)
    if pp.b != 0.0:
        F[1:-1] -= pp.b * np.cross(vi, Lv)
    return F


def _rhs_gilbert(v, disc: Discretisation, pp: PhysParams):
    """-a v x (v x Lv) - b v x Lv.

    Identical to the tension form on the sphere, but it keeps |v| constant
    off the sphere too.  The tension form makes the normal direction
    unstable (growth rate ~ 2|grad u|^2), which the steppers would otherwise
    have to resolve.
    """
    Lv, _, _ = disc.tension(v)
    vi = v[1:-1]
    vxL = np.cross(vi, Lv)
    F = np.zeros_like(v)
    F[1:-1] = -pp.a * np.cross(vi, vxL) - pp.b * vxL
    return F


def grad_sq(state: SimState) -> np.ndarray:
    """|grad u|^2 at interior nodes."""
    _, g, _ = _disc(state.mesh).tension(state.v)
    return g


def lambda_estimate(state: SimState) -> float:
    """sqrt(8) / max |grad u|; equals lambda for an exact scaled bubble."""
    return math.sqrt(8.0) / math.sqrt(grad_sq(state).max())


def core_phase(state: SimState) -> float:
    """Azimuth of v at the node closest to r = lambda_est.

    For v close to a rotated bubble Q_gamma W(r/lambda) this is gamma.
    """
    lam = lambda_estimate(state)
    i = int(np.argmin(np.abs(state.mesh.r - lam)))
    return math.atan2(state.v[i, 1], state.v[i, 0])


def _d_s4(f, h):
    """Fourth-order derivative along axis 0 on a uniform grid."""
    f = np.asarray(f)
    g = np.empty_like(f)
    g[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    c = np.array([-25, 48, -36, 16, -3]) / (12 * h)
    g[0] = np.tensordot(c, f[:5], 1)
    g[1] = np.tensordot(np.array([-3, -10, 18, -6, 1]) / (12 * h), f[:5], 1)
    g[-1] = -np.tensordot(c, f[-1:-6:-1], 1)
    g[-2] = -np.tensordot(np.array([-3, -10, 18, -6, 1]) / (12 * h), f[-1:-6:-1], 1)
    return g


def energy(state: SimState) -> float:
    """Dirichlet energy pi int (|v'|^2 + |Jv|^2/r^2) r dr.

    Evaluated in the mesh coordinate s with fourth-order differences and
    Simpson's rule, so E(W) = 4 pi is reproduced well below 1e-6.
    """
    m = state.mesh
    v = state.v
    h = m.s[1] - m.s[0]
    vs = _d_s4(v, h)
    r, r_s = m.r, m.r_s
    integrand = np.empty_like(r)
    integrand[1:] = (np.sum(vs[1:] ** 2, 1) / r_s[1:] * r[1:]
                     + (v[1:, 0] ** 2 + v[1:, 1] ** 2) / r[1:] * r_s[1:])
    integrand[0] = 0.0
    return float(math.pi * simpson(integrand, x=m.s))


def dissipation(state: SimState, pp: PhysParams) -> float:
    """a * int |Lv + g v|^2 dx = -dE/dt for a smooth solution."""
    disc = _disc(state.mesh)
    Lv, g, _ = disc.tension(state.v)
    tau = Lv + g[:, None] * state.v[1:-1]
    m = state.mesh
    f = np.zeros_like(m.r)
    f[1:-1] = np.sum(tau * tau, 1) * m.r[1:-1] * m.r_s[1:-1]
    return float(pp.a * 2 * math.pi * simpson(f, x=m.s))


# --------------------------------------------------------------------------
# steppers

def _project(v):
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def stable_dt(mesh: Mesh, cfg: SimConfig) -> float:
    return cfg.cfl * mesh.dr_min**2


def step(state: SimState, cfg: SimConfig, dt: Optional[float] = None) -> SimState:
    """One explicit RK4 step; stage values are projected to S^2 when requested."""
    dt = cfg.dt if dt is None else dt
    if dt > stable_dt(state.mesh, cfg) * (1 + 1e-12):
        raise ValueError(f"dt={dt:.3e} exceeds the stability bound {stable_dt(state.mesh, cfg):.3e}")
    pp = cfg.pp
    disc = _disc(state.mesh)
    prj = _project if cfg.renormalize else (lambda x: x)
    v = state.v
    k1 = _rhs_gilbert(v, disc, pp)
    k2 = _rhs_gilbert(prj(v + 0.5 * dt * k1), disc, pp)
    k3 = _rhs_gilbert(prj(v + 0.5 * dt * k2), disc, pp)
    k4 = _rhs_gilbert(prj(v + dt * k3), disc, pp)
    vn = prj(v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
    if not np.all(np.isfinite(vn)):
        raise UnderresolvedBlowup("non-finite values in RK4 step", state)
    return SimState(state.t + dt, vn, state.mesh, state.diagnostics)


class Ros2:
    """Two-stage L-stable Rosenbrock scheme with a banded finite-difference Jacobian.

    Unknowns are the interior nodes, flattened node-major, so the Jacobian
    has five sub- and super-diagonals.  Nine colour groups suffice to fill it.
    """

    gamma = 1.0 + 1.0 / math.sqrt(2.0)

    def __init__(self, mesh: Mesh, pp: PhysParams):
        self.disc = Discretisation(mesh)
        self.pp = pp
        self.n = 3 * (len(mesh.r) - 2)
        j = np.arange(self.n)
        self.colour = (j // 3 % 3) * 3 + j % 3

    def f(self, v):
        return _rhs_gilbert(v, self.disc, self.pp)[1:-1].ravel()

    def jac_banded(self, v, f0):
        n, kl = self.n, 5
        ab = np.zeros((2 * kl + kl + 1, n))        # LAPACK gbtrf layout
        y0 = v[1:-1].ravel()
        for c in range(9):
            cols = np.nonzero(self.colour == c)[0]
            eps = 1e-7
            vp = v.copy()
            yp = y0.copy()
            yp[cols] += eps
            vp[1:-1] = yp.reshape(-1, 3)
            df = (self.f(vp) - f0) / eps
            # row r couples to column c only when their nodes are neighbours;
            # within that reach each row sees a single perturbed column
            for off in range(-kl, kl + 1):
                rr = cols + off
                ok = (rr >= 0) & (rr < n) & (np.abs(rr // 3 - cols // 3) <= 1)
                # band storage ab[kl + kl + r - c, c]
                ab[2 * kl + off, cols[ok]] = df[rr[ok]]
        return ab

    def step(self, v, dt):
        """Return (v_new, error_estimate_vector)."""
        n, kl = self.n, 5
        f0 = self.f(v)
        ab = self.jac_banded(v, f0)
        M = -self.gamma * dt * ab
        M[2 * kl] += 1.0
        lu, piv, info = lapack.dgbtrf(M, kl, kl)
        if info != 0:
            raise np.linalg.LinAlgError("singular Rosenbrock matrix")
        k1, info = lapack.dgbtrs(lu, kl, kl, f0, piv)[:2]
        v1 = v.copy()
        v1[1:-1] += dt * k1.reshape(-1, 3)
        f1 = self.f(v1)
        k2, info = lapack.dgbtrs(lu, kl, kl, f1 - 2 * k1, piv)[:2]
        vn = v.copy()
        vn[1:-1] += (dt * (1.5 * k1 + 0.5 * k2)).reshape(-1, 3)
        err = 0.5 * dt * (k1 + k2)
        return vn, err


# --------------------------------------------------------------------------
# driver

def _record(state, diag):
    g = grad_sq(state)
    mg = math.sqrt(g.max())
    diag.append((state.t, math.sqrt(8.0) / mg, energy(state), mg))


def run(cfg: SimConfig, state: SimState, record: bool = True, monitor=None):
    """Integrate until lam_est < lam_stop, t >= t_max, or a budget runs out.

    ``monitor(state, lam_est)`` is called before every step; a true return
    value stops the run with reason "monitor".
    Returns (final_state, samples, reason).
    """
    pp = cfg.pp
    t0 = time.perf_counter()
    samples: list = []
    if record:
        _record(state, samples)
    mesh = state.mesh
    reason = "t_max"
    nstep = 0
    if cfg.scheme == "rk4":
        while state.t < cfg.t_max:
            lam = lambda_estimate(state)
            if lam < cfg.lam_stop:
                reason = "lam_stop"
                break
            if monitor is not None and monitor(state, lam):
                reason = "monitor"
                break
            if cfg.dt_policy == "self-similar":
                dt = min(cfg.c_ss * lam * lam, stable_dt(mesh, cfg))
            else:
                dt = min(cfg.dt, stable_dt(mesh, cfg))
            dt = min(dt, cfg.t_max - state.t)
            state = step(state, cfg, dt)
            nstep += 1
            if record and nstep % cfg.sample_every == 0:
                _record(state, samples)
            if nstep >= cfg.max_steps:
                reason = "max_steps"
                break
            if time.perf_counter() - t0 > cfg.max_wall:
                reason = "wall"
                break
    elif cfg.scheme == "ros2":
        ros = Ros2(mesh, pp)
        dt = cfg.dt
        v = state.v
        t = state.t
        while t < cfg.t_max:
            st = SimState(t, v, mesh)
            lam = lambda_estimate(st)
            if lam < cfg.lam_stop:
                reason = "lam_stop"
                break
            if lam < 10 * mesh.dr_min:
                reason = "underresolved"
                break
            if monitor is not None and monitor(st, lam):
                reason = "monitor"
                break
            if cfg.dt_policy == "self-similar":
                dt = cfg.c_ss * lam * lam
            dt = min(dt, cfg.t_max - t)
            vn, err = ros.step(v, dt)
            en = float(np.abs(err).max()) / cfg.rtol
            if not np.isfinite(en):
                if cfg.dt_policy != "adaptive" or dt < 1e-14 * max(t, 1e-300):
                    raise UnderresolvedBlowup("non-finite values in Rosenbrock step", st)
                dt *= 0.2
                continue
            if cfg.dt_policy == "adaptive" and en > 1.0:
                dt *= max(0.2, 0.9 / math.sqrt(en))
                continue
            if cfg.renormalize:
                vn = _project(vn)
            v, t = vn, t + dt
            nstep += 1
            if record and nstep % cfg.sample_every == 0:
                _record(SimState(t, v, mesh), samples)
            if cfg.dt_policy == "adaptive":
                dt *= min(2.0, max(0.2, 0.9 / math.sqrt(max(en, 1e-12))))
            if nstep >= cfg.max_steps:
                reason = "max_steps"
                break
            if time.perf_counter() - t0 > cfg.max_wall:
                reason = "wall"
                break
        state = SimState(t, v, mesh)
    else:
        raise ValueError(f"unknown scheme {cfg.scheme!r}")
    return state, samples, reason


def fit_rate(t, lam, window_decades: float = 1.0) -> Optional[dict]:
    """Least-squares fit of log lam = alpha log(T - t) + c over the final decade.

    T is a free parameter constrained to lie after the last sample.
    """
    t = np.asarray(t, dtype=float)
    lam = np.asarray(lam, dtype=float)
    lo = lam[-1]
    sel = lam <= lo * 10**window_decades
    # use the contiguous tail
    idx = np.nonzero(~sel)[0]
    start = idx[-1] + 1 if len(idx) else 0
    tt, ll = t[start:], lam[start:]
    if len(tt) < 8:
        return None
    t_last = tt[-1]
    # initial guess from the last slope
    slope = (ll[-1] - ll[-2]) / (tt[-1] - tt[-2])
    gap0 = ll[-1] / abs(slope) if slope < 0 else (tt[-1] - tt[0]) * 0.01
    x0 = np.array([math.log(max(gap0, 1e-300)), 1.0, 0.0])
    x0[2] = math.log(ll[-1]) - x0[1] * x0[0]

    def resid(x):
        T = t_last + math.exp(x[0])
        return x[1] * np.log(T - tt) + x[2] - np.log(ll)

    sol = least_squares(resid, x0, method="lm", xtol=1e-14, ftol=1e-14)
    T_est = float(t_last + math.exp(sol.x[0]))
    return {
        "T_est": T_est,
        "exponent": float(sol.x[1]),
        "prefactor": float(math.exp(sol.x[2])),
        "window": [float(tt[0]), float(tt[-1])],
        "rms": float(np.sqrt(np.mean(sol.fun**2))),
    }


def run_and_fit(cfg: SimConfig, initial: SimState) -> BlowupDiagnostics:
    t0 = time.perf_counter()
    final, samples, reason = run(cfg, initial)
    arr = np.array(samples)
    diag = BlowupDiagnostics(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3],
                             reason=reason, wall=time.perf_counter() - t0)
    if reason in ("lam_stop", "underresolved") or diag.lam[-1] < 1e-2 * diag.lam[0]:
        diag.fit = fit_rate(diag.t, diag.lam)
    return diag


def phase_winding(cfg: SimConfig, initial: SimState, rebound: float = 1.5) -> tuple:
    """Run until the core either collapses or bounces back; return (winding, reason).

    The winding is the unwrapped change of ``core_phase`` along the run.
    A bounce is declared once lam_est has halved and then grown by the
    factor ``rebound`` over its running minimum.  With dispersion the core
    phase swings by roughly +-pi as the bubble passes its closest approach,
    and the sign says on which side of the collapsing configuration the
    data lies.  Reason "lam_stop" means the run collapsed.
    """
    lam0 = lambda_estimate(initial)
    track = {"lo": lam0, "ph": core_phase(initial), "wind": 0.0}

    def monitor(st, lam):
        i = int(np.argmin(np.abs(st.mesh.r - lam)))
        ph = math.atan2(st.v[i, 1], st.v[i, 0])
        d = (ph - track["ph"] + math.pi) % (2 * math.pi) - math.pi
        track["wind"] += d
        track["ph"] = ph
        track["lo"] = min(track["lo"], lam)
        return track["lo"] < 0.5 * lam0 and lam > rebound * track["lo"]

    _, _, reason = run(cfg, initial, record=False, monitor=monitor)
    return track["wind"], reason


def shoot_phase(cfg: SimConfig, make_state, lo: float, hi: float, iters: int = 8):
    """Bisect a scalar initial-data parameter on the sign of ``phase_winding``.

    ``make_state(x)`` builds the initial state.  The bracket must give
    windings of opposite sign.  Returns (x, history) where history lists
    (x, winding, reason); the search ends early when a candidate collapses
    to cfg.lam_stop.
    """
    hist = []

    def f(x):
        w, reason = phase_winding(cfg, make_state(x))
        hist.append((x, w, reason))
        return w, reason

    flo, rlo = f(lo)
    if rlo == "lam_stop":
        return lo, hist
    fhi, rhi = f(hi)
    if rhi == "lam_stop":
        return hi, hist
    if flo * fhi > 0:
        raise ValueError(f"bracket [{lo}, {hi}] does not change the winding sign")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm, rm = f(mid)
        if rm == "lam_stop":
            return mid, hist
        if fm * flo > 0:
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi), hist
