"""Quadratic forms Q_{R,k}, principal eigenvalues, complex heat kernels,
mode-wise Duhamel solvers and the mode -1 distorted eigenfunctions.

Q_{R,k}(f, f) = 2 pi int_0^R [ |f'|^2 - V_k |f|^2 ] rho drho,  f(R) = 0.

The principal eigenvalue of Q_{R,k} against the L^2(B_R) mass is tiny for
k = 0, 1 (it decays like (R^2 ln R)^-1 and R^-4), far below the size of the
two terms of the form.  Writing f = Z g with Z > 0 the regular kernel of
L_k removes that cancellation exactly:

    Q_{R,k}(Z g, Z g) = 2 pi int_0^R Z^2 |g'|^2 rho drho,

so the discrete problem is a positive weighted Sturm-Liouville problem.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.linalg import solve_banded

from .geometry import PhysParams
from .linops import RadialComplexField, RadialGrid, potential_V, scalar_kernels


class ConvergenceError(RuntimeError):
    pass


class StabilityError(ValueError):
    pass


# --------------------------------------------------------------------------
# quadratic forms and principal eigenvalues

@dataclass
class SpectralProblem:
    k: int
    R: float
    n: int = 2000
    boundary: str = "dirichlet"

    def __post_init__(self):
        self.k = int(self.k)
        if not self.R >= 10:
            raise ValueError("need R >= 10")
        if self.n < 200:
            raise ValueError("need n >= 200")
        if self.boundary != "dirichlet":
            raise ValueError("only Dirichlet data at R is supported")

    @property
    def rho_min(self) -> float:
        return self.R * 1e-4


@dataclass
class EigenEstimate:
    lambda_min: float
    eigvec: RadialComplexField
    residual: float
    iterations: int = 0


def regular_kernel(k: int):
    """(Z, Z') of the kernel of L_k that stays bounded at rho = 0."""
    pair = scalar_kernels(k)
    if k >= 2:
        return pair.Z2, pair.dZ2
    return pair.Z1, pair.dZ1


def eig_mesh(prob: SpectralProblem) -> np.ndarray:
    """0 followed by a geometric mesh from R 1e-4 to R."""
    return np.concatenate([[0.0], np.geomspace(prob.rho_min, prob.R, prob.n)])


# 4-point Gauss-Legendre on [0, 1]
_GX, _GW = np.polynomial.legendre.leggauss(4)
_GX = 0.5 * (_GX + 1.0)
_GW = 0.5 * _GW


def _p1_assemble(x, stiff_w: Callable, mass_w: Callable, pot: Optional[Callable] = None):
    """Tridiagonal P1 matrices for int (s f'^2 + pot f^2) and int m f^2.

    Returns banded (3, N) arrays in solve_banded layout (upper, diag, lower)
    for all nodes, boundary rows included, and the element stiffnesses.
    """
    h = np.diff(x)
    q = x[:-1, None] + h[:, None] * _GX[None, :]          # (elements, 4)
    wq = h[:, None] * _GW[None, :]
    phiL, phiR = 1.0 - _GX, _GX
    s = np.sum(wq * stiff_w(q), 1) / h**2
    m = mass_w(q) * wq
    mLL, mLR, mRR = (np.sum(m * phiL * phiL, 1), np.sum(m * phiL * phiR, 1),
                     np.sum(m * phiR * phiR, 1))
    N = len(x)
    K = np.zeros((3, N))
    M = np.zeros((3, N))
    K[1, :-1] += s
    K[1, 1:] += s
    K[0, 1:] = -s
    K[2, :-1] = -s
    if pot is not None:
        pv = pot(q) * wq
        K[1, :-1] += np.sum(pv * phiL * phiL, 1)
        K[1, 1:] += np.sum(pv * phiR * phiR, 1)
        off = np.sum(pv * phiL * phiR, 1)
        K[0, 1:] += off
        K[2, :-1] += off
    M[1, :-1] += mLL
    M[1, 1:] += mRR
    M[0, 1:] = mLR
    M[2, :-1] = mLR
    return K, M, s


def _band_matvec(A, x):
    y = A[1] * x
    y[:-1] += A[0, 1:] * x[1:]
    y[1:] += A[2, :-1] * x[:-1]
    return y


def _restrict(A, lo, hi):
    """Drop boundary nodes: keep indices lo..hi-1 of a tridiagonal band."""
    B = A[:, lo:hi].copy()
    B[0, 0] = 0.0
    B[2, -1] = 0.0
    return B


def _inverse_iteration(K, M, qform=None, shift: float = 0.0, tol: float = 1e-12,
                       vtol: float = 1e-8, maxit: int = 200):
    """Smallest generalised eigenpair of banded (K, M).

    ``qform(y)`` evaluates y.K.y; pass a cancellation-free version when the
    eigenvalue is far below the size of the entries of K.
    """
    if qform is None:
        qform = lambda y: float(y @ _band_matvec(K, y))
    n = K.shape[1]
    x = np.ones(n)
    x /= math.sqrt(float(x @ _band_matvec(M, x)))
    lam = None
    for it in range(1, maxit + 1):
        A = K - shift * M
        y = solve_banded((1, 1), A, _band_matvec(M, x))
        # M-norm: nodes where the weight vanishes carry no information
        y /= math.sqrt(float(y @ _band_matvec(M, y)))
        if y @ _band_matvec(M, x) < 0:
            y = -y
        new = qform(y)
        # rounding floor of the quadratic form
        floor = 64 * np.finfo(float).eps * float(np.abs(y) @ _band_matvec(np.abs(K), np.abs(y)))
        dx = y - x
        done = (lam is not None and abs(new - lam) <= max(tol * abs(new), floor)
                and math.sqrt(abs(float(dx @ _band_matvec(M, dx)))) < vtol)
        x, lam = y, new
        if done:
            return lam, x, it
        # Rayleigh refinement: move the shift just below the current estimate
        if it >= 3:
            shift = 0.5 * lam if shift == 0.0 else max(shift, (1 - 1e-3) * lam)
    raise ConvergenceError(f"inverse iteration did not converge in {maxit} steps")


def principal_eigenvalue(prob: SpectralProblem, method: str = "auto") -> EigenEstimate:
    """lambda_{R,k} = min Q_{R,k}(f,f) / ||f||^2 with f(R) = 0.

    ``method="ground-state"`` discretises the transformed form in g = f/Z;
    ``method="direct"`` assembles the potential form on the same mesh
    (f(0) = 0 imposed for k != 1).  The direct form loses digits to
    cancellation when lambda is small, i.e. for k = 0, 1 at large R; the
    transformed one degenerates at the origin when Z vanishes to high order
    (|k| >= 2, k = -1).  ``"auto"`` picks the suitable one.
    """
    x = eig_mesh(prob)
    k = prob.k
    if method == "auto":
        method = "ground-state" if k in (0, 1) else "direct"
    if method == "ground-state":
        Z, _ = regular_kernel(k)
        w = lambda r: r * Z(r) ** 2
        K, M, se = _p1_assemble(x, w, w)
        K, M = _restrict(K, 0, len(x) - 1), _restrict(M, 0, len(x) - 1)
        # sum_e s_e (g_{e+1} - g_e)^2 with g = 0 at R
        qform = lambda y: float(np.sum(se * np.diff(np.append(y, 0.0)) ** 2))
        lam, g, it = _inverse_iteration(K, M, qform)
        f = Z(x[1:-1]) * g[1:]
        nodes = x[1:]
        fvals = np.append(f, 0.0)
        resid_vec = _band_matvec(K, g) - lam * _band_matvec(M, g)
        resid = float(np.linalg.norm(resid_vec) / np.linalg.norm(_band_matvec(M, g)))
    elif method == "direct":
        pot = lambda r: -potential_V(k, r, allow_pole=True) * r
        K, M, _ = _p1_assemble(x, lambda r: r, lambda r: r, pot)
        lo = 0 if k == 1 else 1
        K, M = _restrict(K, lo, len(x) - 1), _restrict(M, lo, len(x) - 1)
        lam, f, it = _inverse_iteration(K, M, vtol=1e-6)
        fvals = np.append(f[1 - lo:], 0.0)
        nodes = x[1:]
        resid_vec = _band_matvec(K, f) - lam * _band_matvec(M, f)
        resid = float(np.linalg.norm(resid_vec) / np.linalg.norm(_band_matvec(M, f)))
    else:
        raise ValueError(f"unknown method {method!r}")
    if -1e-12 < lam < 0:
        lam = 0.0
    if fvals[np.argmax(np.abs(fvals))] < 0:
        fvals = -fvals
    return EigenEstimate(lam, RadialComplexField(RadialGrid(nodes, "graded"), fvals), resid, it)


def l2_norm_sq(f, rho) -> float:
    """2 pi int |f|^2 rho drho by the trapezoid rule on the given nodes."""
    return float(2 * np.pi * np.trapezoid(np.abs(f) ** 2 * rho, rho))


def sobolev_chain(est: EigenEstimate):
    """(||f||_inf^2, ||f/rho||_2 ||f'||_2, ||f||_X^2) for a computed state."""
    r = est.eigvec.grid.nodes
    f = est.eigvec.values.real
    df = np.gradient(f, r)
    a = float(np.max(np.abs(f)) ** 2)
    n_over = math.sqrt(l2_norm_sq(f / r, r))
    n_d = math.sqrt(l2_norm_sq(df, r))
    return a, n_over * n_d, n_over**2 + n_d**2


def _cutoff(x):
    """Cut-off eta: 1 on |x| <= 1, 0 on |x| >= 2, quintic C^2 smoothstep between.

    Among standard smooth profiles this one keeps int eta'^2 small, which
    sets the constant of the Rayleigh bound.
    """
    s = np.clip(np.abs(np.asarray(x, dtype=float)) - 1.0, 0.0, 1.0)
    return 1.0 - s**3 * (10 - 15 * s + 6 * s * s)


def _cutoff_d(x):
    s = np.clip(np.abs(np.asarray(x, dtype=float)) - 1.0, 0.0, 1.0)
    return -30 * s * s * (1 - s) ** 2


def rayleigh_test_function(k: int, R: float, tol: float = 1e-11):
    """(Q_{R,k}(f, f), ||f||^2) for f = eta(2 rho / R) Z_{k,1}, k in {0, 1}."""
    if k not in (0, 1):
        raise ValueError("test functions are provided for k = 0 and k = 1")
    pair = scalar_kernels(k)
    Z, dZ = pair.Z1, pair.dZ1
    f = lambda r: _cutoff(2 * r / R) * Z(r)
    df = lambda r: _cutoff(2 * r / R) * dZ(r) + (2 / R) * _cutoff_d(2 * r / R) * Z(r)
    pot = lambda r: -float(potential_V(k, r, allow_pole=(k == 1)))

    def q_int(r):
        return (df(r) ** 2 + pot(r) * f(r) ** 2) * r

    # where eta = 1 the integrand is (rho Z Z')' because L_k Z = 0
    h = R / 2
    core = h * float(Z(h) * dZ(h))
    Q = 2 * np.pi * (core + quad(q_int, h, R, epsabs=0, epsrel=tol, limit=400)[0])
    mass = 2 * np.pi * sum(quad(lambda r: f(r) ** 2 * r, a, b, epsabs=0, epsrel=tol, limit=400)[0]
                           for a, b in ((0.0, 1.0), (1.0, h), (h, R)))
    return float(Q), float(mass)


# --------------------------------------------------------------------------
# complex heat kernel and Duhamel solves

def heat_kernel_gamma(d: int, x, t: float, pp: PhysParams):
    """(a - ib)^{-d/2} (4 pi t)^{-d/2} exp(-|x|^2 / (4 (a - ib) t)), principal branch.

    ``x`` has trailing dimension d.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != d:
        raise ValueError("x must have trailing dimension d")
    c = complex(pp.a, -pp.b)
    r2 = np.sum(x * x, axis=-1)
    return c ** (-d / 2) * (4 * np.pi * t) ** (-d / 2) * np.exp(-r2 / (4 * c * t))


# fourth-order central weights
_D1 = np.array([1, -8, 0, 8, -1]) / 12.0
_D2 = np.array([-1, 16, -30, 16, -1]) / 12.0


def _with_ghosts(u, parity):
    """Prepend two mirror values (u(-2h), u(-h)) and append two zeros."""
    return np.concatenate([parity * u[2:0:-1], u, [0.0, 0.0]])


def _d12(u, h, parity):
    U = _with_ghosts(u, parity)
    n = len(u)
    d1 = sum(_D1[j] * U[j:j + n] for j in range(5)) / h
    d2 = sum(_D2[j] * U[j:j + n] for j in range(5)) / h**2
    return d1, d2


def _even_origin(g):
    """g(0) from g(h), g(2h) for an even function, O(h^4)."""
    return (4 * g[0] - g[1]) / 3.0


class _ModeStepper:
    """Method of lines on rho_i = i h, Dirichlet zero at rho_max, classical RK4."""

    def __init__(self, k: int, pp: PhysParams, rho_max: float, n: int, lifted: bool):
        self.k, self.pp, self.lifted = k, pp, lifted
        self.rho = np.linspace(0.0, rho_max, n + 1)
        self.h = self.rho[1]
        self.c = complex(pp.a, -pp.b)

    def spectral_radius(self) -> float:
        # Gershgorin bound of the spatial operator (without the factor a - ib)
        k, h = self.k, self.h
        r = self.rho[1:]
        a2 = np.sum(np.abs(_D2)) / h**2
        a1 = np.sum(np.abs(_D1)) / h
        if self.lifted:
            return max((2 * k + 2) * a2, float(np.max(a2 + (2 * k + 1) * a1 / r)))
        return float(np.max(a2 + a1 / r + k * k / r**2))

    def op(self, u):
        k, h, r = self.k, self.h, self.rho
        out = np.zeros_like(u)
        if self.lifted:
            d1, d2 = _d12(u[:-1], h, 1.0)
            out[1:-1] = d2[1:] + (2 * k + 1) * d1[1:] / r[1:-1]
            out[0] = (2 * k + 2) * d2[0]
        else:
            par = (-1.0) ** k
            d1, d2 = _d12(u[:-1], h, par)
            out[1:-1] = d2[1:] + d1[1:] / r[1:-1] - k * k * u[1:-1] / r[1:-1] ** 2
            if k == 0:
                out[0] = 2 * d2[0]
        return out

    def source(self, hfun, tau):
        r = self.rho
        hv = np.zeros(len(r), dtype=complex)
        hv[1:] = hfun(r[1:], tau)
        if self.lifted:
            g = np.zeros_like(hv)
            g[1:] = hv[1:] / r[1:] ** self.k
            g[0] = _even_origin(g[1:3])
            g[-1] = 0.0
            return g
        if self.k == 0:
            hv[0] = _even_origin(hv[1:3])
        hv[-1] = 0.0
        return hv

    def rhs(self, u, tau, hfun):
        return self.c * self.op(u) + self.source(hfun, tau)

    def run(self, hfun, tau0, tau1, dt):
        nsteps = max(1, int(math.ceil((tau1 - tau0) / dt)))
        dt = (tau1 - tau0) / nsteps
        lim = 2.5
        if dt * abs(self.c) * self.spectral_radius() > lim:
            raise StabilityError(
                f"dt = {dt:.3g} too large for grid spacing {self.h:.3g} "
                f"(need dt*|a-ib|*rho(A) <= {lim})")
        u = np.zeros(len(self.rho), dtype=complex)
        tau = tau0
        for _ in range(nsteps):
            k1 = self.rhs(u, tau, hfun)
            k2 = self.rhs(u + 0.5 * dt * k1, tau + 0.5 * dt, hfun)
            k3 = self.rhs(u + 0.5 * dt * k2, tau + 0.5 * dt, hfun)
            k4 = self.rhs(u + dt * k3, tau + dt, hfun)
            u = u + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            u[-1] = 0.0
            if not self.lifted and self.k > 0:
                u[0] = 0.0
            tau += dt
        if self.lifted:
            u = u * self.rho ** self.k
        return u

    def stable_dt(self, safety: float = 0.8) -> float:
        return safety * 2.5 / (abs(self.c) * self.spectral_radius())


def duhamel_mode_solve(k: int, h: Callable, tau0: float, tau1: float, pp: PhysParams,
                       rho_max: float = 20.0, n: int = 800, dt: Optional[float] = None,
                       method: str = "lifted") -> RadialComplexField:
    """phi(., tau1) for phi_t = (a - ib)(phi'' + phi'/rho - k^2 phi/rho^2) + h, phi(tau0) = 0.

    ``method="lifted"`` writes phi = rho^k psi and evolves psi under the
    radial Laplacian of R^{2k+2}; ``method="direct"`` evolves phi itself.
    ``h(rho, tau)`` must vanish like rho^k at the origin.  Returns values on
    rho_i = i rho_max / n, i >= 1.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    if method not in ("lifted", "direct"):
        raise ValueError(f"unknown method {method!r}")
    st = _ModeStepper(k, pp, rho_max, n, method == "lifted")
    if dt is None:
        dt = st.stable_dt()
    u = st.run(h, tau0, tau1, dt)
    return RadialComplexField(RadialGrid(st.rho[1:], "uniform"), u[1:])


# --------------------------------------------------------------------------
# mode -1 distorted eigenfunctions
#
# With Phi = rho^{5/2} y the eigen-equation becomes the regular problem
#   y'' + 5 y'/rho + (P(rho^2) + xi) y = 0,  P(u) = 4/(1+u) + 8/(1+u)^2,
# y(0) = 1.  y is even; its Taylor series converges for rho < 1.

def _P_coeffs(n):
    m = np.arange(n)
    return (-1.0) ** m * (4.0 + 8.0 * (m + 1))


def frobenius_coeffs(xi: float, n_terms: int = 60, order: int = 0):
    """Coefficients c_n of y = sum c_n rho^{2n}; order=1 gives d/dxi of them."""
    P = _P_coeffs(n_terms)
    c = np.zeros(n_terms)
    c[0] = 1.0
    d = np.zeros(n_terms)
    for n in range(1, n_terms):
        s = np.dot(P[:n], c[n - 1::-1]) + xi * c[n - 1]
        c[n] = -s / (2 * n * (2 * n + 4))
        sd = np.dot(P[:n], d[n - 1::-1]) + xi * d[n - 1] + c[n - 1]
        d[n] = -sd / (2 * n * (2 * n + 4))
    return d if order == 1 else c


def _series_eval(coef, rho):
    u = rho * rho
    y = np.polyval(coef[::-1], u)
    dcoef = coef[1:] * 2 * np.arange(1, len(coef))
    dy = rho * np.polyval(dcoef[::-1], u) if len(dcoef) else 0.0 * rho
    return y, dy


@dataclass
class DistortedEig:
    xi: float
    rho: np.ndarray
    values: np.ndarray
    normalization: str = "leading rho^(5/2) coefficient 1"

    def leading_exponent(self, n_fit: int = 5) -> float:
        r, v = self.rho[:n_fit], np.abs(self.values[:n_fit])
        return float(np.polyfit(np.log(r), np.log(v), 1)[0])


def _y_system(xi, with_derivative):
    def f(r, s):
        P = 4 / (1 + r * r) + 8 / (1 + r * r) ** 2
        out = [s[1], -5 * s[1] / r - (P + xi) * s[0]]
        if with_derivative:
            out += [s[3], -5 * s[3] / r - (P + xi) * s[2] - s[0]]
        return out
    return f


def _solve_y(xi, rho, handoff, rtol, with_derivative=False, n_terms=80):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0) or np.any(np.diff(rho) <= 0):
        raise ValueError("grid must be positive and increasing")
    if not 0 < handoff < 1:
        raise ValueError("series radius exceeded: handoff must lie in (0, 1)")
    c = frobenius_coeffs(xi, n_terms)
    cd = frobenius_coeffs(xi, n_terms, order=1)
    inner = rho <= handoff
    y = np.empty_like(rho)
    dy_xi = np.empty_like(rho)
    y[inner] = _series_eval(c, rho[inner])[0]
    dy_xi[inner] = _series_eval(cd, rho[inner])[0]
    outer = rho[~inner]
    if outer.size:
        y0, dy0 = _series_eval(c, np.array([handoff]))
        s0 = [y0[0], dy0[0]]
        if with_derivative:
            z0, dz0 = _series_eval(cd, np.array([handoff]))
            s0 += [z0[0], dz0[0]]
        sol = solve_ivp(_y_system(xi, with_derivative), (handoff, outer[-1]), s0,
                        method="DOP853", t_eval=outer, rtol=rtol, atol=1e-30)
        if not sol.success:
            raise RuntimeError(f"integration failed: {sol.message}")
        y[~inner] = sol.y[0]
        if with_derivative:
            dy_xi[~inner] = sol.y[2]
    return y, dy_xi


def distorted_eigenfunction(xi: float, grid, handoff: float = 0.5,
                            rtol: float = 1e-13) -> DistortedEig:
    """Regular solution of the mode -1 generalised eigen-problem at spectral value xi.

    Normalised so that Phi ~ rho^{5/2} at the origin; at xi = 0 this is
    rho^{5/2} / (1 + rho^2).
    """
    if xi < 0:
        raise ValueError("xi must be nonnegative")
    rho = grid.nodes if isinstance(grid, RadialGrid) else np.asarray(grid, dtype=float)
    y, _ = _solve_y(xi, rho, handoff, rtol)
    return DistortedEig(float(xi), rho, (rho**2.5 * y).astype(complex))


def phi1_profile(rho, handoff: float = 0.5, rtol: float = 1e-13):
    """First xi-coefficient: Phi(rho, xi) = Phi_0(rho) - xi rho^{5/2} Phi_1(rho^2) + O(xi^2).

    Returned as a function of rho (values Phi_1(rho^2)), from the
    xi-derivative of the series and of the ODE.
    """
    rho = np.asarray(rho, dtype=float)
    _, dy = _solve_y(0.0, rho, handoff, rtol, with_derivative=True)
    return -dy


def envelope_constant(xi: float, rho_max: float = 50.0, n: int = 2000) -> float:
    """max |Phi| / (rho^{5/2} <rho>^{-2}) over rho^2 xi <= 1 (and rho <= rho_max)."""
    top = rho_max if xi == 0 else min(rho_max, 1 / math.sqrt(xi))
    rho = np.geomspace(1e-3, top, n)
    e = distorted_eigenfunction(xi, rho)
    return float(np.max(np.abs(e.values) * (1 + rho**2) / rho**2.5))
