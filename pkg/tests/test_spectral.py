import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad, solve_ivp

from llgblowup.geometry import PhysParams
from llgblowup.linops import potential_V, scalar_kernels
from llgblowup.spectral import (
    SpectralProblem, distorted_eigenfunction, duhamel_mode_solve, envelope_constant,
    frobenius_coeffs, heat_kernel_gamma, phi1_profile, principal_eigenvalue,
    rayleigh_test_function, regular_kernel, sobolev_chain,
)


# ---------------------------------------------------------------- problem setup

def test_problem_validation():
    with pytest.raises(ValueError):
        SpectralProblem(0, 5.0)
    with pytest.raises(ValueError):
        SpectralProblem(0, 50.0, n=100)
    with pytest.raises(ValueError):
        principal_eigenvalue(SpectralProblem(0, 20.0, 400), method="qr")


@pytest.mark.parametrize("k", range(-3, 4))
def test_regular_kernel_is_bounded_at_origin(k):
    Z, dZ = regular_kernel(k)
    r = np.geomspace(1e-6, 1e-3, 5)
    assert np.all(np.isfinite(Z(r))) and np.abs(Z(r)).max() <= 1.0
    assert np.all(Z(np.geomspace(1e-3, 1e3, 20)) > 0)


# ---------------------------------------------------------------- eigenvalues

@pytest.fixture(scope="module")
def eig_k0():
    return {R: principal_eigenvalue(SpectralProblem(0, R)) for R in (50.0, 100.0, 200.0, 400.0)}


def test_k0_log_scaling(eig_k0):
    c = [e.lambda_min * R * R * math.log(R) for R, e in eig_k0.items()]
    assert max(c) / min(c) <= 1.3 * (1 / 0.7) and max(c) <= 1.3 * np.mean(c)
    assert min(c) >= 0.7 * np.mean(c)


def test_k0_ground_state_properties(eig_k0):
    lams = [e.lambda_min for e in eig_k0.values()]
    assert all(np.diff(lams) < 0)
    for e in eig_k0.values():
        f = e.eigvec.values.real
        assert np.all(f[:-1] > 0)
        assert e.residual <= 1e-8
        a, b, c = sobolev_chain(e)
        assert a <= b * (1 + 1e-6) and b <= c * (1 + 1e-6)


def test_k1_quartic_decay():
    radii = np.array([50.0, 100.0, 200.0])
    lam = [principal_eigenvalue(SpectralProblem(1, R)).lambda_min for R in radii]
    slope = np.polyfit(np.log(radii), np.log(lam), 1)[0]
    assert -4.3 <= slope <= -3.7


def test_k3_lower_bound():
    for R in (20.0, 50.0):
        lam = principal_eigenvalue(SpectralProblem(3, R)).lambda_min
        assert lam >= 9 / R**2 * 0.8


@pytest.mark.parametrize("k", range(-3, 4))
def test_nonnegative_and_small_residual(k):
    e = principal_eigenvalue(SpectralProblem(k, 30.0, 600))
    assert e.lambda_min >= -1e-10
    assert e.residual <= 1e-8


@pytest.mark.parametrize("k", [0, -1])
def test_two_discretisations_agree(k):
    # independent assemblies: transformed form in f/Z versus the potential form
    prob = SpectralProblem(k, 20.0, 1500)
    gs = principal_eigenvalue(prob, "ground-state").lambda_min
    dr = principal_eigenvalue(prob, "direct").lambda_min
    assert gs == pytest.approx(dr, rel=1e-3)


def test_eigenvalue_against_shooting():
    # oracle: shoot the radial ODE f'' + f'/r + (V_k + lam) f = 0 from the
    # regular end and bisect on the sign of f(R)
    k, R = 2, 12.0
    est = principal_eigenvalue(SpectralProblem(k, R, 2000)).lambda_min

    def f_at_R(lam):
        r0 = 1e-4
        ode = lambda r, y: [y[1], -y[1] / r - (potential_V(k, r) + lam) * y[0]]
        # regular solution behaves like r^{|k-1|}... use the kernel near 0
        Z, dZ = regular_kernel(k)
        sol = solve_ivp(ode, (r0, R), [Z(r0), dZ(r0)], rtol=1e-11, atol=1e-30,
                        method="DOP853")
        return sol.y[0, -1]

    lo, hi = 0.5 * est, 1.5 * est
    assert f_at_R(lo) * f_at_R(hi) < 0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if f_at_R(mid) * f_at_R(lo) > 0:
            lo = mid
        else:
            hi = mid
    assert est == pytest.approx(0.5 * (lo + hi), rel=2e-3)


# ---------------------------------------------------------------- test functions

def test_rayleigh_k0_upper_bound():
    R = 200.0
    Q, mass = rayleigh_test_function(0, R)
    assert Q / mass <= 5 / (R * R * math.log(R))
    assert 1.0 <= mass / math.log(R) <= 10.0


def test_rayleigh_k1_orders():
    for R in (100.0, 200.0):
        Q, mass = rayleigh_test_function(1, R)
        assert 1.0 <= mass <= 5.0
        assert 10.0 <= Q * R**4 <= 100.0
    with pytest.raises(ValueError):
        rayleigh_test_function(2, 100.0)


@pytest.mark.parametrize("k", [0, 1])
def test_rayleigh_against_plain_quadrature(k):
    # oracle: integrate |f'|^2 - V f^2 over the whole range without the
    # closed-form core term; the cut-off is a quintic smoothstep
    R = 40.0
    Z, dZ = scalar_kernels(k).Z1, scalar_kernels(k).dZ1
    s = lambda x: np.clip(x, 0, 1)
    eta = lambda r: 1 - (lambda y: 10 * y**3 - 15 * y**4 + 6 * y**5)(s(2 * r / R - 1))
    deta = lambda r: -(lambda y: 30 * y**2 - 60 * y**3 + 30 * y**4)(s(2 * r / R - 1)) * 2 / R
    f = lambda r: eta(r) * Z(r)
    df = lambda r: eta(r) * dZ(r) + deta(r) * Z(r)
    integrand = lambda r: (df(r) ** 2 - potential_V(k, r, allow_pole=True) * f(r) ** 2) * r
    Q = 2 * math.pi * sum(quad(integrand, a, b, epsabs=1e-13, epsrel=1e-10, limit=500)[0]
                          for a, b in ((1e-12, 1), (1, R / 2), (R / 2, R)))
    Q_pkg, _ = rayleigh_test_function(k, R)
    assert Q_pkg == pytest.approx(Q, rel=1e-5)
    assert f(R) == 0.0


# ---------------------------------------------------------------- heat kernel

def test_heat_kernel_real_case():
    pp = PhysParams(1.0, 0.0)
    x = np.array([[0.3, -0.2], [1.0, 2.0]])
    ref = np.exp(-np.sum(x * x, -1) / 2.0) / (2 * math.pi)
    assert np.allclose(heat_kernel_gamma(2, x, 0.5, pp), ref, rtol=1e-14)
    with pytest.raises(ValueError):
        heat_kernel_gamma(2, x, 0.0, pp)


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_heat_kernel_unit_mass(d):
    pp = PhysParams(0.6, 0.8)
    t = 0.7
    surf = 2 * math.pi ** (d / 2) / math.gamma(d / 2)

    def part(fn):
        g = lambda r: fn(complex(heat_kernel_gamma(d, np.array([r] + [0.0] * (d - 1)), t, pp)))
        return quad(lambda r: g(r) * r ** (d - 1), 0, 60, epsabs=1e-13, limit=400)[0]

    total = surf * complex(part(lambda z: z.real), part(lambda z: z.imag))
    assert abs(total - 1) <= 1e-6


@given(st.floats(0.05, 1.0), st.floats(-1, 1), st.floats(0.01, 5),
       st.lists(st.floats(-10, 10), min_size=2, max_size=2), st.integers(1, 4))
def test_heat_kernel_modulus_bound(a, b, t, xs, d):
    pp = PhysParams(a, b)
    x = np.array((xs + [0.3, -0.4])[:d])
    val = abs(heat_kernel_gamma(d, x, t, pp))
    a_n = pp.a
    # |(a - ib)^{-d/2}| (4 pi)^{-d/2} <= 1 whenever a^2 + b^2 = 1
    assert val <= t ** (-d / 2) * math.exp(-a_n * x @ x / (4 * t)) * (1 + 1e-12)


# ---------------------------------------------------------------- Duhamel

def _manufactured(k, pp):
    r, tau = sp.symbols("r tau", positive=True)
    phi = r**k * sp.exp(-r**2) * sp.sin(tau) * (1 + sp.I * tau)
    c = sp.Integer(1) * (pp.a - sp.I * pp.b)
    h = sp.diff(phi, tau) - c * (sp.diff(phi, r, 2) + sp.diff(phi, r) / r - k**2 * phi / r**2)
    return sp.lambdify((r, tau), phi, "numpy"), sp.lambdify((r, tau), sp.simplify(h), "numpy")


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("ab", [(1.0, 0.0), (0.6, 0.8)])
def test_duhamel_manufactured(k, ab):
    pp = PhysParams(*ab)
    phi, h = _manufactured(k, pp)
    hh = lambda rho, tau: np.asarray(h(rho, tau), dtype=complex) * np.ones_like(rho)
    errs = []
    for n in (100, 200):
        out = duhamel_mode_solve(k, hh, 0.0, 0.5, pp, rho_max=8.0, n=n)
        errs.append(np.abs(out.values - phi(out.grid.nodes, 0.5)).max())
    assert errs[1] <= 1e-5
    assert math.log2(errs[0] / errs[1]) >= 1.9


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_duhamel_lifted_vs_direct(k):
    rng = np.random.default_rng(10 + k)
    pp = PhysParams(0.8, 0.6)
    cs = rng.normal(size=(3, 2)) @ np.array([1, 1j])
    centres = rng.uniform(1.0, 3.0, 3)

    def h(rho, tau):
        bump = sum(c * np.exp(-(rho - m) ** 2 * 4) for c, m in zip(cs, centres))
        return rho**k / (1 + rho**k) * bump * (1 + tau)

    a = duhamel_mode_solve(k, h, 0.0, 0.3, pp, rho_max=10.0, n=400, method="lifted")
    b = duhamel_mode_solve(k, h, 0.0, 0.3, pp, rho_max=10.0, n=400, method="direct")
    scale = np.abs(a.values).max()
    assert np.abs(a.values - b.values).max() <= 1e-6 * scale


def test_duhamel_zero_source_and_errors():
    pp = PhysParams()
    out = duhamel_mode_solve(1, lambda r, t: 0 * r, 0.0, 0.1, pp, n=100)
    assert np.array_equal(out.values, np.zeros_like(out.values))
    with pytest.raises(ValueError):
        duhamel_mode_solve(-1, lambda r, t: 0 * r, 0.0, 0.1, pp)
    with pytest.raises(Exception):
        duhamel_mode_solve(0, lambda r, t: 0 * r, 0.0, 0.1, pp, n=200, dt=1.0)


# ---------------------------------------------------------------- mode -1

def test_zero_energy_profile():
    rho = np.geomspace(0.01, 50.0, 400)
    e = distorted_eigenfunction(0.0, rho)
    ref = rho**2.5 / (1 + rho**2)
    assert np.max(np.abs(e.values.real / ref - 1)) <= 1e-8
    assert np.all(e.values.imag == 0)


@pytest.mark.parametrize("xi", [0.0, 0.3, 4.0, 100.0])
def test_leading_power(xi):
    e = distorted_eigenfunction(xi, np.geomspace(1e-4, 1e-2, 20))
    assert abs(e.leading_exponent() - 2.5) <= 0.05


def test_frobenius_against_symbolic_series():
    # oracle: plug a truncated power series into the ODE symbolically
    rho, xi = sp.symbols("rho xi")
    N = 6
    cs = sp.symbols(f"c1:{N + 1}")
    y = 1 + sum(c * rho ** (2 * (i + 1)) for i, c in enumerate(cs))
    P = 4 / (1 + rho**2) + 8 / (1 + rho**2) ** 2
    expr = sp.series(sp.diff(y, rho, 2) + 5 * sp.diff(y, rho) / rho + (P + xi) * y,
                     rho, 0, 2 * N).removeO()
    eqs = [sp.expand(expr).coeff(rho, 2 * j) for j in range(N)]
    sol = sp.solve(eqs, cs, dict=True)[0]
    for xv in (0.0, 1.5):
        num = frobenius_coeffs(xv, N + 1)
        for i, c in enumerate(cs):
            assert num[i + 1] == pytest.approx(float(sol[c].subs(xi, xv)), rel=1e-12, abs=1e-15)


def _halfline_potential(r):
    return -15 / (4 * r * r) + 4 / (1 + r * r) + 8 / (1 + r * r) ** 2


def test_halfline_potential_zero_mode():
    r = sp.symbols("r", positive=True)
    phi0 = r**sp.Rational(5, 2) / (1 + r**2)
    pot = -sp.Rational(15, 4) / r**2 + 4 / (1 + r**2) + 8 / (1 + r**2) ** 2
    assert sp.simplify(sp.diff(phi0, r, 2) + pot * phi0) == 0


@pytest.mark.parametrize("xi", [0.5, 3.0])
def test_distorted_against_independent_integration(xi):
    # oracle: Phi'' + (U + xi) Phi = 0 in Schrodinger form, started from the
    # two-term expansion at a small radius and integrated with Radau
    def ode(r, s):
        return [s[1], -(_halfline_potential(r) + xi) * s[0]]

    c1 = frobenius_coeffs(xi, 3)[1]
    r0 = 1e-3
    s0 = [r0**2.5 * (1 + c1 * r0**2), 2.5 * r0**1.5 + 4.5 * c1 * r0**3.5]
    grid = np.array([0.5, 1.0, 2.0, 5.0])
    sol = solve_ivp(ode, (r0, 5.0), s0, method="Radau", t_eval=grid, rtol=1e-11, atol=1e-14)
    e = distorted_eigenfunction(xi, grid)
    assert np.allclose(e.values.real, sol.y[0], rtol=1e-6, atol=1e-9)


def test_envelope_constants():
    for xi in (0.0, 1e-3, 0.1, 1.0, 10.0, 1e3):
        assert envelope_constant(xi) <= 5.0


def test_phi1_expansion_bounds():
    rho = np.geomspace(0.02, 10, 60)
    p1 = phi1_profile(rho)
    u = rho**2
    assert np.all(p1 >= 0) and np.all(p1 <= u / (1 + u) * (1 + 1e-9))
    # finite-difference check in xi
    xi = 1e-6
    e0 = distorted_eigenfunction(0.0, rho).values.real
    e1 = distorted_eigenfunction(xi, rho).values.real
    fd = (e1 - e0) / (-rho**0.5 * u * xi)
    assert np.allclose(fd, p1, rtol=1e-3, atol=1e-8)


def test_distorted_errors():
    with pytest.raises(ValueError):
        distorted_eigenfunction(-1.0, np.array([0.1, 0.2]))
    with pytest.raises(ValueError):
        distorted_eigenfunction(1.0, np.array([0.1, 0.2]), handoff=1.5)
