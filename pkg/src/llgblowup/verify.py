"""Quick invariant suite behind ``llg-blowup verify``.

Every check is deterministic given the seed and prints one line:
``PASS|FAIL  name  value  (tolerance)``.  Heavier versions of the same
checks live in the test suite.
"""
from __future__ import annotations

import math

import numpy as np


def _line(ok: bool, name: str, value: float, tol: str) -> str:
    return f"{'PASS' if ok else 'FAIL'}  {name:<34s} {value:.3e}  ({tol})"


def check_moments():
    from .reduced import moment_table
    err = max(abs(v - e) for _, v, e in moment_table())
    return err <= 1e-8, "moment constants", err, "<= 1e-8"


def check_kernels():
    from .linops import RadialGrid, mode_residual, scalar_kernels
    g = RadialGrid.graded(1e-2, 1e2, 2000)
    worst = max(mode_residual(k, w, g) for k in range(-3, 4) for w in (1, 2))
    return worst <= 1e-4, "kernel residual (relative)", worst, "<= 1e-4"


def check_wronskian():
    from .linops import scalar_kernels
    r = np.geomspace(1e-2, 1e2, 200)
    worst = max(float(np.max(np.abs(scalar_kernels(k).wronskian(r) * r - 1)))
                for k in range(-3, 4))
    return worst <= 1e-9, "wronskian rho W - 1", worst, "<= 1e-9"


def check_complex_form(rng, n_fields: int = 5):
    from .geometry import PhysParams
    from .linops import (PolarGrid, TangentField, apply_Lin_complex, c2_proxy,
                         damped_complex_side, from_complex_field, random_complex_field)
    g = PolarGrid.make(np.linspace(0.2, 5.0, 200), 200)
    h = max(g.rho[1] - g.rho[0], g.dtheta)
    worst = 0.0
    for _ in range(n_fields):
        a, b = rng.uniform(0.2, 1.0), rng.uniform(-1.0, 1.0)
        pp = PhysParams(a, b)
        f = random_complex_field(g, rng)
        lhs = damped_complex_side(TangentField(g, from_complex_field(f, g)), pp)
        diff = np.abs(lhs - pp.cbar * apply_Lin_complex(f, g)).max()
        worst = max(worst, float(diff / (h * h * c2_proxy(f, g))))
    return worst <= 10, "vector/complex form ratio", worst, "<= 10 h^2 C2"


def check_eigen_scaling():
    from .spectral import SpectralProblem, principal_eigenvalue
    radii = [50.0, 100.0, 200.0]
    l0 = [principal_eigenvalue(SpectralProblem(0, R)).lambda_min for R in radii]
    l1 = [principal_eigenvalue(SpectralProblem(1, R)).lambda_min for R in radii]
    c = [lam * R * R * math.log(R) for lam, R in zip(l0, radii)]
    spread = max(c) / min(c) - 1
    slope = float(np.polyfit(np.log(radii), np.log(l1), 1)[0])
    ok = spread <= 0.3 and -4.3 <= slope <= -3.7 and min(l0 + l1) >= 0
    return ok, "eigen scaling (k=1 slope)", slope, "in [-4.3, -3.7]"


def check_distorted():
    from .spectral import distorted_eigenfunction
    rho = np.geomspace(0.01, 50.0, 300)
    e = distorted_eigenfunction(0.0, rho)
    err = float(np.max(np.abs(e.values.real * (1 + rho**2) / rho**2.5 - 1)))
    return err <= 1e-8, "mode -1 zero-energy profile", err, "<= 1e-8"


def check_b0():
    from .reduced import b0_relative_error
    worst = 0.0
    for T in (1e-3, 1e-5):
        for frac in (0.9, 0.99, 0.999):
            err, tol, _ = b0_relative_error(T, frac)
            worst = max(worst, err / tol)
    return worst <= 1, "B0[p0] error / tolerance", worst, "<= 1"


def check_params(rng):
    from .reduced import param_feasible, sample_box, sample_outside
    inside = sum(param_feasible(sample_box(rng))[0] for _ in range(100))
    outside = sum(not param_feasible(sample_outside(rng)[0])[0] for _ in range(10))
    ok = inside == 100 and outside == 10
    return ok, "box feasible / outside violating", float(inside + outside), "== 110"


def check_bubble_energy():
    from .evolve import Mesh, energy, initial_state
    st = initial_state(Mesh.sinh(50.0, 4000, 8.0), 1.0)
    # analytic energy on the truncated disc of radius 50
    exact = 4 * math.pi * 50.0**2 / (1 + 50.0**2)
    err = abs(energy(st) - exact)
    return err <= 1e-6 * 4 * math.pi, "E(W) on a disc", err, "<= 1e-6 * 4 pi"


def check_heat_kernel():
    from scipy.integrate import dblquad
    from .geometry import PhysParams
    from .spectral import heat_kernel_gamma
    pp = PhysParams(0.6, 0.8)
    f = lambda y, x, part: getattr(complex(heat_kernel_gamma(2, np.array([x, y]), 0.5, pp)), part)
    re = dblquad(lambda y, x: f(y, x, "real"), -20, 20, -20, 20, epsabs=1e-10)[0]
    im = dblquad(lambda y, x: f(y, x, "imag"), -20, 20, -20, 20, epsabs=1e-10)[0]
    err = abs(complex(re, im) - 1)
    return err <= 1e-6, "complex heat kernel mass", err, "<= 1e-6"


def run_suite(seed: int = 0):
    """Return (report lines, all_passed)."""
    rng = np.random.default_rng(seed)
    checks = [
        check_moments,
        check_kernels,
        check_wronskian,
        lambda: check_complex_form(rng),
        check_eigen_scaling,
        check_distorted,
        check_b0,
        lambda: check_params(rng),
        check_bubble_energy,
        check_heat_kernel,
    ]
    lines, all_ok = [f"# verify seed={seed}"], True
    for chk in checks:
        ok, name, value, tol = chk()
        all_ok &= bool(ok)
        lines.append(_line(bool(ok), name, value, tol))
    lines.append("ALL PASS" if all_ok else "SOME CHECKS FAILED")
    return lines, all_ok
