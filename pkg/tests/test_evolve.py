import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from llgblowup.geometry import PhysParams, bubble_frame
from llgblowup.evolve import (
    BlowupDiagnostics, Mesh, SimConfig, SimState, UnderresolvedBlowup, bubble_profile,
    core_phase, dissipation, energy, equivariant_rhs, fit_rate, grad_sq,
    initial_state, lambda_estimate, phase_winding, run, run_and_fit, stable_dt, step,
)


def disc_energy(R, lam=1.0):
    """Dirichlet energy of the scaled bubble on the disc of radius R."""
    s = (R / lam) ** 2
    return 4 * math.pi * s / (1 + s)


# ---------------------------------------------------------------- configuration

def test_config_from_dict():
    cfg = SimConfig.from_dict({"a": "0.8", "b": 0.6, "n_nodes": "300", "renormalize": "no"})
    assert cfg.n_nodes == 300 and cfg.renormalize is False
    assert cfg.pp.a == pytest.approx(0.8)
    with pytest.raises(KeyError):
        SimConfig.from_dict({"bogus": 1})


def test_mesh_graded_and_uniform():
    m = Mesh.sinh(2.0, 100, 6.0)
    assert m.r[0] == 0 and m.r[-1] == pytest.approx(2.0)
    assert np.all(np.diff(m.r) > 0) and np.all(np.diff(np.diff(m.r)) > 0)
    u = Mesh.sinh(2.0, 100, 0.0)
    assert np.allclose(np.diff(u.r), 0.02)


# ---------------------------------------------------------------- right-hand side

def test_profile_matches_geometry():
    m = Mesh.sinh(5.0, 200, 4.0)
    v = bubble_profile(m, 0.5, gamma=0.3)
    y = np.column_stack([m.r / 0.5, np.zeros_like(m.r)])
    W = bubble_frame(y).W
    c, s = math.cos(0.3), math.sin(0.3)
    ref = np.column_stack([c * W[:, 0] - s * W[:, 1], s * W[:, 0] + c * W[:, 1], W[:, 2]])
    assert np.allclose(v, ref, atol=1e-14)


def test_constant_map_is_stationary():
    m = Mesh.sinh(1.0, 100, 3.0)
    v = np.tile([0.0, 0.0, 1.0], (101, 1))
    assert np.abs(equivariant_rhs(SimState(0.0, v, m), PhysParams(0.6, 0.8))).max() == 0.0
    assert energy(SimState(0.0, v, m)) <= 1e-25


def test_rhs_b0_is_tension_field():
    m = Mesh.sinh(3.0, 300, 4.0)
    st_ = initial_state(m, 0.3, twist=0.7, azimuth=0.4)
    F = equivariant_rhs(st_, PhysParams(1.0, 0.0))
    G = equivariant_rhs(st_, PhysParams(0.6, 0.8))
    # a=1 field scaled by 0.6 plus the dispersive part, which is orthogonal to it
    disp = G - 0.6 * F
    assert np.abs(np.sum(disp[1:-1] * F[1:-1], 1)).max() < 1e-8 * np.abs(F).max() ** 2


@pytest.mark.parametrize("ab", [(1.0, 0.0), (0.6, 0.8)])
def test_bubble_residual_second_order(ab):
    pp = PhysParams(*ab)
    errs, hs = [], []
    for n in (200, 400, 800):
        m = Mesh.sinh(10.0, n, 3.0)
        F = equivariant_rhs(initial_state(m, 1.0), pp)
        errs.append(np.abs(F).max())
        hs.append(m.s[1] - m.s[0])
    order = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert order >= 1.9


def test_rhs_tangent_to_second_order():
    errs, hs = [], []
    for n in (200, 400, 800):
        m = Mesh.sinh(3.0, n, 4.0)
        st_ = initial_state(m, 0.3, twist=1.0, azimuth=0.5)
        F = equivariant_rhs(st_, PhysParams(0.8, 0.6))
        errs.append(np.abs(np.sum(F * st_.v, 1)).max())
        hs.append(m.s[1])
    assert np.polyfit(np.log(hs), np.log(errs), 1)[0] >= 1.9


@pytest.mark.parametrize("scheme,tol", [("rk4", 1e-14), ("ros2", 1e-7)])
def test_b_reversal_symmetry(scheme, tol):
    # mirroring y maps the b flow onto the -b flow; RK4 commutes with it to rounding,
    # the one-sided FD Jacobian of ROS2 only up to its perturbation size
    m = Mesh.sinh(1.0, 150, 5.0)
    s0 = initial_state(m, 0.1, twist=1.0, azimuth=0.8)
    conj = SimState(0.0, s0.v * np.array([1, -1, 1]), m)
    kw = dict(n_nodes=150, grading=5.0, t_max=0.005, rtol=1e-6, scheme=scheme, dt=1e-6,
              dt_policy="fixed" if scheme == "rk4" else "adaptive")
    if scheme == "rk4":
        kw["dt"] = stable_dt(m, SimConfig(**kw))
        kw["t_max"] = 200 * kw["dt"]
    f1, _, _ = run(SimConfig(a=0.8, b=0.6, **kw), s0, record=False)
    f2, _, _ = run(SimConfig(a=0.8, b=-0.6, **kw), conj, record=False)
    assert f1.t == f2.t
    assert np.abs(f1.v * np.array([1, -1, 1]) - f2.v).max() <= tol


# ---------------------------------------------------------------- energy and scale

def test_energy_of_bubble():
    m = Mesh.sinh(50.0, 4000, 8.0)
    assert abs(energy(initial_state(m, 1.0)) - disc_energy(50.0)) <= 1e-6 * 4 * math.pi
    m = Mesh.sinh(1.0, 2000, 10.0)
    assert energy(initial_state(m, 1e-3)) == pytest.approx(disc_energy(1.0, 1e-3), rel=1e-7)


def test_grad_sq_of_bubble():
    m = Mesh.sinh(4.0, 800, 3.0)
    g = grad_sq(initial_state(m, 0.5))
    r = m.r[1:-1]
    ref = 8 / 0.25 / (1 + (r / 0.5) ** 2) ** 2
    assert np.allclose(g, ref, rtol=1e-3)


@pytest.mark.parametrize("lam", [0.01, 0.05])
def test_lambda_estimate(lam):
    m = Mesh.sinh(1.0, 800, 8.0)
    assert lambda_estimate(initial_state(m, lam)) == pytest.approx(lam, rel=0.02)


@given(st.floats(-3, 3))
@settings(max_examples=15)
def test_lambda_estimate_rotation_invariant(gamma):
    m = Mesh.sinh(1.0, 400, 6.0)
    a = lambda_estimate(initial_state(m, 0.05, twist=0.5))
    b = lambda_estimate(initial_state(m, 0.05, twist=0.5, gamma=gamma))
    assert a == pytest.approx(b, rel=1e-12)
    assert core_phase(initial_state(m, 0.05, gamma=gamma)) == pytest.approx(
        math.atan2(math.sin(gamma), math.cos(gamma)), abs=1e-12)


def test_lambda_estimate_dilation():
    # dilating the data by s (same profile in r/R) scales lambda_est by s
    base = lambda_estimate(initial_state(Mesh.sinh(1.0, 400, 6.0), 0.05, twist=0.5))
    for s in (2.0, 0.25):
        st_ = initial_state(Mesh.sinh(s, 400, 6.0), 0.05 * s, twist=0.5)
        assert lambda_estimate(st_) == pytest.approx(s * base, rel=1e-10)


# ---------------------------------------------------------------- explicit stepping

def _small_case(n=120, renorm=True, a=1.0, b=0.0):
    m = Mesh.sinh(2.0, n, 3.0)
    cfg = SimConfig(a=a, b=b, n_nodes=n, grading=3.0, r_outer=2.0, scheme="rk4",
                    dt_policy="fixed", renormalize=renorm)
    cfg.dt = stable_dt(m, cfg)
    return m, cfg


def test_step_rejects_unstable_dt():
    m, cfg = _small_case()
    with pytest.raises(ValueError):
        step(initial_state(m, 0.5), cfg, dt=10 * cfg.dt)


def test_step_from_bubble_stays_close():
    for n in (120, 240):
        m, cfg = _small_case(n)
        w = initial_state(m, 0.5)
        nxt = step(w, cfg)
        dev = np.abs(nxt.v - w.v).max()
        F = np.abs(equivariant_rhs(w, cfg.pp)).max()
        assert dev <= 1.01 * cfg.dt * F + 1e-15


def test_constraint_drift():
    m, cfg = _small_case(renorm=False, a=0.6, b=0.8)
    s = initial_state(m, 0.3, twist=0.5, azimuth=0.3)
    for _ in range(1000):
        s = step(s, cfg)
    assert np.abs(np.linalg.norm(s.v, axis=1) - 1).max() <= 1e-6
    m, cfg = _small_case(renorm=True, a=0.6, b=0.8)
    s = initial_state(m, 0.3, twist=0.5, azimuth=0.3)
    for _ in range(1000):
        s = step(s, cfg)
        assert np.abs(np.linalg.norm(s.v, axis=1) - 1).max() <= 1e-12


def test_rk4_fourth_order_in_time():
    m, cfg = _small_case(60, a=0.8, b=0.6)
    s0 = initial_state(m, 0.4, twist=0.8, azimuth=0.3)
    T = 10 * cfg.dt

    def go(k):
        s = s0
        for _ in range(k):
            s = step(s, cfg, dt=T / k)
        return s.v

    ref, v1, v2 = go(80), go(10), go(20)
    e1, e2 = np.abs(v1 - ref).max(), np.abs(v2 - ref).max()
    assert math.log2(e1 / e2) >= 3.5


def test_energy_monotone_and_dissipation_rate():
    m, cfg = _small_case(200)
    s = initial_state(m, 0.3, twist=0.8)
    E0 = energy(s)
    Es, Ds, ts = [E0], [dissipation(s, cfg.pp)], [0.0]
    for _ in range(400):
        s = step(s, cfg)
        Es.append(energy(s))
        Ds.append(dissipation(s, cfg.pp))
        ts.append(s.t)
    Es = np.array(Es)
    assert np.all(np.diff(Es) <= 1e-8 * E0)
    rate = -np.gradient(Es, ts)
    mid = slice(10, -10)
    assert np.allclose(rate[mid], np.array(Ds)[mid], rtol=0.05)


def test_underresolved_error():
    m, cfg = _small_case()
    s = initial_state(m, 0.5)
    s.v[5] = np.nan
    with pytest.raises(UnderresolvedBlowup) as ei:
        step(s, cfg)
    assert ei.value.state is s


# ---------------------------------------------------------------- long runs

def test_exact_bubble_does_not_blow_up():
    cfg = SimConfig(a=1.0, b=0.0, n_nodes=200, grading=3.0, r_outer=5.0, t_max=0.5,
                    rtol=1e-6, lam_stop=1e-3)
    m = Mesh.sinh(5.0, 200, 3.0)
    d = run_and_fit(cfg, initial_state(m, 1.0))
    assert d.reason == "t_max" and d.fit is None
    assert d.t[-1] == pytest.approx(0.5)
    assert np.abs(d.energy - d.energy[0]).max() <= 1e-8 * d.energy[0]


def test_ros2_constraint_and_energy():
    cfg = SimConfig(a=0.8, b=0.6, n_nodes=200, grading=6.0, t_max=0.05, rtol=1e-6)
    m = Mesh.sinh(1.0, 200, 6.0)
    d = run_and_fit(cfg, initial_state(m, 0.1, twist=1.0))
    assert np.all(np.diff(d.energy) <= 1e-8 * d.energy[0])
    final, _, _ = run(cfg, initial_state(m, 0.1, twist=1.0), record=False)
    assert np.abs(np.linalg.norm(final.v, axis=1) - 1).max() <= 1e-12


def test_monitor_stops_run():
    cfg = SimConfig(n_nodes=100, grading=4.0, t_max=1.0)
    m = Mesh.sinh(1.0, 100, 4.0)
    calls = []
    _, _, reason = run(cfg, initial_state(m, 0.1, twist=1.0),
                       monitor=lambda s, lam: calls.append(lam) or len(calls) > 3)
    assert reason == "monitor" and len(calls) == 4
    with pytest.raises(ValueError):
        run(SimConfig(scheme="euler"), initial_state(m, 0.1))


# ---------------------------------------------------------------- fitting

def test_fit_recovers_power_law():
    T, alpha, c = 0.3, 1.1, 0.7
    t = T - np.geomspace(0.2, 1e-5, 300)
    lam = c * (T - t) ** alpha
    fit = fit_rate(t, lam)
    assert fit["exponent"] == pytest.approx(alpha, rel=1e-6)
    assert fit["T_est"] == pytest.approx(T, rel=1e-8)
    assert fit["prefactor"] == pytest.approx(c, rel=1e-5)
    lo = lam[-1]
    assert lam[np.searchsorted(t, fit["window"][0])] <= 10 * lo * (1 + 1e-12)


def test_fit_needs_samples():
    assert fit_rate(np.arange(5.0), np.ones(5)) is None


def test_diagnostics_output(tmp_path):
    d = BlowupDiagnostics(np.arange(3.0), np.ones(3), np.ones(3), np.ones(3),
                          fit={"T_est": 1.0, "exponent": 1.0, "prefactor": 1.0, "window": [0, 1]})
    d.to_csv(tmp_path / "s.csv")
    head = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert head == "t,lambda_est,energy,max_grad"
    assert json.loads(d.fit_json())["exponent"] == 1.0


def test_phase_winding_sign_flips():
    # dispersive collapse needs the outer phase tuned; the winding sign brackets it
    cfg = SimConfig(a=0.8, b=0.6, n_nodes=200, grading=6.0, rtol=1e-4, lam_stop=1e-4,
                    t_max=2.0, dt=1e-6)
    m = Mesh.sinh(1.0, 200, 6.0)
    w_lo, r_lo = phase_winding(cfg, initial_state(m, 0.1, 1.0, 0.0, 0.4))
    w_hi, r_hi = phase_winding(cfg, initial_state(m, 0.1, 1.0, 0.0, 2.0))
    assert r_lo == r_hi == "monitor"
    assert w_lo * w_hi < 0
