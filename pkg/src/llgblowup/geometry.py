"""Bubble profiles, the Frenet frame along W, and the multi-bubble ansatz.

Everything here is closed form.  Functions accept scalars or numpy arrays
with a trailing coordinate axis (2 for points in the plane, 3 for vectors
in R^3) and broadcast over the leading axes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

U_INF = np.array([0.0, 0.0, 1.0])


class TangencyError(ValueError):
    """Raised when a vector that should be tangent to the base map is not."""


class DegenerateConfiguration(ValueError):
    """Raised when the unit-length corrector cannot be formed."""


@dataclass(frozen=True)
class PhysParams:
    """Damping/dispersion pair.  The constructor rescales (a, b) onto the unit circle."""

    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        a, b = float(self.a), float(self.b)
        if not (np.isfinite(a) and np.isfinite(b)) or a <= 0.0:
            raise ValueError(f"need a > 0, got a={a}")
        nrm = np.hypot(a, b)
        object.__setattr__(self, "a", a / nrm)
        object.__setattr__(self, "b", b / nrm)

    @property
    def c(self) -> complex:
        """a + ib."""
        return complex(self.a, self.b)

    @property
    def cbar(self) -> complex:
        """a - ib."""
        return complex(self.a, -self.b)


@dataclass(frozen=True)
class BubbleParams:
    lam: float = 1.0
    gamma: float = 0.0
    xi: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"bubble scale must be positive, got {self.lam}")
        object.__setattr__(self, "xi", tuple(float(c) for c in self.xi))

    @property
    def p(self) -> complex:
        return self.lam * np.exp(1j * self.gamma)


@dataclass
class FrameSample:
    W: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    w: np.ndarray
    w_rho: np.ndarray
    grad_sq: np.ndarray
    rho: np.ndarray = field(default=None)
    theta: np.ndarray = field(default=None)


def profile_w(rho):
    """Angle profile of the degree-one bubble and its first derivative.

    Returns ``(w, w_rho, sin w, cos w)`` with ``w = pi - 2 arctan(rho)``.
    The trigonometric values are given in rational form to avoid losing
    digits near the poles.
    """
    rho = np.asarray(rho, dtype=float)
    d = rho * rho + 1.0
    w = np.pi - 2.0 * np.arctan(rho)
    return w, -2.0 / d, 2.0 * rho / d, (rho * rho - 1.0) / d


def _stack(*comps):
    return np.stack(np.broadcast_arrays(*comps), axis=-1)


def frame_polar(rho, theta) -> FrameSample:
    """Frame at polar coordinates (rho, theta) of the bubble variable."""
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    w, w_rho, sw, cw = profile_w(rho)
    ct, st = np.cos(theta), np.sin(theta)
    W = _stack(ct * sw, st * sw, cw)
    E1 = _stack(ct * cw, st * cw, -sw)
    E2 = _stack(-st, ct, np.zeros_like(ct * rho))
    return FrameSample(W, E1, E2, w, w_rho, 2.0 * w_rho**2, rho, theta)


def bubble_frame(y) -> FrameSample:
    """W(y) with its Frenet frame E1, E2 and |grad W|^2 = 8/(1+|y|^2)^2.

    At y = 0 the polar angle is taken to be 0.
    """
    y = np.asarray(y, dtype=float)
    rho = np.hypot(y[..., 0], y[..., 1])
    theta = np.arctan2(y[..., 1], y[..., 0])  # atan2(0, 0) = 0
    fr = frame_polar(rho, theta)
    # W in Cartesian rational form keeps |W| = 1 to rounding
    d = 1.0 + rho * rho
    fr.W = _stack(2 * y[..., 0] / d, 2 * y[..., 1] / d, (rho * rho - 1.0) / d)
    return fr


def rotate_z(gamma, v):
    """Q_gamma v: rotate the first two components by e^{i gamma}."""
    v = np.asarray(v, dtype=float)
    c, s = np.cos(gamma), np.sin(gamma)
    return _stack(c * v[..., 0] - s * v[..., 1], s * v[..., 0] + c * v[..., 1], v[..., 2])


def bubble_field(p: BubbleParams, x):
    """U(x) = Q_gamma W((x - xi)/lambda)."""
    x = np.asarray(x, dtype=float)
    y = (x - np.asarray(p.xi)) / p.lam
    return rotate_z(p.gamma, bubble_frame(y).W)


def ustar_sum(bubbles: Sequence[BubbleParams], x, strict: bool = False):
    """Superposition U* = -(N-1) U_inf + sum_j U^(j)(x)."""
    n = len(bubbles)
    if n == 0:
        raise ValueError("need at least one bubble")
    if n > 1:
        centers = np.array([b.xi for b in bubbles])
        sep = min(np.linalg.norm(centers[i] - centers[j])
                  for i in range(n) for j in range(i + 1, n))
        if sep < 10 * max(b.lam for b in bubbles):
            msg = f"bubble centres only {sep:.3g} apart"
            if strict:
                raise ValueError(msg)
            warnings.warn(msg, stacklevel=2)
    x = np.asarray(x, dtype=float)
    out = -(n - 1) * np.broadcast_to(U_INF, x.shape[:-1] + (3,)).copy()
    for b in bubbles:
        out = out + bubble_field(b, x)
    return out


def complex_form(v, frame: FrameSample, gamma: float = 0.0, direction: str = "to",
                 tol: float = 1e-10):
    """Translate between tangent vectors at Q_gamma W and complex scalars.

    ``direction="to"``   : v  ->  v.(Q E1) + i v.(Q E2)
    ``direction="from"`` : f  ->  Re f Q E1 + Im f Q E2
    """
    e1 = rotate_z(gamma, frame.E1)
    e2 = rotate_z(gamma, frame.E2)
    if direction == "to":
        v = np.asarray(v, dtype=float)
        base = rotate_z(gamma, frame.W)
        normal = np.abs(np.sum(v * base, axis=-1))
        scale = np.linalg.norm(v, axis=-1)
        if np.any(normal > tol * np.maximum(scale, 1.0)):
            raise TangencyError(f"normal component {normal.max():.3e} exceeds tolerance")
        return np.sum(v * e1, axis=-1) + 1j * np.sum(v * e2, axis=-1)
    if direction == "from":
        f = np.asarray(v, dtype=complex)
        return f.real[..., None] * e1 + f.imag[..., None] * e2
    raise ValueError(f"unknown direction {direction!r}")


def corrector_A(Ustar, Phi):
    """Scalar A making (1+A) U* + Phi - (Phi.U*) U* a unit vector.

    Solves the quadratic in s = 1 + A and keeps the root that tends to
    1/|U*| as Phi -> 0.
    """
    U = np.asarray(Ustar, dtype=float)
    P = np.asarray(Phi, dtype=float)
    u2 = np.sum(U * U, axis=-1)
    if np.any(u2 < 0.25):
        raise DegenerateConfiguration("|U*| < 1/2")
    pu = np.sum(P * U, axis=-1)
    perp = P - pu[..., None] * U
    c = pu * (1.0 - u2) / u2
    disc = 1.0 + (1.0 - u2 - np.sum(perp * perp, axis=-1)) / u2 + c * c
    if np.any(disc < 0):
        raise DegenerateConfiguration("negative discriminant in corrector")
    return np.sqrt(disc) - 1.0 - c


def assemble_u(bubbles: Sequence[BubbleParams], Phi, x):
    """u = (1+A) U* + Phi - (Phi.U*) U* evaluated at x."""
    U = ustar_sum(bubbles, x)
    P = np.broadcast_to(np.asarray(Phi, dtype=float), U.shape)
    A = corrector_A(U, P)
    pu = np.sum(P * U, axis=-1)
    return (1.0 + A)[..., None] * U + P - pu[..., None] * U


def alignment_ok(u, Ustar, delta0: float = 0.5) -> bool:
    """Check u.U* >= delta0 everywhere."""
    return bool(np.all(np.sum(np.asarray(u) * np.asarray(Ustar), axis=-1) >= delta0))


def wedge(f, g):
    return np.cross(f, g)
