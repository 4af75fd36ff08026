"""Closed-form acoustics: free-field propagation, geometric warping, the
rigid-sphere scattering oracle and a finite-difference Helmholtz check.

Spherical Bessel functions are computed by recurrence (downward with
normalization for j_l, upward for y_l) so the package has no
special-function dependency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SQRT_4PI = math.sqrt(4.0 * math.pi)


@dataclass(frozen=True)
class MediumParams:
    speed_of_sound: float = 343.0

    def __post_init__(self):
        if not (self.speed_of_sound > 0.0 and math.isfinite(self.speed_of_sound)):
            raise ValueError("speed of sound must be positive and finite")


AIR = MediumParams()


def free_field(omega: float, mic, src, medium: MediumParams = AIR) -> complex:
    """Point-source gain (1 / (sqrt(4 pi) r)) exp(-j omega r / c)."""
    mic = np.asarray(mic, dtype=float)
    src = np.asarray(src, dtype=float)
    r = float(np.linalg.norm(mic - src))
    if r == 0.0:
        raise ValueError("free-field gain is singular at mic == src")
    return complex(np.exp(-1j * omega * r / medium.speed_of_sound) / (SQRT_4PI * r))


def free_field_batch(omega, mic, src, medium: MediumParams = AIR) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    r = np.linalg.norm(np.asarray(mic, float) - np.asarray(src, float), axis=-1)
    if np.any(r == 0.0):
        raise ValueError("free-field gain is singular at mic == src")
    return np.exp(-1j * omega * r / medium.speed_of_sound) / (SQRT_4PI * r)


def geometric_warp(omega: float, mic, src, reference, medium: MediumParams = AIR) -> complex:
    """Relative gain/delay of the mic path against the reference path."""
    src = np.asarray(src, dtype=float)
    d_im = float(np.linalg.norm(src - np.asarray(mic, float)))
    d_ref = float(np.linalg.norm(src - np.asarray(reference, float)))
    if d_im == 0.0 or d_ref == 0.0:
        raise ValueError("warp is singular when the source meets the mic or reference")
    return complex(
        (d_im / d_ref) * np.exp(-1j * omega * (d_im - d_ref) / medium.speed_of_sound)
    )


def geometric_warp_batch(omega, mic, src, reference, medium: MediumParams = AIR) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    src = np.asarray(src, float)
    d_im = np.linalg.norm(src - np.asarray(mic, float), axis=-1)
    d_ref = np.linalg.norm(src - np.asarray(reference, float).reshape(1, 3), axis=-1)
    if np.any(d_im == 0.0) or np.any(d_ref == 0.0):
        raise ValueError("warp is singular when the source meets the mic or reference")
    return (d_im / d_ref) * np.exp(-1j * omega * (d_im - d_ref) / medium.speed_of_sound)


def product_field(h_d: complex, h_s: complex) -> complex:
    """Directional gain modified by the scattering factor."""
    return h_d * h_s


def spherical_bessel_j(lmax: int, x: float) -> np.ndarray:
    """j_0..j_lmax by downward (Miller) recurrence with normalization."""
    if lmax < 0:
        raise ValueError("lmax must be non-negative")
    if x == 0.0:
        out = np.zeros(lmax + 1)
        out[0] = 1.0
        return out
    start = lmax + 16 + int(math.ceil(abs(x)))
    f_up = 0.0  # f_{l+1}
    f_cur = 1e-300  # f_l, arbitrary seed
    vals = np.zeros(lmax + 1)
    for l in range(start, 0, -1):
        f_down = (2.0 * l + 1.0) / x * f_cur - f_up
        f_up, f_cur = f_cur, f_down
        if l - 1 <= lmax:
            vals[l - 1] = f_cur
        if abs(f_cur) > 1e250:
            f_cur *= 1e-250
            f_up *= 1e-250
            vals *= 1e-250
    # normalize against whichever closed form is better conditioned
    j0 = math.sin(x) / x
    j1 = math.sin(x) / (x * x) - math.cos(x) / x
    if lmax >= 1 and abs(j1) > abs(j0):
        scale = j1 / vals[1]
    else:
        scale = j0 / vals[0]
    return vals * scale


def spherical_bessel_y(lmax: int, x: float) -> np.ndarray:
    """y_0..y_lmax by upward recurrence (stable for y)."""
    if lmax < 0:
        raise ValueError("lmax must be non-negative")
    if x == 0.0:
        raise ValueError("y_l is singular at x=0")
    y = np.zeros(lmax + 1)
    y[0] = -math.cos(x) / x
    if lmax >= 1:
        y[1] = -math.cos(x) / (x * x) - math.sin(x) / x
    for l in range(2, lmax + 1):
        y[l] = (2.0 * l - 1.0) / x * y[l - 1] - y[l - 2]
    return y


def _radial_derivatives(vals: np.ndarray, x: float) -> np.ndarray:
    """f_l'(x) from f_l via f'_l = f_{l-1} - (l+1)/x f_l and f'_0 = -f_1."""
    if vals.shape[0] < 2:
        raise ValueError("need values up to degree 1 for derivatives")
    out = np.empty_like(vals)
    out[0] = -vals[1]
    for l in range(1, vals.shape[0]):
        out[l] = vals[l - 1] - (l + 1.0) / x * vals[l]
    return out


def _legendre_poly_all(lmax: int, x: float) -> np.ndarray:
    p = np.empty(lmax + 1)
    p[0] = 1.0
    if lmax >= 1:
        p[1] = x
    for l in range(2, lmax + 1):
        p[l] = ((2.0 * l - 1.0) * x * p[l - 1] - (l - 1.0) * p[l - 2]) / l
    return p


def rigid_sphere_field(
    omega: float,
    sphere_radius: float,
    obs_radius: float,
    cos_incidence: float,
    medium: MediumParams = AIR,
    truncation: int | None = None,
) -> complex:
    """Total pressure of a unit plane wave scattered by a rigid sphere.

    The incident wave is exp(j k r cos_theta) with cos_theta the cosine of
    the angle between the observation point and the arrival direction;
    the Neumann condition holds on the sphere surface.
    """
    a, r = float(sphere_radius), float(obs_radius)
    if not (a > 0.0):
        raise ValueError("sphere radius must be positive")
    if r < a:
        raise ValueError(f"observation radius {r} inside the sphere radius {a}")
    if abs(cos_incidence) > 1.0 + 1e-12:
        raise ValueError("cos_incidence outside [-1, 1]")
    cos_incidence = min(1.0, max(-1.0, cos_incidence))
    k = omega / medium.speed_of_sound
    if k == 0.0:
        return 1.0 + 0.0j
    ka, kr = k * a, k * r
    if truncation is None:
        # the incident-wave tail converges in kr, the scattered part in ka;
        # the x + c x^(1/3) margin clears the Bessel turning point
        x = max(ka, kr)
        truncation = int(math.ceil(x + 6.0 * x ** (1.0 / 3.0))) + 20
    lmax = max(1, truncation)

    j_a = spherical_bessel_j(lmax + 1, ka)
    y_a = spherical_bessel_y(lmax + 1, ka)
    j_r = spherical_bessel_j(lmax, kr)
    y_r = spherical_bessel_y(lmax, kr)
    # outgoing radiation under the exp(-j omega r / c) convention is the
    # second-kind Hankel function j_l - j y_l
    h_a = j_a - 1j * y_a
    h_r = j_r - 1j * y_r
    dj_a = _radial_derivatives(j_a, ka)[: lmax + 1]
    dh_a = _radial_derivatives(h_a, ka)[: lmax + 1]
    p = _legendre_poly_all(lmax, cos_incidence)

    total = 0.0 + 0.0j
    for l in range(lmax + 1):
        radial = j_r[l] - (dj_a[l] / dh_a[l]) * h_r[l]
        total += (1j**l) * (2.0 * l + 1.0) * radial * p[l]
    return complex(total)


def rigid_sphere_field_batch(
    omega: float,
    sphere_radius: float,
    obs_radius: float,
    cos_incidence: np.ndarray,
    medium: MediumParams = AIR,
    truncation: int | None = None,
) -> np.ndarray:
    """Vectorized :func:`rigid_sphere_field` over incidence cosines at one
    frequency and observation radius (the radial series is shared)."""
    cos_incidence = np.asarray(cos_incidence, dtype=float)
    a, r = float(sphere_radius), float(obs_radius)
    if not a > 0.0:
        raise ValueError("sphere radius must be positive")
    if r < a:
        raise ValueError(f"observation radius {r} inside the sphere radius {a}")
    k = omega / medium.speed_of_sound
    if k == 0.0:
        return np.ones_like(cos_incidence, dtype=complex)
    ka, kr = k * a, k * r
    if truncation is None:
        x = max(ka, kr)
        truncation = int(math.ceil(x + 6.0 * x ** (1.0 / 3.0))) + 20
    lmax = max(1, truncation)
    j_a = spherical_bessel_j(lmax + 1, ka)
    y_a = spherical_bessel_y(lmax + 1, ka)
    j_r = spherical_bessel_j(lmax, kr)
    y_r = spherical_bessel_y(lmax, kr)
    h_a = j_a - 1j * y_a
    h_r = j_r - 1j * y_r
    dj_a = _radial_derivatives(j_a, ka)[: lmax + 1]
    dh_a = _radial_derivatives(h_a, ka)[: lmax + 1]
    ls = np.arange(lmax + 1)
    radial = (1j**ls) * (2.0 * ls + 1.0) * (j_r - (dj_a / dh_a) * h_r)

    x = np.clip(cos_incidence, -1.0, 1.0)
    total = np.full(x.shape, radial[0], dtype=complex)
    p_prev = np.ones_like(x)
    p_cur = x.copy()
    if lmax >= 1:
        total += radial[1] * p_cur
    for l in range(2, lmax + 1):
        p_next = ((2.0 * l - 1.0) * x * p_cur - (l - 1.0) * p_prev) / l
        total += radial[l] * p_next
        p_prev, p_cur = p_cur, p_next
    return total


def helmholtz_residual_fd(field, omega: float, q, step: float, medium: MediumParams = AIR) -> complex:
    """7-point Laplacian of the field plus (omega/c)^2 times the field at q.

    Diagnostic only; for a physical field the value is near zero up to the
    O(step^2) truncation error of central differences.
    """
    if not (step > 0.0):
        raise ValueError("step must be positive")
    q = np.asarray(q, dtype=float)
    center = field(omega, q)
    lap = 0.0 + 0.0j
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = step
        lap += field(omega, q + e) + field(omega, q - e) - 2.0 * center
    lap /= step * step
    kk = (omega / medium.speed_of_sound) ** 2
    return complex(lap + kk * center)
