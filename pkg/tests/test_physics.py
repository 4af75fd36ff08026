import cmath
import math

import numpy as np
import pytest
from scipy import special

from svfield.physics import (
    MediumParams,
    free_field,
    geometric_warp,
    helmholtz_residual_fd,
    product_field,
    rigid_sphere_field,
    spherical_bessel_j,
    spherical_bessel_y,
)


class TestFreeField:
    def test_phase_pi(self):
        # f = 500 Hz, r = 0.343 m, c = 343 -> omega r / c = pi
        got = free_field(2 * math.pi * 500.0, [0.343, 0, 0], [0, 0, 0])
        assert abs(got - (-0.82243379525912 + 0j)) < 1e-9

    def test_zero_frequency(self):
        assert abs(free_field(0.0, [1, 0, 0], [0, 0, 0]) - 0.28209479177387814) < 1e-12

    def test_inverse_distance_law(self):
        a = free_field(1000.0, [2, 0, 0], [0, 0, 0])
        b = free_field(1000.0, [1, 0, 0], [0, 0, 0])
        assert abs(abs(b) / abs(a) - 2.0) < 1e-12

    def test_singularity(self):
        with pytest.raises(ValueError):
            free_field(100.0, [1, 2, 3], [1, 2, 3])

    def test_phase_identity(self, rng):
        c = 343.0
        for _ in range(50):
            mic = rng.normal(size=3)
            src = rng.normal(size=3) + 5.0
            omega = float(rng.uniform(10, 1e4))
            r = np.linalg.norm(mic - src)
            expected = (-omega * r / c) % (2 * math.pi)
            got = cmath.phase(free_field(omega, mic, src)) % (2 * math.pi)
            diff = abs(got - expected) % (2 * math.pi)
            assert min(diff, 2 * math.pi - diff) < 1e-9


class TestGeometricWarp:
    def test_mic_at_reference(self):
        assert geometric_warp(777.0, [0.1, 0, 0], [2, 0, 0], [0.1, 0, 0]) == 1.0 + 0.0j

    def test_pure_gain(self):
        # d_im = 2, d_ref = 1, omega = 0
        got = geometric_warp(0.0, [-1.0, 0, 0], [1.0, 0, 0], [0.5, 0, 0])
        assert abs(got - 4.0) < 1e-12  # 2 / 0.5
        got = geometric_warp(0.0, [-1.0, 0, 0], [1.0, 0, 0], [0.0, 0, 0])
        assert abs(got - 2.0) < 1e-12

    def test_unit_modulus_iff_equal_paths(self):
        same = geometric_warp(5000.0, [0, 1, 0], [1, 0, 0], [0, -1, 0])
        assert abs(abs(same) - 1.0) < 1e-12
        other = geometric_warp(5000.0, [0, 0.5, 0], [1, 0, 0], [0, -1, 0])
        assert abs(abs(other) - 1.0) > 1e-3

    def test_singularities(self):
        with pytest.raises(ValueError):
            geometric_warp(1.0, [1, 0, 0], [1, 0, 0], [0, 0, 0])
        with pytest.raises(ValueError):
            geometric_warp(1.0, [1, 0, 0], [0, 0, 0], [0, 0, 0])


class TestProductField:
    def test_no_scattering(self):
        assert product_field(0.3 - 0.4j, 1.0) == 0.3 - 0.4j

    def test_zero_direct(self):
        assert product_field(0.0, 5.0 + 2j) == 0.0

    def test_modulus_multiplicative(self):
        a, b = 0.3 - 0.4j, -1.0 + 2.0j
        assert abs(abs(product_field(a, b)) - abs(a) * abs(b)) < 1e-15


class TestSphericalBessel:
    def test_j_against_scipy(self):
        for x in [1e-3, 0.4, 1.0, math.pi, 9.7, 17.3, 40.0]:
            mine = spherical_bessel_j(30, x)
            ref = special.spherical_jn(np.arange(31), x)
            np.testing.assert_allclose(mine, ref, rtol=1e-10, atol=1e-15)

    def test_y_against_scipy(self):
        for x in [0.3, 1.0, 5.2, 20.0]:
            mine = spherical_bessel_y(25, x)
            ref = special.spherical_yn(np.arange(26), x)
            np.testing.assert_allclose(mine, ref, rtol=1e-9)

    def test_j_at_zero(self):
        vals = spherical_bessel_j(4, 0.0)
        np.testing.assert_array_equal(vals, [1, 0, 0, 0, 0])

    def test_j_near_sin_zero(self):
        # normalization must survive sin(x) ~ 0
        x = math.pi
        np.testing.assert_allclose(
            spherical_bessel_j(10, x), special.spherical_jn(np.arange(11), x), rtol=1e-9, atol=1e-16
        )


def _scipy_rigid_sphere(omega, a, r, cos_theta, c=343.0, lmax=60):
    """Independent series oracle using scipy special functions."""
    k = omega / c
    if k == 0.0:
        return 1.0 + 0.0j
    ka, kr = k * a, k * r
    ls = np.arange(lmax + 1)
    j_kr = special.spherical_jn(ls, kr)
    y_kr = special.spherical_yn(ls, kr)
    dj_ka = special.spherical_jn(ls, ka, derivative=True)
    dy_ka = special.spherical_yn(ls, ka, derivative=True)
    dh_ka = dj_ka - 1j * dy_ka  # second kind: outgoing under exp(-j k r)
    h_kr = j_kr - 1j * y_kr
    p = np.array([special.eval_legendre(l, cos_theta) for l in ls])
    terms = (1j**ls) * (2 * ls + 1) * (j_kr - (dj_ka / dh_ka) * h_kr) * p
    return complex(np.sum(terms))


class TestRigidSphere:
    def test_low_frequency_incident_limit(self):
        # ka ~ 2.6e-4: total field approaches the incident plane wave
        omega, a, r, ct = 1.0, 0.09, 0.12, 0.7
        total = rigid_sphere_field(omega, a, r, ct)
        incident = cmath.exp(1j * (omega / 343.0) * r * ct)
        assert abs(total - incident) / abs(incident) < 0.01

    def test_neumann_boundary(self):
        # third-order one-sided difference of the radial derivative at r = a
        omega = 3.0 * 343.0 / 0.09  # ka = 3
        a, ct = 0.09, 0.3
        h = 1e-5
        f = [rigid_sphere_field(omega, a, a + n * h, ct) for n in range(4)]
        deriv = (-11 * f[0] + 18 * f[1] - 9 * f[2] + 2 * f[3]) / (6 * h)
        k = omega / 343.0
        assert abs(deriv) / (k * abs(f[0])) < 1e-6

    def test_series_convergence(self):
        omega = 3.0 * 343.0 / 0.09  # ka = 3, kr = 4
        default_trunc = int(math.ceil(4.0 + 6.0 * 4.0 ** (1.0 / 3.0))) + 20
        default = rigid_sphere_field(omega, 0.09, 0.12, 0.3)
        doubled = rigid_sphere_field(omega, 0.09, 0.12, 0.3, truncation=2 * default_trunc)
        assert abs(default - doubled) < 1e-10

    def test_inside_sphere_rejected(self):
        with pytest.raises(ValueError):
            rigid_sphere_field(1000.0, 0.09, 0.05, 0.0)

    def test_small_sphere_reduces_to_incident(self):
        omega = 2 * math.pi * 1000.0
        r, ct = 0.5, -0.3
        total = rigid_sphere_field(omega, 1e-6, r, ct)
        incident = cmath.exp(1j * (omega / 343.0) * r * ct)
        assert abs(total - incident) / abs(incident) < 1e-4

    def test_against_scipy_series(self, rng):
        for _ in range(20):
            omega = float(rng.uniform(100, 2 * math.pi * 4000))
            a = 0.09
            r = float(rng.uniform(a, 0.4))
            ct = float(rng.uniform(-1, 1))
            mine = rigid_sphere_field(omega, a, r, ct)
            ref = _scipy_rigid_sphere(omega, a, r, ct)
            assert abs(mine - ref) <= 1e-9 * max(1.0, abs(ref))


class TestHelmholtzResidual:
    def test_free_field_satisfies_equation(self):
        src = np.array([0.0, 0.0, 0.0])
        q = np.array([1.0, 0.4, -0.2])

        def field(omega, pos):
            return free_field(omega, pos, src)

        omega = 2 * math.pi * 500.0
        res = helmholtz_residual_fd(field, omega, q, 1e-3)
        assert abs(res) / abs(field(omega, q)) < 1e-3

    def test_constant_zero_frequency(self):
        res = helmholtz_residual_fd(lambda omega, pos: 1.0 + 0j, 0.0, [0, 0, 0], 1e-2)
        assert abs(res) < 1e-12

    def test_plane_wave_truncation_error(self):
        c = 343.0
        omega = 2 * math.pi * 1000.0
        k = omega / c

        def plane(omega_, pos):
            return cmath.exp(1j * k * pos[0])

        # central differences: residual ~ h^2 k^4 / 12
        for h in (2e-3, 1e-3):
            res = abs(helmholtz_residual_fd(plane, omega, [0.1, 0.2, 0.3], h))
            bound = (h**2) * k**4
            assert res < bound
            assert res > bound / 1000.0  # same order of magnitude

    def test_sh_scene_field_small_residual(self):
        # free field times a slowly varying low-order gain stays near-physical
        from svfield.geom import Direction, cart_to_sph
        from svfield.sphharm import ShCoefficients, sh_eval

        coeffs = ShCoefficients(1, [1.2, 0.1 + 0.05j, 0.3, -0.1 + 0.05j])
        src = np.zeros(3)

        def field(omega, pos):
            d, _ = cart_to_sph(pos - src)
            return free_field(omega, pos, src) * sh_eval(coeffs, d)

        omega = 2 * math.pi * 1000.0
        q = np.array([1.3, 0.2, 0.4])
        res = helmholtz_residual_fd(field, omega, q, 1e-3)
        # relative to the equation's own scale k^2 |h|
        assert abs(res) / ((omega / 343.0) ** 2 * abs(field(omega, q))) < 1e-2
