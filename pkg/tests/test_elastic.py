import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from photoforge.elastic import (
    ForceList,
    ForceTriplet,
    ParticleSpec,
    StressTensor2D,
    boundary_traction_ratio,
    contact_stress,
    equilibrium_residual,
    flamant_radial_stress,
    intensity,
    intensity_field,
    principal_stress_difference,
    stress_field,
    total_stress,
)
from photoforge.sampling import SamplerConfig, sample_force_list

PARTICLE = ParticleSpec(radius=0.008)


class TestForceTriplet:
    def test_rejects_nonpositive_magnitude(self):
        with pytest.raises(ValueError):
            ForceTriplet(0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            ForceTriplet(-0.1, 0.0, 0.0)

    def test_rejects_tangent_beyond_friction_bound(self):
        with pytest.raises(ValueError):
            ForceTriplet(0.1, 0.0, math.pi / 2 + 0.01)

    @given(st.floats(-50.0, 50.0))
    def test_impact_angle_normalized(self, alpha):
        t = ForceTriplet(0.1, alpha, 0.0)
        assert 0.0 <= t.impact_angle < 2 * math.pi

    def test_direction_convention(self):
        # Radial force at alpha=0 points in -x, toward the centre.
        t = ForceTriplet(1.0, 0.0, 0.0)
        ux, uy = t.direction()
        assert ux == pytest.approx(-1.0)
        assert uy == pytest.approx(0.0, abs=1e-15)

    def test_contact_point(self):
        t = ForceTriplet(1.0, math.pi / 2, 0.0)
        x, y = t.contact_point(0.008)
        assert x == pytest.approx(0.0, abs=1e-15)
        assert y == pytest.approx(0.008)


class TestForceList:
    def test_count_bounds(self):
        one = (ForceTriplet(0.1, 0.0, 0.0),)
        with pytest.raises(ValueError):
            ForceList(one)
        seven = tuple(ForceTriplet(0.1, 0.9 * k, 0.0) for k in range(7))
        with pytest.raises(ValueError):
            ForceList(seven)

    def test_canonical_sorting(self):
        fl = ForceList.from_rows([[0.1, 5.0, 0.0], [0.2, 1.0, 0.0], [0.3, 3.0, 0.0]])
        angles = [t.impact_angle for t in fl]
        assert angles == sorted(angles)

    def test_net_force_of_diametral_pair(self):
        fl = ForceList.from_rows([[0.1, 0.0, 0.0], [0.1, math.pi, 0.0]])
        fx, fy = fl.net_force()
        assert math.hypot(fx, fy) < 1e-15


class TestFlamant:
    def test_hand_value(self):
        # -2 * 0.1 / (pi * 0.001)
        assert flamant_radial_stress(0.001, 0.0, 0.1) == pytest.approx(-63.6620, abs=1e-3)

    def test_perpendicular_zero(self):
        assert flamant_radial_stress(0.001, math.pi / 2, 0.1) == pytest.approx(0.0, abs=1e-12)

    def test_inverse_distance_scaling(self):
        assert flamant_radial_stress(0.002, 0.0, 0.1) == pytest.approx(-31.8310, abs=1e-3)
        assert flamant_radial_stress(0.002, 0.0, 0.1) == pytest.approx(
            flamant_radial_stress(0.001, 0.0, 0.1) / 2.0
        )

    def test_domain_error_at_contact(self):
        with pytest.raises(ValueError):
            flamant_radial_stress(0.0, 0.0, 0.1)
        with pytest.raises(ValueError):
            flamant_radial_stress(-0.001, 0.0, 0.1)


class TestContactStress:
    def test_centre_value(self):
        s = contact_stress((0.0, 0.0), ForceTriplet(0.1, 0.0, 0.0), PARTICLE)
        assert s.sxx == pytest.approx(-3.9789, abs=1e-4)
        assert s.sxy == pytest.approx(0.0, abs=1e-12)
        assert s.syy == pytest.approx(0.0, abs=1e-12)

    def test_symmetric_contact_same_tensor(self):
        s = contact_stress((0.0, 0.0), ForceTriplet(0.1, math.pi, 0.0), PARTICLE)
        assert s.sxx == pytest.approx(-3.9789, abs=1e-4)
        assert s.sxy == pytest.approx(0.0, abs=1e-12)
        assert s.syy == pytest.approx(0.0, abs=1e-12)

    def test_linear_in_magnitude(self):
        point = (0.001, -0.002)
        small = contact_stress(point, ForceTriplet(1e-9, 0.7, 0.2), PARTICLE)
        big = contact_stress(point, ForceTriplet(0.5, 0.7, 0.2), PARTICLE)
        for a, b in zip((small.sxx, small.sxy, small.syy), (big.sxx, big.sxy, big.syy)):
            assert a * (0.5 / 1e-9) == pytest.approx(b, rel=1e-9)


class TestTotalStress:
    def test_diametral_pair_centre(self):
        pair = ForceList.from_rows([[0.1, 0.0, 0.0], [0.1, math.pi, 0.0]])
        s = total_stress((0.0, 0.0), pair, PARTICLE)
        assert s.sxx == pytest.approx(-7.9577, abs=1e-4)
        assert s.sxy == pytest.approx(0.0, abs=1e-12)
        assert s.syy == pytest.approx(0.0, abs=1e-12)

    def test_doubling_magnitudes_doubles_components(self):
        fl = sample_force_list(3, SamplerConfig(seed=1))
        point = (0.002, 0.001)
        s1 = total_stress(point, fl, PARTICLE)
        s2 = total_stress(point, fl.scaled(2.0), PARTICLE)
        assert s2.sxx == pytest.approx(2 * s1.sxx, rel=1e-12)
        assert s2.sxy == pytest.approx(2 * s1.sxy, rel=1e-12)
        assert s2.syy == pytest.approx(2 * s1.syy, rel=1e-12)

    def test_superposition_linearity(self):
        a = sample_force_list(2, SamplerConfig(seed=2))
        b = sample_force_list(3, SamplerConfig(seed=3))
        both = ForceList(a.forces + b.forces)  # 5 forces, geometrically valid by luck of seeds
        point = (0.0015, -0.0024)
        sa = total_stress(point, a, PARTICLE)
        sb = total_stress(point, b, PARTICLE)
        s = total_stress(point, both, PARTICLE)
        assert s.sxx == pytest.approx(sa.sxx + sb.sxx, rel=1e-12, abs=1e-12)
        assert s.sxy == pytest.approx(sa.sxy + sb.sxy, rel=1e-12, abs=1e-12)
        assert s.syy == pytest.approx(sa.syy + sb.syy, rel=1e-12, abs=1e-12)

    def test_frame_equivariance(self):
        fl = sample_force_list(3, SamplerConfig(seed=4))
        delta = 0.77
        point = np.array([0.0021, 0.0013])
        c, s = math.cos(-delta), math.sin(-delta)
        back = (c * point[0] - s * point[1], s * point[0] + c * point[1])
        rotated_at_point = total_stress(point, fl.rotated(delta), PARTICLE)
        original_back = total_stress(back, fl, PARTICLE).rotated(delta)
        assert rotated_at_point.sxx == pytest.approx(original_back.sxx, rel=1e-9, abs=1e-12)
        assert rotated_at_point.sxy == pytest.approx(original_back.sxy, rel=1e-9, abs=1e-12)
        assert rotated_at_point.syy == pytest.approx(original_back.syy, rel=1e-9, abs=1e-12)


class TestPrincipalStressDifference:
    def test_diametral_pair_value(self):
        s = StressTensor2D(-7.9577, 0.0, 0.0)
        assert principal_stress_difference(s) == pytest.approx(7.9577)

    def test_zero_tensor(self):
        assert principal_stress_difference(StressTensor2D(0.0, 0.0, 0.0)) == 0.0

    @given(st.floats(-100, 100))
    def test_isotropic_tensor(self, a):
        assert principal_stress_difference(StressTensor2D(a, 0.0, a)) == 0.0

    @given(
        st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50), st.floats(0.01, 100)
    )
    def test_nonnegative_and_homogeneous(self, sxx, sxy, syy, k):
        s = StressTensor2D(sxx, sxy, syy)
        d = principal_stress_difference(s)
        assert d >= 0.0
        assert principal_stress_difference(s.scaled(k)) == pytest.approx(k * d, rel=1e-9)

    def test_matches_eigenvalue_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            sxx, sxy, syy = rng.uniform(-30, 30, 3)
            eig = np.linalg.eigvalsh(np.array([[sxx, sxy], [sxy, syy]]))
            expected = float(eig[1] - eig[0])
            got = principal_stress_difference(StressTensor2D(sxx, sxy, syy))
            assert got == pytest.approx(expected, rel=1e-12, abs=1e-12)


class TestIntensity:
    def test_zero_stress_dark(self):
        assert intensity(0.0, PARTICLE) == 0.0

    def test_half_fringe_peak(self):
        assert intensity(1.0 / (2 * 0.18), PARTICLE) == pytest.approx(255.0)

    def test_full_fringe_dark(self):
        assert intensity(1.0 / 0.18, PARTICLE) == pytest.approx(0.0, abs=1e-12)

    def test_diametral_centre_value(self):
        assert intensity(7.9577, PARTICLE) == pytest.approx(243.67, abs=0.02)

    def test_range(self):
        for d in np.linspace(0, 50, 500):
            v = intensity(float(d), PARTICLE)
            assert 0.0 <= v <= 255.0


class TestFieldProperties:
    def test_equilibrium_of_kernel_field(self):
        # Bare point-load kernels satisfy div(sigma) = 0; the finite-difference
        # residual is bounded by truncation error far below the 1e-6 budget.
        for seed in range(5):
            fl = sample_force_list(2 + seed % 5, SamplerConfig(seed=seed))
            assert equilibrium_residual(fl, PARTICLE) <= 1e-6

    def test_boundary_traction_radial_loads(self):
        # The rim compensation cancels boundary traction exactly for radial
        # (tau = 0) loads.
        symmetric = ForceList.from_rows(
            [[0.3, 0.0, 0.0], [0.3, 2 * math.pi / 3, 0.0], [0.3, 4 * math.pi / 3, 0.0]]
        )
        assert boundary_traction_ratio(symmetric, PARTICLE) <= 1e-2
        pair = ForceList.from_rows([[0.5, 0.4, 0.0], [0.5, 0.4 + math.pi, 0.0]])
        assert boundary_traction_ratio(pair, PARTICLE) <= 1e-2

    def test_intensity_rotational_equivariance(self):
        fl = sample_force_list(4, SamplerConfig(seed=9))
        delta = 1.234
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.005, 0.005, size=(50, 2))
        c, s = math.cos(-delta), math.sin(-delta)
        back_x = c * pts[:, 0] - s * pts[:, 1]
        back_y = s * pts[:, 0] + c * pts[:, 1]
        rotated = intensity_field(pts[:, 0], pts[:, 1], fl.rotated(delta), PARTICLE)
        original = intensity_field(back_x, back_y, fl, PARTICLE)
        np.testing.assert_allclose(rotated, original, rtol=1e-9, atol=1e-9)

    def test_stress_field_matches_scalar_path(self):
        fl = sample_force_list(3, SamplerConfig(seed=12))
        xs = np.array([0.0, 0.001, -0.002])
        ys = np.array([0.0, -0.0005, 0.0031])
        sxx, sxy, syy = stress_field(xs, ys, fl, PARTICLE)
        for k in range(3):
            s = total_stress((xs[k], ys[k]), fl, PARTICLE)
            assert s.sxx == pytest.approx(sxx[k], rel=1e-14)
            assert s.sxy == pytest.approx(sxy[k], rel=1e-14)
            assert s.syy == pytest.approx(syy[k], rel=1e-14)
