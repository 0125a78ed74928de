import math

import pytest

from qlqg.model import (
    CavityKind,
    CavitySetup,
    PhysicalParams,
    intracavity_photon_number,
    measurement_constant,
    regime_numbers,
    scaled_record_increment,
)


def mirror_setup(photons: float, gamma: float = 2.0, g_m: float = 1.0, hbar: float = 1.0):
    """Choose the drive power so the intracavity photon number is `photons`."""
    omega0 = 1.0
    power = photons * hbar * omega0 * gamma / 4.0
    return CavitySetup(
        kind=CavityKind.MIRROR, gamma=gamma, omega0=omega0, laser_power=power, g_m=g_m
    )


def atom_setup(photons: float, gamma: float = 1.0, hbar: float = 1.0):
    omega0 = 1.0
    power = photons * hbar * omega0 * gamma / 4.0
    return CavitySetup(
        kind=CavityKind.ATOM,
        gamma=gamma,
        omega0=omega0,
        laser_power=power,
        g0=1.0,
        k0=1.0,
        delta=1.0,
    )


class TestMeasurementConstant:
    def test_mirror_unit_case(self):
        setup = mirror_setup(photons=1.0, gamma=2.0, g_m=1.0)
        assert intracavity_photon_number(setup, hbar=1.0) == pytest.approx(1.0)
        assert measurement_constant(setup, hbar=1.0) == pytest.approx(1.0)

    def test_zero_drive_gives_zero_k(self):
        for setup in (mirror_setup(0.0), atom_setup(0.0)):
            assert measurement_constant(setup, hbar=1.0) == 0.0

    def test_atom_case(self):
        setup = atom_setup(photons=4.0, gamma=1.0)
        assert measurement_constant(setup, hbar=1.0) == pytest.approx(8.0)

    def test_homogeneous_in_photon_number(self):
        for build in (mirror_setup, atom_setup):
            k1 = measurement_constant(build(1.5), hbar=1.0)
            k2 = measurement_constant(build(3.0), hbar=1.0)
            assert k2 == pytest.approx(2.0 * k1, rel=1e-14)

    def test_rejects_bad_gamma_and_zero_delta(self):
        with pytest.raises(ValueError):
            CavitySetup(kind=CavityKind.MIRROR, gamma=0.0, omega0=1.0, laser_power=1.0, g_m=1.0)
        with pytest.raises(ValueError, match="delta"):
            CavitySetup(
                kind=CavityKind.ATOM,
                gamma=1.0,
                omega0=1.0,
                laser_power=1.0,
                g0=1.0,
                k0=1.0,
                delta=0.0,
            )

    def test_field_consistency_enforced(self):
        with pytest.raises(ValueError):
            CavitySetup(kind=CavityKind.MIRROR, gamma=1.0, omega0=1.0, laser_power=1.0)
        with pytest.raises(ValueError):
            CavitySetup(
                kind=CavityKind.ATOM, gamma=1.0, omega0=1.0, laser_power=1.0, g_m=1.0,
                g0=1.0, k0=1.0, delta=1.0,
            )


class TestRegimeNumbers:
    def test_unit_example(self):
        reg = regime_numbers(PhysicalParams.nondimensional(k=0.5))
        assert reg.r == pytest.approx(1.0)
        assert reg.xi == pytest.approx(math.sqrt(5.0))

    def test_low_efficiency_example(self):
        reg = regime_numbers(PhysicalParams.nondimensional(k=2.0, eta=0.25))
        assert reg.r == pytest.approx(1.0)
        assert reg.xi == pytest.approx(math.sqrt(17.0))

    def test_weak_measurement_limit(self):
        reg = regime_numbers(PhysicalParams.nondimensional(k=1e-12))
        assert reg.r > 1e11
        assert reg.xi == pytest.approx(1.0, abs=1e-10)

    def test_rejects_k_zero_and_omega_zero(self):
        with pytest.raises(ValueError):
            regime_numbers(PhysicalParams.nondimensional(k=0.0))
        with pytest.raises(ValueError):
            regime_numbers(PhysicalParams(m=1.0, omega=0.0, hbar=1.0, k=1.0, eta=1.0))

    def test_xi_at_least_one_and_decreasing_in_r(self):
        eta = 0.7
        xis = []
        for k in (4.0, 2.0, 1.0, 0.5, 0.25):  # increasing r
            reg = regime_numbers(PhysicalParams(m=1.0, omega=1.0, hbar=1.0, k=k, eta=eta))
            assert reg.xi >= 1.0
            xis.append((reg.r, reg.xi))
        rs = [r for r, _ in xis]
        assert rs == sorted(rs)
        for (_, a), (_, b) in zip(xis, xis[1:]):
            assert b < a

    def test_dimensionful_round_trip(self):
        nondim = PhysicalParams.nondimensional(k=0.37, eta=0.8)
        target = regime_numbers(nondim)
        m, omega, hbar, eta = 2.3e-26, 8.7e4, 1.0545718e-34, 0.8
        k = m * omega**2 / (2.0 * hbar * eta * target.r)
        dim = regime_numbers(PhysicalParams(m=m, omega=omega, hbar=hbar, k=k, eta=eta))
        assert dim.r == pytest.approx(target.r, rel=1e-12)
        assert dim.xi == pytest.approx(target.xi, rel=1e-12)


class TestParamValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(m=0.0, omega=1.0, hbar=1.0, k=1.0, eta=1.0),
            dict(m=1.0, omega=-1.0, hbar=1.0, k=1.0, eta=1.0),
            dict(m=1.0, omega=1.0, hbar=0.0, k=1.0, eta=1.0),
            dict(m=1.0, omega=1.0, hbar=1.0, k=-1.0, eta=1.0),
            dict(m=1.0, omega=1.0, hbar=1.0, k=1.0, eta=0.0),
            dict(m=1.0, omega=1.0, hbar=1.0, k=1.0, eta=1.5),
        ],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            PhysicalParams(**kwargs)


def test_scaled_record_uses_homodyne_gain():
    setup = mirror_setup(photons=1.0, gamma=2.0)
    k = measurement_constant(setup, hbar=1.0)
    raw = 0.3
    scaled = scaled_record_increment(raw, setup, k)
    assert scaled == pytest.approx(raw * math.sqrt(2.0 * k / (setup.beta_homodyne**2 * setup.gamma)))
