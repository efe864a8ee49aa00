import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tramsim.physics import (BERNOULLI_SERIES_SWITCH, MaterialParams, Q, ThermalEnv, bernoulli,
                             bernoulli_prime, built_in_potential, diffusivity, equilibrium_guess,
                             mobility, sg_flux, srh_rate)

import oracle_values as ov

ENV = ThermalEnv()
PARAMS = MaterialParams()
finite = st.floats(min_value=-700, max_value=700, allow_nan=False)


class TestBernoulli:
    def test_at_one(self):
        assert bernoulli(1.0) == pytest.approx(ov.BERNOULLI_AT_1, rel=1e-15)

    def test_at_minus_one(self):
        assert bernoulli(-1.0) == pytest.approx(ov.BERNOULLI_AT_MINUS_1, rel=1e-15)

    def test_zero_and_series_switch(self):
        assert bernoulli(0.0) == 1.0
        below = bernoulli(BERNOULLI_SERIES_SWITCH * (1 - 1e-9))
        above = bernoulli(BERNOULLI_SERIES_SWITCH * (1 + 1e-9))
        assert below == pytest.approx(above, rel=1e-12)

    def test_extremes_do_not_overflow(self):
        with np.errstate(all="raise"):
            assert bernoulli(800.0) >= 0.0
            assert bernoulli(-800.0) == pytest.approx(800.0)

    @given(finite)
    def test_reflection_identity(self, x):
        assert bernoulli(-x) == pytest.approx(bernoulli(x) + x, rel=1e-12, abs=1e-12)

    @given(finite)
    def test_positive(self, x):
        assert bernoulli(x) > 0 or (x > 700 and bernoulli(x) >= 0)

    def test_array_shape(self):
        x = np.linspace(-3, 3, 12).reshape(3, 4)
        assert bernoulli(x).shape == (3, 4)

    def test_derivative_oracle(self):
        assert bernoulli_prime(1.0) == pytest.approx(ov.BERNOULLI_PRIME_AT_1, rel=1e-13)
        assert bernoulli_prime(0.0) == -0.5

    @given(st.floats(min_value=-50, max_value=50))
    def test_derivative_matches_finite_difference(self, x):
        h = 1e-5 * max(1.0, abs(x))
        fd = (bernoulli(x + h) - bernoulli(x - h)) / (2 * h)
        assert bernoulli_prime(x) == pytest.approx(fd, rel=1e-5, abs=1e-9)


class TestFlux:
    def test_zero_field_is_pure_diffusion(self):
        d = diffusivity(1400.0, ENV)
        j = sg_flux(1e16, 2e16, 0.0, 1e-5, d, "electron", ENV)
        assert j == pytest.approx(Q * d * (2e16 - 1e16) / 1e-5, rel=1e-12)

    def test_equilibrium_pair_carries_no_current(self):
        dpsi = 0.1
        n_l = 1e15
        n_r = n_l * math.exp(dpsi / ENV.thermal_voltage)
        j = sg_flux(n_l, n_r, dpsi, 1e-6, 35.0, "electron", ENV)
        assert abs(j) < 1e-12 * Q * 35.0 / 1e-6 * n_r

    @pytest.mark.parametrize("carrier,upwind", [("electron", 0), ("hole", 1)])
    def test_large_bias_approaches_upwind_drift(self, carrier, upwind):
        vt = ENV.thermal_voltage
        h, mu = 1e-6, 1000.0
        dens = (1e16, 3e16)
        dpsi = 40 * vt
        j = sg_flux(dens[0], dens[1], dpsi, h, diffusivity(mu, ENV), carrier, ENV)
        # drift along E = -dpsi/h carried by the upwind node's density
        drift = Q * mu * dens[upwind] * (-dpsi / h)
        assert j == pytest.approx(drift, rel=1e-15)

    def test_uniform_density_is_exact_drift(self):
        j = sg_flux(1e16, 1e16, 0.2, 1e-6, diffusivity(500.0, ENV), "hole", ENV)
        assert j == pytest.approx(Q * 500.0 * 1e16 * (-0.2 / 1e-6), rel=1e-12)

    def test_unknown_carrier(self):
        with pytest.raises(ValueError):
            sg_flux(1, 1, 0, 1, 1, "ion")


class TestRecombination:
    def test_srh_oracle(self):
        assert srh_rate(1e17, 1e17, PARAMS) == pytest.approx(ov.SRH_1E17, rel=1e-14)

    def test_zero_carriers_generate(self):
        assert srh_rate(0.0, 0.0, PARAMS) == pytest.approx(ov.SRH_GENERATION_ZERO, rel=1e-14)

    def test_equilibrium_is_zero(self):
        ni = PARAMS.intrinsic_density_ni
        assert srh_rate(1e18, ni * ni / 1e18, PARAMS) == pytest.approx(0.0, abs=1e-8)

    @given(st.floats(1.0, 1e20), st.floats(1.0, 1e20))
    def test_sign_follows_np_product(self, n, p):
        ni2 = PARAMS.intrinsic_density_ni ** 2
        r = srh_rate(n, p, PARAMS)
        assert np.sign(r) == np.sign(n * p - ni2) or abs(n * p - ni2) < 1e-9 * ni2


class TestEquilibriumPotentials:
    def test_neutral_potential_1e18(self):
        psi = equilibrium_guess(1e18, PARAMS, ENV)
        assert psi == pytest.approx(ov.NEUTRAL_POTENTIAL_1E18, rel=1e-13)
        assert round(float(psi), 3) == 0.476

    def test_sign_follows_doping(self):
        assert equilibrium_guess(-1e18, PARAMS, ENV) == pytest.approx(-ov.NEUTRAL_POTENTIAL_1E18)
        assert equilibrium_guess(0.0, PARAMS, ENV) == 0.0

    def test_built_in_1e18(self):
        v = built_in_potential(1e18, 1e18, PARAMS, ENV)
        assert v == pytest.approx(ov.BUILT_IN_1E18_1E18, rel=1e-13)
        assert round(v, 4) == 0.9524

    def test_doubling_donor_adds_vt_ln2(self):
        step = (built_in_potential(1e18, 2e18, PARAMS, ENV)
                - built_in_potential(1e18, 1e18, PARAMS, ENV))
        assert step == pytest.approx(ov.BUILT_IN_DOUBLING_STEP, rel=1e-10)

    def test_rejects_nonpositive_doping(self):
        with pytest.raises(ValueError):
            built_in_potential(0.0, 1e18, PARAMS, ENV)

    def test_thermal_voltage(self):
        assert ENV.thermal_voltage == pytest.approx(ov.THERMAL_VOLTAGE_300K, rel=1e-15)


class TestMobility:
    def test_constant_defaults(self):
        assert mobility(1e18, "electron", PARAMS) == 1400.0
        assert mobility(1e18, "hole", PARAMS) == 450.0

    def test_caughey_thomas_limits(self):
        ct = MaterialParams(mobility_model="caughey_thomas")
        assert mobility(0.0, "electron", ct) == pytest.approx(1400.0)
        assert mobility(1e21, "electron", ct) < 100.0
        assert mobility(1e16, "hole", ct) > mobility(1e19, "hole", ct)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            mobility(1e16, "positron", PARAMS)
        with pytest.raises(ValueError):
            MaterialParams(mobility_model="magic")
        with pytest.raises(ValueError):
            MaterialParams(srh_tau_n=0.0)
        with pytest.raises(ValueError):
            ThermalEnv(0.0)
