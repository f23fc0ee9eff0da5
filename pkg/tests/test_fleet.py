import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinforge.fleet import (
    DeploymentPlan,
    TwinEconomics,
    construction_cost,
    deployment_cost,
    split_fleet,
    utility,
)


class TestEconomicsValidation:
    def test_positive_beta_rejected(self):
        with pytest.raises(ValueError):
            TwinEconomics(alpha=1.0, beta=0.5, zeta=1.0)

    def test_negative_alpha_and_zeta_rejected(self):
        with pytest.raises(ValueError):
            TwinEconomics(alpha=-1.0, beta=-1.0, zeta=1.0)
        with pytest.raises(ValueError):
            TwinEconomics(alpha=1.0, beta=-1.0, zeta=-0.1)

    def test_nonpositive_eta_rejected(self):
        with pytest.raises(ValueError):
            TwinEconomics(alpha=1.0, beta=-1.0, zeta=1.0, eta=0.0)

    def test_zero_beta_allowed(self):
        TwinEconomics(alpha=1.0, beta=0.0, zeta=0.0)


class TestPlanValidation:
    def test_k_bounds(self):
        with pytest.raises(ValueError):
            DeploymentPlan(4, 5, 0.0)
        with pytest.raises(ValueError):
            DeploymentPlan(4, -1, 0.0)

    def test_negative_delta(self):
        with pytest.raises(ValueError):
            DeploymentPlan(4, 2, -0.1)

    def test_virtual_count(self):
        assert DeploymentPlan(4, 1, 0.5).virtual_count == 3


class TestConstructionCost:
    ECON = TwinEconomics(alpha=1.0, beta=-0.5, zeta=1.0)

    def test_worked_value(self):
        # oracle: direct evaluation of 1 * e^(-0.5 * 0.8)
        oracle = math.exp(-0.4)
        got = construction_cost(self.ECON, DeploymentPlan(4, 0, 0.8))
        assert got == pytest.approx(oracle, rel=1e-12)
        assert got == pytest.approx(0.6703, abs=5e-5)

    def test_delta_zero_costs_alpha(self):
        assert construction_cost(self.ECON, DeploymentPlan(4, 0, 0.0)) == 1.0

    def test_all_physical_is_free(self):
        # no twin environment is built at all when every UAV is physical
        assert construction_cost(self.ECON, DeploymentPlan(4, 4, 0.0)) == 0.0
        assert construction_cost(self.ECON, DeploymentPlan(4, 4, 2.0)) == 0.0

    @given(st.floats(0.0, 5.0), st.floats(0.0, 5.0), st.floats(-3.0, 0.0))
    @settings(max_examples=60)
    def test_monotone_nonincreasing_in_delta(self, d1, d2, beta):
        econ = TwinEconomics(alpha=2.0, beta=beta, zeta=0.0)
        lo, hi = sorted((d1, d2))
        c_lo = construction_cost(econ, DeploymentPlan(4, 0, lo))
        c_hi = construction_cost(econ, DeploymentPlan(4, 0, hi))
        assert c_lo >= c_hi  # noisier twins are never more expensive


class TestDeploymentCost:
    def test_linear_in_k(self):
        econ = TwinEconomics(alpha=0.0, beta=0.0, zeta=3.0)
        assert deployment_cost(econ, DeploymentPlan(4, 0, 0.0)) == 0.0
        assert deployment_cost(econ, DeploymentPlan(4, 2, 0.0)) == 6.0
        assert deployment_cost(econ, DeploymentPlan(4, 4, 0.0)) == 12.0


class TestUtility:
    def test_worked_value(self):
        # oracle: 1*100 - 2*e^(-1*1) - 3*2
        oracle = 100.0 - 2.0 * math.exp(-1.0) - 6.0
        econ = TwinEconomics(alpha=2.0, beta=-1.0, zeta=3.0, eta=1.0)
        got = utility(econ, DeploymentPlan(4, 2, 1.0), 100.0)
        assert got == pytest.approx(oracle, rel=1e-12)
        assert got == pytest.approx(93.264, abs=5e-4)

    def test_free_economics_pass_rate_through(self):
        econ = TwinEconomics(alpha=0.0, beta=0.0, zeta=0.0, eta=1.0)
        assert utility(econ, DeploymentPlan(4, 2, 0.7), 55.5) == 55.5

    def test_increasing_in_rate(self):
        econ = TwinEconomics(alpha=2.0, beta=-1.0, zeta=3.0, eta=2.0)
        plan = DeploymentPlan(4, 1, 0.3)
        assert utility(econ, plan, 60.0) > utility(econ, plan, 50.0)


class TestSplitFleet:
    def test_all_physical(self):
        phys, virt = split_fleet(DeploymentPlan(3, 3, 0.0))
        assert phys == (0, 1, 2) and virt == ()

    def test_all_virtual(self):
        phys, virt = split_fleet(DeploymentPlan(3, 0, 0.5))
        assert phys == () and virt == (0, 1, 2)

    def test_mixed(self):
        phys, virt = split_fleet(DeploymentPlan(4, 2, 0.5))
        assert phys == (0, 1) and virt == (2, 3)

    @given(st.integers(1, 12), st.data())
    def test_partition_property(self, m, data):
        k = data.draw(st.integers(0, m))
        phys, virt = split_fleet(DeploymentPlan(m, k, 0.1))
        assert len(phys) == k and len(virt) == m - k
        assert sorted(phys + virt) == list(range(m))
        assert all(p < v for p in phys for v in virt)  # physical lead the index order
