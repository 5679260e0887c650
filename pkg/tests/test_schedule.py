import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contentinject.errors import ConfigError, ContractError
from contentinject.schedule import NoiseSchedule, TimestepPlan, make_plan, make_schedule, sigma

# 50-digit product of the 1000 linear factors (mpmath, computed offline)
ALPHA_BAR_1000 = 4.0358297653756833148e-05
ALPHA_BAR_500 = 0.078587242881778237343


def _explicit(betas, eta=0.0):
    betas = np.asarray(betas, dtype=np.float64)
    abar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(len(betas), betas, abar, eta)


class TestMakeSchedule:
    def test_two_step_product(self):
        s = make_schedule(T=2, beta_start=0.5, beta_end=0.5)
        np.testing.assert_array_equal(s.alphas_cum, [1.0, 0.5, 0.25])

    def test_single_step(self):
        s = make_schedule(T=1, beta_start=0.9, beta_end=0.9)
        np.testing.assert_allclose(s.alphas_cum, [1.0, 0.1], rtol=0, atol=1e-15)

    def test_default_endpoint_against_high_precision_product(self):
        s = make_schedule()
        assert s.alpha_bar(1000) == pytest.approx(ALPHA_BAR_1000, rel=1e-10)
        assert s.alpha_bar(500) == pytest.approx(ALPHA_BAR_500, rel=1e-12)
        assert s.alpha_bar(1000) == pytest.approx(4.0e-5, rel=0.01)

    def test_linear_betas(self):
        s = make_schedule(T=5, beta_start=0.1, beta_end=0.5)
        np.testing.assert_allclose(s.betas, [0.1, 0.2, 0.3, 0.4, 0.5])

    def test_invariants(self):
        s = make_schedule()
        assert s.alphas_cum[0] == 1.0
        assert np.all(np.diff(s.alphas_cum) < 0)
        assert np.all((s.betas > 0) & (s.betas < 1))
        rebuilt = s.alphas_cum[:-1] * (1.0 - s.betas)
        np.testing.assert_array_equal(rebuilt, s.alphas_cum[1:])

    def test_recompute_relative_error(self):
        s = make_schedule()
        ref = np.cumprod(1.0 - s.betas)
        assert np.max(np.abs(ref - s.alphas_cum[1:]) / ref) <= 1e-12

    @pytest.mark.parametrize(
        "kwargs, field",
        [
            (dict(T=0), "schedule.T"),
            (dict(beta_start=0.0), "schedule.beta_start"),
            (dict(beta_end=1.0), "schedule.beta_end"),
            (dict(beta_start=0.03, beta_end=0.02), "schedule.beta_start"),
            (dict(kind="cosine"), "schedule.kind"),
            (dict(eta=-1.0), "schedule.eta"),
        ],
    )
    def test_invalid_bounds_name_field(self, kwargs, field):
        with pytest.raises(ConfigError) as err:
            make_schedule(**kwargs)
        assert err.value.field == field


class TestSigma:
    def test_eta_zero(self):
        s = make_schedule()
        assert sigma(s, 500, 480) == 0.0
        assert sigma(s, 1000, 0, eta=0.0) == 0.0

    def test_closed_form(self):
        s = _explicit([0.5, 0.5], eta=1.0)  # abar = 1, .5, .25
        expected = math.sqrt(0.5 / 0.75) * math.sqrt(1 - 0.25 / 0.5)
        assert sigma(s, 2, 1) == pytest.approx(expected, rel=1e-15)
        assert sigma(s, 2, 1) == pytest.approx(0.57735, abs=1e-5)

    def test_equal_alpha_bar(self):
        # abar_prev == abar_t makes the second factor vanish
        s = NoiseSchedule(2, np.array([0.5, 1e-300]), np.array([1.0, 0.5, 0.5]), 1.0)
        assert sigma(s, 2, 1) == 0.0

    def test_ordering_error(self):
        s = make_schedule()
        with pytest.raises(ContractError):
            sigma(s, 10, 10)
        with pytest.raises(ContractError):
            sigma(s, 10, 20)

    @given(
        t=st.integers(2, 1000),
        gap=st.integers(1, 999),
        eta_a=st.floats(0, 2),
        eta_b=st.floats(0, 2),
    )
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_eta(self, t, gap, eta_a, eta_b):
        s = make_schedule()
        t_prev = max(t - gap, 0)
        lo, hi = sorted((eta_a, eta_b))
        assert 0.0 <= sigma(s, t, t_prev, lo) <= sigma(s, t, t_prev, hi)


class TestPlan:
    def test_fifty_of_thousand(self):
        plan = make_plan(1000, 50, t_edit=400, t_boost=200)
        assert plan.steps[0] == 1000 and plan.steps[-1] == 20
        assert len(plan.steps) == 50
        assert all(a - b == 20 for a, b in zip(plan.steps, plan.steps[1:]))
        assert plan.inject_steps == tuple(range(1000, 399, -20))
        assert plan.boost_steps == tuple(range(180, 19, -20))

    def test_branch_partition(self):
        plan = make_plan(1000, 50, t_edit=400, t_boost=200)
        branches = [plan.branch(t) for t in plan.steps]
        assert branches.count("inject") == 31
        assert branches.count("boost") == 9
        assert branches.count("plain") == 10

    @given(T=st.integers(1, 2000), n=st.integers(1, 200))
    @settings(max_examples=100, deadline=None)
    def test_pairs_cover_steps_in_order(self, T, n):
        if n > T:
            with pytest.raises(ConfigError):
                make_plan(T, n)
            return
        plan = make_plan(T, n)
        pairs = plan.pairs()
        assert [a for a, _ in pairs] == list(plan.steps)
        assert [b for _, b in pairs] == list(plan.steps[1:]) + [0]
        assert all(1 <= s <= T for s in plan.steps)

    def test_invalid_plans(self):
        with pytest.raises(ContractError):
            TimestepPlan((10, 10, 5))
        with pytest.raises(ContractError):
            TimestepPlan((10, 5), inject_steps=(10,), boost_steps=(10,))
        with pytest.raises(ConfigError):
            make_plan(1000, 50, t_edit=100, t_boost=200)
