import math

import numpy as np
import pytest

from contentinject.denoiser import DenoiserConfig, DenoiserOutput, forward, init_params
from contentinject.errors import ConfigError, ContractError
from contentinject.hspace import InjectionConfig
from contentinject.sampler import (
    LatentState,
    ZeroPredictor,
    asyrp_step,
    capture_content_trace,
    ddim_invert,
    ddim_step,
    direction_to_xt,
    injectfusion_generate,
    predict_x0,
    reconstruct,
)
from contentinject.schedule import NoiseSchedule, make_plan, make_schedule, sigma

TINY = DenoiserConfig(resolution=8, widths=(8, 16), bottleneck_channels=16, temb_dim=16)


def two_step_schedule(eta=0.0):
    # abar = (1, 0.5, 0.25)
    return NoiseSchedule(2, np.array([0.5, 0.5]), np.array([1.0, 0.5, 0.25]), eta)


class ConstantPredictor:
    """eps = plain everywhere, eps = injected when a bottleneck is supplied."""

    def __init__(self, plain, injected):
        self.plain, self.injected = plain, injected

    def forward(self, x, t):
        return DenoiserOutput(np.full_like(x, self.plain), np.ones((1, 1, 1)), [x])

    def forward_injected(self, x, t, h_new):
        return DenoiserOutput(np.full_like(x, self.injected), np.ones((1, 1, 1)), [x])


@pytest.fixture(scope="module")
def tiny():
    return init_params(TINY, seed=4)


@pytest.fixture(scope="module")
def images():
    return np.random.default_rng(0).uniform(-1, 1, (3,) + TINY.image_shape).astype(np.float32)


class TestPrimitives:
    def test_predict_x0(self):
        x = np.array([1.0, -2.0])
        np.testing.assert_array_equal(predict_x0(x, np.array([5.0, 7.0]), 1.0), x)
        np.testing.assert_array_equal(predict_x0(x, np.zeros(2), 0.25), x / 0.5)
        expected = (1.0 - math.sqrt(0.75) * 0.5) / 0.5
        assert float(predict_x0(np.array(1.0), np.array(0.5), 0.25)) == pytest.approx(expected, rel=1e-15)
        assert expected == pytest.approx(1.13397, abs=1e-5)

    def test_predict_x0_rejects_bad_alpha(self):
        with pytest.raises(ContractError):
            predict_x0(np.ones(2), np.ones(2), 0.0)

    def test_direction(self):
        np.testing.assert_array_equal(direction_to_xt(np.array([3.0]), 1.0), [0.0])
        np.testing.assert_allclose(direction_to_xt(np.array([2.0]), 0.75), [1.0], rtol=1e-15)
        s = sigma(two_step_schedule(), 2, 1, eta=1.0)
        expected = math.sqrt(1 - 0.5 - s * s)
        np.testing.assert_allclose(direction_to_xt(np.array([1.0]), 0.5, s), [expected], rtol=1e-15)
        assert expected == pytest.approx(0.40825, abs=1e-5)

    def test_direction_negative_radicand(self):
        with pytest.raises(ConfigError) as err:
            direction_to_xt(np.ones(1), 0.5, 0.9)
        assert err.value.field == "schedule.eta"


class TestDDIMStep:
    def test_formula(self):
        s = two_step_schedule()
        out = ddim_step(LatentState(np.array([1.0]), 2), np.zeros(1), 1, s)
        np.testing.assert_allclose(out.x, [math.sqrt(0.5) / 0.5], rtol=1e-15)
        assert out.x[0] == pytest.approx(math.sqrt(2), rel=1e-15)
        assert out.t == 1

    def test_algebraic_inverse(self):
        s = make_schedule()
        rng = np.random.default_rng(0)
        x, eps = rng.standard_normal((2, 3, 8, 8))
        a_t, a_p = s.alpha_bar(600), s.alpha_bar(580)
        prev = ddim_step(LatentState(x, 600), eps, 580, s).x
        back = math.sqrt(a_t) * (prev - math.sqrt(1 - a_p) * eps) / math.sqrt(a_p) + math.sqrt(1 - a_t) * eps
        assert np.abs(back - x).max() <= 1e-6

    def test_zero_noise_is_deterministic_part(self):
        s = make_schedule()
        x, eps = np.random.default_rng(1).standard_normal((2, 3, 8, 8))
        sg = sigma(s, 600, 580, eta=1.0)
        out = ddim_step(LatentState(x, 600), eps, 580, s, sigma=sg, noise=np.zeros_like(x)).x
        a_t, a_p = s.alpha_bar(600), s.alpha_bar(580)
        ref = math.sqrt(a_p) * (x - math.sqrt(1 - a_t) * eps) / math.sqrt(a_t) + math.sqrt(1 - a_p - sg**2) * eps
        np.testing.assert_allclose(out, ref, rtol=1e-13, atol=1e-13)
        # with eps = 0 the stochastic step and the deterministic step coincide
        z0 = np.zeros_like(x)
        np.testing.assert_array_equal(
            ddim_step(LatentState(x, 600), z0, 580, s, sigma=sg, noise=z0).x,
            ddim_step(LatentState(x, 600), z0, 580, s).x,
        )

    def test_noise_contract(self):
        s = make_schedule()
        st = LatentState(np.zeros((3, 8, 8)), 600)
        with pytest.raises(ContractError, match="noise"):
            ddim_step(st, np.zeros((3, 8, 8)), 580, s, sigma=0.1)
        with pytest.raises(ContractError):
            ddim_step(st, np.zeros((3, 8, 8)), 600, s)

    def test_latent_state_invariants(self):
        with pytest.raises(ContractError):
            LatentState(np.array([np.nan]), 3)
        with pytest.raises(ContractError):
            LatentState(np.zeros(1), -1)


class TestInversion:
    def test_zero_predictor_closed_form(self, images):
        s, plan = make_schedule(), make_plan(1000, 50)
        x_T = ddim_invert(images, ZeroPredictor(), s, plan)
        assert x_T.t == 1000
        np.testing.assert_allclose(x_T.x, math.sqrt(s.alpha_bar(1000)) * images, rtol=1e-5, atol=1e-9)
        back, _ = reconstruct(x_T, ZeroPredictor(), s, plan)
        assert np.abs(back - images).mean() <= 1e-6

    def test_requires_eta_zero(self, images):
        with pytest.raises(ContractError, match="eta"):
            ddim_invert(images, ZeroPredictor(), make_schedule(eta=0.5), make_plan(1000, 10))

    def test_deterministic(self, tiny, images):
        s, plan = make_schedule(), make_plan(1000, 10)
        a = ddim_invert(images, tiny, s, plan).x
        b = ddim_invert(images, tiny, s, plan).x
        assert a.tobytes() == b.tobytes()

    def test_uses_destination_timestep(self, tiny, images):
        # oracle: one manual inversion step with eps(x_0, t_dest)
        s, plan = make_schedule(), make_plan(1000, 1)
        eps = forward(tiny, images, 1000).eps
        x0_hat = images  # abar_0 = 1
        ref = math.sqrt(s.alpha_bar(1000)) * x0_hat + math.sqrt(1 - s.alpha_bar(1000)) * eps
        np.testing.assert_allclose(ddim_invert(images, tiny, s, plan).x, ref, rtol=1e-5, atol=1e-6)

    def test_trace_keys(self, tiny, images):
        s, plan = make_schedule(), make_plan(1000, 10, t_edit=400)
        trace = capture_content_trace(ddim_invert(images, tiny, s, plan), tiny, s, plan)
        assert tuple(sorted(trace, reverse=True)) == plan.inject_steps
        assert trace[1000].shape == (3,) + TINY.bottleneck_shape


class TestAsyrp:
    def test_identity_injection(self, tiny, images):
        s = make_schedule()
        st = LatentState(images, 800)
        h = forward(tiny, images, 800).h
        eps = forward(tiny, images, 800).eps
        assert asyrp_step(st, tiny, h, 780, s).x.tobytes() == ddim_step(st, eps, 780, s).x.tobytes()

    def test_perturbation_propagates(self, tiny, images):
        s = make_schedule()
        st = LatentState(images, 800)
        h = forward(tiny, images, 800).h
        eps = forward(tiny, images, 800).eps
        assert np.abs(asyrp_step(st, tiny, 0.5 * h, 780, s).x - ddim_step(st, eps, 780, s).x).max() > 1e-5

    def test_scalar(self):
        out = asyrp_step(LatentState(np.array([1.0]), 2), ConstantPredictor(0.5, 0.2), np.ones(1), 1, two_step_schedule())
        expected = math.sqrt(0.5) * (1 - math.sqrt(0.75) * 0.2) / 0.5 + math.sqrt(0.5) * 0.5
        assert out.x[0] == pytest.approx(expected, rel=1e-15)
        # formula oracle: 1.1692645 (predicted-x0 term) + 0.3535534 (direction term)
        assert expected == pytest.approx(1.5228180, abs=1e-7)


def _setup(tiny, images, n=10, t_edit=400, t_boost=0):
    s = make_schedule()
    plan = make_plan(1000, n, t_edit, t_boost)
    x_T = ddim_invert(images, tiny, s, plan)
    recon, _ = reconstruct(x_T, tiny, s, plan)
    return s, plan, x_T, recon


class TestGenerate:
    def test_noop_injection_equals_reconstruction(self, tiny, images):
        s, plan, x_T, recon = _setup(tiny, images)
        content = capture_content_trace(ddim_invert(images[::-1].copy(), tiny, s, plan), tiny, s, plan)
        cfg = InjectionConfig(gamma=0.0, omega=1e-3, t_edit=400, t_boost=0)
        out = injectfusion_generate(x_T, content, cfg, tiny, s, plan)
        assert out.x0.tobytes() == recon.tobytes()

    @pytest.mark.parametrize("gamma", [0.3, 1.0])
    def test_self_injection(self, tiny, images, gamma):
        s, plan, x_T, recon = _setup(tiny, images)
        own = capture_content_trace(x_T, tiny, s, plan)
        cfg = InjectionConfig(gamma=gamma, t_edit=400, t_boost=0)
        out = injectfusion_generate(x_T, own, cfg, tiny, s, plan)
        assert np.abs(out.x0 - recon).mean() <= 1e-5

    def test_interval_partition(self, tiny, images):
        s = make_schedule()
        plan = make_plan(1000, 20, 400, 200)
        x_T = ddim_invert(images, tiny, s, plan)
        trace = capture_content_trace(x_T, tiny, s, plan)
        out = injectfusion_generate(x_T, trace, InjectionConfig(), tiny, s, plan, rng=3)
        assert [r.t for r in out.records] == list(plan.steps)
        expected = ["inject" if t >= 400 else "boost" if t < 200 else "plain" for t in plan.steps]
        assert out.branches() == expected
        for r in out.records:
            # the last jump lands on abar = 1, where sigma vanishes
            assert (r.sigma > 0) == (r.branch == "boost" and r.t_prev > 0)
            assert (r.dx_norm is not None) == (r.branch == "inject")

    def test_boost_noise_from_rng(self, tiny, images):
        s = make_schedule()
        plan = make_plan(1000, 20, 400, 200)
        x_T = ddim_invert(images, tiny, s, plan)
        trace = capture_content_trace(x_T, tiny, s, plan)
        a = injectfusion_generate(x_T, trace, InjectionConfig(), tiny, s, plan, rng=3).x0
        b = injectfusion_generate(x_T, trace, InjectionConfig(), tiny, s, plan, rng=3).x0
        c = injectfusion_generate(x_T, trace, InjectionConfig(), tiny, s, plan, rng=4).x0
        assert a.tobytes() == b.tobytes()
        assert np.abs(a - c).max() > 1e-4

    def test_boost_sigma_power(self, tiny, images):
        s = make_schedule()
        plan = make_plan(1000, 20, 400, 200)
        x_T = ddim_invert(images, tiny, s, plan)
        trace = capture_content_trace(x_T, tiny, s, plan)
        recs = injectfusion_generate(x_T, trace, InjectionConfig(boost_power=2), tiny, s, plan).records
        r = [r for r in recs if r.branch == "boost"][0]
        assert r.sigma == pytest.approx(sigma(s, r.t, r.t_prev, eta=1.0) ** 2, rel=1e-15)

    def test_missing_content_names_step(self, tiny, images):
        s, plan, x_T, _ = _setup(tiny, images)
        trace = capture_content_trace(x_T, tiny, s, plan)
        del trace[500]
        with pytest.raises(ContractError, match="t=500"):
            injectfusion_generate(x_T, trace, InjectionConfig(t_boost=0), tiny, s, plan)

    def test_asymmetric_mode_runs(self, tiny, images):
        s, plan, x_T, recon = _setup(tiny, images)
        own = capture_content_trace(x_T, tiny, s, plan)
        out = injectfusion_generate(x_T, own, InjectionConfig(calibrate=False, t_boost=0), tiny, s, plan)
        assert np.abs(out.x0 - recon).mean() <= 1e-5

    def test_masked_locality(self, tiny, images):
        s, plan, x_T, _ = _setup(tiny, images)
        content = capture_content_trace(ddim_invert(images[::-1].copy(), tiny, s, plan), tiny, s, plan)
        mask = np.zeros(TINY.bottleneck_shape[1:], dtype=bool)
        mask[:, :1] = True
        cfg = InjectionConfig(mask=mask, t_boost=0)
        out = injectfusion_generate(x_T, content, cfg, tiny, s, plan, keep_arrays=True)
        for r in out.records:
            if r.branch != "inject":
                continue
            assert r.h_tilde[:, :, ~mask].tobytes() == r.h[:, :, ~mask].tobytes()
            assert np.abs(r.h_tilde[:, :, mask] - r.h[:, :, mask]).max() > 0
