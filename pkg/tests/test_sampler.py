import numpy as np
import pytest

from dpsweep.benchmarks import gaussian_benchmark
from dpsweep.errors import ConfigurationError, DimensionError, DivergenceError, UnsupportedProjectionError
from dpsweep.harness import run_sweep
from dpsweep.harness.config import SweepConfig
from dpsweep.operator import DownsampleAvg, GaussianBlur, IdentityOperator, ScaleOperator
from dpsweep.prior import DenoiserAdapter, GaussianPrior
from dpsweep.sampler import (
    ConditioningMethod,
    SamplerConfig,
    chain_seed,
    ddpm_step,
    dps_correct,
    mcg_correct,
    residual,
    run_chain,
    run_chains,
)
from dpsweep.schedule import build_linear_schedule

from oracles import gradient_operators, gradient_priors, random_spd, worst_gradient_error

STD_1D = GaussianPrior(0.0, 1.0, dim=1)


@pytest.fixture(scope="module")
def schedule_1000():
    return build_linear_schedule(1000)


# --- ddpm_step -----------------------------------------------------------

def test_ddpm_step_hand_example(two_step):
    c_xt, c_x0, sigma = two_step.reverse_coefficients(2)
    assert c_xt == pytest.approx(0.319438, abs=1e-6)
    assert c_x0 == pytest.approx(0.677631, abs=1e-6)
    x_prev, x0 = ddpm_step(np.array([1.0]), 2, two_step, STD_1D, None)
    assert x0[0] == pytest.approx(np.sqrt(0.72), abs=1e-12)
    assert x_prev[0] == pytest.approx(0.894427, abs=1e-6)
    noisy, _ = ddpm_step(np.array([1.0]), 2, two_step, STD_1D, np.array([1.0]))
    assert noisy[0] - x_prev[0] == pytest.approx(sigma, abs=1e-15)


def test_ddpm_step_last_step_is_noise_free(two_step):
    clean, _ = ddpm_step(np.array([0.4]), 1, two_step, STD_1D, None)
    noisy, _ = ddpm_step(np.array([0.4]), 1, two_step, STD_1D, np.array([5.0]))
    assert clean.tobytes() == noisy.tobytes()


def test_ddpm_step_small_beta_is_identity():
    sched = build_linear_schedule(3, 1e-10, 1e-10)
    model = DenoiserAdapter(lambda x, t, s: x, 2)
    x = np.array([0.3, -1.2])
    x_prev, _ = ddpm_step(x, 3, sched, model, None)
    np.testing.assert_allclose(x_prev, x, atol=1e-9)


# --- corrections ---------------------------------------------------------

def test_dps_zero_step_returns_input(two_step):
    x_prev = np.array([0.123])
    out = dps_correct(x_prev, np.array([1.0]), np.array([0.8]), 2, np.array([1.0]),
                      IdentityOperator((1, 1, 1)), STD_1D, two_step, 0.0)
    assert out is x_prev


def test_dps_closed_form_correction(two_step):
    x_t, y = np.array([1.0]), np.array([1.0])
    _, x0 = ddpm_step(x_t, 2, two_step, STD_1D, None)
    x_prev = np.array([0.3])
    out = dps_correct(x_prev, x_t, x0, 2, y, IdentityOperator((1, 1, 1)), STD_1D, two_step, 0.5)
    assert out[0] - 0.3 == pytest.approx(np.sqrt(0.72) * (1 - np.sqrt(0.72)), abs=1e-5)
    assert out[0] - 0.3 == pytest.approx(0.128527, abs=1e-5)


def test_dps_negative_step_rejected(two_step):
    with pytest.raises(ConfigurationError):
        dps_correct(np.zeros(1), np.zeros(1), np.zeros(1), 2, np.ones(1),
                    IdentityOperator((1, 1, 1)), STD_1D, two_step, -1.0)


@pytest.mark.parametrize("prior_name", ["gaussian", "mixture", "adapter"])
@pytest.mark.parametrize("op_name", ["identity", "scale", "downsample_avg", "gaussian_blur"])
def test_gradient_matches_finite_differences(prior_name, op_name, schedule_100):
    model = gradient_priors(np.random.default_rng(0))[prior_name]
    op = gradient_operators()[op_name]
    assert worst_gradient_error(model, op, schedule_100, np.random.default_rng(1), 50) <= 1e-4


def test_mcg_without_projection_is_dps(schedule_100, rng):
    model = gradient_priors(rng)["mixture"]
    op = DownsampleAvg((2, 4, 1), 2)
    x_t = rng.standard_normal(8)
    y = rng.standard_normal(2)
    x_prev, x0 = ddpm_step(x_t, 40, schedule_100, model, None)
    a = dps_correct(x_prev, x_t, x0, 40, y, op, model, schedule_100, 0.7)
    b = mcg_correct(x_prev, x_t, x0, 40, y, op, model, schedule_100, 0.7, projection=False)
    assert a.tobytes() == b.tobytes()


def test_mcg_identity_hits_scaled_target(schedule_100, rng):
    model = GaussianPrior(np.zeros(4), random_spd(rng, 4))
    op = IdentityOperator((2, 2, 1))
    x0_true = rng.standard_normal(4)
    y = op.matvec(x0_true)
    for t in (100, 50, 2, 1):
        x_t = rng.standard_normal(4)
        x_prev, x0 = ddpm_step(x_t, t, schedule_100, model, rng.standard_normal(4))
        out = mcg_correct(x_prev, x_t, x0, t, y, op, model, schedule_100, 0.5)
        target = np.sqrt(schedule_100.alpha_bar_prev(t)) * y
        assert np.max(np.abs(op.matvec(out) - target)) <= 1e-10


def test_mcg_projection_only_block_means(schedule_100, rng):
    op = DownsampleAvg((4, 4, 1), 2)
    model = GaussianPrior(0.0, 1.0, dim=16)
    y = rng.standard_normal(4)
    x_t = rng.standard_normal(16)
    x_prev, x0 = ddpm_step(x_t, 30, schedule_100, model, None)
    out = mcg_correct(x_prev, x_t, x0, 30, y, op, model, schedule_100, 0.0)
    np.testing.assert_allclose(op.matvec(out), np.sqrt(schedule_100.alpha_bar_prev(30)) * y, atol=1e-12)


def test_mcg_blur_projection_unsupported(two_step):
    op = GaussianBlur((3, 3, 1), 1, 1.0)
    model = GaussianPrior(0.0, 1.0, dim=9)
    with pytest.raises(UnsupportedProjectionError):
        mcg_correct(np.zeros(9), np.zeros(9), np.zeros(9), 2, np.zeros(9), op, model, two_step, 0.0)
    cfg = SamplerConfig(2, ConditioningMethod("mcg", 1.0))
    with pytest.raises(UnsupportedProjectionError):
        run_chain(cfg, two_step, model, op, np.zeros(9))


# --- residual ------------------------------------------------------------

def test_residual_examples(rng):
    op = IdentityOperator((1, 2, 1))
    assert residual(np.array([1.0, 0.0]), op, np.zeros(2)) == 1.0
    x = rng.standard_normal(2)
    assert residual(op.matvec(x), op, x) == 0.0
    blur = GaussianBlur((5, 4, 2), 2, 1.1)
    x, y = rng.standard_normal(40), rng.standard_normal(40)
    dense = np.sqrt(np.sum((y - blur.matrix() @ x) ** 2))
    assert residual(y, blur, x) == pytest.approx(dense, abs=1e-12)


# --- run_chain -----------------------------------------------------------

def test_single_step_chain_matches_hand_composition(rng):
    sched = build_linear_schedule(1, 0.1, 0.1)
    model = GaussianPrior(rng.standard_normal(4), random_spd(rng, 4))
    op = DownsampleAvg((2, 2, 1), 2)
    y = np.array([0.7])
    cond = ConditioningMethod("dps", 0.8)
    cfg = SamplerConfig(1, cond, seed=99, deterministic_noise=True)
    result = run_chain(cfg, sched, model, op, y)

    x_T = np.random.default_rng(np.random.SeedSequence(99)).standard_normal(4)
    x_prev, x0 = ddpm_step(x_T, 1, sched, model, None)
    rn = residual(y, op, x0)
    expected = dps_correct(x_prev, x_T, x0, 1, y, op, model, sched, cond.zeta / rn)
    np.testing.assert_allclose(result.reconstruction, expected, rtol=1e-14, atol=1e-14)
    assert result.residuals.shape == (1,)
    assert result.residuals[0] == pytest.approx(rn, rel=1e-14)


def test_run_chain_is_deterministic(schedule_100, rng):
    model = GaussianPrior(np.zeros(8), random_spd(rng, 8))
    op = DownsampleAvg((2, 4, 1), 2)
    cfg = SamplerConfig(100, ConditioningMethod("dps", 1.0), seed=2024)
    a = run_chain(cfg, schedule_100, model, op, np.array([0.5, -0.5]))
    b = run_chain(cfg, schedule_100, model, op, np.array([0.5, -0.5]))
    assert a.reconstruction.tobytes() == b.reconstruction.tobytes()
    assert a.residuals.tobytes() == b.residuals.tobytes()
    assert a.residuals.shape == (100,)
    c = run_chain(SamplerConfig(100, ConditioningMethod("dps", 1.0), seed=2025), schedule_100, model, op,
                  np.array([0.5, -0.5]))
    assert a.reconstruction.tobytes() != c.reconstruction.tobytes()


def test_trajectory_recording(schedule_100):
    cfg = SamplerConfig(100, seed=3, record_trajectory=True)
    out = run_chain(cfg, schedule_100, STD_1D, ScaleOperator((1, 1, 1), 1.0))
    assert out.trajectory.shape == (101, 1)
    assert out.trajectory[-1, 0] == out.reconstruction[0]


def test_zero_step_variants_are_bitwise_vanilla(schedule_100, rng):
    model = gradient_priors(rng)["mixture"]
    op = DownsampleAvg((2, 4, 1), 2)
    y = rng.standard_normal((5, 2))
    seeds = [chain_seed(7, i) for i in range(5)]

    def run(cond):
        return run_chains(SamplerConfig(100, cond), schedule_100, model, op, y, seeds).reconstructions

    vanilla = run(ConditioningMethod("vanilla"))
    assert run(ConditioningMethod("dps", 0.0)).tobytes() == vanilla.tobytes()
    assert run(ConditioningMethod("mcg", 0.0, projection=False)).tobytes() == vanilla.tobytes()


def test_worker_count_does_not_change_results(schedule_100, rng):
    model = GaussianPrior(np.zeros(8), random_spd(rng, 8))
    op = DownsampleAvg((2, 4, 1), 2)
    y = rng.standard_normal((10, 2))
    seeds = [chain_seed(1, i) for i in range(10)]
    cfg = SamplerConfig(100, ConditioningMethod("dps", 1.0))
    ref = run_chains(cfg, schedule_100, model, op, y, seeds, chunk_size=3, workers=1)
    for workers in (2, 4):
        out = run_chains(cfg, schedule_100, model, op, y, seeds, chunk_size=3, workers=workers)
        assert out.reconstructions.tobytes() == ref.reconstructions.tobytes()
        assert out.residuals.tobytes() == ref.residuals.tobytes()
    # other partitions agree up to BLAS blocking round-off
    whole = run_chains(cfg, schedule_100, model, op, y, seeds, chunk_size=256)
    np.testing.assert_allclose(whole.reconstructions, ref.reconstructions, rtol=1e-10, atol=1e-12)


def test_vanilla_reproduces_prior_mean(schedule_1000):
    mu0 = np.array([1.0, -0.5])
    cov0 = np.array([[1.0, 0.3], [0.3, 0.5]])
    model = GaussianPrior(mu0, cov0)
    op = IdentityOperator((1, 2, 1))
    n = 2000
    out = run_chains(SamplerConfig(1000), schedule_1000, model, op, None,
                     [chain_seed(11, i) for i in range(n)])
    se = np.sqrt(np.diag(cov0) / n)
    assert np.all(np.abs(out.reconstructions.mean(axis=0) - mu0) <= 3 * se)
    np.testing.assert_allclose(np.cov(out.reconstructions, rowvar=False), cov0, atol=0.1)


def test_divergence_names_timestep(two_step):
    cfg = SamplerConfig(2, ConditioningMethod("dps", 1e300, step_size_mode="constant"), seed=0)
    with pytest.raises(DivergenceError) as err:
        run_chain(cfg, two_step, STD_1D, ScaleOperator((1, 1, 1), 1.0), np.array([1e10]))
    assert err.value.t in (1, 2)


def test_divergent_chains_reported_in_batch(two_step):
    cfg = SamplerConfig(2, ConditioningMethod("dps", 1e300, step_size_mode="constant"))
    y = np.array([[0.0], [1e10]])
    out = run_chains(cfg, two_step, STD_1D, ScaleOperator((1, 1, 1), 1.0), y,
                     [chain_seed(0, i) for i in range(2)])
    assert out.divergence_count >= 1
    assert np.isnan(out.reconstructions[out.diverged_at > 0]).all()


def test_configuration_errors(two_step):
    with pytest.raises(ConfigurationError):
        ConditioningMethod("ddim", 1.0)
    with pytest.raises(ConfigurationError):
        ConditioningMethod("dps", -1.0)
    with pytest.raises(ConfigurationError):
        SamplerConfig(0)
    with pytest.raises(ConfigurationError):
        run_chain(SamplerConfig(3), two_step, STD_1D, ScaleOperator((1, 1, 1), 1.0))
    with pytest.raises(ConfigurationError):
        run_chain(SamplerConfig(2, ConditioningMethod("dps", 1.0)), two_step, STD_1D, ScaleOperator((1, 1, 1), 1.0))
    with pytest.raises(DimensionError):
        run_chain(SamplerConfig(2), two_step, STD_1D, IdentityOperator((1, 2, 1)), np.zeros(2))
    with pytest.raises(DimensionError):
        run_chain(SamplerConfig(2, ConditioningMethod("dps", 1.0)), two_step, STD_1D,
                  ScaleOperator((1, 1, 1), 1.0), np.zeros(3))


# --- statistical claims that do not hold for residual-normalized DPS --------

NORMALIZED_DPS_BIAS = (
    "residual-normalized DPS ignores sigma_y and pulls x0_hat onto y; it does not sample the posterior"
)


@pytest.mark.xfail(strict=True, reason=NORMALIZED_DPS_BIAS)
def test_dps_recovers_conjugate_posterior_within_ten_percent(schedule_1000):
    cfg = SamplerConfig(1000, ConditioningMethod("dps", 1.0))
    op = ScaleOperator((1, 1, 1), 1.0)
    out = run_chains(cfg, schedule_1000, STD_1D, op, np.array([2.0]), [chain_seed(0, 0, j) for j in range(2000)])
    samples = out.reconstructions[:, 0]
    assert samples.mean() == pytest.approx(1.0, rel=0.1)
    assert samples.var(ddof=1) == pytest.approx(0.5, rel=0.1)


@pytest.mark.xfail(strict=True, reason=NORMALIZED_DPS_BIAS)
@pytest.mark.parametrize("zeta", [1.0, 3.0])
def test_dps_posterior_mean_within_three_standard_errors(zeta, schedule_1000):
    from dpsweep.prior import analytic_posterior

    rng = np.random.default_rng(5)
    model = GaussianPrior(np.zeros(4), random_spd(rng, 4))
    op = DownsampleAvg((2, 2, 1), 2)
    sigma_y = 0.5
    y = op.degrade(model.sample(rng).reshape(2, 2, 1), sigma_y, rng).ravel()
    mean, cov = analytic_posterior(model, op, y, sigma_y)
    n = 1000
    out = run_chains(SamplerConfig(1000, ConditioningMethod("dps", zeta)), schedule_1000, model, op, y,
                     [chain_seed(3, j) for j in range(n)])
    se = np.sqrt(np.diag(cov) / n)
    assert np.all(np.abs(out.reconstructions.mean(axis=0) - mean) <= 3 * se)


@pytest.mark.xfail(strict=True, reason="the normalized step overshoots at the last step, so residual grows past zeta ~ 0.3")
def test_final_residual_monotone_in_zeta(tmp_path):
    sweep = SweepConfig(variants=["dps"], zeta=[0.0, 0.3, 1.0], steps=[1000])
    cfg = gaussian_benchmark(count=500, sweep=sweep, output_dir=str(tmp_path))
    rows = run_sweep(cfg, plots=False)
    res = [r.residual_mean for r in rows]
    assert res[0] >= res[1] >= res[2]
