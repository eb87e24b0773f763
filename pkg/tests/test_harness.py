import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from oracles import expected_loss_quad, tv_quad
from trajrcps import (BlockSchedule, ExperimentConfig, LinearModel, LossSpec, LtiSystem,
                      RcpsError, WeightVector, mixing_bound, simulate)
from trajrcps.harness import (MC_SLACK, RiskQuery, ScalarSetting, block_mean_loss,
                              check_blocking_inequality, coverage_experiment,
                              estimate_beta_scalar, estimate_eta, eta_oracle,
                              exact_risk_scalar, expected_abs_loss, gaussian_tv, mc_risk, sweep)
from trajrcps.predictor import FunctionModel

IND = LossSpec()
HINGE = LossSpec("hinge_capped", B=2.0, scale=0.5)


# -- Gaussian helpers ----------------------------------------------------------

def test_tv_examples():
    assert gaussian_tv(0, 1, 0, 1) == 0.0
    assert gaussian_tv(0, 1, 1, 1) == pytest.approx(2 * norm.cdf(0.5) - 1, abs=1e-12)
    assert gaussian_tv(0, 1, 1, 1) == pytest.approx(0.3829, abs=1e-4)
    with pytest.raises(RcpsError):
        gaussian_tv(0, 0, 0, 1)


@given(st.floats(-3, 3), st.floats(0.1, 4), st.floats(-3, 3), st.floats(0.1, 4))
@settings(max_examples=80, deadline=None)
def test_tv_matches_quadrature(mu1, s1, mu2, s2):
    assert abs(gaussian_tv(mu1, s1, mu2, s2) - tv_quad(mu1, s1, mu2, s2)) < 1e-9
    assert gaussian_tv(mu1, s1, mu2, s2) == pytest.approx(gaussian_tv(mu2, s2, mu1, s1),
                                                          abs=1e-12)


@pytest.mark.parametrize("loss", [IND, HINGE])
@given(mean=st.floats(-3, 3), std=st.floats(0.1, 3), lam=st.floats(0, 5))
@settings(max_examples=60, deadline=None)
def test_expected_loss_matches_quadrature(loss, mean, std, lam):
    got = float(expected_abs_loss(mean, std, lam, loss))
    ref = expected_loss_quad(mean, std, lam, loss, loss.B * loss.scale)
    assert abs(got - ref) < 1e-9


def test_expected_loss_zero_std():
    assert expected_abs_loss(-2.0, 0.0, 1.0, IND) == 1.0
    assert expected_abs_loss(0.5, 0.0, 1.0, HINGE) == 0.0


# -- exact and Monte Carlo risk ------------------------------------------------

def test_exact_stationary_example():
    s, m = LtiSystem.scalar(0.9), LinearModel.scalar(0.9)
    assert exact_risk_scalar(s, m, RiskQuery.stationary(1.6449)) == pytest.approx(0.10, abs=1e-4)
    assert exact_risk_scalar(s, m, RiskQuery.stationary(0.0)) == 1.0


@given(st.floats(-5, 5))
@settings(max_examples=50)
def test_perfect_model_conditional_equals_stationary(x):
    s, m = LtiSystem.scalar(0.7), LinearModel.scalar(0.7)
    assert exact_risk_scalar(s, m, RiskQuery.conditional_given(x, 1.2)) == pytest.approx(
        exact_risk_scalar(s, m, RiskQuery.stationary(1.2)), abs=1e-15)


def test_marginal_converges_to_stationary():
    s, m = LtiSystem.scalar(0.9), LinearModel.scalar(0.5)
    stat = exact_risk_scalar(s, m, RiskQuery.stationary(1.0))
    gaps = [abs(exact_risk_scalar(s, m, RiskQuery.marginal_at_lag(k, 0, 1.0)) - stat)
            for k in (1, 5, 20, 80)]
    assert all(a > b for a, b in zip(gaps, gaps[1:])) and gaps[-1] < 1e-6


def test_exact_rejects_unsupported():
    s2 = LtiSystem(np.eye(2) * 0.5)
    with pytest.raises(RcpsError, match="mc_risk"):
        exact_risk_scalar(s2, LinearModel(np.eye(2) * 0.5), RiskQuery.stationary(1.0))
    with pytest.raises(RcpsError, match="mc_risk"):
        exact_risk_scalar(LtiSystem.scalar(0.5), FunctionModel(lambda x: x),
                          RiskQuery.stationary(1.0))


def test_risk_query_validation():
    with pytest.raises(RcpsError):
        RiskQuery.marginal_at_lag(0, 10, 1.0)
    with pytest.raises(RcpsError):
        RiskQuery.conditional_given(float("nan"), 1.0)
    with pytest.raises(RcpsError):
        RiskQuery.stationary(-1.0)


def test_exact_matches_mc_on_random_configs():
    rng = np.random.default_rng(0)
    for i in range(20):
        s = LtiSystem.scalar(rng.uniform(-0.95, 0.95), rng.uniform(0.3, 2.0))
        m = LinearModel.scalar(rng.uniform(-1, 1))
        loss = IND if i % 2 else HINGE
        lam = rng.uniform(0, 3)
        kind = i % 3
        if kind == 0:
            q = RiskQuery.stationary(lam, loss)
        elif kind == 1:
            q = RiskQuery.marginal_at_lag(int(rng.integers(1, 6)), int(rng.integers(0, 30)),
                                          lam, loss)
        else:
            q = RiskQuery.conditional_given(rng.normal(0, 2), lam, loss)
        est, se = mc_risk(s, m, q, 20_000, seed=i)
        assert abs(est - exact_risk_scalar(s, m, q)) <= MC_SLACK * se + 1e-12


def test_mc_standard_error_scaling():
    s, m = LtiSystem.scalar(0.5), LinearModel.scalar(0.2)
    q = RiskQuery.stationary(1.0)
    _, se1 = mc_risk(s, m, q, 40_000, seed=1)
    _, se2 = mc_risk(s, m, q, 80_000, seed=2)
    assert se2 / se1 == pytest.approx(1 / math.sqrt(2), rel=0.05)


def test_mc_noiseless_perfect_model():
    s = LtiSystem.scalar(0.5, noise_std=0.0)
    assert mc_risk(s, LinearModel.scalar(0.5), RiskQuery.conditional_given(2.0, 0.0), 100, 0) \
        == (0.0, 0.0)


def test_mc_general_d():
    A = np.array([[0.5, 0.2], [0.0, 0.3]])
    s = LtiSystem(A)
    # perfect model: residual norm is chi with 2 degrees of freedom
    est, se = mc_risk(s, LinearModel(A), RiskQuery.stationary(1.5), 50_000, seed=3)
    assert abs(est - math.exp(-1.5 ** 2 / 2)) <= MC_SLACK * se
    with pytest.raises(RcpsError):
        mc_risk(s, LinearModel(A), RiskQuery.stationary(1.0), 50, seed=3)
    with pytest.raises(RcpsError):
        mc_risk(LtiSystem.scalar(1.1), LinearModel.scalar(1.1), RiskQuery.stationary(1.0),
                200, seed=3)


# -- mixing and blocking -------------------------------------------------------

def test_beta_memoryless_is_zero():
    for k in (1, 3):
        for t in (1, 50):
            assert estimate_beta_scalar(LtiSystem.scalar(0.0), k, t, 1000, seed=0) == (0.0, 0.0)


def test_beta_decreases_with_lag():
    s = LtiSystem.scalar(0.8)
    vals = [estimate_beta_scalar(s, k, 50, 20_000, seed=k)[0] for k in (1, 3, 10, 30)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_blocking_memoryless():
    s = LtiSystem.scalar(0.0)
    rep = check_blocking_inequality(s, block_mean_loss(LinearModel.scalar(0.0), IND, 1.0),
                                    BlockSchedule(20, 10), mixing_bound(s), 20_000, seed=4)
    assert rep.gap <= MC_SLACK * rep.se and rep.holds


def test_blocking_single_block():
    s = LtiSystem.scalar(0.9)
    b = mixing_bound(s)
    rep = check_blocking_inequality(s, block_mean_loss(LinearModel.scalar(0.5), IND, 1.0),
                                    BlockSchedule(1, 200), b, 50_000, seed=5,
                                    block_index=200, init="zero")
    assert rep.m == 1 and rep.certified == pytest.approx(b.bound(200))
    assert rep.holds


def test_blocking_zero_start_first_block_is_far_from_stationary():
    # x_1 = 0 makes Z_1 visibly non-stationary; the stationary-start default removes it
    s = LtiSystem.scalar(0.9)
    h = block_mean_loss(LinearModel.scalar(0.5), IND, 1.0)
    far = check_blocking_inequality(s, h, BlockSchedule(1, 200), mixing_bound(s), 20_000,
                                    seed=6, init="zero")
    near = check_blocking_inequality(s, h, BlockSchedule(1, 200), mixing_bound(s), 20_000,
                                     seed=6)
    assert far.gap > 10 * far.se and near.gap <= MC_SLACK * near.se


def test_blocking_schedule_errors():
    s = LtiSystem.scalar(0.5)
    h = block_mean_loss(LinearModel.scalar(0.5), IND, 1.0)
    with pytest.raises(RcpsError, match="trimmed"):
        check_blocking_inequality(s, h, BlockSchedule(5, 5, trimmed=2), mixing_bound(s), 200, 0)
    with pytest.raises(RcpsError, match="block index"):
        check_blocking_inequality(s, h, BlockSchedule(5, 5), mixing_bound(s), 200, 0,
                                  block_index=6)


# -- eta -----------------------------------------------------------------------

@pytest.mark.parametrize("a, a_hat", [(0.0, 0.0), (0.9, 0.9), (-0.4, -0.4)])
def test_eta_vanishes_for_x_free_residuals(a, a_hat):
    s, m = LtiSystem.scalar(a), LinearModel.scalar(a_hat)
    for w in (WeightVector.uniform(40), WeightVector.exponential(40, 0.9)):
        est, se = estimate_eta(s, m, w, 1.3, 40, 500, seed=1)
        assert abs(est) < 1e-14 and se < 1e-14


def test_eta_imperfect_model_reported():
    s, m = LtiSystem.scalar(0.99), LinearModel.scalar(0.5)
    uni = estimate_eta(s, m, "uniform", 1.5, 500, 2000, seed=2)
    exp = estimate_eta(s, m, {"preset": "exponential", "alpha": 0.9}, 1.5, 500, 2000, seed=2)
    assert all(math.isfinite(v) for v in uni + exp)
    assert uni[0] != exp[0]


def test_eta_oracle_single_trajectory_matches_definition():
    s, m = LtiSystem.scalar(0.8), LinearModel.scalar(0.3)
    traj = simulate(s, 30, seed=7)
    w = WeightVector.exponential(30, 0.7)
    test, eta = eta_oracle(s, m, traj, w, 1.0)
    x = traj.states[:, 0]
    p = [norm.sf((1.0 - 0.5 * xt)) + norm.cdf(-1.0 - 0.5 * xt) for xt in x]
    assert test == pytest.approx(p[-1], abs=1e-14)
    assert eta == pytest.approx(p[-1] - np.dot(np.asarray(w), p[:-1]), abs=1e-14)


def test_eta_requires_scalar_linear():
    with pytest.raises(RcpsError, match="η oracle requires scalar linear setting"):
        estimate_eta(LtiSystem(np.eye(2) * 0.5), LinearModel(np.eye(2) * 0.5), "uniform",
                     1.0, 10, 10, 0)


# -- coverage experiments ------------------------------------------------------

def base_config(**kw):
    data = dict(seed=11, system={"A": 0.9}, model={"A_hat": 0.9}, T=3000, trials=100)
    data.update(kw)
    return ExperimentConfig.from_dict(data)


def test_coverage_noiseless_perfect_model():
    cfg = base_config(system={"A": 0.9, "noise_std": 0.0}, rule="weighted", weights="uniform",
                      T=200, init=[1.0])
    rep = coverage_experiment(cfg)
    assert rep.coverage_rate == 1.0 and rep.failures == 0
    assert all(r.lambda_hat == 0.0 and r.true_risk == 0.0 for r in rep.records)


def test_coverage_point_mass_is_vacuous():
    cfg = base_config(rule="weighted", weights={"preset": "point_mass"}, delta=0.01, T=100)
    rep = coverage_experiment(cfg)
    assert rep.vacuous_count == rep.trials and rep.coverage_rate == 1.0
    assert "vacuous" in rep.summary()


def test_coverage_blocked_meets_target():
    rep = coverage_experiment(base_config(T=20_000, trials=100))
    assert rep.failures == 0 and rep.meets_target
    assert 0.0 < rep.gamma < 1.0


def test_coverage_reports_configuration_failures():
    rep = coverage_experiment(base_config(T=100))          # too short for burn-in
    assert rep.failures == rep.trials and rep.success_count == 0
    assert "burn-in" in rep.records[0].error


def test_coverage_deterministic_across_workers():
    cfg = base_config(rule="weighted", weights={"preset": "exponential", "alpha": 0.99},
                      model={"A_hat": 0.7}, T=500)
    one = coverage_experiment(cfg, workers=1).to_dict()
    four = coverage_experiment(cfg, workers=4).to_dict()
    assert one == four


def test_coverage_env_threads(monkeypatch):
    cfg = base_config(rule="iid", T=2000)
    monkeypatch.setenv("RCPS_THREADS", "0")
    auto = coverage_experiment(cfg).to_dict()
    monkeypatch.setenv("RCPS_THREADS", "1")
    assert coverage_experiment(cfg).to_dict() == auto


def test_sweep_lag_decay():
    # short horizon and an imperfect model so the lag-k marginal is still mixing
    cfg = base_config(rule="iid", epsilon=0.3, T=30, model={"A_hat": 0.5},
                      sweep={"axis": "k", "grid": [1, 20, 60, 120]})
    rows = sweep(cfg)
    nus = [r["nu"] for r in rows]
    gaps = [r["mean_abs_gap_to_stationary"] for r in rows]
    assert all(a >= b for a, b in zip(nus, nus[1:])) and nus[-1] < nus[0]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
