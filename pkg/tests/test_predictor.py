import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajrcps import (LinearModel, LossSpec, LtiSystem, NestedPredictor, RcpsError,
                      WeightVector, empirical_risk, residuals, simulate)
from trajrcps.lti import Trajectory

LOSSES = [LossSpec(), LossSpec("hinge_capped", B=2.5, scale=0.7)]

residual_lists = st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=30)


def test_residuals_perfect_noiseless_fit():
    traj = simulate(LtiSystem.scalar(0.7, noise_std=0.0), 20, init=[3.0])
    np.testing.assert_array_equal(residuals(traj, LinearModel.scalar(0.7)), np.zeros(20))


def test_residuals_zero_model():
    traj = Trajectory(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(residuals(traj, LinearModel.scalar(0.0)), [2.0, 3.0])


def test_residuals_are_folded_noise_for_perfect_model():
    traj = simulate(LtiSystem.scalar(0.9), 20_000, seed=4)
    r = residuals(traj, LinearModel.scalar(0.9))
    assert abs(r.mean() / np.sqrt(2 / np.pi) - 1) < 0.05


def test_residuals_vector_norm():
    traj = Trajectory(np.array([[1.0, 0.0], [3.0, 4.0]]))
    assert residuals(traj, LinearModel(np.zeros((2, 2))))[0] == pytest.approx(5.0)


def test_empirical_risk_examples():
    r = np.arange(1, 11) / 10
    loss = LossSpec()
    assert empirical_risk(r, loss, 1.0) == 0.0
    assert empirical_risk(r, loss, 0.0) == 1.0
    assert empirical_risk(r, loss, 0.75) == pytest.approx(0.3, abs=1e-15)
    # boundary counts as covered
    assert empirical_risk(r, loss, 0.3) == pytest.approx(0.7, abs=1e-15)


def test_empirical_risk_length_mismatch():
    with pytest.raises(RcpsError):
        empirical_risk([1.0, 2.0], LossSpec(), 0.5, WeightVector.uniform(3))


@pytest.mark.parametrize("loss", LOSSES)
@given(res=residual_lists, l1=st.floats(0, 12), l2=st.floats(0, 12))
@settings(max_examples=200, deadline=None)
def test_empirical_risk_monotone_and_bounded(loss, res, l1, l2):
    lo, hi = sorted((l1, l2))
    a, b = empirical_risk(res, loss, lo), empirical_risk(res, loss, hi)
    assert a >= b
    assert 0.0 <= b <= a <= loss.B


@pytest.mark.parametrize("loss", LOSSES)
@given(res=residual_lists, lam=st.floats(0, 12))
@settings(max_examples=100, deadline=None)
def test_uniform_weights_match_plain_average(loss, res, lam):
    w = WeightVector.uniform(len(res))
    plain = empirical_risk(res, loss, lam)
    weighted_sum = float(np.dot(np.asarray(w), loss(np.asarray(res), lam)))
    assert empirical_risk(res, loss, lam, w) == plain
    assert abs(weighted_sum - plain) <= 1e-12 * loss.B


@given(x=st.floats(-5, 5), y=st.floats(-5, 5), l1=st.floats(0, 5), l2=st.floats(0, 5),
       a_hat=st.floats(-2, 2))
@settings(max_examples=300)
def test_nested_sets(x, y, l1, l2, a_hat):
    lo, hi = sorted((l1, l2))
    pred = NestedPredictor(LinearModel.scalar(a_hat))
    if pred.contains([[x]], [[y]], lo)[0]:
        assert pred.contains([[x]], [[y]], hi)[0]


def test_loss_values():
    hinge = LossSpec("hinge_capped", B=2.0, scale=0.5)
    np.testing.assert_allclose(hinge(np.array([0.0, 1.0, 1.5, 5.0]), 1.0), [0, 0, 1.0, 2.0])
    np.testing.assert_array_equal(LossSpec()(np.array([1.0, 1.0 + 1e-12]), 1.0), [0, 1])
    with pytest.raises(RcpsError):
        LossSpec("indicator", B=2.0)
    with pytest.raises(RcpsError):
        LossSpec("squared")


def test_weight_vector_validation_and_norm():
    with pytest.raises(RcpsError):
        WeightVector([0.5, 0.6])
    with pytest.raises(RcpsError):
        WeightVector([1.5, -0.5])
    T = 17
    u = WeightVector.uniform(T)
    assert u.is_uniform and u.l2_norm == pytest.approx(T ** -0.5)
    e = WeightVector.exponential(T, 0.8)
    assert not e.is_uniform and e.l2_norm > T ** -0.5
    assert np.all(np.diff(np.asarray(e)) > 0)        # most recent weighted most
    assert WeightVector.point_mass(T).l2_norm == 1.0


@given(st.lists(st.floats(0, 1), min_size=2, max_size=50).filter(lambda v: sum(v) > 0))
@settings(max_examples=200)
def test_l2_norm_minimized_by_uniform(raw):
    w = np.asarray(raw) / np.sum(raw)
    wv = WeightVector(w)
    assert wv.l2_norm >= len(w) ** -0.5 - 1e-15
