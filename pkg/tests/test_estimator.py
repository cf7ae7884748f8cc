import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from safevisor import SafetyAdvisor, temperature_model


@pytest.fixture(scope="module")
def fitted():
    return SafetyAdvisor(delta_x=1e-2, delta_u=2.4e-2, rho=0.01).fit(temperature_model())


def test_params_round_trip():
    est = SafetyAdvisor(rho=0.05)
    assert est.get_params()["rho"] == 0.05
    assert clone(est).set_params(delta_x=0.5).delta_x == 0.5


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SafetyAdvisor().predict([20.0])


def test_fit_and_predict(fitted):
    assert fitted.horizon_ == fitted.table_.horizon > 0
    u = fitted.predict([19.01, 20.0, 20.9])
    reps = fitted.mdp_.inputs.representatives
    assert set(u.tolist()) <= set(reps)
    # near the bottom of the band the advisor heats hard
    assert u[0] == max(reps)
    assert np.array_equal(fitted.predict(np.array([[19.01], [20.0], [20.9]])), u)


def test_reach_probability(fitted):
    p = fitted.reach_probability([19.01, 20.0])
    assert np.all(p <= 0.01)
    assert np.all(fitted.reach_probability([20.0], n=0) == 0)


def test_bad_inputs(fitted):
    with pytest.raises(ValueError):
        fitted.predict([25.0])
    with pytest.raises(IndexError):
        fitted.predict([20.0], k=fitted.horizon_)
    with pytest.raises(TypeError):
        SafetyAdvisor().fit("temperature")


def test_fit_on_finite_mdp(toy_mdp):
    est = SafetyAdvisor(rho=0.15).fit(toy_mdp)
    assert est.horizon_ == 3
    assert est.predict([0.5]).tolist() == [1.0]
    assert est.supervisor().step(0.5, 0.0).applied_input in (0, 1)
