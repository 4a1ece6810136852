import numpy as np
import pytest
from sklearn.base import clone

from aspca import ASPCAHistoryMatcher, HistoryMatchingProblem, Observations
from aspca.dataset import Grid, PerturbConfig, add_low_frequency_noise, generate_prior, true_model
from aspca.exceptions import InvalidArgument
from aspca.forward import SimConfig, simulate


@pytest.fixture(scope="module")
def setup():
    grid = Grid(30, np.pi)
    sim = SimConfig(t_end=1.0, n_steps=20, flux_left=1.0)
    prior = generate_prior(true_model(grid), 150, PerturbConfig(0.3, 0.25, seed=4), grid)
    truth = add_low_frequency_noise(true_model(grid), 0.3, 2, seed=5, grid=grid)
    obs = Observations.from_trajectory(simulate(truth, grid, sim), [10, 20])
    return prior.realizations, HistoryMatchingProblem(grid, sim, obs)


def test_params_and_clone():
    est = ASPCAHistoryMatcher(method="swap", n_swap=1, epsilon=0.2)
    params = est.get_params()
    assert params["method"] == "swap" and params["n_swap"] == 1 and params["reexpress"] == "auto"
    twin = clone(est)
    assert twin.get_params() == params and twin is not est


@pytest.mark.parametrize("method", ["full", "pca", "rotation"])
def test_fit(setup, method):
    X, problem = setup
    est = ASPCAHistoryMatcher(method=method, max_iters=25, stall_window=4, max_adaptations=2).fit(X, problem=problem)
    assert est.model_.shape == (30,)
    assert est.n_features_in_ == 30
    assert est.objective_ < est.run_.iterates[0].objective
    if method == "full":
        assert est.kl_ is None
    else:
        assert est.kl_.transform(est.model_[None, :]).shape == (1, est.run_.final_basis.n_components)


def test_fit_errors(setup):
    X, problem = setup
    with pytest.raises(InvalidArgument):
        ASPCAHistoryMatcher().fit(X)
    with pytest.raises(InvalidArgument):
        ASPCAHistoryMatcher(method="bogus").fit(X, problem=problem)
    with pytest.raises(InvalidArgument):
        ASPCAHistoryMatcher().fit(X[:, :10], problem=problem)
    with pytest.raises(InvalidArgument):
        ASPCAHistoryMatcher(stall_window=0).fit(X, problem=problem)


def test_unfitted_objective():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        ASPCAHistoryMatcher().objective_
