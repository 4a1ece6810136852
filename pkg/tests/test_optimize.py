import numpy as np
import pytest

from aspca.adjoint import HistoryMatchingProblem, Observations
from aspca.dataset import Grid, PerturbConfig, add_low_frequency_noise, generate_prior, true_model
from aspca.exceptions import InvalidArgument, SolverFailure
from aspca.forward import SimConfig, simulate
from aspca.optimize import (
    CONVERGED,
    INVALID_START,
    AdaptPolicy,
    CGConfig,
    LineSearchConfig,
    adaptive_minimize,
    cg_minimize,
    full_model_minimize,
    reduced_oracle,
    stall_detector,
)
from aspca.pca import KLExpansion, synthesize


def quadratic(x):
    return float(x @ x), 2 * x


def rosenbrock(x):
    a, b = x
    f = (1 - a) ** 2 + 100 * (b - a * a) ** 2
    g = np.array([-2 * (1 - a) - 400 * a * (b - a * a), 200 * (b - a * a)])
    return f, g


def test_quadratic_converges_fast():
    res = cg_minimize(quadratic, [3.0, -4.0])
    assert res.status == CONVERGED
    assert np.linalg.norm(res.x) < 1e-8
    assert res.n_iter <= 5


@pytest.mark.parametrize("formula", ["polak-ribiere-plus", "fletcher-reeves"])
def test_rosenbrock(formula):
    res = cg_minimize(rosenbrock, [-1.2, 1.0], CGConfig(max_iters=500, beta_formula=formula))
    assert res.f < 1e-6
    np.testing.assert_allclose(res.x, [1, 1], atol=1e-3)
    assert res.n_iter <= 500


def test_zero_gradient_start():
    res = cg_minimize(quadratic, np.zeros(3))
    assert res.status == CONVERGED and res.n_iter == 0 and len(res.history) == 1


def test_invalid_start():
    res = cg_minimize(lambda x: (np.inf, None), np.ones(2))
    assert res.status == INVALID_START and not res.history


def test_failing_oracle_points_are_rejected():
    def f(x):
        if x[0] <= 0:
            raise SolverFailure(0, np.inf)
        return float(x[0] - np.log(x[0])), np.array([1 - 1 / x[0]])

    res = cg_minimize(f, [5.0], CGConfig(linesearch=LineSearchConfig(initial_step=50.0)))
    assert abs(res.x[0] - 1) < 1e-6


def test_restart_every_iteration_is_steepest_descent():
    A = np.diag([1.0, 10.0])
    res = cg_minimize(lambda x: (float(x @ A @ x), 2 * A @ x), [1.0, 1.0], CGConfig(restart_period=1, max_iters=500))
    assert res.status == CONVERGED


def test_objectives_monotone():
    res = cg_minimize(rosenbrock, [-1.2, 1.0], CGConfig(max_iters=300))
    f = [r.objective for r in res.history]
    assert all(b <= a for a, b in zip(f, f[1:]))


def test_stall_detector():
    from aspca.optimize import IterRecord

    check = stall_detector(3, 0.1)
    hist = [IterRecord(k, v, 0.0) for k, v in enumerate([10.0, 9.0, 8.0, 7.5])]
    assert not check(hist)
    hist.append(IterRecord(4, 8.6, 0.0))
    assert check(hist)
    assert not check(hist[:3])


@pytest.mark.parametrize("kwargs", [
    {"strategy": "flip"}, {"stall_window": 0}, {"stall_rel_decrease": 0.0},
    {"max_adaptations": -1}, {"reexpress": "keep"},
])
def test_policy_validation(kwargs):
    with pytest.raises(InvalidArgument):
        AdaptPolicy(**kwargs)


@pytest.mark.parametrize("kwargs", [{"max_iters": 0}, {"beta_formula": "hs"}, {"grad_tol": 0.0}])
def test_cg_config_validation(kwargs):
    with pytest.raises(InvalidArgument):
        CGConfig(**kwargs)


def test_linesearch_from_dict():
    assert CGConfig(linesearch={"c1": 0.01}).linesearch.c1 == 0.01


def test_anchored_flag():
    assert AdaptPolicy(strategy="rotation").anchored
    assert not AdaptPolicy(strategy="swap").anchored
    assert AdaptPolicy(strategy="swap", reexpress="anchor").anchored
    assert not AdaptPolicy(strategy="rotation", reexpress="project").anchored


# -------------------------------------------------------------- small problem

@pytest.fixture(scope="module")
def small():
    grid = Grid(30, np.pi)
    sim = SimConfig(t_end=1.0, n_steps=20, flux_left=1.0)
    prior = generate_prior(true_model(grid), 200, PerturbConfig(0.3, 0.25, seed=1), grid)
    truth = add_low_frequency_noise(true_model(grid), 0.3, 3, seed=2, grid=grid)
    obs = Observations.from_trajectory(simulate(truth, grid, sim), [5, 10, 15, 20])
    basis = KLExpansion().fit(prior.realizations).basis_
    return grid, sim, obs, basis, truth


def _problem(small):
    grid, sim, obs, _, _ = small
    return HistoryMatchingProblem(grid, sim, obs)


CG_SMALL = CGConfig(max_iters=40)


def test_policy_none_matches_cg(small):
    basis = small[3]
    run = adaptive_minimize(_problem(small), basis, None, CG_SMALL, AdaptPolicy())
    ref = cg_minimize(reduced_oracle(_problem(small), basis), np.zeros(basis.n_components), CG_SMALL)
    assert run.final_xi.tobytes() == ref.x.tobytes()
    assert [r.objective for r in run.iterates] == [r.objective for r in ref.history]
    assert not run.adaptation_events and len(run.snapshots) == 1


def test_no_adaptations_allowed(small):
    policy = AdaptPolicy(strategy="swap", max_adaptations=0, stall_window=2)
    run = adaptive_minimize(_problem(small), small[3], None, CG_SMALL, policy)
    assert not run.adaptation_events


@pytest.fixture(scope="module", params=["rotation", "swap", "extension"])
def adaptive_run(request, small):
    policy = AdaptPolicy(strategy=request.param, stall_window=4, max_adaptations=3)
    problem = _problem(small)
    run = adaptive_minimize(problem, small[3], None, CG_SMALL, policy, check_gradients=True)
    return request.param, run, problem


def test_adaptive_run_records(adaptive_run):
    strategy, run, _ = adaptive_run
    assert 1 <= len(run.adaptation_events) <= 3
    assert len(run.snapshots) == len(run.adaptation_events) + 1
    ids = [r.adaptation_id for r in run.iterates]
    assert ids == sorted(ids) and ids[-1] == len(run.adaptation_events)
    its = [r.iteration for r in run.iterates]
    assert all(b >= a for a, b in zip(its, its[1:]))
    for field in ("n_forward", "n_adjoint"):
        counts = [getattr(r, field) for r in run.iterates]
        assert all(b >= a for a, b in zip(counts, counts[1:]))
    assert all(ev.strategy == strategy for ev in run.adaptation_events)


def test_monotone_within_segments(adaptive_run):
    _, run, _ = adaptive_run
    for seg in range(len(run.adaptation_events) + 1):
        f = [r.objective for r in run.iterates if r.adaptation_id == seg]
        assert all(b <= a for a, b in zip(f, f[1:]))


def test_segment_gradients_match_fd(adaptive_run):
    _, run, _ = adaptive_run
    assert len(run.gradient_checks) == len(run.adaptation_events) + 1
    assert max(run.gradient_checks) < 1e-5


def test_restart_continuity(adaptive_run):
    strategy, run, problem = adaptive_run
    for k, ev in enumerate(run.adaptation_events, start=1):
        assert np.isfinite(ev.projection_loss) and ev.projection_loss >= 0
        before = [r.objective for r in run.iterates if r.adaptation_id == k - 1][-1]
        after = [r.objective for r in run.iterates if r.adaptation_id == k][0]
        assert problem.objective(run.snapshots[k - 1]) == before
        if strategy == "rotation":  # anchored: the restart point is the stall point
            assert after == pytest.approx(before, rel=1e-9)
        elif strategy == "extension":  # the old span is kept, so projection loses nothing
            assert ev.projection_loss < 1e-10


def test_final_model_consistent(adaptive_run):
    _, run, _ = adaptive_run
    np.testing.assert_array_equal(run.final_model, synthesize(run.final_basis, run.final_xi))
    assert run.final_objective == run.iterates[-1].objective


def test_full_model_at_truth_converges_immediately(small):
    run = full_model_minimize(_problem(small), small[4], CGConfig())
    assert run.status == CONVERGED
    assert len(run.iterates) == 1 and run.final_objective == 0.0


def test_full_model_monotone(small):
    problem = _problem(small)
    run = full_model_minimize(problem, small[3].mean.copy(), CGConfig(max_iters=30))
    f = run.objectives
    assert np.all(np.diff(f) <= 0)
    assert f[-1] < 0.1 * f[0]
