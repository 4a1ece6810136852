import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aspca.dataset import Grid, PerturbConfig, generate_prior, true_model
from aspca.exceptions import InvalidArgument
from aspca.pca import (
    FullBasis,
    KLExpansion,
    ReducedBasis,
    chain_gradient,
    eigendecompose,
    project,
    synthesize,
    truncate,
    truncation_error,
)


def _diag_basis(values, mean=None):
    values = np.asarray(values, float)
    n = values.size
    return FullBasis(np.eye(n), values, np.zeros(n) if mean is None else mean)


@pytest.fixture(scope="module")
def prior():
    grid = Grid(100, np.pi)
    return generate_prior(true_model(grid), 600, PerturbConfig(0.3, 0.25, seed=1), grid)


@pytest.fixture(scope="module")
def full(prior):
    return eigendecompose(prior.covariance, prior.mean)


def test_identity_covariance():
    b = eigendecompose(np.eye(3), np.zeros(3))
    np.testing.assert_allclose(b.eigenvalues, [1, 1, 1], atol=1e-14)
    np.testing.assert_allclose(b.vectors.T @ b.vectors, np.eye(3), atol=1e-14)


def test_diagonal_covariance():
    b = eigendecompose(np.diag([1.0, 4.0]), np.zeros(2))
    np.testing.assert_allclose(b.eigenvalues, [4, 1])
    np.testing.assert_allclose(np.abs(b.vectors), [[0, 1], [1, 0]], atol=1e-14)


def test_sign_convention():
    b = eigendecompose(np.array([[2.0, -1.0], [-1.0, 2.0]]), np.zeros(2))
    idx = np.argmax(np.abs(b.vectors), axis=0)
    assert np.all(b.vectors[idx, [0, 1]] > 0)


def test_asymmetric_rejected():
    with pytest.raises(InvalidArgument):
        eigendecompose(np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros(2))


def test_indefinite_rejected():
    with pytest.raises(InvalidArgument):
        eigendecompose(np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros(2))


def test_tiny_negative_eigenvalues_clamped():
    K = np.diag([1.0, -1e-13])
    assert eigendecompose(K, np.zeros(2)).eigenvalues[1] == 0.0


def test_prior_reconstruction(prior, full):
    K = full.vectors @ np.diag(full.eigenvalues) @ full.vectors.T
    assert np.linalg.norm(K - prior.covariance) / np.linalg.norm(prior.covariance) < 1e-8
    assert np.max(np.abs(full.vectors.T @ full.vectors - np.eye(100))) < 1e-10
    assert np.all(np.diff(full.eigenvalues) <= 0)
    assert abs(full.energy_fractions.sum() - 1) < 1e-12


def test_matches_snapshot_svd(prior, full):
    X = (prior.realizations - prior.mean) / np.sqrt(prior.n_realizations - 1)
    s = np.linalg.svd(X, compute_uv=False)
    np.testing.assert_allclose(full.eigenvalues[:20], s[:20] ** 2, rtol=1e-9, atol=1e-14 * s[0] ** 2)


@pytest.mark.parametrize("values, tau, expected", [
    ([3.0, 1.0], 0.7, 1),
    ([0.75, 0.2, 0.05], 0.9, 2),
    ([0.75, 0.2, 0.05], 0.95, 2),
    ([0.75, 0.2, 0.05], 0.96, 3),
])
def test_energy_truncation(values, tau, expected):
    assert truncate(_diag_basis(values), energy=tau).n_components == expected


def test_full_energy_keeps_rank():
    b = truncate(_diag_basis([2.0, 1.0, 0.0, 0.0]), energy=1.0)
    assert b.n_components == 2
    assert b.complement.shape[1] == 2
    np.testing.assert_array_equal(b.complement_eigenvalues, [0, 0])


def test_truncation_cap():
    assert truncate(_diag_basis(np.ones(30)), energy=0.99, max_components=15).n_components == 15


def test_fixed_count_and_argument_errors():
    base = _diag_basis([3.0, 2.0, 1.0])
    assert truncate(base, n_components=2).n_components == 2
    for kwargs in ({}, {"energy": 0.9, "n_components": 1}, {"n_components": 4}, {"energy": 0.0}):
        with pytest.raises(InvalidArgument):
            truncate(base, **kwargs)
    with pytest.raises(InvalidArgument):
        truncate(_diag_basis([0.0, 0.0]), energy=0.5)


def test_default_dataset_truncation(full):
    b = truncate(full, energy=0.95, max_components=15)
    frac = full.energy_fractions
    assert frac[: b.n_components].sum() >= 0.95 > frac[: b.n_components - 1].sum()
    assert np.cumsum(frac)[14] > np.cumsum(frac)[13]


def test_synthesize_examples():
    b = ReducedBasis(np.eye(1), np.array([4.0]), np.zeros((1, 0)), np.zeros(0), np.zeros(1))
    np.testing.assert_array_equal(synthesize(b, [1.0]), [2.0])
    np.testing.assert_array_equal(synthesize(b, [0.0]), [0.0])


def test_project_examples(full):
    b = truncate(full, n_components=5)
    np.testing.assert_allclose(project(b, b.mean), 0, atol=1e-14)
    e1 = project(b, b.mean + np.sqrt(b.retained_eigenvalues[0]) * b.retained[:, 0])
    np.testing.assert_allclose(e1, np.eye(5)[0], atol=1e-12)


def test_dimension_mismatch(full):
    b = truncate(full, n_components=5)
    with pytest.raises(InvalidArgument):
        synthesize(b, np.zeros(4))
    with pytest.raises(InvalidArgument):
        project(b, np.zeros(99))
    with pytest.raises(InvalidArgument):
        chain_gradient(b, np.zeros(3))


@settings(max_examples=50, deadline=None)
@given(xi=arrays(float, 6, elements=st.floats(-5, 5)))
def test_project_inverts_synthesize(full, xi):
    b = truncate(full, n_components=6)
    np.testing.assert_allclose(project(b, synthesize(b, xi)), xi, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(m=arrays(float, 100, elements=st.floats(-10, 10)))
def test_synthesize_project_idempotent(full, m):
    b = truncate(full, n_components=4)
    once = synthesize(b, project(b, m))
    np.testing.assert_allclose(synthesize(b, project(b, once)), once, atol=1e-10)


def test_latent_ensemble_covariance(full):
    b = truncate(full, n_components=4)
    xi = np.random.default_rng(7).standard_normal((10_000, 4))
    fields = b.mean + (xi * b.scale) @ b.retained.T
    emp = np.cov(fields, rowvar=False)
    target = b.retained @ np.diag(b.retained_eigenvalues) @ b.retained.T
    assert np.linalg.norm(emp - target) / np.linalg.norm(target) < 0.05


def test_chain_gradient_examples(full):
    b = truncate(full, n_components=3)
    np.testing.assert_array_equal(chain_gradient(b, np.zeros(100)), 0)
    unit = ReducedBasis(b.retained, np.ones(3), b.complement, b.complement_eigenvalues, b.mean)
    np.testing.assert_allclose(chain_gradient(unit, b.retained[:, 0]), [1, 0, 0], atol=1e-12)


def test_chain_gradient_matches_fd(full):
    b = truncate(full, n_components=5)
    A = np.random.default_rng(3).normal(size=(100, 100)) / 10

    def S(m):
        return float(np.sum(np.sin(A @ m)) + 0.5 * m @ m)

    def grad_S(m):
        return A.T @ np.cos(A @ m) + m

    xi = np.random.default_rng(4).normal(size=5)
    g = chain_gradient(b, grad_S(synthesize(b, xi)))
    h = 1e-6
    fd = np.array([(S(synthesize(b, xi + h * e)) - S(synthesize(b, xi - h * e))) / (2 * h) for e in np.eye(5)])
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5


@pytest.mark.parametrize("N", [5, 10, 15])
def test_kl_truncation_error_identity(prior, full, N):
    b = truncate(full, n_components=N)
    expected = full.eigenvalues[N:].sum()
    assert abs(truncation_error(b, prior.realizations) - expected) / expected < 0.01


def test_basis_json_roundtrip(tmp_path, full):
    b = truncate(full, n_components=4)
    b.to_json(tmp_path / "b.json")
    back = ReducedBasis.from_json(tmp_path / "b.json")
    np.testing.assert_array_equal(back.retained, b.retained)
    assert back.complement.shape == (100, 0)
    b.to_json(tmp_path / "full.json", include_complement=True)
    back = ReducedBasis.from_json(tmp_path / "full.json")
    np.testing.assert_array_equal(back.complement, b.complement)
    assert back.fingerprint() == b.fingerprint()


def test_reduced_basis_rejects_zero_eigenvalue():
    with pytest.raises(InvalidArgument):
        ReducedBasis(np.eye(2), np.array([1.0, 0.0]), np.zeros((2, 0)), np.zeros(0), np.zeros(2))


class TestKLExpansion:
    def test_fit_transform_roundtrip(self, prior):
        kl = KLExpansion().fit(prior.realizations)
        assert kl.basis_.n_components == 4
        Z = kl.transform(prior.realizations[:5])
        assert Z.shape == (5, 4)
        recon = kl.inverse_transform(Z)
        np.testing.assert_allclose(kl.transform(recon), Z, atol=1e-10)

    def test_attributes(self, prior):
        kl = KLExpansion(n_components=6, energy=None).fit(prior.realizations)
        assert kl.components_.shape == (6, 100)
        assert kl.explained_variance_.shape == (6,)
        assert kl.explained_variance_ratio_.sum() < 1
        assert kl.n_features_in_ == 100

    def test_params_roundtrip(self):
        kl = KLExpansion(energy=0.9, max_components=7)
        assert kl.get_params() == {"energy": 0.9, "n_components": None, "max_components": 7}
        assert kl.set_params(energy=0.8).energy == 0.8

    def test_unfitted_transform(self):
        from sklearn.exceptions import NotFittedError
        with pytest.raises(NotFittedError):
            KLExpansion().transform(np.zeros((1, 3)))

    def test_feature_mismatch(self, prior):
        kl = KLExpansion().fit(prior.realizations)
        with pytest.raises(InvalidArgument):
            kl.transform(np.zeros((2, 50)))
