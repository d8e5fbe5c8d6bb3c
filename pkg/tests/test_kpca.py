import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import silhouette_score

from rfkernels.forest import cross_gram, fit_forest, gram
from rfkernels.kpca import (
    kpca_fit, kpca_project, linear_gram, linear_probe, rbf_gram, relative_improvement, silhouette,
)
from rfkernels.trees import GrowConfig

from conftest import GROWERS, random_dataset


def classical_pca_scores(X, q):
    Xc = X - X.mean(axis=0)
    U, S, _ = np.linalg.svd(Xc, full_matrices=False)
    return U[:, :q] * S[:q]


def align(A, B):
    signs = np.sign(np.sum(A * B, axis=0))
    return B * signs


@pytest.mark.parametrize("seed", range(10))
def test_linear_kernel_matches_pca(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((60, 4)) @ rng.standard_normal((4, 4))
    model = kpca_fit(linear_gram(X), q=3)
    ref = classical_pca_scores(X, 3)
    assert np.max(np.abs(model.train_scores - align(model.train_scores, ref))) < 1e-8


def test_projection_matches_feature_space():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((50, 3))
    T = rng.standard_normal((20, 3))
    model = kpca_fit(linear_gram(X), q=2)
    got = kpca_project(model, linear_gram(T, X))
    # naive construction: principal axes in feature space, centred with train mean
    mu = X.mean(axis=0)
    _, _, Vt = np.linalg.svd(X - mu, full_matrices=False)
    ref = (T - mu) @ Vt[:2].T
    assert np.max(np.abs(got - align(got, ref))) < 1e-8


def test_projecting_train_block_reproduces_scores(grower):
    data = random_dataset(60, 3, seed=2)
    f = fit_forest(data, None, grower, 10, seed=1)
    bundle = gram(f, None, "kP")
    model = kpca_fit(bundle, q=2)
    again = kpca_project(model, cross_gram(f, data.X, data.X, "kP"))
    assert np.max(np.abs(again - model.train_scores)) < 1e-10
    assert model.kernel_tag == "kP"


def test_train_scores_centred_and_uncorrelated():
    data = random_dataset(80, 3, seed=5)
    f = fit_forest(data, None, GROWERS["extra_trees"], 10, seed=1)
    model = kpca_fit(gram(f, None, "k0"), q=3)
    S = model.train_scores
    assert np.all(np.abs(S.mean(axis=0)) < 1e-10)
    C = S.T @ S
    off = C - np.diag(np.diag(C))
    assert np.max(np.abs(off)) < 1e-8 * model.eigenvalues[0]
    assert np.allclose(S.var(axis=0), model.eigenvalues / 80)
    assert np.all(np.diff(model.eigenvalues) <= 0)


def test_rank_one_gram_truncates():
    data = random_dataset(30, 2)
    f = fit_forest(data, None, GrowConfig("uniform", max_depth=0), 2, seed=0)
    with pytest.warns(RuntimeWarning):
        model = kpca_fit(gram(f, None, "kP"), q=2)
    assert model.q == 0
    assert kpca_project(model, np.ones((4, 30))).shape == (4, 0)


def test_duplicates_share_scores():
    rng = np.random.default_rng(1)
    X = rng.random((20, 2))
    X[5] = X[11]
    model = kpca_fit(rbf_gram(X), q=2)
    assert np.allclose(model.train_scores[5], model.train_scores[11])


def test_permuting_test_rows():
    rng = np.random.default_rng(2)
    X, T = rng.random((30, 2)), rng.random((10, 2))
    model = kpca_fit(rbf_gram(X), q=2)
    perm = rng.permutation(10)
    assert np.allclose(kpca_project(model, rbf_gram(T, X))[perm], kpca_project(model, rbf_gram(T[perm], X)))


def test_project_shape_mismatch():
    model = kpca_fit(linear_gram(np.random.default_rng(0).random((10, 2))), q=1)
    with pytest.raises(ValueError):
        kpca_project(model, np.ones((3, 9)))


def test_rbf_default_gamma():
    A = np.array([[0.0, 0.0, 0.0, 0.0]])
    B = np.array([[1.0, 1.0, 0.0, 0.0]])
    assert rbf_gram(A, B)[0, 0] == pytest.approx(np.exp(-0.5))


@given(seed=st.integers(0, 10_000), k=st.integers(2, 4))
def test_silhouette_matches_reference(seed, k):
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((60, 2))
    labels = rng.integers(0, k, 60)
    if np.unique(labels).size < 2:
        labels[:2] = [0, 1]
    assert silhouette(S, labels) == pytest.approx(silhouette_score(S, labels), abs=1e-12)


def test_silhouette_separated_clusters():
    rng = np.random.default_rng(0)
    S = np.vstack([rng.normal(0, 1, (50, 2)), rng.normal(100, 1, (50, 2))])
    assert silhouette(S, np.r_[np.zeros(50), np.ones(50)]) >= 0.95


def test_silhouette_shuffled_labels():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        S = rng.standard_normal((500, 2))
        assert abs(silhouette(S, rng.integers(0, 2, 500))) < 0.1


def test_silhouette_degenerate():
    S = np.zeros((6, 2))
    assert silhouette(S, [0, 0, 1, 1, 2, 2]) == 0.0
    assert silhouette(np.array([[0.0], [1.0], [1.1]]), [0, 1, 1]) == pytest.approx(silhouette_score(
        np.array([[0.0], [1.0], [1.1]]), [0, 1, 1]))
    with pytest.raises(ValueError):
        silhouette(S, np.zeros(6))


def test_probe_separable():
    rng = np.random.default_rng(1)
    Xtr = np.vstack([rng.normal(-3, 0.5, (40, 2)), rng.normal(3, 0.5, (40, 2))])
    ytr = np.r_[np.zeros(40), np.ones(40)]
    Xte = np.vstack([rng.normal(-3, 0.5, (20, 2)), rng.normal(3, 0.5, (20, 2))])
    yte = np.r_[np.zeros(20), np.ones(20)]
    rep = linear_probe(Xtr, ytr, Xte, yte, "classify", test_silhouette=True)
    assert rep.probe_metric == 1.0
    assert rep.silhouette > 0.8


def test_probe_multiclass_labels():
    rng = np.random.default_rng(4)
    centres = np.array([[0, 0], [5, 0], [0, 5]])
    lab = rng.integers(0, 3, 150)
    X = centres[lab] + rng.normal(0, 0.4, (150, 2))
    names = np.array(["a", "b", "c"])[lab]
    rep = linear_probe(X[:100], names[:100], X[100:], names[100:], "classify")
    assert rep.probe_metric == 1.0


def test_probe_ols_matches_normal_equations():
    rng = np.random.default_rng(2)
    Xtr, Xte = rng.standard_normal((80, 3)), rng.standard_normal((30, 3))
    ytr = Xtr @ [1.0, -2.0, 0.5] + 0.3 + rng.normal(0, 0.1, 80)
    yte = Xte @ [1.0, -2.0, 0.5] + 0.3
    A = np.column_stack([np.ones(80), Xtr])
    coef = np.linalg.solve(A.T @ A, A.T @ ytr)
    mse = np.mean((np.column_stack([np.ones(30), Xte]) @ coef - yte) ** 2)
    rep = linear_probe(Xtr, ytr, Xte, yte, "regress", baseline_mse=mse)
    assert rep.probe_metric == pytest.approx(mse, rel=1e-8)
    assert rep.relative_improvement == pytest.approx(0.0, abs=1e-6)


def test_probe_zero_variance_scores():
    Xtr, Xte = np.ones((10, 2)), np.ones((5, 2))
    ytr = np.arange(10.0)
    rep = linear_probe(Xtr, ytr, Xte, np.full(5, 4.5), "regress")
    assert rep.probe_metric == pytest.approx(0.0, abs=1e-20)


def test_relative_improvement():
    assert relative_improvement(2.0, 2.0) == 0.0
    assert relative_improvement(1.0, 2.0) == -50.0
    with pytest.raises(ValueError):
        linear_probe(np.ones((3, 1)), [0, 1, 0], np.ones((2, 1)), [0, 1], "cluster")
