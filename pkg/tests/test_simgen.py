"""Scenario kernels, data generation, relative errors, benchmark harness."""

import numpy as np
import pytest

from funfactor.posterior import MarginalCovariance, eigen_decompose, marginalize, KernelGrid
from funfactor.simgen import (
    FitConfig,
    ScenarioSpec,
    empirical_estimates,
    generate,
    relative_error,
    run_experiment,
    true_kernel,
    true_mean,
    uniform_cubic_basis,
)


# ---------------------------------------------------------------------------
# analytic kernels and means


def test_case3_kernel_values():
    spec = ScenarioSpec(case_id=3)
    assert true_kernel(spec, 0.4, 0.7, 0.4, 0.7) == pytest.approx(1.0, abs=1e-15)
    assert true_kernel(spec, 0.0, 0.0, 1.0, 0.0) == pytest.approx(
        np.exp(-1.0), abs=1e-12)


def test_case1_leading_eigenpair_matches_reference():
    # analytic spectrum of the rank-2 sine kernel:
    # lambda_j = 1/(j^2 pi^2), psi_j = sqrt(2) sin(j pi s)
    spec = ScenarioSpec(case_id=1, n_s=201)
    s = np.linspace(0, 1, 201)
    KS = true_kernel(spec, s[:, None], 0.0, s[None, :], 0.0)
    KS = KS / spec.matern_sigma2  # strip the t-kernel factor K_T(0,0) = sigma^2
    summ = eigen_decompose(MarginalCovariance(axis="S", points=s, matrix=KS), 2)
    assert summ.eigenvalues[0] == pytest.approx(1.0 / np.pi**2, rel=1e-3)
    psi = summ.eigenfunctions[:, 0]
    ref = np.sqrt(2) * np.sin(np.pi * s)
    if psi @ ref < 0:
        psi = -psi
    np.testing.assert_allclose(psi, ref, atol=2e-2)


def test_mean_values():
    assert true_mean(ScenarioSpec(case_id=2), 0.5, 0.5) == pytest.approx(5.0)
    assert true_mean(ScenarioSpec(case_id=3), 0.5, 0.5) == pytest.approx(np.sqrt(2))
    assert true_mean(ScenarioSpec(case_id=1), 0.0, 0.0) == pytest.approx(0.0)


def test_domain_errors():
    spec = ScenarioSpec(case_id=1)
    with pytest.raises(ValueError, match="0, 1"):
        true_kernel(spec, -0.1, 0.5, 0.5, 0.5)
    with pytest.raises(ValueError, match="0, 1"):
        true_mean(spec, 0.5, 1.4)
    with pytest.raises(ValueError):
        ScenarioSpec(case_id=4)


def test_case12_marginal_factorization():
    # product structure: marginalizing the pair gram recovers the s-kernel
    # scaled by the average diagonal of the t-kernel
    for case in (1, 2):
        spec = ScenarioSpec(case_id=case, n_s=6, n_t=7)
        s, t = spec.s_grid, spec.t_grid
        from funfactor.simgen import _pair_gram, _ks_case12, _kt_case1, _kt_case2
        gram = _pair_gram(spec)
        kg = KernelGrid(s_points=s, t_points=t, gram=gram)
        KS0 = _ks_case12(spec, s[:, None], s[None, :])
        KT0 = (_kt_case1(spec, t[:, None], t[None, :]) if case == 1
               else _kt_case2(spec, t[:, None], t[None, :]))
        got = marginalize(kg, "S").matrix
        np.testing.assert_allclose(got, KS0 * np.mean(np.diag(KT0)), atol=1e-10)


# ---------------------------------------------------------------------------
# generation


def test_generate_degenerate_noise_free(rng):
    spec = ScenarioSpec(case_id=1, n_subjects=3, n_s=4, n_t=5,
                        noise_var=0.0, matern_sigma2=1e-30)
    data, truth = generate(spec, rng)
    for rec in data.subjects:
        np.testing.assert_allclose(rec.y, truth.mean, atol=1e-10)


def test_generate_monte_carlo_covariance(rng):
    spec = ScenarioSpec(case_id=3, n_subjects=100_000, n_s=2, n_t=2,
                        noise_var=0.0)
    data, truth = generate(spec, rng)
    flat = data.Y.reshape(data.n, -1)
    sample_cov = np.cov(flat, rowvar=False)
    G = truth.gram
    se = np.sqrt((np.outer(np.diag(G), np.diag(G)) + G**2) / data.n)
    assert np.all(np.abs(sample_cov - G) < 3 * se)


def test_generate_seed_determinism():
    spec = ScenarioSpec(case_id=2, n_subjects=4, n_s=3, n_t=4)
    a, _ = generate(spec, np.random.Generator(np.random.Philox(9)))
    b, _ = generate(spec, np.random.Generator(np.random.Philox(9)))
    for ra, rb in zip(a.subjects, b.subjects):
        np.testing.assert_array_equal(ra.y, rb.y)


def test_generate_intercept_covariate(rng):
    data, _ = generate(ScenarioSpec(case_id=1, n_subjects=2, n_s=3, n_t=3), rng)
    assert data.d == 1
    np.testing.assert_array_equal(data.X, np.ones((2, 1)))


def test_generate_truth_eigenfunctions_unit_norm(rng):
    spec = ScenarioSpec(case_id=1, n_subjects=2)
    data, truth = generate(spec, rng)
    h_s = 1.0 / (spec.n_s - 1)
    h_t = 1.0 / (spec.n_t - 1)
    np.testing.assert_allclose(h_s * np.sum(truth.eigen_s**2, axis=0), 1.0,
                               atol=1e-8)
    np.testing.assert_allclose(h_t * np.sum(truth.eigen_t**2, axis=0), 1.0,
                               atol=1e-8)


def test_generate_noise_independence(rng):
    # kernel negligible: surfaces are mean + independent noise fields
    spec = ScenarioSpec(case_id=1, n_subjects=400, n_s=3, n_t=3,
                        noise_var=1.0, matern_sigma2=1e-30)
    data, truth = generate(spec, rng)
    resid = data.Y.reshape(data.n, -1) - truth.mean.ravel()
    corr = np.corrcoef(resid, rowvar=False)
    off = corr[~np.eye(9, dtype=bool)]
    assert np.abs(off).max() < 4.5 / np.sqrt(data.n)


def test_projection_dims_plants_spline_truth(rng):
    spec = ScenarioSpec(case_id=2, n_subjects=2, n_s=12, n_t=12,
                        projection_dims=(6, 6))
    data, truth = generate(spec, rng)
    from funfactor.splines import build_basis, tensor_design
    B1 = build_basis(uniform_cubic_basis(6), data.s_grid)
    D = tensor_design(B1, build_basis(uniform_cubic_basis(6), data.t_grid))
    # the planted gram lies in the tensor-spline span on both sides
    P = D @ np.linalg.solve(D.T @ D, D.T)
    np.testing.assert_allclose(P @ truth.gram @ P.T, truth.gram, atol=1e-8)
    np.testing.assert_allclose(P @ truth.mean.ravel(), truth.mean.ravel(),
                               atol=1e-8)


# ---------------------------------------------------------------------------
# relative error


def test_relative_error_exactness(rng):
    f = rng.normal(size=(4, 5)) + 2.0
    assert relative_error(f, f) == 0.0
    assert relative_error(2 * f, f) == 1.0


def test_relative_error_constant_offset():
    truth = np.ones((10, 10))
    est = truth + 0.3
    assert relative_error(est, truth) == pytest.approx(0.09, abs=1e-15)


def test_relative_error_scale_covariance(rng):
    f = rng.normal(size=20)
    e = f + rng.normal(size=20) * 0.1
    assert relative_error(2.0 * e, 2.0 * f) == relative_error(e, f)
    assert relative_error(3.0 * e, 3.0 * f) == pytest.approx(
        relative_error(e, f), rel=1e-14)


def test_relative_error_errors(rng):
    with pytest.raises(ValueError, match="zero norm"):
        relative_error(np.ones(3), np.zeros(3))
    with pytest.raises(ValueError, match="shape"):
        relative_error(np.ones(3), np.ones(4))


# ---------------------------------------------------------------------------
# empirical estimates


def test_empirical_two_subject_hand_computation():
    u = np.array([[1.0, -2.0], [0.5, 3.0]])
    from funfactor.model import FunctionalDataset, SubjectRecord
    subs = [SubjectRecord(y=u, mask=np.ones((2, 2), bool), x=[]),
            SubjectRecord(y=-u, mask=np.ones((2, 2), bool), x=[])]
    data = FunctionalDataset(subjects=subs, s_grid=[0, 1], t_grid=[0, 1], d=0)
    mean, gram = empirical_estimates(data)
    np.testing.assert_allclose(mean, 0.0, atol=0)
    # deviations are +-u around the zero mean; n - 1 = 1 in the denominator
    np.testing.assert_allclose(gram, 2.0 * np.outer(u.ravel(), u.ravel()),
                               atol=1e-14)


def test_empirical_identical_subjects_zero_cov(rng):
    from funfactor.model import FunctionalDataset, SubjectRecord
    y = rng.normal(size=(2, 3))
    subs = [SubjectRecord(y=y, mask=np.ones((2, 3), bool), x=[]) for _ in range(4)]
    data = FunctionalDataset(subjects=subs, s_grid=[0, 1], t_grid=[0, 0.5, 1], d=0)
    mean, gram = empirical_estimates(data)
    np.testing.assert_allclose(mean, y, atol=0)
    np.testing.assert_allclose(gram, 0.0, atol=1e-14)


def test_empirical_matches_numpy_cov(rng):
    from funfactor.model import FunctionalDataset, SubjectRecord
    ys = [rng.normal(size=(2, 2)) for _ in range(3)]
    subs = [SubjectRecord(y=y, mask=np.ones((2, 2), bool), x=[]) for y in ys]
    data = FunctionalDataset(subjects=subs, s_grid=[0, 1], t_grid=[0, 1], d=0)
    mean, gram = empirical_estimates(data)
    flat = np.array([y.ravel() for y in ys])
    np.testing.assert_allclose(mean.ravel(), flat.mean(axis=0), atol=1e-15)
    np.testing.assert_allclose(gram, np.cov(flat, rowvar=False), atol=1e-14)


def test_empirical_mean_unbiased(rng):
    spec = ScenarioSpec(case_id=3, n_subjects=3, n_s=2, n_t=2, noise_var=0.05)
    total = np.zeros((2, 2))
    reps = 10_000
    for _ in range(reps):
        data, truth = generate(spec, rng)
        mean, _ = empirical_estimates(data)
        total += mean
    avg = total / reps
    # per-cell SE of the average of replicated empirical means
    cell_var = (np.diag(truth.gram).reshape(2, 2) + spec.noise_var) / spec.n_subjects
    se = np.sqrt(cell_var / reps)
    assert np.all(np.abs(avg - truth.mean) < 4 * se)


def test_empirical_requirements(rng):
    from funfactor.model import FunctionalDataset, SubjectRecord
    y = np.zeros((2, 2))
    rec = SubjectRecord(y=y, mask=np.ones((2, 2), bool), x=[])
    data = FunctionalDataset(subjects=[rec], s_grid=[0, 1], t_grid=[0, 1], d=0)
    with pytest.raises(ValueError, match="at least 2"):
        empirical_estimates(data)
    mask = np.ones((2, 2), bool); mask[0, 0] = False
    subs = [rec, SubjectRecord(y=y, mask=mask, x=[])]
    data = FunctionalDataset(subjects=subs, s_grid=[0, 1], t_grid=[0, 1], d=0)
    with pytest.raises(ValueError, match="complete"):
        empirical_estimates(data)


# ---------------------------------------------------------------------------
# experiment harness


def test_uniform_cubic_basis_dims():
    for p in (4, 5, 10, 15):
        assert uniform_cubic_basis(p).dim == p
    with pytest.raises(ValueError):
        uniform_cubic_basis(3)


def test_run_experiment_single_rep_quantiles(rng):
    spec = ScenarioSpec(case_id=3, n_subjects=5, n_s=4, n_t=4)
    report = run_experiment(spec, FitConfig(), n_replications=1, seed=4,
                            estimators=("empirical",))
    for row in report.rows():
        assert row["median"] == row["q10"] == row["q90"]
        assert row["estimator"] == "empirical"
    assert not report.failures


def test_run_experiment_empirical_case3_band():
    # reference empirical covariance RE for this design is about 0.067
    spec = ScenarioSpec(case_id=3, n_subjects=30)
    report = run_experiment(spec, FitConfig(), n_replications=50, seed=31,
                            estimators=("empirical",))
    med = report.median("K", "empirical")
    assert 0.03 < med < 0.15, med


def test_run_experiment_determinism(rng):
    spec = ScenarioSpec(case_id=3, n_subjects=4, n_s=3, n_t=3)
    r1 = run_experiment(spec, FitConfig(), 2, seed=8, estimators=("empirical",))
    r2 = run_experiment(spec, FitConfig(), 2, seed=8, estimators=("empirical",))
    for key in r1.values:
        assert r1.values[key] == r2.values[key]


def test_generated_gram_symmetric_psd(rng):
    for case in (1, 2, 3):
        spec = ScenarioSpec(case_id=case, n_subjects=2, n_s=5, n_t=6)
        _, truth = generate(spec, rng)
        np.testing.assert_allclose(truth.gram, truth.gram.T, atol=1e-10)
        vals = np.linalg.eigvalsh(truth.gram)
        assert vals.min() >= -1e-8 * max(vals.max(), 1e-300)
