import numpy as np
import pytest

from recycled_sts import (
    InvalidArgumentError,
    NoiseSpec,
    SimDesign,
    diagnose_clt,
    gen_dataset,
    run_coverage_experiment,
    run_mse_experiment,
    sample_noise,
)
from recycled_sts.simulate import NOISE_KINDS, replicate_rng, truncated_support


@pytest.mark.parametrize("kind", NOISE_KINDS)
def test_noise_moments(kind):
    z = sample_noise(NoiseSpec(kind, 0.7), 200_000, np.random.default_rng(1))
    se_mean = z.std() / np.sqrt(z.size)
    se_var = np.std(z**2) / np.sqrt(z.size)
    assert abs(z.mean()) <= 3 * se_mean
    assert abs(z.var() - 0.49) <= 3 * se_var


def test_truncated_normal_support():
    z = sample_noise(NoiseSpec("truncated_normal", 2.0), 100_000, np.random.default_rng(2))
    assert np.max(np.abs(z)) <= truncated_support(2.0)


@pytest.mark.parametrize("scale", [0.0, -1.0])
def test_noise_scale_must_be_positive(scale):
    with pytest.raises(InvalidArgumentError):
        sample_noise(NoiseSpec("normal", scale), 10, np.random.default_rng(0))


def test_unknown_noise_kind():
    with pytest.raises(InvalidArgumentError):
        NoiseSpec("cauchy", 1.0)


def test_noiseless_design_reproduces_the_curve():
    d = SimDesign(N=4, n=9, sigma=0.0, lam=0.0)
    data, truth = gen_dataset(d, replicate_rng(1, 4, 9, 0))
    assert np.all(truth.b == 0)
    for ind in data.individuals:
        np.testing.assert_array_equal(ind.y, d.spec.eval(np.asarray(d.theta0), ind.x))
        assert np.all((ind.x >= 0) & (ind.x <= 8))


def test_dataset_streams_are_keyed_by_cell_and_replicate():
    d = SimDesign(N=5, n=10)
    a, _ = gen_dataset(d, replicate_rng(7, 5, 10, 3))
    b, _ = gen_dataset(d, replicate_rng(7, 5, 10, 3))
    c, _ = gen_dataset(d, replicate_rng(7, 5, 10, 4))
    np.testing.assert_array_equal(a.flat[1], b.flat[1])
    assert not np.array_equal(a.flat[1], c.flat[1])


def test_design_validation():
    with pytest.raises(InvalidArgumentError):
        SimDesign(theta0=(1.0, 2.0))
    with pytest.raises(InvalidArgumentError):
        SimDesign(N=1)
    with pytest.raises(InvalidArgumentError):
        SimDesign(n=4)
    with pytest.raises(InvalidArgumentError):
        SimDesign(sigma=-0.1)


def test_mse_report_is_reproducible_and_thread_invariant():
    base = SimDesign(M_rep=20, seed=3)
    a = run_mse_experiment([(10, 15), (15, 10)], base, threads=1)
    b = run_mse_experiment([(10, 15), (15, 10)], base, threads=3)
    assert a.rows() == b.rows()
    assert a.meta["config_hash"] == b.meta["config_hash"]
    assert a.meta["seed"] == 3 and a.meta["M_rep"] == 20
    assert [c.N for c in a.cells] == [10, 15]


def test_cell_is_independent_of_the_rest_of_the_grid():
    base = SimDesign(M_rep=10, seed=4)
    alone = run_mse_experiment([(12, 20)], base).cell(12, 20)
    in_grid = run_mse_experiment([(8, 8), (12, 20)], base).cell(12, 20)
    assert alone.mse == in_grid.mse


def test_heavy_drop_cells_are_flagged():
    rep = run_mse_experiment([(10, 6)], SimDesign(M_rep=10, seed=1))
    cell = rep.cells[0]
    assert cell.flagged == (cell.drop_rate > 0.2)
    assert cell.drop_rate > 0.2


def test_asymptotic_coverage_counts_and_length():
    base = SimDesign(model="singleexp1", theta0=(0.8,), sigma=0.5, lam=0.5, M_rep=200)
    rep = run_coverage_experiment([(50, 50)], base)
    c = rep.cells[0]
    assert 0.9 <= c.coverage <= 0.99
    assert c.mean_ci_length == pytest.approx(2 * 1.959964 * 0.5 / np.sqrt(50), rel=0.3)


def test_coverage_needs_scalar_model():
    with pytest.raises(InvalidArgumentError):
        run_coverage_experiment([(10, 10)], SimDesign(M_rep=5))


def test_clt_rejects_zero_lambda():
    d = SimDesign(model="singleexp1", theta0=(0.8,), sigma=0.0, lam=0.0)
    with pytest.raises(InvalidArgumentError):
        diagnose_clt(d, R=10)


@pytest.mark.slow
def test_mse_decreases_along_the_diagonal():
    base = SimDesign(sigma=0.1, lam=0.1, M_rep=500, seed=11)
    rep = run_mse_experiment([(15, 15), (30, 30), (50, 50)], base)
    m = [c.mse for c in rep.cells]
    assert m[0] > m[1] > m[2]


@pytest.mark.slow
def test_recycled_coverage_near_nominal():
    from recycled_sts import RecycleConfig
    base = SimDesign(model="singleexp1", theta0=(0.8,), sigma=0.5, lam=0.5, M_rep=100, seed=5)
    rep = run_coverage_experiment([(50, 50)], base, mode="recycled", cfg=RecycleConfig(B=200))
    assert 0.85 <= rep.cells[0].coverage <= 1.0
