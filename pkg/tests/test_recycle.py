import numpy as np
import pytest

from recycled_sts import (
    InvalidArgumentError,
    RecycleConfig,
    build_ci,
    fit_sts,
    get_model,
    ks_to_normal,
    recycle_bootstrap,
    recycle_once,
)
from recycled_sts.recycle import RecycleRun, replicate_weights
from recycled_sts.rng import child_key


@pytest.fixture
def linear_fit(linear_data):
    model = get_model("linear1")
    return model, linear_data, fit_sts(model, linear_data, np.array([1.0]))


def test_unit_weights_reproduce_the_estimate(linear_fit):
    model, data, fit = linear_fit
    cfg = RecycleConfig(B=100, inner_scheme="unit", outer_scheme="unit")
    run = recycle_bootstrap(model, data, fit, cfg, 11)
    assert run.drop_count == 0
    assert np.all(run.replicates == fit.theta_sts)
    np.testing.assert_array_equal(run.intervals, np.column_stack([fit.theta_sts, fit.theta_sts]))


def test_unit_outer_weights_give_mean_of_refits(linear_fit):
    model, data, fit = linear_fit
    cfg = RecycleConfig(B=100, inner_scheme="exponential", outer_scheme="unit")
    key = 2024
    w, u = replicate_weights(model, data, fit, cfg, key)
    assert all(v == 1.0 for v in u.values())
    by_id = {d.id: d for d in data.individuals}
    refits = [np.sum(w[i] * by_id[i].x * by_id[i].y) / np.sum(w[i] * by_id[i].x ** 2) for i in w]
    assert recycle_once(model, data, fit, cfg, key)[0] == pytest.approx(np.mean(refits), rel=1e-12)


def test_replicate_matches_closed_form_weighted_ls(linear_fit):
    model, data, fit = linear_fit
    cfg = RecycleConfig(B=100, inner_scheme="dirichlet", outer_scheme="exponential")
    run_key = 99
    run = recycle_bootstrap(model, data, fit, cfg, run_key)
    by_id = {d.id: d for d in data.individuals}
    for b in (0, 17, 63):
        rep_key = int(child_key(np.uint64(run_key), np.uint64(b)))
        w, u = replicate_weights(model, data, fit, cfg, rep_key)
        star = sum(u[i] * np.sum(w[i] * by_id[i].x * by_id[i].y) / np.sum(w[i] * by_id[i].x ** 2)
                   for i in w) / len(w)
        assert run.replicates[b, 0] == pytest.approx(star, rel=1e-12)
        assert run.replicates[b, 0] == recycle_once(model, data, fit, cfg, rep_key)[0]


def test_same_seed_is_bitwise_reproducible_and_thread_invariant(linear_fit):
    model, data, fit = linear_fit
    cfg = RecycleConfig(B=150, inner_scheme="multinomial", outer_scheme="multinomial")
    a = recycle_bootstrap(model, data, fit, cfg, 5, threads=1)
    b = recycle_bootstrap(model, data, fit, cfg, 5, threads=1)
    c = recycle_bootstrap(model, data, fit, cfg, 5, threads=3)
    np.testing.assert_array_equal(a.replicates, b.replicates)
    np.testing.assert_array_equal(a.replicates, c.replicates)
    np.testing.assert_array_equal(a.intervals, c.intervals)
    d = recycle_bootstrap(model, data, fit, cfg, 6)
    assert not np.array_equal(a.replicates, d.replicates)


def test_threads_from_environment(linear_fit, monkeypatch):
    model, data, fit = linear_fit
    cfg = RecycleConfig(B=120)
    serial = recycle_bootstrap(model, data, fit, cfg, 8)
    monkeypatch.setenv("RECYCLED_STS_THREADS", "4")
    np.testing.assert_array_equal(serial.replicates,
                                  recycle_bootstrap(model, data, fit, cfg, 8).replicates)


def _run(reps, theta=0.0, tau=1.0, N=25, level=0.9, method="basic_studentized"):
    reps = np.asarray(reps, dtype=float).reshape(-1, 1)
    return RecycleRun(replicates=reps, theta_sts=np.array([theta]), tau_N=tau, N=N,
                      intervals=np.full((1, 2), np.nan), drop_count=0, B=reps.shape[0],
                      ci_level=level, ci_method=method)


def test_interval_formulas():
    rng = np.random.default_rng(4)
    reps = 2.0 + rng.gamma(2.0, 0.3, size=1000)
    run = _run(reps, theta=2.1, tau=0.8)
    z = (reps - 2.1) / 0.8
    q_lo, q_hi = np.quantile(z, [0.05, 0.95])
    lo, hi = build_ci(run)[0]
    assert (lo, hi) == pytest.approx((2.1 - q_hi, 2.1 - q_lo))
    lo, hi = build_ci(run, method="percentile")[0]
    assert (lo, hi) == pytest.approx((2.1 + q_lo, 2.1 + q_hi))
    assert lo <= hi


def test_interval_needs_enough_replicates():
    with pytest.raises(InvalidArgumentError):
        build_ci(_run(np.zeros(50)))


def test_ks_to_normal_on_exactly_normal_replicates():
    rng = np.random.default_rng(0)
    N, lam, tau = 40, 0.7, 0.9
    reps = 1.0 + rng.standard_normal(100_000) * lam * tau / np.sqrt(N)
    assert ks_to_normal(_run(reps, theta=1.0, tau=tau, N=N), lam) <= 0.01


def test_ks_rejects_nonpositive_lambda():
    with pytest.raises(InvalidArgumentError):
        ks_to_normal(_run(np.zeros(200)), 0.0)


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        RecycleConfig(B=99)
    with pytest.raises(InvalidArgumentError):
        RecycleConfig(ci_level=1.0)
    with pytest.raises(InvalidArgumentError):
        RecycleConfig(ci_method="bca")
    with pytest.raises(InvalidArgumentError):
        RecycleConfig(inner_scheme="foo")


def test_failed_refits_are_retried_then_dropped():
    # biexp refits on 6 points with multinomial weights often lose an
    # identifying point; some replicates need fresh draws
    from recycled_sts.simulate import SimDesign, gen_dataset, replicate_rng
    d = SimDesign(N=10, n=6, sigma=0.1, lam=0.1)
    data, _ = gen_dataset(d, replicate_rng(3, 10, 6, 0))
    model = get_model("biexp4")
    fit = fit_sts(model, data, d.inits(), covariance=False)
    cfg = RecycleConfig(B=100, inner_scheme="multinomial", outer_scheme="multinomial")
    run = recycle_bootstrap(model, data, fit, cfg, 1)
    assert run.retries > 0
    assert run.replicates.shape[0] + run.drop_count == 100
    assert run.unreliable == (run.drop_count > 20)
    none = recycle_bootstrap(model, data, fit,
                             RecycleConfig(B=100, inner_scheme="multinomial",
                                           outer_scheme="multinomial", max_retries=0), 1)
    assert none.drop_count >= run.drop_count


@pytest.mark.slow
def test_dirichlet_pivot_spread_matches_population_scale():
    # singleexp1, N = n = 50, sigma = lambda = 1, dirichlet at both stages, B = 1000:
    # the sd of (theta* - theta_hat)/tau_N should be within 25% of lambda/sqrt(N).
    # Averaged over three simulated datasets to damp dataset-to-dataset noise.
    from recycled_sts import SimDesign, gen_dataset
    from recycled_sts.simulate import replicate_rng

    design = SimDesign(model="singleexp1", theta0=(0.8,), N=50, n=50, sigma=1.0, lam=1.0)
    model = get_model("singleexp1")
    sds = []
    for rep in range(3):
        data, _ = gen_dataset(design, replicate_rng(design.seed, 50, 50, rep))
        fit = fit_sts(model, data, design.inits())
        run = recycle_bootstrap(model, data, fit, RecycleConfig(B=1000), rep)
        sds.append(np.std(run.pivots[:, 0]))
    target = 1.0 / np.sqrt(50)
    assert np.mean(sds) == pytest.approx(target, rel=0.25), sds
