import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recycled_sts import InvalidArgumentError, NumericDomainError, get_model
from recycled_sts.models import MODELS, eval_into_loop, eval_into_numpy

TRUE4 = np.array([1.0, 0.8, -0.5, -1.0])


def fd_jacobian(model, theta, x, h=1e-6):
    cols = []
    for k in range(model.p):
        e = np.zeros(model.p)
        e[k] = h
        cols.append((model.eval(theta + e, x) - model.eval(theta - e, x)) / (2 * h))
    return np.stack(cols, axis=-1)


def biexp_mp(theta, t):
    mpmath.mp.dps = 150
    a1, r1, a2, r2 = (mpmath.mpf(float(v)) for v in theta)
    t = mpmath.mpf(float(t))
    return mpmath.e**a1 * mpmath.e**(-mpmath.e**r1 * t) + mpmath.e**a2 * mpmath.e**(-mpmath.e**r2 * t)


MP_MODELS = {
    "biexp4": biexp_mp,
    "singleexp1": lambda th, t: biexp_mp([1.0, th[0], -0.5, -1.0], t),
    "linear1": lambda th, t: mpmath.mpf(th[0]) * t,
    "linear2": lambda th, t: mpmath.mpf(th[0]) + mpmath.mpf(th[1]) * t,
}


def fd_jacobian_mp(name, theta, t, h=1e-6):
    """Central differences evaluated in 150-digit arithmetic, so cancellation
    cannot swamp derivatives that are tiny next to f itself."""
    mpmath.mp.dps = 150
    f = MP_MODELS[name]
    out = []
    for k in range(len(theta)):
        up = [mpmath.mpf(float(v)) for v in theta]
        dn = list(up)
        up[k] += mpmath.mpf(h)
        dn[k] -= mpmath.mpf(h)
        out.append(float((f(up, mpmath.mpf(t)) - f(dn, mpmath.mpf(t))) / (2 * mpmath.mpf(h))))
    return np.array(out)


def sample_theta(model, rng):
    lo = np.maximum(model.lower, -3.0)
    hi = np.minimum(model.upper, 3.0)
    return rng.uniform(lo, hi)


@pytest.mark.parametrize("t", [0.0, 0.3, 1.0, 2.5, 8.0, 24.0])
def test_biexp_matches_high_precision(t):
    model = get_model("biexp4")
    got = model.eval(TRUE4, np.array([t]))[0]
    want = float(biexp_mp(TRUE4, t))
    assert got == pytest.approx(want, rel=1e-14, abs=1e-300)


def test_singleexp_is_biexp_with_three_fixed():
    t = np.linspace(0, 8, 17)
    one = get_model("singleexp1").eval(np.array([0.3]), t)
    four = get_model("biexp4").eval(np.array([1.0, 0.3, -0.5, -1.0]), t)
    np.testing.assert_array_equal(one, four)


def test_biexp_jacobian_at_truth():
    model = get_model("biexp4")
    J = model.jacobian(TRUE4, np.array([1.0]))
    np.testing.assert_allclose(J[0], fd_jacobian(model, TRUE4, np.array([1.0]))[0], rtol=1e-6)


def test_singleexp_jacobian_example():
    model = get_model("singleexp1")
    J = model.jacobian(np.array([0.8]), 3.0)
    assert np.ndim(J) == 1 and J.shape == (1,)
    assert J[0] == pytest.approx(fd_jacobian(model, np.array([0.8]), 3.0)[0], rel=1e-6)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_jacobian_vs_finite_differences(name):
    model = get_model(name)
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        th = sample_theta(model, rng)
        x = np.array([rng.uniform(0, 8)])
        J = model.jacobian(th, x)[0]
        F = fd_jacobian_mp(name, th, float(x[0]))
        nz = F != 0
        assert np.all(J[~nz] == 0)
        worst = max(worst, float(np.max(np.abs(J[nz] - F[nz]) / np.abs(F[nz]), initial=0.0)))
    assert worst <= 1e-6


@pytest.mark.parametrize("name", sorted(MODELS))
def test_loop_and_vectorised_kernels_agree(name):
    model = get_model(name)
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 8, size=25)
    th = sample_theta(model, rng)
    f1, f2 = np.empty(25), np.empty(25)
    j1, j2 = np.empty((25, model.p)), np.empty((25, model.p))
    eval_into_numpy(model.code, th, x, f1, j1, True)
    eval_into_loop(model.code, th, x, f2, j2, True)
    np.testing.assert_allclose(f1, f2, rtol=1e-14, atol=0)
    np.testing.assert_allclose(j1, j2, rtol=1e-14, atol=1e-300)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=4, max_size=4), st.floats(0, 1e3))
def test_biexp_finite_over_box(theta, x):
    model = get_model("biexp4")
    assert np.all(np.isfinite(model.eval(np.array(theta), np.array([x]))))
    assert np.all(np.isfinite(model.jacobian(np.array(theta), np.array([x]))))


def test_wrong_dimension_rejected():
    with pytest.raises(InvalidArgumentError):
        get_model("biexp4").eval(np.zeros(3), np.array([1.0]))


def test_non_finite_output_raises():
    with pytest.raises(NumericDomainError):
        get_model("biexp4").eval(np.array([800.0, 0.0, 0.0, 0.0]), np.array([0.0]))


def test_unknown_model():
    with pytest.raises(InvalidArgumentError):
        get_model("theophylline")
