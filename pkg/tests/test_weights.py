import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recycled_sts import InvalidArgumentError, check_assumption_w, draw_weights, get_scheme, tau_sq
from recycled_sts.weights import SCHEMES, studentizing_tau


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(SCHEMES), st.integers(1, 300), st.integers(0, 2**63))
def test_sum_and_sign_constraints(kind, n, key):
    w = draw_weights(kind, n, key)
    assert w.shape == (n,)
    assert np.all(w >= 0)
    if kind == "multinomial":
        assert np.all(w == np.round(w))
        assert w.sum() == n
    elif kind == "dirichlet":
        assert w.sum() == pytest.approx(n, rel=1e-12)
    else:
        assert np.all(w > 0)


def test_unit_scheme_is_constant():
    np.testing.assert_array_equal(draw_weights("unit", 7, 3), np.ones(7))
    assert tau_sq("unit", 7) == 0.0
    assert studentizing_tau(get_scheme("unit"), 7) == 1.0


@pytest.mark.parametrize("n", [2, 5, 50])
def test_tau_sq_closed_forms(n):
    assert tau_sq("multinomial", n) == pytest.approx((n - 1) / n)
    assert tau_sq("dirichlet", n) == pytest.approx((n - 1) / (n + 1))
    assert tau_sq("exponential", n) == 1.0


def test_same_key_same_draw():
    a = draw_weights("dirichlet", 40, 987654321)
    b = draw_weights("dirichlet", 40, 987654321)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, draw_weights("dirichlet", 40, 987654322))


def test_generator_input_advances():
    rng = np.random.default_rng(1)
    a = draw_weights("exponential", 10, rng)
    b = draw_weights("exponential", 10, rng)
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("kind", SCHEMES)
@pytest.mark.parametrize("n", [5, 50, 200])
def test_assumption_w_holds(kind, n):
    rep = check_assumption_w(kind, n, draws=100_000, rng=np.random.default_rng(n))
    assert rep.passed, rep.rows()


def test_dirichlet_pair_variance_is_one_third():
    rep = check_assumption_w("dirichlet", 2, draws=100_000, rng=np.random.default_rng(0))
    var = next(c for c in rep.checks if c.name == "var(w_i)")
    assert var.target == pytest.approx(1 / 3)
    assert var.passed


class _ShiftedMean:
    kind = "shifted"

    def draw(self, n, rng):
        return rng.exponential(size=n) + 0.1

    def tau_sq(self, n):
        return 1.0


def test_broken_scheme_fails_mean_check():
    rep = check_assumption_w(_ShiftedMean(), 20, draws=50_000, rng=np.random.default_rng(2))
    assert not rep.passed
    assert not next(c for c in rep.checks if c.name == "mean(w_i)").passed


def test_unknown_scheme():
    with pytest.raises(InvalidArgumentError):
        get_scheme("foo")


def test_check_needs_enough_draws():
    with pytest.raises(InvalidArgumentError):
        check_assumption_w("dirichlet", 5, draws=100)
