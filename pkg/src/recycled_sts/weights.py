"""Exchangeable mean-one random weights for the recycled bootstrap.

Three schemes are shipped: Efron multinomial counts, Bayesian-bootstrap
Dirichlet(1,...,1) scaled to sum n, and i.i.d. unit exponentials. A fourth,
``unit``, returns constant ones and exists only as a test hook.
"""

from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .errors import InvalidArgumentError
from .rng import uniforms

EXPONENTIAL = 0
DIRICHLET = 1
MULTINOMIAL = 2
UNIT = 3

KINDS = {"exponential": EXPONENTIAL, "dirichlet": DIRICHLET,
         "multinomial": MULTINOMIAL, "unit": UNIT}
SCHEMES = ("multinomial", "dirichlet", "exponential")


@njit
def fill_weights(kind, key, out):
    n = out.size
    if kind == UNIT:
        out[:] = 1.0
        return
    u = uniforms(key, n)
    if kind == EXPONENTIAL:
        out[:] = -np.log1p(-u)
    elif kind == DIRICHLET:
        e = -np.log1p(-u)
        out[:] = e * (n / np.sum(e))
    else:
        out[:] = 0.0
        for k in range(n):
            cell = int(u[k] * n)
            if cell >= n:
                cell = n - 1
            out[cell] += 1.0


@njit
def fill_weights_rows(kind, keys, out):
    for i in range(keys.size):
        fill_weights(kind, keys[i], out[i])


@dataclass(frozen=True)
class WeightScheme:
    kind: str
    code: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(
                f"unknown weight scheme {self.kind!r}; choose from "
                f"{sorted(k for k in KINDS if k != 'unit')}"
            )
        object.__setattr__(self, "code", KINDS[self.kind])

    def tau_sq(self, n):
        return tau_sq(self, n)

    def draw(self, n, rng):
        return draw_weights(self, n, rng)


def get_scheme(name):
    return name if isinstance(name, WeightScheme) else WeightScheme(str(name))


def _as_key(rng):
    if isinstance(rng, np.random.Generator):
        return np.uint64(rng.integers(0, 2**64, dtype=np.uint64))
    if isinstance(rng, (int, np.integer)):
        return np.uint64(int(rng) % 2**64)
    raise InvalidArgumentError("rng must be a numpy Generator or an integer stream key")


def draw_weights(scheme, n, rng):
    """One weight vector of length ``n``.

    ``rng`` is a ``numpy.random.Generator`` (a stream key is drawn from it)
    or an integer stream key used as is.
    """
    scheme = get_scheme(scheme)
    if int(n) < 1:
        raise InvalidArgumentError("weight vector length must be at least 1")
    out = np.empty(int(n))
    fill_weights(scheme.code, _as_key(rng), out)
    return out


def tau_sq(scheme, n):
    """Exact coordinate variance of the scheme at size ``n``."""
    scheme = get_scheme(scheme)
    n = int(n)
    if scheme.kind == "exponential":
        return 1.0
    if scheme.kind == "multinomial":
        return (n - 1) / n
    if scheme.kind == "dirichlet":
        return (n - 1) / (n + 1)
    return 0.0


def studentizing_tau(scheme, n):
    """tau_n used to studentize; the constant-weight hook uses 1."""
    t2 = tau_sq(scheme, n)
    return float(np.sqrt(t2)) if t2 > 0 else 1.0


@dataclass
class MomentCheck:
    name: str
    estimate: float
    target: float
    tolerance: float
    passed: bool


@dataclass
class AssumptionWReport:
    scheme: str
    n: int
    draws: int
    tau_sq: float
    checks: list

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def rows(self):
        return [(c.name, c.estimate, c.target, c.tolerance, c.passed) for c in self.checks]


def _draw_block(scheme, n, count, rng):
    if isinstance(scheme, WeightScheme):
        keys = rng.integers(0, 2**64, size=count, dtype=np.uint64)
        out = np.empty((count, n))
        fill_weights_rows(scheme.code, keys, out)
        return out
    return np.stack([scheme.draw(n, rng) for _ in range(count)])


def check_assumption_w(scheme, n, draws=100_000, rng=None, chunk=4096):
    """Monte Carlo check of the moment conditions on a weight scheme.

    Uses coordinates 1 and 2 of each draw, standardized as
    W_i = (w_i - 1)/tau_n. Mean and variance of the raw w_i are compared
    with 1 and tau_n^2 at 3 standard errors. E(W1 W2) must be O(1/n), taken
    as |E| <= 2/n + 3 SE. E(W1^2 W2^2) must approach 1, taken as
    |E - 1| <= 4/n + 3 SE; this bound is a working tolerance, not a limit
    theorem, and is loose for multinomial counts at small n. E(W^4) only
    needs to be finite.

    ``scheme`` may be any object with ``draw(n, rng)`` and ``tau_sq(n)``.
    """
    if isinstance(scheme, str):
        scheme = get_scheme(scheme)
    if draws < 10_000:
        raise InvalidArgumentError("check_assumption_w needs at least 10^4 draws")
    if n < 2:
        raise InvalidArgumentError("need n >= 2 to form coordinate pairs")
    rng = rng if rng is not None else np.random.default_rng()
    t2 = float(scheme.tau_sq(n))
    tau = np.sqrt(t2) if t2 > 0 else 1.0
    w1, w2 = [], []
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        block = _draw_block(scheme, n, m, rng)
        w1.append(block[:, 0].copy())
        w2.append(block[:, 1].copy())
        done += m
    w1 = np.concatenate(w1)
    w2 = np.concatenate(w2)
    se = lambda v: float(np.std(v, ddof=1) / np.sqrt(v.size))  # noqa: E731

    W1 = (w1 - 1.0) / tau
    W2 = (w2 - 1.0) / tau
    dev = (w1 - np.mean(w1)) ** 2
    cross = W1 * W2
    cross2 = W1**2 * W2**2
    fourth = W1**4

    checks = []

    def add(name, est, target, tol):
        checks.append(MomentCheck(name, float(est), float(target), float(tol),
                                  bool(np.isfinite(est) and abs(est - target) <= tol)))

    add("mean(w_i)", np.mean(w1), 1.0, 3 * se(w1))
    add("var(w_i)", np.var(w1, ddof=1), t2, 3 * se(dev))
    add("E(W_i W_j)", np.mean(cross), 0.0, 2.0 / n + 3 * se(cross))
    add("E(W_i^2 W_j^2)", np.mean(cross2), 1.0, 4.0 / n + 3 * se(cross2))
    est4 = float(np.mean(fourth))
    checks.append(MomentCheck("E(W_i^4)", est4, np.nan, np.inf, bool(np.isfinite(est4))))
    name = getattr(scheme, "kind", type(scheme).__name__)
    return AssumptionWReport(str(name), int(n), int(draws), t2, checks)
