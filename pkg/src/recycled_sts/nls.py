"""Weighted nonlinear least squares for one individual.

Minimizes Q(theta) = sum_j w_j (y_j - f(x_j; theta))^2 by Levenberg-Marquardt
with Marquardt diagonal scaling and Nielsen's damping update. The model's
box is a safeguard, not a constraint: steps are projected onto it so the
exponentials cannot overflow, and a run that ends on the box is reported
as ``at_bound`` (not converged) because the unconstrained objective has no
stationary point there.

Near the optimum the decrease in Q drops below rounding before the
gradient reaches its tolerance; such steps are accepted when they shrink
the gradient, i.e. the score equation is solved directly.
"""

from dataclasses import dataclass

import numpy as np

from ._jit import USE_NUMBA, njit
from .errors import InvalidArgumentError, RankDeficiencyError
from .models import eval_into
from .rng import child_key, uniforms

CONVERGED = 0
MAX_ITER = 1
STALLED = 2
RANK_DEFICIENT = 3
NON_FINITE = 4
AT_BOUND = 5

STATUS_NAMES = {
    CONVERGED: "converged",
    MAX_ITER: "max_iterations",
    STALLED: "stalled",
    RANK_DEFICIENT: "rank_deficient",
    NON_FINITE: "non_finite",
    AT_BOUND: "at_bound",
}

_MULTISTART_KEY = np.uint64(0x5EED0F57A7757A27)
_MULTISTART_SPREAD = 0.5
_ROUNDING = 64 * np.finfo(np.float64).eps


@dataclass(frozen=True)
class IndividualData:
    id: str
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float).reshape(-1)
        y = np.ascontiguousarray(self.y, dtype=float).reshape(-1)
        if x.size != y.size:
            raise InvalidArgumentError(
                f"individual {self.id}: {x.size} inputs but {y.size} responses"
            )
        if x.size < 1:
            raise InvalidArgumentError(f"individual {self.id} has no observations")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidArgumentError(f"individual {self.id} has non-finite data")
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.x.size


@dataclass(frozen=True)
class FitOptions:
    max_iterations: int = 200
    gradient_tolerance: float = 1e-10
    step_tolerance: float = 1e-12
    initial_lm_damping: float = 1e-3
    multistart_count: int = 1

    def __post_init__(self):
        for name in ("max_iterations", "gradient_tolerance", "step_tolerance",
                     "initial_lm_damping", "multistart_count"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"FitOptions.{name} must be positive")

    def as_args(self):
        return (int(self.max_iterations), float(self.gradient_tolerance),
                float(self.step_tolerance), float(self.initial_lm_damping),
                int(self.multistart_count))


@dataclass
class FitResult:
    theta_hat: np.ndarray
    q_min: float
    iterations: int
    converged: bool
    gradient_norm: float
    status: str = "converged"


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit
def chol_solve(M, b, out):
    """Solve M out = b for small SPD M; False if M is not numerically PD."""
    p = b.size
    L = np.zeros((p, p))
    for i in range(p):
        for j in range(i + 1):
            s = M[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if not (s > 0.0) or not np.isfinite(s):
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    z = np.empty(p)
    for i in range(p):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * z[k]
        z[i] = s / L[i, i]
    for i in range(p - 1, -1, -1):
        s = z[i]
        for k in range(i + 1, p):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]
    return True


def _normal_eqs_numpy(jac, w, r, g, A):
    # g = grad(Q/2) = -J^T W r ; A = J^T W J
    wj = jac * w.reshape(-1, 1)
    A[:, :] = np.dot(jac.T, wj)
    g[:] = -np.dot(wj.T, r)


def _normal_eqs_loop(jac, w, r, g, A):
    n, p = jac.shape
    A[:, :] = 0.0
    g[:] = 0.0
    for j in range(n):
        wj = w[j]
        if wj == 0.0:
            continue
        for k in range(p):
            c = wj * jac[j, k]
            g[k] -= c * r[j]
            for m in range(k + 1):
                A[k, m] += c * jac[j, m]
    for k in range(p):
        for m in range(k):
            A[m, k] = A[k, m]


_normal_eqs = njit(_normal_eqs_loop) if USE_NUMBA else _normal_eqs_numpy


@njit
def _wrss(w, y, f, r):
    q = 0.0
    for j in range(y.size):
        r[j] = y[j] - f[j]
        q += w[j] * r[j] * r[j]
    return q


@njit
def _pgrad_norm(g, theta, lo, hi):
    m = 0.0
    for k in range(g.size):
        gk = g[k]
        if theta[k] <= lo[k] and gk > 0.0:
            gk = 0.0
        if theta[k] >= hi[k] and gk < 0.0:
            gk = 0.0
        m = max(m, abs(gk))
    return 2.0 * m


@njit
def _freeze_active(M, g, rhs, theta, lo, hi):
    # Coordinates pinned at a bound with an outward descent direction get a
    # zero step; the rest solve the reduced system.
    p = g.size
    for k in range(p):
        rhs[k] = -g[k]
    for k in range(p):
        blocked = (theta[k] <= lo[k] and g[k] > 0.0) or (theta[k] >= hi[k] and g[k] < 0.0)
        if blocked:
            for j in range(p):
                M[k, j] = 0.0
                M[j, k] = 0.0
            M[k, k] = 1.0
            rhs[k] = 0.0


@njit
def _quad(g, A, h):
    # g.h + h^T A h / 2
    p = h.size
    s = 0.0
    for k in range(p):
        s += g[k] * h[k]
        t = 0.0
        for m in range(p):
            t += A[k, m] * h[m]
        s += 0.5 * h[k] * t
    return s


@njit
def lm_solve(code, x, y, w, theta_init, lo, hi, max_iter, gtol, xtol, damping0, theta_out):
    """One Levenberg-Marquardt run. Returns (status, q, iterations, grad_norm)."""
    n = x.size
    p = theta_init.size
    theta = np.minimum(np.maximum(theta_init, lo), hi)
    theta_out[:] = theta
    npos = 0
    for j in range(n):
        if w[j] > 0.0:
            npos += 1
    if npos < p:
        return RANK_DEFICIENT, np.nan, 0, np.nan

    f = np.empty(n)
    jac = np.empty((n, p))
    r = np.empty(n)
    g = np.empty(p)
    A = np.empty((p, p))
    f_t = np.empty(n)
    jac_t = np.empty((n, p))
    r_t = np.empty(n)
    g_t = np.empty(p)
    A_t = np.empty((p, p))
    M = np.empty((p, p))
    h = np.empty(p)
    rhs = np.empty(p)
    theta_t = np.empty(p)

    eval_into(code, theta, x, f, jac, True)
    q = _wrss(w, y, f, r)
    if not np.isfinite(q):
        return NON_FINITE, q, 0, np.nan
    _normal_eqs(jac, w, r, g, A)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(A))):
        return NON_FINITE, q, 0, np.nan

    dmax = 0.0
    for k in range(p):
        dmax = max(dmax, A[k, k])
    mu = damping0 * max(dmax, 1e-300)
    nu = 2.0
    it = 0
    status = MAX_ITER
    small_step = False
    gn = _pgrad_norm(g, theta, lo, hi)
    while True:
        if gn <= gtol * (1.0 + q):
            status = CONVERGED
            break
        if small_step:
            status = STALLED
            break
        if it >= max_iter:
            break
        it += 1
        dmax = 0.0
        for k in range(p):
            dmax = max(dmax, A[k, k])
        floor = 1e-12 * dmax + 1e-300
        M[:, :] = A
        for k in range(p):
            M[k, k] += mu * max(A[k, k], floor)
        _freeze_active(M, g, rhs, theta, lo, hi)
        if not chol_solve(M, rhs, h):
            mu *= nu
            nu *= 2.0
            if mu > 1e200:
                status = STALLED
                break
            continue
        step2 = 0.0
        th2 = 0.0
        for k in range(p):
            v = min(max(theta[k] + h[k], lo[k]), hi[k])
            h[k] = v - theta[k]
            theta_t[k] = v
            step2 += h[k] * h[k]
            th2 += theta[k] * theta[k]
        eval_into(code, theta_t, x, f_t, jac_t, True)
        q_t = _wrss(w, y, f_t, r_t)
        pred = -_quad(g, A, h)
        act = 0.5 * (q - q_t)
        tiny = np.sqrt(step2) <= xtol * (np.sqrt(th2) + xtol)
        accept = np.isfinite(q_t) and act > 0.0
        gn_t = 0.0
        if accept or (np.isfinite(q_t) and -act <= _ROUNDING * (q + q_t)):
            _normal_eqs(jac_t, w, r_t, g_t, A_t)
            gn_t = _pgrad_norm(g_t, theta_t, lo, hi)
            # Q is flat to rounding here: judge the step on the score equation.
            if not accept:
                accept = gn_t < gn
        if accept:
            rho = act / pred if (act > 0.0 and pred > 0.0) else 0.0
            theta, theta_t = theta_t, theta
            f, f_t = f_t, f
            jac, jac_t = jac_t, jac
            r, r_t = r_t, r
            g, g_t = g_t, g
            A, A_t = A_t, A
            q = q_t
            gn = gn_t
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            small_step = tiny
        else:
            if tiny and mu > 1e10 * (dmax + 1.0):
                status = STALLED
                break
            mu *= nu
            nu *= 2.0
            if mu > 1e200:
                status = STALLED
                break
    if status == CONVERGED and it > 0:
        # Polish with undamped Gauss-Newton steps. The gradient test leaves
        # theta off by about H^-1 * gtol, which matters for ill-conditioned
        # designs; on a linear model one step lands on the exact LS solution.
        # A start that already passes the test is returned untouched.
        for _ in range(2):
            interior = True
            for k in range(p):
                if theta[k] <= lo[k] or theta[k] >= hi[k]:
                    interior = False
            if not interior:
                break
            M[:, :] = A
            for k in range(p):
                rhs[k] = -g[k]
            if not chol_solve(M, rhs, h):
                break
            for k in range(p):
                theta_t[k] = theta[k] + h[k]
                if not (lo[k] < theta_t[k] < hi[k]):
                    interior = False
            if not interior:
                break
            eval_into(code, theta_t, x, f_t, jac_t, True)
            q_t = _wrss(w, y, f_t, r_t)
            if not (np.isfinite(q_t) and q_t <= q + _ROUNDING * (q + q_t)):
                break
            _normal_eqs(jac_t, w, r_t, g_t, A_t)
            gn_t = _pgrad_norm(g_t, theta_t, lo, hi)
            if not gn_t < gn:
                break
            theta, theta_t = theta_t, theta
            g, g_t = g_t, g
            A, A_t = A_t, A
            q = q_t
            gn = gn_t
    theta_out[:] = theta
    if not (np.all(np.isfinite(theta)) and np.isfinite(q)):
        return NON_FINITE, q, it, gn
    if status == CONVERGED:
        for k in range(p):
            if theta[k] <= lo[k] or theta[k] >= hi[k]:
                # ran into the safeguard box: not a stationary point
                return AT_BOUND, q, it, gn
    return status, q, it, gn


@njit
def fit_one(code, x, y, w, theta_init, lo, hi, max_iter, gtol, xtol, damping0, n_starts,
            theta_out):
    """Best-of-``n_starts`` LM fit; extra starts are fixed perturbations of the first."""
    status, q, it, gn = lm_solve(code, x, y, w, theta_init, lo, hi, max_iter, gtol, xtol,
                                 damping0, theta_out)
    if n_starts <= 1 or status == RANK_DEFICIENT:
        return status, q, it, gn
    p = theta_init.size
    cand = np.empty(p)
    for s in range(1, n_starts):
        u = uniforms(child_key(_MULTISTART_KEY, np.uint64(s)), p)
        start = theta_init + _MULTISTART_SPREAD * (2.0 * u - 1.0)
        st2, q2, it2, gn2 = lm_solve(code, x, y, w, start, lo, hi, max_iter, gtol, xtol,
                                     damping0, cand)
        it += it2
        better = st2 == CONVERGED and (status != CONVERGED or q2 < q)
        if better:
            status = st2
            q = q2
            gn = gn2
            theta_out[:] = cand
    return status, q, it, gn


@njit
def fit_many(code, x, y, w, offsets, inits, lo, hi, max_iter, gtol, xtol, damping0,
             n_starts, theta_out, status_out, q_out, iters_out, gnorm_out):
    """Fit every individual of a flattened dataset (rows offsets[i]:offsets[i+1])."""
    N = offsets.size - 1
    th = np.empty(inits.shape[1])
    for i in range(N):
        a = offsets[i]
        b = offsets[i + 1]
        st, q, it, gn = fit_one(code, x[a:b], y[a:b], w[a:b], inits[i], lo, hi, max_iter,
                                gtol, xtol, damping0, n_starts, th)
        theta_out[i, :] = th
        status_out[i] = st
        q_out[i] = q
        iters_out[i] = it
        gnorm_out[i] = gn


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def _check_weights(data, weights):
    if weights is None:
        return np.ones(data.n)
    w = np.ascontiguousarray(weights, dtype=float).reshape(-1)
    if w.size != data.n:
        raise InvalidArgumentError(f"expected {data.n} weights, got {w.size}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidArgumentError("weights must be finite and nonnegative")
    return w


def objective(model, data, weights, theta):
    """Weighted residual sum of squares at ``theta``."""
    theta = model.check_theta(theta)
    w = _check_weights(data, weights)
    r = data.y - model.eval(theta, data.x)
    return float(np.sum(w * r * r))


def fit_wls(model, data, weights=None, theta_init=None, opts=None):
    """Fit one individual by weighted LM.

    Args:
        model: a :class:`~recycled_sts.models.ModelSpec`.
        data: the individual's observations.
        weights: nonnegative per-observation weights; ``None`` means all ones.
        theta_init: starting point inside the model's bounds.
        opts: :class:`FitOptions`.

    Returns:
        FitResult. Non-convergence is reported through ``converged=False``
        rather than raised.

    Raises:
        RankDeficiencyError: fewer than p strictly positive weights.
    """
    opts = opts or FitOptions()
    w = _check_weights(data, weights)
    theta_init = model.check_theta(theta_init)
    lo, hi = model.lower, model.upper
    if np.any(theta_init < lo) or np.any(theta_init > hi):
        raise InvalidArgumentError(f"theta_init {theta_init} is outside the model bounds")
    out = np.empty(model.p)
    status, q, it, gn = fit_one(model.code, data.x, data.y, w, theta_init, lo, hi,
                                *opts.as_args(), out)
    if status == RANK_DEFICIENT:
        raise RankDeficiencyError(
            f"individual {data.id}: {int(np.sum(w > 0))} positive weights for "
            f"{model.p} parameters"
        )
    return FitResult(out, float(q), int(it), status == CONVERGED, float(gn),
                     STATUS_NAMES[int(status)])
