"""Mean functions f(t; theta) with analytic gradients.

Each shipped model has an integer kernel code so the compiled solver can
dispatch without Python callbacks. All models take scalar time t >= 0.
"""

from dataclasses import dataclass

import numpy as np

from ._jit import USE_NUMBA, njit
from .errors import InvalidArgumentError, NumericDomainError

BIEXP4 = 0
SINGLEEXP1 = 1
LINEAR1 = 2
LINEAR2 = 3

# Values of theta1, theta3, theta4 held fixed in the one-parameter model.
SINGLEEXP_FIXED = (1.0, -0.5, -1.0)


def eval_into_numpy(code, theta, x, f, jac, want_jac):
    """Fill ``f`` (n,) and, if ``want_jac``, ``jac`` (n, p) in place."""
    if code == BIEXP4 or code == SINGLEEXP1:
        if code == BIEXP4:
            t1 = theta[0]
            t2 = theta[1]
            t3 = theta[2]
            t4 = theta[3]
        else:
            t1 = 1.0
            t2 = theta[0]
            t3 = -0.5
            t4 = -1.0
        r2 = np.exp(t2)
        r4 = np.exp(t4)
        a1 = np.exp(t1) * np.exp(-r2 * x)
        a3 = np.exp(t3) * np.exp(-r4 * x)
        f[:] = a1 + a3
        if want_jac:
            if code == BIEXP4:
                jac[:, 0] = a1
                jac[:, 1] = -a1 * r2 * x
                jac[:, 2] = a3
                jac[:, 3] = -a3 * r4 * x
            else:
                jac[:, 0] = -a1 * r2 * x
    elif code == LINEAR1:
        f[:] = theta[0] * x
        if want_jac:
            jac[:, 0] = x
    else:
        f[:] = theta[0] + theta[1] * x
        if want_jac:
            jac[:, 0] = 1.0
            jac[:, 1] = x


def eval_into_loop(code, theta, x, f, jac, want_jac):
    """Same contract as :func:`eval_into_numpy`, written without temporaries."""
    n = x.size
    if code == BIEXP4 or code == SINGLEEXP1:
        if code == BIEXP4:
            t1 = theta[0]
            t2 = theta[1]
            t3 = theta[2]
            t4 = theta[3]
        else:
            t1 = 1.0
            t2 = theta[0]
            t3 = -0.5
            t4 = -1.0
        r2 = np.exp(t2)
        r4 = np.exp(t4)
        c1 = np.exp(t1)
        c3 = np.exp(t3)
        for j in range(n):
            a1 = c1 * np.exp(-r2 * x[j])
            a3 = c3 * np.exp(-r4 * x[j])
            f[j] = a1 + a3
            if want_jac:
                if code == BIEXP4:
                    jac[j, 0] = a1
                    jac[j, 1] = -a1 * r2 * x[j]
                    jac[j, 2] = a3
                    jac[j, 3] = -a3 * r4 * x[j]
                else:
                    jac[j, 0] = -a1 * r2 * x[j]
    elif code == LINEAR1:
        for j in range(n):
            f[j] = theta[0] * x[j]
            if want_jac:
                jac[j, 0] = x[j]
    else:
        for j in range(n):
            f[j] = theta[0] + theta[1] * x[j]
            if want_jac:
                jac[j, 0] = 1.0
                jac[j, 1] = x[j]


if USE_NUMBA:
    eval_into = njit(eval_into_loop)
else:
    eval_into = eval_into_numpy


@dataclass(frozen=True)
class ModelSpec:
    """A registered mean function.

    ``default_bounds`` is a ``(lower, upper)`` pair of length-p tuples used
    to keep the optimizer out of overflow territory.
    """

    name: str
    p: int
    code: int
    default_bounds: tuple
    description: str = ""

    @property
    def lower(self):
        return np.asarray(self.default_bounds[0], dtype=float)

    @property
    def upper(self):
        return np.asarray(self.default_bounds[1], dtype=float)

    def check_theta(self, theta):
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.p:
            raise InvalidArgumentError(
                f"{self.name} expects {self.p} parameters, got {theta.size}"
            )
        if not np.all(np.isfinite(theta)):
            raise InvalidArgumentError("theta must be finite")
        return theta

    def eval(self, theta, x):
        theta = self.check_theta(theta)
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        f = np.empty(xa.size)
        jac = np.empty((xa.size, self.p))
        eval_into(self.code, theta, xa.reshape(-1), f, jac, False)
        if not np.all(np.isfinite(f)):
            raise NumericDomainError(f"{self.name} is not finite at theta={theta}")
        return f[0] if np.ndim(x) == 0 else f.reshape(np.shape(x))

    def jacobian(self, theta, x):
        theta = self.check_theta(theta)
        xa = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)
        f = np.empty(xa.size)
        jac = np.empty((xa.size, self.p))
        eval_into(self.code, theta, xa, f, jac, True)
        if not np.all(np.isfinite(jac)):
            raise NumericDomainError(f"{self.name} gradient is not finite at theta={theta}")
        return jac[0] if np.ndim(x) == 0 else jac


def _box(p, half_width):
    return (tuple([-half_width] * p), tuple([half_width] * p))


BIEXPONENTIAL4 = ModelSpec(
    "biexp4", 4, BIEXP4, _box(4, 10.0),
    "exp(t1) exp(-exp(t2) t) + exp(t3) exp(-exp(t4) t)",
)
SINGLE_EXP1 = ModelSpec(
    "singleexp1", 1, SINGLEEXP1, _box(1, 10.0),
    "biexp4 with theta = (1, t, -0.5, -1)",
)
LINEAR_1 = ModelSpec("linear1", 1, LINEAR1, _box(1, np.inf), "t1 * t")
LINEAR_2 = ModelSpec("linear2", 2, LINEAR2, _box(2, np.inf), "t1 + t2 * t")

MODELS = {m.name: m for m in (BIEXPONENTIAL4, SINGLE_EXP1, LINEAR_1, LINEAR_2)}


def get_model(name):
    try:
        return MODELS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown model {name!r}; choose from {sorted(MODELS)}"
        ) from None


def eval_model(model, theta, x):
    """f(x; theta) for a single scalar input."""
    return float(model.eval(theta, float(x)))


def eval_jacobian(model, theta, x):
    """Analytic gradient of f in theta at scalar x, shape (p,)."""
    return np.array(model.jacobian(theta, float(x)), dtype=float)
