"""Standard two-stage estimation for hierarchical nonlinear regression."""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._jit import njit
from .errors import EstimationError, InvalidArgumentError, SingularDesignError
from .nls import CONVERGED, STATUS_NAMES, FitOptions, FitResult, IndividualData, fit_many
from .rng import id_label


@njit
def row_weighted_mean(theta, u):
    """(1/N) sum_i u_i theta_i, summed in row order."""
    N, p = theta.shape
    out = np.zeros(p)
    for i in range(N):
        for k in range(p):
            out[k] += u[i] * theta[i, k]
    return out / N


def canonical_order(ids):
    """Permutation sorting individuals by their stream label.

    Population averages are summed in this order so they are independent of
    how the dataset happens to be stored.
    """
    labels = np.array([id_label(i) for i in ids], dtype=np.uint64)
    return np.argsort(labels, kind="stable")


@dataclass
class HierDataset:
    """N individuals with their own (x, y) series."""

    individuals: list

    def __post_init__(self):
        self.individuals = [
            d if isinstance(d, IndividualData) else IndividualData(*d)
            for d in self.individuals
        ]
        if len(self.individuals) < 2:
            raise InvalidArgumentError("a hierarchical dataset needs at least 2 individuals")
        ids = [d.id for d in self.individuals]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("individual ids must be unique")
        sizes = np.array([d.n for d in self.individuals], dtype=np.int64)
        self._offsets = np.concatenate(([0], np.cumsum(sizes))).astype(np.int64)
        self._x = np.ascontiguousarray(np.concatenate([d.x for d in self.individuals]))
        self._y = np.ascontiguousarray(np.concatenate([d.y for d in self.individuals]))

    @classmethod
    def from_arrays(cls, ids, x, y):
        """Group flat (id, x, y) columns by id, keeping first-seen order."""
        ids = np.asarray(ids).astype(str)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        order = list(dict.fromkeys(ids.tolist()))
        return cls([IndividualData(i, x[ids == i], y[ids == i]) for i in order])

    @property
    def N(self):
        return len(self.individuals)

    @property
    def M(self):
        return int(self._offsets[-1])

    @property
    def sizes(self):
        return np.diff(self._offsets)

    @property
    def ids(self):
        return [d.id for d in self.individuals]

    @property
    def flat(self):
        """(x, y, offsets) with individual i at rows offsets[i]:offsets[i+1]."""
        return self._x, self._y, self._offsets

    def subset(self, mask):
        return HierDataset([d for d, keep in zip(self.individuals, mask) if keep])


@dataclass
class StageOneResult:
    fits: list
    sigma_sq_M: float
    converged: np.ndarray
    thetas: np.ndarray
    q: np.ndarray
    M_used: int

    @property
    def dropped(self):
        return int(np.sum(~self.converged))

    def __iter__(self):
        # allows ``fits, s2 = stage_one(...)``
        return iter((self.fits, self.sigma_sq_M))


@dataclass
class StsFit:
    theta_hat_i: np.ndarray
    theta_sts: np.ndarray
    sigma_sq_M: float
    S2: np.ndarray
    var_theta_sts: np.ndarray
    lambda_hat_sq_uncorrected: Optional[float]
    dropped: int
    converged: np.ndarray
    Sigma_N_hat: Optional[np.ndarray] = None
    nu_hat: Optional[float] = None
    D_hat: Optional[np.ndarray] = None
    singular_designs: int = 0
    ids: list = field(default_factory=list)

    @property
    def N_used(self):
        return int(self.theta_hat_i.shape[0])


def broadcast_inits(inits, N, p):
    inits = np.asarray(inits, dtype=float)
    if inits.ndim == 1:
        if inits.size != p:
            raise InvalidArgumentError(f"init has length {inits.size}, model needs {p}")
        inits = np.tile(inits, (N, 1))
    if inits.shape != (N, p):
        raise InvalidArgumentError(f"inits must be shape ({N}, {p}) or ({p},)")
    return np.ascontiguousarray(inits)


def stage_one(model, dataset, inits, opts=None):
    """Unweighted NLS per individual plus the pooled within-individual variance.

    ``inits`` is one start per individual or a single start broadcast to all.
    Non-converged individuals are excluded from ``sigma_sq_M``.
    """
    opts = opts or FitOptions()
    p = model.p
    N = dataset.N
    if np.any(dataset.sizes <= p):
        raise InvalidArgumentError(f"every individual needs more than p={p} observations")
    inits = broadcast_inits(inits, N, p)
    if np.any(inits < model.lower) or np.any(inits > model.upper):
        raise InvalidArgumentError("initial values lie outside the model bounds")
    x, y, off = dataset.flat
    thetas = np.empty((N, p))
    status = np.empty(N, dtype=np.int64)
    q = np.empty(N)
    iters = np.empty(N, dtype=np.int64)
    gnorm = np.empty(N)
    fit_many(model.code, x, y, np.ones_like(x), off, inits, model.lower, model.upper,
             *opts.as_args(), thetas, status, q, iters, gnorm)
    conv = status == CONVERGED
    fits = [FitResult(thetas[i].copy(), float(q[i]), int(iters[i]), bool(conv[i]),
                      float(gnorm[i]), STATUS_NAMES[int(status[i])]) for i in range(N)]
    if conv.sum() < 2:
        raise EstimationError(f"only {int(conv.sum())} of {N} individuals converged in Stage I")
    M_used = int(dataset.sizes[conv].sum())
    denom = M_used - p * int(conv.sum())
    if denom <= 0:
        raise InvalidArgumentError("need M > pN for the pooled variance")
    # fsum is exactly rounded, so the pooled variance ignores storage order
    s2 = math.fsum(q[conv]) / denom
    return StageOneResult(fits, s2, conv, thetas, q, M_used)


def stage_two(stage1, ids=None):
    """Population mean, scatter matrix and the uncorrected between-variance."""
    conv = stage1.converged
    th = stage1.thetas[conv]
    N, p = th.shape
    order = canonical_order(ids) if ids is not None else np.arange(N)
    th_c = np.ascontiguousarray(th[order])
    theta_sts = row_weighted_mean(th_c, np.ones(N))
    dev = th_c - theta_sts
    S2 = dev.T @ dev
    S2 = 0.5 * (S2 + S2.T)
    lam2 = float(S2[0, 0] / (N - 1)) if p == 1 else None
    return StsFit(
        theta_hat_i=th, theta_sts=theta_sts, sigma_sq_M=stage1.sigma_sq_M, S2=S2,
        var_theta_sts=S2 / N, lambda_hat_sq_uncorrected=lam2,
        dropped=stage1.dropped, converged=conv.copy(),
    )


def sigma_matrix(model, theta, x):
    """Inverse of the averaged gradient outer product (1/n) sum grad f grad f^t."""
    x = np.asarray(x, dtype=float).reshape(-1)
    J = np.atleast_2d(model.jacobian(theta, x))
    info = J.T @ J / x.size
    info = 0.5 * (info + info.T)
    try:
        L = np.linalg.cholesky(info)
    except np.linalg.LinAlgError:
        raise SingularDesignError("gradient design matrix is rank deficient") from None
    if np.min(np.diag(L)) <= np.sqrt(np.finfo(float).eps) * np.max(np.diag(L)):
        raise SingularDesignError("gradient design matrix is numerically singular")
    Linv = np.linalg.inv(L)
    S = Linv.T @ Linv
    return 0.5 * (S + S.T)


def estimate_D(S2, Sigma_N_hat, sigma_sq_M):
    """Smallest root nu of |S2 - nu Sigma| = 0 and D = S2 - min(nu, s2) Sigma.

    The pencil is reduced with the Cholesky factor of ``Sigma_N_hat``.
    """
    S2 = np.atleast_2d(np.asarray(S2, dtype=float))
    Sig = np.atleast_2d(np.asarray(Sigma_N_hat, dtype=float))
    Sig = 0.5 * (Sig + Sig.T)
    try:
        L = np.linalg.cholesky(Sig)
    except np.linalg.LinAlgError:
        raise SingularDesignError("Sigma_N_hat is not positive definite") from None
    Linv = np.linalg.inv(L)
    C = Linv @ (0.5 * (S2 + S2.T)) @ Linv.T
    nu = float(np.linalg.eigvalsh(0.5 * (C + C.T))[0])
    D = S2 - min(nu, float(sigma_sq_M)) * Sig
    return nu, 0.5 * (D + D.T)


def fit_sts(model, dataset, inits, opts=None, covariance=True):
    """Stage I, Stage II and (optionally) the corrected between-covariance.

    Individuals whose gradient design is singular at their own estimate are
    left out of Sigma_N_hat and counted in ``singular_designs``.
    """
    s1 = stage_one(model, dataset, inits, opts)
    ids = [d.id for d, c in zip(dataset.individuals, s1.converged) if c]
    fit = stage_two(s1, ids)
    fit.ids = ids
    if not covariance:
        return fit
    used = [d for d, c in zip(dataset.individuals, s1.converged) if c]
    mats = []
    for k in canonical_order(ids):
        d, th = used[k], fit.theta_hat_i[k]
        try:
            mats.append(sigma_matrix(model, th, d.x))
        except SingularDesignError:
            fit.singular_designs += 1
    if not mats:
        raise SingularDesignError("no individual has a nonsingular gradient design")
    fit.Sigma_N_hat = np.add.reduce(mats) / len(mats)
    fit.nu_hat, fit.D_hat = estimate_D(fit.S2, fit.Sigma_N_hat, fit.sigma_sq_M)
    return fit
