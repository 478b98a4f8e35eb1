"""Recycled (random-weight) bootstrap of the two-stage estimator.

Each replicate refits every individual under fresh inner weights, warm
started at its Stage I estimate, then averages the refits under outer
weights u: theta*_STS = (1/N) sum_i u_i theta*_i.

Streams: replicate b of a run with key K has key R = child(K, b). Individual
i draws its inner weights from child(R, label_i), where label_i hashes the
individual's id; a refit that fails to converge is retried with
child(child(R, label_i), a) for a = 1..max_retries before the replicate is
dropped. The outer weights come from child(R, OUTER). Individuals are
processed in ascending label order, so results do not depend on storage
order.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._jit import njit
from .errors import InvalidArgumentError, RecycledStsError
from .nls import CONVERGED, FitOptions, fit_one
from .rng import child_key, child_keys, id_label
from .sts import HierDataset, canonical_order, row_weighted_mean
from .weights import WeightScheme, fill_weights, get_scheme, studentizing_tau

_OUTER = np.uint64(0x0F7E5A11F00DBEEF)
CI_METHODS = ("basic_studentized", "percentile")


class ReplicateFailure(RecycledStsError):
    """An inner refit of a recycled replicate did not converge."""


@njit
def _one_replicate(code, x, y, offsets, theta_hat, labels, rep_key, inner_kind, outer_kind,
                   lo, hi, max_iter, gtol, xtol, damping0, n_starts, max_retries, wbuf, u,
                   th_star, tmp):
    """Fill th_star and u for one replicate; returns (ok, extra draws used)."""
    N = offsets.size - 1
    inner_keys = child_keys(rep_key, labels)
    extra = 0
    for i in range(N):
        a = offsets[i]
        e = offsets[i + 1]
        done = False
        for attempt in range(max_retries + 1):
            key = inner_keys[i] if attempt == 0 else child_key(inner_keys[i], np.uint64(attempt))
            fill_weights(inner_kind, key, wbuf[a:e])
            st, q, it, gn = fit_one(code, x[a:e], y[a:e], wbuf[a:e], theta_hat[i], lo, hi,
                                    max_iter, gtol, xtol, damping0, n_starts, tmp)
            if st == CONVERGED:
                done = True
                break
            extra += 1
        if not done:
            return False, extra
        th_star[i, :] = tmp
    fill_weights(outer_kind, child_key(rep_key, _OUTER), u)
    return True, extra


@njit
def recycle_block(code, x, y, offsets, theta_hat, labels, run_key, b_start, b_stop,
                  inner_kind, outer_kind, lo, hi, max_iter, gtol, xtol, damping0, n_starts,
                  max_retries, rep_out, ok_out, retries_out):
    """Replicates b_start..b_stop-1 of a run; rows of the outputs are indexed by b."""
    N = offsets.size - 1
    p = theta_hat.shape[1]
    wbuf = np.empty(x.size)
    u = np.empty(N)
    th_star = np.empty((N, p))
    tmp = np.empty(p)
    for b in range(b_start, b_stop):
        rep_key = child_key(run_key, np.uint64(b))
        ok, extra = _one_replicate(code, x, y, offsets, theta_hat, labels, rep_key, inner_kind,
                                   outer_kind, lo, hi, max_iter, gtol, xtol, damping0,
                                   n_starts, max_retries, wbuf, u, th_star, tmp)
        ok_out[b] = ok
        retries_out[b] = extra
        if ok:
            rep_out[b, :] = row_weighted_mean(th_star, u)
        else:
            rep_out[b, :] = np.nan


@dataclass(frozen=True)
class RecycleConfig:
    B: int = 1000
    inner_scheme: WeightScheme = field(default_factory=lambda: WeightScheme("dirichlet"))
    outer_scheme: WeightScheme = field(default_factory=lambda: WeightScheme("dirichlet"))
    ci_level: float = 0.95
    ci_method: str = "basic_studentized"
    max_retries: int = 3
    fit_options: FitOptions = field(default_factory=FitOptions)

    def __post_init__(self):
        object.__setattr__(self, "inner_scheme", get_scheme(self.inner_scheme))
        object.__setattr__(self, "outer_scheme", get_scheme(self.outer_scheme))
        if self.B < 100:
            raise InvalidArgumentError("B must be at least 100")
        if not 0 < self.ci_level < 1:
            raise InvalidArgumentError("ci_level must lie in (0, 1)")
        if self.ci_method not in CI_METHODS:
            raise InvalidArgumentError(f"ci_method must be one of {CI_METHODS}")
        if self.max_retries < 0:
            raise InvalidArgumentError("max_retries must be nonnegative")


@dataclass
class RecycleRun:
    replicates: np.ndarray
    theta_sts: np.ndarray
    tau_N: float
    N: int
    intervals: np.ndarray
    drop_count: int
    B: int
    ci_level: float
    ci_method: str
    retries: int = 0

    @property
    def unreliable(self):
        return self.drop_count > UNRELIABLE_DROP_FRACTION * self.B

    @property
    def pivots(self):
        """(theta* - theta_STS) / tau_N per replicate."""
        return (self.replicates - self.theta_sts) / self.tau_N


UNRELIABLE_DROP_FRACTION = 0.2


class _Prepared:
    """Converged individuals of a fit, in canonical stream order."""

    def __init__(self, model, dataset, base_fit):
        by_id = {d.id: d for d in dataset.individuals}
        ids = list(base_fit.ids) if base_fit.ids else dataset.ids
        if len(ids) != base_fit.theta_hat_i.shape[0]:
            raise InvalidArgumentError("base fit does not match the dataset")
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise InvalidArgumentError(f"individuals {missing[:3]} are not in the dataset")
        order = canonical_order(ids)
        self.ids = [ids[k] for k in order]
        self.labels = np.array([id_label(i) for i in self.ids], dtype=np.uint64)
        self.theta_hat = np.ascontiguousarray(base_fit.theta_hat_i[order])
        sub = HierDataset([by_id[i] for i in self.ids])
        self.x, self.y, self.offsets = sub.flat
        self.sizes = sub.sizes
        self.N = len(self.ids)


def _key_of(rng):
    if isinstance(rng, np.random.Generator):
        return np.uint64(rng.integers(0, 2**64, dtype=np.uint64))
    if isinstance(rng, (int, np.integer)):
        return np.uint64(int(rng) % 2**64)
    raise InvalidArgumentError("rng must be a numpy Generator or an integer stream key")


def replicate_weights(model, dataset, base_fit, cfg, rng, attempt=0):
    """Weights a replicate with key ``rng`` draws: ({id: w_i}, {id: u_i}).

    ``attempt`` selects the retry draw of the inner weights.
    """
    prep = _Prepared(model, dataset, base_fit)
    rep_key = _key_of(rng)
    keys = child_keys(rep_key, prep.labels)
    inner = {}
    for i, ident in enumerate(prep.ids):
        w = np.empty(int(prep.sizes[i]))
        # compiled calls hand back Python ints; keep keys typed as uint64
        key = keys[i] if attempt == 0 else np.uint64(child_key(keys[i], np.uint64(attempt)))
        fill_weights(cfg.inner_scheme.code, key, w)
        inner[ident] = w
    u = np.empty(prep.N)
    fill_weights(cfg.outer_scheme.code, np.uint64(child_key(rep_key, _OUTER)), u)
    return inner, dict(zip(prep.ids, u))


def recycle_once(model, dataset, base_fit, cfg, rng):
    """One recycled replicate theta*_STS.

    Args:
        rng: integer replicate key, or a Generator a key is drawn from.

    Raises:
        ReplicateFailure: an individual's refit failed on every allowed draw.
    """
    prep = _Prepared(model, dataset, base_fit)
    p = model.p
    wbuf = np.empty(prep.x.size)
    u = np.empty(prep.N)
    th_star = np.empty((prep.N, p))
    tmp = np.empty(p)
    ok, _ = _one_replicate(model.code, prep.x, prep.y, prep.offsets, prep.theta_hat,
                           prep.labels, _key_of(rng), cfg.inner_scheme.code,
                           cfg.outer_scheme.code, model.lower, model.upper,
                           *cfg.fit_options.as_args(), int(cfg.max_retries), wbuf, u,
                           th_star, tmp)
    if not ok:
        raise ReplicateFailure("an inner refit failed on every weight draw")
    return row_weighted_mean(th_star, u)


def resolve_threads(threads=None):
    if threads is None:
        threads = int(os.environ.get("RECYCLED_STS_THREADS", "1") or 1)
    return max(1, int(threads))


def recycle_bootstrap(model, dataset, base_fit, cfg, rng, threads=None):
    """B recycled replicates and the configured interval.

    Replicates are independent; with ``threads > 1`` they are split into
    contiguous blocks run concurrently (the kernels release the GIL) and the
    result is identical to a serial run.
    """
    prep = _Prepared(model, dataset, base_fit)
    run_key = _key_of(rng)
    B, p = cfg.B, model.p
    reps = np.empty((B, p))
    ok = np.zeros(B, dtype=np.bool_)
    retries = np.zeros(B, dtype=np.int64)
    args = cfg.fit_options.as_args()

    def work(b0, b1):
        recycle_block(model.code, prep.x, prep.y, prep.offsets, prep.theta_hat, prep.labels,
                      run_key, b0, b1, cfg.inner_scheme.code, cfg.outer_scheme.code,
                      model.lower, model.upper, *args, int(cfg.max_retries), reps, ok,
                      retries)

    nt = min(resolve_threads(threads), B)
    if nt == 1:
        work(0, B)
    else:
        edges = np.linspace(0, B, nt + 1).astype(int)
        with ThreadPoolExecutor(nt) as ex:
            list(ex.map(work, edges[:-1], edges[1:]))

    run = RecycleRun(
        replicates=reps[ok], theta_sts=np.array(base_fit.theta_sts, dtype=float),
        tau_N=studentizing_tau(cfg.outer_scheme, prep.N), N=prep.N,
        intervals=np.full((p, 2), np.nan), drop_count=int(B - ok.sum()), B=B,
        ci_level=cfg.ci_level, ci_method=cfg.ci_method, retries=int(retries.sum()),
    )
    if run.replicates.shape[0] >= 100:
        run.intervals = build_ci(run, cfg.ci_level, cfg.ci_method)
    return run


def build_ci(run, level=None, method=None):
    """Per-coordinate (lo, hi) from the tau_N-studentized replicate pivots.

    basic_studentized reflects the pivot quantiles around theta_STS;
    percentile adds them.
    """
    level = run.ci_level if level is None else level
    method = run.ci_method if method is None else method
    if not 0 < level < 1:
        raise InvalidArgumentError("level must lie in (0, 1)")
    if method not in CI_METHODS:
        raise InvalidArgumentError(f"method must be one of {CI_METHODS}")
    if run.replicates.shape[0] < 100:
        raise InvalidArgumentError(
            f"need at least 100 surviving replicates, have {run.replicates.shape[0]}"
        )
    z = run.pivots
    q_lo = np.quantile(z, (1 - level) / 2, axis=0)
    q_hi = np.quantile(z, (1 + level) / 2, axis=0)
    th = np.asarray(run.theta_sts, dtype=float)
    if method == "basic_studentized":
        return np.column_stack([th - q_hi, th - q_lo])
    return np.column_stack([th + q_lo, th + q_hi])


def ks_to_normal(run, lambda_hat, coordinate=0):
    """sup-distance between sqrt(N)(theta* - theta)/(lambda tau_N) and N(0, 1)."""
    if not lambda_hat > 0:
        raise InvalidArgumentError("lambda_hat must be positive")
    r = np.sqrt(run.N) * run.pivots[:, coordinate] / lambda_hat
    return float(stats.kstest(r, "norm").statistic)
