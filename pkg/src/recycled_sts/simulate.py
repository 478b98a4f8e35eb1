"""Monte Carlo experiments: MSE, interval coverage and CLT diagnostics.

Every replicate draws its data from a Generator keyed by
(seed, N, n, replicate), so a cell gives the same numbers whether it runs
alone, inside a larger grid, serially or on several threads.
"""

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .errors import EstimationError, InvalidArgumentError
from .models import get_model
from .nls import FitOptions, IndividualData
from .recycle import RecycleConfig, recycle_bootstrap, resolve_threads
from .rng import root_key
from .sts import HierDataset, fit_sts

NOISE_KINDS = ("truncated_normal", "normal", "laplace")
TRUNCATION = 4.0
_TRUNC_SD = float(stats.truncnorm.std(-TRUNCATION, TRUNCATION))
INIT_OFFSET = 0.1
UNRELIABLE_DROP_RATE = 0.2


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "truncated_normal"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidArgumentError(f"noise kind must be one of {NOISE_KINDS}")


def sample_noise(spec, count, rng):
    """i.i.d. mean-zero draws with standard deviation ``spec.scale``.

    The truncated normal is N(0, 1) cut at +-4 and rescaled by its truncated
    standard deviation, so its variance is exactly scale^2.
    """
    if not spec.scale > 0:
        raise InvalidArgumentError("noise scale must be positive")
    if spec.kind == "normal":
        return rng.normal(0.0, spec.scale, size=count)
    if spec.kind == "laplace":
        return rng.laplace(0.0, spec.scale / np.sqrt(2.0), size=count)
    z = stats.truncnorm.rvs(-TRUNCATION, TRUNCATION, size=count, random_state=rng)
    return np.asarray(z) * (spec.scale / _TRUNC_SD)


def truncated_support(scale):
    """Half-width of the truncated-normal support at a given target sd."""
    return TRUNCATION * scale / _TRUNC_SD


@dataclass(frozen=True)
class SimDesign:
    model: str = "biexp4"
    theta0: tuple = (1.0, 0.8, -0.5, -1.0)
    N: int = 15
    n: int = 15
    sigma: float = 0.1
    lam: float = 0.1
    error_noise: str = "truncated_normal"
    effect_noise: str = "truncated_normal"
    t_range: tuple = (0.0, 8.0)
    M_rep: int = 200
    seed: int = 20240601

    def __post_init__(self):
        model = get_model(self.model)
        object.__setattr__(self, "theta0", tuple(float(v) for v in np.atleast_1d(self.theta0)))
        if len(self.theta0) != model.p:
            raise InvalidArgumentError(f"theta0 needs {model.p} entries for {self.model}")
        if self.N < 2:
            raise InvalidArgumentError("N must be at least 2")
        if self.n <= model.p:
            raise InvalidArgumentError("n must exceed the parameter count")
        if self.sigma < 0 or self.lam < 0:
            raise InvalidArgumentError("sigma and lambda must be nonnegative")
        for k in (self.error_noise, self.effect_noise):
            if k not in NOISE_KINDS:
                raise InvalidArgumentError(f"noise kind must be one of {NOISE_KINDS}")
        if not self.t_range[0] < self.t_range[1] or self.t_range[0] < 0:
            raise InvalidArgumentError("t_range must be an increasing interval in [0, inf)")

    @property
    def spec(self):
        return get_model(self.model)

    def inits(self):
        return np.asarray(self.theta0) + INIT_OFFSET


@dataclass
class Truth:
    b: np.ndarray
    theta_i: np.ndarray


def replicate_rng(seed, N, n, rep):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(N, n, rep)))


def gen_dataset(design, rng):
    """Simulate one hierarchical dataset and the random effects behind it."""
    model = design.spec
    N, n, p = design.N, design.n, model.p
    t = rng.uniform(design.t_range[0], design.t_range[1], size=(N, n))
    if design.lam > 0:
        b = sample_noise(NoiseSpec(design.effect_noise, design.lam), N * p, rng).reshape(N, p)
    else:
        b = np.zeros((N, p))
    theta_i = np.asarray(design.theta0) + b
    if design.sigma > 0:
        eps = sample_noise(NoiseSpec(design.error_noise, design.sigma), N * n, rng)
        eps = eps.reshape(N, n)
    else:
        eps = np.zeros((N, n))
    individuals = []
    for i in range(N):
        y = model.eval(theta_i[i], t[i]) + eps[i]
        individuals.append(IndividualData(str(i + 1), t[i], y))
    return HierDataset(individuals), Truth(b, theta_i)


@dataclass
class CellResult:
    N: int
    n: int
    mse: float
    coverage: float = float("nan")
    mean_ci_length: float = float("nan")
    drop_rate: float = 0.0
    failed_reps: int = 0
    replicates: int = 0

    @property
    def flagged(self):
        return self.drop_rate > UNRELIABLE_DROP_RATE


@dataclass
class SimReport:
    cells: list
    meta: dict = field(default_factory=dict)

    COLUMNS = ("N", "n", "mse", "coverage", "mean_ci_length", "drop_rate")

    def cell(self, N, n):
        for c in self.cells:
            if c.N == N and c.n == n:
                return c
        raise KeyError((N, n))

    def rows(self):
        return [[c.N, c.n, c.mse, c.coverage, c.mean_ci_length, c.drop_rate]
                for c in self.cells]


def config_hash(obj):
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _map(fn, items, threads):
    nt = resolve_threads(threads)
    if nt == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(nt) as ex:
        return list(ex.map(fn, items))


def _fit_replicate(design, rep, opts):
    rng = replicate_rng(design.seed, design.N, design.n, rep)
    data, truth = gen_dataset(design, rng)
    try:
        fit = fit_sts(design.spec, data, design.inits(), opts, covariance=False)
    except EstimationError:
        return data, None
    return data, fit


def _error_rep(design, rep, opts):
    """Signed error theta_STS - theta0 (NaN on failure) and the drop count."""
    data, fit = _fit_replicate(design, rep, opts)
    if fit is None:
        return np.full(len(design.theta0), np.nan), design.N
    return fit.theta_sts - np.asarray(design.theta0), fit.dropped


def _mse_rep(design, rep, opts):
    err, dropped = _error_rep(design, rep, opts)
    return float(err @ err), dropped


def _summarize(design, sq_errs, drops, extra=None):
    sq = np.asarray(sq_errs, dtype=float)
    ok = np.isfinite(sq)
    cell = CellResult(
        N=design.N, n=design.n, mse=float(np.mean(sq[ok])) if ok.any() else float("nan"),
        drop_rate=float(np.sum(drops) / (design.N * len(sq))),
        failed_reps=int(np.sum(~ok)), replicates=len(sq),
    )
    if extra:
        for k, v in extra.items():
            setattr(cell, k, v)
    return cell


def _meta(base, grid, M_rep, wall_time=None, **kw):
    meta = {
        "model": base.model, "theta0": list(base.theta0), "sigma": base.sigma,
        "lambda": base.lam, "error_noise": base.error_noise,
        "effect_noise": base.effect_noise, "t_range": list(base.t_range),
        "M_rep": int(M_rep), "seed": int(base.seed), "grid": [list(g) for g in grid],
        "init_rule": f"theta0 + {INIT_OFFSET}",
    }
    meta.update(kw)
    meta["config_hash"] = config_hash(meta)
    meta["wall_time"] = wall_time
    return meta


def run_mse_experiment(grid, base, M_rep=None, opts=None, threads=None):
    """MSE of theta_STS about theta0 for each (N, n) in ``grid``."""
    M_rep = int(M_rep or base.M_rep)
    opts = opts or FitOptions()
    t0 = time.time()
    cells = []
    for N, n in grid:
        design = replace(base, N=int(N), n=int(n))
        out = _map(lambda r: _mse_rep(design, r, opts), range(M_rep), threads)
        cells.append(_summarize(design, [o[0] for o in out], [o[1] for o in out]))
    return SimReport(cells, _meta(base, grid, M_rep, experiment="mse",
                                  wall_time=time.time() - t0))


def _coverage_rep(design, rep, opts, mode, cfg, level, threads_inner):
    data, fit = _fit_replicate(design, rep, opts)
    if fit is None:
        return np.nan, np.nan, np.nan, design.N, 0
    theta0 = design.theta0[0]
    est = float(fit.theta_sts[0])
    if mode == "asymptotic":
        z = stats.norm.ppf(0.5 + level / 2)
        half = z * np.sqrt(fit.lambda_hat_sq_uncorrected / fit.N_used)
        lo, hi = est - half, est + half
        rdrop = 0
    else:
        key = root_key(design.seed, design.N, design.n, rep, 1)
        run = recycle_bootstrap(design.spec, data, fit, cfg, int(key), threads=threads_inner)
        rdrop = run.drop_count
        if run.replicates.shape[0] < 100:
            return (est - theta0) ** 2, np.nan, np.nan, fit.dropped, rdrop
        lo, hi = run.intervals[0]
    covered = float(lo <= theta0 <= hi)
    return (est - theta0) ** 2, covered, hi - lo, fit.dropped, rdrop


def run_coverage_experiment(grid, base, M_rep=None, mode="asymptotic", cfg=None,
                            opts=None, threads=None, level=0.95):
    """Coverage and mean length of nominal ``level`` intervals for theta0 (p = 1).

    ``mode="asymptotic"`` uses theta_STS +- z lambda_hat / sqrt(N) with the
    uncorrected lambda_hat^2 (divisor N - 1); ``mode="recycled"`` uses
    :func:`recycle_bootstrap` with ``cfg`` on every simulated dataset.
    """
    if base.spec.p != 1:
        raise InvalidArgumentError("coverage experiments need a one-parameter model")
    if mode not in ("asymptotic", "recycled"):
        raise InvalidArgumentError("mode must be 'asymptotic' or 'recycled'")
    M_rep = int(M_rep or base.M_rep)
    opts = opts or FitOptions()
    if mode == "recycled":
        cfg = cfg or RecycleConfig(B=500)
        level = cfg.ci_level
    t0 = time.time()
    cells = []
    for N, n in grid:
        design = replace(base, N=int(N), n=int(n))
        out = _map(lambda r: _coverage_rep(design, r, opts, mode, cfg, level, 1),
                   range(M_rep), threads)
        cov = np.array([o[1] for o in out], dtype=float)
        length = np.array([o[2] for o in out], dtype=float)
        ok = np.isfinite(cov)
        cell = _summarize(design, [o[0] if np.isfinite(o[1]) else np.nan for o in out],
                          [o[3] for o in out])
        cell.coverage = float(np.mean(cov[ok])) if ok.any() else float("nan")
        cell.mean_ci_length = float(np.mean(length[ok])) if ok.any() else float("nan")
        cell.failed_reps = int(np.sum(~ok))
        cells.append(cell)
    extra = {"experiment": "coverage", "mode": mode, "level": level,
             "wall_time": time.time() - t0}
    if mode == "recycled":
        extra.update(B=cfg.B, inner_weights=cfg.inner_scheme.kind,
                     outer_weights=cfg.outer_scheme.kind, ci_method=cfg.ci_method)
    return SimReport(cells, _meta(base, grid, M_rep, **extra))


@dataclass
class CltDiagnostics:
    ks_RN: float
    ks_RN_star: float
    ks_two_sample: float
    R_N: np.ndarray
    R_N_star: np.ndarray


def diagnose_clt(design, R, cfg=None, opts=None, threads=None):
    """KS distances for the sampling and recycled pivots against N(0, 1).

    R_N = sqrt(N)(theta_STS - theta0)/lambda over ``R`` simulated datasets.
    R*_N = sqrt(N)(theta* - theta_STS)/(lambda tau_N) from recycling the first
    of them with ``cfg``. Both use the true lambda of the design.
    """
    if not design.lam > 0:
        raise InvalidArgumentError("R_N divides by lambda; lambda must be positive")
    if design.spec.p != 1:
        raise InvalidArgumentError("CLT diagnostics are defined for one-parameter models")
    opts = opts or FitOptions()
    cfg = cfg or RecycleConfig(B=2000)
    errs = _map(lambda r: _error_rep(design, r, opts)[0][0], range(R), threads)
    errs = np.asarray(errs)
    R_N = np.sqrt(design.N) * errs[np.isfinite(errs)] / design.lam
    data, fit = _fit_replicate(design, 0, opts)
    if fit is None:
        raise EstimationError("stage one failed on the dataset chosen for recycling")
    run = recycle_bootstrap(design.spec, data, fit, cfg,
                            int(root_key(design.seed, design.N, design.n, 0, 1)), threads)
    R_star = np.sqrt(design.N) * run.pivots[:, 0] / design.lam
    return CltDiagnostics(
        ks_RN=float(stats.kstest(R_N, "norm").statistic),
        ks_RN_star=float(stats.kstest(R_star, "norm").statistic),
        ks_two_sample=float(stats.ks_2samp(R_star, R_N).statistic),
        R_N=R_N, R_N_star=R_star,
    )


def design_dict(design):
    return asdict(design)
