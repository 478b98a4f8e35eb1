"""File formats: dataset CSV, experiment configs, report CSV/SVG, run manifests."""

import configparser
import csv
import json
import math
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import __version__
from .errors import ConfigError, InvalidArgumentError
from .models import MODELS, get_model
from .nls import IndividualData
from .recycle import CI_METHODS, RecycleConfig
from .simulate import NOISE_KINDS, SimDesign, config_hash
from .sts import HierDataset
from .weights import SCHEMES, get_scheme

DATASET_HEADER = ("id", "time", "value")


class DataFormatError(InvalidArgumentError):
    """A dataset file that cannot be parsed; the message names the line."""


def fmt(x):
    """Six significant digits, the precision used for every numeric output."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.6g}"


def read_dataset(path):
    """Parse an ``id,time,value`` CSV into a :class:`HierDataset`.

    Rows for an id may be scattered through the file; individuals keep the
    order in which their id first appears.
    """
    groups = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if tuple(h.strip().lower() for h in header) != DATASET_HEADER:
            raise DataFormatError(f"line 1: header must be id,time,value, got {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise DataFormatError(f"line {line}: expected 3 fields, got {len(row)}")
            ident = row[0].strip()
            if not ident:
                raise DataFormatError(f"line {line}: empty id")
            try:
                t, v = float(row[1]), float(row[2])
            except ValueError:
                raise DataFormatError(f"line {line}: time and value must be numbers") from None
            if not (math.isfinite(t) and math.isfinite(v)):
                raise DataFormatError(f"line {line}: non-finite number")
            if t < 0:
                raise DataFormatError(f"line {line}: negative time {t}")
            groups.setdefault(ident, ([], []))
            groups[ident][0].append(t)
            groups[ident][1].append(v)
    if len(groups) < 2:
        raise DataFormatError(f"{path}: need at least 2 individuals, found {len(groups)}")
    return HierDataset([IndividualData(k, np.array(t), np.array(v)) for k, (t, v) in groups.items()])


def write_dataset(dataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_HEADER)
        for ind in dataset.individuals:
            for t, v in zip(ind.x, ind.y):
                w.writerow([ind.id, repr(float(t)), repr(float(v))])


def write_table(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([c if isinstance(c, str) else fmt(c) for c in r])


def read_table(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def write_manifest(path, command, seed, config, wall_time, drops, extra=None):
    manifest = {
        "command": command,
        "config_hash": config_hash(config),
        "config": config,
        "seed": seed,
        "version": __version__,
        "wall_time": round(float(wall_time), 3),
        "drops": drops,
    }
    if extra:
        manifest.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------- configs

PAPER_SCALE = {"mse": 1000, "coverage": 2000, "B": 1000}
DESK_SCALE = {"mse": 200, "coverage": 500, "B": 500}

CONFIG_KEYS = {
    "experiment": "mse or coverage",
    "mode": "asymptotic or recycled (coverage only)",
    "model": f"one of {sorted(MODELS)}",
    "theta0": "comma-separated true parameter vector",
    "N": "comma-separated list of population sizes",
    "n": "comma-separated list of per-individual sample sizes",
    "sigma": "within-individual error sd",
    "lambda": "random-effect sd",
    "error_noise": f"one of {NOISE_KINDS}",
    "effect_noise": f"one of {NOISE_KINDS}",
    "t_max": "design times are uniform on [0, t_max]",
    "M_rep": "Monte Carlo replicates per cell",
    "B": "recycled replicates per dataset",
    "inner_weights": f"one of {SCHEMES}",
    "outer_weights": f"one of {SCHEMES}",
    "ci_level": "nominal interval level",
    "ci_method": f"one of {CI_METHODS}",
    "seed": "integer master seed",
}


@dataclass
class ExperimentConfig:
    experiment: str
    base: SimDesign
    grid: list
    M_rep: int
    mode: str = "asymptotic"
    recycle: RecycleConfig = None
    ci_level: float = 0.95
    raw: dict = field(default_factory=dict)

    def as_dict(self):
        d = dict(self.raw)
        d["M_rep"] = self.M_rep
        if self.recycle is not None:
            d["B"] = self.recycle.B
        return d


def bundled_configs():
    root = resources.files("recycled_sts") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))


def resolve_config_path(name_or_path):
    if os.path.exists(name_or_path):
        return name_or_path
    res = resources.files("recycled_sts") / "configs" / f"{name_or_path}.ini"
    if res.is_file():
        return str(res)
    raise ConfigError(f"no config file or bundled config named {name_or_path!r}")


def _get(sec, key, conv, default=None):
    if key not in sec:
        if default is None:
            raise ConfigError(f"config key {key!r} is required")
        return default
    try:
        return conv(sec[key])
    except (ValueError, InvalidArgumentError) as e:
        raise ConfigError(f"config key {key!r}: {e}") from None


def _floats(s):
    return tuple(float(v) for v in s.split(",") if v.strip())


def _ints(s):
    return [int(v) for v in s.split(",") if v.strip()]


def _choice(options):
    def conv(s):
        s = s.strip()
        if s not in options:
            raise ValueError(f"{s!r} not in {tuple(options)}")
        return s
    return conv


def load_config(path, paper_scale=False):
    """Read an experiment config (INI file with a single ``[experiment]`` section)."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as e:
        raise ConfigError(f"{path}: {e}") from None
    if "experiment" not in cp:
        raise ConfigError(f"{path}: missing [experiment] section")
    sec = cp["experiment"]
    for key in sec:
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    experiment = _get(sec, "experiment", _choice(("mse", "coverage")))
    mode = _get(sec, "mode", _choice(("asymptotic", "recycled")), "asymptotic")
    model = _get(sec, "model", _choice(tuple(MODELS)))
    Ns, ns = _get(sec, "N", _ints), _get(sec, "n", _ints)
    if not Ns or not ns:
        raise ConfigError("config keys 'N' and 'n' need at least one value")
    scale = PAPER_SCALE if paper_scale else DESK_SCALE
    M_default = scale["mse"] if experiment == "mse" else scale["coverage"]
    M_rep = M_default if paper_scale else _get(sec, "M_rep", int, M_default)
    try:
        base = SimDesign(
            model=model,
            theta0=_get(sec, "theta0", _floats),
            N=Ns[0], n=ns[0],
            sigma=_get(sec, "sigma", float),
            lam=_get(sec, "lambda", float),
            error_noise=_get(sec, "error_noise", _choice(NOISE_KINDS), "truncated_normal"),
            effect_noise=_get(sec, "effect_noise", _choice(NOISE_KINDS), "truncated_normal"),
            t_range=(0.0, _get(sec, "t_max", float, 8.0)),
            M_rep=M_rep,
            seed=_get(sec, "seed", int, 20240601),
        )
        for N in Ns:
            for n in ns:
                SimDesign(**{**base.__dict__, "N": N, "n": n})
    except InvalidArgumentError as e:
        raise ConfigError(f"invalid design: {e}") from None
    if experiment == "coverage" and get_model(model).p != 1:
        raise ConfigError("config key 'model': coverage experiments need a one-parameter model")
    ci_level = _get(sec, "ci_level", float, 0.95)
    recycle = None
    if experiment == "coverage" and mode == "recycled":
        B = scale["B"] if paper_scale else _get(sec, "B", int, scale["B"])
        try:
            recycle = RecycleConfig(
                B=B,
                inner_scheme=get_scheme(_get(sec, "inner_weights", str, "dirichlet")),
                outer_scheme=get_scheme(_get(sec, "outer_weights", str, "dirichlet")),
                ci_level=ci_level,
                ci_method=_get(sec, "ci_method", str, "basic_studentized"),
            )
        except InvalidArgumentError as e:
            raise ConfigError(f"invalid recycle settings: {e}") from None
    return ExperimentConfig(
        experiment=experiment, base=base, grid=[(N, n) for N in Ns for n in ns],
        M_rep=M_rep, mode=mode, recycle=recycle, ci_level=ci_level, raw=dict(sec),
    )


# ------------------------------------------------------------------- plots

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def write_svg(path, report, metric, width=480, height=320):
    """Line chart of ``metric`` against n with one series per N."""
    series = {}
    for c in report.cells:
        series.setdefault(c.N, []).append((c.n, getattr(c, metric)))
    xs = sorted({c.n for c in report.cells})
    ys = [v for pts in series.values() for _, v in pts if math.isfinite(v)]
    lo, hi = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    ml, mr, mt, mb = 60, 90, 30, 40
    pw, ph = width - ml - mr, height - mt - mb

    def px(n):
        i = xs.index(n)
        return ml + (pw * i / (len(xs) - 1) if len(xs) > 1 else pw / 2)

    def py(v):
        return mt + ph * (1 - (v - lo) / (hi - lo))

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<text x="{width / 2}" y="18" text-anchor="middle">{metric} vs n</text>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>']
    for n in xs:
        out.append(f'<text x="{px(n):.1f}" y="{mt + ph + 15}" text-anchor="middle">{n}</text>')
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        out.append(f'<text x="{ml - 5}" y="{py(v) + 4:.1f}" text-anchor="end">{fmt(v)}</text>')
    for j, (N, pts) in enumerate(sorted(series.items())):
        colour = _PALETTE[j % len(_PALETTE)]
        good = [(n, v) for n, v in sorted(pts) if math.isfinite(v)]
        if good:
            coords = " ".join(f"{px(n):.1f},{py(v):.1f}" for n, v in good)
            out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{coords}"/>')
        ly = mt + 14 * j + 8
        out.append(f'<line x1="{ml + pw + 10}" y1="{ly}" x2="{ml + pw + 28}" y2="{ly}" '
                   f'stroke="{colour}" stroke-width="1.5"/>')
        out.append(f'<text x="{ml + pw + 32}" y="{ly + 4}">N={N}</text>')
    out.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
