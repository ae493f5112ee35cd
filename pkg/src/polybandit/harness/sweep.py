"""Grid sweeps over d, T or H with log-log slope fits on per-point medians."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .config import ConfigError, ExperimentConfig
from .runners import run_config

AXES = {"d": "environment.d", "T": "horizon", "H": "environment.H"}


class IncompleteGrid(RuntimeError):
    pass


@dataclass
class SlopeFit:
    slope: float
    stderr: float
    intercept: float

    def __str__(self):
        return f"{self.slope:.3f} +- {self.stderr:.3f}"


def fit_loglog(x, y) -> SlopeFit:
    """Least-squares slope of log y against log x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise IncompleteGrid("need at least 3 points for a slope")
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise IncompleteGrid("nonpositive or missing values in the grid")
    r = stats.linregress(np.log(x), np.log(y))
    return SlopeFit(float(r.slope), float(r.stderr), float(r.intercept))


def metric_of(trace, metric: str) -> Optional[float]:
    if metric == "regret":
        return trace.final_regret
    v = trace.summary.get(metric)
    return None if v is None else float(v)


@dataclass
class SweepResult:
    axis: str
    values: list
    metric: str
    medians: list
    per_seed: list                 # list of lists, None for failed seeds
    fit: Optional[SlopeFit] = None
    failures: dict = field(default_factory=dict)

    def to_csv(self, path=None) -> str:
        lines = [f"{self.axis},median_{self.metric},n_ok,n_seeds"]
        for v, med, vals in zip(self.values, self.medians, self.per_seed):
            ok = [x for x in vals if x is not None]
            lines.append(f"{v},{repr(float(med)) if med is not None else 'NA'},{len(ok)},{len(vals)}")
        if self.fit is not None:
            lines.append(f"# slope,{self.fit.slope!r},{self.fit.stderr!r}")
        text = "\r\n".join(lines) + "\r\n"
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _job(args):
    cfg, seed, metric = args
    tr = run_config(cfg, seed)
    return metric_of(tr, metric), tr.flags


def workers_default() -> int:
    env = os.environ.get("POLYBANDIT_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


def sweep(base: ExperimentConfig, axis: str, values, metric: str = "regret", seeds=None,
          workers: Optional[int] = None, min_seeds: int = 20, allow_missing: bool = False) -> SweepResult:
    """Run base with the axis set to each value, over every seed, and fit the slope.

    Results are merged in config order, so the worker count never changes them.
    """
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {sorted(AXES)}")
    values = list(values)
    if len(values) < 3:
        raise IncompleteGrid("a sweep needs at least 3 axis points")
    seeds = list(base.seeds if seeds is None else seeds)
    if len(seeds) < min_seeds:
        raise ConfigError(f"scaling fits use medians over >= {min_seeds} seeds, got {len(seeds)}")
    cfgs = [base.replace(**{AXES[axis]: v}) for v in values]
    jobs = [(c, s, metric) for c in cfgs for s in seeds]
    workers = workers_default() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            out = list(ex.map(_job, jobs, chunksize=1))
    else:
        out = [_job(j) for j in jobs]
    per, meds, failures = [], [], {}
    for i, v in enumerate(values):
        vals = [out[i * len(seeds) + j][0] for j in range(len(seeds))]
        per.append(vals)
        ok = [x for x in vals if x is not None]
        if len(ok) < len(vals):
            failures[v] = len(vals) - len(ok)
        meds.append(float(np.median(ok)) if ok and (allow_missing or len(ok) == len(vals)) else None)
    fit = None
    if all(m is not None for m in meds):
        fit = fit_loglog(values, meds)
    elif not allow_missing:
        raise IncompleteGrid(f"missing results at {failures}")
    return SweepResult(axis, values, metric, meds, per, fit, failures)
