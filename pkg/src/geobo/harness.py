"""Experiment runner: method x trial matrices, CSV records and summaries."""

import csv
import io
import json
import os
import sys
import traceback
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import yaml
from scipy.stats import binomtest

from . import __version__, _core
from .benchmarks import KINDS, make_embedded_objective, simple_regret
from .bo import METHODS, BoAborted, BoConfig, SearchSpace, run_method

RECORD_HEADER = ("method", "trial", "iteration", "y", "best_y", "simple_regret", "elapsed_ms")
LOG_EPS = 1e-12

# flat config keys and the dataclass field each one sets
CONFIG_KEYS = {
    "space.kind": "space_kind",
    "space.dim_D": "dim_D",
    "space.dim_d": "dim_d",
    "space.eig_lo": "eig_lo",
    "space.eig_hi": "eig_hi",
    "objective": "objective",
    "methods": "methods",
    "trials": "trials",
    "iters": "iters",
    "n_init": "n_init",
    "seed": "seed",
    "out_dir": "out_dir",
    "jobs": "jobs",
    "acq_restarts": "acq_restarts",
    "refit_every": "refit_every",
    "deterministic": "deterministic",
    "trace": "trace",
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    space_kind: str = "sphere"
    dim_D: int = 10
    dim_d: int = 2
    eig_lo: Optional[float] = None
    eig_hi: Optional[float] = None
    objective: str = "ackley"
    methods: List[str] = field(default_factory=lambda: ["hd_gabo", "random", "euclidean_gp"])
    trials: int = 30
    iters: int = 100
    n_init: int = 5
    seed: int = 0
    out_dir: str = "results"
    jobs: int = 1
    acq_restarts: int = 5
    refit_every: int = 1
    deterministic: bool = False
    trace: bool = False

    def validate(self):
        if self.space_kind not in ("sphere", "spd"):
            raise ConfigError(f"space.kind must be 'sphere' or 'spd', got {self.space_kind!r}")
        if self.objective not in KINDS:
            raise ConfigError(f"objective must be one of {KINDS}")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("methods must not repeat")
        if self.trials < 1 or self.iters < 0 or self.n_init < 1 or self.jobs < 1:
            raise ConfigError("need trials >= 1, iters >= 0, n_init >= 1, jobs >= 1")
        if not 1 <= self.dim_d < self.dim_D:
            raise ConfigError("need 1 <= space.dim_d < space.dim_D")
        if self.space_kind == "spd":
            if self.eig_lo is None or self.eig_hi is None:
                raise ConfigError("SPD spaces need space.eig_lo and space.eig_hi")
            if not 0 < self.eig_lo < self.eig_hi:
                raise ConfigError("need 0 < space.eig_lo < space.eig_hi")
        if self.acq_restarts < 0 or self.refit_every < 1:
            raise ConfigError("need acq_restarts >= 0 and refit_every >= 1")
        return self

    @property
    def space(self):
        bounds = (self.eig_lo, self.eig_hi) if self.space_kind == "spd" else None
        return SearchSpace(self.space_kind, self.dim_D, bounds)

    def as_flat(self):
        d = asdict(self)
        return {k: d[v] for k, v in CONFIG_KEYS.items()}


def _coerce(name, value):
    """Cast a raw config value to the type of field ``name``."""
    default = {f.name: f for f in fields(ExperimentConfig)}[name]
    try:
        if name == "methods":
            if isinstance(value, str):
                value = [m.strip() for m in value.split(",") if m.strip()]
            return list(value)
        if name in ("eig_lo", "eig_hi"):
            return None if value is None else float(value)
        if name in ("deterministic", "trace"):
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
        if default.type in (int, "int"):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {name}: {value!r}") from None


def _flatten(d, prefix=""):
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def config_from_mapping(mapping, overrides=None):
    """Build a validated config from flat (or nested) keys plus overrides."""
    flat = _flatten(mapping or {})
    flat.update({k: v for k, v in (overrides or {}).items() if v is not None})
    kwargs = {}
    for key, value in flat.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        name = CONFIG_KEYS[key]
        kwargs[name] = _coerce(name, value)
    return ExperimentConfig(**kwargs).validate()


def load_config(path, overrides=None):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a key-value mapping")
    return config_from_mapping(data, overrides)


# ---------------------------------------------------------------- seeds


def _seed(*entropy):
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def trial_seeds(master_seed, trial, methods=()):
    """Seeds for one trial. Objective and initial design ignore the method."""
    seeds = {"objective": _seed(master_seed, trial, 0), "init": _seed(master_seed, trial, 1)}
    for m in methods:
        seeds[m] = _seed(master_seed, trial, 2, zlib.crc32(m.encode()))
    return seeds


# ---------------------------------------------------------------- running


@dataclass
class TrialOutcome:
    trial: int
    rows: list
    seeds: dict
    aborts: list
    traces: dict


def run_trial(cfg: ExperimentConfig, trial: int) -> TrialOutcome:
    seeds = trial_seeds(cfg.seed, trial, cfg.methods)
    space = cfg.space
    bounds = (cfg.eig_lo, cfg.eig_hi) if cfg.space_kind == "spd" else None
    obj = make_embedded_objective(cfg.space_kind, cfg.dim_D, cfg.dim_d, cfg.objective, seeds["objective"],
                                  eig_bounds=bounds or (1e-3, 5.0))
    rows, aborts, traces = [], [], {}
    for method in cfg.methods:
        bcfg = BoConfig(method=method, n_init=cfg.n_init, n_iter=cfg.iters,
                        latent_dim=cfg.dim_d if method == "hd_gabo" else None,
                        acq_restarts=cfg.acq_restarts, refit_every=cfg.refit_every,
                        rng_seed=seeds[method], init_seed=seeds["init"])
        try:
            res = run_method(obj, space, bcfg)
            history, elapsed = res.history, res.elapsed_ms
            traces[method] = res.trace
        except BoAborted as exc:
            history, elapsed = exc.history, exc.elapsed_ms
            aborts.append(dict(method=method, trial=trial, reason=str(exc), n_obs=len(history)))
        except Exception as exc:  # a failing method must not sink the other methods
            history, elapsed = [], []
            aborts.append(dict(method=method, trial=trial, reason=f"{type(exc).__name__}: {exc}",
                               n_obs=0, traceback=traceback.format_exc()))
        if not history:
            continue
        ys = np.array([o.y for o in history])
        best = np.minimum.accumulate(ys)
        regret = simple_regret(ys, obj.f_star)
        for i in range(len(ys)):
            rows.append((method, trial, i + 1, ys[i], best[i], regret[i],
                         None if cfg.deterministic or i >= len(elapsed) else elapsed[i]))
    return TrialOutcome(trial, rows, seeds, aborts, traces)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_records(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_HEADER)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_records(path):
    """Records as a list of dicts with numeric fields parsed."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RECORD_HEADER:
            raise ValueError(f"unexpected header {reader.fieldnames}")
        for r in reader:
            out.append(dict(method=r["method"], trial=int(r["trial"]), iteration=int(r["iteration"]),
                            y=float(r["y"]), best_y=float(r["best_y"]),
                            simple_regret=float(r["simple_regret"]),
                            elapsed_ms=float(r["elapsed_ms"]) if r["elapsed_ms"] else None))
    return out


def summarize(records):
    """Per (method, iteration) median and quartiles of ``log10(regret + 1e-12)``.

    Returns ``(summary_rows, final_rows)``; ``final_rows`` holds each trial's
    last-iteration value for boxplots.
    """
    groups, last = {}, {}
    for r in records:
        v = float(np.log10(r["simple_regret"] + LOG_EPS))
        groups.setdefault((r["method"], r["iteration"]), []).append(v)
        key = (r["method"], r["trial"])
        if key not in last or r["iteration"] > last[key][0]:
            last[key] = (r["iteration"], r["simple_regret"], v)
    summary = []
    for (m, it), vals in sorted(groups.items()):
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        summary.append((m, it, float(med), float(q1), float(q3), len(vals)))
    final = [(m, t, it, reg, lv) for (m, t), (it, reg, lv) in sorted(last.items())]
    return summary, final


def write_summary(summary, final, out_dir):
    out_dir = Path(out_dir)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "iteration", "median_log10_regret", "q1_log10_regret", "q3_log10_regret", "n_trials"))
        for row in summary:
            w.writerow([_fmt(v) for v in row])
    with open(out_dir / "final.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "trial", "iteration", "simple_regret", "log10_regret"))
        for row in final:
            w.writerow([_fmt(v) for v in row])


def _write_meta(cfg, outcomes, path):
    buf = io.StringIO()
    buf.write(f"geobo {__version__}\nkernel_backend {_core.BACKEND}\n")
    buf.write(f"python {sys.version.split()[0]} numpy {np.__version__}\n")
    buf.write("[config]\n")
    for k, v in cfg.as_flat().items():
        buf.write(f"{k} = {','.join(v) if isinstance(v, list) else v}\n")
    buf.write("[seeds]\n")
    for o in outcomes:
        buf.write(f"trial {o.trial}: " + " ".join(f"{k}={v}" for k, v in o.seeds.items()) + "\n")
    buf.write("[aborts]\n")
    for o in outcomes:
        for a in o.aborts:
            buf.write(f"{a['method']} trial {a['trial']} after {a['n_obs']} observations: {a['reason']}\n")
    Path(path).write_text(buf.getvalue())


def _write_traces(outcomes, out_dir):
    tdir = Path(out_dir) / "traces"
    tdir.mkdir(exist_ok=True)
    for o in outcomes:
        for method, trace in o.traces.items():
            with open(tdir / f"{method}_trial{o.trial}.jsonl", "w") as fh:
                for entry in trace:
                    fh.write(json.dumps(entry, default=float) + "\n")


def run_experiment(cfg: ExperimentConfig, progress=None):
    """Run every (method, trial) pair and write the outputs to ``cfg.out_dir``.

    Returns ``(out_dir, outcomes)``. Trials run in ``cfg.jobs`` processes and
    are merged in trial order, so the files do not depend on scheduling.
    """
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trials = range(cfg.trials)
    if cfg.jobs == 1:
        outcomes = []
        for t in trials:
            outcomes.append(run_trial(cfg, t))
            if progress:
                progress(outcomes[-1])
    else:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            futs = [ex.submit(run_trial, cfg, t) for t in trials]
            outcomes = []
            for f in futs:
                outcomes.append(f.result())
                if progress:
                    progress(outcomes[-1])
    outcomes.sort(key=lambda o: o.trial)
    rows = [r for o in outcomes for r in o.rows]
    write_records(rows, out_dir / "records.csv")
    summary, final = summarize(read_records(out_dir / "records.csv"))
    write_summary(summary, final, out_dir)
    _write_meta(cfg, outcomes, out_dir / "meta.txt")
    if cfg.trace:
        _write_traces(outcomes, out_dir)
    return out_dir, outcomes


def final_regrets(records, method):
    """Final simple regret per trial for ``method``, ordered by trial."""
    last = {}
    for r in records:
        if r["method"] == method and (r["trial"] not in last or r["iteration"] > last[r["trial"]][0]):
            last[r["trial"]] = (r["iteration"], r["simple_regret"])
    return {t: v[1] for t, v in sorted(last.items())}


def paired_sign_test(a: Sequence[float], b: Sequence[float]):
    """One-sided sign test that ``a`` tends to be below ``b``; ties are dropped.

    Returns ``(wins, n_untied, p_value)``.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    wins = int(np.sum(a < b))
    n = int(np.sum(a != b))
    if n == 0:
        return 0, 0, 1.0
    return wins, n, float(binomtest(wins, n, 0.5, alternative="greater").pvalue)


def default_jobs():
    return max(1, os.cpu_count() or 1)
