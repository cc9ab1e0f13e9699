"""Experiment drivers: seeded runs, density export, ad-hoc joining, buffer ablation, sweeps."""

from __future__ import annotations

import csv
import itertools
import json
import time
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..core import EnvModel, ValidationError, forward_step, induce_flow, mix_distributions, validate_distribution
from ..deep import IterationMetrics, evaluate, train
from ..envs import random_game
from ..exact import fp_run, omd_run, theorem1_check
from .checkpoints import save_network_checkpoint, save_tabular_checkpoint
from .config import ExperimentConfig, dumps
from .distributions import generate_distribution_set

METRICS_SCHEMA = "# schema: mfg-omd-metrics v1"
METRIC_COLUMNS = (
    "iteration",
    "exploitability_mean",
    "exploitability_per_dist",
    "loss_mean",
    "loss_std",
    "model_params",
    "model_bytes",
)
TIMING_SCHEMA = "# schema: mfg-omd-timing v1"
SUMMARY_SCHEMA = "# schema: mfg-omd-summary v1"
SUMMARY_COLUMNS = ("iteration", "n_runs", "exploitability_mean", "exploitability_std")
BYTES_PER_PARAM = 8  # float64


class RunFailure(RuntimeError):
    """A run aborted; ``record`` is the failure artifact that was written."""

    def __init__(self, message: str, record: Path | None):
        super().__init__(message)
        self.record = record


@dataclass
class RunResult:
    root: Path
    traces: dict = field(default_factory=dict)
    test_exploitability: dict = field(default_factory=dict)
    summary: Path | None = None

    @property
    def final(self) -> dict:
        return {seed: trace[-1] for seed, trace in self.traces.items()}


def _fmt(v: float) -> str:
    return repr(float(v))


class MetricsWriter:
    """Streams one CSV row per iteration; wall times go to a separate file."""

    def __init__(self, run_dir: Path):
        self.metrics = open(run_dir / "metrics.csv", "w", newline="")
        self.timing = open(run_dir / "timing.csv", "w", newline="")
        self.metrics.write(METRICS_SCHEMA + "\n")
        self.timing.write(TIMING_SCHEMA + "\n")
        self._m = csv.writer(self.metrics, lineterminator="\n")
        self._t = csv.writer(self.timing, lineterminator="\n")
        self._m.writerow(METRIC_COLUMNS)
        self._t.writerow(("iteration", "wall_time"))

    def write(self, row: IterationMetrics) -> None:
        self._m.writerow((
            row.iteration,
            _fmt(row.mean_exploitability),
            ";".join(_fmt(v) for v in row.exploitability),
            _fmt(row.loss_mean),
            _fmt(row.loss_std),
            row.stored_params,
            row.stored_params * BYTES_PER_PARAM,
        ))
        self._t.writerow((row.iteration, "%.6f" % row.wall_time))
        self.metrics.flush()
        self.timing.flush()

    def close(self) -> None:
        self.metrics.close()
        self.timing.close()


def read_metrics(path) -> list:
    """Rows of a metrics CSV as dicts (schema line checked and skipped)."""
    with open(path, newline="") as fh:
        first = fh.readline().rstrip("\n")
        if first != METRICS_SCHEMA:
            raise ValidationError(f"{path} has schema {first!r}, expected {METRICS_SCHEMA!r}")
        return list(csv.DictReader(fh))


def seed_dir_name(seed) -> str:
    return "exact" if seed is None else f"seed-{seed}"


def _run_exact(config: ExperimentConfig, model: EnvModel, dists: list, run_dir: Path) -> list:
    """Tabular FP/OMD once per training distribution; rows average over distributions."""
    K, tau = config.train.iterations, config.train.tau
    writer = MetricsWriter(run_dir)
    start = time.perf_counter()
    try:
        if config.algorithm == "fp":
            results = [fp_run(model, mu0, K) for mu0 in dists]
        else:
            results = [omd_run(model, mu0, tau, K) for mu0 in dists]
        elapsed = (time.perf_counter() - start) / K
        table = (model.horizon + 1) * model.n_states * model.n_actions
        trace = []
        for k in range(K):
            values = [r.trace[k] for r in results]
            row = IterationMetrics(k + 1, values, 0.0, 0.0, elapsed, table * len(dists), 0, 0)
            writer.write(row)
            trace.append(row.mean_exploitability)
    finally:
        writer.close()
    meta = {"algorithm": config.algorithm, "config_digest": config.digest(), "iteration": K}
    save_tabular_checkpoint(run_dir / "checkpoint.txt", [r.policy for r in results], model, meta)
    return trace


def _run_deep(config: ExperimentConfig, model: EnvModel, dists: list, seed: int, run_dir: Path):
    tcfg = config.train.replace(seed=seed)
    writer = MetricsWriter(run_dir)
    meta = {"algorithm": config.algorithm, "config_digest": config.digest(), "seed": seed}
    ckpt_dir = run_dir / "checkpoints"

    def on_iteration(row, networks, buffer):
        writer.write(row)
        if config.checkpoint_every and row.iteration % config.checkpoint_every == 0:
            ckpt_dir.mkdir(exist_ok=True)
            save_network_checkpoint(ckpt_dir / f"iter-{row.iteration:04d}.txt", networks, model, tcfg.variant,
                                    tcfg.tau, dict(meta, iteration=row.iteration))

    try:
        result = train(model, dists, tcfg, on_iteration=on_iteration)
    finally:
        writer.close()
    save_network_checkpoint(run_dir / "checkpoint.txt", result.networks, model, tcfg.variant, tcfg.tau,
                            dict(meta, iteration=tcfg.iterations))
    return result


def _write_failure(run_dir: Path, config: ExperimentConfig, seed, exc: BaseException) -> Path:
    run_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "status": "failed",
        "seed": seed,
        "config_digest": config.digest(),
        "error_type": type(exc).__name__,
        "message": str(exc),
        "traceback": traceback.format_exception(type(exc), exc, exc.__traceback__),
    }
    path = run_dir / "failure.json"
    path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def run_experiment(config: ExperimentConfig) -> RunResult:
    """Run every seed into ``<output_dir>/<config digest>/seed-<s>/`` and summarize.

    Existing seed directories are never overwritten; the collision check happens
    before any run starts. Exact solvers ignore seeds and write a single ``exact/`` run.
    """
    config.validate()
    model = config.model()
    dists = generate_distribution_set(config.train_distributions, model.states)
    test = None
    if config.test_distributions is not None:
        test = generate_distribution_set(config.test_distributions, model.states)
    root = Path(config.output_dir) / config.digest()
    seeds = [None] if config.exact else list(config.seeds)
    for seed in seeds:
        if (root / seed_dir_name(seed)).exists():
            raise ValidationError(f"run directory {root / seed_dir_name(seed)} already exists")
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.ini").write_text(dumps(config))
    result = RunResult(root)
    for seed in seeds:
        run_dir = root / seed_dir_name(seed)
        run_dir.mkdir()
        try:
            if config.exact:
                result.traces[seed] = _run_exact(config, model, dists, run_dir)
            else:
                trained = _run_deep(config, model, dists, seed, run_dir)
                result.traces[seed] = trained.trace
                if test is not None:
                    values = evaluate(trained.policy, test, model)
                    result.test_exploitability[seed] = values
                    _write_test(run_dir / "test.csv", values)
        except Exception as exc:
            record = _write_failure(run_dir, config, seed, exc)
            raise RunFailure(f"{seed_dir_name(seed)} failed: {type(exc).__name__}: {exc}", record) from exc
    result.summary = write_summary(root)
    return result


def _write_test(path: Path, values: list) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# schema: mfg-omd-test v1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("distribution", "exploitability"))
        for i, v in enumerate(values):
            w.writerow((i, _fmt(v)))
        w.writerow(("mean", _fmt(np.mean(values))))


def write_summary(root: Path) -> Path:
    """Per-iteration mean and (population) std of the mean exploitability over all runs in ``root``."""
    runs = sorted(p for p in root.iterdir() if (p / "metrics.csv").exists())
    traces = [[float(r["exploitability_mean"]) for r in read_metrics(p / "metrics.csv")] for p in runs]
    n_iter = min((len(t) for t in traces), default=0)
    path = root / "summary.csv"
    with open(path, "w", newline="") as fh:
        fh.write(SUMMARY_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for k in range(n_iter):
            column = np.array([t[k] for t in traces])
            w.writerow((k + 1, len(column), _fmt(column.mean()), _fmt(column.std())))
    return path


# ---------------------------------------------------------------- density export


def flow_moments(flow: np.ndarray, model: EnvModel) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of the state value (chain) or column index (grid) per step."""
    values = model.states.values()
    mean = flow @ values
    var = flow @ values**2 - mean**2
    return mean, np.maximum(var, 0.0)


def export_density(policy, mu0, model: EnvModel, timesteps, out_dir=None) -> dict:
    """Exact flow tables ``{n: [(coordinates..., density), ...]}``; optionally one CSV per step."""
    mu0 = validate_distribution(mu0, model.n_states)
    steps = sorted(set(int(n) for n in timesteps))
    if not steps or steps[0] < 0 or steps[-1] > model.horizon:
        raise ValidationError(f"timesteps must lie in [0, {model.horizon}]")
    flow = induce_flow(mu0, policy, model)
    chain = model.states.kind == "chain1d"
    columns = ("index", "value", "density") if chain else ("row", "col", "density")
    values = model.states.values()
    tables = {}
    for n in steps:
        if chain:
            rows = [(i, int(values[i]), float(flow[n, i])) for i in range(model.n_states)]
        else:
            rows = [(r, c, float(flow[n, i])) for i, (r, c) in enumerate(model.states.cells)]
        tables[n] = rows
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for n, rows in tables.items():
            with open(out / f"density-n{n:03d}.csv", "w", newline="") as fh:
                fh.write("# schema: mfg-omd-density v1\n")
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(columns)
                w.writerows((a, b, _fmt(d)) for a, b, d in rows)
        mean, var = flow_moments(flow, model)
        with open(out / "moments.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("step", "mean", "variance"))
            w.writerows((n, _fmt(mean[n]), _fmt(var[n])) for n in range(model.horizon + 1))
    return tables


# ---------------------------------------------------------------- ad-hoc teaming


@dataclass
class AdhocResult:
    flow: np.ndarray
    weights: tuple
    terminal_entropy: float
    tv_to_uniform: float


def entropy(mu: np.ndarray) -> float:
    p = mu[mu > 0]
    return float(-(p * np.log(p)).sum())


def adhoc_scenario(policy, base_mu0, join_time: int, join_mu, n_base: int, n_new: int, model: EnvModel) -> AdhocResult:
    """Propagate the flow; at ``join_time`` mix in ``n_new`` agents drawn from ``join_mu``."""
    if not 0 <= join_time < model.horizon:
        raise ValidationError(f"join time must lie in [0, {model.horizon})")
    if n_base < 1 or n_new < 0:
        raise ValidationError("need n_base >= 1 and n_new >= 0")
    mu = validate_distribution(base_mu0, model.n_states)
    join_mu = validate_distribution(join_mu, model.n_states)
    flow = np.empty((model.horizon + 1, model.n_states))
    for n in range(model.horizon + 1):
        if n == join_time and n_new > 0:
            mu = mix_distributions(mu, n_base, join_mu, n_new)
        flow[n] = mu
        if n < model.horizon:
            mu = forward_step(mu, policy.action_probs(n, mu), model, n)
    total = n_base + n_new
    terminal = flow[-1]
    tv = 0.5 * float(np.abs(terminal - 1.0 / model.n_states).sum())
    return AdhocResult(flow, (n_base / total, n_new / total), entropy(terminal), tv)


# ---------------------------------------------------------------- ablations and sweeps


@dataclass
class AblationResult:
    capacities: list
    runs: dict
    table: Path | None = None

    def final_mean(self, capacity: int) -> float:
        return float(np.mean(list(self.runs[capacity].final.values())))


def ablation_buffer_sizes(config: ExperimentConfig, capacities) -> AblationResult:
    """One run per buffer capacity (ascending); writes an overlaid ``ablation-buffer.csv``."""
    if config.exact:
        raise ValidationError("buffer ablation needs a deep algorithm")
    caps = sorted(set(int(c) for c in capacities))
    if not caps or caps[0] < 1:
        raise ValidationError("capacities must be positive")
    configs = {c: replace(config, train=config.train.replace(buffer_capacity=c)) for c in caps}
    runs = {c: run_experiment(cfg) for c, cfg in configs.items()}
    path = Path(config.output_dir) / f"ablation-buffer-{config.digest()}.csv"
    with open(path, "w", newline="") as fh:
        fh.write(SUMMARY_SCHEMA + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("capacity", "iteration", "n_runs", "exploitability_mean", "exploitability_std", "run_dir"))
        for c in caps:
            traces = np.array(list(runs[c].traces.values()))
            for k in range(traces.shape[1]):
                w.writerow((c, k + 1, traces.shape[0], _fmt(traces[:, k].mean()), _fmt(traces[:, k].std()),
                            runs[c].root.name))
    return AblationResult(caps, runs, path)


@dataclass
class SweepResult:
    cells: list
    runs: dict
    index: Path | None = None


def sweep(config: ExperimentConfig, taus=(None,), alphas=(None,)) -> SweepResult:
    """Grid over ``omd_tau`` x ``omd_alpha`` (``None`` keeps the config value); one index row per run."""
    cells = list(itertools.product(taus, alphas))
    runs = {}
    rows = []
    for tau, alpha in cells:
        changes = {}
        if tau is not None:
            changes["omd_tau"] = float(tau)
        if alpha is not None:
            changes["omd_alpha"] = float(alpha)
        cfg = replace(config, train=config.train.replace(**changes))
        run = run_experiment(cfg)
        runs[(tau, alpha)] = run
        for seed, trace in run.traces.items():
            rows.append((cfg.train.tau, cfg.train.omd_alpha, seed_dir_name(seed), run.root.name, _fmt(trace[-1])))
    path = Path(config.output_dir) / f"sweep-{config.digest()}.csv"
    with open(path, "w", newline="") as fh:
        fh.write("# schema: mfg-omd-sweep v1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("omd_tau", "omd_alpha", "run", "run_dir", "final_exploitability"))
        w.writerows(rows)
    return SweepResult(cells, runs, path)


# ---------------------------------------------------------------- Munchausen equivalence


@dataclass
class Theorem1Row:
    instance: int
    n_states: int
    n_actions: int
    horizon: int
    tau: float
    deviation: float


def theorem1_suite(n_instances: int = 20, seed: int = 0, taus=(1.0, 5.0, 50.0), iterations: int = 10) -> list:
    """Random small games (|X| <= 25, N_T <= 10), cycling through ``taus``."""
    if n_instances < 1 or iterations < 1:
        raise ValidationError("need at least one instance and one iteration")
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_instances):
        X, A, T = int(rng.integers(2, 26)), int(rng.integers(2, 6)), int(rng.integers(1, 11))
        model = random_game(rng, X, A, T)
        mu0 = rng.dirichlet(np.ones(X))
        mu0 = mu0 / mu0.sum()
        tau = float(taus[i % len(taus)])
        rows.append(Theorem1Row(i, X, A, T, tau, theorem1_check(model, mu0, tau, iterations)))
    return rows
