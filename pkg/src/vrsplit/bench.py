"""Benchmark harness: scheme line-ups on shared instances, common-grid curves.

An experiment is a problem source (generator spec or fixture file), a list
of named entries (scheme + step size, optionally wrapped in the restart
outer loop or run through the delayed simulator), a replicate count, and an
evaluation budget stated in multiples of n.  Every entry/replicate pair runs
to the same budget, its trace is resampled onto the integer grid
op_evals/n = 0, 1, ..., budget, and the plotted quantity — log10 of the
squared distance to the known solution — is averaged over replicates.

Conventions
-----------
* Replicate r of entry j runs with the seed drawn from
  ``SeedSequence([config.seed, j, r])``, so any (entry, replicate) cell can
  be reproduced in isolation and worker-pool execution cannot change it.
* Runs stop via the evaluation cap, so no run exceeds ``budget * n`` by
  more than one table rewrite (n evaluations, only when the final iteration
  triggers an epoch refresh).
* Resampling is linear in the recorded points with flat extrapolation, and
  the first/last grid values are set to the first/last recorded values
  exactly.
* A failing entry (e.g. the recursive-direction loop or the delayed
  simulator on a problem with a nontrivial set-valued part) is recorded
  with its error message and the experiment continues.
* CSV cells are shortest round-trip decimals, so config -> run -> file is
  reproducible byte for byte; parallel workers only spread the same cells
  over processes and are merged back in entry/replicate order.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .async_sim import AsyncConfig, run_async
from .catalyst import CatalystConfig, run_catalyst
from .operators import FiniteSumProblem, problem_from_json
from .problems import GeneratorSpec, generate
from .schemes import (
    EpochSchedule,
    ProbSchedule,
    Scheme,
    parse_scheme,
    saga,
    saga_svrg_rand,
    sagd,
    sarah,
    svrg,
    svrg_rand,
)
from .solver import RunConfig, recommended_gamma, run_sarah, run_vr

__all__ = [
    "ExperimentEntry",
    "ExperimentConfig",
    "EntryResult",
    "ExperimentResult",
    "scheme_to_obj",
    "experiment_to_json",
    "experiment_from_json",
    "run_experiment",
    "paper_protocol_config",
]

EXPERIMENT_FORMAT = "vrsplit-experiment/1"

_NAME_OK = frozenset(
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789+._-"
)


@dataclass(frozen=True, eq=False)
class ExperimentEntry:
    """One named line of the benchmark.

    ``gamma`` is a positive float or ``"auto"`` (the per-scheme recommended
    step size).  ``catalyst`` wraps the scheme in the restart outer loop and
    holds its settings (``sigma``, ``outer_loops``, ``inner_stop``);
    ``delay`` runs the scheme through the delayed simulator and holds its
    settings (``tau``, ``delay_model``, ``workers``, ``sync_at_epoch``).
    The two wrappers are mutually exclusive.
    """

    name: str
    scheme: Scheme
    gamma: Union[float, str] = "auto"
    record_every: int = 1
    engine: str = "python"
    catalyst: Optional[dict] = None
    delay: Optional[dict] = None

    def __post_init__(self):
        if not self.name or not set(self.name) <= _NAME_OK:
            raise ValueError(
                "entry names must be nonempty and use only letters, digits, "
                "or +._- (they become file names)"
            )
        if self.gamma != "auto" and not float(self.gamma) > 0:
            raise ValueError("gamma must be positive or 'auto'")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.catalyst is not None and self.delay is not None:
            raise ValueError("an entry cannot be both wrapped and delayed")


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """A full experiment: problem source, entries, replicates, budget.

    ``problem`` is a :class:`~vrsplit.problems.GeneratorSpec` or the path of
    a problem fixture; either way the instance must carry a known solution,
    since the aggregated quantity is the distance to it.  ``budget`` is the
    per-run evaluation allowance in multiples of n.  ``out`` is the
    directory that receives one CSV per entry plus a combined table.
    """

    problem: Union[GeneratorSpec, str]
    entries: tuple
    replicates: int = 10
    budget: int = 50
    seed: int = 0
    out: str = "results"

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ValueError("an experiment needs at least one entry")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("entry names must be unique")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if not isinstance(self.problem, (GeneratorSpec, str)):
            raise ValueError("problem must be a GeneratorSpec or a fixture path")


# ---------------------------------------------------------------------------
# Config (de)serialization — the same JSON dialect the fixtures use
# ---------------------------------------------------------------------------


def _epoch_obj(sched: EpochSchedule):
    if sched.kind == "constant":
        return int(sched.values[0])
    if sched.kind == "list":
        return [int(v) for v in sched.values]
    return {"kind": "halving", "start": int(sched.values[0])}


def _prob_obj(sched: ProbSchedule):
    if sched.kind == "warmup":
        return None
    if sched.kind == "constant":
        return float(sched.values[0])
    if sched.kind == "list":
        return [float(v) for v in sched.values]
    if sched.kind == "halving":
        return {"kind": "halving", "start": float(sched.values[0]),
                "period": int(sched.values[1])}
    raise ValueError("callable probability schedules cannot be written to a config")


def scheme_to_obj(scheme: Scheme) -> dict:
    """The config representation accepted by :func:`~vrsplit.schemes.parse_scheme`."""
    obj = {"name": scheme.variant}
    if scheme.m is not None:
        obj["m"] = _epoch_obj(scheme.m)
    if scheme.p is not None:
        p = _prob_obj(scheme.p)
        if p is not None:
            obj["p"] = p
    if scheme.variant == "sagd":
        obj["q"] = float(scheme.q)
    if scheme.variant == "hsag":
        obj["S"] = sorted(scheme.S)
    if scheme.variant == "saga-svrg-rand":
        obj["S1"] = sorted(scheme.S)
    return obj


def _entry_obj(entry: ExperimentEntry) -> dict:
    obj = {"name": entry.name, "scheme": scheme_to_obj(entry.scheme)}
    if entry.gamma != "auto":
        obj["gamma"] = float(entry.gamma)
    if entry.record_every != 1:
        obj["record_every"] = int(entry.record_every)
    if entry.engine != "python":
        obj["engine"] = entry.engine
    if entry.catalyst is not None:
        obj["catalyst"] = entry.catalyst
    if entry.delay is not None:
        obj["delay"] = entry.delay
    return obj


def _entry_from_obj(obj: dict) -> ExperimentEntry:
    return ExperimentEntry(
        name=obj["name"],
        scheme=parse_scheme(obj["scheme"]),
        gamma=obj.get("gamma", "auto"),
        record_every=int(obj.get("record_every", 1)),
        engine=obj.get("engine", "python"),
        catalyst=obj.get("catalyst"),
        delay=obj.get("delay"),
    )


def _problem_obj(problem: Union[GeneratorSpec, str]):
    if isinstance(problem, GeneratorSpec):
        return {
            "family": problem.family,
            "n": problem.n,
            "d": problem.d,
            "kappa_target": problem.kappa_target,
            "lambda_reg": problem.lambda_reg,
            "seed": problem.seed,
        }
    return {"fixture": str(problem)}


def experiment_to_json(config: ExperimentConfig) -> str:
    """Serialize an experiment config; floats survive the round trip exactly."""
    doc = {
        "format": EXPERIMENT_FORMAT,
        "problem": _problem_obj(config.problem),
        "replicates": config.replicates,
        "budget": config.budget,
        "seed": config.seed,
        "out": config.out,
        "entries": [_entry_obj(e) for e in config.entries],
    }
    return json.dumps(doc, indent=2) + "\n"


def experiment_from_json(text: str) -> ExperimentConfig:
    """Inverse of :func:`experiment_to_json`."""
    doc = json.loads(text)
    if doc.get("format") != EXPERIMENT_FORMAT:
        raise ValueError("not a vrsplit experiment config")
    pobj = doc["problem"]
    if "fixture" in pobj:
        problem = str(pobj["fixture"])
    else:
        problem = GeneratorSpec(
            family=pobj["family"],
            n=int(pobj["n"]),
            d=int(pobj["d"]),
            kappa_target=float(pobj.get("kappa_target", 10.0)),
            lambda_reg=float(pobj.get("lambda_reg", 1.0)),
            seed=int(pobj.get("seed", 0)),
        )
    return ExperimentConfig(
        problem=problem,
        entries=tuple(_entry_from_obj(o) for o in doc["entries"]),
        replicates=int(doc.get("replicates", 10)),
        budget=int(doc.get("budget", 50)),
        seed=int(doc.get("seed", 0)),
        out=doc.get("out", "results"),
    )


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------


def load_problem(source: Union[GeneratorSpec, str]) -> FiniteSumProblem:
    """Materialize the problem behind a config's problem source."""
    if isinstance(source, GeneratorSpec):
        return generate(source)
    return problem_from_json(Path(source).read_text())


def replicate_seed(config_seed: int, entry_index: int, r: int) -> int:
    """The seed of replicate r of entry entry_index (order-independent)."""
    ss = np.random.SeedSequence([int(config_seed), int(entry_index), int(r)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _gamma_value(gamma, scheme: Scheme, problem: FiniteSumProblem) -> float:
    if gamma == "auto":
        return recommended_gamma(scheme, problem)
    return float(gamma)


def _run_one(problem: FiniteSumProblem, entry: ExperimentEntry,
             budget: int, seed: int):
    """One replicate; returns (op_evals/n, log10 dist_sq) over recorded rows."""
    cap = budget * problem.n
    scheme = entry.scheme
    if entry.catalyst is not None:
        opts = dict(entry.catalyst)
        inner = RunConfig(
            gamma=entry.gamma,
            max_iterations=cap,
            seed=seed,
            record_every=entry.record_every,
            engine=entry.engine,
        )
        cfg = CatalystConfig(
            scheme=scheme,
            sigma=opts.get("sigma", "auto"),
            outer_loops=int(opts.get("outer_loops", budget)),
            inner_stop=opts.get("inner_stop", "oracle"),
            run=inner,
        )
        _, trace = run_catalyst(problem, cfg, stop_op_evals=cap)
    elif entry.delay is not None:
        opts = dict(entry.delay)
        cfg = AsyncConfig(
            scheme=scheme,
            gamma=_gamma_value(entry.gamma, scheme, problem),
            tau=int(opts.get("tau", 0)),
            delay_model=opts.get("delay_model", "constant"),
            workers=opts.get("workers"),
            sync_at_epoch=bool(opts.get("sync_at_epoch", False)),
            seed=seed,
        )
        _, trace, _ = run_async(problem, cfg, iterations=cap,
                                record_every=entry.record_every,
                                stop_op_evals=cap)
    elif scheme.variant == "sarah":
        _, trace = run_sarah(
            problem,
            scheme.m.length(0),
            _gamma_value(entry.gamma, scheme, problem),
            None,
            epochs=budget,
            seed=seed,
            record_every=entry.record_every,
            stop_op_evals=cap,
        )
    else:
        run = RunConfig(
            gamma=entry.gamma,
            max_iterations=cap,
            seed=seed,
            record_every=entry.record_every,
            engine=entry.engine,
            stop_op_evals=cap,
        )
        _, trace = run_vr(problem, scheme, run)
    with np.errstate(divide="ignore"):
        log_dist = np.log10(trace.dist_sq)
    return trace.op_evals.astype(np.float64) / problem.n, log_dist


def resample_curve(grid: np.ndarray, op_per_n: np.ndarray,
                   values: np.ndarray) -> np.ndarray:
    """Piecewise-linear resampling with exact endpoint preservation.

    Queries outside the recorded range hold the nearest recorded value, and
    the first/last grid cells are copied from the first/last recorded values
    (bitwise), so resampling never manufactures data at the ends.  Rows that
    share an evaluation count (restart boundaries) collapse to the latest.
    """
    keep = np.r_[op_per_n[1:] != op_per_n[:-1], True]
    out = np.interp(grid, op_per_n[keep], values[keep])
    out[0] = values[0]
    out[-1] = values[-1]
    return out


def _task(problem: FiniteSumProblem, config: ExperimentConfig,
          entry_index: int, r: int, grid: np.ndarray):
    entry = config.entries[entry_index]
    seed = replicate_seed(config.seed, entry_index, r)
    try:
        op_per_n, log_dist = _run_one(problem, entry, config.budget, seed)
        return "ok", resample_curve(grid, op_per_n, log_dist)
    except Exception as exc:  # recorded per entry; the experiment continues
        return "error", f"{type(exc).__name__}: {exc}"


def _pool_task(payload):
    config, entry_index, r = payload
    grid = np.arange(config.budget + 1, dtype=np.float64)
    problem = load_problem(config.problem)
    return _task(problem, config, entry_index, r, grid)


@dataclass(frozen=True, eq=False)
class EntryResult:
    """Aggregate of one entry: mean curve, per-replicate curves, CSV path."""

    name: str
    status: str  # "ok" or "error: <message>"
    mean: Optional[np.ndarray]
    curves: Optional[np.ndarray]
    path: Optional[Path]

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    """Everything :func:`run_experiment` produced."""

    grid: np.ndarray
    entries: tuple
    combined_path: Optional[Path]

    @property
    def ok(self) -> bool:
        return all(e.ok for e in self.entries)

    def entry(self, name: str) -> EntryResult:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)


def _csv_cell(v: float) -> str:
    return repr(float(v))


def _entry_csv(config: ExperimentConfig, entry: ExperimentEntry, status: str,
               grid, mean, curves, include_replicates: bool) -> str:
    lines = [
        f"# {EXPERIMENT_FORMAT} aggregate",
        f"# entry: {entry.name}",
        f"# scheme: {json.dumps(scheme_to_obj(entry.scheme), sort_keys=True)}",
        f"# gamma: {entry.gamma}",
        f"# problem: {json.dumps(_problem_obj(config.problem), sort_keys=True)}",
        f"# replicates: {config.replicates}",
        f"# budget: {config.budget}",
        f"# seed: {config.seed}",
        f"# status: {status}",
    ]
    if status == "ok":
        header = "op_per_n,mean_log10_dist_sq"
        if include_replicates:
            header += "," + ",".join(
                f"rep_{r}" for r in range(curves.shape[0]))
        lines.append(header)
        for i in range(grid.shape[0]):
            row = [_csv_cell(grid[i]), _csv_cell(mean[i])]
            if include_replicates:
                row.extend(_csv_cell(v) for v in curves[:, i])
            lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def _combined_csv(config: ExperimentConfig, grid, results) -> str:
    lines = [
        f"# {EXPERIMENT_FORMAT} combined",
        f"# problem: {json.dumps(_problem_obj(config.problem), sort_keys=True)}",
        f"# replicates: {config.replicates}",
        f"# budget: {config.budget}",
        f"# seed: {config.seed}",
    ]
    for res in results:
        lines.append(f"# status {res.name}: {res.status}")
    ok = [res for res in results if res.ok]
    lines.append("op_per_n," + ",".join(res.name for res in ok))
    for i in range(grid.shape[0]):
        row = [_csv_cell(grid[i])]
        row.extend(_csv_cell(res.mean[i]) for res in ok)
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def run_experiment(config: ExperimentConfig, workers: int = 1,
                   include_replicates: bool = False) -> ExperimentResult:
    """Run every entry x replicate, aggregate, and write the CSV tables.

    ``workers > 1`` fans the (entry, replicate) cells over a process pool;
    seeds are a pure function of the cell, results are merged back in cell
    order, and the problem is rebuilt per task from its source, so the
    output bytes are identical to a sequential run.  Entries that raise are
    reported in their CSV/status and do not stop the others.  With
    ``include_replicates`` the per-entry tables carry one extra column per
    replicate next to the mean.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    grid = np.arange(config.budget + 1, dtype=np.float64)
    cells = [(j, r) for j in range(len(config.entries))
             for r in range(config.replicates)]
    if workers > 1:
        payloads = [(config, j, r) for j, r in cells]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_pool_task, payloads))
    else:
        problem = load_problem(config.problem)
        outcomes = [_task(problem, config, j, r, grid) for j, r in cells]

    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for j, entry in enumerate(config.entries):
        got = [outcomes[j * config.replicates + r]
               for r in range(config.replicates)]
        errors = [msg for kind, msg in got if kind == "error"]
        if errors:
            status, mean, curves = f"error: {errors[0]}", None, None
        else:
            status = "ok"
            curves = np.vstack([curve for _, curve in got])
            mean = curves.mean(axis=0)
        path = out_dir / f"{entry.name}.csv"
        path.write_text(_entry_csv(config, entry, status, grid, mean, curves,
                                   include_replicates))
        results.append(EntryResult(entry.name, status, mean, curves, path))

    combined = out_dir / "combined.csv"
    combined.write_text(_combined_csv(config, grid, results))
    return ExperimentResult(grid=grid, entries=tuple(results),
                            combined_path=combined)


# ---------------------------------------------------------------------------
# The benchmark protocol line-up
# ---------------------------------------------------------------------------


def paper_protocol_config(
    family: str,
    n: int = 16,
    d: int = 8,
    kappa_target: float = 10.0,
    lambda_reg: float = 1.0,
    seed: int = 0,
    gamma: Union[float, str] = "auto",
    replicates: int = 10,
    budget: int = 50,
    out: str = "results",
) -> ExperimentConfig:
    """The standard line-up for a generated instance family.

    Epoch length 2n for the fixed-epoch scheme; a doubling epoch list for
    its growing-epoch variant; refresh probability halving from 1/(2n)
    every 2n iterations for the probabilistic schemes (their forced-refresh
    stall cap bounds how far the decay can starve refreshes); q = 1/(2n)
    for the mixture rule; the hybrid splits the first n/2 indices into the
    row-swap half.  Every entry takes the recommended step size unless
    ``gamma`` overrides all of them with one value.  The recursive-direction
    entry only applies when the set-valued part is zero, so the game family
    (whose constraint is the product of simplex caps) omits it.
    """
    spec = GeneratorSpec(family=family, n=n, d=d, kappa_target=kappa_target,
                         lambda_reg=lambda_reg, seed=seed)
    halving = {"kind": "halving", "start": 1.0 / (2 * n), "period": 2 * n}
    doubling = [2 * n * 2 ** s for s in range(30)]
    entries = [
        ExperimentEntry("svrg", svrg(2 * n), gamma=gamma),
        ExperimentEntry("svrg++", svrg(doubling), gamma=gamma),
        ExperimentEntry("svrg-rand", svrg_rand(dict(halving)), gamma=gamma),
        ExperimentEntry("sagd", sagd(1.0 / (2 * n)), gamma=gamma),
        ExperimentEntry("saga", saga(), gamma=gamma),
        ExperimentEntry("saga-svrg-rand",
                        saga_svrg_rand(range(n // 2), dict(halving)),
                        gamma=gamma),
    ]
    if family != "two_player_game":
        entries.append(ExperimentEntry("sarah", sarah(2 * n), gamma=gamma))
    return ExperimentConfig(problem=spec, entries=tuple(entries),
                            replicates=replicates, budget=budget, seed=seed,
                            out=out)
