"""Synchronous drivers for finite-sum monotone inclusions.

Four entry points:

* :func:`run_fb` — deterministic forward-backward splitting, evaluating the
  full operator average every iteration;
* :func:`run_vr` — the variance-reduced loop: draw an index, take the
  resolvent step along the proxy-table estimator, update the table;
* :func:`run_sarah` — the recursive-direction loop (its estimator is biased
  and maintained by a two-branch recursion instead of a table);
* :func:`step_size_bound` / :func:`recommended_gamma` — the step-size rule
  with its contraction factors, and the per-scheme step sizes.

All runs emit a :class:`Trace` whose rows record the state *before* the
iteration executes, so ``op_evals`` is the cost of reaching that state.
Distances and Lyapunov values need the problem's known solution and are NaN
without one.  Diagnostics (residuals, table-error sums, early-stop checks)
are never charged to the operator-evaluation budget.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .operators import FiniteSumProblem, apply_component, apply_full, resolve
from .schemes import (
    Scheme,
    SchemeConstants,
    estimate,
    g_err,
    init_table,
    scheme_index_sets,
    update,
    update_reads_new_iterate,
)

__all__ = [
    "RunConfig",
    "RateReport",
    "Trace",
    "run_fb",
    "run_vr",
    "run_sarah",
    "step_size_bound",
    "recommended_gamma",
]


# ---------------------------------------------------------------------------
# Configuration and results
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Knobs for :func:`run_vr`.

    ``gamma="auto"`` resolves to :func:`recommended_gamma` for the scheme;
    ``rho="gamma^1.5"`` sets the Lyapunov weight from the step size.  ``x0``
    defaults to the origin.  ``engine="numba"`` selects the compiled affine
    fast path (row-swap scheme on affine problems only); the two engines
    agree to float rounding but are not bit-interchangeable.
    ``stop_dist_sq`` ends the run early once the squared distance to the
    known solution falls to the threshold (checked after each step, not
    charged); it requires a problem with a known solution.
    ``stop_op_evals`` caps the evaluation budget instead: the loop ends
    before any iteration that could not complete within the cap assuming the
    cheapest cost (two evaluations), so the realized total never exceeds the
    cap by more than one table rewrite (n evaluations).
    """

    gamma: Union[float, str] = "auto"
    max_iterations: int = 1000
    seed: int = 0
    record_every: int = 1
    rho: Union[float, str] = "gamma^1.5"
    x0: Optional[np.ndarray] = None
    engine: str = "python"
    stop_dist_sq: Optional[float] = None
    stop_op_evals: Optional[int] = None

    def __post_init__(self):
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be nonnegative")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        if self.engine not in ("python", "numba"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.stop_op_evals is not None and self.stop_op_evals < 0:
            raise ValueError("stop_op_evals must be nonnegative")


@dataclass(frozen=True)
class RateReport:
    """Contraction factors at a step size: theta for the distance/table pair,
    lam for the full potential including epoch terms, and the step-size rule
    bound below which lam < 1 is guaranteed."""

    theta: float
    lam: float
    gamma_bound: float


_CSV_HEADER = "k,op_evals,dist_sq,residual,lyapunov,epoch_boundary"


@dataclass(eq=False)
class Trace:
    """Columnar run record.

    ``dist_sq`` and ``lyapunov`` are NaN when the problem has no known
    solution; ``residual`` is NaN on rows where the sparse exact-operator
    diagnostic was not computed.  ``epoch_boundary`` tags rows whose iterate
    is an epoch start (for every-iteration schemes, all recorded rows).
    """

    k: np.ndarray
    op_evals: np.ndarray
    dist_sq: np.ndarray
    residual: np.ndarray
    lyapunov: np.ndarray
    epoch_boundary: np.ndarray

    def __len__(self) -> int:
        return self.k.shape[0]

    def to_csv(self) -> str:
        def cell(v) -> str:
            return "" if math.isnan(v) else repr(float(v))

        out = io.StringIO()
        out.write(_CSV_HEADER + "\n")
        for i in range(len(self)):
            out.write(
                f"{int(self.k[i])},{int(self.op_evals[i])},"
                f"{cell(self.dist_sq[i])},{cell(self.residual[i])},"
                f"{cell(self.lyapunov[i])},{int(self.epoch_boundary[i])}\n"
            )
        return out.getvalue()

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())

    @staticmethod
    def from_csv(text: str) -> "Trace":
        lines = [ln for ln in text.strip().splitlines() if ln]
        if not lines or lines[0] != _CSV_HEADER:
            raise ValueError("not a trace CSV")
        cols = [[], [], [], [], [], []]
        for ln in lines[1:]:
            parts = ln.split(",")
            cols[0].append(int(parts[0]))
            cols[1].append(int(parts[1]))
            for j in (2, 3, 4):
                cols[j].append(float(parts[j]) if parts[j] else math.nan)
            cols[5].append(bool(int(parts[5])))
        return Trace(
            k=np.asarray(cols[0], dtype=np.int64),
            op_evals=np.asarray(cols[1], dtype=np.int64),
            dist_sq=np.asarray(cols[2]),
            residual=np.asarray(cols[3]),
            lyapunov=np.asarray(cols[4]),
            epoch_boundary=np.asarray(cols[5], dtype=bool),
        )


class _TraceBuilder:
    def __init__(self):
        self.rows = []

    def add(self, k, op, dist_sq, residual, lyapunov, boundary):
        self.rows.append((k, op, dist_sq, residual, lyapunov, boundary))

    def build(self) -> Trace:
        if self.rows:
            k, op, d2, res, ly, bd = map(np.asarray, zip(*self.rows))
        else:  # pragma: no cover - every run records at least the final row
            k = op = d2 = res = ly = bd = np.empty(0)
        return Trace(
            k=k.astype(np.int64),
            op_evals=op.astype(np.int64),
            dist_sq=d2.astype(np.float64),
            residual=res.astype(np.float64),
            lyapunov=ly.astype(np.float64),
            epoch_boundary=bd.astype(bool),
        )


# ---------------------------------------------------------------------------
# Shared pieces
# ---------------------------------------------------------------------------


def _fb_step(A, gamma: float, x: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """One forward-backward step; every driver funnels through this
    expression so identical direction bits give identical iterates."""
    return resolve(A, gamma, x - gamma * direction)


def _exact_residual(problem, gamma, x) -> float:
    return float(
        np.linalg.norm(x - _fb_step(problem.A, gamma, x, apply_full(problem, x)))
    )


def _start_point(problem, x0) -> np.ndarray:
    if x0 is None:
        return np.zeros(problem.d)
    x0 = np.asarray(x0, dtype=np.float64).copy()
    if x0.shape != (problem.d,) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be a finite vector of the problem dimension")
    return x0


def _dist_sq(x, xs) -> float:
    if xs is None:
        return math.nan
    diff = x - xs
    return float(diff @ diff)


def _resolve_rho(rho, gamma: float) -> float:
    if rho == "gamma^1.5":
        return gamma**1.5
    rho = float(rho)
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    return rho


# ---------------------------------------------------------------------------
# Step sizes
# ---------------------------------------------------------------------------


def recommended_gamma(scheme: Scheme, problem: FiniteSumProblem,
                      with_provenance: bool = False):
    """The per-scheme step size backing ``gamma="auto"``.

    Epoch rewrites get mu/(3L^2), row swaps mu/(7L^2), the recursive
    direction mu/(2L^2), and the split rule lambda*mu/L^2 with lambda the
    minimum of its conditioning branch and 1/(3 + 4|S|/n).  Schemes without
    a stated value inherit the row-swap choice, flagged "extrapolated".
    """
    mu, L2 = problem.mu, problem.lip**2
    v = scheme.variant
    if v == "gd":
        out, src = mu / L2, "classical"
    elif v == "svrg":
        out, src = mu / (3.0 * L2), "stated"
    elif v == "saga":
        out, src = mu / (7.0 * L2), "stated"
    elif v == "sarah":
        out, src = mu / (2.0 * L2), "stated"
    elif v == "hsag":
        n, s = problem.n, len(scheme.S)
        first = problem.kappa / math.sqrt(6.0 * n) if 0 < s < n else 1.0
        lam = min(first, 1.0 / (3.0 + 4.0 * s / n))
        out, src = lam * mu / L2, "stated"
    else:
        out, src = mu / (7.0 * L2), "extrapolated"
    return (out, src) if with_provenance else out


def _resolve_gamma(gamma, scheme, problem) -> float:
    if gamma == "auto":
        return recommended_gamma(scheme, problem)
    gamma = float(gamma)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return gamma


def step_size_bound(
    constants: SchemeConstants,
    problem: FiniteSumProblem,
    gamma: Optional[float] = None,
    rho: Optional[float] = None,
) -> RateReport:
    """Evaluate the step-size rule and the contraction factors it certifies.

    ``gamma_bound`` is the smaller of the rule's two bracketed expressions;
    any step below it yields lam < 1 with the default weight rho = gamma^1.5.
    theta and lam are evaluated at the supplied (gamma, rho), defaulting to
    gamma_bound/2 and gamma^1.5.
    """
    mu, L = problem.mu, problem.lip
    c1, c2, c3, mbar = constants.c1, constants.c2, constants.c3, constants.m_bar
    if not c1 < 1:
        raise ValueError("need c1 < 1")
    one = 1.0 - c1
    first = (2.0 * mu / (1.5 * one * L**2 + one * c3 * mbar + c2)) ** 2
    second = (one / (2.0 + 2.0 * mbar * (one / 2.0) ** 3 * c3)) ** 2
    bound = min(first, second)

    if gamma is None:
        gamma = bound / 2.0
    gamma = float(gamma)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if rho is None:
        rho = gamma**1.5
    rho = float(rho)
    if rho <= 0:
        raise ValueError("rho must be positive to evaluate the factors")

    # Work with the distance-to-one margins rather than the factors
    # themselves: for tiny steps, 1 - 2*gamma*mu rounds back to 1.0 and the
    # guarantee check would trip on pure float saturation.
    margin1 = 2.0 * gamma * mu - 3.0 * gamma**2 * L**2 - c2 * rho
    margin2 = one - 2.0 * gamma**2 / rho
    theta_margin = min(margin1, margin2)
    lam_margin = theta_margin - 2.0 * gamma**2 * mbar * c3
    theta = 1.0 - theta_margin
    lam = 1.0 - lam_margin
    if gamma < bound and rho == gamma**1.5 and not lam_margin > 0.0:
        raise RuntimeError(
            f"contraction factor {lam} >= 1 below the step-size bound; "
            "this contradicts the rule's guarantee"
        )
    return RateReport(theta=theta, lam=lam, gamma_bound=bound)


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


def run_fb(problem: FiniteSumProblem, gamma: float, x0, iterations: int,
           record_every: int = 1):
    """Deterministic splitting: x <- resolve(A, gamma, x - gamma*B(x)).

    Costs n component evaluations per iteration.  Linear convergence holds
    for gamma in (0, 2*mu/L^2); outside that range the run proceeds but a
    warning is issued.  The Lyapunov column equals the squared distance
    (there is no table term).
    """
    gamma = float(gamma)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    if not gamma < 2.0 * problem.mu / problem.lip**2:
        warnings.warn(
            f"gamma={gamma} is outside (0, 2*mu/L^2); no linear-rate guarantee",
            stacklevel=2,
        )
    x = _start_point(problem, x0)
    xs = problem.known_solution
    res_cadence = record_every * problem.n
    tb = _TraceBuilder()

    def record(k, op, final=False):
        d2 = _dist_sq(x, xs)
        res = _exact_residual(problem, gamma, x) if (k % res_cadence == 0 or final) else math.nan
        tb.add(k, op, d2, res, d2, True)

    op = 0
    for k in range(iterations):
        if k % record_every == 0:
            record(k, op)
        x = _fb_step(problem.A, gamma, x, apply_full(problem, x))
        op += problem.n
    record(iterations, op, final=True)
    return x, tb.build()


def run_vr(problem: FiniteSumProblem, scheme: Scheme, config: RunConfig):
    """The variance-reduced loop: draw I_k, step along the table estimator,
    update the table.

    Per iteration the trace charges two component evaluations (the physical
    estimator evaluation plus one amortized toward the table) plus whatever
    the scheme's update reports.  Identical (problem, scheme, config) give
    bit-identical traces within one engine.  Rows follow the record_every
    cadence; epoch-based schemes additionally force rows at epoch starts.
    """
    if scheme.variant == "sarah":
        raise ValueError("the recursive-direction scheme is driven by run_sarah")
    gamma = _resolve_gamma(config.gamma, scheme, problem)
    rho = _resolve_rho(config.rho, gamma)
    xs = problem.known_solution
    if config.stop_dist_sq is not None and xs is None:
        raise ValueError("stop_dist_sq needs a problem with a known solution")

    if config.engine == "numba":
        from . import _kernels

        if config.stop_op_evals is not None:
            # the row-swap scheme costs exactly two evaluations per step on
            # top of the n-evaluation init, so the cap maps to an iteration
            # count and the compiled path needs no budget logic of its own
            t_cap = max(0, (config.stop_op_evals - problem.n) // 2)
            config = replace(
                config,
                max_iterations=min(config.max_iterations, t_cap),
                stop_op_evals=None,
            )
        return _kernels.run_vr_numba(problem, scheme, config, gamma, rho)

    T = config.max_iterations
    n = problem.n
    x = _start_point(problem, config.x0)
    ss = np.random.SeedSequence(config.seed).spawn(3)
    rng_idx = np.random.default_rng(ss[0])
    rng_scheme = np.random.default_rng(ss[1])

    table, op = init_table(scheme, problem, x)
    swap_rows = sorted(scheme_index_sets(scheme, n)[0])
    sched = scheme.m if scheme.variant in ("svrg", "hsag") else None
    reads_new = update_reads_new_iterate(scheme)
    res_cadence = config.record_every * n
    tb = _TraceBuilder()

    def is_boundary(k):
        return sched is None or k == 0 or sched.is_end(k - 1)

    def record(k, final=False):
        d2 = _dist_sq(x, xs)
        res = _exact_residual(problem, gamma, x) if (k % res_cadence == 0 or final) else math.nan
        ly = d2 + rho * g_err(table, problem, swap_rows) if xs is not None else math.nan
        tb.add(k, op, d2, res, ly, is_boundary(k))

    k_end = T
    for k in range(T):
        if config.stop_op_evals is not None and op + 2 > config.stop_op_evals:
            k_end = k
            break
        if k % config.record_every == 0 or (sched is not None and is_boundary(k)):
            record(k)
        i = int(rng_idx.integers(n))
        g, b = estimate(table, problem, x, i)
        x_next = _fb_step(problem.A, gamma, x, g)
        op += 2 + update(
            scheme,
            problem,
            k,
            x_next if reads_new else x,
            table,
            i,
            b,
            rng_scheme,
            allow_epoch_refresh=k + 1 < T,
        )
        x = x_next
        if config.stop_dist_sq is not None and _dist_sq(x, xs) <= config.stop_dist_sq:
            k_end = k + 1
            break
    record(k_end, final=True)
    return x, tb.build()


def run_sarah(problem: FiniteSumProblem, m: int, gamma: float, x0,
              epochs: int, seed: int, record_every: int = 1,
              stop_op_evals: Optional[int] = None):
    """The recursive-direction loop (A must be the zero operator).

    Every m-th iteration restarts the direction from the exact average
    (n evaluations); in between, v <- B_i(x_k) - B_i(x_{k-1}) + v (two
    evaluations).  Boundary rows store ||B(x)|| in the residual column —
    with A = 0 that is the natural merit, and the final row gets it too.
    With a single component the recursion telescopes exactly, so the fresh
    average is used directly (still charged as an inner step).
    ``stop_op_evals`` ends the run before any iteration whose known upfront
    cost would push past the cap, so the total never exceeds it.
    """
    if problem.A.kind != "zero":
        raise ValueError("the recursive-direction loop requires the zero operator")
    m = int(m)
    if m < 1 or epochs < 1:
        raise ValueError("need m >= 1 and epochs >= 1")
    gamma = float(gamma)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")

    T = epochs * m
    n = problem.n
    rng_idx = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[0])
    x = _start_point(problem, x0)
    xs = problem.known_solution
    tb = _TraceBuilder()

    def record(k, op, bfull):
        d2 = _dist_sq(x, xs)
        res = float(np.linalg.norm(bfull)) if bfull is not None else math.nan
        tb.add(k, op, d2, res, math.nan, bfull is not None)

    op = 0
    x_prev = None
    v = None
    k_end = T
    for k in range(T):
        boundary = k % m == 0
        if stop_op_evals is not None and op + (n if boundary else 2) > stop_op_evals:
            k_end = k
            break
        bfull = apply_full(problem, x) if boundary else None
        if k % record_every == 0 or boundary:
            record(k, op, bfull)
        if boundary:
            v = bfull
            op += n
        else:
            if n == 1:
                v = apply_full(problem, x)
            else:
                i = int(rng_idx.integers(n))
                v = (apply_component(problem, i, x) - apply_component(problem, i, x_prev)) + v
            op += 2
        x_prev = x
        x = _fb_step(problem.A, gamma, x, v)
    record(k_end, op, apply_full(problem, x))
    return x, tb.build()
