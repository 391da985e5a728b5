"""Deterministic simulation of bounded-delay asynchronous runs.

The after-write model: at logical step k a worker reads the snapshot from
step D(k) with k - tau <= D(k) <= k, forms the variance-reduced direction
from that stale iterate and stale proxy table, and applies it to the
*current* iterate.  Everything runs in one thread — the delay models stand
in for hardware contention — so every run is exactly reproducible and the
tau = 0 case collapses bit-for-bit onto the synchronous loop (same spawned
rng streams, same table arithmetic, same trace cadence).

History is a ring of depth tau + 1: iterate and mean-cache snapshots plus
per-step write logs (old row values); a stale table is reconstructed by
undoing logged writes, keeping memory at O(tau * d + n * d) outside of the
rare full-refresh steps whose logs are inherently O(n * d).

Proxy writes use the stale evaluation B_i(x_hat) — the convention of the
asynchronous analysis — with two synchronization exceptions that mirror the
synchronous loop: epoch rewrites read the current iterate, and the split
scheme's complement rewrite reads the new one.

The error report carries the realized magnitude bound M_hat =
max(||phi_i||, ||B_i(x_k)||) over the run and four constants:

* e0 — the theory's aggregate 2*g^3*mu*t^2*M^2 + 6*g^4*L^2*t^2*M^2 +
  2*g^2*t*M^2 evaluated exactly at M = 3*M_hat (g the step, t the bound);
* e1 — max over k of ||x_k - x_hat_k||^2 (iterate staleness);
* e2 — max over k of (1/n) sum_i ||phi_i^k - phi_hat_i^k||^2 (table
  staleness; identically 0 for epoch rewrites synchronized at boundaries);
* e3 — max over k of the squared gap between the stale direction and the
  one the synchronous loop would have formed at step k.

Measurements are diagnostics: never charged, never touching the rng.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .operators import FiniteSumProblem, apply_component
from .schemes import (
    ProxyTable,
    Scheme,
    g_err,
    init_table,
    scheme_index_sets,
    update,
)
from .solver import Trace, _dist_sq, _exact_residual, _fb_step, _TraceBuilder

__all__ = [
    "AsyncConfig",
    "AsyncErrorReport",
    "AsyncHistory",
    "run_async",
    "measure_delay_error",
]

_SUPPORTED = ("saga", "svrg", "svrg-rand", "hsag")
_DELAY_MODELS = ("constant", "uniform", "cyclic")


@dataclass(frozen=True, eq=False)
class AsyncConfig:
    """Delay-model settings for :func:`run_async`.

    ``tau`` bounds the read staleness.  ``delay_model``: "constant" reads
    exactly tau steps back, "uniform" draws D(k) uniformly from the
    admissible window (consuming the dedicated delay stream; tau = 0 draws
    nothing), "cyclic" emulates ``workers`` round-robin workers each reading
    workers - 1 ticks back (requires workers - 1 <= tau).  With
    ``sync_at_epoch`` every epoch boundary becomes a barrier: reads never
    cross it (epoch-scheduled schemes only).  ``keep_history`` retains the
    full iterate/delay history on the report for post-hoc diagnostics.
    """

    scheme: Scheme
    gamma: float
    tau: int = 0
    delay_model: str = "constant"
    workers: Optional[int] = None
    sync_at_epoch: bool = False
    seed: int = 0
    keep_history: bool = False

    def __post_init__(self):
        if self.scheme.variant not in _SUPPORTED:
            raise ValueError(
                f"asynchronous runs support {_SUPPORTED}; "
                f"got {self.scheme.variant!r}"
            )
        if float(self.gamma) <= 0:
            raise ValueError("gamma must be positive")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        if self.delay_model not in _DELAY_MODELS:
            raise ValueError(f"unknown delay model {self.delay_model!r}")
        if self.delay_model == "cyclic":
            if self.workers is None or self.workers < 1:
                raise ValueError("cyclic delays need workers >= 1")
            if self.workers - 1 > self.tau:
                raise ValueError("cyclic delays need workers - 1 <= tau")
        elif self.workers is not None:
            raise ValueError("workers only applies to the cyclic model")


@dataclass(frozen=True, eq=False)
class AsyncHistory:
    """Full per-step record: iterates x_0..x_T and the reads D(0)..D(T-1)."""

    xs: np.ndarray
    delays: np.ndarray

    def __len__(self) -> int:
        return int(self.delays.shape[0])


@dataclass(frozen=True, eq=False)
class AsyncErrorReport:
    m_hat: float
    e0: float
    e1: float
    e2: float
    e3: float
    history: Optional[AsyncHistory] = None


def measure_delay_error(history: AsyncHistory, k: int) -> float:
    """The squared read-staleness ||x_k - x_{D(k)}||^2 at step k."""
    if not 0 <= k < len(history):
        raise IndexError(f"step {k} outside the recorded range")
    diff = history.xs[k] - history.xs[history.delays[k]]
    return float(diff @ diff)


class _LoggingTable(ProxyTable):
    """ProxyTable that records (row, old value) for every write so stale
    tables can be reconstructed by undoing."""

    def __init__(self, base: ProxyTable):
        super().__init__(base.phi, base.mean_cache,
                         base.updates_since_recompute, base.last_full_refresh)
        self.sink = None

    def set_row(self, i, value):
        self.sink.append((int(i), self.phi[i].copy()))
        super().set_row(i, value)

    def write_rows(self, indices, rows):
        for i in indices:
            self.sink.append((int(i), self.phi[i].copy()))
        super().write_rows(indices, rows)

    def refresh_full(self, rows, k):
        for i in range(self.n):
            self.sink.append((i, self.phi[i].copy()))
        super().refresh_full(rows, k)


def _all_rows(problem: FiniteSumProblem, x: np.ndarray) -> np.ndarray:
    arrays = problem.affine_arrays
    if arrays is not None:
        return arrays[0] @ x + arrays[1]
    return np.stack([apply_component(problem, i, x) for i in range(problem.n)])


def run_async(problem: FiniteSumProblem, config: AsyncConfig, iterations: int,
              record_every: int = 1, stop_op_evals: Optional[int] = None):
    """Simulate the bounded-delay forward-step loop.

    Requires the zero operator (the pure forward step is what the
    asynchronous analysis covers).  Returns the final iterate, a trace with
    the synchronous cadence and accounting, and the error report.
    ``stop_op_evals`` applies the same evaluation cap as the synchronous
    loop (stop before any step that could not finish within it at the
    cheapest cost), preserving the zero-delay equivalence under budgets.
    """
    if problem.A.kind != "zero":
        raise ValueError("asynchronous runs require the zero operator")
    if iterations < 0:
        raise ValueError("iterations must be nonnegative")
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    if stop_op_evals is not None and stop_op_evals < 0:
        raise ValueError("stop_op_evals must be nonnegative")
    scheme = config.scheme
    gamma = float(config.gamma)
    tau = int(config.tau)
    n, d = problem.n, problem.d
    T = int(iterations)

    ss = np.random.SeedSequence(config.seed).spawn(3)
    rng_idx = np.random.default_rng(ss[0])
    rng_scheme = np.random.default_rng(ss[1])
    rng_delay = np.random.default_rng(ss[2])

    x = np.zeros(d)
    base, op = init_table(scheme, problem, x)
    table = _LoggingTable(base)
    rho = gamma**1.5
    xs_sol = problem.known_solution
    sched = scheme.m if scheme.variant in ("svrg", "hsag") else None
    swap_rows = sorted(scheme_index_sets(scheme, n)[0])
    res_cadence = record_every * n
    tb = _TraceBuilder()

    def is_boundary(k):
        return sched is None or k == 0 or sched.is_end(k - 1)

    def record(k, final=False):
        d2 = _dist_sq(x, xs_sol)
        res = (
            _exact_residual(problem, gamma, x)
            if (k % res_cadence == 0 or final)
            else math.nan
        )
        ly = (
            d2 + rho * g_err(table, problem, swap_rows)
            if xs_sol is not None
            else math.nan
        )
        tb.add(k, op, d2, res, ly, is_boundary(k))

    x_ring = {}
    mean_ring = {}
    logs = {}
    last_sync = 0
    m_hat = 0.0
    e1 = e2 = e3 = 0.0
    hist_x = [x.copy()] if config.keep_history else None
    hist_d = [] if config.keep_history else None

    k_end = T
    for k in range(T):
        if stop_op_evals is not None and op + 2 > stop_op_evals:
            k_end = k
            break
        x_ring[k] = x.copy()
        mean_ring[k] = table.mean_cache.copy()
        logs[k] = table.sink = []
        stale_key = k - tau - 1
        x_ring.pop(stale_key, None)
        mean_ring.pop(stale_key, None)
        logs.pop(stale_key, None)

        if k % record_every == 0 or (sched is not None and is_boundary(k)):
            record(k)

        lo = max(k - tau, last_sync)
        if config.delay_model == "uniform" and tau > 0:
            dk = int(rng_delay.integers(lo, k + 1))
        elif config.delay_model == "cyclic":
            dk = max(k - (config.workers - 1), last_sync)
        else:
            dk = lo
        if config.keep_history:
            hist_d.append(dk)

        if dk == k:
            x_hat = x
            phi_hat = table.phi
            mean_hat = mean_ring[k]
        else:
            x_hat = x_ring[dk]
            phi_hat = table.phi.copy()
            for j in range(k - 1, dk - 1, -1):
                for i_row, old in reversed(logs[j]):
                    phi_hat[i_row] = old
            mean_hat = mean_ring[dk]

        i = int(rng_idx.integers(n))
        b_hat = apply_component(problem, i, x_hat)
        if n == 1:
            g = b_hat.copy()
        else:
            g = (b_hat - phi_hat[i]) + mean_hat

        # diagnostics at state k (uncharged, rng-free)
        rows_now = _all_rows(problem, x)
        m_hat = max(
            m_hat,
            float(np.sqrt((rows_now**2).sum(axis=1).max())),
            float(np.sqrt((table.phi**2).sum(axis=1).max())),
        )
        diff = x - x_hat
        e1 = max(e1, float(diff @ diff))
        e2 = max(e2, float(np.sum((table.phi - phi_hat) ** 2)) / n)
        if n == 1:
            g_sync = rows_now[0]
        else:
            g_sync = (rows_now[i] - table.phi[i]) + table.mean_cache
        gap = g - g_sync
        e3 = max(e3, float(gap @ gap))

        x_next = _fb_step(problem.A, gamma, x, g)
        if scheme.variant == "hsag":
            x_for = x_next
        elif scheme.variant == "svrg":
            x_for = x
        else:
            x_for = x_hat
        op += 2 + update(
            scheme, problem, k, x_for, table, i, b_hat, rng_scheme,
            allow_epoch_refresh=k + 1 < T,
        )
        if (
            config.sync_at_epoch
            and sched is not None
            and sched.is_end(k)
            and k + 1 < T
        ):
            last_sync = k + 1
        x = x_next
        if config.keep_history:
            hist_x.append(x.copy())

    record(k_end, final=True)
    tau_f = float(tau)
    m = 3.0 * m_hat
    e0 = (
        2.0 * gamma**3 * problem.mu * tau_f**2 * m**2
        + 6.0 * gamma**4 * problem.lip**2 * tau_f**2 * m**2
        + 2.0 * gamma**2 * tau_f * m**2
    )
    history = None
    if config.keep_history:
        history = AsyncHistory(
            xs=np.asarray(hist_x), delays=np.asarray(hist_d, dtype=np.int64)
        )
    report = AsyncErrorReport(m_hat=m_hat, e0=e0, e1=e1, e2=e2, e3=e3,
                              history=history)
    return x, tb.build(), report
