"""Proxy tables and the variance-reduced estimators built on them.

Every solver in this package replaces the full operator average B(x_k) by

    g = B_i(x) - phi_i + (1/n) * sum_j phi_j,       i drawn uniformly,

where the rows phi_i of a proxy table approximate the components at (or
near) the current point.  The estimator is unbiased for B(x) whatever the
table contains; the algorithms differ only in the table maintenance rule.
This module defines the table, the estimator, the eight maintenance rules,
their contraction constants, and the table-error diagnostics.

Maintenance rules come in two flavours, visible in the constants they carry:

* per-index rules (SAGA-style row swaps, probabilistic full refreshes) touch
  the table using values at the pre-step iterate x_k, and are summarized by
  the pair (c1, c2);
* epoch rules (SVRG-style, and the secondary half of the hybrid epoch
  scheme) periodically rewrite rows at a synchronization point, summarized
  by c3 and the maximum epoch length.

The solver invokes :func:`update` exactly once per iteration, after the
forward-backward step; :func:`update_reads_new_iterate` tells it which
iterate the scheme's rule evaluates.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .operators import FiniteSumProblem, apply_component

__all__ = [
    "ProxyTable",
    "Scheme",
    "SchemeConstants",
    "EpochSchedule",
    "ProbSchedule",
    "gd",
    "saga",
    "svrg",
    "svrg_rand",
    "sagd",
    "hsag",
    "saga_svrg_rand",
    "sarah",
    "parse_scheme",
    "init_table",
    "estimate",
    "update",
    "update_reads_new_iterate",
    "scheme_index_sets",
    "g_err",
    "h_err",
    "scheme_constants",
    "FORCED_REFRESH_STALL_FACTOR",
]

# A probabilistic-refresh table that has gone this many * n iterations
# without a full refresh is refreshed unconditionally (the drawn uniform is
# still consumed, keeping the randomness stream aligned).
FORCED_REFRESH_STALL_FACTOR = 8


# ---------------------------------------------------------------------------
# Schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EpochSchedule:
    """Epoch lengths m_0, m_1, ... ; constant, explicit list, or halving.

    ``kind`` is one of ``"constant"``, ``"list"`` (last entry repeats
    forever), or ``"halving"`` (m_0, then halved after each epoch, floored
    at 1).  All lengths are >= 1 and bounded, as the contraction analysis
    requires.
    """

    kind: str
    values: tuple
    _ends: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("constant", "list", "halving"):
            raise ValueError(f"unknown epoch schedule kind {self.kind!r}")
        if not self.values or any(int(v) != v or v < 1 for v in self.values):
            raise ValueError("epoch lengths must be integers >= 1")

    def length(self, epoch: int) -> int:
        if self.kind == "constant":
            return self.values[0]
        if self.kind == "list":
            return self.values[min(epoch, len(self.values) - 1)]
        return max(1, self.values[0] >> epoch)

    @property
    def sup(self) -> int:
        return max(self.values)

    def is_end(self, k: int) -> bool:
        """True iff iteration k is the last one of an epoch (k+1 is a boundary)."""
        target = k + 1
        if self.kind == "constant":
            return target % self.values[0] == 0
        ends = self._ends
        while not ends or ends[-1] < target:
            ends.append((ends[-1] if ends else 0) + self.length(len(ends)))
        j = bisect.bisect_left(ends, target)
        return j < len(ends) and ends[j] == target


def as_epoch_schedule(m) -> EpochSchedule:
    if isinstance(m, EpochSchedule):
        return m
    if isinstance(m, (int, np.integer)):
        return EpochSchedule("constant", (int(m),))
    if isinstance(m, (list, tuple)):
        return EpochSchedule("list", tuple(int(v) for v in m))
    if isinstance(m, dict) and m.get("kind") == "halving":
        return EpochSchedule("halving", (int(m["start"]),))
    raise ValueError(f"cannot interpret epoch schedule {m!r}")


@dataclass(frozen=True, eq=False)
class ProbSchedule:
    """Per-iteration probability p_k: constant, explicit list, callable,
    halving, or the default warmup rule p_k = 1/(2n) for k < n and 1/n
    afterwards (small for the first sweep so an all-zero table is not
    refreshed before it has absorbed any information; configurable by
    passing any other schedule).  The halving kind stores (p_0, period) and
    yields p_k = p_0 * 2^(-floor(k / period)), decaying toward zero — the
    forced-refresh stall cap is what keeps such runs from starving."""

    kind: str  # "constant" | "list" | "callable" | "warmup" | "halving"
    values: tuple = ()
    fn: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        if self.kind not in ("constant", "list", "callable", "warmup", "halving"):
            raise ValueError(f"unknown probability schedule kind {self.kind!r}")
        if self.kind in ("constant", "list"):
            if not self.values:
                raise ValueError("empty probability schedule")
            if any(not 0.0 <= v <= 1.0 for v in self.values):
                raise ValueError("probabilities must lie in [0, 1]")
        if self.kind == "halving":
            if len(self.values) != 2:
                raise ValueError("halving schedule needs (start, period)")
            p0, period = self.values
            if not 0.0 <= p0 <= 1.0:
                raise ValueError("probabilities must lie in [0, 1]")
            if int(period) != period or period < 1:
                raise ValueError("halving period must be an integer >= 1")

    def value(self, k: int, n: int) -> float:
        if self.kind == "constant":
            return self.values[0]
        if self.kind == "list":
            return self.values[min(k, len(self.values) - 1)]
        if self.kind == "warmup":
            return 1.0 / (2.0 * n) if k < n else 1.0 / n
        if self.kind == "halving":
            return self.values[0] * 2.0 ** -(k // self.values[1])
        p = float(self.fn(k))
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"schedule produced probability {p} outside [0, 1]")
        return p

    def bounds(self, n: int):
        """(inf, sup) over all k; callables cannot be bounded."""
        if self.kind == "constant":
            return self.values[0], self.values[0]
        if self.kind == "list":
            return min(self.values), max(self.values)
        if self.kind == "warmup":
            return 1.0 / (2.0 * n), 1.0 / n
        if self.kind == "halving":
            return 0.0, self.values[0]
        raise ValueError("cannot bound a callable probability schedule; "
                         "use a constant or list schedule for rate guarantees")


def as_prob_schedule(p) -> ProbSchedule:
    if isinstance(p, ProbSchedule):
        return p
    if p is None:
        return ProbSchedule("warmup")
    if isinstance(p, (float, int, np.floating, np.integer)):
        return ProbSchedule("constant", (float(p),))
    if isinstance(p, (list, tuple)):
        return ProbSchedule("list", tuple(float(v) for v in p))
    if isinstance(p, dict) and p.get("kind") == "halving":
        return ProbSchedule("halving", (float(p["start"]), int(p["period"])))
    if callable(p):
        return ProbSchedule("callable", fn=p)
    raise ValueError(f"cannot interpret probability schedule {p!r}")


# ---------------------------------------------------------------------------
# Scheme catalog
# ---------------------------------------------------------------------------

_VARIANTS = (
    "gd",
    "svrg",
    "saga",
    "svrg-rand",
    "sagd",
    "hsag",
    "saga-svrg-rand",
    "sarah",
)

# Table initialization: these variants start from a full sweep phi_i = B_i(x0);
# the probabilistic-refresh variants start from an all-zero table.
_FULL_INIT = frozenset({"gd", "svrg", "saga", "hsag", "sarah"})
_ZERO_INIT = frozenset({"svrg-rand", "sagd"})


@dataclass(frozen=True, eq=False)
class Scheme:
    """A fully parameterized table-maintenance rule.

    Use the module-level constructors (:func:`saga`, :func:`svrg`, ...)
    rather than instantiating directly.
    """

    variant: str
    m: Optional[EpochSchedule] = None
    p: Optional[ProbSchedule] = None
    q: float = 0.0
    S: Optional[frozenset] = None

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown scheme variant {self.variant!r}")


def gd() -> Scheme:
    """Rewrite the whole table at the new iterate every iteration."""
    return Scheme("gd")


def saga() -> Scheme:
    """Swap the drawn row for its freshly computed value, every iteration."""
    return Scheme("saga")


def svrg(m) -> Scheme:
    """Rewrite the whole table every m iterations (epoch schedule)."""
    return Scheme("svrg", m=as_epoch_schedule(m))


def svrg_rand(p=None) -> Scheme:
    """Rewrite the whole table with probability p_k each iteration.

    ``p=None`` selects the warmup default 1/(2n) for the first n iterations
    and 1/n afterwards.  Regardless of the schedule, a full refresh is forced
    after 8n consecutive iterations without one.
    """
    return Scheme("svrg-rand", p=as_prob_schedule(p))


def sagd(q: float) -> Scheme:
    """With probability q rewrite the whole table, otherwise do a row swap."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("q must lie in [0, 1]")
    return Scheme("sagd", q=float(q))


def hsag(S, m) -> Scheme:
    """Row swaps on the index set S, epoch rewrites on its complement."""
    return Scheme("hsag", S=frozenset(int(i) for i in S), m=as_epoch_schedule(m))


def saga_svrg_rand(S1, p=None) -> Scheme:
    """Row swaps on S1, probabilistic full rewrites on the complement."""
    return Scheme(
        "saga-svrg-rand", S=frozenset(int(i) for i in S1), p=as_prob_schedule(p)
    )


def sarah(m) -> Scheme:
    """Recursive direction with epoch restarts; solved by its own loop."""
    return Scheme("sarah", m=as_epoch_schedule(m))


def _index_count(spec_value, n: Optional[int]) -> frozenset:
    """Accept an explicit index list or a count meaning 'the first j indices'."""
    if isinstance(spec_value, (int, np.integer)):
        return frozenset(range(int(spec_value)))
    return frozenset(int(i) for i in spec_value)


def parse_scheme(cfg: Union[str, dict]) -> Scheme:
    """Build a scheme from its CLI/config representation.

    Accepts a bare canonical name (``"saga"``) or a mapping with ``name``
    plus the variant's parameters, e.g. ``{"name": "svrg", "m": 200}``,
    ``{"name": "hsag", "S": 5, "m": 100}`` (an integer S means the first S
    indices), ``{"name": "sagd", "q": 0.5}``.
    """
    if isinstance(cfg, str):
        cfg = {"name": cfg}
    name = cfg.get("name")
    if name == "gd":
        return gd()
    if name == "saga":
        return saga()
    if name == "svrg":
        return svrg(cfg["m"])
    if name == "svrg-rand":
        return svrg_rand(cfg.get("p"))
    if name == "sagd":
        return sagd(cfg["q"])
    if name == "hsag":
        return hsag(_index_count(cfg["S"], None), cfg["m"])
    if name == "saga-svrg-rand":
        return saga_svrg_rand(_index_count(cfg["S1"], None), cfg.get("p"))
    if name == "sarah":
        return sarah(cfg["m"])
    raise ValueError(f"unknown scheme name {name!r}")


def update_reads_new_iterate(scheme: Scheme) -> bool:
    """Whether update() must be handed x_{k+1} rather than x_k.

    The full-rewrite rule and the epoch half of the hybrid row-swap/epoch
    rule evaluate at the iterate produced by the step they follow; all other
    rules evaluate at the iterate the estimator just used.
    """
    return scheme.variant in ("gd", "hsag")


def scheme_index_sets(scheme: Scheme, n: int):
    """(S, S_complement): rows maintained per-index vs rewritten at epochs."""
    everything = frozenset(range(n))
    if scheme.variant in ("saga", "svrg-rand", "sagd", "saga-svrg-rand"):
        return everything, frozenset()
    if scheme.variant in ("gd", "svrg"):
        return frozenset(), everything
    if scheme.variant == "hsag":
        return scheme.S, everything - scheme.S
    raise ValueError(f"{scheme.variant} does not maintain split index sets")


# ---------------------------------------------------------------------------
# Proxy table
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ProxyTable:
    """The n x d table of proxy rows plus a maintained mean.

    The mean is updated incrementally on row swaps and recomputed exactly
    after every n incremental updates, which keeps its drift below
    1e-10 * (1 + max_i ||phi_i||) at all times.  Single-writer: the solver
    owns the table; concurrent readers must snapshot by value.
    """

    phi: np.ndarray
    mean_cache: np.ndarray
    updates_since_recompute: int = 0
    last_full_refresh: int = -1

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    def recompute_mean(self) -> None:
        self.mean_cache = self.phi.mean(axis=0)
        self.updates_since_recompute = 0

    def set_row(self, i: int, value: np.ndarray) -> None:
        self.mean_cache = self.mean_cache + (value - self.phi[i]) / self.n
        self.phi[i] = value
        self.updates_since_recompute += 1
        if self.updates_since_recompute >= self.n:
            self.recompute_mean()

    def write_rows(self, indices, rows) -> None:
        """Bulk write with an exact mean recompute (used by epoch rewrites)."""
        self.phi[indices] = rows
        self.recompute_mean()

    def refresh_full(self, rows: np.ndarray, k: int) -> None:
        self.phi[:] = rows
        self.recompute_mean()
        self.last_full_refresh = k

    def copy(self) -> "ProxyTable":
        return ProxyTable(
            self.phi.copy(),
            self.mean_cache.copy(),
            self.updates_since_recompute,
            self.last_full_refresh,
        )


def _component_rows(problem: FiniteSumProblem, x: np.ndarray, indices) -> np.ndarray:
    return np.stack([apply_component(problem, i, x) for i in indices])


def _rows_reusing(problem, x, indices, i_k, b_ik_x) -> np.ndarray:
    """Rows B_i(x) for i in indices, splicing in the precomputed row i_k."""
    return np.stack(
        [b_ik_x if i == i_k else apply_component(problem, i, x) for i in indices]
    )


def init_table(scheme: Scheme, problem: FiniteSumProblem, x0: np.ndarray):
    """Build the starting table for a scheme; returns (table, op_evals).

    Full-sweep variants pay n component evaluations for phi_i = B_i(x0);
    probabilistic-refresh variants start from zeros and pay nothing; the
    hybrid pays only for its row-swap half.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (problem.d,) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be a finite vector of the problem dimension")
    _validate_index_sets(scheme, problem.n)
    n, d = problem.n, problem.d
    if scheme.variant in _FULL_INIT:
        phi = _component_rows(problem, x0, range(n))
        cost = n
    elif scheme.variant in _ZERO_INIT:
        phi = np.zeros((n, d))
        cost = 0
    elif scheme.variant == "saga-svrg-rand":
        phi = np.zeros((n, d))
        rows = sorted(scheme.S)
        if rows:
            phi[rows] = _component_rows(problem, x0, rows)
        cost = len(rows)
    else:  # pragma: no cover - catalog is closed
        raise ValueError(f"unknown scheme variant {scheme.variant!r}")
    table = ProxyTable(phi=phi, mean_cache=phi.mean(axis=0))
    return table, cost


def _validate_index_sets(scheme: Scheme, n: int) -> None:
    if scheme.S is not None and scheme.S and not scheme.S <= frozenset(range(n)):
        raise ValueError(f"index set {sorted(scheme.S)} out of range for n={n}")


def estimate(table: ProxyTable, problem: FiniteSumProblem, x: np.ndarray, i: int):
    """The variance-reduced direction at x using row i; returns (g, b_i_x).

    Costs exactly one component evaluation.  The fresh B_i(x) is returned so
    the subsequent table update can reuse it.  For n = 1 the row and the
    mean cancel identically, so g is exactly the fresh evaluation.
    """
    b = apply_component(problem, i, x)
    if table.n == 1:
        return b.copy(), b
    g = (b - table.phi[i]) + table.mean_cache
    return g, b


def update(
    scheme: Scheme,
    problem: FiniteSumProblem,
    k: int,
    x_now: np.ndarray,
    table: ProxyTable,
    i_k: int,
    b_ik_x: np.ndarray,
    rng: np.random.Generator,
    allow_epoch_refresh: bool = True,
) -> int:
    """Apply the scheme's table maintenance rule after iteration k.

    ``x_now`` is the iterate the scheme's rule evaluates: the new iterate
    x_{k+1} when :func:`update_reads_new_iterate` is true, the pre-step
    iterate x_k otherwise.  ``b_ik_x`` is the fresh B_{i_k}(x_k) the
    estimator already computed.  Scheme randomness is drawn from ``rng``
    only — probabilistic variants consume exactly one uniform per call
    whatever the outcome.

    Returns the number of additional component evaluations charged.  Row
    swaps reuse ``b_ik_x`` and charge 0; a probabilistic full rewrite reuses
    it for the drawn row and charges n-1; an epoch rewrite evaluates at a
    different iterate and charges the full row count; the every-iteration
    full rewrite charges n-1 with one row amortized against the iteration's
    fixed budget.

    ``allow_epoch_refresh=False`` suppresses deterministic epoch rewrites
    (and the every-iteration rewrite) — the solver passes it on the final
    iteration, whose rewrite no estimator would ever read.
    """
    v = scheme.variant
    n = table.n

    if v == "saga":
        table.set_row(i_k, b_ik_x)
        return 0

    if v == "gd":
        if not allow_epoch_refresh:
            return 0
        table.refresh_full(_component_rows(problem, x_now, range(n)), k)
        return n - 1

    if v == "svrg":
        if allow_epoch_refresh and scheme.m.is_end(k):
            table.refresh_full(_component_rows(problem, x_now, range(n)), k)
            return n
        return 0

    if v == "svrg-rand":
        u = rng.random()
        p_k = scheme.p.value(k, n)
        stalled = (k - table.last_full_refresh) >= FORCED_REFRESH_STALL_FACTOR * n
        if u < p_k or stalled:
            table.refresh_full(_rows_reusing(problem, x_now, range(n), i_k, b_ik_x), k)
            return n - 1
        return 0

    if v == "sagd":
        u = rng.random()
        if u < scheme.q:
            table.refresh_full(_rows_reusing(problem, x_now, range(n), i_k, b_ik_x), k)
            return n - 1
        table.set_row(i_k, b_ik_x)
        return 0

    if v == "hsag":
        if i_k in scheme.S:
            table.set_row(i_k, b_ik_x)
        if allow_epoch_refresh and scheme.m.is_end(k):
            comp = sorted(frozenset(range(n)) - scheme.S)
            if comp:
                table.write_rows(comp, _component_rows(problem, x_now, comp))
            return len(comp)
        return 0

    if v == "saga-svrg-rand":
        u = rng.random()
        cost = 0
        if i_k in scheme.S:
            table.set_row(i_k, b_ik_x)
        p_k = scheme.p.value(k, n)
        if u < p_k:
            comp = sorted(frozenset(range(n)) - scheme.S)
            if comp:
                table.write_rows(comp, _rows_reusing(problem, x_now, comp, i_k, b_ik_x))
                cost = len(comp) - (1 if i_k in comp else 0)
        return cost

    if v == "sarah":
        raise ValueError(
            "the recursive-direction scheme does not maintain a proxy table; "
            "use its dedicated solver loop"
        )

    raise ValueError(f"unknown scheme variant {v!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def _table_error(table: ProxyTable, problem: FiniteSumProblem, indices) -> float:
    if problem.known_solution is None:
        raise ValueError("table-error diagnostics need a problem with known_solution")
    ref = problem.components_at_solution
    total = 0.0
    for i in indices:
        diff = table.phi[i] - ref[i]
        total += float(diff @ diff)
    return total / problem.n


def g_err(table: ProxyTable, problem: FiniteSumProblem, S) -> float:
    """(1/n) * sum_{i in S} ||phi_i - B_i(x*)||^2 (0 when S is empty)."""
    return _table_error(table, problem, sorted(S))


def h_err(table: ProxyTable, problem: FiniteSumProblem, S) -> float:
    """Same error sum as :func:`g_err`, taken over the complement of S."""
    comp = sorted(frozenset(range(problem.n)) - frozenset(S))
    return _table_error(table, problem, comp)


# ---------------------------------------------------------------------------
# Contraction constants
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SchemeConstants:
    """Constants (c1, c2, c3, |S|, m_bar) the step-size rule consumes.

    c1 < 1 bounds the geometric memory of the per-index table error, c2
    scales its dependence on the iterate error, c3 plays the same role for
    epoch-rewritten rows with epochs of length at most m_bar.
    """

    c1: float
    c2: float
    c3: float
    s_cardinality: int
    m_bar: int


def scheme_constants(scheme: Scheme, problem: FiniteSumProblem) -> SchemeConstants:
    """The contraction constants of a scheme on a given problem."""
    _validate_index_sets(scheme, problem.n)
    n = problem.n
    L2 = problem.lip**2
    v = scheme.variant

    if v == "gd":
        out = SchemeConstants(0.0, 0.0, L2, 0, 1)
    elif v == "svrg":
        out = SchemeConstants(0.0, 0.0, L2, 0, scheme.m.sup)
    elif v == "saga":
        out = SchemeConstants(1.0 - 1.0 / n, L2 / n, 0.0, n, 1)
    elif v == "svrg-rand":
        p_lo, p_hi = scheme.p.bounds(n)
        out = SchemeConstants(1.0 - p_lo, p_hi * L2, 0.0, n, 1)
    elif v == "sagd":
        c1 = (1.0 - scheme.q) * (1.0 - 1.0 / n)
        out = SchemeConstants(c1, (1.0 - c1) * L2, 0.0, n, 1)
    elif v == "hsag":
        s = len(scheme.S)
        # With the whole index set on the row-swap side there are no epoch
        # rewrites at all and the constants coincide with plain row swaps.
        m_bar = 1 if s == n else scheme.m.sup
        out = SchemeConstants(1.0 - 1.0 / n, s * L2 / n**2, (n - s) * L2 / n, s, m_bar)
    elif v == "saga-svrg-rand":
        s1 = len(scheme.S)
        p_lo, p_hi = scheme.p.bounds(n)
        c1 = max(1.0 - 1.0 / n, 1.0 - p_lo)
        c2 = s1 * L2 / n**2 + p_hi * (n - s1) * L2 / n
        out = SchemeConstants(c1, c2, 0.0, n, 1)
    elif v == "sarah":
        raise ValueError(
            "the recursive-direction scheme has its own analysis and no "
            "table-contraction constants"
        )
    else:  # pragma: no cover
        raise ValueError(f"unknown scheme variant {v!r}")

    if not out.c1 < 1.0:
        raise ValueError(
            f"table memory constant c1={out.c1} is not < 1; "
            "the refresh probabilities must be bounded away from zero"
        )
    if min(out.c1, out.c2, out.c3) < 0 or not math.isfinite(out.c2 + out.c3):
        raise ValueError("contraction constants must be finite and nonnegative")
    return out
