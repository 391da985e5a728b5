"""Operator abstractions for finite-sum monotone inclusion problems.

The problem solved throughout this package is to find x with

    0 in A(x) + B(x),      B(x) = (1/n) * sum_i B_i(x),

where A is maximal monotone and only ever accessed through its resolvent
J_gamma = (I + gamma*A)^{-1}, B is strongly monotone, and each component
B_i is Lipschitz.  This module provides the resolvent catalog, Lipschitz
components, the problem container, and JSON (de)serialization so the CLI
and the tests can share fixtures.

All linear algebra is dense float64; indices are 0-based.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "ResolventOperator",
    "LipschitzComponent",
    "FiniteSumProblem",
    "zero_operator",
    "l2_regularizer",
    "box_normal_cone",
    "simplex_cap_normal_cone",
    "affine_operator",
    "custom_resolvent",
    "affine_component",
    "callback_component",
    "make_problem",
    "apply_component",
    "apply_full",
    "resolve",
    "estimate_constants",
    "project_simplex_cap",
    "problem_to_json",
    "problem_from_json",
]


def _as_vector(x, d: Optional[int] = None, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"{name} must be a 1-d vector, got shape {x.shape}")
    if d is not None and x.shape[0] != d:
        raise ValueError(f"{name} has dimension {x.shape[0]}, expected {d}")
    return x


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def project_simplex_cap(y: np.ndarray) -> np.ndarray:
    """Project each coordinate pair of ``y`` onto {(u, v): u, v >= 0, u + v <= 1}.

    ``y`` has even length 2m; pair j is ``(y[j], y[m + j])``, i.e. the first
    half of the vector is paired with the second half.  The projection of a
    point outside the triangle is the closest of its projections onto the
    three edge segments, which is exact for a convex polygon.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] % 2 != 0:
        raise ValueError("simplex-cap projection needs an even-dimensional vector")
    m = y.shape[0] // 2
    u, v = y[:m], y[m:]

    inside = (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0)

    # Candidate 1: bottom edge (t, 0), candidate 2: left edge (0, t),
    # candidate 3: hypotenuse (t, 1 - t) with t = (u - v + 1)/2 clipped.
    c1u = np.clip(u, 0.0, 1.0)
    c2v = np.clip(v, 0.0, 1.0)
    t = np.clip(0.5 * (u - v + 1.0), 0.0, 1.0)

    d1 = (u - c1u) ** 2 + v**2
    d2 = u**2 + (v - c2v) ** 2
    d3 = (u - t) ** 2 + (v - (1.0 - t)) ** 2

    best = np.argmin(np.stack([d1, d2, d3]), axis=0)
    pu = np.choose(best, [c1u, np.zeros(m), t])
    pv = np.choose(best, [np.zeros(m), c2v, 1.0 - t])

    out = np.empty_like(y)
    out[:m] = np.where(inside, u, pu)
    out[m:] = np.where(inside, v, pv)
    return out


@dataclass(frozen=True, eq=False)
class ResolventOperator:
    """A maximal monotone operator A exposed only through its resolvent.

    Forward-backward splitting needs nothing but x -> (I + gamma*A)^{-1}(x),
    so set-valued evaluation is deliberately not represented.  ``kind`` is a
    closed catalog of analytically known resolvents plus a dense-solve affine
    case; arbitrary user resolvents enter through ``kind="callback"``.
    """

    kind: str
    lam: float = 0.0
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None
    M: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    fn: Optional[Callable[[float, np.ndarray], np.ndarray]] = None

    def resolve(self, gamma: float, y: np.ndarray) -> np.ndarray:
        return resolve(self, gamma, y)


def zero_operator() -> ResolventOperator:
    """A == 0; the resolvent is the identity."""
    return ResolventOperator(kind="zero")


def l2_regularizer(lam: float) -> ResolventOperator:
    """A = lam * I; the resolvent shrinks by 1/(1 + gamma*lam)."""
    if lam < 0:
        raise ValueError("l2 regularizer weight must be nonnegative")
    return ResolventOperator(kind="l2", lam=float(lam))


def box_normal_cone(lo, hi) -> ResolventOperator:
    """Normal cone of the box [lo, hi]; the resolvent clamps coordinatewise."""
    lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
    if np.any(lo > hi):
        raise ValueError("box bounds must satisfy lo <= hi")
    return ResolventOperator(kind="box", lo=_readonly(lo), hi=_readonly(hi))


def simplex_cap_normal_cone() -> ResolventOperator:
    """Normal cone of the per-coordinate-pair set {u, v >= 0, u + v <= 1}."""
    return ResolventOperator(kind="simplex_cap")


def affine_operator(M, b) -> ResolventOperator:
    """A(x) = Mx + b with M positive semidefinite; dense-solve resolvent."""
    M = np.asarray(M, dtype=np.float64)
    b = _as_vector(b, name="b")
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] != b.shape[0]:
        raise ValueError("affine operator needs square M matching b")
    return ResolventOperator(kind="affine", M=_readonly(M), b=_readonly(b))


def custom_resolvent(fn: Callable[[float, np.ndarray], np.ndarray]) -> ResolventOperator:
    """Wrap a user-supplied resolvent ``fn(gamma, y) -> x``.

    Non-expansiveness is the caller's responsibility; the property tests
    sample it for the built-in catalog only.
    """
    return ResolventOperator(kind="callback", fn=fn)


def resolve(A: ResolventOperator, gamma: float, y: np.ndarray) -> np.ndarray:
    """Evaluate x = (I + gamma*A)^{-1}(y) for a catalog operator.

    Parameters
    ----------
    A : ResolventOperator
    gamma : float
        Positive step size.
    y : ndarray
        Point to resolve.

    Returns
    -------
    ndarray
        The unique x with x + gamma*A(x) containing y.
    """
    if gamma <= 0:
        raise ValueError("resolvent step gamma must be positive")
    y = np.asarray(y, dtype=np.float64)
    if A.kind == "zero":
        return y
    if A.kind == "l2":
        return y / (1.0 + gamma * A.lam)
    if A.kind == "box":
        return np.clip(y, A.lo, A.hi)
    if A.kind == "simplex_cap":
        return project_simplex_cap(y)
    if A.kind == "affine":
        d = A.M.shape[0]
        try:
            return np.linalg.solve(np.eye(d) + gamma * A.M, y - gamma * A.b)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - PSD M cannot trigger
            raise np.linalg.LinAlgError(
                f"(I + gamma*M) is singular at gamma={gamma}; M is not PSD"
            ) from exc
    if A.kind == "callback":
        return np.asarray(A.fn(gamma, y), dtype=np.float64)
    raise ValueError(f"unknown resolvent kind {A.kind!r}")


@dataclass(frozen=True, eq=False)
class LipschitzComponent:
    """One single-valued Lipschitz map B_i, affine (Mx + b) or a callback."""

    kind: str  # "affine" | "callback"
    M: Optional[np.ndarray] = None
    b: Optional[np.ndarray] = None
    fn: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "affine":
            return self.M @ x + self.b
        return np.asarray(self.fn(x), dtype=np.float64)


def affine_component(M, b) -> LipschitzComponent:
    """Component B_i(x) = Mx + b."""
    M = np.asarray(M, dtype=np.float64)
    b = _as_vector(b, name="b")
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] != b.shape[0]:
        raise ValueError("affine component needs square M matching b")
    return LipschitzComponent(kind="affine", M=_readonly(M), b=_readonly(b))


def callback_component(fn: Callable[[np.ndarray], np.ndarray]) -> LipschitzComponent:
    """Component given by an arbitrary single-valued map."""
    return LipschitzComponent(kind="callback", fn=fn)


@dataclass(eq=False)
class FiniteSumProblem:
    """Container for 0 in A(x) + (1/n) * sum_i B_i(x).

    ``mu`` (strong monotonicity of the average B) and ``lip`` (Lipschitz
    constant of every component) are declared inputs: there is no way to
    certify them for a black-box B, so they are checked only by the
    :func:`estimate_constants` diagnostic.  Instances are immutable after
    construction and safe to share across threads.
    """

    A: ResolventOperator
    components: tuple
    n: int
    d: int
    mu: float
    lip: float
    known_solution: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.components = tuple(self.components)
        if self.n != len(self.components) or self.n < 1:
            raise ValueError(f"n={self.n} does not match {len(self.components)} components")
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not (0 < self.mu <= self.lip):
            raise ValueError(f"need 0 < mu <= lip, got mu={self.mu}, lip={self.lip}")
        if self.known_solution is not None:
            xs = _readonly(_as_vector(self.known_solution, self.d, "known_solution"))
            self.known_solution = xs
            gamma = self.mu / self.lip**2
            res = np.linalg.norm(xs - resolve(self.A, gamma, xs - gamma * apply_full(self, xs)))
            if res > 1e-8 * (1.0 + np.linalg.norm(xs)):
                raise ValueError(
                    f"known_solution fails the fixed-point residual check: {res:.3e}"
                )

    @property
    def kappa(self) -> float:
        return self.lip / self.mu

    @cached_property
    def affine_arrays(self):
        """Stacked (n, d, d) matrices and (n, d) offsets, or None if any component is a callback."""
        if any(c.kind != "affine" for c in self.components):
            return None
        M = np.ascontiguousarray(np.stack([c.M for c in self.components]))
        b = np.ascontiguousarray(np.stack([c.b for c in self.components]))
        return M, b

    @cached_property
    def components_at_solution(self) -> np.ndarray:
        """(n, d) matrix of B_i(x*); cached so diagnostics never re-evaluate."""
        if self.known_solution is None:
            raise ValueError("problem has no known solution")
        return _readonly(
            np.stack([c(self.known_solution) for c in self.components])
        )


def make_problem(
    A: ResolventOperator,
    components: Sequence[LipschitzComponent],
    mu: float,
    lip: float,
    known_solution=None,
    meta: Optional[dict] = None,
) -> FiniteSumProblem:
    """Build a :class:`FiniteSumProblem`, inferring n and d from the components."""
    components = tuple(components)
    if not components:
        raise ValueError("need at least one component")
    first = components[0]
    if first.kind == "affine":
        d = first.b.shape[0]
    else:
        raise ValueError("make_problem infers d from an affine first component; "
                         "construct FiniteSumProblem directly for callback-only problems")
    return FiniteSumProblem(
        A=A,
        components=components,
        n=len(components),
        d=d,
        mu=float(mu),
        lip=float(lip),
        known_solution=known_solution,
        meta=dict(meta or {}),
    )


def apply_component(problem: FiniteSumProblem, i: int, x: np.ndarray) -> np.ndarray:
    """Evaluate B_i(x) for 0 <= i < n.

    Performs exactly one component evaluation; counting operator evaluations
    is the caller's contract, this function increments nothing.
    """
    if not 0 <= i < problem.n:
        raise IndexError(f"component index {i} out of range for n={problem.n}")
    return problem.components[i](x)


def apply_full(problem: FiniteSumProblem, x: np.ndarray) -> np.ndarray:
    """Evaluate B(x) = (1/n) * sum_i B_i(x); costs n component evaluations.

    The reduction is deliberately the same one a proxy-table mean uses
    (stack rows, then ``mean(axis=0)``), so a full-table refresh followed by
    a table mean reproduces this value bit for bit.
    """
    rows = np.stack([c(x) for c in problem.components])
    return rows.mean(axis=0)


def estimate_constants(
    problem: FiniteSumProblem, samples: int = 100, radius: float = 1.0, seed: int = 0
):
    """Sample-based sanity check of the declared (mu, lip).

    Draws ``samples`` Gaussian pairs of scale ``radius`` and returns

        mu_hat = min over pairs of  <B(x) - B(y), x - y> / ||x - y||^2
        L_hat  = max over pairs and components of ||B_i(x) - B_i(y)|| / ||x - y||

    Both are one-sided estimates: mu_hat >= the true modulus never holds in
    general, but mu_hat < declared mu or L_hat > declared lip is a red flag
    the caller may warn about.
    """
    if samples < 2:
        raise ValueError("need samples >= 2")
    rng = np.random.default_rng(seed)
    mu_hat = np.inf
    lip_hat = 0.0
    used = 0
    for _ in range(samples):
        x = radius * rng.standard_normal(problem.d)
        y = radius * rng.standard_normal(problem.d)
        diff = x - y
        nrm2 = float(diff @ diff)
        if nrm2 == 0.0:
            continue
        used += 1
        mu_hat = min(mu_hat, float((apply_full(problem, x) - apply_full(problem, y)) @ diff) / nrm2)
        nrm = np.sqrt(nrm2)
        for c in problem.components:
            lip_hat = max(lip_hat, float(np.linalg.norm(c(x) - c(y))) / nrm)
    if used == 0:
        raise ValueError("all sampled pairs were degenerate (x == y)")
    return mu_hat, lip_hat


# ---------------------------------------------------------------------------
# JSON fixtures
# ---------------------------------------------------------------------------


def _operator_to_obj(A: ResolventOperator) -> dict:
    if A.kind == "zero":
        return {"kind": "zero"}
    if A.kind == "l2":
        return {"kind": "l2", "lam": A.lam}
    if A.kind == "box":
        return {"kind": "box", "lo": A.lo.tolist(), "hi": A.hi.tolist()}
    if A.kind == "simplex_cap":
        return {"kind": "simplex_cap"}
    if A.kind == "affine":
        return {"kind": "affine", "M": A.M.tolist(), "b": A.b.tolist()}
    raise ValueError(f"operator kind {A.kind!r} cannot be serialized")


def _operator_from_obj(obj: dict) -> ResolventOperator:
    kind = obj["kind"]
    if kind == "zero":
        return zero_operator()
    if kind == "l2":
        return l2_regularizer(obj["lam"])
    if kind == "box":
        return box_normal_cone(obj["lo"], obj["hi"])
    if kind == "simplex_cap":
        return simplex_cap_normal_cone()
    if kind == "affine":
        return affine_operator(obj["M"], obj["b"])
    raise ValueError(f"unknown operator kind {kind!r} in fixture")


def problem_to_json(problem: FiniteSumProblem) -> str:
    """Serialize a problem to a self-describing JSON document.

    Matrices are row-major nested lists with explicit dimensions; floats are
    emitted in shortest round-trip decimal so a reload reproduces the exact
    same float64 values.  Callback components/operators cannot be serialized.
    """
    if any(c.kind != "affine" for c in problem.components):
        raise ValueError("callback components cannot be serialized to JSON")
    doc = {
        "format": "vrsplit-problem/1",
        "n": problem.n,
        "d": problem.d,
        "mu": problem.mu,
        "lip": problem.lip,
        "operator": _operator_to_obj(problem.A),
        "components": [{"M": c.M.tolist(), "b": c.b.tolist()} for c in problem.components],
        "known_solution": None
        if problem.known_solution is None
        else problem.known_solution.tolist(),
        "meta": problem.meta,
    }
    return json.dumps(doc, indent=2)


def problem_from_json(text: str) -> FiniteSumProblem:
    """Inverse of :func:`problem_to_json`."""
    doc = json.loads(text)
    if doc.get("format") != "vrsplit-problem/1":
        raise ValueError("not a vrsplit problem fixture")
    comps = tuple(affine_component(c["M"], c["b"]) for c in doc["components"])
    return FiniteSumProblem(
        A=_operator_from_obj(doc["operator"]),
        components=comps,
        n=doc["n"],
        d=doc["d"],
        mu=doc["mu"],
        lip=doc["lip"],
        known_solution=doc["known_solution"],
        meta=doc.get("meta", {}),
    )
