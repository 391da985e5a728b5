"""Random instance generators for the benchmark problem families.

Three families, all affine in the operator sense:

* quadratic — components B_i(x) = M_i x + b_i whose average has a spectrum
  placed exactly at a requested condition number; the workhorse family for
  rate checks.
* boyan_saddle — policy evaluation on the classic 13-state chain with spline
  features, recast as the regularized saddle objective
  w'b - w'A t - (1/2) w'C w + (lambda/2)||t||^2 over the stacked variable
  (t, w); per-transition sample matrices give the finite-sum structure.
* two_player_game — a strongly monotone quadratic game over paired box-free
  actions (a1_j, a2_j) constrained to u, v >= 0, u + v <= 1, solved as a
  variational inequality through the normal-cone resolvent.

Declared constants always come from the realized matrices (dense eigensolve
/ spectral norms), never from the targets, so every instance is safe to feed
to the step-size rule.  Generators are pure functions of their arguments.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .operators import (
    FiniteSumProblem,
    affine_component,
    make_problem,
    simplex_cap_normal_cone,
    zero_operator,
)
from .solver import _exact_residual, run_fb

__all__ = [
    "GeneratorSpec",
    "generate",
    "gen_quadratic",
    "gen_boyan_saddle",
    "gen_two_player_game",
    "exact_solution",
]

_FAMILIES = ("quadratic", "boyan_saddle", "two_player_game")


@dataclass(frozen=True)
class GeneratorSpec:
    """Declarative description of a generated instance.

    ``kappa_target`` only applies to the quadratic family, ``lambda_reg``
    only to the saddle; the realized (mu, L) of any family are measured from
    the matrices actually drawn and may differ from the targets.
    """

    family: str
    n: int
    d: int
    kappa_target: float = 10.0
    lambda_reg: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; pick from {_FAMILIES}")
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if self.kappa_target < 1.0:
            raise ValueError("kappa_target must be >= 1")
        if self.lambda_reg <= 0.0:
            raise ValueError("lambda_reg must be positive")


def generate(spec: GeneratorSpec) -> FiniteSumProblem:
    """Dispatch on the family name."""
    if spec.family == "quadratic":
        return gen_quadratic(spec.n, spec.d, spec.kappa_target, spec.seed)
    if spec.family == "boyan_saddle":
        return gen_boyan_saddle(spec.n, spec.d, spec.lambda_reg, spec.seed)
    return gen_two_player_game(spec.n, spec.d, spec.seed)


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _spectral_norm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, 2))


def _realized_constants(Ms) -> tuple:
    Mbar = np.mean(Ms, axis=0)
    mu = float(np.linalg.eigvalsh(_sym(Mbar)).min())
    lip = max(_spectral_norm(M) for M in Ms)
    return mu, lip


def gen_quadratic(n: int, d: int, kappa_target: float, seed: int = 0) -> FiniteSumProblem:
    """Affine components whose average has condition number ``kappa_target``.

    The average matrix is an orthogonal conjugation of a log-spaced diagonal
    with spectrum in [1, kappa]; each component adds a centered symmetric
    perturbation of spectral norm at most 0.8, keeping the average spectrum
    exact while the components genuinely differ.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    if kappa_target < 1.0:
        raise ValueError("kappa_target must be >= 1")
    rng = np.random.default_rng(seed)
    eigs = np.geomspace(1.0, float(kappa_target), d)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    Mbar = _sym((Q * eigs) @ Q.T)

    if n == 1:
        deltas = [np.zeros((d, d))]
    else:
        raw = []
        for _ in range(n):
            D = _sym(rng.standard_normal((d, d)))
            raw.append(0.4 * D / _spectral_norm(D))
        center = np.mean(raw, axis=0)
        deltas = [D - center for D in raw]

    comps = [
        affine_component(Mbar + deltas[i], rng.standard_normal(d))
        for i in range(n)
    ]
    Ms = [c.M for c in comps]
    mu, lip = _realized_constants(Ms)
    xs = np.linalg.solve(np.mean(Ms, axis=0), -np.mean([c.b for c in comps], axis=0))
    return make_problem(
        zero_operator(), comps, mu=mu, lip=lip, known_solution=xs,
        meta={"family": "quadratic", "kappa_target": float(kappa_target),
              "seed": int(seed)},
    )


def _spline_features(n_states: int, d: int) -> np.ndarray:
    """Triangular spline basis over the chain states; rows are phi(s).

    Anchors are equally spaced over the state range; each feature ramps
    linearly from 1 at its anchor to 0 at the neighboring anchors, so the
    features form a partition of unity (the classic tabular-interpolation
    construction; 13 states with d = 4 reproduces the standard table).
    """
    anchors = np.linspace(0.0, n_states - 1.0, d)
    width = (n_states - 1.0) / (d - 1)
    s = np.arange(n_states, dtype=np.float64)[:, None]
    return np.maximum(0.0, 1.0 - np.abs(s - anchors[None, :]) / width)


def gen_boyan_saddle(n: int, d: int, lambda_reg: float, seed: int = 0,
                     chain_length: Optional[int] = None) -> FiniteSumProblem:
    """Policy-evaluation saddle instance from simulated chain transitions.

    Simulates ``n`` transitions of the chain (from state s >= 2 hop 1 or 2
    states toward 0 with equal probability and reward -3; from state 1 step
    to the terminal state with reward -2), forms the per-sample matrices
    A_i = phi(s)(phi(s) - phi(s'))', b_i = r phi(s), C_i = phi(s)phi(s)',
    and emits the regularized saddle operator components

        B_i(t, w) = (lambda t - A_i' w,  A_i t + C_i w - b_i)

    over the stacked variable (t, w) in R^{2d}.  The coupling blocks cancel
    in the symmetric part, so the realized modulus is
    min(lambda, lambda_min(mean C_i)); too few samples leave the feature
    covariance singular, which raises instead of returning a non-monotone
    instance.
    """
    if d < 2:
        raise ValueError("spline features need d >= 2")
    if n < 1:
        raise ValueError("n must be positive")
    if lambda_reg <= 0.0:
        raise ValueError("lambda_reg must be positive")
    n_states = 4 * (d - 1) + 1 if chain_length is None else int(chain_length)
    if n_states < 3:
        raise ValueError("chain_length must be >= 3")
    rng = np.random.default_rng(seed)
    phi = _spline_features(n_states, d)

    lam = float(lambda_reg)
    comps = []
    eye = np.eye(d)
    for _ in range(n):
        s = int(rng.integers(1, n_states))
        if s >= 2:
            s_next = s - int(rng.integers(1, 3))
            reward = -3.0
        else:
            s_next = 0
            reward = -2.0
        f, fn = phi[s], phi[s_next]
        A_i = np.outer(f, f - fn)
        C_i = np.outer(f, f)
        b_i = reward * f
        M_i = np.block([[lam * eye, -A_i.T], [A_i, C_i]])
        c_i = np.concatenate([np.zeros(d), -b_i])
        comps.append(affine_component(M_i, c_i))

    Ms = [c.M for c in comps]
    mu, lip = _realized_constants(Ms)
    if mu <= 1e-12:
        raise ValueError(
            f"realized modulus {mu:.3e} is not positive: the sampled feature "
            "covariance is singular; increase n or lambda_reg"
        )
    xs = np.linalg.solve(np.mean(Ms, axis=0), -np.mean([c.b for c in comps], axis=0))
    return make_problem(
        zero_operator(), comps, mu=mu, lip=lip, known_solution=xs,
        meta={"family": "boyan_saddle", "lambda_reg": lam,
              "chain_length": int(n_states), "seed": int(seed)},
    )


def gen_two_player_game(n: int, d: int, seed: int = 0) -> FiniteSumProblem:
    """Strongly monotone two-player quadratic game on paired capped actions.

    Each player holds a d-vector; the stacked action a = (a1, a2) lives in
    the product of per-coordinate triangles {u, v >= 0, u + v <= 1}.  Every
    component is affine, M_i = [[C_i1, A_i1], [A_i2, C_i2]] with symmetric
    positive definite own-blocks and random cross blocks; the cross blocks
    are rescaled (halved until the average's symmetric part clears half the
    decoupled modulus) so the game is strongly monotone by construction.
    The equilibrium has no closed form — it is refined by the deterministic
    splitting iteration through :func:`exact_solution` and stored on the
    instance.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    rng = np.random.default_rng(seed)

    def spd():
        G = rng.standard_normal((d, d))
        return G @ G.T / d + 0.5 * np.eye(d)

    own1 = [spd() for _ in range(n)]
    own2 = [spd() for _ in range(n)]
    cross1 = [rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(n)]
    cross2 = [rng.standard_normal((d, d)) / np.sqrt(d) for _ in range(n)]
    offsets = [rng.standard_normal(2 * d) for _ in range(n)]

    decoupled = np.block([
        [np.mean(own1, axis=0), np.zeros((d, d))],
        [np.zeros((d, d)), np.mean(own2, axis=0)],
    ])
    mu_floor = 0.5 * float(np.linalg.eigvalsh(_sym(decoupled)).min())

    scale = 1.0
    for _ in range(64):
        Mbar = np.block([
            [np.mean(own1, axis=0), scale * np.mean(cross1, axis=0)],
            [scale * np.mean(cross2, axis=0), np.mean(own2, axis=0)],
        ])
        if float(np.linalg.eigvalsh(_sym(Mbar)).min()) >= mu_floor:
            break
        scale *= 0.5

    comps = [
        affine_component(
            np.block([[own1[i], scale * cross1[i]],
                      [scale * cross2[i], own2[i]]]),
            offsets[i],
        )
        for i in range(n)
    ]
    mu, lip = _realized_constants([c.M for c in comps])
    problem = make_problem(
        simplex_cap_normal_cone(), comps, mu=mu, lip=lip,
        meta={"family": "two_player_game", "seed": int(seed),
              "cross_scale": float(scale)},
    )
    xs, method = exact_solution(problem, with_method=True)
    return make_problem(
        simplex_cap_normal_cone(), comps, mu=mu, lip=lip, known_solution=xs,
        meta={**problem.meta, "solution_method": method},
    )


def exact_solution(problem: FiniteSumProblem, tol: float = 1e-12,
                   with_method: bool = False):
    """Solve 0 in A(x) + mean B_i(x) to high precision.

    Affine components with a zero, l2, or affine operator reduce to one
    dense linear solve (a singular system raises — that is a generator bug,
    not a tolerance issue).  Anything else falls back to the deterministic
    splitting iteration, driven until the fixed-point residual at
    gamma = mu/L^2 drops below ``tol * (1 + ||x||)``.  With
    ``with_method=True`` returns ``(x, method)`` where method is ``"dense"``
    or ``"iterative"``.
    """
    arrays = problem.affine_arrays
    if arrays is not None and problem.A.kind in ("zero", "l2", "affine"):
        Mbar = arrays[0].mean(axis=0)
        bbar = arrays[1].mean(axis=0)
        if problem.A.kind == "l2":
            Mbar = Mbar + problem.A.lam * np.eye(problem.d)
        elif problem.A.kind == "affine":
            Mbar = Mbar + problem.A.M
            bbar = bbar + problem.A.b
        x = np.linalg.solve(Mbar, -bbar)
        return (x, "dense") if with_method else x

    gamma = problem.mu / problem.lip**2
    x = np.zeros(problem.d)
    chunk = 2048
    for _ in range(512):
        if _exact_residual(problem, gamma, x) <= tol * (1.0 + float(np.linalg.norm(x))):
            break
        x, _ = run_fb(problem, gamma, x, chunk, record_every=chunk)
    else:
        raise RuntimeError(
            f"fixed-point refinement did not reach residual {tol:g} "
            f"within {512 * chunk} iterations"
        )
    return (x, "iterative") if with_method else x
