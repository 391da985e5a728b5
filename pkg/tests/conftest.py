"""Shared problem builders for the test suite."""

import numpy as np

from vrsplit.operators import (
    FiniteSumProblem,
    affine_component,
    callback_component,
    l2_regularizer,
    make_problem,
    zero_operator,
)


def random_affine_problem(rng, n=5, d=4, lam=0.0, with_solution=False):
    """PSD-symmetric components plus noise; exact mu/lip bookkeeping."""
    comps = []
    mats = []
    for _ in range(n):
        Q = rng.standard_normal((d, d))
        M = Q @ Q.T + 0.5 * np.eye(d)
        comps.append(affine_component(M, rng.standard_normal(d)))
        mats.append(M)
    mbar = np.mean(mats, axis=0)
    mu = float(np.linalg.eigvalsh(0.5 * (mbar + mbar.T)).min())
    lip = float(max(np.linalg.norm(M, 2) for M in mats))
    A = l2_regularizer(lam) if lam else zero_operator()
    sol = None
    if with_solution:
        bbar = np.mean([c.b for c in comps], axis=0)
        sol = np.linalg.solve(lam * np.eye(d) + mbar, -bbar)
    return make_problem(A, comps, mu=mu, lip=lip, known_solution=sol)


def counting_problem(n=4, d=3, seed=0):
    """Components B_i(x) = x + c_i behind a shared evaluation counter."""
    rng = np.random.default_rng(seed)
    counter = {"evals": 0}
    comps = []
    for _ in range(n):
        shift = rng.standard_normal(d)

        def f(x, shift=shift):
            counter["evals"] += 1
            return x + shift

        comps.append(callback_component(f))
    problem = FiniteSumProblem(
        A=zero_operator(), components=comps, n=n, d=d, mu=1.0, lip=1.0
    )
    return problem, counter
