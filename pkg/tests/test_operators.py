"""Operator catalog, problem container, and serialization round-trips."""

import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from vrsplit.operators import (
    FiniteSumProblem,
    affine_component,
    affine_operator,
    apply_component,
    apply_full,
    box_normal_cone,
    callback_component,
    custom_resolvent,
    estimate_constants,
    l2_regularizer,
    make_problem,
    problem_from_json,
    problem_to_json,
    project_simplex_cap,
    resolve,
    simplex_cap_normal_cone,
    zero_operator,
)


from conftest import random_affine_problem


class TestSimplexCapProjection:
    def triangle_grid(self, k=60):
        pts = []
        for i in range(k + 1):
            for j in range(k + 1 - i):
                pts.append((i / k, j / k))
        return np.array(pts)

    def test_known_points(self):
        assert_allclose(project_simplex_cap(np.array([2.0, 2.0])), [0.5, 0.5])
        assert_allclose(project_simplex_cap(np.array([-1.0, 0.5])), [0.0, 0.5])
        assert_allclose(project_simplex_cap(np.array([0.5, -3.0])), [0.5, 0.0])
        assert_allclose(project_simplex_cap(np.array([2.0, -1.0])), [1.0, 0.0])
        inside = np.array([0.25, 0.25])
        assert np.array_equal(project_simplex_cap(inside), inside)

    def test_variational_inequality_oracle(self):
        # p is the projection of y iff <y - p, z - p> <= 0 for every feasible z.
        rng = np.random.default_rng(42)
        grid = self.triangle_grid()
        for _ in range(200):
            y = 3.0 * rng.standard_normal(2)
            p = project_simplex_cap(y)
            u, v = p
            assert u >= -1e-15 and v >= -1e-15 and u + v <= 1 + 1e-15
            gaps = (y[0] - u) * (grid[:, 0] - u) + (y[1] - v) * (grid[:, 1] - v)
            assert gaps.max() <= 1e-12

    def test_pairs_use_half_offset_layout(self):
        # Vector (u1, u2, v1, v2): pair 0 is (u1, v1), pair 1 is (u2, v2).
        y = np.array([2.0, 0.25, 2.0, 0.25])
        out = project_simplex_cap(y)
        assert_allclose(out, [0.5, 0.25, 0.5, 0.25])

    def test_odd_dimension_rejected(self):
        with pytest.raises(ValueError):
            project_simplex_cap(np.zeros(3))


class TestResolvents:
    def test_zero_is_identity(self):
        y = np.random.default_rng(0).standard_normal(7)
        assert np.array_equal(resolve(zero_operator(), 0.3, y), y)

    def test_l2_shrinkage(self):
        y = np.array([1.0, -2.0, 5.0])
        assert_allclose(resolve(l2_regularizer(3.0), 0.5, y), y / 2.5)

    def test_box_clamps(self):
        A = box_normal_cone([-1.0, 0.0], [1.0, 2.0])
        assert_allclose(resolve(A, 1.0, np.array([-5.0, 3.0])), [-1.0, 2.0])

    def test_affine_resolvent_plugback(self):
        rng = np.random.default_rng(1)
        Q = rng.standard_normal((6, 6))
        M = Q @ Q.T
        b = rng.standard_normal(6)
        A = affine_operator(M, b)
        for gamma in (0.01, 0.5, 2.0):
            y = rng.standard_normal(6)
            x = resolve(A, gamma, y)
            resid = np.linalg.norm(x + gamma * (M @ x + b) - y)
            assert resid <= 1e-12 * (1.0 + np.linalg.norm(y))

    def test_callback_resolvent(self):
        A = custom_resolvent(lambda gamma, y: y * 0.0)
        assert_allclose(resolve(A, 1.0, np.ones(3)), np.zeros(3))

    def test_nonpositive_gamma_rejected(self):
        with pytest.raises(ValueError):
            resolve(zero_operator(), 0.0, np.zeros(2))

    @pytest.mark.parametrize(
        "op,dim",
        [
            (zero_operator(), 6),
            (l2_regularizer(0.7), 6),
            (box_normal_cone(-0.5, 0.5), 6),
            (simplex_cap_normal_cone(), 6),
            (
                affine_operator(
                    np.diag([0.0, 1.0, 2.0, 3.0, 4.0, 5.0]), np.zeros(6)
                ),
                6,
            ),
        ],
        ids=["zero", "l2", "box", "simplex_cap", "affine"],
    )
    def test_nonexpansiveness(self, op, dim):
        rng = np.random.default_rng(7)
        for gamma in (0.05, 1.0):
            y1 = 2.0 * rng.standard_normal((1000, dim))
            y2 = 2.0 * rng.standard_normal((1000, dim))
            for a, b in zip(y1, y2):
                lhs = np.linalg.norm(resolve(op, gamma, a) - resolve(op, gamma, b))
                rhs = np.linalg.norm(a - b)
                assert lhs <= rhs * (1.0 + 1e-12) + 1e-15


class TestProblemContainer:
    def test_apply_component_matches_direct_eval(self):
        rng = np.random.default_rng(42)
        P = random_affine_problem(rng)
        x = rng.standard_normal(P.d)
        for i in range(P.n):
            c = P.components[i]
            assert np.array_equal(apply_component(P, i, x), c.M @ x + c.b)

    def test_apply_component_bounds_checked(self):
        P = random_affine_problem(np.random.default_rng(0))
        with pytest.raises(IndexError):
            apply_component(P, P.n, np.zeros(P.d))
        with pytest.raises(IndexError):
            apply_component(P, -1, np.zeros(P.d))

    def test_apply_full_is_component_mean(self):
        rng = np.random.default_rng(3)
        P = random_affine_problem(rng, n=17, d=5)
        for _ in range(10):
            x = rng.standard_normal(P.d)
            ref = np.mean([apply_component(P, i, x) for i in range(P.n)], axis=0)
            got = apply_full(P, x)
            assert np.linalg.norm(got - ref) <= 1e-14 * (1.0 + np.linalg.norm(ref))

    def test_apply_full_callback_path(self):
        comps = [
            callback_component(lambda x: 2.0 * x),
            callback_component(lambda x: 4.0 * x),
        ]
        P = FiniteSumProblem(
            A=zero_operator(), components=comps, n=2, d=3, mu=3.0, lip=4.0
        )
        x = np.array([1.0, -1.0, 2.0])
        assert_allclose(apply_full(P, x), 3.0 * x)
        assert P.affine_arrays is None

    def test_validation_errors(self):
        comp = affine_component(np.eye(2), np.zeros(2))
        with pytest.raises(ValueError):
            FiniteSumProblem(zero_operator(), (comp,), n=2, d=2, mu=1.0, lip=2.0)
        with pytest.raises(ValueError):
            FiniteSumProblem(zero_operator(), (comp,), n=1, d=2, mu=2.0, lip=1.0)
        with pytest.raises(ValueError):
            FiniteSumProblem(zero_operator(), (comp,), n=1, d=2, mu=0.0, lip=1.0)

    def test_known_solution_accepted_and_cached(self):
        P = random_affine_problem(np.random.default_rng(5), lam=0.8, with_solution=True)
        table = P.components_at_solution
        assert table.shape == (P.n, P.d)
        for i in range(P.n):
            assert np.array_equal(table[i], apply_component(P, i, P.known_solution))

    def test_bogus_solution_rejected(self):
        rng = np.random.default_rng(6)
        comps = [affine_component(2.0 * np.eye(3), np.ones(3))]
        with pytest.raises(ValueError, match="residual"):
            FiniteSumProblem(
                zero_operator(),
                comps,
                n=1,
                d=3,
                mu=2.0,
                lip=2.0,
                known_solution=rng.standard_normal(3),
            )

    def test_kappa(self):
        P = random_affine_problem(np.random.default_rng(0))
        assert_allclose(P.kappa, P.lip / P.mu)


class TestEstimateConstants:
    def test_exact_values_for_scaled_identity(self):
        comps = [
            affine_component(2.0 * np.eye(2), np.zeros(2)),
            affine_component(4.0 * np.eye(2), np.ones(2)),
        ]
        P = make_problem(zero_operator(), comps, mu=3.0, lip=4.0)
        mu_hat, lip_hat = estimate_constants(P, samples=100, seed=0)
        # B(x) - B(y) = 3 (x - y) exactly, so the ratio is 3 for every pair.
        assert_allclose(mu_hat, 3.0, rtol=1e-12)
        assert_allclose(lip_hat, 4.0, rtol=1e-12)

    def test_skew_component_has_constant_ratio(self):
        # M = I + 10*J with J a rotation: <Md, d> = |d|^2 and |Md|^2 = 101 |d|^2
        # for every d, so both estimates are exact regardless of sampling.
        M = np.array([[1.0, -10.0], [10.0, 1.0]])
        P = make_problem(zero_operator(), [affine_component(M, np.zeros(2))],
                         mu=1.0, lip=np.sqrt(101.0))
        mu_hat, lip_hat = estimate_constants(P, samples=50, seed=1)
        assert_allclose(mu_hat, 1.0, rtol=1e-10)
        assert_allclose(lip_hat, np.sqrt(101.0), rtol=1e-10)

    def test_estimates_bracket_declared_constants(self):
        rng = np.random.default_rng(11)
        P = random_affine_problem(rng, n=8, d=6)
        mu_hat, lip_hat = estimate_constants(P, samples=200, seed=2)
        assert mu_hat >= P.mu - 1e-9
        assert lip_hat <= P.lip + 1e-9


class TestJsonFixtures:
    def test_round_trip_is_bit_exact(self):
        rng = np.random.default_rng(42)
        P = random_affine_problem(rng, n=4, d=3, lam=0.25, with_solution=True)
        text = problem_to_json(P)
        Q = problem_from_json(text)
        assert Q.n == P.n and Q.d == P.d
        assert Q.mu == P.mu and Q.lip == P.lip
        assert Q.A.kind == "l2" and Q.A.lam == P.A.lam
        assert np.array_equal(Q.known_solution, P.known_solution)
        for a, b in zip(P.components, Q.components):
            assert np.array_equal(a.M, b.M)
            assert np.array_equal(a.b, b.b)
        # serialize(load(serialize(P))) is the identity on documents
        assert problem_to_json(Q) == text

    def test_all_operator_kinds_round_trip(self):
        comp = [affine_component(np.eye(2), np.zeros(2))]
        ops = [
            zero_operator(),
            l2_regularizer(0.5),
            box_normal_cone([-1.0, -1.0], [1.0, 1.0]),
            simplex_cap_normal_cone(),
            affine_operator(np.eye(2), np.ones(2)),
        ]
        for A in ops:
            P = make_problem(A, comp, mu=1.0, lip=1.0)
            Q = problem_from_json(problem_to_json(P))
            assert Q.A.kind == A.kind

    def test_callback_refuses_serialization(self):
        comps = [callback_component(lambda x: x)]
        P = FiniteSumProblem(zero_operator(), comps, n=1, d=2, mu=1.0, lip=1.0)
        with pytest.raises(ValueError):
            problem_to_json(P)

    def test_rejects_foreign_documents(self):
        with pytest.raises(ValueError):
            problem_from_json(json.dumps({"format": "something-else"}))
