"""Tests for the benchmark instance generators."""

import numpy as np
import pytest

from vrsplit import operators, problems
from vrsplit.operators import (
    affine_component,
    box_normal_cone,
    callback_component,
    l2_regularizer,
    make_problem,
    problem_from_json,
    problem_to_json,
    simplex_cap_normal_cone,
    zero_operator,
)
from vrsplit.problems import (
    GeneratorSpec,
    exact_solution,
    gen_boyan_saddle,
    gen_quadratic,
    gen_two_player_game,
    generate,
)
from vrsplit.solver import _exact_residual


def _sym(M):
    return 0.5 * (M + M.T)


class TestGeneratorSpec:
    def test_rejects_bad_fields(self):
        with pytest.raises(ValueError, match="family"):
            GeneratorSpec(family="cubic", n=4, d=3)
        with pytest.raises(ValueError, match="positive"):
            GeneratorSpec(family="quadratic", n=0, d=3)
        with pytest.raises(ValueError, match="kappa"):
            GeneratorSpec(family="quadratic", n=4, d=3, kappa_target=0.5)
        with pytest.raises(ValueError, match="lambda_reg"):
            GeneratorSpec(family="boyan_saddle", n=4, d=3, lambda_reg=0.0)

    def test_dispatch_reaches_every_family(self):
        q = generate(GeneratorSpec(family="quadratic", n=4, d=3, seed=1))
        s = generate(GeneratorSpec(family="boyan_saddle", n=30, d=4, seed=1))
        g = generate(GeneratorSpec(family="two_player_game", n=3, d=2, seed=1))
        assert q.meta["family"] == "quadratic"
        assert s.meta["family"] == "boyan_saddle"
        assert g.meta["family"] == "two_player_game"


class TestQuadratic:
    def test_declared_constants_match_dense_eigensolve(self):
        p = gen_quadratic(8, 4, 100.0, seed=3)
        Ms = [c.M for c in p.components]
        mu_oracle = float(np.linalg.eigvalsh(_sym(np.mean(Ms, axis=0))).min())
        lip_oracle = max(float(np.linalg.norm(M, 2)) for M in Ms)
        assert abs(p.mu - mu_oracle) <= 1e-10
        assert abs(p.lip - lip_oracle) <= 1e-10

    def test_isotropic_case_is_the_identity(self):
        p = gen_quadratic(5, 3, 1.0, seed=0)
        Mbar = np.mean([c.M for c in p.components], axis=0)
        np.testing.assert_allclose(Mbar, np.eye(3), atol=1e-12)
        expected = np.linalg.solve(Mbar, -np.mean([c.b for c in p.components], axis=0))
        np.testing.assert_allclose(p.known_solution, expected, atol=1e-12)

    def test_average_spectrum_is_exact(self):
        for kappa in (2.0, 10.0, 100.0):
            p = gen_quadratic(6, 4, kappa, seed=5)
            assert abs(p.mu - 1.0) <= 1e-10
            assert kappa - 1e-10 <= p.lip <= kappa + 0.8 + 1e-10

    def test_component_perturbations_are_bounded(self):
        p = gen_quadratic(7, 5, 10.0, seed=2)
        Mbar = np.mean([c.M for c in p.components], axis=0)
        for c in p.components:
            assert np.linalg.norm(c.M - Mbar, 2) <= 0.8 + 1e-10

    def test_single_component_has_no_perturbation(self):
        p = gen_quadratic(1, 3, 4.0, seed=0)
        assert abs(np.linalg.norm(p.components[0].M, 2) - 4.0) <= 1e-10

    def test_same_seed_is_bitwise_identical(self):
        a = gen_quadratic(4, 3, 10.0, seed=9)
        b = gen_quadratic(4, 3, 10.0, seed=9)
        for ca, cb in zip(a.components, b.components):
            assert ca.M.tobytes() == cb.M.tobytes()
            assert ca.b.tobytes() == cb.b.tobytes()
        assert a.known_solution.tobytes() == b.known_solution.tobytes()
        c = gen_quadratic(4, 3, 10.0, seed=10)
        assert c.components[0].M.tobytes() != a.components[0].M.tobytes()

    def test_solution_plugs_back(self):
        p = gen_quadratic(8, 4, 50.0, seed=7)
        res = _exact_residual(p, p.mu / p.lip**2, p.known_solution)
        assert res <= 1e-10

    def test_validation(self):
        with pytest.raises(ValueError):
            gen_quadratic(0, 3, 10.0)
        with pytest.raises(ValueError):
            gen_quadratic(3, 3, 0.9)


class TestBoyanSaddle:
    def test_feature_rows_form_a_partition_of_unity(self):
        p = gen_boyan_saddle(30, 4, 1.0, seed=0)
        assert p.meta["chain_length"] == 13
        phi = problems._spline_features(13, 4)
        np.testing.assert_allclose(phi.sum(axis=1), 1.0, atol=1e-12)
        # each feature peaks at its anchor state
        for k, anchor in enumerate(np.linspace(0, 12, 4).astype(int)):
            expected = np.zeros(4)
            expected[k] = 1.0
            np.testing.assert_allclose(phi[anchor], expected, atol=1e-12)

    def test_stacked_block_structure(self):
        lam = 2.5
        p = gen_boyan_saddle(25, 3, lam, seed=4)
        d = p.d // 2
        for c in p.components:
            np.testing.assert_allclose(c.M[:d, :d], lam * np.eye(d), atol=1e-12)
            np.testing.assert_allclose(c.M[:d, d:], -c.M[d:, :d].T, atol=1e-12)
            np.testing.assert_allclose(c.b[:d], 0.0, atol=1e-12)

    def test_coupling_is_skew(self):
        p = gen_boyan_saddle(20, 4, 1.0, seed=1)
        d = p.d // 2
        rng = np.random.default_rng(0)
        for c in p.components[:5]:
            K = np.zeros_like(c.M)
            K[:d, d:] = c.M[:d, d:]
            K[d:, :d] = c.M[d:, :d]
            for _ in range(10):
                z = rng.standard_normal(p.d)
                assert abs(z @ (K @ z)) <= 1e-12 * (1 + z @ z)

    def test_modulus_is_the_min_of_lambda_and_covariance(self):
        p = gen_boyan_saddle(60, 4, 0.3, seed=2)
        d = p.d // 2
        Cbar = np.mean([c.M[d:, d:] for c in p.components], axis=0)
        expected = min(0.3, float(np.linalg.eigvalsh(_sym(Cbar)).min()))
        assert abs(p.mu - expected) <= 1e-10

    def test_huge_regularizer_kills_the_primal_block(self):
        p = gen_boyan_saddle(60, 4, 1e6, seed=2)
        d = p.d // 2
        theta, omega = p.known_solution[:d], p.known_solution[d:]
        assert np.linalg.norm(theta) <= 1e-3 * np.linalg.norm(omega)

    def test_operator_is_the_saddle_gradient_field(self):
        # central finite differences of
        #   f_i(t, w) = w'b_i - w'A_i t - w'C_i w / 2 + lam ||t||^2 / 2
        # must reproduce (d/dt f, -d/dw f) = B_i
        lam = 1.3
        p = gen_boyan_saddle(15, 3, lam, seed=6)
        d = p.d // 2
        rng = np.random.default_rng(3)
        h = 1e-6
        checked = 0
        for c in p.components:
            A_i = c.M[d:, :d]
            C_i = c.M[d:, d:]
            b_i = -c.b[d:]

            def f(z):
                t, w = z[:d], z[d:]
                return (w @ b_i - w @ (A_i @ t) - 0.5 * w @ (C_i @ w)
                        + 0.5 * lam * (t @ t))

            for _ in range(7):
                z = rng.standard_normal(p.d)
                grad = np.zeros(p.d)
                for j in range(p.d):
                    e = np.zeros(p.d)
                    e[j] = h
                    grad[j] = (f(z + e) - f(z - e)) / (2 * h)
                field = np.concatenate([grad[:d], -grad[d:]])
                out = c(z)
                assert np.linalg.norm(field - out) <= 1e-6 * (1 + np.linalg.norm(out))
                checked += 1
        assert checked >= 100

    def test_too_few_samples_raise(self):
        with pytest.raises(ValueError, match="increase n or lambda_reg"):
            gen_boyan_saddle(1, 4, 1.0, seed=0)

    def test_chain_length_is_configurable(self):
        p = gen_boyan_saddle(40, 3, 1.0, seed=1, chain_length=9)
        assert p.meta["chain_length"] == 9
        with pytest.raises(ValueError, match="chain_length"):
            gen_boyan_saddle(10, 3, 1.0, seed=1, chain_length=2)
        with pytest.raises(ValueError, match="d >= 2"):
            gen_boyan_saddle(10, 1, 1.0, seed=1)

    def test_same_seed_is_bitwise_identical(self):
        a = gen_boyan_saddle(25, 4, 1.0, seed=11)
        b = gen_boyan_saddle(25, 4, 1.0, seed=11)
        for ca, cb in zip(a.components, b.components):
            assert ca.M.tobytes() == cb.M.tobytes()


class TestTwoPlayerGame:
    def test_declared_constants_match_dense_recompute(self):
        p = gen_two_player_game(6, 3, seed=1)
        Ms = [c.M for c in p.components]
        mu_oracle = float(np.linalg.eigvalsh(_sym(np.mean(Ms, axis=0))).min())
        assert abs(p.mu - mu_oracle) <= 1e-10
        assert p.mu > 0
        assert abs(p.lip - max(np.linalg.norm(M, 2) for M in Ms)) <= 1e-10

    def test_solution_is_feasible_and_flagged_iterative(self):
        p = gen_two_player_game(5, 3, seed=2)
        assert p.meta["solution_method"] == "iterative"
        d = p.d // 2
        u, v = p.known_solution[:d], p.known_solution[d:]
        assert np.all(u >= -1e-12) and np.all(v >= -1e-12)
        assert np.all(u + v <= 1 + 1e-12)
        assert _exact_residual(p, p.mu / p.lip**2, p.known_solution) <= 1e-10

    def test_solution_satisfies_the_variational_inequality(self):
        p = gen_two_player_game(4, 3, seed=5)
        d = p.d // 2
        a_star = p.known_solution
        field = operators.apply_full(p, a_star)
        rng = np.random.default_rng(0)
        for _ in range(1000):
            u = rng.uniform(0, 1, size=d)
            v = rng.uniform(0, 1, size=d) * (1 - u)
            a = np.concatenate([u, v])
            assert field @ (a - a_star) >= -1e-9

    def test_zero_cross_blocks_give_the_blockwise_solve(self):
        # decoupled players, equilibrium strictly inside the constraint:
        # the VI solution is the unconstrained stationary point
        d = 2
        own = np.array([[2.0, 0.3], [0.3, 1.5]])
        target = np.array([0.2, 0.1, 0.15, 0.3])  # strictly interior pairs
        M = np.block([[own, np.zeros((d, d))], [np.zeros((d, d)), own]])
        comp = affine_component(M, -M @ target)
        prob = make_problem(simplex_cap_normal_cone(), [comp, comp],
                            mu=float(np.linalg.eigvalsh(own).min()),
                            lip=float(np.linalg.norm(own, 2)))
        x, method = exact_solution(prob, with_method=True)
        assert method == "iterative"
        np.testing.assert_allclose(x, target, atol=1e-9)

    def test_outward_push_lands_on_the_cap_boundary(self):
        d = 2
        outside = np.array([0.9, 0.8, 0.9, 0.7])  # u + v > 1 per pair
        comp = affine_component(np.eye(2 * d), -outside)
        prob = make_problem(simplex_cap_normal_cone(), [comp], mu=1.0, lip=1.0)
        x = exact_solution(prob)
        u, v = x[:d], x[d:]
        np.testing.assert_allclose(u + v, 1.0, atol=1e-9)
        field = operators.apply_full(prob, x)
        rng = np.random.default_rng(1)
        for _ in range(1000):
            uu = rng.uniform(0, 1, size=d)
            vv = rng.uniform(0, 1, size=d) * (1 - uu)
            a = np.concatenate([uu, vv])
            assert field @ (a - x) >= -1e-9

    def test_same_seed_is_bitwise_identical(self):
        a = gen_two_player_game(4, 2, seed=8)
        b = gen_two_player_game(4, 2, seed=8)
        for ca, cb in zip(a.components, b.components):
            assert ca.M.tobytes() == cb.M.tobytes()
        assert a.known_solution.tobytes() == b.known_solution.tobytes()


class TestExactSolution:
    def test_shift_operator_recovers_the_shift(self):
        c = np.array([1.5, -2.0, 0.5])
        prob = make_problem(zero_operator(),
                            [affine_component(np.eye(3), -c)], mu=1.0, lip=1.0)
        np.testing.assert_allclose(exact_solution(prob), c, atol=1e-14)

    def test_l2_operator_enters_the_dense_solve(self):
        rng = np.random.default_rng(0)
        Q = rng.normal(size=(3, 3))
        M = Q @ Q.T + np.eye(3)
        b = rng.normal(size=3)
        lam = 0.7
        prob = make_problem(l2_regularizer(lam), [affine_component(M, b)],
                            mu=float(np.linalg.eigvalsh(M).min()),
                            lip=float(np.linalg.norm(M, 2)))
        x, method = exact_solution(prob, with_method=True)
        assert method == "dense"
        np.testing.assert_allclose(x, np.linalg.solve(M + lam * np.eye(3), -b),
                                   atol=1e-12)

    def test_affine_operator_enters_the_dense_solve(self):
        rng = np.random.default_rng(1)
        Q = rng.normal(size=(3, 3))
        M = Q @ Q.T + np.eye(3)
        MA = np.eye(3) * 0.5
        bA = rng.normal(size=3)
        b = rng.normal(size=3)
        prob = make_problem(operators.affine_operator(MA, bA),
                            [affine_component(M, b)],
                            mu=float(np.linalg.eigvalsh(M).min()),
                            lip=float(np.linalg.norm(M, 2)))
        x = exact_solution(prob)
        np.testing.assert_allclose(x, np.linalg.solve(M + MA, -(b + bA)),
                                   atol=1e-12)

    def test_quadratic_family_residual(self):
        p = gen_quadratic(6, 4, 20.0, seed=4)
        x = exact_solution(p)
        assert _exact_residual(p, p.mu / p.lip**2, x) <= 1e-10

    def test_singular_average_is_a_hard_error(self):
        M = np.diag([1.0, 0.0])
        prob = make_problem(zero_operator(),
                            [affine_component(M, np.ones(2))], mu=0.1, lip=1.0)
        with pytest.raises(np.linalg.LinAlgError):
            exact_solution(prob)

    def test_inactive_constraint_matches_the_dense_answer(self):
        # box so wide it never binds: iterative path must agree with the
        # unconstrained dense solve
        rng = np.random.default_rng(2)
        Q = rng.normal(size=(3, 3))
        M = Q @ Q.T + np.eye(3)
        b = rng.normal(size=3)
        free = make_problem(zero_operator(), [affine_component(M, b)],
                            mu=float(np.linalg.eigvalsh(M).min()),
                            lip=float(np.linalg.norm(M, 2)))
        boxed = make_problem(box_normal_cone(-100.0, 100.0),
                             [affine_component(M, b)],
                             mu=free.mu, lip=free.lip)
        x_free, m_free = exact_solution(free, with_method=True)
        x_boxed, m_boxed = exact_solution(boxed, with_method=True)
        assert (m_free, m_boxed) == ("dense", "iterative")
        np.testing.assert_allclose(x_boxed, x_free, atol=1e-9)

    def test_callback_components_use_the_iterative_path(self):
        c = np.array([0.4, -0.7])
        comp = callback_component(lambda x: x - c)
        prob = operators.FiniteSumProblem(
            A=zero_operator(), components=(comp,), n=1, d=2, mu=1.0, lip=1.0
        )
        x, method = exact_solution(prob, with_method=True)
        assert method == "iterative"
        np.testing.assert_allclose(x, c, atol=1e-11)


class TestGeneratedInvariants:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_sampled_constants_stay_consistent(self, seed):
        instances = [
            gen_quadratic(6, 4, 30.0, seed=seed),
            gen_boyan_saddle(40, 4, 1.0, seed=seed),
            gen_two_player_game(5, 2, seed=seed),
        ]
        for p in instances:
            mu_hat, lip_hat = operators.estimate_constants(p, samples=100, seed=0)
            assert mu_hat <= p.lip + 1e-12
            assert lip_hat <= 1.01 * p.lip

    def test_fixture_round_trip_is_bitwise(self):
        for p in (gen_quadratic(4, 3, 10.0, seed=3),
                  gen_boyan_saddle(20, 3, 1.0, seed=3),
                  gen_two_player_game(3, 2, seed=3)):
            q = problem_from_json(problem_to_json(p))
            assert q.mu == p.mu and q.lip == p.lip
            assert q.known_solution.tobytes() == p.known_solution.tobytes()
            for ca, cb in zip(p.components, q.components):
                assert ca.M.tobytes() == cb.M.tobytes()
                assert ca.b.tobytes() == cb.b.tobytes()
            assert q.meta == p.meta
