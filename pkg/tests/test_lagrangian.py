import numpy as np
import pytest

from conereg import lagrangian as lg
from oracles import central_diff, hinge_objective_direct, lagrangian_direct, rel_err


def small_instance(rng, n_pos=6, n_neg=7, dim=4):
    pos = rng.standard_normal((n_pos, dim))
    neg = rng.standard_normal((n_neg, dim))
    head = rng.standard_normal(dim)
    dual = lg.DualState(lam=rng.uniform(0.0, 1.0, n_pos), mu=float(rng.normal()))
    primal = rng.uniform(-1.0, 1.0, n_pos + 1)
    return primal, head, pos, neg, dual


class TestValue:
    def test_hand_worked_example(self):
        # one positive at margin 0.5, one negative at margin -1:
        # 1*0.2 + max(0, 0.2 - 1) + 0.1*(0.2 - 1) + 0.5*(0.2 - 0.5) = -0.03
        value = lg.lagrangian_value(
            np.array([0.2, 0.2]),
            np.array([1.0]),
            np.array([[0.5]]),
            np.array([[-1.0]]),
            lg.DualState(lam=np.array([0.5]), mu=0.1),
        )
        assert value == pytest.approx(-0.03)

    def test_vanishes_when_every_term_is_zero(self):
        value = lg.lagrangian_value(
            np.array([0.0, 1.0]),
            np.array([1.0]),
            np.array([[1.0]]),
            np.array([[-2.0]]),
            lg.DualState(lam=np.zeros(1), mu=0.0),
        )
        assert value == 0.0

    def test_matches_direct_transcription(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            primal, head, pos, neg, dual = small_instance(rng)
            direct = lagrangian_direct(
                primal[0], primal[1:], head, pos, neg, dual.lam, dual.mu
            )
            assert lg.lagrangian_value(primal, head, pos, neg, dual) == pytest.approx(direct)

    def test_zero_duals_reduce_to_hinge_objective(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            primal, head, pos, neg, _ = small_instance(rng)
            dual0 = lg.DualState(lam=np.zeros(pos.shape[0]), mu=0.0)
            expected = hinge_objective_direct(primal[0], neg @ head, pos.shape[0])
            assert lg.lagrangian_value(primal, head, pos, neg, dual0) == pytest.approx(expected)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="positives"):
            lg.lagrangian_value(
                np.zeros(3),
                np.ones(2),
                np.ones((1, 2)),
                np.ones((1, 2)),
                lg.DualState(lam=np.zeros(1), mu=0.0),
            )

    def test_weak_duality_probe(self):
        # Fixed head: the dual function value never exceeds the constrained
        # optimum of the hinge objective, found here by brute-force gridding.
        # Positive margins (0.8, 0.7) keep the primal problem feasible.
        rng = np.random.default_rng(3)
        head = np.array([1.0, 0.0, 0.0])
        pos = np.column_stack([[0.8, 0.7], rng.standard_normal((2, 2))])
        neg = rng.standard_normal((4, 3))
        pos_m, neg_m = pos @ head, neg @ head

        eps_grid = np.linspace(0.0, 3.0, 1201)
        best = np.inf
        for eps in eps_grid:
            if np.minimum(eps, pos_m).sum() >= 1.0:  # a feasible tau exists
                best = min(best, hinge_objective_direct(eps, neg_m, 2))
        assert np.isfinite(best)

        tau_grid = np.linspace(-2.0, 2.0, 41)
        for _ in range(20):
            dual = lg.DualState(lam=rng.uniform(0, 2, 2), mu=float(rng.normal()))
            grid_min = min(
                lg.lagrangian_value(np.array([e, t1, t2]), head, pos, neg, dual)
                for e in eps_grid[::60]
                for t1 in tau_grid
                for t2 in tau_grid
                if t1 <= e and t2 <= e
            )
            assert grid_min <= best + 1e-9


class TestGradients:
    def test_positive_sample_rules(self):
        # g_tau = mu + lambda, g_w = -lambda * rep, for a single positive.
        rep = np.array([[2.0, -1.0]])
        dual = lg.DualState(lam=np.array([0.5]), mu=0.1)
        grad = lg.minibatch_gradient(
            eps=0.0,
            head=np.zeros(2),
            dual=dual,
            pos_reps=rep,
            neg_reps=np.array([[0.0, 0.0]]),
            pos_positions=np.array([0]),
            n_neg=1,
        )
        assert grad.g_tau == {0: pytest.approx(0.6)}
        np.testing.assert_allclose(grad.g_w, -0.5 * rep[0])

    def test_inactive_hinge_contributes_nothing(self):
        grad = lg.minibatch_gradient(
            eps=0.2,
            head=np.array([1.0]),
            dual=lg.DualState(lam=np.zeros(1), mu=0.0),
            pos_reps=np.array([[0.0]]),
            neg_reps=np.array([[-1.0]]),  # eps + margin = -0.8 < 0
            pos_positions=np.array([0]),
            n_neg=1,
        )
        np.testing.assert_array_equal(grad.g_w, [0.0])
        assert grad.g_eps == 1.0  # only the deterministic n-term

    def test_subgradient_zero_at_exact_kink(self):
        grad = lg.minibatch_gradient(
            eps=1.0,
            head=np.array([1.0]),
            dual=lg.DualState(lam=np.zeros(1), mu=0.0),
            pos_reps=np.array([[0.0]]),
            neg_reps=np.array([[-1.0]]),  # eps + margin exactly 0
            pos_positions=np.array([0]),
            n_neg=1,
        )
        np.testing.assert_array_equal(grad.g_w, [0.0])
        assert grad.g_eps == 1.0

    def test_full_batch_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(20):
            primal, head, pos, neg, dual = small_instance(rng)
            n, dim = pos.shape
            grad = lg.minibatch_gradient(
                eps=float(primal[0]),
                head=head,
                dual=dual,
                pos_reps=pos,
                neg_reps=neg,
                pos_positions=np.arange(n),
                n_neg=neg.shape[0],
            )
            dense_tau = np.array([grad.g_tau[i] for i in range(n)])
            analytic = np.concatenate([grad.g_w, [grad.g_eps], dense_tau])

            def value_at(z):
                return lg.lagrangian_value(z[dim:], z[:dim], pos, neg, dual)

            fd = central_diff(value_at, np.concatenate([head, primal]))
            worst = max(worst, rel_err(analytic, fd))
        assert worst < 1e-5

    def test_full_gradient_agrees_with_full_batch_estimator(self):
        rng = np.random.default_rng(5)
        primal, head, pos, neg, dual = small_instance(rng)
        n = pos.shape[0]
        g_w, g_e, g_t = lg.full_gradient(primal, head, pos, neg, dual)
        grad = lg.minibatch_gradient(
            eps=float(primal[0]),
            head=head,
            dual=dual,
            pos_reps=pos,
            neg_reps=neg,
            pos_positions=np.arange(n),
            n_neg=neg.shape[0],
        )
        np.testing.assert_allclose(g_w, grad.g_w)
        assert g_e == grad.g_eps
        np.testing.assert_allclose(g_t, [grad.g_tau[i] for i in range(n)])

    def test_minibatch_estimator_is_unbiased(self):
        rng = np.random.default_rng(6)
        n, m, dim = 12, 16, 3
        pos = rng.standard_normal((n, dim))
        neg = rng.standard_normal((m, dim))
        head = rng.standard_normal(dim)
        dual = lg.DualState(lam=rng.uniform(0, 1, n), mu=0.3)
        eps = 0.1
        exact_w, exact_e, exact_t = lg.full_gradient(
            np.concatenate([[eps], np.zeros(n)]), head, pos, neg, dual
        )

        draws = 10_000
        sum_w = np.zeros(dim)
        sum_e = 0.0
        sum_t = np.zeros(n)
        sq_w = np.zeros(dim)
        sq_e = 0.0
        sq_t = np.zeros(n)
        for _ in range(draws):
            pb = rng.choice(n, size=4, replace=False)
            nb = rng.choice(m, size=4, replace=False)
            g = lg.minibatch_gradient(
                eps=eps, head=head, dual=dual,
                pos_reps=pos[pb], neg_reps=neg[nb],
                pos_positions=pb, n_neg=m,
            )
            dense = np.zeros(n)
            for i, val in g.g_tau.items():
                dense[i] = val
            sum_w += g.g_w
            sum_e += g.g_eps
            sum_t += dense
            sq_w += g.g_w**2
            sq_e += g.g_eps**2
            sq_t += dense**2

        def within_3se(total, total_sq, target):
            mean = total / draws
            se = np.sqrt(np.maximum(total_sq / draws - mean**2, 1e-30) / draws)
            return np.all(np.abs(mean - target) <= 3.0 * se + 1e-12)

        assert within_3se(sum_w, sq_w, exact_w)
        assert within_3se(np.array([sum_e]), np.array([sq_e]), np.array([exact_e]))
        assert within_3se(sum_t, sq_t, exact_t)

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            lg.minibatch_gradient(
                eps=0.0,
                head=np.ones(1),
                dual=lg.DualState(lam=np.zeros(0), mu=0.0),
                pos_reps=np.zeros((0, 1)),
                neg_reps=np.ones((1, 1)),
                pos_positions=np.zeros(0, dtype=int),
                n_neg=1,
            )


class TestDualAscent:
    def test_update_rule(self):
        dual = lg.DualState(lam=np.array([0.2]), mu=0.0)
        new = lg.dual_ascent_step(dual, np.array([0.0, 0.5]), np.array([0.0]), 0.1)
        assert new.lam[0] == pytest.approx(0.25)

    def test_clamped_at_zero(self):
        dual = lg.DualState(lam=np.array([0.0]), mu=0.0)
        new = lg.dual_ascent_step(dual, np.array([0.0, -0.5]), np.array([0.5]), 0.1)
        assert new.lam[0] == 0.0

    def test_mu_fixed_when_sum_is_one(self):
        dual = lg.DualState(lam=np.array([0.0, 0.0]), mu=0.7)
        new = lg.dual_ascent_step(
            dual, np.array([1.0, 0.4, 0.6]), np.zeros(2), 0.1, eta_mu=0.5
        )
        assert new.mu == 0.7

    def test_lambda_stays_nonnegative_over_random_sequences(self):
        rng = np.random.default_rng(7)
        dual = lg.DualState(lam=np.zeros(5), mu=0.0)
        for _ in range(200):
            primal = rng.uniform(-2, 2, 6)
            margins = rng.uniform(-2, 2, 5)
            dual = lg.dual_ascent_step(dual, primal, margins, 0.3, eta_mu=0.05)
            assert np.all(dual.lam >= 0.0)

    def test_negative_lambda_rejected_at_construction(self):
        with pytest.raises(ValueError, match="nonnegative"):
            lg.DualState(lam=np.array([-0.1]), mu=0.0)


class TestSchedule:
    @pytest.mark.parametrize("c,epoch,expected", [(0.5, 1, 0.5), (0.5, 5, 0.1), (0.9, 3, 0.3)])
    def test_values(self, c, epoch, expected):
        assert lg.dual_step_schedule(c, epoch) == pytest.approx(expected)

    @pytest.mark.parametrize("c", [0.0, 1.0, -0.2, 1.5])
    def test_rejects_c_outside_open_interval(self, c):
        with pytest.raises(ValueError):
            lg.dual_step_schedule(c, 1)


class TestMultiClass:
    def build(self, rng, p=3, N=12, dim=4):
        reps = rng.standard_normal((N, dim))
        class_of = rng.integers(0, p, N)
        class_of[:p] = np.arange(p)
        heads = rng.standard_normal((dim, p))
        dual = lg.MultiClassDualState(
            lam=rng.uniform(0, 1, (N, p)), mu=rng.normal(size=p)
        )
        members = lg.class_index_lists(class_of, p)
        primals = [rng.uniform(-1, 1, len(members[j]) + 1) for j in range(p)]
        full_batches = [
            (np.arange(len(members[j])), np.arange(N - len(members[j])))
            for j in range(p)
        ]
        return reps, class_of, heads, dual, members, primals, full_batches

    def test_two_classes_reduce_to_binary_path(self):
        rng = np.random.default_rng(8)
        reps, class_of, heads, dual, members, primals, batches = self.build(rng, p=2)
        rows = members[0]
        rest = np.setdiff1d(np.arange(len(class_of)), rows)
        binary = lg.minibatch_gradient(
            eps=float(primals[0][0]),
            head=heads[:, 0],
            dual=lg.DualState(lam=dual.lam[rows, 0], mu=float(dual.mu[0])),
            pos_reps=reps[rows],
            neg_reps=reps[rest],
            pos_positions=batches[0][0],
            n_neg=len(rest),
        )
        multi = lg.multiclass_gradients(primals, heads, reps, class_of, dual, batches)[0]
        np.testing.assert_array_equal(binary.g_w, multi.g_w)
        assert binary.g_eps == multi.g_eps
        assert binary.g_tau == multi.g_tau

    def test_zero_duals_zero_tau_gradients(self):
        rng = np.random.default_rng(9)
        reps, class_of, heads, _, members, primals, batches = self.build(rng)
        dual0 = lg.MultiClassDualState(
            lam=np.zeros((len(class_of), 3)), mu=np.zeros(3)
        )
        grads = lg.multiclass_gradients(primals, heads, reps, class_of, dual0, batches)
        for g in grads:
            assert all(v == 0.0 for v in g.g_tau.values())

    def test_full_batch_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        reps, class_of, heads, dual, members, primals, batches = self.build(rng)
        grads = lg.multiclass_gradients(primals, heads, reps, class_of, dual, batches)
        dim = reps.shape[1]
        worst = 0.0
        for j in range(3):
            nj = len(members[j])

            def value_at(z, j=j):
                h2 = heads.copy()
                h2[:, j] = z[:dim]
                p2 = [q.copy() for q in primals]
                p2[j] = z[dim:]
                return lg.multiclass_lagrangian_value(p2, h2, reps, class_of, dual)

            fd = central_diff(value_at, np.concatenate([heads[:, j], primals[j]]))
            dense_tau = np.array([grads[j].g_tau[i] for i in range(nj)])
            analytic = np.concatenate([grads[j].g_w, [grads[j].g_eps], dense_tau])
            worst = max(worst, rel_err(analytic, fd))
        assert worst < 1e-5

    def test_empty_class_rejected(self):
        rng = np.random.default_rng(12)
        reps = rng.standard_normal((4, 2))
        class_of = np.array([0, 0, 1, 1])
        heads = rng.standard_normal((2, 3))
        dual = lg.MultiClassDualState(lam=np.zeros((4, 3)), mu=np.zeros(3))
        with pytest.raises(ValueError, match="empty"):
            lg.multiclass_lagrangian_value(
                [np.zeros(3), np.zeros(3), np.zeros(1)], heads, reps, class_of, dual
            )
