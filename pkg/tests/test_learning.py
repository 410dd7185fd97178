import itertools

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from segrect.core import InvalidInputError, WeightVector, build_edge_weights
from segrect.learning import (
    ConstraintSet,
    LearnConfig,
    TrainingSample,
    cross_validate_prior,
    make_training_sample,
    ossvm_cost,
    ossvm_full_kkt_residual,
    run_cutting_plane,
    simplex_qp_kkt_residual,
    solve_simplex_qp,
    theorem1_harness,
    train_2cssvm,
    train_ossvm,
    train_ossvm_rgbd,
)
from segrect.qp import active_set_qp, master_objective, project_to_simplex, solve_master_qp


def simplex_grid(n, steps):
    """All points of the simplex whose coordinates are multiples of 1/steps."""
    pts = []
    for bars in itertools.combinations(range(steps + n - 1), n - 1):
        edges = (-1,) + bars + (steps + n - 1,)
        pts.append([edges[i + 1] - edges[i] - 1 for i in range(n)])
    return np.array(pts, dtype=np.float64) / steps


def qp_objective(W, c):
    W = np.atleast_2d(W)
    return 0.5 * np.sum(W**2, axis=1) + W @ c


def reference_simplex_qp(c, extra=()):
    w = cp.Variable(len(c))
    cons = [w >= 0, cp.sum(w) == 1] + [w[a] <= w[b] for a, b in extra]
    cp.Problem(cp.Minimize(0.5 * cp.sum_squares(w) + c @ w), cons).solve(solver=cp.CLARABEL)
    return w.value


def reference_master(a, d, groups, N, penalty):
    n = a.shape[1]
    w, xi = cp.Variable(n), cp.Variable(N)
    cons = [w >= 0, cp.sum(w) == 1, xi >= 0]
    cons += [xi[g] >= d[i] - a[i] @ w for i, g in enumerate(groups)]
    prob = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(w) + penalty * cp.sum(xi)), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return w.value, prob.value


def bisection_projection(v):
    lo, hi = v.min() - 1.0, v.max()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.maximum(v - mid, 0).sum() > 1:
            lo = mid
        else:
            hi = mid
    return np.maximum(v - 0.5 * (lo + hi), 0)


class TestProjection:
    def test_matches_bisection(self, rng):
        for _ in range(200):
            v = rng.normal(size=rng.integers(1, 15)) * rng.uniform(0.1, 10)
            assert np.allclose(project_to_simplex(v), bisection_projection(v), atol=1e-12)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            project_to_simplex(np.array([0.0, np.nan]))


class TestSimplexQP:
    def test_zero_cost_is_uniform(self):
        assert np.allclose(solve_simplex_qp(np.zeros(11)).values, 1 / 11)
        assert np.allclose(solve_simplex_qp(np.zeros(12)).values, 1 / 12)

    def test_large_first_cost(self):
        c = np.zeros(11)
        c[0] = 10
        w = solve_simplex_qp(c).values
        assert w[0] == 0 and np.allclose(w[1:], 0.1, atol=1e-15)

    def test_rejects_bad_input(self):
        with pytest.raises(InvalidInputError):
            solve_simplex_qp(np.zeros(10))
        c = np.zeros(11)
        c[3] = np.inf
        with pytest.raises(InvalidInputError):
            solve_simplex_qp(c)

    def test_no_grid_point_beats_solution_11d(self, rng):
        grid = simplex_grid(11, 10)
        assert grid.shape == (184756, 11)
        for _ in range(100):
            c = rng.normal(size=11) * rng.uniform(0.01, 3)
            w = solve_simplex_qp(c).values
            assert qp_objective(w, c)[0] <= qp_objective(grid, c).min() + 1e-12

    def test_fine_grid_3d(self, rng):
        res = 0.02
        grid = simplex_grid(3, 50)
        for _ in range(100):
            c = rng.normal(size=3) * rng.uniform(0.01, 3)
            w = project_to_simplex(-c)
            best = qp_objective(grid, c).min()
            ours = qp_objective(w, c)[0]
            bound = np.linalg.norm(w + c) * res + res**2
            assert ours <= best + 1e-12
            assert best - ours <= bound

    def test_matches_reference_and_kkt(self, rng):
        for _ in range(20):
            c = rng.normal(size=11)
            w = solve_simplex_qp(c)
            assert np.allclose(w.values, reference_simplex_qp(c), atol=1e-6)
            assert simplex_qp_kkt_residual(w, c) <= 1e-8

    def test_extra_inequalities(self, rng):
        for _ in range(30):
            c = rng.normal(size=12)
            c[0] -= 2.0
            w = solve_simplex_qp(c, [(0, 1)])
            assert w.values[0] <= w.values[1] + 1e-12
            assert np.allclose(w.values, reference_simplex_qp(c, [(0, 1)]), atol=1e-6)
            assert simplex_qp_kkt_residual(w, c, [(0, 1)]) <= 1e-8


class TestActiveSet:
    def test_matches_reference(self, rng):
        for _ in range(20):
            n = 6
            M = rng.normal(size=(n, n))
            H = M @ M.T + np.eye(n)
            c = rng.normal(size=n)
            x, _ = active_set_qp(H, c, np.ones((1, n)), np.ones(1), np.eye(n), np.zeros(n), np.full(n, 1 / n))
            y = cp.Variable(n)
            cp.Problem(cp.Minimize(0.5 * cp.quad_form(y, H) + c @ y), [y >= 0, cp.sum(y) == 1]).solve(
                solver=cp.CLARABEL)
            assert np.allclose(x, y.value, atol=1e-6)


class TestOSSVM:
    def test_zero_features_uniform(self):
        w = train_ossvm([TrainingSample(np.zeros(11))], LearnConfig())
        assert np.allclose(w.values, 1 / 11)

    def test_huge_single_feature(self):
        f = np.zeros(11)
        f[6] = 1e3
        w = train_ossvm([TrainingSample(f)], LearnConfig(C=1.0)).values
        assert w[6] == 0 and np.allclose(np.delete(w, 6), 0.1)

    def test_inside_heavy_features_favour_outside(self, rng):
        samples = []
        for _ in range(10):
            f = np.zeros(11)
            f[6:] = rng.uniform(0.01, 0.02, 5)
            f[1:6] = 10 * f[6:]
            f[0] = rng.uniform(0, 0.02)
            samples.append(TrainingSample(f))
        w = train_ossvm(samples, LearnConfig())
        assert w.outside.sum() > w.inside.sum()
        c = ossvm_cost(samples, LearnConfig())
        grid = simplex_grid(11, 10)
        assert qp_objective(w.values, c)[0] <= qp_objective(grid, c).min() + 1e-12

    def test_closed_form_and_full_kkt(self, rng):
        for _ in range(30):
            cfg = LearnConfig(C=rng.uniform(0.1, 5), prior_weight=rng.choice([0, 0.5, 1, 2]))
            samples = [TrainingSample(rng.random(11) * rng.uniform(0, 3)) for _ in range(rng.integers(1, 30))]
            w = train_ossvm(samples, cfg)
            assert np.abs(w.values - project_to_simplex(-ossvm_cost(samples, cfg))).max() <= 1e-8
            assert ossvm_full_kkt_residual(samples, cfg, w) <= 1e-8
            assert w.is_on_simplex(1e-9)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            train_ossvm([], LearnConfig())

    def test_inconsistent_layouts_rejected(self):
        with pytest.raises(InvalidInputError):
            train_ossvm([TrainingSample(np.zeros(11)), TrainingSample(np.zeros(12))])

    def test_negative_features_rejected(self):
        with pytest.raises(InvalidInputError):
            TrainingSample(-np.ones(11))

    def test_config_validation(self):
        with pytest.raises(InvalidInputError):
            LearnConfig(C=0)
        with pytest.raises(InvalidInputError):
            LearnConfig(prior_weight=-1)

    @given(st.integers(0, 2**31), st.floats(0, 3), st.floats(0, 3))
    def test_prior_monotone_in_edge_weight(self, seed, p1, p2):
        rng = np.random.default_rng(seed)
        samples = [TrainingSample(rng.random(11) * 0.5) for _ in range(5)]
        lo, hi = sorted((p1, p2))
        w_lo = train_ossvm(samples, LearnConfig(prior_weight=lo)).values[0]
        w_hi = train_ossvm(samples, LearnConfig(prior_weight=hi)).values[0]
        assert w_hi >= w_lo - 1e-12

    def test_deterministic(self, rng):
        samples = [TrainingSample(rng.random(11)) for _ in range(20)]
        a = train_ossvm(samples, LearnConfig(prior_weight=0.7)).values
        b = train_ossvm(samples, LearnConfig(prior_weight=0.7)).values
        assert a.tobytes() == b.tobytes()


class TestOSSVMRGBD:
    def test_zero_features_uniform(self):
        w = train_ossvm_rgbd([TrainingSample(np.zeros(12))], LearnConfig())
        assert np.allclose(w.values, 1 / 12) and w.layout == "rgbd"

    def test_constraint_active_under_strong_prior(self, rng):
        for _ in range(20):
            samples = [TrainingSample(rng.random(12)) for _ in range(5)]
            cfg = LearnConfig(prior_weight=3.0)
            w = train_ossvm_rgbd(samples, cfg)
            assert w.values[0] <= w.values[1] + 1e-12
            assert ossvm_full_kkt_residual(samples, cfg, w) <= 1e-8

    def test_requires_12_entries(self):
        with pytest.raises(InvalidInputError):
            train_ossvm_rgbd([TrainingSample(np.zeros(11))])


def box_frame(rng, size=16, noise=0.05):
    gt = np.zeros((size, size), np.uint8)
    a, b = rng.integers(3, 6, 2)
    gt[a : size - 4, b : size - 3] = 1
    h = gt.astype(float)
    h[rng.random(gt.shape) < noise] = 1
    edges = np.zeros(gt.shape)
    edges[a, b : size - 3] = edges[size - 5, b : size - 3] = 1
    edges[a : size - 4, b] = edges[a : size - 4, size - 4] = 1
    return gt, h, build_edge_weights(edges)


class TestMasterQP:
    def test_matches_reference(self, rng):
        for _ in range(30):
            N, n, P = rng.integers(1, 6), 11, rng.integers(1, 25)
            a = rng.normal(size=(P, n)) * rng.uniform(0.1, 3)
            d = rng.uniform(0, 1, P)
            groups = rng.integers(0, N, P)
            penalty = rng.uniform(0.1, 10) / N
            sol = solve_master_qp(a, d, groups, N, penalty)
            w_ref, obj_ref = reference_master(a, d, groups, N, penalty)
            assert np.abs(sol.w - w_ref).max() <= 1e-6
            assert sol.objective == pytest.approx(obj_ref, abs=1e-7)
            assert abs(sol.w.sum() - 1) <= 1e-12 and sol.w.min() >= 0

    def test_warm_start_same_answer(self, rng):
        a = rng.normal(size=(12, 11))
        d = rng.uniform(0, 1, 12)
        groups = np.arange(12) % 4
        cold = solve_master_qp(a, d, groups, 4, 0.5)
        warm = solve_master_qp(a, d, groups, 4, 0.5, w0=rng.dirichlet(np.ones(11)))
        assert np.allclose(cold.w, warm.w, atol=1e-10)

    def test_no_planes(self):
        sol = solve_master_qp(np.zeros((0, 11)), np.zeros(0), np.zeros(0, int), 3, 1.0, dim=11)
        assert np.allclose(sol.w, 1 / 11) and np.all(sol.slacks == 0)

    def test_objective_helper(self, rng):
        a = rng.normal(size=(5, 11))
        d = rng.uniform(0, 1, 5)
        g = np.array([0, 0, 1, 1, 1])
        w = rng.dirichlet(np.ones(11))
        obj, xi = master_objective(w, a, d, g, 2, 0.3)
        expected = [max(0, (d[:2] - a[:2] @ w).max()), max(0, (d[2:] - a[2:] @ w).max())]
        assert np.allclose(xi, expected) and obj == pytest.approx(0.5 * w @ w + 0.3 * sum(expected))


class TestCuttingPlane:
    def test_fixed_constraint_set_matches_reference(self, rng):
        cs = ConstraintSet()
        for i in range(12):
            cs.add(i % 3, rng.normal(size=11), rng.uniform(0, 1))
        a, d, g = cs.arrays(11)
        sol = solve_master_qp(a, d, g, 3, 1.0 / 3)
        w_ref, _ = reference_master(a, d, g, 3, 1.0 / 3)
        assert np.abs(sol.w - w_ref).max() <= 1e-6

    def test_duplicate_planes_suppressed(self):
        cs = ConstraintSet()
        assert cs.add(0, np.ones(11), 0.5)
        assert not cs.add(0, np.ones(11) + 1e-13, 0.5)
        assert cs.add(1, np.ones(11), 0.5)
        assert len(cs) == 2

    def test_already_optimal_converges_immediately(self, rng):
        samples = []
        for _ in range(4):
            gt, _, ew = box_frame(rng, noise=0.0)
            samples.append(make_training_sample(gt, gt.astype(float), ew, normalize="none"))
        result = run_cutting_plane(samples, LearnConfig())
        assert result.converged and result.iterations == 1 and len(result.constraints) == 0
        assert np.allclose(result.weights.values, 1 / 11)

    def test_monotone_objective_and_convergence(self, rng):
        samples = []
        for _ in range(12):
            gt, h, ew = box_frame(rng)
            samples.append(make_training_sample(gt, h, ew))
        result = run_cutting_plane(samples, LearnConfig())
        assert result.converged and result.iterations <= 10
        assert np.all(np.diff(result.objectives) >= -1e-12)
        assert result.max_violations[-1] <= 1e-3
        assert result.weights.is_on_simplex(1e-9)

    def test_deterministic(self, rng):
        samples = [make_training_sample(*box_frame(rng)[:2], box_frame(rng)[2]) for _ in range(5)]
        a = train_2cssvm(samples).values
        b = train_2cssvm(samples).values
        assert a.tobytes() == b.tobytes()

    def test_threads_give_same_answer(self, rng):
        samples = []
        for _ in range(6):
            gt, h, ew = box_frame(rng)
            samples.append(make_training_sample(gt, h, ew))
        a = train_2cssvm(samples, LearnConfig(threads=1)).values
        b = train_2cssvm(samples, LearnConfig(threads=3)).values
        assert a.tobytes() == b.tobytes()

    def test_needs_raw_inputs(self):
        with pytest.raises(InvalidInputError):
            train_2cssvm([TrainingSample(np.zeros(11))])


class TestTheorem1:
    def test_equivalence(self, rng):
        for _ in range(10):
            N = rng.integers(1, 20)
            samples = [TrainingSample(rng.random(11) * rng.uniform(0.1, 2)) for _ in range(N)]
            report = theorem1_harness(samples, rng.uniform(0, 11, N), LearnConfig(C=rng.uniform(0.2, 5)))
            assert report.max_weight_difference <= 1e-6
            assert report.gap_error <= 1e-8

    def test_zero_constants_give_equal_objectives(self, rng):
        samples = [TrainingSample(rng.random(11)) for _ in range(6)]
        report = theorem1_harness(samples, np.zeros(6))
        assert report.predicted_gap == 0
        assert report.objective_one_class == pytest.approx(report.objective_two_class, abs=1e-12)

    def test_rgbd_layout(self, rng):
        samples = [TrainingSample(rng.random(12)) for _ in range(4)]
        report = theorem1_harness(samples, rng.uniform(0, 12, 4))
        assert report.max_weight_difference <= 1e-6 and report.gap_error <= 1e-8

    def test_rejects_prior_and_bad_constants(self, rng):
        samples = [TrainingSample(rng.random(11)) for _ in range(3)]
        with pytest.raises(InvalidInputError):
            theorem1_harness(samples, np.ones(3), LearnConfig(prior_weight=1))
        with pytest.raises(InvalidInputError):
            theorem1_harness(samples, np.full(3, 12.0))
        with pytest.raises(InvalidInputError):
            theorem1_harness(samples, np.ones(2))


class TestCrossValidation:
    def make_sequences(self, rng, n=4, frames=3):
        seqs = []
        for _ in range(n):
            seqs.append([make_training_sample(*box_frame(rng)[:2], box_frame(rng)[2]) for _ in range(frames)])
        return seqs

    def test_single_value_grid(self, rng):
        res = cross_validate_prior(self.make_sequences(rng), [1.5], folds=2)
        assert res.best_prior == 1.5

    def test_ties_go_to_smaller_prior(self, rng):
        fixed = WeightVector(np.full(11, 1 / 11))
        res = cross_validate_prior(self.make_sequences(rng), [2.0, 0.5, 1.0], folds=2,
                                   trainer=lambda s, c: fixed)
        assert res.best_prior == 0.5

    def test_fold_reduction_warns(self, rng):
        with pytest.warns(UserWarning, match="folds"):
            res = cross_validate_prior(self.make_sequences(rng, n=3), [0.0, 1.0], folds=10)
        assert res.folds == 3
        assert all(len(v) == 3 for v in res.fold_errors.values())

    def test_table_and_minimum(self, rng):
        res = cross_validate_prior(self.make_sequences(rng), [0.0, 0.5, 3.0], folds=2)
        means = res.mean_errors
        assert means[res.best_prior] == min(means.values())
        assert res.table().splitlines()[0].startswith("prior\tfold0\tfold1\tmean")

    def test_needs_two_sequences(self, rng):
        with pytest.raises(InvalidInputError):
            cross_validate_prior(self.make_sequences(rng, n=1), [0.0])


def test_two_class_on_fp_heavy_bias_favours_outside():
    from segrect.edges import detect_edges
    from segrect.synth import BiasSpec, SceneSpec, inject_bias, render_sequence

    samples = []
    for s in range(6):
        spec = SceneSpec(height=48, width=48, shape=("disk", "rectangle")[s % 2], size=((12,), (12, 8))[s % 2],
                         frames=4, seed=s)
        seq = render_sequence(spec)
        for t, (img, gt) in enumerate(zip(seq.frames, seq.masks)):
            h = inject_bias(gt, BiasSpec(0.2, 0.02, seed=10 * s + t))
            samples.append(make_training_sample(gt, h.astype(float), build_edge_weights(detect_edges(img))))
    w = train_2cssvm(samples)
    assert w.outside.sum() > w.inside.sum()
