"""Problem suites: analytic gradients vs finite differences, closed-form
references, sampling contracts, serialization round trips."""

import numpy as np
import pytest

from manifed import (
    DataFormatError,
    ParameterError,
    Point,
    Tangent,
    cfmspd_make,
    cpesph_make,
    finite_difference_gradient,
    load_problem,
    mbcfsti_make,
    mtfl_make,
    ridge_solve,
    rng_for,
    save_problem,
)

SMALL = {
    "cpesph": lambda: cpesph_make(d=6, S=3, N=8, eigengap=0.05, seed=2),
    "cfmspd": lambda: cfmspd_make(n=2, S=3, N=6, diameter=1.0, seed=2),
    "mbcfsti": lambda: mbcfsti_make(d=6, p=2, S=3, N=5, seed=2),
    "mtfl": lambda: mtfl_make(m=8, r=2, S=3, N=4, noise_std=0.01, lam=0.0,
                              seed=2, d_range=(5, 9)),
}


def _grad_rel_err(problem, x):
    g = problem.full_gradient(x)
    fd = finite_difference_gradient(problem.objective, problem.kernel, x)
    denom = max(np.linalg.norm(fd.ambient), 1e-12)
    return np.linalg.norm(g.ambient - fd.ambient) / denom


# -- ridge solver ------------------------------------------------------------

def test_ridge_identity_design_worked_value():
    y = np.array([2.0, -4.0, 6.0])
    w = ridge_solve(np.eye(3), y, 0.5)
    assert np.allclose(w, y / 2.0)


def test_ridge_zero_penalty_matches_least_squares():
    rng = rng_for(30)
    z = rng.standard_normal((10, 3))
    y = rng.standard_normal(10)
    w = ridge_solve(z, y, 0.0)
    assert np.allclose(w, np.linalg.lstsq(z, y, rcond=None)[0], atol=1e-10)


def test_ridge_singular_system_falls_back_to_min_norm():
    z = np.array([[1.0, 1.0], [2.0, 2.0]])  # rank 1
    w = ridge_solve(z, np.array([1.0, 2.0]), 0.0)
    assert np.allclose(z @ w, [1.0, 2.0], atol=1e-10)
    assert np.allclose(w, [0.5, 0.5], atol=1e-10)  # minimum-norm solution
    with pytest.raises(ParameterError):
        ridge_solve(z, np.array([1.0, 2.0]), -1.0)


# -- analytic vs finite-difference gradients ---------------------------------

@pytest.mark.parametrize("kind", sorted(SMALL))
def test_analytic_gradient_matches_finite_differences(kind):
    problem = SMALL[kind]()
    tol = 1e-4 if kind == "mtfl" else 1e-5
    rng = rng_for(31)
    for _ in range(3):
        x = problem.kernel.random_point(rng)
        assert _grad_rel_err(problem, x) <= tol


def test_mtfl_gradient_with_ridge_penalty():
    # lam > 0 exercises the penalty correction inside the task gradient
    problem = mtfl_make(m=8, r=2, S=2, N=3, noise_std=0.05, lam=0.3, seed=5,
                        d_range=(5, 9))
    x = problem.kernel.random_point(rng_for(32))
    assert _grad_rel_err(problem, x) <= 1e-4


# -- sampling contracts ------------------------------------------------------

@pytest.mark.parametrize("kind", sorted(SMALL))
def test_singleton_batches_average_to_local_gradient(kind):
    problem = SMALL[kind]()
    x = problem.kernel.random_point(rng_for(33))
    for j in range(problem.S):
        acc = np.zeros(problem.kernel.point_shape)
        for i in range(problem.N):
            acc += problem.minibatch_gradient(j, x, [i]).ambient
        full = problem.local_gradient(j, x)
        assert np.allclose(acc / problem.N, full.ambient, atol=1e-12)


def test_minibatch_argument_validation():
    problem = SMALL["cpesph"]()
    x = problem.kernel.random_point(rng_for(34))
    with pytest.raises(ParameterError):
        problem.minibatch_gradient(problem.S, x, [0])
    with pytest.raises(ParameterError):
        problem.minibatch_gradient(0, x)
    with pytest.raises(ParameterError):
        problem.minibatch_gradient(0, x, [])
    with pytest.raises(ParameterError):
        problem.minibatch_gradient(0, x, [problem.N])
    with pytest.raises(ParameterError):
        problem.minibatch_gradient(0, x, rng=rng_for(0), batch_size=0)


def test_minibatch_draws_with_replacement_are_seed_stable():
    problem = SMALL["cpesph"]()
    x = problem.kernel.random_point(rng_for(35))
    g1 = problem.minibatch_gradient(1, x, rng=rng_for(7), batch_size=4)
    g2 = problem.minibatch_gradient(1, x, rng=rng_for(7), batch_size=4)
    assert np.array_equal(g1.ambient, g2.ambient)


# -- spiked covariance on the sphere -----------------------------------------

def test_cpesph_reference_is_top_pooled_eigenvector():
    problem = cpesph_make(d=8, S=4, N=30, eigengap=0.05, seed=3)
    x_star = problem.reference_optimum()
    g = problem.full_gradient(x_star)
    assert np.linalg.norm(g.ambient) <= 1e-10
    f_star = problem.reference_value()
    x = problem.kernel.random_point(rng_for(36))
    assert problem.objective(x) >= f_star - 1e-12


def test_cpesph_maker_validation():
    with pytest.raises(ParameterError):
        cpesph_make(d=3)
    with pytest.raises(ParameterError):
        cpesph_make(S=0)
    with pytest.raises(ParameterError):
        cpesph_make(eigengap=-0.1)


def test_cpesph_determinism():
    a = cpesph_make(d=6, S=2, N=5, seed=9)
    b = cpesph_make(d=6, S=2, N=5, seed=9)
    assert np.array_equal(a.samples, b.samples)


# -- Frechet mean of SPD matrices --------------------------------------------

def test_cfmspd_scalar_two_sample_mean_is_geometric():
    # With a single 1x1 sample on each of two agents the minimizer of the
    # mean squared affine distance is the geometric mean sqrt(a*b).
    from manifed import CfmSpdProblem, SpdKernel

    a, b = 2.0, 8.0
    samples = np.array([[[[a]]], [[[b]]]])
    problem = CfmSpdProblem(SpdKernel(1), samples, 2.0, 0)
    mid = problem.kernel.point([[np.sqrt(a * b)]])
    g = problem.full_gradient(mid)
    assert abs(g.ambient[0, 0]) <= 1e-12
    off = problem.kernel.point([[3.0]])
    assert problem.objective(off) > problem.objective(mid)


def test_cfmspd_samples_respect_diameter_cap():
    diameter = 0.8
    problem = cfmspd_make(n=2, S=2, N=10, diameter=diameter, seed=4)
    for agent in problem.samples:
        for z in agent:
            w = np.linalg.eigvalsh(z)
            assert np.linalg.norm(np.log(w)) <= diameter + 1e-12


def test_cfmspd_tight_diameter_rejected():
    with pytest.raises(ParameterError):
        cfmspd_make(n=4, S=1, N=1, diameter=1e-6, seed=0)


# -- weighted trace minimization on Stiefel ----------------------------------

def test_mbcfsti_reference_matches_eigen_sum():
    problem = mbcfsti_make(d=8, p=2, S=3, N=6, seed=6)
    pooled = np.mean(
        [problem.samples[i, j] for i in range(problem.S) for j in range(problem.N)],
        axis=0,
    )
    evals = np.linalg.eigvalsh(pooled)
    expect = float(np.dot(sorted(problem.weights, reverse=True), evals[:2]))
    assert problem.reference_value() == pytest.approx(expect, rel=1e-12)
    x_star = problem.reference_optimum()
    assert problem.objective(x_star) == pytest.approx(problem.reference_value(), rel=1e-10)
    g = problem.full_gradient(x_star)
    assert np.linalg.norm(g.ambient) <= 1e-8


def test_mbcfsti_weights_validation():
    with pytest.raises(ParameterError):
        mbcfsti_make(d=6, p=2, weights=np.ones(3))
    with pytest.raises(ParameterError):
        mbcfsti_make(d=2, p=3)


# -- multitask subspace regression -------------------------------------------

def test_mtfl_target_subspace_is_near_stationary():
    problem = mtfl_make(m=10, r=3, S=4, N=5, noise_std=0.0, lam=0.0, seed=7,
                        d_range=(6, 12))
    u_star = problem.subspace_target()
    assert isinstance(u_star, Point)
    # noiseless targets are exactly realizable inside the planted subspace
    assert problem.objective(u_star) <= 1e-20
    g = problem.full_gradient(u_star)
    assert np.linalg.norm(g.ambient) <= 1e-9


def test_mtfl_predictions_and_split_handling():
    problem = SMALL["mtfl"]()
    x = problem.kernel.random_point(rng_for(38))
    pairs = problem.predictions(x)
    assert len(pairs) == problem.S * problem.N
    for pred, truth in pairs:
        assert pred.shape == truth.shape
    with pytest.raises(ParameterError):
        problem.predictions(x, split="test")  # synthetic data has no test split


def test_mtfl_maker_validation():
    with pytest.raises(ParameterError):
        mtfl_make(m=4, r=4)
    with pytest.raises(ParameterError):
        mtfl_make(noise_std=-1.0)
    with pytest.raises(ParameterError):
        mtfl_make(d_range=(10, 5))


# -- serialization -----------------------------------------------------------

@pytest.mark.parametrize("kind", sorted(SMALL))
def test_problem_container_round_trip(kind, tmp_path):
    problem = SMALL[kind]()
    path = tmp_path / f"{kind}.npz"
    save_problem(problem, path)
    loaded, reference = load_problem(path)
    assert loaded.kind == problem.kind
    assert loaded.S == problem.S and loaded.N == problem.N
    assert reference == {}
    x = problem.kernel.random_point(rng_for(39))
    assert loaded.objective(x) == problem.objective(x)
    assert np.array_equal(
        loaded.full_gradient(x).ambient, problem.full_gradient(x).ambient
    )


def test_container_round_trip_keeps_reference_block(tmp_path):
    problem = SMALL["cpesph"]()
    path = tmp_path / "with_ref.npz"
    x_star = problem.reference_optimum()
    save_problem(problem, path, reference={
        "x_star": x_star.ambient, "f_star": -1.25, "rsd_excess": 0.0,
    })
    _, reference = load_problem(path)
    assert np.array_equal(reference["x_star"], x_star.ambient)
    assert reference["f_star"] == -1.25
    assert reference["rsd_excess"] == 0.0


def test_mtfl_container_keeps_ragged_tasks(tmp_path):
    problem = SMALL["mtfl"]()
    widths = {task[0].shape[0] for agent in problem.tasks for task in agent}
    assert len(widths) > 1  # the generator draws varying task sizes
    path = tmp_path / "mtfl.npz"
    save_problem(problem, path)
    loaded, _ = load_problem(path)
    for agent, agent_loaded in zip(problem.tasks, loaded.tasks):
        for (x, y), (xl, yl) in zip(agent, agent_loaded):
            assert np.array_equal(x, xl)
            assert np.array_equal(y, yl)
    assert np.array_equal(loaded.u_star, problem.u_star)


def test_load_problem_rejects_malformed_containers(tmp_path):
    bad = tmp_path / "bad.npz"
    np.savez(bad, data=np.ones(3))
    with pytest.raises(DataFormatError):
        load_problem(bad)
    with pytest.raises(DataFormatError):
        load_problem(tmp_path / "missing.npz")
