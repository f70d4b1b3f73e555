import numpy as np
import pytest

from resalign import diffusion as dm
from resalign.adapt import FinetuneConfig, adapt
from resalign.autodiff import eval_loss, grad, hvp
from resalign.hypergrad import (
    HypergradSettings,
    OracleError,
    OracleUnsupportedError,
    _harmful_graph,
    dense_solve_oracle,
    get_hypergrad,
    richardson_solve,
    unrolled_grad_oracle,
)


def random_spd(rng, d, rho):
    """Symmetric positive definite with spectral radius exactly rho."""
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    eig = rng.uniform(0.05, 1.0, size=d)
    eig = eig / eig.max() * rho
    return (q * eig) @ q.T


def test_settings_validation():
    with pytest.raises(ValueError):
        HypergradSettings(gamma=0.0)
    with pytest.raises(ValueError):
        HypergradSettings(iterations=0)
    with pytest.raises(ValueError):
        HypergradSettings(iteration_form="neumann")


def test_zero_hessian_reduces_to_direct_gradient():
    g = np.array([1.0, -2.0, 0.5])
    res = richardson_solve(g, lambda v: np.zeros_like(v), HypergradSettings(iterations=1))
    assert np.array_equal(res.x, g)
    assert res.residual_norm == 0.0
    assert not res.diverged


def test_richardson_iterates_match_hand_computation():
    H = np.diag([0.2, 0.5])
    g = np.ones(2)
    expected = {1: [1.0, 1.0], 2: [0.8, 0.5], 3: [0.84, 0.75]}
    for k, want in expected.items():
        res = richardson_solve(g, lambda v: H @ v, HypergradSettings(gamma=1.0, iterations=k))
        assert np.allclose(res.x, want, atol=1e-14)
    res = richardson_solve(g, lambda v: H @ v, HypergradSettings(gamma=1.0, iterations=200))
    assert np.allclose(res.x, [1 / 1.2, 1 / 1.5], atol=1e-12)


def test_richardson_divergence_flagged():
    H = np.diag([3.0, 3.0])  # spectral radius of gamma*H is 3
    g = np.ones(2)
    res = richardson_solve(g, lambda v: H @ v, HypergradSettings(gamma=1.0, iterations=5))
    assert res.diverged
    assert res.iterations_run <= 5
    assert np.all(np.isfinite(res.x))


def test_dense_solve_trivial_cases():
    assert np.allclose(dense_solve_oracle(np.zeros((2, 2)), np.array([3.0, 4.0]), 1.0), [3, 4])
    assert np.allclose(dense_solve_oracle(np.eye(2), np.array([2.0, 2.0]), 1.0), [1, 1])


def test_dense_solve_residual():
    rng = np.random.default_rng(0)
    H = random_spd(rng, 50, 0.8)
    g = rng.normal(size=50)
    x = dense_solve_oracle(H, g, 1.0)
    assert np.linalg.norm((np.eye(50) + H) @ x - g) < 1e-10


def test_dense_solve_errors():
    with pytest.raises(OracleError):
        dense_solve_oracle(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros(2), 1.0)
    with pytest.raises(OracleError):
        dense_solve_oracle(-np.eye(2), np.array([1.0, 1.0]), 1.0)  # singular I + gamma*H


def test_oracle_equivalence_random_spd():
    rng = np.random.default_rng(1)
    for trial in range(10):
        d = int(rng.integers(5, 51))
        gamma = float(rng.uniform(0.2, 1.5))
        rho = float(rng.uniform(0.1, 0.9))
        H = random_spd(rng, d, rho / gamma)
        g = rng.normal(size=d)
        res = richardson_solve(
            g, lambda v: H @ v, HypergradSettings(gamma=gamma, iterations=200)
        )
        want = dense_solve_oracle(H, g, gamma)
        assert np.linalg.norm(res.x - want) / np.linalg.norm(want) < 1e-6
        # residual history non-increasing under the spectral condition
        hist = np.array(res.residual_history)
        assert np.all(np.diff(hist) <= 1e-12)
        # literal form solves the other system
        res7 = richardson_solve(
            g, lambda v: H @ v,
            HypergradSettings(gamma=gamma, iterations=400, iteration_form="eq7-literal"),
        )
        want7 = dense_solve_oracle(H, g, gamma, iteration_form="eq7-literal")
        if gamma >= 1.0:  # eq7 iteration contracts only when rho(H/gamma) < 1
            assert np.linalg.norm(res7.x - want7) / np.linalg.norm(want7) < 1e-6


def test_forms_coincide_at_gamma_one():
    rng = np.random.default_rng(2)
    H = random_spd(rng, 20, 0.7)
    g = rng.normal(size=20)
    a = richardson_solve(g, lambda v: H @ v, HypergradSettings(gamma=1.0, iterations=50))
    b = richardson_solve(
        g, lambda v: H @ v,
        HypergradSettings(gamma=1.0, iterations=50, iteration_form="eq7-literal"),
    )
    assert np.allclose(a.x, b.x, rtol=1e-10, atol=1e-12)


@pytest.fixture(scope="module")
def toy():
    arch = dm.DenoiserArch(hidden=4)
    rng = np.random.default_rng(0)
    model = dm.DenoiserModel(arch, dm.init_params(arch, rng))
    sched = dm.make_schedule(50, 1e-4, 0.2)
    concepts = dm.make_concepts()
    data = dm.generate_dataset(concepts, 10, np.random.default_rng(1))
    harmful = [s for s in data if s.concept_id in dm.HARMFUL_IDS]
    benign = [s for s in data if s.concept_id not in dm.HARMFUL_IDS]
    # train past the harmful-loss ascent ceiling so its gradient is live
    params, _ = dm.train_denoiser(model, data, sched, steps=800, seed=3)
    return dm.DenoiserModel(arch, params), sched, harmful, benign


def test_get_hypergrad_matches_dense_solve_on_model(toy):
    model, sched, harmful, benign = toy
    d = model.arch.param_count
    theta_ft = model.params + np.random.default_rng(2).normal(0, 0.01, d)
    seed = 77

    from resalign.hypergrad import _ft_graph

    gph = _ft_graph(model, benign, sched, seed, "standard", None, None)
    H = np.column_stack([hvp(gph, theta_ft, e) for e in np.eye(d)])
    rho = np.max(np.abs(np.linalg.eigvalsh((H + H.T) / 2)))
    gamma = 0.5 / rho

    settings = HypergradSettings(gamma=gamma, iterations=200)
    res = get_hypergrad(
        model, model.params, theta_ft, harmful, benign, sched, settings, seed
    )
    g_vec = grad(_harmful_graph(model, harmful, sched, seed), theta_ft)
    want = dense_solve_oracle((H + H.T) / 2, g_vec, gamma)
    assert np.linalg.norm(res.x - want) / np.linalg.norm(want) < 1e-6
    assert not res.diverged


def test_get_hypergrad_dimension_mismatch(toy):
    model, sched, harmful, benign = toy
    with pytest.raises(ValueError):
        get_hypergrad(
            model, model.params, model.params[:-1], harmful, benign, sched,
            HypergradSettings(), 0,
        )


def test_unrolled_oracle_lr_zero_equals_plain_gradient(toy):
    model, sched, harmful, benign = toy
    config = FinetuneConfig(optimizer="sgd", lr=0.0, steps=1, seed=5)
    v = unrolled_grad_oracle(model, model.params, benign, config, harmful, sched, 9)
    want = grad(_harmful_graph(model, harmful, sched, 9), model.params)
    assert np.array_equal(v, want)


def test_unrolled_oracle_rejects_unsupported(toy):
    model, sched, harmful, benign = toy
    with pytest.raises(OracleUnsupportedError):
        unrolled_grad_oracle(
            model, model.params, benign,
            FinetuneConfig(optimizer="adam"), harmful, sched, 0,
        )
    with pytest.raises(OracleUnsupportedError):
        unrolled_grad_oracle(
            model, model.params, benign,
            FinetuneConfig(parameterization="low-rank"), harmful, sched, 0,
        )
    with pytest.raises(OracleUnsupportedError):
        unrolled_grad_oracle(
            model, model.params, benign,
            FinetuneConfig(steps=25), harmful, sched, 0,
        )


def test_unrolled_oracle_matches_finite_differences(toy):
    # independent check of the whole unrolled pipeline: central differences
    # of L_harmful(Adapt(theta)) with respect to theta
    model, sched, harmful, benign = toy
    config = FinetuneConfig(optimizer="sgd", lr=1e-3, steps=3, batch_size=8, seed=6)
    seed = 13
    v = unrolled_grad_oracle(model, model.params, benign, config, harmful, sched, seed)

    hg = _harmful_graph(model, harmful, sched, seed)

    def pipeline(theta):
        base = dm.DenoiserModel(model.arch, theta)
        final = adapt(base, benign, config, sched, None)
        return eval_loss(hg, final)

    rng = np.random.default_rng(7)
    h = 1e-5
    for i in rng.choice(model.arch.param_count, 12, replace=False):
        tp = model.params.copy()
        tm = model.params.copy()
        tp[i] += h
        tm[i] -= h
        fd = (pipeline(tp) - pipeline(tm)) / (2 * h)
        assert v[i] == pytest.approx(fd, rel=2e-3, abs=1e-7)


@pytest.mark.slow
def test_k5_relative_residual_small_on_default_denoiser():
    # five iterations must leave <= 10% relative residual in >= 90% of
    # seeded trials on the default trained model; measured, not assumed
    from resalign.adapt import ConfigDistribution, adapt, sample_config

    arch = dm.DenoiserArch()
    model = dm.DenoiserModel(arch, dm.init_params(arch, np.random.default_rng(0)))
    sched = dm.make_schedule(50, 1e-4, 0.2)
    data = dm.generate_dataset(dm.make_concepts(), 40, np.random.default_rng(1))
    params, _ = dm.train_denoiser(model, data, sched, steps=2000, seed=2)
    trained = dm.DenoiserModel(arch, params)
    harmful = [s for s in data if s.concept_id in dm.HARMFUL_IDS]
    benign = [s for s in data if s.concept_id not in dm.HARMFUL_IDS]
    dist = ConfigDistribution()
    ok = 0
    trials = 20
    for i in range(trials):
        config = sample_config(dist, rng_seed=100 + i)
        try:
            theta_ft = adapt(trained, benign, config, sched, trained)
        except Exception:
            continue
        res = get_hypergrad(
            trained, params, theta_ft, harmful, benign, sched,
            HypergradSettings(gamma=1.0, iterations=5), rng_seed=200 + i,
        )
        rel = res.residual_norm / res.residual_history[0]
        if not res.diverged and rel <= 0.1:
            ok += 1
    assert ok >= int(0.9 * trials)


def test_implicit_close_to_unrolled_single_seed(toy):
    model, sched, harmful, benign = toy
    config = FinetuneConfig(optimizer="sgd", lr=1e-3, steps=10, batch_size=16, seed=8)
    seed = 21
    theta_ft = adapt(model, benign, config, sched, None)
    res = get_hypergrad(
        model, model.params, theta_ft, harmful, benign, sched,
        HypergradSettings(gamma=1.0, iterations=5), seed,
    )
    ref = unrolled_grad_oracle(model, model.params, benign, config, harmful, sched, seed)
    cos = res.x @ ref / (np.linalg.norm(res.x) * np.linalg.norm(ref))
    assert cos >= 0.8
