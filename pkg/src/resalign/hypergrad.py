"""Implicit hypergradient of the harmful loss through simulated fine-tuning.

Fine-tuning is modeled as the proximal (Moreau-envelope) minimizer of the
fine-tuning loss around the base parameters.  Differentiating its
first-order optimality condition gives the linear system

    (I + gamma * H_ft) x = g,          g = grad of the harmful loss at
                                        the fine-tuned parameters,

whose solution x is the hypergradient.  It is solved matrix-free by
Richardson iteration over Hessian-vector products.

Two iteration forms are provided.  The default ("eq6-consistent"),
x <- g - gamma * H x, has the system above as its fixed point.  The
alternative ("eq7-literal"), x <- g/gamma - (1/gamma) H x, instead solves
(gamma * I + H) x = g; the two coincide only at gamma = 1.  The dense
oracle below arbitrates both in tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ComputeGraph, grad, hvp
from .diffusion import DenoiserModel, LabeledSample, NoiseSchedule
from .objectives import ft_loss, harmful_loss
from .seeding import derive_seed

HVP_BATCH = 16

ITERATION_FORMS = ("eq6-consistent", "eq7-literal")


class OracleError(RuntimeError):
    pass


class OracleUnsupportedError(ValueError):
    pass


@dataclass(frozen=True)
class HypergradSettings:
    gamma: float = 1.0
    iterations: int = 5
    iteration_form: str = "eq6-consistent"
    residual_tol: float = 0.0

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.iterations < 1:
            raise ValueError("iteration count must be >= 1")
        if self.iteration_form not in ITERATION_FORMS:
            raise ValueError(f"unknown iteration form {self.iteration_form!r}")
        if self.residual_tol < 0:
            raise ValueError("residual_tol must be >= 0")


@dataclass
class HypergradResult:
    x: np.ndarray
    residual_norm: float
    iterations_run: int
    diverged: bool
    residual_history: list = field(default_factory=list)


def richardson_solve(g: np.ndarray, hvp_fn, settings: HypergradSettings) -> HypergradResult:
    """Richardson iteration from x = 0; hvp_fn(v) returns H_ft @ v.

    The difference x_{k+1} - x_k equals the residual of x_k under the
    selected system, so divergence monitoring is free; the reported final
    residual uses one extra Hessian-vector product.
    """
    gamma = settings.gamma
    if settings.iteration_form == "eq6-consistent":
        b = g
        scale = gamma
    else:
        b = g / gamma
        scale = 1.0 / gamma

    x = np.zeros_like(g)
    best = x
    best_res = float(np.linalg.norm(b))  # residual of x0 = 0 is ||b||
    history = [best_res]
    grew = 0
    diverged = False
    k = 0
    for k in range(1, settings.iterations + 1):
        x_next = b - scale * hvp_fn(x)
        step_res = float(np.linalg.norm(x_next - x))  # residual of x_k at k>=1
        if not np.all(np.isfinite(x_next)):
            diverged = True
            break
        # jitter at the machine-precision floor is not divergence
        if step_res > history[-1] and step_res > 1e-12 * history[0]:
            grew += 1
            if grew >= 2:
                diverged = True
                x = x_next
                history.append(step_res)
                break
        else:
            grew = 0
        x = x_next
        history.append(step_res)
        if step_res <= best_res:
            best, best_res = x, step_res
        if settings.residual_tol and step_res <= settings.residual_tol:
            break

    if diverged:
        return HypergradResult(
            x=best, residual_norm=best_res, iterations_run=k,
            diverged=True, residual_history=history,
        )
    final_res = float(np.linalg.norm(x + scale * hvp_fn(x) - b))
    return HypergradResult(
        x=x, residual_norm=final_res, iterations_run=k,
        diverged=False, residual_history=history,
    )


def _harmful_graph(model, pool_harmful, schedule, rng_seed) -> ComputeGraph:
    rng = np.random.default_rng(derive_seed(rng_seed, "hypergrad/harmful"))
    idx = rng.choice(len(pool_harmful), size=min(HVP_BATCH, len(pool_harmful)), replace=False)
    batch = [pool_harmful[i] for i in idx]
    return harmful_loss(model, batch, schedule, int(rng.integers(2**62)))


def _ft_graph(model, d_ft, schedule, rng_seed, loss_kind, frozen, aux_batch):
    rng = np.random.default_rng(derive_seed(rng_seed, "hypergrad/ft"))
    idx = rng.choice(len(d_ft), size=min(HVP_BATCH, len(d_ft)), replace=False)
    batch = [d_ft[i] for i in idx]
    return ft_loss(
        model, batch, schedule, kind=loss_kind, frozen=frozen,
        aux_batch=aux_batch, rng_seed=int(rng.integers(2**62)),
    )


def get_hypergrad(
    model: DenoiserModel,
    theta: np.ndarray,
    theta_ft: np.ndarray,
    pool_harmful: list[LabeledSample],
    d_ft: list[LabeledSample],
    schedule: NoiseSchedule,
    settings: HypergradSettings,
    rng_seed: int,
    loss_kind: str = "standard",
    frozen: DenoiserModel | None = None,
    aux_batch: list[LabeledSample] | None = None,
) -> HypergradResult:
    """Approximate grad_theta of the harmful loss at the fine-tuned point.

    Uses one fixed seeded batch each for the harmful gradient and the
    fine-tuning Hessian, so the result is deterministic given the seed.
    """
    theta = np.asarray(theta, dtype=np.float64)
    theta_ft = np.asarray(theta_ft, dtype=np.float64)
    if theta.shape != theta_ft.shape:
        raise ValueError(
            f"theta and theta_ft dimensions differ: {theta.shape} vs {theta_ft.shape}"
        )
    if not d_ft:
        raise ValueError("get_hypergrad needs a non-empty fine-tuning set")
    g_vec = grad(_harmful_graph(model, pool_harmful, schedule, rng_seed), theta_ft)
    if not np.all(np.isfinite(g_vec)):
        raise ValueError("non-finite harmful gradient at the fine-tuned parameters")
    ftg = _ft_graph(model, d_ft, schedule, rng_seed, loss_kind, frozen, aux_batch)
    return richardson_solve(g_vec, lambda v: hvp(ftg, theta_ft, v), settings)


def dense_solve_oracle(
    H: np.ndarray, g: np.ndarray, gamma: float, iteration_form: str = "eq6-consistent"
) -> np.ndarray:
    """Direct factorization solve of the implicit system (oracle scale only)."""
    H = np.asarray(H, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    d = H.shape[0]
    if H.shape != (d, d) or g.shape != (d,):
        raise OracleError(f"shape mismatch: H {H.shape}, g {g.shape}")
    if d > 2000:
        raise OracleError("dense oracle limited to d <= 2000")
    if not np.allclose(H, H.T, atol=1e-10):
        raise OracleError("H must be symmetric")
    if iteration_form == "eq6-consistent":
        A = np.eye(d) + gamma * H
        b = g
    elif iteration_form == "eq7-literal":
        A = gamma * np.eye(d) + H
        b = g
    else:
        raise OracleError(f"unknown iteration form {iteration_form!r}")
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as e:
        raise OracleError(f"singular implicit system: {e}") from e


def unrolled_grad_oracle(
    model: DenoiserModel,
    theta: np.ndarray,
    d_ft: list[LabeledSample],
    config,
    pool_harmful: list[LabeledSample],
    schedule: NoiseSchedule,
    rng_seed: int,
    frozen: DenoiserModel | None = None,
) -> np.ndarray:
    """Exact hypergradient through the full unrolled sgd trajectory.

    Accumulates v <- v - eta * H_t v in reverse over the stored trajectory;
    reference implementation for the implicit approximation.
    """
    from .adapt import adapt

    if config.optimizer != "sgd" or config.parameterization != "full":
        raise OracleUnsupportedError(
            "unrolled oracle supports full-parameter sgd configurations only"
        )
    if config.steps > 20:
        raise OracleUnsupportedError("unrolled oracle limited to steps <= 20")
    if model.arch.param_count > 2000:
        raise OracleUnsupportedError("unrolled oracle limited to d <= 2000")

    base = DenoiserModel(model.arch, np.asarray(theta, dtype=np.float64))
    final, trajectory, plan = adapt(
        base, d_ft, config, schedule, frozen, return_trajectory=True
    )
    v = grad(_harmful_graph(model, pool_harmful, schedule, rng_seed), final)
    aux = None
    if config.loss_kind == "prior-preservation":
        from .adapt import _aux_batch

        aux = _aux_batch(model, config, schedule, frozen)
    for step in range(config.steps - 1, -1, -1):
        idx, loss_seed = plan[step]
        batch = [d_ft[i] for i in idx]
        gph = ft_loss(
            model, batch, schedule, kind=config.loss_kind,
            frozen=frozen, aux_batch=aux, rng_seed=loss_seed,
        )
        v = v - config.lr * hvp(gph, trajectory[step], v)
    return v
