"""Outer unlearning loops: the resilient meta loop and the plain baseline.

Each outer step combines three gradient terms: the (negated, clamped)
harmful loss, the preservation distillation term, and the mean implicit
hypergradient over meta-sampled simulated fine-tunings.  Setting the
resilience weight beta to 0 reduces the step bit-exactly to the baseline
unlearner, which is also how the baseline is implemented.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .adapt import (
    AdaptDivergedError,
    ConfigDistribution,
    FinetuneConfig,
    _aux_batch,
    adapt,
    sample_config,
)
from .autodiff import value_and_grad
from .diffusion import DenoiserModel, NoiseSchedule
from .hypergrad import HypergradSettings, get_hypergrad
from .objectives import DatasetPool, harmful_loss, make_preservation_cache, preserve_loss
from .optim import Optimizer
from .seeding import derive_seed, rng_for

INNER_SAMPLE_SIZE = 50
OUTER_BATCH = 16


class OuterStepError(RuntimeError):
    def __init__(self, step: int, msg: str):
        super().__init__(f"outer step {step}: {msg}")
        self.step = step


@dataclass(frozen=True)
class ResalignSettings:
    alpha: float = 1.0
    beta: float = 0.8
    outer_lr: float = 2e-4
    outer_steps: int = 120
    inner_samples: int = 4
    hypergrad: HypergradSettings = field(default_factory=HypergradSettings)
    config_dist: ConfigDistribution = field(default_factory=ConfigDistribution)
    outer_optimizer: str = "sgd"
    inner_sample_size: int = INNER_SAMPLE_SIZE
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must be in [0, 1]")
        if self.outer_steps < 1:
            raise ValueError("outer_steps must be >= 1")
        if self.inner_samples < 1:
            raise ValueError("inner_samples must be >= 1")


@dataclass
class StepDiagnostics:
    harmful_value: float
    preserve_value: float
    mean_residual: float
    skipped: int
    harmful_grad: np.ndarray
    preserve_grad: np.ndarray
    hypergrads: list  # per surviving inner sample


@dataclass
class UnlearnRunRecord:
    harmful_values: list = field(default_factory=list)
    preserve_values: list = field(default_factory=list)
    mean_residuals: list = field(default_factory=list)
    skipped_counts: list = field(default_factory=list)


def _seeded_batch(items, size, rng):
    idx = rng.choice(len(items), size=min(size, len(items)), replace=False)
    return [items[i] for i in idx]


def _outer_terms(model, theta, pool, frozen, cache, schedule, settings, step_index):
    base = f"unlearn/outer:{step_index}"
    rng_h = rng_for(settings.seed, f"{base}/harmful")
    batch_h = _seeded_batch(pool.harmful, OUTER_BATCH, rng_h)
    g_harm = harmful_loss(model, batch_h, schedule, int(rng_h.integers(2**62)))
    h_val, h_grad = value_and_grad(g_harm, theta)

    g_pres = preserve_loss(
        model, frozen, pool.preserve_concepts, schedule,
        rng_seed=derive_seed(settings.seed, f"{base}/preserve"),
        cache=cache, batch_size=OUTER_BATCH,
    )
    p_val, p_grad = value_and_grad(g_pres, theta)
    return h_val, h_grad, p_val, p_grad


def resalign_step(
    model: DenoiserModel,
    theta: np.ndarray,
    pool: DatasetPool,
    frozen: DenoiserModel,
    cache: dict,
    schedule: NoiseSchedule,
    settings: ResalignSettings,
    step_index: int,
    optimizer: Optimizer,
    fixed_config: FinetuneConfig | None = None,
) -> tuple[np.ndarray, StepDiagnostics]:
    """One outer update; fixed_config pins every inner sample to one recipe
    (ablation of configuration meta-sampling)."""
    h_val, h_grad, p_val, p_grad = _outer_terms(
        model, theta, pool, frozen, cache, schedule, settings, step_index
    )
    g = (1.0 - settings.beta) * h_grad + settings.alpha * p_grad

    hypergrads = []
    residuals = []
    skipped = 0
    if settings.beta > 0.0:
        for j in range(settings.inner_samples):
            base = f"unlearn/outer:{step_index}/inner:{j}"
            rng_d = rng_for(settings.seed, f"{base}/data")
            d_ft = _seeded_batch(pool.finetune_pool, settings.inner_sample_size, rng_d)
            if fixed_config is not None:
                config = fixed_config
            else:
                config = sample_config(
                    settings.config_dist, derive_seed(settings.seed, f"{base}/config")
                )
            try:
                theta_ft = adapt(
                    DenoiserModel(model.arch, theta), d_ft, config, schedule, frozen
                )
            except AdaptDivergedError:
                skipped += 1
                continue
            res = get_hypergrad(
                model, theta, theta_ft, pool.harmful, d_ft, schedule,
                settings.hypergrad, derive_seed(settings.seed, f"{base}/hg"),
                loss_kind=config.loss_kind, frozen=frozen,
                aux_batch=_aux_batch(model, config, schedule, frozen),
            )
            if res.diverged:
                skipped += 1
                continue
            hypergrads.append(res.x)
            residuals.append(res.residual_norm)
        if not hypergrads:
            raise OuterStepError(step_index, "all inner samples diverged")
        g = g + (settings.beta / len(hypergrads)) * np.sum(hypergrads, axis=0)

    if not np.all(np.isfinite(g)):
        raise OuterStepError(step_index, "non-finite aggregate gradient")
    theta_next = optimizer.step(theta, g)
    diag = StepDiagnostics(
        harmful_value=h_val,
        preserve_value=p_val,
        mean_residual=float(np.mean(residuals)) if residuals else 0.0,
        skipped=skipped,
        harmful_grad=h_grad,
        preserve_grad=p_grad,
        hypergrads=hypergrads,
    )
    return theta_next, diag


def baseline_unlearn_step(
    model: DenoiserModel,
    theta: np.ndarray,
    pool: DatasetPool,
    frozen: DenoiserModel,
    cache: dict,
    schedule: NoiseSchedule,
    settings: ResalignSettings,
    step_index: int,
    optimizer: Optimizer,
) -> tuple[np.ndarray, StepDiagnostics]:
    """One descent step on harmful loss + alpha * preservation (beta = 0)."""
    zeroed = ResalignSettings(
        alpha=settings.alpha, beta=0.0, outer_lr=settings.outer_lr,
        outer_steps=settings.outer_steps, inner_samples=settings.inner_samples,
        hypergrad=settings.hypergrad, config_dist=settings.config_dist,
        outer_optimizer=settings.outer_optimizer,
        inner_sample_size=settings.inner_sample_size, seed=settings.seed,
    )
    return resalign_step(
        model, theta, pool, frozen, cache, schedule, zeroed, step_index, optimizer
    )


def run_unlearn(
    model: DenoiserModel,
    pool: DatasetPool,
    schedule: NoiseSchedule,
    settings: ResalignSettings,
    method: str = "resalign",
    fixed_config: FinetuneConfig | None = None,
) -> tuple[np.ndarray, UnlearnRunRecord]:
    """Run the outer loop from the pretrained base model.

    method "baseline" is the plain two-term unlearner; "resalign" adds the
    meta-sampled resilience term.
    """
    if method not in ("resalign", "baseline"):
        raise ValueError(f"unknown unlearn method {method!r}")
    pool.validate()
    frozen = DenoiserModel(model.arch, model.params.copy())
    cache = make_preservation_cache(
        frozen, pool.preserve_concepts, schedule,
        seed=derive_seed(settings.seed, "unlearn/preserve-cache"),
    )
    theta = model.params.copy()
    opt = Optimizer(settings.outer_optimizer, settings.outer_lr)
    record = UnlearnRunRecord()
    step_fn = baseline_unlearn_step if method == "baseline" else resalign_step
    for i in range(settings.outer_steps):
        kwargs = {} if method == "baseline" else {"fixed_config": fixed_config}
        theta, diag = step_fn(
            model, theta, pool, frozen, cache, schedule, settings, i, opt, **kwargs
        )
        record.harmful_values.append(diag.harmful_value)
        record.preserve_values.append(diag.preserve_value)
        record.mean_residuals.append(diag.mean_residual)
        record.skipped_counts.append(diag.skipped)
    return theta, record
