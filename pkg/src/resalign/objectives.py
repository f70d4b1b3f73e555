"""The three loss families of the unlearning objective.

- harmful loss: negated noise-prediction loss on harmful-concept samples,
  clamped below so gradient ascent cannot run away
- preservation loss: distillation against the frozen original model's
  noise predictions on benign concepts
- fine-tuning loss: standard noise-prediction loss, optionally with a
  prior-preservation term on samples generated by the frozen original

All are pure functions of (params, seeds) and return compute graphs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ComputeGraph
from .diffusion import (
    DenoiserModel,
    LabeledSample,
    NoiseSchedule,
    batch_arrays,
    build_prediction,
    denoise_loss,
    forward_noise,
    predict_eps,
    sample,
)

# Ceiling on the (negated) harmful loss during ascent, in units of the
# schedule's loss weight: a typical converged denoising loss sits near the
# 0.01 loss weight, so the ascent gradient cuts out once the harmful loss
# has been pushed to that scale.  Raising the ceiling lets the ascent run
# further but degrades benign concepts before it stops.
HARMFUL_CLAMP_MAX = 0.01
DEFAULT_BATCH = 16


class UsageError(ValueError):
    pass


@dataclass
class DatasetPool:
    """Samples and concept roles used across unlearning and evaluation."""

    harmful: list[LabeledSample]
    preserve_concepts: list[int]
    finetune_pool: list[LabeledSample]
    attack_benign: list[LabeledSample] = field(default_factory=list)
    attack_harmful: list[LabeledSample] = field(default_factory=list)

    def validate(self, harmful_ids=(8, 9)) -> None:
        if any(s.concept_id not in harmful_ids for s in self.harmful):
            raise UsageError("harmful set contains benign concept ids")
        if any(c in harmful_ids for c in self.preserve_concepts):
            raise UsageError("preserve_concepts must be benign")
        if any(s.concept_id in harmful_ids for s in self.finetune_pool):
            raise UsageError("finetune_pool must contain only benign samples")


def harmful_loss(
    model: DenoiserModel,
    batch: list[LabeledSample],
    schedule: NoiseSchedule,
    rng_seed: int,
    harmful_ids=(8, 9),
    clamp_max: float = HARMFUL_CLAMP_MAX,
) -> ComputeGraph:
    """Negated denoising loss on a harmful batch, clamped at -clamp_max."""
    if any(s.concept_id not in harmful_ids for s in batch):
        raise UsageError("harmful_loss batch contains a benign concept id")
    g = denoise_loss(model, batch, schedule, rng_seed)
    g.set_output(g.clamp_min(g.scale(g.output, -1.0), -clamp_max))
    return g


def make_preservation_cache(
    frozen: DenoiserModel,
    preserve_concepts: list[int],
    schedule: NoiseSchedule,
    n_per_concept: int = 64,
    seed: int = 0,
) -> dict[int, np.ndarray]:
    """Clean points per benign concept, drawn once from the frozen sampler."""
    return {
        cid: sample(frozen, cid, schedule, n_per_concept, rng_seed=seed + cid)
        for cid in preserve_concepts
    }


def preserve_loss(
    model: DenoiserModel,
    frozen: DenoiserModel,
    preserve_concepts: list[int],
    schedule: NoiseSchedule,
    rng_seed: int,
    cache: dict[int, np.ndarray] | None = None,
    batch_size: int = DEFAULT_BATCH,
) -> ComputeGraph:
    """Distillation: mean w_t || eps_hat(theta) - eps_hat(theta_frozen) ||^2.

    Noisy inputs are built from clean points generated by the frozen model
    (cached per run), so the loss is a pure function of (theta, seeds).
    """
    if model.arch != frozen.arch:
        raise UsageError("preserve_loss: architecture mismatch with frozen model")
    if not preserve_concepts:
        raise UsageError("preserve_loss needs at least one preservation concept")
    rng = np.random.default_rng(rng_seed)
    if cache is None:
        cache = make_preservation_cache(
            frozen, preserve_concepts, schedule, seed=int(rng.integers(2**62))
        )
    cids = rng.choice(np.asarray(preserve_concepts), size=batch_size)
    xbar = np.stack([cache[c][rng.integers(len(cache[c]))] for c in cids])
    t = rng.integers(1, schedule.t_steps + 1, size=batch_size)
    eps = rng.normal(size=(batch_size, 2))
    x_t = forward_noise(xbar, t, eps, schedule)
    target = predict_eps(frozen.arch, frozen.params, x_t, cids, t)
    _, _, w = schedule.coeffs(t)
    g = ComputeGraph(model.arch.param_count)
    out = build_prediction(g, model.arch, x_t, cids, t)
    g.set_output(g.wmse(out, g.const(target), w))
    return g


def ft_loss(
    model: DenoiserModel,
    batch: list[LabeledSample],
    schedule: NoiseSchedule,
    kind: str = "standard",
    frozen: DenoiserModel | None = None,
    aux_batch: list[LabeledSample] | None = None,
    rng_seed: int = 0,
    aux_weight: float = 1.0,
) -> ComputeGraph:
    """Downstream fine-tuning loss: standard or prior-preservation."""
    if kind not in ("standard", "prior-preservation"):
        raise UsageError(f"unknown ft loss kind {kind!r}")
    rng = np.random.default_rng(rng_seed)
    main_seed = int(rng.integers(2**62))
    aux_seed = int(rng.integers(2**62))
    g = denoise_loss(model, batch, schedule, main_seed)
    if kind == "standard":
        return g
    if frozen is None or not aux_batch:
        raise UsageError("prior-preservation needs the frozen model and an auxiliary batch")
    if model.arch != frozen.arch:
        raise UsageError("ft_loss: architecture mismatch with frozen model")
    x_t, cids, t, eps = _redraw(aux_batch, schedule, aux_seed)
    _, _, w = schedule.coeffs(t)
    out = build_prediction(g, model.arch, x_t, cids, t)
    aux = g.wmse(out, g.const(eps), w)
    g.set_output(g.add(g.output, g.scale(aux, aux_weight)))
    return g


def _redraw(batch, schedule, seed):
    from .diffusion import draw_noising

    return draw_noising(batch, schedule, np.random.default_rng(seed))


def make_prior_batch(
    frozen: DenoiserModel,
    benign_concepts: list[int],
    schedule: NoiseSchedule,
    n: int,
    seed: int,
) -> list[LabeledSample]:
    """Auxiliary samples generated by the frozen original itself."""
    rng = np.random.default_rng(seed)
    cids = rng.choice(np.asarray(benign_concepts), size=n)
    out = []
    for cid in np.unique(cids):
        k = int(np.sum(cids == cid))
        pts = sample(frozen, int(cid), schedule, k, rng_seed=int(rng.integers(2**62)))
        out.extend(LabeledSample(x=p, concept_id=int(cid)) for p in pts)
    return out
