"""Simulated downstream fine-tuning and the distribution over its recipes.

A recipe bundles optimizer, learning rate, step count, loss kind and
parameterization (full or low-rank factors on the affine weights).  The
meta loop samples recipes uniformly per factor.  Adaptation is a pure
function of (theta, data, config): repeat calls are bit-identical and the
input vector is never mutated.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import NumericError, value_and_grad
from .diffusion import DenoiserModel, LabeledSample, NoiseSchedule
from .objectives import ft_loss, make_prior_batch
from .optim import OPTIMIZERS, Optimizer
from .seeding import derive_seed


class AdaptDivergedError(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"adaptation diverged at step {step} (loss {loss})")
        self.step = step


@dataclass(frozen=True)
class FinetuneConfig:
    optimizer: str = "sgd"
    lr: float = 1e-4
    steps: int = 10
    loss_kind: str = "standard"
    parameterization: str = "full"
    rank: int = 4
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.loss_kind not in ("standard", "prior-preservation"):
            raise ValueError(f"unknown loss kind {self.loss_kind!r}")
        if self.parameterization not in ("full", "low-rank"):
            raise ValueError(f"unknown parameterization {self.parameterization!r}")
        if self.parameterization == "low-rank" and self.rank < 1:
            raise ValueError("rank must be >= 1 for low-rank")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FinetuneConfig":
        return cls(**d)


@dataclass(frozen=True)
class ConfigDistribution:
    lr_choices: tuple = (1e-4, 1e-5, 1e-6)
    step_choices: tuple = (5, 10, 20, 30)
    loss_choices: tuple = ("standard", "prior-preservation")
    param_choices: tuple = ("full", "low-rank")
    optimizer_choices: tuple = ("sgd", "adam")

    def __post_init__(self):
        for name in ("lr", "step", "loss", "param", "optimizer"):
            if not getattr(self, f"{name}_choices"):
                raise ValueError(f"{name}_choices must be non-empty")


def sample_config(dist: ConfigDistribution, rng_seed: int) -> FinetuneConfig:
    """Independent uniform draw per factor; deterministic given seed."""
    rng = np.random.default_rng(rng_seed)
    return FinetuneConfig(
        optimizer=str(rng.choice(dist.optimizer_choices)),
        lr=float(rng.choice(np.asarray(dist.lr_choices))),
        steps=int(rng.choice(np.asarray(dist.step_choices))),
        loss_kind=str(rng.choice(dist.loss_choices)),
        parameterization=str(rng.choice(dist.param_choices)),
        seed=int(rng.integers(2**62)),
    )


def step_plan(n_data: int, config: FinetuneConfig) -> list[tuple[np.ndarray, int]]:
    """Deterministic (minibatch indices, loss seed) per optimizer step.

    The data order is a single shuffle by config.seed, then cyclic.
    """
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    order = rng.permutation(n_data)
    plan = []
    pos = 0
    for step in range(config.steps):
        if config.batch_size >= n_data:
            idx = order.copy()
        else:
            take = []
            for _ in range(config.batch_size):
                take.append(order[pos])
                pos = (pos + 1) % n_data
            idx = np.asarray(take)
        plan.append((idx, derive_seed(config.seed, f"step:{step}")))
    return plan


def _aux_batch(model, config, schedule, frozen):
    if config.loss_kind != "prior-preservation":
        return None
    if frozen is None:
        raise ValueError("prior-preservation adaptation needs the frozen original")
    benign = [c for c in range(model.arch.n_concepts) if c not in (8, 9)]
    return make_prior_batch(
        frozen, benign, schedule, config.batch_size, seed=derive_seed(config.seed, "aux")
    )


class LowRankFactors:
    """Per-affine-weight factors: effective W = W_base + B @ A.

    A starts at zero so step 0 is a no-op; B is small Gaussian.  Only the
    factor entries ever change; base coordinates outside the affine weight
    blocks are untouched.
    """

    def __init__(self, arch, rank: int, rng: np.random.Generator):
        self.arch = arch
        self.rank = rank
        self.blocks = []  # (name, start, stop, shape, b_slice, a_slice)
        off = 0
        for name in arch.weight_block_names():
            start, stop, shape = arch.layout[name]
            nb = shape[0] * rank
            na = rank * shape[1]
            self.blocks.append((name, start, stop, shape, (off, off + nb), (off + nb, off + nb + na)))
            off += nb + na
        self.factors = np.zeros(off)
        for _, _, _, shape, (b0, b1), _ in self.blocks:
            self.factors[b0:b1] = rng.normal(0.0, 1e-3, size=b1 - b0)

    def effective(self, base: np.ndarray) -> np.ndarray:
        out = base.copy()
        for _, start, stop, shape, (b0, b1), (a0, a1) in self.blocks:
            b = self.factors[b0:b1].reshape(shape[0], self.rank)
            a = self.factors[a0:a1].reshape(self.rank, shape[1])
            out[start:stop] += (b @ a).ravel()
        return out

    def project_grad(self, full_grad: np.ndarray) -> np.ndarray:
        g = np.zeros_like(self.factors)
        for _, start, stop, shape, (b0, b1), (a0, a1) in self.blocks:
            dw = full_grad[start:stop].reshape(shape)
            b = self.factors[b0:b1].reshape(shape[0], self.rank)
            a = self.factors[a0:a1].reshape(self.rank, shape[1])
            g[b0:b1] = (dw @ a.T).ravel()
            g[a0:a1] = (b.T @ dw).ravel()
        return g


def adapt(
    model: DenoiserModel,
    d_ft: list[LabeledSample],
    config: FinetuneConfig,
    schedule: NoiseSchedule,
    frozen: DenoiserModel | None = None,
    return_trajectory: bool = False,
):
    """Run config.steps optimizer steps of the fine-tuning loss on d_ft."""
    if not d_ft:
        raise ValueError("adapt needs a non-empty fine-tuning dataset")
    arch = model.arch
    theta = model.params.copy()
    aux = _aux_batch(model, config, schedule, frozen)
    plan = step_plan(len(d_ft), config)
    opt = Optimizer(config.optimizer, config.lr)

    lowrank = None
    if config.parameterization == "low-rank":
        lowrank = LowRankFactors(
            arch, config.rank, np.random.default_rng(derive_seed(config.seed, "lowrank"))
        )

    trajectory = [theta.copy()]
    for step, (idx, loss_seed) in enumerate(plan):
        batch = [d_ft[i] for i in idx]
        eff = lowrank.effective(theta) if lowrank is not None else theta
        g = ft_loss(
            model, batch, schedule,
            kind=config.loss_kind, frozen=frozen, aux_batch=aux, rng_seed=loss_seed,
        )
        try:
            loss, gvec = value_and_grad(g, eff)
        except NumericError:
            raise AdaptDivergedError(step, float("nan")) from None
        if not np.isfinite(loss):
            raise AdaptDivergedError(step, loss)
        if lowrank is not None:
            lowrank.factors = opt.step(lowrank.factors, lowrank.project_grad(gvec))
        else:
            theta = opt.step(theta, gvec)
        new = lowrank.effective(theta) if lowrank is not None else theta.copy()
        if not np.all(np.isfinite(new)):
            raise AdaptDivergedError(step, loss)
        trajectory.append(new)
    final = trajectory[-1]
    if return_trajectory:
        return final, trajectory, plan
    return final
