"""Toy conditional denoising-diffusion testbed on 2-D Gaussian mixtures.

Ten concepts (ids 0-7 benign, 8-9 harmful) live on a ring of radius 1,
each a 1-3 mode mixture with component std 0.05, so "harmfulness" of a
generated point is geometrically measurable.  The denoiser is a small MLP
conditioned on a sinusoidal timestep embedding and a learned concept
embedding; its loss is exposed as a compute graph so the autodiff core
supplies gradients and Hessian-vector products.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ComputeGraph, _sigmoid, value_and_grad
from .optim import Optimizer

N_CONCEPTS = 10
HARMFUL_IDS = (8, 9)
MODE_STD = 0.05
RING_RADIUS = 1.0


class ScheduleConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance-preserving schedule: alpha[t]^2 + sigma[t]^2 = 1."""

    t_steps: int
    betas: np.ndarray  # per-step beta_t, t = 1..T (index 0 is t=1)
    alpha: np.ndarray  # sqrt of cumulative product of (1 - beta)
    sigma: np.ndarray
    weight: np.ndarray

    def coeffs(self, t):
        """alpha_t, sigma_t, w_t for integer timestep(s) t in 1..T."""
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.t_steps):
            raise ScheduleConfigError(f"timestep {t} outside 1..{self.t_steps}")
        i = t - 1
        return self.alpha[i], self.sigma[i], self.weight[i]


# Constant per-timestep loss weight.  The implicit-hypergradient solver
# iterates x <- g - gamma * H x and contracts only while the spectral radius
# of gamma * H stays below 1; at unit weight the denoiser's loss Hessian
# reaches spectral radius ~20 and the iteration blows up at the default
# gamma = 1.  0.01 keeps measured radii near 0.2 with margin to spare.
LOSS_WEIGHT = 0.01


def make_schedule(
    t_steps: int, beta_min: float, beta_max: float, loss_weight: float = LOSS_WEIGHT
) -> NoiseSchedule:
    if t_steps < 1:
        raise ScheduleConfigError(f"t_steps must be >= 1, got {t_steps}")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ScheduleConfigError(
            f"need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
        )
    if loss_weight <= 0:
        raise ScheduleConfigError(f"loss_weight must be > 0, got {loss_weight}")
    if t_steps == 1:
        betas = np.array([beta_min], dtype=np.float64)
    else:
        betas = np.linspace(beta_min, beta_max, t_steps)
    alpha_bar = np.cumprod(1.0 - betas)
    return NoiseSchedule(
        t_steps=t_steps,
        betas=betas,
        alpha=np.sqrt(alpha_bar),
        sigma=np.sqrt(1.0 - alpha_bar),
        weight=np.full(t_steps, float(loss_weight)),
    )


def forward_noise(x, t, eps, schedule: NoiseSchedule):
    """x_t = alpha_t * x + sigma_t * eps."""
    a, s, _ = schedule.coeffs(t)
    x = np.asarray(x, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if np.ndim(a):  # per-row timesteps
        a = a[:, None]
        s = s[:, None]
    return a * x + s * eps


# -- concepts & data ------------------------------------------------------


@dataclass(frozen=True)
class ConceptSpec:
    concept_id: int
    mode_centers: np.ndarray  # (m, 2)
    mode_weights: np.ndarray  # (m,), sums to 1
    is_harmful: bool


@dataclass(frozen=True)
class LabeledSample:
    x: np.ndarray  # 2-D point
    concept_id: int


def make_concepts() -> list[ConceptSpec]:
    """Fixed layout: one anchor per concept on the unit ring, 1-3 modes."""
    concepts = []
    for cid in range(N_CONCEPTS):
        ang = 2.0 * np.pi * cid / N_CONCEPTS
        anchor = RING_RADIUS * np.array([np.cos(ang), np.sin(ang)])
        n_modes = 1 + cid % 3
        centers = []
        for m in range(n_modes):
            off_ang = ang + 2.0 * np.pi * m / max(n_modes, 1)
            off = 0.18 * np.array([np.cos(off_ang), np.sin(off_ang)])
            centers.append(anchor + (off if n_modes > 1 else 0.0))
        concepts.append(
            ConceptSpec(
                concept_id=cid,
                mode_centers=np.array(centers),
                mode_weights=np.full(n_modes, 1.0 / n_modes),
                is_harmful=cid in HARMFUL_IDS,
            )
        )
    return concepts


def sample_concept_points(spec: ConceptSpec, n: int, rng: np.random.Generator):
    modes = rng.choice(len(spec.mode_weights), size=n, p=spec.mode_weights)
    return spec.mode_centers[modes] + rng.normal(0.0, MODE_STD, size=(n, 2))


def generate_dataset(
    concepts: list[ConceptSpec], n_per_concept: int, rng: np.random.Generator
) -> list[LabeledSample]:
    samples = []
    for spec in concepts:
        pts = sample_concept_points(spec, n_per_concept, rng)
        samples.extend(LabeledSample(x=p, concept_id=spec.concept_id) for p in pts)
    return samples


def save_samples(path, samples: list[LabeledSample]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["x0", "x1", "concept_id"])
        for s in samples:
            writer.writerow([repr(float(s.x[0])), repr(float(s.x[1])), s.concept_id])


def load_samples(path) -> list[LabeledSample]:
    samples = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["x0", "x1", "concept_id"]:
            raise ValueError(f"unexpected sample table header {header} in {path}")
        for row in reader:
            samples.append(
                LabeledSample(x=np.array([float(row[0]), float(row[1])]), concept_id=int(row[2]))
            )
    return samples


# -- denoiser model -------------------------------------------------------


@dataclass(frozen=True)
class DenoiserArch:
    """MLP denoiser: (x_t, t-embedding, concept embedding) -> predicted noise."""

    hidden: int = 64
    temb_dim: int = 8
    cemb_dim: int = 4
    n_concepts: int = N_CONCEPTS
    layout: dict = field(init=False, repr=False, compare=False)
    param_count: int = field(init=False, compare=False)

    def __post_init__(self):
        din = 2 + self.temb_dim + self.cemb_dim
        shapes = {
            "cemb": (self.n_concepts, self.cemb_dim),
            "w1": (din, self.hidden),
            "b1": (self.hidden,),
            "w2": (self.hidden, self.hidden),
            "b2": (self.hidden,),
            "w3": (self.hidden, 2),
            "b3": (2,),
        }
        layout = {}
        off = 0
        for name, shape in shapes.items():
            size = int(np.prod(shape))
            layout[name] = (off, off + size, shape)
            off += size
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "param_count", off)

    def describe(self) -> str:
        return (
            f"mlp:hidden={self.hidden},temb={self.temb_dim},"
            f"cemb={self.cemb_dim},concepts={self.n_concepts}"
        )

    def weight_block_names(self) -> list[str]:
        """Affine weight blocks eligible for low-rank adaptation."""
        return ["w1", "w2", "w3"]

    def views(self, params: np.ndarray) -> dict:
        return {
            name: params[a:b].reshape(shape)
            for name, (a, b, shape) in self.layout.items()
        }


@dataclass
class DenoiserModel:
    arch: DenoiserArch
    params: np.ndarray

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.arch.param_count,):
            raise ValueError(
                f"params shape {self.params.shape} does not match "
                f"architecture count {self.arch.param_count}"
            )


def init_params(arch: DenoiserArch, rng: np.random.Generator) -> np.ndarray:
    params = np.zeros(arch.param_count)
    for name, (a, b, shape) in arch.layout.items():
        if name == "cemb":
            params[a:b] = rng.normal(0.0, 1.0, size=b - a)
        elif name.startswith("w"):
            fan_in = shape[0]
            params[a:b] = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=b - a)
        # biases stay zero
    return params


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (n, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(1000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def build_prediction(g: ComputeGraph, arch: DenoiserArch, x_t, cids, t) -> int:
    """Append denoiser forward-pass nodes to g; returns the output node."""
    p = {name: g.param(a, shape) for name, (a, _, shape) in arch.layout.items()}
    temb = timestep_embedding(t, arch.temb_dim)
    xin = g.concat([g.const(x_t), g.const(temb), g.gather(p["cemb"], cids)])
    h = g.silu(g.affine(xin, p["w1"], p["b1"]))
    h = g.silu(g.affine(h, p["w2"], p["b2"]))
    return g.affine(h, p["w3"], p["b3"])


def predict_eps(arch: DenoiserArch, params, x_t, cids, t) -> np.ndarray:
    """Plain-numpy forward pass (sampling and frozen-teacher targets)."""
    v = arch.views(np.asarray(params, dtype=np.float64))
    temb = timestep_embedding(t, arch.temb_dim)
    xin = np.concatenate([x_t, temb, v["cemb"][np.asarray(cids, dtype=np.intp)]], axis=1)
    h = xin @ v["w1"] + v["b1"]
    h = h * _sigmoid(h)
    h = h @ v["w2"] + v["b2"]
    h = h * _sigmoid(h)
    return h @ v["w3"] + v["b3"]


def batch_arrays(batch: list[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.array([s.x for s in batch], dtype=np.float64)
    cids = np.array([s.concept_id for s in batch], dtype=np.intp)
    return x, cids


def draw_noising(batch, schedule: NoiseSchedule, rng: np.random.Generator):
    """Sample (t, eps) per batch element and build noisy inputs."""
    x, cids = batch_arrays(batch)
    n = len(batch)
    t = rng.integers(1, schedule.t_steps + 1, size=n)
    eps = rng.normal(size=(n, 2))
    x_t = forward_noise(x, t, eps, schedule)
    return x_t, cids, t, eps


def denoise_loss(
    model: DenoiserModel, batch: list[LabeledSample], schedule: NoiseSchedule, rng_seed: int
) -> ComputeGraph:
    """Noise-prediction loss graph: mean_i w_t ||eps_hat - eps||^2."""
    if not batch:
        raise ValueError("denoise_loss needs a non-empty batch")
    rng = np.random.default_rng(rng_seed)
    x_t, cids, t, eps = draw_noising(batch, schedule, rng)
    _, _, w = schedule.coeffs(t)
    g = ComputeGraph(model.arch.param_count)
    out = build_prediction(g, model.arch, x_t, cids, t)
    g.set_output(g.wmse(out, g.const(eps), w))
    return g


def sample(
    model: DenoiserModel,
    concept_id: int,
    schedule: NoiseSchedule,
    n: int,
    rng_seed: int,
) -> np.ndarray:
    """Ancestral reverse-process sampling; (n, 2) points, seed-deterministic."""
    if not (0 <= concept_id < model.arch.n_concepts):
        raise ValueError(f"unknown concept id {concept_id}")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng_seed)
    arch, params = model.arch, model.params
    betas = schedule.betas
    alpha_bar = schedule.alpha**2
    x = rng.normal(size=(n, 2))
    cids = np.full(n, concept_id, dtype=np.intp)
    for t in range(schedule.t_steps, 0, -1):
        i = t - 1
        eps_hat = predict_eps(arch, params, x, cids, np.full(n, t))
        x = (x - betas[i] / schedule.sigma[i] * eps_hat) / np.sqrt(1.0 - betas[i])
        if t > 1:
            post_var = betas[i] * (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i])
            x = x + np.sqrt(post_var) * rng.normal(size=(n, 2))
    return x


def train_denoiser(
    model: DenoiserModel,
    samples: list[LabeledSample],
    schedule: NoiseSchedule,
    steps: int,
    lr: float = 1e-3,
    batch_size: int = 64,
    seed: int = 0,
    optimizer: str = "adam",
) -> tuple[np.ndarray, list[float]]:
    """Train by noise-prediction descent; returns (params, loss history)."""
    rng = np.random.default_rng(seed)
    params = model.params.copy()
    opt = Optimizer(optimizer, lr)
    history = []
    for step in range(steps):
        idx = rng.choice(len(samples), size=min(batch_size, len(samples)), replace=False)
        batch = [samples[i] for i in idx]
        g = denoise_loss(model, batch, schedule, rng_seed=int(rng.integers(2**62)))
        loss, gvec = value_and_grad(g, params)
        params = opt.step(params, gvec)
        history.append(loss)
    return params, history
