"""Independent numerical oracles shared by the test suite.

Everything here deliberately avoids the package's own gradient machinery:
finite differences, dense linear algebra, and a from-scratch forward pass
for the random test networks.
"""
from __future__ import annotations

import numpy as np

from resalign.autodiff import ComputeGraph, eval_loss, grad


def fd_grad(f, x, h=1e-5):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def fd_hvp(gradf, x, v, h=1e-4):
    """Finite difference of gradients along direction v."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return (gradf(x + h * v) - gradf(x - h * v)) / (2.0 * h)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def random_graph(rng, max_dim=200):
    """Random small network loss exercising every primitive.

    Returns (graph, params, reference_loss_fn) where reference_loss_fn is an
    independent plain-numpy re-implementation of the same computation.
    """
    n = int(rng.integers(2, 9))
    din = int(rng.integers(2, 5))
    hidden = int(rng.integers(3, 9))
    dout = int(rng.integers(1, 4))
    n_emb = 4
    demb = int(rng.integers(1, 4))
    act = rng.choice(["tanh", "silu"])

    sizes = {
        "emb": (n_emb, demb),
        "w1": (din + demb, hidden),
        "b1": (hidden,),
        "w2": (hidden, dout),
        "b2": (dout,),
    }
    offsets = {}
    off = 0
    for name, shape in sizes.items():
        offsets[name] = off
        off += int(np.prod(shape))
    dim = off
    assert dim <= max_dim

    params = rng.normal(0.0, 0.7, size=dim)
    x = rng.normal(size=(n, din))
    idx = rng.integers(0, n_emb, size=n)
    target = rng.normal(size=(n, dout))
    w = rng.uniform(0.5, 2.0, size=n)
    c = float(rng.uniform(0.3, 1.5))

    g = ComputeGraph(dim)
    p = {name: g.param(offsets[name], shape) for name, shape in sizes.items()}
    xin = g.concat([g.const(x), g.gather(p["emb"], idx)])
    h1 = g.affine(xin, p["w1"], p["b1"])
    h1 = g.tanh(h1) if act == "tanh" else g.silu(h1)
    out = g.affine(h1, p["w2"], p["b2"])
    loss = g.wmse(out, g.const(target), w)
    # second branch through add + scale; clamp threshold low enough to stay
    # inactive so finite differences see a smooth function
    reg = g.wmse(out, g.const(np.zeros_like(target)), None)
    total = g.clamp_min(g.add(loss, g.scale(reg, c)), -1e6)
    g.set_output(total)

    def reference(theta):
        theta = np.asarray(theta, dtype=np.float64)
        vs = {
            name: theta[offsets[name] : offsets[name] + int(np.prod(shape))].reshape(
                shape
            )
            for name, shape in sizes.items()
        }
        xin_ = np.concatenate([x, vs["emb"][idx]], axis=1)
        h = xin_ @ vs["w1"] + vs["b1"]
        h = np.tanh(h) if act == "tanh" else h * _sigmoid(h)
        o = h @ vs["w2"] + vs["b2"]
        main = np.sum(w * np.sum((o - target) ** 2, axis=1)) / n
        reg_ = np.sum(np.sum(o**2, axis=1)) / n
        return max(main + c * reg_, -1e6)

    return g, params, reference


def graph_loss_fn(g):
    return lambda theta: eval_loss(g, theta)


def graph_grad_fn(g):
    return lambda theta: grad(g, theta)
