"""Minimal reverse-mode autodiff over flat parameter vectors.

Losses are built as small static compute graphs over a flat float64
parameter vector.  The primitive set is deliberately tiny: affine maps,
tanh / SiLU nonlinearities, concatenation, embedding gather, weighted
mean-squared-error reduction, and scalar add / scale / clamp.  That is
enough to express every loss in this package while keeping the
gradient-check surface small.

Hessian-vector products use forward-over-reverse: the whole
forward+backward pass is executed on dual numbers (value, directional
derivative), so the tangent of the gradient is exactly H @ v without ever
materializing the Hessian.  Everything is float64 and deterministic:
identical (graph, params, v) give bit-identical outputs.
"""
from __future__ import annotations

import numpy as np


class GraphConfigError(ValueError):
    """Malformed graph or mismatched dimensions."""


class NumericError(ArithmeticError):
    """A node produced a non-finite value."""


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class ComputeGraph:
    """Ordered list of primitive nodes producing one scalar loss.

    Nodes are appended by the builder methods; every node's inputs precede
    it, so a single forward sweep evaluates the graph and a single reverse
    sweep accumulates adjoints.
    """

    def __init__(self, dim: int):
        if dim < 0:
            raise GraphConfigError(f"negative parameter dimension {dim}")
        self.dim = dim
        self.ops: list[str] = []
        self.inputs: list[tuple[int, ...]] = []
        self.aux: list = []
        self.output: int | None = None

    def _add(self, op: str, inputs: tuple[int, ...], aux=None) -> int:
        for i in inputs:
            if not (0 <= i < len(self.ops)):
                raise GraphConfigError(f"node input {i} out of range for op {op!r}")
        self.ops.append(op)
        self.inputs.append(inputs)
        self.aux.append(aux)
        return len(self.ops) - 1

    # -- builders ---------------------------------------------------------

    def const(self, value) -> int:
        return self._add("const", (), np.asarray(value, dtype=np.float64))

    def param(self, start: int, shape: tuple[int, ...]) -> int:
        size = int(np.prod(shape)) if shape else 1
        stop = start + size
        if start < 0 or stop > self.dim:
            raise GraphConfigError(
                f"parameter slice [{start}, {stop}) outside dimension {self.dim}"
            )
        return self._add("param", (), (start, stop, tuple(shape)))

    def affine(self, x: int, w: int, b: int) -> int:
        return self._add("affine", (x, w, b))

    def tanh(self, x: int) -> int:
        return self._add("tanh", (x,))

    def silu(self, x: int) -> int:
        return self._add("silu", (x,))

    def concat(self, xs: list[int]) -> int:
        if not xs:
            raise GraphConfigError("concat needs at least one input")
        return self._add("concat", tuple(xs))

    def gather(self, table: int, idx) -> int:
        idx = np.asarray(idx, dtype=np.intp)
        return self._add("gather", (table,), idx)

    def wmse(self, pred: int, target: int, weights=None) -> int:
        w = None if weights is None else np.asarray(weights, dtype=np.float64)
        return self._add("wmse", (pred, target), w)

    def add(self, a: int, b: int) -> int:
        return self._add("add", (a, b))

    def scale(self, x: int, c: float) -> int:
        return self._add("scale", (x,), float(c))

    def clamp_min(self, x: int, c: float) -> int:
        return self._add("clamp_min", (x,), float(c))

    def set_output(self, node: int) -> None:
        if not (0 <= node < len(self.ops)):
            raise GraphConfigError(f"output node {node} out of range")
        self.output = node


# -- dual-number helpers (value, tangent); tangent None means zero --------


def _tadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _dmul(av, ad, bv, bd):
    """Tangent of av * bv."""
    parts = None
    if ad is not None:
        parts = _tadd(parts, ad * bv)
    if bd is not None:
        parts = _tadd(parts, av * bd)
    return parts


def _dmatmul(av, ad, bv, bd):
    parts = None
    if ad is not None:
        parts = _tadd(parts, ad @ bv)
    if bd is not None:
        parts = _tadd(parts, av @ bd)
    return parts


def _check_params(graph: ComputeGraph, params: np.ndarray) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.ndim != 1 or params.shape[0] != graph.dim:
        raise GraphConfigError(
            f"params have shape {params.shape}, graph expects ({graph.dim},)"
        )
    if not np.all(np.isfinite(params)):
        raise GraphConfigError("params contain non-finite entries")
    return params


# overflow surfaces as the NumericError below, not as a warning
@np.errstate(over="ignore", invalid="ignore")
def _forward(graph, params, tangent):
    vals: list = [None] * len(graph.ops)
    dots: list = [None] * len(graph.ops)
    for i, op in enumerate(graph.ops):
        ins = graph.inputs[i]
        aux = graph.aux[i]
        if op == "const":
            vals[i] = aux
        elif op == "param":
            start, stop, shape = aux
            vals[i] = params[start:stop].reshape(shape)
            if tangent is not None:
                dots[i] = tangent[start:stop].reshape(shape)
        elif op == "affine":
            x, w, b = ins
            vals[i] = vals[x] @ vals[w] + vals[b]
            d = _dmatmul(vals[x], dots[x], vals[w], dots[w])
            dots[i] = _tadd(d, dots[b])
        elif op == "tanh":
            (x,) = ins
            y = np.tanh(vals[x])
            vals[i] = y
            if dots[x] is not None:
                dots[i] = (1.0 - y * y) * dots[x]
        elif op == "silu":
            (x,) = ins
            s = _sigmoid(vals[x])
            vals[i] = vals[x] * s
            if dots[x] is not None:
                dots[i] = (s + vals[x] * s * (1.0 - s)) * dots[x]
        elif op == "concat":
            vals[i] = np.concatenate([vals[j] for j in ins], axis=1)
            if any(dots[j] is not None for j in ins):
                dots[i] = np.concatenate(
                    [
                        dots[j] if dots[j] is not None else np.zeros_like(vals[j])
                        for j in ins
                    ],
                    axis=1,
                )
        elif op == "gather":
            (t,) = ins
            vals[i] = vals[t][aux]
            if dots[t] is not None:
                dots[i] = dots[t][aux]
        elif op == "wmse":
            p, t = ins
            r = vals[p] - vals[t]
            n = r.shape[0]
            w = aux if aux is not None else 1.0
            vals[i] = np.asarray(np.sum(w * np.sum(r * r, axis=1)) / n)
            rd = _tadd(dots[p], None if dots[t] is None else -dots[t])
            if rd is not None:
                dots[i] = np.asarray(np.sum(w * np.sum(2.0 * r * rd, axis=1)) / n)
        elif op == "add":
            a, b = ins
            vals[i] = vals[a] + vals[b]
            dots[i] = _tadd(dots[a], dots[b])
        elif op == "scale":
            (x,) = ins
            vals[i] = aux * vals[x]
            if dots[x] is not None:
                dots[i] = aux * dots[x]
        elif op == "clamp_min":
            (x,) = ins
            vals[i] = np.maximum(vals[x], aux)
            if dots[x] is not None:
                dots[i] = np.where(vals[x] >= aux, dots[x], 0.0)
        else:  # pragma: no cover
            raise GraphConfigError(f"unknown op {op!r}")
        if not np.all(np.isfinite(vals[i])):
            raise NumericError(f"non-finite value at node {i} (op {op!r})")
    return vals, dots


def _backward(graph, params, tangent, vals, dots):
    out = graph.output
    gval = np.zeros(graph.dim)
    gdot = np.zeros(graph.dim) if tangent is not None else None
    avals: list = [None] * len(graph.ops)
    adots: list = [None] * len(graph.ops)

    def acc(i, v, d):
        avals[i] = v if avals[i] is None else avals[i] + v
        if d is not None:
            adots[i] = d if adots[i] is None else adots[i] + d

    acc(out, np.ones(()), None)
    for i in range(out, -1, -1):
        av = avals[i]
        if av is None:
            continue
        ad = adots[i]
        op = graph.ops[i]
        ins = graph.inputs[i]
        aux = graph.aux[i]
        if op == "const":
            pass
        elif op == "param":
            start, stop, _ = aux
            gval[start:stop] += np.asarray(av).ravel()
            if gdot is not None and ad is not None:
                gdot[start:stop] += np.asarray(ad).ravel()
        elif op == "affine":
            x, w, b = ins
            acc(x, av @ vals[w].T, _dmatmul(av, ad, vals[w].T, _t(dots[w], T=True)))
            acc(w, vals[x].T @ av, _dmatmul(vals[x].T, _t(dots[x], T=True), av, ad))
            acc(
                b,
                np.sum(av, axis=0),
                None if ad is None else np.sum(ad, axis=0),
            )
        elif op == "tanh":
            (x,) = ins
            y = vals[i]
            dv = 1.0 - y * y
            dd = None if dots[i] is None else -2.0 * y * dots[i]
            acc(x, av * dv, _dmul(av, ad, dv, dd))
        elif op == "silu":
            (x,) = ins
            s = _sigmoid(vals[x])
            dv = s + vals[x] * s * (1.0 - s)
            dd = None
            if dots[x] is not None:
                d2 = s * (1.0 - s) * (2.0 + vals[x] * (1.0 - 2.0 * s))
                dd = d2 * dots[x]
            acc(x, av * dv, _dmul(av, ad, dv, dd))
        elif op == "concat":
            off = 0
            for j in ins:
                k = vals[j].shape[1]
                acc(
                    j,
                    av[:, off : off + k],
                    None if ad is None else ad[:, off : off + k],
                )
                off += k
        elif op == "gather":
            (t,) = ins
            tv = np.zeros_like(vals[t])
            np.add.at(tv, aux, av)
            td = None
            if ad is not None:
                td = np.zeros_like(vals[t])
                np.add.at(td, aux, ad)
            acc(t, tv, td)
        elif op == "wmse":
            p, t = ins
            r = vals[p] - vals[t]
            rd = _tadd(dots[p], None if dots[t] is None else -dots[t])
            n = r.shape[0]
            w = aux if aux is not None else 1.0
            c = (2.0 / n) * (w[:, None] if aux is not None else w)
            base = c * r
            based = None if rd is None else c * rd
            acc(p, av * base, _dmul(av, ad, base, based))
            acc(t, -av * base, _neg(_dmul(av, ad, base, based)))
        elif op == "add":
            a, b = ins
            acc(a, av, ad)
            acc(b, av, ad)
        elif op == "scale":
            (x,) = ins
            acc(x, aux * av, None if ad is None else aux * ad)
        elif op == "clamp_min":
            (x,) = ins
            mask = (vals[x] >= aux).astype(np.float64)
            acc(x, av * mask, _dmul(av, ad, mask, None))
    return gval, gdot


def _t(d, T=False):
    if d is None:
        return None
    return d.T if T else d


def _neg(d):
    return None if d is None else -d


def _run(graph: ComputeGraph, params, tangent=None, want_grad=False):
    if graph.output is None:
        raise GraphConfigError("graph has no output node")
    params = _check_params(graph, params)
    if tangent is not None:
        tangent = _check_params(graph, tangent)
    vals, dots = _forward(graph, params, tangent)
    loss = vals[graph.output]
    if np.ndim(loss) != 0:
        raise GraphConfigError(f"output node has shape {np.shape(loss)}, expected scalar")
    if not want_grad:
        return float(loss), None, None
    gval, gdot = _backward(graph, params, tangent, vals, dots)
    return float(loss), gval, gdot


def eval_loss(graph: ComputeGraph, params) -> float:
    """Evaluate the scalar loss."""
    return _run(graph, params)[0]


def grad(graph: ComputeGraph, params) -> np.ndarray:
    """Gradient of the loss with respect to the flat parameter vector."""
    return _run(graph, params, want_grad=True)[1]


def value_and_grad(graph: ComputeGraph, params) -> tuple[float, np.ndarray]:
    loss, g, _ = _run(graph, params, want_grad=True)
    return loss, g


def hvp(graph: ComputeGraph, params, v) -> np.ndarray:
    """Exact Hessian-vector product via forward-over-reverse."""
    _, _, hv = _run(graph, params, tangent=v, want_grad=True)
    return hv
