"""Reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built eagerly: every operation returns a new :class:`Tensor`
that records its parents and a closure propagating the output adjoint
back to them.  ``backward`` walks the recorded trace in reverse
topological order and accumulates gradients into every reachable
:class:`Parameter`.  The trace is rebuilt on every forward pass.

Primitive operations: add, subtract, multiply (elementwise), matmul,
concatenate, sigmoid, tanh, relu, and a weighted mean-squared-error
reduction.  A few structural primitives (gather, reduce_sum, transpose,
reshape) exist so batched sequence models can be expressed without
per-element Python loops; they move or sum values but introduce no new
nonlinearities.
"""

from __future__ import annotations

import numpy as np

# When enabled, every primitive verifies its output is finite. Off by
# default: the checks cost one pass over each array.
CHECK_FINITE = False


# Evaluation trace: tensors are appended in creation order, which is a
# topological order of every graph built since the last clear_tape().
_TAPE: list = []
_TAPE_ENABLED = True


def clear_tape():
    """Drop the recorded trace.  Gradients cannot flow through tensors
    created before the clear; training loops call this once per step."""
    _TAPE.clear()


class no_tape:
    """Context manager disabling trace recording (pure inference)."""

    def __enter__(self):
        global _TAPE_ENABLED
        self._saved = _TAPE_ENABLED
        _TAPE_ENABLED = False

    def __exit__(self, *exc):
        global _TAPE_ENABLED
        _TAPE_ENABLED = self._saved
        return False


class Tensor:
    """Dense float64 array plus provenance for reverse-mode backward."""

    __slots__ = ("values", "grad", "parents", "_vjp", "__weakref__")

    def __init__(self, values, parents=(), vjp=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        if _TAPE_ENABLED:
            self.parents = parents
            self._vjp = vjp
            if vjp is not None:
                _TAPE.append(self)
        else:
            self.parents = ()
            self._vjp = None
        if CHECK_FINITE and not np.all(np.isfinite(self.values)):
            raise FloatingPointError("tensor holds non-finite values")

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.values.shape})"

    # Operator sugar; the module-level functions are the primitives.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        return multiply(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Trainable leaf tensor with a persistent, accumulating gradient."""

    __slots__ = ("identifier",)

    def __init__(self, values, identifier: str):
        super().__init__(values)
        self.identifier = identifier
        self.grad = np.zeros_like(self.values)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.identifier!r}, shape={self.values.shape})"


def constant(values) -> Tensor:
    """Wrap an array as a non-trainable leaf."""
    return Tensor(values)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(name: str, a: np.ndarray, b: np.ndarray):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(
            f"{name}: shapes {a.shape} and {b.shape} are not broadcastable"
        ) from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a.values, b.values)
    out_values = a.values + b.values

    def vjp(g):
        return _unbroadcast(g, a.values.shape), _unbroadcast(g, b.values.shape)

    return Tensor(out_values, (a, b), vjp)


def subtract(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("subtract", a.values, b.values)
    out_values = a.values - b.values

    def vjp(g):
        return _unbroadcast(g, a.values.shape), -_unbroadcast(g, b.values.shape)

    return Tensor(out_values, (a, b), vjp)


def multiply(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("elementwise-multiply", a.values, b.values)
    av, bv = a.values, b.values
    out_values = av * bv

    def vjp(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return Tensor(out_values, (a, b), vjp)


def matmul(a, b) -> Tensor:
    """Matrix multiply with numpy stacking/broadcast semantics."""
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.values, b.values
    try:
        out_values = np.matmul(av, bv)
    except ValueError:
        raise ValueError(
            f"matrix-multiply: shapes {av.shape} and {bv.shape} do not align"
        ) from None

    def vjp(g):
        if bv.ndim == 1:
            ga = np.multiply.outer(g, bv) if g.ndim else g * bv
            gb = np.tensordot(g, av, axes=max(g.ndim, 0))
            return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)
        if av.ndim == 1:
            ga = np.matmul(g[..., None, :], np.swapaxes(bv, -1, -2))[..., 0, :]
            gb = np.matmul(av[:, None], g[..., None, :])
            return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return Tensor(out_values, (a, b), vjp)


def concatenate(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concatenate: empty input list")
    try:
        out_values = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.values.shape for t in tensors]
        raise ValueError(f"concatenate: incompatible shapes {shapes}") from None
    sizes = [t.values.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out_values, tuple(tensors), vjp)


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    av = a.values
    out_values = np.empty_like(av)
    pos = av >= 0
    out_values[pos] = 1.0 / (1.0 + np.exp(-av[pos]))
    ez = np.exp(av[~pos])
    out_values[~pos] = ez / (1.0 + ez)

    def vjp(g):
        return (g * out_values * (1.0 - out_values),)

    return Tensor(out_values, (a,), vjp)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_values = np.tanh(a.values)

    def vjp(g):
        return (g * (1.0 - out_values * out_values),)

    return Tensor(out_values, (a,), vjp)


def relu(a) -> Tensor:
    """max(0, x); the subgradient at the kink is 0."""
    a = _as_tensor(a)
    av = a.values
    out_values = np.maximum(av, 0.0)
    mask = av > 0.0

    def vjp(g):
        return (g * mask,)

    return Tensor(out_values, (a,), vjp)


def mse(pred, target, weights=None) -> Tensor:
    """Weighted mean squared error reduced to a scalar.

    ``weights`` masks cells: the result is sum(w*(p-t)^2)/sum(w).  With no
    weights every cell counts once.  Raises if the effective count is 0.
    """
    pred, target = _as_tensor(pred), _as_tensor(target)
    _check_broadcast("mean-squared-error", pred.values, target.values)
    diff = pred.values - target.values
    if weights is None:
        total = float(diff.size)
        wdiff = diff
    else:
        w = np.asarray(weights, dtype=np.float64)
        _check_broadcast("mean-squared-error", diff, w)
        total = float(np.broadcast_to(w, diff.shape).sum())
        wdiff = diff * w
    if total <= 0.0:
        raise ValueError("mean-squared-error: no cells selected")
    out_values = np.asarray(float(np.sum(wdiff * diff)) / total)

    def vjp(g):
        scale = 2.0 * float(g) / total
        gd = scale * wdiff
        return (_unbroadcast(gd, pred.values.shape),
                _unbroadcast(-gd, target.values.shape))

    return Tensor(out_values, (pred, target), vjp)


# ---------------------------------------------------------------------------
# structural primitives


def gather(a, indices, axis: int = 0) -> Tensor:
    """Index-select along ``axis`` with constant integer indices."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out_values = np.take(a.values, idx, axis=axis)
    # unique indices admit plain fancy assignment in the adjoint; repeated
    # ones are segment-summed over a sorted permutation
    unique = len(np.unique(idx)) == idx.size
    if not unique:
        order = np.argsort(idx, kind="stable")
        sorted_idx = idx[order]
        starts = np.concatenate([[0], np.nonzero(np.diff(sorted_idx))[0] + 1])
        targets = sorted_idx[starts]

    def vjp(g):
        ga = np.zeros_like(a.values)
        ga_m = ga if axis == 0 else np.moveaxis(ga, axis, 0)
        g_m = g if axis == 0 else np.moveaxis(g, axis, 0)
        if unique:
            ga_m[idx] = g_m
        else:
            ga_m[targets] = np.add.reduceat(np.take(g_m, order, axis=0),
                                            starts, axis=0)
        return (ga,)

    return Tensor(out_values, (a,), vjp)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out_values = a.values.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.values.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.values.shape).copy(),)

    return Tensor(out_values, (a,), vjp)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    out_values = np.transpose(a.values, axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return Tensor(out_values, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    out_values = a.values.reshape(shape)
    old_shape = a.values.shape

    def vjp(g):
        return (g.reshape(old_shape),)

    return Tensor(out_values, (a,), vjp)


def fused(values: np.ndarray, parents, vjp) -> Tensor:
    """Record a composite operation with a hand-written adjoint."""
    return Tensor(values, tuple(parents), vjp)


# ---------------------------------------------------------------------------
# compositions (primitive graphs, no new adjoint rules)


def negate(a) -> Tensor:
    return subtract(constant(0.0), a)


def absolute(a) -> Tensor:
    """|x| = relu(x) + relu(-x); subgradient 0 at x = 0."""
    return add(relu(a), relu(negate(a)))


def polyval(coeffs, x) -> Tensor:
    """Evaluate a polynomial (highest degree first) via Horner's scheme."""
    out = constant(np.full(np.shape(_as_tensor(x).values), coeffs[0]))
    for c in coeffs[1:]:
        out = add(multiply(out, x), constant(c))
    return out


# ---------------------------------------------------------------------------
# backward


def backward(out: Tensor):
    """Accumulate d(out)/d(param) into every reachable Parameter's grad.

    ``out`` must be scalar (size 1).  Unreachable Parameters keep their
    existing (zero-initialized) gradients.  Calling backward twice
    without zeroing adds the gradients again.

    The walk runs over the recorded trace in reverse creation order,
    which is a valid reverse-topological order; nodes not contributing
    to ``out`` are skipped via the adjoint table.
    """
    if out.values.size != 1:
        raise ValueError(f"backward: output must be scalar, got shape {out.values.shape}")
    adjoint: dict[Tensor, np.ndarray] = {out: np.ones_like(out.values)}
    if out._vjp is not None:
        try:
            stop = _TAPE.index(out, max(0, len(_TAPE) - 1))
        except ValueError:
            stop = _TAPE.index(out)
        for node in reversed(_TAPE[:stop + 1]):
            g = adjoint.pop(node, None)
            if g is None:
                continue
            parent_grads = node._vjp(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                if parent in adjoint:
                    # never in place: vjps may alias one buffer to several
                    # parents (add returns its adjoint twice)
                    adjoint[parent] = adjoint[parent] + pg
                else:
                    adjoint[parent] = pg
    for leaf, g in adjoint.items():
        if isinstance(leaf, Parameter):
            leaf.grad += g


# ---------------------------------------------------------------------------
# finite-difference checking


class GradCheckReport:
    """Result of comparing analytic gradients against central differences."""

    def __init__(self, max_rel_error: float, worst_parameter: str | None,
                 per_parameter: dict, tolerance: float):
        self.max_rel_error = max_rel_error
        self.worst_parameter = worst_parameter
        self.per_parameter = per_parameter
        self.tolerance = tolerance

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __repr__(self):
        return (f"GradCheckReport(max_rel_error={self.max_rel_error:.3e}, "
                f"worst={self.worst_parameter!r}, passed={self.passed})")


def grad_check(loss_fn, parameters, epsilon: float = 1e-5,
               tolerance: float = 1e-4,
               coord_limit: int | None = None) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` is a zero-argument callable returning a scalar Tensor and
    must be re-evaluable.  Relative error per coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, floor) where the
    floor is one thousandth of the parameter's largest gradient entry
    (at least 1e-8), so coordinates far below the parameter's gradient
    scale are judged in absolute terms rather than drowned in
    finite-difference roundoff.

    ``coord_limit`` caps the number of probed coordinates per parameter
    (a deterministic sample seeded by the parameter name); None checks
    every coordinate.
    """
    if epsilon <= 0:
        raise ValueError("grad_check: epsilon must be positive")
    parameters = list(parameters)
    if not parameters:
        return GradCheckReport(0.0, None, {}, tolerance)

    for p in parameters:
        p.zero_grad()
    backward(loss_fn())
    analytic = {p.identifier: p.grad.copy() for p in parameters}

    per_parameter = {}
    max_rel = 0.0
    worst = None
    for p in parameters:
        flat = p.values.reshape(-1)
        if coord_limit is not None and flat.size > coord_limit:
            rng = np.random.default_rng(
                abs(hash(p.identifier)) % (2 ** 32))
            coords = np.sort(rng.choice(flat.size, coord_limit,
                                        replace=False))
        else:
            coords = np.arange(flat.size)
        num = np.zeros(len(coords))
        with no_tape():  # difference quotients need values only
            for out_idx, i in enumerate(coords):
                original = flat[i]
                h = epsilon * max(1.0, abs(original))
                flat[i] = original + h
                up = loss_fn().item()
                flat[i] = original - h
                down = loss_fn().item()
                flat[i] = original
                num[out_idx] = (up - down) / (2.0 * h)
        ana = analytic[p.identifier].reshape(-1)[coords]
        scale = max(np.abs(ana).max(initial=0.0),
                    np.abs(num).max(initial=0.0))
        floor = max(1e-3 * scale, 1e-8)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
        rel = np.abs(ana - num) / denom
        worst_here = float(rel.max()) if rel.size else 0.0
        per_parameter[p.identifier] = worst_here
        if worst_here > max_rel:
            max_rel = worst_here
            worst = p.identifier
    return GradCheckReport(max_rel, worst, per_parameter, tolerance)
