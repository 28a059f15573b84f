"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A computation graph is built dynamically from `Node` objects; each op records
its parents and a local backward rule, and `Node.backward()` walks the graph
in reverse topological order accumulating exact gradients. Supports rank <= 2
arrays, which is all the encoder/head/baseline models need. Includes a
bias-corrected Adam optimizer and a finite-difference gradient checker used
as the correctness oracle for every backward rule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Node",
    "AdamState",
    "adam_step",
    "affine",
    "add_bias",
    "matmul",
    "relu",
    "softplus",
    "sigmoid",
    "exp",
    "log",
    "square",
    "softmax_rows",
    "row_sum",
    "sum_all",
    "mean_all",
    "bce_with_logits",
    "squared_error",
    "reparam_with_noise",
    "reparam_sample",
    "maximum_const",
    "bow_loglik",
    "linear_head",
    "sigmoid_values",
    "grad_check",
    "GradCheckResult",
    "GradCheckReport",
    "standard_op_checks",
]


def _as_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim > 2:
        raise ValueError(f"rank {arr.ndim} arrays are not supported")
    return arr


class Node:
    """One value in the computation graph.

    `values` is a float64 array (scalars are 0-d). After `backward()` on a
    scalar node, every node reachable from it carries a `grad` of the same
    shape as its `values`; nodes that do not participate keep zero gradient.
    """

    __slots__ = ("values", "grad", "_parents", "_backward")

    def __init__(self, values, parents=(), backward=None):
        self.values = _as_array(values)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def backward(self) -> None:
        """Seed this (scalar) node with gradient 1 and propagate to all parents."""
        if self.values.size != 1:
            raise ValueError("backward() requires a scalar node")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        for node in order:
            node.grad = np.zeros_like(node.values)
        self.grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # Scalar-or-node arithmetic keeps loss-building code readable.
    def __add__(self, other):
        if isinstance(other, Node):
            return add(self, other)
        return _scalar_affine(self, 1.0, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Node):
            return add(self, _scalar_affine(other, -1.0, 0.0))
        return _scalar_affine(self, 1.0, -float(other))

    def __rsub__(self, other):
        return _scalar_affine(self, -1.0, float(other))

    def __mul__(self, other):
        if isinstance(other, Node):
            return mul(self, other)
        return _scalar_affine(self, float(other), 0.0)

    __rmul__ = __mul__

    def __neg__(self):
        return _scalar_affine(self, -1.0, 0.0)

    def __repr__(self):
        return f"Node(shape={self.values.shape})"


def _scalar_affine(a: Node, scale: float, shift: float) -> Node:
    out = Node(a.values * scale + shift, (a,))

    def backward(grad):
        a.grad += grad * scale

    out._backward = backward
    return out


def add(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Node(a.values + b.values, (a, b))

    def backward(grad):
        a.grad += grad
        b.grad += grad

    out._backward = backward
    return out


def mul(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Node(a.values * b.values, (a, b))

    def backward(grad):
        a.grad += grad * b.values
        b.grad += grad * a.values

    out._backward = backward
    return out


def matmul(a: Node, b: Node) -> Node:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = Node(a.values @ b.values, (a, b))

    def backward(grad):
        a.grad += grad @ b.values.T
        b.grad += a.values.T @ grad

    out._backward = backward
    return out


def add_bias(x: Node, b: Node) -> Node:
    """x [n, m] plus a row vector b [m], broadcast over rows."""
    if x.values.ndim != 2 or b.values.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ValueError(f"add_bias shape mismatch: {x.shape} + {b.shape}")
    out = Node(x.values + b.values, (x, b))

    def backward(grad):
        x.grad += grad
        b.grad += grad.sum(axis=0)

    out._backward = backward
    return out


def affine(x: Node, w: Node, b: Node) -> Node:
    """Forward x @ w + b with exact gradients to all three inputs."""
    if (
        x.values.ndim != 2
        or w.values.ndim != 2
        or b.values.ndim != 1
        or x.shape[1] != w.shape[0]
        or w.shape[1] != b.shape[0]
    ):
        raise ValueError(f"affine shape mismatch: {x.shape} @ {w.shape} + {b.shape}")
    out = Node(x.values @ w.values + b.values, (x, w, b))

    def backward(grad):
        x.grad += grad @ w.values.T
        w.grad += x.values.T @ grad
        b.grad += grad.sum(axis=0)

    out._backward = backward
    return out


def relu(a: Node) -> Node:
    out = Node(np.maximum(a.values, 0.0), (a,))

    def backward(grad):
        a.grad += grad * (a.values > 0.0)

    out._backward = backward
    return out


def softplus(a: Node) -> Node:
    # log(1 + e^x) computed without overflow for large |x|
    vals = np.maximum(a.values, 0.0) + np.log1p(np.exp(-np.abs(a.values)))
    out = Node(vals, (a,))

    def backward(grad):
        a.grad += grad * sigmoid_values(a.values)

    out._backward = backward
    return out


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    """Numerically stable sigmoid on raw arrays."""
    out = np.empty_like(np.asarray(x, dtype=np.float64))
    pos = np.asarray(x) >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)[pos]))
    ex = np.exp(np.asarray(x, dtype=np.float64)[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Node) -> Node:
    s = sigmoid_values(a.values)
    out = Node(s, (a,))

    def backward(grad):
        a.grad += grad * s * (1.0 - s)

    out._backward = backward
    return out


def exp(a: Node) -> Node:
    vals = np.exp(a.values)
    out = Node(vals, (a,))

    def backward(grad):
        a.grad += grad * vals

    out._backward = backward
    return out


def log(a: Node) -> Node:
    if np.any(a.values <= 0.0):
        raise ValueError("log of nonpositive value")
    out = Node(np.log(a.values), (a,))

    def backward(grad):
        a.grad += grad / a.values

    out._backward = backward
    return out


def square(a: Node) -> Node:
    out = Node(a.values * a.values, (a,))

    def backward(grad):
        a.grad += grad * 2.0 * a.values

    out._backward = backward
    return out


def softmax_rows(a: Node) -> Node:
    """Row-wise softmax; stable via max subtraction. 1-d input is one row."""
    x = a.values
    if x.ndim == 1:
        shifted = x - x.max()
        e = np.exp(shifted)
        s = e / e.sum()
    else:
        shifted = x - x.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        s = e / e.sum(axis=1, keepdims=True)
    out = Node(s, (a,))

    def backward(grad):
        if s.ndim == 1:
            dot = float(np.dot(grad, s))
            a.grad += (grad - dot) * s
        else:
            dot = (grad * s).sum(axis=1, keepdims=True)
            a.grad += (grad - dot) * s

    out._backward = backward
    return out


def row_sum(a: Node) -> Node:
    if a.values.ndim != 2:
        raise ValueError("row_sum expects a rank-2 input")
    out = Node(a.values.sum(axis=1), (a,))

    def backward(grad):
        a.grad += grad[:, None]

    out._backward = backward
    return out


def sum_all(a: Node) -> Node:
    out = Node(a.values.sum(), (a,))

    def backward(grad):
        a.grad += grad

    out._backward = backward
    return out


def mean_all(a: Node) -> Node:
    n = a.values.size
    out = Node(a.values.sum() / n, (a,))

    def backward(grad):
        a.grad += grad / n

    out._backward = backward
    return out


def bce_with_logits(logits: Node, targets) -> Node:
    """Elementwise binary cross-entropy from logits, fused for stability.

    ce(z, t) = max(z, 0) - z*t + log(1 + e^-|z|); targets must be 0/1.
    """
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != logits.shape:
        raise ValueError(f"bce shape mismatch: {logits.shape} vs {t.shape}")
    if np.any((t != 0.0) & (t != 1.0)):
        raise ValueError("cross-entropy target outside {0,1}")
    z = logits.values
    vals = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = Node(vals, (logits,))

    def backward(grad):
        logits.grad += grad * (sigmoid_values(z) - t)

    out._backward = backward
    return out


def squared_error(pred: Node, targets) -> Node:
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != pred.shape:
        raise ValueError(f"squared_error shape mismatch: {pred.shape} vs {t.shape}")
    diff = pred.values - t
    out = Node(diff * diff, (pred,))

    def backward(grad):
        pred.grad += grad * 2.0 * diff

    out._backward = backward
    return out


def reparam_with_noise(mu: Node, sigma: Node, eps) -> Node:
    """mu + sigma * eps for a fixed noise array (the deterministic core)."""
    e = np.asarray(eps, dtype=np.float64)
    if mu.shape != sigma.shape or mu.shape != e.shape:
        raise ValueError("reparam shape mismatch")
    if np.any(sigma.values <= 0.0):
        raise ValueError("nonpositive sigma")
    out = Node(mu.values + sigma.values * e, (mu, sigma))

    def backward(grad):
        mu.grad += grad
        sigma.grad += grad * e

    out._backward = backward
    return out


def reparam_sample(mu: Node, sigma: Node, rng: np.random.Generator) -> Node:
    """Draw eps ~ N(0, I) from the supplied rng and return mu + sigma * eps."""
    eps = rng.standard_normal(mu.shape)
    return reparam_with_noise(mu, sigma, eps)


ACTIVATIONS_AND_LOSSES = {
    "relu": lambda x: relu(x),
    "softplus": lambda x: softplus(x),
    "softmax": lambda x: softmax_rows(x),
    "sigmoid": lambda x: sigmoid(x),
    "binary-cross-entropy": lambda logits, targets: bce_with_logits(logits, targets),
    "squared-error": lambda pred, targets: squared_error(pred, targets),
    "log": lambda x: log(x),
}


def apply_op(kind: str, *inputs) -> Node:
    """Dispatch an activation or loss by name; see ACTIVATIONS_AND_LOSSES."""
    if kind not in ACTIVATIONS_AND_LOSSES:
        raise ValueError(f"unknown op kind {kind!r}")
    return ACTIVATIONS_AND_LOSSES[kind](*inputs)


def maximum_const(a: Node, floor: float) -> Node:
    out = Node(np.maximum(a.values, floor), (a,))

    def backward(grad):
        a.grad += grad * (a.values > floor)

    out._backward = backward
    return out


def bow_loglik(mix: Node, counts) -> Node:
    """Per-row sum of counts * log(mix) over counted entries only.

    Raises if any counted entry has zero (or negative) probability; entries
    with zero count never touch log, so empty rows contribute exactly 0.
    """
    c = np.asarray(counts, dtype=np.float64)
    if c.shape != mix.shape:
        raise ValueError(f"bow_loglik shape mismatch: {mix.shape} vs {c.shape}")
    counted = c > 0.0
    if np.any(mix.values[counted] <= 0.0):
        raise ValueError("zero-probability token")
    logs = np.zeros_like(c)
    logs[counted] = np.log(mix.values[counted])
    out = Node((c * logs).sum(axis=1), (mix,))

    def backward(grad):
        ratio = np.where(counted, c / np.where(counted, mix.values, 1.0), 0.0)
        mix.grad += grad[:, None] * ratio

    out._backward = backward
    return out


def linear_head(x: Node, w: Node) -> Node:
    """x [n, k] through a linear head w [k+1] (last entry is the intercept)."""
    if x.values.ndim != 2 or w.values.ndim != 1 or w.shape[0] != x.shape[1] + 1:
        raise ValueError(f"linear_head shape mismatch: {x.shape} with {w.shape}")
    out = Node(x.values @ w.values[:-1] + w.values[-1], (x, w))

    def backward(grad):
        x.grad += grad[:, None] * w.values[:-1]
        w.grad[:-1] += x.values.T @ grad
        w.grad[-1] += grad.sum()

    out._backward = backward
    return out


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter first/second moment accumulators plus hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected Adam update; mutates params/state and returns them."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter '{name}'")
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    n_checked: int
    n_flagged: int


@dataclass
class GradCheckReport:
    results: dict
    tolerance: float

    @property
    def max_rel_error(self) -> float:
        errors = [r.max_rel_error for r in self.results.values() if r.n_checked]
        return max(errors) if errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def _rel_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def grad_check(loss_fn, params: dict, epsilon: float = 1e-5, tolerance: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of loss_fn against central finite differences.

    loss_fn maps a dict of leaf Nodes (same keys as `params`) to a scalar Node
    and must be deterministic: every call with the same arrays reproduces the
    same value, so any internal noise has to be pre-drawn or re-seeded.

    Coordinates where the finite-difference estimate is itself unreliable are
    flagged and excluded from the pass/fail comparison. Two detectors run:
    estimates at epsilon and epsilon/2 disagreeing (curvature blowup), and
    the one-sided forward/backward differences disagreeing (a kink straddled
    symmetrically, where the central difference is stable but meaningless).
    """
    leaves = {name: Node(np.array(p, dtype=np.float64)) for name, p in params.items()}
    out = loss_fn(leaves)
    out.backward()
    # leaves that never entered the graph have zero gradient by definition
    analytic = {
        name: (leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.values))
        for name, leaf in leaves.items()
    }

    base = {name: np.array(p, dtype=np.float64) for name, p in params.items()}

    def eval_at(arrays) -> float:
        nodes = {name: Node(a) for name, a in arrays.items()}
        return float(loss_fn(nodes).values)

    f0 = eval_at(base)
    results = {}
    for name, p in base.items():
        max_err = 0.0
        n_checked = 0
        n_flagged = 0
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            centrals = []
            one_sided = None
            for h in (epsilon, epsilon / 2.0):
                flat[i] = orig + h
                up = eval_at(base)
                flat[i] = orig - h
                down = eval_at(base)
                flat[i] = orig
                centrals.append((up - down) / (2.0 * h))
                if one_sided is None:
                    one_sided = ((up - f0) / h, (f0 - down) / h)
            fwd, bwd = one_sided
            kinked = abs(fwd - bwd) > 0.1 * max(abs(fwd), abs(bwd), 1.0)
            if kinked or _rel_error(centrals[0], centrals[1]) > 0.05:
                n_flagged += 1
                continue
            err = _rel_error(centrals[1], float(analytic[name].reshape(-1)[i]))
            max_err = max(max_err, err)
            n_checked += 1
        results[name] = GradCheckResult(name, max_err, n_checked, n_flagged)
    return GradCheckReport(results, tolerance)


def _away_from_zero(x: np.ndarray, margin: float = 0.1) -> np.ndarray:
    sign = np.where(x >= 0.0, 1.0, -1.0)
    return np.where(np.abs(x) < margin, sign * (margin + np.abs(x)), x)


def standard_op_checks(seed: int = 0, instances: int = 3, tolerance: float = 1e-4):
    """Run grad_check over every registered backward rule on random shapes.

    Returns a list of (rule name, GradCheckReport). Shapes stay <= 8 per
    dimension; relu/maximum inputs are perturbed away from their kinks.
    """
    rng = np.random.default_rng(seed)
    reports = []

    def shapes():
        n = int(rng.integers(1, 8))
        m = int(rng.integers(1, 8))
        k = int(rng.integers(1, 8))
        return n, m, k

    def run(name, builder, arrays):
        reports.append((name, grad_check(builder, arrays, tolerance=tolerance)))

    for _ in range(instances):
        n, m, k = shapes()
        run(
            "affine",
            lambda lv: sum_all(affine(lv["x"], lv["w"], lv["b"])),
            {"x": rng.normal(size=(n, m)), "w": rng.normal(size=(m, k)), "b": rng.normal(size=k)},
        )
        run(
            "matmul",
            lambda lv: sum_all(square(matmul(lv["a"], lv["b"]))),
            {"a": rng.normal(size=(n, m)), "b": rng.normal(size=(m, k))},
        )
        run(
            "add_mul",
            lambda lv: sum_all(mul(add(lv["a"], lv["b"]), lv["b"])),
            {"a": rng.normal(size=(n, m)), "b": rng.normal(size=(n, m))},
        )
        run(
            "add_bias",
            lambda lv: sum_all(square(add_bias(lv["x"], lv["b"]))),
            {"x": rng.normal(size=(n, m)), "b": rng.normal(size=m)},
        )
        run(
            "relu",
            lambda lv: sum_all(relu(lv["x"])),
            {"x": _away_from_zero(rng.normal(size=(n, m)))},
        )
        run("softplus", lambda lv: sum_all(softplus(lv["x"])), {"x": rng.normal(size=(n, m))})
        run(
            "sigmoid",
            lambda lv: sum_all(square(sigmoid(lv["x"]))),
            {"x": rng.normal(size=(n, m))},
        )
        run("exp", lambda lv: sum_all(exp(lv["x"])), {"x": rng.normal(size=(n, m))})
        run(
            "log",
            lambda lv: sum_all(log(lv["x"])),
            {"x": rng.uniform(0.2, 3.0, size=(n, m))},
        )
        run("square", lambda lv: mean_all(square(lv["x"])), {"x": rng.normal(size=(n, m))})
        run(
            "softmax",
            lambda lv: sum_all(square(softmax_rows(lv["x"]))),
            {"x": rng.normal(size=(n, k))},
        )
        run("row_sum", lambda lv: sum_all(square(row_sum(lv["x"]))), {"x": rng.normal(size=(n, m))})

        t_bin = rng.integers(0, 2, size=n).astype(float)
        run(
            "bce_with_logits",
            lambda lv, t=t_bin: sum_all(bce_with_logits(row_sum(lv["z"]), t)),
            {"z": rng.normal(size=(n, m))},
        )
        y = rng.normal(size=n)
        run(
            "squared_error",
            lambda lv, y=y: sum_all(squared_error(row_sum(lv["p"]), y)),
            {"p": rng.normal(size=(n, m))},
        )
        eps = rng.standard_normal((n, k))
        run(
            "reparam",
            lambda lv, e=eps: sum_all(
                square(reparam_with_noise(lv["mu"], exp(lv["ls"]), e))
            ),
            {"mu": rng.normal(size=(n, k)), "ls": rng.normal(size=(n, k)) * 0.3},
        )
        run(
            "maximum_const",
            lambda lv: sum_all(maximum_const(lv["x"], 0.5)),
            {"x": _away_from_zero(rng.normal(size=(n, m)) - 0.5) + 0.5},
        )
        counts = rng.integers(0, 4, size=(n, m)).astype(float)
        run(
            "bow_loglik",
            lambda lv, c=counts: sum_all(bow_loglik(softmax_rows(lv["x"]), c)),
            {"x": rng.normal(size=(n, m))},
        )
        run(
            "linear_head",
            lambda lv: sum_all(square(linear_head(lv["x"], lv["w"]))),
            {"x": rng.normal(size=(n, k)), "w": rng.normal(size=k + 1)},
        )
    return reports
