"""Reverse-mode automatic differentiation on numpy arrays.

A DiffBuffer wraps a float64 ndarray together with a gradient accumulator.
Operations build a DAG eagerly (values are computed immediately); calling
``backward`` on a scalar buffer walks the graph in reverse topological order
and accumulates vector-Jacobian products into every buffer that requires
gradients. Nodes whose inputs all have requires_grad=False record nothing,
so forward-only code pays almost no overhead.

Design notes:
  - float64 throughout; gradients of L1-style kinks use subgradient 0 at 0.
  - min/max route gradients to the first argument on exact ties, which keeps
    two backward passes over the same graph bit-identical.
  - the scatter (splat) and gather (bilinear sample) primitives have
    hand-derived adjoints backed by the kernels package, differentiable in
    both the value and the coordinate arguments.

Every primitive registers itself in OP_REGISTRY with its vjp, so coverage
of adjoints is checkable by enumeration.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericFault, ValidationError
from . import kernels

# op name -> True once a vjp is registered; enumerated by the coverage test
OP_REGISTRY: dict[str, bool] = {}


def _register(name):
    OP_REGISTRY[name] = True
    return name


class DiffBuffer:
    """A numeric grid plus a same-shape gradient accumulator."""

    __slots__ = ("values", "grad", "requires_grad", "op", "_parents", "_vjp")

    # keep numpy from absorbing mixed expressions; ndarray <op> DiffBuffer
    # then dispatches to the reflected operator below
    __array_ufunc__ = None

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return DiffBuffer(self.values)

    def item(self):
        return float(self.values)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, e):
        return pow_const(self, e)

    def __getitem__(self, key):
        return slice_(self, key)

    def __repr__(self):
        return f"DiffBuffer(shape={self.values.shape}, requires_grad={self.requires_grad}, op={self.op})"


def as_buffer(x):
    return x if isinstance(x, DiffBuffer) else DiffBuffer(x)


def _make(values, parents, vjp, op):
    """Create a node; record the graph only if some parent needs gradients."""
    out = DiffBuffer(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = as_buffer(a), as_buffer(b)
    return _make(
        a.values + b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        _register("add"),
    )


def sub(a, b):
    a, b = as_buffer(a), as_buffer(b)
    return _make(
        a.values - b.values,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        _register("sub"),
    )


def mul(a, b):
    a, b = as_buffer(a), as_buffer(b)
    return _make(
        a.values * b.values,
        (a, b),
        lambda g: (
            _unbroadcast(g * b.values, a.shape),
            _unbroadcast(g * a.values, b.shape),
        ),
        _register("mul"),
    )


def div(a, b):
    a, b = as_buffer(a), as_buffer(b)
    inv = 1.0 / b.values
    return _make(
        a.values * inv,
        (a, b),
        lambda g: (
            _unbroadcast(g * inv, a.shape),
            _unbroadcast(-g * a.values * inv * inv, b.shape),
        ),
        _register("div"),
    )


def pow_const(a, e):
    a = as_buffer(a)
    e = float(e)
    vals = a.values**e
    return _make(
        vals,
        (a,),
        lambda g: (g * e * a.values ** (e - 1.0),),
        _register("pow_const"),
    )


def sqrt(a):
    a = as_buffer(a)
    r = np.sqrt(a.values)
    return _make(r, (a,), lambda g: (g * 0.5 / r,), _register("sqrt"))


def exp(a):
    a = as_buffer(a)
    r = np.exp(a.values)
    return _make(r, (a,), lambda g: (g * r,), _register("exp"))


def log(a):
    a = as_buffer(a)
    return _make(np.log(a.values), (a,), lambda g: (g / a.values,), _register("log"))


def tanh(a):
    a = as_buffer(a)
    r = np.tanh(a.values)
    return _make(r, (a,), lambda g: (g * (1.0 - r * r),), _register("tanh"))


def sigmoid(a):
    a = as_buffer(a)
    # stable for both tails
    v = a.values
    r = np.empty_like(v)
    pos = v >= 0
    r[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    r[~pos] = ev / (1.0 + ev)
    return _make(r, (a,), lambda g: (g * r * (1.0 - r),), _register("sigmoid"))


def absolute(a):
    """|a| with subgradient 0 at 0."""
    a = as_buffer(a)
    return _make(
        np.abs(a.values),
        (a,),
        lambda g: (g * np.sign(a.values),),
        _register("abs"),
    )


def clip(a, lo, hi):
    """Clamp to constant bounds; gradient is zero outside [lo, hi]."""
    a = as_buffer(a)
    inside = (a.values >= lo) & (a.values <= hi)
    return _make(
        np.clip(a.values, lo, hi),
        (a,),
        lambda g: (g * inside,),
        _register("clip"),
    )


def minimum(a, b):
    """Elementwise min; ties route the gradient to `a`."""
    a, b = as_buffer(a), as_buffer(b)
    take_a = a.values <= b.values
    return _make(
        np.where(take_a, a.values, b.values),
        (a, b),
        lambda g: (
            _unbroadcast(g * take_a, a.shape),
            _unbroadcast(g * ~take_a, b.shape),
        ),
        _register("minimum"),
    )


def maximum(a, b):
    """Elementwise max; ties route the gradient to `a`."""
    a, b = as_buffer(a), as_buffer(b)
    take_a = a.values >= b.values
    return _make(
        np.where(take_a, a.values, b.values),
        (a, b),
        lambda g: (
            _unbroadcast(g * take_a, a.shape),
            _unbroadcast(g * ~take_a, b.shape),
        ),
        _register("maximum"),
    )


def where(cond, a, b):
    """Select by a constant boolean mask."""
    cond = np.asarray(cond, dtype=bool)
    a, b = as_buffer(a), as_buffer(b)
    return _make(
        np.where(cond, a.values, b.values),
        (a, b),
        lambda g: (
            _unbroadcast(g * cond, a.shape),
            _unbroadcast(g * ~cond, b.shape),
        ),
        _register("where"),
    )


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = as_buffer(a)
    vals = a.values.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(vals, (a,), vjp, _register("sum"))


def mean_(a):
    a = as_buffer(a)
    return mul(sum_(a), 1.0 / a.size)


def reshape(a, shape):
    a = as_buffer(a)
    return _make(
        a.values.reshape(shape),
        (a,),
        lambda g: (g.reshape(a.shape),),
        _register("reshape"),
    )


def stack(bufs, axis=-1):
    bufs = [as_buffer(b) for b in bufs]
    vals = np.stack([b.values for b in bufs], axis=axis)

    def vjp(g):
        parts = np.split(g, len(bufs), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in parts)

    return _make(vals, tuple(bufs), vjp, _register("stack"))


def slice_(a, key):
    """Static indexing/slicing (key must be index/slice constants)."""
    a = as_buffer(a)
    parts = key if isinstance(key, tuple) else (key,)
    basic = all(isinstance(p, (int, slice, type(None), type(Ellipsis))) for p in parts)

    def vjp(g):
        out = np.zeros(a.shape)
        if basic:  # basic indexing never aliases, += is safe and fast
            out[key] += g
        else:
            np.add.at(out, key, g)
        return (out,)

    return _make(a.values[key], (a,), vjp, _register("slice"))


def take0(a, idx):
    """Gather rows along axis 0 with a constant integer index array."""
    a = as_buffer(a)
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        out = np.zeros(a.shape)
        np.add.at(out, idx.reshape(-1), g.reshape(idx.size, *a.shape[1:]))
        return (out,)

    return _make(a.values[idx], (a,), vjp, _register("take0"))


def scatter_add0(src, idx, length):
    """out[idx[m]] += src[m]; the adjoint of take0."""
    src = as_buffer(src)
    idx = np.asarray(idx, dtype=np.int64)
    vals = np.zeros((length,) + src.shape[1:])
    np.add.at(vals, idx, src.values)
    return _make(vals, (src,), lambda g: (g[idx],), _register("scatter_add0"))


def affine_rows(x, mat, shift=None):
    """y = x @ mat.T (+ shift) with constant mat/shift; rows are vectors."""
    x = as_buffer(x)
    mat = np.asarray(mat, dtype=np.float64)
    vals = x.values @ mat.T
    if shift is not None:
        vals = vals + np.asarray(shift, dtype=np.float64)
    return _make(vals, (x,), lambda g: (g @ mat,), _register("affine_rows"))


def concat(bufs, axis=0):
    bufs = [as_buffer(b) for b in bufs]
    vals = np.concatenate([b.values for b in bufs], axis=axis)
    sizes = [b.shape[axis] for b in bufs]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(vals, tuple(bufs), vjp, _register("concat"))


# ---------------------------------------------------------------------------
# kernel-backed primitives (hand-derived adjoints)
# ---------------------------------------------------------------------------

class SplatDiagnostics:
    """Out-of-bounds mass dropped by a splat call (clip-and-count policy)."""

    __slots__ = ("clipped_mass", "clipped_count")

    def __init__(self, clipped_mass=0.0, clipped_count=0):
        self.clipped_mass = clipped_mass
        self.clipped_count = clipped_count


def splat2d(values, u, v, height, width, diagnostics=None):
    """Bilinear forward-map (scatter): values (M,C) -> grid (height,width,C).

    (u, v) are texel coordinates (u = column, v = row); each source row
    deposits onto the 4 surrounding texels with bilinear weights summing
    to 1. Out-of-bounds corners are dropped and counted.
    Differentiable in values, u and v.
    """
    values, u, v = as_buffer(values), as_buffer(u), as_buffer(v)
    out, mass, count = kernels.splat_forward(
        values.values, u.values, v.values, height, width
    )
    if diagnostics is not None:
        diagnostics.clipped_mass += mass
        diagnostics.clipped_count += count

    def vjp(g):
        return kernels.splat_backward(
            values.values, u.values, v.values, np.ascontiguousarray(g)
        )

    return _make(out, (values, u, v), vjp, _register("splat2d"))


def sample2d(tex, u, v):
    """Bilinear gather: tex (H,W,C) sampled at texel coords (u,v) -> (M,C).

    Coordinates are clamped to the texture (clamp-to-edge); the coordinate
    gradient is zero in the clamped region. Differentiable in tex, u, v.
    """
    tex, u, v = as_buffer(tex), as_buffer(u), as_buffer(v)
    out = kernels.sample_forward(tex.values, u.values, v.values)

    def vjp(g):
        return kernels.sample_backward(
            tex.values, u.values, v.values, np.ascontiguousarray(g)
        )

    return _make(out, (tex, u, v), vjp, _register("sample2d"))


def conv2d_same(x, kernel):
    """2D convolution with a constant kernel, zero padding, per channel."""
    from scipy.ndimage import convolve

    x = as_buffer(x)
    kernel = np.asarray(kernel, dtype=np.float64)
    flipped = kernel[::-1, ::-1]

    def apply_kernel(arr, k):
        if arr.ndim == 2:
            return convolve(arr, k, mode="constant", cval=0.0)
        return np.stack(
            [convolve(arr[..., c], k, mode="constant", cval=0.0)
             for c in range(arr.shape[-1])],
            axis=-1,
        )

    return _make(
        apply_kernel(x.values, kernel),
        (x,),
        lambda g: (apply_kernel(g, flipped),),
        _register("conv2d_same"),
    )


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss):
    """Populate .grad on every requires_grad buffer reachable from `loss`.

    Repeated calls without zero_grad accumulate. Raises ValidationError for
    non-scalar losses and NumericFault if any produced gradient is non-finite.
    """
    loss = as_buffer(loss)
    if loss.size != 1:
        raise ValidationError(
            f"backward requires a scalar loss, got shape {loss.shape}"
        )
    if not loss.requires_grad:
        return

    # iterative topo sort (graphs can be deep)
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            topo.append(node)
            continue
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.values)}
    leaves = []
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            # leaf input: persist (and accumulate) the gradient
            if node.grad is None:
                node.grad = np.array(g, copy=True)
            else:
                node.grad = node.grad + g
            leaves.append(node)
            continue
        parent_grads = node._vjp(g)
        for p, pg in zip(node._parents, parent_grads):
            if not p.requires_grad or pg is None:
                continue
            acc = grads.get(id(p))
            grads[id(p)] = pg if acc is None else acc + pg
    for node in leaves:
        if not np.all(np.isfinite(node.grad)):
            raise NumericFault("non-finite gradient reached a parameter block")


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

class GradientReport:
    """Comparison of analytic and central-difference gradients per block."""

    def __init__(self):
        self.blocks = {}

    def add_block(self, name, entries, tolerance):
        # entries: list of (flat_index, analytic, numeric, rel_err)
        worst = sorted(entries, key=lambda e: -e[3])[:5]
        n_ok = sum(1 for e in entries if e[3] < tolerance)
        self.blocks[name] = {
            "checked": len(entries),
            "max_rel_error": max((e[3] for e in entries), default=0.0),
            "fraction_within_tol": n_ok / len(entries) if entries else 1.0,
            "tolerance": tolerance,
            "worst": [
                {"index": int(i), "analytic": a, "numeric": n, "rel_error": r}
                for i, a, n, r in worst
            ],
        }

    def passed(self, min_fraction=0.95):
        return all(
            b["fraction_within_tol"] >= min_fraction for b in self.blocks.values()
        )

    def to_dict(self):
        return {"blocks": self.blocks, "passed": self.passed()}

    def summary_lines(self):
        lines = []
        for name, b in self.blocks.items():
            lines.append(
                f"{name:>24s}  checked={b['checked']:4d}  "
                f"within_tol={100 * b['fraction_within_tol']:6.2f}%  "
                f"max_rel={b['max_rel_error']:.3e}"
            )
        return lines


def finite_difference_check(
    fn,
    params,
    step=1e-3,
    n_samples=40,
    tolerance=1e-2,
    rng=None,
    screen=None,
):
    """Compare analytic gradients of fn(params) against central differences.

    `params` is a dict of name -> leaf DiffBuffer (requires_grad=True).
    `fn` must be deterministic and return a scalar DiffBuffer. A random
    subset of coordinates per block is probed; relative errors use
    denominators floored at 1e-6. `screen(name, flat_index, step)` may
    reject coordinates whose discrete structure is unstable under +/-step
    (they are skipped and resampled).
    """
    if step <= 0:
        raise ValidationError("step must be positive")
    rng = rng or np.random.default_rng(0)

    for p in params.values():
        p.zero_grad()
    loss = fn()
    backward(loss)
    analytic = {k: np.array(p.grad, copy=True) for k, p in params.items()}

    report = GradientReport()
    for name, p in params.items():
        flat = p.values.reshape(-1)
        want = n_samples[name] if isinstance(n_samples, dict) else n_samples
        n = min(want, flat.size)
        candidates = rng.permutation(flat.size)
        entries = []
        for idx in candidates:
            if len(entries) >= n:
                break
            if screen is not None and not screen(name, int(idx), step):
                continue
            orig = flat[idx]
            flat[idx] = orig + step
            f_plus = fn().item()
            flat[idx] = orig - step
            f_minus = fn().item()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = analytic[name].reshape(-1)[idx]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
            entries.append((idx, float(a), float(numeric), float(rel)))
        report.add_block(name, entries, tolerance)
    return report
