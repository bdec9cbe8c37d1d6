"""Dense arrays with a minimal reverse-mode tape.

Tensors wrap numpy arrays of rank <= 3 and live on a single-owner Tape that
records every primitive in execution order (so the record is topologically
sorted by construction).  The primitive set is fixed: matmul, elementwise
add/mul/div, row cumsum, depthwise conv1d, GeLU/SiLU/ReLU, an embedding
gather, the second-order Taylor featurization, reductions, and a fused
softmax cross-entropy.  Everything here is checkable against central finite
differences; see ``finite_diff_grad``.

Default precision is 64-bit; pass ``dtype=np.float32`` to the Tape for
training-speed work.  In strict mode every op output is checked for
non-finite values and a FloatingPointError is raised on NaN/Inf.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf, expit

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

IGNORE_LABEL = -1


class Tensor:
    """A value node on a Tape: numpy data plus a gradient buffer."""

    __slots__ = ("tape", "data", "grad", "requires_grad", "_op")

    def __init__(self, tape: "Tape", data: np.ndarray, requires_grad: bool, op: str):
        if data.ndim > 3:
            raise ValueError(f"rank {data.ndim} > 3 not supported")
        self.tape = tape
        self.data = data
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._op = op

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def accumulate_owned(self, g: np.ndarray) -> None:
        """Adopt a freshly-allocated gradient without copying.

        Only for arrays the caller just produced and will not reuse; views
        into shared buffers must go through accumulate().
        """
        if self.grad is None and g.dtype == self.data.dtype:
            self.grad = g
        else:
            self.accumulate(g)

    def __add__(self, other):
        return self.tape.add(self, other)

    def __radd__(self, other):
        return self.tape.add(self, other)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    def __rmul__(self, other):
        return self.tape.mul(self, other)

    def __truediv__(self, other):
        return self.tape.div(self, other)

    def __sub__(self, other):
        return self.tape.add(self, self.tape.mul(other, -1.0))

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.data.shape})"


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


class Tape:
    """Ordered record of primitive ops with per-node gradient buffers.

    Single-owner and single-threaded: one tape per forward pass (or per
    training step).  Ops execute eagerly; backward() replays the record in
    reverse.
    """

    def __init__(self, dtype=np.float64, strict: bool = True):
        self.dtype = dtype
        self.strict = strict
        self._ops: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    # --- node construction ---

    def _wrap(self, value) -> Tensor:
        if isinstance(value, Tensor):
            if value.tape is not self:
                raise ValueError("tensor belongs to a different tape")
            return value
        return self.const(value)

    def _make(self, data: np.ndarray, requires_grad: bool, op: str) -> Tensor:
        data = np.asarray(data, dtype=self.dtype)
        if data.ndim and not data.flags["C_CONTIGUOUS"]:
            data = np.ascontiguousarray(data)
        if self.strict and not np.all(np.isfinite(data)):
            raise FloatingPointError(f"non-finite values produced by {op}")
        return Tensor(self, data, requires_grad, op)

    def param(self, data) -> Tensor:
        """A leaf that receives gradients."""
        return self._make(np.asarray(data), True, "param")

    def const(self, data) -> Tensor:
        """A leaf excluded from differentiation."""
        return self._make(np.asarray(data), False, "const")

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        if any(t.requires_grad for t in inputs):
            out.requires_grad = True
            self._ops.append((out, inputs, backward))

    # --- primitives ---

    def add(self, a, b) -> Tensor:
        a, b = self._wrap(a), self._wrap(b)
        out = self._make(a.data + b.data, False, "add")

        def backward(g):
            if a.requires_grad:
                a.accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b.accumulate(_unbroadcast(g, b.data.shape))

        self._record(out, (a, b), backward)
        return out

    def mul(self, a, b) -> Tensor:
        a, b = self._wrap(a), self._wrap(b)
        out = self._make(a.data * b.data, False, "mul")

        def backward(g):
            if a.requires_grad:
                a.accumulate_owned(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate_owned(_unbroadcast(g * a.data, b.data.shape))

        self._record(out, (a, b), backward)
        return out

    def div(self, a, b) -> Tensor:
        a, b = self._wrap(a), self._wrap(b)
        out = self._make(a.data / b.data, False, "div")

        def backward(g):
            if a.requires_grad:
                a.accumulate_owned(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate_owned(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        self._record(out, (a, b), backward)
        return out

    def matmul(self, a, b) -> Tensor:
        a, b = self._wrap(a), self._wrap(b)
        if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
            raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
        if a.data.ndim == 2 and b.data.ndim == 3:
            raise ValueError("2D @ 3D matmul not supported")
        out = self._make(a.data @ b.data, False, "matmul")

        def backward(g):
            if a.requires_grad:
                a.accumulate_owned(g @ np.swapaxes(b.data, -1, -2))
            if b.requires_grad:
                if a.data.ndim == 3 and b.data.ndim == 2:
                    # batch-summed a^T g, folded into one BLAS call
                    k = a.data.shape[-1]
                    n = g.shape[-1]
                    b.accumulate_owned(a.data.reshape(-1, k).T @ g.reshape(-1, n))
                else:
                    b.accumulate_owned(np.swapaxes(a.data, -1, -2) @ g)

        self._record(out, (a, b), backward)
        return out

    def transpose_last2(self, a) -> Tensor:
        a = self._wrap(a)
        out = self._make(np.swapaxes(a.data, -1, -2), False, "transpose")

        def backward(g):
            if a.requires_grad:
                a.accumulate(np.swapaxes(g, -1, -2))

        self._record(out, (a,), backward)
        return out

    def cumsum_rows(self, a) -> Tensor:
        """out[..., i, :] = sum_{j <= i} a[..., j, :]."""
        a = self._wrap(a)
        if a.data.ndim < 2:
            raise ValueError("cumsum_rows needs rank >= 2")
        out = self._make(np.cumsum(a.data, axis=-2), False, "cumsum")

        def backward(g):
            if a.requires_grad:
                rev = np.flip(np.cumsum(np.flip(g, axis=-2), axis=-2), axis=-2)
                a.accumulate_owned(np.ascontiguousarray(rev))

        self._record(out, (a,), backward)
        return out

    def sum_rows_keepdim(self, a) -> Tensor:
        """out[..., 0, :] = sum_j a[..., j, :] (the non-causal counterpart of cumsum)."""
        a = self._wrap(a)
        out = self._make(a.data.sum(axis=-2, keepdims=True), False, "sum_rows")

        def backward(g):
            if a.requires_grad:
                a.accumulate_owned(np.broadcast_to(g, a.data.shape).copy())

        self._record(out, (a,), backward)
        return out

    def sum_last(self, a) -> Tensor:
        """Sum over the last axis, keeping it as extent 1."""
        a = self._wrap(a)
        out = self._make(a.data.sum(axis=-1, keepdims=True), False, "sum_last")

        def backward(g):
            if a.requires_grad:
                a.accumulate_owned(np.broadcast_to(g, a.data.shape).copy())

        self._record(out, (a,), backward)
        return out

    def slice_rows(self, a, lo: int, hi: int) -> Tensor:
        """View rows [lo, hi) along the second-to-last axis."""
        a = self._wrap(a)
        if a.data.ndim < 2:
            raise ValueError("slice_rows needs rank >= 2")
        n = a.data.shape[-2]
        lo, hi = max(lo, 0), min(hi, n)
        out = self._make(a.data[..., lo:hi, :], False, "slice_rows")

        def backward(g):
            if a.requires_grad:
                ga = np.zeros_like(a.data)
                ga[..., lo:hi, :] = g
                a.accumulate_owned(ga)

        self._record(out, (a,), backward)
        return out

    def sum_all(self, a) -> Tensor:
        """Reduce every element to a scalar."""
        a = self._wrap(a)
        out = self._make(np.asarray(a.data.sum()), False, "sum_all")

        def backward(g):
            if a.requires_grad:
                a.accumulate_owned(np.full_like(a.data, g.item()))

        self._record(out, (a,), backward)
        return out

    def conv1d(self, x, filt, circular: bool = False) -> Tensor:
        """Depthwise width-w convolution along the row axis.

        Causal by default (zero left pad, never reads future rows); circular
        mode wraps over the full length.  `filt` has shape (w, d) with
        filt[0] applied to the current row.
        """
        x, filt = self._wrap(x), self._wrap(filt)
        w, d = filt.data.shape
        if x.data.shape[-1] != d:
            raise ValueError("channel mismatch between input and filters")
        n = x.data.shape[-2]
        out_data = np.zeros_like(x.data)
        for tau in range(w):
            if circular:
                shifted = np.roll(x.data, tau, axis=-2)
            else:
                shifted = np.zeros_like(x.data)
                if tau < n:
                    shifted[..., tau:, :] = x.data[..., : n - tau, :]
            out_data += shifted * filt.data[tau]
        out = self._make(out_data, False, "conv1d")

        def backward(g):
            if x.requires_grad:
                gx = np.zeros_like(x.data)
                for tau in range(w):
                    if circular:
                        gx += np.roll(g, -tau, axis=-2) * filt.data[tau]
                    else:
                        if tau < n:
                            gx[..., : n - tau, :] += g[..., tau:, :] * filt.data[tau]
                x.accumulate_owned(gx)
            if filt.requires_grad:
                gf = np.zeros_like(filt.data)
                for tau in range(w):
                    if circular:
                        shifted = np.roll(x.data, tau, axis=-2)
                        gf[tau] = (g * shifted).sum(axis=tuple(range(g.ndim - 1)))
                    else:
                        if tau < n:
                            prod = g[..., tau:, :] * x.data[..., : n - tau, :]
                            gf[tau] = prod.sum(axis=tuple(range(g.ndim - 1)))
                filt.accumulate_owned(gf)

        self._record(out, (x, filt), backward)
        return out

    def gelu(self, a) -> Tensor:
        a = self._wrap(a)
        cdf = 0.5 * (1.0 + erf(a.data * _INV_SQRT2))
        out = self._make(a.data * cdf, False, "gelu")

        def backward(g):
            if a.requires_grad:
                pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
                a.accumulate_owned(g * (cdf + a.data * pdf))

        self._record(out, (a,), backward)
        return out

    def silu(self, a) -> Tensor:
        a = self._wrap(a)
        sig = expit(a.data)
        out = self._make(a.data * sig, False, "silu")

        def backward(g):
            if a.requires_grad:
                a.accumulate_owned(g * sig * (1.0 + a.data * (1.0 - sig)))

        self._record(out, (a,), backward)
        return out

    def relu(self, a) -> Tensor:
        a = self._wrap(a)
        out = self._make(np.maximum(a.data, 0.0), False, "relu")

        def backward(g):
            if a.requires_grad:
                a.accumulate_owned(g * (a.data > 0))

        self._record(out, (a,), backward)
        return out

    def embedding(self, table, ids: np.ndarray) -> Tensor:
        """Gather rows of `table` by integer ids (ids are not differentiated)."""
        table = self._wrap(table)
        ids = np.asarray(ids)
        if ids.min() < 0 or ids.max() >= table.data.shape[0]:
            raise ValueError("id out of range")
        out = self._make(table.data[ids], False, "embedding")

        def backward(g):
            if table.requires_grad:
                gt = np.zeros_like(table.data)
                np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
                table.accumulate_owned(gt)

        self._record(out, (table,), backward)
        return out

    def taylor2(self, a) -> Tensor:
        """Second-order Taylor featurization of the last axis (see featmaps)."""
        a = self._wrap(a)
        x = a.data
        d = x.shape[-1]
        ones = np.ones(x.shape[:-1] + (1,), dtype=x.dtype)
        outer = (x[..., :, None] * x[..., None, :]) * _INV_SQRT2
        out = self._make(
            np.concatenate([ones, x, outer.reshape(x.shape[:-1] + (-1,))], axis=-1),
            False,
            "taylor2",
        )

        def backward(g):
            if a.requires_grad:
                g_lin = g[..., 1 : 1 + d]
                g_quad = g[..., 1 + d :].reshape(x.shape[:-1] + (d, d))
                ga = g_lin + _INV_SQRT2 * (
                    np.einsum("...ab,...b->...a", g_quad, x)
                    + np.einsum("...ab,...a->...b", g_quad, x)
                )
                a.accumulate_owned(ga)

        self._record(out, (a,), backward)
        return out

    def concat_last(self, parts: Sequence) -> Tensor:
        parts = [self._wrap(p) for p in parts]
        out = self._make(np.concatenate([p.data for p in parts], axis=-1), False, "concat")
        widths = [p.data.shape[-1] for p in parts]

        def backward(g):
            off = 0
            for p, w in zip(parts, widths):
                if p.requires_grad:
                    p.accumulate(g[..., off : off + w])
                off += w

        self._record(out, tuple(parts), backward)
        return out

    def attention_norm(self, phi_q, phi_k, v, causal: bool = True) -> Tensor:
        """Normalized feature attention: y = (A v) / (A 1) for A = phi_q phi_k^T.

        Fused masked-matmul / value-mix / row-normalize; A is optionally
        lower-triangular (causal).  One N x N buffer per pass instead of the
        four a primitive-by-primitive composition would allocate.
        """
        phi_q, phi_k, v = self._wrap(phi_q), self._wrap(phi_k), self._wrap(v)
        att = phi_q.data @ np.swapaxes(phi_k.data, -1, -2)
        if causal:
            n = att.shape[-1]
            att *= np.tril(np.ones((n, n), dtype=att.dtype))
        den = att.sum(axis=-1, keepdims=True)
        if np.any(den == 0.0):
            raise ZeroDivisionError("zero attention normalizer")
        y = (att @ v.data) / den
        out = self._make(y, False, "attention_norm")

        def backward(g):
            g_over_den = g / den
            # dL/dA = (g/den) v^T - ((g . y)/den) 1^T, masked like A
            d_att = g_over_den @ np.swapaxes(v.data, -1, -2)
            d_att -= (g_over_den * y).sum(axis=-1, keepdims=True)
            if causal:
                n = d_att.shape[-1]
                d_att *= np.tril(np.ones((n, n), dtype=d_att.dtype))
            if phi_q.requires_grad:
                phi_q.accumulate_owned(d_att @ phi_k.data)
            if phi_k.requires_grad:
                phi_k.accumulate_owned(np.swapaxes(d_att, -1, -2) @ phi_q.data)
            if v.requires_grad:
                v.accumulate_owned(np.swapaxes(att, -1, -2) @ g_over_den)

        self._record(out, (phi_q, phi_k, v), backward)
        return out

    def softmax_cross_entropy(self, logits, labels: np.ndarray,
                              ignore_label: int = IGNORE_LABEL) -> Tensor:
        """Mean cross-entropy over positions whose label != ignore_label.

        `logits` has class scores on the last axis; `labels` matches the
        leading axes.  Returns a scalar.
        """
        logits = self._wrap(logits)
        labels = np.asarray(labels)
        if labels.shape != logits.data.shape[:-1]:
            raise ValueError("label shape must match logits leading axes")
        valid = labels != ignore_label
        count = int(valid.sum())
        if count == 0:
            raise ValueError("no positions carry a label")
        z = logits.data
        zmax = z.max(axis=-1, keepdims=True)
        expz = np.exp(z - zmax)
        sumexp = expz.sum(axis=-1, keepdims=True)
        logprob = (z - zmax) - np.log(sumexp)
        safe = np.where(valid, labels, 0)
        picked = np.take_along_axis(logprob, safe[..., None], axis=-1)[..., 0]
        loss = -(picked * valid).sum() / count
        out = self._make(np.asarray(loss), False, "xent")

        def backward(g):
            if logits.requires_grad:
                probs = expz / sumexp
                onehot = np.zeros_like(probs)
                np.put_along_axis(onehot, safe[..., None], 1.0, axis=-1)
                gl = (probs - onehot) * valid[..., None] * (g.item() / count)
                logits.accumulate_owned(gl)

        self._record(out, (logits,), backward)
        return out

    # --- reverse pass ---

    def backward(self, loss: Tensor) -> None:
        """Populate .grad on every node reachable from `loss`.

        Traverses the op record in reverse; the record is topologically
        ordered by construction, so each op sees its output gradient complete.
        """
        if loss.tape is not self:
            raise ValueError("loss is not a node of this tape")
        if loss.data.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, _inputs, backward_fn in reversed(self._ops):
            if out.grad is not None:
                backward_fn(out.grad)

    def gradients(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        """Gradient of `loss` with respect to each parameter node."""
        for p in params:
            if p.tape is not self:
                raise ValueError("parameter is not a node of this tape")
        self.backward(loss)
        return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def finite_diff_grad(fn: Callable[[list[np.ndarray]], float],
                     params: Sequence[np.ndarray],
                     h: float = 1e-4) -> list[np.ndarray]:
    """Central finite differences of a scalar function, coordinate by coordinate.

    This is the verification oracle for Tape.backward: (f(p+h*e) - f(p-h*e))
    / (2h) for every coordinate of every parameter.  O(h^2) truncation error
    at 64-bit.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    params = [np.array(p, dtype=np.float64) for p in params]
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p)
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        for i in range(flat_p.size):
            orig = flat_p[i]
            flat_p[i] = orig + h
            f_plus = fn([q.copy() for q in params])
            flat_p[i] = orig - h
            f_minus = fn([q.copy() for q in params])
            flat_p[i] = orig
            flat_g[i] = (f_plus - f_minus) / (2.0 * h)
        grads.append(g)
    return grads
