"""Shared oracles and gradient-check scaffolding for the test suite."""

from __future__ import annotations

import numpy as np

from prefixla.tensor import Tape, finite_diff_grad


def matmul_triple_loop(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Naive three-loop matrix product; the oracle for matmul."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def cumsum_sequential(x: np.ndarray) -> np.ndarray:
    """Row-by-row accumulator; the oracle for cumsum_rows."""
    out = np.zeros_like(x)
    acc = np.zeros(x.shape[-1])
    for i in range(x.shape[0]):
        acc = acc + x[i]
        out[i] = acc
    return out


def rel_err(got: np.ndarray, want: np.ndarray, floor: float = 1e-8) -> float:
    got, want = np.asarray(got), np.asarray(want)
    return float((np.abs(got - want) / (np.abs(want) + floor)).max())


def grad_scale_err(got: np.ndarray, want: np.ndarray) -> float:
    """Worst absolute deviation normalized by the gradient tensor's scale.

    Per-coordinate relative error against central differences is dominated by
    O(h^2) truncation noise wherever a single coordinate's gradient is near
    zero; normalizing by the tensor's max |gradient| keeps the check sharp
    for real errors (which show up orders of magnitude above 1e-5).
    """
    got, want = np.asarray(got), np.asarray(want)
    scale = max(float(np.abs(want).max()), 1e-6)
    return float(np.abs(got - want).max() / scale)


def grad_check(build, params, rel_tol: float = 1e-5, h: float = 1e-4) -> float:
    """Compare Tape.backward against central finite differences.

    `build(tape, nodes)` assembles a scalar loss from parameter nodes.
    Returns the worst relative error across all parameter coordinates.
    """
    tape = Tape()
    nodes = [tape.param(p) for p in params]
    loss = build(tape, nodes)
    grads = tape.gradients(loss, nodes)

    def f(arrays):
        t = Tape()
        ns = [t.param(a) for a in arrays]
        return build(t, ns).data.item()

    fd = finite_diff_grad(f, params, h)
    worst = 0.0
    for g, g_fd in zip(grads, fd):
        worst = max(worst, rel_err(g, g_fd))
    assert worst <= rel_tol, f"gradient mismatch: rel err {worst:.3e}"
    return worst


def scalarize(tape: Tape, node, seed: int = 0):
    """Reduce any node to a scalar via a fixed random weighting."""
    rng = np.random.default_rng(seed)
    w = tape.const(rng.standard_normal(node.data.shape))
    return tape.sum_all(tape.mul(node, w))


PRIMITIVE_GRAD_CASES = {}


def primitive_case(name):
    def register(fn):
        PRIMITIVE_GRAD_CASES[name] = fn
        return fn
    return register


@primitive_case("add_broadcast")
def _case_add(rng):
    x = rng.standard_normal((2, 5, 3))
    b = rng.standard_normal(3)

    def build(tape, nodes):
        return scalarize(tape, tape.add(nodes[0], nodes[1]))

    return build, [x, b]


@primitive_case("mul_broadcast")
def _case_mul(rng):
    x = rng.standard_normal((2, 4, 3))
    y = rng.standard_normal((2, 4, 3))

    def build(tape, nodes):
        return scalarize(tape, tape.mul(nodes[0], nodes[1]))

    return build, [x, y]


@primitive_case("div")
def _case_div(rng):
    x = rng.standard_normal((4, 3))
    y = rng.standard_normal((4, 1)) + 3.0

    def build(tape, nodes):
        return scalarize(tape, tape.div(nodes[0], nodes[1]))

    return build, [x, y]


@primitive_case("matmul_2d")
def _case_matmul2(rng):
    a = rng.standard_normal((4, 3))
    b = rng.standard_normal((3, 5))

    def build(tape, nodes):
        return scalarize(tape, tape.matmul(nodes[0], nodes[1]))

    return build, [a, b]


@primitive_case("matmul_batched")
def _case_matmul3(rng):
    a = rng.standard_normal((2, 4, 3))
    b = rng.standard_normal((3, 5))
    c = rng.standard_normal((2, 5, 2))

    def build(tape, nodes):
        h = tape.matmul(nodes[0], nodes[1])
        return scalarize(tape, tape.matmul(h, nodes[2]))

    return build, [a, b, c]


@primitive_case("transpose_matmul")
def _case_transpose(rng):
    a = rng.standard_normal((2, 4, 3))
    b = rng.standard_normal((2, 5, 3))

    def build(tape, nodes):
        return scalarize(tape, tape.matmul(nodes[0], tape.transpose_last2(nodes[1])))

    return build, [a, b]


@primitive_case("cumsum_rows")
def _case_cumsum(rng):
    x = rng.standard_normal((2, 6, 3))

    def build(tape, nodes):
        return scalarize(tape, tape.cumsum_rows(nodes[0]))

    return build, [x]


@primitive_case("sum_rows")
def _case_sum_rows(rng):
    x = rng.standard_normal((6, 3))

    def build(tape, nodes):
        return scalarize(tape, tape.sum_rows_keepdim(nodes[0]))

    return build, [x]


@primitive_case("sum_last")
def _case_sum_last(rng):
    x = rng.standard_normal((2, 5, 3))

    def build(tape, nodes):
        return scalarize(tape, tape.sum_last(nodes[0]))

    return build, [x]


@primitive_case("sum_all")
def _case_sum_all(rng):
    x = rng.standard_normal((2, 5, 3))

    def build(tape, nodes):
        return tape.sum_all(tape.mul(nodes[0], nodes[0]))

    return build, [x]


@primitive_case("slice_rows")
def _case_slice_rows(rng):
    x = rng.standard_normal((2, 6, 3))

    def build(tape, nodes):
        return scalarize(tape, tape.slice_rows(nodes[0], 2, 5))

    return build, [x]


@primitive_case("conv1d_causal")
def _case_conv(rng):
    x = rng.standard_normal((2, 7, 3))
    filt = rng.standard_normal((3, 3))

    def build(tape, nodes):
        return scalarize(tape, tape.conv1d(nodes[0], nodes[1]))

    return build, [x, filt]


@primitive_case("conv1d_circular")
def _case_conv_circ(rng):
    x = rng.standard_normal((7, 3))
    filt = rng.standard_normal((3, 3))

    def build(tape, nodes):
        return scalarize(tape, tape.conv1d(nodes[0], nodes[1], circular=True))

    return build, [x, filt]


@primitive_case("gelu")
def _case_gelu(rng):
    x = rng.standard_normal((3, 4))

    def build(tape, nodes):
        return scalarize(tape, tape.gelu(nodes[0]))

    return build, [x]


@primitive_case("silu")
def _case_silu(rng):
    x = rng.standard_normal((3, 4))

    def build(tape, nodes):
        return scalarize(tape, tape.silu(nodes[0]))

    return build, [x]


@primitive_case("relu")
def _case_relu(rng):
    x = rng.standard_normal((3, 4)) + 0.5  # keep coordinates off the kink

    def build(tape, nodes):
        return scalarize(tape, tape.relu(nodes[0]))

    return build, [x]


@primitive_case("taylor2")
def _case_taylor2(rng):
    x = rng.standard_normal((2, 4, 3))

    def build(tape, nodes):
        return scalarize(tape, tape.taylor2(nodes[0]))

    return build, [x]


@primitive_case("embedding")
def _case_embedding(rng):
    table = rng.standard_normal((6, 3))
    ids = rng.integers(0, 6, size=(2, 5))

    def build(tape, nodes):
        return scalarize(tape, tape.embedding(nodes[0], ids))

    return build, [table]


@primitive_case("concat_last")
def _case_concat(rng):
    a = rng.standard_normal((2, 3, 2))
    b = rng.standard_normal((2, 3, 4))

    def build(tape, nodes):
        return scalarize(tape, tape.concat_last([nodes[0], nodes[1]]))

    return build, [a, b]


@primitive_case("attention_norm_causal")
def _case_attention_causal(rng):
    q = rng.standard_normal((2, 5, 3))
    k = rng.standard_normal((2, 5, 3))
    v = rng.standard_normal((2, 5, 2))

    def build(tape, nodes):
        att = tape.attention_norm(tape.taylor2(nodes[0]), tape.taylor2(nodes[1]),
                                  nodes[2], causal=True)
        return scalarize(tape, att)

    return build, [q, k, v]


@primitive_case("attention_norm_full")
def _case_attention_full(rng):
    q = rng.standard_normal((5, 3))
    k = rng.standard_normal((5, 3))
    v = rng.standard_normal((5, 2))

    def build(tape, nodes):
        att = tape.attention_norm(tape.taylor2(nodes[0]), tape.taylor2(nodes[1]),
                                  nodes[2], causal=False)
        return scalarize(tape, att)

    return build, [q, k, v]


@primitive_case("softmax_cross_entropy")
def _case_xent(rng):
    logits = rng.standard_normal((2, 4, 5))
    labels = rng.integers(0, 5, size=(2, 4))
    labels[0, 0] = -1  # exercise the ignore marker

    def build(tape, nodes):
        return tape.softmax_cross_entropy(nodes[0], labels)

    return build, [logits]
